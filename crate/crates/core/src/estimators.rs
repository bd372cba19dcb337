//! Per-level MLMC correction samplers.
//!
//! A [`LevelSampler`] owns the grids and scratch buffers for one
//! (method, payoff, level) and turns a `(seed, path_index)` pair into one
//! sample of the correction P_l^f − P_{l−1}^c for value, delta and vega at
//! once. Level 0 returns the fine contribution alone. Payoffs are discounted
//! by e^{-rT}, so the level sums estimate the option price and its Greeks.
//!
//! The smoothed methods (conditional expectation, splitting, Vibrato) stop
//! the path one step early. At the coarse level they condition on the first
//! fine increment of the last coarse step so the fine and coarse last-step
//! distributions stay tightly coupled while each keeps the law the
//! neighbouring fine level uses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greeks::{Grad, GreekTriple};
use crate::payoff::{self, CondExpInputs};
use crate::rng::{SampleKey, StreamTag};
use crate::sde::{self, CoupledPath, MarketParams, TangentState, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pathwise,
    CondExp,
    Split,
    Vibrato,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Call,
    Digital,
    Lookback,
    Barrier,
    BarrierSmooth,
}

/// Number of resampled final increments per path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    Fixed(usize),
    /// d = ceil(c · 2^{level/2}), i.e. proportional to h_l^{-1/2}.
    Adaptive {
        c: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    Power { gamma: f64 },
}

impl GridKind {
    pub fn grid(&self, level: u32, t: f64) -> Result<TimeGrid> {
        match *self {
            GridKind::Uniform => Ok(sde::uniform_grid(level, t)),
            GridKind::Power { gamma } => sde::power_grid(1usize << level, gamma, t),
        }
    }
}

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => [$($name:literal),+]),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($($name)|+ => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", stringify!($ty), " '{}'"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self { $($ty::$variant => [$($name),+][0],)+ };
                f.write_str(name)
            }
        }
    };
}

named_enum!(Method {
    Pathwise => ["pathwise", "pws"],
    CondExp => ["cond_exp", "condexp", "conditional"],
    Split => ["split", "splitting"],
    Vibrato => ["vibrato", "vmc"],
});

named_enum!(PayoffKind {
    Call => ["call", "european"],
    Digital => ["digital"],
    Lookback => ["lookback"],
    Barrier => ["barrier"],
    BarrierSmooth => ["barrier_smooth", "smooth_barrier"],
});

/// What to estimate and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub payoff: PayoffKind,
    pub split_rule: SplitRule,
    /// Smoothing width for `BarrierSmooth`.
    pub h_star: Option<f64>,
    pub grid: GridKind,
}

impl MethodSpec {
    /// Ten splittings, uniform grid, h* = 1/64 for the smoothed barrier.
    pub fn new(method: Method, payoff: PayoffKind) -> Self {
        MethodSpec {
            method,
            payoff,
            split_rule: SplitRule::Fixed(10),
            h_star: (payoff == PayoffKind::BarrierSmooth).then_some(1.0 / 64.0),
            grid: GridKind::Uniform,
        }
    }

    pub fn with_split(self, split_rule: SplitRule) -> Self {
        MethodSpec { split_rule, ..self }
    }

    pub fn with_grid(self, grid: GridKind) -> Self {
        MethodSpec { grid, ..self }
    }

    pub fn with_h_star(self, h_star: f64) -> Self {
        MethodSpec {
            h_star: Some(h_star),
            ..self
        }
    }

    /// Supported combinations: pathwise needs a Lipschitz payoff; the smoothed
    /// methods act on the last step of a European payoff.
    pub fn validate(&self, params: &MarketParams) -> Result<()> {
        use Method::*;
        use PayoffKind::*;
        let ok = match self.method {
            Pathwise => !matches!(self.payoff, Digital),
            CondExp | Vibrato => matches!(self.payoff, Call | Digital),
            Split => matches!(self.payoff, Call),
        };
        if !ok {
            let why = match (self.method, self.payoff) {
                (Pathwise, Digital) => "the digital payoff is discontinuous, pathwise sensitivities do not apply",
                (Split, Digital) => "splitting differentiates the payoff pathwise, which the digital does not allow",
                (_, Lookback) => "the lookback payoff is already smooth; use pathwise",
                _ => "the barrier survival product is only implemented for pathwise sensitivities",
            };
            return Err(Error::Unsupported(format!("{} x {}: {why}", self.method, self.payoff)));
        }
        if matches!(self.payoff, Barrier | BarrierSmooth) {
            params.barrier_level()?;
        }
        if self.payoff == BarrierSmooth && !self.h_star.is_some_and(|h| h > 0.0) {
            return Err(Error::Config("barrier_smooth needs a positive h_star".into()));
        }
        match self.split_rule {
            SplitRule::Fixed(0) => return Err(Error::Config("split count d must be >= 1".into())),
            SplitRule::Adaptive { c } if !(c > 0.0) => {
                return Err(Error::Config("adaptive split constant must be positive".into()))
            }
            _ => {}
        }
        if let GridKind::Power { gamma } = self.grid {
            if !(gamma >= 1.0) {
                return Err(Error::InvalidGrid(format!("power grid exponent {gamma} < 1")));
            }
        }
        Ok(())
    }

    fn uses_splitting(&self) -> bool {
        matches!(self.method, Method::Split | Method::Vibrato)
    }
}

pub fn split_count(level: u32, rule: SplitRule) -> usize {
    match rule {
        SplitRule::Fixed(d) => d,
        SplitRule::Adaptive { c } => ((c * 2f64.powf(level as f64 / 2.0)).ceil() as usize).max(1),
    }
}

/// One sample of the level-l correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSample {
    /// fine − coarse, or the fine contribution alone at level 0.
    pub y: GreekTriple,
    pub fine: GreekTriple,
    pub coarse: Option<GreekTriple>,
    /// Fine-equivalent timesteps consumed.
    pub cost: f64,
    /// Vibrato sample with a non-positive conditional std dev; contributes 0.
    pub rejected: bool,
    /// Non-finite output replaced by 0.
    pub non_finite: bool,
    /// Some simulated asset value went to zero or below.
    pub nonpositive_state: bool,
}

pub struct LevelSampler {
    spec: MethodSpec,
    params: MarketParams,
    level: u32,
    fine_grid: TimeGrid,
    coarse_grid: Option<TimeGrid>,
    d: usize,
    path: CoupledPath,
    uniforms: Vec<f64>,
    draws: Vec<f64>,
    discount: f64,
}

impl LevelSampler {
    pub fn new(spec: MethodSpec, params: MarketParams, level: u32) -> Result<Self> {
        params.validate()?;
        spec.validate(&params)?;
        if level > 30 {
            return Err(Error::InvalidInput(format!("level {level} is out of range")));
        }
        let fine_grid = spec.grid.grid(level, params.t)?;
        let coarse_grid = if level > 0 {
            let c = spec.grid.grid(level - 1, params.t)?;
            if !fine_grid.refines(&c) {
                return Err(Error::InvalidGrid("grid family does not refine 2:1".into()));
            }
            Some(c)
        } else {
            None
        };
        Ok(LevelSampler {
            spec,
            params,
            level,
            fine_grid,
            coarse_grid,
            d: split_count(level, spec.split_rule),
            path: CoupledPath::default(),
            uniforms: Vec::new(),
            draws: Vec::new(),
            discount: params.discount(),
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn split_count(&self) -> usize {
        self.d
    }

    pub fn fine_grid(&self) -> &TimeGrid {
        &self.fine_grid
    }

    /// Fine steps + coarse steps, with the last step of each replaced by
    /// `d` resampled final steps for splitting and Vibrato.
    pub fn cost_per_sample(&self) -> f64 {
        let n_f = self.fine_grid.steps() as f64;
        let n_c = self.coarse_grid.as_ref().map_or(0.0, |c| c.steps() as f64);
        let sides = if self.coarse_grid.is_some() { 2.0 } else { 1.0 };
        if self.spec.uses_splitting() {
            (n_f - 1.0) + (n_c - 1.0).max(0.0) + self.d as f64 * sides
        } else {
            n_f + n_c
        }
    }

    /// The path from the last call to a `sample*` method.
    pub fn last_path(&self) -> &CoupledPath {
        &self.path
    }

    pub fn sample(&mut self, seed: u64, path_index: u64) -> LevelSample {
        let key = SampleKey::new(seed, self.level, path_index, StreamTag::Path);
        let (fine, coarse, rejected) = match self.spec.method {
            Method::Pathwise => self.pathwise(key),
            Method::CondExp => self.cond_exp(key),
            Method::Split => self.split(key),
            Method::Vibrato => {
                let payoff = self.spec.payoff;
                let k = self.params.k;
                self.vibrato(key, move |s| match payoff {
                    PayoffKind::Digital => payoff::digital_payoff(s, k),
                    _ => payoff::call_payoff(s, k).0,
                })
            }
        };
        self.finish(fine, coarse, rejected)
    }

    /// Vibrato sample with an arbitrary terminal payoff in place of the configured one.
    pub fn sample_vibrato_with(&mut self, seed: u64, path_index: u64, payoff: impl Fn(f64) -> f64) -> LevelSample {
        let key = SampleKey::new(seed, self.level, path_index, StreamTag::Path);
        let (fine, coarse, rejected) = self.vibrato(key, payoff);
        self.finish(fine, coarse, rejected)
    }

    fn finish(&self, fine: GreekTriple, coarse: Option<GreekTriple>, rejected: bool) -> LevelSample {
        let fine = fine * self.discount;
        let coarse = coarse.map(|c| c * self.discount);
        let cost = self.cost_per_sample();
        let nonpositive_state = self.path.has_nonpositive_state();
        if rejected {
            return LevelSample {
                y: GreekTriple::ZERO,
                fine: GreekTriple::ZERO,
                coarse: coarse.map(|_| GreekTriple::ZERO),
                cost,
                rejected,
                non_finite: false,
                nonpositive_state,
            };
        }
        let y = match coarse {
            Some(c) => fine - c,
            None => fine,
        };
        if !y.is_finite() {
            return LevelSample {
                y: GreekTriple::ZERO,
                fine: GreekTriple::ZERO,
                coarse: coarse.map(|_| GreekTriple::ZERO),
                cost,
                rejected: false,
                non_finite: true,
                nonpositive_state,
            };
        }
        LevelSample {
            y,
            fine,
            coarse,
            cost,
            rejected,
            non_finite: false,
            nonpositive_state,
        }
    }

    fn simulate(&mut self, key: SampleKey, stop_at_penultimate: bool) {
        sde::simulate_coupled_into(
            &mut self.path,
            &self.params,
            &self.fine_grid,
            self.coarse_grid.as_ref(),
            key,
            stop_at_penultimate,
        );
    }

    fn pathwise(&mut self, key: SampleKey) -> (GreekTriple, Option<GreekTriple>, bool) {
        self.simulate(key, false);
        let p = &self.params;
        let path = &self.path;
        let has_coarse = path.has_coarse();
        let (fine, coarse) = match self.spec.payoff {
            PayoffKind::Call => {
                let call = |st: TangentState| {
                    let (v, w) = payoff::call_payoff(st.s, p.k);
                    GreekTriple::from_parts(v, st.grad() * w)
                };
                (call(path.fine_last()), path.coarse_last().map(call))
            }
            PayoffKind::Lookback => {
                let mut s = key.with_tag(StreamTag::Bridge).stream();
                self.uniforms.clear();
                self.uniforms.extend((0..path.fine_widths.len()).map(|_| s.uniform()));
                let fine = payoff::lookback_fine(path, p, &self.uniforms);
                let coarse = has_coarse.then(|| payoff::lookback_coarse(path, p, &self.uniforms));
                (fine, coarse)
            }
            PayoffKind::Barrier => {
                let fine = payoff::barrier_survival_fine(path, p).expect("validated barrier");
                let coarse = has_coarse.then(|| payoff::barrier_survival_coarse(path, p).expect("validated barrier"));
                (fine, coarse)
            }
            PayoffKind::BarrierSmooth => {
                let hs = self.spec.h_star.expect("validated h_star");
                let fine = payoff::barrier_smooth_fine(path, p, hs).expect("validated barrier");
                let coarse = has_coarse.then(|| payoff::barrier_smooth_coarse(path, p, hs).expect("validated barrier"));
                (fine, coarse)
            }
            PayoffKind::Digital => unreachable!("rejected by MethodSpec::validate"),
        };
        (fine, coarse, false)
    }

    /// (penultimate state, last width) for the fine side and, at level > 0,
    /// (penultimate coarse state, last coarse width, last fine width, ΔW_{N_f−1}).
    #[allow(clippy::type_complexity)]
    fn last_step_inputs(&self) -> (TangentState, f64, Option<(TangentState, f64, f64, f64)>) {
        let path = &self.path;
        let h_f = *path.fine_widths.last().unwrap();
        let coarse = path.coarse_last().map(|st| {
            (
                st,
                *path.coarse_widths.last().unwrap(),
                h_f,
                path.penultimate_fine_increment
                    .expect("stopped coarse path keeps ΔW_{N_f-1}"),
            )
        });
        (path.fine_last(), h_f, coarse)
    }

    fn cond_exp(&mut self, key: SampleKey) -> (GreekTriple, Option<GreekTriple>, bool) {
        self.simulate(key, true);
        let p = self.params;
        let smooth = |inp: CondExpInputs| {
            let sm = match self.spec.payoff {
                PayoffKind::Digital => payoff::digital_condexp(inp.alpha, inp.beta, p.k),
                _ => payoff::call_condexp(inp.alpha, inp.beta, p.k),
            };
            inp.chain(sm)
        };
        let (prev, h_f, coarse) = self.last_step_inputs();
        let fine = smooth(CondExpInputs::fine(prev, h_f, &p));
        let coarse = coarse.map(|(st, h_c, h2, dw)| smooth(CondExpInputs::coarse(st, h_c, h2, dw, &p)));
        (fine, coarse, false)
    }

    fn draw_final_normals(&mut self, key: SampleKey) {
        let mut s = key.with_tag(StreamTag::Split).stream();
        self.draws.clear();
        self.draws.extend((0..self.d).map(|_| s.normal()));
    }

    fn split(&mut self, key: SampleKey) -> (GreekTriple, Option<GreekTriple>, bool) {
        self.simulate(key, true);
        self.draw_final_normals(key);
        let p = self.params;
        let (prev, h_f, coarse) = self.last_step_inputs();
        let fine = split_side(CondExpInputs::fine(prev, h_f, &p), &self.draws, p.k);
        let coarse =
            coarse.map(|(st, h_c, h2, dw)| split_side(CondExpInputs::coarse(st, h_c, h2, dw, &p), &self.draws, p.k));
        (fine, coarse, false)
    }

    fn vibrato(&mut self, key: SampleKey, payoff: impl Fn(f64) -> f64) -> (GreekTriple, Option<GreekTriple>, bool) {
        self.simulate(key, true);
        self.draw_final_normals(key);
        let p = self.params;
        let (prev, h_f, coarse) = self.last_step_inputs();
        let fine = vibrato_side(CondExpInputs::fine(prev, h_f, &p), &self.draws, &payoff);
        let coarse = coarse
            .map(|(st, h_c, h2, dw)| vibrato_side(CondExpInputs::coarse(st, h_c, h2, dw, &p), &self.draws, &payoff));
        match (fine, coarse) {
            (Some(f), None) => (f, None, false),
            (Some(f), Some(Some(c))) => (f, Some(c), false),
            _ => (GreekTriple::ZERO, coarse.map(|_| GreekTriple::ZERO), true),
        }
    }
}

/// Average of the pathwise call payoff over final values S = alpha + beta z_i,
/// the same normal last step whose expectation `cond_exp` evaluates exactly.
fn split_side(inp: CondExpInputs, draws: &[f64], k: f64) -> GreekTriple {
    let mut acc = GreekTriple::ZERO;
    for &z in draws {
        let s = inp.alpha + inp.beta * z;
        if s > k {
            acc += GreekTriple::from_parts(s - k, inp.dalpha + inp.dbeta * z);
        }
    }
    acc * (1.0 / draws.len() as f64)
}

/// Pathwise tangents of the conditional mean/std dev combined with the
/// likelihood-ratio score of the normal last step. Each draw z_i is used as
/// an antithetic pair S = mu ± sigma_W z_i and the sigma_W score is taken
/// relative to P(mu); both leave the expectations unchanged and keep the
/// score terms O(1) as sigma_W shrinks. `None` when sigma_W <= 0.
fn vibrato_side(inp: CondExpInputs, draws: &[f64], payoff: &impl Fn(f64) -> f64) -> Option<GreekTriple> {
    let (mu, sd) = (inp.alpha, inp.beta);
    if !(sd > 0.0) {
        return None;
    }
    let p_mid = payoff(mu);
    let mut value = 0.0;
    let mut score_mu = 0.0;
    let mut score_sd = 0.0;
    for &z in draws {
        let up = payoff(mu + sd * z);
        let down = payoff(mu - sd * z);
        value += 0.5 * (up + down);
        // (S − mu)/sd² = ±z/sd and −1/sd + (S − mu)²/sd³ = (z² − 1)/sd
        score_mu += 0.5 * (up - down) * z;
        score_sd += (0.5 * (up + down) - p_mid) * (z * z - 1.0);
    }
    let inv = 1.0 / (draws.len() as f64 * sd);
    let g: Grad = inp.dalpha * (score_mu * inv) + inp.dbeta * (score_sd * inv);
    Some(GreekTriple::from_parts(value / draws.len() as f64, g))
}

fn expect_method(spec: &MethodSpec, want: Method) -> Result<()> {
    if spec.method != want {
        return Err(Error::Unsupported(format!(
            "expected a {want} spec, got {}",
            spec.method
        )));
    }
    Ok(())
}

fn one_sample(
    spec: &MethodSpec,
    params: &MarketParams,
    level: u32,
    key: SampleKey,
    want: Method,
) -> Result<LevelSample> {
    expect_method(spec, want)?;
    let mut s = LevelSampler::new(*spec, *params, level)?;
    Ok(s.sample(key.seed, key.path_index))
}

pub fn sample_pathwise(spec: &MethodSpec, params: &MarketParams, level: u32, key: SampleKey) -> Result<LevelSample> {
    one_sample(spec, params, level, key, Method::Pathwise)
}

pub fn sample_condexp(spec: &MethodSpec, params: &MarketParams, level: u32, key: SampleKey) -> Result<LevelSample> {
    one_sample(spec, params, level, key, Method::CondExp)
}

pub fn sample_split(spec: &MethodSpec, params: &MarketParams, level: u32, key: SampleKey) -> Result<LevelSample> {
    one_sample(spec, params, level, key, Method::Split)
}

pub fn sample_vibrato(spec: &MethodSpec, params: &MarketParams, level: u32, key: SampleKey) -> Result<LevelSample> {
    one_sample(spec, params, level, key, Method::Vibrato)
}
