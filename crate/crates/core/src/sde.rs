//! Milstein discretisation of geometric Brownian motion with pathwise tangents,
//! uniform and power-law time grids, and coupled fine/coarse simulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greeks::Grad;
use crate::rng::SampleKey;

/// The full problem statement: GBM dynamics plus contract terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub s0: f64,
    pub k: f64,
    pub r: f64,
    pub sigma: f64,
    pub t: f64,
    /// Down-and-out barrier level, strictly below `s0` when present.
    #[serde(default)]
    pub barrier: Option<f64>,
}

impl MarketParams {
    pub fn new(s0: f64, k: f64, r: f64, sigma: f64, t: f64) -> Result<Self> {
        let p = MarketParams {
            s0,
            k,
            r,
            sigma,
            t,
            barrier: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// S0 = 100, K = 100, r = 0.05, sigma = 0.2, T = 1.
    pub fn reference() -> Self {
        MarketParams {
            s0: 100.0,
            k: 100.0,
            r: 0.05,
            sigma: 0.2,
            t: 1.0,
            barrier: None,
        }
    }

    pub fn with_barrier(self, b: f64) -> Result<Self> {
        let p = MarketParams {
            barrier: Some(b),
            ..self
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("s0", self.s0), ("k", self.k), ("sigma", self.sigma), ("t", self.t)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidMarket(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !self.r.is_finite() {
            return Err(Error::InvalidMarket("r must be finite".into()));
        }
        if let Some(b) = self.barrier {
            if !(b > 0.0 && b < self.s0) {
                return Err(Error::InvalidMarket(format!(
                    "barrier {b} must satisfy 0 < B < S0 = {}",
                    self.s0
                )));
            }
        }
        Ok(())
    }

    /// e^{-rT}; sampled payoffs are discounted by it.
    pub fn discount(&self) -> f64 {
        (-self.r * self.t).exp()
    }

    pub fn barrier_level(&self) -> Result<f64> {
        self.barrier
            .ok_or_else(|| Error::InvalidMarket("this payoff needs a barrier level".into()))
    }
}

/// Asset value with its derivatives with respect to S0 and sigma.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentState {
    pub s: f64,
    pub ds_ds0: f64,
    pub ds_dsigma: f64,
}

impl TangentState {
    pub fn initial(s0: f64) -> Self {
        TangentState {
            s: s0,
            ds_ds0: 1.0,
            ds_dsigma: 0.0,
        }
    }

    #[inline]
    pub fn grad(&self) -> Grad {
        Grad::new(self.ds_ds0, self.ds_dsigma)
    }
}

/// One Milstein step of dS = rS dt + sigma S dW, carrying the tangents along.
#[inline]
pub fn milstein_step(state: TangentState, dw: f64, h: f64, params: &MarketParams) -> TangentState {
    let sigma = params.sigma;
    let d = 1.0 + params.r * h + sigma * dw + 0.5 * sigma * sigma * (dw * dw - h);
    TangentState {
        s: state.s * d,
        ds_ds0: state.ds_ds0 * d,
        ds_dsigma: state.ds_dsigma * d + state.s * (dw + sigma * (dw * dw - h)),
    }
}

/// Step boundaries from 0 to T and the derived widths.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    boundaries: Vec<f64>,
    widths: Vec<f64>,
}

impl TimeGrid {
    pub fn from_boundaries(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != 0.0 {
            return Err(Error::InvalidGrid(
                "a grid needs at least one step starting at 0".into(),
            ));
        }
        if boundaries.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("boundaries must be strictly increasing".into()));
        }
        let widths = boundaries.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(TimeGrid { boundaries, widths })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn steps(&self) -> usize {
        self.widths.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    /// Every second boundary: the coarse grid this grid refines 2:1.
    pub fn coarsen(&self) -> Result<TimeGrid> {
        if !self.steps().is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("{} steps cannot be halved", self.steps())));
        }
        TimeGrid::from_boundaries(self.boundaries.iter().step_by(2).copied().collect())
    }

    /// True when every coarse boundary is a fine boundary and each coarse step
    /// holds exactly two fine steps.
    pub fn refines(&self, coarse: &TimeGrid) -> bool {
        self.steps() == 2 * coarse.steps()
            && coarse
                .boundaries
                .iter()
                .enumerate()
                .all(|(j, b)| self.boundaries[2 * j] == *b)
    }
}

/// 2^level equal steps on [0, T].
pub fn uniform_grid(level: u32, t: f64) -> TimeGrid {
    let n = 1usize << level;
    let mut boundaries: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64 * t).collect();
    boundaries[n] = t;
    TimeGrid::from_boundaries(boundaries).expect("uniform grid is well formed")
}

/// Boundaries ((k/n)·T^{1/γ})^γ: equal steps in u = t^{1/γ}, refined near t = 0.
pub fn power_grid(n_steps: usize, gamma: f64, t: f64) -> Result<TimeGrid> {
    if n_steps == 0 {
        return Err(Error::InvalidGrid("power grid needs at least one step".into()));
    }
    if !(gamma >= 1.0) {
        return Err(Error::InvalidGrid(format!("power grid exponent {gamma} < 1")));
    }
    if gamma == 1.0 {
        let mut boundaries: Vec<f64> = (0..=n_steps).map(|k| k as f64 / n_steps as f64 * t).collect();
        boundaries[n_steps] = t;
        return TimeGrid::from_boundaries(boundaries);
    }
    let u_end = t.powf(1.0 / gamma);
    let mut boundaries: Vec<f64> = (0..=n_steps)
        .map(|k| (k as f64 / n_steps as f64 * u_end).powf(gamma))
        .collect();
    boundaries[n_steps] = t;
    TimeGrid::from_boundaries(boundaries)
}

/// Exponent placing half of the power-grid steps inside the characteristic
/// crossing time tau = (log(S0/B)/sigma)^2, i.e. (1/2)^γ = tau.
pub fn gamma_for_barrier(s0: f64, b: f64, sigma: f64) -> Result<f64> {
    if !(b > 0.0 && b < s0) {
        return Err(Error::InvalidMarket(format!("barrier {b} must lie in (0, S0 = {s0})")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidMarket("sigma must be positive".into()));
    }
    let gamma = 2.0 / std::f64::consts::LN_2 * (sigma.ln() - (s0 / b).ln().ln());
    if gamma < 1.0 {
        log::warn!("power-grid exponent {gamma:.3} < 1: crossings are not concentrated near t = 0");
    }
    Ok(gamma)
}

/// Characteristic first-crossing time (log(S0/B)/sigma)^2.
pub fn crossing_time_scale(s0: f64, b: f64, sigma: f64) -> f64 {
    ((s0 / b).ln() / sigma).powi(2)
}

/// Fine and coarse paths driven by the same Brownian increments.
///
/// `coarse_states` is empty at level 0. When the path was stopped at the
/// penultimate step, `fine_states` ends at index N_f−1, `coarse_states` at
/// N_c−1, and `penultimate_fine_increment` holds ΔW_{N_f−1}, the first half
/// of the last coarse step.
#[derive(Debug, Clone, Default)]
pub struct CoupledPath {
    pub level: u32,
    pub fine_states: Vec<TangentState>,
    pub coarse_states: Vec<TangentState>,
    pub fine_increments: Vec<f64>,
    pub fine_widths: Vec<f64>,
    pub coarse_widths: Vec<f64>,
    pub penultimate_fine_increment: Option<f64>,
    pub stopped_at_penultimate: bool,
}

impl CoupledPath {
    pub fn has_coarse(&self) -> bool {
        !self.coarse_widths.is_empty()
    }

    pub fn fine_last(&self) -> TangentState {
        *self.fine_states.last().expect("path has an initial state")
    }

    pub fn coarse_last(&self) -> Option<TangentState> {
        self.coarse_states.last().copied()
    }

    /// Any simulated state at or below zero (Milstein factor went negative).
    pub fn has_nonpositive_state(&self) -> bool {
        self.fine_states.iter().chain(&self.coarse_states).any(|st| st.s <= 0.0)
    }
}

/// Simulate fine (and, at level > 0, coarse) paths sharing one Brownian path.
pub fn simulate_coupled(
    params: &MarketParams,
    fine: &TimeGrid,
    coarse: Option<&TimeGrid>,
    key: SampleKey,
    stop_at_penultimate: bool,
) -> Result<CoupledPath> {
    if let Some(c) = coarse {
        if !fine.refines(c) {
            return Err(Error::InvalidGrid(
                "fine grid does not refine the coarse grid 2:1".into(),
            ));
        }
    }
    let mut path = CoupledPath {
        level: key.level,
        ..CoupledPath::default()
    };
    simulate_coupled_into(&mut path, params, fine, coarse, key, stop_at_penultimate);
    Ok(path)
}

/// Buffer-reusing form of [`simulate_coupled`]; grids must already be checked.
pub(crate) fn simulate_coupled_into(
    path: &mut CoupledPath,
    params: &MarketParams,
    fine: &TimeGrid,
    coarse: Option<&TimeGrid>,
    key: SampleKey,
    stop_at_penultimate: bool,
) {
    let n_f = fine.steps();
    let n_draw = if stop_at_penultimate { n_f - 1 } else { n_f };
    path.level = key.level;
    path.stopped_at_penultimate = stop_at_penultimate;
    path.fine_widths.clear();
    path.fine_widths.extend_from_slice(fine.widths());
    path.coarse_widths.clear();
    if let Some(c) = coarse {
        path.coarse_widths.extend_from_slice(c.widths());
    }

    let mut stream = key.stream();
    path.fine_increments.clear();
    path.fine_increments
        .extend(fine.widths()[..n_draw].iter().map(|h| h.sqrt() * stream.normal()));

    let init = TangentState::initial(params.s0);
    path.fine_states.clear();
    path.fine_states.push(init);
    let mut st = init;
    for (dw, h) in path.fine_increments.iter().zip(fine.widths()) {
        st = milstein_step(st, *dw, *h, params);
        path.fine_states.push(st);
    }

    path.coarse_states.clear();
    path.penultimate_fine_increment = None;
    if let Some(c) = coarse {
        let n_c = c.steps();
        let n_coarse = if stop_at_penultimate { n_c - 1 } else { n_c };
        path.coarse_states.push(init);
        let mut st = init;
        for j in 0..n_coarse {
            let dw = path.fine_increments[2 * j] + path.fine_increments[2 * j + 1];
            st = milstein_step(st, dw, c.widths()[j], params);
            path.coarse_states.push(st);
        }
        if stop_at_penultimate {
            path.penultimate_fine_increment = Some(path.fine_increments[n_f - 2]);
        }
    }
}
