//! The multilevel driver: per-level statistics, rate fits, optimal sample
//! allocation and the telescoped estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{LevelSampler, MethodSpec};
use crate::greeks::{GreekTriple, Output};
use crate::sde::MarketParams;
use crate::stats::TripleMoments;

/// Samples per work unit. Units are evaluated in parallel and merged in index
/// order, so statistics do not depend on the worker count.
const CHUNK: u64 = 2048;

/// Running statistics for one level; mergeable across top-up rounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelAccumulator {
    pub y: TripleMoments,
    pub fine: TripleMoments,
    pub coarse: TripleMoments,
    pub cost: f64,
    pub rejected: u64,
    pub non_finite: u64,
    pub nonpositive_paths: u64,
}

impl LevelAccumulator {
    pub fn merge(&mut self, o: &LevelAccumulator) {
        self.y.merge(&o.y);
        self.fine.merge(&o.fine);
        self.coarse.merge(&o.coarse);
        self.cost += o.cost;
        self.rejected += o.rejected;
        self.non_finite += o.non_finite;
        self.nonpositive_paths += o.nonpositive_paths;
    }

    pub fn count(&self) -> u64 {
        self.y.count()
    }
}

/// Summary of Ŷ_l at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    /// Nominal fine step width T·2^{-l}.
    pub h: f64,
    pub n_samples: u64,
    pub mean: GreekTriple,
    pub variance: GreekTriple,
    /// Total fine-equivalent steps spent on this level.
    pub cost: f64,
    pub fine_mean: GreekTriple,
    pub fine_variance: GreekTriple,
    pub coarse_mean: Option<GreekTriple>,
    pub coarse_variance: Option<GreekTriple>,
    pub rejected: u64,
    pub non_finite: u64,
    pub nonpositive_paths: u64,
    /// Rejections exceeded 1% of samples.
    pub flagged: bool,
}

impl LevelStats {
    fn from_acc(level: u32, t: f64, acc: &LevelAccumulator) -> Self {
        let n = acc.count();
        let has_coarse = acc.coarse.count() > 0;
        LevelStats {
            level,
            h: t * 0.5f64.powi(level as i32),
            n_samples: n,
            mean: acc.y.mean(),
            variance: acc.y.variance(),
            cost: acc.cost,
            fine_mean: acc.fine.mean(),
            fine_variance: acc.fine.variance(),
            coarse_mean: has_coarse.then(|| acc.coarse.mean()),
            coarse_variance: has_coarse.then(|| acc.coarse.variance()),
            rejected: acc.rejected,
            non_finite: acc.non_finite,
            nonpositive_paths: acc.nonpositive_paths,
            flagged: acc.rejected * 100 > n,
        }
    }

    pub fn std_error(&self) -> GreekTriple {
        self.variance.map(|v| (v / self.n_samples as f64).sqrt())
    }

    pub fn cost_per_sample(&self) -> f64 {
        self.cost / self.n_samples as f64
    }
}

/// Evaluate samples `start..start + n` of one level.
pub fn accumulate_level(
    spec: &MethodSpec,
    params: &MarketParams,
    level: u32,
    start: u64,
    n: u64,
    seed: u64,
) -> Result<LevelAccumulator> {
    // validate once up front; workers rebuild their own sampler
    LevelSampler::new(*spec, *params, level)?;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<LevelAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sampler = LevelSampler::new(*spec, *params, level).expect("validated above");
            let lo = start + c * CHUNK;
            let hi = (lo + CHUNK).min(start + n);
            let mut acc = LevelAccumulator::default();
            for i in lo..hi {
                let s = sampler.sample(seed, i);
                acc.y.push(s.y);
                acc.fine.push(s.fine);
                if let Some(c) = s.coarse {
                    acc.coarse.push(c);
                }
                acc.cost += s.cost;
                acc.rejected += u64::from(s.rejected);
                acc.non_finite += u64::from(s.non_finite);
                acc.nonpositive_paths += u64::from(s.nonpositive_state);
            }
            acc
        })
        .collect();
    let mut total = LevelAccumulator::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Run `n` samples of level `level` with path indices 0..n.
pub fn collect_level(spec: &MethodSpec, params: &MarketParams, level: u32, n: u64, seed: u64) -> Result<LevelStats> {
    if n < 2 {
        return Err(Error::InvalidInput("a level needs at least two samples".into()));
    }
    let acc = accumulate_level(spec, params, level, 0, n, seed)?;
    let stats = LevelStats::from_acc(level, params.t, &acc);
    if stats.flagged {
        log::warn!("level {level}: {} of {n} samples rejected", stats.rejected);
    }
    Ok(stats)
}

/// Collect every level in `levels` with the same sample count.
pub fn collect_levels(
    spec: &MethodSpec,
    params: &MarketParams,
    levels: std::ops::RangeInclusive<u32>,
    n: u64,
    seed: u64,
) -> Result<Vec<LevelStats>> {
    levels.map(|l| collect_level(spec, params, l, n, seed)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Decay exponent: V_l ≈ c2 · h_l^beta.
    pub beta: f64,
    pub c2: f64,
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Least-squares slope of log2 V(Ŷ_l) against l over `range`; beta = −slope.
pub fn fit_rate(levels: &[LevelStats], output: Output, range: std::ops::RangeInclusive<u32>) -> Result<RateFit> {
    let pts: Vec<&LevelStats> = levels.iter().filter(|s| range.contains(&s.level)).collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!("need >= 3 levels in {range:?}, have {}", pts.len())));
    }
    let mut xy = Vec::with_capacity(pts.len());
    for s in &pts {
        let v = s.variance[output];
        if !(v > 0.0) {
            return Err(Error::Fit(format!(
                "level {} has non-positive {} variance",
                s.level,
                output.name()
            )));
        }
        xy.push((s.level as f64, v.log2()));
    }
    let (slope, intercept) = least_squares(&xy);
    let beta = -slope;
    // log2 V = log2 c2 + beta·log2 h, log2 h = log2 T − l
    let log2_t = pts[0].h.log2() + pts[0].level as f64;
    Ok(RateFit {
        beta,
        c2: 2f64.powf(intercept - beta * log2_t),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakRate {
    pub alpha: f64,
    /// False when the correction means are within 3 s.e. of zero on at least
    /// half the fitted levels.
    pub reliable: bool,
}

/// Slope of log2 |E(Ŷ_l)| against l over the levels >= 1.
pub fn fit_weak_rate(levels: &[LevelStats], output: Output) -> Result<WeakRate> {
    let pts: Vec<&LevelStats> = levels.iter().filter(|s| s.level >= 1).collect();
    if pts.len() < 3 {
        return Err(Error::Fit(format!("need >= 3 correction levels, have {}", pts.len())));
    }
    let mut noisy = 0;
    let mut xy = Vec::with_capacity(pts.len());
    for s in &pts {
        let m = s.mean[output].abs();
        if s.n_samples > 1 && m < 3.0 * s.std_error()[output] {
            noisy += 1;
        }
        if !(m > 0.0) {
            return Err(Error::Fit(format!(
                "level {} has a zero {} mean",
                s.level,
                output.name()
            )));
        }
        xy.push((s.level as f64, m.log2()));
    }
    let (slope, _) = least_squares(&xy);
    Ok(WeakRate {
        alpha: -slope,
        reliable: 2 * noisy < pts.len(),
    })
}

/// Samples per level minimising Σ N_l c_l subject to Σ V_l/N_l <= eps²/2.
pub fn allocate_samples(variances: &[f64], costs: &[f64], epsilon: f64) -> Result<Vec<u64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    if variances.len() != costs.len() {
        return Err(Error::InvalidInput("variance and cost lists differ in length".into()));
    }
    if variances.iter().any(|v| !(*v >= 0.0)) || costs.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::InvalidInput("variances must be >= 0 and costs > 0".into()));
    }
    let total: f64 = variances.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    Ok(variances
        .iter()
        .zip(costs)
        .map(|(v, c)| {
            let n = (2.0 / (epsilon * epsilon) * (v / c).sqrt() * total).ceil();
            (n as u64).max(MIN_SAMPLES)
        })
        .collect())
}

const MIN_SAMPLES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplexityClass {
    /// O(eps^-2)
    Eps2,
    /// O(eps^-2 (log eps)^2)
    Eps2Log2,
    /// O(eps^{-2-(1-beta)/alpha})
    Eps2Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub class: ComplexityClass,
    /// Power of eps in the cost bound (−2 for the first two classes).
    pub exponent: f64,
}

/// Width of the band around beta = 1 treated as the log² regime.
pub const BETA_ONE_BAND: f64 = 0.1;

pub fn classify_complexity(beta: f64, alpha: f64) -> Result<Complexity> {
    if !(alpha >= 0.5) {
        return Err(Error::InvalidInput(format!(
            "weak rate {alpha} < 1/2: bound does not apply"
        )));
    }
    if !beta.is_finite() {
        return Err(Error::InvalidInput("variance rate is not finite".into()));
    }
    Ok(if beta > 1.0 + BETA_ONE_BAND {
        Complexity {
            class: ComplexityClass::Eps2,
            exponent: -2.0,
        }
    } else if beta >= 1.0 - BETA_ONE_BAND {
        Complexity {
            class: ComplexityClass::Eps2Log2,
            exponent: -2.0,
        }
    } else {
        Complexity {
            class: ComplexityClass::Eps2Plus,
            exponent: -2.0 - (1.0 - beta) / alpha,
        }
    })
}

/// How the RMS target applies to the Greeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreekTolerance {
    /// Each Greek gets eps scaled by |Greek| / |value| from the running
    /// estimate, i.e. the value's relative accuracy.
    Relative,
    /// eps in each output's own units.
    Absolute,
    /// Only the value drives allocation and level count.
    ValueOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmcConfig {
    pub pilot_samples: u64,
    /// Levels 0..=initial_levels get pilot runs before the first allocation.
    pub initial_levels: u32,
    pub max_level: u32,
    pub greek_tolerance: GreekTolerance,
    /// Weak rate used when the fitted one is unreliable.
    pub default_alpha: f64,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        MlmcConfig {
            pilot_samples: 10_000,
            initial_levels: 2,
            max_level: 12,
            greek_tolerance: GreekTolerance::Relative,
            default_alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputRates {
    pub beta_hat: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub alpha_reliable: bool,
    pub complexity: Option<Complexity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcReport {
    pub estimates: GreekTriple,
    pub std_errors: GreekTriple,
    pub levels: Vec<LevelStats>,
    pub value: OutputRates,
    pub delta: OutputRates,
    pub vega: OutputRates,
    pub total_cost: f64,
    pub epsilon: f64,
    pub tolerances: GreekTriple,
    pub converged: bool,
    pub non_finite: u64,
    pub rejected: u64,
}

impl MlmcReport {
    pub fn rates(&self, o: Output) -> &OutputRates {
        match o {
            Output::Value => &self.value,
            Output::Delta => &self.delta,
            Output::Vega => &self.vega,
        }
    }
}

pub fn run_mlmc(spec: &MethodSpec, params: &MarketParams, epsilon: f64, seed: u64) -> Result<MlmcReport> {
    run_mlmc_with(spec, params, epsilon, seed, &MlmcConfig::default())
}

fn level_stats(accs: &[LevelAccumulator], t: f64) -> Vec<LevelStats> {
    accs.iter()
        .enumerate()
        .map(|(l, a)| LevelStats::from_acc(l as u32, t, a))
        .collect()
}

fn tolerances(eps: f64, estimate: GreekTriple, mode: GreekTolerance) -> GreekTriple {
    match mode {
        GreekTolerance::Absolute => GreekTriple::splat(eps),
        GreekTolerance::ValueOnly => GreekTriple::new(eps, f64::INFINITY, f64::INFINITY),
        GreekTolerance::Relative => {
            let scale = estimate.value.abs();
            if !(scale > 0.0) {
                return GreekTriple::splat(eps);
            }
            // floor keeps a vanishing Greek from demanding unbounded work
            estimate.map(|g| eps * (g.abs() / scale).max(1e-3))
        }
    }
}

fn weak_rate(levels: &[LevelStats], o: Output, cfg: &MlmcConfig) -> (f64, Option<f64>, bool) {
    match fit_weak_rate(levels, o) {
        Ok(w) if w.reliable && w.alpha >= 0.5 => (w.alpha, Some(w.alpha), true),
        Ok(w) => (cfg.default_alpha, Some(w.alpha), false),
        Err(_) => (cfg.default_alpha, None, false),
    }
}

/// Adaptive MLMC: pilot runs, optimal allocation, and level extension until
/// the estimated bias of every tracked output is below tol/sqrt(2).
pub fn run_mlmc_with(
    spec: &MethodSpec,
    params: &MarketParams,
    epsilon: f64,
    seed: u64,
    cfg: &MlmcConfig,
) -> Result<MlmcReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    if cfg.pilot_samples < 2 {
        return Err(Error::Config("pilot_samples must be >= 2".into()));
    }
    let initial = cfg.initial_levels.min(cfg.max_level);
    let mut accs = Vec::new();
    let mut costs = Vec::new();
    for l in 0..=initial {
        accs.push(accumulate_level(spec, params, l, 0, cfg.pilot_samples, seed)?);
        costs.push(LevelSampler::new(*spec, *params, l)?.cost_per_sample());
    }
    let converged = loop {
        let mut tol = GreekTriple::splat(epsilon);
        for _ in 0..6 {
            let stats = level_stats(&accs, params.t);
            let estimate = stats.iter().fold(GreekTriple::ZERO, |a, s| a + s.mean);
            tol = tolerances(epsilon, estimate, cfg.greek_tolerance);
            let mut want = vec![0u64; accs.len()];
            for o in Output::ALL {
                if !tol[o].is_finite() {
                    continue;
                }
                let vars: Vec<f64> = stats.iter().map(|s| s.variance[o]).collect();
                for (w, n) in want.iter_mut().zip(allocate_samples(&vars, &costs, tol[o])?) {
                    *w = (*w).max(n);
                }
            }
            let mut added = false;
            for (l, acc) in accs.iter_mut().enumerate() {
                let have = acc.count();
                if want[l] > have {
                    let extra = accumulate_level(spec, params, l as u32, have, want[l] - have, seed)?;
                    acc.merge(&extra);
                    added = true;
                }
            }
            if !added {
                break;
            }
        }
        let stats = level_stats(&accs, params.t);
        let top = accs.len() - 1;
        let bias_ok = Output::ALL.iter().all(|&o| {
            if !tol[o].is_finite() {
                return true;
            }
            let (alpha, _, _) = weak_rate(&stats, o, cfg);
            let growth = 2f64.powf(alpha);
            let last = stats[top].mean[o].abs();
            let prev = if top >= 1 {
                stats[top - 1].mean[o].abs() / growth
            } else {
                0.0
            };
            last.max(prev) / (growth - 1.0) <= tol[o] / 2f64.sqrt()
        });
        if bias_ok && top >= 1 {
            break true;
        }
        if top as u32 >= cfg.max_level {
            break false;
        }
        let l = top as u32 + 1;
        accs.push(accumulate_level(spec, params, l, 0, cfg.pilot_samples, seed)?);
        costs.push(LevelSampler::new(*spec, *params, l)?.cost_per_sample());
    };

    let levels = level_stats(&accs, params.t);
    let estimates = levels.iter().fold(GreekTriple::ZERO, |a, s| a + s.mean);
    let std_errors = levels
        .iter()
        .fold(GreekTriple::ZERO, |a, s| a + s.variance * (1.0 / s.n_samples as f64))
        .map(f64::sqrt);
    let top = levels.len() as u32 - 1;
    let rates = |o: Output| {
        let (alpha, alpha_hat, alpha_reliable) = weak_rate(&levels, o, cfg);
        let beta_hat = fit_rate(&levels, o, 1..=top).ok().map(|f| f.beta);
        OutputRates {
            beta_hat,
            alpha_hat,
            alpha_reliable,
            complexity: beta_hat.and_then(|b| classify_complexity(b, alpha).ok()),
        }
    };
    Ok(MlmcReport {
        estimates,
        std_errors,
        value: rates(Output::Value),
        delta: rates(Output::Delta),
        vega: rates(Output::Vega),
        total_cost: levels.iter().map(|s| s.cost).sum(),
        epsilon,
        tolerances: tolerances(epsilon, estimates, cfg.greek_tolerance),
        converged,
        non_finite: levels.iter().map(|s| s.non_finite).sum(),
        rejected: levels.iter().map(|s| s.rejected).sum(),
        levels,
    })
}
