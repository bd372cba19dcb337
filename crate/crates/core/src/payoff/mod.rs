//! Terminal payoffs and their smoothed conditional expectations.
//!
//! Everything here is a closed form. Functions return the value together with
//! partial derivatives in their scalar inputs; the estimators combine those
//! with path tangents by the chain rule.

mod barrier;
mod bridge;

pub use barrier::{
    barrier_condexp_fine, barrier_smooth_coarse, barrier_smooth_fine, barrier_survival_coarse, barrier_survival_fine,
    crossing_prob, crossing_prob_partials, smooth_call, survival_coarse, survival_fine, BarrierCondExp,
    CrossingPartials,
};
pub use bridge::{
    bridge_midpoint, bridge_min, bridge_min_partials, coarse_bridge_min, coarse_midpoint, lookback_coarse,
    lookback_fine, BridgeMinPartials, BridgeSample, MidpointPartials,
};

use crate::greeks::{Grad, GreekTriple};
use crate::normal;
use crate::sde::{MarketParams, TangentState};

/// Call payoff (s − K)^+ and its derivative in s. The kink at s = K gets
/// derivative 0.
#[inline]
pub fn call_payoff(s: f64, k: f64) -> (f64, f64) {
    if s > k {
        (s - k, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// 1 when s > K strictly.
#[inline]
pub fn digital_payoff(s: f64, k: f64) -> f64 {
    if s > k {
        1.0
    } else {
        0.0
    }
}

/// A smoothed payoff value with its partials in the conditional mean and
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothed {
    pub value: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
}

/// E[(X − K)^+] for X ~ N(alpha, beta²).
pub fn call_condexp(alpha: f64, beta: f64, k: f64) -> Smoothed {
    if !(beta > 0.0) {
        let (value, w) = call_payoff(alpha, k);
        return Smoothed {
            value,
            d_alpha: w,
            d_beta: 0.0,
        };
    }
    let z = (alpha - k) / beta;
    let pdf = normal::pdf(z);
    let cdf = normal::cdf(z);
    Smoothed {
        value: beta * pdf + (alpha - k) * cdf,
        d_alpha: cdf,
        d_beta: pdf,
    }
}

/// P[X > K] for X ~ N(alpha, beta²).
pub fn digital_condexp(alpha: f64, beta: f64, k: f64) -> Smoothed {
    if !(beta > 0.0) {
        return Smoothed {
            value: digital_payoff(alpha, k),
            d_alpha: 0.0,
            d_beta: 0.0,
        };
    }
    let z = (alpha - k) / beta;
    let pdf = normal::pdf(z);
    Smoothed {
        value: normal::cdf(z),
        d_alpha: pdf / beta,
        d_beta: -z * pdf / beta,
    }
}

/// Conditional law N(alpha, beta²) of the terminal value given the path up to
/// the last step, with the tangents of alpha and beta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondExpInputs {
    pub alpha: f64,
    pub beta: f64,
    pub dalpha: Grad,
    pub dbeta: Grad,
}

impl CondExpInputs {
    /// Fine level: one Euler step of width `h` from the penultimate state.
    pub fn fine(prev: TangentState, h: f64, params: &MarketParams) -> Self {
        let growth = 1.0 + params.r * h;
        let vol = params.sigma * h.sqrt();
        CondExpInputs {
            alpha: growth * prev.s,
            beta: vol * prev.s,
            dalpha: prev.grad() * growth,
            dbeta: prev.grad() * vol + Grad::new(0.0, h.sqrt() * prev.s),
        }
    }

    /// Coarse level: the last coarse step of width `h_coarse`, conditioned on
    /// the fine increment `dw_first` over its first half; `h_second` is the
    /// width of the remaining half.
    pub fn coarse(prev: TangentState, h_coarse: f64, h_second: f64, dw_first: f64, params: &MarketParams) -> Self {
        let growth = 1.0 + params.r * h_coarse + params.sigma * dw_first;
        let vol = params.sigma * h_second.sqrt();
        CondExpInputs {
            alpha: growth * prev.s,
            beta: vol * prev.s,
            dalpha: prev.grad() * growth + Grad::new(0.0, dw_first * prev.s),
            dbeta: prev.grad() * vol + Grad::new(0.0, h_second.sqrt() * prev.s),
        }
    }

    /// Chain rule from (alpha, beta) partials to (value, delta, vega).
    pub fn chain(&self, sm: Smoothed) -> GreekTriple {
        GreekTriple::from_parts(sm.value, self.dalpha * sm.d_alpha + self.dbeta * sm.d_beta)
    }
}
