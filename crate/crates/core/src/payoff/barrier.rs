//! Down-and-out barrier call: per-step survival probabilities of the
//! interpolating bridge, the smoothed terminal payoff, and the fine-level
//! conditional expectation over the last step.

use super::{call_condexp, call_payoff, Smoothed};
use crate::error::{Error, Result};
use crate::greeks::{Grad, GreekTriple};
use crate::normal;
use crate::sde::{CoupledPath, MarketParams, TangentState};

/// Probability that a bridge with volatility `b` over a step of width `h`
/// dips below `barrier` given its endpoints.
pub fn crossing_prob(s_left: f64, s_right: f64, barrier: f64, b: f64, h: f64) -> f64 {
    crossing_prob_partials(s_left, s_right, barrier, b, h).p
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingPartials {
    pub p: f64,
    pub d_left: f64,
    pub d_right: f64,
    pub d_b: f64,
}

pub fn crossing_prob_partials(s_left: f64, s_right: f64, barrier: f64, b: f64, h: f64) -> CrossingPartials {
    let x = (s_left - barrier).max(0.0);
    let y = (s_right - barrier).max(0.0);
    if b == 0.0 {
        let p = if s_left.min(s_right) <= barrier { 1.0 } else { 0.0 };
        return CrossingPartials {
            p,
            d_left: 0.0,
            d_right: 0.0,
            d_b: 0.0,
        };
    }
    let denom = b * b * h;
    let p = (-2.0 * x * y / denom).exp();
    CrossingPartials {
        p,
        d_left: if x > 0.0 { -2.0 * p * y / denom } else { 0.0 },
        d_right: if y > 0.0 { -2.0 * p * x / denom } else { 0.0 },
        d_b: 4.0 * p * x * y / (denom * b),
    }
}

// Running survival product and its gradient.
struct Survival {
    prod: f64,
    grad: Grad,
}

impl Survival {
    fn new() -> Self {
        Survival {
            prod: 1.0,
            grad: Grad::ZERO,
        }
    }

    fn dead(&self) -> bool {
        self.prod == 0.0 && self.grad == Grad::ZERO
    }

    /// Multiply by the no-crossing probability of one (sub)step.
    fn absorb(&mut self, left: (f64, Grad), right: (f64, Grad), b: (f64, Grad), barrier: f64, h: f64) {
        let c = crossing_prob_partials(left.0, right.0, barrier, b.0, h);
        let q = 1.0 - c.p;
        let dq = -(left.1 * c.d_left + right.1 * c.d_right + b.1 * c.d_b);
        self.grad = self.grad * q + dq * self.prod;
        self.prod *= q;
    }
}

fn vol(st: TangentState, sigma: f64) -> (f64, Grad) {
    (sigma * st.s, Grad::new(sigma * st.ds_ds0, st.s + sigma * st.ds_dsigma))
}

fn tracked(st: TangentState) -> (f64, Grad) {
    (st.s, st.grad())
}

/// Product over fine steps of (1 − p_n) with its gradient.
pub fn survival_fine(states: &[TangentState], widths: &[f64], params: &MarketParams, barrier: f64) -> (f64, Grad) {
    let mut surv = Survival::new();
    for (n, h) in widths.iter().enumerate() {
        surv.absorb(
            tracked(states[n]),
            tracked(states[n + 1]),
            vol(states[n], params.sigma),
            barrier,
            *h,
        );
        if surv.dead() {
            break;
        }
    }
    (surv.prod, surv.grad)
}

/// Product over coarse steps of (1 − p_{n,1})(1 − p_{n,2}), each coarse step
/// split at the bridge midpoint implied by the fine increments.
pub fn survival_coarse(
    states: &[TangentState],
    fine_increments: &[f64],
    fine_widths: &[f64],
    params: &MarketParams,
    barrier: f64,
) -> (f64, Grad) {
    let mut surv = Survival::new();
    for j in 0..states.len() - 1 {
        let left = tracked(states[j]);
        let right = tracked(states[j + 1]);
        let b = vol(states[j], params.sigma);
        let (h1, h2) = (fine_widths[2 * j], fine_widths[2 * j + 1]);
        let mp = super::bridge_midpoint(
            left.0,
            right.0,
            b.0,
            fine_increments[2 * j],
            h1,
            fine_increments[2 * j + 1],
            h2,
        );
        let mid = (mp.value, left.1 * mp.d_left + right.1 * mp.d_right + b.1 * mp.d_b);
        surv.absorb(left, mid, b, barrier, h1);
        surv.absorb(mid, right, b, barrier, h2);
        if surv.dead() {
            break;
        }
    }
    (surv.prod, surv.grad)
}

fn plain_call(st: TangentState, k: f64) -> GreekTriple {
    let (v, w) = call_payoff(st.s, k);
    GreekTriple::from_parts(v, st.grad() * w)
}

/// Smoothed call P̃(S_T) = E[(X − K)^+] with X ~ N(S_T, (sigma·sqrt(h*)·S_T)²).
pub fn smooth_call(st: TangentState, sigma: f64, h_star: f64, k: f64) -> GreekTriple {
    let root = h_star.sqrt();
    let beta = sigma * root * st.s;
    let sm = call_condexp(st.s, beta, k);
    let dbeta = st.grad() * (sigma * root) + Grad::new(0.0, root * st.s);
    GreekTriple::from_parts(sm.value, st.grad() * sm.d_alpha + dbeta * sm.d_beta)
}

fn times_survival(payoff: GreekTriple, surv: (f64, Grad)) -> GreekTriple {
    let (prod, grad) = surv;
    GreekTriple::from_parts(payoff.value * prod, payoff.grad() * prod + grad * payoff.value)
}

fn fine_survival(path: &CoupledPath, params: &MarketParams) -> Result<(f64, Grad)> {
    let barrier = params.barrier_level()?;
    Ok(survival_fine(&path.fine_states, &path.fine_widths, params, barrier))
}

fn coarse_survival(path: &CoupledPath, params: &MarketParams) -> Result<(f64, Grad)> {
    let barrier = params.barrier_level()?;
    if !path.has_coarse() {
        return Err(Error::InvalidInput("coarse barrier payoff needs level >= 1".into()));
    }
    Ok(survival_coarse(
        &path.coarse_states,
        &path.fine_increments,
        &path.fine_widths,
        params,
        barrier,
    ))
}

/// Fine-level barrier payoff (S_N − K)^+ · Π(1 − p_n) with tangents.
pub fn barrier_survival_fine(path: &CoupledPath, params: &MarketParams) -> Result<GreekTriple> {
    let surv = fine_survival(path, params)?;
    Ok(times_survival(plain_call(path.fine_last(), params.k), surv))
}

/// Coarse-level barrier payoff using midpoint-split survival factors.
pub fn barrier_survival_coarse(path: &CoupledPath, params: &MarketParams) -> Result<GreekTriple> {
    let surv = coarse_survival(path, params)?;
    Ok(times_survival(plain_call(path.coarse_last().unwrap(), params.k), surv))
}

/// Fine-level barrier payoff with the call kink smoothed over width `h_star`.
pub fn barrier_smooth_fine(path: &CoupledPath, params: &MarketParams, h_star: f64) -> Result<GreekTriple> {
    let surv = fine_survival(path, params)?;
    Ok(times_survival(
        smooth_call(path.fine_last(), params.sigma, h_star, params.k),
        surv,
    ))
}

pub fn barrier_smooth_coarse(path: &CoupledPath, params: &MarketParams, h_star: f64) -> Result<GreekTriple> {
    let surv = coarse_survival(path, params)?;
    Ok(times_survival(
        smooth_call(path.coarse_last().unwrap(), params.sigma, h_star, params.k),
        surv,
    ))
}

/// E[(S_N − K)^+ · 1{no crossing on the last step} | path to N−1], with
/// partials in alpha, beta, the reflected mean alpha~ and the reflection
/// weight D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierCondExp {
    pub value: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
    pub d_alpha_tilde: f64,
    pub d_reflection: f64,
    pub alpha_tilde: f64,
    pub reflection: f64,
}

impl BarrierCondExp {
    pub fn smoothed(&self) -> Smoothed {
        Smoothed {
            value: self.value,
            d_alpha: self.d_alpha,
            d_beta: self.d_beta,
        }
    }
}

// (a − K)Φ((a − L)/β) + β φ((L − a)/β) and its partials in a and β.
fn truncated_call(a: f64, beta: f64, k: f64, l: f64) -> (f64, f64, f64) {
    let z = (a - l) / beta;
    let pdf = normal::pdf(z);
    let cdf = normal::cdf(z);
    let value = (a - k) * cdf + beta * pdf;
    let d_a = cdf + pdf * (l - k) / beta;
    let d_beta = pdf * (1.0 + z * (k - l) / beta);
    (value, d_a, d_beta)
}

/// Fine-level conditional expectation of the barrier payoff over the last
/// step, from the penultimate value `s_prev` (alpha = (1 + r h) s_prev,
/// beta = sigma sqrt(h) s_prev in `alpha`, `beta`).
pub fn barrier_condexp_fine(
    alpha: f64,
    beta: f64,
    params: &MarketParams,
    s_prev: f64,
    h: f64,
) -> Result<BarrierCondExp> {
    let barrier = params.barrier_level()?;
    if !(beta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "conditional std dev {beta} must be positive"
        )));
    }
    let l = params.k.max(barrier);
    let alpha_tilde = 2.0 * barrier + (-1.0 + params.r * h) * s_prev;
    let reflection = (2.0 * params.r * (barrier - s_prev) / (params.sigma * params.sigma * s_prev)).exp();
    let (direct, da, db) = truncated_call(alpha, beta, params.k, l);
    let (mirror, dat, dbt) = truncated_call(alpha_tilde, beta, params.k, l);
    Ok(BarrierCondExp {
        value: direct - reflection * mirror,
        d_alpha: da,
        d_beta: db - reflection * dbt,
        d_alpha_tilde: -reflection * dat,
        d_reflection: -mirror,
        alpha_tilde,
        reflection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::SQRT_2PI;
    use proptest::prelude::*;

    #[test]
    fn crossing_prob_examples() {
        assert_eq!(crossing_prob(95.0, 120.0, 95.0, 20.0, 0.25), 1.0);
        assert_eq!(crossing_prob(90.0, 120.0, 95.0, 20.0, 0.25), 1.0);
        assert!(crossing_prob(200.0, 200.0, 95.0, 20.0, 0.25) < 1e-90);
        let p = crossing_prob(100.0, 100.0, 95.0, 20.0, 0.25);
        assert!((p - (-0.5f64).exp()).abs() < 1e-15);
        assert!((p - 0.6065).abs() < 1e-4);
        assert_eq!(crossing_prob(100.0, 96.0, 95.0, 0.0, 0.25), 0.0);
        assert_eq!(crossing_prob(100.0, 94.0, 95.0, 0.0, 0.25), 1.0);
    }

    #[test]
    fn crossing_partials_match_finite_differences() {
        let (a, c, b, h, bar) = (101.0, 98.0, 19.5, 0.05, 95.0);
        let p = crossing_prob_partials(a, c, bar, b, h);
        let e = 1e-6;
        let fd_a = (crossing_prob(a + e, c, bar, b, h) - crossing_prob(a - e, c, bar, b, h)) / (2.0 * e);
        let fd_c = (crossing_prob(a, c + e, bar, b, h) - crossing_prob(a, c - e, bar, b, h)) / (2.0 * e);
        let fd_b = (crossing_prob(a, c, bar, b + e, h) - crossing_prob(a, c, bar, b - e, h)) / (2.0 * e);
        assert!((fd_a - p.d_left).abs() < 1e-8);
        assert!((fd_c - p.d_right).abs() < 1e-8);
        assert!((fd_b - p.d_b).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn crossing_prob_monotone(a in 95.0f64..150.0, c in 95.0f64..150.0, da in 0.0f64..10.0) {
            let p0 = crossing_prob(a, c, 95.0, 20.0, 0.1);
            let p1 = crossing_prob(a + da, c, 95.0, 20.0, 0.1);
            let p2 = crossing_prob(a, c + da, 95.0, 20.0, 0.1);
            prop_assert!(p1 <= p0 && p2 <= p0);
            prop_assert!((0.0..=1.0).contains(&p0));
        }
    }

    #[test]
    fn smooth_call_limits() {
        let st = TangentState::initial(110.0);
        let v = smooth_call(st, 0.2, 1e-14, 100.0);
        assert!((v.value - 10.0).abs() < 1e-10);
        let at = smooth_call(TangentState::initial(100.0), 0.2, 1.0 / 64.0, 100.0);
        let beta = 0.2 * 0.125 * 100.0;
        assert!((at.value - beta / SQRT_2PI).abs() < 1e-12);
    }

    #[test]
    fn smooth_call_derivatives_match_finite_differences() {
        let sigma = 0.2;
        let hs = 1.0 / 64.0;
        for &s in &[92.0, 99.0, 100.5, 104.0] {
            let st = TangentState {
                s,
                ds_ds0: s / 100.0,
                ds_dsigma: 0.0,
            };
            let g = smooth_call(st, sigma, hs, 100.0);
            let e = 1e-6 * s;
            let up = smooth_call(TangentState { s: s + e, ..st }, sigma, hs, 100.0).value;
            let dn = smooth_call(TangentState { s: s - e, ..st }, sigma, hs, 100.0).value;
            let d_ds = (up - dn) / (2.0 * e);
            assert!(((g.delta / st.ds_ds0) - d_ds).abs() <= 1e-5 * d_ds.abs().max(1e-3));
            let es = 1e-6 * sigma;
            let vs = (smooth_call(st, sigma + es, hs, 100.0).value - smooth_call(st, sigma - es, hs, 100.0).value)
                / (2.0 * es);
            assert!((g.vega - vs).abs() <= 1e-5 * vs.abs().max(1e-3));
        }
    }

    fn barrier_params() -> MarketParams {
        MarketParams::reference().with_barrier(95.0).unwrap()
    }

    #[test]
    fn barrier_condexp_reflection_vanishes_for_tiny_barrier() {
        let p = MarketParams::reference().with_barrier(1e-3).unwrap();
        let s = 98.0;
        let h = 1.0 / 64.0;
        let alpha = (1.0 + p.r * h) * s;
        let beta = p.sigma * h.sqrt() * s;
        let v = barrier_condexp_fine(alpha, beta, &p, s, h).unwrap();
        let c = call_condexp(alpha, beta, p.k);
        assert!((v.value - c.value).abs() < 1e-12);
    }

    #[test]
    fn barrier_condexp_at_barrier_is_zero() {
        let p = barrier_params();
        let s = 95.0;
        let h = 1.0 / 64.0;
        let v = barrier_condexp_fine((1.0 + p.r * h) * s, p.sigma * h.sqrt() * s, &p, s, h).unwrap();
        assert!((v.reflection - 1.0).abs() < 1e-15);
        assert!(v.value.abs() < 1e-12);
        assert!(barrier_condexp_fine(100.0, 0.0, &p, s, h).is_err());
    }
}
