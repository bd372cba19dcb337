//! Brownian-bridge minima for the lookback payoff.
//!
//! Within a step the asset is treated as Brownian motion with constant
//! volatility `b = sigma·S_left`; the minimum given both endpoints is drawn by
//! inverting its conditional distribution with a single uniform.

use crate::greeks::{Grad, GreekTriple};
use crate::sde::{CoupledPath, MarketParams, TangentState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSample {
    pub s_left: f64,
    pub s_right: f64,
    pub b: f64,
    pub h: f64,
    pub u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeMinPartials {
    pub value: f64,
    pub d_left: f64,
    pub d_right: f64,
    pub d_b: f64,
}

pub fn bridge_min(sample: &BridgeSample) -> f64 {
    bridge_min_partials(sample).value
}

pub fn bridge_min_partials(x: &BridgeSample) -> BridgeMinPartials {
    let diff = x.s_right - x.s_left;
    let log_u = x.u.ln();
    let root = (diff * diff - 2.0 * x.b * x.b * x.h * log_u).sqrt();
    if root == 0.0 {
        return BridgeMinPartials {
            value: x.s_left,
            d_left: 0.5,
            d_right: 0.5,
            d_b: 0.0,
        };
    }
    BridgeMinPartials {
        value: 0.5 * (x.s_left + x.s_right - root),
        d_left: 0.5 * (1.0 + diff / root),
        d_right: 0.5 * (1.0 - diff / root),
        d_b: x.b * x.h * log_u / root,
    }
}

/// Bridge midpoint of a coarse step with two equal halves;
/// `dw_second_minus_first` is ΔW_{n+1} − ΔW_{n+1/2}.
pub fn coarse_midpoint(s_left: f64, s_right: f64, b: f64, dw_second_minus_first: f64) -> f64 {
    0.5 * (s_left + s_right - b * dw_second_minus_first)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidpointPartials {
    pub value: f64,
    pub d_left: f64,
    pub d_right: f64,
    pub d_b: f64,
}

/// Value of the constant-coefficient bridge at the interior fine boundary of a
/// coarse step built from two fine steps of widths `h_first`, `h_second`.
/// Reduces to [`coarse_midpoint`] for equal halves.
pub fn bridge_midpoint(
    s_left: f64,
    s_right: f64,
    b: f64,
    dw_first: f64,
    h_first: f64,
    dw_second: f64,
    h_second: f64,
) -> MidpointPartials {
    let lambda = h_first / (h_first + h_second);
    let noise = (1.0 - lambda) * dw_first - lambda * dw_second;
    MidpointPartials {
        value: s_left + lambda * (s_right - s_left) + b * noise,
        d_left: 1.0 - lambda,
        d_right: lambda,
        d_b: noise,
    }
}

/// Minimum over a coarse step of width `h_c`, split at `s_mid`, reusing the
/// fine-level uniforms `u1`, `u2` of the two halves.
pub fn coarse_bridge_min(s_left: f64, s_mid: f64, s_right: f64, b: f64, h_c: f64, u1: f64, u2: f64) -> f64 {
    let h = 0.5 * h_c;
    let m1 = bridge_min(&BridgeSample {
        s_left,
        s_right: s_mid,
        b,
        h,
        u: u1,
    });
    let m2 = bridge_min(&BridgeSample {
        s_left: s_mid,
        s_right,
        b,
        h,
        u: u2,
    });
    m1.min(m2)
}

// A scalar carried with its gradient, local to the lookback assembly.
#[derive(Clone, Copy)]
struct Tracked {
    v: f64,
    g: Grad,
}

impl Tracked {
    fn of(st: TangentState) -> Self {
        Tracked { v: st.s, g: st.grad() }
    }

    fn vol(st: TangentState, sigma: f64) -> Self {
        Tracked {
            v: sigma * st.s,
            g: Grad::new(sigma * st.ds_ds0, st.s + sigma * st.ds_dsigma),
        }
    }
}

fn tracked_min(left: Tracked, right: Tracked, b: Tracked, h: f64, u: f64) -> Tracked {
    let p = bridge_min_partials(&BridgeSample {
        s_left: left.v,
        s_right: right.v,
        b: b.v,
        h,
        u,
    });
    Tracked {
        v: p.value,
        g: left.g * p.d_left + right.g * p.d_right + b.g * p.d_b,
    }
}

fn lower(a: Tracked, b: Tracked) -> Tracked {
    if b.v < a.v {
        b
    } else {
        a
    }
}

/// Fine-level lookback payoff S_N − min, with one uniform per fine step.
pub fn lookback_fine(path: &CoupledPath, params: &MarketParams, uniforms: &[f64]) -> GreekTriple {
    let states = &path.fine_states;
    let mut min = Tracked::of(states[0]);
    for (n, (h, u)) in path.fine_widths.iter().zip(uniforms).enumerate() {
        let m = tracked_min(
            Tracked::of(states[n]),
            Tracked::of(states[n + 1]),
            Tracked::vol(states[n], params.sigma),
            *h,
            *u,
        );
        min = lower(min, m);
    }
    let last = Tracked::of(*states.last().unwrap());
    GreekTriple::from_parts(last.v - min.v, last.g - min.g)
}

/// Coarse-level lookback payoff: each coarse step is split at its simulated
/// bridge midpoint and the two halves reuse the fine step's uniforms.
pub fn lookback_coarse(path: &CoupledPath, params: &MarketParams, uniforms: &[f64]) -> GreekTriple {
    let states = &path.coarse_states;
    let inc = &path.fine_increments;
    let fw = &path.fine_widths;
    let mut min = Tracked::of(states[0]);
    for j in 0..path.coarse_widths.len() {
        let left = Tracked::of(states[j]);
        let right = Tracked::of(states[j + 1]);
        let b = Tracked::vol(states[j], params.sigma);
        let mp = bridge_midpoint(
            left.v,
            right.v,
            b.v,
            inc[2 * j],
            fw[2 * j],
            inc[2 * j + 1],
            fw[2 * j + 1],
        );
        let mid = Tracked {
            v: mp.value,
            g: left.g * mp.d_left + right.g * mp.d_right + b.g * mp.d_b,
        };
        min = lower(min, tracked_min(left, mid, b, fw[2 * j], uniforms[2 * j]));
        min = lower(min, tracked_min(mid, right, b, fw[2 * j + 1], uniforms[2 * j + 1]));
    }
    let last = Tracked::of(*states.last().unwrap());
    GreekTriple::from_parts(last.v - min.v, last.g - min.g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(s_left: f64, s_right: f64, b: f64, h: f64, u: f64) -> BridgeSample {
        BridgeSample {
            s_left,
            s_right,
            b,
            h,
            u,
        }
    }

    #[test]
    fn unit_uniform_gives_endpoint_min() {
        assert_eq!(bridge_min(&sample(100.0, 103.0, 20.0, 0.25, 1.0)), 100.0);
        assert_eq!(bridge_min(&sample(104.0, 98.0, 20.0, 0.25, 1.0)), 98.0);
    }

    #[test]
    fn direct_evaluation() {
        let m = bridge_min(&sample(100.0, 100.0, 20.0, 0.25, (-1.0f64).exp()));
        assert!((m - (100.0 - 0.5 * 200.0f64.sqrt())).abs() < 1e-12);
        assert!((m - (100.0 - 7.0711)).abs() < 1e-4);
    }

    #[test]
    fn midpoint_examples() {
        assert_eq!(coarse_midpoint(100.0, 104.0, 20.0, 0.1), 101.0);
        assert_eq!(coarse_midpoint(100.0, 104.0, 20.0, 0.0), 102.0);
        let general = bridge_midpoint(100.0, 104.0, 20.0, 0.3, 0.5, 0.4, 0.5);
        assert!((general.value - 101.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_min_examples() {
        assert_eq!(coarse_bridge_min(100.0, 97.0, 102.0, 20.0, 0.5, 1.0, 1.0), 97.0);
        let u: f64 = 0.3;
        let s = 100.0;
        let one = s - 0.5 * (2.0 * 400.0 * 0.25 * (-u.ln())).sqrt();
        let m = coarse_bridge_min(s, s, s, 20.0, 0.5, u, u);
        assert!((m - one).abs() < 1e-12);
    }

    #[test]
    fn midpoint_residual_has_zero_mean() {
        use crate::rng::{SampleKey, StreamTag};
        let n = 100_000;
        let h: f64 = 0.25;
        let b = 20.0;
        let mut s = SampleKey::new(5, 0, 0, StreamTag::Path).stream();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let w1 = h.sqrt() * s.normal();
            let w2 = h.sqrt() * s.normal();
            let left = 100.0;
            let right = left + b * (w1 + w2);
            let resid = coarse_midpoint(left, right, b, w2 - w1) - 0.5 * (left + right);
            sum += resid;
            sum2 += resid * resid;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
        // and its variance is the bridge variance b² h/2
        let var = sum2 / n as f64;
        assert!((var - b * b * h / 2.0).abs() < 0.02 * b * b * h / 2.0);
    }

    #[test]
    fn partials_match_finite_differences() {
        let base = sample(101.0, 99.5, 19.0, 0.1, 0.37);
        let p = bridge_min_partials(&base);
        let eps = 1e-6;
        let fd =
            |f: &dyn Fn(f64) -> BridgeSample, x: f64| (bridge_min(&f(x + eps)) - bridge_min(&f(x - eps))) / (2.0 * eps);
        let dl = fd(&|x| BridgeSample { s_left: x, ..base }, base.s_left);
        let dr = fd(&|x| BridgeSample { s_right: x, ..base }, base.s_right);
        let db = fd(&|x| BridgeSample { b: x, ..base }, base.b);
        assert!((dl - p.d_left).abs() < 1e-7);
        assert!((dr - p.d_right).abs() < 1e-7);
        assert!((db - p.d_b).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn bridge_min_below_endpoints(a in 1.0f64..200.0, c in 1.0f64..200.0, b in 0.0f64..50.0,
                                      h in 1e-4f64..1.0, u in 1e-12f64..=1.0) {
            let m = bridge_min(&sample(a, c, b, h, u));
            prop_assert!(m <= a.min(c) + 1e-12 * a.max(c));
        }

        #[test]
        fn bridge_min_monotone_in_log_u(a in 50.0f64..150.0, c in 50.0f64..150.0,
                                        u1 in 1e-9f64..1.0, u2 in 1e-9f64..1.0) {
            let (lo, hi) = if u1 < u2 { (u1, u2) } else { (u2, u1) };
            // larger −log u (smaller u) never raises the minimum
            prop_assert!(bridge_min(&sample(a, c, 20.0, 0.1, lo)) <= bridge_min(&sample(a, c, 20.0, 0.1, hi)) + 1e-12);
        }
    }
}
