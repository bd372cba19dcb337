#![allow(dead_code)]

use mlmc_greeks::mlmc::collect_level;
use mlmc_greeks::{GreekTriple, MarketParams, Method, MethodSpec, Output, PayoffKind};

/// Every supported method × payoff pair with the market it runs under.
pub fn supported_combos() -> Vec<(MethodSpec, MarketParams)> {
    use Method::*;
    use PayoffKind::*;
    let plain = MarketParams::reference();
    let b85 = plain.with_barrier(85.0).unwrap();
    vec![
        (MethodSpec::new(Pathwise, Call), plain),
        (MethodSpec::new(Pathwise, Lookback), plain),
        (MethodSpec::new(Pathwise, Barrier), b85),
        (MethodSpec::new(Pathwise, BarrierSmooth), b85),
        (MethodSpec::new(CondExp, Call), plain),
        (MethodSpec::new(CondExp, Digital), plain),
        (MethodSpec::new(Split, Call), plain),
        (MethodSpec::new(Vibrato, Call), plain),
        (MethodSpec::new(Vibrato, Digital), plain),
    ]
}

/// Largest |coarse mean at l − fine mean at l−1| in units of the combined
/// standard error, over the three outputs.
pub fn tower_gap(spec: &MethodSpec, params: &MarketParams, level: u32, n: u64, seed: u64) -> (Output, f64) {
    let upper = collect_level(spec, params, level, n, seed).unwrap();
    let lower = collect_level(spec, params, level - 1, n, seed).unwrap();
    let cm = upper.coarse_mean.unwrap();
    let cv = upper.coarse_variance.unwrap();
    let mut worst = (Output::Value, 0.0);
    for o in Output::ALL {
        let i = o.index();
        let se = (cv.to_array()[i] / upper.n_samples as f64
            + lower.fine_variance.to_array()[i] / lower.n_samples as f64)
            .sqrt();
        let gap = (cm.to_array()[i] - lower.fine_mean.to_array()[i]).abs();
        let z = if se > 0.0 {
            gap / se
        } else if gap < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        if z > worst.1 {
            worst = (o, z);
        }
    }
    worst
}

pub fn max_rel_diff(a: GreekTriple, b: GreekTriple) -> f64 {
    a.to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| {
            if x == &y {
                0.0
            } else {
                (x - y).abs() / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}
