mod common;

use mlmc_greeks::mlmc::{accumulate_level, allocate_samples, collect_level, collect_levels, fit_rate};
use mlmc_greeks::oracle::{bs_call, bs_digital};
use mlmc_greeks::{run_mlmc, LevelSampler, MarketParams, Method, MethodSpec, Output, PayoffKind};
use proptest::prelude::*;

#[test]
fn tower_property_holds_for_every_combination() {
    // 9 combinations × 3 levels × 3 outputs; 4.5 s.e. keeps the family-wise
    // false alarm rate small
    for (spec, params) in common::supported_combos() {
        for level in 1..=3 {
            let (o, z) = common::tower_gap(&spec, &params, level, 40_000, 1);
            assert!(
                z < 4.5,
                "{}/{} level {level}: {} off by {z:.2} s.e.",
                spec.method,
                spec.payoff,
                o.name()
            );
        }
    }
}

#[test]
fn vibrato_scores_vanish_for_constant_payoff() {
    let params = MarketParams::reference();
    for payoff in [PayoffKind::Call, PayoffKind::Digital] {
        let spec = MethodSpec::new(Method::Vibrato, payoff);
        for level in [0, 3, 6] {
            let mut sampler = LevelSampler::new(spec, params, level).unwrap();
            let mut acc = mlmc_greeks::stats::TripleMoments::default();
            for i in 0..50_000 {
                acc.push(sampler.sample_vibrato_with(1, i, |_| 1.0).fine);
            }
            let (m, se) = (acc.mean(), acc.std_error());
            assert!((m.value - params.discount()).abs() < 1e-12);
            assert!(
                m.delta.abs() <= 3.0 * se.delta,
                "level {level}: delta {} ± {}",
                m.delta,
                se.delta
            );
            assert!(
                m.vega.abs() <= 3.0 * se.vega,
                "level {level}: vega {} ± {}",
                m.vega,
                se.vega
            );
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let params = MarketParams::reference();
    let spec = MethodSpec::new(Method::Vibrato, PayoffKind::Digital);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let acc = accumulate_level(&spec, &params, 4, 0, 10_000, 9).unwrap();
            let report = run_mlmc(&MethodSpec::new(Method::CondExp, PayoffKind::Call), &params, 0.1, 9).unwrap();
            (acc, report)
        })
    };
    let (a1, r1) = run(1);
    let (a3, r3) = run(3);
    assert_eq!(a1, a3);
    assert_eq!(r1.estimates, r3.estimates);
    assert_eq!(r1.std_errors, r3.std_errors);
}

#[test]
fn split_accumulation_matches_one_pass() {
    let params = MarketParams::reference();
    let spec = MethodSpec::new(Method::Pathwise, PayoffKind::Call);
    let whole = accumulate_level(&spec, &params, 3, 0, 5000, 4).unwrap();
    let mut parts = accumulate_level(&spec, &params, 3, 0, 1234, 4).unwrap();
    parts.merge(&accumulate_level(&spec, &params, 3, 1234, 5000 - 1234, 4).unwrap());
    assert_eq!(whole.count(), parts.count());
    assert!(common::max_rel_diff(whole.y.mean(), parts.y.mean()) < 1e-12);
    assert!(common::max_rel_diff(whole.y.variance(), parts.y.variance()) < 1e-12);
}

#[test]
fn standard_error_halves_with_four_times_the_samples() {
    let params = MarketParams::reference();
    let spec = MethodSpec::new(Method::Pathwise, PayoffKind::Call);
    let small = collect_level(&spec, &params, 3, 10_000, 2).unwrap();
    let large = collect_level(&spec, &params, 3, 40_000, 2).unwrap();
    let se = |s: &mlmc_greeks::LevelStats| s.fine_variance.map(|v| (v / s.n_samples as f64).sqrt());
    for o in Output::ALL {
        let ratio = se(&large).to_array()[o.index()] / se(&small).to_array()[o.index()];
        assert!((ratio - 0.5).abs() < 0.05, "{}: ratio {ratio}", o.name());
    }
}

#[test]
fn level_means_telescope_to_the_fine_estimate() {
    // Σ_{l<=L} E[Y_l] = E[P_L]; each side from independent samples
    let params = MarketParams::reference();
    let spec = MethodSpec::new(Method::CondExp, PayoffKind::Call);
    let top = 5;
    let levels = collect_levels(&spec, &params, 0..=top, 100_000, 3).unwrap();
    let fine = collect_level(&spec, &params, top, 100_000, 4).unwrap();
    for o in Output::ALL {
        let i = o.index();
        let sum: f64 = levels.iter().map(|s| s.mean.to_array()[i]).sum();
        let var: f64 = levels.iter().map(|s| s.std_error().to_array()[i].powi(2)).sum::<f64>()
            + (fine.fine_variance.to_array()[i] / fine.n_samples as f64);
        let gap = (sum - fine.fine_mean.to_array()[i]).abs();
        assert!(
            gap <= 4.0 * var.sqrt(),
            "{}: gap {gap} vs s.e. {}",
            o.name(),
            var.sqrt()
        );
    }
}

#[test]
fn variance_decay_matches_known_rates() {
    let params = MarketParams::reference();
    let spec = MethodSpec::new(Method::CondExp, PayoffKind::Call);
    let levels = collect_levels(&spec, &params, 2..=6, 50_000, 1).unwrap();
    let fit = fit_rate(&levels, Output::Value, 2..=6).unwrap();
    assert!((fit.beta - 2.0).abs() < 0.4, "value beta {}", fit.beta);
}

#[test]
fn mlmc_recovers_closed_forms() {
    // the RMS target covers bias as well as sampling error, so compare
    // against the per-output tolerance rather than the standard error
    let params = MarketParams::reference();
    let eps = 0.05;
    for (payoff, exact) in [
        (PayoffKind::Call, bs_call(&params)),
        (PayoffKind::Digital, bs_digital(&params)),
    ] {
        let report = run_mlmc(&MethodSpec::new(Method::CondExp, payoff), &params, eps, 1).unwrap();
        let exact = exact.unwrap().triple();
        assert!(report.converged);
        for o in Output::ALL {
            let i = o.index();
            let err = (report.estimates.to_array()[i] - exact.to_array()[i]).abs();
            assert!(
                err <= 3.0 * report.tolerances.to_array()[i],
                "{payoff} {}: error {err}",
                o.name()
            );
        }
    }
}

fn cost(ns: &[u64], c: &[f64]) -> f64 {
    ns.iter().zip(c).map(|(n, c)| *n as f64 * c).sum()
}

fn variance(ns: &[u64], v: &[f64]) -> f64 {
    ns.iter().zip(v).map(|(n, v)| v / *n as f64).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn allocation_is_feasible_and_near_optimal(
        v0 in 1e-3..10.0f64, v1 in 1e-4..1.0f64,
        c0 in 1.0..4.0f64, c1 in 2.0..16.0f64,
        eps in 0.05..0.5f64,
    ) {
        let v = [v0, v1];
        let c = [c0, c1];
        let ns = allocate_samples(&v, &c, eps).unwrap();
        let budget = eps * eps / 2.0;
        prop_assert!(variance(&ns, &v) <= budget * (1.0 + 1e-12));

        // brute force over N_0, taking the smallest feasible N_1 for each
        let mut best = f64::INFINITY;
        let n0_min = (v0 / budget).ceil() as u64 + 1;
        for n0 in n0_min..n0_min + 20 * ns[0] + 100 {
            let rest = budget - v0 / n0 as f64;
            let n1 = ((v1 / rest).ceil() as u64).max(2);
            if n0 >= 2 {
                best = best.min(cost(&[n0, n1], &c));
            }
        }
        // ceiling rounding costs at most one sample per level
        prop_assert!(cost(&ns, &c) <= best + c0 + c1, "{} vs {}", cost(&ns, &c), best);
    }
}
