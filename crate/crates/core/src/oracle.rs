//! Reference values for validation: Black–Scholes closed forms and a
//! high-resolution single-level Monte Carlo fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::MethodSpec;
use crate::greeks::GreekTriple;
use crate::mlmc::accumulate_level;
use crate::normal::{cdf, pdf};
use crate::sde::MarketParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ClosedForm,
    Quadrature,
    HighResolutionMc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub value: f64,
    pub delta: f64,
    pub vega: f64,
    pub source: Source,
    /// Zero for closed forms.
    pub std_error: GreekTriple,
}

impl Reference {
    pub fn triple(&self) -> GreekTriple {
        GreekTriple::new(self.value, self.delta, self.vega)
    }

    fn closed(value: f64, delta: f64, vega: f64) -> Self {
        Reference {
            value,
            delta,
            vega,
            source: Source::ClosedForm,
            std_error: GreekTriple::ZERO,
        }
    }
}

fn d1_d2(p: &MarketParams) -> Result<(f64, f64)> {
    if !(p.sigma > 0.0 && p.t > 0.0) {
        return Err(Error::InvalidMarket("closed forms need sigma > 0 and T > 0".into()));
    }
    let sd = p.sigma * p.t.sqrt();
    let d1 = ((p.s0 / p.k).ln() + (p.r + 0.5 * p.sigma * p.sigma) * p.t) / sd;
    Ok((d1, d1 - sd))
}

pub fn bs_call(p: &MarketParams) -> Result<Reference> {
    let (d1, d2) = d1_d2(p)?;
    let df = (-p.r * p.t).exp();
    Ok(Reference::closed(
        p.s0 * cdf(d1) - p.k * df * cdf(d2),
        cdf(d1),
        p.s0 * p.t.sqrt() * pdf(d1),
    ))
}

pub fn bs_digital(p: &MarketParams) -> Result<Reference> {
    let (d1, d2) = d1_d2(p)?;
    let df = (-p.r * p.t).exp();
    Ok(Reference::closed(
        df * cdf(d2),
        df * pdf(d2) / (p.s0 * p.sigma * p.t.sqrt()),
        -df * pdf(d2) * d1 / p.sigma,
    ))
}

/// Plain fine-level estimate at `level` from `n` paths, with standard errors.
pub fn reference_mc(spec: &MethodSpec, params: &MarketParams, level: u32, n: u64, seed: u64) -> Result<Reference> {
    if n < 2 {
        return Err(Error::InvalidInput("reference needs at least two paths".into()));
    }
    if level < 8 {
        log::warn!("reference_mc at level {level}: discretisation bias may exceed the standard error");
    }
    let acc = accumulate_level(spec, params, level, 0, n, seed)?;
    let m = acc.fine.mean();
    Ok(Reference {
        value: m.value,
        delta: m.delta,
        vega: m.vega,
        source: Source::HighResolutionMc,
        std_error: acc.fine.std_error(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{Method, PayoffKind};

    // Frozen from the closed form at S0=K=100, r=0.05, sigma=0.2, T=1.
    const CALL: (f64, f64, f64) = (10.450583572185565, 0.6368306511756191, 37.52403469169379);

    #[test]
    fn call_reference_values() {
        let r = bs_call(&MarketParams::reference()).unwrap();
        assert!((r.value - CALL.0).abs() < 1e-12);
        assert!((r.delta - CALL.1).abs() < 1e-12);
        assert!((r.vega - CALL.2).abs() < 1e-10);
        assert_eq!(r.source, Source::ClosedForm);
        assert_eq!(r.std_error, GreekTriple::ZERO);
    }

    #[test]
    fn call_limits() {
        let p = MarketParams::new(100.0, 1e-9, 0.05, 0.2, 1.0).unwrap();
        let r = bs_call(&p).unwrap();
        assert!((r.value - 100.0).abs() < 1e-6);
        assert!((r.delta - 1.0).abs() < 1e-12);
        assert!(r.vega.abs() < 1e-12);
        let p = MarketParams::new(100.0, 1000.0, 0.05, 0.05, 1.0).unwrap();
        assert!(bs_call(&p).unwrap().value < 1e-10);
    }

    #[test]
    fn digital_limits() {
        let p = MarketParams::reference();
        let kf = p.s0 * ((p.r - 0.5 * p.sigma * p.sigma) * p.t).exp();
        let atm = MarketParams::new(p.s0, kf, p.r, p.sigma, p.t).unwrap();
        let df = (-p.r).exp();
        assert!((bs_digital(&atm).unwrap().value - 0.5 * df).abs() < 1e-14);
        let low = MarketParams::new(100.0, 1e-9, 0.05, 0.2, 1.0).unwrap();
        assert!((bs_digital(&low).unwrap().value - df).abs() < 1e-12);
    }

    #[test]
    fn digital_greeks_match_differences() {
        let p = MarketParams::reference();
        let r = bs_digital(&p).unwrap();
        let e = 1e-5;
        let up = |s0: f64, sig: f64| {
            bs_digital(&MarketParams::new(s0, p.k, p.r, sig, p.t).unwrap())
                .unwrap()
                .value
        };
        let delta = (up(p.s0 + e, p.sigma) - up(p.s0 - e, p.sigma)) / (2.0 * e);
        let vega = (up(p.s0, p.sigma + e) - up(p.s0, p.sigma - e)) / (2.0 * e);
        assert!((delta - r.delta).abs() < 1e-8);
        assert!((vega - r.vega).abs() < 1e-7);
    }

    #[test]
    fn zero_sigma_rejected() {
        let p = MarketParams {
            sigma: 0.0,
            ..MarketParams::reference()
        };
        assert!(bs_call(&p).is_err());
    }

    #[test]
    fn mc_reference_reproducible() {
        let spec = MethodSpec::new(Method::Pathwise, PayoffKind::Call);
        let p = MarketParams::reference();
        let a = reference_mc(&spec, &p, 3, 5000, 9).unwrap();
        let b = reference_mc(&spec, &p, 3, 5000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.source, Source::HighResolutionMc);
        assert!((a.value - CALL.0).abs() < 4.0 * a.std_error.value + 0.05);
    }
}
