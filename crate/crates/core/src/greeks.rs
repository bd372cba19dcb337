//! Value/delta/vega triples and first-order tangents.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Which of the three jointly estimated outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    Value,
    Delta,
    Vega,
}

impl Output {
    pub const ALL: [Output; 3] = [Output::Value, Output::Delta, Output::Vega];

    pub fn name(self) -> &'static str {
        match self {
            Output::Value => "value",
            Output::Delta => "delta",
            Output::Vega => "vega",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Derivative of a scalar with respect to (S0, sigma).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Grad {
    pub s0: f64,
    pub sigma: f64,
}

impl Grad {
    pub const ZERO: Grad = Grad { s0: 0.0, sigma: 0.0 };

    pub fn new(s0: f64, sigma: f64) -> Self {
        Grad { s0, sigma }
    }
}

impl Add for Grad {
    type Output = Grad;
    fn add(self, o: Grad) -> Grad {
        Grad::new(self.s0 + o.s0, self.sigma + o.sigma)
    }
}

impl Sub for Grad {
    type Output = Grad;
    fn sub(self, o: Grad) -> Grad {
        Grad::new(self.s0 - o.s0, self.sigma - o.sigma)
    }
}

impl Mul<f64> for Grad {
    type Output = Grad;
    fn mul(self, k: f64) -> Grad {
        Grad::new(self.s0 * k, self.sigma * k)
    }
}

impl Neg for Grad {
    type Output = Grad;
    fn neg(self) -> Grad {
        Grad::new(-self.s0, -self.sigma)
    }
}

/// (value, delta, vega) carried together through every estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GreekTriple {
    pub value: f64,
    pub delta: f64,
    pub vega: f64,
}

impl GreekTriple {
    pub const ZERO: GreekTriple = GreekTriple {
        value: 0.0,
        delta: 0.0,
        vega: 0.0,
    };

    pub fn new(value: f64, delta: f64, vega: f64) -> Self {
        GreekTriple { value, delta, vega }
    }

    pub fn from_parts(value: f64, grad: Grad) -> Self {
        GreekTriple::new(value, grad.s0, grad.sigma)
    }

    pub fn splat(x: f64) -> Self {
        GreekTriple::new(x, x, x)
    }

    pub fn grad(&self) -> Grad {
        Grad::new(self.delta, self.vega)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.delta.is_finite() && self.vega.is_finite()
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        GreekTriple::new(f(self.value), f(self.delta), f(self.vega))
    }

    pub fn zip(self, o: GreekTriple, f: impl Fn(f64, f64) -> f64) -> Self {
        GreekTriple::new(f(self.value, o.value), f(self.delta, o.delta), f(self.vega, o.vega))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.value, self.delta, self.vega]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        GreekTriple::new(a[0], a[1], a[2])
    }
}

impl Index<Output> for GreekTriple {
    type Output = f64;
    fn index(&self, o: Output) -> &f64 {
        match o {
            Output::Value => &self.value,
            Output::Delta => &self.delta,
            Output::Vega => &self.vega,
        }
    }
}

impl IndexMut<Output> for GreekTriple {
    fn index_mut(&mut self, o: Output) -> &mut f64 {
        match o {
            Output::Value => &mut self.value,
            Output::Delta => &mut self.delta,
            Output::Vega => &mut self.vega,
        }
    }
}

impl Add for GreekTriple {
    type Output = GreekTriple;
    fn add(self, o: GreekTriple) -> GreekTriple {
        self.zip(o, |a, b| a + b)
    }
}

impl AddAssign for GreekTriple {
    fn add_assign(&mut self, o: GreekTriple) {
        *self = *self + o;
    }
}

impl Sub for GreekTriple {
    type Output = GreekTriple;
    fn sub(self, o: GreekTriple) -> GreekTriple {
        self.zip(o, |a, b| a - b)
    }
}

impl Mul<f64> for GreekTriple {
    type Output = GreekTriple;
    fn mul(self, k: f64) -> GreekTriple {
        self.map(|a| a * k)
    }
}
