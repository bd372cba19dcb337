//! Streaming mean/variance accumulators with a deterministic merge.

use crate::greeks::GreekTriple;

/// Welford running moments; `merge` is Chan's pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 with fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Moments of the three outputs side by side.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TripleMoments([Moments; 3]);

impl TripleMoments {
    #[inline]
    pub fn push(&mut self, x: GreekTriple) {
        for (m, v) in self.0.iter_mut().zip(x.to_array()) {
            m.push(v);
        }
    }

    pub fn merge(&mut self, other: &TripleMoments) {
        for (m, o) in self.0.iter_mut().zip(&other.0) {
            m.merge(o);
        }
    }

    pub fn count(&self) -> u64 {
        self.0[0].count()
    }

    pub fn mean(&self) -> GreekTriple {
        GreekTriple::from_array(self.0.map(|m| m.mean()))
    }

    pub fn variance(&self) -> GreekTriple {
        GreekTriple::from_array(self.0.map(|m| m.variance()))
    }

    pub fn std_error(&self) -> GreekTriple {
        GreekTriple::from_array(self.0.map(|m| m.std_error()))
    }
}
