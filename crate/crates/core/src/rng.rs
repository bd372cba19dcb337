//! Keyed, reproducible random streams.
//!
//! Every variate is addressed by `(seed, level, path_index, stream_tag, counter)`.
//! The first three key fields select a ChaCha8 key, `path_index` selects the
//! ChaCha stream and `counter` is the position within it, so any sample can be
//! regenerated in isolation and results do not depend on how work is scheduled.
//! Normals are produced by inverse-CDF transform of the uniforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamTag {
    /// Brownian increments driving the coupled path.
    Path,
    /// Resampled final increments for splitting and Vibrato.
    Split,
    /// Uniforms for bridge minima and crossing tests.
    Bridge,
}

impl StreamTag {
    fn code(self) -> u64 {
        match self {
            StreamTag::Path => 0x5041_5448,
            StreamTag::Split => 0x5350_4c54,
            StreamTag::Bridge => 0x4252_4447,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleKey {
    pub seed: u64,
    pub level: u32,
    pub path_index: u64,
    pub stream_tag: StreamTag,
}

impl SampleKey {
    pub fn new(seed: u64, level: u32, path_index: u64, stream_tag: StreamTag) -> Self {
        SampleKey {
            seed,
            level,
            path_index,
            stream_tag,
        }
    }

    pub fn with_tag(self, stream_tag: StreamTag) -> Self {
        SampleKey { stream_tag, ..self }
    }

    /// Sequential reader positioned at counter 0 of this key's stream.
    pub fn stream(&self) -> Stream {
        let words = [
            splitmix64(self.seed),
            splitmix64(self.seed ^ splitmix64(u64::from(self.level).wrapping_add(0x9e37))),
            splitmix64(self.stream_tag.code() ^ self.seed.rotate_left(17)),
            splitmix64(0x6d6c_6d63_6772_6b73 ^ u64::from(self.level) ^ self.stream_tag.code() << 20),
        ];
        let mut key = [0u8; 32];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.path_index);
        Stream { rng }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// Uniform on the open interval (0, 1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        normal::inv_cdf(self.uniform())
    }

    /// Jump to position `counter` (in variates) within the stream.
    pub fn seek(&mut self, counter: u64) {
        // one u64 is two 32-bit words
        self.rng.set_word_pos(u128::from(counter) * 2);
    }
}

pub fn normal_stream(key: SampleKey, count: usize) -> Vec<f64> {
    let mut s = key.stream();
    (0..count).map(|_| s.normal()).collect()
}

pub fn uniform_stream(key: SampleKey, count: usize) -> Vec<f64> {
    let mut s = key.stream();
    (0..count).map(|_| s.uniform()).collect()
}

/// Brownian increments with variances `step_widths[i]`.
pub fn brownian_increments(key: SampleKey, step_widths: &[f64]) -> Result<Vec<f64>> {
    if let Some(h) = step_widths.iter().find(|h| !(**h > 0.0)) {
        return Err(Error::InvalidInput(format!("step width {h} is not positive")));
    }
    let mut s = key.stream();
    Ok(step_widths.iter().map(|h| h.sqrt() * s.normal()).collect())
}

/// Pairwise sums of fine increments: the coarse path's driving noise.
pub fn coarsen(fine_increments: &[f64]) -> Result<Vec<f64>> {
    if !fine_increments.len().is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "cannot coarsen {} increments (odd length)",
            fine_increments.len()
        )));
    }
    Ok(fine_increments.chunks_exact(2).map(|p| p[0] + p[1]).collect())
}
