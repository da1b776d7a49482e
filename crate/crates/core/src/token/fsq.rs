//! Finite scalar quantization.
//!
//! Per dimension with `L` levels, `half = (1 + 1e-3)(L-1)/2` and `offset` is 0
//! for odd `L` and 1/2 for even `L`:
//!
//! ```text
//! bounded(z) = half * tanh(z + shift) + offset,  shift = -atanh(offset / half)
//! code       = round(bounded(z))
//! ```
//!
//! Odd `L` gives codes `-half..=half`; even `L` gives `-L/2+1..=L/2`. In both
//! cases `z = 0` maps to code 0 and there are exactly `L` codes.

use serde::{Deserialize, Serialize};

const HALF_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsqSpec {
    pub dims: usize,
    pub levels: u32,
}

impl Default for FsqSpec {
    fn default() -> Self {
        Self { dims: 8, levels: 8 }
    }
}

/// Quantized token plus the bounded pre-round values it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalToken {
    pub codes: Vec<i32>,
    pub continuous: Vec<f64>,
}

impl UniversalToken {
    pub fn values(&self) -> Vec<f64> {
        self.codes.iter().map(|&c| c as f64).collect()
    }
}

impl FsqSpec {
    pub fn new(dims: usize, levels: u32) -> Result<Self, String> {
        let s = Self { dims, levels };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dims < 1 {
            return Err("fsq needs at least one dimension".into());
        }
        if self.levels < 2 {
            return Err("fsq needs at least two levels".into());
        }
        Ok(())
    }

    /// The small widening keeps `shift` finite for `L = 2`.
    pub fn half(&self) -> f64 {
        (self.levels as f64 - 1.0) / 2.0 * (1.0 + HALF_EPS)
    }

    pub fn offset(&self) -> f64 {
        if self.levels % 2 == 0 {
            0.5
        } else {
            0.0
        }
    }

    fn shift(&self) -> f64 {
        -(self.offset() / self.half()).atanh()
    }

    pub fn min_code(&self) -> i32 {
        (self.offset() - self.half()).round() as i32
    }

    pub fn max_code(&self) -> i32 {
        (self.offset() + self.half()).round() as i32
    }

    /// Number of distinct tokens, `levels^dims` (saturating).
    pub fn codebook_size(&self) -> u64 {
        (self.levels as u64).saturating_pow(self.dims as u32)
    }

    pub fn bound(&self, z: f64) -> f64 {
        self.half() * (z + self.shift()).tanh() + self.offset()
    }

    /// `d bound / d z`.
    pub fn bound_grad(&self, z: f64) -> f64 {
        let t = (z + self.shift()).tanh();
        self.half() * (1.0 - t * t)
    }

    /// Input whose bounded value is `code` pulled toward the offset by a
    /// factor `1 - eps`; `eps = 0` is the exact center of the code.
    pub fn preimage(&self, code: i32, eps: f64) -> f64 {
        ((code as f64 - self.offset()) / self.half() * (1.0 - eps)).atanh() - self.shift()
    }

    /// Distance of a bounded value to the nearest rounding boundary.
    pub fn boundary_distance(&self, bounded: f64) -> f64 {
        (bounded - bounded.floor() - 0.5).abs()
    }

    pub fn quantize(&self, z: &[f64]) -> UniversalToken {
        let continuous: Vec<f64> = z.iter().map(|&x| self.bound(x)).collect();
        let codes = continuous.iter().map(|b| b.round() as i32).collect();
        UniversalToken { codes, continuous }
    }

    /// Mixed-radix index of a token in `0..codebook_size()`.
    pub fn index_of(&self, codes: &[i32]) -> u64 {
        codes
            .iter()
            .fold(0u64, |acc, &c| acc * self.levels as u64 + (c - self.min_code()) as u64)
    }
}

pub fn fsq_quantize(z: &[f64], spec: &FsqSpec) -> UniversalToken {
    spec.quantize(z)
}
