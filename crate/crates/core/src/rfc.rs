//! Random Fourier coding, the fixed-feature baseline encoder.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoder::FeatureMatrix;
use crate::error::{Error, Result};
use crate::geometry::CoordinateGrid;
use crate::par;

/// Standard deviation of the sampled frequencies.
pub const FREQUENCY_STD: f64 = 4.0;

/// `T x 2` frequency matrix, sampled once and never modified.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    rows: Vec<[f64; 2]>,
}

impl FrequencyMatrix {
    pub fn sample(t: usize, seed: u64) -> Result<Self> {
        if t == 0 {
            return Err(Error::invalid("frequency matrix needs at least one row"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, FREQUENCY_STD).expect("valid std");
        let rows = (0..t)
            .map(|_| [dist.sample(&mut rng), dist.sample(&mut rng)])
            .collect();
        Ok(FrequencyMatrix { rows })
    }

    pub fn from_rows(rows: Vec<[f64; 2]>) -> Result<Self> {
        if rows.is_empty() || rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid(
                "frequency rows must be non-empty and finite",
            ));
        }
        Ok(FrequencyMatrix { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows
    }

    /// `RFCM` block: magic, `T` as `u32` LE, then `T x 2` `f64` LE row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 16 * self.len());
        out.extend_from_slice(b"RFCM");
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for r in &self.rows {
            out.extend_from_slice(&r[0].to_le_bytes());
            out.extend_from_slice(&r[1].to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 8 || &bytes[..4] != b"RFCM" {
            return Err(Error::format("missing RFCM header"));
        }
        let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let len = 8 + 16 * t;
        if bytes.len() < len {
            return Err(Error::format("truncated RFCM block"));
        }
        let rows = bytes[8..len]
            .chunks_exact(16)
            .map(|b| {
                [
                    f64::from_le_bytes(b[..8].try_into().unwrap()),
                    f64::from_le_bytes(b[8..].try_into().unwrap()),
                ]
            })
            .collect();
        Ok((
            FrequencyMatrix::from_rows(rows).map_err(|e| Error::format(e.to_string()))?,
            len,
        ))
    }
}

/// Row `p` is `[sin(2π Ω c_p) ; cos(2π Ω c_p)]`, `2T` columns in total.
pub fn rfc_encode(grid: &CoordinateGrid, freq: &FrequencyMatrix) -> FeatureMatrix {
    rfc_encode_coords(grid.coords(), freq)
}

/// [`rfc_encode`] for an arbitrary list of coordinates.
pub fn rfc_encode_coords(coords: &[[f64; 2]], freq: &FrequencyMatrix) -> FeatureMatrix {
    let t = freq.len();
    let mut out = vec![0.0; coords.len() * 2 * t];
    par::for_each_chunk_mut(&mut out, 2 * t, |p, row| {
        let c = coords[p];
        let (sin_half, cos_half) = row.split_at_mut(t);
        for ((s, co), w) in sin_half.iter_mut().zip(cos_half).zip(freq.rows()) {
            let arg = TAU * (w[0] * c[0] + w[1] * c[1]);
            (*s, *co) = arg.sin_cos();
        }
    });
    Array2::from_shape_vec((coords.len(), 2 * t), out).expect("shape matches buffer")
}
