//! Adaptive binning encoder.
//!
//! Each bin is a smooth, rotatable rectangle: the product of two differences
//! of shifted `tanh` steps, one along each rotated axis,
//!
//! ```text
//! s = R(θ) (c - p),   γ = ½ tanh(k (s₁ + h/2)) - ½ tanh(k (s₁ - h/2))
//!                     μ = ½ tanh(k (s₂ + w/2)) - ½ tanh(k (s₂ - w/2))
//! ĝ(c) = γ μ,         feature = λ ĝ(c)
//! ```
//!
//! with `p = (u, v)` the bin center. All seven parameter groups are
//! trainable and [`encode_backward`] returns their closed-form gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::CoordinateGrid;
use crate::par;

/// Smallest side length kept after each optimizer step.
pub const MIN_SIDE: f64 = 1e-3;
/// Smallest steepness kept after each optimizer step.
pub const MIN_STEEPNESS: f64 = 1.0;
/// Standard deviation of the initial rotation angles.
pub const THETA_INIT_STD: f64 = 0.05;

/// Row `p`, column `i` holds feature `i` of coordinate `p`.
pub type FeatureMatrix = Array2<f64>;

/// Parameters of a single bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub u: f64,
    pub v: f64,
    pub h: f64,
    pub w: f64,
    pub k: f64,
    pub theta: f64,
    pub lambda: f64,
}

impl Bin {
    fn is_finite(&self) -> bool {
        [
            self.u,
            self.v,
            self.h,
            self.w,
            self.k,
            self.theta,
            self.lambda,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Trainable encoder state, one entry per bin in each group.
#[derive(Debug, Clone, PartialEq)]
pub struct BinParameterSet {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub h: Vec<f64>,
    pub w: Vec<f64>,
    pub k: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Names of the seven bin parameter groups, in serialisation order.
pub const BIN_GROUP_NAMES: [&str; 7] = ["u", "v", "h", "w", "k", "theta", "lambda"];

impl BinParameterSet {
    pub fn from_bins(bins: &[Bin]) -> Self {
        BinParameterSet {
            u: bins.iter().map(|b| b.u).collect(),
            v: bins.iter().map(|b| b.v).collect(),
            h: bins.iter().map(|b| b.h).collect(),
            w: bins.iter().map(|b| b.w).collect(),
            k: bins.iter().map(|b| b.k).collect(),
            theta: bins.iter().map(|b| b.theta).collect(),
            lambda: bins.iter().map(|b| b.lambda).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn bin(&self, i: usize) -> Bin {
        Bin {
            u: self.u[i],
            v: self.v[i],
            h: self.h[i],
            w: self.w[i],
            k: self.k[i],
            theta: self.theta[i],
            lambda: self.lambda[i],
        }
    }

    pub fn groups(&self) -> [&Vec<f64>; 7] {
        [
            &self.u,
            &self.v,
            &self.h,
            &self.w,
            &self.k,
            &self.theta,
            &self.lambda,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.u,
            &mut self.v,
            &mut self.h,
            &mut self.w,
            &mut self.k,
            &mut self.theta,
            &mut self.lambda,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if m == 0 {
            return Err(Error::invalid("bin parameter set is empty"));
        }
        if self.groups().iter().any(|g| g.len() != m) {
            return Err(Error::invalid("bin parameter groups differ in length"));
        }
        for (name, g) in BIN_GROUP_NAMES.iter().zip(self.groups()) {
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("non-finite {name}[{i}]")));
            }
        }
        Ok(())
    }

    /// Clamps side lengths and steepness back into their admissible ranges.
    pub fn project_constraints(&mut self) {
        for x in self.h.iter_mut().chain(self.w.iter_mut()) {
            *x = x.max(MIN_SIDE);
        }
        for k in &mut self.k {
            *k = k.max(MIN_STEEPNESS);
        }
    }

    /// `NABP` block: magic, `M` as `u32` LE, then the seven groups as `f64` LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 7 * 8 * self.len());
        out.extend_from_slice(b"NABP");
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for g in self.groups() {
            for x in g {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parses a `NABP` block, returning the set and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 8 || &bytes[..4] != b"NABP" {
            return Err(Error::format("missing NABP header"));
        }
        let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let len = 8 + 7 * 8 * m;
        if bytes.len() < len {
            return Err(Error::format("truncated NABP block"));
        }
        let mut groups = bytes[8..len]
            .chunks_exact(8 * m.max(1))
            .take(7)
            .map(|chunk| {
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect::<Vec<_>>()
            });
        let mut next = || groups.next().unwrap_or_default();
        let set = BinParameterSet {
            u: next(),
            v: next(),
            h: next(),
            w: next(),
            k: next(),
            theta: next(),
            lambda: next(),
        };
        set.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok((set, len))
    }
}

// tanh(x) rounds to exactly ±1 in f64 once |x| > 19.1
#[inline]
fn tanh_sat(x: f64) -> f64 {
    if x > 22.0 {
        1.0
    } else if x < -22.0 {
        -1.0
    } else {
        x.tanh()
    }
}

/// Per-bin constants hoisted out of the coordinate loop.
#[derive(Debug, Clone, Copy)]
struct BinKernel {
    u: f64,
    v: f64,
    cos: f64,
    sin: f64,
    k: f64,
    half_h: f64,
    half_w: f64,
}

impl BinKernel {
    fn new(b: &Bin) -> Self {
        let (sin, cos) = b.theta.sin_cos();
        BinKernel {
            u: b.u,
            v: b.v,
            cos,
            sin,
            k: b.k,
            half_h: 0.5 * b.h,
            half_w: 0.5 * b.w,
        }
    }

    /// Offsets `R(θ)(c - p)` along the bin's own axes.
    #[inline]
    fn rotated(&self, c: [f64; 2]) -> (f64, f64) {
        let dx = c[0] - self.u;
        let dy = c[1] - self.v;
        (self.cos * dx - self.sin * dy, self.sin * dx + self.cos * dy)
    }

    #[inline]
    fn steps(&self, s: f64, half: f64) -> (f64, f64) {
        (tanh_sat(self.k * (s + half)), tanh_sat(self.k * (s - half)))
    }

    #[inline]
    fn value(&self, c: [f64; 2]) -> f64 {
        let (s1, s2) = self.rotated(c);
        let (ap, am) = self.steps(s1, self.half_h);
        if ap == am {
            return 0.0;
        }
        let (bp, bm) = self.steps(s2, self.half_w);
        (0.5 * ap - 0.5 * am) * (0.5 * bp - 0.5 * bm)
    }
}

/// Unscaled bin response `ĝ(c)` (the height factor is not applied).
pub fn eval_bin(c: [f64; 2], bin: &Bin) -> Result<f64> {
    if !(bin.is_finite() && c[0].is_finite() && c[1].is_finite()) {
        return Err(Error::invalid("non-finite coordinate or bin parameter"));
    }
    Ok(BinKernel::new(bin).value(c))
}

pub fn encode(grid: &CoordinateGrid, params: &BinParameterSet) -> Result<FeatureMatrix> {
    params.validate()?;
    let m = params.len();
    let kernels: Vec<BinKernel> = (0..m).map(|i| BinKernel::new(&params.bin(i))).collect();
    let coords = grid.coords();
    let mut out = vec![0.0; coords.len() * m];
    par::for_each_chunk_mut(&mut out, m, |p, row| {
        let c = coords[p];
        for ((f, kern), lambda) in row.iter_mut().zip(&kernels).zip(&params.lambda) {
            *f = lambda * kern.value(c);
        }
    });
    Ok(Array2::from_shape_vec((coords.len(), m), out).expect("shape matches buffer"))
}

/// Gradients of a scalar loss with respect to each bin parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGradients {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub h: Vec<f64>,
    pub w: Vec<f64>,
    pub k: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl BinGradients {
    pub fn zeros(m: usize) -> Self {
        BinGradients {
            u: vec![0.0; m],
            v: vec![0.0; m],
            h: vec![0.0; m],
            w: vec![0.0; m],
            k: vec![0.0; m],
            theta: vec![0.0; m],
            lambda: vec![0.0; m],
        }
    }

    pub fn groups(&self) -> [&Vec<f64>; 7] {
        [
            &self.u,
            &self.v,
            &self.h,
            &self.w,
            &self.k,
            &self.theta,
            &self.lambda,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.u,
            &mut self.v,
            &mut self.h,
            &mut self.w,
            &mut self.k,
            &mut self.theta,
            &mut self.lambda,
        ]
    }
}

/// Back-propagates `upstream = ∂L/∂features` to the bin parameters.
///
/// Each bin's gradient is summed over coordinates in grid order, so the
/// result does not depend on how bins are spread over threads.
pub fn encode_backward(
    grid: &CoordinateGrid,
    params: &BinParameterSet,
    upstream: &FeatureMatrix,
) -> Result<BinGradients> {
    params.validate()?;
    let m = params.len();
    let coords = grid.coords();
    if upstream.dim() != (coords.len(), m) {
        return Err(Error::invalid(format!(
            "upstream shape {:?} does not match ({}, {m})",
            upstream.dim(),
            coords.len()
        )));
    }

    let per_bin: Vec<[f64; 7]> = par::map_range(m, |i| {
        let kern = BinKernel::new(&params.bin(i));
        let lambda = params.lambda[i];
        let k = kern.k;
        let mut acc = [0.0; 7];
        for (p, &c) in coords.iter().enumerate() {
            let up = upstream[[p, i]];
            if up == 0.0 {
                continue;
            }
            let (s1, s2) = kern.rotated(c);
            let (ap, am) = kern.steps(s1, kern.half_h);
            if ap == am {
                // γ and all its partials vanish
                continue;
            }
            let (bp, bm) = kern.steps(s2, kern.half_w);
            if bp == bm {
                continue;
            }
            let gamma = 0.5 * ap - 0.5 * am;
            let mu = 0.5 * bp - 0.5 * bm;
            let g = gamma * mu;

            let dg = up * lambda;
            let d_gamma = dg * mu;
            let d_mu = dg * gamma;

            let (ep, em) = (1.0 - ap * ap, 1.0 - am * am);
            let (fp, fm) = (1.0 - bp * bp, 1.0 - bm * bm);

            let ds1 = d_gamma * 0.5 * k * (ep - em);
            let ds2 = d_mu * 0.5 * k * (fp - fm);

            acc[0] += -kern.cos * ds1 - kern.sin * ds2;
            acc[1] += kern.sin * ds1 - kern.cos * ds2;
            acc[2] += d_gamma * 0.25 * k * (ep + em);
            acc[3] += d_mu * 0.25 * k * (fp + fm);
            acc[4] += d_gamma * 0.5 * (ep * (s1 + kern.half_h) - em * (s1 - kern.half_h))
                + d_mu * 0.5 * (fp * (s2 + kern.half_w) - fm * (s2 - kern.half_w));
            acc[5] += -s2 * ds1 + s1 * ds2;
            acc[6] += up * g;
        }
        acc
    });

    let mut grads = BinGradients::zeros(m);
    for (i, acc) in per_bin.iter().enumerate() {
        for (g, &a) in grads.groups_mut().into_iter().zip(acc) {
            g[i] = a;
        }
    }
    Ok(grads)
}

/// ℓ1 distance from `feature_row` to the nearest vector in `{0, 1}^M`.
pub fn binary_distance(feature_row: &[f64]) -> f64 {
    feature_row
        .iter()
        .map(|&f| f.abs().min((f - 1.0).abs()))
        .sum()
}

/// Random initial bins.
///
/// Centers are uniform over `[-0.9, 0.9]²`, side lengths uniform over
/// `[0.05, 0.5]`, `θ ~ N(0, 0.05²)`, `λ ~ U(0, 1)`, and steepness cycles
/// through `steepness_set` (`k_i = S[i mod L]`).
pub fn init_bins(m: usize, steepness_set: &[f64], seed: u64) -> Result<BinParameterSet> {
    if m == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    if steepness_set.is_empty() {
        return Err(Error::invalid("steepness set must not be empty"));
    }
    if steepness_set
        .iter()
        .any(|k| !(k.is_finite() && *k >= MIN_STEEPNESS))
    {
        return Err(Error::invalid(format!(
            "steepness values must be finite and >= {MIN_STEEPNESS}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_dist = Normal::new(0.0, THETA_INIT_STD).expect("valid std");
    let bins: Vec<Bin> = (0..m)
        .map(|i| Bin {
            u: rng.random_range(-0.9..=0.9),
            v: rng.random_range(-0.9..=0.9),
            h: rng.random_range(0.05..=0.5),
            w: rng.random_range(0.05..=0.5),
            theta: theta_dist.sample(&mut rng),
            lambda: rng.random_range(0.0..1.0),
            k: steepness_set[i % steepness_set.len()],
        })
        .collect();
    Ok(BinParameterSet::from_bins(&bins))
}
