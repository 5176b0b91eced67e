//! Parallel-beam forward operator, its exact transpose, and SIRT.
//!
//! The operator is a Joseph-style ray-driven discretisation: each ray steps
//! along whichever image axis it crosses fastest, samples the image by linear
//! interpolation across the other axis, and scales by the step length. The
//! interpolation weights are stored once as a sparse matrix together with its
//! transpose, so back-projection gathers exactly the weights the forward pass
//! used and both directions reduce in a fixed order.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{decode_raster, encode_raster, read_raster, write_raster, Image};
use crate::par;

pub const SINOGRAM_MAGIC: [u8; 4] = *b"SINO";

/// Parallel-beam acquisition over the `[-1, 1]²` object domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGeometry {
    angles: Vec<f64>,
    detector_count: usize,
    detector_spacing: f64,
    image_height: usize,
    image_width: usize,
}

impl ScanGeometry {
    pub fn new(
        angles: Vec<f64>,
        detector_count: usize,
        detector_spacing: f64,
        image_height: usize,
        image_width: usize,
    ) -> Result<Self> {
        let geom = ScanGeometry {
            angles,
            detector_count,
            detector_spacing,
            image_height,
            image_width,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// `views` angles uniform on `[0, π)` and the default detector: pixel-sized
    /// bins, an even count wide enough to cover the domain diagonal.
    pub fn parallel(views: usize, image_height: usize, image_width: usize) -> Result<Self> {
        let n = image_height.max(image_width);
        let spacing = 2.0 / n as f64;
        let mut count = (2.0 * std::f64::consts::SQRT_2 / spacing).ceil() as usize;
        count += count % 2;
        Self::with_detectors(views, count, image_height, image_width)
    }

    /// Uniform angles with an explicit detector count and pixel-sized spacing.
    pub fn with_detectors(
        views: usize,
        detector_count: usize,
        image_height: usize,
        image_width: usize,
    ) -> Result<Self> {
        if views == 0 {
            return Err(Error::invalid("at least one projection view is required"));
        }
        let spacing = 2.0 / image_height.max(image_width).max(1) as f64;
        Self::new(
            uniform_angles(views),
            detector_count,
            spacing,
            image_height,
            image_width,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::invalid("geometry needs at least one angle"));
        }
        if self.detector_count == 0 {
            return Err(Error::invalid("geometry needs at least one detector"));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::invalid("geometry image dimensions must be positive"));
        }
        if !(self.detector_spacing.is_finite() && self.detector_spacing > 0.0) {
            return Err(Error::invalid(format!(
                "detector spacing must be positive, got {}",
                self.detector_spacing
            )));
        }
        if self.angles.iter().any(|a| !(0.0..PI).contains(a)) {
            return Err(Error::invalid("angles must lie in [0, pi)"));
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("angles must be strictly increasing"));
        }
        Ok(())
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn views(&self) -> usize {
        self.angles.len()
    }

    pub fn detector_count(&self) -> usize {
        self.detector_count
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.image_height, self.image_width)
    }

    /// Signed offset of detector `j` from the rotation axis.
    pub fn detector_offset(&self, j: usize) -> f64 {
        (j as f64 - (self.detector_count as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("geometry serialisation: {e}")))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let geom: ScanGeometry = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("geometry sidecar: {e}")))?;
        geom.validate()?;
        Ok(geom)
    }
}

pub fn uniform_angles(views: usize) -> Vec<f64> {
    (0..views).map(|u| u as f64 * PI / views as f64).collect()
}

/// Projection data, one row per view and one column per detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    views: usize,
    detectors: usize,
    values: Vec<f64>,
}

impl Sinogram {
    pub fn new(views: usize, detectors: usize, values: Vec<f64>) -> Result<Self> {
        if views == 0 || detectors == 0 || values.len() != views * detectors {
            return Err(Error::invalid(format!(
                "sinogram {views}x{detectors} cannot hold {} values",
                values.len()
            )));
        }
        Ok(Sinogram {
            views,
            detectors,
            values,
        })
    }

    pub fn zeros(geom: &ScanGeometry) -> Self {
        Sinogram {
            views: geom.views(),
            detectors: geom.detector_count(),
            values: vec![0.0; geom.views() * geom.detector_count()],
        }
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn detectors(&self) -> usize {
        self.detectors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, view: usize, detector: usize) -> f64 {
        self.values[view * self.detectors + detector]
    }

    pub fn matches(&self, geom: &ScanGeometry) -> bool {
        self.views == geom.views() && self.detectors == geom.detector_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_raster(SINOGRAM_MAGIC, self.views, self.detectors, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (u, v, values) = decode_raster(bytes, SINOGRAM_MAGIC)?;
        Sinogram::new(u, v, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_raster(
            path.as_ref(),
            SINOGRAM_MAGIC,
            self.views,
            self.detectors,
            &self.values,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (u, v, values) = read_raster(path.as_ref(), SINOGRAM_MAGIC)?;
        Sinogram::new(u, v, values)
    }
}

/// Compressed-row sparse matrix with `f64` weights.
#[derive(Debug, Clone)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl Csr {
    fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.weights[span])
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        par::map_range(self.rows(), |r| {
            let (cols, ws) = self.row(r);
            cols.iter()
                .zip(ws)
                .fold(0.0, |acc, (&c, &w)| acc + w * x[c as usize])
        })
    }

    /// Transpose with entries of each output row kept in increasing source-row order.
    fn transpose(&self, ncols: usize) -> Csr {
        let mut counts = vec![0usize; ncols + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..ncols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut cols = vec![0u32; self.cols.len()];
        let mut weights = vec![0.0; self.weights.len()];
        for r in 0..self.rows() {
            let (cs, ws) = self.row(r);
            for (&c, &w) in cs.iter().zip(ws) {
                let slot = next[c as usize];
                cols[slot] = r as u32;
                weights[slot] = w;
                next[c as usize] += 1;
            }
        }
        Csr {
            row_ptr,
            cols,
            weights,
        }
    }

    fn row_sums(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }
}

/// Precomputed system matrix for one geometry; reuse it across many projections.
#[derive(Debug, Clone)]
pub struct Projector {
    geom: ScanGeometry,
    forward: Csr,
    adjoint: Csr,
}

impl Projector {
    pub fn new(geom: &ScanGeometry) -> Self {
        let forward = build_system_matrix(geom);
        let (h, w) = geom.image_shape();
        let adjoint = forward.transpose(h * w);
        Projector {
            geom: geom.clone(),
            forward,
            adjoint,
        }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geom
    }

    /// Number of stored interpolation weights.
    pub fn nnz(&self) -> usize {
        self.forward.weights.len()
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        if image.shape() != self.geom.image_shape() {
            return Err(Error::invalid(format!(
                "image {:?} does not match geometry image shape {:?}",
                image.shape(),
                self.geom.image_shape()
            )));
        }
        Ok(())
    }

    fn check_sinogram(&self, sino: &Sinogram) -> Result<()> {
        if !sino.matches(&self.geom) {
            return Err(Error::invalid(format!(
                "sinogram {}x{} does not match geometry {}x{}",
                sino.views(),
                sino.detectors(),
                self.geom.views(),
                self.geom.detector_count()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Image) -> Result<Sinogram> {
        self.check_image(image)?;
        Ok(Sinogram {
            views: self.geom.views(),
            detectors: self.geom.detector_count(),
            values: self.forward.apply(image.values()),
        })
    }

    pub fn back(&self, sino: &Sinogram) -> Result<Image> {
        self.check_sinogram(sino)?;
        let (h, w) = self.geom.image_shape();
        Image::new(h, w, self.adjoint.apply(sino.values()))
    }

    /// Raw-slice forward projection; `x.len()` must equal `H * W`.
    pub(crate) fn forward_slice(&self, x: &[f64]) -> Vec<f64> {
        self.forward.apply(x)
    }

    /// Raw-slice back-projection; `y.len()` must equal `U * V`.
    pub(crate) fn back_slice(&self, y: &[f64]) -> Vec<f64> {
        self.adjoint.apply(y)
    }

    /// Indices of pixels touched by ray `(view, detector)`.
    pub fn ray_support(&self, view: usize, detector: usize) -> Vec<usize> {
        let r = view * self.geom.detector_count() + detector;
        self.forward.row(r).0.iter().map(|&c| c as usize).collect()
    }
}

fn build_system_matrix(geom: &ScanGeometry) -> Csr {
    let (h, w) = geom.image_shape();
    let dx = 2.0 / w as f64;
    let dy = 2.0 / h as f64;
    let v = geom.detector_count();

    let rays: Vec<Vec<(u32, f64)>> = par::map_range(geom.views() * v, |ray| {
        let phi = geom.angles()[ray / v];
        let t = geom.detector_offset(ray % v);
        let (s, c) = phi.sin_cos();
        let mut entries = Vec::new();
        // The ray is {x cos φ + y sin φ = t}, direction (-sin φ, cos φ).
        if c.abs() / dy >= s.abs() / dx {
            let step = dy / c.abs();
            for row in 0..h {
                let y = crate::geometry::grid_center(row, h);
                let x = (t - y * s) / c;
                let f = (x + 1.0) / dx - 0.5;
                push_interp(&mut entries, f, w, step, |col| row * w + col);
            }
        } else {
            let step = dx / s.abs();
            for col in 0..w {
                let x = crate::geometry::grid_center(col, w);
                let y = (t - x * c) / s;
                let f = (y + 1.0) / dy - 0.5;
                push_interp(&mut entries, f, h, step, |row| row * w + col);
            }
        }
        entries
    });

    let mut row_ptr = Vec::with_capacity(rays.len() + 1);
    row_ptr.push(0);
    let nnz = rays.iter().map(Vec::len).sum();
    let mut cols = Vec::with_capacity(nnz);
    let mut weights = Vec::with_capacity(nnz);
    for ray in rays {
        for (c, wgt) in ray {
            cols.push(c);
            weights.push(wgt);
        }
        row_ptr.push(cols.len());
    }
    Csr {
        row_ptr,
        cols,
        weights,
    }
}

/// Linear interpolation at continuous index `f` over `0..n` with zero padding.
#[inline]
fn push_interp(
    entries: &mut Vec<(u32, f64)>,
    f: f64,
    n: usize,
    step: f64,
    pixel: impl Fn(usize) -> usize,
) {
    if !(f > -1.0 && f < n as f64) {
        return;
    }
    let i0 = f.floor();
    let frac = f - i0;
    let i0 = i0 as isize;
    if i0 >= 0 && (1.0 - frac) > 0.0 {
        entries.push((pixel(i0 as usize) as u32, (1.0 - frac) * step));
    }
    let i1 = i0 + 1;
    if (i1 as usize) < n && i1 >= 0 && frac > 0.0 {
        entries.push((pixel(i1 as usize) as u32, frac * step));
    }
}

pub fn forward_project(image: &Image, geom: &ScanGeometry) -> Result<Sinogram> {
    Projector::new(geom).forward(image)
}

pub fn back_project(sino: &Sinogram, geom: &ScanGeometry) -> Result<Image> {
    Projector::new(geom).back(sino)
}

/// SIRT output with the residual `‖A x - y‖₂` before the first and after every iteration.
#[derive(Debug, Clone)]
pub struct SirtResult {
    pub image: Image,
    pub residuals: Vec<f64>,
}

pub fn sirt_reconstruct(sino: &Sinogram, geom: &ScanGeometry, iterations: usize) -> Result<Image> {
    Ok(sirt_with_history(sino, geom, iterations)?.image)
}

/// `x ← max(0, x + C Aᵀ R (y − A x))` with inverse row/column sums as `R`, `C`.
pub fn sirt_with_history(
    sino: &Sinogram,
    geom: &ScanGeometry,
    iterations: usize,
) -> Result<SirtResult> {
    if iterations == 0 {
        return Err(Error::invalid("SIRT needs at least one iteration"));
    }
    let proj = Projector::new(geom);
    proj.check_sinogram(sino)?;
    let inv = |s: f64| if s > 0.0 { 1.0 / s } else { 0.0 };
    let row_w: Vec<f64> = proj.forward.row_sums().into_iter().map(inv).collect();
    let col_w: Vec<f64> = proj.adjoint.row_sums().into_iter().map(inv).collect();
    let y = sino.values();

    let (h, w) = geom.image_shape();
    let mut x = vec![0.0; h * w];
    let mut residuals = Vec::with_capacity(iterations + 1);
    let mut ax = proj.forward_slice(&x);
    for _ in 0..iterations {
        let weighted: Vec<f64> = ax
            .iter()
            .zip(y)
            .zip(&row_w)
            .map(|((a, b), r)| r * (b - a))
            .collect();
        residuals.push(l2_distance(&ax, y));
        let update = proj.back_slice(&weighted);
        for ((xi, u), c) in x.iter_mut().zip(&update).zip(&col_w) {
            *xi = (*xi + c * u).max(0.0);
        }
        ax = proj.forward_slice(&x);
    }
    residuals.push(l2_distance(&ax, y));
    Ok(SirtResult {
        image: Image::new(h, w, x)?,
        residuals,
    })
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_grid, render_phantom, PhantomPreset};

    #[test]
    fn default_detector_covers_diagonal() {
        let g = ScanGeometry::parallel(16, 64, 64).unwrap();
        assert_eq!(g.detector_count() % 2, 0);
        assert!(g.detector_count() as f64 * g.detector_spacing() >= 2.0 * 2f64.sqrt());
        assert_eq!(g.detector_count(), 92);
        assert_eq!(g.angles()[0], 0.0);
        assert!(g.angles().iter().all(|&a| a < PI));
    }

    #[test]
    fn invalid_geometries_rejected() {
        assert!(ScanGeometry::parallel(0, 8, 8).is_err());
        assert!(ScanGeometry::new(vec![0.5, 0.2], 4, 0.1, 8, 8).is_err());
        assert!(ScanGeometry::new(vec![PI], 4, 0.1, 8, 8).is_err());
        assert!(ScanGeometry::new(vec![0.0], 0, 0.1, 8, 8).is_err());
        assert!(ScanGeometry::new(vec![0.0], 4, -0.1, 8, 8).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let g = ScanGeometry::parallel(5, 12, 12).unwrap();
        let s = forward_project(&Image::zeros(12, 12), &g).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        let b = back_project(&Sinogram::zeros(&g), &g).unwrap();
        assert!(b.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = ScanGeometry::parallel(5, 12, 12).unwrap();
        assert!(matches!(
            forward_project(&Image::zeros(12, 13), &g),
            Err(Error::InvalidArgument(_))
        ));
        let bad = Sinogram::new(4, g.detector_count(), vec![0.0; 4 * g.detector_count()]).unwrap();
        assert!(matches!(
            back_project(&bad, &g),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_ray_backprojection_is_confined_to_the_ray() {
        let g = ScanGeometry::parallel(4, 16, 16).unwrap();
        let proj = Projector::new(&g);
        let mut sino = Sinogram::zeros(&g);
        let (view, det) = (1, 10);
        sino.values_mut()[view * g.detector_count() + det] = 1.0;
        let img = proj.back(&sino).unwrap();
        let support = proj.ray_support(view, det);
        assert!(!support.is_empty());
        for (i, &v) in img.values().iter().enumerate() {
            if !support.contains(&i) {
                assert_eq!(v, 0.0);
            } else {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn horizontal_and_vertical_rays_integrate_constant_image() {
        // A constant image of 1 has chord length 2 through the domain at angle 0 and π/2.
        let g = ScanGeometry::new(vec![0.0, PI / 2.0], 4, 0.25, 16, 16).unwrap();
        let s = forward_project(&Image::new(16, 16, vec![1.0; 256]).unwrap(), &g).unwrap();
        for v in s.values() {
            assert!((v - 2.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn mirror_symmetry_for_symmetric_phantom() {
        let grid = make_grid(32, 32).unwrap();
        let img = render_phantom(&PhantomPreset::HollowSquare.spec(0.0), &grid).unwrap();
        let eps = 0.13;
        let g = ScanGeometry::new(vec![eps, PI - eps], 48, 1.0 / 16.0, 32, 32).unwrap();
        let s = forward_project(&img, &g).unwrap();
        for j in 0..48 {
            assert!((s.get(0, j) - s.get(1, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn sirt_zero_data_gives_zero_image() {
        let g = ScanGeometry::parallel(6, 16, 16).unwrap();
        let img = sirt_reconstruct(&Sinogram::zeros(&g), &g, 5).unwrap();
        assert!(img.values().iter().all(|&v| v == 0.0));
        assert!(sirt_reconstruct(&Sinogram::zeros(&g), &g, 0).is_err());
    }

    #[test]
    fn sinogram_bytes_round_trip() {
        let s = Sinogram::new(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, 7.0]).unwrap();
        assert_eq!(Sinogram::from_bytes(&s.to_bytes()).unwrap(), s);
        assert!(Sinogram::from_bytes(&encode_raster(*b"F64R", 1, 1, &[0.0])).is_err());
    }
}
