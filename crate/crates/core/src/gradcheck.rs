//! Finite-difference verification of the analytic gradient chain and the
//! projector adjoint.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{make_grid, render_phantom, Image, PhantomPreset};
use crate::projector::{Projector, ScanGeometry, Sinogram};
use crate::trainer::{compute_loss, compute_loss_and_grads, init_model, Model, TrainConfig};

/// Names of the checked groups, in report order.
pub const CHECKED_GROUPS: [&str; 9] = [
    "u",
    "v",
    "h",
    "w",
    "k",
    "theta",
    "lambda",
    "net_weights",
    "net_biases",
];

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckConfig {
    pub height: usize,
    pub width: usize,
    pub views: usize,
    pub bins: usize,
    pub hidden_layers: Vec<usize>,
    pub steepness_set: Vec<f64>,
    pub step: f64,
    pub tolerance: f64,
    pub adjoint_tolerance: f64,
    /// `(height, width, views, detectors)` of the adjoint test geometry.
    pub adjoint_shape: (usize, usize, usize, usize),
    pub seed: u64,
    /// Test hook: scales the analytic gradient of this group by 1.01.
    pub perturb: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            height: 8,
            width: 8,
            views: 4,
            bins: 4,
            hidden_layers: vec![8, 8, 8],
            steepness_set: vec![3.0, 6.0],
            step: 1e-6,
            tolerance: 1e-4,
            adjoint_tolerance: 1e-10,
            adjoint_shape: (64, 64, 16, 96),
            seed: 7,
            perturb: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub group: String,
    pub parameters: usize,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub adjoint_relative_error: f64,
    pub adjoint_passed: bool,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.adjoint_passed && self.groups.iter().all(|g| g.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.group.as_str())
            .collect();
        if !self.adjoint_passed {
            out.push("adjoint");
        }
        out
    }
}

/// `|⟨Ax, y⟩ − ⟨x, Aᵀy⟩| / (‖Ax‖ ‖y‖)` for seeded uniform random `x` and `y`.
pub fn adjoint_relative_error(geom: &ScanGeometry, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = geom.image_shape();
    let x = Image::new(
        h,
        w,
        (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let n = geom.views() * geom.detector_count();
    let y = Sinogram::new(
        geom.views(),
        geom.detector_count(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let proj = Projector::new(geom);
    let ax = proj.forward(&x)?;
    let aty = proj.back(&y)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let lhs = dot(ax.values(), y.values());
    let rhs = dot(x.values(), aty.values());
    let norm = dot(ax.values(), ax.values()).sqrt() * dot(y.values(), y.values()).sqrt();
    Ok((lhs - rhs).abs() / norm)
}

fn param_mut(model: &mut Model, group: usize, index: usize) -> &mut f64 {
    if group < 7 {
        let bins = model.bins_mut().expect("gradcheck uses adaptive bins");
        return &mut bins.groups_mut()[group][index];
    }
    let mut index = index;
    for layer in model.net.layers_mut() {
        let arr = if group == 7 {
            layer.weight.as_slice_mut().unwrap()
        } else {
            layer.bias.as_slice_mut().unwrap()
        };
        if index < arr.len() {
            return &mut arr[index];
        }
        index -= arr.len();
    }
    panic!("parameter index out of range");
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Builds a small random problem and compares analytic and central-difference
/// gradients for all seven bin groups, the network weights and biases.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if let Some(p) = &cfg.perturb {
        if !CHECKED_GROUPS.contains(&p.as_str()) {
            return Err(Error::invalid(format!("unknown gradient group `{p}`")));
        }
    }
    let grid = make_grid(cfg.height, cfg.width)?;
    let geom = ScanGeometry::parallel(cfg.views, cfg.height, cfg.width)?;
    let projector = Projector::new(&geom);
    let truth = render_phantom(&PhantomPreset::HollowSquare.spec(0.3), &grid)?;
    let sino = projector.forward(&truth)?;

    let train_cfg = TrainConfig {
        bins: cfg.bins,
        hidden_layers: cfg.hidden_layers.clone(),
        steepness_set: cfg.steepness_set.clone(),
        ..TrainConfig::default()
    };
    let mut model = init_model(&train_cfg, cfg.seed)?;
    // zero biases put dead-input rows exactly on the ReLU kink
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb1a5);
    for layer in model.net.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let (_, grads) = compute_loss_and_grads(&model, &grid, &projector, &sino)?;
    let bin_grads = grads
        .bins
        .as_ref()
        .expect("adaptive bins produce gradients");

    let analytic: Vec<Vec<f64>> = bin_grads
        .groups()
        .iter()
        .map(|g| g.to_vec())
        .chain([
            grads.net.weights().copied().collect(),
            grads.net.biases().copied().collect(),
        ])
        .collect();

    let mut groups = Vec::with_capacity(CHECKED_GROUPS.len());
    for (gi, name) in CHECKED_GROUPS.iter().enumerate() {
        let mut exact = analytic[gi].clone();
        if cfg.perturb.as_deref() == Some(*name) {
            exact.iter_mut().for_each(|x| *x *= 1.01);
        }
        let mut numeric = Vec::with_capacity(exact.len());
        for i in 0..exact.len() {
            let mut plus = model.clone();
            *param_mut(&mut plus, gi, i) += cfg.step;
            let mut minus = model.clone();
            *param_mut(&mut minus, gi, i) -= cfg.step;
            let lp = compute_loss(&plus, &grid, &projector, &sino)?;
            let lm = compute_loss(&minus, &grid, &projector, &sino)?;
            numeric.push((lp - lm) / (2.0 * cfg.step));
        }
        let err = relative_error(&exact, &numeric);
        groups.push(GroupCheck {
            group: name.to_string(),
            parameters: exact.len(),
            relative_error: err,
            passed: err < cfg.tolerance,
        });
    }

    let (ah, aw, au, av) = cfg.adjoint_shape;
    let adjoint_geom = ScanGeometry::with_detectors(au, av, ah, aw)?;
    let adjoint = adjoint_relative_error(&adjoint_geom, cfg.seed)?;
    Ok(GradcheckReport {
        groups,
        adjoint_relative_error: adjoint,
        adjoint_passed: adjoint < cfg.adjoint_tolerance,
    })
}
