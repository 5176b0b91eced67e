use std::collections::BTreeMap;
use std::collections::BTreeSet;

use super::config::{LearningRates, ParamGroup};
use super::loss::{Gradients, Model};
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub groups: BTreeMap<ParamGroup, Moments>,
}

impl OptimizerState {
    /// Zero moments for every group the model has.
    pub fn new(model: &Model) -> Self {
        let groups = ParamGroup::ALL
            .into_iter()
            .filter_map(|g| group_len(model, g).map(|n| (g, Moments::zeros(n))))
            .collect();
        OptimizerState { step: 0, groups }
    }

    /// `ADAM` block: magic, step `u64`, group count `u32`, then per group
    /// an id byte, length `u32`, and the `m` and `v` arrays as `f64` LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"ADAM");
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for (g, mom) in &self.groups {
            out.push(g.id());
            out.extend_from_slice(&(mom.m.len() as u32).to_le_bytes());
            for x in mom.m.iter().chain(&mom.v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let get = |range: std::ops::Range<usize>| {
            bytes
                .get(range)
                .ok_or_else(|| Error::format("truncated ADAM block"))
        };
        if get(0..4)? != b"ADAM" {
            return Err(Error::format("missing ADAM header"));
        }
        let step = u64::from_le_bytes(get(4..12)?.try_into().unwrap());
        let count = u32::from_le_bytes(get(12..16)?.try_into().unwrap()) as usize;
        let mut at = 16;
        let mut groups = BTreeMap::new();
        for _ in 0..count {
            let id = get(at..at + 1)?[0];
            let group = ParamGroup::from_id(id)
                .ok_or_else(|| Error::format(format!("unknown parameter group id {id}")))?;
            let n = u32::from_le_bytes(get(at + 1..at + 5)?.try_into().unwrap()) as usize;
            at += 5;
            let mut read = |n: usize| -> Result<Vec<f64>> {
                let v = get(at..at + 8 * n)?
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                at += 8 * n;
                Ok(v)
            };
            let m = read(n)?;
            let v = read(n)?;
            groups.insert(group, Moments { m, v });
        }
        Ok((OptimizerState { step, groups }, at))
    }
}

fn group_len(model: &Model, group: ParamGroup) -> Option<usize> {
    match group {
        ParamGroup::Net => Some(model.net.parameter_count()),
        g => model.bins().map(|b| match g {
            ParamGroup::Center | ParamGroup::Side => 2 * b.len(),
            _ => b.len(),
        }),
    }
}

fn param_slices(model: &mut Model, group: ParamGroup) -> Vec<&mut [f64]> {
    match group {
        ParamGroup::Net => model
            .net
            .layers_mut()
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect(),
        g => match model.bins_mut() {
            None => Vec::new(),
            Some(b) => match g {
                ParamGroup::Center => vec![&mut b.u[..], &mut b.v[..]],
                ParamGroup::Side => vec![&mut b.h[..], &mut b.w[..]],
                ParamGroup::Theta => vec![&mut b.theta[..]],
                ParamGroup::Steepness => vec![&mut b.k[..]],
                ParamGroup::Lambda => vec![&mut b.lambda[..]],
                ParamGroup::Net => unreachable!(),
            },
        },
    }
}

fn grad_slices(grads: &Gradients, group: ParamGroup) -> Option<Vec<&[f64]>> {
    match group {
        ParamGroup::Net => Some(
            grads
                .net
                .layers
                .iter()
                .flat_map(|l| {
                    [
                        l.weight.as_slice().expect("standard layout"),
                        l.bias.as_slice().expect("standard layout"),
                    ]
                })
                .collect(),
        ),
        g => grads.bins.as_ref().map(|b| match g {
            ParamGroup::Center => vec![&b.u[..], &b.v[..]],
            ParamGroup::Side => vec![&b.h[..], &b.w[..]],
            ParamGroup::Theta => vec![&b.theta[..]],
            ParamGroup::Steepness => vec![&b.k[..]],
            ParamGroup::Lambda => vec![&b.lambda[..]],
            ParamGroup::Net => unreachable!(),
        }),
    }
}

/// One bias-corrected Adam update of every unfrozen group.
///
/// Frozen groups keep both their parameters and their moments. Gradients are
/// checked for finiteness before anything is modified. After the update,
/// side lengths and steepness of updated groups are clamped to their minimums.
pub fn adam_step(
    model: &mut Model,
    state: &mut OptimizerState,
    grads: &Gradients,
    lrs: &LearningRates,
    freeze: &BTreeSet<ParamGroup>,
) -> Result<()> {
    let active: Vec<ParamGroup> = state
        .groups
        .keys()
        .copied()
        .filter(|g| !freeze.contains(g))
        .collect();

    let mut updates = Vec::with_capacity(active.len());
    for &g in &active {
        let Some(gs) = grad_slices(grads, g) else {
            return Err(Error::invalid(format!("missing gradients for group {g}")));
        };
        let flat: Vec<f64> = gs.into_iter().flatten().copied().collect();
        if flat.len() != state.groups[&g].m.len() {
            return Err(Error::invalid(format!(
                "gradient length {} does not match optimizer state for group {g}",
                flat.len()
            )));
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient in group {g}"),
                epoch: state.step as usize,
            });
        }
        updates.push((g, flat));
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);

    for (g, flat) in updates {
        let lr = lrs.get(g);
        let mom = state.groups.get_mut(&g).expect("active group has moments");
        let params = param_slices(model, g)
            .into_iter()
            .flat_map(|s| s.iter_mut());
        for (((p, &grad), m), v) in params.zip(&flat).zip(&mut mom.m).zip(&mut mom.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * grad;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * grad * grad;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }

    if let Some(b) = model.bins_mut() {
        if active.contains(&ParamGroup::Side) {
            for x in b.h.iter_mut().chain(b.w.iter_mut()) {
                *x = x.max(crate::encoder::MIN_SIDE);
            }
        }
        if active.contains(&ParamGroup::Steepness) {
            for k in &mut b.k {
                *k = k.max(crate::encoder::MIN_STEEPNESS);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_bins, BinGradients};
    use crate::network::init_network;
    use crate::trainer::loss::Encoding;

    fn model() -> Model {
        Model {
            encoding: Encoding::Nab(init_bins(3, &[5.0, 7.0], 1).unwrap()),
            net: init_network(&[3, 4, 1], 2).unwrap(),
        }
    }

    fn grads_filled(model: &Model, value: f64) -> Gradients {
        let mut net = model.net.zero_gradients();
        for l in &mut net.layers {
            l.weight.fill(value);
            l.bias.fill(value);
        }
        let mut bins = BinGradients::zeros(3);
        for g in bins.groups_mut() {
            g.fill(value);
        }
        Gradients {
            bins: Some(bins),
            net,
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = model();
        let before = m.clone();
        let mut state = OptimizerState::new(&m);
        let lrs = LearningRates::default();
        let g = grads_filled(&m, 3.0);
        adam_step(&mut m, &mut state, &g, &lrs, &BTreeSet::new()).unwrap();
        let (b0, b1) = (before.bins().unwrap(), m.bins().unwrap());
        for i in 0..3 {
            assert!((b0.u[i] - b1.u[i] - lrs.center).abs() < 1e-8 * lrs.center);
            assert!((b0.theta[i] - b1.theta[i] - lrs.theta).abs() < 1e-8 * lrs.theta);
            assert!((b0.lambda[i] - b1.lambda[i] - lrs.lambda).abs() < 1e-8 * lrs.lambda);
        }
        let w0 = before.net.layers()[0].weight[[0, 0]];
        let w1 = m.net.layers()[0].weight[[0, 0]];
        assert!((w0 - w1 - lrs.net).abs() < 1e-8 * lrs.net);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn frozen_groups_untouched() {
        let mut m = model();
        let before = m.clone();
        let mut state = OptimizerState::new(&m);
        let freeze: BTreeSet<_> = [ParamGroup::Center, ParamGroup::Net].into();
        for _ in 0..5 {
            let g = grads_filled(&m, -0.7);
            adam_step(&mut m, &mut state, &g, &LearningRates::default(), &freeze).unwrap();
        }
        let (b0, b1) = (before.bins().unwrap(), m.bins().unwrap());
        assert_eq!(b0.u, b1.u);
        assert_eq!(b0.v, b1.v);
        assert_eq!(before.net, m.net);
        assert_ne!(b0.h, b1.h);
        assert!(state.groups[&ParamGroup::Center]
            .m
            .iter()
            .all(|&x| x == 0.0));
        assert!(state.groups[&ParamGroup::Net].v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_gradients_are_a_fixed_point() {
        let mut m = model();
        let before = m.clone();
        let mut state = OptimizerState::new(&m);
        for _ in 0..10 {
            let g = grads_filled(&m, 0.0);
            adam_step(
                &mut m,
                &mut state,
                &g,
                &LearningRates::default(),
                &BTreeSet::new(),
            )
            .unwrap();
        }
        assert_eq!(before, m);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut m = model();
        let before = m.clone();
        let mut state = OptimizerState::new(&m);
        let mut g = grads_filled(&m, 1.0);
        g.bins.as_mut().unwrap().theta[1] = f64::NAN;
        let err = adam_step(
            &mut m,
            &mut state,
            &g,
            &LearningRates::default(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
        assert_eq!(before, m);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn constraints_reprojected() {
        let mut m = model();
        m.bins_mut().unwrap().h[0] = 1e-3 + 1e-5;
        m.bins_mut().unwrap().k[0] = 1.0 + 1e-5;
        let mut state = OptimizerState::new(&m);
        let lrs = LearningRates {
            side: 0.5,
            steepness: 0.5,
            ..LearningRates::default()
        };
        let g = grads_filled(&m, 1.0);
        adam_step(&mut m, &mut state, &g, &lrs, &BTreeSet::new()).unwrap();
        assert_eq!(m.bins().unwrap().h[0], 1e-3);
        assert_eq!(m.bins().unwrap().k[0], 1.0);
    }

    #[test]
    fn state_bytes_round_trip() {
        let mut m = model();
        let mut state = OptimizerState::new(&m);
        let g = grads_filled(&m, 0.3);
        adam_step(
            &mut m,
            &mut state,
            &g,
            &LearningRates::default(),
            &BTreeSet::new(),
        )
        .unwrap();
        let bytes = state.to_bytes();
        let (back, used) = OptimizerState::from_bytes(&bytes).unwrap();
        assert_eq!(back, state);
        assert_eq!(used, bytes.len());
    }
}
