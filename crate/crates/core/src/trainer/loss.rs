use crate::encoder::{encode, encode_backward, BinGradients, BinParameterSet, FeatureMatrix};
use crate::error::{Error, Result};
use crate::geometry::{CoordinateGrid, Image};
use crate::network::{net_backward, net_forward, net_predict, NetworkGradients, NetworkParameters};
use crate::projector::{Projector, Sinogram};
use crate::rfc::{rfc_encode, FrequencyMatrix};

#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    Nab(BinParameterSet),
    Rfc(FrequencyMatrix),
}

/// Encoder plus network: the full coordinate-to-attenuation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoding: Encoding,
    pub net: NetworkParameters,
}

impl Model {
    pub fn bins(&self) -> Option<&BinParameterSet> {
        match &self.encoding {
            Encoding::Nab(b) => Some(b),
            Encoding::Rfc(_) => None,
        }
    }

    pub fn bins_mut(&mut self) -> Option<&mut BinParameterSet> {
        match &mut self.encoding {
            Encoding::Nab(b) => Some(b),
            Encoding::Rfc(_) => None,
        }
    }

    pub fn features(&self, grid: &CoordinateGrid) -> Result<FeatureMatrix> {
        match &self.encoding {
            Encoding::Nab(b) => encode(grid, b),
            Encoding::Rfc(f) => Ok(rfc_encode(grid, f)),
        }
    }

    /// Evaluates the network at every grid coordinate.
    pub fn render(&self, grid: &CoordinateGrid) -> Result<Image> {
        self.render_with(grid, None)
    }

    pub(crate) fn render_with(
        &self,
        grid: &CoordinateGrid,
        fixed_features: Option<&FeatureMatrix>,
    ) -> Result<Image> {
        let owned;
        let features = match fixed_features {
            Some(f) => f,
            None => {
                owned = self.features(grid)?;
                &owned
            }
        };
        let out = net_predict(features, &self.net)?;
        Image::new(grid.height(), grid.width(), out.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `None` for fixed encoders or when bin gradients were not requested.
    pub bins: Option<BinGradients>,
    pub net: NetworkGradients,
}

/// `‖A X − Y‖²` and its gradient with respect to every model parameter.
///
/// `X` is the network output over the whole grid; the gradient flows
/// `2 Aᵀ(AX − Y)` → network → encoder.
pub fn compute_loss_and_grads(
    model: &Model,
    grid: &CoordinateGrid,
    projector: &Projector,
    sino: &Sinogram,
) -> Result<(f64, Gradients)> {
    loss_and_grads(model, grid, projector, sino, None, true)
}

pub(crate) fn loss_and_grads(
    model: &Model,
    grid: &CoordinateGrid,
    projector: &Projector,
    sino: &Sinogram,
    fixed_features: Option<&FeatureMatrix>,
    want_bin_grads: bool,
) -> Result<(f64, Gradients)> {
    let (h, w) = projector.geometry().image_shape();
    if (grid.height(), grid.width()) != (h, w) {
        return Err(Error::invalid(format!(
            "grid {}x{} does not match geometry image {h}x{w}",
            grid.height(),
            grid.width()
        )));
    }
    if !sino.matches(projector.geometry()) {
        return Err(Error::invalid("sinogram does not match geometry"));
    }
    let owned;
    let features = match fixed_features {
        Some(f) => f,
        None => {
            owned = model.features(grid)?;
            &owned
        }
    };
    let (x, cache) = net_forward(features, &model.net)?;
    let ax = projector.forward_slice(x.as_slice().expect("contiguous output"));
    let residual: Vec<f64> = ax.iter().zip(sino.values()).map(|(a, y)| a - y).collect();
    let loss = residual.iter().map(|r| r * r).sum::<f64>();

    let mut dx = projector.back_slice(&residual);
    for d in &mut dx {
        *d *= 2.0;
    }
    let (net_grads, feature_grads) = net_backward(&cache, &model.net, &dx)?;
    let bins = match (&model.encoding, want_bin_grads) {
        (Encoding::Nab(b), true) => Some(encode_backward(grid, b, &feature_grads)?),
        _ => None,
    };
    Ok((
        loss,
        Gradients {
            bins,
            net: net_grads,
        },
    ))
}

/// Loss only, without any backward pass.
pub fn compute_loss(
    model: &Model,
    grid: &CoordinateGrid,
    projector: &Projector,
    sino: &Sinogram,
) -> Result<f64> {
    let x = model.render(grid)?;
    let ax = projector.forward(&x)?;
    Ok(ax
        .values()
        .iter()
        .zip(sino.values())
        .map(|(a, y)| (a - y) * (a - y))
        .sum())
}
