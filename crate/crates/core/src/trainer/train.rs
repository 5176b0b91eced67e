use thiserror::Error;

use super::adam::{adam_step, OptimizerState};
use super::config::{EncoderKind, TrainConfig};
use super::loss::{loss_and_grads, Encoding, Model};
use crate::encoder::init_bins;
use crate::error::{Error as CoreError, Result};
use crate::geometry::{make_grid, Image};
use crate::network::init_network;
use crate::projector::{Projector, ScanGeometry, Sinogram};
use crate::rfc::{rfc_encode, FrequencyMatrix};

const BIN_SEED_SALT: u64 = 0x6e61_6270;
const NET_SEED_SALT: u64 = 0x6e65_7477;
const RFC_SEED_SALT: u64 = 0x7266_636d;

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Network output after the last completed epoch.
    pub image: Image,
    /// Loss before each optimizer step; entry `e` is evaluated after `e` steps.
    pub loss_curve: Vec<f64>,
    /// `(epoch, image)` snapshots taken after that many steps.
    pub checkpoints: Vec<(usize, Image)>,
    pub model: Model,
    pub optimizer: OptimizerState,
}

/// Training failure; numerical aborts carry everything up to the last good epoch.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct TrainError {
    pub error: CoreError,
    pub partial: Option<Box<ReconstructionResult>>,
}

impl From<CoreError> for TrainError {
    fn from(error: CoreError) -> Self {
        TrainError {
            error,
            partial: None,
        }
    }
}

pub(crate) fn init_model(config: &TrainConfig, seed: u64) -> Result<Model> {
    let encoding = match config.encoder {
        EncoderKind::Nab => Encoding::Nab(init_bins(
            config.bins,
            &config.steepness_set,
            seed ^ BIN_SEED_SALT,
        )?),
        EncoderKind::Rfc => Encoding::Rfc(FrequencyMatrix::sample(
            config.bins / 2,
            seed ^ RFC_SEED_SALT,
        )?),
    };
    let net = init_network(&config.layer_sizes(), seed ^ NET_SEED_SALT)?;
    Ok(Model { encoding, net })
}

pub fn train(
    config: &TrainConfig,
    sino: &Sinogram,
    geom: &ScanGeometry,
) -> std::result::Result<ReconstructionResult, TrainError> {
    train_with_observer(config, sino, geom, |_, _| {})
}

/// Full-batch training; `observer(epoch, loss)` is called once per epoch.
pub fn train_with_observer(
    config: &TrainConfig,
    sino: &Sinogram,
    geom: &ScanGeometry,
    mut observer: impl FnMut(usize, f64),
) -> std::result::Result<ReconstructionResult, TrainError> {
    config.validate()?;
    if !sino.matches(geom) {
        return Err(CoreError::InvalidArgument("sinogram does not match geometry".into()).into());
    }
    let (h, w) = geom.image_shape();
    let grid = make_grid(h, w)?;
    let projector = Projector::new(geom);
    let mut model = init_model(config, config.seed)?;
    let mut optimizer = OptimizerState::new(&model);

    let fixed_features = match &model.encoding {
        Encoding::Rfc(f) => Some(rfc_encode(&grid, f)),
        Encoding::Nab(_) => None,
    };
    let want_bin_grads = config.trainable_groups().any(|g| g.is_bin_group());
    let checkpoint_epochs = config.resolved_checkpoint_epochs();

    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::new();

    // state before the most recent step, restored if the loss goes non-finite
    let mut previous: Option<(Model, OptimizerState)> = None;

    for epoch in 0..config.epochs {
        let evaluated = loss_and_grads(
            &model,
            &grid,
            &projector,
            sino,
            fixed_features.as_ref(),
            want_bin_grads,
        );
        let step = match evaluated {
            Ok((loss, _)) if !loss.is_finite() => {
                if let Some((m, o)) = previous.take() {
                    model = m;
                    optimizer = o;
                    checkpoints.retain(|(e, _)| *e < epoch);
                }
                Err(CoreError::NonFinite {
                    what: "loss".into(),
                    epoch,
                })
            }
            Ok((loss, grads)) => {
                let before = optimizer.clone();
                let mut next = model.clone();
                adam_step(
                    &mut next,
                    &mut optimizer,
                    &grads,
                    &config.learning_rates,
                    &config.freeze,
                )
                .map(|()| (loss, next, before))
            }
            Err(e) => Err(e),
        };

        let (loss, next, before) = match step {
            Ok(v) => v,
            Err(error) => {
                let image = model.render_with(&grid, fixed_features.as_ref())?;
                return Err(TrainError {
                    error,
                    partial: Some(Box::new(ReconstructionResult {
                        image,
                        loss_curve,
                        checkpoints,
                        model,
                        optimizer,
                    })),
                });
            }
        };
        previous = Some((std::mem::replace(&mut model, next), before));
        loss_curve.push(loss);
        observer(epoch, loss);

        if checkpoint_epochs.contains(&(epoch + 1)) {
            checkpoints.push((
                epoch + 1,
                model.render_with(&grid, fixed_features.as_ref())?,
            ));
        }
    }

    let image = model.render_with(&grid, fixed_features.as_ref())?;
    Ok(ReconstructionResult {
        image,
        loss_curve,
        checkpoints,
        model,
        optimizer,
    })
}
