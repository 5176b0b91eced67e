use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Groups of parameters that share a learning rate and can be frozen together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Network weights and biases.
    Net,
    /// Bin centers `(u, v)`.
    Center,
    /// Bin side lengths `(h, w)`.
    Side,
    /// Bin rotation angles.
    Theta,
    /// Bin steepness `k`.
    Steepness,
    /// Bin height factors `λ`.
    Lambda,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Net,
        ParamGroup::Center,
        ParamGroup::Side,
        ParamGroup::Theta,
        ParamGroup::Steepness,
        ParamGroup::Lambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Net => "net",
            ParamGroup::Center => "center",
            ParamGroup::Side => "side",
            ParamGroup::Theta => "theta",
            ParamGroup::Steepness => "steepness",
            ParamGroup::Lambda => "lambda",
        }
    }

    pub fn is_bin_group(self) -> bool {
        self != ParamGroup::Net
    }

    pub(crate) fn id(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_id(id: u8) -> Option<Self> {
        ParamGroup::ALL.into_iter().find(|g| g.id() == id)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "net" | "network" => ParamGroup::Net,
            "center" | "centre" | "location" => ParamGroup::Center,
            "side" | "size" => ParamGroup::Side,
            "theta" | "rotation" => ParamGroup::Theta,
            "steepness" | "k" => ParamGroup::Steepness,
            "lambda" | "height" => ParamGroup::Lambda,
            other => {
                return Err(Error::invalid(format!(
                    "unknown parameter group `{other}` (expected net, center, side, theta, steepness, lambda)"
                )))
            }
        })
    }
}

/// Learning rate per parameter group.
///
/// The defaults suit 64 x 64 grids trained for a few thousand epochs.
/// [`LearningRates::long_run`] holds the rates for 256 x 256 grids and ~30k epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub net: f64,
    pub center: f64,
    pub side: f64,
    pub theta: f64,
    pub steepness: f64,
    pub lambda: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates::long_run().scaled(10.0, 20.0)
    }
}

impl LearningRates {
    pub fn long_run() -> Self {
        LearningRates {
            net: 8.0e-4,
            center: 8.0e-4,
            side: 8.0e-4,
            theta: 1.0e-4,
            steepness: 1.0e-4,
            lambda: 1.0e-5,
        }
    }

    /// Multiplies the network rate by `net` and every bin rate by `bins`.
    pub fn scaled(self, net: f64, bins: f64) -> Self {
        LearningRates {
            net: self.net * net,
            center: self.center * bins,
            side: self.side * bins,
            theta: self.theta * bins,
            steepness: self.steepness * bins,
            lambda: self.lambda * bins,
        }
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Net => self.net,
            ParamGroup::Center => self.center,
            ParamGroup::Side => self.side,
            ParamGroup::Theta => self.theta,
            ParamGroup::Steepness => self.steepness,
            ParamGroup::Lambda => self.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Trainable adaptive bins.
    Nab,
    /// Fixed random Fourier features with `bins / 2` frequencies.
    Rfc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub encoder: EncoderKind,
    pub epochs: usize,
    pub learning_rates: LearningRates,
    pub freeze: BTreeSet<ParamGroup>,
    pub seed: u64,
    /// Epochs after which an image snapshot is kept; `None` means `{⌈2/3 E⌉, E}`.
    pub checkpoint_epochs: Option<Vec<usize>>,
    /// Feature length `M`.
    pub bins: usize,
    pub steepness_set: Vec<f64>,
    /// Hidden layer widths; the input is `bins` and the output is 1.
    pub hidden_layers: Vec<usize>,
}

impl Default for TrainConfig {
    /// Desk-scale defaults for a 64 x 64 grid.
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderKind::Nab,
            epochs: 3000,
            learning_rates: LearningRates::default(),
            freeze: BTreeSet::new(),
            seed: 0,
            checkpoint_epochs: None,
            bins: 128,
            steepness_set: vec![200.0, 300.0],
            hidden_layers: vec![64, 64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::invalid("feature length must be positive"));
        }
        if self.encoder == EncoderKind::Rfc && self.bins % 2 != 0 {
            return Err(Error::invalid(
                "random Fourier coding needs an even feature length",
            ));
        }
        if self.steepness_set.is_empty() {
            return Err(Error::invalid("steepness set must not be empty"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        for g in self.trainable_groups() {
            let lr = self.learning_rates.get(g);
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::invalid(format!(
                    "learning rate for unfrozen group {g} must be positive, got {lr}"
                )));
            }
        }
        if let Some(eps) = &self.checkpoint_epochs {
            if let Some(e) = eps.iter().find(|&&e| e > self.epochs) {
                return Err(Error::invalid(format!(
                    "checkpoint epoch {e} exceeds epochs {}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.bins)
            .chain(self.hidden_layers.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }

    /// Groups that exist for this encoder and are not frozen.
    pub fn trainable_groups(&self) -> impl Iterator<Item = ParamGroup> + '_ {
        ParamGroup::ALL.into_iter().filter(move |g| {
            !self.freeze.contains(g) && (self.encoder == EncoderKind::Nab || !g.is_bin_group())
        })
    }

    pub fn resolved_checkpoint_epochs(&self) -> Vec<usize> {
        let mut eps = match &self.checkpoint_epochs {
            Some(e) => e.clone(),
            None => vec![(2 * self.epochs).div_ceil(3), self.epochs],
        };
        eps.retain(|&e| e > 0);
        eps.sort_unstable();
        eps.dedup();
        eps
    }
}
