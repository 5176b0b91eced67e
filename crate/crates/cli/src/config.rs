use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use nab_core::trainer::{EncoderKind, TrainConfig};
use nab_core::{PhantomPreset, ScanGeometry};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "NAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nab,
    Rfc,
    Sirt,
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "nab" => Ok(Method::Nab),
            "rfc" => Ok(Method::Rfc),
            "sirt" => Ok(Method::Sirt),
            other => bail!("unknown method `{other}` (expected nab, rfc or sirt)"),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nab => "nab",
            Method::Rfc => "rfc",
            Method::Sirt => "sirt",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSection {
    pub preset: PhantomPreset,
    pub angle: f64,
    pub size: usize,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            preset: PhantomPreset::HollowSquare,
            angle: 0.3,
            size: 64,
        }
    }
}

/// Everything needed to reproduce one reconstruction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub train: TrainConfig,
    pub sirt_iterations: usize,
    pub phantom: PhantomSection,
    pub views: usize,
    /// Filled from the sinogram sidecar when absent.
    pub geometry: Option<ScanGeometry>,
    pub output_dir: PathBuf,
    pub deterministic: bool,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Nab,
            train: TrainConfig::default(),
            sirt_iterations: 200,
            phantom: PhantomSection::default(),
            views: 16,
            geometry: None,
            output_dir: PathBuf::from("out"),
            deterministic: true,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn set_method(&mut self, method: Method) {
        self.method = method;
        match method {
            Method::Rfc => self.train.encoder = EncoderKind::Rfc,
            Method::Nab => self.train.encoder = EncoderKind::Nab,
            Method::Sirt => {}
        }
    }
}

/// Reads `NAB_SEED`, if set.
pub fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got `{v}`")),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(e.into()),
    }
}
