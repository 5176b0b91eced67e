//! Binary checkpoint: encoder block (`NABP` or `RFCM`), network (`NETW`),
//! optimizer state (`ADAM`), then a `META` block holding a `u32` LE length
//! and a JSON document (config echo, epoch, loss).

use std::fs;
use std::path::Path;

use super::adam::OptimizerState;
use super::loss::{Encoding, Model};
use crate::encoder::BinParameterSet;
use crate::error::{Error, Result};
use crate::network::NetworkParameters;
use crate::rfc::FrequencyMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = match &self.model.encoding {
            Encoding::Nab(b) => b.to_bytes(),
            Encoding::Rfc(f) => f.to_bytes(),
        };
        out.extend(self.model.net.to_bytes());
        out.extend(self.optimizer.to_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("json values serialise");
        out.extend_from_slice(b"META");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend(meta);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (encoding, mut at) = match bytes.get(..4) {
            Some(b"NABP") => {
                let (b, n) = BinParameterSet::from_bytes(bytes)?;
                (Encoding::Nab(b), n)
            }
            Some(b"RFCM") => {
                let (f, n) = FrequencyMatrix::from_bytes(bytes)?;
                (Encoding::Rfc(f), n)
            }
            _ => {
                return Err(Error::format(
                    "checkpoint does not start with an encoder block",
                ))
            }
        };
        let (net, n) = NetworkParameters::from_bytes(&bytes[at..])?;
        at += n;
        let (optimizer, n) = OptimizerState::from_bytes(&bytes[at..])?;
        at += n;
        let rest = &bytes[at..];
        if rest.len() < 8 || &rest[..4] != b"META" {
            return Err(Error::format("missing META block"));
        }
        let len = u32::from_le_bytes(rest[4..8].try_into().unwrap()) as usize;
        if rest.len() != 8 + len {
            return Err(Error::format("META block length mismatch"));
        }
        let meta = serde_json::from_slice(&rest[8..])
            .map_err(|e| Error::format(format!("META json: {e}")))?;
        Ok(Checkpoint {
            model: Model { encoding, net },
            optimizer,
            meta,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
