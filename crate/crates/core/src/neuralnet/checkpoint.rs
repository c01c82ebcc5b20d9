//! JSON parameter checkpoints.
//!
//! Layout:
//!
//! ```json
//! {
//!   "format": "tumorgrowth-mlp",
//!   "version": 1,
//!   "variant": "node",
//!   "seed": 123,
//!   "networks": [
//!     { "name": "f", "widths": [1, 128, 128, 64, 64, 1], "theta": [ ... ] }
//!   ]
//! }
//! ```
//!
//! `theta` entries are written with the shortest decimal representation that
//! parses back to the identical `f64`, so a write/read cycle is bit-exact.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MlpArch, MlpParams, NetError};

pub const CHECKPOINT_FORMAT: &str = "tumorgrowth-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint {format} v{version}")]
    Format { format: String, version: u32 },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedNet {
    pub name: String,
    pub widths: Vec<usize>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub format: String,
    pub version: u32,
    pub variant: String,
    pub seed: u64,
    pub networks: Vec<NamedNet>,
}

impl NetCheckpoint {
    pub fn new(variant: &str, seed: u64, nets: &[(&str, &MlpParams)]) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            variant: variant.into(),
            seed,
            networks: nets
                .iter()
                .map(|(name, p)| NamedNet {
                    name: (*name).into(),
                    widths: p.arch.widths().to_vec(),
                    theta: p.theta.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds the named network.
    pub fn network(&self, name: &str) -> Result<Option<MlpParams>, CheckpointError> {
        let Some(n) = self.networks.iter().find(|n| n.name == name) else {
            return Ok(None);
        };
        Ok(Some(MlpParams::new(MlpArch::new(n.widths.clone())?, n.theta.clone())?))
    }
}

pub fn write_checkpoint<W: Write>(writer: W, ckpt: &NetCheckpoint) -> Result<(), CheckpointError> {
    serde_json::to_writer_pretty(writer, ckpt)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<NetCheckpoint, CheckpointError> {
    let ckpt: NetCheckpoint = serde_json::from_reader(reader)?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Format {
            format: ckpt.format,
            version: ckpt.version,
        });
    }
    for n in &ckpt.networks {
        let arch = MlpArch::new(n.widths.clone())?;
        if arch.param_count() != n.theta.len() {
            return Err(NetError::ParamCount {
                expected: arch.param_count(),
                got: n.theta.len(),
            }
            .into());
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::init_params;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(theta in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 9)) {
            let p = MlpParams::new(MlpArch::new(vec![2, 2, 1]).unwrap(), theta).unwrap();
            let ck = NetCheckpoint::new("node", 5, &[("f", &p)]);
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &ck).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            let q = back.network("f").unwrap().unwrap();
            prop_assert_eq!(
                p.theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                q.theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn rejects_foreign_format_and_bad_lengths() {
        let p = init_params(&MlpArch::new(vec![1, 3, 1]).unwrap(), 1);
        let mut ck = NetCheckpoint::new("ude", 1, &[("nn1", &p)]);
        ck.format = "other".into();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(CheckpointError::Format { .. })
        ));

        let mut ck = NetCheckpoint::new("ude", 1, &[("nn1", &p)]);
        ck.networks[0].theta.pop();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ck).unwrap();
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(CheckpointError::Net(_))));
    }
}
