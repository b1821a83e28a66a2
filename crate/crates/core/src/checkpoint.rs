//! Versioned JSON checkpoints.
//!
//! Layout (version 1):
//!
//! ```text
//! {
//!   "format": "milbo-checkpoint",
//!   "version": 1,
//!   "rng_algorithm": "chacha8",
//!   "seed": <u64>,
//!   "epoch": <completed epochs>,
//!   "config": { ...TrainConfig... },
//!   "params": { "w1": {"v":1,"dim":[f,h],"data":[...]}, "w2": {...},
//!               optional "b1", "b2", "prelu" },
//!   "adam": { "config": {"lr","beta1","beta2","eps"}, "t": <u64>,
//!             "m": [[...], ...], "v": [[...], ...] }
//! }
//! ```
//!
//! Matrices are row-major. Floats are written in shortest round-trip form
//! and parsed exactly, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optim::AdamState;
use crate::rng::RNG_ALGORITHM;
use crate::train::{TrainConfig, TrainState};

pub const FORMAT: &str = "milbo-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub rng_algorithm: String,
    pub seed: u64,
    pub epoch: u64,
    pub config: TrainConfig,
    pub params: EncoderParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(cfg: &TrainConfig, state: &TrainState) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            rng_algorithm: RNG_ALGORITHM.into(),
            seed: cfg.seed,
            epoch: state.epoch,
            config: cfg.clone(),
            params: state.params.clone(),
            adam: state.adam.clone(),
        }
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                self.version
            )));
        }
        if self.rng_algorithm != RNG_ALGORITHM {
            return Err(Error::Checkpoint(format!(
                "checkpoint uses rng `{}`, this build uses `{RNG_ALGORITHM}`",
                self.rng_algorithm
            )));
        }
        if !self.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        let lens: Vec<usize> = self.params.tensors().iter().map(|t| t.len()).collect();
        let m: Vec<usize> = self.adam.m.iter().map(Vec::len).collect();
        let v: Vec<usize> = self.adam.v.iter().map(Vec::len).collect();
        if lens != m || lens != v {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        if self.adam.t != self.epoch {
            return Err(Error::Checkpoint(format!(
                "optimizer step {} disagrees with epoch {}",
                self.adam.t, self.epoch
            )));
        }
        Ok(())
    }

    /// A run may be resumed when everything that shapes the trajectory
    /// matches; only `epochs`, `checkpoint_every` and `out_dir` may differ.
    pub fn check_compatible(&self, g: &Graph, cfg: &TrainConfig) -> Result<()> {
        if self.params.in_dim() != g.num_features() {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects {} features, graph has {}",
                self.params.in_dim(),
                g.num_features()
            )));
        }
        let strip = |c: &TrainConfig| TrainConfig {
            epochs: 0,
            checkpoint_every: 0,
            out_dir: None,
            ..c.clone()
        };
        if strip(&self.config) != strip(cfg) {
            return Err(Error::Checkpoint(
                "config differs from the checkpointed run".into(),
            ));
        }
        if self.epoch > cfg.epochs {
            return Err(Error::Checkpoint(format!(
                "checkpoint is at epoch {}, past the requested {}",
                self.epoch, cfg.epochs
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::adam_step;
    use crate::sbm::{generate_sbm, SbmSpec};

    #[test]
    fn save_load_is_bit_exact() {
        let g = generate_sbm(&SbmSpec {
            blocks: vec![4, 4],
            p_in: 0.6,
            p_out: 0.1,
            feature_noise: 0.4,
            seed: 2,
        })
        .unwrap();
        let cfg = TrainConfig {
            d_hidden: 5,
            d_out: 3,
            bias: true,
            activation: crate::encoder::Activation::Prelu,
            ..TrainConfig::default()
        };
        let mut state = TrainState::init(&g, &cfg);
        let mut grads = state.params.zeros_like();
        for (i, t) in grads.tensors_mut().into_iter().enumerate() {
            for (j, v) in t.iter_mut().enumerate() {
                *v = ((i * 31 + j) as f64).sin() / 3.0;
            }
        }
        adam_step(&mut state.params, &grads, &mut state.adam).unwrap();
        state.epoch = 1;

        let ckpt = Checkpoint::new(&cfg, &state);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        for (a, b) in back.params.tensors().iter().zip(ckpt.params.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        back.check_compatible(&g, &cfg).unwrap();

        let other = TrainConfig {
            lambda: 0.9,
            ..cfg.clone()
        };
        assert!(back.check_compatible(&g, &other).is_err());
    }

    #[test]
    fn rejects_foreign_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, "{\"format\": \"other\"}").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
