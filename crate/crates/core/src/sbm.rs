//! Stochastic block model generator for small labelled test graphs.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Splits};
use crate::rng::{stream, Purpose};

/// Fraction of each block assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    #[serde(default)]
    pub feature_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return Err(Error::Config("block sizes must be positive".into()));
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config("feature_noise must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Block id of every node, blocks laid out contiguously.
    pub fn block_labels(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(b, &size)| std::iter::repeat(b).take(size))
            .collect()
    }
}

/// Samples a graph: labels are block ids, features are the one-hot block id
/// plus Gaussian noise, and each block is split 80/20 into train/test.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let labels = spec.block_labels();
    let n = labels.len();
    let num_blocks = spec.blocks.len();

    let mut rng = stream(spec.seed, Purpose::Synth, 0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let mut features = Array2::zeros((n, num_blocks));
    if spec.feature_noise > 0.0 {
        let noise = Normal::new(0.0, spec.feature_noise).expect("validated noise");
        features.mapv_inplace(|_: f64| noise.sample(&mut rng));
    }
    for (i, &b) in labels.iter().enumerate() {
        features[[i, b]] += 1.0;
    }

    let mut splits = Splits::default();
    let mut start = 0;
    for &size in &spec.blocks {
        let mut members: Vec<usize> = (start..start + size).collect();
        members.shuffle(&mut rng);
        let cut = (size as f64 * TRAIN_FRACTION).round() as usize;
        splits.train.extend_from_slice(&members[..cut]);
        splits.test.extend_from_slice(&members[cut..]);
        start += size;
    }
    splits.train.sort_unstable();
    splits.test.sort_unstable();

    Graph::new(features, edges, Some(labels), Some(splits))
}
