//! Subset views: per-node feature dropping and per-edge dropping.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::rng::Rng;

pub const MAX_FEATURE_DROP: f64 = 0.99;

/// Drop rates for one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    /// Probability that a node's whole feature row is zeroed.
    pub p_h: f64,
    /// Probability that an undirected edge is removed.
    pub p_a: f64,
}

impl SampleConfig {
    pub const NONE: SampleConfig = SampleConfig { p_h: 0.0, p_a: 0.0 };

    pub fn new(p_h: f64, p_a: f64) -> Result<Self> {
        let cfg = Self { p_h, p_a };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_FEATURE_DROP).contains(&self.p_h) {
            return Err(Error::Config(format!(
                "p_h must lie in [0, {MAX_FEATURE_DROP}], got {}",
                self.p_h
            )));
        }
        if !(0.0..1.0).contains(&self.p_a) {
            return Err(Error::Config(format!(
                "p_a must lie in [0, 1), got {}",
                self.p_a
            )));
        }
        Ok(())
    }
}

/// One sampled subset of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSample {
    pub masked_features: Array2<f64>,
    pub adjacency: NormalizedAdjacency,
    pub node_mask: Vec<bool>,
    pub kept_edges: Vec<(usize, usize)>,
}

impl ViewSample {
    /// The raw graph, nothing dropped.
    pub fn full(g: &Graph) -> Self {
        Self {
            masked_features: g.features().clone(),
            adjacency: normalize_adjacency(g),
            node_mask: vec![true; g.num_nodes()],
            kept_edges: g.edges().to_vec(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_mask.len()
    }

    pub fn kept_nodes(&self) -> usize {
        self.node_mask.iter().filter(|&&k| k).count()
    }
}

/// Draws one view: one Bernoulli(1 - p_h) per node scaling its entire
/// feature row, then one Bernoulli(1 - p_a) per undirected edge. The
/// propagation matrix is renormalized over the kept edges.
pub fn sample_view(g: &Graph, cfg: &SampleConfig, rng: &mut Rng) -> Result<ViewSample> {
    cfg.validate()?;
    let node_mask: Vec<bool> = (0..g.num_nodes())
        .map(|_| rng.gen_bool(1.0 - cfg.p_h))
        .collect();
    let kept_edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|_| rng.gen_bool(1.0 - cfg.p_a))
        .collect();

    let mut masked_features = g.features().clone();
    for (mut row, &keep) in masked_features.rows_mut().into_iter().zip(&node_mask) {
        if !keep {
            row.fill(0.0);
        }
    }
    let adjacency = NormalizedAdjacency::from_edges(g.num_nodes(), &kept_edges);
    Ok(ViewSample {
        masked_features,
        adjacency,
        node_mask,
        kept_edges,
    })
}

/// Two successive draws from the same stream.
pub fn sample_epoch_views(
    g: &Graph,
    cfg: &SampleConfig,
    rng: &mut Rng,
) -> Result<(ViewSample, ViewSample)> {
    sample_epoch_views_with(g, cfg, cfg, rng)
}

/// Like [`sample_epoch_views`] with separate drop rates per view.
pub fn sample_epoch_views_with(
    g: &Graph,
    first: &SampleConfig,
    second: &SampleConfig,
    rng: &mut Rng,
) -> Result<(ViewSample, ViewSample)> {
    let a = sample_view(g, first, rng)?;
    let b = sample_view(g, second, rng)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::sbm::{generate_sbm, SbmSpec};

    fn sbm90(seed: u64) -> Graph {
        generate_sbm(&SbmSpec {
            blocks: vec![30, 30, 30],
            p_in: 0.3,
            p_out: 0.02,
            feature_noise: 0.5,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_rates_reproduce_graph() {
        let g = sbm90(1);
        let mut rng = stream(5, Purpose::Views, 0);
        let (a, b) = sample_epoch_views(&g, &SampleConfig::NONE, &mut rng).unwrap();
        let full = ViewSample::full(&g);
        assert_eq!(a, full);
        assert_eq!(b, full);
        assert_eq!(a.adjacency, normalize_adjacency(&g));
    }

    #[test]
    fn masking_is_per_node_and_edges_are_subset() {
        let g = sbm90(2);
        let cfg = SampleConfig::new(0.5, 0.5).unwrap();
        let mut rng = stream(9, Purpose::Views, 0);
        let v = sample_view(&g, &cfg, &mut rng).unwrap();
        for (i, &keep) in v.node_mask.iter().enumerate() {
            let row = v.masked_features.row(i);
            if keep {
                assert_eq!(row, g.features().row(i));
            } else {
                assert!(row.iter().all(|&x| x == 0.0));
            }
        }
        for &(u, w) in &v.kept_edges {
            assert!(g.has_edge(u, w));
        }
        let dense = v.adjacency.to_dense();
        for i in 0..g.num_nodes() {
            for j in 0..g.num_nodes() {
                assert_eq!(dense[[i, j]], dense[[j, i]]);
                if i != j && !g.has_edge(i, j) {
                    assert_eq!(dense[[i, j]], 0.0);
                }
            }
        }
        assert_eq!(
            v.adjacency,
            NormalizedAdjacency::from_edges(g.num_nodes(), &v.kept_edges)
        );
    }

    #[test]
    fn heavy_node_drop_is_binomial() {
        let g = Graph::new(Array2::ones((1000, 1)), [], None, None).unwrap();
        let cfg = SampleConfig::new(0.99, 0.0).unwrap();
        let sd = (1000.0f64 * 0.01 * 0.99).sqrt();
        for seed in 0..20 {
            let mut rng = stream(seed, Purpose::Views, 0);
            let kept = sample_view(&g, &cfg, &mut rng).unwrap().kept_nodes() as f64;
            assert!((kept - 10.0).abs() <= 3.0 * sd, "seed {seed}: {kept}");
        }
    }

    #[test]
    fn views_are_deterministic_per_stream() {
        let g = sbm90(3);
        let cfg = SampleConfig::new(0.3, 0.4).unwrap();
        let a = sample_epoch_views(&g, &cfg, &mut stream(42, Purpose::Views, 0)).unwrap();
        let b = sample_epoch_views(&g, &cfg, &mut stream(42, Purpose::Views, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_views_differ_when_dropping_edges() {
        let g = sbm90(4);
        let cfg = SampleConfig::new(0.0, 0.5).unwrap();
        let differing = (0..100)
            .filter(|&seed| {
                let (a, b) =
                    sample_epoch_views(&g, &cfg, &mut stream(seed, Purpose::Views, 0)).unwrap();
                a.kept_edges != b.kept_edges
            })
            .count();
        assert!(differing >= 99);
    }

    #[test]
    fn rejects_out_of_range_rates() {
        assert!(SampleConfig::new(0.995, 0.0).is_err());
        assert!(SampleConfig::new(0.0, 1.0).is_err());
        assert!(SampleConfig::new(-0.1, 0.0).is_err());
        assert!(SampleConfig::new(0.99, 0.99).is_ok());
    }
}
