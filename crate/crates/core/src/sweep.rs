//! Hyperparameter grids: train, embed and probe once per cell and seed.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::probe::{linear_probe, mean_std, ProbeConfig};
use crate::train::{embed, train, TrainConfig};

/// Values to sweep; an empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    pub p_h: Vec<f64>,
    pub p_a: Vec<f64>,
    pub k: Vec<usize>,
    pub l: Vec<usize>,
    /// Training seeds per cell; empty means the base seed only.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub p_h: f64,
    pub p_a: f64,
    pub k: Option<usize>,
    pub l: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    /// Probe accuracy pooled over every seed and repeat.
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    /// Cartesian product in λ-major order.
    pub fn cells(&self, base: &TrainConfig) -> Vec<SweepCell> {
        let k_axis: Vec<Option<usize>> = if self.k.is_empty() {
            vec![base.k]
        } else {
            self.k.iter().copied().map(Some).collect()
        };
        let l_axis: Vec<Option<usize>> = if self.l.is_empty() {
            vec![base.l]
        } else {
            self.l.iter().copied().map(Some).collect()
        };
        let mut cells = Vec::new();
        for &lambda in &axis(&self.lambda, base.lambda) {
            for &p_h in &axis(&self.p_h, base.p_h) {
                for &p_a in &axis(&self.p_a, base.p_a) {
                    for &k in &k_axis {
                        for &l in &l_axis {
                            cells.push(SweepCell {
                                lambda,
                                p_h,
                                p_a,
                                k,
                                l,
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

impl SweepCell {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            p_h: self.p_h,
            p_a: self.p_a,
            k: self.k,
            l: self.l,
            out_dir: None,
            ..base.clone()
        }
    }
}

/// Mean probe accuracy of one trained configuration.
pub fn evaluate_config(g: &Graph, cfg: &TrainConfig, probe: &ProbeConfig) -> Result<Vec<f64>> {
    let outcome = train(g, cfg)?;
    let z = embed(g, &outcome.params)?;
    Ok(linear_probe(z.z.view(), g.labels(), g.splits(), probe)?.accuracies)
}

/// Runs every cell. `workers` bounds concurrent cells; results come back in
/// cell order whatever the worker count.
pub fn run_sweep(
    g: &Graph,
    base: &TrainConfig,
    probe: &ProbeConfig,
    grid: &SweepGrid,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let seeds = axis(&grid.seeds, base.seed);
    let cells = grid.cells(base);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let mut accs = Vec::new();
                for &seed in &seeds {
                    let cfg = TrainConfig {
                        seed,
                        ..cell.apply(base)
                    };
                    accs.extend(evaluate_config(g, &cfg, probe)?);
                }
                let (mean, std) = mean_std(&accs);
                Ok(SweepRow {
                    cell: cell.clone(),
                    mean,
                    std,
                    runs: accs.len(),
                })
            })
            .collect()
    })
}

pub const CSV_HEADER: &str = "lambda,p_h,p_a,k,l,mean_accuracy,std_accuracy,runs";

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let opt = |v: Option<usize>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.cell.lambda,
            r.cell.p_h,
            r.cell.p_a,
            opt(r.cell.k),
            opt(r.cell.l),
            r.mean,
            r.std,
            r.runs
        );
    }
    out
}
