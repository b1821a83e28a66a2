//! Training loop: per epoch, sample two views, encode both with the current
//! parameters, build pairs, take one full-batch Adam step on
//! `L_cl + λ L_cvc`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::encoder::{
    backward, forward, Activation, EncoderConfig, EncoderParams, Embeddings, ViewTag,
    DEFAULT_HIDDEN, DEFAULT_OUT,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::objective::LossBreakdown;
use crate::optim::{adam_step, AdamConfig, AdamState, DEFAULT_LR};
use crate::rng::{stream, Purpose};
use crate::sampler::{sample_epoch_views_with, SampleConfig, ViewSample};
use crate::strategy::{evaluate, PairStrategy, StepContext, StrategyRegistry};

pub const DEFAULT_EPOCHS: u64 = 500;
pub const DEFAULT_CHECKPOINT_EVERY: u64 = 50;
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Node-feature drop rate.
    pub p_h: f64,
    /// Edge drop rate.
    pub p_a: f64,
    /// Optional drop rates for the second view; `None` reuses `p_h` / `p_a`.
    pub view2_p_h: Option<f64>,
    pub view2_p_a: Option<f64>,
    pub lambda: f64,
    /// Absolute off-diagonal positive count; overrides `k_per_node`.
    pub k: Option<usize>,
    /// Absolute negative count; overrides `l_per_node`.
    pub l: Option<usize>,
    /// `k = round(k_per_node · n)` when `k` is unset.
    pub k_per_node: f64,
    pub l_per_node: f64,
    pub d_hidden: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub bias: bool,
    /// L2-normalize embedding rows before both loss terms.
    pub normalize_embeddings: bool,
    pub lr: f64,
    pub epochs: u64,
    pub seed: u64,
    pub strategy: String,
    pub checkpoint_every: u64,
    /// Directory for the JSON-lines log and checkpoints; nothing is written
    /// when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p_h: 0.2,
            p_a: 0.2,
            view2_p_h: None,
            view2_p_a: None,
            lambda: 0.2,
            k: None,
            l: None,
            k_per_node: 1.0,
            l_per_node: 5.0,
            d_hidden: DEFAULT_HIDDEN,
            d_out: DEFAULT_OUT,
            activation: Activation::Relu,
            bias: false,
            normalize_embeddings: false,
            lr: DEFAULT_LR,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            strategy: "milbo".into(),
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn view_configs(&self) -> Result<(SampleConfig, SampleConfig)> {
        let first = SampleConfig::new(self.p_h, self.p_a)?;
        let second = SampleConfig::new(
            self.view2_p_h.unwrap_or(self.p_h),
            self.view2_p_a.unwrap_or(self.p_a),
        )?;
        Ok((first, second))
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_hidden: self.d_hidden,
            d_out: self.d_out,
            activation: self.activation,
            bias: self.bias,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Resolved `(k, l)` for a graph with `n` nodes.
    pub fn pair_budget(&self, n: usize) -> (usize, usize) {
        let per_node = |x: f64| (x * n as f64).round().max(0.0) as usize;
        (
            self.k.unwrap_or_else(|| per_node(self.k_per_node)),
            self.l.unwrap_or_else(|| per_node(self.l_per_node)),
        )
    }

    pub fn step_context(&self, n: usize, epoch: u64) -> StepContext {
        let (k, l) = self.pair_budget(n);
        StepContext {
            k,
            l,
            lambda: self.lambda,
            seed: self.seed,
            epoch,
        }
    }

    pub fn validate(&self, registry: &StrategyRegistry) -> Result<()> {
        self.view_configs()?;
        self.adam_config().validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.d_hidden == 0 || self.d_out == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if !(self.k_per_node >= 0.0 && self.l_per_node >= 0.0) {
            return Err(Error::Config("per-node pair multipliers must be >= 0".into()));
        }
        let strategy = registry.get(&self.strategy)?;
        strategy.validate(&self.step_context(0, 0))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0-based index of the epoch this step completed.
    pub epoch: u64,
    pub loss: LossBreakdown,
    pub positives: usize,
    pub negatives: usize,
    pub wall_ms: f64,
}

/// Parameters and optimizer state between epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: EncoderParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: u64,
}

impl TrainState {
    pub fn init(g: &Graph, cfg: &TrainConfig) -> Self {
        let params = EncoderParams::init(g.num_features(), &cfg.encoder_config(), cfg.seed);
        let adam = AdamState::for_params(cfg.adam_config(), &params);
        Self {
            params,
            adam,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub state: TrainState,
    pub log: Vec<EpochRecord>,
}

/// Loss for one epoch's views with a fixed parameter snapshot.
pub(crate) struct StepResult {
    pub record_loss: LossBreakdown,
    pub positives: usize,
    pub negatives: usize,
    pub grads: EncoderParams,
}

pub(crate) fn epoch_step(
    params: &EncoderParams,
    views: &(ViewSample, ViewSample),
    strategy: &dyn PairStrategy,
    ctx: &StepContext,
    normalize: bool,
) -> Result<StepResult> {
    // Both views see the same snapshot; the update happens after both
    // gradients are accumulated.
    let (z1, tape1) = forward(params, &views.0, ViewTag::First)?;
    let (z2, tape2) = forward(params, &views.1, ViewTag::Second)?;
    let obj = evaluate(strategy, z1.z.view(), z2.z.view(), ctx, normalize)?;
    if let Some(term) = obj.breakdown.offending_term() {
        return Err(Error::NonFinite(format!(
            "{term} loss at epoch {} ({:?})",
            ctx.epoch, obj.breakdown
        )));
    }
    let mut grads = backward(params, &tape1, &obj.grad_z1)?;
    grads.add_scaled(1.0, &backward(params, &tape2, &obj.grad_z2)?);
    let (positives, negatives) = obj
        .pairs
        .as_ref()
        .map_or((0, 0), |p| (p.positives.len(), p.negatives.len()));
    Ok(StepResult {
        record_loss: obj.breakdown,
        positives,
        negatives,
        grads,
    })
}

/// Two views for `epoch`, drawn from the epoch's own stream so any epoch can
/// be reproduced without replaying earlier ones.
pub fn epoch_views(g: &Graph, cfg: &TrainConfig, epoch: u64) -> Result<(ViewSample, ViewSample)> {
    let (first, second) = cfg.view_configs()?;
    let mut rng = stream(cfg.seed, Purpose::Views, epoch);
    sample_epoch_views_with(g, &first, &second, &mut rng)
}

/// Trains from freshly initialized parameters.
pub fn train(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(g, cfg, TrainState::init(g, cfg))
}

/// Continues training from a checkpointed state up to `cfg.epochs`.
pub fn resume(g: &Graph, cfg: &TrainConfig, checkpoint: &Checkpoint) -> Result<TrainOutcome> {
    checkpoint.check_compatible(g, cfg)?;
    train_from(g, cfg, checkpoint.state())
}

fn train_from(g: &Graph, cfg: &TrainConfig, mut state: TrainState) -> Result<TrainOutcome> {
    let registry = StrategyRegistry::with_builtins();
    cfg.validate(&registry)?;
    let strategy = registry.get(&cfg.strategy)?;
    if state.params.in_dim() != g.num_features() {
        return Err(Error::Shape(format!(
            "encoder expects {} features, graph has {}",
            state.params.in_dim(),
            g.num_features()
        )));
    }
    let (k, l) = cfg.pair_budget(g.num_nodes());
    let budget = g.num_nodes() * g.num_nodes().saturating_sub(1);
    if cfg.strategy == "milbo" && k + l > budget {
        return Err(Error::PairBudget {
            requested: k + l,
            available: budget,
        });
    }

    let mut sink = match &cfg.out_dir {
        Some(dir) => Some(OutputSink::open(dir, state.epoch > 0)?),
        None => None,
    };

    let mut log = Vec::new();
    while state.epoch < cfg.epochs {
        let started = Instant::now();
        let epoch = state.epoch;
        let views = epoch_views(g, cfg, epoch)?;
        let ctx = cfg.step_context(g.num_nodes(), epoch);
        let step = epoch_step(&state.params, &views, strategy, &ctx, cfg.normalize_embeddings)?;
        adam_step(&mut state.params, &step.grads, &mut state.adam)?;
        state.epoch += 1;

        let record = EpochRecord {
            epoch,
            loss: step.record_loss,
            positives: step.positives,
            negatives: step.negatives,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(sink) = sink.as_mut() {
            sink.log(&record)?;
            if cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0 {
                sink.checkpoint(&Checkpoint::new(cfg, &state), true)?;
            }
        }
        log.push(record);
    }

    if let Some(sink) = sink.as_mut() {
        sink.checkpoint(&Checkpoint::new(cfg, &state), false)?;
    }
    Ok(TrainOutcome {
        params: state.params.clone(),
        state,
        log,
    })
}

struct OutputSink {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl OutputSink {
    fn open(dir: &Path, append: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log: BufWriter::new(file),
        })
    }

    fn log(&mut self, record: &EpochRecord) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        let line = serde_json::to_string(record).map_err(|e| Error::json(&path, e))?;
        writeln!(self.log, "{line}").map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&mut self, ckpt: &Checkpoint, periodic: bool) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        self.log.flush().map_err(|e| Error::io(&path, e))?;
        if periodic {
            ckpt.save(&self.dir.join(format!("checkpoint-epoch-{:06}.json", ckpt.epoch)))?;
        }
        ckpt.save(&self.dir.join(CHECKPOINT_FILE))
    }
}

/// Reads a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

/// Encodes the raw graph, nothing dropped.
pub fn embed(g: &Graph, params: &EncoderParams) -> Result<Embeddings> {
    forward(params, &ViewSample::full(g), ViewTag::Full).map(|(emb, _)| emb)
}

/// CSV, one row per node.
pub fn write_embeddings_csv(path: &Path, z: &Array2<f64>) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::with_capacity(z.len() * 20);
    for row in z.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_csv(path: &Path) -> Result<Array2<f64>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("bad value `{cell}`"),
            })?;
            values.push(v);
        }
        let w = values.len() - before;
        if *width.get_or_insert(w) != w {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "ragged row".into(),
            });
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, width.unwrap_or(0)), values)
        .map_err(|e| Error::Shape(e.to_string()))
}
