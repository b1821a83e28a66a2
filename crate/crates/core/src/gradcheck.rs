//! Central finite-difference check of the encoder gradients through the full
//! training loss.
//!
//! Views and pairs are drawn once at the starting parameters and then held
//! fixed, so the checked function is exactly the one the trainer
//! differentiates.

use serde::{Deserialize, Serialize};

use crate::encoder::{forward, EncoderParams, ViewTag};
use crate::error::Result;
use crate::graph::Graph;
use crate::objective::{loss_with_pairs, normalize_rows, PairSets};
use crate::sampler::ViewSample;
use crate::strategy::{PairStrategy, StepContext, StrategyRegistry};
use crate::train::{epoch_step, epoch_views, TrainConfig};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor: differences on gradients smaller than this are
/// measured in absolute terms.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub loss: f64,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − b| / max(|a|, |b|, ABS_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

struct FixedProblem<'a> {
    views: (ViewSample, ViewSample),
    pairs: Option<PairSets>,
    ctx: StepContext,
    normalize: bool,
    strategy: &'a dyn PairStrategy,
}

impl FixedProblem<'_> {
    fn loss(&self, params: &EncoderParams) -> Result<f64> {
        let (z1, _) = forward(params, &self.views.0, ViewTag::First)?;
        let (z2, _) = forward(params, &self.views.1, ViewTag::Second)?;
        let (z1, z2) = if self.normalize {
            (normalize_rows(z1.z.view()).0, normalize_rows(z2.z.view()).0)
        } else {
            (z1.z, z2.z)
        };
        let out = loss_with_pairs(z1.view(), z2.view(), self.pairs.as_ref(), self.ctx.lambda)?;
        Ok(out.breakdown.total)
    }
}

/// Checks every parameter of a freshly initialized encoder (seeded by
/// `seed`) on the epoch-0 views of `g` under `cfg`.
pub fn grad_check(g: &Graph, cfg: &TrainConfig, seed: u64) -> Result<GradCheckReport> {
    let cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    let registry = StrategyRegistry::with_builtins();
    cfg.validate(&registry)?;
    let strategy = registry.get(&cfg.strategy)?;
    let params = EncoderParams::init(g.num_features(), &cfg.encoder_config(), seed);
    let views = epoch_views(g, &cfg, 0)?;
    let ctx = cfg.step_context(g.num_nodes(), 0);
    grad_check_params(&params, views, strategy, ctx, cfg.normalize_embeddings, None)
}

/// Like [`grad_check`] with explicit parameters, views and, optionally,
/// a fixed pair set replacing the strategy's selection.
pub fn grad_check_params(
    params: &EncoderParams,
    views: (ViewSample, ViewSample),
    strategy: &dyn PairStrategy,
    ctx: StepContext,
    normalize: bool,
    pairs_override: Option<PairSets>,
) -> Result<GradCheckReport> {
    let pairs = match pairs_override {
        Some(p) => Some(p),
        None => {
            let (z1, _) = forward(params, &views.0, ViewTag::First)?;
            let (z2, _) = forward(params, &views.1, ViewTag::Second)?;
            if normalize {
                let u1 = normalize_rows(z1.z.view()).0;
                let u2 = normalize_rows(z2.z.view()).0;
                strategy.select(u1.view(), u2.view(), &ctx)?
            } else {
                strategy.select(z1.z.view(), z2.z.view(), &ctx)?
            }
        }
    };
    let problem = FixedProblem {
        views,
        pairs,
        ctx,
        normalize,
        strategy,
    };
    let analytic = analytic_grads(params, &problem)?;
    let loss = problem.loss(params)?;

    let step = DEFAULT_STEP;
    let names = params.tensor_names();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: names[0].to_string(),
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        loss,
        step,
        tolerance: DEFAULT_TOLERANCE,
        passed: true,
    };

    let mut probe = params.clone();
    let analytic_tensors = analytic.tensors();
    for (t, name) in names.iter().enumerate() {
        let len = params.tensors()[t].len();
        for i in 0..len {
            let original = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = original + step;
            let plus = problem.loss(&probe)?;
            probe.tensors_mut()[t][i] = original - step;
            let minus = problem.loss(&probe)?;
            probe.tensors_mut()[t][i] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic_tensors[t][i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst_tensor = name.to_string();
                report.worst_index = i;
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    report.passed = report.max_rel_error <= report.tolerance;
    Ok(report)
}

fn analytic_grads(params: &EncoderParams, problem: &FixedProblem<'_>) -> Result<EncoderParams> {
    match &problem.pairs {
        Some(pairs) => {
            let fixed = FixedPairs(pairs.clone());
            epoch_step(params, &problem.views, &fixed, &problem.ctx, problem.normalize)
                .map(|s| s.grads)
        }
        None => epoch_step(
            params,
            &problem.views,
            problem.strategy,
            &problem.ctx,
            problem.normalize,
        )
        .map(|s| s.grads),
    }
}

/// Strategy that always returns the same pairs.
struct FixedPairs(PairSets);

impl PairStrategy for FixedPairs {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn description(&self) -> &'static str {
        "precomputed pairs"
    }

    fn select(
        &self,
        _z1: ndarray::ArrayView2<'_, f64>,
        _z2: ndarray::ArrayView2<'_, f64>,
        _ctx: &StepContext,
    ) -> Result<Option<PairSets>> {
        Ok(Some(self.0.clone()))
    }
}
