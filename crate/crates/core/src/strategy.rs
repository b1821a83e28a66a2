//! Pair-construction strategies, looked up by name at runtime.
//!
//! A strategy decides which `(i, j)` pairs supervise the contrastive term for
//! one training step. The loss itself is shared: `L_cl(P, N) + λ L_cvc`.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::objective::{
    loss_with_pairs, normalize_rows, normalize_rows_backward, select_pairs,
    select_pairs_shuffling, similarity, LossBreakdown, PairSets,
};
use crate::rng::{stream, Purpose};

/// Per-step inputs a strategy may use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub k: usize,
    pub l: usize,
    pub lambda: f64,
    pub seed: u64,
    pub epoch: u64,
}

pub trait PairStrategy: Send + Sync {
    /// Registry key, also the value of the `strategy` config field.
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn validate(&self, _ctx: &StepContext) -> Result<()> {
        Ok(())
    }

    /// Pairs for this step, or `None` to drop the contrastive term.
    fn select(
        &self,
        z1: ArrayView2<'_, f64>,
        z2: ArrayView2<'_, f64>,
        ctx: &StepContext,
    ) -> Result<Option<PairSets>>;
}

impl fmt::Debug for dyn PairStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PairStrategy({})", self.name())
    }
}

/// Similarity-guided selection: diagonal plus global top-k positives and
/// bottom-l negatives.
#[derive(Debug, Default)]
pub struct Milbo;

impl PairStrategy for Milbo {
    fn name(&self) -> &'static str {
        "milbo"
    }

    fn description(&self) -> &'static str {
        "diagonal + top-k / bottom-l of the cross-view similarity matrix"
    }

    fn select(
        &self,
        z1: ArrayView2<'_, f64>,
        z2: ArrayView2<'_, f64>,
        ctx: &StepContext,
    ) -> Result<Option<PairSets>> {
        select_pairs(&similarity(z1, z2)?, ctx.k, ctx.l).map(Some)
    }
}

/// Diagonal positives, negatives from a random permutation of the second view.
#[derive(Debug, Default)]
pub struct Shuffling;

impl PairStrategy for Shuffling {
    fn name(&self) -> &'static str {
        "shuffling"
    }

    fn description(&self) -> &'static str {
        "diagonal positives, negatives (i, perm(i)) from a random permutation"
    }

    fn select(
        &self,
        z1: ArrayView2<'_, f64>,
        _z2: ArrayView2<'_, f64>,
        ctx: &StepContext,
    ) -> Result<Option<PairSets>> {
        let mut rng = stream(ctx.seed, Purpose::Shuffle, ctx.epoch);
        Ok(Some(select_pairs_shuffling(z1.nrows(), &mut rng)))
    }
}

/// Only the cross-view consistency term, `λ L_cvc`.
#[derive(Debug, Default)]
pub struct ConsistencyOnly;

impl PairStrategy for ConsistencyOnly {
    fn name(&self) -> &'static str {
        "consistency-only"
    }

    fn description(&self) -> &'static str {
        "no contrastive term; optimizes lambda * consistency"
    }

    fn validate(&self, ctx: &StepContext) -> Result<()> {
        if ctx.lambda > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(
                "consistency-only strategy needs lambda > 0".into(),
            ))
        }
    }

    fn select(
        &self,
        _z1: ArrayView2<'_, f64>,
        _z2: ArrayView2<'_, f64>,
        _ctx: &StepContext,
    ) -> Result<Option<PairSets>> {
        Ok(None)
    }
}

#[derive(Debug, Default)]
pub struct StrategyRegistry {
    entries: BTreeMap<&'static str, Box<dyn PairStrategy>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding `milbo`, `shuffling` and `consistency-only`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register(Box::new(Milbo));
        reg.register(Box::new(Shuffling));
        reg.register(Box::new(ConsistencyOnly));
        reg
    }

    /// Adds a strategy, replacing any previous one with the same name.
    pub fn register(&mut self, strategy: Box<dyn PairStrategy>) {
        self.entries.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<&dyn PairStrategy> {
        self.entries
            .get(name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

/// Loss and gradients with respect to the encoder outputs for one step.
#[derive(Debug, Clone)]
pub struct StepObjective {
    pub breakdown: LossBreakdown,
    pub grad_z1: Array2<f64>,
    pub grad_z2: Array2<f64>,
    pub pairs: Option<PairSets>,
}

/// Runs a strategy's pair selection and the shared loss. With
/// `normalize = true` both losses see L2-normalized rows and gradients are
/// pulled back through the normalization.
pub fn evaluate(
    strategy: &dyn PairStrategy,
    z1: ArrayView2<'_, f64>,
    z2: ArrayView2<'_, f64>,
    ctx: &StepContext,
    normalize: bool,
) -> Result<StepObjective> {
    strategy.validate(ctx)?;
    if !normalize {
        let pairs = strategy.select(z1, z2, ctx)?;
        let out = loss_with_pairs(z1, z2, pairs.as_ref(), ctx.lambda)?;
        return Ok(StepObjective {
            breakdown: out.breakdown,
            grad_z1: out.grad_z1,
            grad_z2: out.grad_z2,
            pairs,
        });
    }
    let (u1, n1) = normalize_rows(z1);
    let (u2, n2) = normalize_rows(z2);
    let pairs = strategy.select(u1.view(), u2.view(), ctx)?;
    let out = loss_with_pairs(u1.view(), u2.view(), pairs.as_ref(), ctx.lambda)?;
    Ok(StepObjective {
        breakdown: out.breakdown,
        grad_z1: normalize_rows_backward(&u1, &n1, &out.grad_z1),
        grad_z2: normalize_rows_backward(&u2, &n2, &out.grad_z2),
        pairs,
    })
}
