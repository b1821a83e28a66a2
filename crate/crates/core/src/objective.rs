//! Cross-view similarity, positive/negative pair selection and the training
//! losses, with gradients with respect to both embedding matrices.
//!
//! The discriminator value for a pair is `σ(s_ij)` where `s_ij` is the raw
//! inner product `z_i⁽¹⁾ · z_j⁽²⁾`. Logs of `σ` and `1 − σ` are evaluated
//! through softplus so saturated scores never produce `log(0)`.
//!
//! Pair selection ranks raw scores (equivalent to ranking `σ(s)`), uses a
//! global top-k / bottom-l over all off-diagonal entries, and breaks ties by
//! row-major index. During differentiation the selected pairs are constants.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Rng};

/// Row-normalization floor for zero embeddings.
const NORM_EPS: f64 = 1e-12;

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(s)`
pub fn log_sigmoid(s: f64) -> f64 {
    -softplus(-s)
}

/// `ln(1 − σ(s))`
pub fn log_one_minus_sigmoid(s: f64) -> f64 {
    -softplus(s)
}

/// Raw cross-view scores `S[i][j] = z_i⁽¹⁾ · z_j⁽²⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    scores: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn from_scores(scores: Array2<f64>) -> Result<Self> {
        if !scores.is_square() {
            return Err(Error::Shape(format!(
                "similarity matrix must be square, got {:?}",
                scores.dim()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity matrix".into()));
        }
        Ok(Self { scores })
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[[i, j]]
    }

    /// Discriminator output `σ(s_ij)`.
    pub fn discriminator(&self, i: usize, j: usize) -> f64 {
        sigmoid(self.scores[[i, j]])
    }
}

pub fn similarity(z1: ArrayView2<'_, f64>, z2: ArrayView2<'_, f64>) -> Result<SimilarityMatrix> {
    if z1.dim() != z2.dim() {
        return Err(Error::Shape(format!(
            "embeddings {:?} vs {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    SimilarityMatrix::from_scores(z1.dot(&z2.t()))
}

/// Positive and negative index pairs over a similarity matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSets {
    /// Diagonal pairs first, then off-diagonal positives by descending score.
    pub positives: Vec<(usize, usize)>,
    /// Ascending score.
    pub negatives: Vec<(usize, usize)>,
    pub k: usize,
    pub l: usize,
}

impl PairSets {
    /// Diagonal positives only.
    pub fn diagonal(n: usize) -> Self {
        Self {
            positives: (0..n).map(|i| (i, i)).collect(),
            negatives: Vec::new(),
            k: 0,
            l: 0,
        }
    }
}

fn off_diagonal(n: usize) -> usize {
    n * n.saturating_sub(1)
}

/// Diagonal plus the `k` largest and `l` smallest off-diagonal scores.
///
/// Ties go to the smaller row-major index in both rankings. Negatives are
/// drawn from the entries not already chosen as positives, so the two sets
/// are disjoint even when scores tie.
pub fn select_pairs(s: &SimilarityMatrix, k: usize, l: usize) -> Result<PairSets> {
    let n = s.n();
    let available = off_diagonal(n);
    if k + l > available {
        return Err(Error::PairBudget {
            requested: k + l,
            available,
        });
    }
    let scores = s.scores.as_slice().expect("standard layout");
    let desc = |a: &usize, b: &usize| -> Ordering {
        scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
    };
    let asc = |a: &usize, b: &usize| -> Ordering {
        scores[*a].total_cmp(&scores[*b]).then(a.cmp(b))
    };

    let mut candidates: Vec<usize> = (0..n * n).filter(|idx| idx / n != idx % n).collect();

    let mut top = Vec::new();
    if k > 0 {
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, desc);
        }
        top = candidates.drain(..k).collect();
        top.sort_unstable_by(desc);
    }

    let mut bottom = Vec::new();
    if l > 0 {
        if l < candidates.len() {
            candidates.select_nth_unstable_by(l - 1, asc);
        }
        candidates.truncate(l);
        bottom = candidates;
        bottom.sort_unstable_by(asc);
    }

    let to_pair = |idx: usize| (idx / n, idx % n);
    let mut positives: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    positives.extend(top.into_iter().map(to_pair));
    Ok(PairSets {
        positives,
        negatives: bottom.into_iter().map(to_pair).collect(),
        k,
        l,
    })
}

/// Classic baseline: diagonal positives, negatives `(i, π(i))` for a uniform
/// random permutation `π`, dropping fixed points.
pub fn select_pairs_shuffling(n: usize, rng: &mut Rng) -> PairSets {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let negatives: Vec<(usize, usize)> = perm
        .into_iter()
        .enumerate()
        .filter(|(i, j)| i != j)
        .collect();
    PairSets {
        positives: (0..n).map(|i| (i, i)).collect(),
        l: negatives.len(),
        negatives,
        k: 0,
    }
}

/// [`select_pairs_shuffling`] on a fresh stream for `seed`.
pub fn select_pairs_shuffling_seeded(n: usize, seed: u64) -> PairSets {
    select_pairs_shuffling(n, &mut stream(seed, Purpose::Shuffle, 0))
}

fn check_pairs(n: usize, pairs: &PairSets) -> Result<()> {
    if pairs.positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let bad = pairs
        .positives
        .iter()
        .chain(&pairs.negatives)
        .find(|(i, j)| *i >= n || *j >= n);
    if let Some(p) = bad {
        return Err(Error::Shape(format!("pair {p:?} outside {n}x{n}")));
    }
    Ok(())
}

/// Loss value plus `∂L/∂s_ij` for each selected pair.
fn contrastive_terms(
    s: &SimilarityMatrix,
    pairs: &PairSets,
) -> Result<(f64, Vec<((usize, usize), f64)>)> {
    check_pairs(s.n(), pairs)?;
    let mut grads = Vec::with_capacity(pairs.positives.len() + pairs.negatives.len());

    let wp = 1.0 / pairs.positives.len() as f64;
    let mut pos = 0.0;
    for &(i, j) in &pairs.positives {
        let x = s.score(i, j);
        pos += softplus(-x);
        grads.push(((i, j), -wp * sigmoid(-x)));
    }
    let mut value = wp * pos;

    if !pairs.negatives.is_empty() {
        let wn = 1.0 / pairs.negatives.len() as f64;
        let mut neg = 0.0;
        for &(i, j) in &pairs.negatives {
            let x = s.score(i, j);
            neg += softplus(x);
            grads.push(((i, j), wn * sigmoid(x)));
        }
        value += wn * neg;
    }
    Ok((value, grads))
}

/// `−mean_P ln σ(s_ij) − mean_N ln(1 − σ(s_ij))`, the `N` term omitted when
/// `N` is empty. Returns the value and the dense `∂L/∂S`.
pub fn contrastive_loss(s: &SimilarityMatrix, pairs: &PairSets) -> Result<(f64, Array2<f64>)> {
    let (value, terms) = contrastive_terms(s, pairs)?;
    let n = s.n();
    let mut grad = Array2::zeros((n, n));
    for ((i, j), g) in terms {
        grad[[i, j]] += g;
    }
    Ok((value, grad))
}

/// `(1/n) Σ_i ‖z_i⁽¹⁾ − z_i⁽²⁾‖²` and its gradients.
pub fn consistency_loss(
    z1: ArrayView2<'_, f64>,
    z2: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if z1.dim() != z2.dim() {
        return Err(Error::Shape(format!(
            "embeddings {:?} vs {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    let n = z1.nrows();
    if n == 0 {
        return Ok((0.0, z1.to_owned(), z2.to_owned()));
    }
    let diff = &z1 - &z2;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let grad1 = diff * (2.0 / n as f64);
    let grad2 = -&grad1;
    Ok((value, grad1, grad2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cl: f64,
    pub l_cvc: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_cl: f64, l_cvc: f64, lambda: f64) -> Self {
        Self {
            l_cl,
            l_cvc,
            lambda,
            total: l_cl + lambda * l_cvc,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_cl.is_finite() && self.l_cvc.is_finite() && self.total.is_finite()
    }

    /// Name of the first non-finite term, for diagnostics.
    pub fn offending_term(&self) -> Option<&'static str> {
        if !self.l_cl.is_finite() {
            Some("contrastive")
        } else if !self.l_cvc.is_finite() {
            Some("consistency")
        } else if !self.total.is_finite() {
            Some("total")
        } else {
            None
        }
    }
}

/// Loss and embedding gradients for one step.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub grad_z1: Array2<f64>,
    pub grad_z2: Array2<f64>,
}

/// `L_cl + λ L_cvc` for fixed pairs. With `pairs = None` the contrastive term
/// is absent and reported as 0.
pub fn loss_with_pairs(
    z1: ArrayView2<'_, f64>,
    z2: ArrayView2<'_, f64>,
    pairs: Option<&PairSets>,
    lambda: f64,
) -> Result<LossOutput> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let (l_cvc, mut grad_z1, mut grad_z2) = consistency_loss(z1, z2)?;
    grad_z1 *= lambda;
    grad_z2 *= lambda;

    let l_cl = match pairs {
        Some(pairs) => {
            let s = similarity(z1, z2)?;
            let (value, terms) = contrastive_terms(&s, pairs)?;
            for ((i, j), g) in terms {
                grad_z1.row_mut(i).scaled_add(g, &z2.row(j));
                grad_z2.row_mut(j).scaled_add(g, &z1.row(i));
            }
            value
        }
        None => 0.0,
    };

    Ok(LossOutput {
        breakdown: LossBreakdown::new(l_cl, l_cvc, lambda),
        grad_z1,
        grad_z2,
    })
}

/// similarity → select_pairs → contrastive + λ·consistency.
pub fn combined_loss(
    z1: ArrayView2<'_, f64>,
    z2: ArrayView2<'_, f64>,
    k: usize,
    l: usize,
    lambda: f64,
) -> Result<(LossOutput, PairSets)> {
    let pairs = select_pairs(&similarity(z1, z2)?, k, l)?;
    let out = loss_with_pairs(z1, z2, Some(&pairs), lambda)?;
    Ok((out, pairs))
}

/// Divides each row by its L2 norm. Returns the normalized rows and the norms
/// needed by [`normalize_rows_backward`].
pub fn normalize_rows(z: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_EPS));
    let mut out = z.to_owned();
    for (mut row, &norm) in out.rows_mut().into_iter().zip(&norms) {
        row /= norm;
    }
    (out, norms)
}

/// Pulls a gradient with respect to normalized rows back to the raw rows:
/// `(g − u (u·g)) / ‖z‖` with `u` the normalized row.
pub fn normalize_rows_backward(
    normalized: &Array2<f64>,
    norms: &Array1<f64>,
    grad: &Array2<f64>,
) -> Array2<f64> {
    let mut out = grad.clone();
    for ((mut g, u), &norm) in out.rows_mut().into_iter().zip(normalized.rows()).zip(norms) {
        let proj = u.dot(&g);
        g.scaled_add(-proj, &u);
        g /= norm;
    }
    out
}
