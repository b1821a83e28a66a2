//! Two-layer GCN encoder shared by both views, with a hand-written backward pass.
//!
//! `Z = Â · act(Â · H · W1 + b1) · W2 + b2`, biases optional and off by default.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{Array1, Array2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::rng::{stream, Purpose};
use crate::sampler::ViewSample;

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_OUT: usize = 256;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Subgradient 0 at exactly 0.
    #[default]
    Relu,
    /// Learnable negative slope per hidden channel.
    Prelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_hidden: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_hidden: DEFAULT_HIDDEN,
            d_out: DEFAULT_OUT,
            activation: Activation::Relu,
            bias: false,
        }
    }
}

/// Encoder weights. The same struct carries gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<Array1<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<Array1<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prelu: Option<Array1<f64>>,
}

pub type EncoderGrads = EncoderParams;

fn glorot(rows: usize, cols: usize, rng: &mut crate::rng::Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Glorot-uniform weights with default config dimensions.
pub fn init_params(f_dim: usize, d_hidden: usize, d_out: usize, seed: u64) -> EncoderParams {
    let cfg = EncoderConfig {
        d_hidden,
        d_out,
        ..EncoderConfig::default()
    };
    EncoderParams::init(f_dim, &cfg, seed)
}

impl EncoderParams {
    pub fn init(f_dim: usize, cfg: &EncoderConfig, seed: u64) -> Self {
        assert!(
            f_dim > 0 && cfg.d_hidden > 0 && cfg.d_out > 0,
            "encoder dimensions must be positive"
        );
        let mut rng = stream(seed, Purpose::Init, 0);
        let w1 = glorot(f_dim, cfg.d_hidden, &mut rng);
        let w2 = glorot(cfg.d_hidden, cfg.d_out, &mut rng);
        Self {
            w1,
            w2,
            b1: cfg.bias.then(|| Array1::zeros(cfg.d_hidden)),
            b2: cfg.bias.then(|| Array1::zeros(cfg.d_out)),
            prelu: (cfg.activation == Activation::Prelu)
                .then(|| Array1::from_elem(cfg.d_hidden, PRELU_INIT)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.ncols()
    }

    /// All-zero tensors shaped like `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b1: self.b1.as_ref().map(|b| Array1::zeros(b.len())),
            b2: self.b2.as_ref().map(|b| Array1::zeros(b.len())),
            prelu: self.prelu.as_ref().map(|a| Array1::zeros(a.len())),
        }
    }

    /// Flat views of every tensor in a fixed order: w1, w2, b1, b2, prelu.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.w1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
        ];
        for t in [&self.b1, &self.b2, &self.prelu].into_iter().flatten() {
            out.push(t.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
        ];
        for t in [&mut self.b1, &mut self.b2, &mut self.prelu]
            .into_iter()
            .flatten()
        {
            out.push(t.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<&'static str> {
        let mut out = vec!["w1", "w2"];
        if self.b1.is_some() {
            out.push("b1");
        }
        if self.b2.is_some() {
            out.push("b2");
        }
        if self.prelu.is_some() {
            out.push("prelu");
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && self.w1.dim() == other.w1.dim()
            && self.w2.dim() == other.w2.dim()
            && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }

    /// Hash of the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in self.tensors() {
            t.len().hash(&mut h);
            for v in t {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// `self += alpha * other`, used to combine gradients.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }
}

/// Which view an embedding matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewTag {
    First,
    Second,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub z: Array2<f64>,
    pub view: ViewTag,
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct EncoderTape {
    adjacency: NormalizedAdjacency,
    /// `Â · H`
    propagated_input: Array2<f64>,
    /// Layer-1 pre-activation.
    pre: Array2<f64>,
    /// `Â · act(pre)`
    propagated_hidden: Array2<f64>,
    fingerprint: u64,
}

fn activate(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Encodes one view.
pub fn forward(
    params: &EncoderParams,
    view: &ViewSample,
    tag: ViewTag,
) -> Result<(Embeddings, EncoderTape)> {
    let h = &view.masked_features;
    let n = view.num_nodes();
    if h.nrows() != n || view.adjacency.dim() != n {
        return Err(Error::Shape(format!(
            "view has {} feature rows, {} mask entries, adjacency {}",
            h.nrows(),
            n,
            view.adjacency.dim()
        )));
    }
    if h.ncols() != params.in_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns, encoder expects {}",
            h.ncols(),
            params.in_dim()
        )));
    }

    let adj = &view.adjacency;
    let propagated_input = adj.matmul(h.view());
    let mut pre = propagated_input.dot(&params.w1);
    if let Some(b1) = &params.b1 {
        pre += b1;
    }
    let mut hidden = pre.clone();
    match &params.prelu {
        Some(slopes) => Zip::from(hidden.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row)
                .and(slopes)
                .for_each(|x, &a| *x = activate(*x, a));
        }),
        None => hidden.mapv_inplace(|x| activate(x, 0.0)),
    }
    let propagated_hidden = adj.matmul(hidden.view());
    let mut z = propagated_hidden.dot(&params.w2);
    if let Some(b2) = &params.b2 {
        z += b2;
    }

    let tape = EncoderTape {
        adjacency: adj.clone(),
        propagated_input,
        pre,
        propagated_hidden,
        fingerprint: params.fingerprint(),
    };
    Ok((Embeddings { z, view: tag }, tape))
}

/// Reverse-mode gradients of a scalar loss with respect to every parameter,
/// given `∂L/∂Z` for the forward pass recorded in `tape`.
pub fn backward(
    params: &EncoderParams,
    tape: &EncoderTape,
    grad_z: &Array2<f64>,
) -> Result<EncoderGrads> {
    if tape.fingerprint != params.fingerprint() {
        return Err(Error::StaleTape);
    }
    let n = tape.pre.nrows();
    if grad_z.dim() != (n, params.out_dim()) {
        return Err(Error::Shape(format!(
            "grad_z is {:?}, expected ({n}, {})",
            grad_z.dim(),
            params.out_dim()
        )));
    }

    let w2 = tape.propagated_hidden.t().dot(grad_z);
    let b2 = params.b2.as_ref().map(|_| grad_z.sum_axis(Axis(0)));

    // Â is symmetric, so Âᵀ · g = Â · g.
    let grad_hidden = tape.adjacency.matmul(grad_z.dot(&params.w2.t()).view());

    let mut grad_pre = grad_hidden.clone();
    let prelu = params.prelu.as_ref().map(|slopes| {
        let mut grad_slope = Array1::zeros(slopes.len());
        Zip::from(grad_pre.rows_mut())
            .and(tape.pre.rows())
            .for_each(|mut g, pre| {
                Zip::from(&mut g)
                    .and(&pre)
                    .and(slopes)
                    .and(&mut grad_slope)
                    .for_each(|g, &x, &a, ga| {
                        if x <= 0.0 {
                            *ga += *g * x;
                            *g *= a;
                        }
                    });
            });
        grad_slope
    });
    if prelu.is_none() {
        Zip::from(&mut grad_pre).and(&tape.pre).for_each(|g, &x| {
            if x <= 0.0 {
                *g = 0.0;
            }
        });
    }

    let w1 = tape.propagated_input.t().dot(&grad_pre);
    let b1 = params.b1.as_ref().map(|_| grad_pre.sum_axis(Axis(0)));
    Ok(EncoderGrads {
        w1,
        w2,
        b1,
        b2,
        prelu,
    })
}
