//! Linear-probe evaluation: multinomial logistic regression trained on frozen
//! embeddings of the training split, scored on the test split.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Splits;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub weight_decay: f64,
    pub lr: f64,
    pub epochs: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Standardize each embedding column with train-split statistics.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            weight_decay: 1e-4,
            lr: 0.01,
            epochs: 300,
            repeats: 5,
            seed: 0,
            standardize: false,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("probe repeats must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("probe weight decay must be >= 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("probe lr must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub num_classes: usize,
    pub config: ProbeConfig,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fraction of `indices` where the prediction equals the label.
pub fn accuracy(predictions: &[usize], labels: &[usize], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let mut correct = 0usize;
    for &i in indices {
        if i >= predictions.len() || i >= labels.len() {
            return Err(Error::Evaluation(format!("index {i} out of range")));
        }
        correct += usize::from(predictions[i] == labels[i]);
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Trains `cfg.repeats` classifiers differing only in their init seed.
pub fn linear_probe(
    z: ArrayView2<'_, f64>,
    labels: Option<&[usize]>,
    splits: Option<&Splits>,
    cfg: &ProbeConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let labels = labels.ok_or_else(|| Error::Evaluation("graph has no labels".into()))?;
    let splits = splits.ok_or_else(|| Error::Evaluation("graph has no split".into()))?;
    if labels.len() != z.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            z.nrows()
        )));
    }
    if splits.train.is_empty() {
        return Err(Error::Evaluation("training split is empty".into()));
    }
    if splits.test.is_empty() {
        return Err(Error::Evaluation("test split is empty".into()));
    }
    if let Some(&i) = splits.train.iter().chain(&splits.test).find(|&&i| i >= z.nrows()) {
        return Err(Error::Evaluation(format!("split index {i} out of range")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }

    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut in_train = vec![false; num_classes];
    for &i in &splits.train {
        in_train[labels[i]] = true;
    }
    if let Some(&i) = splits.test.iter().find(|&&i| !in_train[labels[i]]) {
        return Err(Error::Evaluation(format!(
            "class {} appears in the test split but not in the training split",
            labels[i]
        )));
    }

    let mut x = z.to_owned();
    if cfg.standardize {
        standardize(&mut x, &splits.train);
    }
    let x_train = x.select(Axis(0), &splits.train);
    let y_train: Vec<usize> = splits.train.iter().map(|&i| labels[i]).collect();
    let x_test = x.select(Axis(0), &splits.test);
    let y_test: Vec<usize> = splits.test.iter().map(|&i| labels[i]).collect();
    let test_idx: Vec<usize> = (0..y_test.len()).collect();

    let accuracies = (0..cfg.repeats)
        .into_par_iter()
        .map(|repeat| {
            let model = LogisticRegression::fit(&x_train, &y_train, num_classes, cfg, repeat as u64)?;
            accuracy(&model.predict(&x_test), &y_test, &test_idx)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&accuracies);
    Ok(EvalReport {
        accuracies,
        mean,
        std,
        train_size: splits.train.len(),
        test_size: splits.test.len(),
        num_classes,
        config: cfg.clone(),
    })
}

fn standardize(x: &mut Array2<f64>, rows: &[usize]) {
    let sub = x.select(Axis(0), rows);
    let mean = sub.mean_axis(Axis(0)).expect("non-empty training split");
    let std = sub.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    *x -= &mean;
    *x /= &std;
}

#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LogisticRegression {
    /// Full-batch Adam on mean softmax cross-entropy with L2 decay on the
    /// weights.
    pub fn fit(
        x: &Array2<f64>,
        y: &[usize],
        num_classes: usize,
        cfg: &ProbeConfig,
        repeat: u64,
    ) -> Result<Self> {
        let (m, d) = x.dim();
        let mut rng = stream(cfg.seed, Purpose::Probe, repeat);
        let bound = (6.0 / (d + num_classes) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut model = Self {
            weights: Array2::from_shape_simple_fn((d, num_classes), || dist.sample(&mut rng)),
            bias: Array1::zeros(num_classes),
        };
        let mut adam = AdamState::new(
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            [d * num_classes, num_classes],
        );

        let mut onehot = Array2::<f64>::zeros((m, num_classes));
        for (r, &c) in y.iter().enumerate() {
            onehot[[r, c]] = 1.0;
        }
        for _ in 0..cfg.epochs {
            let mut probs = model.logits(x);
            softmax_rows(&mut probs);
            let delta = (probs - &onehot) / m as f64;
            let mut grad_w = x.t().dot(&delta);
            grad_w.scaled_add(cfg.weight_decay, &model.weights);
            let grad_b = delta.sum_axis(Axis(0));
            adam.step(
                vec![
                    model.weights.as_slice_mut().expect("standard layout"),
                    model.bias.as_slice_mut().expect("standard layout"),
                ],
                vec![
                    grad_w.as_slice().expect("standard layout"),
                    grad_b.as_slice().expect("standard layout"),
                ],
            )?;
        }
        Ok(model)
    }

    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }

    /// Arg-max class per row, ties to the smallest class id.
    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}
