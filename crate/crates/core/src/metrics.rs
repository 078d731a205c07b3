//! Accuracy, loading sparsity, sparsity sweeps and a softmax baseline.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, Dataset, Matrix};
use crate::error::{BndlError, Result};
use crate::model::{GlobalPosterior, ModelParams};
use crate::rng::{run_stream, sample_stream};
use crate::training::{train, OptimizerConfig, OptimizerState, TrainConfig};
use crate::uncertainty::{evaluate_uncertainty, UncertaintyConfig};

/// Loadings whose posterior mean exceeds this count as non-sparse.
pub const NNZ_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Deterministic pass through posterior means.
    Expected,
    /// Average of this many sampled probability vectors.
    MonteCarlo(usize),
}

/// Class probabilities for one sample under `mode`.
pub fn predictive_probs(
    p: &ModelParams,
    h: &[f64],
    mode: PredictionMode,
    gp: &GlobalPosterior,
    seed: u64,
    sample_id: usize,
) -> Result<Vec<f64>> {
    match mode {
        PredictionMode::Expected => Ok(p.expected_forward(h)?.probs),
        PredictionMode::MonteCarlo(s) => {
            if s == 0 {
                return Err(BndlError::Config(
                    "MC prediction needs at least one sample".into(),
                ));
            }
            let mut rng = sample_stream(seed, sample_id);
            let mut acc = vec![0.0; p.dims().classes];
            for _ in 0..s {
                let pd = p.sampled_forward(h, gp, &mut rng)?;
                acc.iter_mut().zip(&pd.probs).for_each(|(a, b)| *a += b);
            }
            acc.iter_mut().for_each(|a| *a /= s as f64);
            Ok(acc)
        }
    }
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(p: &ModelParams, data: &Dataset, mode: PredictionMode, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(BndlError::Config("accuracy of an empty dataset".into()));
    }
    let gp = p.infer_global();
    let correct: Vec<bool> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let probs = predictive_probs(p, data.features.row(i), mode, &gp, seed, i)?;
            Ok(argmax(&probs) == data.label(i))
        })
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|c| **c).count() as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub threshold: f64,
    pub l_non: usize,
    pub l_sparse: usize,
    pub nnz: f64,
}

/// Share of posterior-mean loadings above `threshold`.
pub fn nnz_sparsity(gp: &GlobalPosterior, threshold: f64) -> SparsityReport {
    nnz_of_values(gp.mean().as_slice(), threshold)
}

pub fn nnz_of_values(values: &[f64], threshold: f64) -> SparsityReport {
    let l_non = values.iter().filter(|v| **v > threshold).count();
    let l_sparse = values.len() - l_non;
    let nnz = if values.is_empty() {
        0.0
    } else {
        l_non as f64 / values.len() as f64
    };
    SparsityReport {
        threshold,
        l_non,
        l_sparse,
        nnz,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha_sparsity: f64,
    pub nnz: Option<f64>,
    pub accuracy: Option<f64>,
    pub pavpu: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

/// Trains one fresh model per α (same seed for all) and records sparsity and
/// accuracy on `eval`. Failed points are kept with a failure status.
pub fn sweep_alpha(
    train_data: &Dataset,
    eval_data: &Dataset,
    base: &TrainConfig,
    alphas: &[f64],
    uncertainty: Option<&UncertaintyConfig>,
) -> Result<Vec<SweepPoint>> {
    if alphas.is_empty() {
        return Err(BndlError::Config("sweep needs at least one alpha".into()));
    }
    let points = alphas
        .par_iter()
        .map(|&alpha| {
            let run = || -> Result<(f64, f64, Option<f64>)> {
                let cfg = TrainConfig {
                    alpha_sparsity: alpha,
                    ..base.clone()
                };
                let out = train(train_data, &cfg)?;
                let nnz = nnz_sparsity(&out.params.infer_global(), NNZ_THRESHOLD).nnz;
                let acc = accuracy(&out.params, eval_data, PredictionMode::Expected, cfg.seed)?;
                let pavpu = match uncertainty {
                    Some(u) => Some(evaluate_uncertainty(&out.params, eval_data, u)?.1.pavpu),
                    None => None,
                };
                Ok((nnz, acc, pavpu))
            };
            match run() {
                Ok((nnz, acc, pavpu)) => SweepPoint {
                    alpha_sparsity: alpha,
                    nnz: Some(nnz),
                    accuracy: Some(acc),
                    pavpu,
                    status: "ok".into(),
                },
                Err(e) => SweepPoint {
                    alpha_sparsity: alpha,
                    nnz: None,
                    accuracy: None,
                    pavpu: None,
                    status: format!("failed: {e}"),
                },
            }
        })
        .collect();
    Ok(points)
}

/// Multinomial logistic regression over the same features.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSoftmaxParams {
    /// D×C weights.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl BaselineSoftmaxParams {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self {
            weights: Matrix::zeros(dim, classes),
            bias: vec![0.0; classes],
        }
    }

    /// Flat view `[weights..., bias...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.as_slice().to_vec();
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn from_flat(dim: usize, classes: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != dim * classes + classes {
            return Err(BndlError::Shape(
                "flat softmax parameters have the wrong length".into(),
            ));
        }
        Ok(Self {
            weights: Matrix::from_vec(dim, classes, flat[..dim * classes].to_vec())?,
            bias: flat[dim * classes..].to_vec(),
        })
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (d, hd) in h.iter().enumerate() {
            for (zc, w) in z.iter_mut().zip(self.weights.row(d)) {
                *zc += hd * w;
            }
        }
        z
    }

    pub fn predict(&self, h: &[f64]) -> usize {
        argmax(&self.logits(h))
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Mean log-likelihood of the softmax model over `indices` and its gradient
/// in the flat `[weights, bias]` layout.
pub fn softmax_objective(
    params: &BaselineSoftmaxParams,
    data: &Dataset,
    indices: &[usize],
) -> (f64, Vec<f64>) {
    let (d, c) = (params.weights.rows(), params.weights.cols());
    let mut grad = vec![0.0; d * c + c];
    let mut total = 0.0;
    let inv_b = 1.0 / indices.len() as f64;
    for &i in indices {
        let h = data.features.row(i);
        let y = data.label(i);
        let lp = log_softmax(&params.logits(h));
        total += lp[y];
        for cc in 0..c {
            let r = (if cc == y { 1.0 } else { 0.0 }) - lp[cc].exp();
            for (dd, hd) in h.iter().enumerate() {
                grad[dd * c + cc] += inv_b * r * hd;
            }
            grad[d * c + cc] += inv_b * r;
        }
    }
    (total * inv_b, grad)
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub params: BaselineSoftmaxParams,
    pub accuracy: f64,
}

/// Maximum-likelihood softmax regression trained with the shared optimizer.
pub fn baseline_softmax_train(
    data: &Dataset,
    optimizer: &OptimizerConfig,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<BaselineOutcome> {
    if data.is_empty() {
        return Err(BndlError::Config(
            "baseline needs a non-empty dataset".into(),
        ));
    }
    if batch_size == 0 || batch_size > data.len() {
        return Err(BndlError::Config(format!(
            "batch_size {batch_size} invalid for {} samples",
            data.len()
        )));
    }
    let (d, c) = (data.dim(), data.n_classes);
    let mut params = BaselineSoftmaxParams::zeros(d, c);
    let mut flat = params.to_flat();
    let mut state = OptimizerState::new(flat.len());
    let mut rng = run_stream(seed, 2);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let (_, g) = softmax_objective(&params, data, batch);
            let dc = d * c;
            state.apply(&mut flat, &g, optimizer, |i| if i < dc { "w" } else { "b" })?;
            params = BaselineSoftmaxParams::from_flat(d, c, &flat)?;
        }
    }
    let correct = (0..data.len())
        .filter(|&i| params.predict(data.features.row(i)) == data.label(i))
        .count();
    Ok(BaselineOutcome {
        accuracy: correct as f64 / data.len() as f64,
        params,
    })
}
