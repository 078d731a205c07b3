//! The stochastic non-negative decision layer.
//!
//! A sample's feature vector `h` is mapped to a local Weibull posterior over
//! the factor scores θ (one entry per latent factor), while a global Weibull
//! posterior over the K×C loading matrix Φ is parameterized directly by two
//! weight matrices. Class probabilities are the sum-normalized product θΦ.
//!
//! Scales are divided by Γ(1 + 1/k) so that every posterior mean equals the
//! rectified network output ("raw" scale) exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::distributions::{
    clamp_shape, mean_factor, open_uniform, sample_unchecked, GammaParams, SCALE_MIN, SHAPE_MAX,
};
use crate::error::{BndlError, Result};
use crate::numkernel::softplus;

/// Floor added to every raw class score before normalization.
pub const EPS_CAT: f64 = 1e-10;

/// softplus⁻¹(1): the bias that makes an initial shape equal 1.
const UNIT_SHAPE_PREACT: f64 = 0.541_324_854_612_918_1;

/// Pre-activation that pushes softplus past the upper shape clamp.
const COLLAPSED_SHAPE_PREACT: f64 = 2.0 * SHAPE_MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Feature dimension D.
    pub features: usize,
    /// Latent dimension K.
    pub latent: usize,
    /// Number of classes C.
    pub classes: usize,
}

/// Trainable parameter blocks, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    ShapeWeights,
    ShapeBias,
    ScaleWeights,
    ScaleBias,
    LoadingShape,
    LoadingScale,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::ShapeWeights,
        Block::ShapeBias,
        Block::ScaleWeights,
        Block::ScaleBias,
        Block::LoadingShape,
        Block::LoadingScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::ShapeWeights => "W_k",
            Block::ShapeBias => "b_k",
            Block::ScaleWeights => "W_lambda",
            Block::ScaleBias => "b_lambda",
            Block::LoadingShape => "W1",
            Block::LoadingScale => "W2",
        }
    }
}

impl Dims {
    pub fn new(features: usize, latent: usize, classes: usize) -> Result<Self> {
        if features == 0 || latent == 0 || classes == 0 {
            return Err(BndlError::Config(format!(
                "dimensions must be positive, got D={features}, K={latent}, C={classes}"
            )));
        }
        Ok(Self {
            features,
            latent,
            classes,
        })
    }

    pub fn block_len(&self, block: Block) -> usize {
        let (d, k, c) = (self.features, self.latent, self.classes);
        match block {
            Block::ShapeWeights | Block::ScaleWeights => d * k,
            Block::ShapeBias | Block::ScaleBias => k,
            Block::LoadingShape | Block::LoadingScale => k * c,
        }
    }

    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        let mut start = 0;
        for b in Block::ALL {
            let len = self.block_len(b);
            if b == block {
                return start..start + len;
            }
            start += len;
        }
        unreachable!()
    }

    pub fn n_params(&self) -> usize {
        Block::ALL.iter().map(|b| self.block_len(*b)).sum()
    }

    /// Block owning flat index `i`.
    pub fn block_of(&self, i: usize) -> Block {
        Block::ALL
            .into_iter()
            .find(|b| self.block_range(*b).contains(&i))
            .expect("index within parameter vector")
    }
}

/// All weights of the decision layer plus its fixed hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: Dims,
    values: Vec<f64>,
    pub alpha_sparsity: f64,
    pub prior_theta: GammaParams,
    pub prior_phi: GammaParams,
}

impl ModelParams {
    pub fn from_values(dims: Dims, values: Vec<f64>, alpha_sparsity: f64) -> Result<Self> {
        if values.len() != dims.n_params() {
            return Err(BndlError::Shape(format!(
                "expected {} parameters for {:?}, got {}",
                dims.n_params(),
                dims,
                values.len()
            )));
        }
        if !(alpha_sparsity >= 0.0) || !alpha_sparsity.is_finite() {
            return Err(BndlError::Config(format!(
                "alpha_sparsity must be a finite non-negative number, got {alpha_sparsity}"
            )));
        }
        Ok(Self {
            dims,
            values,
            alpha_sparsity,
            prior_theta: GammaParams::STANDARD,
            prior_phi: GammaParams::STANDARD,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.values[self.dims.block_range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.dims.block_range(block);
        &mut self.values[r]
    }

    /// Pins every local and global shape at the upper clamp, where gradients
    /// through the shape heads vanish and the posteriors are near point masses.
    pub fn collapse_shapes(&mut self) {
        self.block_mut(Block::ShapeWeights).fill(0.0);
        self.block_mut(Block::ShapeBias)
            .fill(COLLAPSED_SHAPE_PREACT);
        self.block_mut(Block::LoadingShape)
            .fill(COLLAPSED_SHAPE_PREACT);
    }

    fn check_features(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.dims.features {
            return Err(BndlError::Shape(format!(
                "feature vector has length {}, model expects {}",
                h.len(),
                self.dims.features
            )));
        }
        Ok(())
    }

    /// Affine pre-activations (h·W_k + b_k, h·W_λ + b_λ).
    pub(crate) fn local_preactivations(&self, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.dims.latent;
        let mut a = self.block(Block::ShapeBias).to_vec();
        let mut z = self.block(Block::ScaleBias).to_vec();
        let wk = self.block(Block::ShapeWeights);
        let wl = self.block(Block::ScaleWeights);
        for (d, &hd) in h.iter().enumerate() {
            if hd == 0.0 {
                continue;
            }
            let row_k = &wk[d * k..(d + 1) * k];
            let row_l = &wl[d * k..(d + 1) * k];
            for j in 0..k {
                a[j] += hd * row_k[j];
                z[j] += hd * row_l[j];
            }
        }
        (a, z)
    }

    /// Local Weibull posterior q(θ | h).
    pub fn infer_local(&self, h: &[f64]) -> Result<LocalPosterior> {
        self.check_features(h)?;
        let (a, z) = self.local_preactivations(h);
        let shape: Vec<f64> = a.iter().map(|&v| clamp_shape(softplus(v))).collect();
        let scale = z
            .iter()
            .zip(&shape)
            .map(|(&zj, &kj)| local_mean(zj) / mean_factor(kj))
            .collect();
        Ok(LocalPosterior { shape, scale })
    }

    /// Global Weibull posterior q(Φ), with the ReLU(W2 − α) sparsifying activation.
    pub fn infer_global(&self) -> GlobalPosterior {
        let (k, c) = (self.dims.latent, self.dims.classes);
        let w1 = self.block(Block::LoadingShape);
        let w2 = self.block(Block::LoadingScale);
        let mut shape = Matrix::zeros(k, c);
        let mut scale = Matrix::zeros(k, c);
        for i in 0..k * c {
            let kk = clamp_shape(softplus(w1[i]));
            shape.as_mut_slice()[i] = kk;
            scale.as_mut_slice()[i] = global_mean(w2[i], self.alpha_sparsity) / mean_factor(kk);
        }
        GlobalPosterior { shape, scale }
    }

    /// Deterministic forward pass through posterior means (the NMF limit).
    pub fn expected_forward(&self, h: &[f64]) -> Result<PredictiveDistribution> {
        let lp = self.infer_local(h)?;
        let gp = self.infer_global();
        predict_proba(&lp.mean(), &gp.mean())
    }

    /// One reparameterized forward pass with fresh θ and Φ noise.
    pub fn sampled_forward<R: Rng + ?Sized>(
        &self,
        h: &[f64],
        gp: &GlobalPosterior,
        rng: &mut R,
    ) -> Result<PredictiveDistribution> {
        let lp = self.infer_local(h)?;
        let eps_theta: Vec<f64> = (0..self.dims.latent).map(|_| open_uniform(rng)).collect();
        let theta = sample_theta(&lp, &eps_theta)?;
        let eps_phi = Matrix::from_fn(self.dims.latent, self.dims.classes, |_, _| {
            open_uniform(rng)
        });
        let phi = sample_phi(gp, &eps_phi)?;
        predict_proba(&theta, &phi)
    }
}

/// Mean of a local factor: ReLU output floored at the minimum scale.
#[inline]
pub(crate) fn local_mean(z: f64) -> f64 {
    z.max(0.0).max(SCALE_MIN)
}

/// Mean of a loading entry: exactly zero when sparsified, otherwise floored.
#[inline]
pub(crate) fn global_mean(w2: f64, alpha: f64) -> f64 {
    let raw = (w2 - alpha).max(0.0);
    if raw > 0.0 {
        raw.max(SCALE_MIN)
    } else {
        0.0
    }
}

/// Randomly initialized parameters: scaled Gaussian heads with unit initial
/// shapes and means, and loading weights centred on 1.
pub fn init_model(dims: Dims, alpha_sparsity: f64, seed: u64) -> Result<ModelParams> {
    let dims = Dims::new(dims.features, dims.latent, dims.classes)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut p = ModelParams::from_values(dims, vec![0.0; dims.n_params()], alpha_sparsity)?;
    let std = 1.0 / (dims.features as f64).sqrt();
    for block in Block::ALL {
        let vals = p.block_mut(block);
        for v in vals.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = match block {
                Block::ShapeWeights | Block::ScaleWeights => std * n,
                Block::ShapeBias => UNIT_SHAPE_PREACT,
                Block::ScaleBias => 1.0,
                Block::LoadingShape => UNIT_SHAPE_PREACT + 0.1 * n,
                Block::LoadingScale => 1.0 + 0.1 * n,
            };
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalPosterior {
    pub shape: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LocalPosterior {
    pub fn mean(&self) -> Vec<f64> {
        self.shape
            .iter()
            .zip(&self.scale)
            .map(|(k, l)| l * mean_factor(*k))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPosterior {
    /// K×C shapes.
    pub shape: Matrix,
    /// K×C scales; sparsified entries are exactly zero.
    pub scale: Matrix,
}

impl GlobalPosterior {
    pub fn mean(&self) -> Matrix {
        let mut m = self.scale.clone();
        for (v, k) in m.as_mut_slice().iter_mut().zip(self.shape.as_slice()) {
            *v *= mean_factor(*k);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub probs: Vec<f64>,
    pub raw_scores: Vec<f64>,
}

fn check_noise(eps: &[f64]) -> Result<()> {
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(BndlError::Domain(format!(
            "reparameterization noise must lie in (0, 1), got {e}"
        )));
    }
    Ok(())
}

pub fn sample_theta(lp: &LocalPosterior, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != lp.shape.len() {
        return Err(BndlError::Shape(format!(
            "noise length {} does not match latent dim {}",
            eps.len(),
            lp.shape.len()
        )));
    }
    check_noise(eps)?;
    Ok(lp
        .shape
        .iter()
        .zip(&lp.scale)
        .zip(eps)
        .map(|((k, l), e)| sample_unchecked(*k, *l, *e))
        .collect())
}

pub fn sample_phi(gp: &GlobalPosterior, eps: &Matrix) -> Result<Matrix> {
    if eps.rows() != gp.shape.rows() || eps.cols() != gp.shape.cols() {
        return Err(BndlError::Shape(format!(
            "noise is {}x{}, loadings are {}x{}",
            eps.rows(),
            eps.cols(),
            gp.shape.rows(),
            gp.shape.cols()
        )));
    }
    check_noise(eps.as_slice())?;
    let mut out = gp.scale.clone();
    for ((o, k), e) in out
        .as_mut_slice()
        .iter_mut()
        .zip(gp.shape.as_slice())
        .zip(eps.as_slice())
    {
        *o = if *o == 0.0 {
            0.0
        } else {
            sample_unchecked(*k, *o, *e)
        };
    }
    Ok(out)
}

/// Raw scores u = θᵀΦ and their sum-normalized class probabilities.
pub fn predict_proba(theta: &[f64], phi: &Matrix) -> Result<PredictiveDistribution> {
    predict_proba_eps(theta, phi, EPS_CAT)
}

pub(crate) fn predict_proba_eps(
    theta: &[f64],
    phi: &Matrix,
    eps: f64,
) -> Result<PredictiveDistribution> {
    if theta.len() != phi.rows() {
        return Err(BndlError::Shape(format!(
            "theta has length {}, loadings have {} rows",
            theta.len(),
            phi.rows()
        )));
    }
    if theta.iter().chain(phi.as_slice()).any(|v| !(*v >= 0.0)) {
        return Err(BndlError::Domain(
            "predict_proba requires non-negative theta and loadings".into(),
        ));
    }
    let raw_scores = raw_scores(theta, phi);
    let probs = crate::numkernel::normalize_nonneg(&raw_scores, eps)?;
    Ok(PredictiveDistribution { probs, raw_scores })
}

pub(crate) fn raw_scores(theta: &[f64], phi: &Matrix) -> Vec<f64> {
    let mut u = vec![0.0; phi.cols()];
    for (k, &t) in theta.iter().enumerate() {
        for (uc, p) in u.iter_mut().zip(phi.row(k)) {
            *uc += t * p;
        }
    }
    u
}

/// ln p(y | θ, Φ) under the categorical likelihood.
pub fn log_likelihood(y: usize, pd: &PredictiveDistribution) -> Result<f64> {
    pd.probs.get(y).map(|p| p.ln()).ok_or_else(|| {
        BndlError::Label(format!(
            "label {y} out of range for {} classes",
            pd.probs.len()
        ))
    })
}
