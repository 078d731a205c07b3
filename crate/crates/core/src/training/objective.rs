//! Minibatch ELBO and its analytic gradient.
//!
//! The per-sample objective is
//!
//! ```text
//! (1/B) Σ_j [ E_q ln p(y_j | θ_j, Φ) − (s/T)·KL(q(θ_j) ‖ p(θ)) ] − (1/(N·T)) KL(q(Φ) ‖ p(Φ))
//! ```
//!
//! where `T` is the number of label observations behind each row (1 for
//! ordinary labelled data), with the expectation replaced by reparameterized
//! Weibull draws. Gradients
//! flow pathwise through the samples, the Γ(1 + 1/k) mean-preserving divisor,
//! the clamped softplus shape heads and the rectified scale heads.

use rand::Rng;

use crate::data::{Dataset, Targets};
use crate::distributions::{
    kl_weibull_gamma, kl_weibull_gamma_grad, mean_factor, mean_factor_grad, open_uniform,
    sample_grad_unchecked, sample_unchecked, WeibullParams, SCALE_MIN, SHAPE_MAX, SHAPE_MIN,
};
use crate::error::{BndlError, Result};
use crate::model::{global_mean, local_mean, Block, Dims, ModelParams, EPS_CAT};
use crate::numkernel::{sigmoid, softplus};

/// Uniform reparameterization noise for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub mc_samples: usize,
    pub batch: usize,
    /// `mc_samples × batch × K`, row-major.
    pub theta: Vec<f64>,
    /// `mc_samples × K × C`, one loading draw shared by the batch per MC sample.
    pub phi: Vec<f64>,
}

impl Noise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, mc_samples: usize, batch: usize, dims: Dims) -> Self {
        let k = dims.latent;
        let kc = dims.latent * dims.classes;
        let mut theta = Vec::with_capacity(mc_samples * batch * k);
        let mut phi = Vec::with_capacity(mc_samples * kc);
        for _ in 0..mc_samples {
            for _ in 0..kc {
                phi.push(open_uniform(rng));
            }
            for _ in 0..batch * k {
                theta.push(open_uniform(rng));
            }
        }
        Self {
            mc_samples,
            batch,
            theta,
            phi,
        }
    }
}

/// Weights that turn a batch objective into a per-sample ELBO estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveScale {
    /// Total number of training samples N; the global KL is divided by it.
    pub n_total: usize,
    /// Multiplier on the local KL term.
    pub kl_scale_local: f64,
    /// Label observations behind each row. The likelihood is per observation,
    /// so both KL terms are divided by it.
    pub row_weight: f64,
}

/// Flat gradient laid out like [`ModelParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dims: Dims,
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.n_params()],
        }
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.values[self.dims.block_range(block)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboBatch {
    pub objective: f64,
    /// Batch mean of the Monte Carlo log-likelihood.
    pub log_likelihood: f64,
    /// Batch mean of the (unscaled) local KL.
    pub local_kl: f64,
    /// Global KL, not divided by N.
    pub global_kl: f64,
    pub grad: Gradient,
}

/// Shape head: clamp(softplus(a)) and its derivative (zero outside the clamp).
#[inline]
fn shape_head(a: f64) -> (f64, f64) {
    let sp = softplus(a);
    if sp <= SHAPE_MIN {
        (SHAPE_MIN, 0.0)
    } else if sp >= SHAPE_MAX {
        (SHAPE_MAX, 0.0)
    } else {
        (sp, sigmoid(a))
    }
}

/// A mean-parameterized Weibull factor with partials of its scale.
struct Factor {
    shape: f64,
    scale: f64,
    /// ∂λ/∂k at fixed mean.
    dscale_dshape: f64,
    /// ∂λ/∂mean.
    dscale_dmean: f64,
}

impl Factor {
    fn new(shape: f64, mean: f64) -> Self {
        let g = mean_factor(shape);
        Self {
            shape,
            scale: mean / g,
            dscale_dshape: -mean * mean_factor_grad(shape) / (g * g),
            dscale_dmean: 1.0 / g,
        }
    }

    fn weibull(&self) -> WeibullParams {
        WeibullParams {
            shape: self.shape,
            scale: self.scale,
        }
    }
}

fn target_row(data: &Dataset, i: usize, buf: &mut [f64]) {
    match &data.targets {
        Targets::Hard(labels) => {
            buf.fill(0.0);
            buf[labels[i]] = 1.0;
        }
        Targets::Soft(t) => buf.copy_from_slice(t.row(i)),
    }
}

fn check_batch(p: &ModelParams, data: &Dataset, indices: &[usize], noise: &Noise) -> Result<()> {
    let dims = p.dims();
    if indices.is_empty() {
        return Err(BndlError::Config("empty minibatch".into()));
    }
    if data.dim() != dims.features || data.n_classes != dims.classes {
        return Err(BndlError::Shape(format!(
            "dataset has D={}, C={}; model expects D={}, C={}",
            data.dim(),
            data.n_classes,
            dims.features,
            dims.classes
        )));
    }
    if let Some(&i) = indices.iter().find(|i| **i >= data.len()) {
        return Err(BndlError::Shape(format!("batch index {i} outside dataset")));
    }
    let s = noise.mc_samples;
    if s == 0
        || noise.batch != indices.len()
        || noise.theta.len() != s * indices.len() * dims.latent
        || noise.phi.len() != s * dims.latent * dims.classes
    {
        return Err(BndlError::Shape(
            "noise layout does not match the batch".into(),
        ));
    }
    Ok(())
}

/// Objective value only; used by finite-difference checks.
pub fn elbo_value(
    p: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    noise: &Noise,
    scale: ObjectiveScale,
) -> Result<f64> {
    elbo_batch(p, data, indices, noise, scale).map(|e| e.objective)
}

/// Minibatch ELBO estimate and its exact gradient under frozen `noise`.
pub fn elbo_batch(
    p: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    noise: &Noise,
    scale: ObjectiveScale,
) -> Result<ElboBatch> {
    check_batch(p, data, indices, noise)?;
    let dims = p.dims();
    let (d_dim, k_dim, c_dim) = (dims.features, dims.latent, dims.classes);
    let kc = k_dim * c_dim;
    let b = indices.len();
    let n_mc = noise.mc_samples;
    let ll_weight = 1.0 / (b as f64 * n_mc as f64);
    let local_kl_weight = scale.kl_scale_local / (b as f64 * scale.row_weight);
    let global_kl_weight = 1.0 / (scale.n_total.max(1) as f64 * scale.row_weight);

    let mut grad = Gradient::zeros(dims);
    let range = |blk| dims.block_range(blk);

    // Global posterior and its local derivatives.
    let w1 = p.block(Block::LoadingShape);
    let w2 = p.block(Block::LoadingScale);
    let mut g_shape_da = vec![0.0; kc];
    let mut g_mean_dw = vec![0.0; kc];
    let mut g_factor = Vec::with_capacity(kc);
    let mut g_sparse = vec![false; kc];
    let mut g_mean = vec![0.0; kc];
    for i in 0..kc {
        let (kk, dk) = shape_head(w1[i]);
        let m = global_mean(w2[i], p.alpha_sparsity);
        g_mean[i] = m;
        g_shape_da[i] = dk;
        g_mean_dw[i] = if w2[i] - p.alpha_sparsity > SCALE_MIN {
            1.0
        } else {
            0.0
        };
        g_sparse[i] = m == 0.0;
        g_factor.push(Factor::new(kk, m));
    }
    // Accumulated ∂objective/∂(k_Φ, λ_Φ).
    let mut gphi_dk = vec![0.0; kc];
    let mut gphi_dl = vec![0.0; kc];

    // Global KL, evaluated at the floored mean for sparsified entries.
    let mut global_kl = 0.0;
    for i in 0..kc {
        let f = Factor::new(g_factor[i].shape, g_mean[i].max(SCALE_MIN));
        let w = f.weibull();
        global_kl += kl_weibull_gamma(w, p.prior_phi);
        let (dk, dl) = kl_weibull_gamma_grad(w, p.prior_phi);
        let gk = -global_kl_weight * (dk + dl * f.dscale_dshape);
        let gm = -global_kl_weight * dl * f.dscale_dmean;
        grad.values[range(Block::LoadingShape).start + i] += gk * g_shape_da[i];
        grad.values[range(Block::LoadingScale).start + i] += gm * g_mean_dw[i];
    }

    // Loading draws for each MC sample.
    let mut phi = vec![0.0; n_mc * kc];
    let mut phi_dk = vec![0.0; n_mc * kc];
    let mut phi_dl = vec![0.0; n_mc * kc];
    for s in 0..n_mc {
        for i in 0..kc {
            if g_sparse[i] {
                continue;
            }
            let f = &g_factor[i];
            let e = noise.phi[s * kc + i];
            phi[s * kc + i] = sample_unchecked(f.shape, f.scale, e);
            let (dk, dl) = sample_grad_unchecked(f.shape, f.scale, e);
            phi_dk[s * kc + i] = dk;
            phi_dl[s * kc + i] = dl;
        }
    }

    let mut ll_total = 0.0;
    let mut local_kl_total = 0.0;
    let mut target = vec![0.0; c_dim];
    let mut u = vec![0.0; c_dim];
    let mut du = vec![0.0; c_dim];
    let mut theta = vec![0.0; k_dim];
    let mut theta_dk = vec![0.0; k_dim];
    let mut theta_dl = vec![0.0; k_dim];
    let mut g_a = vec![0.0; k_dim];
    let mut g_z = vec![0.0; k_dim];

    for (j, &row) in indices.iter().enumerate() {
        let h = data.features.row(row);
        target_row(data, row, &mut target);
        let t_total: f64 = target.iter().sum();

        let (a, z) = p.local_preactivations(h);
        let heads: Vec<(f64, f64)> = a.iter().map(|&v| shape_head(v)).collect();
        let factors: Vec<Factor> = heads
            .iter()
            .zip(&z)
            .map(|(&(kk, _), &zj)| Factor::new(kk, local_mean(zj)))
            .collect();
        // ∂objective/∂(k_j, λ_j)
        let mut gk = vec![0.0; k_dim];
        let mut gl = vec![0.0; k_dim];

        for s in 0..n_mc {
            let eps = &noise.theta[(s * b + j) * k_dim..(s * b + j + 1) * k_dim];
            for kk in 0..k_dim {
                let f = &factors[kk];
                theta[kk] = sample_unchecked(f.shape, f.scale, eps[kk]);
                let (dk, dl) = sample_grad_unchecked(f.shape, f.scale, eps[kk]);
                theta_dk[kk] = dk;
                theta_dl[kk] = dl;
            }
            let phi_s = &phi[s * kc..(s + 1) * kc];
            u.fill(0.0);
            for kk in 0..k_dim {
                let t = theta[kk];
                for c in 0..c_dim {
                    u[c] += t * phi_s[kk * c_dim + c];
                }
            }
            let total: f64 = u.iter().map(|v| v + EPS_CAT).sum();
            let ln_total = total.ln();
            let mut ll = 0.0;
            for c in 0..c_dim {
                if target[c] != 0.0 {
                    ll += target[c] * ((u[c] + EPS_CAT).ln() - ln_total);
                }
                du[c] = ll_weight * (target[c] / (u[c] + EPS_CAT) - t_total / total);
            }
            ll_total += ll;

            for kk in 0..k_dim {
                let row_phi = &phi_s[kk * c_dim..(kk + 1) * c_dim];
                let dtheta: f64 = row_phi.iter().zip(&du).map(|(p, g)| p * g).sum();
                gk[kk] += dtheta * theta_dk[kk];
                gl[kk] += dtheta * theta_dl[kk];
                let t = theta[kk];
                for c in 0..c_dim {
                    let i = kk * c_dim + c;
                    if g_sparse[i] {
                        continue;
                    }
                    let dphi = t * du[c];
                    gphi_dk[i] += dphi * phi_dk[s * kc + i];
                    gphi_dl[i] += dphi * phi_dl[s * kc + i];
                }
            }
        }

        // Local KL.
        for kk in 0..k_dim {
            let f = &factors[kk];
            let w = f.weibull();
            local_kl_total += kl_weibull_gamma(w, p.prior_theta);
            let (dk, dl) = kl_weibull_gamma_grad(w, p.prior_theta);
            gk[kk] -= local_kl_weight * dk;
            gl[kk] -= local_kl_weight * dl;
        }

        // Through the mean-preserving divisor to the heads' pre-activations.
        for kk in 0..k_dim {
            let f = &factors[kk];
            let dmean_dz = if z[kk] > SCALE_MIN { 1.0 } else { 0.0 };
            g_a[kk] = (gk[kk] + gl[kk] * f.dscale_dshape) * heads[kk].1;
            g_z[kk] = gl[kk] * f.dscale_dmean * dmean_dz;
        }
        let wk0 = range(Block::ShapeWeights).start;
        let wl0 = range(Block::ScaleWeights).start;
        for d in 0..d_dim {
            let hd = h[d];
            if hd == 0.0 {
                continue;
            }
            for kk in 0..k_dim {
                grad.values[wk0 + d * k_dim + kk] += hd * g_a[kk];
                grad.values[wl0 + d * k_dim + kk] += hd * g_z[kk];
            }
        }
        let bk0 = range(Block::ShapeBias).start;
        let bl0 = range(Block::ScaleBias).start;
        for kk in 0..k_dim {
            grad.values[bk0 + kk] += g_a[kk];
            grad.values[bl0 + kk] += g_z[kk];
        }
    }

    // Loading gradients from the likelihood.
    let w10 = range(Block::LoadingShape).start;
    let w20 = range(Block::LoadingScale).start;
    for i in 0..kc {
        if g_sparse[i] {
            continue;
        }
        let f = &g_factor[i];
        grad.values[w10 + i] += (gphi_dk[i] + gphi_dl[i] * f.dscale_dshape) * g_shape_da[i];
        grad.values[w20 + i] += gphi_dl[i] * f.dscale_dmean * g_mean_dw[i];
    }

    let log_likelihood = ll_total / (b * n_mc) as f64;
    let local_kl = local_kl_total / b as f64;
    let objective = log_likelihood
        - scale.kl_scale_local / scale.row_weight * local_kl
        - global_kl_weight * global_kl;
    Ok(ElboBatch {
        objective,
        log_likelihood,
        local_kl,
        global_kl,
        grad,
    })
}

/// Which side of every non-smooth point each activation currently sits on.
fn branch_signature(p: &ModelParams, data: &Dataset, indices: &[usize]) -> Vec<u8> {
    let mut sig = Vec::new();
    let code = |a: f64, z: f64, z_offset: f64| -> u8 {
        let sp = softplus(a);
        let mut c = 0u8;
        if sp > SHAPE_MIN {
            c |= 1;
        }
        if sp < SHAPE_MAX {
            c |= 2;
        }
        if z - z_offset > 0.0 {
            c |= 4;
        }
        if z - z_offset > SCALE_MIN {
            c |= 8;
        }
        c
    };
    for &i in indices {
        let (a, z) = p.local_preactivations(data.features.row(i));
        sig.extend(a.iter().zip(&z).map(|(a, z)| code(*a, *z, 0.0)));
    }
    let w1 = p.block(Block::LoadingShape);
    let w2 = p.block(Block::LoadingScale);
    sig.extend(
        w1.iter()
            .zip(w2)
            .map(|(a, z)| code(*a, *z, p.alpha_sparsity)),
    );
    sig
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat parameter index of the worst coordinate.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because a perturbation would cross a kink.
    pub skipped_kinks: usize,
}

/// Central-difference check of [`elbo_batch`]'s gradient over every coordinate.
///
/// Relative error is |analytic − fd| / max(|analytic|, |fd|, 1e-8).
pub fn grad_check(
    p: &ModelParams,
    data: &Dataset,
    indices: &[usize],
    noise: &Noise,
    scale: ObjectiveScale,
    fd_step: f64,
) -> Result<GradCheckReport> {
    let analytic = elbo_batch(p, data, indices, noise, scale)?.grad;
    let base_sig = branch_signature(p, data, indices);
    let mut probe = p.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in 0..p.values().len() {
        let orig = p.values()[i];
        let mut crosses = false;
        for delta in [2.0 * fd_step, -2.0 * fd_step] {
            probe.values_mut()[i] = orig + delta;
            if branch_signature(&probe, data, indices) != base_sig {
                crosses = true;
            }
        }
        if crosses {
            probe.values_mut()[i] = orig;
            report.skipped_kinks += 1;
            continue;
        }
        probe.values_mut()[i] = orig + fd_step;
        let plus = elbo_value(&probe, data, indices, noise, scale)?;
        probe.values_mut()[i] = orig - fd_step;
        let minus = elbo_value(&probe, data, indices, noise, scale)?;
        probe.values_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * fd_step);
        let a = analytic.values[i];
        let denom = a.abs().max(fd.abs()).max(1e-8);
        let rel = (a - fd).abs() / denom;
        report.checked += 1;
        if report.worst_index.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// Shape of a randomized gradient-check problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSpec {
    pub batch: usize,
    pub features: usize,
    pub latent: usize,
    pub classes: usize,
    pub mc_samples: usize,
    pub fd_step: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self {
            batch: 16,
            features: 8,
            latent: 6,
            classes: 3,
            mc_samples: 2,
            fd_step: 1e-5,
        }
    }
}

/// Runs [`grad_check`] on a random model, batch and noise draw derived from `seed`.
///
/// Parameters are the standard initialization plus N(0, 0.3²) jitter, so
/// shapes spread away from one; `alpha_sparsity = 0.05` and a few loading
/// entries are pushed below it to exercise the sparsified branch.
pub fn random_grad_check(seed: u64, spec: GradCheckSpec) -> Result<GradCheckReport> {
    use rand_distr::{Distribution, StandardNormal};
    let dims = Dims::new(spec.features, spec.latent, spec.classes)?;
    if spec.batch == 0 || spec.mc_samples == 0 || !(spec.fd_step > 0.0) {
        return Err(BndlError::Config(
            "gradcheck needs a positive batch, MC count and step".into(),
        ));
    }
    let mut rng = crate::rng::run_stream(seed, 3);
    let mut p = crate::model::init_model(dims, 0.05, seed)?;
    for v in p.values_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += 0.3 * z;
    }
    let w2 = p.block_mut(Block::LoadingScale);
    let n_off = (w2.len() / 5).max(1);
    for v in w2.iter_mut().take(n_off) {
        *v = -0.5;
    }
    let feats = crate::data::Matrix::from_fn(spec.batch, spec.features, |_, _| {
        StandardNormal.sample(&mut rng)
    });
    let labels = (0..spec.batch)
        .map(|_| rng.random_range(0..spec.classes))
        .collect();
    let data = Dataset::new(feats, labels, spec.classes)?;
    let noise = Noise::draw(&mut rng, spec.mc_samples, spec.batch, dims);
    let idx: Vec<usize> = (0..spec.batch).collect();
    let scale = ObjectiveScale {
        n_total: 10 * spec.batch,
        kl_scale_local: 1.0,
        row_weight: 1.0,
    };
    grad_check(&p, &data, &idx, &noise, scale, spec.fd_step)
}
