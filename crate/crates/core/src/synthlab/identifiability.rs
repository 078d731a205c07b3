//! Scoring recovered factors against a planted instance.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{BndlError, Result};
use crate::model::{init_model, Dims};
use crate::synthlab::hungarian::hungarian_match;
use crate::synthlab::nmf::relative_residual;
use crate::synthlab::prop1::Prop1Instance;
use crate::training::{train_from, OptimizerConfig, TrainConfig};

pub const RECOVERY_THRESHOLD: f64 = 0.95;
pub const IDENTIFIABILITY_ROW_WEIGHT: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub window_cols: Vec<usize>,
    /// Column of θ̂ matched to each windowed column of θ*.
    pub matched_cols: Vec<usize>,
    pub cosines: Vec<f64>,
    pub threshold: f64,
    pub pass: bool,
    /// `‖Y − θ̂Φ̂‖_F / ‖Y‖_F` when loadings were fitted.
    pub residual: Option<f64>,
}

/// Matches the windowed columns of θ* to distinct columns of `theta_hat` by
/// cosine. Non-windowed truth columns take no part, so they cannot affect
/// the verdict.
pub fn recovery_score(instance: &Prop1Instance, theta_hat: &Matrix) -> Result<RecoveryReport> {
    if theta_hat.rows() != instance.m() {
        return Err(BndlError::Shape(format!(
            "theta_hat has {} rows, instance has {}",
            theta_hat.rows(),
            instance.m()
        )));
    }
    let truth = instance.theta_star.select_columns(&instance.window_cols);
    let matching = hungarian_match(&truth, theta_hat)?;
    let cosines: Vec<f64> = matching.cosines.iter().map(|c| c.clamp(0.0, 1.0)).collect();
    let pass = cosines.iter().all(|&c| c >= RECOVERY_THRESHOLD);
    Ok(RecoveryReport {
        window_cols: instance.window_cols.clone(),
        matched_cols: matching.columns,
        cosines,
        threshold: RECOVERY_THRESHOLD,
        pass,
        residual: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiabilityConfig {
    pub train: TrainConfig,
    /// Pin all shapes at the upper clamp before training.
    pub collapse: bool,
}

impl IdentifiabilityConfig {
    /// Full-batch Adam settings that fit the reference instances. Each row of
    /// `Y` is treated as `IDENTIFIABILITY_ROW_WEIGHT` label observations.
    pub fn for_instance(instance: &Prop1Instance, alpha_sparsity: f64, seed: u64) -> Self {
        Self {
            train: TrainConfig {
                latent_dim: instance.rank,
                epochs: 3000,
                batch_size: instance.m(),
                seed,
                alpha_sparsity,
                mc_samples_per_step: 1,
                kl_scale_local: 1.0,
                row_weight: IDENTIFIABILITY_ROW_WEIGHT,
                optimizer: OptimizerConfig {
                    learning_rate: 0.02,
                    ..Default::default()
                },
            },
            collapse: false,
        }
    }
}

/// One-hot features with row-normalized `Y` as soft targets.
pub fn identifiability_dataset(instance: &Prop1Instance) -> Result<Dataset> {
    let m = instance.m();
    let features = Matrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 });
    Dataset::with_soft_targets(features, instance.y.clone())
}

/// Trains the decision layer on the instance and scores its mean factors.
///
/// The layer models each normalized row of `Y` as `θ̂_i Φ̂ / Σ θ̂_i Φ̂`. Moving
/// the row sums of Φ̂ into θ̂ and restoring the row mass of `Y` yields a
/// factor `θ` with `Y ≈ θ·Φ̃` for row-stochastic `Φ̃`, which is scored.
pub fn bndl_identifiability_run(
    instance: &Prop1Instance,
    config: &IdentifiabilityConfig,
) -> Result<RecoveryReport> {
    let data = identifiability_dataset(instance)?;
    let dims = Dims::new(instance.m(), config.train.latent_dim, instance.n())?;
    let mut params = init_model(dims, config.train.alpha_sparsity, config.train.seed)?;
    if config.collapse {
        params.collapse_shapes();
    }
    let out = train_from(&data, &config.train, params)?;
    let p = out.params;
    let phi_mean = p.infer_global().mean();
    let k = dims.latent;
    let rho: Vec<f64> = (0..k).map(|l| phi_mean.row(l).iter().sum()).collect();
    let mut theta = Matrix::zeros(instance.m(), k);
    for i in 0..instance.m() {
        let mut h = vec![0.0; instance.m()];
        h[i] = 1.0;
        let mean = p.infer_local(&h)?.mean();
        let weighted: Vec<f64> = mean.iter().zip(&rho).map(|(t, r)| t * r).collect();
        let total: f64 = weighted.iter().sum();
        let row_mass: f64 = instance.y.row(i).iter().sum();
        if total > 0.0 {
            for (l, w) in weighted.iter().enumerate() {
                theta.set(i, l, row_mass * w / total);
            }
        }
    }
    let phi = Matrix::from_fn(k, instance.n(), |l, j| {
        if rho[l] > 0.0 {
            phi_mean.get(l, j) / rho[l]
        } else {
            0.0
        }
    });
    let mut report = recovery_score(instance, &theta)?;
    report.residual = Some(relative_residual(&instance.y, &theta, &phi));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::prop1::gen_prop1_instance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn truth_scores_perfectly() {
        let inst = gen_prop1_instance(20, 15, 4, 2, 1).unwrap();
        let rep = recovery_score(&inst, &inst.theta_star).unwrap();
        assert!(rep.pass);
        assert!(rep.cosines.iter().all(|c| (c - 1.0).abs() < 1e-12));
        assert_eq!(rep.matched_cols, inst.window_cols);
    }

    #[test]
    fn only_window_columns_matter() {
        let inst = gen_prop1_instance(20, 15, 4, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut noisy = inst.theta_star.clone();
        for k in (0..4).filter(|k| !inst.window_cols.contains(k)) {
            for i in 0..20 {
                noisy.set(i, k, rng.random::<f64>());
            }
        }
        let rep = recovery_score(&inst, &noisy).unwrap();
        assert!(rep.pass);
        assert!(rep.cosines.iter().all(|c| (c - 1.0).abs() < 1e-12));

        let mut blinded = inst.clone();
        for k in (0..4).filter(|k| !inst.window_cols.contains(k)) {
            for i in 0..20 {
                blinded.theta_star.set(i, k, rng.random::<f64>());
            }
        }
        let fitted = noisy;
        assert_eq!(
            recovery_score(&inst, &fitted).unwrap().pass,
            recovery_score(&blinded, &fitted).unwrap().pass
        );
    }
}
