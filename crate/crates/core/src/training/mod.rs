//! ELBO training of the decision layer.

pub mod checkpoint;
pub mod objective;
pub mod optimizer;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{BndlError, Result};
use crate::metrics::{accuracy, PredictionMode};
use crate::model::{init_model, Dims, ModelParams};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use objective::{
    elbo_batch, elbo_value, grad_check, random_grad_check, ElboBatch, GradCheckReport,
    GradCheckSpec, Gradient, Noise, ObjectiveScale,
};
pub use optimizer::{OptimizerConfig, OptimizerKind, OptimizerState};

/// Stream index used for shuffling and noise, distinct from initialization.
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub alpha_sparsity: f64,
    pub mc_samples_per_step: usize,
    pub kl_scale_local: f64,
    /// Label observations behind each row (e.g. counts behind a soft target).
    pub row_weight: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            epochs: 50,
            batch_size: 128,
            seed: 0,
            alpha_sparsity: 0.0,
            mc_samples_per_step: 1,
            kl_scale_local: 1.0,
            row_weight: 1.0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let o = &self.optimizer;
        let bad = |what: &str| Err(BndlError::Config(what.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.batch_size > n_samples {
            return Err(BndlError::Config(format!(
                "batch_size {} exceeds dataset size {n_samples}",
                self.batch_size
            )));
        }
        if self.mc_samples_per_step == 0 {
            return bad("mc_samples_per_step must be positive");
        }
        if !(o.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.kl_scale_local >= 0.0) || !(o.weight_decay >= 0.0) {
            return bad("kl_scale_local and weight_decay must be non-negative");
        }
        if !(self.row_weight > 0.0 && self.row_weight.is_finite()) {
            return bad("row_weight must be positive");
        }
        if !(self.alpha_sparsity >= 0.0) {
            return bad("alpha_sparsity must be non-negative");
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }

    /// `key=value` pairs describing every field, floats in round-trip form.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let o = &self.optimizer;
        vec![
            ("latent_dim".into(), self.latent_dim.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            (
                "alpha_sparsity".into(),
                format!("{:?}", self.alpha_sparsity),
            ),
            (
                "mc_samples_per_step".into(),
                self.mc_samples_per_step.to_string(),
            ),
            (
                "kl_scale_local".into(),
                format!("{:?}", self.kl_scale_local),
            ),
            ("row_weight".into(), format!("{:?}", self.row_weight)),
            ("optimizer".into(), o.kind.as_str().into()),
            ("learning_rate".into(), format!("{:?}", o.learning_rate)),
            ("adam_beta1".into(), format!("{:?}", o.beta1)),
            ("adam_beta2".into(), format!("{:?}", o.beta2)),
            ("adam_eps".into(), format!("{:?}", o.eps)),
            ("momentum".into(), format!("{:?}", o.momentum)),
            ("weight_decay".into(), format!("{:?}", o.weight_decay)),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| BndlError::Config(format!("bad value `{v}` for `{k}`")))
        }
        let mut c = TrainConfig::default();
        for (k, v) in pairs {
            match k {
                "latent_dim" => c.latent_dim = num(k, v)?,
                "epochs" => c.epochs = num(k, v)?,
                "batch_size" => c.batch_size = num(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "alpha_sparsity" => c.alpha_sparsity = num(k, v)?,
                "mc_samples_per_step" => c.mc_samples_per_step = num(k, v)?,
                "kl_scale_local" => c.kl_scale_local = num(k, v)?,
                "row_weight" => c.row_weight = num(k, v)?,
                "optimizer" => c.optimizer.kind = v.parse()?,
                "learning_rate" => c.optimizer.learning_rate = num(k, v)?,
                "adam_beta1" => c.optimizer.beta1 = num(k, v)?,
                "adam_beta2" => c.optimizer.beta2 = num(k, v)?,
                "adam_eps" => c.optimizer.eps = num(k, v)?,
                "momentum" => c.optimizer.momentum = num(k, v)?,
                "weight_decay" => c.optimizer.weight_decay = num(k, v)?,
                other => return Err(BndlError::Config(format!("unknown config key `{other}`"))),
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-sample ELBO estimate averaged over the epoch's minibatches.
    pub elbo: f64,
    pub log_likelihood: f64,
    pub local_kl: f64,
    pub global_kl: f64,
    /// Expected-mode accuracy on the training set after the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub optimizer: OptimizerState,
    /// Word position of the training RNG stream after the last epoch.
    pub rng_word_pos: u128,
}

/// Trains a freshly initialized model.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate(data.len())?;
    let dims = Dims::new(data.dim(), config.latent_dim, data.n_classes)?;
    let params = init_model(dims, config.alpha_sparsity, config.seed)?;
    train_from(data, config, params)
}

/// Trains starting from `params`; the config's `alpha_sparsity` overrides the model's.
pub fn train_from(
    data: &Dataset,
    config: &TrainConfig,
    mut params: ModelParams,
) -> Result<TrainOutcome> {
    config.validate(data.len())?;
    let dims = params.dims();
    if dims.features != data.dim() || dims.classes != data.n_classes {
        return Err(BndlError::Ingestion(format!(
            "dataset has D={}, C={}; model expects D={}, C={}",
            data.dim(),
            data.n_classes,
            dims.features,
            dims.classes
        )));
    }
    params.alpha_sparsity = config.alpha_sparsity;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut state = OptimizerState::new(dims.n_params());
    let mut history = TrainHistory::default();
    let scale = ObjectiveScale {
        n_total: data.len(),
        kl_scale_local: config.kl_scale_local,
        row_weight: config.row_weight,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut elbo_sum = 0.0;
        let mut ll_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut global_kl = 0.0;
        for batch in order.chunks(config.batch_size) {
            let noise = Noise::draw(&mut rng, config.mc_samples_per_step, batch.len(), dims);
            let out = elbo_batch(&params, data, batch, &noise, scale)?;
            let w = batch.len() as f64;
            elbo_sum += out.objective * w;
            ll_sum += out.log_likelihood * w;
            kl_sum += out.local_kl * w;
            global_kl = out.global_kl;
            state.apply(
                params.values_mut(),
                &out.grad.values,
                &config.optimizer,
                |i| dims.block_of(i).name(),
            )?;
        }
        let n = data.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            elbo: elbo_sum / n,
            log_likelihood: ll_sum / n,
            local_kl: kl_sum / n,
            global_kl,
            train_accuracy: accuracy(&params, data, PredictionMode::Expected, 0)?,
        });
    }
    Ok(TrainOutcome {
        params,
        history,
        optimizer: state,
        rng_word_pos: rng.get_word_pos(),
    })
}
