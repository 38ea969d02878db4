use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::policy::NetworkShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    Adam,
    Sgd,
}

/// Which reward signal the trainer optimizes. Metrics always report both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Normalized,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    /// Passes over each batch.
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub n_envs: usize,
    /// Steps per environment per epoch; the batch size N is `n_envs * steps_per_env`.
    pub steps_per_env: usize,
    pub total_timesteps: u64,
    pub optimizer: OptimizerMode,
    pub adam_eps: f64,
    /// Per-epoch bound on the empirical KL(π_old ‖ π_new) over the batch.
    pub kl_budget: Option<f64>,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
    pub reward: RewardMode,
    /// Write a rollout archive every this many epochs (0 disables).
    pub archive_every: u64,
    pub dump_records: bool,
    pub network: NetworkShape,
    pub env: EnvConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            learning_rate: 3e-4,
            update_epochs: 4,
            minibatch_size: 256,
            n_envs: 16,
            steps_per_env: 128,
            total_timesteps: 200_000,
            optimizer: OptimizerMode::Adam,
            adam_eps: 1e-5,
            kl_budget: None,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
            reward: RewardMode::Normalized,
            archive_every: 10,
            dump_records: true,
            network: NetworkShape::default(),
            env: EnvConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn batch_size(&self) -> usize {
        self.n_envs * self.steps_per_env
    }

    /// Number of collect/update epochs needed to reach `total_timesteps`.
    pub fn epochs(&self) -> u64 {
        self.total_timesteps.div_ceil(self.batch_size() as u64)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            clip_eps: self.clip_eps,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            normalize_advantages: self.normalize_advantages,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return fail("gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return fail("clip_eps must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and non-negative");
        }
        if self.n_envs == 0 || self.steps_per_env == 0 {
            return fail("batch size must be positive");
        }
        if self.minibatch_size == 0 || self.minibatch_size > self.batch_size() {
            return fail("minibatch_size must lie in 1..=batch size");
        }
        if self.update_epochs == 0 {
            return fail("update_epochs must be positive");
        }
        if self.total_timesteps == 0 {
            return fail("total_timesteps must be positive");
        }
        if matches!(self.kl_budget, Some(b) if !(b > 0.0)) {
            return fail("kl_budget must be positive");
        }
        if matches!(self.max_grad_norm, Some(g) if !(g > 0.0)) {
            return fail("max_grad_norm must be positive");
        }
        if !(self.adam_eps > 0.0) || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return fail("coefficients must be non-negative");
        }
        self.network.validate()?;
        self.env.validate()
    }

    pub fn hash(&self) -> String {
        crate::util::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())[..16].to_string()
    }
}
