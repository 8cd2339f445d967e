//! Soft actor-critic with twin critics, target networks and automatic
//! entropy tuning. The actor is a plain MLP, the mixture-of-experts actor,
//! or an MLP whose observation carries the active mode parameter.

pub mod agent;
pub mod replay;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

pub use agent::{ActOutput, ActorLoss, ActorNet, Agent, UpdateStats};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use trainer::{EpisodeMetrics, Losses, Trainer, TrainerSinks};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActorKind {
    #[serde(rename = "sac")]
    Sac,
    #[serde(rename = "sac-moe")]
    SacMoe,
    /// Plain MLP with the oracle mode parameter appended to the observation.
    #[serde(rename = "sac-uptrue")]
    SacUpTrue,
}

impl ActorKind {
    pub fn uses_oracle(self) -> bool {
        self == ActorKind::SacUpTrue
    }
}

impl std::str::FromStr for ActorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sac" => Ok(ActorKind::Sac),
            "sac-moe" | "moe" => Ok(ActorKind::SacMoe),
            "sac-uptrue" | "uptrue" => Ok(ActorKind::SacUpTrue),
            _ => Err(Error::Config(format!("unknown model `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Uniform-random actions before the first update.
    pub warmup_steps: u64,
    /// Gradient updates per environment step after warm-up.
    pub updates_per_step: usize,
    pub optimizer: AdamConfig,
    pub init_alpha: f64,
    pub auto_alpha: bool,
    /// Defaults to `-act_dim`.
    pub target_entropy: Option<f64>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            warmup_steps: 5_000,
            updates_per_step: 1,
            optimizer: AdamConfig::default(),
            init_alpha: 1.0,
            auto_alpha: true,
            target_entropy: None,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.init_alpha >= 0.0) || (self.auto_alpha && self.init_alpha <= 0.0) {
            return Err(Error::Config(format!(
                "alpha {} invalid (auto-tuning needs alpha > 0)",
                self.init_alpha
            )));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("batch size must be in 1..=buffer capacity".into()));
        }
        Ok(())
    }
}

/// Soft double-Q target `r + γ(1 - done)(min Q' - α log π')`.
pub fn td_target(reward: f64, done: bool, min_q_next: f64, log_pi_next: f64, alpha: f64, gamma: f64) -> f64 {
    let cont = if done { 0.0 } else { 1.0 };
    reward + gamma * cont * (min_q_next - alpha * log_pi_next)
}

/// Per-sample actor objective `α log π - min Q` (before the load term).
pub fn actor_term(min_q: f64, log_pi: f64, alpha: f64) -> f64 {
    alpha * log_pi - min_q
}
