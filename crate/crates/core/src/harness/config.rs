use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curriculum::CurriculumConfig;
use crate::error::{Error, Result};
use crate::hybrid::contexts::{goal_single, goal_two_mode, racing_train};
use crate::hybrid::{ContextSet, EnvKind, EnvSpec, GoalEnvConfig};
use crate::moe::MoeConfig;
use crate::nn::AdamConfig;
use crate::sac::{ActorKind, SacConfig};

/// What the experiment trains or evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "sac")]
    Sac,
    #[serde(rename = "sac-moe")]
    SacMoe,
    #[serde(rename = "sac-uptrue")]
    SacUpTrue,
    /// Evaluation-only switching bank.
    #[serde(rename = "sac-sw")]
    SacSw,
}

impl ModelKind {
    pub fn actor(self) -> Option<ActorKind> {
        match self {
            ModelKind::Sac => Some(ActorKind::Sac),
            ModelKind::SacMoe => Some(ActorKind::SacMoe),
            ModelKind::SacUpTrue => Some(ActorKind::SacUpTrue),
            ModelKind::SacSw => None,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("sac-sw") || s.eq_ignore_ascii_case("sw") {
            return Ok(ModelKind::SacSw);
        }
        Ok(match s.parse::<ActorKind>()? {
            ActorKind::Sac => ModelKind::Sac,
            ActorKind::SacMoe => ModelKind::SacMoe,
            ActorKind::SacUpTrue => ModelKind::SacUpTrue,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Bank directory (with `manifest.json`) for `sac-sw`.
    pub bank: Option<PathBuf>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Sac,
            bank: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Evaluate every this many environment steps during training.
    pub every_steps: Option<u64>,
    pub episodes: usize,
    pub threads: usize,
    /// Stop training once a periodic evaluation reaches this mean return.
    pub stop_at_return: Option<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            every_steps: None,
            episodes: 200,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            stop_at_return: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    /// Environment-step budget.
    pub steps: u64,
    pub out_dir: PathBuf,
    pub env: EnvSpec,
    /// Shipped set name (`goal-single:<gain>`, `goal-two-mode`,
    /// `racing-train`) or a path to a context-set TOML file.
    pub contexts: String,
    pub model: ModelSpec,
    pub curriculum: CurriculumConfig,
    pub sac: SacConfig,
    pub moe: MoeConfig,
    pub eval: EvalSettings,
}

/// Network widths and schedule sized for a single desktop core.
pub fn desk_sac() -> SacConfig {
    SacConfig {
        batch_size: 128,
        buffer_capacity: 200_000,
        warmup_steps: 2_000,
        optimizer: AdamConfig {
            lr: 1e-3,
            ..Default::default()
        },
        actor_hidden: vec![64, 64],
        critic_hidden: vec![64, 64],
        ..Default::default()
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            steps: 200_000,
            out_dir: PathBuf::from("runs/experiment"),
            env: EnvSpec::Goal(GoalEnvConfig::default()),
            contexts: "goal-single:0".into(),
            model: ModelSpec::default(),
            curriculum: CurriculumConfig::default(),
            sac: desk_sac(),
            moe: MoeConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

/// Resolve a shipped context-set name, or load a TOML file.
pub fn resolve_contexts(name: &str, env: &EnvSpec) -> Result<ContextSet> {
    let set = match name {
        "goal-two-mode" => goal_two_mode(),
        "racing-train" => match env {
            EnvSpec::Racing(c) => racing_train(c.track),
            EnvSpec::Goal(_) => return Err(Error::Config("`racing-train` needs the racing env".into())),
        },
        _ => match name.strip_prefix("goal-single:") {
            Some(g) => goal_single(
                g.parse()
                    .map_err(|_| Error::Config(format!("bad gain in `{name}`")))?,
            ),
            None => ContextSet::load(Path::new(name))?,
        },
    };
    set.validate()?;
    Ok(set)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Hex sha256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let d = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(d.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn context_set(&self) -> Result<ContextSet> {
        resolve_contexts(&self.contexts, &self.env)
    }

    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        self.moe.validate()?;
        let set = self.context_set()?;
        let racing_set = set.contexts.iter().any(|c| {
            c.switching
                .regions
                .iter()
                .any(|r| matches!(r.predicate, crate::hybrid::Predicate::Arc { .. }))
        });
        if racing_set && self.env.kind() == EnvKind::Goal {
            return Err(Error::Config(format!(
                "context set `{}` uses track regions but the env is the goal env",
                set.name
            )));
        }
        if self.model.kind == ModelKind::SacSw && self.model.bank.is_none() {
            return Err(Error::Config("sac-sw needs `model.bank`".into()));
        }
        if self.eval.episodes == 0 {
            return Err(Error::InvalidEpisodeCount);
        }
        Ok(())
    }
}
