//! Environment interaction loop: context sampling, warm-up, updates,
//! per-episode logging and exact snapshot/resume.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::agent::{Agent, UpdateStats};
use super::replay::{ReplayBuffer, Transition};
use crate::curriculum::{CurriculumState, EpisodeOutcome};
use crate::error::{Error, Result};
use crate::hybrid::{ContextSet, EnvSpec, HybridEnv};
use crate::nn::checkpoint::Archive;
use crate::nn::Real;
use crate::rng::{derive_seed, stream, RngState};

const AGENT_STREAM: u64 = 1;
const CURRICULUM_STREAM: u64 = 2;
const ENV_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub actor: Option<f64>,
    pub critic: Option<f64>,
    pub load: Option<f64>,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Environment steps taken so far, including this episode.
    pub step: u64,
    pub episode: u64,
    pub context_id: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: u64,
    pub losses: Losses,
    pub alpha: f64,
}

/// Optional JSONL destinations.
#[derive(Default)]
pub struct TrainerSinks<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    pub trace: Option<&'a mut dyn Write>,
}

/// The running episode. Actions are kept so a snapshot can rebuild the
/// environment by replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Episode {
    context_id: usize,
    env_seed: u64,
    actions: Vec<Vec<f64>>,
    episode_return: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainerMeta {
    env: EnvSpec,
    contexts: ContextSet,
    seed: u64,
    step: u64,
    episode: u64,
    agent_rng: RngState,
    curriculum_rng: RngState,
    current: Option<Episode>,
    last_stats: Option<UpdateStats>,
    curriculum: String,
}

pub struct Trainer<F> {
    pub agent: Agent<F>,
    pub buffer: ReplayBuffer<F>,
    pub curriculum: CurriculumState,
    pub contexts: ContextSet,
    env_spec: EnvSpec,
    env: HybridEnv,
    seed: u64,
    agent_rng: ChaCha8Rng,
    curriculum_rng: ChaCha8Rng,
    step: u64,
    episode: u64,
    current: Option<Episode>,
    /// Network input at the current state.
    input: Vec<f64>,
    last_stats: Option<UpdateStats>,
}

impl<F: Real> Trainer<F> {
    pub fn new(
        agent: Agent<F>,
        env_spec: EnvSpec,
        contexts: ContextSet,
        curriculum: CurriculumState,
        seed: u64,
    ) -> Result<Self> {
        contexts.validate()?;
        if curriculum.len() != contexts.len() {
            return Err(Error::Config(format!(
                "curriculum over {} contexts, set has {}",
                curriculum.len(),
                contexts.len()
            )));
        }
        let env = env_spec.build();
        if env.obs_dim() != agent.obs_dim || env.act_dim() != agent.act_dim {
            return Err(Error::ShapeMismatch(format!(
                "agent dims ({}, {}) vs env dims ({}, {})",
                agent.obs_dim,
                agent.act_dim,
                env.obs_dim(),
                env.act_dim()
            )));
        }
        let buffer = ReplayBuffer::new(agent.sac.buffer_capacity, agent.input_dim, agent.act_dim);
        Ok(Self {
            agent,
            buffer,
            curriculum,
            contexts,
            env_spec,
            env,
            seed,
            agent_rng: stream(seed, &[AGENT_STREAM]),
            curriculum_rng: stream(seed, &[CURRICULUM_STREAM]),
            step: 0,
            episode: 0,
            current: None,
            input: Vec::new(),
            last_stats: None,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn episodes(&self) -> u64 {
        self.episode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn env_spec(&self) -> &EnvSpec {
        &self.env_spec
    }

    fn agent_input(&self) -> Result<Vec<f64>> {
        let obs = self.env.observation();
        let mu = if self.agent.kind.uses_oracle() {
            Some(self.env.oracle()?.1)
        } else {
            None
        };
        self.agent.input(&obs, mu.as_deref())
    }

    fn begin_episode(&mut self) -> Result<()> {
        let context_id = self.curriculum.sample_context(&mut self.curriculum_rng);
        let env_seed = derive_seed(self.seed, &[ENV_STREAM, self.episode]);
        let context = self.contexts.get(context_id)?.clone();
        self.env.reset(context, env_seed)?;
        self.input = self.agent_input()?;
        self.current = Some(Episode {
            context_id,
            env_seed,
            actions: Vec::new(),
            episode_return: 0.0,
        });
        Ok(())
    }

    /// One environment step followed by the scheduled gradient updates.
    /// Returns the episode summary when this step ended an episode.
    pub fn step(&mut self, sinks: &mut TrainerSinks<'_>) -> Result<Option<EpisodeMetrics>> {
        if self.current.is_none() {
            self.begin_episode()?;
        }
        let action = if self.step < self.agent.sac.warmup_steps {
            (0..self.agent.act_dim)
                .map(|_| self.agent_rng.random_range(-1.0..1.0))
                .collect()
        } else {
            self.agent.act(&self.input, &mut self.agent_rng, false)?.action
        };
        let st = self.env.step(&action)?;
        let next_input = self.agent_input()?;
        let ep = self.current.as_mut().expect("episode started");
        ep.actions.push(action.clone());
        ep.episode_return += st.reward;
        self.buffer.push(&Transition {
            obs: std::mem::replace(&mut self.input, next_input.clone()),
            action,
            reward: st.reward,
            next_obs: next_input,
            done: st.done,
            context_id: ep.context_id,
        })?;
        self.step += 1;

        if self.step > self.agent.sac.warmup_steps && self.buffer.len() >= self.agent.sac.batch_size {
            for _ in 0..self.agent.sac.updates_per_step {
                let batch = self.buffer.sample(&mut self.agent_rng, self.agent.sac.batch_size)?;
                self.last_stats = Some(self.agent.update(&batch, &mut self.agent_rng)?);
            }
        }

        if !st.finished() {
            return Ok(None);
        }
        let ep = self.current.take().expect("episode started");
        let outcome = EpisodeOutcome {
            episode_return: ep.episode_return,
            length: ep.actions.len() as u64,
        };
        self.curriculum.record_outcome(ep.context_id, outcome)?;
        let metrics = EpisodeMetrics {
            step: self.step,
            episode: self.episode,
            context_id: ep.context_id,
            episode_return: ep.episode_return,
            length: outcome.length,
            losses: Losses {
                actor: self.last_stats.map(|s| s.actor_loss),
                critic: self.last_stats.map(|s| s.critic_loss),
                load: self.last_stats.and_then(|s| s.load_loss),
            },
            alpha: self.agent.alpha(),
        };
        if let Some(w) = sinks.metrics.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&metrics)?)?;
        }
        if let Some(w) = sinks.trace.as_deref_mut() {
            let rec = self.curriculum.trace(self.episode, ep.context_id, &outcome);
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        self.episode += 1;
        Ok(Some(metrics))
    }

    /// Run `n` environment steps, calling `on_episode` after each finished episode.
    pub fn run(
        &mut self,
        n: u64,
        sinks: &mut TrainerSinks<'_>,
        mut on_episode: impl FnMut(&Self, &EpisodeMetrics) -> Result<()>,
    ) -> Result<()> {
        for _ in 0..n {
            if let Some(m) = self.step(sinks)? {
                on_episode(self, &m)?;
            }
        }
        Ok(())
    }

    /// Complete training state: agent, optimizers, replay buffer, curriculum,
    /// generators and the running episode.
    pub fn snapshot(&self) -> Result<Archive> {
        let meta = TrainerMeta {
            env: self.env_spec.clone(),
            contexts: self.contexts.clone(),
            seed: self.seed,
            step: self.step,
            episode: self.episode,
            agent_rng: RngState::capture(&self.agent_rng),
            curriculum_rng: RngState::capture(&self.curriculum_rng),
            current: self.current.clone(),
            last_stats: self.last_stats,
            curriculum: self.curriculum.snapshot()?,
        };
        let mut ar = Archive::new(json!({
            "trainer": meta,
            "agent": self.agent.meta(),
            "dtype": F::DTYPE,
        }));
        self.agent.save_to(&mut ar, "agent");
        self.buffer.save_to(&mut ar, "replay");
        Ok(ar)
    }

    pub fn restore(ar: &Archive) -> Result<Self> {
        let meta = ar.meta();
        if meta.get("dtype").and_then(|d| d.as_str()) != Some(F::DTYPE) {
            return Err(Error::BadCheckpoint(format!("checkpoint is not {}", F::DTYPE)));
        }
        let tm: TrainerMeta = serde_json::from_value(
            meta.get("trainer")
                .cloned()
                .ok_or_else(|| Error::BadCheckpoint("no trainer state".into()))?,
        )?;
        let agent_meta = meta
            .get("agent")
            .ok_or_else(|| Error::BadCheckpoint("no agent metadata".into()))?;
        let agent = Agent::load_from(ar, agent_meta, "agent")?;
        let curriculum = CurriculumState::restore(&tm.curriculum)?;
        let mut t = Self::new(agent, tm.env, tm.contexts, curriculum, tm.seed)?;
        t.buffer = ReplayBuffer::load_from(ar, "replay")?;
        t.step = tm.step;
        t.episode = tm.episode;
        t.agent_rng = tm.agent_rng.restore()?;
        t.curriculum_rng = tm.curriculum_rng.restore()?;
        t.last_stats = tm.last_stats;
        if let Some(ep) = tm.current {
            // The environment is deterministic given the seed and actions.
            let context = t.contexts.get(ep.context_id)?.clone();
            t.env.reset(context, ep.env_seed)?;
            for a in &ep.actions {
                t.env.step(a)?;
            }
            t.input = t.agent_input()?;
            t.current = Some(ep);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::{CurriculumConfig, CurriculumKind};
    use crate::hybrid::goal::GoalEnvConfig;
    use crate::hybrid::contexts::goal_two_mode;
    use crate::hybrid::goal::GOAL_OBS_DIM;
    use crate::moe::MoeConfig;
    use crate::sac::{ActorKind, SacConfig};

    fn trainer(kind: ActorKind, seed: u64) -> Trainer<f32> {
        let sac = SacConfig {
            actor_hidden: vec![16],
            critic_hidden: vec![16],
            batch_size: 16,
            buffer_capacity: 500,
            warmup_steps: 40,
            ..Default::default()
        };
        let moe = MoeConfig {
            tokens: 2,
            token_dim: 4,
            encoder_hidden: vec![8],
            ..Default::default()
        };
        let mut rng = stream(seed, &[0]);
        let agent = Agent::new(kind, GOAL_OBS_DIM, 2, sac, moe, &mut rng).unwrap();
        let contexts = goal_two_mode();
        let cur = CurriculumState::new(
            CurriculumConfig {
                kind: CurriculumKind::C,
                ..Default::default()
            },
            contexts.len(),
        )
        .unwrap();
        Trainer::new(agent, EnvSpec::Goal(GoalEnvConfig::default()), contexts, cur, seed).unwrap()
    }

    #[test]
    fn metrics_lines_parse_and_count_steps() {
        let mut t = trainer(ActorKind::SacMoe, 1);
        let mut log = Vec::new();
        let mut trace = Vec::new();
        {
            let mut sinks = TrainerSinks {
                metrics: Some(&mut log),
                trace: Some(&mut trace),
            };
            t.run(400, &mut sinks, |_, _| Ok(())).unwrap();
        }
        let lines: Vec<EpisodeMetrics> = String::from_utf8(log)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert!(!lines.is_empty());
        assert_eq!(String::from_utf8(trace).unwrap().lines().count(), lines.len());
        let mut prev = 0;
        for (i, m) in lines.iter().enumerate() {
            assert_eq!(m.episode, i as u64);
            assert_eq!(m.step, prev + m.length);
            prev = m.step;
        }
    }

    #[test]
    fn resume_mid_episode_is_identical() {
        for kind in [ActorKind::SacMoe, ActorKind::SacUpTrue] {
            let mut a = trainer(kind, 2);
            let mut none = TrainerSinks::default();
            a.run(123, &mut none, |_, _| Ok(())).unwrap();
            let bytes = a.snapshot().unwrap().to_bytes().unwrap();
            let mut b = Trainer::<f32>::restore(&Archive::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(b.snapshot().unwrap().to_bytes().unwrap(), bytes);
            let mut la = Vec::new();
            let mut lb = Vec::new();
            a.run(300, &mut TrainerSinks { metrics: Some(&mut la), trace: None }, |_, _| Ok(()))
                .unwrap();
            b.run(300, &mut TrainerSinks { metrics: Some(&mut lb), trace: None }, |_, _| Ok(()))
                .unwrap();
            assert!(!la.is_empty());
            assert_eq!(la, lb);
            assert_eq!(
                a.snapshot().unwrap().to_bytes().unwrap(),
                b.snapshot().unwrap().to_bytes().unwrap()
            );
        }
    }

    #[test]
    fn mismatched_agent_is_rejected() {
        let t = trainer(ActorKind::Sac, 3);
        let contexts = t.contexts.clone();
        let cur = CurriculumState::new(CurriculumConfig::default(), contexts.len() + 1).unwrap();
        assert!(Trainer::new(t.agent, EnvSpec::Goal(GoalEnvConfig::default()), contexts, cur, 0).is_err());
    }
}
