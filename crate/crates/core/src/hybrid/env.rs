//! Uniform stepping interface over the shipped environments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bicycle::BicycleState;
use super::goal::{GoalEnv, GoalEnvConfig, GOAL_OBS_DIM};
use super::racing::{RacingEnv, RacingEnvConfig};
use super::Context;
use crate::error::{Error, Result};

pub const ACT_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Goal,
    Racing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Goal(GoalEnvConfig),
    Racing(RacingEnvConfig),
}

impl EnvSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::Goal(_) => EnvKind::Goal,
            EnvSpec::Racing(_) => EnvKind::Racing,
        }
    }

    pub fn build(&self) -> HybridEnv {
        match self {
            EnvSpec::Goal(c) => HybridEnv::Goal(GoalEnv::new(c.clone())),
            EnvSpec::Racing(c) => HybridEnv::Racing(RacingEnv::new(c.clone())),
        }
    }
}

/// Oracle side-channel. Never part of an agent observation unless a baseline
/// explicitly opts in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Mode active at the pre-step state.
    pub active_mode_index: usize,
    pub active_mu: Vec<f64>,
    /// Goal env: decrease in goal distance. Racing: signed arc progress (m).
    pub progress: f64,
    pub crashed: bool,
    pub goal_reached: bool,
    pub laps: usize,
    pub state: BicycleState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Terminal: crash, workspace exit or goal.
    pub done: bool,
    /// Step budget exhausted without a terminal event.
    pub truncated: bool,
    pub info: StepInfo,
}

impl EnvStep {
    pub fn finished(&self) -> bool {
        self.done || self.truncated
    }
}

/// One line of a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub state: [f64; 4],
    pub action: Vec<f64>,
    pub reward: f64,
    pub mode_index: usize,
}

#[derive(Clone, Debug)]
pub enum HybridEnv {
    Goal(GoalEnv),
    Racing(RacingEnv),
}

impl HybridEnv {
    pub fn obs_dim(&self) -> usize {
        match self {
            HybridEnv::Goal(_) => GOAL_OBS_DIM,
            HybridEnv::Racing(e) => e.obs_dim(),
        }
    }

    pub fn act_dim(&self) -> usize {
        ACT_DIM
    }

    pub fn max_steps(&self) -> usize {
        match self {
            HybridEnv::Goal(e) => e.config.max_steps,
            HybridEnv::Racing(e) => e.max_steps(),
        }
    }

    pub fn control_period(&self) -> f64 {
        match self {
            HybridEnv::Goal(e) => e.config.substeps as f64 * e.config.bicycle.dt,
            HybridEnv::Racing(e) => e.control_period(),
        }
    }

    /// Start an episode in `context`; the seed only drives the start jitter.
    pub fn reset(&mut self, context: Context, seed: u64) -> Result<Vec<f64>> {
        context.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            HybridEnv::Goal(e) => e.reset_state(context, &mut rng),
            HybridEnv::Racing(e) => e.reset_state(context, &mut rng),
        }
        // Fails early if the start state is not covered.
        self.oracle()?;
        Ok(self.observation())
    }

    pub fn state(&self) -> BicycleState {
        match self {
            HybridEnv::Goal(e) => e.state,
            HybridEnv::Racing(e) => e.state,
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            HybridEnv::Goal(e) => e.t,
            HybridEnv::Racing(e) => e.t,
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            HybridEnv::Goal(e) => e.done,
            HybridEnv::Racing(e) => e.done,
        }
    }

    pub fn context(&self) -> Option<&Context> {
        match self {
            HybridEnv::Goal(e) => e.context.as_ref(),
            HybridEnv::Racing(e) => e.context.as_ref(),
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            HybridEnv::Goal(e) => e.observe(&e.state),
            HybridEnv::Racing(e) => e.observe(&e.state),
        }
    }

    /// Active mode index and parameter at the current state.
    pub fn oracle(&self) -> Result<(usize, Vec<f64>)> {
        let ctx = self.context().ok_or(Error::NotReset)?;
        let probe = match self {
            HybridEnv::Goal(e) => GoalEnv::probe(&e.state),
            HybridEnv::Racing(e) => e.probe(&e.state, e.track.project(e.state.x, e.state.y).segment),
        };
        let m = ctx.active_mode(&probe)?;
        Ok((m, ctx.modes[m].mu.clone()))
    }

    /// Completed-lap durations (s); empty for the goal env.
    pub fn lap_times(&self) -> &[f64] {
        match self {
            HybridEnv::Goal(_) => &[],
            HybridEnv::Racing(e) => &e.lap_times,
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        if self.is_done() {
            return Err(if self.context().is_none() {
                Error::NotReset
            } else {
                Error::StepAfterDone
            });
        }
        if action.len() != ACT_DIM {
            return Err(Error::ShapeMismatch(format!(
                "action of length {}, expected {ACT_DIM}",
                action.len()
            )));
        }
        let (active_mode_index, active_mu) = self.oracle()?;
        let max_steps = self.max_steps();
        let (reward, terminal, crashed, goal_reached, progress) = match self {
            HybridEnv::Goal(e) => {
                let o = e.advance(action)?;
                (o.reward, o.terminal, o.crashed, o.goal_reached, o.progress)
            }
            HybridEnv::Racing(e) => {
                let o = e.advance(action)?;
                (o.reward, o.crashed, o.crashed, false, o.progress)
            }
        };
        let truncated = !terminal && self.steps() >= max_steps;
        let finished = terminal || truncated;
        let laps = match self {
            HybridEnv::Goal(e) => {
                e.done = finished;
                0
            }
            HybridEnv::Racing(e) => {
                e.done = finished;
                e.laps
            }
        };
        Ok(EnvStep {
            observation: self.observation(),
            reward,
            done: terminal,
            truncated,
            info: StepInfo {
                active_mode_index,
                active_mu,
                progress,
                crashed,
                goal_reached,
                laps,
                state: self.state(),
            },
        })
    }
}
