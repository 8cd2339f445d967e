//! Goal-seeking bicycle on an open workspace. Modes act as perturbation
//! gains; the two-mode workspace places high-gain patches across the direct
//! route to the goal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bicycle::{rk4_step, scale_action, BicycleParams, BicycleState, ModeDynamics};
use super::{Context, Probe};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalEnvConfig {
    pub bicycle: BicycleParams,
    /// RK4 steps per control step.
    pub substeps: usize,
    pub max_steps: usize,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    /// `[x_min, x_max, y_min, y_max]`.
    pub workspace: [f64; 4],
    pub start_jitter: f64,
    /// Start heading is uniform in `±heading_jitter` around the goal direction.
    pub heading_jitter: f64,
    pub goal_bonus: f64,
    pub exit_penalty: f64,
}

impl Default for GoalEnvConfig {
    fn default() -> Self {
        Self {
            bicycle: BicycleParams::default(),
            substeps: 2,
            max_steps: 60,
            goal: [40.0, 0.0],
            goal_radius: 2.0,
            workspace: [-5.0, 50.0, -15.0, 15.0],
            start_jitter: 0.5,
            heading_jitter: std::f64::consts::FRAC_PI_2,
            goal_bonus: 10.0,
            exit_penalty: 10.0,
        }
    }
}

pub const GOAL_OBS_DIM: usize = 7;

#[derive(Clone, Debug)]
pub struct GoalEnv {
    pub config: GoalEnvConfig,
    pub(crate) context: Option<Context>,
    pub(crate) state: BicycleState,
    pub(crate) t: usize,
    pub(crate) done: bool,
}

pub(crate) struct GoalOutcome {
    pub reward: f64,
    pub terminal: bool,
    pub goal_reached: bool,
    pub crashed: bool,
    pub progress: f64,
}

impl GoalEnv {
    pub fn new(config: GoalEnvConfig) -> Self {
        Self {
            config,
            context: None,
            state: BicycleState::default(),
            t: 0,
            done: true,
        }
    }

    pub fn probe(s: &BicycleState) -> Probe {
        Probe {
            x: s.x,
            y: s.y,
            arc_fraction: None,
        }
    }

    pub(crate) fn reset_state<R: Rng>(&mut self, context: Context, rng: &mut R) {
        let c = &self.config;
        let j = c.start_jitter;
        let h = c.heading_jitter;
        self.state = BicycleState {
            x: if j > 0.0 { rng.random_range(-j..j) } else { 0.0 },
            y: if j > 0.0 { rng.random_range(-j..j) } else { 0.0 },
            theta: if h > 0.0 { rng.random_range(-h..h) } else { 0.0 },
            v: 0.0,
        };
        self.context = Some(context);
        self.t = 0;
        self.done = false;
    }

    pub fn distance_to_goal(&self, s: &BicycleState) -> f64 {
        (self.config.goal[0] - s.x).hypot(self.config.goal[1] - s.y)
    }

    fn inside(&self, s: &BicycleState) -> bool {
        let w = &self.config.workspace;
        s.x >= w[0] && s.x <= w[1] && s.y >= w[2] && s.y <= w[3]
    }

    pub fn observe(&self, s: &BicycleState) -> Vec<f64> {
        let c = &self.config;
        vec![
            s.x / 50.0,
            s.y / 15.0,
            s.theta.sin(),
            s.theta.cos(),
            s.v / c.bicycle.v_max,
            (c.goal[0] - s.x) / 50.0,
            (c.goal[1] - s.y) / 15.0,
        ]
    }

    pub(crate) fn advance(&mut self, action: &[f64]) -> Result<GoalOutcome> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let ctx = self.context.as_ref().ok_or(Error::NotReset)?;
        let (a, psi) = scale_action(action, &self.config.bicycle);
        let before = self.distance_to_goal(&self.state);
        let mut s = self.state;
        for _ in 0..self.config.substeps {
            let m = ctx.active_mode(&Self::probe(&s))?;
            let gain = ctx.modes[m].value();
            s = rk4_step(&s, a, psi, ModeDynamics::Perturbed { gain }, &self.config.bicycle);
        }
        self.state = s;
        self.t += 1;
        let after = self.distance_to_goal(&s);
        let mut reward = before - after;
        let goal_reached = after <= self.config.goal_radius;
        let crashed = !goal_reached && (!self.inside(&s) || !s.is_finite());
        if goal_reached {
            reward += self.config.goal_bonus;
        }
        if crashed {
            reward -= self.config.exit_penalty;
        }
        let terminal = goal_reached || crashed;
        Ok(GoalOutcome {
            reward,
            terminal,
            goal_reached,
            crashed,
            progress: before - after,
        })
    }
}
