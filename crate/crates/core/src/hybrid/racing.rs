//! Friction racing on a closed track. Each arc-length region of the track
//! carries one friction mode.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bicycle::{rk4_step, scale_action, BicycleParams, BicycleState, ModeDynamics};
use super::track::{wrap_angle, Track, TrackId};
use super::{Context, Probe};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RacingEnvConfig {
    pub track: TrackId,
    pub bicycle: BicycleParams,
    pub substeps: usize,
    /// Defaults to the track's evaluation cap when absent.
    pub max_steps: Option<usize>,
    pub crash_penalty: f64,
    pub lap_bonus: f64,
    pub start_jitter: f64,
    /// Arc-length offsets of the heading lookahead features (m).
    pub lookahead: Vec<f64>,
}

impl Default for RacingEnvConfig {
    fn default() -> Self {
        Self {
            track: TrackId::Track1,
            bicycle: BicycleParams::default(),
            substeps: 4,
            max_steps: None,
            crash_penalty: 10.0,
            lap_bonus: 5.0,
            start_jitter: 0.3,
            lookahead: vec![5.0, 10.0, 20.0, 30.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct RacingEnv {
    pub config: RacingEnvConfig,
    pub track: Track,
    pub(crate) context: Option<Context>,
    pub(crate) state: BicycleState,
    pub(crate) t: usize,
    pub(crate) done: bool,
    segment: usize,
    arc: f64,
    /// Signed arc length travelled since reset.
    pub(crate) travelled: f64,
    pub(crate) laps: usize,
    pub(crate) lap_times: Vec<f64>,
    last_lap_t: usize,
}

pub(crate) struct RaceOutcome {
    pub reward: f64,
    pub crashed: bool,
    pub progress: f64,
}

impl RacingEnv {
    pub fn new(config: RacingEnvConfig) -> Self {
        let track = config.track.build();
        Self {
            config,
            track,
            context: None,
            state: BicycleState::default(),
            t: 0,
            done: true,
            segment: 0,
            arc: 0.0,
            travelled: 0.0,
            laps: 0,
            lap_times: Vec::new(),
            last_lap_t: 0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        4 + self.config.lookahead.len()
    }

    pub fn max_steps(&self) -> usize {
        self.config
            .max_steps
            .unwrap_or_else(|| self.config.track.episode_steps())
    }

    /// Seconds of simulated time per control step.
    pub fn control_period(&self) -> f64 {
        self.config.substeps as f64 * self.config.bicycle.dt
    }

    fn window(&self) -> usize {
        let per_step = self.config.bicycle.v_max * self.control_period();
        let seg = self.track.length / self.track.segments() as f64;
        (per_step / seg).ceil() as usize + 4
    }

    pub fn probe(&self, s: &BicycleState, hint: usize) -> Probe {
        let p = self.track.project_near(s.x, s.y, hint, self.window());
        Probe {
            x: s.x,
            y: s.y,
            arc_fraction: Some(self.track.arc_fraction(p.s)),
        }
    }

    pub(crate) fn reset_state<R: Rng>(&mut self, context: Context, rng: &mut R) {
        let j = self.config.start_jitter;
        let lat = if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
        let heading = self.track.heading_at(0.0);
        let p0 = self.track.point_at(0.0);
        self.state = BicycleState {
            x: p0[0] - lat * heading.sin(),
            y: p0[1] + lat * heading.cos(),
            theta: heading,
            v: 0.0,
        };
        let pr = self.track.project(self.state.x, self.state.y);
        self.segment = pr.segment;
        self.arc = pr.s;
        self.context = Some(context);
        self.t = 0;
        self.done = false;
        self.travelled = 0.0;
        self.laps = 0;
        self.lap_times.clear();
        self.last_lap_t = 0;
    }

    pub fn observe(&self, s: &BicycleState) -> Vec<f64> {
        let p = self.track.project_near(s.x, s.y, self.segment, self.window());
        let err = wrap_angle(s.theta - self.track.heading_at(p.s));
        let mut out = vec![
            p.lateral / self.track.half_width,
            err.sin(),
            err.cos(),
            s.v / self.config.bicycle.v_max,
        ];
        for &d in &self.config.lookahead {
            let h = self.track.heading_at(p.s + d);
            out.push(wrap_angle(h - s.theta) / std::f64::consts::PI);
        }
        out
    }

    pub(crate) fn advance(&mut self, action: &[f64]) -> Result<RaceOutcome> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let ctx = self.context.as_ref().ok_or(Error::NotReset)?;
        let (a, psi) = scale_action(action, &self.config.bicycle);
        let window = self.window();
        let mut s = self.state;
        let mut seg = self.segment;
        for _ in 0..self.config.substeps {
            let pr = self.track.project_near(s.x, s.y, seg, window);
            seg = pr.segment;
            let probe = Probe {
                x: s.x,
                y: s.y,
                arc_fraction: Some(self.track.arc_fraction(pr.s)),
            };
            let m = ctx.active_mode(&probe)?;
            let coef = ctx.modes[m].value();
            s = rk4_step(&s, a, psi, ModeDynamics::Friction { coef }, &self.config.bicycle);
        }
        let pr = self.track.project_near(s.x, s.y, seg, window);
        let half = self.track.length / 2.0;
        let mut ds = pr.s - self.arc;
        if ds > half {
            ds -= self.track.length;
        } else if ds < -half {
            ds += self.track.length;
        }
        self.state = s;
        self.segment = pr.segment;
        self.arc = pr.s;
        self.t += 1;
        self.travelled += ds;

        let crashed = pr.lateral.abs() > self.track.half_width || !s.is_finite();
        let mut reward = ds;
        if crashed {
            reward -= self.config.crash_penalty;
        } else {
            while self.travelled >= (self.laps + 1) as f64 * self.track.length {
                self.laps += 1;
                self.lap_times
                    .push((self.t - self.last_lap_t) as f64 * self.control_period());
                self.last_lap_t = self.t;
                reward += self.config.lap_bonus;
            }
        }
        Ok(RaceOutcome {
            reward,
            crashed,
            progress: ds,
        })
    }
}
