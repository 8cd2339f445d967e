//! Hybrid contextual environments: latent modes, switching maps, contexts
//! and the kinematic-bicycle environments built on them.
//!
//! A [`Context`] pairs a set of latent modes with a [`SwitchingMap`] that
//! assigns exactly one mode to every state. Agents only ever see the context
//! *id*; the mode parameters stay behind the environment's oracle channel.

pub mod bicycle;
pub mod contexts;
pub mod env;
pub mod goal;
pub mod racing;
pub mod track;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bicycle::{BicycleParams, BicycleState, ModeDynamics};
pub use contexts::{parse_surface_set, sample_test_context, ContextSet, SurfaceClass};
pub use env::{EnvKind, EnvSpec, EnvStep, HybridEnv, StepInfo, TrajectoryRecord};
pub use goal::{GoalEnv, GoalEnvConfig};
pub use racing::{RacingEnv, RacingEnvConfig};
pub use track::{Track, TrackId};

/// Latent parameter vector of one dynamics mode. Every shipped environment
/// uses a scalar: a friction coefficient or a perturbation gain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentMode {
    pub mu: Vec<f64>,
}

impl LatentMode {
    pub fn scalar(mu: f64) -> Self {
        Self { mu: vec![mu] }
    }

    pub fn value(&self) -> f64 {
        self.mu[0]
    }
}

/// State-space predicate of one switching region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Everywhere,
    /// Closed axis-aligned position box.
    Box {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    /// Closed interval of track arc length, as fractions of the lap in `[0, 1]`.
    Arc { start: f64, end: f64 },
}

/// Where a state sits, as far as predicates are concerned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub x: f64,
    pub y: f64,
    pub arc_fraction: Option<f64>,
}

impl Predicate {
    pub fn fires(&self, p: &Probe) -> bool {
        match *self {
            Predicate::Everywhere => true,
            Predicate::Box {
                x_min,
                x_max,
                y_min,
                y_max,
            } => p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max,
            Predicate::Arc { start, end } => p
                .arc_fraction
                .is_some_and(|f| f >= start && f <= end),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub predicate: Predicate,
    pub mode: usize,
}

/// Ordered region list. When predicates overlap (shared boundaries) the
/// lowest region index wins, so at most one mode is ever active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingMap {
    pub regions: Vec<Region>,
}

impl SwitchingMap {
    pub fn single() -> Self {
        Self {
            regions: vec![Region {
                predicate: Predicate::Everywhere,
                mode: 0,
            }],
        }
    }

    /// Partition the lap into `n` equal arc-length intervals, region `i` -> mode `i`.
    pub fn arc_partition(n: usize) -> Self {
        Self {
            regions: (0..n)
                .map(|i| Region {
                    predicate: Predicate::Arc {
                        start: i as f64 / n as f64,
                        end: (i + 1) as f64 / n as f64,
                    },
                    mode: i,
                })
                .collect(),
        }
    }

    pub fn active_mode(&self, probe: &Probe) -> Result<usize> {
        self.regions
            .iter()
            .find(|r| r.predicate.fires(probe))
            .map(|r| r.mode)
            .ok_or_else(|| Error::NoRegionCovers(format!("{probe:?}")))
    }

    /// The switching indicator as a 0/1 vector over `n_modes`.
    pub fn indicators(&self, probe: &Probe, n_modes: usize) -> Result<Vec<u8>> {
        let m = self.active_mode(probe)?;
        let mut out = vec![0u8; n_modes];
        out[m] = 1;
        Ok(out)
    }

    pub fn max_mode(&self) -> Option<usize> {
        self.regions.iter().map(|r| r.mode).max()
    }
}

/// One environment of the contextual family: its modes and where they occur.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub id: usize,
    pub modes: Vec<LatentMode>,
    pub switching: SwitchingMap,
}

impl Context {
    pub fn single_mode(id: usize, mu: f64) -> Self {
        Self {
            id,
            modes: vec![LatentMode::scalar(mu)],
            switching: SwitchingMap::single(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config(format!("context {} has no modes", self.id)));
        }
        if self
            .modes
            .iter()
            .any(|m| m.mu.is_empty() || m.mu.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Config(format!(
                "context {} has an empty or non-finite mode",
                self.id
            )));
        }
        match self.switching.max_mode() {
            Some(m) if m < self.modes.len() => Ok(()),
            Some(m) => Err(Error::Config(format!(
                "context {} references mode {m} but has {} modes",
                self.id,
                self.modes.len()
            ))),
            None => Err(Error::Config(format!("context {} has no regions", self.id))),
        }
    }

    pub fn active_mode(&self, probe: &Probe) -> Result<usize> {
        self.switching.active_mode(probe)
    }
}
