//! Shipped context sets and their TOML representation.

use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::track::TrackId;
use super::{Context, LatentMode, Predicate, Region, SwitchingMap};
use crate::error::{Error, Result};

/// Training friction values for the racing env.
pub const TRAIN_FRICTIONS: [f64; 3] = [1.0, 0.5, 0.3];

/// Perturbation gains of the two goal-env modes.
pub const GOAL_GAINS: [f64; 2] = [0.0, 6.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub name: String,
    pub contexts: Vec<Context>,
}

impl ContextSet {
    pub fn validate(&self) -> Result<()> {
        if self.contexts.is_empty() {
            return Err(Error::Config(format!("context set `{}` is empty", self.name)));
        }
        for (i, c) in self.contexts.iter().enumerate() {
            if c.id != i {
                return Err(Error::Config(format!(
                    "context at position {i} of `{}` has id {}",
                    self.name, c.id
                )));
            }
            c.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&Context> {
        self.contexts.get(id).ok_or(Error::UnknownContext(id))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let set: Self = toml::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// One goal-env context with a uniform perturbation gain.
pub fn goal_single(gain: f64) -> ContextSet {
    ContextSet {
        name: format!("goal-gain-{gain}"),
        contexts: vec![Context::single_mode(0, gain)],
    }
}

/// Two high-gain patches on either side of the straight line to the goal,
/// nominal dynamics elsewhere.
pub fn goal_two_mode() -> ContextSet {
    let patch = |x_min, x_max, y_min, y_max| Region {
        predicate: Predicate::Box {
            x_min,
            x_max,
            y_min,
            y_max,
        },
        mode: 1,
    };
    ContextSet {
        name: "goal-two-mode".into(),
        contexts: vec![Context {
            id: 0,
            modes: GOAL_GAINS.iter().map(|&g| LatentMode::scalar(g)).collect(),
            switching: SwitchingMap {
                regions: vec![
                    patch(10.0, 20.0, -15.0, 2.0),
                    patch(25.0, 35.0, -2.0, 15.0),
                    Region {
                        predicate: Predicate::Everywhere,
                        mode: 0,
                    },
                ],
            },
        }],
    }
}

fn region_map(n_regions: usize, mode_of: impl Fn(usize) -> usize) -> SwitchingMap {
    let mut m = SwitchingMap::arc_partition(n_regions);
    for (i, r) in m.regions.iter_mut().enumerate() {
        r.mode = mode_of(i);
    }
    m
}

/// Racing training set: one single-surface context per training friction,
/// then three mixed contexts cycling the frictions over the track regions.
pub fn racing_train(track: TrackId) -> ContextSet {
    let n = track.build().n_regions;
    let mut contexts = Vec::new();
    for &mu in &TRAIN_FRICTIONS {
        contexts.push(Context::single_mode(contexts.len(), mu));
    }
    for shift in 0..TRAIN_FRICTIONS.len() {
        contexts.push(Context {
            id: contexts.len(),
            modes: TRAIN_FRICTIONS.iter().map(|&m| LatentMode::scalar(m)).collect(),
            switching: region_map(n, |i| (i + shift) % TRAIN_FRICTIONS.len()),
        });
    }
    ContextSet {
        name: format!("racing-train-{track:?}").to_lowercase(),
        contexts,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceClass {
    Low,
    Medium,
    High,
}

impl SurfaceClass {
    pub fn range(self) -> (f64, f64) {
        match self {
            SurfaceClass::Low => (0.25, 0.35),
            SurfaceClass::Medium => (0.45, 0.6),
            SurfaceClass::High => (0.8, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SurfaceClass::Low => "low",
            SurfaceClass::Medium => "medium",
            SurfaceClass::High => "high",
        }
    }
}

impl FromStr for SurfaceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(SurfaceClass::Low),
            "medium" => Ok(SurfaceClass::Medium),
            "high" => Ok(SurfaceClass::High),
            _ => Err(Error::UnknownSurfaceClass(s.to_string())),
        }
    }
}

/// Comma-separated class list such as `"low,high"`.
pub fn parse_surface_set(s: &str) -> Result<Vec<SurfaceClass>> {
    let set = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(SurfaceClass::from_str)
        .collect::<Result<Vec<_>>>()?;
    if set.is_empty() {
        return Err(Error::EmptySurfaceSet);
    }
    Ok(set)
}

/// Test context on a track with `n_regions` regions: every region picks a
/// class uniformly from `surfaces`, then a friction uniformly from its range.
pub fn sample_test_context<R: Rng + ?Sized>(
    rng: &mut R,
    n_regions: usize,
    surfaces: &[SurfaceClass],
    id: usize,
) -> Result<Context> {
    if surfaces.is_empty() {
        return Err(Error::EmptySurfaceSet);
    }
    if n_regions == 0 {
        return Err(Error::Config("track has no regions".into()));
    }
    let modes: Vec<LatentMode> = (0..n_regions)
        .map(|_| {
            let class = surfaces[rng.random_range(0..surfaces.len())];
            let (lo, hi) = class.range();
            LatentMode::scalar(rng.random_range(lo..=hi))
        })
        .collect();
    let switching = if n_regions == 1 {
        SwitchingMap::single()
    } else {
        region_map(n_regions, |i| i)
    };
    Ok(Context {
        id,
        modes,
        switching,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::Probe;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shipped_sets_validate() {
        goal_single(0.0).validate().unwrap();
        goal_two_mode().validate().unwrap();
        for t in [TrackId::Track1, TrackId::Track2] {
            let s = racing_train(t);
            s.validate().unwrap();
            assert_eq!(s.len(), 6);
        }
    }

    #[test]
    fn track1_mixed_context_assigns_each_region_a_training_friction() {
        let set = racing_train(TrackId::Track1);
        let ctx = &set.contexts[3];
        let n = TrackId::Track1.build().n_regions;
        assert_eq!(n, 6);
        let mut seen = Vec::new();
        for i in 0..n {
            let probe = Probe {
                x: 0.0,
                y: 0.0,
                arc_fraction: Some((i as f64 + 0.5) / n as f64),
            };
            let m = ctx.active_mode(&probe).unwrap();
            assert_eq!(ctx.modes[m].value(), TRAIN_FRICTIONS[i % 3]);
            seen.push(ctx.modes[m].value());
        }
        for mu in TRAIN_FRICTIONS {
            assert!(seen.contains(&mu));
        }
    }

    #[test]
    fn toml_round_trip() {
        for set in [goal_two_mode(), racing_train(TrackId::Track2)] {
            let text = set.to_toml().unwrap();
            assert_eq!(ContextSet::from_toml(&text).unwrap(), set);
        }
    }

    #[test]
    fn high_surfaces_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = sample_test_context(&mut rng, 6, &[SurfaceClass::High], 0).unwrap();
        assert!(c.modes.iter().all(|m| (0.8..=1.0).contains(&m.value())));
    }

    #[test]
    fn low_surface_monte_carlo_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..1000 {
            let c = sample_test_context(&mut rng, 1, &[SurfaceClass::Low], 0).unwrap();
            let v = c.modes[0].value();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(lo >= 0.25 && hi <= 0.35, "[{lo}, {hi}]");
    }

    #[test]
    fn single_region_is_single_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = sample_test_context(&mut rng, 1, &[SurfaceClass::Medium], 7).unwrap();
        assert_eq!(c.modes.len(), 1);
        assert_eq!(c.switching, SwitchingMap::single());
    }

    #[test]
    fn surface_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            sample_test_context(&mut rng, 3, &[], 0),
            Err(Error::EmptySurfaceSet)
        ));
        assert!(matches!(
            parse_surface_set("low,icy"),
            Err(Error::UnknownSurfaceClass(_))
        ));
        assert_eq!(
            parse_surface_set("high, low").unwrap(),
            vec![SurfaceClass::High, SurfaceClass::Low]
        );
    }
}
