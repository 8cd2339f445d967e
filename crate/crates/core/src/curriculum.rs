//! Context-sampling curricula over a finite training set.
//!
//! The curriculum only ever sees context ids and episode outcomes. Three
//! strategies are provided:
//!
//! * **A**: uniform.
//! * **B**: favours contexts with fewer accumulated environment steps,
//!   `softmax(-counts / temperature)`.
//! * **C**: the context with the lowest moving-average return is sampled with
//!   probability `p_hardest`; the rest share the remainder uniformly.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurriculumKind {
    A,
    B,
    C,
}

impl std::str::FromStr for CurriculumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(CurriculumKind::A),
            "B" => Ok(CurriculumKind::B),
            "C" => Ok(CurriculumKind::C),
            _ => Err(Error::Config(format!("unknown curriculum `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub kind: CurriculumKind,
    /// Moving-average horizon for C.
    pub window: usize,
    /// Probability of the hardest context under C.
    pub p_hardest: f64,
    /// B temperature is `(mean(counts) + 1) * temperature_scale`.
    pub temperature_scale: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            kind: CurriculumKind::A,
            window: 10,
            p_hardest: 0.95,
            temperature_scale: 0.2,
        }
    }
}

/// What happened in one episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_return: f64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub config: CurriculumConfig,
    /// Hardness estimate per context.
    pub g: Vec<f64>,
    pub dist: Vec<f64>,
    pub step_counts: Vec<u64>,
    pub windows: Vec<VecDeque<f64>>,
    /// Whether C has seen an outcome for the context; unvisited contexts
    /// rank as hardest.
    pub visited: Vec<bool>,
}

/// One line of the curriculum trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: u64,
    pub context_id: usize,
    pub outcome: f64,
    pub g: Vec<f64>,
}

impl CurriculumState {
    pub fn new(config: CurriculumConfig, n_contexts: usize) -> Result<Self> {
        if n_contexts == 0 {
            return Err(Error::Config("curriculum over an empty context set".into()));
        }
        if config.kind == CurriculumKind::C && config.window == 0 {
            return Err(Error::Config("curriculum C needs a window of at least 1".into()));
        }
        if !(0.0..=1.0).contains(&config.p_hardest) || !(config.temperature_scale > 0.0) {
            return Err(Error::Config("invalid curriculum probability or temperature".into()));
        }
        let mut s = Self {
            config,
            g: vec![0.0; n_contexts],
            dist: vec![1.0 / n_contexts as f64; n_contexts],
            step_counts: vec![0; n_contexts],
            windows: vec![VecDeque::new(); n_contexts],
            visited: vec![false; n_contexts],
        };
        s.refresh();
        Ok(s)
    }

    /// Curriculum C with externally fixed hardness values, all visited.
    pub fn with_hardness(config: CurriculumConfig, g: Vec<f64>) -> Result<Self> {
        let mut s = Self::new(config, g.len())?;
        s.visited = vec![true; g.len()];
        s.g = g;
        s.refresh();
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// The outcome value this curriculum's metric consumes.
    pub fn outcome_value(&self, u: &EpisodeOutcome) -> f64 {
        match self.config.kind {
            CurriculumKind::C => u.episode_return,
            _ => u.length as f64,
        }
    }

    pub fn record_outcome(&mut self, context_id: usize, u: EpisodeOutcome) -> Result<()> {
        if context_id >= self.len() {
            return Err(Error::UnknownContext(context_id));
        }
        if !u.episode_return.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "episode return {} in context {context_id}",
                u.episode_return
            )));
        }
        self.step_counts[context_id] += u.length;
        match self.config.kind {
            CurriculumKind::A => {}
            CurriculumKind::B => self.g[context_id] += u.length as f64,
            CurriculumKind::C => {
                let w = &mut self.windows[context_id];
                w.push_back(u.episode_return);
                while w.len() > self.config.window {
                    w.pop_front();
                }
                self.g[context_id] = w.iter().sum::<f64>() / w.len() as f64;
                self.visited[context_id] = true;
            }
        }
        self.refresh();
        Ok(())
    }

    /// Index of the context C treats as hardest; unvisited first, ties to the
    /// lowest id.
    pub fn hardest(&self) -> usize {
        if let Some(i) = self.visited.iter().position(|v| !v) {
            return i;
        }
        let mut best = 0;
        for (i, &g) in self.g.iter().enumerate() {
            if g < self.g[best] {
                best = i;
            }
        }
        best
    }

    fn refresh(&mut self) {
        let n = self.len();
        self.dist = match self.config.kind {
            CurriculumKind::A => vec![1.0 / n as f64; n],
            CurriculumKind::B => {
                let mean = self.step_counts.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
                let temp = (mean + 1.0) * self.config.temperature_scale;
                let logits: Vec<f64> = self.step_counts.iter().map(|&c| -(c as f64) / temp).collect();
                crate::moe::router::softmax(&logits)
            }
            CurriculumKind::C => {
                if n == 1 {
                    vec![1.0]
                } else {
                    let h = self.hardest();
                    let rest = (1.0 - self.config.p_hardest) / (n - 1) as f64;
                    (0..n)
                        .map(|i| if i == h { self.config.p_hardest } else { rest })
                        .collect()
                }
            }
        };
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match WeightedIndex::new(&self.dist) {
            Ok(w) => w.sample(rng),
            // All-zero weights cannot arise from `refresh`; fall back to uniform.
            Err(_) => rng.random_range(0..self.len()),
        }
    }

    pub fn trace(&self, episode: u64, context_id: usize, u: &EpisodeOutcome) -> TraceRecord {
        TraceRecord {
            episode,
            context_id,
            outcome: self.outcome_value(u),
            g: self.g.clone(),
        }
    }

    pub fn snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn restore(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(kind: CurriculumKind) -> CurriculumConfig {
        CurriculumConfig {
            kind,
            ..Default::default()
        }
    }

    fn out(ret: f64, len: u64) -> EpisodeOutcome {
        EpisodeOutcome {
            episode_return: ret,
            length: len,
        }
    }

    fn assert_valid(d: &[f64]) {
        assert!(d.iter().all(|&p| p >= 0.0));
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_ignores_outcomes() {
        let mut s = CurriculumState::new(cfg(CurriculumKind::A), 4).unwrap();
        s.record_outcome(2, out(-50.0, 99)).unwrap();
        assert_eq!(s.g, vec![0.0; 4]);
        assert_eq!(s.dist, vec![0.25; 4]);
    }

    #[test]
    fn step_counting_accumulates() {
        let mut s = CurriculumState::new(cfg(CurriculumKind::B), 2).unwrap();
        s.record_outcome(0, out(1.0, 100)).unwrap();
        s.record_outcome(0, out(1.0, 150)).unwrap();
        assert_eq!(s.g[0], 250.0);
        assert!(s.dist[1] > s.dist[0]);
    }

    #[test]
    fn step_counting_strongly_prefers_the_starved_context() {
        let mut s = CurriculumState::new(cfg(CurriculumKind::B), 2).unwrap();
        s.record_outcome(1, out(0.0, 1_000_000)).unwrap();
        // Independent evaluation of the two-way softmax: logistic(Δ / T).
        let temp: f64 = (500_000.0 + 1.0) * 0.2;
        let p0 = 1.0 / (1.0 + (-1e6 / temp).exp());
        assert!((s.dist[0] - p0).abs() < 1e-12);
        assert!(s.dist[0] >= 0.99);
    }

    #[test]
    fn frozen_hardness_gives_p_to_argmin() {
        let s = CurriculumState::with_hardness(cfg(CurriculumKind::C), vec![5.0, 1.0, 3.0]).unwrap();
        assert!((s.dist[1] - 0.95).abs() < 1e-15);
        assert!((s.dist[0] - 0.025).abs() < 1e-15);
        assert!((s.dist[2] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn moving_average_window_and_unvisited_first() {
        let mut s = CurriculumState::new(cfg(CurriculumKind::C), 3).unwrap();
        assert_eq!(s.hardest(), 0);
        s.record_outcome(0, out(-100.0, 5)).unwrap();
        // Context 1 is unvisited, so it outranks the very poor context 0.
        assert_eq!(s.hardest(), 1);
        s.record_outcome(1, out(10.0, 5)).unwrap();
        s.record_outcome(2, out(20.0, 5)).unwrap();
        assert_eq!(s.hardest(), 0);
        for _ in 0..10 {
            s.record_outcome(0, out(50.0, 5)).unwrap();
        }
        // The -100 has left the 10-episode window.
        assert_eq!(s.g[0], 50.0);
        assert_eq!(s.hardest(), 1);
        assert!(s.g.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let s = CurriculumState::with_hardness(cfg(CurriculumKind::C), vec![2.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.hardest(), 1);
    }

    #[test]
    fn unknown_context_rejected() {
        let mut s = CurriculumState::new(cfg(CurriculumKind::A), 2).unwrap();
        assert!(matches!(s.record_outcome(2, out(0.0, 1)), Err(Error::UnknownContext(2))));
    }

    #[test]
    fn fresh_state_snapshot_round_trip() {
        let s = CurriculumState::new(cfg(CurriculumKind::C), 3).unwrap();
        assert_eq!(s.g, vec![0.0; 3]);
        let a = s.snapshot().unwrap();
        let b = CurriculumState::restore(&a).unwrap().snapshot().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restored_state_continues_identically() {
        let mut s = CurriculumState::new(cfg(CurriculumKind::C), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..30 {
            let c = s.sample_context(&mut rng);
            s.record_outcome(c, out((i as f64 * 0.37).sin() * 10.0 + 0.1, 7)).unwrap();
        }
        let mut r = CurriculumState::restore(&s.snapshot().unwrap()).unwrap();
        let mut rng2 = rng.clone();
        for i in 0..50 {
            let a = s.sample_context(&mut rng);
            let b = r.sample_context(&mut rng2);
            assert_eq!(a, b);
            let u = out((i as f64).cos() * 3.3, 3);
            s.record_outcome(a, u).unwrap();
            r.record_outcome(b, u).unwrap();
        }
        assert_eq!(s, r);
    }

    proptest! {
        #[test]
        fn dist_stays_valid(
            kind in prop_oneof![Just(CurriculumKind::A), Just(CurriculumKind::B), Just(CurriculumKind::C)],
            events in prop::collection::vec((0usize..5, -100.0f64..100.0, 1u64..500), 0..60),
        ) {
            let mut s = CurriculumState::new(cfg(kind), 5).unwrap();
            for (c, r, l) in events {
                s.record_outcome(c, out(r, l)).unwrap();
                assert_valid(&s.dist);
                prop_assert!(s.g.iter().all(|g| g.is_finite()));
            }
        }

        #[test]
        fn argmin_invariant_to_positive_scaling(
            g in prop::collection::vec(-50.0f64..50.0, 1..8),
            c in 0.01f64..100.0,
        ) {
            let a = CurriculumState::with_hardness(cfg(CurriculumKind::C), g.clone()).unwrap();
            let b = CurriculumState::with_hardness(
                cfg(CurriculumKind::C),
                g.iter().map(|v| v * c).collect(),
            ).unwrap();
            prop_assert_eq!(a.hardest(), b.hardest());
        }
    }
}
