//! Switching policy: a bank of single-mode policies dispatched by the
//! oracle's active mode parameter.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::Archive;
use crate::nn::Real;
use crate::sac::{ActOutput, Agent};

#[derive(Clone, Debug)]
pub struct BankEntry<F> {
    pub mu: Vec<f64>,
    pub policy: Agent<F>,
}

#[derive(Clone, Debug, Default)]
pub struct PolicyBank<F> {
    pub entries: Vec<BankEntry<F>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub mu: Vec<f64>,
    /// Relative to the manifest's directory.
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Nearest mode by Euclidean distance; ties go to the lowest index.
pub fn nearest_mode(modes: &[Vec<f64>], active_mu: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in modes.iter().enumerate() {
        if m.len() != active_mu.len() {
            return Err(Error::ShapeMismatch(format!(
                "bank mode of length {}, active mode of length {}",
                m.len(),
                active_mu.len()
            )));
        }
        let d: f64 = m.iter().zip(active_mu).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyBank)
}

impl<F: Real> PolicyBank<F> {
    pub fn new(entries: Vec<BankEntry<F>>) -> Result<Self> {
        let bank = Self { entries };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.entries.first() else {
            return Err(Error::EmptyBank);
        };
        for (i, e) in self.entries.iter().enumerate() {
            if e.policy.act_dim != first.policy.act_dim || e.policy.obs_dim != first.policy.obs_dim {
                return Err(Error::ShapeMismatch(format!("bank entry {i} has different dimensions")));
            }
            if self.entries[..i].iter().any(|o| o.mu == e.mu) {
                return Err(Error::Config(format!("duplicate bank mode {:?}", e.mu)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn modes(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|e| e.mu.clone()).collect()
    }

    pub fn select_component(&self, active_mu: &[f64]) -> Result<usize> {
        nearest_mode(&self.modes(), active_mu)
    }

    /// Action of the component nearest to `active_mu`, and its index. Only
    /// that component consumes randomness.
    pub fn switched_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        active_mu: &[f64],
        rng: &mut R,
        deterministic: bool,
    ) -> Result<(usize, ActOutput)> {
        let i = self.select_component(active_mu)?;
        let p = &self.entries[i].policy;
        let input = p.input(obs, Some(active_mu))?;
        Ok((i, p.act(&input, rng, deterministic)?))
    }

    /// Write one checkpoint per component next to `manifest.json` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            let name = PathBuf::from(format!("component{i}.ckpt"));
            e.policy.to_archive().save(&dir.join(&name))?;
            entries.push(ManifestEntry {
                mu: e.mu.clone(),
                checkpoint: name,
            });
        }
        let text = serde_json::to_string_pretty(&BankManifest { entries })?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: BankManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let entries = m
            .entries
            .into_iter()
            .map(|e| {
                Ok(BankEntry {
                    mu: e.mu,
                    policy: Agent::from_archive(&Archive::load(&dir.join(e.checkpoint))?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }
}
