use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{desk_sac, ExperimentConfig, ModelKind, ModelSpec};
use super::eval::{run_eval, write_eval, Controller, DispatchRecord, EvalClass, EvalOutput, RolloutOptions};
use super::train::train;
use crate::baselines::{BankEntry, PolicyBank};
use crate::error::Result;
use crate::hybrid::contexts::{goal_two_mode, GOAL_GAINS};
use crate::hybrid::{EnvSpec, GoalEnvConfig};
use crate::moe::MoeConfig;
use crate::nn::checkpoint::Archive;
use crate::sac::{Agent, SacConfig};

/// Trajectories kept per policy in the demo output.
const KEPT_TRAJECTORIES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub seed: u64,
    /// Environment steps per trained policy.
    pub steps: u64,
    pub eval_episodes: usize,
    pub threads: usize,
    pub sac: SacConfig,
    pub moe: MoeConfig,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 60_000,
            eval_episodes: 200,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            sac: desk_sac(),
            moe: MoeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub name: String,
    pub mean_return: f64,
    pub std_return: f64,
    pub goal_rate: f64,
    pub crash_rate: f64,
    pub returns: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub seed: u64,
    pub steps: u64,
    pub policies: Vec<PolicySummary>,
    /// Switching-policy steps audited against the nearest-mode rule.
    pub dispatch_steps: usize,
    pub dispatch_mismatches: usize,
}

impl DemoReport {
    pub fn policy(&self, name: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.name == name)
    }
}

fn summarize(name: &str, out: &EvalOutput) -> PolicySummary {
    let records = out.records();
    let returns: Vec<f64> = records.iter().map(|r| r.episode_return).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    PolicySummary {
        name: name.into(),
        mean_return: mean,
        std_return: var.sqrt(),
        goal_rate: records.iter().filter(|r| r.goal_reached).count() as f64 / n,
        crash_rate: records.iter().filter(|r| r.crashed).count() as f64 / n,
        returns,
    }
}

/// Count dispatches that disagree with a sort-based nearest-mode choice.
pub fn audit_dispatch(modes: &[f64], dispatch: &[DispatchRecord]) -> usize {
    dispatch
        .iter()
        .filter(|d| {
            let mut order: Vec<usize> = (0..modes.len()).collect();
            // Stable sort keeps the lowest index first among ties.
            order.sort_by(|&a, &b| {
                (modes[a] - d.active_mu[0])
                    .abs()
                    .total_cmp(&(modes[b] - d.active_mu[0]).abs())
            });
            order[0] != d.component
        })
        .count()
}

/// Train the two single-mode components, a plain policy and a MoE policy
/// on the two-mode workspace, then evaluate all of them and the switching
/// policy on that workspace.
pub fn demo_example2(config: &DemoConfig, out: &Path, mut log: impl FnMut(&str)) -> Result<DemoReport> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("demo.toml"), toml::to_string(config)?)?;
    let env = EnvSpec::Goal(GoalEnvConfig::default());
    let base = |name: &str, contexts: String, kind: ModelKind, seed_offset: u64| ExperimentConfig {
        name: name.into(),
        seed: config.seed.wrapping_add(seed_offset),
        steps: config.steps,
        out_dir: out.join(name),
        env: env.clone(),
        contexts,
        model: ModelSpec { kind, bank: None },
        sac: config.sac.clone(),
        moe: config.moe.clone(),
        ..Default::default()
    };
    let runs = [
        base("pi_1", format!("goal-single:{}", GOAL_GAINS[0]), ModelKind::Sac, 0),
        base("pi_2", format!("goal-single:{}", GOAL_GAINS[1]), ModelKind::Sac, 1),
        base("pi_opt", "goal-two-mode".into(), ModelKind::Sac, 2),
        base("sac_moe", "goal-two-mode".into(), ModelKind::SacMoe, 3),
    ];
    let mut agents = Vec::new();
    for r in &runs {
        log(&format!("training {} for {} steps", r.name, r.steps));
        let s = train(r, false, |_| {})?;
        log(&format!("  {} episodes in {:.0}s", s.episodes, s.seconds));
        agents.push(Agent::<f32>::from_archive(&Archive::load(&r.out_dir.join("checkpoint.ckpt"))?)?);
    }
    let bank = PolicyBank::new(vec![
        BankEntry {
            mu: vec![GOAL_GAINS[0]],
            policy: agents[0].clone(),
        },
        BankEntry {
            mu: vec![GOAL_GAINS[1]],
            policy: agents[1].clone(),
        },
    ])?;
    bank.save(&out.join("bank"))?;

    let classes = [EvalClass::set(goal_two_mode())];
    let opts = RolloutOptions {
        deterministic: true,
        trajectory: true,
        activations: true,
    };
    let eval_seed = config.seed.wrapping_add(100);
    let mut policies = Vec::new();
    let mut dispatch = Vec::new();
    let controllers: Vec<(&str, Controller<'_, f32>)> = vec![
        ("pi_1", Controller::Agent(&agents[0])),
        ("pi_2", Controller::Agent(&agents[1])),
        ("pi_opt", Controller::Agent(&agents[2])),
        ("sac_moe", Controller::Agent(&agents[3])),
        ("pi_sw", Controller::Switched(&bank)),
    ];
    let mut returns_log = std::io::BufWriter::new(std::fs::File::create(out.join("returns.jsonl"))?);
    for (name, ctrl) in controllers {
        let mut res = run_eval(ctrl, &env, &classes, config.eval_episodes, eval_seed, config.threads, opts)?;
        for l in &res.logs {
            dispatch.extend(l.dispatch.iter().cloned());
        }
        for (i, l) in res.logs.iter_mut().enumerate() {
            if i >= KEPT_TRAJECTORIES {
                l.trajectory.clear();
            }
            if let Some(r) = &l.record {
                writeln!(
                    returns_log,
                    "{}",
                    serde_json::json!({ "policy": name, "episode": r.episode, "return": r.episode_return })
                )?;
            }
        }
        write_eval(&out.join(name).join("eval"), &res)?;
        let s = summarize(name, &res);
        log(&format!("{name}: mean return {:.2} (std {:.2})", s.mean_return, s.std_return));
        policies.push(s);
    }
    returns_log.flush()?;
    let mut dlog = std::io::BufWriter::new(std::fs::File::create(out.join("dispatch.jsonl"))?);
    for d in &dispatch {
        writeln!(dlog, "{}", serde_json::to_string(d)?)?;
    }
    dlog.flush()?;

    let report = DemoReport {
        seed: config.seed,
        steps: config.steps,
        policies,
        dispatch_steps: dispatch.len(),
        dispatch_mismatches: audit_dispatch(&GOAL_GAINS, &dispatch),
    };
    std::fs::write(out.join("demo_report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
