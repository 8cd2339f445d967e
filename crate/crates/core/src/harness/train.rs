use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::{run_eval, Controller, EvalClass, RolloutOptions};
use crate::curriculum::CurriculumState;
use crate::error::{Error, Result};
use crate::nn::checkpoint::Archive;
use crate::rng::stream;
use crate::sac::{Agent, Trainer, TrainerSinks};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stream id for network initialisation.
const INIT_STREAM: u64 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub mean_return: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub episodes: u64,
    pub evals: Vec<EvalPoint>,
    /// Whether `stop_at_return` was reached before the budget ran out.
    pub stopped_early: bool,
    pub seconds: f64,
}

/// Write the reproducibility stamp of a run directory.
pub fn write_run_header(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
    std::fs::write(dir.join("config.sha256"), format!("{}\n", config.hash()?))?;
    std::fs::write(dir.join("seed"), format!("{}\n", config.seed))?;
    std::fs::write(dir.join("version"), format!("sacmoe {VERSION}\n"))?;
    Ok(())
}

pub fn new_trainer(config: &ExperimentConfig) -> Result<Trainer<f32>> {
    config.validate()?;
    let kind = config
        .model
        .kind
        .actor()
        .ok_or_else(|| Error::Config("the switching bank is evaluation-only".into()))?;
    let contexts = config.context_set()?;
    let env = config.env.build();
    let mut rng = stream(config.seed, &[INIT_STREAM]);
    let agent = Agent::new(
        kind,
        env.obs_dim(),
        env.act_dim(),
        config.sac.clone(),
        config.moe.clone(),
        &mut rng,
    )?;
    let cur = CurriculumState::new(config.curriculum.clone(), contexts.len())?;
    Trainer::new(agent, config.env.clone(), contexts, cur, config.seed)
}

pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
    pub fn curriculum(&self) -> PathBuf {
        self.dir.join("curriculum.jsonl")
    }
    pub fn evals(&self) -> PathBuf {
        self.dir.join("eval.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.ckpt")
    }
    pub fn trainer_state(&self) -> PathBuf {
        self.dir.join("trainer.ckpt")
    }
}

/// Mean deterministic return on the training contexts.
pub fn evaluate_agent(agent: &Agent<f32>, config: &ExperimentConfig, episodes: usize, seed: u64) -> Result<f64> {
    let classes = [EvalClass::set(config.context_set()?)];
    let out = run_eval(
        Controller::Agent(agent),
        &config.env,
        &classes,
        episodes,
        seed,
        config.eval.threads,
        RolloutOptions {
            deterministic: true,
            ..Default::default()
        },
    )?;
    Ok(out.report.classes[0].mean_return)
}

/// Train per `config`, writing the run directory at `config.out_dir`. With
/// `resume`, continue from the directory's trainer snapshot.
pub fn train(config: &ExperimentConfig, resume: bool, mut progress: impl FnMut(&EvalPoint)) -> Result<TrainSummary> {
    let start = std::time::Instant::now();
    let paths = RunPaths::new(&config.out_dir);
    write_run_header(&paths.dir, config)?;
    let (mut trainer, append) = if resume && paths.trainer_state().exists() {
        (Trainer::<f32>::restore(&Archive::load(&paths.trainer_state())?)?, true)
    } else {
        (new_trainer(config)?, false)
    };
    let open = |p: PathBuf| -> Result<BufWriter<File>> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(p)?;
        Ok(BufWriter::new(f))
    };
    let mut metrics = open(paths.metrics())?;
    let mut trace = open(paths.curriculum())?;
    let mut evals_log = open(paths.evals())?;

    let mut evals = Vec::new();
    let mut stopped_early = false;
    let every = config.eval.every_steps.filter(|&n| n > 0);
    while trainer.steps() < config.steps {
        let chunk = match every {
            Some(n) => n - trainer.steps() % n,
            None => config.steps - trainer.steps(),
        }
        .min(config.steps - trainer.steps());
        let mut sinks = TrainerSinks {
            metrics: Some(&mut metrics),
            trace: Some(&mut trace),
        };
        trainer.run(chunk, &mut sinks, |_, _| Ok(()))?;
        if every.is_some() && trainer.steps() % every.unwrap_or(1) == 0 {
            let mean_return = evaluate_agent(
                &trainer.agent,
                config,
                config.eval.episodes,
                config.seed ^ trainer.steps(),
            )?;
            let point = EvalPoint {
                step: trainer.steps(),
                mean_return,
                episodes: config.eval.episodes,
            };
            writeln!(evals_log, "{}", serde_json::to_string(&point)?)?;
            evals_log.flush()?;
            progress(&point);
            evals.push(point);
            if config.eval.stop_at_return.is_some_and(|t| mean_return >= t) {
                stopped_early = true;
                break;
            }
        }
    }
    metrics.flush()?;
    trace.flush()?;
    trainer.agent.to_archive().save(&paths.checkpoint())?;
    trainer.snapshot()?.save(&paths.trainer_state())?;
    Ok(TrainSummary {
        steps: trainer.steps(),
        episodes: trainer.episodes(),
        evals,
        stopped_early,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::EpisodeMetrics;

    fn small(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            steps: 600,
            out_dir: dir.to_path_buf(),
            ..Default::default()
        };
        c.sac.warmup_steps = 200;
        c.sac.batch_size = 32;
        c.sac.actor_hidden = vec![16];
        c.sac.critic_hidden = vec![16];
        c.eval.every_steps = Some(300);
        c.eval.episodes = 3;
        c
    }

    #[test]
    fn run_directory_is_complete() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(dir.path());
        let s = train(&c, false, |_| {}).unwrap();
        assert_eq!(s.steps, 600);
        assert_eq!(s.evals.len(), 2);
        for f in ["config.toml", "config.sha256", "seed", "version", "metrics.jsonl", "checkpoint.ckpt", "eval.jsonl"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(back, c);
        let hash = std::fs::read_to_string(dir.path().join("config.sha256")).unwrap();
        assert_eq!(hash.trim(), c.hash().unwrap());
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let full = small(d1.path());
        train(&full, false, |_| {}).unwrap();
        let mut half = small(d2.path());
        half.steps = 300;
        train(&half, false, |_| {}).unwrap();
        half.steps = 600;
        train(&half, true, |_| {}).unwrap();
        let read = |d: &Path| -> Vec<EpisodeMetrics> {
            std::fs::read_to_string(d.join("metrics.jsonl"))
                .unwrap()
                .lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect()
        };
        assert_eq!(read(d1.path()), read(d2.path()));
        assert_eq!(
            std::fs::read(d1.path().join("checkpoint.ckpt")).unwrap(),
            std::fs::read(d2.path().join("checkpoint.ckpt")).unwrap()
        );
    }
}
