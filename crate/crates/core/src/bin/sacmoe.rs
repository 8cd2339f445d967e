use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use sacmoe::baselines::PolicyBank;
use sacmoe::curriculum::CurriculumKind;
use sacmoe::harness::{
    demo_example2, export_plot_data, parse_eval_classes, run_eval, train, write_eval, Controller, DemoConfig,
    EvalClass, ExperimentConfig, ExportKind, ModelKind, RolloutOptions,
};
use sacmoe::nn::checkpoint::Archive;
use sacmoe::sac::Agent;
use sacmoe::Result;

#[derive(Parser)]
#[command(name = "sacmoe", version, about = "SAC with a mixture-of-experts actor on hybrid bicycle environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        /// sac | sac-moe | sac-uptrue
        #[arg(long)]
        model: Option<String>,
        /// A | B | C
        #[arg(long)]
        curriculum: Option<String>,
        /// Shipped context-set name or TOML path.
        #[arg(long)]
        contexts: Option<String>,
        /// Continue from the run directory's trainer snapshot.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint (or a switching bank) and write per-episode records.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Agent checkpoint; defaults to `<config out_dir>/checkpoint.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Switching-bank directory; evaluates the switching policy instead.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Surface classes, e.g. `high,low+medium`; defaults to the training set.
        #[arg(long)]
        contexts: Option<String>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        /// Sample actions instead of using the mean.
        #[arg(long)]
        stochastic: bool,
        #[arg(long)]
        trajectories: bool,
    },
    /// Two-mode goal-seeking demonstration with the switching baseline.
    DemoExample2 {
        #[command(flatten)]
        common: Common,
        /// Environment steps per trained policy.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Convert run logs into CSV files under `<run>/plots`.
    Export {
        #[command(flatten)]
        common: Common,
        /// returns | trajectories | activations | curriculum
        #[arg(long)]
        kind: String,
        /// Run directory; defaults to `--out`.
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(o) = &common.out {
        c.out_dir = o.clone();
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            steps,
            model,
            curriculum,
            contexts,
            resume,
        } => {
            let mut c = load_config(&common)?;
            if let Some(s) = steps {
                c.steps = s;
            }
            if let Some(m) = model {
                c.model.kind = m.parse()?;
            }
            if let Some(k) = curriculum {
                c.curriculum.kind = k.parse::<CurriculumKind>()?;
            }
            if let Some(ctx) = contexts {
                c.contexts = ctx;
            }
            c.validate()?;
            info!("training {} into {}", c.name, c.out_dir.display());
            let s = train(&c, resume, |p| {
                info!("step {}: mean eval return {:.3}", p.step, p.mean_return)
            })?;
            println!(
                "trained {} steps, {} episodes in {:.1}s{}",
                s.steps,
                s.episodes,
                s.seconds,
                if s.stopped_early { " (target return reached)" } else { "" }
            );
        }
        Command::Eval {
            common,
            checkpoint,
            bank,
            contexts,
            episodes,
            stochastic,
            trajectories,
        } => {
            // The run directory comes from the config; `--out` only moves the eval output.
            let c = load_config(&Common {
                out: None,
                ..common
            })?;
            let classes = match contexts {
                Some(t) => parse_eval_classes(&t)?,
                None => vec![EvalClass::set(c.context_set()?)],
            };
            let opts = RolloutOptions {
                deterministic: !stochastic,
                trajectory: trajectories,
                activations: true,
            };
            let bank_dir = bank.or_else(|| (c.model.kind == ModelKind::SacSw).then(|| c.model.bank.clone()).flatten());
            let out = match bank_dir {
                Some(dir) => {
                    let b = PolicyBank::<f32>::load(&dir)?;
                    run_eval(Controller::Switched(&b), &c.env, &classes, episodes, c.seed, c.eval.threads, opts)?
                }
                None => {
                    let path = checkpoint.unwrap_or_else(|| c.out_dir.join("checkpoint.ckpt"));
                    let a = Agent::<f32>::from_archive(&Archive::load(&path)?)?;
                    run_eval(Controller::Agent(&a), &c.env, &classes, episodes, c.seed, c.eval.threads, opts)?
                }
            };
            let dir = common.out.unwrap_or_else(|| c.out_dir.join("eval"));
            write_eval(&dir, &out)?;
            print!("{}", out.report);
        }
        Command::DemoExample2 { common, steps, episodes } => {
            let mut d: DemoConfig = match &common.config {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
                None => DemoConfig::default(),
            };
            if let Some(s) = common.seed {
                d.seed = s;
            }
            if let Some(s) = steps {
                d.steps = s;
            }
            if let Some(e) = episodes {
                d.eval_episodes = e;
            }
            let out = common.out.unwrap_or_else(|| PathBuf::from("runs/demo-example2"));
            let r = demo_example2(&d, &out, |m| info!("{m}"))?;
            for p in &r.policies {
                println!("{:<8} mean return {:>8.3}  std {:>7.3}  goal rate {:.3}", p.name, p.mean_return, p.std_return, p.goal_rate);
            }
            println!("dispatch: {} steps, {} mismatches", r.dispatch_steps, r.dispatch_mismatches);
        }
        Command::Export { common, kind, run } => {
            let dir = run
                .or(common.out)
                .unwrap_or_else(|| Path::new(".").to_path_buf());
            for f in export_plot_data(&dir, kind.parse::<ExportKind>()?)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
