use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::PolicyBank;
use crate::error::{Error, Result};
use crate::hybrid::{sample_test_context, Context, ContextSet, EnvSpec, HybridEnv, SurfaceClass, TrajectoryRecord};
use crate::moe::RouterDecision;
use crate::nn::Real;
use crate::rng::{derive_seed, stream};
use crate::sac::Agent;

const EVAL_ENV: u64 = 11;
const EVAL_ACT: u64 = 12;
const EVAL_CTX: u64 = 13;

/// Anything that maps an environment state to an action.
pub enum Controller<'a, F> {
    Agent(&'a Agent<F>),
    Switched(&'a PolicyBank<F>),
    /// Uniform actions on `[-1, 1]^2`.
    Random,
}

impl<F> Clone for Controller<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F> Copy for Controller<'_, F> {}

struct Decision {
    action: Vec<f64>,
    component: Option<usize>,
    routing: Option<Vec<RouterDecision>>,
}

impl<F: Real> Controller<'_, F> {
    fn decide<R: Rng + ?Sized>(&self, env: &HybridEnv, rng: &mut R, deterministic: bool) -> Result<Decision> {
        let obs = env.observation();
        match self {
            Controller::Agent(a) => {
                let mu = if a.kind.uses_oracle() { Some(env.oracle()?.1) } else { None };
                let out = a.act(&a.input(&obs, mu.as_deref())?, rng, deterministic)?;
                Ok(Decision {
                    action: out.action,
                    component: None,
                    routing: out.decisions,
                })
            }
            Controller::Switched(b) => {
                let mu = env.oracle()?.1;
                let (i, out) = b.switched_action(&obs, &mu, rng, deterministic)?;
                Ok(Decision {
                    action: out.action,
                    component: Some(i),
                    routing: None,
                })
            }
            Controller::Random => Ok(Decision {
                action: (0..env.act_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
                component: None,
                routing: None,
            }),
        }
    }
}

/// Where the contexts of one evaluation class come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ContextSource {
    /// Fresh test context per episode, every region drawn from these classes.
    Surfaces(Vec<SurfaceClass>),
    /// Cycle through a fixed set, episode `i` in context `i mod len`.
    Set(ContextSet),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalClass {
    pub name: String,
    pub source: ContextSource,
}

impl EvalClass {
    pub fn set(set: ContextSet) -> Self {
        Self {
            name: set.name.clone(),
            source: ContextSource::Set(set),
        }
    }

    fn context(&self, env: &HybridEnv, seed: u64, episode: usize) -> Result<Context> {
        match &self.source {
            ContextSource::Set(s) => Ok(s.get(episode % s.len())?.clone()),
            ContextSource::Surfaces(classes) => {
                let HybridEnv::Racing(r) = env else {
                    return Err(Error::Config("surface classes only apply to the racing env".into()));
                };
                let mut rng = stream(seed, &[EVAL_CTX, episode as u64]);
                sample_test_context(&mut rng, r.track.n_regions, classes, episode)
            }
        }
    }
}

/// Parse `high,low+medium`: comma-separated classes, `+` joins surfaces
/// into one mixed class.
pub fn parse_eval_classes(text: &str) -> Result<Vec<EvalClass>> {
    let classes = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            let surfaces = name
                .split('+')
                .map(|s| s.trim().parse::<SurfaceClass>())
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalClass {
                name: name.to_string(),
                source: ContextSource::Surfaces(surfaces),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if classes.is_empty() {
        return Err(Error::EmptySurfaceSet);
    }
    Ok(classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub class: String,
    pub episode: usize,
    pub context_id: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub length: usize,
    pub laps: usize,
    pub lap_times: Vec<f64>,
    pub crashed: bool,
    pub goal_reached: bool,
}

/// Per-step expert usage of a MoE actor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub class: String,
    pub episode: usize,
    pub t: usize,
    pub context_id: usize,
    pub active_mode: usize,
    pub active_mu: Vec<f64>,
    /// Selected experts per token, best first.
    pub selected: Vec<Vec<usize>>,
    /// Combination weights per token, aligned with `selected`.
    pub weights: Vec<Vec<f64>>,
}

/// One dispatch of the switching policy with the mode it saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub t: usize,
    pub active_mu: Vec<f64>,
    pub component: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RolloutOptions {
    pub deterministic: bool,
    pub trajectory: bool,
    pub activations: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutLog {
    pub record: Option<EpisodeRecord>,
    pub trajectory: Vec<TrajectoryRecord>,
    pub activations: Vec<ActivationRecord>,
    pub dispatch: Vec<DispatchRecord>,
}

/// Play one evaluation episode. The env start and the action noise are
/// derived from `(seed, episode)` only.
pub fn rollout<F: Real>(
    ctrl: Controller<'_, F>,
    env_spec: &EnvSpec,
    class: &EvalClass,
    episode: usize,
    seed: u64,
    opts: RolloutOptions,
) -> Result<RolloutLog> {
    let mut env = env_spec.build();
    let context = class.context(&env, seed, episode)?;
    let context_id = context.id;
    env.reset(context, derive_seed(seed, &[EVAL_ENV, episode as u64]))?;
    let mut rng = stream(seed, &[EVAL_ACT, episode as u64]);
    let mut log = RolloutLog::default();
    let mut ret = 0.0;
    loop {
        let t = env.steps();
        let (mode, mu) = env.oracle()?;
        let d = ctrl.decide(&env, &mut rng, opts.deterministic)?;
        if let Some(c) = d.component {
            log.dispatch.push(DispatchRecord {
                t,
                active_mu: mu.clone(),
                component: c,
            });
        }
        if opts.activations {
            if let Some(routing) = &d.routing {
                log.activations.push(ActivationRecord {
                    class: class.name.clone(),
                    episode,
                    t,
                    context_id,
                    active_mode: mode,
                    active_mu: mu.clone(),
                    selected: routing.iter().map(|r| r.selected.clone()).collect(),
                    weights: routing.iter().map(|r| r.weights.clone()).collect(),
                });
            }
        }
        let state = env.state();
        let st = env.step(&d.action)?;
        ret += st.reward;
        if opts.trajectory {
            log.trajectory.push(TrajectoryRecord {
                t,
                state: state.to_vec(),
                action: d.action,
                reward: st.reward,
                mode_index: mode,
            });
        }
        if st.finished() {
            log.record = Some(EpisodeRecord {
                class: class.name.clone(),
                episode,
                context_id,
                episode_return: ret,
                length: env.steps(),
                laps: st.info.laps,
                lap_times: env.lap_times().to_vec(),
                crashed: st.info.crashed,
                goal_reached: st.info.goal_reached,
            });
            return Ok(log);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub episodes: usize,
    /// Mean completed laps per episode; absent when no lap was completed.
    pub mean_laps: Option<f64>,
    /// Mean duration of completed laps (s); absent when no lap was completed.
    pub avg_lap_time: Option<f64>,
    pub crash_rate: f64,
    pub mean_return: f64,
    pub goal_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    pub fn class(&self, name: &str) -> Option<&ClassReport> {
        self.classes.iter().find(|c| c.class == name)
    }

    pub fn total_episodes(&self) -> usize {
        self.classes.iter().map(|c| c.episodes).sum()
    }
}

/// Group records by class, in order of first appearance.
pub fn aggregate(records: &[EpisodeRecord]) -> EvalReport {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.class.as_str()) {
            names.push(&r.class);
        }
    }
    let classes = names
        .into_iter()
        .map(|name| {
            let rs: Vec<&EpisodeRecord> = records.iter().filter(|r| r.class == name).collect();
            let n = rs.len() as f64;
            let laps: usize = rs.iter().map(|r| r.laps).sum();
            let times: Vec<f64> = rs.iter().flat_map(|r| r.lap_times.iter().copied()).collect();
            ClassReport {
                class: name.to_string(),
                episodes: rs.len(),
                mean_laps: (laps > 0).then(|| laps as f64 / n),
                avg_lap_time: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
                crash_rate: rs.iter().filter(|r| r.crashed).count() as f64 / n,
                mean_return: rs.iter().map(|r| r.episode_return).sum::<f64>() / n,
                goal_rate: rs.iter().filter(|r| r.goal_reached).count() as f64 / n,
            }
        })
        .collect();
    EvalReport { classes }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>, p: usize| v.map_or("–".to_string(), |x| format!("{x:.p$}"));
        writeln!(
            f,
            "{:<20} {:>8} {:>8} {:>10} {:>8} {:>10}",
            "class", "episodes", "laps", "lap time", "crash", "return"
        )?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<20} {:>8} {:>8} {:>10} {:>8.3} {:>10.3}",
                c.class,
                c.episodes,
                opt(c.mean_laps, 2),
                opt(c.avg_lap_time, 2),
                c.crash_rate,
                c.mean_return
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOutput {
    pub report: EvalReport,
    /// Ordered by class, then episode.
    pub logs: Vec<RolloutLog>,
}

impl EvalOutput {
    pub fn records(&self) -> Vec<EpisodeRecord> {
        self.logs.iter().filter_map(|l| l.record.clone()).collect()
    }
}

/// Evaluate `episodes` episodes per class, fanned out over `threads` workers.
/// The result does not depend on the thread count.
pub fn run_eval<F: Real>(
    ctrl: Controller<'_, F>,
    env_spec: &EnvSpec,
    classes: &[EvalClass],
    episodes: usize,
    seed: u64,
    threads: usize,
    opts: RolloutOptions,
) -> Result<EvalOutput> {
    if episodes == 0 {
        return Err(Error::InvalidEpisodeCount);
    }
    if classes.is_empty() {
        return Err(Error::EmptySurfaceSet);
    }
    let jobs: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|c| (0..episodes).map(move |e| (c, e)))
        .collect();
    let workers = threads.clamp(1, jobs.len());
    let per = jobs.len().div_ceil(workers);
    let chunks: Vec<Result<Vec<RolloutLog>>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .chunks(per)
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|&(c, e)| rollout(ctrl, env_spec, &classes[c], e, seed, opts))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut logs = Vec::with_capacity(jobs.len());
    for c in chunks {
        logs.extend(c?);
    }
    let records: Vec<EpisodeRecord> = logs.iter().filter_map(|l| l.record.clone()).collect();
    Ok(EvalOutput {
        report: aggregate(&records),
        logs,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for it in items {
        writeln!(w, "{}", serde_json::to_string(&it)?)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    class: &'a str,
    episode: usize,
    #[serde(flatten)]
    record: &'a TrajectoryRecord,
}

/// Write `report.json`, `episodes.jsonl`, and the optional trajectory and
/// activation streams into `dir`.
pub fn write_eval(dir: &Path, out: &EvalOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)?)?;
    write_jsonl(&dir.join("episodes.jsonl"), out.records())?;
    if out.logs.iter().any(|l| !l.trajectory.is_empty()) {
        let lines = out.logs.iter().flat_map(|l| {
            let r = l.record.as_ref();
            l.trajectory.iter().map(move |t| TrajectoryLine {
                class: r.map_or("", |r| r.class.as_str()),
                episode: r.map_or(0, |r| r.episode),
                record: t,
            })
        });
        write_jsonl(&dir.join("trajectories.jsonl"), lines)?;
    }
    if out.logs.iter().any(|l| !l.activations.is_empty()) {
        write_jsonl(&dir.join("activations.jsonl"), out.logs.iter().flat_map(|l| l.activations.iter()))?;
    }
    Ok(())
}

pub fn read_episode_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::contexts::{goal_single, racing_train};
    use crate::hybrid::{GoalEnvConfig, RacingEnvConfig, TrackId};
    use crate::moe::MoeConfig;
    use crate::sac::{ActorKind, SacConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(class: &str, ret: f64, laps: usize, times: Vec<f64>, crashed: bool) -> EpisodeRecord {
        EpisodeRecord {
            class: class.into(),
            episode: 0,
            context_id: 0,
            episode_return: ret,
            length: 10,
            laps,
            lap_times: times,
            crashed,
            goal_reached: false,
        }
    }

    #[test]
    fn all_crash_class_has_no_lap_figures() {
        let rs = vec![record("low", -10.0, 0, vec![], true), record("low", -8.0, 0, vec![], true)];
        let rep = aggregate(&rs);
        let c = rep.class("low").unwrap();
        assert_eq!(c.mean_laps, None);
        assert_eq!(c.avg_lap_time, None);
        assert_eq!(c.crash_rate, 1.0);
        assert_eq!(c.mean_return, -9.0);
        assert!(rep.to_string().contains('–'));
    }

    #[test]
    fn lap_time_pools_completed_laps() {
        let rs = vec![
            record("a", 1.0, 2, vec![20.0, 22.0], false),
            record("a", 1.0, 1, vec![30.0], true),
            record("b", 2.0, 0, vec![], false),
        ];
        let rep = aggregate(&rs);
        let a = rep.class("a").unwrap();
        assert_eq!(a.mean_laps, Some(1.5));
        assert_eq!(a.avg_lap_time, Some(24.0));
        assert_eq!(a.crash_rate, 0.5);
        assert_eq!(rep.classes.len(), 2);
        assert_eq!(rep.class("b").unwrap().crash_rate, 0.0);
    }

    #[test]
    fn zero_episodes_rejected() {
        let classes = vec![EvalClass::set(goal_single(0.0))];
        let r = run_eval::<f32>(
            Controller::Random,
            &EnvSpec::Goal(GoalEnvConfig::default()),
            &classes,
            0,
            0,
            1,
            RolloutOptions::default(),
        );
        assert!(matches!(r, Err(Error::InvalidEpisodeCount)));
    }

    #[test]
    fn class_names_parse() {
        let c = parse_eval_classes("high, low+medium").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(
            c[1].source,
            ContextSource::Surfaces(vec![SurfaceClass::Low, SurfaceClass::Medium])
        );
        assert!(matches!(parse_eval_classes("icy"), Err(Error::UnknownSurfaceClass(_))));
        assert!(matches!(parse_eval_classes(""), Err(Error::EmptySurfaceSet)));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sac = SacConfig {
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            ..Default::default()
        };
        let moe = MoeConfig {
            tokens: 2,
            token_dim: 4,
            encoder_hidden: vec![8],
            ..Default::default()
        };
        let spec = EnvSpec::Racing(RacingEnvConfig {
            track: TrackId::Track1,
            max_steps: Some(40),
            ..Default::default()
        });
        let agent = Agent::<f32>::new(ActorKind::SacMoe, spec.build().obs_dim(), 2, sac, moe, &mut rng).unwrap();
        let classes = vec![
            EvalClass::set(racing_train(TrackId::Track1)),
            parse_eval_classes("low+high").unwrap().remove(0),
        ];
        let opts = RolloutOptions {
            deterministic: false,
            trajectory: true,
            activations: true,
        };
        let one = run_eval(Controller::Agent(&agent), &spec, &classes, 5, 3, 1, opts).unwrap();
        let four = run_eval(Controller::Agent(&agent), &spec, &classes, 5, 3, 4, opts).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.report.total_episodes(), 10);
        assert!(!one.logs[0].activations.is_empty());
        let dir = tempfile::tempdir().unwrap();
        write_eval(dir.path(), &one).unwrap();
        assert_eq!(read_episode_records(&dir.path().join("episodes.jsonl")).unwrap(), one.records());
    }
}
