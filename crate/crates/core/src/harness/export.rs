use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::eval::ActivationRecord;
use crate::curriculum::TraceRecord;
use crate::error::{Error, Result};
use crate::sac::EpisodeMetrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportKind {
    Returns,
    Trajectories,
    Activations,
    Curriculum,
}

impl std::str::FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "returns" => Ok(ExportKind::Returns),
            "trajectories" => Ok(ExportKind::Trajectories),
            "activations" => Ok(ExportKind::Activations),
            "curriculum" => Ok(ExportKind::Curriculum),
            _ => Err(Error::Config(format!("unknown export kind `{s}`"))),
        }
    }
}

impl ExportKind {
    fn name(self) -> &'static str {
        match self {
            ExportKind::Returns => "returns",
            ExportKind::Trajectories => "trajectories",
            ExportKind::Activations => "activations",
            ExportKind::Curriculum => "curriculum",
        }
    }
}

/// Non-empty files called `name` in `dir` and up to two levels below,
/// sorted by path.
fn find_logs(dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    fn walk(d: &Path, name: &str, depth: usize, out: &mut Vec<PathBuf>) -> Result<()> {
        let p = d.join(name);
        if p.is_file() && std::fs::metadata(&p)?.len() > 0 {
            out.push(p);
        }
        if depth == 0 {
            return Ok(());
        }
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(d)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for s in subdirs {
            walk(&s, name, depth - 1, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    if dir.is_dir() {
        walk(dir, name, 2, &mut out)?;
    }
    Ok(out)
}

fn source_label(run_dir: &Path, file: &Path) -> String {
    let parent = file.parent().unwrap_or(run_dir);
    let rel = parent.strip_prefix(run_dir).unwrap_or(parent);
    let s = rel.to_string_lossy().replace('\\', "/");
    if s.is_empty() {
        ".".into()
    } else {
        s
    }
}

fn lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn missing(kind: ExportKind, dir: &Path) -> Error {
    Error::MissingLogs {
        kind: kind.name().into(),
        dir: dir.to_path_buf(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Convert the run's line-delimited logs of `kind` into CSV files under
/// `run_dir/plots`; returns the files written.
pub fn export_plot_data(run_dir: &Path, kind: ExportKind) -> Result<Vec<PathBuf>> {
    let plots = run_dir.join("plots");
    let mut written = Vec::new();
    match kind {
        ExportKind::Returns => {
            let train = find_logs(run_dir, "metrics.jsonl")?;
            let eval = find_logs(run_dir, "episodes.jsonl")?;
            if train.is_empty() && eval.is_empty() {
                return Err(missing(kind, run_dir));
            }
            std::fs::create_dir_all(&plots)?;
            if !train.is_empty() {
                let path = plots.join("train_returns.csv");
                let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
                w.write_record(["source", "episode", "step", "context_id", "return", "length"])
                    .map_err(csv_err)?;
                for f in &train {
                    let src = source_label(run_dir, f);
                    for m in lines::<EpisodeMetrics>(f)? {
                        w.write_record([
                            src.clone(),
                            m.episode.to_string(),
                            m.step.to_string(),
                            m.context_id.to_string(),
                            m.episode_return.to_string(),
                            m.length.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
                w.flush()?;
                written.push(path);
            }
            if !eval.is_empty() {
                let path = plots.join("eval_returns.csv");
                let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
                w.write_record(["source", "class", "episode", "return", "length", "laps", "crashed"])
                    .map_err(csv_err)?;
                for f in &eval {
                    let src = source_label(run_dir, f);
                    for r in super::eval::read_episode_records(f)? {
                        w.write_record([
                            src.clone(),
                            r.class,
                            r.episode.to_string(),
                            r.episode_return.to_string(),
                            r.length.to_string(),
                            r.laps.to_string(),
                            r.crashed.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
                w.flush()?;
                written.push(path);
            }
        }
        ExportKind::Trajectories => {
            let files = find_logs(run_dir, "trajectories.jsonl")?;
            if files.is_empty() {
                return Err(missing(kind, run_dir));
            }
            std::fs::create_dir_all(&plots)?;
            let path = plots.join("trajectories.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record([
                "source", "class", "episode", "t", "x", "y", "theta", "v", "steer", "accel", "reward", "mode",
            ])
            .map_err(csv_err)?;
            for f in &files {
                let src = source_label(run_dir, f);
                for v in lines::<Value>(f)? {
                    let num = |k: &str| v.get(k).map_or(String::new(), |x| x.to_string());
                    let state = v.get("state").and_then(Value::as_array).cloned().unwrap_or_default();
                    let action = v.get("action").and_then(Value::as_array).cloned().unwrap_or_default();
                    let at = |a: &[Value], i: usize| a.get(i).map_or(String::new(), |x| x.to_string());
                    w.write_record([
                        src.clone(),
                        v.get("class").and_then(Value::as_str).unwrap_or("").to_string(),
                        num("episode"),
                        num("t"),
                        at(&state, 0),
                        at(&state, 1),
                        at(&state, 2),
                        at(&state, 3),
                        at(&action, 1),
                        at(&action, 0),
                        num("reward"),
                        num("mode_index"),
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.flush()?;
            written.push(path);
        }
        ExportKind::Activations => {
            let files = find_logs(run_dir, "activations.jsonl")?;
            if files.is_empty() {
                return Err(missing(kind, run_dir));
            }
            // (source, active mu) -> per-expert selection counts.
            let mut counts: BTreeMap<(String, String), BTreeMap<usize, u64>> = BTreeMap::new();
            for f in &files {
                let src = source_label(run_dir, f);
                for a in lines::<ActivationRecord>(f)? {
                    let mu = a.active_mu.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";");
                    let slot = counts.entry((src.clone(), mu)).or_default();
                    for e in a.selected.iter().flatten() {
                        *slot.entry(*e).or_default() += 1;
                    }
                }
            }
            std::fs::create_dir_all(&plots)?;
            let path = plots.join("activations.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(["source", "active_mu", "expert", "count", "fraction"])
                .map_err(csv_err)?;
            for ((src, mu), per) in &counts {
                let total: u64 = per.values().sum();
                for (e, c) in per {
                    w.write_record([
                        src.clone(),
                        mu.clone(),
                        e.to_string(),
                        c.to_string(),
                        (*c as f64 / total as f64).to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
            w.flush()?;
            written.push(path);
        }
        ExportKind::Curriculum => {
            let files = find_logs(run_dir, "curriculum.jsonl")?;
            if files.is_empty() {
                return Err(missing(kind, run_dir));
            }
            std::fs::create_dir_all(&plots)?;
            let path = plots.join("curriculum.csv");
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(["source", "episode", "context_id", "outcome", "context", "g"])
                .map_err(csv_err)?;
            for f in &files {
                let src = source_label(run_dir, f);
                for t in lines::<TraceRecord>(f)? {
                    for (i, g) in t.g.iter().enumerate() {
                        w.write_record([
                            src.clone(),
                            t.episode.to_string(),
                            t.context_id.to_string(),
                            t.outcome.to_string(),
                            i.to_string(),
                            g.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}
