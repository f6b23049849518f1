use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Episode, TrainError};

/// One row of the metrics CSV. Training columns are empty when no update
/// happened since the previous row; `eval_return` is empty on rows written
/// between evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub td_loss: Option<f64>,
    pub vib_loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub eval_return: Option<f64>,
    pub epsilon: f64,
}

pub const METRICS_HEADER: &str = "step,episode,td_loss,vib_loss,grad_norm,eval_return,epsilon";

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), TrainError> {
    let io = |e: csv::Error| TrainError::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER.split(',')).map_err(io)?;
    }
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| TrainError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, TrainError> {
    let io = |e: csv::Error| TrainError::io(path, std::io::Error::other(e));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().map(|row| row.map_err(io)).collect()
}

/// One transition of the episode log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub episode: u64,
    pub t: usize,
    pub obs: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub last_actions: Vec<Option<usize>>,
    pub actions: Vec<usize>,
    pub avail: Vec<Vec<bool>>,
    pub reward: f64,
    pub done: bool,
    pub terminal: bool,
}

pub fn transitions(index: u64, ep: &Episode) -> Vec<TransitionRecord> {
    let n = ep.actions.first().map_or(0, Vec::len);
    (0..ep.len())
        .map(|t| TransitionRecord {
            episode: index,
            t,
            obs: ep.obs[t].clone(),
            state: ep.states[t].clone(),
            last_actions: (0..n).map(|i| ep.last_action(t, i)).collect(),
            actions: ep.actions[t].clone(),
            avail: ep.avail[t].clone(),
            reward: ep.rewards[t],
            done: t + 1 == ep.len(),
            terminal: ep.terminated && t + 1 == ep.len(),
        })
        .collect()
}

/// Writes episodes as JSON lines, one transition per line.
pub fn write_episode_log(path: &Path, episodes: &[Episode]) -> Result<(), TrainError> {
    let file = File::create(path).map_err(|e| TrainError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (k, ep) in episodes.iter().enumerate() {
        for rec in transitions(k as u64, ep) {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| TrainError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| TrainError::io(path, e))
}

pub fn read_episode_log(path: &Path) -> Result<Vec<TransitionRecord>, TrainError> {
    let file = File::open(path).map_err(|e| TrainError::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TrainError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            TrainError::Format(format!("{}: line {}: {e}", path.display(), k + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
