//! Polynomial read-out of a frozen mixer, coalition ranking and agent
//! Q-value similarity.
//!
//! With the assistive vector and state held fixed the credits are constants,
//! so `Q_tot` is a function of the utilities alone. [`expand`] fits a
//! total-degree polynomial to it by least squares on a tensor grid and
//! reports the fit residual alongside the coefficients.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trainer::{Learner, TrainError, TransitionRecord};

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("rank-deficient fit ({rank} of {terms} terms); widen the domain or add grid points")]
    RankDeficient { rank: usize, terms: usize },
    #[error("bad domain [{lo}, {hi}]")]
    Domain { lo: f64, hi: f64 },
    #[error("{points} grid points per axis cannot determine degree {degree}")]
    TooFewPoints { points: usize, degree: usize },
    #[error("need at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("no transition {index} in the episode log ({len} records)")]
    NoTransition { index: usize, len: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> InterpretError {
    InterpretError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Sampling box `[lo, hi]^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Domain { lo: 0.5, hi: 1.5 }
    }
}

/// All multi-degrees of `n` variables with total degree at most `d`,
/// ordered by total degree, then lexicographically descending.
pub fn multi_degrees(n: usize, d: usize) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for p in (0..=left).rev() {
            cur.push(p);
            rec(n, left - p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, d as u32, &mut Vec::with_capacity(n), &mut out);
    out.sort_by(|a, b| {
        let (sa, sb) = (a.iter().sum::<u32>(), b.iter().sum::<u32>());
        sa.cmp(&sb).then_with(|| b.cmp(a))
    });
    out
}

fn monomial(q: &[f64], p: &[u32]) -> f64 {
    q.iter().zip(p).map(|(x, &k)| x.powi(k as i32)).product()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub degrees: Vec<u32>,
    pub coefficient: f64,
}

impl Term {
    pub fn total_degree(&self) -> u32 {
        self.degrees.iter().sum()
    }

    /// Agents with a nonzero exponent.
    pub fn support(&self) -> Vec<usize> {
        self.degrees
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialExpansion {
    pub n_agents: usize,
    pub degree: usize,
    pub terms: Vec<Term>,
    /// Largest absolute fit error over the grid.
    pub residual: f64,
    pub domain: Domain,
    pub points_per_axis: usize,
}

impl PolynomialExpansion {
    pub fn eval(&self, q: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.coefficient * monomial(q, &t.degrees)).sum()
    }

    pub fn coefficient(&self, degrees: &[u32]) -> f64 {
        self.terms
            .iter()
            .find(|t| t.degrees == degrees)
            .map_or(0.0, |t| t.coefficient)
    }

    /// Largest absolute coefficient among terms touching two or more agents.
    pub fn max_cross_term(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.support().len() > 1)
            .fold(0.0, |m, t| m.max(t.coefficient.abs()))
    }
}

/// Default grid density for degree `d`: two points beyond the minimum.
pub fn default_points(d: usize) -> usize {
    d + 4
}

/// Least-squares fit of a total-degree-`d` polynomial to `f` on a uniform
/// tensor grid with `points` nodes per axis.
pub fn expand(
    f: impl Fn(&[f64]) -> f64,
    n: usize,
    d: usize,
    domain: Domain,
    points: usize,
) -> Result<PolynomialExpansion, InterpretError> {
    if !(domain.lo.is_finite() && domain.hi.is_finite() && domain.lo < domain.hi) {
        return Err(InterpretError::Domain {
            lo: domain.lo,
            hi: domain.hi,
        });
    }
    if points < d + 2 {
        return Err(InterpretError::TooFewPoints { points, degree: d });
    }
    let degrees = multi_degrees(n, d);
    let axis: Vec<f64> = (0..points)
        .map(|k| domain.lo + (domain.hi - domain.lo) * k as f64 / (points - 1) as f64)
        .collect();
    let n_points = points.pow(n as u32);
    let mut grid = Vec::with_capacity(n_points);
    for idx in 0..n_points {
        let mut rest = idx;
        let q: Vec<f64> = (0..n)
            .map(|_| {
                let v = axis[rest % points];
                rest /= points;
                v
            })
            .collect();
        grid.push(q);
    }
    let design = DMatrix::from_fn(n_points, degrees.len(), |r, c| monomial(&grid[r], &degrees[c]));
    let target = DVector::from_iterator(n_points, grid.iter().map(|q| f(q)));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * n_points as f64;
    let rank = svd.rank(tol);
    if rank < degrees.len() {
        return Err(InterpretError::RankDeficient {
            rank,
            terms: degrees.len(),
        });
    }
    let coeffs = svd.solve(&target, tol).expect("svd has both factors");
    let residual = (&design * &coeffs - &target).amax();
    Ok(PolynomialExpansion {
        n_agents: n,
        degree: d,
        terms: degrees
            .into_iter()
            .zip(coeffs.iter())
            .map(|(degrees, &coefficient)| Term {
                degrees,
                coefficient,
            })
            .collect(),
        residual,
        domain,
        points_per_axis: points,
    })
}

/// Joint value with the assistive vector and state frozen.
pub struct FrozenMixer<'a> {
    pub learner: &'a Learner,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    credits: Vec<f64>,
}

impl<'a> FrozenMixer<'a> {
    pub fn new(learner: &'a Learner, m: Vec<f64>, s: Vec<f64>) -> Result<Self, InterpretError> {
        let credits = learner
            .mixer
            .credits(&learner.store, &m, &s)
            .map_err(TrainError::from)?;
        Ok(FrozenMixer {
            learner,
            m,
            s,
            credits,
        })
    }

    pub fn q_tot(&self, q: &[f64]) -> f64 {
        self.learner
            .mixer
            .q_tot_with_credits(&self.learner.store, q, &self.credits)
            .expect("widths fixed at construction")
    }

    pub fn credits(&self) -> &[f64] {
        &self.credits
    }
}

/// Assistive vector and state at log record `index`, replaying the agent
/// recurrence from the start of its episode.
pub fn context_at(
    learner: &Learner,
    log: &[TransitionRecord],
    index: usize,
) -> Result<(Vec<f64>, Vec<f64>), InterpretError> {
    let rec = log.get(index).ok_or(InterpretError::NoTransition {
        index,
        len: log.len(),
    })?;
    let start = index - rec.t;
    let n = rec.obs.len();
    let mut hidden = vec![vec![0.0; learner.hidden_width()]; n];
    for r in &log[start..=index] {
        learner.agent_values(&learner.store, &r.obs, &r.last_actions, &mut hidden)?;
    }
    let m = learner.pooled_mean(&learner.store, &hidden)?;
    Ok((m, rec.state.clone()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coalition {
    pub agents: Vec<usize>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionReport {
    pub ranked: Vec<Coalition>,
}

/// Sums `|c′|` per exact support set and ranks by descending weight; ties
/// break by smaller, then lexicographically earlier, sets.
pub fn coalition_report(exp: &PolynomialExpansion, top_k: usize) -> CoalitionReport {
    let mut agg: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for t in &exp.terms {
        let s = t.support();
        if !s.is_empty() {
            *agg.entry(s).or_default() += t.coefficient.abs();
        }
    }
    let mut ranked: Vec<Coalition> = agg
        .into_iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(agents, weight)| Coalition { agents, weight })
        .collect();
    ranked.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.agents.len().cmp(&b.agents.len()))
            .then_with(|| a.agents.cmp(&b.agents))
    });
    ranked.truncate(top_k);
    CoalitionReport { ranked }
}

pub const DEFAULT_TOP_K: usize = 5;

/// Mean pairwise cosine similarity of agent Q-value vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub n_agents: usize,
    /// Row-major `n × n`.
    pub mean: Vec<f64>,
    /// Pair-timesteps skipped because a vector had zero norm.
    pub skipped: usize,
}

impl Similarity {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mean[i * self.n_agents + j]
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Averages cosine similarities over per-timestep Q-value vectors
/// `vectors[t][agent]`.
pub fn similarity_of(vectors: &[Vec<Vec<f64>>], n: usize) -> Similarity {
    let mut sum = vec![0.0; n * n];
    let mut count = vec![0usize; n * n];
    let mut skipped = 0;
    for qs in vectors {
        for i in 0..n {
            for j in i..n {
                match cosine(&qs[i], &qs[j]) {
                    Some(c) => {
                        sum[i * n + j] += c;
                        count[i * n + j] += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
    }
    let mut mean = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = i * n + j;
            let v = if count[k] > 0 {
                sum[k] / count[k] as f64
            } else if i == j {
                1.0
            } else {
                0.0
            };
            mean[k] = v;
            mean[j * n + i] = v;
        }
        mean[i * n + i] = 1.0;
    }
    Similarity {
        n_agents: n,
        mean,
        skipped,
    }
}

/// Feeds every agent the observations and last actions of agent
/// `reference` along each logged episode, running each agent's own
/// recurrence, and compares the resulting Q-value vectors.
pub fn q_similarity(
    learner: &Learner,
    log: &[TransitionRecord],
    reference: usize,
) -> Result<Similarity, InterpretError> {
    let n = learner.dims.n_agents;
    if n < 2 {
        return Err(InterpretError::TooFewAgents(n));
    }
    let mut vectors = Vec::with_capacity(log.len());
    let mut hidden = vec![vec![0.0; learner.hidden_width()]; n];
    for rec in log {
        if rec.t == 0 {
            hidden.iter_mut().for_each(|h| h.iter_mut().for_each(|v| *v = 0.0));
        }
        let obs = vec![rec.obs[reference].clone(); n];
        let last = vec![rec.last_actions[reference]; n];
        vectors.push(learner.agent_values(&learner.store, &obs, &last, &mut hidden)?);
    }
    Ok(similarity_of(&vectors, n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub degrees: String,
    pub total_degree: u32,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionRow {
    pub rank: usize,
    pub coalition: String,
    pub size: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub agent_i: usize,
    pub agent_j: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n_agents: usize,
    pub degree: usize,
    pub residual: f64,
    pub domain: Domain,
    pub points_per_axis: usize,
    pub credits: Vec<f64>,
    pub top_coalitions: Vec<Coalition>,
    pub similarity_skipped: usize,
}

fn join(v: impl IntoIterator<Item = impl ToString>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn write_rows<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<(), InterpretError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| io_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, InterpretError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| io_err(path, e)))
        .collect()
}

pub const EXPANSION_FILE: &str = "expansion.csv";
pub const COALITION_FILE: &str = "coalitions.csv";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const SUMMARY_FILE: &str = "report.json";

/// Writes the three long-format CSV tables and a JSON summary into `dir`,
/// creating it if needed.
pub fn export_report(
    dir: &Path,
    exp: &PolynomialExpansion,
    report: &CoalitionReport,
    similarity: Option<&Similarity>,
    credits: &[f64],
) -> Result<(), InterpretError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let rows: Vec<ExpansionRow> = exp
        .terms
        .iter()
        .map(|t| ExpansionRow {
            degrees: join(&t.degrees),
            total_degree: t.total_degree(),
            coefficient: t.coefficient,
        })
        .collect();
    write_rows(&dir.join(EXPANSION_FILE), &["degrees", "total_degree", "coefficient"], &rows)?;
    let rows: Vec<CoalitionRow> = report
        .ranked
        .iter()
        .enumerate()
        .map(|(k, c)| CoalitionRow {
            rank: k + 1,
            coalition: join(&c.agents),
            size: c.agents.len(),
            weight: c.weight,
        })
        .collect();
    write_rows(&dir.join(COALITION_FILE), &["rank", "coalition", "size", "weight"], &rows)?;
    let rows: Vec<SimilarityRow> = similarity.map_or_else(Vec::new, |s| {
        (0..s.n_agents)
            .flat_map(|i| (0..s.n_agents).map(move |j| (i, j)))
            .map(|(i, j)| SimilarityRow {
                agent_i: i,
                agent_j: j,
                similarity: s.get(i, j),
            })
            .collect()
    });
    write_rows(&dir.join(SIMILARITY_FILE), &["agent_i", "agent_j", "similarity"], &rows)?;
    let summary = ReportSummary {
        n_agents: exp.n_agents,
        degree: exp.degree,
        residual: exp.residual,
        domain: exp.domain,
        points_per_axis: exp.points_per_axis,
        credits: credits.to_vec(),
        top_coalitions: report.ranked.clone(),
        similarity_skipped: similarity.map_or(0, |s| s.skipped),
    };
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))
}
