//! k-means topic clustering of embedded tokens, k selection and labeling support.

use crate::embed::TokenVectors;
use crate::rng::{derive_seed, substream};
use crate::scalar::{sq_dist, Scalar};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use thiserror::Error;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<T> {
    pub k: usize,
    pub centroids: Vec<Vec<T>>,
    pub tokens: Vec<String>,
    /// Cluster index per token, aligned with `tokens`.
    pub labels: Vec<usize>,
    pub inertia: T,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after each Lloyd update.
    pub inertia_history: Vec<T>,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn assignment(&self) -> BTreeMap<String, usize> {
        self.tokens.iter().cloned().zip(self.labels.iter().copied()).collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// CSV `token,cluster_index,distance_to_centroid`, in token order.
    pub fn assignment_csv(&self, vectors: &TokenVectors<T>) -> String {
        let mut out = String::from("token,cluster_index,distance_to_centroid\n");
        for (i, (tok, &l)) in self.tokens.iter().zip(&self.labels).enumerate() {
            let d = sq_dist(vectors.row(i), &self.centroids[l]).sqrt();
            let _ = writeln!(out, "{tok},{l},{}", d.to_f64_lossy());
        }
        out
    }
}

/// Reads the `token,cluster_index,...` assignment export back into a mapping.
pub fn parse_assignment_csv(text: &str) -> Result<BTreeMap<String, usize>, ClusterError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| ClusterError::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let idx = rec
            .get(1)
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| ClusterError::Parse { line, msg: "bad cluster_index".into() })?;
        out.insert(rec[0].to_string(), idx);
    }
    Ok(out)
}

/// Reads a human-authored `cluster_index,label` file.
pub fn parse_label_csv(text: &str) -> Result<BTreeMap<usize, String>, ClusterError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| ClusterError::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let idx = rec[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| ClusterError::Parse { line, msg: "bad cluster_index".into() })?;
        out.insert(idx, rec.get(1).unwrap_or("").trim().to_string());
    }
    Ok(out)
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

pub fn distinct_points<T: Scalar>(vectors: &TokenVectors<T>) -> usize {
    let mut rows: Vec<&[T]> = vectors.rows().take(vectors.len()).collect();
    rows.sort_by(|a, b| lex_cmp(a, b));
    rows.dedup_by(|a, b| lex_cmp(a, b) == Ordering::Equal);
    rows.len()
}

fn check_input<T: Scalar>(vectors: &TokenVectors<T>, k: usize) -> Result<(), ClusterError> {
    if k < 2 {
        return Err(ClusterError::Infeasible(format!("k must be at least 2, got {k}")));
    }
    if vectors.dimension == 0 {
        return Err(ClusterError::Validation("zero-dimensional vectors".into()));
    }
    if vectors.data.iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::Validation("non-finite vector component".into()));
    }
    let distinct = distinct_points(vectors);
    if distinct < k {
        return Err(ClusterError::Infeasible(format!("{distinct} distinct points cannot form {k} clusters")));
    }
    Ok(())
}

fn nearest<T: Scalar>(p: &[T], centers: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(p, &centers[0]));
    for (j, c) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init<T: Scalar>(vectors: &TokenVectors<T>, k: usize, rng: &mut impl Rng) -> Vec<Vec<T>> {
    let n = vectors.len();
    let mut centers = vec![vectors.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(vectors.row(i), &centers[0]).to_f64_lossy()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > r {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive mass"))
        } else {
            unreachable!("distinct point count checked before seeding")
        };
        let c = vectors.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(vectors.row(i), &c).to_f64_lossy());
        }
        centers.push(c);
    }
    centers
}

fn assign<T: Scalar>(vectors: &TokenVectors<T>, centers: &[Vec<T>], labels: &mut [usize]) {
    for (i, l) in labels.iter_mut().enumerate() {
        *l = nearest(vectors.row(i), centers).0;
    }
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Returns whether anything changed.
fn repair_empty<T: Scalar>(vectors: &TokenVectors<T>, centers: &mut [Vec<T>], labels: &mut [usize]) -> bool {
    let k = centers.len();
    let mut repaired = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return repaired };
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .map(|i| (i, sq_dist(vectors.row(i), &centers[labels[i]])))
            .fold(None::<(usize, T)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
            .expect("n >= k guarantees a cluster with two members");
        labels[far] = empty;
        centers[empty] = vectors.row(far).to_vec();
        repaired = true;
    }
}

fn means<T: Scalar>(vectors: &TokenVectors<T>, labels: &[usize], k: usize) -> Vec<Vec<T>> {
    let d = vectors.dimension;
    let mut sums = vec![vec![T::zero(); d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(vectors.row(i)) {
            *s = *s + v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let c = T::from_usize_lossy(c.max(1));
        for v in s.iter_mut() {
            *v = *v / c;
        }
    }
    sums
}

fn inertia_of<T: Scalar>(vectors: &TokenVectors<T>, centers: &[Vec<T>], labels: &[usize]) -> T {
    labels.iter().enumerate().map(|(i, &l)| sq_dist(vectors.row(i), &centers[l])).sum()
}

/// Single k-means run: k-means++ seeding, then Lloyd iterations until the
/// largest centroid shift is at most `tol` or `max_iter` updates have run.
pub fn kmeans<T: Scalar>(
    vectors: &TokenVectors<T>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: T,
) -> Result<ClusterModel<T>, ClusterError> {
    check_input(vectors, k)?;
    if max_iter == 0 {
        return Err(ClusterError::Validation("max_iter must be at least 1".into()));
    }
    if tol.is_nan() || tol < T::zero() {
        return Err(ClusterError::Validation("tol must be nonnegative".into()));
    }
    let n = vectors.len();
    let mut rng = substream(seed, "kmeans++");
    let mut centers = plus_plus_init(vectors, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        assign(vectors, &centers, &mut labels);
        repair_empty(vectors, &mut centers, &mut labels);
        let updated = means(vectors, &labels, k);
        let shift = centers.iter().zip(&updated).map(|(a, b)| sq_dist(a, b).sqrt()).fold(T::zero(), T::max);
        centers = updated;
        history.push(inertia_of(vectors, &centers, &labels));
        if shift <= tol {
            break;
        }
    }
    assign(vectors, &centers, &mut labels);
    while repair_empty(vectors, &mut centers, &mut labels) {
        centers = means(vectors, &labels, k);
        assign(vectors, &centers, &mut labels);
    }
    let inertia = inertia_of(vectors, &centers, &labels);
    Ok(ClusterModel {
        k,
        centroids: centers,
        tokens: vectors.tokens.clone(),
        labels,
        inertia,
        seed,
        iterations_run: iterations,
        inertia_history: history,
    })
}

/// Best-of-`restarts` k-means (lowest inertia, earliest restart on ties).
/// Restart `r` runs with a seed derived from `(seed, r)`.
pub fn kmeans_best<T: Scalar>(
    vectors: &TokenVectors<T>,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: T,
) -> Result<ClusterModel<T>, ClusterError> {
    check_input(vectors, k)?;
    let runs: Vec<ClusterModel<T>> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| kmeans(vectors, k, derive_seed(seed, &format!("restart-{r}")), max_iter, tol))
        .collect::<Result<_, _>>()?;
    Ok(runs
        .into_iter()
        .reduce(|best, m| if m.inertia < best.inertia { m } else { best })
        .expect("at least one restart"))
}

/// Mean silhouette with Euclidean distance. Points in singleton clusters
/// score 0, and 0/0 is taken as 0.
pub fn silhouette<T: Scalar>(vectors: &TokenVectors<T>, labels: &[usize]) -> Result<T, ClusterError> {
    if labels.len() != vectors.len() {
        return Err(ClusterError::Contract("label count differs from point count".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::Contract("silhouette needs at least two nonempty clusters".into()));
    }
    let n = labels.len();
    let mut total = T::zero();
    let mut sums = vec![T::zero(); k];
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = T::zero());
        for j in 0..n {
            if j != i {
                sums[labels[j]] = sums[labels[j]] + sq_dist(vectors.row(i), vectors.row(j)).sqrt();
            }
        }
        let own = labels[i];
        let a = sums[own] / T::from_usize_lossy(sizes[own] - 1);
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / T::from_usize_lossy(sizes[c]))
            .fold(T::infinity(), T::min);
        let denom = a.max(b);
        if denom > T::zero() {
            total = total + (b - a) / denom;
        }
    }
    Ok(total / T::from_usize_lossy(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCandidate<T> {
    pub k: usize,
    pub inertia: T,
    pub silhouette: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport<T> {
    pub candidates: Vec<KCandidate<T>>,
    pub chosen_k: usize,
    /// One of `only candidate`, `silhouette`, `elbow`, `smaller k`.
    pub rule: String,
}

const TIE_EPS: f64 = 1e-12;

/// Scans `k_range`, choosing the highest mean silhouette; ties fall to the
/// largest second difference of inertia, then to the smaller k.
pub fn select_k<T: Scalar>(
    vectors: &TokenVectors<T>,
    k_range: RangeInclusive<usize>,
    seed: u64,
    restarts: usize,
) -> Result<KSelectionReport<T>, ClusterError> {
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi < lo {
        return Err(ClusterError::Infeasible(format!("k range [{lo}, {hi}] must lie within [2, n]")));
    }
    let mut candidates = Vec::new();
    for k in k_range {
        let model = kmeans_best(vectors, k, seed, restarts, DEFAULT_MAX_ITER, T::lit(DEFAULT_TOL))?;
        let s = silhouette(vectors, &model.labels)?;
        candidates.push(KCandidate { k, inertia: model.inertia, silhouette: s });
    }
    if candidates.len() == 1 {
        return Ok(KSelectionReport { chosen_k: lo, candidates, rule: "only candidate".into() });
    }
    let eps = T::lit(TIE_EPS);
    let best = candidates.iter().map(|c| c.silhouette).fold(T::neg_infinity(), T::max);
    let tied: Vec<usize> = (0..candidates.len()).filter(|&i| best - candidates[i].silhouette <= eps).collect();
    if tied.len() == 1 {
        return Ok(KSelectionReport { chosen_k: candidates[tied[0]].k, candidates, rule: "silhouette".into() });
    }
    let second_diff = |i: usize| -> Option<T> {
        (i > 0 && i + 1 < candidates.len())
            .then(|| candidates[i - 1].inertia - T::lit(2.0) * candidates[i].inertia + candidates[i + 1].inertia)
    };
    let elbows: Vec<(usize, T)> = tied.iter().filter_map(|&i| second_diff(i).map(|d| (i, d))).collect();
    if let Some(top) = elbows.iter().map(|e| e.1).reduce(T::max) {
        let winners: Vec<usize> = elbows.iter().filter(|e| top - e.1 <= eps).map(|e| e.0).collect();
        if winners.len() == 1 {
            return Ok(KSelectionReport { chosen_k: candidates[winners[0]].k, candidates, rule: "elbow".into() });
        }
    }
    Ok(KSelectionReport { chosen_k: candidates[tied[0]].k, candidates, rule: "smaller k".into() })
}

/// Per cluster, the `top_n` tokens nearest their centroid (ties by token).
pub fn label_clusters<T: Scalar>(
    model: &ClusterModel<T>,
    vectors: &TokenVectors<T>,
    top_n: usize,
) -> Vec<Vec<(String, T)>> {
    let mut per: Vec<Vec<(String, T)>> = vec![Vec::new(); model.k];
    for (i, &l) in model.labels.iter().enumerate() {
        let d = sq_dist(vectors.row(i), &model.centroids[l]).sqrt();
        per[l].push((model.tokens[i].clone(), d));
    }
    for list in &mut per {
        list.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        list.truncate(top_n.max(1));
    }
    per
}
