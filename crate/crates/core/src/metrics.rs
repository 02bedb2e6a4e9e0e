//! Rank-frequency matrix and the perception-aware topic metrics: DCG and
//! nDCG over per-rank topic shares, plus the rank-blind total share.

use crate::corpus::{Engine, MAX_RANK};
use crate::preprocess::TokenizedSuggestion;
use crate::scalar::Scalar;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

/// Number of rank positions every profile covers.
pub const RANKS: usize = MAX_RANK;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("domain error: P({rank}) = {value} outside [0, 1]")]
    Domain { rank: usize, value: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

/// Per term, per rank (index 0 = rank 1), token appearance counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankFrequencyMatrix {
    pub terms: BTreeMap<String, [BTreeMap<String, u64>; RANKS]>,
}

impl RankFrequencyMatrix {
    pub fn count(&self, term: &str, rank: usize, token: &str) -> u64 {
        self.terms
            .get(term)
            .and_then(|ranks| ranks.get(rank.wrapping_sub(1)))
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0)
    }

    /// Elementwise sum with another matrix.
    pub fn merge(&mut self, other: &RankFrequencyMatrix) {
        for (term, ranks) in &other.terms {
            let mine = self.terms.entry(term.clone()).or_default();
            for (m, o) in mine.iter_mut().zip(ranks) {
                for (tok, c) in o {
                    *m.entry(tok.clone()).or_default() += c;
                }
            }
        }
    }

    /// Distinct tokens observed for `term` across all ranks.
    pub fn distinct_tokens(&self, term: &str) -> usize {
        self.terms
            .get(term)
            .map(|ranks| ranks.iter().flat_map(|m| m.keys()).collect::<BTreeSet<_>>().len())
            .unwrap_or(0)
    }

    /// Per-rank counts of cluster appearances: `[rank][cluster]`.
    fn cluster_counts(&self, term: &str, k: usize, assignment: &BTreeMap<String, usize>) -> Vec<Vec<u64>> {
        let mut counts = vec![vec![0u64; k]; RANKS];
        if let Some(ranks) = self.terms.get(term) {
            for (r, m) in ranks.iter().enumerate() {
                for (tok, &c) in m {
                    if let Some(&x) = assignment.get(tok) {
                        if x < k {
                            counts[r][x] += c;
                        }
                    }
                }
            }
        }
        counts
    }
}

/// Restricts which tokenized suggestions enter the matrix.
#[derive(Debug, Clone, Default)]
pub struct MatrixFilter {
    pub engine: Option<Engine>,
    pub from: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

/// Pools all given suggestions into counts; tokens without a cluster are skipped.
pub fn build_rank_matrix(tokens: &[TokenizedSuggestion], assignment: &BTreeMap<String, usize>) -> RankFrequencyMatrix {
    build_rank_matrix_filtered(tokens, assignment, &MatrixFilter::default())
}

pub fn build_rank_matrix_filtered(
    tokens: &[TokenizedSuggestion],
    assignment: &BTreeMap<String, usize>,
    filter: &MatrixFilter,
) -> RankFrequencyMatrix {
    let mut matrix = RankFrequencyMatrix::default();
    for t in tokens {
        if filter.engine.is_some_and(|e| e != t.engine)
            || filter.from.is_some_and(|f| t.timestamp < f)
            || filter.until.is_some_and(|u| t.timestamp >= u)
        {
            continue;
        }
        let rank = t.rank as usize;
        if !(1..=RANKS).contains(&rank) || !assignment.contains_key(&t.token) {
            continue;
        }
        let ranks = matrix.terms.entry(t.term_id.clone()).or_default();
        *ranks[rank - 1].entry(t.token.clone()).or_default() += 1;
    }
    matrix
}

/// How P(i) is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentageMode {
    /// Share of the cluster among all clustered appearances at rank i.
    #[default]
    WithinRank,
    /// Share of the cluster's appearances that fall at rank i.
    AcrossRanks,
}

impl FromStr for PercentageMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "within_rank" | "within-rank" => Ok(Self::WithinRank),
            "across_ranks" | "across-ranks" => Ok(Self::AcrossRanks),
            other => Err(format!("unknown percentage mode {other:?}")),
        }
    }
}

fn ratio<T: Scalar>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::lit(num as f64) / T::lit(den as f64)
    }
}

fn percentages_from_counts<T: Scalar>(counts: &[Vec<u64>], cluster: usize, mode: PercentageMode) -> [T; RANKS] {
    let mut p = [T::zero(); RANKS];
    match mode {
        PercentageMode::WithinRank => {
            for (r, row) in counts.iter().enumerate() {
                p[r] = ratio(row.get(cluster).copied().unwrap_or(0), row.iter().sum());
            }
        }
        PercentageMode::AcrossRanks => {
            let total: u64 = counts.iter().map(|row| row.get(cluster).copied().unwrap_or(0)).sum();
            for (r, row) in counts.iter().enumerate() {
                p[r] = ratio(row.get(cluster).copied().unwrap_or(0), total);
            }
        }
    }
    p
}

fn k_of(assignment: &BTreeMap<String, usize>) -> usize {
    assignment.values().max().map_or(0, |m| m + 1)
}

/// P vector of `cluster` for `term` (zero vector for unknown terms).
pub fn rank_percentages<T: Scalar>(
    matrix: &RankFrequencyMatrix,
    term: &str,
    cluster: usize,
    assignment: &BTreeMap<String, usize>,
    mode: PercentageMode,
) -> [T; RANKS] {
    let k = k_of(assignment).max(cluster + 1);
    percentages_from_counts(&matrix.cluster_counts(term, k, assignment), cluster, mode)
}

/// Cluster appearances over all ranks divided by all clustered appearances.
pub fn total_percentage<T: Scalar>(
    matrix: &RankFrequencyMatrix,
    term: &str,
    cluster: usize,
    assignment: &BTreeMap<String, usize>,
) -> T {
    let k = k_of(assignment).max(cluster + 1);
    let counts = matrix.cluster_counts(term, k, assignment);
    let mine = counts.iter().map(|row| row[cluster]).sum();
    let all = counts.iter().flatten().sum();
    ratio(mine, all)
}

/// Position discounts 1/log2(i+1) for ranks 1..=10.
pub fn discounts<T: Scalar>() -> [T; RANKS] {
    let mut d = [T::zero(); RANKS];
    for (i, v) in d.iter_mut().enumerate() {
        *v = T::one() / T::from_usize_lossy(i + 2).log2();
    }
    d
}

fn check_domain<T: Scalar>(p: &[T; RANKS]) -> Result<(), MetricsError> {
    for (i, &v) in p.iter().enumerate() {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(MetricsError::Domain { rank: i + 1, value: v.to_f64_lossy() });
        }
    }
    Ok(())
}

fn dcg_unchecked<T: Scalar>(p: &[T; RANKS]) -> T {
    discounts::<T>().iter().zip(p).map(|(&d, &v)| (v.exp2() - T::one()) * d).sum()
}

/// Sum over ranks of (2^P(i) − 1) / log2(i + 1).
pub fn dcg<T: Scalar>(p: &[T; RANKS]) -> Result<T, MetricsError> {
    check_domain(p)?;
    Ok(dcg_unchecked(p))
}

/// DCG of P sorted in descending order.
pub fn idcg<T: Scalar>(p: &[T; RANKS]) -> Result<T, MetricsError> {
    check_domain(p)?;
    let mut sorted = *p;
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    Ok(dcg_unchecked(&sorted))
}

/// DCG / IDCG, with an all-zero profile scoring 0.
pub fn ndcg<T: Scalar>(p: &[T; RANKS]) -> Result<T, MetricsError> {
    let ideal = idcg(p)?;
    if ideal <= T::zero() {
        return Ok(T::zero());
    }
    Ok((dcg_unchecked(p) / ideal).min(T::one()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAffiliationProfile<T> {
    pub term_id: String,
    pub cluster_index: usize,
    pub rank_percentages: [T; RANKS],
    pub dcg: T,
    pub ndcg: T,
    pub idcg: T,
    pub total_percentage: T,
}

impl<T: Scalar> TopicAffiliationProfile<T> {
    pub fn from_percentages(
        term_id: &str,
        cluster_index: usize,
        p: [T; RANKS],
        total_percentage: T,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            term_id: term_id.to_string(),
            cluster_index,
            dcg: dcg(&p)?,
            ndcg: ndcg(&p)?,
            idcg: idcg(&p)?,
            rank_percentages: p,
            total_percentage,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ndcg,
    Dcg,
    TotalPercentage,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Ndcg => "ndcg",
            MetricKind::Dcg => "dcg",
            MetricKind::TotalPercentage => "total_percentage",
        }
    }

    /// Column heading used in the regression table, e.g. `nDCG_1`.
    pub fn display_name(self, cluster_index: usize) -> String {
        let base = match self {
            MetricKind::Ndcg => "nDCG",
            MetricKind::Dcg => "DCG",
            MetricKind::TotalPercentage => "TP",
        };
        format!("{base}_{}", cluster_index + 1)
    }

    pub fn value<T: Scalar>(self, p: &TopicAffiliationProfile<T>) -> T {
        match self {
            MetricKind::Ndcg => p.ndcg,
            MetricKind::Dcg => p.dcg,
            MetricKind::TotalPercentage => p.total_percentage,
        }
    }
}

impl FromStr for MetricKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ndcg" => Ok(Self::Ndcg),
            "dcg" => Ok(Self::Dcg),
            "total_percentage" => Ok(Self::TotalPercentage),
            other => Err(format!("unknown metric kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable<T> {
    pub k: usize,
    pub rows: BTreeMap<(String, usize), TopicAffiliationProfile<T>>,
    pub included_terms: Vec<String>,
    /// `(term_id, reason)`.
    pub excluded_terms: Vec<(String, String)>,
}

impl<T: Scalar> MetricsTable<T> {
    pub fn profile(&self, term: &str, cluster: usize) -> Option<&TopicAffiliationProfile<T>> {
        self.rows.get(&(term.to_string(), cluster))
    }

    /// CSV `term_id,cluster_index,dcg,ndcg,total_percentage,p1..p10`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("term_id,cluster_index,dcg,ndcg,total_percentage");
        for i in 1..=RANKS {
            let _ = write!(out, ",p{i}");
        }
        out.push('\n');
        for p in self.rows.values() {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                csv_field(&p.term_id),
                p.cluster_index,
                p.dcg.to_f64_lossy(),
                p.ndcg.to_f64_lossy(),
                p.total_percentage.to_f64_lossy()
            );
            for v in &p.rank_percentages {
                let _ = write!(out, ",{}", v.to_f64_lossy());
            }
            out.push('\n');
        }
        out
    }

    /// CSV `term_id,reason`.
    pub fn exclusions_csv(&self) -> String {
        let mut out = String::from("term_id,reason\n");
        for (t, r) in &self.excluded_terms {
            let _ = writeln!(out, "{},{}", csv_field(t), csv_field(r));
        }
        out
    }

    /// Rebuilds a table from the metrics CSV export. IDCG is recomputed from P.
    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut rows = BTreeMap::new();
        let mut terms = BTreeSet::new();
        let mut k = 0;
        for rec in rdr.records() {
            let rec = rec
                .map_err(|e| MetricsError::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != 5 + RANKS {
                return Err(MetricsError::Parse { line, msg: format!("expected {} columns", 5 + RANKS) });
            }
            let num = |i: usize| -> Result<f64, MetricsError> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| MetricsError::Parse { line, msg: format!("bad number {:?}", &rec[i]) })
            };
            let cluster = rec[1]
                .trim()
                .parse::<usize>()
                .map_err(|_| MetricsError::Parse { line, msg: "bad cluster_index".into() })?;
            let mut p = [T::zero(); RANKS];
            for (i, v) in p.iter_mut().enumerate() {
                *v = T::lit(num(5 + i)?);
            }
            let term = rec[0].to_string();
            let profile = TopicAffiliationProfile {
                term_id: term.clone(),
                cluster_index: cluster,
                rank_percentages: p,
                dcg: T::lit(num(2)?),
                ndcg: T::lit(num(3)?),
                idcg: idcg(&p)?,
                total_percentage: T::lit(num(4)?),
            };
            k = k.max(cluster + 1);
            terms.insert(term.clone());
            rows.insert((term, cluster), profile);
        }
        Ok(Self { k, rows, included_terms: terms.into_iter().collect(), excluded_terms: Vec::new() })
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Computes a profile for every (included term, cluster). A term is included
/// iff it has at least `min_cluster_words` distinct clustered tokens.
pub fn build_metrics_table<T: Scalar>(
    matrix: &RankFrequencyMatrix,
    assignment: &BTreeMap<String, usize>,
    k: usize,
    min_cluster_words: usize,
    mode: PercentageMode,
) -> Result<MetricsTable<T>, MetricsError> {
    let mut table = MetricsTable { k, rows: BTreeMap::new(), included_terms: Vec::new(), excluded_terms: Vec::new() };
    for term in matrix.terms.keys() {
        let distinct = matrix
            .terms
            .get(term)
            .map(|ranks| {
                ranks
                    .iter()
                    .flat_map(|m| m.keys())
                    .filter(|t| assignment.contains_key(*t))
                    .collect::<BTreeSet<_>>()
                    .len()
            })
            .unwrap_or(0);
        if distinct < min_cluster_words {
            table.excluded_terms.push((term.clone(), "min_cluster_words".into()));
            continue;
        }
        let counts = matrix.cluster_counts(term, k, assignment);
        let all: u64 = counts.iter().flatten().sum();
        for x in 0..k {
            let p = percentages_from_counts::<T>(&counts, x, mode);
            let mine: u64 = counts.iter().map(|row| row[x]).sum();
            let profile = TopicAffiliationProfile::from_percentages(term, x, p, ratio(mine, all))?;
            table.rows.insert((term.clone(), x), profile);
        }
        table.included_terms.push(term.clone());
    }
    Ok(table)
}
