//! End-to-end orchestration: in-memory stage functions, an `analyze` driver
//! over loaded inputs, and `run_pipeline`, which reads files, writes every
//! intermediate artifact and a digest manifest.

use crate::cluster::{self, ClusterError, ClusterModel, KSelectionReport};
use crate::corpus::{self, CorpusError, Engine, LoadMode, SnapshotFilter, SubjectRegistry, SuggestionSnapshot};
use crate::embed::{self, EmbedError, EmbeddingCoverage, EmbeddingStore, TokenVectors};
use crate::metrics::{self, MetricKind, MetricsError, MetricsTable, PercentageMode};
use crate::preprocess::{self, Gazetteer, LemmaTable, PreprocessError, PreprocessReport, TokenizedSuggestion};
use crate::report::{self, GroupSummary, Grouping, ModelReport, ReportError};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::stats::{self, BaseCategories, DesignMatrix, DesignOptions, ModelKey, RegressionResult, StatsError};
use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    InsufficientData,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::InsufficientData => 4,
            ErrorKind::Io => 5,
        }
    }
}

/// A stage failure: which stage, what class of failure, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

impl PipelineError {
    pub fn new(stage: &'static str, kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { stage, kind, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    pub fn io(stage: &'static str, path: &Path, e: impl fmt::Display) -> Self {
        Self::new(stage, ErrorKind::Io, format!("{}: {e}", path.display()))
    }

    pub fn corpus(stage: &'static str, e: CorpusError) -> Self {
        let kind = match e {
            CorpusError::Io(_) => ErrorKind::Io,
            CorpusError::Config(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        };
        Self::new(stage, kind, e.to_string())
    }

    pub fn preprocess(e: PreprocessError) -> Self {
        Self::new("preprocess", ErrorKind::Data, e.to_string())
    }

    pub fn embed(e: EmbedError) -> Self {
        Self::new("embed", ErrorKind::Data, e.to_string())
    }

    pub fn cluster(e: ClusterError) -> Self {
        let kind = match e {
            ClusterError::Infeasible(_) => ErrorKind::InsufficientData,
            _ => ErrorKind::Data,
        };
        Self::new("cluster", kind, e.to_string())
    }

    pub fn metrics(e: MetricsError) -> Self {
        Self::new("metrics", ErrorKind::Data, e.to_string())
    }

    pub fn stats(e: StatsError) -> Self {
        let kind = match e {
            StatsError::Config(_) => ErrorKind::Config,
            StatsError::EmptyDesign | StatsError::InsufficientData { .. } => ErrorKind::InsufficientData,
            StatsError::Collinear(_) | StatsError::Contract(_) => ErrorKind::Data,
        };
        Self::new("stats", kind, e.to_string())
    }

    pub fn report(e: ReportError) -> Self {
        let kind = match e {
            ReportError::Config(_) => ErrorKind::Config,
            ReportError::Parse { .. } => ErrorKind::Data,
            ReportError::Io(_) => ErrorKind::Io,
        };
        Self::new("report", kind, e.to_string())
    }
}

fn default_k_range() -> (usize, usize) {
    (2, 6)
}
fn default_restarts() -> usize {
    cluster::DEFAULT_RESTARTS
}
fn default_min_cluster_words() -> usize {
    10
}
fn default_alpha() -> f64 {
    0.05
}
fn default_age_bin_width() -> u32 {
    10
}
fn default_age_split() -> i32 {
    40
}
fn default_metric_kinds() -> Vec<MetricKind> {
    vec![MetricKind::Ndcg, MetricKind::Dcg]
}
fn default_group_by() -> Vec<String> {
    vec!["gender".into(), "age".into()]
}
fn default_true() -> bool {
    true
}
fn default_top_tokens() -> usize {
    3
}

/// Analysis parameters shared by every stage after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Fixed cluster count; `None` selects k over `k_range`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_k_range")]
    pub k_range: (usize, usize),
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_min_cluster_words")]
    pub min_cluster_words: usize,
    #[serde(default)]
    pub base_categories: BaseCategories,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_age_bin_width")]
    pub age_bin_width: u32,
    /// Age threshold for the two-group age summary.
    #[serde(default = "default_age_split")]
    pub age_split: i32,
    #[serde(default)]
    pub percentage_mode: PercentageMode,
    /// Year ages are computed in; defaults to the year of the latest snapshot.
    #[serde(default)]
    pub reference_year: Option<i32>,
    #[serde(default = "default_metric_kinds")]
    pub metric_kinds: Vec<MetricKind>,
    #[serde(default = "default_group_by")]
    pub group_by: Vec<String>,
    #[serde(default)]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub from: Option<DateTime<Utc>>,
    #[serde(default)]
    pub until: Option<DateTime<Utc>>,
    #[serde(default)]
    pub party_merge: BTreeMap<String, String>,
    /// L2-normalize vectors before clustering.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Tokens per cluster used as its automatic label.
    #[serde(default = "default_top_tokens")]
    pub label_top_tokens: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::new("config", ErrorKind::Config, m));
        if let Some(k) = self.k {
            if k < 1 {
                return bad("k must be at least 1".into());
            }
        } else if self.k_range.0 < 2 || self.k_range.1 < self.k_range.0 {
            return bad(format!("k range {:?} must satisfy 2 <= lo <= hi", self.k_range));
        }
        if self.restarts == 0 {
            return bad("restarts must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.age_bin_width == 0 {
            return bad("age_bin_width must be positive".into());
        }
        if self.metric_kinds.is_empty() {
            return bad("no metric kinds requested".into());
        }
        for g in &self.group_by {
            Grouping::parse(g, self.age_split, 0)
                .map_err(|e| PipelineError::new("config", ErrorKind::Config, e.to_string()))?;
        }
        Ok(())
    }

    pub fn snapshot_filter(&self) -> SnapshotFilter {
        SnapshotFilter { engine: self.engine, from: self.from, until: self.until, term_ids: None }
    }
}

/// Everything the analysis consumes, already parsed.
pub struct Inputs<T> {
    pub registry: SubjectRegistry,
    pub snapshots: Vec<SuggestionSnapshot>,
    pub lemmas: LemmaTable,
    pub gazetteer: Gazetteer,
    pub stopwords: BTreeSet<String>,
    pub embeddings: EmbeddingStore<T>,
    /// Manual cluster labels by index; automatic labels fill the rest.
    pub cluster_labels: BTreeMap<usize, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub snapshots: usize,
    /// Snapshots whose term is absent from the registry.
    pub unknown_term_snapshots: usize,
    pub report: PreprocessReport,
}

/// Cleans, lemmatizes and condenses every snapshot whose term is registered.
pub fn preprocess_stage(
    snapshots: &[SuggestionSnapshot],
    registry: &SubjectRegistry,
    lemmas: &LemmaTable,
    gazetteer: &Gazetteer,
    stopwords: &BTreeSet<String>,
) -> Result<(Vec<TokenizedSuggestion>, PreprocessStats), PipelineError> {
    let mut stats = PreprocessStats::default();
    let mut tokens = Vec::new();
    for s in snapshots {
        stats.snapshots += 1;
        let Some(subject) = registry.get(&s.term_id) else {
            stats.unknown_term_snapshots += 1;
            continue;
        };
        let (t, r) = preprocess::preprocess_snapshot(s, subject, lemmas, gazetteer, stopwords)
            .map_err(PipelineError::preprocess)?;
        tokens.extend(t);
        stats.report.merge(&r);
    }
    Ok((tokens, stats))
}

/// Looks up each distinct token (sorted) in the store.
pub fn embed_stage<T: Scalar>(
    tokens: &[TokenizedSuggestion],
    store: &EmbeddingStore<T>,
    normalize: bool,
) -> Result<(TokenVectors<T>, EmbeddingCoverage), PipelineError> {
    let unique: BTreeSet<&str> = tokens.iter().map(|t| t.token.as_str()).collect();
    let unique: Vec<&str> = unique.into_iter().collect();
    let (vectors, coverage) = embed::embed_tokens(&unique, store, normalize);
    if vectors.is_empty() {
        return Err(PipelineError::new(
            "embed",
            ErrorKind::Data,
            format!("embeddings cover none of the {} suggestion tokens", coverage.requested),
        ));
    }
    Ok((vectors, coverage))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput<T> {
    pub model: ClusterModel<T>,
    /// Present when k was selected rather than fixed.
    pub selection: Option<KSelectionReport<T>>,
}

/// Fits the final model, selecting k first when none is fixed. The scanned
/// range is capped at one less than the number of distinct points.
pub fn cluster_stage<T: Scalar>(
    vectors: &TokenVectors<T>,
    config: &AnalysisConfig,
) -> Result<ClusterOutput<T>, PipelineError> {
    let seed = derive_seed(config.seed, "cluster");
    let tol = T::lit(cluster::DEFAULT_TOL);
    let (k, selection) = match config.k {
        Some(k) => (k, None),
        None => {
            let distinct = cluster::distinct_points(vectors);
            let hi = config.k_range.1.min(distinct.saturating_sub(1));
            if hi < config.k_range.0 {
                return Err(PipelineError::cluster(ClusterError::Infeasible(format!(
                    "{distinct} distinct points cannot support k >= {}",
                    config.k_range.0
                ))));
            }
            let report = cluster::select_k(vectors, config.k_range.0..=hi, seed, config.restarts)
                .map_err(PipelineError::cluster)?;
            (report.chosen_k, Some(report))
        }
    };
    let model = cluster::kmeans_best(vectors, k, seed, config.restarts, cluster::DEFAULT_MAX_ITER, tol)
        .map_err(PipelineError::cluster)?;
    Ok(ClusterOutput { model, selection })
}

pub fn metrics_stage<T: Scalar>(
    tokens: &[TokenizedSuggestion],
    assignment: &BTreeMap<String, usize>,
    k: usize,
    config: &AnalysisConfig,
) -> Result<MetricsTable<T>, PipelineError> {
    let matrix = metrics::build_rank_matrix(tokens, assignment);
    metrics::build_metrics_table(&matrix, assignment, k, config.min_cluster_words, config.percentage_mode)
        .map_err(PipelineError::metrics)
}

pub type Regressions<T> = BTreeMap<ModelKey, Result<RegressionResult<T>, StatsError>>;

/// Encodes the design over included terms and fits every model. Fails when
/// no model could be fitted.
pub fn stats_stage<T: Scalar>(
    metrics: &MetricsTable<T>,
    registry: &SubjectRegistry,
    reference_year: i32,
    config: &AnalysisConfig,
) -> Result<(DesignMatrix<T>, Regressions<T>), PipelineError> {
    let options = DesignOptions {
        base: config.base_categories.clone(),
        age_bin_width: config.age_bin_width,
        reference_year,
        party_merge: config.party_merge.clone(),
    };
    let design = stats::encode_design(registry, &metrics.included_terms, &options).map_err(PipelineError::stats)?;
    let results = stats::regress_all(metrics, &design, &config.metric_kinds).map_err(PipelineError::stats)?;
    if let Some(Err(e)) = results.values().find(|r| r.is_err()).filter(|_| results.values().all(Result::is_err)) {
        return Err(PipelineError::stats(e.clone()));
    }
    Ok((design, results))
}

pub fn summary_stage<T: Scalar>(
    metrics: &MetricsTable<T>,
    registry: &SubjectRegistry,
    reference_year: i32,
    config: &AnalysisConfig,
) -> Result<Vec<GroupSummary>, PipelineError> {
    config
        .group_by
        .iter()
        .map(|g| {
            let grouping = Grouping::parse(g, config.age_split, reference_year).map_err(PipelineError::report)?;
            Ok(report::summarize_groups(metrics, registry, grouping))
        })
        .collect()
}

/// Latest snapshot year, or an insufficient-data error when there are none.
pub fn latest_year(snapshots: &[SuggestionSnapshot]) -> Result<i32, PipelineError> {
    snapshots
        .iter()
        .map(|s| s.timestamp.year())
        .max()
        .ok_or_else(|| PipelineError::new("preprocess", ErrorKind::InsufficientData, "no snapshots"))
}

/// Results of a complete in-memory analysis.
pub struct Analysis<T> {
    pub reference_year: i32,
    pub tokens: Vec<TokenizedSuggestion>,
    pub preprocess: PreprocessStats,
    pub vectors: TokenVectors<T>,
    pub coverage: EmbeddingCoverage,
    pub clusters: ClusterOutput<T>,
    pub cluster_labels: BTreeMap<usize, String>,
    pub metrics: MetricsTable<T>,
    pub design: DesignMatrix<T>,
    pub regressions: Regressions<T>,
    pub summaries: Vec<GroupSummary>,
}

impl<T: Scalar> Analysis<T> {
    pub fn model_reports(&self) -> Vec<ModelReport> {
        report::model_reports(&self.regressions)
    }

    pub fn assignment(&self) -> BTreeMap<String, usize> {
        self.clusters.model.assignment()
    }
}

/// Runs every stage after loading, in order, without touching the file system.
pub fn analyze<T: Scalar>(inputs: &Inputs<T>, config: &AnalysisConfig) -> Result<Analysis<T>, PipelineError> {
    config.validate()?;
    let filter = config.snapshot_filter();
    let snapshots: Vec<SuggestionSnapshot> = inputs.snapshots.iter().filter(|s| filter.matches(s)).cloned().collect();
    let reference_year = match config.reference_year {
        Some(y) => y,
        None => latest_year(&snapshots)?,
    };
    let (tokens, preprocess) =
        preprocess_stage(&snapshots, &inputs.registry, &inputs.lemmas, &inputs.gazetteer, &inputs.stopwords)?;
    let (vectors, coverage) = embed_stage(&tokens, &inputs.embeddings, config.normalize)?;
    let clusters = cluster_stage(&vectors, config)?;
    let assignment = clusters.model.assignment();
    let cluster_labels = resolve_labels(&clusters.model, &vectors, &inputs.cluster_labels, config.label_top_tokens);
    let metrics = metrics_stage(&tokens, &assignment, clusters.model.k, config)?;
    let (design, regressions) = stats_stage(&metrics, &inputs.registry, reference_year, config)?;
    let summaries = summary_stage(&metrics, &inputs.registry, reference_year, config)?;
    Ok(Analysis {
        reference_year,
        tokens,
        preprocess,
        vectors,
        coverage,
        clusters,
        cluster_labels,
        metrics,
        design,
        regressions,
        summaries,
    })
}

/// Manual labels where given, otherwise the tokens nearest each centroid.
pub fn resolve_labels<T: Scalar>(
    model: &ClusterModel<T>,
    vectors: &TokenVectors<T>,
    manual: &BTreeMap<usize, String>,
    top_n: usize,
) -> BTreeMap<usize, String> {
    cluster::label_clusters(model, vectors, top_n)
        .into_iter()
        .enumerate()
        .map(|(c, toks)| {
            let label =
                manual.get(&c).cloned().unwrap_or_else(|| toks.into_iter().map(|t| t.0).collect::<Vec<_>>().join("/"));
            (c, label)
        })
        .collect()
}

/// Input file locations plus analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub snapshots: PathBuf,
    pub registry: PathBuf,
    #[serde(default)]
    pub lemmas: Option<PathBuf>,
    #[serde(default)]
    pub gazetteer: Option<PathBuf>,
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    /// Text format, or the binary format when the extension is `.bin`.
    pub embeddings: PathBuf,
    /// Optional `cluster_index,label` CSV.
    #[serde(default)]
    pub cluster_labels: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl PipelineConfig {
    pub fn new(snapshots: &Path, registry: &Path, embeddings: &Path, output_dir: &Path) -> Self {
        Self {
            snapshots: snapshots.into(),
            registry: registry.into(),
            lemmas: None,
            gazetteer: None,
            stopwords: None,
            embeddings: embeddings.into(),
            cluster_labels: None,
            output_dir: output_dir.into(),
            analysis: AnalysisConfig::default(),
        }
    }

    fn input_paths(&self) -> BTreeMap<&'static str, &Path> {
        let mut m: BTreeMap<&'static str, &Path> = BTreeMap::new();
        m.insert("snapshots", &self.snapshots);
        m.insert("registry", &self.registry);
        m.insert("embeddings", &self.embeddings);
        for (name, p) in [
            ("lemmas", &self.lemmas),
            ("gazetteer", &self.gazetteer),
            ("stopwords", &self.stopwords),
            ("cluster_labels", &self.cluster_labels),
        ] {
            if let Some(p) = p {
                m.insert(name, p);
            }
        }
        m
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(stage: &'static str, path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::io(stage, path, e))
}

fn read_text(stage: &'static str, path: &Path) -> Result<String, PipelineError> {
    String::from_utf8(read(stage, path)?)
        .map_err(|_| PipelineError::new(stage, ErrorKind::Data, format!("{}: not UTF-8", path.display())))
}

pub fn load_registry(path: &Path) -> Result<SubjectRegistry, PipelineError> {
    corpus::parse_subject_registry(&read("load", path)?).map_err(|e| PipelineError::corpus("load", e))
}

pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<EmbeddingStore<T>, PipelineError> {
    let bytes = read("embed", path)?;
    if path.extension().is_some_and(|e| e == "bin") {
        embed::parse_embedding_binary(&bytes)
    } else {
        embed::parse_embedding_text(&bytes)
    }
    .map_err(PipelineError::embed)
}

pub fn load_lemmas(path: Option<&Path>) -> Result<LemmaTable, PipelineError> {
    match path {
        None => Ok(LemmaTable::default()),
        Some(p) => LemmaTable::from_tsv(&read_text("preprocess", p)?).map_err(PipelineError::preprocess),
    }
}

pub fn load_gazetteer(path: Option<&Path>) -> Result<Gazetteer, PipelineError> {
    match path {
        None => Ok(Gazetteer::default()),
        Some(p) => Gazetteer::from_tsv(&read_text("preprocess", p)?).map_err(PipelineError::preprocess),
    }
}

pub fn load_stopwords(path: Option<&Path>) -> Result<BTreeSet<String>, PipelineError> {
    Ok(match path {
        None => BTreeSet::new(),
        Some(p) => preprocess::parse_stopwords(&read_text("preprocess", p)?),
    })
}

pub fn load_cluster_labels(path: Option<&Path>) -> Result<BTreeMap<usize, String>, PipelineError> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => cluster::parse_label_csv(&read_text("cluster", p)?).map_err(PipelineError::cluster),
    }
}

/// Reads every input named by the config. Invalid snapshot lines are
/// rejected strictly.
pub fn load_inputs<T: Scalar>(config: &PipelineConfig) -> Result<Inputs<T>, PipelineError> {
    let filter = config.analysis.snapshot_filter();
    let snapshots = corpus::load_snapshots(&config.snapshots, &filter, LoadMode::Strict)
        .map_err(|e| PipelineError::corpus("load", e))?
        .snapshots;
    Ok(Inputs {
        registry: load_registry(&config.registry)?,
        snapshots,
        lemmas: load_lemmas(config.lemmas.as_deref())?,
        gazetteer: load_gazetteer(config.gazetteer.as_deref())?,
        stopwords: load_stopwords(config.stopwords.as_deref())?,
        embeddings: load_embeddings(&config.embeddings)?,
        cluster_labels: load_cluster_labels(config.cluster_labels.as_deref())?,
    })
}

/// One tokenized suggestion per line.
pub fn tokens_jsonl(tokens: &[TokenizedSuggestion]) -> String {
    let mut out = String::new();
    for t in tokens {
        out.push_str(&serde_json::to_string(t).expect("token serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_tokens_jsonl(text: &str) -> Result<Vec<TokenizedSuggestion>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::new("load", ErrorKind::Data, format!("tokens line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub stage: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Per-stage counters recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub preprocess: PreprocessStats,
    pub embed: EmbedCounts,
    pub cluster: ClusterCounts,
    pub metrics: MetricsCounts,
    pub stats: StatsCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedCounts {
    pub requested: usize,
    pub found: usize,
    pub missing: usize,
    pub zero_vectors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub k: usize,
    pub selection_rule: Option<String>,
    pub cluster_sizes: Vec<usize>,
    pub iterations_run: usize,
    pub labels: BTreeMap<usize, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsCounts {
    pub included_terms: usize,
    pub excluded_terms: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsCounts {
    pub design_rows: usize,
    pub design_columns: Vec<String>,
    pub dropped_terms: usize,
    pub models_fitted: usize,
    /// `(model, error)` for models that could not be fitted.
    pub models_failed: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub reference_year: i32,
    pub inputs: BTreeMap<String, InputRecord>,
    pub artifacts: Vec<ArtifactRecord>,
    pub stages: StageCounts,
}

impl Manifest {
    pub fn artifact(&self, name: &str) -> Option<&ArtifactRecord> {
        self.artifacts.iter().find(|a| a.name == name)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".suggestbias.lock";

/// Exclusive hold on an output directory; removed on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io("lock", dir, e))?;
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::new(
                "lock",
                ErrorKind::Io,
                format!("{} is locked by another run (remove {} if stale)", dir.display(), path.display()),
            )),
            Err(e) => Err(PipelineError::io("lock", &path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Writes artifacts into one directory, recording their digests.
pub struct ArtifactWriter {
    dir: PathBuf,
    records: Vec<ArtifactRecord>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.into(), records: Vec::new() }
    }

    /// Writes `name.partial`, then renames it into place.
    pub fn write(&mut self, stage: &'static str, name: &str, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
        let path = self.dir.join(name);
        report::write_atomic(&path, bytes).map_err(|e| PipelineError::io(stage, &path, e))?;
        self.records.push(ArtifactRecord {
            name: name.into(),
            stage: stage.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    pub fn records(&self) -> &[ArtifactRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ArtifactRecord> {
        self.records
    }
}

fn json_pretty<S: Serialize>(v: &S) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("artifact serializes");
    out.push(b'\n');
    out
}

/// Loads inputs, runs every stage and writes artifacts stage by stage, so a
/// failure leaves the completed stages' outputs behind. The manifest is
/// written last.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    config.analysis.validate()?;
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let mut inputs_digest = BTreeMap::new();
    for (name, path) in config.input_paths() {
        let bytes = read("load", path)?;
        inputs_digest
            .insert(name.to_string(), InputRecord { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
    }
    let inputs = load_inputs::<crate::Real>(config)?;
    let cfg = &config.analysis;
    let mut w = ArtifactWriter::new(&config.output_dir);

    let reference_year = match cfg.reference_year {
        Some(y) => y,
        None => latest_year(&inputs.snapshots)?,
    };
    let (tokens, pre) =
        preprocess_stage(&inputs.snapshots, &inputs.registry, &inputs.lemmas, &inputs.gazetteer, &inputs.stopwords)?;
    w.write("preprocess", "tokens.jsonl", tokens_jsonl(&tokens).as_bytes())?;

    let (vectors, coverage) = embed_stage(&tokens, &inputs.embeddings, cfg.normalize)?;
    w.write("embed", "coverage.json", &json_pretty(&coverage))?;

    let clusters = cluster_stage(&vectors, cfg)?;
    let assignment = clusters.model.assignment();
    let labels = resolve_labels(&clusters.model, &vectors, &inputs.cluster_labels, cfg.label_top_tokens);
    w.write("cluster", "clusters.csv", clusters.model.assignment_csv(&vectors).as_bytes())?;
    w.write("cluster", "cluster_model.json", &json_pretty(&clusters))?;

    let metrics = metrics_stage::<crate::Real>(&tokens, &assignment, clusters.model.k, cfg)?;
    w.write("metrics", "metrics.csv", metrics.to_csv().as_bytes())?;
    w.write("metrics", "exclusions.csv", metrics.exclusions_csv().as_bytes())?;

    let (design, regressions) = stats_stage(&metrics, &inputs.registry, reference_year, cfg)?;
    let summaries = summary_stage(&metrics, &inputs.registry, reference_year, cfg)?;
    let models = report::model_reports(&regressions);
    let files = report::ReportFiles::in_dir(&config.output_dir);
    let bodies = report::render_report(&models, &summaries, cfg.alpha, &labels);
    for (path, body) in files.all().into_iter().zip(bodies) {
        let name = path.file_name().expect("file name").to_string_lossy().into_owned();
        w.write("report", &name, body.as_bytes())?;
    }

    let stages = StageCounts {
        preprocess: pre,
        embed: EmbedCounts {
            requested: coverage.requested,
            found: coverage.found,
            missing: coverage.missing_tokens.len(),
            zero_vectors: coverage.zero_vectors.len(),
        },
        cluster: ClusterCounts {
            k: clusters.model.k,
            selection_rule: clusters.selection.as_ref().map(|s| s.rule.clone()),
            cluster_sizes: clusters.model.cluster_sizes(),
            iterations_run: clusters.model.iterations_run,
            labels,
        },
        metrics: MetricsCounts {
            included_terms: metrics.included_terms.len(),
            excluded_terms: metrics.excluded_terms.len(),
        },
        stats: StatsCounts {
            design_rows: design.rows(),
            design_columns: design.column_names.clone(),
            dropped_terms: design.dropped.len(),
            models_fitted: models.len(),
            models_failed: regressions
                .iter()
                .filter_map(|((kind, c), r)| r.as_ref().err().map(|e| (kind.display_name(*c), e.to_string())))
                .collect(),
        },
    };
    let manifest =
        Manifest { config: config.clone(), reference_year, inputs: inputs_digest, artifacts: w.into_records(), stages };
    let path = config.output_dir.join(MANIFEST_FILE);
    report::write_atomic(&path, &json_pretty(&manifest)).map_err(|e| PipelineError::io("manifest", &path, e))?;
    Ok(manifest)
}
