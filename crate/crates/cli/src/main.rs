use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use suggestbias::corpus::{self, Engine, EngineEndpoints, LoadMode};
use suggestbias::metrics::{MetricsTable, PercentageMode};
use suggestbias::pipeline::{
    self, AnalysisConfig, ArtifactWriter, ErrorKind, OutputLock, PipelineConfig, PipelineError,
};
use suggestbias::synth::{generate_synthetic, SynthError, SynthSpec};
use suggestbias::{cluster, report, Real};

/// Topical bias analysis of person-related query suggestions.
#[derive(Parser)]
#[command(name = "suggestbias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch one suggestion list per subject and engine and append them to a snapshot file.
    Crawl(CrawlArgs),
    /// Clean, lemmatize and condense snapshots into single-token suggestions.
    Preprocess(PreprocessArgs),
    /// Embed tokens and cluster them into topics.
    Cluster(ClusterArgs),
    /// Score every (term, cluster) pair with DCG, nDCG and total share.
    Metrics(MetricsArgs),
    /// Regress the metrics on subject attributes.
    Regress(RegressArgs),
    /// Render regression tables, group summaries and plot data.
    Report(ReportArgs),
    /// Run every stage from snapshots to report.
    Run(RunArgs),
    /// Write a synthetic corpus with known injected biases.
    Synth(SynthArgs),
}

/// Overrides for analysis parameters; unset flags keep the configured value.
#[derive(Args, Default)]
struct AnalysisFlags {
    /// Fixed number of clusters (otherwise selected over --k-min..=--k-max).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Distinct clustered tokens a term needs to be analysed.
    #[arg(long)]
    min_cluster_words: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    base_party: Option<String>,
    #[arg(long)]
    base_state: Option<String>,
    /// within_rank or across_ranks.
    #[arg(long)]
    percentage_mode: Option<PercentageMode>,
    #[arg(long)]
    age_bin_width: Option<u32>,
    /// Age threshold of the two-group age summary.
    #[arg(long)]
    age_split: Option<i32>,
    /// Year ages are computed in (default: year of the latest snapshot).
    #[arg(long)]
    reference_year: Option<i32>,
    /// Only use snapshots from this engine.
    #[arg(long)]
    engine: Option<Engine>,
}

impl AnalysisFlags {
    fn apply(&self, cfg: &mut AnalysisConfig) -> Result<(), PipelineError> {
        if self.k.is_some() {
            cfg.k = self.k;
        }
        if let Some(lo) = self.k_min {
            cfg.k_range.0 = lo;
        }
        if let Some(hi) = self.k_max {
            cfg.k_range.1 = hi;
        }
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.restarts, self.restarts);
        set(&mut cfg.min_cluster_words, self.min_cluster_words);
        set(&mut cfg.alpha, self.alpha);
        set(&mut cfg.base_categories.party, self.base_party.clone());
        set(&mut cfg.base_categories.state, self.base_state.clone());
        set(&mut cfg.percentage_mode, self.percentage_mode);
        set(&mut cfg.age_bin_width, self.age_bin_width);
        set(&mut cfg.age_split, self.age_split);
        if self.reference_year.is_some() {
            cfg.reference_year = self.reference_year;
        }
        if self.engine.is_some() {
            cfg.engine = self.engine;
        }
        cfg.validate()
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args)]
struct CrawlArgs {
    #[arg(long)]
    registry: PathBuf,
    /// JSON object mapping engine names to endpoint configurations
    /// (built-in public endpoints otherwise).
    #[arg(long)]
    endpoints: Option<PathBuf>,
    /// Engines to query (repeatable).
    #[arg(long = "engine", default_value = "google")]
    engines: Vec<Engine>,
    #[arg(long, default_value = "de-DE")]
    language: String,
    /// Snapshot file to append to.
    #[arg(long)]
    out: PathBuf,
    /// Seeds the delay jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LexiconPaths {
    #[arg(long)]
    lemmas: Option<PathBuf>,
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    snapshots: PathBuf,
    #[arg(long)]
    registry: PathBuf,
    #[command(flatten)]
    lexicons: LexiconPaths,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
}

#[derive(Args)]
struct ClusterArgs {
    /// tokens.jsonl from `preprocess`.
    #[arg(long)]
    tokens: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    tokens: PathBuf,
    /// clusters.csv from `cluster`.
    #[arg(long)]
    clusters: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
}

#[derive(Args)]
struct RegressArgs {
    /// metrics.csv from `metrics`.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    registry: PathBuf,
    /// Snapshot file used to default the reference year.
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// regression.csv from `regress`.
    #[arg(long)]
    regression: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    /// `cluster_index,label` CSV naming the clusters.
    #[arg(long)]
    cluster_labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    analysis: AnalysisFlags,
}

#[derive(Args)]
struct RunArgs {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[command(flatten)]
    lexicons: LexiconPaths,
    #[arg(long)]
    cluster_labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    analysis: AnalysisFlags,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON synthetic-corpus specification (defaults otherwise).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Inject the female/politics bias.
    #[arg(long)]
    bias: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn config_error(stage: &'static str, msg: impl Into<String>) -> PipelineError {
    PipelineError::new(stage, ErrorKind::Config, msg)
}

fn read_text(stage: &'static str, path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(stage, path, e))?;
    String::from_utf8(bytes)
        .map_err(|_| PipelineError::new(stage, ErrorKind::Data, format!("{}: not UTF-8", path.display())))
}

fn print_artifacts(dir: &Path, writer: &ArtifactWriter) {
    for a in writer.records() {
        println!("{}  {}", a.sha256, dir.join(&a.name).display());
    }
}

fn reference_year(cfg: &AnalysisConfig, snapshots: Option<&Path>) -> Result<i32, PipelineError> {
    if let Some(y) = cfg.reference_year {
        return Ok(y);
    }
    let Some(path) = snapshots else {
        return Err(config_error("config", "--reference-year or --snapshots is required to compute ages"));
    };
    let load = corpus::load_snapshots(path, &cfg.snapshot_filter(), LoadMode::Strict)
        .map_err(|e| PipelineError::corpus("load", e))?;
    pipeline::latest_year(&load.snapshots)
}

fn crawl(args: CrawlArgs) -> Result<(), PipelineError> {
    let registry = pipeline::load_registry(&args.registry)?;
    let endpoints = match &args.endpoints {
        Some(path) => {
            EngineEndpoints::from_json(&std::fs::read(path).map_err(|e| PipelineError::io("crawl", path, e))?)
                .map_err(|e| PipelineError::corpus("crawl", e))?
        }
        None => EngineEndpoints::default(),
    };
    for &e in &args.engines {
        endpoints.get(e).map_err(|err| PipelineError::corpus("crawl", err))?;
    }
    let mut crawler = corpus::Crawler::new(endpoints, args.seed);
    let (mut ok, mut failed) = (0usize, 0usize);
    let mut last_error = None;
    for subject in registry.subjects() {
        for &engine in &args.engines {
            match crawler.fetch(engine, subject, &args.language) {
                Ok(snapshot) => {
                    corpus::append_snapshots(&args.out, &[snapshot]).map_err(|e| PipelineError::corpus("crawl", e))?;
                    ok += 1;
                }
                Err(e) => {
                    eprintln!("warning: {} via {engine}: {e}", subject.term_id);
                    failed += 1;
                    last_error = Some(e);
                }
            }
        }
    }
    println!("{ok} snapshots appended to {}, {failed} requests failed", args.out.display());
    match last_error {
        Some(e) if ok == 0 => Err(PipelineError::corpus("crawl", e)),
        _ => Ok(()),
    }
}

fn preprocess(args: PreprocessArgs) -> Result<(), PipelineError> {
    let mut cfg = AnalysisConfig::default();
    args.analysis.apply(&mut cfg)?;
    let snapshots = corpus::load_snapshots(&args.snapshots, &cfg.snapshot_filter(), LoadMode::Strict)
        .map_err(|e| PipelineError::corpus("load", e))?
        .snapshots;
    let registry = pipeline::load_registry(&args.registry)?;
    let lemmas = pipeline::load_lemmas(args.lexicons.lemmas.as_deref())?;
    let gazetteer = pipeline::load_gazetteer(args.lexicons.gazetteer.as_deref())?;
    let stopwords = pipeline::load_stopwords(args.lexicons.stopwords.as_deref())?;
    let _lock = OutputLock::acquire(&args.out)?;
    let (tokens, stats) = pipeline::preprocess_stage(&snapshots, &registry, &lemmas, &gazetteer, &stopwords)?;
    let mut w = ArtifactWriter::new(&args.out);
    w.write("preprocess", "tokens.jsonl", pipeline::tokens_jsonl(&tokens).as_bytes())?;
    w.write("preprocess", "preprocess_report.json", &json(&stats))?;
    print_artifacts(&args.out, &w);
    Ok(())
}

fn cluster_cmd(args: ClusterArgs) -> Result<(), PipelineError> {
    let mut cfg = AnalysisConfig::default();
    args.analysis.apply(&mut cfg)?;
    let tokens = pipeline::parse_tokens_jsonl(&read_text("load", &args.tokens)?)?;
    let store = pipeline::load_embeddings::<Real>(&args.embeddings)?;
    let _lock = OutputLock::acquire(&args.out)?;
    let (vectors, coverage) = pipeline::embed_stage(&tokens, &store, cfg.normalize)?;
    let mut w = ArtifactWriter::new(&args.out);
    w.write("embed", "coverage.json", &json(&coverage))?;
    let clusters = pipeline::cluster_stage(&vectors, &cfg)?;
    let labels = pipeline::resolve_labels(&clusters.model, &vectors, &BTreeMap::new(), cfg.label_top_tokens);
    w.write("cluster", "clusters.csv", clusters.model.assignment_csv(&vectors).as_bytes())?;
    w.write("cluster", "cluster_model.json", &json(&clusters))?;
    let mut label_csv = String::from("cluster_index,label\n");
    for (c, l) in &labels {
        label_csv.push_str(&format!("{c},{l}\n"));
    }
    w.write("cluster", "cluster_labels.csv", label_csv.as_bytes())?;
    print_artifacts(&args.out, &w);
    Ok(())
}

fn metrics_cmd(args: MetricsArgs) -> Result<(), PipelineError> {
    let mut cfg = AnalysisConfig::default();
    args.analysis.apply(&mut cfg)?;
    let tokens = pipeline::parse_tokens_jsonl(&read_text("load", &args.tokens)?)?;
    let assignment =
        cluster::parse_assignment_csv(&read_text("load", &args.clusters)?).map_err(PipelineError::cluster)?;
    let k = cfg.k.unwrap_or_else(|| assignment.values().max().map_or(0, |m| m + 1));
    let _lock = OutputLock::acquire(&args.out)?;
    let metrics = pipeline::metrics_stage::<Real>(&tokens, &assignment, k, &cfg)?;
    let mut w = ArtifactWriter::new(&args.out);
    w.write("metrics", "metrics.csv", metrics.to_csv().as_bytes())?;
    w.write("metrics", "exclusions.csv", metrics.exclusions_csv().as_bytes())?;
    print_artifacts(&args.out, &w);
    Ok(())
}

fn load_metrics(path: &Path) -> Result<MetricsTable<Real>, PipelineError> {
    MetricsTable::from_csv(&read_text("load", path)?).map_err(PipelineError::metrics)
}

fn regress(args: RegressArgs) -> Result<(), PipelineError> {
    let mut cfg = AnalysisConfig::default();
    args.analysis.apply(&mut cfg)?;
    let year = reference_year(&cfg, args.snapshots.as_deref())?;
    let metrics = load_metrics(&args.metrics)?;
    let registry = pipeline::load_registry(&args.registry)?;
    let _lock = OutputLock::acquire(&args.out)?;
    let (_, regressions) = pipeline::stats_stage(&metrics, &registry, year, &cfg)?;
    let models = report::model_reports(&regressions);
    let mut w = ArtifactWriter::new(&args.out);
    w.write("stats", "regression.csv", report::regression_csv(&models, cfg.alpha).as_bytes())?;
    print_artifacts(&args.out, &w);
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<(), PipelineError> {
    let mut cfg = AnalysisConfig::default();
    args.analysis.apply(&mut cfg)?;
    let year = reference_year(&cfg, args.snapshots.as_deref())?;
    let models = report::parse_regression_csv(&read_text("load", &args.regression)?).map_err(PipelineError::report)?;
    let metrics = load_metrics(&args.metrics)?;
    let registry = pipeline::load_registry(&args.registry)?;
    let labels = pipeline::load_cluster_labels(args.cluster_labels.as_deref())?;
    let summaries = pipeline::summary_stage(&metrics, &registry, year, &cfg)?;
    let _lock = OutputLock::acquire(&args.out)?;
    let files =
        report::emit_report(&models, &summaries, cfg.alpha, &labels, &args.out).map_err(PipelineError::report)?;
    for path in files.all() {
        println!("{}", path.display());
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<(), PipelineError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = read_text("config", path)?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| config_error("config", format!("{}: {e}", path.display())))?;
            // Paths given on the command line may be absent from the file.
            if let Some(obj) = value.as_object_mut() {
                for (key, flag) in [
                    ("snapshots", &args.snapshots),
                    ("registry", &args.registry),
                    ("embeddings", &args.embeddings),
                    ("output_dir", &args.out),
                ] {
                    if let Some(p) = flag {
                        obj.insert(key.into(), serde_json::Value::String(p.display().to_string()));
                    }
                }
            }
            serde_json::from_value::<PipelineConfig>(value)
                .map_err(|e| config_error("config", format!("{}: {e}", path.display())))?
        }
        None => {
            let missing = |name: &str| config_error("config", format!("--{name} is required without --config"));
            PipelineConfig::new(
                args.snapshots.as_deref().ok_or_else(|| missing("snapshots"))?,
                args.registry.as_deref().ok_or_else(|| missing("registry"))?,
                args.embeddings.as_deref().ok_or_else(|| missing("embeddings"))?,
                args.out.as_deref().ok_or_else(|| missing("out"))?,
            )
        }
    };
    set(&mut config.lemmas, args.lexicons.lemmas.map(Some));
    set(&mut config.gazetteer, args.lexicons.gazetteer.map(Some));
    set(&mut config.stopwords, args.lexicons.stopwords.map(Some));
    set(&mut config.cluster_labels, args.cluster_labels.map(Some));
    args.analysis.apply(&mut config.analysis)?;

    let manifest = pipeline::run_pipeline(&config)?;
    for a in &manifest.artifacts {
        println!("{}  {}", a.sha256, config.output_dir.join(&a.name).display());
    }
    println!("manifest: {}", config.output_dir.join(pipeline::MANIFEST_FILE).display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), PipelineError> {
    let to_pipeline = |e: SynthError| match e {
        SynthError::Spec(m) => config_error("synth", m),
        SynthError::Io(e) => PipelineError::io("synth", &args.out, e),
    };
    let mut spec = match &args.spec {
        Some(path) => serde_json::from_str::<SynthSpec>(&read_text("synth", path)?)
            .map_err(|e| config_error("synth", format!("{}: {e}", path.display())))?,
        None => SynthSpec::default(),
    };
    if args.bias {
        spec = spec.with_female_politics_bias();
    }
    set(&mut spec.seed, args.seed);
    set(&mut spec.n_subjects, args.subjects);
    let corpus = generate_synthetic(&spec).map_err(to_pipeline)?;
    let paths = corpus.write_to(&args.out).map_err(to_pipeline)?;
    for p in
        [&paths.registry, &paths.snapshots, &paths.lemmas, &paths.gazetteer, &paths.embeddings, &paths.ground_truth]
    {
        println!("{}", p.display());
    }
    Ok(())
}

fn json<S: serde::Serialize>(v: &S) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Crawl(a) => crawl(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Cluster(a) => cluster_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Regress(a) => regress(a),
        Command::Report(a) => report_cmd(a),
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
