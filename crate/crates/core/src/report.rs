//! Group summaries and report rendering: regression CSV with significance
//! flags, a coefficient table laid out per model, plot-ready series and a
//! plain-text list of significant findings.

use crate::corpus::{Gender, SubjectRegistry};
use crate::metrics::{csv_field, MetricKind, MetricsTable};
use crate::scalar::Scalar;
use crate::stats::{ModelKey, RegressionResult, StatsError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Attribute used to split subjects into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Grouping {
    Gender,
    /// Two groups: age ≥ `threshold` and age < `threshold`.
    AgeSplit {
        threshold: i32,
        reference_year: i32,
    },
    Party,
    State,
}

impl Grouping {
    pub fn name(&self) -> &'static str {
        match self {
            Grouping::Gender => "gender",
            Grouping::AgeSplit { .. } => "age",
            Grouping::Party => "party",
            Grouping::State => "state",
        }
    }

    /// Parses `gender`, `age`, `party` or `state`.
    pub fn parse(name: &str, age_threshold: i32, reference_year: i32) -> Result<Self, ReportError> {
        match name {
            "gender" => Ok(Grouping::Gender),
            "age" => Ok(Grouping::AgeSplit { threshold: age_threshold, reference_year }),
            "party" => Ok(Grouping::Party),
            "state" => Ok(Grouping::State),
            other => Err(ReportError::Config(format!("unknown grouping attribute {other:?}"))),
        }
    }

    fn group_of(&self, registry: &SubjectRegistry, term: &str) -> Option<String> {
        let s = registry.get(term)?;
        match self {
            Grouping::Gender => (s.gender != Gender::Unknown).then(|| s.gender.as_str().to_string()),
            Grouping::AgeSplit { threshold, reference_year } => s.age_in(*reference_year).map(|age| {
                if age >= *threshold {
                    format!(">={threshold}")
                } else {
                    format!("<{threshold}")
                }
            }),
            Grouping::Party => s.party.clone(),
            Grouping::State => s.federated_state.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCell {
    pub group: String,
    pub cluster_index: usize,
    pub n: usize,
    pub mean_dcg: f64,
    pub mean_ndcg: f64,
    pub mean_total_percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub attribute: String,
    /// Sorted by group, then cluster.
    pub cells: Vec<GroupCell>,
}

impl GroupSummary {
    pub fn group_sizes(&self) -> BTreeMap<String, usize> {
        self.cells.iter().map(|c| (c.group.clone(), c.n)).collect()
    }
}

/// Per-group means of DCG, nDCG and total share over included terms that
/// carry the attribute.
pub fn summarize_groups<T: Scalar>(
    metrics: &MetricsTable<T>,
    registry: &SubjectRegistry,
    grouping: Grouping,
) -> GroupSummary {
    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for term in &metrics.included_terms {
        if let Some(g) = grouping.group_of(registry, term) {
            groups.entry(g).or_default().push(term);
        }
    }
    let mut cells = Vec::new();
    for (group, terms) in groups {
        for c in 0..metrics.k {
            let profiles: Vec<_> = terms.iter().filter_map(|t| metrics.profile(t, c)).collect();
            let n = profiles.len();
            let mean = |f: &dyn Fn(&crate::metrics::TopicAffiliationProfile<T>) -> T| -> f64 {
                if n == 0 {
                    0.0
                } else {
                    profiles.iter().map(|p| f(p).to_f64_lossy()).sum::<f64>() / n as f64
                }
            };
            cells.push(GroupCell {
                group: group.clone(),
                cluster_index: c,
                n,
                mean_dcg: mean(&|p| p.dcg),
                mean_ndcg: mean(&|p| p.ndcg),
                mean_total_percentage: mean(&|p| p.total_percentage),
            });
        }
    }
    GroupSummary { attribute: grouping.name().to_string(), cells }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub column_name: String,
    pub b: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

/// Flattened, precision-fixed view of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub metric_kind: MetricKind,
    pub cluster_index: usize,
    pub coefficients: Vec<CoefficientRow>,
    pub adjusted_r2: f64,
    pub f_statistic: f64,
    pub f_p: f64,
}

impl ModelReport {
    pub fn from_result<T: Scalar>(key: ModelKey, r: &RegressionResult<T>) -> Self {
        Self {
            metric_kind: key.0,
            cluster_index: key.1,
            coefficients: r
                .coefficients
                .iter()
                .map(|c| CoefficientRow {
                    column_name: c.name.clone(),
                    b: c.b.to_f64_lossy(),
                    se: c.se.to_f64_lossy(),
                    t: c.t.to_f64_lossy(),
                    p: c.p.to_f64_lossy(),
                })
                .collect(),
            adjusted_r2: r.adjusted_r2.to_f64_lossy(),
            f_statistic: r.f_statistic.to_f64_lossy(),
            f_p: r.f_p.to_f64_lossy(),
        }
    }

    pub fn title(&self) -> String {
        self.metric_kind.display_name(self.cluster_index)
    }
}

/// Successful fits in model order (nDCG before DCG, clusters ascending).
pub fn model_reports<T: Scalar>(
    results: &BTreeMap<ModelKey, Result<RegressionResult<T>, StatsError>>,
) -> Vec<ModelReport> {
    results.iter().filter_map(|(k, r)| r.as_ref().ok().map(|r| ModelReport::from_result(*k, r))).collect()
}

/// Strict `P < alpha`.
pub fn is_significant(p: f64, alpha: f64) -> bool {
    p < alpha
}

pub const REGRESSION_HEADER: &str = "metric_kind,cluster_index,column_name,B,SE,t,P,significant,adjusted_r2,F,F_p";

/// One row per (model, column) plus one `Model` row per model carrying
/// adjusted R², F and its p-value.
pub fn regression_csv(models: &[ModelReport], alpha: f64) -> String {
    let mut out = format!("{REGRESSION_HEADER}\n");
    for m in models {
        let kind = m.metric_kind.as_str();
        for c in &m.coefficients {
            let _ = writeln!(
                out,
                "{kind},{},{},{},{},{},{},{},,,",
                m.cluster_index,
                csv_field(&c.column_name),
                c.b,
                c.se,
                c.t,
                c.p,
                is_significant(c.p, alpha)
            );
        }
        let _ = writeln!(out, "{kind},{},Model,,,,,,{},{},{}", m.cluster_index, m.adjusted_r2, m.f_statistic, m.f_p);
    }
    out
}

/// Reads [`regression_csv`] output back.
pub fn parse_regression_csv(text: &str) -> Result<Vec<ModelReport>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut models: Vec<ModelReport> = Vec::new();
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| ReportError::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |msg: String| ReportError::Parse { line, msg };
        if rec.len() != 11 {
            return Err(perr("expected 11 columns".into()));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| perr(format!("bad number {:?}", &rec[i])));
        let kind = MetricKind::from_str(&rec[0]).map_err(perr)?;
        let cluster = rec[1].parse::<usize>().map_err(|_| perr("bad cluster_index".into()))?;
        let is_new = models.last().is_none_or(|m| (m.metric_kind, m.cluster_index) != (kind, cluster));
        if is_new {
            models.push(ModelReport {
                metric_kind: kind,
                cluster_index: cluster,
                coefficients: Vec::new(),
                adjusted_r2: f64::NAN,
                f_statistic: f64::NAN,
                f_p: f64::NAN,
            });
        }
        let m = models.last_mut().expect("pushed");
        if &rec[2] == "Model" {
            m.adjusted_r2 = num(8)?;
            m.f_statistic = num(9)?;
            m.f_p = num(10)?;
        } else {
            m.coefficients.push(CoefficientRow {
                column_name: rec[2].to_string(),
                b: num(3)?,
                se: num(4)?,
                t: num(5)?,
                p: num(6)?,
            });
        }
    }
    Ok(models)
}

/// Wide table: one row per design column, a `B`/`P` column pair per model,
/// values rounded to two decimals and significant P values marked `*`.
pub fn coefficient_table(models: &[ModelReport], alpha: f64) -> String {
    let mut columns: Vec<String> = Vec::new();
    for m in models {
        for c in &m.coefficients {
            if !columns.contains(&c.column_name) {
                columns.push(c.column_name.clone());
            }
        }
    }
    let mut out = String::from("variable");
    for m in models {
        let t = m.title();
        let _ = write!(out, ",{t} B,{t} P");
    }
    out.push('\n');
    let round = |v: f64| {
        let s = format!("{v:.2}");
        if s == "-0.00" {
            "0.00".to_string()
        } else {
            s
        }
    };
    for col in &columns {
        let label = if col == "intercept" { "(constant)" } else { col.as_str() };
        out.push_str(&csv_field(label));
        for m in models {
            match m.coefficients.iter().find(|c| &c.column_name == col) {
                Some(c) => {
                    let mark = if is_significant(c.p, alpha) { "*" } else { "" };
                    let _ = write!(out, ",{},{}{mark}", round(c.b), round(c.p));
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out.push_str("Model F");
    for m in models {
        let mark = if is_significant(m.f_p, alpha) { "*" } else { "" };
        let _ = write!(out, ",{},{}{mark}", round(m.f_statistic), round(m.f_p));
    }
    out.push('\n');
    out.push_str("Model adjusted R2");
    for m in models {
        let _ = write!(out, ",{},", round(m.adjusted_r2));
    }
    out.push('\n');
    out
}

pub fn group_summary_csv(summaries: &[GroupSummary]) -> String {
    let mut out = String::from("attribute,group,cluster_index,n,mean_dcg,mean_ndcg,mean_total_percentage\n");
    for s in summaries {
        for c in &s.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.attribute,
                csv_field(&c.group),
                c.cluster_index,
                c.n,
                c.mean_dcg,
                c.mean_ndcg,
                c.mean_total_percentage
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub metric: String,
    pub cluster_index: usize,
    /// One value per entry of the chart's `groups`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarChart {
    pub attribute: String,
    pub groups: Vec<String>,
    pub group_sizes: Vec<usize>,
    pub series: Vec<PlotSeries>,
}

/// Grouped bar-chart data: per attribute, one series per (metric, cluster).
pub fn plot_data(summaries: &[GroupSummary]) -> Vec<BarChart> {
    summaries
        .iter()
        .map(|s| {
            let sizes = s.group_sizes();
            let groups: Vec<String> = sizes.keys().cloned().collect();
            let k = s.cells.iter().map(|c| c.cluster_index + 1).max().unwrap_or(0);
            let mut series = Vec::new();
            for (metric, pick) in [
                ("dcg", (|c: &GroupCell| c.mean_dcg) as fn(&GroupCell) -> f64),
                ("ndcg", |c: &GroupCell| c.mean_ndcg),
                ("total_percentage", |c: &GroupCell| c.mean_total_percentage),
            ] {
                for cluster in 0..k {
                    let values = groups
                        .iter()
                        .map(|g| s.cells.iter().find(|c| &c.group == g && c.cluster_index == cluster).map_or(0.0, pick))
                        .collect();
                    series.push(PlotSeries { metric: metric.into(), cluster_index: cluster, values });
                }
            }
            BarChart {
                attribute: s.attribute.clone(),
                group_sizes: groups.iter().map(|g| sizes[g]).collect(),
                groups,
                series,
            }
        })
        .collect()
}

/// Plain-text list of every significant non-intercept coefficient.
pub fn findings_text(models: &[ModelReport], alpha: f64, cluster_labels: &BTreeMap<usize, String>) -> String {
    let mut out = format!("Significant findings (P < {alpha})\n");
    let mut any = false;
    for m in models {
        let cluster = match cluster_labels.get(&m.cluster_index) {
            Some(l) => format!("{} ({l})", m.title()),
            None => m.title(),
        };
        for c in m.coefficients.iter().filter(|c| c.column_name != "intercept") {
            if is_significant(c.p, alpha) {
                any = true;
                let dir = if c.b < 0.0 { "lower" } else { "higher" };
                let _ = writeln!(out, "{}: {dir} {cluster} (B = {:.3}, P = {:.3})", c.column_name, c.b, c.p);
            }
        }
        let _ = writeln!(
            out,
            "{cluster} model: F = {:.3}, P(F) = {:.3}, adjusted R2 = {:.3}",
            m.f_statistic, m.f_p, m.adjusted_r2
        );
    }
    if !any {
        out.push_str("none\n");
    }
    out
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub regression_csv: PathBuf,
    pub coefficient_table: PathBuf,
    pub group_summary_csv: PathBuf,
    pub plot_data_json: PathBuf,
    pub summary_txt: PathBuf,
}

impl ReportFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            regression_csv: dir.join("regression.csv"),
            coefficient_table: dir.join("regression_table.csv"),
            group_summary_csv: dir.join("group_summary.csv"),
            plot_data_json: dir.join("plot_data.json"),
            summary_txt: dir.join("summary.txt"),
        }
    }

    pub fn all(&self) -> [&Path; 5] {
        [
            &self.regression_csv,
            &self.coefficient_table,
            &self.group_summary_csv,
            &self.plot_data_json,
            &self.summary_txt,
        ]
    }
}

/// Rendered report contents keyed by the file they go to.
pub fn render_report(
    models: &[ModelReport],
    summaries: &[GroupSummary],
    alpha: f64,
    cluster_labels: &BTreeMap<usize, String>,
) -> [String; 5] {
    let mut plot = serde_json::to_string_pretty(&plot_data(summaries)).expect("plot data serializes");
    plot.push('\n');
    [
        regression_csv(models, alpha),
        coefficient_table(models, alpha),
        group_summary_csv(summaries),
        plot,
        findings_text(models, alpha, cluster_labels),
    ]
}

/// Writes the five report files into `dir`, each via a `.partial` file that
/// is renamed once complete.
pub fn emit_report(
    models: &[ModelReport],
    summaries: &[GroupSummary],
    alpha: f64,
    cluster_labels: &BTreeMap<usize, String>,
    dir: &Path,
) -> Result<ReportFiles, ReportError> {
    std::fs::create_dir_all(dir)?;
    let files = ReportFiles::in_dir(dir);
    let contents = render_report(models, summaries, alpha, cluster_labels);
    for (path, body) in files.all().into_iter().zip(contents) {
        write_atomic(path, body.as_bytes())?;
    }
    Ok(files)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    std::fs::write(&partial, bytes)?;
    std::fs::rename(&partial, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_subject_registry;
    use crate::metrics::{TopicAffiliationProfile, RANKS};

    fn model(b: f64, p: f64) -> ModelReport {
        ModelReport {
            metric_kind: MetricKind::Dcg,
            cluster_index: 2,
            coefficients: vec![
                CoefficientRow { column_name: "intercept".into(), b: 0.7, se: 0.1, t: 7.0, p: 0.0 },
                CoefficientRow { column_name: "female".into(), b, se: 0.05, t: b / 0.05, p },
            ],
            adjusted_r2: 0.05,
            f_statistic: 6.1,
            f_p: 0.001,
        }
    }

    #[test]
    fn significant_row_flagged() {
        let csv = regression_csv(&[model(-0.20, 0.0)], 0.05);
        assert!(csv.contains("dcg,2,female,-0.2,0.05,-4,0,true,,,\n"), "{csv}");
        assert!(csv.contains("dcg,2,Model,,,,,,0.05,6.1,0.001\n"));
        let table = coefficient_table(&[model(-0.20, 0.0)], 0.05);
        assert!(table.contains("female,-0.20,0.00*"), "{table}");
    }

    #[test]
    fn boundary_p_not_flagged() {
        let csv = regression_csv(&[model(-0.1, 0.05)], 0.05);
        assert!(csv.contains(",0.05,false,"));
        assert!(!is_significant(0.05, 0.05));
        assert!(is_significant(0.0499999, 0.05));
    }

    #[test]
    fn regression_csv_roundtrip() {
        let models = vec![model(-0.2, 0.003), ModelReport { metric_kind: MetricKind::Ndcg, ..model(0.1, 0.4) }];
        let back = parse_regression_csv(&regression_csv(&models, 0.05)).unwrap();
        assert_eq!(back, models);
    }

    #[test]
    fn empty_report_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[], &[], 0.05, &BTreeMap::new(), dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&files.regression_csv).unwrap(), format!("{REGRESSION_HEADER}\n"));
        assert!(std::fs::read_to_string(&files.summary_txt).unwrap().contains("none"));
        assert_eq!(std::fs::read_to_string(&files.plot_data_json).unwrap(), "[]\n");
        assert!(parse_regression_csv(&std::fs::read_to_string(&files.regression_csv).unwrap()).unwrap().is_empty());
    }

    fn table_with(values: &[(&str, f64)]) -> MetricsTable<f64> {
        let mut rows = BTreeMap::new();
        for (t, dcg) in values {
            let p = TopicAffiliationProfile {
                term_id: t.to_string(),
                cluster_index: 0,
                rank_percentages: [0.0; RANKS],
                dcg: *dcg,
                ndcg: 0.5,
                idcg: 1.0,
                total_percentage: 0.25,
            };
            rows.insert((t.to_string(), 0), p);
        }
        MetricsTable {
            k: 1,
            rows,
            included_terms: values.iter().map(|v| v.0.to_string()).collect(),
            excluded_terms: vec![],
        }
    }

    #[test]
    fn group_means() {
        let reg = parse_subject_registry(
            "term_id,display_name,gender,birth_year,party,state\na,A A,female,1990,,\nb,B B,female,1960,,\nc,C C,,1970,,\n"
                .as_bytes(),
        )
        .unwrap();
        let t = table_with(&[("a", 0.4), ("b", 0.6), ("c", 1.0)]);
        let g = summarize_groups(&t, &reg, Grouping::Gender);
        assert_eq!(g.cells.len(), 1);
        assert_eq!(g.cells[0].group, "female");
        assert!((g.cells[0].mean_dcg - 0.5).abs() < 1e-15);
        assert_eq!(g.cells[0].n, 2);
        let age = summarize_groups(&t, &reg, Grouping::AgeSplit { threshold: 40, reference_year: 2021 });
        assert_eq!(age.group_sizes(), BTreeMap::from([("<40".to_string(), 1), (">=40".to_string(), 2)]));
        assert!(Grouping::parse("height", 40, 2021).is_err());
        let charts = plot_data(&[age]);
        assert_eq!(charts[0].groups, ["<40", ">=40"]);
        assert_eq!(charts[0].series.len(), 3);
    }
}
