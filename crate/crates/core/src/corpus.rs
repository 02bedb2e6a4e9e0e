//! Search subjects, ranked suggestion snapshots, live autocomplete fetching
//! and line-delimited JSON persistence.

use chrono::{DateTime, Datelike, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Longest suggestion list an engine may contribute to one snapshot.
pub const MAX_RANK: usize = 10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("duplicate term_id {0:?}")]
    DuplicateKey(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("fetch failed for {url}: {msg}")]
    Fetch { url: String, msg: String, retryable: bool },
    #[error("protocol error (status {status}): {msg}")]
    Protocol { status: u16, msg: String, body: String },
    #[error("line {line}: {msg}")]
    InvalidLine { line: u64, msg: String },
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Unknown,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Unknown => "unknown",
        }
    }
}

impl FromStr for Gender {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            "" | "unknown" => Ok(Gender::Unknown),
            other => Err(format!("unknown gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Google,
    Duckduckgo,
    Bing,
    Custom,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Google, Engine::Duckduckgo, Engine::Bing, Engine::Custom];

    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Google => "google",
            Engine::Duckduckgo => "duckduckgo",
            Engine::Bing => "bing",
            Engine::Custom => "custom",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Engine::ALL
            .into_iter()
            .find(|e| e.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown engine {s:?}"))
    }
}

/// A searched person together with the meta-attributes used as regressors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub term_id: String,
    pub display_name: String,
    pub gender: Gender,
    pub birth_year: Option<i32>,
    pub party: Option<String>,
    pub federated_state: Option<String>,
}

impl Subject {
    pub fn age_in(&self, reference_year: i32) -> Option<i32> {
        self.birth_year.map(|y| reference_year - y)
    }
}

/// Declared value sets for the categorical attributes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub parties: BTreeSet<String>,
    pub states: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubjectRegistry {
    subjects: Vec<Subject>,
    index: BTreeMap<String, usize>,
    vocabularies: Vocabularies,
}

impl SubjectRegistry {
    /// Builds a registry whose vocabularies are the values observed in `subjects`.
    pub fn new(subjects: Vec<Subject>) -> Result<Self, CorpusError> {
        let mut vocabularies = Vocabularies::default();
        for s in &subjects {
            if let Some(p) = &s.party {
                vocabularies.parties.insert(p.clone());
            }
            if let Some(st) = &s.federated_state {
                vocabularies.states.insert(st.clone());
            }
        }
        Self::with_vocabularies(subjects, vocabularies)
    }

    pub fn with_vocabularies(subjects: Vec<Subject>, vocabularies: Vocabularies) -> Result<Self, CorpusError> {
        let max_year = Utc::now().year();
        let mut index = BTreeMap::new();
        for (i, s) in subjects.iter().enumerate() {
            validate_subject(s, max_year)?;
            if let Some(p) = &s.party {
                if !vocabularies.parties.contains(p) {
                    return Err(CorpusError::Validation(format!("party {p:?} of {} not in vocabulary", s.term_id)));
                }
            }
            if let Some(st) = &s.federated_state {
                if !vocabularies.states.contains(st) {
                    return Err(CorpusError::Validation(format!("state {st:?} of {} not in vocabulary", s.term_id)));
                }
            }
            if index.insert(s.term_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateKey(s.term_id.clone()));
            }
        }
        Ok(Self { subjects, index, vocabularies })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn get(&self, term_id: &str) -> Option<&Subject> {
        self.index.get(term_id).map(|&i| &self.subjects[i])
    }

    pub fn vocabularies(&self) -> &Vocabularies {
        &self.vocabularies
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Serializes the registry in the same CSV layout `parse_subject_registry` reads.
    pub fn to_csv(&self) -> Result<Vec<u8>, CorpusError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REGISTRY_HEADER).map_err(csv_io)?;
        for s in &self.subjects {
            let year = s.birth_year.map(|y| y.to_string()).unwrap_or_default();
            let gender = match s.gender {
                Gender::Unknown => "",
                g => g.as_str(),
            };
            w.write_record([
                s.term_id.as_str(),
                s.display_name.as_str(),
                gender,
                year.as_str(),
                s.party.as_deref().unwrap_or(""),
                s.federated_state.as_deref().unwrap_or(""),
            ])
            .map_err(csv_io)?;
        }
        w.into_inner().map_err(|e| CorpusError::Io(e.into_error()))
    }
}

fn csv_io(e: csv::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}

fn validate_subject(s: &Subject, max_year: i32) -> Result<(), CorpusError> {
    if s.term_id.trim().is_empty() {
        return Err(CorpusError::Validation("empty term_id".into()));
    }
    if s.display_name.trim().is_empty() {
        return Err(CorpusError::Validation(format!("empty display_name for {}", s.term_id)));
    }
    if let Some(y) = s.birth_year {
        if !(1900..=max_year).contains(&y) {
            return Err(CorpusError::Validation(format!("birth_year {y} of {} outside [1900, {max_year}]", s.term_id)));
        }
    }
    Ok(())
}

pub const REGISTRY_HEADER: [&str; 6] = ["term_id", "display_name", "gender", "birth_year", "party", "state"];

fn non_empty(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Parses the subject registry CSV (`term_id,display_name,gender,birth_year,party,state`).
pub fn parse_subject_registry(csv_bytes: &[u8]) -> Result<SubjectRegistry, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_bytes);
    let headers = rdr.headers().map_err(|e| CorpusError::Parse { line: 1, msg: e.to_string() })?;
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != REGISTRY_HEADER {
        return Err(CorpusError::Parse {
            line: 1,
            msg: format!("expected header {}, found {}", REGISTRY_HEADER.join(","), found.join(",")),
        });
    }
    let max_year = Utc::now().year();
    let mut subjects = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CorpusError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let perr = |msg: String| CorpusError::Parse { line, msg };
        let gender = rec[2].parse::<Gender>().map_err(perr)?;
        let birth_year = match non_empty(&rec[3]) {
            None => None,
            Some(y) => {
                Some(y.parse::<i32>().map_err(|_| CorpusError::Parse { line, msg: format!("bad birth_year {y:?}") })?)
            }
        };
        let subject = Subject {
            term_id: rec[0].trim().to_string(),
            display_name: rec[1].trim().to_string(),
            gender,
            birth_year,
            party: non_empty(&rec[4]),
            federated_state: non_empty(&rec[5]),
        };
        validate_subject(&subject, max_year).map_err(|e| match e {
            CorpusError::Validation(m) => CorpusError::Validation(format!("line {line}: {m}")),
            other => other,
        })?;
        if !seen.insert(subject.term_id.clone()) {
            return Err(CorpusError::DuplicateKey(subject.term_id));
        }
        subjects.push(subject);
    }
    SubjectRegistry::new(subjects)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub rank: u32,
    pub text: String,
}

/// One ranked suggestion list as returned by one engine at one instant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionSnapshot {
    pub term_id: String,
    pub engine: Engine,
    pub timestamp: DateTime<Utc>,
    pub language: String,
    pub suggestions: Vec<Suggestion>,
}

impl SuggestionSnapshot {
    /// Builds a snapshot from texts in server order, keeping at most ten entries.
    pub fn from_texts<I, S>(
        term_id: impl Into<String>,
        engine: Engine,
        timestamp: DateTime<Utc>,
        language: impl Into<String>,
        texts: I,
    ) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let suggestions = texts
            .into_iter()
            .map(Into::into)
            .filter(|t: &String| !t.trim().is_empty())
            .take(MAX_RANK)
            .enumerate()
            .map(|(i, text)| Suggestion { rank: i as u32 + 1, text })
            .collect();
        Self { term_id: term_id.into(), engine, timestamp, language: language.into(), suggestions }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.term_id.trim().is_empty() {
            return Err("empty term_id".into());
        }
        if self.suggestions.len() > MAX_RANK {
            return Err(format!("{} suggestions exceed {MAX_RANK}", self.suggestions.len()));
        }
        for (i, s) in self.suggestions.iter().enumerate() {
            let expected = i as u32 + 1;
            if s.rank != expected {
                return Err(format!("rank gap: expected rank {expected}, found {}", s.rank));
            }
            if s.text.trim().is_empty() {
                return Err(format!("empty suggestion text at rank {}", s.rank));
            }
        }
        Ok(())
    }
}

/// Shape of an autocomplete response body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseShape {
    /// `["query", ["s1", "s2", ...], ...]` (OpenSearch suggestions).
    ArrayPair,
    /// `[{"phrase": "s1"}, {"phrase": "s2"}, ...]`; the field is `text_field`.
    ObjectList,
}

fn default_delay() -> u64 {
    1000
}

fn default_jitter() -> u64 {
    250
}

fn default_text_field() -> String {
    "phrase".into()
}

/// How to reach one engine. `url_template` may contain `{query}`, `{lang}`,
/// `{locale}`, `{region}` and `{country}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url_template: String,
    pub response_shape: ResponseShape,
    #[serde(default = "default_delay")]
    pub min_delay_ms: u64,
    #[serde(default = "default_jitter")]
    pub jitter_ms: u64,
    #[serde(default = "default_text_field")]
    pub text_field: String,
}

impl EndpointConfig {
    pub fn new(url_template: impl Into<String>, response_shape: ResponseShape) -> Self {
        Self {
            url_template: url_template.into(),
            response_shape,
            min_delay_ms: default_delay(),
            jitter_ms: default_jitter(),
            text_field: default_text_field(),
        }
    }

    pub fn url_for(&self, term: &str, language: &str) -> String {
        let query: String = url::form_urlencoded::byte_serialize(term.as_bytes()).collect();
        let mut parts = language.split(['-', '_']);
        let lang = parts.next().unwrap_or("").to_ascii_lowercase();
        let country = parts.next().unwrap_or("").to_ascii_uppercase();
        let region =
            if country.is_empty() { lang.clone() } else { format!("{}-{}", country.to_ascii_lowercase(), lang) };
        self.url_template
            .replace("{query}", &query)
            .replace("{lang}", &lang)
            .replace("{locale}", language)
            .replace("{region}", &region)
            .replace("{country}", &country)
    }
}

/// Per-engine endpoint configuration, as stored in the endpoint config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineEndpoints(pub BTreeMap<Engine, EndpointConfig>);

impl Default for EngineEndpoints {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert(
            Engine::Google,
            EndpointConfig::new(
                "https://suggestqueries.google.com/complete/search?client=firefox&hl={lang}&gl={country}&q={query}",
                ResponseShape::ArrayPair,
            ),
        );
        m.insert(
            Engine::Duckduckgo,
            EndpointConfig::new("https://duckduckgo.com/ac/?q={query}&kl={region}", ResponseShape::ObjectList),
        );
        m.insert(
            Engine::Bing,
            EndpointConfig::new(
                "https://api.bing.com/osjson.aspx?query={query}&language={locale}",
                ResponseShape::ArrayPair,
            ),
        );
        Self(m)
    }
}

impl EngineEndpoints {
    pub fn from_json(bytes: &[u8]) -> Result<Self, CorpusError> {
        serde_json::from_slice(bytes).map_err(|e| CorpusError::Config(e.to_string()))
    }

    pub fn get(&self, engine: Engine) -> Result<&EndpointConfig, CorpusError> {
        self.0.get(&engine).ok_or_else(|| CorpusError::Config(format!("no endpoint configured for {engine}")))
    }
}

/// Extracts suggestion strings from a response body of the given shape.
pub fn parse_response_body(body: &str, shape: ResponseShape, text_field: &str) -> Result<Vec<String>, String> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let arr = v.as_array().ok_or("response is not a JSON array")?;
    match shape {
        ResponseShape::ArrayPair => {
            let list = arr
                .get(1)
                .and_then(|x| x.as_array())
                .ok_or("array-pair response lacks a suggestion list at index 1")?;
            list.iter()
                .map(|x| x.as_str().map(str::to_string).ok_or_else(|| "non-string suggestion".to_string()))
                .collect()
        }
        ResponseShape::ObjectList => arr
            .iter()
            .map(|o| {
                o.get(text_field)
                    .and_then(|x| x.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| format!("object lacks string field {text_field:?}"))
            })
            .collect(),
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(20)))
        .build()
        .into()
}

fn fetch_with(
    agent: &ureq::Agent,
    engine: Engine,
    term_id: &str,
    term: &str,
    language: &str,
    cfg: &EndpointConfig,
) -> Result<SuggestionSnapshot, CorpusError> {
    let url = cfg.url_for(term, language);
    // Only query, language and location go out; no cookies or profile parameters.
    let mut resp = agent.get(&url).call().map_err(|e| CorpusError::Fetch {
        url: url.clone(),
        msg: e.to_string(),
        retryable: true,
    })?;
    let timestamp = Utc::now();
    let status = resp.status().as_u16();
    let raw = resp.body_mut().read_to_vec().map_err(|e| CorpusError::Fetch {
        url: url.clone(),
        msg: e.to_string(),
        retryable: true,
    })?;
    let body = String::from_utf8_lossy(&raw).into_owned();
    if !(200..300).contains(&status) {
        return Err(CorpusError::Protocol { status, msg: "non-success status".into(), body });
    }
    let texts = parse_response_body(&body, cfg.response_shape, &cfg.text_field)
        .map_err(|msg| CorpusError::Protocol { status, msg, body: body.clone() })?;
    Ok(SuggestionSnapshot::from_texts(term_id, engine, timestamp, language, texts))
}

/// Requests suggestions for `term` once. The snapshot's term id is the term itself;
/// use [`Crawler`] to attach registry ids and honour rate limits.
pub fn fetch_suggestions(
    engine: Engine,
    term: &str,
    language: &str,
    endpoint_config: &EndpointConfig,
) -> Result<SuggestionSnapshot, CorpusError> {
    fetch_with(&agent(), engine, term, term, language, endpoint_config)
}

/// Single-shot crawler enforcing a minimum delay (plus jitter) between
/// requests to the same engine.
pub struct Crawler {
    agent: ureq::Agent,
    endpoints: EngineEndpoints,
    last_request: BTreeMap<Engine, Instant>,
    rng: rand_chacha::ChaCha8Rng,
}

impl Crawler {
    pub fn new(endpoints: EngineEndpoints, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            agent: agent(),
            endpoints,
            last_request: BTreeMap::new(),
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn fetch(
        &mut self,
        engine: Engine,
        subject: &Subject,
        language: &str,
    ) -> Result<SuggestionSnapshot, CorpusError> {
        let cfg = self.endpoints.get(engine)?.clone();
        if let Some(prev) = self.last_request.get(&engine) {
            let jitter = if cfg.jitter_ms > 0 { self.rng.random_range(0..=cfg.jitter_ms) } else { 0 };
            let wait = Duration::from_millis(cfg.min_delay_ms + jitter);
            let elapsed = prev.elapsed();
            if elapsed < wait {
                std::thread::sleep(wait - elapsed);
            }
        }
        self.last_request.insert(engine, Instant::now());
        fetch_with(&self.agent, engine, &subject.term_id, &subject.display_name, language, &cfg)
    }
}

/// Appends one JSON line per snapshot. An empty list leaves the file untouched.
pub fn append_snapshots(path: &Path, snapshots: &[SuggestionSnapshot]) -> Result<usize, CorpusError> {
    if snapshots.is_empty() {
        return Ok(0);
    }
    let mut buf = Vec::new();
    for s in snapshots {
        s.validate().map_err(CorpusError::Validation)?;
        serde_json::to_writer(&mut buf, s).map_err(|e| CorpusError::Io(e.into()))?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.flush()?;
    Ok(snapshots.len())
}

#[derive(Debug, Clone, Default)]
pub struct SnapshotFilter {
    pub engine: Option<Engine>,
    /// Inclusive start.
    pub from: Option<DateTime<Utc>>,
    /// Exclusive end.
    pub until: Option<DateTime<Utc>>,
    pub term_ids: Option<BTreeSet<String>>,
}

impl SnapshotFilter {
    pub fn matches(&self, s: &SuggestionSnapshot) -> bool {
        self.engine.is_none_or(|e| e == s.engine)
            && self.from.is_none_or(|f| s.timestamp >= f)
            && self.until.is_none_or(|u| s.timestamp < u)
            && self.term_ids.as_ref().is_none_or(|ids| ids.contains(&s.term_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Invalid lines are collected into the report.
    #[default]
    Lenient,
    /// The first invalid line aborts the load.
    Strict,
}

#[derive(Debug, Clone, Default)]
pub struct SnapshotLoad {
    pub snapshots: Vec<SuggestionSnapshot>,
    /// `(line number, message)` for each rejected line.
    pub invalid: Vec<(u64, String)>,
}

pub fn load_snapshots(path: &Path, filter: &SnapshotFilter, mode: LoadMode) -> Result<SnapshotLoad, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = SnapshotLoad::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<SuggestionSnapshot>(&line)
            .map_err(|e| e.to_string())
            .and_then(|s| s.validate().map(|_| s));
        match parsed {
            Ok(s) => {
                if filter.matches(&s) {
                    out.snapshots.push(s);
                }
            }
            Err(msg) if mode == LoadMode::Strict => return Err(CorpusError::InvalidLine { line: line_no, msg }),
            Err(msg) => out.invalid.push((line_no, msg)),
        }
    }
    Ok(out)
}
