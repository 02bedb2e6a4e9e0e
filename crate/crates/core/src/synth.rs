//! Synthetic corpora with known injected bias, for validating the pipeline
//! end to end.
//!
//! Each subject belongs to groups (gender, party, state). A bias control
//! scales how often a topic is drawn for a group (`rate_multiplier`) and
//! shifts where its suggestions land in the list (`rank_shift`, in ranks).
//! Rank placement uses Plackett–Luce sampling (sort by log-weight plus Gumbel
//! noise); the log-weight that realizes a requested shift is calibrated by a
//! fixed-seed Monte Carlo search and stored in the ground-truth record.

use crate::corpus::{Engine, Gender, Subject, SubjectRegistry, SuggestionSnapshot};
use crate::embed::EmbeddingStore;
use crate::preprocess::{Gazetteer, LemmaTable};
use crate::rng::substream;
use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, IteratorRandom};
use rand::Rng;
use rand_distr::{Distribution, Gumbel, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicLexicon {
    pub name: String,
    pub tokens: Vec<String>,
    #[serde(default = "one")]
    pub base_weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Injected effect for subjects whose `attribute` equals `group`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasControl {
    /// `gender`, `party` or `state`.
    pub attribute: String,
    pub group: String,
    pub topic: String,
    /// Mean rank displacement of the topic's suggestions (positive = lower in the list).
    pub rank_shift: f64,
    /// Relative appearance frequency of the topic.
    pub rate_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub gender: BTreeMap<String, f64>,
    pub party: BTreeMap<String, f64>,
    pub state: BTreeMap<String, f64>,
    pub birth_year_min: i32,
    pub birth_year_max: i32,
    pub topics: Vec<TopicLexicon>,
    pub biases: Vec<BiasControl>,
    pub snapshots_per_subject: usize,
    pub list_length: usize,
    /// Fraction of suggestions replaced by text that preprocessing discards.
    pub noise_rate: f64,
    /// Fraction of suggestions emitted in an inflected surface form.
    pub inflection_rate: f64,
    /// Fraction of suggestions emitted as a two-word entity phrase (when one exists).
    pub phrase_rate: f64,
    /// Log-normal sigma of per-subject topic-weight heterogeneity.
    pub subject_jitter: f64,
    pub embedding_dim: usize,
    pub blob_spread: f64,
    pub engine: Engine,
    pub language: String,
    pub start: DateTime<Utc>,
    pub seed: u64,
}

fn words(list: &str) -> Vec<String> {
    list.split_whitespace().map(str::to_string).collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        let m = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        Self {
            n_subjects: 300,
            gender: m(&[("male", 0.6), ("female", 0.4)]),
            party: m(&[("CDU", 0.3), ("SPD", 0.3), ("GRÜNE", 0.15), ("FDP", 0.1), ("LINKE", 0.1), ("CSU", 0.05)]),
            state: m(&[("Baden-Württemberg", 0.25), ("Bayern", 0.25), ("Berlin", 0.2), ("Nordrhein-Westfalen", 0.3)]),
            birth_year_min: 1950,
            birth_year_max: 1995,
            topics: vec![
                TopicLexicon {
                    name: "personal".into(),
                    tokens: words(
                        "ehefrau ehemann kinder hochzeit geburtstag familie tochter sohn urlaub hund \
                         instagram freundin vermögen größe krankheit wohnort hobby eltern scheidung privat",
                    ),
                    base_weight: 1.0,
                },
                TopicLexicon {
                    name: "places".into(),
                    tokens: words(
                        "hamburg münchen köln dresden leipzig bremen hannover stuttgart bonn kiel \
                         rostock erfurt mainz potsdam freiburg heidelberg augsburg nürnberg lübeck kassel",
                    ),
                    base_weight: 1.0,
                },
                TopicLexicon {
                    name: "politics".into(),
                    tokens: words(
                        "bundestag wahlkampf koalition abstimmung minister skandal steuer rente klima \
                         afghanistan fraktion ausschuss gesetz haushalt europa rücktritt parteitag \
                         drogenbericht sicherheit digitalisierung",
                    ),
                    base_weight: 1.0,
                },
            ],
            biases: Vec::new(),
            snapshots_per_subject: 20,
            list_length: 10,
            noise_rate: 0.15,
            inflection_rate: 0.1,
            phrase_rate: 0.1,
            subject_jitter: 0.25,
            embedding_dim: 16,
            blob_spread: 0.02,
            engine: Engine::Google,
            language: "de-DE".into(),
            start: Utc.with_ymd_and_hms(2020, 1, 1, 6, 0, 0).unwrap(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// The injected effect shape used by the power study: female subjects see
    /// politics suggestions less often and one rank lower.
    pub fn with_female_politics_bias(mut self) -> Self {
        self.biases.push(BiasControl {
            attribute: "gender".into(),
            group: "female".into(),
            topic: "politics".into(),
            rank_shift: 1.0,
            rate_multiplier: 0.7,
        });
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Spec(m));
        if self.n_subjects == 0 || self.snapshots_per_subject == 0 {
            return err("n_subjects and snapshots_per_subject must be positive".into());
        }
        if !(1..=crate::corpus::MAX_RANK).contains(&self.list_length) {
            return err(format!("list_length {} outside 1..=10", self.list_length));
        }
        for (name, marg) in [("gender", &self.gender), ("party", &self.party), ("state", &self.state)] {
            let total: f64 = marg.values().sum();
            if marg.is_empty() || (total - 1.0).abs() > 1e-9 || marg.values().any(|&p| p < 0.0) {
                return err(format!("{name} marginals must be nonnegative and sum to 1 (got {total})"));
            }
        }
        for g in self.gender.keys() {
            if !matches!(g.as_str(), "male" | "female") {
                return err(format!("gender level {g:?} must be male or female"));
            }
        }
        if self.birth_year_min > self.birth_year_max || self.birth_year_min < 1900 {
            return err("invalid birth year range".into());
        }
        if self.topics.len() < 2 {
            return err("at least two topics are required".into());
        }
        let mut seen = BTreeSet::new();
        for t in &self.topics {
            if t.base_weight <= 0.0 {
                return err(format!("topic {} has nonpositive base weight", t.name));
            }
            if t.tokens.len() < self.list_length {
                return err(format!(
                    "lexicon {:?} has {} tokens, fewer than list length {} (sampling is without replacement)",
                    t.name,
                    t.tokens.len(),
                    self.list_length
                ));
            }
            for tok in &t.tokens {
                if tok.is_empty() || tok.chars().any(|c| !c.is_alphabetic() || c.is_uppercase()) {
                    return err(format!("lexicon token {tok:?} must be a lowercase alphabetic word"));
                }
                if !seen.insert(tok.as_str()) {
                    return err(format!("token {tok:?} appears in more than one lexicon"));
                }
            }
        }
        for b in &self.biases {
            if b.rate_multiplier <= 0.0 || !b.rate_multiplier.is_finite() {
                return err(format!("rate_multiplier must be positive, got {}", b.rate_multiplier));
            }
            if !b.rank_shift.is_finite() {
                return err("rank_shift must be finite".into());
            }
            if !self.topics.iter().any(|t| t.name == b.topic) {
                return err(format!("bias refers to unknown topic {:?}", b.topic));
            }
            if !matches!(b.attribute.as_str(), "gender" | "party" | "state") {
                return err(format!("bias attribute {:?} must be gender, party or state", b.attribute));
            }
        }
        for r in [self.noise_rate, self.inflection_rate, self.phrase_rate] {
            if !(0.0..=1.0).contains(&r) {
                return err("rates must lie in [0, 1]".into());
            }
        }
        if self.embedding_dim < 2 || self.blob_spread < 0.0 || self.subject_jitter < 0.0 {
            return err("embedding_dim >= 2, blob_spread >= 0 and subject_jitter >= 0 required".into());
        }
        Ok(())
    }

    fn topic_index(&self, name: &str) -> usize {
        self.topics.iter().position(|t| t.name == name).expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCalibration {
    pub attribute: String,
    pub group: String,
    pub topic: String,
    pub rank_shift: f64,
    /// Plackett–Luce log-weight offset applied to the topic (negative pushes down).
    pub log_weight: f64,
    /// Mean displacement the offset produced in the calibration simulation.
    pub achieved_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub topic_of_token: BTreeMap<String, String>,
    pub calibrations: Vec<RankCalibration>,
    pub calibration_lists: usize,
}

pub struct SynthCorpus {
    pub registry: SubjectRegistry,
    pub snapshots: Vec<SuggestionSnapshot>,
    pub lemmas: LemmaTable,
    pub gazetteer: Gazetteer,
    pub embeddings: EmbeddingStore<f64>,
    pub ground_truth: GroundTruth,
}

/// File names written by [`SynthCorpus::write_to`].
pub struct SynthPaths {
    pub registry: PathBuf,
    pub snapshots: PathBuf,
    pub lemmas: PathBuf,
    pub gazetteer: PathBuf,
    pub embeddings: PathBuf,
    pub ground_truth: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            registry: dir.join("registry.csv"),
            snapshots: dir.join("snapshots.jsonl"),
            lemmas: dir.join("lemmas.tsv"),
            gazetteer: dir.join("gazetteer.tsv"),
            embeddings: dir.join("embeddings.txt"),
            ground_truth: dir.join("ground_truth.json"),
        }
    }
}

impl SynthCorpus {
    pub fn write_to(&self, dir: &Path) -> Result<SynthPaths, SynthError> {
        std::fs::create_dir_all(dir)?;
        let paths = SynthPaths::in_dir(dir);
        let io = |e: crate::corpus::CorpusError| SynthError::Io(std::io::Error::other(e.to_string()));
        std::fs::write(&paths.registry, self.registry.to_csv().map_err(io)?)?;
        let mut lines = Vec::new();
        for s in &self.snapshots {
            serde_json::to_writer(&mut lines, s).map_err(|e| SynthError::Io(e.into()))?;
            lines.push(b'\n');
        }
        std::fs::write(&paths.snapshots, lines)?;
        std::fs::write(&paths.lemmas, self.lemmas.to_tsv())?;
        std::fs::write(&paths.gazetteer, self.gazetteer.to_tsv())?;
        std::fs::write(&paths.embeddings, self.embeddings.to_text())?;
        let gt = serde_json::to_vec_pretty(&self.ground_truth).map_err(|e| SynthError::Io(e.into()))?;
        std::fs::write(&paths.ground_truth, gt)?;
        Ok(paths)
    }

    /// Topic name per cluster index: the topic holding the majority of the cluster's tokens.
    pub fn cluster_topics(&self, assignment: &BTreeMap<String, usize>) -> BTreeMap<usize, String> {
        let mut votes: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
        for (tok, &c) in assignment {
            if let Some(t) = self.ground_truth.topic_of_token.get(tok) {
                *votes.entry(c).or_default().entry(t.as_str()).or_default() += 1;
            }
        }
        votes
            .into_iter()
            .map(|(c, v)| {
                let top = v.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0))).expect("nonempty").0;
                (c, top.to_string())
            })
            .collect()
    }
}

const CALIBRATION_LISTS: usize = 20_000;

fn draw_key<'a>(rng: &mut impl Rng, marg: &'a BTreeMap<String, f64>) -> &'a str {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in marg {
        acc += p;
        if r < acc {
            return k;
        }
    }
    marg.keys().next_back().expect("nonempty marginal")
}

fn draw_index(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let r = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Mean rank displacement of `topic` items when they carry log-weight
/// `offset`, over pre-drawn lists `(topics, gumbels)` (common random numbers).
fn displacement(lists: &[(Vec<usize>, Vec<f64>)], topic: usize, offset: f64) -> f64 {
    let (mut sum_shift, mut count) = (0.0, 0usize);
    let mut keyed: Vec<(f64, usize)> = Vec::new();
    for (topics, gumbels) in lists {
        keyed.clear();
        keyed.extend(topics.iter().zip(gumbels).map(|(&t, &g)| (g + if t == topic { offset } else { 0.0 }, t)));
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mean_rank = (topics.len() + 1) as f64 / 2.0;
        for (pos, &(_, t)) in keyed.iter().enumerate() {
            if t == topic {
                sum_shift += (pos + 1) as f64 - mean_rank;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum_shift / count as f64
    }
}

/// Finds the log-weight offset whose realized mean displacement equals `shift`
/// for a list mix drawn from `weights`.
fn calibrate(weights: &[f64], topic: usize, shift: f64, list_length: usize, seed: u64) -> (f64, f64) {
    if shift == 0.0 {
        return (0.0, 0.0);
    }
    let mut rng = substream(seed, "rank-calibration");
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let lists: Vec<(Vec<usize>, Vec<f64>)> = (0..CALIBRATION_LISTS)
        .map(|_| {
            let topics = (0..list_length).map(|_| draw_index(&mut rng, weights)).collect();
            let gumbels = (0..list_length).map(|_| gumbel.sample(&mut rng)).collect();
            (topics, gumbels)
        })
        .collect();
    // Displacement decreases as the offset grows (higher weight = earlier rank).
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if displacement(&lists, topic, mid) > shift {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let offset = 0.5 * (lo + hi);
    (offset, displacement(&lists, topic, offset))
}

const FIRST_NAMES_M: [&str; 8] = ["Thomas", "Michael", "Andreas", "Stefan", "Peter", "Jan", "Markus", "Frank"];
const FIRST_NAMES_F: [&str; 8] = ["Anna", "Julia", "Katrin", "Sabine", "Claudia", "Petra", "Nicole", "Sandra"];
const SURNAMES: [&str; 10] = ["Albers", "Brandt", "Conrad", "Dietz", "Engel", "Fuchs", "Graf", "Hahn", "Iske", "Jung"];
const FILLERS: [&str; 4] = ["tickets", "bilder", "video", "zitate"];

fn inflect(token: &str) -> String {
    format!("{token}en")
}

fn phrase_of(token: &str) -> Option<(String, String)> {
    let chars: Vec<char> = token.chars().collect();
    (chars.len() >= 8).then(|| {
        let mid = chars.len() / 2;
        (chars[..mid].iter().collect(), chars[mid..].iter().collect())
    })
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let n_topics = spec.topics.len();
    let base: Vec<f64> = spec.topics.iter().map(|t| t.base_weight).collect();

    let mut calibrations = Vec::new();
    for b in &spec.biases {
        let ti = spec.topic_index(&b.topic);
        let mut w = base.clone();
        w[ti] *= b.rate_multiplier;
        let (log_weight, achieved) = calibrate(&w, ti, b.rank_shift, spec.list_length, spec.seed);
        calibrations.push(RankCalibration {
            attribute: b.attribute.clone(),
            group: b.group.clone(),
            topic: b.topic.clone(),
            rank_shift: b.rank_shift,
            log_weight,
            achieved_shift: achieved,
        });
    }

    let all_tokens: BTreeSet<&str> = spec.topics.iter().flat_map(|t| t.tokens.iter().map(String::as_str)).collect();
    let mut lemma_pairs = Vec::new();
    let mut phrases = Vec::new();
    let mut topic_of_token = BTreeMap::new();
    for t in &spec.topics {
        for tok in &t.tokens {
            topic_of_token.insert(tok.clone(), t.name.clone());
            let inf = inflect(tok);
            if !all_tokens.contains(inf.as_str()) {
                lemma_pairs.push((inf, tok.clone()));
            }
            if let Some((a, b)) = phrase_of(tok) {
                phrases.push((format!("{a} {b}"), tok.clone()));
            }
        }
    }
    let inflectable: BTreeSet<&str> = lemma_pairs.iter().map(|(_, t)| t.as_str()).collect();
    let lemmas = LemmaTable::new(lemma_pairs.iter().cloned()).map_err(|e| SynthError::Spec(e.to_string()))?;
    let gazetteer = Gazetteer::new(phrases.iter().map(|(p, c)| (p.as_str(), c.clone())))
        .map_err(|e| SynthError::Spec(e.to_string()))?;

    let mut emb_rng = substream(spec.seed, "synth-embeddings");
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, spec.blob_spread.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut embeddings = EmbeddingStore::new(spec.embedding_dim).map_err(|e| SynthError::Spec(e.to_string()))?;
    for t in &spec.topics {
        let mut center: Vec<f64> = (0..spec.embedding_dim).map(|_| normal.sample(&mut emb_rng)).collect();
        let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
        center.iter_mut().for_each(|v| *v /= norm);
        for tok in &t.tokens {
            let v: Vec<f64> = center.iter().map(|c| c + noise.sample(&mut emb_rng)).collect();
            embeddings.insert(tok, &v).map_err(|e| SynthError::Spec(e.to_string()))?;
        }
    }

    let mut subj_rng = substream(spec.seed, "synth-subjects");
    let jitter = LogNormal::new(0.0, spec.subject_jitter).expect("valid lognormal");
    let mut subjects = Vec::with_capacity(spec.n_subjects);
    let mut profiles = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let gender = if draw_key(&mut subj_rng, &spec.gender) == "female" { Gender::Female } else { Gender::Male };
        let party = draw_key(&mut subj_rng, &spec.party).to_string();
        let state = draw_key(&mut subj_rng, &spec.state).to_string();
        let birth_year = subj_rng.random_range(spec.birth_year_min..=spec.birth_year_max);
        let first = if gender == Gender::Female { &FIRST_NAMES_F } else { &FIRST_NAMES_M };
        let display_name = format!(
            "{} {}",
            first.choose(&mut subj_rng).expect("nonempty"),
            SURNAMES.choose(&mut subj_rng).expect("nonempty")
        );
        let mut weights: Vec<f64> = base.iter().map(|&b| b * jitter.sample(&mut subj_rng)).collect();
        let mut offsets = vec![0.0; n_topics];
        for (b, cal) in spec.biases.iter().zip(&calibrations) {
            let value = match b.attribute.as_str() {
                "gender" => gender.as_str(),
                "party" => party.as_str(),
                _ => state.as_str(),
            };
            if value == b.group {
                let ti = spec.topic_index(&b.topic);
                weights[ti] *= b.rate_multiplier;
                offsets[ti] += cal.log_weight;
            }
        }
        profiles.push((weights, offsets));
        subjects.push(Subject {
            term_id: format!("s{i:05}"),
            display_name,
            gender,
            birth_year: Some(birth_year),
            party: Some(party),
            federated_state: Some(state),
        });
    }
    let registry = SubjectRegistry::new(subjects).map_err(|e| SynthError::Spec(e.to_string()))?;

    let mut rng = substream(spec.seed, "synth-snapshots");
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let mut snapshots = Vec::with_capacity(spec.n_subjects * spec.snapshots_per_subject);
    for (subject, (weights, offsets)) in registry.subjects().iter().zip(&profiles) {
        for j in 0..spec.snapshots_per_subject {
            let mut per_topic = vec![0usize; n_topics];
            for _ in 0..spec.list_length {
                per_topic[draw_index(&mut rng, weights)] += 1;
            }
            let mut items: Vec<(f64, &str)> = Vec::with_capacity(spec.list_length);
            for (ti, &m) in per_topic.iter().enumerate() {
                for tok in spec.topics[ti].tokens.iter().choose_multiple(&mut rng, m) {
                    items.push((offsets[ti] + gumbel.sample(&mut rng), tok.as_str()));
                }
            }
            items.sort_by(|a, b| b.0.total_cmp(&a.0));
            let texts: Vec<String> = items
                .iter()
                .map(|&(_, tok)| {
                    let u: f64 = rng.random();
                    let surface = if u < spec.noise_rate {
                        if rng.random_bool(0.5) {
                            format!("{tok} {}", FILLERS.choose(&mut rng).expect("nonempty"))
                        } else {
                            format!("{}", rng.random_range(2000..2030))
                        }
                    } else if u < spec.noise_rate + spec.inflection_rate && inflectable.contains(tok) {
                        inflect(tok)
                    } else if u < spec.noise_rate + spec.inflection_rate + spec.phrase_rate {
                        phrase_of(tok).map_or_else(|| tok.to_string(), |(a, b)| format!("{a} {b}"))
                    } else {
                        tok.to_string()
                    };
                    format!("{} {surface}", subject.display_name)
                })
                .collect();
            let ts = spec.start + Duration::hours(12 * j as i64);
            snapshots.push(SuggestionSnapshot::from_texts(
                subject.term_id.clone(),
                spec.engine,
                ts,
                spec.language.clone(),
                texts,
            ));
        }
    }

    Ok(SynthCorpus {
        registry,
        snapshots,
        lemmas,
        gazetteer,
        embeddings,
        ground_truth: GroundTruth {
            spec: spec.clone(),
            topic_of_token,
            calibrations,
            calibration_lists: CALIBRATION_LISTS,
        },
    })
}
