//! Reduction of raw suggestion strings to single analysable tokens:
//! cleaning, table-driven lemmatization and gazetteer entity condensation.

use crate::corpus::{Engine, Subject, SuggestionSnapshot};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("snapshot term {snapshot:?} does not belong to subject {subject:?}")]
    TermMismatch { snapshot: String, subject: String },
}

fn is_single_word(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

fn parse_tsv(text: &str) -> Result<Vec<(usize, String, String)>, PreprocessError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(PreprocessError::Parse { line: line_no, msg: "expected two tab-separated columns".into() });
        };
        rows.push((line_no, a.trim().to_lowercase(), b.trim().to_lowercase()));
    }
    Ok(rows)
}

/// Surface form to lemma lookup. Unknown forms pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LemmaTable(BTreeMap<String, String>);

impl LemmaTable {
    pub fn new<I, A, B>(pairs: I) -> Result<Self, PreprocessError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut m = BTreeMap::new();
        for (i, (a, b)) in pairs.into_iter().enumerate() {
            let (a, b) = (a.into().to_lowercase(), b.into().to_lowercase());
            if !is_single_word(&a) || !is_single_word(&b) {
                return Err(PreprocessError::Parse { line: i + 1, msg: format!("{a:?} -> {b:?} is not word -> word") });
            }
            m.insert(a, b);
        }
        Ok(Self(m))
    }

    /// Parses `surface<TAB>lemma` lines.
    pub fn from_tsv(text: &str) -> Result<Self, PreprocessError> {
        let rows = parse_tsv(text)?;
        let mut m = BTreeMap::new();
        for (line, a, b) in rows {
            if !is_single_word(&a) || !is_single_word(&b) {
                return Err(PreprocessError::Parse { line, msg: "lemma entries must be single words".into() });
            }
            m.insert(a, b);
        }
        Ok(Self(m))
    }

    pub fn to_tsv(&self) -> String {
        self.0.iter().map(|(a, b)| format!("{a}\t{b}\n")).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Multi-word entity phrases mapped to a canonical single token.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    phrases: BTreeMap<Vec<String>, String>,
    longest: usize,
}

impl Gazetteer {
    pub fn new<I, P, C>(entries: I) -> Result<Self, PreprocessError>
    where
        I: IntoIterator<Item = (P, C)>,
        P: AsRef<str>,
        C: Into<String>,
    {
        let mut g = Self::default();
        for (i, (p, c)) in entries.into_iter().enumerate() {
            g.insert(i + 1, p.as_ref(), c.into())?;
        }
        Ok(g)
    }

    fn insert(&mut self, line: usize, phrase: &str, canonical: String) -> Result<(), PreprocessError> {
        let words: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
        let canonical = canonical.trim().to_lowercase();
        if words.is_empty() {
            return Err(PreprocessError::Parse { line, msg: "empty gazetteer phrase".into() });
        }
        if !is_single_word(&canonical) {
            return Err(PreprocessError::Parse { line, msg: format!("canonical token {canonical:?} is not one word") });
        }
        self.longest = self.longest.max(words.len());
        self.phrases.insert(words, canonical);
        Ok(())
    }

    /// Parses `phrase<TAB>canonical_token` lines.
    pub fn from_tsv(text: &str) -> Result<Self, PreprocessError> {
        let mut g = Self::default();
        for (line, p, c) in parse_tsv(text)? {
            g.insert(line, &p, c)?;
        }
        Ok(g)
    }

    pub fn to_tsv(&self) -> String {
        self.phrases.iter().map(|(p, c)| format!("{}\t{c}\n", p.join(" "))).collect()
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Parses a stopword file, one word per line.
pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Direct,
    Lemmatized,
    EntityCondensed,
}

/// A suggestion reduced to one token, keeping its source rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSuggestion {
    pub term_id: String,
    pub engine: Engine,
    pub timestamp: DateTime<Utc>,
    pub rank: u32,
    pub token: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    EmptyAfterClean,
    MultiToken,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub dropped_count: usize,
    pub drop_reasons: BTreeMap<DropReason, usize>,
}

impl PreprocessReport {
    pub fn merge(&mut self, other: &PreprocessReport) {
        self.input_count += other.input_count;
        self.kept_count += other.kept_count;
        self.dropped_count += other.dropped_count;
        for (r, c) in &other.drop_reasons {
            *self.drop_reasons.entry(*r).or_default() += c;
        }
    }

    pub fn drop_rate(&self) -> f64 {
        if self.input_count == 0 {
            0.0
        } else {
            self.dropped_count as f64 / self.input_count as f64
        }
    }

    fn drop(&mut self, reason: DropReason) {
        self.dropped_count += 1;
        *self.drop_reasons.entry(reason).or_default() += 1;
    }
}

/// Splits into lowercase words with punctuation removed. Characters that are
/// neither alphanumeric nor whitespace are deleted, so `(köln)` becomes `köln`
/// and `baden-württemberg` stays one word.
fn words_of(raw: &str) -> Vec<String> {
    raw.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Lowercases, strips punctuation, and removes subject-name words,
/// digit-only words and stopwords, preserving order.
pub fn clean(raw: &str, subject_name: &str, stopwords: &BTreeSet<String>) -> Vec<String> {
    let name_words: BTreeSet<String> = words_of(subject_name).into_iter().collect();
    words_of(raw)
        .into_iter()
        .filter(|w| !name_words.contains(w))
        .filter(|w| !w.chars().all(|c| c.is_numeric()))
        .filter(|w| !stopwords.contains(w))
        .collect()
}

pub fn lemmatize(word: &str, table: &LemmaTable) -> String {
    table.0.get(word).cloned().unwrap_or_else(|| word.to_string())
}

/// Longest-match, left-to-right gazetteer scan. Returns the single remaining
/// token, or `None` when more than one token survives.
pub fn condense_entities(words: &[String], gazetteer: &Gazetteer) -> Option<(String, Provenance)> {
    let mut out: Vec<String> = Vec::new();
    let mut matched = false;
    let mut i = 0;
    while i < words.len() {
        let max_len = gazetteer.longest.min(words.len() - i);
        let hit = (1..=max_len).rev().find_map(|len| gazetteer.phrases.get(&words[i..i + len]).map(|c| (len, c)));
        match hit {
            Some((len, canonical)) => {
                out.push(canonical.clone());
                matched = true;
                i += len;
            }
            None => {
                out.push(words[i].clone());
                i += 1;
            }
        }
        if out.len() > 1 {
            return None;
        }
    }
    let token = out.pop()?;
    let provenance = if matched { Provenance::EntityCondensed } else { Provenance::Direct };
    Some((token, provenance))
}

/// Runs clean → lemmatize → condense over every suggestion of one snapshot.
pub fn preprocess_snapshot(
    snapshot: &SuggestionSnapshot,
    subject: &Subject,
    lemmas: &LemmaTable,
    gazetteer: &Gazetteer,
    stopwords: &BTreeSet<String>,
) -> Result<(Vec<TokenizedSuggestion>, PreprocessReport), PreprocessError> {
    if snapshot.term_id != subject.term_id {
        return Err(PreprocessError::TermMismatch {
            snapshot: snapshot.term_id.clone(),
            subject: subject.term_id.clone(),
        });
    }
    let mut report = PreprocessReport::default();
    let mut out = Vec::new();
    for s in &snapshot.suggestions {
        report.input_count += 1;
        let cleaned = clean(&s.text, &subject.display_name, stopwords);
        if cleaned.is_empty() {
            report.drop(DropReason::EmptyAfterClean);
            continue;
        }
        let lemmatized: Vec<String> = cleaned.iter().map(|w| lemmatize(w, lemmas)).collect();
        let changed = lemmatized != cleaned;
        match condense_entities(&lemmatized, gazetteer) {
            Some((token, prov)) => {
                let provenance = match prov {
                    Provenance::Direct if changed => Provenance::Lemmatized,
                    p => p,
                };
                report.kept_count += 1;
                out.push(TokenizedSuggestion {
                    term_id: snapshot.term_id.clone(),
                    engine: snapshot.engine,
                    timestamp: snapshot.timestamp,
                    rank: s.rank,
                    token,
                    provenance,
                });
            }
            None => report.drop(DropReason::MultiToken),
        }
    }
    Ok((out, report))
}
