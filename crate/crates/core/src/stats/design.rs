use super::StatsError;
use crate::corpus::{Gender, SubjectRegistry};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Omitted level per categorical attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseCategories {
    pub gender: Gender,
    pub party: String,
    pub state: String,
}

impl Default for BaseCategories {
    fn default() -> Self {
        Self { gender: Gender::Male, party: "CDU".into(), state: "Baden-Württemberg".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub base: BaseCategories,
    pub age_bin_width: u32,
    pub reference_year: i32,
    /// Party relabelling applied before coding (e.g. small parties → "other parties").
    #[serde(default)]
    pub party_merge: BTreeMap<String, String>,
}

impl DesignOptions {
    pub fn new(reference_year: i32) -> Self {
        Self { base: BaseCategories::default(), age_bin_width: 10, reference_year, party_merge: BTreeMap::new() }
    }

    fn party<'a>(&'a self, p: &'a str) -> &'a str {
        self.party_merge.get(p).map_or(p, String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    /// Row-major, `row_term_ids.len()` × `column_names.len()`.
    pub data: Vec<T>,
    pub column_names: Vec<String>,
    pub base_categories: BTreeMap<String, String>,
    pub row_term_ids: Vec<String>,
    /// `(term_id, reason)` for included terms that could not be coded.
    pub dropped: Vec<(String, String)>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn rows(&self) -> usize {
        self.row_term_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols()..(i + 1) * self.cols()]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }
}

struct Coded {
    term: String,
    female: bool,
    age_bin: i32,
    party: String,
    state: String,
}

/// Column order: intercept, gender dummy, `age_decades`, `party:*` (sorted),
/// `state:*` (sorted). Only non-base levels observed among usable rows get a
/// column. Subjects missing any attribute are dropped listwise.
pub fn encode_design<T: Scalar>(
    registry: &SubjectRegistry,
    included_terms: &[String],
    options: &DesignOptions,
) -> Result<DesignMatrix<T>, StatsError> {
    if options.age_bin_width == 0 {
        return Err(StatsError::Config("age_bin_width must be positive".into()));
    }
    if options.base.gender == Gender::Unknown {
        return Err(StatsError::Config("base gender must be male or female".into()));
    }
    let vocab = registry.vocabularies();
    let parties: BTreeSet<&str> = vocab.parties.iter().map(|p| options.party(p)).collect();
    if !parties.contains(options.base.party.as_str()) {
        return Err(StatsError::Config(format!("unknown base party {:?}", options.base.party)));
    }
    if !vocab.states.contains(&options.base.state) {
        return Err(StatsError::Config(format!("unknown base state {:?}", options.base.state)));
    }

    let mut coded = Vec::new();
    let mut dropped = Vec::new();
    for term in included_terms {
        let Some(s) = registry.get(term) else {
            dropped.push((term.clone(), "not in registry".into()));
            continue;
        };
        let missing: Vec<&str> = [
            (s.gender == Gender::Unknown, "gender"),
            (s.birth_year.is_none(), "birth_year"),
            (s.party.is_none(), "party"),
            (s.federated_state.is_none(), "state"),
        ]
        .into_iter()
        .filter_map(|(m, name)| m.then_some(name))
        .collect();
        if !missing.is_empty() {
            dropped.push((term.clone(), format!("missing {}", missing.join("+"))));
            continue;
        }
        let age = options.reference_year - s.birth_year.expect("checked");
        coded.push(Coded {
            term: term.clone(),
            female: s.gender != options.base.gender,
            age_bin: age.div_euclid(options.age_bin_width as i32),
            party: options.party(s.party.as_deref().expect("checked")).to_string(),
            state: s.federated_state.clone().expect("checked"),
        });
    }
    if coded.is_empty() {
        return Err(StatsError::EmptyDesign);
    }

    let other_gender = match options.base.gender {
        Gender::Male => Gender::Female,
        _ => Gender::Male,
    };
    let has_gender = coded.iter().any(|c| c.female);
    let party_levels: BTreeSet<&str> =
        coded.iter().map(|c| c.party.as_str()).filter(|p| *p != options.base.party).collect();
    let state_levels: BTreeSet<&str> =
        coded.iter().map(|c| c.state.as_str()).filter(|s| *s != options.base.state).collect();

    let mut column_names = vec!["intercept".to_string()];
    if has_gender {
        column_names.push(other_gender.as_str().to_string());
    }
    column_names.push("age_decades".into());
    column_names.extend(party_levels.iter().map(|p| format!("party:{p}")));
    column_names.extend(state_levels.iter().map(|s| format!("state:{s}")));

    let mut data = Vec::with_capacity(coded.len() * column_names.len());
    for c in &coded {
        data.push(T::one());
        if has_gender {
            data.push(if c.female { T::one() } else { T::zero() });
        }
        data.push(T::lit(c.age_bin as f64));
        data.extend(party_levels.iter().map(|p| if *p == c.party { T::one() } else { T::zero() }));
        data.extend(state_levels.iter().map(|s| if *s == c.state { T::one() } else { T::zero() }));
    }

    let base_categories = BTreeMap::from([
        ("gender".to_string(), options.base.gender.as_str().to_string()),
        ("party".to_string(), options.base.party.clone()),
        ("state".to_string(), options.base.state.clone()),
    ]);
    Ok(DesignMatrix {
        data,
        column_names,
        base_categories,
        row_term_ids: coded.into_iter().map(|c| c.term).collect(),
        dropped,
    })
}
