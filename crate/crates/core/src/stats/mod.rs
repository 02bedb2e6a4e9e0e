//! Dummy-coded design matrices, OLS fits with coefficient and overall
//! significance, and the per-(metric, cluster) regression sweep.

mod design;
mod ols;
pub mod special;

pub use design::{encode_design, BaseCategories, DesignMatrix, DesignOptions};
pub use ols::{ols_fit, ols_fit_matrix, Coefficient, RegressionResult, COLLINEARITY_THRESHOLD};
pub use special::{f_p, t_two_sided_p};

use crate::metrics::{MetricKind, MetricsTable};
use crate::scalar::Scalar;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty design: no subject has every required attribute")]
    EmptyDesign,
    #[error("collinear design columns: {}", .0.join(", "))]
    Collinear(Vec<String>),
    #[error("insufficient data: {n} observations for {p} parameters")]
    InsufficientData { n: usize, p: usize },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type ModelKey = (MetricKind, usize);

/// One independent OLS fit per (metric kind, cluster). Per-model failures
/// are kept in their cell; only misaligned inputs fail the whole sweep.
pub fn regress_all<T: Scalar>(
    metrics: &MetricsTable<T>,
    design: &DesignMatrix<T>,
    metric_kinds: &[MetricKind],
) -> Result<BTreeMap<ModelKey, Result<RegressionResult<T>, StatsError>>, StatsError> {
    for term in &design.row_term_ids {
        for c in 0..metrics.k {
            if metrics.profile(term, c).is_none() {
                return Err(StatsError::Contract(format!("no metrics row for term {term:?}, cluster {c}")));
            }
        }
    }
    let mut out = BTreeMap::new();
    for &kind in metric_kinds {
        for c in 0..metrics.k {
            let y: Vec<T> =
                design.row_term_ids.iter().map(|t| kind.value(metrics.profile(t, c).expect("checked above"))).collect();
            out.insert((kind, c), ols_fit(design, &y));
        }
    }
    Ok(out)
}
