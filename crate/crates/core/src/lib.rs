//! Counterfactual analysis of panel time series.
//!
//! - [`panel`]: unit × day observation panels, CSV ingestion, smoothing and normalisation.
//! - [`align`]: relative-time alignment on thresholds, intervention dates or mobility drops.
//! - [`rsc`]: robust synthetic control (singular-value thresholding + minimum-norm regression).
//! - [`synthint`]: stage-matched synthetic interventions and region comparisons.
//! - [`trendcluster`]: k-means clustering of trends and group aggregates.
//! - [`impact`]: peak statistics and counterfactual gap summaries.
//! - [`epi`]: SIR panel generator used as ground truth in validation.

pub mod align;
pub mod epi;
pub mod error;
pub mod impact;
pub mod linalg;
pub mod panel;
pub mod rsc;
pub mod synthint;
pub mod trendcluster;

pub use error::{Error, Result};
