//! Objective metrics and sampling oracles.

pub mod attributes;
pub mod oa;
pub mod oracle;
pub mod similarity;

pub use attributes::{seven_attributes, Attribute, AttributeSet};
pub use oa::{histogram_overlap, overlapping_area, quartile_clusters, OaEntry, OaReport, OA_BINS};
pub use oracle::{
    histogram, rejection_oracle, rejection_oracle_with_floor, step_posterior_histogram, step_posterior_mass,
    tilted_gaussian, total_variation, OracleSamples,
};
pub use similarity::{chroma_similarity, groove_similarity};
