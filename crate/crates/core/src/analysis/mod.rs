//! Expertise analysis on top of similarity matrices.

mod archetype;
mod kappa;
mod knn;
mod report;
mod ward;

pub use archetype::{archetype_ranking, archetypes_csv};
pub use kappa::cohen_kappa;
pub use knn::{knn_loo_classify, ClassificationReport, GroupMetrics, Prediction};
pub use report::{cluster_expertise_report, ClusterReport};
pub use ward::{similarity_to_distance, ward_cluster, Dendrogram, Dissimilarity, Merge};

use crate::model::Group;

/// Row/column index of a known group in 2x2 confusion tables.
pub(crate) fn group_index(g: Group) -> Option<usize> {
    match g {
        Group::Student => Some(0),
        Group::Expert => Some(1),
        Group::Unknown => None,
    }
}

pub(crate) fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}
