use std::collections::BTreeMap;

use serde::Serialize;

use super::{group_index, ratio};
use crate::model::Group;
use crate::{Error, Result};

/// Two-cluster clustering read as an expert/student classifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub assignments: BTreeMap<String, usize>,
    /// Group each cluster was labelled with, indexed by cluster.
    pub cluster_labels: [Group; 2],
    /// Counts indexed `[true group][predicted group]`, student first.
    pub confusion: [[u64; 2]; 2],
    pub tpr_student: f64,
    pub tpr_expert: f64,
    pub accuracy: f64,
}

/// Labels each of two clusters with its majority group and scores the
/// result against the true groups.
///
/// A cluster with equal expert and student counts is labelled expert if it
/// holds the lexicographically smallest key of all entities, student
/// otherwise.
pub fn cluster_expertise_report(
    keys: &[String],
    assignments: &[usize],
    groups: &BTreeMap<String, Group>,
) -> Result<ClusterReport> {
    if keys.len() != assignments.len() {
        return Err(Error::DimMismatch(keys.len(), assignments.len()));
    }
    if let Some(&c) = assignments.iter().find(|&&c| c > 1) {
        return Err(Error::Config(format!("expertise report needs 2 clusters, found index {c}")));
    }
    let mut counts = [[0u64; 2]; 2];
    let mut truth = Vec::with_capacity(keys.len());
    for (key, &cluster) in keys.iter().zip(assignments) {
        let g = groups
            .get(key)
            .copied()
            .and_then(group_index)
            .ok_or_else(|| Error::Config(format!("{key} has no known group")))?;
        counts[cluster][g] += 1;
        truth.push(g);
    }
    for (c, row) in counts.iter().enumerate() {
        if row.iter().sum::<u64>() == 0 {
            return Err(Error::DegenerateClustering(format!("cluster {c} is empty")));
        }
    }
    let smallest = keys.iter().enumerate().min_by_key(|(_, k)| *k).map(|(i, _)| assignments[i]);
    let label = |c: usize| match counts[c][1].cmp(&counts[c][0]) {
        std::cmp::Ordering::Greater => Group::Expert,
        std::cmp::Ordering::Less => Group::Student,
        std::cmp::Ordering::Equal if smallest == Some(c) => Group::Expert,
        std::cmp::Ordering::Equal => Group::Student,
    };
    let cluster_labels = [label(0), label(1)];

    let mut confusion = [[0u64; 2]; 2];
    for (&t, &cluster) in truth.iter().zip(assignments) {
        let predicted = group_index(cluster_labels[cluster]).expect("known label");
        confusion[t][predicted] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    Ok(ClusterReport {
        assignments: keys.iter().cloned().zip(assignments.iter().copied()).collect(),
        cluster_labels,
        confusion,
        tpr_student: ratio(confusion[0][0], confusion[0][0] + confusion[0][1]),
        tpr_expert: ratio(confusion[1][1], confusion[1][0] + confusion[1][1]),
        accuracy: ratio(confusion[0][0] + confusion[1][1], total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(spec: &[(Group, usize)]) -> (Vec<String>, Vec<usize>, BTreeMap<String, Group>) {
        let keys: Vec<String> = (0..spec.len()).map(|i| format!("e{i:03}")).collect();
        let groups = keys.iter().cloned().zip(spec.iter().map(|s| s.0)).collect();
        (keys, spec.iter().map(|s| s.1).collect(), groups)
    }

    #[test]
    fn perfect_split() {
        let (k, a, g) = fixture(&[
            (Group::Expert, 1),
            (Group::Student, 0),
            (Group::Expert, 1),
            (Group::Student, 0),
        ]);
        let r = cluster_expertise_report(&k, &a, &g).unwrap();
        assert_eq!(r.cluster_labels, [Group::Student, Group::Expert]);
        assert_eq!((r.tpr_student, r.tpr_expert, r.accuracy), (1.0, 1.0, 1.0));
        assert_eq!(r.confusion, [[2, 0], [0, 2]]);
    }

    #[test]
    fn tie_goes_to_the_cluster_with_the_smallest_key() {
        let (k, a, g) = fixture(&[
            (Group::Expert, 0),
            (Group::Student, 0),
            (Group::Student, 1),
            (Group::Student, 1),
        ]);
        let r = cluster_expertise_report(&k, &a, &g).unwrap();
        assert_eq!(r.cluster_labels, [Group::Expert, Group::Student]);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn empty_cluster_and_unknown_group_are_errors() {
        let (k, a, g) = fixture(&[(Group::Expert, 0), (Group::Student, 0)]);
        assert!(matches!(cluster_expertise_report(&k, &a, &g), Err(Error::DegenerateClustering(_))));
        let (k, a, g) = fixture(&[(Group::Unknown, 0), (Group::Student, 1)]);
        assert!(cluster_expertise_report(&k, &a, &g).is_err());
    }
}
