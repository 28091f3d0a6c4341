use std::collections::BTreeMap;

use serde::Serialize;

use super::{cohen_kappa, group_index, ratio};
use crate::model::{parse_key, Group};
use crate::pairwise::{Level, SimilarityMatrix};
use crate::{Error, Result};

/// Rates over one set of predictions. Undefined rates serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub tpr_expert: f64,
    pub tpr_student: f64,
    pub accuracy: f64,
    pub kappa: Option<f64>,
    /// Counts indexed `[true group][predicted group]`, student first.
    pub confusion: [[u64; 2]; 2],
}

impl GroupMetrics {
    fn from_confusion(confusion: [[u64; 2]; 2]) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        GroupMetrics {
            tpr_expert: ratio(confusion[1][1], confusion[1][0] + confusion[1][1]),
            tpr_student: ratio(confusion[0][0], confusion[0][0] + confusion[0][1]),
            accuracy: ratio(confusion[0][0] + confusion[1][1], total),
            kappa: cohen_kappa(&confusion).ok(),
            confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub key: String,
    pub truth: Group,
    pub predicted: Group,
    /// Keys of the voting neighbours, nearest first.
    pub neighbors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub k: usize,
    #[serde(flatten)]
    pub overall: GroupMetrics,
    pub per_stimulus: BTreeMap<String, GroupMetrics>,
    pub predictions: Vec<Prediction>,
}

/// Leave-one-subject-and-one-stimulus-out k-nearest-neighbour classification.
///
/// Each scanpath `s@i` is predicted from the `k` most similar labelled
/// scanpaths `t@j` with `t != s` and `j != i` (ties by smaller key) by an
/// unweighted majority vote. Scanpaths with an unknown group are predicted
/// but never vote and do not enter the metrics.
pub fn knn_loo_classify(
    m: &SimilarityMatrix,
    groups: &BTreeMap<String, Group>,
    k: usize,
) -> Result<ClassificationReport> {
    if m.level != Level::Scanpath {
        return Err(Error::Config("kNN classification needs a scanpath-level matrix".into()));
    }
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Config(format!("k must be odd, got {k}")));
    }
    let mut parsed = Vec::with_capacity(m.len());
    for key in &m.keys {
        let (s, i) = parse_key(key).ok_or_else(|| Error::parse("similarity keys", format!("{key:?} is not subject@stimulus")))?;
        let g = groups.get(key).copied().unwrap_or(Group::Unknown);
        parsed.push((s, i, g));
    }

    let mut predictions = Vec::with_capacity(m.len());
    let mut overall = [[0u64; 2]; 2];
    let mut per_stimulus: BTreeMap<String, [[u64; 2]; 2]> = BTreeMap::new();
    for (p, &(subject, stimulus, truth)) in parsed.iter().enumerate() {
        let mut candidates: Vec<usize> = (0..m.len())
            .filter(|&q| {
                let (t, j, g) = parsed[q];
                t != subject && j != stimulus && g.is_known()
            })
            .collect();
        if candidates.len() < k {
            return Err(Error::TooFewCandidates {
                key: m.keys[p].clone(),
                available: candidates.len(),
                needed: k,
            });
        }
        candidates.sort_by(|&a, &b| {
            m.get(p, b)
                .partial_cmp(&m.get(p, a))
                .expect("finite similarities")
                .then_with(|| m.keys[a].cmp(&m.keys[b]))
        });
        candidates.truncate(k);
        let experts = candidates.iter().filter(|&&q| parsed[q].2 == Group::Expert).count();
        let predicted = if 2 * experts > k { Group::Expert } else { Group::Student };
        if let Some(t) = group_index(truth) {
            let pi = group_index(predicted).expect("known prediction");
            overall[t][pi] += 1;
            per_stimulus.entry(stimulus.to_string()).or_default()[t][pi] += 1;
        }
        predictions.push(Prediction {
            key: m.keys[p].clone(),
            truth,
            predicted,
            neighbors: candidates.iter().map(|&q| m.keys[q].clone()).collect(),
        });
    }

    Ok(ClassificationReport {
        k,
        overall: GroupMetrics::from_confusion(overall),
        per_stimulus: per_stimulus
            .into_iter()
            .map(|(s, c)| (s, GroupMetrics::from_confusion(c)))
            .collect(),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::Metric;

    fn build(keys: &[&str], sim: impl Fn(usize, usize) -> f64) -> SimilarityMatrix {
        let n = keys.len();
        let mut v = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                v[p * n + q] = if p == q { 10.0 } else { sim(p.min(q), p.max(q)) };
            }
        }
        SimilarityMatrix::new(keys.iter().map(|s| s.to_string()).collect(), v, Level::Scanpath, 10.0, Metric::L1)
            .unwrap()
    }

    #[test]
    fn majority_of_three() {
        // query q@x; neighbours on stimulus y: e1, e2 experts and s1 student
        let keys = ["q@x", "e1@y", "e2@y", "s1@y", "s2@y"];
        let m = build(&keys, |p, q| match (p, q) {
            (0, 1) => 9.0,
            (0, 2) => 8.0,
            (0, 3) => 7.0,
            (0, 4) => 1.0,
            _ => 5.0,
        });
        let groups: BTreeMap<String, Group> = [
            ("q@x", Group::Student),
            ("e1@y", Group::Expert),
            ("e2@y", Group::Expert),
            ("s1@y", Group::Student),
            ("s2@y", Group::Student),
        ]
        .iter()
        .map(|(k, g)| (k.to_string(), *g))
        .collect();
        // the query is the only scanpath on x, so only it has enough candidates
        let err = knn_loo_classify(&m, &groups, 3).unwrap_err();
        assert!(matches!(err, Error::TooFewCandidates { .. }));

        let keys = ["q@x", "e1@y", "e2@y", "s1@y", "s2@y", "e3@x", "s3@x", "e4@x"];
        let m = build(&keys, |p, q| match (p, q) {
            (0, 1) => 9.0,
            (0, 2) => 8.0,
            (0, 3) => 7.0,
            (0, 4) => 1.0,
            _ => 5.0,
        });
        let mut groups = groups;
        for (k, g) in [("e3@x", Group::Expert), ("s3@x", Group::Student), ("e4@x", Group::Expert)] {
            groups.insert(k.to_string(), g);
        }
        let r = knn_loo_classify(&m, &groups, 3).unwrap();
        let q = &r.predictions[0];
        assert_eq!(q.neighbors, vec!["e1@y", "e2@y", "s1@y"]);
        assert_eq!(q.predicted, Group::Expert);
    }

    #[test]
    fn even_k_is_rejected() {
        let m = build(&["a@x", "b@y"], |_, _| 1.0);
        assert!(knn_loo_classify(&m, &BTreeMap::new(), 2).is_err());
    }
}
