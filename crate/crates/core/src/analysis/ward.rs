use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::fmt::sig9;
use crate::pairwise::SimilarityMatrix;
use crate::{Error, Result};

/// Symmetric dissimilarity matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Dissimilarity {
    pub keys: Vec<String>,
    values: Vec<f64>,
}

impl Dissimilarity {
    pub fn new(keys: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = keys.len();
        if values.len() != n * n {
            return Err(Error::BadMatrix(format!("{} values for {n} keys", values.len())));
        }
        let d = Dissimilarity { keys, values };
        for p in 0..n {
            if d.get(p, p) != 0.0 {
                return Err(Error::BadMatrix(format!("non-zero diagonal at {p}")));
            }
            for q in 0..n {
                let v = d.get(p, q);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::BadMatrix(format!("entry ({p}, {q}) = {v}")));
                }
                if v != d.get(q, p) {
                    return Err(Error::BadMatrix(format!("asymmetric at ({p}, {q})")));
                }
            }
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[p * self.keys.len() + q]
    }
}

/// `d = c - s`, with a zero diagonal. Values are clamped at zero.
pub fn similarity_to_distance(m: &SimilarityMatrix) -> Dissimilarity {
    let n = m.len();
    let mut values = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            if p != q {
                values[p * n + q] = (m.c - m.get(p, q)).max(0.0);
            }
        }
    }
    Dissimilarity {
        keys: m.keys.clone(),
        values,
    }
}

/// One agglomeration step. Leaves are clusters `0..n`; merge `t` creates
/// cluster `n + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    /// Ward linkage, the square root of the Lance-Williams squared distance
    /// (negative squared values keep their sign).
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaf_keys: Vec<String>,
    pub merges: Vec<Merge>,
    /// Merge steps whose linkage is lower than the step before. Ward on a
    /// non-Euclidean dissimilarity can produce these; they are reported, not
    /// reordered.
    pub inversions: Vec<usize>,
}

impl Dendrogram {
    /// Cluster index per leaf after undoing the last `k - 1` merges.
    /// Clusters are numbered by their lexicographically smallest key.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.leaf_keys.len();
        if k == 0 || k > n.max(1) {
            return Err(Error::Config(format!("cannot cut {n} leaves into {k} clusters")));
        }
        let mut owner: Vec<usize> = (0..n).collect();
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (t, m) in self.merges.iter().take(n - k).enumerate() {
            let mut merged = std::mem::take(&mut members[m.cluster_a]);
            merged.append(&mut members[m.cluster_b]);
            for &leaf in &merged {
                owner[leaf] = n + t;
            }
            members.push(merged);
        }
        let mut roots: Vec<usize> = owner.clone();
        roots.sort_unstable();
        roots.dedup();
        let smallest = |c: &usize| members[*c].iter().map(|&l| &self.leaf_keys[l]).min().cloned();
        roots.sort_by_key(smallest);
        Ok(owner
            .iter()
            .map(|o| roots.iter().position(|r| r == o).expect("root of every leaf"))
            .collect())
    }

    /// Merge list as CSV: `step,cluster_a,cluster_b,distance,size`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,cluster_a,cluster_b,distance,size\n");
        for (t, m) in self.merges.iter().enumerate() {
            let _ = writeln!(out, "{t},{},{},{},{}", m.cluster_a, m.cluster_b, sig9(m.distance), m.size);
        }
        out
    }
}

struct Active {
    id: usize,
    size: usize,
    smallest_key: String,
}

/// Ward agglomerative clustering with Lance-Williams updates on squared
/// dissimilarities.
///
/// At each step the active pair with the smallest squared linkage merges;
/// exact ties go to the pair whose (smaller, larger) representative keys sort
/// first, a cluster's representative being its smallest leaf key. Returns the
/// dendrogram and the assignment of every leaf to one of `k` clusters.
pub fn ward_cluster(d: &Dissimilarity, k: usize) -> Result<(Dendrogram, Vec<usize>)> {
    let d = Dissimilarity::new(d.keys.clone(), d.values.clone())?;
    let n = d.len();
    if n == 0 {
        return Err(Error::BadMatrix("no entities to cluster".into()));
    }
    let mut sq: Vec<f64> = d.values.iter().map(|v| v * v).collect();
    let mut slots: Vec<Option<Active>> = d
        .keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            Some(Active {
                id: i,
                size: 1,
                smallest_key: key.clone(),
            })
        })
        .collect();

    let pair_keys = |a: &Active, b: &Active| {
        let (x, y) = (&a.smallest_key, &b.smallest_key);
        if x <= y {
            (x.clone(), y.clone())
        } else {
            (y.clone(), x.clone())
        }
    };

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut inversions = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(usize, usize)> = None;
        for s in 0..n {
            let Some(a) = &slots[s] else { continue };
            for t in s + 1..n {
                let Some(b) = &slots[t] else { continue };
                let better = match best {
                    None => true,
                    Some((bs, bt)) => match sq[s * n + t].partial_cmp(&sq[bs * n + bt]).expect("finite linkage") {
                        Ordering::Less => true,
                        Ordering::Greater => false,
                        Ordering::Equal => {
                            let cur = slots[bs].as_ref().zip(slots[bt].as_ref()).expect("active best");
                            pair_keys(a, b) < pair_keys(cur.0, cur.1)
                        }
                    },
                };
                if better {
                    best = Some((s, t));
                }
            }
        }
        let (s, t) = best.expect("at least two active clusters");
        let a = slots[s].take().expect("active");
        let b = slots[t].take().expect("active");
        let (na, nb) = (a.size as f64, b.size as f64);
        let sq_ab = sq[s * n + t];
        for r in 0..n {
            let Some(c) = &slots[r] else { continue };
            let nc = c.size as f64;
            let updated = ((na + nc) * sq[s * n + r] + (nb + nc) * sq[t * n + r] - nc * sq_ab) / (na + nb + nc);
            sq[s * n + r] = updated;
            sq[r * n + s] = updated;
        }
        let distance = sq_ab.signum() * sq_ab.abs().sqrt();
        if let Some(prev) = merges.last().map(|m: &Merge| m.distance) {
            if distance < prev {
                inversions.push(step);
            }
        }
        merges.push(Merge {
            cluster_a: a.id.min(b.id),
            cluster_b: a.id.max(b.id),
            distance,
            size: a.size + b.size,
        });
        slots[s] = Some(Active {
            id: n + step,
            size: a.size + b.size,
            smallest_key: a.smallest_key.min(b.smallest_key),
        });
    }

    let dendrogram = Dendrogram {
        leaf_keys: d.keys.clone(),
        merges,
        inversions,
    };
    let assignments = dendrogram.cut(k)?;
    Ok((dendrogram, assignments))
}
