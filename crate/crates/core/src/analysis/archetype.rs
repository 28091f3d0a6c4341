use crate::pairwise::{Level, SimilarityMatrix};
use crate::{Error, Result};

/// Ranks scanpaths by how often they appear among other scanpaths' `top_n`
/// most similar scanpaths (self excluded, ties by smaller key).
///
/// Every scanpath casts exactly `top_n` votes, so the frequencies sum to
/// `top_n * N`. The result lists every scanpath, most frequent first, ties by
/// key.
pub fn archetype_ranking(m: &SimilarityMatrix, top_n: usize) -> Result<Vec<(String, usize)>> {
    if m.level != Level::Scanpath {
        return Err(Error::Config("archetype ranking needs a scanpath-level matrix".into()));
    }
    let n = m.len();
    if top_n == 0 || top_n >= n.max(1) {
        return Err(Error::Config(format!("top_n must be in 1..{n}, got {top_n}")));
    }
    let mut freq = vec![0usize; n];
    for q in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&p| p != q).collect();
        others.sort_by(|&a, &b| {
            m.get(q, b)
                .partial_cmp(&m.get(q, a))
                .expect("finite similarities")
                .then_with(|| m.keys[a].cmp(&m.keys[b]))
        });
        for &p in &others[..top_n] {
            freq[p] += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = m.keys.iter().cloned().zip(freq).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// `rank,scanpath,frequency` CSV.
pub fn archetypes_csv(ranked: &[(String, usize)]) -> String {
    let mut out = String::from("rank,scanpath,frequency\n");
    for (i, (key, f)) in ranked.iter().enumerate() {
        out.push_str(&format!("{},{key},{f}\n", i + 1));
    }
    out
}
