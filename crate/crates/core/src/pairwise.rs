//! All-pairs similarity and per-subject aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{align_distances, DistanceMatrix, Metric, ScoringParams};
use crate::embed::{check_uniform_dim, EmbeddedScanpath};
use crate::fmt::{round9, sig9};
use crate::model::parse_key;
use crate::{pgm, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Scanpath,
    Subject,
}

/// Symmetric matrix of normalized similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub keys: Vec<String>,
    values: Vec<f64>,
    pub level: Level,
    /// Match constant the similarities were computed with; the diagonal.
    pub c: f64,
    pub metric: Metric,
}

impl SimilarityMatrix {
    pub fn new(keys: Vec<String>, values: Vec<f64>, level: Level, c: f64, metric: Metric) -> Result<Self> {
        let n = keys.len();
        if values.len() != n * n {
            return Err(Error::BadMatrix(format!("{} values for {n} keys", values.len())));
        }
        let m = SimilarityMatrix {
            keys,
            values,
            level,
            c,
            metric,
        };
        for p in 0..n {
            for q in 0..n {
                if m.get(p, q) != m.get(q, p) {
                    return Err(Error::BadMatrix(format!("asymmetric at ({p}, {q})")));
                }
                if !m.get(p, q).is_finite() {
                    return Err(Error::BadMatrix(format!("non-finite value at ({p}, {q})")));
                }
            }
        }
        Ok(m)
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    /// The matrix as it reads back from its CSV/JSON artifacts: every value
    /// and `c` rounded to 9 significant digits.
    pub fn quantized(&self) -> Self {
        SimilarityMatrix {
            keys: self.keys.clone(),
            values: self.values.iter().map(|&v| round9(v)).collect(),
            level: self.level,
            c: round9(self.c),
            metric: self.metric,
        }
    }
}

/// Unordered pairs `(p, q)`, `p < q`, in row-major order.
fn pair_list(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|p| (p + 1..n).map(move |q| (p, q))).collect()
}

/// Similarity of every unordered scanpath pair, including pairs on different
/// stimuli. The diagonal is `c`.
///
/// Pairs are split into `workers` contiguous slices, each thread writing
/// its own slots, so the result is identical for any worker count.
pub fn all_pairs(scanpaths: &[EmbeddedScanpath], params: &ScoringParams, workers: usize) -> Result<SimilarityMatrix> {
    params.check()?;
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    check_uniform_dim(scanpaths)?;
    if let Some(e) = scanpaths.iter().find(|s| s.is_empty()) {
        return Err(Error::EmptyScanpath(e.key()));
    }
    let keys: Vec<String> = scanpaths.iter().map(EmbeddedScanpath::key).collect();
    let mut seen = BTreeSet::new();
    if let Some(dup) = keys.iter().find(|k| !seen.insert(k.as_str())) {
        return Err(Error::DuplicateKey(dup.clone()));
    }

    let pairs = pair_list(scanpaths.len());
    let mut slots = vec![0.0f64; pairs.len()];
    let compute = |(p, q): (usize, usize)| -> Result<f64> {
        let (a, b) = (&scanpaths[p], &scanpaths[q]);
        DistanceMatrix::compute(a, b, params.metric)
            .and_then(|d| align_distances(&d, params.c, params.gap))
            .map(|r| r.normalized)
            .map_err(|e| Error::Pair {
                a: a.key(),
                b: b.key(),
                source: Box::new(e),
            })
    };
    let fill = |chunk_pairs: &[(usize, usize)], chunk_slots: &mut [f64]| -> Result<()> {
        for (slot, &pair) in chunk_slots.iter_mut().zip(chunk_pairs) {
            *slot = compute(pair)?;
        }
        Ok(())
    };

    if workers == 1 || pairs.len() < 2 {
        fill(&pairs, &mut slots)?;
    } else {
        let chunk = pairs.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = pairs
                .chunks(chunk)
                .zip(slots.chunks_mut(chunk))
                .map(|(cp, cs)| scope.spawn(move || fill(cp, cs)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| Error::Internal("alignment worker panicked".into()))?)
                .collect::<Result<Vec<()>>>()
        })?;
    }

    let n = scanpaths.len();
    let mut values = vec![0.0f64; n * n];
    for p in 0..n {
        values[p * n + p] = params.c;
    }
    for (&(p, q), &v) in pairs.iter().zip(&slots) {
        values[p * n + q] = v;
        values[q * n + p] = v;
    }
    SimilarityMatrix::new(keys, values, Level::Scanpath, params.c, params.metric)
}

/// Mean of `values`, computed as `min + mean(v - min)` and clamped to
/// `[min, max]`: a set of identical values averages to exactly that value.
fn stable_mean(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread: f64 = values.iter().map(|v| v - lo).sum();
    (lo + spread / values.len() as f64).clamp(lo, hi)
}

/// Averages scanpath-level similarities into a subject-level matrix.
///
/// Entry `(s, t)` is the mean over the stimuli both subjects viewed of
/// `sim(s@i, t@i)`. Cross-stimulus entries never contribute. Subjects appear
/// in order of first occurrence in the keys.
pub fn aggregate_by_subject(m: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    if m.level != Level::Scanpath {
        return Err(Error::Config("aggregation needs a scanpath-level matrix".into()));
    }
    let mut subjects: Vec<String> = Vec::new();
    let mut by_subject: HashMap<String, BTreeMap<String, usize>> = HashMap::new();
    for (idx, key) in m.keys.iter().enumerate() {
        let (s, i) = parse_key(key).ok_or_else(|| Error::parse("similarity keys", format!("{key:?} is not subject@stimulus")))?;
        if !by_subject.contains_key(s) {
            subjects.push(s.to_string());
        }
        by_subject.entry(s.to_string()).or_default().insert(i.to_string(), idx);
    }

    let n = subjects.len();
    let mut values = vec![0.0f64; n * n];
    for a in 0..n {
        for b in a..n {
            let sa = &by_subject[&subjects[a]];
            let sb = &by_subject[&subjects[b]];
            let shared: Vec<f64> = sa
                .iter()
                .filter_map(|(stim, &p)| sb.get(stim).map(|&q| m.get(p, q)))
                .collect();
            if shared.is_empty() {
                return Err(Error::NoSharedStimuli(subjects[a].clone(), subjects[b].clone()));
            }
            let v = stable_mean(&shared);
            values[a * n + b] = v;
            values[b * n + a] = v;
        }
    }
    SimilarityMatrix::new(subjects, values, Level::Subject, m.c, m.metric)
}

/// Writes the matrix as CSV: a header row of keys, then one row per key.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &SimilarityMatrix) -> std::io::Result<()> {
    let mut header = String::from("key");
    for k in &m.keys {
        header.push(',');
        header.push_str(k);
    }
    writeln!(w, "{header}")?;
    for (p, k) in m.keys.iter().enumerate() {
        let row: Vec<String> = (0..m.len()).map(|q| sig9(m.get(p, q))).collect();
        writeln!(w, "{k},{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    level: Level,
    c: f64,
    metric: Metric,
    keys: Vec<String>,
}

fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("json")
}

/// Writes `<stem>.csv`, the `<stem>.json` sidecar, and, when `heatmap` is
/// given, a PGM heatmap.
pub fn export_matrix(m: &SimilarityMatrix, csv_path: &Path, heatmap: Option<&Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix_csv(&mut buf, m).map_err(|e| Error::io(csv_path, e))?;
    std::fs::write(csv_path, buf).map_err(|e| Error::io(csv_path, e))?;
    let sidecar = Sidecar {
        level: m.level,
        c: round9(m.c),
        metric: m.metric,
        keys: m.keys.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    let side = sidecar_path(csv_path);
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    if let Some(h) = heatmap {
        let (side, pixels) = heatmap_pixels(m);
        pgm::write(h, side, side, &pixels)?;
    }
    Ok(())
}

/// Renders the matrix as a square grayscale image.
///
/// Off-diagonal values map linearly from their minimum (black) to their
/// maximum (white); a constant off-diagonal renders mid-gray. Diagonal cells
/// are drawn at the off-diagonal maximum so self-similarity does not wash out
/// the contrast. Each cell is a square block of pixels.
pub fn heatmap_pixels(m: &SimilarityMatrix) -> (usize, Vec<u8>) {
    let n = m.len();
    let cell = 512usize.checked_div(n).unwrap_or(1).max(1);
    let side = n * cell;
    let off: Vec<f64> = (0..n)
        .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
        .map(|(p, q)| m.get(p, q))
        .collect();
    let lo = off.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = off.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shade = |v: f64| -> u8 {
        if off.is_empty() || hi <= lo {
            128
        } else {
            ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
        }
    };
    let mut pixels = vec![0u8; side * side];
    for p in 0..n {
        for q in 0..n {
            let g = if p == q { shade(hi) } else { shade(m.get(p, q)) };
            for y in p * cell..(p + 1) * cell {
                pixels[y * side + q * cell..y * side + (q + 1) * cell].fill(g);
            }
        }
    }
    (side, pixels)
}

/// Reads a matrix back from its CSV and sidecar.
pub fn load_matrix(csv_path: &Path) -> Result<SimilarityMatrix> {
    let ctx = csv_path.display().to_string();
    let text = std::fs::read_to_string(csv_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(csv_path.to_path_buf()),
        _ => Error::io(csv_path, e),
    })?;
    let side = sidecar_path(csv_path);
    let side_text = std::fs::read_to_string(&side).map_err(|_| Error::MissingFile(side.clone()))?;
    let sidecar: Sidecar =
        serde_json::from_str(&side_text).map_err(|e| Error::parse(side.display().to_string(), e.to_string()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::parse(&ctx, "empty file"))?.split(',').collect();
    let keys: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
    if keys != sidecar.keys {
        return Err(Error::parse(&ctx, "header keys differ from the sidecar"));
    }
    let mut values = Vec::with_capacity(keys.len() * keys.len());
    for (p, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != keys.len() + 1 || keys.get(p).map(String::as_str) != Some(cells[0]) {
            return Err(Error::parse(&ctx, format!("malformed row {}", p + 2)));
        }
        for c in &cells[1..] {
            values.push(c.parse::<f64>().map_err(|e| Error::parse(&ctx, e.to_string()))?);
        }
    }
    SimilarityMatrix::new(keys, values, sidecar.level, sidecar.c, sidecar.metric)
}
