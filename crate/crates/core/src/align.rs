//! Local alignment of scanpaths whose symbols are feature vectors.
//!
//! The score matrix `M` has one row per fixation of `A` plus a zero row, and
//! one column per fixation of `B` plus a zero column:
//!
//! ```text
//! M[i][j] = max( M[i-1][j-1] + (c - d(A_i, B_j)),   match
//!                M[i-1][j]   - gap,                 gap in B (A_i skipped)
//!                M[i][j-1]   - gap,                 gap in A (B_j skipped)
//!                0 )
//! ```
//!
//! The similarity of two scanpaths is `max(M) / min(|A|, |B|)`. Feature
//! distances are computed once into a [`DistanceMatrix`]; the DP only reads
//! from it, so a distance matrix can be reused across `(c, gap)` sweeps.

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddedScanpath;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    L1,
    L2,
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    /// Match constant, in units of the feature distance.
    pub c: f64,
    /// Linear gap penalty.
    pub gap: f64,
    pub metric: Metric,
}

impl ScoringParams {
    pub fn new(c: f64, gap: f64, metric: Metric) -> Result<Self> {
        let p = ScoringParams { c, gap, metric };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::Config(format!("c must be finite and >= 0, got {}", self.c)));
        }
        if !(self.gap.is_finite() && self.gap >= 0.0) {
            return Err(Error::Config(format!("gap must be finite and >= 0, got {}", self.gap)));
        }
        Ok(())
    }
}

/// Distance between two feature vectors.
///
/// Components are widened to `f64` and accumulated left to right, so the
/// result does not depend on how the caller schedules work.
pub fn feature_distance(u: &[f32], v: &[f32], metric: Metric) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch(u.len(), v.len()));
    }
    Ok(match metric {
        Metric::L1 => u
            .iter()
            .zip(v)
            .fold(0.0, |acc, (&a, &b)| acc + (a as f64 - b as f64).abs()),
        Metric::L2 => u
            .iter()
            .zip(v)
            .fold(0.0, |acc, (&a, &b)| {
                let d = a as f64 - b as f64;
                acc + d * d
            })
            .sqrt(),
        Metric::Cosine => {
            let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
            for (&a, &b) in u.iter().zip(v) {
                let (a, b) = (a as f64, b as f64);
                dot += a * b;
                nu += a * a;
                nv += b * b;
            }
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::ZeroVector);
            }
            (1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0)
        }
    })
}

/// Row-major `rows x cols` matrix of patch distances, rows indexing `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimMismatch(rows * cols, values.len()));
        }
        Ok(DistanceMatrix { rows, cols, values })
    }

    pub fn compute(a: &EmbeddedScanpath, b: &EmbeddedScanpath, metric: Metric) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimMismatch(a.dim(), b.dim()));
        }
        let mut values = Vec::with_capacity(a.len() * b.len());
        for u in a.vectors() {
            for v in b.vectors() {
                values.push(feature_distance(u, v, metric)?);
            }
        }
        Ok(DistanceMatrix {
            rows: a.len(),
            cols: b.len(),
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        DistanceMatrix {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }
}

/// Which predecessor produced a score-matrix cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Move {
    Stop,
    Match,
    GapInB,
    GapInA,
}

/// One step of a local alignment. Indices are 0-based fixation positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    /// Fixation `a` of A aligned with fixation `b` of B.
    Match { a: usize, b: usize },
    /// Fixation `b` of B aligned against a gap inserted in A.
    GapInA { b: usize },
    /// Fixation `a` of A aligned against a gap inserted in B.
    GapInB { a: usize },
}

/// The filled `(n+1) x (m+1)` score matrix together with the move that
/// produced each cell.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    moves: Vec<Move>,
    argmax: (usize, usize),
}

impl ScoreMatrix {
    /// Fills the matrix for `n x m` symbols with the given per-pair match
    /// score and linear gap penalty.
    ///
    /// On equal candidates the move is chosen Match, then GapInB, then GapInA.
    /// The argmax is the first maximal cell in row-major order.
    pub fn fill(n: usize, m: usize, gap: f64, match_score: impl Fn(usize, usize) -> f64) -> Self {
        let cols = m + 1;
        let mut values = vec![0.0f64; (n + 1) * cols];
        let mut moves = vec![Move::Stop; (n + 1) * cols];
        let mut best = 0.0f64;
        let mut argmax = (0, 0);
        for i in 1..=n {
            for j in 1..=m {
                let diag = values[(i - 1) * cols + j - 1] + match_score(i - 1, j - 1);
                let up = values[(i - 1) * cols + j] - gap;
                let left = values[i * cols + j - 1] - gap;
                let (mut v, mut mv) = (diag, Move::Match);
                if up > v {
                    (v, mv) = (up, Move::GapInB);
                }
                if left > v {
                    (v, mv) = (left, Move::GapInA);
                }
                if v <= 0.0 {
                    (v, mv) = (0.0, Move::Stop);
                }
                values[i * cols + j] = v;
                moves[i * cols + j] = mv;
                if v > best {
                    best = v;
                    argmax = (i, j);
                }
            }
        }
        ScoreMatrix {
            rows: n + 1,
            cols,
            values,
            moves,
            argmax,
        }
    }

    pub fn from_distances(d: &DistanceMatrix, c: f64, gap: f64) -> Self {
        Self::fill(d.rows(), d.cols(), gap, |i, j| c - d.get(i, j))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn argmax(&self) -> (usize, usize) {
        self.argmax
    }

    pub fn max(&self) -> f64 {
        self.get(self.argmax.0, self.argmax.1)
    }

    /// Follows the stored moves from the argmax back to the first zero cell.
    /// Steps are returned in forward order, ending at the argmax cell.
    pub fn backtrace(&self) -> Vec<Step> {
        let (mut i, mut j) = self.argmax;
        let mut path = Vec::new();
        while i > 0 && j > 0 && self.get(i, j) > 0.0 {
            match self.moves[i * self.cols + j] {
                Move::Match => {
                    path.push(Step::Match { a: i - 1, b: j - 1 });
                    i -= 1;
                    j -= 1;
                }
                Move::GapInB => {
                    path.push(Step::GapInB { a: i - 1 });
                    i -= 1;
                }
                Move::GapInA => {
                    path.push(Step::GapInA { b: j - 1 });
                    j -= 1;
                }
                Move::Stop => break,
            }
        }
        path.reverse();
        path
    }

    /// The matrix as CSV rows, for inspection or heatmap export.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| crate::fmt::sig9(self.get(i, j))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Outcome of one local alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// `max(M)`.
    pub score: f64,
    /// Score divided by the shorter sequence length.
    pub normalized: f64,
    /// Cell `(i, j)` holding the maximum, in score-matrix coordinates.
    pub argmax: (usize, usize),
    pub path: Vec<Step>,
}

/// Re-accumulates the score of a path with the same operations the DP uses.
pub fn replay(path: &[Step], gap: f64, match_score: impl Fn(usize, usize) -> f64) -> f64 {
    path.iter().fold(0.0, |s, step| match *step {
        Step::Match { a, b } => s + match_score(a, b),
        Step::GapInA { .. } | Step::GapInB { .. } => s - gap,
    })
}

/// Normalized similarity computed from the decomposition of the optimal path:
/// `c * k / L - (sum of matched distances + g * gap) / L` for `k` matches and
/// `g` gaps. Algebraically equal to `score / L`, but a self-alignment (all
/// distances zero, `k = L`) yields exactly `c`, which repeated floating-point
/// addition of `c` does not guarantee.
fn normalize_path(path: &[Step], d: &DistanceMatrix, c: f64, gap: f64, shorter: usize) -> f64 {
    if path.is_empty() {
        return 0.0;
    }
    let mut matches = 0usize;
    let mut gaps = 0usize;
    let mut cost = 0.0f64;
    for step in path {
        match *step {
            Step::Match { a, b } => {
                matches += 1;
                cost += d.get(a, b);
            }
            _ => gaps += 1,
        }
    }
    let len = shorter as f64;
    let value = c * (matches as f64 / len) - (cost + gaps as f64 * gap) / len;
    value.clamp(0.0, c)
}

/// Aligns two sequences given their precomputed distance matrix.
pub fn align_distances(d: &DistanceMatrix, c: f64, gap: f64) -> Result<AlignmentResult> {
    let shorter = d.rows().min(d.cols());
    if shorter == 0 {
        return Err(Error::EmptyScanpath(format!("{}x{} distance matrix", d.rows(), d.cols())));
    }
    let m = ScoreMatrix::from_distances(d, c, gap);
    let path = m.backtrace();
    Ok(AlignmentResult {
        score: m.max(),
        normalized: normalize_path(&path, d, c, gap, shorter),
        argmax: m.argmax(),
        path,
    })
}

/// Feature-distance local alignment of two embedded scanpaths.
pub fn local_align(a: &EmbeddedScanpath, b: &EmbeddedScanpath, params: &ScoringParams) -> Result<AlignmentResult> {
    params.check()?;
    for sp in [a, b] {
        if sp.is_empty() {
            return Err(Error::EmptyScanpath(sp.key()));
        }
    }
    let d = DistanceMatrix::compute(a, b, params.metric)?;
    align_distances(&d, params.c, params.gap)
}

/// Like [`local_align`] but also returns the score matrix, for dumps.
pub fn local_align_with_matrix(
    a: &EmbeddedScanpath,
    b: &EmbeddedScanpath,
    params: &ScoringParams,
) -> Result<(AlignmentResult, ScoreMatrix)> {
    let result = local_align(a, b, params)?;
    let d = DistanceMatrix::compute(a, b, params.metric)?;
    Ok((result, ScoreMatrix::from_distances(&d, params.c, params.gap)))
}

/// Mean cross-scanpath fixation distance over all unordered scanpath pairs.
///
/// Every fixation of one scanpath is compared with every fixation of the
/// other; pairs inside the same scanpath do not contribute. All scanpaths
/// must be on the same stimulus.
pub fn calibrate_c(scanpaths: &[EmbeddedScanpath], metric: Metric) -> Result<f64> {
    if scanpaths.len() < 2 {
        return Err(Error::TooFewScanpaths(scanpaths.len()));
    }
    let stimulus = &scanpaths[0].stimulus_id;
    if let Some(other) = scanpaths.iter().find(|s| &s.stimulus_id != stimulus) {
        return Err(Error::Config(format!(
            "calibration scanpaths must share one stimulus, found {stimulus} and {}",
            other.stimulus_id
        )));
    }
    let mut sum = 0.0f64;
    let mut count = 0u64;
    for (p, sp) in scanpaths.iter().enumerate() {
        for sq in &scanpaths[p + 1..] {
            if sp.dim() != sq.dim() {
                return Err(Error::DimMismatch(sp.dim(), sq.dim()));
            }
            for u in sp.vectors() {
                for v in sq.vectors() {
                    sum += feature_distance(u, v, metric)?;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyScanpath(format!("calibration set on {stimulus}")));
    }
    Ok(sum / count as f64)
}

/// Default gap penalty: twice the match constant.
pub fn default_gap(c: f64) -> f64 {
    2.0 * c
}

pub const SYMBOLIC_MATCH: f64 = 1.0;
pub const SYMBOLIC_MISMATCH: f64 = -1.0;
pub const SYMBOLIC_GAP: f64 = 2.0;

/// Classic Smith-Waterman on label sequences: +1 match, -1 mismatch, -2 gap.
pub fn symbolic_align<T: PartialEq>(a: &[T], b: &[T]) -> Result<AlignmentResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyScanpath("label sequence".into()));
    }
    let score = |i: usize, j: usize| if a[i] == b[j] { SYMBOLIC_MATCH } else { SYMBOLIC_MISMATCH };
    let m = ScoreMatrix::fill(a.len(), b.len(), SYMBOLIC_GAP, score);
    Ok(AlignmentResult {
        score: m.max(),
        normalized: m.max() / a.len().min(b.len()) as f64,
        argmax: m.argmax(),
        path: m.backtrace(),
    })
}
