//! Per-fixation feature vectors.
//!
//! An [`EmbeddingProvider`] turns the patches of a scanpath into vectors of a
//! fixed dimension. Two providers ship with the crate: the built-in
//! intensity/orientation descriptor and a loader for precomputed deep
//! features stored in `.dsem` files.
//!
//! `.dsem` layout, little-endian:
//!
//! | bytes | content                        |
//! |-------|--------------------------------|
//! | 0-3   | magic `DSEM`                   |
//! | 4-7   | `u32` version, always 1        |
//! | 8-11  | `u32` dimension D              |
//! | 12-15 | `u32` row count n              |
//! | 16-   | n x D `f32`, row i = fixation i |

use std::path::{Path, PathBuf};

use crate::model::{scanpath_key, Dataset, Group, Scanpath, StimulusImage};
use crate::patch::{extract_scanpath_patches, Patch, PatchConfig};
use crate::{Error, Result};

/// Output dimension of [`builtin_embed`].
pub const BUILTIN_DIM: usize = 384;
const BLOCK_GRID: usize = 16;
const CELL_GRID: usize = 4;
const ORIENTATION_BINS: usize = 8;

pub const DSEM_MAGIC: &[u8; 4] = b"DSEM";
pub const DSEM_VERSION: u32 = 1;
const DSEM_HEADER: usize = 16;

/// Feature vectors of one scanpath, one row per fixation, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedScanpath {
    pub subject_id: String,
    pub group: Group,
    pub stimulus_id: String,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddedScanpath {
    pub fn new(
        subject_id: impl Into<String>,
        group: Group,
        stimulus_id: impl Into<String>,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let sp = EmbeddedScanpath {
            subject_id: subject_id.into(),
            group,
            stimulus_id: stimulus_id.into(),
            dim,
            data,
        };
        if dim == 0 || !sp.data.len().is_multiple_of(dim) {
            return Err(Error::parse(
                sp.key(),
                format!("{} values do not form rows of dimension {dim}", sp.data.len()),
            ));
        }
        if let Some(bad) = sp.data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::parse(sp.key(), format!("feature value {bad} is not a finite non-negative number")));
        }
        Ok(sp)
    }

    /// Builds an embedded scanpath from one vector per fixation.
    pub fn from_rows(
        subject_id: impl Into<String>,
        group: Group,
        stimulus_id: impl Into<String>,
        rows: &[Vec<f32>],
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimMismatch(dim, r.len()));
        }
        Self::new(subject_id, group, stimulus_id, dim.max(1), rows.concat())
    }

    pub fn key(&self) -> String {
        scanpath_key(&self.subject_id, &self.stimulus_id)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of fixations.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// The first `n` fixations (all of them if `n >= len`).
    pub fn truncated(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.data.truncate(n.min(self.len()) * self.dim);
        out
    }

    /// Same scanpath with every component multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.subject_id.clone(),
            self.group,
            self.stimulus_id.clone(),
            self.dim,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Source of per-fixation feature vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Output dimension, when known before reading any data.
    fn dim(&self) -> Option<usize>;

    fn embed(&self, img: &StimulusImage, sp: &Scanpath, cfg: &PatchConfig) -> Result<EmbeddedScanpath>;
}

/// Deterministic 384-dimensional descriptor computed from the patch pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinProvider;

impl EmbeddingProvider for BuiltinProvider {
    fn name(&self) -> &str {
        "builtin"
    }

    fn dim(&self) -> Option<usize> {
        Some(BUILTIN_DIM)
    }

    fn embed(&self, img: &StimulusImage, sp: &Scanpath, cfg: &PatchConfig) -> Result<EmbeddedScanpath> {
        let patches = extract_scanpath_patches(img, sp, cfg)?;
        let mut data = Vec::with_capacity(patches.len() * BUILTIN_DIM);
        for p in &patches {
            data.extend(builtin_embed(p)?);
        }
        EmbeddedScanpath::new(sp.subject_id.clone(), sp.group, sp.stimulus_id.clone(), BUILTIN_DIM, data)
    }
}

/// Reads precomputed `<subject>_<stimulus>.dsem` files from a directory.
#[derive(Debug, Clone)]
pub struct DsemProvider {
    pub dir: PathBuf,
}

impl EmbeddingProvider for DsemProvider {
    fn name(&self) -> &str {
        "dsem"
    }

    fn dim(&self) -> Option<usize> {
        None
    }

    fn embed(&self, _img: &StimulusImage, sp: &Scanpath, _cfg: &PatchConfig) -> Result<EmbeddedScanpath> {
        load_embeddings(&self.dir, sp)
    }
}

/// Block boundaries splitting `size` pixels into `parts` nearly equal runs.
fn bounds(size: usize, parts: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..parts).map(move |b| (b * size / parts, (b + 1) * size / parts))
}

/// The built-in patch descriptor.
///
/// The first 256 components are the mean intensities of a 16x16 grid of
/// blocks. The remaining 128 are 8-bin unsigned gradient-orientation
/// histograms over a 4x4 grid of cells, magnitude weighted and scaled so each
/// cell's bins sum to 255 (cells without gradient stay zero). Gradients use
/// central differences inside the patch and one-sided differences on its
/// edges; bin `k` covers `[22.5k, 22.5(k+1))` degrees.
pub fn builtin_embed(p: &Patch) -> Result<Vec<f32>> {
    let s = p.size;
    if s < BLOCK_GRID || p.pixels.len() != s * s {
        return Err(Error::BadPatchSize {
            size: s,
            message: format!("built-in descriptor needs a square patch of side >= {BLOCK_GRID}"),
        });
    }
    let mut out = Vec::with_capacity(BUILTIN_DIM);

    for (y0, y1) in bounds(s, BLOCK_GRID) {
        for (x0, x1) in bounds(s, BLOCK_GRID) {
            let mut sum = 0u64;
            for y in y0..y1 {
                sum += p.pixels[y * s + x0..y * s + x1].iter().map(|&v| v as u64).sum::<u64>();
            }
            out.push((sum as f64 / ((y1 - y0) * (x1 - x0)) as f64) as f32);
        }
    }

    for (y0, y1) in bounds(s, CELL_GRID) {
        for (x0, x1) in bounds(s, CELL_GRID) {
            let mut hist = [0f64; ORIENTATION_BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    let (gx, gy) = gradient(p, x, y);
                    if gx == 0.0 && gy == 0.0 {
                        continue;
                    }
                    hist[orientation_bin(gx, gy)] += gx.hypot(gy);
                }
            }
            let total: f64 = hist.iter().sum();
            out.extend(hist.iter().map(|&h| if total > 0.0 { (h * 255.0 / total) as f32 } else { 0.0 }));
        }
    }
    debug_assert_eq!(out.len(), BUILTIN_DIM);
    Ok(out)
}

fn gradient(p: &Patch, x: usize, y: usize) -> (f64, f64) {
    let last = p.size - 1;
    let v = |x: usize, y: usize| p.pixel(x, y) as f64;
    let gx = match x {
        0 => v(1, y) - v(0, y),
        _ if x == last => v(last, y) - v(last - 1, y),
        _ => (v(x + 1, y) - v(x - 1, y)) / 2.0,
    };
    let gy = match y {
        0 => v(x, 1) - v(x, 0),
        _ if y == last => v(x, last) - v(x, last - 1),
        _ => (v(x, y + 1) - v(x, y - 1)) / 2.0,
    };
    (gx, gy)
}

fn orientation_bin(gx: f64, gy: f64) -> usize {
    let mut deg = gy.atan2(gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    ((deg / (180.0 / ORIENTATION_BINS as f64)) as usize).min(ORIENTATION_BINS - 1)
}

pub fn dsem_file_name(subject_id: &str, stimulus_id: &str) -> String {
    format!("{subject_id}_{stimulus_id}.dsem")
}

pub fn encode_dsem(dim: usize, rows: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), dim * rows, "row data size");
    let mut out = Vec::with_capacity(DSEM_HEADER + data.len() * 4);
    out.extend_from_slice(DSEM_MAGIC);
    out.extend_from_slice(&DSEM_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a `.dsem` buffer into `(dim, rows, data)`.
pub fn decode_dsem(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f32>), String> {
    if bytes.len() < DSEM_HEADER {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[0..4] != DSEM_MAGIC {
        return Err("bad magic".into());
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != DSEM_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let dim = word(8) as usize;
    let rows = word(12) as usize;
    if dim == 0 {
        return Err("dimension is zero".into());
    }
    let expected = dim
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(4))
        .ok_or("header overflows")?;
    let body = &bytes[DSEM_HEADER..];
    if body.len() != expected {
        return Err(format!("body has {} bytes, header implies {expected}", body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dim, rows, data))
}

pub fn write_dsem(path: &Path, sp: &EmbeddedScanpath) -> Result<()> {
    std::fs::write(path, encode_dsem(sp.dim(), sp.len(), sp.as_flat())).map_err(|e| Error::io(path, e))
}

/// Writes every embedded scanpath as `<subject>_<stimulus>.dsem` under `dir`.
pub fn write_embeddings(dir: &Path, scanpaths: &[EmbeddedScanpath]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for sp in scanpaths {
        write_dsem(&dir.join(dsem_file_name(&sp.subject_id, &sp.stimulus_id)), sp)?;
    }
    Ok(())
}

/// Loads the precomputed embedding of `sp` from `dir`.
pub fn load_embeddings(dir: &Path, sp: &Scanpath) -> Result<EmbeddedScanpath> {
    let path = dir.join(dsem_file_name(&sp.subject_id, &sp.stimulus_id));
    let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingEmbedding(path.clone()),
        _ => Error::io(&path, e),
    })?;
    let corrupt = |message: String| Error::CorruptFile {
        path: path.clone(),
        message,
    };
    let (dim, rows, data) = decode_dsem(&bytes).map_err(corrupt)?;
    if rows != sp.len() {
        return Err(Error::HeaderMismatch {
            path,
            rows,
            fixations: sp.len(),
        });
    }
    if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(corrupt(format!("feature value {v} is not a finite non-negative number")));
    }
    EmbeddedScanpath::new(sp.subject_id.clone(), sp.group, sp.stimulus_id.clone(), dim, data)
}

/// Checks that all embedded scanpaths share one dimension.
pub fn check_uniform_dim(scanpaths: &[EmbeddedScanpath]) -> Result<Option<usize>> {
    let Some(first) = scanpaths.first() else {
        return Ok(None);
    };
    for sp in &scanpaths[1..] {
        if sp.dim() != first.dim() {
            return Err(Error::MixedDim {
                first: first.dim(),
                second: sp.dim(),
                key: sp.key(),
            });
        }
    }
    Ok(Some(first.dim()))
}

/// Embeds every scanpath of the dataset with one provider.
pub fn embed_dataset(
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    cfg: &PatchConfig,
) -> Result<Vec<EmbeddedScanpath>> {
    let out = dataset
        .scanpaths
        .iter()
        .map(|sp| {
            let img = dataset.stimuli.get(&sp.stimulus_id).ok_or_else(|| Error::UnknownStimulus {
                key: sp.key(),
                stimulus: sp.stimulus_id.clone(),
            })?;
            provider.embed(img, sp, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    check_uniform_dim(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Fixation;

    fn patch_from(size: usize, f: impl Fn(usize, usize) -> u8) -> Patch {
        let mut pixels = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                pixels.push(f(x, y));
            }
        }
        Patch {
            size,
            pixels,
            origin_x: 0,
            origin_y: 0,
            fixation_index: 0,
        }
    }

    #[test]
    fn constant_patch_has_flat_blocks_and_no_gradient() {
        let v = builtin_embed(&patch_from(100, |_, _| 128)).unwrap();
        assert_eq!(v.len(), BUILTIN_DIM);
        assert!(v[..256].iter().all(|&x| x == 128.0));
        assert!(v[256..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn black_patch_is_the_zero_vector() {
        let v = builtin_embed(&patch_from(100, |_, _| 0)).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn horizontal_edge_lands_in_the_vertical_bin() {
        let v = builtin_embed(&patch_from(32, |_, y| if y < 16 { 10 } else { 200 })).unwrap();
        // 90 degrees -> bin 4, in the cell rows that see the edge (rows 1 and 2)
        for cell_row in 0..4 {
            for cell_col in 0..4 {
                let hist = &v[256 + (cell_row * 4 + cell_col) * 8..][..8];
                if cell_row == 1 || cell_row == 2 {
                    assert_eq!(hist[4], 255.0);
                } else {
                    assert!(hist.iter().all(|&h| h == 0.0));
                }
            }
        }
    }

    #[test]
    fn small_patches_are_rejected() {
        assert!(matches!(
            builtin_embed(&patch_from(8, |_, _| 1)),
            Err(Error::BadPatchSize { .. })
        ));
    }

    #[test]
    fn orientation_bins_are_unsigned() {
        assert_eq!(orientation_bin(1.0, 0.0), 0);
        assert_eq!(orientation_bin(-1.0, 0.0), 0);
        assert_eq!(orientation_bin(0.0, 1.0), 4);
        assert_eq!(orientation_bin(0.0, -1.0), 4);
        assert_eq!(orientation_bin(1.0, 1.0), 2);
        assert_eq!(orientation_bin(-1.0, -1.0), 2);
        assert_eq!(orientation_bin(-1.0, 1.0), 6);
    }

    #[test]
    fn dsem_rejects_damaged_buffers() {
        let good = encode_dsem(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(decode_dsem(&good).unwrap(), (2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        assert!(decode_dsem(&good[..good.len() - 1]).is_err());
        assert!(decode_dsem(&good[..10]).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_dsem(&bad_magic).is_err());
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(decode_dsem(&bad_version).is_err());
        let mut extra = good;
        extra.push(0);
        assert!(decode_dsem(&extra).is_err());
    }

    #[test]
    fn dsem_header_is_little_endian() {
        let bytes = encode_dsem(25_088, 3, &vec![0.5; 25_088 * 3]);
        assert_eq!(&bytes[..4], b"DSEM");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &25_088u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &[3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 25_088 * 3 * 4);
    }

    fn scanpath(n: usize) -> Scanpath {
        let fixations = (0..n)
            .map(|i| Fixation {
                index: i,
                x: 1.0,
                y: 1.0,
                start_ms: i as f64,
                duration_ms: 1.0,
            })
            .collect();
        Scanpath::new("s1", Group::Expert, "i1", fixations, None).unwrap()
    }

    #[test]
    fn load_embeddings_checks_rows_and_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1_i1.dsem");
        let d = 25_088;
        std::fs::write(&path, encode_dsem(d, 3, &vec![0.25; d * 3])).unwrap();
        let e = load_embeddings(dir.path(), &scanpath(3)).unwrap();
        assert_eq!((e.len(), e.dim()), (3, d));

        std::fs::write(&path, encode_dsem(d, 2, &vec![0.25; d * 2])).unwrap();
        assert!(matches!(
            load_embeddings(dir.path(), &scanpath(3)),
            Err(Error::HeaderMismatch { rows: 2, fixations: 3, .. })
        ));

        let mut bytes = encode_dsem(4, 3, &[1.0; 12]);
        bytes.truncate(bytes.len() - 6);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_embeddings(dir.path(), &scanpath(3)), Err(Error::CorruptFile { .. })));

        std::fs::write(&path, encode_dsem(1, 3, &[1.0, f32::NAN, 0.0])).unwrap();
        assert!(matches!(load_embeddings(dir.path(), &scanpath(3)), Err(Error::CorruptFile { .. })));

        std::fs::remove_file(&path).unwrap();
        assert!(matches!(load_embeddings(dir.path(), &scanpath(3)), Err(Error::MissingEmbedding(_))));
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let a = EmbeddedScanpath::new("a", Group::Expert, "i", 384, vec![0.0; 384]).unwrap();
        let b = EmbeddedScanpath::new("b", Group::Expert, "i", 25_088, vec![0.0; 25_088]).unwrap();
        assert!(matches!(check_uniform_dim(&[a.clone(), b]), Err(Error::MixedDim { .. })));
        assert_eq!(check_uniform_dim(&[a]).unwrap(), Some(384));
        assert_eq!(check_uniform_dim(&[]).unwrap(), None);
    }
}
