//! Synthetic labelled datasets.
//!
//! Each stimulus carries `2 * n_prototypes` anchor points laid out on a
//! jittered grid; half belong to the expert group and half to the student
//! group. Around every anchor a windowed grating is painted whose
//! orientation, period and contrast depend only on the (group, slot) class,
//! so the same class looks alike on every stimulus. A group visits its slots
//! in a fixed cyclic order starting at a random slot; fixations land at the
//! anchor plus Gaussian noise and adjacent fixations are swapped with
//! probability `swap_prob`.
//!
//! Randomness comes from ChaCha8 seeded with `seed`, one stream per purpose:
//! stream 0 for the anchor layout, stream 1 for the texture classes, stream 2
//! for the background, and stream `16 + subject * n_stimuli + stimulus` for
//! each scanpath. Uniform draws take the top 53 bits of `next_u64`, Gaussian
//! draws use Box-Muller on two uniforms.

use std::f64::consts::PI;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::model::{DatasetManifest, Dataset, Fixation, Group, Scanpath, StimulusEntry, StimulusImage};
use crate::{pgm, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_experts: usize,
    pub n_students: usize,
    pub n_stimuli: usize,
    /// `(width, height)` in pixels.
    pub image_size: (usize, usize),
    /// Inclusive fixation-count range.
    pub len_expert: (usize, usize),
    pub len_student: (usize, usize),
    /// Anchor points per group per stimulus.
    pub n_prototypes: usize,
    /// Standard deviation of the fixation noise.
    pub jitter_px: f64,
    pub swap_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_experts: 12,
            n_students: 24,
            n_stimuli: 6,
            image_size: (800, 600),
            len_expert: (8, 12),
            len_student: (10, 16),
            n_prototypes: 6,
            jitter_px: 8.0,
            swap_prob: 0.1,
        }
    }
}

const MIN_SIDE: usize = 64;

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_experts == 0 || self.n_students == 0 || self.n_stimuli == 0 || self.n_prototypes == 0 {
            return fail("subject, stimulus and prototype counts must be at least 1".into());
        }
        for (name, (lo, hi)) in [("len_expert", self.len_expert), ("len_student", self.len_student)] {
            if lo == 0 || lo > hi {
                return fail(format!("{name} must be a range 1 <= min <= max, got {lo}..={hi}"));
            }
        }
        if !(self.jitter_px.is_finite() && self.jitter_px >= 0.0) {
            return fail(format!("jitter_px must be finite and >= 0, got {}", self.jitter_px));
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return fail(format!("swap_prob must lie in [0, 1], got {}", self.swap_prob));
        }
        let (w, h) = self.image_size;
        if w < MIN_SIDE || h < MIN_SIDE {
            return fail(format!("image_size must be at least {MIN_SIDE}x{MIN_SIDE}, got {w}x{h}"));
        }
        let (cols, rows) = grid_shape(2 * self.n_prototypes, w, h);
        if w / cols < 8 || h / rows < 8 {
            return fail(format!("{} anchors do not fit a {w}x{h} image", 2 * self.n_prototypes));
        }
        Ok(())
    }
}

struct Rng(ChaCha8Rng);

impl Rng {
    fn new(seed: u64, stream: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        Rng(r)
    }

    /// Uniform in `[0, 1)`.
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `lo..=hi`.
    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + ((self.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
    }

    fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            v.swap(i, self.range(0, i));
        }
    }
}

/// Smallest grid with at least `cells` cells whose shape follows the image
/// aspect ratio.
fn grid_shape(cells: usize, w: usize, h: usize) -> (usize, usize) {
    let aspect = w as f64 / h as f64;
    let mut cols = ((cells as f64 * aspect).sqrt().ceil() as usize).max(1);
    let mut rows = cells.div_ceil(cols);
    while cols > 1 && (cols - 1) * rows >= cells {
        cols -= 1;
    }
    rows = cells.div_ceil(cols);
    (cols, rows)
}

/// Appearance of one (group, slot) class.
#[derive(Debug, Clone, Copy)]
struct TextureClass {
    angle: f64,
    period: f64,
    contrast: f64,
    offset: f64,
}

fn texture_classes(cfg: &SynthConfig) -> Vec<TextureClass> {
    let mut rng = Rng::new(cfg.seed, 1);
    let total = 2 * cfg.n_prototypes;
    (0..total)
        .map(|k| TextureClass {
            angle: (k as f64 + 0.5 * rng.uniform()) * PI / total as f64,
            period: 5.0 + 10.0 * rng.uniform(),
            contrast: 45.0 + 35.0 * rng.uniform(),
            offset: if k % 2 == 0 { 1.0 } else { -1.0 } * (20.0 + 30.0 * rng.uniform()),
        })
        .collect()
}

/// Anchor positions of one stimulus: `[group][slot] -> (x, y)`, expert first.
fn layout(cfg: &SynthConfig, rng: &mut Rng) -> [Vec<(f64, f64)>; 2] {
    let (w, h) = cfg.image_size;
    let n = cfg.n_prototypes;
    let (cols, rows) = grid_shape(2 * n, w, h);
    let (cw, ch) = (w as f64 / cols as f64, h as f64 / rows as f64);
    let mut cells: Vec<usize> = (0..cols * rows).collect();
    rng.shuffle(&mut cells);
    let mut anchors: Vec<(f64, f64)> = cells[..2 * n]
        .iter()
        .map(|&c| {
            let (gx, gy) = ((c % cols) as f64, (c / cols) as f64);
            let x = (gx + 0.5 + (rng.uniform() - 0.5) / 3.0) * cw;
            let y = (gy + 0.5 + (rng.uniform() - 0.5) / 3.0) * ch;
            (x.floor(), y.floor())
        })
        .collect();
    let students = anchors.split_off(n);
    [anchors, students]
}

/// Smooth background: bilinear interpolation of a coarse random grid.
fn background(cfg: &SynthConfig, rng: &mut Rng) -> Vec<f64> {
    let (w, h) = cfg.image_size;
    let (gw, gh) = (w.div_ceil(100) + 1, h.div_ceil(100) + 1);
    let grid: Vec<f64> = (0..gw * gh).map(|_| 100.0 + 40.0 * rng.uniform()).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let fy = y as f64 / 100.0;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / 100.0;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |i: usize, j: usize| grid[j.min(gh - 1) * gw + i.min(gw - 1)];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

const SIGMA: f64 = 24.0;
const REACH: f64 = 3.0 * SIGMA;

fn render(cfg: &SynthConfig, rng: &mut Rng, anchors: &[Vec<(f64, f64)>; 2], classes: &[TextureClass]) -> Vec<u8> {
    let (w, h) = cfg.image_size;
    let mut img = background(cfg, rng);
    for (g, group) in anchors.iter().enumerate() {
        for (slot, &(ax, ay)) in group.iter().enumerate() {
            let t = classes[g * cfg.n_prototypes + slot];
            let (ca, sa) = (t.angle.cos(), t.angle.sin());
            let x0 = (ax - REACH).max(0.0) as usize;
            let x1 = ((ax + REACH) as usize).min(w - 1);
            let y0 = (ay - REACH).max(0.0) as usize;
            let y1 = ((ay + REACH) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dx, dy) = (x as f64 - ax, y as f64 - ay);
                    let win = (-(dx * dx + dy * dy) / (2.0 * SIGMA * SIGMA)).exp();
                    let phase = 2.0 * PI * (dx * ca + dy * sa) / t.period;
                    img[y * w + x] += win * (t.offset + t.contrast * phase.cos());
                }
            }
        }
    }
    img.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

/// Subject id, zero-padded so lexicographic order matches numeric order.
fn subject_id(prefix: char, i: usize, count: usize) -> String {
    let width = count.to_string().len().max(2);
    format!("{prefix}{:0width$}", i + 1)
}

pub fn stimulus_id(i: usize) -> String {
    format!("img{}", i + 1)
}

fn to_centi(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[allow(clippy::too_many_arguments)]
fn scanpath(
    cfg: &SynthConfig,
    rng: &mut Rng,
    subject: &str,
    group: Group,
    stimulus: &str,
    anchors: &[(f64, f64)],
    order: &[usize],
    len: (usize, usize),
) -> Result<Scanpath> {
    let (w, h) = cfg.image_size;
    let n = rng.range(len.0, len.1);
    let start = rng.range(0, order.len() - 1);
    let mut slots: Vec<usize> = (0..n).map(|i| order[(start + i) % order.len()]).collect();
    for i in 0..n.saturating_sub(1) {
        if rng.uniform() < cfg.swap_prob {
            slots.swap(i, i + 1);
        }
    }
    let prefix = if group == Group::Expert { 'E' } else { 'S' };
    let mut t = 0.0;
    let mut fixations = Vec::with_capacity(n);
    for (index, &slot) in slots.iter().enumerate() {
        let (ax, ay) = anchors[slot];
        let x = (ax + cfg.jitter_px * rng.gaussian()).clamp(0.0, (w - 1) as f64);
        let y = (ay + cfg.jitter_px * rng.gaussian()).clamp(0.0, (h - 1) as f64);
        let duration = (150 + rng.range(0, 250)) as f64;
        fixations.push(Fixation {
            index,
            x: to_centi(x),
            y: to_centi(y),
            start_ms: t,
            duration_ms: duration,
        });
        t += duration + 30.0;
    }
    let labels = slots.iter().map(|s| format!("{prefix}{}", s + 1)).collect();
    Scanpath::new(subject, group, stimulus, fixations, Some(labels))
}

/// Generates the full dataset. Scanpaths are ordered by subject (experts
/// first) and then by stimulus.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.check()?;
    let classes = texture_classes(cfg);
    let mut layout_rng = Rng::new(cfg.seed, 0);
    let anchors: Vec<[Vec<(f64, f64)>; 2]> = (0..cfg.n_stimuli).map(|_| layout(cfg, &mut layout_rng)).collect();

    // Fixed visiting order per group: experts sweep their slots in index
    // order, students in a seeded permutation.
    let expert_order: Vec<usize> = (0..cfg.n_prototypes).collect();
    let mut student_order = expert_order.clone();
    layout_rng.shuffle(&mut student_order);

    let mut background_rng = Rng::new(cfg.seed, 2);
    let mut stimuli = std::collections::BTreeMap::new();
    for (i, a) in anchors.iter().enumerate() {
        let id = stimulus_id(i);
        let (w, h) = cfg.image_size;
        let pixels = render(cfg, &mut background_rng, a, &classes);
        stimuli.insert(id.clone(), StimulusImage::new(id, w, h, pixels)?);
    }

    let subjects = (0..cfg.n_experts)
        .map(|i| (subject_id('e', i, cfg.n_experts), Group::Expert))
        .chain((0..cfg.n_students).map(|i| (subject_id('s', i, cfg.n_students), Group::Student)));
    let mut scanpaths = Vec::new();
    for (si, (subject, group)) in subjects.enumerate() {
        let (g, order, len) = match group {
            Group::Expert => (0, &expert_order, cfg.len_expert),
            _ => (1, &student_order, cfg.len_student),
        };
        for (ii, a) in anchors.iter().enumerate() {
            let mut rng = Rng::new(cfg.seed, 16 + (si * cfg.n_stimuli + ii) as u64);
            scanpaths.push(scanpath(cfg, &mut rng, &subject, group, &stimulus_id(ii), &a[g], order, len)?);
        }
    }
    let dataset = Dataset { stimuli, scanpaths };
    dataset.check_bounds()?;
    Ok(dataset)
}

/// Writes `stimuli/<id>.pgm`, `scanpaths/<subject>.csv` and `manifest.json`
/// under `dir` and returns the manifest.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetManifest> {
    let stim_dir = dir.join("stimuli");
    let sp_dir = dir.join("scanpaths");
    for d in [&stim_dir, &sp_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut stimuli = Vec::new();
    for (id, img) in &dataset.stimuli {
        let path = stim_dir.join(format!("{id}.pgm"));
        pgm::write(&path, img.width, img.height, &img.pixels)?;
        stimuli.push(StimulusEntry { id: id.clone(), image: path });
    }
    let mut scanpath_files = Vec::new();
    let mut by_subject: Vec<(&str, Vec<Scanpath>)> = Vec::new();
    for sp in &dataset.scanpaths {
        match by_subject.last_mut() {
            Some((s, v)) if *s == sp.subject_id => v.push(sp.clone()),
            _ => by_subject.push((&sp.subject_id, vec![sp.clone()])),
        }
    }
    for (subject, sps) in by_subject {
        let path = sp_dir.join(format!("{subject}.csv"));
        crate::model::save_scanpaths(&path, &sps)?;
        scanpath_files.push(path);
    }
    let manifest = DatasetManifest {
        stimuli,
        scanpath_files,
        embedding_dir: None,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json(dir)).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
