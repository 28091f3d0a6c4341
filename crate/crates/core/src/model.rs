//! Core domain types: fixations, scanpaths, stimuli and the dataset manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{pgm, Error, Result};

/// Viewer group of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Expert,
    Student,
    Unknown,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Expert => "expert",
            Group::Student => "student",
            Group::Unknown => "unknown",
        }
    }

    pub fn is_known(self) -> bool {
        self != Group::Unknown
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "expert" => Ok(Group::Expert),
            "student" => Ok(Group::Student),
            "unknown" => Ok(Group::Unknown),
            other => Err(format!("unknown group {other:?}")),
        }
    }
}

/// One fixation in stimulus pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub start_ms: f64,
    pub duration_ms: f64,
}

impl Fixation {
    fn check(&self) -> std::result::Result<(), String> {
        if !(self.x.is_finite() && self.y.is_finite()) || self.x < 0.0 || self.y < 0.0 {
            return Err(format!(
                "fixation {}: coordinates ({}, {}) must be finite and non-negative",
                self.index, self.x, self.y
            ));
        }
        if !self.start_ms.is_finite() {
            return Err(format!("fixation {}: start_ms must be finite", self.index));
        }
        if !(self.duration_ms.is_finite() && self.duration_ms > 0.0) {
            return Err(format!(
                "fixation {}: duration_ms must be positive, got {}",
                self.index, self.duration_ms
            ));
        }
        Ok(())
    }
}

/// Ordered fixations of one subject on one stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scanpath {
    pub subject_id: String,
    pub group: Group,
    pub stimulus_id: String,
    pub fixations: Vec<Fixation>,
    pub aoi_labels: Option<Vec<String>>,
}

/// Joins a subject and stimulus id into the `subject@stimulus` key used by
/// similarity matrices.
pub fn scanpath_key(subject_id: &str, stimulus_id: &str) -> String {
    format!("{subject_id}@{stimulus_id}")
}

/// Splits a `subject@stimulus` key.
pub fn parse_key(key: &str) -> Option<(&str, &str)> {
    let (s, i) = key.split_once('@')?;
    (!s.is_empty() && !i.is_empty() && !i.contains('@')).then_some((s, i))
}

fn check_id(kind: &str, id: &str) -> std::result::Result<(), String> {
    if id.is_empty() {
        return Err(format!("empty {kind}"));
    }
    if id.contains(['@', '/', '\\', ',']) || id.chars().any(char::is_control) {
        return Err(format!("{kind} {id:?} contains a reserved character"));
    }
    Ok(())
}

impl Scanpath {
    /// Builds a scanpath, checking every structural invariant.
    pub fn new(
        subject_id: impl Into<String>,
        group: Group,
        stimulus_id: impl Into<String>,
        fixations: Vec<Fixation>,
        aoi_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let sp = Scanpath {
            subject_id: subject_id.into(),
            group,
            stimulus_id: stimulus_id.into(),
            fixations,
            aoi_labels,
        };
        sp.validate()?;
        Ok(sp)
    }

    pub fn key(&self) -> String {
        scanpath_key(&self.subject_id, &self.stimulus_id)
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let key = self.key();
        check_id("subject_id", &self.subject_id).map_err(|m| Error::parse(&key, m))?;
        check_id("stimulus_id", &self.stimulus_id).map_err(|m| Error::parse(&key, m))?;
        if self.fixations.is_empty() {
            return Err(Error::EmptyScanpath(key));
        }
        for f in &self.fixations {
            f.check().map_err(|m| Error::parse(&key, m))?;
        }
        for (pos, f) in self.fixations.iter().enumerate() {
            if f.index != pos {
                return Err(Error::Order {
                    key,
                    message: format!("expected index {pos}, found {}", f.index),
                });
            }
        }
        for w in self.fixations.windows(2) {
            if w[1].start_ms < w[0].start_ms {
                return Err(Error::Order {
                    key,
                    message: format!("start_ms decreases at index {}", w[1].index),
                });
            }
        }
        if let Some(labels) = &self.aoi_labels {
            if labels.len() != self.fixations.len() {
                return Err(Error::parse(
                    key,
                    format!(
                        "{} AOI labels for {} fixations",
                        labels.len(),
                        self.fixations.len()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Keeps the fixations whose onset lies strictly before `window_ms`.
///
/// A fixation that starts inside the window is kept whole even if it runs
/// past the boundary.
pub fn truncate_to_window(sp: &Scanpath, window_ms: f64) -> Result<Scanpath> {
    if !(window_ms.is_finite() && window_ms > 0.0) {
        return Err(Error::Config(format!("window_ms must be positive, got {window_ms}")));
    }
    let keep = sp.fixations.iter().take_while(|f| f.start_ms < window_ms).count();
    if keep == 0 {
        return Err(Error::EmptyScanpath(sp.key()));
    }
    Ok(Scanpath {
        subject_id: sp.subject_id.clone(),
        group: sp.group,
        stimulus_id: sp.stimulus_id.clone(),
        fixations: sp.fixations[..keep].to_vec(),
        aoi_labels: sp.aoi_labels.as_ref().map(|l| l[..keep].to_vec()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Png,
}

/// An 8-bit grayscale stimulus image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusImage {
    pub stimulus_id: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub format: ImageFormat,
}

impl StimulusImage {
    pub fn new(
        stimulus_id: impl Into<String>,
        width: usize,
        height: usize,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        let stimulus_id = stimulus_id.into();
        if pixels.len() != width * height {
            return Err(Error::parse(
                &stimulus_id,
                format!("{} pixels for a {width}x{height} image", pixels.len()),
            ));
        }
        Ok(StimulusImage {
            stimulus_id,
            width,
            height,
            pixels,
            format: ImageFormat::Pgm,
        })
    }

    /// Loads a P5 PGM, or (with the `png` feature) a PNG reduced to
    /// luminance. The format is chosen by file extension.
    pub fn load(stimulus_id: &str, path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Self::load_png(stimulus_id, path),
            _ => {
                let g = pgm::read(path)?;
                Self::new(stimulus_id, g.width, g.height, g.pixels)
            }
        }
    }

    #[cfg(feature = "png")]
    fn load_png(stimulus_id: &str, path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
            .into_luma8();
        let (w, h) = img.dimensions();
        let mut s = Self::new(stimulus_id, w as usize, h as usize, img.into_raw())?;
        s.format = ImageFormat::Png;
        Ok(s)
    }

    #[cfg(not(feature = "png"))]
    fn load_png(_stimulus_id: &str, path: &Path) -> Result<Self> {
        Err(Error::Config(format!(
            "{}: PNG support was not compiled in",
            path.display()
        )))
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub id: String,
    pub image: PathBuf,
}

/// Validated dataset manifest. All paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub stimuli: Vec<StimulusEntry>,
    pub scanpath_files: Vec<PathBuf>,
    pub embedding_dir: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    stimuli: Vec<StimulusEntry>,
    scanpaths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<PathBuf>,
}

/// Reads and validates a manifest: referenced files must exist, stimulus ids
/// must be unique, every scanpath must reference a listed stimulus and every
/// subject x stimulus pair must occur once.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let raw: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let mut seen = HashSet::new();
    let mut stimuli = Vec::with_capacity(raw.stimuli.len());
    for s in &raw.stimuli {
        check_id("stimulus id", &s.id).map_err(|m| Error::parse(path.display().to_string(), m))?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateKey(format!("stimulus {}", s.id)));
        }
        let image = resolve(&s.image);
        if !image.is_file() {
            return Err(Error::MissingFile(image));
        }
        stimuli.push(StimulusEntry {
            id: s.id.clone(),
            image,
        });
    }
    let mut scanpath_files = Vec::with_capacity(raw.scanpaths.len());
    for p in &raw.scanpaths {
        let p = resolve(p);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
        scanpath_files.push(p);
    }
    let embedding_dir = match &raw.embeddings {
        Some(d) => {
            let d = resolve(d);
            if !d.is_dir() {
                return Err(Error::MissingFile(d));
            }
            Some(d)
        }
        None => None,
    };
    let manifest = DatasetManifest {
        stimuli,
        scanpath_files,
        embedding_dir,
    };
    manifest.load_scanpaths()?;
    Ok(manifest)
}

impl DatasetManifest {
    /// Loads every scanpath file in manifest order and checks cross-file
    /// invariants.
    pub fn load_scanpaths(&self) -> Result<Vec<Scanpath>> {
        let known: HashSet<&str> = self.stimuli.iter().map(|s| s.id.as_str()).collect();
        let mut keys = HashSet::new();
        let mut subject_group: HashMap<String, Group> = HashMap::new();
        let mut all = Vec::new();
        for file in &self.scanpath_files {
            for sp in load_scanpaths(file)? {
                if !known.contains(sp.stimulus_id.as_str()) {
                    return Err(Error::UnknownStimulus {
                        key: sp.key(),
                        stimulus: sp.stimulus_id.clone(),
                    });
                }
                if !keys.insert(sp.key()) {
                    return Err(Error::DuplicateKey(sp.key()));
                }
                match subject_group.get(&sp.subject_id) {
                    Some(&g) if g != sp.group => {
                        return Err(Error::parse(
                            file.display().to_string(),
                            format!("subject {} labelled both {g} and {}", sp.subject_id, sp.group),
                        ))
                    }
                    _ => {
                        subject_group.insert(sp.subject_id.clone(), sp.group);
                    }
                }
                all.push(sp);
            }
        }
        Ok(all)
    }

    /// Loads stimuli and scanpaths, rejecting fixations outside their image.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut stimuli = BTreeMap::new();
        for s in &self.stimuli {
            stimuli.insert(s.id.clone(), StimulusImage::load(&s.id, &s.image)?);
        }
        let dataset = Dataset {
            stimuli,
            scanpaths: self.load_scanpaths()?,
        };
        dataset.check_bounds()?;
        Ok(dataset)
    }

    /// Serializes the manifest with paths relative to `dir` where possible.
    pub fn to_json(&self, dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).to_path_buf();
        let file = ManifestFile {
            stimuli: self
                .stimuli
                .iter()
                .map(|s| StimulusEntry {
                    id: s.id.clone(),
                    image: rel(&s.image),
                })
                .collect(),
            scanpaths: self.scanpath_files.iter().map(|p| rel(p)).collect(),
            embeddings: self.embedding_dir.as_deref().map(rel),
        };
        serde_json::to_string_pretty(&file).expect("manifest serializes") + "\n"
    }
}

/// Stimuli and scanpaths loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub stimuli: BTreeMap<String, StimulusImage>,
    pub scanpaths: Vec<Scanpath>,
}

impl Dataset {
    pub fn check_bounds(&self) -> Result<()> {
        for sp in &self.scanpaths {
            let img = self.stimuli.get(&sp.stimulus_id).ok_or_else(|| Error::UnknownStimulus {
                key: sp.key(),
                stimulus: sp.stimulus_id.clone(),
            })?;
            if let Some(f) = sp.fixations.iter().find(|f| !img.contains(f.x, f.y)) {
                return Err(Error::OutOfBounds {
                    index: f.index,
                    x: f.x,
                    y: f.y,
                    width: img.width,
                    height: img.height,
                });
            }
        }
        Ok(())
    }

    /// Group label for every scanpath key.
    pub fn groups(&self) -> BTreeMap<String, Group> {
        self.scanpaths.iter().map(|s| (s.key(), s.group)).collect()
    }

    pub fn truncate(&self, window_ms: f64) -> Result<Dataset> {
        Ok(Dataset {
            stimuli: self.stimuli.clone(),
            scanpaths: self
                .scanpaths
                .iter()
                .map(|s| truncate_to_window(s, window_ms))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    subject_id: String,
    group: String,
    stimulus_id: String,
    index: usize,
    x: f64,
    y: f64,
    start_ms: f64,
    duration_ms: f64,
    #[serde(default)]
    aoi_label: Option<String>,
}

const HEADER: [&str; 8] = [
    "subject_id",
    "group",
    "stimulus_id",
    "index",
    "x",
    "y",
    "start_ms",
    "duration_ms",
];

/// Loads a scanpath CSV file.
pub fn load_scanpaths(path: &Path) -> Result<Vec<Scanpath>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    parse_scanpaths(file, &path.display().to_string())
}

/// Parses scanpath CSV rows. Rows are grouped by (subject, stimulus) in order
/// of first appearance and each group's fixations are sorted by index.
pub fn parse_scanpaths<R: Read>(reader: R, context: &str) -> Result<Vec<Scanpath>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(context, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let with_aoi = match names.len() {
        8 if names == HEADER => false,
        9 if names[..8] == HEADER && names[8] == "aoi_label" => true,
        _ => {
            return Err(Error::parse(
                context,
                format!("unexpected header {:?}", names.join(",")),
            ))
        }
    };

    type Acc = (Group, Vec<Fixation>, Vec<String>);
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Acc> = HashMap::new();
    for (line, rec) in rdr.deserialize::<Row>().enumerate() {
        let at = || format!("{context}:{}", line + 2);
        let row = rec.map_err(|e| Error::parse(at(), e.to_string()))?;
        let group: Group = row.group.parse().map_err(|m: String| Error::parse(at(), m))?;
        let fix = Fixation {
            index: row.index,
            x: row.x,
            y: row.y,
            start_ms: row.start_ms,
            duration_ms: row.duration_ms,
        };
        fix.check().map_err(|m| Error::parse(at(), m))?;
        let label = match (with_aoi, row.aoi_label) {
            (true, Some(l)) if !l.is_empty() => Some(l),
            (true, _) => return Err(Error::parse(at(), "empty aoi_label")),
            (false, _) => None,
        };
        let key = (row.subject_id, row.stimulus_id);
        let acc = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (group, Vec::new(), Vec::new())
        });
        if acc.0 != group {
            return Err(Error::parse(
                at(),
                format!("group changes within scanpath {}@{}", key.0, key.1),
            ));
        }
        acc.1.push(fix);
        acc.2.extend(label);
    }

    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let (group, fixations, labels) = groups.remove(&key).expect("grouped key");
        let mut paired: Vec<(Fixation, Option<String>)> = if with_aoi {
            fixations.into_iter().zip(labels.into_iter().map(Some)).collect()
        } else {
            fixations.into_iter().map(|f| (f, None)).collect()
        };
        paired.sort_by_key(|(f, _)| f.index);
        let (fixations, labels): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
        let aoi_labels = with_aoi.then(|| labels.into_iter().flatten().collect());
        out.push(Scanpath::new(key.0, group, key.1, fixations, aoi_labels)?);
    }
    Ok(out)
}

/// Writes scanpaths as CSV. The `aoi_label` column is emitted when the
/// scanpaths carry labels; either all or none of them must.
pub fn write_scanpaths<W: Write>(writer: W, scanpaths: &[Scanpath]) -> Result<()> {
    let labelled = scanpaths.iter().filter(|s| s.aoi_labels.is_some()).count();
    if labelled != 0 && labelled != scanpaths.len() {
        return Err(Error::Config(
            "either all or none of the scanpaths must carry AOI labels".into(),
        ));
    }
    let with_aoi = labelled != 0;
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::Internal(e.to_string());
    let mut header: Vec<&str> = HEADER.to_vec();
    if with_aoi {
        header.push("aoi_label");
    }
    w.write_record(&header).map_err(wrap)?;
    for sp in scanpaths {
        for (i, f) in sp.fixations.iter().enumerate() {
            let mut rec = vec![
                sp.subject_id.clone(),
                sp.group.to_string(),
                sp.stimulus_id.clone(),
                f.index.to_string(),
                f.x.to_string(),
                f.y.to_string(),
                f.start_ms.to_string(),
                f.duration_ms.to_string(),
            ];
            if let Some(labels) = &sp.aoi_labels {
                rec.push(labels[i].clone());
            }
            w.write_record(&rec).map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))
}

pub fn save_scanpaths(path: &Path, scanpaths: &[Scanpath]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scanpaths(std::io::BufWriter::new(file), scanpaths)
}
