//! End-to-end orchestration: embed, calibrate, align all pairs, aggregate,
//! cluster, classify and rank archetypes, writing every artifact under one
//! output directory.
//!
//! Each stage is a public function so the command line tool can run them one
//! at a time. Downstream stages always consume matrices quantized to the 9
//! significant digits they are written with, which makes a chain of stage
//! invocations produce the same bytes as a single [`run_pipeline`] call.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::align::{calibrate_c, default_gap, Metric, ScoringParams};
use crate::analysis::{
    archetype_ranking, archetypes_csv, cluster_expertise_report, cohen_kappa, knn_loo_classify, similarity_to_distance,
    ward_cluster, ClassificationReport, ClusterReport, Dendrogram,
};
use crate::embed::{
    embed_dataset, load_embeddings, write_embeddings, BuiltinProvider, EmbeddedScanpath,
};
use crate::fmt::round9;
use crate::model::{load_manifest, Dataset, DatasetManifest, Group};
use crate::pairwise::{aggregate_by_subject, all_pairs, export_matrix, load_matrix, SimilarityMatrix};
use crate::patch::{PatchConfig, DEFAULT_PATCH_SIZE};
use crate::{Error, Result};

pub const EMBEDDINGS_DIR: &str = "embeddings";
pub const EMBEDDINGS_META: &str = "embeddings/meta.json";
pub const SCANPATH_MATRIX: &str = "similarity_scanpath.csv";
pub const SCANPATH_HEATMAP: &str = "heatmap_scanpath.pgm";
pub const SUBJECT_MATRIX: &str = "similarity_subject.csv";
pub const SUBJECT_HEATMAP: &str = "heatmap_subject.pgm";
pub const DENDROGRAM: &str = "dendrogram.csv";
pub const CLUSTER_REPORT: &str = "cluster_report.json";
pub const KNN_REPORT: &str = "knn_report.json";
pub const ARCHETYPES: &str = "archetypes.csv";
pub const RUN_RECORD: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Builtin,
    Dsem,
}

impl FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "builtin" => Ok(ProviderKind::Builtin),
            "dsem" => Ok(ProviderKind::Dsem),
            _ => Err(Error::Config(format!("unknown provider {s:?}, expected builtin or dsem"))),
        }
    }
}

/// Where the match constant comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CSpec {
    Value(f64),
    /// Calibrate on one stimulus; `None` picks the lexicographically smallest
    /// stimulus id.
    Calibrate(Option<String>),
}

impl FromStr for CSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "calibrate" {
            return Ok(CSpec::Calibrate(None));
        }
        if let Some(id) = s.strip_prefix("calibrate:") {
            if id.is_empty() {
                return Err(Error::Config("calibrate: needs a stimulus id".into()));
            }
            return Ok(CSpec::Calibrate(Some(id.to_string())));
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::Config(format!("c must be a number or calibrate[:<stimulus>], got {s:?}")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Config(format!("c must be finite and >= 0, got {s}")));
        }
        Ok(CSpec::Value(v))
    }
}

impl fmt::Display for CSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CSpec::Value(v) => write!(f, "{v}"),
            CSpec::Calibrate(None) => f.write_str("calibrate"),
            CSpec::Calibrate(Some(id)) => write!(f, "calibrate:{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapSpec {
    Value(f64),
    /// Twice the match constant.
    Auto,
}

impl FromStr for GapSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(GapSpec::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(GapSpec::Value(v)),
            _ => Err(Error::Config(format!("gap must be a number >= 0 or auto, got {s:?}"))),
        }
    }
}

/// Everything a full run depends on besides the input files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub provider: ProviderKind,
    pub patch_size: usize,
    pub metric: Metric,
    pub c: CSpec,
    pub gap: GapSpec,
    pub window_ms: Option<f64>,
    pub workers: usize,
    pub out: PathBuf,
    pub knn_k: usize,
    pub clusters_k: usize,
    pub archetype_top_n: usize,
}

impl RunConfig {
    /// A config with the documented defaults. `c` has no default.
    pub fn new(manifest: impl Into<PathBuf>, out: impl Into<PathBuf>, c: CSpec) -> Self {
        RunConfig {
            manifest: manifest.into(),
            provider: ProviderKind::Builtin,
            patch_size: DEFAULT_PATCH_SIZE,
            metric: Metric::L1,
            c,
            gap: GapSpec::Auto,
            window_ms: None,
            workers: 1,
            out: out.into(),
            knn_k: 3,
            clusters_k: 2,
            archetype_top_n: 3,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let Some(w) = self.window_ms {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!("window_ms must be positive, got {w}")));
            }
        }
        if self.knn_k == 0 || self.knn_k.is_multiple_of(2) {
            return Err(Error::Config(format!("knn_k must be odd, got {}", self.knn_k)));
        }
        if self.clusters_k == 0 {
            return Err(Error::Config("clusters must be at least 1".into()));
        }
        if self.archetype_top_n == 0 {
            return Err(Error::Config("archetype_top_n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loaded inputs: the manifest and the dataset it describes, untruncated.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub manifest: DatasetManifest,
    pub dataset: Dataset,
}

pub fn load_inputs(manifest: &Path) -> Result<Inputs> {
    let m = load_manifest(manifest)?;
    let dataset = m.load_dataset()?;
    Ok(Inputs { manifest: m, dataset })
}

/// Group of every subject.
pub fn subject_groups(dataset: &Dataset) -> BTreeMap<String, Group> {
    dataset.scanpaths.iter().map(|s| (s.subject_id.clone(), s.group)).collect()
}

/// Parameters that determine the embedding of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub provider: ProviderKind,
    pub patch_size: usize,
    pub window_ms: Option<f64>,
    pub dim: Option<usize>,
    pub scanpaths: usize,
}

/// Embeds the dataset with the chosen provider, truncating scanpaths to the
/// viewing window first. Precomputed files are read for the full scanpath
/// and cut to the truncated length.
pub fn embed_stage(inputs: &Inputs, provider: ProviderKind, patch_size: usize, window_ms: Option<f64>) -> Result<Vec<EmbeddedScanpath>> {
    let dataset = match window_ms {
        Some(w) => inputs.dataset.truncate(w)?,
        None => inputs.dataset.clone(),
    };
    match provider {
        ProviderKind::Builtin => embed_dataset(&dataset, &BuiltinProvider, &PatchConfig { patch_size }),
        ProviderKind::Dsem => {
            let dir = inputs
                .manifest
                .embedding_dir
                .as_ref()
                .ok_or_else(|| Error::Config("provider dsem needs an embeddings directory in the manifest".into()))?;
            let out = inputs
                .dataset
                .scanpaths
                .iter()
                .zip(&dataset.scanpaths)
                .map(|(full, cut)| load_embeddings(dir, full).map(|e| e.truncated(cut.len())))
                .collect::<Result<Vec<_>>>()?;
            crate::embed::check_uniform_dim(&out)?;
            Ok(out)
        }
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rounds every float in a JSON tree to 9 significant digits.
pub fn quantize_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(q) = n.as_f64().and_then(|f| serde_json::Number::from_f64(round9(f))) {
                *n = q;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(quantize_json),
        Value::Object(map) => map.values_mut().for_each(quantize_json),
        _ => {}
    }
}

fn to_json_value<T: Serialize>(v: &T) -> Result<Value> {
    let mut value = serde_json::to_value(v).map_err(|e| Error::Internal(e.to_string()))?;
    quantize_json(&mut value);
    Ok(value)
}

/// Writes `embeddings/*.dsem` and `embeddings/meta.json`.
pub fn write_embedding_cache(out: &Path, embedded: &[EmbeddedScanpath], meta: &EmbeddingMeta) -> Result<()> {
    write_embeddings(&out.join(EMBEDDINGS_DIR), embedded)?;
    write_json(&out.join(EMBEDDINGS_META), &to_json_value(meta)?)
}

/// Reads the embeddings written by [`write_embedding_cache`], refusing a cache
/// produced with different parameters.
pub fn read_embedding_cache(out: &Path, inputs: &Inputs, meta: &EmbeddingMeta) -> Result<Vec<EmbeddedScanpath>> {
    let meta_path = out.join(EMBEDDINGS_META);
    let text = std::fs::read_to_string(&meta_path).map_err(|_| Error::MissingFile(meta_path.clone()))?;
    let cached: EmbeddingMeta =
        serde_json::from_str(&text).map_err(|e| Error::parse(meta_path.display().to_string(), e.to_string()))?;
    if &cached != meta {
        return Err(Error::Config(format!(
            "{} was written with different embedding parameters",
            meta_path.display()
        )));
    }
    let dataset = match meta.window_ms {
        Some(w) => inputs.dataset.truncate(w)?,
        None => inputs.dataset.clone(),
    };
    let dir = out.join(EMBEDDINGS_DIR);
    dataset.scanpaths.iter().map(|sp| load_embeddings(&dir, sp)).collect()
}

/// Embeds the dataset and, for the builtin provider, writes the cache under
/// `out`.
pub fn embed_and_cache(
    out: &Path,
    inputs: &Inputs,
    provider: ProviderKind,
    patch_size: usize,
    window_ms: Option<f64>,
) -> Result<Vec<EmbeddedScanpath>> {
    let embedded = embed_stage(inputs, provider, patch_size, window_ms)?;
    if provider == ProviderKind::Builtin {
        let meta = EmbeddingMeta {
            provider,
            patch_size,
            window_ms,
            dim: crate::embed::check_uniform_dim(&embedded)?,
            scanpaths: embedded.len(),
        };
        write_embedding_cache(out, &embedded, &meta)?;
    }
    Ok(embedded)
}

/// Embeddings for a stage run on its own: a matching cache under `out` if
/// present, otherwise computed afresh.
pub fn obtain_embeddings(
    out: &Path,
    inputs: &Inputs,
    provider: ProviderKind,
    patch_size: usize,
    window_ms: Option<f64>,
) -> Result<Vec<EmbeddedScanpath>> {
    if provider == ProviderKind::Builtin && out.join(EMBEDDINGS_META).is_file() {
        let meta = EmbeddingMeta {
            provider,
            patch_size,
            window_ms,
            dim: Some(crate::embed::BUILTIN_DIM),
            scanpaths: inputs.dataset.scanpaths.len(),
        };
        return read_embedding_cache(out, inputs, &meta);
    }
    embed_stage(inputs, provider, patch_size, window_ms)
}

/// The resolved match constant and, when calibrated, the stimulus used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub c: f64,
    pub stimulus: Option<String>,
    pub metric: Metric,
    pub scanpaths: usize,
}

/// Resolves `c`, rounding it to 9 significant digits so the recorded value
/// reproduces the run exactly.
pub fn resolve_c(spec: &CSpec, embedded: &[EmbeddedScanpath], metric: Metric) -> Result<Calibration> {
    match spec {
        CSpec::Value(v) => Ok(Calibration {
            c: *v,
            stimulus: None,
            metric,
            scanpaths: 0,
        }),
        CSpec::Calibrate(id) => {
            let stimulus = match id {
                Some(id) => id.clone(),
                None => embedded
                    .iter()
                    .map(|e| e.stimulus_id.as_str())
                    .min()
                    .ok_or(Error::TooFewScanpaths(0))?
                    .to_string(),
            };
            let subset: Vec<EmbeddedScanpath> =
                embedded.iter().filter(|e| e.stimulus_id == stimulus).cloned().collect();
            if subset.is_empty() {
                return Err(Error::Config(format!("no scanpaths on calibration stimulus {stimulus:?}")));
            }
            Ok(Calibration {
                c: round9(calibrate_c(&subset, metric)?),
                scanpaths: subset.len(),
                stimulus: Some(stimulus),
                metric,
            })
        }
    }
}

pub fn resolve_gap(spec: GapSpec, c: f64) -> f64 {
    match spec {
        GapSpec::Value(v) => v,
        GapSpec::Auto => round9(default_gap(c)),
    }
}

/// All-pairs scanpath similarity; writes the CSV, sidecar and heatmap and
/// returns the matrix as written.
pub fn similarity_stage(out: &Path, embedded: &[EmbeddedScanpath], params: &ScoringParams, workers: usize) -> Result<SimilarityMatrix> {
    let m = all_pairs(embedded, params, workers)?.quantized();
    export_matrix(&m, &out.join(SCANPATH_MATRIX), Some(&out.join(SCANPATH_HEATMAP)))?;
    Ok(m)
}

pub fn aggregate_stage(out: &Path, scanpath_matrix: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    let m = aggregate_by_subject(scanpath_matrix)?.quantized();
    export_matrix(&m, &out.join(SUBJECT_MATRIX), Some(&out.join(SUBJECT_HEATMAP)))?;
    Ok(m)
}

/// Ward clustering outcome as written to the cluster report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub dendrogram: Dendrogram,
    pub assignments: Vec<usize>,
    /// Present for two clusters over subjects with known groups.
    pub expertise: Option<ClusterReport>,
    pub kappa: Option<f64>,
}

/// Ward clustering of the subject-level matrix; writes the dendrogram and the
/// cluster report.
pub fn cluster_stage(
    out: &Path,
    subject_matrix: &SimilarityMatrix,
    groups: &BTreeMap<String, Group>,
    k: usize,
) -> Result<ClusterOutcome> {
    let d = similarity_to_distance(subject_matrix);
    let (dendrogram, assignments) = ward_cluster(&d, k)?;
    let labelled = subject_matrix
        .keys
        .iter()
        .all(|s| groups.get(s).is_some_and(|g| g.is_known()));
    let expertise = if k == 2 && labelled {
        Some(cluster_expertise_report(&subject_matrix.keys, &assignments, groups)?)
    } else {
        None
    };
    let kappa = expertise.as_ref().and_then(|r| cohen_kappa(&r.confusion).ok());

    let mut report = json!({
        "level": subject_matrix.level,
        "clusters": k,
        "inversions": dendrogram.inversions,
        "assignments": subject_matrix.keys.iter().cloned().zip(assignments.iter().copied()).collect::<BTreeMap<_, _>>(),
    });
    if let Some(r) = &expertise {
        let obj = report.as_object_mut().expect("object");
        obj.insert("cluster_labels".into(), json!(r.cluster_labels));
        obj.insert("confusion".into(), json!(r.confusion));
        obj.insert("tpr_student".into(), json!(r.tpr_student));
        obj.insert("tpr_expert".into(), json!(r.tpr_expert));
        obj.insert("accuracy".into(), json!(r.accuracy));
        obj.insert("kappa".into(), json!(kappa));
    }
    quantize_json(&mut report);
    write_text(&out.join(DENDROGRAM), &dendrogram.to_csv())?;
    write_json(&out.join(CLUSTER_REPORT), &report)?;
    Ok(ClusterOutcome {
        dendrogram,
        assignments,
        expertise,
        kappa,
    })
}

pub fn classify_stage(
    out: &Path,
    scanpath_matrix: &SimilarityMatrix,
    groups: &BTreeMap<String, Group>,
    k: usize,
) -> Result<ClassificationReport> {
    let report = knn_loo_classify(scanpath_matrix, groups, k)?;
    write_json(&out.join(KNN_REPORT), &to_json_value(&report)?)?;
    Ok(report)
}

pub fn archetype_stage(out: &Path, scanpath_matrix: &SimilarityMatrix, top_n: usize) -> Result<Vec<(String, usize)>> {
    let ranked = archetype_ranking(scanpath_matrix, top_n)?;
    write_text(&out.join(ARCHETYPES), &archetypes_csv(&ranked))?;
    Ok(ranked)
}

/// One alignment with its score matrix, as JSON with quantized floats.
pub fn alignment_report(a: &EmbeddedScanpath, b: &EmbeddedScanpath, params: &ScoringParams) -> Result<Value> {
    let (r, m) = crate::align::local_align_with_matrix(a, b, params)?;
    let rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect();
    let mut v = json!({
        "a": a.key(),
        "b": b.key(),
        "c": params.c,
        "gap": params.gap,
        "metric": params.metric,
        "score": r.score,
        "normalized": r.normalized,
        "argmax": r.argmax,
        "path": r.path,
        "score_matrix": rows,
    });
    quantize_json(&mut v);
    Ok(v)
}

/// Reads a matrix artifact from an output directory.
pub fn read_matrix(out: &Path, name: &str) -> Result<SimilarityMatrix> {
    load_matrix(&out.join(name))
}

/// Key results of a full run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub calibration: Calibration,
    pub gap: f64,
    pub scanpath_matrix: SimilarityMatrix,
    pub subject_matrix: SimilarityMatrix,
    pub clustering: ClusterOutcome,
    pub classification: ClassificationReport,
    pub archetypes: Vec<(String, usize)>,
}

/// Runs every stage and writes all artifacts plus `run.json`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.check()?;
    let inputs = load_inputs(&cfg.manifest)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;

    let embedded = embed_and_cache(&cfg.out, &inputs, cfg.provider, cfg.patch_size, cfg.window_ms)?;
    let dim = crate::embed::check_uniform_dim(&embedded)?;

    let calibration = resolve_c(&cfg.c, &embedded, cfg.metric)?;
    let gap = resolve_gap(cfg.gap, calibration.c);
    let params = ScoringParams::new(calibration.c, gap, cfg.metric)?;

    let scanpath_matrix = similarity_stage(&cfg.out, &embedded, &params, cfg.workers)?;
    let subject_matrix = aggregate_stage(&cfg.out, &scanpath_matrix)?;
    let clustering = cluster_stage(&cfg.out, &subject_matrix, &subject_groups(&inputs.dataset), cfg.clusters_k)?;
    let classification = classify_stage(&cfg.out, &scanpath_matrix, &inputs.dataset.groups(), cfg.knn_k)?;
    let archetypes = archetype_stage(&cfg.out, &scanpath_matrix, cfg.archetype_top_n)?;

    let mut record = json!({
        "manifest": cfg.manifest.display().to_string(),
        "provider": cfg.provider,
        "patch_size": cfg.patch_size,
        "embedding_dim": dim,
        "metric": cfg.metric,
        "c": calibration.c,
        "c_source": cfg.c.to_string(),
        "calibration_stimulus": calibration.stimulus,
        "gap": gap,
        "window_ms": cfg.window_ms,
        "workers": cfg.workers,
        "knn_k": cfg.knn_k,
        "clusters": cfg.clusters_k,
        "archetype_top_n": cfg.archetype_top_n,
        "seed": null,
        "scanpaths": scanpath_matrix.len(),
        "subjects": subject_matrix.len(),
        "artifacts": [
            SCANPATH_MATRIX, SCANPATH_HEATMAP, SUBJECT_MATRIX, SUBJECT_HEATMAP,
            DENDROGRAM, CLUSTER_REPORT, KNN_REPORT, ARCHETYPES,
        ],
    });
    quantize_json(&mut record);
    write_json(&cfg.out.join(RUN_RECORD), &record)?;

    Ok(RunSummary {
        calibration,
        gap,
        scanpath_matrix,
        subject_matrix,
        clustering,
        classification,
        archetypes,
    })
}
