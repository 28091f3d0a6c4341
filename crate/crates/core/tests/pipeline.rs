use std::collections::BTreeMap;
use std::path::Path;

use scanpath_core::embed::write_embeddings;
use scanpath_core::pipeline::{
    embed_stage, load_inputs, obtain_embeddings, run_pipeline, CSpec, GapSpec, ProviderKind, RunConfig, ARCHETYPES,
    CLUSTER_REPORT, DENDROGRAM, EMBEDDINGS_META, KNN_REPORT, RUN_RECORD, SCANPATH_HEATMAP, SCANPATH_MATRIX,
    SUBJECT_HEATMAP, SUBJECT_MATRIX,
};
use scanpath_core::synth::{generate, write_dataset, SynthConfig};
use scanpath_core::{Error, ErrorKind};
use serde_json::Value;

fn dataset(dir: &Path) -> std::path::PathBuf {
    let cfg = SynthConfig {
        seed: 21,
        n_experts: 3,
        n_students: 4,
        n_stimuli: 3,
        image_size: (360, 280),
        n_prototypes: 4,
        ..SynthConfig::default()
    };
    write_dataset(dir, &generate(&cfg).unwrap()).unwrap();
    dir.join("manifest.json")
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let cfg = RunConfig::new(&manifest, dir.path().join("out"), "calibrate:img2".parse().unwrap());
    let s = run_pipeline(&cfg).unwrap();
    for name in [
        SCANPATH_MATRIX, SCANPATH_HEATMAP, SUBJECT_MATRIX, SUBJECT_HEATMAP, DENDROGRAM, CLUSTER_REPORT, KNN_REPORT,
        ARCHETYPES, RUN_RECORD, EMBEDDINGS_META,
    ] {
        assert!(cfg.out.join(name).is_file(), "{name}");
    }
    assert_eq!(s.scanpath_matrix.len(), 21);
    assert_eq!(s.subject_matrix.len(), 7);

    let run = json(&cfg.out.join(RUN_RECORD));
    assert_eq!(run["c_source"], "calibrate:img2");
    assert_eq!(run["calibration_stimulus"], "img2");
    assert_eq!(run["c"].as_f64().unwrap(), s.calibration.c);
    assert_eq!(run["gap"].as_f64().unwrap(), s.gap);
    assert_eq!(run["embedding_dim"], 384);

    let report = json(&cfg.out.join(CLUSTER_REPORT));
    assert_eq!(report["assignments"].as_object().unwrap().len(), 7);
    assert!(report["kappa"].is_number());
    let archetypes = std::fs::read_to_string(cfg.out.join(ARCHETYPES)).unwrap();
    assert_eq!(archetypes.lines().count(), 22);
}

#[test]
fn rerun_and_worker_count_leave_bytes_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let mut a = RunConfig::new(&manifest, dir.path().join("a"), CSpec::Calibrate(None));
    a.workers = 1;
    let b = RunConfig {
        out: dir.path().join("b"),
        workers: 3,
        ..a.clone()
    };
    run_pipeline(&a).unwrap();
    run_pipeline(&b).unwrap();
    let (mut ta, mut tb) = (tree(&a.out), tree(&b.out));
    // the run record names the worker count
    let (ra, rb) = (ta.remove(RUN_RECORD).unwrap(), tb.remove(RUN_RECORD).unwrap());
    assert_eq!(ta, tb);
    let (mut ja, mut jb): (Value, Value) = (serde_json::from_slice(&ra).unwrap(), serde_json::from_slice(&rb).unwrap());
    ja.as_object_mut().unwrap().remove("workers");
    jb.as_object_mut().unwrap().remove("workers");
    ja.as_object_mut().unwrap().remove("manifest");
    jb.as_object_mut().unwrap().remove("manifest");
    assert_eq!(ja, jb);

    run_pipeline(&a).unwrap();
    let again = tree(&a.out);
    assert_eq!(again.get(RUN_RECORD), Some(&ra));
}

/// Rewrites the manifest with an `embeddings` entry pointing at `dir`.
fn with_embeddings(manifest: &Path, dir: &str) {
    let mut m = json(manifest);
    m.as_object_mut().unwrap().insert("embeddings".into(), Value::String(dir.into()));
    std::fs::write(manifest, serde_json::to_string_pretty(&m).unwrap()).unwrap();
}

#[test]
fn precomputed_embeddings_reproduce_the_builtin_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let inputs = load_inputs(&manifest).unwrap();
    let full = embed_stage(&inputs, ProviderKind::Builtin, 100, None).unwrap();
    write_embeddings(&dir.path().join("emb"), &full).unwrap();
    with_embeddings(&manifest, "emb");

    for window_ms in [None, Some(1500.0)] {
        let mut builtin = RunConfig::new(&manifest, dir.path().join("builtin"), CSpec::Value(500.0));
        builtin.gap = GapSpec::Value(700.0);
        builtin.window_ms = window_ms;
        let dsem = RunConfig {
            provider: ProviderKind::Dsem,
            out: dir.path().join("dsem"),
            ..builtin.clone()
        };
        let a = run_pipeline(&builtin).unwrap();
        let b = run_pipeline(&dsem).unwrap();
        assert_eq!(a.scanpath_matrix, b.scanpath_matrix, "window {window_ms:?}");
        for name in [SCANPATH_MATRIX, SUBJECT_MATRIX, DENDROGRAM, KNN_REPORT, ARCHETYPES] {
            assert_eq!(
                std::fs::read(builtin.out.join(name)).unwrap(),
                std::fs::read(dsem.out.join(name)).unwrap(),
                "{name}"
            );
        }
    }
}

#[test]
fn viewing_window_shortens_scanpaths() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let inputs = load_inputs(&manifest).unwrap();
    let full = embed_stage(&inputs, ProviderKind::Builtin, 100, None).unwrap();
    let cut = embed_stage(&inputs, ProviderKind::Builtin, 100, Some(1000.0)).unwrap();
    assert_eq!(full.len(), cut.len());
    assert!(cut.iter().zip(&full).all(|(c, f)| c.len() < f.len() && c.as_flat() == &f.as_flat()[..c.as_flat().len()]));
}

#[test]
fn dsem_provider_without_a_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let mut cfg = RunConfig::new(&manifest, dir.path().join("out"), CSpec::Value(10.0));
    cfg.provider = ProviderKind::Dsem;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.kind().exit_code(), 2);
}

#[test]
fn missing_dsem_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    std::fs::create_dir(dir.path().join("emb")).unwrap();
    with_embeddings(&manifest, "emb");
    let mut cfg = RunConfig::new(&manifest, dir.path().join("out"), CSpec::Value(10.0));
    cfg.provider = ProviderKind::Dsem;
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::MissingEmbedding(_)));
    assert_eq!(err.kind(), ErrorKind::Data);
}

#[test]
fn embedding_cache_is_checked_against_its_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path());
    let cfg = RunConfig::new(&manifest, dir.path().join("out"), CSpec::Value(100.0));
    run_pipeline(&cfg).unwrap();
    let inputs = load_inputs(&manifest).unwrap();
    let cached = obtain_embeddings(&cfg.out, &inputs, ProviderKind::Builtin, 100, None).unwrap();
    assert_eq!(cached, embed_stage(&inputs, ProviderKind::Builtin, 100, None).unwrap());
    let err = obtain_embeddings(&cfg.out, &inputs, ProviderKind::Builtin, 64, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
