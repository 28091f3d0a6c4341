//! Browser bindings for a few interactive operations on synthetic data.
//!
//! Every exported function returns JSON. Failures come back as
//! `{"error": {"kind", "message"}}` instead of throwing.

use std::collections::BTreeMap;

use scanpath_core::align::{Metric, ScoringParams};
use scanpath_core::analysis::{
    cluster_expertise_report, cohen_kappa, knn_loo_classify, similarity_to_distance, ward_cluster,
};
use scanpath_core::embed::{embed_dataset, BuiltinProvider, EmbeddedScanpath};
use scanpath_core::model::{Dataset, Group};
use scanpath_core::pairwise::{aggregate_by_subject, all_pairs};
use scanpath_core::patch::PatchConfig;
use scanpath_core::pipeline::{alignment_report, quantize_json, resolve_c, subject_groups, CSpec};
use scanpath_core::synth::{generate, SynthConfig};
use scanpath_core::{Error, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const WIDTH: usize = 320;
const HEIGHT: usize = 240;

fn pair_config(seed: u64, jitter_px: f64) -> SynthConfig {
    SynthConfig {
        seed,
        n_experts: 2,
        n_students: 2,
        n_stimuli: 1,
        image_size: (WIDTH, HEIGHT),
        n_prototypes: 4,
        len_expert: (6, 8),
        len_student: (6, 9),
        jitter_px,
        ..SynthConfig::default()
    }
}

fn embed(dataset: &Dataset) -> Result<Vec<EmbeddedScanpath>> {
    embed_dataset(dataset, &BuiltinProvider, &PatchConfig::default())
}

fn finish(r: Result<Value>) -> String {
    let v = match r {
        Ok(mut v) => {
            quantize_json(&mut v);
            v
        }
        Err(e) => json!({ "error": { "kind": e.kind().as_str(), "message": e.to_string() } }),
    };
    v.to_string()
}

/// Aligns scanpath `a` with scanpath `b` (0 and 1 are experts, 2 and 3
/// students) on one synthetic stimulus. `c` is the calibrated constant times
/// `c_scale`, the gap penalty `gap_scale * c`.
pub fn align_pair(seed: u64, jitter_px: f64, a: usize, b: usize, c_scale: f64, gap_scale: f64) -> Result<Value> {
    let dataset = generate(&pair_config(seed, jitter_px))?;
    let embedded = embed(&dataset)?;
    let pick = |k: usize| {
        embedded
            .get(k)
            .ok_or_else(|| Error::Config(format!("scanpath index {k} out of range 0..{}", embedded.len())))
    };
    let (ea, eb) = (pick(a)?, pick(b)?);
    let c = resolve_c(&CSpec::Calibrate(None), &embedded, Metric::L1)?.c * c_scale;
    let params = ScoringParams::new(c, gap_scale * c, Metric::L1)?;
    let mut report = alignment_report(ea, eb, &params)?;
    let points = |k: usize| -> Vec<[f64; 2]> { dataset.scanpaths[k].fixations.iter().map(|f| [f.x, f.y]).collect() };
    let obj = report.as_object_mut().expect("object");
    obj.insert("fixations_a".into(), json!(points(a)));
    obj.insert("fixations_b".into(), json!(points(b)));
    obj.insert("group_a".into(), json!(dataset.scanpaths[a].group));
    obj.insert("group_b".into(), json!(dataset.scanpaths[b].group));
    Ok(report)
}

/// Grayscale pixels of the stimulus used by [`align_pair`].
pub fn pair_stimulus(seed: u64) -> Result<Vec<u8>> {
    let dataset = generate(&pair_config(seed, 0.0))?;
    Ok(dataset.stimuli.into_values().next().map(|s| s.pixels).unwrap_or_default())
}

/// Generates a cohort, computes the subject similarity matrix and scores
/// Ward clustering and leave-one-out 3-NN against the true groups.
pub fn cohort(seed: u64, experts: usize, students: usize, stimuli: usize, jitter_px: f64, swap_prob: f64) -> Result<Value> {
    let cfg = SynthConfig {
        seed,
        n_experts: experts,
        n_students: students,
        n_stimuli: stimuli,
        image_size: (WIDTH, HEIGHT),
        n_prototypes: 4,
        jitter_px,
        swap_prob,
        ..SynthConfig::default()
    };
    let dataset = generate(&cfg)?;
    let embedded = embed(&dataset)?;
    let c = resolve_c(&CSpec::Calibrate(None), &embedded, Metric::L1)?.c;
    let params = ScoringParams::new(c, 2.0 * c, Metric::L1)?;
    let scanpaths = all_pairs(&embedded, &params, 1)?.quantized();
    let subjects = aggregate_by_subject(&scanpaths)?.quantized();

    let groups = subject_groups(&dataset);
    let (_, assignments) = ward_cluster(&similarity_to_distance(&subjects), 2)?;
    let clusters = cluster_expertise_report(&subjects.keys, &assignments, &groups)?;
    let knn = knn_loo_classify(&scanpaths, &dataset.groups(), 3)?;
    let labels: BTreeMap<&str, Group> = groups.iter().map(|(k, g)| (k.as_str(), *g)).collect();
    Ok(json!({
        "c": c,
        "subjects": subjects.keys,
        "groups": subjects.keys.iter().map(|k| labels[k.as_str()]).collect::<Vec<_>>(),
        "matrix": subjects.values(),
        "assignments": assignments,
        "cluster_accuracy": clusters.accuracy,
        "cluster_kappa": cohen_kappa(&clusters.confusion).ok(),
        "knn_accuracy": knn.overall.accuracy,
        "knn_kappa": knn.overall.kappa,
    }))
}

/// Cohen's kappa and per-class rates for a 2x2 table with true classes as
/// rows and predictions as columns, students first.
pub fn agreement(ss: u64, se: u64, es: u64, ee: u64) -> Result<Value> {
    let table = [[ss, se], [es, ee]];
    let kappa = cohen_kappa(&table)?;
    let rate = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
    Ok(json!({
        "kappa": kappa,
        "accuracy": rate(ss + ee, ss + se + es + ee),
        "tpr_student": rate(ss, ss + se),
        "tpr_expert": rate(ee, es + ee),
    }))
}

#[wasm_bindgen(js_name = alignPair)]
pub fn align_pair_js(seed: u32, jitter_px: f64, a: u32, b: u32, c_scale: f64, gap_scale: f64) -> String {
    finish(align_pair(seed.into(), jitter_px, a as usize, b as usize, c_scale, gap_scale))
}

#[wasm_bindgen(js_name = pairStimulus)]
pub fn pair_stimulus_js(seed: u32) -> Vec<u8> {
    pair_stimulus(seed.into()).unwrap_or_default()
}

#[wasm_bindgen(js_name = stimulusSize)]
pub fn stimulus_size() -> Vec<u32> {
    vec![WIDTH as u32, HEIGHT as u32]
}

#[wasm_bindgen(js_name = cohort)]
pub fn cohort_js(seed: u32, experts: u32, students: u32, stimuli: u32, jitter_px: f64, swap_prob: f64) -> String {
    finish(cohort(seed.into(), experts as usize, students as usize, stimuli as usize, jitter_px, swap_prob))
}

#[wasm_bindgen(js_name = agreement)]
pub fn agreement_js(ss: u32, se: u32, es: u32, ee: u32) -> String {
    finish(agreement(ss.into(), se.into(), es.into(), ee.into()))
}
