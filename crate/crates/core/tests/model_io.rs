use std::path::Path;

use proptest::prelude::*;
use scanpath_core::model::{load_manifest, parse_scanpaths, write_scanpaths, Fixation, Group, Scanpath};
use scanpath_core::{pgm, Error, ErrorKind};

const HEADER: &str = "subject_id,group,stimulus_id,index,x,y,start_ms,duration_ms\n";

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// Two 200x150 stimuli and four scanpath files, one per subject.
fn dataset(dir: &Path) {
    for id in ["i1", "i2"] {
        pgm::write(&dir.join(format!("{id}.pgm")), 200, 150, &vec![90u8; 200 * 150]).unwrap();
    }
    for (s, g) in [("s1", "student"), ("s2", "student"), ("e1", "expert"), ("e2", "expert")] {
        let mut csv = HEADER.to_string();
        for stim in ["i1", "i2"] {
            csv += &format!("{s},{g},{stim},0,50,60,0,200\n{s},{g},{stim},1,120.5,80,250,180\n");
        }
        write(&dir.join(format!("{s}.csv")), &csv);
    }
}

fn manifest(dir: &Path, scanpaths: &[&str]) -> std::path::PathBuf {
    let files: Vec<String> = scanpaths.iter().map(|s| format!("\"{s}\"")).collect();
    let text = format!(
        r#"{{"stimuli": [{{"id": "i1", "image": "i1.pgm"}}, {{"id": "i2", "image": "i2.pgm"}}], "scanpaths": [{}]}}"#,
        files.join(", ")
    );
    let path = dir.join("manifest.json");
    write(&path, &text);
    path
}

#[test]
fn manifest_with_two_stimuli_and_four_files() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let m = load_manifest(&manifest(dir.path(), &["s1.csv", "s2.csv", "e1.csv", "e2.csv"])).unwrap();
    assert_eq!(m.stimuli.len(), 2);
    assert_eq!(m.scanpath_files.len(), 4);
    assert!(m.embedding_dir.is_none());
    let d = m.load_dataset().unwrap();
    assert_eq!(d.scanpaths.len(), 8);
    assert_eq!(d.groups()["e2@i2"], Group::Expert);
}

#[test]
fn manifest_json_round_trips_with_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    let m = load_manifest(&manifest(dir.path(), &["s1.csv", "e1.csv"])).unwrap();
    let text = m.to_json(dir.path());
    assert!(text.contains("\"i1.pgm\"") && !text.contains(&dir.path().display().to_string()));
    write(&dir.path().join("manifest.json"), &text);
    assert_eq!(load_manifest(&dir.path().join("manifest.json")).unwrap(), m);
}

#[test]
fn missing_image_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    std::fs::remove_file(dir.path().join("i2.pgm")).unwrap();
    let err = load_manifest(&manifest(dir.path(), &["s1.csv"])).unwrap_err();
    assert!(matches!(err, Error::MissingFile(p) if p.ends_with("i2.pgm")));
}

#[test]
fn same_subject_and_stimulus_in_two_files_is_a_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    std::fs::copy(dir.path().join("s1.csv"), dir.path().join("s1_copy.csv")).unwrap();
    let err = load_manifest(&manifest(dir.path(), &["s1.csv", "s1_copy.csv"])).unwrap_err();
    assert!(matches!(err, Error::DuplicateKey(k) if k == "s1@i1"));
}

#[test]
fn unknown_stimulus_and_out_of_bounds_fixations() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path());
    write(&dir.path().join("x.csv"), &format!("{HEADER}s9,student,i7,0,1,1,0,100\n"));
    let err = load_manifest(&manifest(dir.path(), &["x.csv"])).unwrap_err();
    assert!(matches!(err, Error::UnknownStimulus { .. }));

    write(&dir.path().join("y.csv"), &format!("{HEADER}s9,student,i1,0,1,1,0,100\ns9,student,i1,1,200,1,150,100\n"));
    let m = load_manifest(&manifest(dir.path(), &["y.csv"])).unwrap();
    let err = m.load_dataset().unwrap_err();
    assert!(matches!(err, Error::OutOfBounds { index: 1, .. }));
    assert_eq!(err.kind(), ErrorKind::Data);
    assert_eq!(err.kind().exit_code(), 3);
}

#[test]
fn csv_with_three_fixations() {
    let text = format!("{HEADER}s1,student,i1,0,10,20,0,200\ns1,student,i1,1,30,40,210,150\ns1,student,i1,2,50,60,400,90\n");
    let sps = parse_scanpaths(text.as_bytes(), "inline").unwrap();
    assert_eq!(sps.len(), 1);
    assert_eq!(sps[0].len(), 3);
    assert_eq!(sps[0].fixations[2].x, 50.0);
}

#[test]
fn zero_duration_and_index_gaps_are_rejected() {
    let zero = format!("{HEADER}s1,student,i1,0,10,20,0,0\n");
    assert!(matches!(parse_scanpaths(zero.as_bytes(), "inline"), Err(Error::Parse { .. })));
    let gap = format!("{HEADER}s1,student,i1,0,10,20,0,100\ns1,student,i1,2,10,20,200,100\n");
    assert!(matches!(parse_scanpaths(gap.as_bytes(), "inline"), Err(Error::Order { .. })));
}

fn id() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_-]{0,6}"
}

fn scanpath() -> impl Strategy<Value = Scanpath> {
    (
        id(),
        prop_oneof![Just(Group::Expert), Just(Group::Student), Just(Group::Unknown)],
        id(),
        prop::collection::vec((0.0f64..2000.0, 0.0f64..2000.0, 0.0f64..500.0, 0.5f64..900.0), 1..8),
        any::<bool>(),
    )
        .prop_map(|(s, g, i, raw, labelled)| {
            let mut t = 0.0;
            let fixations: Vec<Fixation> = raw
                .iter()
                .enumerate()
                .map(|(index, &(x, y, pause, duration_ms))| {
                    t += pause;
                    Fixation { index, x, y, start_ms: t, duration_ms }
                })
                .collect();
            let labels = labelled.then(|| (0..fixations.len()).map(|k| format!("A{}", k % 3)).collect());
            Scanpath::new(s, g, i, fixations, labels).unwrap()
        })
}

proptest! {
    #[test]
    fn csv_round_trip(sps in prop::collection::vec(scanpath(), 1..5)) {
        // one file holds distinct keys and uniform labelling
        let mut seen = std::collections::HashSet::new();
        let labelled = sps[0].aoi_labels.is_some();
        let sps: Vec<Scanpath> = sps
            .into_iter()
            .filter(|s| seen.insert(s.key()))
            .map(|mut s| {
                if !labelled {
                    s.aoi_labels = None;
                } else if s.aoi_labels.is_none() {
                    s.aoi_labels = Some(vec!["A0".into(); s.len()]);
                }
                s
            })
            .collect();
        let mut buf = Vec::new();
        write_scanpaths(&mut buf, &sps).unwrap();
        let mut back = parse_scanpaths(buf.as_slice(), "round trip").unwrap();
        let mut want = sps.clone();
        back.sort_by_key(Scanpath::key);
        want.sort_by_key(Scanpath::key);
        prop_assert_eq!(back, want);
    }
}
