use proptest::prelude::*;
use scanpath_core::align::{
    default_gap, feature_distance, local_align, local_align_with_matrix, symbolic_align, Metric, ScoringParams, Step,
};
use scanpath_core::embed::EmbeddedScanpath;
use scanpath_core::model::Group;
use scanpath_core::pairwise::{aggregate_by_subject, all_pairs, export_matrix, load_matrix, Level};
use scanpath_core::Error;

fn sp(subject: &str, stimulus: &str, rows: &[Vec<f32>]) -> EmbeddedScanpath {
    EmbeddedScanpath::from_rows(subject, Group::Unknown, stimulus, rows).unwrap()
}

/// Scalar loop references for the three metrics.
fn reference_distance(u: &[f32], v: &[f32], metric: Metric) -> f64 {
    let mut l1 = 0.0f64;
    let mut sq = 0.0f64;
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for k in 0..u.len() {
        let (a, b) = (u[k] as f64, v[k] as f64);
        l1 += (a - b).abs();
        sq += (a - b) * (a - b);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    match metric {
        Metric::L1 => l1,
        Metric::L2 => sq.sqrt(),
        Metric::Cosine => (1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0),
    }
}

#[test]
fn distances_match_the_scalar_loop_on_integer_vectors() {
    let mut state = 88172645463325252u64;
    let mut next = |hi: u64| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state % hi
    };
    for _ in 0..100 {
        let dim = 1 + next(8) as usize;
        let u: Vec<f32> = (0..dim).map(|_| next(50) as f32).collect();
        let v: Vec<f32> = (0..dim).map(|_| 1.0 + next(50) as f32).collect();
        for metric in [Metric::L1, Metric::L2] {
            assert_eq!(feature_distance(&u, &v, metric).unwrap(), reference_distance(&u, &v, metric));
        }
        if u.iter().any(|&x| x != 0.0) {
            let got = feature_distance(&u, &v, Metric::Cosine).unwrap();
            assert!((got - reference_distance(&u, &v, Metric::Cosine)).abs() < 1e-12);
        }
    }
    assert_eq!(feature_distance(&[1.0, 2.0], &[3.0, 0.0], Metric::L1).unwrap(), 4.0);
    for metric in [Metric::L1, Metric::L2, Metric::Cosine] {
        assert_eq!(feature_distance(&[0.3, 7.0, 2.5], &[0.3, 7.0, 2.5], metric).unwrap(), 0.0);
    }
    assert!(matches!(feature_distance(&[0.0, 0.0], &[1.0, 0.0], Metric::Cosine), Err(Error::ZeroVector)));
    assert!(matches!(feature_distance(&[1.0], &[1.0, 0.0], Metric::L1), Err(Error::DimMismatch(1, 2))));
}

#[test]
fn single_fixation_similarity_is_c_minus_d_clamped() {
    let a = sp("a", "i", &[vec![0.0]]);
    let params = |c| ScoringParams::new(c, 2.0 * c, Metric::L1).unwrap();
    assert_eq!(local_align(&a, &sp("b", "i", &[vec![3.0]]), &params(10.0)).unwrap().normalized, 7.0);
    let far = local_align(&a, &sp("b", "i", &[vec![15.0]]), &params(10.0)).unwrap();
    assert_eq!((far.normalized, far.score), (0.0, 0.0));
    assert!(far.path.is_empty());
}

#[test]
fn identical_scanpaths_run_the_full_diagonal() {
    let rows: Vec<Vec<f32>> = (0..5).map(|k| vec![k as f32 * 3.0, 1.0]).collect();
    let a = sp("a", "i", &rows);
    let (r, m) = local_align_with_matrix(&a, &a, &ScoringParams::new(2.5, 5.0, Metric::L1).unwrap()).unwrap();
    assert_eq!(r.score, 12.5);
    assert_eq!(r.normalized, 2.5);
    assert_eq!(r.path, (0..5).map(|k| Step::Match { a: k, b: k }).collect::<Vec<_>>());
    assert_eq!((m.rows(), m.cols()), (6, 6));
    assert_eq!(m.to_csv().lines().next().unwrap(), "0,0,0,0,0,0");
}

#[test]
fn symbolic_baseline_examples() {
    let abc = symbolic_align(&['A', 'B', 'C'], &['A', 'B', 'C']).unwrap();
    assert_eq!((abc.score, abc.normalized), (3.0, 1.0));
    assert_eq!(symbolic_align(&['A', 'X', 'C'], &['A', 'Y', 'C']).unwrap().score, 1.0);
}

#[test]
fn gap_rule() {
    assert_eq!(default_gap(21_049.0), 42_098.0);
    assert_eq!(default_gap(0.0), 0.0);
    assert_eq!(default_gap(10.0), 20.0);
}

fn random_scanpaths(count: usize, seed: u64) -> Vec<EmbeddedScanpath> {
    let mut state = seed | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 40) as f32 / (1u64 << 24) as f32
    };
    (0..count)
        .map(|k| {
            let len = 1 + (next() * 9.0) as usize;
            let rows: Vec<Vec<f32>> = (0..len).map(|_| (0..12).map(|_| next() * 40.0).collect()).collect();
            sp(&format!("s{:02}", k / 2), &format!("i{}", k % 2), &rows)
        })
        .collect()
}

#[test]
fn worker_count_does_not_change_the_matrix() {
    let sps = random_scanpaths(20, 11);
    let params = ScoringParams::new(60.0, 120.0, Metric::L2).unwrap();
    let one = all_pairs(&sps, &params, 1).unwrap();
    for workers in [2, 3, 8, 64] {
        assert_eq!(all_pairs(&sps, &params, workers).unwrap(), one);
    }
    for p in 0..one.len() {
        assert_eq!(one.get(p, p), 60.0);
    }
}

#[test]
fn exported_matrices_reload_exactly_as_quantized() {
    let dir = tempfile::tempdir().unwrap();
    let sps = random_scanpaths(10, 5);
    let m = all_pairs(&sps, &ScoringParams::new(33.3, 70.0, Metric::L1).unwrap(), 2).unwrap();
    let csv = dir.path().join("m.csv");
    export_matrix(&m, &csv, Some(&dir.path().join("m.pgm"))).unwrap();
    let back = load_matrix(&csv).unwrap();
    assert_eq!(back, m.quantized());
    for (x, y) in back.values().iter().zip(m.values()) {
        assert!((x - y).abs() <= f32::EPSILON as f64 * y.abs().max(1.0));
    }
    let subjects = aggregate_by_subject(&back).unwrap();
    assert_eq!(subjects.level, Level::Subject);
    assert_eq!(subjects.len(), 5);
}

proptest! {
    #[test]
    fn similarity_stays_within_zero_and_c(
        a in prop::collection::vec(prop::collection::vec(0.0f32..10.0, 3), 1..7),
        b in prop::collection::vec(prop::collection::vec(0.0f32..10.0, 3), 1..7),
        c in 0.0f64..30.0,
        gap in 0.0f64..60.0,
    ) {
        let params = ScoringParams::new(c, gap, Metric::L1).unwrap();
        let r = local_align(&sp("a", "i", &a), &sp("b", "i", &b), &params).unwrap();
        prop_assert!(r.normalized >= 0.0 && r.normalized <= c);
        prop_assert!(r.score >= 0.0);
    }
}
