use scanpath_core::embed::{
    builtin_embed, check_uniform_dim, decode_dsem, embed_dataset, encode_dsem, load_embeddings, write_dsem,
    BuiltinProvider, EmbeddedScanpath, BUILTIN_DIM,
};
use scanpath_core::model::{Dataset, Fixation, Group, Scanpath, StimulusImage};
use scanpath_core::patch::{Patch, PatchConfig};
use scanpath_core::Error;

fn patch(size: usize, f: impl Fn(usize, usize) -> u8) -> Patch {
    Patch {
        size,
        pixels: (0..size * size).map(|k| f(k % size, k / size)).collect(),
        origin_x: 0,
        origin_y: 0,
        fixation_index: 0,
    }
}

/// Scalar reference descriptor written straight from its definition: 16x16
/// block means, then per 4x4 cell an 8-bin unsigned orientation histogram of
/// magnitude-weighted gradients normalized to sum 255.
fn reference(size: usize, px: &dyn Fn(usize, usize) -> u8) -> Vec<f32> {
    let at = |x: usize, y: usize| px(x, y) as f64;
    let mut out = Vec::new();
    for by in 0..16 {
        for bx in 0..16 {
            let (x0, x1, y0, y1) = (bx * size / 16, (bx + 1) * size / 16, by * size / 16, (by + 1) * size / 16);
            let mut total = 0.0;
            let mut count = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    total += at(x, y);
                    count += 1.0;
                }
            }
            out.push((total / count) as f32);
        }
    }
    let last = size - 1;
    for cy in 0..4 {
        for cx in 0..4 {
            let mut hist = [0.0f64; 8];
            for y in cy * size / 4..(cy + 1) * size / 4 {
                for x in cx * size / 4..(cx + 1) * size / 4 {
                    let gx = if x == 0 {
                        at(1, y) - at(0, y)
                    } else if x == last {
                        at(last, y) - at(last - 1, y)
                    } else {
                        (at(x + 1, y) - at(x - 1, y)) / 2.0
                    };
                    let gy = if y == 0 {
                        at(x, 1) - at(x, 0)
                    } else if y == last {
                        at(x, last) - at(x, last - 1)
                    } else {
                        (at(x, y + 1) - at(x, y - 1)) / 2.0
                    };
                    let magnitude = (gx * gx + gy * gy).sqrt();
                    if magnitude == 0.0 {
                        continue;
                    }
                    let mut angle = gy.atan2(gx).to_degrees();
                    while angle < 0.0 {
                        angle += 180.0;
                    }
                    while angle >= 180.0 {
                        angle -= 180.0;
                    }
                    let bin = ((angle / 22.5).floor() as usize).min(7);
                    hist[bin] += magnitude;
                }
            }
            let sum: f64 = hist.iter().sum();
            for h in hist {
                out.push(if sum > 0.0 { (h * 255.0 / sum) as f32 } else { 0.0 });
            }
        }
    }
    out
}

#[test]
fn vertical_step_edge_matches_the_scalar_reference() {
    let edge = |x: usize, _y: usize| if x < 50 { 0 } else { 255 };
    let got = builtin_embed(&patch(100, edge)).unwrap();
    let want = reference(100, &edge);
    assert_eq!(got, want);

    // block columns 0..8 cover x < 50, the rest x >= 50
    for row in 0..16 {
        for col in 0..16 {
            assert_eq!(got[row * 16 + col], if col < 8 { 0.0 } else { 255.0 });
        }
    }
    // the edge pixels at x = 49 and x = 50 fall in cell columns 1 and 2, all
    // of their mass in the horizontal-gradient bin
    for cy in 0..4 {
        for cx in 0..4 {
            let hist = &got[256 + (cy * 4 + cx) * 8..256 + (cy * 4 + cx + 1) * 8];
            let first = if cx == 1 || cx == 2 { 255.0 } else { 0.0 };
            assert_eq!(hist[0], first);
            assert!(hist[1..].iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn textured_patches_match_the_scalar_reference() {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    for size in [16, 37, 100] {
        let noise: Vec<u8> = (0..size * size)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 56) as u8
            })
            .collect();
        let px = |x: usize, y: usize| noise[y * size + x];
        let got = builtin_embed(&patch(size, px)).unwrap();
        let want = reference(size, &px);
        assert_eq!(got.len(), BUILTIN_DIM);
        for (k, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!((g - w).abs() <= 1e-3 * w.abs().max(1.0), "size {size} component {k}: {g} vs {w}");
        }
    }
}

fn fixation(index: usize, x: f64, y: f64) -> Fixation {
    Fixation {
        index,
        x,
        y,
        start_ms: index as f64 * 300.0,
        duration_ms: 250.0,
    }
}

#[test]
fn builtin_provider_embeds_every_scanpath() {
    let img = StimulusImage::new("i1", 300, 200, (0..300 * 200).map(|k| (k % 251) as u8).collect()).unwrap();
    let scanpaths: Vec<Scanpath> = (0..4)
        .map(|s| {
            let fx = (0..3).map(|k| fixation(k, 40.0 + 60.0 * k as f64, 30.0 + 20.0 * s as f64)).collect();
            Scanpath::new(format!("s{s}"), Group::Student, "i1", fx, None).unwrap()
        })
        .collect();
    let dataset = Dataset {
        stimuli: [("i1".to_string(), img)].into_iter().collect(),
        scanpaths,
    };
    let embedded = embed_dataset(&dataset, &BuiltinProvider, &PatchConfig::default()).unwrap();
    assert_eq!(embedded.len(), 4);
    assert!(embedded.iter().all(|e| e.dim() == 384 && e.len() == 3));

    let empty = Dataset {
        stimuli: dataset.stimuli.clone(),
        scanpaths: Vec::new(),
    };
    assert!(embed_dataset(&empty, &BuiltinProvider, &PatchConfig::default()).unwrap().is_empty());
}

#[test]
fn dsem_file_with_network_sized_rows() {
    let dir = tempfile::tempdir().unwrap();
    let dim = 25_088;
    let sp = Scanpath::new("s1", Group::Expert, "i1", (0..3).map(|k| fixation(k, 10.0, 10.0)).collect(), None).unwrap();
    let data: Vec<f32> = (0..3 * dim).map(|k| (k % 97) as f32 * 0.5).collect();
    let e = EmbeddedScanpath::new("s1", Group::Expert, "i1", dim, data.clone()).unwrap();
    write_dsem(&dir.path().join("s1_i1.dsem"), &e).unwrap();
    let back = load_embeddings(dir.path(), &sp).unwrap();
    assert_eq!((back.len(), back.dim()), (3, 25_088));
    assert_eq!(back.as_flat(), data.as_slice());

    // two rows for a three-fixation scanpath
    std::fs::write(dir.path().join("s1_i1.dsem"), encode_dsem(dim, 2, &data[..2 * dim])).unwrap();
    assert!(matches!(load_embeddings(dir.path(), &sp), Err(Error::HeaderMismatch { rows: 2, fixations: 3, .. })));

    // body cut short
    let bytes = encode_dsem(dim, 3, &data);
    std::fs::write(dir.path().join("s1_i1.dsem"), &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(load_embeddings(dir.path(), &sp), Err(Error::CorruptFile { .. })));
    assert!(decode_dsem(&bytes[..bytes.len() - 10]).is_err());

    std::fs::remove_file(dir.path().join("s1_i1.dsem")).unwrap();
    assert!(matches!(load_embeddings(dir.path(), &sp), Err(Error::MissingEmbedding(_))));
}

#[test]
fn mixing_builtin_and_network_dimensions_is_rejected() {
    let a = EmbeddedScanpath::new("s1", Group::Expert, "i1", 384, vec![1.0; 384]).unwrap();
    let b = EmbeddedScanpath::new("s2", Group::Expert, "i1", 25_088, vec![1.0; 25_088]).unwrap();
    assert!(matches!(check_uniform_dim(&[a, b]), Err(Error::MixedDim { first: 384, second: 25_088, .. })));
}
