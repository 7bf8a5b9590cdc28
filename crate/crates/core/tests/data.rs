use std::path::Path;

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sstda::data::{
    decode_features, encode_features, load_dataset, make_label_mask, parse_bundle, parse_key_values, parse_labels,
    read_features, synthetic_corpus, write_features, ClassMap, MaskMode, SynthConfig,
};

fn random_bytes(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = rng.random_range(0..64);
    (0..len).map(|_| rng.random()).collect()
}

/// Random bytes, plus valid images with random corruption, so that parsers
/// are exercised past their first check.
fn fuzz_inputs(valid: &[u8], seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<u8>> = (0..1000).map(|_| random_bytes(&mut rng)).collect();
    for _ in 0..1000 {
        let mut v = valid.to_vec();
        match rng.random_range(0..3) {
            0 => v.truncate(rng.random_range(0..=valid.len())),
            1 => {
                let i = rng.random_range(0..v.len());
                v[i] = rng.random();
            }
            _ => v.extend(random_bytes(&mut rng)),
        }
        out.push(v);
    }
    out
}

#[test]
fn readers_reject_garbage_without_panicking() {
    let p = Path::new("fuzz");
    let map = ClassMap::new(vec!["pour".into(), "stir".into()]).unwrap();
    let fseq = encode_features(&Array2::from_elem((3, 2), 0.5f32)).unwrap();
    let mut accepted = 0;
    for bytes in fuzz_inputs(&fseq, 1) {
        if let Ok(x) = decode_features(&bytes, p) {
            // only well-formed images decode, and they decode completely
            assert_eq!(bytes.len(), 16 + 4 * x.len());
            accepted += 1;
        }
    }
    assert!(accepted < 1000);
    for bytes in fuzz_inputs(b"pour\nstir\nstir\n", 2) {
        if let Ok(l) = parse_labels(&bytes, p, &map) {
            assert!(!l.is_empty() && l.iter().all(|&c| c < 2));
        }
    }
    for bytes in fuzz_inputs(b"0 pour\n1 stir\n", 3) {
        if let Ok(m) = ClassMap::parse(&bytes, p) {
            assert!(!m.is_empty());
        }
    }
    for bytes in fuzz_inputs(b"a\nb\n", 4) {
        if let Ok(ids) = parse_bundle(&bytes, p) {
            assert!(!ids.is_empty());
        }
    }
    for bytes in fuzz_inputs(b"noise = 1.0\nseed = 3\n", 5) {
        let _ = parse_key_values(&bytes, p);
        let _ = SynthConfig::parse(&bytes, p);
    }
}

#[test]
fn fseq_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array2::from_shape_fn((5, 3), |_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff));
    let path = dir.path().join("x.fseq");
    write_features(&path, &x).unwrap();
    let back = read_features(&path).unwrap();
    assert!(x.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let raw = std::fs::read(&path).unwrap();
    assert_eq!(&raw[..4], b"FSEQ");
    assert_eq!(&raw[4..16], &[1, 0, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0]);
}

#[test]
fn generated_corpus_saves_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        source_videos: 3,
        target_videos: 2,
        ..SynthConfig::default()
    };
    let d = synthetic_corpus(&cfg, 11).unwrap();
    d.save(dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), d);
    assert_eq!(d.split("source").unwrap().len(), 3);
    assert_eq!(d.split("target").unwrap().len(), 2);
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let cfg = SynthConfig {
        source_videos: 2,
        target_videos: 2,
        ..SynthConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synthetic_corpus(&cfg, 3).unwrap().save(a.path()).unwrap();
    synthetic_corpus(&cfg, 3).unwrap().save(b.path()).unwrap();
    for sub in ["features/src000.fseq", "groundTruth/tgt001.txt", "mapping.txt", "splits/source.bundle"] {
        assert_eq!(std::fs::read(a.path().join(sub)).unwrap(), std::fs::read(b.path().join(sub)).unwrap());
    }
}

proptest! {
    #[test]
    fn mask_count_is_ceiling_and_monotone(t in 1usize..400, f1 in 0.001f64..=1.0, f2 in 0.001f64..=1.0) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let count = |f: f64| make_label_mask(t, f, 0, MaskMode::Stride).unwrap().iter().filter(|&&b| b).count();
        let n = count(lo);
        prop_assert!(n <= count(hi));
        prop_assert!(n >= 1 && n <= t);
        prop_assert!((n as f64) >= lo * t as f64 - 1e-6 && ((n - 1) as f64) < lo * t as f64);
    }

    #[test]
    fn stride_mask_spreads_evenly(t in 1usize..400, f in 0.01f64..=1.0) {
        let m = make_label_mask(t, f, 0, MaskMode::Stride).unwrap();
        let kept: Vec<usize> = (0..t).filter(|&i| m[i]).collect();
        let n = kept.len();
        let gap = t.div_ceil(n);
        prop_assert!(kept.windows(2).all(|w| w[1] - w[0] <= gap));
        prop_assert_eq!(kept[0], 0);
    }
}
