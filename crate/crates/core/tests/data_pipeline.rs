use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use voxface::data_pipeline::*;
use voxface::Error;

fn toy_cfg(n_identities: usize, clips: usize) -> ToyConfig {
    ToyConfig {
        n_identities,
        clips_per_identity: clips,
        frames_per_clip: 4,
        window_s: 0.25,
        ..ToyConfig::default()
    }
}

fn toy_dataset(n_identities: usize, clips: usize, seed: u64) -> Dataset {
    let cfg = toy_cfg(n_identities, clips);
    let audio = AudioConfig {
        sample_rate: 16_000,
        duration_s: 0.25,
        rms_reference: 0.01,
    };
    let image = ImageConfig { size: 32, flip: true };
    Dataset::from_sources(synthesize_sources(&cfg, seed).unwrap(), audio, image, None).unwrap()
}

#[test]
fn toy_manifest_has_expected_count_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = ToyConfig {
        frames_per_clip: 2,
        window_s: 0.05,
        image_size: 8,
        ..ToyConfig::default()
    };
    let recs = synthesize_toy_dataset(&cfg, 7, a.path()).unwrap();
    synthesize_toy_dataset(&cfg, 7, b.path()).unwrap();
    assert_eq!(recs.len(), 100);
    let ma = std::fs::read(a.path().join("manifest.jsonl")).unwrap();
    let mb = std::fs::read(b.path().join("manifest.jsonl")).unwrap();
    assert_eq!(ma, mb);
    for r in recs.iter().take(3) {
        let wa = std::fs::read(a.path().join(&r.audio_path)).unwrap();
        let wb = std::fs::read(b.path().join(&r.audio_path)).unwrap();
        assert_eq!(wa, wb);
    }
    let loaded = read_manifest(&a.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded, recs);
}

#[test]
fn single_identity_is_rejected() {
    assert!(matches!(synthesize_sources(&toy_cfg(1, 5), 0), Err(Error::InvalidInput(_))));
}

fn power_spectrum(x: &[f32], bins: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let half = buf.len() / 2;
    let per = half / bins;
    let power: Vec<f64> = (0..bins)
        .map(|b| buf[b * per..(b + 1) * per].iter().map(|c| c.norm_sqr()).sum())
        .collect();
    let total: f64 = power.iter().sum();
    power.into_iter().map(|p| p / total).collect()
}

fn color_histogram(img: &RawImage) -> Vec<f64> {
    let n = img.width * img.height;
    let mut h = vec![0.0; 512];
    for p in 0..n {
        let q = |c: usize| ((img.data[c * n + p] * 8.0) as usize).min(7);
        h[q(0) * 64 + q(1) * 8 + q(2)] += 1.0 / n as f64;
    }
    h.into_iter().map(f64::sqrt).collect()
}

fn nearest_centroid_accuracy(train: &[(usize, Vec<f64>)], test: &[(usize, Vec<f64>)], classes: usize) -> f64 {
    let dim = train[0].1.len();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (c, f) in train {
        counts[*c] += 1;
        for (s, v) in sums[*c].iter_mut().zip(f) {
            *s += v;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect();
    let correct = test
        .iter()
        .filter(|(c, f)| {
            let d = |m: &Vec<f64>| m.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..classes)
                .min_by(|&a, &b| d(&centroids[a]).partial_cmp(&d(&centroids[b])).unwrap())
                .unwrap();
            best == *c
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Identity must be recoverable from raw features of either modality.
#[test]
fn toy_identity_is_recoverable_from_both_modalities() {
    let cfg = ToyConfig {
        frames_per_clip: 4,
        window_s: 0.25,
        ..ToyConfig::default()
    };
    let sources = synthesize_sources(&cfg, 3).unwrap();
    let win = (cfg.sample_rate as f64 * cfg.window_s) as usize;
    let (mut a_train, mut a_test, mut i_train, mut i_test) = (vec![], vec![], vec![], vec![]);
    for (k, src) in sources.iter().enumerate() {
        let (ident, clip) = (k / cfg.clips_per_identity, k % cfg.clips_per_identity);
        for f in 0..cfg.frames_per_clip {
            let af = power_spectrum(&src.audio[f * win..(f + 1) * win], 256);
            let imf = color_histogram(&src.frames[f]);
            if clip < 4 {
                a_train.push((ident, af));
                i_train.push((ident, imf));
            } else {
                a_test.push((ident, af));
                i_test.push((ident, imf));
            }
        }
    }
    let acc_a = nearest_centroid_accuracy(&a_train, &a_test, cfg.n_identities);
    let acc_i = nearest_centroid_accuracy(&i_train, &i_test, cfg.n_identities);
    assert!(acc_a > 0.95, "audio accuracy {acc_a}");
    assert!(acc_i > 0.95, "image accuracy {acc_i}");
}

#[test]
fn kway_on_minimal_pool_uses_every_other_clip() {
    let ds = toy_dataset(10, 1, 5);
    let pool: Vec<usize> = (0..10).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for ex in ds.sample_kway_batch(&pool, 10, Mode::VoiceToFace, 20, &mut rng).unwrap() {
        let clips: HashSet<usize> = ex.candidates.iter().map(|c| c.clip).collect();
        assert_eq!(clips.len(), 10);
    }
    assert!(matches!(
        ds.sample_kway_batch(&pool, 11, Mode::VoiceToFace, 1, &mut rng),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn two_way_has_one_negative() {
    let ds = toy_dataset(4, 2, 5);
    let pool: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for ex in ds.sample_kway_batch(&pool, 2, Mode::FaceToVoice, 10, &mut rng).unwrap() {
        assert_eq!(ex.candidates.len(), 2);
        let negatives = ex.candidates.iter().filter(|c| c.clip != ex.anchor.clip).count();
        assert_eq!(negatives, 1);
    }
}

#[test]
fn splits_are_disjoint_and_val_examples_persist() {
    let ds = toy_dataset(12, 5, 9);
    let splits = Splits::create(&ds, 0.2, 0.2, 10, 4).unwrap();
    let all: Vec<&String> = splits.train.iter().chain(&splits.val).chain(&splits.test).collect();
    assert_eq!(all.len(), ds.len());
    assert_eq!(all.iter().collect::<HashSet<_>>().len(), ds.len());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("splits.json");
    splits.write(&p).unwrap();
    assert_eq!(Splits::read(&p).unwrap(), splits);
    let v10 = splits.val_examples(&ds, Mode::VoiceToFace, 10).unwrap();
    let v2 = splits.val_examples(&ds, Mode::VoiceToFace, 2).unwrap();
    assert_eq!(v10.len(), v2.len());
    for (a, b) in v10.iter().zip(&v2) {
        assert_eq!(a.anchor, b.anchor);
        assert_eq!(a.candidates[a.positive_index], b.candidates[b.positive_index]);
    }
    // Same seed, same persisted negatives.
    assert_eq!(Splits::create(&ds, 0.2, 0.2, 10, 4).unwrap(), splits);
}

#[test]
fn speech_windows_have_fixed_length_and_level() {
    let ds = toy_dataset(3, 2, 2);
    let w = ds.speech_fixed(ItemRef { clip: 1, index: 2 }).unwrap();
    assert_eq!(w.samples.len(), 4000);
    assert!((w.rms() - 0.01).abs() < 1e-6);
    assert_eq!(w, ds.speech_fixed(ItemRef { clip: 1, index: 2 }).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn examples_respect_pairing_invariants(seed in any::<u64>(), k in 2usize..8, fv in any::<bool>()) {
        let ds = toy_dataset(8, 2, 11);
        let pool: Vec<usize> = (0..ds.len()).collect();
        let mode = if fv { Mode::FaceToVoice } else { Mode::VoiceToFace };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = ds.sample_kway_batch(&pool, k, mode, 16, &mut rng).unwrap();
        for ex in &batch {
            prop_assert_eq!(ex.candidates.len(), k);
            prop_assert!(ex.positive_index < k);
            let pos = ex.candidates[ex.positive_index];
            prop_assert_eq!(pos.clip, ex.anchor.clip);
            prop_assert_ne!(pos.index, ex.anchor.index);
            for (j, c) in ex.candidates.iter().enumerate() {
                if j != ex.positive_index {
                    prop_assert_ne!(c.clip, ex.anchor.clip);
                    prop_assert_ne!(ds.identity_of(c.clip), ds.identity_of(ex.anchor.clip));
                }
            }
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(batch, ds.sample_kway_batch(&pool, k, mode, 16, &mut rng2).unwrap());
    }

    #[test]
    fn preprocessed_audio_has_exact_length_and_rms(
        len in 1usize..40_000,
        rate in prop::sample::select(vec![8_000u32, 16_000, 22_050, 44_100]),
        amp in 1e-3f32..10.0,
        seed in any::<u64>(),
    ) {
        let raw: Vec<f32> = (0..len).map(|i| amp * ((i as f32) * 0.37).sin() + amp * 0.1).collect();
        let cfg = AudioConfig { sample_rate: 16_000, duration_s: 1.5, rms_reference: 0.01 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match preprocess_audio(&raw, rate, &cfg, &mut rng) {
            Ok(w) => {
                prop_assert_eq!(w.samples.len(), 24_000);
                prop_assert!((w.rms() - 0.01).abs() < 1e-6);
            }
            Err(Error::InvalidInput(_)) => prop_assert!(len as f64 * 16_000.0 / (rate as f64) < 0.5),
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        }
    }

    #[test]
    fn flip_is_an_involution(seed in any::<u64>(), size in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..3 * size * size).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let img = FaceImage::new(size, data).unwrap();
        prop_assert_eq!(img.flipped().flipped(), img);
    }
}
