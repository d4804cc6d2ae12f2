use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use voxface::data_pipeline::{render_frame, render_window, resize_area, rms, toy_identity, FaceImage};
use voxface::encoders::*;
use voxface::Error;
use voxface_nn::{Binder, NnError, ParamStore, Tape, Tensor};

const SR: f64 = 16_000.0;

fn bank(n: usize, k: usize) -> (ParamStore<f64>, SincConv) {
    let mut store = ParamStore::new();
    let conv = SincConv::new(&mut store, "sinc", n, k, SR, 50.0).unwrap();
    (store, conv)
}

/// Magnitude response sampled on `n_fft / 2 + 1` bins from DC to Nyquist.
fn magnitude(kernel: &[f64], n_fft: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n_fft, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    buf[..=n_fft / 2].iter().map(|c| c.norm()).collect()
}

fn assert_band_pass(store: &ParamStore<f64>, conv: &SincConv) {
    for (i, k) in conv.kernels(store).iter().enumerate() {
        let mag = magnitude(k, 4096);
        let (peak_bin, peak) = mag
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (j, &m)| if m > acc.1 { (j, m) } else { acc });
        let last = mag.len() - 1;
        assert!(peak_bin > 0 && peak_bin < last, "filter {i} peaks at bin {peak_bin}");
        assert!(mag[0] < 0.1 * peak && mag[last] < 0.1 * peak, "filter {i}: dc {} nyq {} peak {peak}", mag[0], mag[last]);
    }
}

fn run_bank(store: &ParamStore<f64>, conv: &SincConv, x: &[f64]) -> Vec<Vec<f64>> {
    let tape = Tape::<f64>::new();
    let b = Binder::frozen(&tape, store, false);
    let input = tape.constant(Tensor::from_f64(&[1, 1, x.len()], x).unwrap());
    let y = conv.forward(&b, input).value();
    let t = y.dim(2);
    y.data().chunks(t).map(|c| c.to_vec()).collect()
}

fn tone(freq: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / SR).sin()).collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn initial_sinc_banks_are_band_pass_and_clamped() {
    for (n, k) in [(16, 129), (64, 251), (4, 33)] {
        let (store, conv) = bank(n, k);
        assert_band_pass(&store, &conv);
        for (lo, hi) in conv.band_edges(&store) {
            assert!(lo >= 0.0 && hi <= SR / 2.0 && hi - lo >= 50.0 - 1e-9, "({lo}, {hi})");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn any_cutoff_parameters_give_band_pass_filters(
        lows in proptest::collection::vec(-20_000.0f64..20_000.0, 8),
        bands in proptest::collection::vec(-20_000.0f64..20_000.0, 8),
    ) {
        let (mut store, conv) = bank(8, 129);
        store.set(conv.low, Tensor::from_f64(&[8], &lows).unwrap());
        store.set(conv.band, Tensor::from_f64(&[8], &bands).unwrap());
        for (lo, hi) in conv.band_edges(&store) {
            prop_assert!(lo >= 0.0 && hi <= SR / 2.0 && hi > lo);
        }
        assert_band_pass(&store, &conv);
    }
}

#[test]
fn in_band_tone_dominates_out_of_band_tone() {
    let (store, conv) = bank(16, 129);
    let kernels = conv.kernels(&store);
    let n_fft = 8192;
    for (i, (lo, hi)) in conv.band_edges(&store).into_iter().enumerate() {
        let mag = magnitude(&kernels[i], n_fft);
        let hz = |bin: usize| bin as f64 * SR / n_fft as f64;
        let bin_of = |f: f64| (f * n_fft as f64 / SR).round() as usize;
        // In-band probe at the response peak, out-of-band probe as far from
        // the band as the spectrum allows.
        let peak_bin = (bin_of(lo)..=bin_of(hi)).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
        let f_in = hz(peak_bin);
        let f_out = if (lo + hi) / 2.0 < SR / 4.0 { SR / 2.0 - 500.0 } else { 500.0 };
        let e_in = energy(&run_bank(&store, &conv, &tone(f_in, 4000))[i]);
        let e_out = energy(&run_bank(&store, &conv, &tone(f_out, 4000))[i]);
        assert!(e_in > 10.0 * e_out, "filter {i} [{lo:.0}, {hi:.0}]: in {e_in} out {e_out}");
        // A steady tone through an LTI filter has power |H(f)|^2 / 2.
        let predicted = mag[peak_bin].powi(2) / 2.0;
        assert!((e_in - predicted).abs() < 0.05 * predicted, "filter {i}: {e_in} vs {predicted}");
    }
}

#[test]
fn dc_input_is_rejected_and_response_is_linear() {
    let (store, conv) = bank(16, 129);
    let dc = run_bank(&store, &conv, &vec![1.0; 600]);
    for ch in &dc {
        assert!(ch.iter().all(|v| v.abs() < 0.02), "dc leak {:?}", ch.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..600).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    for (a, b) in run_bank(&store, &conv, &x).iter().zip(run_bank(&store, &conv, &x2)) {
        for (u, v) in a.iter().zip(&b) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn sinc_cutoff_gradients_match_finite_differences() {
    let (mut store, conv) = bank(3, 33);
    // Put one filter against the upper clamp to exercise the zero-gradient branch.
    let mut low = store.get(conv.low).clone();
    low.data_mut()[2] = 20_000.0;
    store.set(conv.low, low);
    let weights: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..3 * 33).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    let loss = |s: &ParamStore<f64>| -> f64 {
        conv.kernels(s).concat().iter().zip(&weights).map(|(k, w)| k * w).sum()
    };
    let tape = Tape::<f64>::new();
    let b = Binder::new(&tape, &store, true);
    let w = tape.constant(Tensor::from_f64(&[3, 1, 33], &weights).unwrap());
    let l = conv.kernel_var(&b).mul(w).sum();
    let grads = b.grads(&tape.backward(l));
    for id in [conv.low, conv.band] {
        let g = grads.get(id).unwrap().clone();
        for j in 0..3 {
            let h = 1e-3;
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[j] += h;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[j] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - g.data()[j]).abs() < 1e-7 * (1.0 + fd.abs()), "param {j}: fd {fd} vs {}", g.data()[j]);
        }
    }
}

fn toy_wave(id: usize, n: usize, seed: u64) -> Vec<f32> {
    let ident = toy_identity(7, id);
    let w = render_window(&ident, 16_000, n, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = rms(&w) as f32;
    w.iter().map(|v| v * 0.01 / r).collect()
}

fn toy_face(id: usize, size: usize, seed: u64) -> FaceImage {
    let raw = render_frame(&toy_identity(7, id), size, &mut ChaCha8Rng::seed_from_u64(seed));
    FaceImage::new(size, raw.data.iter().map(|v| v * 2.0 - 1.0).collect()).unwrap()
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn speech_encoder_is_deterministic_and_nearly_shift_invariant() {
    let pair = EncoderPair::new(SpeechEncoderArch::toy(), FaceEncoderArch::toy(), 11).unwrap();
    let long = toy_wave(3, 16_400, 5);
    let a = &long[..16_000];
    let a2 = a.to_vec();
    let shifted = &long[32..16_032];
    let e = pair.speech.embed(&pair.store, &[a, &a2, shifted]).unwrap();
    assert_eq!(e[0].len(), EMBED_DIM);
    assert_eq!(e[0], e[1]);
    let c = cosine(&e[0], &e[2]);
    assert!(c > 0.99, "cosine {c}");
}

#[test]
fn speech_embedding_size_does_not_depend_on_duration() {
    let pair = EncoderPair::new(SpeechEncoderArch::toy(), FaceEncoderArch::toy(), 1).unwrap();
    for n in [pair.speech.min_input_len(), 16_000, 24_000] {
        let w = toy_wave(0, n, 2);
        let e = pair.speech.embed(&pair.store, &[&w]).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].len(), EMBED_DIM);
    }
    let arch = SpeechEncoderArch::full();
    assert!(arch.output_frames(96_000).unwrap() > 1);
    let mut store = ParamStore::<f32>::new();
    let enc = SpeechEncoder::new(arch, &mut store, "s.", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let w = toy_wave(1, 96_000, 3);
    let e = enc.embed(&store, &[&w]).unwrap();
    assert_eq!(e[0].len(), EMBED_DIM);
    assert!(e[0].iter().all(|v| v.is_finite()));
}

#[test]
fn speech_input_below_receptive_field_is_rejected() {
    let pair = EncoderPair::new(SpeechEncoderArch::toy(), FaceEncoderArch::toy(), 1).unwrap();
    let min = pair.speech.min_input_len();
    assert!(pair.speech.arch.output_frames(min).is_some());
    assert!(pair.speech.arch.output_frames(min - 1).is_none());
    let w = vec![0.01f32; min - 1];
    assert!(matches!(pair.speech.embed(&pair.store, &[&w]), Err(Error::InvalidInput(_))));
}

#[test]
fn face_encoder_reaches_four_by_four_before_pooling() {
    for arch in [FaceEncoderArch::full(), FaceEncoderArch::toy()] {
        assert_eq!(arch.feature_map_size(), 4);
        let mut store = ParamStore::<f32>::new();
        let enc = FaceEncoder::new(arch.clone(), &mut store, "f.", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let face = toy_face(2, arch.image_size, 1);
        let tape = Tape::<f32>::new();
        let b = Binder::frozen(&tape, &store, false);
        let x = tape.constant(stack_faces(&[&face]).unwrap());
        let map = enc.feature_map(&b, x).unwrap();
        assert_eq!(map.shape(), vec![1, arch.feature_channels(), 4, 4]);
        let e = enc.embed(&store, &[&face, &face]).unwrap();
        assert_eq!(e[0], e[1]);
        assert_eq!(e[0].len(), EMBED_DIM);
    }
}

#[test]
fn face_encoder_rejects_wrong_resolution() {
    let pair = EncoderPair::new(SpeechEncoderArch::toy(), FaceEncoderArch::toy(), 1).unwrap();
    let face = toy_face(0, 16, 0);
    assert!(matches!(pair.face.embed(&pair.store, &[&face]), Err(Error::InvalidInput(_))));
    let big = toy_face(0, 64, 0);
    let raw = voxface::data_pipeline::RawImage {
        width: 64,
        height: 64,
        data: big.data.iter().map(|v| (v + 1.0) / 2.0).collect(),
    };
    let small = resize_area(&raw, 32, 32);
    let ok = FaceImage::new(32, small.data.iter().map(|v| v * 2.0 - 1.0).collect()).unwrap();
    assert!(pair.face.embed(&pair.store, &[&ok]).is_ok());
}

#[test]
fn encoder_outputs_stay_finite_under_fuzzing() {
    // 10k random inputs through the minimal architectures, plus a smaller
    // sample through the desk-scale ones.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let tiny = EncoderPair::new(SpeechEncoderArch::tiny(), FaceEncoderArch::tiny(), 5).unwrap();
    let toy = EncoderPair::new(SpeechEncoderArch::toy(), FaceEncoderArch::toy(), 5).unwrap();
    let random_wave = |n: usize, rng: &mut ChaCha8Rng| {
        let scale: f32 = 10f32.powf(rng.random_range(-4.0..1.0));
        let w: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0f32..1.0) * scale).collect();
        let r = rms(&w) as f32;
        w.iter().map(|v| v * 0.01 / r).collect::<Vec<f32>>()
    };
    let random_face = |s: usize, rng: &mut ChaCha8Rng| {
        FaceImage::new(s, (0..3 * s * s).map(|_| rng.random_range(-1.0f32..=1.0)).collect()).unwrap()
    };
    for _ in 0..(10_000 / 250) {
        let waves: Vec<Vec<f32>> = (0..250).map(|_| random_wave(400, &mut rng)).collect();
        let refs: Vec<&[f32]> = waves.iter().map(|w| w.as_slice()).collect();
        let faces: Vec<FaceImage> = (0..250).map(|_| random_face(8, &mut rng)).collect();
        let frefs: Vec<&FaceImage> = faces.iter().collect();
        let es = tiny.speech.embed(&tiny.store, &refs).unwrap();
        let ef = tiny.face.embed(&tiny.store, &frefs).unwrap();
        assert!(es.iter().chain(&ef).flatten().all(|v| v.is_finite()));
    }
    let waves: Vec<Vec<f32>> = (0..32).map(|_| random_wave(16_000, &mut rng)).collect();
    let refs: Vec<&[f32]> = waves.iter().map(|w| w.as_slice()).collect();
    let faces: Vec<FaceImage> = (0..64).map(|_| random_face(32, &mut rng)).collect();
    let frefs: Vec<&FaceImage> = faces.iter().collect();
    let es = toy.speech.embed(&toy.store, &refs).unwrap();
    let ef = toy.face.embed(&toy.store, &frefs).unwrap();
    assert!(es.iter().chain(&ef).flatten().all(|v| v.is_finite()));
}

#[test]
fn checkpoint_round_trip_reproduces_outputs_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut pair = EncoderPair::new(SpeechEncoderArch::toy(), FaceEncoderArch::toy(), 21).unwrap();
    // Make running statistics non-trivial so buffers are exercised too.
    for (id, p) in pair.store.iter().map(|(id, p)| (id, p.buffer)).collect::<Vec<_>>() {
        if p {
            let t = pair.store.get(id).map(|v| v * 1.5 + 0.01);
            pair.store.set(id, t);
        }
    }
    pair.save(dir.path(), &serde_json::json!({"note": "probe"})).unwrap();
    let loaded = EncoderPair::load(dir.path(), Some((&SpeechEncoderArch::toy(), &FaceEncoderArch::toy()))).unwrap();
    assert!(pair.store.values_equal(&loaded.store));
    let w = toy_wave(4, 16_000, 8);
    let f = toy_face(4, 32, 8);
    assert_eq!(pair.speech.embed(&pair.store, &[&w]).unwrap(), loaded.speech.embed(&loaded.store, &[&w]).unwrap());
    assert_eq!(pair.face.embed(&pair.store, &[&f]).unwrap(), loaded.face.embed(&loaded.store, &[&f]).unwrap());
}

#[test]
fn mismatched_checkpoints_fail_loudly() {
    let dir = tempfile::tempdir().unwrap();
    let pair = EncoderPair::new(SpeechEncoderArch::toy(), FaceEncoderArch::toy(), 2).unwrap();
    pair.save(dir.path(), &serde_json::Value::Null).unwrap();
    let err = EncoderPair::load(dir.path(), Some((&SpeechEncoderArch::tiny(), &FaceEncoderArch::toy()))).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(NnError::ArchMismatch(_))), "{err}");

    let mut store = ParamStore::<f32>::new();
    let err = load_face_encoder(&EncoderPair::speech_path(dir.path()), &mut store, "f.", None).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(NnError::ArchMismatch(_))), "{err}");

    let path = EncoderPair::face_path(dir.path());
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    let err = EncoderPair::load(dir.path(), None).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(NnError::VersionMismatch { found: 7, .. })), "{err}");
}
