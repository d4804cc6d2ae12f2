use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxface::data_pipeline::*;
use voxface::encoders::*;
use voxface::matching::*;
use voxface::Error;

fn toy(n_identities: usize, clips: usize, frames: usize, seed: u64) -> Dataset {
    let cfg = ToyConfig {
        n_identities,
        clips_per_identity: clips,
        frames_per_clip: frames,
        window_s: 0.1,
        image_size: 8,
        ..ToyConfig::default()
    };
    let audio = AudioConfig {
        sample_rate: 16_000,
        duration_s: 0.05,
        rms_reference: 0.01,
    };
    Dataset::from_sources(synthesize_sources(&cfg, seed).unwrap(), audio, ImageConfig { size: 8, flip: true }, None).unwrap()
}

fn tiny_pair(seed: u64) -> EncoderPair {
    EncoderPair::new(SpeechEncoderArch::tiny(), FaceEncoderArch::tiny(), seed).unwrap()
}

fn cfg(epochs: usize) -> InferenceTrainConfig {
    InferenceTrainConfig {
        k: 4,
        batch_size: 8,
        max_epochs: epochs,
        seed: 3,
        ..InferenceTrainConfig::for_mode(Mode::VoiceToFace)
    }
}

fn setup() -> (Dataset, Splits) {
    let ds = toy(12, 3, 3, 1);
    let splits = Splits::create(&ds, 0.2, 0.2, 4, 0).unwrap();
    (ds, splits)
}

#[test]
fn mode_specific_defaults() {
    let vf = InferenceTrainConfig::for_mode(Mode::VoiceToFace);
    let fv = InferenceTrainConfig::for_mode(Mode::FaceToVoice);
    assert_eq!((vf.batch_size, fv.batch_size), (32, 12));
    assert_eq!((vf.lr_init, vf.momentum, vf.weight_decay), (1e-3, 0.9, 5e-4));
    assert_eq!((vf.decay_factor, vf.patience_epochs, vf.max_decays), (10.0, 1, 3));
    assert!(InferenceTrainConfig { batch_size: 0, ..vf.clone() }.validate().is_err());
}

#[test]
fn schedule_decays_by_ten_and_halts_after_three_decays() {
    let (ds, splits) = setup();
    let dir = tempfile::tempdir().unwrap();
    // A learning rate this small leaves f32 weights bit-identical, so the
    // validation loss never improves after the first epoch.
    let c = InferenceTrainConfig {
        lr_init: 1e-30,
        freeze_speech: true,
        ..cfg(50)
    };
    let out = train_inference(&c, tiny_pair(0), &ds, &splits, dir.path(), false).unwrap();
    assert!(out.stopped_by_schedule);
    let lrs: Vec<f64> = out.log.iter().map(|e| e.lr).collect();
    assert_eq!(lrs.len(), 4, "{lrs:?}");
    assert_eq!(lrs[..2], [1e-30, 1e-30]);
    assert!((lrs[2] - 1e-31).abs() < 1e-45);
    assert!((lrs[3] - 1e-30 / 100.0).abs() < 1e-45, "lr after two decays");
    let logged = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
    assert_eq!(logged.lines().count(), 4);
    for line in logged.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "lr", "train_loss", "val_loss", "val_acc", "val_acc_2"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (ds, splits) = setup();
    let (a, b, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full_a = train_inference(&cfg(2), tiny_pair(1), &ds, &splits, a.path(), false).unwrap();
    let full_b = train_inference(&cfg(2), tiny_pair(1), &ds, &splits, b.path(), false).unwrap();
    assert_eq!(full_a.log, full_b.log);
    assert!(full_a.encoders.store.values_equal(&full_b.encoders.store));
    assert!(!full_a.encoders.store.values_equal(&tiny_pair(1).store), "training changed nothing");

    train_inference(&cfg(1), tiny_pair(1), &ds, &splits, r.path(), false).unwrap();
    let resumed = train_inference(&cfg(2), tiny_pair(99), &ds, &splits, r.path(), true).unwrap();
    assert_eq!(resumed.log, full_a.log);
    assert!(resumed.encoders.store.values_equal(&full_a.encoders.store));
    for f in ["speech_encoder.ckpt", "face_encoder.ckpt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(r.path().join(f)).unwrap());
    }
}

#[test]
fn empty_splits_are_configuration_errors() {
    let (ds, mut splits) = setup();
    let dir = tempfile::tempdir().unwrap();
    splits.train.clear();
    let err = train_inference(&cfg(1), tiny_pair(0), &ds, &splits, dir.path(), false).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let (ds, mut splits) = setup();
    splits.val.clear();
    splits.val_examples.clear();
    let err = train_inference(&cfg(1), tiny_pair(0), &ds, &splits, dir.path(), false).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn untrained_accuracy_is_at_chance_and_reproducible() {
    let ds = toy(300, 2, 4, 21);
    let pool: Vec<usize> = (0..ds.len()).collect();
    let pair = tiny_pair(5);
    let enc = Encoders {
        speech: &pair.speech,
        face: &pair.face,
    };
    let cache = EmbeddingCache::build(enc, &pair.store, &ds, &ds.items(&pool)).unwrap();
    for (k, mode) in [(2, Mode::VoiceToFace), (10, Mode::VoiceToFace), (10, Mode::FaceToVoice)] {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        // 2400 anchors per repeat.
        let r = evaluate_matching_with(&cache, &ds, &pool, k, mode, 1, &mut rng).unwrap();
        assert!((r.mean_acc - 1.0 / k as f64).abs() < 0.03, "{mode} K={k}: {}", r.mean_acc);
    }
    let run = |seed| {
        evaluate_matching(enc, &pair.store, &ds, &pool[..40], 10, Mode::FaceToVoice, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    };
    let (x, y) = (run(7), run(7));
    assert_eq!(x, y);
    assert_eq!((x.k, x.n_repeats), (10, 5));
    assert!(x.std_acc > 0.0);
    let json = serde_json::to_value(&x).unwrap();
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(|s| s.as_str()).collect();
    keys.sort();
    assert_eq!(keys, ["K", "mean_acc", "mode", "n_repeats", "std_acc"]);
}

#[test]
fn too_few_clips_for_k_is_insufficient_data() {
    let ds = toy(4, 2, 2, 0);
    let pool: Vec<usize> = (0..ds.len()).collect();
    let pair = tiny_pair(0);
    let enc = Encoders {
        speech: &pair.speech,
        face: &pair.face,
    };
    let err = evaluate_matching(enc, &pair.store, &ds, &pool, 10, Mode::VoiceToFace, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)), "{err}");
}
