use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use voxface::data_pipeline::{
    derive_seed, import_csv, mosaic, preprocess_audio, read_manifest, read_wav, synthesize_toy_dataset, write_face, write_png, Dataset, ItemRef,
    Splits,
};
use voxface::encoders::EncoderPair;
use voxface::evaluation::{
    qta1_correlation, qta1_gender_control, qta2_fv_accuracy, qta2_vf_preference, qta3_retrieval, write_scatter_png, Comparator,
    EvalModels, Gallery, InterpolationTarget, Metric,
};
use voxface::gan::{sample_latent, train_gan, GanModel};
use voxface::matching::train_inference;

use crate::config::{env_layer, file_layer, resolve, RunConfig};
use crate::{
    Cli, Command, ComparatorArg, EvaluateArgs, Experiment, GenerateArgs, InterpolateArgs, MetricArg, SynthArgs, TrainGanArgs,
    TrainInferenceArgs, UsageError, WhichArg,
};

const SPLITS_FILE: &str = "splits.json";

pub fn run(cli: &Cli) -> Result<()> {
    let mut layers = Vec::new();
    if let Some(path) = &cli.global.config {
        layers.push(file_layer(path)?);
    }
    layers.push(env_layer(std::env::vars()));
    layers.push(cli.flag_layer());
    let cfg = resolve(layers)?;
    let dir = run_dir(cli, &cfg)?;
    match &cli.command {
        Command::SynthData(a) => synth_data(&cfg, &dir, a),
        Command::TrainInference(a) => cmd_train_inference(&cfg, &dir, a),
        Command::TrainGan(a) => cmd_train_gan(&cfg, &dir, a),
        Command::Generate(a) => generate(&cfg, &dir, a),
        Command::Interpolate(a) => interpolate(&cfg, &dir, a),
        Command::Evaluate(a) => evaluate(&cfg, &dir, a),
    }
}

/// `--out`, or `<output_dir>/<command>-<unix seconds>` made unique.
fn run_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf> {
    if let Some(out) = &cli.global.out {
        return Ok(out.clone());
    }
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let base = cfg.output_dir.join(format!("{}-{secs}", cli.command_name()));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    Ok(dir)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn start(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    cfg.write(dir)
}

/// Writes `<dir>/<name>` as pretty JSON and echoes it to stdout.
fn write_report(dir: &Path, name: &str, report: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    let path = dir.join(name);
    fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    print!("{text}");
    Ok(())
}

fn manifest_path(cfg: &RunConfig) -> Result<&Path> {
    let path = cfg
        .data
        .manifest
        .as_deref()
        .ok_or_else(|| UsageError("no manifest given; pass --manifest or set data.manifest".into()))?;
    if !path.is_file() {
        bail!(UsageError(format!("manifest {} not found", path.display())));
    }
    Ok(path)
}

fn load_manifest_dataset(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    let records = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        import_csv(path)?
    } else {
        read_manifest(path)?
    };
    let root = path.parent().unwrap_or(Path::new("."));
    Ok(Dataset::load(&records, root, cfg.data.audio.clone(), cfg.data.image.clone(), cfg.data.frames_per_clip)?)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    load_manifest_dataset(cfg, manifest_path(cfg)?)
}

fn new_splits(cfg: &RunConfig, ds: &Dataset) -> Result<Splits> {
    let d = &cfg.data;
    Ok(Splits::create(ds, d.val_fraction, d.test_fraction, d.val_k, derive_seed(cfg.seed, &[0x5B1]))?)
}

fn rng(cfg: &RunConfig, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[key]))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn synth_data(cfg: &RunConfig, dir: &Path, a: &SynthArgs) -> Result<()> {
    let occupied = dir.exists() && fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(true);
    if occupied && !a.force {
        bail!(UsageError(format!("{} already exists; pass --force to overwrite", dir.display())));
    }
    start(cfg, dir)?;
    let records = synthesize_toy_dataset(&cfg.synth, cfg.seed, dir)?;
    let manifest = dir.join("manifest.jsonl");
    let bytes = fs::read(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let mut content = Sha256::new();
    content.update(&bytes);
    for r in &records {
        for rel in std::iter::once(&r.audio_path).chain(&r.frame_paths) {
            let p = dir.join(rel);
            content.update(fs::read(&p).with_context(|| format!("reading {}", p.display()))?);
        }
    }
    write_report(
        dir,
        "synth_data.json",
        &json!({
            "manifest": "manifest.jsonl",
            "manifest_sha256": hex(&Sha256::digest(&bytes)),
            "content_sha256": hex(&content.finalize()),
            "n_identities": cfg.synth.n_identities,
            "n_clips": records.len(),
            "frames_per_clip": cfg.synth.frames_per_clip,
        }),
    )
}

fn cmd_train_inference(cfg: &RunConfig, dir: &Path, a: &TrainInferenceArgs) -> Result<()> {
    if a.resume && !dir.is_dir() {
        bail!(UsageError("--resume needs --out pointing at an earlier run directory".into()));
    }
    let ds = load_dataset(cfg)?;
    start(cfg, dir)?;
    let splits_path = dir.join(SPLITS_FILE);
    let splits = if a.resume && splits_path.is_file() {
        Splits::read(&splits_path)?
    } else {
        let s = new_splits(cfg, &ds)?;
        s.write(&splits_path)?;
        s
    };
    let enc = EncoderPair::new(cfg.arch.speech.clone(), cfg.arch.face.clone(), derive_seed(cfg.inference.seed, &[0xE0]))?;
    let out = train_inference(&cfg.inference, enc, &ds, &splits, dir, a.resume)?;
    write_report(
        dir,
        "train_inference.json",
        &json!({
            "mode": cfg.inference.mode,
            "k": cfg.inference.k,
            "epochs": out.log.len(),
            "stopped_by_schedule": out.stopped_by_schedule,
            "final": out.log.last(),
        }),
    )
}

fn cmd_train_gan(cfg: &RunConfig, dir: &Path, a: &TrainGanArgs) -> Result<()> {
    let ds = load_dataset(cfg)?;
    if !cfg.gan.skip_transfer && a.encoders.is_none() {
        bail!(UsageError("--encoders is required unless --skip-transfer is set".into()));
    }
    let encoders = if cfg.gan.skip_transfer { None } else { a.encoders.as_deref() };
    start(cfg, dir)?;
    let splits = match a.encoders.as_deref().map(|e| e.join(SPLITS_FILE)).filter(|p| p.is_file()) {
        Some(p) => Splits::read(&p)?,
        None => new_splits(cfg, &ds)?,
    };
    splits.write(&dir.join(SPLITS_FILE))?;
    let pool = ds.resolve(&splits.train)?;
    let out = train_gan(&cfg.gan, &cfg.arch, &ds, &pool, encoders, dir)?;
    write_report(
        dir,
        "train_gan.json",
        &json!({
            "iterations": cfg.gan.max_iters,
            "use_mismatched_identity_loss": cfg.gan.use_mismatched_identity_loss,
            "skip_transfer": cfg.gan.skip_transfer,
            "final": out.log.last(),
        }),
    )
}

fn load_gan(cfg: &RunConfig, dir: &Path) -> Result<GanModel> {
    Ok(GanModel::load(dir, Some((&cfg.arch.generator, &cfg.arch.speech)))?)
}

fn read_speech(cfg: &RunConfig, path: &Path, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    if !path.is_file() {
        bail!(UsageError(format!("speech file {} not found", path.display())));
    }
    let (raw, rate) = read_wav(path)?;
    Ok(preprocess_audio(&raw, rate, &cfg.data.audio, rng)?.samples)
}

fn generate(cfg: &RunConfig, dir: &Path, a: &GenerateArgs) -> Result<()> {
    let gan = load_gan(cfg, &a.gan)?;
    let mut rng = rng(cfg, 0x6E4);
    let wave = read_speech(cfg, &a.speech, &mut rng)?;
    start(cfg, dir)?;
    let n = cfg.eval.n_generate;
    let z = (0..n)
        .map(|_| sample_latent(cfg.eval.truncation(), &mut rng))
        .collect::<voxface::Result<Vec<_>>>()?;
    let zr: Vec<&[f32]> = z.iter().map(|v| v.as_slice()).collect();
    let faces = gan.generate_from_speech(&zr, &vec![wave.as_slice(); n])?;
    let mut images = Vec::with_capacity(n);
    for (i, f) in faces.iter().enumerate() {
        let name = format!("face_{i:03}.png");
        write_face(&dir.join(&name), f)?;
        images.push(name);
    }
    write_report(
        dir,
        "generate.json",
        &json!({ "n": n, "truncation": cfg.eval.truncation(), "images": images }),
    )
}

fn interpolate(cfg: &RunConfig, dir: &Path, a: &InterpolateArgs) -> Result<()> {
    let gan = load_gan(cfg, &a.gan)?;
    let mut rng = rng(cfg, 0x1E7);
    let steps = cfg.eval.interpolation_steps;
    let trunc = cfg.eval.truncation();
    let wave_a = read_speech(cfg, &a.speech, &mut rng)?;
    let (which, endpoints, fixed) = match a.which {
        WhichArg::ConditionC => {
            let b = a
                .speech_b
                .as_deref()
                .ok_or_else(|| UsageError("--which condition-c needs --speech-b".into()))?;
            let wave_b = read_speech(cfg, b, &mut rng)?;
            let c = gan.conditions(&[wave_a.as_slice(), wave_b.as_slice()])?;
            (InterpolationTarget::ConditionC, c, sample_latent(trunc, &mut rng)?)
        }
        WhichArg::LatentZ => {
            let z = vec![sample_latent(trunc, &mut rng)?, sample_latent(trunc, &mut rng)?];
            let c = gan.conditions(&[wave_a.as_slice()])?.remove(0);
            (InterpolationTarget::LatentZ, z, c)
        }
    };
    start(cfg, dir)?;
    let row = voxface::evaluation::interpolate_grid(&gan, &endpoints[0], &endpoints[1], which, &fixed, steps)?;
    let (w, h, data) = mosaic(&row, steps);
    write_png(&dir.join("interpolation.png"), w, h, &data)?;
    write_report(
        dir,
        "interpolate.json",
        &json!({ "which": which, "steps": steps, "image": "interpolation.png" }),
    )
}

fn splits_for_eval(a: &EvaluateArgs) -> Result<Splits> {
    for d in [&a.gan, &a.encoders] {
        let p = d.join(SPLITS_FILE);
        if p.is_file() {
            return Ok(Splits::read(&p)?);
        }
    }
    bail!(UsageError(format!("no {SPLITS_FILE} in {} or {}", a.gan.display(), a.encoders.display())))
}

fn evaluate(cfg: &RunConfig, dir: &Path, a: &EvaluateArgs) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let encoders = EncoderPair::load(&a.encoders, Some((&cfg.arch.speech, &cfg.arch.face)))?;
    let gan = load_gan(cfg, &a.gan)?;
    let m = EvalModels { gan: &gan, encoders: &encoders };
    let splits = splits_for_eval(a)?;
    let test_clips = ds.resolve(&splits.test)?;
    let test_items = ds.items(&test_clips);
    let mut rng = rng(cfg, 0xE7A1 + a.experiment as u64);
    match a.experiment {
        Experiment::Qta1 => {
            let report = qta1_correlation(m, &ds, &test_items, cfg.eval.n_pairs, &mut rng)?;
            start(cfg, dir)?;
            write_scatter_png(&dir.join("qta1_scatter.png"), &report.scatter)?;
            write_report(dir, "qta1.json", &report)
        }
        Experiment::Qta1Control => {
            let report = qta1_gender_control(m, &ds, &test_items, cfg.eval.n_pairs, &mut rng)?;
            start(cfg, dir)?;
            write_report(dir, "qta1_control.json", &report)
        }
        Experiment::Qta2Vf => {
            let which = a.comparator.unwrap_or(if a.other_gan.is_some() {
                ComparatorArg::OtherGenerator
            } else {
                ComparatorArg::GroundTruth
            });
            let other = match (which, &a.other_gan) {
                (ComparatorArg::OtherGenerator, Some(p)) => Some(load_gan(cfg, p)?),
                (ComparatorArg::OtherGenerator, None) => bail!(UsageError("--comparator other-generator needs --other-gan".into())),
                (ComparatorArg::GroundTruth, _) => None,
            };
            let comparator = other.as_ref().map_or(Comparator::GroundTruth, Comparator::OtherGenerator);
            let report = qta2_vf_preference(m, &ds, &test_items, comparator, &mut rng)?;
            start(cfg, dir)?;
            write_report(dir, "qta2_vf.json", &report)
        }
        Experiment::Qta2Fv => {
            let report = qta2_fv_accuracy(m, &ds, &test_items, &mut rng)?;
            start(cfg, dir)?;
            write_report(dir, "qta2_fv.json", &report)
        }
        Experiment::Qta3 => {
            let gallery_ds;
            let (gds, clips) = match &a.gallery {
                Some(p) => {
                    if !p.is_file() {
                        bail!(UsageError(format!("gallery manifest {} not found", p.display())));
                    }
                    gallery_ds = load_manifest_dataset(cfg, p)?;
                    let all: Vec<usize> = (0..gallery_ds.len()).collect();
                    (&gallery_ds, all)
                }
                None => (&ds, test_clips),
            };
            let gallery = Gallery::build(m, gds, &clips, cfg.eval.gallery_per_speaker)?;
            let speech = gds
                .items(&clips)
                .into_iter()
                .map(|i: ItemRef| Ok((gds.identity_of(i.clip), gds.speech_fixed(i)?.samples)))
                .collect::<voxface::Result<Vec<_>>>()?;
            let metrics: Vec<Metric> = match a.metric {
                MetricArg::L1 => vec![Metric::L1],
                MetricArg::L2 => vec![Metric::L2],
                MetricArg::Cd => vec![Metric::CD],
                MetricArg::All => Metric::ALL.to_vec(),
            };
            let reports = qta3_retrieval(m, &gallery, &speech, &metrics, cfg.eval.truncation(), &mut rng)?;
            start(cfg, dir)?;
            for r in &reports {
                write_report(dir, &format!("qta3_{}.json", r.metric.to_string().to_ascii_lowercase()), r)?;
            }
            Ok(())
        }
    }
}
