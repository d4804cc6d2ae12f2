//! Layered run configuration: preset defaults, then a TOML file, then `V2F_`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use voxface::data_pipeline::{AudioConfig, ImageConfig, Mode, ToyConfig};
use voxface::encoders::{FaceEncoderArch, SpeechEncoderArch};
use voxface::gan::{GanArchs, GanTrainConfig, GeneratorArch};
use voxface::matching::InferenceTrainConfig;

use crate::UsageError;

pub const ENV_PREFIX: &str = "V2F_";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size networks, 6 s audio and 128 px faces.
    Full,
    /// Small networks on 1 s audio and 32 px faces.
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Clip manifest (JSON lines); media paths resolve against its directory.
    pub manifest: Option<PathBuf>,
    pub audio: AudioConfig,
    pub image: ImageConfig,
    pub frames_per_clip: Option<usize>,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Candidates per fixed validation example.
    pub val_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Face pairs per correlation analysis.
    pub n_pairs: usize,
    /// Latent truncation threshold; `inf` disables truncation.
    pub truncation: f64,
    pub gallery_per_speaker: usize,
    pub interpolation_steps: usize,
    pub n_generate: usize,
}

impl EvalConfig {
    pub fn truncation(&self) -> Option<f64> {
        self.truncation.is_finite().then_some(self.truncation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Base seed; sub-configurations inherit it unless they set their own.
    pub seed: u64,
    /// Parent of the per-run directories.
    pub output_dir: PathBuf,
    pub synth: ToyConfig,
    pub data: DataConfig,
    pub arch: GanArchs,
    pub inference: InferenceTrainConfig,
    pub gan: GanTrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset, mode: Mode) -> Self {
        let mut inference = InferenceTrainConfig::for_mode(mode);
        let eval = EvalConfig {
            n_pairs: 500,
            truncation: 1.0,
            gallery_per_speaker: 50,
            interpolation_steps: 8,
            n_generate: 8,
        };
        let data = |audio_s: f64, size: usize| DataConfig {
            manifest: None,
            audio: AudioConfig {
                duration_s: audio_s,
                ..AudioConfig::default()
            },
            image: ImageConfig { size, flip: true },
            frames_per_clip: None,
            val_fraction: 0.2,
            test_fraction: 0.2,
            val_k: 10,
        };
        match preset {
            Preset::Full => Self {
                preset,
                seed: 0,
                output_dir: "runs".into(),
                synth: ToyConfig {
                    image_size: 128,
                    window_s: 6.0,
                    ..ToyConfig::default()
                },
                data: data(6.0, 128),
                arch: GanArchs {
                    speech: SpeechEncoderArch::full(),
                    face: FaceEncoderArch::full(),
                    generator: GeneratorArch::full(),
                },
                inference,
                gan: GanTrainConfig::default(),
                eval,
            },
            Preset::Toy => {
                inference.max_epochs = 15;
                Self {
                    preset,
                    seed: 0,
                    output_dir: "runs".into(),
                    synth: ToyConfig::default(),
                    data: data(1.0, 32),
                    arch: GanArchs {
                        speech: SpeechEncoderArch::toy(),
                        face: FaceEncoderArch::toy(),
                        generator: GeneratorArch::toy(),
                    },
                    inference,
                    gan: GanTrainConfig {
                        max_iters: TOY_GAN_ITERS,
                        sample_every: 100,
                        ..GanTrainConfig::default()
                    },
                    eval,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.inference.validate().map_err(usage)?;
        self.gan.validate().map_err(usage)?;
        let d = &self.data;
        if !(0.0..1.0).contains(&d.val_fraction) || !(0.0..1.0).contains(&d.test_fraction) || d.val_fraction + d.test_fraction >= 1.0 {
            bail!(UsageError("data.val_fraction and data.test_fraction must lie in [0, 1) and sum below 1".into()));
        }
        if d.image.size != self.arch.face.image_size {
            bail!(UsageError(format!(
                "data.image.size {} differs from the face encoder input size {}",
                d.image.size, self.arch.face.image_size
            )));
        }
        if self.eval.n_pairs < 3 || self.eval.interpolation_steps < 2 || self.eval.n_generate == 0 || self.eval.gallery_per_speaker == 0 {
            bail!(UsageError("eval: n_pairs ≥ 3, interpolation_steps ≥ 2, n_generate and gallery_per_speaker ≥ 1".into()));
        }
        if self.eval.truncation.is_nan() || self.eval.truncation <= 0.0 {
            bail!(UsageError("eval.truncation must be positive (inf disables it)".into()));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing the resolved configuration")?;
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// GAN iterations of the toy preset.
pub const TOY_GAN_ITERS: usize = 300;

fn usage(e: voxface::Error) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

/// Recursively overlays `top` onto `base`.
pub fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets a dotted key path, creating intermediate tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty key path");
    let mut t = table;
    for p in parts {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        t = entry.as_table_mut().expect("table");
    }
    t.insert(last.to_string(), value);
}

fn get_path<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

/// Parses an environment value as a TOML scalar or array, falling back to a
/// plain string.
fn env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// `V2F_GAN__LR_G=2e-4` sets `gan.lr_g`.
pub fn env_layer(vars: impl IntoIterator<Item = (String, String)>) -> Table {
    let mut t = Table::new();
    for (k, v) in vars {
        if let Some(rest) = k.strip_prefix(ENV_PREFIX) {
            if rest.is_empty() {
                continue;
            }
            let path = rest.to_ascii_lowercase().replace("__", ".");
            set_path(&mut t, &path, env_value(&v));
        }
    }
    t
}

pub fn file_layer(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

/// Resolves the final configuration from the override layers, lowest
/// priority first.
pub fn resolve(layers: Vec<Table>) -> Result<RunConfig> {
    let mut over = Table::new();
    for l in layers {
        merge(&mut over, l);
    }
    let preset: Preset = match get_path(&over, "preset") {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e| UsageError(format!("preset: {e}")))?,
        None => Preset::Toy,
    };
    let mode = match get_path(&over, "inference.mode") {
        Some(Value::String(s)) => Mode::from_str(s).map_err(usage)?,
        Some(other) => bail!(UsageError(format!("inference.mode must be a string, got {other}"))),
        None => Mode::VoiceToFace,
    };
    // Canonical spelling for the typed layer.
    if get_path(&over, "inference.mode").is_some() {
        set_path(&mut over, "inference.mode", Value::String(mode.to_string()));
    }
    if let Some(seed) = get_path(&over, "seed").cloned() {
        for section in ["inference", "gan"] {
            if get_path(&over, &format!("{section}.seed")).is_none() {
                set_path(&mut over, &format!("{section}.seed"), seed.clone());
            }
        }
    }
    let mut table = Table::try_from(RunConfig::preset(preset, mode)).context("serializing preset defaults")?;
    merge(&mut table, over);
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e| UsageError(format!("invalid configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
