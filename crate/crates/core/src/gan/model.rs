//! Trained generator bundle and its checkpoint files.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use voxface_nn::checkpoint;
use voxface_nn::ParamStore;

use super::generator::{Generator, GeneratorArch};
use crate::data_pipeline::FaceImage;
use crate::encoders::{load_prefixed, load_speech_encoder, FaceEncoderArch, SpeechEncoder, SpeechEncoderArch, SPEECH_PREFIX};
use crate::error::{Error, Result};

pub const GENERATOR_KIND: &str = "generator";
pub const DISCRIMINATOR_KIND: &str = "discriminator";
pub const GEN_PREFIX: &str = "gen.";

/// Discriminator checkpoint descriptor; `speech` is present when the speech
/// encoder was trained together with the discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorArch {
    pub face: FaceEncoderArch,
    pub speech: Option<SpeechEncoderArch>,
}

/// A generator together with the speech encoder that produces its conditions.
#[derive(Clone, Debug)]
pub struct GanModel {
    pub generator: Generator,
    pub gen_store: ParamStore<f32>,
    pub speech: SpeechEncoder,
    pub speech_store: ParamStore<f32>,
}

impl GanModel {
    pub const GENERATOR_FILE: &'static str = "generator.ckpt";
    pub const DISCRIMINATOR_FILE: &'static str = "discriminator.ckpt";
    pub const SPEECH_FILE: &'static str = "speech_encoder.ckpt";

    pub fn generator_path(dir: &Path) -> PathBuf {
        dir.join(Self::GENERATOR_FILE)
    }

    /// Loads `generator.ckpt` and `speech_encoder.ckpt` from a GAN run
    /// directory.
    pub fn load(dir: &Path, expected: Option<(&GeneratorArch, &SpeechEncoderArch)>) -> Result<Self> {
        let path = Self::generator_path(dir);
        if !path.is_file() {
            return Err(Error::Config(format!("generator checkpoint {} not found", path.display())));
        }
        let ckpt = checkpoint::load(&path)?;
        ckpt.expect_kind(GENERATOR_KIND)?;
        let arch: GeneratorArch = serde_json::from_value(ckpt.arch.clone())
            .map_err(|e| voxface_nn::NnError::ArchMismatch(format!("unreadable generator descriptor: {e}")))?;
        if let Some((exp, _)) = expected {
            if exp != &arch {
                return Err(voxface_nn::NnError::ArchMismatch(format!(
                    "generator architecture {:?} differs from configured {exp:?}",
                    arch
                ))
                .into());
            }
        }
        let mut gen_store = ParamStore::new();
        let generator = Generator::new(arch, &mut gen_store, GEN_PREFIX, &mut ChaCha8Rng::seed_from_u64(0))?;
        load_prefixed(&ckpt, &mut gen_store, GEN_PREFIX)?;
        let mut speech_store = ParamStore::new();
        let speech = load_speech_encoder(&dir.join(Self::SPEECH_FILE), &mut speech_store, SPEECH_PREFIX, expected.map(|e| e.1))?;
        Ok(Self {
            generator,
            gen_store,
            speech,
            speech_store,
        })
    }

    /// Speech conditions for raw waveforms.
    pub fn conditions(&self, waves: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        self.speech.embed(&self.speech_store, waves)
    }

    pub fn generate(&self, z: &[&[f32]], c: &[&[f32]]) -> Result<Vec<FaceImage>> {
        self.generator.generate(&self.gen_store, z, c)
    }

    /// One face per waveform, each with its own latent.
    pub fn generate_from_speech(&self, z: &[&[f32]], waves: &[&[f32]]) -> Result<Vec<FaceImage>> {
        let c = self.conditions(waves)?;
        let cr: Vec<&[f32]> = c.iter().map(|v| v.as_slice()).collect();
        self.generate(z, &cr)
    }
}
