//! Speech and face encoders producing 128-dim embeddings, plus checkpoint IO.

mod face;
mod sinc;
mod speech;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use voxface_nn::checkpoint::{self, Checkpoint};
use voxface_nn::{NnError, ParamStore, Scalar};

pub use face::{stack_faces, FaceEncoder, FaceEncoderArch};
pub use sinc::SincConv;
pub use speech::{stack_waves, ConvBlockArch, SpeechEncoder, SpeechEncoderArch};

use crate::error::{Error, Result};

pub const EMBED_DIM: usize = 128;
pub const SPEECH_KIND: &str = "speech_encoder";
pub const FACE_KIND: &str = "face_encoder";
pub const SPEECH_PREFIX: &str = "speech.";
pub const FACE_PREFIX: &str = "face.";

/// Writes every store entry under `prefix` (prefix stripped) to `path`.
pub fn save_prefixed<T: Scalar>(
    path: &Path,
    kind: &str,
    arch: &impl Serialize,
    meta: &Value,
    store: &ParamStore<T>,
    prefix: &str,
) -> Result<()> {
    let arch = serde_json::to_value(arch).map_err(|e| Error::Format(e.to_string()))?;
    let named: Vec<(String, std::sync::Arc<voxface_nn::Tensor<T>>)> = store
        .named_tensors()
        .into_iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t)))
        .collect();
    let refs: Vec<(String, &voxface_nn::Tensor<T>)> = named.iter().map(|(n, t)| (n.clone(), t.as_ref())).collect();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    checkpoint::save(path, kind, &arch, meta, &refs)?;
    Ok(())
}

/// Fills every store entry under `prefix` from `ckpt`; shapes and the set of
/// names must match exactly.
pub fn load_prefixed<T: Scalar>(ckpt: &Checkpoint, store: &mut ParamStore<T>, prefix: &str) -> Result<()> {
    let targets: Vec<_> = store
        .iter()
        .filter_map(|(id, p)| p.name.strip_prefix(prefix).map(|s| (id, s.to_string(), p.value.shape().to_vec())))
        .collect();
    if targets.len() != ckpt.tensors.len() {
        return Err(NnError::ArchMismatch(format!(
            "checkpoint holds {} tensors, model expects {}",
            ckpt.tensors.len(),
            targets.len()
        ))
        .into());
    }
    for (id, name, shape) in targets {
        let t = ckpt.tensor::<T>(&name)?;
        if t.shape() != shape.as_slice() {
            return Err(NnError::ArchMismatch(format!("`{name}` has shape {:?}, model expects {shape:?}", t.shape())).into());
        }
        store.set(id, t);
    }
    Ok(())
}

fn parse_arch<A: DeserializeOwned + PartialEq + Serialize>(ckpt: &Checkpoint, expected: Option<&A>) -> Result<A> {
    let arch: A = serde_json::from_value(ckpt.arch.clone())
        .map_err(|e| NnError::ArchMismatch(format!("unreadable architecture descriptor: {e}")))?;
    if let Some(exp) = expected {
        if exp != &arch {
            return Err(NnError::ArchMismatch(format!(
                "checkpoint architecture {} differs from configured {}",
                ckpt.arch,
                serde_json::to_value(exp).unwrap_or_default()
            ))
            .into());
        }
    }
    Ok(arch)
}

/// Builds a speech encoder from a checkpoint into `store` under `prefix`.
pub fn load_speech_encoder<T: Scalar>(
    path: &Path,
    store: &mut ParamStore<T>,
    prefix: &str,
    expected: Option<&SpeechEncoderArch>,
) -> Result<SpeechEncoder> {
    let ckpt = checkpoint::load(path)?;
    ckpt.expect_kind(SPEECH_KIND)?;
    let arch = parse_arch(&ckpt, expected)?;
    let enc = SpeechEncoder::new(arch, store, prefix, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_prefixed(&ckpt, store, prefix)?;
    Ok(enc)
}

/// Builds a face encoder from a checkpoint into `store` under `prefix`.
pub fn load_face_encoder<T: Scalar>(
    path: &Path,
    store: &mut ParamStore<T>,
    prefix: &str,
    expected: Option<&FaceEncoderArch>,
) -> Result<FaceEncoder> {
    let ckpt = checkpoint::load(path)?;
    ckpt.expect_kind(FACE_KIND)?;
    let arch = parse_arch(&ckpt, expected)?;
    let enc = FaceEncoder::new(arch, store, prefix, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_prefixed(&ckpt, store, prefix)?;
    Ok(enc)
}

/// The two stage-one encoders sharing one parameter store.
#[derive(Clone, Debug)]
pub struct EncoderPair {
    pub speech: SpeechEncoder,
    pub face: FaceEncoder,
    pub store: ParamStore<f32>,
}

impl EncoderPair {
    pub fn new(speech: SpeechEncoderArch, face: FaceEncoderArch, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let speech = SpeechEncoder::new(speech, &mut store, SPEECH_PREFIX, &mut rng)?;
        let face = FaceEncoder::new(face, &mut store, FACE_PREFIX, &mut rng)?;
        Ok(Self { speech, face, store })
    }

    pub fn speech_path(dir: &Path) -> std::path::PathBuf {
        dir.join("speech_encoder.ckpt")
    }

    pub fn face_path(dir: &Path) -> std::path::PathBuf {
        dir.join("face_encoder.ckpt")
    }

    pub fn save(&self, dir: &Path, meta: &Value) -> Result<()> {
        save_prefixed(&Self::speech_path(dir), SPEECH_KIND, &self.speech.arch, meta, &self.store, SPEECH_PREFIX)?;
        save_prefixed(&Self::face_path(dir), FACE_KIND, &self.face.arch, meta, &self.store, FACE_PREFIX)
    }

    /// Loads both encoders; when architectures are given they must match.
    pub fn load(dir: &Path, expected: Option<(&SpeechEncoderArch, &FaceEncoderArch)>) -> Result<Self> {
        let mut store = ParamStore::new();
        let speech = load_speech_encoder(&Self::speech_path(dir), &mut store, SPEECH_PREFIX, expected.map(|e| e.0))?;
        let face = load_face_encoder(&Self::face_path(dir), &mut store, FACE_PREFIX, expected.map(|e| e.1))?;
        Ok(Self { speech, face, store })
    }
}
