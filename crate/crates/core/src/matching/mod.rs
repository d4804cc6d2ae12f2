//! K-way cross-modal identity matching: softmax over raw inner products,
//! its cross-entropy objective, the training loop and the evaluation protocol.

mod eval;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use voxface_nn::{Binder, Scalar, Tensor, Var};

pub use eval::{evaluate_matching, evaluate_matching_with, EmbeddingCache, MatchingReport};
pub use train::{train_inference, InferenceTrainConfig, InferenceTrainOutcome, LogEntry, TRAIN_LOG, TRAIN_STATE};

use crate::data_pipeline::{Dataset, FaceImage, MatchingExample, Mode};
use crate::encoders::{stack_faces, stack_waves, FaceEncoder, SpeechEncoder, EMBED_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub probabilities: Vec<f64>,
    pub predicted_index: usize,
    pub positive_index: usize,
    pub mode: Mode,
}

impl MatchResult {
    pub fn is_correct(&self) -> bool {
        self.predicted_index == self.positive_index
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Probability that each candidate shares the anchor's identity.
pub fn match_probabilities(anchor: &[f32], candidates: &[&[f32]], positive_index: usize, mode: Mode) -> Result<MatchResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("at least one candidate is required".into()));
    }
    if positive_index >= candidates.len() {
        return Err(Error::InvalidInput(format!(
            "positive index {positive_index} out of range for {} candidates",
            candidates.len()
        )));
    }
    if anchor.len() != EMBED_DIM || candidates.iter().any(|c| c.len() != EMBED_DIM) {
        return Err(Error::InvalidInput(format!("embeddings must have dimension {EMBED_DIM}")));
    }
    let logits: Vec<f64> = candidates.iter().map(|c| dot(anchor, c)).collect();
    let probabilities = softmax(&logits);
    Ok(MatchResult {
        predicted_index: argmax(&probabilities),
        probabilities,
        positive_index,
        mode,
    })
}

/// `[B, D]` anchors against `[B * K, D]` candidates (grouped per anchor) to
/// `[B, K]` logits.
pub fn matching_logits<'t, T: Scalar>(anchors: Var<'t, T>, candidates: Var<'t, T>) -> Result<Var<'t, T>> {
    let (a, c) = (anchors.shape(), candidates.shape());
    if a.len() != 2 || c.len() != 2 || a[1] != c[1] || a[0] == 0 || c[0] % a[0] != 0 {
        return Err(Error::InvalidInput(format!("cannot match anchors {a:?} against candidates {c:?}")));
    }
    let (b, k) = (a[0], c[0] / a[0]);
    let idx: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    Ok(anchors.gather_rows(&idx).rowdot(candidates).reshape(&[b, k]))
}

/// Mean of `-log p[positive]` over the batch.
pub fn matching_loss_from_embeddings<'t, T: Scalar>(
    anchors: Var<'t, T>,
    candidates: Var<'t, T>,
    positives: &[usize],
) -> Result<Var<'t, T>> {
    let logits = matching_logits(anchors, candidates)?;
    let k = logits.shape()[1];
    if positives.len() != logits.shape()[0] || positives.iter().any(|&p| p >= k) {
        return Err(Error::InvalidInput("positive indices do not match the batch".into()));
    }
    Ok(logits.cross_entropy(positives))
}

/// Network inputs for a batch of examples.
#[derive(Clone, Debug)]
pub struct MatchingBatch<T> {
    pub mode: Mode,
    /// Waveforms `[B, 1, L]` for V-F, faces `[B, 3, S, S]` for F-V.
    pub anchors: Tensor<T>,
    /// The other modality, `K` rows per anchor.
    pub candidates: Tensor<T>,
    pub positives: Vec<usize>,
}

/// Loads the inputs of `examples`. With `augment`, audio crops and face flips
/// are drawn from `rng`; otherwise each item maps to a fixed input.
pub fn materialize_batch<T: Scalar>(
    ds: &Dataset,
    examples: &[MatchingExample],
    augment: bool,
    rng: &mut impl Rng,
) -> Result<MatchingBatch<T>> {
    let first = examples
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let (mode, k) = (first.mode, first.candidates.len());
    if examples.iter().any(|e| e.mode != mode || e.candidates.len() != k) {
        return Err(Error::InvalidInput("examples in a batch must share mode and K".into()));
    }
    let mut waves: Vec<Vec<f32>> = Vec::new();
    let mut faces: Vec<FaceImage> = Vec::new();
    let mut load = |item, voice: bool, waves: &mut Vec<Vec<f32>>, faces: &mut Vec<FaceImage>| -> Result<()> {
        match (voice, augment) {
            (true, true) => waves.push(ds.speech(item, rng)?.samples),
            (true, false) => waves.push(ds.speech_fixed(item)?.samples),
            (false, true) => faces.push(ds.face_augmented(item, rng)),
            (false, false) => faces.push(ds.face(item).clone()),
        }
        Ok(())
    };
    let voice_anchor = mode == Mode::VoiceToFace;
    for e in examples {
        load(e.anchor, voice_anchor, &mut waves, &mut faces)?;
    }
    for e in examples {
        for &c in &e.candidates {
            load(c, !voice_anchor, &mut waves, &mut faces)?;
        }
    }
    let wave_refs: Vec<&[f32]> = waves.iter().map(|w| w.as_slice()).collect();
    let face_refs: Vec<&FaceImage> = faces.iter().collect();
    let (speech, face) = (stack_waves(&wave_refs)?, stack_faces(&face_refs)?);
    let (anchors, candidates) = if voice_anchor { (speech, face) } else { (face, speech) };
    Ok(MatchingBatch {
        mode,
        anchors,
        candidates,
        positives: examples.iter().map(|e| e.positive_index).collect(),
    })
}

/// The two encoders a matching model is made of.
#[derive(Clone, Copy, Debug)]
pub struct Encoders<'a> {
    pub speech: &'a SpeechEncoder,
    pub face: &'a FaceEncoder,
}

/// `[B, K]` logits for a batch. `speech_binder` evaluates the speech encoder
/// when it is held fixed; otherwise `binder` runs both encoders.
pub fn matching_forward<'t, T: Scalar>(
    enc: Encoders<'_>,
    binder: &Binder<'t, '_, T>,
    speech_binder: Option<&Binder<'t, '_, T>>,
    batch: &MatchingBatch<T>,
) -> Result<Var<'t, T>> {
    let tape = binder.tape();
    let sb = speech_binder.unwrap_or(binder);
    let (anchors, candidates) = (tape.constant(batch.anchors.clone()), tape.constant(batch.candidates.clone()));
    let (a, c) = match batch.mode {
        Mode::VoiceToFace => (enc.speech.forward(sb, anchors)?, enc.face.forward(binder, candidates)?),
        Mode::FaceToVoice => (enc.face.forward(binder, anchors)?, enc.speech.forward(sb, candidates)?),
    };
    matching_logits(a, c)
}

pub fn matching_loss<'t, T: Scalar>(
    enc: Encoders<'_>,
    binder: &Binder<'t, '_, T>,
    speech_binder: Option<&Binder<'t, '_, T>>,
    batch: &MatchingBatch<T>,
) -> Result<Var<'t, T>> {
    Ok(matching_forward(enc, binder, speech_binder, batch)?.cross_entropy(&batch.positives))
}
