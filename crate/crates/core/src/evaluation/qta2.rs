//! Preference and consistency tests of generated faces judged by the
//! stage-one matching networks.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{binomial_p_value, reference, EvalModels};
use crate::data_pipeline::{Dataset, FaceImage, ItemRef, Mode};
use crate::error::{Error, Result};
use crate::gan::{sample_latent, GanModel};
use crate::matching::match_probabilities;

/// What the generated face competes against.
#[derive(Clone, Copy, Debug)]
pub enum Comparator<'a> {
    /// The real frame paired with the speech segment.
    GroundTruth,
    /// A face from another generator with the same latent.
    OtherGenerator(&'a GanModel),
}

impl Comparator<'_> {
    fn name(&self) -> &'static str {
        match self {
            Comparator::GroundTruth => "vs_ground_truth",
            Comparator::OtherGenerator(_) => "vs_other_generator",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceReport {
    pub experiment: String,
    pub comparator: String,
    pub n: usize,
    /// Share of items where image A is strictly more probable.
    pub fraction: f64,
    pub tie_rate: f64,
    /// One-sided binomial test of `fraction > 1/2`.
    pub binomial_p_value: f64,
    pub reference: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FvAccuracyReport {
    pub experiment: String,
    pub n: usize,
    pub accuracy: f64,
    pub tie_rate: f64,
    pub reference: Option<Value>,
}

/// `(wins, ties)` of candidate A over B in two-way V-F matching with each
/// speech embedding as anchor.
pub fn preference_counts(speech: &[Vec<f32>], faces_a: &[Vec<f32>], faces_b: &[Vec<f32>]) -> Result<(usize, usize)> {
    if speech.len() != faces_a.len() || speech.len() != faces_b.len() {
        return Err(Error::InvalidInput("one pair of faces per speech embedding is required".into()));
    }
    let (mut wins, mut ties) = (0, 0);
    for ((s, a), b) in speech.iter().zip(faces_a).zip(faces_b) {
        let r = match_probabilities(s, &[a.as_slice(), b.as_slice()], 0, Mode::VoiceToFace)?;
        let (pa, pb) = (r.probabilities[0], r.probabilities[1]);
        if pa > pb {
            wins += 1;
        } else if pa == pb {
            ties += 1;
        }
    }
    Ok((wins, ties))
}

fn speech_waves(ds: &Dataset, items: &[ItemRef]) -> Result<Vec<Vec<f32>>> {
    items.iter().map(|&i| ds.speech_fixed(i).map(|w| w.samples)).collect()
}

fn latents(n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f32>>> {
    (0..n).map(|_| sample_latent(None, rng)).collect()
}

fn generate(gan: &GanModel, z: &[Vec<f32>], waves: &[Vec<f32>]) -> Result<Vec<FaceImage>> {
    let zr: Vec<&[f32]> = z.iter().map(|v| v.as_slice()).collect();
    let wr: Vec<&[f32]> = waves.iter().map(|v| v.as_slice()).collect();
    gan.generate_from_speech(&zr, &wr)
}

/// Fraction of test items whose generated face (image A) gets a strictly
/// higher V-F matching probability than the comparator face (image B).
pub fn qta2_vf_preference(m: EvalModels<'_>, ds: &Dataset, items: &[ItemRef], comparator: Comparator<'_>, rng: &mut impl Rng) -> Result<PreferenceReport> {
    if items.is_empty() {
        return Err(Error::InsufficientData("the test set is empty".into()));
    }
    let waves = speech_waves(ds, items)?;
    let z = latents(items.len(), rng)?;
    let faces_a = generate(m.gan, &z, &waves)?;
    let faces_b = match comparator {
        Comparator::GroundTruth => items.iter().map(|&i| ds.face(i).clone()).collect(),
        Comparator::OtherGenerator(other) => generate(other, &z, &waves)?,
    };
    let se = m.speech_embeddings(&waves)?;
    let (wins, ties) = preference_counts(&se, &m.face_embeddings(&faces_a)?, &m.face_embeddings(&faces_b)?)?;
    let n = items.len();
    Ok(PreferenceReport {
        experiment: "qta2-vf".into(),
        comparator: comparator.name().into(),
        n,
        fraction: wins as f64 / n as f64,
        tie_rate: ties as f64 / n as f64,
        binomial_p_value: binomial_p_value(wins, n),
        reference: reference(&["qta2_vf", comparator.name()]),
    })
}

/// Accuracy of F-V matching picking the source speech of a generated face
/// over a segment from a different speaker.
pub fn qta2_fv_accuracy(m: EvalModels<'_>, ds: &Dataset, items: &[ItemRef], rng: &mut impl Rng) -> Result<FvAccuracyReport> {
    if items.is_empty() {
        return Err(Error::InsufficientData("the test set is empty".into()));
    }
    let negatives = items
        .iter()
        .map(|&s1| {
            let id = ds.identity_of(s1.clip);
            let others: Vec<ItemRef> = items.iter().copied().filter(|o| ds.identity_of(o.clip) != id).collect();
            if others.is_empty() {
                return Err(Error::InsufficientData("negative speech needs a second speaker in the test set".into()));
            }
            Ok(others[rng.random_range(0..others.len())])
        })
        .collect::<Result<Vec<_>>>()?;
    let waves = speech_waves(ds, items)?;
    let z = latents(items.len(), rng)?;
    let fe = m.face_embeddings(&generate(m.gan, &z, &waves)?)?;
    let s1 = m.speech_embeddings(&waves)?;
    let s2 = m.speech_embeddings(&speech_waves(ds, &negatives)?)?;
    let (mut correct, mut ties) = (0, 0);
    for ((f, a), b) in fe.iter().zip(&s1).zip(&s2) {
        let r = match_probabilities(f, &[a.as_slice(), b.as_slice()], 0, Mode::FaceToVoice)?;
        if r.probabilities[0] > r.probabilities[1] {
            correct += 1;
        } else if r.probabilities[0] == r.probabilities[1] {
            ties += 1;
        }
    }
    let n = items.len() as f64;
    Ok(FvAccuracyReport {
        experiment: "qta2-fv".into(),
        n: items.len(),
        accuracy: correct as f64 / n,
        tie_rate: ties as f64 / n,
        reference: reference(&["qta2_fv", "accuracy"]),
    })
}
