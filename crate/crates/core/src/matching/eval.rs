//! Top-1 K-way accuracy over repeated negative resamplings.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use voxface_nn::ParamStore;

use super::{match_probabilities, Encoders, MatchResult};
use crate::data_pipeline::{Dataset, FaceImage, ItemRef, MatchingExample, Mode};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingReport {
    pub mode: Mode,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_repeats: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Eval-mode embeddings of dataset items, computed once per item.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingCache {
    pub speech: HashMap<ItemRef, Vec<f32>>,
    pub face: HashMap<ItemRef, Vec<f32>>,
}

impl EmbeddingCache {
    pub fn build(enc: Encoders<'_>, store: &ParamStore<f32>, ds: &Dataset, items: &[ItemRef]) -> Result<Self> {
        let mut items = items.to_vec();
        items.sort();
        items.dedup();
        let waves = items.iter().map(|&i| ds.speech_fixed(i).map(|w| w.samples)).collect::<Result<Vec<_>>>()?;
        let wave_refs: Vec<&[f32]> = waves.iter().map(|w| w.as_slice()).collect();
        let faces: Vec<&FaceImage> = items.iter().map(|&i| ds.face(i)).collect();
        let es = enc.speech.embed(store, &wave_refs)?;
        let ef = enc.face.embed(store, &faces)?;
        Ok(Self {
            speech: items.iter().copied().zip(es).collect(),
            face: items.iter().copied().zip(ef).collect(),
        })
    }

    fn lookup(&self, voice: bool, item: ItemRef) -> Result<&[f32]> {
        let map = if voice { &self.speech } else { &self.face };
        map.get(&item)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::InvalidInput(format!("no cached embedding for clip {} item {}", item.clip, item.index)))
    }

    pub fn result(&self, ex: &MatchingExample) -> Result<MatchResult> {
        let voice_anchor = ex.mode == Mode::VoiceToFace;
        let anchor = self.lookup(voice_anchor, ex.anchor)?;
        let cands = ex
            .candidates
            .iter()
            .map(|&c| self.lookup(!voice_anchor, c))
            .collect::<Result<Vec<_>>>()?;
        match_probabilities(anchor, &cands, ex.positive_index, ex.mode)
    }

    /// Mean cross-entropy and top-1 accuracy over `examples`.
    pub fn loss_and_accuracy(&self, examples: &[MatchingExample]) -> Result<(f64, f64)> {
        if examples.is_empty() {
            return Err(Error::InsufficientData("no examples to evaluate".into()));
        }
        let (mut loss, mut correct) = (0.0, 0usize);
        for ex in examples {
            let r = self.result(ex)?;
            loss -= r.probabilities[r.positive_index].max(f64::MIN_POSITIVE).ln();
            correct += r.is_correct() as usize;
        }
        let n = examples.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Accuracy with every item of `pool` as an anchor, negatives resampled for
/// each repeat.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_matching(
    enc: Encoders<'_>,
    store: &ParamStore<f32>,
    ds: &Dataset,
    pool: &[usize],
    k: usize,
    mode: Mode,
    n_repeats: usize,
    rng: &mut impl Rng,
) -> Result<MatchingReport> {
    ds.check_kway(pool, k)?;
    let cache = EmbeddingCache::build(enc, store, ds, &ds.items(pool))?;
    evaluate_matching_with(&cache, ds, pool, k, mode, n_repeats, rng)
}

/// Same protocol over precomputed embeddings.
pub fn evaluate_matching_with(
    cache: &EmbeddingCache,
    ds: &Dataset,
    pool: &[usize],
    k: usize,
    mode: Mode,
    n_repeats: usize,
    rng: &mut impl Rng,
) -> Result<MatchingReport> {
    if n_repeats == 0 {
        return Err(Error::Config("n_repeats must be positive".into()));
    }
    ds.check_kway(pool, k)?;
    let mut accs = Vec::with_capacity(n_repeats);
    for _ in 0..n_repeats {
        let examples = ds
            .items(pool)
            .into_iter()
            .map(|a| ds.example_for(pool, a, k, mode, rng))
            .collect::<Result<Vec<_>>>()?;
        accs.push(cache.loss_and_accuracy(&examples)?.1);
    }
    let (mean_acc, std_acc) = mean_std(&accs);
    Ok(MatchingReport {
        mode,
        k,
        n_repeats,
        mean_acc,
        std_acc,
    })
}
