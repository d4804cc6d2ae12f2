//! Top-K retrieval of real faces using generated faces as queries.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{cosine_distance, reference, EvalModels};
use crate::data_pipeline::{Dataset, FaceImage};
use crate::error::{Error, Result};
use crate::gan::sample_latent;

pub const TOP_KS: [usize; 4] = [1, 2, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    L1,
    L2,
    CD,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::L1, Metric::L2, Metric::CD];
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::L1 => "L1",
            Metric::L2 => "L2",
            Metric::CD => "CD",
        })
    }
}

pub fn distance(metric: Metric, a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("cannot compare vectors of length {} and {}", a.len(), b.len())));
    }
    let diffs = a.iter().zip(b).map(|(&x, &y)| x as f64 - y as f64);
    Ok(match metric {
        Metric::L1 => diffs.map(f64::abs).sum(),
        Metric::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        Metric::CD => cosine_distance(a, b)?,
    })
}

/// Gallery indices ordered by increasing distance, ties by index.
pub fn rank_gallery(query: &[f32], gallery: &[Vec<f32>], metric: Metric) -> Result<Vec<usize>> {
    let d = gallery.iter().map(|g| distance(metric, query, g)).collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    Ok(order)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalReport {
    pub experiment: String,
    pub metric: Metric,
    /// Percentage of queries with a same-speaker image among the top K.
    pub top_k_acc: BTreeMap<usize, f64>,
    pub gallery_size: usize,
    pub n_queries: usize,
    pub reference: Option<Value>,
}

/// Real-face embeddings labelled by speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    pub embeddings: Vec<Vec<f32>>,
    pub speakers: Vec<usize>,
}

impl Gallery {
    /// Up to `per_speaker` frames for every speaker of `clips`, taken in clip
    /// order.
    pub fn build(m: EvalModels<'_>, ds: &Dataset, clips: &[usize], per_speaker: usize) -> Result<Self> {
        let mut by_speaker: BTreeMap<usize, Vec<&FaceImage>> = BTreeMap::new();
        for &c in clips {
            let list = by_speaker.entry(ds.identity_of(c)).or_default();
            for index in 0..ds.clips[c].n_items() {
                if list.len() < per_speaker {
                    list.push(ds.face(crate::data_pipeline::ItemRef { clip: c, index }));
                }
            }
        }
        let speakers: Vec<usize> = by_speaker.iter().flat_map(|(&s, v)| std::iter::repeat_n(s, v.len())).collect();
        let faces: Vec<&FaceImage> = by_speaker.into_values().flatten().collect();
        if faces.is_empty() {
            return Err(Error::InsufficientData("the gallery is empty".into()));
        }
        let embeddings = m.encoders.face.embed(&m.encoders.store, &faces)?;
        Ok(Self { embeddings, speakers })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// A query embedding and its speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub embedding: Vec<f32>,
    pub speaker: usize,
}

/// Top-K accuracy for precomputed query embeddings.
pub fn retrieval_report(queries: &[Query], gallery: &Gallery, metric: Metric) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::InsufficientData("no retrieval queries".into()));
    }
    let known: BTreeSet<usize> = gallery.speakers.iter().copied().collect();
    let mut hits = [0usize; TOP_KS.len()];
    for q in queries {
        if !known.contains(&q.speaker) {
            return Err(Error::InvalidQuery(format!("speaker {} has no gallery images", q.speaker)));
        }
        let order = rank_gallery(&q.embedding, &gallery.embeddings, metric)?;
        let first = order
            .iter()
            .position(|&g| gallery.speakers[g] == q.speaker)
            .expect("speaker present in gallery");
        for (h, &k) in hits.iter_mut().zip(&TOP_KS) {
            *h += usize::from(first < k);
        }
    }
    let n = queries.len() as f64;
    Ok(RetrievalReport {
        experiment: "qta3".into(),
        metric,
        top_k_acc: TOP_KS.iter().zip(hits).map(|(&k, h)| (k, 100.0 * h as f64 / n)).collect(),
        gallery_size: gallery.len(),
        n_queries: queries.len(),
        reference: reference(&["retrieval", "relid", &metric.to_string()]),
    })
}

/// Generates one face per speech waveform, embeds it and scores retrieval
/// against `gallery` for each metric.
pub fn qta3_retrieval(
    m: EvalModels<'_>,
    gallery: &Gallery,
    speech: &[(usize, Vec<f32>)],
    metrics: &[Metric],
    truncation: Option<f64>,
    rng: &mut impl Rng,
) -> Result<Vec<RetrievalReport>> {
    let known: BTreeSet<usize> = gallery.speakers.iter().copied().collect();
    if let Some((s, _)) = speech.iter().find(|(s, _)| !known.contains(s)) {
        return Err(Error::InvalidQuery(format!("speaker {s} has no gallery images")));
    }
    let z = (0..speech.len()).map(|_| sample_latent(truncation, rng)).collect::<Result<Vec<_>>>()?;
    let zr: Vec<&[f32]> = z.iter().map(|v| v.as_slice()).collect();
    let wr: Vec<&[f32]> = speech.iter().map(|(_, w)| w.as_slice()).collect();
    let faces = m.gan.generate_from_speech(&zr, &wr)?;
    let queries: Vec<Query> = m
        .face_embeddings(&faces)?
        .into_iter()
        .zip(speech)
        .map(|(embedding, (speaker, _))| Query { embedding, speaker: *speaker })
        .collect();
    metrics.iter().map(|&metric| retrieval_report(&queries, gallery, metric)).collect()
}
