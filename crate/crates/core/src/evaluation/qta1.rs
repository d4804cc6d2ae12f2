//! Correlation between condition distances and generated-face distances.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{cosine_distance, pearson, reference, Correlation, EvalModels};
use crate::data_pipeline::{write_png, Dataset, ItemRef};
use crate::error::{Error, Result};
use crate::gan::sample_latent;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistancePair {
    pub cd_condition: f64,
    pub cd_face: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Qta1Report {
    pub experiment: String,
    pub n_pairs: usize,
    pub pearson: Correlation,
    pub scatter: Vec<DistancePair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeMeans {
    pub n_pairs: usize,
    pub mean_cd_condition: f64,
    pub mean_cd_face: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Qta1ControlReport {
    pub experiment: String,
    pub same: RegimeMeans,
    pub different: RegimeMeans,
    pub reference: Option<Value>,
}

/// Distance pairs for explicit condition pairs, each face generated from a
/// fresh untruncated latent.
pub fn qta1_from_conditions(m: EvalModels<'_>, pairs: &[(Vec<f32>, Vec<f32>)], rng: &mut impl Rng) -> Result<Vec<DistancePair>> {
    let mut z = Vec::with_capacity(2 * pairs.len());
    for _ in 0..2 * pairs.len() {
        z.push(sample_latent(None, rng)?);
    }
    let zr: Vec<&[f32]> = z.iter().map(|v| v.as_slice()).collect();
    let cr: Vec<&[f32]> = pairs.iter().flat_map(|(a, b)| [a.as_slice(), b.as_slice()]).collect();
    let faces = m.gan.generate(&zr, &cr)?;
    let fe = m.face_embeddings(&faces)?;
    pairs
        .iter()
        .enumerate()
        .map(|(i, (c1, c2))| {
            Ok(DistancePair {
                cd_condition: cosine_distance(c1, c2)?,
                cd_face: cosine_distance(&fe[2 * i], &fe[2 * i + 1])?,
            })
        })
        .collect()
}

/// Conditions for each item, from the generator bundle's speech encoder.
fn conditions(m: EvalModels<'_>, ds: &Dataset, items: &[ItemRef]) -> Result<Vec<Vec<f32>>> {
    let waves = items.iter().map(|&i| ds.speech_fixed(i).map(|w| w.samples)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f32]> = waves.iter().map(|w| w.as_slice()).collect();
    m.gan.conditions(&refs)
}

fn pair_distances(m: EvalModels<'_>, ds: &Dataset, pairs: &[(ItemRef, ItemRef)], rng: &mut impl Rng) -> Result<Vec<DistancePair>> {
    let items: Vec<ItemRef> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    let c = conditions(m, ds, &items)?;
    let cp: Vec<(Vec<f32>, Vec<f32>)> = c.chunks(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    qta1_from_conditions(m, &cp, rng)
}

/// Pairs of items from different speakers accepted by `keep`.
fn sample_pairs(
    ds: &Dataset,
    pool: &[ItemRef],
    n: usize,
    keep: impl Fn(ItemRef, ItemRef) -> bool,
    rng: &mut impl Rng,
) -> Result<Vec<(ItemRef, ItemRef)>> {
    let eligible = pool.iter().any(|&a| pool.iter().any(|&b| ds.identity_of(a.clip) != ds.identity_of(b.clip) && keep(a, b)));
    if !eligible {
        return Err(Error::InsufficientData("no eligible speaker pair in the pool".into()));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        if ds.identity_of(a.clip) != ds.identity_of(b.clip) && keep(a, b) {
            out.push((a, b));
        }
    }
    Ok(out)
}

/// Pearson correlation between condition and face-embedding cosine
/// distances over `n_pairs` pairs of different speakers.
pub fn qta1_correlation(m: EvalModels<'_>, ds: &Dataset, pool: &[ItemRef], n_pairs: usize, rng: &mut impl Rng) -> Result<Qta1Report> {
    if n_pairs < 3 {
        return Err(Error::InsufficientData(format!("correlation needs at least 3 pairs, got {n_pairs}")));
    }
    let pairs = sample_pairs(ds, pool, n_pairs, |_, _| true, rng)?;
    let scatter = pair_distances(m, ds, &pairs, rng)?;
    qta1_report("qta1", scatter)
}

pub fn qta1_report(experiment: &str, scatter: Vec<DistancePair>) -> Result<Qta1Report> {
    let x: Vec<f64> = scatter.iter().map(|p| p.cd_condition).collect();
    let y: Vec<f64> = scatter.iter().map(|p| p.cd_face).collect();
    Ok(Qta1Report {
        experiment: experiment.into(),
        n_pairs: scatter.len(),
        pearson: pearson(&x, &y)?,
        scatter,
    })
}

fn means(pairs: &[DistancePair]) -> RegimeMeans {
    let n = pairs.len() as f64;
    RegimeMeans {
        n_pairs: pairs.len(),
        mean_cd_condition: pairs.iter().map(|p| p.cd_condition).sum::<f64>() / n,
        mean_cd_face: pairs.iter().map(|p| p.cd_face).sum::<f64>() / n,
    }
}

/// Mean distances for speaker pairs sharing the binary attribute versus
/// pairs that differ in it. Items without an attribute are ignored.
pub fn qta1_gender_control(m: EvalModels<'_>, ds: &Dataset, pool: &[ItemRef], n_pairs: usize, rng: &mut impl Rng) -> Result<Qta1ControlReport> {
    if n_pairs < 2 {
        return Err(Error::InsufficientData(format!("each regime needs at least 2 pairs, got {n_pairs}")));
    }
    let labeled: Vec<ItemRef> = pool.iter().copied().filter(|i| ds.attribute_of(i.clip).is_some()).collect();
    let attrs: BTreeSet<&str> = labeled.iter().filter_map(|i| ds.attribute_of(i.clip)).collect();
    if attrs.len() < 2 {
        return Err(Error::InsufficientData("the pool holds fewer than two attribute values; the different-attribute regime is empty".into()));
    }
    let same_attr = |a: ItemRef, b: ItemRef| ds.attribute_of(a.clip) == ds.attribute_of(b.clip);
    let same = sample_pairs(ds, &labeled, n_pairs, same_attr, rng)?;
    let different = sample_pairs(ds, &labeled, n_pairs, |a, b| !same_attr(a, b), rng)?;
    let same = pair_distances(m, ds, &same, rng)?;
    let different = pair_distances(m, ds, &different, rng)?;
    Ok(Qta1ControlReport {
        experiment: "qta1-control".into(),
        same: means(&same),
        different: means(&different),
        reference: reference(&["qta1_control"]),
    })
}

/// Scatter plot of the distance pairs on `[0, 2]²`, condition distance on
/// the horizontal axis.
pub fn write_scatter_png(path: &Path, pairs: &[DistancePair]) -> Result<()> {
    const S: usize = 256;
    let mut data = vec![1.0f32; 3 * S * S];
    let mut put = |x: usize, y: usize, rgb: [f32; 3]| {
        for (c, v) in rgb.iter().enumerate() {
            data[(c * S + y) * S + x] = *v;
        }
    };
    for i in 0..S {
        put(i, S - 1, [-1.0; 3]);
        put(0, i, [-1.0; 3]);
    }
    for p in pairs {
        let px = ((p.cd_condition / 2.0) * (S - 1) as f64).round() as isize;
        let py = (S - 1) as isize - ((p.cd_face / 2.0) * (S - 1) as f64).round() as isize;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (px + dx, py + dy);
                if (0..S as isize).contains(&x) && (0..S as isize).contains(&y) {
                    put(x as usize, y as usize, [-0.2, -0.4, 1.0]);
                }
            }
        }
    }
    write_png(path, S, S, &data)
}
