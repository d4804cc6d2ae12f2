//! Quantitative analyses of the trained models: condition/face distance
//! correlation, inference-network preference tests, face retrieval and
//! interpolation grids.

mod interpolate;
mod qta1;
mod qta2;
mod retrieval;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

pub use interpolate::{interpolate_grid, InterpolationTarget};
pub use qta1::{qta1_correlation, qta1_from_conditions, qta1_gender_control, qta1_report, write_scatter_png, DistancePair, Qta1ControlReport, Qta1Report, RegimeMeans};
pub use qta2::{preference_counts, qta2_fv_accuracy, qta2_vf_preference, Comparator, FvAccuracyReport, PreferenceReport};
pub use retrieval::{distance, qta3_retrieval, rank_gallery, retrieval_report, Gallery, Metric, Query, RetrievalReport, TOP_KS};

use crate::data_pipeline::FaceImage;
use crate::encoders::EncoderPair;
use crate::error::{Error, Result};
use crate::gan::GanModel;

/// A generator bundle plus the stage-one encoders used as the judge.
#[derive(Clone, Copy, Debug)]
pub struct EvalModels<'a> {
    pub gan: &'a GanModel,
    pub encoders: &'a EncoderPair,
}

impl EvalModels<'_> {
    pub(crate) fn face_embeddings(&self, faces: &[FaceImage]) -> Result<Vec<Vec<f32>>> {
        let refs: Vec<&FaceImage> = faces.iter().collect();
        self.encoders.face.embed(&self.encoders.store, &refs)
    }

    pub(crate) fn speech_embeddings(&self, waves: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let refs: Vec<&[f32]> = waves.iter().map(|w| w.as_slice()).collect();
        self.encoders.speech.embed(&self.encoders.store, &refs)
    }
}

/// `1 − ⟨a, b⟩ / (‖a‖‖b‖)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!("cannot compare vectors of length {} and {}", a.len(), b.len())));
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::InvalidInput("cosine distance of a zero vector is undefined".into()));
    }
    Ok((1.0 - ab / (aa.sqrt() * bb.sqrt())).clamp(0.0, 2.0))
}

/// Pearson correlation; `Undefined` when either variable has zero variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Correlation {
    Defined {
        r: f64,
        /// Two-sided, from the t statistic with `n − 2` degrees of freedom.
        p_value: f64,
    },
    Undefined,
}

impl Correlation {
    pub fn r(&self) -> Option<f64> {
        match self {
            Correlation::Defined { r, .. } => Some(*r),
            Correlation::Undefined => None,
        }
    }

    pub fn p_value(&self) -> Option<f64> {
        match self {
            Correlation::Defined { p_value, .. } => Some(*p_value),
            Correlation::Undefined => None,
        }
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput("correlation needs paired samples".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("correlation needs at least 3 pairs, got {n}")));
    }
    // Streaming co-moments.
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        let k = (i + 1) as f64;
        let (dx, dy) = (a - mx, b - my);
        mx += dx / k;
        my += dy / k;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Ok(Correlation::Undefined);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok(Correlation::Defined { r, p_value })
}

/// One-sided `P(X ≥ wins)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_p_value(wins: usize, n: usize) -> f64 {
    if wins == 0 || n == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, n as u64).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

/// Published full-scale results, for display next to desk-scale reports.
pub fn reference_results() -> Value {
    serde_json::from_str(include_str!("reference_results.json")).expect("embedded reference results parse")
}

pub(crate) fn reference(path: &[&str]) -> Option<Value> {
    let mut v = reference_results();
    for key in path {
        v = v.get(*key)?.clone();
    }
    Some(v)
}
