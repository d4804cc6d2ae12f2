//! Projection discriminator on the face-encoder trunk, relativistic identity
//! scores, non-saturating losses and the R1 gradient penalty.

use rand::Rng;
use voxface_nn::layers::Linear;
use voxface_nn::{Binder, Dual, ParamGrads, ParamStore, Scalar, Tape, Tensor, Var};

use crate::encoders::{FaceEncoder, FaceEncoderArch, SpeechEncoder, FACE_PREFIX};
use crate::error::{Error, Result};

pub const PSI_PREFIX: &str = "psi.";

/// `g(f, c) = cᵀφ(f) + ψ(φ(f))` with `φ` the face encoder.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub phi: FaceEncoder,
    pub psi: Linear,
}

impl Discriminator {
    pub fn new<T: Scalar>(arch: FaceEncoderArch, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        let phi = FaceEncoder::new(arch, store, FACE_PREFIX, rng)?;
        let psi = Linear::new(store, &format!("{PSI_PREFIX}head"), phi.arch.embed_dim, 1, true, rng);
        Ok(Self { phi, psi })
    }

    /// `φ(f)`, `[N, 128]`.
    pub fn features<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        self.phi.forward(b, f)
    }

    /// `ψ(φ)`, `[N]`.
    pub fn psi<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, phi: Var<'t, T>) -> Var<'t, T> {
        let n = phi.shape()[0];
        self.psi.forward(b, phi).reshape(&[n])
    }

    /// `g` from precomputed features.
    pub fn score_from_features<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, phi: Var<'t, T>, c: Var<'t, T>) -> Result<Var<'t, T>> {
        if c.shape() != phi.shape() {
            return Err(Error::InvalidInput(format!(
                "condition {:?} does not match features {:?}",
                c.shape(),
                phi.shape()
            )));
        }
        Ok(c.rowdot(phi).add(self.psi(b, phi)))
    }

    /// `g(f, c)` per sample, `[N]`.
    pub fn score<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, f: Var<'t, T>, c: Var<'t, T>) -> Result<Var<'t, T>> {
        let phi = self.features(b, f)?;
        self.score_from_features(b, phi, c)
    }
}

/// Per-sample discriminator and generator scores.
#[derive(Clone, Copy, Debug)]
pub struct RelidScores<'t, T: Scalar> {
    pub d_score: Var<'t, T>,
    pub g_score: Var<'t, T>,
}

/// Relativistic scores. With `mismatch_term`, the identity term
/// `c⁺ᵀφ(f) − c⁻ᵀφ(f)` is added to each side; otherwise only the
/// relativistic difference `g(a, c⁺) − g(b, c⁺)` remains.
pub fn relid_scores<'t, T: Scalar>(
    d: &Discriminator,
    b: &Binder<'t, '_, T>,
    f_real: Var<'t, T>,
    f_fake: Var<'t, T>,
    c_pos: Var<'t, T>,
    c_neg: Var<'t, T>,
    mismatch_term: bool,
) -> Result<RelidScores<'t, T>> {
    if f_real.shape() != f_fake.shape() || c_pos.shape() != c_neg.shape() {
        return Err(Error::InvalidInput("real/fake faces and conditions must have matching shapes".into()));
    }
    let n = f_real.shape()[0];
    // One trunk pass over real and fake faces; the trunk has no batch coupling.
    let phi = d.features(b, Var::cat_rows(&[f_real, f_fake]))?;
    let (phi_r, phi_f) = (phi.slice_rows(0, n), phi.slice_rows(n, n));
    let g_r = d.score_from_features(b, phi_r, c_pos)?;
    let g_f = d.score_from_features(b, phi_f, c_pos)?;
    let mut d_score = g_r.sub(g_f);
    let mut g_score = g_f.sub(g_r);
    if mismatch_term {
        d_score = d_score.add(c_pos.rowdot(phi_r).sub(c_neg.rowdot(phi_r)));
        g_score = g_score.add(c_pos.rowdot(phi_f).sub(c_neg.rowdot(phi_f)));
    }
    Ok(RelidScores { d_score, g_score })
}

/// `−mean log σ(s)`.
pub fn nonsaturating_loss<'t, T: Scalar>(scores: Var<'t, T>) -> Var<'t, T> {
    scores.log_sigmoid().mean().neg()
}

pub fn d_loss<'t, T: Scalar>(s: &RelidScores<'t, T>) -> Var<'t, T> {
    nonsaturating_loss(s.d_score)
}

pub fn g_loss<'t, T: Scalar>(s: &RelidScores<'t, T>) -> Var<'t, T> {
    nonsaturating_loss(s.g_score)
}

/// Where the R1 condition vectors come from.
#[derive(Clone, Copy, Debug)]
pub enum Condition<'a, T> {
    /// Fixed `[N, 128]` conditions.
    Fixed(&'a Tensor<T>),
    /// Conditions computed by a trainable speech encoder held in the same
    /// store, from `[N, 1, L]` waveforms (batch statistics in its norms).
    Speech { encoder: &'a SpeechEncoder, waves: &'a Tensor<T> },
}

fn condition_var<'t, S: Scalar, T: Scalar>(b: &Binder<'t, '_, S>, cond: Condition<'_, T>) -> Result<Var<'t, S>> {
    match cond {
        Condition::Fixed(c) => Ok(b.tape().constant(lift(c))),
        Condition::Speech { encoder, waves } => encoder.forward(b, b.tape().constant(lift(waves))),
    }
}

fn lift<T: Scalar, S: Scalar>(t: &Tensor<T>) -> Tensor<S> {
    Tensor::new(t.shape(), t.data().iter().map(|v| S::from_f64(v.re())).collect())
}

/// `(γ/2) · mean_b ‖∇_f g(f_b, c_b)‖²` over real faces.
pub fn r1_penalty<T: Scalar>(
    d: &Discriminator,
    store: &ParamStore<T>,
    f_real: &Tensor<T>,
    cond: Condition<'_, T>,
    gamma: f64,
) -> Result<f64> {
    Ok(r1_input_gradient(d, store, f_real, cond, gamma)?.0)
}

/// Penalty value and `∇_f Σ_b g`.
fn r1_input_gradient<T: Scalar>(
    d: &Discriminator,
    store: &ParamStore<T>,
    f_real: &Tensor<T>,
    cond: Condition<'_, T>,
    gamma: f64,
) -> Result<(f64, Tensor<T>)> {
    let tape = Tape::<T>::new();
    let b = Binder::frozen(&tape, store, true);
    let f = tape.var(f_real.clone());
    let c = condition_var(&b, cond)?;
    let g = d.score(&b, f, c)?.sum();
    let v = tape.backward(g).get_or_zeros(f);
    let n = f_real.dim(0) as f64;
    Ok((gamma / (2.0 * n) * v.sum_sq(), v))
}

/// R1 value and its exact gradient with respect to every trainable entry of
/// `store`. The parameter gradient is a mixed second derivative, obtained by
/// running reverse mode on dual numbers whose tangent is `∇_f g`.
pub fn r1_penalty_with_grads<F: Scalar>(
    d: &Discriminator,
    store: &ParamStore<F>,
    f_real: &Tensor<F>,
    cond: Condition<'_, F>,
    gamma: f64,
) -> Result<(f64, ParamGrads<F>)> {
    let (value, v) = r1_input_gradient(d, store, f_real, cond, gamma)?;
    let dual_store: ParamStore<Dual<F>> = store.cast();
    let tape = Tape::<Dual<F>>::new();
    let b = Binder::new(&tape, &dual_store, true);
    let f = Tensor::new(
        f_real.shape(),
        f_real.data().iter().zip(v.data()).map(|(&x, &t)| Dual::new(x, t)).collect(),
    );
    let c = condition_var(&b, cond)?;
    let g = d.score(&b, tape.constant(f), c)?.sum();
    let dual_grads = b.grads(&tape.backward(g));
    let coef = gamma / f_real.dim(0) as f64;
    let grads = dual_grads
        .iter()
        .map(|(_, g)| g.map(|g| Tensor::new(g.shape(), g.data().iter().map(|x| x.du * F::from_f64(coef)).collect())))
        .collect();
    Ok((value, ParamGrads::from_vec(grads)))
}
