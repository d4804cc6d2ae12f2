//! Conditional generator: `(z, c)` enters through a linear stem, and every
//! stage is modulated by AdaIN parameters computed from `c`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use voxface_nn::layers::{Conv2d, Linear};
use voxface_nn::{Binder, ParamStore, Scalar, Tape, Tensor, Var};

use crate::data_pipeline::FaceImage;
use crate::encoders::EMBED_DIM;
use crate::error::{Error, Result};

pub const Z_DIM: usize = 128;
const IN_EPS: f64 = 1e-5;
const CONV_GAIN: f64 = 1.7320508075688772;

/// `scale * (x - mean) / std + bias` per sample and channel over space.
pub fn adain<'t, T: Scalar>(x: Var<'t, T>, scale: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    let (xs, ss, bs) = (x.shape(), scale.shape(), bias.shape());
    if xs.len() < 3 || ss != xs[..2] || bs != xs[..2] {
        return Err(Error::InvalidInput(format!(
            "AdaIN parameters {ss:?}/{bs:?} do not match feature map {xs:?}"
        )));
    }
    Ok(x.instance_norm(IN_EPS).mul_nc(scale).add_nc(bias))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorArch {
    pub z_dim: usize,
    pub c_dim: usize,
    /// Width at 4×4 followed by the width after each up-sampling stage.
    pub channels: Vec<usize>,
}

impl GeneratorArch {
    /// 4×4 → 128×128 in five stages.
    pub fn full() -> Self {
        Self {
            z_dim: Z_DIM,
            c_dim: EMBED_DIM,
            channels: vec![512, 512, 256, 128, 64, 32],
        }
    }

    /// 4×4 → 32×32 in three stages.
    pub fn toy() -> Self {
        Self {
            z_dim: Z_DIM,
            c_dim: EMBED_DIM,
            channels: vec![64, 64, 32, 16],
        }
    }

    pub fn tiny() -> Self {
        Self {
            z_dim: Z_DIM,
            c_dim: EMBED_DIM,
            channels: vec![6, 4],
        }
    }

    pub fn image_size(&self) -> usize {
        4 << (self.channels.len() - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.z_dim == 0 || self.c_dim == 0 {
            return Err(Error::InvalidInput("generator widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct AdaIn {
    scale: Linear,
    shift: Linear,
}

impl AdaIn {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c_dim: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let scale = Linear::new(store, &format!("{name}.scale"), c_dim, channels, true, rng);
        let shift = Linear::new(store, &format!("{name}.shift"), c_dim, channels, true, rng);
        store.set(scale.bias.expect("bias"), Tensor::full(&[channels], T::one()));
        store.set(shift.bias.expect("bias"), Tensor::zeros(&[channels]));
        Self { scale, shift }
    }

    fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>, c: Var<'t, T>) -> Result<Var<'t, T>> {
        adain(x, self.scale.forward(b, c), self.shift.forward(b, c))
    }
}

#[derive(Clone, Debug)]
struct UpBlock {
    norm1: AdaIn,
    conv1: Conv2d,
    norm2: AdaIn,
    conv2: Conv2d,
    shortcut: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub arch: GeneratorArch,
    stem: Linear,
    blocks: Vec<UpBlock>,
    out_norm: AdaIn,
    out_conv: Conv2d,
}

impl Generator {
    pub fn new<T: Scalar>(arch: GeneratorArch, store: &mut ParamStore<T>, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let ch = &arch.channels;
        let stem = Linear::new(store, &format!("{prefix}stem"), arch.z_dim + arch.c_dim, ch[0] * 16, true, rng);
        let blocks = ch
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (cin, cout) = (w[0], w[1]);
                let name = format!("{prefix}block{i}");
                UpBlock {
                    norm1: AdaIn::new(store, &format!("{name}.adain1"), arch.c_dim, cin, rng),
                    conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, CONV_GAIN, rng),
                    norm2: AdaIn::new(store, &format!("{name}.adain2"), arch.c_dim, cout, rng),
                    conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, CONV_GAIN, rng),
                    shortcut: Conv2d::new(store, &format!("{name}.shortcut"), cin, cout, 1, 0, 1.0, rng),
                }
            })
            .collect();
        let last = *ch.last().expect("validated");
        let out_norm = AdaIn::new(store, &format!("{prefix}out.adain"), arch.c_dim, last, rng);
        let out_conv = Conv2d::new(store, &format!("{prefix}out.conv"), last, 3, 3, 1, 1.0, rng);
        Ok(Self {
            arch,
            stem,
            blocks,
            out_norm,
            out_conv,
        })
    }

    /// `z: [N, z_dim]`, `c: [N, c_dim]` to images `[N, 3, S, S]` in `[-1, 1]`.
    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, z: Var<'t, T>, c: Var<'t, T>) -> Result<Var<'t, T>> {
        let (zs, cs) = (z.shape(), c.shape());
        if zs.len() != 2 || cs.len() != 2 || zs[1] != self.arch.z_dim || cs[1] != self.arch.c_dim || zs[0] != cs[0] || zs[0] == 0 {
            return Err(Error::InvalidInput(format!(
                "generator expects z [N, {}] and c [N, {}], got {zs:?} and {cs:?}",
                self.arch.z_dim, self.arch.c_dim
            )));
        }
        let n = zs[0];
        let mut h = self.stem.forward(b, z.concat_cols(c)).reshape(&[n, self.arch.channels[0], 4, 4]);
        for blk in &self.blocks {
            let skip = blk.shortcut.forward(b, h.upsample2());
            let mut y = blk.norm1.forward(b, h, c)?.relu().upsample2();
            y = blk.conv1.forward(b, y);
            y = blk.norm2.forward(b, y, c)?.relu();
            h = blk.conv2.forward(b, y).add(skip);
        }
        let y = self.out_norm.forward(b, h, c)?.relu();
        Ok(self.out_conv.forward(b, y).tanh())
    }

    /// Eval-time generation from plain vectors.
    pub fn generate<T: Scalar>(&self, store: &ParamStore<T>, z: &[&[f32]], c: &[&[f32]]) -> Result<Vec<FaceImage>> {
        if z.len() != c.len() {
            return Err(Error::InvalidInput("one condition per latent is required".into()));
        }
        let size = self.arch.image_size();
        let mut out = Vec::with_capacity(z.len());
        for (zc, cc) in z.chunks(32).zip(c.chunks(32)) {
            let tape = Tape::<T>::new();
            let b = Binder::frozen(&tape, store, false);
            let zt = tape.constant(stack_rows(zc, self.arch.z_dim)?);
            let ct = tape.constant(stack_rows(cc, self.arch.c_dim)?);
            let img = self.forward(&b, zt, ct)?.value();
            for chunk in img.data().chunks(3 * size * size) {
                out.push(FaceImage::new(size, chunk.iter().map(|v| v.re() as f32).collect())?);
            }
        }
        Ok(out)
    }
}

/// Stacks vectors of length `dim` into `[N, dim]`.
pub fn stack_rows<T: Scalar>(rows: &[&[f32]], dim: usize) -> Result<Tensor<T>> {
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidInput(format!("expected vectors of dimension {dim}")));
    }
    let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::from_f64(v as f64))).collect();
    Ok(Tensor::new(&[rows.len(), dim], data))
}
