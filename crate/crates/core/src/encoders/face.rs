//! Residual face encoder without normalization layers, ending in global sum
//! pooling and a linear head.

use rand::Rng;
use serde::{Deserialize, Serialize};
use voxface_nn::layers::{Conv2d, Linear};
use voxface_nn::{Binder, ParamStore, Scalar, Tape, Tensor, Var};

use super::EMBED_DIM;
use crate::data_pipeline::FaceImage;
use crate::error::{Error, Result};

const MAIN_GAIN: f64 = 1.7320508075688772;
const SKIP_GAIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceEncoderArch {
    pub image_size: usize,
    /// One down-sampling residual stage per entry.
    pub channels: Vec<usize>,
    /// Resolution-preserving blocks appended at the last width.
    pub extra_blocks: usize,
    pub embed_dim: usize,
}

impl FaceEncoderArch {
    /// 128×128 faces through five down-sampling stages to a 4×4 map.
    pub fn full() -> Self {
        Self {
            image_size: 128,
            channels: vec![32, 64, 128, 256, 512],
            extra_blocks: 1,
            embed_dim: EMBED_DIM,
        }
    }

    /// 32×32 faces through three stages to a 4×4 map.
    pub fn toy() -> Self {
        Self {
            image_size: 32,
            channels: vec![16, 32, 64],
            extra_blocks: 1,
            embed_dim: EMBED_DIM,
        }
    }

    pub fn tiny() -> Self {
        Self {
            image_size: 8,
            channels: vec![4, 6],
            extra_blocks: 1,
            embed_dim: EMBED_DIM,
        }
    }

    pub fn feature_map_size(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    pub fn feature_channels(&self) -> usize {
        *self.channels.last().expect("validated")
    }

    fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.embed_dim == 0 {
            return Err(Error::InvalidInput("face encoder needs at least one stage with positive width".into()));
        }
        let scale = 1usize << self.channels.len();
        if !self.image_size.is_multiple_of(scale) || self.image_size < scale {
            return Err(Error::InvalidInput(format!(
                "image size {} is not divisible by 2^{}",
                self.image_size,
                self.channels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BlockKind {
    /// First stage: no leading activation, shortcut pools before projecting.
    Input,
    Down,
    Same,
}

#[derive(Clone, Debug)]
struct ResBlock {
    kind: BlockKind,
    c1: Conv2d,
    c2: Conv2d,
    shortcut: Option<Conv2d>,
}

impl ResBlock {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, kind: BlockKind, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let c1 = Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, MAIN_GAIN, rng);
        let c2 = Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, MAIN_GAIN, rng);
        let shortcut = (kind != BlockKind::Same || cin != cout)
            .then(|| Conv2d::new(store, &format!("{name}.shortcut"), cin, cout, 1, 0, SKIP_GAIN, rng));
        Self { kind, c1, c2, shortcut }
    }

    fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        let pre = if self.kind == BlockKind::Input { x } else { x.relu() };
        let mut h = self.c2.forward(b, self.c1.forward(b, pre).relu());
        if self.kind != BlockKind::Same {
            h = h.avg_pool2();
        }
        let skip = match (self.kind, &self.shortcut) {
            (BlockKind::Input, Some(sc)) => sc.forward(b, x.avg_pool2()),
            (BlockKind::Down, Some(sc)) => sc.forward(b, x).avg_pool2(),
            (_, Some(sc)) => sc.forward(b, x),
            (_, None) => x,
        };
        h.add(skip)
    }
}

#[derive(Clone, Debug)]
pub struct FaceEncoder {
    pub arch: FaceEncoderArch,
    blocks: Vec<ResBlock>,
    head: Linear,
}

impl FaceEncoder {
    pub fn new<T: Scalar>(arch: FaceEncoderArch, store: &mut ParamStore<T>, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let mut blocks = Vec::new();
        let mut cin = 3;
        for (i, &c) in arch.channels.iter().enumerate() {
            let kind = if i == 0 { BlockKind::Input } else { BlockKind::Down };
            blocks.push(ResBlock::new(store, &format!("{prefix}block{i}"), kind, cin, c, rng));
            cin = c;
        }
        for j in 0..arch.extra_blocks {
            let i = arch.channels.len() + j;
            blocks.push(ResBlock::new(store, &format!("{prefix}block{i}"), BlockKind::Same, cin, cin, rng));
        }
        let head = Linear::new(store, &format!("{prefix}head"), cin, arch.embed_dim, true, rng);
        Ok(Self { arch, blocks, head })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let s = self.arch.image_size;
        if shape.len() != 4 || shape[0] == 0 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::InvalidInput(format!("face encoder expects [N, 3, {s}, {s}] input, got {shape:?}")));
        }
        Ok(())
    }

    /// Spatial feature map before pooling, `[N, C, s, s]`.
    pub fn feature_map<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_input(&x.shape())?;
        let mut h = x;
        for blk in &self.blocks {
            h = blk.forward(b, h);
        }
        Ok(h.relu())
    }

    /// `x: [N, 3, S, S]` in `[-1, 1]` to `[N, embed_dim]`.
    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let pooled = self.feature_map(b, x)?.sum_trailing(2);
        Ok(self.head.forward(b, pooled))
    }

    pub fn embed<T: Scalar>(&self, store: &ParamStore<T>, faces: &[&FaceImage]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(faces.len());
        for chunk in faces.chunks(32) {
            let tape = Tape::<T>::new();
            let b = Binder::frozen(&tape, store, false);
            let e = self.forward(&b, tape.constant(stack_faces(chunk)?))?;
            let v = e.value();
            out.extend(v.data().chunks(self.arch.embed_dim).map(|r| r.iter().map(|x| x.re() as f32).collect()));
        }
        Ok(out)
    }
}

/// Stacks same-size faces into `[N, 3, S, S]`.
pub fn stack_faces<T: Scalar>(faces: &[&FaceImage]) -> Result<Tensor<T>> {
    let size = faces.first().map_or(0, |f| f.size);
    if faces.iter().any(|f| f.size != size) {
        return Err(Error::InvalidInput("faces in a batch must share one resolution".into()));
    }
    let data = faces.iter().flat_map(|f| f.data.iter().map(|&v| T::from_f64(v as f64))).collect();
    Ok(Tensor::new(&[faces.len(), 3, size, size], data))
}
