//! Raw-waveform speech encoder: sinc filter bank, strided 1-d conv stack,
//! temporal average pooling and a linear projection.

use rand::Rng;
use serde::{Deserialize, Serialize};
use voxface_nn::layers::{BatchNorm, Conv1d, Linear, PRelu};
use voxface_nn::{Binder, ParamStore, Scalar, Tape, Tensor, Var};

use super::sinc::SincConv;
use super::EMBED_DIM;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockArch {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeechEncoderArch {
    pub sample_rate: u32,
    pub sinc_filters: usize,
    pub sinc_kernel: usize,
    pub sinc_min_band_hz: f64,
    pub blocks: Vec<ConvBlockArch>,
    pub embed_dim: usize,
}

fn blocks(spec: &[(usize, usize, usize)]) -> Vec<ConvBlockArch> {
    spec.iter()
        .map(|&(channels, kernel, stride)| ConvBlockArch { channels, kernel, stride })
        .collect()
}

impl SpeechEncoderArch {
    /// Full-size network: 64 sinc filters of 251 taps and seven conv stacks.
    pub fn full() -> Self {
        Self {
            sample_rate: 16_000,
            sinc_filters: 64,
            sinc_kernel: 251,
            sinc_min_band_hz: 50.0,
            blocks: blocks(&[
                (64, 20, 10),
                (64, 11, 2),
                (128, 11, 1),
                (128, 11, 2),
                (256, 11, 1),
                (256, 11, 2),
                (512, 11, 2),
            ]),
            embed_dim: EMBED_DIM,
        }
    }

    /// Desk-scale network for 1 s clips.
    pub fn toy() -> Self {
        Self {
            sample_rate: 16_000,
            sinc_filters: 16,
            sinc_kernel: 129,
            sinc_min_band_hz: 50.0,
            blocks: blocks(&[(16, 10, 5), (32, 5, 2), (32, 5, 2), (64, 5, 2), (64, 5, 2)]),
            embed_dim: EMBED_DIM,
        }
    }

    /// Minimal network for gradient checks.
    pub fn tiny() -> Self {
        Self {
            sample_rate: 16_000,
            sinc_filters: 4,
            sinc_kernel: 33,
            sinc_min_band_hz: 50.0,
            blocks: blocks(&[(4, 5, 2), (6, 3, 2)]),
            embed_dim: EMBED_DIM,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.blocks.iter().any(|b| b.channels == 0 || b.kernel == 0 || b.stride == 0) {
            return Err(Error::InvalidInput("speech encoder widths, kernels and strides must be positive".into()));
        }
        Ok(())
    }

    /// Number of time steps left after the conv stack, `None` if the input
    /// is consumed before the last layer.
    pub fn output_frames(&self, input_len: usize) -> Option<usize> {
        let mut len = input_len.checked_sub(self.sinc_kernel - 1).filter(|&l| l > 0)?;
        for b in &self.blocks {
            let pad = (b.kernel - 1) / 2;
            let padded = len + 2 * pad;
            if padded < b.kernel {
                return None;
            }
            len = (padded - b.kernel) / b.stride + 1;
        }
        Some(len)
    }

    /// Shortest waveform that yields at least one output frame.
    pub fn min_input_len(&self) -> usize {
        let mut len = self.sinc_kernel;
        while self.output_frames(len).is_none() {
            len += 1;
        }
        len
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    conv: Conv1d,
    bn: BatchNorm,
    act: PRelu,
}

#[derive(Clone, Debug)]
pub struct SpeechEncoder {
    pub arch: SpeechEncoderArch,
    pub sinc: SincConv,
    bn0: BatchNorm,
    act0: PRelu,
    blocks: Vec<ConvBlock>,
    head: Linear,
}

impl SpeechEncoder {
    pub fn new<T: Scalar>(arch: SpeechEncoderArch, store: &mut ParamStore<T>, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let sinc = SincConv::new(
            store,
            &format!("{prefix}sinc"),
            arch.sinc_filters,
            arch.sinc_kernel,
            arch.sample_rate as f64,
            arch.sinc_min_band_hz,
        )?;
        let bn0 = BatchNorm::new(store, &format!("{prefix}sinc_bn"), arch.sinc_filters);
        let act0 = PRelu::new(store, &format!("{prefix}sinc_act"), arch.sinc_filters);
        let mut in_ch = arch.sinc_filters;
        let mut blocks = Vec::with_capacity(arch.blocks.len());
        for (i, b) in arch.blocks.iter().enumerate() {
            let name = format!("{prefix}block{i}");
            blocks.push(ConvBlock {
                conv: Conv1d::new(store, &format!("{name}.conv"), in_ch, b.channels, b.kernel, b.stride, (b.kernel - 1) / 2, false, rng),
                bn: BatchNorm::new(store, &format!("{name}.bn"), b.channels),
                act: PRelu::new(store, &format!("{name}.act"), b.channels),
            });
            in_ch = b.channels;
        }
        let head = Linear::new(store, &format!("{prefix}head"), in_ch, arch.embed_dim, true, rng);
        Ok(Self {
            arch,
            sinc,
            bn0,
            act0,
            blocks,
            head,
        })
    }

    pub fn min_input_len(&self) -> usize {
        self.arch.min_input_len()
    }

    /// `x: [N, 1, L]` waveforms to `[N, embed_dim]` embeddings.
    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != 1 || shape[0] == 0 {
            return Err(Error::InvalidInput(format!("speech encoder expects [N, 1, L] input, got {shape:?}")));
        }
        if shape[2] < self.min_input_len() {
            return Err(Error::InvalidInput(format!(
                "waveform of {} samples is shorter than the encoder's receptive field ({} samples)",
                shape[2],
                self.min_input_len()
            )));
        }
        let mut h = self.sinc.forward(b, x);
        h = self.act0.forward(b, self.bn0.forward(b, h));
        for blk in &self.blocks {
            h = blk.act.forward(b, blk.bn.forward(b, blk.conv.forward(b, h)));
        }
        let pooled = h.mean_trailing(2);
        Ok(self.head.forward(b, pooled))
    }

    /// Eval-mode embeddings of equal-length waveforms, batched internally.
    pub fn embed<T: Scalar>(&self, store: &ParamStore<T>, waves: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(waves.len());
        for chunk in waves.chunks(16) {
            let tape = Tape::<T>::new();
            let b = Binder::frozen(&tape, store, false);
            let x = tape.constant(stack_waves(chunk)?);
            let e = self.forward(&b, x)?;
            let v = e.value();
            out.extend(v.data().chunks(self.arch.embed_dim).map(|r| r.iter().map(|x| x.re() as f32).collect()));
        }
        Ok(out)
    }
}

/// Stacks equal-length waveforms into `[N, 1, L]`.
pub fn stack_waves<T: Scalar>(waves: &[&[f32]]) -> Result<Tensor<T>> {
    let len = waves.first().map_or(0, |w| w.len());
    if waves.iter().any(|w| w.len() != len) {
        return Err(Error::InvalidInput("waveforms in a batch must share one length".into()));
    }
    let data = waves.iter().flat_map(|w| w.iter().map(|&s| T::from_f64(s as f64))).collect();
    Ok(Tensor::new(&[waves.len(), 1, len], data))
}
