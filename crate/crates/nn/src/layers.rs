//! Parameterised building blocks. Layers only hold [`ParamId`]s, so one
//! layer description works for a store of any scalar type.

use rand::Rng;

use crate::params::{Binder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// `U(-bound, bound)` samples.
pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data)
}

/// Fan-in scaled uniform init, `bound = gain / sqrt(fan_in)`.
fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, gain / (fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_param(
            &format!("{name}.weight"),
            fan_in_uniform(&[out_features, in_features], in_features, 1.0, rng),
        );
        let bias = bias.then(|| {
            store.add_param(
                &format!("{name}.bias"),
                fan_in_uniform(&[out_features], in_features, 1.0, rng),
            )
        });
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.linear(b.param(self.weight), self.bias.map(|id| b.param(id)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel;
        let weight = store.add_param(
            &format!("{name}.weight"),
            fan_in_uniform(&[out_ch, in_ch, kernel], fan_in, 1.0, rng),
        );
        let bias = bias.then(|| store.add_param(&format!("{name}.bias"), fan_in_uniform(&[out_ch], fan_in, 1.0, rng)));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv1d(b.param(self.weight), self.bias.map(|id| b.param(id)), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub pad: usize,
}

impl Conv2d {
    /// Square-kernel stride-1 convolution; `gain` scales the fan-in bound.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = store.add_param(
            &format!("{name}.weight"),
            fan_in_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, gain, rng),
        );
        let bias = Some(store.add_param(&format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        Self { weight, bias, pad }
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv2d(b.param(self.weight), self.bias.map(|id| b.param(id)), self.pad)
    }
}

/// Batch normalization with running statistics kept as store buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Number of batches folded into the running statistics.
    pub batches: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add_param(&format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add_param(&format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], T::one())),
            batches: store.add_buffer(&format!("{name}.batches"), Tensor::zeros(&[1])),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Batch statistics in training mode (running averages updated through
    /// the binder), running statistics otherwise. The running averages are
    /// cumulative until `1 / momentum` batches have been seen, then
    /// exponential, so early evaluation does not see the initial values.
    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        let (gamma, beta) = (b.param(self.gamma), b.param(self.beta));
        if b.is_train() {
            let (y, stats) = x.batch_norm_train(gamma, beta, self.eps);
            let seen = b.buffer(self.batches).data()[0].re();
            let rate = self.momentum.max(1.0 / (seen + 1.0));
            let m = T::from_f64(rate);
            let keep = T::from_f64(1.0 - rate);
            let blend = |old: &Tensor<T>, new: &[T]| {
                let d = old.data().iter().zip(new).map(|(&o, &n)| keep * o + m * n).collect();
                Tensor::new(old.shape(), d)
            };
            b.record_update(self.running_mean, blend(&b.buffer(self.running_mean), &stats.mean));
            b.record_update(self.running_var, blend(&b.buffer(self.running_var), &stats.var));
            b.record_update(self.batches, Tensor::new(&[1], vec![T::from_f64(seen + 1.0)]));
            y
        } else {
            x.batch_norm_eval(gamma, beta, &b.buffer(self.running_mean), &b.buffer(self.running_var), self.eps)
        }
    }
}

/// Parametric ReLU with one slope per channel.
#[derive(Clone, Debug)]
pub struct PRelu {
    pub alpha: ParamId,
}

impl PRelu {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            alpha: store.add_param(&format!("{name}.alpha"), Tensor::full(&[channels], T::from_f64(0.25))),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.prelu(b.param(self.alpha))
    }
}
