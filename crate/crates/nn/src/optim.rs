//! First-order optimizers and a validation-driven learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::{ParamGrads, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Momentum buffers indexed by parameter id.
    pub fn velocity(&self) -> &[Option<Tensor<T>>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Option<Tensor<T>>>) {
        self.velocity = velocity;
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        self.velocity.resize(store.len(), None);
        let (lr, mu, wd) = (T::from_f64(self.lr), T::from_f64(self.momentum), T::from_f64(self.weight_decay));
        for (id, g) in grads.iter() {
            let Some(g) = g else { continue };
            if !store.param(id).trainable {
                continue;
            }
            let p = store.get_mut(id);
            let d = p.zip_map(g, |p, g| g + wd * p);
            let v = match self.velocity[id.0].take() {
                Some(v) => v.zip_map(&d, |v, d| mu * v + d),
                None => d,
            };
            for (p, &v) in p.data_mut().iter_mut().zip(v.data()) {
                *p -= lr * v;
            }
            self.velocity[id.0] = Some(v);
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: Vec<u64>,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            steps: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        let n = store.len();
        self.steps.resize(n, 0);
        self.m.resize(n, None);
        self.v.resize(n, None);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        for (id, g) in grads.iter() {
            let Some(g) = g else { continue };
            if !store.param(id).trainable {
                continue;
            }
            let i = id.0;
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let m = match self.m[i].take() {
                Some(m) => m.zip_map(g, |m, g| b1 * m + c1 * g),
                None => g.map(|g| c1 * g),
            };
            let v = match self.v[i].take() {
                Some(v) => v.zip_map(g, |v, g| b2 * v + c2 * g * g),
                None => g.map(|g| c2 * g * g),
            };
            let step = T::from_f64(self.lr / (1.0 - self.beta1.powi(t)));
            let bc2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(t)));
            let eps = T::from_f64(self.eps);
            let p = store.get_mut(id);
            for ((p, &m), &v) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                *p -= step * m / ((v * bc2).sqrt() + eps);
            }
            self.m[i] = Some(m);
            self.v[i] = Some(v);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauAction {
    Keep,
    /// Learning rate was divided by the factor.
    Decay,
    /// The decay budget is exhausted; training should end.
    Stop,
}

/// Divides the learning rate when validation loss stops decreasing and
/// signals a stop after a fixed number of decays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub max_decays: usize,
    best: Option<f64>,
    bad_epochs: usize,
    decays: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, max_decays: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            max_decays,
            best: None,
            bad_epochs: 0,
            decays: 0,
        }
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn best(&self) -> f64 {
        self.best.unwrap_or(f64::INFINITY)
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauAction {
        if val_loss < self.best() {
            self.best = Some(val_loss);
            self.bad_epochs = 0;
            return PlateauAction::Keep;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return PlateauAction::Keep;
        }
        self.bad_epochs = 0;
        self.decays += 1;
        if self.decays >= self.max_decays {
            PlateauAction::Stop
        } else {
            self.lr /= self.factor;
            PlateauAction::Decay
        }
    }
}
