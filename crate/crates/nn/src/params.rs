//! Named parameter storage and per-forward binding onto a tape.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    pub trainable: bool,
    /// Buffers (e.g. running statistics) are saved but never differentiated.
    pub buffer: bool,
}

#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    fn push(&mut self, name: &str, value: Tensor<T>, buffer: bool) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter name `{name}`");
        self.params.push(Param {
            name: name.to_string(),
            value: Arc::new(value),
            trainable: !buffer,
            buffer,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.push(name, value, false)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.push(name, value, true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_arc(&self, id: ParamId) -> Arc<Tensor<T>> {
        self.params[id.0].value.clone()
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        let p = &mut self.params[id.0];
        assert_eq!(p.value.shape(), value.shape(), "set `{}`: shape changed", p.name);
        p.value = Arc::new(value);
    }

    /// Mutable access; copies the tensor first if a tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Marks every non-buffer parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| !p.buffer && p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    pub fn num_trainable_elements(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Arc::new(p.value.cast()),
                    trainable: p.trainable,
                    buffer: p.buffer,
                })
                .collect(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Arc<Tensor<T>>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Replaces every stored value from `named`, matching by name and shape.
    pub fn load_named(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = named
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| NnError::MissingParam(p.name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(NnError::ArchMismatch(format!(
                    "`{}` has shape {:?}, checkpoint holds {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
            p.value = Arc::new(t.clone());
        }
        Ok(())
    }

    /// Copies every entry `src_prefix*` of `other` into `dst_prefix*` here.
    /// Returns how many tensors were copied.
    pub fn copy_prefix_from(&mut self, other: &ParamStore<T>, src_prefix: &str, dst_prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for src in other.params.iter().filter(|p| p.name.starts_with(src_prefix)) {
            let name = format!("{dst_prefix}{}", &src.name[src_prefix.len()..]);
            let id = self.find(&name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if self.params[id.0].value.shape() != src.value.shape() {
                return Err(NnError::ArchMismatch(format!("`{name}` shape differs from `{}`", src.name)));
            }
            self.params[id.0].value = src.value.clone();
            copied += 1;
        }
        Ok(copied)
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, v) in updates {
            self.set(id, v);
        }
    }

    /// Bitwise equality of every stored value.
    pub fn values_equal(&self, other: &ParamStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}

/// Gradients aligned with the entries of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn empty(len: usize) -> Self {
        Self {
            grads: vec![None; len],
        }
    }

    pub fn from_vec(grads: Vec<Option<Tensor<T>>>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, g: Tensor<T>) {
        self.grads[id.0] = Some(g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Option<&Tensor<T>>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_ref()))
    }

    pub fn accumulate(&mut self, other: &ParamGrads<T>) {
        assert_eq!(self.grads.len(), other.grads.len(), "gradient sets differ");
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g = g.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.sum_sq()).sum::<f64>().sqrt()
    }
}

/// Binds a store's parameters onto a tape for one forward pass.
pub struct Binder<'t, 's, T: Scalar> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    vars: RefCell<Vec<Option<Var<'t, T>>>>,
    train: bool,
    track: bool,
    updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'t, 's, T: Scalar> Binder<'t, 's, T> {
    /// Trainable parameters get gradients; `train` selects batch statistics.
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, train: bool) -> Self {
        Self {
            tape,
            store,
            vars: RefCell::new(vec![None; store.len()]),
            train,
            track: true,
            updates: RefCell::new(Vec::new()),
        }
    }

    /// No parameter receives a gradient; inputs still can.
    pub fn frozen(tape: &'t Tape<T>, store: &'s ParamStore<T>, train: bool) -> Self {
        Self {
            track: false,
            ..Self::new(tape, store, train)
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let p = self.store.param(id);
        let v = self
            .tape
            .leaf(p.value.clone(), self.track && p.trainable && !p.buffer);
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> Arc<Tensor<T>> {
        self.store.get_arc(id)
    }

    pub fn record_update(&self, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    pub fn take_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.updates.borrow_mut())
    }

    /// Collects the gradient of every bound parameter.
    pub fn grads(&self, grads: &Grads<T>) -> ParamGrads<T> {
        let vars = self.vars.borrow();
        ParamGrads {
            grads: vars
                .iter()
                .map(|v| v.and_then(|v| grads.get(v).cloned()))
                .collect(),
        }
    }
}
