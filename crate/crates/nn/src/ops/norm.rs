use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, the estimator used for running statistics.
    pub var: Vec<T>,
}

fn nc_inner(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "normalization expects [N, C, ...]");
    (shape[0], shape[1], shape[2..].iter().product())
}

/// `dx = inv_std · (g − mean(g) − x̂·mean(g·x̂))` over one normalization group.
fn normalize_backward<T: Scalar>(g: &[T], xhat: &[T], inv_std: T, out: &mut [T]) {
    let m = T::from_f64(g.len() as f64);
    let mg: T = g.iter().copied().sum::<T>() / m;
    let mgx: T = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / m;
    for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xhat) {
        *o = inv_std * (gi - mg - xi * mgx);
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Batch normalization with batch statistics over `[N, C, ...]`.
    pub fn batch_norm_train(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> (Var<'t, T>, BatchStats<T>) {
        let x = self.value();
        let (n, c, inner) = nc_inner(x.shape());
        let m = n * inner;
        assert!(m > 1, "batch norm needs more than one value per channel");
        let (gv, bv) = (gamma.value(), beta.value());
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let xd = x.data();
        for ci in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                s += xd[(ni * c + ci) * inner..(ni * c + ci + 1) * inner].iter().copied().sum::<T>();
            }
            let mu = s / T::from_f64(m as f64);
            let mut v = T::zero();
            for ni in 0..n {
                for &xv in &xd[(ni * c + ci) * inner..(ni * c + ci + 1) * inner] {
                    v += (xv - mu) * (xv - mu);
                }
            }
            mean[ci] = mu;
            var[ci] = v / T::from_f64(m as f64);
        }
        let eps_t = T::from_f64(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for ni in 0..n {
            for ci in 0..c {
                let r = (ni * c + ci) * inner..(ni * c + ci + 1) * inner;
                for i in r {
                    let h = (xd[i] - mean[ci]) * inv_std[ci];
                    xhat.data_mut()[i] = h;
                    y.data_mut()[i] = gv.data()[ci] * h + bv.data()[ci];
                }
            }
        }
        let unbiased = T::from_f64(m as f64 / (m as f64 - 1.0));
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.iter().map(|&v| v * unbiased).collect(),
        };
        let out = self.tape().op(y, &[self, gamma, beta], move |g, needs| {
            let gd = g.data();
            let hd = xhat.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            let mut dx = needs[0].then(|| Tensor::zeros(g.shape()));
            let mut gc = vec![T::zero(); m];
            let mut hc = vec![T::zero(); m];
            let mut oc = vec![T::zero(); m];
            for ci in 0..c {
                for ni in 0..n {
                    let src = (ni * c + ci) * inner;
                    gc[ni * inner..(ni + 1) * inner].copy_from_slice(&gd[src..src + inner]);
                    hc[ni * inner..(ni + 1) * inner].copy_from_slice(&hd[src..src + inner]);
                }
                dgamma[ci] = gc.iter().zip(&hc).map(|(&a, &b)| a * b).sum();
                dbeta[ci] = gc.iter().copied().sum();
                if let Some(dx) = dx.as_mut() {
                    let scaled: Vec<T> = gc.iter().map(|&v| v * gv.data()[ci]).collect();
                    normalize_backward(&scaled, &hc, inv_std[ci], &mut oc);
                    for ni in 0..n {
                        let dst = (ni * c + ci) * inner;
                        dx.data_mut()[dst..dst + inner].copy_from_slice(&oc[ni * inner..(ni + 1) * inner]);
                    }
                }
            }
            vec![
                dx,
                needs[1].then(|| Tensor::new(&[c], dgamma)),
                needs[2].then(|| Tensor::new(&[c], dbeta)),
            ]
        });
        (out, stats)
    }

    /// Batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: f64,
    ) -> Var<'t, T> {
        let x = self.value();
        let (n, c, inner) = nc_inner(x.shape());
        let (gv, bv) = (gamma.value(), beta.value());
        let eps_t = T::from_f64(eps);
        let inv_std: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let mean = running_mean.data().to_vec();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for ni in 0..n {
            for ci in 0..c {
                for i in (ni * c + ci) * inner..(ni * c + ci + 1) * inner {
                    let h = (x.data()[i] - mean[ci]) * inv_std[ci];
                    xhat.data_mut()[i] = h;
                    y.data_mut()[i] = gv.data()[ci] * h + bv.data()[ci];
                }
            }
        }
        self.tape().op(y, &[self, gamma, beta], move |g, needs| {
            let mut dx = needs[0].then(|| Tensor::zeros(g.shape()));
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    for i in (ni * c + ci) * inner..(ni * c + ci + 1) * inner {
                        let gi = g.data()[i];
                        dgamma[ci] += gi * xhat.data()[i];
                        dbeta[ci] += gi;
                        if let Some(dx) = dx.as_mut() {
                            dx.data_mut()[i] = gi * gv.data()[ci] * inv_std[ci];
                        }
                    }
                }
            }
            vec![
                dx,
                needs[1].then(|| Tensor::new(&[c], dgamma)),
                needs[2].then(|| Tensor::new(&[c], dbeta)),
            ]
        })
    }

    /// Normalizes each `(sample, channel)` slice of `[N, C, ...]` to zero mean
    /// and unit variance. A constant slice maps to zeros.
    pub fn instance_norm(self, eps: f64) -> Var<'t, T> {
        let x = self.value();
        let (n, c, inner) = nc_inner(x.shape());
        let eps_t = T::from_f64(eps);
        let m = T::from_f64(inner as f64);
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = Vec::with_capacity(n * c);
        for (k, (src, dst)) in x.data().chunks(inner).zip(xhat.data_mut().chunks_mut(inner)).enumerate() {
            debug_assert!(k < n * c);
            let mu = src.iter().copied().sum::<T>() / m;
            let var = src.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / m;
            let is = T::one() / (var + eps_t).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mu) * is;
            }
            inv_std.push(is);
        }
        let saved = xhat.clone();
        self.tape().op(xhat, &[self], move |g, _| {
            let mut dx = Tensor::zeros(g.shape());
            for (k, ((gc, hc), oc)) in g
                .data()
                .chunks(inner)
                .zip(saved.data().chunks(inner))
                .zip(dx.data_mut().chunks_mut(inner))
                .enumerate()
            {
                normalize_backward(gc, hc, inv_std[k], oc);
            }
            vec![Some(dx)]
        })
    }
}
