use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshape(shape).expect("reshape");
        self.tape().op(y, &[self], move |g, _| {
            vec![Some(g.clone().reshape(&old).expect("reshape back"))]
        })
    }

    /// Concatenates along the leading dimension.
    pub fn cat_rows(parts: &[Var<'t, T>]) -> Var<'t, T> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::cat_rows(&refs).expect("cat_rows");
        let rows: Vec<usize> = values.iter().map(|v| v.dim(0)).collect();
        parts[0].tape().op(y, parts, move |g, needs| {
            let mut start = 0;
            rows.iter()
                .zip(needs)
                .map(|(&r, &need)| {
                    let out = need.then(|| g.slice_rows(start, r));
                    start += r;
                    out
                })
                .collect()
        })
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t, T> {
        let x = self.value();
        assert!(start + len <= x.dim(0), "slice_rows out of range");
        let y = x.slice_rows(start, len);
        let shape = x.shape().to_vec();
        self.tape().op(y, &[self], move |g, _| {
            let row: usize = shape[1..].iter().product();
            let mut dx = Tensor::zeros(&shape);
            dx.data_mut()[start * row..(start + len) * row].copy_from_slice(g.data());
            vec![Some(dx)]
        })
    }

    /// Selects rows of the leading dimension; indices may repeat.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let row: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            assert!(i < shape[0], "gather_rows index {i} out of range");
            data.extend_from_slice(&x.data()[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape.clone();
        out_shape[0] = idx.len();
        let idx = idx.to_vec();
        self.tape().op(Tensor::new(&out_shape, data), &[self], move |g, _| {
            let mut dx = Tensor::<T>::zeros(&shape);
            let (dd, gd) = (dx.data_mut(), g.data());
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..row {
                    dd[i * row + j] += gd[k * row + j];
                }
            }
            vec![Some(dx)]
        })
    }

    /// `[N, P] ++ [N, Q] -> [N, P + Q]`.
    pub fn concat_cols(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert!(a.ndim() == 2 && b.ndim() == 2 && a.dim(0) == b.dim(0), "concat_cols shapes");
        let (n, p, q) = (a.dim(0), a.dim(1), b.dim(1));
        let mut data = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&b.data()[i * q..(i + 1) * q]);
        }
        self.tape()
            .op(Tensor::new(&[n, p + q], data), &[self, other], move |g, needs| {
                let gd = g.data();
                let da = needs[0].then(|| {
                    let d = (0..n).flat_map(|i| gd[i * (p + q)..i * (p + q) + p].iter().copied());
                    Tensor::new(&[n, p], d.collect())
                });
                let db = needs[1].then(|| {
                    let d = (0..n).flat_map(|i| gd[i * (p + q) + p..(i + 1) * (p + q)].iter().copied());
                    Tensor::new(&[n, q], d.collect())
                });
                vec![da, db]
            })
    }

    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().op(Tensor::scalar(x.sum()), &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums every dimension after the first `keep`.
    pub fn sum_trailing(self, keep: usize) -> Var<'t, T> {
        self.reduce_trailing(keep, false)
    }

    /// Averages every dimension after the first `keep`.
    pub fn mean_trailing(self, keep: usize) -> Var<'t, T> {
        self.reduce_trailing(keep, true)
    }

    fn reduce_trailing(self, keep: usize, average: bool) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let outer: usize = shape[..keep].iter().product();
        let inner: usize = shape[keep..].iter().product();
        let scale = if average { 1.0 / inner as f64 } else { 1.0 };
        let s = T::from_f64(scale);
        let data: Vec<T> = (0..outer)
            .map(|o| x.data()[o * inner..(o + 1) * inner].iter().copied().sum::<T>() * s)
            .collect();
        self.tape()
            .op(Tensor::new(&shape[..keep], data), &[self], move |g, _| {
                let gd = g.data();
                let d: Vec<T> = (0..outer)
                    .flat_map(|o| std::iter::repeat_n(gd[o] * s, inner))
                    .collect();
                vec![Some(Tensor::new(&shape, d))]
            })
    }

    /// Row-wise inner product of two `[N, D]` matrices, giving `[N]`.
    pub fn rowdot(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert!(a.ndim() == 2 && a.shape() == b.shape(), "rowdot shapes");
        let (n, d) = (a.dim(0), a.dim(1));
        let data: Vec<T> = (0..n)
            .map(|i| {
                let (ra, rb) = (&a.data()[i * d..(i + 1) * d], &b.data()[i * d..(i + 1) * d]);
                ra.iter().zip(rb).map(|(&x, &y)| x * y).sum()
            })
            .collect();
        self.tape().op(Tensor::new(&[n], data), &[self, other], move |g, needs| {
            let gd = g.data();
            let scaled = |m: &Tensor<T>| {
                let out: Vec<T> = (0..n)
                    .flat_map(|i| m.data()[i * d..(i + 1) * d].iter().map(move |&v| v * gd[i]))
                    .collect();
                Tensor::new(&[n, d], out)
            };
            vec![needs[0].then(|| scaled(&b)), needs[1].then(|| scaled(&a))]
        })
    }

    /// `x[n, c, ...] * s[n, c]`.
    pub fn mul_nc(self, s: Var<'t, T>) -> Var<'t, T> {
        let (x, sv) = (self.value(), s.value());
        let shape = x.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        assert_eq!(sv.shape(), &[n, c], "mul_nc scale shape");
        let inner: usize = shape[2..].iter().product();
        let mut y = (*x).clone();
        for (k, chunk) in y.data_mut().chunks_mut(inner).enumerate() {
            let f = sv.data()[k];
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        self.tape().op(y, &[self, s], move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = g.clone();
                for (k, chunk) in dx.data_mut().chunks_mut(inner).enumerate() {
                    let f = sv.data()[k];
                    chunk.iter_mut().for_each(|v| *v *= f);
                }
                dx
            });
            let ds = needs[1].then(|| {
                let d: Vec<T> = g
                    .data()
                    .chunks(inner)
                    .zip(x.data().chunks(inner))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                    .collect();
                Tensor::new(&[n, c], d)
            });
            vec![dx, ds]
        })
    }

    /// `x[n, c, ...] + b[n, c]`.
    pub fn add_nc(self, b: Var<'t, T>) -> Var<'t, T> {
        let (x, bv) = (self.value(), b.value());
        let shape = x.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        assert_eq!(bv.shape(), &[n, c], "add_nc bias shape");
        let inner: usize = shape[2..].iter().product();
        let mut y = (*x).clone();
        for (k, chunk) in y.data_mut().chunks_mut(inner).enumerate() {
            let f = bv.data()[k];
            chunk.iter_mut().for_each(|v| *v += f);
        }
        self.tape().op(y, &[self, b], move |g, needs| {
            let db = needs[1].then(|| {
                let d: Vec<T> = g.data().chunks(inner).map(|gc| gc.iter().copied().sum()).collect();
                Tensor::new(&[n, c], d)
            });
            vec![needs[0].then(|| g.clone()), db]
        })
    }
}
