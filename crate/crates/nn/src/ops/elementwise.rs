use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "add");
        let y = a.zip_map(&b, |x, y| x + y);
        self.tape()
            .op(y, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "sub");
        let y = a.zip_map(&b, |x, y| x - y);
        self.tape()
            .op(y, &[self, other], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))])
    }

    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "mul");
        let y = a.zip_map(&b, |x, y| x * y);
        self.tape().op(y, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |g, b| g * b)),
                needs[1].then(|| g.zip_map(&a, |g, a| g * a)),
            ]
        })
    }

    pub fn scale(self, s: f64) -> Var<'t, T> {
        let y = self.value().scale(s);
        self.tape().op(y, &[self], move |g, _| vec![Some(g.scale(s))])
    }

    pub fn add_scalar(self, s: f64) -> Var<'t, T> {
        let s_t = T::from_f64(s);
        let y = self.value().map(|v| v + s_t);
        self.tape().op(y, &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-1.0)
    }

    pub fn square(self) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(|v| v * v);
        self.tape().op(y, &[self], move |g, _| {
            let two = T::from_f64(2.0);
            vec![Some(g.zip_map(&x, |g, x| two * g * x))]
        })
    }

    pub fn relu(self) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(|v| if v.re() > 0.0 { v } else { T::zero() });
        self.tape().op(y, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |g, x| if x.re() > 0.0 { g } else { T::zero() }))]
        })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t, T> {
        let x = self.value();
        let s = T::from_f64(slope);
        let y = x.map(|v| if v.re() > 0.0 { v } else { s * v });
        self.tape().op(y, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |g, x| if x.re() > 0.0 { g } else { s * g }))]
        })
    }

    pub fn tanh(self) -> Var<'t, T> {
        let y = self.value().map(|v| v.tanh());
        let out = y.clone();
        self.tape().op(y, &[self], move |g, _| {
            vec![Some(g.zip_map(&out, |g, y| g * (T::one() - y * y)))]
        })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let y = self.value().map(sigmoid);
        let out = y.clone();
        self.tape().op(y, &[self], move |g, _| {
            vec![Some(g.zip_map(&out, |g, y| g * y * (T::one() - y)))]
        })
    }

    /// `log σ(x)` evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(self) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(log_sigmoid);
        self.tape().op(y, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |g, x| g * sigmoid(-x)))]
        })
    }

    /// Parametric ReLU with one learned slope per channel; `self` is
    /// `[N, C, ...]` and `alpha` is `[C]`.
    pub fn prelu(self, alpha: Var<'t, T>) -> Var<'t, T> {
        let x = self.value();
        let a = alpha.value();
        let shape = x.shape().to_vec();
        assert!(shape.len() >= 2, "prelu expects [N, C, ...]");
        let (n, c) = (shape[0], shape[1]);
        assert_eq!(a.shape(), &[c], "prelu alpha shape");
        let inner: usize = shape[2..].iter().product();
        let mut y = Tensor::zeros(&shape);
        {
            let (xd, ad, yd) = (x.data(), a.data(), y.data_mut());
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * inner;
                    for i in base..base + inner {
                        let v = xd[i];
                        yd[i] = if v.re() > 0.0 { v } else { ad[ci] * v };
                    }
                }
            }
        }
        self.tape().op(y, &[self, alpha], move |g, needs| {
            let (xd, ad, gd) = (x.data(), a.data(), g.data());
            let mut dx = needs[0].then(|| Tensor::zeros(x.shape()));
            let mut da = needs[1].then(|| Tensor::zeros(a.shape()));
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * inner;
                    let mut acc = T::zero();
                    for i in base..base + inner {
                        let pos = xd[i].re() > 0.0;
                        if let Some(dx) = dx.as_mut() {
                            dx.data_mut()[i] = if pos { gd[i] } else { ad[ci] * gd[i] };
                        }
                        if !pos {
                            acc += gd[i] * xd[i];
                        }
                    }
                    if let Some(da) = da.as_mut() {
                        da.data_mut()[ci] += acc;
                    }
                }
            }
            vec![dx, da]
        })
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x.re() >= 0.0 {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sigmoid<T: Scalar>(x: T) -> T {
    // log σ(x) = min(x, 0) − log(1 + e^{−|x|})
    let m = x.min_re(T::zero());
    m - (T::one() + (-x.abs()).exp()).ln()
}
