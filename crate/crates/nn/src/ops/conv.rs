use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Geometry of a 1-d convolution over `[C, L]` inputs.
#[derive(Clone, Copy, Debug)]
struct Geom1d {
    c: usize,
    l: usize,
    k: usize,
    stride: usize,
    pad: usize,
    lout: usize,
}

impl Geom1d {
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let Geom1d { c, l, k, stride, pad, lout } = *self;
        for ci in 0..c {
            let xr = &x[ci * l..(ci + 1) * l];
            for ki in 0..k {
                let row = &mut cols[(ci * k + ki) * lout..(ci * k + ki + 1) * lout];
                for (t, dst) in row.iter_mut().enumerate() {
                    let pos = (t * stride + ki) as isize - pad as isize;
                    *dst = if pos >= 0 && (pos as usize) < l { xr[pos as usize] } else { T::zero() };
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let Geom1d { c, l, k, stride, pad, lout } = *self;
        for ci in 0..c {
            for ki in 0..k {
                let row = &cols[(ci * k + ki) * lout..(ci * k + ki + 1) * lout];
                for (t, &v) in row.iter().enumerate() {
                    let pos = (t * stride + ki) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < l {
                        dx[ci * l + pos as usize] += v;
                    }
                }
            }
        }
    }
}

/// Geometry of a stride-1 2-d convolution over `[C, H, W]` inputs.
#[derive(Clone, Copy, Debug)]
struct Geom2d {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom2d {
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let Geom2d { c, h, w, kh, kw, pad, ho, wo } = *self;
        let plane = ho * wo;
        for ci in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let row = &mut cols[((ci * kh + i) * kw + j) * plane..((ci * kh + i) * kw + j + 1) * plane];
                    for y in 0..ho {
                        let sy = (y + i) as isize - pad as isize;
                        let dst = &mut row[y * wo..(y + 1) * wo];
                        if sy < 0 || sy as usize >= h {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &x[(ci * h + sy as usize) * w..(ci * h + sy as usize + 1) * w];
                        for (xo, d) in dst.iter_mut().enumerate() {
                            let sx = (xo + j) as isize - pad as isize;
                            *d = if sx >= 0 && (sx as usize) < w { src[sx as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let Geom2d { c, h, w, kh, kw, pad, ho, wo } = *self;
        let plane = ho * wo;
        for ci in 0..c {
            for i in 0..kh {
                for j in 0..kw {
                    let row = &cols[((ci * kh + i) * kw + j) * plane..((ci * kh + i) * kw + j + 1) * plane];
                    for y in 0..ho {
                        let sy = (y + i) as isize - pad as isize;
                        if sy < 0 || sy as usize >= h {
                            continue;
                        }
                        let dst = &mut dx[(ci * h + sy as usize) * w..(ci * h + sy as usize + 1) * w];
                        for xo in 0..wo {
                            let sx = (xo + j) as isize - pad as isize;
                            if sx >= 0 && (sx as usize) < w {
                                dst[sx as usize] += row[y * wo + xo];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Shared im2col/GEMM driver: `patch` is the unrolled patch length
/// (`C·K` or `C·kh·kw`), `out_len` the number of output positions.
#[allow(clippy::too_many_arguments)]
fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    n: usize,
    in_len: usize,
    patch: usize,
    out_len: usize,
    out_shape: &[usize],
    im2col: impl Fn(&[T], &mut [T]),
) -> Tensor<T> {
    let o = w.dim(0);
    let mut y = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); patch * out_len];
    for ni in 0..n {
        im2col(&x.data()[ni * in_len..(ni + 1) * in_len], &mut cols);
        let yn = &mut y.data_mut()[ni * o * out_len..(ni + 1) * o * out_len];
        T::gemm(o, patch, out_len, w.data(), patch as isize, 1, &cols, out_len as isize, 1, yn, out_len as isize, 1, false);
        if let Some(b) = b {
            for (oi, row) in yn.chunks_mut(out_len).enumerate() {
                let bv = b.data()[oi];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    needs: &[bool],
    n: usize,
    in_len: usize,
    patch: usize,
    out_len: usize,
    im2col: impl Fn(&[T], &mut [T]),
    col2im: impl Fn(&[T], &mut [T]),
) -> Vec<Option<Tensor<T>>> {
    let o = w.dim(0);
    let mut dx = needs[0].then(|| Tensor::zeros(x.shape()));
    let mut dw = needs[1].then(|| Tensor::zeros(w.shape()));
    let mut cols = vec![T::zero(); patch * out_len];
    for ni in 0..n {
        let gn = &g.data()[ni * o * out_len..(ni + 1) * o * out_len];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[ni * in_len..(ni + 1) * in_len], &mut cols);
            // dW += G_n · colsᵀ
            T::gemm(o, out_len, patch, gn, out_len as isize, 1, &cols, 1, out_len as isize, dw.data_mut(), patch as isize, 1, true);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · G_n
            T::gemm(patch, o, out_len, w.data(), 1, patch as isize, gn, out_len as isize, 1, &mut cols, out_len as isize, 1, false);
            col2im(&cols, &mut dx.data_mut()[ni * in_len..(ni + 1) * in_len]);
        }
    }
    let mut out = vec![dx, dw];
    if needs.len() == 3 {
        out.push(needs[2].then(|| {
            let mut db = Tensor::zeros(&[o]);
            for ni in 0..n {
                for oi in 0..o {
                    let start = (ni * o + oi) * out_len;
                    db.data_mut()[oi] += g.data()[start..start + out_len].iter().copied().sum::<T>();
                }
            }
            db
        }));
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    /// 1-d convolution: `x: [N, C, L]`, `w: [O, C, K]`, `b: [O]`.
    pub fn conv1d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, stride: usize, pad: usize) -> Var<'t, T> {
        let (x, w) = (self.value(), weight.value());
        assert!(x.ndim() == 3 && w.ndim() == 3 && x.dim(1) == w.dim(1), "conv1d shapes {:?} {:?}", x.shape(), w.shape());
        let (n, c, l) = (x.dim(0), x.dim(1), x.dim(2));
        let (o, k) = (w.dim(0), w.dim(2));
        assert!(stride >= 1 && l + 2 * pad >= k, "conv1d: input length {l} shorter than kernel {k}");
        let lout = (l + 2 * pad - k) / stride + 1;
        let geom = Geom1d { c, l, k, stride, pad, lout };
        let bv = bias.map(|b| b.value());
        let y = conv_forward(&x, &w, bv.as_deref(), n, c * l, c * k, lout, &[n, o, lout], |s, d| geom.im2col(s, d));
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().op(y, &parents, move |g, needs| {
            conv_backward(g, &x, &w, needs, n, c * l, c * k, lout, |s, d| geom.im2col(s, d), |s, d| geom.col2im(s, d))
        })
    }

    /// Stride-1 2-d convolution: `x: [N, C, H, W]`, `w: [O, C, kh, kw]`.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, pad: usize) -> Var<'t, T> {
        let (x, w) = (self.value(), weight.value());
        assert!(x.ndim() == 4 && w.ndim() == 4 && x.dim(1) == w.dim(1), "conv2d shapes {:?} {:?}", x.shape(), w.shape());
        let (n, c, h, wd) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (o, kh, kw) = (w.dim(0), w.dim(2), w.dim(3));
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d: input smaller than kernel");
        let (ho, wo) = (h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1);
        let geom = Geom2d { c, h, w: wd, kh, kw, pad, ho, wo };
        let bv = bias.map(|b| b.value());
        let patch = c * kh * kw;
        let y = conv_forward(&x, &w, bv.as_deref(), n, c * h * wd, patch, ho * wo, &[n, o, ho, wo], |s, d| geom.im2col(s, d));
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().op(y, &parents, move |g, needs| {
            conv_backward(g, &x, &w, needs, n, c * h * wd, patch, ho * wo, |s, d| geom.im2col(s, d), |s, d| geom.col2im(s, d))
        })
    }

    /// 2×2 average pooling over `[N, C, H, W]` with even `H`, `W`.
    pub fn avg_pool2(self) -> Var<'t, T> {
        let x = self.value();
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial size");
        let (ho, wo) = (h / 2, w / 2);
        let q = T::from_f64(0.25);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        for p in 0..n * c {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut y.data_mut()[p * ho * wo..(p + 1) * ho * wo];
            for i in 0..ho {
                for j in 0..wo {
                    let s = src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] + src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1];
                    dst[i * wo + j] = s * q;
                }
            }
        }
        self.tape().op(y, &[self], move |g, _| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for p in 0..n * c {
                let gs = &g.data()[p * ho * wo..(p + 1) * ho * wo];
                let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = gs[(i / 2) * wo + j / 2] * q;
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    /// Nearest-neighbour 2× upsampling over `[N, C, H, W]`.
    pub fn upsample2(self) -> Var<'t, T> {
        let x = self.value();
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (ho, wo) = (2 * h, 2 * w);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        for p in 0..n * c {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut y.data_mut()[p * ho * wo..(p + 1) * ho * wo];
            for i in 0..ho {
                for j in 0..wo {
                    dst[i * wo + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        self.tape().op(y, &[self], move |g, _| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            for p in 0..n * c {
                let gs = &g.data()[p * ho * wo..(p + 1) * ho * wo];
                let dst = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
                for i in 0..ho {
                    for j in 0..wo {
                        dst[(i / 2) * w + j / 2] += gs[i * wo + j];
                    }
                }
            }
            vec![Some(dx)]
        })
    }
}
