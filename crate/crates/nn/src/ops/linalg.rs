use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Scalar> Var<'t, T> {
    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert!(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul shapes");
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        let mut y = Tensor::zeros(&[m, n]);
        T::gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, y.data_mut(), n as isize, 1, false);
        self.tape().op(y, &[self, other], move |g, needs| {
            let da = needs[0].then(|| {
                // G · Bᵀ
                let mut d = Tensor::zeros(&[m, k]);
                T::gemm(m, n, k, g.data(), n as isize, 1, b.data(), 1, n as isize, d.data_mut(), k as isize, 1, false);
                d
            });
            let db = needs[1].then(|| {
                // Aᵀ · G
                let mut d = Tensor::zeros(&[k, n]);
                T::gemm(k, m, n, a.data(), 1, k as isize, g.data(), n as isize, 1, d.data_mut(), n as isize, 1, false);
                d
            });
            vec![da, db]
        })
    }

    /// Affine map `x Wᵀ + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Var<'t, T> {
        let (x, w) = (self.value(), weight.value());
        assert!(x.ndim() == 2 && w.ndim() == 2 && x.dim(1) == w.dim(1), "linear shapes {:?} {:?}", x.shape(), w.shape());
        let (n, fin, fout) = (x.dim(0), x.dim(1), w.dim(0));
        let mut y = Tensor::zeros(&[n, fout]);
        T::gemm(n, fin, fout, x.data(), fin as isize, 1, w.data(), 1, fin as isize, y.data_mut(), fout as isize, 1, false);
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            let bv = b.value();
            assert_eq!(bv.shape(), &[fout], "linear bias shape");
            for row in y.data_mut().chunks_mut(fout) {
                row.iter_mut().zip(bv.data()).for_each(|(v, &b)| *v += b);
            }
            parents.push(b);
        }
        self.tape().op(y, &parents, move |g, needs| {
            let dx = needs[0].then(|| {
                let mut d = Tensor::zeros(&[n, fin]);
                T::gemm(n, fout, fin, g.data(), fout as isize, 1, w.data(), fin as isize, 1, d.data_mut(), fin as isize, 1, false);
                d
            });
            let dw = needs[1].then(|| {
                let mut d = Tensor::zeros(&[fout, fin]);
                T::gemm(fout, n, fin, g.data(), 1, fout as isize, x.data(), fin as isize, 1, d.data_mut(), fin as isize, 1, false);
                d
            });
            let mut out = vec![dx, dw];
            if needs.len() == 3 {
                out.push(needs[2].then(|| {
                    let mut d = Tensor::zeros(&[fout]);
                    for row in g.data().chunks(fout) {
                        d.data_mut().iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    d
                }));
            }
            out
        })
    }
}
