use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Row-wise softmax of `[B, K]` logits, stabilised by max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.dim(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(row[0], |a, b| a.max_re(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Mean cross-entropy of `[B, K]` logits against class indices.
    pub fn cross_entropy(self, targets: &[usize]) -> Var<'t, T> {
        let logits = self.value();
        assert_eq!(logits.ndim(), 2, "cross_entropy expects [B, K]");
        let (b, k) = (logits.dim(0), logits.dim(1));
        assert_eq!(targets.len(), b, "one target per row");
        let probs = softmax_rows(&logits);
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < k, "target {t} out of range for {k} classes");
            let row = &logits.data()[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(row[0], |a, b| a.max_re(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total += lse - row[t];
        }
        let inv_b = T::from_f64(1.0 / b as f64);
        let targets = targets.to_vec();
        self.tape().op(Tensor::scalar(total * inv_b), &[self], move |g, _| {
            let scale = g.item() * inv_b;
            let mut d = probs.clone();
            for (i, &t) in targets.iter().enumerate() {
                d.data_mut()[i * k + t] -= T::one();
            }
            d.data_mut().iter_mut().for_each(|v| *v *= scale);
            vec![Some(d)]
        })
    }
}
