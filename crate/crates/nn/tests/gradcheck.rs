//! Central finite-difference checks of every differentiable op in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxface_nn::{Dual, Tape, Tensor, Var};

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Reduces any output to a scalar with fixed random weights so every output
/// element contributes a distinct coefficient.
fn project<'t>(y: Var<'t, f64>, seed: u64) -> Var<'t, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&y.shape(), &mut rng);
    y.mul(y.tape().constant(w)).sum()
}

fn check<F>(inputs: &[Tensor<f64>], f: F)
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>,
{
    let eval = |xs: &[Tensor<f64>]| {
        let tape = Tape::<f64>::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.var(x.clone())).collect();
        project(f(&vars), 99).item()
    };
    let tape = Tape::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let out = project(f(&vars), 99);
    let grads = tape.backward(out);
    let h = 1e-6;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let tol = 1e-6 * (1.0 + numeric.abs());
            assert!(
                (a - numeric).abs() < tol,
                "input {k} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn elementwise_ops() {
    let mut r = rng(1);
    let a = rand_tensor(&[3, 4], &mut r);
    let b = rand_tensor(&[3, 4], &mut r);
    check(&[a.clone(), b.clone()], |v| v[0].add(v[1]).mul(v[1]).sub(v[0].square()));
    check(std::slice::from_ref(&a), |v| v[0].scale(-1.7).add_scalar(0.3).neg());
    check(std::slice::from_ref(&a), |v| v[0].relu().add(v[0].leaky_relu(0.2)));
    check(&[a.scale(4.0)], |v| v[0].tanh().add(v[0].sigmoid()).add(v[0].log_sigmoid()));
}

#[test]
fn log_sigmoid_is_stable_at_extremes() {
    let tape = Tape::<f64>::new();
    let x = tape.var(Tensor::new(&[2], vec![-800.0, 800.0]));
    let y = x.log_sigmoid();
    let v = y.value();
    assert!((v.data()[0] + 800.0).abs() < 1e-9 && v.data()[1].abs() < 1e-12);
    let g = tape.backward(y.sum());
    let gx = g.get(x).unwrap();
    assert!((gx.data()[0] - 1.0).abs() < 1e-12 && gx.data()[1].abs() < 1e-12);
}

#[test]
fn prelu_per_channel() {
    let mut r = rng(2);
    let x = rand_tensor(&[2, 3, 5], &mut r);
    let alpha = Tensor::new(&[3], vec![0.1, 0.25, -0.3]);
    check(&[x, alpha], |v| v[0].prelu(v[1]));
}

#[test]
fn shape_ops() {
    let mut r = rng(3);
    let a = rand_tensor(&[4, 3], &mut r);
    let b = rand_tensor(&[2, 3], &mut r);
    let c = rand_tensor(&[4, 2], &mut r);
    check(&[a.clone(), b.clone()], |v| Var::cat_rows(&[v[0], v[1], v[0]]).slice_rows(1, 5));
    check(std::slice::from_ref(&a), |v| v[0].gather_rows(&[3, 0, 3, 1]).reshape(&[2, 6]));
    check(&[a.clone(), c.clone()], |v| v[0].concat_cols(v[1]));
    check(std::slice::from_ref(&a), |v| v[0].sum().add(v[0].mean()));
    let x = rand_tensor(&[2, 3, 2, 2], &mut r);
    check(std::slice::from_ref(&x), |v| v[0].sum_trailing(2).add(v[0].mean_trailing(2)));
    check(&[a.clone(), a.scale(0.5).map(|v| v + 0.1)], |v| v[0].rowdot(v[1]));
    let s = rand_tensor(&[2, 3], &mut r);
    check(&[x.clone(), s.clone()], |v| v[0].mul_nc(v[1]).add_nc(v[1]));
}

#[test]
fn matmul_and_linear() {
    let mut r = rng(4);
    let a = rand_tensor(&[3, 5], &mut r);
    let b = rand_tensor(&[5, 2], &mut r);
    check(&[a.clone(), b], |v| v[0].matmul(v[1]));
    let w = rand_tensor(&[4, 5], &mut r);
    let bias = rand_tensor(&[4], &mut r);
    check(&[a.clone(), w.clone(), bias], |v| v[0].linear(v[1], Some(v[2])));
    check(&[a, w], |v| v[0].linear(v[1], None));
}

#[test]
fn conv1d_with_stride_and_padding() {
    let mut r = rng(5);
    let x = rand_tensor(&[2, 3, 11], &mut r);
    let w = rand_tensor(&[4, 3, 3], &mut r);
    let b = rand_tensor(&[4], &mut r);
    for (stride, pad) in [(1, 0), (2, 1), (3, 2)] {
        check(&[x.clone(), w.clone(), b.clone()], |v| v[0].conv1d(v[1], Some(v[2]), stride, pad));
    }
}

#[test]
fn conv2d_pool_upsample() {
    let mut r = rng(6);
    let x = rand_tensor(&[2, 2, 4, 4], &mut r);
    let w = rand_tensor(&[3, 2, 3, 3], &mut r);
    let b = rand_tensor(&[3], &mut r);
    check(&[x.clone(), w.clone(), b.clone()], |v| v[0].conv2d(v[1], Some(v[2]), 1));
    let w1 = rand_tensor(&[3, 2, 1, 1], &mut r);
    check(&[x.clone(), w1], |v| v[0].conv2d(v[1], None, 0));
    check(std::slice::from_ref(&x), |v| v[0].avg_pool2());
    check(&[x], |v| v[0].upsample2());
}

#[test]
fn normalization() {
    let mut r = rng(7);
    let x = rand_tensor(&[4, 3, 5], &mut r);
    let g = rand_tensor(&[3], &mut r);
    let b = rand_tensor(&[3], &mut r);
    check(&[x.clone(), g.clone(), b.clone()], |v| v[0].batch_norm_train(v[1], v[2], 1e-5).0);
    let rm = rand_tensor(&[3], &mut r);
    let rv = rand_tensor(&[3], &mut r).map(|v| v.abs() + 0.5);
    check(&[x.clone(), g, b], |v| v[0].batch_norm_eval(v[1], v[2], &rm, &rv, 1e-5));
    check(&[x], |v| v[0].instance_norm(1e-5));
}

#[test]
fn batch_norm_statistics() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[2, 1, 2], vec![1.0, 3.0, 5.0, 7.0]));
    let g = tape.constant(Tensor::new(&[1], vec![1.0]));
    let b = tape.constant(Tensor::new(&[1], vec![0.0]));
    let (y, stats) = x.batch_norm_train(g, b, 0.0);
    assert!((stats.mean[0] - 4.0).abs() < 1e-12);
    // Unbiased: sum of squares 20 over 3.
    assert!((stats.var[0] - 20.0 / 3.0).abs() < 1e-12);
    assert!(y.value().data().iter().sum::<f64>().abs() < 1e-12);
}

#[test]
fn cross_entropy_loss() {
    let mut r = rng(8);
    let logits = rand_tensor(&[4, 5], &mut r).scale(3.0);
    check(std::slice::from_ref(&logits), |v| v[0].cross_entropy(&[0, 4, 2, 2]).reshape(&[1]));
    // Uniform logits give ln(K).
    let tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::zeros(&[3, 5])).cross_entropy(&[0, 1, 2]);
    assert!((l.item() - 5f64.ln()).abs() < 1e-12);
}

/// Forward-over-reverse: the tangent of the gradient equals the Hessian
/// applied to the seeded direction, checked against differences of
/// reverse-mode gradients.
#[test]
fn dual_gradient_tangent_is_hessian_vector_product() {
    let mut r = rng(9);
    let x0 = rand_tensor(&[2, 3, 6], &mut r);
    let w0 = rand_tensor(&[2, 3, 3], &mut r);
    let dir = rand_tensor(&[2, 3, 3], &mut r);

    fn loss<'t, T: voxface_nn::Scalar>(x: Var<'t, T>, w: Var<'t, T>) -> Var<'t, T> {
        x.conv1d(w, None, 1, 1).tanh().square().sum()
    }
    let grad_at = |w: &Tensor<f64>| {
        let tape = Tape::<f64>::new();
        let x = tape.constant(x0.clone());
        let wv = tape.var(w.clone());
        let g = tape.backward(loss(x, wv));
        g.get(wv).unwrap().clone()
    };

    let tape = Tape::<Dual<f64>>::new();
    let x = tape.constant(x0.cast());
    let wd: Vec<Dual<f64>> = w0
        .data()
        .iter()
        .zip(dir.data())
        .map(|(&re, &du)| Dual { re, du })
        .collect();
    let wv = tape.var(Tensor::new(w0.shape(), wd));
    let g = tape.backward(loss(x, wv));
    let hv: Vec<f64> = g.get(wv).unwrap().data().iter().map(|d| d.du).collect();

    let h = 1e-6;
    let gp = grad_at(&w0.zip_map(&dir, |w, d| w + h * d));
    let gm = grad_at(&w0.zip_map(&dir, |w, d| w - h * d));
    for i in 0..hv.len() {
        let fd = (gp.data()[i] - gm.data()[i]) / (2.0 * h);
        assert!((hv[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {} vs {fd}", hv[i]);
    }
}
