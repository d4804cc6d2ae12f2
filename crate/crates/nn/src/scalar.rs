//! Numeric element types the engine is generic over.
//!
//! Besides `f32`/`f64`, [`Dual`] carries a first-order tangent alongside the
//! primal value. Running a reverse-mode pass on duals yields exact
//! Hessian-vector products (forward-over-reverse), which is how gradient
//! penalties are differentiated with respect to parameters.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Default
    + Debug
    + Send
    + Sync
    + PartialEq
    + PartialOrd
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    /// Storage tag used by checkpoints.
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;
    /// Primal value as `f64` (the real part for duals).
    fn re(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn max_re(self, other: Self) -> Self {
        if self.re() >= other.re() {
            self
        } else {
            other
        }
    }

    fn min_re(self, other: Self) -> Self {
        if self.re() <= other.re() {
            self
        } else {
            other
        }
    }

    /// `C (+)= A·B` for an `m×k` matrix `A` and `k×n` matrix `B`, addressed
    /// through row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
        accumulate: bool,
    ) {
        naive_gemm(m, k, n, a, rsa, csa, b, rsb, csb, c, rsc, csc, accumulate)
    }
}

#[inline]
fn at(i: usize, j: usize, rs: isize, cs: isize) -> usize {
    (i as isize * rs + j as isize * cs) as usize
}

fn max_offset(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    at(rows - 1, cols - 1, rs, cs)
}

#[allow(clippy::too_many_arguments)]
fn check_bounds<T>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    rsa: isize,
    csa: isize,
    b: &[T],
    rsb: isize,
    csb: isize,
    c: &[T],
    rsc: isize,
    csc: isize,
) {
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
    if m > 0 && k > 0 {
        assert!(max_offset(m, k, rsa, csa) < a.len(), "gemm: A out of bounds");
    }
    if k > 0 && n > 0 {
        assert!(max_offset(k, n, rsb, csb) < b.len(), "gemm: B out of bounds");
    }
    if m > 0 && n > 0 {
        assert!(max_offset(m, n, rsc, csc) < c.len(), "gemm: C out of bounds");
    }
}

#[allow(clippy::too_many_arguments)]
fn naive_gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    rsa: isize,
    csa: isize,
    b: &[T],
    rsb: isize,
    csb: isize,
    c: &mut [T],
    rsc: isize,
    csc: isize,
    accumulate: bool,
) {
    check_bounds(m, k, n, a, rsa, csa, b, rsb, csb, c, rsc, csc);
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[at(i, p, rsa, csa)] * b[at(p, j, rsb, csb)];
            }
            let dst = &mut c[at(i, j, rsc, csc)];
            if accumulate {
                *dst += acc;
            } else {
                *dst = acc;
            }
        }
    }
}

macro_rules! impl_float {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn re(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
                accumulate: bool,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        for i in 0..m {
                            for j in 0..n {
                                c[at(i, j, rsc, csc)] = 0.0;
                            }
                        }
                    }
                    return;
                }
                check_bounds(m, k, n, a, rsa, csa, b, rsb, csb, c, rsc, csc);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: every addressed element was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_float!(f32, "f32", matrixmultiply::sgemm);
impl_float!(f64, "f64", matrixmultiply::dgemm);

/// Dual number `re + ε·du` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual<F> {
    pub re: F,
    pub du: F,
}

impl<F: Scalar> Dual<F> {
    pub fn new(re: F, du: F) -> Self {
        Self { re, du }
    }

    pub fn constant(re: F) -> Self {
        Self { re, du: F::zero() }
    }
}

impl<F: Scalar> PartialOrd for Dual<F> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<F: Scalar> Add for Dual<F> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.du + o.du)
    }
}

impl<F: Scalar> Sub for Dual<F> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.du - o.du)
    }
}

impl<F: Scalar> Mul for Dual<F> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.du + self.du * o.re)
    }
}

impl<F: Scalar> Div for Dual<F> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self::new(q, (self.du - q * o.du) / o.re)
    }
}

impl<F: Scalar> Neg for Dual<F> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.du)
    }
}

impl<F: Scalar> AddAssign for Dual<F> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<F: Scalar> SubAssign for Dual<F> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<F: Scalar> MulAssign for Dual<F> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<F: Scalar> DivAssign for Dual<F> {
    #[inline]
    fn div_assign(&mut self, o: Self) {
        *self = *self / o;
    }
}

impl<F: Scalar> Sum for Dual<F> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

impl<F: Scalar> Scalar for Dual<F> {
    const DTYPE: &'static str = "dual";

    fn from_f64(v: f64) -> Self {
        Self::constant(F::from_f64(v))
    }
    fn re(self) -> f64 {
        self.re.re()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, e * self.du)
    }
    fn ln(self) -> Self {
        Self::new(self.re.ln(), self.du / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self::new(s, self.du / (F::from_f64(2.0) * s))
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self::new(t, (F::one() - t * t) * self.du)
    }
    fn sin(self) -> Self {
        Self::new(self.re.sin(), self.re.cos() * self.du)
    }
    fn cos(self) -> Self {
        Self::new(self.re.cos(), -self.re.sin() * self.du)
    }
    fn abs(self) -> Self {
        if self.re.re() < 0.0 {
            -self
        } else {
            self
        }
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
        accumulate: bool,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        check_bounds(m, k, n, a, rsa, csa, b, rsb, csb, c, rsc, csc);
        // (A + εA')(B + εB') = AB + ε(AB' + A'B): three real products.
        let split = |src: &[Self], rows: usize, cols: usize, rs: isize, cs: isize| {
            let mut re = Vec::with_capacity(rows * cols);
            let mut du = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    let v = src[at(i, j, rs, cs)];
                    re.push(v.re);
                    du.push(v.du);
                }
            }
            (re, du)
        };
        let (a_re, a_du) = split(a, m, k, rsa, csa);
        let (b_re, b_du) = split(b, k, n, rsb, csb);
        let mut c_re = vec![F::zero(); m * n];
        let mut c_du = vec![F::zero(); m * n];
        let (k_s, n_s) = (k as isize, n as isize);
        F::gemm(m, k, n, &a_re, k_s, 1, &b_re, n_s, 1, &mut c_re, n_s, 1, false);
        F::gemm(m, k, n, &a_re, k_s, 1, &b_du, n_s, 1, &mut c_du, n_s, 1, false);
        F::gemm(m, k, n, &a_du, k_s, 1, &b_re, n_s, 1, &mut c_du, n_s, 1, true);
        for i in 0..m {
            for j in 0..n {
                let v = Self::new(c_re[i * n + j], c_du[i * n + j]);
                let dst = &mut c[at(i, j, rsc, csc)];
                if accumulate {
                    *dst += v;
                } else {
                    *dst = v;
                }
            }
        }
    }
}
