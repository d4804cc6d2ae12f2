//! Learnable band-pass front end: each filter is a Hamming-windowed
//! difference of two ideal low-pass sinc kernels.

use std::f64::consts::PI;

use voxface_nn::{Binder, ParamId, ParamStore, Scalar, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SincConv {
    pub low: ParamId,
    pub band: ParamId,
    pub n_filters: usize,
    pub kernel_size: usize,
    pub sample_rate: f64,
    pub min_band_hz: f64,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Realized cutoffs and the derivative flags of the clamps.
struct Cutoffs<T> {
    low: T,
    high: T,
    dlow_da: T,
    dhigh_dlow: T,
    dhigh_db: T,
}

impl SincConv {
    /// Cutoffs start mel-spaced over `[30 Hz, Nyquist]`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        n_filters: usize,
        kernel_size: usize,
        sample_rate: f64,
        min_band_hz: f64,
    ) -> Result<Self> {
        if kernel_size.is_multiple_of(2) || kernel_size < 3 {
            return Err(Error::InvalidInput(format!("sinc kernel size must be odd and >= 3, got {kernel_size}")));
        }
        if n_filters == 0 {
            return Err(Error::InvalidInput("sinc filter bank needs at least one filter".into()));
        }
        let mut conv = Self {
            low: ParamId(usize::MAX),
            band: ParamId(usize::MAX),
            n_filters,
            kernel_size,
            sample_rate,
            min_band_hz,
        };
        let (edge, top) = (conv.edge_hz(), conv.nyquist() - conv.edge_hz());
        if top - min_band_hz <= edge {
            return Err(Error::InvalidInput(format!(
                "sinc kernel of {kernel_size} taps is too short for a {sample_rate} Hz band-pass bank"
            )));
        }
        let (m0, m1) = (hz_to_mel(30.0), hz_to_mel(conv.nyquist()));
        let hz: Vec<f64> = (0..=n_filters)
            .map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / n_filters as f64))
            .collect();
        let low: Vec<f64> = (0..n_filters).map(|i| (hz[i] - edge).max(1.0)).collect();
        let band: Vec<f64> = (0..n_filters)
            .map(|i| (hz[i + 1] - hz[i] - min_band_hz).max(1.0))
            .collect();
        conv.low = store.add_param(&format!("{name}.low_hz"), Tensor::from_f64(&[n_filters], &low).expect("shape"));
        conv.band = store.add_param(&format!("{name}.band_hz"), Tensor::from_f64(&[n_filters], &band).expect("shape"));
        Ok(conv)
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    /// Guard band kept clear at both ends of the spectrum so the windowed
    /// kernel's main lobe never reaches DC or Nyquist.
    pub fn edge_hz(&self) -> f64 {
        3.0 * self.sample_rate / self.kernel_size as f64
    }

    fn cutoffs<T: Scalar>(&self, a: T, b: T) -> Cutoffs<T> {
        let edge = self.edge_hz();
        let top = self.nyquist() - edge;
        let max_low = top - self.min_band_hz;
        let sign = |v: T| T::from_f64(if v.re() > 0.0 { 1.0 } else if v.re() < 0.0 { -1.0 } else { 0.0 });
        let mut low = T::from_f64(edge) + a.abs();
        let mut dlow_da = sign(a);
        if low.re() > max_low {
            low = T::from_f64(max_low);
            dlow_da = T::zero();
        }
        let mut high = low + T::from_f64(self.min_band_hz) + b.abs();
        let (mut dhigh_dlow, mut dhigh_db) = (T::one(), sign(b));
        if high.re() > top {
            high = T::from_f64(top);
            dhigh_dlow = T::zero();
            dhigh_db = T::zero();
        }
        Cutoffs {
            low,
            high,
            dlow_da,
            dhigh_dlow,
            dhigh_db,
        }
    }

    /// Realized `(low, high)` cutoffs in Hz.
    pub fn band_edges<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<(f64, f64)> {
        let (a, b) = (store.get(self.low), store.get(self.band));
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&a, &b)| {
                let c = self.cutoffs(a, b);
                (c.low.re(), c.high.re())
            })
            .collect()
    }

    fn window(&self) -> Vec<f64> {
        let k = self.kernel_size;
        (0..k)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (k - 1) as f64).cos())
            .collect()
    }

    /// Realized kernels as plain numbers, `[n_filters][kernel_size]`.
    pub fn kernels<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<Vec<f64>> {
        let w = self.window();
        let m = (self.kernel_size / 2) as isize;
        self.band_edges(store)
            .into_iter()
            .map(|(lo, hi)| {
                let (f1, f2) = (lo / self.sample_rate, hi / self.sample_rate);
                (0..self.kernel_size)
                    .map(|i| {
                        let n = (i as isize - m) as f64;
                        let bp = if n == 0.0 {
                            2.0 * (f2 - f1)
                        } else {
                            ((2.0 * PI * f2 * n).sin() - (2.0 * PI * f1 * n).sin()) / (PI * n)
                        };
                        w[i] * bp
                    })
                    .collect()
            })
            .collect()
    }

    /// Differentiable kernel tensor `[n_filters, 1, kernel_size]`.
    pub fn kernel_var<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>) -> Var<'t, T> {
        let (av, bv) = (b.param(self.low), b.param(self.band));
        let (a, bb) = (av.value(), bv.value());
        let (nf, k) = (self.n_filters, self.kernel_size);
        let m = (k / 2) as isize;
        let w = self.window();
        let sr = self.sample_rate;
        let cuts: Vec<Cutoffs<T>> = a.data().iter().zip(bb.data()).map(|(&a, &b)| self.cutoffs(a, b)).collect();
        let two_pi = T::from_f64(2.0 * PI);
        let pi = T::from_f64(PI);
        let mut out = Vec::with_capacity(nf * k);
        for c in &cuts {
            let (f1, f2) = (c.low / T::from_f64(sr), c.high / T::from_f64(sr));
            for (i, &wi) in w.iter().enumerate() {
                let n = (i as isize - m) as f64;
                let bp = if n == 0.0 {
                    T::from_f64(2.0) * (f2 - f1)
                } else {
                    let nt = T::from_f64(n);
                    ((two_pi * f2 * nt).sin() - (two_pi * f1 * nt).sin()) / (pi * nt)
                };
                out.push(T::from_f64(wi) * bp);
            }
        }
        let value = Tensor::new(&[nf, 1, k], out);
        b.tape().op(value, &[av, bv], move |g, _| {
            let mut ga = vec![T::zero(); nf];
            let mut gb = vec![T::zero(); nf];
            let inv_sr = T::from_f64(1.0 / sr);
            let two = T::from_f64(2.0);
            for (f, c) in cuts.iter().enumerate() {
                let (f1, f2) = (c.low * inv_sr, c.high * inv_sr);
                let (mut d_low, mut d_high) = (T::zero(), T::zero());
                for (i, &wi) in w.iter().enumerate() {
                    let nt = T::from_f64((i as isize - m) as f64);
                    let gi = g.data()[f * k + i] * T::from_f64(wi);
                    d_high += gi * two * (two_pi * f2 * nt).cos() * inv_sr;
                    d_low -= gi * two * (two_pi * f1 * nt).cos() * inv_sr;
                }
                let total_low = d_low + d_high * c.dhigh_dlow;
                ga[f] = total_low * c.dlow_da;
                gb[f] = d_high * c.dhigh_db;
            }
            vec![Some(Tensor::new(&[nf], ga)), Some(Tensor::new(&[nf], gb))]
        })
    }

    /// Valid (unpadded) convolution of `x: [N, 1, L]` with every kernel.
    pub fn forward<'t, T: Scalar>(&self, b: &Binder<'t, '_, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.conv1d(self.kernel_var(b), None, 1, 0)
    }
}
