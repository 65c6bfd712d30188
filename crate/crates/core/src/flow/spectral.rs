//! Periodic FFT helpers on `[0, 1)` with `N` equispaced samples.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Signed wavenumber, `0` at Nyquist.
    k: Vec<f64>,
}

impl Spectral {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let k = (0..n)
            .map(|j| match j {
                j if 2 * j < n => j as f64,
                j if 2 * j == n => 0.0,
                j => j as f64 - n as f64,
            })
            .collect();
        Spectral { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n), k }
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    /// Signed wavenumbers, Nyquist mapped to 0.
    pub(crate) fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    /// `|k|` including the Nyquist mode.
    pub(crate) fn abs_wavenumber(&self, j: usize) -> f64 {
        j.min(self.n - j) as f64
    }

    /// `X_k = (1/N) Σ x_j e^{-2πi jk/N}`.
    pub(crate) fn forward(&self, x: &mut [Complex64]) {
        self.fwd.process(x);
        let s = 1.0 / self.n as f64;
        x.iter_mut().for_each(|v| *v *= s);
    }

    /// `x_j = Σ X_k e^{2πi jk/N}`.
    pub(crate) fn inverse(&self, x: &mut [Complex64]) {
        self.inv.process(x);
    }

    pub(crate) fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        self.forward(&mut v);
        v
    }

    pub(crate) fn inverse_real(&self, x: &[Complex64]) -> Vec<f64> {
        let mut v = x.to_vec();
        self.inverse(&mut v);
        v.into_iter().map(|c| c.re).collect()
    }

    /// Spectral derivative with respect to the unit-period parameter.
    pub(crate) fn derivative(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        coeffs.iter().zip(&self.k).map(|(c, &k)| c * Complex64::new(0.0, 2.0 * PI * k)).collect()
    }

    /// Zero-mean antiderivative; the mean coefficient is dropped.
    pub(crate) fn antiderivative(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        coeffs
            .iter()
            .zip(&self.k)
            .map(|(c, &k)| if k == 0.0 { Complex64::new(0.0, 0.0) } else { c / Complex64::new(0.0, 2.0 * PI * k) })
            .collect()
    }
}
