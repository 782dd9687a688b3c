//! Real-input FFT helpers (first half of the spectrum only).

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Forward transform of real series of a fixed length, returning bins
/// `0..=n/2`.
#[derive(Clone)]
pub struct HalfFft {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for HalfFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HalfFft").field("n", &self.n).finish()
    }
}

impl HalfFft {
    pub fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        Self { n, fft }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_bins(&self) -> usize {
        self.n / 2 + 1
    }

    pub fn transform(&self, x: &[f64]) -> Vec<Complex<f64>> {
        assert_eq!(x.len(), self.n, "series length does not match the plan");
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf.truncate(self.n_bins());
        buf
    }

    /// `|X_k|^2` over the half spectrum.
    pub fn power(&self, x: &[f64]) -> Vec<f64> {
        self.transform(x)
            .into_iter()
            .map(|c| c.norm_sqr())
            .collect()
    }

    /// Weight making the half spectrum an isometry of the full one (up to
    /// the global factor `n`): bins with a mirror image count twice.
    pub fn bin_weight(&self, k: usize) -> f64 {
        let nyquist = self.n.is_multiple_of(2) && k == self.n / 2;
        if k == 0 || nyquist {
            1.0
        } else {
            std::f64::consts::SQRT_2
        }
    }
}

/// Power spectrum of the mean-removed series.
pub fn centered_power_spectrum(x: &[f64]) -> Vec<f64> {
    let m = crate::linalg::mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    HalfFft::new(x.len()).power(&centered)
}
