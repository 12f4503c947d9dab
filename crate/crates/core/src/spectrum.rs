//! Spectral estimation used for diagnostics and checks.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::fft;

/// Welch power spectral density of a complex record.
#[derive(Debug, Clone)]
pub struct WelchPsd {
    /// Frequencies in ascending order, Hz.
    pub freqs: Vec<f64>,
    /// Two-sided density with `sum(psd) * df = mean |x|^2`.
    pub psd: Vec<f64>,
    pub segments: usize,
}

/// Hann-windowed Welch estimate with 50% overlap.
pub fn welch(samples: &[Complex64], sample_rate: f64, segment_len: usize) -> WelchPsd {
    assert!(segment_len >= 2 && segment_len <= samples.len());
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / segment_len as f64).cos()))
        .collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    let step = segment_len / 2;
    let mut acc = vec![0.0; segment_len];
    let mut segments = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    let mut start = 0;
    while start + segment_len <= samples.len() {
        for (b, (x, w)) in buf.iter_mut().zip(samples[start..].iter().zip(&window)) {
            *b = x * w;
        }
        fft::forward(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let norm = 1.0 / (sample_rate * u * segments as f64);
    let half = segment_len / 2;
    // reorder from FFT layout to ascending frequency
    let order = (half + 1..segment_len).chain(0..=half);
    let mut freqs = Vec::with_capacity(segment_len);
    let mut psd = Vec::with_capacity(segment_len);
    for k in order {
        freqs.push(fft::bin_frequency(k, segment_len, sample_rate));
        psd.push(acc[k] * norm);
    }
    WelchPsd { freqs, psd, segments }
}

/// Unbiased circular-free autocorrelation `R(k) = <x*(t) x(t+k)>` for `k = 0..=max_lag`.
pub fn autocorrelation(samples: &[Complex64], max_lag: usize) -> Vec<Complex64> {
    let n = samples.len();
    let m = fft::good_size(2 * n);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    buf[..n].copy_from_slice(samples);
    fft::forward(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex64::new(z.norm_sqr(), 0.0);
    }
    fft::inverse(&mut buf);
    // IFFT(|X|^2)[k] = sum_t x(t + k) x*(t)
    (0..=max_lag.min(n - 1))
        .map(|k| buf[k] / (n - k) as f64)
        .collect()
}
