//! Field-envelope generators: pseudo-thermal (chaotic) light from a rotating
//! ground disk or a noise-driven EOM, coherent light, and pulse shaping.
//!
//! Chaotic light is synthesised by colouring i.i.d. complex Gaussian noise in
//! the frequency domain and transforming back, which reproduces the target
//! power spectrum exactly in expectation at `O(N log N)` cost. The transform
//! is computed over the requested length plus ten coherence times of guard
//! samples, and the guard is discarded.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::FieldRecord;
use crate::rng::rng_from_seed;

/// Smallest allowed `sample_rate / bandwidth` before a record is rejected as aliased.
pub const MIN_OVERSAMPLING: f64 = 4.0;
/// Recommended minimum oversampling; below this the record is still produced.
pub const RECOMMENDED_OVERSAMPLING: f64 = 20.0;
/// Minimum number of coherence cells (`duration * bandwidth`) for stationary statistics.
pub const MIN_COHERENCE_CELLS: f64 = 50.0;
const GUARD_COHERENCE_TIMES: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralKind {
    Gaussian,
    Lorentzian,
}

/// Power-spectrum shape of a chaotic source.
///
/// `fwhm` is the width parameter `sigma` of the intensity correlation
/// `g2(tau) - 1 = exp(-sigma^2 tau^2 ln 2)`: the intensity correlation falls
/// to one half at `|tau| = 1 / sigma`. The same half-width rule fixes the
/// Lorentzian scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralShape {
    pub kind: SpectralKind,
    pub fwhm: f64,
    #[serde(default)]
    pub center_offset: f64,
}

impl SpectralShape {
    pub fn gaussian(fwhm: f64) -> Self {
        SpectralShape {
            kind: SpectralKind::Gaussian,
            fwhm,
            center_offset: 0.0,
        }
    }

    pub fn lorentzian(fwhm: f64) -> Self {
        SpectralShape {
            kind: SpectralKind::Lorentzian,
            fwhm,
            center_offset: 0.0,
        }
    }

    /// Half-width at half maximum of `g2(tau) - 1`.
    pub fn coherence_time(&self) -> f64 {
        1.0 / self.fwhm
    }

    /// Field amplitude filter `|H(f)|`, with `|H(center)| = 1`.
    pub fn amplitude(&self, f: f64) -> f64 {
        let x = f - self.center_offset;
        match self.kind {
            // |g1|^2 = exp(-sigma^2 tau^2 ln2)  <=>  PSD = exp(-2 pi^2 f^2 / (sigma^2 ln2))
            SpectralKind::Gaussian => (-PI * PI * x * x / (self.fwhm * self.fwhm * LN_2)).exp(),
            // |g1|^2 = exp(-4 pi gamma |tau|) with gamma = sigma ln2 / (4 pi)
            SpectralKind::Lorentzian => {
                let gamma = self.fwhm * LN_2 / (4.0 * PI);
                (1.0 / (1.0 + (x / gamma).powi(2))).sqrt()
            }
        }
    }

    /// Normalised power spectral density (unit integral over frequency).
    pub fn psd(&self, f: f64) -> f64 {
        let x = f - self.center_offset;
        match self.kind {
            SpectralKind::Gaussian => {
                let s2 = self.fwhm * self.fwhm * LN_2 / (4.0 * PI * PI);
                (-x * x / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt()
            }
            SpectralKind::Lorentzian => {
                let gamma = self.fwhm * LN_2 / (4.0 * PI);
                1.0 / (PI * gamma * (1.0 + (x / gamma).powi(2)))
            }
        }
    }
}

/// Spectrum of the EOM drive noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpectrum {
    #[default]
    Gaussian,
    Flat,
}

/// Options for [`gen_chaotic_eom_with`].
///
/// `amplitude` mixes the carrier and the noise modulation,
/// `E = sqrt(1 - a^2) + a * (X + iY)`: `0` leaves the coherent carrier,
/// `1` gives fully chaotic light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EomNoise {
    pub spectrum: NoiseSpectrum,
    pub amplitude: f64,
}

impl Default for EomNoise {
    fn default() -> Self {
        EomNoise {
            spectrum: NoiseSpectrum::Gaussian,
            amplitude: 1.0,
        }
    }
}

/// `sigma` of the intensity correlation produced by a Gaussian noise
/// spectrum with power FWHM `bandwidth`.
pub fn eom_equivalent_sigma(bandwidth: f64) -> f64 {
    PI * bandwidth / (2.0_f64.sqrt() * LN_2)
}

fn check_common(sample_rate: f64, duration: f64, bandwidth: f64) -> Result<usize> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::invalid(format!("sample_rate must be positive, got {sample_rate}")));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if sample_rate < MIN_OVERSAMPLING * bandwidth {
        return Err(Error::Aliasing {
            sample_rate,
            bandwidth,
            min_rate: MIN_OVERSAMPLING * bandwidth,
        });
    }
    if sample_rate < RECOMMENDED_OVERSAMPLING * bandwidth {
        log::warn!(
            "sample rate {sample_rate:e} Hz is below {RECOMMENDED_OVERSAMPLING} x the {bandwidth:e} Hz bandwidth"
        );
    }
    if duration * bandwidth < MIN_COHERENCE_CELLS {
        return Err(Error::RecordTooShort(format!(
            "duration {duration:e} s holds only {:.1} coherence cells of a {bandwidth:e} Hz source (need {MIN_COHERENCE_CELLS})",
            duration * bandwidth
        )));
    }
    sample_count(sample_rate, duration)
}

fn sample_count(sample_rate: f64, duration: f64) -> Result<usize> {
    let n = (duration * sample_rate).round();
    if n < 1.0 {
        return Err(Error::invalid("duration shorter than one sample"));
    }
    Ok(n as usize)
}

/// Circular complex Gaussian noise with amplitude spectrum `filter(f)`.
///
/// Returns `n` samples with `E|z|^2 = 1`; `guard` extra samples are
/// generated and dropped. No bandwidth checks are made here.
pub fn colored_noise(
    filter: impl Fn(f64) -> f64,
    n: usize,
    guard: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let m = fft::good_size(n + guard);
    let gains: Vec<f64> = (0..m)
        .map(|k| filter(fft::bin_frequency(k, m, sample_rate)))
        .collect();
    let power: f64 = gains.iter().map(|g| g * g).sum();
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::invalid("spectral filter has no power on the sampled grid"));
    }
    let mut rng = rng_from_seed(seed);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut spec: Vec<Complex64> = gains
        .iter()
        .map(|&g| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * half, im * half) * g
        })
        .collect();
    fft::inverse(&mut spec);
    // inverse() divides by m; E|sum_k H_k X_k e^{..}|^2 = sum |H_k|^2
    let scale = m as f64 / power.sqrt();
    spec.truncate(n);
    for z in spec.iter_mut() {
        *z *= scale;
    }
    Ok(spec)
}

fn guard_samples(coherence_time: f64, sample_rate: f64) -> usize {
    (GUARD_COHERENCE_TIMES * coherence_time * sample_rate).ceil() as usize
}

/// Pseudo-thermal light with the given power spectrum (rotating ground disk model).
pub fn gen_chaotic_gaussian(
    shape: SpectralShape,
    sample_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<FieldRecord> {
    let n = check_common(sample_rate, duration, shape.fwhm)?;
    let guard = guard_samples(shape.coherence_time(), sample_rate);
    let samples = colored_noise(|f| shape.amplitude(f), n, guard, sample_rate, seed)?;
    let mut rec = FieldRecord::new(samples, sample_rate)?;
    rec.seed_trace = Some(seed);
    Ok(rec)
}

/// Chaotic light from an EOM driven by Gaussian noise of power-spectrum FWHM
/// `noise_bandwidth`, with both quadratures randomised.
pub fn gen_chaotic_eom(
    noise_bandwidth: f64,
    sample_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<FieldRecord> {
    gen_chaotic_eom_with(EomNoise::default(), noise_bandwidth, sample_rate, duration, seed)
}

pub fn gen_chaotic_eom_with(
    noise: EomNoise,
    noise_bandwidth: f64,
    sample_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<FieldRecord> {
    if !(0.0..=1.0).contains(&noise.amplitude) {
        return Err(Error::invalid(format!(
            "noise amplitude must lie in [0, 1], got {}",
            noise.amplitude
        )));
    }
    let n = check_common(sample_rate, duration, noise_bandwidth)?;
    let b = noise_bandwidth;
    let modulation = match noise.spectrum {
        NoiseSpectrum::Gaussian => {
            let guard = guard_samples(1.0 / eom_equivalent_sigma(b), sample_rate);
            // |H|^2 = exp(-4 ln2 f^2 / B^2)
            colored_noise(|f| (-2.0 * LN_2 * f * f / (b * b)).exp(), n, guard, sample_rate, seed)?
        }
        NoiseSpectrum::Flat => {
            let guard = guard_samples(1.0 / b, sample_rate);
            colored_noise(|f| if f.abs() <= 0.5 * b { 1.0 } else { 0.0 }, n, guard, sample_rate, seed)?
        }
    };
    let a = noise.amplitude;
    let carrier = (1.0 - a * a).sqrt();
    let samples = modulation
        .into_iter()
        .map(|z| Complex64::new(carrier, 0.0) + z * a)
        .collect();
    let mut rec = FieldRecord::new(samples, sample_rate)?;
    rec.seed_trace = Some(seed);
    Ok(rec)
}

/// Constant unit envelope.
pub fn gen_coherent(sample_rate: f64, duration: f64) -> Result<FieldRecord> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::invalid(format!("duration must be positive, got {duration}")));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::invalid(format!("sample_rate must be positive, got {sample_rate}")));
    }
    let n = sample_count(sample_rate, duration)?;
    FieldRecord::new(vec![Complex64::new(1.0, 0.0); n], sample_rate)
}

/// Value of the pulse window at local time `t`.
///
/// Rectangular on `[start, start + width)` with raised-cosine ramps of
/// `rise_time` inside the window at both ends.
pub fn pulse_window(t: f64, start: f64, width: f64, rise_time: f64) -> f64 {
    let u = t - start;
    if u < 0.0 || u >= width {
        return 0.0;
    }
    if rise_time <= 0.0 {
        return 1.0;
    }
    let edge = u.min(width - u);
    if edge >= rise_time {
        1.0
    } else {
        0.5 * (1.0 - (PI * edge / rise_time).cos())
    }
}

/// Multiplies the envelope by a smoothed rectangular window.
pub fn shape_pulse(field: &FieldRecord, start: f64, width: f64, rise_time: f64) -> Result<FieldRecord> {
    let duration = field.duration();
    let tol = 1e-9 * duration.max(field.dt());
    if !(width > 0.0) || start < -tol || start + width > duration + tol {
        return Err(Error::WindowOutsideRecord {
            start,
            end: start + width,
            duration,
        });
    }
    if !(rise_time >= 0.0) || 2.0 * rise_time > width {
        return Err(Error::invalid(format!(
            "rise_time {rise_time:e} s must be non-negative and fit twice into the {width:e} s window"
        )));
    }
    let range = field.index_range(start, start + width);
    let samples = field
        .samples
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if !range.contains(&i) {
                return Complex64::new(0.0, 0.0);
            }
            z * pulse_window(field.local_time(i), start, width, rise_time)
        })
        .collect();
    Ok(field.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_is_square_of_amplitude_up_to_normalisation() {
        for shape in [SpectralShape::gaussian(1e5), SpectralShape::lorentzian(1e5)] {
            let r0 = shape.psd(0.0);
            for &f in &[1e3, 2e4, 7e4, 3e5] {
                let a = shape.amplitude(f);
                assert!((shape.psd(f) / r0 - a * a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn psd_integrates_to_one() {
        for shape in [SpectralShape::gaussian(1e5), SpectralShape::lorentzian(1e5)] {
            let df = 10.0;
            let total: f64 = (-2_000_000..2_000_000).map(|k| shape.psd(k as f64 * df) * df).sum();
            let tol = if shape.kind == SpectralKind::Gaussian { 1e-9 } else { 1e-3 };
            assert!((total - 1.0).abs() < tol, "{:?}: {total}", shape.kind);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let g = SpectralShape::gaussian(1e5);
        assert!(gen_chaotic_gaussian(g, 2e6, 0.0, 1).is_err());
        assert!(gen_chaotic_gaussian(g, -1.0, 1e-2, 1).is_err());
        assert!(matches!(
            gen_chaotic_gaussian(g, 3e5, 1e-2, 1),
            Err(Error::Aliasing { .. })
        ));
        assert!(matches!(
            gen_chaotic_gaussian(g, 2e6, 1e-4, 1),
            Err(Error::RecordTooShort(_))
        ));
        assert!(gen_chaotic_eom(4e4, 1.5e5, 1e-2, 1).is_err());
        assert!(gen_coherent(0.0, 1.0).is_err());
        assert!(gen_coherent(1e6, -1.0).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = gen_chaotic_eom(1e5, 5e6, 2e-3, 9).unwrap();
        let b = gen_chaotic_eom(1e5, 5e6, 2e-3, 9).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = gen_chaotic_eom(1e5, 5e6, 2e-3, 10).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
        let g1 = gen_chaotic_gaussian(SpectralShape::lorentzian(1e5), 5e6, 2e-3, 3).unwrap();
        let g2 = gen_chaotic_gaussian(SpectralShape::lorentzian(1e5), 5e6, 2e-3, 3).unwrap();
        assert_eq!(g1.to_bytes(), g2.to_bytes());
    }

    #[test]
    fn zero_noise_amplitude_gives_the_carrier() {
        let noise = EomNoise {
            amplitude: 0.0,
            ..EomNoise::default()
        };
        let rec = gen_chaotic_eom_with(noise, 1e5, 5e6, 2e-3, 4).unwrap();
        assert!(rec.samples.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn coherent_is_flat() {
        let rec = gen_coherent(1e6, 1e-3).unwrap();
        assert_eq!(rec.len(), 1000);
        assert!(rec.intensity().iter().all(|&i| i == 1.0));
    }

    #[test]
    fn white_limit_has_uncorrelated_neighbours() {
        let n = 1 << 18;
        let z = colored_noise(|_| 1.0, n, 0, 1.0, 5).unwrap();
        let mut lag1 = Complex64::new(0.0, 0.0);
        let mut p = 0.0;
        for i in 0..n - 1 {
            lag1 += z[i].conj() * z[i + 1];
            p += z[i].norm_sqr();
        }
        // standard error ~ 1/sqrt(n) = 0.002
        assert!(lag1.norm() / p < 0.01);
    }

    #[test]
    fn pulse_window_shapes() {
        assert_eq!(pulse_window(0.5, 0.0, 1.0, 0.0), 1.0);
        assert_eq!(pulse_window(1.0, 0.0, 1.0, 0.0), 0.0);
        assert_eq!(pulse_window(-1e-12, 0.0, 1.0, 0.1), 0.0);
        assert!((pulse_window(0.05, 0.0, 1.0, 0.1) - 0.5).abs() < 1e-12);
        assert!((pulse_window(0.95, 0.0, 1.0, 0.1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shaping_conserves_window_energy() {
        let rec = gen_chaotic_gaussian(SpectralShape::gaussian(1e5), 1e7, 1e-3, 2).unwrap();
        let shaped = shape_pulse(&rec, 2e-4, 2e-6, 0.0).unwrap();
        let before = rec.window_energy(2e-4, 2e-4 + 2e-6);
        assert!((shaped.energy() - before).abs() <= 1e-12 * before);
        assert_eq!(shaped.window_energy(0.0, 2e-4), 0.0);
        assert_eq!(shaped.index_range(2e-4, 2e-4 + 2e-6).len(), 20);
    }

    #[test]
    fn full_width_rectangle_is_identity() {
        let rec = gen_chaotic_gaussian(SpectralShape::gaussian(1e5), 1e7, 1e-3, 2).unwrap();
        let shaped = shape_pulse(&rec, 0.0, rec.duration(), 0.0).unwrap();
        assert_eq!(shaped.samples, rec.samples);
    }

    #[test]
    fn smoothed_window_keeps_energy_inside() {
        let rec = gen_coherent(1e8, 1e-5).unwrap();
        let shaped = shape_pulse(&rec, 2e-6, 2e-6, 1e-7).unwrap();
        let inside = shaped.window_energy(2e-6, 4e-6);
        assert!((shaped.energy() - inside).abs() <= 1e-6 * shaped.energy());
        // two raised-cosine ramps lose rise_time * (1 - 3/8) each
        let expected = 2e-6 - 2.0 * 1e-7 * (1.0 - 3.0 / 8.0);
        assert!((inside - expected).abs() < 2e-9, "{inside} vs {expected}");
    }

    #[test]
    fn window_outside_record_is_rejected() {
        let rec = gen_coherent(1e6, 1e-4).unwrap();
        assert!(matches!(
            shape_pulse(&rec, 9e-5, 2e-5, 0.0),
            Err(Error::WindowOutsideRecord { .. })
        ));
        assert!(shape_pulse(&rec, -1e-6, 2e-5, 0.0).is_err());
        assert!(shape_pulse(&rec, 0.0, 2e-5, 1.5e-5).is_err());
    }
}
