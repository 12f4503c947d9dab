//! EIT medium as a linear filter on the probe envelope.
//!
//! The transparency window is a Gaussian dip in the optical depth on a flat
//! absorbing background,
//!
//! ```text
//! od(d) = od_bg - (od_bg - od_peak) * exp(-4 ln2 d^2 / w^2),   d = f - window_center
//! ```
//!
//! with `w` fixed so that the *intensity* transmission `exp(-od)` falls to half
//! its peak at `d = +/- eit_fwhm / 2`. The phase is the minimum-phase
//! (Kramers–Kronig) partner of the log-amplitude plus a linear term, chosen
//! so that the total group delay at the window centre is `group_delay`.
//!
//! For a Gaussian log-amplitude bump the Hilbert transform is a scaled
//! Dawson function, so the response can be evaluated on any frequency grid.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::FieldRecord;
use crate::special::dawson;

/// Required `sample_rate / eit_fwhm` for propagation.
pub const MIN_PROPAGATION_OVERSAMPLING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumModel {
    pub eit_fwhm: f64,
    pub peak_transmission: f64,
    pub off_window_od: f64,
    pub group_delay: f64,
    pub window_center: f64,
    /// One-photon detuning; carried as metadata only.
    pub one_photon_detuning: f64,
    /// `1/e` half-width parameter `w / sqrt(4 ln 2)` of the optical-depth dip, s.
    dip_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub freq_grid: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl FrequencyResponse {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta_hz,amplitude,phase_rad\n");
        for ((f, a), p) in self.freq_grid.iter().zip(&self.amplitude).zip(&self.phase) {
            s.push_str(&format!("{f:e},{a:e},{p:e}\n"));
        }
        s
    }
}

/// Builds a medium whose intensity-transmission FWHM equals `eit_fwhm`.
///
/// `peak_transmission = 1, off_window_od = 0` gives a flat, lossless medium
/// (a pure delay line).
pub fn build_medium(
    eit_fwhm: f64,
    peak_transmission: f64,
    off_window_od: f64,
    group_delay: f64,
) -> Result<MediumModel> {
    if !(eit_fwhm > 0.0 && eit_fwhm.is_finite()) {
        return Err(Error::invalid(format!("eit_fwhm must be positive, got {eit_fwhm}")));
    }
    if !(peak_transmission > 0.0 && peak_transmission <= 1.0) {
        return Err(Error::invalid(format!(
            "peak_transmission must lie in (0, 1], got {peak_transmission}"
        )));
    }
    if !(off_window_od >= 0.0 && off_window_od.is_finite()) {
        return Err(Error::invalid(format!("off_window_od must be >= 0, got {off_window_od}")));
    }
    if !(group_delay >= 0.0 && group_delay.is_finite()) {
        return Err(Error::invalid(format!("group_delay must be >= 0, got {group_delay}")));
    }
    let od_peak = -peak_transmission.ln();
    let contrast = off_window_od - od_peak;
    let dip_scale = if contrast.abs() <= 1e-12 {
        0.0
    } else if contrast < 0.0 {
        return Err(Error::UnsolvableWindow(format!(
            "background od {off_window_od} is more transparent than the window peak (od {od_peak:.4})"
        )));
    } else if contrast <= LN_2 {
        return Err(Error::UnsolvableWindow(format!(
            "od contrast {contrast:.4} between window and background cannot reach half transmission (needs > ln 2)"
        )));
    } else {
        // exp(-(d/s)^2) = 1 - ln2/contrast at d = fwhm/2
        let half = 0.5 * eit_fwhm;
        half / (-(-LN_2 / contrast).ln_1p()).sqrt()
    };
    let medium = MediumModel {
        eit_fwhm,
        peak_transmission,
        off_window_od,
        group_delay,
        window_center: 0.0,
        one_photon_detuning: 100e6,
        dip_scale,
    };
    if dip_scale > 0.0 {
        let t0 = medium.intensity_transmission(0.0);
        for d in [-0.5 * eit_fwhm, 0.5 * eit_fwhm] {
            let rel = medium.intensity_transmission(d) / t0 - 0.5;
            if rel.abs() > 1e-6 {
                return Err(Error::UnsolvableWindow(format!(
                    "half-maximum condition missed by {rel:e}"
                )));
            }
        }
    }
    Ok(medium)
}

impl MediumModel {
    pub fn with_window_center(mut self, center: f64) -> Self {
        self.window_center = center;
        self
    }

    /// A flat medium: no absorption and no dispersion beyond `group_delay`.
    pub fn is_flat(&self) -> bool {
        self.dip_scale == 0.0
    }

    fn od_peak(&self) -> f64 {
        -self.peak_transmission.ln()
    }

    fn contrast(&self) -> f64 {
        if self.is_flat() {
            0.0
        } else {
            self.off_window_od - self.od_peak()
        }
    }

    /// Width parameter `w` of the optical-depth dip (Hz).
    pub fn dip_width(&self) -> f64 {
        self.dip_scale * (4.0 * LN_2).sqrt()
    }

    pub fn optical_depth(&self, f: f64) -> f64 {
        if self.is_flat() {
            return self.off_window_od;
        }
        let x = (f - self.window_center) / self.dip_scale;
        self.off_window_od - self.contrast() * (-x * x).exp()
    }

    pub fn intensity_transmission(&self, f: f64) -> f64 {
        (-self.optical_depth(f)).exp()
    }

    pub fn amplitude(&self, f: f64) -> f64 {
        (-0.5 * self.optical_depth(f)).exp()
    }

    /// Group delay contributed by the minimum-phase (absorption-linked) part.
    pub fn minimum_phase_delay(&self) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        0.5 * self.contrast() / (self.dip_scale * PI.powf(1.5))
    }

    /// Extra linear-phase delay that brings the centre delay to `group_delay`.
    pub fn linear_delay(&self) -> f64 {
        self.group_delay - self.minimum_phase_delay()
    }

    pub fn minimum_phase(&self, f: f64) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let x = (f - self.window_center) / self.dip_scale;
        -self.contrast() / PI.sqrt() * dawson(x)
    }

    pub fn phase(&self, f: f64) -> f64 {
        self.minimum_phase(f) - 2.0 * PI * (f - self.window_center) * self.linear_delay()
    }

    pub fn transfer(&self, f: f64) -> Complex64 {
        Complex64::from_polar(self.amplitude(f), self.phase(f))
    }

    pub fn response(&self, freq_grid: &[f64]) -> FrequencyResponse {
        FrequencyResponse {
            freq_grid: freq_grid.to_vec(),
            amplitude: freq_grid.iter().map(|&f| self.amplitude(f)).collect(),
            phase: freq_grid.iter().map(|&f| self.phase(f)).collect(),
        }
    }

    /// Zero padding placed on each side of a record before filtering.
    pub fn guard_time(&self) -> f64 {
        let ringing = if self.is_flat() { 0.0 } else { 40.0 * self.dip_scale.recip() };
        self.group_delay + self.linear_delay().abs() + 4.0 * self.minimum_phase_delay() + ringing
    }
}

fn padded_spectrum(field: &FieldRecord, guard: usize) -> Vec<Complex64> {
    let n = field.len();
    let m = fft::good_size(n + 2 * guard);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    buf[guard..guard + n].copy_from_slice(&field.samples);
    fft::forward(&mut buf);
    buf
}

fn check_propagation(field: &FieldRecord, medium: &MediumModel) -> Result<usize> {
    let min_rate = MIN_PROPAGATION_OVERSAMPLING * medium.eit_fwhm;
    if field.sample_rate < min_rate {
        return Err(Error::Aliasing {
            sample_rate: field.sample_rate,
            bandwidth: medium.eit_fwhm,
            min_rate,
        });
    }
    if field.duration() < 4.0 * medium.group_delay {
        return Err(Error::RecordTooShort(format!(
            "record of {:e} s is shorter than 4 x the {:e} s group delay",
            field.duration(),
            medium.group_delay
        )));
    }
    Ok((medium.guard_time() * field.sample_rate).ceil() as usize + 1)
}

/// Transfer function sampled for one record length and sample rate, so that
/// many records of the same shape can be filtered without re-evaluating it.
#[derive(Debug, Clone)]
pub struct Propagator {
    medium: MediumModel,
    len: usize,
    sample_rate: f64,
    guard: usize,
    transfer: Vec<Complex64>,
}

impl Propagator {
    pub fn new(medium: &MediumModel, len: usize, sample_rate: f64) -> Result<Propagator> {
        let probe = FieldRecord::new(vec![Complex64::new(0.0, 0.0); len.max(1)], sample_rate)?;
        let guard = check_propagation(&probe, medium)?;
        let m = fft::good_size(len + 2 * guard);
        let transfer = (0..m)
            .map(|k| medium.transfer(fft::bin_frequency(k, m, sample_rate)))
            .collect();
        Ok(Propagator {
            medium: *medium,
            len,
            sample_rate,
            guard,
            transfer,
        })
    }

    pub fn medium(&self) -> &MediumModel {
        &self.medium
    }

    fn check(&self, field: &FieldRecord) -> Result<()> {
        if field.len() != self.len || field.sample_rate != self.sample_rate {
            return Err(Error::MismatchedRecords(format!(
                "propagator built for {} samples at {} Hz, got {} at {} Hz",
                self.len,
                self.sample_rate,
                field.len(),
                field.sample_rate
            )));
        }
        Ok(())
    }

    /// Filtered record plus the energy the full (uncropped) output carries.
    pub fn apply(&self, field: &FieldRecord) -> Result<(FieldRecord, f64)> {
        self.check(field)?;
        let mut buf = padded_spectrum(field, self.guard);
        let m = buf.len();
        let mut power = 0.0;
        for (z, h) in buf.iter_mut().zip(&self.transfer) {
            *z *= h;
            power += z.norm_sqr();
        }
        fft::inverse(&mut buf);
        let out = field.with_samples(buf[self.guard..self.guard + self.len].to_vec());
        Ok((out, power / m as f64 * field.dt()))
    }
}

/// Passes the envelope through the medium.
///
/// With the coupling field on the record is zero-padded, filtered in the
/// frequency domain and cropped back to its own time window. With the
/// coupling off the medium is opaque: a flat attenuation by the background
/// optical depth.
pub fn propagate(field: &FieldRecord, medium: &MediumModel, coupling_on: bool) -> Result<FieldRecord> {
    check_propagation(field, medium)?;
    if !coupling_on {
        let a = (-0.5 * medium.off_window_od).exp();
        return Ok(field.with_samples(field.samples.iter().map(|z| z * a).collect()));
    }
    Ok(Propagator::new(medium, field.len(), field.sample_rate)?.apply(field)?.0)
}

/// Output energy predicted in the frequency domain, `sum |H|^2 |E(f)|^2`.
///
/// Equals the energy of [`propagate`] whenever the filtered pulse stays
/// inside the record.
pub fn filtered_energy(field: &FieldRecord, medium: &MediumModel) -> Result<f64> {
    let guard = check_propagation(field, medium)?;
    let buf = padded_spectrum(field, guard);
    let m = buf.len();
    let sum: f64 = buf
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let f = fft::bin_frequency(k, m, field.sample_rate);
            medium.intensity_transmission(f) * z.norm_sqr()
        })
        .sum();
    Ok(sum / m as f64 * field.dt())
}

/// Intensity transmission versus two-photon detuning.
pub fn scan_transmission(medium: &MediumModel, detuning_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if detuning_grid.len() < 3 {
        return Err(Error::WindowNotResolved("grid has fewer than three points".into()));
    }
    let lo = detuning_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = detuning_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 4.0 * medium.eit_fwhm {
        return Err(Error::WindowNotResolved(format!(
            "grid spans {:e} Hz, need at least 4 x {:e} Hz",
            hi - lo,
            medium.eit_fwhm
        )));
    }
    Ok(detuning_grid
        .iter()
        .map(|&d| (d, medium.intensity_transmission(d)))
        .collect())
}

/// Full width at half maximum from half-maximum crossings, linearly interpolated.
pub fn extract_fwhm(curve: &[(f64, f64)]) -> Result<f64> {
    let (imax, &(_, peak)) = curve
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .ok_or_else(|| Error::WindowNotResolved("empty curve".into()))?;
    let floor = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let half = 0.5 * peak;
    if !(floor < half) {
        return Err(Error::WindowNotResolved("curve never drops below half maximum".into()));
    }
    let cross = |a: (f64, f64), b: (f64, f64)| a.0 + (half - a.1) * (b.0 - a.0) / (b.1 - a.1);
    let left = (1..=imax)
        .rev()
        .find(|&i| curve[i - 1].1 < half)
        .map(|i| cross(curve[i - 1], curve[i]));
    let right = (imax..curve.len() - 1)
        .find(|&i| curve[i + 1].1 < half)
        .map(|i| cross(curve[i], curve[i + 1]));
    match (left, right) {
        (Some(l), Some(r)) => {
            let points_inside = curve.iter().filter(|p| p.0 > l && p.0 < r).count();
            if points_inside < 3 {
                return Err(Error::WindowNotResolved(format!(
                    "only {points_inside} grid points inside the window"
                )));
            }
            Ok(r - l)
        }
        _ => Err(Error::WindowNotResolved("half-maximum crossing missing on one side".into())),
    }
}

/// Uniform detuning grid of `points` samples over `[-half_span, half_span]`.
pub fn detuning_grid(half_span: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .map(|i| -half_span + 2.0 * half_span * i as f64 / (points - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::{gen_chaotic_eom, gen_coherent, shape_pulse};
    use proptest::prelude::*;

    fn default_medium() -> MediumModel {
        build_medium(200e3, 0.5, 6.0, 1e-6).unwrap()
    }

    #[test]
    fn half_maximum_at_half_width() {
        for &(peak, od) in &[(0.5, 6.0), (1.0, 50.0), (0.9, 2.0), (0.2, 30.0)] {
            let m = build_medium(200e3, peak, od, 1e-6).unwrap();
            for d in [-100e3, 100e3] {
                let t = m.intensity_transmission(d);
                assert!((t / peak - 0.5).abs() < 1e-9, "peak {peak} od {od}: {t}");
            }
            assert!((m.intensity_transmission(0.0) - peak).abs() < 1e-12);
        }
    }

    #[test]
    fn asymptote_is_background() {
        let m = default_medium();
        assert!((m.intensity_transmission(1e8) - (-6.0f64).exp()).abs() < 1e-15);
        assert!((m.intensity_transmission(-1e8) - (-6.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn unsolvable_windows_are_rejected() {
        assert!(matches!(build_medium(200e3, 0.5, 1.0, 0.0), Err(Error::UnsolvableWindow(_))));
        assert!(matches!(build_medium(200e3, 0.5, 0.1, 0.0), Err(Error::UnsolvableWindow(_))));
        assert!(build_medium(0.0, 0.5, 6.0, 0.0).is_err());
        assert!(build_medium(200e3, 0.0, 6.0, 0.0).is_err());
        assert!(build_medium(200e3, 1.5, 6.0, 0.0).is_err());
        assert!(build_medium(200e3, 0.5, 6.0, -1e-6).is_err());
    }

    #[test]
    fn flat_medium_is_identity() {
        let m = build_medium(200e3, 1.0, 0.0, 0.0).unwrap();
        assert!(m.is_flat());
        let rec = gen_chaotic_eom(1e5, 4e6, 2e-3, 11).unwrap();
        let out = propagate(&rec, &m, true).unwrap();
        for (a, b) in out.samples.iter().zip(&rec.samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn phase_slope_matches_group_delay() {
        for &tau in &[0.0, 0.4e-6, 1e-6, 3e-6] {
            let m = build_medium(200e3, 0.5, 6.0, tau).unwrap();
            let h = 1.0;
            let slope = (m.phase(h) - m.phase(-h)) / (2.0 * h);
            let delay = slope / (-2.0 * PI);
            assert!((delay - tau).abs() <= 1e-3 * tau.max(1e-9), "{delay} vs {tau}");
        }
    }

    // Cepstral minimum-phase construction on a periodic grid. The 1/f phase
    // tail wraps at Nyquist, so the grid result only approaches the closed
    // form as the sample rate grows; check both the level and the trend.
    fn cepstral_phase_error(fs: f64, n: usize) -> f64 {
        let m = default_medium();
        let mut c: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(-0.5 * m.optical_depth(fft::bin_frequency(k, n, fs)), 0.0))
            .collect();
        fft::inverse(&mut c);
        for (i, z) in c.iter_mut().enumerate() {
            if i == 0 || i == n / 2 {
                continue;
            }
            *z = if i < n / 2 { *z * 2.0 } else { Complex64::new(0.0, 0.0) };
        }
        fft::forward(&mut c);
        let mut worst: f64 = 0.0;
        for (k, z) in c.iter().enumerate() {
            let f = fft::bin_frequency(k, n, fs);
            if f.abs() < 2e6 {
                worst = worst.max((z.im - m.minimum_phase(f)).abs());
            }
        }
        worst
    }

    #[test]
    fn minimum_phase_matches_discrete_hilbert_transform() {
        let coarse = cepstral_phase_error(40e6, 1 << 16);
        let fine = cepstral_phase_error(400e6, 1 << 20);
        assert!(fine < 1e-4, "max phase deviation {fine}");
        assert!(coarse / fine > 50.0, "no convergence: {coarse} -> {fine}");
    }

    fn acausal_fraction(fs: f64, n: usize) -> f64 {
        let m = build_medium(200e3, 0.5, 6.0, 0.0).unwrap();
        let mut h: Vec<Complex64> = (0..n)
            .map(|k| {
                let f = fft::bin_frequency(k, n, fs);
                Complex64::from_polar(m.amplitude(f), m.minimum_phase(f))
            })
            .collect();
        fft::inverse(&mut h);
        let total: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        let acausal: f64 = h[n / 2..].iter().map(|z| z.norm_sqr()).sum();
        acausal / total
    }

    #[test]
    fn minimum_phase_part_is_causal() {
        // residual acausal energy is Nyquist-edge ringing that vanishes with the grid spacing
        let coarse = acausal_fraction(20e6, 1 << 15);
        let fine = acausal_fraction(400e6, 1 << 18);
        assert!(fine < 1e-6, "acausal fraction {fine}");
        assert!(coarse / fine > 20.0, "no convergence: {coarse} -> {fine}");
    }

    #[test]
    fn transmission_scan_recovers_fwhm() {
        let m = default_medium();
        let grid = detuning_grid(500e3, 2001);
        let curve = scan_transmission(&m, &grid).unwrap();
        let fwhm = extract_fwhm(&curve).unwrap();
        assert!((fwhm - 200e3).abs() < 0.01 * 200e3);
        let imax = curve
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap()
            .0;
        assert_eq!(curve[imax].0, 0.0);
        for i in 0..curve.len() {
            let j = curve.len() - 1 - i;
            assert!((curve[i].1 - curve[j].1).abs() < 1e-14);
        }
    }

    #[test]
    fn scan_errors() {
        let m = default_medium();
        assert!(scan_transmission(&m, &detuning_grid(300e3, 101)).is_err());
        let coarse = scan_transmission(&m, &detuning_grid(1e6, 11)).unwrap();
        assert!(matches!(extract_fwhm(&coarse), Err(Error::WindowNotResolved(_))));
    }

    #[test]
    fn propagation_preconditions() {
        let m = default_medium();
        let slow = gen_coherent(1e6, 1e-3).unwrap();
        assert!(matches!(propagate(&slow, &m, true), Err(Error::Aliasing { .. })));
        let short = gen_coherent(1e7, 3e-6).unwrap();
        assert!(matches!(propagate(&short, &m, true), Err(Error::RecordTooShort(_))));
    }

    #[test]
    fn coupling_off_is_opaque() {
        let m = default_medium();
        let rec = gen_coherent(1e7, 1e-4).unwrap();
        let out = propagate(&rec, &m, false).unwrap();
        let t = (-6.0f64).exp();
        assert!(out.intensity().iter().all(|&i| (i - t).abs() < 1e-15));
    }

    #[test]
    fn pure_delay_moves_a_pulse() {
        let m = build_medium(200e3, 1.0, 0.0, 1e-6).unwrap();
        let rec = shape_pulse(&gen_coherent(1e7, 2e-5).unwrap(), 5e-6, 2e-6, 0.0).unwrap();
        let out = propagate(&rec, &m, true).unwrap();
        for i in 0..out.len() {
            let expected = if (60..80).contains(&i) { 1.0 } else { 0.0 };
            assert!((out.samples[i].re - expected).abs() < 1e-9, "sample {i}");
        }
    }

    #[test]
    fn guard_padding_suppresses_wrap_around() {
        // a pulse right at the end of the record: whatever the filter pushes
        // past the end must not reappear at the start
        let m = default_medium();
        let fs = 1e7;
        let rec = shape_pulse(&gen_coherent(fs, 2e-4).unwrap(), 1.9e-4, 1e-5, 1e-6).unwrap();
        let out = propagate(&rec, &m, true).unwrap();
        let total = filtered_energy(&rec, &m).unwrap();
        let early = out.window_energy(0.0, 1.5e-4);
        assert!(early / total < 1e-8, "wrapped fraction {}", early / total);
    }

    #[test]
    fn parseval_consistency() {
        let m = default_medium();
        let rec = shape_pulse(
            &gen_chaotic_eom(1e5, 1e7, 1e-3, 3).unwrap(),
            3e-4,
            2e-6,
            1e-7,
        )
        .unwrap();
        let out = propagate(&rec, &m, true).unwrap();
        let predicted = filtered_energy(&rec, &m).unwrap();
        assert!((out.energy() - predicted).abs() < 1e-6 * predicted);
        assert!(out.energy() <= rec.energy());
    }

    fn pulse(fs: f64, seed: u64) -> FieldRecord {
        let base = gen_chaotic_eom(2e5, fs, 5e-4, seed).unwrap();
        shape_pulse(&base, 2e-4, 5e-6, 5e-7).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn passive_for_any_window(peak in 0.05f64..1.0, extra_od in 0.8f64..12.0,
                                  fwhm in 5e4f64..5e5, tau in 0.0f64..3e-6, seed in 0u64..1000) {
            let od = -peak.ln() + extra_od;
            let m = build_medium(fwhm, peak, od, tau).unwrap();
            let grid = detuning_grid(5.0 * fwhm, 501);
            prop_assert!(m.response(&grid).amplitude.iter().all(|&a| a <= 1.0));
            let rec = pulse(1e7, seed);
            let out = propagate(&rec, &m, true).unwrap();
            prop_assert!(out.energy() <= rec.energy() * (1.0 + 1e-12));
        }

        #[test]
        fn propagation_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, s1 in 0u64..500, s2 in 500u64..1000) {
            let m = build_medium(200e3, 0.5, 6.0, 1e-6).unwrap();
            let e1 = pulse(1e7, s1);
            let e2 = pulse(1e7, s2);
            let mix = e1.with_samples(e1.samples.iter().zip(&e2.samples).map(|(x, y)| x * a + y * b).collect());
            let lhs = propagate(&mix, &m, true).unwrap();
            let o1 = propagate(&e1, &m, true).unwrap();
            let o2 = propagate(&e2, &m, true).unwrap();
            for ((l, x), y) in lhs.samples.iter().zip(&o1.samples).zip(&o2.samples) {
                prop_assert!((l - (x * a + y * b)).norm() < 1e-12);
            }
        }
    }
}
