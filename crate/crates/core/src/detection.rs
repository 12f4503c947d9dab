//! Measurement chain: the HBT intensity correlator and gated photon counting.
//!
//! Photon counts follow the semiclassical photodetection formula: in each
//! gate the count is Poisson with mean `W = eta * flux * integral |E|^2 dt`,
//! averaged over the field fluctuations. Dark counts are superposed and the
//! event times, uniform within the gate, pass through a non-paralyzable
//! dead-time filter.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::FieldRecord;
use crate::io::parse_numeric_csv;
use crate::rng::{child_seed, rng_from_seed};
use crate::special::binomial_sf;

/// Gate window within each repetition cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub start: f64,
    pub width: f64,
    /// Cycle repetition period; gate `k` opens at `start + k * period`.
    pub period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dead_time: f64,
    pub dark_rate: f64,
    pub gate: Gate,
}

impl DetectorParams {
    /// Roughly an SPCM-AQ4C: 50 ns dead time, 400 Hz dark counts.
    pub fn single_photon_counter(gate: Gate) -> Self {
        DetectorParams {
            efficiency: 1.0,
            dead_time: 50e-9,
            dark_rate: 400.0,
            gate,
        }
    }

    pub fn ideal(gate: Gate) -> Self {
        DetectorParams {
            efficiency: 1.0,
            dead_time: 0.0,
            dark_rate: 0.0,
            gate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid(format!("efficiency must lie in (0, 1], got {}", self.efficiency)));
        }
        if !(self.dead_time >= 0.0 && self.dead_time.is_finite()) {
            return Err(Error::invalid(format!("dead_time must be >= 0, got {}", self.dead_time)));
        }
        if !(self.dark_rate >= 0.0 && self.dark_rate.is_finite()) {
            return Err(Error::invalid(format!("dark_rate must be >= 0, got {}", self.dark_rate)));
        }
        let g = &self.gate;
        if !(g.width > self.dead_time && g.width.is_finite()) {
            return Err(Error::invalid(format!(
                "gate width {:e} s must exceed the dead time {:e} s",
                g.width, self.dead_time
            )));
        }
        if !(g.start >= 0.0) || !(g.period >= g.start + g.width) {
            return Err(Error::invalid(format!(
                "gate [{:e}, {:e}] s must fit inside the {:e} s cycle",
                g.start,
                g.start + g.width,
                g.period
            )));
        }
        Ok(())
    }

    pub fn response(&self) -> DetectorResponse {
        DetectorResponse::new(self.dead_time / self.gate.width, self.dark_rate * self.gate.width)
    }
}

/// Per-cycle photon counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub counts: Vec<u32>,
    pub params: DetectorParams,
    pub cycles: usize,
}

impl CountRecord {
    pub fn new(counts: Vec<u32>, params: DetectorParams) -> Self {
        let cycles = counts.len();
        CountRecord { counts, params, cycles }
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().map(|&c| c as f64).sum::<f64>() / self.cycles.max(1) as f64
    }

    /// One count per line under a `count` header.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(3 * self.counts.len() + 8);
        s.push_str("count\n");
        for c in &self.counts {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }

    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({ "cycles": self.cycles, "params": self.params })
    }

    pub fn from_files(csv_path: &Path, csv: &str, sidecar: &str) -> Result<CountRecord> {
        let bad = |reason: String| Error::Format {
            path: csv_path.to_path_buf(),
            reason,
        };
        #[derive(Deserialize)]
        struct Sidecar {
            cycles: usize,
            params: DetectorParams,
        }
        let meta: Sidecar = serde_json::from_str(sidecar).map_err(|e| bad(format!("sidecar: {e}")))?;
        let mut counts = Vec::new();
        for (i, line) in csv.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            counts.push(line.parse::<u32>().map_err(|e| bad(format!("line {}: {e}", i + 1)))?);
        }
        if counts.len() != meta.cycles {
            return Err(bad(format!("{} counts but sidecar says {} cycles", counts.len(), meta.cycles)));
        }
        Ok(CountRecord::new(counts, meta.params))
    }
}

/// Exact forward model of the counting electronics for events that are
/// uniform within the gate: dark counts plus non-paralyzable dead time.
///
/// For `n` uniform events in a gate with dead-time fraction `delta`, the
/// number registered satisfies `P(M >= k | n) = P(Binomial(n, 1 - (k-1) delta) >= k)`,
/// which follows from the renewal structure of the registered events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorResponse {
    /// dead time / gate width
    pub dead_fraction: f64,
    /// mean dark counts per gate
    pub dark_mean: f64,
}

impl DetectorResponse {
    pub fn new(dead_fraction: f64, dark_mean: f64) -> Self {
        DetectorResponse {
            dead_fraction,
            dark_mean,
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.dead_fraction == 0.0 && self.dark_mean == 0.0
    }

    /// Largest number of events the gate can register.
    pub fn max_registered(&self) -> usize {
        if self.dead_fraction <= 0.0 {
            usize::MAX
        } else {
            // need (k - 1) * delta < 1
            ((1.0 / self.dead_fraction) - 1e-12).floor() as usize + 1
        }
    }

    /// `P(M >= k | n events)`.
    pub fn registered_at_least(&self, k: usize, n: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let c = 1.0 - (k - 1) as f64 * self.dead_fraction;
        if c <= 0.0 {
            return 0.0;
        }
        binomial_sf(k, n, c)
    }

    /// `A[m][n] = P(M = m | n events)` for `m, n <= n_max`.
    pub fn transition_matrix(&self, n_max: usize) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n_max + 1]; n_max + 1];
        for n in 0..=n_max {
            let mut upper = self.registered_at_least(0, n);
            for (m, row) in a.iter_mut().enumerate().take(n + 1) {
                let next = self.registered_at_least(m + 1, n);
                row[n] = (upper - next).max(0.0);
                upper = next;
            }
        }
        a
    }

    fn dark_pmf(&self, n_max: usize) -> Vec<f64> {
        let d = self.dark_mean;
        let mut p = vec![0.0; n_max + 1];
        p[0] = (-d).exp();
        for n in 1..=n_max {
            p[n] = p[n - 1] * d / n as f64;
        }
        p
    }

    /// Distribution of registered counts given the distribution of signal
    /// photoelectrons in the gate.
    pub fn registered_pmf(&self, signal: &[f64]) -> Vec<f64> {
        if signal.is_empty() {
            return Vec::new();
        }
        let n_max = signal.len() - 1 + self.dark_extra();
        let dark = self.dark_pmf(n_max);
        let mut total = vec![0.0; n_max + 1];
        for (i, &ps) in signal.iter().enumerate() {
            for (j, &pd) in dark.iter().enumerate().take(n_max + 1 - i) {
                total[i + j] += ps * pd;
            }
        }
        if self.dead_fraction == 0.0 {
            return total;
        }
        let a = self.transition_matrix(n_max);
        (0..=n_max)
            .map(|m| (m..=n_max).map(|n| a[m][n] * total[n]).sum())
            .collect()
    }

    fn dark_extra(&self) -> usize {
        if self.dark_mean == 0.0 {
            0
        } else {
            (self.dark_mean * 10.0).ceil() as usize + 8
        }
    }

    /// Inverts the electronics: signal photoelectron distribution from the
    /// registered-count distribution. Assumes no signal mass beyond the
    /// largest registered count.
    pub fn deconvolve(&self, registered: &[f64]) -> Vec<f64> {
        let n_max = registered.len().saturating_sub(1);
        let total = if self.dead_fraction == 0.0 {
            registered.to_vec()
        } else {
            let a = self.transition_matrix(n_max);
            let mut p = vec![0.0; n_max + 1];
            for m in (0..=n_max).rev() {
                let above: f64 = (m + 1..=n_max).map(|n| a[m][n] * p[n]).sum();
                p[m] = (registered[m] - above) / a[m][m];
            }
            p
        };
        if self.dark_mean == 0.0 {
            return total;
        }
        // divide the generating function by exp(D (z - 1))
        let d = self.dark_mean;
        let mut inv = vec![0.0; n_max + 1];
        inv[0] = d.exp();
        for j in 1..=n_max {
            inv[j] = inv[j - 1] * (-d) / j as f64;
        }
        (0..=n_max)
            .map(|n| (0..=n).map(|j| inv[j] * total[n - j]).sum())
            .collect()
    }

    /// Expected registered count when the events in the gate are Poisson
    /// with mean `signal_mean` (plus dark counts).
    pub fn mean_registered(&self, signal_mean: f64) -> f64 {
        let mu = signal_mean + self.dark_mean;
        if self.dead_fraction == 0.0 {
            return mu;
        }
        if mu <= 0.0 {
            return 0.0;
        }
        // E[M] = sum_k P(M >= k), and P(M >= k) = P(Poisson(mu (1 - (k-1) delta)) >= k)
        let mut sum = 0.0;
        for k in 1..=self.max_registered() {
            let c = 1.0 - (k - 1) as f64 * self.dead_fraction;
            let p = statrs::function::gamma::gamma_lr(k as f64, mu * c);
            sum += p;
            if p < 1e-16 {
                break;
            }
        }
        sum
    }
}

/// Non-paralyzable dead time applied to sorted event times.
pub fn register_events(sorted_times: &[f64], dead_time: f64) -> u32 {
    let mut count = 0;
    let mut ready_at = f64::NEG_INFINITY;
    for &t in sorted_times {
        if t >= ready_at {
            count += 1;
            ready_at = t + dead_time;
        }
    }
    count
}

/// Samples the registered count of one gate given the mean signal count `w`.
pub fn sample_gate<R: Rng>(w: f64, params: &DetectorParams, rng: &mut R) -> u32 {
    let t = params.gate.width;
    let signal = poisson_draw(w, rng);
    let dark = poisson_draw(params.dark_rate * t, rng);
    let n = signal + dark;
    if params.dead_time <= 0.0 || n < 2 {
        return n as u32;
    }
    let mut times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * t).collect();
    times.sort_by(f64::total_cmp);
    register_events(&times, params.dead_time)
}

fn poisson_draw<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    d.sample(rng) as u64
}

/// `integral |E|^2 dt` over the gate of each cycle (envelope units times s).
pub fn gate_integrals(field: &FieldRecord, gate: &Gate, cycles: usize) -> Result<Vec<f64>> {
    if cycles == 0 {
        return Err(Error::invalid("cycles must be >= 1"));
    }
    let last_end = gate.start + (cycles - 1) as f64 * gate.period + gate.width;
    if gate.start < 0.0 || last_end > field.duration() * (1.0 + 1e-12) {
        return Err(Error::WindowOutsideRecord {
            start: gate.start,
            end: last_end,
            duration: field.duration(),
        });
    }
    Ok((0..cycles)
        .map(|k| {
            let a = gate.start + k as f64 * gate.period;
            field.window_energy(a, a + gate.width)
        })
        .collect())
}

/// Counts from precomputed gate integrals. Cycle `k` uses sub-seed
/// `child_seed(seed, k)`.
pub fn count_cycles(integrals: &[f64], mean_flux: f64, params: &DetectorParams, seed: u64) -> Result<CountRecord> {
    params.validate()?;
    if !(mean_flux >= 0.0 && mean_flux.is_finite()) {
        return Err(Error::invalid(format!("mean_flux must be >= 0, got {mean_flux}")));
    }
    let scale = params.efficiency * mean_flux;
    let counts: Vec<u32> = integrals
        .par_iter()
        .enumerate()
        .map(|(k, &integral)| {
            let mut rng = rng_from_seed(child_seed(seed, k as u64));
            sample_gate(scale * integral, params, &mut rng)
        })
        .collect();
    Ok(CountRecord::new(counts, *params))
}

/// Gated photon counting over `cycles` repetitions of the gate in `field`.
pub fn photocount(
    field: &FieldRecord,
    mean_flux: f64,
    params: &DetectorParams,
    cycles: usize,
    seed: u64,
) -> Result<CountRecord> {
    params.validate()?;
    let integrals = gate_integrals(field, &params.gate, cycles)?;
    if let Some(m) = mode_number(field, params.gate.width) {
        if m > 1.2 {
            log::warn!(
                "gate of {:e} s spans ~{m:.2} coherence times; counts will not be single-mode Bose-Einstein",
                params.gate.width
            );
        }
    }
    count_cycles(&integrals, mean_flux, params, seed)
}

/// `T / tau_coh` for a chaotic record, with `tau_coh` the integral of the
/// excess intensity correlation. `None` when the record shows no
/// chaotic intensity fluctuations.
pub fn mode_number(field: &FieldRecord, gate_width: f64) -> Option<f64> {
    let intensity = field.intensity();
    let n = intensity.len();
    let mean = intensity.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return None;
    }
    let var = intensity.iter().map(|i| (i - mean).powi(2)).sum::<f64>() / n as f64;
    if var / (mean * mean) < 0.5 {
        return None;
    }
    let max_lag = (n / 8).max(1);
    let ac: Vec<Complex64> = intensity.iter().map(|&i| Complex64::new(i - mean, 0.0)).collect();
    let r = crate::spectrum::autocorrelation(&ac, max_lag);
    let norm = mean * mean;
    let mut tau = r[0].re / norm;
    for z in &r[1..] {
        let v = z.re / norm;
        if v <= 0.0 {
            break;
        }
        tau += 2.0 * v;
    }
    let tau_coh = tau * field.dt();
    (tau_coh > 0.0).then(|| gate_width / tau_coh)
}

/// Detector efficiency that yields `target_mean` registered counts per cycle,
/// averaged over every full cycle in `field`.
pub fn mean_rate_calibrate(target_mean: f64, field: &FieldRecord, params: &DetectorParams) -> Result<f64> {
    params.validate()?;
    let g = &params.gate;
    let cycles = ((field.duration() - g.start - g.width) / g.period + 1e-9).floor() as i64 + 1;
    if cycles < 1 {
        return Err(Error::WindowOutsideRecord {
            start: g.start,
            end: g.start + g.width,
            duration: field.duration(),
        });
    }
    let integrals = gate_integrals(field, g, cycles as usize)?;
    calibrate_efficiency(target_mean, &integrals, field.mean_flux, params)
}

/// Bisection on the exact Poisson-mixture mean, including dark counts and dead time.
pub fn calibrate_efficiency(target_mean: f64, integrals: &[f64], mean_flux: f64, params: &DetectorParams) -> Result<f64> {
    if !(target_mean > 0.0 && target_mean.is_finite()) {
        return Err(Error::invalid(format!("target mean must be positive, got {target_mean}")));
    }
    if integrals.is_empty() {
        return Err(Error::invalid("no cycles to calibrate on"));
    }
    let response = params.response();
    let mean_at = |eta: f64| {
        integrals
            .iter()
            .map(|&w| response.mean_registered(eta * mean_flux * w))
            .sum::<f64>()
            / integrals.len() as f64
    };
    let floor = mean_at(0.0);
    let ceiling = mean_at(1.0);
    if target_mean <= floor {
        return Err(Error::Unreachable(format!(
            "dark counts alone give {floor:.4e} counts per cycle, above the target {target_mean}"
        )));
    }
    if target_mean > ceiling {
        return Err(Error::Unreachable(format!(
            "unit efficiency gives only {ceiling:.4e} counts per cycle, below the target {target_mean}"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Photocurrent trace of one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrace {
    pub values: Vec<f64>,
    pub sample_rate: f64,
}

/// Options for the HBT photodetectors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HbtOptions {
    /// rms of additive Gaussian detector noise, in envelope intensity units
    pub noise_rms: f64,
    /// single-pole detector bandwidth (Hz); `None` for an ideal detector
    pub bandwidth: Option<f64>,
}

/// 50/50 beam splitter followed by two photocurrent detectors.
pub fn hbt_split(field: &FieldRecord, detector_noise_rms: f64, seed: u64) -> (IntensityTrace, IntensityTrace) {
    let opts = HbtOptions {
        noise_rms: detector_noise_rms,
        bandwidth: None,
    };
    hbt_arms(field, field, &opts, seed)
}

/// Two detectors looking at half of `arm1` and half of `arm2` respectively,
/// e.g. the probe before and after the medium.
pub fn hbt_arms(
    arm1: &FieldRecord,
    arm2: &FieldRecord,
    opts: &HbtOptions,
    seed: u64,
) -> (IntensityTrace, IntensityTrace) {
    let detect = |field: &FieldRecord, arm_seed: u64| {
        let mut values: Vec<f64> = field.samples.iter().map(|z| 0.5 * z.norm_sqr()).collect();
        if let Some(bw) = opts.bandwidth {
            // first-order low pass, alpha = dt / (RC + dt)
            let rc = 1.0 / (2.0 * std::f64::consts::PI * bw);
            let alpha = field.dt() / (rc + field.dt());
            let mut y = values[0];
            for v in values.iter_mut() {
                y += alpha * (*v - y);
                *v = y;
            }
        }
        if opts.noise_rms > 0.0 {
            let mut rng = rng_from_seed(arm_seed);
            let normal = Normal::new(0.0, opts.noise_rms).expect("finite noise rms");
            for v in values.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        IntensityTrace {
            values,
            sample_rate: field.sample_rate,
        }
    };
    (detect(arm1, child_seed(seed, 1)), detect(arm2, child_seed(seed, 2)))
}

/// Normalised intensity cross-correlation on a symmetric lag grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTrace {
    pub tau_grid: Vec<f64>,
    /// `g2(tau) - 1`, or peak-normalised values when `normalization_flag` is set
    pub values: Vec<f64>,
    pub normalization_flag: bool,
}

impl CorrelationTrace {
    pub fn peak(&self) -> (f64, f64) {
        self.tau_grid
            .iter()
            .zip(&self.values)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(&t, &v)| (t, v))
            .unwrap_or((0.0, 0.0))
    }

    /// Rescaled so that the maximum is one.
    pub fn normalized(&self) -> CorrelationTrace {
        let (_, p) = self.peak();
        let scale = if p != 0.0 { 1.0 / p } else { 1.0 };
        CorrelationTrace {
            tau_grid: self.tau_grid.clone(),
            values: self.values.iter().map(|v| v * scale).collect(),
            normalization_flag: true,
        }
    }

    pub fn value_at(&self, tau: f64) -> Option<f64> {
        let i = self
            .tau_grid
            .iter()
            .position(|&t| (t - tau).abs() <= 1e-12 * (1.0 + tau.abs()))?;
        Some(self.values[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_s,value\n");
        for (t, v) in self.tau_grid.iter().zip(&self.values) {
            s.push_str(&format!("{t:e},{v:e}\n"));
        }
        s
    }

    pub fn from_csv(path: &Path, text: &str) -> Result<CorrelationTrace> {
        let rows = parse_numeric_csv(path, text, 2)?;
        Ok(CorrelationTrace {
            tau_grid: rows.iter().map(|r| r[0]).collect(),
            values: rows.iter().map(|r| r[1]).collect(),
            normalization_flag: false,
        })
    }
}

/// `<dI1(t) dI2(t + tau)> / (<I1><I2>)` for `|tau| <= max_tau`.
///
/// `dI` are the AC components about the record means. Each lag is averaged
/// over its own overlap length, so there is no triangular bias.
pub fn cross_correlate(i1: &IntensityTrace, i2: &IntensityTrace, max_tau: f64) -> Result<CorrelationTrace> {
    if i1.values.len() != i2.values.len() {
        return Err(Error::MismatchedRecords(format!(
            "lengths {} and {}",
            i1.values.len(),
            i2.values.len()
        )));
    }
    if (i1.sample_rate - i2.sample_rate).abs() > 1e-12 * i1.sample_rate {
        return Err(Error::MismatchedRecords(format!(
            "sample rates {} and {} Hz",
            i1.sample_rate, i2.sample_rate
        )));
    }
    let n = i1.values.len();
    let max_lag = (max_tau * i1.sample_rate).round() as usize;
    if !(max_tau >= 0.0) || max_lag >= n / 2 {
        return Err(Error::invalid(format!(
            "max_tau {max_tau:e} s must be well below the record duration {:e} s",
            n as f64 / i1.sample_rate
        )));
    }
    let mean1 = i1.values.iter().sum::<f64>() / n as f64;
    let mean2 = i2.values.iter().sum::<f64>() / n as f64;
    let norm = mean1 * mean2;
    if !(norm > 0.0) {
        return Err(Error::invalid("mean intensities must be positive"));
    }
    let m = fft::good_size(n + max_lag + 1);
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        a[i] = Complex64::new(i1.values[i] - mean1, 0.0);
        b[i] = Complex64::new(i2.values[i] - mean2, 0.0);
    }
    fft::forward(&mut a);
    fft::forward(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x = x.conj() * y;
    }
    // IFFT(conj(A) B)[k] = sum_t dI1(t) dI2(t + k)
    fft::inverse(&mut a);
    let lag_value = |k: i64| {
        let idx = if k >= 0 { k as usize } else { m - (-k) as usize };
        a[idx].re / (n - k.unsigned_abs() as usize) as f64 / norm
    };
    let lags = -(max_lag as i64)..=(max_lag as i64);
    let dt = 1.0 / i1.sample_rate;
    Ok(CorrelationTrace {
        tau_grid: lags.clone().map(|k| k as f64 * dt).collect(),
        values: lags.map(lag_value).collect(),
        normalization_flag: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::{gen_chaotic_gaussian, gen_coherent, SpectralShape};
    use proptest::prelude::*;
    use rand::Rng;

    fn gate() -> Gate {
        Gate {
            start: 1e-6,
            width: 2e-6,
            period: 10e-6,
        }
    }

    #[test]
    fn params_validation() {
        let mut p = DetectorParams::single_photon_counter(gate());
        assert!(p.validate().is_ok());
        p.efficiency = 0.0;
        assert!(p.validate().is_err());
        p.efficiency = 1.0;
        p.dead_time = 3e-6;
        assert!(p.validate().is_err());
        p.dead_time = 0.0;
        p.gate.period = 2e-6;
        assert!(p.validate().is_err());
    }

    #[test]
    fn dead_time_registration() {
        assert_eq!(register_events(&[], 1.0), 0);
        assert_eq!(register_events(&[0.0, 1.0, 1.5, 2.4], 1.0), 3);
        assert_eq!(register_events(&[0.0, 1.0, 1.5, 2.4], 1.2), 2);
        assert_eq!(register_events(&[0.0, 0.1, 0.2], 0.0), 3);
    }

    #[test]
    fn transition_matrix_columns_are_distributions() {
        let r = DetectorResponse::new(0.025, 0.0);
        let a = r.transition_matrix(30);
        for n in 0..=30 {
            let col: f64 = (0..=30).map(|m| a[m][n]).sum();
            assert!((col - 1.0).abs() < 1e-12, "column {n}: {col}");
            assert!((0..=30).all(|m| a[m][n] >= -1e-15));
        }
        // two events lose one with probability 2 delta - delta^2
        assert!((a[1][2] - (0.05 - 0.025f64.powi(2))).abs() < 1e-13);
        // no loss among n events: (1 - (n-1) delta)^n
        assert!((a[5][5] - (1.0 - 4.0 * 0.025f64).powi(5)).abs() < 1e-13);
    }

    #[test]
    fn transition_matrix_matches_monte_carlo() {
        let delta = 0.1;
        let r = DetectorResponse::new(delta, 0.0);
        let a = r.transition_matrix(6);
        let mut rng = rng_from_seed(8);
        let trials = 200_000;
        let mut hist = [0usize; 7];
        for _ in 0..trials {
            let mut t: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            t.sort_by(f64::total_cmp);
            hist[register_events(&t, delta) as usize] += 1;
        }
        for m in 0..=6 {
            let p = hist[m] as f64 / trials as f64;
            let se = (a[m][6] * (1.0 - a[m][6]) / trials as f64).sqrt().max(1e-6);
            assert!((p - a[m][6]).abs() < 4.0 * se, "m={m}: {p} vs {}", a[m][6]);
        }
    }

    #[test]
    fn deconvolution_inverts_forward_model() {
        let r = DetectorResponse::new(0.025, 8e-4);
        let signal: Vec<f64> = (0..25).map(|n| 0.5f64.powi(n + 1)).collect();
        let reg = r.registered_pmf(&signal);
        let back = r.deconvolve(&reg);
        for n in 0..20 {
            assert!((back[n] - signal[n]).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn mean_registered_matches_forward_model() {
        let r = DetectorResponse::new(0.025, 8e-4);
        let mu: f64 = 1.3;
        let signal: Vec<f64> = (0..60)
            .map(|n| (-mu + n as f64 * mu.ln() - crate::special::ln_factorial(n)).exp())
            .collect();
        let reg = r.registered_pmf(&signal);
        let mean: f64 = reg.iter().enumerate().map(|(m, p)| m as f64 * p).sum();
        assert!((mean - r.mean_registered(mu)).abs() < 1e-9);
        assert!(DetectorResponse::new(0.0, 0.0).mean_registered(mu) == mu);
    }

    #[test]
    fn dark_counts_only() {
        let params = DetectorParams {
            efficiency: 1.0,
            dead_time: 0.0,
            dark_rate: 400.0,
            gate: Gate {
                start: 0.0,
                width: 2e-6,
                period: 2e-6,
            },
        };
        let rec = count_cycles(&vec![0.0; 400_000], 0.0, &params, 1).unwrap();
        let mean = rec.mean();
        // expected 8e-4, standard error sqrt(8e-4 / 4e5) = 4.5e-5
        assert!((mean - 8e-4).abs() < 3.0 * 4.5e-5, "{mean}");
    }

    #[test]
    fn gate_outside_record_is_rejected() {
        let rec = gen_coherent(1e7, 20e-6).unwrap();
        let p = DetectorParams::ideal(gate());
        assert!(photocount(&rec, 1e6, &p, 2, 1).is_ok());
        assert!(matches!(photocount(&rec, 1e6, &p, 3, 1), Err(Error::WindowOutsideRecord { .. })));
    }

    #[test]
    fn calibration_closed_form_for_coherent_light() {
        let rec = gen_coherent(1e7, 100e-6).unwrap();
        let mut p = DetectorParams::ideal(gate());
        let mut rec = rec;
        rec.mean_flux = 2e6;
        let eta = mean_rate_calibrate(1.0, &rec, &p).unwrap();
        // eta * flux * T = 1
        assert!((eta * 2e6 * 2e-6 - 1.0).abs() < 1e-9);
        rec.mean_flux = 4e6;
        let eta2 = mean_rate_calibrate(1.0, &rec, &p).unwrap();
        assert!((eta2 - 0.5 * eta).abs() < 1e-12);
        p.dark_rate = 1e9;
        assert!(matches!(mean_rate_calibrate(1.0, &rec, &p), Err(Error::Unreachable(_))));
        p.dark_rate = 0.0;
        assert!(matches!(mean_rate_calibrate(100.0, &rec, &p), Err(Error::Unreachable(_))));
    }

    #[test]
    fn calibration_is_statistics_independent() {
        let p = DetectorParams::ideal(Gate {
            start: 0.0,
            width: 2e-6,
            period: 20e-6,
        });
        let mut chaotic = gen_chaotic_gaussian(SpectralShape::gaussian(104e3), 5e6, 0.05, 3).unwrap();
        chaotic.mean_flux = 1e6;
        let integrals = gate_integrals(&chaotic, &p.gate, 2000).unwrap();
        let eta = calibrate_efficiency(1.0, &integrals, 1e6, &p).unwrap();
        let mean_w: f64 = integrals.iter().sum::<f64>() / integrals.len() as f64;
        assert!((eta * 1e6 * mean_w - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_arms_without_noise() {
        let rec = gen_chaotic_gaussian(SpectralShape::gaussian(1e5), 4e6, 0.01, 5).unwrap();
        let (a, b) = hbt_split(&rec, 0.0, 1);
        assert_eq!(a, b);
        assert!((a.values[7] - 0.5 * rec.samples[7].norm_sqr()).abs() < 1e-15);
    }

    #[test]
    fn detector_bandwidth_smooths() {
        let rec = gen_chaotic_gaussian(SpectralShape::gaussian(1e5), 4e6, 0.01, 5).unwrap();
        let opts = HbtOptions {
            noise_rms: 0.0,
            bandwidth: Some(5e4),
        };
        let (a, _) = hbt_arms(&rec, &rec, &opts, 1);
        let (raw, _) = hbt_split(&rec, 0.0, 1);
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        assert!(var(&a.values) < var(&raw.values));
    }

    #[test]
    fn constant_intensity_gives_zero_trace() {
        let rec = gen_coherent(1e6, 1e-2).unwrap();
        let (a, b) = hbt_split(&rec, 0.0, 1);
        let tr = cross_correlate(&a, &b, 1e-4).unwrap();
        assert!(tr.values.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(tr.tau_grid.len(), 201);
        assert_eq!(tr.tau_grid[100], 0.0);
    }

    #[test]
    fn coherent_light_with_detector_noise_is_uncorrelated() {
        let rec = gen_coherent(1e6, 0.2).unwrap();
        let (a, b) = hbt_split(&rec, 0.05, 3);
        let tr = cross_correlate(&a, &b, 1e-4).unwrap();
        // independent noise: per-lag standard error ~ 0.05^2 / 0.25 / sqrt(2e5)
        assert!(tr.values.iter().all(|v| v.abs() < 5e-4));
    }

    #[test]
    fn cosine_modulation_oracle() {
        let fs = 1e6;
        let f = 1e3;
        let n = 200_000;
        let values: Vec<f64> = (0..n)
            .map(|i| 1.0 + (2.0 * std::f64::consts::PI * f * i as f64 / fs).cos())
            .collect();
        let t = IntensityTrace { values, sample_rate: fs };
        let tr = cross_correlate(&t, &t, 2e-3).unwrap();
        let rms = (tr
            .tau_grid
            .iter()
            .zip(&tr.values)
            .map(|(tau, v)| (v - 0.5 * (2.0 * std::f64::consts::PI * f * tau).cos()).powi(2))
            .sum::<f64>()
            / tr.values.len() as f64)
            .sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn mismatched_records_are_rejected() {
        let a = IntensityTrace {
            values: vec![1.0; 100],
            sample_rate: 1.0,
        };
        let b = IntensityTrace {
            values: vec![1.0; 99],
            sample_rate: 1.0,
        };
        assert!(matches!(cross_correlate(&a, &b, 5.0), Err(Error::MismatchedRecords(_))));
        let c = IntensityTrace {
            values: vec![1.0; 100],
            sample_rate: 2.0,
        };
        assert!(matches!(cross_correlate(&a, &c, 5.0), Err(Error::MismatchedRecords(_))));
        assert!(cross_correlate(&a, &a, 60.0).is_err());
    }

    #[test]
    fn count_record_files_round_trip() {
        let p = DetectorParams::single_photon_counter(gate());
        let rec = CountRecord::new(vec![0, 3, 1, 7], p);
        let back = CountRecord::from_files(
            Path::new("c.csv"),
            &rec.to_csv(),
            &rec.sidecar_json().to_string(),
        )
        .unwrap();
        assert_eq!(back, rec);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn more_dead_time_never_adds_counts(seed in 0u64..10_000, w in 0.1f64..20.0,
                                            d1 in 0.0f64..5e-7, extra in 0.0f64..5e-7) {
            let base = DetectorParams {
                efficiency: 1.0,
                dead_time: d1,
                dark_rate: 400.0,
                gate: Gate { start: 0.0, width: 2e-6, period: 2e-6 },
            };
            let longer = DetectorParams { dead_time: d1 + extra, ..base };
            let a = count_cycles(&vec![w; 64], 1.0, &base, seed).unwrap();
            let b = count_cycles(&vec![w; 64], 1.0, &longer, seed).unwrap();
            for (x, y) in a.counts.iter().zip(&b.counts) {
                prop_assert!(y <= x);
            }
        }

        #[test]
        fn identical_arms_give_symmetric_traces(seed in 0u64..1000) {
            let rec = gen_chaotic_gaussian(SpectralShape::gaussian(1e5), 4e6, 2e-3, seed).unwrap();
            let (a, b) = hbt_split(&rec, 0.0, seed);
            let tr = cross_correlate(&a, &b, 4e-5).unwrap();
            let n = tr.values.len();
            for i in 0..n {
                prop_assert!((tr.values[i] - tr.values[n - 1 - i]).abs() < 1e-9);
            }
        }
    }
}
