//! Config-driven scenarios chaining source, medium, storage and detection.
//!
//! [`run`] returns a [`Report`] holding every output file in memory together
//! with a JSON summary and the pass/fail checks; [`Report::write`] puts them
//! on disk atomically. Identical configs give byte-identical reports.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Scenario, SourceKind};
use crate::detection::{
    calibrate_efficiency, count_cycles, cross_correlate, gate_integrals, hbt_arms, CorrelationTrace, CountRecord,
    DetectorParams, HbtOptions,
};
use crate::error::{Error, Result};
use crate::fft;
use crate::field::FieldRecord;
use crate::fieldgen::{
    eom_equivalent_sigma, gen_chaotic_eom_with, gen_chaotic_gaussian, gen_coherent, shape_pulse, NoiseSpectrum,
    RECOMMENDED_OVERSAMPLING,
};
use crate::io::write_atomic;
use crate::medium::{detuning_grid, extract_fwhm, propagate, scan_transmission, MediumModel, Propagator};
use crate::rng::{child_seed, rng_from_seed};
use crate::stats::{fit_exponential_decay, fit_gaussian_g2, g2_corrected, g2_from_counts, gof_test, Family, G2Fit};
use crate::storage::{run_sequence_with, PulseSequence, StorageModel};

/// Target size of one generated source chunk, in samples.
const CHUNK_SAMPLES: usize = 1 << 20;
/// Measured g2 of the chaotic and coherent count records, with errors.
pub const MEASURED_G2_CHAOTIC: (f64, f64) = (2.23, 0.132);
pub const MEASURED_G2_COHERENT: (f64, f64) = (0.995, 0.016);
/// Significance level of the goodness-of-fit checks.
pub const GOF_ALPHA: f64 = 0.01;

// seed streams
const SOURCE: u64 = 1;
const DETECT: u64 = 2;
const HBT: u64 = 3;
const ORACLE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: Scenario,
    pub files: Vec<OutputFile>,
    pub results: Value,
    pub checks: Vec<Check>,
    config: Value,
    seed: u64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> Value {
        json!({
            "scenario": self.scenario,
            "seed": self.seed,
            "passed": self.passed(),
            "checks": self.checks,
            "results": self.results,
            "config": self.config,
        })
    }

    /// Writes every file and then `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for f in &self.files {
            write_atomic(&dir.join(&f.name), &f.bytes)?;
        }
        write_atomic(&dir.join("summary.json"), &json_bytes(&self.summary()))
    }

    fn file(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push(OutputFile {
            name: name.into(),
            bytes: bytes.into(),
        });
    }
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable value");
    s.push('\n');
    s.into_bytes()
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("serialisable value")
}

/// The config as it shaped the results; the output location is left out so
/// that reports are identical wherever they are written.
fn echoed_config(cfg: &ExperimentConfig) -> Value {
    let mut v = to_value(cfg);
    if let Some(obj) = v.as_object_mut() {
        obj.remove("output_dir");
    }
    v
}

/// Validates `cfg` and runs its scenario.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    let diagnostics = cfg.validate();
    if !diagnostics.is_empty() {
        let msg: Vec<String> = diagnostics.iter().map(|d| d.to_string()).collect();
        return Err(Error::Config(msg.join("; ")));
    }
    let mut report = Report {
        scenario: cfg.scenario,
        files: Vec::new(),
        results: Value::Null,
        checks: Vec::new(),
        config: echoed_config(cfg),
        seed: cfg.seed,
    };
    match cfg.scenario {
        Scenario::Slowlight => slowlight(cfg, &mut report)?,
        Scenario::Storage => storage(cfg, &mut report)?,
        Scenario::Counting => counting(cfg, &mut report)?,
        Scenario::Calibration => calibration(cfg, &mut report)?,
    }
    Ok(report)
}

/// Generates one record of the configured source.
pub fn generate_source(
    cfg: &ExperimentConfig,
    kind: SourceKind,
    bandwidth: f64,
    sample_rate: f64,
    duration: f64,
    seed: u64,
) -> Result<FieldRecord> {
    let mut rec = match kind {
        SourceKind::Eom => gen_chaotic_eom_with(cfg.source.eom_noise(), bandwidth, sample_rate, duration, seed)?,
        SourceKind::Gaussian | SourceKind::Lorentzian => {
            gen_chaotic_gaussian(kind.shape(bandwidth).expect("chaotic kind"), sample_rate, duration, seed)?
        }
        SourceKind::Coherent => gen_coherent(sample_rate, duration)?,
    };
    rec.mean_flux = cfg.source.mean_flux;
    Ok(rec)
}

/// Runs `per_chunk` over consecutive blocks of whole cycles of a long source
/// record. Chunk `j` is generated from `child_seed(seed, j)`, so results do
/// not depend on the thread count.
fn over_cycles<T: Send>(
    cfg: &ExperimentConfig,
    kind: SourceKind,
    cycles: usize,
    seed: u64,
    per_chunk: impl Fn(&FieldRecord, usize) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let fs = cfg.sample_rate();
    let period = cfg.sequence.cycle_period_s;
    let period_samples = (period * fs).round().max(1.0) as usize;
    let per = (CHUNK_SAMPLES / period_samples).max(1);
    let chunks = cycles.div_ceil(per);
    let parts: Vec<Result<Vec<T>>> = (0..chunks)
        .into_par_iter()
        .map(|j| {
            let count = per.min(cycles - j * per);
            let duration = (count * period_samples) as f64 / fs;
            let rec = generate_source(cfg, kind, cfg.source.bandwidth_hz, fs, duration, child_seed(seed, j as u64))?;
            per_chunk(&rec, count)
        })
        .collect();
    let mut out = Vec::with_capacity(cycles);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Record of cycle `k` within a chunk.
fn cycle_slice(rec: &FieldRecord, k: usize, period_samples: usize) -> FieldRecord {
    rec.with_samples(rec.samples[k * period_samples..(k + 1) * period_samples].to_vec())
}

// ---------------------------------------------------------------- slowlight

/// Expected normalised cross-correlation of the intensities before and after
/// `medium` for a fully chaotic EOM source of noise bandwidth `bandwidth`:
/// `|sum S H e^{2 pi i f tau}|^2 / (sum S * sum S |H|^2)`.
/// `medium = None` gives the autocorrelation of the source.
pub fn expected_cross_correlation(
    spectrum: NoiseSpectrum,
    bandwidth: f64,
    medium: Option<&MediumModel>,
    sample_rate: f64,
    max_tau: f64,
) -> Result<CorrelationTrace> {
    if !(bandwidth > 0.0 && sample_rate > 0.0 && max_tau > 0.0) {
        return Err(Error::invalid("bandwidth, sample rate and max_tau must be positive"));
    }
    let max_lag = (max_tau * sample_rate).round() as usize;
    let n = fft::good_size(
        (1 << 16)
            .max((40.0 * sample_rate / bandwidth).ceil() as usize)
            .max(4 * max_lag + 1),
    );
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let (mut s_in, mut s_out) = (0.0, 0.0);
    for (k, z) in buf.iter_mut().enumerate() {
        let f = fft::bin_frequency(k, n, sample_rate);
        let s = match spectrum {
            NoiseSpectrum::Gaussian => (-4.0 * std::f64::consts::LN_2 * f * f / (bandwidth * bandwidth)).exp(),
            NoiseSpectrum::Flat if f.abs() <= 0.5 * bandwidth => 1.0,
            NoiseSpectrum::Flat => 0.0,
        };
        let h = medium.map_or(Complex64::new(1.0, 0.0), |m| m.transfer(f));
        *z = h * s;
        s_in += s;
        s_out += s * h.norm_sqr();
    }
    fft::inverse(&mut buf);
    // inverse carries 1/n; sum S H e^{...} = n * buf
    let norm = s_in * s_out / (n as f64 * n as f64);
    let lags = -(max_lag as i64)..=(max_lag as i64);
    let dt = 1.0 / sample_rate;
    Ok(CorrelationTrace {
        tau_grid: lags.clone().map(|k| k as f64 * dt).collect(),
        values: lags
            .map(|k| {
                let idx = if k >= 0 { k as usize } else { n - k.unsigned_abs() as usize };
                buf[idx].norm_sqr() / norm
            })
            .collect(),
        normalization_flag: false,
    })
}

/// Noise bandwidth whose transmitted correlation has Gaussian width `target_sigma`.
pub fn input_bandwidth_for(
    target_sigma: f64,
    spectrum: NoiseSpectrum,
    medium: &MediumModel,
    sample_rate: f64,
) -> Result<f64> {
    let sigma_out = |b: f64| -> Result<f64> {
        let max_tau = 5.0 / eom_equivalent_sigma(b);
        Ok(fit_gaussian_g2(&expected_cross_correlation(spectrum, b, Some(medium), sample_rate, max_tau)?)?.sigma)
    };
    let b_max = sample_rate / RECOMMENDED_OVERSAMPLING;
    let mut hi = (target_sigma / eom_equivalent_sigma(1.0)).min(b_max);
    let mut lo = 0.5 * hi;
    while sigma_out(lo)? > target_sigma {
        lo *= 0.5;
        if lo < 1e-6 * hi {
            return Err(Error::Unreachable(format!("no bandwidth narrows the output to {target_sigma:e} Hz")));
        }
    }
    while sigma_out(hi)? < target_sigma {
        if hi >= b_max {
            return Err(Error::Unreachable(format!(
                "transmitted width {target_sigma:e} Hz needs a noise bandwidth above {b_max:e} Hz at this sample rate"
            )));
        }
        hi = (2.0 * hi).min(b_max);
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if sigma_out(mid)? < target_sigma {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-6 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

#[derive(Debug, Clone, Serialize)]
struct SlowlightRun {
    input_bandwidth_hz: f64,
    target_sigma_hz: Option<f64>,
    max_tau_s: f64,
    reference: G2Fit,
    medium: G2Fit,
    /// transmitted over input correlation width
    width_ratio: f64,
    /// peak shift relative to the reference trace
    delay_s: f64,
}

fn slowlight(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let fs = cfg.sample_rate();
    let medium = cfg.medium.build()?;
    let kind = cfg.source_kind();
    let noise = cfg.source.noise_spectrum;
    let mut plan: Vec<(f64, Option<f64>)> = Vec::new();
    match &cfg.analysis.target_sigmas_hz {
        Some(targets) => {
            for &t in targets {
                plan.push((input_bandwidth_for(t, noise, &medium, fs)?, Some(t)));
            }
        }
        None => plan.extend(cfg.source.bandwidths_hz.iter().map(|&b| (b, None))),
    }
    let opts = HbtOptions {
        noise_rms: cfg.analysis.detector_noise_rms,
        bandwidth: cfg.analysis.detector_bandwidth_hz,
    };
    let dt = 1.0 / fs;
    let mut runs = Vec::new();
    let mut table = String::from("input_bandwidth_hz,sigma_in_hz,sigma_out_hz,width_ratio,delay_s\n");
    for (i, &(b, target)) in plan.iter().enumerate() {
        let i = i as u64;
        let sigma_est = kind.sigma(b).unwrap_or(b);
        let max_tau = cfg.analysis.max_tau_s.max(5.0 / sigma_est);
        let input = generate_source(cfg, kind, b, fs, cfg.source.duration_s, child_seed(child_seed(cfg.seed, SOURCE), i))?;
        let output = propagate(&input, &medium, true)?;
        let hbt_seed = child_seed(child_seed(cfg.seed, HBT), i);
        let (r1, r2) = hbt_arms(&input, &input, &opts, child_seed(hbt_seed, 0));
        let reference = cross_correlate(&r1, &r2, max_tau)?;
        let (i1, i2) = hbt_arms(&input, &output, &opts, child_seed(hbt_seed, 2));
        let through = cross_correlate(&i1, &i2, max_tau)?;
        drop(output);
        let ref_fit = fit_gaussian_g2(&reference)?;
        let med_fit = fit_gaussian_g2(&through)?;
        report.file(format!("slowlight_{i}_reference.csv"), reference.normalized().to_csv());
        report.file(format!("slowlight_{i}_medium.csv"), through.normalized().to_csv());
        let run = SlowlightRun {
            input_bandwidth_hz: b,
            target_sigma_hz: target,
            max_tau_s: max_tau,
            width_ratio: ref_fit.sigma / med_fit.sigma,
            delay_s: med_fit.tau_g - ref_fit.tau_g,
            reference: ref_fit,
            medium: med_fit,
        };
        table.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e}\n",
            b, run.reference.sigma, run.medium.sigma, run.width_ratio, run.delay_s
        ));
        if kind != SourceKind::Coherent && cfg.source.noise_amplitude == 1.0 {
            let amp = run.reference.amplitude;
            report.checks.push(Check::new(
                format!("slowlight.{i}.chaotic_bunching"),
                (amp - 1.0).abs() <= 0.05,
                format!("reference g2(0) - 1 = {amp:.4}, expected 1 +- 0.05"),
            ));
        }
        if kind == SourceKind::Eom && b <= 50e3 {
            let ok_delay = (run.delay_s - medium.group_delay).abs() <= dt;
            let ok_width = (run.width_ratio - 1.0).abs() < 0.05;
            report.checks.push(Check::new(
                format!("slowlight.{i}.narrowband_delay"),
                ok_delay && ok_width,
                format!(
                    "delay {:.4e} s vs group delay {:.4e} s (tolerance one sample {dt:.1e} s); width ratio {:.4}",
                    run.delay_s, medium.group_delay, run.width_ratio
                ),
            ));
        }
        if kind == SourceKind::Eom && b >= 300e3 {
            let ok = run.width_ratio > 1.25 && run.delay_s < medium.group_delay;
            report.checks.push(Check::new(
                format!("slowlight.{i}.broadband_distortion"),
                ok,
                format!(
                    "width ratio {:.4} (need > 1.25), delay {:.4e} s (need < {:.4e} s)",
                    run.width_ratio, run.delay_s, medium.group_delay
                ),
            ));
        }
        if let Some(t) = target {
            let err = (run.medium.sigma - t).abs() / t;
            report.checks.push(Check::new(
                format!("slowlight.{i}.target_width"),
                err < 0.05,
                format!("transmitted sigma {:.4e} Hz vs target {t:.4e} Hz", run.medium.sigma),
            ));
        }
        runs.push(run);
    }
    report.file("slowlight_summary.csv", table);
    report.results = json!({
        "sample_rate_hz": fs,
        "group_delay_s": medium.group_delay,
        "runs": runs,
    });
    Ok(())
}

// ---------------------------------------------------------------- calibration

fn calibration(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let medium = cfg.medium.build()?;
    let grid: Vec<f64> = detuning_grid(cfg.analysis.scan_half_span_hz, cfg.analysis.scan_points)
        .into_iter()
        .map(|d| d + medium.window_center)
        .collect();
    let scan = scan_transmission(&medium, &grid)?;
    let fwhm = extract_fwhm(&scan)?;
    let mut csv = String::from("delta_hz,transmission\n");
    for (d, t) in &scan {
        csv.push_str(&format!("{d:e},{t:e}\n"));
    }
    report.file("calibration_scan.csv", csv);
    report.file("calibration_response.csv", medium.response(&grid).to_csv());
    let step = 2.0 * cfg.analysis.scan_half_span_hz / (cfg.analysis.scan_points - 1) as f64;
    let err = (fwhm - cfg.medium.eit_fwhm_hz).abs() / cfg.medium.eit_fwhm_hz;
    report.checks.push(Check::new(
        "calibration.fwhm",
        err <= 0.01,
        format!("extracted FWHM {fwhm:.6e} Hz vs configured {:.6e} Hz", cfg.medium.eit_fwhm_hz),
    ));
    report.results = json!({
        "fwhm_hz": fwhm,
        "grid_step_hz": step,
        "peak_transmission": medium.intensity_transmission(medium.window_center),
        "group_delay_s": medium.group_delay,
        "minimum_phase_delay_s": medium.minimum_phase_delay(),
        "linear_delay_s": medium.linear_delay(),
    });
    Ok(())
}

// ---------------------------------------------------------------- counting

#[derive(Debug, Clone, Serialize)]
struct CountSummary {
    source: String,
    efficiency: f64,
    photon_flux: f64,
    mean_counts: f64,
    g2_raw: f64,
    g2_raw_err: f64,
    g2_corrected: f64,
    g2_corrected_err: f64,
    family: Family,
    gof_statistic: f64,
    gof_p_value: f64,
    gof_dof: usize,
}

/// Counts, statistics, GOF and output files for one set of gate integrals.
fn analyse_counts(
    cfg: &ExperimentConfig,
    report: &mut Report,
    label: &str,
    integrals: &[f64],
    (efficiency, flux): (f64, f64),
    family: Family,
    seed: u64,
) -> Result<(CountSummary, CountRecord)> {
    let params = cfg.detector.params(cfg.sequence.gate(), efficiency);
    let record = count_cycles(integrals, flux, &params, seed)?;
    let resamples = cfg.analysis.bootstrap_resamples;
    let raw = g2_from_counts(&record, resamples)?;
    let corrected = g2_corrected(&record, resamples)?;
    let gof = gof_test(&record, family)?;
    report.file(format!("{label}_counts.csv"), record.to_csv());
    report.file(format!("{label}_counts.json"), json_bytes(&record.sidecar_json()));
    report.file(format!("{label}_histogram.csv"), raw.histogram_csv(&gof.model));
    let summary = CountSummary {
        source: label.to_string(),
        efficiency,
        photon_flux: flux,
        mean_counts: record.mean(),
        g2_raw: raw.g2,
        g2_raw_err: raw.g2_err,
        g2_corrected: corrected.g2,
        g2_corrected_err: corrected.g2_err,
        family,
        gof_statistic: gof.statistic,
        gof_p_value: gof.p_value,
        gof_dof: gof.dof,
    };
    let fam = match family {
        Family::Poisson => "Poisson",
        Family::BoseEinstein => "Bose-Einstein",
    };
    report.checks.push(Check::new(
        format!("{label}.gof"),
        gof.p_value > GOF_ALPHA,
        format!("{fam} chi-square {:.2} on {} dof, p = {:.4}", gof.statistic, gof.dof, gof.p_value),
    ));
    Ok((summary, record))
}

/// Detection efficiency and photon flux for a run. A configured efficiency
/// is used as is; otherwise the efficiency is calibrated to the target mean,
/// and when even unit efficiency falls short the probe flux is raised
/// (the attenuation in front of the counter is opened) until it is reachable.
fn detection_scale(cfg: &ExperimentConfig, integrals: &[f64]) -> Result<(f64, f64)> {
    let flux = cfg.source.mean_flux;
    if let Some(e) = cfg.detector.efficiency {
        return Ok((e, flux));
    }
    let params = cfg.detector.params(cfg.sequence.gate(), 1.0);
    let mut boosted = flux;
    for _ in 0..64 {
        match calibrate_efficiency(cfg.detector.target_mean, integrals, boosted, &params) {
            Ok(e) => {
                if boosted != flux {
                    log::info!("raised the photon flux from {flux:e} to {boosted:e} /s to reach the target mean");
                }
                return Ok((e, boosted));
            }
            Err(Error::Unreachable(_)) => boosted *= 2.0,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Unreachable(format!(
        "no photon flux reaches a mean of {} counts per cycle",
        cfg.detector.target_mean
    )))
}

fn family_for(kind: SourceKind) -> Family {
    match kind {
        SourceKind::Coherent => Family::Poisson,
        _ => Family::BoseEinstein,
    }
}

fn counting(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let gate = cfg.sequence.gate();
    let cycles = cfg.detector.cycles;
    let kind = cfg.source_kind();
    let mut sources = vec![kind];
    if kind != SourceKind::Coherent {
        sources.push(SourceKind::Coherent);
    }
    let mut summaries = Vec::new();
    for (j, &src) in sources.iter().enumerate() {
        let label = if src == SourceKind::Coherent { "counting_coherent" } else { "counting_chaotic" };
        let integrals = over_cycles(cfg, src, cycles, child_seed(child_seed(cfg.seed, SOURCE), j as u64), |rec, count| {
            gate_integrals(rec, &gate, count)
        })?;
        let scale = detection_scale(cfg, &integrals)?;
        let seed = child_seed(child_seed(cfg.seed, DETECT), j as u64);
        let (s, _) = analyse_counts(cfg, report, label, &integrals, scale, family_for(src), seed)?;
        let (expect, tol) = if src == SourceKind::Coherent { (1.0, 0.02) } else { (2.0, 0.06) };
        report.checks.push(Check::new(
            format!("{label}.g2"),
            (s.g2_corrected - expect).abs() <= tol,
            format!(
                "corrected g2 {:.4} +- {:.4} (raw {:.4}), expected {expect} +- {tol}",
                s.g2_corrected, s.g2_corrected_err, s.g2_raw
            ),
        ));
        let (measured, err) = if src == SourceKind::Coherent { MEASURED_G2_COHERENT } else { MEASURED_G2_CHAOTIC };
        let combined = (err * err + s.g2_corrected_err * s.g2_corrected_err).sqrt();
        let z = (measured - s.g2_corrected).abs() / combined;
        report.checks.push(Check::new(
            format!("{label}.measured_agreement"),
            z <= 3.0,
            format!("measured {measured} +- {err} vs simulated {:.4}: {z:.2} combined sigma", s.g2_corrected),
        ));
        summaries.push(s);
    }
    report.results = json!({
        "sample_rate_hz": cfg.sample_rate(),
        "cycles": cycles,
        "runs": summaries,
    });
    Ok(())
}

// ---------------------------------------------------------------- storage

/// Gate integral of the read-out light for every cycle of `kind`, through a
/// lossless write and read with the configured spin lifetime and leakage.
///
/// The gate opens at or after the read time, so it only sees the retrieved
/// pulse, whose amplitude is `sqrt(w * decay * r)` times the captured field;
/// integrals for any other write/read efficiency follow by scaling.
fn storage_integrals(
    cfg: &ExperimentConfig,
    prop: &Propagator,
    kind: SourceKind,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let seq = cfg.sequence.pulse_sequence();
    let model = reference_model(cfg);
    let fs = cfg.sample_rate();
    let period_samples = (seq.cycle_period * fs).round() as usize;
    let (gate_a, gate_b) = (seq.gate_start, seq.gate_start + seq.gate_width);
    let one = |rec: &FieldRecord| -> Result<(f64, f64)> {
        let probe = shape_pulse(rec, seq.probe_start, seq.probe_width, cfg.sequence.probe_rise_s)?;
        let out = run_sequence_with(prop, &probe, &model, &seq)?;
        let i_read = out.retrieved.samples[probe_peak_index(&seq, fs)].norm_sqr();
        Ok((out.field.window_energy(gate_a, gate_b), i_read))
    };
    let pairs: Vec<(f64, f64)> = if kind == SourceKind::Coherent {
        let rec = generate_source(cfg, kind, cfg.source.bandwidth_hz, fs, period_samples as f64 / fs, seed)?;
        vec![one(&rec)?; cfg.detector.cycles]
    } else {
        over_cycles(cfg, kind, cfg.detector.cycles, seed, |rec, count| {
            (0..count).map(|k| one(&cycle_slice(rec, k, period_samples))).collect()
        })?
    };
    Ok(pairs.into_iter().unzip())
}

/// Sample where the retrieved copy of the probe centre sits.
fn probe_peak_index(seq: &PulseSequence, fs: f64) -> usize {
    let t = seq.read_time() + 0.5 * seq.gate_width.min(seq.probe_width);
    (t * fs).round() as usize
}

/// Lossless write and read with the configured lifetime and leakage.
fn reference_model(cfg: &ExperimentConfig) -> StorageModel {
    StorageModel {
        write_efficiency: 1.0,
        read_efficiency: 1.0,
        ..cfg.storage
    }
}

fn moment_ratio(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m1 = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| v * v).sum::<f64>() / n;
    let m3 = x.iter().map(|v| v * v * v).sum::<f64>() / n;
    let m4 = x.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    let r = m2 / (m1 * m1);
    // delta method for m2 / m1^2
    let (d2, d1) = (1.0 / (m1 * m1), -2.0 * m2 / m1.powi(3));
    let var = d2 * d2 * (m4 - m2 * m2) + d1 * d1 * (m2 - m1 * m1) + 2.0 * d1 * d2 * (m3 - m1 * m2);
    (r, (var / n).max(0.0).sqrt())
}

/// Bernoulli thinning of every registered photon with keep probability `p`.
pub fn thin_counts(counts: &[u32], p: f64, seed: u64) -> Vec<u32> {
    counts
        .par_iter()
        .enumerate()
        .map(|(k, &c)| {
            let mut rng = rng_from_seed(child_seed(seed, k as u64));
            (0..c).filter(|_| rng.random::<f64>() < p).count() as u32
        })
        .collect()
}

/// `(mean, g2)` of a count list with standard errors.
fn count_moments(counts: &[u32]) -> ((f64, f64), (f64, f64)) {
    let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let n = x.len() as f64;
    let m1 = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m1).powi(2)).sum::<f64>() / n;
    // g2 = <n(n-1)> / <n>^2
    let f: Vec<f64> = x.iter().map(|v| v * (v - 1.0)).collect();
    let f1 = f.iter().sum::<f64>() / n;
    let fvar = f.iter().map(|v| (v - f1).powi(2)).sum::<f64>() / n;
    let cov = x.iter().zip(&f).map(|(a, b)| (a - m1) * (b - f1)).sum::<f64>() / n;
    let g2 = f1 / (m1 * m1);
    let (dg_f, dg_m) = (1.0 / (m1 * m1), -2.0 * f1 / m1.powi(3));
    let g2_var = dg_f * dg_f * fvar + dg_m * dg_m * var + 2.0 * dg_f * dg_m * cov;
    ((m1, (var / n).sqrt()), (g2, (g2_var / n).max(0.0).sqrt()))
}

fn storage(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let fs = cfg.sample_rate();
    let medium = cfg.medium.build()?;
    let seq = cfg.sequence.pulse_sequence();
    let period_samples = (seq.cycle_period * fs).round() as usize;
    let prop = Propagator::new(&medium, period_samples, fs)?;
    let decay = (-seq.storage_duration / cfg.storage.spin_lifetime).exp();
    let etas = &cfg.analysis.storage_efficiencies;
    let eta_max = etas.iter().copied().fold(0.0, f64::max);
    let kind = cfg.source_kind();
    let mut sources = vec![kind];
    if kind != SourceKind::Coherent {
        sources.push(SourceKind::Coherent);
    }

    let mut traces = Vec::new();
    let mut runs = Vec::new();
    for (j, &src) in sources.iter().enumerate() {
        let name = if src == SourceKind::Coherent { "coherent" } else { "chaotic" };
        let src_seed = child_seed(child_seed(cfg.seed, SOURCE), j as u64);

        // single-cycle trace with the configured efficiencies
        let rec = generate_source(cfg, src, cfg.source.bandwidth_hz, fs, seq.cycle_period.max(trace_span(cfg)), child_seed(src_seed, u64::MAX))?;
        let rec = rec.with_samples(rec.samples[..period_samples].to_vec());
        let probe = shape_pulse(&rec, seq.probe_start, seq.probe_width, cfg.sequence.probe_rise_s)?;
        let out = run_sequence_with(&prop, &probe, &cfg.storage, &seq)?;
        report.file(format!("storage_{name}_trace.csv"), out.field.intensity_csv());
        report.file(format!("storage_{name}_ledger.json"), json_bytes(&out.ledger));
        let residual = out.ledger.relative_residual();
        report.checks.push(Check::new(
            format!("storage_{name}.energy_ledger"),
            residual < 1e-6,
            format!("relative ledger residual {residual:.3e}"),
        ));
        traces.push(json!({ "source": name, "ledger": out.ledger, "residual": residual }));

        let (w_ref, i_read) = storage_integrals(cfg, &prop, src, src_seed)?;
        if src != SourceKind::Coherent {
            let (r, se) = moment_ratio(&i_read);
            report.checks.push(Check::new(
                "storage_chaotic.retrieved_statistics",
                (r - 2.0).abs() <= 0.05_f64.max(4.0 * se),
                format!("<I^2>/<I>^2 of the retrieved field {r:.4} +- {se:.4}, expected 2"),
            ));
        }
        let scaled = |eta: f64| -> Vec<f64> { w_ref.iter().map(|w| w * eta / decay).collect() };
        let scale = detection_scale(cfg, &scaled(eta_max))?;
        let (eff, flux) = scale;
        let family = family_for(src);
        for (e, &eta) in etas.iter().enumerate() {
            let label = format!("storage_{name}_eta{eta}");
            let seed = child_seed(child_seed(child_seed(cfg.seed, DETECT), j as u64), e as u64);
            let (s, _) = analyse_counts(cfg, report, &label, &scaled(eta), scale, family, seed)?;
            runs.push(json!({ "storage_efficiency": eta, "counts": s }));
        }

        // thinning oracle on an ideal detector: counting at eta equals
        // counting at eta_max with every photon kept with probability eta / eta_max
        let ideal = DetectorParams::ideal(cfg.sequence.gate());
        let ideal = DetectorParams { efficiency: eff, ..ideal };
        let oracle_seed = child_seed(child_seed(cfg.seed, ORACLE), j as u64);
        let top = count_cycles(&scaled(eta_max), flux, &ideal, child_seed(oracle_seed, 0))?;
        for (e, &eta) in etas.iter().enumerate() {
            if eta >= eta_max {
                continue;
            }
            let direct = count_cycles(&scaled(eta), flux, &ideal, child_seed(oracle_seed, 1 + e as u64))?;
            let thinned = thin_counts(&top.counts, eta / eta_max, child_seed(oracle_seed, 100 + e as u64));
            let ((m1, sm1), (g1, sg1)) = count_moments(&direct.counts);
            let ((m2, sm2), (g2, sg2)) = count_moments(&thinned);
            let zm = (m1 - m2).abs() / (sm1 * sm1 + sm2 * sm2).sqrt();
            let zg = (g1 - g2).abs() / (sg1 * sg1 + sg2 * sg2).sqrt();
            report.checks.push(Check::new(
                format!("storage_{name}_eta{eta}.thinning"),
                zm <= 3.0 && zg <= 3.0,
                format!(
                    "mean {m1:.4} vs thinned {m2:.4} ({zm:.2} SE); g2 {g1:.4} vs thinned {g2:.4} ({zg:.2} SE)"
                ),
            ));
        }
    }

    let lifetime = lifetime_sweep(cfg, &prop)?;
    report.checks.push(Check::new(
        "storage.lifetime",
        (lifetime.0 - cfg.storage.spin_lifetime).abs() <= 0.01 * cfg.storage.spin_lifetime,
        format!(
            "fitted lifetime {:.4e} s vs configured {:.4e} s",
            lifetime.0, cfg.storage.spin_lifetime
        ),
    ));
    report.results = json!({
        "sample_rate_hz": fs,
        "cycles": cfg.detector.cycles,
        "spin_decay": decay,
        "traces": traces,
        "runs": runs,
        "lifetime_fit_s": lifetime.0,
        "lifetime_sweep": lifetime.1,
    });
    Ok(())
}

/// Chaotic generation needs a record spanning enough coherence cells.
fn trace_span(cfg: &ExperimentConfig) -> f64 {
    crate::fieldgen::MIN_COHERENCE_CELLS / cfg.source.bandwidth_hz
}

/// Retrieved energy of a coherent probe against hold time, fitted to an
/// exponential. Returns the lifetime and the `(hold_s, energy)` points.
fn lifetime_sweep(cfg: &ExperimentConfig, prop: &Propagator) -> Result<(f64, Vec<(f64, f64)>)> {
    let base = cfg.sequence.pulse_sequence();
    let fs = cfg.sample_rate();
    let rec = gen_coherent(fs, base.cycle_period)?;
    let rec = rec.with_samples(rec.samples[..prop_len(base.cycle_period, fs)].to_vec());
    let probe = shape_pulse(&rec, base.probe_start, base.probe_width, cfg.sequence.probe_rise_s)?;
    let room = base.cycle_period - base.coupling_off_time - base.gate_width;
    let mut points = Vec::new();
    for k in 1..=6 {
        let hold = base.storage_duration * k as f64 / 2.0;
        if hold + crate::storage::SWITCH_TIME + 2.0 * base.probe_width > room {
            break;
        }
        let seq = PulseSequence {
            storage_duration: hold,
            gate_start: base.coupling_off_time + hold,
            ..base
        };
        let out = run_sequence_with(prop, &probe, &cfg.storage, &seq)?;
        points.push((hold, out.ledger.retrieved));
    }
    let (t, e): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let (_, lifetime) = fit_exponential_decay(&t, &e)?;
    Ok((lifetime, points))
}

fn prop_len(period: f64, fs: f64) -> usize {
    (period * fs).round() as usize
}
