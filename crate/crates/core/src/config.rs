//! JSON experiment configuration.
//!
//! Every section has defaults except `seed`, which must be given. Unknown
//! keys are rejected with the path of the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detection::{DetectorParams, Gate};
use crate::error::{Error, Result};
use crate::fieldgen::{
    eom_equivalent_sigma, EomNoise, NoiseSpectrum, SpectralShape, MIN_COHERENCE_CELLS, MIN_OVERSAMPLING,
};
use crate::medium::{build_medium, MediumModel, MIN_PROPAGATION_OVERSAMPLING};
use crate::storage::{PulseSequence, StorageModel, DEFAULT_PROBE_RISE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Slowlight,
    Storage,
    Counting,
    Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// noise-driven electro-optic modulator; `bandwidth_hz` is the noise power FWHM
    Eom,
    /// rotating ground disk with a Gaussian spectrum; `bandwidth_hz` is sigma
    Gaussian,
    /// as `gaussian` with a Lorentzian spectrum
    Lorentzian,
    Coherent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Defaults to `eom` for slowlight and `gaussian` otherwise.
    pub kind: Option<SourceKind>,
    pub bandwidth_hz: f64,
    /// Input bandwidths scanned by the slow-light scenario.
    pub bandwidths_hz: Vec<f64>,
    pub noise_spectrum: NoiseSpectrum,
    pub noise_amplitude: f64,
    /// Defaults to 50 x the largest bandwidth in the scenario.
    pub sample_rate_hz: Option<f64>,
    pub duration_s: f64,
    pub mean_flux: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            kind: None,
            bandwidth_hz: 104e3,
            bandwidths_hz: vec![40e3, 50e3, 300e3, 500e3],
            noise_spectrum: NoiseSpectrum::Gaussian,
            noise_amplitude: 1.0,
            sample_rate_hz: None,
            duration_s: 0.2,
            mean_flux: 1e6,
        }
    }
}

impl SourceConfig {
    pub fn eom_noise(&self) -> EomNoise {
        EomNoise {
            spectrum: self.noise_spectrum,
            amplitude: self.noise_amplitude,
        }
    }

    pub fn kind_for(&self, scenario: Scenario) -> SourceKind {
        self.kind.unwrap_or(match scenario {
            Scenario::Slowlight => SourceKind::Eom,
            _ => SourceKind::Gaussian,
        })
    }
}

impl SourceKind {
    /// Intensity correlation half-width parameter for a source of `bandwidth` Hz.
    pub fn sigma(self, bandwidth: f64) -> Option<f64> {
        match self {
            SourceKind::Coherent => None,
            SourceKind::Eom => Some(eom_equivalent_sigma(bandwidth)),
            SourceKind::Gaussian | SourceKind::Lorentzian => Some(bandwidth),
        }
    }

    pub fn shape(self, bandwidth: f64) -> Option<SpectralShape> {
        match self {
            SourceKind::Gaussian => Some(SpectralShape::gaussian(bandwidth)),
            SourceKind::Lorentzian => Some(SpectralShape::lorentzian(bandwidth)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediumConfig {
    pub eit_fwhm_hz: f64,
    pub peak_transmission: f64,
    pub off_window_od: f64,
    pub group_delay_s: f64,
    pub window_center_hz: f64,
    pub one_photon_detuning_hz: f64,
}

impl Default for MediumConfig {
    fn default() -> Self {
        MediumConfig {
            eit_fwhm_hz: 200e3,
            peak_transmission: 0.5,
            off_window_od: 6.0,
            group_delay_s: 1e-6,
            window_center_hz: 0.0,
            one_photon_detuning_hz: 100e6,
        }
    }
}

impl MediumConfig {
    pub fn build(&self) -> Result<MediumModel> {
        let mut m = build_medium(self.eit_fwhm_hz, self.peak_transmission, self.off_window_od, self.group_delay_s)?
            .with_window_center(self.window_center_hz);
        m.one_photon_detuning = self.one_photon_detuning_hz;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub probe_start_s: f64,
    pub probe_width_s: f64,
    pub probe_rise_s: f64,
    pub coupling_off_time_s: f64,
    pub storage_duration_s: f64,
    pub gate_start_s: f64,
    pub gate_width_s: f64,
    pub cycle_period_s: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        let s = PulseSequence::default();
        SequenceConfig {
            probe_start_s: s.probe_start,
            probe_width_s: s.probe_width,
            probe_rise_s: DEFAULT_PROBE_RISE,
            coupling_off_time_s: s.coupling_off_time,
            storage_duration_s: s.storage_duration,
            gate_start_s: s.gate_start,
            gate_width_s: s.gate_width,
            cycle_period_s: s.cycle_period,
        }
    }
}

impl SequenceConfig {
    pub fn pulse_sequence(&self) -> PulseSequence {
        PulseSequence {
            probe_start: self.probe_start_s,
            probe_width: self.probe_width_s,
            coupling_off_time: self.coupling_off_time_s,
            storage_duration: self.storage_duration_s,
            gate_start: self.gate_start_s,
            gate_width: self.gate_width_s,
            cycle_period: self.cycle_period_s,
        }
    }

    pub fn gate(&self) -> Gate {
        Gate {
            start: self.gate_start_s,
            width: self.gate_width_s,
            period: self.cycle_period_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Fixed efficiency; when absent it is calibrated to `target_mean`.
    pub efficiency: Option<f64>,
    pub target_mean: f64,
    pub dead_time_s: f64,
    pub dark_rate_hz: f64,
    pub cycles: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            efficiency: None,
            target_mean: 1.0,
            dead_time_s: 50e-9,
            dark_rate_hz: 400.0,
            cycles: 100_000,
        }
    }
}

impl DetectorConfig {
    pub fn params(&self, gate: Gate, efficiency: f64) -> DetectorParams {
        DetectorParams {
            efficiency,
            dead_time: self.dead_time_s,
            dark_rate: self.dark_rate_hz,
            gate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub max_tau_s: f64,
    pub bootstrap_resamples: usize,
    pub detector_noise_rms: f64,
    pub detector_bandwidth_hz: Option<f64>,
    /// Transmitted correlation widths to reproduce; input bandwidths are
    /// solved for and replace `source.bandwidths_hz`.
    pub target_sigmas_hz: Option<Vec<f64>>,
    pub scan_half_span_hz: f64,
    pub scan_points: usize,
    /// Total storage efficiencies for the storage counting runs.
    pub storage_efficiencies: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            max_tau_s: 20e-6,
            bootstrap_resamples: 1000,
            detector_noise_rms: 0.0,
            detector_bandwidth_hz: None,
            target_sigmas_hz: None,
            scan_half_span_hz: 1e6,
            scan_points: 2001,
            storage_efficiencies: vec![0.1, 0.3, 0.7],
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub medium: MediumConfig,
    #[serde(default)]
    pub sequence: SequenceConfig,
    #[serde(default)]
    pub storage: StorageModel,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

/// One problem found in a configuration, located by its key path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl ExperimentConfig {
    pub fn from_value(value: Value) -> Result<ExperimentConfig> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })
    }

    /// Reads a config file, applies `key.path=value` overrides, and parses.
    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
        let text = crate::io::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        ExperimentConfig::from_value(value)
    }

    pub fn sample_rate(&self) -> f64 {
        if let Some(fs) = self.source.sample_rate_hz {
            return fs;
        }
        let mut widest = match self.scenario {
            Scenario::Counting => 0.0,
            _ => self.medium.eit_fwhm_hz,
        };
        for b in self.scenario_bandwidths() {
            widest = widest.max(b);
        }
        50.0 * widest
    }

    pub fn source_kind(&self) -> SourceKind {
        self.source.kind_for(self.scenario)
    }

    /// Source bandwidths this scenario generates (before any target inversion).
    pub fn scenario_bandwidths(&self) -> Vec<f64> {
        match self.scenario {
            Scenario::Slowlight if self.analysis.target_sigmas_hz.is_none() => self.source.bandwidths_hz.clone(),
            Scenario::Slowlight => Vec::new(),
            Scenario::Calibration => Vec::new(),
            _ => vec![self.source.bandwidth_hz],
        }
    }

    /// Every invariant violation; empty when the config is usable.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut d = Vec::new();
        let mut push = |path: &str, message: String| {
            d.push(Diagnostic {
                path: path.to_string(),
                message,
            })
        };
        let medium = match self.medium.build() {
            Ok(m) => Some(m),
            Err(e) => {
                push("medium", e.to_string());
                None
            }
        };
        let fs = self.sample_rate();
        if !(fs > 0.0 && fs.is_finite()) {
            push("source.sample_rate_hz", format!("must be positive, got {fs}"));
        }
        let src = &self.source;
        if !(src.duration_s > 0.0) {
            push("source.duration_s", format!("must be positive, got {}", src.duration_s));
        }
        if !(src.mean_flux >= 0.0 && src.mean_flux.is_finite()) {
            push("source.mean_flux", format!("must be non-negative, got {}", src.mean_flux));
        }
        if !(0.0..=1.0).contains(&src.noise_amplitude) {
            push("source.noise_amplitude", format!("must lie in [0, 1], got {}", src.noise_amplitude));
        }
        if self.scenario == Scenario::Slowlight && src.bandwidths_hz.is_empty() && self.analysis.target_sigmas_hz.is_none() {
            push("source.bandwidths_hz", "slowlight needs at least one bandwidth".into());
        }
        let key = if self.scenario == Scenario::Slowlight { "source.bandwidths_hz" } else { "source.bandwidth_hz" };
        let kind = self.source_kind();
        for b in self.scenario_bandwidths() {
            if kind == SourceKind::Coherent {
                continue;
            }
            if !(b > 0.0 && b.is_finite()) {
                push(key, format!("bandwidth must be positive, got {b}"));
                continue;
            }
            if fs < MIN_OVERSAMPLING * b {
                push(
                    "source.sample_rate_hz",
                    format!("aliasing: {fs:e} Hz is below {MIN_OVERSAMPLING} x the {b:e} Hz source bandwidth"),
                );
            }
            // the counting scenarios generate one cycle period at a time
            let span = match self.scenario {
                Scenario::Slowlight => src.duration_s,
                _ => src.duration_s.max(self.sequence.cycle_period_s),
            };
            if span * b < MIN_COHERENCE_CELLS {
                push(
                    "source.duration_s",
                    format!("{span:e} s holds fewer than {MIN_COHERENCE_CELLS} coherence cells of a {b:e} Hz source"),
                );
            }
        }
        if let Some(t) = &self.analysis.target_sigmas_hz {
            if t.is_empty() || t.iter().any(|s| !(*s > 0.0)) {
                push("analysis.target_sigmas_hz", "targets must be a non-empty list of positive widths".into());
            }
            if kind != SourceKind::Eom || src.noise_amplitude != 1.0 {
                push(
                    "analysis.target_sigmas_hz",
                    "bandwidth inversion is defined for the fully chaotic eom source".into(),
                );
            }
        }
        if matches!(self.scenario, Scenario::Slowlight | Scenario::Storage) {
            if let Some(m) = &medium {
                if fs < MIN_PROPAGATION_OVERSAMPLING * m.eit_fwhm {
                    push(
                        "source.sample_rate_hz",
                        format!(
                            "aliasing: {fs:e} Hz is below {MIN_PROPAGATION_OVERSAMPLING} x the {:e} Hz EIT window",
                            m.eit_fwhm
                        ),
                    );
                }
                if self.scenario == Scenario::Slowlight && src.duration_s < 4.0 * m.group_delay {
                    push("source.duration_s", "record shorter than 4 x the group delay".into());
                }
            }
            if self.scenario == Scenario::Slowlight && !(self.analysis.max_tau_s > 0.0 && self.analysis.max_tau_s < 0.25 * src.duration_s) {
                push("analysis.max_tau_s", "must be positive and well below the record duration".into());
            }
        }
        let seq = self.sequence.pulse_sequence();
        if matches!(self.scenario, Scenario::Storage | Scenario::Counting) {
            for v in seq.violations() {
                push("sequence", v);
            }
            let probe_rise = self.sequence.probe_rise_s;
            if !(probe_rise >= 0.0) || 2.0 * probe_rise > self.sequence.probe_width_s {
                push("sequence.probe_rise_s", "rise time must be non-negative and fit twice into the probe".into());
            }
            let det = &self.detector;
            if let Some(eta) = det.efficiency {
                if !(eta > 0.0 && eta <= 1.0) {
                    push("detector.efficiency", format!("must lie in (0, 1], got {eta}"));
                }
            } else if !(det.target_mean > 0.0) {
                push("detector.target_mean", format!("must be positive, got {}", det.target_mean));
            }
            if det.cycles < crate::stats::MIN_CYCLES {
                push("detector.cycles", format!("need at least {} cycles", crate::stats::MIN_CYCLES));
            }
            if let Err(e) = det.params(self.sequence.gate(), 1.0).validate() {
                push("detector", e.to_string());
            }
        }
        if self.scenario == Scenario::Storage {
            for v in self.storage.violations() {
                push("storage", v);
            }
            for &eta in &self.analysis.storage_efficiencies {
                let decay = (-seq.storage_duration / self.storage.spin_lifetime).exp();
                if !(eta > 0.0 && eta <= decay) {
                    push(
                        "analysis.storage_efficiencies",
                        format!("total efficiency {eta} is outside (0, {decay:.4}] allowed by the spin decay"),
                    );
                }
            }
        }
        if self.scenario == Scenario::Calibration && self.analysis.scan_points < 3 {
            push("analysis.scan_points", "need at least three points".into());
        }
        if self.analysis.bootstrap_resamples == 1 {
            push("analysis.bootstrap_resamples", "use 0 (no error bars) or at least 2".into());
        }
        d
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON, or taken as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key.path=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(root, key.trim(), value)
}

pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key path {key:?}")));
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            return Err(Error::Config(format!("{key}: {p} is not an object")));
        }
        cur = cur
            .as_object_mut()
            .expect("checked object")
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match cur.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(Error::Config(format!("{key}: parent is not an object"))),
    }
}
