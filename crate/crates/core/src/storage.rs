//! Light storage and retrieval at the envelope level.
//!
//! The probe is propagated through the medium with the coupling field on.
//! Light that exits before the coupling is switched off is the leakage pulse;
//! light still inside the medium at switch-off is captured. The two parts are
//! separated by a smooth power-complementary switch of length
//! [`SWITCH_TIME`] ending at `coupling_off_time`. The captured envelope is
//! replayed unchanged, scaled by the storage losses, starting at the read time
//! `coupling_off_time + storage_duration`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldRecord;
use crate::medium::{MediumModel, Propagator};

/// Duration of the coupling switch edges.
pub const SWITCH_TIME: f64 = 100e-9;
/// Default probe edge; sharper edges ring through the window's dispersion
/// and spill energy out of a finite cycle record.
pub const DEFAULT_PROBE_RISE: f64 = 200e-9;
/// Largest probe energy fraction tolerated outside the probe window.
pub const PROBE_SPILL_TOLERANCE: f64 = 1e-6;
/// Largest relative propagated energy allowed to fall outside the record.
pub const RECORD_SPILL_TOLERANCE: f64 = 1e-7;

/// Timing of one storage cycle, relative to the start of the cycle record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    #[serde(rename = "probe_start_s")]
    pub probe_start: f64,
    #[serde(rename = "probe_width_s")]
    pub probe_width: f64,
    #[serde(rename = "coupling_off_time_s")]
    pub coupling_off_time: f64,
    #[serde(rename = "storage_duration_s")]
    pub storage_duration: f64,
    #[serde(rename = "gate_start_s")]
    pub gate_start: f64,
    #[serde(rename = "gate_width_s")]
    pub gate_width: f64,
    #[serde(rename = "cycle_period_s")]
    pub cycle_period: f64,
}

impl Default for PulseSequence {
    /// 2 us probe, write at the trailing edge, 3 us hold, 2 us gate at the
    /// read time, 8 kHz repetition. The probe starts late enough that the
    /// filter's precursor stays inside the cycle record.
    fn default() -> Self {
        PulseSequence {
            probe_start: 5e-6,
            probe_width: 2e-6,
            coupling_off_time: 7e-6,
            storage_duration: 3e-6,
            gate_start: 10e-6,
            gate_width: 2e-6,
            cycle_period: 125e-6,
        }
    }
}

impl PulseSequence {
    pub fn read_time(&self) -> f64 {
        self.coupling_off_time + self.storage_duration
    }

    /// Every violated invariant, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let fields = [
            ("probe_start_s", self.probe_start),
            ("probe_width_s", self.probe_width),
            ("coupling_off_time_s", self.coupling_off_time),
            ("storage_duration_s", self.storage_duration),
            ("gate_start_s", self.gate_start),
            ("gate_width_s", self.gate_width),
            ("cycle_period_s", self.cycle_period),
        ];
        for (name, x) in fields {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("{name} must be finite and non-negative, got {x}"));
            }
        }
        if !(self.probe_width > 0.0) {
            v.push("probe_width_s must be positive".into());
        }
        if !(self.gate_width > 0.0) {
            v.push("gate_width_s must be positive".into());
        }
        if self.probe_start + self.probe_width > self.coupling_off_time * (1.0 + 1e-12) {
            v.push(format!(
                "probe must have fully entered before the write: probe ends at {:e} s, coupling off at {:e} s",
                self.probe_start + self.probe_width,
                self.coupling_off_time
            ));
        }
        if self.coupling_off_time < SWITCH_TIME {
            v.push(format!("coupling_off_time_s must leave room for the {SWITCH_TIME:e} s switch edge"));
        }
        if self.gate_start < self.read_time() * (1.0 - 1e-12) {
            v.push(format!(
                "gate opens at {:e} s, before the read at {:e} s (overlaps the storage hold)",
                self.gate_start,
                self.read_time()
            ));
        }
        if !(self.cycle_period > self.gate_start + self.gate_width) {
            v.push(format!(
                "cycle_period_s {:e} must exceed the gate end {:e} s",
                self.cycle_period,
                self.gate_start + self.gate_width
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::SequenceInvariant(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageModel {
    pub write_efficiency: f64,
    pub read_efficiency: f64,
    #[serde(rename = "spin_lifetime_s")]
    pub spin_lifetime: f64,
    /// Overrides the leakage/captured energy split when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_fraction: Option<f64>,
}

impl Default for StorageModel {
    fn default() -> Self {
        StorageModel {
            write_efficiency: 0.7,
            read_efficiency: 0.7,
            spin_lifetime: 30e-6,
            leakage_fraction: None,
        }
    }
}

impl StorageModel {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [("write_efficiency", self.write_efficiency), ("read_efficiency", self.read_efficiency)] {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("{name} must lie in [0, 1], got {x}"));
            }
        }
        if !(self.spin_lifetime > 0.0) {
            v.push(format!("spin_lifetime_s must be positive, got {}", self.spin_lifetime));
        }
        if let Some(l) = self.leakage_fraction {
            if !(0.0..=1.0).contains(&l) {
                v.push(format!("leakage_fraction must lie in [0, 1], got {l}"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }

    /// Amplitude-squared retrieval factor after a hold of `storage_duration`.
    pub fn retrieval_efficiency(&self, storage_duration: f64) -> f64 {
        self.write_efficiency * self.read_efficiency * (-storage_duration / self.spin_lifetime).exp()
    }
}

/// Where the probe energy went, in envelope energy units (`sum |E|^2 dt`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub input: f64,
    pub absorbed: f64,
    pub leakage: f64,
    pub captured: f64,
    pub write_loss: f64,
    pub spin_decay: f64,
    pub read_loss: f64,
    pub retrieved: f64,
}

impl EnergyLedger {
    pub fn dissipated(&self) -> f64 {
        self.absorbed + self.write_loss + self.spin_decay + self.read_loss
    }

    /// `|input - (leakage + retrieved + dissipated)| / input`.
    pub fn relative_residual(&self) -> f64 {
        (self.input - self.leakage - self.retrieved - self.dissipated()).abs() / self.input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    /// Leakage plus retrieved pulse.
    pub field: FieldRecord,
    pub leakage: FieldRecord,
    pub retrieved: FieldRecord,
    pub ledger: EnergyLedger,
}

/// Coupling switch angle: 0 before the write edge, pi/2 after `off_time`.
fn switch_angle(t: f64, off_time: f64) -> f64 {
    let u = ((t - (off_time - SWITCH_TIME)) / SWITCH_TIME).clamp(0.0, 1.0);
    0.25 * PI * (1.0 - (PI * u).cos())
}

struct Split {
    leakage: Vec<Complex64>,
    captured: Vec<Complex64>,
    input: f64,
    absorbed: f64,
}

fn split(probe: &FieldRecord, prop: &Propagator, seq: &PulseSequence) -> Result<Split> {
    seq.validate()?;
    let input = probe.energy();
    if !(input > 0.0) {
        return Err(Error::invalid("probe carries no energy"));
    }
    let inside = probe.window_energy(seq.probe_start, seq.probe_start + seq.probe_width);
    let outside = (input - inside).max(0.0) / input;
    if outside > PROBE_SPILL_TOLERANCE {
        return Err(Error::ProbeOutsideWindow { fraction: outside });
    }
    let end = seq.gate_start + seq.gate_width;
    if probe.duration() < end * (1.0 - 1e-12) {
        return Err(Error::RecordTooShort(format!(
            "record of {:e} s ends before the gate closes at {end:e} s",
            probe.duration()
        )));
    }
    let (y, expected) = prop.apply(probe)?;
    let kept = y.energy();
    if (expected - kept).abs() > RECORD_SPILL_TOLERANCE * expected.max(f64::MIN_POSITIVE) {
        return Err(Error::RecordTooShort(format!(
            "{:.3e} of the transmitted energy falls outside the record; lengthen it",
            (expected - kept).abs() / expected
        )));
    }
    let mut leakage = Vec::with_capacity(y.len());
    let mut captured = Vec::with_capacity(y.len());
    for (i, &z) in y.samples.iter().enumerate() {
        let theta = switch_angle(y.local_time(i), seq.coupling_off_time);
        leakage.push(z * theta.cos());
        captured.push(z * theta.sin());
    }
    Ok(Split {
        leakage,
        captured,
        input,
        absorbed: input - expected,
    })
}

fn energy(v: &[Complex64], dt: f64) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>() * dt
}

/// Fraction of the transmitted probe energy still inside the medium when the
/// coupling field is switched off.
pub fn capture_fraction(probe: &FieldRecord, medium: &MediumModel, seq: &PulseSequence) -> Result<f64> {
    let prop = Propagator::new(medium, probe.len(), probe.sample_rate)?;
    let s = split(probe, &prop, seq)?;
    let dt = probe.dt();
    let (l, c) = (energy(&s.leakage, dt), energy(&s.captured, dt));
    Ok(if l + c > 0.0 { c / (l + c) } else { 0.0 })
}

/// Runs one write-hold-read cycle on a shaped probe record.
pub fn run_sequence(
    probe: &FieldRecord,
    medium: &MediumModel,
    model: &StorageModel,
    seq: &PulseSequence,
) -> Result<SequenceOutput> {
    let prop = Propagator::new(medium, probe.len(), probe.sample_rate)?;
    run_sequence_with(&prop, probe, model, seq)
}

/// [`run_sequence`] with a precomputed propagator, for many cycles of the same shape.
pub fn run_sequence_with(
    prop: &Propagator,
    probe: &FieldRecord,
    model: &StorageModel,
    seq: &PulseSequence,
) -> Result<SequenceOutput> {
    model.validate()?;
    let Split {
        mut leakage,
        mut captured,
        input,
        absorbed,
    } = split(probe, prop, seq)?;
    let dt = probe.dt();
    let n = probe.len();

    if let Some(target) = model.leakage_fraction {
        let (l, c) = (energy(&leakage, dt), energy(&captured, dt));
        let total = l + c;
        if (target > 0.0 && l == 0.0) || (target < 1.0 && c == 0.0) {
            return Err(Error::invalid(format!(
                "cannot impose leakage_fraction {target}: the natural split is {l:e} / {c:e}"
            )));
        }
        let ls = if l > 0.0 { (target * total / l).sqrt() } else { 0.0 };
        let cs = if c > 0.0 { ((1.0 - target) * total / c).sqrt() } else { 0.0 };
        leakage.iter_mut().for_each(|z| *z *= ls);
        captured.iter_mut().for_each(|z| *z *= cs);
    }

    let leak_e = energy(&leakage, dt);
    let cap_e = energy(&captured, dt);
    // the captured segment starts at the write edge and is replayed from the read time
    let shift = ((seq.storage_duration + SWITCH_TIME) * probe.sample_rate).round() as usize;
    let lost = if shift >= n { cap_e } else { energy(&captured[n - shift..], dt) };
    if lost > RECORD_SPILL_TOLERANCE * cap_e.max(f64::MIN_POSITIVE) {
        return Err(Error::RecordTooShort(format!(
            "retrieved pulse runs past the record end ({:.3e} of the stored energy)",
            lost / cap_e
        )));
    }
    let w = model.write_efficiency;
    let decay = (-seq.storage_duration / model.spin_lifetime).exp();
    let r = model.read_efficiency;
    let amp = (w * decay * r).sqrt();
    let mut retrieved = vec![Complex64::new(0.0, 0.0); n];
    if shift < n {
        for (dst, src) in retrieved[shift..].iter_mut().zip(&captured[..n - shift]) {
            *dst = src * amp;
        }
    }
    let ret_e = energy(&retrieved, dt);
    let total: Vec<Complex64> = leakage.iter().zip(&retrieved).map(|(a, b)| a + b).collect();

    let ledger = EnergyLedger {
        input,
        absorbed,
        leakage: leak_e,
        captured: cap_e,
        write_loss: (1.0 - w) * cap_e,
        spin_decay: w * (1.0 - decay) * cap_e,
        read_loss: w * decay * (1.0 - r) * cap_e,
        retrieved: ret_e,
    };
    Ok(SequenceOutput {
        field: probe.with_samples(total),
        leakage: probe.with_samples(leakage),
        retrieved: probe.with_samples(retrieved),
        ledger,
    })
}
