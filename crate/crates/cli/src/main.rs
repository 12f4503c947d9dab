//! `eitsim` command-line interface.
//!
//! Exit codes: 0 success, 1 invalid input or config, 2 a `run --check`
//! acceptance check failed, 3 I/O or file-format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use eitsim::config::{ExperimentConfig, SourceKind};
use eitsim::detection::{
    calibrate_efficiency, count_cycles, cross_correlate, gate_integrals, hbt_arms, CorrelationTrace, CountRecord,
    DetectorParams, Gate, HbtOptions,
};
use eitsim::experiment;
use eitsim::fieldgen::{gen_chaotic_eom_with, gen_chaotic_gaussian, gen_coherent, shape_pulse, EomNoise, NoiseSpectrum};
use eitsim::io::{read_to_string, write_atomic, write_json};
use eitsim::medium::{build_medium, propagate, MediumModel};
use eitsim::stats::{fit_gaussian_g2, g2_corrected, g2_from_counts, gof_test, Family};
use eitsim::storage::{run_sequence, PulseSequence, StorageModel, DEFAULT_PROBE_RISE};
use eitsim::{Error, FieldRecord};

const EXIT_VALIDATION: u8 = 1;
const EXIT_CHECK: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "eitsim", version, about = "Slow light and storage of chaotic light in an EIT medium")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a chaotic or coherent field record.
    Gen(GenArgs),
    /// Pass a field record through the EIT medium.
    Propagate(PropagateArgs),
    /// Run one write/hold/read storage cycle on a probe record.
    Sequence(SequenceArgs),
    /// HBT intensity cross-correlation of one or two field records.
    Hbt(HbtArgs),
    /// Gated photon counting on a field record.
    Count(CountArgs),
    /// Fit a correlation trace or analyse a count record.
    Fit(FitArgs),
    /// Run a configured scenario end to end.
    Run(RunArgs),
    /// Check a config file without running it.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Eom,
    Gaussian,
    Lorentzian,
    Coherent,
}

#[derive(Clone, Copy, ValueEnum)]
enum Spectrum {
    Gaussian,
    Flat,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "eom")]
    kind: Kind,
    /// EOM noise power FWHM, or sigma for gaussian/lorentzian sources (Hz).
    #[arg(long, default_value_t = 104e3)]
    bandwidth: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    noise_spectrum: Spectrum,
    #[arg(long, default_value_t = 1.0)]
    noise_amplitude: f64,
    #[arg(long, default_value_t = 10e6)]
    sample_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    duration: f64,
    #[arg(long)]
    seed: u64,
    /// Output path; `.csv` writes `t,re,im`, anything else the binary container.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct MediumArgs {
    #[arg(long, default_value_t = 200e3)]
    eit_fwhm: f64,
    #[arg(long, default_value_t = 0.5)]
    peak_transmission: f64,
    #[arg(long, default_value_t = 6.0)]
    off_window_od: f64,
    #[arg(long, default_value_t = 1e-6)]
    group_delay: f64,
    #[arg(long, default_value_t = 0.0)]
    window_center: f64,
}

impl MediumArgs {
    fn build(&self) -> eitsim::Result<MediumModel> {
        Ok(build_medium(self.eit_fwhm, self.peak_transmission, self.off_window_od, self.group_delay)?
            .with_window_center(self.window_center))
    }
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    medium: MediumArgs,
    /// Propagate with the coupling field off (opaque medium).
    #[arg(long)]
    coupling_off: bool,
}

#[derive(Args, Clone)]
struct SequenceTiming {
    #[arg(long, default_value_t = 5e-6)]
    probe_start: f64,
    #[arg(long, default_value_t = 2e-6)]
    probe_width: f64,
    #[arg(long, default_value_t = DEFAULT_PROBE_RISE)]
    probe_rise: f64,
    #[arg(long, default_value_t = 7e-6)]
    coupling_off_time: f64,
    #[arg(long, default_value_t = 3e-6)]
    storage_duration: f64,
    #[arg(long, default_value_t = 10e-6)]
    gate_start: f64,
    #[arg(long, default_value_t = 2e-6)]
    gate_width: f64,
    #[arg(long, default_value_t = 125e-6)]
    cycle_period: f64,
}

impl SequenceTiming {
    fn sequence(&self) -> PulseSequence {
        PulseSequence {
            probe_start: self.probe_start,
            probe_width: self.probe_width,
            coupling_off_time: self.coupling_off_time,
            storage_duration: self.storage_duration,
            gate_start: self.gate_start,
            gate_width: self.gate_width,
            cycle_period: self.cycle_period,
        }
    }
}

#[derive(Args)]
struct SequenceArgs {
    /// Field record; the first cycle period is shaped into the probe.
    #[arg(long, short)]
    input: PathBuf,
    /// Output field record (leakage plus retrieved light).
    #[arg(long, short)]
    out: PathBuf,
    /// Energy ledger JSON; defaults to `<out>.ledger.json`.
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[command(flatten)]
    medium: MediumArgs,
    #[command(flatten)]
    timing: SequenceTiming,
    #[arg(long, default_value_t = 0.7)]
    write_efficiency: f64,
    #[arg(long, default_value_t = 0.7)]
    read_efficiency: f64,
    #[arg(long, default_value_t = 30e-6)]
    spin_lifetime: f64,
    #[arg(long)]
    leakage_fraction: Option<f64>,
}

#[derive(Args)]
struct HbtArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Second arm; defaults to a 50/50 split of `input`.
    #[arg(long)]
    second: Option<PathBuf>,
    #[arg(long, default_value_t = 20e-6)]
    max_tau: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_rms: f64,
    #[arg(long)]
    detector_bandwidth: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the trace normalised to its peak.
    #[arg(long)]
    normalize: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, default_value_t = 10e-6)]
    gate_start: f64,
    #[arg(long, default_value_t = 2e-6)]
    gate_width: f64,
    #[arg(long, default_value_t = 125e-6)]
    period: f64,
    /// Number of cycles; defaults to as many as the record holds.
    #[arg(long)]
    cycles: Option<usize>,
    /// Photon flux for unit envelope intensity (photons/s).
    #[arg(long, default_value_t = 1e6)]
    mean_flux: f64,
    /// Fixed detection efficiency; otherwise calibrated to `--target-mean`.
    #[arg(long)]
    efficiency: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    target_mean: f64,
    #[arg(long, default_value_t = 50e-9)]
    dead_time: f64,
    #[arg(long, default_value_t = 400.0)]
    dark_rate: f64,
    #[arg(long)]
    seed: u64,
    /// Counts CSV; the detector sidecar goes to `<out>.json`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Correlation trace CSV (`tau_s,value`).
    #[arg(long, conflicts_with = "counts")]
    correlation: Option<PathBuf>,
    /// Count record CSV with its `<counts>.json` sidecar.
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long, default_value = "bose_einstein")]
    family: String,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    /// Result JSON; printed to stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// Exit with status 2 when any acceptance check fails.
    #[arg(long)]
    check: bool,
    /// Override a config key, e.g. `--set detector.cycles=20000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Lib(Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_VALIDATION);
    }
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Propagate(a) => propagate_cmd(a),
        Command::Sequence(a) => sequence(a),
        Command::Hbt(a) => hbt(a),
        Command::Count(a) => count(a),
        Command::Fit(a) => fit(a),
        Command::Run(a) => run(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Checks(n)) => {
            eprintln!("{n} acceptance check(s) failed");
            ExitCode::from(EXIT_CHECK)
        }
    }
}

/// `EITSIM_THREADS` caps the worker pool.
fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("EITSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("EITSIM_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_field(path: &Path) -> eitsim::Result<FieldRecord> {
    if is_csv(path) {
        FieldRecord::from_csv(path, &read_to_string(path)?)
    } else {
        FieldRecord::read_binary(path)
    }
}

fn write_field(path: &Path, field: &FieldRecord) -> eitsim::Result<()> {
    if is_csv(path) {
        write_atomic(path, field.to_csv().as_bytes())
    } else {
        field.write_binary(path)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen(a: GenArgs) -> CliResult {
    let noise = EomNoise {
        spectrum: match a.noise_spectrum {
            Spectrum::Gaussian => NoiseSpectrum::Gaussian,
            Spectrum::Flat => NoiseSpectrum::Flat,
        },
        amplitude: a.noise_amplitude,
    };
    let kind = match a.kind {
        Kind::Eom => SourceKind::Eom,
        Kind::Gaussian => SourceKind::Gaussian,
        Kind::Lorentzian => SourceKind::Lorentzian,
        Kind::Coherent => SourceKind::Coherent,
    };
    let rec = match kind {
        SourceKind::Eom => gen_chaotic_eom_with(noise, a.bandwidth, a.sample_rate, a.duration, a.seed)?,
        SourceKind::Coherent => gen_coherent(a.sample_rate, a.duration)?,
        k => gen_chaotic_gaussian(k.shape(a.bandwidth).expect("chaotic kind"), a.sample_rate, a.duration, a.seed)?,
    };
    write_field(&a.out, &rec)?;
    Ok(())
}

fn propagate_cmd(a: PropagateArgs) -> CliResult {
    let field = read_field(&a.input)?;
    let medium = a.medium.build()?;
    let out = propagate(&field, &medium, !a.coupling_off)?;
    write_field(&a.out, &out)?;
    Ok(())
}

fn sequence(a: SequenceArgs) -> CliResult {
    let seq = a.timing.sequence();
    let field = read_field(&a.input)?;
    let n = (seq.cycle_period * field.sample_rate).round() as usize;
    if field.len() < n {
        return Err(Error::RecordTooShort(format!(
            "input holds {:e} s, the cycle period is {:e} s",
            field.duration(),
            seq.cycle_period
        ))
        .into());
    }
    let cycle = field.with_samples(field.samples[..n].to_vec());
    let probe = shape_pulse(&cycle, seq.probe_start, seq.probe_width, a.timing.probe_rise)?;
    let model = StorageModel {
        write_efficiency: a.write_efficiency,
        read_efficiency: a.read_efficiency,
        spin_lifetime: a.spin_lifetime,
        leakage_fraction: a.leakage_fraction,
    };
    let out = run_sequence(&probe, &a.medium.build()?, &model, &seq)?;
    write_field(&a.out, &out.field)?;
    let ledger_path = a.ledger.unwrap_or_else(|| with_suffix(&a.out, ".ledger.json"));
    write_json(
        &ledger_path,
        &json!({ "ledger": out.ledger, "relative_residual": out.ledger.relative_residual() }),
    )?;
    Ok(())
}

fn hbt(a: HbtArgs) -> CliResult {
    let first = read_field(&a.input)?;
    let second = match &a.second {
        Some(p) => read_field(p)?,
        None => first.clone(),
    };
    let opts = HbtOptions {
        noise_rms: a.noise_rms,
        bandwidth: a.detector_bandwidth,
    };
    let (i1, i2) = hbt_arms(&first, &second, &opts, a.seed);
    let trace = cross_correlate(&i1, &i2, a.max_tau)?;
    let trace = if a.normalize { trace.normalized() } else { trace };
    write_atomic(&a.out, trace.to_csv().as_bytes())?;
    Ok(())
}

fn count(a: CountArgs) -> CliResult {
    let field = read_field(&a.input)?;
    let gate = Gate {
        start: a.gate_start,
        width: a.gate_width,
        period: a.period,
    };
    let available = ((field.duration() - a.gate_start - a.gate_width) / a.period).floor() + 1.0;
    let cycles = match a.cycles {
        Some(c) => c,
        None if available >= 1.0 => available as usize,
        None => return Err(Error::RecordTooShort("record ends before the first gate closes".into()).into()),
    };
    let integrals = gate_integrals(&field, &gate, cycles)?;
    let base = DetectorParams {
        efficiency: 1.0,
        dead_time: a.dead_time,
        dark_rate: a.dark_rate,
        gate,
    };
    let efficiency = match a.efficiency {
        Some(e) => e,
        None => calibrate_efficiency(a.target_mean, &integrals, a.mean_flux, &base)?,
    };
    let params = DetectorParams { efficiency, ..base };
    let record = count_cycles(&integrals, a.mean_flux, &params, a.seed)?;
    write_atomic(&a.out, record.to_csv().as_bytes())?;
    write_json(&with_suffix(&a.out, ".json"), &record.sidecar_json())?;
    Ok(())
}

fn fit(a: FitArgs) -> CliResult {
    let result: Value = match (&a.correlation, &a.counts) {
        (Some(path), None) => {
            let trace = CorrelationTrace::from_csv(path, &read_to_string(path)?)?;
            serde_json::to_value(fit_gaussian_g2(&trace)?).expect("serialisable fit")
        }
        (None, Some(path)) => {
            let sidecar = read_to_string(&with_suffix(path, ".json"))?;
            let record = CountRecord::from_files(path, &read_to_string(path)?, &sidecar)?;
            let family: Family = a.family.parse()?;
            let raw = g2_from_counts(&record, a.bootstrap)?;
            let corrected = g2_corrected(&record, a.bootstrap)?;
            let gof = gof_test(&record, family)?;
            json!({
                "cycles": record.cycles,
                "mean": record.mean(),
                "g2_raw": raw.g2,
                "g2_raw_err": raw.g2_err,
                "g2_corrected": corrected.g2,
                "g2_corrected_err": corrected.g2_err,
                "family": family,
                "gof": { "statistic": gof.statistic, "dof": gof.dof, "p_value": gof.p_value, "nbar": gof.nbar },
            })
        }
        _ => return Err(Error::InvalidArgument("give exactly one of --correlation or --counts".into()).into()),
    };
    match &a.out {
        Some(p) => write_json(p, &result)?,
        None => println!("{}", serde_json::to_string_pretty(&result).expect("serialisable result")),
    }
    Ok(())
}

/// File values, then `--set` overrides, then the dedicated flags.
fn load_config(path: &Path, overrides: &[String], seed: Option<u64>, output_dir: Option<&Path>) -> eitsim::Result<ExperimentConfig> {
    let mut all = overrides.to_vec();
    if let Some(s) = seed {
        all.push(format!("seed={s}"));
    }
    if let Some(d) = output_dir {
        all.push(format!("output_dir={}", Value::String(d.display().to_string())));
    }
    ExperimentConfig::load(path, &all)
}

fn run(a: RunArgs) -> CliResult {
    let cfg = load_config(&a.config, &a.overrides, a.seed, a.output_dir.as_deref())?;
    let report = experiment::run(&cfg)?;
    report.write(&cfg.output_dir)?;
    let mut failed = 0;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.passed {
            failed += 1;
        }
    }
    println!("wrote {} files to {}", report.files.len() + 1, cfg.output_dir.display());
    if a.check && failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> CliResult {
    let cfg = load_config(&a.config, &a.overrides, None, None)?;
    let diagnostics = cfg.validate();
    if diagnostics.is_empty() {
        println!("ok");
        return Ok(());
    }
    for d in &diagnostics {
        println!("{d}");
    }
    Err(Error::Config(format!("{} problem(s)", diagnostics.len())).into())
}
