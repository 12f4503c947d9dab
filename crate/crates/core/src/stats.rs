//! Estimators and reference distributions for correlation traces and
//! photon-count records.

use std::f64::consts::LN_2;

use nalgebra::{Matrix3, Vector3};
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{CorrelationTrace, CountRecord, DetectorResponse};
use crate::error::{Error, Result};
use crate::rng::{child_seed, rng_from_seed};
use crate::special::{chi_square_sf, kolmogorov_sf, ln_factorial};

pub const MAX_FIT_ITERATIONS: usize = 200;
pub const DEFAULT_BOOTSTRAP: usize = 1000;
/// Smallest record accepted by the count estimators.
pub const MIN_CYCLES: usize = 100;

/// Gaussian model `amplitude * exp(-sigma^2 (tau - tau_g)^2 ln 2)` fitted to
/// a correlation trace. Parameter order in `covariance`: amplitude, sigma, tau_g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Fit {
    #[serde(rename = "sigma_hz")]
    pub sigma: f64,
    #[serde(rename = "tau_g_s")]
    pub tau_g: f64,
    pub amplitude: f64,
    pub residual_rms: f64,
    pub covariance: [[f64; 3]; 3],
    pub iterations: usize,
}

impl G2Fit {
    pub fn model(&self, tau: f64) -> f64 {
        g2_model(tau, self.amplitude, self.sigma, self.tau_g)
    }

    /// Half-width at half maximum of the model, `1 / sigma`.
    pub fn half_width(&self) -> f64 {
        1.0 / self.sigma
    }

    pub fn sigma_err(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }

    pub fn tau_g_err(&self) -> f64 {
        self.covariance[2][2].max(0.0).sqrt()
    }
}

pub fn g2_model(tau: f64, amplitude: f64, sigma: f64, tau_g: f64) -> f64 {
    let d = tau - tau_g;
    amplitude * (-sigma * sigma * d * d * LN_2).exp()
}

/// Unweighted least-squares Gaussian fit.
pub fn fit_gaussian_g2(trace: &CorrelationTrace) -> Result<G2Fit> {
    fit_gaussian_g2_weighted(trace, None)
}

/// Damped Gauss-Newton (Levenberg-Marquardt) fit with per-point weights
/// (inverse variances). `None` weights every point equally.
pub fn fit_gaussian_g2_weighted(trace: &CorrelationTrace, weights: Option<&[f64]>) -> Result<G2Fit> {
    let tau = &trace.tau_grid;
    let y = &trace.values;
    let n = tau.len();
    if y.len() != n {
        return Err(Error::invalid("tau grid and values differ in length"));
    }
    if let Some(w) = weights {
        if w.len() != n || w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid("weights must be finite, non-negative and match the trace"));
        }
    }
    if n < 4 {
        return Err(Error::InsufficientData(format!("{n} points cannot constrain three parameters")));
    }
    if y.iter().chain(tau).any(|v| !v.is_finite()) {
        return Err(Error::invalid("trace contains non-finite values"));
    }

    let (ipk, &peak) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty trace");
    let t0 = tau[ipk];
    let sigma0 = initial_sigma(tau, y, ipk);
    let noise = noise_floor(tau, y, t0, sigma0);
    if !(peak > 5.0 * noise) || peak <= 0.0 {
        return Err(Error::NoPeak { peak, noise });
    }

    // work in units where the initial width is one
    let scale = 1.0 / sigma0;
    let u: Vec<f64> = tau.iter().map(|t| (t - t0) / scale).collect();
    let w: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let cost = |p: &Vector3<f64>| -> f64 {
        u.iter()
            .zip(y)
            .zip(&w)
            .map(|((&ui, &yi), &wi)| {
                let r = yi - g2_model(ui, p[0], p[1], p[2]);
                wi * r * r
            })
            .sum()
    };

    let mut p = Vector3::new(peak, 1.0, 0.0);
    let mut c = cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut normal = Matrix3::zeros();
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for ((&ui, &yi), &wi) in u.iter().zip(y).zip(&w) {
            let d = ui - p[2];
            let e = (-p[1] * p[1] * d * d * LN_2).exp();
            let f = p[0] * e;
            let j = Vector3::new(e, -2.0 * p[1] * d * d * LN_2 * f, 2.0 * p[1] * p[1] * d * LN_2 * f);
            h += wi * j * j.transpose();
            g += wi * (yi - f) * j;
        }
        normal = h;
        if c == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let mut damped = h;
            for k in 0..3 {
                damped[(k, k)] *= 1.0 + lambda;
            }
            let Some(step) = damped.lu().solve(&g) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let ct = if trial[1] > 0.0 { cost(&trial) } else { f64::INFINITY };
            if ct <= c {
                let small = step.iter().zip(trial.iter()).all(|(s, q)| s.abs() <= 1e-12 * q.abs().max(1e-3));
                let flat = c - ct <= 1e-15 * c;
                p = trial;
                c = ct;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small || flat {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: already at the minimum
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::FitDidNotConverge(MAX_FIT_ITERATIONS));
    }

    let dof = (n - 3) as f64;
    let wsum: f64 = w.iter().sum();
    let s2 = c / dof;
    let cov_scaled = normal.try_inverse().unwrap_or_else(|| Matrix3::from_element(f64::NAN)) * s2;
    // back to physical units: (A, s / scale, t0 + u_g * scale)
    let jac = Vector3::new(1.0, 1.0 / scale, scale);
    let mut covariance = [[0.0; 3]; 3];
    for (a, row) in covariance.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = cov_scaled[(a, b)] * jac[a] * jac[b];
        }
    }
    Ok(G2Fit {
        sigma: p[1] / scale,
        tau_g: t0 + p[2] * scale,
        amplitude: p[0],
        residual_rms: (c / wsum).sqrt(),
        covariance,
        iterations,
    })
}

/// Width guess from the second moment of the positive lobe around the peak.
fn initial_sigma(tau: &[f64], y: &[f64], ipk: usize) -> f64 {
    let mut lo = ipk;
    while lo > 0 && y[lo - 1] > 0.0 {
        lo -= 1;
    }
    let mut hi = ipk;
    while hi + 1 < y.len() && y[hi + 1] > 0.0 {
        hi += 1;
    }
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in lo..=hi {
        m0 += y[i];
        m1 += y[i] * tau[i];
        m2 += y[i] * tau[i] * tau[i];
    }
    let var = m2 / m0 - (m1 / m0).powi(2);
    let dt = if tau.len() > 1 {
        (tau[tau.len() - 1] - tau[0]).abs() / (tau.len() - 1) as f64
    } else {
        1.0
    };
    // a Gaussian of this model has variance 1 / (2 sigma^2 ln 2)
    if var > dt * dt {
        1.0 / (2.0 * LN_2 * var).sqrt()
    } else {
        1.0 / dt
    }
}

/// RMS of the trace well away from the peak, or the first-difference
/// estimate when the trace has no such region.
fn noise_floor(tau: &[f64], y: &[f64], t0: f64, sigma0: f64) -> f64 {
    let outer: Vec<f64> = tau
        .iter()
        .zip(y)
        .filter(|(t, _)| (*t - t0).abs() * sigma0 > 3.0)
        .map(|(_, v)| *v)
        .collect();
    if outer.len() >= 10 {
        let mean = outer.iter().sum::<f64>() / outer.len() as f64;
        return (outer.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / outer.len() as f64).sqrt();
    }
    let diffs: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    let d2 = diffs.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / diffs.len().saturating_sub(1).max(1) as f64;
    // second differences of white noise have variance 6 s^2
    (d2 / 6.0).sqrt()
}

fn check_pmf_args(nbar: f64) -> Result<()> {
    if !(nbar >= 0.0 && nbar.is_finite()) {
        return Err(Error::invalid(format!("mean must be finite and non-negative, got {nbar}")));
    }
    Ok(())
}

pub fn poisson_pmf(nbar: f64, n: u64) -> Result<f64> {
    check_pmf_args(nbar)?;
    if nbar == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    Ok((n as f64 * nbar.ln() - nbar - ln_factorial(n as usize)).exp())
}

pub fn bose_einstein_pmf(nbar: f64, n: u64) -> Result<f64> {
    check_pmf_args(nbar)?;
    if nbar == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    Ok((n as f64 * nbar.ln() - (n as f64 + 1.0) * nbar.ln_1p()).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    BoseEinstein,
}

impl Family {
    pub fn pmf(self, nbar: f64, n: u64) -> Result<f64> {
        match self {
            Family::Poisson => poisson_pmf(nbar, n),
            Family::BoseEinstein => bose_einstein_pmf(nbar, n),
        }
    }

    /// PMF on `0..` until the remaining tail is below `tail`.
    pub fn table(self, nbar: f64, tail: f64) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        let mut n = 0u64;
        loop {
            let p = self.pmf(nbar, n)?;
            out.push(p);
            acc += p;
            n += 1;
            if (1.0 - acc <= tail && n as f64 > nbar) || n > 100_000 {
                return Ok(out);
            }
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Family> {
        match s {
            "poisson" => Ok(Family::Poisson),
            "bose_einstein" | "bose-einstein" | "be" => Ok(Family::BoseEinstein),
            other => Err(Error::invalid(format!("unknown family {other:?} (poisson, bose_einstein)"))),
        }
    }
}

/// Moment statistics of a count record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub nbar: f64,
    pub var: f64,
    pub g2: f64,
    pub g2_err: f64,
    pub histogram: Vec<f64>,
    pub cycles: usize,
}

impl CountStats {
    /// CSV with columns `n, p_emp, p_model`.
    pub fn histogram_csv(&self, model: &[f64]) -> String {
        let mut s = String::from("n,p_emp,p_model\n");
        let len = self.histogram.len().max(model.len().min(self.histogram.len() + 5));
        for n in 0..len {
            let e = self.histogram.get(n).copied().unwrap_or(0.0);
            let m = model.get(n).copied().unwrap_or(0.0);
            s.push_str(&format!("{n},{e:e},{m:e}\n"));
        }
        s
    }
}

fn histogram_counts(counts: &[u32]) -> Vec<u64> {
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut h = vec![0u64; max + 1];
    for &c in counts {
        h[c as usize] += 1;
    }
    h
}

/// `(nbar, var, g2)` of a normalised PMF.
fn pmf_moments(p: &[f64]) -> (f64, f64, f64) {
    let m1: f64 = p.iter().enumerate().map(|(n, q)| n as f64 * q).sum();
    let m2: f64 = p.iter().enumerate().map(|(n, q)| (n * n) as f64 * q).sum();
    let var = m2 - m1 * m1;
    (m1, var, 1.0 + (var - m1) / (m1 * m1))
}

fn histogram_seed(h: &[u64]) -> u64 {
    h.iter()
        .enumerate()
        .fold(0x5eed_u64, |acc, (n, &c)| child_seed(acc ^ c, n as u64))
}

/// Multinomial resample of `total` cycles from bin counts `h`.
fn resample(h: &[u64], total: u64, seed: u64) -> Vec<u64> {
    let mut rng = rng_from_seed(seed);
    let mut left = total;
    let mut mass_left = total as f64;
    let mut out = vec![0u64; h.len()];
    for (i, &c) in h.iter().enumerate() {
        if left == 0 || mass_left <= 0.0 {
            break;
        }
        let p = (c as f64 / mass_left).min(1.0);
        let k = if p >= 1.0 {
            left
        } else {
            Binomial::new(left, p).expect("valid binomial").sample(&mut rng)
        };
        out[i] = k;
        left -= k;
        mass_left -= c as f64;
    }
    out
}

fn to_pmf(h: &[u64], total: u64) -> Vec<f64> {
    h.iter().map(|&c| c as f64 / total as f64).collect()
}

fn count_stats_with(
    record: &CountRecord,
    resamples: usize,
    transform: impl Fn(Vec<f64>) -> Vec<f64> + Sync,
) -> Result<CountStats> {
    let total = record.counts.len();
    if total < MIN_CYCLES {
        return Err(Error::InsufficientData(format!("{total} cycles, need at least {MIN_CYCLES}")));
    }
    if record.counts.iter().all(|&c| c == 0) {
        return Err(Error::AllZeroCounts);
    }
    let h = histogram_counts(&record.counts);
    let histogram = transform(to_pmf(&h, total as u64));
    let (nbar, var, g2) = pmf_moments(&histogram);
    let g2_err = if resamples >= 2 {
        let seed = histogram_seed(&h);
        let samples: Vec<f64> = (0..resamples)
            .into_par_iter()
            .map(|i| {
                let r = resample(&h, total as u64, child_seed(seed, i as u64));
                pmf_moments(&transform(to_pmf(&r, total as u64))).2
            })
            .filter(|g| g.is_finite())
            .collect();
        let m = samples.iter().sum::<f64>() / samples.len() as f64;
        (samples.iter().map(|g| (g - m).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(CountStats {
        nbar,
        var,
        g2,
        g2_err,
        histogram,
        cycles: total,
    })
}

/// Moment estimator `g2 = 1 + (var - nbar) / nbar^2` on the registered
/// counts, with a bootstrap standard error.
pub fn g2_from_counts(record: &CountRecord, bootstrap_resamples: usize) -> Result<CountStats> {
    count_stats_with(record, bootstrap_resamples, |p| p)
}

/// Same estimator after undoing dark counts and dead time with the exact
/// detector response stored in the record.
pub fn g2_corrected(record: &CountRecord, bootstrap_resamples: usize) -> Result<CountStats> {
    record.params.validate()?;
    let response = record.params.response();
    count_stats_with(record, bootstrap_resamples, move |p| {
        let mut q = response.deconvolve(&p);
        let s: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= s);
        q
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
    /// fitted signal mean of the family before the detector
    pub nbar: f64,
    /// expected registered-count distribution under the fitted model
    pub model: Vec<f64>,
}

/// Registered-count distribution when the signal photoelectrons follow `family`.
pub fn registered_model(family: Family, nbar: f64, response: &DetectorResponse) -> Result<Vec<f64>> {
    let signal = family.table(nbar, 1e-14)?;
    Ok(response.registered_pmf(&signal))
}

/// Pearson chi-square test of the registered counts against `family` seen
/// through the record's detector. The family mean is fitted by matching the
/// observed mean; tail bins are pooled until every expected count is >= 5.
pub fn gof_test(record: &CountRecord, family: Family) -> Result<GofResult> {
    record.params.validate()?;
    let total = record.counts.len();
    if total < MIN_CYCLES {
        return Err(Error::InsufficientData(format!("{total} cycles, need at least {MIN_CYCLES}")));
    }
    let response = record.params.response();
    let observed_mean = record.mean();
    let nbar = fit_family_mean(family, observed_mean, &response)?;
    let model = registered_model(family, nbar, &response)?;
    let h = histogram_counts(&record.counts);
    let (statistic, dof) = pearson(&h, &model, total as f64)?;
    Ok(GofResult {
        statistic,
        p_value: chi_square_sf(statistic, dof),
        dof,
        nbar,
        model,
    })
}

fn fit_family_mean(family: Family, target: f64, response: &DetectorResponse) -> Result<f64> {
    let floor = response.dark_mean;
    if target <= 0.0 {
        return Err(Error::AllZeroCounts);
    }
    if response.is_ideal() {
        return Ok(target);
    }
    let mean_of = |nbar: f64| -> Result<f64> {
        let m = registered_model(family, nbar, response)?;
        Ok(m.iter().enumerate().map(|(n, p)| n as f64 * p).sum())
    };
    if target <= mean_of(0.0)? {
        return Ok(0.0);
    }
    let mut hi = (target - floor).max(1e-3);
    let mut grow = 0;
    while mean_of(hi)? < target {
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::Unreachable(format!(
                "no {family:?} mean reproduces {target} registered counts"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_of(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pearson statistic with greedy left-to-right pooling to expected >= 5.
/// The last group absorbs the model tail. Returns `(statistic, dof)` with
/// one degree removed for the fitted mean.
fn pearson(h: &[u64], model: &[f64], total: f64) -> Result<(f64, usize)> {
    let len = h.len().max(model.len());
    let obs = |n: usize| h.get(n).copied().unwrap_or(0) as f64;
    let exp = |n: usize| model.get(n).copied().unwrap_or(0.0) * total;
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for n in 0..len {
        o += obs(n);
        e += exp(n);
        if e >= 5.0 {
            groups.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    // anything beyond the model table
    e += total - model.iter().sum::<f64>() * total;
    if let Some(last) = groups.last_mut() {
        last.0 += o;
        last.1 += e.max(0.0);
    }
    if groups.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "only {} bins with expected count >= 5",
            groups.len()
        )));
    }
    let stat = groups.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    Ok((stat, groups.len() - 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov-Smirnov test against an exponential distribution of
/// the given mean. Samples must be independent; thin correlated series first.
pub fn ks_exponential(samples: &[f64], mean: f64) -> Result<KsResult> {
    if samples.len() < 10 {
        return Err(Error::InsufficientData(format!("{} samples", samples.len())));
    }
    if !(mean > 0.0) {
        return Err(Error::invalid(format!("mean must be positive, got {mean}")));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let cdf = 1.0 - (-v.max(0.0) / mean).exp();
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    // Stephens' finite-n correction
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        n: x.len(),
    })
}

/// Least-squares fit of `a * exp(-t / lifetime)` on log values. Returns `(a, lifetime)`.
pub fn fit_exponential_decay(times: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::InsufficientData("need at least two (time, value) pairs".into()));
    }
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("decay values must be positive"));
    }
    let n = times.len() as f64;
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mt = times.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
    let sxy: f64 = times.iter().zip(&ly).map(|(t, y)| (t - mt) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("decay times must not all be equal"));
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(Error::invalid("values do not decay"));
    }
    Ok(((my - slope * mt).exp(), -1.0 / slope))
}
