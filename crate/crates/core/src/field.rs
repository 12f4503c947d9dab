//! The sampled complex field envelope shared by every stage.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_numeric_csv, write_atomic};

const MAGIC: &[u8; 4] = b"EITF";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Uniformly sampled slowly-varying envelope of an optical field.
///
/// `|E|^2` is dimensionless with unit mean for freshly generated light; the
/// photon flux it stands for is `mean_flux * |E|^2` photons per second.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRecord {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub mean_flux: f64,
    pub origin_time: f64,
    pub seed_trace: Option<u64>,
}

/// Metadata that the binary container does not carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub mean_flux: f64,
    pub origin_time: f64,
    pub seed_trace: Option<u64>,
}

impl FieldRecord {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid(format!("sample_rate must be positive, got {sample_rate}")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("field record has no samples"));
        }
        Ok(FieldRecord {
            samples,
            sample_rate,
            mean_flux: 1.0,
            origin_time: 0.0,
            seed_trace: None,
        })
    }

    pub fn with_samples(&self, samples: Vec<Complex64>) -> FieldRecord {
        FieldRecord {
            samples,
            sample_rate: self.sample_rate,
            mean_flux: self.mean_flux,
            origin_time: self.origin_time,
            seed_trace: self.seed_trace,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Time of sample `i` relative to the start of the record.
    pub fn local_time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn mean_intensity(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// `sum |E|^2 dt` over the whole record.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.dt()
    }

    /// Sample index range `[a, b)` whose local times fall in `[start, end)`.
    pub fn index_range(&self, start: f64, end: f64) -> std::ops::Range<usize> {
        let n = self.samples.len();
        let a = ((start * self.sample_rate) - 1e-9).ceil().max(0.0) as usize;
        let b = ((end * self.sample_rate) - 1e-9).ceil().max(0.0) as usize;
        a.min(n)..b.min(n)
    }

    /// `sum |E|^2 dt` over samples with local time in `[start, end)`.
    pub fn window_energy(&self, start: f64, end: f64) -> f64 {
        let r = self.index_range(start, end);
        self.samples[r].iter().map(|z| z.norm_sqr()).sum::<f64>() * self.dt()
    }

    pub fn meta(&self) -> FieldMeta {
        FieldMeta {
            mean_flux: self.mean_flux,
            origin_time: self.origin_time,
            seed_trace: self.seed_trace,
        }
    }

    pub fn apply_meta(&mut self, meta: FieldMeta) {
        self.mean_flux = meta.mean_flux;
        self.origin_time = meta.origin_time;
        self.seed_trace = meta.seed_trace;
    }

    /// Binary container: `"EITF"`, `u32` version, `f64` sample rate, `u64`
    /// sample count, then interleaved `re, im` `f64` pairs, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * self.samples.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for z in &self.samples {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<FieldRecord, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("{} bytes is shorter than the header", bytes.len()));
        }
        if &bytes[0..4] != MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let sample_rate = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != count * 16 {
            return Err(format!("header announces {count} samples, body holds {} bytes", body.len()));
        }
        let samples = body
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            })
            .collect();
        FieldRecord::new(samples, sample_rate).map_err(|e| e.to_string())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read_binary(path: &Path) -> Result<FieldRecord> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        FieldRecord::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Debug export with columns `t, re, im` (absolute time).
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(48 * self.samples.len() + 16);
        s.push_str("t,re,im\n");
        for (i, z) in self.samples.iter().enumerate() {
            let t = self.origin_time + self.local_time(i);
            s.push_str(&format!("{t:e},{:e},{:e}\n", z.re, z.im));
        }
        s
    }

    pub fn from_csv(path: &Path, text: &str) -> Result<FieldRecord> {
        let rows = parse_numeric_csv(path, text, 3)?;
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if rows.len() < 2 {
            return Err(bad("need at least two samples to infer the sample rate"));
        }
        let dt = rows[1][0] - rows[0][0];
        if !(dt > 0.0) {
            return Err(bad("time column is not increasing"));
        }
        let samples = rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
        let mut rec = FieldRecord::new(samples, 1.0 / dt)?;
        rec.origin_time = rows[0][0];
        Ok(rec)
    }

    /// Intensity trace `t_s, intensity` for time-trace plots.
    pub fn intensity_csv(&self) -> String {
        let mut s = String::from("t_s,intensity\n");
        for (i, z) in self.samples.iter().enumerate() {
            s.push_str(&format!("{:e},{:e}\n", self.origin_time + self.local_time(i), z.norm_sqr()));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_empty_or_bad_rate() {
        assert!(FieldRecord::new(vec![], 1.0).is_err());
        assert!(FieldRecord::new(vec![Complex64::new(1.0, 0.0)], 0.0).is_err());
        assert!(FieldRecord::new(vec![Complex64::new(1.0, 0.0)], f64::NAN).is_err());
    }

    #[test]
    fn header_layout_is_fixed() {
        let rec = FieldRecord::new(vec![Complex64::new(1.5, -2.0)], 1e6).unwrap();
        let b = rec.to_bytes();
        assert_eq!(&b[0..4], b"EITF");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[8..16].try_into().unwrap()), 1e6);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), -2.0);
        assert_eq!(b.len(), 40);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let rec = FieldRecord::new(vec![Complex64::new(1.0, 0.0); 3], 1e6).unwrap();
        let b = rec.to_bytes();
        assert!(FieldRecord::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(FieldRecord::from_bytes(&bad).is_err());
    }

    #[test]
    fn window_energy_uses_half_open_ranges() {
        let rec = FieldRecord::new(vec![Complex64::new(1.0, 0.0); 10], 10.0).unwrap();
        assert_eq!(rec.index_range(0.2, 0.5), 2..5);
        assert!((rec.window_energy(0.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((rec.window_energy(0.2, 0.5) - 0.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn binary_round_trip(vals in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64),
                             rate in 1.0f64..1e9) {
            let samples: Vec<Complex64> = vals.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            let rec = FieldRecord::new(samples, rate).unwrap();
            let back = FieldRecord::from_bytes(&rec.to_bytes()).unwrap();
            prop_assert_eq!(back.samples, rec.samples);
            prop_assert_eq!(back.sample_rate, rec.sample_rate);
        }

        #[test]
        fn csv_round_trip(vals in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..32)) {
            let samples: Vec<Complex64> = vals.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            let rec = FieldRecord::new(samples, 1e6).unwrap();
            let back = FieldRecord::from_csv(Path::new("x.csv"), &rec.to_csv()).unwrap();
            for (a, b) in back.samples.iter().zip(&rec.samples) {
                prop_assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
            }
            prop_assert!((back.sample_rate - 1e6).abs() < 1e-3);
        }
    }
}
