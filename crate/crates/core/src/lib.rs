//! Numerical simulator for slow-light propagation, storage and retrieval of
//! chaotic and coherent light in an EIT medium, together with the
//! Hanbury-Brown–Twiss and photon-counting measurement chains used to
//! characterise the light.
//!
//! The crate is organised along the measurement pipeline:
//!
//! * [`fieldgen`]: chaotic (pseudo-thermal) and coherent field envelopes, pulse shaping.
//! * [`medium`]: the EIT transparency window as a causal linear filter.
//! * [`storage`]: write / hold / read pulse sequence on top of the medium.
//! * [`detection`]: HBT intensity correlator and gated photon counting.
//! * [`stats`]: reference distributions, estimators and goodness-of-fit.
//! * [`experiment`]: config-driven scenarios that chain the stages together.
//!
//! Envelopes are normalised to unit mean intensity; the physical photon flux
//! is carried separately (`mean_flux`) and only enters at detection.

pub mod config;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod field;
pub mod fieldgen;
pub mod io;
pub mod medium;
pub mod rng;
pub mod special;
pub mod spectrum;
pub mod stats;
pub mod storage;

pub use error::{Error, Result};
pub use field::FieldRecord;
