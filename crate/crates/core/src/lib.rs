//! Non-invasive white-box watermarking for feedforward networks.
//!
//! Ownership is recorded in an escrowed key pair `(A, d)` plus a scaling factor
//! `alpha`, derived from a host model's mean hidden activation `fbar` over a
//! trigger set so that `delta(A (alpha * fbar - d)) == b`. The host model is
//! never modified. Extraction recomputes the activation on a suspect model and
//! compares the recovered bits against the owner's watermark.

pub mod attacks;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod extract;
pub mod host;
pub mod keygen;
pub mod numeric;
pub mod par;
pub mod registry;

pub use error::{Error, Result};
pub use extract::{extract, verify, BerReport, Verdict};
pub use host::{ModelCheckpoint, TriggerSet};
pub use keygen::{generate_keys, KeyGenConfig, SecretKeyPair, WatermarkVector};
