//! Watermark extraction from a suspect model and the BER verdict.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::host::{mean_activation, ModelCheckpoint, TriggerSet};
use crate::keygen::{SecretKeyPair, WatermarkVector};
use crate::numeric::{ber, delta_vec, matvec, BitVector, Matrix, RealVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TriggerPolicy {
    /// Refuse a trigger set whose digest differs from the key record.
    #[default]
    Strict,
    /// Log a warning and extract anyway.
    Override,
}

/// `delta(A (alpha * f - d))`
pub fn extract_from_activation(
    a: &Matrix,
    d: &RealVector,
    alpha: f64,
    activation: &RealVector,
) -> Result<BitVector> {
    let shifted = activation.axpby(alpha, d, -1.0)?;
    Ok(delta_vec(&matvec(a, &shifted)?))
}

fn check_layer(suspect: &ModelCheckpoint, layer: usize, width: usize) -> Result<()> {
    let arch = suspect.architecture();
    let found = arch.width(layer).map_err(|_| {
        Error::IncompatibleArchitecture(format!(
            "key targets hidden layer {layer}, suspect has {} hidden layers",
            arch.hidden_layers()
        ))
    })?;
    if found != width {
        return Err(Error::IncompatibleArchitecture(format!(
            "layer {layer} has width {found}, key expects {width}"
        )));
    }
    Ok(())
}

pub fn extract(suspect: &ModelCheckpoint, trigger: &TriggerSet, keys: &SecretKeyPair) -> Result<BitVector> {
    extract_with(suspect, trigger, keys, TriggerPolicy::Strict)
}

pub fn extract_with(
    suspect: &ModelCheckpoint,
    trigger: &TriggerSet,
    keys: &SecretKeyPair,
    policy: TriggerPolicy,
) -> Result<BitVector> {
    if trigger.digest() != keys.trigger_digest {
        match policy {
            TriggerPolicy::Strict => return Err(Error::TriggerMismatch),
            TriggerPolicy::Override => {
                log::warn!("trigger set digest differs from key record; extracting anyway")
            }
        }
    }
    check_layer(suspect, keys.layer, keys.width())?;
    let fhat = mean_activation(suspect, trigger, keys.layer)?;
    extract_from_activation(&keys.a, &keys.d, keys.alpha, &fhat.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Copy,
    NotCopy,
}

impl Verdict {
    pub fn from_ber(ber: f64, theta: f64) -> Self {
        if ber <= theta {
            Verdict::Copy
        } else {
            Verdict::NotCopy
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Copy => "copy",
            Verdict::NotCopy => "not-copy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub key_id: Option<String>,
    pub suspect_fingerprint: Option<String>,
    /// Extracted watermark as MSB-first hex.
    pub extracted: String,
    pub bits: usize,
    pub mismatches: usize,
    pub ber: f64,
    pub theta: f64,
    pub verdict: Verdict,
}

impl BerReport {
    pub fn extracted_bits(&self) -> Result<BitVector> {
        let bytes = hex::decode(&self.extracted).map_err(|e| Error::Decode(e.to_string()))?;
        BitVector::from_packed(&bytes, self.bits)
    }

    pub fn with_provenance(mut self, key_id: impl Into<String>, fingerprint: impl Into<String>) -> Self {
        self.key_id = Some(key_id.into());
        self.suspect_fingerprint = Some(fingerprint.into());
        self
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: &Option<String>| v.clone().unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "key-id: {}", opt(&self.key_id));
        let _ = writeln!(out, "suspect-fingerprint: {}", opt(&self.suspect_fingerprint));
        let _ = writeln!(out, "bits: {}", self.bits);
        let _ = writeln!(out, "mismatches: {}", self.mismatches);
        let _ = writeln!(out, "ber: {}", self.ber);
        let _ = writeln!(out, "theta: {}", self.theta);
        let _ = writeln!(out, "verdict: {}", self.verdict.as_str());
        let _ = writeln!(out, "extracted: {}", self.extracted);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Compares `b` against `bhat`; `ber <= theta` is a copy.
pub fn verify(b: &WatermarkVector, bhat: &BitVector, theta: f64) -> Result<BerReport> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("theta {theta} outside [0, 1]")));
    }
    let mismatches = b.bits().hamming(bhat)?;
    let rate = ber(b.bits(), bhat)?;
    Ok(BerReport {
        key_id: None,
        suspect_fingerprint: None,
        extracted: hex::encode(bhat.to_packed()),
        bits: bhat.len(),
        mismatches,
        ber: rate,
        theta,
        verdict: Verdict::from_ber(rate, theta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wm(bits: &[u8]) -> WatermarkVector {
        WatermarkVector::new(BitVector::from_u8s(bits).unwrap()).unwrap()
    }

    #[test]
    fn verdict_boundary_and_examples() {
        assert_eq!(Verdict::from_ber(0.0, 0.25), Verdict::Copy);
        assert_eq!(Verdict::from_ber(0.4805, 0.25), Verdict::NotCopy);
        assert_eq!(Verdict::from_ber(0.25, 0.25), Verdict::Copy);
    }

    #[test]
    fn verify_counts_mismatches() {
        let b = wm(&[1, 0, 1, 1, 0, 0, 1, 0]);
        let bhat = BitVector::from_u8s(&[1, 0, 1, 1, 0, 0, 0, 1]).unwrap();
        let r = verify(&b, &bhat, 0.25).unwrap();
        assert_eq!(r.mismatches, 2);
        assert_eq!(r.ber, 0.25);
        assert_eq!(r.verdict, Verdict::Copy);
        assert_eq!(r.extracted_bits().unwrap(), bhat);
        let r = verify(&b, &bhat, 0.2).unwrap();
        assert_eq!(r.verdict, Verdict::NotCopy);
        assert!(verify(&b, &BitVector::new(vec![true]), 0.2).is_err());
        assert!(verify(&b, &bhat, 1.5).is_err());
    }

    #[test]
    fn report_formats_carry_fields() {
        let b = wm(&[1, 0, 1, 1, 0, 0, 1, 0]);
        let r = verify(&b, b.bits(), 0.25).unwrap().with_provenance("kid", "fp");
        let text = r.to_text();
        assert!(text.contains("key-id: kid"));
        assert!(text.contains("verdict: copy"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["verdict"], "copy");
        assert_eq!(json["suspect_fingerprint"], "fp");
        assert_eq!(json["ber"], 0.0);
    }

    #[test]
    fn verdict_monotone_in_theta() {
        for mism in 0..=8usize {
            let rate = mism as f64 / 8.0;
            let mut seen_copy = false;
            for t in 0..=20 {
                let v = Verdict::from_ber(rate, t as f64 / 20.0);
                if seen_copy {
                    assert_eq!(v, Verdict::Copy);
                }
                seen_copy |= v == Verdict::Copy;
            }
        }
    }
}
