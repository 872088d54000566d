//! Secret-key derivation: the matrix `A` that maps the auxiliary vector onto the
//! watermark, and the offset `d` with its scaling factor.

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, sha256_hex, ByteReader, ByteWriter, Decode, Encode};
use crate::error::{Error, Result};
use crate::host::{mean_activation, ActivationVector, ModelCheckpoint, TriggerSet};
use crate::numeric::{
    delta, delta_vec, dot, matvec, sample_gaussian_vector, sigmoid, BitVector, Matrix,
    RealVector, SeededRng,
};

pub const MIN_WATERMARK_BITS: usize = 8;
pub const DEFAULT_WATERMARK_BITS: usize = 512;

const STREAM_AUX: u64 = 1;
const STREAM_MATRIX: u64 = 2;

/// The owner's secret message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkVector(BitVector);

impl WatermarkVector {
    pub fn new(bits: BitVector) -> Result<Self> {
        if bits.len() < MIN_WATERMARK_BITS {
            return Err(Error::InvalidArgument(format!(
                "watermark needs at least {MIN_WATERMARK_BITS} bits, got {}",
                bits.len()
            )));
        }
        Ok(Self(bits))
    }

    pub fn random(len: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::new(BitVector::new((0..len).map(|_| rng.next_u64() >> 63 == 1).collect()))
    }

    pub fn bits(&self) -> &BitVector {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lowercase hex, two characters per byte, most significant bit first.
    pub fn to_hex(&self) -> String {
        hex::encode(self.0.to_packed())
    }

    pub fn from_hex(text: &str) -> Result<Self> {
        let bytes = hex::decode(text.trim())
            .map_err(|e| Error::InvalidArgument(format!("watermark hex: {e}")))?;
        Self::new(BitVector::from_packed(&bytes, bytes.len() * 8)?)
    }

    /// Like [`from_hex`](Self::from_hex) for lengths that are not a multiple of 8;
    /// padding bits must be zero.
    pub fn from_hex_len(text: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(text.trim())
            .map_err(|e| Error::InvalidArgument(format!("watermark hex: {e}")))?;
        let bits = BitVector::from_packed(&bytes, len)?;
        if bits.to_packed() != bytes {
            return Err(Error::InvalidArgument(format!(
                "watermark hex does not encode exactly {len} bits"
            )));
        }
        Self::new(bits)
    }

    /// SHA-256 over `u32 LE bit count || packed bits`.
    pub fn commitment(&self) -> [u8; 32] {
        let mut w = ByteWriter::new();
        w.put_u32(self.0.len() as u32);
        w.put_bytes(&self.0.to_packed());
        sha256(&w.into_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyGenConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub margin: f64,
    pub theta: f64,
    pub alpha_init: f64,
    pub alpha_step: f64,
    pub alpha_max: f64,
    pub seed: u64,
}

impl Default for KeyGenConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_iters: 1000,
            margin: 1.0,
            theta: 0.25,
            alpha_init: 1.0,
            alpha_step: 0.5,
            alpha_max: 16.0,
            seed: 0,
        }
    }
}

impl KeyGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be > 0");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be >= 0");
        }
        if !(self.theta > 0.0 && self.theta < 0.5) {
            return bad("theta must lie strictly between 0 and 0.5");
        }
        if !(self.alpha_step > 0.0 && self.alpha_init.is_finite() && self.alpha_max >= self.alpha_init) {
            return bad("alpha search needs step > 0 and max >= init");
        }
        Ok(())
    }

    fn encode_into(&self, w: &mut ByteWriter) {
        w.put_f64(self.learning_rate);
        w.put_u64(self.max_iters as u64);
        w.put_f64(self.margin);
        w.put_f64(self.theta);
        w.put_f64(self.alpha_init);
        w.put_f64(self.alpha_step);
        w.put_f64(self.alpha_max);
        w.put_u64(self.seed);
    }

    fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        Ok(Self {
            learning_rate: r.f64()?,
            max_iters: r.usize()?,
            margin: r.f64()?,
            theta: r.f64()?,
            alpha_init: r.f64()?,
            alpha_step: r.f64()?,
            alpha_max: r.f64()?,
            seed: r.u64()?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DerivedMatrix {
    pub matrix: Matrix,
    /// Gradient steps taken before the exact sign pattern and margin held.
    pub iterations: usize,
    pub min_margin: f64,
}

fn unsatisfied_rows(pre: &[f64], b: &BitVector, margin: f64) -> usize {
    pre.iter()
        .zip(b.bits())
        .filter(|&(&z, &bit)| delta(z) != bit || z.abs() < margin)
        .count()
}

/// Gradient descent on `sum_i softplus(m - s_i (A mu)_i)`, `s_i = +1` for a one
/// bit and `-1` for a zero bit, until `delta(A mu) == b` with `|(A mu)_i| >= m`.
///
/// `A` starts from i.i.d. standard normals drawn from the matrix stream of
/// `cfg.seed`. Rows whose sign already matches keep their random direction, which
/// keeps extraction from unrelated models close to a coin flip.
pub fn derive_matrix(b: &WatermarkVector, mu: &RealVector, cfg: &KeyGenConfig) -> Result<DerivedMatrix> {
    let mut rng = SeededRng::new(cfg.seed).split(STREAM_MATRIX);
    derive_matrix_from(b, mu, cfg, &mut rng)
}

fn derive_matrix_from(
    b: &WatermarkVector,
    mu: &RealVector,
    cfg: &KeyGenConfig,
    rng: &mut SeededRng,
) -> Result<DerivedMatrix> {
    cfg.validate()?;
    let m = mu.len();
    if m < 8 {
        return Err(Error::InvalidArgument(format!("auxiliary length {m} < 8")));
    }
    if mu.is_zero() {
        return Err(Error::ZeroAuxiliary);
    }
    let n = b.len();
    let mut a = Matrix::gaussian(n, m, 1.0, rng);
    let mu = mu.as_slice();
    let mut pre: Vec<f64> = a.iter_rows().map(|row| dot(row, mu)).collect();
    let mut iterations = 0;
    loop {
        let open = unsatisfied_rows(&pre, b.bits(), cfg.margin);
        if open == 0 {
            break;
        }
        if iterations == cfg.max_iters {
            return Err(Error::NonConvergence {
                iterations,
                mismatches: open,
            });
        }
        for (i, &bit) in b.bits().bits().iter().enumerate() {
            let sign = if bit { 1.0 } else { -1.0 };
            // d/dA_i softplus(m - s z_i) = -sigmoid(m - s z_i) * s * mu
            let weight = cfg.learning_rate * sigmoid(cfg.margin - sign * pre[i]) * sign;
            for (aij, &mj) in a.row_mut(i).iter_mut().zip(mu) {
                *aij += weight * mj;
            }
            pre[i] = dot(a.row(i), mu);
        }
        iterations += 1;
    }
    let min_margin = pre.iter().fold(f64::INFINITY, |acc, z| acc.min(z.abs()));
    Ok(DerivedMatrix {
        matrix: Matrix::new(n, m, a.as_slice().to_vec())?,
        iterations,
        min_margin,
    })
}

/// `||delta(A d) - b||_1`
pub fn offset_mismatches(a: &Matrix, d: &RealVector, b: &WatermarkVector) -> Result<usize> {
    delta_vec(&matvec(a, d)?).hamming(b.bits())
}

/// Scans `alpha = init, init + step, ...` up to `max` and returns the first
/// `(d, alpha)` with `d = alpha * fbar - mu` and at least `theta * N`
/// mismatches between `delta(A d)` and `b`.
pub fn derive_d_and_alpha(
    a: &Matrix,
    mu: &RealVector,
    fbar: &ActivationVector,
    b: &WatermarkVector,
    cfg: &KeyGenConfig,
) -> Result<(RealVector, f64)> {
    cfg.validate()?;
    if fbar.len() != mu.len() || mu.len() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "activation {} / auxiliary {} / key columns {}",
            fbar.len(),
            mu.len(),
            a.cols()
        )));
    }
    if a.rows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "key has {} rows for a {}-bit watermark",
            a.rows(),
            b.len()
        )));
    }
    if fbar.values.is_zero() {
        return Err(Error::DegenerateActivation);
    }
    let required = cfg.theta * b.len() as f64;
    let mut k = 0u32;
    loop {
        let alpha = cfg.alpha_init + f64::from(k) * cfg.alpha_step;
        if alpha > cfg.alpha_max + 1e-12 {
            return Err(Error::AlphaSearchExhausted {
                from: cfg.alpha_init,
                to: cfg.alpha_max,
            });
        }
        let d = fbar.values.axpby(alpha, mu, -1.0)?;
        if offset_mismatches(a, &d, b)? as f64 >= required {
            return Ok((d, alpha));
        }
        k += 1;
    }
}

pub const KEY_MAGIC: &[u8; 4] = b"FMKY";
pub const KEY_VERSION: u16 = 1;

/// The escrowed key material.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretKeyPair {
    pub a: Matrix,
    pub d: RealVector,
    pub alpha: f64,
    pub layer: usize,
    pub trigger_digest: [u8; 32],
    pub watermark_commitment: [u8; 32],
    pub config: KeyGenConfig,
}

impl SecretKeyPair {
    pub fn bits(&self) -> usize {
        self.a.rows()
    }

    pub fn width(&self) -> usize {
        self.d.len()
    }

    /// Content hash of the serialized pair, lowercase hex.
    pub fn key_id(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    /// Re-checks the offset security constraint for a presented watermark.
    pub fn satisfies_offset_constraint(&self, b: &WatermarkVector) -> Result<bool> {
        Ok(offset_mismatches(&self.a, &self.d, b)? as f64 >= self.config.theta * b.len() as f64)
    }
}

impl Encode for SecretKeyPair {
    fn encode_into(&self, w: &mut ByteWriter) {
        w.put_bytes(KEY_MAGIC);
        w.put_u16(KEY_VERSION);
        w.put_u64(self.a.rows() as u64);
        w.put_u64(self.a.cols() as u64);
        w.put_u64(self.layer as u64);
        w.put_f64(self.alpha);
        self.a.encode_into(w);
        self.d.encode_into(w);
        w.put_bytes(&self.trigger_digest);
        w.put_bytes(&self.watermark_commitment);
        self.config.encode_into(w);
    }
}

impl Decode for SecretKeyPair {
    fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(KEY_MAGIC)?;
        let version = r.u16()?;
        if version != KEY_VERSION {
            return Err(Error::Decode(format!("unsupported key version {version}")));
        }
        let n = r.usize()?;
        let m = r.usize()?;
        let layer = r.usize()?;
        let alpha = r.f64()?;
        let a = Matrix::decode_from(r)?;
        let d = RealVector::decode_from(r)?;
        if a.rows() != n || a.cols() != m || d.len() != m {
            return Err(Error::Decode("key dimensions disagree with header".into()));
        }
        Ok(Self {
            a,
            d,
            alpha,
            layer,
            trigger_digest: r.take(32)?.try_into().unwrap(),
            watermark_commitment: r.take(32)?.try_into().unwrap(),
            config: KeyGenConfig::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct KeyGenOutcome {
    pub keys: SecretKeyPair,
    pub activation: ActivationVector,
    pub iterations: usize,
    pub min_margin: f64,
}

/// Derives a key pair for `b` from the host's mean activation at `layer`.
/// Takes the model by shared reference only; nothing about it is written.
pub fn generate_keys(
    model: &ModelCheckpoint,
    trigger: &TriggerSet,
    layer: usize,
    b: &WatermarkVector,
    cfg: &KeyGenConfig,
) -> Result<KeyGenOutcome> {
    cfg.validate()?;
    let fbar = mean_activation(model, trigger, layer)?;
    let root = SeededRng::new(cfg.seed);
    let mu = sample_gaussian_vector(&mut root.split(STREAM_AUX), fbar.len())?;
    let derived = derive_matrix_from(b, &mu, cfg, &mut root.split(STREAM_MATRIX))?;
    let (d, alpha) = derive_d_and_alpha(&derived.matrix, &mu, &fbar, b, cfg)?;
    Ok(KeyGenOutcome {
        keys: SecretKeyPair {
            a: derived.matrix,
            d,
            alpha,
            layer,
            trigger_digest: trigger.digest(),
            watermark_commitment: b.commitment(),
            config: cfg.clone(),
        },
        activation: fbar,
        iterations: derived.iterations,
        min_margin: derived.min_margin,
    })
}

/// The auxiliary vector `generate_keys` draws for a given config and width.
pub fn auxiliary_vector(cfg: &KeyGenConfig, width: usize) -> Result<RealVector> {
    sample_gaussian_vector(&mut SeededRng::new(cfg.seed).split(STREAM_AUX), width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::ber;
    use proptest::prelude::*;

    fn bits(n: usize, seed: u64) -> WatermarkVector {
        WatermarkVector::random(n, &mut SeededRng::new(seed)).unwrap()
    }

    fn activation(values: Vec<f64>) -> ActivationVector {
        ActivationVector {
            layer: 0,
            values: RealVector::new(values).unwrap(),
        }
    }

    #[test]
    fn pinned_solver_case_converges_within_ceiling() {
        let cfg = KeyGenConfig::default();
        let mu = auxiliary_vector(&cfg, 32).unwrap();
        let b = bits(512, 0);
        let out = derive_matrix(&b, &mu, &cfg).unwrap();
        // observed: 10 iterations
        assert!(out.iterations <= 10, "took {}", out.iterations);
        assert!(out.min_margin >= 1.0);
        let pre = matvec(&out.matrix, &mu).unwrap();
        assert_eq!(delta_vec(&pre), *b.bits());
        assert!(pre.as_slice().iter().all(|z| z.abs() >= 1.0));
    }

    #[test]
    fn zero_margin_small_case() {
        let cfg = KeyGenConfig {
            margin: 0.0,
            ..KeyGenConfig::default()
        };
        let mu = auxiliary_vector(&cfg, 32).unwrap();
        let b = bits(16, 4);
        let a = derive_matrix(&b, &mu, &cfg).unwrap().matrix;
        assert_eq!(ber(b.bits(), &delta_vec(&matvec(&a, &mu).unwrap())).unwrap(), 0.0);
    }

    #[test]
    fn all_ones_watermark_converges_quickly() {
        let cfg = KeyGenConfig::default();
        let mu = auxiliary_vector(&cfg, 32).unwrap();
        let b = WatermarkVector::new(BitVector::new(vec![true; 64])).unwrap();
        let out = derive_matrix(&b, &mu, &cfg).unwrap();
        assert!(out.iterations <= 50);
        assert!(delta_vec(&matvec(&out.matrix, &mu).unwrap()).bits().iter().all(|&x| x));
    }

    #[test]
    fn solver_rejects_degenerate_inputs() {
        let cfg = KeyGenConfig::default();
        let b = bits(16, 1);
        assert!(matches!(
            derive_matrix(&b, &RealVector::zeros(32), &cfg),
            Err(Error::ZeroAuxiliary)
        ));
        assert!(matches!(
            derive_matrix(&b, &RealVector::new(vec![1.0; 4]).unwrap(), &cfg),
            Err(Error::InvalidArgument(_))
        ));
        let starved = KeyGenConfig {
            max_iters: 0,
            margin: 50.0,
            ..cfg
        };
        let mu = auxiliary_vector(&starved, 32).unwrap();
        assert!(matches!(
            derive_matrix(&b, &mu, &starved),
            Err(Error::NonConvergence { iterations: 0, .. })
        ));
    }

    #[test]
    fn watermark_needs_eight_bits() {
        assert!(WatermarkVector::new(BitVector::new(vec![true; 7])).is_err());
        assert!(WatermarkVector::new(BitVector::new(vec![true; 8])).is_ok());
    }

    #[test]
    fn watermark_hex_and_commitment() {
        let b = WatermarkVector::new(BitVector::from_u8s(&[1, 0, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1]).unwrap()).unwrap();
        assert_eq!(b.to_hex(), "a1f0");
        let back = WatermarkVector::from_hex_len(&b.to_hex(), 12).unwrap();
        assert_eq!(back, b);
        assert!(WatermarkVector::from_hex_len("a1f1", 12).is_err());
        assert!(WatermarkVector::from_hex_len("a1f000", 12).is_err());
        // commitment = sha256(u32 LE length || packed bits)
        assert_eq!(b.commitment(), crate::codec::sha256(&[12, 0, 0, 0, 0xa1, 0xf0]));
        assert_ne!(b.commitment(), bits(12, 9).commitment());
    }

    #[test]
    fn exhausted_alpha_search() {
        let cfg = KeyGenConfig::default();
        let mu = auxiliary_vector(&cfg, 16).unwrap();
        let b = WatermarkVector::new(BitVector::new(vec![true; 32])).unwrap();
        let a = derive_matrix(&b, &mu, &cfg).unwrap().matrix;
        // fbar == mu makes d = (alpha - 1) mu, whose sign pattern under A is b itself.
        let fbar = activation(mu.as_slice().to_vec());
        assert!(matches!(
            derive_d_and_alpha(&a, &mu, &fbar, &b, &cfg),
            Err(Error::AlphaSearchExhausted { .. })
        ));
        assert!(matches!(
            derive_d_and_alpha(&a, &mu, &activation(vec![0.0; 16]), &b, &cfg),
            Err(Error::DegenerateActivation)
        ));
        assert!(matches!(
            derive_d_and_alpha(&a, &mu, &activation(vec![1.0; 15]), &b, &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn alpha_scan_picks_first_admissible() {
        let cfg = KeyGenConfig::default();
        let mu = auxiliary_vector(&cfg, 32).unwrap();
        let b = bits(128, 5);
        let a = derive_matrix(&b, &mu, &cfg).unwrap().matrix;
        let fbar = activation((0..32).map(|i| 0.1 + 0.05 * i as f64).collect());
        let (d, alpha) = derive_d_and_alpha(&a, &mu, &fbar, &b, &cfg).unwrap();
        assert!(offset_mismatches(&a, &d, &b).unwrap() as f64 >= cfg.theta * 128.0);
        let mut earlier = cfg.alpha_init;
        while earlier < alpha {
            let d0 = fbar.values.axpby(earlier, &mu, -1.0).unwrap();
            assert!((offset_mismatches(&a, &d0, &b).unwrap() as f64) < cfg.theta * 128.0);
            earlier += cfg.alpha_step;
        }
    }

    #[test]
    fn config_validation_and_round_trip() {
        assert!(KeyGenConfig { theta: 0.5, ..KeyGenConfig::default() }.validate().is_err());
        assert!(KeyGenConfig { theta: 0.0, ..KeyGenConfig::default() }.validate().is_err());
        assert!(KeyGenConfig { learning_rate: 0.0, ..KeyGenConfig::default() }.validate().is_err());
        let cfg = KeyGenConfig { seed: 77, margin: 0.5, ..KeyGenConfig::default() };
        let mut w = ByteWriter::new();
        cfg.encode_into(&mut w);
        let bytes = w.into_bytes();
        let mut r = ByteReader::new(&bytes);
        assert_eq!(KeyGenConfig::decode_from(&mut r).unwrap(), cfg);
        assert!(r.is_empty());
    }

    #[test]
    fn key_pair_round_trip_is_bit_exact() {
        let cfg = KeyGenConfig::default();
        let mu = auxiliary_vector(&cfg, 16).unwrap();
        let b = bits(64, 3);
        let a = derive_matrix(&b, &mu, &cfg).unwrap().matrix;
        let fbar = activation((0..16).map(|i| (i as f64).sin().abs()).collect());
        let (d, alpha) = derive_d_and_alpha(&a, &mu, &fbar, &b, &cfg).unwrap();
        let keys = SecretKeyPair {
            a,
            d,
            alpha,
            layer: 1,
            trigger_digest: [7; 32],
            watermark_commitment: b.commitment(),
            config: cfg,
        };
        let bytes = keys.to_bytes();
        let back = SecretKeyPair::from_bytes(&bytes).unwrap();
        assert_eq!(back, keys);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.key_id(), keys.key_id());
        assert!(SecretKeyPair::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(keys.satisfies_offset_constraint(&b).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn solver_hits_target_with_margin(seed in any::<u64>(), n in 8usize..96, m in 8usize..40) {
            let cfg = KeyGenConfig { seed, ..KeyGenConfig::default() };
            let mu = auxiliary_vector(&cfg, m).unwrap();
            let b = bits(n, seed ^ 0xabc);
            let out = derive_matrix(&b, &mu, &cfg).unwrap();
            let pre = matvec(&out.matrix, &mu).unwrap();
            prop_assert_eq!(delta_vec(&pre), b.bits().clone());
            prop_assert!(pre.as_slice().iter().all(|z| z.abs() >= cfg.margin));
        }

        #[test]
        fn derivation_is_deterministic(seed in any::<u64>()) {
            let cfg = KeyGenConfig { seed, ..KeyGenConfig::default() };
            let mu = auxiliary_vector(&cfg, 12).unwrap();
            let b = bits(24, seed);
            let x = derive_matrix(&b, &mu, &cfg).unwrap().matrix;
            let y = derive_matrix(&b, &mu, &cfg).unwrap().matrix;
            prop_assert_eq!(x, y);
        }
    }
}
