//! Dense f64 linear algebra, the thresholded sigmoid, bit vectors and the seeded
//! sample stream everything else draws from.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{ByteReader, ByteWriter, DType, Decode, Encode};
use crate::error::{Error, Result};

/// Identifier written next to every seed in serialized artifacts.
pub const RNG_ALGORITHM_ID: &str = "chacha8+polar-v1";

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "{what} has non-finite entry at {i}"
        ))),
        None => Ok(()),
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Fills a matrix with standard-normal samples scaled by `std`.
    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols).map(|_| std * rng.next_gaussian()).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }
}

impl Encode for Matrix {
    fn encode_into(&self, w: &mut ByteWriter) {
        w.put_tensor_header(DType::MatrixF64, &[self.rows, self.cols]);
        for &v in &self.data {
            w.put_f64(v);
        }
    }
}

impl Decode for Matrix {
    fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let dims = r.tensor_header(DType::MatrixF64)?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Decode(format!("matrix with {} dims", dims.len())));
        };
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Decode("matrix size overflow".into()))?;
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Matrix::new(rows, cols, data).map_err(|e| Error::Decode(e.to_string()))
    }
}

/// A dense vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "vector")?;
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// `scale * self + offset_scale * other`, elementwise.
    pub fn axpby(&self, scale: f64, other: &RealVector, other_scale: f64) -> Result<RealVector> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        RealVector::new(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| scale * a + other_scale * b)
                .collect(),
        )
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Encode for RealVector {
    fn encode_into(&self, w: &mut ByteWriter) {
        w.put_tensor_header(DType::VectorF64, &[self.0.len()]);
        for &v in &self.0 {
            w.put_f64(v);
        }
    }
}

impl Decode for RealVector {
    fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let dims = r.tensor_header(DType::VectorF64)?;
        let [len] = dims[..] else {
            return Err(Error::Decode(format!("vector with {} dims", dims.len())));
        };
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        RealVector::new(data).map_err(|e| Error::Decode(e.to_string()))
    }
}

/// A vector over {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector(Vec<bool>);

impl BitVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn from_u8s(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidArgument(format!("bit value {other}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|b| !b).collect())
    }

    /// Number of positions where the two vectors differ.
    pub fn hamming(&self, other: &BitVector) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count())
    }

    /// Packs bits most-significant-bit first; a trailing partial byte is zero padded.
    pub fn to_packed(&self) -> Vec<u8> {
        self.0
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
            })
            .collect()
    }

    pub fn from_packed(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() * 8 < len {
            return Err(Error::InvalidArgument(format!(
                "{} bytes cannot hold {len} bits",
                bytes.len()
            )));
        }
        Ok(Self(
            (0..len)
                .map(|i| bytes[i / 8] & (1 << (7 - i % 8)) != 0)
                .collect(),
        ))
    }
}

impl Encode for BitVector {
    fn encode_into(&self, w: &mut ByteWriter) {
        w.put_tensor_header(DType::Bits, &[self.0.len()]);
        for &b in &self.0 {
            w.put_u8(b as u8);
        }
    }
}

impl Decode for BitVector {
    fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        let dims = r.tensor_header(DType::Bits)?;
        let [len] = dims[..] else {
            return Err(Error::Decode(format!("bit vector with {} dims", dims.len())));
        };
        BitVector::from_u8s(r.take(len)?).map_err(|e| Error::Decode(e.to_string()))
    }
}

/// Deterministic sample stream: ChaCha8 keyed by a 64-bit seed.
///
/// Uniforms take the top 53 bits of each `u64`; normals use the Marsaglia
/// polar method on pairs of uniforms, caching the second variate.
#[derive(Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a parent seed and a stream label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm_id(&self) -> &'static str {
        RNG_ALGORITHM_ID
    }

    /// A fresh generator on a child seed; the parent stream is not advanced.
    pub fn split(&self, stream: u64) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` by rejection.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.next_uniform() - 1.0;
            let v = 2.0 * self.next_uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Thresholded sigmoid: 1 iff `sigmoid(x) >= 0.5`, i.e. iff `x >= 0`.
pub fn delta(x: f64) -> bool {
    // sigmoid(x) >= 0.5 exactly when x >= 0; -0.0 compares equal to 0.0.
    x >= 0.0
}

pub fn delta_vec(v: &RealVector) -> BitVector {
    BitVector(v.as_slice().iter().map(|&x| delta(x)).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matvec(a: &Matrix, v: &RealVector) -> Result<RealVector> {
    if a.cols != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix times vector of length {}",
            a.rows,
            a.cols,
            v.len()
        )));
    }
    RealVector::new(a.iter_rows().map(|row| dot(row, v.as_slice())).collect())
}

/// Bit-error rate: fraction of differing positions.
pub fn ber(b: &BitVector, bhat: &BitVector) -> Result<f64> {
    if b.is_empty() && bhat.is_empty() {
        return Err(Error::Empty("bit vectors"));
    }
    let mismatches = b.hamming(bhat)?;
    Ok(mismatches as f64 / b.len() as f64)
}

pub fn sample_gaussian_vector(rng: &mut SeededRng, len: usize) -> Result<RealVector> {
    if len == 0 {
        return Err(Error::Empty("gaussian vector length"));
    }
    Ok(RealVector((0..len).map(|_| rng.next_gaussian()).collect()))
}
