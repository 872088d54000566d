//! Little-endian binary encoding shared by every on-disk artifact.
//!
//! Tensor layout: `magic "FMNC" | version u16 | dtype u8 | ndims u8 | dims u64[ndims] | data`.
//! Real data is IEEE-754 f64, bits are one byte each (0 or 1).

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"FMNC";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    MatrixF64 = 1,
    VectorF64 = 2,
    Bits = 3,
}

impl DType {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(DType::MatrixF64),
            2 => Ok(DType::VectorF64),
            3 => Ok(DType::Bits),
            other => Err(Error::Decode(format!("unknown dtype {other}"))),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Writes a u64 length prefix followed by the bytes.
    pub fn put_section(&mut self, bytes: &[u8]) {
        self.put_u64(bytes.len() as u64);
        self.put_bytes(bytes);
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_section(s.as_bytes());
    }

    pub fn put_tensor_header(&mut self, dtype: DType, dims: &[usize]) {
        self.put_bytes(TENSOR_MAGIC);
        self.put_u16(TENSOR_VERSION);
        self.put_u8(dtype as u8);
        self.put_u8(dims.len() as u8);
        for &d in dims {
            self.put_u64(d as u64);
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Decode(format!("truncated input at offset {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Decode("length overflows usize".into()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn section(&mut self) -> Result<&'a [u8]> {
        let n = self.usize()?;
        self.take(n)
    }

    pub fn string(&mut self) -> Result<String> {
        let raw = self.section()?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::Decode(e.to_string()))
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let got = self.take(magic.len())?;
        if got != magic {
            return Err(Error::Decode(format!(
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }

    pub fn tensor_header(&mut self, expected: DType) -> Result<Vec<usize>> {
        self.expect_magic(TENSOR_MAGIC)?;
        let version = self.u16()?;
        if version != TENSOR_VERSION {
            return Err(Error::Decode(format!("unsupported tensor version {version}")));
        }
        let dtype = DType::from_u8(self.u8()?)?;
        if dtype != expected {
            return Err(Error::Decode(format!("expected {expected:?}, found {dtype:?}")));
        }
        let ndims = self.u8()? as usize;
        (0..ndims).map(|_| self.usize()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn finish(&self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Decode(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

/// Types with a canonical byte encoding.
pub trait Encode {
    fn encode_into(&self, w: &mut ByteWriter);

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.encode_into(&mut w);
        w.into_bytes()
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut ByteReader<'_>) -> Result<Self>;

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}
