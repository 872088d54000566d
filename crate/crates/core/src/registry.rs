//! File-backed escrow for key records.
//!
//! Layout under the store root:
//!
//! ```text
//! index.json              id -> {owner_label, created_at, file, record_sha256}
//! records/<key-id>.bin    one record per key
//! .lock                   writer lock
//! ```
//!
//! A record file is `magic "FMRC" | version u16 | section(key pair) |
//! section(trigger set) | section(metadata json) | commitment[32] | sha256[32]`
//! where the trailing hash covers every preceding byte. The key id is the
//! SHA-256 of the serialized key pair.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, sha256_hex, ByteReader, ByteWriter, Decode, Encode};
use crate::error::{Error, Result};
use crate::extract::{extract, verify, BerReport};
use crate::host::{ModelCheckpoint, TriggerSet};
use crate::keygen::{SecretKeyPair, WatermarkVector};

const RECORD_MAGIC: &[u8; 4] = b"FMRC";
const RECORD_VERSION: u16 = 1;
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct KeyRecord {
    pub owner_label: String,
    /// Seconds since the Unix epoch. Informational only.
    pub created_at: u64,
    pub keypair: SecretKeyPair,
    pub trigger: TriggerSet,
    /// SHA-256 commitment to the watermark; the watermark itself stays with the owner.
    pub watermark_commitment: [u8; 32],
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    owner_label: String,
    created_at: u64,
}

impl KeyRecord {
    /// Stamps the record with `SOURCE_DATE_EPOCH` when set (reproducible
    /// builds convention), otherwise with the current time.
    pub fn new(keypair: SecretKeyPair, trigger: TriggerSet, owner_label: impl Into<String>) -> Self {
        let created_at = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or_else(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs())
            });
        Self::with_created_at(keypair, trigger, owner_label, created_at)
    }

    pub fn with_created_at(
        keypair: SecretKeyPair,
        trigger: TriggerSet,
        owner_label: impl Into<String>,
        created_at: u64,
    ) -> Self {
        Self {
            owner_label: owner_label.into(),
            created_at,
            watermark_commitment: keypair.watermark_commitment,
            keypair,
            trigger,
        }
    }

    pub fn key_id(&self) -> String {
        self.keypair.key_id()
    }

    pub fn check(&self) -> Result<()> {
        if self.keypair.trigger_digest != self.trigger.digest() {
            return Err(Error::Integrity("trigger set does not match key digest".into()));
        }
        if self.keypair.watermark_commitment != self.watermark_commitment {
            return Err(Error::Integrity("watermark commitment disagrees with key pair".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&RecordMeta {
            owner_label: self.owner_label.clone(),
            created_at: self.created_at,
        })?;
        let mut w = ByteWriter::new();
        w.put_bytes(RECORD_MAGIC);
        w.put_u16(RECORD_VERSION);
        w.put_section(&self.keypair.to_bytes());
        w.put_section(&self.trigger.to_bytes());
        w.put_section(&meta);
        w.put_bytes(&self.watermark_commitment);
        let mut bytes = w.into_bytes();
        let trailer = sha256(&bytes);
        bytes.extend_from_slice(&trailer);
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 {
            return Err(Error::Integrity("record truncated".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if sha256(body) != trailer {
            return Err(Error::Integrity("record checksum mismatch".into()));
        }
        let mut r = ByteReader::new(body);
        r.expect_magic(RECORD_MAGIC)?;
        let version = r.u16()?;
        if version != RECORD_VERSION {
            return Err(Error::Decode(format!("unsupported record version {version}")));
        }
        let keypair = SecretKeyPair::from_bytes(r.section()?)?;
        let trigger = TriggerSet::from_bytes(r.section()?)?;
        let meta: RecordMeta = serde_json::from_slice(r.section()?)?;
        let watermark_commitment = r.take(32)?.try_into().unwrap();
        r.finish()?;
        let record = Self {
            owner_label: meta.owner_label,
            created_at: meta.created_at,
            keypair,
            trigger,
            watermark_commitment,
        };
        record.check()?;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub owner_label: String,
    pub created_at: u64,
    pub file: String,
    pub record_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub version: u32,
    pub records: BTreeMap<String, IndexEntry>,
}

impl Default for Index {
    fn default() -> Self {
        Self {
            version: INDEX_VERSION,
            records: BTreeMap::new(),
        }
    }
}

/// A trusted key store rooted at one directory.
#[derive(Debug, Clone)]
pub struct KeyStore {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

impl KeyStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("records"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_path(&self, key_id: &str) -> PathBuf {
        self.root.join("records").join(format!("{key_id}.bin"))
    }

    pub fn index(&self) -> Result<Index> {
        match fs::read(self.root.join("index.json")) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Index::default()),
            Err(e) => Err(e.into()),
        }
    }

    /// Persists a record; a key id that is already stored is left untouched.
    pub fn register(&self, record: &KeyRecord) -> Result<String> {
        record.check()?;
        let key_id = record.key_id();
        let lock = fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.root.join(".lock"))?;
        lock.lock()?;
        let mut index = self.index()?;
        if index.records.contains_key(&key_id) {
            return Ok(key_id);
        }
        let bytes = record.to_bytes()?;
        write_atomic(&self.record_path(&key_id), &bytes)?;
        index.records.insert(
            key_id.clone(),
            IndexEntry {
                owner_label: record.owner_label.clone(),
                created_at: record.created_at,
                file: format!("records/{key_id}.bin"),
                record_sha256: sha256_hex(&bytes),
            },
        );
        write_atomic(&self.root.join("index.json"), &serde_json::to_vec_pretty(&index)?)?;
        lock.unlock()?;
        Ok(key_id)
    }

    pub fn fetch(&self, key_id: &str) -> Result<KeyRecord> {
        let index = self.index()?;
        let entry = index
            .records
            .get(key_id)
            .ok_or_else(|| Error::NotFound(key_id.to_string()))?;
        let bytes = fs::read(self.root.join(&entry.file)).map_err(|e| {
            Error::Integrity(format!("record file for {key_id} unreadable: {e}"))
        })?;
        if sha256_hex(&bytes) != entry.record_sha256 {
            return Err(Error::Integrity(format!("record {key_id} does not match index hash")));
        }
        let record = KeyRecord::from_bytes(&bytes)?;
        if record.key_id() != key_id {
            return Err(Error::Integrity(format!("record content hashes to {}", record.key_id())));
        }
        Ok(record)
    }

    /// Extracts with the escrowed keys and trigger set and scores against
    /// `claimed`, after checking it against the stored commitment.
    pub fn verify_claim(
        &self,
        key_id: &str,
        suspect: &ModelCheckpoint,
        claimed: &WatermarkVector,
        theta: f64,
    ) -> Result<BerReport> {
        let record = self.fetch(key_id)?;
        if claimed.commitment() != record.watermark_commitment {
            return Err(Error::CommitmentMismatch);
        }
        let bhat = extract(suspect, &record.trigger, &record.keypair)?;
        Ok(verify(claimed, &bhat, theta)?.with_provenance(key_id, suspect.fingerprint()))
    }
}
