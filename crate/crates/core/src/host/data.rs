use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, sha256_hex, ByteReader, ByteWriter, Decode, Encode};
use crate::error::{Error, Result};
use crate::numeric::SeededRng;

/// Gaussian-blob classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Isotropic standard deviation around each class center.
    pub noise: f64,
    /// Standard deviation of the class-center coordinates.
    pub center_scale: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 250,
            dim: 8,
            noise: 0.5,
            center_scale: 20.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: labels.len(),
            });
        }
        let dim = features.first().map(Vec::len).ok_or(Error::Empty("dataset"))?;
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside {num_classes} classes"
            )));
        }
        let ds = Self {
            dim,
            num_classes,
            features,
            labels,
        };
        if let Some(empty) = (0..num_classes).find(|&c| ds.class_count(c) == 0) {
            return Err(Error::ClassUnderpopulated {
                class: empty,
                available: 0,
                requested: 1,
            });
        }
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    /// Content hash over dimensions, features and labels.
    pub fn id(&self) -> String {
        let mut w = ByteWriter::new();
        w.put_u64(self.dim as u64);
        w.put_u64(self.num_classes as u64);
        w.put_u64(self.len() as u64);
        for (f, &l) in self.features.iter().zip(&self.labels) {
            for &v in f {
                w.put_f64(v);
            }
            w.put_u64(l as u64);
        }
        sha256_hex(&w.into_bytes())
    }

    /// Reads `x0,...,x{d-1},label` rows after one header line.
    pub fn from_csv<R: Read>(reader: R, num_classes: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let row = line + 2;
            let n = record.len();
            if n < 2 {
                return Err(Error::InvalidArgument(format!("csv row {row}: too few columns")));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("csv row {row}: {e}")))
            };
            features.push(record.iter().take(n - 1).map(parse).collect::<Result<Vec<_>>>()?);
            labels.push(
                record[n - 1]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidArgument(format!("csv row {row} label: {e}")))?,
            );
        }
        let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Self::new(features, labels, classes)
    }
}

pub fn generate_synthetic_dataset(spec: &BlobSpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if spec.per_class == 0 || spec.dim == 0 {
        return Err(Error::InvalidArgument("per-class count and dim must be positive".into()));
    }
    if !(spec.noise >= 0.0 && spec.center_scale >= 0.0) {
        return Err(Error::InvalidArgument("noise and center scale must be >= 0".into()));
    }
    let root = SeededRng::new(spec.seed);
    let mut center_rng = root.split(0);
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| spec.center_scale * center_rng.next_gaussian())
                .collect()
        })
        .collect();
    let mut noise_rng = root.split(1);
    let mut features = Vec::with_capacity(spec.num_classes * spec.per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            features.push(
                center
                    .iter()
                    .map(|c| c + spec.noise * noise_rng.next_gaussian())
                    .collect(),
            );
            labels.push(class);
        }
    }
    Dataset::new(features, labels, spec.num_classes)
}

/// The samples whose mean activation anchors the keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSet {
    indices: Vec<usize>,
    labels: Vec<usize>,
    features: Vec<Vec<f64>>,
    digest: [u8; 32],
}

fn features_digest(features: &[Vec<f64>]) -> [u8; 32] {
    let mut w = ByteWriter::new();
    w.put_u64(features.len() as u64);
    for f in features {
        w.put_u64(f.len() as u64);
        for &v in f {
            w.put_f64(v);
        }
    }
    sha256(&w.into_bytes())
}

impl TriggerSet {
    pub fn from_dataset(dataset: &Dataset, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("trigger set"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::InvalidArgument(format!("trigger index {bad} out of range")));
        }
        let features: Vec<Vec<f64>> = indices.iter().map(|&i| dataset.features[i].clone()).collect();
        let labels = indices.iter().map(|&i| dataset.labels[i]).collect();
        Ok(Self {
            digest: features_digest(&features),
            indices,
            labels,
            features,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn covers_all_labels(&self, num_classes: usize) -> bool {
        (0..num_classes).all(|c| self.labels.contains(&c))
    }

    /// Same set with its samples in a different order (digest changes with order).
    pub fn reordered(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("order is not a permutation".into()));
        }
        let features: Vec<Vec<f64>> = order.iter().map(|&i| self.features[i].clone()).collect();
        Ok(Self {
            indices: order.iter().map(|&i| self.indices[i]).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            digest: features_digest(&features),
            features,
        })
    }
}

impl Encode for TriggerSet {
    fn encode_into(&self, w: &mut ByteWriter) {
        w.put_bytes(b"FMTS");
        w.put_u64(self.len() as u64);
        w.put_u64(self.features.first().map_or(0, Vec::len) as u64);
        for ((&i, &l), f) in self.indices.iter().zip(&self.labels).zip(&self.features) {
            w.put_u64(i as u64);
            w.put_u64(l as u64);
            for &v in f {
                w.put_f64(v);
            }
        }
        w.put_bytes(&self.digest);
    }
}

impl Decode for TriggerSet {
    fn decode_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(b"FMTS")?;
        let n = r.usize()?;
        let dim = r.usize()?;
        let mut indices = Vec::with_capacity(n.min(1 << 16));
        let mut labels = Vec::with_capacity(n.min(1 << 16));
        let mut features = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            indices.push(r.usize()?);
            labels.push(r.usize()?);
            features.push((0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
        }
        let stored: [u8; 32] = r.take(32)?.try_into().unwrap();
        let digest = features_digest(&features);
        if stored != digest {
            return Err(Error::Integrity("trigger set digest mismatch".into()));
        }
        Ok(Self {
            indices,
            labels,
            features,
            digest,
        })
    }
}

/// Draws `per_class` samples of every label without replacement.
pub fn select_trigger_set(dataset: &Dataset, per_class: usize, rng: &mut SeededRng) -> Result<TriggerSet> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per-class trigger count must be >= 1".into()));
    }
    let mut indices = Vec::with_capacity(per_class * dataset.num_classes);
    for class in 0..dataset.num_classes {
        let mut pool: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        if pool.len() < per_class {
            return Err(Error::ClassUnderpopulated {
                class,
                available: pool.len(),
                requested: per_class,
            });
        }
        // partial Fisher-Yates
        for k in 0..per_class {
            let j = k + rng.below(pool.len() - k);
            pool.swap(k, j);
        }
        indices.extend_from_slice(&pool[..per_class]);
    }
    TriggerSet::from_dataset(dataset, indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BlobSpec {
        BlobSpec {
            num_classes: 4,
            per_class: 50,
            noise: 0.3,
            seed: 7,
            ..BlobSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_dataset(&spec()).unwrap();
        let b = generate_synthetic_dataset(&spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.id(), b.id());
        assert_eq!(a.len(), 200);
    }

    #[test]
    fn zero_noise_collapses_to_centers() {
        let ds = generate_synthetic_dataset(&BlobSpec { noise: 0.0, ..spec() }).unwrap();
        for c in 0..4 {
            let rows: Vec<&Vec<f64>> = ds
                .features()
                .iter()
                .zip(ds.labels())
                .filter(|(_, &l)| l == c)
                .map(|(f, _)| f)
                .collect();
            assert!(rows.iter().all(|r| *r == rows[0]));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_synthetic_dataset(&BlobSpec { num_classes: 0, ..spec() }).is_err());
        assert!(generate_synthetic_dataset(&BlobSpec { per_class: 0, ..spec() }).is_err());
    }

    #[test]
    fn trigger_selection() {
        let ds = generate_synthetic_dataset(&spec()).unwrap();
        let t = select_trigger_set(&ds, 1, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.covers_all_labels(4));
        let t2 = select_trigger_set(&ds, 1, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t.digest(), t2.digest());
        assert!(matches!(
            select_trigger_set(&ds, 51, &mut SeededRng::new(1)),
            Err(Error::ClassUnderpopulated { .. })
        ));
        let big = select_trigger_set(&ds, 50, &mut SeededRng::new(1)).unwrap();
        let mut idx = big.indices().to_vec();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 200);
    }

    #[test]
    fn trigger_round_trip_and_tamper() {
        let ds = generate_synthetic_dataset(&spec()).unwrap();
        let t = select_trigger_set(&ds, 3, &mut SeededRng::new(2)).unwrap();
        let mut bytes = t.to_bytes();
        assert_eq!(TriggerSet::from_bytes(&bytes).unwrap(), t);
        bytes[40] ^= 0x01; // inside the first feature vector
        assert!(TriggerSet::from_bytes(&bytes).is_err());
    }

    #[test]
    fn csv_loader() {
        let text = "x0,x1,label\n0.5,1.0,0\n-2,3,1\n";
        let ds = Dataset::from_csv(text.as_bytes(), None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.features()[1], vec![-2.0, 3.0]);
        assert!(Dataset::from_csv("x0,label\nfoo,1\n".as_bytes(), None).is_err());
        // class 1 absent
        assert!(Dataset::from_csv("x0,label\n1,0\n1,2\n".as_bytes(), None).is_err());
    }
}
