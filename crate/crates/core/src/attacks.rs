//! Removal and false-claim attacks: magnitude pruning, fine-tuning, forged keys,
//! independently trained models and watermark overwriting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{extract, extract_from_activation, Verdict};
use crate::host::{
    fine_tune, mean_activation, train, Dataset, HostConfig, ModelCheckpoint, TrainConfig,
    Trained, TriggerSet,
};
use crate::keygen::{generate_keys, KeyGenConfig, SecretKeyPair, WatermarkVector};
use crate::numeric::{ber, derive_seed, Matrix, RealVector, SeededRng};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneScope {
    All,
    Layers(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSpec {
    pub eta: f64,
    pub scope: PruneScope,
}

impl PruneSpec {
    pub fn all(eta: f64) -> Self {
        Self {
            eta,
            scope: PruneScope::All,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub model: ModelCheckpoint,
    pub zeroed: usize,
    /// Fraction of in-scope weights that are zero after pruning.
    pub zeroed_fraction: f64,
}

/// Zeroes every in-scope weight with `|w| < eta`. Biases are left alone.
pub fn prune(model: &ModelCheckpoint, spec: &PruneSpec) -> Result<PruneOutcome> {
    if spec.eta.is_nan() || spec.eta < 0.0 {
        return Err(Error::InvalidArgument(format!("eta {} must be >= 0", spec.eta)));
    }
    let n_layers = model.layers().len();
    let in_scope: Vec<bool> = match &spec.scope {
        PruneScope::All => vec![true; n_layers],
        PruneScope::Layers(list) => {
            if let Some(&bad) = list.iter().find(|&&l| l >= n_layers) {
                return Err(Error::InvalidArgument(format!("prune layer {bad} out of range")));
            }
            (0..n_layers).map(|l| list.contains(&l)).collect()
        }
    };
    let mut pruned = model.clone();
    let (mut zeroed, mut total) = (0usize, 0usize);
    for (dense, _) in pruned.layers_mut().iter_mut().zip(&in_scope).filter(|(_, &s)| s) {
        for w in dense.weights.as_mut_slice() {
            total += 1;
            if w.abs() < spec.eta {
                *w = 0.0;
            }
            if *w == 0.0 {
                zeroed += 1;
            }
        }
    }
    Ok(PruneOutcome {
        model: pruned,
        zeroed,
        zeroed_fraction: if total == 0 { 0.0 } else { zeroed as f64 / total as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneSpec {
    pub epochs: usize,
    /// Dense-layer indices held fixed (0 is the first hidden layer).
    pub freeze: Vec<usize>,
    /// `None` reuses the learning rate recorded in the checkpoint.
    pub learning_rate: Option<f64>,
    pub batch: Option<usize>,
    pub seed: u64,
}

impl Default for FineTuneSpec {
    fn default() -> Self {
        Self {
            epochs: 5,
            freeze: vec![0],
            learning_rate: None,
            batch: None,
            seed: 17,
        }
    }
}

pub fn fine_tune_attack(model: &ModelCheckpoint, dataset: &Dataset, spec: &FineTuneSpec) -> Result<Trained> {
    let cfg = TrainConfig {
        epochs: spec.epochs,
        learning_rate: spec.learning_rate.unwrap_or(model.meta.learning_rate),
        batch: spec.batch.unwrap_or(model.meta.batch),
        seed: spec.seed,
    };
    fine_tune(model, dataset, &cfg, &spec.freeze)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgedKeySpec {
    pub count: usize,
    pub seed: u64,
    pub bits: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgedKey {
    pub a: Matrix,
    pub d: RealVector,
}

/// Scaling factor a forger extracts with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForgedAlpha {
    /// Reuse the genuine key's alpha.
    Genuine,
    Fixed(f64),
}

/// `count` independent pairs with standard-normal entries; pair `i` is drawn
/// from its own child stream so generation order does not matter.
pub fn forge_keys(spec: &ForgedKeySpec) -> Result<Vec<ForgedKey>> {
    forge_keys_with(Exec::default(), spec)
}

pub fn forge_keys_with(exec: Exec, spec: &ForgedKeySpec) -> Result<Vec<ForgedKey>> {
    if spec.count == 0 {
        return Err(Error::InvalidArgument("forged key count must be >= 1".into()));
    }
    if spec.bits == 0 || spec.width == 0 {
        return Err(Error::InvalidArgument("forged key dimensions must be positive".into()));
    }
    Ok(exec.map_range(spec.count, |i| {
        let mut rng = SeededRng::new(derive_seed(spec.seed, i as u64));
        let a = Matrix::gaussian(spec.bits, spec.width, 1.0, &mut rng);
        let d = RealVector::new((0..spec.width).map(|_| rng.next_gaussian()).collect())
            .expect("normals are finite");
        ForgedKey { a, d }
    }))
}

/// BER of each forged pair against `b`, extracting from `model` at `genuine.layer`.
pub fn forged_key_bers(
    model: &ModelCheckpoint,
    trigger: &TriggerSet,
    genuine: &SecretKeyPair,
    b: &WatermarkVector,
    forged: &[ForgedKey],
    alpha: ForgedAlpha,
    exec: Exec,
) -> Result<Vec<f64>> {
    let fhat = mean_activation(model, trigger, genuine.layer)?;
    let alpha = match alpha {
        ForgedAlpha::Genuine => genuine.alpha,
        ForgedAlpha::Fixed(a) => a,
    };
    exec.map(forged, |key| {
        let bhat = extract_from_activation(&key.a, &key.d, alpha, &fhat.values)?;
        ber(b.bits(), &bhat)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<HistogramBucket>,
}

impl BerSummary {
    /// Summary with `buckets` equal-width bins over [0, 1].
    pub fn from_values(values: &[f64], buckets: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("ber values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let buckets = buckets.max(1);
        let width = 1.0 / buckets as f64;
        let mut histogram: Vec<HistogramBucket> = (0..buckets)
            .map(|k| HistogramBucket {
                lo: k as f64 * width,
                hi: (k + 1) as f64 * width,
                count: 0,
            })
            .collect();
        for &v in values {
            let k = ((v / width) as usize).min(buckets - 1);
            histogram[k].count += 1;
        }
        Ok(Self {
            count: values.len(),
            mean,
            std,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            histogram,
        })
    }
}

/// How an unmarked model differs from the host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UnmarkedVariant {
    /// Same data, different training hyperparameters.
    Hyperparams {
        learning_rate: Option<f64>,
        epochs: Option<usize>,
        seed: u64,
    },
    /// Freshly generated data, retrained from a fresh seed.
    Data { data_seed: u64, train_seed: u64 },
}

/// Trains an independent model of the host's architecture.
pub fn train_unmarked_variant(base: &HostConfig, variant: &UnmarkedVariant) -> Result<Trained> {
    let arch = base.architecture()?;
    match variant {
        UnmarkedVariant::Hyperparams {
            learning_rate,
            epochs,
            seed,
        } => {
            let cfg = TrainConfig {
                learning_rate: learning_rate.unwrap_or(base.train.learning_rate),
                epochs: epochs.unwrap_or(base.train.epochs),
                seed: *seed,
                ..base.train.clone()
            };
            if cfg == base.train {
                return Err(Error::InvalidArgument(
                    "hyperparameter variant must change lr, epochs or seed".into(),
                ));
            }
            train(&arch, &base.dataset()?, &cfg)
        }
        UnmarkedVariant::Data {
            data_seed,
            train_seed,
        } => {
            if *data_seed == base.data.seed {
                return Err(Error::InvalidArgument("data variant must use a different data seed".into()));
            }
            let mut data = base.data.clone();
            data.seed = *data_seed;
            let dataset = crate::host::generate_synthetic_dataset(&data)?;
            let cfg = TrainConfig {
                seed: *train_seed,
                ..base.train.clone()
            };
            train(&arch, &dataset, &cfg)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverwriteEntry {
    pub index: usize,
    pub origin: String,
    pub key_id: String,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverwriteReport {
    pub fingerprint_before: String,
    pub fingerprint_after: String,
    pub entries: Vec<OverwriteEntry>,
    pub all_pass: bool,
}

/// Embeds each of `new_watermarks` on the same model, then re-extracts every
/// watermark, old and new. New key `i` uses seed `derive_seed(cfg.seed, i)`.
pub fn overwrite_scenario(
    model: &ModelCheckpoint,
    trigger: &TriggerSet,
    existing: &[(SecretKeyPair, WatermarkVector)],
    new_watermarks: &[WatermarkVector],
    cfg: &KeyGenConfig,
) -> Result<OverwriteReport> {
    let Some((first, _)) = existing.first() else {
        return Err(Error::Empty("existing keys"));
    };
    let layer = first.layer;
    let fingerprint_before = model.fingerprint();
    let mut all: Vec<(String, SecretKeyPair, WatermarkVector)> = existing
        .iter()
        .map(|(k, b)| ("existing".to_string(), k.clone(), b.clone()))
        .collect();
    for (i, b) in new_watermarks.iter().enumerate() {
        let cfg_i = KeyGenConfig {
            seed: derive_seed(cfg.seed, i as u64),
            ..cfg.clone()
        };
        let out = generate_keys(model, trigger, layer, b, &cfg_i)?;
        all.push(("new".to_string(), out.keys, b.clone()));
    }
    let entries = all
        .iter()
        .enumerate()
        .map(|(index, (origin, keys, b))| {
            let bhat = extract(model, trigger, keys)?;
            Ok(OverwriteEntry {
                index,
                origin: origin.clone(),
                key_id: keys.key_id(),
                ber: ber(b.bits(), &bhat)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fingerprint_after = model.fingerprint();
    let all_pass = fingerprint_before == fingerprint_after && entries.iter().all(|e| e.ber == 0.0);
    Ok(OverwriteReport {
        fingerprint_before,
        fingerprint_after,
        entries,
        all_pass,
    })
}

/// One JSON row per attack trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub attack: String,
    pub params: serde_json::Value,
    pub accuracy_before: Option<f64>,
    pub accuracy_after: Option<f64>,
    pub ber: f64,
    pub verdict: Verdict,
}
