use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::network::{Architecture, ModelCheckpoint, TrainingMeta};
use crate::error::{Error, Result};
use crate::numeric::SeededRng;
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.001,
            batch: 16,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: ModelCheckpoint,
    pub trace: Vec<EpochStats>,
}

impl Trained {
    pub fn final_accuracy(&self) -> f64 {
        self.trace.last().map_or(0.0, |s| s.accuracy)
    }
}

fn validate(cfg: &TrainConfig, arch: &Architecture, dataset: &Dataset) -> Result<()> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be >= 1".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning rate must be finite and >= 0".into()));
    }
    if arch.input_dim() != dataset.dim() || arch.classes() != dataset.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "architecture {}->{} vs dataset dim {} with {} classes",
            arch.input_dim(),
            arch.classes(),
            dataset.dim(),
            dataset.num_classes()
        )));
    }
    Ok(())
}

/// Minibatch SGD on softmax cross-entropy from a seeded He initialization.
pub fn train(arch: &Architecture, dataset: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    validate(cfg, arch, dataset)?;
    let root = SeededRng::new(cfg.seed);
    let meta = TrainingMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch: cfg.batch,
        dataset_id: dataset.id(),
    };
    let mut model = ModelCheckpoint::initialize(arch.clone(), &mut root.split(0), meta);
    let trainable = vec![true; arch.layers().len()];
    let trace = run_sgd(&mut model, dataset, cfg, &trainable, &mut root.split(1))?;
    Ok(Trained { checkpoint: model, trace })
}

/// Continues SGD with the layers in `frozen` held fixed. Returns a new checkpoint.
pub fn fine_tune(
    model: &ModelCheckpoint,
    dataset: &Dataset,
    cfg: &TrainConfig,
    frozen: &[usize],
) -> Result<Trained> {
    let arch = model.architecture();
    validate(cfg, arch, dataset)?;
    let n = arch.layers().len();
    if let Some(&bad) = frozen.iter().find(|&&l| l >= n) {
        return Err(Error::InvalidArgument(format!("frozen layer {bad} out of range")));
    }
    let trainable: Vec<bool> = (0..n).map(|l| !frozen.contains(&l)).collect();
    if !trainable.iter().any(|&t| t) {
        return Err(Error::NothingToTrain);
    }
    let mut tuned = model.clone();
    tuned.meta.epochs += cfg.epochs;
    let trace = run_sgd(&mut tuned, dataset, cfg, &trainable, &mut SeededRng::new(cfg.seed).split(1))?;
    Ok(Trained { checkpoint: tuned, trace })
}

pub fn accuracy(model: &ModelCheckpoint, dataset: &Dataset) -> f64 {
    let hits = Exec::default()
        .map_range(dataset.len(), |i| (model.predict(&dataset.features()[i]) == dataset.labels()[i]) as usize)
        .into_iter()
        .sum::<usize>();
    hits as f64 / dataset.len() as f64
}

fn softmax_xent(logits: &[f64], label: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (grad, loss)
}

struct Grads {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(model: &ModelCheckpoint) -> Self {
        Self {
            weights: model.layers().iter().map(|d| vec![0.0; d.weights.as_slice().len()]).collect(),
            bias: model.layers().iter().map(|d| vec![0.0; d.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|g| g.fill(0.0));
    }
}

/// Accumulates one sample's gradient; returns its loss.
fn backprop(model: &ModelCheckpoint, x: &[f64], label: usize, grads: &mut Grads) -> f64 {
    let acts = model.forward_all(x);
    let (mut upstream, loss) = softmax_xent(acts.last().unwrap(), label);
    for k in (0..model.layers().len()).rev() {
        let input = if k == 0 { x } else { &acts[k - 1] };
        let dense = &model.layers()[k];
        let cols = dense.weights.cols();
        for (o, &g) in upstream.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[k][o] += g;
            let row = &mut grads.weights[k][o * cols..(o + 1) * cols];
            for (gw, &xi) in row.iter_mut().zip(input) {
                *gw += g * xi;
            }
        }
        if k > 0 {
            let prev = &acts[k - 1];
            let mut down = vec![0.0; cols];
            for (o, &g) in upstream.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (d, &w) in down.iter_mut().zip(dense.weights.row(o)) {
                    *d += g * w;
                }
            }
            // hidden layers are ReLU: output > 0 iff pre-activation > 0
            for (d, &a) in down.iter_mut().zip(prev) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            upstream = down;
        }
    }
    loss
}

fn run_sgd(
    model: &mut ModelCheckpoint,
    dataset: &Dataset,
    cfg: &TrainConfig,
    trainable: &[bool],
    shuffle_rng: &mut SeededRng,
) -> Result<Vec<EpochStats>> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grads = Grads::zeros(model);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            grads.clear();
            for &i in batch {
                total_loss += backprop(model, &dataset.features()[i], dataset.labels()[i], &mut grads);
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (k, dense) in model.layers_mut().iter_mut().enumerate() {
                if !trainable[k] {
                    continue;
                }
                for (w, g) in dense.weights.as_mut_slice().iter_mut().zip(&grads.weights[k]) {
                    *w -= step * g;
                }
                for (b, g) in dense.bias.as_mut_slice().iter_mut().zip(&grads.bias[k]) {
                    *b -= step * g;
                }
            }
        }
        let loss = total_loss / dataset.len() as f64;
        let params_finite = model
            .layers()
            .iter()
            .all(|d| d.weights.as_slice().iter().chain(d.bias.as_slice()).all(|v| v.is_finite()));
        if !loss.is_finite() || !params_finite {
            return Err(Error::TrainingDiverged { epoch });
        }
        trace.push(EpochStats {
            epoch,
            loss,
            accuracy: accuracy(model, dataset),
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::data::{generate_synthetic_dataset, BlobSpec};

    fn small() -> (Architecture, Dataset) {
        let ds = generate_synthetic_dataset(&BlobSpec {
            per_class: 20,
            ..BlobSpec::default()
        })
        .unwrap();
        (Architecture::mlp(8, &[6, 5], 4).unwrap(), ds)
    }

    #[test]
    fn zero_epochs_rejected() {
        let (arch, ds) = small();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train(&arch, &ds, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (arch, ds) = small();
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e200,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&arch, &ds, &cfg), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (arch, ds) = small();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let model = train(&arch, &ds, &cfg).unwrap().checkpoint;
        let (x, y) = (&ds.features()[3], ds.labels()[3]);
        let mut grads = Grads::zeros(&model);
        backprop(&model, x, y, &mut grads);
        let loss_at = |m: &ModelCheckpoint| softmax_xent(&m.logits(x), y).1;
        let h = 1e-6;
        for k in 0..model.layers().len() {
            for idx in [0usize, 3, 7] {
                let mut plus = model.clone();
                plus.layers_mut()[k].weights.as_mut_slice()[idx] += h;
                let mut minus = model.clone();
                minus.layers_mut()[k].weights.as_mut_slice()[idx] -= h;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let analytic = grads.weights[k][idx];
                assert!(
                    (numeric - analytic).abs() < 1e-5 * numeric.abs().max(1.0),
                    "layer {k} idx {idx}: {numeric} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn fine_tune_freezing() {
        let (arch, ds) = small();
        let base = train(&arch, &ds, &TrainConfig { epochs: 2, ..TrainConfig::default() })
            .unwrap()
            .checkpoint;
        let cfg = TrainConfig { epochs: 2, seed: 5, ..TrainConfig::default() };
        assert!(matches!(fine_tune(&base, &ds, &cfg, &[0, 1, 2]), Err(Error::NothingToTrain)));

        let tuned = fine_tune(&base, &ds, &cfg, &[0]).unwrap().checkpoint;
        assert_eq!(tuned.layers()[0], base.layers()[0]);
        assert_ne!(tuned.layers()[1], base.layers()[1]);

        let zero_lr = TrainConfig { epochs: 1, learning_rate: 0.0, ..cfg.clone() };
        let same = fine_tune(&base, &ds, &zero_lr, &[0, 1]).unwrap().checkpoint;
        assert_eq!(same.layers(), base.layers());
    }
}
