//! Desk-scale host networks: data, training and activation capture.

mod config;
mod data;
mod network;
mod train;

pub use config::{HostBuild, HostConfig};
pub use data::{generate_synthetic_dataset, select_trigger_set, BlobSpec, Dataset, TriggerSet};
pub use network::{
    Activation, Architecture, Dense, LayerSpec, ModelCheckpoint, TrainingMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use train::{accuracy, fine_tune, train, EpochStats, TrainConfig, Trained};

use crate::error::{Error, Result};
use crate::numeric::RealVector;
use crate::par::Exec;

/// Mean post-activation output of one hidden layer over a trigger set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVector {
    pub layer: usize,
    pub values: RealVector,
}

impl ActivationVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Neumaier-compensated sum over values sorted ascending, so the result does
/// not depend on the order the samples arrive in.
fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values.iter() {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean_activation(
    model: &ModelCheckpoint,
    trigger: &TriggerSet,
    layer: usize,
) -> Result<ActivationVector> {
    mean_activation_with(Exec::default(), model, trigger, layer)
}

pub fn mean_activation_with(
    exec: Exec,
    model: &ModelCheckpoint,
    trigger: &TriggerSet,
    layer: usize,
) -> Result<ActivationVector> {
    let width = model.architecture().width(layer)?;
    if trigger.is_empty() {
        return Err(Error::Empty("trigger set"));
    }
    if trigger.features()[0].len() != model.architecture().input_dim() {
        return Err(Error::IncompatibleArchitecture(format!(
            "trigger samples have dim {}, model expects {}",
            trigger.features()[0].len(),
            model.architecture().input_dim()
        )));
    }
    let per_sample = exec.map(trigger.features(), |x| {
        model
            .hidden_activation(x, layer)
            .expect("layer index validated above")
    });
    let n = per_sample.len() as f64;
    let mut column = vec![0.0; per_sample.len()];
    let values = (0..width)
        .map(|j| {
            for (slot, act) in column.iter_mut().zip(&per_sample) {
                *slot = act[j];
            }
            order_free_sum(&mut column) / n
        })
        .collect();
    Ok(ActivationVector {
        layer,
        values: RealVector::new(values)?,
    })
}
