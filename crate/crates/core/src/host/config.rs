use serde::{Deserialize, Serialize};

use super::data::{generate_synthetic_dataset, select_trigger_set, BlobSpec, Dataset, TriggerSet};
use super::network::Architecture;
use super::train::{train, TrainConfig, Trained};
use crate::error::Result;
use crate::numeric::SeededRng;

/// Everything needed to rebuild a host model, its data and its trigger set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HostConfig {
    pub data: BlobSpec,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub trigger_per_class: usize,
    pub trigger_seed: u64,
    /// Hidden layer the keys are bound to (0-based).
    pub layer: usize,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            data: BlobSpec::default(),
            hidden: vec![32, 32],
            train: TrainConfig::default(),
            trigger_per_class: 4,
            trigger_seed: 3,
            layer: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HostBuild {
    pub dataset: Dataset,
    pub trained: Trained,
    pub trigger: TriggerSet,
}

impl HostConfig {
    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::mlp(self.data.dim, &self.hidden, self.data.num_classes)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        generate_synthetic_dataset(&self.data)
    }

    pub fn trigger(&self, dataset: &Dataset) -> Result<TriggerSet> {
        select_trigger_set(dataset, self.trigger_per_class, &mut SeededRng::new(self.trigger_seed))
    }

    pub fn build(&self) -> Result<HostBuild> {
        let dataset = self.dataset()?;
        let arch = self.architecture()?;
        arch.check_hidden(self.layer)?;
        let trained = train(&arch, &dataset, &self.train)?;
        let trigger = self.trigger(&dataset)?;
        Ok(HostBuild {
            dataset,
            trained,
            trigger,
        })
    }
}
