//! Desk-scale security, integrity and robustness experiments.
//!
//! Every stochastic input is derived from `ExperimentPlan::master_seed` via
//! [`derive_seed`] with a fixed stream label per cell, so a plan replays to a
//! byte-identical report regardless of how many worker threads ran it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{
    fine_tune_attack, forge_keys_with, forged_key_bers, overwrite_scenario, prune,
    train_unmarked_variant, BerSummary, FineTuneSpec, ForgedAlpha, ForgedKeySpec,
    OverwriteReport, PruneSpec, UnmarkedVariant,
};
use crate::codec::Encode;
use crate::error::{Error, Result};
use crate::extract::{extract, verify, Verdict};
use crate::host::{accuracy, mean_activation, HostBuild, HostConfig};
use crate::keygen::{
    generate_keys, KeyGenConfig, KeyGenOutcome, WatermarkVector, DEFAULT_WATERMARK_BITS,
};
use crate::numeric::{ber, derive_seed, SeededRng};
use crate::par::Exec;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

mod stream {
    pub const WATERMARK: u64 = 200;
    pub const KEYGEN: u64 = 100;
    pub const FORGED: u64 = 2;
    pub const HYPER: u64 = 300;
    pub const DATA: u64 = 400;
    pub const DATA_TRAIN: u64 = 500;
    pub const FINETUNE: u64 = 600;
    pub const OVERWRITE_BITS: u64 = 700;
    pub const OVERWRITE_KEYS: u64 = 800;
}

/// Acceptance bands checked by the runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bands {
    pub forged_min: f64,
    pub forged_max: f64,
    pub forged_mean_min: f64,
    pub forged_mean_max: f64,
    pub integrity_min: f64,
    pub integrity_max: f64,
    /// Largest tolerated accuracy drop (fraction) at the robustness pruning eta.
    pub max_pruning_accuracy_drop: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self {
            forged_min: 0.39,
            forged_max: 0.61,
            forged_mean_min: 0.45,
            forged_mean_max: 0.55,
            integrity_min: 0.35,
            integrity_max: 0.65,
            max_pruning_accuracy_drop: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub host: HostConfig,
    pub keygen: KeyGenConfig,
    pub watermark_bits: usize,
    /// Verification threshold.
    pub theta: f64,
    pub master_seed: u64,
    /// Independent keys (and fine-tune runs) per stochastic cell.
    pub trials: usize,
    pub forged_count: usize,
    pub forged_alpha: ForgedAlpha,
    pub hyper_variants: usize,
    pub data_variants: usize,
    pub finetune: FineTuneSpec,
    pub robust_eta: f64,
    pub eta_grid: Vec<f64>,
    pub overwrite_count: usize,
    pub bands: Bands,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            host: HostConfig::default(),
            keygen: KeyGenConfig::default(),
            watermark_bits: DEFAULT_WATERMARK_BITS,
            theta: 0.25,
            master_seed: 2024,
            trials: 5,
            forged_count: 200,
            forged_alpha: ForgedAlpha::Genuine,
            hyper_variants: 10,
            data_variants: 10,
            finetune: FineTuneSpec::default(),
            robust_eta: 0.01,
            eta_grid: vec![
                0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0,
            ],
            overwrite_count: 10,
            bands: Bands::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.keygen.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument("theta must be in [0, 1]".into()));
        }
        if self.eta_grid.iter().any(|e| e.is_nan() || *e < 0.0) || self.robust_eta.is_nan() || self.robust_eta < 0.0 {
            return Err(Error::InvalidArgument("pruning thresholds must be >= 0".into()));
        }
        self.host.architecture()?.check_hidden(self.host.layer)
    }

    pub fn watermark(&self, trial: usize) -> Result<WatermarkVector> {
        let seed = derive_seed(self.master_seed, stream::WATERMARK + trial as u64);
        WatermarkVector::random(self.watermark_bits, &mut SeededRng::new(seed))
    }

    pub fn keygen_config(&self, trial: usize) -> KeyGenConfig {
        KeyGenConfig {
            seed: derive_seed(self.master_seed, stream::KEYGEN + trial as u64),
            ..self.keygen.clone()
        }
    }

    pub fn forged_seed(&self) -> u64 {
        derive_seed(self.master_seed, stream::FORGED)
    }

    pub fn unmarked_variants(&self) -> Vec<UnmarkedVariant> {
        let base = &self.host.train;
        let hyper = (0..self.hyper_variants).map(|i| UnmarkedVariant::Hyperparams {
            learning_rate: Some(base.learning_rate * (1.0 + 0.25 * ((i % 4) as f64 + 1.0))),
            epochs: Some(base.epochs + 5 * (i % 3)),
            seed: derive_seed(self.master_seed, stream::HYPER + i as u64),
        });
        let data = (0..self.data_variants).map(|i| UnmarkedVariant::Data {
            data_seed: derive_seed(self.master_seed, stream::DATA + i as u64),
            train_seed: derive_seed(self.master_seed, stream::DATA_TRAIN + i as u64),
        });
        hyper.chain(data).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostSummary {
    pub fingerprint: String,
    pub dataset_id: String,
    pub accuracy: f64,
    pub layer: usize,
    pub width: usize,
    pub trigger_size: usize,
    pub trigger_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyCell {
    pub trial: usize,
    pub key_id: String,
    pub keygen_seed: u64,
    pub alpha: f64,
    pub iterations: usize,
    pub min_margin: f64,
    pub offset_mismatches: usize,
    pub ber: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgedCell {
    pub key_id: String,
    pub seed: u64,
    pub alpha: f64,
    pub summary: BerSummary,
    pub copies: usize,
    pub bers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub correct_key: Vec<KeyCell>,
    pub forged: ForgedCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityRow {
    pub variant: UnmarkedVariant,
    pub fingerprint: String,
    pub key_id: String,
    pub accuracy_own_data: f64,
    pub ber: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCell {
    pub trial: usize,
    pub key_id: String,
    pub seed: Option<u64>,
    pub fingerprint: String,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub ber: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub zeroed_fraction: f64,
    pub accuracy: f64,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub fine_tune: Vec<AttackCell>,
    pub pruning_eta: f64,
    pub pruning: Vec<AttackCell>,
    pub pruning_sweep: Vec<SweepPoint>,
    /// Largest swept eta whose model keeps BER 0 while accuracy stays above
    /// chance plus ten points.
    pub largest_eta_with_zero_ber: Option<f64>,
    pub overwrite: OverwriteReport,
}

/// Headline numbers, one per row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub host_accuracy: f64,
    pub ber_correct_secret_keys: f64,
    pub ber_forged_secret_keys_mean: f64,
    pub ber_different_hyperparameters_mean: f64,
    pub ber_different_training_data_mean: f64,
    pub accuracy_after_fine_tuning: f64,
    pub ber_after_fine_tuning: f64,
    pub accuracy_after_pruning: f64,
    pub ber_after_pruning: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub plan: ExperimentPlan,
    pub host: HostSummary,
    pub table: SummaryTable,
    pub security: SecurityReport,
    pub integrity: Vec<IntegrityRow>,
    pub robustness: RobustnessReport,
    pub failures: Vec<String>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn pruning_sweep_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["eta", "zeroed_fraction", "accuracy", "ber"])
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for p in &self.robustness.pruning_sweep {
            w.serialize((p.eta, p.zeroed_fraction, p.accuracy, p.ber))
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn forged_csv(&self) -> String {
        let mut out = String::from("index,ber\n");
        for (i, b) in self.security.forged.bers.iter().enumerate() {
            out.push_str(&format!("{i},{b}\n"));
        }
        out
    }

    /// Writes `report.json`, `pruning_sweep.csv` and `forged_bers.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("pruning_sweep.csv"), self.pruning_sweep_csv()?)?;
        std::fs::write(dir.join("forged_bers.csv"), self.forged_csv())?;
        Ok(())
    }
}

/// The host plus one key per trial, shared by every experiment family.
pub struct Prepared {
    pub host: HostBuild,
    pub keys: Vec<(KeyGenOutcome, WatermarkVector)>,
}

impl Prepared {
    pub fn primary(&self) -> &(KeyGenOutcome, WatermarkVector) {
        &self.keys[0]
    }
}

pub struct Runner {
    pub plan: ExperimentPlan,
    pub exec: Exec,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Runner {
    pub fn new(plan: ExperimentPlan) -> Self {
        Self {
            plan,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn prepare(&self) -> Result<Prepared> {
        self.plan.validate()?;
        let host = self.plan.host.build()?;
        let model = &host.trained.checkpoint;
        let keys = self.exec.try_map_range(self.plan.trials, |t| {
            let b = self.plan.watermark(t)?;
            let out = generate_keys(model, &host.trigger, self.plan.host.layer, &b, &self.plan.keygen_config(t))?;
            Ok::<_, Error>((out, b))
        })?;
        Ok(Prepared { host, keys })
    }

    pub fn host_summary(&self, prep: &Prepared) -> Result<HostSummary> {
        let model = &prep.host.trained.checkpoint;
        Ok(HostSummary {
            fingerprint: model.fingerprint(),
            dataset_id: prep.host.dataset.id(),
            accuracy: accuracy(model, &prep.host.dataset),
            layer: self.plan.host.layer,
            width: model.architecture().width(self.plan.host.layer)?,
            trigger_size: prep.host.trigger.len(),
            trigger_digest: hex::encode(prep.host.trigger.digest()),
        })
    }

    pub fn run_security(&self, prep: &Prepared) -> Result<SecurityReport> {
        let model = &prep.host.trained.checkpoint;
        let correct_key = prep
            .keys
            .iter()
            .enumerate()
            .map(|(trial, (out, b))| {
                let bhat = extract(model, &prep.host.trigger, &out.keys)?;
                let report = verify(b, &bhat, self.plan.theta)?;
                Ok(KeyCell {
                    trial,
                    key_id: out.keys.key_id(),
                    keygen_seed: out.keys.config.seed,
                    alpha: out.keys.alpha,
                    iterations: out.iterations,
                    min_margin: out.min_margin,
                    offset_mismatches: crate::keygen::offset_mismatches(&out.keys.a, &out.keys.d, b)?,
                    ber: report.ber,
                    verdict: report.verdict,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let (primary, b) = prep.primary();
        let spec = ForgedKeySpec {
            count: self.plan.forged_count,
            seed: self.plan.forged_seed(),
            bits: primary.keys.bits(),
            width: primary.keys.width(),
        };
        let forged = forge_keys_with(self.exec, &spec)?;
        let bers = forged_key_bers(
            model,
            &prep.host.trigger,
            &primary.keys,
            b,
            &forged,
            self.plan.forged_alpha,
            self.exec,
        )?;
        let alpha = match self.plan.forged_alpha {
            ForgedAlpha::Genuine => primary.keys.alpha,
            ForgedAlpha::Fixed(a) => a,
        };
        Ok(SecurityReport {
            correct_key,
            forged: ForgedCell {
                key_id: primary.keys.key_id(),
                seed: spec.seed,
                alpha,
                summary: BerSummary::from_values(&bers, 20)?,
                copies: bers.iter().filter(|&&v| Verdict::from_ber(v, self.plan.theta) == Verdict::Copy).count(),
                bers,
            },
        })
    }

    pub fn run_integrity(&self, prep: &Prepared) -> Result<Vec<IntegrityRow>> {
        let (primary, b) = prep.primary();
        let variants = self.plan.unmarked_variants();
        self.exec
            .map(&variants, |variant| {
                let trained = train_unmarked_variant(&self.plan.host, variant)?;
                let bhat = extract(&trained.checkpoint, &prep.host.trigger, &primary.keys)?;
                let report = verify(b, &bhat, self.plan.theta)?;
                Ok(IntegrityRow {
                    variant: variant.clone(),
                    fingerprint: trained.checkpoint.fingerprint(),
                    key_id: primary.keys.key_id(),
                    accuracy_own_data: trained.final_accuracy(),
                    ber: report.ber,
                    verdict: report.verdict,
                })
            })
            .into_iter()
            .collect()
    }

    pub fn run_robustness(&self, prep: &Prepared) -> Result<RobustnessReport> {
        let model = &prep.host.trained.checkpoint;
        let dataset = &prep.host.dataset;
        let trigger = &prep.host.trigger;
        let acc_before = accuracy(model, dataset);

        let fine_tune = self.exec.try_map_range(prep.keys.len(), |t| {
            let (out, b) = &prep.keys[t];
            let spec = FineTuneSpec {
                seed: derive_seed(self.plan.master_seed, stream::FINETUNE + t as u64),
                ..self.plan.finetune.clone()
            };
            let tuned = fine_tune_attack(model, dataset, &spec)?.checkpoint;
            let rate = ber(b.bits(), &extract(&tuned, trigger, &out.keys)?)?;
            Ok::<_, Error>(AttackCell {
                trial: t,
                key_id: out.keys.key_id(),
                seed: Some(spec.seed),
                fingerprint: tuned.fingerprint(),
                accuracy_before: acc_before,
                accuracy_after: accuracy(&tuned, dataset),
                ber: rate,
                verdict: Verdict::from_ber(rate, self.plan.theta),
            })
        })?;

        let pruned = prune(model, &PruneSpec::all(self.plan.robust_eta))?.model;
        let pruned_acc = accuracy(&pruned, dataset);
        let pruned_fhat = mean_activation(&pruned, trigger, self.plan.host.layer)?;
        let pruning = prep
            .keys
            .iter()
            .enumerate()
            .map(|(t, (out, b))| {
                let bhat = crate::extract::extract_from_activation(
                    &out.keys.a,
                    &out.keys.d,
                    out.keys.alpha,
                    &pruned_fhat.values,
                )?;
                let rate = ber(b.bits(), &bhat)?;
                Ok(AttackCell {
                    trial: t,
                    key_id: out.keys.key_id(),
                    seed: None,
                    fingerprint: pruned.fingerprint(),
                    accuracy_before: acc_before,
                    accuracy_after: pruned_acc,
                    ber: rate,
                    verdict: Verdict::from_ber(rate, self.plan.theta),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let (primary, b) = prep.primary();
        let mut pruning_sweep = self
            .exec
            .map(&self.plan.eta_grid, |&eta| {
                let out = prune(model, &PruneSpec::all(eta))?;
                let bhat = extract(&out.model, trigger, &primary.keys)?;
                Ok::<_, Error>(SweepPoint {
                    eta,
                    zeroed_fraction: out.zeroed_fraction,
                    accuracy: accuracy(&out.model, dataset),
                    ber: ber(b.bits(), &bhat)?,
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let floor = 1.0 / dataset.num_classes() as f64 + 0.10;
        if let Some(stop) = pruning_sweep.iter().position(|p| p.accuracy < floor) {
            pruning_sweep.truncate(stop + 1);
        }
        let largest_eta_with_zero_ber = pruning_sweep
            .iter()
            .filter(|p| p.ber == 0.0 && p.accuracy >= floor)
            .map(|p| p.eta)
            .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));

        let new_marks = (0..self.plan.overwrite_count)
            .map(|i| {
                let seed = derive_seed(self.plan.master_seed, stream::OVERWRITE_BITS + i as u64);
                WatermarkVector::random(self.plan.watermark_bits, &mut SeededRng::new(seed))
            })
            .collect::<Result<Vec<_>>>()?;
        let overwrite_cfg = KeyGenConfig {
            seed: derive_seed(self.plan.master_seed, stream::OVERWRITE_KEYS),
            ..self.plan.keygen.clone()
        };
        let overwrite = overwrite_scenario(
            model,
            trigger,
            &[(primary.keys.clone(), b.clone())],
            &new_marks,
            &overwrite_cfg,
        )?;

        Ok(RobustnessReport {
            fine_tune,
            pruning_eta: self.plan.robust_eta,
            pruning,
            pruning_sweep,
            largest_eta_with_zero_ber,
            overwrite,
        })
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        let prep = self.prepare()?;
        let fingerprint_before = prep.host.trained.checkpoint.to_bytes();
        let host = self.host_summary(&prep)?;
        let security = self.run_security(&prep)?;
        let integrity = self.run_integrity(&prep)?;
        let robustness = self.run_robustness(&prep)?;
        let mut failures = self.check(&security, &integrity, &robustness);
        if prep.host.trained.checkpoint.to_bytes() != fingerprint_before {
            failures.push("host checkpoint changed during the run".into());
        }
        let pick = |kind: &str| {
            mean(integrity.iter().filter(|r| variant_kind(&r.variant) == kind).map(|r| r.ber))
        };
        let table = SummaryTable {
            host_accuracy: host.accuracy,
            ber_correct_secret_keys: mean(security.correct_key.iter().map(|c| c.ber)),
            ber_forged_secret_keys_mean: security.forged.summary.mean,
            ber_different_hyperparameters_mean: pick("hyperparams"),
            ber_different_training_data_mean: pick("data"),
            accuracy_after_fine_tuning: mean(robustness.fine_tune.iter().map(|c| c.accuracy_after)),
            ber_after_fine_tuning: mean(robustness.fine_tune.iter().map(|c| c.ber)),
            accuracy_after_pruning: robustness.pruning.first().map_or(0.0, |c| c.accuracy_after),
            ber_after_pruning: mean(robustness.pruning.iter().map(|c| c.ber)),
        };
        Ok(ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            plan: self.plan.clone(),
            host,
            table,
            security,
            integrity,
            robustness,
            failures,
        })
    }

    fn check(
        &self,
        security: &SecurityReport,
        integrity: &[IntegrityRow],
        robustness: &RobustnessReport,
    ) -> Vec<String> {
        let bands = &self.plan.bands;
        let n = self.plan.watermark_bits as f64;
        let mut failures = Vec::new();
        for c in &security.correct_key {
            if c.ber != 0.0 {
                failures.push(format!("security/correct-key trial {}: ber {}", c.trial, c.ber));
            }
            if (c.offset_mismatches as f64) < self.plan.keygen.theta * n {
                failures.push(format!("security/offset-constraint trial {}", c.trial));
            }
        }
        let f = &security.forged.summary;
        if f.min < bands.forged_min || f.max > bands.forged_max {
            failures.push(format!("security/forged: range [{}, {}] outside band", f.min, f.max));
        }
        if f.mean < bands.forged_mean_min || f.mean > bands.forged_mean_max {
            failures.push(format!("security/forged: mean {} outside band", f.mean));
        }
        if security.forged.copies > 0 {
            failures.push(format!("security/forged: {} forged keys produced a copy verdict", security.forged.copies));
        }
        for (i, r) in integrity.iter().enumerate() {
            if r.ber < bands.integrity_min || r.ber > bands.integrity_max {
                failures.push(format!("integrity/{} #{i}: ber {} outside band", variant_kind(&r.variant), r.ber));
            }
            if r.verdict == Verdict::Copy {
                failures.push(format!("integrity/{} #{i}: false positive (ber {})", variant_kind(&r.variant), r.ber));
            }
        }
        for c in &robustness.fine_tune {
            if c.ber != 0.0 {
                failures.push(format!("robustness/fine-tune trial {}: ber {}", c.trial, c.ber));
            }
        }
        for c in &robustness.pruning {
            if c.ber != 0.0 {
                failures.push(format!("robustness/pruning trial {}: ber {}", c.trial, c.ber));
            }
            if c.accuracy_before - c.accuracy_after > bands.max_pruning_accuracy_drop {
                failures.push(format!(
                    "robustness/pruning: accuracy drop {} exceeds {}",
                    c.accuracy_before - c.accuracy_after,
                    bands.max_pruning_accuracy_drop
                ));
            }
        }
        if !robustness.overwrite.all_pass {
            failures.push("robustness/overwrite: a watermark was lost or the model changed".into());
        }
        failures
    }
}

pub fn variant_kind(v: &UnmarkedVariant) -> &'static str {
    match v {
        UnmarkedVariant::Hyperparams { .. } => "hyperparams",
        UnmarkedVariant::Data { .. } => "data",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_seeds_are_distinct_per_trial() {
        let plan = ExperimentPlan::default();
        assert_ne!(plan.keygen_config(0).seed, plan.keygen_config(1).seed);
        assert_ne!(plan.watermark(0).unwrap(), plan.watermark(1).unwrap());
        assert_eq!(plan.unmarked_variants().len(), 20);
    }

    #[test]
    fn plan_validation() {
        let bad = ExperimentPlan { trials: 0, ..ExperimentPlan::default() };
        assert!(bad.validate().is_err());
        let mut bad = ExperimentPlan::default();
        bad.host.layer = 5;
        assert!(bad.validate().is_err());
        assert!(ExperimentPlan::default().validate().is_ok());
    }

    #[test]
    fn plan_round_trips_through_json_with_defaults() {
        let plan: ExperimentPlan = serde_json::from_str(r#"{"trials": 2}"#).unwrap();
        assert_eq!(plan.trials, 2);
        assert_eq!(plan.forged_count, 200);
        let back: ExperimentPlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
        assert_eq!(back, plan);
    }
}
