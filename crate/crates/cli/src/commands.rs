use std::fs;
use std::path::{Path, PathBuf};

use freemark_core::attacks::{
    fine_tune_attack, forge_keys, forged_key_bers, prune, BerSummary, ForgedAlpha, ForgedKeySpec,
    PruneScope, PruneSpec,
};
use freemark_core::codec::{Decode, Encode};
use freemark_core::experiment::Runner;
use freemark_core::extract::{extract, Verdict};
use freemark_core::host::{accuracy, ModelCheckpoint, TriggerSet};
use freemark_core::keygen::{generate_keys, WatermarkVector};
use freemark_core::numeric::SeededRng;
use freemark_core::par::Exec;
use freemark_core::registry::{KeyRecord, KeyStore};
use freemark_core::Error;
use serde::Serialize;
use serde_json::json;

use crate::config::{self, Config};
use crate::{AttackCommand, Cli, CliError, Command};

/// Child stream of the keygen seed used to draw a random watermark.
const WATERMARK_STREAM: u64 = 3;

type Outcome = Result<u8, CliError>;

pub fn run(cli: &Cli) -> Outcome {
    let mut cfg = config::load(cli.config.as_deref(), &cli.sets)?;
    match &cli.command {
        Command::Train { out } => {
            if let Some(seed) = cli.seed {
                cfg.host.train.seed = seed;
            }
            train(cli, &cfg, out)
        }
        Command::Keygen {
            model,
            trigger,
            layer,
            watermark,
            bits,
            watermark_out,
            key_out,
            owner,
        } => {
            if let Some(seed) = cli.seed {
                cfg.keygen.seed = seed;
            }
            if let Some(layer) = layer {
                cfg.host.layer = *layer;
            }
            if let Some(bits) = bits {
                cfg.watermark_bits = *bits;
            }
            let paths = KeygenPaths {
                model,
                trigger: trigger.clone().unwrap_or_else(|| sibling(model, "trigger")),
                watermark: watermark.as_deref(),
                watermark_out: watermark_out.clone().unwrap_or_else(|| sibling(model, "watermark")),
                key_out: key_out.clone().unwrap_or_else(|| sibling(model, "key")),
            };
            keygen(cli, &cfg, &paths, owner)
        }
        Command::Extract { model, key_id, out } => extract_cmd(cli, &cfg, model, key_id, out.as_deref()),
        Command::Verify {
            model,
            key_id,
            watermark,
            theta,
            out,
        } => {
            if let Some(theta) = theta {
                cfg.theta = *theta;
            }
            verify_cmd(cli, &cfg, model, key_id, watermark, out.as_deref())
        }
        Command::Attack(attack) => match attack {
            AttackCommand::Prune { model, eta, layers, out } => {
                let scope = layers.clone().map_or(PruneScope::All, PruneScope::Layers);
                prune_cmd(cli, &cfg, model, PruneSpec { eta: *eta, scope }, out)
            }
            AttackCommand::Finetune {
                model,
                epochs,
                freeze,
                out,
            } => {
                if let Some(seed) = cli.seed {
                    cfg.finetune.seed = seed;
                }
                if let Some(epochs) = epochs {
                    cfg.finetune.epochs = *epochs;
                }
                if let Some(freeze) = freeze {
                    cfg.finetune.freeze = freeze.clone();
                }
                finetune_cmd(cli, &cfg, model, out)
            }
            AttackCommand::Forge {
                model,
                key_id,
                watermark,
                count,
                alpha,
                out,
            } => {
                let alpha = alpha.map_or(ForgedAlpha::Genuine, ForgedAlpha::Fixed);
                let seed = cli.seed.unwrap_or(cfg.experiment.master_seed);
                forge_cmd(cli, &cfg, model, key_id, watermark, *count, alpha, seed, out.as_deref())
            }
        },
        Command::Experiment { out, sequential } => {
            if let Some(seed) = cli.seed {
                cfg.experiment.master_seed = seed;
            }
            experiment(cli, &cfg, out, *sequential)
        }
    }
}

/// `model.fmck` -> `model.fmck.<ext>`
fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn load_model(path: &Path) -> Result<ModelCheckpoint, CliError> {
    ModelCheckpoint::load(path).map_err(|e| with_path(e, path))
}

fn read_watermark(path: &Path) -> Result<WatermarkVector, CliError> {
    let text = fs::read_to_string(path).map_err(|e| with_path(e.into(), path))?;
    Ok(WatermarkVector::from_hex(&text)?)
}

fn with_path(e: Error, path: &Path) -> CliError {
    match e {
        Error::Io(io) => CliError::Core(Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        ))),
        other => CliError::Core(other),
    }
}

/// An output document: the command's own fields plus the resolved config.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    command: &'a str,
    #[serde(flatten)]
    body: T,
    config: serde_json::Value,
}

fn artifact<T: Serialize>(command: &str, body: T, cfg: &Config) -> String {
    let doc = Artifact {
        command,
        body,
        config: cfg.echo(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("artifact serializes");
    s.push('\n');
    s
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| with_path(e.into(), path))
}

fn train(cli: &Cli, cfg: &Config, out: &Path) -> Outcome {
    let build = cfg.host.build()?;
    let model = &build.trained.checkpoint;
    model.save(out).map_err(|e| with_path(e, out))?;
    write(&sibling(out, "trigger"), build.trigger.to_bytes())?;
    let body = json!({
        "checkpoint": out,
        "fingerprint": model.fingerprint(),
        "accuracy": build.trained.final_accuracy(),
        "dataset_id": build.dataset.id(),
        "trigger_digest": hex::encode(build.trigger.digest()),
        "trace": build.trained.trace,
    });
    let doc = artifact("train", &body, cfg);
    write(&sibling(out, "json"), &doc)?;
    if cli.json {
        print!("{doc}");
    } else {
        println!("checkpoint   {}", out.display());
        println!("fingerprint  {}", model.fingerprint());
        println!("accuracy     {:.4}", build.trained.final_accuracy());
    }
    Ok(0)
}

struct KeygenPaths<'a> {
    model: &'a Path,
    trigger: PathBuf,
    watermark: Option<&'a Path>,
    watermark_out: PathBuf,
    key_out: PathBuf,
}

fn keygen(cli: &Cli, cfg: &Config, paths: &KeygenPaths<'_>, owner: &str) -> Outcome {
    let model = load_model(paths.model)?;
    let trigger_bytes = fs::read(&paths.trigger).map_err(|e| with_path(e.into(), &paths.trigger))?;
    let trigger = TriggerSet::from_bytes(&trigger_bytes)?;
    let b = match paths.watermark {
        Some(p) => read_watermark(p)?,
        None => WatermarkVector::random(
            cfg.watermark_bits,
            &mut SeededRng::new(cfg.keygen.seed).split(WATERMARK_STREAM),
        )?,
    };
    let before = model.fingerprint();
    let out = generate_keys(&model, &trigger, cfg.host.layer, &b, &cfg.keygen)?;
    let after = model.fingerprint();
    if before != after {
        return Err(CliError::Integrity("model changed during key generation".into()));
    }
    let on_disk = load_model(paths.model)?.fingerprint();
    if on_disk != before {
        return Err(CliError::Integrity("checkpoint file changed during key generation".into()));
    }

    let record = KeyRecord::new(out.keys, trigger, owner);
    let store = KeyStore::open(&cli.store)?;
    let key_id = store.register(&record)?;
    write(&paths.key_out, record.to_bytes()?)?;
    if paths.watermark.is_none() {
        write(&paths.watermark_out, format!("{}\n", b.to_hex()))?;
    }
    let body = json!({
        "key_id": key_id,
        "store": cli.store,
        "key_record": paths.key_out,
        "watermark_file": paths.watermark.map_or(paths.watermark_out.as_path(), |p| p),
        "watermark_commitment": hex::encode(b.commitment()),
        "bits": b.len(),
        "layer": record.keypair.layer,
        "alpha": record.keypair.alpha,
        "iterations": out.iterations,
        "min_margin": out.min_margin,
        "fingerprint_before": before,
        "fingerprint_after": after,
    });
    let doc = artifact("keygen", &body, cfg);
    write(&sibling(&paths.key_out, "json"), &doc)?;
    if cli.json {
        print!("{doc}");
    } else {
        println!("key-id              {key_id}");
        println!("fingerprint before  {before}");
        println!("fingerprint after   {after}");
        println!("alpha               {}", record.keypair.alpha);
        println!("solver iterations   {}", out.iterations);
        if paths.watermark.is_none() {
            println!("watermark written   {} (keep private)", paths.watermark_out.display());
        }
    }
    Ok(0)
}

fn extract_cmd(cli: &Cli, cfg: &Config, model: &Path, key_id: &str, out: Option<&Path>) -> Outcome {
    let suspect = load_model(model)?;
    let record = KeyStore::open(&cli.store)?.fetch(key_id)?;
    let bhat = extract(&suspect, &record.trigger, &record.keypair)?;
    let body = json!({
        "key_id": key_id,
        "suspect_fingerprint": suspect.fingerprint(),
        "bits": bhat.len(),
        "extracted": hex::encode(bhat.to_packed()),
    });
    let doc = artifact("extract", &body, cfg);
    if let Some(out) = out {
        write(out, &doc)?;
    }
    if cli.json {
        print!("{doc}");
    } else {
        println!("{}", hex::encode(bhat.to_packed()));
    }
    Ok(0)
}

fn verify_cmd(cli: &Cli, cfg: &Config, model: &Path, key_id: &str, watermark: &Path, out: Option<&Path>) -> Outcome {
    let suspect = load_model(model)?;
    let b = read_watermark(watermark)?;
    let store = KeyStore::open(&cli.store)?;
    let report = store.verify_claim(key_id, &suspect, &b, cfg.theta)?;
    let doc = artifact("verify", &report, cfg);
    if let Some(out) = out {
        write(out, &doc)?;
    }
    if cli.json {
        print!("{doc}");
    } else {
        print!("{}", report.to_text());
    }
    Ok(match report.verdict {
        Verdict::Copy => 0,
        Verdict::NotCopy => 1,
    })
}

fn prune_cmd(cli: &Cli, cfg: &Config, model: &Path, spec: PruneSpec, out: &Path) -> Outcome {
    let original = load_model(model)?;
    let pruned = prune(&original, &spec)?;
    pruned.model.save(out).map_err(|e| with_path(e, out))?;
    let dataset = cfg.host.dataset()?;
    let body = json!({
        "attack": "prune",
        "eta": spec.eta,
        "scope": spec.scope,
        "zeroed": pruned.zeroed,
        "zeroed_fraction": pruned.zeroed_fraction,
        "accuracy_before": accuracy(&original, &dataset),
        "accuracy_after": accuracy(&pruned.model, &dataset),
        "fingerprint_before": original.fingerprint(),
        "fingerprint_after": pruned.model.fingerprint(),
        "checkpoint": out,
    });
    finish_attack(cli, cfg, "attack prune", &body, out)
}

fn finetune_cmd(cli: &Cli, cfg: &Config, model: &Path, out: &Path) -> Outcome {
    let original = load_model(model)?;
    let dataset = cfg.host.dataset()?;
    let tuned = fine_tune_attack(&original, &dataset, &cfg.finetune)?;
    tuned.checkpoint.save(out).map_err(|e| with_path(e, out))?;
    let body = json!({
        "attack": "finetune",
        "spec": cfg.finetune,
        "accuracy_before": accuracy(&original, &dataset),
        "accuracy_after": accuracy(&tuned.checkpoint, &dataset),
        "fingerprint_before": original.fingerprint(),
        "fingerprint_after": tuned.checkpoint.fingerprint(),
        "trace": tuned.trace,
        "checkpoint": out,
    });
    finish_attack(cli, cfg, "attack finetune", &body, out)
}

fn finish_attack(cli: &Cli, cfg: &Config, command: &str, body: &serde_json::Value, out: &Path) -> Outcome {
    let doc = artifact(command, body, cfg);
    write(&sibling(out, "json"), &doc)?;
    if cli.json {
        print!("{doc}");
    } else {
        println!("checkpoint       {}", out.display());
        println!("fingerprint      {}", body["fingerprint_after"].as_str().unwrap_or_default());
        println!("accuracy before  {:.4}", body["accuracy_before"].as_f64().unwrap_or(f64::NAN));
        println!("accuracy after   {:.4}", body["accuracy_after"].as_f64().unwrap_or(f64::NAN));
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn forge_cmd(
    cli: &Cli,
    cfg: &Config,
    model: &Path,
    key_id: &str,
    watermark: &Path,
    count: usize,
    alpha: ForgedAlpha,
    seed: u64,
    out: Option<&Path>,
) -> Outcome {
    let suspect = load_model(model)?;
    let b = read_watermark(watermark)?;
    let record = KeyStore::open(&cli.store)?.fetch(key_id)?;
    if b.commitment() != record.watermark_commitment {
        return Err(Error::CommitmentMismatch.into());
    }
    let spec = ForgedKeySpec {
        count,
        seed,
        bits: record.keypair.bits(),
        width: record.keypair.width(),
    };
    let forged = forge_keys(&spec)?;
    let bers = forged_key_bers(&suspect, &record.trigger, &record.keypair, &b, &forged, alpha, Exec::default())?;
    let summary = BerSummary::from_values(&bers, 20)?;
    let copies = bers
        .iter()
        .filter(|&&v| Verdict::from_ber(v, cfg.theta) == Verdict::Copy)
        .count();
    let body = json!({
        "key_id": key_id,
        "suspect_fingerprint": suspect.fingerprint(),
        "spec": spec,
        "alpha": alpha,
        "theta": cfg.theta,
        "copies": copies,
        "summary": summary,
        "bers": bers,
    });
    let doc = artifact("attack forge", &body, cfg);
    if let Some(out) = out {
        write(out, &doc)?;
    }
    if cli.json {
        print!("{doc}");
    } else {
        println!("forged keys  {count}");
        println!("ber mean     {:.4}", summary.mean);
        println!("ber std      {:.4}", summary.std);
        println!("ber range    [{:.4}, {:.4}]", summary.min, summary.max);
        println!("copy claims  {copies}");
    }
    Ok(0)
}

fn experiment(cli: &Cli, cfg: &Config, out: &Path, sequential: bool) -> Outcome {
    let exec = if sequential { Exec::Sequential } else { Exec::default() };
    let plan = cfg.plan();
    plan.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let report = Runner::new(plan).with_exec(exec).run()?;
    report.write_to(out).map_err(|e| with_path(e, out))?;
    write(&out.join("config.toml"), cfg.to_toml()?)?;
    if cli.json {
        print!("{}", report.to_json()?);
    } else {
        let t = &report.table;
        println!("report                              {}", out.join("report.json").display());
        println!("host accuracy                       {:.4}", t.host_accuracy);
        println!("BER, correct keys                   {:.4}", t.ber_correct_secret_keys);
        println!("BER, forged keys (mean)             {:.4}", t.ber_forged_secret_keys_mean);
        println!("BER, other hyperparameters (mean)   {:.4}", t.ber_different_hyperparameters_mean);
        println!("BER, other training data (mean)     {:.4}", t.ber_different_training_data_mean);
        println!("accuracy / BER after fine-tuning    {:.4} / {:.4}", t.accuracy_after_fine_tuning, t.ber_after_fine_tuning);
        println!(
            "accuracy / BER after pruning ({})  {:.4} / {:.4}",
            report.robustness.pruning_eta, t.accuracy_after_pruning, t.ber_after_pruning
        );
        for f in &report.failures {
            println!("FAILED  {f}");
        }
    }
    if report.failures.is_empty() {
        Ok(0)
    } else {
        Err(CliError::ExperimentFailed(report.failures.len()))
    }
}
