//! Command-line interface.
//!
//! Exit codes: 0 success, 1 a check failed (gradient checks), 2 bad usage or
//! invalid input, 3 training diverged. Every artifact lands under the
//! caller-supplied `--out` directory and is byte-reproducible for a fixed
//! seed, with one documented exception: the `wall_ms` field of the epoch log.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, Split};
use crate::model::{
    checkpoint, gradchecks, metrics, train::train, AblationFlags, Forecaster, ForwardMode,
    ModelConfig,
};
use crate::synthetic::{generate_synthetic, SyntheticSpec};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "freqcast",
    version,
    about = "Frequency-domain traffic forecasting with a learned node-connectivity mask"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic traffic dataset from a TOML spec
    Synth {
        /// TOML file describing the series to generate
        spec: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and save the best-validation checkpoint
    Train {
        /// Model/training configuration (TOML)
        config: PathBuf,
        /// Dataset CSV (with its `.meta.json` sidecar next to it)
        data: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated ablation flags, replacing the config's set
        #[arg(long)]
        ablation: Option<String>,
        /// Override the config epoch budget
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Override the config batch size
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Score a checkpoint on one split of a dataset
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write denormalized predictions for one window
    Predict {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Window index within the split
        #[arg(long, default_value_t = 0)]
        window: usize,
    },
    /// Export connectivity probabilities, the binary mask, and extreme pairs
    ExportMask {
        checkpoint: PathBuf,
        data: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Window index within the split
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// How many highest- and lowest-probability node pairs to list
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Verify analytic gradients against finite differences, module by module
    Gradcheck {
        /// Corrupt one module's analytic gradient to prove the check can fail
        #[arg(long, hide = true, value_name = "MODULE")]
        inject_bug: Option<String>,
    },
}

/// Map an error to its process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } => 3,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
        Command::Train {
            config,
            data,
            out,
            seed,
            ablation,
            max_epochs,
            batch_size,
        } => cmd_train(&config, &data, &out, seed, ablation, max_epochs, batch_size),
        Command::Eval {
            checkpoint,
            data,
            out,
            split,
        } => cmd_eval(&checkpoint, &data, &out, &split),
        Command::Predict {
            checkpoint,
            data,
            out,
            split,
            window,
        } => cmd_predict(&checkpoint, &data, &out, &split, window),
        Command::ExportMask {
            checkpoint,
            data,
            out,
            split,
            window,
            k,
        } => cmd_export_mask(&checkpoint, &data, &out, &split, window, k),
        Command::Gradcheck { inject_bug } => cmd_gradcheck(inject_bug.as_deref()),
    }
}

// ── Helpers ──────────────────────────────────────────────────────────────────

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Fingerprint of the dataset: CSV bytes followed by sidecar bytes.
fn data_fingerprint(csv_path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(fs::read(csv_path).map_err(|e| Error::io(csv_path, e))?);
    let meta = data::meta_path(csv_path);
    hasher.update(fs::read(&meta).map_err(|e| Error::io(&meta, e))?);
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
}

/// Window index within a split → global window index.
fn resolve_window(dataset: &Dataset, split: Split, window: usize) -> Result<usize> {
    let range = dataset.split_range(split);
    let len = range.len();
    if window >= len {
        return Err(Error::Config(format!(
            "window {window} out of range: split {split:?} holds {len} windows"
        )));
    }
    Ok(range.start + window)
}

// ── synth ────────────────────────────────────────────────────────────────────

fn cmd_synth(spec_path: &Path, out: &Path) -> Result<i32> {
    let spec = SyntheticSpec::from_toml(&read_to_string(spec_path)?)?;
    let series = generate_synthetic(&spec)?;
    ensure_dir(out)?;
    let csv = out.join("data.csv");
    data::save_csv_with_meta(&series, &csv)?;
    write_json(&out.join("spec.json"), &spec)?;
    println!(
        "wrote {} steps × {} nodes ({} clusters) to {}",
        spec.steps,
        spec.nodes,
        spec.cluster_count(),
        csv.display()
    );
    Ok(0)
}

// ── train ────────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct ManifestData {
    path: String,
    fingerprint: String,
    steps: usize,
    nodes: usize,
    windows: usize,
}

#[derive(Serialize)]
struct ManifestArtifacts {
    checkpoint: String,
    train_log: String,
}

/// Written before training starts, so a crashed run still records what it
/// was attempting.
#[derive(Serialize)]
struct RunManifest {
    tool_version: String,
    command: String,
    seed: u64,
    config: ModelConfig,
    data: ManifestData,
    artifacts: ManifestArtifacts,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config_path: &Path,
    data_path: &Path,
    out: &Path,
    seed: Option<u64>,
    ablation: Option<String>,
    max_epochs: Option<usize>,
    batch_size: Option<usize>,
) -> Result<i32> {
    // Validate every input before creating any output.
    let mut config = ModelConfig::from_toml(&read_to_string(config_path)?)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(list) = &ablation {
        config.ablation = AblationFlags::parse_list(list)?;
    }
    if let Some(m) = max_epochs {
        config.max_epochs = m;
    }
    if let Some(b) = batch_size {
        config.batch_size = b;
    }
    let series = data::load_csv_with_meta(data_path)?;
    if config.n == 0 {
        config.n = series.nodes;
    } else if config.n != series.nodes {
        return Err(Error::Config(format!(
            "config expects {} nodes but the dataset has {}",
            config.n, series.nodes
        )));
    }
    config.validate()?;
    let dataset = Dataset::from_series(&series, config.t, config.h)?;
    let fingerprint = data_fingerprint(data_path)?;

    ensure_dir(out)?;
    let checkpoint_path = out.join("checkpoint.fqc");
    let log_path = out.join("train_log.jsonl");
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "train".to_string(),
        seed: config.seed,
        config: config.clone(),
        data: ManifestData {
            path: data_path.display().to_string(),
            fingerprint,
            steps: series.steps,
            nodes: series.nodes,
            windows: dataset.windows.len(),
        },
        artifacts: ManifestArtifacts {
            checkpoint: checkpoint_path.display().to_string(),
            train_log: log_path.display().to_string(),
        },
    };
    write_json(&out.join("manifest.json"), &manifest)?;

    let outcome = train(&config, &dataset)?;
    let mut log_text = String::new();
    for record in &outcome.log {
        log_text.push_str(
            &serde_json::to_string(record)
                .map_err(|e| Error::Config(format!("serializing epoch record: {e}")))?,
        );
        log_text.push('\n');
    }
    write_bytes(&log_path, log_text.as_bytes())?;
    checkpoint::save(
        &outcome.model,
        &dataset.normalizer,
        outcome.best_epoch,
        outcome.best_val_loss,
        &checkpoint_path,
    )?;
    println!(
        "trained {} epochs ({}), best val loss {:.6} at epoch {}",
        outcome.log.len(),
        if outcome.stopped_early {
            "stopped early"
        } else {
            "full budget"
        },
        outcome.best_val_loss,
        outcome.best_epoch
    );
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(0)
}

// ── eval ─────────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct EvalDocument {
    split: String,
    data_fingerprint: String,
    #[serde(flatten)]
    outcome: metrics::EvalOutcome,
}

/// Load a checkpoint and the dataset it will be scored on, verifying that the
/// dataset matches the model's shape. Returns the rebuilt dataset using the
/// *checkpoint's* normalizer so that training-time scaling is reproduced
/// exactly.
fn load_pair(checkpoint_path: &Path, data_path: &Path) -> Result<(Forecaster, Dataset)> {
    let ckpt = checkpoint::load(checkpoint_path)?;
    let series = data::load_csv_with_meta(data_path)?;
    if series.nodes != ckpt.model.config.n {
        return Err(Error::Config(format!(
            "checkpoint expects {} nodes but the dataset has {}",
            ckpt.model.config.n, series.nodes
        )));
    }
    if series.steps_per_day() != ckpt.model.steps_per_day {
        return Err(Error::Config(format!(
            "checkpoint was trained at {} steps/day but the dataset has {}",
            ckpt.model.steps_per_day,
            series.steps_per_day()
        )));
    }
    let dataset = Dataset::from_series_with_normalizer(
        &series,
        ckpt.model.config.t,
        ckpt.model.config.h,
        ckpt.normalizer,
    )?;
    Ok((ckpt.model, dataset))
}

fn cmd_eval(checkpoint_path: &Path, data_path: &Path, out: &Path, split: &str) -> Result<i32> {
    let split = parse_split(split)?;
    let (model, dataset) = load_pair(checkpoint_path, data_path)?;
    let fingerprint = data_fingerprint(data_path)?;
    let outcome = metrics::evaluate(&model, &dataset, split)?;
    ensure_dir(out)?;
    write_json(
        &out.join("metrics.json"),
        &EvalDocument {
            split: format!("{split:?}").to_lowercase(),
            data_fingerprint: fingerprint,
            outcome: outcome.clone(),
        },
    )?;
    println!(
        "{:?} split, {} windows: MAE {:.4}  RMSE {:.4}  MAPE {}  (normalized Huber {:.6})",
        split,
        outcome.windows,
        outcome.metrics.mae,
        outcome.metrics.rmse,
        outcome
            .metrics
            .mape
            .map_or("n/a".to_string(), |m| format!("{:.2}%", m * 100.0)),
        outcome.huber_normalized
    );
    Ok(0)
}

// ── predict ──────────────────────────────────────────────────────────────────

fn cmd_predict(
    checkpoint_path: &Path,
    data_path: &Path,
    out: &Path,
    split: &str,
    window: usize,
) -> Result<i32> {
    let split = parse_split(split)?;
    let (model, dataset) = load_pair(checkpoint_path, data_path)?;
    let global = resolve_window(&dataset, split, window)?;
    let batch = dataset.batch(&[global]);
    let pred = model.forward(&batch, &ForwardMode::Eval)?;
    let values = pred.real_data();

    let mut csv = String::from("horizon_step,node_id,prediction,actual\n");
    for h in 0..batch.h {
        for nd in 0..batch.n {
            let p = dataset.normalizer.denormalize(values[h * batch.n + nd]);
            let a = batch.y_raw[h * batch.n + nd];
            csv.push_str(&format!("{},{},{},{}\n", h + 1, dataset.node_ids[nd], p, a));
        }
    }
    ensure_dir(out)?;
    let path = out.join("predictions.csv");
    write_bytes(&path, csv.as_bytes())?;
    println!(
        "wrote {}×{} predictions for window {window} of {split:?} to {}",
        batch.h,
        batch.n,
        path.display()
    );
    Ok(0)
}

// ── export-mask ──────────────────────────────────────────────────────────────

fn matrix_csv(header: &[String], rows: &[f64], n: usize, fmt: impl Fn(f64) -> String) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| fmt(rows[i * n + j])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn cmd_export_mask(
    checkpoint_path: &Path,
    data_path: &Path,
    out: &Path,
    split: &str,
    window: usize,
    k: usize,
) -> Result<i32> {
    let split = parse_split(split)?;
    let (model, dataset) = load_pair(checkpoint_path, data_path)?;
    let global = resolve_window(&dataset, split, window)?;
    let batch = dataset.batch(&[global]);
    let sm = model.connectivity(&batch)?;
    let n = batch.n;
    let probs = sm.probs.real_data();
    let binary = sm.binary.real_data();

    // all unordered off-diagonal pairs, by probability (symmetric matrix)
    let mut pairs: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, probs[i * n + j]))
        .collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let take = k.min(pairs.len());
    let mut pair_csv = String::from("kind,node_i,node_j,probability\n");
    for &(i, j, p) in &pairs[..take] {
        pair_csv.push_str(&format!(
            "top,{},{},{}\n",
            dataset.node_ids[i], dataset.node_ids[j], p
        ));
    }
    for &(i, j, p) in pairs[pairs.len() - take..].iter().rev() {
        pair_csv.push_str(&format!(
            "bottom,{},{},{}\n",
            dataset.node_ids[i], dataset.node_ids[j], p
        ));
    }

    ensure_dir(out)?;
    write_bytes(
        &out.join("probs.csv"),
        matrix_csv(&dataset.node_ids, probs, n, |v| v.to_string()).as_bytes(),
    )?;
    write_bytes(
        &out.join("mask.csv"),
        matrix_csv(&dataset.node_ids, binary, n, |v| format!("{}", v as i64)).as_bytes(),
    )?;
    write_bytes(&out.join("pairs.csv"), pair_csv.as_bytes())?;
    let kept: usize = binary.iter().map(|&v| v as usize).sum();
    println!(
        "window {window} of {split:?}: mask keeps {kept}/{} directed links ({} diagonal); pair lists in {}",
        n * n,
        n,
        out.join("pairs.csv").display()
    );
    Ok(0)
}

// ── gradcheck ────────────────────────────────────────────────────────────────

fn cmd_gradcheck(inject: Option<&str>) -> Result<i32> {
    if let Some(module) = inject {
        if !gradchecks::MODULES.contains(&module) {
            return Err(Error::Config(format!(
                "unknown module {module:?}; known: {}",
                gradchecks::MODULES.join(", ")
            )));
        }
    }
    let reports = gradchecks::run_all(inject)?;
    println!(
        "{:<20} {:>12} {:>9} {:>7}  result",
        "module", "max_rel_err", "tol", "coords"
    );
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{:<20} {:>12.3e} {:>9.0e} {:>7}  {}",
            r.name,
            r.max_rel_err,
            r.tol,
            r.coords_checked,
            if r.passed() { "pass" } else { "FAIL" }
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        println!("all gradient checks passed");
        Ok(0)
    } else {
        println!("gradient checks FAILED in: {}", failed.join(", "));
        Ok(1)
    }
}
