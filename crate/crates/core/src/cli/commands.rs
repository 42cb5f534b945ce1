use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::{Cli, CliError};
use crate::angular::{
    binary_bound_holds_on_grid, binary_bound_root, binary_bound_slack, m_min_binary, m_min_multiclass, multiclass_bound_holds, psi,
    separation_grid,
};
use crate::dataio::{export_features, LabeledBatch};
use crate::embedder::{
    checkpoint_load, checkpoint_save, embed, init_model, train as train_model, EmbedderError, ModelState, CHECKPOINT_VERSION,
};
use crate::eval::{evaluate, EvalError};

/// Written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub checkpoint_version: u32,
    /// SHA-256 of the effective configuration serialized as compact JSON.
    pub config_sha256: String,
    pub seed: u64,
    pub loss_kind: String,
    pub iterations: u64,
    pub final_loss: f64,
    pub train_samples: usize,
    pub class_count: usize,
    pub data_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub m: u32,
    pub binary_all_hold: bool,
    pub binary_worst_slack: f64,
    /// Uniformly spaced weights, every `k` in `3..=16`.
    pub multiclass_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub grid_points: usize,
    pub binary_root: f64,
    pub binary_closed_form: f64,
    pub multiclass_m_min: f64,
    pub rows: Vec<BoundsRow>,
}

pub fn bounds_report(m_max: u32, grid: usize) -> Result<BoundsReport, CliError> {
    if m_max < 2 {
        return Err(CliError::Config(format!("--m-max {m_max} must be >= 2")));
    }
    if grid < 2 {
        return Err(CliError::Config(format!("--grid {grid} must be >= 2")));
    }
    let rows = (2..=m_max)
        .map(|m| BoundsRow {
            m,
            binary_all_hold: binary_bound_holds_on_grid(m, grid),
            binary_worst_slack: separation_grid(grid).map(|t| binary_bound_slack(f64::from(m), t)).fold(f64::INFINITY, f64::min),
            multiclass_holds: (3..=16).all(|k| multiclass_bound_holds(m, k).unwrap_or(false)),
        })
        .collect();
    Ok(BoundsReport {
        grid_points: grid,
        binary_root: binary_bound_root(),
        binary_closed_form: m_min_binary(),
        multiclass_m_min: m_min_multiclass(3).expect("k = 3 is valid"),
        rows,
    })
}

/// `(θ, ψ(θ), cos θ)` on `points` evenly spaced angles from 0 to π inclusive.
pub fn psi_table(m: u32, points: usize) -> Result<Vec<(f64, f64, f64)>, CliError> {
    if m < 1 {
        return Err(CliError::Config("--m must be >= 1".into()));
    }
    if points < 2 {
        return Err(CliError::Config(format!("--points {points} must be >= 2")));
    }
    (0..points)
        .map(|i| {
            let theta = PI * i as f64 / (points - 1) as f64;
            let p = psi(theta, m).map_err(|e| CliError::Numerical(e.to_string()))?;
            Ok((theta, p, theta.cos()))
        })
        .collect()
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::Config(format!("stdout: {e}")))
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.embedder.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set out_dir".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn embedder_failure(e: EmbedderError) -> CliError {
    match e {
        EmbedderError::Diverged { .. } => CliError::Numerical(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

fn eval_failure(e: EvalError) -> CliError {
    match e {
        EvalError::Invalid(_) | EvalError::LengthMismatch(..) => CliError::Config(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

pub(super) fn train(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let dir = out_dir(cli, &cfg)?;
    let (data, warning) = cfg.training_data()?;
    if data.dim() != cfg.embedder.input_dim() {
        return Err(CliError::Config(format!(
            "data has {} features per sample, embedder.layer_widths starts with {}",
            data.dim(),
            cfg.embedder.input_dim()
        )));
    }
    let state = init_model(&cfg.embedder, data.class_count, cfg.train.loss_kind).map_err(embedder_failure)?;
    let (state, history) = train_model(state, &data, &cfg.train).map_err(embedder_failure)?;

    let mut csv = String::from("iteration,loss\n");
    for (i, l) in history.iter().enumerate() {
        csv.push_str(&format!("{},{:.16e}\n", i + 1, l));
    }
    write_file(&dir.join("loss_history.csv"), csv.as_bytes())?;
    write_file(&dir.join("checkpoint.sphm"), &checkpoint_save(&state))?;

    let canonical = serde_json::to_vec(&cfg).expect("config serializes");
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        checkpoint_version: CHECKPOINT_VERSION,
        config_sha256: hex::encode(Sha256::digest(&canonical)),
        seed: cfg.embedder.seed,
        loss_kind: serde_json::to_value(cfg.train.loss_kind).expect("loss kind").as_str().unwrap_or_default().to_string(),
        iterations: state.iteration,
        final_loss: history.last().copied().unwrap_or(f64::NAN),
        train_samples: data.len(),
        class_count: data.class_count,
        data_warning: warning.clone(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), format!("{manifest_json}\n").as_bytes())?;

    if cli.json {
        emit(out, &manifest_json)
    } else {
        if let Some(w) = &warning {
            emit(out, &format!("warning: {w}"))?;
        }
        emit(out, &format!("trained {} iterations, final loss {:.6}, wrote {}", state.iteration, manifest.final_loss, dir.display()))
    }
}

fn load_checkpoint(path: &Path) -> Result<ModelState, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    checkpoint_load(&bytes).map_err(|e| io_err(path, e))
}

fn embedded_eval_set(cfg: &RunConfig, state: &ModelState) -> Result<LabeledBatch, CliError> {
    let data = cfg.eval_data()?;
    if data.dim() != state.config.input_dim() {
        return Err(CliError::Config(format!(
            "evaluation data has {} features per sample, checkpoint expects {}",
            data.dim(),
            state.config.input_dim()
        )));
    }
    let features = embed(state, &data.features).map_err(embedder_failure)?;
    LabeledBatch::new(features, data.labels, data.class_count).map_err(|e| CliError::Config(e.to_string()))
}

pub(super) fn eval(cli: &Cli, checkpoint: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let dir = out_dir(cli, &cfg)?;
    let state = load_checkpoint(checkpoint)?;
    let batch = embedded_eval_set(&cfg, &state)?;
    let report = evaluate(&batch, &cfg.eval).map_err(eval_failure)?;
    report.validate(None, None).map_err(eval_failure)?;
    let json = report.to_json();
    write_file(&dir.join("report.json"), format!("{json}\n").as_bytes())?;
    let features_path = dir.join("features.csv");
    export_features(&features_path, &batch.features, &batch.labels).map_err(|e| io_err(&features_path, e))?;
    if cli.json {
        emit(out, &json)
    } else {
        emit(
            out,
            &format!(
                "afs {:.6}  verification {:.4} (threshold {:.4})  rank-1 {:.4}",
                report.afs, report.verification_accuracy, report.best_threshold, report.rank1
            ),
        )
    }
}

pub(super) fn export(cli: &Cli, checkpoint: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let dir = out_dir(cli, &cfg)?;
    let batch = match checkpoint {
        Some(p) => embedded_eval_set(&cfg, &load_checkpoint(p)?)?,
        None => cfg.eval_data()?,
    };
    let path = dir.join("features.csv");
    export_features(&path, &batch.features, &batch.labels).map_err(|e| io_err(&path, e))?;
    emit(out, &format!("wrote {} rows of width {} to {}", batch.len(), batch.dim(), path.display()))
}

pub(super) fn bounds(cli: &Cli, m_max: u32, grid: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let report = bounds_report(m_max, grid)?;
    if cli.json {
        return emit(out, &serde_json::to_string_pretty(&report).expect("bounds serialize"));
    }
    emit(out, "m,binary_all_hold,binary_worst_slack,multiclass_holds")?;
    for r in &report.rows {
        emit(out, &format!("{},{},{:.6},{}", r.m, r.binary_all_hold, r.binary_worst_slack, r.multiclass_holds))?;
    }
    emit(out, &format!("binary root: {:.6}", report.binary_root))?;
    emit(out, &format!("multiclass m_min: {}", report.multiclass_m_min))
}

pub(super) fn psi_table_cmd(m: u32, points: usize, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = psi_table(m, points)?;
    emit(out, "theta,psi,cos")?;
    for (t, p, c) in rows {
        emit(out, &format!("{t},{p},{c}"))?;
    }
    Ok(())
}
