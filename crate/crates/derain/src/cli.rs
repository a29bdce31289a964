//! Subcommand implementations behind the `derain` binary: `synth`,
//! `train`, `derain`, `eval`, and `table`.
//!
//! Every command echoes the exact resolved config into its output
//! directory, and every piece of randomness derives from the config's
//! root seed, so re-running a command reproduces its outputs byte for
//! byte (wall-clock columns aside).

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, ExperimentConfig};
use crate::dataset::{load_sequence, save_sequence, split, DataError, FrameSequence};
use crate::metrics::{evaluate_sequences, psnr, ssim, MetricError, SsimOptions, DEFAULT_DYNAMIC_RANGE};
use crate::models::{
    derain_sequence, derain_sequence_spatial, CheckpointMeta, ModelError, SpatialDenoiser,
    TemporalDenoiser,
};
use crate::rain::{corrupt_sequence, RainError};
use crate::rng::derive_seed;
use crate::tensor::{load_weights, save_weights, ModelWeights, TensorError, WeightsIoError};
use crate::trainer::{train_spatial, train_temporal, Stage, TrainError, TrainReport};

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum CliError {
    MissingConfig,
    Io { path: PathBuf, source: io::Error },
    /// `--mode full` with a weights file that has no temporal stage.
    TemporalStageMissing { path: PathBuf },
    /// `--stage temporal` without a trained spatial stage on disk.
    SpatialStageMissing { path: PathBuf },
    NotAPipelineFile { path: PathBuf },
    Config(ConfigError),
    Data(DataError),
    Rain(RainError),
    Train(TrainError),
    Model(ModelError),
    Metric(MetricError),
    Tensor(TensorError),
    Weights(WeightsIoError),
}

impl CliError {
    /// Stable machine-readable discriminator for the error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::MissingConfig => "missing-config",
            Self::Io { .. } => "io",
            Self::TemporalStageMissing { .. } => "temporal-stage-missing",
            Self::SpatialStageMissing { .. } => "spatial-stage-missing",
            Self::NotAPipelineFile { .. } => "not-a-pipeline-file",
            Self::Config(_) => "config",
            Self::Data(_) => "data",
            Self::Rain(_) => "rain",
            Self::Train(_) => "train",
            Self::Model(_) => "model",
            Self::Metric(_) => "metric",
            Self::Tensor(_) => "tensor",
            Self::Weights(_) => "weights",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MissingConfig => write!(f, "this command needs --config <path>"),
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Self::TemporalStageMissing { path } => write!(
                f,
                "{}: no temporal stage in weights file; train with --stage both or use --mode spatial-only",
                path.display()
            ),
            Self::SpatialStageMissing { path } => write!(
                f,
                "{}: no trained spatial stage found; run train --stage spatial first",
                path.display()
            ),
            Self::NotAPipelineFile { path } => {
                write!(f, "{}: not a pipeline weights file", path.display())
            }
            Self::Config(e) => write!(f, "{e}"),
            Self::Data(e) => write!(f, "{e}"),
            Self::Rain(e) => write!(f, "{e}"),
            Self::Train(e) => write!(f, "{e}"),
            Self::Model(e) => write!(f, "{e}"),
            Self::Metric(e) => write!(f, "{e}"),
            Self::Tensor(e) => write!(f, "{e}"),
            Self::Weights(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! from_err {
    ($variant:ident, $ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                Self::$variant(e)
            }
        }
    };
}

from_err!(Config, ConfigError);
from_err!(Data, DataError);
from_err!(Rain, RainError);
from_err!(Train, TrainError);
from_err!(Model, ModelError);
from_err!(Metric, MetricError);
from_err!(Tensor, TensorError);
from_err!(Weights, WeightsIoError);

/// One-line machine-readable error record for stderr.
pub fn error_record(e: &CliError) -> String {
    serde_json::json!({ "error": e.to_string(), "kind": e.kind() }).to_string()
}

// ── Shared plumbing ─────────────────────────────────────────────────

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn echo_config(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    write_text(&dir.join("config.json"), &cfg.to_pretty_json())
}

fn load_clean(cfg: &ExperimentConfig) -> Result<Vec<FrameSequence>, CliError> {
    cfg.validate_paths()?;
    cfg.dataset
        .clean_dirs
        .iter()
        .map(|dir| load_sequence(dir, &cfg.dataset.pattern).map_err(CliError::from))
        .collect()
}

fn write_train_outputs(dir: &Path, report: &TrainReport) -> Result<(), CliError> {
    let stage = match report.stage {
        Stage::Spatial => "spatial",
        Stage::Temporal => "temporal",
    };
    write_text(&dir.join(format!("{stage}_report.csv")), &report.to_csv())?;
    write_text(
        &dir.join(format!("{stage}_summary.json")),
        &(serde_json::to_string_pretty(&report.summary_json()).expect("valid json") + "\n"),
    )
}

// ── Pipeline weights files ──────────────────────────────────────────

const KIND_PIPELINE: f64 = 3.0;

/// Write both stages (the temporal one when present) into one weights
/// file, under `spatial.` / `temporal.` name prefixes.
pub fn save_pipeline(
    path: &Path,
    spatial: &SpatialDenoiser<f32>,
    temporal: Option<&TemporalDenoiser<f32>>,
    meta: &CheckpointMeta,
) -> Result<(), CliError> {
    let mut file = ModelWeights::new();
    file.push_scalar("meta.kind", KIND_PIPELINE)?;
    file.push_scalar("meta.channels", spatial.channels() as f64)?;
    file.push_scalar("meta.base_channels", spatial.base_channels() as f64)?;
    file.push_scalar("meta.stage", meta.stage)?;
    file.push_scalar("meta.epoch", meta.epoch)?;
    file.push_scalar("meta.has_temporal", if temporal.is_some() { 1.0 } else { 0.0 })?;
    file.merge_prefixed("spatial.", spatial.weights())?;
    if let Some(t) = temporal {
        file.merge_prefixed("temporal.", t.weights())?;
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_weights(&file, path)?;
    Ok(())
}

/// Load a pipeline weights file; the temporal stage is optional.
pub fn load_pipeline(
    path: &Path,
) -> Result<(SpatialDenoiser<f32>, Option<TemporalDenoiser<f32>>), CliError> {
    let file = load_weights(path)?;
    let kind = file.scalar_value("meta.kind");
    if kind != Some(KIND_PIPELINE) {
        return Err(CliError::NotAPipelineFile {
            path: path.to_path_buf(),
        });
    }
    let channels = file
        .scalar_value("meta.channels")
        .ok_or_else(|| CliError::NotAPipelineFile {
            path: path.to_path_buf(),
        })? as usize;
    let base = file
        .scalar_value("meta.base_channels")
        .ok_or_else(|| CliError::NotAPipelineFile {
            path: path.to_path_buf(),
        })? as usize;
    let spatial = SpatialDenoiser::from_weights(channels, base, file.strip_prefix("spatial."))?;
    let temporal = if file.scalar_value("meta.has_temporal") == Some(1.0) {
        Some(TemporalDenoiser::from_weights(
            channels,
            base,
            file.strip_prefix("temporal."),
        )?)
    } else {
        None
    };
    Ok((spatial, temporal))
}

// ── synth ───────────────────────────────────────────────────────────

/// Write rain-corrupted copies of the clean sequences plus a manifest
/// recording the clean path, the parameters, and the per-frame stream
/// seed.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sequences = load_clean(cfg)?;
    let out_root = cfg.out_dir.join("synth");
    fs::create_dir_all(&out_root).map_err(io_err(&out_root))?;
    echo_config(cfg, &out_root)?;

    let mut manifest_seqs = Vec::new();
    for (i, (dir, seq)) in cfg.dataset.clean_dirs.iter().zip(&sequences).enumerate() {
        let params = cfg
            .source_rain
            .with_seed(derive_seed(cfg.seed, "synth", i as u64));
        let rainy = corrupt_sequence(seq, &params)?;
        let seq_dir = out_root.join(seq.source());
        save_sequence(&rainy, &seq_dir)?;
        let frames: Vec<serde_json::Value> = (0..seq.len())
            .map(|f| {
                serde_json::json!({
                    "index": f,
                    "layer_seed": derive_seed(params.seed(), "rain-layer", f as u64),
                })
            })
            .collect();
        manifest_seqs.push(serde_json::json!({
            "clean_dir": dir,
            "out_dir": seq_dir,
            "params": params,
            "frames": frames,
        }));
    }
    let manifest = serde_json::json!({
        "pattern": cfg.dataset.pattern,
        "sequences": manifest_seqs,
    });
    write_text(
        &out_root.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("valid json") + "\n"),
    )
}

// ── train ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStage {
    Spatial,
    Temporal,
    Both,
}

/// Run the requested training stage(s), writing per-epoch checkpoints,
/// CSV reports, and the merged pipeline weights file.
pub fn cmd_train(cfg: &ExperimentConfig, stage: TrainStage) -> Result<(), CliError> {
    let data = load_clean(cfg)?;
    let out = cfg.out_dir.join("train");
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    echo_config(cfg, &out)?;
    let tc = cfg.train_config();
    let ckpt_dir = out.join("checkpoints");
    let weights_path = out.join("weights.drlw");

    let spatial = match stage {
        TrainStage::Spatial | TrainStage::Both => {
            let (net, report) = train_spatial(&data, &tc, Some(&ckpt_dir))?;
            write_train_outputs(&out, &report)?;
            save_pipeline(
                &weights_path,
                &net,
                None,
                &CheckpointMeta {
                    stage: Stage::Spatial.as_meta(),
                    epoch: tc.epochs as f64,
                },
            )?;
            net
        }
        TrainStage::Temporal => {
            if !weights_path.is_file() {
                return Err(CliError::SpatialStageMissing { path: weights_path });
            }
            load_pipeline(&weights_path)?.0
        }
    };

    if matches!(stage, TrainStage::Temporal | TrainStage::Both) {
        let (temporal, report) = train_temporal(&data, &spatial, &tc, Some(&ckpt_dir))?;
        write_train_outputs(&out, &report)?;
        save_pipeline(
            &weights_path,
            &spatial,
            Some(&temporal),
            &CheckpointMeta {
                stage: Stage::Temporal.as_meta(),
                epoch: tc.epochs as f64,
            },
        )?;
    }
    Ok(())
}

// ── derain ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerainMode {
    /// First stage only: the ablation the density table compares against.
    SpatialOnly,
    Full,
}

/// Apply trained weights to the frames in `input`, writing the derained
/// sequence to `output`.
pub fn cmd_derain(
    weights: &Path,
    input: &Path,
    output: &Path,
    mode: DerainMode,
    pattern: &str,
) -> Result<(), CliError> {
    let (spatial, temporal) = load_pipeline(weights)?;
    let seq = load_sequence(input, pattern)?;
    let (derained, stats) = match mode {
        DerainMode::SpatialOnly => derain_sequence_spatial(&spatial, &seq)?,
        DerainMode::Full => {
            let temporal = temporal.ok_or_else(|| CliError::TemporalStageMissing {
                path: weights.to_path_buf(),
            })?;
            derain_sequence(&spatial, &temporal, &seq)?
        }
    };
    save_sequence(&derained, output)?;
    let summary = serde_json::json!({
        "weights": weights,
        "input": input,
        "mode": match mode { DerainMode::SpatialOnly => "spatial-only", DerainMode::Full => "full" },
        "frames": derained.len(),
        "spatial_forwards": stats.spatial_forwards,
        "temporal_forwards": stats.temporal_forwards,
    });
    write_text(
        &output.join("derain_summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("valid json") + "\n"),
    )
}

// ── eval ────────────────────────────────────────────────────────────

/// Score a predicted sequence directory against a reference directory,
/// emitting `eval.csv` (frame_idx,psnr_db,ssim) and a JSON summary.
pub fn cmd_eval(
    pred_dir: &Path,
    ref_dir: &Path,
    out_dir: &Path,
    pattern: &str,
) -> Result<(), CliError> {
    let pred = load_sequence(pred_dir, pattern)?;
    let reference = load_sequence(ref_dir, pattern)?;
    let report = evaluate_sequences(&pred, &reference)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_text(&out_dir.join("eval.csv"), &report.to_csv())?;
    write_text(
        &out_dir.join("eval_summary.json"),
        &(serde_json::to_string_pretty(&report.summary_json()).expect("valid json") + "\n"),
    )
}

// ── table ───────────────────────────────────────────────────────────

struct TableRow {
    density_mean: f64,
    density_std: f64,
    spatial_only_psnr_db: Option<f64>,
    spatial_only_ssim: f64,
    full_psnr_db: Option<f64>,
    full_ssim: f64,
}

fn fmt_opt_db(v: Option<f64>) -> String {
    match v {
        Some(db) => format!("{db:.6}"),
        None => "inf".to_string(),
    }
}

/// Pool per-frame scores of predictions against clean references.
fn pooled_scores(
    preds: &[FrameSequence],
    cleans: &[&FrameSequence],
) -> Result<(Option<f64>, f64), CliError> {
    let opts = SsimOptions::default();
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for (pred, clean) in preds.iter().zip(cleans) {
        for (p, r) in pred.frames().iter().zip(clean.frames()) {
            psnrs.push(psnr(p, r, DEFAULT_DYNAMIC_RANGE)?);
            ssims.push(ssim(p, r, &opts)?);
        }
    }
    let finite: Vec<f64> = psnrs.iter().copied().filter(|p| p.is_finite()).collect();
    let mean_psnr = if finite.is_empty() {
        None
    } else {
        Some(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    let mean_ssim = ssims.iter().sum::<f64>() / ssims.len() as f64;
    Ok((mean_psnr, mean_ssim))
}

/// Train both stages, then evaluate the held-out sequences at every
/// configured rain density with and without the second stage. The CSV has
/// one row per density and one column group per variant.
pub fn cmd_table(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let data = load_clean(cfg)?;
    let out = cfg.out_dir.join("table");
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    echo_config(cfg, &out)?;
    let tc = cfg.train_config();

    let (spatial, rep_spatial) = train_spatial(&data, &tc, None)?;
    let (temporal, rep_temporal) = train_temporal(&data, &spatial, &tc, None)?;
    write_train_outputs(&out, &rep_spatial)?;
    write_train_outputs(&out, &rep_temporal)?;
    save_pipeline(
        &out.join("weights.drlw"),
        &spatial,
        Some(&temporal),
        &CheckpointMeta {
            stage: Stage::Temporal.as_meta(),
            epoch: tc.epochs as f64,
        },
    )?;

    // the same held-out split the trainer used
    let refs: Vec<&FrameSequence> = data.iter().collect();
    let (_, val) = split(refs, tc.val_fraction, derive_seed(cfg.seed, "split", 0))?;

    let mut rows = Vec::with_capacity(cfg.eval_rain.len());
    for (row_idx, rain) in cfg.eval_rain.iter().enumerate() {
        let rain = rain.with_seed(derive_seed(cfg.seed, "table-eval", row_idx as u64));
        let mut spatial_preds = Vec::with_capacity(val.len());
        let mut full_preds = Vec::with_capacity(val.len());
        for seq in &val {
            let rainy = corrupt_sequence(seq, &rain)?;
            spatial_preds.push(derain_sequence_spatial(&spatial, &rainy)?.0);
            full_preds.push(derain_sequence(&spatial, &temporal, &rainy)?.0);
        }
        let (s_psnr, s_ssim) = pooled_scores(&spatial_preds, &val)?;
        let (f_psnr, f_ssim) = pooled_scores(&full_preds, &val)?;
        rows.push(TableRow {
            density_mean: rain.density_mean(),
            density_std: rain.density_std(),
            spatial_only_psnr_db: s_psnr,
            spatial_only_ssim: s_ssim,
            full_psnr_db: f_psnr,
            full_ssim: f_ssim,
        });
    }

    let mut csv = String::from(
        "density,spatial_only_psnr_db,spatial_only_ssim,full_psnr_db,full_ssim\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.6},{},{:.6}\n",
            format_density(r.density_mean),
            fmt_opt_db(r.spatial_only_psnr_db),
            r.spatial_only_ssim,
            fmt_opt_db(r.full_psnr_db),
            r.full_ssim,
        ));
    }
    write_text(&out.join("table.csv"), &csv)?;

    let json_rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "density_mean": r.density_mean,
                "density_std": r.density_std,
                "spatial_only": { "psnr_db": r.spatial_only_psnr_db, "ssim": r.spatial_only_ssim },
                "full": { "psnr_db": r.full_psnr_db, "ssim": r.full_ssim },
            })
        })
        .collect();
    write_text(
        &out.join("table_summary.json"),
        &(serde_json::to_string_pretty(&serde_json::json!({ "rows": json_rows })).expect("valid json")
            + "\n"),
    )
}

fn format_density(d: f64) -> String {
    if d.fract() == 0.0 {
        format!("{d:.0}")
    } else {
        format!("{d}")
    }
}
