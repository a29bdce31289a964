//! Two-stage self-supervised training.
//!
//! Stage 1 trains the spatial network on pairs of independently
//! rain-corrupted versions of the same content: source rain in, target
//! rain as the regression target. Stage 2 freezes the spatial network,
//! runs it over freshly rained frames to produce targets, and trains the
//! temporal cascade to reconstruct those targets from Poisson-corrupted
//! 5-frame windows (the corruption keeps it from learning the identity).
//!
//! Clean pixels never reach a loss term in either stage. Every tensor
//! that enters a loss is built through one choke point which rejects
//! clean-tagged frames and counts everything it sees; the resulting audit
//! ships with the train report.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::dataset::{split, DataError, Frame, FrameSequence};
use crate::metrics::{psnr, ssim, MetricError, SsimOptions, DEFAULT_DYNAMIC_RANGE, SSIM_WINDOW};
use crate::models::{
    derain_sequence, CheckpointMeta, ModelError, SpatialDenoiser, TemporalDenoiser, WINDOW,
};
use crate::rain::{apply_rain, synthesize_rain_layer, RainError, RainParams};
use crate::rng::{derive_seed, derive_seed2, substream};
use crate::tensor::{Adam, Graph, Tensor, TensorError, Var};

/// Poisson peaks above this would make the stage-2 corruption vanish and
/// let the temporal network collapse onto the identity.
pub const MAX_POISSON_PEAK: f64 = 1e6;

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum TrainError {
    InvalidConfig { field: &'static str, detail: String },
    EmptyDataset,
    /// No 5-frame window survives boundary exclusion.
    NoTemporalWindows,
    MixedChannelCounts,
    PatchLargerThanFrames {
        patch_size: usize,
        height: usize,
        width: usize,
    },
    FramesSmallerThanSsimWindow { height: usize, width: usize },
    NonFiniteLoss {
        stage: Stage,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    PoissonPeakOutOfRange { peak: f64 },
    /// The self-supervision choke point saw a clean frame.
    CleanFrameOnLossPath,
    Data(DataError),
    Rain(RainError),
    Tensor(TensorError),
    Model(ModelError),
    Metric(MetricError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig { field, detail } => write!(f, "config field {field}: {detail}"),
            Self::EmptyDataset => write!(f, "training requires at least one sequence"),
            Self::NoTemporalWindows => {
                write!(f, "no sequence is long enough for a full interior window")
            }
            Self::MixedChannelCounts => {
                write!(f, "all sequences must share one channel count")
            }
            Self::PatchLargerThanFrames {
                patch_size,
                height,
                width,
            } => write!(f, "patch size {patch_size} exceeds frame extents {height}x{width}"),
            Self::FramesSmallerThanSsimWindow { height, width } => write!(
                f,
                "frames {height}x{width} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window used for validation"
            ),
            Self::NonFiniteLoss {
                stage,
                epoch,
                batch,
                loss,
            } => write!(f, "{stage:?} stage: non-finite loss {loss} at epoch {epoch}, batch {batch}"),
            Self::PoissonPeakOutOfRange { peak } => write!(
                f,
                "poisson_peak {peak} outside (0, {MAX_POISSON_PEAK}]; unbounded peaks disable the anti-identity corruption"
            ),
            Self::CleanFrameOnLossPath => {
                write!(f, "self-supervision violation: clean frame offered to a loss tensor")
            }
            Self::Data(e) => write!(f, "{e}"),
            Self::Rain(e) => write!(f, "{e}"),
            Self::Tensor(e) => write!(f, "{e}"),
            Self::Model(e) => write!(f, "{e}"),
            Self::Metric(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        Self::Data(e)
    }
}

impl From<RainError> for TrainError {
    fn from(e: RainError) -> Self {
        Self::Rain(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        Self::Model(e)
    }
}

impl From<MetricError> for TrainError {
    fn from(e: MetricError) -> Self {
        Self::Metric(e)
    }
}

// ── Config and report ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Stage {
    Spatial,
    Temporal,
}

impl Stage {
    pub fn as_meta(self) -> f64 {
        match self {
            Self::Spatial => 1.0,
            Self::Temporal => 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub source_rain: RainParams,
    pub target_rain: RainParams,
    pub poisson_peak: f64,
    pub val_fraction: f64,
    pub base_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            patch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            source_rain: RainParams::default(),
            target_rain: RainParams::default()
                .with_density(500.0, 20.0)
                .expect("default target density is valid"),
            poisson_peak: 30.0,
            val_fraction: 0.25,
            base_channels: crate::models::DEFAULT_BASE_CHANNELS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        fn bad(field: &'static str, detail: impl Into<String>) -> TrainError {
            TrainError::InvalidConfig {
                field,
                detail: detail.into(),
            }
        }
        if self.epochs == 0 {
            return Err(bad("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1"));
        }
        if self.patch_size == 0 || self.patch_size % 4 != 0 {
            return Err(bad("patch_size", format!("{} not divisible by 4", self.patch_size)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(bad("lr", format!("{} must be positive", self.lr)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(bad(name, format!("{beta} must lie in [0, 1)")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(bad("eps", format!("{} must be positive", self.eps)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(bad("val_fraction", format!("{} must lie in (0, 1)", self.val_fraction)));
        }
        if !(self.poisson_peak > 0.0 && self.poisson_peak <= MAX_POISSON_PEAK) {
            return Err(TrainError::PoissonPeakOutOfRange {
                peak: self.poisson_peak,
            });
        }
        if self.base_channels == 0 {
            return Err(bad("base_channels", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    /// dB against clean validation frames; may be infinite.
    pub val_psnr_db: f64,
    pub val_ssim: f64,
    pub wall_time_s: f64,
}

/// Counters proving the self-supervision contract. `clean_loss_path_reads`
/// must stay 0; clean frames are only allowed into the rain synthesizer
/// and the evaluator.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct PurityAudit {
    /// Frames that entered loss-path tensors through the choke point.
    pub loss_tensor_frames: u64,
    /// Clean frames the choke point saw (training aborts if ever nonzero).
    pub clean_loss_path_reads: u64,
    /// Clean frames consumed by the rain synthesizer.
    pub clean_reads_by_synth: u64,
    /// Clean frames consumed by validation metrics.
    pub clean_reads_by_eval: u64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub stage: Stage,
    pub epochs: Vec<EpochRecord>,
    pub purity: PurityAudit,
}

impl TrainReport {
    /// CSV body; `wall_time_s` is the only nondeterministic column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,epoch,train_loss,val_psnr_db,val_ssim,wall_time_s\n");
        for r in &self.epochs {
            let stage = match r.stage {
                Stage::Spatial => "spatial",
                Stage::Temporal => "temporal",
            };
            let psnr = if r.val_psnr_db.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.6}", r.val_psnr_db)
            };
            out.push_str(&format!(
                "{},{},{:.8},{},{:.6},{:.3}\n",
                stage, r.epoch, r.train_loss, psnr, r.val_ssim, r.wall_time_s
            ));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let last = self.epochs.last();
        serde_json::json!({
            "stage": match self.stage { Stage::Spatial => "spatial", Stage::Temporal => "temporal" },
            "epochs": self.epochs.len(),
            "final_train_loss": last.map(|r| r.train_loss),
            "final_val_psnr_db": last.map(|r| if r.val_psnr_db.is_finite() { Some(r.val_psnr_db) } else { None }),
            "final_val_ssim": last.map(|r| r.val_ssim),
            "purity": self.purity,
        })
    }
}

// ── Provenance tagging ──────────────────────────────────────────────

/// Where a frame came from, for the self-supervision audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Clean,
    Rainy,
    Derained,
    Corrupted,
}

#[derive(Debug, Clone)]
pub struct TaggedFrame {
    pub frame: Frame,
    pub provenance: Provenance,
}

/// The loss-path choke point: stacks frames into a `[B, C, H, W]` leaf.
/// Every frame is counted, clean frames are rejected.
fn loss_batch_leaf(
    g: &mut Graph<f32>,
    frames: &[&TaggedFrame],
    audit: &mut PurityAudit,
) -> Result<Var, TrainError> {
    for tf in frames {
        audit.loss_tensor_frames += 1;
        if tf.provenance == Provenance::Clean {
            audit.clean_loss_path_reads += 1;
            return Err(TrainError::CleanFrameOnLossPath);
        }
    }
    let (h, w, c) = frames[0].frame.shape();
    let mut data = Vec::with_capacity(frames.len() * c * h * w);
    for tf in frames {
        data.extend_from_slice(tf.frame.to_chw::<f32>().data());
    }
    let tensor =
        Tensor::new(vec![frames.len(), c, h, w], data).expect("stacked batch is consistent");
    Ok(g.leaf(tensor))
}

// ── Poisson corruption ──────────────────────────────────────────────

/// Replace each pixel `x` by `Poisson(x * peak) / peak`, clamped to the
/// unit interval. Deterministic under the seed. Peaks above
/// [`MAX_POISSON_PEAK`] are rejected: with vanishing corruption the
/// stage-2 network would just learn the identity.
pub fn poisson_corrupt(frame: &Frame, peak: f64, seed: u64) -> Result<Frame, TrainError> {
    if !(peak > 0.0 && peak <= MAX_POISSON_PEAK) {
        return Err(TrainError::PoissonPeakOutOfRange { peak });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = frame
        .data()
        .iter()
        .map(|&x| {
            if x <= 0.0 {
                0.0
            } else {
                let lambda = f64::from(x) * peak;
                let k: f64 = Poisson::new(lambda).expect("positive lambda").sample(&mut rng);
                ((k / peak).clamp(0.0, 1.0)) as f32
            }
        })
        .collect();
    let (h, w, c) = frame.shape();
    Ok(Frame::new(h, w, c, data).expect("clamped data is valid"))
}

// ── Shared plumbing ─────────────────────────────────────────────────

struct DataLayout<'a> {
    train: Vec<&'a FrameSequence>,
    val: Vec<&'a FrameSequence>,
    channels: usize,
}

fn check_dataset<'a>(
    data: &'a [FrameSequence],
    cfg: &TrainConfig,
) -> Result<DataLayout<'a>, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let channels = data[0].shape().2;
    for seq in data {
        let (h, w, c) = seq.shape();
        if c != channels {
            return Err(TrainError::MixedChannelCounts);
        }
        if cfg.patch_size > h || cfg.patch_size > w {
            return Err(TrainError::PatchLargerThanFrames {
                patch_size: cfg.patch_size,
                height: h,
                width: w,
            });
        }
        if h < SSIM_WINDOW || w < SSIM_WINDOW {
            return Err(TrainError::FramesSmallerThanSsimWindow { height: h, width: w });
        }
    }
    let refs: Vec<&FrameSequence> = data.iter().collect();
    let (train, val) = split(refs, cfg.val_fraction, derive_seed(cfg.seed, "split", 0))?;
    Ok(DataLayout {
        train,
        val,
        channels,
    })
}

fn patch_offset(rng: &mut ChaCha8Rng, h: usize, w: usize, patch: usize) -> (usize, usize) {
    let y = if h == patch { 0 } else { rng.random_range(0..=h - patch) };
    let x = if w == patch { 0 } else { rng.random_range(0..=w - patch) };
    (y, x)
}

/// Pool per-frame metrics of predicted-vs-clean pairs across sequences.
fn validation_scores(
    preds: &[FrameSequence],
    cleans: &[&FrameSequence],
    audit: &mut PurityAudit,
) -> Result<(f64, f64), TrainError> {
    let opts = SsimOptions::default();
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for (pred, clean) in preds.iter().zip(cleans) {
        for (p, r) in pred.frames().iter().zip(clean.frames()) {
            audit.clean_reads_by_eval += 1;
            psnrs.push(psnr(p, r, DEFAULT_DYNAMIC_RANGE)?);
            ssims.push(ssim(p, r, &opts)?);
        }
    }
    let finite: Vec<f64> = psnrs.iter().copied().filter(|p| p.is_finite()).collect();
    let mean_psnr = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let mean_ssim = ssims.iter().sum::<f64>() / ssims.len() as f64;
    Ok((mean_psnr, mean_ssim))
}

fn rain_frame(
    clean: &Frame,
    params: &RainParams,
    seed: u64,
    frame_index: u64,
    audit: &mut PurityAudit,
) -> Result<TaggedFrame, TrainError> {
    audit.clean_reads_by_synth += 1;
    let (h, w, c) = clean.shape();
    let p = params.with_seed(seed);
    let layer = synthesize_rain_layer(h, w, c, &p, frame_index)?;
    Ok(TaggedFrame {
        frame: apply_rain(clean, &layer, &p)?,
        provenance: Provenance::Rainy,
    })
}

/// The fixed rain-corrupted copies of the validation split that stage-1
/// validation scores against, identical every epoch.
fn stage1_val_rainy(
    val: &[&FrameSequence],
    cfg: &TrainConfig,
    audit: &mut PurityAudit,
) -> Result<Vec<FrameSequence>, TrainError> {
    let val_rain = cfg
        .source_rain
        .with_seed(derive_seed(cfg.seed, "s1-val-rain", 0));
    let mut out = Vec::with_capacity(val.len());
    for (vi, seq) in val.iter().enumerate() {
        let mut rainy = Vec::with_capacity(seq.len());
        for (fi, clean) in seq.frames().iter().enumerate() {
            let seed = derive_seed2(cfg.seed, "s1-val-frame", vi as u64, fi as u64);
            rainy.push(rain_frame(clean, &val_rain, seed, fi as u64, audit)?.frame);
        }
        out.push(seq.with_frames(rainy)?);
    }
    Ok(out)
}

/// Rainy-vs-clean PSNR/SSIM on the validation split under exactly the
/// corruption stage-1 validation applies: the baseline the held-out
/// deraining numbers are compared against.
pub fn validation_rainy_baseline(
    data: &[FrameSequence],
    cfg: &TrainConfig,
) -> Result<(f64, f64), TrainError> {
    let layout = check_dataset(data, cfg)?;
    let mut audit = PurityAudit::default();
    let rainy = stage1_val_rainy(&layout.val, cfg, &mut audit)?;
    validation_scores(&rainy, &layout.val, &mut audit)
}

fn check_finite(loss: f64, stage: Stage, epoch: usize, batch: usize) -> Result<(), TrainError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFiniteLoss {
            stage,
            epoch,
            batch,
            loss,
        })
    }
}

// ── Stage 1: spatial ────────────────────────────────────────────────

/// Train the spatial denoiser on rain-noisy pairs. Targets are freshly
/// rained copies of the same content (regenerated every epoch); clean
/// pixels feed only the synthesizer and the validation metrics.
pub fn train_spatial(
    data: &[FrameSequence],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(SpatialDenoiser<f32>, TrainReport), TrainError> {
    let layout = check_dataset(data, cfg)?;
    let mut audit = PurityAudit::default();
    let mut net = SpatialDenoiser::<f32>::init(
        layout.channels,
        cfg.base_channels,
        derive_seed(cfg.seed, "init-spatial", 0),
    );
    let mut adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);

    // all (sequence, frame) pairs of the train split
    let all_samples: Vec<(usize, usize)> = layout
        .train
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..seq.len()).map(move |f| (s, f)))
        .collect();
    if all_samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }

    let val_rainy = stage1_val_rainy(&layout.val, cfg, &mut audit)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order = all_samples.clone();
        order.shuffle(&mut substream(cfg.seed, "s1-order", epoch as u64));
        let mut offset_rng = substream(cfg.seed, "s1-offset", epoch as u64);

        let mut loss_sum = 0.0f64;
        let mut sample_count = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut sources = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for (i_in_batch, &(s, f)) in chunk.iter().enumerate() {
                let counter = (batch_idx * cfg.batch_size + i_in_batch) as u64;
                let seq = layout.train[s];
                let clean = seq.frame(f);
                let (h, w, _) = seq.shape();
                let (y, x) = patch_offset(&mut offset_rng, h, w, cfg.patch_size);

                let src_seed = derive_seed2(cfg.seed, "s1-rain-src", epoch as u64, counter);
                let tgt_seed = derive_seed2(cfg.seed, "s1-rain-tgt", epoch as u64, counter);
                let src = rain_frame(clean, &cfg.source_rain, src_seed, f as u64, &mut audit)?;
                let tgt = rain_frame(clean, &cfg.target_rain, tgt_seed, f as u64, &mut audit)?;
                sources.push(TaggedFrame {
                    frame: src.frame.crop(y, x, cfg.patch_size, cfg.patch_size),
                    provenance: src.provenance,
                });
                targets.push(TaggedFrame {
                    frame: tgt.frame.crop(y, x, cfg.patch_size, cfg.patch_size),
                    provenance: tgt.provenance,
                });
            }

            let mut g = Graph::new();
            let src_refs: Vec<&TaggedFrame> = sources.iter().collect();
            let tgt_refs: Vec<&TaggedFrame> = targets.iter().collect();
            let x = loss_batch_leaf(&mut g, &src_refs, &mut audit)?;
            let t = loss_batch_leaf(&mut g, &tgt_refs, &mut audit)?;
            let bound = net.bind(&mut g, true);
            let y = bound.forward(&mut g, x)?;
            let loss = g.mse(y, t)?;
            let loss_value = f64::from(g.value(loss).item());
            check_finite(loss_value, Stage::Spatial, epoch, batch_idx)?;
            g.backward(loss)?;
            let grads = bound.gradients(&g)?;
            adam.step(net.weights_mut(), &grads)?;
            loss_sum += loss_value * chunk.len() as f64;
            sample_count += chunk.len();
        }

        // held-out metrics against clean frames (evaluation only)
        let mut val_preds = Vec::with_capacity(layout.val.len());
        for rainy_seq in &val_rainy {
            val_preds.push(net.map_sequence(rainy_seq)?);
        }
        let (val_psnr_db, val_ssim) = validation_scores(&val_preds, &layout.val, &mut audit)?;

        let record = EpochRecord {
            stage: Stage::Spatial,
            epoch,
            train_loss: loss_sum / sample_count as f64,
            val_psnr_db,
            val_ssim,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|source| {
                TrainError::Data(DataError::Io {
                    path: dir.to_path_buf(),
                    source,
                })
            })?;
            net.save(
                &dir.join(format!("spatial_epoch_{epoch:03}.drlw")),
                &CheckpointMeta {
                    stage: Stage::Spatial.as_meta(),
                    epoch: epoch as f64,
                },
            )?;
        }
        epochs.push(record);
    }

    Ok((
        net,
        TrainReport {
            stage: Stage::Spatial,
            epochs,
            purity: audit,
        },
    ))
}

// ── Stage 2: temporal ───────────────────────────────────────────────

/// Train the temporal cascade against frozen stage-1 outputs. For every
/// interior window the target is the spatial estimate of the central
/// frame; the inputs are Poisson-corrupted spatial estimates. The spatial
/// network itself never enters the graph, so no gradient can reach it.
pub fn train_temporal(
    data: &[FrameSequence],
    spatial: &SpatialDenoiser<f32>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(TemporalDenoiser<f32>, TrainReport), TrainError> {
    let layout = check_dataset(data, cfg)?;
    if layout.channels != spatial.channels() {
        return Err(TrainError::MixedChannelCounts);
    }
    let mut audit = PurityAudit::default();
    let mut net = TemporalDenoiser::<f32>::init(
        layout.channels,
        cfg.base_channels,
        derive_seed(cfg.seed, "init-temporal", 0),
    );
    let mut adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let k = (WINDOW - 1) / 2;

    // interior windows only; boundary replication is an inference-time rule
    let window_samples: Vec<(usize, usize)> = layout
        .train
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (k..seq.len().saturating_sub(k)).map(move |t| (s, t)))
        .collect();
    if window_samples.is_empty() {
        return Err(TrainError::NoTemporalWindows);
    }

    let val_rain = cfg
        .source_rain
        .with_seed(derive_seed(cfg.seed, "s2-val-rain", 0));
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();

        // fresh rain over the train split, then frozen stage-1 estimates
        let mut derained: Vec<Vec<TaggedFrame>> = Vec::with_capacity(layout.train.len());
        for (s, seq) in layout.train.iter().enumerate() {
            let mut frames = Vec::with_capacity(seq.len());
            for (fi, clean) in seq.frames().iter().enumerate() {
                let seed = derive_seed2(
                    cfg.seed,
                    "s2-rain",
                    epoch as u64,
                    (s * 100_000 + fi) as u64,
                );
                let rainy = rain_frame(clean, &cfg.source_rain, seed, fi as u64, &mut audit)?;
                frames.push(TaggedFrame {
                    frame: spatial.forward_frame(&rainy.frame)?,
                    provenance: Provenance::Derained,
                });
            }
            derained.push(frames);
        }

        let mut order = window_samples.clone();
        order.shuffle(&mut substream(cfg.seed, "s2-order", epoch as u64));
        let mut offset_rng = substream(cfg.seed, "s2-offset", epoch as u64);

        let mut loss_sum = 0.0f64;
        let mut sample_count = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // five input slots plus the target
            let mut inputs: Vec<Vec<TaggedFrame>> = (0..WINDOW).map(|_| Vec::new()).collect();
            let mut targets = Vec::with_capacity(chunk.len());
            for (i_in_batch, &(s, t)) in chunk.iter().enumerate() {
                let counter = (batch_idx * cfg.batch_size + i_in_batch) as u64;
                let seq = &derained[s];
                let (h, w, _) = seq[0].frame.shape();
                let (y, x) = patch_offset(&mut offset_rng, h, w, cfg.patch_size);
                for (slot, input) in inputs.iter_mut().enumerate() {
                    let frame_idx = t - k + slot;
                    let crop = seq[frame_idx].frame.crop(y, x, cfg.patch_size, cfg.patch_size);
                    let seed =
                        derive_seed2(cfg.seed, "s2-poisson", epoch as u64, counter * 8 + slot as u64);
                    input.push(TaggedFrame {
                        frame: poisson_corrupt(&crop, cfg.poisson_peak, seed)?,
                        provenance: Provenance::Corrupted,
                    });
                }
                targets.push(TaggedFrame {
                    frame: seq[t].frame.crop(y, x, cfg.patch_size, cfg.patch_size),
                    provenance: Provenance::Derained,
                });
            }

            let mut g = Graph::new();
            let mut window_vars = Vec::with_capacity(WINDOW);
            for input in &inputs {
                let refs: Vec<&TaggedFrame> = input.iter().collect();
                window_vars.push(loss_batch_leaf(&mut g, &refs, &mut audit)?);
            }
            let tgt_refs: Vec<&TaggedFrame> = targets.iter().collect();
            let t_var = loss_batch_leaf(&mut g, &tgt_refs, &mut audit)?;
            let bound = net.bind(&mut g, true);
            let y = bound.forward(&mut g, &window_vars)?;
            let loss = g.mse(y, t_var)?;
            let loss_value = f64::from(g.value(loss).item());
            check_finite(loss_value, Stage::Temporal, epoch, batch_idx)?;
            g.backward(loss)?;
            let grads = bound.gradients(&g)?;
            adam.step(net.weights_mut(), &grads)?;
            loss_sum += loss_value * chunk.len() as f64;
            sample_count += chunk.len();
        }

        // validation: the full two-stage pipeline against clean frames
        let mut val_preds = Vec::with_capacity(layout.val.len());
        for (vi, seq) in layout.val.iter().enumerate() {
            let mut rainy = Vec::with_capacity(seq.len());
            for (fi, clean) in seq.frames().iter().enumerate() {
                let seed = derive_seed2(cfg.seed, "s2-val-frame", vi as u64, fi as u64);
                rainy.push(rain_frame(clean, &val_rain, seed, fi as u64, &mut audit)?.frame);
            }
            let rainy_seq = seq.with_frames(rainy)?;
            let (pred, _) = derain_sequence(spatial, &net, &rainy_seq)?;
            val_preds.push(pred);
        }
        let (val_psnr_db, val_ssim) = validation_scores(&val_preds, &layout.val, &mut audit)?;

        let record = EpochRecord {
            stage: Stage::Temporal,
            epoch,
            train_loss: loss_sum / sample_count as f64,
            val_psnr_db,
            val_ssim,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|source| {
                TrainError::Data(DataError::Io {
                    path: dir.to_path_buf(),
                    source,
                })
            })?;
            net.save(
                &dir.join(format!("temporal_epoch_{epoch:03}.drlw")),
                &CheckpointMeta {
                    stage: Stage::Temporal.as_meta(),
                    epoch: epoch as f64,
                },
            )?;
        }
        epochs.push(record);
    }

    Ok((
        net,
        TrainReport {
            stage: Stage::Temporal,
            epochs,
            purity: audit,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::clean_sequence;

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            patch_size: 16,
            seed,
            source_rain: RainParams::default().with_density(40.0, 4.0).unwrap(),
            target_rain: RainParams::default().with_density(60.0, 6.0).unwrap(),
            base_channels: 4,
            ..TrainConfig::default()
        }
    }

    fn tiny_data(seed: u64) -> Vec<FrameSequence> {
        (0..3)
            .map(|i| clean_sequence(16, 16, 1, 8, seed + i))
            .collect()
    }

    #[test]
    fn poisson_zero_frame_stays_zero() {
        let f = Frame::zeros(8, 8, 1);
        let out = poisson_corrupt(&f, 30.0, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_moments_track_the_distribution() {
        let f = Frame::from_fn(100, 100, 1, |_, _, _| 0.5);
        let peak = 30.0;
        let out = poisson_corrupt(&f, peak, 7).unwrap();
        let n = out.data().len() as f64;
        let mean = out.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = out
            .data()
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        let expected_var = 0.5 / peak;
        assert!(
            (var - expected_var).abs() < 0.2 * expected_var,
            "var {var}, expected {expected_var}"
        );
    }

    #[test]
    fn poisson_is_deterministic_under_seed() {
        let f = Frame::from_fn(16, 16, 1, |y, x, _| ((y * 16 + x) % 250) as f32 / 255.0);
        let a = poisson_corrupt(&f, 30.0, 42).unwrap();
        let b = poisson_corrupt(&f, 30.0, 42).unwrap();
        assert_eq!(a.data(), b.data());
        let c = poisson_corrupt(&f, 30.0, 43).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn poisson_peak_guard() {
        let f = Frame::zeros(4, 4, 1);
        assert!(matches!(
            poisson_corrupt(&f, 0.0, 0),
            Err(TrainError::PoissonPeakOutOfRange { .. })
        ));
        assert!(matches!(
            poisson_corrupt(&f, 2e6, 0),
            Err(TrainError::PoissonPeakOutOfRange { .. })
        ));
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut cfg = tiny_config(0);
        cfg.patch_size = 18;
        assert!(matches!(
            cfg.validate(),
            Err(TrainError::InvalidConfig { field: "patch_size", .. })
        ));
        let mut cfg = tiny_config(0);
        cfg.poisson_peak = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn spatial_training_runs_and_is_pure() {
        let data = tiny_data(10);
        let cfg = tiny_config(5);
        let (_, report) = train_spatial(&data, &cfg, None).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert!(report.epochs.iter().all(|r| r.train_loss.is_finite() && r.train_loss >= 0.0));
        assert_eq!(report.purity.clean_loss_path_reads, 0);
        assert!(report.purity.loss_tensor_frames > 0);
        assert!(report.purity.clean_reads_by_synth > 0);
        assert!(report.purity.clean_reads_by_eval > 0);
    }

    #[test]
    fn spatial_training_is_bit_reproducible() {
        let data = tiny_data(3);
        let cfg = tiny_config(9);
        let (net_a, _) = train_spatial(&data, &cfg, None).unwrap();
        let (net_b, _) = train_spatial(&data, &cfg, None).unwrap();
        for ((na, ta), (nb, tb)) in net_a.weights().iter().zip(net_b.weights().iter()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u32> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "weights diverged at {na}");
        }
    }

    #[test]
    fn temporal_training_freezes_stage_one() {
        let data = tiny_data(21);
        let cfg = tiny_config(13);
        let (spatial, _) = train_spatial(&data, &cfg, None).unwrap();
        let before: Vec<Vec<u32>> = spatial
            .weights()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        let (_, report) = train_temporal(&data, &spatial, &cfg, None).unwrap();
        let after: Vec<Vec<u32>> = spatial
            .weights()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after, "stage-2 training touched stage-1 weights");
        assert_eq!(report.purity.clean_loss_path_reads, 0);
        assert!(report.epochs.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn choke_point_rejects_clean_frames() {
        let mut audit = PurityAudit::default();
        let mut g = Graph::new();
        let clean = TaggedFrame {
            frame: Frame::zeros(8, 8, 1),
            provenance: Provenance::Clean,
        };
        let err = loss_batch_leaf(&mut g, &[&clean], &mut audit).unwrap_err();
        assert!(matches!(err, TrainError::CleanFrameOnLossPath));
        assert_eq!(audit.clean_loss_path_reads, 1);
    }

    #[test]
    fn non_finite_loss_reports_location() {
        let err = check_finite(f64::NAN, Stage::Spatial, 3, 7).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epoch 3") && msg.contains("batch 7"), "{msg}");
    }

    #[test]
    fn train_rejects_empty_and_mixed_datasets() {
        let cfg = tiny_config(0);
        assert!(matches!(
            train_spatial(&[], &cfg, None),
            Err(TrainError::EmptyDataset)
        ));
        let mixed = vec![
            clean_sequence(16, 16, 1, 6, 0),
            clean_sequence(16, 16, 3, 6, 1),
        ];
        assert!(matches!(
            train_spatial(&mixed, &cfg, None),
            Err(TrainError::MixedChannelCounts)
        ));
    }
}
