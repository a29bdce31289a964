//! Quick wall-time probe for the smoke-training schedules.

use std::time::Instant;

use derain::dataset::FrameSequence;
use derain::metrics::{psnr, ssim, SsimOptions, DEFAULT_DYNAMIC_RANGE};
use derain::rain::{corrupt_sequence, RainParams};
use derain::rng::derive_seed;
use derain::synthetic::clean_sequence;
use derain::trainer::{train_spatial, train_temporal, TrainConfig};

fn mean_metrics(pred: &FrameSequence, clean: &FrameSequence) -> (f64, f64) {
    let mut p = 0.0;
    let mut s = 0.0;
    for (a, b) in pred.frames().iter().zip(clean.frames()) {
        p += psnr(a, b, DEFAULT_DYNAMIC_RANGE).unwrap();
        s += ssim(a, b, &SsimOptions::default()).unwrap();
    }
    (p / pred.len() as f64, s / pred.len() as f64)
}

fn main() {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let data: Vec<_> = (0..4).map(|i| clean_sequence(64, 64, 1, 20, 100 + i)).collect();
    let cfg = TrainConfig {
        epochs,
        seed: 1,
        source_rain: RainParams::default().with_density(300.0, 10.0).unwrap(),
        target_rain: RainParams::default().with_density(500.0, 20.0).unwrap(),
        ..TrainConfig::default()
    };

    // rainy baseline on the val content (same substream the trainer uses)
    let val_rain = cfg
        .source_rain
        .with_seed(derive_seed(cfg.seed, "s1-val-rain", 0));
    for (i, seq) in data.iter().enumerate() {
        let rainy = corrupt_sequence(seq, &val_rain).unwrap();
        let (p, s) = mean_metrics(&rainy, seq);
        println!("seq {i}: rainy vs clean {p:.2} dB / ssim {s:.4}");
    }

    let t0 = Instant::now();
    let (spatial, report) = train_spatial(&data, &cfg, None).unwrap();
    println!(
        "spatial: {:.1}s for {} epochs; loss {:.5} -> {:.5}; val psnr {:.2} -> {:.2}; val ssim {:.4} -> {:.4}",
        t0.elapsed().as_secs_f64(),
        cfg.epochs,
        report.epochs[0].train_loss,
        report.epochs.last().unwrap().train_loss,
        report.epochs[0].val_psnr_db,
        report.epochs.last().unwrap().val_psnr_db,
        report.epochs[0].val_ssim,
        report.epochs.last().unwrap().val_ssim,
    );
    let t1 = Instant::now();
    let (_, report2) = train_temporal(&data, &spatial, &cfg, None).unwrap();
    println!(
        "temporal: {:.1}s for {} epochs; loss {:.5} -> {:.5}; val psnr {:.2} -> {:.2}; val ssim {:.4} -> {:.4}",
        t1.elapsed().as_secs_f64(),
        cfg.epochs,
        report2.epochs[0].train_loss,
        report2.epochs.last().unwrap().train_loss,
        report2.epochs[0].val_psnr_db,
        report2.epochs.last().unwrap().val_psnr_db,
        report2.epochs[0].val_ssim,
        report2.epochs.last().unwrap().val_ssim,
    );
}
