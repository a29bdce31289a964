//! Geometry sweep: how the streak length/intensity defaults trade off the
//! rainy baseline against the stage-1 ceiling.

use derain::rain::{RainParams, RainParamsInit};
use derain::synthetic::clean_sequence;
use derain::trainer::{train_spatial, validation_rainy_baseline, TrainConfig};

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let data: Vec<_> = (0..4).map(|i| clean_sequence(64, 64, 1, 20, 100 + i)).collect();

    for (len, intensity) in [(3u32, 0.45f32), (3, 0.6), (2, 0.5), (2, 0.65)] {
        let base = RainParams::new(RainParamsInit {
            streak_length_px: len,
            streak_intensity: intensity,
            ..RainParamsInit::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs,
            seed: 1,
            source_rain: base.with_density(300.0, 10.0).unwrap(),
            target_rain: base.with_density(500.0, 20.0).unwrap(),
            ..TrainConfig::default()
        };
        let (rainy_psnr, rainy_ssim) = validation_rainy_baseline(&data, &cfg).unwrap();
        let (_, report) = train_spatial(&data, &cfg, None).unwrap();
        let last = report.epochs.last().unwrap();
        println!(
            "len {len} intensity {intensity}: rainy {rainy_psnr:.2} dB/{rainy_ssim:.3}; derained {:.2} dB/{:.3}; gain {:+.2} dB",
            last.val_psnr_db, last.val_ssim, last.val_psnr_db - rainy_psnr
        );
    }
}
