//! Full-reference quality metrics: PSNR and SSIM, plus sequence-level
//! aggregation.
//!
//! Frames hold unit-interval values and are scaled by the dynamic range
//! (255 by default) before the error terms, so the decibel numbers read in
//! familiar 8-bit terms. Color is handled by averaging the metric over
//! channels; the report records that policy.

use std::fmt;

use serde::Serialize;

use crate::dataset::{Frame, FrameSequence};

pub const DEFAULT_DYNAMIC_RANGE: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricError {
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    FrameSmallerThanWindow {
        shape: (usize, usize, usize),
        window: usize,
    },
    LengthMismatch { pred: usize, reference: usize },
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { left, right } => write!(
                f,
                "frame shapes {}x{}x{} and {}x{}x{} differ",
                left.0, left.1, left.2, right.0, right.1, right.2
            ),
            Self::FrameSmallerThanWindow { shape, window } => write!(
                f,
                "frame {}x{} smaller than the {window}x{window} SSIM window",
                shape.0, shape.1
            ),
            Self::LengthMismatch { pred, reference } => write!(
                f,
                "sequence lengths differ: {pred} predicted vs {reference} reference frames"
            ),
        }
    }
}

impl std::error::Error for MetricError {}

// ── PSNR ────────────────────────────────────────────────────────────

/// Peak signal-to-noise ratio in dB between two unit-interval frames,
/// `10*log10(L^2 / MSE)` with both frames scaled by `L` first. Identical
/// frames produce the infinite sentinel (`f64::INFINITY`).
pub fn psnr(f: &Frame, g: &Frame, dynamic_range: f64) -> Result<f64, MetricError> {
    if f.shape() != g.shape() {
        return Err(MetricError::ShapeMismatch {
            left: f.shape(),
            right: g.shape(),
        });
    }
    let mut acc = 0.0f64;
    for (&a, &b) in f.data().iter().zip(g.data()) {
        let d = dynamic_range * f64::from(a) - dynamic_range * f64::from(b);
        acc += d * d;
    }
    let mse = acc / f.data().len() as f64;
    Ok(psnr_from_mse(mse, dynamic_range))
}

/// PSNR over samples already scaled to `[0, L]`. Same arithmetic as
/// [`psnr`] minus the scaling step; exists so the scale-consistency
/// property is testable.
pub fn psnr_prescaled(f: &[f64], g: &[f64], dynamic_range: f64) -> f64 {
    let mut acc = 0.0f64;
    for (&a, &b) in f.iter().zip(g) {
        let d = a - b;
        acc += d * d;
    }
    psnr_from_mse(acc / f.len() as f64, dynamic_range)
}

fn psnr_from_mse(mse: f64, dynamic_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (dynamic_range * dynamic_range / mse).log10()
    }
}

// ── SSIM ────────────────────────────────────────────────────────────

/// Which second-order term feeds the SSIM numerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    /// `2*cov(x,y) + c2`: the standard structural-similarity form.
    #[default]
    Covariance,
    /// `2*std(x)*std(y) + c2`: the formula as often printed; insensitive
    /// to the sign of the correlation.
    ProductOfDeviations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
    pub mode: SsimMode,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            dynamic_range: DEFAULT_DYNAMIC_RANGE,
            k1: 0.01,
            k2: 0.03,
            mode: SsimMode::default(),
        }
    }
}

struct WindowStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn ssim_term(s: &WindowStats, opts: &SsimOptions) -> f64 {
    let c1 = (opts.k1 * opts.dynamic_range).powi(2);
    let c2 = (opts.k2 * opts.dynamic_range).powi(2);
    let var_x = s.var_x.max(0.0);
    let var_y = s.var_y.max(0.0);
    let second = match opts.mode {
        SsimMode::Covariance => 2.0 * s.cov,
        SsimMode::ProductOfDeviations => 2.0 * var_x.sqrt() * var_y.sqrt(),
    };
    let num = (2.0 * s.mu_x * s.mu_y + c1) * (second + c2);
    let den = (s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1) * (var_x + var_y + c2);
    num / den
}

/// Mean SSIM over 11x11 Gaussian windows (sigma 1.5) at every valid
/// position, averaged over channels.
pub fn ssim(x: &Frame, y: &Frame, opts: &SsimOptions) -> Result<f64, MetricError> {
    if x.shape() != y.shape() {
        return Err(MetricError::ShapeMismatch {
            left: x.shape(),
            right: y.shape(),
        });
    }
    let (h, w, channels) = x.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::FrameSmallerThanWindow {
            shape: x.shape(),
            window: SSIM_WINDOW,
        });
    }
    let weights = gaussian_window();
    let l = opts.dynamic_range;
    let mut acc = 0.0f64;
    let positions = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1);
    for c in 0..channels {
        for wy in 0..=h - SSIM_WINDOW {
            for wx in 0..=w - SSIM_WINDOW {
                let mut mu_x = 0.0;
                let mut mu_y = 0.0;
                let mut xx = 0.0;
                let mut yy = 0.0;
                let mut xy = 0.0;
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wgt = weights[ky * SSIM_WINDOW + kx];
                        let a = l * f64::from(x.get(wy + ky, wx + kx, c));
                        let b = l * f64::from(y.get(wy + ky, wx + kx, c));
                        mu_x += wgt * a;
                        mu_y += wgt * b;
                        xx += wgt * a * a;
                        yy += wgt * b * b;
                        xy += wgt * a * b;
                    }
                }
                acc += ssim_term(
                    &WindowStats {
                        mu_x,
                        mu_y,
                        var_x: xx - mu_x * mu_x,
                        var_y: yy - mu_y * mu_y,
                        cov: xy - mu_x * mu_y,
                    },
                    opts,
                );
            }
        }
    }
    Ok(acc / (positions * channels) as f64)
}

/// SSIM from whole-frame statistics (one uniform window covering
/// everything). Used as an oracle for the windowed variant.
pub fn ssim_global(x: &Frame, y: &Frame, opts: &SsimOptions) -> Result<f64, MetricError> {
    if x.shape() != y.shape() {
        return Err(MetricError::ShapeMismatch {
            left: x.shape(),
            right: y.shape(),
        });
    }
    let (h, w, channels) = x.shape();
    let n = (h * w) as f64;
    let l = opts.dynamic_range;
    let mut acc = 0.0;
    for c in 0..channels {
        let mut mu_x = 0.0;
        let mut mu_y = 0.0;
        let mut xx = 0.0;
        let mut yy = 0.0;
        let mut xy = 0.0;
        for yq in 0..h {
            for xq in 0..w {
                let a = l * f64::from(x.get(yq, xq, c));
                let b = l * f64::from(y.get(yq, xq, c));
                mu_x += a;
                mu_y += b;
                xx += a * a;
                yy += b * b;
                xy += a * b;
            }
        }
        mu_x /= n;
        mu_y /= n;
        acc += ssim_term(
            &WindowStats {
                mu_x,
                mu_y,
                var_x: xx / n - mu_x * mu_x,
                var_y: yy / n - mu_y * mu_y,
                cov: xy / n - mu_x * mu_y,
            },
            opts,
        );
    }
    Ok(acc / channels as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in -r..=r {
        for x in -r..=r {
            w.push((-((y * y + x * x) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

// ── Sequence evaluation ─────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct FrameScore {
    pub frame_idx: usize,
    /// dB, `f64::INFINITY` when the frames are identical.
    #[serde(skip)]
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-frame metrics plus sequence means. Frames with infinite PSNR are
/// excluded from the dB mean and reported through `infinite_psnr_count`;
/// the SSIM mean covers every frame.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub frames: Vec<FrameScore>,
    pub mean_psnr_db: Option<f64>,
    pub infinite_psnr_count: usize,
    pub mean_ssim: f64,
    /// How color was reduced to one number per frame.
    pub channel_policy: &'static str,
}

impl MetricReport {
    /// CSV body with header `frame_idx,psnr_db,ssim`. Infinite PSNR prints
    /// as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_idx,psnr_db,ssim\n");
        for f in &self.frames {
            let psnr = if f.psnr_db.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.6}", f.psnr_db)
            };
            out.push_str(&format!("{},{},{:.6}\n", f.frame_idx, psnr, f.ssim));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "frames": self.frames.len(),
            "mean_psnr_db": self.mean_psnr_db,
            "infinite_psnr_count": self.infinite_psnr_count,
            "mean_ssim": self.mean_ssim,
            "channel_policy": self.channel_policy,
        })
    }
}

/// Score a predicted sequence against its clean reference, frame by frame.
pub fn evaluate_sequences(
    pred: &FrameSequence,
    reference: &FrameSequence,
) -> Result<MetricReport, MetricError> {
    if pred.len() != reference.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            reference: reference.len(),
        });
    }
    let opts = SsimOptions::default();
    let mut frames = Vec::with_capacity(pred.len());
    for (i, (p, r)) in pred.frames().iter().zip(reference.frames()).enumerate() {
        frames.push(FrameScore {
            frame_idx: i,
            psnr_db: psnr(p, r, DEFAULT_DYNAMIC_RANGE)?,
            ssim: ssim(p, r, &opts)?,
        });
    }
    Ok(report_from_scores(frames))
}

pub fn report_from_scores(frames: Vec<FrameScore>) -> MetricReport {
    let finite: Vec<f64> = frames
        .iter()
        .map(|f| f.psnr_db)
        .filter(|p| p.is_finite())
        .collect();
    let infinite_psnr_count = frames.len() - finite.len();
    let mean_psnr_db = if finite.is_empty() {
        None
    } else {
        Some(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    let mean_ssim = frames.iter().map(|f| f.ssim).sum::<f64>() / frames.len() as f64;
    MetricReport {
        frames,
        mean_psnr_db,
        infinite_psnr_count,
        mean_ssim,
        channel_policy: "channel-mean",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize, c: usize, salt: u32) -> Frame {
        Frame::from_fn(h, w, c, |y, x, ch| {
            let v = (y as u32)
                .wrapping_mul(97)
                .wrapping_add((x as u32).wrapping_mul(31))
                .wrapping_add((ch as u32).wrapping_mul(7))
                .wrapping_add(salt.wrapping_mul(131));
            (v % 251) as f32 / 250.0
        })
    }

    #[test]
    fn identical_frames_have_infinite_psnr() {
        let f = textured(16, 16, 3, 0);
        assert!(psnr(&f, &f, 255.0).unwrap().is_infinite());
    }

    #[test]
    fn black_vs_white_is_zero_db() {
        let f = Frame::from_fn(8, 8, 1, |_, _, _| 0.0);
        let g = Frame::from_fn(8, 8, 1, |_, _, _| 1.0);
        let db = psnr(&f, &g, 255.0).unwrap();
        assert!(db.abs() < 1e-12, "psnr {db}");
    }

    #[test]
    fn single_pixel_difference_matches_closed_form() {
        // 4x4 gray frames, one pixel differs by 16/255: MSE = 16, so
        // PSNR = 10*log10(255^2/16).
        let f = Frame::from_fn(4, 4, 1, |_, _, _| 0.0);
        let mut data = vec![0.0f32; 16];
        data[5] = 16.0 / 255.0;
        let g = Frame::new(4, 4, 1, data).unwrap();
        let expected = 10.0 * (65025.0f64 / 16.0).log10();
        let got = psnr(&f, &g, 255.0).unwrap();
        // the pixel value is stored as f32, so the 16/255 step carries
        // half-ulp quantization into the dB number
        assert!((got - expected).abs() < 1e-5, "got {got}, expected {expected}");
        assert!((expected - 36.09).abs() < 0.01);
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let f = textured(8, 8, 1, 0);
        let g = textured(8, 9, 1, 0);
        assert!(matches!(
            psnr(&f, &g, 255.0),
            Err(MetricError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn psnr_scale_consistency() {
        let f = textured(12, 12, 1, 1);
        let g = textured(12, 12, 1, 2);
        let via_frames = psnr(&f, &g, 255.0).unwrap();
        let fs: Vec<f64> = f.data().iter().map(|&v| 255.0 * f64::from(v)).collect();
        let gs: Vec<f64> = g.data().iter().map(|&v| 255.0 * f64::from(v)).collect();
        let via_prescaled = psnr_prescaled(&fs, &gs, 255.0);
        assert!((via_frames - via_prescaled).abs() < 1e-9);
    }

    #[test]
    fn any_perturbation_strictly_lowers_psnr() {
        let f = textured(16, 16, 1, 3);
        let mut bumped = f.data().to_vec();
        bumped[40] = (bumped[40] + 0.1).min(1.0);
        let g = Frame::new(16, 16, 1, bumped).unwrap();
        assert!(psnr(&f, &g, 255.0).unwrap() < f64::INFINITY);
        let mut bumped2 = g.data().to_vec();
        bumped2[90] = (bumped2[90] + 0.2).min(1.0);
        let g2 = Frame::new(16, 16, 1, bumped2).unwrap();
        assert!(psnr(&f, &g2, 255.0).unwrap() < psnr(&f, &g, 255.0).unwrap());
    }

    #[test]
    fn ssim_of_identical_frames_is_exactly_one() {
        let f = textured(16, 20, 3, 4);
        let s = ssim(&f, &f, &SsimOptions::default()).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ssim_global_closed_form_black_vs_white() {
        // x = 0, y = 255: all variances vanish, so
        // SSIM = c1*c2 / ((255^2 + c1) * c2) ≈ 9.999e-5.
        let f = Frame::from_fn(16, 16, 1, |_, _, _| 0.0);
        let g = Frame::from_fn(16, 16, 1, |_, _, _| 1.0);
        let s = ssim_global(&f, &g, &SsimOptions::default()).unwrap();
        let c1 = 6.5025f64;
        let expected = c1 / (65025.0 + c1);
        assert!((s - expected).abs() < 1e-12, "got {s}, expected {expected}");
        assert!((s - 9.999e-5).abs() < 1e-7);
    }

    #[test]
    fn ssim_is_symmetric() {
        let f = textured(16, 16, 1, 5);
        let g = textured(16, 16, 1, 6);
        let opts = SsimOptions::default();
        let a = ssim(&f, &g, &opts).unwrap();
        let b = ssim(&g, &f, &opts).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn windowed_equals_global_on_constant_frames() {
        let f = Frame::from_fn(16, 16, 1, |_, _, _| 0.25);
        let g = Frame::from_fn(16, 16, 1, |_, _, _| 0.75);
        let opts = SsimOptions::default();
        let windowed = ssim(&f, &g, &opts).unwrap();
        let global = ssim_global(&f, &g, &opts).unwrap();
        assert!((windowed - global).abs() < 1e-6);
    }

    #[test]
    fn small_frames_rejected_for_windowed_ssim() {
        let f = textured(8, 8, 1, 0);
        assert!(matches!(
            ssim(&f, &f, &SsimOptions::default()),
            Err(MetricError::FrameSmallerThanWindow { .. })
        ));
    }

    #[test]
    fn paper_literal_mode_differs_only_in_second_term() {
        let f = textured(16, 16, 1, 7);
        let g = textured(16, 16, 1, 8);
        let cov = ssim(&f, &g, &SsimOptions::default()).unwrap();
        let lit = ssim(
            &f,
            &g,
            &SsimOptions {
                mode: SsimMode::ProductOfDeviations,
                ..SsimOptions::default()
            },
        )
        .unwrap();
        // product-of-deviations can only exceed the covariance form
        assert!(lit >= cov - 1e-12, "lit {lit} vs cov {cov}");
    }

    #[test]
    fn identical_sequences_report_undefined_db_mean_with_count() {
        let frames: Vec<Frame> = (0..4).map(|i| textured(16, 16, 1, i)).collect();
        let seq = FrameSequence::new(frames, "s", None).unwrap();
        let report = evaluate_sequences(&seq, &seq).unwrap();
        assert_eq!(report.infinite_psnr_count, 4);
        assert!(report.mean_psnr_db.is_none());
        assert!(report.frames.iter().all(|f| f.ssim == 1.0));
        assert_eq!(report.mean_ssim, 1.0);
        let json = report.summary_json();
        assert!(json["mean_psnr_db"].is_null());
    }

    #[test]
    fn sequence_means_match_per_frame_recomputation() {
        let pred: Vec<Frame> = (0..5).map(|i| textured(16, 16, 1, i)).collect();
        let refr: Vec<Frame> = (0..5).map(|i| textured(16, 16, 1, i + 50)).collect();
        let pred = FrameSequence::new(pred, "p", None).unwrap();
        let refr = FrameSequence::new(refr, "r", None).unwrap();
        let report = evaluate_sequences(&pred, &refr).unwrap();
        let mut psnr_sum = 0.0;
        let mut ssim_sum = 0.0;
        for i in 0..5 {
            psnr_sum += psnr(pred.frame(i), refr.frame(i), 255.0).unwrap();
            ssim_sum += ssim(pred.frame(i), refr.frame(i), &SsimOptions::default()).unwrap();
        }
        assert!((report.mean_psnr_db.unwrap() - psnr_sum / 5.0).abs() < 1e-12);
        assert!((report.mean_ssim - ssim_sum / 5.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_expected_columns_and_inf_sentinel() {
        let frames: Vec<Frame> = (0..2).map(|i| textured(16, 16, 1, i)).collect();
        let seq = FrameSequence::new(frames, "s", None).unwrap();
        let report = evaluate_sequences(&seq, &seq).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("frame_idx,psnr_db,ssim"));
        assert_eq!(lines.next(), Some("0,inf,1.000000"));
    }
}
