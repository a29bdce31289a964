//! Parametric rain synthesis: additive anti-aliased streaks plus a blended
//! mist (blur) layer, deterministic under `(seed, frame_index, params)`.
//!
//! The streak count per frame is drawn from a clamped normal distribution,
//! each streak is an oriented line segment stamped with its own brightness
//! factor, and the composite is `clamp(clean + layer)` followed by an
//! optional blur blend. Layers generated for the same frame under
//! different seeds are i.i.d., which is exactly what the noisy/noisy
//! training pairs need.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Frame, FrameSequence};
use crate::rng::substream;

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum RainError {
    OutOfRange {
        field: &'static str,
        value: f64,
        allowed: &'static str,
    },
    ShapeTooSmall {
        height: usize,
        width: usize,
        streak_length_px: u32,
    },
    ShapeMismatch {
        frame: (usize, usize, usize),
        layer: (usize, usize, usize),
    },
}

impl fmt::Display for RainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OutOfRange {
                field,
                value,
                allowed,
            } => write!(f, "rain parameter {field} = {value} outside {allowed}"),
            Self::ShapeTooSmall {
                height,
                width,
                streak_length_px,
            } => write!(
                f,
                "frame {height}x{width} smaller than streak length {streak_length_px}"
            ),
            Self::ShapeMismatch { frame, layer } => write!(
                f,
                "frame shape {}x{}x{} does not match layer {}x{}x{}",
                frame.0, frame.1, frame.2, layer.0, layer.1, layer.2
            ),
        }
    }
}

impl std::error::Error for RainError {}

// ── Parameters ──────────────────────────────────────────────────────

/// Unvalidated rain parameters, the JSON-facing shape. Turn into
/// [`RainParams`] to use them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainParamsInit {
    /// Expected streak count per frame.
    pub density_mean: f64,
    /// Standard deviation of the streak count.
    pub density_std: f64,
    pub streak_length_px: u32,
    pub streak_width_px: u32,
    /// Rotation from vertical in degrees; the wind effect.
    pub angle_deg: f64,
    /// Additive brightness per streak, unit-interval scale.
    pub streak_intensity: f32,
    /// Gaussian blur radius of the fog layer.
    pub mist_sigma_px: f64,
    /// Blend weight of the blurred layer.
    pub mist_alpha: f32,
    pub seed: u64,
}

impl Default for RainParamsInit {
    fn default() -> Self {
        Self {
            density_mean: 300.0,
            density_std: 10.0,
            streak_length_px: 3,
            streak_width_px: 1,
            angle_deg: 10.0,
            streak_intensity: 0.45,
            mist_sigma_px: 1.5,
            mist_alpha: 0.2,
            seed: 0,
        }
    }
}

/// Validated rain process parameters. Construction rejects out-of-range
/// fields, so a held `RainParams` is always usable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RainParamsInit", into = "RainParamsInit")]
pub struct RainParams {
    init: RainParamsInit,
}

impl TryFrom<RainParamsInit> for RainParams {
    type Error = RainError;

    fn try_from(init: RainParamsInit) -> Result<Self, RainError> {
        RainParams::new(init)
    }
}

impl From<RainParams> for RainParamsInit {
    fn from(p: RainParams) -> Self {
        p.init
    }
}

impl Default for RainParams {
    fn default() -> Self {
        Self::new(RainParamsInit::default()).expect("default rain parameters are valid")
    }
}

impl RainParams {
    pub fn new(init: RainParamsInit) -> Result<Self, RainError> {
        fn check(
            ok: bool,
            field: &'static str,
            value: f64,
            allowed: &'static str,
        ) -> Result<(), RainError> {
            if ok {
                Ok(())
            } else {
                Err(RainError::OutOfRange {
                    field,
                    value,
                    allowed,
                })
            }
        }
        check(
            init.density_mean.is_finite() && init.density_mean >= 0.0,
            "density_mean",
            init.density_mean,
            "[0, inf)",
        )?;
        check(
            init.density_std.is_finite() && init.density_std >= 0.0,
            "density_std",
            init.density_std,
            "[0, inf)",
        )?;
        check(
            init.streak_length_px >= 1,
            "streak_length_px",
            f64::from(init.streak_length_px),
            "[1, inf)",
        )?;
        check(
            init.streak_width_px >= 1,
            "streak_width_px",
            f64::from(init.streak_width_px),
            "[1, inf)",
        )?;
        check(
            init.angle_deg.is_finite() && (-45.0..=45.0).contains(&init.angle_deg),
            "angle_deg",
            init.angle_deg,
            "[-45, 45]",
        )?;
        check(
            init.streak_intensity.is_finite()
                && init.streak_intensity > 0.0
                && init.streak_intensity <= 1.0,
            "streak_intensity",
            f64::from(init.streak_intensity),
            "(0, 1]",
        )?;
        check(
            init.mist_sigma_px.is_finite() && init.mist_sigma_px >= 0.0,
            "mist_sigma_px",
            init.mist_sigma_px,
            "[0, inf)",
        )?;
        check(
            init.mist_alpha.is_finite() && (0.0..=1.0).contains(&init.mist_alpha),
            "mist_alpha",
            f64::from(init.mist_alpha),
            "[0, 1]",
        )?;
        Ok(Self { init })
    }

    pub fn density_mean(&self) -> f64 {
        self.init.density_mean
    }

    pub fn density_std(&self) -> f64 {
        self.init.density_std
    }

    pub fn streak_length_px(&self) -> u32 {
        self.init.streak_length_px
    }

    pub fn streak_width_px(&self) -> u32 {
        self.init.streak_width_px
    }

    pub fn angle_deg(&self) -> f64 {
        self.init.angle_deg
    }

    pub fn streak_intensity(&self) -> f32 {
        self.init.streak_intensity
    }

    pub fn mist_sigma_px(&self) -> f64 {
        self.init.mist_sigma_px
    }

    pub fn mist_alpha(&self) -> f32 {
        self.init.mist_alpha
    }

    pub fn seed(&self) -> u64 {
        self.init.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut init = self.init.clone();
        init.seed = seed;
        Self { init }
    }

    pub fn with_density(&self, mean: f64, std: f64) -> Result<Self, RainError> {
        let mut init = self.init.clone();
        init.density_mean = mean;
        init.density_std = std;
        Self::new(init)
    }

    pub fn with_mist(&self, sigma_px: f64, alpha: f32) -> Result<Self, RainError> {
        let mut init = self.init.clone();
        init.mist_sigma_px = sigma_px;
        init.mist_alpha = alpha;
        Self::new(init)
    }
}

// ── Rain layer ──────────────────────────────────────────────────────

/// Nonnegative additive intensities, same shape as the frame it will be
/// composited onto. Streaks are achromatic: every channel carries the same
/// value.
#[derive(Clone, Debug, PartialEq)]
pub struct RainLayer {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl RainLayer {
    /// Build directly from per-pixel values; negative entries are rejected.
    pub fn from_values(
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self, RainError> {
        assert_eq!(values.len(), height * width * channels, "layer data length");
        if let Some(&v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(RainError::OutOfRange {
                field: "layer value",
                value: f64::from(v),
                allowed: "[0, inf)",
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Fraction of pixels (not samples) any streak touched.
    pub fn nonzero_fraction(&self) -> f64 {
        let hw = self.height * self.width;
        let mut nonzero = 0usize;
        for p in 0..hw {
            if self.values[p * self.channels] != 0.0 {
                nonzero += 1;
            }
        }
        nonzero as f64 / hw as f64
    }
}

// ── Synthesis ───────────────────────────────────────────────────────

/// The streak count the given frame will receive:
/// `round(max(0, Normal(density_mean, density_std)))`.
pub fn sample_streak_count(params: &RainParams, frame_index: u64) -> u32 {
    let mut rng = substream(params.seed(), "rain-layer", frame_index);
    draw_streak_count(params, &mut rng)
}

fn draw_streak_count(params: &RainParams, rng: &mut impl Rng) -> u32 {
    if params.density_mean() == 0.0 && params.density_std() == 0.0 {
        return 0;
    }
    let n = if params.density_std() == 0.0 {
        params.density_mean()
    } else {
        Normal::new(params.density_mean(), params.density_std())
            .expect("validated std is finite and nonnegative")
            .sample(rng)
    };
    n.max(0.0).round() as u32
}

/// Generate the additive rain layer for one frame. The RNG stream is
/// derived from `(params.seed, frame_index)`, so neighboring frames carry
/// independent, identically distributed rain.
pub fn synthesize_rain_layer(
    height: usize,
    width: usize,
    channels: usize,
    params: &RainParams,
    frame_index: u64,
) -> Result<RainLayer, RainError> {
    let len = params.streak_length_px();
    if (height as u32) < len || (width as u32) < len {
        return Err(RainError::ShapeTooSmall {
            height,
            width,
            streak_length_px: len,
        });
    }
    let mut rng = substream(params.seed(), "rain-layer", frame_index);
    let count = draw_streak_count(params, &mut rng);

    let mut plane = vec![0.0f32; height * width];
    let theta = params.angle_deg().to_radians();
    // direction along the streak; theta = 0 falls straight down
    let (along_x, along_y) = (theta.sin(), theta.cos());
    let (perp_x, perp_y) = (along_y, -along_x);
    let half_len = f64::from(len) / 2.0;
    let half_width = f64::from(params.streak_width_px()) / 2.0;
    // anti-aliasing ramp: full coverage inside, linear falloff over 0.5 px
    let reach_l = half_len + 0.25;
    let reach_w = half_width + 0.25;
    let bound_x = reach_l * along_x.abs() + reach_w * perp_x.abs();
    let bound_y = reach_l * along_y.abs() + reach_w * perp_y.abs();
    let brightness = Normal::new(1.0f64, 0.2).expect("constant, valid");

    for _ in 0..count {
        let cx: f64 = rng.random_range(0.0..width as f64);
        let cy: f64 = rng.random_range(0.0..height as f64);
        let factor = brightness.sample(&mut rng).clamp(0.2, 1.8);
        let amp = f64::from(params.streak_intensity()) * factor;

        let x_lo = ((cx - bound_x - 0.5).floor().max(0.0)) as usize;
        let x_hi = ((cx + bound_x + 0.5).ceil() as usize).min(width);
        let y_lo = ((cy - bound_y - 0.5).floor().max(0.0)) as usize;
        let y_hi = ((cy + bound_y + 0.5).ceil() as usize).min(height);
        for y in y_lo..y_hi {
            let dy = (y as f64 + 0.5) - cy;
            for x in x_lo..x_hi {
                let dx = (x as f64 + 0.5) - cx;
                let t = dx * along_x + dy * along_y;
                let s = dx * perp_x + dy * perp_y;
                let cov_l = ((reach_l - t.abs()) / 0.5).clamp(0.0, 1.0);
                let cov_w = ((reach_w - s.abs()) / 0.5).clamp(0.0, 1.0);
                let cov = cov_l * cov_w;
                if cov > 0.0 {
                    plane[y * width + x] += (amp * cov) as f32;
                }
            }
        }
    }

    let mut values = vec![0.0f32; height * width * channels];
    for (p, &v) in plane.iter().enumerate() {
        for c in 0..channels {
            values[p * channels + c] = v;
        }
    }
    RainLayer::from_values(height, width, channels, values)
}

/// Composite a rain layer onto a clean frame:
/// `clamp(clean + layer)`, then blend `mist_alpha` of its blur back in.
pub fn apply_rain(clean: &Frame, layer: &RainLayer, params: &RainParams) -> Result<Frame, RainError> {
    if clean.shape() != layer.shape() {
        return Err(RainError::ShapeMismatch {
            frame: clean.shape(),
            layer: layer.shape(),
        });
    }
    let composite: Vec<f32> = clean
        .data()
        .iter()
        .zip(layer.values())
        .map(|(&c, &r)| (c + r).clamp(0.0, 1.0))
        .collect();
    let (h, w, ch) = clean.shape();
    let composite = Frame::new(h, w, ch, composite).expect("clamped composite is valid");

    let alpha = params.mist_alpha();
    if alpha == 0.0 {
        return Ok(composite);
    }
    let blurred = gaussian_blur(&composite, params.mist_sigma_px());
    let blended: Vec<f32> = composite
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(&c, &b)| ((1.0 - alpha) * c + alpha * b).clamp(0.0, 1.0))
        .collect();
    Ok(Frame::new(h, w, ch, blended).expect("blend of unit-interval frames is valid"))
}

/// Rain-corrupt every frame of a sequence with frame-indexed RNG streams.
pub fn corrupt_sequence(seq: &FrameSequence, params: &RainParams) -> Result<FrameSequence, RainError> {
    let (h, w, c) = seq.shape();
    let mut frames = Vec::with_capacity(seq.len());
    for (i, frame) in seq.frames().iter().enumerate() {
        let layer = synthesize_rain_layer(h, w, c, params, i as u64)?;
        frames.push(apply_rain(frame, &layer, params)?);
    }
    Ok(seq
        .with_frames(frames)
        .expect("same frame count and shape as the input sequence"))
}

/// Separable Gaussian blur with kernel radius `ceil(3*sigma)`, kernel
/// normalized to sum 1, clamp-to-edge borders. `sigma = 0` is the identity.
pub fn gaussian_blur(img: &Frame, sigma: f64) -> Frame {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let (h, w, c) = img.shape();
    let src = img.data();

    // horizontal pass
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (k, &wt) in kernel.iter().enumerate() {
                    let xi = (x as isize + k as isize - radius as isize).clamp(0, w as isize - 1);
                    acc += wt * f64::from(src[(y * w + xi as usize) * c + ch]);
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    // vertical pass
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for (k, &wt) in kernel.iter().enumerate() {
                    let yi = (y as isize + k as isize - radius as isize).clamp(0, h as isize - 1);
                    acc += wt * tmp[(yi as usize * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = (acc.clamp(0.0, 1.0)) as f32;
            }
        }
    }
    Frame::new(h, w, c, out).expect("blurred frame stays in range")
}

/// Normalized 1-D Gaussian taps over radius `ceil(3*sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}
