//! Frame containers, image-sequence I/O, patch extraction, and splits.
//!
//! Binary PPM (P6) / PGM (P5) at maxval 255 is the baseline on-disk format;
//! PNG is supported as a convenience through the `image` crate. Pixels are
//! stored as unit-interval `f32`, interleaved row-major; writing quantizes
//! with round-half-away-from-zero so 8-bit data round-trips bit-exactly.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::rng::substream;
use crate::tensor::{Scalar, Tensor};

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum DataError {
    Io { path: PathBuf, source: io::Error },
    /// Not a binary PPM/PGM file.
    BadMagic { path: PathBuf },
    BadHeader { path: PathBuf, detail: String },
    UnsupportedMaxval { path: PathBuf, maxval: u32 },
    TruncatedPixels { path: PathBuf },
    Decode { path: PathBuf, detail: String },
    /// Channel count other than 1 or 3.
    BadChannelCount { channels: usize },
    ZeroExtent,
    DataLength { expected: usize, got: usize },
    OutOfRange { value: f32 },
    ShapeMismatch {
        path: PathBuf,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    EmptySequence,
    NonUniformShape,
    NoFramesMatched { dir: PathBuf, pattern: String },
    NumberingGap { dir: PathBuf, missing_index: u64 },
    DuplicateIndex { dir: PathBuf, index: u64 },
    BadPattern { pattern: String },
    PatchTooLarge {
        patch_size: usize,
        frame: (usize, usize),
    },
    PatchNotMultipleOf4 { patch_size: usize },
    SequenceTooShort { len: usize, window: usize },
    ZeroStride,
    BadValFraction { val_fraction: f64 },
    TooFewSequences { len: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Self::BadMagic { path } => {
                write!(f, "{}: not a binary PPM/PGM file", path.display())
            }
            Self::BadHeader { path, detail } => {
                write!(f, "{}: bad PNM header: {detail}", path.display())
            }
            Self::UnsupportedMaxval { path, maxval } => {
                write!(f, "{}: unsupported maxval {maxval}", path.display())
            }
            Self::TruncatedPixels { path } => {
                write!(f, "{}: pixel payload shorter than header implies", path.display())
            }
            Self::Decode { path, detail } => write!(f, "{}: {detail}", path.display()),
            Self::BadChannelCount { channels } => {
                write!(f, "frames must have 1 or 3 channels, got {channels}")
            }
            Self::ZeroExtent => write!(f, "frame extents must be at least 1"),
            Self::DataLength { expected, got } => {
                write!(f, "frame data has {got} values, shape implies {expected}")
            }
            Self::OutOfRange { value } => {
                write!(f, "pixel value {value} outside the unit interval")
            }
            Self::ShapeMismatch { path, expected, got } => write!(
                f,
                "{}: shape {}x{}x{} does not match the sequence's {}x{}x{}",
                path.display(),
                got.0,
                got.1,
                got.2,
                expected.0,
                expected.1,
                expected.2
            ),
            Self::EmptySequence => write!(f, "sequence must contain at least one frame"),
            Self::NonUniformShape => write!(f, "frames in a sequence must share one shape"),
            Self::NoFramesMatched { dir, pattern } => {
                write!(f, "{}: no files match pattern `{pattern}`", dir.display())
            }
            Self::NumberingGap { dir, missing_index } => {
                write!(f, "{}: frame numbering gap, missing index {missing_index}", dir.display())
            }
            Self::DuplicateIndex { dir, index } => {
                write!(f, "{}: duplicate frame index {index}", dir.display())
            }
            Self::BadPattern { pattern } => {
                write!(f, "pattern `{pattern}` must contain a `%0Nd` placeholder")
            }
            Self::PatchTooLarge { patch_size, frame } => write!(
                f,
                "patch size {patch_size} exceeds frame extents {}x{}",
                frame.0, frame.1
            ),
            Self::PatchNotMultipleOf4 { patch_size } => {
                write!(f, "patch size {patch_size} must be divisible by 4")
            }
            Self::SequenceTooShort { len, window } => {
                write!(f, "sequence of {len} frames is shorter than the {window}-frame window")
            }
            Self::ZeroStride => write!(f, "stride must be positive"),
            Self::BadValFraction { val_fraction } => {
                write!(f, "val_fraction {val_fraction} must lie in (0, 1)")
            }
            Self::TooFewSequences { len } => {
                write!(f, "need at least 2 sequences to split, got {len}")
            }
        }
    }
}

impl std::error::Error for DataError {}

// ── Frame ───────────────────────────────────────────────────────────

/// One image: unit-interval f32 intensities, interleaved row-major,
/// 1 (gray) or 3 (RGB) channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, DataError> {
        if channels != 1 && channels != 3 {
            return Err(DataError::BadChannelCount { channels });
        }
        if height == 0 || width == 0 {
            return Err(DataError::ZeroExtent);
        }
        if data.len() != height * width * channels {
            return Err(DataError::DataLength {
                expected: height * width * channels,
                got: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|v| !(0.0..=1.0).contains(*v) || !v.is_finite()) {
            return Err(DataError::OutOfRange { value: v });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
            .expect("zeros frame is valid")
    }

    /// Build from a per-pixel function; values are clamped into [0,1].
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, channels, data).expect("from_fn output is valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Frame {
        assert!(y0 + height <= self.height && x0 + width <= self.width, "crop out of bounds");
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in y0..y0 + height {
            let row = &self.data[(y * self.width + x0) * self.channels
                ..(y * self.width + x0 + width) * self.channels];
            data.extend_from_slice(row);
        }
        Frame {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    /// Pack into a `[1, channels, height, width]` tensor.
    pub fn to_chw<T: Scalar>(&self) -> Tensor<T> {
        let mut out = vec![T::zero(); self.data.len()];
        let hw = self.height * self.width;
        for (i, &v) in self.data.iter().enumerate() {
            let c = i % self.channels;
            let p = i / self.channels;
            out[c * hw + p] = T::from_f32(v).expect("f32 into scalar");
        }
        Tensor::new(vec![1, self.channels, self.height, self.width], out)
            .expect("chw tensor is consistent")
    }

    /// Unpack from one sample of a `[n, channels, height, width]` buffer,
    /// clamping into the unit interval.
    pub fn from_chw<T: Scalar>(
        data: &[T],
        channels: usize,
        height: usize,
        width: usize,
    ) -> Frame {
        let hw = height * width;
        let mut out = vec![0.0f32; hw * channels];
        for c in 0..channels {
            for p in 0..hw {
                let v = data[c * hw + p].to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
                out[p * channels + c] = v as f32;
            }
        }
        Frame::new(height, width, channels, out).expect("from_chw output is valid")
    }
}

// ── FrameSequence ───────────────────────────────────────────────────

/// Ordered frames of identical shape with a source identifier and optional
/// frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    source: String,
    fps: Option<f32>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, source: impl Into<String>, fps: Option<f32>) -> Result<Self, DataError> {
        let first = frames.first().ok_or(DataError::EmptySequence)?;
        let shape = first.shape();
        if frames.iter().any(|f| f.shape() != shape) {
            return Err(DataError::NonUniformShape);
        }
        Ok(Self {
            frames,
            source: source.into(),
            fps,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn fps(&self) -> Option<f32> {
        self.fps
    }

    /// Same metadata, different frames (shape may change, count may not be
    /// empty).
    pub fn with_frames(&self, frames: Vec<Frame>) -> Result<Self, DataError> {
        Self::new(frames, self.source.clone(), self.fps)
    }
}

// ── Quantization ────────────────────────────────────────────────────

/// Unit-interval value to 8-bit, round-half-away-from-zero.
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

// ── Single-frame file I/O ───────────────────────────────────────────

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write a frame as binary PPM (3 channels) or PGM (1 channel), maxval 255.
pub fn save_frame_pnm(frame: &Frame, path: &Path) -> Result<(), DataError> {
    let magic = if frame.channels == 3 { "P6" } else { "P5" };
    let mut out = Vec::with_capacity(frame.data.len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", frame.width, frame.height).expect("vec write");
    out.extend(frame.data.iter().map(|&v| quantize_u8(v)));
    fs::write(path, out).map_err(io_err(path))
}

/// Read a binary PPM/PGM frame. maxval <= 255 scales by 1/maxval; 16-bit
/// maxvals are big-endian per the PNM spec and scale by 1/maxval.
pub fn load_frame_pnm(path: &Path) -> Result<Frame, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 2 {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        _ => {
            return Err(DataError::BadMagic {
                path: path.to_path_buf(),
            })
        }
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        *field = parse_pnm_int(&bytes, &mut pos).ok_or_else(|| DataError::BadHeader {
            path: path.to_path_buf(),
            detail: "missing width/height/maxval".to_string(),
        })?;
    }
    // single whitespace byte after maxval
    pos += 1;
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if width == 0 || height == 0 {
        return Err(DataError::BadHeader {
            path: path.to_path_buf(),
            detail: "zero extent".to_string(),
        });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(DataError::UnsupportedMaxval {
            path: path.to_path_buf(),
            maxval,
        });
    }
    let count = width * height * channels;
    let scale = maxval as f32;
    let data: Vec<f32> = if maxval <= 255 {
        let pixels = bytes.get(pos..pos + count).ok_or_else(|| DataError::TruncatedPixels {
            path: path.to_path_buf(),
        })?;
        pixels.iter().map(|&b| f32::from(b) / scale).collect()
    } else {
        let pixels = bytes
            .get(pos..pos + 2 * count)
            .ok_or_else(|| DataError::TruncatedPixels {
                path: path.to_path_buf(),
            })?;
        pixels
            .chunks_exact(2)
            .map(|b| f32::from(u16::from_be_bytes([b[0], b[1]])) / scale)
            .collect()
    };
    Frame::new(height, width, channels, data)
}

fn parse_pnm_int(bytes: &[u8], pos: &mut usize) -> Option<u32> {
    // skip whitespace and '#' comment lines
    loop {
        match bytes.get(*pos)? {
            b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
            b'#' => {
                while *bytes.get(*pos)? != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

/// Write a frame by extension: `.ppm`/`.pgm` natively, `.png` via the
/// `image` crate.
pub fn save_frame(frame: &Frame, path: &Path) -> Result<(), DataError> {
    match extension(path) {
        Some("png") => save_frame_png(frame, path),
        _ => save_frame_pnm(frame, path),
    }
}

/// Read a frame by extension.
pub fn load_frame(path: &Path) -> Result<Frame, DataError> {
    match extension(path) {
        Some("png") => load_frame_png(path),
        _ => load_frame_pnm(path),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn save_frame_png(frame: &Frame, path: &Path) -> Result<(), DataError> {
    let quantized: Vec<u8> = frame.data.iter().map(|&v| quantize_u8(v)).collect();
    let (w, h) = (frame.width as u32, frame.height as u32);
    let result = if frame.channels == 3 {
        image::RgbImage::from_raw(w, h, quantized)
            .expect("buffer sized for image")
            .save(path)
    } else {
        image::GrayImage::from_raw(w, h, quantized)
            .expect("buffer sized for image")
            .save(path)
    };
    result.map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn load_frame_png(path: &Path) -> Result<Frame, DataError> {
    let img = image::open(path).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(g) => Frame::new(
            h,
            w,
            1,
            g.into_raw().iter().map(|&b| f32::from(b) / 255.0).collect(),
        ),
        image::DynamicImage::ImageLuma16(g) => Frame::new(
            h,
            w,
            1,
            g.into_raw().iter().map(|&b| f32::from(b) / 65535.0).collect(),
        ),
        image::DynamicImage::ImageRgb16(g) => Frame::new(
            h,
            w,
            3,
            g.into_raw().iter().map(|&b| f32::from(b) / 65535.0).collect(),
        ),
        other => Frame::new(
            h,
            w,
            3,
            other
                .into_rgb8()
                .into_raw()
                .iter()
                .map(|&b| f32::from(b) / 255.0)
                .collect(),
        ),
    }
}

// ── Sequence I/O ────────────────────────────────────────────────────

/// Default on-disk layout for sequences.
pub const DEFAULT_PATTERN: &str = "frame_%06d.ppm";

struct Pattern {
    prefix: String,
    digits: usize,
    suffix: String,
}

fn parse_pattern(pattern: &str) -> Result<Pattern, DataError> {
    let start = pattern.find("%0").ok_or_else(|| DataError::BadPattern {
        pattern: pattern.to_string(),
    })?;
    let rest = &pattern[start + 2..];
    let d_pos = rest.find('d').ok_or_else(|| DataError::BadPattern {
        pattern: pattern.to_string(),
    })?;
    let digits: usize = rest[..d_pos].parse().map_err(|_| DataError::BadPattern {
        pattern: pattern.to_string(),
    })?;
    if digits == 0 {
        return Err(DataError::BadPattern {
            pattern: pattern.to_string(),
        });
    }
    Ok(Pattern {
        prefix: pattern[..start].to_string(),
        digits,
        suffix: rest[d_pos + 1..].to_string(),
    })
}

impl Pattern {
    fn index_of(&self, file_name: &str) -> Option<u64> {
        let middle = file_name
            .strip_prefix(&self.prefix)?
            .strip_suffix(&self.suffix)?;
        if middle.len() != self.digits || !middle.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        middle.parse().ok()
    }

    fn file_name(&self, index: u64) -> String {
        format!("{}{:0width$}{}", self.prefix, index, self.suffix, width = self.digits)
    }
}

/// Load the frames matching a zero-padded numeric pattern (e.g.
/// `frame_%06d.ppm`), ordered by index. Gaps in the numbering and shape
/// changes across files are rejected.
pub fn load_sequence(dir: &Path, pattern: &str) -> Result<FrameSequence, DataError> {
    let pat = parse_pattern(pattern)?;
    let mut indexed: Vec<(u64, PathBuf)> = Vec::new();
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(index) = pat.index_of(name) {
            indexed.push((index, entry.path()));
        }
    }
    if indexed.is_empty() {
        return Err(DataError::NoFramesMatched {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    indexed.sort_by_key(|(i, _)| *i);
    let first_index = indexed[0].0;
    for (offset, (index, _)) in indexed.iter().enumerate() {
        let expected = first_index + offset as u64;
        if *index != expected {
            return Err(if *index == indexed[offset - 1].0 {
                DataError::DuplicateIndex {
                    dir: dir.to_path_buf(),
                    index: *index,
                }
            } else {
                DataError::NumberingGap {
                    dir: dir.to_path_buf(),
                    missing_index: expected,
                }
            });
        }
    }

    let mut frames = Vec::with_capacity(indexed.len());
    let mut shape: Option<(usize, usize, usize)> = None;
    for (_, path) in &indexed {
        let frame = load_frame(path)?;
        match shape {
            None => shape = Some(frame.shape()),
            Some(expected) if frame.shape() != expected => {
                return Err(DataError::ShapeMismatch {
                    path: path.clone(),
                    expected,
                    got: frame.shape(),
                });
            }
            Some(_) => {}
        }
        frames.push(frame);
    }
    let source = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("sequence")
        .to_string();
    FrameSequence::new(frames, source, None)
}

/// Write a sequence as `frame_%06d.ppm` files starting at index 0.
pub fn save_sequence(seq: &FrameSequence, dir: &Path) -> Result<(), DataError> {
    save_sequence_with_pattern(seq, dir, DEFAULT_PATTERN)
}

pub fn save_sequence_with_pattern(
    seq: &FrameSequence,
    dir: &Path,
    pattern: &str,
) -> Result<(), DataError> {
    let pat = parse_pattern(pattern)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, frame) in seq.frames().iter().enumerate() {
        save_frame(frame, &dir.join(pat.file_name(i as u64)))?;
    }
    Ok(())
}

// ── Patch extraction ────────────────────────────────────────────────

/// Spatially aligned stack of 5 consecutive frame patches.
#[derive(Clone, Debug)]
pub struct PatchStack {
    pub frames: Vec<Frame>,
    /// Index of the first frame of the window in the source sequence.
    pub t0: usize,
    pub y: usize,
    pub x: usize,
}

pub const WINDOW: usize = 5;

/// Cut aligned 5-frame patch stacks: one window per temporal offset
/// (stride frames apart), each at a seeded random spatial offset.
pub fn extract_patches(
    seq: &FrameSequence,
    patch_size: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<PatchStack>, DataError> {
    let (h, w, _) = seq.shape();
    if patch_size % 4 != 0 {
        return Err(DataError::PatchNotMultipleOf4 { patch_size });
    }
    if patch_size > h || patch_size > w {
        return Err(DataError::PatchTooLarge {
            patch_size,
            frame: (h, w),
        });
    }
    if stride == 0 {
        return Err(DataError::ZeroStride);
    }
    if seq.len() < WINDOW {
        return Err(DataError::SequenceTooShort {
            len: seq.len(),
            window: WINDOW,
        });
    }
    let mut rng = substream(seed, "patches", 0);
    let mut stacks = Vec::new();
    let mut t0 = 0;
    while t0 + WINDOW <= seq.len() {
        let y = if h == patch_size { 0 } else { rng.random_range(0..=h - patch_size) };
        let x = if w == patch_size { 0 } else { rng.random_range(0..=w - patch_size) };
        let frames = (t0..t0 + WINDOW)
            .map(|t| seq.frame(t).crop(y, x, patch_size, patch_size))
            .collect();
        stacks.push(PatchStack { frames, t0, y, x });
        t0 += stride;
    }
    Ok(stacks)
}

// ── Train/validation split ──────────────────────────────────────────

/// Sequence-granular split: deterministic under the seed, disjoint,
/// exhaustive, both sides nonempty.
pub fn split<T>(items: Vec<T>, val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), DataError> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
        return Err(DataError::BadValFraction { val_fraction });
    }
    let n = items.len();
    if n < 2 {
        return Err(DataError::TooFewSequences { len: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, "split", 0);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val_set: std::collections::BTreeSet<usize> = order[..n_val].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        if val_set.contains(&i) {
            val.push(item);
        } else {
            train.push(item);
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frame(h: usize, w: usize, c: usize) -> Frame {
        Frame::from_fn(h, w, c, |y, x, ch| {
            (y * 31 + x * 7 + ch * 13) as f32 % 256.0 / 255.0
        })
    }

    #[test]
    fn frame_rejects_out_of_range_values() {
        let err = Frame::new(1, 2, 1, vec![0.5, 1.5]).unwrap_err();
        assert!(matches!(err, DataError::OutOfRange { .. }));
    }

    #[test]
    fn frame_rejects_two_channels() {
        let err = Frame::new(1, 1, 2, vec![0.0, 0.0]).unwrap_err();
        assert!(matches!(err, DataError::BadChannelCount { channels: 2 }));
    }

    #[test]
    fn chw_round_trip() {
        let f = gradient_frame(4, 6, 3);
        let t = f.to_chw::<f32>();
        assert_eq!(t.shape(), &[1, 3, 4, 6]);
        let back = Frame::from_chw(t.data(), 3, 4, 6);
        assert_eq!(f, back);
    }

    #[test]
    fn pnm_round_trip_is_bit_exact_at_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        // Data already on the 8-bit lattice survives save/load exactly.
        let f = Frame::from_fn(5, 7, 3, |y, x, c| {
            ((y * 37 + x * 11 + c * 3) % 256) as f32 / 255.0
        });
        let path = dir.path().join("f.ppm");
        save_frame(&f, &path).unwrap();
        let back = load_frame(&path).unwrap();
        assert_eq!(f.data(), back.data());
    }

    #[test]
    fn pgm_handles_gray() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(3, 3, 1, |y, x, _| ((y * 3 + x) * 20) as f32 / 255.0);
        let path = dir.path().join("f.pgm");
        save_frame(&f, &path).unwrap();
        let back = load_frame(&path).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(f.data(), back.data());
    }

    #[test]
    fn pnm_16_bit_scales_by_65535() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&65535u16.to_be_bytes());
        bytes.extend_from_slice(&32768u16.to_be_bytes());
        fs::write(&path, bytes).unwrap();
        let f = load_frame(&path).unwrap();
        assert_eq!(f.data()[0], 1.0);
        assert!((f.data()[1] - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn pnm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let mut bytes = b"P5\n# made by hand\n2 2\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 64]);
        fs::write(&path, bytes).unwrap();
        let f = load_frame(&path).unwrap();
        assert_eq!(f.shape(), (2, 2, 1));
        assert_eq!(f.data()[2], 1.0);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(4, 4, 3, |y, x, c| ((y + x + c) % 2) as f32);
        let path = dir.path().join("f.png");
        save_frame(&f, &path).unwrap();
        let back = load_frame(&path).unwrap();
        assert_eq!(f.data(), back.data());
    }

    #[test]
    fn sequence_round_trip_and_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..7)
            .map(|i| Frame::from_fn(4, 4, 1, |y, x, _| ((i * 16 + y * 4 + x) % 256) as f32 / 255.0))
            .collect();
        let seq = FrameSequence::new(frames, "seq", Some(10.0)).unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let back = load_sequence(dir.path(), DEFAULT_PATTERN).unwrap();
        assert_eq!(back.len(), 7);
        for (a, b) in seq.frames().iter().zip(back.frames()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn sequence_rejects_numbering_gap() {
        let dir = tempfile::tempdir().unwrap();
        let f = gradient_frame(4, 4, 1);
        save_frame(&f, &dir.path().join("frame_000000.ppm")).unwrap();
        save_frame(&f, &dir.path().join("frame_000002.ppm")).unwrap();
        let err = load_sequence(dir.path(), DEFAULT_PATTERN).unwrap_err();
        assert!(matches!(err, DataError::NumberingGap { missing_index: 1, .. }));
    }

    #[test]
    fn sequence_rejects_shape_change_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        save_frame(&gradient_frame(4, 4, 1), &dir.path().join("frame_000000.ppm")).unwrap();
        save_frame(&gradient_frame(5, 4, 1), &dir.path().join("frame_000001.ppm")).unwrap();
        let err = load_sequence(dir.path(), DEFAULT_PATTERN).unwrap_err();
        match err {
            DataError::ShapeMismatch { path, .. } => {
                assert!(path.to_string_lossy().contains("frame_000001.ppm"));
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn sequence_accepts_nonzero_start_index() {
        let dir = tempfile::tempdir().unwrap();
        let f = gradient_frame(4, 4, 1);
        for i in 3..6 {
            save_frame(&f, &dir.path().join(format!("frame_{i:06}.ppm"))).unwrap();
        }
        let seq = load_sequence(dir.path(), DEFAULT_PATTERN).unwrap();
        assert_eq!(seq.len(), 3);
    }

    #[test]
    fn png_pattern_loads_in_index_order() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..5u8 {
            let f = Frame::from_fn(4, 4, 1, |_, _, _| f32::from(i) / 255.0);
            save_frame(&f, &dir.path().join(format!("{i:03}.png"))).unwrap();
        }
        let seq = load_sequence(dir.path(), "%03d.png").unwrap();
        assert_eq!(seq.len(), 5);
        for (i, frame) in seq.frames().iter().enumerate() {
            assert_eq!(frame.data()[0], i as f32 / 255.0);
        }
    }

    #[test]
    fn patches_cover_full_frame_when_sized_to_it() {
        let frames: Vec<Frame> = (0..6).map(|_| gradient_frame(8, 8, 1)).collect();
        let seq = FrameSequence::new(frames, "s", None).unwrap();
        let stacks = extract_patches(&seq, 8, 1, 42).unwrap();
        assert_eq!(stacks.len(), 2); // t0 = 0, 1
        for s in &stacks {
            assert_eq!((s.y, s.x), (0, 0));
            assert_eq!(s.frames.len(), 5);
            assert_eq!(s.frames[0].shape(), (8, 8, 1));
        }
    }

    #[test]
    fn patches_stay_in_bounds_and_are_deterministic() {
        let frames: Vec<Frame> = (0..9).map(|_| gradient_frame(16, 12, 1)).collect();
        let seq = FrameSequence::new(frames, "s", None).unwrap();
        let a = extract_patches(&seq, 8, 2, 7).unwrap();
        let b = extract_patches(&seq, 8, 2, 7).unwrap();
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!((pa.t0, pa.y, pa.x), (pb.t0, pb.y, pb.x));
            assert!(pa.y + 8 <= 16 && pa.x + 8 <= 12);
        }
        let c = extract_patches(&seq, 8, 2, 8).unwrap();
        assert!(
            a.iter().zip(&c).any(|(p, q)| (p.y, p.x) != (q.y, q.x)),
            "different seeds should move at least one patch"
        );
    }

    #[test]
    fn patches_preserve_temporal_alignment() {
        let frames: Vec<Frame> = (0..5)
            .map(|i| Frame::from_fn(8, 8, 1, |_, _, _| i as f32 / 10.0))
            .collect();
        let seq = FrameSequence::new(frames, "s", None).unwrap();
        let stacks = extract_patches(&seq, 4, 1, 1).unwrap();
        for (k, f) in stacks[0].frames.iter().enumerate() {
            assert_eq!(f.data()[0], k as f32 / 10.0);
        }
    }

    #[test]
    fn patch_larger_than_frame_is_rejected() {
        let frames: Vec<Frame> = (0..5).map(|_| gradient_frame(8, 8, 1)).collect();
        let seq = FrameSequence::new(frames, "s", None).unwrap();
        let err = extract_patches(&seq, 12, 1, 0).unwrap_err();
        assert!(matches!(err, DataError::PatchTooLarge { .. }));
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let items: Vec<usize> = (0..10).collect();
        let (train, val) = split(items.clone(), 0.3, 5).unwrap();
        assert_eq!(train.len() + val.len(), 10);
        let mut all: Vec<usize> = train.iter().chain(val.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(val.len(), 3);

        let (train2, val2) = split(items.clone(), 0.3, 5).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);
    }

    #[test]
    fn split_keeps_both_sides_nonempty() {
        let (train, val) = split(vec![1, 2], 0.05, 0).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(val.len(), 1);
    }

    #[test]
    fn quantization_rounds_half_away_from_zero() {
        assert_eq!(quantize_u8(0.5 / 255.0), 1);
        assert_eq!(quantize_u8(1.49 / 255.0), 1);
        assert_eq!(quantize_u8(1.5 / 255.0), 2);
    }
}
