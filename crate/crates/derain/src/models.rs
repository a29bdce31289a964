//! The two denoising networks.
//!
//! The spatial denoiser is a 3-scale UNet that cleans one frame at a time.
//! The temporal denoiser is a two-block cascade over 5-frame windows: a
//! shared first block runs on the three overlapping frame triplets, and a
//! second block fuses the three intermediate estimates into the output
//! frame. Both predict the clean frame directly (input skip + correction,
//! saturated into [0,1]) rather than a noise layer, and no optical flow is
//! estimated anywhere.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::dataset::{DataError, Frame, FrameSequence};
use crate::rng::substream;
use crate::tensor::{
    load_weights, save_weights, Graph, ModelWeights, Scalar, Tensor, TensorError, Var,
    WeightsIoError,
};

/// Frames each temporal window consumes.
pub const WINDOW: usize = 5;

/// Desk-scale default width of the first UNet stage.
pub const DEFAULT_BASE_CHANNELS: usize = 16;

const LEAKY_SLOPE: f64 = 0.1;

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum ModelError {
    NotDivisibleBy4 { height: usize, width: usize },
    WrongChannelCount { expected: usize, got: usize },
    WindowLength { got: usize },
    WindowShapesDiffer,
    MissingWeight { name: String },
    WeightShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    BadMeta { name: String },
    WrongKind { expected: &'static str, found: f64 },
    Tensor(TensorError),
    Data(DataError),
    Io(WeightsIoError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotDivisibleBy4 { height, width } => write!(
                f,
                "spatial extents {height}x{width} must be divisible by 4 (two pooling levels)"
            ),
            Self::WrongChannelCount { expected, got } => {
                write!(f, "network built for {expected} channels, input has {got}")
            }
            Self::WindowLength { got } => {
                write!(f, "temporal window must hold exactly {WINDOW} frames, got {got}")
            }
            Self::WindowShapesDiffer => write!(f, "window frames must share one shape"),
            Self::MissingWeight { name } => write!(f, "weights are missing tensor `{name}`"),
            Self::WeightShape { name, expected, got } => {
                write!(f, "weight `{name}` has shape {got:?}, expected {expected:?}")
            }
            Self::BadMeta { name } => write!(f, "weights are missing header scalar `{name}`"),
            Self::WrongKind { expected, found } => {
                write!(f, "weights describe model kind {found}, expected {expected}")
            }
            Self::Tensor(e) => write!(f, "{e}"),
            Self::Data(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

impl From<DataError> for ModelError {
    fn from(e: DataError) -> Self {
        Self::Data(e)
    }
}

impl From<WeightsIoError> for ModelError {
    fn from(e: WeightsIoError) -> Self {
        Self::Io(e)
    }
}

// ── Conv layer tables ───────────────────────────────────────────────

struct ConvSpec {
    name: &'static str,
    cin: usize,
    cout: usize,
    /// Output heads start near zero so a fresh network is close to the
    /// identity mapping.
    is_head: bool,
}

fn spatial_specs(channels: usize, base: usize) -> Vec<ConvSpec> {
    let b = base;
    vec![
        ConvSpec { name: "enc1a", cin: channels, cout: b, is_head: false },
        ConvSpec { name: "enc1b", cin: b, cout: b, is_head: false },
        ConvSpec { name: "enc2a", cin: b, cout: 2 * b, is_head: false },
        ConvSpec { name: "enc2b", cin: 2 * b, cout: 2 * b, is_head: false },
        ConvSpec { name: "bot_a", cin: 2 * b, cout: 4 * b, is_head: false },
        ConvSpec { name: "bot_b", cin: 4 * b, cout: 4 * b, is_head: false },
        ConvSpec { name: "dec2a", cin: 6 * b, cout: 2 * b, is_head: false },
        ConvSpec { name: "dec2b", cin: 2 * b, cout: 2 * b, is_head: false },
        ConvSpec { name: "dec1a", cin: 3 * b, cout: b, is_head: false },
        ConvSpec { name: "dec1b", cin: b, cout: b, is_head: false },
        ConvSpec { name: "head", cin: b, cout: channels, is_head: true },
    ]
}

/// One temporal denoise block: a 2-scale UNet over a 3-frame concat.
fn block_specs(channels: usize, base: usize) -> Vec<ConvSpec> {
    let b = base;
    vec![
        ConvSpec { name: "enc1a", cin: 3 * channels, cout: b, is_head: false },
        ConvSpec { name: "enc1b", cin: b, cout: b, is_head: false },
        ConvSpec { name: "enc2a", cin: b, cout: 2 * b, is_head: false },
        ConvSpec { name: "enc2b", cin: 2 * b, cout: 2 * b, is_head: false },
        ConvSpec { name: "dec1a", cin: 3 * b, cout: b, is_head: false },
        ConvSpec { name: "dec1b", cin: b, cout: b, is_head: false },
        ConvSpec { name: "head", cin: b, cout: channels, is_head: true },
    ]
}

fn init_weights<T: Scalar>(
    specs: &[ConvSpec],
    prefix: &str,
    seed: u64,
) -> ModelWeights<T> {
    let mut weights = ModelWeights::new();
    for (i, spec) in specs.iter().enumerate() {
        let fan_in = spec.cin * 9;
        let mut std = (2.0 / fan_in as f64).sqrt();
        if spec.is_head {
            std *= 0.1;
        }
        let normal = Normal::new(0.0, std).expect("std is positive and finite");
        let mut rng = substream(seed, "init", i as u64);
        let data: Vec<T> = (0..spec.cout * spec.cin * 9)
            .map(|_| T::from_f64(normal.sample(&mut rng)).expect("finite sample"))
            .collect();
        let w = Tensor::new(vec![spec.cout, spec.cin, 3, 3], data).expect("consistent shape");
        weights
            .push(format!("{prefix}{}.weight", spec.name), w)
            .expect("unique layer names");
        weights
            .push(format!("{prefix}{}.bias", spec.name), Tensor::zeros(vec![spec.cout]))
            .expect("unique layer names");
    }
    weights
}

fn validate_weights<T: Scalar>(
    weights: &ModelWeights<T>,
    specs: &[ConvSpec],
    prefix: &str,
) -> Result<(), ModelError> {
    for spec in specs {
        for (suffix, expected) in [
            ("weight", vec![spec.cout, spec.cin, 3, 3]),
            ("bias", vec![spec.cout]),
        ] {
            let name = format!("{prefix}{}.{suffix}", spec.name);
            let tensor = weights
                .get(&name)
                .ok_or(ModelError::MissingWeight { name: name.clone() })?;
            if tensor.shape() != expected.as_slice() {
                return Err(ModelError::WeightShape {
                    name,
                    expected,
                    got: tensor.shape().to_vec(),
                });
            }
        }
    }
    Ok(())
}

// ── Bound networks (weights materialized on a graph) ────────────────

/// Conv-layer handles on a graph, plus the name map the optimizer needs.
pub struct BoundNet {
    convs: BTreeMap<String, (Var, Var)>,
    prefix: String,
}

impl BoundNet {
    fn bind<T: Scalar>(
        g: &mut Graph<T>,
        weights: &ModelWeights<T>,
        specs: &[ConvSpec],
        prefix: &str,
        trainable: bool,
    ) -> Self {
        let mut convs = BTreeMap::new();
        for spec in specs {
            let wname = format!("{prefix}{}.weight", spec.name);
            let bname = format!("{prefix}{}.bias", spec.name);
            let mut w = weights.get(&wname).expect("validated").clone();
            let mut b = weights.get(&bname).expect("validated").clone();
            w.set_requires_grad(trainable);
            b.set_requires_grad(trainable);
            convs.insert(spec.name.to_string(), (g.leaf(w), g.leaf(b)));
        }
        Self {
            convs,
            prefix: prefix.to_string(),
        }
    }

    fn conv<T: Scalar>(&self, g: &mut Graph<T>, name: &str, x: Var) -> Result<Var, TensorError> {
        let &(w, b) = self.convs.get(name).expect("layer name from the spec table");
        g.conv2d(x, w, b, 1, 1)
    }

    /// Collect dLoss/dWeight for every layer, keyed by the full name.
    pub fn gradients<T: Scalar>(&self, g: &Graph<T>) -> Result<BTreeMap<String, Vec<T>>, TensorError> {
        let mut out = BTreeMap::new();
        for (name, &(w, b)) in &self.convs {
            let gw = g.grad(w).ok_or_else(|| TensorError::MissingGradient {
                name: format!("{}{name}.weight", self.prefix),
            })?;
            let gb = g.grad(b).ok_or_else(|| TensorError::MissingGradient {
                name: format!("{}{name}.bias", self.prefix),
            })?;
            out.insert(format!("{}{name}.weight", self.prefix), gw.to_vec());
            out.insert(format!("{}{name}.bias", self.prefix), gb.to_vec());
        }
        Ok(out)
    }
}

// ── Spatial denoiser ────────────────────────────────────────────────

/// Per-frame UNet denoiser: 3 scales, `base_channels` wide at full
/// resolution, residual head saturated into [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialDenoiser<T: Scalar> {
    channels: usize,
    base_channels: usize,
    weights: ModelWeights<T>,
}

impl<T: Scalar> SpatialDenoiser<T> {
    pub fn init(channels: usize, base_channels: usize, seed: u64) -> Self {
        let weights = init_weights(&spatial_specs(channels, base_channels), "", seed);
        Self {
            channels,
            base_channels,
            weights,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ModelWeights<T> {
        &mut self.weights
    }

    pub fn from_weights(
        channels: usize,
        base_channels: usize,
        weights: ModelWeights<T>,
    ) -> Result<Self, ModelError> {
        validate_weights(&weights, &spatial_specs(channels, base_channels), "")?;
        Ok(Self {
            channels,
            base_channels,
            weights,
        })
    }

    pub fn cast<U: Scalar>(&self) -> SpatialDenoiser<U> {
        SpatialDenoiser {
            channels: self.channels,
            base_channels: self.base_channels,
            weights: self.weights.cast(),
        }
    }

    /// Materialize the weights on a graph.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundSpatial {
        BoundSpatial {
            net: BoundNet::bind(
                g,
                &self.weights,
                &spatial_specs(self.channels, self.base_channels),
                "",
                trainable,
            ),
            channels: self.channels,
        }
    }

    /// Run one frame through the network (inference).
    pub fn forward_frame(&self, frame: &Frame) -> Result<Frame, ModelError> {
        let mut g = Graph::new();
        let x = g.leaf(frame.to_chw());
        let bound = self.bind(&mut g, false);
        let y = bound.forward(&mut g, x)?;
        let (h, w, c) = frame.shape();
        Ok(Frame::from_chw(g.data(y), c, h, w))
    }

    /// Apply the network to every frame independently.
    pub fn map_sequence(&self, seq: &FrameSequence) -> Result<FrameSequence, ModelError> {
        let frames = seq
            .frames()
            .iter()
            .map(|f| self.forward_frame(f))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(seq.with_frames(frames)?)
    }
}

pub struct BoundSpatial {
    net: BoundNet,
    channels: usize,
}

impl BoundSpatial {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var, ModelError> {
        check_input(g, x, self.channels)?;
        let n = &self.net;
        let a = n.conv(g, "enc1a", x)?;
        let a = g.relu(a)?;
        let a = n.conv(g, "enc1b", a)?;
        let s1 = g.relu(a)?;

        let p1 = g.max_pool2(s1)?;
        let a = n.conv(g, "enc2a", p1)?;
        let a = g.relu(a)?;
        let a = n.conv(g, "enc2b", a)?;
        let s2 = g.relu(a)?;

        let p2 = g.max_pool2(s2)?;
        let a = n.conv(g, "bot_a", p2)?;
        let a = g.relu(a)?;
        let a = n.conv(g, "bot_b", a)?;
        let bot = g.relu(a)?;

        let u2 = g.upsample2(bot)?;
        let cat2 = g.concat_channels(&[u2, s2])?;
        let a = n.conv(g, "dec2a", cat2)?;
        let a = g.relu(a)?;
        let a = n.conv(g, "dec2b", a)?;
        let d2 = g.relu(a)?;

        let u1 = g.upsample2(d2)?;
        let cat1 = g.concat_channels(&[u1, s1])?;
        let a = n.conv(g, "dec1a", cat1)?;
        let a = g.relu(a)?;
        let a = n.conv(g, "dec1b", a)?;
        let d1 = g.relu(a)?;

        let delta = n.conv(g, "head", d1)?;
        let sum = g.add(x, delta)?;
        Ok(g.clamp01(sum)?)
    }

    pub fn gradients<T: Scalar>(&self, g: &Graph<T>) -> Result<BTreeMap<String, Vec<T>>, TensorError> {
        self.net.gradients(g)
    }
}

// ── Temporal denoiser ───────────────────────────────────────────────

/// Two-block cascade over 5-frame windows: `block1` (shared weights) maps
/// the triplets (f1 f2 f3), (f2 f3 f4), (f3 f4 f5) to three intermediate
/// frames, `block2` fuses those into the estimate for the central frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalDenoiser<T: Scalar> {
    channels: usize,
    base_channels: usize,
    weights: ModelWeights<T>,
}

impl<T: Scalar> TemporalDenoiser<T> {
    pub fn init(channels: usize, base_channels: usize, seed: u64) -> Self {
        let mut weights = init_weights::<T>(&block_specs(channels, base_channels), "block1.", seed);
        let block2 = init_weights::<T>(&block_specs(channels, base_channels), "block2.", seed ^ 0x9e37_79b9);
        for (name, tensor) in block2.iter() {
            weights.push(name, tensor.clone()).expect("distinct prefixes");
        }
        Self {
            channels,
            base_channels,
            weights,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn weights(&self) -> &ModelWeights<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ModelWeights<T> {
        &mut self.weights
    }

    pub fn from_weights(
        channels: usize,
        base_channels: usize,
        weights: ModelWeights<T>,
    ) -> Result<Self, ModelError> {
        let specs = block_specs(channels, base_channels);
        validate_weights(&weights, &specs, "block1.")?;
        validate_weights(&weights, &specs, "block2.")?;
        Ok(Self {
            channels,
            base_channels,
            weights,
        })
    }

    pub fn cast<U: Scalar>(&self) -> TemporalDenoiser<U> {
        TemporalDenoiser {
            channels: self.channels,
            base_channels: self.base_channels,
            weights: self.weights.cast(),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundTemporal {
        let specs = block_specs(self.channels, self.base_channels);
        BoundTemporal {
            block1: BoundNet::bind(g, &self.weights, &specs, "block1.", trainable),
            block2: BoundNet::bind(g, &self.weights, &specs, "block2.", trainable),
            channels: self.channels,
        }
    }

    /// Reconstruct the central frame of a 5-frame window (inference).
    pub fn forward_window(&self, window: &[Frame]) -> Result<Frame, ModelError> {
        if window.len() != WINDOW {
            return Err(ModelError::WindowLength { got: window.len() });
        }
        let shape = window[0].shape();
        if window.iter().any(|f| f.shape() != shape) {
            return Err(ModelError::WindowShapesDiffer);
        }
        let mut g = Graph::new();
        let vars: Vec<Var> = window.iter().map(|f| g.leaf(f.to_chw())).collect();
        let bound = self.bind(&mut g, false);
        let y = bound.forward(&mut g, &vars)?;
        let (h, w, c) = shape;
        Ok(Frame::from_chw(g.data(y), c, h, w))
    }
}

pub struct BoundTemporal {
    block1: BoundNet,
    block2: BoundNet,
    channels: usize,
}

impl BoundTemporal {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, window: &[Var]) -> Result<Var, ModelError> {
        if window.len() != WINDOW {
            return Err(ModelError::WindowLength { got: window.len() });
        }
        for &v in window {
            check_input(g, v, self.channels)?;
        }
        let g1 = block_forward(g, &self.block1, window[0], window[1], window[2])?;
        let g2 = block_forward(g, &self.block1, window[1], window[2], window[3])?;
        let g3 = block_forward(g, &self.block1, window[2], window[3], window[4])?;
        block_forward(g, &self.block2, g1, g2, g3)
    }

    pub fn gradients<T: Scalar>(&self, g: &Graph<T>) -> Result<BTreeMap<String, Vec<T>>, TensorError> {
        let mut out = self.block1.gradients(g)?;
        out.append(&mut self.block2.gradients(g)?);
        Ok(out)
    }
}

fn block_forward<T: Scalar>(
    g: &mut Graph<T>,
    net: &BoundNet,
    prev: Var,
    mid: Var,
    next: Var,
) -> Result<Var, ModelError> {
    let slope = T::from_f64(LEAKY_SLOPE).expect("constant");
    let x = g.concat_channels(&[prev, mid, next])?;
    let a = net.conv(g, "enc1a", x)?;
    let a = g.leaky_relu(a, slope)?;
    let a = net.conv(g, "enc1b", a)?;
    let s1 = g.leaky_relu(a, slope)?;

    let p = g.max_pool2(s1)?;
    let a = net.conv(g, "enc2a", p)?;
    let a = g.leaky_relu(a, slope)?;
    let a = net.conv(g, "enc2b", a)?;
    let bot = g.leaky_relu(a, slope)?;

    let u = g.upsample2(bot)?;
    let cat = g.concat_channels(&[u, s1])?;
    let a = net.conv(g, "dec1a", cat)?;
    let a = g.leaky_relu(a, slope)?;
    let a = net.conv(g, "dec1b", a)?;
    let d = g.leaky_relu(a, slope)?;

    let delta = net.conv(g, "head", d)?;
    let sum = g.add(mid, delta)?;
    Ok(g.clamp01(sum)?)
}

fn check_input<T: Scalar>(g: &Graph<T>, x: Var, channels: usize) -> Result<(), ModelError> {
    let shape = g.value(x).shape();
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    if c != channels {
        return Err(ModelError::WrongChannelCount {
            expected: channels,
            got: c,
        });
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(ModelError::NotDivisibleBy4 { height: h, width: w });
    }
    Ok(())
}

// ── Whole-pipeline inference ────────────────────────────────────────

/// Instrumentation for the caching contract: the spatial network runs once
/// per input frame, never once per window position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DerainStats {
    pub spatial_forwards: usize,
    pub temporal_forwards: usize,
}

/// Spatial stage only (the ablation mode).
pub fn derain_sequence_spatial<T: Scalar>(
    spatial: &SpatialDenoiser<T>,
    seq: &FrameSequence,
) -> Result<(FrameSequence, DerainStats), ModelError> {
    let out = spatial.map_sequence(seq)?;
    let stats = DerainStats {
        spatial_forwards: seq.len(),
        temporal_forwards: 0,
    };
    Ok((out, stats))
}

/// Full pipeline: the spatial network cleans each frame once, then the
/// temporal cascade reconstructs each frame from the 5-frame window
/// centered on it. Boundary windows replicate the edge frames, so the
/// output length equals the input length.
pub fn derain_sequence<T: Scalar>(
    spatial: &SpatialDenoiser<T>,
    temporal: &TemporalDenoiser<T>,
    seq: &FrameSequence,
) -> Result<(FrameSequence, DerainStats), ModelError> {
    let spatial_out = spatial.map_sequence(seq)?;
    let len = seq.len();
    let k = (WINDOW - 1) / 2;
    let mut frames = Vec::with_capacity(len);
    for n in 0..len {
        let window: Vec<Frame> = (0..WINDOW)
            .map(|j| {
                let idx = (n + j).saturating_sub(k).min(len - 1);
                spatial_out.frame(idx).clone()
            })
            .collect();
        frames.push(temporal.forward_window(&window)?);
    }
    let stats = DerainStats {
        spatial_forwards: len,
        temporal_forwards: len,
    };
    Ok((seq.with_frames(frames)?, stats))
}

// ── Weights files ───────────────────────────────────────────────────

const KIND_SPATIAL: f64 = 1.0;
const KIND_TEMPORAL: f64 = 2.0;

/// Extra header scalars recorded alongside weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct CheckpointMeta {
    pub stage: f64,
    pub epoch: f64,
}

fn meta_weights(
    kind: f64,
    channels: usize,
    base_channels: usize,
    meta: &CheckpointMeta,
) -> ModelWeights<f32> {
    let mut w = ModelWeights::new();
    w.push_scalar("meta.kind", kind).expect("fresh collection");
    w.push_scalar("meta.channels", channels as f64).expect("fresh collection");
    w.push_scalar("meta.base_channels", base_channels as f64)
        .expect("fresh collection");
    w.push_scalar("meta.stage", meta.stage).expect("fresh collection");
    w.push_scalar("meta.epoch", meta.epoch).expect("fresh collection");
    w
}

fn read_dims(weights: &ModelWeights<f32>, expected_kind: f64, kind_name: &'static str) -> Result<(usize, usize), ModelError> {
    let kind = weights
        .scalar_value("meta.kind")
        .ok_or(ModelError::BadMeta { name: "meta.kind".to_string() })?;
    if kind != expected_kind {
        return Err(ModelError::WrongKind {
            expected: kind_name,
            found: kind,
        });
    }
    let channels = weights
        .scalar_value("meta.channels")
        .ok_or(ModelError::BadMeta { name: "meta.channels".to_string() })? as usize;
    let base = weights
        .scalar_value("meta.base_channels")
        .ok_or(ModelError::BadMeta { name: "meta.base_channels".to_string() })?
        as usize;
    Ok((channels, base))
}

impl SpatialDenoiser<f32> {
    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<(), ModelError> {
        let mut file = meta_weights(KIND_SPATIAL, self.channels, self.base_channels, meta);
        for (name, tensor) in self.weights.iter() {
            file.push(name, tensor.clone())?;
        }
        save_weights(&file, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = load_weights(path)?;
        let (channels, base) = read_dims(&file, KIND_SPATIAL, "spatial")?;
        let weights = without_meta(&file);
        Self::from_weights(channels, base, weights)
    }
}

impl TemporalDenoiser<f32> {
    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<(), ModelError> {
        let mut file = meta_weights(KIND_TEMPORAL, self.channels, self.base_channels, meta);
        for (name, tensor) in self.weights.iter() {
            file.push(name, tensor.clone())?;
        }
        save_weights(&file, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = load_weights(path)?;
        let (channels, base) = read_dims(&file, KIND_TEMPORAL, "temporal")?;
        let weights = without_meta(&file);
        Self::from_weights(channels, base, weights)
    }
}

fn without_meta(file: &ModelWeights<f32>) -> ModelWeights<f32> {
    let mut out = ModelWeights::new();
    for (name, tensor) in file.iter() {
        if !name.starts_with("meta.") {
            out.push(name, tensor.clone()).expect("names unique in source");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_frame(h: usize, w: usize, c: usize, salt: u32) -> Frame {
        Frame::from_fn(h, w, c, |y, x, ch| {
            let v = (y as u32)
                .wrapping_mul(53)
                .wrapping_add((x as u32).wrapping_mul(19))
                .wrapping_add((ch as u32).wrapping_mul(11))
                .wrapping_add(salt.wrapping_mul(101));
            0.05 + 0.9 * ((v % 199) as f32 / 198.0)
        })
    }

    #[test]
    fn spatial_preserves_shape_and_range_at_init() {
        for &c in &[1usize, 3] {
            let net = SpatialDenoiser::<f32>::init(c, 8, 1);
            let f = test_frame(16, 24, c, 0);
            let out = net.forward_frame(&f).unwrap();
            assert_eq!(out.shape(), f.shape());
            assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn spatial_rejects_indivisible_extents_with_message() {
        let net = SpatialDenoiser::<f32>::init(1, 8, 1);
        let f = test_frame(18, 16, 1, 0);
        let err = net.forward_frame(&f).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"), "{err}");
    }

    #[test]
    fn spatial_rejects_wrong_channel_count() {
        let net = SpatialDenoiser::<f32>::init(3, 8, 1);
        let f = test_frame(16, 16, 1, 0);
        assert!(matches!(
            net.forward_frame(&f),
            Err(ModelError::WrongChannelCount { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn spatial_init_is_deterministic() {
        let a = SpatialDenoiser::<f32>::init(1, 8, 42);
        let b = SpatialDenoiser::<f32>::init(1, 8, 42);
        assert_eq!(a, b);
        let c = SpatialDenoiser::<f32>::init(1, 8, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn spatial_is_per_frame_local() {
        let net = SpatialDenoiser::<f32>::init(1, 8, 5);
        let frames: Vec<Frame> = (0..3).map(|i| test_frame(16, 16, 1, i)).collect();
        let seq = FrameSequence::new(frames.clone(), "s", None).unwrap();
        let out_full = net.map_sequence(&seq).unwrap();
        // perturb frame 2; outputs 0 and 1 must not move
        let mut perturbed = frames;
        perturbed[2] = test_frame(16, 16, 1, 99);
        let seq2 = FrameSequence::new(perturbed, "s", None).unwrap();
        let out_pert = net.map_sequence(&seq2).unwrap();
        assert_eq!(out_full.frame(0).data(), out_pert.frame(0).data());
        assert_eq!(out_full.frame(1).data(), out_pert.frame(1).data());
        assert_ne!(out_full.frame(2).data(), out_pert.frame(2).data());
    }

    #[test]
    fn temporal_window_contract() {
        let net = TemporalDenoiser::<f32>::init(1, 8, 2);
        let frames: Vec<Frame> = (0..4).map(|i| test_frame(16, 16, 1, i)).collect();
        let err = net.forward_window(&frames).unwrap_err();
        assert!(matches!(err, ModelError::WindowLength { got: 4 }));

        let frames: Vec<Frame> = (0..5).map(|i| test_frame(16, 16, 1, i)).collect();
        let out = net.forward_window(&frames).unwrap();
        assert_eq!(out.shape(), frames[0].shape());
        assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn temporal_order_matters() {
        let net = TemporalDenoiser::<f32>::init(1, 8, 7);
        let frames: Vec<Frame> = (0..5).map(|i| test_frame(16, 16, 1, i)).collect();
        let forward = net.forward_window(&frames).unwrap();

        // swap the two non-adjacent outer frames
        let mut swapped = frames.clone();
        swapped.swap(0, 4);
        let out_swapped = net.forward_window(&swapped).unwrap();
        assert_ne!(forward.data(), out_swapped.data());

        // full time reversal also lands elsewhere with asymmetric weights
        let mut reversed = frames;
        reversed.reverse();
        let out_reversed = net.forward_window(&reversed).unwrap();
        assert_ne!(forward.data(), out_reversed.data());
    }

    #[test]
    fn derain_handles_single_frame_sequence_by_replication() {
        let spatial = SpatialDenoiser::<f32>::init(1, 8, 1);
        let temporal = TemporalDenoiser::<f32>::init(1, 8, 2);
        let seq = FrameSequence::new(vec![test_frame(16, 16, 1, 3)], "s", None).unwrap();
        let (out, stats) = derain_sequence(&spatial, &temporal, &seq).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(stats.spatial_forwards, 1);
        assert_eq!(stats.temporal_forwards, 1);
    }

    #[test]
    fn derain_output_n_depends_only_on_its_window() {
        let spatial = SpatialDenoiser::<f32>::init(1, 6, 1);
        let temporal = TemporalDenoiser::<f32>::init(1, 6, 2);
        let frames: Vec<Frame> = (0..7).map(|i| test_frame(16, 16, 1, i)).collect();
        let seq = FrameSequence::new(frames.clone(), "s", None).unwrap();
        let (out, stats) = derain_sequence(&spatial, &temporal, &seq).unwrap();
        assert_eq!(out.len(), 7);
        assert_eq!(stats.spatial_forwards, 7);

        // output 2 (0-based) sees frames 0..=4 only: perturbing frame 5
        // must not change it
        let mut perturbed = frames;
        perturbed[5] = test_frame(16, 16, 1, 77);
        let seq2 = FrameSequence::new(perturbed, "s", None).unwrap();
        let (out2, _) = derain_sequence(&spatial, &temporal, &seq2).unwrap();
        assert_eq!(out.frame(2).data(), out2.frame(2).data());
        assert_ne!(out.frame(5).data(), out2.frame(5).data());
    }

    #[test]
    fn weight_round_trip_preserves_forward_bits() {
        let dir = tempfile::tempdir().unwrap();
        let net = SpatialDenoiser::<f32>::init(3, 8, 9);
        let f = test_frame(16, 16, 3, 4);
        let before = net.forward_frame(&f).unwrap();
        let path = dir.path().join("spatial.drlw");
        net.save(&path, &CheckpointMeta { stage: 1.0, epoch: 5.0 }).unwrap();
        let loaded = SpatialDenoiser::<f32>::load(&path).unwrap();
        let after = loaded.forward_frame(&f).unwrap();
        let bits = |fr: &Frame| fr.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&before), bits(&after));
    }

    #[test]
    fn temporal_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let net = TemporalDenoiser::<f32>::init(1, 8, 11);
        let path = dir.path().join("temporal.drlw");
        net.save(&path, &CheckpointMeta::default()).unwrap();
        let loaded = TemporalDenoiser::<f32>::load(&path).unwrap();
        assert_eq!(net.weights(), loaded.weights());
        // loading it as a spatial model must fail on the kind scalar
        assert!(matches!(
            SpatialDenoiser::<f32>::load(&path),
            Err(ModelError::WrongKind { .. })
        ));
    }
}
