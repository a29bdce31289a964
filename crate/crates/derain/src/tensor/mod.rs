//! Minimal reverse-mode autodiff engine with the dense ops the two
//! denoising networks need.
//!
//! Tensors live inside a [`Graph`] (a tape of executed operations) and are
//! addressed by lightweight [`Var`] handles. Training runs in `f32`; the
//! whole engine is generic over [`Scalar`] so gradient checks can run the
//! identical code paths in `f64`.

mod adam;
mod conv;
mod graph;
mod weights_io;

pub use adam::Adam;
pub use graph::{Graph, Var};
pub use weights_io::{
    load_weights, save_weights, WeightsIoError, WEIGHTS_FORMAT_VERSION, WEIGHTS_MAGIC,
};

use std::fmt;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of the engine: `f32` for training, `f64` for the
/// finite-difference check mode.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lossless-enough conversion from `f64` into the engine scalar.
pub(crate) fn fl<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 converts into every Scalar")
}

// ── Errors ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Constructor got `data` whose length is not the product of `shape`.
    ShapeDataMismatch { shape: Vec<usize>, data_len: usize },
    /// A shape extent was zero.
    ZeroExtent { shape: Vec<usize> },
    /// Elementwise op applied to differently shaped operands.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// conv2d input channel count does not match the weight's.
    ChannelMismatch {
        input_shape: Vec<usize>,
        weight_shape: Vec<usize>,
    },
    /// An op expected a tensor of the given rank.
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    /// conv2d kernels must have odd spatial extents.
    EvenKernel { kh: usize, kw: usize },
    /// Padded input smaller than the kernel.
    KernelTooLarge {
        input_shape: Vec<usize>,
        weight_shape: Vec<usize>,
        padding: usize,
    },
    /// (extent + 2*padding - kernel) not divisible by stride.
    StrideMisaligned {
        extent: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    ZeroStride,
    /// Pooling requires even spatial extents.
    OddSpatialExtent { op: &'static str, shape: Vec<usize> },
    /// backward() requires a single-element loss.
    NonScalarLoss { shape: Vec<usize> },
    /// The graph was already consumed by a backward pass.
    GraphConsumed,
    /// concat over an empty input list.
    EmptyConcat,
    /// The optimizer was handed no gradient for a parameter.
    MissingGradient { name: String },
    /// Duplicate parameter name in a weight collection.
    DuplicateName { name: String },
    /// Lookup of an unknown parameter name.
    UnknownParameter { name: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeDataMismatch { shape, data_len } => write!(
                f,
                "shape {shape:?} implies {} elements but data has {data_len}",
                shape.iter().product::<usize>()
            ),
            Self::ZeroExtent { shape } => write!(f, "shape {shape:?} has a zero extent"),
            Self::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Self::ChannelMismatch {
                input_shape,
                weight_shape,
            } => write!(
                f,
                "conv2d: input shape {input_shape:?} and weight shape {weight_shape:?} disagree on input channels"
            ),
            Self::RankMismatch { op, expected, shape } => {
                write!(f, "{op}: expected rank {expected}, got shape {shape:?}")
            }
            Self::EvenKernel { kh, kw } => {
                write!(f, "conv2d: kernel extents must be odd, got {kh}x{kw}")
            }
            Self::KernelTooLarge {
                input_shape,
                weight_shape,
                padding,
            } => write!(
                f,
                "conv2d: padded input {input_shape:?} (padding {padding}) smaller than kernel {weight_shape:?}"
            ),
            Self::StrideMisaligned {
                extent,
                kernel,
                padding,
                stride,
            } => write!(
                f,
                "conv2d: ({extent} + 2*{padding} - {kernel}) is not divisible by stride {stride}"
            ),
            Self::ZeroStride => write!(f, "conv2d: stride must be positive"),
            Self::OddSpatialExtent { op, shape } => {
                write!(f, "{op}: spatial extents of {shape:?} must be even")
            }
            Self::NonScalarLoss { shape } => {
                write!(f, "backward: loss must have one element, got shape {shape:?}")
            }
            Self::GraphConsumed => write!(f, "graph already consumed by a backward pass"),
            Self::EmptyConcat => write!(f, "concat: no inputs"),
            Self::MissingGradient { name } => write!(f, "missing gradient for parameter `{name}`"),
            Self::DuplicateName { name } => write!(f, "duplicate parameter name `{name}`"),
            Self::UnknownParameter { name } => write!(f, "unknown parameter `{name}`"),
        }
    }
}

impl std::error::Error for TensorError {}

// ── Tensor ──────────────────────────────────────────────────────────

/// Dense N-dimensional array, row-major. The canonical image layout is
/// `[batch, channels, height, width]`; scalars use the empty shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ZeroExtent { shape });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                data_len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![T::zero(); numel]).expect("zeros: consistent by construction")
    }

    pub fn scalar(value: T) -> Self {
        Self::new(Vec::new(), vec![value]).expect("scalar: consistent by construction")
    }

    /// Mark this tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Gradient buffer, populated by `Graph::backward`.
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Convert the element type; drops any gradient.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self
            .data
            .iter()
            .map(|&x| U::from_f64(x.to_f64().expect("scalar to f64")).expect("f64 to scalar"))
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Option<Vec<T>> {
        &mut self.grad
    }

    pub(crate) fn set_requires_grad(&mut self, v: bool) {
        self.requires_grad = v;
    }
}

// ── Named weight collections ────────────────────────────────────────

/// Named, ordered collection of tensors for one network. Order is the
/// serialization order; names are unique.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelWeights<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<(), TensorError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(TensorError::DuplicateName { name });
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    /// Record a named scalar (rank-0 tensor), used for hyperparameters in
    /// the weights file header.
    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) -> Result<(), TensorError> {
        self.push(name, Tensor::scalar(fl(value)))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn scalar_value(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|t| {
            if t.numel() == 1 {
                t.data()[0].to_f64()
            } else {
                None
            }
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total parameter count (scalars included).
    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        ModelWeights {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ModelWeights<T> {
        ModelWeights {
            entries: self
                .entries
                .iter()
                .filter_map(|(n, t)| {
                    n.strip_prefix(prefix).map(|rest| (rest.to_string(), t.clone()))
                })
                .collect(),
        }
    }

    /// Merge `other` under `prefix`.
    pub fn merge_prefixed(
        &mut self,
        prefix: &str,
        other: &ModelWeights<T>,
    ) -> Result<(), TensorError> {
        for (n, t) in other.iter() {
            self.push(format!("{prefix}{n}"), t.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_inconsistent_shape() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeDataMismatch { .. }));
    }

    #[test]
    fn tensor_rejects_zero_extent() {
        let err = Tensor::<f32>::new(vec![2, 0], vec![]).unwrap_err();
        assert!(matches!(err, TensorError::ZeroExtent { .. }));
    }

    #[test]
    fn scalar_tensor_has_empty_shape() {
        let t = Tensor::<f32>::scalar(3.5);
        assert!(t.shape().is_empty());
        assert_eq!(t.numel(), 1);
        assert_eq!(t.item(), 3.5);
    }

    #[test]
    fn weights_reject_duplicate_names() {
        let mut w = ModelWeights::<f32>::new();
        w.push("a", Tensor::zeros(vec![2])).unwrap();
        let err = w.push("a", Tensor::zeros(vec![2])).unwrap_err();
        assert!(matches!(err, TensorError::DuplicateName { .. }));
    }

    #[test]
    fn prefix_round_trip() {
        let mut inner = ModelWeights::<f32>::new();
        inner.push("w", Tensor::zeros(vec![2, 2])).unwrap();
        let mut outer = ModelWeights::<f32>::new();
        outer.merge_prefixed("spatial.", &inner).unwrap();
        assert!(outer.get("spatial.w").is_some());
        let back = outer.strip_prefix("spatial.");
        assert_eq!(back.get("w"), inner.get("w"));
    }
}
