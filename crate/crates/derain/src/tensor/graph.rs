//! The tape: a topologically ordered record of executed operations with the
//! saved inputs backward needs.

use super::conv::{conv2d_backward, conv2d_forward, ConvDims};
use super::{fl, Scalar, Tensor, TensorError};

/// Handle to a tensor on a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

struct Node<T: Scalar> {
    tensor: Tensor<T>,
    op: Op<T>,
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Clamp01(Var),
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample2(Var),
    ConcatChannels(Vec<Var>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        dims: ConvDims,
    },
    Mse(Var, Var),
    Sum(Var),
}

/// Reverse-mode tape. Executing an op appends a node; `backward` visits the
/// nodes in exact reverse insertion order (which is reverse topological
/// order, since inputs always precede outputs) and is allowed once per
/// graph.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether a backward pass already consumed this graph.
    pub fn consumed(&self) -> bool {
        self.consumed
    }

    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].tensor.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad()
    }

    fn push(&mut self, tensor: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn out_of(&mut self, mut tensor: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        tensor.set_requires_grad(requires_grad);
        self.push(tensor, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn rank4(&self, op: &'static str, v: Var) -> Result<[usize; 4], TensorError> {
        let s = self.value(v).shape();
        if s.len() != 4 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 4,
                shape: s.to_vec(),
            });
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    fn requires(&self, v: Var) -> bool {
        self.value(v).requires_grad()
    }

    // ── Elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.out_of(t, self.requires(a) || self.requires(b), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x - y);
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.out_of(t, self.requires(a) || self.requires(b), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.out_of(t, self.requires(a) || self.requires(b), Op::Mul(a, b)))
    }

    pub fn scalar_mul(&mut self, a: Var, factor: T) -> Result<Var, TensorError> {
        let data = self.data(a).iter().map(|&x| x * factor).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.out_of(t, self.requires(a), Op::ScalarMul(a, factor)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let data = self
            .data(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.out_of(t, self.requires(a), Op::Relu(a)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var, TensorError> {
        let data = self
            .data(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { x * slope })
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.out_of(t, self.requires(a), Op::LeakyRelu(a, slope)))
    }

    /// Saturating output nonlinearity: identity on [0,1], flat outside.
    /// The subgradient is 1 on the closed interval, 0 outside, so training
    /// signals survive at exactly 0 and 1.
    pub fn clamp01(&mut self, a: Var) -> Result<Var, TensorError> {
        let one = T::one();
        let data = self
            .data(a)
            .iter()
            .map(|&x| {
                if x < T::zero() {
                    T::zero()
                } else if x > one {
                    one
                } else {
                    x
                }
            })
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.out_of(t, self.requires(a), Op::Clamp01(a)))
    }

    // ── Spatial ──────────────────────────────────────────────────────

    /// 2x2 max pooling with stride 2. Gradient flows to the argmax
    /// position of each window (first occurrence on ties).
    pub fn max_pool2(&mut self, a: Var) -> Result<Var, TensorError> {
        let [n, c, h, w] = self.rank4("max_pool2d", a)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::OddSpatialExtent {
                op: "max_pool2d",
                shape: self.value(a).shape().to_vec(),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data(a);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for nc in 0..n * c {
            let plane = &x[nc * h * w..(nc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (2 * oy) * w + 2 * ox;
                    let mut best_idx = base;
                    let mut best = plane[base];
                    for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                        let idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push((nc * h * w + best_idx) as u32);
                }
            }
        }
        let t = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.out_of(t, self.requires(a), Op::MaxPool2 { input: a, argmax }))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var, TensorError> {
        let [n, c, h, w] = self.rank4("nearest_upsample", a)?;
        let x = self.data(a);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for nc in 0..n * c {
            let src = &x[nc * h * w..(nc + 1) * h * w];
            let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
            for y in 0..h {
                for x_ in 0..w {
                    let v = src[y * w + x_];
                    dst[(2 * y) * ow + 2 * x_] = v;
                    dst[(2 * y) * ow + 2 * x_ + 1] = v;
                    dst[(2 * y + 1) * ow + 2 * x_] = v;
                    dst[(2 * y + 1) * ow + 2 * x_ + 1] = v;
                }
            }
        }
        let t = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.out_of(t, self.requires(a), Op::Upsample2(a)))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        let first = *inputs.first().ok_or(TensorError::EmptyConcat)?;
        let [n, _, h, w] = self.rank4("concat", first)?;
        let mut c_total = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.rank4("concat", v)?;
            if vn != n || vh != h || vw != w {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(v).shape().to_vec(),
                });
            }
            c_total += vc;
        }
        let hw = h * w;
        let mut out = vec![T::zero(); n * c_total * hw];
        for ni in 0..n {
            let mut c_off = 0;
            for &v in inputs {
                let ci = self.value(v).shape()[1];
                let src = &self.data(v)[ni * ci * hw..(ni + 1) * ci * hw];
                out[ni * c_total * hw + c_off * hw..ni * c_total * hw + (c_off + ci) * hw]
                    .copy_from_slice(src);
                c_off += ci;
            }
        }
        let rg = inputs.iter().any(|&v| self.requires(v));
        let t = Tensor::new(vec![n, c_total, h, w], out)?;
        Ok(self.out_of(t, rg, Op::ConcatChannels(inputs.to_vec())))
    }

    /// 2-D convolution with zero padding.
    ///
    /// `input` is `[n, cin, h, w]`, `weight` is `[cout, cin, kh, kw]` with
    /// odd kernel extents, `bias` is `[cout]`. Output extents must come out
    /// of `(extent + 2*padding - kernel) / stride + 1` exactly.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let [n, cin, h, w] = self.rank4("conv2d", input)?;
        let [cout, wcin, kh, kw] = self.rank4("conv2d", weight)?;
        if wcin != cin {
            return Err(TensorError::ChannelMismatch {
                input_shape: self.value(input).shape().to_vec(),
                weight_shape: self.value(weight).shape().to_vec(),
            });
        }
        if self.value(bias).shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                left: self.value(bias).shape().to_vec(),
                right: vec![cout],
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::EvenKernel { kh, kw });
        }
        if stride == 0 {
            return Err(TensorError::ZeroStride);
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::KernelTooLarge {
                input_shape: self.value(input).shape().to_vec(),
                weight_shape: self.value(weight).shape().to_vec(),
                padding,
            });
        }
        for (extent, kernel) in [(h, kh), (w, kw)] {
            if (extent + 2 * padding - kernel) % stride != 0 {
                return Err(TensorError::StrideMisaligned {
                    extent,
                    kernel,
                    padding,
                    stride,
                });
            }
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let dims = ConvDims {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            padding,
            oh,
            ow,
        };
        let y = conv2d_forward(self.data(input), self.data(weight), self.data(bias), &dims);
        let rg = self.requires(input) || self.requires(weight) || self.requires(bias);
        let t = Tensor::new(vec![n, cout, oh, ow], y)?;
        Ok(self.out_of(
            t,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                dims,
            },
        ))
    }

    // ── Reductions ───────────────────────────────────────────────────

    /// Mean squared error over all elements; returns a scalar tensor.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mse", a, b)?;
        let mut acc = 0.0f64;
        for (&x, &y) in self.data(a).iter().zip(self.data(b)) {
            let d = (x - y).to_f64().unwrap_or(f64::NAN);
            acc += d * d;
        }
        let mean = acc / self.value(a).numel() as f64;
        let t = Tensor::scalar(fl(mean));
        Ok(self.out_of(t, self.requires(a) || self.requires(b), Op::Mse(a, b)))
    }

    /// Sum of all elements; returns a scalar tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let mut acc = 0.0f64;
        for &x in self.data(a) {
            acc += x.to_f64().unwrap_or(f64::NAN);
        }
        let t = Tensor::scalar(fl(acc));
        Ok(self.out_of(t, self.requires(a), Op::Sum(a)))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from `loss`, populating `grad` on every tensor in the
    /// graph that has `requires_grad`. Consumes the graph: a second call is
    /// rejected.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss.0].tensor.shape().to_vec(),
            });
        }
        self.consumed = true;

        if self.nodes[loss.0].tensor.requires_grad() {
            *self.nodes[loss.0].tensor.grad_mut() = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].tensor.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let contributions = self.input_gradients(i, &g);
            for (target, contrib) in contributions {
                self.accumulate(target, contrib);
            }
        }

        // Tensors with requires_grad that the sweep never reached still get
        // a populated (zero) gradient.
        for node in &mut self.nodes {
            if node.tensor.requires_grad() && node.tensor.grad().is_none() {
                let numel = node.tensor.numel();
                *node.tensor.grad_mut() = Some(vec![T::zero(); numel]);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, target: Var, contrib: Vec<T>) {
        let tensor = &mut self.nodes[target.0].tensor;
        match tensor.grad_mut() {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(contrib) {
                    *g += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Gradient contributions of node `i` to each of its inputs that
    /// require gradients, given `g` = dLoss/dNode_i.
    fn input_gradients(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.requires(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.requires(*b) {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::Sub(a, b) => {
                if self.requires(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.requires(*b) {
                    out.push((*b, g.iter().map(|&x| -x).collect()));
                }
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    out.push((*a, zip_map(g, self.data(*b), |gv, bv| gv * bv)));
                }
                if self.requires(*b) {
                    out.push((*b, zip_map(g, self.data(*a), |gv, av| gv * av)));
                }
            }
            Op::ScalarMul(a, k) => {
                if self.requires(*a) {
                    out.push((*a, g.iter().map(|&x| x * *k).collect()));
                }
            }
            Op::Relu(a) => {
                if self.requires(*a) {
                    out.push((
                        *a,
                        zip_map(g, self.data(*a), |gv, x| {
                            if x > T::zero() {
                                gv
                            } else {
                                T::zero()
                            }
                        }),
                    ));
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.requires(*a) {
                    let s = *slope;
                    out.push((
                        *a,
                        zip_map(g, self.data(*a), |gv, x| {
                            if x > T::zero() {
                                gv
                            } else {
                                gv * s
                            }
                        }),
                    ));
                }
            }
            Op::Clamp01(a) => {
                if self.requires(*a) {
                    out.push((
                        *a,
                        zip_map(g, self.data(*a), |gv, x| {
                            if x >= T::zero() && x <= T::one() {
                                gv
                            } else {
                                T::zero()
                            }
                        }),
                    ));
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if self.requires(*input) {
                    let mut gx = vec![T::zero(); self.value(*input).numel()];
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        gx[idx as usize] += gv;
                    }
                    out.push((*input, gx));
                }
            }
            Op::Upsample2(a) => {
                if self.requires(*a) {
                    let s = self.value(*a).shape();
                    let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut gx = vec![T::zero(); nc * h * w];
                    for p in 0..nc {
                        let src = &g[p * oh * ow..(p + 1) * oh * ow];
                        let dst = &mut gx[p * h * w..(p + 1) * h * w];
                        for y in 0..h {
                            for x_ in 0..w {
                                dst[y * w + x_] = src[(2 * y) * ow + 2 * x_]
                                    + src[(2 * y) * ow + 2 * x_ + 1]
                                    + src[(2 * y + 1) * ow + 2 * x_]
                                    + src[(2 * y + 1) * ow + 2 * x_ + 1];
                            }
                        }
                    }
                    out.push((*a, gx));
                }
            }
            Op::ConcatChannels(inputs) => {
                let s = self.value(Var(i)).shape();
                let (n, c_total, hw) = (s[0], s[1], s[2] * s[3]);
                let mut c_off = 0;
                for &v in inputs {
                    let ci = self.value(v).shape()[1];
                    if self.requires(v) {
                        let mut gx = vec![T::zero(); n * ci * hw];
                        for ni in 0..n {
                            gx[ni * ci * hw..(ni + 1) * ci * hw].copy_from_slice(
                                &g[ni * c_total * hw + c_off * hw
                                    ..ni * c_total * hw + (c_off + ci) * hw],
                            );
                        }
                        out.push((v, gx));
                    }
                    c_off += ci;
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                dims,
            } => {
                let need = (
                    self.requires(*input),
                    self.requires(*weight),
                    self.requires(*bias),
                );
                if need.0 || need.1 || need.2 {
                    let (gx, gw, gb) =
                        conv2d_backward(self.data(*input), self.data(*weight), g, dims);
                    if need.0 {
                        out.push((*input, gx));
                    }
                    if need.1 {
                        out.push((*weight, gw));
                    }
                    if need.2 {
                        out.push((*bias, gb));
                    }
                }
            }
            Op::Mse(a, b) => {
                let n = self.value(*a).numel();
                let factor = fl::<T>(2.0 / n as f64) * g[0];
                if self.requires(*a) {
                    out.push((
                        *a,
                        zip_map(self.data(*a), self.data(*b), |x, y| factor * (x - y)),
                    ));
                }
                if self.requires(*b) {
                    out.push((
                        *b,
                        zip_map(self.data(*a), self.data(*b), |x, y| -factor * (x - y)),
                    ));
                }
            }
            Op::Sum(a) => {
                if self.requires(*a) {
                    out.push((*a, vec![g[0]; self.value(*a).numel()]));
                }
            }
        }
        out
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_grad(shape: Vec<usize>, data: Vec<f32>) -> Tensor<f32> {
        Tensor::new(shape, data).unwrap().with_grad()
    }

    #[test]
    fn sum_of_squares_gradient() {
        // loss = sum(w ⊙ w), w = [1,2,3] → grad = 2w
        let mut g = Graph::new();
        let w = g.leaf(leaf_grad(vec![3], vec![1.0, 2.0, 3.0]));
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn mse_of_tensor_with_itself_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(leaf_grad(vec![4], vec![0.3, -1.0, 2.0, 0.0]));
        let loss = g.mse(x, x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn mse_value_matches_hand_computation() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let b = g.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let loss = g.mse(a, b).unwrap();
        assert_eq!(g.value(loss).item(), 12.5);
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.data(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(leaf_grad(vec![2], vec![1.0, 2.0]));
        let y = g.relu(x).unwrap();
        let err = g.backward(y).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn backward_consumes_the_graph() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(leaf_grad(vec![2], vec![1.0, 2.0]));
        let loss = g.sum(x).unwrap();
        g.backward(loss).unwrap();
        let err = g.backward(loss).unwrap_err();
        assert!(matches!(err, TensorError::GraphConsumed));
    }

    #[test]
    fn conv2d_all_ones_box() {
        // 3x3 ones input, 3x3 ones kernel, padding 1: center sees all 9,
        // corners see 4.
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap());
        let w = g.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap());
        let b = g.leaf(Tensor::new(vec![1], vec![0.0]).unwrap());
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        let out = g.data(y);
        assert_eq!(out[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(out[corner], 4.0);
        }
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = Graph::<f32>::new();
        let data: Vec<f32> = (0..2 * 3 * 4 * 4).map(|i| i as f32 * 0.01).collect();
        let x = g.leaf(Tensor::new(vec![2, 3, 4, 4], data.clone()).unwrap());
        // 3-channel identity: each output channel passes through its input
        // channel's center tap.
        let mut wdata = vec![0.0f32; 3 * 3 * 3 * 3];
        for c in 0..3 {
            wdata[c * 27 + c * 9 + 4] = 1.0;
        }
        let w = g.leaf(Tensor::new(vec![3, 3, 3, 3], wdata).unwrap());
        let b = g.leaf(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.data(y), &data[..]);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch_naming_both_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(vec![1, 2, 4, 4]));
        let w = g.leaf(Tensor::zeros(vec![1, 3, 3, 3]));
        let b = g.leaf(Tensor::zeros(vec![1]));
        let err = g.conv2d(x, w, b, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn conv2d_rejects_misaligned_stride() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(vec![1, 1, 6, 6]));
        let w = g.leaf(Tensor::zeros(vec![1, 1, 3, 3]));
        let b = g.leaf(Tensor::zeros(vec![1]));
        // (6 - 3) % 2 != 0
        let err = g.conv2d(x, w, b, 2, 0).unwrap_err();
        assert!(matches!(err, TensorError::StrideMisaligned { .. }));
    }

    #[test]
    fn max_pool_gradient_routes_to_argmax() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(leaf_grad(
            vec![1, 1, 2, 2],
            vec![0.1, 0.9, 0.4, 0.2],
        ));
        let y = g.max_pool2(x).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_rejects_odd_extents() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(vec![1, 1, 3, 4]));
        let err = g.max_pool2(x).unwrap_err();
        assert!(matches!(err, TensorError::OddSpatialExtent { .. }));
    }

    #[test]
    fn concat_then_split_gradients() {
        let mut g = Graph::<f32>::new();
        let a = g.leaf(leaf_grad(vec![1, 1, 2, 2], vec![1.0; 4]));
        let b = g.leaf(leaf_grad(vec![1, 2, 2, 2], vec![2.0; 8]));
        let cat = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(cat).shape(), &[1, 3, 2, 2]);
        let two = g.scalar_mul(cat, 2.0).unwrap();
        let loss = g.sum(two).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[2.0; 4]);
        assert_eq!(g.grad(b).unwrap(), &[2.0; 8]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grad(a * loss) == a * grad(loss)
        let data: Vec<f32> = vec![0.37, -0.8, 1.25, 0.02, -0.6, 0.44];
        let run = |scale: Option<f32>| -> Vec<f32> {
            let mut g = Graph::new();
            let x = g.leaf(leaf_grad(vec![6], data.clone()));
            let sq = g.mul(x, x).unwrap();
            let r = g.relu(sq).unwrap();
            let mut loss = g.sum(r).unwrap();
            if let Some(a) = scale {
                loss = g.scalar_mul(loss, a).unwrap();
            }
            g.backward(loss).unwrap();
            g.grad(x).unwrap().to_vec()
        };
        let base = run(None);
        let scaled = run(Some(3.0));
        for (b, s) in base.iter().zip(&scaled) {
            assert!((3.0 * b - s).abs() <= 1e-6 * s.abs().max(1.0));
        }
    }

    #[test]
    fn unreached_requires_grad_leaf_gets_zero_grad() {
        let mut g = Graph::<f32>::new();
        let used = g.leaf(leaf_grad(vec![2], vec![1.0, 2.0]));
        let orphan = g.leaf(leaf_grad(vec![3], vec![1.0, 2.0, 3.0]));
        let loss = g.sum(used).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(orphan).unwrap(), &[0.0; 3]);
    }
}
