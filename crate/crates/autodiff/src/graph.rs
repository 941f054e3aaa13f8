//! Tape-style computation graph.
//!
//! Nodes are appended in evaluation order, so creation order is a valid
//! topological order and `backward` is a single reverse sweep.

use crate::conv::{self, ConvGeometry};
use crate::error::{AutodiffError, Result};
use crate::gemm;
use crate::tensor::Tensor;

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product; the right operand's shape may be a trailing
    /// suffix of the left one and is broadcast over the leading axes.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    SoftmaxChannels(NodeId),
    Softmaxpro {
        canvases: Vec<NodeId>,
        sizes: Vec<usize>,
    },
    Select(NodeId, usize),
    Reshape(NodeId),
    PadCenter(NodeId),
    GlobalAvgPool(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
    },
    SquaredError {
        a: NodeId,
        b: NodeId,
        scale: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A single-use differentiation tape.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// Whether canvas position `(i, j)` lies in the centered `k×k` live region of
/// a `size×size` canvas.
pub fn is_live(i: usize, j: usize, k: usize, size: usize) -> bool {
    let c = (size / 2) as isize;
    let r = (k / 2) as isize;
    (i as isize - c).abs() <= r && (j as isize - c).abs() <= r
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the value of `id` into a fresh constant leaf, cutting gradient flow.
    pub fn stop_gradient(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id.0].value.clone();
        self.constant(v)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("add", va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("sub", va.shape(), vb.shape()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("mul", sa, sb));
        }
        let inner = vb.len().max(1);
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * vb.data()[i % inner])
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = self.value(a).map(|v| c * v);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm::matmul(va.data(), vb.data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    /// Softmax along axis 0, independently at every position of the
    /// remaining axes (e.g. per pixel across abundance channels).
    pub fn softmax_channels(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        if shape.is_empty() || shape[0] == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "softmax_channels",
                reason: "needs at least one channel".into(),
            });
        }
        let c = shape[0];
        let n = va.len() / c;
        let x = va.data();
        let mut out = vec![0.0; va.len()];
        for p in 0..n {
            let mx = (0..c)
                .map(|ch| x[ch * n + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for ch in 0..c {
                let e = (x[ch * n + p] - mx).exp();
                out[ch * n + p] = e;
                s += e;
            }
            for ch in 0..c {
                out[ch * n + p] /= s;
            }
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::SoftmaxChannels(a), rg))
    }

    /// Positional softmax over kernel branches.
    ///
    /// Each input is a `size×size` logit canvas for one branch whose live
    /// region is the centered `sizes[l]×sizes[l]` block. At every position the
    /// softmax runs over the branches live there; dead entries are exactly 0.
    /// Output shape is `[L, size, size]`.
    pub fn softmaxpro(&mut self, canvases: &[NodeId], sizes: &[usize]) -> Result<NodeId> {
        if canvases.is_empty() || canvases.len() != sizes.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "softmaxpro",
                reason: format!("{} canvases for {} sizes", canvases.len(), sizes.len()),
            });
        }
        let shape = self.value(canvases[0]).shape().to_vec();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(mismatch("softmaxpro", &shape, &[]));
        }
        let size = shape[0];
        for (&id, &k) in canvases.iter().zip(sizes) {
            if self.value(id).shape() != shape.as_slice() {
                return Err(mismatch("softmaxpro", &shape, self.value(id).shape()));
            }
            if k % 2 == 0 || k > size {
                return Err(AutodiffError::InvalidArgument {
                    op: "softmaxpro",
                    reason: format!("branch size {k} must be odd and at most {size}"),
                });
            }
        }
        let l = canvases.len();
        let ss = size * size;
        let mut out = vec![0.0; l * ss];
        for i in 0..size {
            for j in 0..size {
                let p = i * size + j;
                let live: Vec<usize> = (0..l).filter(|&b| is_live(i, j, sizes[b], size)).collect();
                if live.is_empty() {
                    return Err(AutodiffError::InvalidArgument {
                        op: "softmaxpro",
                        reason: format!("no branch covers canvas position ({i}, {j})"),
                    });
                }
                let mx = live
                    .iter()
                    .map(|&b| self.value(canvases[b]).data()[p])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for &b in &live {
                    let e = (self.value(canvases[b]).data()[p] - mx).exp();
                    out[b * ss + p] = e;
                    s += e;
                }
                for &b in &live {
                    out[b * ss + p] /= s;
                }
            }
        }
        let t = Tensor::new(vec![l, size, size], out)?;
        let rg = self.rg(canvases);
        Ok(self.push(
            t,
            Op::Softmaxpro {
                canvases: canvases.to_vec(),
                sizes: sizes.to_vec(),
            },
            rg,
        ))
    }

    /// Slice `index` along axis 0.
    pub fn select(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let va = self.value(a);
        let shape = va.shape();
        if shape.is_empty() || index >= shape[0] {
            return Err(AutodiffError::InvalidArgument {
                op: "select",
                reason: format!("index {index} out of range for shape {shape:?}"),
            });
        }
        let inner = va.len() / shape[0];
        let data = va.data()[index * inner..(index + 1) * inner].to_vec();
        let t = Tensor::new(shape[1..].to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Select(a, index), rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Zero-pads the trailing two (square, odd) axes to `size×size`, centered.
    pub fn pad_center(&mut self, a: NodeId, size: usize) -> Result<NodeId> {
        let va = self.value(a);
        let shape = va.shape();
        let d = shape.len();
        if d < 2
            || shape[d - 1] != shape[d - 2]
            || shape[d - 1] > size
            || (size - shape[d - 1]) % 2 != 0
        {
            return Err(AutodiffError::InvalidArgument {
                op: "pad_center",
                reason: format!("cannot center {shape:?} in {size}×{size}"),
            });
        }
        let k = shape[d - 1];
        let off = (size - k) / 2;
        let outer = va.len() / (k * k);
        let mut out = vec![0.0; outer * size * size];
        for o in 0..outer {
            for i in 0..k {
                for j in 0..k {
                    out[o * size * size + (i + off) * size + j + off] =
                        va.data()[o * k * k + i * k + j];
                }
            }
        }
        let mut new_shape = shape[..d - 2].to_vec();
        new_shape.extend([size, size]);
        let t = Tensor::new(new_shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::PadCenter(a), rg))
    }

    /// Mean over every axis but the first: `[C, ...] → [C]`.
    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let shape = va.shape();
        if shape.len() < 2 {
            return Err(mismatch("global_avg_pool", shape, &[]));
        }
        let c = shape[0];
        let n = va.len() / c;
        let data = (0..c)
            .map(|ch| va.data()[ch * n..(ch + 1) * n].iter().sum::<f64>() / n as f64)
            .collect();
        let t = Tensor::new(vec![c], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::GlobalAvgPool(a), rg))
    }

    /// Fully-connected layer `w·x + b` with `w: [out, in]`, `x: [in]`, `b: [out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let sw = vw.shape();
        if sw.len() != 2 || vx.shape() != [sw[1]] || vb.shape() != [sw[0]] {
            return Err(mismatch("linear", sw, vx.shape()));
        }
        let (o, i) = (sw[0], sw[1]);
        let data = (0..o)
            .map(|r| {
                vb.data()[r]
                    + vw.data()[r * i..(r + 1) * i]
                        .iter()
                        .zip(vx.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let t = Tensor::new(vec![o], data)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    /// Multi-channel stride-1 correlation with symmetric padding.
    /// `input: [cin, h, w]`, `kernel: [cout, cin, k, k]` with odd `k`.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId) -> Result<NodeId> {
        let g = self.conv_geometry(input, kernel)?;
        let out = conv::forward(self.value(input).data(), self.value(kernel).data(), &g);
        let t = Tensor::new(vec![g.cout, g.h, g.w], out)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(t, Op::Conv2d { input, kernel }, rg))
    }

    fn conv_geometry(&self, input: NodeId, kernel: NodeId) -> Result<ConvGeometry> {
        let (si, sk) = (self.value(input).shape(), self.value(kernel).shape());
        if si.len() != 3 || sk.len() != 4 || sk[1] != si[0] || sk[2] != sk[3] || sk[2] % 2 == 0 {
            return Err(mismatch("conv2d", si, sk));
        }
        Ok(ConvGeometry {
            cin: si[0],
            cout: sk[0],
            h: si[1],
            w: si[2],
            k: sk[2],
        })
    }

    /// `scale · Σ (a − b)²` as a scalar node.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId, scale: f64) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch("squared_error", va.shape(), vb.shape()));
        }
        let s: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor::scalar(scale * s),
            Op::SquaredError { a, b, scale },
            rg,
        ))
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    /// Reverse sweep from a scalar `root`; gradients accumulate into every
    /// node that requires one.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let seed = Tensor::full(rv.shape(), 1.0);
        self.accumulate(root, seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = self.nodes[idx].grad.clone() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            self.backward_op(NodeId(idx), &op, &g)?;
        }
        Ok(())
    }

    fn backward_op(&mut self, id: NodeId, op: &Op, g: &Tensor) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let va = self.value(a).clone();
                let vb = self.value(b).clone();
                let inner = vb.len().max(1);
                if self.requires_grad(a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x * vb.data()[i % inner])
                        .collect();
                    self.accumulate(a, Tensor::new(va.shape().to_vec(), data)?);
                }
                if self.requires_grad(b) {
                    let mut gb = vec![0.0; vb.len()];
                    for (i, (x, y)) in g.data().iter().zip(va.data()).enumerate() {
                        gb[i % inner] += x * y;
                    }
                    self.accumulate(b, Tensor::new(vb.shape().to_vec(), gb)?);
                }
            }
            Op::Scale(a, c) => self.accumulate(a, g.map(|v| c * v)),
            Op::MatMul(a, b) => {
                let va = self.value(a).clone();
                let vb = self.value(b).clone();
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.requires_grad(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm::matmul_nt_acc(g.data(), vb.data(), &mut ga, m, n, k);
                    self.accumulate(a, Tensor::new(vec![m, k], ga)?);
                }
                if self.requires_grad(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm::matmul_tn_acc(va.data(), g.data(), &mut gb, k, m, n);
                    self.accumulate(b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Relu(a) => {
                let va = self.value(a);
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                    .collect();
                let t = Tensor::new(va.shape().to_vec(), data)?;
                self.accumulate(a, t);
            }
            Op::SoftmaxChannels(a) => {
                let y = self.value(id);
                let c = y.shape()[0];
                let n = y.len() / c;
                let mut out = vec![0.0; y.len()];
                for p in 0..n {
                    let dot: f64 = (0..c)
                        .map(|ch| y.data()[ch * n + p] * g.data()[ch * n + p])
                        .sum();
                    for ch in 0..c {
                        let i = ch * n + p;
                        out[i] = y.data()[i] * (g.data()[i] - dot);
                    }
                }
                let t = Tensor::new(y.shape().to_vec(), out)?;
                self.accumulate(a, t);
            }
            Op::Softmaxpro {
                ref canvases,
                ref sizes,
            } => {
                let y = self.value(id).clone();
                let size = y.shape()[1];
                let ss = size * size;
                let l = canvases.len();
                let mut grads = vec![vec![0.0; ss]; l];
                for p in 0..ss {
                    let (i, j) = (p / size, p % size);
                    let live: Vec<usize> =
                        (0..l).filter(|&b| is_live(i, j, sizes[b], size)).collect();
                    let dot: f64 = live
                        .iter()
                        .map(|&b| y.data()[b * ss + p] * g.data()[b * ss + p])
                        .sum();
                    for &b in &live {
                        grads[b][p] = y.data()[b * ss + p] * (g.data()[b * ss + p] - dot);
                    }
                }
                for (&c, gr) in canvases.iter().zip(grads) {
                    self.accumulate(c, Tensor::new(vec![size, size], gr)?);
                }
            }
            Op::Select(a, index) => {
                let shape = self.value(a).shape().to_vec();
                let inner = g.len();
                let mut out = vec![0.0; shape.iter().product()];
                out[index * inner..(index + 1) * inner].copy_from_slice(g.data());
                self.accumulate(a, Tensor::new(shape, out)?);
            }
            Op::Reshape(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(a, g.clone().reshaped(&shape)?);
            }
            Op::PadCenter(a) => {
                let shape = self.value(a).shape().to_vec();
                let d = shape.len();
                let k = shape[d - 1];
                let size = g.shape()[g.shape().len() - 1];
                let off = (size - k) / 2;
                let outer = shape.iter().product::<usize>() / (k * k);
                let mut out = vec![0.0; outer * k * k];
                for o in 0..outer {
                    for i in 0..k {
                        for j in 0..k {
                            out[o * k * k + i * k + j] =
                                g.data()[o * size * size + (i + off) * size + j + off];
                        }
                    }
                }
                self.accumulate(a, Tensor::new(shape, out)?);
            }
            Op::GlobalAvgPool(a) => {
                let shape = self.value(a).shape().to_vec();
                let c = shape[0];
                let total: usize = shape.iter().product();
                let n = total / c;
                let mut out = vec![0.0; total];
                for ch in 0..c {
                    let v = g.data()[ch] / n as f64;
                    out[ch * n..(ch + 1) * n].iter_mut().for_each(|x| *x = v);
                }
                self.accumulate(a, Tensor::new(shape, out)?);
            }
            Op::Linear { x, w, b } => {
                let vx = self.value(x).clone();
                let vw = self.value(w).clone();
                let (o, i) = (vw.shape()[0], vw.shape()[1]);
                if self.requires_grad(x) {
                    let mut gx = vec![0.0; i];
                    for r in 0..o {
                        for c in 0..i {
                            gx[c] += g.data()[r] * vw.data()[r * i + c];
                        }
                    }
                    self.accumulate(x, Tensor::new(vec![i], gx)?);
                }
                if self.requires_grad(w) {
                    let mut gw = vec![0.0; o * i];
                    for r in 0..o {
                        for c in 0..i {
                            gw[r * i + c] = g.data()[r] * vx.data()[c];
                        }
                    }
                    self.accumulate(w, Tensor::new(vec![o, i], gw)?);
                }
                self.accumulate(b, g.clone());
            }
            Op::Conv2d { input, kernel } => {
                let geom = self.conv_geometry(input, kernel)?;
                let (gi, gk) = conv::backward(
                    self.value(input).data(),
                    self.value(kernel).data(),
                    g.data(),
                    &geom,
                    self.requires_grad(input),
                    self.requires_grad(kernel),
                );
                if let Some(gi) = gi {
                    let shape = self.value(input).shape().to_vec();
                    self.accumulate(input, Tensor::new(shape, gi)?);
                }
                if let Some(gk) = gk {
                    let shape = self.value(kernel).shape().to_vec();
                    self.accumulate(kernel, Tensor::new(shape, gk)?);
                }
            }
            Op::SquaredError { a, b, scale } => {
                let up = g.data()[0];
                let va = self.value(a);
                let vb = self.value(b);
                let diff: Vec<f64> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(x, y)| 2.0 * scale * up * (x - y))
                    .collect();
                let shape = va.shape().to_vec();
                if self.requires_grad(a) {
                    self.accumulate(a, Tensor::new(shape.clone(), diff.clone())?);
                }
                if self.requires_grad(b) {
                    self.accumulate(b, Tensor::new(shape, diff.iter().map(|v| -v).collect())?);
                }
            }
        }
        Ok(())
    }
}
