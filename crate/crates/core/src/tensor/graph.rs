use indexmap::IndexMap;

use super::kernels::{broadcast_index, broadcast_shape, gemm, ConvGeom};
use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Kernel stride and zero padding of a (de)convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub const UNIT: ConvSpec = ConvSpec { stride: 1, pad: 0 };

    /// Output extent of a convolution over `input` with a window of `kernel`.
    pub fn conv_out(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        (self.stride > 0 && padded >= kernel).then(|| (padded - kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution.
    pub fn deconv_out(&self, input: usize, kernel: usize) -> Option<usize> {
        ((input - 1) * self.stride + kernel).checked_sub(2 * self.pad).filter(|&v| v > 0)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Reshape(Var),
    Slice { input: Var, axis: usize, start: usize },
    Gather { input: Var, rows: Vec<usize> },
    Sum(Var),
    FrobeniusSq(Var),
    Conv2d { input: Var, kernel: Var, geom: ConvGeom, cols: Vec<f64> },
    Deconv2d { input: Var, kernel: Var, geom: ConvGeom },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Parameters of a [`ParameterSet`] placed on a graph, in set order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
    trainable: bool,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::ParamMismatch(format!("no parameter named `{name}`")))
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// Reverse-mode autodiff tape.
///
/// Nodes reference only earlier nodes, so creation order is a topological
/// order and the graph cannot contain cycles.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass(es) with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input that receives a gradient in [`backward`](Self::backward).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Place every parameter of `set` on the graph as a differentiable leaf.
    pub fn bind(&mut self, set: &ParameterSet) -> Bound {
        self.bind_with(set, true)
    }

    /// Place every parameter of `set` on the graph as a constant.
    pub fn bind_frozen(&mut self, set: &ParameterSet) -> Bound {
        self.bind_with(set, false)
    }

    fn bind_with(&mut self, set: &ParameterSet, trainable: bool) -> Bound {
        let vars = set
            .iter()
            .map(|(name, t)| (name.to_string(), self.push(t.clone(), Op::Leaf, trainable)))
            .collect();
        Bound { vars, trainable }
    }

    // ---- forward operations -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    fn broadcast_binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = broadcast_shape(sa, sb)
            .ok_or_else(|| Error::shape(op, format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let (ia, ib) = (broadcast_index(&shape, sa), broadcast_index(&shape, sb));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect();
        Ok((Tensor::new(shape, data)?, self.needs(a) || self.needs(b)))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, needs) = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let src = self.value(a);
        let t = Tensor { shape: src.shape().to_vec(), data: src.data().iter().map(|v| v * factor).collect() };
        let needs = self.needs(a);
        self.push(t, Op::Scale(a, factor), needs)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = self.value(a);
        let t = Tensor { shape: src.shape().to_vec(), data: src.data().iter().map(|&v| f(v)).collect() };
        let needs = self.needs(a);
        self.push(t, op, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some(&width) = shape.last() else {
            return Err(Error::shape("softmax", "scalar input has no axis"));
        };
        if width == 0 {
            return Err(Error::shape("softmax", format!("empty last axis in {shape:?}")));
        }
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(a), needs))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), needs))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat inputs"))?;
        let base = self.shape(first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("shape {s:?} does not match {base:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { parts: parts.to_vec(), axis }, needs))
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("slice", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} exceeds axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Slice { input: a, axis, start }, needs))
    }

    /// Rows of `a` (entries along axis 0) selected by index, repeats allowed.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("gather", &shape, 0)?;
        let inner: usize = shape[1..].iter().product();
        if let Some(&bad) = rows.iter().find(|&&r| r >= shape[0]) {
            return Err(Error::shape("gather", format!("row {bad} out of range for {shape:?}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            data.extend_from_slice(&src[r * inner..(r + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Gather { input: a, rows: rows.to_vec() }, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    /// Squared Frobenius norm, the sum of squared entries.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().map(|v| v * v).sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::FrobeniusSq(a), needs)
    }

    /// Accepts `[h, w, c]` or `[n, h, w, c]`; the batch axis is added and
    /// removed transparently for rank-3 inputs.
    fn conv_input(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize, usize, bool)> {
        match *self.shape(x) {
            [h, w, c] => Ok((1, h, w, c, true)),
            [n, h, w, c] => Ok((n, h, w, c, false)),
            ref s => Err(Error::shape(op, format!("expected [h, w, c] or [n, h, w, c] input, got {s:?}"))),
        }
    }

    /// 2-D convolution. `input` is `[n, h, w, c_in]` (or unbatched `[h, w, c_in]`),
    /// `kernel` is `[kh, kw, c_in, c_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, spec: ConvSpec) -> Result<Var> {
        let (n, h, w, c, unbatched) = self.conv_input("conv2d", input)?;
        let &[kh, kw, kc, out_c] = self.shape(kernel) else {
            return Err(Error::shape("conv2d", format!("kernel must be [kh, kw, c_in, c_out], got {:?}", self.shape(kernel))));
        };
        if kc != c {
            return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {kc}")));
        }
        let (Some(out_h), Some(out_w)) = (spec.conv_out(h, kh), spec.conv_out(w, kw)) else {
            return Err(Error::shape(
                "conv2d",
                format!("{kh}x{kw} kernel does not fit {h}x{w} input with padding {}", spec.pad),
            ));
        };
        let geom = ConvGeom { n, in_h: h, in_w: w, c, kh, kw, stride: spec.stride, pad: spec.pad, out_h, out_w };
        let cols = geom.im2col(self.value(input).data());
        let mut out = vec![0.0; geom.positions() * out_c];
        gemm(geom.positions(), geom.patch_len(), out_c, &cols, false, self.value(kernel).data(), false, &mut out, false);
        let shape = if unbatched { vec![out_h, out_w, out_c] } else { vec![n, out_h, out_w, out_c] };
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { input, kernel, geom, cols }, needs))
    }

    /// Transposed 2-D convolution, the adjoint of [`conv2d`](Self::conv2d)
    /// with respect to its input. `input` is `[n, h, w, c_in]`, `kernel` is
    /// `[kh, kw, c_out, c_in]`; output extent is `(h - 1)·stride - 2·pad + kh`.
    pub fn deconv2d(&mut self, input: Var, kernel: Var, spec: ConvSpec) -> Result<Var> {
        let (n, h, w, c_in, unbatched) = self.conv_input("deconv2d", input)?;
        let &[kh, kw, out_c, kc] = self.shape(kernel) else {
            return Err(Error::shape("deconv2d", format!("kernel must be [kh, kw, c_out, c_in], got {:?}", self.shape(kernel))));
        };
        if kc != c_in {
            return Err(Error::shape("deconv2d", format!("input has {c_in} channels, kernel expects {kc}")));
        }
        let (Some(out_h), Some(out_w)) = (spec.deconv_out(h, kh), spec.deconv_out(w, kw)) else {
            return Err(Error::shape("deconv2d", format!("padding {} leaves no output for {h}x{w} input", spec.pad)));
        };
        // The convolution that maps the deconv output back onto the input grid.
        let geom = ConvGeom { n, in_h: out_h, in_w: out_w, c: out_c, kh, kw, stride: spec.stride, pad: spec.pad, out_h: h, out_w: w };
        if spec.conv_out(out_h, kh) != Some(h) || spec.conv_out(out_w, kw) != Some(w) {
            return Err(Error::shape("deconv2d", "stride does not tile the output exactly"));
        }
        let mut cols = vec![0.0; geom.positions() * geom.patch_len()];
        gemm(geom.positions(), c_in, geom.patch_len(), self.value(input).data(), false, self.value(kernel).data(), true, &mut cols, false);
        let mut out = vec![0.0; n * out_h * out_w * out_c];
        geom.col2im(&cols, &mut out);
        let shape = if unbatched { vec![out_h, out_w, out_c] } else { vec![n, out_h, out_w, out_c] };
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(Tensor::new(shape, out)?, Op::Deconv2d { input, kernel, geom }, needs))
    }

    // ---- reverse pass -------------------------------------------------------

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Propagate `d loss / d node` to every differentiable node. Gradients
    /// accumulate across calls until [`zero_grads`](Self::zero_grads).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.grads.resize_with(self.nodes.len(), || None);
        // Upstream gradients of this pass only; the persistent buffer keeps the sum.
        let mut pass: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        pass[loss.0] = Some(Tensor { shape, data: vec![1.0] });
        for i in (0..=loss.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            for (parent, pg) in self.local_grads(i, &g) {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut pass[parent.0] {
                    Some(existing) => existing.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            self.accumulate(Var(i), g);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn reduce_broadcast(&self, g: &Tensor, target: Var) -> Tensor {
        let shape = self.shape(target);
        if g.shape() == shape {
            return g.clone();
        }
        let map = broadcast_index(g.shape(), shape);
        let mut out = Tensor::zeros(shape.to_vec());
        for (&j, &v) in map.iter().zip(g.data()) {
            out.data[j] += v;
        }
        out
    }

    fn with_shape(&self, like: Var, data: Vec<f64>) -> Tensor {
        Tensor { shape: self.shape(like).to_vec(), data }
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let mut res = Vec::new();
                if self.needs(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.value(b).data(), true, &mut da, false);
                    res.push((a, self.with_shape(a, da)));
                }
                if self.needs(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(a).data(), true, g.data(), false, &mut db, false);
                    res.push((b, self.with_shape(b, db)));
                }
                res
            }
            &Op::Add(a, b) => vec![(a, self.reduce_broadcast(g, a)), (b, self.reduce_broadcast(g, b))],
            &Op::Sub(a, b) => {
                let neg = Tensor { shape: g.shape().to_vec(), data: g.data().iter().map(|v| -v).collect() };
                vec![(a, self.reduce_broadcast(g, a)), (b, self.reduce_broadcast(&neg, b))]
            }
            &Op::Mul(a, b) => {
                let shape = g.shape();
                let (ia, ib) = (broadcast_index(shape, self.shape(a)), broadcast_index(shape, self.shape(b)));
                let (da, db) = (self.value(a).data(), self.value(b).data());
                let mut res = Vec::new();
                if self.needs(a) {
                    let ga = Tensor { shape: shape.to_vec(), data: g.data().iter().zip(&ib).map(|(v, &j)| v * db[j]).collect() };
                    res.push((a, self.reduce_broadcast(&ga, a)));
                }
                if self.needs(b) {
                    let gb = Tensor { shape: shape.to_vec(), data: g.data().iter().zip(&ia).map(|(v, &j)| v * da[j]).collect() };
                    res.push((b, self.reduce_broadcast(&gb, b)));
                }
                res
            }
            &Op::Scale(a, f) => vec![(a, self.with_shape(a, g.data().iter().map(|v| v * f).collect()))],
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let shape = out.shape();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[axis] * inner;
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let chunk = self.shape(p)[axis] * inner;
                    if self.needs(p) {
                        let mut data = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let base = o * total + offset;
                            data.extend_from_slice(&g.data()[base..base + chunk]);
                        }
                        res.push((p, self.with_shape(p, data)));
                    }
                    offset += chunk;
                }
                res
            }
            &Op::Tanh(a) => {
                let data = g.data().iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                vec![(a, self.with_shape(a, data))]
            }
            &Op::Sigmoid(a) => {
                let data = g.data().iter().zip(out.data()).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                vec![(a, self.with_shape(a, data))]
            }
            &Op::Softmax(a) => {
                let width = *out.shape().last().unwrap_or(&1);
                let mut data = vec![0.0; out.len()];
                for ((dst, y), gv) in data.chunks_mut(width).zip(out.data().chunks(width)).zip(g.data().chunks(width)) {
                    let dot: f64 = y.iter().zip(gv).map(|(a, b)| a * b).sum();
                    for ((d, yv), gg) in dst.iter_mut().zip(y).zip(gv) {
                        *d = yv * (gg - dot);
                    }
                }
                vec![(a, self.with_shape(a, data))]
            }
            &Op::Reshape(a) => vec![(a, self.with_shape(a, g.data().to_vec()))],
            &Op::Slice { input, axis, start } => {
                let shape = self.shape(input);
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = out.shape()[axis];
                let mut data = vec![0.0; self.value(input).len()];
                for o in 0..outer {
                    let dst = (o * shape[axis] + start) * inner;
                    let src = o * len * inner;
                    data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![(input, self.with_shape(input, data))]
            }
            Op::Gather { input, rows } => {
                let inner: usize = self.shape(*input)[1..].iter().product();
                let mut data = vec![0.0; self.value(*input).len()];
                for (k, &r) in rows.iter().enumerate() {
                    for (d, s) in data[r * inner..(r + 1) * inner].iter_mut().zip(&g.data()[k * inner..(k + 1) * inner]) {
                        *d += s;
                    }
                }
                vec![(*input, self.with_shape(*input, data))]
            }
            &Op::Sum(a) => {
                let gv = g.data()[0];
                vec![(a, self.with_shape(a, vec![gv; self.value(a).len()]))]
            }
            &Op::FrobeniusSq(a) => {
                let gv = g.data()[0];
                vec![(a, self.with_shape(a, self.value(a).data().iter().map(|v| 2.0 * gv * v).collect()))]
            }
            Op::Conv2d { input, kernel, geom, cols } => {
                let out_c = *out.shape().last().unwrap_or(&1);
                let (p, q) = (geom.positions(), geom.patch_len());
                let mut res = Vec::new();
                if self.needs(*kernel) {
                    let mut dk = vec![0.0; q * out_c];
                    gemm(q, p, out_c, cols, true, g.data(), false, &mut dk, false);
                    res.push((*kernel, self.with_shape(*kernel, dk)));
                }
                if self.needs(*input) {
                    let mut dcols = vec![0.0; p * q];
                    gemm(p, out_c, q, g.data(), false, self.value(*kernel).data(), true, &mut dcols, false);
                    let mut dx = vec![0.0; self.value(*input).len()];
                    geom.col2im(&dcols, &mut dx);
                    res.push((*input, self.with_shape(*input, dx)));
                }
                res
            }
            Op::Deconv2d { input, kernel, geom } => {
                let c_in = *self.shape(*input).last().unwrap_or(&1);
                let (p, q) = (geom.positions(), geom.patch_len());
                let dcols = geom.im2col(g.data());
                let mut res = Vec::new();
                if self.needs(*kernel) {
                    let mut dk = vec![0.0; q * c_in];
                    gemm(q, p, c_in, &dcols, true, self.value(*input).data(), false, &mut dk, false);
                    res.push((*kernel, self.with_shape(*kernel, dk)));
                }
                if self.needs(*input) {
                    let mut dx = vec![0.0; p * c_in];
                    gemm(p, q, c_in, &dcols, false, self.value(*kernel).data(), false, &mut dx, false);
                    res.push((*input, self.with_shape(*input, dx)));
                }
                res
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn trivial_forward_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(vec![2]));
        let th = g.tanh(z);
        assert_eq!(g.value(th).data(), &[0.0, 0.0]);

        let a = g.constant(Tensor::full(vec![1, 3], 0.7));
        let sm = g.softmax(a).unwrap();
        for v in g.value(sm).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let x = g.constant(Tensor::ones(vec![2, 3]));
        let y = g.constant(Tensor::ones(vec![3, 1]));
        let p = g.matmul(x, y).unwrap();
        assert_eq!(g.shape(p), &[2, 1]);
        assert_eq!(g.value(p).data(), &[3.0, 3.0]);
    }

    #[test]
    fn shape_errors_name_op_and_dims() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.starts_with("matmul"), "{err}");
        assert!(err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(vec![4]));
        assert!(g.add(a, c).unwrap_err().to_string().starts_with("add"));
    }

    #[test]
    fn sum_gradient_is_ones_and_accumulates() {
        let mut g = Graph::new();
        let p = g.variable(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[1.0; 4]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[2.0; 4]);
        g.zero_grads();
        assert!(g.grad(p).is_none());
    }

    #[test]
    fn frobenius_of_equal_tensors_has_zero_gradient() {
        let mut g = Graph::new();
        let p = g.variable(t(&[3], &[0.2, -0.4, 1.0]));
        let q = g.constant(t(&[3], &[0.2, -0.4, 1.0]));
        let d = g.sub(p, q).unwrap();
        let l = g.frobenius_sq(d);
        g.backward(l).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
        assert_eq!(g.grad(p).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let p = g.variable(Tensor::zeros(vec![2]));
        assert!(matches!(g.backward(p), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::ones(vec![2]));
        let p = g.variable(Tensor::ones(vec![2]));
        let m = g.mul(c, p).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert!(g.grad(p).is_some());
    }

    #[test]
    fn conv_then_matched_deconv_restores_spatial_shape() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(vec![5, 2, 4]));
        let k = g.constant(Tensor::ones(vec![2, 2, 4, 3]));
        let y = g.conv2d(x, k, ConvSpec::UNIT).unwrap();
        assert_eq!(g.shape(y), &[4, 1, 3]);
        let kd = g.constant(Tensor::ones(vec![2, 2, 4, 3]));
        let z = g.deconv2d(y, kd, ConvSpec::UNIT).unwrap();
        assert_eq!(g.shape(z), &[5, 2, 4]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1 image, 3x3x1 input, 2x2 kernel, one output channel.
        let mut g = Graph::new();
        let x = g.constant(t(&[3, 3, 1], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let k = g.constant(t(&[2, 2, 1, 1], &[1., 0., 0., -1.]));
        let y = g.conv2d(x, k, ConvSpec::UNIT).unwrap();
        assert_eq!(g.value(y).data(), &[1. - 5., 2. - 6., 4. - 8., 5. - 9.]);
    }
}
