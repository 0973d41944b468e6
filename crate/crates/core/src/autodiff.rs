//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in the order it was applied, so the
//! node list is already topologically sorted; [`Graph::backward`] walks it
//! once in reverse. Broadcasting is limited to scalars; the explicit
//! [`Graph::add_bias`] and [`Graph::row_scale`] ops cover row-vector cases.

use crate::error::{Error, Result};
use crate::tensor::{matmul_a_bt, matmul_at_b, matmul_into, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    RowScale(Var, Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Reciprocal(Var),
    Sum(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    LogSumExp(Var),
    L2Norm(Var, f64),
    Concat(Vec<Var>),
    SliceRows(Var, usize),
    Gather(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the loss or
    /// does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, materialising zeros of `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// Axis decomposition `(outer, axis_len, inner)` of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn drop_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
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

    /// A leaf that gradients are computed for.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        let value = value.check_finite(op_name)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Results that cannot carry a gradient are stored as constants so
        // backward never visits them.
        let op = if rg { op } else { Op::Leaf };
        Ok(self.push(value, op, rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.record(name, out, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        self.record(name, out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        self.unary("reciprocal", a, |x| 1.0 / x, Op::Reciprocal(a))
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let data = matmul_into(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::from_parts(vec![m, n], data);
        self.record("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `[m, n] · [k, n]ᵀ`, giving `[m, k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("matmul_bt")?;
        let (k, n2) = self.value(b).dims2("matmul_bt")?;
        if n != n2 {
            return Err(Error::shape("matmul_bt", format!("[{m}, {n}] x [{k}, {n2}]ᵀ")));
        }
        let data = matmul_a_bt(self.value(a).data(), self.value(b).data(), m, n, k);
        let out = Tensor::from_parts(vec![m, k], data);
        self.record("matmul_bt", out, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let out = Tensor::from_parts(vec![n, m], data);
        self.record("transpose", out, Op::Transpose(a), &[a])
    }

    /// Adds the vector `bias: [n]` to every row of `a: [m, n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("add_bias")?;
        if self.value(bias).shape() != [n] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for rows of width {n}", self.value(bias).shape()),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &bv) in row.iter_mut().zip(b) {
                *x += bv;
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        self.record("add_bias", out, Op::AddBias(a, bias), &[a, bias])
    }

    /// Multiplies row `i` of `a: [m, n]` by `s[i]` for `s: [m]`.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("row_scale")?;
        if self.value(s).shape() != [m] {
            return Err(Error::shape(
                "row_scale",
                format!("scales {:?} for {m} rows", self.value(s).shape()),
            ));
        }
        let sv = self.value(s).data();
        let mut data = self.value(a).data().to_vec();
        for (row, &c) in data.chunks_mut(n).zip(sv) {
            for x in row {
                *x *= c;
            }
        }
        let out = Tensor::from_parts(vec![m, n], data);
        self.record("row_scale", out, Op::RowScale(a, s), &[a, s])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.reduce_axis("sum_axis", a, axis, 1.0)?;
        self.record("sum_axis", out, Op::SumAxis(a, axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let len = *self
            .value(a)
            .shape()
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis} out of range")))?;
        let out = self.reduce_axis("mean_axis", a, axis, 1.0 / len as f64)?;
        self.record("mean_axis", out, Op::MeanAxis(a, axis), &[a])
    }

    fn reduce_axis(&self, op: &'static str, a: Var, axis: usize, factor: f64) -> Result<Tensor> {
        let t = self.value(a);
        if axis >= t.ndim() {
            return Err(Error::shape(op, format!("axis {axis} for shape {:?}", t.shape())));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let src = t.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        if factor != 1.0 {
            for v in &mut data {
                *v *= factor;
            }
        }
        Ok(Tensor::from_parts(drop_axis(t.shape(), axis), data))
    }

    /// `max + ln Σ exp(x − max)` over the last axis.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("log_sum_exp", "scalar input"))?;
        let data = t.data().chunks(n).map(log_sum_exp_slice).collect();
        let shape = t.shape()[..t.ndim() - 1].to_vec();
        let out = Tensor::from_parts(shape, data);
        self.record("log_sum_exp", out, Op::LogSumExp(a), &[a])
    }

    /// Euclidean norm over the last axis, clamped below by `eps`.
    pub fn l2_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let n = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("l2_norm", "scalar input"))?;
        let data = t
            .data()
            .chunks(n)
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps))
            .collect();
        let shape = t.shape()[..t.ndim() - 1].to_vec();
        let out = Tensor::from_parts(shape, data);
        self.record("l2_norm", out, Op::L2Norm(a, eps), &[a])
    }

    /// Stacks tensors along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.ndim() == 0 || t.shape()[1..] != tail[..] {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} does not stack with trailing dims {tail:?}", t.shape()),
                ));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let out = Tensor::from_parts(shape, data);
        self.record("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    /// Rows `start..end` along the first axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let rows = *t.shape().first().ok_or_else(|| Error::shape("slice_rows", "scalar input"))?;
        if start >= end || end > rows {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {rows} rows")));
        }
        let width: usize = t.shape()[1..].iter().product();
        let data = t.data()[start * width..end * width].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        let out = Tensor::from_parts(shape, data);
        self.record("slice_rows", out, Op::SliceRows(a, start), &[a])
    }

    /// Picks elements by flat index into `a`, arranged as `shape`.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(Error::shape("gather", format!("index {bad} of {} elements", t.len())));
        }
        let data: Vec<f64> = indices.iter().map(|&i| t.data()[i]).collect();
        let out = Tensor::new(shape, data)?;
        self.record("gather", out, Op::Gather(a, indices), &[a])
    }

    /// Means of consecutive row segments of `a: [m, n]` with the given
    /// lengths, giving `[lens.len(), n]`.
    pub fn segment_mean(&mut self, a: Var, lens: Vec<usize>) -> Result<Var> {
        let (m, n) = self.value(a).dims2("segment_mean")?;
        if lens.is_empty() || lens.contains(&0) || lens.iter().sum::<usize>() != m {
            return Err(Error::shape(
                "segment_mean",
                format!("segments {lens:?} for {m} rows"),
            ));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; lens.len() * n];
        let mut row = 0;
        for (s, &len) in lens.iter().enumerate() {
            let out = &mut data[s * n..(s + 1) * n];
            for r in row..row + len {
                for (o, &x) in out.iter_mut().zip(&src[r * n..(r + 1) * n]) {
                    *o += x;
                }
            }
            for o in out.iter_mut() {
                *o /= len as f64;
            }
            row += len;
        }
        let out = Tensor::from_parts(vec![lens.len(), n], data);
        self.record("segment_mean", out, Op::SegmentMean(a, lens), &[a])
    }

    /// Reverse pass from a scalar `loss`. The record is consumed: a second
    /// call without rebuilding the forward pass is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Backward("record already consumed; re-run the forward pass"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Backward("loss must be a scalar"));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            for (input, contribution) in self.local_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        // Only leaves keep their gradients.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        let like = |t: &Tensor, data: Vec<f64>| Tensor::from_parts(t.shape().to_vec(), data);
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, like(g, gd.iter().map(|x| -x).collect()))],
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                vec![(*a, like(ta, ga)), (*b, like(tb, gb))]
            }
            Op::Scale(a, c) => vec![(*a, like(g, gd.iter().map(|x| x * c).collect()))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut res = Vec::new();
                if rg(*a) {
                    res.push((*a, like(ta, matmul_a_bt(gd, tb.data(), m, n, k))));
                }
                if rg(*b) {
                    res.push((*b, like(tb, matmul_at_b(ta.data(), gd, m, k, n))));
                }
                res
            }
            Op::MatMulBt(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                let k = tb.shape()[0];
                let mut res = Vec::new();
                if rg(*a) {
                    res.push((*a, like(ta, matmul_into(gd, tb.data(), m, k, n))));
                }
                if rg(*b) {
                    res.push((*b, like(tb, matmul_at_b(gd, ta.data(), m, k, n))));
                }
                res
            }
            Op::Transpose(a) => {
                let ta = self.value(*a);
                let (m, n) = (ta.shape()[0], ta.shape()[1]);
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        data[i * n + j] = gd[j * m + i];
                    }
                }
                vec![(*a, like(ta, data))]
            }
            Op::AddBias(a, bias) => {
                let tb = self.value(*bias);
                let n = tb.len();
                let mut gb = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (acc, x) in gb.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                vec![(*a, g.clone()), (*bias, like(tb, gb))]
            }
            Op::RowScale(a, s) => {
                let (ta, ts) = (self.value(*a), self.value(*s));
                let n = ta.shape()[1];
                let ga = gd
                    .chunks(n)
                    .zip(ts.data())
                    .flat_map(|(row, &c)| row.iter().map(move |x| x * c))
                    .collect();
                let gs = gd
                    .chunks(n)
                    .zip(ta.data().chunks(n))
                    .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                    .collect();
                vec![(*a, like(ta, ga)), (*s, like(ts, gs))]
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let data = gd
                    .iter()
                    .zip(ta.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*a, like(ta, data))]
            }
            Op::Exp(a) => vec![(*a, like(out, gd.iter().zip(out.data()).map(|(g, y)| g * y).collect()))],
            Op::Log(a) => {
                let ta = self.value(*a);
                vec![(*a, like(ta, gd.iter().zip(ta.data()).map(|(g, x)| g / x).collect()))]
            }
            Op::Reciprocal(a) => {
                let ta = self.value(*a);
                let data = gd.iter().zip(out.data()).map(|(g, y)| -g * y * y).collect();
                vec![(*a, like(ta, data))]
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                vec![(*a, Tensor::full(ta.shape(), gd[0]))]
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let ta = self.value(*a);
                let (outer, len, inner) = split_axis(ta.shape(), *axis);
                let factor = if matches!(node.op, Op::MeanAxis(..)) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let mut data = vec![0.0; ta.len()];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        for i in 0..inner {
                            data[base + i] = gd[o * inner + i] * factor;
                        }
                    }
                }
                vec![(*a, like(ta, data))]
            }
            Op::LogSumExp(a) => {
                let ta = self.value(*a);
                let n = *ta.shape().last().unwrap();
                let data = ta
                    .data()
                    .chunks(n)
                    .zip(out.data())
                    .zip(gd)
                    .flat_map(|((row, &lse), &g)| row.iter().map(move |x| g * (x - lse).exp()))
                    .collect();
                vec![(*a, like(ta, data))]
            }
            Op::L2Norm(a, eps) => {
                let ta = self.value(*a);
                let n = *ta.shape().last().unwrap();
                let mut data = vec![0.0; ta.len()];
                for ((row, grow), (&norm, &g)) in ta
                    .data()
                    .chunks(n)
                    .zip(data.chunks_mut(n))
                    .zip(out.data().iter().zip(gd))
                {
                    let raw = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    // clamped branch is constant in the input
                    if raw > *eps {
                        for (d, x) in grow.iter_mut().zip(row) {
                            *d = g * x / norm;
                        }
                    }
                }
                vec![(*a, like(ta, data))]
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let tp = self.value(*p);
                        let slice = gd[offset..offset + tp.len()].to_vec();
                        offset += tp.len();
                        (*p, like(tp, slice))
                    })
                    .collect()
            }
            Op::SliceRows(a, start) => {
                let ta = self.value(*a);
                let width: usize = ta.shape()[1..].iter().product();
                let mut data = vec![0.0; ta.len()];
                data[start * width..start * width + gd.len()].copy_from_slice(gd);
                vec![(*a, like(ta, data))]
            }
            Op::Gather(a, indices) => {
                let ta = self.value(*a);
                let mut data = vec![0.0; ta.len()];
                for (&i, &g) in indices.iter().zip(gd) {
                    data[i] += g;
                }
                vec![(*a, like(ta, data))]
            }
            Op::SegmentMean(a, lens) => {
                let ta = self.value(*a);
                let n = ta.shape()[1];
                let mut data = vec![0.0; ta.len()];
                let mut row = 0;
                for (s, &len) in lens.iter().enumerate() {
                    let gs = &gd[s * n..(s + 1) * n];
                    for r in row..row + len {
                        for (d, &x) in data[r * n..(r + 1) * n].iter_mut().zip(gs) {
                            *d = x / len as f64;
                        }
                    }
                    row += len;
                }
                vec![(*a, like(ta, data))]
            }
        }
    }
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
