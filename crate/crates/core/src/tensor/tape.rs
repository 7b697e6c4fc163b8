use std::collections::HashMap;

use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Sqrt(Var),
    Log(Var),
    Exp(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MaxScalar(Var, f64),
    MinScalar(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    RowNormalize(Var),
    Concat(Var, Var, usize),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation graph. Nodes are appended in evaluation order, so the
/// node list is always topologically sorted.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Per-output-dimension strides into `shape`, zero where `shape` is broadcast.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        if shape[d] != 1 {
            strides[d + offset] = acc;
        }
        acc *= shape[d];
    }
    strides
}

fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    let rank = out.len();
    let mut counter = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            counter[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if counter[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            counter[d] = 0;
        }
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn adjoint(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn finish(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value.with_requires_grad(false), Op::Leaf, false)
    }

    /// A free leaf whose gradient accumulates on the tape (see [`Tape::grad`]).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let mut value = value.with_requires_grad(true);
        value.clear_grad();
        self.push(value, Op::Leaf, true)
    }

    /// Copies a parameter onto the tape. Repeated calls for the same id reuse
    /// one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut value = store.get(id).clone();
        value.clear_grad();
        let v = self.push(value, Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on a leaf by previous backward passes.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            }
        })?;
        let values = if ta.shape() == tb.shape() {
            ta.values()
                .iter()
                .zip(tb.values())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let total = out_shape.iter().product();
            let mut values = vec![0.0; total];
            let sa = broadcast_strides(ta.shape(), &out_shape);
            let sb = broadcast_strides(tb.shape(), &out_shape);
            let (va, vb) = (ta.values(), tb.values());
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                values[o] = f(va[ia], vb[ib]);
            });
            values
        };
        let value = Tensor::new(out_shape, values)?;
        self.finish(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(&z) = self.nodes[b.0].value.values().iter().find(|&&v| v == 0.0) {
            return Err(TensorError::Domain { op: "div", value: z });
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let src = &self.nodes[a.0].value;
        let values = src.values().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), values)?;
        self.finish(name, value, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self.nodes[a.0].value.values().iter().find(|&&v| v < 0.0) {
            return Err(TensorError::Domain { op: "sqrt", value: x });
        }
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    /// Natural log. Inputs must be strictly positive; callers clamp first.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&x) = self.nodes[a.0].value.values().iter().find(|&&v| v <= 0.0) {
            return Err(TensorError::Domain { op: "log", value: x });
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    /// `max(x, floor)`; the gradient passes only where `x > floor`.
    pub fn max_scalar(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.unary("max_scalar", a, |x| x.max(floor), Op::MaxScalar(a, floor))
    }

    /// `min(x, ceil)`; the gradient passes only where `x < ceil`.
    pub fn min_scalar(&mut self, a: Var, ceil: f64) -> Result<Var> {
        self.unary("min_scalar", a, |x| x.min(ceil), Op::MinScalar(a, ceil))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.max_scalar(a, lo)?;
        self.min_scalar(v, hi)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.values().iter().sum();
        self.finish("sum", Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        let s = t.values().iter().sum::<f64>() / t.len() as f64;
        self.finish("mean", Tensor::scalar(s), Op::MeanAll(a), &[a])
    }

    fn reduce_axis(&mut self, a: Var, axis: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let t = &self.nodes[a.0].value;
        if axis >= t.shape().len() {
            return Err(TensorError::Axis {
                axis,
                shape: t.shape().to_vec(),
            });
        }
        let (outer, mid, inner) = split_axis(t.shape(), axis);
        let src = t.values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok((shape, out))
    }

    /// Sums over `axis`, dropping it: `[[1,2],[3,4]]` along axis 1 is `[3,7]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, values) = self.reduce_axis(a, axis)?;
        let value = Tensor::new(shape, values)?;
        self.finish("sum_axis", value, Op::SumAxis(a, axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, mut values) = self.reduce_axis(a, axis)?;
        let n = self.nodes[a.0].value.shape()[axis] as f64;
        values.iter_mut().for_each(|v| *v /= n);
        let value = Tensor::new(shape, values)?;
        self.finish("mean_axis", value, Op::MeanAxis(a, axis), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != t.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: t.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape.to_vec(), t.values().to_vec())?;
        self.finish("reshape", value, Op::Reshape(a), &[a])
    }

    fn matrix_dims(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let s = self.nodes[a.0].value.shape();
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op,
                left: s.to_vec(),
                right: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("matmul", a)?;
        let (m2, p) = self.matrix_dims("matmul", b)?;
        if m != m2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![n, m],
                right: vec![m2, p],
            });
        }
        let va = self.nodes[a.0].value.values();
        let vb = self.nodes[b.0].value.values();
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let dst = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let x = va[i * m + k];
                if x == 0.0 {
                    continue;
                }
                for (d, &y) in dst.iter_mut().zip(&vb[k * p..(k + 1) * p]) {
                    *d += x * y;
                }
            }
        }
        let value = Tensor::matrix(n, p, out)?;
        self.finish("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("transpose", a)?;
        let src = self.nodes[a.0].value.values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = src[i * m + j];
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        self.finish("transpose", value, Op::Transpose(a), &[a])
    }

    /// Divides every row of a matrix by its sum. Row sums must be positive.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("row_normalize", a)?;
        let src = self.nodes[a.0].value.values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &src[i * m..(i + 1) * m];
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(TensorError::Domain {
                    op: "row_normalize",
                    value: s,
                });
            }
            for (d, &x) in out[i * m..(i + 1) * m].iter_mut().zip(row) {
                *d = x / s;
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        self.finish("row_normalize", value, Op::RowNormalize(a), &[a])
    }

    /// Joins two tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(d, (x, y))| d == axis || x == y);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                left: sa,
                right: sb,
            });
        }
        let (outer, ma, inner) = split_axis(&sa, axis);
        let mb = sb[axis];
        let (va, vb) = (self.value(a).values(), self.value(b).values());
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for o in 0..outer {
            out.extend_from_slice(&va[o * ma * inner..(o + 1) * ma * inner]);
            out.extend_from_slice(&vb[o * mb * inner..(o + 1) * mb * inner]);
        }
        let mut shape = sa;
        shape[axis] = ma + mb;
        let value = Tensor::new(shape, out)?;
        self.finish("concat", value, Op::Concat(a, b, axis), &[a, b])
    }

    /// Selects rows (first-axis slices); indices may repeat.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).select_rows(indices)?;
        self.finish("gather_rows", value, Op::GatherRows(a, indices.to_vec()), &[a])
    }

    /// Accumulates d`loss`/d`leaf` into every free leaf on the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_impl(loss, None)
    }

    /// Like [`Tape::backward`], additionally accumulating parameter gradients
    /// into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.backward_impl(loss, Some(store))
    }

    fn backward_impl(&mut self, loss: Var, mut store: Option<&mut ParamStore>) -> Result<()> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let adj = self.propagate(loss);
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !node.requires_grad || !matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let delta = adj[i]
                .clone()
                .unwrap_or_else(|| vec![0.0; node.value.len()]);
            if delta.iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            node.value.accumulate_grad(&delta);
            if let (Op::Param(id), Some(store)) = (&node.op, store.as_deref_mut()) {
                store.get_mut(*id).accumulate_grad(&delta);
            }
        }
        Ok(())
    }

    fn propagate(&self, loss: Var) -> Vec<Option<Vec<f64>>> {
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.backprop_node(node, &g, &mut adj);
            adj[i] = Some(g);
        }
        adj
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                self.backprop_binary(&node.op, out, g, a, b, adj);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (n, m, p) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.needs(a) {
                    let da = adjoint(adj, a, n * m);
                    let vb = tb.values();
                    for i in 0..n {
                        let gi = &g[i * p..(i + 1) * p];
                        for k in 0..m {
                            let bk = &vb[k * p..(k + 1) * p];
                            da[i * m + k] += gi.iter().zip(bk).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if self.needs(b) {
                    let db = adjoint(adj, b, m * p);
                    let va = ta.values();
                    for i in 0..n {
                        let gi = &g[i * p..(i + 1) * p];
                        for k in 0..m {
                            let x = va[i * m + k];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, &y) in db[k * p..(k + 1) * p].iter_mut().zip(gi) {
                                *d += x * y;
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (out.shape()[1], out.shape()[0]);
                let da = adjoint(adj, a, n * m);
                for i in 0..n {
                    for j in 0..m {
                        da[i * m + j] += g[j * n + i];
                    }
                }
            }
            Op::Reshape(a) | Op::AddScalar(a) => {
                let da = adjoint(adj, a, g.len());
                da.iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
            Op::Scale(a, c) => {
                let da = adjoint(adj, a, g.len());
                da.iter_mut().zip(g).for_each(|(d, x)| *d += c * x);
            }
            Op::Relu(a) => self.backprop_unary(a, g, adj, |x, _| if x > 0.0 { 1.0 } else { 0.0 }, out),
            Op::Sigmoid(a) => self.backprop_unary(a, g, adj, |_, y| y * (1.0 - y), out),
            Op::Square(a) => self.backprop_unary(a, g, adj, |x, _| 2.0 * x, out),
            Op::Sqrt(a) => self.backprop_unary(a, g, adj, |_, y| 0.5 / y, out),
            Op::Log(a) => self.backprop_unary(a, g, adj, |x, _| 1.0 / x, out),
            Op::Exp(a) => self.backprop_unary(a, g, adj, |_, y| y, out),
            Op::MaxScalar(a, floor) => {
                self.backprop_unary(a, g, adj, |x, _| if x > floor { 1.0 } else { 0.0 }, out)
            }
            Op::MinScalar(a, ceil) => {
                self.backprop_unary(a, g, adj, |x, _| if x < ceil { 1.0 } else { 0.0 }, out)
            }
            Op::SumAll(a) => {
                let len = self.value(a).len();
                let da = adjoint(adj, a, len);
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::MeanAll(a) => {
                let len = self.value(a).len();
                let da = adjoint(adj, a, len);
                let s = g[0] / len as f64;
                da.iter_mut().for_each(|d| *d += s);
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let shape = self.value(a).shape().to_vec();
                let (outer, mid, inner) = split_axis(&shape, axis);
                let scale = if matches!(node.op, Op::MeanAxis(..)) {
                    1.0 / mid as f64
                } else {
                    1.0
                };
                let da = adjoint(adj, a, outer * mid * inner);
                for o in 0..outer {
                    let go = &g[o * inner..(o + 1) * inner];
                    for m in 0..mid {
                        let base = (o * mid + m) * inner;
                        for (d, &x) in da[base..base + inner].iter_mut().zip(go) {
                            *d += scale * x;
                        }
                    }
                }
            }
            Op::RowNormalize(a) => {
                let src = self.value(a);
                let (n, m) = (src.shape()[0], src.shape()[1]);
                let y = out.values();
                let da = adjoint(adj, a, n * m);
                for i in 0..n {
                    let s: f64 = src.row(i).iter().sum();
                    let row = i * m..(i + 1) * m;
                    let dot: f64 = g[row.clone()].iter().zip(&y[row.clone()]).map(|(a, b)| a * b).sum();
                    for j in row {
                        da[j] += (g[j] - dot) / s;
                    }
                }
            }
            Op::Concat(a, b, axis) => {
                let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
                let (outer, ma, inner) = split_axis(sa, axis);
                let mb = sb[axis];
                let (la, lb) = (ma * inner, mb * inner);
                if self.needs(a) {
                    let da = adjoint(adj, a, outer * la);
                    for o in 0..outer {
                        let src = &g[o * (la + lb)..o * (la + lb) + la];
                        da[o * la..(o + 1) * la].iter_mut().zip(src).for_each(|(d, x)| *d += x);
                    }
                }
                if self.needs(b) {
                    let db = adjoint(adj, b, outer * lb);
                    for o in 0..outer {
                        let src = &g[o * (la + lb) + la..(o + 1) * (la + lb)];
                        db[o * lb..(o + 1) * lb].iter_mut().zip(src).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::GatherRows(a, ref indices) => {
                let src = self.value(a);
                let width = src.len() / src.shape()[0];
                let da = adjoint(adj, a, src.len());
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut da[i * width..(i + 1) * width];
                    dst.iter_mut()
                        .zip(&g[r * width..(r + 1) * width])
                        .for_each(|(d, x)| *d += x);
                }
            }
        }
    }

    /// `local(x, y)` is dy/dx given input `x` and output `y`.
    fn backprop_unary(
        &self,
        a: Var,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
        local: impl Fn(f64, f64) -> f64,
        out: &Tensor,
    ) {
        let x = self.value(a).values();
        let da = adjoint(adj, a, g.len());
        for (((d, &gi), &xi), &yi) in da.iter_mut().zip(g).zip(x).zip(out.values()) {
            *d += gi * local(xi, yi);
        }
    }

    fn backprop_binary(
        &self,
        op: &Op,
        out: &Tensor,
        g: &[f64],
        a: Var,
        b: Var,
        adj: &mut [Option<Vec<f64>>],
    ) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (va, vb) = (ta.values(), tb.values());
        let out_shape = out.shape();
        let sa = broadcast_strides(ta.shape(), out_shape);
        let sb = broadcast_strides(tb.shape(), out_shape);
        let (need_a, need_b) = (self.needs(a), self.needs(b));
        let mut ga = vec![0.0; va.len()];
        let mut gb = vec![0.0; vb.len()];
        for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| {
            let (x, y, go) = (va[ia], vb[ib], g[o]);
            let (dx, dy) = match op {
                Op::Add(..) => (go, go),
                Op::Sub(..) => (go, -go),
                Op::Mul(..) => (go * y, go * x),
                _ => (go / y, -go * x / (y * y)),
            };
            ga[ia] += dx;
            gb[ib] += dy;
        });
        if need_a {
            let da = adjoint(adj, a, va.len());
            da.iter_mut().zip(&ga).for_each(|(d, x)| *d += x);
        }
        if need_b {
            let db = adjoint(adj, b, vb.len());
            db.iter_mut().zip(&gb).for_each(|(d, x)| *d += x);
        }
    }
}
