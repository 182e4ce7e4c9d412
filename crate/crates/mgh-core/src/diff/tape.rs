use super::array::Array;
use super::store::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

/// Norms below this are treated as zero in cosine similarity.
const COSINE_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    /// Constant or input; no backward.
    Leaf,
    /// Leaf bound to a store parameter; receives gradient.
    Param(ParamId),
    Matmul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Scale { x: ValueId, c: f64 },
    Relu { x: ValueId },
    Sqrt { x: ValueId },
    Softplus { x: ValueId },
    Softmax { x: ValueId },
    LogSumExp { x: ValueId },
    Sum { x: ValueId },
    MeanRows { x: ValueId },
    StackRows { rows: Vec<ValueId> },
    Concat { a: ValueId, b: ValueId },
    Index { x: ValueId, i: usize },
    Cosine { a: ValueId, b: ValueId },
    Reshape { x: ValueId },
}

struct Node {
    op: Op,
    value: Array,
}

/// Topologically ordered record of primitive applications.
///
/// Every input precedes its consumer; replaying backward in reverse order
/// accumulates gradients for every reachable parameter. A tape is confined
/// to one forward/backward pass; independent tapes may run concurrently
/// against a shared read-only [`ParamStore`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Array {
        &self.nodes[id.0].value
    }

    /// Record a constant input.
    pub fn leaf(&mut self, value: Array) -> ValueId {
        self.push_unchecked(Op::Leaf, value)
    }

    /// Record a scalar constant.
    pub fn scalar(&mut self, v: f64) -> ValueId {
        self.leaf(Array::scalar(v))
    }

    /// Bind a store parameter as a leaf; its gradient is accumulated by
    /// [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> ValueId {
        self.push_unchecked(Op::Param(id), store.get(id).value.clone())
    }

    fn push_unchecked(&mut self, op: Op, value: Array) -> ValueId {
        self.nodes.push(Node { op, value });
        ValueId(self.nodes.len() - 1)
    }

    fn check_same_shape(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_nonempty_1d(&self, op: &'static str, x: ValueId) -> Result<()> {
        let s = self.value(x).shape();
        if s.len() != 1 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        if s[0] == 0 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![1],
            });
        }
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<ValueId> {
        let value = eval_op(&op, &self.nodes)?;
        Ok(self.push_unchecked(op, value))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        self.push(Op::Matmul { a, b })
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("add", a, b)?;
        self.push(Op::Add { a, b })
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("sub", a, b)?;
        self.push(Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("mul", a, b)?;
        self.push(Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        self.push(Op::Scale { x, c })
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Relu { x })
    }

    pub fn sqrt(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Sqrt { x })
    }

    pub fn softplus(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Softplus { x })
    }

    /// Numerically stabilized softmax over a non-empty 1-D array.
    pub fn softmax(&mut self, x: ValueId) -> Result<ValueId> {
        self.check_nonempty_1d("softmax", x)?;
        self.push(Op::Softmax { x })
    }

    /// log(sum(exp(x))) over a non-empty 1-D array, max-shifted.
    pub fn logsumexp(&mut self, x: ValueId) -> Result<ValueId> {
        self.check_nonempty_1d("logsumexp", x)?;
        self.push(Op::LogSumExp { x })
    }

    /// Sum of all elements.
    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        self.push(Op::Sum { x })
    }

    /// Column-wise mean of a 2-D array with at least one row.
    pub fn mean_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "mean_rows",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        if s[0] == 0 {
            return Err(Error::EmptyReduction("mean_rows"));
        }
        self.push(Op::MeanRows { x })
    }

    /// Stack equal-length 1-D arrays into a 2-D array, one per row.
    pub fn stack_rows(&mut self, rows: &[ValueId]) -> Result<ValueId> {
        if rows.is_empty() {
            return Err(Error::EmptyReduction("stack_rows"));
        }
        let d = self.value(rows[0]).numel();
        for &r in rows {
            let s = self.value(r).shape();
            if s.len() != 1 || s[0] != d {
                return Err(Error::Shape {
                    op: "stack_rows",
                    lhs: vec![d],
                    rhs: s.to_vec(),
                });
            }
        }
        self.push(Op::StackRows {
            rows: rows.to_vec(),
        })
    }

    /// Concatenate two 1-D arrays.
    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        for id in [a, b] {
            let s = self.value(id).shape();
            if s.len() != 1 {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.value(a).shape().to_vec(),
                    rhs: self.value(b).shape().to_vec(),
                });
            }
        }
        self.push(Op::Concat { a, b })
    }

    /// Extract element `i` of a 1-D array as a scalar.
    pub fn index(&mut self, x: ValueId, i: usize) -> Result<ValueId> {
        let s = self.value(x).shape();
        if s.len() != 1 || i >= s[0] {
            return Err(Error::Shape {
                op: "index",
                lhs: s.to_vec(),
                rhs: vec![i],
            });
        }
        self.push(Op::Index { x, i })
    }

    /// Cosine similarity of two equal-length 1-D arrays; zero (with zero
    /// gradient) when either norm is below 1e-12.
    pub fn cosine(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 1 || sb.len() != 1 || sa[0] != sb[0] {
            return Err(Error::Shape {
                op: "cosine",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        self.push(Op::Cosine { a, b })
    }

    /// View with a new shape of identical element count; gradient passes
    /// through unchanged.
    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.value(x).shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let id = self.push(Op::Reshape { x })?;
        self.nodes[id.0].value.set_shape(shape.to_vec());
        Ok(id)
    }

    // ── Convenience compositions ─────────────────────────────────────

    /// w[m,n] · x[n] -> [m].
    pub fn matvec(&mut self, w: ValueId, x: ValueId) -> Result<ValueId> {
        let n = self.value(x).numel();
        let m = self.value(w).shape()[0];
        let col = self.reshape(x, &[n, 1])?;
        let out = self.matmul(w, col)?;
        self.reshape(out, &[m])
    }

    /// weights[k] ⋅ rows[k,d] -> [d]: convex/weighted combination of rows.
    pub fn weighted_rows(&mut self, weights: ValueId, rows: ValueId) -> Result<ValueId> {
        let k = self.value(weights).numel();
        let d = self.value(rows).shape()[1];
        let row_vec = self.reshape(weights, &[1, k])?;
        let out = self.matmul(row_vec, rows)?;
        self.reshape(out, &[d])
    }

    /// Gather scalar nodes into a 1-D array.
    pub fn stack_scalars(&mut self, scalars: &[ValueId]) -> Result<ValueId> {
        let stacked = self.stack_rows(scalars)?;
        self.reshape(stacked, &[scalars.len()])
    }

    /// Mean of all elements.
    pub fn mean(&mut self, x: ValueId) -> Result<ValueId> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::EmptyReduction("mean"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Euclidean distance ||a - b||₂ of two 1-D arrays.
    pub fn l2_distance(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        let s = self.sum(sq)?;
        self.sqrt(s)
    }

    // ── Backward and replay ──────────────────────────────────────────

    /// Accumulate d loss / d θ into every parameter reachable from `loss`.
    ///
    /// Additive: calling twice without a grad reset doubles every gradient.
    pub fn backward(&mut self, loss: ValueId, store: &mut ParamStore) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.value(loss).shape().to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for nid in (0..=loss.0).rev() {
            let g = match &grads[nid] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backprop_node(nid, &g, &mut grads);
        }

        for (nid, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pid) = node.op {
                if let Some(g) = &grads[nid] {
                    let ga = Array::from_vec(node.value.shape(), g.clone())
                        .expect("gradient matches value shape");
                    store.accumulate_grad(pid, &ga)?;
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, nid: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: ValueId| -> &Array { &self.nodes[id.0].value };
        let mut acc = |id: ValueId, contrib: &mut dyn FnMut(&mut [f64])| {
            let slot =
                grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.numel()]);
            contrib(slot);
        };

        match &self.nodes[nid].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Matmul { a, b } => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                let (av, bv) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |da| {
                    // dA += G · Bᵀ
                    for i in 0..m {
                        for j in 0..k {
                            let mut s = 0.0;
                            for t in 0..n {
                                s += g[i * n + t] * bv[j * n + t];
                            }
                            da[i * k + j] += s;
                        }
                    }
                });
                acc(*b, &mut |db| {
                    // dB += Aᵀ · G
                    for j in 0..k {
                        for t in 0..n {
                            let mut s = 0.0;
                            for i in 0..m {
                                s += av[i * k + j] * g[i * n + t];
                            }
                            db[j * n + t] += s;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |da| {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
                acc(*b, &mut |db| {
                    for (d, gi) in db.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            }
            Op::Sub { a, b } => {
                acc(*a, &mut |da| {
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
                acc(*b, &mut |db| {
                    for (d, gi) in db.iter_mut().zip(g) {
                        *d -= gi;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a).data().to_vec(), val(*b).data().to_vec());
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                acc(*x, &mut |dx| {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += c * gi;
                    }
                });
            }
            Op::Relu { x } => {
                let xv = val(*x).data().to_vec();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        if xv[i] > 0.0 {
                            dx[i] += g[i];
                        }
                    }
                });
            }
            Op::Sqrt { x } => {
                let out = self.nodes[nid].value.data().to_vec();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] / (2.0 * out[i].max(1e-12));
                    }
                });
            }
            Op::Softplus { x } => {
                let xv = val(*x).data().to_vec();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * sigmoid(xv[i]);
                    }
                });
            }
            Op::Softmax { x } => {
                let y = self.nodes[nid].value.data().to_vec();
                let dot: f64 = g.iter().zip(&y).map(|(gi, yi)| gi * yi).sum();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += y[i] * (g[i] - dot);
                    }
                });
            }
            Op::LogSumExp { x } => {
                let sm = softmax_values(val(*x).data());
                let g0 = g[0];
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g0 * sm[i];
                    }
                });
            }
            Op::Sum { x } => {
                let g0 = g[0];
                acc(*x, &mut |dx| {
                    for d in dx.iter_mut() {
                        *d += g0;
                    }
                });
            }
            Op::MeanRows { x } => {
                let m = val(*x).shape()[0];
                let n = val(*x).shape()[1];
                let inv = 1.0 / m as f64;
                acc(*x, &mut |dx| {
                    for r in 0..m {
                        for c in 0..n {
                            dx[r * n + c] += g[c] * inv;
                        }
                    }
                });
            }
            Op::StackRows { rows } => {
                let d = self.nodes[nid].value.shape()[1];
                for (r, &row) in rows.iter().enumerate() {
                    acc(row, &mut |dr| {
                        for c in 0..d {
                            dr[c] += g[r * d + c];
                        }
                    });
                }
            }
            Op::Concat { a, b } => {
                let m = val(*a).numel();
                acc(*a, &mut |da| {
                    for i in 0..m {
                        da[i] += g[i];
                    }
                });
                acc(*b, &mut |db| {
                    for (i, d) in db.iter_mut().enumerate() {
                        *d += g[m + i];
                    }
                });
            }
            Op::Index { x, i } => {
                let (i, g0) = (*i, g[0]);
                acc(*x, &mut |dx| {
                    dx[i] += g0;
                });
            }
            Op::Cosine { a, b } => {
                let av = val(*a).data().to_vec();
                let bv = val(*b).data().to_vec();
                let na = norm(&av);
                let nb = norm(&bv);
                if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
                    return; // defined as 0 with zero gradient
                }
                let c = self.nodes[nid].value.data()[0];
                let g0 = g[0];
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g0 * (bv[i] / (na * nb) - c * av[i] / (na * na));
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g0 * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                    }
                });
            }
            Op::Reshape { x } => {
                acc(*x, &mut |dx| {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += gi;
                    }
                });
            }
        }
    }

    /// Recompute every non-leaf value in order, rebinding parameters from
    /// `store`. With unchanged parameter values the results are bitwise
    /// identical to the original forward pass.
    pub fn replay(&mut self, store: &ParamStore) -> Result<()> {
        for i in 0..self.nodes.len() {
            let value = match &self.nodes[i].op {
                Op::Leaf => continue,
                Op::Param(pid) => store.get(*pid).value.clone(),
                op => {
                    let mut v = eval_op(op, &self.nodes[..i])?;
                    if let Op::Reshape { .. } = op {
                        v.set_shape(self.nodes[i].value.shape().to_vec());
                    }
                    v
                }
            };
            self.nodes[i].value = value;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Softplus log(1 + e^x) without overflow for large |x|.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn eval_op(op: &Op, nodes: &[Node]) -> Result<Array> {
    let val = |id: &ValueId| -> &Array { &nodes[id.0].value };
    let out = match op {
        Op::Leaf | Op::Param(_) => unreachable!("leaves are never re-evaluated"),
        Op::Matmul { a, b } => {
            let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
            let n = val(b).shape()[1];
            let (av, bv) = (val(a).data(), val(b).data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..k {
                    let aij = av[i * k + j];
                    for t in 0..n {
                        out[i * n + t] += aij * bv[j * n + t];
                    }
                }
            }
            Array::from_vec(&[m, n], out)?
        }
        Op::Add { a, b } => zip_elementwise(val(a), val(b), |x, y| x + y),
        Op::Sub { a, b } => zip_elementwise(val(a), val(b), |x, y| x - y),
        Op::Mul { a, b } => zip_elementwise(val(a), val(b), |x, y| x * y),
        Op::Scale { x, c } => map_elementwise(val(x), |v| v * c),
        Op::Relu { x } => map_elementwise(val(x), |v| v.max(0.0)),
        Op::Sqrt { x } => map_elementwise(val(x), f64::sqrt),
        Op::Softplus { x } => map_elementwise(val(x), softplus),
        Op::Softmax { x } => Array::vector(softmax_values(val(x).data())),
        Op::LogSumExp { x } => {
            let d = val(x).data();
            let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = d.iter().map(|v| (v - max).exp()).sum();
            Array::scalar(max + s.ln())
        }
        Op::Sum { x } => Array::scalar(val(x).data().iter().sum()),
        Op::MeanRows { x } => {
            let (m, n) = (val(x).shape()[0], val(x).shape()[1]);
            let d = val(x).data();
            let mut out = vec![0.0; n];
            for r in 0..m {
                for c in 0..n {
                    out[c] += d[r * n + c];
                }
            }
            out.iter_mut().for_each(|v| *v /= m as f64);
            Array::vector(out)
        }
        Op::StackRows { rows } => {
            let d = val(&rows[0]).numel();
            let mut out = Vec::with_capacity(rows.len() * d);
            for r in rows {
                out.extend_from_slice(val(r).data());
            }
            Array::from_vec(&[rows.len(), d], out)?
        }
        Op::Concat { a, b } => {
            let mut out = val(a).data().to_vec();
            out.extend_from_slice(val(b).data());
            Array::vector(out)
        }
        Op::Index { x, i } => Array::scalar(val(x).data()[*i]),
        Op::Cosine { a, b } => {
            let (av, bv) = (val(a).data(), val(b).data());
            let (na, nb) = (norm(av), norm(bv));
            if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
                Array::scalar(0.0)
            } else {
                let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
                Array::scalar(dot / (na * nb))
            }
        }
        Op::Reshape { x } => val(x).clone(),
    };
    if let Some(idx) = out.first_non_finite() {
        return Err(Error::NonFinite {
            op: op_name(op),
            index: idx,
        });
    }
    Ok(out)
}

fn zip_elementwise(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Array::from_vec(a.shape(), data).expect("shapes pre-checked")
}

fn map_elementwise(x: &Array, f: impl Fn(f64) -> f64) -> Array {
    let data = x.data().iter().map(|v| f(*v)).collect();
    Array::from_vec(x.shape(), data).expect("same shape")
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param(_) => "param",
        Op::Matmul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Relu { .. } => "relu",
        Op::Sqrt { .. } => "sqrt",
        Op::Softplus { .. } => "softplus",
        Op::Softmax { .. } => "softmax",
        Op::LogSumExp { .. } => "logsumexp",
        Op::Sum { .. } => "sum",
        Op::MeanRows { .. } => "mean_rows",
        Op::StackRows { .. } => "stack_rows",
        Op::Concat { .. } => "concat",
        Op::Index { .. } => "index",
        Op::Cosine { .. } => "cosine",
        Op::Reshape { .. } => "reshape",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(t: &mut Tape, v: Vec<f64>) -> ValueId {
        t.leaf(Array::vector(v))
    }

    #[test]
    fn matmul_identity_and_analytic() {
        let mut t = Tape::new();
        let eye = t
            .leaf(Array::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = t.leaf(Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = t.matmul(eye, m).unwrap();
        assert_eq!(t.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.leaf(Array::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let b = t.leaf(Array::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap());
        let p = t.matmul(a, b).unwrap();
        assert_eq!(t.value(p).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Array::zeros(&[2, 3]));
        let b = t.leaf(Array::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_cases() {
        let mut t = Tape::new();
        let x = vec1(&mut t, vec![0.0, 0.0]);
        let y = t.softmax(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);

        let x = vec1(&mut t, vec![2.0f64.ln(), 0.0]);
        let y = t.softmax(x).unwrap();
        let d = t.value(y).data();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-12);

        // Max subtraction keeps huge logits finite.
        let x = vec1(&mut t, vec![1000.0, 0.0]);
        let y = t.softmax(x).unwrap();
        let d = t.value(y).data();
        assert!(d[0] > 1.0 - 1e-12 && d[1] < 1e-12);

        let empty = t.leaf(Array::vector(vec![]));
        assert!(t.softmax(empty).is_err());
    }

    #[test]
    fn cosine_cases() {
        let mut t = Tape::new();
        let a = vec1(&mut t, vec![1.0, 0.0]);
        let b = vec1(&mut t, vec![1.0, 0.0]);
        let c = t.cosine(a, b).unwrap();
        assert_eq!(t.value(c).item().unwrap(), 1.0);

        let a = vec1(&mut t, vec![1.0, 0.0]);
        let b = vec1(&mut t, vec![0.0, 1.0]);
        let c = t.cosine(a, b).unwrap();
        assert_eq!(t.value(c).item().unwrap(), 0.0);

        let a = vec1(&mut t, vec![1.0, 1.0]);
        let b = vec1(&mut t, vec![1.0, 0.0]);
        let c = t.cosine(a, b).unwrap();
        assert!((t.value(c).item().unwrap() - 0.70710678).abs() < 1e-8);

        // Near-zero vector: defined as 0.
        let a = vec1(&mut t, vec![0.0, 0.0]);
        let b = vec1(&mut t, vec![1.0, 0.0]);
        let c = t.cosine(a, b).unwrap();
        assert_eq!(t.value(c).item().unwrap(), 0.0);
    }

    #[test]
    fn mean_rows_cases() {
        let mut t = Tape::new();
        let x = t.leaf(Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m = t.mean_rows(x).unwrap();
        assert_eq!(t.value(m).data(), &[2.0, 3.0]);

        let single = t.leaf(Array::from_vec(&[1, 2], vec![5.0, 6.0]).unwrap());
        let m = t.mean_rows(single).unwrap();
        assert_eq!(t.value(m).data(), &[5.0, 6.0]);

        let empty = t.leaf(Array::zeros(&[0, 2]));
        assert!(matches!(
            t.mean_rows(empty),
            Err(Error::EmptyReduction("mean_rows"))
        ));
    }

    #[test]
    fn concat_cases() {
        let mut t = Tape::new();
        let a = vec1(&mut t, vec![1.0]);
        let b = vec1(&mut t, vec![2.0, 3.0]);
        let c = t.concat(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);

        let empty = t.leaf(Array::vector(vec![]));
        let b = vec1(&mut t, vec![7.0]);
        let c = t.concat(empty, b).unwrap();
        assert_eq!(t.value(c).data(), &[7.0]);

        let m = t.leaf(Array::zeros(&[2, 2]));
        let v = vec1(&mut t, vec![1.0]);
        assert!(t.concat(m, v).is_err());
    }

    #[test]
    fn relu_cases() {
        let mut t = Tape::new();
        let x = vec1(&mut t, vec![-1.0, 0.0, 2.0]);
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);

        let x = vec1(&mut t, vec![-3.0, -0.5]);
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_linear_analytic() {
        // loss = sum(W·x) with x fixed → dW = outer(1, x).
        let mut store = ParamStore::new();
        let w = store
            .add("w", Array::from_vec(&[2, 3], vec![0.5; 6]).unwrap())
            .unwrap();
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let x = t.leaf(Array::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = t.matmul(wv, x).unwrap();
        let loss = t.sum(y).unwrap();
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_is_additive() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array::vector(vec![2.0, -1.0])).unwrap();
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let sq = t.mul(wv, wv).unwrap();
        let loss = t.sum(sq).unwrap();
        t.backward(loss, &mut store).unwrap();
        let first = store.get(w).grad.data().to_vec();
        t.backward(loss, &mut store).unwrap();
        let second = store.get(w).grad.data().to_vec();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array::vector(vec![1.0, 2.0])).unwrap();
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        assert!(matches!(
            t.backward(wv, &mut store),
            Err(Error::Shape { op: "backward", .. })
        ));
    }

    #[test]
    fn unreachable_params_untouched() {
        let mut store = ParamStore::new();
        let used = store.add("used", Array::vector(vec![1.0])).unwrap();
        let unused = store.add("unused", Array::vector(vec![1.0])).unwrap();
        let mut t = Tape::new();
        let uv = t.param(&store, used);
        let _orphan = t.param(&store, unused);
        let loss = t.sum(uv).unwrap();
        t.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(used).grad.data(), &[1.0]);
        assert_eq!(store.get(unused).grad.data(), &[0.0]);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let mut store = ParamStore::new();
        let w = store
            .add("w", Array::from_vec(&[2, 2], vec![0.3, -1.7, 2.9, 0.001]).unwrap())
            .unwrap();
        let mut t = Tape::new();
        let wv = t.param(&store, w);
        let x = t.leaf(Array::from_vec(&[2, 1], vec![0.77, -0.13]).unwrap());
        let y = t.matmul(wv, x).unwrap();
        let flat = t.reshape(y, &[2]).unwrap();
        let sm = t.softmax(flat).unwrap();
        let loss = t.logsumexp(sm).unwrap();
        let before = t.value(loss).data().to_vec();
        let before_sm = t.value(sm).data().to_vec();
        t.replay(&store).unwrap();
        assert_eq!(t.value(loss).data(), before.as_slice());
        assert_eq!(t.value(sm).data(), before_sm.as_slice());
    }

    #[test]
    fn non_finite_is_reported() {
        let mut t = Tape::new();
        let x = vec1(&mut t, vec![-1.0]);
        match t.sqrt(x) {
            Err(Error::NonFinite { op: "sqrt", index }) => assert_eq!(index, 0),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn index_and_stack() {
        let mut t = Tape::new();
        let a = t.scalar(1.5);
        let b = t.scalar(-2.5);
        let v = t.stack_scalars(&[a, b]).unwrap();
        assert_eq!(t.value(v).data(), &[1.5, -2.5]);
        let e = t.index(v, 1).unwrap();
        assert_eq!(t.value(e).item().unwrap(), -2.5);
        assert!(t.index(v, 2).is_err());
    }
}
