//! Reverse-mode tape.
//!
//! Every operation appends a node holding its forward value and an op record
//! pointing at its inputs. `Var::backward` seeds the scalar loss with 1.0 and
//! replays the records in reverse, accumulating gradients node by node.
//!
//! The tape also supports an f64 replay of the recorded graph
//! ([`Tape::replay_f64`]), used by the gradient checker: central differences
//! on an f32 forward pass would drown in rounding noise, while replaying the
//! identical graph at f64 keeps the difference quotient clean.
//!
//! A tape lives for one training step on one thread. Ops validate operand
//! shapes and reject non-finite outputs so a diverging run fails at the op
//! that produced the first bad value.

use std::cell::RefCell;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    AddScalar { x: NodeId, c: f32 },
    MulScalar { x: NodeId, c: f32 },
    Exp { x: NodeId },
    Log { x: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Square { x: NodeId },
    Sqrt { x: NodeId },
    Recip { x: NodeId },
    Clamp { x: NodeId, lo: f32, hi: f32 },
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Transpose { x: NodeId, rows: usize, cols: usize },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    SumAxis { x: NodeId, rows: usize, cols: usize, axis: usize },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize, len: usize },
    BroadcastRows { x: NodeId, rows: usize },
    BroadcastCols { x: NodeId, cols: usize },
    LogSumExpRows { x: NodeId, rows: usize, cols: usize },
    /// Test-only op with a deliberately wrong backward rule; the gradient
    /// checker must flag it.
    #[cfg(test)]
    TanhBadGrad { x: NodeId },
}

#[derive(Debug)]
struct Node {
    op: Op,
    dims: Vec<usize>,
    value: Vec<f32>,
    grad: Option<Vec<f32>>,
}

#[derive(Debug, Default)]
struct TapeInner {
    nodes: Vec<Node>,
    ran_backward: bool,
}

/// Arena of recorded operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to a tape node. Cheap to copy; all arithmetic goes through it.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enters external data (input, parameter snapshot, noise) as a leaf.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push_unchecked(Op::Leaf, t.dims().to_vec(), t.data().to_vec())
    }

    pub fn leaf_scalar(&self, v: f32) -> Var<'_> {
        self.push_unchecked(Op::Leaf, vec![1], vec![v])
    }

    pub fn leaf_from_vec(&self, dims: Vec<usize>, data: Vec<f32>) -> Result<Var<'_>> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::contract(format!(
                "leaf dims {:?} imply {} elements, buffer has {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(self.push_unchecked(Op::Leaf, dims, data))
    }

    fn push_unchecked(&self, op: Op, dims: Vec<usize>, value: Vec<f32>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            dims,
            value,
            grad: None,
        });
        Var { tape: self, id }
    }

    /// Pushes a computed node, rejecting non-finite outputs.
    fn push(&self, name: &'static str, op: Op, dims: Vec<usize>, value: Vec<f32>) -> Result<Var<'_>> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(op, dims, value))
    }

    fn with_node<R>(&self, id: NodeId, f: impl FnOnce(&[usize], &[f32]) -> R) -> R {
        let inner = self.inner.borrow();
        let node = &inner.nodes[id];
        f(&node.dims, &node.value)
    }

    pub fn value(&self, v: Var<'_>) -> Tensor {
        let inner = self.inner.borrow();
        let node = &inner.nodes[v.id];
        Tensor::new(node.dims.clone(), node.value.clone()).expect("node dims consistent")
    }

    /// Gradient of the last backward pass with respect to `v`, zero if the
    /// node was not reached.
    pub fn grad(&self, v: Var<'_>) -> Result<Tensor> {
        let inner = self.inner.borrow();
        if !inner.ran_backward {
            return Err(Error::contract("grad requested before backward"));
        }
        let node = &inner.nodes[v.id];
        let data = match &node.grad {
            Some(g) => g.clone(),
            None => vec![0.0; node.value.len()],
        };
        Tensor::new(node.dims.clone(), data)
    }

    /// Concatenates along `axis`; all other dims must match.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let first_dims = self.with_node(parts[0].id, |d, _| d.to_vec());
        if axis >= first_dims.len() {
            return Err(Error::contract(format!(
                "concat axis {} out of range for rank {}",
                axis,
                first_dims.len()
            )));
        }
        let mut axis_total = 0;
        for p in parts {
            let dims = self.with_node(p.id, |d, _| d.to_vec());
            if dims.len() != first_dims.len()
                || dims
                    .iter()
                    .zip(first_dims.iter())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first_dims,
                    rhs: dims,
                });
            }
            axis_total += dims[axis];
        }
        let mut out_dims = first_dims.clone();
        out_dims[axis] = axis_total;

        let outer: usize = out_dims[..axis].iter().product();
        let inner_len: usize = out_dims[axis + 1..].iter().product();
        let mut out = vec![0.0f32; out_dims.iter().product()];
        let mut offset = 0;
        for p in parts {
            self.with_node(p.id, |dims, value| {
                let this_axis = dims[axis];
                for o in 0..outer {
                    let src = o * this_axis * inner_len;
                    let dst = (o * axis_total + offset) * inner_len;
                    out[dst..dst + this_axis * inner_len]
                        .copy_from_slice(&value[src..src + this_axis * inner_len]);
                }
                offset += this_axis;
            });
        }
        self.push(
            "concat",
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            out_dims,
            out,
        )
    }

    /// Runs backward from a scalar node, seeding it with 1.0.
    fn backward_from(&self, loss: NodeId) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        if inner.nodes[loss].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got dims {:?}",
                inner.nodes[loss].dims
            )));
        }
        for node in inner.nodes.iter_mut() {
            node.grad = None;
        }
        inner.nodes[loss].grad = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let (op, out_grad) = {
                let node = &inner.nodes[id];
                match &node.grad {
                    Some(g) => (node.op.clone(), g.clone()),
                    None => continue,
                }
            };
            step_backward(&mut inner.nodes, id, &op, &out_grad);
        }
        inner.ran_backward = true;
        Ok(())
    }

    /// Re-evaluates the recorded graph in f64, with one leaf buffer swapped
    /// out, and returns the value of `target`. Leaves not overridden evaluate
    /// to their recorded values.
    pub fn replay_f64(&self, override_leaf: NodeId, override_data: &[f64], target: NodeId) -> f64 {
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(target + 1);
        for (id, node) in nodes.iter().take(target + 1).enumerate() {
            let v = match &node.op {
                Op::Leaf => {
                    if id == override_leaf {
                        override_data.to_vec()
                    } else {
                        node.value.iter().map(|&v| v as f64).collect()
                    }
                }
                op => eval_f64(op, node, &values),
            };
            values.push(v);
        }
        values[target][0]
    }
}

fn eval_f64(op: &Op, node: &Node, values: &[Vec<f64>]) -> Vec<f64> {
    let n_out = node.value.len();
    let mut out = vec![0.0f64; n_out];
    match op {
        Op::Leaf => unreachable!(),
        Op::Add { a, b } => kernels::zip(&values[*a], &values[*b], &mut out, |x, y| x + y),
        Op::Sub { a, b } => kernels::zip(&values[*a], &values[*b], &mut out, |x, y| x - y),
        Op::Mul { a, b } => kernels::zip(&values[*a], &values[*b], &mut out, |x, y| x * y),
        Op::AddScalar { x, c } => {
            let c = *c as f64;
            kernels::map(&values[*x], &mut out, |v| v + c)
        }
        Op::MulScalar { x, c } => {
            let c = *c as f64;
            kernels::map(&values[*x], &mut out, |v| v * c)
        }
        Op::Exp { x } => kernels::map(&values[*x], &mut out, |v| v.exp()),
        Op::Log { x } => kernels::map(&values[*x], &mut out, |v| v.ln()),
        Op::Tanh { x } => kernels::map(&values[*x], &mut out, |v| v.tanh()),
        Op::Sigmoid { x } => kernels::map(&values[*x], &mut out, kernels::sigmoid),
        Op::Square { x } => kernels::map(&values[*x], &mut out, |v| v * v),
        Op::Sqrt { x } => kernels::map(&values[*x], &mut out, |v| v.sqrt()),
        Op::Recip { x } => kernels::map(&values[*x], &mut out, |v| 1.0 / v),
        Op::Clamp { x, lo, hi } => {
            let (lo, hi) = (*lo as f64, *hi as f64);
            kernels::map(&values[*x], &mut out, |v| v.max(lo).min(hi))
        }
        Op::MatMul { a, b, m, k, n } => kernels::matmul(&values[*a], &values[*b], &mut out, *m, *k, *n),
        Op::Transpose { x, rows, cols } => kernels::transpose(&values[*x], &mut out, *rows, *cols),
        Op::SumAll { x } => out[0] = kernels::sum(&values[*x]),
        Op::MeanAll { x } => out[0] = kernels::sum(&values[*x]) / values[*x].len() as f64,
        Op::SumAxis { x, rows, cols, axis } => {
            kernels::sum_axis(&values[*x], &mut out, *rows, *cols, *axis)
        }
        Op::Concat { parts, axis } => {
            let axis_total = node.dims[*axis];
            let outer: usize = node.dims[..*axis].iter().product();
            let inner_len: usize = node.dims[*axis + 1..].iter().product();
            let mut offset = 0;
            for p in parts {
                let part = &values[*p];
                let this_axis = part.len() / (outer * inner_len);
                for o in 0..outer {
                    let src = o * this_axis * inner_len;
                    let dst = (o * axis_total + offset) * inner_len;
                    out[dst..dst + this_axis * inner_len]
                        .copy_from_slice(&part[src..src + this_axis * inner_len]);
                }
                offset += this_axis;
            }
        }
        Op::Slice { x, axis, start, len } => {
            // Recover the input's axis length from the element counts; all
            // other dims match the output.
            let mut in_dims = node.dims.clone();
            in_dims[*axis] = values[*x].len() / (node.value.len() / len);
            kernels::slice_axis(&values[*x], &mut out, &in_dims, *axis, *start, *len)
        }
        Op::BroadcastRows { x, rows } => {
            let d = values[*x].len();
            for r in 0..*rows {
                out[r * d..(r + 1) * d].copy_from_slice(&values[*x]);
            }
        }
        Op::BroadcastCols { x, cols } => {
            for (i, &v) in values[*x].iter().enumerate() {
                for o in out[i * cols..(i + 1) * cols].iter_mut() {
                    *o = v;
                }
            }
        }
        Op::LogSumExpRows { x, rows, cols } => {
            kernels::logsumexp_rows(&values[*x], &mut out, *rows, *cols)
        }
        #[cfg(test)]
        Op::TanhBadGrad { x } => kernels::map(&values[*x], &mut out, |v| v.tanh()),
    }
    out
}

/// Adds `delta` into a node's gradient buffer, allocating on first touch.
fn accum(nodes: &mut [Node], id: NodeId, delta: &[f32]) {
    let node = &mut nodes[id];
    match &mut node.grad {
        Some(g) => {
            for (gi, di) in g.iter_mut().zip(delta.iter()) {
                *gi += di;
            }
        }
        None => node.grad = Some(delta.to_vec()),
    }
}

fn accum_scaled(nodes: &mut [Node], id: NodeId, delta: &[f32], scale: f32) {
    let node = &mut nodes[id];
    match &mut node.grad {
        Some(g) => {
            for (gi, di) in g.iter_mut().zip(delta.iter()) {
                *gi += di * scale;
            }
        }
        None => node.grad = Some(delta.iter().map(|d| d * scale).collect()),
    }
}

fn step_backward(nodes: &mut Vec<Node>, id: NodeId, op: &Op, g: &[f32]) {
    match op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            accum(nodes, *a, g);
            accum(nodes, *b, g);
        }
        Op::Sub { a, b } => {
            accum(nodes, *a, g);
            accum_scaled(nodes, *b, g, -1.0);
        }
        Op::Mul { a, b } => {
            let da: Vec<f32> = nodes[*b].value.iter().zip(g).map(|(v, gi)| v * gi).collect();
            let db: Vec<f32> = nodes[*a].value.iter().zip(g).map(|(v, gi)| v * gi).collect();
            accum(nodes, *a, &da);
            accum(nodes, *b, &db);
        }
        Op::AddScalar { x, .. } => accum(nodes, *x, g),
        Op::MulScalar { x, c } => accum_scaled(nodes, *x, g, *c),
        Op::Exp { x } => {
            // d/dx exp = exp, read from the saved output.
            let dx: Vec<f32> = nodes[id].value.iter().zip(g).map(|(y, gi)| y * gi).collect();
            accum(nodes, *x, &dx);
        }
        Op::Log { x } => {
            let dx: Vec<f32> = nodes[*x].value.iter().zip(g).map(|(v, gi)| gi / v).collect();
            accum(nodes, *x, &dx);
        }
        Op::Tanh { x } => {
            let dx: Vec<f32> = nodes[id]
                .value
                .iter()
                .zip(g)
                .map(|(y, gi)| (1.0 - y * y) * gi)
                .collect();
            accum(nodes, *x, &dx);
        }
        Op::Sigmoid { x } => {
            let dx: Vec<f32> = nodes[id]
                .value
                .iter()
                .zip(g)
                .map(|(y, gi)| y * (1.0 - y) * gi)
                .collect();
            accum(nodes, *x, &dx);
        }
        Op::Square { x } => {
            let dx: Vec<f32> = nodes[*x]
                .value
                .iter()
                .zip(g)
                .map(|(v, gi)| 2.0 * v * gi)
                .collect();
            accum(nodes, *x, &dx);
        }
        Op::Sqrt { x } => {
            let dx: Vec<f32> = nodes[id]
                .value
                .iter()
                .zip(g)
                .map(|(y, gi)| gi / (2.0 * y))
                .collect();
            accum(nodes, *x, &dx);
        }
        Op::Recip { x } => {
            let dx: Vec<f32> = nodes[id]
                .value
                .iter()
                .zip(g)
                .map(|(y, gi)| -y * y * gi)
                .collect();
            accum(nodes, *x, &dx);
        }
        Op::Clamp { x, lo, hi } => {
            // Pass-through inside the interval, zero outside.
            let dx: Vec<f32> = nodes[*x]
                .value
                .iter()
                .zip(g)
                .map(|(v, gi)| if *v >= *lo && *v <= *hi { *gi } else { 0.0 })
                .collect();
            accum(nodes, *x, &dx);
        }
        Op::MatMul { a, b, m, k, n } => {
            // dA = g B^T : dA[i,p] = sum_j g[i,j] B[p,j]
            let mut da = vec![0.0f32; m * k];
            {
                let bv = &nodes[*b].value;
                for i in 0..*m {
                    let g_row = &g[i * n..(i + 1) * n];
                    let da_row = &mut da[i * k..(i + 1) * k];
                    for (p, d) in da_row.iter_mut().enumerate() {
                        let b_row = &bv[p * n..(p + 1) * n];
                        let mut acc = 0.0f32;
                        for (gv, bv) in g_row.iter().zip(b_row.iter()) {
                            acc += gv * bv;
                        }
                        *d = acc;
                    }
                }
            }
            // dB = A^T g : dB[p,j] = sum_i A[i,p] g[i,j]
            let mut db = vec![0.0f32; k * n];
            {
                let av = &nodes[*a].value;
                for i in 0..*m {
                    let g_row = &g[i * n..(i + 1) * n];
                    let a_row = &av[i * k..(i + 1) * k];
                    for (p, &a_ip) in a_row.iter().enumerate() {
                        let db_row = &mut db[p * n..(p + 1) * n];
                        for (d, gv) in db_row.iter_mut().zip(g_row.iter()) {
                            *d += a_ip * gv;
                        }
                    }
                }
            }
            accum(nodes, *a, &da);
            accum(nodes, *b, &db);
        }
        Op::Transpose { x, rows, cols } => {
            // g has shape [cols, rows]; scatter back.
            let mut dx = vec![0.0f32; rows * cols];
            for j in 0..*cols {
                for i in 0..*rows {
                    dx[i * cols + j] = g[j * rows + i];
                }
            }
            accum(nodes, *x, &dx);
        }
        Op::SumAll { x } => {
            let n = nodes[*x].value.len();
            accum(nodes, *x, &vec![g[0]; n]);
        }
        Op::MeanAll { x } => {
            let n = nodes[*x].value.len();
            accum(nodes, *x, &vec![g[0] / n as f32; n]);
        }
        Op::SumAxis { x, rows, cols, axis } => {
            let mut dx = vec![0.0f32; rows * cols];
            if *axis == 0 {
                for i in 0..*rows {
                    dx[i * cols..(i + 1) * cols].copy_from_slice(g);
                }
            } else {
                for i in 0..*rows {
                    for d in dx[i * cols..(i + 1) * cols].iter_mut() {
                        *d = g[i];
                    }
                }
            }
            accum(nodes, *x, &dx);
        }
        Op::Concat { parts, axis } => {
            let out_dims = nodes[id].dims.clone();
            let outer: usize = out_dims[..*axis].iter().product();
            let inner_len: usize = out_dims[*axis + 1..].iter().product();
            let axis_total = out_dims[*axis];
            let mut offset = 0;
            for p in parts.clone() {
                let this_axis = nodes[p].dims[*axis];
                let mut dp = vec![0.0f32; nodes[p].value.len()];
                for o in 0..outer {
                    let src = (o * axis_total + offset) * inner_len;
                    let dst = o * this_axis * inner_len;
                    dp[dst..dst + this_axis * inner_len]
                        .copy_from_slice(&g[src..src + this_axis * inner_len]);
                }
                accum(nodes, p, &dp);
                offset += this_axis;
            }
        }
        Op::Slice { x, axis, start, len } => {
            let in_dims = nodes[*x].dims.clone();
            let outer: usize = in_dims[..*axis].iter().product();
            let inner_len: usize = in_dims[*axis + 1..].iter().product();
            let axis_len = in_dims[*axis];
            let mut dx = vec![0.0f32; nodes[*x].value.len()];
            for o in 0..outer {
                let dst = (o * axis_len + start) * inner_len;
                let src = o * len * inner_len;
                dx[dst..dst + len * inner_len].copy_from_slice(&g[src..src + len * inner_len]);
            }
            accum(nodes, *x, &dx);
        }
        Op::BroadcastRows { x, rows } => {
            let d = nodes[*x].value.len();
            let mut dx = vec![0.0f32; d];
            for r in 0..*rows {
                for (dv, gv) in dx.iter_mut().zip(g[r * d..(r + 1) * d].iter()) {
                    *dv += gv;
                }
            }
            accum(nodes, *x, &dx);
        }
        Op::BroadcastCols { x, cols } => {
            let m = nodes[*x].value.len();
            let mut dx = vec![0.0f32; m];
            for i in 0..m {
                let mut acc = 0.0f32;
                for gv in g[i * cols..(i + 1) * cols].iter() {
                    acc += gv;
                }
                dx[i] = acc;
            }
            accum(nodes, *x, &dx);
        }
        Op::LogSumExpRows { x, rows, cols } => {
            // dx[i,j] = softmax(x[i,:])[j] * g[i] = exp(x[i,j] - out[i]) * g[i]
            let mut dx = vec![0.0f32; rows * cols];
            let out_vals = nodes[id].value.clone();
            let x_vals = &nodes[*x].value;
            for i in 0..*rows {
                for j in 0..*cols {
                    dx[i * cols + j] = (x_vals[i * cols + j] - out_vals[i]).exp() * g[i];
                }
            }
            accum(nodes, *x, &dx);
        }
        #[cfg(test)]
        Op::TanhBadGrad { x } => {
            // Wrong on purpose: scales the true tanh gradient by 1.1.
            let dx: Vec<f32> = nodes[id]
                .value
                .iter()
                .zip(g)
                .map(|(y, gi)| 1.1 * (1.0 - y * y) * gi)
                .collect();
            accum(nodes, *x, &dx);
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn dims(&self) -> Vec<usize> {
        self.tape.with_node(self.id, |d, _| d.to_vec())
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self)
    }

    /// Value of a scalar node.
    pub fn item(&self) -> Result<f32> {
        self.tape.with_node(self.id, |_, v| {
            if v.len() == 1 {
                Ok(v[0])
            } else {
                Err(Error::contract(format!("item on non-scalar of {} elements", v.len())))
            }
        })
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    pub fn grad(&self) -> Result<Tensor> {
        self.tape.grad(*self)
    }

    fn same_shape(self, other: Var<'t>, op: &'static str) -> Result<()> {
        let a = self.dims();
        let b = other.dims();
        if a != b {
            return Err(Error::Shape { op, lhs: a, rhs: b });
        }
        Ok(())
    }

    fn zip_op(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Var<'t>> {
        self.same_shape(other, name)?;
        let dims = self.dims();
        let value = self.tape.with_node(self.id, |_, a| {
            self.tape.with_node(other.id, |_, b| {
                a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect::<Vec<f32>>()
            })
        });
        self.tape.push(name, op, dims, value)
    }

    fn map_op(self, name: &'static str, op: Op, f: impl Fn(f32) -> f32) -> Result<Var<'t>> {
        let dims = self.dims();
        let value = self
            .tape
            .with_node(self.id, |_, x| x.iter().map(|&v| f(v)).collect::<Vec<f32>>());
        self.tape.push(name, op, dims, value)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_op(other, "add", Op::Add { a: self.id, b: other.id }, |x, y| x + y)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_op(other, "sub", Op::Sub { a: self.id, b: other.id }, |x, y| x - y)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip_op(other, "mul", Op::Mul { a: self.id, b: other.id }, |x, y| x * y)
    }

    pub fn add_scalar(self, c: f32) -> Result<Var<'t>> {
        self.map_op("add_scalar", Op::AddScalar { x: self.id, c }, |v| v + c)
    }

    pub fn mul_scalar(self, c: f32) -> Result<Var<'t>> {
        self.map_op("mul_scalar", Op::MulScalar { x: self.id, c }, |v| v * c)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.map_op("exp", Op::Exp { x: self.id }, f32::exp)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.map_op("log", Op::Log { x: self.id }, f32::ln)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.map_op("tanh", Op::Tanh { x: self.id }, f32::tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.map_op("sigmoid", Op::Sigmoid { x: self.id }, kernels::sigmoid)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.map_op("square", Op::Square { x: self.id }, |v| v * v)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.map_op("sqrt", Op::Sqrt { x: self.id }, f32::sqrt)
    }

    pub fn recip(self) -> Result<Var<'t>> {
        self.map_op("recip", Op::Recip { x: self.id }, |v| 1.0 / v)
    }

    pub fn clamp(self, lo: f32, hi: f32) -> Result<Var<'t>> {
        self.map_op("clamp", Op::Clamp { x: self.id, lo, hi }, |v| v.max(lo).min(hi))
    }

    #[cfg(test)]
    pub fn tanh_bad_grad(self) -> Result<Var<'t>> {
        self.map_op("tanh_bad_grad", Op::TanhBadGrad { x: self.id }, f32::tanh)
    }

    /// [m,k] x [k,n] -> [m,n].
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a_dims = self.dims();
        let b_dims = other.dims();
        if a_dims.len() != 2 || b_dims.len() != 2 || a_dims[1] != b_dims[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: a_dims,
                rhs: b_dims,
            });
        }
        let (m, k, n) = (a_dims[0], a_dims[1], b_dims[1]);
        let mut out = vec![0.0f32; m * n];
        self.tape.with_node(self.id, |_, a| {
            self.tape
                .with_node(other.id, |_, b| kernels::matmul(a, b, &mut out, m, k, n))
        });
        self.tape.push(
            "matmul",
            Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
            vec![m, n],
            out,
        )
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let dims = self.dims();
        if dims.len() != 2 {
            return Err(Error::Shape {
                op: "transpose",
                lhs: dims,
                rhs: vec![],
            });
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut out = vec![0.0f32; rows * cols];
        self.tape
            .with_node(self.id, |_, x| kernels::transpose(x, &mut out, rows, cols));
        self.tape.push(
            "transpose",
            Op::Transpose {
                x: self.id,
                rows,
                cols,
            },
            vec![cols, rows],
            out,
        )
    }

    pub fn sum_all(self) -> Result<Var<'t>> {
        let value = self.tape.with_node(self.id, |_, x| kernels::sum(x));
        self.tape
            .push("sum_all", Op::SumAll { x: self.id }, vec![1], vec![value])
    }

    pub fn mean_all(self) -> Result<Var<'t>> {
        let value = self
            .tape
            .with_node(self.id, |_, x| kernels::sum(x) / x.len() as f32);
        self.tape
            .push("mean_all", Op::MeanAll { x: self.id }, vec![1], vec![value])
    }

    /// Sums a matrix along axis 0 (output [cols]) or axis 1 (output [rows]).
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let dims = self.dims();
        if dims.len() != 2 || axis > 1 {
            return Err(Error::Shape {
                op: "sum_axis",
                lhs: dims,
                rhs: vec![axis],
            });
        }
        let (rows, cols) = (dims[0], dims[1]);
        let out_len = if axis == 0 { cols } else { rows };
        let mut out = vec![0.0f32; out_len];
        self.tape
            .with_node(self.id, |_, x| kernels::sum_axis(x, &mut out, rows, cols, axis));
        self.tape.push(
            "sum_axis",
            Op::SumAxis {
                x: self.id,
                rows,
                cols,
                axis,
            },
            vec![out_len],
            out,
        )
    }

    pub fn slice_axis(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let dims = self.dims();
        if axis >= dims.len() || start + len > dims[axis] || len == 0 {
            return Err(Error::contract(format!(
                "slice axis {} [{}, {}) out of range for dims {:?}",
                axis,
                start,
                start + len,
                dims
            )));
        }
        let mut out_dims = dims.clone();
        out_dims[axis] = len;
        let mut out = vec![0.0f32; out_dims.iter().product()];
        self.tape
            .with_node(self.id, |d, x| kernels::slice_axis(x, &mut out, d, axis, start, len));
        self.tape.push(
            "slice",
            Op::Slice {
                x: self.id,
                axis,
                start,
                len,
            },
            out_dims,
            out,
        )
    }

    /// Tiles a vector [d] into [rows, d].
    pub fn broadcast_rows(self, rows: usize) -> Result<Var<'t>> {
        let dims = self.dims();
        if dims.len() != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: dims,
                rhs: vec![rows],
            });
        }
        let d = dims[0];
        let mut out = vec![0.0f32; rows * d];
        self.tape.with_node(self.id, |_, x| {
            for r in 0..rows {
                out[r * d..(r + 1) * d].copy_from_slice(x);
            }
        });
        self.tape.push(
            "broadcast_rows",
            Op::BroadcastRows { x: self.id, rows },
            vec![rows, d],
            out,
        )
    }

    /// Repeats each entry of a vector [m] across a row, giving [m, cols].
    pub fn broadcast_cols(self, cols: usize) -> Result<Var<'t>> {
        let dims = self.dims();
        if dims.len() != 1 {
            return Err(Error::Shape {
                op: "broadcast_cols",
                lhs: dims,
                rhs: vec![cols],
            });
        }
        let m = dims[0];
        let mut out = vec![0.0f32; m * cols];
        self.tape.with_node(self.id, |_, x| {
            for (i, &v) in x.iter().enumerate() {
                for o in out[i * cols..(i + 1) * cols].iter_mut() {
                    *o = v;
                }
            }
        });
        self.tape.push(
            "broadcast_cols",
            Op::BroadcastCols { x: self.id, cols },
            vec![m, cols],
            out,
        )
    }

    /// Row-wise stabilized log(sum(exp(x))): [m, n] -> [m].
    pub fn logsumexp_rows(self) -> Result<Var<'t>> {
        let dims = self.dims();
        if dims.len() != 2 {
            return Err(Error::Shape {
                op: "logsumexp_rows",
                lhs: dims,
                rhs: vec![],
            });
        }
        let (rows, cols) = (dims[0], dims[1]);
        let mut out = vec![0.0f32; rows];
        self.tape
            .with_node(self.id, |_, x| kernels::logsumexp_rows(x, &mut out, rows, cols));
        self.tape.push(
            "logsumexp_rows",
            Op::LogSumExpRows {
                x: self.id,
                rows,
                cols,
            },
            vec![rows],
            out,
        )
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}
