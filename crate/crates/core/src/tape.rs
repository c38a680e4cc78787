//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! The tape records every primitive in topological order. `backward` builds
//! the gradients as new tape nodes, so a gradient can itself be
//! differentiated again (one level of double backpropagation is all the
//! training losses need). A tape lives for one training step and is dropped
//! afterwards.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::buffer::{self, Buffer};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Matmul(usize, usize),
    Transpose(usize),
    SumAll(usize),
    SumAxis(usize, usize),
    BroadcastTo(usize),
    ReduceTo(usize),
    Reshape(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Abs(usize),
    PowC(usize, f64),
    ClampMin(usize, f64),
    LnGamma(usize),
    Digamma(usize),
    /// Index along the last axis (arbitrary selection, repeats allowed).
    Gather(usize, Rc<Vec<usize>>),
    /// Adjoint of Gather: scatter-add along the last axis.
    ScatterLast(usize, Rc<Vec<usize>>),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize, usize),
}

struct Node {
    op: Op,
    value: Buffer,
}

struct Inner {
    nodes: Vec<Node>,
}

/// Shared handle to a gradient tape.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<Inner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A value recorded on a tape.
#[derive(Clone)]
pub struct Tensor {
    pub tape: Tape,
    pub(crate) id: usize,
    pub shape: Vec<usize>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(RefCell::new(Inner { nodes: Vec::new() })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Buffer) -> Tensor {
        let shape = value.shape.clone();
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op, value });
        Tensor {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
            shape,
        }
    }

    /// Differentiable leaf (a parameter or an input we take gradients of).
    pub fn leaf(&self, value: Buffer) -> Tensor {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable constant.
    pub fn constant(&self, value: Buffer) -> Tensor {
        self.push(Op::Const, value)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(Buffer::scalar(v))
    }

    pub fn value(&self, t: &Tensor) -> Buffer {
        self.inner.borrow().nodes[t.id].value.clone()
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Buffer) -> R) -> R {
        f(&self.inner.borrow().nodes[id].value)
    }

    fn with_values<R>(&self, a: usize, b: usize, f: impl FnOnce(&Buffer, &Buffer) -> R) -> R {
        let inner = self.inner.borrow();
        f(&inner.nodes[a].value, &inner.nodes[b].value)
    }

    fn handle(&self, id: usize) -> Tensor {
        let shape = self.inner.borrow().nodes[id].value.shape.clone();
        Tensor {
            tape: self.clone(),
            id,
            shape,
        }
    }

    /// Gradients of a scalar output with respect to every reachable node,
    /// recorded on the same tape so they can be differentiated again.
    pub fn backward(&self, output: &Tensor) -> Gradients {
        assert!(
            Rc::ptr_eq(&self.inner, &output.tape.inner),
            "backward: output belongs to a different tape"
        );
        assert!(
            output.shape.iter().product::<usize>() == 1,
            "backward: output must be scalar, got shape {:?}",
            output.shape
        );
        let n = output.id + 1;
        // Reachability pass so unrelated nodes are never touched.
        let mut reachable = vec![false; n];
        reachable[output.id] = true;
        {
            let inner = self.inner.borrow();
            for i in (0..n).rev() {
                if !reachable[i] {
                    continue;
                }
                for inp in op_inputs(&inner.nodes[i].op) {
                    reachable[inp] = true;
                }
            }
        }
        let mut grads: Vec<Option<usize>> = vec![None; n];
        let seed = self.constant(Buffer::full(&output.shape, 1.0));
        grads[output.id] = Some(seed.id);
        for i in (0..n).rev() {
            if !reachable[i] {
                continue;
            }
            let Some(gid) = grads[i] else { continue };
            let op = self.inner.borrow().nodes[i].op.clone();
            let g = self.handle(gid);
            for (inp, contrib) in self.vjp(i, &op, &g) {
                grads[inp] = Some(match grads[inp] {
                    None => contrib.id,
                    Some(old) => self.handle(old).add(&contrib).id,
                });
            }
        }
        let mut map = HashMap::new();
        for (i, g) in grads.iter().enumerate() {
            if let Some(gid) = g {
                map.insert(i, *gid);
            }
        }
        Gradients {
            tape: self.clone(),
            map,
        }
    }

    /// Vector-Jacobian product contributions of one node, built as tape ops.
    fn vjp(&self, id: usize, op: &Op, g: &Tensor) -> Vec<(usize, Tensor)> {
        let y = self.handle(id);
        match op {
            Op::Leaf | Op::Const => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.neg())],
            Op::Mul(a, b) => {
                let (ta, tb) = (self.handle(*a), self.handle(*b));
                vec![(*a, g.mul(&tb)), (*b, g.mul(&ta))]
            }
            Op::Div(a, b) => {
                let tb = self.handle(*b);
                // d/da = g/b,  d/db = -g*y/b
                vec![(*a, g.div(&tb)), (*b, g.mul(&y).div(&tb).neg())]
            }
            Op::Neg(a) => vec![(*a, g.neg())],
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.handle(*a), self.handle(*b));
                vec![(*a, g.matmul(&tb.t())), (*b, ta.t().matmul(g))]
            }
            Op::Transpose(a) => vec![(*a, g.t())],
            Op::SumAll(a) => {
                let shape = self.handle(*a).shape;
                vec![(*a, g.broadcast_to(&shape))]
            }
            Op::SumAxis(a, axis) => {
                let shape = self.handle(*a).shape;
                let mut keep = shape.clone();
                keep[*axis] = 1;
                vec![(*a, g.reshape(&keep).broadcast_to(&shape))]
            }
            Op::BroadcastTo(a) => {
                let shape = self.handle(*a).shape;
                vec![(*a, g.reduce_to(&shape))]
            }
            Op::ReduceTo(a) => {
                let shape = self.handle(*a).shape;
                vec![(*a, g.broadcast_to(&shape))]
            }
            Op::Reshape(a) => {
                let shape = self.handle(*a).shape;
                vec![(*a, g.reshape(&shape))]
            }
            Op::Tanh(a) => {
                // 1 - y^2
                let one_minus = y.square().neg().add_scalar(1.0);
                vec![(*a, g.mul(&one_minus))]
            }
            Op::Sigmoid(a) => {
                let d = y.mul(&y.neg().add_scalar(1.0));
                vec![(*a, g.mul(&d))]
            }
            Op::Softplus(a) => {
                let x = self.handle(*a);
                vec![(*a, g.mul(&x.sigmoid()))]
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.inner.borrow().nodes[*a].value.clone();
                let mask = self.constant(x.map(|v| if v > 0.0 { 1.0 } else { *slope }));
                vec![(*a, g.mul(&mask))]
            }
            Op::Exp(a) => vec![(*a, g.mul(&y))],
            Op::Ln(a) => {
                let x = self.handle(*a);
                vec![(*a, g.div(&x))]
            }
            Op::Sqrt(a) => {
                // 0.5 / y
                let d = y.powc(-1.0).scale(0.5);
                vec![(*a, g.mul(&d))]
            }
            Op::Square(a) => {
                let x = self.handle(*a);
                vec![(*a, g.mul(&x).scale(2.0))]
            }
            Op::Abs(a) => {
                let x = self.inner.borrow().nodes[*a].value.clone();
                let sgn = self.constant(x.map(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }));
                vec![(*a, g.mul(&sgn))]
            }
            Op::PowC(a, c) => {
                let x = self.handle(*a);
                vec![(*a, g.mul(&x.powc(c - 1.0)).scale(*c))]
            }
            Op::ClampMin(a, c) => {
                let x = self.inner.borrow().nodes[*a].value.clone();
                let mask = self.constant(x.map(|v| if v > *c { 1.0 } else { 0.0 }));
                vec![(*a, g.mul(&mask))]
            }
            Op::LnGamma(a) => {
                let x = self.handle(*a);
                vec![(*a, g.mul(&x.digamma()))]
            }
            Op::Digamma(_) => {
                panic!("tape: digamma has no registered derivative (second-order use)")
            }
            Op::Gather(a, idx) => {
                let in_shape = self.handle(*a).shape;
                let n = *in_shape.last().unwrap();
                vec![(*a, g.scatter_last(idx.clone(), n))]
            }
            Op::ScatterLast(a, idx) => vec![(*a, g.gather_last(idx.clone()))],
            Op::Concat(parts, axis) => {
                let mut out = Vec::new();
                let mut start = 0usize;
                for p in parts {
                    let pshape = self.handle(*p).shape;
                    let w = pshape[*axis];
                    out.push((*p, g.slice(*axis, start, start + w)));
                    start += w;
                }
                out
            }
            Op::Slice(a, axis, start, end) => {
                let in_shape = self.handle(*a).shape;
                let total = in_shape[*axis];
                let mut parts: Vec<Tensor> = Vec::new();
                if *start > 0 {
                    let mut s = in_shape.clone();
                    s[*axis] = *start;
                    parts.push(self.constant(Buffer::zeros(&s)));
                }
                parts.push(g.clone());
                if *end < total {
                    let mut s = in_shape.clone();
                    s[*axis] = total - *end;
                    parts.push(self.constant(Buffer::zeros(&s)));
                }
                let refs: Vec<&Tensor> = parts.iter().collect();
                vec![(*a, concat(&refs, *axis))]
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf | Op::Const => vec![],
        Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::Matmul(a, b) => vec![*a, *b],
        Op::Neg(a)
        | Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Transpose(a)
        | Op::SumAll(a)
        | Op::SumAxis(a, _)
        | Op::BroadcastTo(a)
        | Op::ReduceTo(a)
        | Op::Reshape(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Softplus(a)
        | Op::LeakyRelu(a, _)
        | Op::Exp(a)
        | Op::Ln(a)
        | Op::Sqrt(a)
        | Op::Square(a)
        | Op::Abs(a)
        | Op::PowC(a, _)
        | Op::ClampMin(a, _)
        | Op::LnGamma(a)
        | Op::Digamma(a)
        | Op::Gather(a, _)
        | Op::ScatterLast(a, _)
        | Op::Slice(a, _, _, _) => vec![*a],
        Op::Concat(parts, _) => parts.clone(),
    }
}

/// Result of a backward pass: node id -> gradient tensor on the same tape.
pub struct Gradients {
    tape: Tape,
    map: HashMap<usize, usize>,
}

impl Gradients {
    /// Gradient with respect to `t`; zero if the output does not depend on it.
    pub fn wrt(&self, t: &Tensor) -> Tensor {
        match self.map.get(&t.id) {
            Some(gid) => self.tape.handle(*gid),
            None => self.tape.constant(Buffer::zeros(&t.shape)),
        }
    }

    pub fn wrt_buffer(&self, t: &Tensor) -> Buffer {
        self.wrt(t).value()
    }
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn value(&self) -> Buffer {
        self.tape.value(self)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(&self, other: &Tensor) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "tape: operands recorded on different tapes"
        );
    }

    /// Broadcast both operands to a common shape, then apply the binary op.
    fn binary(
        &self,
        other: &Tensor,
        name: &str,
        make: impl Fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Tensor {
        self.same_tape(other);
        let target = buffer::broadcast_shape(&self.shape, &other.shape).unwrap_or_else(|| {
            panic!(
                "tape: {} on incompatible shapes {:?} and {:?}",
                name, self.shape, other.shape
            )
        });
        let a = self.broadcast_to(&target);
        let b = other.broadcast_to(&target);
        let value = self.tape.with_values(a.id, b.id, |x, y| buffer::zip(x, y, f));
        self.tape.push(make(a.id, b.id), value)
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.binary(other, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.binary(other, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.binary(other, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        self.binary(other, "div", Op::Div, |x, y| x / y)
    }

    fn mapped(&self, make: impl Fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Tensor {
        let value = self.tape.with_value(self.id, |b| b.map(f));
        self.tape.push(make(self.id), value)
    }

    pub fn neg(&self) -> Tensor {
        self.mapped(Op::Neg, |x| -x)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.mapped(|id| Op::Scale(id, c), |x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.mapped(Op::AddScalar, |x| x + c)
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.same_tape(other);
        assert!(
            self.shape.len() == 2 && other.shape.len() == 2 && self.shape[1] == other.shape[0],
            "tape: matmul on incompatible shapes {:?} and {:?}",
            self.shape,
            other.shape
        );
        let value = self
            .tape
            .with_values(self.id, other.id, |a, b| buffer::matmul(a, b));
        self.tape.push(Op::Matmul(self.id, other.id), value)
    }

    pub fn t(&self) -> Tensor {
        let value = self.tape.with_value(self.id, buffer::transpose);
        self.tape.push(Op::Transpose(self.id), value)
    }

    pub fn sum_all(&self) -> Tensor {
        let v = self.tape.with_value(self.id, |b| b.data.iter().sum());
        self.tape.push(Op::SumAll(self.id), Buffer::scalar(v))
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.value().len().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    pub fn sum_axis(&self, axis: usize) -> Tensor {
        assert!(
            axis < self.shape.len(),
            "tape: sum_axis {} on shape {:?}",
            axis,
            self.shape
        );
        let value = self.tape.with_value(self.id, |b| buffer::sum_axis(b, axis));
        self.tape.push(Op::SumAxis(self.id, axis), value)
    }

    pub fn broadcast_to(&self, target: &[usize]) -> Tensor {
        if self.shape == target {
            return self.clone();
        }
        let value = self.tape.with_value(self.id, |b| buffer::broadcast_to(b, target));
        self.tape.push(Op::BroadcastTo(self.id), value)
    }

    pub fn reduce_to(&self, target: &[usize]) -> Tensor {
        if self.shape == target {
            return self.clone();
        }
        let value = self.tape.with_value(self.id, |b| buffer::reduce_to(b, target));
        self.tape.push(Op::ReduceTo(self.id), value)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let v = self.value();
        assert_eq!(
            shape.iter().product::<usize>(),
            v.len(),
            "tape: reshape {:?} to {:?}",
            self.shape,
            shape
        );
        self.tape
            .push(Op::Reshape(self.id), Buffer::new(shape.to_vec(), v.data))
    }

    pub fn tanh(&self) -> Tensor {
        self.mapped(Op::Tanh, f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.mapped(Op::Sigmoid, sigmoid)
    }

    pub fn softplus(&self) -> Tensor {
        self.mapped(Op::Softplus, softplus)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.mapped(
            |id| Op::LeakyRelu(id, slope),
            |x| if x > 0.0 { x } else { slope * x },
        )
    }

    pub fn exp(&self) -> Tensor {
        self.mapped(Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        self.mapped(Op::Ln, f64::ln)
    }

    pub fn sqrt(&self) -> Tensor {
        self.mapped(Op::Sqrt, f64::sqrt)
    }

    pub fn square(&self) -> Tensor {
        self.mapped(Op::Square, |x| x * x)
    }

    pub fn abs(&self) -> Tensor {
        self.mapped(Op::Abs, f64::abs)
    }

    pub fn powc(&self, c: f64) -> Tensor {
        self.mapped(|id| Op::PowC(id, c), |x| x.powf(c))
    }

    pub fn clamp_min(&self, c: f64) -> Tensor {
        self.mapped(|id| Op::ClampMin(id, c), |x| x.max(c))
    }

    pub fn ln_gamma(&self) -> Tensor {
        self.mapped(Op::LnGamma, statrs::function::gamma::ln_gamma)
    }

    pub fn digamma(&self) -> Tensor {
        self.mapped(Op::Digamma, statrs::function::gamma::digamma)
    }

    /// Sort each row (last axis) ascending, stably. Returns the sorted tensor
    /// and the permutation; gradients flow through the implied gather.
    pub fn sort_last(&self) -> (Tensor, Rc<Vec<usize>>) {
        let v = self.value();
        let n = *self.shape.last().unwrap_or_else(|| {
            panic!("tape: sort_last on scalar");
        });
        let rows = v.len() / n;
        let mut perm = vec![0usize; v.len()];
        for r in 0..rows {
            let row = &v.data[r * n..(r + 1) * n];
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap());
            perm[r * n..(r + 1) * n].copy_from_slice(&idx);
        }
        let perm = Rc::new(perm);
        (self.gather_last(perm.clone()), perm)
    }

    /// Gather along the last axis with a per-row index set. Backward assumes
    /// the indices form a permutation within each row.
    pub fn gather_last(&self, idx: Rc<Vec<usize>>) -> Tensor {
        let v = self.value();
        let n = *self.shape.last().expect("tape: gather_last on scalar");
        let rows = v.len() / n;
        let m = idx.len() / rows;
        assert_eq!(idx.len(), rows * m, "tape: gather index count mismatch");
        let mut out = vec![0.0; idx.len()];
        for r in 0..rows {
            for i in 0..m {
                let src = idx[r * m + i];
                assert!(src < n, "tape: gather index {} out of bounds {}", src, n);
                out[r * m + i] = v.data[r * n + src];
            }
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = m;
        self.tape
            .push(Op::Gather(self.id, idx), Buffer::new(shape, out))
    }

    /// Scatter-add along the last axis (width m) into width `n`; adjoint of
    /// `gather_last` with the same index set.
    pub fn scatter_last(&self, idx: Rc<Vec<usize>>, n: usize) -> Tensor {
        let v = self.value();
        let m = *self.shape.last().expect("tape: scatter_last on scalar");
        let rows = v.len() / m;
        assert_eq!(idx.len(), rows * m, "tape: scatter index count mismatch");
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            for i in 0..m {
                let dst = idx[r * m + i];
                assert!(dst < n, "tape: scatter index {} out of bounds {}", dst, n);
                out[r * n + dst] += v.data[r * m + i];
            }
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = n;
        self.tape
            .push(Op::ScatterLast(self.id, idx), Buffer::new(shape, out))
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Tensor {
        assert!(
            axis < self.shape.len() && start <= end && end <= self.shape[axis],
            "tape: slice [{}, {}) along axis {} of shape {:?}",
            start,
            end,
            axis,
            self.shape
        );
        let v = self.value();
        let outer: usize = self.shape[..axis].iter().product();
        let mid = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            out.extend_from_slice(&v.data[base..base + w * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = w;
        self.tape.push(
            Op::Slice(self.id, axis, start, end),
            Buffer::new(shape, out),
        )
    }

    /// Column `j` of a 2-D tensor, as shape `[rows, 1]`.
    pub fn col(&self, j: usize) -> Tensor {
        self.slice(1, j, j + 1)
    }
}

/// Concatenate tensors along an axis.
pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
    assert!(!parts.is_empty(), "tape: concat of zero tensors");
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let tape = parts[0].tape.clone();
    let rank = parts[0].shape.len();
    for p in parts.iter() {
        parts[0].same_tape(p);
        assert_eq!(p.shape.len(), rank, "tape: concat rank mismatch");
        for ax in 0..rank {
            if ax != axis {
                assert_eq!(
                    p.shape[ax], parts[0].shape[ax],
                    "tape: concat shape mismatch on axis {}: {:?} vs {:?}",
                    ax, p.shape, parts[0].shape
                );
            }
        }
    }
    let outer: usize = parts[0].shape[..axis].iter().product();
    let inner: usize = parts[0].shape[axis + 1..].iter().product();
    let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
    let values: Vec<Buffer> = parts.iter().map(|p| p.value()).collect();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, v) in parts.iter().zip(values.iter()) {
            let mid = p.shape[axis];
            let base = o * mid * inner;
            out.extend_from_slice(&v.data[base..base + mid * inner]);
        }
    }
    let mut shape = parts[0].shape.clone();
    shape[axis] = total;
    let ids = parts.iter().map(|p| p.id).collect();
    tape.push(Op::Concat(ids, axis), Buffer::new(shape, out))
}

/// Gradient of a scalar `output` with respect to the input `x`, recorded on
/// the tape so the result can be differentiated once more.
pub fn input_gradient(output: &Tensor, x: &Tensor) -> Tensor {
    output.tape().backward(output).wrt(x)
}

/// Jacobian-vector product `J_f(x) v` of a vector-valued recorded output,
/// computed with one reverse pass per output component. `output` has shape
/// `[batch, d]` (or `[d]`), `x` and `v` share the shape `[batch, p]` (or
/// `[p]`), and rows must be independent (row `r` of the output depends only
/// on row `r` of `x`).
pub fn directional_derivative(output: &Tensor, x: &Tensor, v: &Tensor) -> Tensor {
    assert_eq!(
        x.shape(),
        v.shape(),
        "tape: direction shape {:?} does not match input shape {:?}",
        v.shape(),
        x.shape()
    );
    match output.shape() {
        [d] => {
            let mut cols = Vec::with_capacity(*d);
            for j in 0..*d {
                let yj = output.slice(0, j, j + 1).sum_all();
                let g = input_gradient(&yj, x);
                cols.push(g.mul(v).sum_all().reshape(&[1]));
            }
            let refs: Vec<&Tensor> = cols.iter().collect();
            concat(&refs, 0)
        }
        [_b, d] => {
            let d = *d;
            let mut cols = Vec::with_capacity(d);
            for j in 0..d {
                let yj = output.col(j).sum_all();
                let g = input_gradient(&yj, x);
                let rows = g.shape()[0];
                cols.push(g.mul(v).sum_axis(1).reshape(&[rows, 1]));
            }
            let refs: Vec<&Tensor> = cols.iter().collect();
            concat(&refs, 1)
        }
        s => panic!("tape: directional_derivative on output shape {:?}", s),
    }
    .reshape(output.shape())
}
