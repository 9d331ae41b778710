//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive in evaluation order, so the node list
//! is already topologically sorted. [`Graph::backward`] walks it in reverse
//! and accumulates chain-rule gradients. Parameters are borrowed from a
//! [`ParameterStore`] rather than copied; their gradients come back as a
//! [`Gradients`] value that the caller folds into the store.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBcast(Var, Var),
    SubBcast(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    SumAll(Var),
    Concat(Vec<Var>, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    InstanceNorm { x: Var, inv_std: f64 },
    SumGroups { x: Var, groups: Vec<Vec<usize>> },
    SelectRows { x: Var, rows: Vec<usize> },
    Reshape(Var),
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Epsilon added to the variance inside [`Graph::instance_norm`].
pub const NORM_EPS: f64 = 1e-5;

/// Splits `shape` around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// The recorded computation for one evaluation.
pub struct Graph<'p> {
    params: Option<&'p ParameterStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParameterStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self
                .params
                .expect("parameter node without a store")
                .get(id)
                .values(),
            _ => &node.value,
        }
    }

    /// Copies a node out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || numel(&shape) == value.len());
        let requires_grad = match op {
            Op::Input | Op::Param(_) => true,
            Op::Constant => false,
            _ => inputs.iter().any(|&i| self.nodes[i.0].requires_grad),
        };
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- leaves -----------------------------------------------------------

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        let values = t.values().to_vec();
        self.push(shape, values, Op::Constant, &[])
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.constant(t))
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.push(Vec::new(), vec![x], Op::Constant, &[])
    }

    /// A leaf whose gradient is reported by [`Graph::backward_with_inputs`].
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Input, &[])
    }

    /// A parameter from the bound store. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let shape = store.get(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id), &[]);
        self.param_vars.insert(id, v);
        v
    }

    // ---- elementwise ------------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(a).iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b), &[a, b]))
    }

    fn bcast_check(&self, op: &'static str, x: Var, b: Var) -> Result<usize> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(Error::Shape {
                op,
                lhs: xs.to_vec(),
                rhs: bs.to_vec(),
            });
        }
        Ok(numel(bs))
    }

    /// `x + b` where `b`'s shape is a trailing suffix of `x`'s shape.
    pub fn add_bcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let m = self.bcast_check("add_bcast", x, b)?;
        let bv = self.value(b);
        let v: Vec<f64> = self.value(x).iter().enumerate().map(|(i, &xi)| xi + bv[i % m]).collect();
        Ok(self.push(self.shape(x).to_vec(), v, Op::AddBcast(x, b), &[x, b]))
    }

    /// `x - b` where `b`'s shape is a trailing suffix of `x`'s shape.
    pub fn sub_bcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let m = self.bcast_check("sub_bcast", x, b)?;
        let bv = self.value(b);
        let v: Vec<f64> = self.value(x).iter().enumerate().map(|(i, &xi)| xi - bv[i % m]).collect();
        Ok(self.push(self.shape(x).to_vec(), v, Op::SubBcast(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.map(x, |a| a * c);
        self.push(self.shape(x).to_vec(), v, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let v = self.map(x, |a| a + c);
        self.push(self.shape(x).to_vec(), v, Op::Shift(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.map(x, |a| if a > 0.0 { a } else { 0.0 });
        self.push(self.shape(x).to_vec(), v, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, sigmoid);
        self.push(self.shape(x).to_vec(), v, Op::Sigmoid(x), &[x])
    }

    /// `log σ(x)`, stable for large |x|.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, log_sigmoid);
        self.push(self.shape(x).to_vec(), v, Op::LogSigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::exp);
        self.push(self.shape(x).to_vec(), v, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.map(x, f64::ln);
        self.push(self.shape(x).to_vec(), v, Op::Log(x), &[x])
    }

    // ---- linear algebra ---------------------------------------------------

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; n * m];
        for (i, crow) in out.chunks_exact_mut(m).enumerate() {
            for (p, &aip) in av[i * k..(i + 1) * k].iter().enumerate() {
                if aip != 0.0 {
                    axpy(aip, &bv[p * m..(p + 1) * m], crow);
                }
            }
        }
        Ok(self.push(vec![n, m], out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x · w + b` for `x: [n, k]`, `w: [k, m]`, `b: [m]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bcast(y, b)
    }

    // ---- reductions -------------------------------------------------------

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::Shape {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: vec![axis],
            });
        }
        Ok(())
    }

    fn reduce_axis(&self, x: Var, axis: usize) -> (Vec<usize>, Vec<f64>) {
        let shape = self.shape(x);
        let (outer, n, inner) = axis_split(shape, axis);
        let xv = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &xv[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        (out_shape, out)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", x, axis)?;
        let (shape, v) = self.reduce_axis(x, axis);
        Ok(self.push(shape, v, Op::SumAxis(x, axis), &[x]))
    }

    /// Averages over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_axis", x, axis)?;
        let n = self.shape(x)[axis] as f64;
        let (shape, mut v) = self.reduce_axis(x, axis);
        v.iter_mut().for_each(|a| *a /= n);
        Ok(self.push(shape, v, Op::MeanAxis(x, axis), &[x]))
    }

    /// Sum of every entry, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Vec::new(), vec![s], Op::SumAll(x), &[x])
    }

    /// Order-independent pooling of rows: output row `g` is the sum of the
    /// rows of `x` listed in `groups[g]`.
    ///
    /// Each output entry adds its addends in sorted order, so the result is
    /// bitwise identical under any reordering of a group.
    pub fn sum_groups(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "sum_groups",
                lhs: shape.to_vec(),
                rhs: vec![2],
            });
        }
        let (n, m) = (shape[0], shape[1]);
        if let Some(bad) = groups.iter().find(|g| g.is_empty() || g.iter().any(|&r| r >= n)) {
            return Err(Error::invalid(format!("sum_groups: group {bad:?} invalid for {n} rows")));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; groups.len() * m];
        let mut buf = Vec::new();
        for (gi, group) in groups.iter().enumerate() {
            for j in 0..m {
                buf.clear();
                buf.extend(group.iter().map(|&r| xv[r * m + j]));
                buf.sort_unstable_by(f64::total_cmp);
                out[gi * m + j] = buf.iter().fold(0.0, |acc, &v| acc + v);
            }
        }
        let groups = groups.to_vec();
        let out_shape = vec![groups.len(), m];
        Ok(self.push(out_shape, out, Op::SumGroups { x, groups }, &[x]))
    }

    // ---- structure --------------------------------------------------------

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &x in xs {
                let len = self.shape(x)[axis] * inner;
                out.extend_from_slice(&self.value(x)[o * len..(o + 1) * len]);
            }
        }
        Ok(self.push(out_shape, out, Op::Concat(xs.to_vec(), axis), xs))
    }

    /// Gathers rows (indices along axis 0), repetition allowed.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(Error::Shape {
                op: "select_rows",
                lhs: shape,
                rhs: rows.to_vec(),
            });
        }
        let inner = numel(&shape[1..]);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            out.extend_from_slice(&xv[r * inner..(r + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        Ok(self.push(
            out_shape,
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != numel(self.shape(x)) || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let v = self.value(x).to_vec();
        Ok(self.push(shape, v, Op::Reshape(x), &[x]))
    }

    /// Forward value `hard`, gradient routed unchanged into `relaxed`.
    pub fn straight_through(&mut self, hard: Vec<f64>, relaxed: Var) -> Result<Var> {
        if hard.len() != numel(self.shape(relaxed)) {
            return Err(Error::Shape {
                op: "straight_through",
                lhs: vec![hard.len()],
                rhs: self.shape(relaxed).to_vec(),
            });
        }
        Ok(self.push(self.shape(relaxed).to_vec(), hard, Op::StraightThrough(relaxed), &[relaxed]))
    }

    // ---- normalization ----------------------------------------------------

    fn softmax_values(&self, x: Var, axis: usize, log: bool) -> Vec<f64> {
        let (outer, n, inner) = axis_split(self.shape(x), axis);
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| xv[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..n).map(|j| (xv[idx(j)] - max).exp()).sum();
                for j in 0..n {
                    out[idx(j)] = if log {
                        xv[idx(j)] - max - z.ln()
                    } else {
                        (xv[idx(j)] - max).exp() / z
                    };
                }
            }
        }
        out
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let v = self.softmax_values(x, axis, false);
        Ok(self.push(self.shape(x).to_vec(), v, Op::Softmax(x, axis), &[x]))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let v = self.softmax_values(x, axis, true);
        Ok(self.push(self.shape(x).to_vec(), v, Op::LogSoftmax(x, axis), &[x]))
    }

    /// Standardizes all entries of `x` with statistics taken over the whole
    /// tensor: `(x - mean) / sqrt(var + NORM_EPS)`.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.len() as f64;
        let mean = xv.iter().sum::<f64>() / n;
        let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + NORM_EPS).sqrt();
        let v = xv.iter().map(|v| (v - mean) * inv_std).collect();
        self.push(self.shape(x).to_vec(), v, Op::InstanceNorm { x, inv_std }, &[x])
    }

    // ---- backward ---------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every store parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_with_inputs(loss).map(|(g, _)| g)
    }

    /// Like [`Graph::backward`], also returning gradients of [`Graph::input`]
    /// leaves, indexed by node.
    pub fn backward_with_inputs(&self, loss: Var) -> Result<(Gradients, HashMap<Var, Vec<f64>>)> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut param_grads = match self.params {
            Some(p) => Gradients::zeros_like(p),
            None => Gradients { params: Vec::new() },
        };
        let mut inputs = HashMap::new();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    inputs.insert(Var(i), g);
                }
                Op::Param(id) => {
                    param_grads.params[id.0] = Some(g);
                }
                op => self.backprop_op(op, &node.value, &g, &mut grads),
            }
        }
        Ok((param_grads, inputs))
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = numel(&self.nodes[v.0].shape);
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop_op(&self, op: &Op, out: &[f64], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Constant | Op::Input | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(1.0, g, ga);
                }
                if let Some(gb) = self.slot(grads, b) {
                    axpy(1.0, g, gb);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, a) {
                    axpy(1.0, g, ga);
                }
                if let Some(gb) = self.slot(grads, b) {
                    axpy(-1.0, g, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    let bv = self.value(b);
                    let ga = self.slot(grads, a).unwrap();
                    for ((d, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if self.requires_grad(b) {
                    let av = self.value(a);
                    let gb = self.slot(grads, b).unwrap();
                    for ((d, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::AddBcast(x, b) | Op::SubBcast(x, b) => {
                let sign = if matches!(op, Op::AddBcast(..)) { 1.0 } else { -1.0 };
                if let Some(gx) = self.slot(grads, x) {
                    axpy(1.0, g, gx);
                }
                let m = numel(self.shape(b));
                if let Some(gb) = self.slot(grads, b) {
                    for row in g.chunks_exact(m) {
                        axpy(sign, row, gb);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = self.slot(grads, x) {
                    axpy(c, g, gx);
                }
            }
            Op::Shift(x) | Op::Reshape(x) | Op::StraightThrough(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    axpy(1.0, g, gx);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(a) {
                    let bv = self.value(b);
                    let ga = self.slot(grads, a).unwrap();
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            ga[i * k + p] += dot(grow, &bv[p * m..(p + 1) * m]);
                        }
                    }
                }
                if self.requires_grad(b) {
                    let av = self.value(a);
                    let gb = self.slot(grads, b).unwrap();
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip != 0.0 {
                                axpy(aip, grow, &mut gb[p * m..(p + 1) * m]);
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for ((d, gi), y) in gx.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for ((d, gi), y) in gx.iter_mut().zip(g).zip(out) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(x);
                if let Some(gx) = self.slot(grads, x) {
                    for ((d, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        *d += gi * sigmoid(-xi);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    for ((d, gi), y) in gx.iter_mut().zip(g).zip(out) {
                        *d += gi * y;
                    }
                }
            }
            Op::Log(x) => {
                let xv = self.value(x);
                if let Some(gx) = self.slot(grads, x) {
                    for ((d, gi), xi) in gx.iter_mut().zip(g).zip(xv) {
                        *d += gi / xi;
                    }
                }
            }
            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                let (outer, n, inner) = axis_split(self.shape(x), axis);
                let c = if matches!(op, Op::MeanAxis(..)) { 1.0 / n as f64 } else { 1.0 };
                if let Some(gx) = self.slot(grads, x) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            axpy(c, src, &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner]);
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.slot(grads, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Concat(ref xs, axis) => {
                let mut out_shape = self.shape(xs[0]).to_vec();
                out_shape[axis] = xs.iter().map(|&x| self.shape(x)[axis]).sum();
                let (outer, _, inner) = axis_split(&out_shape, axis);
                let row = out_shape[axis] * inner;
                let mut offset = 0;
                for &x in xs {
                    let len = self.shape(x)[axis] * inner;
                    if let Some(gx) = self.slot(grads, x) {
                        for o in 0..outer {
                            let src = &g[o * row + offset..o * row + offset + len];
                            axpy(1.0, src, &mut gx[o * len..(o + 1) * len]);
                        }
                    }
                    offset += len;
                }
            }
            Op::Softmax(x, axis) | Op::LogSoftmax(x, axis) => {
                let log = matches!(op, Op::LogSoftmax(..));
                let (outer, n, inner) = axis_split(self.shape(x), axis);
                if let Some(gx) = self.slot(grads, x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            if log {
                                let gs: f64 = (0..n).map(|j| g[idx(j)]).sum();
                                for j in 0..n {
                                    gx[idx(j)] += g[idx(j)] - out[idx(j)].exp() * gs;
                                }
                            } else {
                                let dotp: f64 = (0..n).map(|j| g[idx(j)] * out[idx(j)]).sum();
                                for j in 0..n {
                                    gx[idx(j)] += out[idx(j)] * (g[idx(j)] - dotp);
                                }
                            }
                        }
                    }
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let n = out.len() as f64;
                let mean_g = g.iter().sum::<f64>() / n;
                let mean_gy = g.iter().zip(out).map(|(a, b)| a * b).sum::<f64>() / n;
                if let Some(gx) = self.slot(grads, x) {
                    for ((d, gi), y) in gx.iter_mut().zip(g).zip(out) {
                        *d += inv_std * (gi - mean_g - y * mean_gy);
                    }
                }
            }
            Op::SumGroups { x, ref groups } => {
                let m = self.shape(x)[1];
                if let Some(gx) = self.slot(grads, x) {
                    for (gi, group) in groups.iter().enumerate() {
                        let src = &g[gi * m..(gi + 1) * m];
                        for &r in group {
                            axpy(1.0, src, &mut gx[r * m..(r + 1) * m]);
                        }
                    }
                }
            }
            Op::SelectRows { x, ref rows } => {
                let inner = numel(&self.shape(x)[1..]);
                if let Some(gx) = self.slot(grads, x) {
                    for (i, &r) in rows.iter().enumerate() {
                        axpy(1.0, &g[i * inner..(i + 1) * inner], &mut gx[r * inner..(r + 1) * inner]);
                    }
                }
            }
        }
    }
}
