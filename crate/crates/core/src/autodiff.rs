//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a Wengert list: every primitive evaluates eagerly and
//! appends a node, so insertion order is a topological order and
//! [`Graph::backward`] is a single reverse sweep. Graphs are cheap to build
//! and are meant to be thrown away after one forward/backward pass.
//!
//! The primitive set is deliberately small: matmul (dense, or with a constant
//! CSR left operand), add, mul, scale, tanh, relu, reduce-mean over an axis,
//! concat along an axis, broadcast-row, gather-rows and sum-square. Every
//! model in the crate is composed from these.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::tensor::{gemm, Tensor};

/// Named parameter collection. `BTreeMap` keeps iteration order stable, which
/// the optimizer and checkpoint format rely on.
pub type Params = BTreeMap<String, Tensor>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    SparseMatMul,
    Add,
    Mul,
    Scale,
    Tanh,
    Relu,
    ReduceMean,
    Concat,
    BroadcastRow,
    GatherRows,
    SumSquare,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(Arc<CsrMatrix>, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    ReduceMean(Var, usize),
    Concat(Vec<Var>, usize),
    BroadcastRow(Var, usize),
    GatherRows(Var, Vec<usize>),
    SumSquare(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::SparseMatMul(..) => OpKind::SparseMatMul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Relu(..) => OpKind::Relu,
            Op::ReduceMean(..) => OpKind::ReduceMean,
            Op::Concat(..) => OpKind::Concat,
            Op::BroadcastRow(..) => OpKind::BroadcastRow,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::SumSquare(..) => OpKind::SumSquare,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
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

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Registers a named trainable leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(Error::invalid(format!("parameter {name:?} registered twice")));
        }
        let v = self.push(Op::Leaf, value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers every entry of `params` and returns the handles by name.
    pub fn params(&mut self, params: &Params) -> Result<BTreeMap<String, Var>> {
        params
            .iter()
            .map(|(k, t)| Ok((k.clone(), self.param(k, t.clone())?)))
            .collect()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Returns the root's value after checking that every node evaluated so
    /// far is finite.
    pub fn forward(&self, root: Var) -> Result<Tensor> {
        for node in &self.nodes[..=root.0] {
            if !node.value.is_finite() {
                return Err(Error::NonFinite(format!("{:?}", node.op.kind())));
            }
        }
        Ok(self.value(root).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = crate::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// `op * x` for a constant sparse operator.
    pub fn sparse_matmul(&mut self, op: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let value = op.matmul(self.value(x))?;
        Ok(self.push(Op::SparseMatMul(Arc::clone(op), x), value))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), value)
    }

    /// `a - b`, composed from add and scale.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    /// Mean over `axis` of a rank-2 tensor, keeping the reduced axis with
    /// size 1. Axis 0 averages the rows (one value per column).
    pub fn reduce_mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.require_rank2("reduce-mean")?;
        let d = t.data();
        let value = match axis {
            0 => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, x) in out.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                        *o += x;
                    }
                }
                let inv = 1.0 / r as f64;
                out.iter_mut().for_each(|o| *o *= inv);
                Tensor::matrix(1, c, out)?
            }
            1 => {
                let inv = 1.0 / c as f64;
                let out = (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum::<f64>() * inv).collect();
                Tensor::matrix(r, 1, out)?
            }
            _ => return Err(Error::shape("reduce-mean", format!("axis {axis} on rank-2 tensor"))),
        };
        Ok(self.push(Op::ReduceMean(a, axis), value))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let shapes: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).require_rank2("concat"))
            .collect::<Result<_>>()?;
        let value = match axis {
            0 => {
                let c = shapes[0].1;
                if shapes.iter().any(|s| s.1 != c) {
                    return Err(Error::shape("concat", format!("column counts differ: {shapes:?}")));
                }
                let rows = shapes.iter().map(|s| s.0).sum();
                let mut data = Vec::with_capacity(rows * c);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(rows, c, data)?
            }
            1 => {
                let r = shapes[0].0;
                if shapes.iter().any(|s| s.0 != r) {
                    return Err(Error::shape("concat", format!("row counts differ: {shapes:?}")));
                }
                let cols: usize = shapes.iter().map(|s| s.1).sum();
                let mut data = Vec::with_capacity(r * cols);
                for i in 0..r {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
                Tensor::matrix(r, cols, data)?
            }
            _ => return Err(Error::shape("concat", format!("axis {axis} on rank-2 tensors"))),
        };
        Ok(self.push(Op::Concat(parts.to_vec(), axis), value))
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_row(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.require_rank2("broadcast-row")?;
        if r != 1 || n == 0 {
            return Err(Error::shape("broadcast-row", format!("[{r}, {c}] to {n} rows")));
        }
        let value = Tensor::matrix(n, c, t.data().repeat(n))?;
        Ok(self.push(Op::BroadcastRow(a, n), value))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.require_rank2("gather-rows")?;
        if rows.is_empty() {
            return Err(Error::shape("gather-rows", "empty index set"));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::IndexOutOfRange { index: i, len: r });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(rows.len(), c, data)?;
        Ok(self.push(Op::GatherRows(a, rows.to_vec()), value))
    }

    pub fn sum_square(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Op::SumSquare(a), Tensor::scalar(s))
    }

    /// Gradients of a scalar root with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let seed = Tensor::full(rv.shape(), 1.0);
        Ok(self.backward_with_seed(root, seed))
    }

    fn backward_with_seed(&self, root: Var, seed: Tensor) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let mut ga = vec![0.0; ta.numel()];
                    gemm(&g, false, tb, true, &mut ga, false);
                    let mut gb = vec![0.0; tb.numel()];
                    gemm(ta, true, &g, false, &mut gb, false);
                    acc(&mut grads, *a, Tensor::new(ta.shape().to_vec(), ga).unwrap());
                    acc(&mut grads, *b, Tensor::new(tb.shape().to_vec(), gb).unwrap());
                }
                Op::SparseMatMul(m, x) => {
                    let tx = self.value(*x);
                    let mut gx = vec![0.0; tx.numel()];
                    m.transpose_matmul_into(&g, &mut gx);
                    acc(&mut grads, *x, Tensor::new(tx.shape().to_vec(), gx).unwrap());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = zip_map(&g, tb, |gi, y| gi * y);
                    let gb = zip_map(&g, ta, |gi, x| gi * x);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |gi, y| gi * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::ReduceMean(a, axis) => {
                    let ta = self.value(*a);
                    let (r, c) = (ta.rows(), ta.cols());
                    let gd = g.data();
                    let data = match axis {
                        0 => {
                            let inv = 1.0 / r as f64;
                            let row: Vec<f64> = gd.iter().map(|x| x * inv).collect();
                            row.repeat(r)
                        }
                        _ => {
                            let inv = 1.0 / c as f64;
                            gd.iter().flat_map(|&x| std::iter::repeat_n(x * inv, c)).collect()
                        }
                    };
                    acc(&mut grads, *a, Tensor::matrix(r, c, data).unwrap());
                }
                Op::Concat(parts, axis) => {
                    let gc = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let (r, c) = (tp.rows(), tp.cols());
                        let data = if *axis == 0 {
                            g.data()[offset * gc..(offset + r) * gc].to_vec()
                        } else {
                            (0..r)
                                .flat_map(|i| g.row_slice(i)[offset..offset + c].iter().copied())
                                .collect()
                        };
                        offset += if *axis == 0 { r } else { c };
                        acc(&mut grads, p, Tensor::matrix(r, c, data).unwrap());
                    }
                }
                Op::BroadcastRow(a, n) => {
                    let c = g.cols();
                    let mut out = vec![0.0; c];
                    for i in 0..*n {
                        for (o, x) in out.iter_mut().zip(g.row_slice(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, Tensor::matrix(1, c, out).unwrap());
                }
                Op::GatherRows(a, rows) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut out = vec![0.0; ta.numel()];
                    for (k, &i) in rows.iter().enumerate() {
                        for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, Tensor::new(ta.shape().to_vec(), out).unwrap());
                }
                Op::SumSquare(a) => {
                    let s = g.item() * 2.0;
                    acc(&mut grads, *a, self.value(*a).map(|x| s * x));
                }
            }
            grads[idx] = Some(g);
        }
        Gradients {
            per_node: grads,
            params: self.params.clone(),
            shapes: self.params.iter().map(|(k, v)| (k.clone(), self.value(*v).shape().to_vec())).collect(),
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

/// Result of a reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
    shapes: BTreeMap<String, Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to an arbitrary node, if the root depends on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.per_node.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).and_then(|&v| self.wrt(v))
    }

    /// Gradients for every registered parameter; parameters the root does
    /// not depend on get zeros.
    pub fn into_named(self) -> Params {
        let mut out = Params::new();
        for (name, v) in &self.params {
            let g = self.per_node.get(v.0).cloned().flatten();
            out.insert(name.clone(), g.unwrap_or_else(|| Tensor::zeros(&self.shapes[name])));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter.
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Denominator floor for the relative error so that vanishing gradient
/// entries are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Central finite differences of a scalar-valued graph builder.
pub fn numerical_gradient<F>(build: F, params: &Params, h: f64) -> Result<Params>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let eval = |p: &Params| -> Result<f64> {
        let mut g = Graph::new();
        let vars = g.params(p)?;
        let root = build(&mut g, &vars)?;
        Ok(g.forward(root)?.item())
    };
    let mut out = Params::new();
    let mut work = params.clone();
    for (name, t) in params {
        let mut grad = Tensor::zeros(t.shape());
        for i in 0..t.numel() {
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            grad.data_mut()[i] = (fp - fm) / (2.0 * h);
        }
        out.insert(name.clone(), grad);
    }
    Ok(out)
}

pub fn compare_gradients(analytic: &Params, numeric: &Params, tol: f64) -> GradCheckReport {
    let mut per_param = BTreeMap::new();
    for (name, a) in analytic {
        let err = match numeric.get(name) {
            Some(n) if n.shape() == a.shape() => a
                .data()
                .iter()
                .zip(n.data())
                .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(GRAD_CHECK_FLOOR))
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        };
        per_param.insert(name.clone(), err);
    }
    let max_rel_error = per_param.values().copied().fold(0.0, f64::max);
    GradCheckReport {
        per_param,
        max_rel_error,
        tol,
        passed: max_rel_error <= tol,
    }
}

/// Compares reverse-mode gradients of `build` against central differences.
pub fn grad_check<F>(build: F, params: &Params, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    if h <= 0.0 || tol <= 0.0 {
        return Err(Error::invalid("grad_check needs h > 0 and tol > 0"));
    }
    let mut g = Graph::new();
    let vars = g.params(params)?;
    let root = build(&mut g, &vars)?;
    g.forward(root)?;
    let analytic = g.backward(root)?.into_named();
    let numeric = numerical_gradient(&build, params, h)?;
    Ok(compare_gradients(&analytic, &numeric, tol))
}
