//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; `backward`
//! replays the list in exact reverse creation order. Variables are plain
//! indices into the node list, so a node's inputs always precede it.

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity applied by dense layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Elu,
    Tanh,
    Sigmoid,
    Abs,
    Square,
    Sqrt,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ScaleCols(Var, Vec<f64>),
    Unary(Var, Unary),
    BroadcastRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SumCols(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations on dense tensors and differentiates a scalar root.
///
/// A tape is single-threaded. Independent tapes can run on different threads.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the root with respect to every leaf that required a gradient.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when the root does not depend on it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn gemm(m: usize, k: usize, n: usize, a: (&[f64], usize, usize), b: (&[f64], usize, usize), c: &mut [f64], beta: f64) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover the strided index ranges
    // (m-1)*rs + (k-1)*cs for a, (k-1)*rs + (n-1)*cs for b, and m*n for c.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
        }
    }

    /// Derivative given the input `x` and the output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            // Kinks take the left branch: derivative 0 at exactly 0.
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Sqrt => 0.5 / y,
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self { nodes: Vec::with_capacity(nodes) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(AutodiffError::UnknownVar(v.0))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.value.shape() != nb.value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                expected: na.value.shape().to_vec(),
                found: nb.value.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `x · wᵀ + b` for a batch `x` of shape `[rows, in]` and weights `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let wv = &self.node(w)?.value;
        if wv.shape().len() != 2 || xv.cols() != wv.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "linear",
                expected: vec![xv.rows(), wv.cols()],
                found: xv.shape().to_vec(),
            });
        }
        let (rows, inp, out) = (xv.rows(), xv.cols(), wv.rows());
        let mut data = vec![0.0; rows * out];
        let mut needs = self.nodes[x.0].needs_grad || self.nodes[w.0].needs_grad;
        if let Some(b) = b {
            let bv = &self.node(b)?.value;
            if bv.len() != out {
                return Err(AutodiffError::ShapeMismatch {
                    op: "linear bias",
                    expected: vec![out],
                    found: bv.shape().to_vec(),
                });
            }
            for row in data.chunks_exact_mut(out) {
                row.copy_from_slice(bv.data());
            }
            needs |= self.nodes[b.0].needs_grad;
        }
        gemm(rows, inp, out, (xv.data(), inp, 1), (wv.data(), 1, inp), &mut data, if b.is_some() { 1.0 } else { 0.0 });
        let value = Tensor::from_parts(vec![rows, out], data);
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let node = self.node(a)?;
        let value = node.value.map(|x| c * x);
        let needs = node.needs_grad;
        Ok(self.push(value, Op::Scale(a, c), needs))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let node = self.node(a)?;
        let value = node.value.map(|x| x + c);
        let needs = node.needs_grad;
        Ok(self.push(value, Op::AddConst(a), needs))
    }

    /// Multiplies column `j` by `factors[j]`.
    pub fn scale_cols(&mut self, a: Var, factors: &[f64]) -> Result<Var> {
        let node = self.node(a)?;
        if node.value.cols() != factors.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "scale_cols",
                expected: vec![node.value.rows(), factors.len()],
                found: node.value.shape().to_vec(),
            });
        }
        let mut data = node.value.data().to_vec();
        for row in data.chunks_exact_mut(factors.len()) {
            for (v, f) in row.iter_mut().zip(factors) {
                *v *= f;
            }
        }
        let value = Tensor::from_parts(node.value.shape().to_vec(), data);
        let needs = node.needs_grad;
        Ok(self.push(value, Op::ScaleCols(a, factors.to_vec()), needs))
    }

    fn unary(&mut self, a: Var, u: Unary) -> Result<Var> {
        let node = self.node(a)?;
        let value = node.value.map(|x| u.apply(x));
        let needs = node.needs_grad;
        Ok(self.push(value, Op::Unary(a, u), needs))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Elu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sqrt)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        match act {
            Activation::Identity => {
                self.node(a)?;
                Ok(a)
            }
            Activation::Relu => self.relu(a),
            Activation::Elu => self.elu(a),
            Activation::Tanh => self.tanh(a),
            Activation::Sigmoid => self.sigmoid(a),
        }
    }

    /// Repeats a single row (`[n]` or `[1, n]`) into a `[rows, n]` matrix.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let node = self.node(v)?;
        if node.value.rows() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast_rows",
                expected: vec![1, node.value.cols()],
                found: node.value.shape().to_vec(),
            });
        }
        if rows == 0 {
            return Err(AutodiffError::InvalidShape(vec![0, node.value.cols()]));
        }
        let n = node.value.cols();
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(node.value.data());
        }
        let needs = node.needs_grad;
        Ok(self.push(Tensor::from_parts(vec![rows, n], data), Op::BroadcastRows(v), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| AutodiffError::Invalid("concat_cols of nothing".into()))?;
        let rows = self.node(*first)?.value.rows();
        let mut total = 0;
        let mut needs = false;
        for &p in parts {
            let node = self.node(p)?;
            if node.value.rows() != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    expected: vec![rows, node.value.cols()],
                    found: node.value.shape().to_vec(),
                });
            }
            total += node.value.cols();
            needs |= node.needs_grad;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.row(r));
            }
        }
        Ok(self.push(Tensor::from_parts(vec![rows, total], data), Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let node = self.node(x)?;
        let cols = node.value.cols();
        if len == 0 || start + len > cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                expected: vec![node.value.rows(), start + len],
                found: node.value.shape().to_vec(),
            });
        }
        let rows = node.value.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&node.value.row(r)[start..start + len]);
        }
        let needs = node.needs_grad;
        Ok(self.push(Tensor::from_parts(vec![rows, len], data), Op::SliceCols { x, start }, needs))
    }

    /// Per-row sum: `[rows, cols] -> [rows, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let cols = node.value.cols();
        let data: Vec<f64> = node.value.data().chunks_exact(cols).map(|r| r.iter().sum()).collect();
        let rows = data.len();
        let needs = node.needs_grad;
        Ok(self.push(Tensor::from_parts(vec![rows, 1], data), Op::SumCols(x), needs))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let s = node.value.sum();
        let needs = node.needs_grad;
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), needs))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let node = self.node(x)?;
        let m = node.value.sum() / node.value.len() as f64;
        let needs = node.needs_grad;
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), needs))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_node = self.node(root)?;
        if root_node.value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match (&self.nodes[i].op, g) {
                (Op::Leaf, Some(g)) if self.nodes[i].needs_grad => {
                    Some(Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let value = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (value(*x), value(*w));
                let (rows, inp, out) = (xv.rows(), xv.cols(), wv.rows());
                if needs(*x) {
                    let gx = slot(grads, *x, xv.len());
                    gemm(rows, out, inp, (g, out, 1), (wv.data(), inp, 1), gx, 1.0);
                }
                if needs(*w) {
                    let gw = slot(grads, *w, wv.len());
                    gemm(out, rows, inp, (g, 1, out), (xv.data(), inp, 1), gw, 1.0);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let gb = slot(grads, *b, out);
                        for row in g.chunks_exact(out) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        add_into(slot(grads, v, g.len()), g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(slot(grads, *a, g.len()), g, 1.0);
                }
                if needs(*b) {
                    add_into(slot(grads, *b, g.len()), g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let other = value(*b).data();
                    let ga = slot(grads, *a, g.len());
                    for ((acc, gi), o) in ga.iter_mut().zip(g).zip(other) {
                        *acc += gi * o;
                    }
                }
                if needs(*b) {
                    let other = value(*a).data();
                    let gb = slot(grads, *b, g.len());
                    for ((acc, gi), o) in gb.iter_mut().zip(g).zip(other) {
                        *acc += gi * o;
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    add_into(slot(grads, *a, g.len()), g, *c);
                }
            }
            Op::AddConst(a) => {
                if needs(*a) {
                    add_into(slot(grads, *a, g.len()), g, 1.0);
                }
            }
            Op::ScaleCols(a, factors) => {
                if needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (acc_row, g_row) in ga.chunks_exact_mut(factors.len()).zip(g.chunks_exact(factors.len())) {
                        for ((acc, gi), f) in acc_row.iter_mut().zip(g_row).zip(factors) {
                            *acc += gi * f;
                        }
                    }
                }
            }
            Op::Unary(a, u) => {
                if needs(*a) {
                    let x = value(*a).data();
                    let y = node.value.data();
                    let ga = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * u.derivative(x[i], y[i]);
                    }
                }
            }
            Op::BroadcastRows(v) => {
                if needs(*v) {
                    let n = value(*v).len();
                    let gv = slot(grads, *v, n);
                    for row in g.chunks_exact(n) {
                        add_into(gv, row, 1.0);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = value(p);
                    let c = pv.cols();
                    if needs(p) {
                        let gp = slot(grads, p, pv.len());
                        for (dst, src) in gp.chunks_exact_mut(c).zip(g.chunks_exact(total)) {
                            add_into(dst, &src[offset..offset + c], 1.0);
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                if needs(*x) {
                    let xv = value(*x);
                    let (cols, len) = (xv.cols(), node.value.cols());
                    let gx = slot(grads, *x, xv.len());
                    for (dst, src) in gx.chunks_exact_mut(cols).zip(g.chunks_exact(len)) {
                        add_into(&mut dst[*start..*start + len], src, 1.0);
                    }
                }
            }
            Op::SumCols(x) => {
                if needs(*x) {
                    let xv = value(*x);
                    let cols = xv.cols();
                    let gx = slot(grads, *x, xv.len());
                    for (dst, gi) in gx.chunks_exact_mut(cols).zip(g) {
                        for v in dst {
                            *v += gi;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let n = value(*x).len();
                    for v in slot(grads, *x, n) {
                        *v += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if needs(*x) {
                    let n = value(*x).len();
                    let share = g[0] / n as f64;
                    for v in slot(grads, *x, n) {
                        *v += share;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(r, c, data.to_vec()).unwrap()
    }

    #[test]
    fn root_gradient_is_one() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let g = tape.backward(x).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        // root = sum(W x) with x fixed: d root / d W[o, i] = x[i] for every o.
        let mut tape = Tape::new();
        let x = tape.constant(mat(1, 3, &[0.5, -2.0, 4.0]));
        let w = tape.param(mat(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let y = tape.linear(x, w, None).unwrap();
        let root = tape.sum(y).unwrap();
        assert_eq!(tape.value(y).data(), &[8.5, 3.5]);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.5, -2.0, 4.0, 0.5, -2.0, 4.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn constant_branch_has_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let _unused = tape.square(p).unwrap();
        let root = tape.square(c).unwrap();
        let g = tape.backward(root).unwrap();
        assert!(g.get(p).is_none());
        assert_eq!(g.get_or_zeros(p, tape.value(p)).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(tape.add(a, b), Err(AutodiffError::ShapeMismatch { op: "add", .. })));
        let x = tape.constant(mat(2, 3, &[0.0; 6]));
        let w = tape.param(mat(2, 2, &[0.0; 4]));
        assert!(tape.linear(x, w, None).is_err());
    }

    #[test]
    fn reused_node_accumulates() {
        // f = x * x + x  => f' = 2x + 1
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let xx = tape.mul(x, x).unwrap();
        let f = tape.add(xx, x).unwrap();
        let g = tape.backward(f).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn relu_and_abs_take_zero_slope_at_kink() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0, -1.0, 2.0]));
        let r = tape.relu(x).unwrap();
        let a = tape.abs(x).unwrap();
        let s = tape.add(r, a).unwrap();
        let root = tape.sum(s).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, -1.0, 2.0]);
    }

    #[test]
    fn slice_concat_broadcast_roundtrip() {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.broadcast_rows(v, 3).unwrap();
        let left = tape.slice_cols(b, 0, 1).unwrap();
        let right = tape.slice_cols(b, 1, 1).unwrap();
        let c = tape.concat_cols(&[right, left, right]).unwrap();
        assert_eq!(tape.value(c).shape(), &[3, 3]);
        assert_eq!(tape.value(c).row(0), &[2.0, 1.0, 2.0]);
        let rs = tape.sum_cols(c).unwrap();
        let root = tape.mean(rs).unwrap();
        let g = tape.backward(root).unwrap();
        // mean over 3 rows of (2*v1 + v0): d/dv0 = 1, d/dv1 = 2
        assert_eq!(g.get(v).unwrap().data(), &[1.0, 2.0]);
    }
}
