use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::tensor::{matmul_raw, transpose_raw};
use super::{AutodiffError, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// A fused primitive with a hand-written first-order backward rule.
///
/// Gradients produced by a custom op are recorded as opaque tape nodes:
/// they carry values but cannot be differentiated a second time.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, `None` where `needs[i]` is false or
    /// the input has no influence on the output.
    fn backward(
        &self,
        inputs: &[Tensor],
        output: &Tensor,
        grad_output: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Affine {
        x: usize,
        scale: f64,
    },
    MatMul(usize, usize),
    Transpose(usize),
    AddRow(usize, usize),
    SumRows(usize),
    BroadcastRows(usize),
    MulCol(usize, usize),
    SumCols(usize),
    BroadcastCols(usize),
    Sum(usize),
    Expand(usize),
    Reshape(usize),
    Relu(usize),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Sqrt(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    PadCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    RowNorm(usize),
    SafeRecip(usize),
    Custom {
        op: Rc<dyn CustomOp>,
        inputs: Vec<usize>,
    },
    Opaque {
        name: &'static str,
        parents: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::AddRow(..) => "add_row",
            Op::SumRows(_) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::MulCol(..) => "mul_col",
            Op::SumCols(_) => "sum_cols",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::Sum(_) => "sum",
            Op::Expand(_) => "expand",
            Op::Reshape(_) => "reshape",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Abs(_) => "abs",
            Op::Sqrt(_) => "sqrt",
            Op::SliceCols { .. } => "slice",
            Op::PadCols { .. } => "pad",
            Op::ConcatCols(_) => "concat",
            Op::RowNorm(_) => "row_norm",
            Op::SafeRecip(_) => "safe_recip",
            Op::Custom { op, .. } => op.name(),
            Op::Opaque { name, .. } => name,
        }
    }

    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Opaque { parents, .. } => parents.clone(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Neg(a)
            | Op::Transpose(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::SumCols(a)
            | Op::BroadcastCols(a)
            | Op::Sum(a)
            | Op::Expand(a)
            | Op::Reshape(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::RowNorm(a)
            | Op::SafeRecip(a) => vec![*a],
            Op::Affine { x, .. } | Op::SliceCols { x, .. } | Op::PadCols { x, .. } => vec![*x],
            Op::ConcatCols(parts) => parts.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Counters from the most recent backward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BackwardStats {
    /// Nodes on a path between a `wrt` node and the output.
    pub relevant: usize,
    /// Nodes whose backward rule ran.
    pub visited: usize,
    /// Maximum number of times any single node's rule ran.
    pub max_visits_per_node: usize,
}

/// Records a computation for reverse-mode differentiation.
///
/// Single-threaded by construction. Gradients returned by [`Tape::grad`] are
/// themselves nodes on the same tape, so a scalar built from them can be
/// differentiated again.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    check_finite: bool,
    stats: Cell<BackwardStats>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("check_finite", &self.check_finite)
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

/// Result of [`Tape::grad`]: one gradient per requested node.
pub struct Gradients<'t> {
    pub grads: Vec<Var<'t>>,
    /// `true` where the requested node does not influence the output; the
    /// matching gradient is an all-zero constant.
    pub detached: Vec<bool>,
}

impl<'t> Gradients<'t> {
    pub fn values(&self) -> Vec<Tensor> {
        self.grads.iter().map(|g| g.value()).collect()
    }
}

impl Tape {
    /// A tape that rejects non-finite values after every op.
    pub fn new() -> Self {
        Self::with_finite_check(true)
    }

    /// A tape without the per-op NaN/Inf scan.
    pub fn unchecked() -> Self {
        Self::with_finite_check(false)
    }

    pub fn with_finite_check(check_finite: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite,
            stats: Cell::new(BackwardStats::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn backward_stats(&self) -> BackwardStats {
        self.stats.get()
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Leaf)
    }

    /// A value treated as constant by the backward pass.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_unchecked(value, Op::Constant)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push_unchecked(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op) -> Result<Var<'_>> {
        if self.check_finite && !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        Ok(self.push_unchecked(value, op))
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Records a fused op whose forward value was computed by the caller.
    pub fn custom<'t>(
        &'t self,
        op: Rc<dyn CustomOp>,
        inputs: &[Var<'t>],
        output: Tensor,
    ) -> Result<Var<'t>> {
        for v in inputs {
            self.check_owner(v)?;
        }
        let inputs = inputs.iter().map(|v| v.id).collect();
        self.push(output, Op::Custom { op, inputs })
    }

    fn check_owner(&self, v: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(AutodiffError::ForeignVar)
        }
    }

    /// Gradient of a scalar `output` with respect to each node in `wrt`.
    ///
    /// `wrt` may name leaves or intermediate nodes. The returned gradients
    /// are recorded on this tape and remain differentiable.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Gradients<'t>> {
        self.check_owner(&output)?;
        for w in wrt {
            self.check_owner(w)?;
        }
        let out_val = self.value_of(output.id);
        if out_val.len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: out_val.shape().to_vec(),
            });
        }
        let out_id = output.id;
        let Some(lo) = wrt.iter().map(|w| w.id).min() else {
            return Ok(Gradients {
                grads: Vec::new(),
                detached: Vec::new(),
            });
        };

        // Forward sweep: which nodes depend on some `wrt` node.
        let mut depends = vec![false; out_id + 1];
        for w in wrt {
            if w.id <= out_id {
                depends[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in lo..=out_id {
                if !depends[i] {
                    depends[i] = nodes[i].op.parents().iter().any(|&p| p >= lo && depends[p]);
                }
            }
        }
        let relevant = depends.iter().filter(|&&d| d).count();

        let mut adjoint: Vec<Option<usize>> = vec![None; out_id + 1];
        adjoint[out_id] = Some(self.constant(Tensor::ones(out_val.shape())).id);
        let mut visits = vec![0usize; out_id + 1];
        let mut visited = 0usize;

        for i in (lo..=out_id).rev() {
            if !depends[i] {
                continue;
            }
            let Some(g) = adjoint[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            visits[i] += 1;
            visited += 1;
            let contributions = self.backward_rule(i, &op, g, &depends)?;
            for (parent, contrib) in contributions {
                if !depends[parent] {
                    continue;
                }
                adjoint[parent] = Some(match adjoint[parent] {
                    None => contrib,
                    Some(prev) => self.var(prev).add(self.var(contrib))?.id,
                });
            }
        }

        self.stats.set(BackwardStats {
            relevant,
            visited,
            max_visits_per_node: visits.iter().copied().max().unwrap_or(0),
        });

        let mut grads = Vec::with_capacity(wrt.len());
        let mut detached = Vec::with_capacity(wrt.len());
        for w in wrt {
            match adjoint.get(w.id).copied().flatten() {
                Some(id) => {
                    grads.push(self.var(id));
                    detached.push(false);
                }
                None => {
                    grads.push(self.constant(Tensor::zeros(w.value().shape())));
                    detached.push(true);
                }
            }
        }
        Ok(Gradients { grads, detached })
    }

    /// Parent contributions for node `i` with adjoint `g`.
    fn backward_rule(
        &self,
        i: usize,
        op: &Op,
        g: usize,
        depends: &[bool],
    ) -> Result<Vec<(usize, usize)>> {
        let g = self.var(g);
        let y = self.var(i);
        let v = |id: usize| self.var(id);
        let out = match *op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Opaque { name, .. } => {
                return Err(AutodiffError::NotTwiceDifferentiable { op: name })
            }
            Op::Add(a, b) => vec![(a, g.id), (b, g.id)],
            Op::Sub(a, b) => vec![(a, g.id), (b, g.neg()?.id)],
            Op::Mul(a, b) => {
                let mut c = Vec::new();
                if depends[a] {
                    c.push((a, g.mul(v(b))?.id));
                }
                if depends[b] {
                    c.push((b, g.mul(v(a))?.id));
                }
                c
            }
            Op::Div(a, b) => {
                let mut c = Vec::new();
                if depends[a] {
                    c.push((a, g.div(v(b))?.id));
                }
                if depends[b] {
                    c.push((b, g.mul(y)?.div(v(b))?.neg()?.id));
                }
                c
            }
            Op::Neg(a) => vec![(a, g.neg()?.id)],
            Op::Affine { x, scale } => vec![(x, g.affine(scale, 0.0)?.id)],
            Op::MatMul(a, b) => {
                let mut c = Vec::new();
                if depends[a] {
                    c.push((a, g.matmul(v(b).transpose()?)?.id));
                }
                if depends[b] {
                    c.push((b, v(a).transpose()?.matmul(g)?.id));
                }
                c
            }
            Op::Transpose(a) => vec![(a, g.transpose()?.id)],
            Op::AddRow(a, r) => {
                let mut c = vec![(a, g.id)];
                if depends[r] {
                    c.push((r, g.sum_rows()?.id));
                }
                c
            }
            Op::SumRows(a) => {
                let n = self.value_of(a).shape()[0];
                vec![(a, g.broadcast_rows(n)?.id)]
            }
            Op::BroadcastRows(a) => vec![(a, g.sum_rows()?.id)],
            Op::MulCol(a, col) => {
                let mut c = Vec::new();
                if depends[a] {
                    c.push((a, g.mul_col(v(col))?.id));
                }
                if depends[col] {
                    c.push((col, g.mul(v(a))?.sum_cols()?.id));
                }
                c
            }
            Op::SumCols(a) => {
                let k = self.value_of(a).shape()[1];
                vec![(a, g.broadcast_cols(k)?.id)]
            }
            Op::BroadcastCols(a) => vec![(a, g.sum_cols()?.id)],
            Op::Sum(a) => {
                let shape = self.value_of(a).shape().to_vec();
                vec![(a, g.expand(&shape)?.id)]
            }
            Op::Expand(a) => {
                let shape = self.value_of(a).shape().to_vec();
                vec![(a, g.sum()?.reshape(&shape)?.id)]
            }
            Op::Reshape(a) => {
                let shape = self.value_of(a).shape().to_vec();
                vec![(a, g.reshape(&shape)?.id)]
            }
            Op::Relu(a) => {
                let step = self.value_of(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(a, g.mul(self.constant(step))?.id)]
            }
            Op::Tanh(a) => {
                let d = y.mul(y)?.affine(-1.0, 1.0)?;
                vec![(a, g.mul(d)?.id)]
            }
            Op::Sin(a) => vec![(a, g.mul(v(a).cos()?)?.id)],
            Op::Cos(a) => vec![(a, g.mul(v(a).sin()?)?.neg()?.id)],
            Op::Exp(a) => vec![(a, g.mul(y)?.id)],
            Op::Log(a) => vec![(a, g.div(v(a))?.id)],
            Op::Abs(a) => {
                let sign = self.value_of(a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                vec![(a, g.mul(self.constant(sign))?.id)]
            }
            Op::Sqrt(a) => vec![(a, g.div(y.affine(2.0, 0.0)?)?.id)],
            Op::SliceCols { x, start } => {
                let total = self.value_of(x).shape()[1];
                vec![(x, g.pad_cols(start, total)?.id)]
            }
            Op::PadCols { x, start } => {
                let width = self.value_of(x).shape()[1];
                vec![(x, g.slice_cols(start, start + width)?.id)]
            }
            Op::ConcatCols(ref parts) => {
                let mut c = Vec::with_capacity(parts.len());
                let mut off = 0;
                for &p in parts {
                    let w = self.value_of(p).shape()[1];
                    if depends[p] {
                        c.push((p, g.slice_cols(off, off + w)?.id));
                    }
                    off += w;
                }
                c
            }
            Op::RowNorm(a) => {
                let scale = g.mul(y.safe_recip()?)?;
                vec![(a, v(a).mul_col(scale)?.id)]
            }
            Op::SafeRecip(a) => vec![(a, g.mul(y)?.mul(y)?.neg()?.id)],
            Op::Custom { ref op, ref inputs } => {
                let in_vals: Vec<Tensor> = inputs.iter().map(|&p| self.value_of(p)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&p| depends[p]).collect();
                let grads = op.backward(&in_vals, &self.value_of(i), &g.value(), &needs)?;
                let mut c = Vec::new();
                for (k, (grad, need)) in grads.into_iter().zip(needs).enumerate() {
                    let p = inputs[k];
                    if let (Some(t), true) = (grad, need) {
                        if t.shape() != in_vals[k].shape() {
                            return Err(mismatch(op.name(), &t, &in_vals[k]));
                        }
                        let mut parents = vec![g.id];
                        parents.extend_from_slice(inputs);
                        let node = self.push_unchecked(
                            t,
                            Op::Opaque {
                                name: op.name(),
                                parents,
                            },
                        );
                        c.push((p, node.id));
                    }
                }
                c
            }
        };
        Ok(out)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Shortcut for one-element tensors.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    fn other(&self, other: Var<'t>) -> Result<Tensor> {
        self.tape.check_owner(&other)?;
        Ok(other.value())
    }

    fn elementwise(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let a = self.value();
        let b = self.other(other)?;
        if a.shape() != b.shape() {
            return Err(mismatch(name, &a, &b));
        }
        self.tape.push(a.zip_map(&b, f), op)
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Result<Var<'t>> {
        let a = self.value();
        self.tape.push(a.map(f), op)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(|x| -x, Op::Neg(self.id))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'t>> {
        self.unary(move |x| scale * x + shift, Op::Affine { x: self.id, scale })
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        self.affine(s, 0.0)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = self.other(other)?;
        match (a.dims2(), b.dims2()) {
            (Some((m, k)), Some((k2, n))) if k == k2 => {
                let data = matmul_raw(a.data(), b.data(), m, k, n);
                self.tape.push(
                    Tensor::from_parts(vec![m, n], data),
                    Op::MatMul(self.id, other.id),
                )
            }
            _ => Err(mismatch("matmul", &a, &b)),
        }
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.value();
        let (m, n) = a.dims2().ok_or_else(|| mismatch("transpose", &a, &a))?;
        let data = transpose_raw(a.data(), m, n);
        self.tape
            .push(Tensor::from_parts(vec![n, m], data), Op::Transpose(self.id))
    }

    /// `[n,k] + [k]`, the row broadcast over the leading dimension.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let r = self.other(row)?;
        match (a.dims2(), r.shape()) {
            (Some((n, k)), [k2]) if k == *k2 => {
                let mut data = a.data().to_vec();
                for i in 0..n {
                    for (d, &rv) in data[i * k..(i + 1) * k].iter_mut().zip(r.data()) {
                        *d += rv;
                    }
                }
                self.tape.push(
                    Tensor::from_parts(vec![n, k], data),
                    Op::AddRow(self.id, row.id),
                )
            }
            _ => Err(mismatch("add_row", &a, &r)),
        }
    }

    /// `[n,k] -> [k]`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let a = self.value();
        let (n, k) = a.dims2().ok_or_else(|| mismatch("sum_rows", &a, &a))?;
        let mut data = vec![0.0; k];
        for i in 0..n {
            for (d, &x) in data.iter_mut().zip(&a.data()[i * k..(i + 1) * k]) {
                *d += x;
            }
        }
        self.tape
            .push(Tensor::from_parts(vec![k], data), Op::SumRows(self.id))
    }

    /// `[k] -> [n,k]`.
    pub fn broadcast_rows(self, n: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.rank() != 1 {
            return Err(mismatch("broadcast_rows", &a, &a));
        }
        let k = a.len();
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            data.extend_from_slice(a.data());
        }
        self.tape.push(
            Tensor::from_parts(vec![n, k], data),
            Op::BroadcastRows(self.id),
        )
    }

    /// `[n,k] * [n,1]`, one scalar per row.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let c = self.other(col)?;
        match (a.dims2(), c.dims2()) {
            (Some((n, k)), Some((n2, 1))) if n == n2 => {
                let mut data = a.data().to_vec();
                for i in 0..n {
                    let s = c.data()[i];
                    for d in &mut data[i * k..(i + 1) * k] {
                        *d *= s;
                    }
                }
                self.tape.push(
                    Tensor::from_parts(vec![n, k], data),
                    Op::MulCol(self.id, col.id),
                )
            }
            _ => Err(mismatch("mul_col", &a, &c)),
        }
    }

    /// `[n,k] -> [n,1]`.
    pub fn sum_cols(self) -> Result<Var<'t>> {
        let a = self.value();
        let (n, k) = a.dims2().ok_or_else(|| mismatch("sum_cols", &a, &a))?;
        let data = (0..n)
            .map(|i| a.data()[i * k..(i + 1) * k].iter().sum())
            .collect();
        self.tape
            .push(Tensor::from_parts(vec![n, 1], data), Op::SumCols(self.id))
    }

    /// `[n,1] -> [n,k]`.
    pub fn broadcast_cols(self, k: usize) -> Result<Var<'t>> {
        let a = self.value();
        match a.dims2() {
            Some((n, 1)) => {
                let mut data = Vec::with_capacity(n * k);
                for &x in a.data() {
                    data.extend(std::iter::repeat(x).take(k));
                }
                self.tape.push(
                    Tensor::from_parts(vec![n, k], data),
                    Op::BroadcastCols(self.id),
                )
            }
            _ => Err(mismatch("broadcast_cols", &a, &a)),
        }
    }

    /// Sum of all elements, shape `[]`.
    pub fn sum(self) -> Result<Var<'t>> {
        let a = self.value();
        self.tape.push(Tensor::scalar(a.sum()), Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().len().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// One-element tensor broadcast to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let x = a.item()?;
        self.tape.push(Tensor::full(shape, x), Op::Expand(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let r = a.reshape(shape)?;
        self.tape.push(r, Op::Reshape(self.id))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn sin(self) -> Result<Var<'t>> {
        self.unary(f64::sin, Op::Sin(self.id))
    }

    pub fn cos(self) -> Result<Var<'t>> {
        self.unary(f64::cos, Op::Cos(self.id))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary(f64::ln, Op::Log(self.id))
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.unary(f64::abs, Op::Abs(self.id))
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(f64::sqrt, Op::Sqrt(self.id))
    }

    /// Columns `start..end` of a `[n,k]` tensor.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (n, k) = a.dims2().ok_or_else(|| mismatch("slice", &a, &a))?;
        if start > end || end > k {
            return Err(AutodiffError::InvalidArgument(format!(
                "slice {start}..{end} of {k} columns"
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * k + start..i * k + end]);
        }
        self.tape.push(
            Tensor::from_parts(vec![n, w], data),
            Op::SliceCols { x: self.id, start },
        )
    }

    /// Zero-pads a `[n,w]` tensor to `[n,total]` with the input at `start`.
    pub fn pad_cols(self, start: usize, total: usize) -> Result<Var<'t>> {
        let a = self.value();
        let (n, w) = a.dims2().ok_or_else(|| mismatch("pad", &a, &a))?;
        if start + w > total {
            return Err(AutodiffError::InvalidArgument(format!(
                "pad {w} columns at {start} into {total}"
            )));
        }
        let mut data = vec![0.0; n * total];
        for i in 0..n {
            data[i * total + start..i * total + start + w]
                .copy_from_slice(&a.data()[i * w..(i + 1) * w]);
        }
        self.tape.push(
            Tensor::from_parts(vec![n, total], data),
            Op::PadCols { x: self.id, start },
        )
    }

    /// Row-wise norm `[n,k] -> [n,1]`; the subgradient at zero is zero.
    pub fn row_norm(self) -> Result<Var<'t>> {
        let a = self.value();
        let (n, k) = a.dims2().ok_or_else(|| mismatch("row_norm", &a, &a))?;
        let data = (0..n)
            .map(|i| {
                a.data()[i * k..(i + 1) * k]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        self.tape
            .push(Tensor::from_parts(vec![n, 1], data), Op::RowNorm(self.id))
    }

    /// `1/x`, with `0` where `x == 0`.
    pub fn safe_recip(self) -> Result<Var<'t>> {
        self.unary(
            |x| if x == 0.0 { 0.0 } else { 1.0 / x },
            Op::SafeRecip(self.id),
        )
    }
}

/// Concatenates `[n,k_i]` tensors along columns.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| AutodiffError::InvalidArgument("concat of zero tensors".into()))?;
    let tape = first.tape;
    let vals: Vec<Tensor> = parts
        .iter()
        .map(|p| {
            tape.check_owner(p)?;
            Ok(p.value())
        })
        .collect::<Result<_>>()?;
    let n = vals[0].dims2().map(|d| d.0);
    let mut widths = Vec::with_capacity(vals.len());
    for v in &vals {
        match (v.dims2(), n) {
            (Some((r, w)), Some(n)) if r == n => widths.push(w),
            _ => return Err(mismatch("concat", &vals[0], v)),
        }
    }
    let n = n.unwrap_or(0);
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * total);
    for i in 0..n {
        for (v, &w) in vals.iter().zip(&widths) {
            data.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
        }
    }
    tape.push(
        Tensor::from_parts(vec![n, total], data),
        Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
    )
}
