//! Eager reverse-mode tape. Every primitive computes its value when it is
//! recorded; [`Tape::backward`] walks the recorded sequence in reverse.

use super::param::{Gradients, ParamId, ParamStore};
use super::tensor::{
    axpy, log_softmax_row, matmul_acc, matmul_at_acc, matmul_bt_acc, sigmoid, Real, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<R> {
    Leaf,
    Affine { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, R),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    ConcatCols(Vec<usize>),
    SliceCols { a: usize, start: usize },
    GatherRows { a: usize, idx: Vec<usize> },
    StackRows(Vec<usize>),
    LogSoftmax(usize),
    Sum(usize),
    PickNll { a: usize, targets: Vec<usize> },
    /// Scalar function of `a` whose gradient was computed alongside its value.
    Scalar { a: usize, grad: Tensor<R> },
}

#[derive(Debug)]
struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Kinds accepted by [`Tape::primitive`]; the typed methods are the usual entry points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PrimitiveKind {
    Affine,
    Tanh,
    Sigmoid,
    Multiply,
    Concatenate,
    LogSoftmax,
    Sum,
    Scale(f64),
}

#[derive(Debug, Default)]
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> R {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape_of(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a parameter leaf. Frozen parameters do not propagate gradient.
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Dispatch by kind; used by generic harnesses.
    pub fn primitive(&mut self, kind: PrimitiveKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match kind {
            PrimitiveKind::Affine => {
                if inputs.len() == 2 {
                    self.affine(inputs[0], inputs[1], None)
                } else {
                    arity(3)?;
                    self.affine(inputs[0], inputs[1], Some(inputs[2]))
                }
            }
            PrimitiveKind::Tanh => arity(1).map(|_| self.tanh(inputs[0])),
            PrimitiveKind::Sigmoid => arity(1).map(|_| self.sigmoid(inputs[0])),
            PrimitiveKind::Multiply => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            PrimitiveKind::Concatenate => self.concat_cols(inputs),
            PrimitiveKind::LogSoftmax => arity(1).map(|_| self.log_softmax(inputs[0])),
            PrimitiveKind::Sum => arity(1).map(|_| self.sum(inputs[0])),
            PrimitiveKind::Scale(c) => arity(1).map(|_| self.scale(inputs[0], c)),
        }
    }

    /// `x[n×in] · w[in×out] + b[out]`
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, k) = self.shape_of(x);
        let (wk, m) = self.shape_of(w);
        if k != wk {
            return Err(Error::shape(
                "affine",
                format!(
                    "input {:?} vs weight {:?}",
                    self.value(x).shape(),
                    self.value(w).shape()
                ),
            ));
        }
        let mut out = Tensor::zeros(&[n, m]);
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.len() != m {
                return Err(Error::shape(
                    "affine",
                    format!("bias {:?} vs output width {m}", bt.shape()),
                ));
            }
            for i in 0..n {
                out.row_mut(i).copy_from_slice(bt.data());
            }
        }
        matmul_acc(
            self.value(x).data(),
            n,
            k,
            self.value(w).data(),
            m,
            out.data_mut(),
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            out,
            Op::Affine {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
            ng,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<R>, f: impl Fn(R, R) -> R) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(va.shape(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    fn map(&mut self, a: Var, op: Op<R>, f: impl Fn(R) -> R) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_vec(va.shape(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a.0, b.0), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a.0, b.0), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise-multiply", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a.0, b.0), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = R::lit(c);
        self.map(a, Op::Scale(a.0, c), |x| x * c)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a.0), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a.0), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a.0), |x| x.exp())
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concatenate", "no inputs"));
        };
        let n = self.shape_of(first).0;
        if let Some(bad) = parts.iter().find(|&&p| self.shape_of(p).0 != n) {
            return Err(Error::shape(
                "concatenate",
                format!(
                    "row count {:?} vs {:?}",
                    self.value(first).shape(),
                    self.value(*bad).shape()
                ),
            ));
        }
        let m: usize = parts.iter().map(|&p| self.shape_of(p).1).sum();
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..n {
            let mut off = 0;
            let row = out.row_mut(i);
            for &p in parts {
                let src = self.nodes[p.0].value.row(i);
                row[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.shape_of(a);
        if start + len > m {
            return Err(Error::shape(
                "slice",
                format!("columns {start}..{} of width {m}", start + len),
            ));
        }
        let mut out = Tensor::zeros(&[n, len]);
        for i in 0..n {
            out.row_mut(i)
                .copy_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols { a: a.0, start }, ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let (n, m) = self.shape_of(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather", format!("row {bad} of {n}")));
        }
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            data.extend_from_slice(self.value(a).row(i));
        }
        let out = Tensor::matrix(idx.len(), m, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::GatherRows { a: a.0, idx }, ng))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("stack", "no inputs"));
        };
        let m = self.shape_of(first).1;
        let mut data = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (pn, pm) = self.shape_of(p);
            if pm != m {
                return Err(Error::shape("stack", format!("width {pm} vs {m}")));
            }
            n += pn;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(n, m, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::StackRows(parts.iter().map(|p| p.0).collect()), ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Tensor::zeros(va.shape());
        for i in 0..va.rows() {
            log_softmax_row(va.row(i), out.row_mut(i));
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a.0), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a.0), ng)
    }

    /// `-Σ_i a[i, targets[i]]`
    pub fn pick_nll(&mut self, a: Var, targets: Vec<usize>) -> Result<Var> {
        let (n, m) = self.shape_of(a);
        if targets.len() != n || targets.iter().any(|&t| t >= m) {
            return Err(Error::shape(
                "pick-nll",
                format!("{} targets for a {n}×{m} input", targets.len()),
            ));
        }
        let va = self.value(a);
        let s = -targets
            .iter()
            .enumerate()
            .map(|(i, &t)| va.get(i, t))
            .sum::<R>();
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(s), Op::PickNll { a: a.0, targets }, ng))
    }

    /// Records a scalar whose gradient with respect to `a` is supplied by the caller.
    pub fn external_scalar(&mut self, a: Var, value: R, grad: Tensor<R>) -> Result<Var> {
        if grad.shape() != self.value(a).shape() {
            return Err(Error::shape(
                "external",
                format!("{:?} vs {:?}", grad.shape(), self.value(a).shape()),
            ));
        }
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(value), Op::Scalar { a: a.0, grad }, ng))
    }

    /// Accumulates d(loss)/d(param) for every trainable parameter leaf into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients<R>) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid(
                "backward called on a value that was never recorded",
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut g: Vec<Option<Tensor<R>>> = Vec::with_capacity(loss.0 + 1);
        g.resize_with(loss.0 + 1, || None);
        g[loss.0] = Some(Tensor::scalar(R::one()));

        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &gi, &mut g);
            if let Some(pid) = node.param {
                grads.add(pid, &gi);
            }
        }
        Ok(())
    }

    fn slot<'a>(&self, g: &'a mut [Option<Tensor<R>>], j: usize) -> Option<&'a mut Tensor<R>> {
        if !self.nodes[j].needs_grad {
            return None;
        }
        Some(g[j].get_or_insert_with(|| Tensor::zeros(self.nodes[j].value.shape())))
    }

    fn propagate(&self, op: &Op<R>, y: &Tensor<R>, gy: &Tensor<R>, g: &mut [Option<Tensor<R>>]) {
        let val = |j: usize| &self.nodes[j].value;
        match op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (n, k) = (val(*x).rows(), val(*x).cols());
                let m = val(*w).cols();
                if let Some(dx) = self.slot(g, *x) {
                    matmul_bt_acc(gy.data(), n, m, val(*w).data(), k, dx.data_mut());
                }
                if let Some(dw) = self.slot(g, *w) {
                    matmul_at_acc(val(*x).data(), n, k, gy.data(), m, dw.data_mut());
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(g, *b) {
                        for i in 0..n {
                            axpy(R::one(), gy.row(i), db.data_mut());
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for j in [*a, *b] {
                    if let Some(d) = self.slot(g, j) {
                        d.add_assign(gy);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(g, *a) {
                    d.add_assign(gy);
                }
                if let Some(d) = self.slot(g, *b) {
                    axpy(-R::one(), gy.data(), d.data_mut());
                }
            }
            Op::Mul(a, b) => {
                for (j, other) in [(*a, *b), (*b, *a)] {
                    if let Some(d) = self.slot(g, j) {
                        for ((d, &gv), &o) in d.data_mut().iter_mut().zip(gy.data()).zip(val(other).data()) {
                            *d += gv * o;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(d) = self.slot(g, *a) {
                    axpy(*c, gy.data(), d.data_mut());
                }
            }
            Op::Tanh(a) => self.unary_back(g, *a, y, gy, |y| R::one() - y * y),
            Op::Sigmoid(a) => self.unary_back(g, *a, y, gy, |y| y * (R::one() - y)),
            Op::Exp(a) => self.unary_back(g, *a, y, gy, |y| y),
            Op::ConcatCols(parts) => {
                let n = gy.rows();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if let Some(d) = self.slot(g, p) {
                        for i in 0..n {
                            axpy(R::one(), &gy.row(i)[off..off + w], d.row_mut(i));
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { a, start } => {
                if let Some(d) = self.slot(g, *a) {
                    let w = gy.cols();
                    for i in 0..gy.rows() {
                        axpy(R::one(), gy.row(i), &mut d.row_mut(i)[*start..*start + w]);
                    }
                }
            }
            Op::GatherRows { a, idx } => {
                if let Some(d) = self.slot(g, *a) {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(R::one(), gy.row(r), d.row_mut(i));
                    }
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    if let Some(d) = self.slot(g, p) {
                        axpy(R::one(), &gy.data()[off..off + len], d.data_mut());
                    }
                    off += len;
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(d) = self.slot(g, *a) {
                    for i in 0..gy.rows() {
                        let gr = gy.row(i);
                        let total: R = gr.iter().copied().sum();
                        for ((dv, &gv), &yv) in d.row_mut(i).iter_mut().zip(gr).zip(y.row(i)) {
                            *dv += gv - yv.exp() * total;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let s = gy.data()[0];
                if let Some(d) = self.slot(g, *a) {
                    d.data_mut().iter_mut().for_each(|v| *v += s);
                }
            }
            Op::PickNll { a, targets } => {
                let s = gy.data()[0];
                if let Some(d) = self.slot(g, *a) {
                    let m = d.cols();
                    for (i, &t) in targets.iter().enumerate() {
                        d.data_mut()[i * m + t] -= s;
                    }
                }
            }
            Op::Scalar { a, grad } => {
                let s = gy.data()[0];
                if let Some(d) = self.slot(g, *a) {
                    axpy(s, grad.data(), d.data_mut());
                }
            }
        }
    }

    fn unary_back(
        &self,
        g: &mut [Option<Tensor<R>>],
        a: usize,
        y: &Tensor<R>,
        gy: &Tensor<R>,
        dydx: impl Fn(R) -> R,
    ) {
        if let Some(d) = self.slot(g, a) {
            for ((dv, &gv), &yv) in d.data_mut().iter_mut().zip(gy.data()).zip(y.data()) {
                *dv += gv * dydx(yv);
            }
        }
    }
}
