//! Define-by-run reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. [`Tape::backward`] replays the adjoints in reverse recording
//! order. A tape serves exactly one forward/backward pass: once `backward`
//! has run, further recording or a second backward returns
//! [`TensorError::TapeConsumed`].

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::tensor::{Matrix, Result, TensorError};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Transpose(usize),
    Hadamard(usize, usize),
    /// Elementwise product with a constant mask (dropout).
    Mask(usize, Rc<Matrix>),
    Relu(usize),
    RowSoftmax(usize),
    FrobeniusSq(usize),
    Sum(usize),
    TraceQuadratic { z: usize, m: usize },
    /// Matrix times a 1x1 variable.
    MulScalar { m: usize, s: usize },
    Powf(usize, f64),
    ClampMin(usize, f64),
    /// `relu(base + coeff · z zᵀ)`.
    GramRelu { base: usize, z: usize, coeff: f64 },
    /// `−Σ ln max(p[i, y], floor)` over `(i, y)` targets.
    CrossEntropy {
        probs: usize,
        targets: Rc<[(usize, usize)]>,
        floor: f64,
    },
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Recording of one differentiable computation.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("consumed", &inner.consumed)
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.index, self.shape())
    }
}

/// Adjoints produced by [`Tape::backward`], indexed by variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the output does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when the output does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Matrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.index];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.borrow().consumed
    }

    /// Records a differentiable input.
    pub fn var(&self, value: Matrix) -> Result<Var<'_>> {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&self, value: Matrix) -> Result<Var<'_>> {
        self.push(value, Op::Leaf, false)
    }

    /// Like [`Tape::constant`] without copying a value shared across tapes.
    pub fn constant_shared(&self, value: Rc<Matrix>) -> Result<Var<'_>> {
        self.push_rc(value, Op::Leaf, false)
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Result<Var<'_>> {
        self.push_rc(Rc::new(value), op, requires_grad)
    }

    fn push_rc(&self, value: Rc<Matrix>, op: Op, requires_grad: bool) -> Result<Var<'_>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            index: inner.nodes.len() - 1,
        })
    }

    fn value_of(&self, index: usize) -> Rc<Matrix> {
        Rc::clone(&self.inner.borrow().nodes[index].value)
    }

    fn requires(&self, index: usize) -> bool {
        self.inner.borrow().nodes[index].requires_grad
    }

    fn check(&self, var: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, var.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignVariable)
        }
    }

    /// Reverse sweep from a scalar output. Consumes the tape.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        self.check(output)?;
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let out_shape = inner.nodes[output.index].value.shape();
        if out_shape != (1, 1) {
            return Err(TensorError::NotScalar(out_shape));
        }
        inner.consumed = true;
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.index] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.index).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut acc = |target: usize, delta: Matrix| -> Result<()> {
                if !nodes[target].requires_grad {
                    return Ok(());
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_scaled_assign(&delta, 1.0),
                    slot @ None => {
                        *slot = Some(delta);
                        Ok(())
                    }
                }
            };
            let val = |i: usize| -> &Matrix { &nodes[i].value };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        acc(*a, g.matmul_nt(val(*b))?)?;
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, val(*a).matmul_tn(&g)?)?;
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Op::Sub(a, b) => {
                    acc(*b, g.scale(-1.0))?;
                    acc(*a, g)?;
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s))?,
                Op::Transpose(a) => acc(*a, g.transpose())?,
                Op::Hadamard(a, b) => {
                    if nodes[*a].requires_grad {
                        acc(*a, g.hadamard(val(*b))?)?;
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, g.hadamard(val(*a))?)?;
                    }
                }
                Op::Mask(a, mask) => acc(*a, g.hadamard(mask)?)?,
                Op::Relu(a) => {
                    let input = val(*a);
                    let mut d = g;
                    for (dv, &x) in d.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        if x <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    acc(*a, d)?;
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let dot: f64 = d.row(i).iter().zip(yr).map(|(g, y)| g * y).sum();
                        for (dv, &yv) in d.row_mut(i).iter_mut().zip(yr) {
                            *dv = yv * (*dv - dot);
                        }
                    }
                    acc(*a, d)?;
                }
                Op::FrobeniusSq(a) => {
                    let s = g.as_slice()[0];
                    acc(*a, val(*a).scale(2.0 * s))?;
                }
                Op::Sum(a) => {
                    let s = g.as_slice()[0];
                    let (r, c) = val(*a).shape();
                    acc(*a, Matrix::filled(r, c, s))?;
                }
                Op::TraceQuadratic { z, m } => {
                    let s = g.as_slice()[0];
                    let zv = val(*z);
                    let mv = val(*m);
                    if nodes[*z].requires_grad {
                        let sym = mv.add(&mv.transpose())?;
                        acc(*z, sym.matmul(zv)?.scale(s))?;
                    }
                    if nodes[*m].requires_grad {
                        acc(*m, zv.matmul_nt(zv)?.scale(s))?;
                    }
                }
                Op::MulScalar { m, s } => {
                    let sv = val(*s).as_slice()[0];
                    if nodes[*s].requires_grad {
                        let dot: f64 = g
                            .as_slice()
                            .iter()
                            .zip(val(*m).as_slice())
                            .map(|(a, b)| a * b)
                            .sum();
                        acc(*s, Matrix::scalar(dot))?;
                    }
                    acc(*m, g.scale(sv))?;
                }
                Op::Powf(a, p) => {
                    let input = val(*a);
                    let mut d = g;
                    for (dv, &x) in d.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        *dv *= p * x.powf(p - 1.0);
                    }
                    acc(*a, d)?;
                }
                Op::ClampMin(a, floor) => {
                    let input = val(*a);
                    let mut d = g;
                    for (dv, &x) in d.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        if x <= *floor {
                            *dv = 0.0;
                        }
                    }
                    acc(*a, d)?;
                }
                Op::GramRelu { base, z, coeff } => {
                    let s = &node.value;
                    let mut gm = g;
                    for (dv, &sv) in gm.as_mut_slice().iter_mut().zip(s.as_slice()) {
                        if sv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    if nodes[*z].requires_grad {
                        let sym = gm.add(&gm.transpose())?;
                        acc(*z, sym.matmul(val(*z))?.scale(*coeff))?;
                    }
                    acc(*base, gm)?;
                }
                Op::CrossEntropy {
                    probs,
                    targets,
                    floor,
                } => {
                    let s = g.as_slice()[0];
                    let p = val(*probs);
                    let mut d = Matrix::zeros(p.rows(), p.cols());
                    for &(i, y) in targets.iter() {
                        let pv = p.get(i, y);
                        if pv > *floor {
                            d.set(i, y, d.get(i, y) - s / pv);
                        }
                    }
                    acc(*probs, d)?;
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// `∂output/∂input` for each of `inputs`.
    pub fn grad(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<Matrix>> {
        for v in inputs {
            self.check(*v)?;
        }
        let grads = self.backward(output)?;
        Ok(inputs.iter().map(|v| grads.wrt(*v)).collect())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value_of(self.index)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.inner.borrow().nodes[self.index].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.index)
    }

    fn unary(self, value: Matrix, op: Op) -> Result<Var<'t>> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Matrix, op: Op) -> Result<Var<'t>> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let v = self.value().matmul(&other.value())?;
        self.binary(other, v, Op::MatMul(self.index, other.index))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let v = self.value().add(&other.value())?;
        self.binary(other, v, Op::Add(self.index, other.index))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let v = self.value().sub(&other.value())?;
        self.binary(other, v, Op::Sub(self.index, other.index))
    }

    pub fn hadamard(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(other)?;
        let v = self.value().hadamard(&other.value())?;
        self.binary(other, v, Op::Hadamard(self.index, other.index))
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let v = self.value().scale(s);
        self.unary(v, Op::Scale(self.index, s))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.index))
    }

    /// Elementwise product with a fixed mask that receives no gradient.
    pub fn mask(self, mask: Matrix) -> Result<Var<'t>> {
        let v = self.value().hadamard(&mask)?;
        self.unary(v, Op::Mask(self.index, Rc::new(mask)))
    }

    /// `max(x, 0)`; the adjoint is blocked where the input is `<= 0`.
    pub fn relu(self) -> Result<Var<'t>> {
        let v = self.value().relu();
        self.unary(v, Op::Relu(self.index))
    }

    pub fn row_softmax(self) -> Result<Var<'t>> {
        let v = self.value().row_softmax()?;
        self.unary(v, Op::RowSoftmax(self.index))
    }

    pub fn frobenius_norm_sq(self) -> Result<Var<'t>> {
        let v = Matrix::scalar(self.value().frobenius_norm_sq());
        self.unary(v, Op::FrobeniusSq(self.index))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let v = Matrix::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.index))
    }

    /// `Tr(selfᵀ m self)` for square `m`.
    pub fn trace_quadratic(self, m: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(m)?;
        let v = Matrix::scalar(Matrix::trace_quadratic(&self.value(), &m.value())?);
        self.binary(
            m,
            v,
            Op::TraceQuadratic {
                z: self.index,
                m: m.index,
            },
        )
    }

    /// Scales every entry by the 1x1 variable `s`.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        self.tape.check(s)?;
        let sv = s.value().to_scalar()?;
        let v = self.value().scale(sv);
        self.binary(
            s,
            v,
            Op::MulScalar {
                m: self.index,
                s: s.index,
            },
        )
    }

    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x.powf(p));
        self.unary(v, Op::Powf(self.index, p))
    }

    /// `max(x, floor)`; the adjoint is blocked where the input is `<= floor`.
    pub fn clamp_min(self, floor: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x.max(floor));
        self.unary(v, Op::ClampMin(self.index, floor))
    }

    /// Fused `relu(self + coeff · z zᵀ)` for a square `self` with as many
    /// rows as `z`. Only the output is stored; its sign pattern doubles as
    /// the relu mask.
    pub fn gram_relu(self, z: Var<'t>, coeff: f64) -> Result<Var<'t>> {
        self.tape.check(z)?;
        let base = self.value();
        let zv = z.value();
        if !base.is_square() || base.rows() != zv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "gram_relu",
                left: base.shape(),
                right: zv.shape(),
            });
        }
        let mut out = zv.matmul_nt(&zv)?;
        for (o, b) in out.as_mut_slice().iter_mut().zip(base.as_slice()) {
            let pre = b + coeff * *o;
            *o = if pre > 0.0 { pre } else { 0.0 };
        }
        self.binary(
            z,
            out,
            Op::GramRelu {
                base: self.index,
                z: z.index,
                coeff,
            },
        )
    }

    /// Summed negative log-likelihood of `targets` (row, class) under the
    /// row-stochastic `self`, with probabilities clamped below at `floor`.
    pub fn cross_entropy(self, targets: &[(usize, usize)], floor: f64) -> Result<Var<'t>> {
        let p = self.value();
        let mut total = 0.0;
        for &(i, y) in targets {
            if i >= p.rows() || y >= p.cols() {
                return Err(TensorError::InvalidShape {
                    op: "cross_entropy",
                    shape: p.shape(),
                    reason: "target index out of range",
                });
            }
            // `clamp` keeps NaN, unlike `max`.
            total -= p.get(i, y).clamp(floor, f64::INFINITY).ln();
        }
        self.unary(
            Matrix::scalar(total),
            Op::CrossEntropy {
                probs: self.index,
                targets: targets.into(),
                floor,
            },
        )
    }
}

/// Settings for [`finite_diff_check`].
#[derive(Debug, Clone, Copy)]
pub struct FiniteDiff {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor: entries whose magnitudes are both below it are
    /// compared on absolute error scaled by `floor`.
    pub floor: f64,
}

impl Default for FiniteDiff {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub analytic: Matrix,
    pub numeric: Matrix,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Entry (row, col) with the largest relative error.
    pub worst: (usize, usize),
    pub passed: bool,
}

/// Compares the tape gradient of a scalar function against central
/// differences `(f(x+εeᵢ) − f(x−εeᵢ)) / 2ε`, entry by entry.
///
/// `f` is called on a fresh tape for every evaluation, with `input` recorded
/// as a variable.
pub fn finite_diff_check<F>(f: F, input: &Matrix, opts: FiniteDiff) -> Result<FiniteDiffReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let x = tape.var(input.clone())?;
        let y = f(&tape, x)?;
        tape.grad(y, &[x])?.remove(0)
    };
    let eval = |m: Matrix| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(m)?;
        f(&tape, x)?.value().to_scalar()
    };
    let mut numeric = Matrix::zeros(input.rows(), input.cols());
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut worst = (0, 0);
    for i in 0..input.rows() {
        for j in 0..input.cols() {
            let mut plus = input.clone();
            plus.set(i, j, input.get(i, j) + opts.step);
            let mut minus = input.clone();
            minus.set(i, j, input.get(i, j) - opts.step);
            let fd = (eval(plus)? - eval(minus)?) / (2.0 * opts.step);
            numeric.set(i, j, fd);
            let a = analytic.get(i, j);
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs()).max(opts.floor);
            max_abs = max_abs.max(abs);
            if rel > max_rel || !rel.is_finite() {
                max_rel = if rel.is_finite() { rel } else { f64::INFINITY };
                worst = (i, j);
            }
        }
    }
    Ok(FiniteDiffReport {
        analytic,
        numeric,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        worst,
        passed: max_rel <= opts.tolerance,
    })
}
