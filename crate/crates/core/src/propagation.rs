//! Graph-optimized feature aggregation.
//!
//! The single-graph operator alternates two exact block updates of
//!
//! ```text
//! U(S, Z) = ‖Â − S‖²_F + γ (Tr(Zᵀ(I − S)Z) + μ‖Z − H‖²_F),   S = Sᵀ ≥ 0
//! ```
//!
//! `S ← relu(Â + (γ/2) Z Zᵀ)` and a `T`-step power iteration
//! `Z ← αSZ + (1 − α)H` standing in for `Z = (1 − α)(I − αS)⁻¹H`, with
//! `μ = 1/α − 1`. The multi-graph operator replaces `‖Â − S‖²` by
//! `Σ_v w_v^r ‖Â_v − S‖²` and also updates the simplex weights `w`.
//!
//! The operators are written once against [`Backend`], which is implemented
//! both for eager [`Matrix`] values ([`Eager`]) and for a recording
//! [`Tape`], so the same code runs in exact-value tests and in training.

use std::borrow::Cow;
use std::rc::Rc;

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{spectral_radius_estimate, NormalizedGraph};
use crate::tape::{Tape, Var};
use crate::tensor::{Matrix, TensorError};

/// Floor applied to `‖Â_v − S‖²_F` before inversion in the weight update.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// Largest 1-norm condition number accepted by [`z_closed_form`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid propagation config: {0}")]
    Config(String),
    #[error("graph weights must be non-negative and sum to 1: {0:?}")]
    Weights(Vec<f64>),
    #[error("expected {expected} graph weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("at least one graph is required")]
    NoGraphs,
    #[error("graph has {graph} nodes but features have {features} rows")]
    NodeMismatch { graph: usize, features: usize },
    #[error("I − αS is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("linear solve residual {residual:e} exceeds {bound:e}")]
    Residual { residual: f64, bound: f64 },
}

pub type Result<T> = std::result::Result<T, PropagationError>;

/// Hyperparameters of the alternating optimization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GocConfig {
    /// Fraction of each aggregation step taken from neighbours.
    pub alpha: f64,
    /// Fidelity weight, tied to `alpha` by `mu = 1/alpha − 1`.
    pub mu: f64,
    /// Weight of the aggregation term against graph fidelity.
    pub gamma: f64,
    /// Exponent on the per-graph weights (multi-graph only).
    pub r: f64,
    /// Power-iteration steps per Z update (`T`).
    pub power_steps: usize,
    /// Alternating S/Z(/w) sweeps (`M`).
    pub sweeps: usize,
    /// Divide the multi-graph S update by `Σ_v w_v^r`.
    pub normalized_multi_s: bool,
}

impl Default for GocConfig {
    fn default() -> Self {
        Self::with_alpha(0.9)
    }
}

impl GocConfig {
    /// Defaults (`γ = 20`, `T = 2`, `M = 3`, `r = 2`) at the given `alpha`.
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            mu: 1.0 / alpha - 1.0,
            gamma: 20.0,
            r: 2.0,
            power_steps: 2,
            sweeps: 3,
            normalized_multi_s: false,
        }
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
        self.mu = 1.0 / alpha - 1.0;
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(PropagationError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if (self.mu - (1.0 / self.alpha - 1.0)).abs() > 1e-12 {
            return Err(PropagationError::Config(format!(
                "mu = {} does not match 1/alpha - 1 = {}",
                self.mu,
                1.0 / self.alpha - 1.0
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(PropagationError::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if self.power_steps == 0 || self.sweeps == 0 {
            return Err(PropagationError::Config("T and M must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validate_multi(&self) -> Result<()> {
        self.validate()?;
        if !(self.r > 1.0 && self.r.is_finite()) {
            return Err(PropagationError::Config(format!("r must exceed 1, got {}", self.r)));
        }
        Ok(())
    }
}

/// Simplex weights over input graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphWeights(Vec<f64>);

impl GraphWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if w.is_empty() || w.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-10 {
            return Err(PropagationError::Weights(w));
        }
        Ok(Self(w))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest weight (lowest index on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Primitive set the propagation operators are written against.
pub trait Backend {
    type Value: Clone;

    fn constant(&self, m: Matrix) -> std::result::Result<Self::Value, TensorError>;
    fn value<'a>(&self, v: &'a Self::Value) -> Cow<'a, Matrix>;
    fn shape(&self, v: &Self::Value) -> (usize, usize);
    fn matmul(&self, a: &Self::Value, b: &Self::Value) -> std::result::Result<Self::Value, TensorError>;
    fn add(&self, a: &Self::Value, b: &Self::Value) -> std::result::Result<Self::Value, TensorError>;
    fn sub(&self, a: &Self::Value, b: &Self::Value) -> std::result::Result<Self::Value, TensorError>;
    fn scale(&self, a: &Self::Value, s: f64) -> std::result::Result<Self::Value, TensorError>;
    /// `relu(base + coeff · z zᵀ)`.
    fn gram_relu(&self, base: &Self::Value, z: &Self::Value, coeff: f64) -> std::result::Result<Self::Value, TensorError>;
    /// 1x1 result.
    fn frobenius_norm_sq(&self, a: &Self::Value) -> std::result::Result<Self::Value, TensorError>;
    fn powf(&self, a: &Self::Value, p: f64) -> std::result::Result<Self::Value, TensorError>;
    fn clamp_min(&self, a: &Self::Value, floor: f64) -> std::result::Result<Self::Value, TensorError>;
    /// `m` scaled by the 1x1 value `s`.
    fn mul_scalar(&self, m: &Self::Value, s: &Self::Value) -> std::result::Result<Self::Value, TensorError>;
    fn relu(&self, a: &Self::Value) -> std::result::Result<Self::Value, TensorError>;
    fn row_softmax(&self, a: &Self::Value) -> std::result::Result<Self::Value, TensorError>;
    /// Elementwise product with a constant.
    fn mask(&self, a: &Self::Value, mask: &Matrix) -> std::result::Result<Self::Value, TensorError>;
    /// Product of a shared constant with a value.
    fn matmul_const(&self, a: &Rc<Matrix>, b: &Self::Value) -> std::result::Result<Self::Value, TensorError>;
}

/// Plain evaluation on owned matrices.
#[derive(Debug, Clone, Copy, Default)]
pub struct Eager;

impl Backend for Eager {
    type Value = Matrix;

    fn constant(&self, m: Matrix) -> std::result::Result<Matrix, TensorError> {
        Ok(m)
    }
    fn value<'a>(&self, v: &'a Matrix) -> Cow<'a, Matrix> {
        Cow::Borrowed(v)
    }
    fn shape(&self, v: &Matrix) -> (usize, usize) {
        v.shape()
    }
    fn matmul(&self, a: &Matrix, b: &Matrix) -> std::result::Result<Matrix, TensorError> {
        a.matmul(b)
    }
    fn add(&self, a: &Matrix, b: &Matrix) -> std::result::Result<Matrix, TensorError> {
        a.add(b)
    }
    fn sub(&self, a: &Matrix, b: &Matrix) -> std::result::Result<Matrix, TensorError> {
        a.sub(b)
    }
    fn scale(&self, a: &Matrix, s: f64) -> std::result::Result<Matrix, TensorError> {
        Ok(a.scale(s))
    }
    fn gram_relu(&self, base: &Matrix, z: &Matrix, coeff: f64) -> std::result::Result<Matrix, TensorError> {
        if !base.is_square() || base.rows() != z.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "gram_relu",
                left: base.shape(),
                right: z.shape(),
            });
        }
        let mut out = z.matmul_nt(z)?;
        for (o, b) in out.as_mut_slice().iter_mut().zip(base.as_slice()) {
            let pre = b + coeff * *o;
            *o = if pre > 0.0 { pre } else { 0.0 };
        }
        Ok(out)
    }
    fn frobenius_norm_sq(&self, a: &Matrix) -> std::result::Result<Matrix, TensorError> {
        Ok(Matrix::scalar(a.frobenius_norm_sq()))
    }
    fn powf(&self, a: &Matrix, p: f64) -> std::result::Result<Matrix, TensorError> {
        Ok(a.map(|x| x.powf(p)))
    }
    fn clamp_min(&self, a: &Matrix, floor: f64) -> std::result::Result<Matrix, TensorError> {
        Ok(a.map(|x| x.max(floor)))
    }
    fn mul_scalar(&self, m: &Matrix, s: &Matrix) -> std::result::Result<Matrix, TensorError> {
        Ok(m.scale(s.to_scalar()?))
    }
    fn relu(&self, a: &Matrix) -> std::result::Result<Matrix, TensorError> {
        Ok(a.relu())
    }
    fn row_softmax(&self, a: &Matrix) -> std::result::Result<Matrix, TensorError> {
        a.row_softmax()
    }
    fn mask(&self, a: &Matrix, mask: &Matrix) -> std::result::Result<Matrix, TensorError> {
        a.hadamard(mask)
    }
    fn matmul_const(&self, a: &Rc<Matrix>, b: &Matrix) -> std::result::Result<Matrix, TensorError> {
        a.matmul(b)
    }
}

impl<'t> Backend for &'t Tape {
    type Value = Var<'t>;

    fn constant(&self, m: Matrix) -> std::result::Result<Var<'t>, TensorError> {
        Tape::constant(self, m)
    }
    fn value<'a>(&self, v: &'a Var<'t>) -> Cow<'a, Matrix> {
        Cow::Owned((*v.value()).clone())
    }
    fn shape(&self, v: &Var<'t>) -> (usize, usize) {
        v.shape()
    }
    fn matmul(&self, a: &Var<'t>, b: &Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
        a.matmul(*b)
    }
    fn add(&self, a: &Var<'t>, b: &Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
        a.add(*b)
    }
    fn sub(&self, a: &Var<'t>, b: &Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
        a.sub(*b)
    }
    fn scale(&self, a: &Var<'t>, s: f64) -> std::result::Result<Var<'t>, TensorError> {
        a.scale(s)
    }
    fn gram_relu(&self, base: &Var<'t>, z: &Var<'t>, coeff: f64) -> std::result::Result<Var<'t>, TensorError> {
        base.gram_relu(*z, coeff)
    }
    fn frobenius_norm_sq(&self, a: &Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
        a.frobenius_norm_sq()
    }
    fn powf(&self, a: &Var<'t>, p: f64) -> std::result::Result<Var<'t>, TensorError> {
        a.powf(p)
    }
    fn clamp_min(&self, a: &Var<'t>, floor: f64) -> std::result::Result<Var<'t>, TensorError> {
        a.clamp_min(floor)
    }
    fn mul_scalar(&self, m: &Var<'t>, s: &Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
        m.mul_scalar(*s)
    }
    fn relu(&self, a: &Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
        a.relu()
    }
    fn row_softmax(&self, a: &Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
        a.row_softmax()
    }
    fn mask(&self, a: &Var<'t>, mask: &Matrix) -> std::result::Result<Var<'t>, TensorError> {
        a.mask(mask.clone())
    }
    fn matmul_const(&self, a: &Rc<Matrix>, b: &Var<'t>) -> std::result::Result<Var<'t>, TensorError> {
        self.constant_shared(Rc::clone(a))?.matmul(*b)
    }
}

fn check_rows(graph: usize, features: usize) -> Result<()> {
    if graph != features {
        return Err(PropagationError::NodeMismatch { graph, features });
    }
    Ok(())
}

/// `T` steps of `Z ← α S Z + (1 − α) H` from `Z = H`.
pub fn z_power_in<B: Backend>(b: &B, s: &B::Value, h: &B::Value, alpha: f64, steps: usize) -> Result<B::Value> {
    let restart = b.scale(h, 1.0 - alpha)?;
    let mut z = h.clone();
    for _ in 0..steps {
        let spread = b.scale(&b.matmul(s, &z)?, alpha)?;
        z = b.add(&spread, &restart)?;
    }
    Ok(z)
}

/// `relu(Â + (γ/2) Z Zᵀ)`.
pub fn s_update_in<B: Backend>(b: &B, a_hat: &B::Value, z: &B::Value, gamma: f64) -> Result<B::Value> {
    Ok(b.gram_relu(a_hat, z, gamma / 2.0)?)
}

/// `relu(Σ_v w_v^r Â_v + (γ/2) Z Zᵀ)`, divided by `Σ_v w_v^r` when
/// `normalized`. Each weight is a 1x1 value.
pub fn s_update_multi_in<B: Backend>(
    b: &B,
    a_hats: &[B::Value],
    w: &[B::Value],
    z: &B::Value,
    gamma: f64,
    r: f64,
    normalized: bool,
) -> Result<B::Value> {
    if a_hats.is_empty() {
        return Err(PropagationError::NoGraphs);
    }
    if w.len() != a_hats.len() {
        return Err(PropagationError::WeightCount {
            expected: a_hats.len(),
            got: w.len(),
        });
    }
    let mut base: Option<B::Value> = None;
    let mut total: Option<B::Value> = None;
    for (a, wv) in a_hats.iter().zip(w) {
        let wr = b.powf(wv, r)?;
        let term = b.mul_scalar(a, &wr)?;
        base = Some(match base {
            None => term,
            Some(acc) => b.add(&acc, &term)?,
        });
        total = Some(match total {
            None => wr,
            Some(acc) => b.add(&acc, &wr)?,
        });
    }
    let s = b.gram_relu(&base.expect("non-empty"), z, gamma / 2.0)?;
    if normalized {
        // relu commutes with the positive rescaling.
        let inv = b.powf(&total.expect("non-empty"), -1.0)?;
        Ok(b.mul_scalar(&s, &inv)?)
    } else {
        Ok(s)
    }
}

/// Closed-form simplex weights `w_v ∝ (1 / ‖Â_v − S‖²_F)^{1/(r−1)}`.
///
/// Residuals are floored at [`RESIDUAL_FLOOR`] and divided by their minimum
/// before exponentiation; the weights are invariant to that common factor,
/// and it keeps the largest term at exactly 1 so nothing overflows.
pub fn w_update_in<B: Backend>(b: &B, a_hats: &[B::Value], s: &B::Value, r: f64) -> Result<Vec<B::Value>> {
    if a_hats.is_empty() {
        return Err(PropagationError::NoGraphs);
    }
    if !(r > 1.0) {
        return Err(PropagationError::Config(format!("r must exceed 1, got {r}")));
    }
    let mut residuals = Vec::with_capacity(a_hats.len());
    for a in a_hats {
        let e = b.frobenius_norm_sq(&b.sub(a, s)?)?;
        residuals.push(b.clamp_min(&e, RESIDUAL_FLOOR)?);
    }
    let smallest = residuals
        .iter()
        .map(|e| b.value(e).as_slice()[0])
        .fold(f64::INFINITY, f64::min);
    let exponent = -1.0 / (r - 1.0);
    let mut q = Vec::with_capacity(residuals.len());
    for e in &residuals {
        q.push(b.powf(&b.scale(e, 1.0 / smallest)?, exponent)?);
    }
    let mut total = q[0].clone();
    for qv in &q[1..] {
        total = b.add(&total, qv)?;
    }
    let inv = b.powf(&total, -1.0)?;
    q.iter().map(|qv| Ok(b.mul_scalar(qv, &inv)?)).collect()
}

fn log_radius<B: Backend>(b: &B, s: &B::Value, alpha: f64) {
    if log::log_enabled!(log::Level::Debug) {
        if let Ok(est) = spectral_radius_estimate(&b.value(s), 200) {
            if alpha * est.value >= 1.0 {
                debug!(
                    "spectral radius of alpha*S is {:.4e} >= 1; power iteration is not a contraction",
                    alpha * est.value
                );
            }
        }
    }
}

/// `M` alternations of the S and Z updates starting from `Z = H`. The Z
/// update always restarts from the layer input `H`.
pub fn phi_goc_in<B: Backend>(b: &B, a_hat: &B::Value, h: &B::Value, cfg: &GocConfig) -> Result<B::Value> {
    cfg.validate()?;
    check_rows(b.shape(a_hat).0, b.shape(h).0)?;
    let mut z = h.clone();
    for _ in 0..cfg.sweeps {
        let s = s_update_in(b, a_hat, &z, cfg.gamma)?;
        log_radius(b, &s, cfg.alpha);
        z = z_power_in(b, &s, h, cfg.alpha, cfg.power_steps)?;
    }
    Ok(z)
}

/// Multi-graph operator: uniform initial weights, then `M` sweeps of the
/// S, Z and w updates. Returns the final `Z` and weights.
pub fn phi_mgoc_in<B: Backend>(
    b: &B,
    a_hats: &[B::Value],
    h: &B::Value,
    cfg: &GocConfig,
) -> Result<(B::Value, Vec<B::Value>)> {
    cfg.validate_multi()?;
    if a_hats.is_empty() {
        return Err(PropagationError::NoGraphs);
    }
    let rows = b.shape(h).0;
    for a in a_hats {
        check_rows(b.shape(a).0, rows)?;
    }
    let m = a_hats.len();
    let mut w: Vec<B::Value> = (0..m)
        .map(|_| b.constant(Matrix::scalar(1.0 / m as f64)))
        .collect::<std::result::Result<_, _>>()?;
    let mut z = h.clone();
    for _ in 0..cfg.sweeps {
        let s = s_update_multi_in(b, a_hats, &w, &z, cfg.gamma, cfg.r, cfg.normalized_multi_s)?;
        log_radius(b, &s, cfg.alpha);
        z = z_power_in(b, &s, h, cfg.alpha, cfg.power_steps)?;
        w = w_update_in(b, a_hats, &s, cfg.r)?;
    }
    Ok((z, w))
}

// ---------------------------------------------------------------------------
// Eager entry points.

/// One-step GCN aggregation `ÂH + H`.
pub fn aggregate_gcn(a_hat: &NormalizedGraph, h: &Matrix) -> Result<Matrix> {
    check_rows(a_hat.n(), h.rows())?;
    Ok(a_hat.a_hat().matmul(h)?.add(h)?)
}

/// `Tr(Zᵀ(I − S)Z) + μ‖Z − H‖²_F`.
pub fn regularizer_objective(s: &Matrix, h: &Matrix, z: &Matrix, mu: f64) -> Result<f64> {
    if h.shape() != z.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "regularizer_objective",
            left: h.shape(),
            right: z.shape(),
        }
        .into());
    }
    let smooth = z.frobenius_norm_sq() - Matrix::trace_quadratic(z, s)?;
    Ok(smooth + mu * z.sub(h)?.frobenius_norm_sq())
}

/// `‖Â − S‖²_F + γ · regularizer`.
pub fn goc_objective(a_hat: &Matrix, s: &Matrix, h: &Matrix, z: &Matrix, gamma: f64, mu: f64) -> Result<f64> {
    Ok(a_hat.sub(s)?.frobenius_norm_sq() + gamma * regularizer_objective(s, h, z, mu)?)
}

/// `Σ_v w_v^r ‖Â_v − S‖²_F + γ · regularizer`.
#[allow(clippy::too_many_arguments)]
pub fn mgoc_objective(
    a_hats: &[Matrix],
    w: &GraphWeights,
    s: &Matrix,
    h: &Matrix,
    z: &Matrix,
    gamma: f64,
    mu: f64,
    r: f64,
) -> Result<f64> {
    if a_hats.len() != w.len() {
        return Err(PropagationError::WeightCount {
            expected: a_hats.len(),
            got: w.len(),
        });
    }
    let mut fidelity = 0.0;
    for (a, wv) in a_hats.iter().zip(w.as_slice()) {
        fidelity += wv.powf(r) * a.sub(s)?.frobenius_norm_sq();
    }
    Ok(fidelity + gamma * regularizer_objective(s, h, z, mu)?)
}

/// Exact aggregation `(1 − α)(I − αS)⁻¹H` by LU with partial pivoting.
pub fn z_closed_form(s: &Matrix, h: &Matrix, alpha: f64) -> Result<Matrix> {
    if !s.is_square() || s.rows() != h.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "z_closed_form",
            left: s.shape(),
            right: h.shape(),
        }
        .into());
    }
    let n = s.rows();
    let system = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - alpha * s.get(i, j)
    });
    let rhs = DMatrix::from_fn(n, h.cols(), |i, j| (1.0 - alpha) * h.get(i, j));
    let lu = system.clone().lu();
    let inverse = lu.try_inverse().ok_or(PropagationError::Singular {
        condition: f64::INFINITY,
    })?;
    let condition = one_norm(&system) * one_norm(&inverse);
    if !(condition <= MAX_CONDITION) {
        return Err(PropagationError::Singular { condition });
    }
    let sol = system.clone().lu().solve(&rhs).ok_or(PropagationError::Singular { condition })?;
    let residual = (&system * &sol - &rhs).norm();
    let bound = 1e-8 * h.frobenius_norm();
    if residual > bound {
        return Err(PropagationError::Residual { residual, bound });
    }
    Ok(Matrix::from_fn(n, h.cols(), |i, j| sol[(i, j)]))
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn z_power(s: &Matrix, h: &Matrix, alpha: f64, steps: usize) -> Result<Matrix> {
    if !s.is_square() || s.rows() != h.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "z_power",
            left: s.shape(),
            right: h.shape(),
        }
        .into());
    }
    z_power_in(&Eager, s, h, alpha, steps)
}

pub fn s_update(a_hat: &Matrix, z: &Matrix, gamma: f64) -> Result<Matrix> {
    s_update_in(&Eager, a_hat, z, gamma)
}

pub fn s_update_multi(
    a_hats: &[Matrix],
    w: &GraphWeights,
    z: &Matrix,
    gamma: f64,
    r: f64,
    normalized: bool,
) -> Result<Matrix> {
    let w: Vec<Matrix> = w.as_slice().iter().map(|v| Matrix::scalar(*v)).collect();
    s_update_multi_in(&Eager, a_hats, &w, z, gamma, r, normalized)
}

pub fn w_update(a_hats: &[Matrix], s: &Matrix, r: f64) -> Result<GraphWeights> {
    let w = w_update_in(&Eager, a_hats, s, r)?;
    Ok(GraphWeights(w.iter().map(|m| m.as_slice()[0]).collect()))
}

/// Weights from precomputed residuals `‖Â_v − S‖²_F`.
pub fn weights_from_residuals(residuals: &[f64], r: f64) -> Result<GraphWeights> {
    let as_graphs: Vec<Matrix> = residuals.iter().map(|e| Matrix::scalar(e.max(0.0).sqrt())).collect();
    w_update(&as_graphs, &Matrix::scalar(0.0), r)
}

pub fn phi_goc(a_hat: &NormalizedGraph, h: &Matrix, cfg: &GocConfig) -> Result<Matrix> {
    phi_goc_in(&Eager, a_hat.a_hat(), h, cfg)
}

pub fn phi_mgoc(a_hats: &[NormalizedGraph], h: &Matrix, cfg: &GocConfig) -> Result<(Matrix, GraphWeights)> {
    let mats: Vec<Matrix> = a_hats.iter().map(|a| a.a_hat().clone()).collect();
    let (z, w) = phi_mgoc_in(&Eager, &mats, h, cfg)?;
    Ok((z, GraphWeights(w.iter().map(|m| m.as_slice()[0]).collect())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, Graph};
    use crate::rng::SeededRng;
    use crate::tape::{finite_diff_check, FiniteDiff};
    use crate::verify::oracles::*;
    use proptest::prelude::*;

    fn path3() -> NormalizedGraph {
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        normalize(&g)
    }

    fn random_graph(n: usize, rng: &mut SeededRng) -> NormalizedGraph {
        normalize(&Graph::new(random_adjacency(n, rng)).unwrap())
    }

    #[test]
    fn gcn_aggregation_examples() {
        let empty = normalize(&Graph::new(Matrix::zeros(3, 3)).unwrap());
        let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(aggregate_gcn(&empty, &h).unwrap(), h);

        let pair = normalize(&Graph::from_edges(2, &[(0, 1, 1.0)]).unwrap());
        let out = aggregate_gcn(&pair, &Matrix::identity(2)).unwrap();
        assert_eq!(out, Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn gcn_is_twice_half_step_power_iteration() {
        let mut rng = SeededRng::seed_from(3);
        for _ in 0..10 {
            let g = random_graph(6, &mut rng);
            let h = random_matrix(6, 3, &mut rng);
            let half = z_power(g.a_hat(), &h, 0.5, 1).unwrap();
            assert_eq!(half.scale(2.0), aggregate_gcn(&g, &h).unwrap());
        }
    }

    #[test]
    fn regularizer_examples() {
        let mut rng = SeededRng::seed_from(4);
        let h = random_matrix(4, 3, &mut rng);
        let v = regularizer_objective(&Matrix::identity(4), &h, &h, 0.7).unwrap();
        assert!(v.abs() < 1e-12);
        let v = regularizer_objective(&random_symmetric(4, &mut rng), &h, &Matrix::zeros(4, 3), 0.7).unwrap();
        assert!((v - 0.7 * h.frobenius_norm_sq()).abs() < 1e-12);
        assert!(regularizer_objective(&Matrix::identity(4), &h, &Matrix::zeros(3, 3), 0.7).is_err());
    }

    #[test]
    fn regularizer_gradient_matches_finite_differences() {
        let mut rng = SeededRng::seed_from(5);
        let s = random_symmetric(5, &mut rng);
        let h = random_matrix(5, 2, &mut rng);
        let z = random_matrix(5, 2, &mut rng);
        let mu = 1.0 / 0.9 - 1.0;
        let i_minus_s = Matrix::identity(5).sub(&s).unwrap();
        let analytic = i_minus_s
            .matmul(&z)
            .unwrap()
            .scale(2.0)
            .add(&z.sub(&h).unwrap().scale(2.0 * mu))
            .unwrap();
        let step = 1e-6;
        for i in 0..5 {
            for j in 0..2 {
                let mut plus = z.clone();
                plus.set(i, j, z.get(i, j) + step);
                let mut minus = z.clone();
                minus.set(i, j, z.get(i, j) - step);
                let num = (regularizer_objective(&s, &h, &plus, mu).unwrap()
                    - regularizer_objective(&s, &h, &minus, mu).unwrap())
                    / (2.0 * step);
                let a = analytic.get(i, j);
                assert!((a - num).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {num}");
            }
        }
    }

    #[test]
    fn closed_form_examples() {
        let mut rng = SeededRng::seed_from(6);
        let h = random_matrix(5, 3, &mut rng);
        let z = z_closed_form(&Matrix::zeros(5, 5), &h, 0.9).unwrap();
        assert!(max_abs_diff(&z, &h.scale(0.1)) < 1e-14);
        for alpha in [0.1, 0.5, 0.9] {
            let z = z_closed_form(&Matrix::identity(5), &h, alpha).unwrap();
            assert!(max_abs_diff(&z, &h) < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_neumann_series() {
        let mut rng = SeededRng::seed_from(7);
        for _ in 0..10 {
            let s = with_spectral_radius(&random_symmetric(6, &mut rng), 0.5);
            let h = random_matrix(6, 3, &mut rng);
            let z = z_closed_form(&s, &h, 0.9).unwrap();
            let oracle = neumann_series(&s, &h, 0.9, 200);
            assert!(max_abs_diff(&z, &oracle) < 1e-8);
            assert!(max_abs_diff(&z, &solve_equilibrium(&s, &h, 0.9)) < 1e-12);
        }
    }

    #[test]
    fn closed_form_rejects_singular_systems() {
        let h = Matrix::identity(3);
        let s = Matrix::identity(3).scale(1.0 / 0.5);
        assert!(matches!(
            z_closed_form(&s, &h, 0.5),
            Err(PropagationError::Singular { .. })
        ));
        // Condition number is scale invariant, so spread the spectrum.
        let nearly = Matrix::diag(&[0.0, 0.0, (1.0 - 1e-14) / 0.5]);
        assert!(matches!(
            z_closed_form(&nearly, &h, 0.5),
            Err(PropagationError::Singular { .. })
        ));
    }

    #[test]
    fn power_iteration_examples() {
        let g = path3();
        let h = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 1.0]]);
        let one = z_power(g.a_hat(), &h, 0.5, 1).unwrap();
        let expected = g.a_hat().matmul(&h).unwrap().scale(0.5).add(&h.scale(0.5)).unwrap();
        assert!(max_abs_diff(&one, &expected) < 1e-15);
        for t in 1..5 {
            let z = z_power(&Matrix::zeros(3, 3), &h, 0.9, t).unwrap();
            assert!(max_abs_diff(&z, &h.scale(1.0 - 0.9)) < 1e-15);
        }
        assert!(z_power(&Matrix::zeros(2, 2), &h, 0.9, 1).is_err());
    }

    #[test]
    fn power_iteration_matches_matrix_power_expansion() {
        let mut rng = SeededRng::seed_from(8);
        for t in [1, 2, 3, 7] {
            let s = random_symmetric(5, &mut rng);
            let h = random_matrix(5, 2, &mut rng);
            let z = z_power(&s, &h, 0.7, t).unwrap();
            let oracle = power_expansion(&s, &h, 0.7, t);
            assert!(relative_error(&z, &oracle) < 1e-12);
        }
    }

    #[test]
    fn power_iteration_converges_geometrically() {
        let mut rng = SeededRng::seed_from(9);
        for _ in 0..20 {
            let s = with_spectral_radius(&random_symmetric(6, &mut rng), 0.5 / 0.9);
            let h = random_matrix(6, 3, &mut rng);
            let exact = z_closed_form(&s, &h, 0.9).unwrap();
            let mut prev = f64::INFINITY;
            for t in [1, 2, 5, 10, 50] {
                let err = relative_error(&z_power(&s, &h, 0.9, t).unwrap(), &exact);
                assert!(err <= prev);
                prev = err;
            }
            assert!(prev <= 1e-9);
        }
    }

    #[test]
    fn s_update_examples() {
        let g = path3();
        let mut rng = SeededRng::seed_from(10);
        let z = random_matrix(3, 2, &mut rng);
        assert_eq!(s_update(g.a_hat(), &z, 0.0).unwrap(), *g.a_hat());
        assert_eq!(s_update(g.a_hat(), &Matrix::zeros(3, 2), 20.0).unwrap(), *g.a_hat());
        let s = s_update(&random_symmetric(3, &mut rng), &z, 3.0).unwrap();
        assert!(s.as_slice().iter().all(|v| *v >= 0.0));
        assert!(s.asymmetry() <= 1e-12);
    }

    #[test]
    fn s_update_beats_projected_gradient() {
        let mut rng = SeededRng::seed_from(11);
        for _ in 0..5 {
            let a = random_symmetric(5, &mut rng);
            let z = random_matrix(5, 2, &mut rng);
            let gamma = 1.5;
            let s = s_update(&a, &z, gamma).unwrap();
            let oracle = projected_gradient_s(std::slice::from_ref(&a), &[1.0], 2.0, &z, gamma, 10_000, 1e-3);
            let ours = s_subproblem_objective(&a, &z, gamma, &s);
            let theirs = s_subproblem_objective(&a, &z, gamma, &oracle);
            assert!(ours <= theirs + 1e-6, "{ours} vs {theirs}");
            assert!((ours - theirs).abs() <= 1e-6);
        }
    }

    #[test]
    fn s_update_multi_reductions() {
        let mut rng = SeededRng::seed_from(12);
        let a = random_adjacency(4, &mut rng);
        let z = random_matrix(4, 2, &mut rng);
        let single = s_update(&a, &z, 5.0).unwrap();
        let one = GraphWeights::new(vec![1.0]).unwrap();
        for normalized in [false, true] {
            let s = s_update_multi(std::slice::from_ref(&a), &one, &z, 5.0, 2.0, normalized).unwrap();
            assert_eq!(s, single);
        }
        let three = vec![a.clone(), a.clone(), a.clone()];
        let w = GraphWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let s = s_update_multi(&three, &w, &z, 5.0, 1.0, true).unwrap();
        assert!(max_abs_diff(&s, &single) < 1e-14);
        let s = s_update_multi(&three, &w, &z, 5.0, 1.0, false).unwrap();
        assert!(max_abs_diff(&s, &single) < 1e-14);
        assert!(matches!(
            s_update_multi(&[], &w, &z, 5.0, 2.0, false),
            Err(PropagationError::NoGraphs)
        ));
    }

    #[test]
    fn normalized_multi_s_beats_projected_gradient() {
        let mut rng = SeededRng::seed_from(13);
        for _ in 0..3 {
            let graphs = vec![random_adjacency(5, &mut rng), random_adjacency(5, &mut rng)];
            let z = random_matrix(5, 2, &mut rng);
            let w = GraphWeights::new(vec![0.3, 0.7]).unwrap();
            let s = s_update_multi(&graphs, &w, &z, 1.0, 2.0, true).unwrap();
            // Curvature is 2 Σ w^r = 1.16, so a larger step still contracts.
            let oracle = projected_gradient_s(&graphs, w.as_slice(), 2.0, &z, 1.0, 10_000, 1e-2);
            let ours = s_multi_subproblem_objective(&graphs, w.as_slice(), 2.0, &z, 1.0, &s);
            let theirs = s_multi_subproblem_objective(&graphs, w.as_slice(), 2.0, &z, 1.0, &oracle);
            assert!((ours - theirs).abs() <= 1e-6, "{ours} vs {theirs}");
        }
    }

    #[test]
    fn w_update_worked_case() {
        let w = weights_from_residuals(&[1.0, 4.0], 2.0).unwrap();
        assert_eq!(w.as_slice(), &[0.8, 0.2]);
        let (best, at) = grid_min_w(&[1.0, 4.0], 2.0, 10_000);
        assert!(w_objective(&[1.0, 4.0], w.as_slice(), 2.0) <= best + 1e-12);
        assert!((at[0] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn w_update_examples() {
        let w = weights_from_residuals(&[2.5, 2.5, 2.5], 2.0).unwrap();
        for v in w.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(weights_from_residuals(&[1.0, 2.0], 1.0).is_err());
        assert!(weights_from_residuals(&[1.0, 2.0], 0.5).is_err());
        // A graph equal to S takes essentially all the weight.
        let w = weights_from_residuals(&[0.0, 1.0], 2.0).unwrap();
        assert!(w.as_slice()[0] > 1.0 - 1e-11);
    }

    #[test]
    fn w_update_beats_grid() {
        let mut rng = SeededRng::seed_from(14);
        use rand::Rng as _;
        for _ in 0..10 {
            let e: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..5.0)).collect();
            let w = weights_from_residuals(&e, 2.0).unwrap();
            let (best, _) = grid_min_w(&e, 2.0, 100);
            assert!(w_objective(&e, w.as_slice(), 2.0) <= best + 1e-10);
        }
    }

    #[test]
    fn objective_examples() {
        let g = path3();
        let mut rng = SeededRng::seed_from(15);
        let h = random_matrix(3, 2, &mut rng);
        let a = g.a_hat();
        let mu = 1.0 / 0.9 - 1.0;
        let v = goc_objective(a, a, &h, &h, 20.0, mu).unwrap();
        let expected = h.frobenius_norm_sq() - Matrix::trace_quadratic(&h, a).unwrap();
        assert!((v - 20.0 * expected).abs() < 1e-10);
        let s = random_symmetric(3, &mut rng);
        let z = random_matrix(3, 2, &mut rng);
        let v = goc_objective(a, &s, &h, &z, 0.0, mu).unwrap();
        assert!((v - a.sub(&s).unwrap().frobenius_norm_sq()).abs() < 1e-12);

        let one = GraphWeights::new(vec![1.0]).unwrap();
        let m1 = mgoc_objective(std::slice::from_ref(a), &one, &s, &h, &z, 3.0, mu, 2.0).unwrap();
        assert!((m1 - goc_objective(a, &s, &h, &z, 3.0, mu).unwrap()).abs() < 1e-12);
        let same = vec![a.clone(), a.clone()];
        let w = GraphWeights::uniform(2);
        let only_r = mgoc_objective(&same, &w, a, &h, &z, 3.0, mu, 2.0).unwrap();
        assert!((only_r - 3.0 * regularizer_objective(a, &h, &z, mu).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn exact_alternation_is_monotone() {
        let mut rng = SeededRng::seed_from(16);
        let alpha = 0.7;
        let mu = 1.0 / alpha - 1.0;
        let gamma = 0.5;
        for _ in 0..5 {
            let g = random_graph(5, &mut rng);
            let h = random_matrix(5, 2, &mut rng).scale(0.1);
            let mut z = h.clone();
            let mut s = g.a_hat().clone();
            let mut prev = goc_objective(g.a_hat(), &s, &h, &z, gamma, mu).unwrap();
            for _ in 0..10 {
                s = s_update(g.a_hat(), &z, gamma).unwrap();
                let after_s = goc_objective(g.a_hat(), &s, &h, &z, gamma, mu).unwrap();
                assert!(after_s <= prev + 1e-10);
                assert!(symmetric_spectral_radius(&s) * alpha < 1.0);
                z = z_closed_form(&s, &h, alpha).unwrap();
                let after_z = goc_objective(g.a_hat(), &s, &h, &z, gamma, mu).unwrap();
                assert!(after_z <= after_s + 1e-10);
                prev = after_z;
            }
        }
    }

    #[test]
    fn phi_goc_reductions() {
        let g = path3();
        let mut rng = SeededRng::seed_from(17);
        let h = random_matrix(3, 2, &mut rng);
        let mut cfg = GocConfig {
            gamma: 0.0,
            ..GocConfig::default()
        };
        for m in 1..4 {
            cfg.sweeps = m;
            let z = phi_goc(&g, &h, &cfg).unwrap();
            assert_eq!(z, z_power(g.a_hat(), &h, cfg.alpha, cfg.power_steps).unwrap());
        }
        let cfg = GocConfig {
            sweeps: 1,
            ..GocConfig::default()
        };
        let z = phi_goc(&g, &h, &cfg).unwrap();
        let s = s_update(g.a_hat(), &h, cfg.gamma).unwrap();
        assert_eq!(z, z_power(&s, &h, cfg.alpha, cfg.power_steps).unwrap());
    }

    #[test]
    fn phi_goc_matches_transcription_on_path() {
        let g = path3();
        let h = Matrix::identity(3);
        let cfg = GocConfig::default();
        let z = phi_goc(&g, &h, &cfg).unwrap();
        let oracle = goc_transcription(g.a_hat(), &h, 0.9, 20.0, 2, 3);
        assert!(relative_error(&z, &oracle) < 1e-12);
    }

    #[test]
    fn phi_mgoc_single_graph_is_phi_goc() {
        let mut rng = SeededRng::seed_from(18);
        let g = random_graph(5, &mut rng);
        let h = random_matrix(5, 3, &mut rng).scale(0.2);
        for normalized in [false, true] {
            let cfg = GocConfig {
                normalized_multi_s: normalized,
                ..GocConfig::default()
            };
            let (z, w) = phi_mgoc(std::slice::from_ref(&g), &h, &cfg).unwrap();
            assert_eq!(z, phi_goc(&g, &h, &cfg).unwrap());
            assert_eq!(w.as_slice(), &[1.0]);
        }
    }

    #[test]
    fn phi_mgoc_identical_graphs() {
        // Identical graphs keep w uniform, but the fidelity weight Σ w^r = m^{1-r}
        // does not cancel: the literal update scales Â by it, the normalized
        // update scales γ by its inverse.
        let mut rng = SeededRng::seed_from(19);
        let g = random_graph(4, &mut rng);
        let h = random_matrix(4, 2, &mut rng).scale(0.2);
        let graphs = vec![g.clone(), g.clone(), g.clone()];
        let scale = 3f64.powf(1.0 - 2.0);

        let cfg = GocConfig::default();
        let (z, w) = phi_mgoc(&graphs, &h, &cfg).unwrap();
        for v in w.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let shrunk = g.a_hat().scale(scale);
        assert!(relative_error(&z, &phi_goc_in(&Eager, &shrunk, &h, &cfg).unwrap()) < 1e-12);

        let cfg = GocConfig {
            normalized_multi_s: true,
            ..GocConfig::default()
        };
        let (z, w) = phi_mgoc(&graphs, &h, &cfg).unwrap();
        assert_eq!(w, GraphWeights::uniform(3));
        let boosted = GocConfig {
            gamma: cfg.gamma / scale,
            ..cfg
        };
        assert!(relative_error(&z, &phi_goc(&g, &h, &boosted).unwrap()) < 1e-12);
    }

    #[test]
    fn phi_mgoc_matches_transcription() {
        let mut rng = SeededRng::seed_from(20);
        let graphs = vec![random_graph(3, &mut rng), random_graph(3, &mut rng)];
        let h = random_matrix(3, 2, &mut rng).scale(0.5);
        let mats: Vec<Matrix> = graphs.iter().map(|g| g.a_hat().clone()).collect();
        for normalized in [false, true] {
            let cfg = GocConfig {
                normalized_multi_s: normalized,
                ..GocConfig::default()
            };
            let (z, w) = phi_mgoc(&graphs, &h, &cfg).unwrap();
            let (oz, ow) = mgoc_transcription(&mats, &h, 0.9, 20.0, 2.0, 2, 3, normalized);
            assert!(relative_error(&z, &oz) < 1e-12);
            for (a, b) in w.as_slice().iter().zip(&ow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_multi_alternation_is_monotone() {
        let mut rng = SeededRng::seed_from(21);
        let alpha = 0.7;
        let mu = 1.0 / alpha - 1.0;
        let (gamma, r) = (0.5, 2.0);
        for _ in 0..5 {
            let graphs: Vec<Matrix> = (0..3).map(|_| random_graph(5, &mut rng).into_matrix()).collect();
            let h = random_matrix(5, 2, &mut rng).scale(0.1);
            let mut z = h.clone();
            let mut w = GraphWeights::uniform(3);
            let mut s = s_update_multi(&graphs, &w, &z, gamma, r, true).unwrap();
            let mut prev = mgoc_objective(&graphs, &w, &s, &h, &z, gamma, mu, r).unwrap();
            for _ in 0..10 {
                s = s_update_multi(&graphs, &w, &z, gamma, r, true).unwrap();
                let a = mgoc_objective(&graphs, &w, &s, &h, &z, gamma, mu, r).unwrap();
                z = z_closed_form(&s, &h, alpha).unwrap();
                let b = mgoc_objective(&graphs, &w, &s, &h, &z, gamma, mu, r).unwrap();
                w = w_update(&graphs, &s, r).unwrap();
                let c = mgoc_objective(&graphs, &w, &s, &h, &z, gamma, mu, r).unwrap();
                assert!(symmetric_spectral_radius(&s) * alpha < 1.0);
                assert!(a <= prev + 1e-10, "S step {prev} -> {a}");
                assert!(b <= a + 1e-10, "Z step {a} -> {b}");
                assert!(c <= b + 1e-10, "w step {b} -> {c}");
                prev = c;
            }
        }
    }

    #[test]
    fn tape_and_eager_agree() {
        let mut rng = SeededRng::seed_from(22);
        let graphs: Vec<Matrix> = (0..2).map(|_| random_graph(4, &mut rng).into_matrix()).collect();
        let h = random_matrix(4, 3, &mut rng).scale(0.3);
        let cfg = GocConfig::default();
        let tape = Tape::new();
        let a = tape.constant(graphs[0].clone()).unwrap();
        let hv = tape.var(h.clone()).unwrap();
        let z = phi_goc_in(&&tape, &a, &hv, &cfg).unwrap();
        let eager = phi_goc_in(&Eager, &graphs[0], &h, &cfg).unwrap();
        assert_eq!(*z.value(), eager);

        let tape = Tape::new();
        let avs: Vec<_> = graphs.iter().map(|g| tape.constant(g.clone()).unwrap()).collect();
        let hv = tape.var(h.clone()).unwrap();
        let (z, w) = phi_mgoc_in(&&tape, &avs, &hv, &cfg).unwrap();
        let (ez, ew) = phi_mgoc_in(&Eager, &graphs, &h, &cfg).unwrap();
        assert_eq!(*z.value(), ez);
        for (a, b) in w.iter().zip(&ew) {
            assert_eq!(*a.value(), *b);
        }
    }

    fn phi_sum_gradcheck(seed: u64, multi: bool) -> crate::tape::FiniteDiffReport {
        let mut rng = SeededRng::seed_from(seed);
        let graphs: Vec<Matrix> = (0..3).map(|_| random_graph(4, &mut rng).into_matrix()).collect();
        let h = random_matrix(4, 2, &mut rng).scale(0.1);
        let cfg = GocConfig::default();
        finite_diff_check(
            |t, x| {
                let z = if multi {
                    let avs: Vec<_> = graphs.iter().map(|g| t.constant(g.clone()).unwrap()).collect();
                    phi_mgoc_in(&t, &avs, &x, &cfg).unwrap().0
                } else {
                    let a = t.constant(graphs[0].clone())?;
                    phi_goc_in(&t, &a, &x, &cfg).unwrap()
                };
                z.sum()
            },
            &h,
            FiniteDiff::default(),
        )
        .unwrap()
    }

    #[test]
    fn phi_goc_gradient_in_h() {
        for seed in 0..5 {
            let report = phi_sum_gradcheck(100 + seed, false);
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn phi_mgoc_gradient_in_h() {
        for seed in 0..5 {
            let report = phi_sum_gradcheck(200 + seed, true);
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn config_validation() {
        let cfg = GocConfig::default();
        assert_eq!((cfg.alpha, cfg.gamma, cfg.power_steps, cfg.sweeps, cfg.r), (0.9, 20.0, 2, 3, 2.0));
        assert!((cfg.mu - 1.0 / 9.0).abs() < 1e-15);
        cfg.validate_multi().unwrap();
        let bad_mu = GocConfig { mu: 0.2, ..cfg };
        assert!(bad_mu.validate().is_err());
        let bad_alpha = GocConfig::with_alpha(1.0);
        assert!(bad_alpha.validate().is_err());
        let bad_r = GocConfig { r: 1.0, ..cfg };
        assert!(bad_r.validate().is_ok());
        assert!(bad_r.validate_multi().is_err());
        assert!(GocConfig { power_steps: 0, ..cfg }.validate().is_err());
        assert!(GraphWeights::new(vec![0.5, 0.6]).is_err());
        assert!(GraphWeights::new(vec![-0.1, 1.1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn s_update_is_symmetric_and_nonnegative(seed in any::<u64>(), gamma in 0.0..30.0f64) {
            let mut rng = SeededRng::seed_from(seed);
            let a = random_symmetric(5, &mut rng);
            let z = random_matrix(5, 3, &mut rng);
            let s = s_update(&a, &z, gamma).unwrap();
            prop_assert!(s.asymmetry() <= 1e-12);
            prop_assert!(s.as_slice().iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn power_error_is_monotone(seed in any::<u64>(), radius in 0.05..0.95f64) {
            let mut rng = SeededRng::seed_from(seed);
            let alpha = 0.9;
            let s = with_spectral_radius(&random_symmetric(5, &mut rng), radius / alpha);
            let h = random_matrix(5, 2, &mut rng);
            let exact = z_closed_form(&s, &h, alpha).unwrap();
            let mut prev = f64::INFINITY;
            for t in [1, 2, 5, 10, 50] {
                let err = relative_error(&z_power(&s, &h, alpha, t).unwrap(), &exact);
                prop_assert!(err <= prev * (1.0 + 1e-12));
                prev = err;
            }
        }

        #[test]
        fn w_update_is_scale_invariant(seed in any::<u64>(), c in 1e-6..1e6f64) {
            let mut rng = SeededRng::seed_from(seed);
            use rand::Rng as _;
            let e: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..10.0)).collect();
            let scaled: Vec<f64> = e.iter().map(|x| x * c).collect();
            let w1 = weights_from_residuals(&e, 2.0).unwrap();
            let w2 = weights_from_residuals(&scaled, 2.0).unwrap();
            for (a, b) in w1.as_slice().iter().zip(w2.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn w_update_stays_on_simplex(seed in any::<u64>(), r in 1.05..6.0f64) {
            let mut rng = SeededRng::seed_from(seed);
            let graphs: Vec<Matrix> = (0..3).map(|_| random_symmetric(4, &mut rng)).collect();
            let s = random_adjacency(4, &mut rng);
            let w = w_update(&graphs, &s, r).unwrap();
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            prop_assert!(w.as_slice().iter().all(|v| *v >= 0.0));
        }
    }
}
