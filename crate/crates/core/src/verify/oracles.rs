//! Reference implementations used to cross-check the propagation operators.
//!
//! Everything here is deliberately naive: nested loops over `Vec<Vec<f64>>`,
//! explicit matrix powers, iterative solvers and exhaustive grids. None of
//! it shares code with the production path beyond the [`Matrix`] container.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Matrix;

type Dense = Vec<Vec<f64>>;

fn dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn undense(d: &Dense) -> Matrix {
    Matrix::from_rows(d)
}

fn mul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let k = b.len();
    let p = if k == 0 { 0 } else { b[0].len() };
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i][l] * b[l][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn transpose(a: &Dense) -> Dense {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

fn lin(a: &Dense, ca: f64, b: &Dense, cb: f64) -> Dense {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| ca * x + cb * y).collect())
        .collect()
}

fn identity(n: usize) -> Dense {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn fro_sq(a: &Dense) -> f64 {
    a.iter().flatten().map(|x| x * x).sum()
}

/// Symmetric matrix with independent standard normal upper triangle.
pub fn random_symmetric<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = StandardNormal.sample(rng);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

/// Symmetric, non-negative, zero diagonal, entries uniform in [0, 1).
pub fn random_adjacency<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = rng.random();
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Exact spectral radius of a symmetric matrix via a dense eigensolver.
pub fn symmetric_spectral_radius(m: &Matrix) -> f64 {
    let n = m.rows();
    let d = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
    SymmetricEigen::new(d).eigenvalues.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Rescale a symmetric matrix to the given spectral radius.
pub fn with_spectral_radius(m: &Matrix, radius: f64) -> Matrix {
    let current = symmetric_spectral_radius(m);
    m.scale(radius / current)
}

/// `‖Â − S‖²_F + γ Tr(Zᵀ(I − S)Z)`, the S-subproblem objective.
pub fn s_subproblem_objective(a_hat: &Matrix, z: &Matrix, gamma: f64, s: &Matrix) -> f64 {
    let (a, z, s) = (dense(a_hat), dense(z), dense(s));
    let n = a.len();
    let i_minus_s = lin(&identity(n), 1.0, &s, -1.0);
    let quad = mul(&transpose(&z), &mul(&i_minus_s, &z));
    let trace: f64 = (0..quad.len()).map(|i| quad[i][i]).sum();
    fro_sq(&lin(&a, 1.0, &s, -1.0)) + gamma * trace
}

/// Multi-graph S-subproblem `Σ_v w_v^r ‖Â_v − S‖²_F + γ Tr(Zᵀ(I − S)Z)`.
pub fn s_multi_subproblem_objective(a_hats: &[Matrix], w: &[f64], r: f64, z: &Matrix, gamma: f64, s: &Matrix) -> f64 {
    let n = s.rows();
    let zero = Matrix::zeros(n, n);
    let mut total = s_subproblem_objective(&zero, z, gamma, s) - s.frobenius_norm_sq();
    for (a, wv) in a_hats.iter().zip(w) {
        total += wv.powf(r) * fro_sq(&lin(&dense(a), 1.0, &dense(s), -1.0));
    }
    total
}

/// Projected gradient descent on the (multi-graph) S-subproblem over the
/// cone of symmetric non-negative matrices, started at `S = 0`.
pub fn projected_gradient_s(
    a_hats: &[Matrix],
    w: &[f64],
    r: f64,
    z: &Matrix,
    gamma: f64,
    steps: usize,
    step: f64,
) -> Matrix {
    let n = z.rows();
    let zzt = mul(&dense(z), &transpose(&dense(z)));
    let graphs: Vec<Dense> = a_hats.iter().map(dense).collect();
    let coeffs: Vec<f64> = w.iter().map(|wv| wv.powf(r)).collect();
    let mut s = vec![vec![0.0; n]; n];
    for _ in 0..steps {
        let mut next = s.clone();
        for i in 0..n {
            for j in 0..n {
                let mut g = -gamma * zzt[i][j];
                for (a, c) in graphs.iter().zip(&coeffs) {
                    g += 2.0 * c * (s[i][j] - a[i][j]);
                }
                next[i][j] = s[i][j] - step * g;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let sym = 0.5 * (next[i][j] + next[j][i]);
                s[i][j] = sym.max(0.0);
            }
        }
    }
    undense(&s)
}

/// `Σ_v w_v^r e_v`, the weight subproblem objective.
pub fn w_objective(residuals: &[f64], w: &[f64], r: f64) -> f64 {
    residuals.iter().zip(w).map(|(e, wv)| wv.powf(r) * e).sum()
}

/// Every point of the simplex in `m` dimensions whose coordinates are
/// multiples of `1/divisions`.
pub fn simplex_grid(m: usize, divisions: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, left: usize, divisions: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() == m - 1 {
            prefix.push(left);
            out.push(prefix.iter().map(|k| *k as f64 / divisions as f64).collect());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(m, left - k, divisions, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(m, divisions, divisions, &mut Vec::new(), &mut out);
    }
    out
}

/// Minimum of [`w_objective`] over [`simplex_grid`] and its minimizer.
pub fn grid_min_w(residuals: &[f64], r: f64, divisions: usize) -> (f64, Vec<f64>) {
    let mut best = (f64::INFINITY, Vec::new());
    for w in simplex_grid(residuals.len(), divisions) {
        let v = w_objective(residuals, &w, r);
        if v < best.0 {
            best = (v, w);
        }
    }
    best
}

/// `Σ_{i=0}^{terms-1} (1 − α)(αS)^i H`.
pub fn neumann_series(s: &Matrix, h: &Matrix, alpha: f64, terms: usize) -> Matrix {
    let s_scaled = lin(&dense(s), alpha, &dense(s), 0.0);
    let mut term = lin(&dense(h), 1.0 - alpha, &dense(h), 0.0);
    let mut sum = term.clone();
    for _ in 1..terms {
        term = mul(&s_scaled, &term);
        sum = lin(&sum, 1.0, &term, 1.0);
    }
    undense(&sum)
}

/// `[(αS)^T + (1 − α) Σ_{i<T} (αS)^i] H` with explicit matrix powers.
pub fn power_expansion(s: &Matrix, h: &Matrix, alpha: f64, steps: usize) -> Matrix {
    let n = s.rows();
    let a = lin(&dense(s), alpha, &dense(s), 0.0);
    let mut power = identity(n);
    let mut operator = vec![vec![0.0; n]; n];
    for _ in 0..steps {
        operator = lin(&operator, 1.0, &power, 1.0 - alpha);
        power = mul(&power, &a);
    }
    operator = lin(&operator, 1.0, &power, 1.0);
    undense(&mul(&operator, &dense(h)))
}

/// `(1 − α)(I − αS)⁻¹H` by Gauss-Jordan elimination with partial pivoting.
pub fn solve_equilibrium(s: &Matrix, h: &Matrix, alpha: f64) -> Matrix {
    let n = s.rows();
    let d = h.cols();
    let mut a = lin(&identity(n), 1.0, &dense(s), -alpha);
    let mut b = lin(&dense(h), 1.0 - alpha, &dense(h), 0.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|x, y| a[*x][col].abs().total_cmp(&a[*y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in 0..n {
                    a[row][k] -= f * a[col][k];
                }
                for k in 0..d {
                    b[row][k] -= f * b[col][k];
                }
            }
        }
    }
    for row in 0..n {
        let p = a[row][row];
        for k in 0..d {
            b[row][k] /= p;
        }
    }
    undense(&b)
}

/// Single-graph alternating procedure written out entry by entry.
pub fn goc_transcription(a_hat: &Matrix, h: &Matrix, alpha: f64, gamma: f64, steps: usize, sweeps: usize) -> Matrix {
    let a = dense(a_hat);
    let h = dense(h);
    let n = a.len();
    let d = h[0].len();
    let mut z = h.clone();
    for _ in 0..sweeps {
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut g = 0.0;
                for k in 0..d {
                    g += z[i][k] * z[j][k];
                }
                s[i][j] = f64::max(a[i][j] + gamma / 2.0 * g, 0.0);
            }
        }
        let mut cur = h.clone();
        for _ in 0..steps {
            let mut nxt = vec![vec![0.0; d]; n];
            for i in 0..n {
                for k in 0..d {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += s[i][j] * cur[j][k];
                    }
                    nxt[i][k] = alpha * acc + (1.0 - alpha) * h[i][k];
                }
            }
            cur = nxt;
        }
        z = cur;
    }
    undense(&z)
}

/// Multi-graph alternating procedure written out entry by entry. Returns
/// the final `Z` and weights.
#[allow(clippy::too_many_arguments)]
pub fn mgoc_transcription(
    a_hats: &[Matrix],
    h: &Matrix,
    alpha: f64,
    gamma: f64,
    r: f64,
    steps: usize,
    sweeps: usize,
    normalized: bool,
) -> (Matrix, Vec<f64>) {
    let graphs: Vec<Dense> = a_hats.iter().map(dense).collect();
    let h = dense(h);
    let m = graphs.len();
    let n = h.len();
    let d = h[0].len();
    let mut w = vec![1.0 / m as f64; m];
    let mut z = h.clone();
    for _ in 0..sweeps {
        let wr: Vec<f64> = w.iter().map(|x| x.powf(r)).collect();
        let total: f64 = wr.iter().sum();
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut g = 0.0;
                for k in 0..d {
                    g += z[i][k] * z[j][k];
                }
                let mut base = 0.0;
                for v in 0..m {
                    base += wr[v] * graphs[v][i][j];
                }
                let mut val = base + gamma / 2.0 * g;
                if normalized {
                    val /= total;
                }
                s[i][j] = val.max(0.0);
            }
        }
        let mut cur = h.clone();
        for _ in 0..steps {
            let mut nxt = vec![vec![0.0; d]; n];
            for i in 0..n {
                for k in 0..d {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += s[i][j] * cur[j][k];
                    }
                    nxt[i][k] = alpha * acc + (1.0 - alpha) * h[i][k];
                }
            }
            cur = nxt;
        }
        z = cur;
        let inv: Vec<f64> = graphs
            .iter()
            .map(|a| {
                let e = fro_sq(&lin(a, 1.0, &s, -1.0)).max(1e-12);
                (1.0 / e).powf(1.0 / (r - 1.0))
            })
            .collect();
        let sum: f64 = inv.iter().sum();
        w = inv.iter().map(|q| q / sum).collect();
    }
    (undense(&z), w)
}

/// Largest entrywise difference between two equally shaped matrices.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_abs_diff shape mismatch");
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let num: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    num / b.frobenius_norm()
}
