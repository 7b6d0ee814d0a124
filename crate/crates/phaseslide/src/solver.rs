//! Deterministic linear solves: a direct tridiagonal solver for 1d problems
//! and a preconditioned conjugate gradient iteration for the 2d and
//! matrix-free operators. Both are sequential, so repeated runs are
//! bit-identical.

use crate::error::{Error, Result};

/// Thomas algorithm for a tridiagonal system. `lower[0]` and
/// `upper[n-1]` are ignored. Panics on zero pivots (the operators assembled
/// here are strictly diagonally dominant).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for an operator that is self-adjoint
/// and positive definite in the inner product `dot`.
///
/// `apply(p, out)` writes `A p` into `out`; `precond(r, out)` applies an
/// approximate inverse (also self-adjoint in `dot`). Convergence is declared
/// on the relative residual `sqrt(dot(r, r) / dot(b, b))`.
pub fn pcg(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    precond: &dyn Fn(&[f64], &mut [f64]),
    dot: &dyn Fn(&[f64], &[f64]) -> f64,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgSolution> {
    let n = b.len();
    let b_norm2 = dot(b, b);
    if b_norm2 == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history: Vec<f64> = Vec::new();

    for iter in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolve {
                iterations: iter,
                residual: (dot(&r, &r) / b_norm2).sqrt(),
                history: tail(&history),
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = (dot(&r, &r) / b_norm2).sqrt();
        history.push(rel);
        if rel <= rel_tol {
            return Ok(CgSolution {
                x,
                iterations: iter + 1,
                relative_residual: rel,
            });
        }
        precond(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolve {
        iterations: max_iter,
        residual: *history.last().unwrap_or(&f64::NAN),
        history: tail(&history),
    })
}

fn tail(history: &[f64]) -> Vec<f64> {
    let k = history.len().saturating_sub(8);
    history[k..].to_vec()
}
