//! Unit-square Darcy problem -div(a grad u) = 1 with zero Dirichlet
//! boundary: second-order 5-point scheme with harmonic-mean face
//! coefficients, conjugate-gradient solve.

use super::grf::{Grf2d, GrfSpec};
use crate::error::{Error, Result};

/// Coefficient convention for the benchmark: threshold a zero-mean random
/// field at 0 into the two-phase values {12, 3}.
pub fn threshold_coefficients(n: usize, seed: u64) -> Vec<f64> {
    let spec = GrfSpec {
        scale: 1.0,
        tau: 3.0,
        alpha: 2.0,
        n_modes: 64,
    };
    let g = Grf2d::sample(spec, seed).eval_grid(n);
    g.iter().map(|&v| if v >= 0.0 { 12.0 } else { 3.0 }).collect()
}

fn harm(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Solve on the n x n node grid (boundary included); `a` is the [n, n]
/// coefficient field sampled at nodes. Returns the full [n, n] solution with
/// zero boundary values. CG runs to relative residual 1e-10.
pub fn solve_darcy_unit_square(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::Solver("grid must be at least 3 x 3".into()));
    }
    if a.len() != n * n {
        return Err(Error::Solver(format!(
            "coefficient field has {} values, expected {}",
            a.len(),
            n * n
        )));
    }
    if let Some(bad) = a.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Solver(format!(
            "non-positive coefficient at node {bad}"
        )));
    }
    let m = n - 2; // interior nodes per direction
    let h = 1.0 / (n - 1) as f64;
    let h2 = h * h;
    let idx = |i: usize, j: usize| i * n + j; // full-grid index
    let iidx = |i: usize, j: usize| (i - 1) * m + (j - 1); // interior index

    // operator application: v = A u (interior only, zero Dirichlet)
    let apply = |u: &[f64], v: &mut [f64]| {
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let c = a[idx(i, j)];
                let ae = harm(c, a[idx(i + 1, j)]);
                let aw = harm(c, a[idx(i - 1, j)]);
                let an = harm(c, a[idx(i, j + 1)]);
                let as_ = harm(c, a[idx(i, j - 1)]);
                let uc = u[iidx(i, j)];
                let ue = if i + 1 < n - 1 { u[iidx(i + 1, j)] } else { 0.0 };
                let uw = if i > 1 { u[iidx(i - 1, j)] } else { 0.0 };
                let un = if j + 1 < n - 1 { u[iidx(i, j + 1)] } else { 0.0 };
                let us = if j > 1 { u[iidx(i, j - 1)] } else { 0.0 };
                v[iidx(i, j)] =
                    ((ae + aw + an + as_) * uc - ae * ue - aw * uw - an * un - as_ * us) / h2;
            }
        }
    };

    let nn = m * m;
    let b = vec![1.0; nn]; // unit source
    let mut u = vec![0.0; nn];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; nn];
    let bnorm: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut rs: f64 = r.iter().map(|x| x * x).sum();
    let tol = 1e-10 * bnorm;
    let max_iters = 20 * nn;
    let mut it = 0;
    while rs.sqrt() > tol {
        if it >= max_iters {
            return Err(Error::Solver(format!(
                "cg failed to converge: residual {} after {it} iterations",
                rs.sqrt() / bnorm
            )));
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(ap.iter()).map(|(x, y)| x * y).sum();
        let alpha = rs / pap;
        for k in 0..nn {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rs_new: f64 = r.iter().map(|x| x * x).sum();
        let beta = rs_new / rs;
        for k in 0..nn {
            p[k] = r[k] + beta * p[k];
        }
        rs = rs_new;
        it += 1;
    }

    let mut full = vec![0.0; n * n];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            full[idx(i, j)] = u[iidx(i, j)];
        }
    }
    Ok(full)
}
