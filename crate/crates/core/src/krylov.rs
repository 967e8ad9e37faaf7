//! Right-preconditioned GMRES without restarts.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, residual, LinearOperator};

/// Reorthogonalize when the Arnoldi vector loses this much of its norm to
/// roundoff, in the sense `||w|| + delta ||w'|| == ||w||`.
pub const REORTH_DELTA: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub n_it: usize,
    /// `||b - A x_0|| = ||b||` for the zero initial guess.
    pub r0: f64,
    /// True residual norm of the returned iterate.
    pub r_final: f64,
    /// Least-squares residual estimates, `history[k]` after `k` iterations.
    pub history: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn n_dofs(&self) -> usize {
        self.x.len()
    }

    /// Iterations scaled to an eight-digit residual reduction.
    pub fn fractional(&self) -> Result<f64> {
        fractional_iterations(self.n_it, self.r_final, self.r0)
    }

    /// Unknowns solved per second of solve time.
    pub fn throughput(&self) -> f64 {
        self.n_dofs() as f64 / self.wall_time.max(f64::MIN_POSITIVE)
    }
}

/// `n * (-8) / log10(r_final / r_0)`.
pub fn fractional_iterations(n_it: usize, r_final: f64, r_0: f64) -> Result<f64> {
    if !(r_final < r_0) || !(r_0 > 0.0) {
        return Err(Error::FractionalUndefined { r_final, r_0 });
    }
    Ok(n_it as f64 * -8.0 / (r_final / r_0).log10())
}

/// Solves `A x = b` from `x = 0` until `||r|| <= tol ||b||`, using `x = M y`.
pub fn gmres<A, M>(a: &A, m: &M, b: &[f64], tol: f64, max_it: usize) -> Result<SolveReport>
where
    A: LinearOperator + ?Sized,
    M: LinearOperator + ?Sized,
{
    let n = a.size();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if m.size() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.size(),
        });
    }
    let start = Instant::now();
    let beta = norm(b);
    let mut history = vec![beta];
    if beta == 0.0 {
        return Ok(SolveReport {
            x: vec![0.0; n],
            n_it: 0,
            r0: 0.0,
            r_final: 0.0,
            history,
            converged: true,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    let mut basis: Vec<Vec<f64>> = vec![b.iter().map(|v| v / beta).collect()];
    // Hessenberg columns after the Givens rotations
    let mut hcols: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<(f64, f64)> = Vec::new();
    let mut g = vec![beta];
    let mut z = vec![0.0; n];
    let mut converged = false;
    let mut k = 0;
    while k < max_it {
        m.matvec(&basis[k], &mut z);
        let mut w = vec![0.0; n];
        a.matvec(&z, &mut w);
        let before = norm(&w);
        let mut h = vec![0.0; k + 2];
        for (i, v) in basis.iter().enumerate() {
            let hij = dot(&w, v);
            h[i] = hij;
            axpy(-hij, v, &mut w);
        }
        let mut after = norm(&w);
        if before + REORTH_DELTA * after == before {
            for (i, v) in basis.iter().enumerate() {
                let c = dot(&w, v);
                h[i] += c;
                axpy(-c, v, &mut w);
            }
            after = norm(&w);
        }
        h[k + 1] = after;
        for (i, &(c, s)) in cs.iter().enumerate() {
            let (a0, a1) = (h[i], h[i + 1]);
            h[i] = c * a0 + s * a1;
            h[i + 1] = -s * a0 + c * a1;
        }
        let rr = h[k].hypot(h[k + 1]);
        let (c, s) = if rr == 0.0 {
            (1.0, 0.0)
        } else {
            (h[k] / rr, h[k + 1] / rr)
        };
        h[k] = rr;
        h[k + 1] = 0.0;
        cs.push((c, s));
        let gk = g[k];
        g[k] = c * gk;
        g.push(-s * gk);
        hcols.push(h);
        k += 1;
        let est = g[k].abs();
        history.push(est);
        if est <= tol * beta {
            converged = true;
            break;
        }
        if after <= 1e-14 * before {
            return Err(Error::Breakdown {
                step: k,
                residual: est / beta,
            });
        }
        basis.push(w.iter().map(|v| v / after).collect());
    }
    // back substitution for y, then x = M (V y)
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = g[i];
        for j in i + 1..k {
            acc -= hcols[j][i] * y[j];
        }
        y[i] = acc / hcols[i][i];
    }
    let mut vy = vec![0.0; n];
    for (v, &yi) in basis.iter().zip(&y) {
        axpy(yi, v, &mut vy);
    }
    let mut x = vec![0.0; n];
    m.matvec(&vy, &mut x);
    let mut r = vec![0.0; n];
    residual(a, &x, b, &mut r);
    let r_final = norm(&r);
    Ok(SolveReport {
        x,
        n_it: k,
        r0: beta,
        r_final,
        history,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
