//! Chebyshev semi-iteration on the Jacobi-preconditioned operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{norm, LinearOperator};

#[derive(Debug, Clone)]
pub struct Chebyshev {
    pub degree: usize,
    inv_diag: Vec<f64>,
    /// Power-method estimate of the largest eigenvalue of `D^{-1} A`.
    pub lambda_max: f64,
    /// Target interval `[a, b]`.
    pub interval: (f64, f64),
}

impl Chebyshev {
    /// Estimates `lambda_max(D^{-1} A)` with `power_iterations` steps and targets
    /// `[lambda / theta, 1.1 lambda]`.
    pub fn new<A: LinearOperator + ?Sized>(
        a: &A,
        diag: &[f64],
        degree: usize,
        theta: f64,
        power_iterations: usize,
    ) -> Result<Self> {
        if let Some((row, &value)) = diag.iter().enumerate().find(|(_, d)| !(**d > 0.0)) {
            return Err(Error::NonPositiveDiagonal { row, value });
        }
        if degree == 0 {
            return Err(Error::Config("Chebyshev degree must be at least 1".into()));
        }
        let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
        let n = a.size();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let mut w = vec![0.0; n];
        let mut lambda_max = f64::MIN_POSITIVE;
        for _ in 0..power_iterations {
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            a.matvec(&v, &mut w);
            for (wi, di) in w.iter_mut().zip(&inv_diag) {
                *wi *= di;
            }
            lambda_max = norm(&w).max(f64::MIN_POSITIVE);
            std::mem::swap(&mut v, &mut w);
        }
        Ok(Self {
            degree,
            inv_diag,
            lambda_max,
            interval: (lambda_max / theta, 1.1 * lambda_max),
        })
    }

    /// Builds the smoother for a fixed, known interval (tests).
    pub fn with_interval(diag: &[f64], degree: usize, interval: (f64, f64)) -> Self {
        Self {
            degree,
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
            lambda_max: interval.1 / 1.1,
            interval,
        }
    }

    /// `degree` steps of the three-term recurrence; `r` and `d` are work vectors.
    pub fn step<A: LinearOperator + ?Sized>(
        &self,
        a: &A,
        x: &mut [f64],
        b: &[f64],
        r: &mut [f64],
        d: &mut [f64],
    ) {
        let (lo, hi) = self.interval;
        let theta = 0.5 * (hi + lo);
        let delta = 0.5 * (hi - lo);
        let sigma = theta / delta;
        let mut rho = 1.0 / sigma;
        self.preconditioned_residual(a, x, b, r);
        for (di, ri) in d.iter_mut().zip(r.iter()) {
            *di = ri / theta;
        }
        add(x, d);
        for _ in 1..self.degree {
            self.preconditioned_residual(a, x, b, r);
            let rho_new = 1.0 / (2.0 * sigma - rho);
            let (c1, c2) = (rho_new * rho, 2.0 * rho_new / delta);
            for (di, ri) in d.iter_mut().zip(r.iter()) {
                *di = c1 * *di + c2 * ri;
            }
            add(x, d);
            rho = rho_new;
        }
    }

    fn preconditioned_residual<A: LinearOperator + ?Sized>(
        &self,
        a: &A,
        x: &[f64],
        b: &[f64],
        r: &mut [f64],
    ) {
        a.matvec(x, r);
        for ((ri, bi), di) in r.iter_mut().zip(b).zip(&self.inv_diag) {
            *ri = (bi - *ri) * di;
        }
    }
}

fn add(x: &mut [f64], d: &[f64]) {
    for (xi, di) in x.iter_mut().zip(d) {
        *xi += di;
    }
}
