//! Vector kernels and the operator abstraction shared by smoothers and solvers.

use crate::operator::LevelOperator;

/// A square linear map on coefficient vectors.
pub trait LinearOperator {
    fn size(&self) -> usize;
    /// `y = A x`, overwriting `y`.
    fn matvec(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for LevelOperator {
    fn size(&self) -> usize {
        self.n_dofs()
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.apply(x, y).expect("vector length checked by caller");
    }
}

/// Identity map of a given size.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn size(&self) -> usize {
        self.0
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

/// Dense row-major matrix as an operator (tests and toy problems).
impl LinearOperator for nalgebra::DMatrix<f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `r = b - A x`
pub fn residual<A: LinearOperator + ?Sized>(a: &A, x: &[f64], b: &[f64], r: &mut [f64]) {
    a.matvec(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}
