//! Cell and face kernels of the level operator.

use crate::fe_space::shape::{build_shape_table, ShapeTable1D};
use crate::quadrature::gauss_legendre;
use crate::Result;

/// Largest number of DoFs on one cell (`Q_3`).
pub const MAX_CELL_DOFS: usize = 16;

/// 1D data for sum factorization on uncut cells: basis values and first
/// derivatives at `p + 1` Gauss points, in reference coordinates.
#[derive(Debug, Clone)]
pub struct TensorKernel {
    pub p1: usize,
    /// `values[q * p1 + i]`
    values: Vec<f64>,
    derivs: Vec<f64>,
    /// Tensor weights `w[qx] w[qy]`, x fastest.
    weights2: Vec<f64>,
}

impl TensorKernel {
    pub fn new(p: usize) -> Result<Self> {
        let (points, w) = gauss_legendre(p + 1);
        let table = build_shape_table(p, &points, 1)?;
        let p1 = p + 1;
        let mut weights2 = Vec::with_capacity(p1 * p1);
        for wy in &w {
            for wx in &w {
                weights2.push(wx * wy);
            }
        }
        Ok(Self {
            p1,
            values: table.block(0).to_vec(),
            derivs: table.block(1).to_vec(),
            weights2,
        })
    }

    /// `y += K u` for the Laplacian on one square cell (scale-free in 2D).
    #[inline]
    pub fn apply_laplace(&self, u: &[f64], y: &mut [f64]) {
        let n = self.p1;
        let s = &self.values;
        let d = &self.derivs;
        let mut tv = [0.0; MAX_CELL_DOFS];
        let mut td = [0.0; MAX_CELL_DOFS];
        // x direction: t[b][qx]
        for b in 0..n {
            for qx in 0..n {
                let (mut v, mut dd) = (0.0, 0.0);
                for a in 0..n {
                    let ua = u[b * n + a];
                    v += s[qx * n + a] * ua;
                    dd += d[qx * n + a] * ua;
                }
                tv[b * n + qx] = v;
                td[b * n + qx] = dd;
            }
        }
        // y direction: gradients at quadrature points, scaled by weights
        let mut gx = [0.0; MAX_CELL_DOFS];
        let mut gy = [0.0; MAX_CELL_DOFS];
        for qy in 0..n {
            for qx in 0..n {
                let (mut vx, mut vy) = (0.0, 0.0);
                for b in 0..n {
                    vx += s[qy * n + b] * td[b * n + qx];
                    vy += d[qy * n + b] * tv[b * n + qx];
                }
                let w = self.weights2[qy * n + qx];
                gx[qy * n + qx] = vx * w;
                gy[qy * n + qx] = vy * w;
            }
        }
        // back along y
        for b in 0..n {
            for qx in 0..n {
                let (mut sd, mut sv) = (0.0, 0.0);
                for qy in 0..n {
                    sd += s[qy * n + b] * gx[qy * n + qx];
                    sv += d[qy * n + b] * gy[qy * n + qx];
                }
                td[b * n + qx] = sd;
                tv[b * n + qx] = sv;
            }
        }
        // back along x
        for b in 0..n {
            for a in 0..n {
                let mut acc = 0.0;
                for qx in 0..n {
                    acc += d[qx * n + a] * td[b * n + qx] + s[qx * n + a] * tv[b * n + qx];
                }
                y[b * n + a] += acc;
            }
        }
    }

    /// Dense element matrix of the uncut cell, built from the same tables.
    pub fn element_matrix(&self) -> Vec<f64> {
        let k = self.p1 * self.p1;
        let mut m = vec![0.0; k * k];
        let mut e = vec![0.0; k];
        let mut col = vec![0.0; k];
        for j in 0..k {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            col.iter_mut().for_each(|v| *v = 0.0);
            self.apply_laplace(&e, &mut col);
            for i in 0..k {
                m[i * k + j] = col[i];
            }
        }
        m
    }
}

/// Basis values and gradients cached at the quadrature points of one cut cell.
#[derive(Debug, Clone, Default)]
pub struct CutCellData {
    pub n_basis: usize,
    pub vol_weights: Vec<f64>,
    /// `vol_grad[q * n_basis + i]`, physical gradient.
    pub vol_grad: Vec<[f64; 2]>,
    pub surf_weights: Vec<f64>,
    pub surf_values: Vec<f64>,
    /// Physical normal derivative of each basis function.
    pub surf_normal_derivs: Vec<f64>,
    /// Nitsche penalty `gamma_D / h`.
    pub penalty: f64,
}

impl CutCellData {
    /// `y += A_T u` with bulk, Nitsche symmetric and penalty terms.
    #[inline]
    pub fn apply(&self, u: &[f64], y: &mut [f64]) {
        let k = self.n_basis;
        for (q, &w) in self.vol_weights.iter().enumerate() {
            let grads = &self.vol_grad[q * k..(q + 1) * k];
            let (mut gx, mut gy) = (0.0, 0.0);
            for (g, &ui) in grads.iter().zip(u) {
                gx += g[0] * ui;
                gy += g[1] * ui;
            }
            gx *= w;
            gy *= w;
            for (g, yi) in grads.iter().zip(y.iter_mut()) {
                *yi += g[0] * gx + g[1] * gy;
            }
        }
        for (q, &w) in self.surf_weights.iter().enumerate() {
            let vals = &self.surf_values[q * k..(q + 1) * k];
            let dns = &self.surf_normal_derivs[q * k..(q + 1) * k];
            let (mut v, mut dn) = (0.0, 0.0);
            for i in 0..k {
                v += vals[i] * u[i];
                dn += dns[i] * u[i];
            }
            let cv = w * (self.penalty * v - dn);
            let cd = -w * v;
            for i in 0..k {
                y[i] += cv * vals[i] + cd * dns[i];
            }
        }
    }

    pub fn element_matrix(&self) -> Vec<f64> {
        let k = self.n_basis;
        let mut m = vec![0.0; k * k];
        let mut e = vec![0.0; k];
        let mut col = vec![0.0; k];
        for j in 0..k {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            col.iter_mut().for_each(|v| *v = 0.0);
            self.apply(&e, &mut col);
            for i in 0..k {
                m[i * k + j] = col[i];
            }
        }
        m
    }
}

/// Reference-coordinate basis data for evaluating at arbitrary points.
#[derive(Debug, Clone)]
pub struct PointBasis {
    pub p: usize,
    basis: Vec<crate::fe_space::shape::Poly>,
    derivs: Vec<crate::fe_space::shape::Poly>,
}

impl PointBasis {
    pub fn new(nodes: &[f64]) -> Self {
        let basis = crate::fe_space::shape::lagrange_basis(nodes);
        let derivs = basis.iter().map(|b| b.derivative()).collect();
        Self {
            p: nodes.len() - 1,
            basis,
            derivs,
        }
    }

    /// Values and reference gradients of all `(p+1)^2` basis functions at `(xi, eta)`.
    pub fn eval(&self, xi: f64, eta: f64, values: &mut [f64], grads: &mut [[f64; 2]]) {
        let n = self.p + 1;
        let mut vx = [0.0; 4];
        let mut dx = [0.0; 4];
        let mut vy = [0.0; 4];
        let mut dy = [0.0; 4];
        for a in 0..n {
            vx[a] = self.basis[a].eval(xi);
            dx[a] = self.derivs[a].eval(xi);
            vy[a] = self.basis[a].eval(eta);
            dy[a] = self.derivs[a].eval(eta);
        }
        for b in 0..n {
            for a in 0..n {
                values[b * n + a] = vx[a] * vy[b];
                grads[b * n + a] = [dx[a] * vy[b], vx[a] * dy[b]];
            }
        }
    }
}

/// Ghost-penalty matrix of one face in reference scaling. Row/column order:
/// DoFs of `first` cell then DoFs of `second` cell. `scales[k-1]` multiplies
/// the `k`-th derivative jump term.
pub fn ghost_face_matrix(p: usize, normal_is_x: bool, scales: &[f64]) -> Result<Vec<f64>> {
    let n = p + 1;
    let k = n * n;
    let (gp, gw) = gauss_legendre(n);
    let along = build_shape_table(p, &gp, 0)?;
    let ends: ShapeTable1D = build_shape_table(p, &[0.0, 1.0], p)?;
    let mut m = vec![0.0; 4 * k * k];
    let mut jump = vec![0.0; 2 * k];
    for (order, &scale) in scales.iter().enumerate().map(|(i, s)| (i + 1, s)) {
        if scale == 0.0 {
            continue;
        }
        for (q, &w) in gw.iter().enumerate() {
            for b in 0..n {
                for a in 0..n {
                    // normal index and tangential index in the local lattice
                    let (nrm, tan) = if normal_is_x { (a, b) } else { (b, a) };
                    let t = along.get(0, q, tan);
                    jump[b * n + a] = ends.get(order, 1, nrm) * t;
                    jump[k + b * n + a] = -ends.get(order, 0, nrm) * t;
                }
            }
            for i in 0..2 * k {
                if jump[i] == 0.0 {
                    continue;
                }
                let ci = scale * w * jump[i];
                for j in 0..2 * k {
                    m[i * 2 * k + j] += ci * jump[j];
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q1_element_matrix_is_standard() {
        let k = TensorKernel::new(1).unwrap().element_matrix();
        let expect = [
            [2.0, -0.5, -0.5, -1.0],
            [-0.5, 2.0, -1.0, -0.5],
            [-0.5, -1.0, 2.0, -0.5],
            [-1.0, -0.5, -0.5, 2.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[i * 4 + j] - expect[i][j] / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn laplace_kills_constants_and_is_symmetric() {
        for p in 1..=3 {
            let t = TensorKernel::new(p).unwrap();
            let k = (p + 1) * (p + 1);
            let m = t.element_matrix();
            for i in 0..k {
                let row: f64 = (0..k).map(|j| m[i * k + j]).sum();
                assert!(row.abs() < 1e-13);
                for j in 0..k {
                    assert!((m[i * k + j] - m[j * k + i]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn ghost_matrix_annihilates_global_polynomials() {
        // a global linear function continued across the face has no jump
        let p = 2;
        let n = p + 1;
        let k = n * n;
        let nodes = crate::fe_space::gauss_lobatto_nodes(p).unwrap();
        for normal_is_x in [true, false] {
            let m = ghost_face_matrix(p, normal_is_x, &[1.0, 1.0]).unwrap();
            let mut u = vec![0.0; 2 * k];
            for b in 0..n {
                for a in 0..n {
                    let (x1, y1) = (nodes[a], nodes[b]);
                    let (x2, y2) = if normal_is_x {
                        (x1 + 1.0, y1)
                    } else {
                        (x1, y1 + 1.0)
                    };
                    let f = |x: f64, y: f64| x * x + 3.0 * x * y - y * y;
                    u[b * n + a] = f(x1, y1);
                    u[k + b * n + a] = f(x2, y2);
                }
            }
            for i in 0..2 * k {
                let s: f64 = (0..2 * k).map(|j| m[i * 2 * k + j] * u[j]).sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }
}
