//! One-dimensional Lagrange bases on Gauss-Lobatto nodes of `[0, 1]`.

use crate::error::{Error, Result};

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 3;

/// Gauss-Lobatto nodes of degree `p` on `[0, 1]`.
pub fn gauss_lobatto_nodes(p: usize) -> Result<Vec<f64>> {
    let nodes = match p {
        1 => vec![0.0, 1.0],
        2 => vec![0.0, 0.5, 1.0],
        3 => {
            let s = 0.5 / 5f64.sqrt();
            vec![0.0, 0.5 - s, 0.5 + s, 1.0]
        }
        _ => return Err(Error::UnsupportedDegree(p)),
    };
    Ok(nodes)
}

/// Polynomial in monomial form, `coeffs[k]` multiplies `x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    pub coeffs: Vec<f64>,
}

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly { coeffs: vec![0.0] };
        }
        Poly {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        }
    }

    fn mul_linear(&self, a: f64, b: f64) -> Poly {
        // (a + b x) * self
        let mut out = vec![0.0; self.coeffs.len() + 1];
        for (k, &c) in self.coeffs.iter().enumerate() {
            out[k] += a * c;
            out[k + 1] += b * c;
        }
        Poly { coeffs: out }
    }
}

/// Lagrange basis polynomials through `nodes`, expanded from the product form.
pub fn lagrange_basis(nodes: &[f64]) -> Vec<Poly> {
    (0..nodes.len())
        .map(|i| {
            let mut poly = Poly { coeffs: vec![1.0] };
            for (j, &xj) in nodes.iter().enumerate() {
                if j != i {
                    let d = nodes[i] - xj;
                    poly = poly.mul_linear(-xj / d, 1.0 / d);
                }
            }
            poly
        })
        .collect()
}

/// Values and derivatives of a 1D Lagrange basis at a fixed point set.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTable1D {
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub points: Vec<f64>,
    /// `data[k][q * (p + 1) + i]`: k-th derivative of basis `i` at point `q`.
    data: Vec<Vec<f64>>,
}

impl ShapeTable1D {
    pub fn n_basis(&self) -> usize {
        self.degree + 1
    }

    pub fn max_derivative(&self) -> usize {
        self.data.len() - 1
    }

    #[inline]
    pub fn get(&self, derivative: usize, point: usize, basis: usize) -> f64 {
        self.data[derivative][point * (self.degree + 1) + basis]
    }

    /// Row-major `n_points x (p + 1)` block of the given derivative order.
    pub fn block(&self, derivative: usize) -> &[f64] {
        &self.data[derivative]
    }
}

/// Tabulates derivatives `0..=max_derivative` of the degree-`p` Gauss-Lobatto
/// Lagrange basis at `points` (reference coordinates in `[0, 1]`).
pub fn build_shape_table(p: usize, points: &[f64], max_derivative: usize) -> Result<ShapeTable1D> {
    let nodes = gauss_lobatto_nodes(p)?;
    if max_derivative > p {
        return Err(Error::DerivativeOrder {
            order: max_derivative,
            degree: p,
        });
    }
    let mut polys = lagrange_basis(&nodes);
    let mut data = Vec::with_capacity(max_derivative + 1);
    for _ in 0..=max_derivative {
        let mut block = Vec::with_capacity(points.len() * (p + 1));
        for &x in points {
            block.extend(polys.iter().map(|poly| poly.eval(x)));
        }
        data.push(block);
        polys = polys.iter().map(Poly::derivative).collect();
    }
    Ok(ShapeTable1D {
        degree: p,
        nodes,
        points: points.to_vec(),
        data,
    })
}
