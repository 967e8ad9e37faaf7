//! Dense assembly of the level matrix by direct quadrature, independent of the
//! matrix-free kernels. Basis functions come from a Vandermonde solve in the
//! monomial basis and derivatives are taken in physical coordinates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::OperatorParams;
use crate::error::{Error, Result};
use crate::fe_space::DofHandler;
use crate::geometry::{ActiveGeometry, Axis, CellKind};
use crate::quadrature::{cut_surface_rule, cut_volume_rule, face_rule, tensor_gauss};

/// Largest system the dense oracle will allocate.
pub const DENSE_LIMIT: usize = 50_000;

/// 1D nodal basis as monomial coefficients in the reference coordinate.
struct MonomialBasis {
    coeffs: Vec<DVector<f64>>,
}

impl MonomialBasis {
    fn new(nodes: &[f64]) -> Result<Self> {
        let n = nodes.len();
        let v = DMatrix::from_fn(n, n, |i, j| nodes[i].powi(j as i32));
        let lu = v.lu();
        let coeffs = (0..n)
            .map(|i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                lu.solve(&e)
                    .ok_or_else(|| Error::Structural("singular Vandermonde matrix".into()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { coeffs })
    }

    /// `order`-th derivative of basis `i` at reference coordinate `t`.
    fn eval(&self, i: usize, order: usize, t: f64) -> f64 {
        let c = &self.coeffs[i];
        (order..c.len())
            .map(|m| {
                let falling: f64 = ((m - order + 1)..=m).map(|v| v as f64).product();
                c[m] * falling * t.powi((m - order) as i32)
            })
            .sum()
    }
}

/// Mixed partial `d^ox d^oy` of the local basis function `l` (x-fastest) of a
/// cell at the physical point `x`, cell lower corner `lower`, size `h`.
fn basis_derivative(
    b: &MonomialBasis,
    p: usize,
    l: usize,
    ox: usize,
    oy: usize,
    lower: [f64; 2],
    h: f64,
    x: [f64; 2],
) -> f64 {
    let (a, c) = (l % (p + 1), l / (p + 1));
    let (xi, eta) = ((x[0] - lower[0]) / h, (x[1] - lower[1]) / h);
    b.eval(a, ox, xi) * b.eval(c, oy, eta) / h.powi((ox + oy) as i32)
}

/// The full level matrix including Nitsche, ghost and constraint rows.
pub fn assemble_dense(
    geometry: &ActiveGeometry,
    dofs: &DofHandler,
    params: &OperatorParams,
) -> Result<DMatrix<f64>> {
    let n = dofs.n_dofs;
    if n > DENSE_LIMIT {
        return Err(Error::SizeGuard {
            n,
            limit: DENSE_LIMIT,
        });
    }
    let p = dofs.degree;
    params.validate(p)?;
    let mesh = &geometry.mesh;
    let h = mesh.h;
    let basis = MonomialBasis::new(dofs.nodes_1d())?;
    let k = (p + 1) * (p + 1);
    let mut a = DMatrix::zeros(n, n);
    let circle = geometry.domain.circle();

    for (act, &cell) in geometry.active_cells.iter().enumerate() {
        let (i, j) = mesh.cell_ij(cell);
        let bounds = mesh.cell_bounds(i, j);
        let cd = dofs.cell_dofs(act);
        let cut = geometry.kinds[cell] == CellKind::Cut;
        let rule = match circle {
            Some(c) if cut => cut_volume_rule(&bounds, c, p + 1)?,
            _ => tensor_gauss(&bounds, p + 1),
        };
        for (x, &w) in rule.points.iter().zip(&rule.weights) {
            let g: Vec<[f64; 2]> = (0..k)
                .map(|l| {
                    [
                        basis_derivative(&basis, p, l, 1, 0, bounds.lower, h, *x),
                        basis_derivative(&basis, p, l, 0, 1, bounds.lower, h, *x),
                    ]
                })
                .collect();
            for r in 0..k {
                for c in 0..k {
                    a[(cd[r], cd[c])] += w * (g[r][0] * g[c][0] + g[r][1] * g[c][1]);
                }
            }
        }
        if let (true, Some(c)) = (cut, circle) {
            let surf = cut_surface_rule(&bounds, c, p + 1);
            let normals = surf.normals.as_ref().expect("surface rule carries normals");
            for ((x, &w), nrm) in surf.points.iter().zip(&surf.weights).zip(normals) {
                let v: Vec<f64> = (0..k)
                    .map(|l| basis_derivative(&basis, p, l, 0, 0, bounds.lower, h, *x))
                    .collect();
                let dn: Vec<f64> = (0..k)
                    .map(|l| {
                        nrm[0] * basis_derivative(&basis, p, l, 1, 0, bounds.lower, h, *x)
                            + nrm[1] * basis_derivative(&basis, p, l, 0, 1, bounds.lower, h, *x)
                    })
                    .collect();
                for r in 0..k {
                    for c in 0..k {
                        a[(cd[r], cd[c])] +=
                            w * (-dn[c] * v[r] - v[c] * dn[r] + params.gamma_d / h * v[c] * v[r]);
                    }
                }
            }
        }
    }

    for face in &geometry.ghost_faces {
        let (i0, j0) = mesh.cell_ij(face.first);
        let (i1, j1) = mesh.cell_ij(face.second);
        let b0 = mesh.cell_bounds(i0, j0);
        let b1 = mesh.cell_bounds(i1, j1);
        let (start, end) = match face.normal {
            Axis::X => ([b0.upper[0], b0.lower[1]], b0.upper),
            Axis::Y => ([b0.lower[0], b0.upper[1]], b0.upper),
        };
        let rule = face_rule(start, end, p + 1);
        let d0 = dofs.cell_dofs(geometry.active_index[face.first]);
        let d1 = dofs.cell_dofs(geometry.active_index[face.second]);
        for order in 1..=p {
            let weight = params.ghost_weight(order, h);
            let deriv = |l: usize, lower: [f64; 2], x: [f64; 2]| match face.normal {
                Axis::X => basis_derivative(&basis, p, l, order, 0, lower, h, x),
                Axis::Y => basis_derivative(&basis, p, l, 0, order, lower, h, x),
            };
            for (x, &w) in rule.points.iter().zip(&rule.weights) {
                // jump = second - first, as a sparse vector over global DoFs
                let mut jump: Vec<(usize, f64)> = Vec::with_capacity(2 * k);
                for l in 0..k {
                    jump.push((d1[l], deriv(l, b1.lower, *x)));
                    jump.push((d0[l], -deriv(l, b0.lower, *x)));
                }
                for &(r, jr) in &jump {
                    for &(c, jc) in &jump {
                        a[(r, c)] += weight * w * jr * jc;
                    }
                }
            }
        }
    }

    for d in 0..n {
        if dofs.constrained[d] {
            a.row_mut(d).fill(0.0);
            a.column_mut(d).fill(0.0);
            a[(d, d)] = 1.0;
        }
    }
    Ok(a)
}

/// Writes the nonzero entries as `row col value` lines.
pub fn write_triplets<W: Write>(m: &DMatrix<f64>, mut out: W) -> std::io::Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if v != 0.0 {
                writeln!(out, "{r} {c} {v:.17e}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe_space::distribute_dofs;
    use crate::geometry::{Circle, Domain, Face, LevelMesh, SquareBox};

    #[test]
    fn monomial_basis_is_nodal() {
        let nodes = crate::fe_space::gauss_lobatto_nodes(3).unwrap();
        let b = MonomialBasis::new(&nodes).unwrap();
        for (i, _) in nodes.iter().enumerate() {
            for (q, &x) in nodes.iter().enumerate() {
                assert!((b.eval(i, 0, x) - if i == q { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_face_hand_value() {
        // Q1 hat at the bottom vertex of the face between cells (0,0) and (1,0):
        // d_x phi = (1 - s)/h on the left, -(1 - s)/h on the right, so the jump
        // is 2(1 - s)/h and int_F jump^2 = 4 / (3 h); weight gamma_1 h^3.
        let b = SquareBox::new([-1.21, -1.21], [1.21, 1.21]).unwrap();
        let mesh = LevelMesh::new(b, 0);
        let geometry =
            ActiveGeometry::build(mesh, Domain::Circle(Circle::new([0.0, 0.0], 1.0))).unwrap();
        let dofs = distribute_dofs(&geometry, 1).unwrap();
        let params = OperatorParams {
            gamma_d: 1.0,
            gamma_ghost: vec![0.1],
            ghost_scaling: crate::operator::GhostScaling::TwoKPlusOne,
        };
        let mut g = geometry.clone();
        g.ghost_faces = vec![Face {
            first: 0,
            second: 1,
            normal: Axis::X,
        }];
        let with_face = assemble_dense(&g, &dofs, &params).unwrap();
        g.ghost_faces.clear();
        let without = assemble_dense(&g, &dofs, &params).unwrap();
        let h = mesh.h;
        let d = dofs.node_dof(1, 0).unwrap();
        let got = with_face[(d, d)] - without[(d, d)];
        let expect = 0.1 * h.powi(3) * 4.0 / (3.0 * h);
        assert!((got - expect).abs() < 1e-14, "{got} vs {expect}");
    }

    #[test]
    fn size_guard() {
        let b = SquareBox::new([-1.21, -1.21], [1.21, 1.21]).unwrap();
        let geometry = ActiveGeometry::build(LevelMesh::new(b, 7), Domain::FittedSquare).unwrap();
        let dofs = distribute_dofs(&geometry, 1).unwrap();
        assert!(matches!(
            assemble_dense(&geometry, &dofs, &OperatorParams::defaults(1)),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn triplets_round_trip_nonzeros() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -2.5, 3.0]);
        let mut buf = Vec::new();
        write_triplets(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("1 0 -2.5"));
    }
}
