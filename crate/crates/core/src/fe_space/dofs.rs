//! Global numbering of the continuous `Q_p` space on the active cells of one
//! level, and the per-patch index sets used by the vertex-patch smoother.
//!
//! Nodes live on a lattice of `n p + 1` points per direction; lattice node
//! `(I, J)` sits in cell `(I / p, J / p)` at Gauss-Lobatto node `I % p`.
//! Active nodes are numbered lexicographically (x fastest), so every lattice
//! row owns a contiguous DoF range.

use crate::error::{Error, Result};
use crate::fe_space::shape::{gauss_lobatto_nodes, lagrange_basis, Poly};
use crate::geometry::{ActiveGeometry, Domain, LevelMesh, PatchKind};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct DofHandler {
    pub mesh: LevelMesh,
    pub degree: usize,
    /// Lattice nodes per direction.
    pub lattice: usize,
    pub n_dofs: usize,
    node_dof: Vec<usize>,
    dof_node: Vec<[usize; 2]>,
    /// `(p + 1)^2` DoFs per active cell, x-fastest local order.
    cell_dofs: Vec<usize>,
    /// First DoF of every lattice row; `row_start[lattice] == n_dofs`.
    row_start: Vec<usize>,
    /// Strongly constrained DoFs (boundary of the fitted square).
    pub constrained: Vec<bool>,
    nodes_1d: Vec<f64>,
    basis_1d: Vec<Poly>,
}

impl DofHandler {
    pub fn dofs_per_cell(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// DoFs of the active cell with the given position in `active_cells`.
    #[inline]
    pub fn cell_dofs(&self, active: usize) -> &[usize] {
        let k = self.dofs_per_cell();
        &self.cell_dofs[active * k..(active + 1) * k]
    }

    #[inline]
    pub fn node_dof(&self, i: usize, j: usize) -> Option<usize> {
        let d = self.node_dof[j * self.lattice + i];
        (d != NONE).then_some(d)
    }

    pub fn dof_node(&self, dof: usize) -> [usize; 2] {
        self.dof_node[dof]
    }

    pub fn row_start(&self) -> &[usize] {
        &self.row_start
    }

    pub fn n_constrained(&self) -> usize {
        self.constrained.iter().filter(|&&c| c).count()
    }

    /// Physical coordinate of a lattice node.
    pub fn node_coordinate(&self, i: usize, j: usize) -> [f64; 2] {
        let p = self.degree;
        let c = |k: usize, lower: f64| {
            let (cell, local) = if k == self.lattice - 1 {
                (k / p - 1, p)
            } else {
                (k / p, k % p)
            };
            lower + self.mesh.h * (cell as f64 + self.nodes_1d[local])
        };
        [c(i, self.mesh.lower[0]), c(j, self.mesh.lower[1])]
    }

    pub fn dof_coordinate(&self, dof: usize) -> [f64; 2] {
        let [i, j] = self.dof_node[dof];
        self.node_coordinate(i, j)
    }

    pub fn nodes_1d(&self) -> &[f64] {
        &self.nodes_1d
    }

    /// 1D Lagrange basis in monomial form.
    pub fn basis_1d(&self) -> &[Poly] {
        &self.basis_1d
    }

    /// Evaluates the FE function with coefficients `x` at `point`; `None`
    /// outside the active region.
    pub fn evaluate(&self, geometry: &ActiveGeometry, x: &[f64], point: [f64; 2]) -> Option<f64> {
        let h = self.mesh.h;
        let fi = (point[0] - self.mesh.lower[0]) / h;
        let fj = (point[1] - self.mesh.lower[1]) / h;
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let i = (fi.floor() as usize).min(self.mesh.n - 1);
        let j = (fj.floor() as usize).min(self.mesh.n - 1);
        if fi > self.mesh.n as f64 || fj > self.mesh.n as f64 {
            return None;
        }
        let active = geometry.active_index[self.mesh.cell_id(i, j)];
        if active == NONE {
            return None;
        }
        let xi = fi - i as f64;
        let eta = fj - j as f64;
        let vx: Vec<f64> = self.basis_1d.iter().map(|b| b.eval(xi)).collect();
        let vy: Vec<f64> = self.basis_1d.iter().map(|b| b.eval(eta)).collect();
        let p1 = self.degree + 1;
        let dofs = self.cell_dofs(active);
        let mut s = 0.0;
        for b in 0..p1 {
            for a in 0..p1 {
                s += x[dofs[b * p1 + a]] * vx[a] * vy[b];
            }
        }
        Some(s)
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.n_dofs)
            .map(|d| f(self.dof_coordinate(d)))
            .collect()
    }
}

/// Numbers the Gauss-Lobatto lattice nodes of all active cells.
pub fn distribute_dofs(geometry: &ActiveGeometry, p: usize) -> Result<DofHandler> {
    let nodes_1d = gauss_lobatto_nodes(p)?;
    let basis_1d = lagrange_basis(&nodes_1d);
    let mesh = geometry.mesh;
    let lattice = mesh.n * p + 1;
    let mut used = vec![false; lattice * lattice];
    for &cell in &geometry.active_cells {
        let (ci, cj) = mesh.cell_ij(cell);
        for b in 0..=p {
            for a in 0..=p {
                used[(cj * p + b) * lattice + ci * p + a] = true;
            }
        }
    }
    let mut node_dof = vec![NONE; lattice * lattice];
    let mut dof_node = Vec::new();
    let mut row_start = Vec::with_capacity(lattice + 1);
    for j in 0..lattice {
        row_start.push(dof_node.len());
        for i in 0..lattice {
            if used[j * lattice + i] {
                node_dof[j * lattice + i] = dof_node.len();
                dof_node.push([i, j]);
            }
        }
    }
    let n_dofs = dof_node.len();
    row_start.push(n_dofs);

    let k = (p + 1) * (p + 1);
    let mut cell_dofs = Vec::with_capacity(geometry.active_cells.len() * k);
    for &cell in &geometry.active_cells {
        let (ci, cj) = mesh.cell_ij(cell);
        for b in 0..=p {
            for a in 0..=p {
                cell_dofs.push(node_dof[(cj * p + b) * lattice + ci * p + a]);
            }
        }
    }

    let constrained = match geometry.domain {
        Domain::FittedSquare => dof_node
            .iter()
            .map(|&[i, j]| i == 0 || j == 0 || i == lattice - 1 || j == lattice - 1)
            .collect(),
        Domain::Circle(_) => vec![false; n_dofs],
    };

    Ok(DofHandler {
        mesh,
        degree: p,
        lattice,
        n_dofs,
        node_dof,
        dof_node,
        cell_dofs,
        row_start,
        constrained,
        nodes_1d,
        basis_1d,
    })
}

/// Fills interior and extended DoF sets of every patch. A cut patch owns every
/// free DoF whose basis function is supported in its cells, which includes
/// nodes on the boundary of the active region. Free DoFs owned by no patch are
/// appended to the nearest cut patch (ties: lowest patch index).
pub fn build_patch_index_sets(dofs: &DofHandler, geometry: &mut ActiveGeometry) -> Result<()> {
    let p = dofs.degree;
    let mut covered = vec![false; dofs.n_dofs];
    for patch in geometry.patches.iter_mut() {
        let [vi, vj] = patch.vertex;
        let (i0, j0) = ((vi - 1) * p, (vj - 1) * p);
        patch.interior_dofs.clear();
        patch.extended_dofs.clear();
        for b in 0..=2 * p {
            for a in 0..=2 * p {
                let dof = dofs.node_dof(i0 + a, j0 + b).ok_or_else(|| {
                    Error::Structural(format!("patch at vertex ({vi}, {vj}) has an inactive node"))
                })?;
                patch.extended_dofs.push(dof);
                if a > 0 && a < 2 * p && b > 0 && b < 2 * p {
                    patch.interior_dofs.push(dof);
                    covered[dof] = true;
                }
            }
        }
    }

    {
        // a cut patch also owns the boundary nodes whose support lies in its four cells
        let n = geometry.mesh.n;
        for patch in geometry
            .patches
            .iter_mut()
            .filter(|pt| pt.kind == PatchKind::Cut)
        {
            let [vi, vj] = patch.vertex;
            for &dof in &patch.extended_dofs {
                if patch.interior_dofs.contains(&dof) || dofs.constrained[dof] {
                    continue;
                }
                let [ni, nj] = dofs.dof_node(dof);
                let span = |m: usize| -> Vec<usize> {
                    let c = m / p;
                    if m % p == 0 {
                        [c.wrapping_sub(1), c]
                            .into_iter()
                            .filter(|&c| c < n)
                            .collect()
                    } else {
                        vec![c]
                    }
                };
                let mut inside = true;
                for cj in span(nj) {
                    for ci in span(ni) {
                        if geometry.kinds[cj * n + ci].is_active()
                            && !(ci + 1 >= vi && ci <= vi && cj + 1 >= vj && cj <= vj)
                        {
                            inside = false;
                        }
                    }
                }
                if inside {
                    patch.interior_dofs.push(dof);
                    covered[dof] = true;
                }
            }
        }
    }
    let uncovered: Vec<usize> = (0..dofs.n_dofs)
        .filter(|&d| !covered[d] && !dofs.constrained[d])
        .collect();
    if uncovered.is_empty() {
        return Ok(());
    }

    let n = geometry.mesh.n;
    let mut cut_at_vertex = vec![NONE; (n + 1) * (n + 1)];
    let mut any_cut = false;
    for (k, patch) in geometry.patches.iter().enumerate() {
        if patch.kind == PatchKind::Cut {
            cut_at_vertex[patch.vertex[1] * (n + 1) + patch.vertex[0]] = k;
            any_cut = true;
        }
    }
    if !any_cut {
        return Err(Error::Structural(format!(
            "{} free DoFs are not covered by any patch and there is no cut patch to absorb them",
            uncovered.len()
        )));
    }

    let h = geometry.mesh.h;
    for dof in uncovered {
        let x = dofs.dof_coordinate(dof);
        let [ni, nj] = dofs.dof_node(dof);
        let (ci, cj) = ((ni / p) as i64, (nj / p) as i64);
        let mut best: Option<(f64, usize)> = None;
        let mut found_ring = None;
        for ring in 0..=(n as i64) {
            if let Some(fr) = found_ring {
                // Euclidean nearest lies within sqrt(2) times the first hit ring
                if ring as f64 > (fr as f64 + 1.0) * std::f64::consts::SQRT_2 + 1.0 {
                    break;
                }
            }
            for vj in (cj - ring)..=(cj + 1 + ring) {
                for vi in (ci - ring)..=(ci + 1 + ring) {
                    let on_ring = vi == ci - ring
                        || vi == ci + 1 + ring
                        || vj == cj - ring
                        || vj == cj + 1 + ring;
                    if !on_ring || vi < 0 || vj < 0 || vi > n as i64 || vj > n as i64 {
                        continue;
                    }
                    let k = cut_at_vertex[vj as usize * (n + 1) + vi as usize];
                    if k == NONE {
                        continue;
                    }
                    let v = geometry.mesh.vertex(vi as usize, vj as usize);
                    let d = (v[0] - x[0]).hypot(v[1] - x[1]);
                    let better = match best {
                        None => true,
                        Some((bd, bk)) => {
                            d < bd - 1e-12 * h || ((d - bd).abs() <= 1e-12 * h && k < bk)
                        }
                    };
                    if better {
                        best = Some((d, k));
                    }
                }
            }
            if best.is_some() && found_ring.is_none() {
                found_ring = Some(ring);
            }
        }
        let (_, k) = best.expect("a cut patch exists");
        geometry.patches[k].interior_dofs.push(dof);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Circle, SquareBox};

    fn unit_square(level: usize) -> ActiveGeometry {
        let bx = SquareBox::new([0.0, 0.0], [1.0, 1.0]).unwrap();
        ActiveGeometry::build(LevelMesh::new(bx, level), Domain::FittedSquare).unwrap()
    }

    fn circle(level: usize) -> ActiveGeometry {
        let bx = SquareBox::new([-1.21, -1.21], [1.21, 1.21]).unwrap();
        ActiveGeometry::build(
            LevelMesh::new(bx, level),
            Domain::Circle(Circle::new([0.0, 0.0], 1.0)),
        )
        .unwrap()
    }

    #[test]
    fn fitted_square_counts() {
        let g = unit_square(2);
        assert_eq!(distribute_dofs(&g, 1).unwrap().n_dofs, 81);
        assert_eq!(distribute_dofs(&g, 2).unwrap().n_dofs, 289);
        let d = distribute_dofs(&g, 3).unwrap();
        assert_eq!(d.n_dofs, 625);
        assert_eq!(d.n_constrained(), 4 * 24);
    }

    #[test]
    fn shared_nodes_have_one_index() {
        let g = circle(3);
        let d = distribute_dofs(&g, 2).unwrap();
        for (a, &ca) in g.active_cells.iter().enumerate() {
            let (i, j) = g.mesh.cell_ij(ca);
            if i + 1 < g.mesh.n {
                let right = g.active_index[g.mesh.cell_id(i + 1, j)];
                if right != NONE {
                    for b in 0..3 {
                        assert_eq!(d.cell_dofs(a)[b * 3 + 2], d.cell_dofs(right)[b * 3]);
                    }
                }
            }
        }
    }

    #[test]
    fn row_ranges_are_contiguous() {
        let g = circle(4);
        let d = distribute_dofs(&g, 3).unwrap();
        for dof in 0..d.n_dofs {
            let [_, j] = d.dof_node(dof);
            assert!(dof >= d.row_start()[j] && dof < d.row_start()[j + 1]);
        }
    }

    #[test]
    fn interior_patch_set_sizes() {
        for p in 1..=3 {
            let mut g = unit_square(3);
            let d = distribute_dofs(&g, p).unwrap();
            build_patch_index_sets(&d, &mut g).unwrap();
            for patch in &g.patches {
                assert_eq!(patch.interior_dofs.len(), (2 * p - 1).pow(2));
                assert_eq!(patch.extended_dofs.len(), (2 * p + 1).pow(2));
            }
        }
        let mut g = unit_square(3);
        let d = distribute_dofs(&g, 1).unwrap();
        build_patch_index_sets(&d, &mut g).unwrap();
        let p = &g.patches[10];
        assert_eq!(d.dof_node(p.interior_dofs[0]), p.vertex);
    }

    #[test]
    fn circle_patches_cover_all_dofs() {
        for p in 1..=3 {
            let mut g = circle(5);
            let d = distribute_dofs(&g, p).unwrap();
            build_patch_index_sets(&d, &mut g).unwrap();
            let mut count = vec![0usize; d.n_dofs];
            for patch in &g.patches {
                for &dof in &patch.interior_dofs {
                    count[dof] += 1;
                }
            }
            assert!(count.iter().all(|&c| c >= 1), "p={p}");
        }
    }

    #[test]
    fn uncoverable_dofs_are_structural_error() {
        let mut g = unit_square(2);
        let mut d = distribute_dofs(&g, 1).unwrap();
        d.constrained.iter_mut().for_each(|c| *c = false);
        assert!(matches!(
            build_patch_index_sets(&d, &mut g),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let g = circle(3);
        for p in 1..=3 {
            let d = distribute_dofs(&g, p).unwrap();
            let f = |x: [f64; 2]| {
                (0.3 + x[0]).powi(p as i32) * (1.0 - 0.5 * x[1]).powi(p as i32) + x[0] * x[1]
            };
            let u = d.interpolate(f);
            let mut k = 0;
            for &cell in g.active_cells.iter().step_by(3) {
                let (i, j) = g.mesh.cell_ij(cell);
                let o = g.mesh.cell_origin(i, j);
                for s in 0..4 {
                    let x = [
                        o[0] + g.mesh.h * (0.13 + 0.21 * s as f64),
                        o[1] + g.mesh.h * (0.77 - 0.17 * s as f64),
                    ];
                    let v = d.evaluate(&g, &u, x).unwrap();
                    assert!((v - f(x)).abs() < 1e-12, "p={p}");
                    k += 1;
                }
            }
            assert!(k > 0);
        }
    }

    #[test]
    fn exterior_points_evaluate_to_none() {
        let g = circle(3);
        let d = distribute_dofs(&g, 1).unwrap();
        let u = vec![1.0; d.n_dofs];
        assert!(d.evaluate(&g, &u, [1.2, 1.2]).is_none());
        assert!(d.evaluate(&g, &u, [5.0, 0.0]).is_none());
        assert_eq!(d.evaluate(&g, &u, [0.0, 0.0]), Some(1.0));
    }
}
