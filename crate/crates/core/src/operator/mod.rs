//! Matrix-free level operator: bulk Laplacian, Nitsche boundary terms on cut
//! cells and face ghost penalties, plus right-hand side assembly.

pub mod dense;
pub mod kernels;

use std::collections::{BTreeSet, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe_space::{build_patch_index_sets, distribute_dofs, DofHandler};
use crate::geometry::{ActiveGeometry, Axis, CellKind, Domain, LevelMesh};
use crate::parallel::StripSchedule;
use crate::quadrature::{cut_surface_rule, cut_volume_rule, tensor_gauss};
use kernels::{ghost_face_matrix, CutCellData, PointBasis, TensorKernel, MAX_CELL_DOFS};

const NONE: usize = usize::MAX;

/// Power of the face size in the order-`k` ghost penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GhostScaling {
    /// `h_F^{2k+1}`: the penalty fades like `h^2` relative to the stiffness.
    #[serde(rename = "2k+1")]
    TwoKPlusOne,
    /// `h_F^{2k-1}`: every order scales like the stiffness.
    #[default]
    #[serde(rename = "2k-1")]
    TwoKMinusOne,
}

impl GhostScaling {
    pub fn exponent(self, k: usize) -> i32 {
        match self {
            GhostScaling::TwoKPlusOne => 2 * k as i32 + 1,
            GhostScaling::TwoKMinusOne => 2 * k as i32 - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    /// Nitsche penalty, dimensionless.
    pub gamma_d: f64,
    /// Ghost coefficients `gamma_1 .. gamma_p`.
    pub gamma_ghost: Vec<f64>,
    #[serde(default)]
    pub ghost_scaling: GhostScaling,
}

impl OperatorParams {
    /// `gamma_D = 5 p (p + 1)`, `gamma_k = 0.08`.
    pub fn defaults(p: usize) -> Self {
        Self {
            gamma_d: 5.0 * (p * (p + 1)) as f64,
            gamma_ghost: vec![0.08; p],
            ghost_scaling: GhostScaling::default(),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.gamma_d > 0.0) {
            return Err(Error::Config(format!(
                "gamma_D must be positive, got {}",
                self.gamma_d
            )));
        }
        if self.gamma_ghost.len() != p {
            return Err(Error::Config(format!(
                "expected {p} ghost coefficients, got {}",
                self.gamma_ghost.len()
            )));
        }
        if let Some(g) = self.gamma_ghost.iter().find(|g| !(**g >= 0.0)) {
            return Err(Error::Config(format!(
                "ghost coefficient must be nonnegative, got {g}"
            )));
        }
        Ok(())
    }

    /// Physical weight `gamma_k h^e / (k!)^2` of the order-`k` jump term.
    pub fn ghost_weight(&self, k: usize, h: f64) -> f64 {
        let fact: f64 = (1..=k).map(|v| v as f64).product();
        self.gamma_ghost[k - 1] * h.powi(self.ghost_scaling.exponent(k)) / (fact * fact)
    }
}

/// Cells and ghost faces whose contributions one (partial) apply visits.
#[derive(Debug, Clone, Default)]
pub struct ApplySchedule {
    pub cells: StripSchedule,
    pub faces: StripSchedule,
}

#[derive(Debug, Clone)]
pub struct LevelOperator {
    pub geometry: ActiveGeometry,
    pub dofs: DofHandler,
    pub params: OperatorParams,
    tensor: TensorKernel,
    inside_matrix: Vec<f64>,
    /// Active cell -> slot in `cut_data`.
    cut_slot: Vec<usize>,
    cut_data: Vec<CutCellData>,
    /// Active indices of the two cells of each ghost face.
    face_cells: Vec<[usize; 2]>,
    face_x: Vec<f64>,
    face_y: Vec<f64>,
    cell_faces: HashMap<usize, Vec<usize>>,
    constrained_list: Vec<usize>,
    full: ApplySchedule,
}

impl LevelOperator {
    /// Geometry, DoFs, patch index sets and operator data of one level.
    pub fn build(
        mesh: LevelMesh,
        domain: Domain,
        p: usize,
        params: OperatorParams,
    ) -> Result<Self> {
        let mut geometry = ActiveGeometry::build(mesh, domain)?;
        let dofs = distribute_dofs(&geometry, p)?;
        build_patch_index_sets(&dofs, &mut geometry)?;
        Self::new(geometry, dofs, params)
    }

    pub fn new(geometry: ActiveGeometry, dofs: DofHandler, params: OperatorParams) -> Result<Self> {
        let p = dofs.degree;
        params.validate(p)?;
        let mesh = geometry.mesh;
        let h = mesh.h;
        let tensor = TensorKernel::new(p)?;
        let inside_matrix = tensor.element_matrix();

        let mut cut_slot = vec![NONE; geometry.active_cells.len()];
        let mut cut_data = Vec::new();
        if let Some(circle) = geometry.domain.circle() {
            let basis = PointBasis::new(dofs.nodes_1d());
            let k = (p + 1) * (p + 1);
            let mut vals = vec![0.0; k];
            let mut grads = vec![[0.0; 2]; k];
            for &cell in &geometry.cut_cells {
                let (i, j) = mesh.cell_ij(cell);
                let bounds = mesh.cell_bounds(i, j);
                let vol = cut_volume_rule(&bounds, circle, p + 1)?;
                let surf = cut_surface_rule(&bounds, circle, p + 1);
                let mut data = CutCellData {
                    n_basis: k,
                    penalty: params.gamma_d / h,
                    ..Default::default()
                };
                for (x, &w) in vol.points.iter().zip(&vol.weights) {
                    let (xi, eta) = ((x[0] - bounds.lower[0]) / h, (x[1] - bounds.lower[1]) / h);
                    basis.eval(xi, eta, &mut vals, &mut grads);
                    data.vol_weights.push(w);
                    data.vol_grad
                        .extend(grads.iter().map(|g| [g[0] / h, g[1] / h]));
                }
                let normals = surf.normals.as_deref().unwrap_or(&[]);
                for ((x, &w), nrm) in surf.points.iter().zip(&surf.weights).zip(normals) {
                    let (xi, eta) = ((x[0] - bounds.lower[0]) / h, (x[1] - bounds.lower[1]) / h);
                    basis.eval(xi, eta, &mut vals, &mut grads);
                    data.surf_weights.push(w);
                    data.surf_values.extend_from_slice(&vals);
                    data.surf_normal_derivs
                        .extend(grads.iter().map(|g| (g[0] * nrm[0] + g[1] * nrm[1]) / h));
                }
                cut_slot[geometry.active_index[cell]] = cut_data.len();
                cut_data.push(data);
            }
        }

        // reference-coordinate factor: h^{-2k} from derivatives, h from the face measure
        let scales: Vec<f64> = (1..=p)
            .map(|k| params.ghost_weight(k, h) * h.powi(1 - 2 * k as i32))
            .collect();
        let face_x = ghost_face_matrix(p, true, &scales)?;
        let face_y = ghost_face_matrix(p, false, &scales)?;
        let face_cells: Vec<[usize; 2]> = geometry
            .ghost_faces
            .iter()
            .map(|f| {
                [
                    geometry.active_index[f.first],
                    geometry.active_index[f.second],
                ]
            })
            .collect();
        let mut cell_faces: HashMap<usize, Vec<usize>> = HashMap::new();
        for (fi, cells) in face_cells.iter().enumerate() {
            for &c in cells {
                cell_faces.entry(c).or_default().push(fi);
            }
        }
        let constrained_list = (0..dofs.n_dofs).filter(|&d| dofs.constrained[d]).collect();
        let mut op = Self {
            geometry,
            dofs,
            params,
            tensor,
            inside_matrix,
            cut_slot,
            cut_data,
            face_cells,
            face_x,
            face_y,
            cell_faces,
            constrained_list,
            full: ApplySchedule::default(),
        };
        op.full = op.schedule_for_cells(0..op.geometry.active_cells.len());
        Ok(op)
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs
    }

    pub fn degree(&self) -> usize {
        self.dofs.degree
    }

    pub fn h(&self) -> f64 {
        self.geometry.mesh.h
    }

    pub fn full_schedule(&self) -> &ApplySchedule {
        &self.full
    }

    /// Element matrix shared by all uncut cells, row-major, x-fastest local order.
    pub fn inside_element_matrix(&self) -> &[f64] {
        &self.inside_matrix
    }

    /// Element matrix of an active cell including Nitsche terms on cut cells.
    pub fn element_matrix(&self, active: usize) -> Vec<f64> {
        match self.cut_slot[active] {
            NONE => self.inside_matrix.clone(),
            slot => self.cut_data[slot].element_matrix(),
        }
    }

    /// Ghost-face matrix in the order (first cell DoFs, second cell DoFs).
    pub fn face_matrix(&self, face: usize) -> &[f64] {
        match self.geometry.ghost_faces[face].normal {
            Axis::X => &self.face_x,
            Axis::Y => &self.face_y,
        }
    }

    /// Visits the given active cells and every ghost face touching one of them.
    pub fn schedule_for_cells(&self, cells: impl IntoIterator<Item = usize>) -> ApplySchedule {
        let mesh = &self.geometry.mesh;
        let p = self.dofs.degree;
        let last = self.dofs.lattice - 1;
        let mut face_set = BTreeSet::new();
        let mut keyed = Vec::new();
        for a in cells {
            let (_, j) = mesh.cell_ij(self.geometry.active_cells[a]);
            keyed.push((j, a));
            if let Some(fs) = self.cell_faces.get(&a) {
                face_set.extend(fs.iter().copied());
            }
        }
        keyed.sort_unstable();
        keyed.dedup();
        let faces = face_set
            .into_iter()
            .map(|f| (mesh.cell_ij(self.geometry.ghost_faces[f].first).1, f));
        ApplySchedule {
            cells: StripSchedule::from_rows(keyed, p, p, last, 2),
            faces: StripSchedule::from_rows(faces, p, 2 * p, last, 3),
        }
    }

    /// Active cells containing at least one of `dofs`.
    pub fn cells_touching(&self, dofs: &[usize]) -> BTreeSet<usize> {
        let p = self.dofs.degree;
        let n = self.geometry.mesh.n;
        let cand = |k: usize| -> [Option<usize>; 2] {
            if k % p == 0 {
                [(k > 0).then(|| k / p - 1), (k / p < n).then_some(k / p)]
            } else {
                [Some(k / p), None]
            }
        };
        let mut out = BTreeSet::new();
        for &d in dofs {
            let [i, j] = self.dofs.dof_node(d);
            for ci in cand(i).into_iter().flatten() {
                for cj in cand(j).into_iter().flatten() {
                    let a = self.geometry.active_index[self.geometry.mesh.cell_id(ci, cj)];
                    if a != NONE {
                        out.insert(a);
                    }
                }
            }
        }
        out
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dofs.n_dofs {
            return Err(Error::DimensionMismatch {
                expected: self.dofs.n_dofs,
                got: len,
            });
        }
        Ok(())
    }

    #[inline]
    fn gather(&self, dofs: &[usize], x: &[f64], u: &mut [f64], mask: bool) {
        for (ui, &d) in u.iter_mut().zip(dofs) {
            *ui = if mask && self.dofs.constrained[d] {
                0.0
            } else {
                x[d]
            };
        }
    }

    #[inline]
    fn scatter(&self, dofs: &[usize], v: &[f64], ys: &mut [f64], offset: usize, mask: bool) {
        for (&vi, &d) in v.iter().zip(dofs) {
            if !(mask && self.dofs.constrained[d]) {
                ys[d - offset] += vi;
            }
        }
    }

    /// Accumulates contributions of the scheduled cells and faces into `y`.
    fn accumulate(
        &self,
        x: &[f64],
        y: &mut [f64],
        sched: &ApplySchedule,
        bulk: bool,
        ghost: bool,
        mask: bool,
    ) {
        let k = self.dofs.dofs_per_cell();
        let mask = mask && !self.constrained_list.is_empty();
        let rows = self.dofs.row_start();
        if bulk {
            sched.cells.run(y, rows, |items, ys, offset| {
                let mut u = [0.0; MAX_CELL_DOFS];
                let mut v = [0.0; MAX_CELL_DOFS];
                for &a in items {
                    let dofs = self.dofs.cell_dofs(a);
                    self.gather(dofs, x, &mut u[..k], mask);
                    v[..k].fill(0.0);
                    match self.cut_slot[a] {
                        NONE => self.tensor.apply_laplace(&u[..k], &mut v[..k]),
                        slot => self.cut_data[slot].apply(&u[..k], &mut v[..k]),
                    }
                    self.scatter(dofs, &v[..k], ys, offset, mask);
                }
            });
        }
        if ghost {
            sched.faces.run(y, rows, |items, ys, offset| {
                let mut u = [0.0; 2 * MAX_CELL_DOFS];
                let mut v = [0.0; 2 * MAX_CELL_DOFS];
                for &f in items {
                    let [c0, c1] = self.face_cells[f];
                    let (d0, d1) = (self.dofs.cell_dofs(c0), self.dofs.cell_dofs(c1));
                    self.gather(d0, x, &mut u[..k], mask);
                    self.gather(d1, x, &mut u[k..2 * k], mask);
                    let m = self.face_matrix(f);
                    for (i, vi) in v[..2 * k].iter_mut().enumerate() {
                        let row = &m[i * 2 * k..(i + 1) * 2 * k];
                        *vi = row.iter().zip(&u[..2 * k]).map(|(a, b)| a * b).sum();
                    }
                    self.scatter(d0, &v[..k], ys, offset, mask);
                    self.scatter(d1, &v[k..2 * k], ys, offset, mask);
                }
            });
        }
    }

    fn fix_constrained(&self, x: &[f64], y: &mut [f64]) {
        for &c in &self.constrained_list {
            y[c] = x[c];
        }
    }

    /// `y = A x`. Strongly constrained DoFs act as identity rows and columns.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        self.check_len(y.len())?;
        y.fill(0.0);
        self.accumulate(x, y, &self.full, true, true, true);
        self.fix_constrained(x, y);
        Ok(())
    }

    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n_dofs()];
        self.apply(x, &mut y)?;
        Ok(y)
    }

    /// `(A x)_i` for every DoF `i` whose cells are all in `sched`; other
    /// entries of `y` touched by the schedule hold partial sums.
    pub fn apply_partial(&self, x: &[f64], y: &mut [f64], sched: &ApplySchedule) {
        let rows = self.dofs.row_start();
        sched.cells.zero_rows(y, rows);
        sched.faces.zero_rows(y, rows);
        self.accumulate(x, y, sched, true, true, true);
        self.fix_constrained(x, y);
    }

    /// Only the ghost penalty part `g(x, .)`.
    pub fn ghost_penalty_apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        self.check_len(y.len())?;
        y.fill(0.0);
        self.accumulate(x, y, &self.full, false, true, false);
        Ok(())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let k = self.dofs.dofs_per_cell();
        let mut diag = vec![0.0; self.n_dofs()];
        for a in 0..self.geometry.active_cells.len() {
            let m = match self.cut_slot[a] {
                NONE => std::borrow::Cow::Borrowed(&self.inside_matrix),
                slot => std::borrow::Cow::Owned(self.cut_data[slot].element_matrix()),
            };
            for (l, &d) in self.dofs.cell_dofs(a).iter().enumerate() {
                diag[d] += m[l * k + l];
            }
        }
        let mut dofs = vec![0; 2 * k];
        for (f, [c0, c1]) in self.face_cells.iter().enumerate() {
            dofs[..k].copy_from_slice(self.dofs.cell_dofs(*c0));
            dofs[k..].copy_from_slice(self.dofs.cell_dofs(*c1));
            let m = self.face_matrix(f);
            for l1 in 0..2 * k {
                for l2 in 0..2 * k {
                    if dofs[l1] == dofs[l2] {
                        diag[dofs[l1]] += m[l1 * 2 * k + l2];
                    }
                }
            }
        }
        for &c in &self.constrained_list {
            diag[c] = 1.0;
        }
        diag
    }

    /// Rows and columns `indices` of the level matrix, assembled from the
    /// element and face matrices touching them.
    pub fn local_matrix(&self, indices: &[usize]) -> DMatrix<f64> {
        let n = indices.len();
        let pos: HashMap<usize, usize> = indices.iter().enumerate().map(|(l, &d)| (d, l)).collect();
        let mut a = DMatrix::zeros(n, n);
        let k = self.dofs.dofs_per_cell();
        let cells = self.cells_touching(indices);
        let mut add = |dofs: &[usize], m: &[f64]| {
            let w = dofs.len();
            for (l1, d1) in dofs.iter().enumerate() {
                let Some(&r) = pos.get(d1) else { continue };
                if self.dofs.constrained[*d1] {
                    continue;
                }
                for (l2, d2) in dofs.iter().enumerate() {
                    if let Some(&c) = pos.get(d2) {
                        if !self.dofs.constrained[*d2] {
                            a[(r, c)] += m[l1 * w + l2];
                        }
                    }
                }
            }
        };
        let mut faces = BTreeSet::new();
        for &c in &cells {
            add(self.dofs.cell_dofs(c), &self.element_matrix(c));
            if let Some(fs) = self.cell_faces.get(&c) {
                faces.extend(fs.iter().copied());
            }
        }
        let mut dofs = vec![0; 2 * k];
        for f in faces {
            let [c0, c1] = self.face_cells[f];
            dofs[..k].copy_from_slice(self.dofs.cell_dofs(c0));
            dofs[k..].copy_from_slice(self.dofs.cell_dofs(c1));
            add(&dofs, self.face_matrix(f));
        }
        for (l, &d) in indices.iter().enumerate() {
            if self.dofs.constrained[d] {
                a[(l, l)] = 1.0;
            }
        }
        a
    }

    /// `b_i = (f, phi_i) - (g, d_n phi_i)_Gamma + (gamma_D / h)(g, phi_i)_Gamma` on
    /// the circle; on the fitted square `g` is imposed strongly and lifted.
    pub fn assemble_rhs(
        &self,
        f: impl Fn([f64; 2]) -> f64,
        g: impl Fn([f64; 2]) -> f64,
    ) -> Result<Vec<f64>> {
        let p = self.dofs.degree;
        let k = self.dofs.dofs_per_cell();
        let mesh = &self.geometry.mesh;
        let h = mesh.h;
        let basis = PointBasis::new(self.dofs.nodes_1d());
        let mut vals = vec![0.0; k];
        let mut grads = vec![[0.0; 2]; k];
        let mut b = vec![0.0; self.n_dofs()];
        let circle = self.geometry.domain.circle();
        for (a, &cell) in self.geometry.active_cells.iter().enumerate() {
            let (i, j) = mesh.cell_ij(cell);
            let bounds = mesh.cell_bounds(i, j);
            let dofs = self.dofs.cell_dofs(a);
            let rule = match (self.geometry.kinds[cell], circle) {
                (CellKind::Cut, Some(c)) => cut_volume_rule(&bounds, c, p + 2)?,
                _ => tensor_gauss(&bounds, p + 2),
            };
            for (x, &w) in rule.points.iter().zip(&rule.weights) {
                basis.eval(
                    (x[0] - bounds.lower[0]) / h,
                    (x[1] - bounds.lower[1]) / h,
                    &mut vals,
                    &mut grads,
                );
                let fw = f(*x) * w;
                for (l, &d) in dofs.iter().enumerate() {
                    b[d] += fw * vals[l];
                }
            }
            if let (CellKind::Cut, Some(c)) = (self.geometry.kinds[cell], circle) {
                let surf = cut_surface_rule(&bounds, c, p + 2);
                let normals = surf.normals.as_deref().unwrap_or(&[]);
                for ((x, &w), nrm) in surf.points.iter().zip(&surf.weights).zip(normals) {
                    basis.eval(
                        (x[0] - bounds.lower[0]) / h,
                        (x[1] - bounds.lower[1]) / h,
                        &mut vals,
                        &mut grads,
                    );
                    let gw = g(*x) * w;
                    for (l, &d) in dofs.iter().enumerate() {
                        let dn = (grads[l][0] * nrm[0] + grads[l][1] * nrm[1]) / h;
                        b[d] += gw * (self.params.gamma_d / h * vals[l] - dn);
                    }
                }
            }
        }
        if !self.constrained_list.is_empty() {
            let mut lift = vec![0.0; self.n_dofs()];
            for &c in &self.constrained_list {
                lift[c] = g(self.dofs.dof_coordinate(c));
            }
            let mut y = vec![0.0; self.n_dofs()];
            self.accumulate(&lift, &mut y, &self.full, true, true, false);
            for (bi, yi) in b.iter_mut().zip(&y) {
                *bi -= yi;
            }
            for &c in &self.constrained_list {
                b[c] = lift[c];
            }
        }
        Ok(b)
    }

    /// `||u_h - u||_{L2(Omega)}` with `p + 3` points per direction.
    pub fn l2_error(&self, x: &[f64], exact: impl Fn([f64; 2]) -> f64) -> Result<f64> {
        if x.len() != self.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_dofs(),
                got: x.len(),
            });
        }
        let p = self.dofs.degree;
        let k = self.dofs.dofs_per_cell();
        let mesh = &self.geometry.mesh;
        let h = mesh.h;
        let basis = PointBasis::new(self.dofs.nodes_1d());
        let mut vals = vec![0.0; k];
        let mut grads = vec![[0.0; 2]; k];
        let circle = self.geometry.domain.circle();
        let mut acc = 0.0;
        for (a, &cell) in self.geometry.active_cells.iter().enumerate() {
            let (i, j) = mesh.cell_ij(cell);
            let bounds = mesh.cell_bounds(i, j);
            let dofs = self.dofs.cell_dofs(a);
            let rule = match (self.geometry.kinds[cell], circle) {
                (CellKind::Cut, Some(c)) => cut_volume_rule(&bounds, c, p + 3)?,
                _ => tensor_gauss(&bounds, p + 3),
            };
            for (pt, &w) in rule.points.iter().zip(&rule.weights) {
                basis.eval(
                    (pt[0] - bounds.lower[0]) / h,
                    (pt[1] - bounds.lower[1]) / h,
                    &mut vals,
                    &mut grads,
                );
                let uh: f64 = dofs.iter().zip(&vals).map(|(&d, v)| x[d] * v).sum();
                let e = uh - exact(*pt);
                acc += w * e * e;
            }
        }
        Ok(acc.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Circle, MeshHierarchy, SquareBox};
    use crate::quadrature::cut_surface_rule;

    fn level(domain: Domain, level: usize, p: usize) -> LevelOperator {
        let b = SquareBox::new([-1.21, -1.21], [1.21, 1.21]).unwrap();
        let mesh = MeshHierarchy::new(b, level).unwrap().level(level);
        LevelOperator::build(mesh, domain, p, OperatorParams::defaults(p)).unwrap()
    }

    fn circle() -> Domain {
        Domain::Circle(Circle::new([0.0, 0.0], 1.0))
    }

    #[test]
    fn zero_in_zero_out() {
        let op = level(circle(), 3, 2);
        let y = op.apply_vec(&vec![0.0; op.n_dofs()]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(matches!(
            op.apply_vec(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constant_sees_only_boundary_terms() {
        // u = 1 kills the bulk and ghost terms; what is left is
        // int_Gamma (gamma_D / h) phi_i - d_n phi_i, here with phi_i evaluated
        // through the nodal interpolant and d_n by central differences
        for p in 1..=3 {
            let op = level(circle(), 3, p);
            let y = op.apply_vec(&vec![1.0; op.n_dofs()]).unwrap();
            let mut expect = vec![0.0; op.n_dofs()];
            let mesh = op.geometry.mesh;
            let c = Circle::new([0.0, 0.0], 1.0);
            let step = 1e-5 * op.h();
            let penalty = op.params.gamma_d / op.h();
            for &cell in &op.geometry.cut_cells {
                let (i, j) = mesh.cell_ij(cell);
                let bounds = mesh.cell_bounds(i, j);
                let rule = cut_surface_rule(&bounds, &c, p + 1);
                let a = op.geometry.active_index[cell];
                for &d in op.dofs.cell_dofs(a) {
                    let mut e = vec![0.0; op.n_dofs()];
                    e[d] = 1.0;
                    let normals = rule.normals.as_ref().unwrap();
                    for ((x, w), nrm) in rule.points.iter().zip(&rule.weights).zip(normals) {
                        let inner = |t: f64| {
                            [
                                (x[0] + t * nrm[0])
                                    .clamp(bounds.lower[0] + 1e-13, bounds.upper[0] - 1e-13),
                                (x[1] + t * nrm[1])
                                    .clamp(bounds.lower[1] + 1e-13, bounds.upper[1] - 1e-13),
                            ]
                        };
                        // keep both stencil points inside the owning cell
                        let xc = [
                            x[0].clamp(bounds.lower[0] + 2.0 * step, bounds.upper[0] - 2.0 * step),
                            x[1].clamp(bounds.lower[1] + 2.0 * step, bounds.upper[1] - 2.0 * step),
                        ];
                        let at = |z: [f64; 2]| op.dofs.evaluate(&op.geometry, &e, z).unwrap();
                        let dn = (at([xc[0] + step * nrm[0], xc[1] + step * nrm[1]])
                            - at([xc[0] - step * nrm[0], xc[1] - step * nrm[1]]))
                            / (2.0 * step);
                        expect[d] += w * (penalty * at(inner(0.0)) - dn);
                    }
                }
            }
            let scale = expect.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-7 * scale, "p={p}: {a} vs {b}");
            }
            // partition of unity: the normal-derivative terms cancel in the sum
            let arc: f64 = op
                .geometry
                .cut_cells
                .iter()
                .map(|&cell| {
                    let (i, j) = mesh.cell_ij(cell);
                    cut_surface_rule(&mesh.cell_bounds(i, j), &c, p + 1).weight_sum()
                })
                .sum();
            let total: f64 = y.iter().sum();
            assert!((total - penalty * arc).abs() < 1e-10 * penalty * arc);
        }
    }

    #[test]
    fn fitted_center_diagonal_is_eight_thirds() {
        let op = level(Domain::FittedSquare, 1, 1);
        assert_eq!(op.n_dofs(), 25);
        let center = op.dofs.node_dof(2, 2).unwrap();
        let diag = op.diagonal();
        assert!((diag[center] - 8.0 / 3.0).abs() < 1e-14);
        let m = op.local_matrix(&[center]);
        assert!((m[(0, 0)] - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_matches_unit_vector_applies() {
        let op = level(circle(), 3, 2);
        let diag = op.diagonal();
        for d in (0..op.n_dofs()).step_by(7) {
            let mut e = vec![0.0; op.n_dofs()];
            e[d] = 1.0;
            let y = op.apply_vec(&e).unwrap();
            assert!((y[d] - diag[d]).abs() < 1e-12 * diag[d].abs().max(1.0));
        }
    }

    #[test]
    fn local_matrix_matches_unit_vector_applies() {
        let op = level(circle(), 3, 2);
        let patch = op
            .geometry
            .patches
            .iter()
            .find(|p| p.kind == crate::geometry::PatchKind::Cut)
            .unwrap();
        let idx = &patch.interior_dofs;
        let m = op.local_matrix(idx);
        for (c, &dc) in idx.iter().enumerate() {
            let mut e = vec![0.0; op.n_dofs()];
            e[dc] = 1.0;
            let y = op.apply_vec(&e).unwrap();
            for (r, &dr) in idx.iter().enumerate() {
                assert!((m[(r, c)] - y[dr]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn partial_apply_is_exact_inside_the_schedule() {
        let op = level(circle(), 4, 2);
        let x: Vec<f64> = (0..op.n_dofs())
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let full = op.apply_vec(&x).unwrap();
        let patch = op
            .geometry
            .patches
            .iter()
            .rev()
            .find(|p| p.kind == crate::geometry::PatchKind::Cut)
            .unwrap();
        let cells = op.cells_touching(&patch.extended_dofs);
        let sched = op.schedule_for_cells(cells);
        let mut y = vec![f64::NAN; op.n_dofs()];
        op.apply_partial(&x, &mut y, &sched);
        for &d in &patch.extended_dofs {
            assert!((y[d] - full[d]).abs() < 1e-12 * full[d].abs().max(1.0));
        }
    }

    #[test]
    fn fitted_rhs_of_linear_solution_is_exact() {
        // u = 1 + x - 2y is in every Q_p space; f = 0 and strong data g = u
        for p in 1..=2 {
            let op = level(Domain::FittedSquare, 2, p);
            let u = |x: [f64; 2]| 1.0 + x[0] - 2.0 * x[1];
            let b = op.assemble_rhs(|_| 0.0, u).unwrap();
            let ui = op.dofs.interpolate(u);
            let au = op.apply_vec(&ui).unwrap();
            for (a, bb) in au.iter().zip(&b) {
                assert!((a - bb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rhs_of_unit_source_sums_to_area() {
        let op = level(circle(), 4, 2);
        let b = op.assemble_rhs(|_| 1.0, |_| 0.0).unwrap();
        let s: f64 = b.iter().sum();
        assert!((s - std::f64::consts::PI).abs() < 1e-6, "{s}");
    }

    #[test]
    fn params_validation() {
        let mut prm = OperatorParams::defaults(2);
        assert!(prm.validate(2).is_ok());
        assert!(prm.validate(3).is_err());
        prm.gamma_d = 0.0;
        assert!(prm.validate(2).is_err());
        let mut prm = OperatorParams::defaults(1);
        prm.gamma_ghost[0] = -1.0;
        assert!(prm.validate(1).is_err());
        assert_eq!(GhostScaling::TwoKPlusOne.exponent(2), 5);
        assert_eq!(GhostScaling::TwoKMinusOne.exponent(1), 1);
    }
}
