//! Multiplicative vertex-patch smoother: fast diagonalization on uncut
//! patches, dense pseudo-inverses on cut patches.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fe_space::build_shape_table;
use crate::geometry::PatchKind;
use crate::operator::{ApplySchedule, LevelOperator};
use crate::quadrature::gauss_legendre;

/// Relative singular value threshold for cut-patch pseudo-inverses.
pub const RANK_THRESHOLD: f64 = 1e-12;

/// Separable inverse of the Laplacian on the `(2p-1)^2` interior nodes of an
/// uncut 2x2 patch: `A = M (x) K + K (x) M` with `V^T M V = I`, `V^T K V = Lambda`.
#[derive(Debug, Clone)]
pub struct FastDiagonalization {
    pub m: usize,
    /// `v[i * m + j]`: component `i` of eigenvector `j`.
    v: Vec<f64>,
    lambda: Vec<f64>,
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
}

impl FastDiagonalization {
    pub fn new(p: usize) -> Result<Self> {
        let (pts, w) = gauss_legendre(p + 1);
        let tab = build_shape_table(p, &pts, 1)?;
        let n1 = p + 1;
        let mut me = DMatrix::<f64>::zeros(n1, n1);
        let mut ke = DMatrix::<f64>::zeros(n1, n1);
        for (q, &wq) in w.iter().enumerate() {
            for a in 0..n1 {
                for b in 0..n1 {
                    me[(a, b)] += wq * tab.get(0, q, a) * tab.get(0, q, b);
                    ke[(a, b)] += wq * tab.get(1, q, a) * tab.get(1, q, b);
                }
            }
        }
        // two cells, nodes 0..=2p, keep 1..2p
        let full = 2 * p + 1;
        let mut mf = DMatrix::<f64>::zeros(full, full);
        let mut kf = DMatrix::<f64>::zeros(full, full);
        for c in 0..2 {
            for a in 0..n1 {
                for b in 0..n1 {
                    mf[(c * p + a, c * p + b)] += me[(a, b)];
                    kf[(c * p + a, c * p + b)] += ke[(a, b)];
                }
            }
        }
        let m = 2 * p - 1;
        let mass = mf.view((1, 1), (m, m)).into_owned();
        let stiffness = kf.view((1, 1), (m, m)).into_owned();
        let chol = mass.clone().cholesky().ok_or_else(|| {
            Error::Structural("patch mass matrix is not positive definite".into())
        })?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Structural("singular Cholesky factor".into()))?;
        let c = &linv * &stiffness * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let vmat = linv.transpose() * &eig.eigenvectors;
        let mut v = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                v[i * m + j] = vmat[(i, j)];
            }
        }
        Ok(Self {
            m,
            v,
            lambda: eig.eigenvalues.iter().copied().collect(),
            mass,
            stiffness,
        })
    }

    /// `z = A^{-1} r` for `r` in x-fastest order on the `m x m` lattice.
    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        let m = self.m;
        let v = &self.v;
        let mut t = [0.0; 25];
        let mut s = [0.0; 25];
        // t = V^T R V, with R[b][a]
        for b in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for a in 0..m {
                    acc += r[b * m + a] * v[a * m + j];
                }
                s[b * m + j] = acc;
            }
        }
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for b in 0..m {
                    acc += v[b * m + i] * s[b * m + j];
                }
                t[i * m + j] = acc / (self.lambda[i] + self.lambda[j]);
            }
        }
        // z = V T V^T
        for i in 0..m {
            for a in 0..m {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += t[i * m + j] * v[a * m + j];
                }
                s[i * m + a] = acc;
            }
        }
        for b in 0..m {
            for a in 0..m {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += v[b * m + i] * s[i * m + a];
                }
                z[b * m + a] = acc;
            }
        }
    }

    /// The Cartesian local matrix the solver inverts.
    pub fn local_matrix(&self) -> DMatrix<f64> {
        let m = self.m;
        DMatrix::from_fn(m * m, m * m, |r, c| {
            let (rb, ra, cb, ca) = (r / m, r % m, c / m, c % m);
            self.mass[(rb, cb)] * self.stiffness[(ra, ca)]
                + self.stiffness[(rb, cb)] * self.mass[(ra, ca)]
        })
    }
}

/// Pseudo-inverse of one cut-patch matrix.
#[derive(Debug, Clone)]
pub struct CutPatchSolver {
    pub inverse: DMatrix<f64>,
    /// Singular values dropped by the rank threshold.
    pub truncated: usize,
}

impl CutPatchSolver {
    pub fn new(a: DMatrix<f64>) -> Self {
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let cut = RANK_THRESHOLD * smax;
        let truncated = svd.singular_values.iter().filter(|&&s| s <= cut).count();
        let inverse = svd.pseudo_inverse(cut).expect("both factors were computed");
        Self { inverse, truncated }
    }
}

#[derive(Debug, Clone)]
pub struct PatchSolverBank {
    pub n_c: usize,
    pub fast_diag: FastDiagonalization,
    /// Patch index -> slot in `cut_solvers`.
    cut_slot: Vec<usize>,
    pub cut_solvers: Vec<CutPatchSolver>,
    interior_schedules: Vec<ApplySchedule>,
    cut_schedules: Vec<ApplySchedule>,
}

impl PatchSolverBank {
    pub fn new(op: &LevelOperator, n_c: usize) -> Result<Self> {
        if n_c == 0 {
            return Err(Error::Config("n_c must be at least 1".into()));
        }
        let fast_diag = FastDiagonalization::new(op.degree())?;
        let g = &op.geometry;
        let mut cut_slot = vec![usize::MAX; g.patches.len()];
        let cut_indices: Vec<usize> = g
            .patches
            .iter()
            .enumerate()
            .filter(|(_, p)| p.kind == PatchKind::Cut)
            .map(|(k, _)| k)
            .collect();
        let build = |k: usize| CutPatchSolver::new(op.local_matrix(&g.patches[k].interior_dofs));
        let cut_solvers: Vec<CutPatchSolver> = if rayon::current_num_threads() > 1 {
            cut_indices.par_iter().map(|&k| build(k)).collect()
        } else {
            cut_indices.iter().map(|&k| build(k)).collect()
        };
        for (slot, &k) in cut_indices.iter().enumerate() {
            cut_slot[k] = slot;
        }
        let interior_schedules = g
            .interior_colors
            .iter()
            .map(|color| {
                op.schedule_for_cells(
                    color
                        .iter()
                        .flat_map(|&k| g.patches[k].cells.map(|c| g.active_index[c])),
                )
            })
            .collect();
        let cut_schedules = g
            .cut_colors
            .iter()
            .map(|color| {
                let dofs: Vec<usize> = color
                    .iter()
                    .flat_map(|&k| g.patches[k].interior_dofs.iter().copied())
                    .collect();
                op.schedule_for_cells(op.cells_touching(&dofs))
            })
            .collect();
        Ok(Self {
            n_c,
            fast_diag,
            cut_slot,
            cut_solvers,
            interior_schedules,
            cut_schedules,
        })
    }

    pub fn n_truncated(&self) -> usize {
        self.cut_solvers.iter().map(|s| s.truncated).sum()
    }

    /// Local correction `Q^T A_j^{-1} Q r` of one patch from a residual snapshot.
    fn local_update(&self, op: &LevelOperator, patch: usize, r: &[f64]) -> Vec<f64> {
        let dofs = &op.geometry.patches[patch].interior_dofs;
        match self.cut_slot[patch] {
            usize::MAX => {
                let m2 = self.fast_diag.m * self.fast_diag.m;
                let mut rl = [0.0; 25];
                for (l, &d) in dofs.iter().enumerate() {
                    rl[l] = r[d];
                }
                let mut z = vec![0.0; m2];
                self.fast_diag.solve(&rl[..m2], &mut z);
                z
            }
            slot => {
                let inv = &self.cut_solvers[slot].inverse;
                let n = dofs.len();
                let mut z = vec![0.0; n];
                for (c, &d) in dofs.iter().enumerate() {
                    let rc = r[d];
                    if rc != 0.0 {
                        for (zr, a) in z.iter_mut().zip(inv.column(c).iter()) {
                            *zr += a * rc;
                        }
                    }
                }
                z
            }
        }
    }

    /// One color: snapshot residual on the color's patches, then all local corrections.
    fn sweep_color(
        &self,
        op: &LevelOperator,
        color: &[usize],
        sched: &ApplySchedule,
        x: &mut [f64],
        b: &[f64],
        ax: &mut [f64],
    ) {
        if color.is_empty() {
            return;
        }
        op.apply_partial(x, ax, sched);
        for &k in color {
            for &d in &op.geometry.patches[k].interior_dofs {
                ax[d] = b[d] - ax[d];
            }
        }
        let r: &[f64] = ax;
        let updates: Vec<Vec<f64>> = if rayon::current_num_threads() > 1 {
            color
                .par_iter()
                .map(|&k| self.local_update(op, k, r))
                .collect()
        } else {
            color.iter().map(|&k| self.local_update(op, k, r)).collect()
        };
        for (&k, z) in color.iter().zip(&updates) {
            for (&d, zi) in op.geometry.patches[k].interior_dofs.iter().zip(z) {
                x[d] += zi;
            }
        }
    }

    /// One smoothing step: interior colors once, then cut colors `n_c` times.
    /// `work` has length `n_dofs`.
    pub fn mvs_step(&self, op: &LevelOperator, x: &mut [f64], b: &[f64], work: &mut [f64]) {
        let g = &op.geometry;
        for (color, sched) in g.interior_colors.iter().zip(&self.interior_schedules) {
            self.sweep_color(op, color, sched, x, b, work);
        }
        for _ in 0..self.n_c {
            for (color, sched) in g.cut_colors.iter().zip(&self.cut_schedules) {
                self.sweep_color(op, color, sched, x, b, work);
            }
        }
    }
}
