//! Prolongation by finite element embedding and restriction as its exact transpose.
//!
//! Every fine DoF reads its value from one owner cell: the first active fine
//! cell containing it. Since the coarse function is continuous the choice does
//! not change the result, and a single owner makes the transpose exact.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fe_space::shape::lagrange_basis;
use crate::fe_space::DofHandler;
use crate::geometry::{check_nestedness, ActiveGeometry};
use crate::parallel::StripSchedule;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct TransferPair {
    /// Fine level index.
    pub level: usize,
    p: usize,
    n_coarse: usize,
    n_fine: usize,
    /// `embed[c][a * (p + 1) + a']`: coarse basis `a'` at fine node `a` of child `c`.
    embed: [Vec<f64>; 2],
    /// Per fine DoF: coarse active cell of the owner's parent, `u32::MAX` if masked.
    owner_cell: Vec<u32>,
    /// Per fine DoF: `a | b << 2 | cx << 4 | cy << 5`.
    owner_code: Vec<u8>,
    /// Coarse cell DoFs, `(p + 1)^2` per coarse active cell, constrained ones as `NONE`.
    coarse_dofs: Vec<usize>,
    restrict_schedule: StripSchedule,
    coarse_rows: Vec<usize>,
}

impl TransferPair {
    pub fn new(
        coarse_geometry: &ActiveGeometry,
        coarse: &DofHandler,
        fine_geometry: &ActiveGeometry,
        fine: &DofHandler,
    ) -> Result<Self> {
        check_nestedness(coarse_geometry, fine_geometry)?;
        let p = fine.degree;
        if coarse.degree != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: coarse.degree,
            });
        }
        let basis = lagrange_basis(coarse.nodes_1d());
        let nodes = fine.nodes_1d();
        let n1 = p + 1;
        let embed = [0usize, 1].map(|c| {
            let mut e = vec![0.0; n1 * n1];
            for a in 0..n1 {
                let t = 0.5 * (c as f64 + nodes[a]);
                for (ac, phi) in basis.iter().enumerate() {
                    e[a * n1 + ac] = phi.eval(t);
                }
            }
            e
        });

        let fmesh = fine_geometry.mesh;
        let cmesh = coarse_geometry.mesh;
        let mut owner_cell = vec![u32::MAX; fine.n_dofs];
        let mut owner_code = vec![0u8; fine.n_dofs];
        for (act, &cell) in fine_geometry.active_cells.iter().enumerate() {
            let (i, j) = fmesh.cell_ij(cell);
            let parent = fmesh.parent(cell);
            let pa = coarse_geometry.active_index[parent];
            if pa == NONE {
                return Err(Error::Structural(format!(
                    "fine cell {cell} has inactive parent {parent}"
                )));
            }
            let dofs = fine.cell_dofs(act);
            for b in 0..n1 {
                for a in 0..n1 {
                    let d = dofs[b * n1 + a];
                    if owner_cell[d] == u32::MAX && !fine.constrained[d] {
                        owner_cell[d] = pa as u32;
                        owner_code[d] = (a | b << 2 | (i % 2) << 4 | (j % 2) << 5) as u8;
                    }
                }
            }
        }
        let mut coarse_dofs = Vec::with_capacity(coarse_geometry.active_cells.len() * n1 * n1);
        for act in 0..coarse_geometry.active_cells.len() {
            coarse_dofs.extend(coarse.cell_dofs(act).iter().map(|&d| {
                if coarse.constrained[d] {
                    NONE
                } else {
                    d
                }
            }));
        }
        let keyed = (0..fine.n_dofs)
            .filter(|&d| owner_cell[d] != u32::MAX)
            .map(|d| {
                let (_, cj) = cmesh.cell_ij(coarse_geometry.active_cells[owner_cell[d] as usize]);
                (cj, d)
            });
        let restrict_schedule = StripSchedule::from_rows(keyed, p, p, coarse.lattice - 1, 2);
        Ok(Self {
            level: fmesh.level,
            p,
            n_coarse: coarse.n_dofs,
            n_fine: fine.n_dofs,
            embed,
            owner_cell,
            owner_code,
            coarse_dofs,
            restrict_schedule,
            coarse_rows: coarse.row_start().to_vec(),
        })
    }

    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    /// Weights of the coarse cell DoFs for fine DoF `d`, x-fastest.
    #[inline]
    fn weights(&self, d: usize, w: &mut [f64; 16]) -> &[usize] {
        let n1 = self.p + 1;
        let code = self.owner_code[d] as usize;
        let (a, b, cx, cy) = (code & 3, (code >> 2) & 3, (code >> 4) & 1, (code >> 5) & 1);
        let ex = &self.embed[cx][a * n1..(a + 1) * n1];
        let ey = &self.embed[cy][b * n1..(b + 1) * n1];
        for bc in 0..n1 {
            for ac in 0..n1 {
                w[bc * n1 + ac] = ey[bc] * ex[ac];
            }
        }
        let cell = self.owner_cell[d] as usize;
        &self.coarse_dofs[cell * n1 * n1..(cell + 1) * n1 * n1]
    }

    pub fn prolongate(&self, coarse: &[f64], fine: &mut [f64]) -> Result<()> {
        check(self.n_coarse, coarse.len())?;
        check(self.n_fine, fine.len())?;
        let eval = |d: usize| -> f64 {
            if self.owner_cell[d] == u32::MAX {
                return 0.0;
            }
            let mut w = [0.0; 16];
            let cd = self.weights(d, &mut w);
            cd.iter()
                .zip(&w)
                .filter(|(&c, _)| c != NONE)
                .map(|(&c, &wi)| wi * coarse[c])
                .sum()
        };
        if rayon::current_num_threads() > 1 {
            fine.par_iter_mut()
                .enumerate()
                .for_each(|(d, v)| *v = eval(d));
        } else {
            fine.iter_mut().enumerate().for_each(|(d, v)| *v = eval(d));
        }
        Ok(())
    }

    /// `coarse = P^T fine`.
    pub fn restrict(&self, fine: &[f64], coarse: &mut [f64]) -> Result<()> {
        check(self.n_fine, fine.len())?;
        check(self.n_coarse, coarse.len())?;
        coarse.fill(0.0);
        self.restrict_schedule
            .run(coarse, &self.coarse_rows, |items, ys, offset| {
                let mut w = [0.0; 16];
                for &d in items {
                    let r = fine[d];
                    let cd = self.weights(d, &mut w);
                    for (&c, &wi) in cd.iter().zip(&w) {
                        if c != NONE {
                            ys[c - offset] += wi * r;
                        }
                    }
                }
            });
        Ok(())
    }
}

fn check(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
