//! Geometric multigrid V-cycle over rediscretized levels with an exact coarse solve.

use std::io::Write;

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};
use crate::geometry::{Domain, MeshHierarchy, SquareBox};
use crate::linalg::{norm, residual, LinearOperator};
use crate::operator::dense::assemble_dense;
use crate::operator::{LevelOperator, OperatorParams};
use crate::smoothers::{LevelSmoother, SmootherConfig};
use crate::transfer::TransferPair;

/// Stationary iterations allowed before giving up.
pub const DEFAULT_MAX_IT: usize = 500;
/// Residual growth that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug)]
pub struct MgHierarchy {
    pub levels: Vec<LevelOperator>,
    /// `transfers[l - 1]` connects levels `l - 1` and `l`.
    pub transfers: Vec<TransferPair>,
    /// `smoothers[l - 1]` smooths level `l`.
    pub smoothers: Vec<LevelSmoother>,
    coarse: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl MgHierarchy {
    /// Levels `0..=finest` of `domain` on the square `domain_box`.
    pub fn build(
        domain_box: SquareBox,
        domain: Domain,
        p: usize,
        finest: usize,
        params: &OperatorParams,
        smoother: &SmootherConfig,
    ) -> Result<Self> {
        let mh = MeshHierarchy::new(domain_box, finest)?;
        let levels = (0..=finest)
            .map(|l| LevelOperator::build(mh.level(l), domain, p, params.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_levels(levels, smoother)
    }

    pub fn from_levels(levels: Vec<LevelOperator>, smoother: &SmootherConfig) -> Result<Self> {
        let transfers = levels
            .windows(2)
            .map(|w| TransferPair::new(&w[0].geometry, &w[0].dofs, &w[1].geometry, &w[1].dofs))
            .collect::<Result<Vec<_>>>()?;
        let smoothers = levels[1..]
            .iter()
            .map(|op| LevelSmoother::new(op, smoother))
            .collect::<Result<Vec<_>>>()?;
        let a0 = assemble_dense(&levels[0].geometry, &levels[0].dofs, &levels[0].params)?;
        let coarse = a0.lu();
        if !coarse.is_invertible() {
            return Err(Error::CoarseSolve("level 0 matrix is singular".into()));
        }
        Ok(Self {
            levels,
            transfers,
            smoothers,
            coarse,
        })
    }

    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn fine_operator(&self) -> &LevelOperator {
        &self.levels[self.finest()]
    }

    pub fn coarse_solve(&self, b: &[f64], x: &mut [f64]) {
        let sol = self
            .coarse
            .solve(&DVector::from_column_slice(b))
            .expect("invertibility checked at build");
        x.copy_from_slice(sol.as_slice());
    }

    /// One V(1,1) cycle on level `l`, updating `x` in place.
    pub fn v_cycle(&self, l: usize, x: &mut [f64], b: &[f64]) {
        if l == 0 {
            self.coarse_solve(b, x);
            return;
        }
        let op = &self.levels[l];
        let n = op.n_dofs();
        let smoother = &self.smoothers[l - 1];
        let mut w1 = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        smoother.smooth(op, x, b, &mut w1, &mut w2);
        residual(op, x, b, &mut w1);
        let t = &self.transfers[l - 1];
        let mut rc = vec![0.0; t.n_coarse()];
        t.restrict(&w1, &mut rc)
            .expect("sizes fixed by construction");
        let mut ec = vec![0.0; t.n_coarse()];
        self.v_cycle(l - 1, &mut ec, &rc);
        t.prolongate(&ec, &mut w2)
            .expect("sizes fixed by construction");
        for (xi, ei) in x.iter_mut().zip(&w2) {
            *xi += ei;
        }
        smoother.smooth(op, x, b, &mut w1, &mut w2);
    }

    /// `z = V(r)` from a zero initial guess on the finest level.
    pub fn precondition(&self, r: &[f64], z: &mut [f64]) {
        self.precondition_at(self.finest(), r, z);
    }

    /// `z = V(r)` from a zero initial guess with level `l` on top.
    pub fn precondition_at(&self, l: usize, r: &[f64], z: &mut [f64]) {
        z.fill(0.0);
        self.v_cycle(l, z, r);
    }

    /// The V-cycle with level `l` on top, as a linear operator.
    pub fn preconditioner(&self, l: usize) -> Preconditioner<'_> {
        Preconditioner { mg: self, level: l }
    }

    pub fn solve_vcycle(&self, b: &[f64], tol: f64, max_it: usize) -> VcycleReport {
        self.solve_vcycle_at(self.finest(), b, tol, max_it)
    }

    /// Stationary iteration `x <- x + V(b - A x)` on level `l` from `x = 0`.
    pub fn solve_vcycle_at(&self, l: usize, b: &[f64], tol: f64, max_it: usize) -> VcycleReport {
        let op = &self.levels[l];
        let n = op.n_dofs();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let r0 = norm(&r);
        let mut history = vec![r0];
        let mut n_it = 0;
        let mut outcome = if r0 == 0.0 {
            Outcome::Converged
        } else {
            Outcome::MaxIterations
        };
        let start = std::time::Instant::now();
        while r0 > 0.0 && n_it < max_it {
            if *history.last().unwrap() <= tol * r0 {
                outcome = Outcome::Converged;
                break;
            }
            self.v_cycle(l, &mut x, b);
            residual(op, &x, b, &mut r);
            let rn = norm(&r);
            history.push(rn);
            n_it += 1;
            if !(rn <= DIVERGENCE_FACTOR * r0) {
                outcome = Outcome::Diverged;
                break;
            }
            if rn <= tol * r0 {
                outcome = Outcome::Converged;
                break;
            }
        }
        VcycleReport {
            x,
            n_it,
            history,
            outcome,
            wall_time: start.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Preconditioner<'a> {
    mg: &'a MgHierarchy,
    level: usize,
}

impl LinearOperator for Preconditioner<'_> {
    fn size(&self) -> usize {
        self.mg.levels[self.level].n_dofs()
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.mg.precondition_at(self.level, x, y);
    }
}

impl LinearOperator for MgHierarchy {
    fn size(&self) -> usize {
        self.fine_operator().n_dofs()
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.precondition(x, y);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    Diverged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct VcycleReport {
    pub x: Vec<f64>,
    pub n_it: usize,
    /// `||r_k||` for `k = 0..=n_it`.
    pub history: Vec<f64>,
    pub outcome: Outcome,
    pub wall_time: f64,
}

impl VcycleReport {
    /// Iteration count, or `---` for a diverged run.
    pub fn table_entry(&self) -> String {
        match self.outcome {
            Outcome::Diverged => "---".into(),
            _ => self.n_it.to_string(),
        }
    }
}

/// Writes `iteration,residual,relative` rows.
pub fn write_history<W: Write>(history: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,residual,relative")?;
    let r0 = history.first().copied().unwrap_or(0.0);
    for (k, r) in history.iter().enumerate() {
        let rel = if r0 > 0.0 { r / r0 } else { 0.0 };
        writeln!(out, "{k},{r:.6e},{rel:.6e}")?;
    }
    Ok(())
}

/// Dense level matrix, exposed for diagnostics of small levels.
pub fn dense_level_matrix(op: &LevelOperator) -> Result<DMatrix<f64>> {
    assemble_dense(&op.geometry, &op.dofs, &op.params)
}
