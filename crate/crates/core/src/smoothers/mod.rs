//! Level smoothers: the multiplicative vertex-patch smoother and a Chebyshev baseline.

pub mod chebyshev;
pub mod patch;

use serde::{Deserialize, Serialize};

pub use chebyshev::Chebyshev;
pub use patch::{CutPatchSolver, FastDiagonalization, PatchSolverBank};

use crate::error::Result;
use crate::operator::LevelOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmootherKind {
    Mvs,
    Chebyshev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub kind: SmootherKind,
    /// Repeats of the cut-patch sweep.
    pub n_c: usize,
    pub chebyshev_degree: usize,
    pub chebyshev_theta: f64,
    pub power_iterations: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            kind: SmootherKind::Mvs,
            n_c: 2,
            chebyshev_degree: 5,
            chebyshev_theta: 20.0,
            power_iterations: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub enum LevelSmoother {
    Mvs(PatchSolverBank),
    Chebyshev(Chebyshev),
}

impl LevelSmoother {
    pub fn new(op: &LevelOperator, config: &SmootherConfig) -> Result<Self> {
        Ok(match config.kind {
            SmootherKind::Mvs => LevelSmoother::Mvs(PatchSolverBank::new(op, config.n_c)?),
            SmootherKind::Chebyshev => LevelSmoother::Chebyshev(Chebyshev::new(
                op,
                &op.diagonal(),
                config.chebyshev_degree,
                config.chebyshev_theta,
                config.power_iterations,
            )?),
        })
    }

    /// One smoothing step; `w1`, `w2` are work vectors of length `n_dofs`.
    pub fn smooth(
        &self,
        op: &LevelOperator,
        x: &mut [f64],
        b: &[f64],
        w1: &mut [f64],
        w2: &mut [f64],
    ) {
        match self {
            LevelSmoother::Mvs(bank) => bank.mvs_step(op, x, b, w1),
            LevelSmoother::Chebyshev(c) => c.step(op, x, b, w1, w2),
        }
    }
}
