//! Matrix-free geometric multigrid for the Poisson problem on a disc cut out of
//! a Cartesian background mesh.

pub mod error;
pub mod fe_space;
pub mod geometry;
pub mod harness;
pub mod krylov;
pub mod linalg;
pub mod multigrid;
pub mod operator;
pub mod parallel;
pub mod quadrature;
pub mod smoothers;
pub mod transfer;

pub use error::{Error, Result};
