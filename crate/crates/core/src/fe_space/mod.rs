//! Continuous `Q_p` spaces (`p = 1..=3`) on the active cells of a level.

pub mod dofs;
pub mod shape;

pub use dofs::{build_patch_index_sets, distribute_dofs, DofHandler};
pub use shape::{build_shape_table, gauss_lobatto_nodes, ShapeTable1D};
