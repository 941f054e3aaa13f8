//! Endmember extraction and abundance estimation used to seed both solvers.

mod fcls;
mod vca;

pub use fcls::{fcls, fcls_field, simplex_qp_columns, SimplexLeastSquares};
pub use vca::vca;

use crate::data::{AbundanceField, EndmemberMatrix, HyperCube};
use crate::error::Result;

/// `M⁽⁰⁾` from VCA and `A⁽⁰⁾` from FCLS.
#[derive(Debug, Clone)]
pub struct InitResult {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceField,
}

/// VCA on the cube followed by FCLS against the extracted endmembers.
pub fn initialize(cube: &HyperCube, count: usize, seed: u64) -> Result<InitResult> {
    let x = cube.to_matrix();
    let endmembers = vca(&x, count, seed)?;
    let abundances = fcls_field(cube, &endmembers)?;
    Ok(InitResult {
        endmembers,
        abundances,
    })
}
