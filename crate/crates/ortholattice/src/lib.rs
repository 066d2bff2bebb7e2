//! Topology optimization of coated structures with orthotropic infill, and
//! projection of the optimized composite onto a fine solid/void lattice.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`grid`], [`voigt`], [`linalg`] — shared numerical plumbing.
//! * [`fem`] — plane-stress FE analysis on structured grids.
//! * [`filters`] — PDE density filter, Heaviside projection and the
//!   double-filter coating pipeline.
//! * [`homogenize`] — unit-cell homogenization database for the square cell
//!   with a rectangular hole.
//! * [`material`] — pointwise density/stiffness interpolation and derivatives.
//! * [`mma`], [`optimize`] — the Method of Moving Asymptotes and the nested
//!   compliance-minimization loop.
//! * [`project`] — de-homogenization onto a fine mesh with adaptive
//!   periodicity and coating.
//! * [`config`], [`io`], [`pipeline`] — run configuration, file emission and
//!   the CLI orchestration.
//!
//! See the `examples/` directory for runnable entry points per capability.

pub mod config;
pub mod fem;
pub mod filters;
pub mod grid;
pub mod homogenize;
pub mod io;
pub mod linalg;
pub mod material;
pub mod mma;
pub mod optimize;
pub mod pipeline;
pub mod project;
pub mod voigt;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::homogenize::HomogDB;
    use std::sync::OnceLock;

    /// Small shared database for unit tests. Axis chosen so that `a * n_cell`
    /// is even at nodes and midpoints (hole geometry identical between the
    /// table build and direct-solve oracles).
    pub fn small_db() -> &'static HomogDB {
        static DB: OnceLock<HomogDB> = OnceLock::new();
        DB.get_or_init(|| {
            let grid: Vec<f64> = (0..9).map(|i| 0.2 + 0.08 * i as f64).collect();
            HomogDB::build(&grid, 50).unwrap()
        })
    }
}
