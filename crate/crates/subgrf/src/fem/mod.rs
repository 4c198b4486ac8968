//! Piecewise-linear finite elements for the pathwise weak problem on the
//! unit square: uniform and sample-adapted triangulations, P1 assembly with
//! centroid quadrature, a Jacobi-CG solve, and reference-grid V-norm
//! distances.

mod mesh;
mod solution;
mod system;

pub use mesh::{mesh_adapted, mesh_uniform, BoundaryEdge, BoundarySpec, Side, TriMesh};
pub use solution::{
    v_norm_distance, v_norm_distance_to_fn, v_norm_distance_with_grid, FemSolution, REFERENCE_GRID,
};
pub use system::{assemble, solve, CsrMatrix, LinearSystem, CG_REL_TOL};
