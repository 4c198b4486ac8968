//! P1 assembly of the pathwise weak problem and a Jacobi-preconditioned
//! conjugate gradient solver.
//!
//! Stiffness entries use one-point centroid quadrature per triangle (second
//! order consistent for P1; on adapted meshes each triangle sits inside one
//! partition rectangle, so the quadrature never straddles a jump). Dirichlet
//! rows are eliminated with trace values moved to the right-hand side, which
//! keeps the reduced system symmetric positive definite.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::mesh::{BoundarySpec, TriMesh};
use super::solution::FemSolution;

/// Relative residual target for the CG solve.
pub const CG_REL_TOL: f64 = 1e-12;

/// Compressed sparse row matrix (symmetric storage of the full matrix).
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from unordered triplets, merging duplicates. Deterministic for
    /// any input order of equal-index triplets (values are summed after a
    /// stable sort by row then column).
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> CsrMatrix {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[k] == r {
                    d[r] = self.vals[k];
                }
            }
        }
        d
    }
}

/// Assembled reduced system together with the Dirichlet data needed to
/// recover the full nodal vector.
pub struct LinearSystem {
    pub mesh: Arc<TriMesh>,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub free_to_node: Vec<usize>,
    pub dirichlet: Vec<Option<f64>>,
}

impl LinearSystem {
    /// Dimension of the FE space (number of unknowns).
    pub fn dofs(&self) -> usize {
        self.matrix.n
    }
}

/// Assemble stiffness and load for `-∇·(a∇u) = f` with the given boundary
/// conditions: `∫ a ∇v_i·∇v_j` by centroid quadrature, `∫ f v_i` by centroid
/// quadrature, and `∫_Γ₂ g v_i` by edge midpoint quadrature.
pub fn assemble(
    mesh: Arc<TriMesh>,
    a_eval: &(dyn Fn(f64, f64) -> f64 + Sync),
    f_eval: &(dyn Fn(f64, f64) -> f64 + Sync),
    bc: &BoundarySpec,
) -> Result<LinearSystem> {
    let n_nodes = mesh.vertices.len();

    // Dirichlet nodes: boundary vertices where the BC prescribes a trace.
    let boundary = mesh.boundary_vertex_flags();
    let mut dirichlet: Vec<Option<f64>> = vec![None; n_nodes];
    for (i, &on_boundary) in boundary.iter().enumerate() {
        if on_boundary {
            let [x, y] = mesh.vertices[i];
            dirichlet[i] = bc.dirichlet_value(x, y);
        }
    }
    let mut node_to_free = vec![usize::MAX; n_nodes];
    let mut free_to_node = Vec::new();
    for i in 0..n_nodes {
        if dirichlet[i].is_none() {
            node_to_free[i] = free_to_node.len();
            free_to_node.push(i);
        }
    }
    let n_free = free_to_node.len();

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(9 * mesh.triangles.len());
    let mut rhs = vec![0.0; n_free];

    for tri in &mesh.triangles {
        let p = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        let det =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        let area = 0.5 * det;
        debug_assert!(area > 0.0, "triangle orientation");
        // constant basis gradients: grad λ_k = perp of the opposite edge / (2A)
        let grads = [
            [(p[1][1] - p[2][1]) / det, (p[2][0] - p[1][0]) / det],
            [(p[2][1] - p[0][1]) / det, (p[0][0] - p[2][0]) / det],
            [(p[0][1] - p[1][1]) / det, (p[1][0] - p[0][0]) / det],
        ];
        let cx = (p[0][0] + p[1][0] + p[2][0]) / 3.0;
        let cy = (p[0][1] + p[1][1] + p[2][1]) / 3.0;
        let a_c = a_eval(cx, cy);
        let f_c = f_eval(cx, cy);
        if !a_c.is_finite() || !f_c.is_finite() {
            return Err(Error::NonFinite {
                context: format!("coefficient/source at centroid ({cx}, {cy})"),
            });
        }
        for i in 0..3 {
            let ni = tri[i];
            let fi = node_to_free[ni];
            if fi == usize::MAX {
                continue;
            }
            rhs[fi] += f_c * area / 3.0;
            for j in 0..3 {
                let nj = tri[j];
                let k_ij = a_c * area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                match dirichlet[nj] {
                    None => triplets.push((fi, node_to_free[nj], k_ij)),
                    Some(trace) => rhs[fi] -= k_ij * trace,
                }
            }
        }
    }

    // Neumann contributions on Γ₂ edges (midpoint rule).
    for e in &mesh.boundary_edges {
        let (pa, pb) = (mesh.vertices[e.a], mesh.vertices[e.b]);
        let mx = 0.5 * (pa[0] + pb[0]);
        let my = 0.5 * (pa[1] + pb[1]);
        if bc.dirichlet_value(mx, my).is_some() {
            continue;
        }
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let g = bc.neumann_flux(mx, my);
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: format!("Neumann flux at ({mx}, {my})"),
            });
        }
        for node in [e.a, e.b] {
            let f = node_to_free[node];
            if f != usize::MAX {
                rhs[f] += g * len / 2.0;
            }
        }
    }

    let matrix = CsrMatrix::from_triplets(n_free, triplets);
    Ok(LinearSystem {
        mesh,
        matrix,
        rhs,
        free_to_node,
        dirichlet,
    })
}

/// Jacobi-preconditioned conjugate gradients to relative residual
/// [`CG_REL_TOL`], iteration cap `10·dofs`. Deterministic given the system.
pub fn solve(system: &LinearSystem) -> Result<FemSolution> {
    let a = &system.matrix;
    let n = a.n;
    let b = &system.rhs;
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut x = vec![0.0; n];
    let mut iterations = 0;
    let mut rel_residual = 0.0;

    if n > 0 && b_norm > 0.0 {
        let diag = a.diagonal();
        let inv_diag: Vec<f64> = diag
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, mi)| ri * mi).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(ri, zi)| ri * zi).sum();
        let cap = 10 * n;
        let target = CG_REL_TOL * b_norm;
        loop {
            let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            rel_residual = r_norm / b_norm;
            if r_norm <= target {
                break;
            }
            if iterations >= cap {
                return Err(Error::SolveDidNotConverge {
                    achieved: rel_residual,
                    tolerance: CG_REL_TOL,
                    iterations,
                });
            }
            a.matvec(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(pi, api)| pi * api).sum();
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(ri, zi)| ri * zi).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            iterations += 1;
        }
    }

    let mut nodal = vec![0.0; system.mesh.vertices.len()];
    for (i, d) in system.dirichlet.iter().enumerate() {
        if let Some(trace) = d {
            nodal[i] = *trace;
        }
    }
    for (f, &node) in system.free_to_node.iter().enumerate() {
        nodal[node] = x[f];
    }
    let mut sol = FemSolution::from_nodal(Arc::clone(&system.mesh), nodal)?;
    sol.iterations = iterations;
    sol.rel_residual = rel_residual;
    Ok(sol)
}
