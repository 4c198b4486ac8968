//! Conforming triangulations of the unit square: structured uniform meshes
//! and sample-adapted tensor meshes whose edges align with the coefficient's
//! axis-aligned jump lines.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric side of the unit square a boundary edge lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Side::Left => "Left",
            Side::Right => "Right",
            Side::Bottom => "Bottom",
            Side::Top => "Top",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryEdge {
    pub a: usize,
    pub b: usize,
    pub side: Side,
}

/// Conforming triangulation with positively oriented triangles, labeled
/// boundary edges and cached h (max triangle diameter) and θ_min (minimum
/// interior angle, degrees).
#[derive(Clone, Debug)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub h_max: f64,
    pub theta_min_deg: f64,
}

fn tri_stats(vertices: &[[f64; 2]], tri: &[usize; 3]) -> (f64, f64) {
    let p = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
    let mut edges = [0.0f64; 3];
    for k in 0..3 {
        let (a, b) = (p[k], p[(k + 1) % 3]);
        edges[k] = (b[0] - a[0]).hypot(b[1] - a[1]);
    }
    let diam = edges.iter().cloned().fold(0.0f64, f64::max);
    // law of cosines; angle at vertex k is opposite edge (k+1)
    let mut min_angle = f64::INFINITY;
    for k in 0..3 {
        let (adj1, adj2, opp) = (edges[k], edges[(k + 2) % 3], edges[(k + 1) % 3]);
        let cos = ((adj1 * adj1 + adj2 * adj2 - opp * opp) / (2.0 * adj1 * adj2)).clamp(-1.0, 1.0);
        min_angle = min_angle.min(cos.acos());
    }
    (diam, min_angle.to_degrees())
}

impl TriMesh {
    /// Tensor-product mesh from ascending line sets (each cell split into two
    /// positively oriented triangles). Conforming by construction.
    pub fn from_tensor_lines(xs: &[f64], ys: &[f64]) -> Result<TriMesh> {
        let (nx, ny) = (xs.len(), ys.len());
        if nx < 2 || ny < 2 {
            return Err(Error::invalid("lines", "need at least two lines per axis"));
        }
        for lines in [xs, ys] {
            if lines.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid("lines", "must be strictly ascending"));
            }
        }
        let mut vertices = Vec::with_capacity(nx * ny);
        for &y in ys {
            for &x in xs {
                vertices.push([x, y]);
            }
        }
        let v = |i: usize, j: usize| j * nx + i;
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                triangles.push([v(i, j), v(i + 1, j), v(i + 1, j + 1)]);
                triangles.push([v(i, j), v(i + 1, j + 1), v(i, j + 1)]);
            }
        }
        let mut boundary_edges = Vec::new();
        for i in 0..nx - 1 {
            boundary_edges.push(BoundaryEdge {
                a: v(i, 0),
                b: v(i + 1, 0),
                side: Side::Bottom,
            });
            boundary_edges.push(BoundaryEdge {
                a: v(i, ny - 1),
                b: v(i + 1, ny - 1),
                side: Side::Top,
            });
        }
        for j in 0..ny - 1 {
            boundary_edges.push(BoundaryEdge {
                a: v(0, j),
                b: v(0, j + 1),
                side: Side::Left,
            });
            boundary_edges.push(BoundaryEdge {
                a: v(nx - 1, j),
                b: v(nx - 1, j + 1),
                side: Side::Right,
            });
        }
        let mut h_max = 0.0f64;
        let mut theta_min_deg = f64::INFINITY;
        for tri in &triangles {
            let (d, a) = tri_stats(&vertices, tri);
            h_max = h_max.max(d);
            theta_min_deg = theta_min_deg.min(a);
        }
        Ok(TriMesh {
            vertices,
            triangles,
            boundary_edges,
            h_max,
            theta_min_deg,
        })
    }

    /// Number of vertices on the boundary-edge graph.
    pub fn boundary_vertex_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.vertices.len()];
        for e in &self.boundary_edges {
            flags[e.a] = true;
            flags[e.b] = true;
        }
        flags
    }

    /// Simple text export: vertex list, triangle list, labeled boundary edges.
    pub fn write_text(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "{} {}", v[0], v[1])?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "boundary_edges {}", self.boundary_edges.len())?;
        for e in &self.boundary_edges {
            writeln!(w, "{} {} {}", e.a, e.b, e.side)?;
        }
        Ok(())
    }
}

/// Structured n×n mesh with n = ⌈√2/h_target⌉, each square split into two
/// right triangles; h ≤ h_target, θ_min = 45°.
pub fn mesh_uniform(h_target: f64) -> Result<Arc<TriMesh>> {
    if !(h_target > 0.0) || !h_target.is_finite() {
        return Err(Error::invalid("h_target", "must be finite and > 0"));
    }
    let n = (((2.0f64).sqrt() / h_target) * (1.0 - 1e-12))
        .ceil()
        .max(1.0) as usize;
    let lines: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    Ok(Arc::new(TriMesh::from_tensor_lines(&lines, &lines)?))
}

/// Collapse interior lines closer than `tol`: lines within `tol` of 0 or 1
/// snap to the boundary; remaining lines are clustered greedily with cluster
/// span capped at `2·tol` and replaced by the cluster midpoint. Surviving
/// lines are at least `tol` apart and no original line moves further than
/// `tol`.
pub(crate) fn merge_lines(lines: &[f64], tol: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = lines
        .iter()
        .copied()
        .filter(|&x| x > 0.0 && x < 1.0)
        .collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    if tol <= 0.0 {
        return sorted;
    }
    let interior: Vec<f64> = sorted
        .into_iter()
        .filter(|&x| x >= tol && x <= 1.0 - tol)
        .collect();
    let mut merged = Vec::new();
    let mut k = 0;
    while k < interior.len() {
        let first = interior[k];
        let mut last = first;
        let mut j = k + 1;
        while j < interior.len() && interior[j] - last < tol && interior[j] - first <= 2.0 * tol {
            last = interior[j];
            j += 1;
        }
        merged.push(0.5 * (first + last));
        k = j;
    }
    merged
}

/// Tensor mesh whose x-lines are `{0,1} ∪ merged xs` and y-lines
/// `{0,1} ∪ merged ys`; every gap is subdivided into near-square subcells of
/// side ≤ h_target/2, so each partition rectangle is a union of triangles,
/// triangle diameters stay ≤ h_target and (for merge_tol = h_target/4) the
/// aspect ratio stays ≤ 2, giving θ_min ≥ atan(1/2) ≈ 26.6°.
pub fn mesh_adapted(xs: &[f64], ys: &[f64], h_target: f64, merge_tol: f64) -> Result<Arc<TriMesh>> {
    if !(h_target > 0.0) || !h_target.is_finite() {
        return Err(Error::invalid("h_target", "must be finite and > 0"));
    }
    if !(merge_tol >= 0.0) || !merge_tol.is_finite() {
        return Err(Error::invalid("merge_tol", "must be finite and >= 0"));
    }
    let s = h_target / 2.0;
    let refine = |jumps: &[f64]| -> Vec<f64> {
        let merged = merge_lines(jumps, merge_tol);
        let mut anchors = Vec::with_capacity(merged.len() + 2);
        anchors.push(0.0);
        anchors.extend(merged);
        anchors.push(1.0);
        let mut lines = Vec::new();
        for w in anchors.windows(2) {
            let gap = w[1] - w[0];
            let parts = ((gap / s) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            for p in 0..parts {
                lines.push(w[0] + gap * p as f64 / parts as f64);
            }
        }
        lines.push(1.0);
        lines
    };
    let x_lines = refine(xs);
    let y_lines = refine(ys);
    Ok(Arc::new(TriMesh::from_tensor_lines(&x_lines, &y_lines)?))
}

type TraceFn = Arc<dyn Fn(f64, f64) -> Option<f64> + Send + Sync>;
type FluxFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Boundary condition: which part of ∂D carries Dirichlet data (Γ₁) and the
/// Neumann flux g on the rest (Γ₂).
#[derive(Clone)]
pub enum BoundarySpec {
    /// Γ₁ = {0,1}×[0,1] with traces 0.1 (left) and 0.3 (right);
    /// Γ₂ = (0,1)×{0,1} with g ≡ 0.
    MixedPaper,
    /// Γ₁ = ∂D with trace 0.
    HomogeneousDirichlet,
    /// Pointwise rule: `dirichlet(x,y)` returns the trace where Γ₁ applies;
    /// boundary edges whose midpoint gets `None` are Γ₂ with flux `g`.
    Custom { dirichlet: TraceFn, flux: FluxFn },
}

impl fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySpec::MixedPaper => write!(f, "MixedPaper"),
            BoundarySpec::HomogeneousDirichlet => write!(f, "HomogeneousDirichlet"),
            BoundarySpec::Custom { .. } => write!(f, "Custom"),
        }
    }
}

const BC_EPS: f64 = 1e-12;

impl BoundarySpec {
    /// Trace value at a boundary point on Γ₁, `None` on Γ₂.
    pub fn dirichlet_value(&self, x: f64, y: f64) -> Option<f64> {
        match self {
            BoundarySpec::MixedPaper => {
                if x.abs() < BC_EPS {
                    Some(0.1)
                } else if (x - 1.0).abs() < BC_EPS {
                    Some(0.3)
                } else {
                    None
                }
            }
            BoundarySpec::HomogeneousDirichlet => Some(0.0),
            BoundarySpec::Custom { dirichlet, .. } => dirichlet(x, y),
        }
    }

    /// Neumann flux g at a Γ₂ point.
    pub fn neumann_flux(&self, x: f64, y: f64) -> f64 {
        match self {
            BoundarySpec::MixedPaper | BoundarySpec::HomogeneousDirichlet => 0.0,
            BoundarySpec::Custom { flux, .. } => flux(x, y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn coarsest_uniform_mesh_is_two_triangles() {
        let m = mesh_uniform(2f64.sqrt()).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 2);
        assert!((m.theta_min_deg - 45.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_mesh_h_is_hypotenuse_below_target() {
        for target in [0.4, 0.2, 0.1, 0.05] {
            let m = mesh_uniform(target).unwrap();
            let n = ((m.vertices.len() as f64).sqrt() - 1.0).round();
            assert!((m.h_max - 2f64.sqrt() / n).abs() < 1e-12);
            assert!(m.h_max <= target + 1e-12);
        }
    }

    #[test]
    fn euler_formula_holds() {
        // V − E + F = 1 for the triangulated disk (outer face excluded),
        // edges counted combinatorially from the triangle list.
        for m in [
            mesh_uniform(0.3).unwrap(),
            mesh_adapted(&[0.31, 0.7], &[0.5], 0.2, 0.05).unwrap(),
        ] {
            let mut edges = HashSet::new();
            for t in &m.triangles {
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            let v = m.vertices.len() as i64;
            let e = edges.len() as i64;
            let f = m.triangles.len() as i64;
            assert_eq!(v - e + f, 1);
        }
    }

    #[test]
    fn triangles_are_positively_oriented_and_conforming() {
        let m = mesh_adapted(&[0.28, 0.61], &[0.44], 0.15, 0.0375).unwrap();
        for t in &m.triangles {
            let [a, b, c] = [m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]];
            let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            assert!(cross > 0.0, "negative orientation");
        }
        // interior edges shared by exactly two triangles
        let mut count = std::collections::HashMap::new();
        for t in &m.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let boundary: HashSet<(usize, usize)> = m
            .boundary_edges
            .iter()
            .map(|e| (e.a.min(e.b), e.a.max(e.b)))
            .collect();
        for (edge, c) in count {
            if boundary.contains(&edge) {
                assert_eq!(c, 1, "boundary edge in {c} triangles");
            } else {
                assert_eq!(c, 2, "interior edge in {c} triangles");
            }
        }
    }

    #[test]
    fn adapted_without_jumps_matches_uniform_structure() {
        let a = mesh_adapted(&[], &[], 0.25, 0.0625).unwrap();
        // all cells square, uniform spacing, 45 degree angles
        assert!((a.theta_min_deg - 45.0).abs() < 1e-9);
        let n = (a.vertices.len() as f64).sqrt() as usize;
        assert_eq!(n * n, a.vertices.len());
        assert_eq!(a.triangles.len(), 2 * (n - 1) * (n - 1));
    }

    #[test]
    fn single_interface_lands_on_mesh_lines() {
        let m = mesh_adapted(&[0.5], &[], 0.5, 0.125).unwrap();
        let on_line = m.vertices.iter().any(|v| (v[0] - 0.5).abs() < 1e-14);
        assert!(on_line, "x = 0.5 not among mesh lines");
        // no triangle crosses x = 0.5
        for t in &m.triangles {
            let xs: Vec<f64> = t.iter().map(|&i| m.vertices[i][0]).collect();
            let below = xs.iter().any(|&x| x < 0.5 - 1e-14);
            let above = xs.iter().any(|&x| x > 0.5 + 1e-14);
            assert!(!(below && above), "triangle straddles the interface");
        }
    }

    #[test]
    fn merge_collapses_close_lines_and_keeps_spacing() {
        let tol = 0.05;
        let merged = merge_lines(&[0.02, 0.3, 0.32, 0.7, 0.99], tol);
        // 0.02 and 0.99 snap to the boundary; 0.3/0.32 collapse to midpoint
        assert_eq!(merged.len(), 2);
        assert!((merged[0] - 0.31).abs() < 1e-14);
        assert!((merged[1] - 0.7).abs() < 1e-14);
        for w in merged.windows(2) {
            assert!(w[1] - w[0] >= tol - 1e-14);
        }
    }

    #[test]
    fn merge_displacement_is_bounded_by_tol() {
        let tol = 0.05;
        // chain of close lines: span-capped clustering keeps each original
        // within tol of some representative
        let lines = [0.2, 0.24, 0.28, 0.32, 0.36, 0.4];
        let merged = merge_lines(&lines, tol);
        for &x in &lines {
            let near = merged.iter().any(|&m| (m - x).abs() <= tol + 1e-14);
            assert!(near, "line {x} displaced by more than tol");
        }
        for w in merged.windows(2) {
            assert!(w[1] - w[0] >= tol - 1e-14);
        }
    }

    #[test]
    fn adapted_mesh_respects_diameter_and_angle_floor() {
        let h = 0.2;
        let m = mesh_adapted(&[0.33, 0.34, 0.81], &[0.12, 0.55], h, h / 4.0).unwrap();
        assert!(m.h_max <= h + 1e-12);
        assert!(m.theta_min_deg >= 26.0, "theta_min = {}", m.theta_min_deg);
    }

    #[test]
    fn mixed_paper_boundary_partition() {
        let bc = BoundarySpec::MixedPaper;
        assert_eq!(bc.dirichlet_value(0.0, 0.4), Some(0.1));
        assert_eq!(bc.dirichlet_value(1.0, 0.9), Some(0.3));
        assert_eq!(bc.dirichlet_value(0.5, 0.0), None);
        assert_eq!(bc.dirichlet_value(0.5, 1.0), None);
        // corners belong to the closed Dirichlet segments
        assert_eq!(bc.dirichlet_value(0.0, 0.0), Some(0.1));
        assert_eq!(bc.dirichlet_value(1.0, 1.0), Some(0.3));
        assert_eq!(bc.neumann_flux(0.5, 0.0), 0.0);

        let hd = BoundarySpec::HomogeneousDirichlet;
        assert_eq!(hd.dirichlet_value(0.5, 0.0), Some(0.0));
    }

    #[test]
    fn mesh_text_export_has_all_sections() {
        let m = mesh_uniform(1.0).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("vertices "));
        assert!(text.contains("\ntriangles "));
        assert!(text.contains("\nboundary_edges "));
        assert!(text.contains("Left") && text.contains("Top"));
    }
}
