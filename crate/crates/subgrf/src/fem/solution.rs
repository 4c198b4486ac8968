//! Nodal P1 solutions: barycentric evaluation with constant per-triangle
//! gradients, point location through a uniform bucket index, and the
//! discrete H¹ (V-norm) distance sampled on the 800×800 reference grid.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::randomfield::{GridSpec2D, LatticeField2D};

use super::mesh::TriMesh;

/// Reference grid resolution for prolongation and V-norm sampling.
pub const REFERENCE_GRID: usize = 800;

const BARY_TOL: f64 = 1e-9;

/// Uniform spatial bucket index over the unit square; bucket lists keep
/// ascending triangle order so lookups resolve ties toward the lowest index.
#[derive(Clone, Debug)]
struct BucketIndex {
    n: usize,
    buckets: Vec<Vec<u32>>,
}

impl BucketIndex {
    fn build(mesh: &TriMesh) -> BucketIndex {
        let n = ((1.0 / mesh.h_max).ceil() as usize).clamp(1, 512);
        let mut buckets = vec![Vec::new(); n * n];
        let clamp_idx = |v: f64| -> usize { (v.max(0.0) as usize).min(n - 1) };
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let xs = tri.map(|k| mesh.vertices[k][0]);
            let ys = tri.map(|k| mesh.vertices[k][1]);
            let (x0, x1) = (
                xs.iter().cloned().fold(f64::INFINITY, f64::min),
                xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
            let (y0, y1) = (
                ys.iter().cloned().fold(f64::INFINITY, f64::min),
                ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
            let (i0, i1) = (
                clamp_idx(x0 * n as f64 - 1e-12),
                clamp_idx(x1 * n as f64 + 1e-12),
            );
            let (j0, j1) = (
                clamp_idx(y0 * n as f64 - 1e-12),
                clamp_idx(y1 * n as f64 + 1e-12),
            );
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * n + i].push(t as u32);
                }
            }
        }
        BucketIndex { n, buckets }
    }

    fn candidates(&self, x: f64, y: f64) -> &[u32] {
        let i = ((x * self.n as f64).max(0.0) as usize).min(self.n - 1);
        let j = ((y * self.n as f64).max(0.0) as usize).min(self.n - 1);
        &self.buckets[j * self.n + i]
    }
}

/// Nodal P1 solution over a triangulation.
#[derive(Clone, Debug)]
pub struct FemSolution {
    pub mesh: Arc<TriMesh>,
    pub nodal: Vec<f64>,
    tri_grads: Vec<[f64; 2]>,
    index: BucketIndex,
    pub iterations: usize,
    pub rel_residual: f64,
}

impl FemSolution {
    /// P1 interpolant with the given nodal values.
    pub fn from_nodal(mesh: Arc<TriMesh>, nodal: Vec<f64>) -> Result<FemSolution> {
        if nodal.len() != mesh.vertices.len() {
            return Err(Error::invalid(
                "nodal",
                format!(
                    "length {} does not match vertex count {}",
                    nodal.len(),
                    mesh.vertices.len()
                ),
            ));
        }
        if nodal.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "nodal values".into(),
            });
        }
        let tri_grads = mesh
            .triangles
            .iter()
            .map(|tri| {
                let p = tri.map(|k| mesh.vertices[k]);
                let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                    - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
                let c = tri.map(|k| nodal[k]);
                [
                    (c[0] * (p[1][1] - p[2][1])
                        + c[1] * (p[2][1] - p[0][1])
                        + c[2] * (p[0][1] - p[1][1]))
                        / det,
                    (c[0] * (p[2][0] - p[1][0])
                        + c[1] * (p[0][0] - p[2][0])
                        + c[2] * (p[1][0] - p[0][0]))
                        / det,
                ]
            })
            .collect();
        let index = BucketIndex::build(&mesh);
        Ok(FemSolution {
            mesh,
            nodal,
            tri_grads,
            index,
            iterations: 0,
            rel_residual: 0.0,
        })
    }

    fn barycentric(&self, t: usize, x: f64, y: f64) -> Option<[f64; 3]> {
        let tri = &self.mesh.triangles[t];
        let p = tri.map(|k| self.mesh.vertices[k]);
        let det =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
        let l1 = ((x - p[0][0]) * (p[2][1] - p[0][1]) - (y - p[0][1]) * (p[2][0] - p[0][0])) / det;
        let l2 = ((p[1][0] - p[0][0]) * (y - p[0][1]) - (p[1][1] - p[0][1]) * (x - p[0][0])) / det;
        let l0 = 1.0 - l1 - l2;
        if l0 >= -BARY_TOL && l1 >= -BARY_TOL && l2 >= -BARY_TOL {
            Some([l0, l1, l2])
        } else {
            None
        }
    }

    fn locate(&self, x: f64, y: f64, hint: Option<usize>) -> (usize, [f64; 3]) {
        if let Some(t) = hint {
            if let Some(b) = self.barycentric(t, x, y) {
                return (t, b);
            }
        }
        for &t in self.index.candidates(x, y) {
            if let Some(b) = self.barycentric(t as usize, x, y) {
                return (t as usize, b);
            }
        }
        // numerical fallback; in-square queries always land in some triangle
        for t in 0..self.mesh.triangles.len() {
            if let Some(b) = self.barycentric(t, x, y) {
                return (t, b);
            }
        }
        unreachable!("point ({x}, {y}) not located in any triangle");
    }

    /// Value and gradient at an in-square point; boundary ties break toward
    /// the lowest triangle index.
    pub fn eval(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        let x = x.clamp(0.0, 1.0);
        let y = y.clamp(0.0, 1.0);
        let (t, b) = self.locate(x, y, None);
        let tri = &self.mesh.triangles[t];
        let value =
            b[0] * self.nodal[tri[0]] + b[1] * self.nodal[tri[1]] + b[2] * self.nodal[tri[2]];
        (value, self.tri_grads[t])
    }

    /// Dimension of the underlying FE space is owned by the system; here the
    /// vertex count doubles as the prolongation size.
    pub fn vertex_count(&self) -> usize {
        self.mesh.vertices.len()
    }

    /// Solution values at the centers of an `n×n` reference raster.
    pub fn rasterize(&self, n: usize) -> Result<LatticeField2D> {
        let step = 1.0 / n as f64;
        let grid = GridSpec2D::with_intervals(
            [step / 2.0, step / 2.0],
            [1.0 - step, 1.0 - step],
            [n - 1, n - 1],
        )?;
        let mut hint = None;
        let values = ndarray::Array2::from_shape_fn((n, n), |(j, i)| {
            let x = (i as f64 + 0.5) * step;
            let y = (j as f64 + 0.5) * step;
            let (t, b) = self.locate(x, y, hint);
            hint = Some(t);
            let tri = &self.mesh.triangles[t];
            b[0] * self.nodal[tri[0]] + b[1] * self.nodal[tri[1]] + b[2] * self.nodal[tri[2]]
        });
        LatticeField2D::new(grid, values)
    }

    /// CSV dump of the raster (`x,y,value`).
    pub fn write_raster_csv(&self, n: usize, w: &mut impl Write) -> Result<()> {
        self.rasterize(n)?.write_csv(w)
    }
}

fn v_norm_accumulate(n: usize, mut eval_pair: impl FnMut(f64, f64) -> (f64, [f64; 2])) -> f64 {
    let step = 1.0 / n as f64;
    let cell = step * step;
    let mut acc = 0.0;
    for j in 0..n {
        let y = (j as f64 + 0.5) * step;
        for i in 0..n {
            let x = (i as f64 + 0.5) * step;
            let (dv, dg) = eval_pair(x, y);
            acc += (dv * dv + dg[0] * dg[0] + dg[1] * dg[1]) * cell;
        }
    }
    acc.sqrt()
}

/// Discrete H¹ distance between two solutions: values and gradients sampled
/// at the centers of an `n×n` grid.
pub fn v_norm_distance_with_grid(a: &FemSolution, b: &FemSolution, n: usize) -> f64 {
    let mut hint_a = None;
    let mut hint_b = None;
    v_norm_accumulate(n, |x, y| {
        let (ta, ba) = a.locate(x, y, hint_a);
        hint_a = Some(ta);
        let (tb, bb) = b.locate(x, y, hint_b);
        hint_b = Some(tb);
        let tri_a = &a.mesh.triangles[ta];
        let tri_b = &b.mesh.triangles[tb];
        let va = ba[0] * a.nodal[tri_a[0]] + ba[1] * a.nodal[tri_a[1]] + ba[2] * a.nodal[tri_a[2]];
        let vb = bb[0] * b.nodal[tri_b[0]] + bb[1] * b.nodal[tri_b[1]] + bb[2] * b.nodal[tri_b[2]];
        let ga = a.tri_grads[ta];
        let gb = b.tri_grads[tb];
        (va - vb, [ga[0] - gb[0], ga[1] - gb[1]])
    })
}

/// Discrete H¹ distance on the 800×800 reference grid.
pub fn v_norm_distance(a: &FemSolution, b: &FemSolution) -> f64 {
    v_norm_distance_with_grid(a, b, REFERENCE_GRID)
}

/// Discrete H¹ distance between a solution and a closed-form field
/// `(value, gradient)`, on the reference grid.
pub fn v_norm_distance_to_fn(a: &FemSolution, exact: impl Fn(f64, f64) -> (f64, [f64; 2])) -> f64 {
    let mut hint = None;
    v_norm_accumulate(REFERENCE_GRID, |x, y| {
        let (t, b) = a.locate(x, y, hint);
        hint = Some(t);
        let tri = &a.mesh.triangles[t];
        let v = b[0] * a.nodal[tri[0]] + b[1] * a.nodal[tri[1]] + b[2] * a.nodal[tri[2]];
        let g = a.tri_grads[t];
        let (ev, eg) = exact(x, y);
        (v - ev, [g[0] - eg[0], g[1] - eg[1]])
    })
}
