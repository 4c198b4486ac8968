//! Stationary Gaussian random fields on equidistant 2-D grids.
//!
//! Fields are sampled exactly in distribution by circulant embedding
//! ([`GrfSampler`]) and evaluated between nodes by bilinear interpolation,
//! which attains its extrema at cell corners and so inherits the field's
//! pathwise bounds.

mod circulant;

pub use circulant::{sample_grf, GrfSampler};

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariance family. Only the Matérn class is supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceFamily {
    Matern,
}

/// Isotropic stationary covariance model with fixed smoothness ν = 3/2.
///
/// Parametrization: `cov(d) = σ²·(1 + √3·d/r)·exp(−√3·d/r)`, so that `r` is
/// the correlation length and `cov(0) = σ²`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub family: CovarianceFamily,
    /// Smoothness ν; fixed to 3/2.
    pub smoothness: f64,
    /// Pointwise variance σ².
    pub variance: f64,
    /// Correlation length r.
    pub correlation_length: f64,
}

impl CovarianceModel {
    /// Matérn-3/2 model. `variance` may be zero (degenerate field);
    /// `correlation_length` must be positive.
    pub fn matern_three_halves(variance: f64, correlation_length: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::invalid("variance", "must be finite and >= 0"));
        }
        if !(correlation_length > 0.0) || !correlation_length.is_finite() {
            return Err(Error::invalid(
                "correlation_length",
                "must be finite and > 0",
            ));
        }
        Ok(CovarianceModel {
            family: CovarianceFamily::Matern,
            smoothness: 1.5,
            variance,
            correlation_length,
        })
    }

    /// Covariance at separation distance `d >= 0`.
    pub fn eval(&self, d: f64) -> Result<f64> {
        if !(d >= 0.0) {
            return Err(Error::OutOfDomain {
                name: "distance",
                value: d,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        let s = 3f64.sqrt() * d / self.correlation_length;
        Ok(self.variance * (1.0 + s) * (-s).exp())
    }
}

/// Covariance evaluated at distance `d`.
pub fn cov_eval(model: &CovarianceModel, d: f64) -> Result<f64> {
    model.eval(d)
}

/// Equidistant rectangular grid on `[x0, x0+Lx] × [y0, y0+Ly]`.
///
/// Node counts are `⌈L/step⌉ + 1` per axis so the realized step never
/// exceeds the requested one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec2D {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    /// Requested maximum step.
    pub step: f64,
    /// Node counts per axis (x, y).
    pub nodes: [usize; 2],
}

impl GridSpec2D {
    pub fn new(origin: [f64; 2], extent: [f64; 2], step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid("step", "must be finite and > 0"));
        }
        for (i, &l) in extent.iter().enumerate() {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::invalid(
                    if i == 0 { "extent.x" } else { "extent.y" },
                    "must be finite and > 0",
                ));
            }
        }
        let intervals = |l: f64| {
            // Relative guard so e.g. 1/0.025 that rounds to 40.0000…01 still
            // yields 40 intervals.
            ((l / step) * (1.0 - 1e-12)).ceil() as usize
        };
        let nodes = [intervals(extent[0]) + 1, intervals(extent[1]) + 1];
        Ok(GridSpec2D {
            origin,
            extent,
            step,
            nodes,
        })
    }

    /// Grid with an explicit interval count per axis; the stored step is the
    /// realized one.
    pub fn with_intervals(
        origin: [f64; 2],
        extent: [f64; 2],
        intervals: [usize; 2],
    ) -> Result<Self> {
        if intervals[0] == 0 || intervals[1] == 0 {
            return Err(Error::invalid("intervals", "must be >= 1 per axis"));
        }
        let step = (extent[0] / intervals[0] as f64).max(extent[1] / intervals[1] as f64);
        Ok(GridSpec2D {
            origin,
            extent,
            step,
            nodes: [intervals[0] + 1, intervals[1] + 1],
        })
    }

    /// Realized step along x.
    pub fn dx(&self) -> f64 {
        self.extent[0] / (self.nodes[0] - 1) as f64
    }

    /// Realized step along y.
    pub fn dy(&self) -> f64 {
        self.extent[1] / (self.nodes[1] - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.origin[1] + j as f64 * self.dy()
    }

    /// True if `[0,a]×[0,b]`-style box queries stay inside this grid.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let sx = 1e-9 * self.extent[0].max(1.0);
        let sy = 1e-9 * self.extent[1].max(1.0);
        x >= self.origin[0] - sx
            && x <= self.origin[0] + self.extent[0] + sx
            && y >= self.origin[1] - sy
            && y <= self.origin[1] + self.extent[1] + sy
    }
}

/// Field values on a [`GridSpec2D`], stored row-major with shape `(ny, nx)`
/// (`values[(j, i)]` is the node at `x_i, y_j`).
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeField2D {
    pub grid: GridSpec2D,
    pub values: Array2<f64>,
}

impl LatticeField2D {
    pub fn new(grid: GridSpec2D, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.nodes[1], grid.nodes[0]) {
            return Err(Error::Format(format!(
                "values shape {:?} does not match grid nodes (ny={}, nx={})",
                values.dim(),
                grid.nodes[1],
                grid.nodes[0]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "lattice field values".into(),
            });
        }
        Ok(LatticeField2D { grid, values })
    }

    /// Constant-zero field.
    pub fn zeros(grid: GridSpec2D) -> Self {
        let values = Array2::zeros((grid.nodes[1], grid.nodes[0]));
        LatticeField2D { grid, values }
    }

    /// Bilinear interpolant of the four surrounding nodes. Queries must lie
    /// inside the grid bounding box (up to a small relative slack).
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let g = &self.grid;
        if !g.covers(x, y) {
            return Err(Error::OutOfDomain {
                name: "query",
                value: if x < g.origin[0] || x > g.origin[0] + g.extent[0] {
                    x
                } else {
                    y
                },
                min: g.origin[0].min(g.origin[1]),
                max: (g.origin[0] + g.extent[0]).max(g.origin[1] + g.extent[1]),
            });
        }
        let (nx, ny) = (g.nodes[0], g.nodes[1]);
        let fx = ((x - g.origin[0]) / g.dx()).clamp(0.0, (nx - 1) as f64);
        let fy = ((y - g.origin[1]) / g.dy()).clamp(0.0, (ny - 1) as f64);
        let i = (fx.floor() as usize).min(nx - 2);
        let j = (fy.floor() as usize).min(ny - 2);
        let t = fx - i as f64;
        let u = fy - j as f64;
        let v = &self.values;
        Ok((1.0 - t) * (1.0 - u) * v[(j, i)]
            + t * (1.0 - u) * v[(j, i + 1)]
            + (1.0 - t) * u * v[(j + 1, i)]
            + t * u * v[(j + 1, i + 1)])
    }

    /// Subsampled field on step `factor·dx`; the retained nodes coincide
    /// exactly with fine nodes. `factor` must divide both interval counts.
    pub fn restrict(&self, factor: usize) -> Result<LatticeField2D> {
        let g = &self.grid;
        let intervals = [g.nodes[0] - 1, g.nodes[1] - 1];
        if factor == 0 || intervals[0] % factor != 0 || intervals[1] % factor != 0 {
            return Err(Error::NonDivisibleFactor { factor, intervals });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let coarse = GridSpec2D::with_intervals(
            g.origin,
            g.extent,
            [intervals[0] / factor, intervals[1] / factor],
        )?;
        let (cnx, cny) = (coarse.nodes[0], coarse.nodes[1]);
        let values =
            Array2::from_shape_fn((cny, cnx), |(j, i)| self.values[(j * factor, i * factor)]);
        Ok(LatticeField2D {
            grid: coarse,
            values,
        })
    }

    /// Maximum node value.
    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Flat binary container: header `x0, y0, Lx, Ly, step` as little-endian
    /// f64 and `nx, ny` as little-endian u64, then `ny·nx` row-major
    /// little-endian f64 values.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        let g = &self.grid;
        for v in [g.origin[0], g.origin[1], g.extent[0], g.extent[1], g.step] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(g.nodes[0] as u64).to_le_bytes())?;
        w.write_all(&(g.nodes[1] as u64).to_le_bytes())?;
        for row in self.values.rows() {
            for &v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<LatticeField2D> {
        let mut f = [0u8; 8];
        let mut next_f64 = |r: &mut dyn Read| -> Result<f64> {
            r.read_exact(&mut f)?;
            Ok(f64::from_le_bytes(f))
        };
        let x0 = next_f64(r)?;
        let y0 = next_f64(r)?;
        let lx = next_f64(r)?;
        let ly = next_f64(r)?;
        let step = next_f64(r)?;
        let mut u = [0u8; 8];
        r.read_exact(&mut u)?;
        let nx = u64::from_le_bytes(u) as usize;
        r.read_exact(&mut u)?;
        let ny = u64::from_le_bytes(u) as usize;
        if nx < 2 || ny < 2 || nx.checked_mul(ny).is_none() {
            return Err(Error::Format(format!("bad node counts ({nx}, {ny})")));
        }
        let mut values = Array2::zeros((ny, nx));
        for j in 0..ny {
            for i in 0..nx {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                values[(j, i)] = f64::from_le_bytes(b);
            }
        }
        let grid = GridSpec2D {
            origin: [x0, y0],
            extent: [lx, ly],
            step,
            nodes: [nx, ny],
        };
        LatticeField2D::new(grid, values)
    }

    /// CSV dump (`x,y,value`) for inspection.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "x,y,value")?;
        for j in 0..self.grid.nodes[1] {
            for i in 0..self.grid.nodes[0] {
                writeln!(
                    w,
                    "{},{},{}",
                    self.grid.x(i),
                    self.grid.y(j),
                    self.values[(j, i)]
                )?;
            }
        }
        Ok(())
    }
}
