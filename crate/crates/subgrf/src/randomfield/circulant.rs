//! Circulant embedding sampler for stationary fields on rectangular grids.
//!
//! The covariance restricted to the grid is embedded into a block-circulant
//! matrix on an even periodic torus, diagonalized by the 2-D FFT. One FFT of
//! `sqrt(Λ/m) ⊙ (ξ₁ + iξ₂)` with i.i.d. standard normal `ξ` yields two
//! independent fields in its real and imaginary parts; both are handed out to
//! halve the per-sample cost.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};

use super::{CovarianceModel, GridSpec2D, LatticeField2D};

/// Relative clamp threshold for round-off negative eigenvalues.
const EIG_CLAMP_REL: f64 = 1e-12;

/// Padding multipliers applied to the base torus `2(n−1)` before the
/// embedding is declared not positive semidefinite.
const PAD_MULTIPLIERS: [usize; 4] = [1, 2, 4, 8];

/// Smallest 2^a·3^b·5^c ≥ n, for friendly FFT lengths.
fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// In-place 2-D FFT: rows with `fft_x`, then columns via a transposed pass.
fn fft2(buf: &mut Array2<Complex<f64>>, fft_x: &Arc<dyn Fft<f64>>, fft_y: &Arc<dyn Fft<f64>>) {
    let (my, mx) = buf.dim();
    let mut scratch = vec![Complex::default(); fft_x.get_inplace_scratch_len()];
    for mut row in buf.rows_mut() {
        let slice = row.as_slice_mut().expect("row-major layout");
        fft_x.process_with_scratch(slice, &mut scratch);
    }
    let mut col = vec![Complex::default(); my];
    let mut scratch_y = vec![Complex::default(); fft_y.get_inplace_scratch_len()];
    for i in 0..mx {
        for j in 0..my {
            col[j] = buf[(j, i)];
        }
        fft_y.process_with_scratch(&mut col, &mut scratch_y);
        for j in 0..my {
            buf[(j, i)] = col[j];
        }
    }
}

/// Reusable circulant-embedding sampler for one `(grid, model)` pair.
///
/// Construction computes the torus eigenvalues once; each [`sample_pair`]
/// afterwards costs one FFT. Sampling is pure given the rng stream, so a
/// sampler can be shared read-only across threads through [`sample_pair`];
/// [`sample`] keeps the spare half of the last pair and is `&mut`.
///
/// [`sample_pair`]: GrfSampler::sample_pair
/// [`sample`]: GrfSampler::sample
pub struct GrfSampler {
    grid: GridSpec2D,
    model: CovarianceModel,
    torus: [usize; 2],
    /// `sqrt(Λ / (mx·my))`, shape `(my, mx)`.
    sqrt_eig_scaled: Array2<f64>,
    fft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    pending: Option<Array2<f64>>,
}

impl GrfSampler {
    pub fn new(grid: GridSpec2D, model: CovarianceModel) -> Result<Self> {
        let (nx, ny) = (grid.nodes[0], grid.nodes[1]);
        let (dx, dy) = (grid.dx(), grid.dy());
        let mut planner = FftPlanner::new();
        let mut worst: Option<([usize; 2], f64)> = None;

        for mult in PAD_MULTIPLIERS {
            let mx = next_fast_len(2 * (nx - 1) * mult);
            let my = next_fast_len(2 * (ny - 1) * mult);
            let fft_x = planner.plan_fft_forward(mx);
            let fft_y = planner.plan_fft_forward(my);

            // First row of the block circulant: covariance at torus distances.
            let mut buf = Array2::from_shape_fn((my, mx), |(j, i)| {
                let di = i.min(mx - i) as f64 * dx;
                let dj = j.min(my - j) as f64 * dy;
                let d = di.hypot(dj);
                Complex::new(model.eval(d).expect("d >= 0"), 0.0)
            });
            fft2(&mut buf, &fft_x, &fft_y);

            let mut min_eig = f64::INFINITY;
            let mut max_eig = 0.0f64;
            for v in buf.iter() {
                min_eig = min_eig.min(v.re);
                max_eig = max_eig.max(v.re);
            }
            if min_eig >= -EIG_CLAMP_REL * max_eig {
                let scale = 1.0 / (mx as f64 * my as f64);
                let sqrt_eig_scaled =
                    Array2::from_shape_fn((my, mx), |idx| (buf[idx].re.max(0.0) * scale).sqrt());
                return Ok(GrfSampler {
                    grid,
                    model,
                    torus: [mx, my],
                    sqrt_eig_scaled,
                    fft_x,
                    fft_y,
                    pending: None,
                });
            }
            worst = Some(([mx, my], min_eig.abs()));
        }

        let (torus, most_negative) = worst.expect("at least one attempt");
        Err(Error::EmbeddingNotPsd {
            torus,
            most_negative,
        })
    }

    pub fn grid(&self) -> &GridSpec2D {
        &self.grid
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    /// Two independent draws from one FFT (real and imaginary parts).
    pub fn sample_pair(&self, rng: &mut impl Rng) -> (LatticeField2D, LatticeField2D) {
        let [mx, my] = self.torus;
        let (nx, ny) = (self.grid.nodes[0], self.grid.nodes[1]);
        let mut buf = Array2::from_shape_fn((my, mx), |idx| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            let s = self.sqrt_eig_scaled[idx];
            Complex::new(s * a, s * b)
        });
        fft2(&mut buf, &self.fft_x, &self.fft_y);
        let re = Array2::from_shape_fn((ny, nx), |idx| buf[idx].re);
        let im = Array2::from_shape_fn((ny, nx), |idx| buf[idx].im);
        (
            LatticeField2D {
                grid: self.grid,
                values: re,
            },
            LatticeField2D {
                grid: self.grid,
                values: im,
            },
        )
    }

    /// One draw; alternates between the halves of internally drawn pairs so
    /// consecutive calls consume one FFT per two samples.
    pub fn sample(&mut self, rng: &mut impl Rng) -> LatticeField2D {
        if let Some(values) = self.pending.take() {
            return LatticeField2D {
                grid: self.grid,
                values,
            };
        }
        let (first, second) = self.sample_pair(rng);
        self.pending = Some(second.values);
        first
    }
}

/// Single draw from a fresh embedding. Prefer [`GrfSampler`] when drawing
/// repeatedly: the eigenvalue precomputation is reused there.
pub fn sample_grf(
    grid: GridSpec2D,
    model: CovarianceModel,
    rng: &mut impl Rng,
) -> Result<LatticeField2D> {
    let mut sampler = GrfSampler::new(grid, model)?;
    Ok(sampler.sample(rng))
}
