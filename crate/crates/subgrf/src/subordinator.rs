//! Lévy subordinators on a finite horizon: exact Poisson paths via the
//! Uniform Method, grid-increment paths for Poisson and Gamma processes,
//! càdlàg piecewise-constant evaluation, clipping, tail probabilities and
//! moments.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};

/// Subordinator law. Rates are per unit length of the parameter interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SubordinatorLaw {
    /// Unit jumps at intensity λ; Lévy triplet (0, 0, λ·δ₁).
    Poisson { rate: f64 },
    /// Gamma process: increments over Δ are Gamma(shape·Δ, rate)-distributed;
    /// Lévy triplet (γ_l, 0, ν) with ν(dy) = shape·y⁻¹e^{−rate·y}dy.
    Gamma { shape: f64, rate: f64 },
}

impl SubordinatorLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SubordinatorLaw::Poisson { rate } => {
                if !(rate > 0.0) || !rate.is_finite() {
                    return Err(Error::invalid(
                        "rate",
                        "Poisson intensity must be finite and > 0",
                    ));
                }
            }
            SubordinatorLaw::Gamma { shape, rate } => {
                if !(shape > 0.0) || !shape.is_finite() {
                    return Err(Error::invalid(
                        "shape",
                        "Gamma shape must be finite and > 0",
                    ));
                }
                if !(rate > 0.0) || !rate.is_finite() {
                    return Err(Error::invalid("rate", "Gamma rate must be finite and > 0"));
                }
            }
        }
        Ok(())
    }
}

/// How a path was produced; grid paths carry their step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PathRepr {
    ExactJumps,
    GridIncrements { step: f64 },
}

/// Non-decreasing càdlàg piecewise-constant path on `[0, D]` with `l(0) = 0`.
///
/// `ExactJumps`: breakpoints are the jump locations with cumulative post-jump
/// values. `GridIncrements`: breakpoints are the grid `0 = x₀ < … < x_N = D`
/// with cumulative values; evaluation uses the piecewise-constant extension
/// `l(x) = l(xᵢ)` on `[xᵢ, xᵢ₊₁)` and `l(D) = l(x_{N−1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorPath {
    pub horizon: f64,
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub repr: PathRepr,
    /// Multiplicative factor applied at evaluation (downscaled processes).
    pub scale: f64,
}

/// Largest per-draw Poisson mean the inverse-cdf scan handles; beyond this
/// `exp(-mean)` underflows and the cdf recursion breaks down.
const MAX_POISSON_MEAN: f64 = 700.0;

fn check_poisson_mean(mean: f64) -> Result<()> {
    if mean > MAX_POISSON_MEAN {
        return Err(Error::invalid(
            "rate",
            format!("Poisson mean {mean} exceeds the inverse-cdf sampler range ({MAX_POISSON_MEAN})"),
        ));
    }
    Ok(())
}

/// Inverse-cdf Poisson draw; deterministic given the rng stream, one uniform
/// per sample.
fn poisson_inverse_cdf(mean: f64, rng: &mut impl Rng) -> u64 {
    debug_assert!((0.0..=MAX_POISSON_MEAN).contains(&mean));
    if mean == 0.0 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut pmf = (-mean).exp();
    let mut cdf = pmf;
    // Hard cap far beyond any realistic quantile at the rates used here.
    let cap = (mean + 40.0 * mean.sqrt() + 60.0) as u64;
    while u > cdf && k < cap {
        k += 1;
        pmf *= mean / k as f64;
        cdf += pmf;
    }
    k
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid("horizon", "must be finite and > 0"));
    }
    Ok(())
}

/// Exact Poisson path on `[0, D]` by the Uniform Method: a Poisson(λD) jump
/// count with uniformly distributed jump locations, unit jump heights.
pub fn sample_poisson_exact(
    rate: f64,
    horizon: f64,
    rng: &mut impl Rng,
) -> Result<SubordinatorPath> {
    SubordinatorLaw::Poisson { rate }.validate()?;
    check_horizon(horizon)?;
    let n = poisson_inverse_cdf(rate * horizon, rng) as usize;
    let mut jumps: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * horizon).collect();
    jumps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    jumps.dedup();
    let values = (1..=jumps.len()).map(|k| k as f64).collect();
    Ok(SubordinatorPath {
        horizon,
        breakpoints: jumps,
        values,
        repr: PathRepr::ExactJumps,
        scale: 1.0,
    })
}

/// Grid path with `⌈D/ε_l⌉` equal steps (realized step ≤ ε_l), built as
/// cumulative sums of independent increments.
pub fn sample_path_grid(
    law: SubordinatorLaw,
    eps_l: f64,
    horizon: f64,
    rng: &mut impl Rng,
) -> Result<SubordinatorPath> {
    check_horizon(horizon)?;
    if !(eps_l > 0.0) || eps_l > horizon * (1.0 + 1e-12) {
        return Err(Error::invalid("eps_l", "must satisfy 0 < eps_l <= horizon"));
    }
    let n = ((horizon / eps_l) * (1.0 - 1e-12)).ceil() as usize;
    sample_path_grid_intervals(law, n.max(1), horizon, rng)
}

/// Grid path with an explicit interval count (used for nested coupling).
pub fn sample_path_grid_intervals(
    law: SubordinatorLaw,
    intervals: usize,
    horizon: f64,
    rng: &mut impl Rng,
) -> Result<SubordinatorPath> {
    law.validate()?;
    check_horizon(horizon)?;
    if intervals == 0 {
        return Err(Error::invalid("intervals", "must be >= 1"));
    }
    let n = intervals;
    let step = horizon / n as f64;
    let mut breakpoints = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    breakpoints.push(0.0);
    values.push(0.0);
    match law {
        SubordinatorLaw::Poisson { rate } => {
            let mean = rate * step;
            for i in 1..=n {
                acc += poisson_inverse_cdf(mean, rng) as f64;
                breakpoints.push(if i == n { horizon } else { i as f64 * step });
                values.push(acc);
            }
        }
        SubordinatorLaw::Gamma { shape, rate } => {
            // rand_distr parametrizes Gamma by (shape, scale); scale = 1/rate.
            let inc = GammaDist::new(shape * step, 1.0 / rate)
                .map_err(|e| Error::invalid("shape", e.to_string()))?;
            for i in 1..=n {
                acc += inc.sample(rng);
                breakpoints.push(if i == n { horizon } else { i as f64 * step });
                values.push(acc);
            }
        }
    }
    Ok(SubordinatorPath {
        horizon,
        breakpoints,
        values,
        repr: PathRepr::GridIncrements { step },
        scale: 1.0,
    })
}

/// `min(z, threshold)` — the cut function χ_K.
pub fn clip(z: f64, threshold: f64) -> f64 {
    debug_assert!(z >= 0.0 && threshold > 0.0);
    z.min(threshold)
}

impl SubordinatorPath {
    /// Càdlàg evaluation at `x ∈ [0, D]`, multiplied by the scale factor.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let slack = 1e-12 * self.horizon.max(1.0);
        if x < -slack || x > self.horizon + slack {
            return Err(Error::OutOfDomain {
                name: "x",
                value: x,
                min: 0.0,
                max: self.horizon,
            });
        }
        let x = x.clamp(0.0, self.horizon);
        match self.repr {
            PathRepr::ExactJumps => {
                // number of jumps with location <= x (post-jump value at x)
                let k = self.breakpoints.partition_point(|&b| b <= x);
                Ok(if k == 0 {
                    0.0
                } else {
                    self.values[k - 1] * self.scale
                })
            }
            PathRepr::GridIncrements { .. } => {
                let n = self.breakpoints.len() - 1;
                // endpoint rule: l(D) = l(x_{N−1})
                let i = if x >= self.horizon {
                    n - 1
                } else {
                    self.breakpoints.partition_point(|&b| b <= x) - 1
                };
                Ok(self.values[i.min(n - 1)] * self.scale)
            }
        }
    }

    /// Terminal value `l(D)`.
    pub fn terminal(&self) -> f64 {
        match self.repr {
            PathRepr::ExactJumps => self.values.last().copied().unwrap_or(0.0) * self.scale,
            PathRepr::GridIncrements { .. } => {
                let n = self.breakpoints.len() - 1;
                self.values[n - 1] * self.scale
            }
        }
    }

    /// Path with all evaluations multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<SubordinatorPath> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::invalid("factor", "scale must be finite and > 0"));
        }
        let mut p = self.clone();
        p.scale *= factor;
        Ok(p)
    }

    /// Locations in `(0, D)` where evaluation changes value: jump locations
    /// for exact paths, value-change grid breakpoints for grid paths.
    pub fn value_change_points(&self) -> Vec<f64> {
        match self.repr {
            PathRepr::ExactJumps => self.breakpoints.clone(),
            PathRepr::GridIncrements { .. } => {
                let n = self.breakpoints.len() - 1;
                // x_N = D is never an interior change point; the extension is
                // constant on [x_{N−1}, D].
                (1..n)
                    .filter(|&i| self.values[i] != self.values[i - 1])
                    .map(|i| self.breakpoints[i])
                    .collect()
            }
        }
    }

    /// Keep every `factor`-th breakpoint of a grid path (coupled coarsening).
    pub fn restrict_grid(&self, factor: usize) -> Result<SubordinatorPath> {
        let step = match self.repr {
            PathRepr::GridIncrements { step } => step,
            PathRepr::ExactJumps => {
                return Err(Error::invalid("path", "restrict_grid requires a grid path"))
            }
        };
        let n = self.breakpoints.len() - 1;
        if factor == 0 || n % factor != 0 {
            return Err(Error::NonDivisibleFactor {
                factor,
                intervals: [n, n],
            });
        }
        let breakpoints = (0..=n / factor)
            .map(|i| self.breakpoints[i * factor])
            .collect();
        let values = (0..=n / factor).map(|i| self.values[i * factor]).collect();
        Ok(SubordinatorPath {
            horizon: self.horizon,
            breakpoints,
            values,
            repr: PathRepr::GridIncrements {
                step: step * factor as f64,
            },
            scale: self.scale,
        })
    }

    /// CSV dump: `breakpoint,value,repr,scale` rows (evaluated values).
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let tag = match self.repr {
            PathRepr::ExactJumps => "exact".to_string(),
            PathRepr::GridIncrements { step } => format!("grid({step})"),
        };
        writeln!(w, "breakpoint,value,repr,scale")?;
        for (b, v) in self.breakpoints.iter().zip(&self.values) {
            writeln!(w, "{},{},{},{}", b, v * self.scale, tag, self.scale)?;
        }
        Ok(())
    }
}

/// Exact survival probability `P(l(D) ≥ K)` for the law's terminal value.
///
/// Poisson: the paper's reported values correspond to the strict integer
/// tail, so this computes `P(N ≥ ⌊K⌋+1)` (identical to `P(N ≥ ⌈K⌉)` for
/// non-integer K). Gamma: regularized upper incomplete gamma `Q(a·D, b·K)`.
pub fn tail_probability(law: SubordinatorLaw, threshold: f64, horizon: f64) -> Result<f64> {
    law.validate()?;
    check_horizon(horizon)?;
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::invalid("threshold", "must be finite and > 0"));
    }
    match law {
        SubordinatorLaw::Poisson { rate } => {
            let mean = rate * horizon;
            let k = threshold.floor() as f64 + 1.0;
            // P(N >= k) = P(Gamma(k,1) <= mean), the Poisson-gamma identity.
            Ok(gamma_lr(k, mean))
        }
        SubordinatorLaw::Gamma { shape, rate } => Ok(gamma_ur(shape * horizon, rate * threshold)),
    }
}

/// Raw moment `E(Zⁿ)` of a Gamma(shape, rate) variable: the rising product
/// `shape·(shape+1)⋯(shape+n−1) / rateⁿ`.
pub fn gamma_raw_moment(shape: f64, rate: f64, n: u32) -> Result<f64> {
    SubordinatorLaw::Gamma { shape, rate }.validate()?;
    let mut m = 1.0;
    for k in 0..n {
        m *= (shape + k as f64) / rate;
    }
    Ok(m)
}
