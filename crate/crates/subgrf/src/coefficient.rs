//! The jump-diffusion coefficient: a bounded base plus a smooth Gaussian
//! term and a subordinated Gaussian term with axis-aligned discontinuities,
//! truncated by the subordinator cut-off K and the coefficient cut-off A.
//!
//! Evaluation composes exactly in the order
//! `χ_A(ā(x,y) + Φ₁(W₁(x,y)) + Φ₂(W₂(χ_K(l₁(x)), χ_K(l₂(y)))))`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::randomfield::{GrfSampler, GridSpec2D, LatticeField2D};
use crate::subordinator::{clip, SubordinatorPath};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type FieldFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Declared growth constants for custom transforms; trusted, not verified.
#[derive(Clone, Copy, Debug)]
pub struct GrowthBounds {
    /// φ̃ with |Φ(x)| ≤ φ̃·exp(ψ̃|x|).
    pub exp_amplitude: f64,
    /// ψ̃ in the exponential envelope.
    pub exp_rate: f64,
    /// φ₂ with |Φ(x)| ≤ φ₂(1+|x|), when the transform is linearly bounded.
    pub linear_amplitude: Option<f64>,
}

/// Non-negative transform applied to a Gaussian field value.
#[derive(Clone)]
pub enum Transform {
    Zero,
    /// `x ↦ amplitude·exp(x)`; derivative bounded by amplitude·e^{|x|}.
    ScaledExp {
        amplitude: f64,
    },
    /// `x ↦ slope·|x|`; globally Lipschitz with constant `slope`.
    ScaledAbs {
        slope: f64,
    },
    /// Arbitrary non-negative function with declared growth constants.
    Custom {
        f: ScalarFn,
        growth: GrowthBounds,
    },
}

impl fmt::Debug for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Zero => write!(f, "Zero"),
            Transform::ScaledExp { amplitude } => write!(f, "ScaledExp({amplitude})"),
            Transform::ScaledAbs { slope } => write!(f, "ScaledAbs({slope})"),
            Transform::Custom { growth, .. } => write!(f, "Custom({growth:?})"),
        }
    }
}

impl Transform {
    pub fn scaled_exp(amplitude: f64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::invalid("amplitude", "must be finite and >= 0"));
        }
        Ok(Transform::ScaledExp { amplitude })
    }

    pub fn scaled_abs(slope: f64) -> Result<Self> {
        if !(slope >= 0.0) || !slope.is_finite() {
            return Err(Error::invalid("slope", "must be finite and >= 0"));
        }
        Ok(Transform::ScaledAbs { slope })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Transform::Zero => 0.0,
            Transform::ScaledExp { amplitude } => amplitude * x.exp(),
            Transform::ScaledAbs { slope } => slope * x.abs(),
            Transform::Custom { f, .. } => f(x),
        }
    }

    /// Envelope constants (φ̃, ψ̃) with |Φ(x)| ≤ φ̃·e^{ψ̃|x|}.
    pub fn exp_growth(&self) -> (f64, f64) {
        match self {
            Transform::Zero => (0.0, 1.0),
            Transform::ScaledExp { amplitude } => (*amplitude, 1.0),
            Transform::ScaledAbs { slope } => (*slope, 1.0), // |x| <= e^{|x|}
            Transform::Custom { growth, .. } => (growth.exp_amplitude, growth.exp_rate),
        }
    }

    /// φ₂ with |Φ(x)| ≤ φ₂(1+|x|), when available.
    pub fn linear_growth(&self) -> Option<f64> {
        match self {
            Transform::Zero => Some(0.0),
            Transform::ScaledExp { .. } => None,
            Transform::ScaledAbs { slope } => Some(*slope),
            Transform::Custom { growth, .. } => growth.linear_amplitude,
        }
    }
}

/// Deterministic continuous base ā with declared bounds 0 < ā₋ ≤ ā ≤ ā₊.
#[derive(Clone)]
pub enum BaseCoefficient {
    Constant(f64),
    Custom { f: FieldFn, lower: f64, upper: f64 },
}

impl fmt::Debug for BaseCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaseCoefficient::Constant(c) => write!(f, "Constant({c})"),
            BaseCoefficient::Custom { lower, upper, .. } => {
                write!(f, "Custom[{lower}, {upper}]")
            }
        }
    }
}

impl BaseCoefficient {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::invalid("base", "must be finite and > 0"));
        }
        Ok(BaseCoefficient::Constant(value))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            BaseCoefficient::Constant(c) => *c,
            BaseCoefficient::Custom { f, .. } => f(x, y),
        }
    }

    pub fn lower(&self) -> f64 {
        match self {
            BaseCoefficient::Constant(c) => *c,
            BaseCoefficient::Custom { lower, .. } => *lower,
        }
    }

    pub fn upper(&self) -> f64 {
        match self {
            BaseCoefficient::Constant(c) => *c,
            BaseCoefficient::Custom { upper, .. } => *upper,
        }
    }
}

/// One realization of the approximated diffusion coefficient, evaluable at
/// any point of the closed unit square. Immutable after assembly; evaluation
/// is pure and safe for concurrent read-only use.
#[derive(Clone, Debug)]
pub struct CoefficientSample {
    pub base: BaseCoefficient,
    pub phi1: Transform,
    pub phi2: Transform,
    pub w1: LatticeField2D,
    pub w2: LatticeField2D,
    pub l1: SubordinatorPath,
    pub l2: SubordinatorPath,
    /// Subordinator cut-off K.
    pub k_cut: f64,
    /// Coefficient cut-off A; `f64::INFINITY` represents the untruncated a_K.
    pub a_cut: f64,
}

impl CoefficientSample {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base: BaseCoefficient,
        phi1: Transform,
        phi2: Transform,
        w1: LatticeField2D,
        w2: LatticeField2D,
        l1: SubordinatorPath,
        l2: SubordinatorPath,
        k_cut: f64,
        a_cut: f64,
    ) -> Result<Self> {
        if !(base.lower() > 0.0) || base.lower() > base.upper() {
            return Err(Error::invalid("base", "requires 0 < lower <= upper"));
        }
        if !(k_cut > 0.0) || !k_cut.is_finite() {
            return Err(Error::invalid("k_cut", "must be finite and > 0"));
        }
        if !(a_cut > 0.0) {
            return Err(Error::invalid("a_cut", "must be > 0 (may be +inf)"));
        }
        if !w1.grid.covers(0.0, 0.0) || !w1.grid.covers(1.0, 1.0) {
            return Err(Error::invalid("w1", "lattice must cover the unit square"));
        }
        if !w2.grid.covers(0.0, 0.0) || !w2.grid.covers(k_cut, k_cut) {
            return Err(Error::invalid("w2", "lattice must cover [0, K]^2"));
        }
        if l1.horizon < 1.0 - 1e-12 || l2.horizon < 1.0 - 1e-12 {
            return Err(Error::invalid("paths", "horizon must cover [0, 1]"));
        }
        Ok(CoefficientSample {
            base,
            phi1,
            phi2,
            w1,
            w2,
            l1,
            l2,
            k_cut,
            a_cut,
        })
    }

    /// Exact composition in the displayed order: paths → clip by K → W₂
    /// lookup → Φ₂, plus Φ₁(W₁) and ā, clipped by A.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let z1 = clip(self.l1.eval(x).expect("x in [0,1]"), self.k_cut);
        let z2 = clip(self.l2.eval(y).expect("y in [0,1]"), self.k_cut);
        let w2v = self
            .w2
            .eval(z1, z2)
            .expect("clipped point inside W2 lattice");
        let w1v = self.w1.eval(x, y).expect("point inside W1 lattice");
        let raw = self.base.eval(x, y) + self.phi1.eval(w1v) + self.phi2.eval(w2v);
        raw.min(self.a_cut)
    }

    /// Axis-aligned discontinuity lines: x-locations where l₁ changes value
    /// and y-locations where l₂ does. Between consecutive lines the
    /// subordinated term is continuous.
    pub fn jump_lines(&self) -> (Vec<f64>, Vec<f64>) {
        (self.l1.value_change_points(), self.l2.value_change_points())
    }

    /// Declared lower bound ā₋ (uniform ellipticity constant).
    pub fn lower_bound(&self) -> f64 {
        self.base.lower()
    }

    /// Coefficient values on an `(intervals+1)²` node raster of the unit
    /// square, reusing the lattice container for CSV/binary export.
    pub fn rasterize(&self, intervals: usize) -> Result<LatticeField2D> {
        let grid = GridSpec2D::with_intervals([0.0, 0.0], [1.0, 1.0], [intervals, intervals])?;
        let n = intervals + 1;
        let values =
            ndarray::Array2::from_shape_fn((n, n), |(j, i)| self.eval(grid.x(i), grid.y(j)));
        LatticeField2D::new(grid, values)
    }
}

/// Monte Carlo estimate of `E(sup over lattice nodes)` together with the
/// exact lattice sup of the pointwise variance (σ² for stationary fields).
pub fn estimate_sup_mean(
    sampler: &mut GrfSampler,
    n_draws: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if n_draws < 100 {
        return Err(Error::invalid("n_draws", "need at least 100 draws"));
    }
    let mut acc = 0.0;
    for _ in 0..n_draws {
        acc += sampler.sample(rng).max_value();
    }
    Ok((acc / n_draws as f64, sampler.model().variance))
}

/// Inputs for the coefficient cut-off selection.
#[derive(Clone, Copy, Debug)]
pub struct CutoffInputs {
    /// Truncation error target δ ∈ (0, 1).
    pub delta: f64,
    /// Moment order s ≥ 1.
    pub s: f64,
    /// E(sup W₁) and sup pointwise variance of W₁ over the domain.
    pub mu1: f64,
    pub sigma_d_sq: f64,
    /// E(sup W₂) and sup pointwise variance of W₂ over [0, K]².
    pub mu2: f64,
    pub sigma_k_sq: f64,
    /// Upper bound ā₊ of the base coefficient.
    pub abar_upper: f64,
    /// Envelope constants: |Φ₁(x)| ≤ φ̃·e^{ψ̃|x|} and |Φ₂(x)| ≤ φ₂(1+|x|).
    pub phi1_exp_amplitude: f64,
    pub phi1_exp_rate: f64,
    pub phi2_linear: f64,
    /// Moment bound C_{aK}(2s, K, D); must exceed δ^{2s}.
    pub moment_bound: f64,
}

/// Smallest A satisfying the three-way max condition, times 1 + 10⁻⁶.
///
/// With `ε = 1 − √(1 − δ^{2s}/C)`, requires `A > max{3ā₊,
/// 3φ̃·exp(ψ̃(√(2σ_D²)·|ln(ε/2)| + μ₁)), 3φ₂(√(2σ_K²·|ln(ε/2)|) + μ₂ + 1)}`.
pub fn choose_cutoff_a(inp: &CutoffInputs) -> Result<f64> {
    if !(inp.delta > 0.0 && inp.delta < 1.0) {
        return Err(Error::invalid("delta", "must lie in (0, 1)"));
    }
    if !(inp.s >= 1.0) {
        return Err(Error::invalid("s", "must be >= 1"));
    }
    for (name, v) in [
        ("mu1", inp.mu1),
        ("sigma_d_sq", inp.sigma_d_sq),
        ("mu2", inp.mu2),
        ("sigma_k_sq", inp.sigma_k_sq),
        ("abar_upper", inp.abar_upper),
        ("phi1_exp_amplitude", inp.phi1_exp_amplitude),
        ("phi1_exp_rate", inp.phi1_exp_rate),
        ("phi2_linear", inp.phi2_linear),
        ("moment_bound", inp.moment_bound),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("cut-off input `{name}`"),
            });
        }
    }
    let ratio = inp.delta.powf(2.0 * inp.s) / inp.moment_bound;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(
            "moment_bound",
            format!("must exceed delta^(2s) = {}", inp.delta.powf(2.0 * inp.s)),
        ));
    }
    let eps = 1.0 - (1.0 - ratio).sqrt();
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(
            "moment_bound",
            "derived epsilon outside (0, 1)",
        ));
    }
    let log_term = (eps / 2.0).ln().abs();
    let b1 = 3.0 * inp.abar_upper;
    let b2 = 3.0
        * inp.phi1_exp_amplitude
        * (inp.phi1_exp_rate * ((2.0 * inp.sigma_d_sq).sqrt() * log_term + inp.mu1)).exp();
    let b3 = 3.0 * inp.phi2_linear * ((2.0 * inp.sigma_k_sq * log_term).sqrt() + inp.mu2 + 1.0);
    Ok(b1.max(b2).max(b3) * (1.0 + 1e-6))
}

/// Probe resolution matching the reference grid.
pub const DEFAULT_PROBE_GRID: usize = 800;

/// [`coefficient_distance`] on the default 800×800 midpoint lattice.
pub fn coefficient_distance_default(
    a: &CoefficientSample,
    b: &CoefficientSample,
    t: f64,
) -> Result<f64> {
    coefficient_distance(a, b, t, DEFAULT_PROBE_GRID)
}

/// Discrete `L^t` norm of the pointwise difference over an `n×n` midpoint
/// probe grid on the unit square. The Ω-average over Monte Carlo repetitions
/// is taken by the caller.
pub fn coefficient_distance(
    a: &CoefficientSample,
    b: &CoefficientSample,
    t: f64,
    probe_n: usize,
) -> Result<f64> {
    if !(t >= 1.0) {
        return Err(Error::invalid("t", "norm order must be >= 1"));
    }
    if probe_n == 0 {
        return Err(Error::invalid("probe_n", "must be >= 1"));
    }
    let probe_step = 1.0 / probe_n as f64;
    for (name, sample) in [("a", a), ("b", b)] {
        let field_step = sample.w1.grid.dx().max(sample.w1.grid.dy());
        if probe_step > field_step * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "probe_n",
                format!(
                    "probe step {probe_step} coarser than sample {name}'s field step {field_step}"
                ),
            ));
        }
    }
    let cell_area = probe_step * probe_step;
    let mut acc = 0.0;
    for j in 0..probe_n {
        let y = (j as f64 + 0.5) * probe_step;
        for i in 0..probe_n {
            let x = (i as f64 + 0.5) * probe_step;
            acc += (a.eval(x, y) - b.eval(x, y)).abs().powf(t) * cell_area;
        }
    }
    Ok(acc.powf(1.0 / t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomfield::CovarianceModel;
    use crate::subordinator::{sample_poisson_exact, PathRepr};
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn constant_field(extent: f64, value: f64) -> LatticeField2D {
        let grid = GridSpec2D::new([0.0, 0.0], [extent, extent], extent / 4.0).unwrap();
        let values = Array2::from_elem((grid.nodes[1], grid.nodes[0]), value);
        LatticeField2D::new(grid, values).unwrap()
    }

    fn zero_path() -> SubordinatorPath {
        SubordinatorPath {
            horizon: 1.0,
            breakpoints: vec![],
            values: vec![],
            repr: PathRepr::ExactJumps,
            scale: 1.0,
        }
    }

    fn paper_sample(seed: u64, k_cut: f64, a_cut: f64) -> CoefficientSample {
        let mut r = rng(seed);
        let grid1 = GridSpec2D::new([0.0, 0.0], [1.0, 1.0], 0.05).unwrap();
        let model1 = CovarianceModel::matern_three_halves(1.5 * 1.5, 0.5).unwrap();
        let w1 = crate::randomfield::sample_grf(grid1, model1, &mut r).unwrap();
        let grid2 = GridSpec2D::new([0.0, 0.0], [k_cut, k_cut], 0.05 * k_cut).unwrap();
        let model2 = CovarianceModel::matern_three_halves(0.3 * 0.3, 1.0).unwrap();
        let w2 = crate::randomfield::sample_grf(grid2, model2, &mut r).unwrap();
        let l1 = sample_poisson_exact(1.0, 1.0, &mut r).unwrap();
        let l2 = sample_poisson_exact(1.0, 1.0, &mut r).unwrap();
        CoefficientSample::new(
            BaseCoefficient::constant(0.1).unwrap(),
            Transform::scaled_exp(0.01).unwrap(),
            Transform::scaled_abs(5.0).unwrap(),
            w1,
            w2,
            l1,
            l2,
            k_cut,
            a_cut,
        )
        .unwrap()
    }

    #[test]
    fn zero_transforms_reduce_to_base() {
        let s = CoefficientSample::new(
            BaseCoefficient::constant(0.1).unwrap(),
            Transform::Zero,
            Transform::Zero,
            constant_field(1.0, 3.0),
            constant_field(8.0, -2.0),
            zero_path(),
            zero_path(),
            8.0,
            50.0,
        )
        .unwrap();
        for &(x, y) in &[(0.0, 0.0), (0.3, 0.9), (1.0, 1.0)] {
            assert_eq!(s.eval(x, y), 0.1);
        }
    }

    #[test]
    fn constant_fields_compose_pointwise() {
        let s = CoefficientSample::new(
            BaseCoefficient::constant(0.1).unwrap(),
            Transform::scaled_exp(0.01).unwrap(),
            Transform::scaled_abs(5.0).unwrap(),
            constant_field(1.0, 0.0),
            constant_field(8.0, -0.4),
            zero_path(),
            zero_path(),
            8.0,
            50.0,
        )
        .unwrap();
        let expected = 0.1 + 0.01 + 5.0 * 0.4; // exp(0) = 1
        for &(x, y) in &[(0.2, 0.2), (0.9, 0.1)] {
            assert_relative_eq!(s.eval(x, y), expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn composition_matches_step_by_step_oracle() {
        // Independent chain: linear-scan path evaluation and index-arithmetic
        // bilinear lookup, then the displayed composition.
        let s = paper_sample(4242, 8.0, 50.0);
        let path_eval = |p: &SubordinatorPath, x: f64| -> f64 {
            let mut v = 0.0;
            for (b, val) in p.breakpoints.iter().zip(&p.values) {
                if *b <= x {
                    v = *val;
                }
            }
            v * p.scale
        };
        let bilinear = |f: &LatticeField2D, x: f64, y: f64| -> f64 {
            let (dx, dy) = (f.grid.dx(), f.grid.dy());
            let i = ((x / dx).floor() as usize).min(f.grid.nodes[0] - 2);
            let j = ((y / dy).floor() as usize).min(f.grid.nodes[1] - 2);
            let (tx, ty) = ((x - i as f64 * dx) / dx, (y - j as f64 * dy) / dy);
            f.values[(j, i)] * (1.0 - tx) * (1.0 - ty)
                + f.values[(j, i + 1)] * tx * (1.0 - ty)
                + f.values[(j + 1, i)] * (1.0 - tx) * ty
                + f.values[(j + 1, i + 1)] * tx * ty
        };
        for &(x, y) in &[(0.37, 0.61), (0.05, 0.95), (0.5, 0.5), (0.99, 0.01)] {
            let z1 = path_eval(&s.l1, x).min(8.0);
            let z2 = path_eval(&s.l2, y).min(8.0);
            let expected =
                (0.1 + 0.01 * bilinear(&s.w1, x, y).exp() + 5.0 * bilinear(&s.w2, z1, z2).abs())
                    .min(50.0);
            assert_relative_eq!(s.eval(x, y), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn jump_lines_read_off_paths_and_coefficient_jumps_there() {
        let s = paper_sample(7, 8.0, 50.0);
        let (xs, ys) = s.jump_lines();
        assert_eq!(xs, s.l1.breakpoints);
        assert_eq!(ys, s.l2.breakpoints);
        let y_clear = 0.421; // avoid horizontal lines for the x-scan
        for &x_star in xs.iter().filter(|&&x| x > 1e-6 && x < 1.0 - 1e-6) {
            let below = s.eval(x_star - 1e-9, y_clear);
            let above = s.eval(x_star + 1e-9, y_clear);
            assert!(
                (below - above).abs() > 1e-12,
                "no jump across x* = {x_star}"
            );
        }
    }

    #[test]
    fn scan_between_lines_is_continuous() {
        let s = paper_sample(7, 8.0, 50.0);
        let (xs, _) = s.jump_lines();
        let mut cuts = vec![0.0];
        cuts.extend(xs.iter().copied());
        cuts.push(1.0);
        let (lo, hi) = (cuts[0] + 1e-6, cuts[1] - 1e-6);
        let y = 0.337;
        let max_gap = |n: usize| -> f64 {
            let mut prev = s.eval(lo, y);
            let mut gap = 0.0f64;
            for k in 1..=n {
                let x = lo + (hi - lo) * k as f64 / n as f64;
                let v = s.eval(x, y);
                gap = gap.max((v - prev).abs());
                prev = v;
            }
            gap
        };
        let coarse = max_gap(1_000);
        let fine = max_gap(10_000);
        assert!(
            fine < coarse / 5.0,
            "gap did not shrink: {coarse} -> {fine}"
        );
    }

    #[test]
    fn ellipticity_and_upper_bound_hold_on_probes() {
        for seed in 0..20 {
            let s = paper_sample(seed, 8.0, 2.0); // low A so the clip binds
            for j in 0..15 {
                for i in 0..15 {
                    let v = s.eval(i as f64 / 14.0, j as f64 / 14.0);
                    assert!(v >= s.lower_bound() - 1e-15);
                    assert!(v <= 2.0 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn clip_commutes_with_path_evaluation() {
        let s = paper_sample(99, 2.0, f64::INFINITY);
        // pre-clip the path values, then evaluate without further clipping
        let mut pre = s.clone();
        pre.l1.values.iter_mut().for_each(|v| *v = v.min(2.0));
        pre.l2.values.iter_mut().for_each(|v| *v = v.min(2.0));
        for k in 0..50 {
            let x = k as f64 / 49.0;
            let z_direct = clip(s.l1.eval(x).unwrap(), 2.0);
            let z_pre = pre.l1.eval(x).unwrap();
            assert_eq!(z_direct, z_pre);
        }
    }

    #[test]
    fn infinite_a_means_no_truncation() {
        let s = paper_sample(3, 8.0, f64::INFINITY);
        let t = paper_sample(3, 8.0, 1e12);
        for k in 0..25 {
            let (x, y) = (k as f64 / 24.0, (24 - k) as f64 / 24.0);
            assert_eq!(s.eval(x, y), t.eval(x, y));
        }
    }

    #[test]
    fn sup_mean_degenerate_and_stationary() {
        let grid = GridSpec2D::new([0.0, 0.0], [1.0, 1.0], 0.1).unwrap();
        let zero = CovarianceModel::matern_three_halves(0.0, 0.5).unwrap();
        let mut sampler = GrfSampler::new(grid, zero).unwrap();
        let (mu, var) = estimate_sup_mean(&mut sampler, 100, &mut rng(1)).unwrap();
        assert_eq!((mu, var), (0.0, 0.0));

        let model = CovarianceModel::matern_three_halves(1.0, 0.5).unwrap();
        let mut sampler = GrfSampler::new(grid, model).unwrap();
        let (_, var) = estimate_sup_mean(&mut sampler, 100, &mut rng(1)).unwrap();
        assert_eq!(var, 1.0);
    }

    #[test]
    fn sup_mean_estimates_are_self_consistent() {
        let grid = GridSpec2D::new([0.0, 0.0], [1.0, 1.0], 0.1).unwrap();
        let model = CovarianceModel::matern_three_halves(1.0, 0.5).unwrap();
        let n = 1000;
        let run = |seed: u64| -> (f64, f64) {
            let mut sampler = GrfSampler::new(grid, model).unwrap();
            let mut r = rng(seed);
            let mut sups = Vec::with_capacity(n);
            for _ in 0..n {
                sups.push(sampler.sample(&mut r).max_value());
            }
            let mean = sups.iter().sum::<f64>() / n as f64;
            let var = sups.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            (mean, (var / n as f64).sqrt())
        };
        let (m1, se1) = run(101);
        let (m2, se2) = run(202);
        let combined = (se1 * se1 + se2 * se2).sqrt();
        assert!(
            (m1 - m2).abs() <= 4.0 * combined,
            "estimates {m1} and {m2} differ beyond 4 combined SEs ({combined})"
        );
    }

    #[test]
    fn cutoff_matches_frozen_transcription() {
        // Frozen from an independent high-precision transcription of the
        // three-branch formula.
        let inp = CutoffInputs {
            delta: 0.1,
            s: 1.0,
            mu1: 1.0,
            sigma_d_sq: 1.0,
            mu2: 1.0,
            sigma_k_sq: 1.0,
            abar_upper: 0.1,
            phi1_exp_amplitude: 1.0,
            phi1_exp_rate: 1.0,
            phi2_linear: 1.0,
            moment_bound: 10.0,
        };
        let a = choose_cutoff_a(&inp).unwrap();
        assert_relative_eq!(a, 1012382.56965485, max_relative = 1e-9);
    }

    #[test]
    fn cutoff_exceeds_base_bound_and_decreases_with_delta() {
        let mut inp = CutoffInputs {
            delta: 0.5,
            s: 1.0,
            mu1: 0.1,
            sigma_d_sq: 0.01,
            mu2: 0.1,
            sigma_k_sq: 0.01,
            abar_upper: 123.0,
            phi1_exp_amplitude: 0.01,
            phi1_exp_rate: 0.1,
            phi2_linear: 0.01,
            moment_bound: 10.0,
        };
        let a = choose_cutoff_a(&inp).unwrap();
        assert!(a > 3.0 * 123.0);

        inp.abar_upper = 0.1;
        let mut prev = f64::INFINITY;
        for k in 1..9 {
            inp.delta = k as f64 * 0.1;
            let a = choose_cutoff_a(&inp).unwrap();
            assert!(a <= prev + 1e-12, "A not non-increasing in delta");
            prev = a;
        }

        inp.moment_bound = 1e-12; // smaller than delta^(2s)
        assert!(choose_cutoff_a(&inp).is_err());
    }

    #[test]
    fn distance_zero_for_identical_and_constant_shift() {
        let s = paper_sample(11, 8.0, 50.0);
        assert_eq!(coefficient_distance(&s, &s, 2.0, 64).unwrap(), 0.0);

        let mut shifted = s.clone();
        shifted.base = BaseCoefficient::constant(0.1 + 0.5).unwrap();
        // A = 50 never binds here, so the difference is exactly 0.5
        for t in [1.0, 2.0] {
            let d = coefficient_distance(&s, &shifted, t, 64).unwrap();
            assert_relative_eq!(d, 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn distance_rejects_coarse_probe() {
        let s = paper_sample(11, 8.0, 50.0);
        assert!(coefficient_distance(&s, &s, 2.0, 4).is_err());
    }

    #[test]
    fn raster_export_round_trips() {
        let s = paper_sample(2, 8.0, 50.0);
        let raster = s.rasterize(32).unwrap();
        assert_eq!(raster.grid.nodes, [33, 33]);
        let mut buf = Vec::new();
        raster.write_binary(&mut buf).unwrap();
        let back = LatticeField2D::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.values, raster.values);
    }
}
