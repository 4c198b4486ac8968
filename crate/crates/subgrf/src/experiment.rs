//! Coupled Monte Carlo strong-error studies across FEM levels.
//!
//! Per sample index, one seeded stream draws the Gaussian fields and
//! subordinator paths at reference fidelity; every measured level derives its
//! inputs from the same draws (node-exact field restriction, shared exact
//! paths, or grid paths coarsened onto nested lattices), solves on its own
//! mesh and measures the squared V-norm distance to the reference solution.
//! Sample counts adapt per level until the standard error of the estimator
//! drops below a relative target, and log-log least squares fits the rates.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficient::{BaseCoefficient, CoefficientSample, Transform};
use crate::error::{Error, Result};
use crate::fem::{
    assemble, mesh_adapted, mesh_uniform, solve, v_norm_distance, BoundarySpec, FemSolution,
    TriMesh,
};
use crate::randomfield::{CovarianceModel, GrfSampler, GridSpec2D, LatticeField2D};
use crate::subordinator::{
    sample_path_grid_intervals, sample_poisson_exact, SubordinatorLaw, SubordinatorPath,
};

/// Jump-line merge tolerance as a fraction of the mesh target h̄.
const MERGE_TOL_FRACTION: f64 = 0.25;

/// FEM arm: uniform meshes or per-sample interface-aligned meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshMode {
    Standard,
    Adapted,
}

/// How subordinator paths are produced at reference fidelity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathMethod {
    /// Uniform Method (Poisson only); levels reuse the exact paths.
    Exact,
    /// Increment sampling on nested grids; levels keep every f-th breakpoint.
    Grid,
}

/// Serializable transform description for configs and report echoes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformSpec {
    Zero,
    Exp { amplitude: f64 },
    Abs { slope: f64 },
}

impl TransformSpec {
    pub fn build(&self) -> Result<Transform> {
        match *self {
            TransformSpec::Zero => Ok(Transform::Zero),
            TransformSpec::Exp { amplitude } => Transform::scaled_exp(amplitude),
            TransformSpec::Abs { slope } => Transform::scaled_abs(slope),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Mixed,
    Dirichlet,
}

impl BoundaryMode {
    pub fn build(&self) -> BoundarySpec {
        match self {
            BoundaryMode::Mixed => BoundarySpec::MixedPaper,
            BoundaryMode::Dirichlet => BoundarySpec::HomogeneousDirichlet,
        }
    }
}

/// Full experiment description; serializes into the report's config echo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub law: SubordinatorLaw,
    /// Optional downscale factor applied to the paths (e.g. 1/15 with K = 1).
    pub downscale: Option<f64>,
    pub path_method: PathMethod,
    /// Standard deviations and correlation lengths of W₁ and W₂.
    pub sigma1: f64,
    pub r1: f64,
    pub sigma2: f64,
    pub r2: f64,
    pub k_cut: f64,
    /// Coefficient cut-off A; `None` leaves the coefficient untruncated.
    pub a_cut: Option<f64>,
    pub abar: f64,
    pub f_const: f64,
    pub phi1: TransformSpec,
    pub phi2: TransformSpec,
    pub bc: BoundaryMode,
    /// Level schedule h̄_ℓ = base·ratio^{−(ℓ−1)}, ℓ = 1..=levels.
    pub level_base: f64,
    pub level_ratio: f64,
    pub levels: usize,
    /// Reference level index (> levels); its own h̄ sets the reference ε's.
    pub reference_level: usize,
    pub initial_samples: usize,
    pub max_samples: usize,
    /// Adaptive-M target: std-of-mean ≤ target × mean.
    pub rel_std_target: f64,
    /// Field regularity exponent γ and subordinator exponent rc in the
    /// equilibration rule.
    pub gamma: f64,
    pub rc: f64,
    /// Assumed FEM rates κ̂ used for equilibration, per arm.
    pub kappa_standard: f64,
    pub kappa_adapted: f64,
    pub arms: Vec<MeshMode>,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Low-intensity Poisson configuration with mixed boundary conditions
    /// (σ₁ = 1.5, σ₂ = 0.3, r₂ = 1, K = 8, A = 50, γ = 1, rc = 2.01),
    /// desk-scaled level schedule 0.4·2^{−(ℓ−1)}.
    pub fn poisson_low_intensity() -> ExperimentConfig {
        ExperimentConfig {
            law: SubordinatorLaw::Poisson { rate: 1.0 },
            downscale: None,
            path_method: PathMethod::Grid,
            sigma1: 1.5,
            r1: 0.5,
            sigma2: 0.3,
            r2: 1.0,
            k_cut: 8.0,
            a_cut: Some(50.0),
            abar: 0.1,
            f_const: 10.0,
            phi1: TransformSpec::Exp { amplitude: 0.01 },
            phi2: TransformSpec::Abs { slope: 5.0 },
            bc: BoundaryMode::Mixed,
            level_base: 0.4,
            level_ratio: 2.0,
            levels: 4,
            reference_level: 5,
            initial_samples: 10,
            max_samples: 40,
            rel_std_target: 0.1,
            gamma: 1.0,
            rc: 2.01,
            kappa_standard: 0.7,
            kappa_adapted: 1.0,
            arms: vec![MeshMode::Adapted, MeshMode::Standard],
            seed: 0,
        }
    }

    pub fn h_level(&self, level: usize) -> f64 {
        self.level_base * self.level_ratio.powi(-(level as i32 - 1))
    }

    pub fn kappa_for(&self, mode: MeshMode) -> f64 {
        match mode {
            MeshMode::Standard => self.kappa_standard,
            MeshMode::Adapted => self.kappa_adapted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        if let Some(c) = self.downscale {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::invalid("downscale", "must be finite and > 0"));
            }
        }
        for (name, v) in [("sigma1", self.sigma1), ("sigma2", self.sigma2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("r1", self.r1),
            ("r2", self.r2),
            ("k_cut", self.k_cut),
            ("abar", self.abar),
            ("level_base", self.level_base),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be finite and > 0"));
            }
        }
        if let Some(a) = self.a_cut {
            if !(a > 0.0) {
                return Err(Error::invalid("a_cut", "must be > 0"));
            }
        }
        if !self.f_const.is_finite() {
            return Err(Error::invalid("f_const", "must be finite"));
        }
        if !(self.level_ratio > 1.0) {
            return Err(Error::invalid("level_ratio", "must be > 1"));
        }
        if self.levels == 0 {
            return Err(Error::invalid("levels", "must be >= 1"));
        }
        if self.reference_level <= self.levels {
            return Err(Error::invalid(
                "reference_level",
                "reference must be strictly finer than all measured levels",
            ));
        }
        if self.initial_samples == 0 || self.max_samples < self.initial_samples {
            return Err(Error::invalid(
                "max_samples",
                "need max_samples >= initial_samples >= 1",
            ));
        }
        if !(self.rel_std_target > 0.0) {
            return Err(Error::invalid("rel_std_target", "must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma", "must lie in (0, 1]"));
        }
        if !(self.rc > 0.0) || !self.rc.is_finite() {
            return Err(Error::invalid("rc", "must be finite and > 0"));
        }
        if self.path_method == PathMethod::Grid && self.rc < 2.0 {
            return Err(Error::invalid(
                "rc",
                "grid path approximation requires rc >= 2",
            ));
        }
        if !(self.kappa_standard > 0.0 && self.kappa_adapted > 0.0) {
            return Err(Error::invalid("kappa", "assumed rates must be > 0"));
        }
        if self.arms.is_empty() {
            return Err(Error::invalid("arms", "need at least one arm"));
        }
        if matches!(self.law, SubordinatorLaw::Gamma { .. }) {
            if self.path_method == PathMethod::Exact {
                return Err(Error::invalid(
                    "path_method",
                    "exact path simulation is only available for Poisson subordinators",
                ));
            }
            if self.arms.contains(&MeshMode::Adapted) {
                return Err(Error::invalid(
                    "arms",
                    "infinite-activity Gamma subordinators do not admit sample-adapted meshes",
                ));
            }
        }
        Ok(())
    }
}

/// Equilibrated approximation parameters `(ε_W, ε_l) = (h̄^{κ̂/γ}, h̄^{κ̂·rc})`.
pub fn equilibrate(h_bar: f64, kappa_hat: f64, gamma: f64, rc: f64) -> Result<(f64, f64)> {
    for (name, v) in [("h_bar", h_bar), ("kappa_hat", kappa_hat), ("rc", rc)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(name, "must be finite and > 0"));
        }
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", "must lie in (0, 1]"));
    }
    Ok((h_bar.powf(kappa_hat / gamma), h_bar.powf(kappa_hat * rc)))
}

/// Nested lattice plan for one extent: reference interval count (a multiple
/// of the largest level factor) and per-level power-of-two coarsening
/// factors whose realized steps never exceed the equilibrated targets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxisPlan {
    pub ref_intervals: usize,
    pub level_factors: Vec<usize>,
}

fn nested_axis_plan(extent: f64, eps_ref: f64, eps_levels: &[f64]) -> AxisPlan {
    let base = ((extent / eps_ref) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let max_ratio = eps_levels
        .iter()
        .fold(1.0f64, |m, &e| m.max(e / eps_ref))
        .max(1.0);
    let pow = (max_ratio.log2().ceil().max(0.0) as u32).min(40);
    let cap = 1usize << pow;
    let ref_intervals = base.div_ceil(cap) * cap;
    let step_ref = extent / ref_intervals as f64;
    let level_factors = eps_levels
        .iter()
        .map(|&e| {
            let raw = (e / step_ref).max(1.0).log2().floor() as u32;
            (1usize << raw.min(pow)).min(cap)
        })
        .collect();
    AxisPlan {
        ref_intervals,
        level_factors,
    }
}

/// Resolved sampling plan for one arm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmPlan {
    pub mode: MeshMode,
    pub kappa_hat: f64,
    pub h_levels: Vec<f64>,
    pub h_ref: f64,
    /// Equilibrated targets per level (reported in results).
    pub eps_w_levels: Vec<f64>,
    pub eps_l_levels: Vec<f64>,
    pub eps_w_ref: f64,
    pub eps_l_ref: f64,
    pub w1_axis: AxisPlan,
    pub w2_axis: AxisPlan,
    /// Present only for the grid path method.
    pub path_axis: Option<AxisPlan>,
}

impl ArmPlan {
    pub fn resolve(cfg: &ExperimentConfig, mode: MeshMode) -> Result<ArmPlan> {
        let kappa_hat = cfg.kappa_for(mode);
        let h_levels: Vec<f64> = (1..=cfg.levels).map(|l| cfg.h_level(l)).collect();
        let h_ref = cfg.h_level(cfg.reference_level);
        let mut eps_w_levels = Vec::with_capacity(cfg.levels);
        let mut eps_l_levels = Vec::with_capacity(cfg.levels);
        for &h in &h_levels {
            let (ew, el) = equilibrate(h, kappa_hat, cfg.gamma, cfg.rc)?;
            eps_w_levels.push(ew);
            eps_l_levels.push(el);
        }
        let (eps_w_ref, eps_l_ref) = equilibrate(h_ref, kappa_hat, cfg.gamma, cfg.rc)?;
        let w1_axis = nested_axis_plan(1.0, eps_w_ref, &eps_w_levels);
        let w2_axis = nested_axis_plan(cfg.k_cut, eps_w_ref, &eps_w_levels);
        let path_axis = match cfg.path_method {
            PathMethod::Exact => None,
            PathMethod::Grid => Some(nested_axis_plan(1.0, eps_l_ref, &eps_l_levels)),
        };
        Ok(ArmPlan {
            mode,
            kappa_hat,
            h_levels,
            h_ref,
            eps_w_levels,
            eps_l_levels,
            eps_w_ref,
            eps_l_ref,
            w1_axis,
            w2_axis,
            path_axis,
        })
    }
}

/// Reference-fidelity draw and solve for one sample index, shared by all
/// levels of an arm.
struct RefSample {
    w1: LatticeField2D,
    w2: LatticeField2D,
    l1: SubordinatorPath,
    l2: SubordinatorPath,
    solution: FemSolution,
}

/// Per-arm state: plan, precomputed samplers/meshes and the per-index
/// reference cache.
pub struct ArmRuntime {
    cfg: ExperimentConfig,
    plan: ArmPlan,
    phi1: Transform,
    phi2: Transform,
    bc: BoundarySpec,
    w1_sampler: GrfSampler,
    w2_sampler: GrfSampler,
    /// Shared uniform meshes (standard mode): levels then reference.
    uniform_levels: Vec<Arc<TriMesh>>,
    uniform_ref: Option<Arc<TriMesh>>,
    ref_cache: HashMap<usize, Arc<RefSample>>,
}

impl ArmRuntime {
    pub fn new(cfg: &ExperimentConfig, mode: MeshMode) -> Result<ArmRuntime> {
        cfg.validate()?;
        let plan = ArmPlan::resolve(cfg, mode)?;
        let model1 = CovarianceModel::matern_three_halves(cfg.sigma1 * cfg.sigma1, cfg.r1)?;
        let model2 = CovarianceModel::matern_three_halves(cfg.sigma2 * cfg.sigma2, cfg.r2)?;
        let grid1 = GridSpec2D::with_intervals(
            [0.0, 0.0],
            [1.0, 1.0],
            [plan.w1_axis.ref_intervals, plan.w1_axis.ref_intervals],
        )?;
        let grid2 = GridSpec2D::with_intervals(
            [0.0, 0.0],
            [cfg.k_cut, cfg.k_cut],
            [plan.w2_axis.ref_intervals, plan.w2_axis.ref_intervals],
        )?;
        let w1_sampler = GrfSampler::new(grid1, model1)?;
        let w2_sampler = GrfSampler::new(grid2, model2)?;
        let (uniform_levels, uniform_ref) = match mode {
            MeshMode::Standard => {
                let levels = plan
                    .h_levels
                    .iter()
                    .map(|&h| mesh_uniform(h))
                    .collect::<Result<Vec<_>>>()?;
                (levels, Some(mesh_uniform(plan.h_ref)?))
            }
            MeshMode::Adapted => (Vec::new(), None),
        };
        Ok(ArmRuntime {
            cfg: cfg.clone(),
            plan,
            phi1: cfg.phi1.build()?,
            phi2: cfg.phi2.build()?,
            bc: cfg.bc.build(),
            w1_sampler,
            w2_sampler,
            uniform_levels,
            uniform_ref,
            ref_cache: HashMap::new(),
        })
    }

    pub fn plan(&self) -> &ArmPlan {
        &self.plan
    }

    fn sample_paths(&self, rng: &mut ChaCha8Rng) -> Result<(SubordinatorPath, SubordinatorPath)> {
        let (mut l1, mut l2) = match self.cfg.path_method {
            PathMethod::Exact => {
                let rate = match self.cfg.law {
                    SubordinatorLaw::Poisson { rate } => rate,
                    SubordinatorLaw::Gamma { .. } => unreachable!("validated"),
                };
                (
                    sample_poisson_exact(rate, 1.0, rng)?,
                    sample_poisson_exact(rate, 1.0, rng)?,
                )
            }
            PathMethod::Grid => {
                let n = self
                    .plan
                    .path_axis
                    .as_ref()
                    .expect("grid method has a path plan")
                    .ref_intervals;
                (
                    sample_path_grid_intervals(self.cfg.law, n, 1.0, rng)?,
                    sample_path_grid_intervals(self.cfg.law, n, 1.0, rng)?,
                )
            }
        };
        if let Some(c) = self.cfg.downscale {
            l1 = l1.scaled(c)?;
            l2 = l2.scaled(c)?;
        }
        Ok((l1, l2))
    }

    fn coefficient(
        &self,
        w1: LatticeField2D,
        w2: LatticeField2D,
        l1: SubordinatorPath,
        l2: SubordinatorPath,
    ) -> Result<CoefficientSample> {
        CoefficientSample::new(
            BaseCoefficient::constant(self.cfg.abar)?,
            self.phi1.clone(),
            self.phi2.clone(),
            w1,
            w2,
            l1,
            l2,
            self.cfg.k_cut,
            self.cfg.a_cut.unwrap_or(f64::INFINITY),
        )
    }

    fn adapted_mesh(&self, coeff: &CoefficientSample, h_bar: f64) -> Result<Arc<TriMesh>> {
        let (xs, ys) = coeff.jump_lines();
        mesh_adapted(&xs, &ys, h_bar, h_bar * MERGE_TOL_FRACTION)
    }

    fn solve_on(
        &self,
        mesh: Arc<TriMesh>,
        coeff: &CoefficientSample,
    ) -> Result<(FemSolution, usize)> {
        let f_const = self.cfg.f_const;
        let system = assemble(mesh, &|x, y| coeff.eval(x, y), &|_, _| f_const, &self.bc)?;
        let solution = solve(&system)?;
        Ok((solution, system.dofs()))
    }

    /// Reference draw + solve for a sample index; deterministic in
    /// (seed, index) only. Stream layout: W₁ pair, W₂ pair, l₁, l₂.
    fn compute_reference(&self, index: usize) -> Result<Arc<RefSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index as u64 + 1);
        let (w1, _) = self.w1_sampler.sample_pair(&mut rng);
        let (w2, _) = self.w2_sampler.sample_pair(&mut rng);
        let (l1, l2) = self.sample_paths(&mut rng)?;
        let coeff = self.coefficient(w1.clone(), w2.clone(), l1.clone(), l2.clone())?;
        let mesh = match self.plan.mode {
            MeshMode::Standard => Arc::clone(self.uniform_ref.as_ref().expect("standard mode")),
            MeshMode::Adapted => self.adapted_mesh(&coeff, self.plan.h_ref)?,
        };
        let (solution, _) = self.solve_on(mesh, &coeff)?;
        Ok(Arc::new(RefSample {
            w1,
            w2,
            l1,
            l2,
            solution,
        }))
    }

    /// Level solve against a reference sample; `level` is 1-based.
    fn level_outcome(&self, reference: &RefSample, level: usize) -> Result<SampleOutcome> {
        let l0 = level - 1;
        let w1 = reference.w1.restrict(self.plan.w1_axis.level_factors[l0])?;
        let w2 = reference.w2.restrict(self.plan.w2_axis.level_factors[l0])?;
        let (l1, l2) = match self.cfg.path_method {
            PathMethod::Exact => (reference.l1.clone(), reference.l2.clone()),
            PathMethod::Grid => {
                let f = self
                    .plan
                    .path_axis
                    .as_ref()
                    .expect("grid plan")
                    .level_factors[l0];
                (
                    reference.l1.restrict_grid(f)?,
                    reference.l2.restrict_grid(f)?,
                )
            }
        };
        let coeff = self.coefficient(w1, w2, l1, l2)?;
        let h_bar = self.plan.h_levels[l0];
        let mesh = match self.plan.mode {
            MeshMode::Standard => Arc::clone(&self.uniform_levels[l0]),
            MeshMode::Adapted => self.adapted_mesh(&coeff, h_bar)?,
        };
        let (solution, dofs) = self.solve_on(mesh, &coeff)?;
        let distance = v_norm_distance(&reference.solution, &solution);
        Ok(SampleOutcome {
            sq_error: distance * distance,
            dofs,
        })
    }

    fn ensure_references(&mut self, up_to: usize) -> Result<()> {
        let missing: Vec<usize> = (0..up_to)
            .filter(|i| !self.ref_cache.contains_key(i))
            .collect();
        let computed: Vec<(usize, Result<Arc<RefSample>>)> = missing
            .par_iter()
            .map(|&i| (i, self.compute_reference(i)))
            .collect();
        for (i, r) in computed {
            self.ref_cache.insert(i, r?);
        }
        Ok(())
    }
}

/// Squared V-error and level DOF count of one coupled sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sq_error: f64,
    pub dofs: usize,
}

/// One coupled sample: reference and level solutions from one seeded stream,
/// compared in the V-norm. Reproducible bit-for-bit from
/// (config, mode, level, index).
pub fn run_coupled_sample(
    cfg: &ExperimentConfig,
    mode: MeshMode,
    level: usize,
    index: usize,
) -> Result<SampleOutcome> {
    if level == 0 || level > cfg.levels {
        return Err(Error::invalid("level", "must lie in 1..=levels"));
    }
    let runtime = ArmRuntime::new(cfg, mode)?;
    let reference = runtime.compute_reference(index)?;
    runtime.level_outcome(&reference, level)
}

/// Per-level strong-error estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: usize,
    pub h: f64,
    pub eps_w: f64,
    /// Equilibrated ε_l target; `None` when exact paths are used.
    pub eps_l: Option<f64>,
    pub m_used: usize,
    pub mean_sq_error: f64,
    /// Sample standard deviation of the squared errors.
    pub std_sq_error: f64,
    pub mean_dofs: f64,
    pub wall_ms: u64,
    /// True when the sample cap was reached before the relative-std target.
    pub capped: bool,
    /// Voided sample indices with reasons; never silently reused.
    pub voided: Vec<(usize, String)>,
}

impl LevelResult {
    /// Standard error of the Monte Carlo estimator.
    pub fn std_of_mean(&self) -> f64 {
        if self.m_used > 0 {
            self.std_sq_error / (self.m_used as f64).sqrt()
        } else {
            f64::NAN
        }
    }
}

/// Estimate one level with the adaptive sample loop: start at
/// `initial_samples`, double until std-of-mean ≤ target × mean or the cap is
/// reached (capped results are flagged, never dropped).
pub fn estimate_level(runtime: &mut ArmRuntime, level: usize) -> Result<LevelResult> {
    let cfg = runtime.cfg.clone();
    if level == 0 || level > cfg.levels {
        return Err(Error::invalid("level", "must lie in 1..=levels"));
    }
    let start = Instant::now();
    let mut outcomes: Vec<(usize, Result<SampleOutcome>)> = Vec::new();
    let mut m = cfg.initial_samples.min(cfg.max_samples);
    loop {
        runtime.ensure_references(m)?;
        let from = outcomes.len();
        let batch: Vec<(usize, Result<SampleOutcome>)> = (from..m)
            .into_par_iter()
            .map(|i| {
                let reference = Arc::clone(&runtime.ref_cache[&i]);
                (i, runtime.level_outcome(&reference, level))
            })
            .collect();
        outcomes.extend(batch);

        let ok: Vec<&SampleOutcome> = outcomes
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok())
            .collect();
        let n = ok.len();
        if n == 0 {
            if m >= cfg.max_samples {
                break;
            }
            m = (2 * m).min(cfg.max_samples);
            continue;
        }
        let mean = ok.iter().map(|o| o.sq_error).sum::<f64>() / n as f64;
        let std = if n > 1 {
            (ok.iter().map(|o| (o.sq_error - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        } else {
            0.0
        };
        let converged = std / (n as f64).sqrt() <= cfg.rel_std_target * mean;
        if converged || m >= cfg.max_samples {
            break;
        }
        m = (2 * m).min(cfg.max_samples);
    }

    let ok: Vec<&SampleOutcome> = outcomes
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok())
        .collect();
    let voided: Vec<(usize, String)> = outcomes
        .iter()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| (*i, e.to_string())))
        .collect();
    let n = ok.len();
    if n == 0 {
        return Err(Error::SampleVoided {
            level,
            index: 0,
            reason: voided
                .first()
                .map(|(_, r)| r.clone())
                .unwrap_or_else(|| "no samples".into()),
        });
    }
    let mean = ok.iter().map(|o| o.sq_error).sum::<f64>() / n as f64;
    let std = if n > 1 {
        (ok.iter().map(|o| (o.sq_error - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    let mean_dofs = ok.iter().map(|o| o.dofs as f64).sum::<f64>() / n as f64;
    let capped = std / (n as f64).sqrt() > cfg.rel_std_target * mean;
    let plan = runtime.plan();
    Ok(LevelResult {
        level,
        h: plan.h_levels[level - 1],
        eps_w: plan.eps_w_levels[level - 1],
        eps_l: match cfg.path_method {
            PathMethod::Exact => None,
            PathMethod::Grid => Some(plan.eps_l_levels[level - 1]),
        },
        m_used: n,
        mean_sq_error: mean,
        std_sq_error: std,
        mean_dofs,
        wall_ms: start.elapsed().as_millis() as u64,
        capped,
        voided,
    })
}

/// Least-squares fit of a log-log relation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
}

fn ols(xs: &[f64], ys: &[f64]) -> RateFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    RateFit {
        slope,
        intercept: my - slope * mx,
    }
}

/// Fitted convergence rates: ½·log(mean squared error) against log h
/// (slope is the rate κ) and against log mean DOFs.
pub fn fit_rate(levels: &[LevelResult]) -> Result<(RateFit, RateFit)> {
    let valid: Vec<&LevelResult> = levels.iter().filter(|l| l.m_used > 0).collect();
    if valid.len() < 2 {
        return Err(Error::InsufficientLevels {
            needed: 2,
            got: valid.len(),
        });
    }
    let log_err: Vec<f64> = valid.iter().map(|l| 0.5 * l.mean_sq_error.ln()).collect();
    let log_h: Vec<f64> = valid.iter().map(|l| l.h.ln()).collect();
    let log_dofs: Vec<f64> = valid.iter().map(|l| l.mean_dofs.ln()).collect();
    Ok((ols(&log_h, &log_err), ols(&log_dofs, &log_err)))
}

/// Reference-fidelity metadata recorded in reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMeta {
    pub level: usize,
    pub h: f64,
    pub eps_w: f64,
    pub eps_l: Option<f64>,
    pub w1_ref_intervals: usize,
    pub w2_ref_intervals: usize,
    pub path_ref_intervals: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub mode: MeshMode,
    pub kappa_hat: f64,
    pub reference: ReferenceMeta,
    pub levels: Vec<LevelResult>,
    pub rate_vs_h: Option<RateFit>,
    pub rate_vs_dofs: Option<RateFit>,
    /// Set when any level was capped or the rate could not be fitted.
    pub flagged: bool,
}

/// Full experiment output with config echo and provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub version: String,
    /// Fixed modeling conventions the numbers depend on.
    pub conventions: Conventions,
    pub arms: Vec<ArmReport>,
}

/// Conventions recorded with every report so runs stay comparable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub matern: String,
    pub v_norm: String,
}

impl Default for Conventions {
    fn default() -> Conventions {
        Conventions {
            matern: "cov(d) = sigma^2 (1 + sqrt(3) d/r) exp(-sqrt(3) d/r)".into(),
            v_norm: "H1 distance sampled at 800x800 cell centers; gradients from \
                     each mesh's containing triangle, ties to lowest index"
                .into(),
        }
    }
}

/// Run every arm over all levels, fit rates, assemble the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let mut arms = Vec::with_capacity(cfg.arms.len());
    for &mode in &cfg.arms {
        let mut runtime = ArmRuntime::new(cfg, mode)?;
        let mut levels = Vec::with_capacity(cfg.levels);
        for level in 1..=cfg.levels {
            levels.push(estimate_level(&mut runtime, level)?);
        }
        let rates = fit_rate(&levels).ok();
        let plan = runtime.plan();
        let reference = ReferenceMeta {
            level: cfg.reference_level,
            h: plan.h_ref,
            eps_w: plan.eps_w_ref,
            eps_l: match cfg.path_method {
                PathMethod::Exact => None,
                PathMethod::Grid => Some(plan.eps_l_ref),
            },
            w1_ref_intervals: plan.w1_axis.ref_intervals,
            w2_ref_intervals: plan.w2_axis.ref_intervals,
            path_ref_intervals: plan.path_axis.as_ref().map(|p| p.ref_intervals),
        };
        let flagged = rates.is_none() || levels.iter().any(|l| l.capped || !l.voided.is_empty());
        arms.push(ArmReport {
            mode,
            kappa_hat: plan.kappa_hat,
            reference,
            levels,
            rate_vs_h: rates.map(|r| r.0),
            rate_vs_dofs: rates.map(|r| r.1),
            flagged,
        });
    }
    Ok(ConvergenceReport {
        config: cfg.clone(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        conventions: Conventions::default(),
        arms,
    })
}

/// Per-level CSV: `level,h,eps_w,eps_l,M,mean_sq_error,std,mean_dofs,wall_ms`
/// with a seed/arm comment header.
pub fn write_level_csv(arm: &ArmReport, seed: u64, w: &mut impl Write) -> Result<()> {
    writeln!(w, "# seed = {seed}")?;
    writeln!(
        w,
        "# arm = {}",
        match arm.mode {
            MeshMode::Standard => "standard",
            MeshMode::Adapted => "adapted",
        }
    )?;
    writeln!(
        w,
        "level,h,eps_w,eps_l,M,mean_sq_error,std,mean_dofs,wall_ms"
    )?;
    for l in &arm.levels {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            l.level,
            l.h,
            l.eps_w,
            l.eps_l.map(|e| e.to_string()).unwrap_or_default(),
            l.m_used,
            l.mean_sq_error,
            l.std_sq_error,
            l.mean_dofs,
            l.wall_ms
        )?;
    }
    Ok(())
}
