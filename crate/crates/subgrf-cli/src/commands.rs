//! Subcommand implementations: single-object dumps (field, path, coeff,
//! solve), the full convergence experiment, and report plotting.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use subgrf::coefficient::{BaseCoefficient, CoefficientSample};
use subgrf::experiment::{
    run_experiment, write_level_csv, ConvergenceReport, ExperimentConfig, MeshMode, PathMethod,
};
use subgrf::fem::{assemble, mesh_adapted, mesh_uniform, solve, FemSolution, REFERENCE_GRID};
use subgrf::randomfield::{sample_grf, CovarianceModel, GridSpec2D};
use subgrf::subordinator::{
    sample_path_grid, sample_poisson_exact, SubordinatorLaw, SubordinatorPath,
};

use crate::config::{to_ini, ConfigFile};
use crate::CliError;

pub struct Outputs {
    dir: PathBuf,
    overwrite: bool,
}

impl Outputs {
    pub fn new(dir: &Path, overwrite: bool) -> Result<Outputs, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create `{}`: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            overwrite,
        })
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>, CliError> {
        let path = self.dir.join(name);
        if path.exists() && !self.overwrite {
            return Err(CliError::config(format!(
                "output `{}` already exists; pass --overwrite to replace it",
                path.display()
            )));
        }
        fs::File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::runtime(format!("cannot create `{}`: {e}", path.display())))
    }

    fn write_string(&self, name: &str, text: &str) -> Result<(), CliError> {
        use std::io::Write;
        let mut f = self.create(name)?;
        f.write_all(text.as_bytes())
            .map_err(|e| CliError::runtime(e.to_string()))
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn runtime_err(e: subgrf::Error) -> CliError {
    CliError::runtime(e.to_string())
}

/// `field`: one W₁ draw on the unit square at `[approximation] eps_w`.
pub fn field(file: &ConfigFile, seed: u64, out: &Outputs) -> Result<(), CliError> {
    let cfg = file.experiment_config()?;
    let (eps_w, _) = file.approximation()?;
    let grid = GridSpec2D::new([0.0, 0.0], [1.0, 1.0], eps_w).map_err(runtime_err)?;
    let model = CovarianceModel::matern_three_halves(cfg.sigma1 * cfg.sigma1, cfg.r1)
        .map_err(runtime_err)?;
    let field = sample_grf(grid, model, &mut rng_for(seed)).map_err(runtime_err)?;
    field
        .write_binary(&mut out.create("field.bin")?)
        .map_err(runtime_err)?;
    field
        .write_csv(&mut out.create("field.csv")?)
        .map_err(runtime_err)?;
    println!(
        "field: {}x{} nodes, step {:.5}, seed {seed}",
        field.grid.nodes[0],
        field.grid.nodes[1],
        field.grid.dx()
    );
    Ok(())
}

fn sample_paths(
    cfg: &ExperimentConfig,
    eps_l: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(SubordinatorPath, SubordinatorPath), CliError> {
    let (mut l1, mut l2) = match (cfg.path_method, cfg.law) {
        (PathMethod::Exact, SubordinatorLaw::Poisson { rate }) => (
            sample_poisson_exact(rate, 1.0, rng).map_err(runtime_err)?,
            sample_poisson_exact(rate, 1.0, rng).map_err(runtime_err)?,
        ),
        (_, law) => (
            sample_path_grid(law, eps_l, 1.0, rng).map_err(runtime_err)?,
            sample_path_grid(law, eps_l, 1.0, rng).map_err(runtime_err)?,
        ),
    };
    if let Some(c) = cfg.downscale {
        l1 = l1.scaled(c).map_err(runtime_err)?;
        l2 = l2.scaled(c).map_err(runtime_err)?;
    }
    Ok((l1, l2))
}

/// `path`: one draw of the two subordinator paths.
pub fn path(file: &ConfigFile, seed: u64, out: &Outputs) -> Result<(), CliError> {
    let cfg = file.experiment_config()?;
    let (_, eps_l) = file.approximation()?;
    let (l1, l2) = sample_paths(&cfg, eps_l, &mut rng_for(seed))?;
    l1.write_csv(&mut out.create("path1.csv")?)
        .map_err(runtime_err)?;
    l2.write_csv(&mut out.create("path2.csv")?)
        .map_err(runtime_err)?;
    println!(
        "paths: l1 terminal {:.4}, l2 terminal {:.4}, seed {seed}",
        l1.terminal(),
        l2.terminal()
    );
    Ok(())
}

fn build_coefficient(
    file: &ConfigFile,
    seed: u64,
) -> Result<(CoefficientSample, ExperimentConfig, f64, f64), CliError> {
    let cfg = file.experiment_config()?;
    let (eps_w, eps_l) = file.approximation()?;
    let mut rng = rng_for(seed);
    let grid1 = GridSpec2D::new([0.0, 0.0], [1.0, 1.0], eps_w).map_err(runtime_err)?;
    let grid2 = GridSpec2D::new([0.0, 0.0], [cfg.k_cut, cfg.k_cut], eps_w).map_err(runtime_err)?;
    let model1 = CovarianceModel::matern_three_halves(cfg.sigma1 * cfg.sigma1, cfg.r1)
        .map_err(runtime_err)?;
    let model2 = CovarianceModel::matern_three_halves(cfg.sigma2 * cfg.sigma2, cfg.r2)
        .map_err(runtime_err)?;
    let w1 = sample_grf(grid1, model1, &mut rng).map_err(runtime_err)?;
    let w2 = sample_grf(grid2, model2, &mut rng).map_err(runtime_err)?;
    let (l1, l2) = sample_paths(&cfg, eps_l, &mut rng)?;
    let coeff = CoefficientSample::new(
        BaseCoefficient::constant(cfg.abar).map_err(runtime_err)?,
        cfg.phi1.build().map_err(runtime_err)?,
        cfg.phi2.build().map_err(runtime_err)?,
        w1,
        w2,
        l1,
        l2,
        cfg.k_cut,
        cfg.a_cut.unwrap_or(f64::INFINITY),
    )
    .map_err(runtime_err)?;
    Ok((coeff, cfg, eps_w, eps_l))
}

fn meta_json(cfg: &ExperimentConfig, seed: u64, eps_w: f64, eps_l: f64) -> serde_json::Value {
    serde_json::json!({
        "seed": seed,
        "eps_w": eps_w,
        "eps_l": eps_l,
        "k_cut": cfg.k_cut,
        "a_cut": cfg.a_cut,
        "config": cfg,
    })
}

/// `coeff`: one coefficient realization rasterized on the reference grid.
pub fn coeff(file: &ConfigFile, seed: u64, out: &Outputs) -> Result<(), CliError> {
    let (coeff, cfg, eps_w, eps_l) = build_coefficient(file, seed)?;
    let raster = coeff.rasterize(REFERENCE_GRID).map_err(runtime_err)?;
    raster
        .write_csv(&mut out.create("coeff.csv")?)
        .map_err(runtime_err)?;
    raster
        .write_binary(&mut out.create("coeff.bin")?)
        .map_err(runtime_err)?;
    out.write_string(
        "coeff_meta.json",
        &serde_json::to_string_pretty(&meta_json(&cfg, seed, eps_w, eps_l)).unwrap(),
    )?;
    let (xs, ys) = coeff.jump_lines();
    println!(
        "coefficient raster: {}x{} nodes, {} x-jump lines, {} y-jump lines, seed {seed}",
        raster.grid.nodes[0],
        raster.grid.nodes[1],
        xs.len(),
        ys.len()
    );
    Ok(())
}

/// `solve`: one pathwise FE solve, solution raster plus the mesh.
pub fn solve_once(file: &ConfigFile, seed: u64, out: &Outputs) -> Result<(), CliError> {
    let (coeff, cfg, eps_w, eps_l) = build_coefficient(file, seed)?;
    let (h, mode) = file.solve_params()?;
    let mesh = match mode {
        MeshMode::Standard => mesh_uniform(h).map_err(runtime_err)?,
        MeshMode::Adapted => {
            let (xs, ys) = coeff.jump_lines();
            mesh_adapted(&xs, &ys, h, h / 4.0).map_err(runtime_err)?
        }
    };
    let f_const = cfg.f_const;
    let system = assemble(
        mesh,
        &|x, y| coeff.eval(x, y),
        &|_, _| f_const,
        &cfg.bc.build(),
    )
    .map_err(runtime_err)?;
    let solution: FemSolution = solve(&system).map_err(runtime_err)?;
    solution
        .rasterize(REFERENCE_GRID)
        .map_err(runtime_err)?
        .write_csv(&mut out.create("solution.csv")?)
        .map_err(runtime_err)?;
    solution
        .rasterize(REFERENCE_GRID)
        .map_err(runtime_err)?
        .write_binary(&mut out.create("solution.bin")?)
        .map_err(runtime_err)?;
    solution
        .mesh
        .write_text(&mut out.create("mesh.txt")?)
        .map_err(runtime_err)?;
    let mut meta = meta_json(&cfg, seed, eps_w, eps_l);
    meta["dofs"] = serde_json::json!(system.dofs());
    meta["cg_iterations"] = serde_json::json!(solution.iterations);
    meta["cg_rel_residual"] = serde_json::json!(solution.rel_residual);
    out.write_string(
        "solution_meta.json",
        &serde_json::to_string_pretty(&meta).unwrap(),
    )?;
    println!(
        "solve: {} dofs, {} CG iterations, residual {:.2e}, seed {seed}",
        system.dofs(),
        solution.iterations,
        solution.rel_residual
    );
    Ok(())
}

/// `converge`: the full experiment; per-level CSV per arm, report JSON and a
/// canonical config echo that reproduces the run.
pub fn converge(file: &ConfigFile, seed: u64, out: &Outputs) -> Result<(), CliError> {
    let mut cfg = file.experiment_config()?;
    cfg.seed = seed;
    let report = run_experiment(&cfg).map_err(runtime_err)?;
    for arm in &report.arms {
        let name = match arm.mode {
            MeshMode::Adapted => "levels_adapted.csv",
            MeshMode::Standard => "levels_standard.csv",
        };
        write_level_csv(arm, report.seed, &mut out.create(name)?).map_err(runtime_err)?;
    }
    out.write_string(
        "report.json",
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    out.write_string(
        "config_echo.ini",
        &format!("# seed = {}\n{}", report.seed, to_ini(&cfg)),
    )?;
    for arm in &report.arms {
        let rate = arm
            .rate_vs_h
            .map(|r| format!("{:.3}", r.slope))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "arm {:?}: rate vs h = {rate}{}",
            arm.mode,
            if arm.flagged { " (flagged)" } else { "" }
        );
    }
    Ok(())
}

/// `plot`: log-log SVGs from a report JSON.
pub fn plot(report_path: &Path, out: &Outputs) -> Result<(), CliError> {
    let text = fs::read_to_string(report_path)
        .map_err(|e| CliError::config(format!("cannot read `{}`: {e}", report_path.display())))?;
    let report: ConvergenceReport = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("malformed report JSON: {e}")))?;
    let (vs_h, vs_dofs) = crate::svg::render_report(&report)?;
    out.write_string("error_vs_h.svg", &vs_h)?;
    out.write_string("error_vs_dofs.svg", &vs_dofs)?;
    println!("plots written: error_vs_h.svg, error_vs_dofs.svg");
    Ok(())
}
