//! Flat INI-style experiment configs: `[section]` headers, `key = value`
//! lines, `#`/`;` full-line comments. Unknown keys are errors, not warnings,
//! so report echoes stay authoritative.

use std::collections::HashMap;

use subgrf::experiment::{BoundaryMode, ExperimentConfig, MeshMode, PathMethod, TransformSpec};
use subgrf::subordinator::SubordinatorLaw;

use crate::CliError;

/// Every key the tool understands, by section. The one-shot commands read
/// `[approximation]`/`[solve]`; `converge` reads the rest.
const KNOWN_KEYS: &[(&str, &[&str])] = &[
    (
        "subordinator",
        &["family", "rate", "shape", "downscale", "path_method"],
    ),
    ("randomfield", &["sigma1", "r1", "sigma2", "r2"]),
    (
        "coefficient",
        &["abar", "phi1_amplitude", "phi2_slope", "k_cut", "a_cut"],
    ),
    ("problem", &["bc", "f_const"]),
    ("levels", &["base", "ratio", "count", "reference"]),
    (
        "montecarlo",
        &["initial_samples", "max_samples", "rel_std_target", "seed"],
    ),
    (
        "equilibration",
        &["gamma", "rc", "kappa_standard", "kappa_adapted"],
    ),
    ("experiment", &["arms"]),
    ("approximation", &["eps_w", "eps_l"]),
    ("solve", &["h", "mesh"]),
];

/// Parsed key-value table with typed getters.
#[derive(Debug)]
pub struct ConfigFile {
    entries: HashMap<(String, String), String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, CliError> {
        let mut entries = HashMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !KNOWN_KEYS.iter().any(|(s, _)| *s == section) {
                    return Err(CliError::config(format!(
                        "unknown section `[{section}]` at line {}",
                        lineno + 1
                    )));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(format!(
                    "line {} is neither `key = value` nor a section header: `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if section.is_empty() {
                return Err(CliError::config(format!(
                    "key `{key}` at line {} appears before any [section]",
                    lineno + 1
                )));
            }
            let known = KNOWN_KEYS
                .iter()
                .find(|(s, _)| *s == section)
                .map(|(_, keys)| keys.contains(&key.as_str()))
                .unwrap_or(false);
            if !known {
                return Err(CliError::config(format!("unknown key `{section}.{key}`")));
            }
            if entries
                .insert((section.clone(), key.clone()), value)
                .is_some()
            {
                return Err(CliError::config(format!("duplicate key `{section}.{key}`")));
            }
        }
        Ok(ConfigFile { entries })
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|s| s.as_str())
    }

    fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(section, key) {
            None => Ok(None),
            Some("inf") => Ok(Some(f64::INFINITY)),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| CliError::config(format!("`{section}.{key}` is not a number: `{v}`"))),
        }
    }

    fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>, CliError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<usize>().map(Some).map_err(|_| {
                CliError::config(format!(
                    "`{section}.{key}` is not a non-negative integer: `{v}`"
                ))
            }),
        }
    }

    fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>, CliError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse::<u64>().map(Some).map_err(|_| {
                CliError::config(format!(
                    "`{section}.{key}` is not an unsigned integer: `{v}`"
                ))
            }),
        }
    }

    /// Experiment config with paper defaults for every omitted key.
    pub fn experiment_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::poisson_low_intensity();

        let family = self.get("subordinator", "family").unwrap_or("poisson");
        cfg.law = match family {
            "poisson" => SubordinatorLaw::Poisson {
                rate: self.get_f64("subordinator", "rate")?.unwrap_or(1.0),
            },
            "gamma" => SubordinatorLaw::Gamma {
                shape: self.get_f64("subordinator", "shape")?.unwrap_or(4.0),
                rate: self.get_f64("subordinator", "rate")?.unwrap_or(10.0),
            },
            other => {
                return Err(CliError::config(format!(
                    "`subordinator.family` must be poisson or gamma, got `{other}`"
                )))
            }
        };
        cfg.downscale = self.get_f64("subordinator", "downscale")?;
        cfg.path_method = match self.get("subordinator", "path_method").unwrap_or("grid") {
            "grid" => PathMethod::Grid,
            "exact" => PathMethod::Exact,
            other => {
                return Err(CliError::config(format!(
                    "`subordinator.path_method` must be exact or grid, got `{other}`"
                )))
            }
        };

        if let Some(v) = self.get_f64("randomfield", "sigma1")? {
            cfg.sigma1 = v;
        }
        if let Some(v) = self.get_f64("randomfield", "r1")? {
            cfg.r1 = v;
        }
        if let Some(v) = self.get_f64("randomfield", "sigma2")? {
            cfg.sigma2 = v;
        }
        if let Some(v) = self.get_f64("randomfield", "r2")? {
            cfg.r2 = v;
        }

        if let Some(v) = self.get_f64("coefficient", "abar")? {
            cfg.abar = v;
        }
        if let Some(v) = self.get_f64("coefficient", "phi1_amplitude")? {
            cfg.phi1 = if v == 0.0 {
                TransformSpec::Zero
            } else {
                TransformSpec::Exp { amplitude: v }
            };
        }
        if let Some(v) = self.get_f64("coefficient", "phi2_slope")? {
            cfg.phi2 = if v == 0.0 {
                TransformSpec::Zero
            } else {
                TransformSpec::Abs { slope: v }
            };
        }
        if let Some(v) = self.get_f64("coefficient", "k_cut")? {
            cfg.k_cut = v;
        }
        if let Some(v) = self.get_f64("coefficient", "a_cut")? {
            cfg.a_cut = if v.is_infinite() { None } else { Some(v) };
        }

        cfg.bc = match self.get("problem", "bc").unwrap_or("mixed") {
            "mixed" => BoundaryMode::Mixed,
            "dirichlet" => BoundaryMode::Dirichlet,
            other => {
                return Err(CliError::config(format!(
                    "`problem.bc` must be mixed or dirichlet, got `{other}`"
                )))
            }
        };
        if let Some(v) = self.get_f64("problem", "f_const")? {
            cfg.f_const = v;
        }

        if let Some(v) = self.get_f64("levels", "base")? {
            cfg.level_base = v;
        }
        if let Some(v) = self.get_f64("levels", "ratio")? {
            cfg.level_ratio = v;
        }
        if let Some(v) = self.get_usize("levels", "count")? {
            cfg.levels = v;
        }
        if let Some(v) = self.get_usize("levels", "reference")? {
            cfg.reference_level = v;
        }

        if let Some(v) = self.get_usize("montecarlo", "initial_samples")? {
            cfg.initial_samples = v;
            // the cap defaults to 16x the configured batch size
            cfg.max_samples = v.saturating_mul(16);
        }
        if let Some(v) = self.get_usize("montecarlo", "max_samples")? {
            cfg.max_samples = v;
        }
        if let Some(v) = self.get_f64("montecarlo", "rel_std_target")? {
            cfg.rel_std_target = v;
        }
        if let Some(v) = self.get_u64("montecarlo", "seed")? {
            cfg.seed = v;
        }

        if let Some(v) = self.get_f64("equilibration", "gamma")? {
            cfg.gamma = v;
        }
        if let Some(v) = self.get_f64("equilibration", "rc")? {
            cfg.rc = v;
        }
        if let Some(v) = self.get_f64("equilibration", "kappa_standard")? {
            cfg.kappa_standard = v;
        }
        if let Some(v) = self.get_f64("equilibration", "kappa_adapted")? {
            cfg.kappa_adapted = v;
        }

        if let Some(arms) = self.get("experiment", "arms") {
            cfg.arms = arms
                .split(',')
                .map(|a| match a.trim() {
                    "adapted" => Ok(MeshMode::Adapted),
                    "standard" => Ok(MeshMode::Standard),
                    other => Err(CliError::config(format!(
                        "`experiment.arms` entries must be adapted or standard, got `{other}`"
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
        }

        cfg.validate().map_err(CliError::from_config_stage)?;
        Ok(cfg)
    }

    /// Approximation parameters for the one-shot commands.
    pub fn approximation(&self) -> Result<(f64, f64), CliError> {
        let eps_w = self.get_f64("approximation", "eps_w")?.unwrap_or(0.02);
        let eps_l = self.get_f64("approximation", "eps_l")?.unwrap_or(0.005);
        if !(eps_w > 0.0) || !(eps_l > 0.0) {
            return Err(CliError::config(
                "`approximation.eps_w`/`eps_l` must be > 0".into(),
            ));
        }
        Ok((eps_w, eps_l))
    }

    /// Mesh parameters for the `solve` command.
    pub fn solve_params(&self) -> Result<(f64, MeshMode), CliError> {
        let h = self.get_f64("solve", "h")?.unwrap_or(0.1);
        if !(h > 0.0) {
            return Err(CliError::config("`solve.h` must be > 0".into()));
        }
        let mode = match self.get("solve", "mesh").unwrap_or("adapted") {
            "adapted" => MeshMode::Adapted,
            "standard" => MeshMode::Standard,
            other => {
                return Err(CliError::config(format!(
                    "`solve.mesh` must be adapted or standard, got `{other}`"
                )))
            }
        };
        Ok((h, mode))
    }
}

/// Canonical INI text for a config; parsing it back reproduces the config.
pub fn to_ini(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("[subordinator]\n");
    match cfg.law {
        SubordinatorLaw::Poisson { rate } => {
            s.push_str("family = poisson\n");
            s.push_str(&format!("rate = {rate}\n"));
        }
        SubordinatorLaw::Gamma { shape, rate } => {
            s.push_str("family = gamma\n");
            s.push_str(&format!("shape = {shape}\n"));
            s.push_str(&format!("rate = {rate}\n"));
        }
    }
    if let Some(c) = cfg.downscale {
        s.push_str(&format!("downscale = {c}\n"));
    }
    s.push_str(&format!(
        "path_method = {}\n",
        match cfg.path_method {
            PathMethod::Exact => "exact",
            PathMethod::Grid => "grid",
        }
    ));
    s.push_str("\n[randomfield]\n");
    s.push_str(&format!("sigma1 = {}\n", cfg.sigma1));
    s.push_str(&format!("r1 = {}\n", cfg.r1));
    s.push_str(&format!("sigma2 = {}\n", cfg.sigma2));
    s.push_str(&format!("r2 = {}\n", cfg.r2));
    s.push_str("\n[coefficient]\n");
    s.push_str(&format!("abar = {}\n", cfg.abar));
    let phi1 = match cfg.phi1 {
        TransformSpec::Zero => 0.0,
        TransformSpec::Exp { amplitude } => amplitude,
        TransformSpec::Abs { slope } => slope,
    };
    let phi2 = match cfg.phi2 {
        TransformSpec::Zero => 0.0,
        TransformSpec::Exp { amplitude } => amplitude,
        TransformSpec::Abs { slope } => slope,
    };
    s.push_str(&format!("phi1_amplitude = {phi1}\n"));
    s.push_str(&format!("phi2_slope = {phi2}\n"));
    s.push_str(&format!("k_cut = {}\n", cfg.k_cut));
    s.push_str(&format!(
        "a_cut = {}\n",
        cfg.a_cut
            .map(|a| a.to_string())
            .unwrap_or_else(|| "inf".into())
    ));
    s.push_str("\n[problem]\n");
    s.push_str(&format!(
        "bc = {}\n",
        match cfg.bc {
            BoundaryMode::Mixed => "mixed",
            BoundaryMode::Dirichlet => "dirichlet",
        }
    ));
    s.push_str(&format!("f_const = {}\n", cfg.f_const));
    s.push_str("\n[levels]\n");
    s.push_str(&format!("base = {}\n", cfg.level_base));
    s.push_str(&format!("ratio = {}\n", cfg.level_ratio));
    s.push_str(&format!("count = {}\n", cfg.levels));
    s.push_str(&format!("reference = {}\n", cfg.reference_level));
    s.push_str("\n[montecarlo]\n");
    s.push_str(&format!("initial_samples = {}\n", cfg.initial_samples));
    s.push_str(&format!("max_samples = {}\n", cfg.max_samples));
    s.push_str(&format!("rel_std_target = {}\n", cfg.rel_std_target));
    s.push_str(&format!("seed = {}\n", cfg.seed));
    s.push_str("\n[equilibration]\n");
    s.push_str(&format!("gamma = {}\n", cfg.gamma));
    s.push_str(&format!("rc = {}\n", cfg.rc));
    s.push_str(&format!("kappa_standard = {}\n", cfg.kappa_standard));
    s.push_str(&format!("kappa_adapted = {}\n", cfg.kappa_adapted));
    s.push_str("\n[experiment]\n");
    let arms: Vec<&str> = cfg
        .arms
        .iter()
        .map(|a| match a {
            MeshMode::Adapted => "adapted",
            MeshMode::Standard => "standard",
        })
        .collect();
    s.push_str(&format!("arms = {}\n", arms.join(",")));
    s
}
