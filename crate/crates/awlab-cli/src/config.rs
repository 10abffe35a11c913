//! Flat `section.key = value` experiment configuration.
//!
//! Unknown keys are rejected with their line number; every value is
//! re-validated through the core constructors at load time. Defaults are the
//! canonical desk-scale setup.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use awlab_core::hum::ObsNorm;
use awlab_core::model::PhysicalParams;
use awlab_core::stochastic::NoiseModel;
use awlab_core::{grid, AnnulusGrid, CoreError};

#[derive(Debug, Clone)]
pub struct ConfigError {
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

impl From<CoreError> for ConfigError {
    fn from(e: CoreError) -> Self {
        ConfigError { message: e.to_string() }
    }
}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError { message: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignOverride {
    Auto,
    Plus,
    Minus,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    // geometry
    pub r0: f64,
    pub r1: f64,
    pub nr: usize,
    pub ntheta: usize,
    // physics
    pub rho: f64,
    pub kappa: f64,
    pub m: f64,
    pub sigma: f64,
    pub d: f64,
    pub k: f64,
    // horizon
    pub t_final: f64,
    pub dt: f64,
    pub eps0: f64,
    // hum
    pub cg_tol: f64,
    pub max_iter: usize,
    pub tikhonov: f64,
    pub obs_norm: ObsNorm,
    pub sign_override: SignOverride,
    // noise
    pub n_modes: usize,
    pub q0: f64,
    pub decay_s: f64,
    pub seed: u64,
    pub n_paths: usize,
    // outputs
    pub directory: String,
    pub decimation: usize,
    // reduced grid for the dense/ensemble experiments
    pub reduced_nr: usize,
    pub reduced_ntheta: usize,
    pub reduced_dt: f64,
    pub reduced_t_final: f64,
    pub checkpoints: Vec<f64>,
    // observability estimation
    pub obs_samples: usize,
    pub power_iterations: usize,
    pub permutations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            r0: 0.5,
            r1: 1.0,
            nr: 24,
            ntheta: 48,
            rho: 1.0,
            kappa: 1.0,
            m: 1.0,
            sigma: 0.1,
            d: 1.0,
            k: 1.0,
            t_final: 5.0,
            dt: 2e-3,
            eps0: 0.5,
            cg_tol: 1e-3,
            max_iter: 200,
            tikhonov: 0.0,
            obs_norm: ObsNorm::Cutoff,
            sign_override: SignOverride::Auto,
            n_modes: 6,
            q0: 1.0,
            decay_s: 2.0,
            seed: 42,
            n_paths: 2000,
            directory: "out".into(),
            decimation: 10,
            reduced_nr: 8,
            reduced_ntheta: 16,
            reduced_dt: 0.02,
            reduced_t_final: 50.0,
            checkpoints: vec![2.5, 10.0, 25.0, 50.0],
            obs_samples: 8,
            power_iterations: 20,
            permutations: 199,
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = lineno + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {lineno}: expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if let Some(prev) = seen.insert(key.to_string(), lineno) {
                return Err(err(format!(
                    "line {lineno}: key `{key}` already set on line {prev}"
                )));
            }
            cfg.apply(key, value)
                .map_err(|e| err(format!("line {lineno}, key `{key}`: {}", e.message)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn f64_of(v: &str) -> Result<f64, ConfigError> {
            v.parse().map_err(|_| err(format!("`{v}` is not a number")))
        }
        fn usize_of(v: &str) -> Result<usize, ConfigError> {
            v.parse().map_err(|_| err(format!("`{v}` is not a nonnegative integer")))
        }
        match key {
            "geometry.r0" => self.r0 = f64_of(value)?,
            "geometry.r1" => self.r1 = f64_of(value)?,
            "geometry.nr" => self.nr = usize_of(value)?,
            "geometry.ntheta" => self.ntheta = usize_of(value)?,
            "physics.rho" => self.rho = f64_of(value)?,
            "physics.kappa" => self.kappa = f64_of(value)?,
            "physics.m" => self.m = f64_of(value)?,
            "physics.sigma" => self.sigma = f64_of(value)?,
            "physics.d" => self.d = f64_of(value)?,
            "physics.k" => self.k = f64_of(value)?,
            "horizon.t" => self.t_final = f64_of(value)?,
            "horizon.dt" => self.dt = f64_of(value)?,
            "horizon.eps0" => self.eps0 = f64_of(value)?,
            "hum.cg_tol" => self.cg_tol = f64_of(value)?,
            "hum.max_iter" => self.max_iter = usize_of(value)?,
            "hum.tikhonov" => self.tikhonov = f64_of(value)?,
            "hum.obs_norm" => {
                self.obs_norm = match value {
                    "plain" => ObsNorm::Plain,
                    "cutoff" => ObsNorm::Cutoff,
                    other => return Err(err(format!("unknown obs_norm `{other}` (plain|cutoff)"))),
                }
            }
            "hum.sign_override" => {
                self.sign_override = match value {
                    "auto" => SignOverride::Auto,
                    "plus" => SignOverride::Plus,
                    "minus" => SignOverride::Minus,
                    other => {
                        return Err(err(format!("unknown sign_override `{other}` (auto|plus|minus)")))
                    }
                }
            }
            "noise.n_modes" => self.n_modes = usize_of(value)?,
            "noise.q0" => self.q0 = f64_of(value)?,
            "noise.decay_s" => self.decay_s = f64_of(value)?,
            "noise.seed" => {
                self.seed = value.parse().map_err(|_| err(format!("`{value}` is not a seed")))?
            }
            "noise.n_paths" => self.n_paths = usize_of(value)?,
            "outputs.directory" => self.directory = value.to_string(),
            "outputs.decimation" => self.decimation = usize_of(value)?,
            "reduced.nr" => self.reduced_nr = usize_of(value)?,
            "reduced.ntheta" => self.reduced_ntheta = usize_of(value)?,
            "reduced.dt" => self.reduced_dt = f64_of(value)?,
            "reduced.t_final" => self.reduced_t_final = f64_of(value)?,
            "reduced.checkpoints" => {
                let mut pts = Vec::new();
                for part in value.split(',') {
                    pts.push(f64_of(part.trim())?);
                }
                if pts.is_empty() {
                    return Err(err("need at least one checkpoint"));
                }
                self.checkpoints = pts;
            }
            "observability.n_samples" => self.obs_samples = usize_of(value)?,
            "observability.power_iterations" => self.power_iterations = usize_of(value)?,
            "mixing.permutations" => self.permutations = usize_of(value)?,
            other => return Err(err(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.physics()?;
        self.grid()?;
        self.reduced_grid()?;
        self.noise()?;
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(err("horizon.t and horizon.dt must be positive"));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 0.5 * self.t_final) {
            return Err(err("horizon.eps0 must satisfy 0 < eps0 < T/2"));
        }
        if self.decimation == 0 {
            return Err(err("outputs.decimation must be at least 1"));
        }
        for &c in &self.checkpoints {
            if !(c > 0.0 && c <= self.reduced_t_final) {
                return Err(err(format!("checkpoint {c} outside (0, reduced.t_final]")));
            }
        }
        Ok(())
    }

    pub fn physics(&self) -> Result<PhysicalParams, ConfigError> {
        Ok(PhysicalParams::new(self.rho, self.kappa, self.m, self.sigma, self.d, self.k)?)
    }

    pub fn grid(&self) -> Result<AnnulusGrid, ConfigError> {
        Ok(grid::build_grid(self.r0, self.r1, self.nr, self.ntheta)?)
    }

    pub fn reduced_grid(&self) -> Result<AnnulusGrid, ConfigError> {
        Ok(grid::build_grid(self.r0, self.r1, self.reduced_nr, self.reduced_ntheta)?)
    }

    pub fn noise(&self) -> Result<NoiseModel, ConfigError> {
        Ok(NoiseModel::new(self.n_modes, self.q0, self.decay_s, self.seed)?)
    }

    /// Canonical `key = value` rendering, embedded in every report.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("geometry.r0", format!("{}", self.r0));
        kv("geometry.r1", format!("{}", self.r1));
        kv("geometry.nr", format!("{}", self.nr));
        kv("geometry.ntheta", format!("{}", self.ntheta));
        kv("physics.rho", format!("{}", self.rho));
        kv("physics.kappa", format!("{}", self.kappa));
        kv("physics.m", format!("{}", self.m));
        kv("physics.sigma", format!("{}", self.sigma));
        kv("physics.d", format!("{}", self.d));
        kv("physics.k", format!("{}", self.k));
        kv("horizon.t", format!("{}", self.t_final));
        kv("horizon.dt", format!("{}", self.dt));
        kv("horizon.eps0", format!("{}", self.eps0));
        kv("hum.cg_tol", format!("{}", self.cg_tol));
        kv("hum.max_iter", format!("{}", self.max_iter));
        kv("hum.tikhonov", format!("{}", self.tikhonov));
        kv(
            "hum.obs_norm",
            match self.obs_norm {
                ObsNorm::Plain => "plain".into(),
                ObsNorm::Cutoff => "cutoff".into(),
            },
        );
        kv(
            "hum.sign_override",
            match self.sign_override {
                SignOverride::Auto => "auto".into(),
                SignOverride::Plus => "plus".into(),
                SignOverride::Minus => "minus".into(),
            },
        );
        kv("noise.n_modes", format!("{}", self.n_modes));
        kv("noise.q0", format!("{}", self.q0));
        kv("noise.decay_s", format!("{}", self.decay_s));
        kv("noise.seed", format!("{}", self.seed));
        kv("noise.n_paths", format!("{}", self.n_paths));
        kv("outputs.directory", self.directory.clone());
        kv("outputs.decimation", format!("{}", self.decimation));
        kv("reduced.nr", format!("{}", self.reduced_nr));
        kv("reduced.ntheta", format!("{}", self.reduced_ntheta));
        kv("reduced.dt", format!("{}", self.reduced_dt));
        kv("reduced.t_final", format!("{}", self.reduced_t_final));
        kv(
            "reduced.checkpoints",
            self.checkpoints.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("observability.n_samples", format!("{}", self.obs_samples));
        kv("observability.power_iterations", format!("{}", self.power_iterations));
        kv("mixing.permutations", format!("{}", self.permutations));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn parse_overrides_and_comments() {
        let text = "\n# comment\ngeometry.nr = 12  # trailing\nnoise.q0 = 0.25\nhum.obs_norm = plain\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.nr, 12);
        assert_eq!(cfg.q0, 0.25);
        assert_eq!(cfg.obs_norm, ObsNorm::Plain);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "geometry.r0 = 0.5\ngeometry.bogus = 1\n";
        let e = ExperimentConfig::parse(bad).unwrap_err();
        assert!(e.message.contains("line 2"), "{}", e.message);
        assert!(e.message.contains("bogus"));

        let dup = "geometry.r0 = 0.5\ngeometry.r0 = 0.6\n";
        let e = ExperimentConfig::parse(dup).unwrap_err();
        assert!(e.message.contains("already set"));

        let invalid = "geometry.r1 = 0.25\n";
        let e = ExperimentConfig::parse(invalid).unwrap_err();
        assert!(e.message.contains("outer radius"), "{}", e.message);
    }

    #[test]
    fn render_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.render();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back.render(), text);
    }
}
