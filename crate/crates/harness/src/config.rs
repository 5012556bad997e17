//! Experiment configuration: a TOML file with a fixed schema. Unknown keys
//! are rejected and every error names the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub params: SolverParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Beckmann,
    StableDynamics,
}

/// Where the instance comes from. Generator parameters that a source does
/// not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `two-parallel-links`, `single-link`, `random-assignment`,
    /// `random-graph`, `grid`, `tntp`, `random-distribution`, `matrix`,
    /// `four-zone-city`, `four-zone-city-halved` or `one-mode-city`.
    pub source: String,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    /// Size knob of the random generators (links, nodes, side or matrix size).
    pub size: Option<usize>,
    pub capacity: Option<f64>,
    pub demand: Option<f64>,
    /// Multiplies every demand entry or marginal.
    pub demand_scale: Option<f64>,
    /// TNTP network and trips files, relative to the config file.
    pub network: Option<PathBuf>,
    pub trips: Option<PathBuf>,
    /// Inline distribution problem for `matrix`.
    pub costs: Option<Vec<Vec<f64>>>,
    pub productions: Option<Vec<f64>>,
    pub attractions: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub solvers: Vec<String>,
    /// Relative accuracy: FW relative gap, or USTM `ε` as a fraction of the
    /// free-flow objective scale.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub max_seconds: Option<f64>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Entropy parameters for `distribute`.
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_marginal_tol")]
    pub marginal_tol: f64,
    /// Stable-dynamics capacity violation threshold.
    pub violation_tol: Option<f64>,
    /// USTM assignment: solve with `10ε` first and restart.
    #[serde(default)]
    pub restart: bool,
    /// Output directory; not part of the config hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

fn default_eps() -> f64 {
    1e-4
}
fn default_max_iter() -> usize {
    1000
}
fn default_threads() -> usize {
    1
}
fn default_gammas() -> Vec<f64> {
    vec![0.1, 1.0, 10.0, 100.0]
}
fn default_marginal_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub brent_tolerance: f64,
    pub armijo_shrink: f64,
    pub armijo_slope: f64,
    pub adaptive_increase: f64,
    pub adaptive_decrease: f64,
    pub four_stage_inner_iters: usize,
    pub four_stage_averaging: f64,
    /// Distribution solver inside the combined-model oracle.
    pub inner_method: String,
    pub inner_max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            brent_tolerance: 1e-8,
            armijo_shrink: 0.5,
            armijo_slope: 1e-4,
            adaptive_increase: 2.0,
            adaptive_decrease: 0.5,
            four_stage_inner_iters: 20,
            four_stage_averaging: 0.5,
            inner_method: "sinkhorn-taut-shift".into(),
            inner_max_iter: 10_000,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub eps: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            UsageError::new(path, e.into_inner().message().trim().to_string())
        })
    }

    /// Reads a config and resolves scenario file paths against its directory.
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            UsageError::new("--config", format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scenario.network, &mut cfg.scenario.trips]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(t) = o.threads {
            self.run.threads = t;
        }
        if let Some(out) = &o.out {
            self.run.out = Some(out.clone());
        }
        if let Some(s) = o.seed {
            self.scenario.seed = s;
        }
        if let Some(m) = o.max_iter {
            self.run.max_iter = m;
        }
        if let Some(e) = o.eps {
            self.run.eps = e;
        }
    }

    /// Checks budgets and tolerances; solver names are checked per command.
    pub fn validate(&self) -> Result<(), UsageError> {
        let run = &self.run;
        if run.solvers.is_empty() {
            return Err(UsageError::new(
                "run.solvers",
                "at least one solver is required",
            ));
        }
        if run.max_iter == 0 {
            return Err(UsageError::new("run.max_iter", "must be positive"));
        }
        if !(run.eps > 0.0 && run.eps.is_finite()) {
            return Err(UsageError::new("run.eps", "must be positive and finite"));
        }
        if run.max_seconds.is_some_and(|s| !(s > 0.0)) {
            return Err(UsageError::new("run.max_seconds", "must be positive"));
        }
        if run.threads == 0 {
            return Err(UsageError::new("run.threads", "must be positive"));
        }
        if run.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(UsageError::new(
                "run.gammas",
                "every γ must be positive and finite",
            ));
        }
        if !(run.marginal_tol >= 0.0) {
            return Err(UsageError::new("run.marginal_tol", "must be nonnegative"));
        }
        if self.scenario.demand_scale.is_some_and(|s| !(s > 0.0)) {
            return Err(UsageError::new("scenario.demand_scale", "must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
