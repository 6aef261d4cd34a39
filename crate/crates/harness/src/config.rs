//! Experiment configuration: a flat TOML file with one `[experiment]`
//! section, one `[dataset]` section and an `[[algorithm]]` table per roster
//! entry. Parsing is strict (unknown keys are rejected) and every invariant
//! is checked eagerly with a named diagnostic.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sqn_core::objectives::{LabelMode, ObjectiveKind, SyntheticConfig};

use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub dataset: DatasetSection,
    #[serde(rename = "algorithm")]
    pub algorithms: Vec<AlgorithmConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub objective: ObjectiveName,
    pub seeds: Vec<u64>,
    pub sample_budget: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub init: InitMode,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_record_every() -> usize {
    1
}

fn default_init_scale() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    RobustLinearRegression,
    NonconvexLogistic,
}

impl ObjectiveName {
    pub fn kind(self) -> ObjectiveKind {
        match self {
            ObjectiveName::RobustLinearRegression => ObjectiveKind::RobustLinearRegression,
            ObjectiveName::NonconvexLogistic => ObjectiveKind::NonconvexLogistic,
        }
    }
}

/// Distribution of the initial iterate, drawn once per seed and shared by
/// every algorithm in the roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Normal,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSection {
    Generate {
        dimension: usize,
        size: usize,
        sparsity: f64,
        label_mode: LabelModeName,
        #[serde(default)]
        shared_u: bool,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelModeName {
    Pm1,
    ZeroOne,
}

impl LabelModeName {
    pub fn mode(self) -> LabelMode {
        match self {
            LabelModeName::Pm1 => LabelMode::PlusMinusOne,
            LabelModeName::ZeroOne => LabelMode::ZeroOne,
        }
    }
}

impl DatasetSection {
    pub fn synthetic_config(&self) -> Option<SyntheticConfig> {
        match self {
            DatasetSection::Generate { dimension, size, sparsity, label_mode, shared_u, seed } => {
                Some(SyntheticConfig {
                    dimension: *dimension,
                    size: *size,
                    sparsity: *sparsity,
                    label_mode: label_mode.mode(),
                    shared_u: *shared_u,
                    seed: *seed,
                })
            }
            DatasetSection::File { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmConfig {
    ClippedSqn {
        eps: f64,
        beta: f64,
        c_param: f64,
        l0: f64,
        l1: f64,
        gamma0: f64,
        gamma1: f64,
        sigma: f64,
        delta: f64,
        q: f64,
        kappa: f64,
        memory: usize,
        s1: usize,
        s2: usize,
        restart_period: usize,
        /// Override for the eigenvalue range used by the stepsize rule; the
        /// closed-form bounds apply when absent.
        lambda_min: Option<f64>,
        lambda_max: Option<f64>,
    },
    Sgd {
        batch: usize,
        /// Fixed stepsize, or absent when `stepsize_grid` selects one.
        stepsize: Option<f64>,
        /// Candidate stepsizes; the best mean final loss is reported.
        stepsize_grid: Option<Vec<f64>>,
    },
    Spider {
        s1: usize,
        s2: usize,
        restart_period: usize,
        smooth_l: f64,
        eps: f64,
    },
    L0l1Spider {
        s1: usize,
        s2: usize,
        restart_period: usize,
        l0: f64,
        l1: f64,
        eps: f64,
    },
    #[serde(rename = "sdlbfgs")]
    SdLbfgs {
        batch: usize,
        eta0: f64,
        q_fixed: f64,
        delta: f64,
        memory: usize,
    },
}

impl AlgorithmConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmConfig::ClippedSqn { .. } => "clipped_sqn",
            AlgorithmConfig::Sgd { .. } => "sgd",
            AlgorithmConfig::Spider { .. } => "spider",
            AlgorithmConfig::L0l1Spider { .. } => "l0l1_spider",
            AlgorithmConfig::SdLbfgs { .. } => "sdlbfgs",
        }
    }

    /// The largest single-step sample draw; bounds the budget slack.
    pub fn max_step_cost(&self) -> usize {
        match *self {
            AlgorithmConfig::ClippedSqn { s1, s2, .. } => s1.max(s2),
            AlgorithmConfig::Sgd { batch, .. } => batch,
            AlgorithmConfig::Spider { s1, s2, .. } => s1.max(s2),
            AlgorithmConfig::L0l1Spider { s1, s2, .. } => s1.max(s2),
            AlgorithmConfig::SdLbfgs { batch, .. } => batch,
        }
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Io(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let exp = &self.experiment;
        if exp.seeds.is_empty() {
            return Err(HarnessError::Config("experiment.seeds must not be empty".into()));
        }
        let mut sorted = exp.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != exp.seeds.len() {
            return Err(HarnessError::Config("experiment.seeds must be distinct".into()));
        }
        if exp.sample_budget == 0 {
            return Err(HarnessError::Config("experiment.sample_budget must be positive".into()));
        }
        if exp.record_every == 0 {
            return Err(HarnessError::Config("experiment.record_every must be positive".into()));
        }
        if !(exp.init_scale > 0.0) {
            return Err(HarnessError::Config("experiment.init_scale must be positive".into()));
        }
        if self.algorithms.is_empty() {
            return Err(HarnessError::Config("at least one [[algorithm]] is required".into()));
        }
        if let DatasetSection::Generate { dimension, size, sparsity, .. } = &self.dataset {
            if *dimension == 0 || *size == 0 {
                return Err(HarnessError::Config(
                    "dataset.dimension and dataset.size must be positive".into(),
                ));
            }
            if !(*sparsity > 0.0 && *sparsity <= 1.0) {
                return Err(HarnessError::Config(format!(
                    "dataset.sparsity must lie in (0, 1], got {sparsity}"
                )));
            }
        }
        self.validate_algorithms()
    }

    fn validate_algorithms(&self) -> Result<()> {
        for (i, alg) in self.algorithms.iter().enumerate() {
            let at = |msg: String| HarnessError::Config(format!("algorithm[{i}] ({}): {msg}", alg.name()));
            match alg {
                AlgorithmConfig::ClippedSqn {
                    eps,
                    beta,
                    c_param,
                    l0,
                    l1,
                    gamma0,
                    delta,
                    q,
                    kappa,
                    memory,
                    s1,
                    s2,
                    restart_period,
                    lambda_min,
                    lambda_max,
                    ..
                } => {
                    for (name, v) in [
                        ("eps", *eps),
                        ("beta", *beta),
                        ("c_param", *c_param),
                        ("l0", *l0),
                        ("gamma0", *gamma0),
                        ("delta", *delta),
                        ("q", *q),
                        ("kappa", *kappa),
                    ] {
                        if !(v > 0.0) {
                            return Err(at(format!("{name} must be positive, got {v}")));
                        }
                    }
                    if *memory == 0 || *s1 == 0 || *s2 == 0 || *restart_period == 0 {
                        return Err(at("memory, s1, s2 and restart_period must be positive".into()));
                    }
                    let eigen = match (lambda_min, lambda_max) {
                        (Some(a), Some(b)) if *a > 0.0 && a <= b => {
                            sqn_core::quasi_newton::EigenBounds::new(*a, *b)
                                .map_err(|e| at(e.to_string()))?
                        }
                        (None, None) => {
                            let damping =
                                sqn_core::quasi_newton::DampingParams::new(*delta, *q, *kappa, *memory)
                                    .map_err(|e| at(e.to_string()))?;
                            sqn_core::quasi_newton::EigenBounds::from_damping(&damping, *gamma0)
                                .map_err(|e| at(e.to_string()))?
                        }
                        _ => {
                            return Err(at(
                                "lambda_min/lambda_max must be given together with \
                                 0 < lambda_min <= lambda_max"
                                    .into(),
                            ))
                        }
                    };
                    let h1 = sqn_core::optimizer::compute_h1(*beta, *c_param, *l1, &eigen);
                    if !(h1 > 0.0) {
                        return Err(at(format!(
                            "stepsize margin h1 = lambda_min - (beta lambda_max^2/4)\
                             (2 + 3 l1 c_param) = {h1} is not positive; shrink beta or \
                             c_param, or widen the eigenvalue range"
                        )));
                    }
                }
                AlgorithmConfig::Sgd { batch, stepsize, stepsize_grid } => {
                    if *batch == 0 {
                        return Err(at("batch must be positive".into()));
                    }
                    match (stepsize, stepsize_grid) {
                        (Some(s), None) if *s >= 0.0 => {}
                        (None, Some(grid)) if !grid.is_empty() => {
                            if grid.iter().any(|g| !(*g > 0.0)) {
                                return Err(at("stepsize_grid entries must be positive".into()));
                            }
                        }
                        _ => {
                            return Err(at(
                                "exactly one of stepsize or stepsize_grid is required".into(),
                            ))
                        }
                    }
                }
                AlgorithmConfig::Spider { s1, s2, restart_period, smooth_l, eps } => {
                    if *s1 == 0 || *s2 == 0 || *restart_period == 0 {
                        return Err(at("s1, s2 and restart_period must be positive".into()));
                    }
                    if !(*smooth_l > 0.0 && *eps > 0.0) {
                        return Err(at("smooth_l and eps must be positive".into()));
                    }
                }
                AlgorithmConfig::L0l1Spider { s1, s2, restart_period, l0, l1, eps } => {
                    if *s1 == 0 || *s2 == 0 || *restart_period == 0 {
                        return Err(at("s1, s2 and restart_period must be positive".into()));
                    }
                    if !(*l0 > 0.0 && *eps > 0.0) || *l1 < 0.0 {
                        return Err(at("l0 and eps must be positive, l1 nonnegative".into()));
                    }
                }
                AlgorithmConfig::SdLbfgs { batch, eta0, q_fixed, delta, memory } => {
                    if *batch == 0 || *memory == 0 {
                        return Err(at("batch and memory must be positive".into()));
                    }
                    if !(*eta0 > 0.0 && *delta > 0.0) {
                        return Err(at("eta0 and delta must be positive".into()));
                    }
                    if !(*q_fixed > 0.0 && *q_fixed < 1.0) {
                        return Err(at(format!("q_fixed must lie in (0, 1), got {q_fixed}")));
                    }
                }
            }
        }
        Ok(())
    }
}
