use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Result, RunnerError};
use crate::adapt::SubstitutionKind;
use crate::factors::{CorrelationSpec, FactorSpace, Regime, RenderConfig, Sigma};
use crate::metrics::MetricSettings;
use crate::vae::{Objective, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Training hyperparameters shared by every cell. The swept axes (objective
/// and β) live in [`ExperimentConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub k_changed: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub log_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            steps: d.steps,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            k_changed: d.k_changed,
            hidden: d.hidden,
            latent_dim: d.latent_dim,
            log_every: d.log_every,
        }
    }
}

impl TrainSettings {
    pub fn for_cell(&self, objective: Objective, beta: f64) -> TrainConfig {
        TrainConfig {
            beta,
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            objective,
            k_changed: self.k_changed,
            hidden: self.hidden,
            latent_dim: self.latent_dim,
            log_every: self.log_every,
        }
    }
}

/// Where the unfairness classifiers are fitted. Predictions are always
/// audited on the uniform evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnfairnessFit {
    /// Samples of the cell's (possibly correlated) training distribution.
    TrainingDistribution,
    /// The evaluation set itself.
    EvaluationSet,
}

/// One sweep specification. Stored as JSON with a version field; unknown
/// keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub space: FactorSpace,
    pub render: RenderConfig,
    pub correlated_pair: (usize, usize),
    pub sigmas: Vec<Sigma>,
    pub objectives: Vec<Objective>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub train: TrainSettings,
    /// Pair sampler used by the weakly supervised objective.
    pub weak_regime: Regime,
    /// Evaluation set size, drawn from the uniform independent factor
    /// distribution.
    pub eval_samples: usize,
    /// Label budgets for fast adaptation; 0 entries are ignored.
    pub adaptation_labels: Vec<usize>,
    pub adaptation_kind: SubstitutionKind,
    pub metrics: MetricSettings,
    pub unfairness_fit: UnfairnessFit,
    /// Write each cell's loss trace and model checkpoint under the output
    /// directory.
    #[serde(default)]
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            space: FactorSpace::default_world(),
            render: RenderConfig::default(),
            correlated_pair: (0, 1),
            sigmas: vec![Sigma::Finite(0.2), Sigma::Finite(0.4), Sigma::Finite(0.7), Sigma::Infinite],
            objectives: vec![Objective::BetaVae],
            betas: vec![4.0],
            seeds: (1..=5).collect(),
            train: TrainSettings::default(),
            weak_regime: Regime::Observational,
            eval_samples: 10_000,
            adaptation_labels: vec![100],
            adaptation_kind: SubstitutionKind::Linear,
            metrics: MetricSettings::default(),
            unfairness_fit: UnfairnessFit::TrainingDistribution,
            save_models: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            RunnerError::Config(m) => RunnerError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn correlation(&self, sigma: Sigma) -> CorrelationSpec {
        CorrelationSpec::new(self.correlated_pair, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.sigmas.is_empty() || self.objectives.is_empty() || self.betas.is_empty() || self.seeds.is_empty() {
            return bad("sigmas, objectives, betas and seeds must be non-empty".into());
        }
        self.render.validate(&self.space).map_err(|e| RunnerError::Config(e.to_string()))?;
        for &s in &self.sigmas {
            self.correlation(s).validate(&self.space).map_err(|e| RunnerError::Config(e.to_string()))?;
        }
        for &o in &self.objectives {
            for &b in &self.betas {
                self.train.for_cell(o, b).validate().map_err(|e| RunnerError::Config(e.to_string()))?;
            }
        }
        if self.train.latent_dim < 2 {
            return bad("latent_dim must be >= 2 for the scores".into());
        }
        if self.eval_samples < 2 {
            return bad("eval_samples must be >= 2".into());
        }
        if self.metrics.mi_bins < 2 {
            return bad("metrics.mi_bins must be >= 2".into());
        }
        if let Some(&m) = self.adaptation_labels.iter().find(|&&m| m > 0 && m < crate::adapt::MIN_LABELS) {
            return bad(format!("adaptation label count {m} is below {}", crate::adapt::MIN_LABELS));
        }
        Ok(())
    }

    /// Every (sigma, objective, beta, seed) combination, in config order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &sigma in &self.sigmas {
            for &objective in &self.objectives {
                for &beta in &self.betas {
                    for &seed in &self.seeds {
                        out.push(CellKey { sigma, objective, beta, seed });
                    }
                }
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON of everything except the swept axes,
    /// so extending a sweep keeps the hash of the cells already run.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            for axis in ["sigmas", "objectives", "betas", "seeds"] {
                map.remove(axis);
            }
        }
        // serde_json maps are ordered by key, so this text is canonical.
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub sigma: Sigma,
    pub objective: Objective,
    pub beta: f64,
    pub seed: u64,
}

impl CellKey {
    /// Path-safe identifier, e.g. `beta_vae-b4-s0.2-seed1`.
    pub fn id(&self) -> String {
        format!("{}-b{}-s{}-seed{}", self.objective, self.beta, self.sigma, self.seed)
    }
}
