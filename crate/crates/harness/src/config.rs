//! Experiment configuration: a TOML document describing the model family,
//! its shape, the data source, the learning-rate schedule, and the run
//! mode.  [`SCHEMA`] is the canonical, self-describing reference printed by
//! `oem --print-schema`.

use serde::{Deserialize, Serialize};

use online_em::schedule::DecaySchedule;

use crate::{HarnessError, Result};

/// Canonical schema for experiment configuration files, printed verbatim by
/// `oem --print-schema`.
pub const SCHEMA: &str = r#"# Experiment configuration schema (TOML).  Unknown keys are rejected.

family = "mixture"        # "mixture" | "hmm" | "kalman" | "dirichlet"
mode = "online"           # "batch" | "online" | "distributed"
seed = 7                  # u64 master seed; the --seed flag overrides it
repeats = 1               # >= 1; independent repeats (fresh init per repeat)
minibatch = 100           # >= 1; observations (or sequences) per online step
epochs = 1                # >= 1; passes over the training data (online mode)

[shape]                   # model shape; read per family, others ignored
k = 3                     # mixture: number of components (>= 1)
dim = 4                   # mixture/hmm: observation dim; dirichlet: categories
emission = "gaussian"     # mixture/hmm: "gaussian" | "poisson"
transient = 3             # hmm: transient states (one absorbing state added)
hidden_dim = 5            # kalman: hidden state dimension
obs_dim = 10              # kalman: observation dimension
t_len = 20                # kalman: fixed sequence length (>= 2)

[data]
source = "synthetic"      # "synthetic" | "csv"
count = 2000              # synthetic: training observations/sequences/documents
path = ""                 # csv: dataset path (required when source = "csv")
words_per_doc = 100       # dirichlet synthetic: words per document
max_len = 200             # hmm synthetic: sequence-length cap
holdout = 0               # observations held out for evaluation (0 = none);
                          # drawn fresh for synthetic data, split off the end
                          # of a csv dataset

[schedule]
eta0 = 0.5                # > 0
beta = 0.9                # (0.5, 1]; exactly 0.5 is accepted with a warning

[batch]                   # read when mode = "batch"
iterations = 10           # >= 1 full-data EM iterations

[online]                  # read when mode = "online" | "distributed"
holdout_every = 10        # >= 1; iterations between holdout evaluations
pseudo_count = 2000       # dirichlet: pseudo-samples for the sampled inertia
timing = false            # record wall-clock ms (breaks byte determinism)

[distributed]             # read when mode = "distributed" (mixture family only)
workers = 3               # >= 2 machines
sync_period = 500         # >= 1 observations per worker between combines
strategy = "entropic"     # "entropic" | "simple"
alpha_rule = "shard_size" # "shard_size" | "uniform"
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mixture,
    Hmm,
    Kalman,
    Dirichlet,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Mixture => "mixture",
            Family::Hmm => "hmm",
            Family::Kalman => "kalman",
            Family::Dirichlet => "dirichlet",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture" => Ok(Family::Mixture),
            "hmm" => Ok(Family::Hmm),
            "kalman" => Ok(Family::Kalman),
            "dirichlet" => Ok(Family::Dirichlet),
            other => Err(HarnessError::config(format!(
                "unknown family {other:?}; expected mixture|hmm|kalman|dirichlet"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Batch,
    Online,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emission {
    Gaussian,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineStrategy {
    Entropic,
    Simple,
}

impl CombineStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            CombineStrategy::Entropic => "entropic",
            CombineStrategy::Simple => "simple",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaRule {
    ShardSize,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_emission")]
    pub emission: Emission,
    #[serde(default = "default_transient")]
    pub transient: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_obs_dim")]
    pub obs_dim: usize,
    #[serde(default = "default_t_len")]
    pub t_len: usize,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            k: default_k(),
            dim: default_dim(),
            emission: default_emission(),
            transient: default_transient(),
            hidden_dim: default_hidden_dim(),
            obs_dim: default_obs_dim(),
            t_len: default_t_len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_source")]
    pub source: DataSource,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub path: String,
    #[serde(default = "default_words_per_doc")]
    pub words_per_doc: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: default_source(),
            count: default_count(),
            path: String::new(),
            words_per_doc: default_words_per_doc(),
            max_len: default_max_len(),
            holdout: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub eta0: f64,
    pub beta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            eta0: 0.5,
            beta: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            iterations: default_iterations(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    #[serde(default = "default_holdout_every")]
    pub holdout_every: usize,
    #[serde(default = "default_pseudo_count")]
    pub pseudo_count: usize,
    #[serde(default)]
    pub timing: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            holdout_every: default_holdout_every(),
            pseudo_count: default_pseudo_count(),
            timing: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributedConfig {
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_sync_period")]
    pub sync_period: usize,
    #[serde(default = "default_strategy")]
    pub strategy: CombineStrategy,
    #[serde(default = "default_alpha_rule")]
    pub alpha_rule: AlphaRule,
}

impl Default for DistributedConfig {
    fn default() -> Self {
        DistributedConfig {
            workers: default_workers(),
            sync_period: default_sync_period(),
            strategy: default_strategy(),
            alpha_rule: default_alpha_rule(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub mode: Mode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub shape: ShapeConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub batch: BatchConfig,
    #[serde(default)]
    pub online: OnlineConfig,
    #[serde(default)]
    pub distributed: DistributedConfig,
}

fn default_k() -> usize {
    3
}
fn default_dim() -> usize {
    4
}
fn default_emission() -> Emission {
    Emission::Gaussian
}
fn default_transient() -> usize {
    3
}
fn default_hidden_dim() -> usize {
    5
}
fn default_obs_dim() -> usize {
    10
}
fn default_t_len() -> usize {
    20
}
fn default_source() -> DataSource {
    DataSource::Synthetic
}
fn default_count() -> usize {
    2000
}
fn default_words_per_doc() -> usize {
    100
}
fn default_max_len() -> usize {
    200
}
fn default_iterations() -> usize {
    10
}
fn default_holdout_every() -> usize {
    10
}
fn default_pseudo_count() -> usize {
    2000
}
fn default_workers() -> usize {
    3
}
fn default_sync_period() -> usize {
    500
}
fn default_strategy() -> CombineStrategy {
    CombineStrategy::Entropic
}
fn default_alpha_rule() -> AlphaRule {
    AlphaRule::ShardSize
}
fn default_seed() -> u64 {
    0
}
fn default_repeats() -> usize {
    1
}
fn default_minibatch() -> usize {
    100
}
fn default_epochs() -> usize {
    1
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses, and validates a config file.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(format!("reading config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The learning-rate schedule this config describes (lenient about the
    /// `beta = 0.5` boundary, which is accepted with a warning).
    pub fn decay_schedule(&self) -> Result<DecaySchedule> {
        Ok(DecaySchedule::new_lenient(
            self.schedule.eta0,
            self.schedule.beta,
        )?)
    }

    /// Cross-field validation: positive counts and mode-required blocks.
    pub fn validate(&self) -> Result<()> {
        let positive = |value: usize, what: &str| -> Result<()> {
            if value == 0 {
                return Err(HarnessError::config(format!("{what} must be positive")));
            }
            Ok(())
        };
        positive(self.repeats, "repeats")?;
        positive(self.minibatch, "minibatch")?;
        positive(self.epochs, "epochs")?;
        positive(self.shape.k, "shape.k")?;
        positive(self.shape.dim, "shape.dim")?;
        positive(self.shape.transient, "shape.transient")?;
        positive(self.shape.hidden_dim, "shape.hidden_dim")?;
        positive(self.shape.obs_dim, "shape.obs_dim")?;
        positive(self.data.words_per_doc, "data.words_per_doc")?;
        positive(self.data.max_len, "data.max_len")?;
        if self.shape.t_len < 2 {
            return Err(HarnessError::config("shape.t_len must be at least 2"));
        }
        match self.data.source {
            DataSource::Synthetic => positive(self.data.count, "data.count")?,
            DataSource::Csv => {
                if self.data.path.is_empty() {
                    return Err(HarnessError::config(
                        "data.path is required when data.source = \"csv\"",
                    ));
                }
            }
        }
        self.decay_schedule()?;
        match self.mode {
            Mode::Batch => positive(self.batch.iterations, "batch.iterations")?,
            Mode::Online => {
                if self.data.holdout > 0 {
                    positive(self.online.holdout_every, "online.holdout_every")?;
                }
            }
            Mode::Distributed => {
                if self.family != Family::Mixture {
                    return Err(HarnessError::config(
                        "distributed mode supports the mixture family only",
                    ));
                }
                if self.distributed.workers < 2 {
                    return Err(HarnessError::config(
                        "distributed.workers must be at least 2",
                    ));
                }
                positive(self.distributed.sync_period, "distributed.sync_period")?;
                if self.data.holdout > 0 {
                    positive(self.online.holdout_every, "online.holdout_every")?;
                }
            }
        }
        if self.family == Family::Dirichlet && self.shape.dim < 2 {
            return Err(HarnessError::config("dirichlet models need shape.dim >= 2"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_schema_document_itself_parses() {
        // The schema is a valid config modulo the placeholder csv path, so
        // users can start from it directly.
        let config = ExperimentConfig::from_toml_str(SCHEMA).unwrap();
        assert_eq!(config.family, Family::Mixture);
        assert_eq!(config.mode, Mode::Online);
        assert_eq!(config.shape.transient, 3);
        assert_eq!(config.distributed.sync_period, 500);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let config = ExperimentConfig::from_toml_str(
            "family = \"dirichlet\"\nmode = \"batch\"\n[shape]\ndim = 10\n",
        )
        .unwrap();
        assert_eq!(config.repeats, 1);
        assert_eq!(config.batch.iterations, 10);
        assert_eq!(config.data.count, 2000);
        assert_eq!(config.shape.dim, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            ExperimentConfig::from_toml_str("family = \"mixture\"\nmode = \"online\"\nbogus = 1\n")
                .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn mode_requirements_are_enforced() {
        // Distributed mode is mixture-only.
        let err = ExperimentConfig::from_toml_str("family = \"hmm\"\nmode = \"distributed\"\n")
            .unwrap_err();
        assert!(err.to_string().contains("mixture"));

        // CSV source needs a path.
        let err = ExperimentConfig::from_toml_str(
            "family = \"mixture\"\nmode = \"online\"\n[data]\nsource = \"csv\"\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("data.path"));

        // Zero counts are rejected.
        let err = ExperimentConfig::from_toml_str(
            "family = \"mixture\"\nmode = \"online\"\nrepeats = 0\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("repeats"));

        // An out-of-range exponent is a config error...
        let err = ExperimentConfig::from_toml_str(
            "family = \"mixture\"\nmode = \"online\"\n[schedule]\neta0 = 0.5\nbeta = 0.4\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("beta"));

        // ...but the boundary value 0.5 is tolerated.
        ExperimentConfig::from_toml_str(
            "family = \"mixture\"\nmode = \"online\"\n[schedule]\neta0 = 0.05\nbeta = 0.5\n",
        )
        .unwrap();
    }
}
