use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grammar::OutputMode;
use crate::grpo::{GrpoConfig, OptimizerConfig};
use crate::judge::JudgeConfig;
use crate::policy::PolicyConfig;
use crate::reward::RewardWeights;
use crate::sft::{SftConfig, TeacherConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("override {0:?} is not of the form key.path=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Parameters the policy starts from before any task-specific training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseConfig {
    /// Well-formed targets with random labels fitted into the fresh policy.
    pub primer_size: usize,
    /// Passes over the primer; 0 leaves the random initialization.
    pub primer_epochs: usize,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            primer_size: 200,
            primer_epochs: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_size: usize,
    pub eval_size: usize,
    /// Retunes the noise of tasks that support it to this Bayes rate.
    pub bayes_rate: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_size: 1000,
            eval_size: 1000,
            bayes_rate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSettings {
    pub demos: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub teacher: TeacherConfig,
}

impl Default for SftSettings {
    fn default() -> Self {
        let d = SftConfig::default();
        SftSettings {
            demos: 500,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            optimizer: d.optimizer,
            teacher: TeacherConfig::default(),
        }
    }
}

impl SftSettings {
    pub fn trainer(&self, seed: u64, epochs: usize) -> SftConfig {
        SftConfig {
            epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            optimizer: self.optimizer,
        }
    }
}

/// Where RL starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitFrom {
    /// The primed base policy.
    Base,
    /// The base policy after supervised warm-up.
    Sft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JudgeSelection {
    Rubric,
    Remote(JudgeConfig),
}

/// One row of the reward-composition ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRow {
    pub name: String,
    pub weights: RewardWeights,
    #[serde(default)]
    pub extension: bool,
    #[serde(default = "default_init")]
    pub init: InitFrom,
    /// Replaces the shared optimizer for this row.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
}

fn default_init() -> InitFrom {
    InitFrom::Base
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub reward_rows: Vec<RewardRow>,
    pub group_sizes: Vec<usize>,
    /// Sampled sequences per run in the group-size sweep, shared by every `G`.
    pub sample_budget: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let row = |name: &str, w: (f64, f64, f64)| RewardRow {
            name: name.to_string(),
            weights: RewardWeights {
                lambda_fmt: w.0,
                lambda_hard: w.1,
                lambda_soft: w.2,
            },
            extension: false,
            init: InitFrom::Base,
            optimizer: None,
            learning_rate: None,
        };
        AblationConfig {
            reward_rows: vec![
                row("fmt-only", (1.0, 0.0, 0.0)),
                row("hard-only", (0.0, 1.0, 0.0)),
                row("fmt+hard", (0.1, 0.9, 0.0)),
                RewardRow {
                    extension: true,
                    init: InitFrom::Sft,
                    optimizer: Some(OptimizerConfig::adam()),
                    learning_rate: Some(0.003),
                    ..row("fmt+hard+soft", (0.1, 0.9, 1.0))
                },
            ],
            group_sizes: vec![2, 5, 8],
            sample_budget: 160_000,
        }
    }
}

/// Everything an experiment reads. Run seeds come from `seeds` or the
/// command line; the `seed` fields inside `grpo` are overwritten per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tasks: Vec<String>,
    /// Require the `<extension>` block.
    pub extension: bool,
    pub weights: RewardWeights,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Steps between saved training states.
    pub checkpoint_every: usize,
    pub init: InitFrom,
    pub data: DataConfig,
    pub policy: PolicyConfig,
    pub base: BaseConfig,
    pub sft: SftSettings,
    pub grpo: GrpoConfig,
    pub judge: JudgeSelection,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tasks: vec!["rcw".to_string()],
            extension: false,
            weights: RewardWeights::default(),
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs/default"),
            checkpoint_every: 100,
            init: InitFrom::Sft,
            data: DataConfig::default(),
            policy: PolicyConfig::default(),
            base: BaseConfig::default(),
            sft: SftSettings::default(),
            grpo: GrpoConfig {
                max_steps: Some(2000),
                ..GrpoConfig::default()
            },
            judge: JudgeSelection::Rubric,
            ablation: AblationConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl ExperimentConfig {
    pub fn mode(&self) -> OutputMode {
        OutputMode {
            extension_enabled: self.extension,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_value(toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?)
    }

    /// Layers `path` over the defaults, applies `key.path=value` overrides in
    /// order, validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = toml::Table::try_from(Self::default()).expect("defaults serialize");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            let file = toml::from_str::<toml::Table>(&text)
                .map_err(|e| ConfigError::Parse(e.to_string()))?;
            merge(&mut value, file);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    fn from_value(value: toml::Table) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tasks.is_empty() {
            return Err(invalid("at least one task is required"));
        }
        self.weights
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if self.weights.lambda_soft > 0.0 && !self.extension {
            return Err(invalid("weights.lambda_soft > 0 requires extension = true"));
        }
        for row in &self.ablation.reward_rows {
            row.weights
                .validate()
                .map_err(|e| invalid(format!("ablation row {}: {e}", row.name)))?;
            if row.weights.lambda_soft > 0.0 && !row.extension {
                return Err(invalid(format!(
                    "ablation row {}: lambda_soft > 0 requires extension = true",
                    row.name
                )));
            }
        }
        if self.ablation.group_sizes.iter().any(|&g| g < 2) {
            return Err(invalid("ablation.group_sizes must all be at least 2"));
        }
        self.grpo.validate().map_err(|e| invalid(e.to_string()))?;
        if self.data.train_size == 0 || self.data.eval_size == 0 {
            return Err(invalid("data sizes must be positive"));
        }
        if let Some(r) = self.data.bayes_rate {
            if !(r > 0.5 && r < 1.0) {
                return Err(invalid("data.bayes_rate must lie in (0.5, 1)"));
            }
        }
        if self.policy.embed == 0 || self.policy.hidden == 0 {
            return Err(invalid("policy sizes must be positive"));
        }
        if self.sft.demos == 0 || self.base.primer_size == 0 {
            return Err(invalid("sft.demos and base.primer_size must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(invalid("checkpoint_every must be positive"));
        }
        if let JudgeSelection::Remote(j) = &self.judge {
            j.validate().map_err(|e| invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Hash of every field except `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml_string().as_bytes()))
    }
}

/// Recursively overlays `top` on `base`. A table whose `kind` tag changes is
/// replaced whole.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t))
                if t.get("kind").is_none_or(|kind| b.get("kind") == Some(kind)) =>
            {
                merge(b, t)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c=value` in `table`. The value is read as TOML, falling back to
/// a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    }
    if *last == "kind" && cur.get("kind").is_some_and(|k| *k != value) {
        cur.clear();
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
