use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::plot::PlotFamily;
use crate::judge::ClassRubric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReasoningKind {
    SimpleDeterministic,
    ComplexDeterministic,
    Probabilistic,
}

/// Per-family generator parameters.
///
/// Class order matters: for `Upsweep` the first class is "call present", for
/// `Conjunction` the first class is the target (both features present), for
/// `Morphology` class `i` is shape `i` (single spike, spike pair, broad bump),
/// and for `LatentLevel` class `k` emits around level `k * level_spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorParams {
    /// A centered linear rise of total height `amplitude` buried in white noise.
    Upsweep { amplitude: f64, noise: f64 },
    /// One of three pulse shapes of height `amplitude` at a random position.
    Morphology { amplitude: f64, noise: f64 },
    /// A sinusoid whose amplitude band and cycle count jointly decide the class.
    Conjunction {
        low_amplitude: f64,
        high_amplitude: f64,
        slow_cycles: f64,
        fast_cycles: f64,
        noise: f64,
    },
    /// Latent class emits a per-instance level `N(k * spacing, emission_noise^2)`
    /// on `channel`; every channel also carries white noise.
    LatentLevel {
        level_spacing: f64,
        emission_noise: f64,
        noise: f64,
        channel: usize,
    },
}

impl GeneratorParams {
    pub fn kind(&self) -> ReasoningKind {
        match self {
            GeneratorParams::Upsweep { .. } | GeneratorParams::Morphology { .. } => {
                ReasoningKind::SimpleDeterministic
            }
            GeneratorParams::Conjunction { .. } => ReasoningKind::ComplexDeterministic,
            GeneratorParams::LatentLevel { .. } => ReasoningKind::Probabilistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("task {0}: needs at least two classes")]
    TooFewClasses(String),
    #[error("task {0}: duplicate class label {1}")]
    DuplicateLabel(String, String),
    #[error("task {0}: class label {1:?} must be a single non-empty word")]
    BadLabel(String, String),
    #[error("task {0}: prompt template is empty")]
    EmptyPrompt(String),
    #[error("task {0}: declared kind {1:?} does not match generator family")]
    KindMismatch(String, ReasoningKind),
    #[error("task {0}: {1}")]
    BadParams(String, String),
    #[error("duplicate task name {0}")]
    DuplicateTask(String),
    #[error("label {0} is used by more than one task")]
    SharedLabel(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("registry parse error: {0}")]
    Parse(String),
}

/// Words describing the overall value range of a series, from narrow to wide.
pub const RANGE_WORDS: [&str; 3] = ["narrow", "moderate", "wide"];

/// Buckets a peak-to-peak range into one of [`RANGE_WORDS`].
pub fn range_word(range: f64) -> &'static str {
    if range < 1.5 {
        RANGE_WORDS[0]
    } else if range < 3.5 {
        RANGE_WORDS[1]
    } else {
        RANGE_WORDS[2]
    }
}

/// One synthetic classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: ReasoningKind,
    pub classes: Vec<String>,
    pub length: usize,
    pub channels: Vec<String>,
    pub plot_family: PlotFamily,
    pub generator: GeneratorParams,
    /// Task description; `{classes}` is replaced by the class list.
    pub prompt_template: String,
    /// Reasoning words the teacher uses to justify each class.
    pub evidence: BTreeMap<String, Vec<String>>,
    /// Extension rubric per class label.
    pub rubric: BTreeMap<String, ClassRubric>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let name = || self.name.clone();
        if self.classes.len() < 2 {
            return Err(SpecError::TooFewClasses(name()));
        }
        let mut seen = BTreeSet::new();
        for label in &self.classes {
            if label.is_empty() || label.chars().any(|c| c.is_whitespace() || c == '<') {
                return Err(SpecError::BadLabel(name(), label.clone()));
            }
            if !seen.insert(label) {
                return Err(SpecError::DuplicateLabel(name(), label.clone()));
            }
        }
        if self.prompt_template.trim().is_empty() {
            return Err(SpecError::EmptyPrompt(name()));
        }
        if self.kind != self.generator.kind() {
            return Err(SpecError::KindMismatch(name(), self.kind));
        }
        if self.length < 2 {
            return Err(SpecError::BadParams(
                name(),
                "length must be at least 2".into(),
            ));
        }
        if self.channels.is_empty() {
            return Err(SpecError::BadParams(
                name(),
                "needs at least one channel".into(),
            ));
        }
        let bad = |msg: &str| Err(SpecError::BadParams(name(), msg.to_string()));
        match self.generator {
            GeneratorParams::Upsweep { amplitude, noise } => {
                if self.classes.len() != 2 {
                    return bad("upsweep tasks have exactly two classes");
                }
                if amplitude < 0.0 || noise < 0.0 {
                    return bad("amplitude and noise must be nonnegative");
                }
            }
            GeneratorParams::Morphology { amplitude, noise } => {
                if self.classes.len() != 3 {
                    return bad("morphology tasks have exactly three classes");
                }
                if amplitude <= 0.0 || noise < 0.0 {
                    return bad("amplitude must be positive and noise nonnegative");
                }
                if self.length < 32 {
                    return bad("morphology tasks need length >= 32");
                }
            }
            GeneratorParams::Conjunction {
                low_amplitude,
                high_amplitude,
                slow_cycles,
                fast_cycles,
                noise,
            } => {
                if self.classes.len() != 2 {
                    return bad("conjunction tasks have exactly two classes");
                }
                if !(0.0 < low_amplitude && low_amplitude < high_amplitude)
                    || !(0.0 < slow_cycles && slow_cycles < fast_cycles)
                    || noise < 0.0
                {
                    return bad("need 0 < low < high amplitude and 0 < slow < fast cycles");
                }
                if 2.0 * fast_cycles >= self.length as f64 / 2.0 {
                    return bad("fast_cycles too high for the series length");
                }
            }
            GeneratorParams::LatentLevel {
                level_spacing,
                emission_noise,
                noise,
                channel,
            } => {
                if level_spacing <= 0.0 || emission_noise < 0.0 || noise < 0.0 {
                    return bad("spacing must be positive, noises nonnegative");
                }
                if channel >= self.channels.len() {
                    return bad("emission channel out of range");
                }
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// The prompt with the class list substituted.
    pub fn render_prompt(&self) -> String {
        self.prompt_template
            .replace("{classes}", &self.classes.join(", "))
    }

    /// Best achievable accuracy under the generative model, for the families
    /// where it has a closed form (equal class priors).
    pub fn bayes_rate(&self) -> Option<f64> {
        let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
        match self.generator {
            GeneratorParams::Upsweep { amplitude, noise } => {
                if noise == 0.0 {
                    return Some(if amplitude > 0.0 { 1.0 } else { 0.5 });
                }
                let norm = ramp_norm(self.length);
                Some(std_normal.cdf(amplitude * norm / (2.0 * noise)))
            }
            GeneratorParams::LatentLevel {
                level_spacing,
                emission_noise,
                noise,
                ..
            } => {
                let k = self.classes.len() as f64;
                let sigma = (emission_noise.powi(2) + noise.powi(2) / self.length as f64).sqrt();
                if sigma == 0.0 {
                    return Some(1.0);
                }
                let p = std_normal.cdf(level_spacing / (2.0 * sigma));
                Some((2.0 * p + (k - 2.0) * (2.0 * p - 1.0)) / k)
            }
            _ => None,
        }
    }

    /// Copy of this spec with the white-noise level set so that the Bayes
    /// rate equals `rate`. Only defined for the `Upsweep` family.
    pub fn with_bayes_rate(&self, rate: f64) -> Option<TaskSpec> {
        match self.generator {
            GeneratorParams::Upsweep { amplitude, .. } if rate > 0.5 && rate < 1.0 => {
                let z = Normal::new(0.0, 1.0).ok()?.inverse_cdf(rate);
                let noise = amplitude * ramp_norm(self.length) / (2.0 * z);
                let mut spec = self.clone();
                spec.generator = GeneratorParams::Upsweep { amplitude, noise };
                Some(spec)
            }
            _ => None,
        }
    }
}

/// `t / (T - 1) - 0.5`, the unit-rise centered ramp used by the upsweep family.
pub(crate) fn ramp(t: usize, len: usize) -> f64 {
    t as f64 / (len - 1) as f64 - 0.5
}

/// Euclidean norm of the unit-rise centered ramp.
pub(crate) fn ramp_norm(len: usize) -> f64 {
    (0..len).map(|t| ramp(t, len).powi(2)).sum::<f64>().sqrt()
}

/// The set of tasks an experiment can draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRegistry {
    pub tasks: Vec<TaskSpec>,
}

impl TaskRegistry {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self, SpecError> {
        let registry = TaskRegistry { tasks };
        registry.validate()?;
        Ok(registry)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let mut names = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for spec in &self.tasks {
            spec.validate()?;
            if !names.insert(&spec.name) {
                return Err(SpecError::DuplicateTask(spec.name.clone()));
            }
            for label in &spec.classes {
                if !labels.insert(label) {
                    return Err(SpecError::SharedLabel(label.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&TaskSpec, SpecError> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| SpecError::UnknownTask(name.to_string()))
    }

    /// A registry holding only the named tasks, in the given order.
    pub fn subset(&self, names: &[String]) -> Result<TaskRegistry, SpecError> {
        let tasks = names
            .iter()
            .map(|n| self.get(n).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        TaskRegistry::new(tasks)
    }

    pub fn max_channels(&self) -> usize {
        self.tasks
            .iter()
            .map(|t| t.channels.len())
            .max()
            .unwrap_or(0)
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SpecError> {
        let registry: TaskRegistry =
            toml::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        registry.validate()?;
        Ok(registry)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("registry serializes to TOML")
    }
}

impl Default for TaskRegistry {
    /// Six synthetic analogs covering the three reasoning regimes.
    fn default() -> Self {
        TaskRegistry::new(super::defaults::default_tasks()).expect("built-in registry is valid")
    }
}
