//! Format, label and extension rewards, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::grammar::{self, OutputMode};
use crate::judge::{Judge, JudgeError};
use crate::tasks::TaskInstance;

pub use crate::judge::JudgeScores;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("reward weight {name} must be a finite nonnegative number, got {value}")]
pub struct WeightError {
    pub name: &'static str,
    pub value: f64,
}

/// Coefficients of the composite reward. They are free nonnegative numbers
/// and need not sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_fmt: f64,
    pub lambda_hard: f64,
    pub lambda_soft: f64,
}

impl RewardWeights {
    pub fn new(lambda_fmt: f64, lambda_hard: f64, lambda_soft: f64) -> Result<Self, WeightError> {
        let w = RewardWeights {
            lambda_fmt,
            lambda_hard,
            lambda_soft,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        for (name, value) in [
            ("lambda_fmt", self.lambda_fmt),
            ("lambda_hard", self.lambda_hard),
            ("lambda_soft", self.lambda_soft),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(WeightError { name, value });
            }
        }
        Ok(())
    }

    /// Largest attainable total.
    pub fn max_total(&self) -> f64 {
        self.lambda_fmt + self.lambda_hard + self.lambda_soft
    }
}

impl Default for RewardWeights {
    /// Format 0.1, label 0.9, no extension reward.
    fn default() -> Self {
        RewardWeights {
            lambda_fmt: 0.1,
            lambda_hard: 0.9,
            lambda_soft: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub fmt: u8,
    pub hard: u8,
    pub soft: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn assemble(fmt: u8, hard: u8, soft: f64, w: &RewardWeights) -> Self {
        RewardBreakdown {
            fmt,
            hard,
            soft,
            total: w.lambda_fmt * fmt as f64 + w.lambda_hard * hard as f64 + w.lambda_soft * soft,
        }
    }
}

pub fn format_reward(text: &str, mode: OutputMode) -> u8 {
    grammar::validate_format(text, mode)
}

fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// 1 when the prediction names the gold class, ignoring surrounding
/// whitespace and letter case. A label outside `class_set` never matches.
pub fn hard_reward(predicted: &str, gold: &str, class_set: &[String]) -> u8 {
    let p = normalize_label(predicted);
    let in_set = class_set.iter().any(|c| normalize_label(c) == p);
    u8::from(in_set && p == normalize_label(gold))
}

/// Judge mean gated by correctness. The judge is not consulted when the label
/// is wrong or there is no extension.
pub fn soft_reward(
    extension: Option<&str>,
    gold: &str,
    hard: u8,
    judge: &dyn Judge,
    reasoning: &str,
    predicted: &str,
) -> Result<f64, JudgeError> {
    match extension {
        Some(ext) if hard == 1 => {
            Ok(judge.score(ext, gold, reasoning, predicted)?.mean() * f64::from(hard))
        }
        _ => Ok(0.0),
    }
}

/// Scores one generated text against an instance. Only judge failures can
/// make this return an error. With `lambda_soft == 0` the judge is never called.
pub fn composite_reward(
    text: &str,
    instance: &TaskInstance,
    weights: &RewardWeights,
    mode: OutputMode,
    judge: &dyn Judge,
) -> Result<RewardBreakdown, JudgeError> {
    let Ok(out) = grammar::parse(text, mode) else {
        return Ok(RewardBreakdown::assemble(0, 0, 0.0, weights));
    };
    let hard = hard_reward(&out.class_label, &instance.gold, &instance.classes);
    let soft = if weights.lambda_soft > 0.0 && mode.extension_enabled {
        soft_reward(
            out.extension.as_deref(),
            &instance.gold,
            hard,
            judge,
            &out.think,
            &out.class_label,
        )?
    } else {
        0.0
    };
    Ok(RewardBreakdown::assemble(1, hard, soft, weights))
}
