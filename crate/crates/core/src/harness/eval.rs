use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use rand::RngCore;

use crate::grammar::{parse, validate_format, OutputMode};
use crate::judge::{Judge, JudgeError};
use crate::policy::{greedy_decode, sample_group, FeatureError, Policy, PolicyError};
use crate::reward::{hard_reward, soft_reward};
use crate::tasks::TaskInstance;

/// Confusion-table column for responses that do not parse.
pub const INVALID: &str = "(invalid)";
/// Confusion-table column for parsed labels outside the class set.
pub const OTHER: &str = "(other)";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{outputs} outputs for {instances} instances")]
    CountMismatch { outputs: usize, instances: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

/// Held-out metrics of one policy or one set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub format_rate: f64,
    /// Mean gated judge score; present only in extension mode.
    pub mean_soft: Option<f64>,
    /// `confusion[gold][predicted]` counts.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

impl EvalReport {
    /// Plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "instances    {}", self.n);
        let _ = writeln!(s, "accuracy     {:.4}", self.accuracy);
        let _ = writeln!(s, "format rate  {:.4}", self.format_rate);
        if let Some(soft) = self.mean_soft {
            let _ = writeln!(s, "mean soft    {soft:.4}");
        }
        let mut cols: Vec<&String> = self.confusion.values().flat_map(|r| r.keys()).collect();
        cols.sort();
        cols.dedup();
        let width = self
            .confusion
            .keys()
            .chain(cols.iter().copied())
            .map(String::len)
            .max()
            .unwrap_or(4)
            .max(4);
        let _ = write!(s, "\n{:width$}", "gold");
        for c in &cols {
            let _ = write!(s, "  {c:>width$}");
        }
        s.push('\n');
        for (gold, row) in &self.confusion {
            let _ = write!(s, "{gold:width$}");
            for c in &cols {
                let _ = write!(s, "  {:>width$}", row.get(*c).copied().unwrap_or(0));
            }
            s.push('\n');
        }
        s
    }
}

fn canonical_label(predicted: &str, classes: &[String]) -> String {
    classes
        .iter()
        .find(|c| hard_reward(predicted, c, classes) == 1)
        .cloned()
        .unwrap_or_else(|| OTHER.to_string())
}

/// Scores precomputed responses, one per instance.
pub fn evaluate_outputs(
    outputs: &[String],
    instances: &[TaskInstance],
    mode: OutputMode,
    judge: &dyn Judge,
) -> Result<EvalReport, EvalError> {
    if outputs.len() != instances.len() {
        return Err(EvalError::CountMismatch {
            outputs: outputs.len(),
            instances: instances.len(),
        });
    }
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let (mut correct, mut valid, mut soft_sum) = (0usize, 0usize, 0.0);
    for (text, inst) in outputs.iter().zip(instances) {
        let predicted = match parse(text, mode) {
            Ok(out) => {
                valid += 1;
                let hard = hard_reward(&out.class_label, &inst.gold, &inst.classes);
                correct += usize::from(hard);
                if mode.extension_enabled {
                    soft_sum += soft_reward(
                        out.extension.as_deref(),
                        &inst.gold,
                        hard,
                        judge,
                        &out.think,
                        &out.class_label,
                    )?;
                }
                canonical_label(&out.class_label, &inst.classes)
            }
            Err(_) => INVALID.to_string(),
        };
        *confusion
            .entry(inst.gold.clone())
            .or_default()
            .entry(predicted)
            .or_default() += 1;
    }
    let n = instances.len().max(1) as f64;
    Ok(EvalReport {
        n: instances.len(),
        accuracy: correct as f64 / n,
        format_rate: valid as f64 / n,
        mean_soft: mode.extension_enabled.then_some(soft_sum / n),
        confusion,
    })
}

/// Greedy responses of `policy` for each instance.
pub fn greedy_outputs(
    policy: &Policy,
    instances: &[TaskInstance],
    l_max: usize,
) -> Result<Vec<String>, EvalError> {
    instances
        .iter()
        .map(|inst| {
            let ctx = policy.featurizer.featurize(inst)?;
            Ok(greedy_decode(&policy.params, &policy.vocab, &ctx, l_max)?.text)
        })
        .collect()
}

/// Greedy-decodes and scores every instance.
pub fn evaluate(
    policy: &Policy,
    instances: &[TaskInstance],
    mode: OutputMode,
    judge: &dyn Judge,
    l_max: usize,
) -> Result<EvalReport, EvalError> {
    let outputs = greedy_outputs(policy, instances, l_max)?;
    evaluate_outputs(&outputs, instances, mode, judge)
}

/// Fraction of sampled responses that are well-formed, drawing `per_instance`
/// responses at `temperature` for each instance.
pub fn sampled_format_rate(
    policy: &Policy,
    instances: &[TaskInstance],
    mode: OutputMode,
    per_instance: usize,
    temperature: f64,
    l_max: usize,
    rng: &mut dyn RngCore,
) -> Result<f64, EvalError> {
    let (mut valid, mut total) = (0usize, 0usize);
    for inst in instances {
        let ctx = policy.featurizer.featurize(inst)?;
        for s in sample_group(
            &policy.params,
            &policy.vocab,
            &ctx,
            per_instance,
            l_max,
            temperature,
            rng,
        )? {
            valid += usize::from(validate_format(&s.text, mode));
            total += 1;
        }
    }
    Ok(valid as f64 / total.max(1) as f64)
}
