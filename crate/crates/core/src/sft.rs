//! Supervised warm-up on teacher demonstrations.
//!
//! The teacher is a template: its reasoning names the series' value range
//! and the gold class's evidence words, its label is always the gold label,
//! and its extension mixes one or two class keywords with one action marker
//! and sometimes a generic phrase. Extensions are deliberately middling so
//! that reward-driven training has room to improve them.
//!
//! A label-agnostic *format primer* corpus (same templates, random labels)
//! stands in for a pretrained base model that already knows the output tags
//! but not the tasks.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grammar::{render, OutputMode, StructuredOutput};
use crate::grpo::{OptimizerConfig, OptimizerState};
use crate::judge::{rubric_score, RubricSpec};
use crate::policy::{
    accumulate_weighted_grad, sequence_logprobs, ContextFeatures, FeatureError, Policy,
    PolicyError, PolicyParams, VocabError,
};
use crate::tasks::{generate_balanced, range_word, TaskInstance, TaskSpec};

#[derive(Debug, thiserror::Error)]
pub enum SftError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("target of {id} cannot be tokenized: {source}")]
    Tokenize { id: String, source: VocabError },
    #[error("target of {id} cannot be rendered: {source}")]
    Render {
        id: String,
        source: crate::grammar::RenderError,
    },
    #[error("non-finite loss at step {0}")]
    NonFinite(usize),
    #[error("teacher could not reach the soft-score floor {0}")]
    Floor(f64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("demonstration i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("demonstration record: {0}")]
    Json(#[from] serde_json::Error),
}

/// A teacher-written target for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub instance: TaskInstance,
    pub target: StructuredOutput,
}

/// Teacher settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    /// Minimum rubric mean for every teacher extension.
    pub soft_floor: f64,
    /// Chance of appending a generic phrase to an extension.
    pub generic_rate: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            soft_floor: 0.2,
            generic_rate: 0.5,
        }
    }
}

fn teacher_think(spec: &TaskSpec, instance: &TaskInstance, label: &str) -> String {
    let (lo, hi) = instance.series.value_range();
    let mut words = vec![range_word(hi - lo).to_string()];
    words.extend(spec.evidence.get(label).into_iter().flatten().cloned());
    words.join(" ")
}

fn teacher_extension(
    spec: &TaskSpec,
    label: &str,
    cfg: &TeacherConfig,
    rng: &mut dyn RngCore,
) -> String {
    let Some(rubric) = spec.rubric.get(label) else {
        return String::new();
    };
    let k = rng.random_range(1..=2).min(rubric.keywords.len());
    let mut words: Vec<String> = rubric.keywords.choose_multiple(rng, k).cloned().collect();
    if let Some(m) = rubric.depth_markers.choose(rng) {
        words.push(m.clone());
    }
    words.shuffle(rng);
    if rng.random_bool(cfg.generic_rate) {
        if let Some(p) = rubric.generic_phrases.choose(rng) {
            words.push(p.clone());
        }
    }
    words.join(" ")
}

/// Teacher output for `instance` labelled `label`.
pub fn teacher_output(
    spec: &TaskSpec,
    instance: &TaskInstance,
    label: &str,
    mode: OutputMode,
    cfg: &TeacherConfig,
    rng: &mut dyn RngCore,
) -> Result<StructuredOutput, SftError> {
    let out = StructuredOutput::new(teacher_think(spec, instance, label), label);
    if !mode.extension_enabled {
        return Ok(out);
    }
    let rubric = RubricSpec::new(spec.rubric.clone());
    for _ in 0..100 {
        let ext = teacher_extension(spec, label, cfg, rng);
        let score = rubric_score(&ext, label, &out.think, label, &rubric).mean();
        if !ext.is_empty() && score >= cfg.soft_floor {
            return Ok(out.with_extension(ext));
        }
    }
    Err(SftError::Floor(cfg.soft_floor))
}

/// `n` class-balanced demonstrations whose labels are the gold labels.
pub fn generate_demonstrations(
    spec: &TaskSpec,
    n: usize,
    mode: OutputMode,
    cfg: &TeacherConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<Demonstration>, SftError> {
    generate_balanced(spec, n, rng)
        .into_iter()
        .map(|instance| {
            let target = teacher_output(spec, &instance, &instance.gold.clone(), mode, cfg, rng)?;
            Ok(Demonstration { instance, target })
        })
        .collect()
}

/// Well-formed targets whose labels and reasoning are drawn uniformly at
/// random, independent of the series.
pub fn format_primer(
    spec: &TaskSpec,
    n: usize,
    mode: OutputMode,
    cfg: &TeacherConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<Demonstration>, SftError> {
    generate_balanced(spec, n, rng)
        .into_iter()
        .map(|instance| {
            let label = spec
                .classes
                .choose(rng)
                .expect("at least two classes")
                .clone();
            let reason_label = spec
                .classes
                .choose(rng)
                .expect("at least two classes")
                .clone();
            let mut target = teacher_output(spec, &instance, &label, mode, cfg, rng)?;
            target.think = teacher_think(spec, &instance, &reason_label);
            Ok(Demonstration { instance, target })
        })
        .collect()
}

/// A tokenized target with its context.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ctx: ContextFeatures,
    pub tokens: Vec<usize>,
}

/// Featurizes and tokenizes demonstrations for `policy`.
pub fn prepare_examples(
    policy: &Policy,
    demos: &[Demonstration],
    mode: OutputMode,
) -> Result<Vec<Example>, SftError> {
    demos
        .iter()
        .map(|d| {
            let id = d.instance.id.clone();
            let text = render(&d.target, mode).map_err(|source| SftError::Render {
                id: id.clone(),
                source,
            })?;
            let tokens = policy
                .vocab
                .tokenize(&text)
                .map_err(|source| SftError::Tokenize { id, source })?;
            Ok(Example {
                ctx: policy.featurizer.featurize(&d.instance)?,
                tokens,
            })
        })
        .collect()
}

/// Mean over examples of the per-token negative log-likelihood, and its gradient.
pub fn sft_loss(params: &PolicyParams, batch: &[Example]) -> Result<(f64, PolicyParams), SftError> {
    if batch.is_empty() {
        return Err(SftError::EmptyBatch);
    }
    let b = batch.len() as f64;
    let mut grad = PolicyParams::zeros(params.shape());
    let mut loss = 0.0;
    for ex in batch {
        let lps = sequence_logprobs(params, &ex.ctx, &ex.tokens)?;
        let k = lps.len() as f64;
        loss -= lps.iter().sum::<f64>() / k;
        let w = vec![-1.0 / (k * b); lps.len()];
        accumulate_weighted_grad(params, &ex.ctx, &ex.tokens, &w, &mut grad)?;
    }
    Ok((loss / b, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            epochs: 5,
            learning_rate: 1e-2,
            batch_size: 16,
            seed: 0,
            optimizer: OptimizerConfig::adam(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftOutcome {
    pub params: PolicyParams,
    /// Loss of each minibatch before its update.
    pub losses: Vec<f64>,
}

/// Minibatch descent on [`sft_loss`], reshuffling every epoch.
pub fn sft_train(
    params_init: &PolicyParams,
    examples: &[Example],
    cfg: &SftConfig,
) -> Result<SftOutcome, SftError> {
    if examples.is_empty() {
        return Err(SftError::EmptyBatch);
    }
    let mut params = params_init.clone();
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, grad) = sft_loss(&params, &batch)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(SftError::NonFinite(losses.len()));
            }
            losses.push(loss);
            opt.apply(&mut params, &grad, cfg.learning_rate, false);
        }
    }
    Ok(SftOutcome { params, losses })
}

/// One line of an exported demonstration set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub instance_id: String,
    pub rendered_target: String,
    pub gold_label: String,
}

pub fn export_demonstrations(
    path: &Path,
    demos: &[Demonstration],
    mode: OutputMode,
) -> Result<(), SftError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in demos {
        let rendered_target = render(&d.target, mode).map_err(|source| SftError::Render {
            id: d.instance.id.clone(),
            source,
        })?;
        let rec = DemoRecord {
            instance_id: d.instance.id.clone(),
            rendered_target,
            gold_label: d.instance.gold.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn import_demonstrations(path: &Path) -> Result<Vec<DemoRecord>, SftError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
