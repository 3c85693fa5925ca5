//! Extension scoring along four dimensions: specificity, appropriateness,
//! relevance and depth.
//!
//! Two scorers implement [`Judge`]: a deterministic keyword rubric that runs
//! offline ([`RubricJudge`]) and a client for an OpenAI-compatible chat
//! endpoint that asks a model for the averaged score ([`RemoteJudge`]).

mod cache;
mod remote;
mod rubric;

pub use cache::{CacheRecord, JudgeCache};
pub use remote::{
    parse_judge_reply, remote_score, render_judge_prompt, ChatMessage, ChatRequest, ChatTransport,
    Fallback, HttpTransport, JudgeConfig, ParseError, RemoteJudge, TransportError, JUDGE_PROMPT,
    JUDGE_PROMPT_VERSION,
};
pub use rubric::{rubric_score, ClassRubric, RubricJudge, RubricSpec};

use serde::{Deserialize, Serialize};

/// Per-dimension extension scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JudgeScores {
    pub specificity: f64,
    pub appropriateness: f64,
    pub relevance: f64,
    pub depth: f64,
}

fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

impl JudgeScores {
    pub fn new(specificity: f64, appropriateness: f64, relevance: f64, depth: f64) -> Self {
        JudgeScores {
            specificity: clamp01(specificity),
            appropriateness: clamp01(appropriateness),
            relevance: clamp01(relevance),
            depth: clamp01(depth),
        }
    }

    /// All four dimensions set to `score`.
    pub fn uniform(score: f64) -> Self {
        JudgeScores::new(score, score, score, score)
    }

    /// Pairwise mean, so that `uniform(f).mean() == f` exactly.
    pub fn mean(&self) -> f64 {
        ((self.specificity + self.appropriateness) + (self.relevance + self.depth)) / 4.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("judge transport failed: {0}")]
    Transport(#[from] TransportError),
    #[error("judge reply unusable: {0}")]
    Parse(#[from] ParseError),
    #[error("judge gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("judge cache i/o: {0}")]
    Cache(#[from] std::io::Error),
    #[error("judge misconfigured: {0}")]
    Config(String),
}

/// Scores an extension given the gold label and the surrounding output.
pub trait Judge: Send + Sync {
    fn score(
        &self,
        extension: &str,
        gold: &str,
        reasoning: &str,
        predicted: &str,
    ) -> Result<JudgeScores, JudgeError>;

    /// Identifies the scorer and its prompt or rubric, for provenance.
    fn version(&self) -> String;
}

impl<J: Judge + ?Sized> Judge for &J {
    fn score(
        &self,
        extension: &str,
        gold: &str,
        reasoning: &str,
        predicted: &str,
    ) -> Result<JudgeScores, JudgeError> {
        (**self).score(extension, gold, reasoning, predicted)
    }

    fn version(&self) -> String {
        (**self).version()
    }
}

impl<J: Judge + ?Sized> Judge for Box<J> {
    fn score(
        &self,
        extension: &str,
        gold: &str,
        reasoning: &str,
        predicted: &str,
    ) -> Result<JudgeScores, JudgeError> {
        (**self).score(extension, gold, reasoning, predicted)
    }

    fn version(&self) -> String {
        (**self).version()
    }
}
