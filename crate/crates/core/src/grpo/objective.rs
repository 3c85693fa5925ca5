use crate::policy::{
    accumulate_weighted_grad, sequence_logprobs, ContextFeatures, PolicyError, PolicyParams,
    SampledSequence,
};

use super::{GrpoConfig, GrpoError};

/// Group-normalized advantages `(r_i - mean) / sqrt(var + eps_std)` with the
/// population variance.
pub fn normalize_advantages(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let g = rewards.len() as f64;
    let mean = rewards[0] + rewards.iter().map(|r| r - rewards[0]).sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g;
    let sd = (var + eps_std).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / sd).collect())
}

/// `min(ρÂ, clip(ρ, 1-ε, 1+ε)Â)` with `ρ = exp(new_lp - old_lp)`.
pub fn token_surrogate(new_lp: f64, old_lp: f64, advantage: f64, eps_clip: f64) -> f64 {
    surrogate_with_slope(new_lp, old_lp, advantage, eps_clip).0
}

/// Surrogate value and its derivative in `new_lp`. The derivative is zero
/// when the clipped branch is strictly smaller.
fn surrogate_with_slope(new_lp: f64, old_lp: f64, advantage: f64, eps_clip: f64) -> (f64, f64) {
    let ratio = (new_lp - old_lp).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps_clip, 1.0 + eps_clip) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Per-token estimate `exp(ref - new) - (ref - new) - 1` of `KL[π ‖ π_ref]`.
pub fn kl_penalty(new_lp: f64, ref_lp: f64) -> f64 {
    let x = ref_lp - new_lp;
    (x.exp_m1() - x).max(0.0)
}

fn kl_slope(new_lp: f64, ref_lp: f64) -> f64 {
    -(ref_lp - new_lp).exp_m1()
}

/// One context with `G` sampled responses and everything the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub ctx: ContextFeatures,
    pub sequences: Vec<SampledSequence>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Per-token log-probabilities under the sampling policy.
    pub old_logprobs: Vec<Vec<f64>>,
    /// Per-token log-probabilities under the reference policy.
    pub ref_logprobs: Vec<Vec<f64>>,
}

impl GroupBatch {
    /// Builds a batch from sampled sequences, computing advantages and
    /// reference log-probabilities.
    pub fn new(
        ctx: ContextFeatures,
        sequences: Vec<SampledSequence>,
        rewards: Vec<f64>,
        ref_params: &PolicyParams,
        eps_std: f64,
    ) -> Result<Self, GrpoError> {
        let advantages = normalize_advantages(&rewards, eps_std)?;
        let old_logprobs = sequences
            .iter()
            .map(|s| s.per_token_logprob.clone())
            .collect();
        let ref_logprobs = sequences
            .iter()
            .map(|s| sequence_logprobs(ref_params, &ctx, &s.tokens))
            .collect::<Result<_, PolicyError>>()?;
        let batch = GroupBatch {
            ctx,
            sequences,
            rewards,
            advantages,
            old_logprobs,
            ref_logprobs,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let g = self.sequences.len();
        if [
            self.rewards.len(),
            self.advantages.len(),
            self.old_logprobs.len(),
            self.ref_logprobs.len(),
        ]
        .iter()
        .any(|&n| n != g)
        {
            return Err(GrpoError::Misaligned(
                "group arrays differ in length".into(),
            ));
        }
        for (i, s) in self.sequences.iter().enumerate() {
            if s.tokens.is_empty() {
                return Err(GrpoError::EmptySequence(i));
            }
            let k = crate::policy::effective_len(&s.tokens);
            if self.old_logprobs[i].len() != k || self.ref_logprobs[i].len() != k {
                return Err(GrpoError::Misaligned(format!(
                    "sequence {i} has {k} tokens but logprob arrays of length {} and {}",
                    self.old_logprobs[i].len(),
                    self.ref_logprobs[i].len()
                )));
            }
        }
        Ok(())
    }
}

/// Objective value, its exact gradient and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub grad: PolicyParams,
    /// `(1/G) Σ_i (1/|y_i|) Σ_k k3`.
    pub mean_kl: f64,
    /// Fraction of tokens on the clipped branch.
    pub clip_fraction: f64,
}

/// `(1/G) Σ_i (1/|y_i|) Σ_k [surrogate - β·k3]` at `params`, where `|y_i|`
/// counts the terminating `<eos>`.
pub fn grpo_objective(
    batch: &GroupBatch,
    params: &PolicyParams,
    config: &GrpoConfig,
) -> Result<Objective, GrpoError> {
    batch.validate()?;
    let g = batch.sequences.len() as f64;
    let mut grad = PolicyParams::zeros(params.shape());
    let (mut value, mut mean_kl) = (0.0, 0.0);
    let (mut clipped, mut total) = (0usize, 0usize);
    for (i, seq) in batch.sequences.iter().enumerate() {
        let new = sequence_logprobs(params, &batch.ctx, &seq.tokens)?;
        let n = new.len() as f64;
        let mut weights = Vec::with_capacity(new.len());
        let (mut s_sum, mut kl_sum) = (0.0, 0.0);
        for (k, &lp) in new.iter().enumerate() {
            let (s, ds) = surrogate_with_slope(
                lp,
                batch.old_logprobs[i][k],
                batch.advantages[i],
                config.eps_clip,
            );
            let r = batch.ref_logprobs[i][k];
            s_sum += s;
            kl_sum += kl_penalty(lp, r);
            if ds == 0.0 && batch.advantages[i] != 0.0 {
                clipped += 1;
            }
            total += 1;
            weights.push((ds - config.beta * kl_slope(lp, r)) / (g * n));
        }
        value += (s_sum - config.beta * kl_sum) / n;
        mean_kl += kl_sum / n;
        accumulate_weighted_grad(params, &batch.ctx, &seq.tokens, &weights, &mut grad)?;
    }
    Ok(Objective {
        value: value / g,
        grad,
        mean_kl: mean_kl / g,
        clip_fraction: clipped as f64 / total.max(1) as f64,
    })
}
