//! A small context-conditioned recurrent softmax policy over tokens.
//!
//! The hidden state follows `h_k = tanh(W_h h_{k-1} + W_x E[y_{k-1}] + W_c x + b_h)`
//! with `h_0 = 0` and `y_0 = <bos>`, and the next-token distribution is
//! `softmax(W_o h_k + b_o)`. Everything is `f64` and every gradient is exact.

mod checkpoint;
mod features;
mod net;
mod params;
mod vocab;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError,
    CHECKPOINT_VERSION,
};
pub use features::{ContextFeatures, FeatureError, Featurizer, CALIBRATION_SAMPLES, PER_CHANNEL};
pub use net::{
    accumulate_weighted_grad, effective_len, grad_sequence_logprob, greedy_decode, log_softmax,
    sample_group, sample_token, sequence_logprobs, step_logits, PolicyError, SampledSequence,
};
pub use params::{Layout, PolicyParams, PolicyShape};
pub use vocab::{VocabError, Vocabulary, BOS, BOS_TOKEN, EOS, EOS_TOKEN, FIRST_TAG};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::tasks::TaskRegistry;

/// Layer sizes and initialization scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub embed: usize,
    pub hidden: usize,
    /// Weight standard deviation times `sqrt(fan_in)` at initialization.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            embed: 32,
            hidden: 32,
            init_scale: 0.5,
        }
    }
}

/// Vocabulary, featurizer and parameters for one task registry.
#[derive(Debug, Clone)]
pub struct Policy {
    pub vocab: Vocabulary,
    pub featurizer: Featurizer,
    pub params: PolicyParams,
}

impl Policy {
    pub fn shape_for(registry: &TaskRegistry, config: &PolicyConfig) -> PolicyShape {
        PolicyShape::new(
            Vocabulary::for_registry(registry).len(),
            Featurizer::new(registry).dim(),
            config.embed,
            config.hidden,
        )
    }

    pub fn init(registry: &TaskRegistry, config: &PolicyConfig, rng: &mut dyn RngCore) -> Self {
        let vocab = Vocabulary::for_registry(registry);
        let featurizer = Featurizer::calibrated(registry);
        let shape = PolicyShape::new(vocab.len(), featurizer.dim(), config.embed, config.hidden);
        Policy {
            params: PolicyParams::random(shape, config.init_scale, rng),
            vocab,
            featurizer,
        }
    }

    pub fn with_params(&self, params: PolicyParams) -> Self {
        Policy {
            vocab: self.vocab.clone(),
            featurizer: self.featurizer.clone(),
            params,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(
        v: usize,
        f: usize,
        d: usize,
        h: usize,
        seed: u64,
    ) -> (PolicyParams, ContextFeatures, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PolicyParams::random(PolicyShape::new(v, f, d, h), 1.0, &mut rng);
        let ctx = ContextFeatures((0..f).map(|_| rng.random_range(-1.0..1.0)).collect());
        (params, ctx, rng)
    }

    fn total_logprob(p: &PolicyParams, ctx: &ContextFeatures, toks: &[usize]) -> f64 {
        sequence_logprobs(p, ctx, toks).unwrap().iter().sum()
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let p = PolicyParams::zeros(PolicyShape::new(10, 3, 4, 5));
        let ctx = ContextFeatures(vec![0.3, -1.0, 2.0]);
        let (logits, state) = step_logits(&p, &ctx, &[0.0; 5], BOS).unwrap();
        assert!(logits.iter().all(|&x| x == 0.0));
        assert!(state.iter().all(|&x| x == 0.0));
        let lps = sequence_logprobs(&p, &ctx, &[3, 4, 5]).unwrap();
        for lp in lps {
            assert!((lp + (10f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn step_is_normalized_and_deterministic() {
        let (p, ctx, _) = setup(12, 4, 5, 6, 1);
        let state = vec![0.1; 6];
        let (a, _) = step_logits(&p, &ctx, &state, 9).unwrap();
        let (b, _) = step_logits(&p, &ctx, &state, 9).unwrap();
        assert_eq!(a, b);
        let total: f64 = log_softmax(&a).iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let (p, ctx, _) = setup(9, 4, 2, 3, 0);
        assert!(matches!(
            step_logits(&p, &ContextFeatures(vec![0.0]), &[0.0; 3], 0),
            Err(PolicyError::ShapeMismatch {
                what: "context",
                ..
            })
        ));
        assert!(matches!(
            sequence_logprobs(&p, &ctx, &[9]),
            Err(PolicyError::TokenOutOfRange { id: 9, vocab: 9 })
        ));
    }

    #[test]
    fn sampled_logprobs_match_teacher_forcing() {
        let (p, ctx, mut rng) = setup(11, 3, 4, 5, 2);
        let vocab = Vocabulary::synthetic(11);
        let group = sample_group(&p, &vocab, &ctx, 5, 8, 0.7, &mut rng).unwrap();
        assert_eq!(group.len(), 5);
        for s in &group {
            let re = sequence_logprobs(&p, &ctx, &s.tokens).unwrap();
            assert_eq!(re.len(), s.per_token_logprob.len());
            for (a, b) in re.iter().zip(&s.per_token_logprob) {
                assert!((a - b).abs() < 1e-12);
                assert!(*b <= 0.0);
            }
            assert_eq!(s.text, vocab.detokenize(&s.tokens));
            assert!(s.ended() || s.len() == 8);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let (p, ctx, _) = setup(11, 3, 4, 5, 3);
        let vocab = Vocabulary::synthetic(11);
        let run = |seed| {
            sample_group(
                &p,
                &vocab,
                &ctx,
                4,
                6,
                1.0,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn appending_eos_keeps_prefix_logprobs() {
        let (p, ctx, _) = setup(10, 3, 4, 4, 4);
        let a = sequence_logprobs(&p, &ctx, &[3, 4, 5]).unwrap();
        let b = sequence_logprobs(&p, &ctx, &[3, 4, 5, EOS]).unwrap();
        assert_eq!(&b[..3], &a[..]);
        assert_eq!(b.len(), 4);
        let c = sequence_logprobs(&p, &ctx, &[3, EOS, 5, 6]).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn tokens_after_eos_do_not_contribute() {
        let (p, ctx, _) = setup(10, 3, 4, 4, 5);
        let a = grad_sequence_logprob(&p, &ctx, &[3, EOS]).unwrap();
        let b = grad_sequence_logprob(&p, &ctx, &[3, EOS, 7, 8]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_token_gradient_at_zero_is_onehot_minus_uniform() {
        let shape = PolicyShape::new(8, 2, 3, 3);
        let p = PolicyParams::zeros(shape);
        let ctx = ContextFeatures(vec![1.0, -1.0]);
        let g = grad_sequence_logprob(&p, &ctx, &[5]).unwrap();
        let b_o = &g.as_slice()[shape.layout().b_o];
        for (j, x) in b_o.iter().enumerate() {
            let expected = if j == 5 { 1.0 - 1.0 / 8.0 } else { -1.0 / 8.0 };
            assert!((x - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let v = rng.random_range(9..=16);
            let f = rng.random_range(1..=6);
            let d = rng.random_range(1..=6);
            let h = rng.random_range(1..=6);
            let (p, ctx, mut rng) = setup(v, f, d, h, 200 + seed);
            let len = rng.random_range(1..=8);
            let toks: Vec<usize> = (0..len).map(|_| rng.random_range(2..v)).collect();
            let g = grad_sequence_logprob(&p, &ctx, &toks).unwrap();
            let step = 1e-5;
            for i in 0..p.len() {
                let mut hi = p.clone();
                hi.as_mut_slice()[i] += step;
                let mut lo = p.clone();
                lo.as_mut_slice()[i] -= step;
                let fd = (total_logprob(&hi, &ctx, &toks) - total_logprob(&lo, &ctx, &toks))
                    / (2.0 * step);
                let an = g.as_slice()[i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "seed {seed} param {i}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let probs: Vec<f64> = log_softmax(&logits).iter().map(|x| x.exp()).collect();
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sample_token(&logits, 1.0, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (*c as f64 / n as f64 - p).abs() < 3.0 * se + 1e-12,
                "{c} vs {p}"
            );
        }
    }

    #[test]
    fn greedy_takes_argmax() {
        let shape = PolicyShape::new(9, 1, 2, 2);
        let mut p = PolicyParams::zeros(shape);
        p.as_mut_slice()[shape.layout().b_o.start + EOS] = 1.0;
        let s = greedy_decode(
            &p,
            &Vocabulary::synthetic(9),
            &ContextFeatures(vec![0.0]),
            5,
        )
        .unwrap();
        assert_eq!(s.tokens, vec![EOS]);
        assert_eq!(s.text, "");
    }

    #[test]
    fn policy_for_registry() {
        let reg = TaskRegistry::default();
        let pol = Policy::init(
            &reg,
            &PolicyConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(
            pol.params.shape(),
            Policy::shape_for(&reg, &PolicyConfig::default())
        );
        assert_eq!(pol.params.shape().vocab, pol.vocab.len());
    }

    proptest! {
        #[test]
        fn every_step_is_normalized(seed in 0u64..500, toks in proptest::collection::vec(0usize..10, 1..6)) {
            let (p, ctx, _) = setup(10, 3, 3, 4, seed);
            let mut state = vec![0.0; 4];
            let mut prev = BOS;
            for t in toks {
                let (logits, next) = step_logits(&p, &ctx, &state, prev).unwrap();
                let total: f64 = log_softmax(&logits).iter().map(|x| x.exp()).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                state = next;
                prev = t;
            }
        }
    }
}
