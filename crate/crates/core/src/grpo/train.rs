use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grammar::OutputMode;
use crate::judge::Judge;
use crate::policy::{
    decode_checkpoint, encode_checkpoint, sample_group, CheckpointError, ContextFeatures, Policy,
    PolicyParams, Vocabulary,
};
use crate::reward::{composite_reward, RewardWeights};
use crate::tasks::TaskInstance;

use super::objective::{grpo_objective, GroupBatch};
use super::optim::{OptimizerConfig, OptimizerState};
use super::{GrpoConfig, GrpoError};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub fmt_rate: f64,
    pub accuracy: f64,
    pub mean_kl: f64,
    pub objective: f64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Number of completed steps.
    pub step: usize,
    pub params: PolicyParams,
    pub ref_params: PolicyParams,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn new(params: PolicyParams, optimizer: OptimizerConfig) -> Self {
        TrainState {
            step: 0,
            ref_params: params.clone(),
            params,
            optimizer: OptimizerState::new(optimizer),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<StepMetrics>,
}

const STATE_MAGIC: &[u8; 8] = b"TSRSTATE";

fn push_block(out: &mut Vec<u8>, block: &[u8]) {
    out.extend_from_slice(&(block.len() as u64).to_le_bytes());
    out.extend_from_slice(block);
}

fn take_u64(r: &mut &[u8]) -> Result<u64, CheckpointError> {
    if r.len() < 8 {
        return Err(CheckpointError::Length);
    }
    let (head, tail) = r.split_at(8);
    *r = tail;
    Ok(u64::from_le_bytes(head.try_into().expect("8 bytes")))
}

fn take_block<'a>(r: &mut &'a [u8]) -> Result<&'a [u8], CheckpointError> {
    let n = take_u64(r)? as usize;
    if r.len() < n {
        return Err(CheckpointError::Length);
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

/// Binary train state: magic, step, optimizer config (JSON), optimizer step
/// count, then length-prefixed policy checkpoints for the parameters, the
/// reference and (for Adam) both moment vectors.
pub fn encode_train_state(state: &TrainState, vocab: &Vocabulary) -> Vec<u8> {
    let mut out = STATE_MAGIC.to_vec();
    out.extend_from_slice(&(state.step as u64).to_le_bytes());
    push_block(
        &mut out,
        &serde_json::to_vec(&state.optimizer.config).expect("optimizer config serializes"),
    );
    out.extend_from_slice(&state.optimizer.t.to_le_bytes());
    push_block(&mut out, &encode_checkpoint(&state.params, vocab));
    push_block(&mut out, &encode_checkpoint(&state.ref_params, vocab));
    out.push(u8::from(state.optimizer.moments.is_some()));
    if let Some((m, v)) = &state.optimizer.moments {
        push_block(&mut out, &encode_checkpoint(m, vocab));
        push_block(&mut out, &encode_checkpoint(v, vocab));
    }
    out
}

pub fn decode_train_state(bytes: &[u8], vocab: &Vocabulary) -> Result<TrainState, CheckpointError> {
    let mut r = bytes;
    if r.len() < 8 || &r[..8] != STATE_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r = &r[8..];
    let step = take_u64(&mut r)? as usize;
    let config: OptimizerConfig =
        serde_json::from_slice(take_block(&mut r)?).map_err(|_| CheckpointError::Length)?;
    let t = take_u64(&mut r)?;
    let params = decode_checkpoint(take_block(&mut r)?, vocab)?;
    let ref_params = decode_checkpoint(take_block(&mut r)?, vocab)?;
    let (&flag, rest) = r.split_first().ok_or(CheckpointError::Length)?;
    r = rest;
    let moments = if flag == 1 {
        let m = decode_checkpoint(take_block(&mut r)?, vocab)?;
        let v = decode_checkpoint(take_block(&mut r)?, vocab)?;
        Some((m, v))
    } else {
        None
    };
    if !r.is_empty() {
        return Err(CheckpointError::Length);
    }
    Ok(TrainState {
        step,
        params,
        ref_params,
        optimizer: OptimizerState { config, t, moments },
    })
}

/// A configured GRPO run over a fixed pool of training instances.
pub struct Trainer<'a> {
    policy: &'a Policy,
    instances: &'a [TaskInstance],
    contexts: Vec<ContextFeatures>,
    weights: RewardWeights,
    mode: OutputMode,
    judge: &'a dyn Judge,
    config: GrpoConfig,
}

impl<'a> Trainer<'a> {
    /// `policy` supplies the vocabulary and featurizer; its parameters are
    /// not used.
    pub fn new(
        policy: &'a Policy,
        instances: &'a [TaskInstance],
        weights: RewardWeights,
        mode: OutputMode,
        judge: &'a dyn Judge,
        config: GrpoConfig,
    ) -> Result<Self, GrpoError> {
        config.validate()?;
        weights
            .validate()
            .map_err(|e| GrpoError::Config(e.to_string()))?;
        if instances.is_empty() {
            return Err(GrpoError::NoInstances);
        }
        let contexts = instances
            .iter()
            .map(|i| policy.featurizer.featurize(i))
            .collect::<Result<_, _>>()?;
        Ok(Trainer {
            policy,
            instances,
            contexts,
            weights,
            mode,
            judge,
            config,
        })
    }

    pub fn config(&self) -> &GrpoConfig {
        &self.config
    }

    pub fn total_steps(&self) -> usize {
        self.config.total_steps(self.instances.len())
    }

    /// Instance indices used at `step`.
    fn batch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.instances.len();
        let per_epoch = self.config.steps_per_epoch(n);
        let (epoch, pos) = (step / per_epoch, step % per_epoch);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9E37_79B9_7F4A_7C15);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let b = self.config.batch_size;
        order[pos * b..((pos + 1) * b).min(n)].to_vec()
    }

    fn refresh_reference(&self, state: &mut TrainState) {
        let s = state.step;
        let refresh = match self.config.steps_per_ref_update {
            0 => s % self.config.steps_per_epoch(self.instances.len()) == 0,
            k => s % k == 0,
        };
        if refresh {
            state.ref_params = state.params.clone();
        }
    }

    /// Runs one step: sample, score, normalize, ascend.
    pub fn step(&self, state: &mut TrainState) -> Result<StepMetrics, GrpoError> {
        self.refresh_reference(state);
        let step = state.step;
        let cfg = &self.config;
        let old = state.params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step as u64);

        let indices = self.batch_indices(step);
        let mut batches = Vec::with_capacity(indices.len());
        let (mut reward_sum, mut fmt_sum, mut hard_sum, mut count) = (0.0, 0u64, 0u64, 0u64);
        for &i in &indices {
            let ctx = self.contexts[i].clone();
            let seqs = sample_group(
                &old,
                &self.policy.vocab,
                &ctx,
                cfg.group_size,
                cfg.l_max,
                cfg.temperature,
                &mut rng,
            )?;
            let mut rewards = Vec::with_capacity(seqs.len());
            for s in &seqs {
                let r = composite_reward(
                    &s.text,
                    &self.instances[i],
                    &self.weights,
                    self.mode,
                    self.judge,
                )?;
                reward_sum += r.total;
                fmt_sum += u64::from(r.fmt);
                hard_sum += u64::from(r.hard);
                count += 1;
                rewards.push(r.total);
            }
            batches.push(GroupBatch::new(
                ctx,
                seqs,
                rewards,
                &state.ref_params,
                cfg.eps_std,
            )?);
        }

        let scale = 1.0 / batches.len() as f64;
        let (mut objective, mut mean_kl) = (0.0, 0.0);
        for update in 0..cfg.updates_per_batch {
            let mut grad = PolicyParams::zeros(state.params.shape());
            let (mut value, mut kl) = (0.0, 0.0);
            for b in &batches {
                let obj = grpo_objective(b, &state.params, cfg)?;
                grad.axpy(scale, &obj.grad);
                value += scale * obj.value;
                kl += scale * obj.mean_kl;
            }
            if !grad.is_finite() {
                return Err(GrpoError::NonFinite { step });
            }
            if update == 0 {
                objective = value;
                mean_kl = kl;
            }
            state
                .optimizer
                .apply(&mut state.params, &grad, cfg.learning_rate, true);
        }
        state.step += 1;
        let n = count as f64;
        Ok(StepMetrics {
            step,
            mean_reward: reward_sum / n,
            fmt_rate: fmt_sum as f64 / n,
            accuracy: hard_sum as f64 / n,
            mean_kl,
            objective,
        })
    }

    /// Steps until `total_steps` or until `on_step` breaks.
    pub fn run(
        &self,
        state: &mut TrainState,
        mut on_step: impl FnMut(&StepMetrics, &TrainState) -> ControlFlow<()>,
    ) -> Result<Vec<StepMetrics>, GrpoError> {
        let mut log = Vec::new();
        while state.step < self.total_steps() {
            let m = self.step(state)?;
            let flow = on_step(&m, state);
            log.push(m);
            if flow.is_break() {
                break;
            }
        }
        Ok(log)
    }
}

/// Trains from `policy.params` for the configured number of steps.
pub fn train(
    policy: &Policy,
    instances: &[TaskInstance],
    weights: &RewardWeights,
    mode: OutputMode,
    judge: &dyn Judge,
    config: &GrpoConfig,
) -> Result<TrainOutcome, GrpoError> {
    let trainer = Trainer::new(policy, instances, *weights, mode, judge, config.clone())?;
    let mut state = TrainState::new(policy.params.clone(), config.optimizer);
    let metrics = trainer.run(&mut state, |_, _| ControlFlow::Continue(()))?;
    Ok(TrainOutcome {
        params: state.params,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{RubricJudge, RubricSpec};
    use crate::policy::PolicyConfig;
    use crate::tasks::{generate_balanced, TaskRegistry};

    fn setup() -> (Policy, Vec<TaskInstance>, RubricJudge) {
        let reg = TaskRegistry::default()
            .subset(&["rcw".to_string()])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = Policy::init(
            &reg,
            &PolicyConfig {
                embed: 8,
                hidden: 8,
                init_scale: 0.5,
            },
            &mut rng,
        );
        let data = generate_balanced(&reg.tasks[0], 12, &mut rng);
        let judge = RubricJudge::new(RubricSpec::new(reg.tasks[0].rubric.clone()));
        (policy, data, judge)
    }

    fn small_config() -> GrpoConfig {
        GrpoConfig {
            l_max: 12,
            max_steps: Some(4),
            batch_size: 3,
            ..GrpoConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let (policy, data, judge) = setup();
        let cfg = GrpoConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let out = train(
            &policy,
            &data,
            &RewardWeights::default(),
            OutputMode::CLASSIFY,
            &judge,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.params, policy.params);
        assert_eq!(out.metrics.len(), 4);
        assert_eq!(out.metrics[3].step, 3);
    }

    #[test]
    fn runs_are_reproducible_and_resumable() {
        let (policy, data, judge) = setup();
        let cfg = small_config();
        let full = train(
            &policy,
            &data,
            &RewardWeights::default(),
            OutputMode::CLASSIFY,
            &judge,
            &cfg,
        )
        .unwrap();
        let again = train(
            &policy,
            &data,
            &RewardWeights::default(),
            OutputMode::CLASSIFY,
            &judge,
            &cfg,
        )
        .unwrap();
        assert_eq!(full, again);

        let trainer = Trainer::new(
            &policy,
            &data,
            RewardWeights::default(),
            OutputMode::CLASSIFY,
            &judge,
            cfg.clone(),
        )
        .unwrap();
        let mut state = TrainState::new(policy.params.clone(), cfg.optimizer);
        let first = trainer
            .run(&mut state, |m, _| {
                if m.step == 1 {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })
            .unwrap();
        let bytes = encode_train_state(&state, &policy.vocab);
        let mut resumed = decode_train_state(&bytes, &policy.vocab).unwrap();
        assert_eq!(resumed, state);
        let rest = trainer
            .run(&mut resumed, |_, _| ControlFlow::Continue(()))
            .unwrap();
        assert_eq!([first, rest].concat(), full.metrics);
        assert_eq!(resumed.params, full.params);
    }

    #[test]
    fn adam_state_round_trips() {
        let (policy, data, judge) = setup();
        let cfg = GrpoConfig {
            optimizer: OptimizerConfig::adam(),
            learning_rate: 0.01,
            ..small_config()
        };
        let trainer = Trainer::new(
            &policy,
            &data,
            RewardWeights::default(),
            OutputMode::CLASSIFY,
            &judge,
            cfg.clone(),
        )
        .unwrap();
        let mut state = TrainState::new(policy.params.clone(), cfg.optimizer);
        trainer.step(&mut state).unwrap();
        let back =
            decode_train_state(&encode_train_state(&state, &policy.vocab), &policy.vocab).unwrap();
        assert_eq!(back, state);
        assert!(back.optimizer.moments.is_some());
    }

    #[test]
    fn metrics_are_in_range() {
        let (policy, data, judge) = setup();
        let out = train(
            &policy,
            &data,
            &RewardWeights::default(),
            OutputMode::CLASSIFY,
            &judge,
            &small_config(),
        )
        .unwrap();
        for m in &out.metrics {
            assert!((0.0..=1.0).contains(&m.fmt_rate));
            assert!(m.accuracy <= m.fmt_rate);
            assert!(m.mean_kl >= 0.0);
        }
    }
}
