use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grammar::OutputMode;
use crate::grpo::{GrpoConfig, GrpoError, StepMetrics, TrainState, Trainer};
use crate::judge::{Judge, RemoteJudge, RubricJudge, RubricSpec};
use crate::policy::Policy;
use crate::reward::RewardWeights;
use crate::sft::{
    format_primer, generate_demonstrations, prepare_examples, sft_train, Demonstration, SftError,
};
use crate::tasks::{generate_balanced, SpecError, TaskInstance, TaskRegistry};

use super::config::{ExperimentConfig, InitFrom, JudgeSelection};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("task {0} has no noise setting for the requested Bayes rate")]
    BayesRate(String),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Judge(#[from] crate::judge::JudgeError),
}

/// Random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Primer = 2,
    Demos = 3,
    Train = 4,
    Eval = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// A validated config with its task registry resolved.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub registry: TaskRegistry,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, PipelineError> {
        let base = TaskRegistry::default().subset(&config.tasks)?;
        let tasks = match config.data.bayes_rate {
            None => base.tasks,
            Some(rate) => base
                .tasks
                .iter()
                .map(|t| {
                    t.with_bayes_rate(rate)
                        .ok_or_else(|| PipelineError::BayesRate(t.name.clone()))
                })
                .collect::<Result<_, _>>()?,
        };
        Ok(Experiment {
            registry: TaskRegistry::new(tasks)?,
            config,
        })
    }

    pub fn mode(&self) -> OutputMode {
        self.config.mode()
    }

    /// Rubric over every class of every task.
    pub fn rubric(&self) -> RubricSpec {
        let classes: BTreeMap<_, _> = self
            .registry
            .tasks
            .iter()
            .flat_map(|t| t.rubric.clone())
            .collect();
        RubricSpec::new(classes)
    }

    pub fn judge(&self) -> Result<Box<dyn Judge>, PipelineError> {
        Ok(match &self.config.judge {
            JudgeSelection::Rubric => Box::new(RubricJudge::new(self.rubric())),
            JudgeSelection::Remote(cfg) => Box::new(RemoteJudge::http(cfg.clone())?),
        })
    }

    /// `n` instances split evenly across tasks, each task class-balanced.
    fn instances(&self, n: usize, seed: u64, stream: Stream) -> Vec<TaskInstance> {
        let mut rng = stream_rng(seed, stream);
        let k = self.registry.tasks.len();
        self.registry
            .tasks
            .iter()
            .enumerate()
            .flat_map(|(i, spec)| {
                let share = n / k + usize::from(i < n % k);
                generate_balanced(spec, share, &mut rng)
            })
            .collect()
    }

    pub fn train_instances(&self, seed: u64) -> Vec<TaskInstance> {
        self.instances(self.config.data.train_size, seed, Stream::Train)
    }

    pub fn eval_instances(&self, seed: u64, n: usize) -> Vec<TaskInstance> {
        self.instances(n, seed, Stream::Eval)
    }

    /// Random initialization followed by `base.primer_epochs` passes over
    /// label-agnostic formatted targets.
    pub fn base_policy(&self, seed: u64, mode: OutputMode) -> Result<Policy, PipelineError> {
        let mut policy = Policy::init(
            &self.registry,
            &self.config.policy,
            &mut stream_rng(seed, Stream::Init),
        );
        let base = self.config.base;
        if base.primer_epochs == 0 {
            return Ok(policy);
        }
        let mut rng = stream_rng(seed, Stream::Primer);
        let k = self.registry.tasks.len();
        let mut primer = Vec::new();
        for (i, spec) in self.registry.tasks.iter().enumerate() {
            let share = base.primer_size / k + usize::from(i < base.primer_size % k);
            primer.extend(format_primer(
                spec,
                share,
                mode,
                &self.config.sft.teacher,
                &mut rng,
            )?);
        }
        let examples = prepare_examples(&policy, &primer, mode)?;
        let out = sft_train(
            &policy.params,
            &examples,
            &self.config.sft.trainer(seed, base.primer_epochs),
        )?;
        policy.params = out.params;
        Ok(policy)
    }

    pub fn demonstrations(
        &self,
        seed: u64,
        mode: OutputMode,
    ) -> Result<Vec<Demonstration>, PipelineError> {
        let mut rng = stream_rng(seed, Stream::Demos);
        let n = self.config.sft.demos;
        let k = self.registry.tasks.len();
        let mut demos = Vec::with_capacity(n);
        for (i, spec) in self.registry.tasks.iter().enumerate() {
            let share = n / k + usize::from(i < n % k);
            demos.extend(generate_demonstrations(
                spec,
                share,
                mode,
                &self.config.sft.teacher,
                &mut rng,
            )?);
        }
        Ok(demos)
    }

    /// Supervised warm-up from `base`; returns the policy and its loss curve.
    pub fn sft_policy(
        &self,
        base: &Policy,
        seed: u64,
        mode: OutputMode,
    ) -> Result<(Policy, Vec<f64>), PipelineError> {
        let demos = self.demonstrations(seed, mode)?;
        let examples = prepare_examples(base, &demos, mode)?;
        let out = sft_train(
            &base.params,
            &examples,
            &self.config.sft.trainer(seed, self.config.sft.epochs),
        )?;
        Ok((base.with_params(out.params), out.losses))
    }

    pub fn initial_policy(
        &self,
        seed: u64,
        init: InitFrom,
        mode: OutputMode,
    ) -> Result<Policy, PipelineError> {
        let base = self.base_policy(seed, mode)?;
        Ok(match init {
            InitFrom::Base => base,
            InitFrom::Sft => self.sft_policy(&base, seed, mode)?.0,
        })
    }

    pub fn grpo_config(&self, seed: u64) -> GrpoConfig {
        GrpoConfig {
            seed,
            ..self.config.grpo.clone()
        }
    }

    /// Runs GRPO from `state` on this seed's training pool.
    #[allow(clippy::too_many_arguments)]
    pub fn run_grpo(
        &self,
        policy: &Policy,
        state: &mut TrainState,
        weights: RewardWeights,
        mode: OutputMode,
        judge: &dyn Judge,
        config: GrpoConfig,
        on_step: impl FnMut(&StepMetrics, &TrainState) -> ControlFlow<()>,
    ) -> Result<Vec<StepMetrics>, PipelineError> {
        let train = self.train_instances(config.seed);
        let trainer = Trainer::new(policy, &train, weights, mode, judge, config)?;
        Ok(trainer.run(state, on_step)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.data.train_size = 10;
        c.base.primer_size = 20;
        c.sft.demos = 20;
        c
    }

    #[test]
    fn instances_are_split_across_tasks() {
        let mut c = small();
        c.tasks = vec!["rcw".into(), "emg".into()];
        let e = Experiment::new(c).unwrap();
        let xs = e.eval_instances(1, 7);
        assert_eq!(xs.iter().filter(|i| i.task == "rcw").count(), 4);
        assert_eq!(xs.iter().filter(|i| i.task == "emg").count(), 3);
        assert_eq!(e.eval_instances(1, 7), xs);
        assert_ne!(e.train_instances(1)[0].series, xs[0].series);
    }

    #[test]
    fn bayes_rate_is_applied_or_refused() {
        let mut c = small();
        c.data.bayes_rate = Some(0.9);
        let e = Experiment::new(c.clone()).unwrap();
        assert!((e.registry.tasks[0].bayes_rate().unwrap() - 0.9).abs() < 1e-9);
        c.tasks = vec!["emg".into()];
        assert!(matches!(
            Experiment::new(c),
            Err(PipelineError::BayesRate(_))
        ));
    }

    #[test]
    fn base_and_sft_policies_are_deterministic() {
        let e = Experiment::new(small()).unwrap();
        let a = e
            .initial_policy(3, InitFrom::Sft, OutputMode::CLASSIFY)
            .unwrap();
        let b = e
            .initial_policy(3, InitFrom::Sft, OutputMode::CLASSIFY)
            .unwrap();
        assert_eq!(a.params, b.params);
        let base = e
            .initial_policy(3, InitFrom::Base, OutputMode::CLASSIFY)
            .unwrap();
        assert_ne!(a.params, base.params);
    }

    #[test]
    fn rubric_covers_every_class() {
        let mut c = small();
        c.tasks = vec!["rcw".into(), "emg".into()];
        let e = Experiment::new(c).unwrap();
        let r = e.rubric();
        for t in &e.registry.tasks {
            for class in &t.classes {
                assert!(r.classes.contains_key(class));
            }
        }
    }
}
