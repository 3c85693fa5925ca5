use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::grammar::{render, OutputMode};
use crate::grpo::{decode_train_state, encode_train_state, GrpoConfig, StepMetrics, TrainState};
use crate::judge::Judge;
use crate::policy::{decode_checkpoint, encode_checkpoint, CheckpointError, Policy};
use crate::reward::RewardWeights;
use crate::sft::{export_demonstrations, teacher_output, SftError};
use crate::tasks::{render_plot, PlotError, TimeSeries};

use super::config::{InitFrom, RewardRow};
use super::eval::{evaluate, evaluate_outputs, EvalError, EvalReport};
use super::manifest::{hash_file, sha256_hex, DataKind, Invocation, Manifest, CODE_VERSION};
use super::pipeline::{stream_rng, Experiment, PipelineError, Stream};

pub const SFT_CHECKPOINT: &str = "sft.ckpt";
pub const SFT_LOSS: &str = "sft_loss.jsonl";
pub const TRAIN_CHECKPOINT: &str = "train.ckpt";
pub const TRAIN_STATE: &str = "train_state.bin";
pub const METRICS: &str = "metrics.jsonl";
/// Wallclock seconds per step.
pub const TIMINGS: &str = "timings.jsonl";
pub const TRAIN_REPORT: &str = "train_report.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const EVAL_TABLE: &str = "eval_report.txt";
pub const REWARD_TABLE: &str = "ablate_rewards.json";
pub const GROUP_TABLE: &str = "ablate_group_size.json";
pub const GROUP_CURVE: &str = "group_size_curve.png";

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("no training state to resume in {0}")]
    NothingToResume(PathBuf),
    #[error("input {0} changed since the manifest was written")]
    InputChanged(PathBuf),
    #[error("resumed runs are not replayable; replay the manifest of the interrupted run")]
    ReplayResume,
    #[error("undeclared environment variables set: {0}")]
    Environment(String),
}

impl From<SftError> for CommandError {
    fn from(e: SftError) -> Self {
        CommandError::Pipeline(PipelineError::Sft(e))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Human-readable summary for the terminal.
    pub summary: String,
}

/// Output directory plus the hashes of everything written into it.
struct Outputs {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CommandError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CommandError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CommandError> {
        let json = serde_json::to_string_pretty(value).expect("report serializes");
        self.write(name, (json + "\n").as_bytes())
    }

    /// Hashes a file written incrementally.
    fn record(&mut self, name: &str) -> Result<(), CommandError> {
        let path = self.path(name);
        let hash = hash_file(&path).map_err(io_err(&path))?;
        self.artifacts.insert(name.to_string(), hash);
        Ok(())
    }

    fn finish(
        self,
        exp: &Experiment,
        invocation: Invocation,
        seeds: Vec<u64>,
        judge: &dyn Judge,
        summary: String,
    ) -> Result<Outcome, CommandError> {
        let mut inputs = BTreeMap::new();
        for p in invocation.inputs() {
            inputs.insert(p.to_path_buf(), hash_file(p).map_err(io_err(p))?);
        }
        let manifest = Manifest {
            invocation,
            seeds,
            config_hash: exp.config.hash(),
            code_version: CODE_VERSION.to_string(),
            judge_version: judge.version(),
            inputs,
            artifacts: self.artifacts,
            config: exp.config.clone(),
        };
        let manifest_path = manifest.write(&self.dir).map_err(io_err(&self.dir))?;
        Ok(Outcome {
            manifest,
            manifest_path,
            summary,
        })
    }
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, &r).expect("row serializes");
        out.push(b'\n');
    }
    out
}

/// Fails if any undeclared `TSREASON_*` variable is set.
pub fn check_environment() -> Result<(), CommandError> {
    let found = super::manifest::undeclared_environment();
    if found.is_empty() {
        Ok(())
    } else {
        Err(CommandError::Environment(found.join(", ")))
    }
}

fn load_params(exp: &Experiment, path: &Path, seed: u64) -> Result<Policy, CommandError> {
    let shell = Policy::init(
        &exp.registry,
        &exp.config.policy,
        &mut stream_rng(seed, Stream::Init),
    );
    let bytes = fs::read(path).map_err(io_err(path))?;
    let params = decode_checkpoint(&bytes, &shell.vocab)?;
    Ok(shell.with_params(params))
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

/// Supervised warm-up; writes the checkpoint and the per-minibatch loss.
pub fn cmd_sft(exp: &Experiment, seed: u64) -> Result<Outcome, CommandError> {
    let mode = exp.mode();
    let judge = exp.judge()?;
    let mut out = Outputs::new(&exp.config.output_dir)?;
    let base = exp.base_policy(seed, mode)?;
    let (policy, losses) = exp.sft_policy(&base, seed, mode)?;
    out.write(
        SFT_CHECKPOINT,
        &encode_checkpoint(&policy.params, &policy.vocab),
    )?;
    out.write(
        SFT_LOSS,
        &jsonl(
            losses
                .iter()
                .enumerate()
                .map(|(step, &loss)| LossRow { step, loss }),
        ),
    )?;
    let first = losses.first().copied().unwrap_or(f64::NAN);
    let last = losses.last().copied().unwrap_or(f64::NAN);
    let summary = format!(
        "sft: {} minibatches, loss {first:.4} -> {last:.4}\ncheckpoint {}\n",
        losses.len(),
        out.path(SFT_CHECKPOINT).display()
    );
    out.finish(
        exp,
        Invocation::Sft { seed },
        vec![seed],
        judge.as_ref(),
        summary,
    )
}

#[derive(Serialize)]
struct TimingRow {
    step: usize,
    wallclock_secs: f64,
}

/// Keeps the first `keep` lines of a line-delimited file, creating it if absent.
fn truncate_lines(path: &Path, keep: usize) -> Result<(), CommandError> {
    let kept: Vec<String> = match File::open(path) {
        Ok(f) => BufReader::new(f)
            .lines()
            .take(keep)
            .collect::<Result<_, _>>()
            .map_err(io_err(path))?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

fn append(path: &Path) -> Result<File, CommandError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

/// GRPO from the configured start, a given checkpoint, or the saved state.
pub fn cmd_train(
    exp: &Experiment,
    seed: u64,
    init_checkpoint: Option<&Path>,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<Outcome, CommandError> {
    let mode = exp.mode();
    let judge = exp.judge()?;
    let mut out = Outputs::new(&exp.config.output_dir)?;
    let policy = match init_checkpoint {
        Some(p) => load_params(exp, p, seed)?,
        None => exp.initial_policy(seed, exp.config.init, mode)?,
    };
    let grpo = exp.grpo_config(seed);
    let state_path = out.path(TRAIN_STATE);
    let (metrics_path, timings_path) = (out.path(METRICS), out.path(TIMINGS));
    let mut state = if resume {
        let bytes =
            fs::read(&state_path).map_err(|_| CommandError::NothingToResume(out.dir.clone()))?;
        decode_train_state(&bytes, &policy.vocab)?
    } else {
        TrainState::new(policy.params.clone(), grpo.optimizer)
    };
    truncate_lines(&metrics_path, state.step)?;
    truncate_lines(&timings_path, state.step)?;
    let mut metrics_file = append(&metrics_path)?;
    let mut timings_file = append(&timings_path)?;

    let start = Instant::now();
    let every = exp.config.checkpoint_every;
    let mut failure = None;
    let log = exp.run_grpo(
        &policy,
        &mut state,
        exp.config.weights,
        mode,
        judge.as_ref(),
        grpo.clone(),
        |m, st| {
            let timing = TimingRow {
                step: m.step,
                wallclock_secs: start.elapsed().as_secs_f64(),
            };
            let written = metrics_file
                .write_all(&jsonl([m]))
                .and_then(|_| timings_file.write_all(&jsonl([timing])))
                .map_err(io_err(&metrics_path))
                .and_then(|_| {
                    if st.step % every == 0 {
                        fs::write(&state_path, encode_train_state(st, &policy.vocab))
                            .map_err(io_err(&state_path))
                    } else {
                        Ok(())
                    }
                });
            if let Err(e) = written {
                failure = Some(e);
                return ControlFlow::Break(());
            }
            if stop_after.is_some_and(|s| st.step >= s) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    drop(metrics_file);
    drop(timings_file);
    out.write(TRAIN_STATE, &encode_train_state(&state, &policy.vocab))?;
    out.write(
        TRAIN_CHECKPOINT,
        &encode_checkpoint(&state.params, &policy.vocab),
    )?;
    out.record(METRICS)?;

    let total = grpo.total_steps(exp.config.data.train_size);
    let mut summary = format!("train: steps {}/{total}", state.step);
    if let Some(m) = log.last() {
        let _ = write!(
            summary,
            ", last reward {:.3} fmt {:.3} acc {:.3} kl {:.5}",
            m.mean_reward, m.fmt_rate, m.accuracy, m.mean_kl
        );
    }
    summary.push('\n');
    if state.step >= total {
        let trained = policy.with_params(state.params.clone());
        let report = evaluate(
            &trained,
            &exp.eval_instances(seed, exp.config.data.eval_size),
            mode,
            judge.as_ref(),
            grpo.l_max,
        )?;
        out.write_json(TRAIN_REPORT, &report)?;
        summary.push_str(&report.to_table());
    }
    let inv = Invocation::Train {
        seed,
        init_checkpoint: init_checkpoint.map(Path::to_path_buf),
        resume,
        stop_after,
    };
    out.finish(exp, inv, vec![seed], judge.as_ref(), summary)
}

/// Reads one JSON string per line.
pub fn read_outputs(path: &Path) -> Result<Vec<String>, CommandError> {
    let f = File::open(path).map_err(io_err(path))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(io_err(path))?;
            serde_json::from_str::<String>(&line).map_err(|e| CommandError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Greedy evaluation of a checkpoint (or the base policy), or scoring of
/// precomputed outputs, on the seed's held-out set.
pub fn cmd_eval(
    exp: &Experiment,
    seed: u64,
    checkpoint: Option<&Path>,
    n: Option<usize>,
    outputs: Option<&Path>,
) -> Result<(Outcome, EvalReport), CommandError> {
    let mode = exp.mode();
    let judge = exp.judge()?;
    let mut out = Outputs::new(&exp.config.output_dir)?;
    let instances = exp.eval_instances(seed, n.unwrap_or(exp.config.data.eval_size));
    let report = match (outputs, checkpoint) {
        (Some(path), _) => {
            evaluate_outputs(&read_outputs(path)?, &instances, mode, judge.as_ref())?
        }
        (None, Some(path)) => {
            let policy = load_params(exp, path, seed)?;
            evaluate(
                &policy,
                &instances,
                mode,
                judge.as_ref(),
                exp.config.grpo.l_max,
            )?
        }
        (None, None) => {
            let policy = exp.base_policy(seed, mode)?;
            evaluate(
                &policy,
                &instances,
                mode,
                judge.as_ref(),
                exp.config.grpo.l_max,
            )?
        }
    };
    out.write_json(EVAL_REPORT, &report)?;
    let table = report.to_table();
    out.write(EVAL_TABLE, table.as_bytes())?;
    let inv = Invocation::Eval {
        seed,
        checkpoint: checkpoint.map(Path::to_path_buf),
        n,
        outputs: outputs.map(Path::to_path_buf),
    };
    let outcome = out.finish(exp, inv, vec![seed], judge.as_ref(), table)?;
    Ok((outcome, report))
}

/// One trained run inside an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub steps: usize,
    pub accuracy: f64,
    pub format_rate: f64,
    pub soft_init: Option<f64>,
    pub soft_final: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAblationRow {
    pub row: RewardRow,
    pub runs: Vec<RunResult>,
    pub mean_accuracy: f64,
    pub mean_soft_init: Option<f64>,
    pub mean_soft_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardAblation {
    pub rows: Vec<RewardAblationRow>,
}

fn dash(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl RewardAblation {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>9} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}\n",
            "rewards", "extension", "fmt", "hard", "soft", "accuracy", "soft@init", "soft"
        );
        for r in &self.rows {
            let w = r.row.weights;
            let _ = writeln!(
                s,
                "{:<16} {:>9} {:>6} {:>6} {:>6} {:>9.4} {:>9} {:>9}",
                r.row.name,
                if r.row.extension { "on" } else { "off" },
                w.lambda_fmt,
                w.lambda_hard,
                w.lambda_soft,
                r.mean_accuracy,
                dash(r.mean_soft_init),
                dash(r.mean_soft_final)
            );
        }
        s
    }
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

/// Trains one policy and evaluates it; the metrics go to `metrics_name`.
#[allow(clippy::too_many_arguments)]
fn trained_run(
    exp: &Experiment,
    out: &mut Outputs,
    metrics_name: &str,
    seed: u64,
    init: InitFrom,
    mode: OutputMode,
    weights: RewardWeights,
    grpo: GrpoConfig,
    judge: &dyn Judge,
) -> Result<RunResult, CommandError> {
    let policy = exp.initial_policy(seed, init, mode)?;
    let eval_set = exp.eval_instances(seed, exp.config.data.eval_size);
    let soft_init = if mode.extension_enabled {
        evaluate(&policy, &eval_set, mode, judge, grpo.l_max)?.mean_soft
    } else {
        None
    };
    let mut state = TrainState::new(policy.params.clone(), grpo.optimizer);
    let log: Vec<StepMetrics> = exp.run_grpo(
        &policy,
        &mut state,
        weights,
        mode,
        judge,
        grpo.clone(),
        |_, _| ControlFlow::Continue(()),
    )?;
    out.write(metrics_name, &jsonl(&log))?;
    let report = evaluate(
        &policy.with_params(state.params),
        &eval_set,
        mode,
        judge,
        grpo.l_max,
    )?;
    Ok(RunResult {
        seed,
        steps: log.len(),
        accuracy: report.accuracy,
        format_rate: report.format_rate,
        soft_init,
        soft_final: report.mean_soft,
    })
}

/// Trains every reward row on every configured seed.
pub fn cmd_ablate_rewards(exp: &Experiment) -> Result<(Outcome, RewardAblation), CommandError> {
    let judge = exp.judge()?;
    let mut out = Outputs::new(&exp.config.output_dir)?;
    let seeds = exp.config.seeds.clone();
    let mut rows = Vec::new();
    for row in &exp.config.ablation.reward_rows {
        let mode = OutputMode {
            extension_enabled: row.extension,
        };
        let mut runs = Vec::new();
        for &seed in &seeds {
            let mut grpo = exp.grpo_config(seed);
            if let Some(o) = row.optimizer {
                grpo.optimizer = o;
            }
            if let Some(lr) = row.learning_rate {
                grpo.learning_rate = lr;
            }
            let name = format!("rewards_{}_seed{seed}.jsonl", slug(&row.name));
            runs.push(trained_run(
                exp,
                &mut out,
                &name,
                seed,
                row.init,
                mode,
                row.weights,
                grpo,
                judge.as_ref(),
            )?);
        }
        let soft = |f: fn(&RunResult) -> Option<f64>| -> Option<f64> {
            runs.iter().map(f).collect::<Option<Vec<f64>>>().map(mean)
        };
        rows.push(RewardAblationRow {
            row: row.clone(),
            mean_accuracy: mean(runs.iter().map(|r| r.accuracy)),
            mean_soft_init: soft(|r| r.soft_init),
            mean_soft_final: soft(|r| r.soft_final),
            runs,
        });
    }
    let table = RewardAblation { rows };
    out.write_json(REWARD_TABLE, &table)?;
    let text = table.to_table();
    out.write("ablate_rewards.txt", text.as_bytes())?;
    let outcome = out.finish(exp, Invocation::AblateRewards, seeds, judge.as_ref(), text)?;
    Ok((outcome, table))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSizeRow {
    pub group_size: usize,
    pub steps: usize,
    pub runs: Vec<RunResult>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSizeAblation {
    pub sample_budget: usize,
    pub rows: Vec<GroupSizeRow>,
}

impl GroupSizeAblation {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:>4} {:>8} {:>9}\n", "G", "steps", "accuracy");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>4} {:>8} {:>9.4}",
                r.group_size, r.steps, r.mean_accuracy
            );
        }
        s
    }
}

/// Steps giving `budget` sampled sequences at group size `g`.
pub fn matched_steps(budget: usize, g: usize, batch_size: usize) -> usize {
    (budget / (g * batch_size).max(1)).max(1)
}

/// Trains at each group size with the same number of sampled sequences.
pub fn cmd_ablate_group_size(
    exp: &Experiment,
    group_sizes: &[usize],
) -> Result<(Outcome, GroupSizeAblation), CommandError> {
    let judge = exp.judge()?;
    let mode = exp.mode();
    let mut out = Outputs::new(&exp.config.output_dir)?;
    let seeds = exp.config.seeds.clone();
    let budget = exp.config.ablation.sample_budget;
    let mut rows = Vec::new();
    for &g in group_sizes {
        let steps = matched_steps(budget, g, exp.config.grpo.batch_size);
        let mut runs = Vec::new();
        for &seed in &seeds {
            let grpo = GrpoConfig {
                group_size: g,
                max_steps: Some(steps),
                ..exp.grpo_config(seed)
            };
            let name = format!("group_size_g{g}_seed{seed}.jsonl");
            runs.push(trained_run(
                exp,
                &mut out,
                &name,
                seed,
                exp.config.init,
                mode,
                exp.config.weights,
                grpo,
                judge.as_ref(),
            )?);
        }
        rows.push(GroupSizeRow {
            group_size: g,
            steps,
            mean_accuracy: mean(runs.iter().map(|r| r.accuracy)),
            runs,
        });
    }
    let table = GroupSizeAblation {
        sample_budget: budget,
        rows,
    };
    out.write_json(GROUP_TABLE, &table)?;
    let text = table.to_table();
    out.write("ablate_group_size.txt", text.as_bytes())?;
    if table.rows.len() >= 2 {
        let acc: Vec<f64> = table.rows.iter().map(|r| r.mean_accuracy).collect();
        let curve = TimeSeries::from_columns(&[acc], vec!["accuracy".to_string()])
            .expect("one finite channel");
        out.write(
            GROUP_CURVE,
            &render_plot(&curve, exp.registry.tasks[0].plot_family)?,
        )?;
    }
    let inv = Invocation::AblateGroupSize {
        group_sizes: group_sizes.to_vec(),
    };
    let outcome = out.finish(exp, inv, seeds, judge.as_ref(), text)?;
    Ok((outcome, table))
}

/// Plots `n` held-out instances in their task's style.
pub fn cmd_render(exp: &Experiment, seed: u64, n: usize) -> Result<Outcome, CommandError> {
    let judge = exp.judge()?;
    let mut out = Outputs::new(&exp.config.output_dir)?;
    let mut summary = String::new();
    for inst in exp.eval_instances(seed, n) {
        let spec = exp.registry.get(&inst.task).map_err(PipelineError::from)?;
        let name = format!("render/{}.png", inst.id);
        out.write(&name, &render_plot(&inst.series, spec.plot_family)?)?;
        let _ = writeln!(summary, "{} ({})", out.path(&name).display(), inst.gold);
    }
    out.finish(
        exp,
        Invocation::Render { seed, n },
        vec![seed],
        judge.as_ref(),
        summary,
    )
}

/// Writes instances, demonstrations or oracle responses.
pub fn cmd_gen_data(
    exp: &Experiment,
    seed: u64,
    n: usize,
    kind: DataKind,
) -> Result<Outcome, CommandError> {
    let judge = exp.judge()?;
    let mode = exp.mode();
    let mut out = Outputs::new(&exp.config.output_dir)?;
    let name = match kind {
        DataKind::Train => {
            let mut xs = exp.train_instances(seed);
            xs.truncate(n);
            out.write("train.jsonl", &jsonl(&xs))?;
            "train.jsonl"
        }
        DataKind::Eval => {
            out.write("eval.jsonl", &jsonl(exp.eval_instances(seed, n)))?;
            "eval.jsonl"
        }
        DataKind::Demos => {
            let mut demos = exp.demonstrations(seed, mode)?;
            demos.truncate(n);
            let path = out.path("demos.jsonl");
            export_demonstrations(&path, &demos, mode)?;
            out.record("demos.jsonl")?;
            "demos.jsonl"
        }
        DataKind::Oracle => {
            let mut rng = stream_rng(seed, Stream::Demos);
            let mut lines = Vec::new();
            for inst in exp.eval_instances(seed, n) {
                let spec = exp.registry.get(&inst.task).map_err(PipelineError::from)?;
                let target = teacher_output(
                    spec,
                    &inst,
                    &inst.gold,
                    mode,
                    &exp.config.sft.teacher,
                    &mut rng,
                )?;
                let text = render(&target, mode).map_err(|source| SftError::Render {
                    id: inst.id.clone(),
                    source,
                })?;
                lines.push(text);
            }
            out.write("oracle_outputs.jsonl", &jsonl(&lines))?;
            "oracle_outputs.jsonl"
        }
    };
    let summary = format!("wrote {}\n", out.path(name).display());
    out.finish(
        exp,
        Invocation::GenData { seed, n, kind },
        vec![seed],
        judge.as_ref(),
        summary,
    )
}

/// Runs any invocation against `exp`.
pub fn run(exp: &Experiment, invocation: &Invocation) -> Result<Outcome, CommandError> {
    match invocation {
        Invocation::Sft { seed } => cmd_sft(exp, *seed),
        Invocation::Train {
            seed,
            init_checkpoint,
            resume,
            stop_after,
        } => cmd_train(exp, *seed, init_checkpoint.as_deref(), *resume, *stop_after),
        Invocation::Eval {
            seed,
            checkpoint,
            n,
            outputs,
        } => Ok(cmd_eval(exp, *seed, checkpoint.as_deref(), *n, outputs.as_deref())?.0),
        Invocation::AblateRewards => Ok(cmd_ablate_rewards(exp)?.0),
        Invocation::AblateGroupSize { group_sizes } => {
            Ok(cmd_ablate_group_size(exp, group_sizes)?.0)
        }
        Invocation::Render { seed, n } => cmd_render(exp, *seed, *n),
        Invocation::GenData { seed, n, kind } => cmd_gen_data(exp, *seed, *n, *kind),
    }
}

/// Result of re-running a manifest.
#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub outcome: Outcome,
    /// Artifacts whose bytes differ from the original, or are missing.
    pub mismatched: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Re-runs the command recorded in `manifest_path` into `output_dir` and
/// compares every artifact hash.
pub fn replay(manifest_path: &Path, output_dir: &Path) -> Result<ReplayReport, CommandError> {
    let original = Manifest::read(manifest_path).map_err(io_err(manifest_path))?;
    if matches!(original.invocation, Invocation::Train { resume: true, .. }) {
        return Err(CommandError::ReplayResume);
    }
    for (path, hash) in &original.inputs {
        if hash_file(path).map_err(io_err(path))? != *hash {
            return Err(CommandError::InputChanged(path.clone()));
        }
    }
    let mut config = original.config.clone();
    config.output_dir = output_dir.to_path_buf();
    let exp = Experiment::new(config)?;
    let outcome = run(&exp, &original.invocation)?;
    let mismatched = original
        .artifacts
        .iter()
        .filter(|(name, hash)| outcome.manifest.artifacts.get(*name) != Some(*hash))
        .map(|(name, _)| name.clone())
        .collect();
    Ok(ReplayReport {
        outcome,
        mismatched,
    })
}
