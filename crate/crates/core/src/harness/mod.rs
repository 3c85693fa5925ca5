//! Experiment wiring: configuration, evaluation, manifests and the
//! commands behind the command-line tool.

mod commands;
mod config;
mod eval;
mod manifest;
mod pipeline;

pub use commands::{
    check_environment, cmd_ablate_group_size, cmd_ablate_rewards, cmd_eval, cmd_gen_data,
    cmd_render, cmd_sft, cmd_train, matched_steps, read_outputs, replay, run, CommandError,
    GroupSizeAblation, GroupSizeRow, Outcome, ReplayReport, RewardAblation, RewardAblationRow,
    RunResult, EVAL_REPORT, EVAL_TABLE, GROUP_CURVE, GROUP_TABLE, METRICS, REWARD_TABLE,
    SFT_CHECKPOINT, SFT_LOSS, TIMINGS, TRAIN_CHECKPOINT, TRAIN_REPORT, TRAIN_STATE,
};
pub use config::{
    apply_override, AblationConfig, BaseConfig, ConfigError, DataConfig, ExperimentConfig,
    InitFrom, JudgeSelection, RewardRow, SftSettings,
};
pub use eval::{
    evaluate, evaluate_outputs, greedy_outputs, sampled_format_rate, EvalError, EvalReport,
    INVALID, OTHER,
};
pub use manifest::{
    hash_file, sha256_hex, undeclared_environment, DataKind, Invocation, Manifest, CODE_VERSION,
    ENV_PREFIX,
};
pub use pipeline::{stream_rng, Experiment, PipelineError, Stream};
