use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tsreason::harness::{
    check_environment, replay, run, DataKind, Experiment, ExperimentConfig, Invocation,
};

/// Train and evaluate small reasoning policies on synthetic time-series tasks.
#[derive(Debug, Parser)]
#[command(name = "tsreason", version)]
struct Cli {
    /// TOML experiment config. Defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config field, e.g. `--set grpo.group_size=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    dry_run: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Supervised warm-up on teacher demonstrations.
    Sft {
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// GRPO training.
    Train {
        #[arg(long)]
        seed: u64,
        /// Start from this checkpoint instead of the configured init.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
        /// Continue from the saved training state in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop once this many steps are complete.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Greedy evaluation on held-out instances.
    Eval {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Held-out instances; defaults to `data.eval_size`.
        #[arg(long)]
        n: Option<usize>,
        /// Score precomputed responses (one JSON string per line) instead
        /// of decoding.
        #[arg(long, conflicts_with = "checkpoint")]
        outputs: Option<PathBuf>,
    },
    /// Train every configured reward composition on every seed.
    AblateRewards,
    /// Train at several group sizes with a matched sample budget.
    AblateGroupSize {
        /// Defaults to `ablation.group_sizes`.
        #[arg(long, value_delimiter = ',')]
        group_sizes: Vec<usize>,
    },
    /// Export instance plots as PNG.
    Render {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n: usize,
    },
    /// Write instances, demonstrations or teacher responses as JSON lines.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, value_enum)]
        kind: Kind,
    },
    /// Re-run the command recorded in a manifest and compare artifacts.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Where the re-run writes; defaults to `<manifest dir>/replay`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Train,
    Eval,
    Demos,
    Oracle,
}

impl From<Kind> for DataKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Train => DataKind::Train,
            Kind::Eval => DataKind::Eval,
            Kind::Demos => DataKind::Demos,
            Kind::Oracle => DataKind::Oracle,
        }
    }
}

fn invocation(command: Command, config: &ExperimentConfig) -> Result<Invocation> {
    Ok(match command {
        Command::Sft { seed } => Invocation::Sft {
            seed: match seed.or_else(|| config.seeds.first().copied()) {
                Some(s) => s,
                None => bail!("no --seed given and the config lists no seeds"),
            },
        },
        Command::Train {
            seed,
            init_checkpoint,
            resume,
            stop_after,
        } => Invocation::Train {
            seed,
            init_checkpoint,
            resume,
            stop_after,
        },
        Command::Eval {
            seed,
            checkpoint,
            n,
            outputs,
        } => Invocation::Eval {
            seed,
            checkpoint,
            n,
            outputs,
        },
        Command::AblateRewards => Invocation::AblateRewards,
        Command::AblateGroupSize { group_sizes } => Invocation::AblateGroupSize {
            group_sizes: if group_sizes.is_empty() {
                config.ablation.group_sizes.clone()
            } else {
                group_sizes
            },
        },
        Command::Render { seed, n } => Invocation::Render { seed, n },
        Command::GenData { seed, n, kind } => Invocation::GenData {
            seed,
            n,
            kind: kind.into(),
        },
        Command::Replay { .. } => unreachable!("replay has no invocation of its own"),
    })
}

fn main() -> ExitCode {
    match try_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    check_environment()?;

    if let Command::Replay {
        manifest,
        output_dir,
    } = cli.command
    {
        let out =
            output_dir.unwrap_or_else(|| manifest.parent().unwrap_or(".".as_ref()).join("replay"));
        let report =
            replay(&manifest, &out).with_context(|| format!("replaying {}", manifest.display()))?;
        print!("{}", report.outcome.summary);
        if report.identical() {
            println!(
                "replay identical: {} artifacts",
                report.outcome.manifest.artifacts.len()
            );
            return Ok(ExitCode::SUCCESS);
        }
        println!("replay differs: {}", report.mismatched.join(", "));
        return Ok(ExitCode::FAILURE);
    }

    let config =
        ExperimentConfig::load(cli.config.as_deref(), &cli.overrides).context("loading config")?;
    if cli.dry_run {
        print!("{}", config.to_toml_string());
        return Ok(ExitCode::SUCCESS);
    }
    let invocation = invocation(cli.command, &config)?;
    let exp = Experiment::new(config)?;
    let outcome =
        run(&exp, &invocation).with_context(|| format!("{} failed", invocation.name()))?;
    print!("{}", outcome.summary);
    println!("manifest {}", outcome.manifest_path.display());
    Ok(ExitCode::SUCCESS)
}
