use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;

/// Prefix of environment variables the tool would read if it had any
/// settings there. None are declared, so any such variable is an error.
pub const ENV_PREFIX: &str = "TSREASON_";

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// What `gen-data` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    /// The training pool as JSON lines.
    Train,
    /// The held-out set as JSON lines.
    Eval,
    /// Teacher demonstrations.
    Demos,
    /// Teacher responses for the held-out set, one JSON string per line.
    Oracle,
}

/// A command and every argument it was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Sft {
        seed: u64,
    },
    Train {
        seed: u64,
        init_checkpoint: Option<PathBuf>,
        resume: bool,
        stop_after: Option<usize>,
    },
    Eval {
        seed: u64,
        checkpoint: Option<PathBuf>,
        n: Option<usize>,
        outputs: Option<PathBuf>,
    },
    AblateRewards,
    AblateGroupSize {
        group_sizes: Vec<usize>,
    },
    Render {
        seed: u64,
        n: usize,
    },
    GenData {
        seed: u64,
        n: usize,
        kind: DataKind,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Sft { .. } => "sft",
            Invocation::Train { .. } => "train",
            Invocation::Eval { .. } => "eval",
            Invocation::AblateRewards => "ablate-rewards",
            Invocation::AblateGroupSize { .. } => "ablate-group-size",
            Invocation::Render { .. } => "render",
            Invocation::GenData { .. } => "gen-data",
        }
    }

    /// Files read besides the config.
    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Invocation::Train {
                init_checkpoint: Some(p),
                ..
            } => vec![p],
            Invocation::Eval {
                checkpoint,
                outputs,
                ..
            } => checkpoint
                .iter()
                .chain(outputs.iter())
                .map(PathBuf::as_path)
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Provenance written next to every set of artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub invocation: Invocation,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub code_version: String,
    pub judge_version: String,
    /// SHA-256 of each input file.
    pub inputs: BTreeMap<PathBuf, String>,
    /// SHA-256 of each reproducible output, keyed by path relative to the
    /// output directory.
    pub artifacts: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn file_name(invocation: &Invocation) -> String {
        format!("manifest-{}.json", invocation.name())
    }

    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.invocation));
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?).map_err(io::Error::other)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Names of set environment variables under [`ENV_PREFIX`].
pub fn undeclared_environment() -> Vec<String> {
    std::env::vars_os()
        .filter_map(|(k, _)| k.into_string().ok())
        .filter(|k| k.starts_with(ENV_PREFIX))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invocation_serializes_with_command_tag() {
        let inv = Invocation::Train {
            seed: 3,
            init_checkpoint: None,
            resume: false,
            stop_after: Some(5),
        };
        let json = serde_json::to_value(&inv).unwrap();
        assert_eq!(json["command"], "train");
        assert_eq!(serde_json::from_value::<Invocation>(json).unwrap(), inv);
        assert_eq!(Manifest::file_name(&inv), "manifest-train.json");
    }

    #[test]
    fn inputs_list_read_files() {
        let inv = Invocation::Eval {
            seed: 0,
            checkpoint: Some("a.ckpt".into()),
            n: None,
            outputs: Some("o.jsonl".into()),
        };
        assert_eq!(
            inv.inputs(),
            vec![Path::new("a.ckpt"), Path::new("o.jsonl")]
        );
        assert!(Invocation::AblateRewards.inputs().is_empty());
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            invocation: Invocation::Sft { seed: 1 },
            seeds: vec![1],
            config_hash: "h".into(),
            code_version: CODE_VERSION.into(),
            judge_version: "rubric".into(),
            inputs: BTreeMap::new(),
            artifacts: [("a".to_string(), sha256_hex(b"x"))].into_iter().collect(),
            config: ExperimentConfig::default(),
        };
        let path = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }
}
