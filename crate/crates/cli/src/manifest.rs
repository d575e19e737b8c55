//! Run manifest kept in every output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    /// Content hash of the panel the command consumed or produced.
    pub data_hash: Option<String>,
    /// First and last week of the training panel of a fit.
    pub train_weeks: Option<(i64, i64)>,
    /// Completion time of each command, in seconds since the Unix epoch.
    pub commands: BTreeMap<String, u64>,
}

/// An output directory bound to one configuration.
pub struct OutDir {
    pub path: PathBuf,
    pub manifest: Manifest,
}

impl OutDir {
    /// Creates `path` if needed. An existing manifest must carry the same
    /// configuration hash.
    pub fn open(path: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let hash = cfg.hash();
        let manifest = match read(path)? {
            Some(m) if m.config_hash != hash => {
                return Err(CliError::Manifest(format!(
                    "{} holds results of a different configuration (hash {}, current {}); use another --out",
                    path.display(),
                    short(&m.config_hash),
                    short(&hash)
                )))
            }
            Some(m) => m,
            None => Manifest {
                seed: cfg.seed,
                config_hash: hash,
                config: cfg.clone(),
                data_hash: None,
                train_weeks: None,
                commands: BTreeMap::new(),
            },
        };
        Ok(OutDir {
            path: path.to_path_buf(),
            manifest,
        })
    }

    /// Fails unless `command` has completed in this directory.
    pub fn require(&self, command: &str) -> Result<(), CliError> {
        if self.manifest.commands.contains_key(command) {
            Ok(())
        } else {
            Err(CliError::Manifest(format!(
                "no `{command}` results in {}; run `stgp {command}` with this configuration first",
                self.path.display()
            )))
        }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Records `command` as completed and rewrites the manifest.
    pub fn finish(&mut self, command: &str) -> Result<(), CliError> {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.manifest.commands.insert(command.into(), now);
        let path = self.file(FILE_NAME);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Io { path, source: e })
    }
}

fn read(dir: &Path) -> Result<Option<Manifest>, CliError> {
    let path = dir.join(FILE_NAME);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_other_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunConfig::parse("seed = 1").unwrap();
        let mut out = OutDir::open(dir.path(), &a).unwrap();
        assert!(out.require("fit").is_err());
        out.finish("fit").unwrap();
        let again = OutDir::open(dir.path(), &a).unwrap();
        again.require("fit").unwrap();
        let b = RunConfig::parse("seed = 2").unwrap();
        assert!(matches!(OutDir::open(dir.path(), &b), Err(CliError::Manifest(_))));
    }
}
