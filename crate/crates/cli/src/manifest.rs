// SPDX-License-Identifier: MIT OR Apache-2.0

//! The run manifest: resolved config, and per step the hash of its inputs
//! and the artifacts it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use editlab::io::{sha256_hex, write_atomic};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub input_hash: String,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub steps: BTreeMap<String, StepRecord>,
}

pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn open(cfg: &RunConfig) -> editlab::Result<Self> {
        let dir = cfg.out.clone();
        std::fs::create_dir_all(&dir)?;
        let previous: Option<Manifest> = std::fs::read(dir.join(MANIFEST_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        let manifest = Manifest {
            tool_version: editlab::VERSION.to_string(),
            config_hash: cfg.hash(),
            // The output directory is left blank so runs compare equal wherever they live.
            config: RunConfig {
                out: PathBuf::new(),
                ..cfg.clone()
            },
            steps: previous.map(|m| m.steps).unwrap_or_default(),
        };
        Ok(Self { dir, manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// True when the step already ran on these inputs and its artifacts are intact.
    pub fn up_to_date(&self, step: &str, input_hash: &str) -> bool {
        self.manifest.steps.get(step).is_some_and(|s| {
            s.input_hash == input_hash
                && s.artifacts.iter().all(|a| {
                    std::fs::read(self.dir.join(&a.path)).is_ok_and(|b| sha256_hex(&b) == a.sha256)
                })
        })
    }

    /// Writes the artifacts, then records the step.
    pub fn record(&mut self, step: &str, input_hash: &str, artifacts: Vec<(&str, Vec<u8>)>) -> editlab::Result<()> {
        let mut records = Vec::with_capacity(artifacts.len());
        for (name, bytes) in artifacts {
            write_atomic(&self.dir.join(name), &bytes)?;
            records.push(ArtifactRecord {
                path: name.to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        self.manifest.steps.insert(
            step.to_string(),
            StepRecord {
                input_hash: input_hash.to_string(),
                artifacts: records,
            },
        );
        self.save()
    }

    pub fn save(&self) -> editlab::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.dir.join(MANIFEST_FILE), &bytes)
    }
}

/// Hash of a file's contents, or `None` when it is missing.
pub fn file_hash(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| sha256_hex(&b))
}
