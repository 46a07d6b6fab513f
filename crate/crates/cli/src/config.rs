// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: a TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use editlab::corpus::{CorpusSpec, DatasetFormat, SUBJECT_CAPACITY};
use editlab::editor::{EditPlan, MSearch};
use editlab::evalsuite::MetricKind;
use editlab::io::sha256_hex;
use editlab::tinylm::{ModelConfig, TrainConfig};
use editlab::tracing::TraceConfig;
use editlab::tinylm::Site;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the corpus, initialisation, training, tracing and key sampling.
    pub seed: u64,
    pub out: PathBuf,
    pub metric: MetricKind,
    pub corpus: CorpusSpec,
    pub dataset: Option<DatasetSource>,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub trace: TraceSection,
    pub edit: EditSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    /// `mcf` or `zsre`.
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub context_len: usize,
    pub attn_windows: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::with_vocab(1);
        Self {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_mlp: m.d_mlp,
            context_len: m.context_len,
            attn_windows: m.attn_windows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    /// Edit facts traced to pick the decisive layers.
    pub n_facts: usize,
    pub n_layers_to_edit: usize,
    pub noise_scale: f64,
    pub n_noise_samples: usize,
    pub site: Site,
}

impl Default for TraceSection {
    fn default() -> Self {
        let t = TraceConfig::default();
        Self {
            n_facts: 20,
            n_layers_to_edit: 1,
            noise_scale: t.noise_scale,
            n_noise_samples: t.n_noise_samples,
            site: t.site,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSection {
    pub batch_size: usize,
    pub n_batches: usize,
    /// Fixed layers; when absent the layers come from tracing.
    pub layers: Option<Vec<usize>>,
    pub lambda_reg: f64,
    /// Background keys; 64 per batched request when absent.
    pub retention_size: Option<usize>,
    pub augment_retention_with_past_edits: bool,
    pub m_search: MSearch,
}

impl Default for EditSection {
    fn default() -> Self {
        let p = EditPlan::single_batch(50, Vec::new());
        Self {
            batch_size: p.batch_size,
            n_batches: p.n_batches,
            layers: None,
            lambda_reg: p.lambda_reg,
            retention_size: None,
            augment_retention_with_past_edits: p.augment_retention_with_past_edits,
            m_search: p.m_search,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("editlab-run"),
            metric: MetricKind::ExactMatch,
            corpus: CorpusSpec::default(),
            dataset: None,
            model: ModelSection::default(),
            train: TrainConfig::default(),
            trace: TraceSection::default(),
            edit: EditSection::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub metric: Option<MetricKind>,
    pub layers: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    pub n_batches: Option<usize>,
}

#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    Parse(String),
    Invalid(Vec<String>),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
            ConfigError::Parse(e) => write!(f, "cannot parse config: {e}"),
            ConfigError::Invalid(problems) => {
                writeln!(f, "invalid config:")?;
                for p in problems {
                    writeln!(f, "  - {p}")?;
                }
                Ok(())
            }
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read(p.to_path_buf(), e))?;
                toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        if let Some(m) = overrides.metric {
            cfg.metric = m;
        }
        if let Some(l) = &overrides.layers {
            cfg.edit.layers = Some(l.clone());
        }
        if let Some(b) = overrides.batch_size {
            cfg.edit.batch_size = b;
        }
        if let Some(n) = overrides.n_batches {
            cfg.edit.n_batches = n;
        }
        cfg.corpus.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    /// Every problem with the configuration, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        let mut check = |field: &str, r: editlab::Result<()>| {
            match r {
                Ok(()) => {}
                Err(editlab::LabError::InvalidConfig(m)) => problems.push(format!("{field}: {m}")),
                Err(e) => problems.push(format!("{field}: {e}")),
            }
        };
        match &self.dataset {
            Some(d) => check("dataset.format", d.format.parse::<DatasetFormat>().map(|_| ())),
            None => {
                let c = &self.corpus;
                if c.n_facts == 0 {
                    check("corpus.n_facts", Err(editlab::LabError::InvalidConfig("must be positive".into())));
                }
                if c.n_facts + c.n_heldout > SUBJECT_CAPACITY {
                    check(
                        "corpus",
                        Err(editlab::LabError::InvalidConfig(format!(
                            "n_facts + n_heldout must not exceed {SUBJECT_CAPACITY}"
                        ))),
                    );
                }
                if c.repeats == 0 {
                    check("corpus.repeats", Err(editlab::LabError::InvalidConfig("must be positive".into())));
                }
            }
        }
        check("model", self.model_config(2).validate());
        check("train", self.train.validate());
        let plan = self.plan(vec![0]);
        check("edit", plan.validate(self.model.n_layers));
        if let Some(layers) = &self.edit.layers {
            check("edit.layers", self.plan(layers.clone()).validate(self.model.n_layers));
        }
        if self.dataset.is_none() && self.edit.batch_size * self.edit.n_batches > self.corpus.n_facts {
            check(
                "edit",
                Err(editlab::LabError::InvalidConfig(format!(
                    "batch_size x n_batches = {} exceeds corpus.n_facts = {}",
                    self.edit.batch_size * self.edit.n_batches,
                    self.corpus.n_facts
                ))),
            );
        }
        if self.edit.layers.is_none() {
            if self.trace.n_facts == 0 {
                check("trace.n_facts", Err(editlab::LabError::InvalidConfig("must be positive when edit.layers is unset".into())));
            }
            if self.trace.n_layers_to_edit == 0 || self.trace.n_layers_to_edit > self.model.n_layers {
                check(
                    "trace.n_layers_to_edit",
                    Err(editlab::LabError::InvalidConfig(format!("must lie in 1..={}", self.model.n_layers))),
                );
            }
        }
        if self.trace.n_noise_samples == 0 || !(self.trace.noise_scale >= 0.0) {
            check(
                "trace",
                Err(editlab::LabError::InvalidConfig("needs a sample and a non-negative noise scale".into())),
            );
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            d_mlp: m.d_mlp,
            vocab_size,
            context_len: m.context_len,
            seed: self.seed,
            attn_windows: m.attn_windows.clone(),
        }
    }

    pub fn plan(&self, layers: Vec<usize>) -> EditPlan {
        let e = &self.edit;
        EditPlan {
            batch_size: e.batch_size,
            n_batches: e.n_batches,
            layers,
            lambda_reg: e.lambda_reg,
            retention_size: e.retention_size.unwrap_or(64 * e.batch_size),
            m_search: e.m_search.clone(),
            augment_retention_with_past_edits: e.augment_retention_with_past_edits,
            seed: self.seed,
        }
    }

    pub fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            noise_scale: self.trace.noise_scale,
            n_noise_samples: self.trace.n_noise_samples,
            seed: self.seed,
            site: self.trace.site,
        }
    }

    /// Hash of the resolved configuration without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }
}
