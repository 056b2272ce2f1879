//! Experiment configuration.
//!
//! A config is a single TOML file. Every section is optional and falls back
//! to the defaults below; unknown keys are rejected so a typo cannot
//! silently leave a default in place.
//!
//! ```toml
//! schema_version = 1
//! replications = 50
//! master_seed = 1
//! output_dir = "runs/default"
//! workers = 0                  # 0 = one per available core
//!
//! [grammar]                    # template; b, s, freq_match and seed are
//! types_x = 10                 # overridden per condition and replication
//! types_y = 100
//! n_strings = 1000
//! zipf_exponent = 1.0
//!
//! [[conditions]]
//! b = 1.0
//! s = 1.0
//! freq_match = "equal_group_tokens"
//!
//! [lm]                         # tiny transformer hyperparameters
//! [hier]                       # sampler settings
//! [shrinkage]                  # sigma2_within = 1.0, scale = "logit"
//! [analyses]
//! term_sets = ["frequency", "variance", "main"]
//! freq_scale = "raw"           # or "log"
//! var_source = "observed"      # or "generating"
//! ```
//!
//! `POOLING_OUTPUT_DIR` and `POOLING_WORKERS` override `output_dir` and
//! `workers`; nothing else is read from the environment.

use std::path::{Path, PathBuf};

use pooling_core::analysis::{DesignOptions, FreqBucket, FreqScale, TermSet, VarSource};
use pooling_core::hierfit::HierModelSpec;
use pooling_core::langgen::{FreqMatch, GrammarSpec};
use pooling_core::rng::{split_seed, streams};
use pooling_core::shrinkage::PoolingScale;
use pooling_tinylm::LMConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const ENV_OUTPUT_DIR: &str = "POOLING_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "POOLING_WORKERS";

/// One cell of the condition grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    /// Directory name; derived from the parameters when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub b: f64,
    pub s: f64,
    #[serde(default)]
    pub freq_match: FreqMatch,
    /// Overrides the experiment-wide replication count for this cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<u32>,
}

impl Condition {
    pub fn new(b: f64, s: f64, freq_match: FreqMatch) -> Self {
        Self { name: None, b, s, freq_match, replications: None }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let fm = match self.freq_match {
            FreqMatch::EqualGroupTokens => "equal_group_tokens",
            FreqMatch::EqualTokenTypeRatio => "equal_token_type_ratio",
        };
        format!("b{}_s{}_{}", self.b, self.s, fm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShrinkageConfig {
    pub sigma2_within: f64,
    pub scale: PoolingScale,
}

impl Default for ShrinkageConfig {
    fn default() -> Self {
        Self { sigma2_within: 1.0, scale: PoolingScale::Logit }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Names accepted by [`TermSet::by_name`].
    pub term_sets: Vec<String>,
    pub freq_scale: FreqScale,
    pub var_source: VarSource,
    pub buckets: Vec<FreqBucket>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            term_sets: TermSet::all().iter().map(|t| t.name.clone()).collect(),
            freq_scale: FreqScale::Raw,
            var_source: VarSource::Observed,
            buckets: FreqBucket::defaults(),
        }
    }
}

impl AnalysisConfig {
    pub fn design_options(&self) -> DesignOptions {
        DesignOptions { freq_scale: self.freq_scale, var_source: self.var_source }
    }

    pub fn term_sets(&self) -> Result<Vec<TermSet>> {
        self.term_sets
            .iter()
            .map(|n| TermSet::by_name(n).ok_or_else(|| Error::Config(format!("unknown term set {n:?}"))))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub grammar: GrammarSpec,
    pub conditions: Vec<Condition>,
    pub replications: u32,
    pub lm: LMConfig,
    pub hier: HierModelSpec,
    pub shrinkage: ShrinkageConfig,
    pub analyses: AnalysisConfig,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    /// Parallel replication jobs; 0 means one per available core.
    pub workers: usize,
    /// Also write the trained transformer weights per replication.
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            grammar: GrammarSpec::default(),
            conditions: vec![
                Condition::new(1.0, 1.0, FreqMatch::EqualGroupTokens),
                Condition::new(1.0, 2.0, FreqMatch::EqualGroupTokens),
            ],
            replications: 50,
            lm: LMConfig::default(),
            hier: HierModelSpec::default(),
            shrinkage: ShrinkageConfig::default(),
            analyses: AnalysisConfig::default(),
            output_dir: PathBuf::from("runs/default"),
            master_seed: 1,
            workers: 0,
            save_checkpoints: false,
        }
    }
}

/// Seeds for one `(condition, replication)` job.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationSeeds {
    pub replication: u64,
    pub corpus: u64,
    pub hier: u64,
    pub lm: u64,
}

/// `split_seed(master_seed, condition_index, replication)`, then one child
/// per component. Injective over `(condition, replication)` below 2^32.
pub fn replication_seeds(master_seed: u64, condition: usize, replication: u32) -> ReplicationSeeds {
    let r = split_seed(master_seed, condition as u64, replication as u64);
    ReplicationSeeds {
        replication: r,
        corpus: split_seed(r, streams::CORPUS, 0),
        hier: split_seed(r, streams::HIER, 0),
        lm: split_seed(r, streams::LM, 0),
    }
}

impl ExperimentConfig {
    /// `"default"` yields [`ExperimentConfig::default`]; anything else is a
    /// TOML file path.
    pub fn load(spec: &str) -> Result<Self> {
        let cfg = if spec == "default" {
            Self::default()
        } else {
            let path = Path::new(spec);
            let text = std::fs::read_to_string(path).at(path)?;
            Self::from_toml(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.conditions.is_empty() {
            return Err(Error::Config("no conditions".into()));
        }
        let mut labels: Vec<String> = self.conditions.iter().map(Condition::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate condition names".into()));
        }
        if labels.iter().any(|l| l.is_empty() || l.contains(['/', '\\']) || l == "analysis" || l == "report") {
            return Err(Error::Config("condition names must be non-empty plain directory names".into()));
        }
        for c in &self.conditions {
            self.grammar_for(c, 0).validate()?;
        }
        self.lm.validate()?;
        self.hier.validate()?;
        if self.shrinkage.sigma2_within.is_nan() || self.shrinkage.sigma2_within <= 0.0 {
            return Err(Error::Config("shrinkage.sigma2_within must be positive".into()));
        }
        self.analyses.term_sets()?;
        Ok(())
    }

    /// Applies `POOLING_OUTPUT_DIR` and `POOLING_WORKERS` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            self.workers = w.parse().map_err(|_| Error::Config(format!("{ENV_WORKERS}={w:?} is not a count")))?;
        }
        Ok(())
    }

    pub fn replications_for(&self, c: &Condition) -> u32 {
        c.replications.unwrap_or(self.replications)
    }

    /// Keeps only the named condition (label or 0-based index).
    pub fn select_condition(&mut self, which: &str) -> Result<()> {
        let idx = match which.parse::<usize>() {
            Ok(i) if i < self.conditions.len() => i,
            _ => self
                .conditions
                .iter()
                .position(|c| c.label() == which)
                .ok_or_else(|| Error::UnknownCondition(which.to_string()))?,
        };
        // keep the original index so seeds do not depend on the selection
        for (i, c) in self.conditions.iter_mut().enumerate() {
            if i != idx {
                c.replications = Some(0);
            }
        }
        Ok(())
    }

    pub fn grammar_for(&self, c: &Condition, corpus_seed: u64) -> GrammarSpec {
        GrammarSpec { b: c.b, s: c.s, freq_match: c.freq_match, seed: corpus_seed, ..self.grammar.clone() }
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}
