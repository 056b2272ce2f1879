//! The replication loop and its on-disk layout.
//!
//! ```text
//! <out>/manifest.json
//! <out>/<condition>/<rep>/corpus.tsv
//!                        contexts.csv          truth included; read only by analysis
//!                        shrinkage.csv
//!                        hier_summary.csv
//!                        hier_predictions.csv
//!                        probes.csv
//!                        loss.csv              epoch 0 is the untrained loss
//!                        model.ckpt            only with save_checkpoints
//! ```
//!
//! Model fitting sees only [`ObservedCorpus`] / [`ObservedContext`] values,
//! which carry no generating truth.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pooling_core::hierfit::{fit_posterior, predict_probs, HierModelSpec};
use pooling_core::langgen::{generate_corpus, write_corpus_tsv, write_csv, ObservedCorpus};
use pooling_core::shrinkage::shrink_all;
use pooling_tinylm::checkpoint::write_checkpoint;
use pooling_tinylm::train::LossRecord;
use pooling_tinylm::{train_and_probe, LMConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{replication_seeds, ExperimentConfig, ReplicationSeeds};
use crate::error::{Error, IoContext, Result};

pub const MANIFEST: &str = "manifest.json";
pub const CORPUS_TSV: &str = "corpus.tsv";
pub const CONTEXTS_CSV: &str = "contexts.csv";
pub const SHRINKAGE_CSV: &str = "shrinkage.csv";
pub const HIER_SUMMARY_CSV: &str = "hier_summary.csv";
pub const HIER_PREDICTIONS_CSV: &str = "hier_predictions.csv";
pub const PROBES_CSV: &str = "probes.csv";
pub const LOSS_CSV: &str = "loss.csv";
pub const CHECKPOINT: &str = "model.ckpt";

/// Which estimators to run after generating each corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub shrink: bool,
    pub hier: bool,
    pub lm: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { shrink: true, hier: true, lm: true };
    pub const CORPUS_ONLY: Stages = Stages { shrink: false, hier: false, lm: false };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationEntry {
    pub condition: String,
    pub condition_index: usize,
    pub replication: u32,
    pub seeds: ReplicationSeeds,
    pub status: Status,
    /// The stage that failed and its error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to reproduce and verify a run. Contains no timestamps
/// or host details, so identical runs write identical manifests apart from
/// `config.output_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub stages: Stages,
    pub config: ExperimentConfig,
    pub replications: Vec<ReplicationEntry>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn failures(&self) -> impl Iterator<Item = &ReplicationEntry> {
        self.replications.iter().filter(|r| r.status == Status::Failed)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST);
        let text = fs::read_to_string(&path).at(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

pub fn replication_dir(condition: &str, replication: u32) -> String {
    format!("{condition}/{replication}")
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).at(path)?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).at(path)?))
}

fn save_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    write_csv(rows, &mut w)?;
    w.flush().at(path)
}

struct Job {
    condition: String,
    condition_index: usize,
    replication: u32,
    seeds: ReplicationSeeds,
}

struct JobOutcome {
    entry: ReplicationEntry,
    files: Vec<FileEntry>,
}

/// Runs every `(condition, replication)` job, in parallel across
/// `cfg.worker_count()` threads, and writes the manifest. A failing job is
/// recorded and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig, stages: Stages) -> Result<RunManifest> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).at(out)?;
    let jobs: Vec<Job> = cfg
        .conditions
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            (0..cfg.replications_for(c)).map(move |rep| Job {
                condition: c.label(),
                condition_index: ci,
                replication: rep,
                seeds: replication_seeds(cfg.master_seed, ci, rep),
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<JobOutcome> = pool.install(|| jobs.par_iter().map(|j| run_job(cfg, stages, j)).collect());

    let mut replications = Vec::with_capacity(outcomes.len());
    let mut files = Vec::new();
    for o in outcomes {
        replications.push(o.entry);
        files.extend(o.files);
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        stages,
        config: cfg.clone(),
        replications,
        files,
    };
    let path = out.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).at(&path)?;
    Ok(manifest)
}

fn run_job(cfg: &ExperimentConfig, stages: Stages, job: &Job) -> JobOutcome {
    let rel = replication_dir(&job.condition, job.replication);
    let dir = cfg.output_dir.join(&rel);
    let mut warnings = Vec::new();
    let result = (|| -> Result<()> {
        if dir.exists() {
            fs::remove_dir_all(&dir).at(&dir)?;
        }
        fs::create_dir_all(&dir).at(&dir)?;
        replicate(cfg, stages, job, &dir, &mut warnings)
    })();
    let mut files = Vec::new();
    let mut hash_error = None;
    for name in [
        CORPUS_TSV,
        CONTEXTS_CSV,
        SHRINKAGE_CSV,
        HIER_SUMMARY_CSV,
        HIER_PREDICTIONS_CSV,
        PROBES_CSV,
        LOSS_CSV,
        CHECKPOINT,
    ] {
        let p = dir.join(name);
        if p.exists() {
            match sha256_file(&p) {
                Ok((sha256, bytes)) => files.push(FileEntry { path: format!("{rel}/{name}"), sha256, bytes }),
                Err(e) => hash_error = Some(e.to_string()),
            }
        }
    }
    let error = result.err().map(|e| e.to_string()).or(hash_error);
    JobOutcome {
        entry: ReplicationEntry {
            condition: job.condition.clone(),
            condition_index: job.condition_index,
            replication: job.replication,
            seeds: job.seeds,
            status: if error.is_some() { Status::Failed } else { Status::Ok },
            error,
            warnings,
        },
        files,
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name, message: e.to_string() })
}

fn replicate(
    cfg: &ExperimentConfig,
    stages: Stages,
    job: &Job,
    dir: &Path,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let cond = &cfg.conditions[job.condition_index];
    let corpus = stage("generate", generate_corpus(&cfg.grammar_for(cond, job.seeds.corpus)).map_err(Error::from))?;
    {
        let path = dir.join(CORPUS_TSV);
        let mut w = create(&path)?;
        write_corpus_tsv(&corpus.strings, &mut w)?;
        w.flush().at(&path)?;
    }
    save_csv(&dir.join(CONTEXTS_CSV), &corpus.context_table)?;
    let observed: ObservedCorpus = corpus.observed();
    drop(corpus);

    if stages.shrink {
        let rows = stage(
            "shrink",
            shrink_all(&observed.contexts, &observed.group_stats, cfg.shrinkage.sigma2_within, cfg.shrinkage.scale)
                .map_err(Error::from),
        )?;
        save_csv(&dir.join(SHRINKAGE_CSV), &rows)?;
    }
    if stages.hier {
        let spec = HierModelSpec { seed: job.seeds.hier, ..cfg.hier.clone() };
        let fit = stage("fit-hier", fit_posterior(&observed.contexts, &spec).map_err(Error::from))?;
        warnings.extend(fit.warnings.iter().map(|w| format!("fit-hier: {w}")));
        save_csv(&dir.join(HIER_SUMMARY_CSV), &fit.summary_rows())?;
        save_csv(&dir.join(HIER_PREDICTIONS_CSV), &predict_probs(&fit))?;
    }
    if stages.lm {
        let lm_cfg = LMConfig { seed: job.seeds.lm, ..cfg.lm.clone() };
        let run = stage("train-lm", train_and_probe(&observed, &lm_cfg).map_err(Error::from))?;
        save_csv(&dir.join(PROBES_CSV), &run.probe_records(job.replication))?;
        let mut losses = vec![LossRecord { replication: job.replication, epoch: 0, loss: run.initial_loss }];
        losses.extend(run.loss_records(job.replication));
        save_csv(&dir.join(LOSS_CSV), &losses)?;
        if cfg.save_checkpoints {
            let path = dir.join(CHECKPOINT);
            let mut w = create(&path)?;
            write_checkpoint(&run.model, &mut w)?;
            w.flush().at(&path)?;
        }
    }
    Ok(())
}

/// Re-hashes every file listed in the manifest. Returns the paths whose
/// content no longer matches; empty means the run verifies.
pub fn verify_manifest(run_dir: &Path) -> Result<Vec<String>> {
    let m = RunManifest::load(run_dir)?;
    let mut bad = Vec::new();
    for f in &m.files {
        match sha256_file(&run_dir.join(&f.path)) {
            Ok((h, n)) if h == f.sha256 && n == f.bytes => {}
            _ => bad.push(f.path.clone()),
        }
    }
    Ok(bad)
}

/// Loads a config from `"default"`, a TOML file, or a previous run's
/// `manifest.json` (whose config snapshot is reused).
pub fn load_config(spec: &str) -> Result<ExperimentConfig> {
    let path = PathBuf::from(spec);
    if path.extension().is_some_and(|e| e == "json") {
        let dir = path.parent().unwrap_or(Path::new("."));
        let m = if path.file_name().is_some_and(|n| n == MANIFEST) {
            RunManifest::load(dir)?
        } else {
            let text = fs::read_to_string(&path).at(&path)?;
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?
        };
        m.config.validate()?;
        return Ok(m.config);
    }
    ExperimentConfig::load(spec)
}
