//! Reads a (possibly partial) run directory back into analysis tables.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use pooling_core::analysis::{Dataset, PredictionRow, Source};
use pooling_core::hierfit::HierPrediction;
use pooling_core::langgen::{group_stats, read_csv, ContextRow, Group, ObservedContext};
use pooling_core::shrinkage::ShrinkRow;
use pooling_tinylm::train::{LossRecord, ProbeRecord};
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::run::{
    replication_dir, RunManifest, Status, CONTEXTS_CSV, HIER_PREDICTIONS_CSV, LOSS_CSV, PROBES_CSV, SHRINKAGE_CSV,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub condition: String,
    pub record: LossRecord,
}

/// Everything a report needs, plus a list of what was missing.
#[derive(Clone, Debug)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub datasets: Vec<Dataset>,
    pub predictions: Vec<PredictionRow>,
    pub losses: Vec<LossRow>,
    /// Human-readable descriptions of absent or unreadable inputs.
    pub gaps: Vec<String>,
}

impl RunData {
    pub fn conditions(&self) -> Vec<String> {
        self.manifest.config.conditions.iter().map(|c| c.label()).collect()
    }

    pub fn has(&self, source: Source) -> bool {
        self.predictions.iter().any(|p| p.source == source)
    }
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_csv(BufReader::new(f)).map_err(|e| Error::Input { path: path.to_path_buf(), message: e.to_string() })
}

/// Loads every replication listed in the manifest. Missing or unreadable
/// files become gaps; only a missing manifest is an error.
pub fn load_run(dir: &Path) -> Result<RunData> {
    let manifest = RunManifest::load(dir)?;
    let mut data = RunData {
        dir: dir.to_path_buf(),
        manifest: manifest.clone(),
        datasets: Vec::new(),
        predictions: Vec::new(),
        losses: Vec::new(),
        gaps: Vec::new(),
    };
    for entry in &manifest.replications {
        let rel = replication_dir(&entry.condition, entry.replication);
        if entry.status == Status::Failed {
            data.gaps.push(format!(
                "{rel}: replication failed ({})",
                entry.error.as_deref().unwrap_or("no error recorded")
            ));
        }
        let Some(cond) = manifest.config.conditions.get(entry.condition_index) else {
            data.gaps.push(format!("{rel}: condition index {} not in config", entry.condition_index));
            continue;
        };
        let rep_dir = dir.join(&rel);
        let contexts: Vec<ContextRow> = match read_rows(&rep_dir.join(CONTEXTS_CSV)) {
            Ok(c) => c,
            Err(e) => {
                data.gaps.push(format!("{rel}: {CONTEXTS_CSV} unavailable ({e})"));
                continue;
            }
        };
        let observed: Vec<ObservedContext> = contexts.iter().map(ContextRow::observed).collect();
        let groups = [group_stats(Group::X, &observed), group_stats(Group::Y, &observed)];
        data.datasets.push(Dataset {
            condition: entry.condition.clone(),
            replication: entry.replication,
            s: cond.s,
            contexts,
            groups,
        });

        let pred = |context_id, inferred_p, epoch, source| PredictionRow {
            condition: entry.condition.clone(),
            replication: entry.replication,
            epoch,
            context_id,
            inferred_p,
            source,
        };
        let mut optional = |name: &str, enabled: bool| -> Option<PathBuf> {
            let p = rep_dir.join(name);
            if p.exists() {
                Some(p)
            } else {
                if enabled {
                    data.gaps.push(format!("{rel}: {name} missing"));
                }
                None
            }
        };
        let stages = manifest.stages;
        let shrink_path = optional(SHRINKAGE_CSV, stages.shrink);
        let hier_path = optional(HIER_PREDICTIONS_CSV, stages.hier);
        let probes_path = optional(PROBES_CSV, stages.lm);
        let loss_path = optional(LOSS_CSV, stages.lm);

        if let Some(p) = shrink_path {
            match read_rows::<ShrinkRow>(&p) {
                Ok(rows) => data
                    .predictions
                    .extend(rows.into_iter().map(|r| pred(r.context_id, r.pooled_p, 0, Source::Shrinkage))),
                Err(e) => data.gaps.push(format!("{rel}: {e}")),
            }
        }
        if let Some(p) = hier_path {
            match read_rows::<HierPrediction>(&p) {
                Ok(rows) => data
                    .predictions
                    .extend(rows.into_iter().map(|r| pred(r.context_id, r.inferred_p, 0, Source::Hier))),
                Err(e) => data.gaps.push(format!("{rel}: {e}")),
            }
        }
        if let Some(p) = probes_path {
            match read_rows::<ProbeRecord>(&p) {
                Ok(rows) => data
                    .predictions
                    .extend(rows.into_iter().map(|r| pred(r.context_id, r.inferred_p, r.epoch, Source::Lm))),
                Err(e) => data.gaps.push(format!("{rel}: {e}")),
            }
        }
        if let Some(p) = loss_path {
            match read_rows::<LossRecord>(&p) {
                Ok(rows) => data
                    .losses
                    .extend(rows.into_iter().map(|record| LossRow { condition: entry.condition.clone(), record })),
                Err(e) => data.gaps.push(format!("{rel}: {e}")),
            }
        }
    }
    Ok(data)
}
