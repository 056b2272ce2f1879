//! Regression tables, trajectories and pooling metrics for a loaded run.
//!
//! Replications are stacked into one beta regression per (source,
//! condition, epoch). The transformer is reported at its best-truth epoch:
//! the epoch whose correlation with the true probabilities, averaged over
//! replications, is highest (earliest on ties).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pooling_core::analysis::{
    build_design, fits_by_type_frequency, fit_terms, pooling_range, pooling_trajectory, summarize_correlations,
    summarize_ranges, truth_correlation, within_group_spread, CorrelationRow, DesignOptions, DesignRow, FreqScale,
    RangeRow, ResponseFit, Source, TermSet, TrajectoryRow,
};
use pooling_core::langgen::{write_csv, Group};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};
use crate::load::RunData;

pub const POOLED: &str = "pooled";
pub const COEFFICIENTS_CSV: &str = "coefficients.csv";
pub const TYPE_FREQ_CSV: &str = "type_frequency.csv";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const CORRELATIONS_CSV: &str = "correlations.csv";
pub const CORRELATION_SUMMARY_CSV: &str = "correlation_summary.csv";
pub const RANGES_CSV: &str = "ranges.csv";
pub const RANGE_SUMMARY_CSV: &str = "range_summary.csv";
pub const SPREAD_CSV: &str = "spread.csv";
pub const BEST_EPOCH_CSV: &str = "best_epochs.csv";
pub const LOSS_SUMMARY_CSV: &str = "loss_summary.csv";
pub const NOTES_TXT: &str = "notes.txt";

/// One coefficient of a stacked fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub term_set: String,
    pub source: Source,
    pub condition: String,
    pub epoch: u32,
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub n_rows: usize,
    pub squeezed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeFreqRow {
    pub source: Source,
    pub condition: String,
    pub epoch: u32,
    pub type_freq: usize,
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEpoch {
    pub condition: String,
    pub epoch: u32,
    pub mean_r: f64,
    pub final_epoch: u32,
    pub final_mean_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummaryRow {
    pub condition: String,
    pub source: Source,
    pub epoch: u32,
    pub mean_r: f64,
    pub sd_r: f64,
    pub replications: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeSummaryRow {
    pub condition: String,
    pub source: Source,
    pub epoch: u32,
    pub group: Group,
    pub bucket: String,
    pub mean_range: f64,
    pub datasets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadRow {
    pub condition: String,
    pub epoch: u32,
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummaryRow {
    pub condition: String,
    pub epoch: u32,
    pub mean_loss: f64,
    pub replications: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Analysis {
    pub coefficients: Vec<CoefRow>,
    pub type_freq: Vec<TypeFreqRow>,
    pub trajectory: Vec<TrajectoryRow>,
    pub correlations: Vec<CorrelationRow>,
    pub correlation_summary: Vec<CorrelationSummaryRow>,
    pub ranges: Vec<RangeRow>,
    pub range_summary: Vec<RangeSummaryRow>,
    pub spread: Vec<SpreadRow>,
    pub best_epochs: Vec<BestEpoch>,
    pub losses: Vec<LossSummaryRow>,
    /// Settings used, skipped fits and missing inputs, in a stable order.
    pub notes: Vec<String>,
}

impl Analysis {
    pub fn coefficient(&self, term_set: &str, source: Source, condition: &str, term: &str) -> Option<&CoefRow> {
        self.coefficients
            .iter()
            .find(|c| c.term_set == term_set && c.source == source && c.condition == condition && c.term == term)
    }

    pub fn best_epoch(&self, condition: &str) -> Option<u32> {
        self.best_epochs.iter().find(|b| b.condition == condition).map(|b| b.epoch)
    }
}

fn coef_rows(fit: &ResponseFit, term_set: &str, source: Source, condition: &str, epoch: u32) -> Vec<CoefRow> {
    fit.fit
        .coefficients
        .iter()
        .map(|c| CoefRow {
            term_set: term_set.to_string(),
            source,
            condition: condition.to_string(),
            epoch,
            term: c.term.clone(),
            estimate: c.estimate,
            se: c.standard_error,
            z: c.z,
            p: c.p_value,
            n_rows: fit.fit.n_obs,
            squeezed: fit.squeezed,
        })
        .collect()
}

/// Highest mean truth correlation per condition, from transformer rows.
pub fn best_epochs(summary: &[CorrelationSummaryRow]) -> Vec<BestEpoch> {
    let mut by: BTreeMap<&str, Vec<&CorrelationSummaryRow>> = BTreeMap::new();
    for s in summary.iter().filter(|s| s.source == Source::Lm) {
        by.entry(&s.condition).or_default().push(s);
    }
    by.into_iter()
        .filter_map(|(cond, rows)| {
            let best = rows.iter().fold(None::<&&CorrelationSummaryRow>, |acc, r| match acc {
                Some(a) if a.mean_r >= r.mean_r => Some(a),
                _ => Some(r),
            })?;
            let last = rows.iter().max_by_key(|r| r.epoch)?;
            Some(BestEpoch {
                condition: cond.to_string(),
                epoch: best.epoch,
                mean_r: best.mean_r,
                final_epoch: last.epoch,
                final_mean_r: last.mean_r,
            })
        })
        .collect()
}

/// Rows for `source` in `condition` (or every condition for [`POOLED`]) at
/// the given epoch.
fn select(rows: &[DesignRow], source: Source, condition: &str, epoch: u32) -> Vec<DesignRow> {
    rows.iter()
        .filter(|r| r.source == source && r.epoch == epoch && (condition == POOLED || r.condition == condition))
        .cloned()
        .collect()
}

pub fn analyze(data: &RunData) -> Result<Analysis> {
    let cfg = &data.manifest.config;
    let opts = cfg.analyses.design_options();
    let term_sets = cfg.analyses.term_sets()?;
    let mut a = Analysis::default();
    a.notes.push(format!(
        "Freq predictor: {}; Var predictor: {}; shrinkage pooled on the {} scale with sigma2_within = {}",
        match opts.freq_scale {
            FreqScale::Raw => "raw token count",
            FreqScale::Log => "log token count",
        },
        match opts.var_source {
            pooling_core::analysis::VarSource::Observed => "observed between-context variance of observed p",
            pooling_core::analysis::VarSource::Generating => "generating variance s^2",
        },
        match cfg.shrinkage.scale {
            pooling_core::shrinkage::PoolingScale::Logit => "logit",
            pooling_core::shrinkage::PoolingScale::Probability => "probability",
        },
        cfg.shrinkage.sigma2_within
    ));
    a.notes.push("truth correlation: Pearson r on probabilities".into());
    a.notes.extend(data.gaps.iter().cloned());

    let rows = build_design(&data.predictions, &data.datasets, opts)?;
    // pooling ranges bucket contexts by raw token count regardless of the
    // regression's frequency scale
    let raw_rows = if opts.freq_scale == FreqScale::Raw {
        rows.clone()
    } else {
        build_design(&data.predictions, &data.datasets, DesignOptions { freq_scale: FreqScale::Raw, ..opts })?
    };
    let conditions = data.conditions();
    let sources = [Source::Hier, Source::Shrinkage, Source::Lm];
    for s in sources {
        if !data.has(s) {
            a.notes.push(format!("{s}: no predictions; {s} sections absent"));
        }
    }

    for source in sources {
        for cond in &conditions {
            let subset: Vec<DesignRow> =
                rows.iter().filter(|r| r.source == source && &r.condition == cond).cloned().collect();
            if subset.is_empty() {
                continue;
            }
            match truth_correlation(&subset) {
                Ok(c) => {
                    a.correlation_summary.extend(summarize_correlations(&c).into_iter().map(|s| {
                        CorrelationSummaryRow {
                            condition: cond.clone(),
                            source: s.source,
                            epoch: s.epoch,
                            mean_r: s.mean_r,
                            sd_r: s.sd_r,
                            replications: s.replications,
                        }
                    }));
                    a.correlations.extend(c);
                }
                Err(e) => a.notes.push(format!("truth correlation skipped for {source} {cond}: {e}")),
            }
        }
    }
    a.best_epochs = best_epochs(&a.correlation_summary);
    let epoch_of = |source: Source, cond: &str| -> Option<u32> {
        match source {
            Source::Lm => a.best_epochs.iter().find(|b| b.condition == cond).map(|b| b.epoch),
            _ => Some(0),
        }
    };

    let mut coefficients = Vec::new();
    let mut type_freq = Vec::new();
    let mut notes = Vec::new();
    for ts in &term_sets {
        for source in sources {
            let cells: Vec<(String, Vec<DesignRow>, u32)> = if ts.name == "variance" {
                // variance differs across conditions; stack every condition,
                // each at its own reporting epoch
                let mut pooled = Vec::new();
                let mut epochs = Vec::new();
                for cond in &conditions {
                    if let Some(e) = epoch_of(source, cond) {
                        pooled.extend(select(&rows, source, cond, e));
                        epochs.push(e);
                    }
                }
                epochs.sort_unstable();
                epochs.dedup();
                // 0 marks a stack of different per-condition epochs
                let e = if epochs.len() == 1 { epochs[0] } else { 0 };
                if epochs.len() > 1 {
                    notes.push(format!("{source} variance fit stacks per-condition best epochs {epochs:?}"));
                }
                vec![(POOLED.to_string(), pooled, e)]
            } else {
                conditions
                    .iter()
                    .filter_map(|c| epoch_of(source, c).map(|e| (c.clone(), select(&rows, source, c, e), e)))
                    .collect()
            };
            for (cond, subset, epoch) in cells {
                if subset.is_empty() {
                    continue;
                }
                if ts.name == "main" {
                    match fits_by_type_frequency(&subset, ts) {
                        Ok(fits) => {
                            for (tf, f) in fits {
                                type_freq.extend(f.fit.coefficients.iter().map(|c| TypeFreqRow {
                                    source,
                                    condition: cond.clone(),
                                    epoch,
                                    type_freq: tf,
                                    term: c.term.clone(),
                                    estimate: c.estimate,
                                    se: c.standard_error,
                                    p: c.p_value,
                                }));
                            }
                        }
                        Err(e) => notes.push(format!("type-frequency fit skipped for {source} {cond}: {e}")),
                    }
                    continue;
                }
                match fit_terms(&subset, ts) {
                    Ok(f) => coefficients.extend(coef_rows(&f, &ts.name, source, &cond, epoch)),
                    Err(e) => notes.push(format!("{} fit skipped for {source} {cond}: {e}", ts.name)),
                }
            }
        }
    }
    a.coefficients = coefficients;
    a.type_freq = type_freq;
    a.notes.extend(notes);
    if a.coefficients.iter().any(|c| c.squeezed) {
        a.notes.push("some responses were squeezed into (0, 1) before fitting".into());
    }

    let frequency = TermSet::frequency();
    for cond in &conditions {
        let lm: Vec<DesignRow> =
            rows.iter().filter(|r| r.source == Source::Lm && &r.condition == cond).cloned().collect();
        if lm.is_empty() {
            continue;
        }
        match pooling_trajectory(&lm, &frequency) {
            Ok(t) => a.trajectory.extend(t.rows(Source::Lm, cond)),
            Err(e) => a.notes.push(format!("trajectory skipped for {cond}: {e}")),
        }
        a.spread.extend(within_group_spread(&lm).into_iter().map(|(epoch, spread)| SpreadRow {
            condition: cond.clone(),
            epoch,
            spread,
        }));
    }

    let buckets = &cfg.analyses.buckets;
    for cond in &conditions {
        let subset: Vec<DesignRow> = raw_rows
            .iter()
            .filter(|r| &r.condition == cond && r.source != Source::Shrinkage)
            .cloned()
            .collect();
        let (ranges, range_notes) = pooling_range(&subset, buckets);
        if !range_notes.is_empty() {
            a.notes.push(format!("{cond}: {} empty frequency buckets omitted from pooling ranges", range_notes.len()));
        }
        a.range_summary.extend(summarize_ranges(&ranges).into_iter().map(|s| RangeSummaryRow {
            condition: cond.clone(),
            source: s.source,
            epoch: s.epoch,
            group: s.group,
            bucket: s.bucket,
            mean_range: s.mean_range,
            datasets: s.datasets,
        }));
        a.ranges.extend(ranges);
    }

    let mut loss: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
    for l in &data.losses {
        loss.entry((l.condition.clone(), l.record.epoch)).or_default().push(l.record.loss);
    }
    a.losses = loss
        .into_iter()
        .map(|((condition, epoch), v)| LossSummaryRow {
            condition,
            epoch,
            mean_loss: v.iter().sum::<f64>() / v.len() as f64,
            replications: v.len(),
        })
        .collect();
    Ok(a)
}

fn save<T: Serialize>(dir: &Path, name: &str, rows: &[T], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    fs::write(&path, buf).at(&path)?;
    written.push(path);
    Ok(())
}

/// Writes every analysis table as CSV plus the notes, and returns the paths
/// written. An empty table yields an empty file.
pub fn write_analysis(a: &Analysis, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).at(dir)?;
    let mut w = Vec::new();
    save(dir, COEFFICIENTS_CSV, &a.coefficients, &mut w)?;
    save(dir, TYPE_FREQ_CSV, &a.type_freq, &mut w)?;
    save(dir, TRAJECTORY_CSV, &a.trajectory, &mut w)?;
    save(dir, CORRELATIONS_CSV, &a.correlations, &mut w)?;
    save(dir, CORRELATION_SUMMARY_CSV, &a.correlation_summary, &mut w)?;
    save(dir, RANGES_CSV, &a.ranges, &mut w)?;
    save(dir, RANGE_SUMMARY_CSV, &a.range_summary, &mut w)?;
    save(dir, SPREAD_CSV, &a.spread, &mut w)?;
    save(dir, BEST_EPOCH_CSV, &a.best_epochs, &mut w)?;
    save(dir, LOSS_SUMMARY_CSV, &a.losses, &mut w)?;
    let path = dir.join(NOTES_TXT);
    let mut text = a.notes.join("\n");
    text.push('\n');
    fs::write(&path, text).at(&path)?;
    w.push(path);
    Ok(w)
}
