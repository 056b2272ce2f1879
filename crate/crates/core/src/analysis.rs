//! Regression designs over inferred probabilities and the pooling metrics
//! built on them.
//!
//! Predictions from any estimator (transformer probes, hierarchical
//! regression, closed-form shrinkage) are joined to the per-dataset context
//! table, turned into design rows, and regressed with a beta regression on
//! group probability, observed probability and their interactions with
//! context frequency, between-context variance or type frequency.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::betareg::{betareg_fit, squeeze_unit_interval, BetaRegFit, BetaRegSpec};
use crate::error::{Error, Result};
use crate::langgen::{ContextId, ContextRow, Group, GroupStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Lm,
    Hier,
    Shrinkage,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Lm => "lm",
            Source::Hier => "hier",
            Source::Shrinkage => "shrinkage",
        })
    }
}

/// One inferred probability of `A` for one context.
///
/// `epoch` is the 1-based training epoch for transformer probes and 0 for
/// estimators without training dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub condition: String,
    pub replication: u32,
    pub epoch: u32,
    pub context_id: ContextId,
    pub inferred_p: f64,
    pub source: Source,
}

/// Everything known about one generated dataset, truth included.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub condition: String,
    pub replication: u32,
    /// Generating SD of the context effects.
    pub s: f64,
    pub contexts: Vec<ContextRow>,
    pub groups: [GroupStats; 2],
}

impl Dataset {
    fn key(&self) -> (&str, u32) {
        (&self.condition, self.replication)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqScale {
    #[default]
    Raw,
    Log,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarSource {
    /// Between-context variance of observed probabilities within the group.
    #[default]
    Observed,
    /// The generating variance s².
    Generating,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    pub freq_scale: FreqScale,
    pub var_source: VarSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub condition: String,
    pub replication: u32,
    pub epoch: u32,
    pub source: Source,
    pub context_id: ContextId,
    pub group: Group,
    pub inferred_p: f64,
    pub observed_p: f64,
    pub group_p: f64,
    pub freq: f64,
    pub between_var: f64,
    pub type_freq: f64,
    pub true_p: f64,
}

type ContextIndex<'a> = HashMap<(&'a str, u32), HashMap<ContextId, (&'a ContextRow, &'a Dataset)>>;

pub fn build_design(
    predictions: &[PredictionRow],
    datasets: &[Dataset],
    opts: DesignOptions,
) -> Result<Vec<DesignRow>> {
    let mut index: ContextIndex = HashMap::new();
    for d in datasets {
        let by_ctx = index.entry(d.key()).or_default();
        for c in &d.contexts {
            by_ctx.insert(c.context_id, (c, d));
        }
    }
    predictions
        .iter()
        .map(|p| {
            let (c, d) = index
                .get(&(p.condition.as_str(), p.replication))
                .and_then(|m| m.get(&p.context_id))
                .copied()
                .ok_or_else(|| Error::UnmatchedContext {
                    dataset: format!("{}/{}", p.condition, p.replication),
                    context: p.context_id.0,
                })?;
            let g = &d.groups[c.group.index()];
            let freq = match opts.freq_scale {
                FreqScale::Raw => c.n as f64,
                FreqScale::Log => (c.n as f64).ln(),
            };
            let between_var = match opts.var_source {
                VarSource::Observed => g.between_var,
                VarSource::Generating => d.s * d.s,
            };
            Ok(DesignRow {
                condition: p.condition.clone(),
                replication: p.replication,
                epoch: p.epoch,
                source: p.source,
                context_id: c.context_id,
                group: c.group,
                inferred_p: p.inferred_p,
                observed_p: c.observed_p,
                group_p: g.group_p,
                freq,
                between_var,
                type_freq: g.type_freq as f64,
                true_p: c.true_p,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Predictor {
    GroupP,
    ObservedP,
    Freq,
    Var,
    TypeFreq,
}

impl Predictor {
    pub fn name(self) -> &'static str {
        match self {
            Predictor::GroupP => "Group p",
            Predictor::ObservedP => "Observed p",
            Predictor::Freq => "Freq",
            Predictor::Var => "Var",
            Predictor::TypeFreq => "TypeFreq",
        }
    }

    fn value(self, r: &DesignRow) -> f64 {
        match self {
            Predictor::GroupP => r.group_p,
            Predictor::ObservedP => r.observed_p,
            Predictor::Freq => r.freq,
            Predictor::Var => r.between_var,
            Predictor::TypeFreq => r.type_freq,
        }
    }
}

/// A main effect or an interaction (elementwise product of predictors).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term(pub Vec<Predictor>);

impl Term {
    pub fn name(&self) -> String {
        self.0.iter().map(|p| p.name()).collect::<Vec<_>>().join(" : ")
    }

    pub fn value(&self, r: &DesignRow) -> f64 {
        self.0.iter().map(|p| p.value(r)).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSet {
    pub name: String,
    pub terms: Vec<Term>,
}

impl TermSet {
    /// Group p, Observed p and their interactions with context frequency.
    pub fn frequency() -> Self {
        use Predictor::*;
        Self {
            name: "frequency".into(),
            terms: vec![
                Term(vec![GroupP]),
                Term(vec![ObservedP]),
                Term(vec![GroupP, Freq]),
                Term(vec![ObservedP, Freq]),
            ],
        }
    }

    /// Group p, Observed p and their interactions with between-context variance.
    pub fn variance() -> Self {
        use Predictor::*;
        Self {
            name: "variance".into(),
            terms: vec![
                Term(vec![GroupP]),
                Term(vec![ObservedP]),
                Term(vec![GroupP, Var]),
                Term(vec![ObservedP, Var]),
            ],
        }
    }

    /// Main effects only; used within a single group.
    pub fn main_effects() -> Self {
        use Predictor::*;
        Self { name: "main".into(), terms: vec![Term(vec![GroupP]), Term(vec![ObservedP])] }
    }

    pub fn all() -> Vec<Self> {
        vec![Self::frequency(), Self::variance(), Self::main_effects()]
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "frequency" => Some(Self::frequency()),
            "variance" => Some(Self::variance()),
            "main" => Some(Self::main_effects()),
            _ => None,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.terms.iter().map(Term::name).collect()
    }
}

pub fn design_matrix(rows: &[DesignRow], terms: &TermSet) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), terms.terms.len(), |i, j| terms.terms[j].value(&rows[i]))
}

/// A beta regression of `inferred_p` on a term set.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseFit {
    pub fit: BetaRegFit,
    /// True when boundary responses forced squeezing into (0, 1).
    pub squeezed: bool,
}

pub fn fit_terms(rows: &[DesignRow], terms: &TermSet) -> Result<ResponseFit> {
    let x = design_matrix(rows, terms);
    let mut y: Vec<f64> = rows.iter().map(|r| r.inferred_p).collect();
    let squeezed = y.iter().any(|&v| v <= 0.0 || v >= 1.0);
    if squeezed {
        let n = y.len();
        y.iter_mut().for_each(|v| *v = squeeze_unit_interval(*v, n));
    }
    let fit = betareg_fit(&x, &y, &BetaRegSpec::new(terms.names()))?;
    Ok(ResponseFit { fit, squeezed })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochPoint {
    pub epoch: u32,
    pub n_rows: usize,
    pub fit: ResponseFit,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EpochTrajectory {
    pub term_set: String,
    /// Strictly increasing in epoch.
    pub points: Vec<EpochPoint>,
    pub correlations: Vec<CorrelationSummary>,
    pub ranges: Vec<RangeSummary>,
}

impl EpochTrajectory {
    pub fn coefficient(&self, term: &str) -> Vec<(u32, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.fit.fit.coef(term).map(|c| (p.epoch, c.estimate)))
            .collect()
    }

    pub fn at(&self, epoch: u32) -> Option<&EpochPoint> {
        self.points.iter().find(|p| p.epoch == epoch)
    }

    pub fn rows(&self, source: Source, condition: &str) -> Vec<TrajectoryRow> {
        self.points
            .iter()
            .flat_map(|p| {
                p.fit.fit.coefficients.iter().map(move |c| TrajectoryRow {
                    epoch: p.epoch,
                    term: c.term.clone(),
                    estimate: c.estimate,
                    se: c.standard_error,
                    p: c.p_value,
                    source,
                    condition: condition.to_string(),
                })
            })
            .collect()
    }
}

/// One beta regression per epoch over all stacked rows of that epoch.
pub fn pooling_trajectory(rows: &[DesignRow], terms: &TermSet) -> Result<EpochTrajectory> {
    let mut by_epoch: BTreeMap<u32, Vec<DesignRow>> = BTreeMap::new();
    for r in rows {
        by_epoch.entry(r.epoch).or_default().push(r.clone());
    }
    let points = by_epoch
        .into_iter()
        .map(|(epoch, rows)| Ok(EpochPoint { epoch, n_rows: rows.len(), fit: fit_terms(&rows, terms)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(EpochTrajectory { term_set: terms.name.clone(), points, ..Default::default() })
}

/// Robustness mode: fit each replication separately and average coefficients.
pub fn per_replication_average(rows: &[DesignRow], terms: &TermSet) -> Result<Vec<(String, f64)>> {
    let mut by_rep: BTreeMap<(String, u32), Vec<DesignRow>> = BTreeMap::new();
    for r in rows {
        by_rep.entry((r.condition.clone(), r.replication)).or_default().push(r.clone());
    }
    let fits = by_rep.values().map(|rs| fit_terms(rs, terms)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = fits[0].fit.coefficients.iter().map(|c| c.term.clone()).collect();
    Ok(names
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let m = fits.iter().map(|f| f.fit.coefficients[i].estimate).sum::<f64>() / fits.len() as f64;
            (n, m)
        })
        .collect())
}

/// One line of the trajectory CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub epoch: u32,
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub p: f64,
    pub source: Source,
    pub condition: String,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::UndefinedCorrelation("first vector".into()));
    }
    if syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("second vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Average ranks, ties sharing the mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// One line of the correlation CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub replication: u32,
    pub epoch: u32,
    pub r: f64,
    pub source: Source,
    pub condition: String,
}

type EpochKey = (Source, String, u32, u32);

fn group_by_dataset_epoch(rows: &[DesignRow]) -> BTreeMap<EpochKey, Vec<&DesignRow>> {
    let mut out: BTreeMap<EpochKey, Vec<&DesignRow>> = BTreeMap::new();
    for r in rows {
        out.entry((r.source, r.condition.clone(), r.replication, r.epoch)).or_default().push(r);
    }
    out
}

/// Pearson correlation of inferred with true probabilities, per dataset and epoch.
pub fn truth_correlation(rows: &[DesignRow]) -> Result<Vec<CorrelationRow>> {
    group_by_dataset_epoch(rows)
        .into_iter()
        .map(|((source, condition, replication, epoch), rs)| {
            let x: Vec<f64> = rs.iter().map(|r| r.inferred_p).collect();
            let y: Vec<f64> = rs.iter().map(|r| r.true_p).collect();
            Ok(CorrelationRow { replication, epoch, r: pearson(&x, &y)?, source, condition })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub source: Source,
    pub epoch: u32,
    pub mean_r: f64,
    pub sd_r: f64,
    pub replications: usize,
}

pub fn summarize_correlations(rows: &[CorrelationRow]) -> Vec<CorrelationSummary> {
    let mut by: BTreeMap<(Source, u32), Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry((r.source, r.epoch)).or_default().push(r.r);
    }
    by.into_iter()
        .map(|((source, epoch), v)| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            CorrelationSummary { source, epoch, mean_r: m, sd_r: sd, replications: v.len() }
        })
        .collect()
}

/// A context-frequency bucket, inclusive on both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqBucket {
    pub name: String,
    pub min_n: usize,
    /// `None` leaves the bucket open above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_n: Option<usize>,
}

impl FreqBucket {
    /// `n < 10` and `n > 30`.
    pub fn defaults() -> Vec<FreqBucket> {
        vec![
            FreqBucket { name: "low".into(), min_n: 1, max_n: Some(9) },
            FreqBucket { name: "high".into(), min_n: 31, max_n: None },
        ]
    }

    pub fn contains(&self, n: usize) -> bool {
        n >= self.min_n && self.max_n.is_none_or(|m| n <= m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeRow {
    pub condition: String,
    pub replication: u32,
    pub epoch: u32,
    pub source: Source,
    pub group: Group,
    pub bucket: String,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub range: f64,
}

/// Range of inferred probabilities per dataset, epoch, group and frequency
/// bucket. Empty buckets are skipped and reported in the returned notes.
/// `freq` must be on the raw scale.
pub fn pooling_range(rows: &[DesignRow], buckets: &[FreqBucket]) -> (Vec<RangeRow>, Vec<String>) {
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for ((source, condition, replication, epoch), rs) in group_by_dataset_epoch(rows) {
        for g in Group::BOTH {
            for b in buckets {
                let v: Vec<f64> = rs
                    .iter()
                    .filter(|r| r.group == g && b.contains(r.freq.round() as usize))
                    .map(|r| r.inferred_p)
                    .collect();
                if v.is_empty() {
                    notes.push(format!(
                        "empty bucket {} for group {g}, {source} {condition}/{replication} epoch {epoch}",
                        b.name
                    ));
                    continue;
                }
                let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                out.push(RangeRow {
                    condition: condition.clone(),
                    replication,
                    epoch,
                    source,
                    group: g,
                    bucket: b.name.clone(),
                    count: v.len(),
                    min,
                    max,
                    range: max - min,
                });
            }
        }
    }
    (out, notes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeSummary {
    pub source: Source,
    pub epoch: u32,
    pub group: Group,
    pub bucket: String,
    pub mean_range: f64,
    pub datasets: usize,
}

pub fn summarize_ranges(rows: &[RangeRow]) -> Vec<RangeSummary> {
    let mut by: BTreeMap<(Source, u32, Group, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry((r.source, r.epoch, r.group, r.bucket.clone())).or_default().push(r.range);
    }
    by.into_iter()
        .map(|((source, epoch, group, bucket), v)| RangeSummary {
            source,
            epoch,
            group,
            bucket,
            mean_range: v.iter().sum::<f64>() / v.len() as f64,
            datasets: v.len(),
        })
        .collect()
}

/// Standard deviation of inferred probabilities within each group, averaged
/// over groups and datasets, per epoch.
pub fn within_group_spread(rows: &[DesignRow]) -> Vec<(u32, f64)> {
    let mut by_epoch: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for ((_, _, _, epoch), rs) in group_by_dataset_epoch(rows) {
        for g in Group::BOTH {
            let v: Vec<f64> = rs.iter().filter(|r| r.group == g).map(|r| r.inferred_p).collect();
            if v.len() < 2 {
                continue;
            }
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt();
            by_epoch.entry(epoch).or_default().push(sd);
        }
    }
    by_epoch.into_iter().map(|(e, v)| (e, v.iter().sum::<f64>() / v.len() as f64)).collect()
}

/// Fits `terms` separately within each group (pooled over all datasets in
/// `rows`) and returns the fits keyed by group type frequency.
pub fn fits_by_type_frequency(rows: &[DesignRow], terms: &TermSet) -> Result<Vec<(usize, ResponseFit)>> {
    let mut by: BTreeMap<usize, Vec<DesignRow>> = BTreeMap::new();
    for r in rows {
        by.entry(r.type_freq as usize).or_default().push(r.clone());
    }
    by.into_iter().map(|(tf, rs)| Ok((tf, fit_terms(&rs, terms)?))).collect()
}

/// One-sided sign test: P(X >= successes) under Binomial(n, 1/2).
pub fn sign_test(successes: usize, n: usize) -> f64 {
    crate::special::binomial_half_upper_tail(successes, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langgen::{generate_corpus, GrammarSpec};

    fn dataset(seed: u64) -> Dataset {
        let c = generate_corpus(&GrammarSpec { seed, ..Default::default() }).unwrap();
        Dataset {
            condition: "c".into(),
            replication: seed as u32,
            s: 1.0,
            contexts: c.context_table.clone(),
            groups: c.group_stats.clone(),
        }
    }

    fn preds(d: &Dataset, f: impl Fn(&ContextRow, &GroupStats) -> f64) -> Vec<PredictionRow> {
        d.contexts
            .iter()
            .map(|c| PredictionRow {
                condition: d.condition.clone(),
                replication: d.replication,
                epoch: 1,
                context_id: c.context_id,
                inferred_p: f(c, &d.groups[c.group.index()]),
                source: Source::Hier,
            })
            .collect()
    }

    #[test]
    fn interaction_is_elementwise_product() {
        let r = DesignRow {
            condition: "c".into(),
            replication: 0,
            epoch: 1,
            source: Source::Lm,
            context_id: ContextId(1),
            group: Group::X,
            inferred_p: 0.5,
            observed_p: 0.8,
            group_p: 0.3,
            freq: 171.0,
            between_var: 0.1,
            type_freq: 10.0,
            true_p: 0.5,
        };
        let t = Term(vec![Predictor::GroupP, Predictor::Freq]);
        assert!((t.value(&r) - 51.3).abs() < 1e-12);
        assert_eq!(t.name(), "Group p : Freq");
    }

    #[test]
    fn design_rows_join_and_count() {
        let d = dataset(3);
        let rows = build_design(&preds(&d, |c, _| c.true_p), std::slice::from_ref(&d), DesignOptions::default()).unwrap();
        assert_eq!(rows.len(), 110);
        let mut tf: Vec<f64> = rows.iter().map(|r| r.type_freq).collect();
        tf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        tf.dedup();
        assert_eq!(tf, vec![10.0, 100.0]);
    }

    #[test]
    fn unmatched_context_is_an_error() {
        let d = dataset(3);
        let mut p = preds(&d, |c, _| c.true_p);
        p[0].context_id = ContextId(999);
        assert!(matches!(
            build_design(&p, &[d], DesignOptions::default()),
            Err(Error::UnmatchedContext { context: 999, .. })
        ));
    }

    #[test]
    fn correlation_identity_and_zero_variance() {
        let x = [0.1, 0.5, 0.3, 0.9];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&x, &[0.2; 4]).is_err());
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn range_metric() {
        let d = dataset(4);
        let rows = build_design(&preds(&d, |_, _| 0.4), std::slice::from_ref(&d), DesignOptions::default()).unwrap();
        let (r, _) = pooling_range(&rows, &FreqBucket::defaults());
        assert!(r.iter().all(|x| x.range == 0.0));

        let all = FreqBucket { name: "all".into(), min_n: 1, max_n: None };
        let mut rows = rows;
        for (i, row) in rows.iter_mut().enumerate().filter(|(_, r)| r.group == Group::Y) {
            row.inferred_p = if i % 2 == 0 { 0.05 } else { 0.95 };
        }
        let (r, notes) = pooling_range(&rows, &[all]);
        assert!(notes.is_empty());
        let y = r.iter().find(|x| x.group == Group::Y).unwrap();
        assert!((y.range - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_bucket_is_noted() {
        let d = dataset(5);
        let rows = build_design(&preds(&d, |c, _| c.true_p), &[d], DesignOptions::default()).unwrap();
        let none = FreqBucket { name: "huge".into(), min_n: 100_000, max_n: None };
        let (r, notes) = pooling_range(&rows, &[none]);
        assert!(r.is_empty());
        assert_eq!(notes.len(), 2);
    }
}
