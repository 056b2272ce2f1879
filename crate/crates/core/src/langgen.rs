//! The artificial language: `{context} {X|Y} {A|B}`.
//!
//! Contexts are nested in two groups: contexts `1..=types_x` always precede
//! `X` and the remaining `types_y` contexts always precede `Y`. The log-odds
//! of `A` start at zero, move by `-b` after `X` and `+b` after `Y`, and each
//! context adds its own Normal(0, s²) effect. Context token frequencies follow
//! a Zipf rank-frequency law within each group.

use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Pcg64};
use crate::special::inv_logit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextId(pub u32);

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The penultimate token; doubles as the group a context belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    X,
    Y,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::X, Group::Y];

    /// Sum coding: X = -1, Y = +1.
    pub fn sign(self) -> f64 {
        match self {
            Group::X => -1.0,
            Group::Y => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Group::X => 0,
            Group::Y => 1,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::X => "X",
            Group::Y => "Y",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Final {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreqMatch {
    /// Both groups receive half of the token budget.
    #[default]
    EqualGroupTokens,
    /// Both groups have the same average tokens per type.
    EqualTokenTypeRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrammarSpec {
    pub b: f64,
    pub s: f64,
    pub types_x: usize,
    pub types_y: usize,
    pub n_strings: usize,
    pub zipf_exponent: f64,
    pub freq_match: FreqMatch,
    pub seed: u64,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        Self {
            b: 1.0,
            s: 1.0,
            types_x: 10,
            types_y: 100,
            n_strings: 1000,
            zipf_exponent: 1.0,
            freq_match: FreqMatch::EqualGroupTokens,
            seed: 0,
        }
    }
}

impl GrammarSpec {
    pub fn validate(&self) -> Result<()> {
        if self.types_x == 0 || self.types_y == 0 {
            return Err(Error::InvalidGrammar("both groups need at least one context type".into()));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidGrammar(format!("s must be finite and >= 0, got {}", self.s)));
        }
        if !self.b.is_finite() {
            return Err(Error::InvalidGrammar("b must be finite".into()));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::InvalidGrammar("zipf exponent must be finite and >= 0".into()));
        }
        if self.types_x + self.types_y > u32::MAX as usize {
            return Err(Error::InvalidGrammar("too many context types".into()));
        }
        Ok(())
    }

    pub fn total_types(&self) -> usize {
        self.types_x + self.types_y
    }

    pub fn types_in(&self, group: Group) -> usize {
        match group {
            Group::X => self.types_x,
            Group::Y => self.types_y,
        }
    }

    /// Context identities of a group, in id order. X owns `1..=types_x`.
    pub fn context_ids(&self, group: Group) -> impl Iterator<Item = ContextId> {
        let (start, len) = match group {
            Group::X => (1, self.types_x),
            Group::Y => (self.types_x + 1, self.types_y),
        };
        (start..start + len).map(|i| ContextId(i as u32))
    }

    pub fn group_of(&self, id: ContextId) -> Option<Group> {
        let i = id.0 as usize;
        if i >= 1 && i <= self.types_x {
            Some(Group::X)
        } else if i > self.types_x && i <= self.total_types() {
            Some(Group::Y)
        } else {
            None
        }
    }

    /// Token budgets `(x, y)` per the frequency-matching mode.
    pub fn token_budgets(&self) -> (usize, usize) {
        let n = self.n_strings;
        match self.freq_match {
            FreqMatch::EqualGroupTokens => (n / 2, n - n / 2),
            FreqMatch::EqualTokenTypeRatio => {
                let x = (n as f64 * self.types_x as f64 / self.total_types() as f64).round() as usize;
                (x, n - x)
            }
        }
    }
}

/// Zipf counts by rank for `types` types sharing `tokens` tokens.
///
/// Quotas `tokens * r^-exponent / Σ k^-exponent` are floored and the
/// leftover tokens go to the largest fractional remainders (ties to the
/// lower rank). Any type left at zero is lifted to one, taking the token
/// from the last of the currently largest counts, so the result is
/// non-increasing, sums to `tokens`, and has no empty type.
pub fn zipf_counts(types: usize, tokens: usize, exponent: f64) -> Result<Vec<usize>> {
    if types == 0 {
        return Err(Error::InvalidGrammar("zipf_counts needs at least one type".into()));
    }
    if tokens < types {
        return Err(Error::InsufficientTokens { types, tokens });
    }
    let weights: Vec<f64> = (1..=types).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| tokens as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..types).collect();
    // stable sort keeps lower ranks first among equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &i in order.iter().take(tokens - assigned) {
        counts[i] += 1;
    }
    for i in 0..types {
        if counts[i] == 0 {
            let max = *counts.iter().max().unwrap();
            let donor = counts.iter().rposition(|&c| c == max).unwrap();
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    Ok(counts)
}

/// Per-context generating parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextTruth {
    pub context_id: ContextId,
    pub group: Group,
    pub true_logodds: f64,
    pub true_p: f64,
}

/// Draws one Normal(0, s²) effect per context, X contexts first, in id order.
pub fn sample_context_effects(spec: &GrammarSpec, rng: &mut Pcg64) -> Vec<ContextTruth> {
    Group::BOTH
        .iter()
        .flat_map(|&g| spec.context_ids(g).map(move |id| (id, g)))
        .map(|(context_id, group)| {
            let e: f64 = rng.sample(StandardNormal);
            let true_logodds = group.sign() * spec.b + spec.s * e;
            ContextTruth { context_id, group, true_logodds, true_p: inv_logit(true_logodds) }
        })
        .collect()
}

/// One string of the language: `(context, penult, final)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangString {
    pub context_id: ContextId,
    pub penult: Group,
    pub last: Final,
}

/// Column order matches the contexts CSV:
/// `context_id, group, n, count_a, observed_p, true_logodds, true_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRow {
    pub context_id: ContextId,
    pub group: Group,
    pub n: usize,
    pub count_a: usize,
    pub observed_p: f64,
    pub true_logodds: f64,
    pub true_p: f64,
}

impl ContextRow {
    pub fn observed(&self) -> ObservedContext {
        ObservedContext {
            context_id: self.context_id,
            group: self.group,
            n: self.n,
            count_a: self.count_a,
            observed_p: self.observed_p,
        }
    }
}

/// Observed statistics of a context, without any generating truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedContext {
    pub context_id: ContextId,
    pub group: Group,
    pub n: usize,
    pub count_a: usize,
    pub observed_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: Group,
    pub type_freq: usize,
    pub token_freq: usize,
    pub count_a: usize,
    pub group_p: f64,
    /// Population variance of `observed_p` across the group's contexts.
    pub between_var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub spec: GrammarSpec,
    pub strings: Vec<LangString>,
    pub context_table: Vec<ContextRow>,
    pub group_stats: [GroupStats; 2],
}

/// A corpus with the generating truth stripped. Model fitting only ever sees this.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedCorpus {
    pub types_x: usize,
    pub types_y: usize,
    pub strings: Vec<LangString>,
    pub contexts: Vec<ObservedContext>,
    pub group_stats: [GroupStats; 2],
}

impl ObservedCorpus {
    pub fn from_strings(types_x: usize, types_y: usize, strings: Vec<LangString>) -> Result<Self> {
        let (contexts, group_stats) = tabulate(&strings)?;
        Ok(Self { types_x, types_y, strings, contexts, group_stats })
    }

    pub fn group(&self, group: Group) -> &GroupStats {
        &self.group_stats[group.index()]
    }
}

impl Corpus {
    pub fn observed(&self) -> ObservedCorpus {
        ObservedCorpus {
            types_x: self.spec.types_x,
            types_y: self.spec.types_y,
            strings: self.strings.clone(),
            contexts: self.context_table.iter().map(ContextRow::observed).collect(),
            group_stats: self.group_stats.clone(),
        }
    }

    pub fn truth(&self) -> Vec<ContextTruth> {
        self.context_table
            .iter()
            .map(|r| ContextTruth {
                context_id: r.context_id,
                group: r.group,
                true_logodds: r.true_logodds,
                true_p: r.true_p,
            })
            .collect()
    }

    pub fn group(&self, group: Group) -> &GroupStats {
        &self.group_stats[group.index()]
    }

    /// Recomputes the context and group tables from the raw strings, joining
    /// the stored truth by context id.
    pub fn context_stats(&self) -> Result<(Vec<ContextRow>, [GroupStats; 2])> {
        let (observed, groups) = tabulate(&self.strings)?;
        let rows = observed
            .into_iter()
            .map(|o| {
                let t = self
                    .context_table
                    .iter()
                    .find(|r| r.context_id == o.context_id)
                    .ok_or(Error::UnmatchedContext {
                        dataset: "corpus".into(),
                        context: o.context_id.0,
                    })?;
                Ok(ContextRow {
                    context_id: o.context_id,
                    group: o.group,
                    n: o.n,
                    count_a: o.count_a,
                    observed_p: o.observed_p,
                    true_logodds: t.true_logodds,
                    true_p: t.true_p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((rows, groups))
    }
}

/// Draws `n` Bernoulli(true_p) finals for each `(truth, n)` pair, in order.
pub fn sample_strings(plan: &[(ContextTruth, usize)], rng: &mut Pcg64) -> Vec<LangString> {
    let mut out = Vec::with_capacity(plan.iter().map(|(_, n)| n).sum());
    for (t, n) in plan {
        for _ in 0..*n {
            let u: f64 = rng.random();
            let last = if u < t.true_p { Final::A } else { Final::B };
            out.push(LangString { context_id: t.context_id, penult: t.group, last });
        }
    }
    out
}

pub fn generate_corpus(spec: &GrammarSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let truth = sample_context_effects(spec, &mut rng);
    let (budget_x, budget_y) = spec.token_budgets();

    let mut plan = Vec::with_capacity(truth.len());
    for (group, budget) in [(Group::X, budget_x), (Group::Y, budget_y)] {
        let counts = zipf_counts(spec.types_in(group), budget, spec.zipf_exponent)?;
        // Zipf ranks are re-drawn per corpus seed
        let mut by_rank: Vec<&ContextTruth> = truth.iter().filter(|t| t.group == group).collect();
        by_rank.shuffle(&mut rng);
        let mut assigned: Vec<(ContextTruth, usize)> =
            by_rank.into_iter().cloned().zip(counts).collect();
        assigned.sort_by_key(|(t, _)| t.context_id);
        plan.extend(assigned);
    }

    let mut strings = sample_strings(&plan, &mut rng);
    strings.shuffle(&mut rng);

    let (observed, group_stats) = tabulate(&strings)?;
    let context_table = observed
        .into_iter()
        .zip(&truth)
        .map(|(o, t)| {
            debug_assert_eq!(o.context_id, t.context_id);
            ContextRow {
                context_id: o.context_id,
                group: o.group,
                n: o.n,
                count_a: o.count_a,
                observed_p: o.observed_p,
                true_logodds: t.true_logodds,
                true_p: t.true_p,
            }
        })
        .collect();
    Ok(Corpus { spec: spec.clone(), strings, context_table, group_stats })
}

/// Context and group statistics from raw strings; contexts sorted by id.
pub fn tabulate(strings: &[LangString]) -> Result<(Vec<ObservedContext>, [GroupStats; 2])> {
    if strings.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut by_id: std::collections::BTreeMap<ContextId, (Group, usize, usize)> = Default::default();
    for s in strings {
        let e = by_id.entry(s.context_id).or_insert((s.penult, 0, 0));
        if e.0 != s.penult {
            return Err(Error::InvalidGrammar(format!(
                "context {} appears before both X and Y",
                s.context_id
            )));
        }
        e.1 += 1;
        if s.last == Final::A {
            e.2 += 1;
        }
    }
    let contexts: Vec<ObservedContext> = by_id
        .into_iter()
        .map(|(context_id, (group, n, count_a))| ObservedContext {
            context_id,
            group,
            n,
            count_a,
            observed_p: count_a as f64 / n as f64,
        })
        .collect();
    let groups = Group::BOTH.map(|g| group_stats(g, &contexts));
    Ok((contexts, groups))
}

pub fn group_stats(group: Group, contexts: &[ObservedContext]) -> GroupStats {
    let members: Vec<&ObservedContext> = contexts.iter().filter(|c| c.group == group).collect();
    let type_freq = members.len();
    let token_freq: usize = members.iter().map(|c| c.n).sum();
    let count_a: usize = members.iter().map(|c| c.count_a).sum();
    let group_p = if token_freq > 0 { count_a as f64 / token_freq as f64 } else { f64::NAN };
    let between_var = if type_freq > 0 {
        let mean = members.iter().map(|c| c.observed_p).sum::<f64>() / type_freq as f64;
        members.iter().map(|c| (c.observed_p - mean).powi(2)).sum::<f64>() / type_freq as f64
    } else {
        0.0
    };
    GroupStats { group, type_freq, token_freq, count_a, group_p, between_var }
}

/// Writes `context_id<TAB>penult<TAB>final` lines, no header.
pub fn write_corpus_tsv<W: Write>(strings: &[LangString], mut w: W) -> Result<()> {
    for s in strings {
        let last = match s.last {
            Final::A => "A",
            Final::B => "B",
        };
        writeln!(w, "{}\t{}\t{}", s.context_id, s.penult, last)?;
    }
    Ok(())
}

pub fn read_corpus_tsv<R: Read>(r: R) -> Result<Vec<LangString>> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').has_headers(false).from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let (id, penult, last): (u32, Group, Final) = rec?;
        out.push(LangString { context_id: ContextId(id), penult, last });
    }
    Ok(out)
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read, T: serde::de::DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: u32, g: Group, f: Final) -> LangString {
        LangString { context_id: ContextId(id), penult: g, last: f }
    }

    #[test]
    fn zipf_trivial_cases() {
        assert_eq!(zipf_counts(1, 500, 1.0).unwrap(), vec![500]);
        assert_eq!(zipf_counts(10, 500, 0.0).unwrap(), vec![50; 10]);
        assert!(matches!(zipf_counts(10, 9, 1.0), Err(Error::InsufficientTokens { .. })));
    }

    #[test]
    fn zipf_lifts_empty_tail() {
        let c = zipf_counts(100, 100, 2.0).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 100);
        assert!(c.iter().all(|&x| x == 1));
        let c = zipf_counts(50, 80, 1.5).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 80);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
        assert!(c.iter().all(|&x| x >= 1));
    }

    #[test]
    fn s_zero_effects_are_pure_group_effects() {
        let spec = GrammarSpec { s: 0.0, ..Default::default() };
        let t = sample_context_effects(&spec, &mut rng_from_seed(1));
        assert_eq!(t.len(), 110);
        for row in &t {
            match row.group {
                Group::Y => {
                    assert_eq!(row.true_logodds, 1.0);
                    assert!((row.true_p - 0.7311).abs() < 1e-4);
                }
                Group::X => assert!((row.true_p - 0.2689).abs() < 1e-4),
            }
        }
    }

    #[test]
    fn default_corpus_shape() {
        let c = generate_corpus(&GrammarSpec::default()).unwrap();
        assert_eq!(c.context_table.len(), 110);
        assert_eq!(c.strings.len(), 1000);
        assert_eq!(c.group(Group::X).token_freq, 500);
        assert_eq!(c.group(Group::Y).token_freq, 500);
        assert_eq!(c.group(Group::X).type_freq, 10);
        assert_eq!(c.group(Group::Y).type_freq, 100);
        assert!(c.context_table.iter().all(|r| r.n >= 1 && r.count_a <= r.n));
    }

    #[test]
    fn odd_budget_split() {
        let spec = GrammarSpec { n_strings: 1001, ..Default::default() };
        assert_eq!(spec.token_budgets(), (500, 501));
        let spec = GrammarSpec { freq_match: FreqMatch::EqualTokenTypeRatio, n_strings: 1100, ..Default::default() };
        let (x, y) = spec.token_budgets();
        assert_eq!((x, y), (100, 1000));
        assert!((y as f64 / 100.0 - x as f64 / 10.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_bernoulli() {
        let spec = GrammarSpec { s: 0.0, b: 1e3, types_x: 3, types_y: 3, n_strings: 60, ..Default::default() };
        let c = generate_corpus(&spec).unwrap();
        for r in c.context_table.iter().filter(|r| r.group == Group::Y) {
            assert_eq!(r.count_a, r.n);
        }
        for r in c.context_table.iter().filter(|r| r.group == Group::X) {
            assert_eq!(r.count_a, 0);
        }
    }

    #[test]
    fn tabulate_two_strings() {
        let (ctx, groups) = tabulate(&[s(1, Group::X, Final::A), s(1, Group::X, Final::B)]).unwrap();
        assert_eq!(ctx.len(), 1);
        assert_eq!(ctx[0].n, 2);
        assert_eq!(ctx[0].observed_p, 0.5);
        assert_eq!(groups[1].type_freq, 0);
        assert!(matches!(tabulate(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn between_var_is_population_variance() {
        let strings = [s(1, Group::X, Final::A), s(2, Group::X, Final::B)];
        let (_, groups) = tabulate(&strings).unwrap();
        assert_eq!(groups[0].between_var, 0.25);
    }

    #[test]
    fn context_crossing_groups_is_rejected() {
        assert!(tabulate(&[s(1, Group::X, Final::A), s(1, Group::Y, Final::A)]).is_err());
    }

    #[test]
    fn tsv_roundtrip() {
        let c = generate_corpus(&GrammarSpec { n_strings: 200, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_corpus_tsv(&c.strings, &mut buf).unwrap();
        assert!(std::str::from_utf8(&buf).unwrap().starts_with(&format!("{}\t", c.strings[0].context_id)));
        assert_eq!(read_corpus_tsv(&buf[..]).unwrap(), c.strings);
    }

    #[test]
    fn contexts_csv_header() {
        let c = generate_corpus(&GrammarSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&c.context_table, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("context_id,group,n,count_a,observed_p,true_logodds,true_p\n"));
        let back: Vec<ContextRow> = read_csv(&buf[..]).unwrap();
        assert_eq!(back, c.context_table);
    }
}
