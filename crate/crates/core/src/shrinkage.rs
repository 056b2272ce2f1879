//! Closed-form adaptive partial pooling.
//!
//! A context-level estimate `alpha_cx` and a group-level estimate `alpha_w`
//! are blended with precision weights `n / sigma2_within` and
//! `1 / sigma2_between`. Only the ratio `n * sigma2_between / sigma2_within`
//! matters, so the weight is computed from that ratio directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langgen::{ContextId, Group, GroupStats, ObservedContext};
use crate::special::{inv_logit, logit};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolingInputs {
    pub alpha_cx: f64,
    pub alpha_w: f64,
    pub n: f64,
    pub sigma2_within: f64,
    /// May be `f64::INFINITY` for the no-pooling limit.
    pub sigma2_between: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolingEstimate {
    pub pooled_alpha: f64,
    pub weight_context: f64,
    pub weight_group: f64,
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons also reject NaN
pub fn pool_estimate(inp: &PoolingInputs) -> Result<PoolingEstimate> {
    let PoolingInputs { alpha_cx, alpha_w, n, sigma2_within, sigma2_between } = *inp;
    if !(sigma2_within > 0.0) || !(n >= 0.0) || !(sigma2_between >= 0.0) {
        return Err(Error::Domain(format!(
            "pooling needs n >= 0, sigma2_within > 0, sigma2_between >= 0 (got {n}, {sigma2_within}, {sigma2_between})"
        )));
    }
    let weight_context = if sigma2_between.is_infinite() {
        if n == 0.0 {
            return Err(Error::PoolingUndefined);
        }
        1.0
    } else {
        let ratio = n * sigma2_between / sigma2_within;
        if ratio.is_infinite() {
            1.0
        } else {
            ratio / (ratio + 1.0)
        }
    };
    let weight_group = 1.0 - weight_context;
    let pooled = if weight_context == 1.0 {
        alpha_cx
    } else if weight_context == 0.0 {
        alpha_w
    } else {
        let lo = alpha_cx.min(alpha_w);
        let hi = alpha_cx.max(alpha_w);
        (weight_context * alpha_cx + weight_group * alpha_w).clamp(lo, hi)
    };
    Ok(PoolingEstimate { pooled_alpha: pooled, weight_context, weight_group })
}

/// The scale on which estimates are pooled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingScale {
    #[default]
    Logit,
    Probability,
}

/// Add-half smoothing of a binomial proportion: `(a + 0.5) / (n + 1)`.
pub fn smoothed_p(count_a: f64, n: f64) -> f64 {
    (count_a + 0.5) / (n + 1.0)
}

/// Method-of-moments between-context variance on the logit scale.
///
/// `contexts` holds `(observed_p, n)`. The spread of smoothed logits minus the
/// mean binomial sampling variance `1 / (n p (1 - p))`, clamped at zero.
pub fn estimate_between_variance(contexts: &[(f64, usize)]) -> Result<f64> {
    estimate_between_variance_on(contexts, PoolingScale::Logit)
}

pub fn estimate_between_variance_on(contexts: &[(f64, usize)], scale: PoolingScale) -> Result<f64> {
    if contexts.len() < 2 {
        return Err(Error::BetweenVarianceUndefined(contexts.len()));
    }
    let k = contexts.len() as f64;
    let mut terms: Vec<(f64, f64)> = contexts
        .iter()
        .map(|&(p, n)| {
            let n = n as f64;
            let ps = smoothed_p(p * n, n);
            match scale {
                PoolingScale::Logit => (logit(ps), 1.0 / (n * ps * (1.0 - ps))),
                PoolingScale::Probability => (p, ps * (1.0 - ps) / n),
            }
        })
        .collect();
    // sorted so the result does not depend on context order
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = terms.iter().map(|t| t.0).sum::<f64>() / k;
    let var = terms.iter().map(|t| (t.0 - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let sampling = terms.iter().map(|t| t.1).sum::<f64>();
    Ok((var - sampling / k).max(0.0))
}

/// One row of the shrinkage CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkRow {
    pub context_id: ContextId,
    pub group: Group,
    pub n: usize,
    pub observed_p: f64,
    pub pooled_p: f64,
    pub weight_context: f64,
}

/// Pools every context toward its group.
pub fn shrink_all(
    contexts: &[ObservedContext],
    groups: &[GroupStats; 2],
    sigma2_within: f64,
    scale: PoolingScale,
) -> Result<Vec<ShrinkRow>> {
    let mut group_params = [(0.0, 0.0); 2];
    for g in groups {
        let members: Vec<(f64, usize)> = contexts
            .iter()
            .filter(|c| c.group == g.group)
            .map(|c| (c.observed_p, c.n))
            .collect();
        if members.is_empty() {
            continue;
        }
        let sigma2_between = estimate_between_variance_on(&members, scale)?;
        let gp = smoothed_p(g.count_a as f64, g.token_freq as f64);
        let alpha_w = match scale {
            PoolingScale::Logit => logit(gp),
            PoolingScale::Probability => g.group_p,
        };
        group_params[g.group.index()] = (alpha_w, sigma2_between);
    }
    contexts
        .iter()
        .map(|c| {
            let (alpha_w, sigma2_between) = group_params[c.group.index()];
            let alpha_cx = match scale {
                PoolingScale::Logit => logit(smoothed_p(c.count_a as f64, c.n as f64)),
                PoolingScale::Probability => c.observed_p,
            };
            let est = pool_estimate(&PoolingInputs {
                alpha_cx,
                alpha_w,
                n: c.n as f64,
                sigma2_within,
                sigma2_between,
            })?;
            let pooled_p = match scale {
                PoolingScale::Logit => inv_logit(est.pooled_alpha),
                PoolingScale::Probability => est.pooled_alpha,
            };
            Ok(ShrinkRow {
                context_id: c.context_id,
                group: c.group,
                n: c.n,
                observed_p: c.observed_p,
                pooled_p,
                weight_context: est.weight_context,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inp(n: f64, s2b: f64) -> PoolingInputs {
        PoolingInputs { alpha_cx: 0.8, alpha_w: 0.2, n, sigma2_within: 1.0, sigma2_between: s2b }
    }

    #[test]
    fn zero_frequency_takes_group_estimate() {
        let e = pool_estimate(&inp(0.0, 1.0)).unwrap();
        assert_eq!(e.pooled_alpha, 0.2);
        assert_eq!(e.weight_group, 1.0);
    }

    #[test]
    fn infinite_between_variance_takes_context_estimate() {
        let e = pool_estimate(&inp(3.0, f64::INFINITY)).unwrap();
        assert_eq!(e.pooled_alpha, 0.8);
        assert_eq!(e.weight_group, 0.0);
    }

    #[test]
    fn hand_evaluated_blend() {
        let e = pool_estimate(&inp(4.0, 1.0)).unwrap();
        assert!((e.pooled_alpha - 0.68).abs() < 1e-12);
        assert!((e.weight_context - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_between_variance_is_complete_pooling() {
        assert_eq!(pool_estimate(&inp(1e9, 0.0)).unwrap().pooled_alpha, 0.2);
    }

    #[test]
    fn undefined_pooling() {
        assert!(matches!(pool_estimate(&inp(0.0, f64::INFINITY)), Err(Error::PoolingUndefined)));
        assert!(pool_estimate(&PoolingInputs { sigma2_within: 0.0, ..inp(1.0, 1.0) }).is_err());
    }

    #[test]
    fn between_variance_edge_cases() {
        let v = estimate_between_variance(&[(0.5, 1_000_000), (0.5, 1_000_000)]).unwrap();
        assert!(v.abs() < 1e-9);
        assert!(matches!(
            estimate_between_variance(&[(0.5, 10)]),
            Err(Error::BetweenVarianceUndefined(1))
        ));
    }

    fn ctx(id: u32, g: Group, n: usize, a: usize) -> ObservedContext {
        ObservedContext { context_id: ContextId(id), group: g, n, count_a: a, observed_p: a as f64 / n as f64 }
    }

    #[test]
    fn clamped_group_pools_completely() {
        let contexts = vec![ctx(1, Group::X, 40, 20), ctx(2, Group::X, 40, 20), ctx(3, Group::X, 40, 20)];
        let groups = crate::langgen::Group::BOTH.map(|g| crate::langgen::group_stats(g, &contexts));
        let rows = shrink_all(&contexts, &groups, 1.0, PoolingScale::Logit).unwrap();
        for r in rows {
            assert!((r.pooled_p - smoothed_p(60.0, 120.0)).abs() < 1e-12);
            assert_eq!(r.weight_context, 0.0);
        }
    }

    #[test]
    fn frequent_context_stays_closer_to_its_own_estimate() {
        let contexts = vec![
            ctx(1, Group::X, 200, 180),
            ctx(2, Group::X, 1, 1),
            ctx(3, Group::X, 50, 5),
            ctx(4, Group::X, 30, 15),
        ];
        let groups = Group::BOTH.map(|g| crate::langgen::group_stats(g, &contexts));
        let rows = shrink_all(&contexts, &groups, 1.0, PoolingScale::Logit).unwrap();
        let big = &rows[0];
        let small = &rows[1];
        assert!(big.weight_context > small.weight_context);
        assert!((big.pooled_p - 0.9).abs() < (small.pooled_p - 1.0).abs());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn convex_and_monotone(
            a in -10.0f64..10.0, w in -10.0f64..10.0,
            n in 0.0f64..1e4, dn in 0.0f64..100.0,
            s2w in 1e-3f64..10.0, s2b in 1e-3f64..10.0,
        ) {
            let base = PoolingInputs { alpha_cx: a, alpha_w: w, n, sigma2_within: s2w, sigma2_between: s2b };
            let e = pool_estimate(&base).unwrap();
            prop_assert!(e.pooled_alpha >= a.min(w) && e.pooled_alpha <= a.max(w));
            prop_assert!((e.weight_context + e.weight_group - 1.0).abs() < 1e-12);
            let more = pool_estimate(&PoolingInputs { n: n + dn, ..base }).unwrap();
            prop_assert!(more.weight_context >= e.weight_context);
        }

        #[test]
        fn depends_only_on_precision_ratio(
            a in -5.0f64..5.0, w in -5.0f64..5.0,
            n in 0.5f64..500.0, s2w in 0.1f64..5.0, s2b in 0.1f64..5.0,
            c in 0.1f64..10.0, d in 0.1f64..10.0,
        ) {
            let x = pool_estimate(&PoolingInputs { alpha_cx: a, alpha_w: w, n, sigma2_within: s2w, sigma2_between: s2b }).unwrap();
            // n*c, s2w*c*d, s2b*d preserves n*s2b/s2w
            let y = pool_estimate(&PoolingInputs { alpha_cx: a, alpha_w: w, n: n * c, sigma2_within: s2w * c * d, sigma2_between: s2b * d }).unwrap();
            prop_assert!((x.pooled_alpha - y.pooled_alpha).abs() < 1e-9);
        }

        #[test]
        fn between_variance_nonnegative_and_order_free(
            rows in proptest::collection::vec((0usize..=30, 1usize..=30), 2..40),
            seed in any::<u64>(),
        ) {
            let data: Vec<(f64, usize)> = rows.iter().map(|&(a, n)| ((a.min(n)) as f64 / n as f64, n)).collect();
            let v = estimate_between_variance(&data).unwrap();
            prop_assert!(v >= 0.0);
            let mut shuffled = data.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut crate::rng::rng_from_seed(seed));
            prop_assert_eq!(v, estimate_between_variance(&shuffled).unwrap());
        }
    }
}
