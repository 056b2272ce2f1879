//! MCMC diagnostics: split R-hat and an autocorrelation-based ESS.
//!
//! ESS follows the multi-chain estimator with Geyer's initial monotone
//! sequence truncation. Autocovariances are computed lag by lag and the loop
//! stops at the first non-positive pair, so well-mixing chains cost only a
//! few passes over the draws.

/// Split R-hat: each chain is halved, giving 2M sequences.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        if c.len() < 4 {
            return f64::NAN;
        }
        let mid = c.len() / 2;
        halves.push(&c[..mid]);
        halves.push(&c[c.len() - mid..]);
    }
    if halves.len() < 2 {
        return f64::NAN;
    }
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = means.iter().sum::<f64>() / m;
    let between = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if within <= 1e-300 {
        // constant chains: converged iff they agree
        return if between <= 1e-300 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    if m == 0 {
        return f64::NAN;
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap();
    if n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| {
                (0..n - lag).map(|i| (c[i] - mu) * (c[i + lag] - mu)).sum::<f64>() / nf
            })
            .sum::<f64>()
            / m as f64
    };
    let acov0 = acov(0);
    let mean_var = acov0 * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        var_plus += means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    }
    if var_plus <= 1e-300 {
        return (m * n) as f64;
    }
    let rho = |a: f64| 1.0 - (mean_var - a) / var_plus;

    let mut tau_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let r0 = if lag == 0 { rho(acov0) } else { rho(acov(lag)) };
        let r1 = rho(acov(lag + 1));
        let mut pair = r0 + r1;
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        prev_pair = pair;
        tau_sum += pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * tau_sum).max(1.0 / ((m * n) as f64).log10().max(1.0));
    (m * n) as f64 / tau
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sd(x: &[f64]) -> f64 {
    let mu = mean(x);
    (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ar1(seed: u64, n: usize, phi: f64, offset: f64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                x = phi * x + e;
                x + offset
            })
            .collect()
    }

    #[test]
    fn rhat_near_one_for_iid_chains() {
        let c: Vec<Vec<f64>> = (0..4).map(|s| ar1(s, 2000, 0.0, 0.0)).collect();
        let refs: Vec<&[f64]> = c.iter().map(|v| v.as_slice()).collect();
        let r = split_rhat(&refs);
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn rhat_flags_disagreeing_chains() {
        let c: Vec<Vec<f64>> = (0..4).map(|s| ar1(s, 2000, 0.0, s as f64)).collect();
        let refs: Vec<&[f64]> = c.iter().map(|v| v.as_slice()).collect();
        assert!(split_rhat(&refs) > 1.5);
    }

    #[test]
    fn ess_of_ar1_matches_theory() {
        // ESS/N for AR(1) is (1 - phi) / (1 + phi)
        let phi = 0.8;
        let c: Vec<Vec<f64>> = (0..4).map(|s| ar1(s + 10, 20_000, phi, 0.0)).collect();
        let refs: Vec<&[f64]> = c.iter().map(|v| v.as_slice()).collect();
        let expected = 80_000.0 * (1.0 - phi) / (1.0 + phi);
        let ess = effective_sample_size(&refs);
        assert!((ess / expected - 1.0).abs() < 0.15, "ess {ess} vs {expected}");
    }
}
