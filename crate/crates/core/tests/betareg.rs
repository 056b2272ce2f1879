use nalgebra::DMatrix;
use pooling_core::betareg::*;
use pooling_core::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Independent log-likelihood built on statrs' log-gamma.
fn ref_loglik(x: &[f64], y: &[f64], b0: f64, b1: f64, phi: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let mu = sigmoid(b0 + b1 * xi);
            ln_gamma(phi) - ln_gamma(mu * phi) - ln_gamma((1.0 - mu) * phi)
                + (mu * phi - 1.0) * yi.ln()
                + ((1.0 - mu) * phi - 1.0) * (1.0 - yi).ln()
        })
        .sum()
}

fn simulate(n: usize, b0: f64, b1: f64, phi: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = x
        .iter()
        .map(|&xi| {
            let mu = sigmoid(b0 + b1 * xi);
            Beta::new(mu * phi, (1.0 - mu) * phi).unwrap().sample(&mut rng)
        })
        .collect();
    (x, y)
}

fn fit1(x: &[f64], y: &[f64]) -> BetaRegFit {
    betareg_fit(&DMatrix::from_column_slice(x.len(), 1, x), y, &BetaRegSpec::new(vec!["x".to_string()])).unwrap()
}

#[test]
fn matches_grid_search_on_twenty_points() {
    let (x, y) = simulate(20, 0.4, -1.2, 8.0, 17);
    let fit = fit1(&x, &y);
    assert!(fit.converged);

    // coarse grid, then two successively finer grids around the best point
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    let mut center = (0.0, 0.0, 2.0);
    let mut half = (4.0, 6.0, 3.0);
    for _ in 0..4 {
        let steps = 40;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let f = |c: f64, h: f64, t: usize| c - h + 2.0 * h * t as f64 / steps as f64;
                    let (b0, b1, lp) = (f(center.0, half.0, i), f(center.1, half.1, j), f(center.2, half.2, k));
                    let ll = ref_loglik(&x, &y, b0, b1, lp.exp());
                    if ll > best.0 {
                        best = (ll, b0, b1, lp);
                    }
                }
            }
        }
        center = (best.1, best.2, best.3);
        half = (half.0 / 8.0, half.1 / 8.0, half.2 / 8.0);
    }
    assert!((fit.log_likelihood - best.0).abs() < 0.01, "fit {} grid {}", fit.log_likelihood, best.0);
    let b = &fit.coefficients;
    assert!((b[0].estimate - best.1).abs() < 0.05 && (b[1].estimate - best.2).abs() < 0.05);
    assert!((fit.phi.ln() - best.3).abs() < 0.05);
}

#[test]
fn parametric_recovery() {
    let (x, y) = simulate(2000, -1.0, 2.0, 30.0, 2024);
    let fit = fit1(&x, &y);
    assert!(fit.converged);
    let (b0, b1) = (fit.coefficients[0].estimate, fit.coefficients[1].estimate);
    assert!((-1.15..=-0.85).contains(&b0), "b0 {b0}");
    assert!((1.85..=2.15).contains(&b1), "b1 {b1}");
    assert!((25.0..=35.0).contains(&fit.phi), "phi {}", fit.phi);
}

#[test]
fn log_density_matches_log_gamma_reference() {
    let (y, mu, phi) = (0.3f64, 0.6f64, 5.0f64);
    let want = ln_gamma(phi) - ln_gamma(mu * phi) - ln_gamma((1.0 - mu) * phi)
        + (mu * phi - 1.0) * y.ln()
        + ((1.0 - mu) * phi - 1.0) * (1.0 - y).ln();
    assert!((loglik_beta(y, mu, phi).unwrap() - want).abs() < 1e-10);
}

#[test]
fn optimizer_invariants() {
    let (x, y) = simulate(300, 0.2, 1.5, 12.0, 5);
    let fit = fit1(&x, &y);
    assert!(fit.converged);
    assert!(fit.gradient_norm < 1e-7 * 300.0);
    assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0]));
    assert!((fit.loglik_trace.last().unwrap() - fit.log_likelihood).abs() < 1e-12);
    assert!(fit.phi > 0.0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    for c in &fit.coefficients {
        assert!((0.0..=1.0).contains(&c.p_value));
        assert!((c.z - c.estimate / c.standard_error).abs() < 1e-12);
        let p = 2.0 * (1.0 - normal.cdf(c.z.abs()));
        assert!((c.p_value - p).abs() < 1e-9);
    }
}

#[test]
fn wald_test_is_symmetric_in_sign() {
    let (x, y) = simulate(300, 0.2, 1.5, 12.0, 6);
    let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let (a, b) = (fit1(&x, &y), fit1(&x, &flipped));
    for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((ca.estimate + cb.estimate).abs() < 1e-6);
        assert!((ca.z + cb.z).abs() < 1e-4);
        assert!((ca.p_value - cb.p_value).abs() < 1e-6);
    }
}

#[test]
fn column_permutation_permutes_coefficients() {
    let mut rng = rng_from_seed(8);
    let n = 400;
    let x1: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mu = sigmoid(-0.3 + 1.1 * x1[i] - 0.7 * x2[i]);
            Beta::new(mu * 20.0, (1.0 - mu) * 20.0).unwrap().sample(&mut rng)
        })
        .collect();
    let mut cols = x1.clone();
    cols.extend_from_slice(&x2);
    let a = betareg_fit(&DMatrix::from_column_slice(n, 2, &cols), &y, &BetaRegSpec::new(vec!["a".to_string(), "b".to_string()])).unwrap();
    let mut swapped = x2.clone();
    swapped.extend_from_slice(&x1);
    let b = betareg_fit(&DMatrix::from_column_slice(n, 2, &swapped), &y, &BetaRegSpec::new(vec!["b".to_string(), "a".to_string()])).unwrap();
    for name in ["(Intercept)", "a", "b"] {
        let (ca, cb) = (a.coef(name).unwrap(), b.coef(name).unwrap());
        assert!((ca.estimate - cb.estimate).abs() < 1e-6, "{name}");
        assert!((ca.standard_error - cb.standard_error).abs() < 1e-6, "{name}");
    }
}

#[test]
fn intercept_only_half() {
    let y = vec![0.5; 30];
    let fit = betareg_fit(&DMatrix::zeros(30, 0), &y, &BetaRegSpec::new(Vec::<String>::new())).unwrap();
    assert!(fit.coefficients[0].estimate.abs() < 1e-6);
}

proptest! {
    #[test]
    fn reflection_symmetry(y in 0.001f64..0.999, mu in 0.001f64..0.999, phi in 0.1f64..200.0) {
        let a = loglik_beta(y, mu, phi).unwrap();
        let b = loglik_beta(1.0 - y, 1.0 - mu, phi).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn squeeze_stays_inside(y in 0.0f64..=1.0, n in 1usize..100_000) {
        let v = squeeze_unit_interval(y, n);
        prop_assert!(v > 0.0 && v < 1.0);
    }
}
