//! Maximum-likelihood beta regression with a logit mean link and constant
//! precision.
//!
//! `y_i ~ Beta(mu_i * phi, (1 - mu_i) * phi)`, `logit(mu_i) = x_i' beta`.
//! The search runs over `(beta, log phi)` with Newton steps on the analytic
//! observed information, damped toward gradient ascent when the Hessian is
//! not negative definite, and step-halving so the log-likelihood never
//! decreases. Starting values come from least squares on `logit(y)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, inv_logit, ln_gamma, logit, normal_two_sided_p, trigamma};

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaRegSpec {
    /// Names of the design columns, in order (excluding the intercept).
    pub terms: Vec<String>,
    pub include_intercept: bool,
    pub max_iterations: usize,
    /// Per-observation gradient tolerance: converged once the score norm
    /// falls below `tolerance * n`.
    pub tolerance: f64,
}

impl BetaRegSpec {
    pub fn new<S: Into<String>>(terms: impl IntoIterator<Item = S>) -> Self {
        Self {
            terms: terms.into_iter().map(Into::into).collect(),
            include_intercept: true,
            max_iterations: 200,
            tolerance: 1e-7,
        }
    }

    fn term_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.terms.len() + 1);
        if self.include_intercept {
            names.push(INTERCEPT.to_string());
        }
        names.extend(self.terms.iter().cloned());
        names
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub standard_error: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaRegFit {
    pub coefficients: Vec<Coefficient>,
    pub phi: f64,
    pub phi_se: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Log-likelihood after each accepted step, starting at the initial values.
    pub loglik_trace: Vec<f64>,
    pub n_obs: usize,
}

impl BetaRegFit {
    pub fn coef(&self, term: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.term == term)
    }

    pub fn rows(&self) -> Vec<FitRow> {
        self.coefficients
            .iter()
            .map(|c| FitRow {
                term: c.term.clone(),
                estimate: c.estimate,
                se: c.standard_error,
                z: c.z,
                p: c.p_value,
            })
            .collect()
    }
}

/// One line of the fit CSV: `term, estimate, se, z, p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

/// Maps `[0, 1]` into the open interval: `(y (n - 1) + 0.5) / n`.
pub fn squeeze_unit_interval(y: f64, n_obs: usize) -> f64 {
    let n = n_obs as f64;
    (y * (n - 1.0) + 0.5) / n
}

pub fn loglik_beta(y: f64, mu: f64, phi: f64) -> Result<f64> {
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::Domain(format!("beta response must lie in (0, 1), got {y}")));
    }
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Domain(format!("beta mean must lie in (0, 1), got {mu}")));
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::Domain(format!("beta precision must be positive, got {phi}")));
    }
    Ok(unchecked_loglik(y, mu, phi))
}

fn unchecked_loglik(y: f64, mu: f64, phi: f64) -> f64 {
    let a = mu * phi;
    let b = (1.0 - mu) * phi;
    ln_gamma(phi) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln()
}

const MU_EPS: f64 = 1e-12;

fn mean_of(eta: f64) -> f64 {
    inv_logit(eta).clamp(MU_EPS, 1.0 - MU_EPS)
}

/// Log-likelihood at `(beta, log phi)`.
pub fn total_loglik(x: &DMatrix<f64>, y: &[f64], theta: &DVector<f64>) -> f64 {
    let p = x.ncols();
    let phi = theta[p].exp();
    let beta = theta.rows(0, p);
    (0..x.nrows())
        .map(|i| {
            let eta = x.row(i).transpose().dot(&beta);
            unchecked_loglik(y[i], mean_of(eta), phi)
        })
        .sum()
}

/// Log-likelihood, gradient and Hessian with respect to `(beta, log phi)`.
pub fn loglik_derivatives(
    x: &DMatrix<f64>,
    y: &[f64],
    theta: &DVector<f64>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = x.ncols();
    let phi = theta[p].exp();
    let beta = theta.rows(0, p).into_owned();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p + 1);
    let mut hess = DMatrix::zeros(p + 1, p + 1);
    let psi_phi = digamma(phi);
    let tri_phi = trigamma(phi);
    for (i, &yi) in y.iter().enumerate() {
        let xi = x.row(i).transpose();
        let mu = mean_of(xi.dot(&beta));
        let a = mu * phi;
        let b = (1.0 - mu) * phi;
        let (ly, l1y) = (yi.ln(), (1.0 - yi).ln());
        let (psi_a, psi_b) = (digamma(a), digamma(b));
        let (tri_a, tri_b) = (trigamma(a), trigamma(b));
        let resid = (ly - l1y) - (psi_a - psi_b);
        let g = mu * (1.0 - mu);

        ll += ln_gamma(phi) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * ly + (b - 1.0) * l1y;
        let d_eta = phi * resid * g;
        let d2_eta = -phi * phi * (tri_a + tri_b) * g * g + phi * resid * g * (1.0 - 2.0 * mu);
        let d_phi = psi_phi - mu * psi_a - (1.0 - mu) * psi_b + mu * ly + (1.0 - mu) * l1y;
        let d2_phi = tri_phi - mu * mu * tri_a - (1.0 - mu) * (1.0 - mu) * tri_b;
        let d2_eta_phi = g * (resid - phi * (mu * tri_a - (1.0 - mu) * tri_b));

        for r in 0..p {
            grad[r] += d_eta * xi[r];
            for c in 0..=r {
                hess[(r, c)] += d2_eta * xi[r] * xi[c];
            }
            hess[(p, r)] += phi * d2_eta_phi * xi[r];
        }
        grad[p] += phi * d_phi;
        hess[(p, p)] += phi * phi * d2_phi + phi * d_phi;
    }
    for r in 0..=p {
        for c in 0..r {
            hess[(c, r)] = hess[(r, c)];
        }
    }
    (ll, grad, hess)
}

fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = max * 1e-10 * (x.nrows().max(x.ncols()) as f64);
    sv.iter().filter(|&&s| s > tol).count()
}

fn starting_values(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let z = DVector::from_iterator(n, y.iter().map(|&v| logit(v)));
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(&z, 1e-12).unwrap_or_else(|_| DVector::zeros(p));
    let fitted = x * &beta;
    let resid = &z - &fitted;
    let dof = (n as f64 - p as f64).max(1.0);
    let s2 = resid.dot(&resid) / dof;
    let mut phi_sum = 0.0;
    for i in 0..n {
        let mu = mean_of(fitted[i]);
        let g = mu * (1.0 - mu);
        // variance of y implied by the logit-scale residual variance
        let var_y = s2 * g * g;
        phi_sum += g / var_y;
    }
    let phi = (phi_sum / n as f64 - 1.0).clamp(1.0, 1e8);
    let mut theta = DVector::zeros(p + 1);
    theta.rows_mut(0, p).copy_from(&beta);
    theta[p] = phi.ln();
    theta
}

/// Fits the model. `design` holds the predictor columns without the
/// intercept; `spec.terms` names them. Responses must lie strictly in (0, 1).
pub fn betareg_fit(design: &DMatrix<f64>, y: &[f64], spec: &BetaRegSpec) -> Result<BetaRegFit> {
    if design.ncols() != spec.terms.len() {
        return Err(Error::Domain(format!(
            "{} design columns but {} term names",
            design.ncols(),
            spec.terms.len()
        )));
    }
    let names = spec.term_names();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Domain(format!("duplicate term name {n}")));
        }
    }
    if design.nrows() != y.len() {
        return Err(Error::Domain("design rows and responses differ in length".into()));
    }
    if let Some(v) = y.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain(format!("response {v} outside (0, 1); squeeze first")));
    }
    let x = if spec.include_intercept {
        let mut m = DMatrix::from_element(design.nrows(), design.ncols() + 1, 1.0);
        m.columns_mut(1, design.ncols()).copy_from(design);
        m
    } else {
        design.clone()
    };
    let p = x.ncols();
    if x.nrows() <= p {
        return Err(Error::RankDeficient { columns: p, rank: x.nrows() });
    }
    let rank = numerical_rank(&x);
    if rank < p {
        return Err(Error::RankDeficient { columns: p, rank });
    }

    let mut theta = starting_values(&x, y);
    let (mut ll, mut grad, mut hess) = loglik_derivatives(&x, y, &theta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let grad_tol = spec.tolerance * x.nrows() as f64;
    while iterations < spec.max_iterations {
        if grad.norm() < grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let direction = ascent_direction(&hess, &grad);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-14 {
            let cand = &theta + &direction * step;
            let cand_ll = total_loglik(&x, y, &cand);
            if cand_ll.is_finite() && cand_ll >= ll {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else { break };
        theta = next;
        (ll, grad, hess) = loglik_derivatives(&x, y, &theta);
        trace.push(ll);
    }
    if !converged && grad.norm() < grad_tol {
        converged = true;
    }

    let cov = Cholesky::new(-&hess).map(|c| c.inverse());
    let se = |i: usize| cov.as_ref().map_or(f64::NAN, |c| c[(i, i)].max(0.0).sqrt());
    let coefficients = names
        .into_iter()
        .enumerate()
        .map(|(i, term)| {
            let estimate = theta[i];
            let standard_error = se(i);
            let z = estimate / standard_error;
            Coefficient { term, estimate, standard_error, z, p_value: normal_two_sided_p(z) }
        })
        .collect();
    let phi = theta[p].exp();
    Ok(BetaRegFit {
        coefficients,
        phi,
        phi_se: phi * se(p),
        log_likelihood: ll,
        converged,
        iterations,
        gradient_norm: grad.norm(),
        loglik_trace: trace,
        n_obs: y.len(),
    })
}

/// Newton direction when `-H` is positive definite; otherwise a
/// Levenberg-damped one.
fn ascent_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let neg = -hess;
    let scale = neg.diagonal().iter().map(|v| v.abs()).filter(|v| v.is_finite()).fold(1e-8, f64::max);
    let mut lambda = 0.0;
    for _ in 0..40 {
        let mut m = neg.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += lambda;
        }
        if let Some(ch) = Cholesky::new(m) {
            return ch.solve(grad);
        }
        lambda = if lambda == 0.0 { 1e-6 * scale } else { lambda * 10.0 };
    }
    grad / scale
}
