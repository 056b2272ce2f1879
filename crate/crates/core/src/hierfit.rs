//! Hierarchical Bayesian logistic regression with a random intercept per
//! context and a fixed effect for the penult:
//!
//! ```text
//! logit P(A | ctx) = beta0 + beta_penult * code(group) + u_ctx
//! u_ctx ~ Normal(0, sigma_u²)
//! beta0, beta_penult ~ Normal(0, 5²);  sigma_u ~ HalfNormal(3)
//! ```
//!
//! The posterior is sampled by adaptive random-walk Metropolis over
//! `(beta0, beta_penult, log sigma_u, u_1..u_K)`. Besides single-coordinate
//! moves each sweep makes three blocked moves that follow the known ridges
//! of this posterior: shifting `beta0` against all `u`, shifting
//! `beta_penult` against `u * code`, and rescaling `sigma_u` jointly with `u`.
//! Step sizes are tuned during warmup toward an acceptance band and then
//! frozen.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{effective_sample_size, mean, sd, split_rhat};
use crate::error::{Error, Result};
use crate::langgen::{ContextId, Group, ObservedContext};
use crate::rng::{rng_from_seed, split_seed, streams, Pcg64};
use crate::special::{inv_logit, softplus};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenultCoding {
    /// X = -1, Y = +1, so `beta_penult` estimates the group effect `b`.
    #[default]
    SumPm1,
    /// X = 0, Y = 1.
    Treatment,
}

impl PenultCoding {
    pub fn code(self, g: Group) -> f64 {
        match (self, g) {
            (PenultCoding::SumPm1, g) => g.sign(),
            (PenultCoding::Treatment, Group::X) => 0.0,
            (PenultCoding::Treatment, Group::Y) => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierModelSpec {
    pub prior_sd_fixed: f64,
    pub prior_halfnormal_sd: f64,
    pub penult_coding: PenultCoding,
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept_band: (f64, f64),
    pub seed: u64,
    pub rhat_threshold: f64,
}

impl Default for HierModelSpec {
    fn default() -> Self {
        Self {
            prior_sd_fixed: 5.0,
            prior_halfnormal_sd: 3.0,
            penult_coding: PenultCoding::SumPm1,
            chains: 4,
            iterations: 6000,
            warmup: 3000,
            target_accept_band: (0.2, 0.45),
            seed: 0,
            rhat_threshold: 1.05,
        }
    }
}

impl HierModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::InvalidModel("need at least 2 chains".into()));
        }
        if self.warmup >= self.iterations {
            return Err(Error::InvalidModel("warmup must be shorter than iterations".into()));
        }
        if self.iterations - self.warmup < 4 {
            return Err(Error::InvalidModel("need at least 4 post-warmup draws".into()));
        }
        let (lo, hi) = self.target_accept_band;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidModel("acceptance band must satisfy 0 < lo < hi < 1".into()));
        }
        if !(self.prior_sd_fixed > 0.0 && self.prior_halfnormal_sd > 0.0) {
            return Err(Error::InvalidModel("prior scales must be positive".into()));
        }
        Ok(())
    }
}

/// Unconstrained parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct HierParams {
    pub beta0: f64,
    pub beta_penult: f64,
    pub log_sigma_u: f64,
    pub u: Vec<f64>,
}

impl HierParams {
    pub fn zeros(k: usize) -> Self {
        Self { beta0: 0.0, beta_penult: 0.0, log_sigma_u: 0.0, u: vec![0.0; k] }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.beta0, self.beta_penult, self.log_sigma_u];
        v.extend_from_slice(&self.u);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { beta0: v[0], beta_penult: v[1], log_sigma_u: v[2], u: v[3..].to_vec() }
    }
}

/// Per-context sufficient statistics as the sampler sees them.
#[derive(Clone, Copy, Debug)]
struct Cell {
    code: f64,
    n: f64,
    a: f64,
}

fn cells(contexts: &[ObservedContext], coding: PenultCoding) -> Vec<Cell> {
    contexts
        .iter()
        .map(|c| Cell { code: coding.code(c.group), n: c.n as f64, a: c.count_a as f64 })
        .collect()
}

#[inline]
fn cell_loglik(c: &Cell, eta: f64) -> f64 {
    c.a * eta - c.n * softplus(eta)
}

fn normal_lpdf(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd).powi(2)
}

fn half_normal_lpdf(x: f64, sd: f64) -> f64 {
    std::f64::consts::LN_2 + normal_lpdf(x, sd)
}

/// The pieces of the log posterior density, on the unconstrained scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogPosterior {
    pub loglik: f64,
    pub log_prior_fixed: f64,
    pub log_prior_u: f64,
    pub log_prior_sigma: f64,
    pub log_jacobian: f64,
}

impl LogPosterior {
    pub fn total(&self) -> f64 {
        self.loglik + self.log_prior_fixed + self.log_prior_u + self.log_prior_sigma + self.log_jacobian
    }
}

fn check_finite(theta: &HierParams, contexts: &[ObservedContext]) -> Result<()> {
    if theta.u.len() != contexts.len() {
        return Err(Error::InvalidModel(format!(
            "{} random intercepts for {} contexts",
            theta.u.len(),
            contexts.len()
        )));
    }
    if let Some(i) = theta.to_vec().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteParameter(i));
    }
    Ok(())
}

/// Log posterior density including all normalizing constants of the priors
/// and the Jacobian of the log transform of `sigma_u`. The likelihood is the
/// product of Bernoulli terms (no binomial coefficients).
pub fn log_posterior(
    theta: &HierParams,
    contexts: &[ObservedContext],
    spec: &HierModelSpec,
) -> Result<LogPosterior> {
    check_finite(theta, contexts)?;
    let sigma = theta.log_sigma_u.exp();
    let loglik = cells(contexts, spec.penult_coding)
        .iter()
        .zip(&theta.u)
        .map(|(c, u)| cell_loglik(c, theta.beta0 + theta.beta_penult * c.code + u))
        .sum();
    Ok(LogPosterior {
        loglik,
        log_prior_fixed: normal_lpdf(theta.beta0, spec.prior_sd_fixed)
            + normal_lpdf(theta.beta_penult, spec.prior_sd_fixed),
        log_prior_u: theta.u.iter().map(|&u| normal_lpdf(u, sigma)).sum(),
        log_prior_sigma: half_normal_lpdf(sigma, spec.prior_halfnormal_sd),
        log_jacobian: theta.log_sigma_u,
    })
}

/// Gradient of the total log posterior, in `HierParams::to_vec` order.
pub fn log_posterior_grad(
    theta: &HierParams,
    contexts: &[ObservedContext],
    spec: &HierModelSpec,
) -> Result<Vec<f64>> {
    check_finite(theta, contexts)?;
    let sigma2 = (2.0 * theta.log_sigma_u).exp();
    let v_fixed = spec.prior_sd_fixed.powi(2);
    let mut g = vec![0.0; 3 + contexts.len()];
    g[0] = -theta.beta0 / v_fixed;
    g[1] = -theta.beta_penult / v_fixed;
    g[2] = 1.0 - sigma2 / spec.prior_halfnormal_sd.powi(2);
    for (k, (c, &u)) in cells(contexts, spec.penult_coding).iter().zip(&theta.u).enumerate() {
        let eta = theta.beta0 + theta.beta_penult * c.code + u;
        let r = c.a - c.n * inv_logit(eta);
        g[0] += r;
        g[1] += r * c.code;
        g[3 + k] = r - u / sigma2;
        g[2] += -1.0 + u * u / sigma2;
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
    pub ess: f64,
    /// Monte-Carlo standard error of the mean, `sd / sqrt(ess)`.
    pub mcse: f64,
    /// Post-warmup draws, one vector per chain.
    #[serde(skip)]
    pub draws: Vec<Vec<f64>>,
}

impl ParamSummary {
    pub fn from_draws(name: impl Into<String>, draws: Vec<Vec<f64>>) -> Self {
        let all: Vec<f64> = draws.iter().flatten().copied().collect();
        let refs: Vec<&[f64]> = draws.iter().map(|d| d.as_slice()).collect();
        let m = mean(&all);
        let s = if all.len() > 1 { sd(&all) } else { 0.0 };
        let ess = effective_sample_size(&refs);
        Self {
            name: name.into(),
            mean: m,
            sd: s,
            rhat: split_rhat(&refs),
            ess,
            mcse: if ess > 0.0 { s / ess.sqrt() } else { f64::NAN },
            draws,
        }
    }

    pub fn all_draws(&self) -> impl Iterator<Item = f64> + '_ {
        self.draws.iter().flatten().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextEffect {
    pub context_id: ContextId,
    pub group: Group,
    pub summary: ParamSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierFit {
    pub coding: PenultCoding,
    pub beta0: ParamSummary,
    pub beta_penult: ParamSummary,
    pub sigma_u: ParamSummary,
    /// One entry per input context, in input order.
    pub u: Vec<ContextEffect>,
    /// Post-warmup acceptance rate averaged over all moves and chains.
    pub acceptance_rate: f64,
    pub acceptance_by_move: Vec<(String, f64)>,
    /// False when any split R-hat exceeds the threshold.
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl HierFit {
    pub fn max_rhat(&self) -> f64 {
        self.summaries().map(|s| s.rhat).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn summaries(&self) -> impl Iterator<Item = &ParamSummary> {
        [&self.beta0, &self.beta_penult, &self.sigma_u]
            .into_iter()
            .chain(self.u.iter().map(|c| &c.summary))
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.summaries()
            .map(|s| SummaryRow { param: s.name.clone(), mean: s.mean, sd: s.sd, rhat: s.rhat })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub param: String,
    pub mean: f64,
    pub sd: f64,
    pub rhat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierPrediction {
    pub context_id: ContextId,
    pub inferred_p: f64,
}

/// Posterior predictive P(A) per context: the mean over draws of
/// `inv_logit(beta0 + beta_penult * code + u)`.
pub fn predict_probs(fit: &HierFit) -> Vec<HierPrediction> {
    fit.u
        .iter()
        .map(|c| {
            let code = fit.coding.code(c.group);
            let mut sum = 0.0;
            let mut count = 0usize;
            for (ch, u_chain) in c.summary.draws.iter().enumerate() {
                let b0 = &fit.beta0.draws[ch];
                let bp = &fit.beta_penult.draws[ch];
                for i in 0..u_chain.len() {
                    sum += inv_logit(b0[i] + bp[i] * code + u_chain[i]);
                    count += 1;
                }
            }
            HierPrediction { context_id: c.context_id, inferred_p: sum / count as f64 }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// sampler

const MOVES: [&str; 7] =
    ["u", "beta0", "beta_penult", "log_sigma_u", "shift_intercept", "shift_penult", "scale_sigma"];
const ADAPT_EVERY: usize = 50;

#[derive(Clone, Debug)]
struct Proposal {
    scale: f64,
    tried: usize,
    accepted: usize,
    total_tried: usize,
    total_accepted: usize,
}

impl Proposal {
    fn new(scale: f64) -> Self {
        Self { scale, tried: 0, accepted: 0, total_tried: 0, total_accepted: 0 }
    }

    fn record(&mut self, accepted: bool, counting: bool) {
        self.tried += 1;
        self.accepted += accepted as usize;
        if counting {
            self.total_tried += 1;
            self.total_accepted += accepted as usize;
        }
    }

    fn adapt(&mut self, band: (f64, f64)) {
        if self.tried == 0 {
            return;
        }
        let rate = self.accepted as f64 / self.tried as f64;
        if rate < band.0 {
            self.scale *= if rate < 0.5 * band.0 { 0.6 } else { 0.85 };
        } else if rate > band.1 {
            self.scale *= if rate > 0.5 * (1.0 + band.1) { 1.6 } else { 1.15 };
        }
        self.tried = 0;
        self.accepted = 0;
    }
}

struct Chain<'a> {
    cells: &'a [Cell],
    spec: &'a HierModelSpec,
    beta0: f64,
    beta_p: f64,
    log_sigma: f64,
    u: Vec<f64>,
    eta: Vec<f64>,
    ll: Vec<f64>,
    u_moves: Vec<Proposal>,
    moves: Vec<Proposal>,
}

struct ChainOutput {
    beta0: Vec<f64>,
    beta_p: Vec<f64>,
    sigma: Vec<f64>,
    u: Vec<Vec<f64>>,
    accept: Vec<(usize, usize)>,
}

impl<'a> Chain<'a> {
    fn new(cells: &'a [Cell], spec: &'a HierModelSpec, rng: &mut Pcg64) -> Self {
        let k = cells.len();
        let z = |rng: &mut Pcg64| -> f64 { rng.sample(StandardNormal) };
        let beta0 = z(rng);
        let beta_p = z(rng);
        let log_sigma = 0.5 * z(rng);
        let u: Vec<f64> = (0..k).map(|_| 0.5 * z(rng)).collect();
        let mut chain = Chain {
            cells,
            spec,
            beta0,
            beta_p,
            log_sigma,
            u,
            eta: vec![0.0; k],
            ll: vec![0.0; k],
            u_moves: cells.iter().map(|c| Proposal::new(2.0 / (0.25 * c.n + 1.0).sqrt())).collect(),
            moves: vec![
                Proposal::new(0.1),
                Proposal::new(0.1),
                Proposal::new(0.2),
                Proposal::new(0.2),
                Proposal::new(0.2),
                Proposal::new(0.05),
            ],
        };
        chain.refresh();
        chain
    }

    fn refresh(&mut self) {
        for k in 0..self.cells.len() {
            self.eta[k] = self.beta0 + self.beta_p * self.cells[k].code + self.u[k];
            self.ll[k] = cell_loglik(&self.cells[k], self.eta[k]);
        }
    }

    fn accept(rng: &mut Pcg64, log_ratio: f64) -> bool {
        if log_ratio >= 0.0 {
            return true;
        }
        let v: f64 = rng.random();
        v.ln() < log_ratio
    }

    fn sweep(&mut self, rng: &mut Pcg64, counting: bool) {
        let spec = self.spec;
        let v_fixed = spec.prior_sd_fixed.powi(2);
        let v_sigma = spec.prior_halfnormal_sd.powi(2);
        let sigma2 = (2.0 * self.log_sigma).exp();

        // single random intercepts
        for k in 0..self.cells.len() {
            let step: f64 = rng.sample(StandardNormal);
            let u_new = self.u[k] + self.u_moves[k].scale * step;
            let eta_new = self.eta[k] - self.u[k] + u_new;
            let ll_new = cell_loglik(&self.cells[k], eta_new);
            let lr = ll_new - self.ll[k] - 0.5 * (u_new * u_new - self.u[k] * self.u[k]) / sigma2;
            let ok = Self::accept(rng, lr);
            if ok {
                self.u[k] = u_new;
                self.eta[k] = eta_new;
                self.ll[k] = ll_new;
            }
            self.u_moves[k].record(ok, counting);
        }

        // intercept and penult effect, each moving every linear predictor
        for which in 0..2 {
            let step: f64 = rng.sample(StandardNormal);
            let delta = self.moves[which].scale * step;
            let old = if which == 0 { self.beta0 } else { self.beta_p };
            let new = old + delta;
            let mut ll_new = vec![0.0; self.cells.len()];
            let mut d_ll = 0.0;
            for (k, c) in self.cells.iter().enumerate() {
                let shift = if which == 0 { delta } else { delta * c.code };
                ll_new[k] = cell_loglik(c, self.eta[k] + shift);
                d_ll += ll_new[k] - self.ll[k];
            }
            let lr = d_ll - 0.5 * (new * new - old * old) / v_fixed;
            let ok = Self::accept(rng, lr);
            if ok {
                for (k, c) in self.cells.iter().enumerate() {
                    self.eta[k] += if which == 0 { delta } else { delta * c.code };
                }
                self.ll = ll_new;
                if which == 0 {
                    self.beta0 = new;
                } else {
                    self.beta_p = new;
                }
            }
            self.moves[which].record(ok, counting);
        }

        // log sigma_u with u held fixed
        {
            let step: f64 = rng.sample(StandardNormal);
            let new = self.log_sigma + self.moves[2].scale * step;
            let lr = self.log_prior_sigma_block(new, v_sigma) - self.log_prior_sigma_block(self.log_sigma, v_sigma);
            let ok = Self::accept(rng, lr);
            if ok {
                self.log_sigma = new;
            }
            self.moves[2].record(ok, counting);
        }

        // shift moves: linear predictors unchanged, only priors move
        for which in 0..2 {
            let step: f64 = rng.sample(StandardNormal);
            let delta = self.moves[3 + which].scale * step;
            let sigma2 = (2.0 * self.log_sigma).exp();
            let (old, new) = if which == 0 {
                (self.beta0, self.beta0 + delta)
            } else {
                (self.beta_p, self.beta_p + delta)
            };
            let mut d_u = 0.0;
            for (k, c) in self.cells.iter().enumerate() {
                let w = if which == 0 { 1.0 } else { c.code };
                let un = self.u[k] - delta * w;
                d_u += un * un - self.u[k] * self.u[k];
            }
            let lr = -0.5 * (new * new - old * old) / v_fixed - 0.5 * d_u / sigma2;
            let ok = Self::accept(rng, lr);
            if ok {
                for (k, c) in self.cells.iter().enumerate() {
                    let w = if which == 0 { 1.0 } else { c.code };
                    self.u[k] -= delta * w;
                }
                if which == 0 {
                    self.beta0 = new;
                } else {
                    self.beta_p = new;
                }
            }
            self.moves[3 + which].record(ok, counting);
        }

        // joint rescale of sigma_u and u: (s, u) -> (s + d, u e^d), Jacobian e^{K d}
        {
            let step: f64 = rng.sample(StandardNormal);
            let delta = self.moves[5].scale * step;
            let factor = delta.exp();
            let new_log_sigma = self.log_sigma + delta;
            let mut ll_new = vec![0.0; self.cells.len()];
            let mut d_ll = 0.0;
            for (k, c) in self.cells.iter().enumerate() {
                let eta = self.eta[k] - self.u[k] + self.u[k] * factor;
                ll_new[k] = cell_loglik(c, eta);
                d_ll += ll_new[k] - self.ll[k];
            }
            // u/sigma is invariant, so the u prior changes by exactly -K delta,
            // which the Jacobian cancels
            let lr = d_ll
                + (-0.5 * (2.0 * new_log_sigma).exp() / v_sigma + new_log_sigma)
                - (-0.5 * (2.0 * self.log_sigma).exp() / v_sigma + self.log_sigma);
            let ok = Self::accept(rng, lr);
            if ok {
                for kk in 0..self.cells.len() {
                    self.u[kk] *= factor;
                    self.eta[kk] = self.beta0 + self.beta_p * self.cells[kk].code + self.u[kk];
                }
                self.ll = ll_new;
                self.log_sigma = new_log_sigma;
            }
            self.moves[5].record(ok, counting);
        }
    }

    /// Terms of the log posterior that depend on log sigma_u when u is fixed.
    fn log_prior_sigma_block(&self, log_sigma: f64, v_sigma: f64) -> f64 {
        let sigma2 = (2.0 * log_sigma).exp();
        let k = self.u.len() as f64;
        let ss: f64 = self.u.iter().map(|u| u * u).sum();
        -k * log_sigma - 0.5 * ss / sigma2 - 0.5 * sigma2 / v_sigma + log_sigma
    }

    fn adapt(&mut self) {
        let band = self.spec.target_accept_band;
        for p in self.u_moves.iter_mut().chain(self.moves.iter_mut()) {
            p.adapt(band);
        }
    }

    fn run(mut self, rng: &mut Pcg64) -> ChainOutput {
        let keep = self.spec.iterations - self.spec.warmup;
        let k = self.cells.len();
        let mut out = ChainOutput {
            beta0: Vec::with_capacity(keep),
            beta_p: Vec::with_capacity(keep),
            sigma: Vec::with_capacity(keep),
            u: vec![Vec::with_capacity(keep); k],
            accept: Vec::new(),
        };
        for it in 0..self.spec.iterations {
            let sampling = it >= self.spec.warmup;
            self.sweep(rng, sampling);
            if !sampling && (it + 1) % ADAPT_EVERY == 0 {
                self.adapt();
                // guard against drift in the cached predictors
                self.refresh();
            }
            if sampling {
                out.beta0.push(self.beta0);
                out.beta_p.push(self.beta_p);
                out.sigma.push(self.log_sigma.exp());
                for (dst, &u) in out.u.iter_mut().zip(&self.u) {
                    dst.push(u);
                }
            }
        }
        let u_tried: usize = self.u_moves.iter().map(|p| p.total_tried).sum();
        let u_acc: usize = self.u_moves.iter().map(|p| p.total_accepted).sum();
        out.accept.push((u_acc, u_tried));
        out.accept.extend(self.moves.iter().map(|p| (p.total_accepted, p.total_tried)));
        out
    }
}

/// Samples the posterior. Contexts are processed in context-id order
/// internally so that any permutation of the input yields the same draws,
/// reported back in input order.
pub fn fit_posterior(contexts: &[ObservedContext], spec: &HierModelSpec) -> Result<HierFit> {
    spec.validate()?;
    for g in Group::BOTH {
        if !contexts.iter().any(|c| c.group == g) {
            return Err(Error::InvalidModel(format!("no contexts in group {g}")));
        }
    }
    if contexts.len() < 2 {
        return Err(Error::InvalidModel("need at least 2 contexts".into()));
    }
    let mut order: Vec<usize> = (0..contexts.len()).collect();
    order.sort_by_key(|&i| contexts[i].context_id);
    if order.windows(2).any(|w| contexts[w[0]].context_id == contexts[w[1]].context_id) {
        return Err(Error::InvalidModel("duplicate context ids".into()));
    }
    let canonical: Vec<ObservedContext> = order.iter().map(|&i| contexts[i].clone()).collect();
    let cells = cells(&canonical, spec.penult_coding);

    let outputs: Vec<ChainOutput> = (0..spec.chains)
        .into_par_iter()
        .map(|ch| {
            let mut rng = rng_from_seed(split_seed(spec.seed, streams::CHAIN, ch as u64));
            Chain::new(&cells, spec, &mut rng).run(&mut rng)
        })
        .collect();

    let beta0 = ParamSummary::from_draws("beta0", outputs.iter().map(|o| o.beta0.clone()).collect());
    let beta_penult =
        ParamSummary::from_draws("beta_penult", outputs.iter().map(|o| o.beta_p.clone()).collect());
    let sigma_u = ParamSummary::from_draws("sigma_u", outputs.iter().map(|o| o.sigma.clone()).collect());
    let mut u_canonical: Vec<ContextEffect> = canonical
        .iter()
        .enumerate()
        .map(|(k, c)| ContextEffect {
            context_id: c.context_id,
            group: c.group,
            summary: ParamSummary::from_draws(
                format!("u[{}]", c.context_id),
                outputs.iter().map(|o| o.u[k].clone()).collect(),
            ),
        })
        .collect();
    let mut u: Vec<Option<ContextEffect>> = vec![None; contexts.len()];
    for (pos, &orig) in order.iter().enumerate().rev() {
        u[orig] = Some(u_canonical.remove(pos));
    }
    let u: Vec<ContextEffect> = u.into_iter().map(Option::unwrap).collect();

    let mut acc = vec![(0usize, 0usize); MOVES.len()];
    for o in &outputs {
        for (slot, &(a, t)) in acc.iter_mut().zip(&o.accept) {
            slot.0 += a;
            slot.1 += t;
        }
    }
    let acceptance_by_move: Vec<(String, f64)> = MOVES
        .iter()
        .zip(&acc)
        .map(|(name, &(a, t))| (name.to_string(), a as f64 / t.max(1) as f64))
        .collect();
    let acceptance_rate =
        acc.iter().map(|x| x.0).sum::<usize>() as f64 / acc.iter().map(|x| x.1).sum::<usize>().max(1) as f64;

    let mut fit = HierFit {
        coding: spec.penult_coding,
        beta0,
        beta_penult,
        sigma_u,
        u,
        acceptance_rate,
        acceptance_by_move,
        converged: true,
        warnings: Vec::new(),
    };
    let bad: Vec<String> = fit
        .summaries()
        .filter(|s| s.rhat.is_nan() || s.rhat > spec.rhat_threshold)
        .map(|s| format!("{} (rhat {:.3})", s.name, s.rhat))
        .collect();
    if !bad.is_empty() {
        fit.converged = false;
        fit.warnings.push(format!(
            "split R-hat above {} for {} parameter(s): {}",
            spec.rhat_threshold,
            bad.len(),
            bad.join(", ")
        ));
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: u32, g: Group, n: usize, a: usize) -> ObservedContext {
        ObservedContext { context_id: ContextId(id), group: g, n, count_a: a, observed_p: a as f64 / n as f64 }
    }

    #[test]
    fn hand_computed_density() {
        let spec = HierModelSpec::default();
        let contexts = [ctx(1, Group::X, 2, 1)];
        let sigma: f64 = 0.7;
        let theta = HierParams { beta0: 0.0, beta_penult: 0.0, log_sigma_u: sigma.ln(), u: vec![0.0] };
        let lp = log_posterior(&theta, &contexts, &spec).unwrap();
        assert!((lp.loglik - 2.0 * 0.5f64.ln()).abs() < 1e-14);
        let norm0 = |sd: f64| -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln();
        let expected = 2.0 * 0.5f64.ln()
            + 2.0 * norm0(5.0)
            + norm0(sigma)
            + (2.0f64.ln() + norm0(3.0) - sigma * sigma / 18.0)
            + sigma.ln();
        assert!((lp.total() - expected).abs() < 1e-12);
    }

    #[test]
    fn duplicate_observation_adds_one_bernoulli_term() {
        let spec = HierModelSpec::default();
        let theta = HierParams { beta0: 0.3, beta_penult: -0.4, log_sigma_u: 0.1, u: vec![0.2, -0.5] };
        let a = [ctx(1, Group::X, 5, 2), ctx(2, Group::Y, 3, 3)];
        let b = [ctx(1, Group::X, 6, 3), ctx(2, Group::Y, 3, 3)];
        let la = log_posterior(&theta, &a, &spec).unwrap();
        let lb = log_posterior(&theta, &b, &spec).unwrap();
        let eta: f64 = 0.3 + 0.4 + 0.2;
        assert!((lb.loglik - la.loglik - inv_logit(eta).ln()).abs() < 1e-12);
        assert_eq!(la.log_prior_u, lb.log_prior_u);
        assert_eq!(la.log_prior_fixed, lb.log_prior_fixed);
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let spec = HierModelSpec::default();
        let theta = HierParams { beta0: f64::NAN, ..HierParams::zeros(1) };
        assert!(matches!(
            log_posterior(&theta, &[ctx(1, Group::X, 1, 1)], &spec),
            Err(Error::NonFiniteParameter(0))
        ));
    }

    #[test]
    fn point_mass_predictions() {
        let point = |v: f64| ParamSummary::from_draws("p", vec![vec![v; 8], vec![v; 8]]);
        let fit = HierFit {
            coding: PenultCoding::SumPm1,
            beta0: point(0.0),
            beta_penult: point(1.0),
            sigma_u: point(1.0),
            u: vec![
                ContextEffect { context_id: ContextId(1), group: Group::X, summary: point(1.0) },
                ContextEffect { context_id: ContextId(2), group: Group::Y, summary: point(0.0) },
            ],
            acceptance_rate: 0.3,
            acceptance_by_move: vec![],
            converged: true,
            warnings: vec![],
        };
        let p = predict_probs(&fit);
        assert!((p[0].inferred_p - 0.5).abs() < 1e-15);
        assert!((p[1].inferred_p - 0.731_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(HierModelSpec { chains: 1, ..Default::default() }.validate().is_err());
        assert!(HierModelSpec { warmup: 6000, ..Default::default() }.validate().is_err());
        assert!(fit_posterior(&[ctx(1, Group::X, 3, 1), ctx(2, Group::X, 3, 1)], &HierModelSpec::default()).is_err());
    }
}
