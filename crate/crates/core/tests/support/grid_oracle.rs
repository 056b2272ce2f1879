//! Deterministic numerical integration of the random-intercept logistic
//! posterior for a handful of contexts.
//!
//! The outer grid covers `(beta0, beta_penult, sigma_u)`; for every grid
//! point the context intercepts are conditionally independent, so each
//! `u_k` is integrated out by one-dimensional Simpson quadrature. This is
//! independent of the sampler: no Markov chains, no unconstrained
//! reparameterization, no shared density code.

#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub n: u32,
    pub count_a: u32,
    pub code: f64,
}

#[derive(Clone, Debug)]
pub struct Moments {
    pub beta0: f64,
    pub beta_penult: f64,
    pub sigma_u: f64,
    pub u: Vec<f64>,
    #[allow(dead_code)]
    pub p: Vec<f64>,
}

const BETA_HALF_WIDTH: f64 = 20.0;
const BETA_STEP: f64 = 0.2;
const SIGMA_STEP: f64 = 0.1;
const SIGMA_MAX: f64 = 15.0;
const U_POINTS: usize = 401;

fn softplus(x: f64) -> f64 {
    if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn loglik(c: &Cell, eta: f64) -> f64 {
    c.count_a as f64 * eta - c.n as f64 * softplus(eta)
}

/// Interval of `eta` outside which the likelihood is below `e^-45` of its peak.
fn eta_support(c: &Cell) -> (f64, f64) {
    let grid: Vec<f64> = (-6000..=6000).map(|i| i as f64 * 0.01).collect();
    let peak = grid.iter().map(|&e| loglik(c, e)).fold(f64::NEG_INFINITY, f64::max);
    let inside: Vec<f64> = grid.into_iter().filter(|&e| loglik(c, e) >= peak - 45.0).collect();
    (inside[0] - 0.01, inside[inside.len() - 1] + 0.01)
}

fn simpson_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i == 0 || i == n - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 })
        .collect()
}

/// `(log integral, E[u], E[sigmoid(a + u)])` of `lik(a + u) * Normal(u; 0, sigma²)`.
fn integrate_u(c: &Cell, support: (f64, f64), a: f64, sigma: f64, w: &[f64]) -> (f64, f64, f64) {
    let lo = (-10.0 * sigma).max(support.0 - a);
    let hi = (10.0 * sigma).min(support.1 - a);
    if lo >= hi {
        return (f64::NEG_INFINITY, 0.0, 0.0);
    }
    let h = (hi - lo) / (U_POINTS - 1) as f64;
    let logs: Vec<f64> = (0..U_POINTS)
        .map(|i| {
            let u = lo + i as f64 * h;
            loglik(c, a + u) - 0.5 * (u / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut zu, mut zp) = (0.0, 0.0, 0.0);
    for i in 0..U_POINTS {
        let u = lo + i as f64 * h;
        let v = w[i] * (logs[i] - m).exp();
        z += v;
        zu += v * u;
        zp += v * sigmoid(a + u);
    }
    ((z * h / 3.0).ln() + m, zu / z, zp / z)
}

pub fn posterior_moments(cells: &[Cell], prior_sd: f64, half_normal_sd: f64) -> Moments {
    let nb = (2.0 * BETA_HALF_WIDTH / BETA_STEP).round() as usize + 1;
    let beta = |i: usize| -BETA_HALF_WIDTH + i as f64 * BETA_STEP;
    // codes are +-1 or 0/1, so a = beta0 + code * beta_penult lies on the lattice
    let na = 2 * nb - 1;
    let a_at = |m: usize| -2.0 * BETA_HALF_WIDTH + m as f64 * BETA_STEP;
    let ns = (SIGMA_MAX / SIGMA_STEP).round() as usize;
    let sigma = |j: usize| (j as f64 + 0.5) * SIGMA_STEP;
    let w = simpson_weights(U_POINTS);

    // tables[k][j * na + m] for a = a_at(m), sigma = sigma(j)
    let tables: Vec<Vec<(f64, f64, f64)>> = cells
        .iter()
        .map(|c| {
            let sup = eta_support(c);
            (0..ns)
                .flat_map(|j| (0..na).map(move |m| (j, m)))
                .map(|(j, m)| integrate_u(c, sup, a_at(m), sigma(j), &w))
                .collect()
        })
        .collect();

    let lnorm = |x: f64, sd: f64| -0.5 * (x / sd).powi(2);
    let mut logw = Vec::with_capacity(nb * nb * ns);
    let mut idx = Vec::with_capacity(nb * nb * ns);
    for i0 in 0..nb {
        for ip in 0..nb {
            let (b0, bp) = (beta(i0), beta(ip));
            for j in 0..ns {
                let s = sigma(j);
                let mut lw = lnorm(b0, prior_sd) + lnorm(bp, prior_sd) + lnorm(s, half_normal_sd);
                let mut ms = Vec::with_capacity(cells.len());
                for (k, c) in cells.iter().enumerate() {
                    let a = b0 + c.code * bp;
                    let m = ((a + 2.0 * BETA_HALF_WIDTH) / BETA_STEP).round() as usize;
                    lw += tables[k][j * na + m].0;
                    ms.push(m);
                }
                logw.push(lw);
                idx.push((i0, ip, j, ms));
            }
        }
    }
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let k = cells.len();
    let (mut z, mut e0, mut ep, mut es) = (0.0, 0.0, 0.0, 0.0);
    let (mut eu, mut epr) = (vec![0.0; k], vec![0.0; k]);
    for (lw, (i0, ip, j, ms)) in logw.iter().zip(&idx) {
        let v = (lw - top).exp();
        if v == 0.0 {
            continue;
        }
        z += v;
        e0 += v * beta(*i0);
        ep += v * beta(*ip);
        es += v * sigma(*j);
        for c in 0..k {
            let t = tables[c][j * na + ms[c]];
            eu[c] += v * t.1;
            epr[c] += v * t.2;
        }
    }
    Moments {
        beta0: e0 / z,
        beta_penult: ep / z,
        sigma_u: es / z,
        u: eu.into_iter().map(|v| v / z).collect(),
        p: epr.into_iter().map(|v| v / z).collect(),
    }
}
