//! Random-intercept Poisson model fit by adaptive Gauss–Hermite quadrature,
//! plus the median incidence rate ratio derived from its variance.
//!
//! Model: y_ij ~ Poisson(t_ij · exp(β₀ + b_i)), b_i ~ N(0, σ²). The marginal
//! likelihood factors over clusters through three sufficient statistics per
//! cluster (S = Σy, T = Σt, C = Σ[y·ln t − lnΓ(y+1)]), so the integrand is
//!
//!   g_i(b) = S_i(β₀ + b) + C_i − T_i·e^{β₀+b} − b²/(2σ²) − ½ln(2πσ²),
//!
//! which is strictly concave in b. Each cluster integral is centered and
//! scaled at the mode of g_i (damped Newton), then evaluated with
//! Gauss–Hermite nodes. Gradients use Fisher's identity — the score of the
//! marginal likelihood is the posterior expectation of the joint score —
//! which is far more accurate than differencing the quadrature.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::normal::z75;
use super::optim::{lbfgs, OptimOptions};
use super::quadrature::gauss_hermite;
use super::StatsError;

/// Bounds on θ = ln σ² inside the optimizer. The lower bound acts as a
/// smooth σ² → 0 boundary (e^-30 ≈ 9e-14); beyond either bound the objective
/// is extended flat (gradient zero), so runs that drift past a bound simply
/// converge on the intercept score alone.
const THETA_MIN: f64 = -30.0;
const THETA_MAX: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct MixedOptions {
    pub quadrature_points: usize,
    /// Gradient tolerance on the mean per-cluster objective (scale-free).
    pub grad_tol: f64,
    /// Outer-iteration cap per start.
    pub max_iters: usize,
    /// σ² multi-start values, guarding against the σ² → 0 boundary optimum.
    pub starts: Vec<f64>,
}

impl Default for MixedOptions {
    fn default() -> Self {
        Self { quadrature_points: 15, grad_tol: 1e-6, max_iters: 200, starts: vec![0.1, 1.0, 4.0] }
    }
}

/// A fitted random-intercept Poisson model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixedFit {
    pub intercept: f64,
    pub sigma2: f64,
    pub median_irr: f64,
    /// Total marginal log-likelihood at the optimum.
    pub loglik: f64,
    pub quadrature_points: usize,
    pub n_clusters: usize,
    pub n_obs: usize,
    pub converged: bool,
    /// Mean per-cluster gradient norm at the reported optimum.
    pub grad_norm: f64,
}

/// Median incidence rate ratio: exp(√(2σ²)·Φ⁻¹(0.75)), the median rate
/// multiplier between two randomly drawn clusters.
pub fn median_irr(sigma2: f64) -> Result<f64, StatsError> {
    if !(sigma2 >= 0.0) {
        return Err(StatsError::NegativeVariance(sigma2));
    }
    Ok(((2.0 * sigma2).sqrt() * z75()).exp())
}

/// Per-cluster sufficient statistics.
#[derive(Debug, Clone, Copy)]
struct ClusterStats {
    s: f64,
    t: f64,
    c: f64,
    size: usize,
}

fn exp_clamped(v: f64) -> f64 {
    v.min(700.0).exp()
}

/// Gauss–Hermite nodes paired with log-weights (everything downstream works
/// in log space).
fn log_weight_nodes(n: usize) -> Vec<(f64, f64)> {
    let (xs, ws) = gauss_hermite(n);
    xs.into_iter().zip(ws.into_iter().map(|w| w.ln())).collect()
}

fn logsumexp(vals: &[f64]) -> f64 {
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One cluster's log-marginal contribution and its score components.
struct ClusterEval {
    loglik: f64,
    d_beta0: f64,
    d_theta: f64,
}

fn cluster_eval(cs: &ClusterStats, beta0: f64, sigma2: f64, nodes: &[(f64, f64)]) -> ClusterEval {
    let log_a = cs.t.ln() + beta0; // ln(T·e^β₀)
    let half_log_norm = 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
    let g = |b: f64| -> f64 {
        cs.s * (beta0 + b) + cs.c - exp_clamped(log_a + b) - b * b / (2.0 * sigma2)
            - half_log_norm
    };

    // Damped Newton for the mode of the strictly concave g.
    let mut b_hat = 0.0;
    let mut g_val = g(b_hat);
    let mut rate = exp_clamped(log_a + b_hat);
    for _ in 0..100 {
        let grad = cs.s - rate - b_hat / sigma2;
        if grad.abs() <= 1e-10 * (1.0 + cs.s + rate) {
            break;
        }
        let hess = -(rate + 1.0 / sigma2);
        let newton = -grad / hess;
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = b_hat + step * newton;
            let cand_val = g(cand);
            if cand_val >= g_val - 1e-13 {
                b_hat = cand;
                g_val = cand_val;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        rate = exp_clamped(log_a + b_hat);
    }

    // Adaptive recentering: b = b̂ + √2·ŝ·x with ŝ² = -1/g''(b̂), folding the
    // Gauss–Hermite kernel back in through the +x² term.
    let s_hat = 1.0 / (rate + 1.0 / sigma2).sqrt();
    let scale = std::f64::consts::SQRT_2 * s_hat;
    let mut terms = Vec::with_capacity(nodes.len());
    for &(x, ln_w) in nodes {
        let b = b_hat + scale * x;
        terms.push(ln_w + x * x + g(b));
    }
    let lse = logsumexp(&terms);
    let loglik = scale.ln() + lse;

    // Fisher's identity: score = posterior expectation of the joint score.
    let mut d_beta0 = 0.0;
    let mut d_theta = 0.0;
    for (term, &(x, _)) in terms.iter().zip(nodes) {
        let b = b_hat + scale * x;
        let weight = (term - lse).exp();
        d_beta0 += weight * (cs.s - exp_clamped(log_a + b));
        d_theta += weight * 0.5 * (b * b / sigma2 - 1.0);
    }
    ClusterEval { loglik, d_beta0, d_theta }
}

fn group_clusters<S: AsRef<str>>(
    y: &[f64],
    exposure: &[f64],
    cluster_ids: &[S],
) -> Vec<ClusterStats> {
    let mut index: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut clusters: Vec<ClusterStats> = Vec::new();
    for ((&yi, &ti), id) in y.iter().zip(exposure).zip(cluster_ids) {
        let slot = *index.entry(id.as_ref()).or_insert_with(|| {
            clusters.push(ClusterStats { s: 0.0, t: 0.0, c: 0.0, size: 0 });
            clusters.len() - 1
        });
        let cs = &mut clusters[slot];
        cs.s += yi;
        cs.t += ti;
        cs.c += yi * ti.ln() - ln_gamma(yi + 1.0);
        cs.size += 1;
    }
    clusters
}

fn total_eval(clusters: &[ClusterStats], beta0: f64, sigma2: f64, nodes: &[(f64, f64)]) -> (f64, f64, f64) {
    // Ordered collect + sequential sum: bitwise-reproducible at any thread
    // count.
    let evals: Vec<ClusterEval> = clusters
        .par_iter()
        .map(|cs| cluster_eval(cs, beta0, sigma2, nodes))
        .collect();
    let mut loglik = 0.0;
    let mut d_beta0 = 0.0;
    let mut d_theta = 0.0;
    for e in &evals {
        loglik += e.loglik;
        d_beta0 += e.d_beta0;
        d_theta += e.d_theta;
    }
    (loglik, d_beta0, d_theta)
}

fn validate<S: AsRef<str>>(
    y: &[f64],
    exposure: &[f64],
    cluster_ids: &[S],
) -> Result<Vec<ClusterStats>, StatsError> {
    if y.len() != exposure.len() {
        return Err(StatsError::LengthMismatch { left: y.len(), right: exposure.len() });
    }
    if y.len() != cluster_ids.len() {
        return Err(StatsError::LengthMismatch { left: y.len(), right: cluster_ids.len() });
    }
    if y.len() < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0) || exposure.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(StatsError::NonFiniteInput);
    }
    if y.iter().sum::<f64>() == 0.0 {
        return Err(StatsError::AllZeroOutcome { outcome: "count".to_string(), n: y.len() });
    }
    let clusters = group_clusters(y, exposure, cluster_ids);
    if clusters.len() < 2 {
        return Err(StatsError::DegenerateClusters(format!(
            "need at least 2 clusters, got {}",
            clusters.len()
        )));
    }
    if clusters.iter().all(|c| c.size == 1) {
        return Err(StatsError::DegenerateClusters(
            "every cluster has exactly one observation; the random-intercept variance is not identifiable from within-cluster replication".to_string(),
        ));
    }
    Ok(clusters)
}

/// Marginal log-likelihood at fixed parameters (diagnostics and quadrature
/// refinement checks).
pub fn marginal_loglik<S: AsRef<str>>(
    y: &[f64],
    exposure: &[f64],
    cluster_ids: &[S],
    beta0: f64,
    sigma2: f64,
    quadrature_points: usize,
) -> Result<f64, StatsError> {
    if !(sigma2 > 0.0) {
        return Err(StatsError::NegativeVariance(sigma2));
    }
    let clusters = validate(y, exposure, cluster_ids)?;
    let nodes = log_weight_nodes(quadrature_points);
    Ok(total_eval(&clusters, beta0, sigma2, &nodes).0)
}

/// Fit the intercept-plus-Gaussian-random-intercept Poisson model.
///
/// `y` are counts, `exposure` the per-observation exposure t (the offset is
/// ln t), and `cluster_ids` name each observation's cluster. The outer
/// optimization runs over (β₀, ln σ²) from every start in
/// [`MixedOptions::starts`], keeping the best converged optimum.
pub fn fit_random_intercept_poisson<S: AsRef<str>>(
    y: &[f64],
    exposure: &[f64],
    cluster_ids: &[S],
    opts: &MixedOptions,
) -> Result<MixedFit, StatsError> {
    let clusters = validate(y, exposure, cluster_ids)?;
    let nodes = log_weight_nodes(opts.quadrature_points);
    let n_clusters = clusters.len() as f64;

    // Mean per-cluster negative log-likelihood: same optimum, and the 1e-6
    // gradient tolerance becomes independent of the corpus size.
    let objective = |params: &[f64]| -> (f64, Vec<f64>) {
        let beta0 = params[0];
        let theta = params[1].clamp(THETA_MIN, THETA_MAX);
        let sigma2 = theta.exp();
        let (loglik, d_beta0, d_theta) = total_eval(&clusters, beta0, sigma2, &nodes);
        let d_theta = if params[1] == theta { d_theta } else { 0.0 };
        (-loglik / n_clusters, vec![-d_beta0 / n_clusters, -d_theta / n_clusters])
    };

    let total_s: f64 = clusters.iter().map(|c| c.s).sum();
    let total_t: f64 = clusters.iter().map(|c| c.t).sum();
    let beta0_start = (total_s / total_t).ln();

    let mut best: Option<super::optim::OptimResult> = None;
    let mut best_any: Option<super::optim::OptimResult> = None;
    for &sigma2_start in &opts.starts {
        let run = lbfgs(
            objective,
            &[beta0_start, sigma2_start.ln()],
            &OptimOptions { max_iters: opts.max_iters, grad_tol: opts.grad_tol, memory: 10 },
        );
        if best_any.as_ref().map_or(true, |b| run.value < b.value) {
            best_any = Some(run.clone());
        }
        if run.converged && best.as_ref().map_or(true, |b| run.value < b.value) {
            best = Some(run);
        }
    }
    let (result, converged) = match best {
        Some(run) => (run, true),
        None => {
            let run = best_any.expect("at least one start");
            return Err(StatsError::NotConverged {
                iterations: run.iterations,
                last_change: run.grad_norm,
            });
        }
    };

    let intercept = result.x[0];
    let sigma2 = result.x[1].clamp(THETA_MIN, THETA_MAX).exp();
    Ok(MixedFit {
        intercept,
        sigma2,
        median_irr: median_irr(sigma2)?,
        loglik: -result.value * n_clusters,
        quadrature_points: opts.quadrature_points,
        n_clusters: clusters.len(),
        n_obs: y.len(),
        converged,
        grad_norm: result.grad_norm,
    })
}
