//! Offset Poisson regression fit by iteratively reweighted least squares,
//! with Wald rate-ratio inference.
//!
//! The log-link Poisson log-likelihood is globally concave in the
//! coefficients, so IRLS with step halving converges to the unique optimum
//! from any starting point. Degenerate levels are never papered over:
//! zero-event levels are dropped from the design (their profile MLE is
//! -infinity) and reported as diverging rows, and a zero-event reference
//! stratum flags the whole block as non-estimable.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregate::EntityOutcome;

use super::normal::two_sided_p;
use super::{stars, ModelSpec, StatsError};

/// Wald critical value for 95% intervals, per the published convention.
const Z95: f64 = 1.96;

/// Linear predictors are clamped here before exponentiation so a diverging
/// coefficient yields a huge-but-finite mean instead of an overflow.
const ETA_MAX: f64 = 700.0;

#[derive(Debug, Clone)]
pub struct GlmOptions {
    pub max_iters: usize,
    /// Convergence threshold on |Δdeviance| between successive iterations.
    pub tol: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-8 }
    }
}

/// How one indicator level fared in the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermStatus {
    /// A coefficient was estimated; `col` indexes into `GlmFit::beta`.
    Estimated { col: usize },
    /// The level has entities but zero events: its coefficient diverges to
    /// -infinity, so its rows and column were removed (exact profile MLE for
    /// the remaining coefficients) and the level is reported as rr = 0 with
    /// an infinite CI.
    ZeroEvents,
    /// No entity carries this level; nothing to estimate.
    ZeroEntities,
    /// The block's reference stratum has zero events, so every rate ratio in
    /// the block diverges to +infinity; the block contributes no columns.
    InfiniteReference,
}

impl TermStatus {
    /// Short machine-readable flag for report/CSV output ("" = estimated).
    pub fn flag(&self) -> &'static str {
        match self {
            TermStatus::Estimated { .. } => "",
            TermStatus::ZeroEvents => "zero_events",
            TermStatus::ZeroEntities => "no_entities",
            TermStatus::InfiniteReference => "infinite_reference",
        }
    }
}

/// One non-reference indicator level of one predictor block.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmTerm {
    pub block: String,
    pub level: String,
    /// Entities at this level (over the full input, before any row drops).
    pub n_entities: usize,
    /// Total events at this level (full input).
    pub events: u64,
    pub status: TermStatus,
}

/// A realized design: response, offsets, and reference-coded matrix with an
/// intercept in column 0.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
    pub terms: Vec<GlmTerm>,
    pub rows_kept: usize,
    /// Rows removed because their entity sits in a zero-event level.
    pub rows_dropped: usize,
}

/// A converged fit. `beta[0]` is the intercept; `terms` maps the named
/// levels onto the remaining coefficients (empty for raw matrix fits).
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub beta: Vec<f64>,
    /// Inverse Fisher information at the optimum.
    pub covariance: DMatrix<f64>,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean norm of the score Xᵀ(y − μ) at the optimum.
    pub score_norm: f64,
    pub terms: Vec<GlmTerm>,
    pub n_rows: usize,
}

impl GlmFit {
    /// Wald standard error of coefficient `j`.
    pub fn se(&self, j: usize) -> f64 {
        self.covariance[(j, j)].sqrt()
    }
}

/// One level's rate ratio as presented in the report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRatio {
    pub block: String,
    pub level: String,
    #[serde(with = "crate::serde_float")]
    pub rr: f64,
    #[serde(with = "crate::serde_float")]
    pub ci_low: f64,
    #[serde(with = "crate::serde_float")]
    pub ci_high: f64,
    #[serde(with = "crate::serde_float")]
    pub p_value: f64,
    pub stars: String,
    pub n_entities: usize,
    pub events: u64,
    pub status: TermStatus,
}

fn term_name(term: &GlmTerm) -> String {
    format!("{}={}", term.block, term.level)
}

/// Expand a model spec over concrete entities into a numeric design.
///
/// Level statuses (entity and event totals) are computed on the full input;
/// rows are then dropped only for zero-event levels of blocks whose
/// reference stratum has events.
pub fn build_design(outcomes: &[EntityOutcome], spec: &ModelSpec) -> Result<Design, StatsError> {
    let block_label = || {
        spec.blocks
            .first()
            .map(|b| b.name.clone())
            .unwrap_or_else(|| "(intercept)".to_string())
    };
    if outcomes.is_empty() {
        return Err(StatsError::EmptyDesign { block: block_label() });
    }
    for entity in outcomes {
        if entity.chart_total == 0 {
            return Err(StatsError::NonFiniteInput);
        }
        for block in &spec.blocks {
            match entity.covariate(&block.name) {
                None => {
                    return Err(StatsError::UnknownLevel {
                        block: block.name.clone(),
                        entity: entity.entity_id.clone(),
                        value: "(missing)".to_string(),
                    })
                }
                Some(value) if !block.levels.iter().any(|l| l == value) => {
                    return Err(StatsError::UnknownLevel {
                        block: block.name.clone(),
                        entity: entity.entity_id.clone(),
                        value: value.to_string(),
                    })
                }
                Some(_) => {}
            }
        }
    }
    let total_events: u64 = outcomes.iter().map(|e| e.count(spec.outcome)).sum();
    if total_events == 0 {
        return Err(StatsError::AllZeroOutcome {
            outcome: spec.outcome.as_str().to_string(),
            n: outcomes.len(),
        });
    }

    // Per-level tallies and statuses.
    let mut terms: Vec<GlmTerm> = Vec::new();
    let mut block_infinite_ref = Vec::with_capacity(spec.blocks.len());
    for block in &spec.blocks {
        let mut ref_events = 0u64;
        let mut ref_n = 0usize;
        let mut level_stats: Vec<(String, usize, u64)> = block
            .indicator_levels()
            .map(|l| (l.clone(), 0usize, 0u64))
            .collect();
        for entity in outcomes {
            let value = entity.covariate(&block.name).expect("validated above");
            if value == block.reference {
                ref_n += 1;
                ref_events += entity.count(spec.outcome);
            } else if let Some(slot) = level_stats.iter_mut().find(|(l, _, _)| l == value) {
                slot.1 += 1;
                slot.2 += entity.count(spec.outcome);
            }
        }
        let any_level_events = level_stats.iter().any(|(_, n, ev)| *n > 0 && *ev > 0);
        let infinite_ref = ref_n > 0 && ref_events == 0 && any_level_events;
        block_infinite_ref.push(infinite_ref);
        for (level, n_entities, events) in level_stats {
            let status = if n_entities == 0 {
                TermStatus::ZeroEntities
            } else if infinite_ref {
                TermStatus::InfiniteReference
            } else if events == 0 {
                TermStatus::ZeroEvents
            } else {
                // Placeholder column; assigned for real below.
                TermStatus::Estimated { col: usize::MAX }
            };
            terms.push(GlmTerm { block: block.name.clone(), level, n_entities, events, status });
        }
    }

    // Assign columns to the estimated terms in declaration order.
    let mut next_col = 1usize;
    for term in &mut terms {
        if let TermStatus::Estimated { col } = &mut term.status {
            *col = next_col;
            next_col += 1;
        }
    }
    let n_cols = next_col;

    // Row filter: drop entities sitting in a zero-event level.
    let dropped_level = |entity: &EntityOutcome| -> bool {
        terms.iter().any(|t| {
            t.status == TermStatus::ZeroEvents
                && entity.covariate(&t.block) == Some(t.level.as_str())
        })
    };
    let kept: Vec<&EntityOutcome> = outcomes.iter().filter(|e| !dropped_level(e)).collect();
    let rows_dropped = outcomes.len() - kept.len();
    if kept.is_empty() {
        return Err(StatsError::EmptyDesign { block: block_label() });
    }

    // Structural identifiability: every block with estimated columns needs at
    // least one kept row outside those columns (otherwise the indicators sum
    // to the intercept).
    for (block, &infinite_ref) in spec.blocks.iter().zip(&block_infinite_ref) {
        if infinite_ref {
            continue;
        }
        let estimated: Vec<&GlmTerm> = terms
            .iter()
            .filter(|t| t.block == block.name && matches!(t.status, TermStatus::Estimated { .. }))
            .collect();
        if estimated.is_empty() {
            continue;
        }
        let has_baseline_row = kept.iter().any(|e| {
            let value = e.covariate(&block.name).expect("validated above");
            !estimated.iter().any(|t| t.level == value)
        });
        if !has_baseline_row {
            return Err(StatsError::RankDeficientDesign {
                column: format!(
                    "{} (no rows left at reference level {})",
                    term_name(estimated[0]),
                    block.reference
                ),
            });
        }
    }

    if kept.len() < n_cols {
        return Err(StatsError::TooFewObservations { needed: n_cols, got: kept.len() });
    }

    let mut x = DMatrix::zeros(kept.len(), n_cols);
    let mut y = Vec::with_capacity(kept.len());
    let mut offset = Vec::with_capacity(kept.len());
    for (i, entity) in kept.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for term in &terms {
            if let TermStatus::Estimated { col } = term.status {
                if entity.covariate(&term.block) == Some(term.level.as_str()) {
                    x[(i, col)] = 1.0;
                }
            }
        }
        y.push(entity.count(spec.outcome) as f64);
        offset.push((entity.chart_total as f64).ln());
    }

    // Numeric rank check by modified Gram-Schmidt (catches duplicated or
    // linearly dependent columns across blocks).
    if let Some(col) = dependent_column(&x) {
        let column = if col == 0 {
            "intercept".to_string()
        } else {
            terms
                .iter()
                .filter(|t| matches!(t.status, TermStatus::Estimated { .. }))
                .nth(col - 1)
                .map(term_name)
                .unwrap_or_else(|| format!("#{col}"))
        };
        return Err(StatsError::RankDeficientDesign { column });
    }

    Ok(Design { x, y, offset, terms, rows_kept: kept.len(), rows_dropped })
}

/// Index of the first column linearly dependent on its predecessors, if any.
fn dependent_column(x: &DMatrix<f64>) -> Option<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let mut v: DVector<f64> = x.column(j).into();
        let original = v.norm();
        for b in &basis {
            let proj = v.dot(b);
            v -= b * proj;
        }
        if v.norm() <= 1e-8 * original.max(1e-8) {
            return Some(j);
        }
        let norm = v.norm();
        basis.push(v / norm);
    }
    None
}

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    let mut dev = 0.0;
    for (&yi, &mi) in y.iter().zip(mu) {
        dev += if yi > 0.0 { yi * (yi / mi).ln() - (yi - mi) } else { mi };
    }
    2.0 * dev
}

fn means(x: &DMatrix<f64>, beta: &DVector<f64>, offset: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let lin = x * beta;
    let mut eta = Vec::with_capacity(offset.len());
    let mut mu = Vec::with_capacity(offset.len());
    for (l, o) in lin.iter().zip(offset) {
        let e = l + o;
        eta.push(e);
        mu.push(e.min(ETA_MAX).exp().max(1e-300));
    }
    (eta, mu)
}

/// Fit an offset Poisson GLM on an explicit design matrix. Column 0 should
/// be an intercept (that is where the initial value goes); `offset` enters
/// the linear predictor with a fixed coefficient of 1.
pub fn fit_poisson_glm_raw(
    x: &DMatrix<f64>,
    y: &[f64],
    offset: &[f64],
    opts: &GlmOptions,
) -> Result<GlmFit, StatsError> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(StatsError::LengthMismatch { left: n, right: y.len() });
    }
    if offset.len() != n {
        return Err(StatsError::LengthMismatch { left: n, right: offset.len() });
    }
    if n < p {
        return Err(StatsError::TooFewObservations { needed: p, got: n });
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0)
        || offset.iter().any(|v| !v.is_finite())
        || x.iter().any(|v| !v.is_finite())
    {
        return Err(StatsError::NonFiniteInput);
    }
    let total: f64 = y.iter().sum();
    if total == 0.0 {
        return Err(StatsError::AllZeroOutcome { outcome: "count".to_string(), n });
    }

    let exposure: f64 = offset.iter().map(|o| o.exp()).sum();
    let mut beta = DVector::zeros(p);
    beta[0] = (total / exposure).ln();
    let (_, mut mu) = means(x, &beta, offset);
    let mut dev = deviance(y, &mu);
    let mut converged = false;
    let mut iterations = 0usize;
    let mut last_change = f64::INFINITY;

    while iterations < opts.max_iters {
        iterations += 1;
        // Weighted normal equations XᵀWXβ = XᵀWz accumulated without ever
        // forming z (avoids division by a vanishing mean): the right side is
        // Σᵢ xᵢ · [μᵢ(ηᵢ − oᵢ) + (yᵢ − μᵢ)].
        let (eta, mu_now) = means(x, &beta, offset);
        let mut xtwx: DMatrix<f64> = DMatrix::zeros(p, p);
        let mut xtwz: DVector<f64> = DVector::zeros(p);
        for i in 0..n {
            let w = mu_now[i];
            let r = w * (eta[i] - offset[i]) + (y[i] - mu_now[i]);
            for j in 0..p {
                let xij = x[(i, j)];
                if xij == 0.0 {
                    continue;
                }
                xtwz[j] += xij * r;
                for k in j..p {
                    xtwx[(j, k)] += xij * w * x[(i, k)];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                xtwx[(j, k)] = xtwx[(k, j)];
            }
        }
        let chol = Cholesky::new(xtwx).ok_or_else(|| StatsError::RankDeficientDesign {
            column: "unidentified (Cholesky failure)".to_string(),
        })?;
        let target = chol.solve(&xtwz);
        let delta = &target - &beta;

        // Step halving keeps the deviance monotone even from a poor start.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = &beta + &delta * step;
            let (_, mu_cand) = means(x, &cand, offset);
            let dev_cand = deviance(y, &mu_cand);
            if dev_cand.is_finite() && dev_cand <= dev + 1e-10 {
                accepted = Some((cand, mu_cand, dev_cand));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, mu_cand, dev_cand)) = accepted else {
            break;
        };
        last_change = (dev - dev_cand).abs();
        beta = cand;
        mu = mu_cand;
        dev = dev_cand;
        if last_change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(StatsError::NotConverged { iterations, last_change });
    }

    // Fisher information and score at the optimum.
    let mut info: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut score: DVector<f64> = DVector::zeros(p);
    for i in 0..n {
        for j in 0..p {
            let xij = x[(i, j)];
            if xij == 0.0 {
                continue;
            }
            score[j] += xij * (y[i] - mu[i]);
            for k in j..p {
                info[(j, k)] += xij * mu[i] * x[(i, k)];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            info[(j, k)] = info[(k, j)];
        }
    }
    let covariance = Cholesky::new(info)
        .ok_or_else(|| StatsError::RankDeficientDesign {
            column: "unidentified (singular information)".to_string(),
        })?
        .inverse();

    Ok(GlmFit {
        beta: beta.iter().copied().collect(),
        covariance,
        deviance: dev,
        iterations,
        converged,
        score_norm: score.norm(),
        terms: Vec::new(),
        n_rows: n,
    })
}

/// Fit one model spec over aggregated entities.
pub fn fit_poisson_glm(
    outcomes: &[EntityOutcome],
    spec: &ModelSpec,
    opts: &GlmOptions,
) -> Result<GlmFit, StatsError> {
    let design = build_design(outcomes, spec)?;
    let mut fit = fit_poisson_glm_raw(&design.x, &design.y, &design.offset, opts)?;
    fit.terms = design.terms;
    Ok(fit)
}

/// Wald rate ratios for every named term of a fit, diverging levels included.
pub fn rate_ratios(fit: &GlmFit) -> Vec<RateRatio> {
    fit.terms
        .iter()
        .map(|term| {
            let (rr, ci_low, ci_high, p_value) = match term.status {
                TermStatus::Estimated { col } => {
                    let b = fit.beta[col];
                    let se = fit.se(col);
                    let p = two_sided_p(b / se);
                    (b.exp(), (b - Z95 * se).exp(), (b + Z95 * se).exp(), p)
                }
                TermStatus::ZeroEvents => (0.0, 0.0, f64::INFINITY, f64::NAN),
                TermStatus::ZeroEntities => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
                TermStatus::InfiniteReference => {
                    if term.events > 0 {
                        (f64::INFINITY, 0.0, f64::INFINITY, f64::NAN)
                    } else {
                        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
                    }
                }
            };
            RateRatio {
                block: term.block.clone(),
                level: term.level.clone(),
                rr,
                ci_low,
                ci_high,
                p_value,
                stars: stars(p_value).to_string(),
                n_entities: term.n_entities,
                events: term.events,
                status: term.status,
            }
        })
        .collect()
}
