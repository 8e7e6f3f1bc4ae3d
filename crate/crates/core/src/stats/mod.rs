//! From-scratch count-model statistics: offset Poisson GLM via IRLS with
//! Wald inference, random-intercept Poisson with median incidence rate
//! ratio, and Spearman rank correlation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod glm;
mod mixed;
pub mod normal;
pub mod optim;
pub mod quadrature;
mod rank;

pub use glm::{
    build_design, fit_poisson_glm, fit_poisson_glm_raw, rate_ratios, Design, GlmFit, GlmOptions,
    GlmTerm, RateRatio, TermStatus,
};
pub use mixed::{fit_random_intercept_poisson, marginal_loglik, median_irr, MixedFit, MixedOptions};
pub use rank::{average_ranks, spearman, CorrelationResult};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("IRLS did not converge after {iterations} iterations (last |Δdeviance| = {last_change:.3e})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("outcome {outcome} has zero events across all {n} entities; rates are not estimable")]
    AllZeroOutcome { outcome: String, n: usize },
    #[error("design matrix is rank-deficient (column {column})")]
    RankDeficientDesign { column: String },
    #[error("no usable rows for predictor block {block}")]
    EmptyDesign { block: String },
    #[error("entity {entity} has value {value:?} for block {block}, which is not a declared level")]
    UnknownLevel { block: String, entity: String, value: String },
    #[error("{0}")]
    DegenerateClusters(String),
    #[error("variance must be non-negative, got {0}")]
    NegativeVariance(f64),
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("{side} input is constant; rank correlation is undefined")]
    ConstantInput { side: &'static str },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
}

impl StatsError {
    pub fn code(&self) -> &'static str {
        match self {
            StatsError::NotConverged { .. } => "E_NOT_CONVERGED",
            StatsError::AllZeroOutcome { .. } => "E_ALL_ZERO_OUTCOME",
            StatsError::RankDeficientDesign { .. } => "E_RANK_DEFICIENT",
            StatsError::EmptyDesign { .. } => "E_EMPTY_DESIGN",
            StatsError::UnknownLevel { .. } => "E_UNKNOWN_LEVEL",
            StatsError::DegenerateClusters(_) => "E_DEGENERATE_CLUSTERS",
            StatsError::NegativeVariance(_) => "E_NEGATIVE_VARIANCE",
            StatsError::LengthMismatch { .. } => "E_LENGTH_MISMATCH",
            StatsError::TooFewObservations { .. } => "E_TOO_FEW_OBSERVATIONS",
            StatsError::ConstantInput { .. } => "E_CONSTANT_INPUT",
            StatsError::NonFiniteInput => "E_NON_FINITE_INPUT",
        }
    }
}

/// Which count outcome a model explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "stigma_count")]
    Stigma,
    #[serde(rename = "doubt_count")]
    Doubt,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Stigma => "stigma_count",
            Outcome::Doubt => "doubt_count",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Outcome::Stigma => "Stigmatizing Labels",
            Outcome::Doubt => "Doubt Markers",
        }
    }
}

/// One categorical (or boolean) covariate expanded to reference-coded
/// indicator columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorBlock {
    /// Covariate key in `EntityOutcome::covariates`.
    pub name: String,
    /// All levels, reference included, in presentation order.
    pub levels: Vec<String>,
    /// The level that carries no indicator column.
    pub reference: String,
}

impl PredictorBlock {
    pub fn categorical(name: &str, reference: &str, others: &[&str]) -> Self {
        let mut levels = vec![reference.to_string()];
        levels.extend(others.iter().map(|s| s.to_string()));
        Self { name: name.to_string(), levels, reference: reference.to_string() }
    }

    /// A boolean covariate stored as "absent"/"present"; reference = absent.
    pub fn binary(name: &str) -> Self {
        Self::categorical(name, "absent", &["present"])
    }

    /// Non-reference levels in presentation order.
    pub fn indicator_levels(&self) -> impl Iterator<Item = &String> {
        self.levels.iter().filter(move |l| **l != self.reference)
    }
}

/// A full model request: one outcome plus one or more predictor blocks
/// (one block in the default per-predictor mode; several in joint mode).
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub outcome: Outcome,
    pub blocks: Vec<PredictorBlock>,
}

impl ModelSpec {
    pub fn new(outcome: Outcome, block: PredictorBlock) -> Self {
        Self { outcome, blocks: vec![block] }
    }

    pub fn joint(outcome: Outcome, blocks: Vec<PredictorBlock>) -> Self {
        Self { outcome, blocks }
    }
}

/// Significance stars at the published thresholds. NaN (e.g. a diverging
/// level with no defined p-value) gets no stars.
pub fn stars(p: f64) -> &'static str {
    if p.is_nan() {
        ""
    } else if p < 1e-4 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.2), "");
        assert_eq!(stars(0.03), "*");
        assert_eq!(stars(5e-6), "**");
        assert_eq!(stars(0.05), "");
        assert_eq!(stars(1e-4), "*");
        assert_eq!(stars(f64::NAN), "");
    }

    #[test]
    fn predictor_block_levels() {
        let block = PredictorBlock::categorical("insurance", "Private", &["GovernmentRun", "SelfPay"]);
        let indicators: Vec<&String> = block.indicator_levels().collect();
        assert_eq!(indicators, ["GovernmentRun", "SelfPay"]);
        let binary = PredictorBlock::binary("oud");
        assert_eq!(binary.reference, "absent");
        assert_eq!(binary.indicator_levels().count(), 1);
    }
}
