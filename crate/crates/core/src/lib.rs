//! Corpus-scale detection of stigmatizing labels and doubt markers in
//! clinical free-text notes.
//!
//! The pipeline mirrors a published analytic method end to end:
//!
//! 1. [`ingest`] — read MIMIC-III-shaped CSV tables, recategorize
//!    ethnicity/insurance/provider labels, derive ICD-9 condition flags,
//!    deduplicate charts and drop excluded note categories.
//! 2. [`text`] — deterministic sentence segmentation and token
//!    normalization.
//! 3. [`lexicon`] — load the shipped doubt-marker and stigmatizing-label
//!    lexicons and scan sentences with a single-pass multi-pattern matcher.
//! 4. [`classifier`] — optionally refine matched sentences with a trainable
//!    L2-regularized logistic-regression classifier.
//! 5. [`aggregate`] — roll sentence labels up to notes, then to patients and
//!    providers, producing count outcomes with chart-total offsets.
//! 6. [`stats`] — offset Poisson regression (IRLS) with Wald rate ratios,
//!    random-intercept Poisson clustering (median incidence rate ratio), and
//!    Spearman rank correlation.
//! 7. [`synth`] — seeded synthetic corpora with known ground truth, used to
//!    validate the whole pipeline without credentialed data.
//! 8. [`pipeline`] / [`report`] / [`artifacts`] — orchestration, Table-shaped
//!    markdown reports, and the CSV/JSON artifact formats.

use thiserror::Error;

pub mod aggregate;
pub mod artifacts;
pub mod classifier;
pub mod ingest;
pub mod lexicon;
pub mod pipeline;
pub mod report;
pub(crate) mod serde_float;
pub mod stats;
pub mod synth;
pub mod text;

/// Data files compiled into the crate; every one can be overridden by a
/// user-supplied file at runtime.
pub mod data {
    /// Doubt-marker lexicon (58 terms).
    pub const DOUBT_MARKERS: &str = include_str!("../data/doubt_markers.txt");
    /// Stigmatizing-label lexicon (127 terms).
    pub const STIGMATIZING_LABELS: &str = include_str!("../data/stigmatizing_labels.txt");
    /// Sentence-segmentation abbreviation guard list.
    pub const ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");
    /// Raw ethnicity string -> analysis category table.
    pub const ETHNICITY_MAP: &str = include_str!("../data/ethnicity_map.txt");
    /// Raw caregiver label -> provider type table.
    pub const PROVIDER_MAP: &str = include_str!("../data/provider_map.txt");
    /// Condition -> ICD-9 code pattern table.
    pub const ICD9_MAP: &str = include_str!("../data/icd9_map.txt");
}

/// Umbrella error for pipeline front ends; every variant carries a stable
/// machine-parsable code (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Lexicon(#[from] lexicon::LexiconError),
    #[error(transparent)]
    Classifier(#[from] classifier::ClassifierError),
    #[error(transparent)]
    Aggregate(#[from] aggregate::AggregateError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error(transparent)]
    Artifact(#[from] artifacts::ArtifactError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable error code for machine-parsable CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Ingest(e) => e.code(),
            Error::Lexicon(e) => e.code(),
            Error::Classifier(e) => e.code(),
            Error::Aggregate(e) => e.code(),
            Error::Stats(e) => e.code(),
            Error::Synth(e) => e.code(),
            Error::Report(e) => e.code(),
            Error::Artifact(e) => e.code(),
            Error::Io(_) => "E_IO",
        }
    }
}
