//! Roll sentence-level labels up to notes, then to patients and providers,
//! producing the count outcomes and offsets the statistical models consume,
//! plus Table-1-style descriptives.
//!
//! Aggregation is deliberately decoupled from ingest: it consumes note flags
//! plus an attribution map (note -> entity) and a covariate table, so the
//! stats layer can be driven from a CSV alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::LexiconName;
use crate::stats::{Outcome, PredictorBlock};

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("entity {entity_id} has no charts; the offset log(chart_total) is undefined")]
    NoCharts { entity_id: String },
    #[error("no entities to summarize")]
    EmptyInput,
}

impl AggregateError {
    pub fn code(&self) -> &'static str {
        match self {
            AggregateError::NoCharts { .. } => "E_NO_CHARTS",
            AggregateError::EmptyInput => "E_EMPTY_INPUT",
        }
    }
}

/// How sentence labels become per-entity counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CountingMode {
    /// Count charts with at least one positive sentence (default): with a
    /// chart-total offset this reads as a per-chart presence rate, and it
    /// bounds every count by the entity's chart total.
    #[default]
    #[serde(rename = "flagged_charts")]
    FlaggedCharts,
    /// Sum positive-sentence counts across charts.
    #[serde(rename = "sentences")]
    Sentences,
}

impl CountingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CountingMode::FlaggedCharts => "flagged_charts",
            CountingMode::Sentences => "sentences",
        }
    }
}

impl std::str::FromStr for CountingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flagged_charts" | "flagged-charts" => Ok(CountingMode::FlaggedCharts),
            "sentences" => Ok(CountingMode::Sentences),
            other => Err(format!("unknown counting mode {other:?} (expected flagged-charts or sentences)")),
        }
    }
}

/// Which kind of entity a row aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityLevel {
    #[serde(rename = "patient")]
    Patient,
    #[serde(rename = "provider")]
    Provider,
}

impl EntityLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityLevel::Patient => "patient",
            EntityLevel::Provider => "provider",
        }
    }
}

impl std::str::FromStr for EntityLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patient" => Ok(EntityLevel::Patient),
            "provider" => Ok(EntityLevel::Provider),
            other => Err(format!("unknown entity level {other:?} (expected patient or provider)")),
        }
    }
}

/// One positively classified (sentence, lexicon) pair within a note, as
/// produced by the scan stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositiveLabel {
    pub sentence_index: usize,
    pub lexicon: LexiconName,
}

/// Note-level rollup of sentence labels. Presence is derived from the
/// counts, so "present iff count > 0" holds by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteFlags {
    pub note_id: String,
    pub stigma_sentence_count: u32,
    pub doubt_sentence_count: u32,
}

impl NoteFlags {
    pub fn sentence_count(&self, outcome: Outcome) -> u32 {
        match outcome {
            Outcome::Stigma => self.stigma_sentence_count,
            Outcome::Doubt => self.doubt_sentence_count,
        }
    }

    pub fn present(&self, outcome: Outcome) -> bool {
        self.sentence_count(outcome) > 0
    }

    pub fn stigma_present(&self) -> bool {
        self.present(Outcome::Stigma)
    }

    pub fn doubt_present(&self) -> bool {
        self.present(Outcome::Doubt)
    }
}

/// Collapse the positive labels of one note into [`NoteFlags`]. A sentence
/// counts once per lexicon no matter how many of its terms matched.
pub fn aggregate_note(note_id: &str, positives: &[PositiveLabel]) -> NoteFlags {
    let mut stigma = BTreeSet::new();
    let mut doubt = BTreeSet::new();
    for label in positives {
        match label.lexicon {
            LexiconName::StigmatizingLabels => stigma.insert(label.sentence_index),
            LexiconName::DoubtMarkers => doubt.insert(label.sentence_index),
        };
    }
    NoteFlags {
        note_id: note_id.to_string(),
        stigma_sentence_count: stigma.len() as u32,
        doubt_sentence_count: doubt.len() as u32,
    }
}

/// Aggregate counts for one analysis entity (a patient or a provider).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityOutcome {
    pub entity_id: String,
    pub level: EntityLevel,
    pub stigma_count: u64,
    pub doubt_count: u64,
    /// Number of retained charts attributed to the entity; the models use
    /// ln(chart_total) as the offset, so this is always >= 1.
    pub chart_total: u64,
    /// Covariate level per predictor block, keyed by block name. Boolean
    /// covariates are stored as "absent"/"present".
    pub covariates: BTreeMap<String, String>,
}

impl EntityOutcome {
    pub fn count(&self, outcome: Outcome) -> u64 {
        match outcome {
            Outcome::Stigma => self.stigma_count,
            Outcome::Doubt => self.doubt_count,
        }
    }

    /// The entity's level for one predictor block, if recorded.
    pub fn covariate(&self, block: &str) -> Option<&str> {
        self.covariates.get(block).map(String::as_str)
    }
}

/// Aggregate the notes attributed to a single entity.
pub fn aggregate_entity(
    entity_id: &str,
    level: EntityLevel,
    notes: &[&NoteFlags],
    mode: CountingMode,
    covariates: BTreeMap<String, String>,
) -> Result<EntityOutcome, AggregateError> {
    if notes.is_empty() {
        return Err(AggregateError::NoCharts { entity_id: entity_id.to_string() });
    }
    let count = |outcome: Outcome| -> u64 {
        match mode {
            CountingMode::FlaggedCharts => notes.iter().filter(|n| n.present(outcome)).count() as u64,
            CountingMode::Sentences => notes.iter().map(|n| u64::from(n.sentence_count(outcome))).sum(),
        }
    };
    Ok(EntityOutcome {
        entity_id: entity_id.to_string(),
        level,
        stigma_count: count(Outcome::Stigma),
        doubt_count: count(Outcome::Doubt),
        chart_total: notes.len() as u64,
        covariates,
    })
}

/// Bookkeeping from an entity-level aggregation pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub level: EntityLevel,
    pub mode: CountingMode,
    pub notes_seen: usize,
    /// Notes with no entity attribution (for providers: missing caregiver
    /// id). They are excluded from this aggregation and counted here.
    pub notes_unattributed: usize,
    pub entities: usize,
}

/// Group note flags by entity and aggregate each group.
///
/// `attribution` maps note id -> entity id (`None` = unattributed, e.g. a
/// note with no caregiver id at the provider level); notes absent from the
/// map are treated as unattributed. `covariates` supplies each entity's
/// predictor levels; entities missing from it get an empty covariate map.
/// Output is sorted by entity id.
pub fn aggregate_entities(
    flags: &[NoteFlags],
    attribution: &HashMap<String, Option<String>>,
    covariates: &HashMap<String, BTreeMap<String, String>>,
    level: EntityLevel,
    mode: CountingMode,
) -> (Vec<EntityOutcome>, AggregateReport) {
    let mut groups: BTreeMap<&str, Vec<&NoteFlags>> = BTreeMap::new();
    let mut unattributed = 0usize;
    for flag in flags {
        match attribution.get(&flag.note_id) {
            Some(Some(entity)) => groups.entry(entity).or_default().push(flag),
            _ => unattributed += 1,
        }
    }
    let entities: Vec<EntityOutcome> = groups
        .into_iter()
        .map(|(entity_id, notes)| {
            let covs = covariates.get(entity_id).cloned().unwrap_or_default();
            aggregate_entity(entity_id, level, &notes, mode, covs)
                .expect("grouped entities have at least one note")
        })
        .collect();
    let report = AggregateReport {
        level,
        mode,
        notes_seen: flags.len(),
        notes_unattributed: unattributed,
        entities: entities.len(),
    };
    (entities, report)
}

/// One category's frequency within a descriptive table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub level: String,
    pub count: usize,
    pub percent: f64,
}

/// Frequencies for one covariate block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub block: String,
    pub rows: Vec<CategoryRow>,
}

/// Five-number-style summary of one count outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub name: String,
    pub mean: f64,
    /// Sample (n-1) standard deviation; NaN when n < 2.
    pub sd: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Table-1-shaped summary of an entity set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub n: usize,
    pub categories: Vec<CategoryBreakdown>,
    pub outcomes: Vec<OutcomeSummary>,
}

fn summarize(name: &str, values: &[f64]) -> OutcomeSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        f64::NAN
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("counts are finite"));
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };
    OutcomeSummary {
        name: name.to_string(),
        mean,
        sd,
        median,
        min: sorted[0],
        max: *sorted.last().expect("non-empty"),
    }
}

/// Build Table-1-style descriptives: per-block category frequencies (levels
/// in block order, plus any unlisted values after them) and mean/SD/median/
/// min/max for both outcomes and the chart total.
pub fn descriptive_table(
    entities: &[EntityOutcome],
    blocks: &[PredictorBlock],
) -> Result<DescriptiveStats, AggregateError> {
    if entities.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    let n = entities.len();
    let mut categories = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for entity in entities {
            if let Some(value) = entity.covariate(&block.name) {
                *counts.entry(value).or_insert(0) += 1;
            }
        }
        let mut rows = Vec::new();
        for level in &block.levels {
            let count = counts.remove(level.as_str()).unwrap_or(0);
            rows.push(CategoryRow {
                level: level.clone(),
                count,
                percent: 100.0 * count as f64 / n as f64,
            });
        }
        // Values outside the declared levels (should not happen after
        // recoding, but the table must not hide them).
        for (level, count) in counts {
            rows.push(CategoryRow {
                level: level.to_string(),
                count,
                percent: 100.0 * count as f64 / n as f64,
            });
        }
        categories.push(CategoryBreakdown { block: block.name.clone(), rows });
    }
    let collect = |f: fn(&EntityOutcome) -> u64| -> Vec<f64> {
        entities.iter().map(|e| f(e) as f64).collect()
    };
    let outcomes = vec![
        summarize("stigma_count", &collect(|e| e.stigma_count)),
        summarize("doubt_count", &collect(|e| e.doubt_count)),
        summarize("chart_total", &collect(|e| e.chart_total)),
    ];
    Ok(DescriptiveStats { n, categories, outcomes })
}
