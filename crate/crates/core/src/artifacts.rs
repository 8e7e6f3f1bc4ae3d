//! File artifacts: every stage's output as CSV plus a JSON run summary.
//!
//! All floats are written with Rust's shortest-round-trip `Display`, so
//! CSV round trips are bitwise exact (including `inf` and `NaN` cells,
//! which diverging rate ratios legitimately produce). The run summary
//! records a SHA-256 per artifact at write time; `verify_artifacts`
//! recomputes them so a report can refuse to render from files that do not
//! belong to its manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::aggregate::{EntityLevel, EntityOutcome, NoteFlags};
use crate::lexicon::LexiconName;
use crate::pipeline::{CorrelationSummary, FitSummary, MixedSummary, SentenceLabel};
use crate::report::{sha256_file, RunSummary};

pub const SENTENCE_LABELS_CSV: &str = "sentence_labels.csv";
pub const NOTE_FLAGS_CSV: &str = "note_flags.csv";
pub const ENTITIES_PATIENT_CSV: &str = "entities_patient.csv";
pub const ENTITIES_PROVIDER_CSV: &str = "entities_provider.csv";
pub const FITS_CSV: &str = "fits.csv";
pub const MIXED_CSV: &str = "mixed.csv";
pub const CORRELATIONS_CSV: &str = "correlations.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const REPORT_MD: &str = "report.md";

/// Artifact files hashed into the run summary, in write order.
const TRACKED: [&str; 7] = [
    SENTENCE_LABELS_CSV,
    NOTE_FLAGS_CSV,
    ENTITIES_PATIENT_CSV,
    ENTITIES_PROVIDER_CSV,
    FITS_CSV,
    MIXED_CSV,
    CORRELATIONS_CSV,
];

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{file} is missing required column {column:?}")]
    MissingColumn { file: String, column: String },
    #[error("{file} line {line}: {message}")]
    Format { file: String, line: usize, message: String },
    #[error(
        "artifact {file} does not match its manifest (recorded sha256 {recorded}, found {found})"
    )]
    ManifestMismatch { file: String, recorded: String, found: String },
    #[error("failed to access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV error in {file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("bad JSON in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

impl ArtifactError {
    pub fn code(&self) -> &'static str {
        match self {
            ArtifactError::MissingColumn { .. } => "E_MISSING_COLUMN",
            ArtifactError::Format { .. } => "E_FORMAT",
            ArtifactError::ManifestMismatch { .. } => "E_MANIFEST_MISMATCH",
            ArtifactError::Io { .. } => "E_IO",
            ArtifactError::Csv { .. } => "E_CSV",
            ArtifactError::Json { .. } => "E_JSON",
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ArtifactError {
    ArtifactError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Csv { file: path.display().to_string(), source }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, ArtifactError> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, ArtifactError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err(path))
}

/// Column index lookup over an exact-match header.
fn columns(
    path: &Path,
    headers: &csv::StringRecord,
    required: &[&str],
) -> Result<Vec<usize>, ArtifactError> {
    required
        .iter()
        .map(|name| {
            headers.iter().position(|h| h == *name).ok_or_else(|| ArtifactError::MissingColumn {
                file: path.display().to_string(),
                column: (*name).to_string(),
            })
        })
        .collect()
}

fn parse_cell<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    what: &str,
    raw: &str,
) -> Result<T, ArtifactError> {
    raw.parse().map_err(|_| ArtifactError::Format {
        file: path.display().to_string(),
        line,
        message: format!("bad {what} {raw:?}"),
    })
}

pub fn write_labels(dir: &Path, labels: &[SentenceLabel]) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(SENTENCE_LABELS_CSV);
    let mut w = writer(&path)?;
    w.write_record(["note_id", "sentence_index", "term", "lexicon", "probability", "positive"])
        .map_err(csv_err(&path))?;
    for label in labels {
        let probability = label.probability.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([
            label.note_id.as_str(),
            &label.sentence_index.to_string(),
            &label.term,
            label.lexicon.as_str(),
            &probability,
            &label.positive.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn read_labels(path: &Path) -> Result<Vec<SentenceLabel>, ArtifactError> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let idx = columns(
        path,
        &headers,
        &["note_id", "sentence_index", "term", "lexicon", "probability", "positive"],
    )?;
    let mut labels = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let line = i + 2;
        let cell = |j: usize| record.get(idx[j]).unwrap_or("");
        let lexicon: LexiconName = parse_cell(path, line, "lexicon", cell(3))?;
        let probability = match cell(4) {
            "" => None,
            raw => Some(parse_cell(path, line, "probability", raw)?),
        };
        labels.push(SentenceLabel {
            note_id: cell(0).to_string(),
            sentence_index: parse_cell(path, line, "sentence_index", cell(1))?,
            term: cell(2).to_string(),
            lexicon,
            probability,
            positive: parse_cell(path, line, "positive", cell(5))?,
        });
    }
    Ok(labels)
}

pub fn write_flags(dir: &Path, flags: &[NoteFlags]) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(NOTE_FLAGS_CSV);
    let mut w = writer(&path)?;
    w.write_record(["note_id", "stigma_sentence_count", "doubt_sentence_count"])
        .map_err(csv_err(&path))?;
    for flag in flags {
        w.write_record([
            flag.note_id.as_str(),
            &flag.stigma_sentence_count.to_string(),
            &flag.doubt_sentence_count.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn read_flags(path: &Path) -> Result<Vec<NoteFlags>, ArtifactError> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let idx = columns(path, &headers, &["note_id", "stigma_sentence_count", "doubt_sentence_count"])?;
    let mut flags = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let line = i + 2;
        let cell = |j: usize| record.get(idx[j]).unwrap_or("");
        flags.push(NoteFlags {
            note_id: cell(0).to_string(),
            stigma_sentence_count: parse_cell(path, line, "stigma_sentence_count", cell(1))?,
            doubt_sentence_count: parse_cell(path, line, "doubt_sentence_count", cell(2))?,
        });
    }
    Ok(flags)
}

pub fn entities_filename(level: EntityLevel) -> &'static str {
    match level {
        EntityLevel::Patient => ENTITIES_PATIENT_CSV,
        EntityLevel::Provider => ENTITIES_PROVIDER_CSV,
    }
}

/// Fixed columns, then the sorted union of covariate keys; an empty cell
/// means the entity does not carry that key.
pub fn write_entities(
    dir: &Path,
    level: EntityLevel,
    entities: &[EntityOutcome],
) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(entities_filename(level));
    let covariate_columns: BTreeSet<&str> = entities
        .iter()
        .flat_map(|e| e.covariates.keys().map(String::as_str))
        .collect();
    let mut w = writer(&path)?;
    let mut header =
        vec!["entity_id", "level", "stigma_count", "doubt_count", "chart_total"];
    header.extend(covariate_columns.iter().copied());
    w.write_record(&header).map_err(csv_err(&path))?;
    for entity in entities {
        let mut record = vec![
            entity.entity_id.clone(),
            entity.level.as_str().to_string(),
            entity.stigma_count.to_string(),
            entity.doubt_count.to_string(),
            entity.chart_total.to_string(),
        ];
        for column in &covariate_columns {
            record.push(entity.covariates.get(*column).cloned().unwrap_or_default());
        }
        w.write_record(&record).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn read_entities(path: &Path) -> Result<Vec<EntityOutcome>, ArtifactError> {
    let mut r = reader(path)?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let fixed = ["entity_id", "level", "stigma_count", "doubt_count", "chart_total"];
    let idx = columns(path, &headers, &fixed)?;
    let covariate_columns: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !idx.contains(i))
        .map(|(i, name)| (i, name.to_string()))
        .collect();
    let mut entities = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let line = i + 2;
        let cell = |j: usize| record.get(idx[j]).unwrap_or("");
        let level = match cell(1) {
            "patient" => EntityLevel::Patient,
            "provider" => EntityLevel::Provider,
            other => {
                return Err(ArtifactError::Format {
                    file: path.display().to_string(),
                    line,
                    message: format!("bad level {other:?}"),
                })
            }
        };
        let covariates = covariate_columns
            .iter()
            .filter_map(|(j, name)| match record.get(*j).unwrap_or("") {
                "" => None,
                value => Some((name.clone(), value.to_string())),
            })
            .collect();
        entities.push(EntityOutcome {
            entity_id: cell(0).to_string(),
            level,
            stigma_count: parse_cell(path, line, "stigma_count", cell(2))?,
            doubt_count: parse_cell(path, line, "doubt_count", cell(3))?,
            chart_total: parse_cell(path, line, "chart_total", cell(4))?,
            covariates,
        });
    }
    Ok(entities)
}

/// One row per rate ratio; converged reflects the whole fit the row came
/// from. Fits that failed outright contribute no rows (their error lives in
/// the run summary).
pub fn write_fits(dir: &Path, fits: &[FitSummary]) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(FITS_CSV);
    let mut w = writer(&path)?;
    w.write_record([
        "outcome",
        "level",
        "predictor_block",
        "term_level",
        "rr",
        "ci_low",
        "ci_high",
        "p",
        "stars",
        "n_entities",
        "events",
        "converged",
        "status",
    ])
    .map_err(csv_err(&path))?;
    for fit in fits {
        for rr in &fit.rate_ratios {
            w.write_record([
                fit.outcome.as_str(),
                fit.level.as_str(),
                rr.block.as_str(),
                rr.level.as_str(),
                &rr.rr.to_string(),
                &rr.ci_low.to_string(),
                &rr.ci_high.to_string(),
                &rr.p_value.to_string(),
                &rr.stars,
                &rr.n_entities.to_string(),
                &rr.events.to_string(),
                &fit.converged.to_string(),
                rr.status.flag(),
            ])
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn write_mixed(dir: &Path, mixed: &[MixedSummary]) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(MIXED_CSV);
    let mut w = writer(&path)?;
    w.write_record([
        "level",
        "outcome",
        "sigma2",
        "median_irr",
        "intercept",
        "loglik",
        "quadrature_points",
        "n_clusters",
        "n_obs",
        "converged",
        "error",
    ])
    .map_err(csv_err(&path))?;
    for row in mixed {
        let record: [String; 11] = match &row.fit {
            Some(fit) => [
                row.level.as_str().to_string(),
                row.outcome.as_str().to_string(),
                fit.sigma2.to_string(),
                fit.median_irr.to_string(),
                fit.intercept.to_string(),
                fit.loglik.to_string(),
                fit.quadrature_points.to_string(),
                fit.n_clusters.to_string(),
                fit.n_obs.to_string(),
                fit.converged.to_string(),
                String::new(),
            ],
            None => [
                row.level.as_str().to_string(),
                row.outcome.as_str().to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                "false".to_string(),
                row.error.clone().unwrap_or_default(),
            ],
        };
        w.write_record(&record).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn write_correlations(
    dir: &Path,
    correlations: &[CorrelationSummary],
) -> Result<PathBuf, ArtifactError> {
    let path = dir.join(CORRELATIONS_CSV);
    let mut w = writer(&path)?;
    w.write_record(["level", "rho", "p_value", "n", "error"]).map_err(csv_err(&path))?;
    for row in correlations {
        w.write_record([
            row.level.as_str(),
            &row.rho.to_string(),
            &row.p_value.to_string(),
            &row.n.to_string(),
            row.error.as_deref().unwrap_or(""),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Hash every tracked artifact present in `dir` into the summary, then
/// write `summary.json`.
pub fn write_summary(dir: &Path, summary: &mut RunSummary) -> Result<PathBuf, ArtifactError> {
    summary.artifacts.clear();
    for name in TRACKED {
        let path = dir.join(name);
        if path.exists() {
            let hash = sha256_file(&path).map_err(|e| io_err(&path, e))?;
            summary.artifacts.insert(name.to_string(), hash);
        }
    }
    let path = dir.join(SUMMARY_JSON);
    let json = serde_json::to_string_pretty(summary)
        .map_err(|source| ArtifactError::Json { path: path.display().to_string(), source })?;
    std::fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary, ArtifactError> {
    let path = dir.join(SUMMARY_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|source| ArtifactError::Json { path: path.display().to_string(), source })
}

/// Recompute every recorded artifact hash; any missing or altered file is a
/// manifest mismatch.
pub fn verify_artifacts(dir: &Path, summary: &RunSummary) -> Result<(), ArtifactError> {
    for (name, recorded) in &summary.artifacts {
        let path = dir.join(name);
        let found = match sha256_file(&path) {
            Ok(hash) => hash,
            Err(_) => "missing".to_string(),
        };
        if &found != recorded {
            return Err(ArtifactError::ManifestMismatch {
                file: name.clone(),
                recorded: recorded.clone(),
                found,
            });
        }
    }
    Ok(())
}
