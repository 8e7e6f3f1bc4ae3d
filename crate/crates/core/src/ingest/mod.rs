//! MIMIC-III-shaped CSV ingestion: linked notes, patients, and providers
//! with all analysis recodes applied.
//!
//! Loading is strict about structure — a missing required column or a
//! colliding id is an error — but lenient about row content: rows with
//! unparseable required fields are excluded and counted in the
//! [`LoadReport`], never silently dropped. Patient exclusions (no
//! admissions, age below 13, unparseable dates) are likewise counted per
//! cause so a run can account for every input row.
//!
//! Five tables are read (comma-delimited, RFC-4180 quoting, header row):
//!
//! | file           | required columns                                              |
//! |----------------|---------------------------------------------------------------|
//! | notes.csv      | ROW_ID, SUBJECT_ID, HADM_ID, CGID, CATEGORY, CHARTTIME, TEXT  |
//! | patients.csv   | SUBJECT_ID, GENDER, DOB                                       |
//! | admissions.csv | SUBJECT_ID, HADM_ID, INSURANCE, ETHNICITY, ADMITTIME          |
//! | caregivers.csv | CGID, LABEL                                                   |
//! | diagnoses.csv  | SUBJECT_ID, ICD9_CODE                                         |
//!
//! Loading is single-threaded; everything it produces is immutable and safe
//! to share read-only across scanning threads.

mod recode;

pub use recode::{
    condition_label, derive_age_category, derive_diagnosis_flags, normalize_icd9,
    recategorize_insurance, AgeCategory, CodeMap, DiagnosisFlags, Ethnicity, EthnicityMap,
    Gender, Insurance, ProviderMap, ProviderType, CONDITIONS,
};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{file}: missing required column {column:?}")]
    MissingColumn { file: String, column: String },
    #[error("{file}: duplicate id {id:?}")]
    IdCollision { file: String, id: String },
    #[error("patient {patient_id} has no admission rows")]
    NoAdmissions { patient_id: String },
    #[error("unknown insurance label {label:?}")]
    UnknownInsuranceLabel { label: String },
    #[error("age {age} is below the youngest supported category (13)")]
    AgeBelowRange { age: f64 },
    #[error("{origin} line {line}: {message}")]
    BadMap {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::MissingColumn { .. } => "E_MISSING_COLUMN",
            IngestError::IdCollision { .. } => "E_ID_COLLISION",
            IngestError::NoAdmissions { .. } => "E_NO_ADMISSIONS",
            IngestError::UnknownInsuranceLabel { .. } => "E_UNKNOWN_INSURANCE",
            IngestError::AgeBelowRange { .. } => "E_AGE_BELOW_RANGE",
            IngestError::BadMap { .. } => "E_BAD_MAP",
            IngestError::Csv { .. } => "E_CSV",
            IngestError::Io { .. } => "E_IO",
        }
    }
}

/// One clinical note (one row of notes.csv that survived load filtering).
#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub note_id: String,
    pub patient_id: String,
    pub admission_id: Option<String>,
    pub provider_id: Option<String>,
    pub category: String,
    pub charttime: Option<NaiveDateTime>,
    /// Free text, stored exactly as read (dedup compares a trailing-trimmed
    /// view but never rewrites the text).
    pub text: String,
}

/// One patient with all recodes applied.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub gender: Gender,
    /// Age in years at first admission; de-identified ages above 120 are
    /// stored clamped to 90 (decision D4), matching the category.
    pub age_years: f64,
    pub age_category: AgeCategory,
    pub ethnicity: Ethnicity,
    /// `None` when the raw label was unrecognized: the patient stays in
    /// every other analysis but is excluded from insurance regressions,
    /// and the label is reported in [`LoadReport::unknown_insurance_labels`].
    pub insurance: Option<Insurance>,
    pub diagnosis_flags: DiagnosisFlags,
}

/// One caregiver with the provider-type recode applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRecord {
    pub provider_id: String,
    pub raw_label: String,
    pub provider_type: ProviderType,
}

/// One admissions-table row (kept in table order per patient; the
/// first-appearing row supplies insurance and ethnicity).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionRow {
    pub patient_id: String,
    pub admission_id: String,
    pub insurance: String,
    pub ethnicity: String,
    pub admittime: Option<NaiveDateTime>,
}

/// Pick the insurance/ethnicity source values for one patient: the first
/// row in admission-table order (not the earliest admission).
pub fn resolve_admission_attrs<'a>(
    patient_id: &str,
    rows: &'a [AdmissionRow],
) -> Result<(&'a str, &'a str), IngestError> {
    let first = rows.first().ok_or_else(|| IngestError::NoAdmissions {
        patient_id: patient_id.to_string(),
    })?;
    Ok((&first.insurance, &first.ethnicity))
}

/// The three recode tables used during loading; [`Default`] gives the
/// shipped versions, each overridable from a file.
#[derive(Debug, Clone)]
pub struct RecodeMaps {
    pub ethnicity: EthnicityMap,
    pub provider: ProviderMap,
    pub codes: CodeMap,
}

impl Default for RecodeMaps {
    fn default() -> Self {
        RecodeMaps {
            ethnicity: EthnicityMap::shipped(),
            provider: ProviderMap::shipped(),
            codes: CodeMap::shipped(),
        }
    }
}

/// Paths to the five input tables.
#[derive(Debug, Clone)]
pub struct TablePaths {
    pub notes: PathBuf,
    pub patients: PathBuf,
    pub admissions: PathBuf,
    pub caregivers: PathBuf,
    pub diagnoses: PathBuf,
}

impl TablePaths {
    /// Conventional file names inside one directory (the layout the
    /// synthetic-corpus generator writes).
    pub fn in_dir(dir: &Path) -> Self {
        TablePaths {
            notes: dir.join("notes.csv"),
            patients: dir.join("patients.csv"),
            admissions: dir.join("admissions.csv"),
            caregivers: dir.join("caregivers.csv"),
            diagnoses: dir.join("diagnoses.csv"),
        }
    }
}

/// Per-cause accounting for everything the loader and the dedup/filter pass
/// kept, skipped, or excluded. Serialized into the run summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub notes_read: usize,
    pub notes_kept: usize,
    /// Notes with a blank ROW_ID/SUBJECT_ID or empty TEXT.
    pub notes_skipped_invalid: usize,
    /// Filled by [`dedup_and_filter`]: notes dropped for an excluded
    /// category, and exact-duplicate notes dropped per patient.
    pub notes_removed_excluded_category: usize,
    pub notes_removed_duplicate: usize,
    pub patients_read: usize,
    pub patients_kept: usize,
    /// Patients with an unparseable GENDER or DOB, or no parseable
    /// ADMITTIME to compute an age from.
    pub patients_skipped_invalid: usize,
    pub patients_excluded_no_admissions: usize,
    pub patients_excluded_age_below_range: usize,
    /// Patients whose insurance label was unrecognized (kept, but with no
    /// insurance category).
    pub patients_unknown_insurance: usize,
    pub unknown_insurance_labels: BTreeSet<String>,
    /// Distinct SUBJECT_IDs that appear in notes but not in the patients
    /// table (decision D5: excluded from patient-level analyses).
    pub patients_missing_from_patients_table: usize,
    pub admissions_read: usize,
    pub admissions_skipped_invalid: usize,
    pub caregivers_read: usize,
    pub caregivers_skipped_invalid: usize,
    /// Duplicate CGIDs in the caregivers table (first row kept).
    pub caregivers_duplicate_ids: usize,
    /// Distinct CGIDs referenced by notes with no caregivers row; a
    /// provider record with type Unknown is synthesized for each.
    pub providers_missing_from_caregivers_table: usize,
    pub diagnoses_read: usize,
    pub diagnoses_skipped_invalid: usize,
}

/// Linked, recategorized corpus: the loader's output and the scanning
/// pipeline's input.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Notes in input-file order.
    pub notes: Vec<Note>,
    pub patients: BTreeMap<String, PatientRecord>,
    pub providers: BTreeMap<String, ProviderRecord>,
    pub report: LoadReport,
}

/// Default excluded note categories for [`dedup_and_filter`].
pub const DEFAULT_EXCLUDED_CATEGORIES: [&str; 2] = ["EEG", "Radiology"];

/// Parse a MIMIC-style timestamp ("2101-10-20 19:08:00"; bare dates
/// accepted). Blank or malformed values become `None`.
fn parse_datetime(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S")
        .ok()
        .or_else(|| {
            NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// Open a CSV file and resolve the required columns (exact, case-sensitive
/// header match after trimming). Returns the display name used in errors,
/// the column indexes in `required` order, and the reader.
fn open_table(
    path: &Path,
    required: &[&str],
) -> Result<(String, Vec<usize>, csv::Reader<std::fs::File>), IngestError> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|source| IngestError::Csv {
            file: file.clone(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            file: file.clone(),
            source,
        })?
        .clone();
    let cols = required
        .iter()
        .map(|col| {
            headers
                .iter()
                .position(|h| h.trim() == *col)
                .ok_or_else(|| IngestError::MissingColumn {
                    file: file.clone(),
                    column: (*col).to_string(),
                })
        })
        .collect::<Result<Vec<usize>, IngestError>>()?;
    Ok((file, cols, reader))
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize) -> &'r str {
    record.get(idx).unwrap_or("")
}

fn non_empty(value: &str) -> Option<String> {
    let trimmed = value.trim();
    (!trimmed.is_empty()).then(|| trimmed.to_string())
}

/// Read and link all five tables, applying every recode.
///
/// Structural problems (missing columns, duplicate patient or note ids) are
/// errors; content problems (unparseable fields, missing cross-table rows)
/// are counted per cause in the returned corpus's [`LoadReport`].
pub fn load_tables(paths: &TablePaths, maps: &RecodeMaps) -> Result<Corpus, IngestError> {
    let mut report = LoadReport::default();

    // Caregivers: CGID -> provider record (first row wins on duplicates).
    let mut providers: BTreeMap<String, ProviderRecord> = BTreeMap::new();
    {
        let (file, cols, mut reader) = open_table(&paths.caregivers, &["CGID", "LABEL"])?;
        for record in reader.records() {
            let record = record.map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?;
            report.caregivers_read += 1;
            let Some(id) = non_empty(field(&record, cols[0])) else {
                report.caregivers_skipped_invalid += 1;
                continue;
            };
            if providers.contains_key(&id) {
                report.caregivers_duplicate_ids += 1;
                continue;
            }
            let raw_label = field(&record, cols[1]).trim().to_string();
            let provider_type = maps.provider.categorize(&raw_label);
            providers.insert(
                id.clone(),
                ProviderRecord {
                    provider_id: id,
                    raw_label,
                    provider_type,
                },
            );
        }
    }

    // Admissions: grouped per patient in table order.
    let mut admissions: HashMap<String, Vec<AdmissionRow>> = HashMap::new();
    {
        let (file, cols, mut reader) = open_table(
            &paths.admissions,
            &["SUBJECT_ID", "HADM_ID", "INSURANCE", "ETHNICITY", "ADMITTIME"],
        )?;
        for record in reader.records() {
            let record = record.map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?;
            report.admissions_read += 1;
            let Some(patient_id) = non_empty(field(&record, cols[0])) else {
                report.admissions_skipped_invalid += 1;
                continue;
            };
            admissions.entry(patient_id.clone()).or_default().push(AdmissionRow {
                patient_id,
                admission_id: field(&record, cols[1]).trim().to_string(),
                insurance: field(&record, cols[2]).trim().to_string(),
                ethnicity: field(&record, cols[3]).trim().to_string(),
                admittime: parse_datetime(field(&record, cols[4])),
            });
        }
    }

    // Diagnoses: raw code lists per patient (normalized during matching).
    let mut codes: HashMap<String, Vec<String>> = HashMap::new();
    {
        let (file, cols, mut reader) = open_table(&paths.diagnoses, &["SUBJECT_ID", "ICD9_CODE"])?;
        for record in reader.records() {
            let record = record.map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?;
            report.diagnoses_read += 1;
            let (Some(patient_id), Some(code)) = (
                non_empty(field(&record, cols[0])),
                non_empty(field(&record, cols[1])),
            ) else {
                report.diagnoses_skipped_invalid += 1;
                continue;
            };
            codes.entry(patient_id).or_default().push(code);
        }
    }

    // Patients: recode gender/age/ethnicity/insurance/diagnoses. Exclusions
    // here never remove the id from `patient_table_ids`, which tracks what
    // the table itself declared (used for the D5 orphan count below).
    let mut patients: BTreeMap<String, PatientRecord> = BTreeMap::new();
    let mut patient_table_ids: HashSet<String> = HashSet::new();
    {
        let (file, cols, mut reader) =
            open_table(&paths.patients, &["SUBJECT_ID", "GENDER", "DOB"])?;
        for record in reader.records() {
            let record = record.map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?;
            report.patients_read += 1;
            let Some(patient_id) = non_empty(field(&record, cols[0])) else {
                report.patients_skipped_invalid += 1;
                continue;
            };
            if !patient_table_ids.insert(patient_id.clone()) {
                return Err(IngestError::IdCollision {
                    file,
                    id: patient_id,
                });
            }
            let Some(gender) = Gender::from_raw(field(&record, cols[1])) else {
                report.patients_skipped_invalid += 1;
                continue;
            };
            let Some(dob) = parse_datetime(field(&record, cols[2])) else {
                report.patients_skipped_invalid += 1;
                continue;
            };
            let Some(rows) = admissions.get(&patient_id) else {
                report.patients_excluded_no_admissions += 1;
                continue;
            };
            let (insurance_raw, ethnicity_raw) = resolve_admission_attrs(&patient_id, rows)?;
            let Some(first_admit) = rows.iter().filter_map(|r| r.admittime).min() else {
                report.patients_skipped_invalid += 1;
                continue;
            };
            let age_years = (first_admit - dob).num_days() as f64 / 365.25;
            let age_category = match derive_age_category(age_years) {
                Ok(category) => category,
                Err(IngestError::AgeBelowRange { .. }) => {
                    report.patients_excluded_age_below_range += 1;
                    continue;
                }
                Err(other) => return Err(other),
            };
            let insurance = match recategorize_insurance(insurance_raw) {
                Ok(category) => Some(category),
                Err(IngestError::UnknownInsuranceLabel { label }) => {
                    report.patients_unknown_insurance += 1;
                    report.unknown_insurance_labels.insert(label);
                    None
                }
                Err(other) => return Err(other),
            };
            let ethnicity = maps.ethnicity.categorize(ethnicity_raw);
            let diagnosis_flags = derive_diagnosis_flags(
                codes.get(&patient_id).map(Vec::as_slice).unwrap_or(&[]),
                &maps.codes,
            );
            report.patients_kept += 1;
            patients.insert(
                patient_id.clone(),
                PatientRecord {
                    patient_id,
                    gender,
                    age_years: if age_years > 120.0 { 90.0 } else { age_years },
                    age_category,
                    ethnicity,
                    insurance,
                    diagnosis_flags,
                },
            );
        }
    }

    // Notes, preserving input order. Duplicate note ids are structural
    // corruption, not content noise, so they are an error.
    let mut notes: Vec<Note> = Vec::new();
    let mut seen_note_ids: HashSet<String> = HashSet::new();
    {
        let (file, cols, mut reader) = open_table(
            &paths.notes,
            &["ROW_ID", "SUBJECT_ID", "HADM_ID", "CGID", "CATEGORY", "CHARTTIME", "TEXT"],
        )?;
        for record in reader.records() {
            let record = record.map_err(|source| IngestError::Csv {
                file: file.clone(),
                source,
            })?;
            report.notes_read += 1;
            let text = field(&record, cols[6]);
            let (Some(note_id), Some(patient_id)) = (
                non_empty(field(&record, cols[0])),
                non_empty(field(&record, cols[1])),
            ) else {
                report.notes_skipped_invalid += 1;
                continue;
            };
            if text.trim().is_empty() {
                report.notes_skipped_invalid += 1;
                continue;
            }
            if !seen_note_ids.insert(note_id.clone()) {
                return Err(IngestError::IdCollision { file, id: note_id });
            }
            notes.push(Note {
                note_id,
                patient_id,
                admission_id: non_empty(field(&record, cols[2])),
                provider_id: non_empty(field(&record, cols[3])),
                category: field(&record, cols[4]).trim().to_string(),
                charttime: parse_datetime(field(&record, cols[5])),
                text: text.to_string(),
            });
        }
    }
    report.notes_kept = notes.len();

    // D5: notes can reference patients the patients table never declared;
    // those patients are excluded from patient-level analyses and counted.
    let orphan_patients: BTreeSet<&str> = notes
        .iter()
        .map(|n| n.patient_id.as_str())
        .filter(|id| !patient_table_ids.contains(*id))
        .collect();
    report.patients_missing_from_patients_table = orphan_patients.len();

    // Notes can likewise reference caregivers missing from the caregivers
    // table; synthesize an Unknown-type record so attribution still works
    // (Unknown providers are excluded from provider regressions anyway).
    let missing_providers: BTreeSet<&str> = notes
        .iter()
        .filter_map(|n| n.provider_id.as_deref())
        .filter(|id| !providers.contains_key(*id))
        .collect();
    report.providers_missing_from_caregivers_table = missing_providers.len();
    for id in missing_providers {
        providers.insert(
            id.to_string(),
            ProviderRecord {
                provider_id: id.to_string(),
                raw_label: String::new(),
                provider_type: ProviderType::Unknown,
            },
        );
    }

    Ok(Corpus {
        notes,
        patients,
        providers,
        report,
    })
}

/// Sort key for picking which duplicate to keep: charttime ascending with
/// missing charttimes last, then note id (shorter first, then
/// lexicographic, so numeric ids order numerically).
fn dedup_order_key(note: &Note) -> (bool, Option<NaiveDateTime>, usize, &str) {
    (
        note.charttime.is_none(),
        note.charttime,
        note.note_id.len(),
        &note.note_id,
    )
}

/// Drop notes in excluded categories, then exact-duplicate note texts per
/// patient (trailing whitespace ignored for comparison; the first
/// occurrence by charttime then note id is kept). Surviving notes stay in
/// input order; removal counts accumulate in the corpus report, so the
/// operation is idempotent.
pub fn dedup_and_filter(mut corpus: Corpus, excluded_categories: &[String]) -> Corpus {
    let excluded: HashSet<String> = excluded_categories
        .iter()
        .map(|c| c.trim().to_ascii_uppercase())
        .collect();
    let before = corpus.notes.len();
    corpus
        .notes
        .retain(|n| !excluded.contains(&n.category.trim().to_ascii_uppercase()));
    corpus.report.notes_removed_excluded_category += before - corpus.notes.len();

    let before = corpus.notes.len();
    let mut keep = vec![false; corpus.notes.len()];
    {
        let mut best: HashMap<(&str, &str), usize> = HashMap::new();
        for (i, note) in corpus.notes.iter().enumerate() {
            let key = (note.patient_id.as_str(), note.text.trim_end());
            match best.entry(key) {
                std::collections::hash_map::Entry::Occupied(mut entry) => {
                    if dedup_order_key(note) < dedup_order_key(&corpus.notes[*entry.get()]) {
                        *entry.get_mut() = i;
                    }
                }
                std::collections::hash_map::Entry::Vacant(entry) => {
                    entry.insert(i);
                }
            }
        }
        for i in best.into_values() {
            keep[i] = true;
        }
    }
    let mut index = 0;
    corpus.notes.retain(|_| {
        let kept = keep[index];
        index += 1;
        kept
    });
    corpus.report.notes_removed_duplicate += before - corpus.notes.len();
    corpus.report.notes_kept = corpus.notes.len();
    corpus
}

/// [`dedup_and_filter`] with [`DEFAULT_EXCLUDED_CATEGORIES`].
pub fn dedup_and_filter_default(corpus: Corpus) -> Corpus {
    let excluded: Vec<String> = DEFAULT_EXCLUDED_CATEGORIES
        .iter()
        .map(|c| c.to_string())
        .collect();
    dedup_and_filter(corpus, &excluded)
}
