//! Seeded synthetic MIMIC-III-shaped corpora with known ground truth.
//!
//! The generator draws per-note stigma/doubt flags from a log-linear model
//! — `log rate = log(base) + Σ log(RR)·covariate + b`, with the patient
//! intercept `b ~ Normal(0, σ²)` — and injects one uniformly chosen lexicon
//! term into a filler sentence of each flagged note. Everything else in a
//! note is built from a synthetic filler vocabulary (`fill000`, `fill001`,
//! …) that shares no word with either lexicon, so the injected term is the
//! only detectable feature and the ground truth stays exact.
//!
//! Covariates are materialized through the real ingestion tables — `male`
//! flips the GENDER column, condition covariates add a representative ICD-9
//! diagnosis row — so a generated corpus exercises recategorization and
//! flag derivation end to end instead of bypassing them. All five CSVs plus
//! a ground-truth JSONL sidecar are written; output is byte-identical for a
//! given config (generation is single-threaded and every draw order is
//! fixed).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{TablePaths, CONDITIONS};
use crate::lexicon::Lexicon;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic-corpus rates: {message}")]
    InvalidRates { message: String },
    #[error("{origin} line {line}: {message}")]
    BadConfig {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("unknown covariate {name:?} (expected \"male\" or a condition name)")]
    UnknownCovariate { name: String },
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            SynthError::InvalidRates { .. } => "E_INVALID_RATES",
            SynthError::BadConfig { .. } => "E_BAD_CONFIG",
            SynthError::UnknownCovariate { .. } => "E_UNKNOWN_COVARIATE",
            SynthError::Io { .. } => "E_IO",
        }
    }
}

/// One binary patient covariate with its prevalence and true rate ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    /// "male" (drives the GENDER column) or a condition name from
    /// [`CONDITIONS`] (drives a diagnosis row).
    pub name: String,
    pub prevalence: f64,
    pub stigma_rr: f64,
    pub doubt_rr: f64,
}

/// Generator configuration; the seed fully determines the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: usize,
    /// Per-patient note count, uniform inclusive.
    pub notes_per_patient: (usize, usize),
    /// Baseline per-note flag probability (applies to both outcomes).
    pub base_rate: f64,
    /// Patient random-intercept variance on the log-rate scale.
    pub sigma2: f64,
    pub covariates: Vec<CovariateSpec>,
    /// Size of the synthetic filler vocabulary.
    pub filler_vocab: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_patients: 500,
            notes_per_patient: (5, 15),
            base_rate: 0.08,
            sigma2: 0.0,
            covariates: Vec::new(),
            filler_vocab: 120,
        }
    }
}

impl SynthConfig {
    /// Validate rates and covariate names.
    ///
    /// The deterministic part of the rate (base × worst-case RR product)
    /// must stay below 1; a nonzero σ² can still push individual patients
    /// over, which generation clamps at 0.99 (documented bias at extreme
    /// intercepts, irrelevant for σ² = 0 oracle runs).
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |message: String| Err(SynthError::InvalidRates { message });
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        let (lo, hi) = self.notes_per_patient;
        if lo < 1 || lo > hi {
            return bad(format!("notes_per_patient range ({lo}, {hi}) is invalid"));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return bad(format!("base_rate {} must be in (0, 1)", self.base_rate));
        }
        if !(self.sigma2 >= 0.0) {
            return bad(format!("sigma2 {} must be non-negative", self.sigma2));
        }
        if self.filler_vocab < 10 {
            return bad("filler_vocab must be at least 10".into());
        }
        let mut worst_stigma = self.base_rate;
        let mut worst_doubt = self.base_rate;
        for c in &self.covariates {
            if c.name != "male" && !CONDITIONS.contains(&c.name.as_str()) {
                return Err(SynthError::UnknownCovariate {
                    name: c.name.clone(),
                });
            }
            if !(0.0..=1.0).contains(&c.prevalence) {
                return bad(format!("prevalence {} for {} must be in [0, 1]", c.prevalence, c.name));
            }
            if !(c.stigma_rr > 0.0) || !(c.doubt_rr > 0.0) {
                return bad(format!("rate ratios for {} must be positive", c.name));
            }
            worst_stigma *= c.stigma_rr.max(1.0);
            worst_doubt *= c.doubt_rr.max(1.0);
        }
        if worst_stigma >= 1.0 || worst_doubt >= 1.0 {
            return bad(format!(
                "base_rate times worst-case rate-ratio product reaches {:.3} (stigma) / {:.3} (doubt); must stay below 1",
                worst_stigma, worst_doubt
            ));
        }
        Ok(())
    }

    /// Parse a key=value config file.
    ///
    /// Keys: `seed`, `n_patients`, `notes_min`, `notes_max`, `base_rate`,
    /// `sigma2`, `filler_vocab`, and repeatable
    /// `covariate=<name>,<prevalence>,<stigma_rr>,<doubt_rr>` lines.
    /// Unset keys keep their defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self, SynthError> {
        let mut config = SynthConfig::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line_no = idx + 1;
            let bad = |message: String| SynthError::BadConfig {
                origin: origin.to_string(),
                line: line_no,
                message,
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(bad("expected key=value".to_string()));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => config.seed = value.parse().map_err(|_| bad(format!("bad seed {value:?}")))?,
                "n_patients" => {
                    config.n_patients =
                        value.parse().map_err(|_| bad(format!("bad n_patients {value:?}")))?
                }
                "notes_min" => {
                    config.notes_per_patient.0 =
                        value.parse().map_err(|_| bad(format!("bad notes_min {value:?}")))?
                }
                "notes_max" => {
                    config.notes_per_patient.1 =
                        value.parse().map_err(|_| bad(format!("bad notes_max {value:?}")))?
                }
                "base_rate" => {
                    config.base_rate =
                        value.parse().map_err(|_| bad(format!("bad base_rate {value:?}")))?
                }
                "sigma2" => {
                    config.sigma2 = value.parse().map_err(|_| bad(format!("bad sigma2 {value:?}")))?
                }
                "filler_vocab" => {
                    config.filler_vocab =
                        value.parse().map_err(|_| bad(format!("bad filler_vocab {value:?}")))?
                }
                "covariate" => {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 4 {
                        return Err(bad(format!(
                            "expected covariate=<name>,<prevalence>,<stigma_rr>,<doubt_rr>, got {value:?}"
                        )));
                    }
                    let parse_f = |s: &str, what: &str| -> Result<f64, SynthError> {
                        s.parse().map_err(|_| bad(format!("bad {what} {s:?}")))
                    };
                    config.covariates.push(CovariateSpec {
                        name: parts[0].to_string(),
                        prevalence: parse_f(parts[1], "prevalence")?,
                        stigma_rr: parse_f(parts[2], "stigma_rr")?,
                        doubt_rr: parse_f(parts[3], "doubt_rr")?,
                    });
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Per-patient ground truth written to the JSONL sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub entity: String,
    pub level: String,
    /// True per-note flag probabilities after covariates and intercept.
    pub stigma_rate: f64,
    pub doubt_rate: f64,
    /// The drawn patient random intercept (log scale).
    pub intercept: f64,
    pub covariates: BTreeMap<String, bool>,
    pub notes: usize,
    pub stigma_flagged: usize,
    pub doubt_flagged: usize,
}

/// Where everything was written.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub tables: TablePaths,
    pub ground_truth: PathBuf,
    pub notes_written: usize,
    pub patients_written: usize,
}

/// Representative ICD-9 code per condition, used to materialize condition
/// covariates through the diagnoses table (each verified against the
/// shipped code map by the closure test).
fn condition_code(name: &str) -> &'static str {
    match name {
        "sickle_cell" => "28260",
        "oud" => "30400",
        "obesity" => "27800",
        "hiv_symptomatic" => "042",
        "sud" => "30390",
        "schizophrenia" => "29530",
        "mood_disorder" => "29620",
        "anxiety" => "30000",
        "ptsd" => "30981",
        "suicide_attempt" => "E9500",
        "suicidal_ideation" => "V6284",
        other => unreachable!("covariate {other} validated earlier"),
    }
}

const ETHNICITY_POOL: [&str; 6] = [
    "WHITE",
    "BLACK/AFRICAN AMERICAN",
    "ASIAN",
    "HISPANIC OR LATINO",
    "OTHER",
    "UNKNOWN/NOT SPECIFIED",
];
const INSURANCE_POOL: [&str; 4] = ["Private", "Medicare", "Medicaid", "Self Pay"];
const PROVIDER_POOL: [(&str, &str); 6] = [
    ("C001", "RN"),
    ("C002", "MD"),
    ("C003", "NP"),
    ("C004", "SW"),
    ("C005", "RRT"),
    ("C006", "RN"),
];
const CATEGORY_POOL: [&str; 3] = ["Nursing", "Physician", "General"];

struct FillerVocab {
    words: Vec<String>,
}

impl FillerVocab {
    fn new(size: usize) -> Self {
        FillerVocab {
            words: (0..size).map(|i| format!("fill{i:03}")).collect(),
        }
    }

    fn sentence(&self, rng: &mut ChaCha12Rng, len: usize) -> String {
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            words.push(self.words[rng.random_range(0..self.words.len())].as_str());
        }
        format!("{}.", words.join(" "))
    }

    /// A filler sentence with `term` embedded mid-sentence.
    fn injection_sentence(&self, rng: &mut ChaCha12Rng, term: &str) -> String {
        let a = &self.words[rng.random_range(0..self.words.len())];
        let b = &self.words[rng.random_range(0..self.words.len())];
        let c = &self.words[rng.random_range(0..self.words.len())];
        format!("{a} {b} {term} {c}.")
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, SynthError> {
    csv::Writer::from_path(path).map_err(|e| SynthError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    })
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> SynthError + '_ {
    move |e| SynthError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    }
}

/// Generate the five CSV tables plus the ground-truth sidecar into
/// `out_dir` (created if missing).
pub fn generate(config: &SynthConfig, out_dir: &Path) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|source| SynthError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let tables = TablePaths::in_dir(out_dir);
    let ground_truth_path = out_dir.join("ground_truth.jsonl");

    let stigma_terms: Vec<String> = Lexicon::shipped_stigma()
        .terms()
        .iter()
        .map(|t| t.display().to_string())
        .collect();
    let doubt_terms: Vec<String> = Lexicon::shipped_doubt()
        .terms()
        .iter()
        .map(|t| t.display().to_string())
        .collect();
    let vocab = FillerVocab::new(config.filler_vocab);

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.sigma2.max(0.0).sqrt()).expect("valid sd");
    let base_date = NaiveDate::from_ymd_opt(2100, 1, 1).expect("valid date");

    let mut notes = csv_writer(&tables.notes)?;
    let mut patients = csv_writer(&tables.patients)?;
    let mut admissions = csv_writer(&tables.admissions)?;
    let mut caregivers = csv_writer(&tables.caregivers)?;
    let mut diagnoses = csv_writer(&tables.diagnoses)?;
    let mut truth = std::io::BufWriter::new(std::fs::File::create(&ground_truth_path).map_err(
        |source| SynthError::Io {
            path: ground_truth_path.display().to_string(),
            source,
        },
    )?);

    notes
        .write_record(["ROW_ID", "SUBJECT_ID", "HADM_ID", "CGID", "CATEGORY", "CHARTTIME", "TEXT"])
        .map_err(io_err(&tables.notes))?;
    patients
        .write_record(["SUBJECT_ID", "GENDER", "DOB"])
        .map_err(io_err(&tables.patients))?;
    admissions
        .write_record(["SUBJECT_ID", "HADM_ID", "INSURANCE", "ETHNICITY", "ADMITTIME"])
        .map_err(io_err(&tables.admissions))?;
    caregivers
        .write_record(["CGID", "LABEL"])
        .map_err(io_err(&tables.caregivers))?;
    diagnoses
        .write_record(["SUBJECT_ID", "ICD9_CODE"])
        .map_err(io_err(&tables.diagnoses))?;
    for (cgid, label) in PROVIDER_POOL {
        caregivers
            .write_record([cgid, label])
            .map_err(io_err(&tables.caregivers))?;
    }

    let mut note_counter: usize = 0;
    for p in 0..config.n_patients {
        let patient_id = format!("P{p:05}");

        // Draw order is fixed: covariates (config order), intercept, age,
        // insurance, ethnicity, gender, note count, then per-note draws.
        let mut covariate_values = BTreeMap::new();
        let mut stigma_rate = config.base_rate;
        let mut doubt_rate = config.base_rate;
        let mut male_covariate: Option<bool> = None;
        for spec in &config.covariates {
            let value = rng.random_bool(spec.prevalence);
            if value {
                stigma_rate *= spec.stigma_rr;
                doubt_rate *= spec.doubt_rr;
            }
            if spec.name == "male" {
                male_covariate = Some(value);
            } else if value {
                diagnoses
                    .write_record([patient_id.as_str(), condition_code(&spec.name)])
                    .map_err(io_err(&tables.diagnoses))?;
            }
            covariate_values.insert(spec.name.clone(), value);
        }
        let intercept = if config.sigma2 > 0.0 {
            normal.sample(&mut rng)
        } else {
            0.0
        };
        stigma_rate = (stigma_rate * intercept.exp()).min(0.99);
        doubt_rate = (doubt_rate * intercept.exp()).min(0.99);

        let age_years: f64 = rng.random_range(20.0..85.0);
        let insurance = INSURANCE_POOL[rng.random_range(0..INSURANCE_POOL.len())];
        let ethnicity = ETHNICITY_POOL[rng.random_range(0..ETHNICITY_POOL.len())];
        let male = match male_covariate {
            Some(v) => v,
            None => rng.random_bool(0.5),
        };

        let admit_date = base_date + chrono::Days::new((p % 365) as u64);
        let dob = admit_date - chrono::Days::new((age_years * 365.25) as u64);
        patients
            .write_record([
                patient_id.as_str(),
                if male { "M" } else { "F" },
                &format!("{dob} 00:00:00"),
            ])
            .map_err(io_err(&tables.patients))?;
        admissions
            .write_record([
                patient_id.as_str(),
                &format!("A{p:05}"),
                insurance,
                ethnicity,
                &format!("{admit_date} 08:00:00"),
            ])
            .map_err(io_err(&tables.admissions))?;

        let n_notes =
            rng.random_range(config.notes_per_patient.0..=config.notes_per_patient.1);
        let mut stigma_flagged = 0;
        let mut doubt_flagged = 0;
        for j in 0..n_notes {
            note_counter += 1;
            let provider = PROVIDER_POOL[rng.random_range(0..PROVIDER_POOL.len())].0;
            let category = CATEGORY_POOL[rng.random_range(0..CATEGORY_POOL.len())];
            let stigma_flag = rng.random_bool(stigma_rate);
            let doubt_flag = rng.random_bool(doubt_rate);

            // The per-patient sequence sentence keeps every note's text
            // unique within its patient, so dedup never eats a real note.
            let mut sentences = vec![format!("fillseq {j}.")];
            let n_filler = rng.random_range(2..=4);
            for _ in 0..n_filler {
                let len = rng.random_range(4..=9);
                sentences.push(vocab.sentence(&mut rng, len));
            }
            if stigma_flag {
                stigma_flagged += 1;
                let term = &stigma_terms[rng.random_range(0..stigma_terms.len())];
                let at = rng.random_range(1..=sentences.len());
                sentences.insert(at, vocab.injection_sentence(&mut rng, term));
            }
            if doubt_flag {
                doubt_flagged += 1;
                let term = &doubt_terms[rng.random_range(0..doubt_terms.len())];
                let at = rng.random_range(1..=sentences.len());
                sentences.insert(at, vocab.injection_sentence(&mut rng, term));
            }
            let text = sentences.join(" ");
            let charttime = format!("{} {:02}:{:02}:00", admit_date, 8 + j / 60 % 12, j % 60);
            notes
                .write_record([
                    &format!("N{note_counter:07}"),
                    patient_id.as_str(),
                    &format!("A{p:05}"),
                    provider,
                    category,
                    &charttime,
                    &text,
                ])
                .map_err(io_err(&tables.notes))?;
        }

        let row = GroundTruthRow {
            entity: patient_id.clone(),
            level: "patient".to_string(),
            stigma_rate,
            doubt_rate,
            intercept,
            covariates: covariate_values,
            notes: n_notes,
            stigma_flagged,
            doubt_flagged,
        };
        use std::io::Write;
        serde_json::to_writer(&mut truth, &row).map_err(|e| SynthError::Io {
            path: ground_truth_path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
        truth.write_all(b"\n").map_err(|source| SynthError::Io {
            path: ground_truth_path.display().to_string(),
            source,
        })?;
    }

    for (writer, path) in [
        (&mut notes, &tables.notes),
        (&mut patients, &tables.patients),
        (&mut admissions, &tables.admissions),
        (&mut caregivers, &tables.caregivers),
        (&mut diagnoses, &tables.diagnoses),
    ] {
        writer.flush().map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    {
        use std::io::Write;
        truth.flush().map_err(|source| SynthError::Io {
            path: ground_truth_path.display().to_string(),
            source,
        })?;
    }

    Ok(SynthOutput {
        tables,
        ground_truth: ground_truth_path,
        notes_written: note_counter,
        patients_written: config.n_patients,
    })
}

/// Read a ground-truth JSONL sidecar back.
pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>, SynthError> {
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(idx, line)| {
            serde_json::from_str(line).map_err(|e| SynthError::BadConfig {
                origin: path.display().to_string(),
                line: idx + 1,
                message: format!("bad ground-truth row: {e}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use crate::ingest::{dedup_and_filter_default, load_tables, RecodeMaps};
    use crate::lexicon::{LexiconName, Matcher};
    use crate::text::{segment_sentences, AbbrevSet};

    use super::*;

    fn tiny_config() -> SynthConfig {
        SynthConfig {
            seed: 99,
            n_patients: 50,
            notes_per_patient: (2, 6),
            base_rate: 0.2,
            sigma2: 0.0,
            covariates: vec![CovariateSpec {
                name: "obesity".to_string(),
                prevalence: 0.4,
                stigma_rr: 2.0,
                doubt_rr: 1.0,
            }],
            filler_vocab: 60,
        }
    }

    #[test]
    fn config_parsing_and_validation() {
        let text = "\
# oracle config
seed=42
n_patients=2000
notes_min=5
notes_max=15
base_rate=0.08
sigma2=0
filler_vocab=100
covariate=obesity,0.3,2.0,1.0
covariate=male,0.5,1.0,1.0
";
        let config = SynthConfig::parse(text, "<t>").unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.n_patients, 2000);
        assert_eq!(config.notes_per_patient, (5, 15));
        assert_eq!(config.covariates.len(), 2);
        assert_eq!(config.covariates[0].stigma_rr, 2.0);

        let err = SynthConfig::parse("seed 42", "<t>").unwrap_err();
        assert_eq!(err.code(), "E_BAD_CONFIG");
        let err = SynthConfig::parse("volume=11", "<t>").unwrap_err();
        assert_eq!(err.code(), "E_BAD_CONFIG");
        let err = SynthConfig::parse("covariate=gout,0.5,2.0,1.0", "<t>").unwrap_err();
        assert_eq!(err.code(), "E_UNKNOWN_COVARIATE");
        let err = SynthConfig::parse("base_rate=0.6\ncovariate=obesity,0.5,2.0,1.0", "<t>")
            .unwrap_err();
        assert_eq!(err.code(), "E_INVALID_RATES");
        let err = SynthConfig::parse("base_rate=1.4", "<t>").unwrap_err();
        assert_eq!(err.code(), "E_INVALID_RATES");
        let err = SynthConfig::parse("notes_min=9\nnotes_max=2", "<t>").unwrap_err();
        assert_eq!(err.code(), "E_INVALID_RATES");
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let a = generate(&config, &dir.path().join("a")).unwrap();
        let b = generate(&config, &dir.path().join("b")).unwrap();
        for (pa, pb) in [
            (&a.tables.notes, &b.tables.notes),
            (&a.tables.patients, &b.tables.patients),
            (&a.tables.admissions, &b.tables.admissions),
            (&a.tables.caregivers, &b.tables.caregivers),
            (&a.tables.diagnoses, &b.tables.diagnoses),
            (&a.ground_truth, &b.ground_truth),
        ] {
            let bytes_a = std::fs::read(pa).unwrap();
            let bytes_b = std::fs::read(pb).unwrap();
            assert_eq!(bytes_a, bytes_b, "{} differs", pa.display());
        }

        // A different seed changes the corpus.
        let mut other = config;
        other.seed = 100;
        let c = generate(&other, &dir.path().join("c")).unwrap();
        assert_ne!(
            std::fs::read(&a.tables.notes).unwrap(),
            std::fs::read(&c.tables.notes).unwrap()
        );
    }

    #[test]
    fn output_passes_ingest_and_matches_ground_truth_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate(&tiny_config(), dir.path()).unwrap();
        let truth = read_ground_truth(&out.ground_truth).unwrap();
        assert_eq!(truth.len(), 50);

        let corpus = load_tables(&out.tables, &RecodeMaps::default()).unwrap();
        let corpus = dedup_and_filter_default(corpus);
        assert_eq!(corpus.patients.len(), 50, "every patient survives ingest");
        assert_eq!(corpus.notes.len(), out.notes_written, "no note lost to dedup or filters");
        assert_eq!(corpus.report.notes_skipped_invalid, 0);

        // Covariates materialized through the real tables: the ingested
        // obesity flag equals the drawn covariate for every patient.
        for row in &truth {
            let patient = &corpus.patients[&row.entity];
            assert_eq!(
                patient.diagnosis_flags.obesity,
                row.covariates["obesity"],
                "patient {}",
                row.entity
            );
        }

        // Closure: scanning finds exactly the injected terms — per note,
        // one flagged lexicon ⇒ at least one match of that lexicon and none
        // of the other unless also flagged; per patient the flagged-note
        // totals agree exactly with the sidecar.
        let matcher = Matcher::build(&[&Lexicon::shipped_doubt(), &Lexicon::shipped_stigma()]);
        let abbrevs = AbbrevSet::shipped();
        let mut flagged: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for note in &corpus.notes {
            let mut stigma_hits = 0usize;
            let mut doubt_hits = 0usize;
            for sentence in segment_sentences(&note.text, &abbrevs) {
                for m in matcher.match_sentence(&sentence) {
                    match m.lexicon {
                        LexiconName::StigmatizingLabels => stigma_hits += 1,
                        LexiconName::DoubtMarkers => doubt_hits += 1,
                    }
                }
            }
            let entry = flagged.entry(note.patient_id.as_str()).or_insert((0, 0));
            entry.0 += usize::from(stigma_hits > 0);
            entry.1 += usize::from(doubt_hits > 0);
        }
        for row in &truth {
            let (stigma, doubt) = flagged.get(row.entity.as_str()).copied().unwrap_or((0, 0));
            assert_eq!(stigma, row.stigma_flagged, "stigma notes for {}", row.entity);
            assert_eq!(doubt, row.doubt_flagged, "doubt notes for {}", row.entity);
        }
    }

    #[test]
    fn null_corpus_flag_rate_matches_base_rate() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            seed: 5,
            n_patients: 400,
            notes_per_patient: (6, 10),
            base_rate: 0.1,
            sigma2: 0.0,
            covariates: vec![],
            filler_vocab: 80,
        };
        let out = generate(&config, dir.path()).unwrap();
        let truth = read_ground_truth(&out.ground_truth).unwrap();
        let notes: usize = truth.iter().map(|r| r.notes).sum();
        let flagged: usize = truth.iter().map(|r| r.stigma_flagged).sum();
        let rate = flagged as f64 / notes as f64;
        let se = (0.1_f64 * 0.9 / notes as f64).sqrt();
        assert!(
            (rate - 0.1).abs() < 3.0 * se,
            "empirical rate {rate} vs base 0.1 (3se = {})",
            3.0 * se
        );
        // And the sidecar's rates are exactly the base rate under the null.
        assert!(truth.iter().all(|r| r.stigma_rate == 0.1 && r.intercept == 0.0));
    }
}
