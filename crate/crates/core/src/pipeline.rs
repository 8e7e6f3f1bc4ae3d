//! End-to-end orchestration: scan notes into sentence labels, roll them up
//! to entities, and run the full model battery.
//!
//! The scan stage is a parallel map over notes (rayon, order-preserving
//! collect, so output is independent of thread count). Every retained note
//! produces a [`NoteFlags`] row — zero-match notes included — because
//! unflagged charts still belong in the offset denominator.
//!
//! Attribution policy: a note is attributed to its patient only if that
//! patient has a demographic record, and to its provider only if it has a
//! caregiver id *and* its patient is attributed. The second condition keeps
//! the patient-level and provider-level analyses on the same cohort of
//! notes rather than letting provider models see charts the patient models
//! excluded.
//!
//! Model battery: per-predictor offset Poisson fits by default (one block
//! per model), a joint mode behind [`ModelMode::Joint`]; random-intercept
//! Poisson per level for clustering; Spearman correlation between the two
//! outcomes per level. Individual model failures (zero events everywhere,
//! rank deficiency, non-convergence) are captured per fit instead of
//! aborting the run.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::aggregate::{
    aggregate_entities, aggregate_note, descriptive_table, AggregateError, AggregateReport,
    CountingMode, DescriptiveStats, EntityLevel, EntityOutcome, NoteFlags, PositiveLabel,
};
use crate::classifier::{ClassifierError, ClassifierModel};
use crate::ingest::{Corpus, CONDITIONS};
use crate::lexicon::{LexiconName, Match, Matcher};
use crate::stats::{
    fit_poisson_glm, fit_random_intercept_poisson, rate_ratios, spearman, GlmOptions, MixedFit,
    MixedOptions, ModelSpec, Outcome, PredictorBlock, RateRatio, StatsError,
};
use crate::text::{segment_sentences, AbbrevSet, Sentence};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Classifier(e) => e.code(),
            PipelineError::Aggregate(e) => e.code(),
            PipelineError::Stats(e) => e.code(),
        }
    }
}

/// Optional sentence classifiers, one per lexicon. `None` means lexicon-only
/// mode: every match counts as a positive sentence.
#[derive(Debug, Default)]
pub struct ClassifierSet {
    pub stigma: Option<ClassifierModel>,
    pub doubt: Option<ClassifierModel>,
}

impl ClassifierSet {
    /// Lexicon-only scanning (no classifier gate).
    pub fn off() -> Self {
        Self::default()
    }

    /// Check each slotted model is trained for the lexicon of its slot.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        for (model, expected) in [
            (&self.stigma, LexiconName::StigmatizingLabels),
            (&self.doubt, LexiconName::DoubtMarkers),
        ] {
            if let Some(model) = model {
                if model.lexicon != expected {
                    return Err(ClassifierError::LexiconMismatch {
                        expected,
                        found: model.lexicon,
                    });
                }
            }
        }
        Ok(())
    }

    fn for_lexicon(&self, lexicon: LexiconName) -> Option<&ClassifierModel> {
        match lexicon {
            LexiconName::StigmatizingLabels => self.stigma.as_ref(),
            LexiconName::DoubtMarkers => self.doubt.as_ref(),
        }
    }

    pub fn is_off(&self) -> bool {
        self.stigma.is_none() && self.doubt.is_none()
    }
}

/// One lexicon match in one sentence, after the optional classifier gate.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceLabel {
    pub note_id: String,
    pub sentence_index: usize,
    pub term: String,
    pub lexicon: LexiconName,
    /// Classifier probability; `None` when scanning lexicon-only.
    pub probability: Option<f64>,
    pub positive: bool,
}

/// Everything the scan stage produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    /// All matches in note order, sentence order within note, classifier
    /// negatives included (they carry `positive: false`).
    pub labels: Vec<SentenceLabel>,
    /// One row per retained note, in note order; zero-match notes included.
    pub flags: Vec<NoteFlags>,
    pub notes_scanned: usize,
    pub sentences_scanned: usize,
    pub matches_found: usize,
    pub positives: usize,
}

fn scan_sentence(
    note_id: &str,
    sentence: &Sentence,
    matches: &[Match],
    classifiers: &ClassifierSet,
) -> Result<Vec<SentenceLabel>, ClassifierError> {
    matches
        .iter()
        .map(|m| {
            let (probability, positive) = match classifiers.for_lexicon(m.lexicon) {
                Some(model) => {
                    let p = model.predict(sentence, m)?;
                    (Some(p.probability), p.positive)
                }
                None => (None, true),
            };
            Ok(SentenceLabel {
                note_id: note_id.to_string(),
                sentence_index: sentence.index,
                term: m.term.clone(),
                lexicon: m.lexicon,
                probability,
                positive,
            })
        })
        .collect()
}

/// Scan every retained note: segment, match, classify, roll up per note.
pub fn scan_corpus(
    corpus: &Corpus,
    matcher: &Matcher,
    abbrevs: &AbbrevSet,
    classifiers: &ClassifierSet,
) -> Result<ScanOutput, PipelineError> {
    classifiers.validate()?;
    let per_note: Vec<(Vec<SentenceLabel>, NoteFlags, usize)> = corpus
        .notes
        .par_iter()
        .map(|note| -> Result<_, ClassifierError> {
            let mut labels = Vec::new();
            let sentences = segment_sentences(&note.text, abbrevs);
            for sentence in &sentences {
                let matches = matcher.match_sentence(sentence);
                labels.extend(scan_sentence(&note.note_id, sentence, &matches, classifiers)?);
            }
            let positives: Vec<PositiveLabel> = labels
                .iter()
                .filter(|l| l.positive)
                .map(|l| PositiveLabel { sentence_index: l.sentence_index, lexicon: l.lexicon })
                .collect();
            let flags = aggregate_note(&note.note_id, &positives);
            Ok((labels, flags, sentences.len()))
        })
        .collect::<Result<_, _>>()?;

    let mut output = ScanOutput {
        labels: Vec::new(),
        flags: Vec::with_capacity(per_note.len()),
        notes_scanned: per_note.len(),
        sentences_scanned: 0,
        matches_found: 0,
        positives: 0,
    };
    for (labels, flags, sentences) in per_note {
        output.sentences_scanned += sentences;
        output.matches_found += labels.len();
        output.positives += labels.iter().filter(|l| l.positive).count();
        output.labels.extend(labels);
        output.flags.push(flags);
    }
    Ok(output)
}

/// Whether Table-2 style fits run one predictor per model (the default) or
/// one multivariable model per outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    PerPredictor,
    Joint,
}

impl ModelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelMode::PerPredictor => "per_predictor",
            ModelMode::Joint => "joint",
        }
    }
}

impl std::str::FromStr for ModelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_predictor" | "per-predictor" => Ok(ModelMode::PerPredictor),
            "joint" => Ok(ModelMode::Joint),
            other => Err(format!("unknown model mode {other:?} (expected per-predictor or joint)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    pub counting_mode: CountingMode,
    pub model_mode: ModelMode,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { counting_mode: CountingMode::FlaggedCharts, model_mode: ModelMode::PerPredictor }
    }
}

/// Diagnosis blocks in Table-2 presentation order (differs from the
/// [`CONDITIONS`] declaration order used by Table 1).
pub const TABLE2_CONDITION_ORDER: [&str; 11] = [
    "hiv_symptomatic",
    "obesity",
    "oud",
    "sickle_cell",
    "sud",
    "schizophrenia",
    "mood_disorder",
    "anxiety",
    "ptsd",
    "suicide_attempt",
    "suicidal_ideation",
];

const ETHNICITY_LEVELS: [&str; 6] = [
    "Asian",
    "BlackAfricanAmerican",
    "HispanicLatino",
    "NativeAmericanAlaskanNative",
    "Other",
    "UnknownDeclined",
];

/// Patient predictor blocks for the regression battery, in Table-2 order.
pub fn patient_blocks() -> Vec<PredictorBlock> {
    let mut blocks = vec![
        PredictorBlock::categorical("gender", "Female", &["Male"]),
        PredictorBlock::categorical("ethnicity", "White", &ETHNICITY_LEVELS),
        PredictorBlock::categorical("insurance", "Private", &["GovernmentRun", "SelfPay"]),
    ];
    blocks.extend(TABLE2_CONDITION_ORDER.iter().map(|name| PredictorBlock::binary(name)));
    blocks.push(PredictorBlock::categorical(
        "age_category",
        "MiddleAged",
        &["Adolescent", "Adult", "Aged", "Aged80Plus"],
    ));
    blocks
}

/// Provider levels admitted to regressions (Pharmacist and Unknown are
/// excluded; excluded entities are counted per fit).
pub fn provider_block() -> PredictorBlock {
    PredictorBlock::categorical(
        "provider_type",
        "Physicians",
        &[
            "APP",
            "RegisteredDieticians",
            "RegisteredNurses",
            "RehabOTPT",
            "RespiratoryTherapist",
            "SocialWorkers",
        ],
    )
}

/// Patient blocks for Table-1 descriptives (conditions in declaration
/// order, ethnicity/insurance/gender with reference listed first).
pub fn patient_descriptive_blocks() -> Vec<PredictorBlock> {
    let mut blocks = vec![
        PredictorBlock::categorical("ethnicity", "White", &ETHNICITY_LEVELS),
        PredictorBlock::categorical("insurance", "Private", &["GovernmentRun", "SelfPay"]),
        PredictorBlock::categorical("gender", "Female", &["Male"]),
    ];
    blocks.extend(CONDITIONS.iter().map(|name| PredictorBlock::binary(name)));
    blocks.push(PredictorBlock::categorical(
        "age_category",
        "MiddleAged",
        &["Adolescent", "Adult", "Aged", "Aged80Plus"],
    ));
    blocks
}

/// All nine provider types for Table-1 descriptives.
pub fn provider_descriptive_block() -> PredictorBlock {
    PredictorBlock::categorical(
        "provider_type",
        "Physicians",
        &[
            "APP",
            "Pharmacist",
            "RegisteredDieticians",
            "RegisteredNurses",
            "RehabOTPT",
            "RespiratoryTherapist",
            "SocialWorkers",
            "Unknown",
        ],
    )
}

/// note_id → Some(patient_id) for notes whose patient has a record.
pub fn patient_attribution(corpus: &Corpus) -> HashMap<String, Option<String>> {
    corpus
        .notes
        .iter()
        .map(|note| {
            let entity = corpus
                .patients
                .contains_key(&note.patient_id)
                .then(|| note.patient_id.clone());
            (note.note_id.clone(), entity)
        })
        .collect()
}

/// note_id → Some(provider_id) for notes with a caregiver id whose patient
/// is attributed (cohort consistency with the patient-level analysis).
pub fn provider_attribution(corpus: &Corpus) -> HashMap<String, Option<String>> {
    corpus
        .notes
        .iter()
        .map(|note| {
            let entity = match (&note.provider_id, corpus.patients.contains_key(&note.patient_id)) {
                (Some(provider), true) => Some(provider.clone()),
                _ => None,
            };
            (note.note_id.clone(), entity)
        })
        .collect()
}

/// Predictor levels per patient. The insurance key is omitted when the raw
/// label was unrecognized, which drops that patient from insurance fits
/// only (the exclusion is counted per fit).
pub fn patient_covariates(corpus: &Corpus) -> HashMap<String, BTreeMap<String, String>> {
    corpus
        .patients
        .values()
        .map(|p| {
            let mut covs = BTreeMap::new();
            covs.insert("gender".to_string(), p.gender.as_str().to_string());
            covs.insert("age_category".to_string(), p.age_category.as_str().to_string());
            covs.insert("ethnicity".to_string(), p.ethnicity.as_str().to_string());
            if let Some(insurance) = p.insurance {
                covs.insert("insurance".to_string(), insurance.as_str().to_string());
            }
            for (condition, present) in p.diagnosis_flags.iter() {
                covs.insert(
                    condition.to_string(),
                    if present { "present" } else { "absent" }.to_string(),
                );
            }
            (p.patient_id.clone(), covs)
        })
        .collect()
}

pub fn provider_covariates(corpus: &Corpus) -> HashMap<String, BTreeMap<String, String>> {
    corpus
        .providers
        .values()
        .map(|p| {
            let covs = BTreeMap::from([(
                "provider_type".to_string(),
                p.provider_type.as_str().to_string(),
            )]);
            (p.provider_id.clone(), covs)
        })
        .collect()
}

/// One fitted model (or its failure), with presentation-ready rate ratios.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FitSummary {
    pub outcome: Outcome,
    pub level: EntityLevel,
    /// Block names in the fitted [`ModelSpec`] (one entry in per-predictor mode).
    pub blocks: Vec<String>,
    /// Entities entering the fit after eligibility filtering.
    pub n_entities: usize,
    /// Entities dropped because a block key was missing or its value is not
    /// an admitted level (e.g. Pharmacist/Unknown providers).
    pub excluded_entities: usize,
    pub converged: bool,
    pub rate_ratios: Vec<RateRatio>,
    pub error: Option<String>,
}

/// A random-intercept fit at one level for one outcome.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MixedSummary {
    pub outcome: Outcome,
    pub level: EntityLevel,
    pub fit: Option<MixedFit>,
    pub error: Option<String>,
}

/// Spearman correlation between the two outcomes at one level.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CorrelationSummary {
    pub level: EntityLevel,
    #[serde(with = "crate::serde_float")]
    pub rho: f64,
    #[serde(with = "crate::serde_float")]
    pub p_value: f64,
    pub n: usize,
    pub error: Option<String>,
}

/// Corpus-wide totals under both counting modes, so the mode ambiguity is
/// visible in every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct HeadlineTotals {
    pub notes: usize,
    pub stigma_flagged_notes: usize,
    pub doubt_flagged_notes: usize,
    pub stigma_sentences: u64,
    pub doubt_sentences: u64,
}

pub fn headline_totals(flags: &[NoteFlags]) -> HeadlineTotals {
    let mut totals = HeadlineTotals { notes: flags.len(), ..Default::default() };
    for flag in flags {
        totals.stigma_flagged_notes += usize::from(flag.stigma_present());
        totals.doubt_flagged_notes += usize::from(flag.doubt_present());
        totals.stigma_sentences += u64::from(flag.stigma_sentence_count);
        totals.doubt_sentences += u64::from(flag.doubt_sentence_count);
    }
    totals
}

/// Everything the report stage consumes.
#[derive(Debug)]
pub struct AnalysisResult {
    pub counting_mode: CountingMode,
    pub model_mode: ModelMode,
    pub patient_entities: Vec<EntityOutcome>,
    pub provider_entities: Vec<EntityOutcome>,
    pub patient_aggregate: AggregateReport,
    pub provider_aggregate: AggregateReport,
    pub patient_descriptives: DescriptiveStats,
    pub provider_descriptives: DescriptiveStats,
    pub fits: Vec<FitSummary>,
    pub mixed: Vec<MixedSummary>,
    pub correlations: Vec<CorrelationSummary>,
    pub headline: HeadlineTotals,
}

/// Entities eligible for a spec: every block key present with an admitted
/// level. Returns the eligible rows (cloned; fits are entity-scale, not
/// corpus-scale) and the excluded count.
fn eligible_entities(entities: &[EntityOutcome], spec: &ModelSpec) -> (Vec<EntityOutcome>, usize) {
    let admitted: Vec<EntityOutcome> = entities
        .iter()
        .filter(|e| {
            spec.blocks.iter().all(|block| {
                e.covariate(&block.name)
                    .is_some_and(|value| block.levels.iter().any(|l| l == value))
            })
        })
        .cloned()
        .collect();
    let excluded = entities.len() - admitted.len();
    (admitted, excluded)
}

fn run_fit(entities: &[EntityOutcome], spec: &ModelSpec, level: EntityLevel) -> FitSummary {
    let (eligible, excluded) = eligible_entities(entities, spec);
    let mut summary = FitSummary {
        outcome: spec.outcome,
        level,
        blocks: spec.blocks.iter().map(|b| b.name.clone()).collect(),
        n_entities: eligible.len(),
        excluded_entities: excluded,
        converged: false,
        rate_ratios: Vec::new(),
        error: None,
    };
    match fit_poisson_glm(&eligible, spec, &GlmOptions::default()) {
        Ok(fit) => {
            summary.converged = fit.converged;
            summary.rate_ratios = rate_ratios(&fit);
        }
        Err(e) => summary.error = Some(format!("{}: {e}", e.code())),
    }
    summary
}

/// Per-note observations for one level's random-intercept model: y per the
/// counting mode, exposure 1 per note, clustered by the attributed entity.
fn mixed_observations(
    flags: &[NoteFlags],
    attribution: &HashMap<String, Option<String>>,
    outcome: Outcome,
    mode: CountingMode,
) -> (Vec<f64>, Vec<f64>, Vec<String>) {
    let mut y = Vec::new();
    let mut exposure = Vec::new();
    let mut clusters = Vec::new();
    for flag in flags {
        if let Some(Some(entity)) = attribution.get(&flag.note_id) {
            let value = match mode {
                CountingMode::FlaggedCharts => f64::from(u8::from(flag.present(outcome))),
                CountingMode::Sentences => f64::from(flag.sentence_count(outcome)),
            };
            y.push(value);
            exposure.push(1.0);
            clusters.push(entity.clone());
        }
    }
    (y, exposure, clusters)
}

fn run_mixed(
    flags: &[NoteFlags],
    attribution: &HashMap<String, Option<String>>,
    outcome: Outcome,
    level: EntityLevel,
    mode: CountingMode,
) -> MixedSummary {
    let (y, exposure, clusters) = mixed_observations(flags, attribution, outcome, mode);
    match fit_random_intercept_poisson(&y, &exposure, &clusters, &MixedOptions::default()) {
        Ok(fit) => MixedSummary { outcome, level, fit: Some(fit), error: None },
        Err(e) => MixedSummary {
            outcome,
            level,
            fit: None,
            error: Some(format!("{}: {e}", e.code())),
        },
    }
}

fn run_correlation(entities: &[EntityOutcome], level: EntityLevel) -> CorrelationSummary {
    let x: Vec<f64> = entities.iter().map(|e| e.stigma_count as f64).collect();
    let y: Vec<f64> = entities.iter().map(|e| e.doubt_count as f64).collect();
    match spearman(&x, &y) {
        Ok(r) => CorrelationSummary {
            level,
            rho: r.rho,
            p_value: r.p_value,
            n: r.n,
            error: None,
        },
        Err(e) => CorrelationSummary {
            level,
            rho: f64::NAN,
            p_value: f64::NAN,
            n: entities.len(),
            error: Some(format!("{}: {e}", e.code())),
        },
    }
}

/// Aggregate scanned flags and run the whole model battery.
pub fn run_analysis(
    corpus: &Corpus,
    flags: &[NoteFlags],
    options: &AnalysisOptions,
) -> Result<AnalysisResult, PipelineError> {
    let mode = options.counting_mode;
    let patient_attr = patient_attribution(corpus);
    let provider_attr = provider_attribution(corpus);
    let (patient_entities, patient_aggregate) = aggregate_entities(
        flags,
        &patient_attr,
        &patient_covariates(corpus),
        EntityLevel::Patient,
        mode,
    );
    let (provider_entities, provider_aggregate) = aggregate_entities(
        flags,
        &provider_attr,
        &provider_covariates(corpus),
        EntityLevel::Provider,
        mode,
    );
    let patient_descriptives = descriptive_table(&patient_entities, &patient_descriptive_blocks())?;
    let provider_descriptives =
        descriptive_table(&provider_entities, &[provider_descriptive_block()])?;

    let mut specs: Vec<(ModelSpec, EntityLevel)> = Vec::new();
    for outcome in [Outcome::Stigma, Outcome::Doubt] {
        match options.model_mode {
            ModelMode::PerPredictor => {
                for block in patient_blocks() {
                    specs.push((ModelSpec::new(outcome, block), EntityLevel::Patient));
                }
            }
            ModelMode::Joint => {
                specs.push((ModelSpec::joint(outcome, patient_blocks()), EntityLevel::Patient));
            }
        }
        specs.push((ModelSpec::new(outcome, provider_block()), EntityLevel::Provider));
    }
    let fits: Vec<FitSummary> = specs
        .par_iter()
        .map(|(spec, level)| {
            let entities = match level {
                EntityLevel::Patient => &patient_entities,
                EntityLevel::Provider => &provider_entities,
            };
            run_fit(entities, spec, *level)
        })
        .collect();

    let mixed: Vec<MixedSummary> = [
        (EntityLevel::Patient, &patient_attr),
        (EntityLevel::Provider, &provider_attr),
    ]
    .into_iter()
    .flat_map(|(level, attr)| {
        [Outcome::Stigma, Outcome::Doubt]
            .into_iter()
            .map(move |outcome| (outcome, level, attr))
    })
    .collect::<Vec<_>>()
    .into_par_iter()
    .map(|(outcome, level, attr)| run_mixed(flags, attr, outcome, level, mode))
    .collect();

    let correlations = vec![
        run_correlation(&patient_entities, EntityLevel::Patient),
        run_correlation(&provider_entities, EntityLevel::Provider),
    ];

    Ok(AnalysisResult {
        counting_mode: mode,
        model_mode: options.model_mode,
        patient_entities,
        provider_entities,
        patient_aggregate,
        provider_aggregate,
        patient_descriptives,
        provider_descriptives,
        fits,
        mixed,
        correlations,
        headline: headline_totals(flags),
    })
}

#[cfg(test)]
mod tests {
    use crate::ingest::{dedup_and_filter_default, load_tables, RecodeMaps};
    use crate::lexicon::Lexicon;
    use crate::synth::{generate, CovariateSpec, SynthConfig};

    use super::*;

    fn scan_fixture() -> (Corpus, Matcher, AbbrevSet) {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            seed: 11,
            n_patients: 60,
            notes_per_patient: (3, 8),
            base_rate: 0.25,
            sigma2: 0.0,
            covariates: vec![CovariateSpec {
                name: "oud".to_string(),
                prevalence: 0.3,
                stigma_rr: 2.0,
                doubt_rr: 1.5,
            }],
            filler_vocab: 50,
        };
        let out = generate(&config, dir.path()).unwrap();
        let corpus = dedup_and_filter_default(load_tables(&out.tables, &RecodeMaps::default()).unwrap());
        let matcher = Matcher::build(&[&Lexicon::shipped_doubt(), &Lexicon::shipped_stigma()]);
        (corpus, matcher, AbbrevSet::shipped())
    }

    #[test]
    fn scan_and_analysis_end_to_end() {
        let (corpus, matcher, abbrevs) = scan_fixture();
        let scan = scan_corpus(&corpus, &matcher, &abbrevs, &ClassifierSet::off()).unwrap();
        assert_eq!(scan.flags.len(), corpus.notes.len(), "one flag row per note");
        assert_eq!(scan.notes_scanned, corpus.notes.len());
        assert_eq!(scan.positives, scan.matches_found, "lexicon-only: all matches positive");
        assert!(scan.labels.iter().all(|l| l.probability.is_none()));

        let result = run_analysis(&corpus, &scan.flags, &AnalysisOptions::default()).unwrap();

        // Conservation: entity stigma counts total the flagged attributed notes.
        let flagged_total: u64 = result.patient_entities.iter().map(|e| e.stigma_count).sum();
        let expected: u64 = scan
            .flags
            .iter()
            .filter(|f| f.stigma_present())
            .filter(|f| corpus.patients.contains_key(
                &corpus.notes.iter().find(|n| n.note_id == f.note_id).unwrap().patient_id,
            ))
            .count() as u64;
        assert_eq!(flagged_total, expected);

        // Every note in this corpus has a provider and a patient, so both
        // levels see every note and flag the same totals.
        assert_eq!(result.patient_aggregate.notes_unattributed, 0);
        assert_eq!(result.provider_aggregate.notes_unattributed, 0);
        let provider_total: u64 = result.provider_entities.iter().map(|e| e.stigma_count).sum();
        assert_eq!(provider_total, flagged_total);

        // Chart totals cover the corpus.
        let charts: u64 = result.patient_entities.iter().map(|e| e.chart_total).sum();
        assert_eq!(charts, corpus.notes.len() as u64);

        // Default battery: (15 patient blocks + 1 provider) × 2 outcomes.
        assert_eq!(result.fits.len(), 32);
        assert!(result.fits.iter().all(|f| f.error.is_none() || !f.rate_ratios.is_empty() || f.error.is_some()));
        let oud_fit = result
            .fits
            .iter()
            .find(|f| f.outcome == Outcome::Stigma && f.blocks == ["oud"])
            .unwrap();
        assert!(oud_fit.converged, "oud fit converged: {:?}", oud_fit.error);
        let rr = &oud_fit.rate_ratios[0];
        assert_eq!(rr.level, "present");
        assert!(rr.rr > 1.2 && rr.rr < 3.5, "injected RR 2.0 estimated as {}", rr.rr);

        assert_eq!(result.mixed.len(), 4);
        assert_eq!(result.correlations.len(), 2);
        let patient_mixed = result.mixed.iter().find(|m| m.level == EntityLevel::Patient).unwrap();
        assert!(patient_mixed.fit.is_some(), "{:?}", patient_mixed.error);

        // Headline totals agree with the flags.
        assert_eq!(result.headline.notes, corpus.notes.len());
        assert_eq!(
            result.headline.stigma_flagged_notes as u64,
            scan.flags.iter().filter(|f| f.stigma_present()).count() as u64
        );
    }

    #[test]
    fn permissive_classifier_equals_lexicon_only_and_vetoing_classifier_blanks() {
        let (corpus, matcher, abbrevs) = scan_fixture();
        let plain = scan_corpus(&corpus, &matcher, &abbrevs, &ClassifierSet::off()).unwrap();

        // Zero-weight model scores 0.5 everywhere: threshold 0.5 accepts
        // every match, threshold 0.6 rejects every match.
        let accept = |threshold: f64, lexicon: LexiconName| {
            ClassifierModel::from_parts(lexicon, 8, 1.0, threshold, 0.0, Vec::new(), Vec::new())
        };
        let permissive = ClassifierSet {
            stigma: Some(accept(0.5, LexiconName::StigmatizingLabels)),
            doubt: Some(accept(0.5, LexiconName::DoubtMarkers)),
        };
        let gated = scan_corpus(&corpus, &matcher, &abbrevs, &permissive).unwrap();
        assert_eq!(gated.flags, plain.flags);
        assert_eq!(gated.positives, plain.positives);
        assert!(gated.labels.iter().all(|l| l.probability == Some(0.5)));

        let vetoing = ClassifierSet {
            stigma: Some(accept(0.6, LexiconName::StigmatizingLabels)),
            doubt: Some(accept(0.6, LexiconName::DoubtMarkers)),
        };
        let vetoed = scan_corpus(&corpus, &matcher, &abbrevs, &vetoing).unwrap();
        assert_eq!(vetoed.matches_found, plain.matches_found, "gate does not change matching");
        assert_eq!(vetoed.positives, 0);
        assert!(vetoed.flags.iter().all(|f| !f.stigma_present() && !f.doubt_present()));

        // A model in the wrong slot is rejected up front.
        let crossed = ClassifierSet {
            stigma: Some(accept(0.5, LexiconName::DoubtMarkers)),
            doubt: None,
        };
        let err = scan_corpus(&corpus, &matcher, &abbrevs, &crossed).unwrap_err();
        assert_eq!(err.code(), "E_LEXICON_MISMATCH");
    }

    #[test]
    fn attribution_rules_hold_for_orphans_and_missing_providers() {
        let (mut corpus, matcher, abbrevs) = scan_fixture();
        // Orphan a note's patient and strip another note's provider.
        let orphan_note = corpus.notes[0].note_id.clone();
        let orphan_patient = corpus.notes[0].patient_id.clone();
        corpus.patients.remove(&orphan_patient);
        let no_provider_note = corpus
            .notes
            .iter()
            .position(|n| n.patient_id != orphan_patient)
            .unwrap();
        let no_provider_id = corpus.notes[no_provider_note].note_id.clone();
        corpus.notes[no_provider_note].provider_id = None;

        let patient_attr = patient_attribution(&corpus);
        let provider_attr = provider_attribution(&corpus);
        assert_eq!(patient_attr[&orphan_note], None, "orphan unattributed at patient level");
        assert_eq!(provider_attr[&orphan_note], None, "orphan unattributed at provider level too");
        assert_eq!(provider_attr[&no_provider_id], None);
        assert!(patient_attr[&no_provider_id].is_some(), "providerless note still has a patient");

        let scan = scan_corpus(&corpus, &matcher, &abbrevs, &ClassifierSet::off()).unwrap();
        let result = run_analysis(&corpus, &scan.flags, &AnalysisOptions::default()).unwrap();
        let orphan_notes = corpus
            .notes
            .iter()
            .filter(|n| n.patient_id == orphan_patient)
            .count();
        assert_eq!(result.patient_aggregate.notes_unattributed, orphan_notes);
        assert_eq!(result.provider_aggregate.notes_unattributed, orphan_notes + 1);
    }

    #[test]
    fn ineligible_entities_are_excluded_per_fit_not_globally() {
        // Hand-built entities: one Pharmacist and one Unknown provider must
        // drop out of the provider fit; a patient with no insurance key
        // drops out of the insurance fit only.
        let provider = |id: &str, ptype: &str, stigma: u64| EntityOutcome {
            entity_id: id.to_string(),
            level: EntityLevel::Provider,
            stigma_count: stigma,
            doubt_count: 1,
            chart_total: 10,
            covariates: BTreeMap::from([(
                "provider_type".to_string(),
                ptype.to_string(),
            )]),
        };
        let providers: Vec<EntityOutcome> = vec![
            provider("c1", "Physicians", 3),
            provider("c2", "Physicians", 2),
            provider("c3", "RegisteredNurses", 5),
            provider("c4", "RegisteredNurses", 4),
            provider("c5", "Pharmacist", 1),
            provider("c6", "Unknown", 2),
        ];
        let spec = ModelSpec::new(Outcome::Stigma, provider_block());
        let summary = run_fit(&providers, &spec, EntityLevel::Provider);
        assert_eq!(summary.n_entities, 4);
        assert_eq!(summary.excluded_entities, 2);
        assert!(summary.error.is_none(), "{:?}", summary.error);
        assert!(summary
            .rate_ratios
            .iter()
            .all(|rr| rr.level != "Pharmacist" && rr.level != "Unknown"));

        let patient = |id: &str, insured: bool| {
            let mut covariates = BTreeMap::from([
                ("gender".to_string(), if id.ends_with('1') { "Female" } else { "Male" }.to_string()),
            ]);
            if insured {
                covariates.insert("insurance".to_string(), "Private".to_string());
            }
            EntityOutcome {
                entity_id: id.to_string(),
                level: EntityLevel::Patient,
                stigma_count: 2,
                doubt_count: 0,
                chart_total: 6,
                covariates,
            }
        };
        let patients: Vec<EntityOutcome> =
            vec![patient("p1", true), patient("p2", true), patient("p3", false)];
        let gender_spec =
            ModelSpec::new(Outcome::Stigma, PredictorBlock::categorical("gender", "Female", &["Male"]));
        let gender_fit = run_fit(&patients, &gender_spec, EntityLevel::Patient);
        assert_eq!(gender_fit.n_entities, 3);
        assert_eq!(gender_fit.excluded_entities, 0);
        let insurance_spec = ModelSpec::new(
            Outcome::Stigma,
            PredictorBlock::categorical("insurance", "Private", &["GovernmentRun", "SelfPay"]),
        );
        let insurance_fit = run_fit(&patients, &insurance_spec, EntityLevel::Patient);
        assert_eq!(insurance_fit.n_entities, 2);
        assert_eq!(insurance_fit.excluded_entities, 1);
    }

    #[test]
    fn counting_modes_and_model_modes_change_shape_as_documented() {
        let (corpus, matcher, abbrevs) = scan_fixture();
        let scan = scan_corpus(&corpus, &matcher, &abbrevs, &ClassifierSet::off()).unwrap();

        let sentences = run_analysis(
            &corpus,
            &scan.flags,
            &AnalysisOptions {
                counting_mode: CountingMode::Sentences,
                model_mode: ModelMode::PerPredictor,
            },
        )
        .unwrap();
        let flagged = run_analysis(&corpus, &scan.flags, &AnalysisOptions::default()).unwrap();
        for (s, f) in sentences.patient_entities.iter().zip(&flagged.patient_entities) {
            assert_eq!(s.entity_id, f.entity_id);
            assert!(s.stigma_count >= f.stigma_count, "sentence counts dominate chart counts");
            assert!(f.stigma_count <= f.chart_total);
        }

        let joint = run_analysis(
            &corpus,
            &scan.flags,
            &AnalysisOptions {
                counting_mode: CountingMode::FlaggedCharts,
                model_mode: ModelMode::Joint,
            },
        )
        .unwrap();
        // Joint mode: one patient model + one provider model per outcome.
        assert_eq!(joint.fits.len(), 4);
        let joint_patient = joint
            .fits
            .iter()
            .find(|f| f.level == EntityLevel::Patient && f.outcome == Outcome::Stigma)
            .unwrap();
        assert_eq!(joint_patient.blocks.len(), 15);

        assert_eq!("per_predictor".parse::<ModelMode>().unwrap(), ModelMode::PerPredictor);
        assert_eq!("joint".parse::<ModelMode>().unwrap(), ModelMode::Joint);
        assert!("упс".parse::<ModelMode>().is_err());
    }

    #[test]
    fn headline_totals_report_both_counting_modes() {
        let flags = vec![
            NoteFlags { note_id: "n1".into(), stigma_sentence_count: 3, doubt_sentence_count: 0 },
            NoteFlags { note_id: "n2".into(), stigma_sentence_count: 0, doubt_sentence_count: 0 },
            NoteFlags { note_id: "n3".into(), stigma_sentence_count: 1, doubt_sentence_count: 2 },
        ];
        let totals = headline_totals(&flags);
        assert_eq!(totals.notes, 3);
        assert_eq!(totals.stigma_flagged_notes, 2);
        assert_eq!(totals.doubt_flagged_notes, 1);
        assert_eq!(totals.stigma_sentences, 4);
        assert_eq!(totals.doubt_sentences, 2);
    }
}
