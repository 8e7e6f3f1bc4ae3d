//! Run manifests and the markdown report.
//!
//! A [`RunManifest`] pins everything that determines a run's output: input
//! file hashes, lexicon hashes, counting and model modes, classifier state,
//! seed, and thread count. A [`RunSummary`] couples the manifest with every
//! number the report shows, so rendering is a pure function of the summary:
//! identical manifests produce byte-identical reports.
//!
//! Table shapes follow the conventional presentation for this kind of
//! analysis: a descriptive table (counts and percentages per category,
//! mean/SD/median/min/max per outcome), patient-level and provider-level
//! rate-ratio tables with 95% CIs and significance stars (* at p < .05,
//! ** at p < .0001), a clustering table (random-intercept variance and
//! median IRR per level), and Spearman correlations between the outcomes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::{AggregateReport, CountingMode, DescriptiveStats, EntityLevel};
use crate::ingest::{
    condition_label, AgeCategory, Corpus, Ethnicity, Insurance, ProviderType, CONDITIONS,
};
use crate::pipeline::{
    provider_block, AnalysisResult, CorrelationSummary, FitSummary,
    HeadlineTotals, MixedSummary, ModelMode, TABLE2_CONDITION_ORDER,
};
use crate::stats::{Outcome, RateRatio, TermStatus};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no fitted models to render; run the fit stage first")]
    EmptyFits,
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::EmptyFits => "E_EMPTY_FITS",
        }
    }
}

/// Everything that determines a run's output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Input table path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Lexicon name → SHA-256 of the lexicon file used.
    pub lexicons: BTreeMap<String, String>,
    pub counting_mode: CountingMode,
    pub model_mode: ModelMode,
    /// Lexicon name → "off" or the SHA-256 of the classifier model file.
    pub classifiers: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub threads: usize,
}

impl RunManifest {
    pub fn new(counting_mode: CountingMode, model_mode: ModelMode, threads: usize) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            lexicons: BTreeMap::new(),
            counting_mode,
            model_mode,
            classifiers: BTreeMap::from([
                ("stigmatizing_labels".to_string(), "off".to_string()),
                ("doubt_markers".to_string(), "off".to_string()),
            ]),
            seed: None,
            threads,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Mean/SD/min/max of one numeric variable (patient age in Table 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl NumericSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            f64::NAN
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(NumericSummary { mean, sd, min, max })
    }
}

/// The single source every rendered number comes from.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub headline: HeadlineTotals,
    pub patient_aggregate: AggregateReport,
    pub provider_aggregate: AggregateReport,
    pub patient_descriptives: DescriptiveStats,
    pub provider_descriptives: DescriptiveStats,
    pub patient_age: Option<NumericSummary>,
    pub fits: Vec<FitSummary>,
    pub mixed: Vec<MixedSummary>,
    pub correlations: Vec<CorrelationSummary>,
    /// Artifact filename → SHA-256 recorded at write time.
    pub artifacts: BTreeMap<String, String>,
}

impl RunSummary {
    pub fn new(manifest: RunManifest, result: AnalysisResult, corpus: &Corpus) -> Self {
        let ages: Vec<f64> = corpus.patients.values().map(|p| p.age_years).collect();
        RunSummary {
            manifest,
            headline: result.headline,
            patient_aggregate: result.patient_aggregate,
            provider_aggregate: result.provider_aggregate,
            patient_descriptives: result.patient_descriptives,
            provider_descriptives: result.provider_descriptives,
            patient_age: NumericSummary::of(&ages),
            fits: result.fits,
            mixed: result.mixed,
            correlations: result.correlations,
            artifacts: BTreeMap::new(),
        }
    }
}

/// Render one rate ratio the way the tables present it: estimates as
/// "RR (low, high)stars" at two decimals, diverging levels as flagged text
/// instead of fake numbers.
pub fn format_rr_cell(rr: &RateRatio) -> String {
    match rr.status {
        TermStatus::Estimated { .. } => {
            format!("{:.2} ({:.2}, {:.2}){}", rr.rr, rr.ci_low, rr.ci_high, rr.stars)
        }
        TermStatus::ZeroEvents => "not estimable (zero events)".to_string(),
        TermStatus::ZeroEntities => "— (no entities)".to_string(),
        TermStatus::InfiniteReference => {
            "not estimable (reference level has zero events)".to_string()
        }
    }
}

/// "12.5" / "0.5" / "3" — fixed 2-decimal formatting with trailing zeros
/// trimmed, for counts and medians.
fn trim2(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".to_string() } else { s.to_string() }
}

fn format_p(p: f64) -> String {
    if p.is_nan() {
        "—".to_string()
    } else if p < 1e-4 {
        "<.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

fn level_label(block: &str, level: &str) -> String {
    let mapped = match block {
        "ethnicity" => Ethnicity::ALL.iter().find(|v| v.as_str() == level).map(|v| v.label()),
        "insurance" => Insurance::ALL.iter().find(|v| v.as_str() == level).map(|v| v.label()),
        "age_category" => {
            AgeCategory::ALL.iter().find(|v| v.as_str() == level).map(|v| v.label())
        }
        "provider_type" => {
            ProviderType::ALL.iter().find(|v| v.as_str() == level).map(|v| v.label())
        }
        name if CONDITIONS.contains(&name) => Some(condition_label(name)),
        _ => None,
    };
    mapped.unwrap_or(level).to_string()
}

fn fit_for<'a>(
    fits: &'a [FitSummary],
    outcome: Outcome,
    level: EntityLevel,
    block: &str,
) -> Option<&'a FitSummary> {
    fits.iter()
        .find(|f| f.outcome == outcome && f.level == level && f.blocks.iter().any(|b| b == block))
}

fn rr_cell(fit: Option<&FitSummary>, block: &str, level_name: &str) -> String {
    let Some(fit) = fit else {
        return "—".to_string();
    };
    if let Some(error) = &fit.error {
        return format!("not estimable ({error})");
    }
    fit.rate_ratios
        .iter()
        .find(|rr| rr.block == block && rr.level == level_name)
        .map(format_rr_cell)
        .unwrap_or_else(|| "—".to_string())
}

struct Markdown(String);

impl Markdown {
    fn line(&mut self, text: &str) {
        self.0.push_str(text);
        self.0.push('\n');
    }

    fn blank(&mut self) {
        self.0.push('\n');
    }

    fn row(&mut self, cells: &[&str]) {
        self.line(&format!("| {} |", cells.join(" | ")));
    }

    fn header(&mut self, cells: &[&str]) {
        self.row(cells);
        self.line(&format!("|{}|", cells.iter().map(|_| "---").collect::<Vec<_>>().join("|")));
    }
}

fn render_manifest(md: &mut Markdown, manifest: &RunManifest) {
    md.line("## Run Manifest");
    md.blank();
    md.header(&["Field", "Value"]);
    md.row(&["Tool version", &manifest.tool_version]);
    md.row(&["Counting mode", manifest.counting_mode.as_str()]);
    md.row(&["Model mode", manifest.model_mode.as_str()]);
    for (name, state) in &manifest.classifiers {
        md.row(&[&format!("Classifier ({name})"), state]);
    }
    let seed = manifest.seed.map(|s| s.to_string()).unwrap_or_else(|| "—".to_string());
    md.row(&["Seed", &seed]);
    md.row(&["Threads", &manifest.threads.to_string()]);
    for (name, hash) in &manifest.lexicons {
        md.row(&[&format!("Lexicon {name}"), &format!("sha256:{hash}")]);
    }
    for (name, path) in &manifest.inputs {
        md.row(&[&format!("Input {name}"), path]);
    }
    md.blank();
}

fn render_headline(md: &mut Markdown, summary: &RunSummary) {
    let headline = &summary.headline;
    md.line("## Corpus Totals");
    md.blank();
    md.line(&format!(
        "Models count **{}** per entity; both counting modes are shown so the \
         choice is visible.",
        match summary.manifest.counting_mode {
            CountingMode::FlaggedCharts => "flagged charts",
            CountingMode::Sentences => "flagged sentences",
        }
    ));
    md.blank();
    md.header(&["Measure", "Stigmatizing Labels", "Doubt Markers"]);
    md.row(&[
        "Flagged charts",
        &headline.stigma_flagged_notes.to_string(),
        &headline.doubt_flagged_notes.to_string(),
    ]);
    md.row(&[
        "Flagged sentences",
        &headline.stigma_sentences.to_string(),
        &headline.doubt_sentences.to_string(),
    ]);
    md.blank();
    md.line(&format!(
        "{} notes scanned; {} unattributed at the patient level, {} at the \
         provider level (no caregiver id or unattributed patient).",
        headline.notes,
        summary.patient_aggregate.notes_unattributed,
        summary.provider_aggregate.notes_unattributed,
    ));
    md.blank();
}

fn category_cell(stats: &DescriptiveStats, block: &str, level: &str) -> String {
    stats
        .categories
        .iter()
        .find(|c| c.block == block)
        .and_then(|c| c.rows.iter().find(|r| r.level == level))
        .map(|r| format!("{} ({:.1}%)", r.count, r.percent))
        .unwrap_or_else(|| "0 (0.0%)".to_string())
}

fn render_outcome_rows(md: &mut Markdown, stats: &DescriptiveStats, unit: &str) {
    for summary in &stats.outcomes {
        let title = match summary.name.as_str() {
            "stigma_count" => format!("Stigmatizing Labels Count Per {unit}"),
            "doubt_count" => format!("Doubt Marker Labels Count Per {unit}"),
            "chart_total" => format!("Charts Per {unit}"),
            other => other.to_string(),
        };
        md.row(&[&format!("**{title}**"), ""]);
        md.row(&["Mean (SD)", &format!("{} ({})", trim2(summary.mean), trim2(summary.sd))]);
        md.row(&[
            "Median [Min, Max]",
            &format!(
                "{} [{}, {}]",
                trim2(summary.median),
                trim2(summary.min),
                trim2(summary.max)
            ),
        ]);
    }
}

fn render_table1(md: &mut Markdown, summary: &RunSummary) {
    let patients = &summary.patient_descriptives;
    let providers = &summary.provider_descriptives;
    md.line(
        "## Table 1. Descriptive statistics on patients, provider types, and \
         distributions of stigmatizing labels and doubt markers per chart",
    );
    md.blank();
    md.header(&["", &format!("Overall (N={} Patients)", patients.n)]);
    md.row(&["**Race/Ethnicity**", ""]);
    for level in Ethnicity::ALL {
        md.row(&[level.label(), &category_cell(patients, "ethnicity", level.as_str())]);
    }
    if let Some(age) = &summary.patient_age {
        md.row(&[
            "Age: Mean (SD) [Min, Max]",
            &format!(
                "{} years ({}) [{}, {}]",
                trim2(age.mean),
                trim2(age.sd),
                trim2(age.min),
                trim2(age.max)
            ),
        ]);
    }
    md.row(&["**Insurance**", ""]);
    for level in Insurance::ALL {
        md.row(&[level.label(), &category_cell(patients, "insurance", level.as_str())]);
    }
    md.row(&["**Gender**", ""]);
    for level in ["Female", "Male"] {
        md.row(&[level, &category_cell(patients, "gender", level)]);
    }
    md.row(&["**Diagnoses**", ""]);
    for condition in CONDITIONS {
        md.row(&[condition_label(condition), &category_cell(patients, condition, "present")]);
    }
    md.row(&["**Age Category**", ""]);
    for level in AgeCategory::ALL {
        md.row(&[level.label(), &category_cell(patients, "age_category", level.as_str())]);
    }
    render_outcome_rows(md, patients, "Patient");
    md.blank();
    md.header(&["", &format!("Provider Types (N = {} Providers)", providers.n)]);
    for level in ProviderType::ALL {
        md.row(&[level.label(), &category_cell(providers, "provider_type", level.as_str())]);
    }
    render_outcome_rows(md, providers, "Provider");
    md.blank();
}

fn star_legend(md: &mut Markdown) {
    md.line("*p is significant at <.05 value");
    md.blank();
    md.line("**p is significant at <.0001 value");
    md.blank();
}

fn render_table2(md: &mut Markdown, summary: &RunSummary) {
    md.line(
        "## Table 2. Poisson regression results: patient predictors of \
         stigmatizing linguistic features per chart. Rate Ratios (95% CI)",
    );
    md.blank();
    md.header(&["", "Stigmatizing Classifier Labels", "Doubt Marker Classifier Labels"]);
    let cell = |outcome: Outcome, block: &str, level: &str| {
        rr_cell(fit_for(&summary.fits, outcome, EntityLevel::Patient, block), block, level)
    };

    md.row(&[
        "Gender (Ref = Female): Male",
        &cell(Outcome::Stigma, "gender", "Male"),
        &cell(Outcome::Doubt, "gender", "Male"),
    ]);
    md.row(&["**Ethnicity (Ref = White)**", "", ""]);
    for level in Ethnicity::ALL.iter().filter(|l| **l != Ethnicity::White) {
        md.row(&[
            level.label(),
            &cell(Outcome::Stigma, "ethnicity", level.as_str()),
            &cell(Outcome::Doubt, "ethnicity", level.as_str()),
        ]);
    }
    md.row(&["**Insurance (Ref = Private)**", "", ""]);
    for level in [Insurance::GovernmentRun, Insurance::SelfPay] {
        md.row(&[
            level.label(),
            &cell(Outcome::Stigma, "insurance", level.as_str()),
            &cell(Outcome::Doubt, "insurance", level.as_str()),
        ]);
    }
    md.row(&["**Diagnoses**", "", ""]);
    for condition in TABLE2_CONDITION_ORDER {
        md.row(&[
            condition_label(condition),
            &cell(Outcome::Stigma, condition, "present"),
            &cell(Outcome::Doubt, condition, "present"),
        ]);
    }
    md.row(&["**Age (Ref = Middle Aged (45-64))**", "", ""]);
    for level in AgeCategory::ALL.iter().filter(|l| **l != AgeCategory::MiddleAged) {
        md.row(&[
            level.label(),
            &cell(Outcome::Stigma, "age_category", level.as_str()),
            &cell(Outcome::Doubt, "age_category", level.as_str()),
        ]);
    }
    md.blank();
    star_legend(md);

    let insurance_excluded = fit_for(&summary.fits, Outcome::Stigma, EntityLevel::Patient, "insurance")
        .map(|f| f.excluded_entities)
        .unwrap_or(0);
    if insurance_excluded > 0 {
        md.line(&format!(
            "Patients with unrecognized insurance labels were excluded from the \
             insurance models (n = {insurance_excluded})."
        ));
        md.blank();
    }
}

fn provider_count(summary: &RunSummary, level: &str) -> usize {
    summary
        .provider_descriptives
        .categories
        .iter()
        .find(|c| c.block == "provider_type")
        .and_then(|c| c.rows.iter().find(|r| r.level == level))
        .map(|r| r.count)
        .unwrap_or(0)
}

fn render_table3(md: &mut Markdown, summary: &RunSummary) {
    md.line(
        "## Table 3. Poisson regression results, modeled at the provider level. \
         Rate Ratios (95% CI)",
    );
    md.blank();
    md.header(&["", "Stigmatizing Classifier Labels", "Doubt Marker Classifier Labels"]);
    md.row(&["**Provider Type (Ref = Physicians)**", "", ""]);
    let block = provider_block();
    for level in block.indicator_levels() {
        let stigma = rr_cell(
            fit_for(&summary.fits, Outcome::Stigma, EntityLevel::Provider, "provider_type"),
            "provider_type",
            level,
        );
        let doubt = rr_cell(
            fit_for(&summary.fits, Outcome::Doubt, EntityLevel::Provider, "provider_type"),
            "provider_type",
            level,
        );
        md.row(&[&level_label("provider_type", level), &stigma, &doubt]);
    }
    md.blank();
    star_legend(md);
    let pharmacists = provider_count(summary, "Pharmacist");
    if pharmacists > 0 {
        md.line(&format!(
            "Pharmacists removed from regression analyses due to low cell size (n = {pharmacists})"
        ));
        md.blank();
    }
    let unknown = provider_count(summary, "Unknown");
    if unknown > 0 {
        md.line(&format!(
            "Providers with unknown category removed from regression analyses (n = {unknown})"
        ));
        md.blank();
    }
}

fn render_mixed(md: &mut Markdown, summary: &RunSummary) {
    md.line("## Clustering: random-intercept Poisson models");
    md.blank();
    md.header(&["Level", "Outcome", "σ²", "Median IRR", "Log-likelihood", "Clusters", "Notes"]);
    for row in &summary.mixed {
        let level = match row.level {
            EntityLevel::Patient => "Patient",
            EntityLevel::Provider => "Provider",
        };
        match (&row.fit, &row.error) {
            (Some(fit), _) => md.row(&[
                level,
                row.outcome.label(),
                &format!("{:.4}", fit.sigma2),
                &format!("{:.2}", fit.median_irr),
                &format!("{:.2}", fit.loglik),
                &fit.n_clusters.to_string(),
                &fit.n_obs.to_string(),
            ]),
            (None, error) => {
                let message = error.as_deref().unwrap_or("not estimable");
                md.row(&[level, row.outcome.label(), "—", "—", "—", "—", message]);
            }
        }
    }
    md.blank();
}

fn render_correlations(md: &mut Markdown, summary: &RunSummary) {
    md.line("## Spearman correlation between stigmatizing labels and doubt markers");
    md.blank();
    md.header(&["Level", "Rho", "p-value", "N"]);
    for row in &summary.correlations {
        let level = match row.level {
            EntityLevel::Patient => "Patient",
            EntityLevel::Provider => "Provider",
        };
        match &row.error {
            None => md.row(&[
                level,
                &format!("{:.4}", row.rho),
                &format_p(row.p_value),
                &row.n.to_string(),
            ]),
            Some(error) => md.row(&[level, "—", "—", &format!("{} ({error})", row.n)]),
        }
    }
    md.blank();
}

/// Render the full markdown report from one run's summary.
pub fn render_report(summary: &RunSummary) -> Result<String, ReportError> {
    if summary.fits.is_empty() {
        return Err(ReportError::EmptyFits);
    }
    let mut md = Markdown(String::new());
    md.line("# Stigmatizing Language and Doubt Marker Scan");
    md.blank();
    render_manifest(&mut md, &summary.manifest);
    render_headline(&mut md, summary);
    render_table1(&mut md, summary);
    render_table2(&mut md, summary);
    render_table3(&mut md, summary);
    render_mixed(&mut md, summary);
    render_correlations(&mut md, summary);
    Ok(md.0)
}

#[cfg(test)]
mod tests {
    use crate::stats::stars;

    use super::*;

    fn estimated(block: &str, level: &str, rr: f64, lo: f64, hi: f64, p: f64) -> RateRatio {
        RateRatio {
            block: block.to_string(),
            level: level.to_string(),
            rr,
            ci_low: lo,
            ci_high: hi,
            p_value: p,
            stars: stars(p).to_string(),
            n_entities: 100,
            events: 40,
            status: TermStatus::Estimated { col: 1 },
        }
    }

    #[test]
    fn rr_cell_matches_published_presentation() {
        let rr = estimated("ethnicity", "BlackAfricanAmerican", 1.164, 1.081, 1.252, 5e-6);
        assert_eq!(format_rr_cell(&rr), "1.16 (1.08, 1.25)**");

        let one_star = estimated("age_category", "Aged", 0.899, 0.84, 0.96, 0.003);
        assert_eq!(format_rr_cell(&one_star), "0.90 (0.84, 0.96)*");

        let plain = estimated("gender", "Male", 1.02, 0.97, 1.08, 0.4);
        assert_eq!(format_rr_cell(&plain), "1.02 (0.97, 1.08)");

        let zero = RateRatio {
            status: TermStatus::ZeroEvents,
            rr: 0.0,
            ci_low: 0.0,
            ci_high: f64::INFINITY,
            p_value: f64::NAN,
            stars: String::new(),
            ..estimated("x", "y", 0.0, 0.0, 0.0, 1.0)
        };
        assert_eq!(format_rr_cell(&zero), "not estimable (zero events)");
    }

    #[test]
    fn helpers_format_numbers_the_way_the_tables_do() {
        assert_eq!(trim2(0.5), "0.5");
        assert_eq!(trim2(1.99), "1.99");
        assert_eq!(trim2(0.0), "0");
        assert_eq!(trim2(90.0), "90");
        assert_eq!(format_p(0.03), "0.0300");
        assert_eq!(format_p(5e-6), "<.0001");
        assert_eq!(format_p(f64::NAN), "—");
        assert_eq!(level_label("ethnicity", "BlackAfricanAmerican"), "Black/African American");
        assert_eq!(level_label("insurance", "GovernmentRun"), "Government-run");
        assert_eq!(level_label("age_category", "Aged80Plus"), "Aged, 80 and over (>80)");
        assert_eq!(level_label("provider_type", "APP"), "Advanced Practice Providers");
        assert_eq!(level_label("oud", "present"), "Opioid Use Disorder");
    }

    #[test]
    fn sha256_matches_known_vector() {
        // SHA-256 of the empty string and of "abc" are standard test vectors.
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn empty_fits_is_an_error() {
        let manifest = RunManifest::new(CountingMode::FlaggedCharts, ModelMode::PerPredictor, 1);
        let summary = RunSummary {
            manifest,
            headline: HeadlineTotals::default(),
            patient_aggregate: AggregateReport {
                level: EntityLevel::Patient,
                mode: CountingMode::FlaggedCharts,
                notes_seen: 0,
                notes_unattributed: 0,
                entities: 0,
            },
            provider_aggregate: AggregateReport {
                level: EntityLevel::Provider,
                mode: CountingMode::FlaggedCharts,
                notes_seen: 0,
                notes_unattributed: 0,
                entities: 0,
            },
            patient_descriptives: DescriptiveStats {
                n: 0,
                categories: Vec::new(),
                outcomes: Vec::new(),
            },
            provider_descriptives: DescriptiveStats {
                n: 0,
                categories: Vec::new(),
                outcomes: Vec::new(),
            },
            patient_age: None,
            fits: Vec::new(),
            mixed: Vec::new(),
            correlations: Vec::new(),
            artifacts: BTreeMap::new(),
        };
        let err = render_report(&summary).unwrap_err();
        assert_eq!(err.code(), "E_EMPTY_FITS");
    }

    #[test]
    fn full_report_renders_every_section_deterministically() {
        use crate::ingest::{dedup_and_filter_default, load_tables, RecodeMaps};
        use crate::lexicon::{Lexicon, Matcher};
        use crate::pipeline::{run_analysis, scan_corpus, AnalysisOptions, ClassifierSet};
        use crate::synth::{generate, CovariateSpec, SynthConfig};
        use crate::text::AbbrevSet;

        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            seed: 3,
            n_patients: 40,
            notes_per_patient: (2, 5),
            base_rate: 0.3,
            sigma2: 0.0,
            covariates: vec![CovariateSpec {
                name: "male".to_string(),
                prevalence: 0.5,
                stigma_rr: 1.5,
                doubt_rr: 1.0,
            }],
            filler_vocab: 40,
        };
        let out = generate(&config, dir.path()).unwrap();
        let corpus =
            dedup_and_filter_default(load_tables(&out.tables, &RecodeMaps::default()).unwrap());
        let matcher = Matcher::build(&[&Lexicon::shipped_doubt(), &Lexicon::shipped_stigma()]);
        let scan = scan_corpus(&corpus, &matcher, &AbbrevSet::shipped(), &ClassifierSet::off())
            .unwrap();
        let result = run_analysis(&corpus, &scan.flags, &AnalysisOptions::default()).unwrap();
        let manifest = RunManifest::new(CountingMode::FlaggedCharts, ModelMode::PerPredictor, 4);
        let summary = RunSummary::new(manifest, result, &corpus);

        let text = render_report(&summary).unwrap();
        for section in [
            "## Run Manifest",
            "## Corpus Totals",
            "## Table 1.",
            "## Table 2.",
            "## Table 3.",
            "## Clustering",
            "## Spearman correlation",
            "*p is significant at <.05 value",
            "**p is significant at <.0001 value",
            "Gender (Ref = Female)",
            "Black/African American",
            "Opioid Use Disorder",
            "Middle Aged (45-64)",
        ] {
            assert!(text.contains(section), "missing {section:?}");
        }
        // Table 3 never names excluded provider levels as rows.
        let table3 = text.split("## Table 3.").nth(1).unwrap().split("##").next().unwrap();
        assert!(!table3.contains("| Pharmacists |"));
        assert!(!table3.contains("| Unknown |"));

        // Rendering is a pure function of the summary.
        assert_eq!(text, render_report(&summary).unwrap());

        // The summary JSON round-trips, including any non-finite cells.
        let json = serde_json::to_string_pretty(&summary).unwrap();
        let back: RunSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(render_report(&back).unwrap(), text);
    }
}
