//! Command-line front end: orchestrates ingestion, scanning, aggregation,
//! model fitting, and report rendering, writing every stage's output as a
//! file artifact.
//!
//! Errors print a single machine-parsable line to stderr
//! (`error[E_CODE] message`) and exit 1; flag/usage errors exit 2 via clap.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use stigma_scan_core::aggregate::{aggregate_entities, CountingMode, EntityLevel};
use stigma_scan_core::artifacts::{
    self, ArtifactError, ENTITIES_PATIENT_CSV, ENTITIES_PROVIDER_CSV, REPORT_MD,
};
use stigma_scan_core::classifier::{
    evaluate, read_annotations, read_model, train, write_model, ClassifierError, TrainOptions,
};
use stigma_scan_core::ingest::{
    dedup_and_filter_default, load_tables, Corpus, IngestError, RecodeMaps, TablePaths,
};
use stigma_scan_core::lexicon::{Lexicon, LexiconError, LexiconName, Matcher};
use stigma_scan_core::pipeline::{
    patient_attribution, patient_covariates, provider_attribution, provider_covariates,
    run_analysis, scan_corpus, AnalysisOptions, ClassifierSet, ModelMode, PipelineError,
};
use stigma_scan_core::report::{
    render_report, sha256_file, sha256_hex, ReportError, RunManifest, RunSummary,
};
use stigma_scan_core::synth::{self, SynthConfig, SynthError};
use stigma_scan_core::text::AbbrevSet;

#[derive(Parser)]
#[command(
    name = "stigma-scan",
    version,
    about = "Detect stigmatizing labels and doubt markers in clinical notes"
)]
struct Cli {
    /// Worker threads for scanning and model fitting (default: all cores).
    #[arg(long, global = true, env = "STIGMA_SCAN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan notes for lexicon matches; write sentence labels and note flags.
    Scan(ScanArgs),
    /// Train a sentence classifier from annotated sentences.
    Train(TrainArgs),
    /// Aggregate note flags into per-patient and per-provider outcomes.
    Aggregate(AggregateArgs),
    /// Fit regression models from a prior scan's note flags.
    Fit(FitArgs),
    /// Render the markdown report from a completed run's artifacts.
    Report(ReportArgs),
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Run the full pipeline: scan, aggregate, fit, and report.
    All(AllArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// NOTEEVENTS-shaped CSV (ROW_ID, SUBJECT_ID, HADM_ID, CGID, CATEGORY,
    /// CHARTTIME, TEXT).
    #[arg(long)]
    notes: PathBuf,
    /// PATIENTS-shaped CSV (SUBJECT_ID, GENDER, DOB).
    #[arg(long)]
    patients: PathBuf,
    /// ADMISSIONS-shaped CSV (SUBJECT_ID, HADM_ID, INSURANCE, ETHNICITY,
    /// ADMITTIME).
    #[arg(long)]
    admissions: PathBuf,
    /// CAREGIVERS-shaped CSV (CGID, LABEL).
    #[arg(long)]
    caregivers: PathBuf,
    /// DIAGNOSES_ICD-shaped CSV (SUBJECT_ID, ICD9_CODE).
    #[arg(long)]
    diagnoses: PathBuf,
}

impl CorpusArgs {
    fn table_paths(&self) -> TablePaths {
        TablePaths {
            notes: self.notes.clone(),
            patients: self.patients.clone(),
            admissions: self.admissions.clone(),
            caregivers: self.caregivers.clone(),
            diagnoses: self.diagnoses.clone(),
        }
    }

    fn load(&self) -> Result<Corpus, CliError> {
        let corpus = load_tables(&self.table_paths(), &RecodeMaps::default())?;
        Ok(dedup_and_filter_default(corpus))
    }

    fn record_inputs(&self, manifest: &mut RunManifest) {
        for (key, path) in [
            ("notes", &self.notes),
            ("patients", &self.patients),
            ("admissions", &self.admissions),
            ("caregivers", &self.caregivers),
            ("diagnoses", &self.diagnoses),
        ] {
            manifest.inputs.insert(key.to_string(), path.display().to_string());
        }
    }
}

#[derive(Args)]
struct LexiconArgs {
    /// Stigmatizing-labels lexicon file (default: the shipped list).
    #[arg(long)]
    lexicon_stigma: Option<PathBuf>,
    /// Doubt-markers lexicon file (default: the shipped list).
    #[arg(long)]
    lexicon_doubt: Option<PathBuf>,
}

impl LexiconArgs {
    fn load(&self) -> Result<(Lexicon, Lexicon), CliError> {
        let stigma = match &self.lexicon_stigma {
            Some(path) => Lexicon::load(path, LexiconName::StigmatizingLabels)?,
            None => Lexicon::shipped_stigma(),
        };
        let doubt = match &self.lexicon_doubt {
            Some(path) => Lexicon::load(path, LexiconName::DoubtMarkers)?,
            None => Lexicon::shipped_doubt(),
        };
        Ok((stigma, doubt))
    }

    fn record_hashes(&self, manifest: &mut RunManifest) -> Result<(), CliError> {
        let stigma = match &self.lexicon_stigma {
            Some(path) => hash_file(path)?,
            None => sha256_hex(stigma_scan_core::data::STIGMATIZING_LABELS.as_bytes()),
        };
        let doubt = match &self.lexicon_doubt {
            Some(path) => hash_file(path)?,
            None => sha256_hex(stigma_scan_core::data::DOUBT_MARKERS.as_bytes()),
        };
        manifest.lexicons.insert(LexiconName::StigmatizingLabels.as_str().to_string(), stigma);
        manifest.lexicons.insert(LexiconName::DoubtMarkers.as_str().to_string(), doubt);
        Ok(())
    }
}

#[derive(Args)]
struct ClassifierArgs {
    /// Classifier model file, or "off" (default). Repeat the flag to gate
    /// both lexicons; each model file names the lexicon it gates.
    #[arg(long = "classifier", value_name = "MODEL|off", default_value = "off")]
    classifier: Vec<String>,
}

impl ClassifierArgs {
    fn model_paths(&self) -> Result<Vec<&str>, CliError> {
        let (off, paths): (Vec<&str>, Vec<&str>) =
            self.classifier.iter().map(String::as_str).partition(|v| *v == "off");
        if !off.is_empty() && !paths.is_empty() {
            return Err(CliError::BadFlag {
                message: "--classifier cannot mix \"off\" with model files".to_string(),
            });
        }
        Ok(paths)
    }

    fn load(&self) -> Result<ClassifierSet, CliError> {
        let mut set = ClassifierSet::off();
        for path in self.model_paths()? {
            let model = read_model(Path::new(path))?;
            let slot = match model.lexicon {
                LexiconName::StigmatizingLabels => &mut set.stigma,
                LexiconName::DoubtMarkers => &mut set.doubt,
            };
            if slot.is_some() {
                return Err(CliError::BadFlag {
                    message: format!(
                        "two --classifier models gate the {} lexicon",
                        model.lexicon.as_str()
                    ),
                });
            }
            *slot = Some(model);
        }
        Ok(set)
    }

    fn record_hashes(&self, manifest: &mut RunManifest) -> Result<(), CliError> {
        for path in self.model_paths()? {
            let model = read_model(Path::new(path))?;
            manifest
                .classifiers
                .insert(model.lexicon.as_str().to_string(), hash_file(Path::new(path))?);
        }
        Ok(())
    }
}

#[derive(Args)]
struct ModeArgs {
    /// Outcome counting: "flagged-charts" (default) or "sentences".
    #[arg(long, default_value = "flagged-charts")]
    counting_mode: String,
    /// Regression structure: "per-predictor" (default) or "joint".
    #[arg(long, default_value = "per-predictor")]
    model_mode: String,
}

impl ModeArgs {
    fn parse(&self) -> Result<AnalysisOptions, CliError> {
        let counting_mode: CountingMode = self
            .counting_mode
            .parse()
            .map_err(|message| CliError::BadFlag { message })?;
        let model_mode: ModelMode =
            self.model_mode.parse().map_err(|message| CliError::BadFlag { message })?;
        Ok(AnalysisOptions { counting_mode, model_mode })
    }
}

#[derive(Args)]
struct ScanArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    lexicons: LexiconArgs,
    #[command(flatten)]
    classifiers: ClassifierArgs,
    /// Directory for output artifacts (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Annotated-sentence CSV (sentence, term, lexicon, gold_label, annotator).
    #[arg(long)]
    annotations: PathBuf,
    /// Which lexicon's matches the classifier gates: "stigmatizing_labels"
    /// or "doubt_markers".
    #[arg(long)]
    lexicon: String,
    /// Where to write the trained model.
    #[arg(long)]
    model_out: PathBuf,
    /// Held-out annotation CSV for evaluation (default: evaluate on the
    /// training rows and say so).
    #[arg(long)]
    eval: Option<PathBuf>,
    /// Context window: tokens on each side of the match that become features.
    #[arg(long, default_value_t = TrainOptions::default().window_k)]
    window_k: usize,
    /// L2 regularization strength.
    #[arg(long, default_value_t = TrainOptions::default().l2)]
    l2: f64,
    /// Decision threshold on the predicted probability.
    #[arg(long, default_value_t = TrainOptions::default().threshold)]
    threshold: f64,
}

#[derive(Args)]
struct AggregateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    lexicons: LexiconArgs,
    #[command(flatten)]
    classifiers: ClassifierArgs,
    /// Outcome counting: "flagged-charts" (default) or "sentences".
    #[arg(long, default_value = "flagged-charts")]
    counting_mode: String,
    /// Directory for output artifacts (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// note_flags.csv from a prior scan of the same corpus.
    #[arg(long)]
    flags: PathBuf,
    #[command(flatten)]
    modes: ModeArgs,
    /// Directory for output artifacts (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding a completed run's artifacts (summary.json etc.).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator config (key=value lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the generated tables (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AllArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    lexicons: LexiconArgs,
    #[command(flatten)]
    classifiers: ClassifierArgs,
    #[command(flatten)]
    modes: ModeArgs,
    /// Directory for output artifacts (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Ingest(#[from] IngestError),
    #[error("{0}")]
    Lexicon(#[from] LexiconError),
    #[error("{0}")]
    Classifier(#[from] ClassifierError),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Artifact(#[from] ArtifactError),
    #[error("{0}")]
    Report(#[from] ReportError),
    #[error("{message}")]
    BadFlag { message: String },
    #[error("failed to access {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Ingest(e) => e.code(),
            CliError::Lexicon(e) => e.code(),
            CliError::Classifier(e) => e.code(),
            CliError::Pipeline(e) => e.code(),
            CliError::Synth(e) => e.code(),
            CliError::Artifact(e) => e.code(),
            CliError::Report(e) => e.code(),
            CliError::BadFlag { .. } => "E_BAD_FLAG",
            CliError::Io { .. } => "E_IO",
        }
    }
}

fn hash_file(path: &Path) -> Result<String, CliError> {
    sha256_file(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| CliError::Io { path: dir.display().to_string(), source })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Build errors only if a global pool already exists; keep that one.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    if let Err(error) = run(cli.command) {
        eprintln!("error[{}] {}", error.code(), error);
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Scan(args) => run_scan(args),
        Command::Train(args) => run_train(args),
        Command::Aggregate(args) => run_aggregate(args),
        Command::Fit(args) => run_fit(args),
        Command::Report(args) => run_report(args),
        Command::Synth(args) => run_synth(args),
        Command::All(args) => run_all(args),
    }
}

fn run_scan(args: ScanArgs) -> Result<(), CliError> {
    let corpus = args.corpus.load()?;
    let (stigma, doubt) = args.lexicons.load()?;
    let classifiers = args.classifiers.load()?;
    let matcher = Matcher::build(&[&stigma, &doubt]);
    let scan = scan_corpus(&corpus, &matcher, &AbbrevSet::shipped(), &classifiers)?;
    ensure_dir(&args.out_dir)?;
    let labels_csv = artifacts::write_labels(&args.out_dir, &scan.labels)?;
    let flags_csv = artifacts::write_flags(&args.out_dir, &scan.flags)?;
    println!(
        "{}",
        serde_json::json!({
            "notes_scanned": scan.notes_scanned,
            "sentences_scanned": scan.sentences_scanned,
            "matches_found": scan.matches_found,
            "positives": scan.positives,
            "sentence_labels": labels_csv.display().to_string(),
            "note_flags": flags_csv.display().to_string(),
        })
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let lexicon: LexiconName =
        args.lexicon.parse().map_err(|message| CliError::BadFlag { message })?;
    let mut rows = read_annotations(&args.annotations)?;
    rows.retain(|row| row.lexicon == lexicon);
    let opts = TrainOptions {
        window_k: args.window_k,
        l2: args.l2,
        threshold: args.threshold,
        ..TrainOptions::default()
    };
    let model = train(&rows, lexicon, &opts)?;
    write_model(&model, &args.model_out)?;
    let (eval_rows, eval_on) = match &args.eval {
        Some(path) => {
            let mut held_out = read_annotations(path)?;
            held_out.retain(|row| row.lexicon == lexicon);
            (held_out, "held_out")
        }
        None => (rows, "training"),
    };
    let metrics = evaluate(&model, &eval_rows)?;
    println!(
        "{}",
        serde_json::json!({
            "model": args.model_out.display().to_string(),
            "lexicon": lexicon.as_str(),
            "features": model.features.len(),
            "eval_on": eval_on,
            "eval_rows": eval_rows.len(),
            "metrics": metrics,
        })
    );
    Ok(())
}

fn run_aggregate(args: AggregateArgs) -> Result<(), CliError> {
    let counting_mode: CountingMode =
        args.counting_mode.parse().map_err(|message| CliError::BadFlag { message })?;
    let corpus = args.corpus.load()?;
    let (stigma, doubt) = args.lexicons.load()?;
    let classifiers = args.classifiers.load()?;
    let matcher = Matcher::build(&[&stigma, &doubt]);
    let scan = scan_corpus(&corpus, &matcher, &AbbrevSet::shipped(), &classifiers)?;
    ensure_dir(&args.out_dir)?;
    artifacts::write_flags(&args.out_dir, &scan.flags)?;
    let (patients, patient_report) = aggregate_entities(
        &scan.flags,
        &patient_attribution(&corpus),
        &patient_covariates(&corpus),
        EntityLevel::Patient,
        counting_mode,
    );
    let (providers, provider_report) = aggregate_entities(
        &scan.flags,
        &provider_attribution(&corpus),
        &provider_covariates(&corpus),
        EntityLevel::Provider,
        counting_mode,
    );
    artifacts::write_entities(&args.out_dir, EntityLevel::Patient, &patients)?;
    artifacts::write_entities(&args.out_dir, EntityLevel::Provider, &providers)?;
    println!(
        "{}",
        serde_json::json!({
            "counting_mode": counting_mode.as_str(),
            "patients": patient_report,
            "providers": provider_report,
            "entities_patient": args.out_dir.join(ENTITIES_PATIENT_CSV).display().to_string(),
            "entities_provider": args.out_dir.join(ENTITIES_PROVIDER_CSV).display().to_string(),
        })
    );
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<(), CliError> {
    let options = args.modes.parse()?;
    let corpus = args.corpus.load()?;
    let flags = artifacts::read_flags(&args.flags)?;
    let result = run_analysis(&corpus, &flags, &options)?;
    ensure_dir(&args.out_dir)?;
    let mut manifest =
        RunManifest::new(options.counting_mode, options.model_mode, rayon::current_num_threads());
    args.corpus.record_inputs(&mut manifest);
    manifest.inputs.insert("flags".to_string(), args.flags.display().to_string());
    write_analysis_artifacts(&args.out_dir, manifest, result, &corpus, false)
}

fn run_report(args: ReportArgs) -> Result<(), CliError> {
    let summary = artifacts::read_summary(&args.out_dir)?;
    artifacts::verify_artifacts(&args.out_dir, &summary)?;
    let report = render_report(&summary)?;
    let path = args.out_dir.join(REPORT_MD);
    write_text(&path, &report)?;
    println!("{}", serde_json::json!({ "report": path.display().to_string() }));
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => SynthConfig::from_path(path)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let output = synth::generate(&config, &args.out_dir)?;
    println!(
        "{}",
        serde_json::json!({
            "seed": config.seed,
            "patients_written": output.patients_written,
            "notes_written": output.notes_written,
            "notes": output.tables.notes.display().to_string(),
            "ground_truth": output.ground_truth.display().to_string(),
        })
    );
    Ok(())
}

fn run_all(args: AllArgs) -> Result<(), CliError> {
    let options = args.modes.parse()?;
    let corpus = args.corpus.load()?;
    let (stigma, doubt) = args.lexicons.load()?;
    let classifiers = args.classifiers.load()?;
    let matcher = Matcher::build(&[&stigma, &doubt]);
    let scan = scan_corpus(&corpus, &matcher, &AbbrevSet::shipped(), &classifiers)?;
    ensure_dir(&args.out_dir)?;
    artifacts::write_labels(&args.out_dir, &scan.labels)?;
    artifacts::write_flags(&args.out_dir, &scan.flags)?;
    let result = run_analysis(&corpus, &scan.flags, &options)?;
    let mut manifest =
        RunManifest::new(options.counting_mode, options.model_mode, rayon::current_num_threads());
    args.corpus.record_inputs(&mut manifest);
    args.lexicons.record_hashes(&mut manifest)?;
    args.classifiers.record_hashes(&mut manifest)?;
    write_analysis_artifacts(&args.out_dir, manifest, result, &corpus, true)
}

/// Shared tail of `fit` and `all`: write the analysis CSVs, the hashed run
/// summary, and (for `all`) the rendered report.
fn write_analysis_artifacts(
    out_dir: &Path,
    manifest: RunManifest,
    result: stigma_scan_core::pipeline::AnalysisResult,
    corpus: &Corpus,
    render: bool,
) -> Result<(), CliError> {
    artifacts::write_entities(out_dir, EntityLevel::Patient, &result.patient_entities)?;
    artifacts::write_entities(out_dir, EntityLevel::Provider, &result.provider_entities)?;
    artifacts::write_fits(out_dir, &result.fits)?;
    artifacts::write_mixed(out_dir, &result.mixed)?;
    artifacts::write_correlations(out_dir, &result.correlations)?;
    let mut summary = RunSummary::new(manifest, result, corpus);
    let summary_path = artifacts::write_summary(out_dir, &mut summary)?;
    let mut printed = serde_json::json!({
        "summary": summary_path.display().to_string(),
        "fits": summary.fits.len(),
        "headline": summary.headline,
    });
    if render {
        let report = render_report(&summary)?;
        let report_path = out_dir.join(REPORT_MD);
        write_text(&report_path, &report)?;
        printed["report"] = serde_json::json!(report_path.display().to_string());
    }
    println!("{printed}");
    Ok(())
}
