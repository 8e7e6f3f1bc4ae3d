//! Trainable refinement of lexicon matches: a sentence-level logistic
//! regression that decides whether a matched sentence is a true
//! stigmatizing/doubt-marking usage.
//!
//! Both lexicons share the same linear-classifier family. Features are
//! positional n-grams — unigrams and bigrams of normalized tokens within a
//! window around the match span, bucketed as left/match/right — plus the
//! matched term's identity. Training minimizes mean cross-entropy with an
//! L2 penalty on the weights (intercept unpenalized) using the shared
//! L-BFGS optimizer; there is no randomness anywhere, so training is
//! deterministic by construction. Models serialize to a versioned
//! line-oriented text format so a fitted classifier can be audited or
//! shipped alongside results.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::lexicon::{LexiconName, Match};
use crate::stats::optim::{lbfgs, OptimOptions};
use crate::text::{normalize_tokens, Sentence};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set has {positives} positive and {negatives} negative examples; need at least 2 of each")]
    SingleClassTraining { positives: usize, negatives: usize },
    #[error("model serves {expected} but the input is for {found}")]
    LexiconMismatch {
        expected: LexiconName,
        found: LexiconName,
    },
    #[error("matched term {term:?} does not occur in sentence {sentence:?}")]
    TermNotFound { term: String, sentence: String },
    #[error("label lists have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("input is empty")]
    EmptyInput,
    #[error("{file}: missing required column {column:?}")]
    MissingColumn { file: String, column: String },
    #[error("{file} line {line}: gold_label {value:?} is neither \"positive\" nor \"negative\"")]
    BadLabel {
        file: String,
        line: u64,
        value: String,
    },
    #[error("{path} line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{file}: {source}")]
    Csv { file: String, source: csv::Error },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl ClassifierError {
    pub fn code(&self) -> &'static str {
        match self {
            ClassifierError::SingleClassTraining { .. } => "E_SINGLE_CLASS",
            ClassifierError::LexiconMismatch { .. } => "E_LEXICON_MISMATCH",
            ClassifierError::TermNotFound { .. } => "E_TERM_NOT_FOUND",
            ClassifierError::LengthMismatch { .. } => "E_LENGTH_MISMATCH",
            ClassifierError::EmptyInput => "E_EMPTY_INPUT",
            ClassifierError::MissingColumn { .. } => "E_MISSING_COLUMN",
            ClassifierError::BadLabel { .. } => "E_BAD_LABEL",
            ClassifierError::Format { .. } => "E_MODEL_FORMAT",
            ClassifierError::Csv { .. } => "E_CSV",
            ClassifierError::Io { .. } => "E_IO",
        }
    }
}

/// One human-annotated training/evaluation example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    /// The sentence text (one sentence, not a whole note).
    pub text: String,
    /// The matched lexicon term, in its canonical display form; must occur
    /// in `text` as a token sequence.
    pub term: String,
    pub lexicon: LexiconName,
    /// Gold label: true = a genuine stigmatizing/doubt usage.
    pub positive: bool,
    pub annotator: Option<String>,
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Context window: tokens on each side of the match span that
    /// contribute features.
    pub window_k: usize,
    /// L2 regularization strength λ in `mean CE + (λ/2)·‖w‖²`.
    pub l2: f64,
    /// Decision threshold on the predicted probability, in (0, 1).
    pub threshold: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            window_k: 8,
            l2: 1.0,
            threshold: 0.5,
            max_iters: 500,
            grad_tol: 1e-6,
        }
    }
}

/// Extract the deterministic sorted feature set for one match inside a
/// tokenized sentence.
///
/// `span` is the half-open token range of the match. Buckets: up to
/// `window_k` tokens left of the span, the span itself, and up to
/// `window_k` tokens right of it. Each bucket contributes unigrams and
/// within-bucket bigrams, prefixed by the bucket name; the matched term
/// contributes a `term=` feature. Features are presence-valued (a repeated
/// token adds nothing), so the output is a sorted, deduplicated list.
pub fn extract_features(
    norms: &[&str],
    span: (usize, usize),
    term: &str,
    window_k: usize,
) -> Vec<String> {
    let (start, end) = span;
    let left = &norms[start.saturating_sub(window_k)..start];
    let matched = &norms[start..end.min(norms.len())];
    let right = &norms[end.min(norms.len())..(end + window_k).min(norms.len())];

    let mut features = BTreeSet::new();
    for (bucket, tokens) in [("left", left), ("match", matched), ("right", right)] {
        for token in tokens {
            features.insert(format!("{bucket}:{token}"));
        }
        for pair in tokens.windows(2) {
            features.insert(format!("{bucket}:{}_{}", pair[0], pair[1]));
        }
    }
    features.insert(format!("term={term}"));
    features.into_iter().collect()
}

/// Convenience wrapper over [`extract_features`] for pipeline types.
pub fn features_for_match(sentence: &Sentence, m: &Match, window_k: usize) -> Vec<String> {
    extract_features(&sentence.norms(), m.token_span, &m.term, window_k)
}

/// Find the first token-sequence occurrence of `term_norms` in `norms`.
fn locate_term(norms: &[&str], term_norms: &[&str]) -> Option<(usize, usize)> {
    if term_norms.is_empty() || term_norms.len() > norms.len() {
        return None;
    }
    (0..=norms.len() - term_norms.len())
        .find(|&i| norms[i..i + term_norms.len()] == *term_norms)
        .map(|i| (i, i + term_norms.len()))
}

/// A prediction for one matched sentence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub positive: bool,
    pub probability: f64,
}

/// A trained linear sentence classifier for one lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub lexicon: LexiconName,
    pub window_k: usize,
    pub l2: f64,
    /// Label positive iff probability ≥ threshold.
    pub threshold: f64,
    pub intercept: f64,
    /// Feature vocabulary in sorted order; `weights[i]` belongs to
    /// `features[i]`.
    pub features: Vec<String>,
    pub weights: Vec<f64>,
    index: HashMap<String, usize>,
}

impl ClassifierModel {
    /// Assemble a model from parts (used by deserialization and tests).
    pub fn from_parts(
        lexicon: LexiconName,
        window_k: usize,
        l2: f64,
        threshold: f64,
        intercept: f64,
        features: Vec<String>,
        weights: Vec<f64>,
    ) -> Self {
        assert_eq!(features.len(), weights.len(), "one weight per feature");
        let index = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        ClassifierModel {
            lexicon,
            window_k,
            l2,
            threshold,
            intercept,
            features,
            weights,
            index,
        }
    }

    /// Linear score for a feature list; unknown features contribute nothing.
    fn score<S: AsRef<str>>(&self, features: &[S]) -> f64 {
        let mut z = self.intercept;
        for f in features {
            if let Some(&i) = self.index.get(f.as_ref()) {
                z += self.weights[i];
            }
        }
        z
    }

    fn predict_span(&self, norms: &[&str], span: (usize, usize), term: &str) -> Prediction {
        let features = extract_features(norms, span, term, self.window_k);
        let probability = sigmoid(self.score(&features));
        Prediction {
            positive: probability >= self.threshold,
            probability,
        }
    }

    /// Classify one lexicon match within a tokenized sentence.
    pub fn predict(&self, sentence: &Sentence, m: &Match) -> Result<Prediction, ClassifierError> {
        if m.lexicon != self.lexicon {
            return Err(ClassifierError::LexiconMismatch {
                expected: self.lexicon,
                found: m.lexicon,
            });
        }
        Ok(self.predict_span(&sentence.norms(), m.token_span, &m.term))
    }

    /// Classify an annotated example, locating the term in its sentence.
    pub fn predict_annotated(&self, row: &AnnotatedSentence) -> Result<Prediction, ClassifierError> {
        if row.lexicon != self.lexicon {
            return Err(ClassifierError::LexiconMismatch {
                expected: self.lexicon,
                found: row.lexicon,
            });
        }
        let tokens = normalize_tokens(&row.text);
        let norms: Vec<&str> = tokens.iter().map(|t| t.norm.as_str()).collect();
        let term_tokens = normalize_tokens(&row.term);
        let term_norms: Vec<&str> = term_tokens.iter().map(|t| t.norm.as_str()).collect();
        let span = locate_term(&norms, &term_norms).ok_or_else(|| ClassifierError::TermNotFound {
            term: row.term.clone(),
            sentence: row.text.clone(),
        })?;
        Ok(self.predict_span(&norms, span, &row.term))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow for large |z|.
fn ln1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// The training objective: mean cross-entropy plus `(l2/2)·‖w‖²` with the
/// intercept unpenalized, and its analytic gradient.
///
/// `rows` hold sorted feature-index lists and 0/1 labels; `params` is the
/// weight vector followed by the intercept (`n_features + 1` entries).
/// Public so tests can verify the gradient against finite differences.
pub fn logistic_loss_grad(
    rows: &[(Vec<usize>, f64)],
    n_features: usize,
    l2: f64,
    params: &[f64],
) -> (f64, Vec<f64>) {
    assert_eq!(params.len(), n_features + 1);
    let (weights, intercept) = (&params[..n_features], params[n_features]);
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n_features + 1];
    for (idxs, y) in rows {
        let z = intercept + idxs.iter().map(|&i| weights[i]).sum::<f64>();
        loss += ln1p_exp(z) - y * z;
        let g = sigmoid(z) - y;
        for &i in idxs {
            grad[i] += g;
        }
        grad[n_features] += g;
    }
    loss /= n;
    for v in grad.iter_mut() {
        *v /= n;
    }
    for (i, w) in weights.iter().enumerate() {
        loss += 0.5 * l2 * w * w;
        grad[i] += l2 * w;
    }
    (loss, grad)
}

/// Train a classifier for one lexicon on annotated examples.
///
/// Deterministic: the vocabulary is sorted, optimization starts from zero,
/// and nothing is sampled. Requires at least two examples of each class.
pub fn train(
    annotated: &[AnnotatedSentence],
    lexicon: LexiconName,
    opts: &TrainOptions,
) -> Result<ClassifierModel, ClassifierError> {
    if annotated.is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    let positives = annotated.iter().filter(|r| r.positive).count();
    let negatives = annotated.len() - positives;
    if positives < 2 || negatives < 2 {
        return Err(ClassifierError::SingleClassTraining { positives, negatives });
    }

    // Tokenize, locate each matched term, and extract features per row.
    let mut row_features: Vec<(Vec<String>, f64)> = Vec::with_capacity(annotated.len());
    for row in annotated {
        if row.lexicon != lexicon {
            return Err(ClassifierError::LexiconMismatch {
                expected: lexicon,
                found: row.lexicon,
            });
        }
        let tokens = normalize_tokens(&row.text);
        let norms: Vec<&str> = tokens.iter().map(|t| t.norm.as_str()).collect();
        let term_tokens = normalize_tokens(&row.term);
        let term_norms: Vec<&str> = term_tokens.iter().map(|t| t.norm.as_str()).collect();
        let span = locate_term(&norms, &term_norms).ok_or_else(|| ClassifierError::TermNotFound {
            term: row.term.clone(),
            sentence: row.text.clone(),
        })?;
        let features = extract_features(&norms, span, &row.term, opts.window_k);
        row_features.push((features, if row.positive { 1.0 } else { 0.0 }));
    }

    let vocabulary: Vec<String> = row_features
        .iter()
        .flat_map(|(f, _)| f.iter().cloned())
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    let index: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();
    let rows: Vec<(Vec<usize>, f64)> = row_features
        .iter()
        .map(|(features, y)| {
            let idxs: Vec<usize> = features.iter().map(|f| index[f.as_str()]).collect();
            (idxs, *y)
        })
        .collect();

    let n_features = vocabulary.len();
    let result = lbfgs(
        |params| logistic_loss_grad(&rows, n_features, opts.l2, params),
        &vec![0.0; n_features + 1],
        &OptimOptions {
            max_iters: opts.max_iters,
            grad_tol: opts.grad_tol,
            ..OptimOptions::default()
        },
    );
    let intercept = result.x[n_features];
    let weights = result.x[..n_features].to_vec();
    Ok(ClassifierModel::from_parts(
        lexicon,
        opts.window_k,
        opts.l2,
        opts.threshold,
        intercept,
        vocabulary,
        weights,
    ))
}

/// Evaluation metrics with full confusion counts. The positive class is
/// the gold-positive label; per-class F1 averages into macro-F1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    /// Set when tp+fp = 0 (precision's denominator vanished; reported as 0).
    pub precision_degenerate: bool,
    /// Set when tp+fn = 0 (recall's denominator vanished; reported as 0).
    pub recall_degenerate: bool,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl EvalMetrics {
    /// Compute all metrics from confusion counts.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // The negative class's precision/recall mirror the positive ones.
        let neg_precision = ratio(tn, tn + fn_);
        let neg_recall = ratio(tn, tn + fp);
        EvalMetrics {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            macro_f1: 0.5 * (f1(precision, recall) + f1(neg_precision, neg_recall)),
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
            precision_degenerate: tp + fp == 0,
            recall_degenerate: tp + fn_ == 0,
        }
    }

    /// Count a `(gold, predicted)` pair stream into metrics.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (gold, predicted) in pairs {
            match (gold, predicted) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

/// Evaluate a model on annotated examples at its decision threshold.
pub fn evaluate(
    model: &ClassifierModel,
    test: &[AnnotatedSentence],
) -> Result<EvalMetrics, ClassifierError> {
    if test.is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    let mut pairs = Vec::with_capacity(test.len());
    for row in test {
        let prediction = model.predict_annotated(row)?;
        pairs.push((row.positive, prediction.positive));
    }
    Ok(EvalMetrics::from_pairs(pairs))
}

/// Cohen's kappa between two annotators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaResult {
    pub observed_agreement: f64,
    pub chance_agreement: f64,
    pub kappa: f64,
    /// Set when either rater used only one label (kappa is then 0 by
    /// convention unless agreement is perfect), or chance agreement is 1.
    pub degenerate_marginals: bool,
}

/// Cohen's kappa for two equal-length binary label lists.
///
/// Chance agreement comes from each rater's marginal label frequencies.
/// When chance agreement reaches 1 (both raters constant) the usual
/// formula is 0/0; kappa is reported as 1 for perfect agreement and 0
/// otherwise, always with the degenerate flag set.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<KappaResult, ClassifierError> {
    if a.len() != b.len() {
        return Err(ClassifierError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(ClassifierError::EmptyInput);
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pa = a.iter().filter(|v| **v).count() as f64 / n;
    let pb = b.iter().filter(|v| **v).count() as f64 / n;
    let chance = pa * pb + (1.0 - pa) * (1.0 - pb);
    let constant_rater = pa == 0.0 || pa == 1.0 || pb == 0.0 || pb == 1.0;
    let kappa = if chance < 1.0 {
        (observed - chance) / (1.0 - chance)
    } else if observed >= 1.0 {
        1.0
    } else {
        0.0
    };
    Ok(KappaResult {
        observed_agreement: observed,
        chance_agreement: chance,
        kappa,
        degenerate_marginals: constant_rater || chance >= 1.0,
    })
}

const MODEL_FORMAT_HEADER: &str = "stigma-scan-classifier v1";

/// Serialize a model to the versioned line-oriented text format.
///
/// Weights are written with Rust's shortest round-trip float formatting,
/// so read-back reproduces them bit for bit. Feature names may contain
/// spaces (multiword terms); the weight is always the text after the last
/// space on the line.
pub fn model_to_string(model: &ClassifierModel) -> String {
    let mut out = String::new();
    out.push_str(MODEL_FORMAT_HEADER);
    out.push('\n');
    out.push_str(&format!("lexicon {}\n", model.lexicon.as_str()));
    out.push_str(&format!("window_k {}\n", model.window_k));
    out.push_str(&format!("l2 {}\n", model.l2));
    out.push_str(&format!("threshold {}\n", model.threshold));
    out.push_str(&format!("intercept {}\n", model.intercept));
    out.push_str(&format!("features {}\n", model.features.len()));
    for (feature, weight) in model.features.iter().zip(&model.weights) {
        out.push_str(&format!("{feature} {weight}\n"));
    }
    out
}

/// Parse a model from the text format; `origin` names the source in errors.
pub fn model_from_str(text: &str, origin: &str) -> Result<ClassifierModel, ClassifierError> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: String| ClassifierError::Format {
        path: origin.to_string(),
        line,
        message,
    };
    let mut next_line = |expected: &'static str| -> Result<(usize, String), ClassifierError> {
        match lines.next() {
            Some((idx, line)) => Ok((idx + 1, line.to_string())),
            None => Err(ClassifierError::Format {
                path: origin.to_string(),
                line: text.lines().count() + 1,
                message: format!("unexpected end of file, expected {expected}"),
            }),
        }
    };

    let (line_no, header) = next_line("header")?;
    if header.trim() != MODEL_FORMAT_HEADER {
        return Err(bad(
            line_no,
            format!("unsupported model format {header:?}, expected {MODEL_FORMAT_HEADER:?}"),
        ));
    }
    let mut keyed = |key: &'static str| -> Result<(usize, String), ClassifierError> {
        let (line_no, line) = next_line(key)?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((line_no, v.trim().to_string())),
            _ => Err(bad(line_no, format!("expected \"{key} <value>\""))),
        }
    };
    let (line_no, lexicon) = keyed("lexicon")?;
    let lexicon: LexiconName = lexicon.parse().map_err(|m| bad(line_no, m))?;
    let (line_no, window_k) = keyed("window_k")?;
    let window_k: usize = window_k
        .parse()
        .map_err(|_| bad(line_no, format!("bad window_k {window_k:?}")))?;
    let (line_no, l2) = keyed("l2")?;
    let l2: f64 = l2.parse().map_err(|_| bad(line_no, format!("bad l2 {l2:?}")))?;
    let (line_no, threshold) = keyed("threshold")?;
    let threshold: f64 = threshold
        .parse()
        .map_err(|_| bad(line_no, format!("bad threshold {threshold:?}")))?;
    let (line_no, intercept) = keyed("intercept")?;
    let intercept: f64 = intercept
        .parse()
        .map_err(|_| bad(line_no, format!("bad intercept {intercept:?}")))?;
    let (line_no, count) = keyed("features")?;
    let count: usize = count
        .parse()
        .map_err(|_| bad(line_no, format!("bad feature count {count:?}")))?;

    let mut features = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for _ in 0..count {
        let (line_no, line) = next_line("a feature line")?;
        let Some((feature, weight)) = line.rsplit_once(' ') else {
            return Err(bad(line_no, format!("expected \"<feature> <weight>\", got {line:?}")));
        };
        let weight: f64 = weight
            .parse()
            .map_err(|_| bad(line_no, format!("bad weight {weight:?}")))?;
        features.push(feature.to_string());
        weights.push(weight);
    }
    if let Some((idx, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(bad(idx + 1, format!("unexpected trailing content {line:?}")));
    }
    Ok(ClassifierModel::from_parts(
        lexicon, window_k, l2, threshold, intercept, features, weights,
    ))
}

/// Write a model file.
pub fn write_model(model: &ClassifierModel, path: &Path) -> Result<(), ClassifierError> {
    std::fs::write(path, model_to_string(model)).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read a model file.
pub fn read_model(path: &Path) -> Result<ClassifierModel, ClassifierError> {
    let text = std::fs::read_to_string(path).map_err(|source| ClassifierError::Io {
        path: path.display().to_string(),
        source,
    })?;
    model_from_str(&text, &path.display().to_string())
}

/// Read an annotated-sample CSV with columns
/// `sentence,term,lexicon,gold_label,annotator` (blank annotator → none;
/// gold_label must be "positive" or "negative", case-insensitive).
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotatedSentence>, ClassifierError> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|source| ClassifierError::Csv {
            file: file.clone(),
            source,
        })?;
    let headers = reader
        .headers()
        .map_err(|source| ClassifierError::Csv {
            file: file.clone(),
            source,
        })?
        .clone();
    let cols = ["sentence", "term", "lexicon", "gold_label", "annotator"]
        .iter()
        .map(|col| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(col))
                .ok_or_else(|| ClassifierError::MissingColumn {
                    file: file.clone(),
                    column: (*col).to_string(),
                })
        })
        .collect::<Result<Vec<usize>, ClassifierError>>()?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| ClassifierError::Csv {
            file: file.clone(),
            source,
        })?;
        let get = |c: usize| record.get(cols[c]).unwrap_or("").trim();
        let line = i as u64 + 2; // 1-based, after the header row
        let label = get(3);
        let positive = if label.eq_ignore_ascii_case("positive") {
            true
        } else if label.eq_ignore_ascii_case("negative") {
            false
        } else {
            return Err(ClassifierError::BadLabel {
                file,
                line,
                value: label.to_string(),
            });
        };
        let lexicon: LexiconName = get(2).parse().map_err(|_| ClassifierError::BadLabel {
            file: file.clone(),
            line,
            value: get(2).to_string(),
        })?;
        let annotator = get(4);
        rows.push(AnnotatedSentence {
            text: get(0).to_string(),
            term: get(1).to_string(),
            lexicon,
            positive,
            annotator: (!annotator.is_empty()).then(|| annotator.to_string()),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn feature_extraction_buckets() {
        let norms = ["pt", "claimed", "pain"];
        let features = extract_features(&norms, (1, 2), "claimed", 2);
        for expected in ["left:pt", "match:claimed", "right:pain", "term=claimed"] {
            assert!(features.contains(&expected.to_string()), "{expected} in {features:?}");
        }
        // Sorted and deduplicated.
        let mut sorted = features.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(features, sorted);

        // Match at sentence start: no left-bucket features.
        let features = extract_features(&norms, (0, 1), "pt", 2);
        assert!(features.iter().all(|f| !f.starts_with("left:")), "{features:?}");

        // Determinism.
        assert_eq!(
            extract_features(&norms, (1, 2), "claimed", 2),
            extract_features(&norms, (1, 2), "claimed", 2)
        );
    }

    #[test]
    fn feature_extraction_bigrams_and_window() {
        let norms = ["a", "b", "c", "d", "e"];
        let features = extract_features(&norms, (2, 3), "c", 2);
        for expected in ["left:a", "left:b", "left:a_b", "right:d", "right:e", "right:d_e"] {
            assert!(features.contains(&expected.to_string()), "{expected}");
        }
        // Window of 1 drops the outer tokens.
        let features = extract_features(&norms, (2, 3), "c", 1);
        assert!(!features.contains(&"left:a".to_string()));
        assert!(features.contains(&"left:b".to_string()));

        // Multiword match span produces a match-bucket bigram.
        let norms = ["the", "drug", "addict", "returned"];
        let features = extract_features(&norms, (1, 3), "drug addict", 8);
        assert!(features.contains(&"match:drug_addict".to_string()));
        assert!(features.contains(&"term=drug addict".to_string()));
    }

    /// Separable synthetic training set: the token after the match decides
    /// the label.
    fn separable_rows(n: usize) -> Vec<AnnotatedSentence> {
        let fillers = ["alpha", "beta", "gamma", "delta"];
        (0..n)
            .map(|i| {
                let positive = i % 2 == 0;
                let cue = if positive { "good" } else { "bad" };
                AnnotatedSentence {
                    text: format!(
                        "{} flag {} {}.",
                        fillers[i % 4],
                        cue,
                        fillers[(i / 4) % 4]
                    ),
                    term: "flag".to_string(),
                    lexicon: LexiconName::DoubtMarkers,
                    positive,
                    annotator: None,
                }
            })
            .collect()
    }

    #[test]
    fn training_separates_separable_data() {
        let rows = separable_rows(200);
        let opts = TrainOptions {
            l2: 1e-4,
            ..TrainOptions::default()
        };
        let model = train(&rows, LexiconName::DoubtMarkers, &opts).unwrap();
        let metrics = evaluate(&model, &rows).unwrap();
        assert!(metrics.accuracy >= 0.99, "accuracy {}", metrics.accuracy);

        // A held-in example gets its gold label back.
        let prediction = model.predict_annotated(&rows[0]).unwrap();
        assert_eq!(prediction.positive, rows[0].positive);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let mut rows = separable_rows(6);
        for row in &mut rows {
            row.positive = true;
        }
        let err = train(&rows, LexiconName::DoubtMarkers, &TrainOptions::default()).unwrap_err();
        assert_eq!(err.code(), "E_SINGLE_CLASS");

        // One lone negative is still below the two-per-class floor.
        rows[0].positive = false;
        let err = train(&rows, LexiconName::DoubtMarkers, &TrainOptions::default()).unwrap_err();
        assert_eq!(err.code(), "E_SINGLE_CLASS");

        let err = train(&[], LexiconName::DoubtMarkers, &TrainOptions::default()).unwrap_err();
        assert_eq!(err.code(), "E_EMPTY_INPUT");
    }

    #[test]
    fn duplicated_dataset_trains_the_same_decision_function() {
        let rows = separable_rows(60);
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let opts = TrainOptions {
            l2: 0.1,
            ..TrainOptions::default()
        };
        let single = train(&rows, LexiconName::DoubtMarkers, &opts).unwrap();
        let double = train(&doubled, LexiconName::DoubtMarkers, &opts).unwrap();

        // Mean loss + fixed regularizer ratio means the duplicated set has
        // the same minimizer; probe predictions agree.
        let probes = separable_rows(100);
        for probe in &probes {
            let p1 = single.predict_annotated(probe).unwrap();
            let p2 = double.predict_annotated(probe).unwrap();
            assert!(
                (p1.probability - p2.probability).abs() < 1e-3,
                "{} vs {}",
                p1.probability,
                p2.probability
            );
            if (p1.probability - 0.5).abs() > 1e-3 {
                assert_eq!(p1.positive, p2.positive);
            }
        }
    }

    #[test]
    fn zero_weight_model_predicts_half() {
        let model = ClassifierModel::from_parts(
            LexiconName::DoubtMarkers,
            8,
            1.0,
            0.5,
            0.0,
            vec![],
            vec![],
        );
        let row = AnnotatedSentence {
            text: "pt claimed pain".into(),
            term: "claimed".into(),
            lexicon: LexiconName::DoubtMarkers,
            positive: true,
            annotator: None,
        };
        let p = model.predict_annotated(&row).unwrap();
        assert_eq!(p.probability, 0.5);
        assert!(p.positive, "0.5 >= threshold 0.5 is positive");

        // Raising the threshold flips the boundary case.
        let strict = ClassifierModel::from_parts(
            LexiconName::DoubtMarkers,
            8,
            1.0,
            0.6,
            0.0,
            vec![],
            vec![],
        );
        assert!(!strict.predict_annotated(&row).unwrap().positive);
    }

    #[test]
    fn lexicon_mismatch_is_rejected() {
        let model = ClassifierModel::from_parts(
            LexiconName::DoubtMarkers,
            8,
            1.0,
            0.5,
            0.0,
            vec![],
            vec![],
        );
        let row = AnnotatedSentence {
            text: "known drug seeker here".into(),
            term: "drug seeker".into(),
            lexicon: LexiconName::StigmatizingLabels,
            positive: true,
            annotator: None,
        };
        let err = model.predict_annotated(&row).unwrap_err();
        assert_eq!(err.code(), "E_LEXICON_MISMATCH");

        let err = train(
            std::slice::from_ref(&row),
            LexiconName::DoubtMarkers,
            &TrainOptions::default(),
        )
        .unwrap_err();
        // Class balance is checked before lexicon consistency here; a
        // one-row set fails on class counts.
        assert_eq!(err.code(), "E_SINGLE_CLASS");
    }

    #[test]
    fn term_must_occur_in_sentence() {
        let model = ClassifierModel::from_parts(
            LexiconName::DoubtMarkers,
            8,
            1.0,
            0.5,
            0.0,
            vec![],
            vec![],
        );
        let row = AnnotatedSentence {
            text: "patient resting comfortably".into(),
            term: "claimed".into(),
            lexicon: LexiconName::DoubtMarkers,
            positive: false,
            annotator: None,
        };
        let err = model.predict_annotated(&row).unwrap_err();
        assert_eq!(err.code(), "E_TERM_NOT_FOUND");
    }

    /// Model whose prediction is decided by the matched term: "posterm"
    /// scores +2, anything else falls to the -2 intercept.
    fn term_driven_model() -> ClassifierModel {
        ClassifierModel::from_parts(
            LexiconName::DoubtMarkers,
            2,
            1.0,
            0.5,
            -2.0,
            vec!["term=posterm".to_string()],
            vec![4.0],
        )
    }

    fn labeled_row(term: &str, positive: bool) -> AnnotatedSentence {
        AnnotatedSentence {
            text: format!("note mentions {term} today"),
            term: term.to_string(),
            lexicon: LexiconName::DoubtMarkers,
            positive,
            annotator: None,
        }
    }

    #[test]
    fn evaluate_matches_hand_confusion_arithmetic() {
        let model = term_driven_model();
        let mut test = Vec::new();
        test.extend((0..40).map(|_| labeled_row("posterm", true))); // tp
        test.extend((0..10).map(|_| labeled_row("posterm", false))); // fp
        test.extend((0..40).map(|_| labeled_row("negterm", false))); // tn
        test.extend((0..10).map(|_| labeled_row("negterm", true))); // fn
        let metrics = evaluate(&model, &test).unwrap();
        assert_eq!(
            (metrics.true_positives, metrics.false_positives, metrics.true_negatives, metrics.false_negatives),
            (40, 10, 40, 10)
        );
        assert!((metrics.accuracy - 0.80).abs() < 1e-12);
        assert!((metrics.precision - 0.80).abs() < 1e-12);
        assert!((metrics.recall - 0.80).abs() < 1e-12);
        assert!((metrics.macro_f1 - 0.80).abs() < 1e-12);
        assert!(!metrics.precision_degenerate);
        assert!(!metrics.recall_degenerate);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let model = term_driven_model();
        let test = vec![
            labeled_row("posterm", true),
            labeled_row("posterm", true),
            labeled_row("negterm", false),
            labeled_row("negterm", false),
        ];
        let metrics = evaluate(&model, &test).unwrap();
        assert_eq!(metrics.accuracy, 1.0);
        assert_eq!(metrics.precision, 1.0);
        assert_eq!(metrics.recall, 1.0);
        assert_eq!(metrics.macro_f1, 1.0);
    }

    #[test]
    fn degenerate_precision_is_zero_with_flag() {
        let model = term_driven_model();
        // Everything predicted negative on a balanced set.
        let test = vec![
            labeled_row("negterm", true),
            labeled_row("negterm", true),
            labeled_row("negterm", false),
            labeled_row("negterm", false),
        ];
        let metrics = evaluate(&model, &test).unwrap();
        assert_eq!(metrics.precision, 0.0);
        assert!(metrics.precision_degenerate);
        assert_eq!(metrics.recall, 0.0);
        assert!(!metrics.recall_degenerate, "gold positives exist");

        let err = evaluate(&model, &[]).unwrap_err();
        assert_eq!(err.code(), "E_EMPTY_INPUT");
    }

    #[test]
    fn kappa_hand_examples() {
        // Identical mixed lists.
        let a = [true, false, true, false];
        let k = cohen_kappa(&a, &a).unwrap();
        assert_eq!(k.kappa, 1.0);
        assert!(!k.degenerate_marginals);

        // Agreement table [[40,10],[10,40]]: p_o 0.8, p_e 0.5, kappa 0.6.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (n, xa, ya) in [(40, true, true), (10, true, false), (10, false, true), (40, false, false)] {
            for _ in 0..n {
                x.push(xa);
                y.push(ya);
            }
        }
        let k = cohen_kappa(&x, &y).unwrap();
        assert!((k.observed_agreement - 0.8).abs() < 1e-12);
        assert!((k.chance_agreement - 0.5).abs() < 1e-12);
        assert!((k.kappa - 0.6).abs() < 1e-12);

        // One rater constant, the other balanced: kappa 0, degenerate.
        let constant = vec![true; 10];
        let balanced: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let k = cohen_kappa(&constant, &balanced).unwrap();
        assert!((k.observed_agreement - 0.5).abs() < 1e-12);
        assert!((k.chance_agreement - 0.5).abs() < 1e-12);
        assert_eq!(k.kappa, 0.0);
        assert!(k.degenerate_marginals);

        // Both raters constant and identical: perfect but degenerate.
        let k = cohen_kappa(&constant, &constant).unwrap();
        assert_eq!(k.kappa, 1.0);
        assert!(k.degenerate_marginals);

        let err = cohen_kappa(&constant, &balanced[..5]).unwrap_err();
        assert_eq!(err.code(), "E_LENGTH_MISMATCH");
        let err = cohen_kappa(&[], &[]).unwrap_err();
        assert_eq!(err.code(), "E_EMPTY_INPUT");
    }

    #[test]
    fn serialization_round_trips_bitwise() {
        let rows = separable_rows(40);
        let model = train(&rows, LexiconName::DoubtMarkers, &TrainOptions::default()).unwrap();
        let text = model_to_string(&model);
        let back = model_from_str(&text, "<test>").unwrap();
        assert_eq!(model, back);
        // Multiword-term features survive (weight is after the last space).
        assert!(model.features.iter().any(|f| f.starts_with("term=")));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        write_model(&model, &path).unwrap();
        assert_eq!(read_model(&path).unwrap(), model);
    }

    #[test]
    fn model_format_errors() {
        let err = model_from_str("not-a-model v9\n", "<t>").unwrap_err();
        assert_eq!(err.code(), "E_MODEL_FORMAT");
        assert!(err.to_string().contains("unsupported"), "{err}");

        let good = model_to_string(&term_driven_model());
        let truncated: String = good.lines().take(7).map(|l| format!("{l}\n")).collect();
        let err = model_from_str(&truncated, "<t>").unwrap_err();
        assert_eq!(err.code(), "E_MODEL_FORMAT");

        let corrupted = good.replace("4", "four");
        let err = model_from_str(&corrupted, "<t>").unwrap_err();
        assert_eq!(err.code(), "E_MODEL_FORMAT");

        let trailing = format!("{good}garbage line\n");
        let err = model_from_str(&trailing, "<t>").unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn annotation_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.csv");
        std::fs::write(
            &path,
            "sentence,term,lexicon,gold_label,annotator\n\
             pt claimed pain was 10/10,claimed,doubt_markers,Positive,ann1\n\
             patient adamant about dose,adamant,stigmatizing_labels,negative,\n",
        )
        .unwrap();
        let rows = read_annotations(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].positive);
        assert_eq!(rows[0].annotator.as_deref(), Some("ann1"));
        assert_eq!(rows[0].lexicon, LexiconName::DoubtMarkers);
        assert!(!rows[1].positive);
        assert_eq!(rows[1].annotator, None);
        assert_eq!(rows[1].lexicon, LexiconName::StigmatizingLabels);

        std::fs::write(
            &path,
            "sentence,term,lexicon,gold_label,annotator\nx,claimed,doubt_markers,maybe,\n",
        )
        .unwrap();
        let err = read_annotations(&path).unwrap_err();
        assert_eq!(err.code(), "E_BAD_LABEL");
        assert!(err.to_string().contains("line 2"), "{err}");

        std::fs::write(&path, "sentence,term,lexicon,annotator\n").unwrap();
        let err = read_annotations(&path).unwrap_err();
        assert_eq!(err.code(), "E_MISSING_COLUMN");
    }

    #[test]
    fn threshold_is_monotone() {
        let rows = separable_rows(40);
        let base = train(&rows, LexiconName::DoubtMarkers, &TrainOptions::default()).unwrap();
        let probes = separable_rows(60);
        let mut previous_positives = usize::MAX;
        for threshold in [0.2, 0.5, 0.8] {
            let mut model = base.clone();
            model.threshold = threshold;
            let positives = probes
                .iter()
                .filter(|p| model.predict_annotated(p).unwrap().positive)
                .count();
            assert!(
                positives <= previous_positives,
                "raising the threshold added positives"
            );
            previous_positives = positives;
        }
    }

    fn fd_gradient(
        rows: &[(Vec<usize>, f64)],
        n_features: usize,
        l2: f64,
        params: &[f64],
    ) -> Vec<f64> {
        let h = 1e-5;
        (0..params.len())
            .map(|i| {
                let mut plus = params.to_vec();
                plus[i] += h;
                let mut minus = params.to_vec();
                minus[i] -= h;
                let (fp, _) = logistic_loss_grad(rows, n_features, l2, &plus);
                let (fm, _) = logistic_loss_grad(rows, n_features, l2, &minus);
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn analytic_gradient_matches_finite_differences(
            seed_rows in prop::collection::vec(
                (prop::collection::btree_set(0usize..6, 0..4), prop::bool::ANY),
                2..8,
            ),
            params in prop::collection::vec(-1.5f64..1.5, 7),
        ) {
            let rows: Vec<(Vec<usize>, f64)> = seed_rows
                .into_iter()
                .map(|(idxs, y)| (idxs.into_iter().collect(), if y { 1.0 } else { 0.0 }))
                .collect();
            let (_, analytic) = logistic_loss_grad(&rows, 6, 0.3, &params);
            let numeric = fd_gradient(&rows, 6, 0.3, &params);
            for (a, n) in analytic.iter().zip(&numeric) {
                let scale = 1.0_f64.max(a.abs()).max(n.abs());
                prop_assert!(
                    (a - n).abs() / scale < 1e-4,
                    "analytic {} vs numeric {}",
                    a,
                    n
                );
            }
        }
    }

    proptest! {
        #[test]
        fn metric_identities_hold_on_random_confusions(
            pairs in prop::collection::vec((prop::bool::ANY, prop::bool::ANY), 1..60)
        ) {
            let m = EvalMetrics::from_pairs(pairs.iter().copied());
            let tp = pairs.iter().filter(|(g, p)| *g && *p).count();
            let fp = pairs.iter().filter(|(g, p)| !*g && *p).count();
            let tn = pairs.iter().filter(|(g, p)| !*g && !*p).count();
            let fn_ = pairs.iter().filter(|(g, p)| *g && !*p).count();
            prop_assert_eq!(
                (m.true_positives, m.false_positives, m.true_negatives, m.false_negatives),
                (tp, fp, tn, fn_)
            );
            let total = (tp + fp + tn + fn_) as f64;
            prop_assert!((m.accuracy - (tp + tn) as f64 / total).abs() < 1e-12);
            if tp + fp > 0 {
                prop_assert!((m.precision - tp as f64 / (tp + fp) as f64).abs() < 1e-12);
                prop_assert!(!m.precision_degenerate);
            } else {
                prop_assert_eq!(m.precision, 0.0);
                prop_assert!(m.precision_degenerate);
            }
            if tp + fn_ > 0 {
                prop_assert!((m.recall - tp as f64 / (tp + fn_) as f64).abs() < 1e-12);
            }
            prop_assert!(m.macro_f1 >= 0.0 && m.macro_f1 <= 1.0);
        }
    }
}
