//! Lexicon loading and simultaneous multi-pattern matching.
//!
//! Terms are matched as exact token sequences: the shipped lexicons already
//! enumerate inflected variants ("refuse", "refuses", "refusing"), so
//! stemming or substring matching would double-count. Matching is
//! leftmost-longest and non-overlapping; scanning restarts after each match.
//! The matcher is a token-interned trie walked once per start position, so a
//! corpus scan is linear in total token count for bounded term length.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize_tokens, Sentence};

/// Which of the two shipped lexicons a term or match belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LexiconName {
    #[serde(rename = "doubt_markers")]
    DoubtMarkers,
    #[serde(rename = "stigmatizing_labels")]
    StigmatizingLabels,
}

impl LexiconName {
    pub fn as_str(self) -> &'static str {
        match self {
            LexiconName::DoubtMarkers => "doubt_markers",
            LexiconName::StigmatizingLabels => "stigmatizing_labels",
        }
    }

    /// Short, human-facing label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            LexiconName::DoubtMarkers => "Doubt Markers",
            LexiconName::StigmatizingLabels => "Stigmatizing Labels",
        }
    }
}

impl fmt::Display for LexiconName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LexiconName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "doubt_markers" | "doubt" => Ok(LexiconName::DoubtMarkers),
            "stigmatizing_labels" | "stigma" => Ok(LexiconName::StigmatizingLabels),
            other => Err(format!(
                "unknown lexicon {other:?} (expected doubt_markers or stigmatizing_labels)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon {origin} contains no terms")]
    EmptyLexicon { origin: String },
    #[error("failed to read lexicon {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl LexiconError {
    pub fn code(&self) -> &'static str {
        match self {
            LexiconError::EmptyLexicon { .. } => "E_EMPTY_LEXICON",
            LexiconError::Io { .. } => "E_IO",
        }
    }
}

/// One lexicon entry: a normalized token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    tokens: Vec<String>,
    display: String,
    is_stem: bool,
}

impl Term {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Canonical form: normalized tokens joined by single spaces.
    pub fn display(&self) -> &str {
        &self.display
    }

    /// Whether the source file tags this entry as a seed ("stem") word.
    pub fn is_stem(&self) -> bool {
        self.is_stem
    }
}

/// What `load_lexicon` saw: line/term counts and any normalization
/// collisions (reported, first occurrence kept).
#[derive(Debug, Clone, Default)]
pub struct LexiconLoadReport {
    pub lines_with_terms: usize,
    pub term_count: usize,
    pub stem_count: usize,
    /// (kept raw line, dropped raw line) pairs that normalized identically.
    pub collisions: Vec<(String, String)>,
}

/// A loaded, normalized lexicon.
#[derive(Debug, Clone)]
pub struct Lexicon {
    name: LexiconName,
    terms: Vec<Term>,
    report: LexiconLoadReport,
}

impl Lexicon {
    /// Parse lexicon text: one term per line, `#` starts a comment, a `stem`
    /// tag in the comment marks seed-list membership. Term lines are
    /// normalized with the same rules as note tokens (so stray surrounding
    /// quotes are stripped and case is folded); duplicate normalizations are
    /// collapsed to the first occurrence and reported.
    pub fn parse(name: LexiconName, text: &str, origin: &str) -> Result<Self, LexiconError> {
        let mut terms: Vec<Term> = Vec::new();
        let mut seen: HashMap<Vec<String>, usize> = HashMap::new();
        let mut report = LexiconLoadReport::default();

        for line in text.lines() {
            let (raw_term, comment) = match line.split_once('#') {
                Some((t, c)) => (t, c),
                None => (line, ""),
            };
            if raw_term.trim().is_empty() {
                continue;
            }
            let tokens: Vec<String> = normalize_tokens(raw_term)
                .into_iter()
                .map(|t| t.norm)
                .collect();
            if tokens.is_empty() {
                continue; // line was all punctuation
            }
            report.lines_with_terms += 1;
            let is_stem = comment
                .split(|c: char| !c.is_alphanumeric())
                .any(|word| word.eq_ignore_ascii_case("stem"));
            match seen.get(&tokens) {
                Some(&idx) => {
                    report
                        .collisions
                        .push((terms[idx].display.clone(), raw_term.trim().to_string()));
                }
                None => {
                    seen.insert(tokens.clone(), terms.len());
                    let display = tokens.join(" ");
                    terms.push(Term { tokens, display, is_stem });
                }
            }
        }

        if terms.is_empty() {
            return Err(LexiconError::EmptyLexicon { origin: origin.to_string() });
        }
        report.term_count = terms.len();
        report.stem_count = terms.iter().filter(|t| t.is_stem).count();
        Ok(Self { name, terms, report })
    }

    /// Load a lexicon file (UTF-8, one term per line).
    pub fn load(path: &Path, name: LexiconName) -> Result<Self, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(name, &text, &path.display().to_string())
    }

    /// The shipped doubt-marker lexicon (58 terms).
    pub fn shipped_doubt() -> Self {
        Self::parse(LexiconName::DoubtMarkers, crate::data::DOUBT_MARKERS, "<shipped>")
            .expect("shipped doubt lexicon parses")
    }

    /// The shipped stigmatizing-label lexicon (127 terms).
    pub fn shipped_stigma() -> Self {
        Self::parse(
            LexiconName::StigmatizingLabels,
            crate::data::STIGMATIZING_LABELS,
            "<shipped>",
        )
        .expect("shipped stigma lexicon parses")
    }

    pub fn name(&self) -> LexiconName {
        self.name
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn report(&self) -> &LexiconLoadReport {
        &self.report
    }

    pub fn contains(&self, display: &str) -> bool {
        self.terms.iter().any(|t| t.display == display)
    }

    pub fn stem_terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter().filter(|t| t.is_stem)
    }
}

/// One matcher hit within a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match {
    /// Canonical term form (see [`Term::display`]).
    pub term: String,
    pub lexicon: LexiconName,
    /// Half-open token index range `[start, end)` within the sentence.
    pub token_span: (usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct PatternInfo {
    lexicon: LexiconName,
    term_idx: u32,
    len: u32,
}

#[derive(Debug, Default)]
struct TrieNode {
    children: HashMap<u32, u32>,
    /// Pattern ids terminating here, in build order (normally one; identical
    /// token sequences across lexicons all fire).
    terminal: Vec<u32>,
}

/// Compiled multi-pattern token-sequence matcher over one or more lexicons.
/// Immutable after build; share freely across scanning threads.
#[derive(Debug)]
pub struct Matcher {
    token_ids: HashMap<String, u32>,
    nodes: Vec<TrieNode>,
    patterns: Vec<PatternInfo>,
    /// Term display strings, indexed by `PatternInfo::term_idx`.
    displays: Vec<String>,
}

impl Matcher {
    /// Compile all terms of all given lexicons into one automaton.
    pub fn build(lexicons: &[&Lexicon]) -> Self {
        let mut matcher = Matcher {
            token_ids: HashMap::new(),
            nodes: vec![TrieNode::default()],
            patterns: Vec::new(),
            displays: Vec::new(),
        };
        for lexicon in lexicons {
            for term in lexicon.terms() {
                matcher.insert(lexicon.name(), term);
            }
        }
        matcher
    }

    fn insert(&mut self, lexicon: LexiconName, term: &Term) {
        let mut node = 0u32;
        for token in term.tokens() {
            let next_token_id = self.token_ids.len() as u32;
            let id = *self.token_ids.entry(token.clone()).or_insert(next_token_id);
            let next_node = match self.nodes[node as usize].children.get(&id) {
                Some(&n) => n,
                None => {
                    let n = self.nodes.len() as u32;
                    self.nodes.push(TrieNode::default());
                    self.nodes[node as usize].children.insert(id, n);
                    n
                }
            };
            node = next_node;
        }
        let pattern_id = self.patterns.len() as u32;
        self.displays.push(term.display().to_string());
        self.patterns.push(PatternInfo {
            lexicon,
            term_idx: pattern_id,
            len: term.tokens().len() as u32,
        });
        self.nodes[node as usize].terminal.push(pattern_id);
    }

    /// Total number of compiled patterns.
    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    /// All non-overlapping leftmost-longest matches, ordered by start token.
    pub fn match_sentence(&self, sentence: &Sentence) -> Vec<Match> {
        self.match_token_norms(&sentence.norms())
    }

    /// Matching over pre-normalized tokens (the sentence's `norm` strings).
    pub fn match_token_norms(&self, norms: &[&str]) -> Vec<Match> {
        let ids: Vec<Option<u32>> = norms
            .iter()
            .map(|n| self.token_ids.get(*n).copied())
            .collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < ids.len() {
            let mut node = 0u32;
            let mut best: Option<(usize, &[u32])> = None;
            for (depth, id) in ids[i..].iter().enumerate() {
                let Some(id) = id else { break };
                let Some(&next) = self.nodes[node as usize].children.get(id) else {
                    break;
                };
                node = next;
                let terminal = &self.nodes[node as usize].terminal;
                if !terminal.is_empty() {
                    best = Some((depth + 1, terminal));
                }
            }
            match best {
                Some((len, pattern_ids)) => {
                    for &pid in pattern_ids {
                        let info = self.patterns[pid as usize];
                        debug_assert_eq!(info.len as usize, len);
                        out.push(Match {
                            term: self.displays[info.term_idx as usize].clone(),
                            lexicon: info.lexicon,
                            token_span: (i, i + len),
                        });
                    }
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}
