//! Sentence segmentation and token normalization for clinical note text.
//!
//! Both passes are deterministic rule systems — downstream counts must be
//! reproducible across runs, machines, and thread counts, so no statistical
//! models are used. The segmenter splits on terminal punctuation (`.` `!`
//! `?`) followed by whitespace, on blank lines, and at bullet / numbered
//! line-item starts, with guards so that decimal numbers, a shipped
//! abbreviation list ("Dr.", "q.d.", …), and leading list markers ("1.")
//! never produce a split. The tokenizer is whitespace splitting followed by
//! stripping surrounding (never internal) punctuation and lowercasing, so
//! lexicon terms such as `frequent-flier`, `abuser's`, `10/10`, and
//! `pt.noncompliant` survive normalization intact.

use std::collections::HashSet;

/// Abbreviations (including their trailing period) that suppress a sentence
/// split; matching is case-insensitive against the whole period-terminated
/// word, e.g. `dr.` or `q.d.`.
#[derive(Debug, Clone)]
pub struct AbbrevSet {
    entries: HashSet<String>,
}

impl AbbrevSet {
    /// Parse an abbreviation list: one entry per line, `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|line| {
                let entry = line.split('#').next().unwrap_or("").trim();
                (!entry.is_empty()).then(|| entry.to_lowercase())
            })
            .collect();
        Self { entries }
    }

    /// The abbreviation list shipped with the crate.
    pub fn shipped() -> Self {
        Self::parse(crate::data::ABBREVIATIONS)
    }

    /// An empty guard list (every period-plus-whitespace becomes a split).
    pub fn empty() -> Self {
        Self { entries: HashSet::new() }
    }

    pub fn contains(&self, word_with_period: &str) -> bool {
        self.entries.contains(&word_with_period.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One whitespace-delimited token: the byte span of the raw token within the
/// text it was produced from, plus its normalized form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Byte span of the raw (unstripped) token.
    pub span: (usize, usize),
    /// Lowercased form with surrounding punctuation stripped; internal
    /// punctuation (hyphens, slashes, apostrophes, periods, …) is preserved.
    pub norm: String,
}

impl Token {
    /// The original text slice this token was read from.
    pub fn surface<'a>(&self, text: &'a str) -> &'a str {
        &text[self.span.0..self.span.1]
    }
}

/// One segmented sentence. `span` is the byte range of the trimmed sentence
/// within the note text; `tokens` carry spans relative to that slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    /// 0-based position within the note.
    pub index: usize,
    /// Byte span within the original note text (whitespace-trimmed).
    pub span: (usize, usize),
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn text<'a>(&self, note_text: &'a str) -> &'a str {
        &note_text[self.span.0..self.span.1]
    }

    /// Token norms as borrowed strings, in order.
    pub fn norms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.norm.as_str()).collect()
    }
}

/// Whitespace tokenization with surrounding-punctuation stripping and
/// lowercasing. Tokens that are all punctuation (a bare `-` bullet, `--`)
/// are dropped; `norm` is never empty.
pub fn normalize_tokens(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                push_token(text, s, i, &mut tokens);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        push_token(text, s, text.len(), &mut tokens);
    }
    tokens
}

fn push_token(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let raw = &text[start..end];
    let Some(first) = raw.char_indices().find(|(_, c)| c.is_alphanumeric()) else {
        return; // all punctuation
    };
    let last = raw
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_alphanumeric())
        .map(|(i, c)| i + c.len_utf8())
        .expect("an alphanumeric char was found scanning forward");
    let norm = raw[first.0..last].to_lowercase();
    out.push(Token { span: (start, end), norm });
}

/// Split note text into sentences and tokenize each one.
///
/// Split rules, in the order they are tested while scanning left to right:
/// - a run of `.`/`!`/`?` followed by whitespace ends a sentence, unless the
///   run is periods-only and either (a) the attached word is on the
///   abbreviation list, or (b) the attached word is a bare number at the
///   start of a line (a numbered list marker);
/// - a newline followed (modulo spaces/tabs) by another newline (blank line)
///   ends a sentence;
/// - a newline followed by a bullet marker (`-` `*` `•` plus whitespace, or
///   digits plus `.`/`)` plus whitespace) ends a sentence.
///
/// A period directly followed by a non-whitespace character (decimals like
/// `10.5`, codes like `pt.noncompliant`) never splits. Empty segments are
/// dropped, so `segment_sentences("", …)` is `[]`.
pub fn segment_sentences(text: &str, abbrevs: &AbbrevSet) -> Vec<Sentence> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    // Byte offsets at which a new sentence begins; strictly increasing.
    let mut breaks: Vec<usize> = Vec::new();

    let mut k = 0;
    while k < n {
        let (byte, c) = chars[k];
        match c {
            '.' | '!' | '?' => {
                let mut k_end = k;
                let mut periods_only = c == '.';
                while k_end + 1 < n && matches!(chars[k_end + 1].1, '.' | '!' | '?') {
                    k_end += 1;
                    periods_only &= chars[k_end].1 == '.';
                }
                let run_end = chars[k_end].0 + chars[k_end].1.len_utf8();
                let at_end = k_end + 1 >= n;
                let followed_by_ws = at_end || chars[k_end + 1].1.is_whitespace();
                if followed_by_ws && !at_end {
                    let suppress =
                        periods_only && period_suppressed(text, byte, run_end, abbrevs);
                    if !suppress {
                        breaks.push(run_end);
                    }
                }
                k = k_end + 1;
            }
            '\n' => {
                let mut j = k + 1;
                while j < n && matches!(chars[j].1, ' ' | '\t' | '\r') {
                    j += 1;
                }
                if j < n && (chars[j].1 == '\n' || starts_bullet(&chars, j)) {
                    breaks.push(byte);
                }
                k += 1;
            }
            _ => k += 1,
        }
    }

    let mut sentences = Vec::new();
    let mut seg_start = 0;
    for seg_end in breaks.into_iter().chain(std::iter::once(text.len())) {
        if let Some(sentence) = trim_segment(text, seg_start, seg_end, sentences.len()) {
            sentences.push(sentence);
        }
        seg_start = seg_end;
    }
    sentences
}

/// Does the line content beginning at char index `j` look like a bullet or
/// numbered list item?
fn starts_bullet(chars: &[(usize, char)], j: usize) -> bool {
    let n = chars.len();
    match chars[j].1 {
        '-' | '*' | '•' | '·' => j + 1 < n && chars[j + 1].1.is_whitespace(),
        d if d.is_ascii_digit() => {
            let mut k = j;
            while k < n && chars[k].1.is_ascii_digit() {
                k += 1;
            }
            k < n
                && matches!(chars[k].1, '.' | ')')
                && (k + 1 >= n || chars[k + 1].1.is_whitespace())
        }
        _ => false,
    }
}

/// Should the period run ending at `run_end` (starting at byte `run_start`)
/// be treated as non-terminal? True for abbreviations ("dr.", "q.d.") and
/// for line-leading bare-number list markers ("1.").
fn period_suppressed(text: &str, run_start: usize, run_end: usize, abbrevs: &AbbrevSet) -> bool {
    let is_word_char =
        |c: char| c.is_alphanumeric() || matches!(c, '.' | '-' | '/' | '\'' | '\\');
    let word_start = text[..run_start]
        .char_indices()
        .rev()
        .take_while(|(_, c)| is_word_char(*c))
        .last()
        .map(|(i, _)| i)
        .unwrap_or(run_start);
    if word_start == run_start {
        return false; // lone punctuation, e.g. " . "
    }
    let word_with_run = &text[word_start..run_end];
    if abbrevs.contains(word_with_run) {
        return true;
    }
    let bare = &text[word_start..run_start];
    bare.chars().all(|c| c.is_ascii_digit()) && at_line_start(text, word_start)
}

/// True if only whitespace lies between `pos` and the previous newline (or
/// the start of the text).
fn at_line_start(text: &str, pos: usize) -> bool {
    for c in text[..pos].chars().rev() {
        if c == '\n' {
            return true;
        }
        if !c.is_whitespace() {
            return false;
        }
    }
    true
}

fn trim_segment(text: &str, start: usize, end: usize, index: usize) -> Option<Sentence> {
    let seg = &text[start..end];
    let lead = seg.len() - seg.trim_start().len();
    let trail = seg.len() - seg.trim_end().len();
    if lead + trail >= seg.len() {
        return None;
    }
    let span = (start + lead, end - trail);
    let tokens = normalize_tokens(&text[span.0..span.1]);
    if tokens.is_empty() {
        return None;
    }
    Some(Sentence { index, span, tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norms(text: &str) -> Vec<String> {
        normalize_tokens(text).into_iter().map(|t| t.norm).collect()
    }

    fn segments(text: &str) -> Vec<String> {
        segment_sentences(text, &AbbrevSet::shipped())
            .iter()
            .map(|s| s.text(text).to_string())
            .collect()
    }

    #[test]
    fn strips_surrounding_punctuation_and_lowercases() {
        assert_eq!(norms("Pt. was ADAMANT!"), ["pt", "was", "adamant"]);
        assert_eq!(norms("frequent-flier,"), ["frequent-flier"]);
        assert_eq!(norms("junkie's"), ["junkie's"]);
        assert_eq!(norms("\"quoted\" (parens)"), ["quoted", "parens"]);
        assert_eq!(norms("10/10. BP 120/80"), ["10/10", "bp", "120/80"]);
        assert_eq!(norms("pt.noncompliant"), ["pt.noncompliant"]);
        assert_eq!(norms("-- -"), Vec::<String>::new());
    }

    #[test]
    fn token_surfaces_round_trip() {
        let text = "  Pt. was \"ADAMANT!\"  ";
        for token in normalize_tokens(text) {
            let surface = token.surface(text);
            assert!(text.contains(surface));
            assert!(!token.norm.is_empty());
            assert_eq!(token.norm, token.norm.to_lowercase());
        }
    }

    #[test]
    fn terminal_punctuation_splits() {
        assert_eq!(segments("Pain 10/10. Pt resting."), ["Pain 10/10.", "Pt resting."]);
        assert_eq!(segments("Stable? Yes. Continue."), ["Stable?", "Yes.", "Continue."]);
    }

    #[test]
    fn blank_line_splits() {
        assert_eq!(
            segments("BP 120/80\n\nPt agitated overnight"),
            ["BP 120/80", "Pt agitated overnight"]
        );
    }

    #[test]
    fn empty_text_gives_no_sentences() {
        assert_eq!(segments(""), Vec::<String>::new());
        assert_eq!(segments("   \n \n  "), Vec::<String>::new());
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(segments("Seen by Dr. Smith today."), ["Seen by Dr. Smith today."]);
        assert_eq!(segments("Lasix q.d. continued."), ["Lasix q.d. continued."]);
        assert_eq!(segments("Pt. was adamant about leaving."), ["Pt. was adamant about leaving."]);
    }

    #[test]
    fn decimals_do_not_split() {
        assert_eq!(segments("Temp 98.6 overnight."), ["Temp 98.6 overnight."]);
        // A decimal followed by a terminal period still ends the sentence.
        assert_eq!(segments("Na 10.5. Repeat in am."), ["Na 10.5.", "Repeat in am."]);
    }

    #[test]
    fn bullet_lines_split() {
        assert_eq!(
            segments("Plan:\n- lasix 40\n- monitor I/O"),
            ["Plan:", "- lasix 40", "- monitor I/O"]
        );
        assert_eq!(
            segments("1. Continue abx\n2. Wean O2"),
            ["1. Continue abx", "2. Wean O2"]
        );
    }

    #[test]
    fn mid_line_numbers_still_split() {
        assert_eq!(segments("Pain 10. Pt resting."), ["Pain 10.", "Pt resting."]);
    }

    #[test]
    fn spans_are_ordered_and_cover_non_whitespace() {
        let text = "BP 120/80.  Pt resting!\n\n- F/u labs";
        let sentences = segment_sentences(text, &AbbrevSet::shipped());
        let mut last_end = 0;
        for s in &sentences {
            assert!(s.span.0 >= last_end);
            assert!(s.span.0 < s.span.1);
            last_end = s.span.1;
        }
        let covered: usize = sentences
            .iter()
            .map(|s| s.text(text).chars().filter(|c| !c.is_whitespace()).count())
            .sum();
        let total = text.chars().filter(|c| !c.is_whitespace()).count();
        assert_eq!(covered, total);
    }

    proptest! {
        /// Against a naive splitter: for alphabetic-word text with no
        /// abbreviation list, every terminal-punctuation+space boundary (and
        /// nothing else) starts a new sentence.
        #[test]
        fn matches_naive_splitter(
            sentence_words in proptest::collection::vec(
                proptest::collection::vec("[a-z]{1,8}", 1..6), 1..8),
            terminators in proptest::collection::vec("[.!?]", 8),
        ) {
            let mut text = String::new();
            let count = sentence_words.len();
            for (i, words) in sentence_words.iter().enumerate() {
                text.push_str(&words.join(" "));
                text.push_str(&terminators[i % terminators.len()]);
                text.push(' ');
            }
            let got = segment_sentences(&text, &AbbrevSet::empty());
            prop_assert_eq!(got.len(), count);
        }

        #[test]
        fn tokenization_is_deterministic_and_round_trips(text in "\\PC{0,200}") {
            let a = normalize_tokens(&text);
            let b = normalize_tokens(&text);
            prop_assert_eq!(&a, &b);
            for token in &a {
                prop_assert!(!token.norm.is_empty());
                let surface = token.surface(&text);
                prop_assert!(!surface.is_empty());
            }
        }
    }
}
