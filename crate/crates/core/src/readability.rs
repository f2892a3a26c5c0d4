//! Flesch-Kincaid Grade Level over a small deterministic English tokenizer.
//!
//! Grade = `0.39 * (words / sentences) + 11.8 * (syllables / words) - 15.59`.
//!
//! Tokenization rules:
//! - Sentences end at a run of `.`, `!` or `?` (optionally followed by closing
//!   quotes or brackets) that is followed by whitespace or end of text, and at
//!   blank lines. A trailing fragment without terminal punctuation is a
//!   sentence. A `.` ending a known abbreviation (`Dr.`, `vs.`, `e.g.`) does
//!   not end a sentence.
//! - Words are maximal alphanumeric runs. Apostrophes and hyphens join two
//!   alphanumerics; `.` and `,` join two digits, so `3.5` and `1,200` are one
//!   word each.
//! - Syllables are vowel groups (`aeiouy`) with a silent final `e` removed
//!   (kept after consonant + `l`), floored at one. Hyphenated words are
//!   counted part by part; a numeric part gets one syllable per digit group.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Abbreviations (lowercase, without the final dot) that never end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "vs", "e.g", "i.e", "approx", "fig", "cf",
];

pub const DEFAULT_TARGET_GRADE: f64 = 6.0;
pub const DEFAULT_SPAN: f64 = 10.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReadabilityError {
    #[error("text is empty")]
    EmptyText,
    #[error("text contains no words")]
    NoWords,
    #[error("'{0}' has no alphabetic characters")]
    NoAlphabetic(String),
    #[error("invalid text statistics: {0}")]
    InvalidStats(&'static str),
    #[error("invalid readability config: {0}")]
    InvalidConfig(&'static str),
}

/// Sentence, word and syllable counts of a non-empty text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    sentences: usize,
    words: usize,
    syllables: usize,
}

impl TextStats {
    pub fn new(sentences: usize, words: usize, syllables: usize) -> Result<Self, ReadabilityError> {
        if sentences == 0 || words == 0 || syllables == 0 {
            return Err(ReadabilityError::InvalidStats("all counts must be at least 1"));
        }
        if syllables < words {
            return Err(ReadabilityError::InvalidStats("fewer syllables than words"));
        }
        Ok(Self {
            sentences,
            words,
            syllables,
        })
    }

    pub fn sentences(&self) -> usize {
        self.sentences
    }

    pub fn words(&self) -> usize {
        self.words
    }

    pub fn syllables(&self) -> usize {
        self.syllables
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityConfig {
    target_grade: f64,
    span: f64,
}

impl ReadabilityConfig {
    pub fn new(target_grade: f64, span: f64) -> Result<Self, ReadabilityError> {
        if !(target_grade.is_finite() && target_grade > 0.0) {
            return Err(ReadabilityError::InvalidConfig("target grade must be positive"));
        }
        if !(span.is_finite() && span > 0.0) {
            return Err(ReadabilityError::InvalidConfig("span must be positive"));
        }
        Ok(Self { target_grade, span })
    }

    pub fn target_grade(&self) -> f64 {
        self.target_grade
    }

    pub fn span(&self) -> f64 {
        self.span
    }
}

impl Default for ReadabilityConfig {
    fn default() -> Self {
        Self {
            target_grade: DEFAULT_TARGET_GRADE,
            span: DEFAULT_SPAN,
        }
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing(c: char) -> bool {
    matches!(c, ')' | ']' | '"' | '\'' | '\u{201d}' | '\u{2019}')
}

fn ends_with_abbreviation(sentence: &[char]) -> bool {
    let start = sentence
        .iter()
        .rposition(|c| c.is_whitespace())
        .map_or(0, |p| p + 1);
    let token: String = sentence[start..]
        .iter()
        .skip_while(|c| matches!(c, '(' | '[' | '"' | '\'' | '\u{201c}' | '\u{2018}'))
        .flat_map(|c| c.to_lowercase())
        .collect();
    ABBREVIATIONS.contains(&token.as_str())
}

/// Splits a letter body into sentences. Fragments with no alphanumeric
/// character (stray punctuation) are dropped.
pub fn segment_sentences(text: &str) -> Result<Vec<String>, ReadabilityError> {
    if text.trim().is_empty() {
        return Err(ReadabilityError::EmptyText);
    }
    let mut sentences = Vec::new();
    for paragraph in paragraphs(text) {
        let chars: Vec<char> = paragraph.chars().collect();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            if !is_terminal(chars[i]) {
                i += 1;
                continue;
            }
            let run_start = i;
            while i < chars.len() && is_terminal(chars[i]) {
                i += 1;
            }
            while i < chars.len() && is_closing(chars[i]) {
                i += 1;
            }
            let at_break = i == chars.len() || chars[i].is_whitespace();
            let single_dot = i - run_start == 1 && chars[run_start] == '.';
            if at_break && !(single_dot && ends_with_abbreviation(&chars[start..run_start])) {
                push_sentence(&mut sentences, &chars[start..i]);
                start = i;
            }
        }
        push_sentence(&mut sentences, &chars[start..]);
    }
    Ok(sentences)
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn push_sentence(out: &mut Vec<String>, chars: &[char]) {
    if chars.iter().any(|c| c.is_alphanumeric()) {
        let s: String = chars.iter().collect();
        out.push(s.trim().to_string());
    }
}

fn is_vowel(c: char) -> bool {
    matches!(
        c,
        'a' | 'e' | 'i' | 'o' | 'u' | 'y' | 'à' | 'á' | 'â' | 'ä' | 'è' | 'é' | 'ê' | 'ë' | 'ì'
            | 'í' | 'î' | 'ï' | 'ò' | 'ó' | 'ô' | 'ö' | 'ù' | 'ú' | 'û' | 'ü'
    )
}

/// Whether `letters[i]` acts as a vowel. `y` before a vowel is a consonant
/// at the start of a word or after another vowel ("yes", "staying"), and `u`
/// after `q` is a consonant.
fn vowel_at(letters: &[char], i: usize) -> bool {
    let c = letters[i];
    match c {
        'y' => {
            let next_vowel = letters.get(i + 1).is_some_and(|&n| n != 'y' && is_vowel(n));
            let prev_vowel = i > 0 && is_vowel(letters[i - 1]);
            !(next_vowel && (i == 0 || prev_vowel))
        }
        'u' if i > 0 && letters[i - 1] == 'q' => false,
        _ => is_vowel(c),
    }
}

/// Adjacent vowels that are pronounced separately ("bi-op-sy", "cal-ci-um",
/// "vi-de-o"), leaving the common one-syllable spellings ("-tion",
/// "-cial", "people", "surgeon") merged.
fn hiatus(letters: &[char], i: usize) -> bool {
    let before = if i >= 2 { letters[i - 2] } else { ' ' };
    let after = letters.get(i + 1).copied().unwrap_or(' ');
    match (letters[i - 1], letters[i]) {
        ('i', 'a') => !matches!(before, 'c' | 't' | 's'),
        ('i', 'o') => !matches!(before, 't' | 's' | 'c' | 'g' | 'x' | 'h' | 'l'),
        ('i', 'u') | ('u', 'o') => true,
        ('e', 'o') => {
            !(after == 'u'
                || (after == 'p' && matches!(before, 'p' | 'l' | 'j'))
                || (after == 'n' && matches!(before, 'g' | 'h')))
        }
        ('u', 'a') => before != 'g',
        _ => false,
    }
}

/// Vowel-group syllable estimate for a single word. Non-letters are ignored.
///
/// Counts vowel groups, splits the hiatus pairs above, then drops a silent
/// final "e" (keeping consonant + "le"), a silent "-ed" (keeping "-ted" and
/// "-ded") and a silent "-es" (keeping sibilant endings and consonant +
/// "les").
pub fn count_syllables(word: &str) -> Result<usize, ReadabilityError> {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if letters.is_empty() {
        return Err(ReadabilityError::NoAlphabetic(word.to_string()));
    }
    let n = letters.len();
    let vowels: Vec<bool> = (0..n).map(|i| vowel_at(&letters, i)).collect();
    let mut groups = 0usize;
    for i in 0..n {
        if vowels[i] && (i == 0 || !vowels[i - 1] || hiatus(&letters, i)) {
            groups += 1;
        }
    }
    let consonant = |i: usize| !vowels[i];
    let silent = if letters[n - 1] == 'e' && n >= 2 && consonant(n - 2) {
        !(letters[n - 2] == 'l' && n >= 3 && consonant(n - 3))
    } else if n >= 4 && letters[n - 2] == 'e' && consonant(n - 3) {
        let before = letters[n - 3];
        match letters[n - 1] {
            'd' => !matches!(before, 't' | 'd'),
            's' => {
                let sibilant = matches!(before, 's' | 'x' | 'z' | 'c' | 'g')
                    || (before == 'h' && matches!(letters[n - 4], 'c' | 's'));
                let consonant_les = before == 'l' && consonant(n - 4);
                !(sibilant || consonant_les)
            }
            _ => false,
        }
    } else {
        false
    };
    if silent {
        groups = groups.saturating_sub(1);
    }
    Ok(groups.max(1))
}

/// Splits text into word tokens.
pub fn words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() {
                i += 1;
                continue;
            }
            let next = chars.get(i + 1).copied();
            let prev = chars[i - 1];
            let joins_words = matches!(c, '\'' | '\u{2019}' | '-' | '\u{2011}')
                && next.is_some_and(char::is_alphanumeric);
            let joins_digits = matches!(c, '.' | ',')
                && prev.is_ascii_digit()
                && next.is_some_and(|n| n.is_ascii_digit());
            if joins_words || joins_digits {
                i += 1;
            } else {
                break;
            }
        }
        out.push(chars[start..i].iter().collect());
    }
    out
}

/// Syllables in one word token as produced by [`words`].
pub fn word_syllables(token: &str) -> usize {
    token
        .split(['-', '\u{2011}'])
        .filter(|part| !part.is_empty())
        .map(|part| {
            count_syllables(part).unwrap_or_else(|_| {
                part.split(['.', ','])
                    .filter(|g| g.chars().any(|c| c.is_ascii_digit()))
                    .count()
                    .max(1)
            })
        })
        .sum()
}

pub fn text_stats(text: &str) -> Result<TextStats, ReadabilityError> {
    let sentences = segment_sentences(text)?;
    let tokens = words(text);
    if tokens.is_empty() {
        return Err(ReadabilityError::NoWords);
    }
    let syllables = tokens.iter().map(|w| word_syllables(w)).sum();
    TextStats::new(sentences.len(), tokens.len(), syllables)
}

pub fn fkgl(stats: &TextStats) -> f64 {
    let words_per_sentence = stats.words as f64 / stats.sentences as f64;
    let syllables_per_word = stats.syllables as f64 / stats.words as f64;
    0.39 * words_per_sentence + 11.8 * syllables_per_word - 15.59
}

/// Maps a grade onto `[0, 1]`: 1 at the target grade, falling linearly to 0
/// at `span` grades away.
pub fn readability_score(grade: f64, cfg: &ReadabilityConfig) -> f64 {
    if grade.is_nan() {
        return 0.0;
    }
    (1.0 - (grade - cfg.target_grade).abs() / cfg.span).clamp(0.0, 1.0)
}

/// Full readability breakdown for a text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityReport {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
    pub grade: f64,
    pub readability: f64,
    pub target_grade: f64,
}

pub fn analyze(text: &str, cfg: &ReadabilityConfig) -> Result<ReadabilityReport, ReadabilityError> {
    let stats = text_stats(text)?;
    let grade = fkgl(&stats);
    Ok(ReadabilityReport {
        sentences: stats.sentences,
        words: stats.words,
        syllables: stats.syllables,
        grade,
        readability: readability_score(grade, cfg),
        target_grade: cfg.target_grade,
    })
}
