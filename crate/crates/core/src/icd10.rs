//! ICD-10-CM code table: normalization, validation and description lookup.
//!
//! The table is a UTF-8 text file with one `CODE<TAB>DESCRIPTION` entry per
//! line. Lines starting with `#` are comments; a `# source_version: <id>`
//! comment names the release. Codes may be written with or without the dot
//! and are normalized on load.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The ICD-10-CM release shipped with the crate.
pub const BUNDLED_TABLE: &str = include_str!("../data/icd10cm-2026.tsv");

const VERSION_PREFIX: &str = "source_version:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodeError {
    #[error("empty ICD-10 code")]
    Empty,
    #[error("'{0}' does not match the ICD-10 code pattern")]
    Pattern(String),
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read ICD-10 table {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected 2 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: empty description")]
    EmptyDescription { line: usize },
    #[error("line {line}: {source}")]
    BadCode {
        line: usize,
        #[source]
        source: CodeError,
    },
    #[error("line {line}: duplicate code {code}")]
    DuplicateCode { line: usize, code: Icd10Code },
    #[error("ICD-10 table has zero rows")]
    ZeroRows,
    #[error("unknown ICD-10 code {0}")]
    UnknownCode(Icd10Code),
}

/// A canonical ICD-10 code: uppercase, dot after the category when a
/// subcategory is present (`E11.9`, `I10`, `S72.001A`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Icd10Code(String);

impl Icd10Code {
    /// Trims, uppercases and inserts the missing dot, then checks the pattern
    /// `[A-Z][0-9A-Z]{2}(\.[0-9A-Z]{1,4})?`.
    pub fn normalize(raw: &str) -> Result<Self, CodeError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(CodeError::Empty);
        }
        let upper = trimmed.to_ascii_uppercase();
        let canonical = if !upper.contains('.') && upper.len() > 3 && upper.is_char_boundary(3) {
            format!("{}.{}", &upper[..3], &upper[3..])
        } else {
            upper
        };
        if is_canonical(&canonical) {
            Ok(Self(canonical))
        } else {
            Err(CodeError::Pattern(trimmed.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn is_canonical(code: &str) -> bool {
    let bytes = code.as_bytes();
    let alnum = |b: &u8| b.is_ascii_digit() || b.is_ascii_uppercase();
    if bytes.len() < 3 || !bytes[0].is_ascii_uppercase() || !bytes[1..3].iter().all(alnum) {
        return false;
    }
    match &bytes[3..] {
        [] => true,
        [b'.', rest @ ..] => (1..=4).contains(&rest.len()) && rest.iter().all(alnum),
        _ => false,
    }
}

impl fmt::Display for Icd10Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Icd10Code {
    type Error = CodeError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::normalize(&value)
    }
}

impl From<Icd10Code> for String {
    fn from(code: Icd10Code) -> Self {
        code.0
    }
}

impl std::str::FromStr for Icd10Code {
    type Err = CodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::normalize(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Icd10Entry {
    pub code: Icd10Code,
    pub description: String,
}

/// Immutable code table. Build it with [`Registry::load`],
/// [`Registry::parse`] or [`Registry::bundled`].
#[derive(Debug, Clone)]
pub struct Registry {
    entries: HashMap<Icd10Code, Icd10Entry>,
    source_version: String,
}

impl Registry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let fallback = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".to_string());
        Self::parse(&text, &fallback)
    }

    /// Loads the table compiled into the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TABLE, "icd10cm-bundled").expect("bundled ICD-10 table is well-formed")
    }

    /// Parses table text. `default_version` is used when the text carries no
    /// `# source_version:` comment.
    pub fn parse(text: &str, default_version: &str) -> Result<Self, RegistryError> {
        let mut entries = HashMap::new();
        let mut source_version = None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end_matches('\r');
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(version) = comment.trim().strip_prefix(VERSION_PREFIX) {
                    source_version.get_or_insert_with(|| version.trim().to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let columns: Vec<&str> = line.split('\t').collect();
            if columns.len() != 2 {
                return Err(RegistryError::ColumnCount {
                    line: line_no,
                    found: columns.len(),
                });
            }
            let code = Icd10Code::normalize(columns[0])
                .map_err(|source| RegistryError::BadCode { line: line_no, source })?;
            let description = columns[1].trim();
            if description.is_empty() {
                return Err(RegistryError::EmptyDescription { line: line_no });
            }
            if entries.contains_key(&code) {
                return Err(RegistryError::DuplicateCode { line: line_no, code });
            }
            entries.insert(
                code.clone(),
                Icd10Entry {
                    code,
                    description: description.to_string(),
                },
            );
        }
        if entries.is_empty() {
            return Err(RegistryError::ZeroRows);
        }
        Ok(Self {
            entries,
            source_version: source_version.unwrap_or_else(|| default_version.to_string()),
        })
    }

    pub fn source_version(&self) -> &str {
        &self.source_version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, code: &Icd10Code) -> bool {
        self.entries.contains_key(code)
    }

    pub fn get(&self, code: &Icd10Code) -> Option<&Icd10Entry> {
        self.entries.get(code)
    }

    pub fn description(&self, code: &Icd10Code) -> Result<&str, RegistryError> {
        self.entries
            .get(code)
            .map(|e| e.description.as_str())
            .ok_or_else(|| RegistryError::UnknownCode(code.clone()))
    }

    /// Iterates entries in no particular order.
    pub fn entries(&self) -> impl Iterator<Item = &Icd10Entry> {
        self.entries.values()
    }
}

/// Exact description comparison after trimming, whitespace collapsing and
/// case folding. Synonyms do not match.
pub fn descriptions_match(a: &str, b: &str) -> bool {
    fold(a) == fold(b)
}

fn fold(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}
