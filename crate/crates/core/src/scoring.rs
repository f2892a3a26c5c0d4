//! Letter accuracy from ICD-10 code sets and the weighted overall score.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icd10::{Icd10Code, Registry};

pub const DEFAULT_READABILITY_WEIGHT: f64 = 0.3;
pub const DEFAULT_ACCURACY_WEIGHT: f64 = 0.7;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("weights must be non-negative and sum to 1 (got {readability} + {accuracy})")]
    InvalidWeights { readability: f64, accuracy: f64 },
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfRange { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    readability: f64,
    accuracy: f64,
}

impl ScoreWeights {
    pub fn new(readability: f64, accuracy: f64) -> Result<Self, ScoreError> {
        let ok = readability.is_finite()
            && accuracy.is_finite()
            && readability >= 0.0
            && accuracy >= 0.0
            && (readability + accuracy - 1.0).abs() <= WEIGHT_SUM_TOLERANCE;
        if ok {
            Ok(Self {
                readability,
                accuracy,
            })
        } else {
            Err(ScoreError::InvalidWeights {
                readability,
                accuracy,
            })
        }
    }

    pub fn readability(&self) -> f64 {
        self.readability
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            readability: DEFAULT_READABILITY_WEIGHT,
            accuracy: DEFAULT_ACCURACY_WEIGHT,
        }
    }
}

/// How a letter's declared codes line up against the report's codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBreakdown {
    pub fraction: f64,
    pub matched: BTreeSet<Icd10Code>,
    pub missing: BTreeSet<Icd10Code>,
    /// Declared codes that failed normalization or are not in the registry.
    pub invalid: BTreeSet<String>,
    /// Valid declared codes absent from the report. Not penalized.
    pub extra: BTreeSet<Icd10Code>,
    /// Set when the report had no codes and the fraction is 1 by convention.
    pub vacuous: bool,
}

/// Fraction of the report's codes that the letter declares, after
/// normalizing and registry-validating the letter's codes.
pub fn accuracy(
    original: &BTreeSet<Icd10Code>,
    letter_codes: &[impl AsRef<str>],
    registry: &Registry,
) -> AccuracyBreakdown {
    let mut declared = BTreeSet::new();
    let mut invalid = BTreeSet::new();
    for raw in letter_codes {
        let raw = raw.as_ref();
        match Icd10Code::normalize(raw) {
            Ok(code) if registry.validate(&code) => {
                declared.insert(code);
            }
            _ => {
                invalid.insert(raw.trim().to_string());
            }
        }
    }
    let matched: BTreeSet<_> = original.intersection(&declared).cloned().collect();
    let missing: BTreeSet<_> = original.difference(&declared).cloned().collect();
    let extra: BTreeSet<_> = declared.difference(original).cloned().collect();
    let vacuous = original.is_empty();
    let fraction = if vacuous {
        1.0
    } else {
        matched.len() as f64 / original.len() as f64
    };
    AccuracyBreakdown {
        fraction,
        matched,
        missing,
        invalid,
        extra,
        vacuous,
    }
}

pub fn overall_score(readability: f64, accuracy: f64, weights: &ScoreWeights) -> Result<f64, ScoreError> {
    for (name, value) in [("readability", readability), ("accuracy", accuracy)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(ScoreError::OutOfRange { name, value });
        }
    }
    Ok(weights.readability * readability + weights.accuracy * accuracy)
}

/// Agreement between the description a letter states for a code and the
/// registry's official text. Recorded for audit; does not affect accuracy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionCheck {
    pub code: Icd10Code,
    pub stated: String,
    pub official: String,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterScore {
    pub accuracy: f64,
    pub grade: f64,
    pub readability: f64,
    pub overall: f64,
    pub matched_codes: BTreeSet<Icd10Code>,
    pub missing_codes: BTreeSet<Icd10Code>,
    pub invalid_codes: BTreeSet<String>,
    pub extra_codes: BTreeSet<Icd10Code>,
    pub vacuous_accuracy: bool,
    pub description_checks: Vec<DescriptionCheck>,
}

impl LetterScore {
    pub fn new(
        breakdown: AccuracyBreakdown,
        grade: f64,
        readability: f64,
        weights: &ScoreWeights,
        description_checks: Vec<DescriptionCheck>,
    ) -> Result<Self, ScoreError> {
        let overall = overall_score(readability, breakdown.fraction, weights)?;
        Ok(Self {
            accuracy: breakdown.fraction,
            grade,
            readability,
            overall,
            matched_codes: breakdown.matched,
            missing_codes: breakdown.missing,
            invalid_codes: breakdown.invalid,
            extra_codes: breakdown.extra,
            vacuous_accuracy: breakdown.vacuous,
            description_checks,
        })
    }

    pub fn is_perfect(&self) -> bool {
        self.missing_codes.is_empty() && self.invalid_codes.is_empty() && self.readability == 1.0
    }
}
