//! Patient-friendly radiology letters with iterative self-reflection.
//!
//! An LLM rewrites a radiology report as several candidate letters. Each
//! candidate is scored on ICD-10 accuracy against the report's own codes and
//! on Flesch-Kincaid readability, and the best letter's score breakdown is
//! turned into verbal feedback for the next round. The best letter over all
//! rounds is returned, optionally pushed to a FHIR server.

pub mod engine;
pub mod eval;
pub mod fhir;
pub mod icd10;
pub mod llm;
pub mod readability;
pub mod scoring;

pub use engine::{
    compose_feedback, AuditTrail, CandidateLetter, EngineConfig, EngineError, MedicalReport, Pipeline,
    PipelineResult, ReportSource, StopReason, TrialRecord, ZeroShotResult,
};
pub use icd10::{Icd10Code, Icd10Entry, Registry};
pub use readability::ReadabilityConfig;
pub use scoring::{LetterScore, ScoreWeights};
