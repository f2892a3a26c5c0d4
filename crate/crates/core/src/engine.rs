//! The generate / score / reflect loop.
//!
//! A run extracts the report's reference ICD-10 codes once (temperature 0),
//! then repeats trials: generate `n_candidates` letters with every earlier
//! reflection appended to the prompt, score each, keep the best, and, unless
//! the best clears the early-stop threshold or the trial budget is spent,
//! turn the best letter's score breakdown into verbal feedback for the next
//! trial.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icd10::{descriptions_match, Icd10Code, Registry};
use crate::llm::{
    complete, parse_code_list, parse_generation, ChatMessage, LlmBackend, LlmError, LlmRequest,
    ParseError, PromptSet, RequestTag, TemplateError, DEFAULT_MODEL,
};
use crate::readability::{fkgl, readability_score, text_stats, ReadabilityConfig, ReadabilityError};
use crate::scoring::{accuracy, DescriptionCheck, LetterScore, ScoreError, ScoreWeights};

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Readability(#[from] ReadabilityError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("report body is empty")]
    EmptyReport,
    #[error("reference code extraction failed: {0}")]
    Extraction(StepError),
    #[error("reference code extraction produced no valid ICD-10 codes (dropped: {})", dropped.join(", "))]
    NoValidCodes { dropped: Vec<String> },
    #[error("trial {trial}{}: {error}", candidate.map(|c| format!(", candidate {c}")).unwrap_or_default())]
    Trial {
        trial: usize,
        candidate: Option<usize>,
        error: StepError,
        /// Results of the trials that completed before the failure.
        partial: Option<Box<PipelineResult>>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportSource {
    Inline,
    File {
        path: String,
    },
    Fhir {
        server: String,
        report_id: String,
        patient_ref: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicalReport {
    pub body: String,
    pub source: ReportSource,
    pub modality_hint: Option<String>,
}

impl MedicalReport {
    pub fn new(body: impl Into<String>, source: ReportSource) -> Result<Self, EngineError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(EngineError::EmptyReport);
        }
        let modality_hint = guess_modality(&body).map(str::to_string);
        Ok(Self {
            body,
            source,
            modality_hint,
        })
    }

    pub fn inline(body: impl Into<String>) -> Result<Self, EngineError> {
        Self::new(body, ReportSource::Inline)
    }
}

/// CT, MR or US when the report names exactly one of them.
pub fn guess_modality(body: &str) -> Option<&'static str> {
    let upper = body.to_uppercase();
    let has_word = |w: &str| {
        upper
            .split(|c: char| !c.is_ascii_alphanumeric())
            .any(|t| t == w)
    };
    let found: Vec<&'static str> = [
        ("CT", has_word("CT") || upper.contains("COMPUTED TOMOGRAPHY")),
        ("MR", has_word("MR") || has_word("MRI") || upper.contains("MAGNETIC RESONANCE")),
        ("US", upper.contains("ULTRASOUND") || upper.contains("SONOGRA")),
    ]
    .into_iter()
    .filter_map(|(m, hit)| hit.then_some(m))
    .collect();
    match found.as_slice() {
        [one] => Some(one),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model_id: String,
    /// Temperature for letter generation. Code extraction always uses 0.
    pub generation_temperature: f64,
    pub max_output: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL.to_string(),
            generation_temperature: 0.7,
            max_output: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub n_candidates: usize,
    pub max_trials: usize,
    pub early_stop: f64,
    pub weights: ScoreWeights,
    pub readability: ReadabilityConfig,
    pub model: ModelSettings,
    /// Rewrite composed feedback through the `reflect` prompt before storing it.
    pub llm_reflection: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            n_candidates: 5,
            max_trials: 3,
            early_stop: 0.99,
            weights: ScoreWeights::default(),
            readability: ReadabilityConfig::default(),
            model: ModelSettings::default(),
            llm_reflection: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.n_candidates == 0 {
            return bad("n_candidates must be at least 1");
        }
        if self.max_trials == 0 {
            return bad("max_trials must be at least 1");
        }
        if !(self.early_stop > 0.0 && self.early_stop <= 1.0) {
            return bad("early_stop must lie in (0, 1]");
        }
        ScoreWeights::new(self.weights.readability(), self.weights.accuracy())
            .map_err(|e| EngineError::Config(e.to_string()))?;
        ReadabilityConfig::new(self.readability.target_grade(), self.readability.span())
            .map_err(|e| EngineError::Config(e.to_string()))?;
        if !(self.model.generation_temperature.is_finite() && self.model.generation_temperature >= 0.0) {
            return bad("generation temperature must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateLetter {
    pub body: String,
    pub declared_codes: Vec<(String, String)>,
    pub trial_index: usize,
    pub candidate_index: usize,
}

impl CandidateLetter {
    pub fn declared_code_texts(&self) -> Vec<&str> {
        self.declared_codes.iter().map(|(c, _)| c.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    /// User prompt sent for every candidate of this trial.
    pub prompt: String,
    pub candidates: Vec<CandidateLetter>,
    pub scores: Vec<LetterScore>,
    pub best_index: usize,
    /// Feedback carried into the next trial; `None` for the final trial.
    pub feedback: Option<String>,
    /// Composed review the feedback was rewritten from, when LLM reflection is on.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub review: Option<String>,
}

impl TrialRecord {
    pub fn best_score(&self) -> &LetterScore {
        &self.scores[self.best_index]
    }
}

/// Append-only reflection log for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionMemory {
    entries: Vec<String>,
}

impl ReflectionMemory {
    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, entry: String) {
        self.entries.push(entry);
    }

    /// Text bound to the generation prompt's `{reflections}` slot.
    pub fn render(&self, header: &str) -> String {
        if self.entries.is_empty() {
            return String::new();
        }
        let mut out = format!("\n{header}\n");
        for (i, entry) in self.entries.iter().enumerate() {
            out.push_str(&format!("\nAttempt {}:\n{}\n", i + 1, entry));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxTrials,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceExtraction {
    pub codes: BTreeSet<Icd10Code>,
    /// Raw codes that failed normalization or registry validation.
    pub dropped: Vec<String>,
    pub description_checks: Vec<DescriptionCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub best_letter: CandidateLetter,
    pub best_score: LetterScore,
    pub reference_codes: BTreeSet<Icd10Code>,
    pub extraction: ReferenceExtraction,
    pub trials: Vec<TrialRecord>,
    pub memory: ReflectionMemory,
    pub stopped_reason: StopReason,
    /// Every LLM request issued, in logical order.
    pub llm_calls: Vec<RequestTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub letter: CandidateLetter,
    pub score: LetterScore,
    pub reference_codes: BTreeSet<Icd10Code>,
    pub extraction: ReferenceExtraction,
    pub prompt: String,
    pub llm_calls: Vec<RequestTag>,
}

/// Machine-readable record of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTrail {
    pub prompt_version: String,
    pub registry_version: String,
    pub config: EngineConfig,
    pub report: MedicalReport,
    pub result: PipelineResult,
}

pub struct Pipeline<'a> {
    backend: &'a dyn LlmBackend,
    registry: &'a Registry,
    prompts: PromptSet,
    config: EngineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        backend: &'a dyn LlmBackend,
        registry: &'a Registry,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            backend,
            registry,
            prompts: PromptSet::bundled(),
            config,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        self.registry
    }

    fn request(&self, tag: RequestTag, prompt: String, temperature: f64) -> LlmRequest {
        LlmRequest {
            tag,
            messages: vec![ChatMessage::system(self.prompts.system.body()), ChatMessage::user(prompt)],
            temperature,
            model_id: self.config.model.model_id.clone(),
            max_output: self.config.model.max_output,
        }
    }

    pub fn extract_reference_codes(&self, report: &MedicalReport) -> Result<ReferenceExtraction, EngineError> {
        let prompt = self
            .prompts
            .extract_codes
            .render(&[("report", report.body.as_str())])
            .map_err(|e| EngineError::Extraction(e.into()))?;
        let tag = RequestTag::new(PromptSet::EXTRACT_CODES, 0, None);
        let raw = complete(self.backend, &self.request(tag, prompt, 0.0))
            .map_err(|e| EngineError::Extraction(e.into()))?;
        let pairs = parse_code_list(&raw).map_err(|e| EngineError::Extraction(e.into()))?;

        let mut codes = BTreeSet::new();
        let mut dropped = Vec::new();
        let mut description_checks = Vec::new();
        for (raw_code, stated) in pairs {
            let code = match Icd10Code::normalize(&raw_code) {
                Ok(c) if self.registry.validate(&c) => c,
                _ => {
                    tracing::warn!(code = raw_code.as_str(), "dropping invalid reference code");
                    dropped.push(raw_code);
                    continue;
                }
            };
            if codes.insert(code.clone()) {
                let check = self.description_check(code, &stated);
                if !check.matches {
                    tracing::warn!(
                        code = %check.code,
                        stated = check.stated.as_str(),
                        official = check.official.as_str(),
                        "stated description differs from registry"
                    );
                }
                description_checks.push(check);
            }
        }
        if codes.is_empty() {
            return Err(EngineError::NoValidCodes { dropped });
        }
        Ok(ReferenceExtraction {
            codes,
            dropped,
            description_checks,
        })
    }

    fn description_check(&self, code: Icd10Code, stated: &str) -> DescriptionCheck {
        let official = self
            .registry
            .description(&code)
            .expect("code validated against registry")
            .to_string();
        DescriptionCheck {
            matches: descriptions_match(stated, &official),
            stated: stated.to_string(),
            official,
            code,
        }
    }

    pub fn render_generation_prompt(&self, report: &MedicalReport, memory: &ReflectionMemory) -> Result<String, TemplateError> {
        let target = format!("{:.1}", self.config.readability.target_grade());
        let reflections = memory.render(self.prompts.reflections_header);
        self.prompts.generate_letter.render(&[
            ("report", report.body.as_str()),
            ("target_grade", target.as_str()),
            ("reflections", reflections.as_str()),
        ])
    }

    /// Generates `count` candidates for one trial, concurrently when
    /// `count > 1`. Returns the rendered prompt and the letters in candidate
    /// order.
    pub fn generate_candidates(
        &self,
        report: &MedicalReport,
        memory: &ReflectionMemory,
        trial: usize,
        count: usize,
    ) -> Result<(String, Vec<CandidateLetter>), EngineError> {
        let fail = |candidate, error: StepError| EngineError::Trial {
            trial,
            candidate,
            error,
            partial: None,
        };
        let prompt = self
            .render_generation_prompt(report, memory)
            .map_err(|e| fail(None, e.into()))?;
        let generate = |candidate: usize| -> Result<CandidateLetter, StepError> {
            let tag = RequestTag::new(PromptSet::GENERATE_LETTER, trial, Some(candidate));
            let raw = complete(
                self.backend,
                &self.request(tag, prompt.clone(), self.config.model.generation_temperature),
            )?;
            let parsed = parse_generation(&raw)?;
            Ok(CandidateLetter {
                body: parsed.letter_body,
                declared_codes: parsed.declared_codes,
                trial_index: trial,
                candidate_index: candidate,
            })
        };
        let results: Vec<Result<CandidateLetter, StepError>> = if count == 1 {
            vec![generate(0)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..count)
                    .map(|c| {
                        let generate = &generate;
                        scope.spawn(move || generate(c))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("candidate generation panicked"))
                    .collect()
            })
        };
        let mut letters = Vec::with_capacity(count);
        for (candidate, result) in results.into_iter().enumerate() {
            letters.push(result.map_err(|e| fail(Some(candidate), e))?);
        }
        Ok((prompt, letters))
    }

    pub fn score_candidate(
        &self,
        letter: &CandidateLetter,
        reference: &BTreeSet<Icd10Code>,
    ) -> Result<LetterScore, StepError> {
        let breakdown = accuracy(reference, &letter.declared_code_texts(), self.registry);
        let grade = fkgl(&text_stats(&letter.body)?);
        let readability = readability_score(grade, &self.config.readability);
        let mut seen = BTreeSet::new();
        let checks = letter
            .declared_codes
            .iter()
            .filter_map(|(raw, stated)| {
                let code = Icd10Code::normalize(raw).ok().filter(|c| self.registry.validate(c))?;
                seen.insert(code.clone()).then(|| self.description_check(code, stated))
            })
            .collect();
        Ok(LetterScore::new(breakdown, grade, readability, &self.config.weights, checks)?)
    }

    fn score_all(
        &self,
        letters: &[CandidateLetter],
        reference: &BTreeSet<Icd10Code>,
        trial: usize,
    ) -> Result<Vec<LetterScore>, EngineError> {
        letters
            .iter()
            .map(|l| {
                self.score_candidate(l, reference).map_err(|error| EngineError::Trial {
                    trial,
                    candidate: Some(l.candidate_index),
                    error,
                    partial: None,
                })
            })
            .collect()
    }

    fn reflect(&self, best: &CandidateLetter, review: &str, trial: usize) -> Result<String, StepError> {
        let prompt = self
            .prompts
            .reflect
            .render(&[("letter", best.body.as_str()), ("feedback", review)])?;
        let tag = RequestTag::new(PromptSet::REFLECT, trial, None);
        Ok(complete(self.backend, &self.request(tag, prompt, 0.0))?.trim().to_string())
    }

    /// Runs the full loop and returns the best letter over all trials.
    pub fn run(&self, report: &MedicalReport) -> Result<PipelineResult, EngineError> {
        let extraction = self.extract_reference_codes(report)?;
        let reference = extraction.codes.clone();
        let mut calls = vec![RequestTag::new(PromptSet::EXTRACT_CODES, 0, None)];
        let mut memory = ReflectionMemory::default();
        let mut trials: Vec<TrialRecord> = Vec::new();
        let mut best: Option<(CandidateLetter, LetterScore)> = None;

        let finish = |trials: Vec<TrialRecord>,
                      memory: ReflectionMemory,
                      best: (CandidateLetter, LetterScore),
                      stopped_reason,
                      llm_calls| PipelineResult {
            best_letter: best.0,
            best_score: best.1,
            reference_codes: reference.clone(),
            extraction: extraction.clone(),
            trials,
            memory,
            stopped_reason,
            llm_calls,
        };

        for trial in 0..self.config.max_trials {
            let attempt = self.run_trial(report, &memory, &reference, trial, &mut calls);
            let (prompt, candidates, scores) = match attempt {
                Ok(v) => v,
                Err(mut err) => {
                    if let (EngineError::Trial { partial, .. }, Some(b)) = (&mut err, best.clone()) {
                        *partial = Some(Box::new(finish(
                            trials,
                            memory,
                            b,
                            StopReason::Aborted,
                            calls,
                        )));
                    }
                    return Err(err);
                }
            };
            let best_index = argmax(&scores);
            let trial_best = scores[best_index].overall;
            if best.as_ref().is_none_or(|(_, s)| trial_best > s.overall) {
                best = Some((candidates[best_index].clone(), scores[best_index].clone()));
            }
            let best_overall = best.as_ref().map_or(0.0, |(_, s)| s.overall);
            let mut record = TrialRecord {
                trial_index: trial,
                prompt,
                candidates,
                scores,
                best_index,
                feedback: None,
                review: None,
            };
            let stop = if best_overall >= self.config.early_stop {
                Some(StopReason::EarlyStop)
            } else if trial + 1 == self.config.max_trials {
                Some(StopReason::MaxTrials)
            } else {
                None
            };
            if let Some(reason) = stop {
                trials.push(record);
                let best = best.expect("at least one trial completed");
                return Ok(finish(trials, memory, best, reason, calls));
            }

            let review = compose_feedback(record.best_score(), &self.config, self.registry);
            let entry = if self.config.llm_reflection {
                calls.push(RequestTag::new(PromptSet::REFLECT, trial, None));
                match self.reflect(&record.candidates[best_index], &review, trial) {
                    Ok(text) => {
                        record.review = Some(review);
                        text
                    }
                    Err(error) => {
                        trials.push(record);
                        let best = best.expect("at least one trial completed");
                        return Err(EngineError::Trial {
                            trial,
                            candidate: None,
                            error,
                            partial: Some(Box::new(finish(trials, memory, best, StopReason::Aborted, calls))),
                        });
                    }
                }
            } else {
                review
            };
            record.feedback = Some(entry.clone());
            memory.push(entry);
            trials.push(record);
        }
        unreachable!("loop returns on its final trial")
    }

    fn run_trial(
        &self,
        report: &MedicalReport,
        memory: &ReflectionMemory,
        reference: &BTreeSet<Icd10Code>,
        trial: usize,
        calls: &mut Vec<RequestTag>,
    ) -> Result<(String, Vec<CandidateLetter>, Vec<LetterScore>), EngineError> {
        let n = self.config.n_candidates;
        calls.extend((0..n).map(|c| RequestTag::new(PromptSet::GENERATE_LETTER, trial, Some(c))));
        let (prompt, candidates) = self.generate_candidates(report, memory, trial, n)?;
        let scores = self.score_all(&candidates, reference, trial)?;
        Ok((prompt, candidates, scores))
    }

    /// Single generation with the same prompt as the first trial, no
    /// reflection.
    pub fn zero_shot(&self, report: &MedicalReport) -> Result<ZeroShotResult, EngineError> {
        let extraction = self.extract_reference_codes(report)?;
        let (prompt, mut letters) = self.generate_candidates(report, &ReflectionMemory::default(), 0, 1)?;
        let letter = letters.remove(0);
        let score = self
            .score_all(std::slice::from_ref(&letter), &extraction.codes, 0)?
            .remove(0);
        Ok(ZeroShotResult {
            letter,
            score,
            reference_codes: extraction.codes.clone(),
            extraction,
            prompt,
            llm_calls: vec![
                RequestTag::new(PromptSet::EXTRACT_CODES, 0, None),
                RequestTag::new(PromptSet::GENERATE_LETTER, 0, Some(0)),
            ],
        })
    }

    pub fn audit(&self, report: &MedicalReport, result: PipelineResult) -> AuditTrail {
        AuditTrail {
            prompt_version: PromptSet::VERSION.to_string(),
            registry_version: self.registry.source_version().to_string(),
            config: self.config.clone(),
            report: report.clone(),
            result,
        }
    }
}

/// Index of the highest overall score; the lowest index wins ties.
fn argmax(scores: &[LetterScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.overall > scores[best].overall {
            best = i;
        }
    }
    best
}

pub const NO_CORRECTIONS: &str = "No corrections needed: the letter includes every ICD-10 code from the \
original report and reads at the target grade level.";

/// Turns a score breakdown into reflection text for the next trial. The
/// output depends only on its inputs.
pub fn compose_feedback(score: &LetterScore, config: &EngineConfig, registry: &Registry) -> String {
    if score.is_perfect() {
        return NO_CORRECTIONS.to_string();
    }
    let mut lines = vec![format!(
        "Your best letter scored {:.4} overall (accuracy {:.4}, readability {:.4}); the goal is 1.0000.",
        score.overall, score.accuracy, score.readability
    )];
    if !score.missing_codes.is_empty() {
        lines.push(
            "It left out findings behind these ICD-10 codes from the original report. Explain each one \
             in plain words and list its code:"
                .to_string(),
        );
        for code in &score.missing_codes {
            let description = registry.description(code).unwrap_or("(description unavailable)");
            lines.push(format!("- {code}: {description}"));
        }
    }
    if !score.invalid_codes.is_empty() {
        let invalid: Vec<&str> = score.invalid_codes.iter().map(String::as_str).collect();
        lines.push(format!(
            "These declared codes are not valid ICD-10-CM codes; remove or correct them: {}.",
            invalid.join(", ")
        ));
    }
    let mismatched: Vec<&DescriptionCheck> = score.description_checks.iter().filter(|c| !c.matches).collect();
    if !mismatched.is_empty() {
        lines.push("Use the official description for these codes:".to_string());
        for check in mismatched {
            lines.push(format!("- {}: \"{}\" (you wrote \"{}\")", check.code, check.official, check.stated));
        }
    }
    let target = config.readability.target_grade();
    let delta = score.grade - target;
    if score.readability < 1.0 {
        let advice = if delta > 0.0 {
            "Shorten sentences and use simpler words."
        } else {
            "The letter reads below the target level; use complete sentences and a professional tone \
             while keeping words simple."
        };
        lines.push(format!(
            "Reading level: grade {:.1}, target {:.1} (delta {:+.1}). {advice}",
            score.grade, target, delta
        ));
    } else {
        lines.push(format!("Reading level: grade {:.1} matches the target {:.1}.", score.grade, target));
    }
    lines.join("\n")
}
