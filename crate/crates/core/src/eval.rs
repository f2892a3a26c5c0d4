//! Zero-shot versus reflected comparison over a corpus of reports.
//!
//! Deltas are `reflected - zero_shot` on the raw `[0, 1]` metrics; the
//! `*_points` figures are the same deltas times 100 (percentage points).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, EngineError, MedicalReport, Pipeline};
use crate::icd10::Registry;
use crate::llm::LlmBackend;
use crate::scoring::LetterScore;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("report {report_id}: both arms failed (zero-shot: {zero_shot}; reflected: {reflected})")]
    BothArmsFailed {
        report_id: String,
        zero_shot: String,
        reflected: String,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub readability: f64,
    pub overall: f64,
    pub grade: f64,
}

impl Metrics {
    fn of(score: &LetterScore) -> Self {
        Self {
            accuracy: score.accuracy,
            readability: score.readability,
            overall: score.overall,
            grade: score.grade,
        }
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            accuracy: self.accuracy - other.accuracy,
            readability: self.readability - other.readability,
            overall: self.overall - other.overall,
            grade: self.grade - other.grade,
        }
    }

    fn points(&self) -> Self {
        Self {
            accuracy: self.accuracy * 100.0,
            readability: self.readability * 100.0,
            overall: self.overall * 100.0,
            grade: self.grade,
        }
    }

    fn mean<'a>(items: impl Iterator<Item = &'a Metrics>) -> Self {
        let mut sum = Self::default();
        let mut n = 0usize;
        for m in items {
            sum.accuracy += m.accuracy;
            sum.readability += m.readability;
            sum.overall += m.overall;
            sum.grade += m.grade;
            n += 1;
        }
        if n == 0 {
            return sum;
        }
        let n = n as f64;
        Self {
            accuracy: sum.accuracy / n,
            readability: sum.readability / n,
            overall: sum.overall / n,
            grade: sum.grade / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub report_id: String,
    pub zero_shot: Option<LetterScore>,
    pub reflected: Option<LetterScore>,
    /// `reflected - zero_shot`, present when both arms succeeded.
    pub deltas: Option<Metrics>,
    pub trials_used: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub failures: Vec<String>,
}

impl EvalRow {
    pub fn new(
        report_id: impl Into<String>,
        zero_shot: Result<LetterScore, String>,
        reflected: Result<(LetterScore, usize), String>,
    ) -> Result<Self, EvalError> {
        let report_id = report_id.into();
        let (zero_shot, reflected, failures) = match (zero_shot, reflected) {
            (Err(z), Err(r)) => {
                return Err(EvalError::BothArmsFailed {
                    report_id,
                    zero_shot: z,
                    reflected: r,
                })
            }
            (z, r) => {
                let mut failures = Vec::new();
                if let Err(e) = &z {
                    failures.push(format!("zero-shot: {e}"));
                }
                if let Err(e) = &r {
                    failures.push(format!("reflected: {e}"));
                }
                (z.ok(), r.ok(), failures)
            }
        };
        let deltas = match (&zero_shot, &reflected) {
            (Some(z), Some((r, _))) => Some(Metrics::of(r).minus(&Metrics::of(z))),
            _ => None,
        };
        let (reflected, trials_used) = match reflected {
            Some((score, trials)) => (Some(score), Some(trials)),
            None => (None, None),
        };
        Ok(Self {
            report_id,
            zero_shot,
            reflected,
            deltas,
            trials_used,
            failures,
        })
    }

    fn is_complete(&self) -> bool {
        self.deltas.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub rows: Vec<EvalRow>,
    /// Rows where both arms succeeded; the means below cover only these.
    pub complete_rows: usize,
    pub zero_shot_mean: Metrics,
    pub reflected_mean: Metrics,
    pub delta_mean: Metrics,
    pub delta_points: Metrics,
}

/// Aggregates rows, sorting them by report id.
pub fn summarize(mut rows: Vec<EvalRow>) -> Result<EvalSummary, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    rows.sort_by(|a, b| a.report_id.cmp(&b.report_id));
    let complete: Vec<&EvalRow> = rows.iter().filter(|r| r.is_complete()).collect();
    let zero: Vec<Metrics> = complete
        .iter()
        .filter_map(|r| r.zero_shot.as_ref().map(Metrics::of))
        .collect();
    let refl: Vec<Metrics> = complete
        .iter()
        .filter_map(|r| r.reflected.as_ref().map(Metrics::of))
        .collect();
    let zero_shot_mean = Metrics::mean(zero.iter());
    let reflected_mean = Metrics::mean(refl.iter());
    let delta_mean = reflected_mean.minus(&zero_shot_mean);
    Ok(EvalSummary {
        complete_rows: complete.len(),
        delta_points: delta_mean.points(),
        rows,
        zero_shot_mean,
        reflected_mean,
        delta_mean,
    })
}

/// Runs both arms on one report with a fresh pipeline.
pub fn evaluate_report(
    report_id: &str,
    report: &MedicalReport,
    backend: &dyn LlmBackend,
    registry: &Registry,
    config: &EngineConfig,
) -> Result<EvalRow, EvalError> {
    let pipeline = Pipeline::new(backend, registry, config.clone())?;
    let zero = pipeline.zero_shot(report).map(|z| z.score).map_err(|e| e.to_string());
    let reflected = pipeline
        .run(report)
        .map(|r| (r.best_score, r.trials.len()))
        .map_err(|e| e.to_string());
    EvalRow::new(report_id, zero, reflected)
}

/// One corpus entry: a report and the backend that answers for it.
pub struct CorpusItem {
    pub id: String,
    pub report: MedicalReport,
    pub backend: Box<dyn LlmBackend>,
}

/// Evaluates every item, several at a time. Row order in the summary is by
/// report id regardless of completion order.
pub fn evaluate_corpus(
    items: &[CorpusItem],
    registry: &Registry,
    config: &EngineConfig,
) -> Result<EvalSummary, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).min(8);
    let mut rows = Vec::with_capacity(items.len());
    for chunk in items.chunks(workers) {
        let results: Vec<Result<EvalRow, EvalError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|item| {
                    scope.spawn(move || {
                        evaluate_report(&item.id, &item.report, item.backend.as_ref(), registry, config)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        for r in results {
            rows.push(r?);
        }
    }
    summarize(rows)
}

fn metric_cells(m: &Metrics) -> String {
    format!(
        "{:>9.4} {:>11.4} {:>8.4} {:>7.2}",
        m.accuracy, m.readability, m.overall, m.grade
    )
}

fn point_cells(m: &Metrics) -> String {
    format!(
        "{:>+9.2} {:>+11.2} {:>+8.2} {:>+7.2}",
        m.accuracy, m.readability, m.overall, m.grade
    )
}

/// Plain-text table: per-report rows, then the mean row and the deltas in
/// percentage points (grade delta in grade levels).
pub fn render_table(summary: &EvalSummary) -> String {
    let label = format!("MEAN (n={})", summary.complete_rows);
    let id_width = summary
        .rows
        .iter()
        .map(|r| r.report_id.len())
        .max()
        .unwrap_or(0)
        .max("report".len())
        .max(label.len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<id_width$}  {:<10} {:>9} {:>11} {:>8} {:>7}",
        "report", "arm", "accuracy", "readability", "overall", "grade"
    );
    let missing = "        -           -        -       -";
    for row in &summary.rows {
        let cells = |s: &Option<LetterScore>| s.as_ref().map_or(missing.to_string(), |s| metric_cells(&Metrics::of(s)));
        let _ = writeln!(out, "{:<id_width$}  {:<10} {}", row.report_id, "zero-shot", cells(&row.zero_shot));
        let _ = writeln!(out, "{:<id_width$}  {:<10} {}", "", "reflected", cells(&row.reflected));
        if let Some(d) = &row.deltas {
            let _ = writeln!(out, "{:<id_width$}  {:<10} {}", "", "delta (pp)", point_cells(&d.points()));
        }
        for failure in &row.failures {
            let _ = writeln!(out, "{:<id_width$}  failed: {failure}", "");
        }
    }
    let _ = writeln!(out, "{}", "-".repeat(id_width + 50));
    let _ = writeln!(out, "{:<id_width$}  {:<10} {}", label, "zero-shot", metric_cells(&summary.zero_shot_mean));
    let _ = writeln!(out, "{:<id_width$}  {:<10} {}", "", "reflected", metric_cells(&summary.reflected_mean));
    let _ = writeln!(out, "{:<id_width$}  {:<10} {}", "", "delta (pp)", point_cells(&summary.delta_points));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn score(accuracy: f64, readability: f64, grade: f64) -> LetterScore {
        LetterScore {
            accuracy,
            grade,
            readability,
            overall: 0.3 * readability + 0.7 * accuracy,
            matched_codes: BTreeSet::new(),
            missing_codes: BTreeSet::new(),
            invalid_codes: BTreeSet::new(),
            extra_codes: BTreeSet::new(),
            vacuous_accuracy: false,
            description_checks: vec![],
        }
    }

    #[test]
    fn means_match_hand_averages() {
        let rows = vec![
            EvalRow::new("b", Ok(score(0.5, 0.8, 8.0)), Ok((score(1.0, 0.9, 7.0), 2))).unwrap(),
            EvalRow::new("a", Ok(score(0.25, 0.6, 10.0)), Ok((score(0.75, 0.7, 9.0), 3))).unwrap(),
        ];
        let s = summarize(rows).unwrap();
        assert_eq!(s.rows[0].report_id, "a");
        assert_eq!(s.complete_rows, 2);
        assert!((s.zero_shot_mean.accuracy - 0.375).abs() < 1e-12);
        assert!((s.reflected_mean.accuracy - 0.875).abs() < 1e-12);
        assert!((s.delta_points.accuracy - 50.0).abs() < 1e-9);
        assert!((s.delta_mean.grade - -1.0).abs() < 1e-12);
        let table = render_table(&s);
        assert!(table.contains("MEAN (n=2)"));
        assert!(table.contains("+50.00"));
    }

    #[test]
    fn partial_and_failed_rows() {
        assert!(matches!(
            EvalRow::new("x", Err("a".into()), Err("b".into())),
            Err(EvalError::BothArmsFailed { .. })
        ));
        let row = EvalRow::new("x", Err("boom".into()), Ok((score(1.0, 1.0, 6.0), 1))).unwrap();
        assert!(row.deltas.is_none());
        assert_eq!(row.failures, vec!["zero-shot: boom"]);
        let ok = EvalRow::new("y", Ok(score(0.5, 0.5, 6.0)), Ok((score(0.5, 0.5, 6.0), 1))).unwrap();
        let s = summarize(vec![row, ok]).unwrap();
        assert_eq!(s.complete_rows, 1);
        assert_eq!(s.delta_mean, Metrics::default());
        assert!(render_table(&s).contains("failed: zero-shot: boom"));
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(summarize(vec![]), Err(EvalError::EmptyCorpus)));
        let reg = Registry::parse("I10\tx\n", "t").unwrap();
        assert!(matches!(
            evaluate_corpus(&[], &reg, &EngineConfig::default()),
            Err(EvalError::EmptyCorpus)
        ));
    }
}
