//! Subcommand implementations. Each writes its report to `out` and its
//! artifacts under the configured output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use radletter_core::engine::{EngineError, PipelineResult, ReferenceExtraction};
use radletter_core::eval::{evaluate_corpus, render_table, CorpusItem, EvalSummary};
use radletter_core::fhir::{FhirClient, FhirReportRef};
use radletter_core::llm::{ChatCompletionsBackend, LlmBackend, ScriptedBackend};
use radletter_core::readability::analyze;
use radletter_core::{AuditTrail, LetterScore, MedicalReport, Pipeline, Registry, ReportSource};
use serde::Serialize;

use crate::cli::{Cli, Command, ReportArgs};
use crate::config::{Gateway, RunConfig};

/// Companion script suffix for corpus reports: `<id>.txt` pairs with
/// `<id>.script.json`.
pub const SCRIPT_SUFFIX: &str = ".script.json";

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let json = cli.global.json;
    let config = RunConfig::from_args(&cli.global)?;
    match &cli.command {
        Command::Readability { text } => cmd_readability(text, &config, json, out),
        Command::ExtractCodes(report) => cmd_extract_codes(report, &config, json, out),
        Command::ZeroShot(report) => cmd_zero_shot(report, &config, json, out),
        Command::Reflect {
            report,
            push,
            patient_ref,
        } => cmd_reflect(report, &config, *push, patient_ref.as_deref(), json, out),
        Command::Eval { corpus } => cmd_eval(corpus, &config, json, out).map(|_| ()),
        #[cfg(feature = "stub-server")]
        Command::ServeStub { seed } => cmd_serve_stub(seed, out),
    }
}

fn load_registry(config: &RunConfig) -> Result<Registry> {
    match &config.registry_path {
        Some(path) => Registry::load(path).with_context(|| format!("loading registry {}", path.display())),
        None => Ok(Registry::bundled()),
    }
}

fn backend(config: &RunConfig) -> Result<Box<dyn LlmBackend>> {
    match &config.gateway {
        Gateway::Scripted(Some(path)) => Ok(Box::new(
            ScriptedBackend::load(path).with_context(|| format!("loading script {}", path.display()))?,
        )),
        Gateway::Scripted(None) => bail!("the scripted backend needs --script"),
        Gateway::Live(http) => Ok(Box::new(ChatCompletionsBackend::new(http.clone())?)),
    }
}

fn fhir_client(config: &RunConfig) -> Result<FhirClient> {
    let cfg = config
        .fhir
        .clone()
        .ok_or_else(|| anyhow!("no FHIR server configured (use --fhir-url or [fhir] in the config)"))?;
    Ok(FhirClient::new(cfg)?)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_report(args: &ReportArgs, config: &RunConfig) -> Result<MedicalReport> {
    match (&args.report, &args.report_id) {
        (Some(path), None) => {
            let source = ReportSource::File {
                path: path.display().to_string(),
            };
            MedicalReport::new(read_text(path)?, source).with_context(|| format!("report {}", path.display()))
        }
        (None, Some(id)) => {
            let client = fhir_client(config)?;
            let mut reference = FhirReportRef::new(id.clone())?;
            Ok(client.fetch_report(&mut reference)?)
        }
        _ => bail!("give a report file or --report-id"),
    }
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn with_newline(text: &str) -> String {
    let mut s = text.trim_end().to_string();
    s.push('\n');
    s
}

fn score_lines(out: &mut dyn Write, score: &LetterScore) -> Result<()> {
    writeln!(out, "accuracy     {:.4}", score.accuracy)?;
    writeln!(out, "readability  {:.4}  (grade {:.2})", score.readability, score.grade)?;
    writeln!(out, "overall      {:.4}", score.overall)?;
    if !score.missing_codes.is_empty() {
        let missing: Vec<&str> = score.missing_codes.iter().map(|c| c.as_str()).collect();
        writeln!(out, "missing      {}", missing.join(", "))?;
    }
    if !score.invalid_codes.is_empty() {
        let invalid: Vec<&str> = score.invalid_codes.iter().map(String::as_str).collect();
        writeln!(out, "invalid      {}", invalid.join(", "))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ExtractedCode<'a> {
    code: &'a str,
    description: &'a str,
    stated: &'a str,
    description_matches: bool,
}

#[derive(Serialize)]
struct ExtractOutput<'a> {
    registry_version: &'a str,
    codes: Vec<ExtractedCode<'a>>,
    dropped: &'a [String],
}

fn extract_output<'a>(extraction: &'a ReferenceExtraction, registry: &'a Registry) -> ExtractOutput<'a> {
    ExtractOutput {
        registry_version: registry.source_version(),
        codes: extraction
            .description_checks
            .iter()
            .map(|c| ExtractedCode {
                code: c.code.as_str(),
                description: c.official.as_str(),
                stated: c.stated.as_str(),
                description_matches: c.matches,
            })
            .collect(),
        dropped: &extraction.dropped,
    }
}

pub fn cmd_extract_codes(args: &ReportArgs, config: &RunConfig, json: bool, out: &mut dyn Write) -> Result<()> {
    let registry = load_registry(config)?;
    let backend = backend(config)?;
    let report = load_report(args, config)?;
    let pipeline = Pipeline::new(backend.as_ref(), &registry, config.engine.clone())?;
    let extraction = pipeline.extract_reference_codes(&report)?;
    let output = extract_output(&extraction, &registry);
    if json {
        write!(out, "{}", to_json(&output)?)?;
        return Ok(());
    }
    let width = output.codes.iter().map(|c| c.code.len()).max().unwrap_or(4).max(4);
    writeln!(out, "{:<width$}  DESCRIPTION", "CODE")?;
    for c in &output.codes {
        writeln!(out, "{:<width$}  {}", c.code, c.description)?;
        if !c.description_matches {
            writeln!(out, "{:<width$}  (report stated: {})", "", c.stated)?;
        }
    }
    for d in output.dropped {
        writeln!(out, "dropped invalid code: {d}")?;
    }
    Ok(())
}

pub fn cmd_readability(path: &Path, config: &RunConfig, json: bool, out: &mut dyn Write) -> Result<()> {
    let text = read_text(path)?;
    let report = analyze(&text, &config.engine.readability).with_context(|| format!("{}", path.display()))?;
    if json {
        write!(out, "{}", to_json(&report)?)?;
    } else {
        writeln!(out, "sentences    {}", report.sentences)?;
        writeln!(out, "words        {}", report.words)?;
        writeln!(out, "syllables    {}", report.syllables)?;
        writeln!(out, "grade        {:.2}", report.grade)?;
        writeln!(out, "readability  {:.4}  (target grade {:.1})", report.readability, report.target_grade)?;
    }
    Ok(())
}

pub fn cmd_zero_shot(args: &ReportArgs, config: &RunConfig, json: bool, out: &mut dyn Write) -> Result<()> {
    let registry = load_registry(config)?;
    let backend = backend(config)?;
    let report = load_report(args, config)?;
    let pipeline = Pipeline::new(backend.as_ref(), &registry, config.engine.clone())?;
    let result = pipeline.zero_shot(&report)?;
    let record = to_json(&result)?;
    let letter_path = write_artifact(&config.output_dir, "zero_shot.txt", &with_newline(&result.letter.body))?;
    write_artifact(&config.output_dir, "zero_shot.json", &record)?;
    if json {
        write!(out, "{record}")?;
    } else {
        score_lines(out, &result.score)?;
        writeln!(out, "letter       {}", letter_path.display())?;
    }
    Ok(())
}

/// Audit document written by `reflect`.
#[derive(Serialize)]
struct RunRecord<'a> {
    #[serde(flatten)]
    audit: &'a AuditTrail,
    /// Server id of the DocumentReference created by `--push`.
    pushed_document: Option<String>,
}

/// Written instead of the audit when a run aborts after some trials.
#[derive(Serialize)]
struct PartialRecord<'a> {
    error: String,
    partial: &'a PipelineResult,
}

pub fn cmd_reflect(
    args: &ReportArgs,
    config: &RunConfig,
    push: bool,
    patient_ref: Option<&str>,
    json: bool,
    out: &mut dyn Write,
) -> Result<()> {
    let registry = load_registry(config)?;
    let backend = backend(config)?;
    let client = if push { Some(fhir_client(config)?) } else { None };
    let report = load_report(args, config)?;
    let pipeline = Pipeline::new(backend.as_ref(), &registry, config.engine.clone())?;
    let result = match pipeline.run(&report) {
        Ok(r) => r,
        Err(err) => {
            if let EngineError::Trial {
                partial: Some(partial), ..
            } = &err
            {
                let record = PartialRecord {
                    error: err.to_string(),
                    partial,
                };
                let path = write_artifact(&config.output_dir, "audit.partial.json", &to_json(&record)?)?;
                tracing::warn!(path = %path.display(), "run aborted; partial audit written");
            }
            return Err(err.into());
        }
    };
    let audit = pipeline.audit(&report, result);

    let pushed_document = match &client {
        Some(client) => {
            let subject = patient_ref
                .map(str::to_string)
                .or_else(|| match &report.source {
                    ReportSource::Fhir { patient_ref, .. } => patient_ref.clone(),
                    _ => None,
                })
                .ok_or_else(|| anyhow!("--push needs --patient-ref when the report has no FHIR subject"))?;
            let source_id = match &report.source {
                ReportSource::Fhir { report_id, .. } => Some(report_id.as_str()),
                _ => None,
            };
            let r = &audit.result;
            Some(client.push_letter(&subject, &r.best_letter, &r.best_score, source_id)?)
        }
        None => None,
    };

    let record = to_json(&RunRecord {
        audit: &audit,
        pushed_document: pushed_document.clone(),
    })?;
    let r = &audit.result;
    let letter_path = write_artifact(&config.output_dir, "letter.txt", &with_newline(&r.best_letter.body))?;
    let audit_path = write_artifact(&config.output_dir, "audit.json", &record)?;
    if json {
        write!(out, "{record}")?;
        return Ok(());
    }
    score_lines(out, &r.best_score)?;
    writeln!(
        out,
        "trials       {} ({:?}), best from trial {}",
        r.trials.len(),
        r.stopped_reason,
        r.best_letter.trial_index
    )?;
    writeln!(out, "letter       {}", letter_path.display())?;
    writeln!(out, "audit        {}", audit_path.display())?;
    if let Some(id) = pushed_document {
        writeln!(out, "pushed       DocumentReference/{id}")?;
    }
    Ok(())
}

/// Reads `<id>.txt` reports (sorted by id) and their companion scripts.
pub fn load_corpus(dir: &Path, config: &RunConfig) -> Result<Vec<CorpusItem>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading corpus {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"));
    paths.sort();
    let mut items = Vec::with_capacity(paths.len());
    for path in paths {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("bad report file name {}", path.display()))?
            .to_string();
        let report = MedicalReport::new(
            read_text(&path)?,
            ReportSource::File {
                path: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            },
        )
        .with_context(|| format!("report {}", path.display()))?;
        let backend: Box<dyn LlmBackend> = match &config.gateway {
            Gateway::Scripted(_) => {
                let script = dir.join(format!("{id}{SCRIPT_SUFFIX}"));
                Box::new(ScriptedBackend::load(&script).with_context(|| format!("report {id}"))?)
            }
            Gateway::Live(http) => Box::new(ChatCompletionsBackend::new(http.clone())?),
        };
        items.push(CorpusItem { id, report, backend });
    }
    Ok(items)
}

pub fn cmd_eval(corpus: &Path, config: &RunConfig, json: bool, out: &mut dyn Write) -> Result<EvalSummary> {
    let registry = load_registry(config)?;
    let items = load_corpus(corpus, config)?;
    let summary = evaluate_corpus(&items, &registry, &config.engine)?;
    let table = render_table(&summary);
    let record = to_json(&summary)?;
    write_artifact(&config.output_dir, "eval.json", &record)?;
    write_artifact(&config.output_dir, "eval.txt", &table)?;
    if json {
        write!(out, "{record}")?;
    } else {
        write!(out, "{table}")?;
    }
    Ok(summary)
}

#[cfg(feature = "stub-server")]
fn cmd_serve_stub(seed: &[PathBuf], out: &mut dyn Write) -> Result<()> {
    use radletter_core::fhir::stub::StubFhirServer;
    use serde_json::json;

    let server = StubFhirServer::start()?;
    for path in seed {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("bad seed file name {}", path.display()))?;
        let resource = json!({
            "status": "final",
            "subject": { "reference": format!("Patient/{id}") },
            "conclusion": read_text(path)?,
        });
        server.insert("DiagnosticReport", id, resource);
        writeln!(out, "seeded DiagnosticReport/{id}")?;
    }
    writeln!(out, "FHIR stub listening at {}", server.base_url())?;
    out.flush()?;
    loop {
        std::thread::park();
    }
}
