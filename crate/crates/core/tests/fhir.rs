use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use radletter_core::engine::ReportSource;
use radletter_core::fhir::stub::StubFhirServer;
use radletter_core::fhir::{
    FhirClient, FhirError, FhirReportRef, FhirServerConfig, ACCURACY_EXTENSION, GRADE_EXTENSION,
    OVERALL_SCORE_EXTENSION,
};
use radletter_core::llm::{format_generation, ScriptedBackend};
use radletter_core::{EngineConfig, Pipeline, Registry};
use serde_json::{json, Value};

const REPORT: &str = "CT chest. Solitary 7 mm right upper lobe pulmonary nodule. Hepatic steatosis.";

fn client(server: &StubFhirServer, token: Option<&str>) -> FhirClient {
    let cfg = FhirServerConfig::new(&server.base_url(), token.map(str::to_string), Duration::from_secs(5)).unwrap();
    FhirClient::new(cfg).unwrap()
}

fn diagnostic_report(text: &str) -> Value {
    json!({
        "status": "final",
        "code": { "text": "CT chest" },
        "subject": { "reference": "Patient/p-7" },
        "presentedForm": [
            { "contentType": "application/pdf", "data": BASE64.encode(b"%PDF-1.4") },
            { "contentType": "text/plain; charset=utf-8", "data": BASE64.encode(text.as_bytes()) }
        ],
        "conclusion": "ignored when an attachment has text"
    })
}

fn script() -> ScriptedBackend {
    let mut s = ScriptedBackend::default();
    s.insert(
        "extract_codes/0",
        "R91.1 | Solitary pulmonary nodule\nK76.0 | Fatty (change of) liver, not elsewhere classified\n",
    );
    s.insert(
        "generate_letter/0",
        format_generation(
            "Dear patient,\n\nYour scan shows a small spot on one lung and some extra fat in your liver.\n\n\
             Your doctor will talk with you about next steps.",
            &[("R91.1", "Solitary pulmonary nodule"), ("K76.0", "Fatty (change of) liver, not elsewhere classified")],
        ),
    );
    s
}

#[test]
fn fetch_run_push_refetch_round_trip() {
    let server = StubFhirServer::start().unwrap();
    server.insert("DiagnosticReport", "dr-1", diagnostic_report(REPORT));
    let before = server.get("DiagnosticReport", "dr-1").unwrap();
    let fhir = client(&server, None);

    let mut reference = FhirReportRef::new("dr-1").unwrap();
    let report = fhir.fetch_report(&mut reference).unwrap();
    assert_eq!(report.body, REPORT);
    assert_eq!(reference.patient_ref.as_deref(), Some("Patient/p-7"));
    assert!(matches!(&report.source, ReportSource::Fhir { report_id, .. } if report_id == "dr-1"));
    assert_eq!(report.modality_hint.as_deref(), Some("CT"));

    let backend = script();
    let registry = Registry::bundled();
    let cfg = EngineConfig {
        max_trials: 1,
        n_candidates: 2,
        ..EngineConfig::default()
    };
    let result = Pipeline::new(&backend, &registry, cfg).unwrap().run(&report).unwrap();
    let id = fhir
        .push_letter("Patient/p-7", &result.best_letter, &result.best_score, Some("dr-1"))
        .unwrap();

    assert_eq!(fhir.fetch_letter(&id).unwrap(), result.best_letter.body);
    assert_eq!(server.get("DiagnosticReport", "dr-1").unwrap(), before);

    let doc = server.get("DocumentReference", &id).unwrap();
    assert_eq!(doc["subject"]["reference"], "Patient/p-7");
    assert_eq!(doc["context"]["related"][0]["reference"], "DiagnosticReport/dr-1");
    let ext = |url: &str| {
        doc["extension"]
            .as_array()
            .unwrap()
            .iter()
            .find(|e| e["url"] == url)
            .and_then(|e| e["valueDecimal"].as_f64())
            .unwrap()
    };
    assert_eq!(ext(OVERALL_SCORE_EXTENSION), result.best_score.overall);
    assert_eq!(ext(ACCURACY_EXTENSION), 1.0);
    assert_eq!(ext(GRADE_EXTENSION), result.best_score.grade);
}

#[test]
fn report_text_fallback_order() {
    let server = StubFhirServer::start().unwrap();
    server.insert(
        "DiagnosticReport",
        "conclusion",
        json!({ "conclusion": "Small pleural effusion.", "result": [{ "display": "unused" }] }),
    );
    server.insert(
        "DiagnosticReport",
        "results",
        json!({ "result": [{ "display": "Pleural effusion" }, { "display": "Cardiomegaly" }] }),
    );
    server.insert("DiagnosticReport", "empty", json!({ "status": "final", "conclusion": "  " }));
    let fhir = client(&server, None);
    let fetch = |id: &str| fhir.fetch_report(&mut FhirReportRef::new(id).unwrap());

    assert_eq!(fetch("conclusion").unwrap().body, "Small pleural effusion.");
    assert_eq!(fetch("results").unwrap().body, "Pleural effusion\nCardiomegaly");
    assert!(matches!(fetch("empty"), Err(FhirError::NoExtractableText(id)) if id == "empty"));
    assert!(matches!(fetch("missing"), Err(FhirError::NotFound { .. })));
}

#[test]
fn rejected_push_surfaces_diagnostics() {
    let server = StubFhirServer::start().unwrap();
    server.insert("DiagnosticReport", "dr-1", diagnostic_report(REPORT));
    server.reject_posts("subject reference does not resolve");
    let fhir = client(&server, None);
    let report = fhir.fetch_report(&mut FhirReportRef::new("dr-1").unwrap()).unwrap();
    let backend = script();
    let registry = Registry::bundled();
    let cfg = EngineConfig {
        max_trials: 1,
        n_candidates: 1,
        ..EngineConfig::default()
    };
    let result = Pipeline::new(&backend, &registry, cfg).unwrap().run(&report).unwrap();
    let err = fhir
        .push_letter("Patient/unknown", &result.best_letter, &result.best_score, None)
        .unwrap_err();
    match err {
        FhirError::Rejected { status, diagnostics } => {
            assert_eq!(status, 422);
            assert_eq!(diagnostics, "subject reference does not resolve");
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn bearer_token_is_sent() {
    let server = StubFhirServer::start().unwrap();
    server.require_token("secret");
    server.insert("DiagnosticReport", "dr-1", diagnostic_report(REPORT));
    let mut reference = FhirReportRef::new("dr-1").unwrap();
    assert!(matches!(
        client(&server, None).fetch_report(&mut reference),
        Err(FhirError::Rejected { status: 401, .. })
    ));
    assert!(client(&server, Some("secret")).fetch_report(&mut reference).is_ok());
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn unreachable_server_and_bad_config() {
    let base = {
        let server = StubFhirServer::start().unwrap();
        server.base_url()
    };
    let cfg = FhirServerConfig::new(&base, None, Duration::from_secs(2)).unwrap();
    let fhir = FhirClient::new(cfg).unwrap();
    assert!(matches!(
        fhir.fetch_report(&mut FhirReportRef::new("dr-1").unwrap()),
        Err(FhirError::Transport(_))
    ));
    assert!(FhirServerConfig::new("ftp://example.org", None, Duration::from_secs(1)).is_err());
    assert!(FhirServerConfig::new("not a url", None, Duration::from_secs(1)).is_err());
    assert!(FhirServerConfig::new("http://example.org", None, Duration::ZERO).is_err());
    assert!(FhirReportRef::new(" ").is_err());
}
