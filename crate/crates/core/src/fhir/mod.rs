//! FHIR R4 (JSON) pull and push.
//!
//! Reports are read from `GET {base}/DiagnosticReport/{id}`; letters are
//! written as new `DocumentReference` resources with `POST
//! {base}/DocumentReference`, leaving the source report untouched.

#[cfg(feature = "stub-server")]
pub mod stub;

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::engine::{CandidateLetter, MedicalReport, ReportSource};
use crate::scoring::LetterScore;

pub const FHIR_JSON: &str = "application/fhir+json";
pub const OVERALL_SCORE_EXTENSION: &str = "urn:radletter:fhir:extension:overall-score";
pub const ACCURACY_EXTENSION: &str = "urn:radletter:fhir:extension:icd10-accuracy";
pub const GRADE_EXTENSION: &str = "urn:radletter:fhir:extension:fk-grade";

#[derive(Debug, Error)]
pub enum FhirError {
    #[error("invalid FHIR config: {0}")]
    Config(String),
    #[error("FHIR transport error: {0}")]
    Transport(String),
    #[error("{resource} not found on FHIR server")]
    NotFound { resource: String },
    #[error("FHIR server rejected request (HTTP {status}): {diagnostics}")]
    Rejected { status: u16, diagnostics: String },
    #[error("malformed FHIR resource: {0}")]
    Malformed(String),
    #[error("DiagnosticReport {0} has no extractable text")]
    NoExtractableText(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhirServerConfig {
    base_url: String,
    #[serde(skip_serializing)]
    auth_token: Option<String>,
    timeout: Duration,
}

impl FhirServerConfig {
    pub fn new(base_url: &str, auth_token: Option<String>, timeout: Duration) -> Result<Self, FhirError> {
        let parsed = reqwest::Url::parse(base_url).map_err(|e| FhirError::Config(format!("{base_url}: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(FhirError::Config(format!("{base_url}: scheme must be http or https")));
        }
        if timeout.is_zero() {
            return Err(FhirError::Config("timeout must be positive".into()));
        }
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            auth_token,
            timeout,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FhirReportRef {
    pub id: String,
    /// Filled from the report's `subject` after a fetch.
    pub patient_ref: Option<String>,
}

impl FhirReportRef {
    pub const RESOURCE_TYPE: &'static str = "DiagnosticReport";

    pub fn new(id: impl Into<String>) -> Result<Self, FhirError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(FhirError::Config("report id is empty".into()));
        }
        Ok(Self { id, patient_ref: None })
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DiagnosticReport {
    resource_type: Option<String>,
    #[serde(default)]
    presented_form: Vec<Attachment>,
    conclusion: Option<String>,
    #[serde(default)]
    result: Vec<Reference>,
    subject: Option<Reference>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Attachment {
    content_type: Option<String>,
    data: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Reference {
    reference: Option<String>,
    display: Option<String>,
}

fn non_blank(s: &Option<String>) -> Option<&str> {
    s.as_deref().filter(|t| !t.trim().is_empty())
}

impl DiagnosticReport {
    fn text(&self) -> Result<Option<String>, FhirError> {
        for attachment in &self.presented_form {
            let is_text = attachment
                .content_type
                .as_deref()
                .is_none_or(|ct| ct.trim().to_ascii_lowercase().starts_with("text/"));
            let Some(data) = attachment.data.as_deref().filter(|_| is_text) else {
                continue;
            };
            let bytes = BASE64
                .decode(data.trim())
                .map_err(|e| FhirError::Malformed(format!("presentedForm data: {e}")))?;
            let text = String::from_utf8(bytes)
                .map_err(|e| FhirError::Malformed(format!("presentedForm is not UTF-8: {e}")))?;
            if !text.trim().is_empty() {
                return Ok(Some(text));
            }
        }
        if let Some(conclusion) = non_blank(&self.conclusion) {
            return Ok(Some(conclusion.to_string()));
        }
        let displays: Vec<&str> = self.result.iter().filter_map(|r| non_blank(&r.display)).collect();
        Ok((!displays.is_empty()).then(|| displays.join("\n")))
    }
}

pub struct FhirClient {
    config: FhirServerConfig,
    http: reqwest::blocking::Client,
}

impl FhirClient {
    pub fn new(config: FhirServerConfig) -> Result<Self, FhirError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| FhirError::Transport(e.to_string()))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &FhirServerConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url, path)
    }

    fn authorize(&self, req: reqwest::blocking::RequestBuilder) -> reqwest::blocking::RequestBuilder {
        let req = req.header(reqwest::header::ACCEPT, FHIR_JSON);
        match &self.config.auth_token {
            Some(token) => req.bearer_auth(token),
            None => req,
        }
    }

    /// GETs a resource as raw JSON.
    pub fn read(&self, resource_type: &str, id: &str) -> Result<Value, FhirError> {
        let path = format!("{resource_type}/{id}");
        let response = self
            .authorize(self.http.get(self.url(&path)))
            .send()
            .map_err(|e| FhirError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| FhirError::Transport(e.to_string()))?;
        if status == 404 {
            return Err(FhirError::NotFound { resource: path });
        }
        if !(200..300).contains(&status) {
            return Err(FhirError::Rejected {
                status,
                diagnostics: diagnostics(&body),
            });
        }
        serde_json::from_str(&body).map_err(|e| FhirError::Malformed(e.to_string()))
    }

    /// Pulls a DiagnosticReport. Text comes from the first text attachment in
    /// `presentedForm`, else `conclusion`, else the `result` displays.
    pub fn fetch_report(&self, report: &mut FhirReportRef) -> Result<MedicalReport, FhirError> {
        let value = self.read(FhirReportRef::RESOURCE_TYPE, &report.id)?;
        let parsed: DiagnosticReport =
            serde_json::from_value(value).map_err(|e| FhirError::Malformed(e.to_string()))?;
        if parsed.resource_type.as_deref() != Some(FhirReportRef::RESOURCE_TYPE) {
            return Err(FhirError::Malformed(format!(
                "expected DiagnosticReport, got {:?}",
                parsed.resource_type
            )));
        }
        let body = parsed
            .text()?
            .ok_or_else(|| FhirError::NoExtractableText(report.id.clone()))?;
        report.patient_ref = parsed.subject.and_then(|s| s.reference);
        let source = ReportSource::Fhir {
            server: self.config.base_url.clone(),
            report_id: report.id.clone(),
            patient_ref: report.patient_ref.clone(),
        };
        MedicalReport::new(body, source).map_err(|_| FhirError::NoExtractableText(report.id.clone()))
    }

    /// POSTs the letter as a DocumentReference and returns the server id.
    pub fn push_letter(
        &self,
        patient_ref: &str,
        letter: &CandidateLetter,
        score: &LetterScore,
        source_report: Option<&str>,
    ) -> Result<String, FhirError> {
        let resource = document_reference(patient_ref, letter, score, source_report);
        let response = self
            .authorize(self.http.post(self.url("DocumentReference")))
            .header(reqwest::header::CONTENT_TYPE, FHIR_JSON)
            .body(resource.to_string())
            .send()
            .map_err(|e| FhirError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let location = response
            .headers()
            .get(reqwest::header::LOCATION)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = response.text().map_err(|e| FhirError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(FhirError::Rejected {
                status,
                diagnostics: diagnostics(&body),
            });
        }
        let from_body = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v.get("id").and_then(Value::as_str).map(str::to_string));
        from_body
            .or_else(|| location.as_deref().and_then(id_from_location))
            .ok_or_else(|| FhirError::Malformed("server returned no resource id".into()))
    }

    /// Reads back the plain-text letter of a DocumentReference.
    pub fn fetch_letter(&self, document_id: &str) -> Result<String, FhirError> {
        let value = self.read("DocumentReference", document_id)?;
        let data = value
            .pointer("/content/0/attachment/data")
            .and_then(Value::as_str)
            .ok_or_else(|| FhirError::Malformed("DocumentReference has no attachment data".into()))?;
        let bytes = BASE64
            .decode(data)
            .map_err(|e| FhirError::Malformed(format!("attachment data: {e}")))?;
        String::from_utf8(bytes).map_err(|e| FhirError::Malformed(e.to_string()))
    }
}

/// Builds the DocumentReference posted for a finished letter.
pub fn document_reference(
    patient_ref: &str,
    letter: &CandidateLetter,
    score: &LetterScore,
    source_report: Option<&str>,
) -> Value {
    let mut resource = json!({
        "resourceType": "DocumentReference",
        "status": "current",
        "docStatus": "final",
        "type": { "text": "Patient-friendly radiology report letter" },
        "subject": { "reference": patient_ref },
        "description": "Patient-friendly version of a radiology report",
        "content": [{
            "attachment": {
                "contentType": "text/plain; charset=utf-8",
                "language": "en",
                "data": BASE64.encode(letter.body.as_bytes()),
                "title": "Patient letter"
            }
        }],
        "extension": [
            { "url": OVERALL_SCORE_EXTENSION, "valueDecimal": score.overall },
            { "url": ACCURACY_EXTENSION, "valueDecimal": score.accuracy },
            { "url": GRADE_EXTENSION, "valueDecimal": score.grade }
        ]
    });
    if let Some(id) = source_report {
        resource["context"] = json!({ "related": [{ "reference": format!("DiagnosticReport/{id}") }] });
    }
    resource
}

fn id_from_location(location: &str) -> Option<String> {
    let path = location.split("/_history").next()?;
    let id = path.rsplit('/').next()?;
    (!id.is_empty()).then(|| id.to_string())
}

/// Joins OperationOutcome diagnostics, falling back to the raw body.
fn diagnostics(body: &str) -> String {
    let joined = serde_json::from_str::<Value>(body).ok().and_then(|v| {
        let issues = v.get("issue")?.as_array()?;
        let texts: Vec<&str> = issues
            .iter()
            .filter_map(|i| i.get("diagnostics").and_then(Value::as_str))
            .collect();
        (!texts.is_empty()).then(|| texts.join("; "))
    });
    joined.unwrap_or_else(|| body.trim().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(json: Value) -> DiagnosticReport {
        serde_json::from_value(json).unwrap()
    }

    #[test]
    fn text_priority_order() {
        let r = report(json!({
            "resourceType": "DiagnosticReport",
            "presentedForm": [
                { "contentType": "application/pdf", "data": BASE64.encode("pdf") },
                { "contentType": "text/plain", "data": BASE64.encode("Findings: none.") }
            ],
            "conclusion": "ignored"
        }));
        assert_eq!(r.text().unwrap().as_deref(), Some("Findings: none."));

        let r = report(json!({ "resourceType": "DiagnosticReport", "conclusion": "Normal study." }));
        assert_eq!(r.text().unwrap().as_deref(), Some("Normal study."));

        let r = report(json!({
            "resourceType": "DiagnosticReport",
            "result": [{ "display": "Nodule 4 mm" }, { "reference": "Observation/1" }, { "display": "No effusion" }]
        }));
        assert_eq!(r.text().unwrap().as_deref(), Some("Nodule 4 mm\nNo effusion"));

        let r = report(json!({ "resourceType": "DiagnosticReport" }));
        assert_eq!(r.text().unwrap(), None);
    }

    #[test]
    fn location_ids() {
        assert_eq!(
            id_from_location("http://x/fhir/DocumentReference/abc/_history/1").as_deref(),
            Some("abc")
        );
        assert_eq!(id_from_location("DocumentReference/42").as_deref(), Some("42"));
    }

    #[test]
    fn operation_outcome_diagnostics() {
        let body = r#"{"resourceType":"OperationOutcome","issue":[{"severity":"error","diagnostics":"bad subject"}]}"#;
        assert_eq!(diagnostics(body), "bad subject");
        assert_eq!(diagnostics("plain failure\n"), "plain failure");
    }

    #[test]
    fn config_validation() {
        assert!(FhirServerConfig::new("not a url", None, Duration::from_secs(1)).is_err());
        assert!(FhirServerConfig::new("ftp://x", None, Duration::from_secs(1)).is_err());
        assert!(FhirServerConfig::new("http://x/fhir", None, Duration::ZERO).is_err());
        let c = FhirServerConfig::new("http://x/fhir/", None, Duration::from_secs(1)).unwrap();
        assert_eq!(c.base_url(), "http://x/fhir");
        assert!(FhirReportRef::new(" ").is_err());
    }
}
