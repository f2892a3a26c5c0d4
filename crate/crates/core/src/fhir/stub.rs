//! Minimal in-memory FHIR server for tests and offline demos.
//!
//! Supports `GET {base}/{type}/{id}` and `POST {base}/{type}` only.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

#[derive(Default)]
struct State {
    resources: BTreeMap<(String, String), Value>,
    next_id: u64,
    reject_with: Option<String>,
    required_token: Option<String>,
    log: Vec<(String, String)>,
}

pub struct StubFhirServer {
    server: Arc<Server>,
    addr: SocketAddr,
    state: Arc<Mutex<State>>,
    worker: Option<JoinHandle<()>>,
}

impl StubFhirServer {
    pub fn start() -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub server has no IP address"))?;
        let server = Arc::new(server);
        let state = Arc::new(Mutex::new(State::default()));
        let worker = {
            let server = Arc::clone(&server);
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    handle(request, &state);
                }
            })
        };
        Ok(Self {
            server,
            addr,
            state,
            worker: Some(worker),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/fhir", self.addr)
    }

    pub fn insert(&self, resource_type: &str, id: &str, mut resource: Value) {
        resource["resourceType"] = json!(resource_type);
        resource["id"] = json!(id);
        self.lock()
            .resources
            .insert((resource_type.to_string(), id.to_string()), resource);
    }

    pub fn get(&self, resource_type: &str, id: &str) -> Option<Value> {
        self.lock()
            .resources
            .get(&(resource_type.to_string(), id.to_string()))
            .cloned()
    }

    /// Makes every POST fail with HTTP 422 and this diagnostic.
    pub fn reject_posts(&self, diagnostic: impl Into<String>) {
        self.lock().reject_with = Some(diagnostic.into());
    }

    pub fn require_token(&self, token: impl Into<String>) {
        self.lock().required_token = Some(token.into());
    }

    /// `(method, path)` of every request received.
    pub fn requests(&self) -> Vec<(String, String)> {
        self.lock().log.clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("stub state poisoned")
    }
}

impl Drop for StubFhirServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

fn outcome(status: u16, diagnostics: &str) -> (u16, Value, Option<String>) {
    (
        status,
        json!({
            "resourceType": "OperationOutcome",
            "issue": [{ "severity": "error", "code": "processing", "diagnostics": diagnostics }]
        }),
        None,
    )
}

fn handle(mut request: Request, state: &Mutex<State>) {
    let method = request.method().clone();
    let path = request.url().split('?').next().unwrap_or_default().to_string();
    let auth = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.as_str().to_string());
    let mut body = String::new();
    let read_ok = request.as_reader().read_to_string(&mut body).is_ok();

    let (status, value, location) = {
        let mut st = state.lock().expect("stub state poisoned");
        st.log.push((method.to_string(), path.clone()));
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        let authorized = st
            .required_token
            .as_ref()
            .is_none_or(|t| auth.as_deref() == Some(format!("Bearer {t}").as_str()));
        if !authorized {
            outcome(401, "missing or invalid bearer token")
        } else {
            match (&method, segments.as_slice()) {
                (Method::Get, ["fhir", rtype, id]) => {
                    match st.resources.get(&(rtype.to_string(), id.to_string())) {
                        Some(v) => (200, v.clone(), None),
                        None => outcome(404, &format!("{rtype}/{id} not found")),
                    }
                }
                (Method::Post, ["fhir", rtype]) => {
                    if let Some(reason) = st.reject_with.clone() {
                        outcome(422, &reason)
                    } else {
                        match serde_json::from_str::<Value>(&body) {
                            Ok(mut v) if read_ok && v.get("resourceType").and_then(Value::as_str) == Some(*rtype) => {
                                st.next_id += 1;
                                let id = st.next_id.to_string();
                                v["id"] = json!(id);
                                v["meta"] = json!({ "versionId": "1" });
                                st.resources.insert((rtype.to_string(), id.clone()), v.clone());
                                (201, v, Some(format!("{rtype}/{id}/_history/1")))
                            }
                            _ => outcome(400, "body is not a matching FHIR resource"),
                        }
                    }
                }
                _ => outcome(404, "unsupported interaction"),
            }
        }
    };

    let mut response = Response::from_string(value.to_string())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", super::FHIR_JSON).expect("static header"));
    if let Some(loc) = location {
        response = response.with_header(Header::from_bytes("Location", loc).expect("location header"));
    }
    let _ = request.respond(response);
}
