//! Scripted stand-in for the chat, fill-mask and translation services.
//!
//! A fixture is JSON:
//!
//! ```json
//! {
//!   "require_key": null,
//!   "chat": [
//!     { "match": "follow-up rate", "responses": [ { "status": 429 }, { "content": "1. ..." } ] }
//!   ],
//!   "chat_default": { "content": "1. ..." },
//!   "fill_mask": [ { "match": "<mask>", "responses": [ { "candidates": [ { "token": "stiff", "score": 0.9 } ] } ] } ],
//!   "translate": [ { "match": "I can't breathe", "target": "de", "responses": [ { "text": "Ich kann nicht atmen" } ] } ],
//!   "translate_identity": true
//! }
//! ```
//!
//! Chat rules match a substring of the last user message, fill-mask rules a
//! substring of `text_with_mask`, translation rules a substring of `text`
//! (and the target language when given). The first matching rule answers.
//! Each rule walks through its responses in order and then keeps repeating
//! the last one. Unmatched requests get the `*_default` answer, the input
//! text back for translations when `translate_identity` is set, or a 404.
//!
//! [`MockTransport`] runs a script in-process; [`MockServer`] serves it over
//! HTTP on the loopback interface with the same wire formats as the real
//! services.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::{Candidate, HttpResponse, Transport};
use crate::error::LlmError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptedResponse {
    /// HTTP status, 200 when absent.
    pub status: Option<u16>,
    pub content: Option<String>,
    pub candidates: Option<Vec<Candidate>>,
    pub text: Option<String>,
    /// Raw body, overriding the fields above.
    pub body: Option<String>,
    pub retry_after: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub target: Option<String>,
    pub responses: Vec<ScriptedResponse>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fixture {
    /// When set, requests must carry this bearer token.
    pub require_key: Option<String>,
    pub chat: Vec<Rule>,
    pub chat_default: Option<ScriptedResponse>,
    pub fill_mask: Vec<Rule>,
    pub fill_mask_default: Option<ScriptedResponse>,
    pub translate: Vec<Rule>,
    pub translate_identity: bool,
}

impl Fixture {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Route {
    Chat,
    FillMask,
    Translate,
}

/// Call counts per service.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CallCounts {
    pub chat: u64,
    pub fill_mask: u64,
    pub translate: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.chat + self.fill_mask + self.translate
    }
}

/// The fixture plus per-rule cursors and counters.
#[derive(Debug)]
pub struct MockScript {
    fixture: Fixture,
    cursors: Mutex<Vec<Vec<usize>>>,
    counts: [AtomicU64; 3],
}

impl MockScript {
    pub fn new(fixture: Fixture) -> Self {
        let cursors = vec![
            vec![0; fixture.chat.len()],
            vec![0; fixture.fill_mask.len()],
            vec![0; fixture.translate.len()],
        ];
        MockScript {
            fixture,
            cursors: Mutex::new(cursors),
            counts: Default::default(),
        }
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            chat: self.counts[0].load(Ordering::SeqCst),
            fill_mask: self.counts[1].load(Ordering::SeqCst),
            translate: self.counts[2].load(Ordering::SeqCst),
        }
    }

    fn route(path: &str) -> Option<Route> {
        let path = path.split('?').next().unwrap_or(path);
        if path.ends_with("/chat/completions") {
            Some(Route::Chat)
        } else if path.starts_with("/fill-mask") {
            Some(Route::FillMask)
        } else if path.starts_with("/translate") {
            Some(Route::Translate)
        } else {
            None
        }
    }

    fn next(
        &self,
        route: Route,
        rules: &[Rule],
        subject: &str,
        target: Option<&str>,
    ) -> Option<ScriptedResponse> {
        let r = route as usize;
        let i = rules.iter().position(|rule| {
            subject.contains(&rule.pattern)
                && rule.target.as_deref().is_none_or(|t| Some(t) == target)
        })?;
        let mut cursors = self.cursors.lock().unwrap();
        let c = &mut cursors[r][i];
        let resp = rules[i]
            .responses
            .get(*c)
            .or(rules[i].responses.last())
            .cloned();
        *c += 1;
        resp
    }

    /// Answers one POST.
    pub fn handle(&self, path: &str, body: &Value, bearer: Option<&str>) -> HttpResponse {
        let Some(route) = Self::route(path) else {
            return plain(404, "unknown route");
        };
        self.counts[route as usize].fetch_add(1, Ordering::SeqCst);
        if let Some(k) = &self.fixture.require_key {
            if bearer != Some(k.as_str()) {
                return plain(401, "bad key");
            }
        }
        let f = &self.fixture;
        let scripted = match route {
            Route::Chat => {
                let last_user = body["messages"]
                    .as_array()
                    .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
                    .and_then(|m| m["content"].as_str())
                    .unwrap_or("");
                self.next(route, &f.chat, last_user, None)
                    .or_else(|| f.chat_default.clone())
            }
            Route::FillMask => {
                let text = body["text_with_mask"].as_str().unwrap_or("");
                self.next(route, &f.fill_mask, text, None)
                    .or_else(|| f.fill_mask_default.clone())
            }
            Route::Translate => {
                let text = body["text"].as_str().unwrap_or("");
                let target = body["target"].as_str();
                self.next(route, &f.translate, text, target).or_else(|| {
                    f.translate_identity.then(|| ScriptedResponse {
                        text: Some(text.to_string()),
                        ..ScriptedResponse::default()
                    })
                })
            }
        };
        match scripted {
            None => plain(404, "no scripted response"),
            Some(s) => render(route, s),
        }
    }
}

fn plain(status: u16, body: &str) -> HttpResponse {
    HttpResponse {
        status,
        body: json!({ "error": body }).to_string(),
        retry_after: None,
    }
}

fn render(route: Route, s: ScriptedResponse) -> HttpResponse {
    let status = s.status.unwrap_or(200);
    let body = match (s.body, status) {
        (Some(b), _) => b,
        (None, 200..=299) => match route {
            Route::Chat => json!({
                "choices": [ { "index": 0, "message": { "role": "assistant", "content": s.content.unwrap_or_default() } } ]
            })
            .to_string(),
            Route::FillMask => json!({ "candidates": s.candidates.unwrap_or_default() }).to_string(),
            Route::Translate => json!({ "text": s.text.unwrap_or_default() }).to_string(),
        },
        (None, _) => json!({ "error": format!("scripted status {status}") }).to_string(),
    };
    HttpResponse {
        status,
        body,
        retry_after: s.retry_after,
    }
}

/// In-process transport over a script; the URL's path selects the route.
#[derive(Clone, Debug)]
pub struct MockTransport {
    script: Arc<MockScript>,
}

impl MockTransport {
    pub fn new(fixture: Fixture) -> Self {
        MockTransport {
            script: Arc::new(MockScript::new(fixture)),
        }
    }

    pub fn counts(&self) -> CallCounts {
        self.script.counts()
    }
}

impl Transport for MockTransport {
    fn post_json(
        &self,
        url: &str,
        body: &Value,
        bearer: Option<&str>,
    ) -> Result<HttpResponse, LlmError> {
        let path = url
            .parse::<ureq::http::Uri>()
            .map(|u| u.path().to_string())
            .unwrap_or_else(|_| url.to_string());
        Ok(self.script.handle(&path, body, bearer))
    }
}

/// The script served over HTTP on `127.0.0.1`.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    script: Arc<MockScript>,
    port: u16,
    worker: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1:port`; port 0 picks a free one.
    pub fn start(fixture: Fixture, port: u16) -> Result<Self, LlmError> {
        let server = tiny_http::Server::http(("127.0.0.1", port))
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| LlmError::Transport("mock server has no IP address".into()))?;
        let server = Arc::new(server);
        let script = Arc::new(MockScript::new(fixture));
        let (s, sc) = (server.clone(), script.clone());
        let worker = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let mut raw = String::new();
                let _ = req.as_reader().read_to_string(&mut raw);
                let body: Value = serde_json::from_str(&raw).unwrap_or(Value::Null);
                let bearer = req
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .and_then(|h| h.value.as_str().strip_prefix("Bearer "))
                    .map(str::to_string);
                let resp = if *req.method() == tiny_http::Method::Post {
                    sc.handle(req.url(), &body, bearer.as_deref())
                } else {
                    plain(405, "POST only")
                };
                let mut out = tiny_http::Response::from_string(resp.body)
                    .with_status_code(resp.status)
                    .with_header(
                        tiny_http::Header::from_bytes("Content-Type", "application/json")
                            .expect("static header"),
                    );
                if let Some(ra) = resp.retry_after {
                    out = out.with_header(
                        tiny_http::Header::from_bytes("Retry-After", ra.to_string())
                            .expect("numeric header"),
                    );
                }
                let _ = req.respond(out);
            }
        });
        Ok(MockServer {
            server,
            script,
            port,
            worker: Some(worker),
        })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn counts(&self) -> CallCounts {
        self.script.counts()
    }

    /// Serves until the process is stopped.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Fixture {
        serde_json::from_value(json!({
            "chat": [ { "match": "breathe", "responses": [ { "status": 429 }, { "content": "1. a" } ] } ],
            "fill_mask_default": { "candidates": [ { "token": "stiff", "score": 0.9 } ] },
            "translate_identity": true
        }))
        .unwrap()
    }

    #[test]
    fn scripted_sequence_then_repeat() {
        let s = MockScript::new(fixture());
        let body = json!({ "messages": [ { "role": "user", "content": "I can't breathe" } ] });
        let codes: Vec<u16> = (0..3)
            .map(|_| s.handle("/v1/chat/completions", &body, None).status)
            .collect();
        assert_eq!(codes, vec![429, 200, 200]);
        assert_eq!(s.counts().chat, 3);
        let other = json!({ "messages": [ { "role": "user", "content": "unrelated" } ] });
        assert_eq!(s.handle("/v1/chat/completions", &other, None).status, 404);
    }

    #[test]
    fn translate_identity_and_fill_default() {
        let s = MockScript::new(fixture());
        let r = s.handle(
            "/translate",
            &json!({ "text": "hi", "source": "en", "target": "de" }),
            None,
        );
        assert_eq!(
            serde_json::from_str::<Value>(&r.body).unwrap()["text"],
            "hi"
        );
        let r = s.handle(
            "/fill-mask/bert",
            &json!({ "text_with_mask": "my <mask>" }),
            None,
        );
        assert!(r.body.contains("stiff"));
        assert_eq!(s.counts().total(), 2);
    }

    #[test]
    fn server_round_trip() {
        let srv = MockServer::start(fixture(), 0).unwrap();
        let t = super::super::client::UreqTransport::new(std::time::Duration::from_secs(5));
        let url = format!("{}/translate", srv.base_url());
        let r = t
            .post_json(
                &url,
                &json!({ "text": "x", "source": "en", "target": "de" }),
                None,
            )
            .unwrap();
        assert_eq!(r.status, 200);
        assert_eq!(srv.counts().translate, 1);
    }
}
