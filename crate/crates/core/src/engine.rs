//! Chat-completion engines behind one retrying client.
//!
//! Engines are configured by id: HTTP backends speak the JSON
//! chat-completions wire protocol with a bearer credential read from an
//! environment variable (never from config), and the mock backend replays
//! seeded canned responses keyed by substring match on the user prompt so
//! whole pipeline runs are reproducible offline. Batches run with bounded
//! parallelism and return responses in request order, with per-request
//! errors kept in their slot.

use crate::filler;
use crate::hash;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("engine `{0}` is not configured")]
    UnknownEngine(String),
    #[error("engine `{engine}`: credential variable `{var}` is not set")]
    MissingCredential { engine: String, var: String },
    #[error("engine `{engine}`: no mock rule matches the prompt")]
    NoMockRule { engine: String },
    #[error("engine `{engine}`: {message}")]
    Protocol { engine: String, message: String },
    #[error("engine `{engine}`: {attempts} attempt(s) failed; last error: {last}")]
    Exhausted {
        engine: String,
        attempts: u32,
        last: String,
    },
}

/// A single chat completion request. Sampling parameters left as `None` are
/// omitted from the wire request so the provider's defaults apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    pub engine_id: String,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>, engine_id: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            temperature: None,
            top_p: None,
            max_tokens: None,
            engine_id: engine_id.into(),
        }
    }

    /// Stable hash of (system, user); identical prompts always collide.
    pub fn prompt_hash(&self) -> String {
        hash::short_hash(&[self.system.as_bytes(), self.user.as_bytes()])
    }
}

/// Provider text plus enough metadata for the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub engine_id: String,
    pub prompt_hash: String,
    pub latency_ms: u64,
    /// 1-based attempt that finally succeeded.
    pub attempt: u32,
}

/// Exponential backoff schedule for transient failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 200,
            max_delay_ms: 2000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        Duration::from_millis(exp.min(self.max_delay_ms))
    }
}

/// One engine entry from the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngineSpec {
    /// JSON chat-completions endpoint; the credential is read from the named
    /// environment variable at request time.
    Http {
        endpoint: String,
        model: String,
        credential_env: String,
    },
    /// Deterministic offline engine. With no rules, the standard
    /// context/QA rules apply.
    Mock {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        rules: Vec<MockRule>,
    },
}

/// Canned behavior selected by substring match on the user prompt; the
/// first matching rule wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    #[serde(flatten)]
    pub behavior: MockBehavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum MockBehavior {
    /// Verbatim reply.
    Reply { reply: String },
    /// "Context: " plus seeded filler prose of roughly `words` words.
    Context { words: usize },
    /// "Question: ... Answer: ..." built from seeded filler.
    Qa,
    /// Simulated HTTP failure with this status code.
    Fail { status: u16 },
}

impl MockRule {
    /// The rules backing a full offline pipeline run: context synthesis
    /// prompts get a labeled context, QA synthesis prompts get a
    /// question-answer pair.
    pub fn standard() -> Vec<MockRule> {
        vec![
            MockRule {
                contains: "question-answer pair based on a context which is missing".into(),
                behavior: MockBehavior::Context { words: 120 },
            },
            MockRule {
                contains: "Write a question".into(),
                behavior: MockBehavior::Qa,
            },
        ]
    }
}

/// Classifies a failure for the retry loop.
enum Fault {
    Retry(String),
    Fatal(EngineError),
}

fn status_fault(engine: &str, status: u16, body: &str) -> Fault {
    if status == 408 || status == 429 || status >= 500 {
        Fault::Retry(format!("status {status}"))
    } else {
        Fault::Fatal(EngineError::Protocol {
            engine: engine.to_string(),
            message: format!("status {status}: {}", body.chars().take(200).collect::<String>()),
        })
    }
}

struct MockEngine {
    seed: u64,
    rules: Vec<MockRule>,
}

impl MockEngine {
    fn respond(&self, engine_id: &str, req: &ChatRequest) -> Result<String, Fault> {
        let rule = self
            .rules
            .iter()
            .find(|r| req.user.contains(&r.contains))
            .ok_or_else(|| {
                Fault::Fatal(EngineError::NoMockRule {
                    engine: engine_id.to_string(),
                })
            })?;
        // Seeded by (engine seed, prompt hash): the same request stream
        // yields byte-identical responses regardless of scheduling.
        let hash64 = u64::from_str_radix(&req.prompt_hash(), 16).unwrap_or(0);
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ hash64);
        match &rule.behavior {
            MockBehavior::Reply { reply } => Ok(reply.clone()),
            MockBehavior::Context { words } => {
                Ok(format!("Context: {}", filler::paragraph(&mut rng, *words)))
            }
            MockBehavior::Qa => {
                let q = filler::question(&mut rng, 3);
                let a = filler::sentence(&mut rng, 10);
                Ok(format!("Question: {q} Answer: {a}"))
            }
            MockBehavior::Fail { status } => Err(status_fault(engine_id, *status, "mock failure")),
        }
    }
}

struct HttpEngine {
    endpoint: String,
    model: String,
    credential_env: String,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Deserialize)]
struct WireContent {
    content: String,
}

impl HttpEngine {
    fn credential(&self, engine_id: &str) -> Result<String, EngineError> {
        std::env::var(&self.credential_env).map_err(|_| EngineError::MissingCredential {
            engine: engine_id.to_string(),
            var: self.credential_env.clone(),
        })
    }

    fn respond(&self, engine_id: &str, req: &ChatRequest) -> Result<String, Fault> {
        let credential = self.credential(engine_id).map_err(Fault::Fatal)?;
        let body = WireRequest {
            model: &self.model,
            messages: vec![
                WireMessage { role: "system", content: &req.system },
                WireMessage { role: "user", content: &req.user },
            ],
            temperature: req.temperature,
            top_p: req.top_p,
            max_tokens: req.max_tokens,
        };
        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(credential)
            .json(&body)
            .send()
            .map_err(|e| Fault::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| Fault::Retry(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(status_fault(engine_id, status, &text));
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
            Fault::Fatal(EngineError::Protocol {
                engine: engine_id.to_string(),
                message: format!("malformed response body: {e}"),
            })
        })?;
        let choice = parsed.choices.into_iter().next().ok_or_else(|| {
            Fault::Fatal(EngineError::Protocol {
                engine: engine_id.to_string(),
                message: "response has no choices".into(),
            })
        })?;
        Ok(choice.message.content)
    }
}

enum Backend {
    Http(HttpEngine),
    Mock(MockEngine),
}

impl Backend {
    fn respond(&self, engine_id: &str, req: &ChatRequest) -> Result<String, Fault> {
        match self {
            Backend::Http(h) => h.respond(engine_id, req),
            Backend::Mock(m) => m.respond(engine_id, req),
        }
    }
}

/// Routes requests to configured engines with retry and batching.
pub struct EngineClient {
    engines: BTreeMap<String, Backend>,
    retry: RetryPolicy,
}

impl EngineClient {
    pub fn from_specs(specs: &BTreeMap<String, EngineSpec>, retry: RetryPolicy) -> Result<Self, EngineError> {
        let mut engines = BTreeMap::new();
        for (id, spec) in specs {
            let backend = match spec {
                EngineSpec::Http {
                    endpoint,
                    model,
                    credential_env,
                } => {
                    let http = reqwest::blocking::Client::builder()
                        .timeout(Duration::from_secs(120))
                        .build()
                        .map_err(|e| EngineError::Protocol {
                            engine: id.clone(),
                            message: format!("failed to build HTTP client: {e}"),
                        })?;
                    Backend::Http(HttpEngine {
                        endpoint: endpoint.clone(),
                        model: model.clone(),
                        credential_env: credential_env.clone(),
                        http,
                    })
                }
                EngineSpec::Mock { seed, rules } => Backend::Mock(MockEngine {
                    seed: *seed,
                    rules: if rules.is_empty() { MockRule::standard() } else { rules.clone() },
                }),
            };
            engines.insert(id.clone(), backend);
        }
        Ok(EngineClient { engines, retry })
    }

    /// Fails fast when the engine is unknown or its credential is missing,
    /// before any request goes out.
    pub fn validate(&self, engine_id: &str) -> Result<(), EngineError> {
        match self.engines.get(engine_id) {
            None => Err(EngineError::UnknownEngine(engine_id.to_string())),
            Some(Backend::Http(h)) => h.credential(engine_id).map(|_| ()),
            Some(Backend::Mock(_)) => Ok(()),
        }
    }

    /// Completes one request, retrying transient failures with exponential
    /// backoff. Provider text is returned verbatim.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, EngineError> {
        let backend = self
            .engines
            .get(&req.engine_id)
            .ok_or_else(|| EngineError::UnknownEngine(req.engine_id.clone()))?;
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            let start = Instant::now();
            match backend.respond(&req.engine_id, req) {
                Ok(text) => {
                    let latency_ms = match backend {
                        // Mock latency is pinned to zero so audit logs are
                        // byte-identical across runs.
                        Backend::Mock(_) => 0,
                        Backend::Http(_) => start.elapsed().as_millis() as u64,
                    };
                    return Ok(ChatResponse {
                        text,
                        engine_id: req.engine_id.clone(),
                        prompt_hash: req.prompt_hash(),
                        latency_ms,
                        attempt,
                    });
                }
                Err(Fault::Fatal(e)) => return Err(e),
                Err(Fault::Retry(message)) => {
                    last = message;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(self.retry.delay(attempt));
                    }
                }
            }
        }
        Err(EngineError::Exhausted {
            engine: req.engine_id.clone(),
            attempts: self.retry.max_attempts.max(1),
            last,
        })
    }

    /// Completes a batch with at most `max_in_flight` outstanding requests.
    /// Responses come back in request order; failures stay in their slot.
    pub fn complete_batch(
        &self,
        requests: &[ChatRequest],
        max_in_flight: usize,
    ) -> Vec<Result<ChatResponse, EngineError>> {
        let workers = max_in_flight.max(1).min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let results: Mutex<Vec<Option<Result<ChatResponse, EngineError>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.complete(&requests[i]);
                    results.lock().unwrap()[i] = Some(result);
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|slot| slot.expect("every slot filled"))
            .collect()
    }
}

/// One audit log line per request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub prompt_hash: String,
    pub engine_id: String,
    pub latency_ms: u64,
    pub attempt: u32,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AuditEntry {
    pub fn from_result(req: &ChatRequest, result: &Result<ChatResponse, EngineError>) -> Self {
        match result {
            Ok(r) => AuditEntry {
                prompt_hash: r.prompt_hash.clone(),
                engine_id: r.engine_id.clone(),
                latency_ms: r.latency_ms,
                attempt: r.attempt,
                ok: true,
                error: None,
            },
            Err(e) => AuditEntry {
                prompt_hash: req.prompt_hash(),
                engine_id: req.engine_id.clone(),
                latency_ms: 0,
                attempt: match e {
                    EngineError::Exhausted { attempts, .. } => *attempts,
                    _ => 1,
                },
                ok: false,
                error: Some(e.to_string()),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_client(seed: u64, rules: Vec<MockRule>) -> EngineClient {
        let mut specs = BTreeMap::new();
        specs.insert("mock".to_string(), EngineSpec::Mock { seed, rules });
        EngineClient::from_specs(
            &specs,
            RetryPolicy {
                max_attempts: 3,
                base_delay_ms: 0,
                max_delay_ms: 0,
            },
        )
        .unwrap()
    }

    fn req(user: &str) -> ChatRequest {
        ChatRequest::new("sys", user, "mock")
    }

    #[test]
    fn prompt_hash_depends_only_on_system_and_user() {
        let a = ChatRequest::new("s", "u", "e1");
        let mut b = ChatRequest::new("s", "u", "e2");
        b.temperature = Some(0.7);
        assert_eq!(a.prompt_hash(), b.prompt_hash());
        assert_ne!(a.prompt_hash(), ChatRequest::new("s", "u2", "e1").prompt_hash());
        // Field boundary cannot be gamed.
        assert_ne!(
            ChatRequest::new("ab", "c", "e").prompt_hash(),
            ChatRequest::new("a", "bc", "e").prompt_hash()
        );
    }

    #[test]
    fn echo_rule_returns_text_verbatim() {
        let client = mock_client(
            0,
            vec![MockRule {
                contains: String::new(),
                behavior: MockBehavior::Reply { reply: "Context: X".into() },
            }],
        );
        let resp = client.complete(&req("anything at all")).unwrap();
        assert_eq!(resp.text, "Context: X");
        assert_eq!(resp.attempt, 1);
        assert_eq!(resp.latency_ms, 0);
        assert_eq!(resp.engine_id, "mock");
    }

    #[test]
    fn unknown_engine_is_a_config_error() {
        let client = mock_client(0, vec![]);
        let err = client.complete(&ChatRequest::new("s", "u", "gone")).unwrap_err();
        assert!(matches!(err, EngineError::UnknownEngine(_)));
        assert!(client.validate("gone").is_err());
        assert!(client.validate("mock").is_ok());
    }

    #[test]
    fn missing_credential_fails_before_any_request() {
        let mut specs = BTreeMap::new();
        specs.insert(
            "real".to_string(),
            EngineSpec::Http {
                // Unroutable on purpose: the error must come from the
                // credential check, not the network.
                endpoint: "http://192.0.2.1:9/v1/chat/completions".into(),
                model: "m".into(),
                credential_env: "CTXSYNTH_TEST_UNSET_CREDENTIAL".into(),
            },
        );
        let client = EngineClient::from_specs(&specs, RetryPolicy::default()).unwrap();
        let err = client.validate("real").unwrap_err();
        assert!(matches!(err, EngineError::MissingCredential { .. }), "{err}");
        let err = client.complete(&ChatRequest::new("s", "u", "real")).unwrap_err();
        assert!(matches!(err, EngineError::MissingCredential { .. }), "{err}");
    }

    #[test]
    fn batch_preserves_order_and_isolates_failures() {
        let client = mock_client(
            0,
            vec![
                MockRule {
                    contains: "boom".into(),
                    behavior: MockBehavior::Fail { status: 500 },
                },
                MockRule {
                    contains: "alpha".into(),
                    behavior: MockBehavior::Reply { reply: "A".into() },
                },
                MockRule {
                    contains: "beta".into(),
                    behavior: MockBehavior::Reply { reply: "B".into() },
                },
            ],
        );
        let requests: Vec<ChatRequest> = (0..9)
            .map(|i| match i % 3 {
                0 => req(&format!("alpha {i}")),
                1 => req(&format!("beta {i}")),
                _ => req(&format!("boom {i}")),
            })
            .collect();
        let results = client.complete_batch(&requests, 3);
        assert_eq!(results.len(), 9);
        for (i, result) in results.iter().enumerate() {
            match i % 3 {
                0 => assert_eq!(result.as_ref().unwrap().text, "A"),
                1 => assert_eq!(result.as_ref().unwrap().text, "B"),
                _ => assert!(matches!(
                    result.as_ref().unwrap_err(),
                    EngineError::Exhausted { .. }
                )),
            }
        }
    }

    #[test]
    fn retries_stop_at_max_attempts() {
        let client = mock_client(
            0,
            vec![MockRule {
                contains: String::new(),
                behavior: MockBehavior::Fail { status: 429 },
            }],
        );
        match client.complete(&req("x")).unwrap_err() {
            EngineError::Exhausted { attempts, last, .. } => {
                assert_eq!(attempts, 3);
                assert!(last.contains("429"), "{last}");
            }
            other => panic!("expected exhaustion, got {other}"),
        }
    }

    #[test]
    fn fatal_status_does_not_retry() {
        let client = mock_client(
            0,
            vec![MockRule {
                contains: String::new(),
                behavior: MockBehavior::Fail { status: 400 },
            }],
        );
        let err = client.complete(&req("x")).unwrap_err();
        assert!(matches!(err, EngineError::Protocol { .. }), "{err}");
    }

    #[test]
    fn no_matching_rule_is_an_explicit_error() {
        let client = mock_client(
            0,
            vec![MockRule {
                contains: "needle".into(),
                behavior: MockBehavior::Reply { reply: "hit".into() },
            }],
        );
        let err = client.complete(&req("unrelated")).unwrap_err();
        assert!(matches!(err, EngineError::NoMockRule { .. }));
    }

    #[test]
    fn mock_stream_is_byte_identical_under_a_seed() {
        let run = || -> Vec<String> {
            let client = mock_client(42, MockRule::standard());
            let requests = vec![
                req("first question-answer pair based on a context which is missing"),
                req("second question-answer pair based on a context which is missing"),
                req("Write a question based on this context"),
            ];
            client
                .complete_batch(&requests, 2)
                .into_iter()
                .map(|r| r.unwrap().text)
                .collect()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1], "different prompts get different filler");
        assert!(a[0].starts_with("Context: "));
        assert!(a[2].starts_with("Question: ") && a[2].contains("Answer: "));

        let other = {
            let client = mock_client(43, MockRule::standard());
            client
                .complete(&req("first question-answer pair based on a context which is missing"))
                .unwrap()
                .text
        };
        assert_ne!(a[0], other, "different engine seed, different stream");
    }

    #[test]
    fn audit_entries_cover_success_and_failure() {
        let client = mock_client(
            0,
            vec![
                MockRule {
                    contains: "ok".into(),
                    behavior: MockBehavior::Reply { reply: "fine".into() },
                },
                MockRule {
                    contains: String::new(),
                    behavior: MockBehavior::Fail { status: 429 },
                },
            ],
        );
        let good = req("ok");
        let bad = req("nope");
        let good_entry = AuditEntry::from_result(&good, &client.complete(&good));
        assert!(good_entry.ok);
        assert_eq!(good_entry.attempt, 1);
        assert_eq!(good_entry.prompt_hash, good.prompt_hash());
        let bad_entry = AuditEntry::from_result(&bad, &client.complete(&bad));
        assert!(!bad_entry.ok);
        assert_eq!(bad_entry.attempt, 3);
        assert!(bad_entry.error.as_deref().unwrap_or("").contains("429"));
    }
}
