//! HTTP engine tests against a local scripted server: wire shape, retry on
//! transient statuses, fatal client errors, and protocol validation.

use ctxsynth::{ChatRequest, EngineClient, EngineError, EngineSpec, RetryPolicy};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

/// One scripted (status, body) response per expected request. Connections
/// are closed after each response so every attempt arrives separately.
struct Server {
    endpoint: String,
    requests: Arc<Mutex<Vec<String>>>,
    handle: JoinHandle<()>,
}

impl Server {
    fn start(script: Vec<(u16, String)>) -> Server {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            for (status, body) in script {
                let (mut stream, _) = listener.accept().unwrap();
                let mut raw = Vec::new();
                let mut buf = [0u8; 4096];
                let request = loop {
                    let n = stream.read(&mut buf).unwrap();
                    raw.extend_from_slice(&buf[..n]);
                    let text = String::from_utf8_lossy(&raw).into_owned();
                    if let Some(head_end) = text.find("\r\n\r\n") {
                        let content_length = text
                            .lines()
                            .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                            .unwrap_or(0);
                        if raw.len() >= head_end + 4 + content_length {
                            break text;
                        }
                    }
                    if n == 0 {
                        break text;
                    }
                };
                seen.lock().unwrap().push(request);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        Server { endpoint, requests, handle }
    }

    fn finish(self) -> Vec<String> {
        self.handle.join().unwrap();
        Arc::try_unwrap(self.requests).unwrap().into_inner().unwrap()
    }
}

fn client(endpoint: &str, credential_env: &str, max_attempts: u32) -> EngineClient {
    let mut specs = BTreeMap::new();
    specs.insert(
        "api".to_string(),
        EngineSpec::Http {
            endpoint: endpoint.to_string(),
            model: "test-model".to_string(),
            credential_env: credential_env.to_string(),
        },
    );
    let retry = RetryPolicy { max_attempts, base_delay_ms: 1, max_delay_ms: 5 };
    EngineClient::from_specs(&specs, retry).unwrap()
}

fn ok_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn success_carries_payload_and_wire_shape() {
    let server = Server::start(vec![(200, ok_body("the reply"))]);
    std::env::set_var("CTXSYNTH_TEST_CRED_OK", "sk-local-1");
    let client = client(&server.endpoint, "CTXSYNTH_TEST_CRED_OK", 3);
    let mut req = ChatRequest::new("sys text", "user text", "api");
    req.temperature = Some(0.5);
    let response = client.complete(&req).unwrap();
    assert_eq!(response.text, "the reply");
    assert_eq!(response.attempt, 1);
    assert_eq!(response.engine_id, "api");
    assert_eq!(response.prompt_hash, req.prompt_hash());

    let requests = server.finish();
    assert_eq!(requests.len(), 1);
    let raw = &requests[0];
    assert!(raw.starts_with("POST /v1/chat/completions HTTP/1.1\r\n"));
    assert!(raw.contains("authorization: Bearer sk-local-1") || raw.contains("Authorization: Bearer sk-local-1"));
    let body: serde_json::Value = serde_json::from_str(&raw[raw.find("\r\n\r\n").unwrap() + 4..]).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "sys text");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], "user text");
    assert_eq!(body["temperature"], 0.5);
    assert!(body.get("top_p").is_none(), "unset sampling params stay off the wire");
    assert!(body.get("max_tokens").is_none());
}

#[test]
fn transient_failures_retry_until_success() {
    let server = Server::start(vec![
        (500, "{\"error\":\"boom\"}".to_string()),
        (429, "{\"error\":\"slow down\"}".to_string()),
        (200, ok_body("eventually")),
    ]);
    std::env::set_var("CTXSYNTH_TEST_CRED_RETRY", "sk-local-2");
    let client = client(&server.endpoint, "CTXSYNTH_TEST_CRED_RETRY", 3);
    let response = client.complete(&ChatRequest::new("s", "u", "api")).unwrap();
    assert_eq!(response.text, "eventually");
    assert_eq!(response.attempt, 3);
    assert_eq!(server.finish().len(), 3);
}

#[test]
fn exhausted_retries_report_attempts_and_last_error() {
    let server = Server::start(vec![
        (503, "down".to_string()),
        (503, "down".to_string()),
        (503, "still down".to_string()),
    ]);
    std::env::set_var("CTXSYNTH_TEST_CRED_DOWN", "sk-local-3");
    let client = client(&server.endpoint, "CTXSYNTH_TEST_CRED_DOWN", 3);
    let err = client.complete(&ChatRequest::new("s", "u", "api")).unwrap_err();
    match err {
        EngineError::Exhausted { engine, attempts, last } => {
            assert_eq!(engine, "api");
            assert_eq!(attempts, 3);
            assert!(last.contains("503"), "last error names the status: {last}");
        }
        other => panic!("expected Exhausted, got {other}"),
    }
    assert_eq!(server.finish().len(), 3);
}

#[test]
fn client_errors_fail_fast_without_retry() {
    let server = Server::start(vec![(400, "{\"error\":\"bad request\"}".to_string())]);
    std::env::set_var("CTXSYNTH_TEST_CRED_BAD", "sk-local-4");
    let client = client(&server.endpoint, "CTXSYNTH_TEST_CRED_BAD", 3);
    let err = client.complete(&ChatRequest::new("s", "u", "api")).unwrap_err();
    assert!(matches!(err, EngineError::Protocol { .. }), "got {err}");
    assert!(err.to_string().contains("400"));
    assert_eq!(server.finish().len(), 1, "4xx must not retry");
}

#[test]
fn malformed_success_body_is_a_protocol_error() {
    let server = Server::start(vec![(200, "{\"unexpected\": true}".to_string())]);
    std::env::set_var("CTXSYNTH_TEST_CRED_JUNK", "sk-local-5");
    let client = client(&server.endpoint, "CTXSYNTH_TEST_CRED_JUNK", 3);
    let err = client.complete(&ChatRequest::new("s", "u", "api")).unwrap_err();
    match err {
        EngineError::Protocol { message, .. } => {
            assert!(message.contains("malformed response body"), "{message}");
        }
        other => panic!("expected Protocol, got {other}"),
    }
    assert_eq!(server.finish().len(), 1);
}
