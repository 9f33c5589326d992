//! HttpTransport against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use genread::llm_backend::{
    BackendError, CompletionRequest, HttpConfig, HttpTransport, LlmClient, ModelRef, ResponseCache,
    RetryPolicy, Transport,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Captured {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves one scripted `(status, body)` response per connection, in order.
fn serve(
    script: Vec<(u16, String)>,
) -> (String, Arc<Mutex<Vec<Captured>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or_default()
                .to_string();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Captured {
                path,
                auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen, handle)
}

fn transport(key: Option<&str>) -> HttpTransport {
    HttpTransport::new(HttpConfig {
        api_key: key.map(str::to_string),
        ..HttpConfig::default()
    })
}

fn completion_body(text: &str) -> String {
    json!({"choices": [{"text": text, "finish_reason": "stop"}]}).to_string()
}

#[test]
fn completion_request_shape() {
    let (url, seen, h) = serve(vec![(200, completion_body(" Paris"))]);
    let model = ModelRef::http("text-model", &url);
    let req = CompletionRequest::sampled(model, "Q: capital of France?", 16, 1.0, 0.95, "s0");
    let out = transport(Some("secret")).complete(&req).unwrap();
    h.join().unwrap();
    assert_eq!(out.text, " Paris");
    let got = seen.lock().unwrap()[0].clone();
    assert_eq!(got.path, "/v1/completions");
    assert_eq!(got.auth.as_deref(), Some("Bearer secret"));
    assert_eq!(
        got.body,
        json!({
            "model": "text-model",
            "prompt": "Q: capital of France?",
            "max_tokens": 16,
            "temperature": 1.0,
            "top_p": 0.95
        })
    );
}

#[test]
fn embedding_request_shape() {
    let (url, seen, h) = serve(vec![(
        200,
        json!({"data": [{"embedding": [0.5, -0.25, 1.0]}]}).to_string(),
    )]);
    let v = transport(None)
        .embed("hello", &ModelRef::http("emb", &url))
        .unwrap();
    h.join().unwrap();
    assert_eq!(v, vec![0.5, -0.25, 1.0]);
    let got = seen.lock().unwrap()[0].clone();
    assert_eq!(got.path, "/v1/embeddings");
    assert_eq!(got.auth, None);
    assert_eq!(got.body, json!({"model": "emb", "input": "hello"}));
}

#[test]
fn status_codes_map_to_errors() {
    let (url, _, h) = serve(vec![
        (429, "{}".into()),
        (503, "down".into()),
        (400, "bad prompt".into()),
        (200, "not json".into()),
    ]);
    let t = transport(None);
    let req = CompletionRequest::greedy(ModelRef::http("m", &url), "p", 4);
    assert!(matches!(
        t.complete(&req),
        Err(BackendError::RateLimited { .. })
    ));
    assert!(matches!(t.complete(&req), Err(BackendError::Transport(_))));
    match t.complete(&req) {
        Err(BackendError::Rejected { status, body }) => {
            assert_eq!(status, 400);
            assert_eq!(body, "bad prompt");
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    assert!(matches!(
        t.complete(&req),
        Err(BackendError::MalformedResponse(_))
    ));
    h.join().unwrap();
}

#[test]
fn client_retries_rate_limits_then_caches() {
    let (url, seen, h) = serve(vec![
        (429, "{}".into()),
        (500, "oops".into()),
        (200, completion_body("ok")),
    ]);
    let client = LlmClient::new(Arc::new(transport(None)), ResponseCache::ephemeral())
        .with_retry(RetryPolicy::immediate());
    let req = CompletionRequest::greedy(ModelRef::http("m", &url), "prompt", 8);
    assert_eq!(client.complete(&req).unwrap().text, "ok");
    h.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 3);
    let again = client.complete(&req).unwrap();
    assert!(again.cached);
    assert_eq!(client.stats().network_calls(), 3);
    assert_eq!(client.stats().retries(), 2);
}

#[test]
fn rejection_is_not_retried() {
    let (url, seen, h) = serve(vec![(401, "no key".into())]);
    let client = LlmClient::new(Arc::new(transport(None)), ResponseCache::ephemeral())
        .with_retry(RetryPolicy::immediate());
    let req = CompletionRequest::greedy(ModelRef::http("m", &url), "prompt", 8);
    assert!(matches!(
        client.complete(&req),
        Err(BackendError::Rejected { status: 401, .. })
    ));
    h.join().unwrap();
    assert_eq!(seen.lock().unwrap().len(), 1);
}
