use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use sotana::backend::{HttpBackend, RetryPolicy, Retrying};
use sotana_core::dataforge::{BackendError, CompletionBackend, CompletionRequest};

#[derive(Default)]
struct Log {
    bodies: Vec<Value>,
    /// Status codes to return before answering normally.
    failures: Vec<u16>,
}

type Shared = Arc<Mutex<Log>>;

async fn completions(State(log): State<Shared>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let mut log = log.lock().unwrap();
    log.bodies.push(body.clone());
    if !log.failures.is_empty() {
        let code = log.failures.remove(0);
        return (StatusCode::from_u16(code).unwrap(), Json(json!({"error": "nope"})));
    }
    let text = format!("echo:{}", body["prompt"].as_str().unwrap_or_default());
    (StatusCode::OK, Json(json!({"choices": [{"text": text, "index": 0}]})))
}

/// Serves a fake completions endpoint on a background runtime.
fn serve(failures: Vec<u16>) -> (SocketAddr, Shared) {
    let log: Shared = Arc::new(Mutex::new(Log { failures, ..Log::default() }));
    let app = Router::new().route("/v1/completions", post(completions)).with_state(log.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (rx.recv().unwrap(), log)
}

fn req(p: &str) -> CompletionRequest {
    CompletionRequest { prompt: p.into(), temperature: 0.7, max_tokens: 321 }
}

#[test]
fn request_body_follows_the_completions_api() {
    let (addr, log) = serve(vec![]);
    let mut b = HttpBackend::new(&format!("http://{addr}/"), "test-model", Duration::from_secs(5));
    assert_eq!(b.complete(&req("hello")).unwrap(), "echo:hello");
    let body = log.lock().unwrap().bodies[0].clone();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["prompt"], "hello");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["max_tokens"], 321);
    assert_eq!(body["n"], 1);
    assert!(body["stop"].is_array());
}

#[test]
fn batches_keep_request_order() {
    let (addr, _) = serve(vec![]);
    let mut b = HttpBackend::new(&format!("http://{addr}"), "m", Duration::from_secs(5));
    let reqs: Vec<_> = (0..4).map(|i| req(&format!("p{i}"))).collect();
    let got: Vec<String> = b.complete_batch(&reqs).into_iter().map(Result::unwrap).collect();
    assert_eq!(got, ["echo:p0", "echo:p1", "echo:p2", "echo:p3"]);
}

#[test]
fn server_errors_are_retried_with_backoff() {
    let (addr, log) = serve(vec![500, 429]);
    let waits = Arc::new(Mutex::new(Vec::new()));
    let w = waits.clone();
    let policy = RetryPolicy { retries: 3, initial_backoff: Duration::from_millis(100) };
    let mut b = Retrying::new(HttpBackend::new(&format!("http://{addr}"), "m", Duration::from_secs(5)), policy)
        .with_sleeper(move |d| w.lock().unwrap().push(d));
    assert_eq!(b.complete(&req("x")).unwrap(), "echo:x");
    assert_eq!(log.lock().unwrap().bodies.len(), 3);
    assert_eq!(*waits.lock().unwrap(), [Duration::from_millis(100), Duration::from_millis(200)]);
}

#[test]
fn client_errors_are_not_retried() {
    let (addr, log) = serve(vec![400]);
    let mut b = Retrying::new(HttpBackend::new(&format!("http://{addr}"), "m", Duration::from_secs(5)), RetryPolicy::default())
        .with_sleeper(|_| panic!("must not sleep"));
    assert!(matches!(b.complete(&req("x")), Err(BackendError::Protocol(_))));
    assert_eq!(log.lock().unwrap().bodies.len(), 1);
}

#[test]
fn persistent_failure_exhausts_retries() {
    let (addr, log) = serve(vec![503; 10]);
    let policy = RetryPolicy { retries: 2, initial_backoff: Duration::from_millis(1) };
    let mut b = Retrying::new(HttpBackend::new(&format!("http://{addr}"), "m", Duration::from_secs(5)), policy)
        .with_sleeper(|_| {});
    assert!(matches!(b.complete(&req("x")), Err(BackendError::RetriesExhausted { attempts: 3, .. })));
    assert_eq!(log.lock().unwrap().bodies.len(), 3);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut b = HttpBackend::new(&format!("http://{addr}"), "m", Duration::from_secs(2));
    assert!(matches!(b.complete(&req("x")), Err(BackendError::Transport(_))));
}
