mod support;

use std::time::{Duration, Instant};

use autohall::backend::{CachedBackend, HttpBackend, ResponseCache, RetryPolicy};
use autohall::{BackendError, ChatBackend, ChatRequest, GenerationParams, Purpose};
use support::stub::{Stub, StubResponse};

fn request(prompt: &str) -> ChatRequest {
    ChatRequest::new(
        prompt,
        GenerationParams {
            model_id: "stub-model".into(),
            temperature: 0.1,
            prompt_template_id: "gen.v1".into(),
            sample_index: 0,
        },
        Purpose::Generation,
    )
}

fn fast_retry(max_attempts: u32) -> RetryPolicy {
    RetryPolicy { max_attempts, base_backoff_ms: 5 }
}

fn client(stub: &Stub, retry: RetryPolicy, concurrency: usize) -> HttpBackend {
    HttpBackend::new(stub.url(), Some("secret".into()), retry, concurrency, Duration::from_secs(10))
}

#[test]
fn sends_chat_request_and_reads_first_choice() {
    let stub = Stub::start(|req| {
        assert_eq!(req.header("authorization"), Some("Bearer secret"));
        StubResponse::reply(&format!("echo: {}", req.prompt()))
    });
    let backend = client(&stub, fast_retry(1), 1);
    assert_eq!(backend.complete(&request("hello")).unwrap(), "echo: hello");
    let body = &stub.bodies()[0];
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["temperature"], 0.1);
    assert_eq!(body["messages"][0]["role"], "user");
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let stub = Stub::start(|req| if req.seq <= 2 { StubResponse::status(429) } else { StubResponse::reply("ok") });
    let backend = client(&stub, fast_retry(5), 1);
    assert_eq!(backend.complete(&request("p")).unwrap(), "ok");
    assert_eq!(stub.calls(), 3);
}

#[test]
fn honors_retry_after() {
    let stub = Stub::start(|req| {
        if req.seq == 1 {
            StubResponse::status(503).with_header("Retry-After", "0.3")
        } else {
            StubResponse::reply("ok")
        }
    });
    let backend = client(&stub, fast_retry(3), 1);
    let start = Instant::now();
    backend.complete(&request("p")).unwrap();
    assert!(start.elapsed() >= Duration::from_millis(300));
    assert_eq!(stub.calls(), 2);
}

#[test]
fn exhausted_retries_report_rate_limit() {
    let stub = Stub::start(|_| StubResponse::status(429));
    let backend = client(&stub, fast_retry(3), 1);
    assert!(matches!(backend.complete(&request("p")), Err(BackendError::RateLimited { .. })));
    assert_eq!(stub.calls(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub::start(|_| StubResponse::status(401));
    let backend = client(&stub, fast_retry(5), 1);
    assert!(matches!(backend.complete(&request("p")), Err(BackendError::Transport { attempts: 1, .. })));
    assert_eq!(stub.calls(), 1);
}

#[test]
fn concurrency_bound_holds() {
    let stub = Stub::start(|req| {
        std::thread::sleep(Duration::from_millis(40));
        StubResponse::reply(req.prompt())
    });
    let backend = client(&stub, fast_retry(1), 3);
    std::thread::scope(|s| {
        for i in 0..12 {
            let backend = &backend;
            s.spawn(move || assert_eq!(backend.complete(&request(&format!("p{i}"))).unwrap(), format!("p{i}")));
        }
    });
    assert_eq!(stub.calls(), 12);
    assert!(stub.max_in_flight() <= 3, "saw {}", stub.max_in_flight());
    assert!(stub.max_in_flight() >= 2);
}

#[test]
fn warm_cache_issues_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let stub = Stub::start(|req| StubResponse::reply(&format!("r:{}", req.prompt())));
    let prompts: Vec<String> = (0..5).map(|i| format!("prompt {i}")).collect();

    let cold = CachedBackend::new(client(&stub, fast_retry(1), 2), ResponseCache::open(dir.path()).unwrap());
    let first: Vec<String> = prompts.iter().map(|p| cold.complete(&request(p)).unwrap()).collect();
    assert_eq!(stub.calls(), 5);

    let warm = CachedBackend::new(client(&stub, fast_retry(1), 2), ResponseCache::open(dir.path()).unwrap());
    let second: Vec<String> = prompts.iter().map(|p| warm.complete(&request(p)).unwrap()).collect();
    assert_eq!(first, second);
    assert_eq!(stub.calls(), 5);
    assert_eq!(warm.stats().hits, 5);
}
