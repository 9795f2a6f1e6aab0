use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rerank_core::toxicity::{RemoteConfig, RemoteScorer, ScoreError};

/// Serves `responses` in order, one connection each, then stops. Returns the
/// endpoint and a counter of requests seen.
fn mock_server(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/score", listener.local_addr().unwrap());
    let seen = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut request = vec![0; length];
            let _ = reader.read_exact(&mut request);
            counter.fetch_add(1, Ordering::SeqCst);
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            let mut stream = reader.into_inner();
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, seen)
}

fn scorer(url: String, attempts: usize) -> RemoteScorer {
    RemoteScorer::new(RemoteConfig {
        timeout: Duration::from_secs(5),
        max_attempts: attempts,
        initial_backoff: Duration::from_millis(1),
        requests_per_second: None,
        ..RemoteConfig::new(url)
    })
}

#[test]
fn returns_score_from_endpoint() {
    let (url, seen) = mock_server(vec![(200, r#"{"score": 0.42}"#.into())]);
    let score = scorer(url, 1).score_text("hello there").unwrap();
    assert_eq!(score.value(), 0.42);
    assert_eq!(seen.load(Ordering::SeqCst), 1);
}

#[test]
fn rejects_out_of_range_score() {
    let (url, _) = mock_server(vec![(200, r#"{"score": 1.7}"#.into())]);
    let err = scorer(url, 3).score_text("x").unwrap_err();
    assert!(
        matches!(err, ScoreError::OutOfRange(v) if v == 1.7),
        "{err:?}"
    );
}

#[test]
fn rejects_malformed_body_without_retry() {
    let (url, seen) = mock_server(vec![
        (200, r#"{"toxicity": 0.1}"#.into()),
        (200, "{}".into()),
    ]);
    let err = scorer(url, 3).score_text("x").unwrap_err();
    assert!(matches!(err, ScoreError::MalformedBody(_)), "{err:?}");
    assert_eq!(seen.load(Ordering::SeqCst), 1);
}

#[test]
fn retries_transient_failures() {
    let (url, seen) = mock_server(vec![
        (503, "{}".into()),
        (429, "{}".into()),
        (200, r#"{"score": 0.25}"#.into()),
    ]);
    let client = scorer(url, 3);
    assert_eq!(client.score_text("x").unwrap().value(), 0.25);
    assert_eq!(client.retries(), 2);
    assert_eq!(seen.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, _) = mock_server(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (200, r#"{"score": 0.1}"#.into()),
    ]);
    let err = scorer(url, 2).score_text("x").unwrap_err();
    assert!(matches!(err, ScoreError::Status(500)), "{err:?}");
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = mock_server(vec![(400, "{}".into()), (200, r#"{"score": 0.1}"#.into())]);
    let err = scorer(url, 3).score_text("x").unwrap_err();
    assert!(matches!(err, ScoreError::Status(400)), "{err:?}");
    assert_eq!(seen.load(Ordering::SeqCst), 1);
}
