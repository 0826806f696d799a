//! Fetch client against a local HTTP server speaking the listing format.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use oudlens::corpus::{fetch_subreddit, CorpusError, FetchConfig, ReqwestTransport};

struct Request {
    path: String,
    user_agent: Option<String>,
}

/// Serves `responses` in order, one connection each, reporting what was requested.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<Request>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line
                .split_whitespace()
                .nth(1)
                .unwrap_or_default()
                .to_string();
            let mut user_agent = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("user-agent") {
                        user_agent = Some(v.trim().to_string());
                    }
                }
            }
            let _ = tx.send(Request { path, user_agent });
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (base, rx)
}

fn listing(ids: std::ops::Range<usize>, after: Option<&str>) -> String {
    let children: Vec<String> = ids
        .map(|i| {
            format!(
                r#"{{"kind":"t3","data":{{"id":"p{i}","author":"a{i}","subreddit":"opiates","created_utc":{},"title":"t","selftext":"body {i}"}}}}"#,
                1_600_000_000 + i
            )
        })
        .collect();
    let after = after.map_or("null".to_string(), |a| format!("\"{a}\""));
    format!(
        r#"{{"kind":"Listing","data":{{"after":{after},"children":[{}]}}}}"#,
        children.join(",")
    )
}

fn config(base: &str) -> FetchConfig {
    let mut cfg = FetchConfig::new(base, "opiates");
    cfg.requests_per_minute = 6000;
    cfg.user_agent = "oudlens-test/1.0".into();
    cfg
}

#[test]
fn follows_cursor_over_real_http() {
    let (base, rx) = serve(vec![
        (200, listing(0..100, Some("t3_p99"))),
        (200, listing(100..130, None)),
    ]);
    let posts = fetch_subreddit(&config(&base), &ReqwestTransport::new().unwrap()).unwrap();
    assert_eq!(posts.len(), 130);
    assert_eq!(posts[129].id, "p129");
    assert_eq!(posts[0].body, "body 0");

    let first = rx.recv().unwrap();
    assert_eq!(first.path, "/r/opiates/new.json?limit=100");
    assert_eq!(first.user_agent.as_deref(), Some("oudlens-test/1.0"));
    let second = rx.recv().unwrap();
    assert_eq!(second.path, "/r/opiates/new.json?limit=100&after=t3_p99");
}

#[test]
fn rate_limit_status_is_retryable() {
    let (base, _rx) = serve(vec![(429, "{}".to_string())]);
    let err = fetch_subreddit(&config(&base), &ReqwestTransport::new().unwrap()).unwrap_err();
    assert!(
        matches!(err, CorpusError::HttpStatus { status: 429, .. }),
        "{err:?}"
    );
    assert!(err.is_retryable());
}

#[test]
fn schema_mismatch_names_field() {
    let (base, _rx) = serve(vec![(
        200,
        r#"{"data":{"children":[{"data":{"id":"x"}}]}}"#.to_string(),
    )]);
    let err = fetch_subreddit(&config(&base), &ReqwestTransport::new().unwrap()).unwrap_err();
    assert!(!err.is_retryable());
    assert!(err.to_string().contains("author"), "{err}");
}
