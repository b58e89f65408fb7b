use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use cogforge_core::gateway::{
    CallKey, ChatRequest, Endpoint, Gateway, GatewayError, HttpBackend, ModelRole, RetryPolicy, SamplingParams,
};

struct Captured {
    request_line: String,
    headers: Vec<String>,
    body: String,
}

/// Serves the canned `(status, body)` replies in order, one per connection.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            tx.send(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(body).unwrap(),
            })
            .unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn gateway(url: String, key: Option<&str>) -> Gateway {
    let endpoints = BTreeMap::from([(
        ModelRole::Large,
        Endpoint {
            url,
            model: "judge-72b".into(),
        },
    )]);
    let backend = HttpBackend::new(endpoints, Duration::from_secs(5)).with_api_key(key.map(String::from));
    Gateway::new(backend).with_retry(RetryPolicy {
        max_retries: 2,
        initial_delay: Duration::from_millis(1),
        max_delay: Duration::from_millis(2),
        multiplier: 2.0,
    })
}

fn request(role: ModelRole) -> ChatRequest {
    ChatRequest {
        model_role: role,
        system: "You are a critic.".into(),
        user: "Problem:\nx".into(),
        sampling: SamplingParams::default(),
        key: CallKey::new("critic", "7", 0),
    }
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"medium"}}],"usage":{"prompt_tokens":9,"completion_tokens":1}}"#;

#[test]
fn posts_chat_completion() {
    let (url, rx) = serve(vec![(200, OK)]);
    let response = gateway(url, Some("sk-test"))
        .complete(&request(ModelRole::Large))
        .unwrap();
    assert_eq!(response.text, "medium");
    assert_eq!(response.usage.prompt_tokens, 9);

    let seen = rx.recv().unwrap();
    assert_eq!(seen.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(seen
        .headers
        .iter()
        .any(|h| h == "authorization: Bearer sk-test" || h == "Authorization: Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&seen.body).unwrap();
    assert_eq!(body["model"], "judge-72b");
    assert_eq!(body["messages"][0]["content"], "You are a critic.");
    assert_eq!(body["temperature"], 0.7);
}

#[test]
fn retries_server_errors() {
    let (url, rx) = serve(vec![(503, r#"{"error":"busy"}"#), (429, "{}"), (200, OK)]);
    let response = gateway(url, None).complete(&request(ModelRole::Large)).unwrap();
    assert_eq!(response.text, "medium");
    let seen: Vec<Captured> = rx.iter().take(3).collect();
    assert!(seen[0]
        .headers
        .iter()
        .all(|h| !h.to_ascii_lowercase().starts_with("authorization")));
}

#[test]
fn client_error_surfaces_status() {
    let (url, _rx) = serve(vec![(400, r#"{"error":"bad request"}"#)]);
    match gateway(url, None).complete(&request(ModelRole::Large)) {
        Err(GatewayError::Provider { status, body }) => {
            assert_eq!(status, 400);
            assert!(body.contains("bad request"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let err = gateway(url, None).complete(&request(ModelRole::Large)).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }), "{err:?}");
}

#[test]
fn unmapped_role_is_config_error() {
    let (url, _rx) = serve(vec![]);
    let err = gateway(url, None).complete(&request(ModelRole::Base)).unwrap_err();
    assert!(matches!(err, GatewayError::Config(_)));
}
