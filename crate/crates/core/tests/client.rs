mod common;

use std::time::{Duration, Instant};

use mock_endpoint::{MockEndpoint, Reply};
use promptjoule::client::{ClientError, EndpointConfig, LlmClient};
use promptjoule::prompt::{render_prompt, ConfigId, Pet, TagSpacing};

fn endpoint(url: &str) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(url, common::MODEL).unwrap();
    cfg.request_timeout = Duration::from_secs(5);
    cfg
}

fn prompt() -> promptjoule::ChatPrompt {
    render_prompt(
        &common::disruptor(),
        Pet::one_shot(),
        &ConfigId::C2.config(),
        &common::example_pool(),
        TagSpacing::AsListed,
    )
    .unwrap()
}

#[test]
fn completes_and_preserves_message_order() {
    let server = MockEndpoint::builder()
        .model(common::MODEL)
        .responder(|_| Reply::Text("class DaemonThreadFactory implements ThreadFactory {".into()))
        .spawn()
        .unwrap();
    let mut cfg = endpoint(&server.base_url());
    cfg.api_key = Some("token-123".into());
    let client = LlmClient::new(&cfg).unwrap();
    let p = prompt();
    let res = client.complete(&p, &cfg).unwrap();
    assert_eq!(res.text, "class DaemonThreadFactory implements ThreadFactory {");
    assert!(res.latency > 0.0);
    assert_eq!(res.attempts, 1);
    assert_eq!(res.completion_tokens, Some(5));

    let log = server.request_log();
    assert_eq!(log.len(), 1);
    let got: Vec<(String, String)> = log[0].messages.iter().map(|m| (m.role.clone(), m.content.clone())).collect();
    let want: Vec<(String, String)> = p
        .messages
        .iter()
        .map(|m| (serde_json::to_value(m.role).unwrap().as_str().unwrap().to_string(), m.content.clone()))
        .collect();
    assert_eq!(got, want);
    assert_eq!(log[0].authorization.as_deref(), Some("Bearer token-123"));
    assert_eq!(log[0].body["stream"], false);
    assert_eq!(log[0].body["max_tokens"], 128);
    assert_eq!(log[0].body["temperature"], 0.0);
}

#[test]
fn no_choices_is_malformed() {
    let server = MockEndpoint::builder().model(common::MODEL).responder(|_| Reply::NoChoices).spawn().unwrap();
    let cfg = endpoint(&server.base_url());
    let err = LlmClient::new(&cfg).unwrap().complete(&prompt(), &cfg).unwrap_err();
    assert!(matches!(err, ClientError::Malformed(_)), "{err}");
}

#[test]
fn garbage_body_is_malformed() {
    let server = MockEndpoint::builder()
        .model(common::MODEL)
        .responder(|_| Reply::Garbage("<html>oops</html>".into()))
        .spawn()
        .unwrap();
    let cfg = endpoint(&server.base_url());
    let err = LlmClient::new(&cfg).unwrap().complete(&prompt(), &cfg).unwrap_err();
    assert!(matches!(err, ClientError::Malformed(_)), "{err}");
}

#[test]
fn http_error_status_is_not_retried() {
    let server = MockEndpoint::builder()
        .model(common::MODEL)
        .responder(|_| Reply::Status(503, "overloaded".into()))
        .spawn()
        .unwrap();
    let cfg = endpoint(&server.base_url());
    let err = LlmClient::new(&cfg).unwrap().complete(&prompt(), &cfg).unwrap_err();
    assert!(matches!(err, ClientError::Status { status: 503, .. }), "{err}");
    assert_eq!(server.requests(), 1);
}

#[test]
fn timeout() {
    let server = MockEndpoint::builder()
        .model(common::MODEL)
        .responder(|_| Reply::Delayed(Duration::from_secs(3), Box::new(Reply::Text("late".into()))))
        .spawn()
        .unwrap();
    let mut cfg = endpoint(&server.base_url());
    cfg.request_timeout = Duration::from_millis(300);
    let err = LlmClient::new(&cfg).unwrap().complete(&prompt(), &cfg).unwrap_err();
    assert!(matches!(err, ClientError::Timeout(_)), "{err}");
}

#[test]
fn endpoint_down_retries_three_times() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = endpoint(&format!("http://127.0.0.1:{port}"));
    let client = LlmClient::new(&cfg).unwrap().with_backoff(Duration::from_millis(20));
    let started = Instant::now();
    let err = client.complete(&prompt(), &cfg).unwrap_err();
    match err {
        ClientError::Unreachable { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("unexpected {other}"),
    }
    // backoff 20 ms + 40 ms between the three attempts
    assert!(started.elapsed() >= Duration::from_millis(60));
}

#[test]
fn health_check_cases() {
    let server = common::mock();
    let cfg = endpoint(&server.base_url());
    let client = LlmClient::new(&cfg).unwrap();
    let descriptor = client.health_check(&cfg).unwrap();
    assert_eq!(descriptor["id"], common::MODEL);

    let wrong = endpoint_with_model(&server.base_url(), "gpt-17");
    match client.health_check(&wrong).unwrap_err() {
        ClientError::ModelNotFound { wanted, available } => {
            assert_eq!(wanted, "gpt-17");
            assert_eq!(available, vec![common::MODEL.to_string()]);
        }
        other => panic!("unexpected {other}"),
    }

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let down = endpoint(&format!("http://127.0.0.1:{port}"));
    assert!(matches!(client.health_check(&down).unwrap_err(), ClientError::Unreachable { .. }));
}

fn endpoint_with_model(url: &str, model: &str) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(url, model).unwrap();
    cfg.request_timeout = Duration::from_secs(5);
    cfg
}
