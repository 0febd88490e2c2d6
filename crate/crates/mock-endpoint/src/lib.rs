//! A scriptable OpenAI-compatible chat-completion server.
//!
//! Serves `GET /v1/models` and `POST /v1/chat/completions` on a loopback
//! port from a background thread. Replies come from a user-supplied
//! responder closure that sees the parsed request.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::header::AUTHORIZATION;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// One chat message as received.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: String,
    pub content: String,
}

/// A parsed completion request.
#[derive(Debug, Clone)]
pub struct Request {
    /// 1-based count of completion requests received so far.
    pub sequence: usize,
    pub model: String,
    pub messages: Vec<Message>,
    pub authorization: Option<String>,
    pub body: Value,
}

impl Request {
    pub fn system(&self) -> Option<&str> {
        self.messages.iter().find(|m| m.role == "system").map(|m| m.content.as_str())
    }

    pub fn last_user(&self) -> Option<&str> {
        self.messages.iter().rev().find(|m| m.role == "user").map(|m| m.content.as_str())
    }

    /// Number of worked examples: assistant turns before the final user turn.
    pub fn shot_count(&self) -> usize {
        self.messages.iter().filter(|m| m.role == "assistant").count()
    }
}

#[derive(Debug, Clone)]
pub enum Reply {
    /// A normal completion whose first choice carries this content.
    Text(String),
    /// A well-formed body with an empty `choices` array.
    NoChoices,
    /// Arbitrary status code and body.
    Status(u16, String),
    /// A 200 response whose body is not JSON.
    Garbage(String),
    /// Wait, then send the inner reply.
    Delayed(Duration, Box<Reply>),
}

type Responder = dyn Fn(&Request) -> Reply + Send + Sync;

struct Shared {
    models: Vec<String>,
    responder: Box<Responder>,
    count: AtomicUsize,
    log: Mutex<Vec<Request>>,
}

pub struct MockEndpointBuilder {
    models: Vec<String>,
    responder: Box<Responder>,
    port: u16,
}

impl MockEndpointBuilder {
    pub fn model(mut self, name: impl Into<String>) -> Self {
        self.models.push(name.into());
        self
    }

    pub fn responder(mut self, f: impl Fn(&Request) -> Reply + Send + Sync + 'static) -> Self {
        self.responder = Box::new(f);
        self
    }

    /// Fixed port; 0 (the default) picks a free one.
    pub fn port(mut self, port: u16) -> Self {
        self.port = port;
        self
    }

    pub fn spawn(self) -> std::io::Result<MockEndpoint> {
        let shared = Arc::new(Shared {
            models: self.models,
            responder: self.responder,
            count: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        });
        let listener = std::net::TcpListener::bind(("127.0.0.1", self.port))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let app = Router::new()
            .route("/v1/models", get(models))
            .route("/v1/chat/completions", post(completions))
            .with_state(shared.clone());
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .expect("mock server");
            });
        });
        Ok(MockEndpoint { addr, shared, stop: Some(stop_tx), thread: Some(thread) })
    }
}

/// Running mock server; shut down on drop.
pub struct MockEndpoint {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockEndpoint {
    pub fn builder() -> MockEndpointBuilder {
        MockEndpointBuilder {
            models: Vec::new(),
            responder: Box::new(|req: &Request| Reply::Text(echo_completion(req))),
            port: 0,
        }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Completion requests received so far.
    pub fn requests(&self) -> usize {
        self.shared.count.load(Ordering::SeqCst)
    }

    pub fn request_log(&self) -> Vec<Request> {
        self.shared.log.lock().expect("log lock").clone()
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockEndpoint {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Default reply: the last few words of the final user message, stripped
/// of tags. Deterministic for a given prompt.
pub fn echo_completion(req: &Request) -> String {
    let text = req.last_user().unwrap_or_default();
    let cleaned = text
        .replace("<code>", " ")
        .replace("</code>", " ")
        .replace("<incomplete>", " ")
        .replace("</incomplete>", " ");
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let tail = &words[words.len().saturating_sub(3)..];
    format!("{} {{", tail.join(" "))
}

async fn models(State(shared): State<Arc<Shared>>) -> Json<Value> {
    let data: Vec<Value> = shared
        .models
        .iter()
        .map(|id| json!({"id": id, "object": "model", "owned_by": "mock-endpoint"}))
        .collect();
    Json(json!({"object": "list", "data": data}))
}

fn parse(body: &Value, sequence: usize, authorization: Option<String>) -> Result<Request, String> {
    let model = body.get("model").and_then(Value::as_str).ok_or("missing model")?.to_string();
    let messages = body
        .get("messages")
        .and_then(Value::as_array)
        .ok_or("missing messages")?
        .iter()
        .map(|m| {
            Some(Message {
                role: m.get("role")?.as_str()?.to_string(),
                content: m.get("content")?.as_str()?.to_string(),
            })
        })
        .collect::<Option<Vec<_>>>()
        .ok_or("malformed message")?;
    Ok(Request { sequence, model, messages, authorization, body: body.clone() })
}

async fn completions(State(shared): State<Arc<Shared>>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let sequence = shared.count.fetch_add(1, Ordering::SeqCst) + 1;
    let auth = headers.get(AUTHORIZATION).and_then(|v| v.to_str().ok()).map(str::to_string);
    let req = match parse(&body, sequence, auth) {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, Json(json!({"error": e}))).into_response(),
    };
    if !shared.models.iter().any(|m| *m == req.model) {
        return (StatusCode::NOT_FOUND, Json(json!({"error": format!("model {} not found", req.model)})))
            .into_response();
    }
    let mut reply = (shared.responder)(&req);
    shared.log.lock().expect("log lock").push(req);
    loop {
        match reply {
            Reply::Delayed(d, inner) => {
                tokio::time::sleep(d).await;
                reply = *inner;
            }
            Reply::Text(content) => {
                let completion_tokens = content.split_whitespace().count();
                return Json(json!({
                    "id": format!("mock-{sequence}"),
                    "object": "chat.completion",
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": content},
                        "finish_reason": "stop",
                    }],
                    "usage": {"prompt_tokens": 0, "completion_tokens": completion_tokens},
                }))
                .into_response();
            }
            Reply::NoChoices => {
                return Json(json!({"id": format!("mock-{sequence}"), "choices": []})).into_response();
            }
            Reply::Status(code, body) => {
                let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
                return (status, body).into_response();
            }
            Reply::Garbage(body) => return (StatusCode::OK, body).into_response(),
        }
    }
}
