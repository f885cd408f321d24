use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::thread;

use bargain_core::domain::{Action, Session, SessionStatus};
use bargain_core::engine::{Engine, EngineConfig};
use bargain_core::money::Money;
use bargain_server::{build_state, router, CreateResponse, ErrorBody, MessageResponse};
use serde_json::{json, Value};
use tokio::sync::oneshot;

struct Server {
    base: String,
    stop: Option<oneshot::Sender<()>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl Server {
    fn start(data_dir: Option<&Path>, token: Option<&str>) -> Server {
        let engine = Engine::new(EngineConfig::default()).unwrap();
        let state = build_state(engine, data_dir, token.map(String::from)).unwrap();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let handle = thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router(state, None))
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Server {
            base: format!("http://{addr}"),
            stop: Some(stop_tx),
            handle: Some(handle),
        }
    }

    fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn post(base: &str, path: &str, body: &str) -> (u16, Value) {
    post_with(base, path, body, None)
}

fn post_with(base: &str, path: &str, body: &str, token: Option<&str>) -> (u16, Value) {
    let mut req = agent()
        .post(format!("{base}{path}"))
        .header("content-type", "application/json");
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let mut resp = req.send(body).unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

fn get(base: &str, path: &str) -> (u16, Value) {
    let mut resp = agent().get(format!("{base}{path}")).call().unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

fn product_json(list: i64, bottom: i64) -> Value {
    json!({
        "title": "Film camera",
        "description": "Works, light wear.",
        "list_price": list * 100,
        "bottom_price": bottom * 100,
    })
}

fn create(base: &str) -> String {
    let (status, body) = post(
        base,
        "/api/v1/sessions",
        &json!({ "product": product_json(250, 200), "rng_seed": 11 }).to_string(),
    );
    assert_eq!(status, 201, "{body}");
    serde_json::from_value::<CreateResponse>(body).unwrap().session_id
}

fn message(base: &str, id: &str, text: &str) -> (u16, Value) {
    post(
        base,
        &format!("/api/v1/sessions/{id}/messages"),
        &json!({ "text": text }).to_string(),
    )
}

#[test]
fn health() {
    let server = Server::start(None, None);
    let (status, body) = get(&server.base, "/api/v1/health");
    assert_eq!(status, 200);
    assert_eq!(body["status"], "ok");
}

#[test]
fn create_validates_product_and_json() {
    let server = Server::start(None, None);
    let a = create(&server.base);
    let b = create(&server.base);
    assert_ne!(a, b);

    let (status, body) = post(
        &server.base,
        "/api/v1/sessions",
        &json!({ "product": product_json(250, 300) }).to_string(),
    );
    assert_eq!(status, 400);
    let err: ErrorBody = serde_json::from_value(body).unwrap();
    assert_eq!(err.code, "invalid_product");

    let (status, body) = post(&server.base, "/api/v1/sessions", "{not json");
    assert_eq!(status, 422);
    assert_eq!(body["code"], "malformed_json");
}

#[test]
fn offer_is_read_and_snapshot_grows() {
    let server = Server::start(None, None);
    let id = create(&server.base);
    let (status, body) = message(&server.base, &id, "Hi, is this still available?");
    assert_eq!(status, 200, "{body}");
    let first: MessageResponse = serde_json::from_value(body).unwrap();
    let action = first.decision_trace.unwrap().action;
    assert!(matches!(action, Action::Hello | Action::Ans), "{action:?}");

    let (status, body) = message(&server.base, &id, "Is $200 OK?");
    assert_eq!(status, 200);
    let second: MessageResponse = serde_json::from_value(body).unwrap();
    let trace = second.decision_trace.unwrap();
    assert_eq!(trace.buyer_price_seen, Some(Money::from_major(200)));
    assert!(trace.violations(&second.session.product).is_empty());

    let (status, body) = get(&server.base, &format!("/api/v1/sessions/{id}"));
    assert_eq!(status, 200);
    let snapshot: Session = serde_json::from_value(body).unwrap();
    assert_eq!(snapshot.utterances.len(), 4);
    assert_eq!(snapshot.utterances[2].text, "Is $200 OK?");
    assert!(snapshot.validate().is_empty());
}

#[test]
fn unknown_and_terminal_sessions() {
    let server = Server::start(None, None);
    let (status, body) = get(&server.base, "/api/v1/sessions/nope");
    assert_eq!(status, 404);
    assert_eq!(body["code"], "session_not_found");
    let (status, _) = message(&server.base, "nope", "hi");
    assert_eq!(status, 404);

    let id = create(&server.base);
    let (_, body) = message(&server.base, &id, "I'd pay $250 right now");
    let r: MessageResponse = serde_json::from_value(body).unwrap();
    assert_eq!(r.status, SessionStatus::Deal);
    let (status, body) = message(&server.base, &id, "hello again");
    assert_eq!(status, 409);
    assert_eq!(body["code"], "session_terminal");
}

#[test]
fn concurrent_posts_are_serialized() {
    let server = Server::start(None, None);
    let id = create(&server.base);
    let base = Arc::new(server.base.clone());
    let threads: Vec<_> = ["Hello there", "Would you take $150?"]
        .into_iter()
        .map(|text| {
            let base = base.clone();
            let id = id.clone();
            thread::spawn(move || message(&base, &id, text))
        })
        .collect();
    for t in threads {
        assert_eq!(t.join().unwrap().0, 200);
    }
    let (_, body) = get(&server.base, &format!("/api/v1/sessions/{id}"));
    let s: Session = serde_json::from_value(body).unwrap();
    assert_eq!(s.utterances.len(), 4);
    assert!(s.validate().is_empty());
}

#[test]
fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start(Some(dir.path()), None);
    let id = create(&server.base);
    message(&server.base, &id, "hi");
    message(&server.base, &id, "How about a 20% discount?");
    let (_, before) = get(&server.base, &format!("/api/v1/sessions/{id}"));
    server.stop();

    let server = Server::start(Some(dir.path()), None);
    let (status, after) = get(&server.base, &format!("/api/v1/sessions/{id}"));
    assert_eq!(status, 200);
    assert_eq!(before, after);
    let (status, _) = message(&server.base, &id, "ok, deal");
    assert_eq!(status, 200);
}

#[test]
fn bearer_token_guards_sessions() {
    let server = Server::start(None, Some("sekret"));
    let body = json!({ "product": product_json(250, 200) }).to_string();
    let (status, _) = post(&server.base, "/api/v1/sessions", &body);
    assert_eq!(status, 401);
    let (status, _) = post_with(&server.base, "/api/v1/sessions", &body, Some("sekret"));
    assert_eq!(status, 201);
    assert_eq!(get(&server.base, "/api/v1/health").0, 200);
}
