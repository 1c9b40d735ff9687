//! In-process API harness: models trained on first use, a tick clock and a
//! temporary event-log directory per app.

#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use rxdialog::engine::{Engine, EngineConfig, PolicyKind};
use rxdialog::nlu::NluModel;
use rxdialog::pipeline::{train_nlu_pipeline, train_policy_pipeline, NluPipelineConfig, PolicyPipelineConfig, Resources};
use rxdialog::policy::TedModel;
use rxdialog_service::api::{router, AppState, Clock};
use rxdialog_service::eventlog::EventSink;

pub fn resources() -> &'static Resources {
    static R: OnceLock<Resources> = OnceLock::new();
    R.get_or_init(Resources::builtin)
}

pub fn nlu() -> &'static NluModel<f64> {
    static M: OnceLock<NluModel<f64>> = OnceLock::new();
    M.get_or_init(|| train_nlu_pipeline(resources(), &NluPipelineConfig::default()).unwrap().0)
}

pub fn ted() -> &'static TedModel<f64> {
    static M: OnceLock<TedModel<f64>> = OnceLock::new();
    M.get_or_init(|| train_policy_pipeline(resources(), &PolicyPipelineConfig::default()).unwrap().0)
}

/// Starts at a fixed epoch second and advances by 0.25 s per reading.
pub fn tick_clock() -> Clock {
    let n = Arc::new(AtomicU64::new(0));
    Arc::new(move || 1_790_000_000.0 + n.fetch_add(1, Ordering::SeqCst) as f64 * 0.25)
}

pub struct TestApp {
    pub router: Router,
    pub state: Arc<AppState>,
    pub logs: tempfile::TempDir,
}

pub fn app(policy: PolicyKind) -> TestApp {
    let r = resources();
    let ted = (policy == PolicyKind::Ted).then(|| ted().clone());
    let engine =
        Engine::new(r.schema.clone(), r.db.clone(), nlu().clone(), ted, EngineConfig { policy, ..Default::default() })
            .unwrap();
    let logs = tempfile::tempdir().unwrap();
    let state = AppState::new(engine, EventSink::new(logs.path()).unwrap(), tick_clock());
    TestApp { router: router(state.clone()), state, logs }
}

impl TestApp {
    pub async fn call(&self, method: Method, uri: &str, body: &str) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, v)
    }

    pub async fn create(&self, participant: &str) -> String {
        let (st, v) = self.call(Method::POST, "/sessions", &format!(r#"{{"participant_id":"{participant}"}}"#)).await;
        assert_eq!(st, StatusCode::CREATED, "{v}");
        v["session_id"].as_str().unwrap().to_string()
    }

    pub async fn say(&self, id: &str, text: &str) -> (StatusCode, Value) {
        let body = serde_json::json!({ "text": text }).to_string();
        self.call(Method::POST, &format!("/sessions/{id}/utterance"), &body).await
    }

    pub async fn press(&self, id: &str, button: &str) -> (StatusCode, Value) {
        self.call(Method::POST, &format!("/sessions/{id}/button"), &format!(r#"{{"button":"{button}"}}"#)).await
    }

    pub async fn state(&self, id: &str) -> Value {
        let (st, v) = self.call(Method::GET, &format!("/sessions/{id}/state"), "").await;
        assert_eq!(st, StatusCode::OK, "{v}");
        v
    }
}

/// Runs the ofloxacine reference script and returns the three replies and the final state.
pub async fn ofloxacine_script(app: &TestApp, participant: &str) -> (Vec<Value>, Value) {
    let id = app.create(participant).await;
    let mut replies = Vec::new();
    for text in ["Ofloxacine 200 mg 2 injections per day", "for 7 days"] {
        let (st, v) = app.say(&id, text).await;
        assert_eq!(st, StatusCode::OK, "{v}");
        replies.push(v);
    }
    let (st, v) = app.press(&id, "confirm").await;
    assert_eq!(st, StatusCode::OK, "{v}");
    replies.push(v);
    (replies, app.state(&id).await)
}

/// The last normalized value of `label` in a serialized frame.
pub fn slot<'a>(frame: &'a Value, label: &str) -> Option<&'a str> {
    frame["slots"][label].as_array()?.last()?["normalized"].as_str()
}
