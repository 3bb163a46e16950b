#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use spms_core::{ExtraService, GateConfig, GateKind, LotConfig, Tariff, UnixSeconds};
use spms_service::{Command, Engine, EngineOptions, ManualClock, ServiceHandle};
use tower::ServiceExt;

pub const T0: UnixSeconds = 1_700_000_000;

pub fn lot_config() -> LotConfig {
    LotConfig {
        lot_id: "L1".into(),
        name: "Lot L1".into(),
        lat: 30.0444,
        lon: 31.2357,
        slots: ["S1", "S2", "S3", "S4"].map(String::from).to_vec(),
        gates: vec![
            GateConfig { gate_id: "G-IN".into(), kind: GateKind::Entry },
            GateConfig { gate_id: "G-OUT".into(), kind: GateKind::Exit },
        ],
        tariff: Tariff::default(),
        extras: vec![ExtraService { code: "wash".into(), name: "Car wash".into(), price_minor: 5000 }],
    }
}

pub struct TestApp {
    pub app: Router,
    pub service: ServiceHandle,
    pub clock: ManualClock,
    pub dir: tempfile::TempDir,
}

impl TestApp {
    pub async fn new(static_dir: Option<PathBuf>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let clock = ManualClock::new(T0);
        let opts = EngineOptions { sync_writes: false, ..EngineOptions::default() };
        let engine = Engine::open(dir.path(), opts, Arc::new(clock.clone())).unwrap();
        let service = ServiceHandle::start(engine, 10);
        let c = service.submit(Command::CreateLot { config: lot_config() }).await.unwrap();
        assert!(c.applied.is_ok());
        let app = spms_api::router(service.clone(), static_dir);
        Self { app, service, clock, dir }
    }

    pub async fn call(&self, method: &str, path: &str, token: Option<&str>, headers: &[(&str, &str)], body: Option<&Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn sensor(&self, topic: &str, payload: &str) {
        let c = self
            .service
            .submit(Command::SensorEvent { topic: topic.into(), payload: payload.into() })
            .await
            .unwrap();
        assert!(c.applied.is_ok());
    }

    /// Registers and logs in; returns (user_id, token).
    pub async fn user(&self, email: &str) -> (String, String) {
        let body = serde_json::json!({"name": "T", "email": email, "phone": "1", "password": "password123"});
        let (s, v) = self.call("POST", "/api/v1/users", None, &[], Some(&body)).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        let body = serde_json::json!({"email": email, "password": "password123"});
        let (s, t) = self.call("POST", "/api/v1/sessions", None, &[], Some(&body)).await;
        assert_eq!(s, StatusCode::CREATED, "{t}");
        (v["user_id"].as_str().unwrap().to_owned(), t["token"].as_str().unwrap().to_owned())
    }
}
