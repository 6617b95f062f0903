mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use common::{catalog_text, seeded_session, summary_fixture, Env};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use screenrec_service::http::router;

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into())) };
    (status, body)
}

fn json_req(method: &str, uri: &str, body: Value) -> Request<Body> {
    Request::builder().method(method).uri(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::builder().uri(uri).body(Body::empty()).unwrap()
}

#[tokio::test]
async fn session_lifecycle() {
    let env = Env::new();
    let app = router(Arc::new(env.service()));

    let (status, body) = call(&app, get("/healthz")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["catalog_items"], 12);

    let (status, body) = call(&app, json_req("POST", "/sessions", json!({"session_id": "web"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["session_id"], "web");
    let (status, body) = call(&app, json_req("POST", "/sessions", json!({"session_id": "web"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "session_exists");

    let (status, body) = call(&app, json_req("POST", "/sessions/web/events", json!({"item_id": "d03", "timestamp": 5}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["events"].as_array().unwrap().len(), 1);

    let (status, body) = call(&app, get("/sessions/web/summary")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["entries"].as_object().unwrap().values().all(Value::is_null));

    let (status, body) = call(&app, get("/sessions/web/recommendations?mode=assortment")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["mode"], "assortment");
    assert!(!body["items"].as_array().unwrap().is_empty());

    let (status, body) = call(&app, get("/sessions/web/recommendations?mode=rerank&k=3")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "no_model_configured");

    let (status, _) = call(&app, get("/sessions/missing")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, get("/sessions/web/recommendations?k=0")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(&app, json_req("PUT", "/sessions/web/constraints", json!({"lowest_price": "cheap"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_request");
}

#[tokio::test]
async fn generated_session_id() {
    let env = Env::new();
    let app = router(Arc::new(env.service()));
    let req = Request::builder().method("POST").uri("/sessions").body(Body::empty()).unwrap();
    let (status, body) = call(&app, req).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["session_id"].as_str().unwrap().len(), 36);
}

#[tokio::test]
async fn constraints_route_validates() {
    let env = Env::new();
    let service = env.service();
    seeded_session(&service, "s", 2, &summary_fixture("asos"));
    let app = router(Arc::new(service));

    let (status, body) = call(&app, json_req("PUT", "/sessions/s/constraints", json!({"lowest_price": 144.0, "highest_price": 18.0}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["report"]["issues"][0]["code"], "ConsistencyViolation");

    let (status, body) = call(&app, json_req("PUT", "/sessions/s/constraints", json!({"color": "blue"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, body) = call(&app, get("/sessions/s/recommendations")).await;
    assert_eq!(body["constraints_used"]["color"], "blue");

    let (status, body) = call(&app, get("/sessions/s/summary")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["entries"]["Highest Price"].as_str().unwrap().contains("144"));
}

#[tokio::test]
async fn multipart_event_stores_screenshot() {
    let env = Env::new();
    let service = Arc::new(env.service());
    service.create_session(Some("m".into())).unwrap();
    let app = router(service.clone());

    let boundary = "XBOUNDARY";
    let mut body = Vec::new();
    for (name, value) in [("item_id", "d01"), ("timestamp", "77"), ("kind", "item_image_only")] {
        body.extend(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes());
    }
    body.extend(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"screenshot\"; filename=\"a.png\"\r\nContent-Type: image/png\r\n\r\n").as_bytes());
    body.extend(b"\x89PNG fake bytes");
    body.extend(format!("\r\n--{boundary}--\r\n").as_bytes());
    let req = Request::builder()
        .method("POST")
        .uri("/sessions/m/events")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    let (status, body) = call(&app, req).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let shot = &body["events"][0]["screenshot"];
    assert_eq!(shot["kind"], "item_image_only");
    let key = shot["key"].as_str().unwrap();
    assert_eq!(service.screenshots().read(key).unwrap(), b"\x89PNG fake bytes");
}

#[tokio::test]
async fn event_with_unknown_screenshot_is_bad_request() {
    let env = Env::new();
    let service = env.service();
    service.create_session(Some("s".into())).unwrap();
    let app = router(Arc::new(service));
    let (status, _) = call(&app, json_req("POST", "/sessions/s/events", json!({"item_id": "d01", "screenshot_key": "feed"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn catalog_import_and_failure() {
    let env = Env::new();
    let app = router(Arc::new(env.service()));
    let req = Request::builder().method("POST").uri("/catalog/import").body(Body::from(catalog_text())).unwrap();
    let (status, body) = call(&app, req).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["items"], 12);
    let version = body["version"].as_u64().unwrap();

    let broken = format!("{}{{\"item_id\": \"bad\"}}\n", catalog_text());
    let req = Request::builder().method("POST").uri("/catalog/import").body(Body::from(broken)).unwrap();
    let (status, _) = call(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (_, health) = call(&app, get("/healthz")).await;
    assert_eq!(health["catalog_version"].as_u64().unwrap(), version);
}

#[tokio::test]
async fn synthetic_experiment_appends_report() {
    let env = Env::new();
    let app = router(Arc::new(env.service()));
    let request = json!({"k": 20, "rerank": true, "seed": 3, "models": ["popularity"], "synthetic": {"sessions": 60, "items": 30}});
    let (status, body) = call(&app, json_req("POST", "/experiments", request)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["rows"].as_array().unwrap().len(), 2);
    let path = body["report_path"].as_str().unwrap();
    assert!(path.ends_with(".jsonl"));
    assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 2);

    let (status, _) = call(&app, json_req("POST", "/experiments", json!({"k": 5}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
