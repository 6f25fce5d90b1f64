//! Runs the HTTP service on a simulated calibration set and exercises it in-process.
//!
//! Pass `--listen` to keep it running on 127.0.0.1:8080 (or `COMOD_PORT`).

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use comod::cli::simulate_dataset;
use comod::platform::engine::DatasetRef;
use comod::platform::service::{port_from_env, router, serve, AppState, ServiceConfig, DEFAULT_PORT};
use comod::simulator::SimConfig;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Value) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(if body.is_null() { Body::empty() } else { Body::from(body.to_string()) })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap_or(Value::Null)
}

#[tokio::main]
async fn main() -> comod::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data");
    simulate_dataset(&data, &SimConfig { n: 2000, seed: 3, ..Default::default() }, (0.2, 0.5, 0.3))?;
    let mut config = ServiceConfig::new(dir.path().join("service"));
    config.eval = Some(DatasetRef::new(data.join("test.annotations.csv"), data.join("test.scores.csv")));
    let app = router(AppState::open(config.clone())?);

    let dataset = json!({ "annotations": data.join("cal.annotations.csv"), "scores": data.join("cal.scores.csv") });
    let summary = call(&app, "POST", "/v1/calibrate", json!({ "dataset": dataset, "reg_method": "gamma" })).await;
    println!("calibrated: {}", summary["policy"]);

    let batch = json!({ "instances": [
        { "id": "a", "p_toxic": 0.97, "d_hat": 0.05, "text": "clearly toxic" },
        { "id": "b", "p_toxic": 0.52, "d_hat": 0.40, "text": "borderline" },
        { "id": "c", "p_toxic": 0.10, "d_hat": 0.85, "text": "contested" },
    ]});
    let routed = call(&app, "POST", "/v1/route", batch).await;
    for d in routed["decisions"].as_array().into_iter().flatten() {
        println!("  {} -> {} {}", d["id"], d["action"], d["reasons"]);
    }
    println!("preview gamma 0.5: {}", call(&app, "GET", "/v1/preview?gamma=0.5", Value::Null).await["preview"]);
    let queue = call(&app, "GET", "/v1/queue?status=pending", Value::Null).await;
    println!("pending: {}", queue["total"]);
    if let Some(id) = queue["items"][0]["id"].as_str() {
        let item = call(&app, "POST", &format!("/v1/queue/{id}/decision"), json!({ "label": "nontoxic" })).await;
        println!("resolved {id}: {}", item["status"]);
    }
    let metrics = call(&app, "GET", "/v1/metrics", Value::Null).await;
    println!("coverage on held-out data: {}", metrics["marginal_coverage"]["value"]);

    if std::env::args().any(|a| a == "--listen") {
        let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port_from_env(DEFAULT_PORT)?));
        println!("listening on http://{addr}");
        serve(config, addr).await?;
    }
    Ok(())
}
