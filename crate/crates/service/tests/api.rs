use std::path::Path;
use std::sync::Arc;

use alforest_core::active::{calculate_offset, run_simulated_loop, LabeledPoint, LabeledSet, LoopConfig};
use alforest_core::{
    featurize, synth_generate, FeatureConfig, ForestParams, IsolationForest, QueryStrategy, SynthSpec, UpdateStrategy,
};
use alforest_service::{router, AppState};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const N_TREES: usize = 40;

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n: 1500,
        seed,
        anomaly_rate: 0.02,
        ..SynthSpec::default()
    }
}

fn app(root: &Path) -> Router {
    router(AppState::open(root, 3600).unwrap(), None)
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = send_raw(app, method, uri, body).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn send_raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn create(app: &Router, id: &str, seed: u64, config: Value) -> Value {
    let (status, body) = send(
        app,
        Method::POST,
        "/sessions",
        Some(json!({ "id": id, "dataset": { "kind": "synthetic", "spec": spec(seed) }, "config": config })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body
}

fn error_code(body: &Value) -> &str {
    body["error"]["code"].as_str().unwrap()
}

/// Labels the outstanding batch from the synthetic ground truth.
async fn answer_batch(app: &Router, id: &str, truth: &[u8]) -> usize {
    let (status, q) = send(app, Method::GET, &format!("/sessions/{id}/queries"), None).await;
    assert_eq!(status, StatusCode::OK, "{q}");
    let labels: Vec<Value> = q["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            let i = p["index"].as_u64().unwrap() as usize;
            json!({ "index": i, "label": truth[i] })
        })
        .collect();
    if labels.is_empty() {
        return 0;
    }
    let (status, ack) = send(
        app,
        Method::POST,
        &format!("/sessions/{id}/labels"),
        Some(json!({ "labels": labels })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{ack}");
    assert_eq!(ack["remaining"], 0);
    labels.len()
}

#[tokio::test]
async fn api_rounds_match_library_loop() {
    let cases = [
        (QueryStrategy::TopAnomalies, UpdateStrategy::Offset),
        (QueryStrategy::CloseToBoundary, UpdateStrategy::TreeWeights),
        (QueryStrategy::Combined, UpdateStrategy::TreeWeightsThenOffset),
        (QueryStrategy::Random, UpdateStrategy::TreeWeightsThenOffset),
    ];
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let rounds = 3;
    for (n, (q, u)) in cases.into_iter().enumerate() {
        let seed = 11;
        let id = format!("eq{n}");
        let config = json!({
            "query": q, "update": u, "budget_fraction": 0.01, "seed": seed,
            "forest": { "n_trees": N_TREES }
        });
        create(&app, &id, seed, config).await;
        let ts = synth_generate(&spec(seed)).unwrap();
        let truth = ts.labels().unwrap().to_vec();
        for _ in 0..rounds {
            assert!(answer_batch(&app, &id, &truth).await > 0);
            let (status, summary) = send(&app, Method::POST, &format!("/sessions/{id}/rounds"), None).await;
            assert_eq!(status, StatusCode::OK, "{summary}");
        }
        let (status, api_model) = send_raw(&app, Method::GET, &format!("/sessions/{id}/model"), None).await;
        assert_eq!(status, StatusCode::OK);

        let series = ts.fill_gaps();
        let features = featurize(&series, &FeatureConfig::default());
        let params = ForestParams {
            n_trees: N_TREES,
            subsample_size: None,
            contamination: 0.03,
            seed,
        };
        let baseline = IsolationForest::train(&features, &params).unwrap();
        let loop_config = LoopConfig {
            query: q,
            update: u,
            budget_fraction: 0.01,
            rounds,
            learning_rate: 1.0,
            seed,
        };
        let outcome = run_simulated_loop(&baseline, &series, &features, &loop_config).unwrap();
        let lib_model = outcome.forest.to_model_json().unwrap();
        assert_eq!(String::from_utf8(api_model).unwrap(), lib_model, "{q:?}/{u:?}");
    }
}

#[tokio::test]
async fn queries_are_idempotent_until_round() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "s", 1, json!({ "forest": { "n_trees": N_TREES } })).await;
    let (_, a) = send(&app, Method::GET, "/sessions/s/queries", None).await;
    let (_, b) = send(&app, Method::GET, "/sessions/s/queries", None).await;
    assert_eq!(a, b);
    // ceil(0.01 * 1500)
    assert_eq!(a["points"].as_array().unwrap().len(), 15);
    let p = &a["points"][0];
    let t = p["timestamp"].as_i64().unwrap();
    for ct in p["context"]["timestamps"].as_array().unwrap() {
        assert!((ct.as_i64().unwrap() - t).abs() <= 3600);
    }
    let (_, s) = send(&app, Method::GET, "/sessions/s", None).await;
    assert_eq!(s["counts"]["queried"], 15);
    assert_eq!(s["round_ready"], false);
}

#[tokio::test]
async fn zero_budget_gives_empty_batch() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(
        &app,
        "z",
        1,
        json!({ "budget_fraction": 0.0, "forest": { "n_trees": N_TREES } }),
    )
    .await;
    let (status, q) = send(&app, Method::GET, "/sessions/z/queries", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(q["points"].as_array().unwrap().is_empty());
    let (status, e) = send(&app, Method::POST, "/sessions/z/rounds", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_code(&e), "NoLabels");
}

#[tokio::test]
async fn label_errors_reject_whole_request() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "e", 2, json!({ "forest": { "n_trees": N_TREES } })).await;
    let (_, q) = send(&app, Method::GET, "/sessions/e/queries", None).await;
    let queried: Vec<usize> = q["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["index"].as_u64().unwrap() as usize)
        .collect();
    let outside = (0..1500).find(|i| !queried.contains(i)).unwrap();
    let post = |labels: Value| {
        send(
            &app,
            Method::POST,
            "/sessions/e/labels",
            Some(json!({ "labels": labels })),
        )
    };

    let (status, e) = post(json!([{ "index": queried[0], "label": 1 }, { "index": outside, "label": 0 }])).await;
    assert_eq!((status, error_code(&e)), (StatusCode::CONFLICT, "NotQueried"));
    let (status, e) = post(json!([{ "index": 999_999, "label": 0 }])).await;
    assert_eq!((status, error_code(&e)), (StatusCode::BAD_REQUEST, "UnknownPoint"));
    let (status, e) = post(json!([{ "index": queried[0], "label": 2 }])).await;
    assert_eq!((status, error_code(&e)), (StatusCode::BAD_REQUEST, "InvalidLabel"));
    let (status, e) = post(json!([{ "index": queried[0], "label": 0 }, { "index": queried[0], "label": 1 }])).await;
    assert_eq!((status, error_code(&e)), (StatusCode::CONFLICT, "NotQueried"));
    let (status, e) = send(&app, Method::POST, "/sessions/e/labels", Some(json!({ "nope": 1 }))).await;
    assert_eq!((status, error_code(&e)), (StatusCode::BAD_REQUEST, "InvalidRequest"));

    // nothing above was accepted
    let (_, s) = send(&app, Method::GET, "/sessions/e", None).await;
    assert_eq!(s["counts"]["labeled"], 0);

    let (status, _) = post(json!([{ "index": queried[0], "label": 0 }])).await;
    assert_eq!(status, StatusCode::OK);
    let (status, e) = post(json!([{ "index": queried[0], "label": 1 }])).await;
    assert_eq!((status, error_code(&e)), (StatusCode::CONFLICT, "NotQueried"));
}

#[tokio::test]
async fn offset_round_sets_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let seed = 4;
    create(
        &app,
        "o",
        seed,
        json!({ "budget_fraction": 0.05, "seed": seed, "forest": { "n_trees": N_TREES } }),
    )
    .await;
    let truth = synth_generate(&spec(seed)).unwrap().labels().unwrap().to_vec();
    let (_, q) = send(&app, Method::GET, "/sessions/o/queries", None).await;
    let mut expected = LabeledSet::new();
    for p in q["points"].as_array().unwrap() {
        let index = p["index"].as_u64().unwrap() as usize;
        expected.push(LabeledPoint {
            index,
            label: truth[index],
            score: p["score"].as_f64().unwrap(),
        });
    }
    answer_batch(&app, "o", &truth).await;
    let (status, summary) = send(&app, Method::POST, "/sessions/o/rounds", None).await;
    assert_eq!(status, StatusCode::OK);
    match calculate_offset(&expected) {
        Ok(delta) => {
            assert_eq!(summary["offset_after"].as_f64().unwrap(), delta);
            assert!(summary["warning"].is_null());
        }
        Err(_) => {
            assert_eq!(summary["offset_after"], summary["offset_before"]);
            assert!(summary["warning"].is_string());
        }
    }
    let (_, m) = send(&app, Method::GET, "/sessions/o/metrics", None).await;
    assert_eq!(m["offset"], summary["offset_after"]);
    assert_eq!(m["history"].as_array().unwrap().len(), 1);
    assert!(m["ground_truth"]["f1"].is_number());
}

#[tokio::test]
async fn single_class_batch_keeps_offset_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "w", 5, json!({ "forest": { "n_trees": N_TREES } })).await;
    let (_, q) = send(&app, Method::GET, "/sessions/w/queries", None).await;
    let labels: Vec<Value> = q["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| json!({ "index": p["index"], "label": 1 }))
        .collect();
    send(
        &app,
        Method::POST,
        "/sessions/w/labels",
        Some(json!({ "labels": labels })),
    )
    .await;
    let (status, summary) = send(&app, Method::POST, "/sessions/w/rounds", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["offset_after"], summary["offset_before"]);
    assert!(summary["warning"].as_str().unwrap().contains("offset kept"));
}

#[tokio::test]
async fn restart_resumes_state() {
    let dir = tempfile::tempdir().unwrap();
    let seed = 6;
    let truth = synth_generate(&spec(seed)).unwrap().labels().unwrap().to_vec();
    let (model, pending) = {
        let app = app(dir.path());
        create(
            &app,
            "r",
            seed,
            json!({ "update": "TW+O", "seed": seed, "forest": { "n_trees": N_TREES } }),
        )
        .await;
        answer_batch(&app, "r", &truth).await;
        send(&app, Method::POST, "/sessions/r/rounds", None).await;
        let (_, model) = send_raw(&app, Method::GET, "/sessions/r/model", None).await;
        // a batch issued but unanswered at shutdown
        let (_, pending) = send(&app, Method::GET, "/sessions/r/queries", None).await;
        (model, pending)
    };
    let app = app(dir.path());
    let (_, model_after) = send_raw(&app, Method::GET, "/sessions/r/model", None).await;
    assert_eq!(model, model_after);
    let (_, again) = send(&app, Method::GET, "/sessions/r/queries", None).await;
    assert_eq!(pending, again);
    let (_, s) = send(&app, Method::GET, "/sessions/r", None).await;
    assert_eq!(s["round"], 1);
    assert_eq!(s["counts"]["labeled"], 15);

    // a torn final line is ignored
    let log = dir.path().join("r").join("labels.log");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"event\":\"label\",\"lab");
    std::fs::write(&log, text).unwrap();
    let app = self::app(dir.path());
    let (_, again) = send(&app, Method::GET, "/sessions/r/queries", None).await;
    assert_eq!(pending, again);
}

#[tokio::test]
async fn series_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "g", 7, json!({ "forest": { "n_trees": N_TREES } })).await;
    let (status, full) = send(&app, Method::GET, "/sessions/g/series", None).await;
    assert_eq!(status, StatusCode::OK);
    let ts = synth_generate(&spec(7)).unwrap();
    let values: Vec<f64> = full["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(values, ts.values());
    assert_eq!(full["scores"].as_array().unwrap().len(), 1500);

    let (status, part) = send(&app, Method::GET, "/sessions/g/series?from=3000&to=6000", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(part["start_index"], 10);
    assert_eq!(part["timestamps"].as_array().unwrap().len(), 11);

    for uri in ["/sessions/g/series?from=10&to=5", "/sessions/g/series?from=999999999"] {
        let (status, e) = send(&app, Method::GET, uri, None).await;
        assert_eq!(
            (status, error_code(&e)),
            (StatusCode::BAD_REQUEST, "RangeError"),
            "{uri}"
        );
    }
    let (status, e) = send(&app, Method::GET, "/sessions/g/series?from=abc", None).await;
    assert_eq!((status, error_code(&e)), (StatusCode::BAD_REQUEST, "InvalidRequest"));
}

#[tokio::test]
async fn session_lifecycle_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, e) = send(&app, Method::GET, "/sessions/missing", None).await;
    assert_eq!((status, error_code(&e)), (StatusCode::NOT_FOUND, "SessionNotFound"));
    create(&app, "dup", 1, json!({ "forest": { "n_trees": N_TREES } })).await;
    let (status, e) = send(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "id": "dup", "dataset": { "kind": "synthetic" } })),
    )
    .await;
    assert_eq!((status, error_code(&e)), (StatusCode::CONFLICT, "SessionExists"));
    let (status, e) = send(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "id": "../x", "dataset": { "kind": "synthetic" } })),
    )
    .await;
    assert_eq!((status, error_code(&e)), (StatusCode::BAD_REQUEST, "InvalidRequest"));
    let (status, e) = send(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "dataset": { "kind": "csv", "path": dir.path().join("nope.csv") } })),
    )
    .await;
    assert_eq!((status, error_code(&e)), (StatusCode::BAD_REQUEST, "DatasetError"));
    let (_, list) = send(&app, Method::GET, "/sessions", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn inline_dataset_and_generated_id() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let values: Vec<f64> = (0..400)
        .map(|i| (i as f64 * 0.1).sin() + if i == 200 { 9.0 } else { 0.0 })
        .collect();
    let timestamps: Vec<i64> = (0..400).map(|i| i * 60).collect();
    let (status, s) = send(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({
            "dataset": { "kind": "inline", "timestamps": timestamps, "values": values },
            "config": { "seed": 3, "forest": { "n_trees": N_TREES } }
        })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{s}");
    let id = s["id"].as_str().unwrap();
    assert_eq!(id.len(), 32);
    assert_eq!(s["has_ground_truth"], false);
    let (_, m) = send(&app, Method::GET, &format!("/sessions/{id}/metrics"), None).await;
    assert!(m["ground_truth"].is_null());
    // session.json does not repeat the values
    let meta = std::fs::read_to_string(dir.path().join(id).join("session.json")).unwrap();
    assert!(!meta.contains("0.0998"));
}

#[tokio::test]
async fn same_seed_same_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    create(&app, "a", 9, json!({ "seed": 1, "forest": { "n_trees": N_TREES } })).await;
    create(&app, "b", 9, json!({ "seed": 1, "forest": { "n_trees": N_TREES } })).await;
    create(&app, "c", 9, json!({ "seed": 2, "forest": { "n_trees": N_TREES } })).await;
    let scores = |id: &'static str| {
        let app = app.clone();
        async move { send(&app, Method::GET, &format!("/sessions/{id}/series"), None).await.1["scores"].clone() }
    };
    assert_eq!(scores("a").await, scores("b").await);
    assert_ne!(scores("a").await, scores("c").await);
}

#[tokio::test]
async fn serves_static_assets() {
    let dir = tempfile::tempdir().unwrap();
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(Arc::clone(&AppState::open(dir.path(), 0).unwrap()), Some(assets.path()));
    let (status, body) = send_raw(&app, Method::GET, "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<html>ui</html>");
    let (status, _) = send(&app, Method::GET, "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
}
