use std::path::{Path, PathBuf};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use stancegraph_cli::service::{router, shared, ProjectState, Shared};
use stancegraph_core::clip::{load_manifest, load_manifest_file, ClipLibrary, Strictness};
use stancegraph_core::markov::{learn, MarkovLayer, SemanticMode};
use tower::ServiceExt;

fn desk() -> ClipLibrary {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/desk.manifest.json");
    load_manifest_file(&path, Strictness::Strict).unwrap()
}

fn empty() -> ClipLibrary {
    let mut lib = desk();
    lib.clips.clear();
    lib.start_stances.clear();
    lib
}

fn app(library: ClipLibrary, path: Option<PathBuf>) -> (Router, Shared) {
    let state = shared(ProjectState::new(library, path).unwrap());
    (router(state.clone()), state)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| json!(String::from_utf8_lossy(&bytes)));
    (status, value)
}

fn stance(id: &str) -> Value {
    json!({ "id": id, "kind": "stance", "layer": "arms", "duration": 4.0, "looping": true })
}

fn gesture(id: &str, owner: &str, duration: f64) -> Value {
    json!({ "id": id, "kind": "gesture", "layer": "arms", "stance": owner, "duration": duration })
}

fn transition(id: &str, from: &str, to: &str) -> Value {
    json!({ "id": id, "kind": "stance_transition", "layer": "arms", "stance": from, "to_stance": to, "duration": 1.0 })
}

#[tokio::test]
async fn graph_view_groups_by_stance() {
    let (app, _) = app(desk(), None);
    let (status, body) = call(&app, Method::GET, "/graph", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 0);
    let rest = body["graph"]["stances"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["id"] == "desk_rest")
        .unwrap()
        .clone();
    assert_eq!(rest["gestures"], json!(["beat", "point"]));
    assert_eq!(rest["fidgets"], json!(["tap"]));
    assert_eq!(rest["transitions_out"], json!({ "desk_chin": ["rest_to_chin"] }));
}

#[tokio::test]
async fn looping_gesture_is_rejected_by_field() {
    let (app, _) = app(desk(), None);
    let mut g = gesture("wave", "desk_rest", 2.0);
    g["looping"] = json!(true);
    let (status, body) = call(&app, Method::POST, "/clips", Some(g)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "looping");
    assert_eq!(body["revision"], 0);
}

#[tokio::test]
async fn clip_errors() {
    let (app, _) = app(desk(), None);
    let (status, body) = call(&app, Method::POST, "/clips", Some(gesture("beat", "desk_rest", 1.0))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "duplicate_id");

    let (status, body) = call(&app, Method::POST, "/clips", Some(gesture("wave", "desk_elbow", 1.0))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "unknown_stance");

    let (status, _) = call(&app, Method::POST, "/clips", Some(json!({ "id": "x" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, body) = call(
        &app,
        Method::PATCH,
        "/clips/beat",
        Some(json!({ "base_likelihood": -1.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "base_likelihood");

    let (status, _) = call(
        &app,
        Method::PATCH,
        "/clips/beat",
        Some(json!({ "blend_in": 1.0, "blend_out": 1.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, body) = call(&app, Method::PATCH, "/clips/beat", Some(json!({ "id": "other" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["field"], "id");

    let (status, _) = call(&app, Method::PATCH, "/clips/nope", Some(json!({}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // moving a gesture to another layer breaks its stance
    let (status, body) = call(&app, Method::PATCH, "/clips/beat", Some(json!({ "layer": "head" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["diagnostics"][0]["code"], "layer_mismatch");

    let (_, body) = call(&app, Method::GET, "/graph", None).await;
    assert_eq!(body["revision"], 0);
}

#[tokio::test]
async fn semantic_tag_edit_reaches_sampling() {
    let (app, _) = app(desk(), None);
    let plan = json!({ "arms": [{
        "id": 0, "abstract_kind": "gesture", "layer": "arms", "semantic": "positive",
        "start": 0.0, "duration": 3.0, "priority": 1
    }]});
    let (_, body) = call(&app, Method::POST, "/sample", Some(json!({ "seed": 1, "plan": plan }))).await;
    assert_eq!(body["schedule"]["discarded"][0]["reason"], "no_candidates");

    let (status, body) = call(
        &app,
        Method::PATCH,
        "/clips/beat",
        Some(json!({ "semantic_tags": ["positive"] })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["revision"], 1);

    for seed in 0..10 {
        let (_, body) = call(
            &app,
            Method::POST,
            "/sample",
            Some(json!({ "seed": seed, "plan": plan })),
        )
        .await;
        assert_eq!(body["schedule"]["layers"]["arms"][0]["clip"], "beat");
        assert_eq!(body["revision"], 1);
    }
}

#[tokio::test]
async fn deleting_a_used_stance_needs_force() {
    let (app, _) = app(desk(), None);
    let (status, body) = call(&app, Method::DELETE, "/clips/desk_chin", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(!body["diagnostics"].as_array().unwrap().is_empty());

    let (status, body) = call(&app, Method::DELETE, "/clips/desk_chin?force", None).await;
    assert_eq!(status, StatusCode::OK);
    let mut removed: Vec<String> = serde_json::from_value(body["removed"].clone()).unwrap();
    removed.sort();
    assert_eq!(removed, ["chin_to_rest", "desk_chin", "rest_to_chin"]);
    assert_eq!(body["revision"], 1);

    let (_, body) = call(&app, Method::GET, "/validate", None).await;
    assert_eq!(body["ok"], true);

    // plain clips go without force
    let (status, _) = call(&app, Method::DELETE, "/clips/tap", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, Method::DELETE, "/clips/tap", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn mutations_rewrite_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("project.json");
    std::fs::write(&path, stancegraph_core::clip::save_manifest(&desk())).unwrap();
    let (app, state) = app(desk(), Some(path.clone()));

    call(&app, Method::POST, "/clips", Some(gesture("wave", "desk_rest", 2.0))).await;
    call(
        &app,
        Method::PATCH,
        "/clips/wave",
        Some(json!({ "base_likelihood": 3.0 })),
    )
    .await;
    let on_disk = load_manifest(&std::fs::read(&path).unwrap(), Strictness::Strict).unwrap();
    assert_eq!(on_disk, state.read().await.library);
    assert_eq!(on_disk.clip("wave").unwrap().base_likelihood, 3.0);
    // a rejected change leaves the file alone
    let before = std::fs::read(&path).unwrap();
    call(&app, Method::PATCH, "/clips/wave", Some(json!({ "duration": -1.0 }))).await;
    assert_eq!(std::fs::read(&path).unwrap(), before);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_both_land() {
    let (app, _) = app(desk(), None);
    let (a, b) = tokio::join!(
        call(&app, Method::POST, "/clips", Some(gesture("wave", "desk_rest", 2.0))),
        call(&app, Method::POST, "/clips", Some(gesture("shrug", "desk_rest", 1.5))),
    );
    assert_eq!((a.0, b.0), (StatusCode::OK, StatusCode::OK));
    let mut revs = [a.1["revision"].as_u64().unwrap(), b.1["revision"].as_u64().unwrap()];
    revs.sort();
    assert_eq!(revs, [1, 2]);
    let (_, body) = call(&app, Method::GET, "/graph", None).await;
    assert_eq!(body["revision"], 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reads_see_whole_revisions() {
    let (app, _) = app(empty(), None);
    call(&app, Method::POST, "/clips", Some(stance("s"))).await;
    let writer = {
        let app = app.clone();
        tokio::spawn(async move {
            for i in 0..40 {
                let (status, _) = call(&app, Method::POST, "/clips", Some(gesture(&format!("g{i}"), "s", 1.0))).await;
                assert_eq!(status, StatusCode::OK);
            }
        })
    };
    for _ in 0..40 {
        let (_, body) = call(&app, Method::GET, "/graph", None).await;
        // every accepted POST added exactly one clip
        let clips = body["graph"]["clips"].as_object().unwrap().len() as u64;
        assert_eq!(clips, body["revision"].as_u64().unwrap());
    }
    writer.await.unwrap();
}

#[tokio::test]
async fn scripted_authoring_session() {
    let (app, _) = app(empty(), None);
    let steps = [
        stance("rest"),
        stance("hips"),
        transition("rest_to_hips", "rest", "hips"),
        transition("hips_to_rest", "hips", "rest"),
        gesture("beat", "rest", 1.0),
        gesture("wave", "rest", 1.5),
    ];
    for (i, clip) in steps.into_iter().enumerate() {
        let (status, body) = call(&app, Method::POST, "/clips", Some(clip)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["revision"], i as u64 + 1);
    }
    let (status, _) = call(
        &app,
        Method::PATCH,
        "/clips/wave",
        Some(json!({ "base_likelihood": 2.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, Method::PUT, "/start-stances", Some(json!({ "arms": "rest" }))).await;
    assert_eq!(status, StatusCode::OK);

    let (status, body) = call(&app, Method::GET, "/expand?start=rest", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["machine"]["nodes"].as_array().unwrap().len(), 6);
    assert_eq!(body["machine"]["edges"].as_array().unwrap().len(), 10);

    let requests: Vec<Value> = (0..8)
        .map(|i| json!({ "type": "abstract_action", "kind": "gesture", "layer": "arms", "start": i as f64 * 2.0, "duration": 2.0 }))
        .collect();
    let (status, body) = call(&app, Method::POST, "/plan", Some(json!({ "requests": requests }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["plan"]["arms"].as_array().unwrap().len(), 8);
    let rev = body["revision"].clone();

    let clips = |v: &Value| -> Vec<String> {
        v["schedule"]["layers"]["arms"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["clip"].as_str().unwrap().to_owned())
            .collect()
    };
    let (_, one) = call(&app, Method::POST, "/sample", Some(json!({ "seed": 1 }))).await;
    let (_, two) = call(&app, Method::POST, "/sample", Some(json!({ "seed": 2 }))).await;
    assert_eq!(clips(&one).len(), 8);
    assert_ne!(clips(&one), clips(&two));
    // previews do not mutate
    assert_eq!(one["revision"], rev);
    assert_eq!(two["revision"], rev);
    // same seed, same preview
    let (_, again) = call(&app, Method::POST, "/sample", Some(json!({ "seed": 1 }))).await;
    assert_eq!(again["schedule"], one["schedule"]);
}

#[tokio::test]
async fn plan_merges_into_stored_plan() {
    let (app, _) = app(desk(), None);
    let req = |start: f64| json!({ "type": "abstract_action", "kind": "gesture", "layer": "arms", "start": start, "duration": 2.0 });
    let (_, first) = call(
        &app,
        Method::POST,
        "/plan",
        Some(json!({ "requests": [req(0.0), req(2.0)] })),
    )
    .await;
    assert_eq!(first["revision"], 1);
    let (_, second) = call(
        &app,
        Method::POST,
        "/plan",
        Some(json!({ "requests": [req(2.5)], "now": 1.0 })),
    )
    .await;
    let arms = second["plan"]["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 3);
    // the newcomer was pushed behind the equal-priority action at 2.0
    assert_eq!(arms[2]["start"], 4.0);
    assert_eq!(arms[2]["id"], 2);
    assert_eq!(second["events"][0]["kind"], "shifted");

    let (_, reset) = call(
        &app,
        Method::POST,
        "/plan",
        Some(json!({ "requests": [], "reset": true })),
    )
    .await;
    assert_eq!(reset["plan"], json!({}));

    let (status, body) = call(
        &app,
        Method::POST,
        "/plan",
        Some(json!({ "requests": [{ "type": "bogus" }] })),
    )
    .await;
    assert!(status.is_client_error());
    assert_eq!(body["error"]["code"], "bad_body");
}

#[tokio::test]
async fn commit_keeps_counters() {
    let (app, _) = app(desk(), None);
    let plan = json!({ "arms": [{ "id": 0, "abstract_kind": "gesture", "layer": "arms", "start": 0.0, "duration": 3.0, "priority": 1 }]});
    let (_, body) = call(
        &app,
        Method::POST,
        "/sample",
        Some(json!({ "seed": 3, "plan": plan, "commit": true })),
    )
    .await;
    assert_eq!(body["revision"], 1);
    let picked = body["schedule"]["layers"]["arms"][0]["clip"]
        .as_str()
        .unwrap()
        .to_owned();
    let (_, body) = call(&app, Method::POST, "/sample", Some(json!({ "seed": 3, "plan": plan }))).await;
    assert_eq!(body["revision"], 1);
    let counts = body["counters"]["counts"].as_object().unwrap();
    assert!(counts[&picked].as_f64().unwrap() >= 4.0);
    assert_eq!(counts.values().map(|v| v.as_f64().unwrap()).sum::<f64>(), 8.0);
}

#[tokio::test]
async fn generate_from_loaded_or_inline_model() {
    let doc = stancegraph_core::annotation::parse(
        &std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/conversation.tsvann"))
            .unwrap(),
    )
    .unwrap();
    let model = learn(&[doc], MarkovLayer::Arms, SemanticMode::PostHoc, 0.0).unwrap();

    let (app, state) = app(desk(), None);
    let body = json!({ "horizon": 20.0, "seed": 4 });
    let (status, err) = call(&app, Method::POST, "/generate", Some(body.clone())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"]["code"], "no_model");

    let mut inline = body.clone();
    inline["model"] = serde_json::to_value(&model).unwrap();
    let (status, a) = call(&app, Method::POST, "/generate", Some(inline)).await;
    assert_eq!(status, StatusCode::OK);

    state.write().await.models.push(model);
    let (_, b) = call(
        &app,
        Method::POST,
        "/generate",
        Some(json!({ "horizon": 20.0, "seed": 4, "layer": "arms" })),
    )
    .await;
    assert_eq!(a["requests"], b["requests"]);
    assert!(!a["requests"].as_array().unwrap().is_empty());

    let (status, _) = call(
        &app,
        Method::POST,
        "/generate",
        Some(json!({ "horizon": -1.0, "seed": 4 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn expand_needs_a_valid_stance() {
    let (app, _) = app(desk(), None);
    let (status, body) = call(&app, Method::GET, "/expand", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["machine"]["entry"], "desk_rest");
    let (status, _) = call(&app, Method::GET, "/expand?start=beat", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
