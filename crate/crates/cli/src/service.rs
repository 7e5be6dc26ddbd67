//! JSON-over-HTTP authoring service.
//!
//! One [`ProjectState`] sits behind a read-write lock: mutations take the
//! write lock, so they apply one at a time, and every read sees a single
//! revision. A mutation is built on a copy of the library and only
//! swapped in (and written to disk) once the whole graph validates.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use stancegraph_core::clip::{save_manifest, ClipLibrary, ClipMetadata, Layer, TaxonomyKind};
use stancegraph_core::graph::{Diagnostic, DiagnosticCode, MetaGraph, Severity};
use stancegraph_core::markov::{self, MarkovLayer, MarkovModel};
use stancegraph_core::planner::{
    normalize, replan, sample_specific, ActionRequest, MetaPlan, NormalizeContext, ReplanConfig, UsageCounters,
};
use stancegraph_core::{ClipFieldError, GraphError};
use tokio::sync::RwLock;

use crate::cli::renumber;

pub struct ProjectState {
    pub library: ClipLibrary,
    pub graph: MetaGraph,
    pub plan: MetaPlan,
    pub counters: UsageCounters,
    pub models: Vec<MarkovModel>,
    pub revision: u64,
    /// Rewritten after every accepted mutation when set.
    pub manifest_path: Option<PathBuf>,
}

impl ProjectState {
    pub fn new(library: ClipLibrary, manifest_path: Option<PathBuf>) -> Result<Self, GraphError> {
        let graph = MetaGraph::from_library(&library)?;
        Ok(ProjectState {
            library,
            graph,
            plan: MetaPlan::new(),
            counters: UsageCounters::default(),
            models: Vec::new(),
            revision: 0,
            manifest_path,
        })
    }
}

pub type Shared = Arc<RwLock<ProjectState>>;

pub fn shared(state: ProjectState) -> Shared {
    Arc::new(RwLock::new(state))
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/graph", get(get_graph))
        .route("/clips", post(post_clip))
        .route("/clips/{id}", patch(patch_clip).delete(delete_clip))
        .route("/start-stances", put(put_start_stances))
        .route("/validate", get(get_validate))
        .route("/expand", get(get_expand))
        .route("/plan", post(post_plan))
        .route("/sample", post(post_sample))
        .route("/generate", post(post_generate))
        .with_state(state)
}

/// Structured 4xx body: `{revision, error: {code, message, field?, clip?}, diagnostics?}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    revision: u64,
    body: Value,
    diagnostics: Vec<Diagnostic>,
}

impl ApiError {
    fn new(status: StatusCode, revision: u64, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            revision,
            body: json!({ "code": code, "message": message.into() }),
            diagnostics: Vec::new(),
        }
    }

    fn field(e: &ClipFieldError, revision: u64) -> Self {
        let mut err = ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            revision,
            "invalid_field",
            e.to_string(),
        );
        err.body["field"] = json!(e.field);
        err.body["clip"] = json!(e.clip);
        err
    }

    fn graph(e: GraphError, revision: u64) -> Self {
        match e {
            GraphError::DuplicateId(id) => ApiError::new(
                StatusCode::CONFLICT,
                revision,
                "duplicate_id",
                format!("clip '{id}' already exists"),
            ),
            GraphError::Invalid(f) => ApiError::field(&f, revision),
            GraphError::UnknownStance { clip, stance } => {
                let mut err = ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    revision,
                    "unknown_stance",
                    format!("clip '{clip}' references unknown stance '{stance}'"),
                );
                err.body["clip"] = json!(clip);
                err
            }
            GraphError::UnknownClip(id) => ApiError::new(
                StatusCode::NOT_FOUND,
                revision,
                "unknown_clip",
                format!("no clip '{id}'"),
            ),
            e @ GraphError::Validation(_) => ApiError::new(StatusCode::CONFLICT, revision, "validation", e.to_string()),
        }
    }

    fn bad_body(e: JsonRejection, revision: u64) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, revision, "bad_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "revision": self.revision, "error": self.body });
        if !self.diagnostics.is_empty() {
            body["diagnostics"] = json!(self.diagnostics);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Replaces `path` with `bytes` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}

/// Validates `library` as the next state and commits it. Validation errors
/// answer with `conflict_status`.
fn commit(state: &mut ProjectState, library: ClipLibrary, conflict_status: StatusCode) -> Result<u64, ApiError> {
    let rev = state.revision;
    let graph = MetaGraph::from_library(&library).map_err(|e| ApiError::graph(e, rev))?;
    let errors: Vec<Diagnostic> = graph.validate().into_iter().filter(Diagnostic::is_error).collect();
    if !errors.is_empty() {
        let mut err = ApiError::new(
            conflict_status,
            rev,
            "validation",
            format!("change would leave {} validation error(s)", errors.len()),
        );
        err.diagnostics = errors;
        return Err(err);
    }
    if let Some(path) = &state.manifest_path {
        write_atomic(path, &save_manifest(&library)).map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                rev,
                "io",
                format!("{}: {e}", path.display()),
            )
        })?;
    }
    state.library = library;
    state.graph = graph;
    state.revision += 1;
    Ok(state.revision)
}

async fn get_graph(State(s): State<Shared>) -> Json<Value> {
    let s = s.read().await;
    Json(json!({ "revision": s.revision, "graph": s.graph.view() }))
}

async fn post_clip(State(s): State<Shared>, body: Result<Json<Value>, JsonRejection>) -> ApiResult {
    let mut s = s.write().await;
    let rev = s.revision;
    let Json(mut body) = body.map_err(|e| ApiError::bad_body(e, rev))?;
    // new clips play in full unless told otherwise
    if let Value::Object(m) = &mut body {
        if let (None, Some(d)) = (m.get("trim_end"), m.get("duration").cloned()) {
            m.insert("trim_end".into(), d);
        }
    }
    let clip: ClipMetadata = serde_json::from_value(body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, rev, "bad_clip", e.to_string()))?;
    if s.library.clip(&clip.id).is_some() {
        return Err(ApiError::graph(GraphError::DuplicateId(clip.id), rev));
    }
    clip.validate().map_err(|e| ApiError::field(&e, rev))?;
    let mut library = s.library.clone();
    library.clips.push(clip.clone());
    let revision = commit(&mut s, library, StatusCode::UNPROCESSABLE_ENTITY)?;
    Ok(Json(json!({ "revision": revision, "clip": clip })))
}

async fn patch_clip(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<Map<String, Value>>, JsonRejection>,
) -> ApiResult {
    let mut s = s.write().await;
    let rev = s.revision;
    let Json(changes) = body.map_err(|e| ApiError::bad_body(e, rev))?;
    let Some(pos) = s.library.clips.iter().position(|c| c.id == id) else {
        return Err(ApiError::graph(GraphError::UnknownClip(id), rev));
    };
    if changes.get("id").is_some_and(|v| v != &json!(id)) {
        let mut err = ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            rev,
            "invalid_field",
            "clip ids cannot change",
        );
        err.body["field"] = json!("id");
        return Err(err);
    }
    let mut merged = match serde_json::to_value(&s.library.clips[pos]) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("clips serialize to objects"),
    };
    for (k, v) in changes {
        // null resets a field to its default
        if v.is_null() {
            merged.remove(&k);
        } else {
            merged.insert(k, v);
        }
    }
    let clip: ClipMetadata = serde_json::from_value(Value::Object(merged))
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, rev, "bad_clip", e.to_string()))?;
    clip.validate().map_err(|e| ApiError::field(&e, rev))?;
    let mut library = s.library.clone();
    library.clips[pos] = clip.clone();
    let revision = commit(&mut s, library, StatusCode::UNPROCESSABLE_ENTITY)?;
    Ok(Json(json!({ "revision": revision, "clip": clip })))
}

#[derive(Deserialize)]
struct ForceQuery {
    #[serde(default)]
    force: Option<String>,
}

impl ForceQuery {
    /// `?force`, `?force=true` and `?force=1` all count.
    fn is_set(&self) -> bool {
        matches!(self.force.as_deref(), Some("" | "true" | "1"))
    }
}

async fn delete_clip(State(s): State<Shared>, UrlPath(id): UrlPath<String>, Query(q): Query<ForceQuery>) -> ApiResult {
    let mut s = s.write().await;
    let rev = s.revision;
    let Some(clip) = s.library.clip(&id).cloned() else {
        return Err(ApiError::graph(GraphError::UnknownClip(id), rev));
    };
    let mut removed = vec![id.clone()];
    if clip.kind == TaxonomyKind::Stance {
        let dependents: Vec<String> = s.graph.dependents(&id).into_iter().map(str::to_owned).collect();
        if !q.is_set() && !dependents.is_empty() {
            let mut err = ApiError::new(
                StatusCode::CONFLICT,
                rev,
                "validation",
                format!(
                    "stance '{id}' still has {} dependent clip(s); pass ?force to cascade",
                    dependents.len()
                ),
            );
            err.diagnostics = dependents
                .iter()
                .map(|d| Diagnostic {
                    severity: Severity::Error,
                    code: DiagnosticCode::MissingStance,
                    clip: Some(d.clone()),
                    message: format!("clip '{d}' depends on stance '{id}'"),
                })
                .collect();
            return Err(err);
        }
        removed.extend(dependents);
    }
    let mut library = s.library.clone();
    library.clips.retain(|c| !removed.contains(&c.id));
    if q.is_set() {
        library.start_stances.retain(|_, st| st != &id);
    }
    let revision = commit(&mut s, library, StatusCode::CONFLICT)?;
    Ok(Json(json!({ "revision": revision, "removed": removed })))
}

async fn put_start_stances(
    State(s): State<Shared>,
    body: Result<Json<BTreeMap<Layer, String>>, JsonRejection>,
) -> ApiResult {
    let mut s = s.write().await;
    let rev = s.revision;
    let Json(starts) = body.map_err(|e| ApiError::bad_body(e, rev))?;
    let mut library = s.library.clone();
    library.start_stances = starts;
    let revision = commit(&mut s, library, StatusCode::UNPROCESSABLE_ENTITY)?;
    Ok(Json(
        json!({ "revision": revision, "start_stances": s.library.start_stances }),
    ))
}

async fn get_validate(State(s): State<Shared>) -> Json<Value> {
    let s = s.read().await;
    let diagnostics = s.graph.validate();
    let ok = !diagnostics.iter().any(Diagnostic::is_error);
    Json(json!({ "revision": s.revision, "ok": ok, "diagnostics": diagnostics }))
}

#[derive(Deserialize)]
struct ExpandQuery {
    start: Option<String>,
}

async fn get_expand(State(s): State<Shared>, Query(q): Query<ExpandQuery>) -> ApiResult {
    let s = s.read().await;
    let rev = s.revision;
    let start = q
        .start
        .or_else(|| {
            Layer::ALL
                .iter()
                .find_map(|&l| s.graph.start_stance(l))
                .map(str::to_owned)
        })
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                rev,
                "no_stance",
                "the graph has no stances",
            )
        })?;
    if !s.graph.is_stance(&start) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            rev,
            "unknown_stance",
            format!("'{start}' is not a stance"),
        ));
    }
    let machine = s.graph.expand(&start).map_err(|e| {
        let mut err = ApiError::graph(e, rev);
        err.diagnostics = s.graph.validate();
        err
    })?;
    Ok(Json(json!({ "revision": rev, "machine": machine })))
}

#[derive(Deserialize)]
struct PlanBody {
    #[serde(default)]
    requests: Vec<ActionRequest>,
    #[serde(default)]
    now: f64,
    #[serde(default)]
    seed: u64,
    /// Start from an empty plan instead of the stored one.
    #[serde(default)]
    reset: bool,
}

async fn post_plan(State(s): State<Shared>, body: Result<Json<PlanBody>, JsonRejection>) -> ApiResult {
    let mut s = s.write().await;
    let rev = s.revision;
    let Json(body) = body.map_err(|e| ApiError::bad_body(e, rev))?;
    let existing = if body.reset { MetaPlan::new() } else { s.plan.clone() };
    let ctx = NormalizeContext {
        models: &s.models,
        seed: body.seed,
        ..NormalizeContext::new(&s.graph)
    };
    let normalized = normalize(&body.requests, &ctx);
    let incoming = renumber(normalized.actions, &existing);
    let out = replan(&existing, body.now, &incoming, &ReplanConfig::default());
    s.plan = out.plan.clone();
    s.revision += 1;
    Ok(Json(json!({
        "revision": s.revision,
        "plan": out.plan,
        "rejected": out.rejected,
        "events": out.events,
        "diagnostics": normalized.diagnostics,
    })))
}

#[derive(Deserialize)]
struct SampleBody {
    seed: u64,
    /// Defaults to the stored plan.
    plan: Option<MetaPlan>,
    /// Defaults to the stored counters.
    counters: Option<UsageCounters>,
    /// Keep the updated counters.
    #[serde(default)]
    commit: bool,
}

async fn post_sample(State(s): State<Shared>, body: Result<Json<SampleBody>, JsonRejection>) -> ApiResult {
    // Previews only read; committing counters needs the write lock.
    let commit_requested = matches!(&body, Ok(Json(b)) if b.commit);
    if commit_requested {
        let mut s = s.write().await;
        let Json(body) = body.expect("checked above");
        let plan = body.plan.unwrap_or_else(|| s.plan.clone());
        let mut counters = body.counters.unwrap_or_else(|| s.counters.clone());
        let schedule = sample_specific(&plan, &s.graph, &mut counters, &BTreeMap::new(), body.seed);
        s.counters = counters.clone();
        s.revision += 1;
        return Ok(Json(
            json!({ "revision": s.revision, "schedule": schedule, "counters": counters }),
        ));
    }
    let s = s.read().await;
    let Json(body) = body.map_err(|e| ApiError::bad_body(e, s.revision))?;
    let plan = body.plan.unwrap_or_else(|| s.plan.clone());
    let mut counters = body.counters.unwrap_or_else(|| s.counters.clone());
    let schedule = sample_specific(&plan, &s.graph, &mut counters, &BTreeMap::new(), body.seed);
    Ok(Json(
        json!({ "revision": s.revision, "schedule": schedule, "counters": counters }),
    ))
}

#[derive(Deserialize)]
struct GenerateBody {
    /// Picks a loaded model; ignored when `model` is given.
    layer: Option<MarkovLayer>,
    model: Option<MarkovModel>,
    horizon: f64,
    seed: u64,
    start_state: Option<String>,
}

async fn post_generate(State(s): State<Shared>, body: Result<Json<GenerateBody>, JsonRejection>) -> ApiResult {
    let s = s.read().await;
    let rev = s.revision;
    let Json(body) = body.map_err(|e| ApiError::bad_body(e, rev))?;
    let model = match (&body.model, body.layer) {
        (Some(m), _) => m,
        (None, layer) => s
            .models
            .iter()
            .find(|m| layer.is_none_or(|l| m.layer == l))
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::NOT_FOUND,
                    rev,
                    "no_model",
                    "no matching behavior model loaded",
                )
            })?,
    };
    let steps = markov::generate(model, body.horizon, body.seed, body.start_state.as_deref())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, rev, "generate", e.to_string()))?;
    let layer = model.layer.planner_layer();
    let requests: Vec<ActionRequest> = steps.iter().filter_map(|st| st.to_request(layer)).collect();
    Ok(Json(json!({ "revision": rev, "requests": requests })))
}
