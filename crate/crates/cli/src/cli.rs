//! Command-line entry points. Every command reads files, calls into the
//! core crate and returns what to print; `main` only does the printing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use stancegraph_core::annotation;
use stancegraph_core::clip::{load_manifest_file, parse_manifest, ClipLibrary, Strictness};
use stancegraph_core::graph::{Diagnostic, DiagnosticCode, MetaGraph, Severity};
use stancegraph_core::markov::{self, MarkovLayer, MarkovModel, SemanticMode};
use stancegraph_core::planner::{
    normalize, replan, sample_specific, ActionRequest, MetaPlan, NormalizeContext, ReplanConfig, Schedule,
    UsageCounters,
};
use stancegraph_core::playback::Player;
use stancegraph_core::pose::{LayerWeights, Pose};
use stancegraph_core::ManifestError;

pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Parser)]
#[command(
    name = "stancegraph",
    version,
    about = "Behavior-graph authoring and motion planning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest; exit 0 iff it has no errors.
    Validate {
        manifest: PathBuf,
        /// Reject fields the format does not know.
        #[arg(long)]
        strict: bool,
    },
    /// Print the explicit state machine.
    Expand {
        manifest: PathBuf,
        #[arg(long)]
        start: String,
        /// Graphviz output instead of JSON.
        #[arg(long)]
        dot: bool,
    },
    /// Turn action requests into a conflict-free meta plan.
    Plan {
        manifest: PathBuf,
        requests: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        now: f64,
        /// Plan to merge into.
        #[arg(long)]
        existing: Option<PathBuf>,
        /// Behavior model(s) for unspecified intervals.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pick concrete clips for a meta plan.
    Sample {
        manifest: PathBuf,
        plan: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Usage counter file; read if present and rewritten afterwards.
        #[arg(long)]
        counters: Option<PathBuf>,
        #[arg(long, default_value_t = stancegraph_core::planner::DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Learn a Markov model from annotation files.
    Learn {
        #[arg(required = true)]
        annotations: Vec<PathBuf>,
        #[arg(long)]
        layer: MarkovLayer,
        #[arg(long, default_value = "post_hoc")]
        semantic_mode: SemanticMode,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
    },
    /// Generate abstract action requests from a model.
    Generate {
        model: PathBuf,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        start_state: Option<String>,
    },
    /// Evaluate a schedule into per-frame poses.
    Compose {
        manifest: PathBuf,
        schedule: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Seconds to render; defaults to the end of the last clip.
        #[arg(long)]
        duration: Option<f64>,
        /// Layer weights as `body,arms,head`.
        #[arg(long, default_value = "1,1,1")]
        weights: String,
    },
    /// Run the HTTP authoring service.
    Serve {
        manifest: PathBuf,
        #[arg(long, env = "STANCEGRAPH_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        /// Directory with a built UI bundle to serve at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

/// What a finished command wants printed, and its exit code.
#[derive(Debug, Default, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    /// One JSON document per line.
    pub stderr: Vec<String>,
    pub code: i32,
}

/// A failed command. Code 2 means an input could not be read or parsed;
/// code 1 means it was readable but the operation failed.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub details: Value,
}

impl Failure {
    fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            kind,
            message: message.into(),
            details: Value::Null,
        }
    }

    fn with(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind, "message": self.message });
        if !self.details.is_null() {
            v["details"] = self.details.clone();
        }
        v.to_string()
    }
}

impl From<Failure> for Outcome {
    fn from(f: Failure) -> Self {
        Outcome {
            stdout: String::new(),
            stderr: vec![f.to_json()],
            code: f.code,
        }
    }
}

type CmdResult = Result<Outcome, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(2, "io", format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<T, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| {
        Failure::new(2, "parse", format!("{} is not a valid {what}: {e}", path.display()))
            .with(json!({ "line": e.line(), "column": e.column() }))
    })
}

fn manifest_failure(path: &Path, e: ManifestError) -> Failure {
    let code = match e {
        ManifestError::Parse { .. } | ManifestError::Io(_) => 2,
        _ => 1,
    };
    Failure::new(code, "manifest", format!("{}: {e}", path.display()))
}

fn load_graph(path: &Path) -> Result<(ClipLibrary, MetaGraph), Failure> {
    let library = load_manifest_file(path, Strictness::Lenient).map_err(|e| manifest_failure(path, e))?;
    let graph =
        MetaGraph::from_library(&library).map_err(|e| Failure::new(1, "graph", format!("{}: {e}", path.display())))?;
    Ok((library, graph))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn ok(stdout: String) -> Outcome {
    Outcome {
        stdout,
        ..Outcome::default()
    }
}

pub fn run(command: &Command) -> Outcome {
    let result = match command {
        Command::Validate { manifest, strict } => validate(manifest, *strict),
        Command::Expand { manifest, start, dot } => expand(manifest, start, *dot),
        Command::Plan {
            manifest,
            requests,
            now,
            existing,
            models,
            seed,
        } => plan(manifest, requests, *now, existing.as_deref(), models, *seed),
        Command::Sample {
            manifest,
            plan,
            seed,
            counters,
            alpha,
        } => sample(manifest, plan, *seed, counters.as_deref(), *alpha),
        Command::Learn {
            annotations,
            layer,
            semantic_mode,
            smoothing,
        } => learn(annotations, *layer, *semantic_mode, *smoothing),
        Command::Generate {
            model,
            horizon,
            seed,
            start_state,
        } => generate(model, *horizon, *seed, start_state.as_deref()),
        Command::Compose {
            manifest,
            schedule,
            fps,
            duration,
            weights,
        } => compose(manifest, schedule, *fps, *duration, weights),
        Command::Serve { .. } => Err(Failure::new(1, "usage", "serve runs from main")),
    };
    result.unwrap_or_else(Outcome::from)
}

/// Every diagnostic of a manifest. Unreadable manifests are a failure;
/// anything else becomes a diagnostic.
pub fn manifest_diagnostics(bytes: &[u8], strictness: Strictness) -> Result<Vec<Diagnostic>, ManifestError> {
    let library = match parse_manifest(bytes, strictness) {
        Ok(l) => l,
        Err(e @ (ManifestError::Parse { .. } | ManifestError::Io(_))) => return Err(e),
        Err(e) => {
            return Ok(vec![Diagnostic {
                severity: Severity::Error,
                code: DiagnosticCode::InvalidClip,
                clip: None,
                message: e.to_string(),
            }])
        }
    };
    let mut out = Vec::new();
    if let Err(e) = library.check() {
        let clip = match &e {
            ManifestError::Clip(c) => Some(c.clip.clone()),
            ManifestError::DuplicateId(id) => Some(id.clone()),
            _ => None,
        };
        out.push(Diagnostic {
            severity: Severity::Error,
            code: DiagnosticCode::InvalidClip,
            clip,
            message: e.to_string(),
        });
    }
    // Build what can be built so later problems are reported too.
    let mut graph = MetaGraph::new();
    for (layer, s) in &library.start_stances {
        graph.set_start_stance(*layer, s.clone());
    }
    let (stances, others): (Vec<_>, Vec<_>) = library
        .clips
        .iter()
        .partition(|c| c.kind == stancegraph_core::TaxonomyKind::Stance);
    for clip in stances.into_iter().chain(others) {
        if let Err(e) = graph.add_clip(clip.clone()) {
            push_once(
                &mut out,
                Diagnostic {
                    severity: Severity::Error,
                    code: DiagnosticCode::InvalidClip,
                    clip: Some(clip.id.clone()),
                    message: e.to_string(),
                },
            );
        }
    }
    for d in graph.validate() {
        push_once(&mut out, d);
    }
    Ok(out)
}

/// Keeps one error per clip; the first found is the most specific.
fn push_once(out: &mut Vec<Diagnostic>, d: Diagnostic) {
    let reported = d.is_error() && d.clip.is_some() && out.iter().any(|o| o.is_error() && o.clip == d.clip);
    if !reported {
        out.push(d);
    }
}

fn validate(path: &Path, strict: bool) -> CmdResult {
    let bytes = fs::read(path).map_err(|e| Failure::new(2, "io", format!("{}: {e}", path.display())))?;
    let strictness = if strict {
        Strictness::Strict
    } else {
        Strictness::Lenient
    };
    let diagnostics = manifest_diagnostics(&bytes, strictness).map_err(|e| manifest_failure(path, e))?;
    let errors = diagnostics.iter().filter(|d| d.is_error()).count();
    Ok(Outcome {
        stdout: String::new(),
        stderr: diagnostics
            .iter()
            .map(|d| serde_json::to_string(d).expect("diagnostic serializes"))
            .collect(),
        code: i32::from(errors > 0),
    })
}

fn expand(path: &Path, start: &str, dot: bool) -> CmdResult {
    let (_, graph) = load_graph(path)?;
    let machine = graph
        .expand(start)
        .map_err(|e| Failure::new(1, "expand", e.to_string()).with(json!(graph.validate())))?;
    Ok(ok(if dot {
        machine.to_dot()
    } else {
        machine.to_json() + "\n"
    }))
}

fn plan(
    manifest: &Path,
    requests: &Path,
    now: f64,
    existing: Option<&Path>,
    model_paths: &[PathBuf],
    seed: u64,
) -> CmdResult {
    let (_, graph) = load_graph(manifest)?;
    let requests: Vec<ActionRequest> = read_json(requests, "request list")?;
    let existing: MetaPlan = match existing {
        Some(p) => read_json(p, "meta plan")?,
        None => MetaPlan::new(),
    };
    let models = model_paths
        .iter()
        .map(|p| read_json::<MarkovModel>(p, "behavior model"))
        .collect::<Result<Vec<_>, _>>()?;

    let ctx = NormalizeContext {
        models: &models,
        seed,
        ..NormalizeContext::new(&graph)
    };
    let normalized = normalize(&requests, &ctx);
    let incoming = renumber(normalized.actions, &existing);
    let out = replan(&existing, now, &incoming, &ReplanConfig::default());

    let mut stderr = Vec::new();
    if !normalized.diagnostics.is_empty() || !out.rejected.is_empty() {
        stderr.push(
            json!({ "warning": "plan", "diagnostics": normalized.diagnostics, "rejected": out.rejected }).to_string(),
        );
    }
    Ok(Outcome {
        stdout: pretty(&out.plan),
        stderr,
        code: 0,
    })
}

/// Gives new actions ids above every id already in `existing`.
pub fn renumber(actions: Vec<stancegraph_core::MetaAction>, existing: &MetaPlan) -> Vec<stancegraph_core::MetaAction> {
    let base = existing.iter().map(|a| a.id + 1).max().unwrap_or(0);
    actions
        .into_iter()
        .map(|mut a| {
            a.id += base;
            a
        })
        .collect()
}

fn sample(manifest: &Path, plan: &Path, seed: u64, counters_path: Option<&Path>, alpha: f64) -> CmdResult {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Failure::new(1, "usage", format!("alpha must be > 0, got {alpha}")));
    }
    let (_, graph) = load_graph(manifest)?;
    let plan: MetaPlan = read_json(plan, "meta plan")?;
    let mut counters = match counters_path {
        Some(p) if p.exists() => read_json(p, "counter file")?,
        _ => UsageCounters::new(alpha),
    };
    let schedule = sample_specific(&plan, &graph, &mut counters, &BTreeMap::new(), seed);
    if let Some(p) = counters_path {
        fs::write(p, pretty(&counters)).map_err(|e| Failure::new(1, "io", format!("{}: {e}", p.display())))?;
    }
    Ok(ok(pretty(&schedule)))
}

fn learn(paths: &[PathBuf], layer: MarkovLayer, mode: SemanticMode, smoothing: f64) -> CmdResult {
    let mut docs = Vec::with_capacity(paths.len());
    for p in paths {
        let doc = annotation::parse(&read(p)?).map_err(|e| {
            Failure::new(2, "annotation", format!("{}:{}: {}", p.display(), e.line, e.kind))
                .with(json!({ "file": p, "line": e.line }))
        })?;
        docs.push(doc);
    }
    let model = markov::learn(&docs, layer, mode, smoothing).map_err(|e| Failure::new(1, "learn", e.to_string()))?;
    Ok(ok(model.to_json() + "\n"))
}

fn generate(model: &Path, horizon: f64, seed: u64, start_state: Option<&str>) -> CmdResult {
    let model: MarkovModel = read_json(model, "behavior model")?;
    let steps =
        markov::generate(&model, horizon, seed, start_state).map_err(|e| Failure::new(1, "generate", e.to_string()))?;
    let layer = model.layer.planner_layer();
    let requests: Vec<ActionRequest> = steps.iter().filter_map(|s| s.to_request(layer)).collect();
    Ok(ok(pretty(&requests)))
}

#[derive(Serialize)]
struct Frame {
    time: f64,
    pose: Pose,
}

fn parse_weights(s: &str) -> Result<LayerWeights, Failure> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::new(1, "usage", format!("weights '{s}' must be three numbers")))?;
    let [b, a, h] = parts[..] else {
        return Err(Failure::new(1, "usage", format!("weights '{s}' must be three numbers")));
    };
    LayerWeights::new(b, a, h).map_err(|e| Failure::new(1, "usage", e.to_string()))
}

fn compose(manifest: &Path, schedule: &Path, fps: f64, duration: Option<f64>, weights: &str) -> CmdResult {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Failure::new(1, "usage", format!("fps must be > 0, got {fps}")));
    }
    let weights = parse_weights(weights)?;
    let library = load_manifest_file(manifest, Strictness::Lenient).map_err(|e| manifest_failure(manifest, e))?;
    let schedule: Schedule = read_json(schedule, "schedule")?;
    let base_dir = manifest.parent().unwrap_or(Path::new("."));
    let player = Player::new(&library, base_dir).map_err(|e| manifest_failure(manifest, e))?;
    let duration = duration.unwrap_or_else(|| schedule.layers.values().flatten().map(|c| c.end).fold(0.0, f64::max));
    let poses = player
        .render(&schedule, fps, duration, weights)
        .map_err(|e| Failure::new(1, "compose", e.to_string()))?;
    let frames: Vec<Frame> = poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| Frame {
            time: i as f64 / fps,
            pose,
        })
        .collect();
    Ok(ok(pretty(&json!({ "fps": fps, "frames": frames }))))
}
