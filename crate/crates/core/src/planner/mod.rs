//! Action planning: request normalization, temporal replanning and sampling
//! of specific clips.
//!
//! Requests arrive at different levels of abstraction (a specific clip, an
//! abstract gesture, "go to this stance", or nothing at all for an
//! interval). [`normalize`] turns them into [`MetaAction`]s, [`replan`] merges
//! them into a conflict-free [`MetaPlan`] and [`sample_specific`] picks the
//! concrete clips.

mod replan;
mod sample;

pub use replan::{replan, RejectReason, Rejected, ReplanConfig, ReplanEvent, ReplanEventKind, ReplanOutcome};
pub use sample::{
    sample_specific, selection_probabilities, DiscardReason, Discarded, Schedule, ScheduledClip, UsageCounters,
    DEFAULT_ALPHA,
};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clip::{Layer, TaxonomyKind};
use crate::graph::MetaGraph;
use crate::markov::{generate_fill, MarkovModel};

/// Slack used when comparing interval endpoints.
pub const TIME_EPS: f64 = 1e-9;

pub const PRIORITY_SPECIFIC: i32 = 2;
pub const PRIORITY_ABSTRACT: i32 = 1;
pub const PRIORITY_STANCE: i32 = 2;
pub const PRIORITY_MARKOV: i32 = 0;

/// Fallback duration for abstract actions when nothing in the graph matches.
pub const DEFAULT_ACTION_DURATION: f64 = 1.0;

/// Which arm(s) an arm action involves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
    #[serde(rename = "LR")]
    Both,
}

impl Side {
    pub const ALL: [Side; 3] = [Side::Left, Side::Right, Side::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
            Side::Both => "LR",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An incoming request on the shared timeline (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionRequest {
    SpecificClip {
        clip: String,
        start: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        priority: Option<i32>,
    },
    AbstractAction {
        kind: TaxonomyKind,
        layer: Layer,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        semantic: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        side: Option<Side>,
        start: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        priority: Option<i32>,
    },
    StanceRequest {
        stance: String,
        layer: Layer,
        start: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        priority: Option<i32>,
    },
    /// Nothing requested in `[start, end]`; filled from a behavior model.
    Unspecified {
        start: f64,
        end: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        layer: Option<Layer>,
    },
}

impl ActionRequest {
    pub fn start(&self) -> f64 {
        match self {
            ActionRequest::SpecificClip { start, .. }
            | ActionRequest::AbstractAction { start, .. }
            | ActionRequest::StanceRequest { start, .. }
            | ActionRequest::Unspecified { start, .. } => *start,
        }
    }
}

/// Unified action record: abstract kind plus an optional specific clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaAction {
    pub id: u64,
    pub abstract_kind: TaxonomyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specific_clip: Option<String>,
    pub layer: Layer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    /// Required destination of a stance transition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_stance: Option<String>,
    pub start: f64,
    pub duration: f64,
    pub priority: i32,
}

impl MetaAction {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn overlaps(&self, other: &MetaAction) -> bool {
        self.start < other.end() - TIME_EPS && other.start < self.end() - TIME_EPS
    }
}

/// Per-layer, start-ordered sequences of meta actions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetaPlan {
    pub layers: BTreeMap<Layer, Vec<MetaAction>>,
}

impl MetaPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Groups actions by layer and sorts each layer by start.
    pub fn from_actions(actions: impl IntoIterator<Item = MetaAction>) -> Self {
        let mut plan = MetaPlan::new();
        for a in actions {
            plan.layers.entry(a.layer).or_default().push(a);
        }
        for list in plan.layers.values_mut() {
            list.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.id.cmp(&b.id)));
        }
        plan
    }

    pub fn actions(&self, layer: Layer) -> &[MetaAction] {
        self.layers.get(&layer).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetaAction> {
        self.layers.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sorted by start and free of overlaps on every layer.
    pub fn is_conflict_free(&self) -> bool {
        self.layers.values().all(|list| {
            list.windows(2)
                .all(|w| w[0].start <= w[1].start && w[0].end() <= w[1].start + TIME_EPS)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanDiagnosticCode {
    UnknownClip,
    UnknownStance,
    NoTransitionPath,
    InvalidRequest,
    NoModel,
    Generation,
}

/// A request that was dropped (or partially served) during normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostic {
    /// Index of the request in arrival order.
    pub request: usize,
    pub code: PlanDiagnosticCode,
    pub message: String,
}

/// Inputs to [`normalize`] beyond the requests themselves.
#[derive(Debug, Clone)]
pub struct NormalizeContext<'a> {
    pub graph: &'a MetaGraph,
    /// Stance per layer at the start of the request window. Layers missing
    /// here start in the graph's start stance.
    pub current_stances: BTreeMap<Layer, String>,
    pub models: &'a [MarkovModel],
    /// Seed for filling unspecified intervals.
    pub seed: u64,
}

impl<'a> NormalizeContext<'a> {
    pub fn new(graph: &'a MetaGraph) -> Self {
        NormalizeContext {
            graph,
            current_stances: BTreeMap::new(),
            models: &[],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub actions: Vec<MetaAction>,
    pub diagnostics: Vec<PlanDiagnostic>,
}

/// Mean playable length of clips of `kind` on `layer` satisfying `filter`.
fn mean_length(
    graph: &MetaGraph,
    kind: TaxonomyKind,
    layer: Layer,
    filter: impl Fn(&crate::clip::ClipMetadata) -> bool,
) -> Option<f64> {
    let lengths: Vec<f64> = graph
        .clips()
        .filter(|c| c.kind == kind && c.layer == layer && filter(c))
        .map(|c| c.playable_length())
        .collect();
    (!lengths.is_empty()).then(|| lengths.iter().sum::<f64>() / lengths.len() as f64)
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Converts requests into meta actions.
///
/// Requests are interpreted in start order so that stance requests see the
/// stance established by earlier ones; output ids follow arrival order.
pub fn normalize(requests: &[ActionRequest], ctx: &NormalizeContext<'_>) -> Normalized {
    let graph = ctx.graph;
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by(|&a, &b| requests[a].start().total_cmp(&requests[b].start()).then(a.cmp(&b)));

    let mut stance: BTreeMap<Layer, Option<String>> = Layer::ALL
        .iter()
        .map(|&l| {
            let s = ctx
                .current_stances
                .get(&l)
                .cloned()
                .or_else(|| graph.start_stance(l).map(str::to_owned));
            (l, s)
        })
        .collect();

    let mut produced: Vec<(usize, usize, MetaAction)> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut diag = |request: usize, code: PlanDiagnosticCode, message: String| {
        diagnostics.push(PlanDiagnostic { request, code, message })
    };

    let action = |kind, layer, start: f64, duration: f64, priority| MetaAction {
        id: 0,
        abstract_kind: kind,
        specific_clip: None,
        layer,
        semantic: None,
        side: None,
        target_stance: None,
        start,
        duration,
        priority,
    };

    for idx in order {
        let req = &requests[idx];
        let start = req.start();
        if !start.is_finite() || start < 0.0 {
            diag(
                idx,
                PlanDiagnosticCode::InvalidRequest,
                format!("start time {start} must be >= 0"),
            );
            continue;
        }
        let mut emit = |sub: usize, a: MetaAction| produced.push((idx, sub, a));

        // Stance clips requested by id are served like stance requests.
        let stance_target = match req {
            ActionRequest::StanceRequest {
                stance,
                layer,
                priority,
                ..
            } => Some((stance.clone(), *layer, priority.unwrap_or(PRIORITY_STANCE))),
            ActionRequest::SpecificClip { clip, priority, .. } => match graph.clip(clip) {
                Some(c) if c.kind == TaxonomyKind::Stance => {
                    Some((c.id.clone(), c.layer, priority.unwrap_or(PRIORITY_SPECIFIC)))
                }
                _ => None,
            },
            _ => None,
        };

        if let Some((target, layer, priority)) = stance_target {
            if graph.stance_layer(&target) != Some(layer) {
                diag(
                    idx,
                    PlanDiagnosticCode::UnknownStance,
                    format!("'{target}' is not a stance on layer {layer}"),
                );
                continue;
            }
            let current = stance.get(&layer).cloned().flatten();
            match current {
                Some(cur) if cur == target => {}
                Some(cur) => match graph.stance_path(&cur, &target) {
                    None => diag(
                        idx,
                        PlanDiagnosticCode::NoTransitionPath,
                        format!("no transition path from '{cur}' to '{target}'"),
                    ),
                    Some(path) => {
                        let mut t = start;
                        for (sub, hop) in path.windows(2).enumerate() {
                            let len = mean_length(graph, TaxonomyKind::StanceTransition, layer, |c| {
                                c.stance.as_deref() == Some(&hop[0]) && c.to_stance.as_deref() == Some(&hop[1])
                            })
                            .unwrap_or(DEFAULT_ACTION_DURATION);
                            let mut a = action(TaxonomyKind::StanceTransition, layer, t, len, priority);
                            a.target_stance = Some(hop[1].clone());
                            emit(sub, a);
                            t += len;
                        }
                        stance.insert(layer, Some(target));
                    }
                },
                None => {
                    // Stance unknown after an unresolved abstract transition.
                    let len = mean_length(graph, TaxonomyKind::StanceTransition, layer, |c| {
                        c.to_stance.as_deref() == Some(&target)
                    })
                    .unwrap_or(DEFAULT_ACTION_DURATION);
                    let mut a = action(TaxonomyKind::StanceTransition, layer, start, len, priority);
                    a.target_stance = Some(target.clone());
                    emit(0, a);
                    stance.insert(layer, Some(target));
                }
            }
            continue;
        }

        match req {
            ActionRequest::SpecificClip { clip, priority, .. } => {
                let Some(c) = graph.clip(clip) else {
                    diag(idx, PlanDiagnosticCode::UnknownClip, format!("unknown clip '{clip}'"));
                    continue;
                };
                let mut a = action(
                    c.kind,
                    c.layer,
                    start,
                    c.playable_length(),
                    priority.unwrap_or(PRIORITY_SPECIFIC),
                );
                a.specific_clip = Some(c.id.clone());
                if c.kind == TaxonomyKind::StanceTransition {
                    a.target_stance = c.to_stance.clone();
                    stance.insert(c.layer, c.to_stance.clone());
                }
                emit(0, a);
            }
            ActionRequest::AbstractAction {
                kind,
                layer,
                semantic,
                side,
                duration,
                priority,
                ..
            } => {
                if *kind == TaxonomyKind::Stance {
                    diag(
                        idx,
                        PlanDiagnosticCode::InvalidRequest,
                        "abstract actions cannot be stances; use a stance request".into(),
                    );
                    continue;
                }
                let len = match duration {
                    Some(d) if d.is_finite() && *d > 0.0 => *d,
                    Some(d) => {
                        diag(
                            idx,
                            PlanDiagnosticCode::InvalidRequest,
                            format!("duration {d} must be > 0"),
                        );
                        continue;
                    }
                    None => mean_length(graph, *kind, *layer, |_| true).unwrap_or(DEFAULT_ACTION_DURATION),
                };
                let mut a = action(*kind, *layer, start, len, priority.unwrap_or(PRIORITY_ABSTRACT));
                a.semantic = semantic.clone();
                a.side = *side;
                if *kind == TaxonomyKind::StanceTransition {
                    stance.insert(*layer, None);
                }
                emit(0, a);
            }
            ActionRequest::Unspecified { end, layer, .. } => {
                let models: Vec<(usize, &MarkovModel)> = ctx
                    .models
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| layer.is_none_or(|l| m.layer.planner_layer() == l))
                    .collect();
                if models.is_empty() {
                    diag(
                        idx,
                        PlanDiagnosticCode::NoModel,
                        format!(
                            "no behavior model loaded for {}",
                            layer.map_or("any layer".to_string(), |l| format!("layer {l}"))
                        ),
                    );
                    continue;
                }
                let mut sub = 0;
                for (mi, model) in models {
                    let seed = mix_seed(ctx.seed, idx as u64, mi as u64);
                    match generate_fill(model, start, *end, seed) {
                        Ok(actions) => {
                            for a in actions {
                                if a.abstract_kind == TaxonomyKind::StanceTransition {
                                    stance.insert(a.layer, None);
                                }
                                emit(sub, a);
                                sub += 1;
                            }
                        }
                        Err(e) => diag(idx, PlanDiagnosticCode::Generation, e.to_string()),
                    }
                }
            }
            ActionRequest::StanceRequest { .. } => unreachable!("handled above"),
        }
    }

    produced.sort_by_key(|(idx, sub, _)| (*idx, *sub));
    let actions = produced
        .into_iter()
        .enumerate()
        .map(|(i, (_, _, mut a))| {
            a.id = i as u64;
            a
        })
        .collect();
    Normalized { actions, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::ClipMetadata;

    fn graph() -> MetaGraph {
        let mut g = MetaGraph::new();
        g.add_clip(ClipMetadata::stance("rest", Layer::Arms, 4.0)).unwrap();
        g.add_clip(ClipMetadata::stance("hips", Layer::Arms, 4.0)).unwrap();
        g.add_clip(ClipMetadata::stance("far", Layer::Arms, 4.0)).unwrap();
        let mut g7 = ClipMetadata::action("g7", TaxonomyKind::Gesture, Layer::Arms, "rest", 3.0);
        g7.trim_start = 0.5;
        g.add_clip(g7).unwrap();
        g.add_clip(ClipMetadata::transition("up", Layer::Arms, "rest", "hips", 1.2))
            .unwrap();
        g.add_clip(ClipMetadata::transition("down", Layer::Arms, "hips", "rest", 1.0))
            .unwrap();
        g.set_start_stance(Layer::Arms, "rest");
        g
    }

    #[test]
    fn stance_request_for_current_stance_is_dropped() {
        let g = graph();
        let reqs = [ActionRequest::StanceRequest {
            stance: "rest".into(),
            layer: Layer::Arms,
            start: 1.0,
            priority: None,
        }];
        let out = normalize(&reqs, &NormalizeContext::new(&g));
        assert!(out.actions.is_empty());
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn stance_request_becomes_transition() {
        let g = graph();
        let reqs = [ActionRequest::StanceRequest {
            stance: "hips".into(),
            layer: Layer::Arms,
            start: 1.0,
            priority: None,
        }];
        let out = normalize(&reqs, &NormalizeContext::new(&g));
        assert_eq!(out.actions.len(), 1);
        let a = &out.actions[0];
        assert_eq!(a.abstract_kind, TaxonomyKind::StanceTransition);
        assert_eq!(a.target_stance.as_deref(), Some("hips"));
        assert_eq!(a.duration, 1.2);
        assert_eq!(a.priority, PRIORITY_STANCE);
    }

    #[test]
    fn unreachable_stance_is_reported_and_dropped() {
        let g = graph();
        let reqs = [ActionRequest::StanceRequest {
            stance: "far".into(),
            layer: Layer::Arms,
            start: 0.0,
            priority: None,
        }];
        let out = normalize(&reqs, &NormalizeContext::new(&g));
        assert!(out.actions.is_empty());
        assert_eq!(out.diagnostics[0].code, PlanDiagnosticCode::NoTransitionPath);
    }

    #[test]
    fn specific_clip_maps_fields() {
        let g = graph();
        let reqs = [ActionRequest::SpecificClip {
            clip: "g7".into(),
            start: 2.0,
            priority: None,
        }];
        let out = normalize(&reqs, &NormalizeContext::new(&g));
        let a = &out.actions[0];
        assert_eq!(a.abstract_kind, TaxonomyKind::Gesture);
        assert_eq!(a.specific_clip.as_deref(), Some("g7"));
        assert_eq!(a.layer, Layer::Arms);
        assert_eq!(a.start, 2.0);
        assert_eq!(a.duration, 2.5);
        assert_eq!(a.priority, PRIORITY_SPECIFIC);

        let bad = [ActionRequest::SpecificClip {
            clip: "nope".into(),
            start: 0.0,
            priority: None,
        }];
        let out = normalize(&bad, &NormalizeContext::new(&g));
        assert_eq!(out.diagnostics[0].code, PlanDiagnosticCode::UnknownClip);
    }

    #[test]
    fn abstract_action_keeps_semantic() {
        let g = graph();
        let reqs = [ActionRequest::AbstractAction {
            kind: TaxonomyKind::Gesture,
            layer: Layer::Arms,
            semantic: Some("positive".into()),
            side: None,
            start: 1.0,
            duration: None,
            priority: None,
        }];
        let out = normalize(&reqs, &NormalizeContext::new(&g));
        let a = &out.actions[0];
        assert_eq!(a.specific_clip, None);
        assert_eq!(a.semantic.as_deref(), Some("positive"));
        assert_eq!(a.priority, PRIORITY_ABSTRACT);
        assert_eq!(a.duration, 2.5);
    }

    #[test]
    fn stance_tracking_follows_time_order() {
        let g = graph();
        // Arrival order is reversed relative to time.
        let reqs = [
            ActionRequest::StanceRequest {
                stance: "rest".into(),
                layer: Layer::Arms,
                start: 5.0,
                priority: None,
            },
            ActionRequest::StanceRequest {
                stance: "hips".into(),
                layer: Layer::Arms,
                start: 1.0,
                priority: None,
            },
        ];
        let out = normalize(&reqs, &NormalizeContext::new(&g));
        assert_eq!(out.actions.len(), 2);
        // ids follow arrival order
        assert_eq!(out.actions[0].target_stance.as_deref(), Some("rest"));
        assert_eq!(out.actions[0].id, 0);
        assert_eq!(out.actions[1].target_stance.as_deref(), Some("hips"));
    }

    #[test]
    fn unspecified_without_model_is_reported() {
        let g = graph();
        let reqs = [ActionRequest::Unspecified {
            start: 0.0,
            end: 5.0,
            layer: Some(Layer::Arms),
        }];
        let out = normalize(&reqs, &NormalizeContext::new(&g));
        assert!(out.actions.is_empty());
        assert_eq!(out.diagnostics[0].code, PlanDiagnosticCode::NoModel);
    }

    #[test]
    fn request_json_shape() {
        let r: ActionRequest = serde_json::from_str(
            r#"{"type":"abstract_action","kind":"gesture","layer":"arms","semantic":"positive","start":1.0}"#,
        )
        .unwrap();
        assert!(matches!(
            r,
            ActionRequest::AbstractAction {
                side: None,
                duration: None,
                ..
            }
        ));
    }
}
