//! The taxonomy meta-graph and its expansion into an explicit state machine.
//!
//! Clips are indexed by `(stance, node kind)`: every stance owns a bucket of
//! gestures, a bucket of fidgets and a bucket of outgoing transitions. The
//! explicit machine is derived from those buckets by fixed rules, so authoring
//! never wires individual edges.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clip::{ClipLibrary, ClipMetadata, Layer, TaxonomyKind};
use crate::error::GraphError;

/// Meta-node buckets hanging off a stance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Gesture,
    Fidget,
    TransitionOut,
}

impl NodeKind {
    pub fn of(kind: TaxonomyKind) -> Option<NodeKind> {
        match kind {
            TaxonomyKind::Stance => None,
            TaxonomyKind::Gesture => Some(NodeKind::Gesture),
            TaxonomyKind::Fidget => Some(NodeKind::Fidget),
            TaxonomyKind::StanceTransition => Some(NodeKind::TransitionOut),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    InvalidClip,
    LoopingNonStance,
    MissingStance,
    TransitionTargetMissing,
    LayerMismatch,
    StartStanceInvalid,
    NoStartStance,
    UnreachableStance,
    EmptyStance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn error(code: DiagnosticCode, clip: Option<&str>, message: String) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            clip: clip.map(str::to_owned),
            message,
        }
    }

    fn warning(code: DiagnosticCode, clip: Option<&str>, message: String) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(code, clip, message)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

/// Multi-index map from `(stance, node kind)` to compatible clips.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaGraph {
    stances: BTreeMap<String, Layer>,
    index: BTreeMap<(String, NodeKind), Vec<String>>,
    clips: BTreeMap<String, ClipMetadata>,
    start_stances: BTreeMap<Layer, String>,
}

impl MetaGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds the graph from a library, stances first.
    pub fn from_library(library: &ClipLibrary) -> Result<Self, GraphError> {
        let mut graph = MetaGraph {
            start_stances: library.start_stances.clone(),
            ..Default::default()
        };
        let (stances, others): (Vec<_>, Vec<_>) = library.clips.iter().partition(|c| c.kind == TaxonomyKind::Stance);
        for clip in stances.into_iter().chain(others) {
            graph.add_clip(clip.clone())?;
        }
        Ok(graph)
    }

    pub fn set_start_stance(&mut self, layer: Layer, stance: impl Into<String>) {
        self.start_stances.insert(layer, stance.into());
    }

    pub fn start_stances(&self) -> &BTreeMap<Layer, String> {
        &self.start_stances
    }

    /// Declared start stance of a layer, else its first stance by id.
    pub fn start_stance(&self, layer: Layer) -> Option<&str> {
        self.start_stances
            .get(&layer)
            .map(String::as_str)
            .or_else(|| self.stances_on(layer).next())
    }

    /// Routes a clip into its bucket. A stance clip opens a new stance.
    pub fn add_clip(&mut self, clip: ClipMetadata) -> Result<(), GraphError> {
        if self.clips.contains_key(&clip.id) {
            return Err(GraphError::DuplicateId(clip.id));
        }
        clip.validate()?;
        match NodeKind::of(clip.kind) {
            None => {
                self.stances.insert(clip.id.clone(), clip.layer);
            }
            Some(node) => {
                let owner = clip.stance.clone().unwrap_or_default();
                for stance in [Some(&owner), clip.to_stance.as_ref()].into_iter().flatten() {
                    if !self.stances.contains_key(stance) {
                        return Err(GraphError::UnknownStance {
                            clip: clip.id.clone(),
                            stance: stance.clone(),
                        });
                    }
                }
                self.index.entry((owner, node)).or_default().push(clip.id.clone());
            }
        }
        self.clips.insert(clip.id.clone(), clip);
        Ok(())
    }

    /// Removes a clip without touching clips that reference it.
    pub fn remove_clip(&mut self, id: &str) -> Result<ClipMetadata, GraphError> {
        let clip = self
            .clips
            .remove(id)
            .ok_or_else(|| GraphError::UnknownClip(id.to_owned()))?;
        match NodeKind::of(clip.kind) {
            None => {
                self.stances.remove(id);
            }
            Some(node) => {
                let key = (clip.stance.clone().unwrap_or_default(), node);
                if let Some(bucket) = self.index.get_mut(&key) {
                    bucket.retain(|c| c != id);
                    if bucket.is_empty() {
                        self.index.remove(&key);
                    }
                }
            }
        }
        Ok(clip)
    }

    /// Clips whose `stance` or `to_stance` names `stance`.
    pub fn dependents(&self, stance: &str) -> Vec<&str> {
        self.clips
            .values()
            .filter(|c| {
                c.kind != TaxonomyKind::Stance
                    && (c.stance.as_deref() == Some(stance) || c.to_stance.as_deref() == Some(stance))
            })
            .map(|c| c.id.as_str())
            .collect()
    }

    pub fn clip(&self, id: &str) -> Option<&ClipMetadata> {
        self.clips.get(id)
    }

    pub fn clips(&self) -> impl Iterator<Item = &ClipMetadata> {
        self.clips.values()
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn is_stance(&self, id: &str) -> bool {
        self.stances.contains_key(id)
    }

    pub fn stance_layer(&self, id: &str) -> Option<Layer> {
        self.stances.get(id).copied()
    }

    pub fn stances(&self) -> impl Iterator<Item = (&str, Layer)> {
        self.stances.iter().map(|(s, l)| (s.as_str(), *l))
    }

    pub fn stances_on(&self, layer: Layer) -> impl Iterator<Item = &str> {
        self.stances
            .iter()
            .filter(move |(_, l)| **l == layer)
            .map(|(s, _)| s.as_str())
    }

    pub fn bucket(&self, stance: &str, node: NodeKind) -> &[String] {
        self.index
            .get(&(stance.to_owned(), node))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Transition clips leading directly from `from` to `to`.
    pub fn transitions_between<'a>(&'a self, from: &str, to: &'a str) -> impl Iterator<Item = &'a ClipMetadata> + 'a {
        self.bucket(from, NodeKind::TransitionOut)
            .iter()
            .filter_map(|id| self.clips.get(id))
            .filter(move |c| c.to_stance.as_deref() == Some(to))
    }

    /// Shortest stance sequence from `from` to `to` (both included) along
    /// transition clips, preferring lexicographically smaller stances.
    pub fn stance_path(&self, from: &str, to: &str) -> Option<Vec<String>> {
        if from == to {
            return Some(vec![from.to_owned()]);
        }
        let mut prev: BTreeMap<&str, &str> = BTreeMap::new();
        let mut queue = VecDeque::from([from]);
        while let Some(s) = queue.pop_front() {
            let targets: BTreeSet<&str> = self
                .bucket(s, NodeKind::TransitionOut)
                .iter()
                .filter_map(|id| self.clips.get(id)?.to_stance.as_deref())
                .filter(|t| self.stances.contains_key(*t))
                .collect();
            for t in targets {
                if t == from || prev.contains_key(t) {
                    continue;
                }
                prev.insert(t, s);
                if t == to {
                    let mut path = vec![to.to_owned()];
                    let mut cur = to;
                    while let Some(p) = prev.get(cur) {
                        path.push((*p).to_owned());
                        cur = p;
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(t);
            }
        }
        None
    }

    /// Structural diagnostics. Errors block expansion; warnings do not.
    pub fn validate(&self) -> Vec<Diagnostic> {
        use DiagnosticCode::*;
        let mut out = Vec::new();

        for clip in self.clips.values() {
            let id = Some(clip.id.as_str());
            if clip.looping && clip.kind != TaxonomyKind::Stance {
                out.push(Diagnostic::error(
                    LoopingNonStance,
                    id,
                    format!("{} clip '{}' is marked looping", clip.kind, clip.id),
                ));
            } else if let Err(e) = clip.validate() {
                out.push(Diagnostic::error(InvalidClip, id, e.to_string()));
            }
            if clip.kind == TaxonomyKind::Stance {
                continue;
            }
            if let Some(owner) = clip.stance.as_deref() {
                match self.stances.get(owner) {
                    None => out.push(Diagnostic::error(
                        MissingStance,
                        id,
                        format!("clip '{}' belongs to missing stance '{owner}'", clip.id),
                    )),
                    Some(layer) if *layer != clip.layer => out.push(Diagnostic::error(
                        LayerMismatch,
                        id,
                        format!(
                            "clip '{}' is on layer {} but its stance '{owner}' is on layer {layer}",
                            clip.id, clip.layer
                        ),
                    )),
                    _ => {}
                }
            }
            if let Some(target) = clip.to_stance.as_deref() {
                match self.stances.get(target) {
                    None => out.push(Diagnostic::error(
                        TransitionTargetMissing,
                        id,
                        format!("transition '{}' leads to missing stance '{target}'", clip.id),
                    )),
                    Some(layer) if *layer != clip.layer => out.push(Diagnostic::error(
                        LayerMismatch,
                        id,
                        format!(
                            "transition '{}' on layer {} targets stance '{target}' on layer {layer}",
                            clip.id, clip.layer
                        ),
                    )),
                    _ => {}
                }
            }
        }

        for (layer, start) in &self.start_stances {
            if self.stances.get(start) != Some(layer) {
                out.push(Diagnostic::error(
                    StartStanceInvalid,
                    Some(start),
                    format!("start stance '{start}' of layer {layer} is not a {layer} stance"),
                ));
            }
        }

        for layer in Layer::ALL {
            let stances: Vec<&str> = self.stances_on(layer).collect();
            if stances.is_empty() {
                continue;
            }
            let start = match self.start_stances.get(&layer) {
                Some(s) if self.stances.get(s) == Some(&layer) => s.as_str(),
                Some(_) => continue,
                None => {
                    out.push(Diagnostic::warning(
                        NoStartStance,
                        None,
                        format!("layer {layer} declares no start stance; using '{}'", stances[0]),
                    ));
                    stances[0]
                }
            };
            let reachable = self.reachable_from(start);
            for s in &stances {
                if !reachable.contains(s) {
                    out.push(Diagnostic::warning(
                        UnreachableStance,
                        Some(s),
                        format!("stance '{s}' cannot be reached from start stance '{start}'"),
                    ));
                }
            }
        }

        for stance in self.stances.keys() {
            if self.bucket(stance, NodeKind::Gesture).is_empty() && self.bucket(stance, NodeKind::Fidget).is_empty() {
                out.push(Diagnostic::warning(
                    EmptyStance,
                    Some(stance),
                    format!("stance '{stance}' has no gestures or fidgets"),
                ));
            }
        }
        out
    }

    fn reachable_from<'a>(&'a self, start: &'a str) -> BTreeSet<&'a str> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            for id in self.bucket(s, NodeKind::TransitionOut) {
                let Some(t) = self.clips.get(id).and_then(|c| c.to_stance.as_deref()) else {
                    continue;
                };
                if self.stances.contains_key(t) && seen.insert(t) {
                    queue.push_back(t);
                }
            }
        }
        seen
    }

    /// Expands the meta-graph into the explicit state machine.
    ///
    /// Edges: each stance loops on itself and connects to its gestures,
    /// fidgets and outgoing transitions; each gesture and fidget returns to
    /// its stance; each transition enters its target stance.
    pub fn expand(&self, start_stance: &str) -> Result<ExplicitStateMachine, GraphError> {
        let errors = self.validate().iter().filter(|d| d.is_error()).count();
        if errors > 0 {
            return Err(GraphError::Validation(errors));
        }
        if !self.stances.contains_key(start_stance) {
            return Err(GraphError::UnknownStance {
                clip: String::new(),
                stance: start_stance.to_owned(),
            });
        }

        let nodes = self
            .clips
            .values()
            .map(|c| MachineNode {
                id: c.id.clone(),
                kind: c.kind,
                layer: c.layer,
            })
            .collect();

        let mut edges = Vec::new();
        let mut edge = |from: &ClipMetadata, to: &str| {
            edges.push(MachineEdge {
                from: from.id.clone(),
                to: to.to_owned(),
                exit_time: from.exit_time(to),
            })
        };
        for clip in self.clips.values() {
            match clip.kind {
                TaxonomyKind::Stance => {
                    edge(clip, &clip.id);
                    for node in [NodeKind::Gesture, NodeKind::Fidget, NodeKind::TransitionOut] {
                        for target in self.bucket(&clip.id, node) {
                            edge(clip, target);
                        }
                    }
                }
                TaxonomyKind::Gesture | TaxonomyKind::Fidget => edge(clip, clip.stance.as_deref().unwrap_or_default()),
                TaxonomyKind::StanceTransition => edge(clip, clip.to_stance.as_deref().unwrap_or_default()),
            }
        }
        edges.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));

        Ok(ExplicitStateMachine {
            entry: start_stance.to_owned(),
            nodes,
            edges,
        })
    }

    /// Read-only view grouped by stance and meta-node kind.
    pub fn view(&self) -> GraphView {
        let stances = self
            .stances
            .iter()
            .map(|(id, layer)| {
                let mut transitions_out: BTreeMap<String, Vec<String>> = BTreeMap::new();
                for t in self.bucket(id, NodeKind::TransitionOut) {
                    let target = self.clips.get(t).and_then(|c| c.to_stance.clone()).unwrap_or_default();
                    transitions_out.entry(target).or_default().push(t.clone());
                }
                StanceView {
                    id: id.clone(),
                    layer: *layer,
                    gestures: self.bucket(id, NodeKind::Gesture).to_vec(),
                    fidgets: self.bucket(id, NodeKind::Fidget).to_vec(),
                    transitions_out,
                }
            })
            .collect();
        GraphView {
            start_stances: self.start_stances.clone(),
            stances,
            clips: self.clips.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceView {
    pub id: String,
    pub layer: Layer,
    pub gestures: Vec<String>,
    pub fidgets: Vec<String>,
    /// Outgoing transitions grouped by target stance.
    pub transitions_out: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphView {
    pub start_stances: BTreeMap<Layer, String>,
    pub stances: Vec<StanceView>,
    pub clips: BTreeMap<String, ClipMetadata>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineNode {
    pub id: String,
    pub kind: TaxonomyKind,
    pub layer: Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineEdge {
    pub from: String,
    pub to: String,
    /// Earliest clip-local time at which the source may be left.
    pub exit_time: f64,
}

/// Every clip as a node with all its connectivity spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitStateMachine {
    pub entry: String,
    pub nodes: Vec<MachineNode>,
    pub edges: Vec<MachineEdge>,
}

impl ExplicitStateMachine {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("machine serializes")
    }

    /// Graphviz rendering; stances are drawn as double circles.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph state_machine {\n  rankdir=LR;\n");
        let _ = writeln!(out, "  __entry [shape=point];\n  __entry -> \"{}\";", self.entry);
        for n in &self.nodes {
            let shape = match n.kind {
                TaxonomyKind::Stance => "doublecircle",
                TaxonomyKind::Gesture => "ellipse",
                TaxonomyKind::Fidget => "box",
                TaxonomyKind::StanceTransition => "diamond",
            };
            let _ = writeln!(
                out,
                "  \"{}\" [shape={shape}, label=\"{}\\n{} / {}\"];",
                n.id, n.id, n.kind, n.layer
            );
        }
        for e in &self.edges {
            let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"{}\"];", e.from, e.to, e.exit_time);
        }
        out.push_str("}\n");
        out
    }
}
