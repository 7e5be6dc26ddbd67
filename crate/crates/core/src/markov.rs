//! First-order Markov models of abstract actions, one chain per layer.
//!
//! States are strings so that models stay readable as JSON:
//!
//! - arms: `{L,R,LR}-{G,F,T}`, e.g. `LR-F`
//! - head action: `nod`, `shake`, `none`
//! - head stance and body: `T`, `none`
//!
//! In expanded semantic mode, observed semantic tags add states such as
//! `L-G+positive`. `none` states stand for the stretches between annotated
//! intervals; they advance time but emit nothing.
//!
//! Timing is not modelled parametrically. Every state keeps the
//! `(duration, gap)` pairs seen in the corpus and generation resamples them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationDoc, Interval, Label, Tier};
use crate::clip::{Layer, TaxonomyKind};
use crate::error::MarkovError;
use crate::planner::{ActionRequest, MetaAction, Side, PRIORITY_MARKOV, TIME_EPS};

pub const NONE_STATE: &str = "none";

/// Row sums must be within this of 1.
pub const ROW_TOLERANCE: f64 = 1e-9;

const MAX_IDLE_STEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkovLayer {
    Arms,
    HeadAction,
    HeadStance,
    Body,
}

impl MarkovLayer {
    pub const ALL: [MarkovLayer; 4] = [
        MarkovLayer::Arms,
        MarkovLayer::HeadAction,
        MarkovLayer::HeadStance,
        MarkovLayer::Body,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MarkovLayer::Arms => "arms",
            MarkovLayer::HeadAction => "head_action",
            MarkovLayer::HeadStance => "head_stance",
            MarkovLayer::Body => "body",
        }
    }

    /// Animation layer the generated actions play on.
    pub fn planner_layer(self) -> Layer {
        match self {
            MarkovLayer::Arms => Layer::Arms,
            MarkovLayer::HeadAction | MarkovLayer::HeadStance => Layer::Head,
            MarkovLayer::Body => Layer::Body,
        }
    }

    /// Base states in canonical order.
    pub fn base_states(self) -> Vec<String> {
        match self {
            MarkovLayer::Arms => ["G", "F", "T"]
                .iter()
                .flat_map(|k| Side::ALL.iter().map(move |s| format!("{s}-{k}")))
                .collect(),
            MarkovLayer::HeadAction => vec!["nod".into(), "shake".into(), NONE_STATE.into()],
            MarkovLayer::HeadStance | MarkovLayer::Body => vec!["T".into(), NONE_STATE.into()],
        }
    }

    fn tiers(self) -> &'static [Tier] {
        match self {
            MarkovLayer::Arms => &[Tier::LeftArm, Tier::RightArm],
            MarkovLayer::HeadAction => &[Tier::HeadAction],
            MarkovLayer::HeadStance => &[Tier::HeadStance],
            MarkovLayer::Body => &[Tier::Legs],
        }
    }
}

impl fmt::Display for MarkovLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarkovLayer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        MarkovLayer::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown markov layer '{s}' (expected arms, head_action, head_stance or body)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticMode {
    /// Sample a tag from the per-state distribution after choosing a state.
    #[default]
    PostHoc,
    /// Tagged actions are states of their own.
    Expanded,
}

impl FromStr for SemanticMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "post_hoc" | "post-hoc" => Ok(SemanticMode::PostHoc),
            "expanded" => Ok(SemanticMode::Expanded),
            _ => Err(format!("unknown semantic mode '{s}' (expected post_hoc or expanded)")),
        }
    }
}

/// Tag distribution of one state. `untagged` and `tags` sum to 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticDist {
    pub untagged: f64,
    pub tags: BTreeMap<String, f64>,
}

/// Serialized shape of a model; checked on the way in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDoc {
    layer: MarkovLayer,
    #[serde(default)]
    semantic_mode: SemanticMode,
    states: Vec<String>,
    matrix: Vec<Vec<f64>>,
    initial: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    semantics: BTreeMap<String, SemanticDist>,
    #[serde(default)]
    durations: BTreeMap<String, Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct MarkovModel {
    pub layer: MarkovLayer,
    pub semantic_mode: SemanticMode,
    states: Vec<String>,
    /// Row-major, `matrix[i][j] = P(j | i)`.
    matrix: Vec<Vec<f64>>,
    /// Distribution of the first state when none is given.
    initial: Vec<f64>,
    semantics: BTreeMap<String, SemanticDist>,
    /// Observed `(duration, gap to next)` pairs per state.
    durations: BTreeMap<String, Vec<(f64, f64)>>,
}

impl TryFrom<ModelDoc> for MarkovModel {
    type Error = MarkovError;

    fn try_from(d: ModelDoc) -> Result<Self, MarkovError> {
        let bad = |m: String| Err(MarkovError::InvalidModel(m));
        let n = d.states.len();
        if n == 0 {
            return bad("no states".into());
        }
        if d.states.iter().collect::<BTreeSet<_>>().len() != n {
            return bad("duplicate state names".into());
        }
        if d.matrix.len() != n || d.matrix.iter().any(|r| r.len() != n) {
            return bad(format!("matrix must be {n}x{n}"));
        }
        for (i, row) in d.matrix.iter().enumerate() {
            if let Err(m) = check_distribution(row) {
                return bad(format!("row '{}': {m}", d.states[i]));
            }
        }
        if d.initial.len() != n {
            return bad(format!("initial distribution must have {n} entries"));
        }
        if let Err(m) = check_distribution(&d.initial) {
            return bad(format!("initial distribution: {m}"));
        }
        for (state, pairs) in &d.durations {
            if !d.states.contains(state) {
                return bad(format!("durations for unknown state '{state}'"));
            }
            if pairs
                .iter()
                .any(|&(a, b)| !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()))
            {
                return bad(format!("negative or non-finite timing for state '{state}'"));
            }
        }
        for (state, dist) in &d.semantics {
            if !d.states.contains(state) {
                return bad(format!("semantics for unknown state '{state}'"));
            }
            let total = dist.untagged + dist.tags.values().sum::<f64>();
            if dist.untagged < 0.0 || dist.tags.values().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-6 {
                return bad(format!("semantic distribution of '{state}' does not sum to 1"));
            }
        }
        Ok(MarkovModel {
            layer: d.layer,
            semantic_mode: d.semantic_mode,
            states: d.states,
            matrix: d.matrix,
            initial: d.initial,
            semantics: d.semantics,
            durations: d.durations,
        })
    }
}

impl From<MarkovModel> for ModelDoc {
    fn from(m: MarkovModel) -> Self {
        ModelDoc {
            layer: m.layer,
            semantic_mode: m.semantic_mode,
            states: m.states,
            matrix: m.matrix,
            initial: m.initial,
            semantics: m.semantics,
            durations: m.durations,
        }
    }
}

fn check_distribution(p: &[f64]) -> Result<(), String> {
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err("negative or non-finite probability".into());
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

impl MarkovModel {
    /// Builds a model from explicit parts. Durations and semantics may be
    /// empty; the rest must form a valid chain.
    pub fn new(
        layer: MarkovLayer,
        states: Vec<String>,
        matrix: Vec<Vec<f64>>,
        initial: Vec<f64>,
        durations: BTreeMap<String, Vec<(f64, f64)>>,
    ) -> Result<Self, MarkovError> {
        ModelDoc {
            layer,
            semantic_mode: SemanticMode::PostHoc,
            states,
            matrix,
            initial,
            semantics: BTreeMap::new(),
            durations,
        }
        .try_into()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn semantics(&self, state: &str) -> Option<&SemanticDist> {
        self.semantics.get(state)
    }

    pub fn durations(&self, state: &str) -> &[(f64, f64)] {
        self.durations.get(state).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn state_index(&self, state: &str) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }

    /// `P(to | from)`, or `None` if either state is unknown.
    pub fn probability(&self, from: &str, to: &str) -> Option<f64> {
        Some(self.matrix[self.state_index(from)?][self.state_index(to)?])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// One annotated event on a Markov layer.
#[derive(Debug, Clone)]
struct Event {
    state: String,
    semantic: Option<String>,
    start: f64,
    end: f64,
}

fn base_label(layer: MarkovLayer, tier: Tier, label: Label, time: f64) -> Result<String, MarkovError> {
    let code = match (layer, label) {
        (MarkovLayer::Arms, Label::Gesture) => "G",
        (MarkovLayer::Arms, Label::Fidget) => "F",
        (MarkovLayer::Arms, Label::StanceTransition) => "T",
        (MarkovLayer::HeadAction, Label::Nodding) => return Ok("nod".into()),
        (MarkovLayer::HeadAction, Label::Shaking) => return Ok("shake".into()),
        (MarkovLayer::HeadStance | MarkovLayer::Body, Label::StanceTransition) => return Ok("T".into()),
        _ => {
            return Err(MarkovError::UnknownLabel {
                tier: tier.to_string(),
                time,
                layer: layer.to_string(),
            })
        }
    };
    Ok(code.to_owned())
}

/// Time-ordered events of `layer` in one document.
fn events(doc: &AnnotationDoc, layer: MarkovLayer) -> Result<Vec<Event>, MarkovError> {
    let mut out = Vec::new();
    if layer == MarkovLayer::Arms {
        let left = doc.tier(Tier::LeftArm);
        let right = doc.tier(Tier::RightArm);
        let mut paired = vec![false; right.len()];
        let mut lo = 0;
        for l in left {
            let code = base_label(layer, Tier::LeftArm, l.label, l.start)?;
            while lo < right.len() && right[lo].end <= l.start {
                lo += 1;
            }
            // Both arms doing the same kind of action at once count as LR.
            let partner = (lo..right.len())
                .take_while(|&j| right[j].start < l.end)
                .find(|&j| !paired[j] && right[j].label == l.label);
            match partner {
                Some(j) => {
                    paired[j] = true;
                    let r = &right[j];
                    out.push(Event {
                        state: format!("LR-{code}"),
                        semantic: l.semantic.clone().or_else(|| r.semantic.clone()),
                        start: l.start.min(r.start),
                        end: l.end.max(r.end),
                    });
                }
                None => out.push(event("L-", &code, l)),
            }
        }
        for (r, used) in right.iter().zip(&paired) {
            if !used {
                let code = base_label(layer, Tier::RightArm, r.label, r.start)?;
                out.push(event("R-", &code, r));
            }
        }
        out.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.state.cmp(&b.state)));
        return Ok(out);
    }

    let tier = layer.tiers()[0];
    let list = doc.tier(tier);
    for (k, i) in list.iter().enumerate() {
        out.push(event("", &base_label(layer, tier, i.label, i.start)?, i));
        if let Some(next) = list.get(k + 1) {
            if next.start - i.end > TIME_EPS {
                out.push(Event {
                    state: NONE_STATE.into(),
                    semantic: None,
                    start: i.end,
                    end: next.start,
                });
            }
        }
    }
    Ok(out)
}

fn event(prefix: &str, code: &str, i: &Interval) -> Event {
    Event {
        state: format!("{prefix}{code}"),
        semantic: i.semantic.clone(),
        start: i.start,
        end: i.end,
    }
}

/// Estimates a model for `layer` from an annotation corpus.
///
/// Transition probabilities are maximum-likelihood counts plus `smoothing`
/// on every entry, renormalized per row. Rows of states never left in the
/// corpus (and with zero smoothing) fall back to the overall state
/// frequencies, which also serve as the initial distribution.
pub fn learn(
    docs: &[AnnotationDoc],
    layer: MarkovLayer,
    mode: SemanticMode,
    smoothing: f64,
) -> Result<MarkovModel, MarkovError> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(MarkovError::InvalidModel(format!("smoothing {smoothing} must be >= 0")));
    }
    let mut sequences = Vec::with_capacity(docs.len());
    for doc in docs {
        let mut evs = events(doc, layer)?;
        if mode == SemanticMode::Expanded {
            for e in &mut evs {
                if let Some(sem) = e.semantic.take() {
                    e.state = format!("{}+{sem}", e.state);
                }
            }
        }
        sequences.push(evs);
    }

    let mut states = layer.base_states();
    let extra: BTreeSet<&String> = sequences
        .iter()
        .flatten()
        .map(|e| &e.state)
        .filter(|s| !states.contains(s))
        .collect();
    let extra: Vec<String> = extra.into_iter().cloned().collect();
    states.extend(extra);
    let index: BTreeMap<&str, usize> = states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = states.len();

    let mut counts = vec![vec![0.0; n]; n];
    let mut occurrences = vec![0.0; n];
    let mut transitions = 0usize;
    let mut durations: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut tag_counts: BTreeMap<String, (f64, BTreeMap<String, f64>)> = BTreeMap::new();

    for seq in &sequences {
        for (k, e) in seq.iter().enumerate() {
            let i = index[e.state.as_str()];
            occurrences[i] += 1.0;
            let gap = seq.get(k + 1).map_or(0.0, |n| (n.start - e.end).max(0.0));
            durations
                .entry(e.state.clone())
                .or_default()
                .push((e.end - e.start, gap));
            if let Some(next) = seq.get(k + 1) {
                counts[i][index[next.state.as_str()]] += 1.0;
                transitions += 1;
            }
            if mode == SemanticMode::PostHoc && e.state != NONE_STATE {
                let entry = tag_counts.entry(e.state.clone()).or_default();
                match &e.semantic {
                    Some(t) => *entry.1.entry(t.clone()).or_insert(0.0) += 1.0,
                    None => entry.0 += 1.0,
                }
            }
        }
    }
    if transitions == 0 {
        return Err(MarkovError::EmptyCorpus(layer.to_string()));
    }

    let total: f64 = occurrences.iter().map(|c| c + smoothing).sum();
    let initial: Vec<f64> = occurrences.iter().map(|c| (c + smoothing) / total).collect();
    let matrix = counts
        .into_iter()
        .map(|row| {
            let sum: f64 = row.iter().map(|c| c + smoothing).sum();
            if sum > 0.0 {
                row.iter().map(|c| (c + smoothing) / sum).collect()
            } else {
                initial.clone()
            }
        })
        .collect();

    let semantics = tag_counts
        .into_iter()
        .filter(|(_, (_, tags))| !tags.is_empty())
        .map(|(state, (untagged, tags))| {
            let total = untagged + tags.values().sum::<f64>();
            let dist = SemanticDist {
                untagged: untagged / total,
                tags: tags.into_iter().map(|(t, c)| (t, c / total)).collect(),
            };
            (state, dist)
        })
        .collect();

    Ok(MarkovModel {
        layer,
        semantic_mode: mode,
        states,
        matrix,
        initial,
        semantics,
        durations,
    })
}

/// One step of a generated sequence. `none` steps are included so the
/// visited state sequence is complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStep {
    pub state: String,
    pub start: f64,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<String>,
}

/// What a state means as an action: kind, arm side and built-in semantic.
pub fn state_action(state: &str) -> Option<(TaxonomyKind, Option<Side>, Option<String>)> {
    let (base, tag) = match state.split_once('+') {
        Some((b, t)) => (b, Some(t.to_owned())),
        None => (state, None),
    };
    let kind_of = |c: &str| match c {
        "G" => Some(TaxonomyKind::Gesture),
        "F" => Some(TaxonomyKind::Fidget),
        "T" => Some(TaxonomyKind::StanceTransition),
        _ => None,
    };
    match base {
        NONE_STATE => None,
        "nod" => Some((
            TaxonomyKind::Gesture,
            None,
            tag.or(Label::Nodding.default_semantic().map(Into::into)),
        )),
        "shake" => Some((
            TaxonomyKind::Gesture,
            None,
            tag.or(Label::Shaking.default_semantic().map(Into::into)),
        )),
        _ => match base.split_once('-') {
            Some((side, code)) => {
                let side = Side::ALL.into_iter().find(|s| s.as_str() == side)?;
                Some((kind_of(code)?, Some(side), tag))
            }
            None => Some((kind_of(base)?, None, tag)),
        },
    }
}

impl GeneratedStep {
    /// The abstract action this step stands for, if it is not a pause.
    pub fn to_request(&self, layer: Layer) -> Option<ActionRequest> {
        let (kind, side, builtin) = state_action(&self.state)?;
        Some(ActionRequest::AbstractAction {
            kind,
            layer,
            semantic: self.semantic.clone().or(builtin),
            side,
            start: self.start,
            duration: Some(self.duration),
            priority: Some(PRIORITY_MARKOV),
        })
    }
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    WeightedIndex::new(weights).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Samples states from `model` until time `horizon` (seconds from 0).
///
/// Each visited state draws one observed `(duration, gap)` pair, falling
/// back to the pool of all pairs when the state has none. Steps never
/// overlap; the last step may run past the horizon.
pub fn generate(
    model: &MarkovModel,
    horizon: f64,
    seed: u64,
    start_state: Option<&str>,
) -> Result<Vec<GeneratedStep>, MarkovError> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(MarkovError::Horizon(horizon));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = match start_state {
        Some(s) => model
            .state_index(s)
            .ok_or_else(|| MarkovError::UnknownState(s.to_owned()))?,
        None => sample_index(&mut rng, &model.initial),
    };
    let pooled: Vec<(f64, f64)> = model.durations.values().flatten().copied().collect();

    let mut out = Vec::new();
    let mut t = 0.0;
    let mut idle = 0;
    while t < horizon {
        let name = &model.states[state];
        let own = model.durations(name);
        let pool = if own.is_empty() { pooled.as_slice() } else { own };
        let (duration, gap) = if pool.is_empty() {
            (0.0, 0.0)
        } else {
            pool[rng.random_range(0..pool.len())]
        };

        if duration + gap <= 0.0 {
            if model.matrix[state][state] >= 1.0 {
                return Err(MarkovError::ZeroDurationAbsorbing(name.clone()));
            }
            idle += 1;
            if idle > MAX_IDLE_STEPS {
                return Err(MarkovError::Stalled(idle));
            }
        } else {
            idle = 0;
        }

        if duration > 0.0 {
            let semantic = match (model.semantic_mode, model.semantics.get(name)) {
                (SemanticMode::PostHoc, Some(dist)) => {
                    let mut weights = vec![dist.untagged];
                    weights.extend(dist.tags.values());
                    match sample_index(&mut rng, &weights) {
                        0 => None,
                        k => dist.tags.keys().nth(k - 1).cloned(),
                    }
                }
                _ => None,
            };
            out.push(GeneratedStep {
                state: name.clone(),
                start: t,
                duration,
                semantic,
            });
        }
        t += duration + gap;
        state = sample_index(&mut rng, &model.matrix[state]);
    }
    Ok(out)
}

/// Generated actions for `[start, end]` as meta actions at Markov priority.
///
/// The sequence is shifted to begin at `start` and the last action is cut
/// at `end`. Ids are left at 0 for the caller to assign.
pub fn generate_fill(model: &MarkovModel, start: f64, end: f64, seed: u64) -> Result<Vec<MetaAction>, MarkovError> {
    if !(end - start > TIME_EPS) {
        return Ok(Vec::new());
    }
    let layer = model.layer.planner_layer();
    let steps = generate(model, end - start, seed, None)?;
    Ok(steps
        .into_iter()
        .filter_map(|s| {
            let (kind, side, builtin) = state_action(&s.state)?;
            let a_start = start + s.start;
            let a_end = (a_start + s.duration).min(end);
            (a_end - a_start > TIME_EPS).then(|| MetaAction {
                id: 0,
                abstract_kind: kind,
                specific_clip: None,
                layer,
                semantic: s.semantic.or(builtin),
                side,
                target_stance: None,
                start: a_start,
                duration: a_end - a_start,
                priority: PRIORITY_MARKOV,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arms_doc(seq: &[(f64, f64, Label)]) -> AnnotationDoc {
        let mut doc = AnnotationDoc::new(100.0);
        for &(s, e, l) in seq {
            doc.insert(Tier::LeftArm, Interval::new(s, e, l)).unwrap();
        }
        doc
    }

    #[test]
    fn forced_counts() {
        let doc = arms_doc(&[
            (0.0, 1.0, Label::Gesture),
            (2.0, 3.0, Label::Fidget),
            (4.0, 5.0, Label::Gesture),
            (6.0, 7.0, Label::Fidget),
        ]);
        let m = learn(&[doc], MarkovLayer::Arms, SemanticMode::PostHoc, 0.0).unwrap();
        assert_eq!(m.probability("L-G", "L-F"), Some(1.0));
        assert_eq!(m.probability("L-F", "L-G"), Some(1.0));
        for row in m.matrix() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE);
        }
    }

    #[test]
    fn simultaneous_arms_merge() {
        let mut doc = AnnotationDoc::new(20.0);
        doc.insert(Tier::LeftArm, Interval::new(1.0, 3.0, Label::Gesture))
            .unwrap();
        doc.insert(Tier::RightArm, Interval::new(1.5, 3.5, Label::Gesture))
            .unwrap();
        doc.insert(Tier::RightArm, Interval::new(5.0, 6.0, Label::Fidget))
            .unwrap();
        let evs = events(&doc, MarkovLayer::Arms).unwrap();
        let states: Vec<&str> = evs.iter().map(|e| e.state.as_str()).collect();
        assert_eq!(states, ["LR-G", "R-F"]);
        assert_eq!((evs[0].start, evs[0].end), (1.0, 3.5));
    }

    #[test]
    fn head_gaps_become_none() {
        let mut doc = AnnotationDoc::new(20.0);
        doc.insert(Tier::HeadAction, Interval::new(1.0, 2.0, Label::Nodding))
            .unwrap();
        doc.insert(Tier::HeadAction, Interval::new(4.0, 5.0, Label::Shaking))
            .unwrap();
        doc.insert(Tier::HeadAction, Interval::new(5.0, 6.0, Label::Nodding))
            .unwrap();
        let evs = events(&doc, MarkovLayer::HeadAction).unwrap();
        let states: Vec<&str> = evs.iter().map(|e| e.state.as_str()).collect();
        assert_eq!(states, ["nod", "none", "shake", "nod"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let doc = arms_doc(&[(0.0, 1.0, Label::Gesture)]);
        assert_eq!(
            learn(&[doc], MarkovLayer::Arms, SemanticMode::PostHoc, 0.0).unwrap_err(),
            MarkovError::EmptyCorpus("arms".into())
        );
    }

    #[test]
    fn expanded_mode_adds_states() {
        let mut doc = AnnotationDoc::new(20.0);
        doc.insert(
            Tier::LeftArm,
            Interval::new(0.0, 1.0, Label::Gesture).with_semantic("positive"),
        )
        .unwrap();
        doc.insert(Tier::LeftArm, Interval::new(2.0, 3.0, Label::Gesture))
            .unwrap();
        let m = learn(&[doc], MarkovLayer::Arms, SemanticMode::Expanded, 0.0).unwrap();
        assert_eq!(m.states().len(), 10);
        assert_eq!(m.probability("L-G+positive", "L-G"), Some(1.0));
    }

    #[test]
    fn post_hoc_semantics() {
        let mut doc = AnnotationDoc::new(20.0);
        doc.insert(
            Tier::LeftArm,
            Interval::new(0.0, 1.0, Label::Gesture).with_semantic("positive"),
        )
        .unwrap();
        doc.insert(Tier::LeftArm, Interval::new(2.0, 3.0, Label::Gesture))
            .unwrap();
        let m = learn(&[doc], MarkovLayer::Arms, SemanticMode::PostHoc, 0.0).unwrap();
        let dist = m.semantics("L-G").unwrap();
        assert_eq!(dist.untagged, 0.5);
        assert_eq!(dist.tags["positive"], 0.5);
    }

    fn cycle() -> MarkovModel {
        MarkovModel::new(
            MarkovLayer::Arms,
            vec!["L-G".into(), "L-F".into()],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1.0, 0.0],
            BTreeMap::from([("L-G".into(), vec![(1.0, 0.5)]), ("L-F".into(), vec![(2.0, 0.0)])]),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_cycle_alternates() {
        let steps = generate(&cycle(), 30.0, 7, None).unwrap();
        for w in steps.windows(2) {
            assert_ne!(w[0].state, w[1].state);
            assert!(w[0].start + w[0].duration <= w[1].start);
        }
        assert_eq!(steps[0].state, "L-G");
    }

    #[test]
    fn short_horizon() {
        let steps = generate(&cycle(), 0.5, 1, None).unwrap();
        assert_eq!(steps.len(), 1);
        assert!(generate(&cycle(), 0.0, 1, None).is_err());
    }

    #[test]
    fn absorbing_zero_duration_aborts() {
        let m = MarkovModel::new(
            MarkovLayer::Body,
            vec!["T".into(), "none".into()],
            vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            vec![1.0, 0.0],
            BTreeMap::from([("T".into(), vec![(0.0, 0.0)])]),
        )
        .unwrap();
        assert_eq!(
            generate(&m, 5.0, 0, None).unwrap_err(),
            MarkovError::ZeroDurationAbsorbing("T".into())
        );
    }

    #[test]
    fn fill_is_clipped() {
        assert!(generate_fill(&cycle(), 3.0, 3.0, 0).unwrap().is_empty());
        let acts = generate_fill(&cycle(), 2.0, 12.0, 0).unwrap();
        assert!(!acts.is_empty());
        for a in &acts {
            assert!(a.start >= 2.0 && a.end() <= 12.0 + TIME_EPS);
            assert_eq!(a.priority, PRIORITY_MARKOV);
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let r = MarkovModel::new(
            MarkovLayer::Body,
            vec!["T".into(), "none".into()],
            vec![vec![0.7, 0.2], vec![0.5, 0.5]],
            vec![1.0, 0.0],
            BTreeMap::new(),
        );
        assert!(matches!(r, Err(MarkovError::InvalidModel(_))));
    }

    #[test]
    fn state_meanings() {
        assert_eq!(
            state_action("LR-F"),
            Some((TaxonomyKind::Fidget, Some(Side::Both), None))
        );
        assert_eq!(
            state_action("nod"),
            Some((TaxonomyKind::Gesture, None, Some("positive-nod".into())))
        );
        assert_eq!(
            state_action("R-G+negative"),
            Some((TaxonomyKind::Gesture, Some(Side::Right), Some("negative".into())))
        );
        assert_eq!(state_action("none"), None);
    }
}
