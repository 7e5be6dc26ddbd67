use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MetaAction, MetaPlan, TIME_EPS};
use crate::clip::{ClipMetadata, Layer, TaxonomyKind};
use crate::graph::{MetaGraph, NodeKind};

pub const DEFAULT_ALPHA: f64 = 4.0;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Per-clip usage counts driving anti-repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageCounters {
    #[serde(default)]
    pub counts: BTreeMap<String, f64>,
    /// Added to a clip's count each time it is chosen.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for UsageCounters {
    fn default() -> Self {
        UsageCounters::new(DEFAULT_ALPHA)
    }
}

impl UsageCounters {
    pub fn new(alpha: f64) -> Self {
        UsageCounters {
            counts: BTreeMap::new(),
            alpha,
        }
    }

    pub fn get(&self, clip: &str) -> f64 {
        self.counts.get(clip).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, clip: impl Into<String>, count: f64) {
        self.counts.insert(clip.into(), count.max(0.0));
    }

    pub fn record_use(&mut self, clip: &str) {
        *self.counts.entry(clip.to_owned()).or_insert(0.0) += self.alpha;
    }

    pub fn reset(&mut self) {
        self.counts.clear();
    }

    /// Selection probabilities for `clips` under the current counts.
    pub fn probabilities(&self, clips: &[&ClipMetadata]) -> Vec<f64> {
        let counts: Vec<f64> = clips.iter().map(|c| self.get(&c.id)).collect();
        let likelihoods: Vec<f64> = clips.iter().map(|c| c.base_likelihood).collect();
        selection_probabilities(&counts, &likelihoods)
    }
}

/// `p_k = (l_k / max(c_k, 1)) / sum_i (l_i / max(c_i, 1))`.
///
/// Returns all zeros when every weight is zero.
pub fn selection_probabilities(counts: &[f64], likelihoods: &[f64]) -> Vec<f64> {
    debug_assert_eq!(counts.len(), likelihoods.len());
    let w: Vec<f64> = counts.iter().zip(likelihoods).map(|(c, l)| l / c.max(1.0)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter().map(|x| x / total).collect()
    } else {
        vec![0.0; w.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledClip {
    pub clip: String,
    pub kind: TaxonomyKind,
    pub layer: Layer,
    pub start: f64,
    pub end: f64,
    /// Id of the meta action this clip realizes.
    pub action: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// Nothing in the current stance matches the action.
    NoCandidates,
    /// Every match runs into the next higher-priority action.
    NoneFits,
    /// The previous clip plays past the end of the action.
    Overlapped,
    /// The requested specific clip cannot start from the current stance.
    NotPlayableFromStance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub action: MetaAction,
    pub reason: DiscardReason,
    pub message: String,
}

/// Concrete clips per layer, in playback order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Stance each layer starts in.
    pub initial_stances: BTreeMap<Layer, String>,
    /// Stance each layer ends in.
    pub final_stances: BTreeMap<Layer, String>,
    pub layers: BTreeMap<Layer, Vec<ScheduledClip>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded: Vec<Discarded>,
}

impl Schedule {
    pub fn clips(&self, layer: Layer) -> &[ScheduledClip] {
        self.layers.get(&layer).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.layers.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Picks a concrete clip for every meta action in `plan`.
///
/// Per layer, in timeline order:
/// - an action already covered by the previous clip is discarded; a partly
///   covered one starts when that clip ends;
/// - candidates match kind and layer exactly, must contain the requested
///   semantic tag and be playable from the current stance;
/// - a candidate must end by the start of the next higher-priority action,
///   otherwise it is filtered out; with nothing left the action is
///   discarded;
/// - a clip shorter than its slot simply ends early.
///
/// Layers without an entry in `initial_stances` start in the graph's start
/// stance. The same seed and inputs always give the same schedule.
pub fn sample_specific(
    plan: &MetaPlan,
    graph: &MetaGraph,
    counters: &mut UsageCounters,
    initial_stances: &BTreeMap<Layer, String>,
    seed: u64,
) -> Schedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schedule = Schedule::default();

    for layer in Layer::ALL {
        let mut stance = initial_stances
            .get(&layer)
            .cloned()
            .or_else(|| graph.start_stance(layer).map(str::to_owned));
        if let Some(s) = &stance {
            schedule.initial_stances.insert(layer, s.clone());
        }
        let actions = plan.actions(layer);
        let mut out = Vec::new();
        let mut free_at = f64::NEG_INFINITY;

        for (i, action) in actions.iter().enumerate() {
            let mut discard = |reason, message: String| {
                schedule.discarded.push(Discarded {
                    action: action.clone(),
                    reason,
                    message,
                })
            };
            if action.end() <= free_at + TIME_EPS {
                discard(
                    DiscardReason::Overlapped,
                    format!("previous clip plays until {free_at}"),
                );
                continue;
            }
            let start = action.start.max(free_at);
            let deadline = actions[i + 1..]
                .iter()
                .find(|b| b.priority > action.priority)
                .map_or(f64::INFINITY, |b| b.start);

            let Some(current) = stance.as_deref() else {
                discard(DiscardReason::NoCandidates, format!("layer {layer} has no stance"));
                continue;
            };
            let matching = match candidates(graph, action, current) {
                Ok(c) => c,
                Err(reason) => {
                    let what = action.specific_clip.as_deref().unwrap_or("");
                    discard(reason, format!("clip '{what}' is not playable from stance '{current}'"));
                    continue;
                }
            };
            if matching.is_empty() {
                discard(
                    DiscardReason::NoCandidates,
                    format!(
                        "no {} clip on {layer} matches in stance '{current}'",
                        action.abstract_kind
                    ),
                );
                continue;
            }
            let fitting: Vec<&ClipMetadata> = matching
                .into_iter()
                .filter(|c| start + c.playable_length() <= deadline + TIME_EPS)
                .collect();
            if fitting.is_empty() {
                discard(
                    DiscardReason::NoneFits,
                    format!("no candidate ends before the next higher-priority action at {deadline}"),
                );
                continue;
            }

            let probs = counters.probabilities(&fitting);
            let pick = match WeightedIndex::new(&probs) {
                Ok(dist) => fitting[dist.sample(&mut rng)],
                // All weights zero: fall back to the first candidate.
                Err(_) => fitting[0],
            };
            counters.record_use(&pick.id);
            let end = start + pick.playable_length();
            out.push(ScheduledClip {
                clip: pick.id.clone(),
                kind: pick.kind,
                layer,
                start,
                end,
                action: action.id,
            });
            free_at = end;
            if pick.kind == TaxonomyKind::StanceTransition {
                stance = pick.to_stance.clone();
            }
        }

        if let Some(s) = stance {
            schedule.final_stances.insert(layer, s);
        }
        if !out.is_empty() {
            schedule.layers.insert(layer, out);
        }
    }
    schedule
}

fn candidates<'g>(
    graph: &'g MetaGraph,
    action: &MetaAction,
    stance: &str,
) -> Result<Vec<&'g ClipMetadata>, DiscardReason> {
    if let Some(id) = &action.specific_clip {
        let Some(clip) = graph.clip(id) else {
            return Ok(Vec::new());
        };
        return if clip.owning_stance() == Some(stance) && clip.layer == action.layer {
            Ok(vec![clip])
        } else {
            Err(DiscardReason::NotPlayableFromStance)
        };
    }
    let Some(node) = NodeKind::of(action.abstract_kind) else {
        // An abstract stance action can only mean the current stance.
        return Ok(graph.clip(stance).into_iter().collect());
    };
    Ok(graph
        .bucket(stance, node)
        .iter()
        .filter_map(|id| graph.clip(id))
        .filter(|c| c.kind == action.abstract_kind && c.layer == action.layer)
        .filter(|c| action.semantic.as_ref().is_none_or(|tag| c.semantic_tags.contains(tag)))
        .filter(|c| action.target_stance.is_none() || c.to_stance.as_ref() == action.target_stance.as_ref())
        .collect())
}
