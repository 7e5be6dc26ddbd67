use std::cmp::Reverse;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{MetaAction, MetaPlan, TIME_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplanConfig {
    /// A cut action keeps its tail after the interruption only if the tail
    /// is at least this long (seconds).
    pub min_remainder: f64,
    /// Latest end time an action may be shifted to.
    pub horizon: Option<f64>,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        ReplanConfig {
            min_remainder: 1.0,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    StartsBeforeNow,
    NonPositiveDuration,
    BeyondHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub action: MetaAction,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanEventKind {
    /// Moved later to the end of `by`.
    Shifted,
    /// Cut short at the start of `by`.
    Truncated,
    /// Tail after `by` kept as a separate piece.
    RemainderKept,
    /// Tail after `by` shorter than the minimum and dropped.
    RemainderDiscarded,
    /// Entirely covered by `by` with nothing left to keep.
    Removed,
}

/// What happened to action `action` because of action `by`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub kind: ReplanEventKind,
    pub action: u64,
    pub by: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplanOutcome {
    pub plan: MetaPlan,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<Rejected>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<ReplanEvent>,
}

struct Slot {
    action: MetaAction,
    /// Started before `now`; never moved or cut.
    frozen: bool,
}

/// Merges `incoming` into `existing` at time `now`.
///
/// Per layer, actions already started before `now` stay where they are. All
/// later actions, old and new, are placed greedily in order of start time,
/// then descending priority, then id. An action overlapping a placed action
/// of equal or higher priority is shifted to that action's end. An action
/// overlapping placed actions of lower priority cuts them: the part before
/// the cut is kept, the part after is kept only if it lasts at least
/// `min_remainder`.
pub fn replan(existing: &MetaPlan, now: f64, incoming: &[MetaAction], config: &ReplanConfig) -> ReplanOutcome {
    let mut out = ReplanOutcome::default();
    let layers: BTreeSet<_> = existing
        .layers
        .keys()
        .copied()
        .chain(incoming.iter().map(|a| a.layer))
        .collect();

    for layer in layers {
        let mut placed: Vec<Slot> = Vec::new();
        let mut pending: Vec<MetaAction> = Vec::new();
        for a in existing.actions(layer) {
            if a.start < now {
                placed.push(Slot {
                    action: a.clone(),
                    frozen: true,
                });
            } else {
                pending.push(a.clone());
            }
        }
        for a in incoming.iter().filter(|a| a.layer == layer) {
            let reason = if !(a.duration.is_finite() && a.duration > 0.0) {
                Some(RejectReason::NonPositiveDuration)
            } else if !(a.start >= now) {
                Some(RejectReason::StartsBeforeNow)
            } else {
                None
            };
            match reason {
                Some(reason) => out.rejected.push(Rejected {
                    action: a.clone(),
                    reason,
                }),
                None => pending.push(a.clone()),
            }
        }
        pending.sort_by(|a, b| {
            a.start
                .total_cmp(&b.start)
                .then_with(|| Reverse(a.priority).cmp(&Reverse(b.priority)))
                .then_with(|| a.id.cmp(&b.id))
        });

        for mut action in pending {
            let duration = action.duration;
            let mut start = action.start;
            let mut shifted_by = None;
            loop {
                let blocker = placed
                    .iter()
                    .filter(|s| s.frozen || s.action.priority >= action.priority)
                    .filter(|s| overlaps(&s.action, start, start + duration))
                    .max_by(|a, b| a.action.end().total_cmp(&b.action.end()));
                match blocker {
                    Some(b) => {
                        start = b.action.end();
                        shifted_by = Some(b.action.id);
                    }
                    None => break,
                }
            }
            if let Some(h) = config.horizon {
                if start + duration > h + TIME_EPS {
                    out.rejected.push(Rejected {
                        action,
                        reason: RejectReason::BeyondHorizon,
                    });
                    continue;
                }
            }
            if let Some(by) = shifted_by {
                out.events.push(ReplanEvent {
                    kind: ReplanEventKind::Shifted,
                    action: action.id,
                    by,
                });
            }
            action.start = start;
            let end = start + duration;

            let (cut, kept): (Vec<Slot>, Vec<Slot>) = placed
                .into_iter()
                .partition(|s| !s.frozen && overlaps(&s.action, start, end));
            placed = kept;
            for Slot { action: victim, .. } in cut {
                debug_assert!(victim.priority < action.priority);
                let event = |kind| ReplanEvent {
                    kind,
                    action: victim.id,
                    by: action.id,
                };
                let head_len = start.min(victim.end()) - victim.start;
                let tail_start = victim.start.max(end);
                let tail_len = victim.end() - tail_start;
                let mut survived = false;
                if head_len > TIME_EPS {
                    out.events.push(event(ReplanEventKind::Truncated));
                    let mut head = victim.clone();
                    head.duration = head_len;
                    placed.push(Slot {
                        action: head,
                        frozen: false,
                    });
                    survived = true;
                }
                if tail_len > TIME_EPS {
                    if tail_len + TIME_EPS >= config.min_remainder {
                        out.events.push(event(ReplanEventKind::RemainderKept));
                        let mut tail = victim.clone();
                        tail.start = tail_start;
                        tail.duration = tail_len;
                        placed.push(Slot {
                            action: tail,
                            frozen: false,
                        });
                        survived = true;
                    } else {
                        out.events.push(event(ReplanEventKind::RemainderDiscarded));
                    }
                }
                if !survived {
                    out.events.push(event(ReplanEventKind::Removed));
                }
            }
            placed.push(Slot { action, frozen: false });
        }

        let mut list: Vec<MetaAction> = placed.into_iter().map(|s| s.action).collect();
        list.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.id.cmp(&b.id)));
        if !list.is_empty() {
            out.plan.layers.insert(layer, list);
        }
    }
    out
}

fn overlaps(a: &MetaAction, start: f64, end: f64) -> bool {
    a.start < end - TIME_EPS && start < a.end() - TIME_EPS
}
