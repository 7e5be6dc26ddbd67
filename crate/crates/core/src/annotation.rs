//! Tiered interval annotations of recorded conversations (`.tsvann`).
//!
//! ```text
//! # comment
//! duration    60
//! left_arm    1.0    2.5    gesture:positive
//! head_action    3.2    4.0    nodding
//! ```
//!
//! The header must be the first non-comment line. Fields are separated by
//! tabs (runs of spaces are accepted too). Blank lines are ignored.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clip::{Layer, TaxonomyKind};
use crate::error::{AnnotationError, AnnotationErrorKind};
use crate::planner::{ActionRequest, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    HeadStance,
    HeadAction,
    LeftArm,
    RightArm,
    Legs,
}

impl Tier {
    pub const ALL: [Tier; 5] = [
        Tier::HeadStance,
        Tier::HeadAction,
        Tier::LeftArm,
        Tier::RightArm,
        Tier::Legs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::HeadStance => "head_stance",
            Tier::HeadAction => "head_action",
            Tier::LeftArm => "left_arm",
            Tier::RightArm => "right_arm",
            Tier::Legs => "legs",
        }
    }

    pub fn legal_labels(self) -> &'static [Label] {
        match self {
            Tier::LeftArm | Tier::RightArm => &[Label::Gesture, Label::Fidget, Label::StanceTransition],
            Tier::HeadAction => &[Label::Nodding, Label::Shaking],
            Tier::HeadStance | Tier::Legs => &[Label::StanceTransition],
        }
    }

    pub fn layer(self) -> Layer {
        match self {
            Tier::HeadStance | Tier::HeadAction => Layer::Head,
            Tier::LeftArm | Tier::RightArm => Layer::Arms,
            Tier::Legs => Layer::Body,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Tier::ALL.into_iter().find(|t| t.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Gesture,
    Fidget,
    StanceTransition,
    Nodding,
    Shaking,
}

impl Label {
    const ALL: [Label; 5] = [
        Label::Gesture,
        Label::Fidget,
        Label::StanceTransition,
        Label::Nodding,
        Label::Shaking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Gesture => "gesture",
            Label::Fidget => "fidget",
            Label::StanceTransition => "stance-transition",
            Label::Nodding => "nodding",
            Label::Shaking => "shaking",
        }
    }

    pub fn kind(self) -> TaxonomyKind {
        match self {
            Label::Gesture | Label::Nodding | Label::Shaking => TaxonomyKind::Gesture,
            Label::Fidget => TaxonomyKind::Fidget,
            Label::StanceTransition => TaxonomyKind::StanceTransition,
        }
    }

    /// Semantic tag implied by the label when the annotation gives none.
    pub fn default_semantic(self) -> Option<&'static str> {
        match self {
            Label::Nodding => Some("positive-nod"),
            Label::Shaking => Some("negative-shake"),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Label::ALL.into_iter().find(|l| l.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<String>,
}

impl Interval {
    pub fn new(start: f64, end: f64, label: Label) -> Self {
        Interval {
            start,
            end,
            label,
            semantic: None,
        }
    }

    pub fn with_semantic(mut self, semantic: impl Into<String>) -> Self {
        self.semantic = Some(semantic.into());
        self
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    /// Length of the annotated media in seconds.
    pub duration: f64,
    /// Every tier is present, possibly empty; intervals sorted by start.
    pub tiers: BTreeMap<Tier, Vec<Interval>>,
}

impl AnnotationDoc {
    pub fn new(duration: f64) -> Self {
        AnnotationDoc {
            duration,
            tiers: Tier::ALL.iter().map(|&t| (t, Vec::new())).collect(),
        }
    }

    pub fn tier(&self, tier: Tier) -> &[Interval] {
        self.tiers.get(&tier).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn interval_count(&self) -> usize {
        self.tiers.values().map(Vec::len).sum()
    }

    /// Adds an interval, keeping the tier sorted and checking every
    /// invariant.
    pub fn insert(&mut self, tier: Tier, interval: Interval) -> Result<(), AnnotationErrorKind> {
        check_interval(tier, &interval, self.duration)?;
        let list = self.tiers.entry(tier).or_default();
        let pos = list.partition_point(|i| i.start < interval.start);
        for other in [pos.checked_sub(1).map(|p| &list[p]), list.get(pos)]
            .into_iter()
            .flatten()
        {
            if other.start < interval.end && interval.start < other.end {
                return Err(AnnotationErrorKind::Overlap {
                    tier: tier.to_string(),
                    other_start: other.start,
                    other_end: other.end,
                });
            }
        }
        list.insert(pos, interval);
        Ok(())
    }

    /// Re-checks every invariant of a document built by hand.
    pub fn validate(&self) -> Result<(), AnnotationErrorKind> {
        let mut copy = AnnotationDoc::new(self.duration);
        for (&tier, list) in &self.tiers {
            for i in list {
                copy.insert(tier, i.clone())?;
            }
        }
        Ok(())
    }
}

fn check_interval(tier: Tier, i: &Interval, duration: f64) -> Result<(), AnnotationErrorKind> {
    if !tier.legal_labels().contains(&i.label) {
        return Err(AnnotationErrorKind::IllegalLabel {
            tier: tier.to_string(),
            label: i.label.to_string(),
        });
    }
    if !(i.end > i.start) {
        return Err(AnnotationErrorKind::EmptyInterval {
            start: i.start,
            end: i.end,
        });
    }
    if i.start < 0.0 || i.end > duration {
        return Err(AnnotationErrorKind::OutOfRange {
            start: i.start,
            end: i.end,
            duration,
        });
    }
    Ok(())
}

fn parse_seconds(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse(text: &str) -> Result<AnnotationDoc, AnnotationError> {
    let mut doc: Option<AnnotationDoc> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |kind| AnnotationError { line, kind };
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let Some(doc) = doc.as_mut() else {
            match fields.as_slice() {
                ["duration", secs] => match parse_seconds(secs) {
                    Some(d) if d >= 0.0 => doc = Some(AnnotationDoc::new(d)),
                    _ => return Err(err(AnnotationErrorKind::Malformed(format!("bad duration '{secs}'")))),
                },
                _ => return Err(err(AnnotationErrorKind::MissingHeader)),
            }
            continue;
        };
        let [tier, start, end, label] = fields.as_slice() else {
            return Err(err(AnnotationErrorKind::Malformed(format!(
                "expected 4 fields, found {}",
                fields.len()
            ))));
        };
        let tier: Tier = tier
            .parse()
            .map_err(|_| err(AnnotationErrorKind::UnknownTier(tier.to_string())))?;
        let (Some(start), Some(end)) = (parse_seconds(start), parse_seconds(end)) else {
            return Err(err(AnnotationErrorKind::Malformed(format!(
                "bad time in '{start} {end}'"
            ))));
        };
        let (name, semantic) = match label.split_once(':') {
            Some((name, sem)) if !sem.is_empty() => (name, Some(sem.to_owned())),
            Some(_) => return Err(err(AnnotationErrorKind::Malformed("empty semantic tag".into()))),
            None => (*label, None),
        };
        let label: Label = name.parse().map_err(|_| {
            err(AnnotationErrorKind::IllegalLabel {
                tier: tier.to_string(),
                label: name.to_owned(),
            })
        })?;
        doc.insert(
            tier,
            Interval {
                start,
                end,
                label,
                semantic,
            },
        )
        .map_err(err)?;
    }
    doc.ok_or(AnnotationError {
        line: text.lines().count().max(1),
        kind: AnnotationErrorKind::MissingHeader,
    })
}

pub fn serialize(doc: &AnnotationDoc) -> String {
    let mut out = format!("duration\t{}\n", doc.duration);
    for (tier, list) in &doc.tiers {
        for i in list {
            let _ = write!(out, "{tier}\t{}\t{}\t{}", i.start, i.end, i.label);
            if let Some(sem) = &i.semantic {
                let _ = write!(out, ":{sem}");
            }
            out.push('\n');
        }
    }
    out
}

/// One abstract action request per interval, ordered by start time.
///
/// | tier | request |
/// |------|---------|
/// | `left_arm`, `right_arm` | arms action, side `L` / `R` |
/// | `head_action` | head gesture; `nodding` tags `positive-nod`, `shaking` tags `negative-shake` |
/// | `head_stance` | head stance transition |
/// | `legs` | body stance transition |
///
/// An explicit semantic suffix always wins over the default tag.
pub fn to_requests(doc: &AnnotationDoc) -> Vec<ActionRequest> {
    let mut items: Vec<(f64, Tier, ActionRequest)> = Vec::with_capacity(doc.interval_count());
    for (&tier, list) in &doc.tiers {
        let side = match tier {
            Tier::LeftArm => Some(Side::Left),
            Tier::RightArm => Some(Side::Right),
            _ => None,
        };
        for i in list {
            let semantic = i
                .semantic
                .clone()
                .or_else(|| i.label.default_semantic().map(str::to_owned));
            let req = ActionRequest::AbstractAction {
                kind: i.label.kind(),
                layer: tier.layer(),
                semantic,
                side,
                start: i.start,
                duration: Some(i.duration()),
                priority: None,
            };
            items.push((i.start, tier, req));
        }
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    items.into_iter().map(|(_, _, r)| r).collect()
}
