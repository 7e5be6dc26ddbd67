//! Clip metadata and the embodiment manifest.
//!
//! The manifest is a JSON document:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "skeleton": { "joints": [ { "name": "pelvis", "parent": null, "body_part": "spine" } ] },
//!   "base_pose": [ { "rotation": [0, 0, 0, 1], "translation": [0, 0, 0] } ],
//!   "start_stances": { "arms": "arms_rest" },
//!   "clips": [ ... ]
//! }
//! ```
//!
//! Stances are clips of kind `stance`; the stance id space is the id space of
//! those clips.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ClipFieldError, ManifestError};
use crate::pose::{Keyframes, Pose, Skeleton};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyKind {
    Stance,
    Gesture,
    Fidget,
    StanceTransition,
}

impl TaxonomyKind {
    pub const ALL: [TaxonomyKind; 4] = [
        TaxonomyKind::Stance,
        TaxonomyKind::Gesture,
        TaxonomyKind::Fidget,
        TaxonomyKind::StanceTransition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaxonomyKind::Stance => "stance",
            TaxonomyKind::Gesture => "gesture",
            TaxonomyKind::Fidget => "fidget",
            TaxonomyKind::StanceTransition => "stance_transition",
        }
    }
}

impl fmt::Display for TaxonomyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Body,
    Arms,
    Head,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Body, Layer::Arms, Layer::Head];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Body => "body",
            Layer::Arms => "arms",
            Layer::Head => "head",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "body" => Ok(Layer::Body),
            "arms" => Ok(Layer::Arms),
            "head" => Ok(Layer::Head),
            other => Err(format!("unknown layer '{other}'")),
        }
    }
}

/// Keyframe data of a clip: inline, or a path relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FramesRef {
    Inline(Keyframes),
    File(String),
}

fn default_likelihood() -> f64 {
    1.0
}

fn is_default_likelihood(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetadata {
    pub id: String,
    pub kind: TaxonomyKind,
    pub layer: Layer,
    /// Owning stance of a gesture or fidget, source stance of a transition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_stance: Option<String>,
    pub duration: f64,
    #[serde(default)]
    pub blend_in: f64,
    #[serde(default)]
    pub blend_out: f64,
    #[serde(default)]
    pub trim_start: f64,
    pub trim_end: f64,
    #[serde(default)]
    pub looping: bool,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub semantic_tags: BTreeSet<String>,
    #[serde(default = "default_likelihood", skip_serializing_if = "is_default_likelihood")]
    pub base_likelihood: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<FramesRef>,
    /// Exit time overrides for outgoing edges, keyed by target clip id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub exit_overrides: BTreeMap<String, f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl ClipMetadata {
    /// Minimal clip with `trim_end = duration` and no blending.
    pub fn new(id: impl Into<String>, kind: TaxonomyKind, layer: Layer, duration: f64) -> Self {
        ClipMetadata {
            id: id.into(),
            kind,
            layer,
            stance: None,
            to_stance: None,
            duration,
            blend_in: 0.0,
            blend_out: 0.0,
            trim_start: 0.0,
            trim_end: duration,
            looping: kind == TaxonomyKind::Stance,
            semantic_tags: BTreeSet::new(),
            base_likelihood: 1.0,
            frames: None,
            exit_overrides: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn stance(id: impl Into<String>, layer: Layer, duration: f64) -> Self {
        Self::new(id, TaxonomyKind::Stance, layer, duration)
    }

    pub fn action(
        id: impl Into<String>,
        kind: TaxonomyKind,
        layer: Layer,
        stance: impl Into<String>,
        duration: f64,
    ) -> Self {
        let mut c = Self::new(id, kind, layer, duration);
        c.stance = Some(stance.into());
        c
    }

    pub fn transition(
        id: impl Into<String>,
        layer: Layer,
        from: impl Into<String>,
        to: impl Into<String>,
        duration: f64,
    ) -> Self {
        let mut c = Self::new(id, TaxonomyKind::StanceTransition, layer, duration);
        c.stance = Some(from.into());
        c.to_stance = Some(to.into());
        c
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.semantic_tags = tags.into_iter().map(Into::into).collect();
        self
    }

    /// The stance this clip is played from. For a stance clip, its own id.
    pub fn owning_stance(&self) -> Option<&str> {
        match self.kind {
            TaxonomyKind::Stance => Some(&self.id),
            _ => self.stance.as_deref(),
        }
    }

    pub fn playable_length(&self) -> f64 {
        self.trim_end - self.trim_start
    }

    /// Earliest time (clip-local) at which the clip may be left.
    pub fn exit_time(&self, target: &str) -> f64 {
        self.exit_overrides
            .get(target)
            .copied()
            .unwrap_or(self.trim_end - self.blend_out)
    }

    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<(), ClipFieldError> {
        let err = |field: &'static str, message: String| ClipFieldError {
            clip: self.id.clone(),
            field,
            message,
        };
        if self.id.trim().is_empty() {
            return Err(err("id", "must not be empty".into()));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(err("duration", format!("must be > 0, got {}", self.duration)));
        }
        for (field, v) in [("blend_in", self.blend_in), ("blend_out", self.blend_out)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(err(field, format!("must be >= 0, got {v}")));
            }
        }
        if !(self.trim_start.is_finite() && self.trim_start >= 0.0) {
            return Err(err("trim_start", format!("must be >= 0, got {}", self.trim_start)));
        }
        if !(self.trim_end.is_finite() && self.trim_end <= self.duration) {
            return Err(err(
                "trim_end",
                format!("must be <= duration {}, got {}", self.duration, self.trim_end),
            ));
        }
        if self.trim_start >= self.trim_end {
            return Err(err(
                "trim_start",
                format!("must be < trim_end {}, got {}", self.trim_end, self.trim_start),
            ));
        }
        if self.blend_in + self.blend_out > self.playable_length() {
            return Err(err(
                "blend_out",
                format!(
                    "blend_in + blend_out = {} exceeds playable length {}",
                    self.blend_in + self.blend_out,
                    self.playable_length()
                ),
            ));
        }
        if !(self.base_likelihood.is_finite() && self.base_likelihood > 0.0) {
            return Err(err(
                "base_likelihood",
                format!("must be > 0, got {}", self.base_likelihood),
            ));
        }
        for (target, t) in &self.exit_overrides {
            if !(t.is_finite() && *t >= 0.0 && *t <= self.duration) {
                return Err(err(
                    "exit_overrides",
                    format!("override for '{target}' must lie in [0, duration], got {t}"),
                ));
            }
        }
        match self.kind {
            TaxonomyKind::Stance => {
                if !self.looping {
                    return Err(err("looping", "stance clips must loop".into()));
                }
                if let Some(s) = &self.stance {
                    if s != &self.id {
                        return Err(err("stance", format!("a stance clip owns itself, got '{s}'")));
                    }
                }
                if self.to_stance.is_some() {
                    return Err(err("to_stance", "only stance transitions have a target".into()));
                }
            }
            kind => {
                if self.looping {
                    return Err(err("looping", format!("a {kind} clip must not loop")));
                }
                if self.stance.as_deref().is_none_or(str::is_empty) {
                    return Err(err("stance", format!("a {kind} clip needs a stance")));
                }
                match (kind, &self.to_stance) {
                    (TaxonomyKind::StanceTransition, None) => {
                        return Err(err("to_stance", "stance transition without target".into()))
                    }
                    (TaxonomyKind::StanceTransition, Some(t)) if Some(t) == self.stance.as_ref() => {
                        return Err(err("to_stance", "transition must change the stance".into()))
                    }
                    (TaxonomyKind::StanceTransition, _) => {}
                    (_, Some(_)) => return Err(err("to_stance", "only stance transitions have a target".into())),
                    (_, None) => {}
                }
            }
        }
        Ok(())
    }
}

/// Unknown-field policy when loading a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    Strict,
    #[default]
    Lenient,
}

/// An authored embodiment: skeleton, base pose and clip records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipLibrary {
    pub format_version: u32,
    pub skeleton: Skeleton,
    pub base_pose: Pose,
    /// Declared entry stance per layer.
    #[serde(default)]
    pub start_stances: BTreeMap<Layer, String>,
    #[serde(default)]
    pub clips: Vec<ClipMetadata>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl ClipLibrary {
    pub fn new(skeleton: Skeleton, base_pose: Pose) -> Self {
        ClipLibrary {
            format_version: FORMAT_VERSION,
            skeleton,
            base_pose,
            start_stances: BTreeMap::new(),
            clips: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn clip(&self, id: &str) -> Option<&ClipMetadata> {
        self.clips.iter().find(|c| c.id == id)
    }

    /// Checks every invariant that `load_manifest` enforces.
    pub fn check(&self) -> Result<(), ManifestError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ManifestError::Version(self.format_version));
        }
        self.base_pose.check(&self.skeleton).map_err(ManifestError::BasePose)?;

        let mut seen = HashSet::new();
        for clip in &self.clips {
            clip.validate()?;
            if !seen.insert(clip.id.as_str()) {
                return Err(ManifestError::DuplicateId(clip.id.clone()));
            }
            if let Some(FramesRef::Inline(k)) = &clip.frames {
                check_keyframes(&clip.id, k, &self.skeleton)?;
            }
        }

        let stances: HashSet<&str> = self
            .clips
            .iter()
            .filter(|c| c.kind == TaxonomyKind::Stance)
            .map(|c| c.id.as_str())
            .collect();
        for clip in &self.clips {
            let refs = [
                ("stance", clip.stance.as_deref()),
                ("to_stance", clip.to_stance.as_deref()),
            ];
            for (field, stance) in refs {
                if let Some(s) = stance {
                    if clip.kind != TaxonomyKind::Stance && !stances.contains(s) {
                        return Err(ClipFieldError {
                            clip: clip.id.clone(),
                            field,
                            message: format!("unknown stance '{s}'"),
                        }
                        .into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Resolves file-referenced keyframes relative to `base_dir`.
    pub fn keyframes(&self, clip: &ClipMetadata, base_dir: &Path) -> Result<Option<Keyframes>, ManifestError> {
        match &clip.frames {
            None => Ok(None),
            Some(FramesRef::Inline(k)) => Ok(Some(k.clone())),
            Some(FramesRef::File(rel)) => {
                let bytes = std::fs::read(base_dir.join(rel))?;
                let k: Keyframes = serde_json::from_slice(&bytes).map_err(|e| ManifestError::Keyframes {
                    clip: clip.id.clone(),
                    message: e.to_string(),
                })?;
                check_keyframes(&clip.id, &k, &self.skeleton)?;
                Ok(Some(k))
            }
        }
    }
}

fn check_keyframes(clip: &str, k: &Keyframes, skeleton: &Skeleton) -> Result<(), ManifestError> {
    if !(k.fps.is_finite() && k.fps > 0.0) {
        return Err(ManifestError::Keyframes {
            clip: clip.into(),
            message: format!("fps must be > 0, got {}", k.fps),
        });
    }
    for (i, p) in k.poses.iter().enumerate() {
        p.check(skeleton).map_err(|e| ManifestError::Keyframes {
            clip: clip.into(),
            message: format!("pose {i}: {e}"),
        })?;
    }
    Ok(())
}

/// Parses a manifest and applies the unknown-field policy without checking
/// clip invariants. See [`load_manifest`] for the full check.
pub fn parse_manifest(bytes: &[u8], strictness: Strictness) -> Result<ClipLibrary, ManifestError> {
    let library: ClipLibrary = serde_json::from_slice(bytes).map_err(|e| ManifestError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if strictness == Strictness::Strict {
        if !library.extra.is_empty() {
            return Err(ManifestError::UnknownFields {
                location: "manifest".into(),
                fields: library.extra.keys().cloned().collect(),
            });
        }
        if let Some(c) = library.clips.iter().find(|c| !c.extra.is_empty()) {
            return Err(ManifestError::UnknownFields {
                location: format!("clip '{}'", c.id),
                fields: c.extra.keys().cloned().collect(),
            });
        }
    }
    Ok(library)
}

/// Parses and validates a manifest.
pub fn load_manifest(bytes: &[u8], strictness: Strictness) -> Result<ClipLibrary, ManifestError> {
    let library = parse_manifest(bytes, strictness)?;
    library.check()?;
    Ok(library)
}

pub fn load_manifest_file(path: &Path, strictness: Strictness) -> Result<ClipLibrary, ManifestError> {
    load_manifest(&std::fs::read(path)?, strictness)
}

/// Serializes a library as pretty-printed JSON with a trailing newline.
/// Output is deterministic for a given library value.
pub fn save_manifest(library: &ClipLibrary) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(library).expect("library serializes");
    out.push(b'\n');
    out
}
