//! Evaluates a sampled schedule into skeleton poses.
//!
//! Each layer holds its current stance loop. While an action clip plays,
//! the layer's offset blends from the stance toward the clip over the clip's
//! `blend_in` and back over its `blend_out`. Layers are then composed on the
//! base pose with body-part routing.

use std::collections::BTreeMap;
use std::path::Path;

use crate::clip::{ClipLibrary, ClipMetadata, Layer, TaxonomyKind};
use crate::error::{ManifestError, PoseError};
use crate::planner::Schedule;
use crate::pose::{blend_offsets, compose_layers, make_additive, AdditiveOffset, Keyframes, LayerWeights, Pose};

pub struct Player<'a> {
    library: &'a ClipLibrary,
    clips: BTreeMap<&'a str, &'a ClipMetadata>,
    frames: BTreeMap<&'a str, Keyframes>,
}

impl<'a> Player<'a> {
    /// Loads the keyframes of every clip; file references resolve against
    /// `base_dir`. Clips without keyframes contribute no motion.
    pub fn new(library: &'a ClipLibrary, base_dir: &Path) -> Result<Self, ManifestError> {
        let mut frames = BTreeMap::new();
        for clip in &library.clips {
            if let Some(k) = library.keyframes(clip, base_dir)? {
                frames.insert(clip.id.as_str(), k);
            }
        }
        Ok(Player {
            library,
            clips: library.clips.iter().map(|c| (c.id.as_str(), c)).collect(),
            frames,
        })
    }

    fn offset(&self, clip: &str, local: f64) -> Result<AdditiveOffset, PoseError> {
        let base = &self.library.base_pose;
        match self.frames.get(clip).and_then(|k| k.sample(local)) {
            Some(pose) => make_additive(&pose, base),
            None => Ok(AdditiveOffset::identity(base.len())),
        }
    }

    fn layer_offset(&self, schedule: &Schedule, layer: Layer, t: f64) -> Result<AdditiveOffset, PoseError> {
        let clips = schedule.clips(layer);
        let mut stance = schedule.initial_stances.get(&layer).map(String::as_str);
        let mut active = None;
        for sc in clips {
            if sc.start > t {
                break;
            }
            if t < sc.end {
                active = Some(sc);
                break;
            }
            if sc.kind == TaxonomyKind::StanceTransition {
                if let Some(to) = self.clips.get(sc.clip.as_str()).and_then(|c| c.to_stance.as_deref()) {
                    stance = Some(to);
                }
            }
        }

        let stance_offset = match stance.and_then(|s| self.clips.get(s)) {
            Some(c) => {
                let len = c.playable_length();
                let local = if len > 0.0 { t.rem_euclid(len) } else { 0.0 };
                self.offset(&c.id, c.trim_start + local)?
            }
            None => AdditiveOffset::identity(self.library.base_pose.len()),
        };
        let Some(sc) = active else {
            return Ok(stance_offset);
        };
        let Some(meta) = self.clips.get(sc.clip.as_str()) else {
            return Ok(stance_offset);
        };
        let action = self.offset(&meta.id, meta.trim_start + (t - sc.start))?;
        let ramp = |elapsed: f64, span: f64| {
            if span > 0.0 {
                (elapsed / span).clamp(0.0, 1.0)
            } else {
                1.0
            }
        };
        let w = ramp(t - sc.start, meta.blend_in).min(ramp(sc.end - t, meta.blend_out));
        blend_offsets(&stance_offset, &action, w)
    }

    pub fn pose_at(&self, schedule: &Schedule, t: f64, weights: LayerWeights) -> Result<Pose, PoseError> {
        compose_layers(
            &self.library.skeleton,
            &self.library.base_pose,
            &self.layer_offset(schedule, Layer::Body, t)?,
            &self.layer_offset(schedule, Layer::Arms, t)?,
            &self.layer_offset(schedule, Layer::Head, t)?,
            weights,
        )
    }

    /// Poses at `0, 1/fps, 2/fps, …` up to and including `duration`.
    pub fn render(
        &self,
        schedule: &Schedule,
        fps: f64,
        duration: f64,
        weights: LayerWeights,
    ) -> Result<Vec<Pose>, PoseError> {
        let frames = (duration * fps).floor() as usize + 1;
        (0..frames)
            .map(|i| self.pose_at(schedule, i as f64 / fps, weights))
            .collect()
    }
}
