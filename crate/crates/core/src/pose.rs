//! Skeletal poses and additive layer composition.
//!
//! A clip pose is stored relative to a neutral base pose as an
//! [`AdditiveOffset`]: rotations are composed by quaternion multiplication
//! and translations by addition. Offsets from the body, arms and head layers
//! are routed to joints by body part and applied in that fixed order.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::PoseError;

/// Tolerance on the norm of a deserialized rotation quaternion.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Body part a joint belongs to. Decides which layers influence the joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Head,
    Spine,
    Arms,
    Legs,
}

impl BodyPart {
    /// Layers whose offsets reach this body part, in application order.
    pub fn influences(self) -> &'static [crate::clip::Layer] {
        use crate::clip::Layer;
        match self {
            BodyPart::Head | BodyPart::Spine => &[Layer::Body, Layer::Arms, Layer::Head],
            BodyPart::Legs => &[Layer::Body],
            BodyPart::Arms => &[Layer::Arms],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub body_part: BodyPart,
}

/// Topologically ordered joint hierarchy with a single root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonDoc", into = "SkeletonDoc")]
pub struct Skeleton {
    joints: Vec<Joint>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    joints: Vec<Joint>,
}

impl TryFrom<SkeletonDoc> for Skeleton {
    type Error = PoseError;
    fn try_from(doc: SkeletonDoc) -> Result<Self, PoseError> {
        Skeleton::new(doc.joints)
    }
}

impl From<Skeleton> for SkeletonDoc {
    fn from(s: Skeleton) -> Self {
        SkeletonDoc { joints: s.joints }
    }
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self, PoseError> {
        let mut roots = 0;
        for (i, joint) in joints.iter().enumerate() {
            match joint.parent {
                None => roots += 1,
                Some(p) if p >= i => {
                    return Err(PoseError::InvalidSkeleton(format!(
                        "joint {} ('{}') has parent {} which does not precede it",
                        i, joint.name, p
                    )))
                }
                Some(_) => {}
            }
        }
        if roots != 1 {
            return Err(PoseError::InvalidSkeleton(format!(
                "expected exactly one root joint, found {roots}"
            )));
        }
        Ok(Skeleton { joints })
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn body_part(&self, joint: usize) -> BodyPart {
        self.joints[joint].body_part
    }
}

/// Local joint transform: unit rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformDoc", into = "TransformDoc")]
pub struct JointTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

/// Wire form: rotation as `[x, y, z, w]`, translation as `[x, y, z]`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformDoc {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl TryFrom<TransformDoc> for JointTransform {
    type Error = PoseError;
    fn try_from(doc: TransformDoc) -> Result<Self, PoseError> {
        let [x, y, z, w] = doc.rotation;
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(PoseError::NonUnitRotation(q.norm()));
        }
        // Keep unit input bit-exact so save/load round-trips are lossless.
        let rotation = if (q.norm_squared() - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(JointTransform {
            rotation,
            translation: Vector3::from(doc.translation),
        })
    }
}

impl From<JointTransform> for TransformDoc {
    fn from(t: JointTransform) -> Self {
        let q = t.rotation.quaternion();
        TransformDoc {
            rotation: [q.i, q.j, q.k, q.w],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl Default for JointTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl JointTransform {
    pub const IDENTITY: JointTransform = JointTransform {
        rotation: UnitQuaternion::new_unchecked(Quaternion::new(1.0, 0.0, 0.0, 0.0)),
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        JointTransform { rotation, translation }
    }

    /// `self ⊕ delta`: rotations multiply (delta on the right), translations add.
    /// The resulting rotation is renormalized.
    pub fn add(&self, delta: &JointTransform) -> JointTransform {
        let q = self.rotation.quaternion() * delta.rotation.quaternion();
        JointTransform {
            rotation: UnitQuaternion::new_normalize(q),
            translation: self.translation + delta.translation,
        }
    }

    /// The delta `d` with `base ⊕ d == self`.
    pub fn relative_to(&self, base: &JointTransform) -> JointTransform {
        JointTransform {
            rotation: UnitQuaternion::new_normalize(base.rotation.inverse().quaternion() * self.rotation.quaternion()),
            translation: self.translation - base.translation,
        }
    }

    /// Shortest-arc interpolation of the rotation and linear interpolation of
    /// the translation.
    pub fn interpolate(&self, other: &JointTransform, t: f64) -> JointTransform {
        JointTransform {
            rotation: shortest_slerp(&self.rotation, &other.rotation, t),
            translation: self.translation.lerp(&other.translation, t),
        }
    }

    /// Angle in radians of the rotation taking `self` to `other`.
    pub fn rotation_distance(&self, other: &JointTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }
}

fn shortest_slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    let b = if a.coords.dot(&b.coords) < 0.0 {
        UnitQuaternion::new_unchecked(-b.into_inner())
    } else {
        *b
    };
    // nalgebra's slerp falls back to nlerp when the inputs are nearly parallel.
    a.try_slerp(&b, t, 1e-12)
        .unwrap_or_else(|| UnitQuaternion::new_normalize(a.nlerp(&b, t).into_inner()))
}

/// One transform per skeleton joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose {
    pub transforms: Vec<JointTransform>,
}

impl Pose {
    pub fn new(transforms: Vec<JointTransform>) -> Self {
        Pose { transforms }
    }

    pub fn identity(joints: usize) -> Self {
        Pose {
            transforms: vec![JointTransform::IDENTITY; joints],
        }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn check(&self, skeleton: &Skeleton) -> Result<(), PoseError> {
        check_len(skeleton.len(), self.len())
    }
}

/// Per-joint deltas relative to the base pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AdditiveOffset {
    pub offsets: Vec<JointTransform>,
}

impl AdditiveOffset {
    pub fn identity(joints: usize) -> Self {
        AdditiveOffset {
            offsets: vec![JointTransform::IDENTITY; joints],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.offsets.iter().all(|o| *o == JointTransform::IDENTITY)
    }
}

/// Influence weights of the three layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerWeights {
    pub body: f64,
    pub arms: f64,
    pub head: f64,
}

impl Default for LayerWeights {
    fn default() -> Self {
        LayerWeights {
            body: 1.0,
            arms: 1.0,
            head: 1.0,
        }
    }
}

impl LayerWeights {
    pub fn new(body: f64, arms: f64, head: f64) -> Result<Self, PoseError> {
        for w in [body, arms, head] {
            check_weight(w)?;
        }
        Ok(LayerWeights { body, arms, head })
    }

    pub fn get(&self, layer: crate::clip::Layer) -> f64 {
        use crate::clip::Layer;
        match layer {
            Layer::Body => self.body,
            Layer::Arms => self.arms,
            Layer::Head => self.head,
        }
    }
}

fn check_weight(w: f64) -> Result<(), PoseError> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(PoseError::WeightOutOfRange(w))
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), PoseError> {
    if expected == found {
        Ok(())
    } else {
        Err(PoseError::SkeletonMismatch { expected, found })
    }
}

/// Offsets `Δ` such that `base ⊕ Δ == clip` on every joint.
pub fn make_additive(clip_pose: &Pose, base_pose: &Pose) -> Result<AdditiveOffset, PoseError> {
    check_len(base_pose.len(), clip_pose.len())?;
    Ok(AdditiveOffset {
        offsets: clip_pose
            .transforms
            .iter()
            .zip(&base_pose.transforms)
            .map(|(clip, base)| clip.relative_to(base))
            .collect(),
    })
}

/// Scales an offset by `w`: the rotation moves from identity toward the
/// offset rotation along the shortest arc, the translation is multiplied.
pub fn scale_offset(offset: &AdditiveOffset, w: f64) -> Result<AdditiveOffset, PoseError> {
    check_weight(w)?;
    Ok(AdditiveOffset {
        offsets: offset
            .offsets
            .iter()
            .map(|o| JointTransform {
                rotation: if w == 1.0 {
                    o.rotation
                } else {
                    shortest_slerp(&UnitQuaternion::identity(), &o.rotation, w)
                },
                translation: o.translation * w,
            })
            .collect(),
    })
}

/// Blends two offsets joint by joint (`t = 0` gives `from`, `t = 1` gives `to`).
pub fn blend_offsets(from: &AdditiveOffset, to: &AdditiveOffset, t: f64) -> Result<AdditiveOffset, PoseError> {
    check_len(from.len(), to.len())?;
    check_weight(t)?;
    Ok(AdditiveOffset {
        offsets: from
            .offsets
            .iter()
            .zip(&to.offsets)
            .map(|(a, b)| a.interpolate(b, t))
            .collect(),
    })
}

/// Composes the weighted body, arms and head offsets on top of `base`.
///
/// Head and spine joints receive all three layers, leg joints only the body
/// layer and arm joints only the arms layer. Layers are applied in the order
/// body, arms, head.
pub fn compose_layers(
    skeleton: &Skeleton,
    base: &Pose,
    body: &AdditiveOffset,
    arms: &AdditiveOffset,
    head: &AdditiveOffset,
    weights: LayerWeights,
) -> Result<Pose, PoseError> {
    use crate::clip::Layer;

    let n = skeleton.len();
    check_len(n, base.len())?;
    for offset in [body, arms, head] {
        check_len(n, offset.len())?;
    }
    let scaled = [
        scale_offset(body, weights.body)?,
        scale_offset(arms, weights.arms)?,
        scale_offset(head, weights.head)?,
    ];
    let layer_offset = |layer: Layer, joint: usize| -> &JointTransform {
        match layer {
            Layer::Body => &scaled[0].offsets[joint],
            Layer::Arms => &scaled[1].offsets[joint],
            Layer::Head => &scaled[2].offsets[joint],
        }
    };

    let transforms = (0..n)
        .map(|j| {
            skeleton
                .body_part(j)
                .influences()
                .iter()
                .fold(base.transforms[j], |acc, &layer| acc.add(layer_offset(layer, j)))
        })
        .collect();
    Ok(Pose { transforms })
}

/// Pose keyframes sampled at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframes {
    pub fps: f64,
    pub poses: Vec<Pose>,
}

impl Keyframes {
    /// Pose at `t` seconds from the first keyframe, clamped to the recorded
    /// range.
    pub fn sample(&self, t: f64) -> Option<Pose> {
        let first = self.poses.first()?;
        if self.poses.len() == 1 || self.fps <= 0.0 {
            return Some(first.clone());
        }
        let last = self.poses.len() - 1;
        let x = (t * self.fps).clamp(0.0, last as f64);
        let i = (x.floor() as usize).min(last - 1);
        let frac = x - i as f64;
        let (a, b) = (&self.poses[i], &self.poses[i + 1]);
        Some(Pose {
            transforms: a
                .transforms
                .iter()
                .zip(&b.transforms)
                .map(|(p, q)| p.interpolate(q, frac))
                .collect(),
        })
    }

    pub fn length(&self) -> f64 {
        if self.fps <= 0.0 || self.poses.len() < 2 {
            0.0
        } else {
            (self.poses.len() - 1) as f64 / self.fps
        }
    }
}
