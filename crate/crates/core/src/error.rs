use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("skeleton mismatch: expected {expected} joints, found {found}")]
    SkeletonMismatch { expected: usize, found: usize },
    #[error("weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("rotation quaternion has norm {0}, expected 1")]
    NonUnitRotation(f64),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
}

/// A clip record that breaks one of its field invariants.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("clip '{clip}': field `{field}`: {message}")]
pub struct ClipFieldError {
    pub clip: String,
    pub field: &'static str,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {0}")]
    Version(u32),
    #[error("unknown field(s) {fields:?} in {location} (strict mode)")]
    UnknownFields { location: String, fields: Vec<String> },
    #[error(transparent)]
    Clip(#[from] ClipFieldError),
    #[error("duplicate clip id '{0}'")]
    DuplicateId(String),
    #[error("base pose: {0}")]
    BasePose(PoseError),
    #[error("keyframes of clip '{clip}': {message}")]
    Keyframes { clip: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("duplicate clip id '{0}'")]
    DuplicateId(String),
    #[error("clip '{clip}' references unknown stance '{stance}'")]
    UnknownStance { clip: String, stance: String },
    #[error(transparent)]
    Invalid(#[from] ClipFieldError),
    #[error("unknown clip '{0}'")]
    UnknownClip(String),
    #[error("graph has {0} validation error(s)")]
    Validation(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct AnnotationError {
    pub line: usize,
    pub kind: AnnotationErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationErrorKind {
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("missing `duration` header")]
    MissingHeader,
    #[error("unknown tier '{0}'")]
    UnknownTier(String),
    #[error("label '{label}' is not legal on tier '{tier}'")]
    IllegalLabel { tier: String, label: String },
    #[error("interval end {end} must be after start {start}")]
    EmptyInterval { start: f64, end: f64 },
    #[error("interval [{start}, {end}] outside media range [0, {duration}]")]
    OutOfRange { start: f64, end: f64, duration: f64 },
    #[error("interval overlaps [{other_start}, {other_end}] on tier '{tier}'")]
    Overlap {
        tier: String,
        other_start: f64,
        other_end: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("annotation corpus contains no transitions for layer {0}")]
    EmptyCorpus(String),
    #[error("tier '{tier}' at {time}s: label cannot be mapped to a {layer} state")]
    UnknownLabel { tier: String, time: f64, layer: String },
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("unknown state '{0}'")]
    UnknownState(String),
    #[error("state '{0}' is absorbing and has zero duration; generation cannot advance")]
    ZeroDurationAbsorbing(String),
    #[error("generation made no progress after {0} steps")]
    Stalled(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}
