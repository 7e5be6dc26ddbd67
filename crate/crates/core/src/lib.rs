//! Behavior graphs and motion planning for embodied conversational agents.
//!
//! Motion clips are organized by a fixed taxonomy (stances, gestures,
//! fidgets, stance transitions) instead of hand-wired state machines. A
//! planner turns action requests of any abstraction level into a timed,
//! conflict-free plan per body layer and picks concrete clips with
//! anti-repetition sampling. Gaps can be filled from Markov models learned on
//! annotated conversations.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod clip;
pub mod error;
pub mod graph;
pub mod markov;
pub mod planner;
pub mod playback;
pub mod pose;

pub use clip::{ClipLibrary, ClipMetadata, Layer, Strictness, TaxonomyKind};
pub use error::{AnnotationError, ClipFieldError, GraphError, ManifestError, MarkovError, PoseError};
pub use graph::{Diagnostic, ExplicitStateMachine, MetaGraph, NodeKind};
pub use markov::{MarkovLayer, MarkovModel, SemanticMode};
pub use planner::{ActionRequest, MetaAction, MetaPlan, Schedule, UsageCounters};
