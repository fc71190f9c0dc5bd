//! Event-driven situational grounding for human-robot group interaction.
//!
//! Perception events (object detections, person poses, action labels) are
//! turned into uniquely identified, temporally ordered actor-action-object
//! triplets. The crate provides the shared data model, the instance
//! memory, geometry kernels for segmentation and tracking, the
//! action-trigger automata, the prompt/reasoning layer with pluggable
//! backends, the triplet-sequence evaluation metrics, and a deterministic
//! scenario replay harness.

pub mod eval;
pub mod memory;
pub mod model;
pub mod perception;
pub mod reasoner;
pub mod replay;
pub mod trigger;
pub mod vlm;

pub use model::{
    ActionTriplet, ActorClass, ActorInstance, InstanceId, InstanceKind, ObjectInstance,
    ReasonerConfig, ReasonerMode,
};
