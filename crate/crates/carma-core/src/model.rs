//! Shared domain types: instance identifiers, object/actor records, action
//! triplets and the reasoner configuration, plus pure label/id operations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("action label is empty after normalization: {0:?}")]
    InvalidLabel(String),
    #[error("malformed instance id: {0:?}")]
    ParseError(String),
}

/// Which class of physical entity an id refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Object,
    Person,
    RobotHand,
}

impl InstanceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InstanceKind::Object => "object",
            InstanceKind::Person => "person",
            InstanceKind::RobotHand => "robot_hand",
        }
    }
}

/// Unique identifier of a physical instance, rendered as `<kind>_<ordinal>`
/// (e.g. `object_2`, `person_1`). Ordinals are positive and assigned
/// monotonically per kind within a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceId {
    pub kind: InstanceKind,
    pub ordinal: u32,
}

impl InstanceId {
    pub fn new(kind: InstanceKind, ordinal: u32) -> Self {
        assert!(ordinal > 0, "instance ordinals start at 1");
        InstanceId { kind, ordinal }
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.kind.as_str(), self.ordinal)
    }
}

impl FromStr for InstanceId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = if let Some(rest) = s.strip_prefix("object_") {
            (InstanceKind::Object, rest)
        } else if let Some(rest) = s.strip_prefix("person_") {
            (InstanceKind::Person, rest)
        } else if let Some(rest) = s.strip_prefix("robot_hand_") {
            (InstanceKind::RobotHand, rest)
        } else {
            return Err(ModelError::ParseError(s.to_string()));
        };
        // no leading zeros, no sign, no empty ordinal
        if rest.is_empty() || rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ModelError::ParseError(s.to_string()));
        }
        let ordinal: u32 = rest.parse().map_err(|_| ModelError::ParseError(s.to_string()))?;
        Ok(InstanceId { kind, ordinal })
    }
}

/// Canonical string rendering of an id.
pub fn render_id(id: InstanceId) -> String {
    id.to_string()
}

/// Parse the canonical rendering back into an id.
pub fn parse_id(s: &str) -> Result<InstanceId, ModelError> {
    s.parse()
}

impl Serialize for InstanceId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InstanceId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A registered object: reference image, last known 3D location (camera
/// frame, meters) and last-seen time. The optional embedding is a unit
/// vector used by the similarity pre-filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: InstanceId,
    pub crop_ref: String,
    pub location: [f64; 3],
    pub last_seen: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Human or robot actor class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorClass {
    Human,
    Robot,
}

impl ActorClass {
    /// The id kind an actor of this class must carry.
    pub fn id_kind(&self) -> InstanceKind {
        match self {
            ActorClass::Human => InstanceKind::Person,
            ActorClass::Robot => InstanceKind::RobotHand,
        }
    }
}

/// A tracked actor with pose and crop history. `crop_history` is strictly
/// increasing in timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorInstance {
    pub id: InstanceId,
    pub actor_class: ActorClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_pose: Option<Vec<[f64; 3]>>,
    pub crop_history: Vec<(f64, String)>,
}

/// The grounded output unit: who does what with which object, optionally
/// relative to a second object, with a human-robot interaction flag.
/// Timestamps record when the action occurred (trigger time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTriplet {
    pub actor: InstanceId,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<InstanceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on: Option<InstanceId>,
    pub robot_interaction: bool,
    pub t: f64,
}

impl ActionTriplet {
    /// Content equality: actor, action, object, on and robot_interaction.
    /// Timestamps are excluded; temporal ordering is the alignment's job.
    pub fn content_eq(&self, other: &ActionTriplet) -> bool {
        self.actor == other.actor
            && self.action == other.action
            && self.object == other.object
            && self.on == other.on
            && self.robot_interaction == other.robot_interaction
    }
}

/// See [`ActionTriplet::content_eq`].
pub fn triplet_equals(a: &ActionTriplet, b: &ActionTriplet) -> bool {
    a.content_eq(b)
}

/// The four reasoner configurations: discrete sampling with previous
/// triplet, trigger with previous triplet, trigger only, trigger with
/// action label and previous triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonerMode {
    DiscretePrev,
    TriggerPrev,
    TriggerOnly,
    TriggerLabelPrev,
}

impl ReasonerMode {
    pub fn includes_previous_triplet(&self) -> bool {
        !matches!(self, ReasonerMode::TriggerOnly)
    }

    pub fn includes_action_label(&self) -> bool {
        matches!(self, ReasonerMode::TriggerLabelPrev)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ReasonerMode::DiscretePrev => "discrete_prev",
            ReasonerMode::TriggerPrev => "trigger_prev",
            ReasonerMode::TriggerOnly => "trigger_only",
            ReasonerMode::TriggerLabelPrev => "trigger_label_prev",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasonerConfig {
    pub mode: ReasonerMode,
    /// Sampling period in seconds; only the discrete mode reads it.
    pub sample_interval: f64,
    pub include_robot_hand: bool,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            mode: ReasonerMode::TriggerOnly,
            sample_interval: 2.0,
            include_robot_hand: false,
        }
    }
}

/// Normalize a free-text action label to a lowercase snake_case token:
/// whitespace and hyphen runs become single underscores, other
/// non-alphanumeric characters are dropped.
pub fn normalize_action_label(raw: &str) -> Result<String, ModelError> {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_whitespace() || ch == '-' || ch == '_' {
            pending_sep = !out.is_empty();
        } else if ch.is_ascii_alphanumeric() {
            if pending_sep {
                out.push('_');
                pending_sep = false;
            }
            out.push(ch.to_ascii_lowercase());
        }
        // other characters dropped
    }
    if out.is_empty() || !out.starts_with(|c: char| c.is_ascii_lowercase()) {
        return Err(ModelError::InvalidLabel(raw.to_string()));
    }
    Ok(out)
}

/// True iff `label` is already in normalized form.
pub fn is_normalized_label(label: &str) -> bool {
    normalize_action_label(label).as_deref() == Ok(label)
}
