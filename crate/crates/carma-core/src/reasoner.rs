//! Prompt assembly, backend dispatch, response parsing and grounding of
//! reasoner outputs into validated triplets.
//!
//! The prompt wording is frozen in the `prompt/v1` template files so that
//! serialized prompts are stable across builds.

use std::fmt;
use std::fs;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::memory::MemoryStore;
use crate::model::{
    normalize_action_label, parse_id, render_id, ActionTriplet, InstanceId, InstanceKind,
    ReasonerConfig,
};
use crate::trigger::TriggerEvent;

pub const PROMPT_FORMAT_HEADER: &str = "carma-prompt/1";
pub const INTRO_TEXT: &str = include_str!("../prompt/v1/intro.txt");
pub const TASK_TEXT: &str = include_str!("../prompt/v1/task.txt");
const CORRECTIVE_TEXT: &str = "Your previous reply could not be parsed. Answer again with exactly one record of the stated form and nothing else.";

/// One prompt element: free text, or an image with its identifying caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptBlock {
    Text { text: String },
    Image { caption: String, image_ref: String },
}

/// The ordered prompt payload for one reasoning cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub blocks: Vec<PromptBlock>,
    pub actor: InstanceId,
    pub config: ReasonerConfig,
}

/// Parsed backend reply before grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonerOutput {
    pub object: Option<String>,
    pub action: String,
    pub on: Option<String>,
    pub robot_interaction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingReason {
    UnknownObject,
    UnknownSecondary,
    MalformedResponse,
    EmptyAction,
}

/// A rejected reasoning outcome; `raw` keeps the backend's verbatim reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingError {
    pub reason: GroundingReason,
    pub raw: String,
}

impl fmt::Display for GroundingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {:?}", self.reason, self.raw)
    }
}

impl std::error::Error for GroundingError {}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A reasoning backend: prompt in, raw text out.
pub trait ReasonerBackend {
    fn dispatch(&mut self, prompt: &PromptSpec) -> Result<String, BackendError>;
    fn name(&self) -> &str;
}

#[derive(Debug, Error)]
pub enum CycleError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
}

/// Build the prompt for one trigger: intro, captioned object images, the
/// optional robot-hand image, up to four chronological person crops, the
/// optional previous-triplet text, and the task description.
pub fn assemble_prompt(
    mem: &MemoryStore,
    trigger: &TriggerEvent,
    config: &ReasonerConfig,
    offered_objects: &[InstanceId],
) -> Result<PromptSpec, GroundingError> {
    let mut blocks = vec![PromptBlock::Text { text: INTRO_TEXT.trim_end().to_string() }];

    for &id in offered_objects {
        let obj = mem.object(id).ok_or_else(|| GroundingError {
            reason: GroundingReason::UnknownObject,
            raw: render_id(id),
        })?;
        blocks.push(PromptBlock::Image { caption: render_id(id), image_ref: obj.crop_ref.clone() });
    }

    if config.include_robot_hand {
        // the hand is offered like an object so the backend can flag interaction
        let hand = mem
            .actors()
            .find(|a| a.id.kind == InstanceKind::RobotHand && !a.crop_history.is_empty());
        if let Some(hand) = hand {
            let (_, latest) = hand.crop_history.last().expect("non-empty history");
            blocks.push(PromptBlock::Image {
                caption: render_id(hand.id),
                image_ref: latest.clone(),
            });
        }
    }

    let crops = mem.recent_crops(trigger.actor, 4).map_err(|_| GroundingError {
        reason: GroundingReason::UnknownObject,
        raw: render_id(trigger.actor),
    })?;
    let n = crops.len();
    for (i, crop) in crops.into_iter().enumerate() {
        let caption = if i + 1 == n {
            format!("{} current view", render_id(trigger.actor))
        } else {
            format!("{} recent view {}", render_id(trigger.actor), i + 1)
        };
        blocks.push(PromptBlock::Image { caption, image_ref: crop });
    }

    if config.mode.includes_previous_triplet() {
        if let Some(prev) = mem.previous_triplet(trigger.actor) {
            blocks.push(PromptBlock::Text {
                text: format!(
                    "The previous action triplet for {} was {}.",
                    render_id(trigger.actor),
                    render_output(&triplet_output(prev))
                ),
            });
        }
    }

    let mut task = TASK_TEXT.trim_end().to_string();
    if config.mode.includes_action_label() {
        if let Some(label) = &trigger.label {
            task.push_str(&format!(" The action detector suggests the label '{label}'."));
        }
    }
    blocks.push(PromptBlock::Text { text: task });

    Ok(PromptSpec { blocks, actor: trigger.actor, config: *config })
}

fn triplet_output(t: &ActionTriplet) -> ReasonerOutput {
    ReasonerOutput {
        object: t.object.map(render_id),
        action: t.action.clone(),
        on: t.on.map(render_id),
        robot_interaction: t.robot_interaction,
    }
}

/// Canonical single-quoted record rendering, the same shape the backend
/// is instructed to reply with.
pub fn render_output(out: &ReasonerOutput) -> String {
    let mut fields = Vec::new();
    if let Some(object) = &out.object {
        fields.push(format!("'object': '{object}'"));
    }
    fields.push(format!("'action': '{}'", out.action));
    if let Some(on) = &out.on {
        fields.push(format!("'on': '{on}'"));
    }
    fields.push(format!("'robot_interaction': {}", out.robot_interaction));
    format!("{{{}}}", fields.join(", "))
}

#[derive(Deserialize)]
struct RawOutput {
    #[serde(default)]
    object: Option<String>,
    #[serde(default)]
    action: Option<String>,
    #[serde(default)]
    on: Option<String>,
    #[serde(default)]
    robot_interaction: Option<bool>,
}

/// Extract the first brace-delimited record from a backend reply,
/// tolerating surrounding prose, code fences, and single-quoted keys.
pub fn parse_response(raw: &str) -> Result<ReasonerOutput, GroundingError> {
    let malformed = || GroundingError {
        reason: GroundingReason::MalformedResponse,
        raw: raw.to_string(),
    };
    let bytes = raw.as_bytes();
    let mut search_from = 0usize;
    while let Some(rel) = raw[search_from..].find('{') {
        let open = search_from + rel;
        let mut depth = 0usize;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            match b {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(close) = close else { break };
        let candidate = &raw[open..=close];
        if let Some(parsed) = try_parse_record(candidate) {
            if parsed.action.as_deref().unwrap_or("").is_empty() {
                return Err(GroundingError {
                    reason: GroundingReason::EmptyAction,
                    raw: raw.to_string(),
                });
            }
            return Ok(ReasonerOutput {
                object: parsed.object.filter(|s| !s.is_empty()),
                action: parsed.action.unwrap(),
                on: parsed.on.filter(|s| !s.is_empty()),
                robot_interaction: parsed.robot_interaction.unwrap_or(false),
            });
        }
        search_from = open + 1;
    }
    Err(malformed())
}

fn try_parse_record(candidate: &str) -> Option<RawOutput> {
    if let Ok(parsed) = serde_json::from_str::<RawOutput>(candidate) {
        return Some(parsed);
    }
    // single-quoted / pythonic variant
    let relaxed = candidate
        .replace('\'', "\"")
        .replace("True", "true")
        .replace("False", "false")
        .replace("None", "null");
    serde_json::from_str::<RawOutput>(&relaxed).ok()
}

/// Resolve a parsed output against memory and log the resulting triplet.
/// Unknown ids are rejected and nothing is logged.
pub fn ground_output(
    out: &ReasonerOutput,
    mem: &mut MemoryStore,
    trigger: &TriggerEvent,
) -> Result<ActionTriplet, GroundingError> {
    let resolve = |s: &Option<String>, reason: GroundingReason| -> Result<Option<InstanceId>, GroundingError> {
        match s {
            None => Ok(None),
            Some(s) => {
                let id = parse_id(s)
                    .map_err(|_| GroundingError { reason, raw: s.clone() })?;
                if mem.contains(id) {
                    Ok(Some(id))
                } else {
                    Err(GroundingError { reason, raw: s.clone() })
                }
            }
        }
    };
    let object = resolve(&out.object, GroundingReason::UnknownObject)?;
    let on = resolve(&out.on, GroundingReason::UnknownSecondary)?;
    if on.is_some() && on == object {
        return Err(GroundingError {
            reason: GroundingReason::MalformedResponse,
            raw: render_output(out),
        });
    }
    let action = normalize_action_label(&out.action).map_err(|_| GroundingError {
        reason: GroundingReason::EmptyAction,
        raw: out.action.clone(),
    })?;
    let triplet = ActionTriplet {
        actor: trigger.actor,
        action,
        object,
        on,
        robot_interaction: out.robot_interaction,
        t: trigger.t,
    };
    mem.log_triplet(triplet.clone()).map_err(|e| GroundingError {
        reason: GroundingReason::UnknownObject,
        raw: e.to_string(),
    })?;
    Ok(triplet)
}

/// Supplies image embeddings for crops that do not carry one yet.
pub trait EmbeddingProvider {
    fn embed(&self, crop_ref: &str) -> Option<Vec<f64>>;
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank stored objects by cosine similarity to the person-crop embedding,
/// keep those at or above `min_sim` and truncate to `max_n`. If any object
/// has no embedding even after asking the provider, filtering is skipped
/// and all objects are offered (the backend does its own filtering).
pub fn prefilter_objects(
    mem: &MemoryStore,
    query: &[f64],
    provider: Option<&dyn EmbeddingProvider>,
    max_n: usize,
    min_sim: f64,
) -> Vec<InstanceId> {
    let mut scored = Vec::new();
    for obj in mem.objects() {
        let embedding = obj
            .embedding
            .clone()
            .or_else(|| provider.and_then(|p| p.embed(&obj.crop_ref)));
        match embedding {
            Some(e) => scored.push((obj.id, cosine(query, &e))),
            None => {
                log::warn!("object {} has no embedding; offering all objects", obj.id);
                return mem.objects().map(|o| o.id).collect();
            }
        }
    }
    scored.retain(|(_, sim)| *sim >= min_sim);
    // descending similarity, ties by ascending ordinal
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite similarity")
            .then(a.0.ordinal.cmp(&b.0.ordinal))
    });
    scored.truncate(max_n);
    scored.into_iter().map(|(id, _)| id).collect()
}

/// Canonical prompt serialization: header line, actor/mode lines, then one
/// JSON line per block. Image blocks carry a content hash so golden files
/// pin the pixels, not just the path.
pub fn serialize_prompt(prompt: &PromptSpec) -> String {
    let mut out = String::new();
    out.push_str(PROMPT_FORMAT_HEADER);
    out.push('\n');
    out.push_str(&format!("actor: {}\n", prompt.actor));
    out.push_str(&format!("mode: {}\n", prompt.config.mode.as_str()));
    for block in &prompt.blocks {
        let line = match block {
            PromptBlock::Text { text } => serde_json::json!({ "text": text }),
            PromptBlock::Image { caption, image_ref } => serde_json::json!({
                "caption": caption,
                "image_ref": image_ref,
                "hash": image_content_hash(image_ref),
            }),
        };
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// Hash of the referenced image file's bytes (crop suffixes after `#` are
/// part of the identity); falls back to hashing the reference string when
/// the file is not readable.
pub fn image_content_hash(image_ref: &str) -> String {
    let path = image_ref.split('#').next().unwrap_or(image_ref);
    let mut hasher = Sha256::new();
    match fs::read(path) {
        Ok(bytes) => hasher.update(&bytes),
        Err(_) => hasher.update(image_ref.as_bytes()),
    }
    if let Some(suffix) = image_ref.split_once('#').map(|(_, s)| s) {
        hasher.update(suffix.as_bytes());
    }
    format!("sha256:{:x}", hasher.finalize())
}

/// Assemble, dispatch, parse and ground one cycle. A malformed reply gets
/// one retry with an appended corrective instruction.
pub fn run_reasoning_cycle(
    trigger: &TriggerEvent,
    mem: &mut MemoryStore,
    config: &ReasonerConfig,
    backend: &mut dyn ReasonerBackend,
    offered_objects: &[InstanceId],
) -> Result<ActionTriplet, CycleError> {
    let prompt = assemble_prompt(mem, trigger, config, offered_objects)?;
    let raw = backend.dispatch(&prompt)?;
    let output = match parse_response(&raw) {
        Ok(out) => out,
        Err(err) if err.reason == GroundingReason::MalformedResponse => {
            let mut retry = prompt.clone();
            retry.blocks.push(PromptBlock::Text { text: CORRECTIVE_TEXT.to_string() });
            let raw = backend.dispatch(&retry)?;
            parse_response(&raw)?
        }
        Err(err) => return Err(err.into()),
    };
    Ok(ground_output(&output, mem, trigger)?)
}
