//! Scenario replay: the `carma-scn/1` event stream format, the pipeline
//! orchestrator wiring perception, memory, triggers and the reasoner, and
//! the scripted oracle backends used for desk-scale verification.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{Scenario, Setting, TripletSequence};
use crate::memory::MemoryStore;
use crate::model::{
    normalize_action_label, render_id, ActionTriplet, ActorClass, InstanceId, InstanceKind,
    ReasonerConfig, ReasonerMode,
};
use crate::perception::{
    associate_person_tracks, compute_crop_region, segment_workspace, PointCloud,
    SegmentationParams, TrackState,
};
use crate::reasoner::{
    render_output, run_reasoning_cycle, BackendError, CycleError, PromptSpec, ReasonerBackend,
    ReasonerOutput,
};
use crate::trigger::{
    ActionLabelSample, DebouncePolicy, DiscreteSampler, TriggerEvent, TriggerState,
};
use crate::vlm::{EndpointConfig, VlmBackend};

pub const SCENARIO_FORMAT_HEADER: &str = "carma-scn/1";
pub const SEQUENCE_FORMAT_HEADER: &str = "carma-seq/1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("format error at line {line}: {reason}")]
    FormatError { line: usize, reason: String },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One timestamped perception event. Actor hints (`@alice`) are
/// scenario-local tags resolved to instance ids by the tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub t: f64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventPayload {
    PointCloud {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        points: Option<Vec<[f64; 3]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
    },
    PoseSample {
        actor: String,
        joints: Vec<[f64; 3]>,
        #[serde(default)]
        class: PoseClass,
    },
    ActionLabel {
        actor: String,
        label: String,
    },
    Frame {
        path: String,
    },
    Resegment,
    OracleOutcome {
        actor: String,
        output: ReasonerOutput,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseClass {
    #[default]
    Human,
    Robot,
}

/// Scenario metadata carried on the second line of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub recording: String,
    pub scenario: Scenario,
    pub setting: Setting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub header: ScenarioHeader,
    pub events: Vec<ScenarioEvent>,
    /// Directory the scenario file lives in; referenced paths are relative
    /// to it.
    pub base_dir: PathBuf,
}

/// Parse and validate a `carma-scn/1` file: events must be ordered by
/// timestamp and every referenced file must exist.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let text = fs::read_to_string(path)?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line.trim() == SCENARIO_FORMAT_HEADER => {}
        Some((i, line)) => {
            return Err(ScenarioError::FormatError {
                line: i + 1,
                reason: format!("bad header {line:?}, expected {SCENARIO_FORMAT_HEADER:?}"),
            })
        }
        None => {
            return Err(ScenarioError::FormatError { line: 1, reason: "empty file".into() })
        }
    }
    let header: ScenarioHeader = match lines.next() {
        Some((i, line)) => serde_json::from_str(line).map_err(|e| ScenarioError::FormatError {
            line: i + 1,
            reason: format!("bad scenario header: {e}"),
        })?,
        None => {
            return Err(ScenarioError::FormatError { line: 2, reason: "missing metadata".into() })
        }
    };
    let mut events = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let event: ScenarioEvent =
            serde_json::from_str(line).map_err(|e| ScenarioError::FormatError {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if event.t < last_t {
            return Err(ScenarioError::FormatError {
                line: i + 1,
                reason: format!("event at t={} after t={last_t}", event.t),
            });
        }
        last_t = event.t;
        match &event.payload {
            EventPayload::Frame { path } => check_exists(&base_dir, path)?,
            EventPayload::PointCloud { points: None, path: Some(p) } => {
                check_exists(&base_dir, p)?
            }
            EventPayload::PointCloud { points: None, path: None } => {
                return Err(ScenarioError::FormatError {
                    line: i + 1,
                    reason: "point_cloud needs points or path".into(),
                })
            }
            _ => {}
        }
        events.push(event);
    }
    Ok(LoadedScenario { header, events, base_dir })
}

fn check_exists(base: &Path, rel: &str) -> Result<(), ScenarioError> {
    let p = base.join(rel);
    if p.exists() {
        Ok(())
    } else {
        Err(ScenarioError::MissingFile(p))
    }
}

/// Write a triplet sequence as a `carma-seq/1` file: header, metadata
/// line, one triplet per line.
pub fn write_sequence(path: &Path, seq: &TripletSequence) -> Result<(), std::io::Error> {
    let mut out = String::new();
    out.push_str(SEQUENCE_FORMAT_HEADER);
    out.push('\n');
    let header = ScenarioHeader {
        recording: seq.recording.clone(),
        scenario: seq.scenario,
        setting: seq.setting,
    };
    out.push_str(&serde_json::to_string(&header).unwrap());
    out.push('\n');
    for t in &seq.triplets {
        out.push_str(&serde_json::to_string(t).unwrap());
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn read_sequence(path: &Path) -> Result<TripletSequence, ScenarioError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line.trim() == SEQUENCE_FORMAT_HEADER => {}
        other => {
            return Err(ScenarioError::FormatError {
                line: 1,
                reason: format!("expected {SEQUENCE_FORMAT_HEADER:?}, got {other:?}"),
            })
        }
    }
    let header: ScenarioHeader = match lines.next() {
        Some((i, line)) => serde_json::from_str(line).map_err(|e| ScenarioError::FormatError {
            line: i + 1,
            reason: e.to_string(),
        })?,
        None => {
            return Err(ScenarioError::FormatError { line: 2, reason: "missing metadata".into() })
        }
    };
    let mut triplets = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let t: ActionTriplet = serde_json::from_str(line).map_err(|e| ScenarioError::FormatError {
            line: i + 1,
            reason: e.to_string(),
        })?;
        triplets.push(t);
    }
    Ok(TripletSequence {
        recording: header.recording,
        scenario: header.scenario,
        setting: header.setting,
        triplets,
    })
}

/// Which reasoning backend a run uses.
#[derive(Debug, Clone)]
pub enum BackendChoice {
    Oracle,
    NoisyOracle { seed: u64, flip_prob: f64 },
    Vlm(EndpointConfig),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub reasoner: ReasonerConfig,
    pub backend: BackendChoice,
    pub segmentation: SegmentationParams,
    pub gate: f64,
    pub track_timeout: f64,
    pub margin_frac: f64,
    pub debounce: DebouncePolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reasoner: ReasonerConfig::default(),
            backend: BackendChoice::Oracle,
            segmentation: SegmentationParams {
                cluster_tolerance: 0.03,
                min_points: 30,
                max_points: 50_000,
                ..Default::default()
            },
            gate: 0.5,
            track_timeout: 2.0,
            margin_frac: 0.25,
            debounce: DebouncePolicy::default(),
        }
    }
}

/// Per-run statistics. Wall-clock latencies live in their own section so
/// the rest of the report is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub trigger_count: usize,
    pub cycle_count: usize,
    pub prediction_count: usize,
    pub grounding_errors: Vec<String>,
    pub backend_errors: Vec<String>,
    pub warnings: Vec<String>,
    pub latency: LatencySection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySection {
    pub per_cycle_ms: Vec<f64>,
}

/// Scripted backend: replies with pre-recorded outcomes, per actor, in
/// order.
#[derive(Default)]
pub struct OracleBackend {
    queues: BTreeMap<InstanceId, VecDeque<ReasonerOutput>>,
}

impl OracleBackend {
    pub fn push_outcome(&mut self, actor: InstanceId, output: ReasonerOutput) {
        self.queues.entry(actor).or_default().push_back(output);
    }
}

impl ReasonerBackend for OracleBackend {
    fn dispatch(&mut self, prompt: &PromptSpec) -> Result<String, BackendError> {
        let outcome = self
            .queues
            .get_mut(&prompt.actor)
            .and_then(|q| q.pop_front())
            .ok_or_else(|| {
                BackendError::Unavailable(format!(
                    "no scripted outcome left for {}",
                    prompt.actor
                ))
            })?;
        Ok(render_output(&outcome))
    }

    fn name(&self) -> &str {
        "oracle"
    }
}

/// Oracle with seeded per-field perturbations, used to give the metrics
/// adversarial inputs with known expected scores.
pub struct NoisyOracleBackend {
    inner: OracleBackend,
    rng: ChaCha8Rng,
    pub action_flip_prob: f64,
    pub object_swap_prob: f64,
    pub interaction_toggle_prob: f64,
    live_objects: Vec<InstanceId>,
}

impl NoisyOracleBackend {
    pub fn new(seed: u64, action_flip_prob: f64) -> Self {
        NoisyOracleBackend {
            inner: OracleBackend::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            action_flip_prob,
            object_swap_prob: 0.0,
            interaction_toggle_prob: 0.0,
            live_objects: Vec::new(),
        }
    }

    pub fn push_outcome(&mut self, actor: InstanceId, output: ReasonerOutput) {
        self.inner.push_outcome(actor, output);
    }

    pub fn set_live_objects(&mut self, objects: &[InstanceId]) {
        self.live_objects = objects.to_vec();
    }
}

impl ReasonerBackend for NoisyOracleBackend {
    fn dispatch(&mut self, prompt: &PromptSpec) -> Result<String, BackendError> {
        let raw = self.inner.dispatch(prompt)?;
        let mut out = crate::reasoner::parse_response(&raw)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        if self.rng.gen_bool(self.action_flip_prob.clamp(0.0, 1.0)) {
            out.action = format!("{}_flipped", out.action);
        }
        if self.rng.gen_bool(self.object_swap_prob.clamp(0.0, 1.0)) {
            if let Some(current) = &out.object {
                let others: Vec<&InstanceId> = self
                    .live_objects
                    .iter()
                    .filter(|o| render_id(**o) != *current)
                    .collect();
                if !others.is_empty() {
                    let pick = others[self.rng.gen_range(0..others.len())];
                    out.object = Some(render_id(*pick));
                }
            }
        }
        if self.rng.gen_bool(self.interaction_toggle_prob.clamp(0.0, 1.0)) {
            out.robot_interaction = !out.robot_interaction;
        }
        Ok(render_output(&out))
    }

    fn name(&self) -> &str {
        "noisy_oracle"
    }
}

enum PipelineBackend {
    Oracle(OracleBackend),
    Noisy(NoisyOracleBackend),
    Vlm(VlmBackend),
}

impl PipelineBackend {
    fn as_reasoner(&mut self) -> &mut dyn ReasonerBackend {
        match self {
            PipelineBackend::Oracle(b) => b,
            PipelineBackend::Noisy(b) => b,
            PipelineBackend::Vlm(b) => b,
        }
    }

    fn push_outcome(&mut self, actor: InstanceId, output: ReasonerOutput) {
        match self {
            PipelineBackend::Oracle(b) => b.push_outcome(actor, output),
            PipelineBackend::Noisy(b) => b.push_outcome(actor, output),
            PipelineBackend::Vlm(_) => {}
        }
    }
}

struct PipelineState {
    mem: MemoryStore,
    tracks: TrackState,
    trigger_state: TriggerState,
    sampler: Option<DiscreteSampler>,
    hints: BTreeMap<String, InstanceId>,
    live_objects: Vec<InstanceId>,
    current_frame: Option<String>,
    pending_resegment: bool,
    predictions: Vec<ActionTriplet>,
    report: RunReport,
}

/// Run a scenario through the full pipeline: clouds are segmented into
/// registered objects, poses drive identity tracking and crop updates,
/// labels feed the trigger automata, and each trigger runs one reasoning
/// cycle against the configured backend.
pub fn run_pipeline(
    scenario: &LoadedScenario,
    config: &RunConfig,
) -> Result<(MemoryStore, TripletSequence, RunReport), ScenarioError> {
    let mut backend = match &config.backend {
        BackendChoice::Oracle => PipelineBackend::Oracle(OracleBackend::default()),
        BackendChoice::NoisyOracle { seed, flip_prob } => {
            PipelineBackend::Noisy(NoisyOracleBackend::new(*seed, *flip_prob))
        }
        BackendChoice::Vlm(cfg) => PipelineBackend::Vlm(VlmBackend { config: cfg.clone() }),
    };
    let mut state = PipelineState {
        mem: MemoryStore::new(),
        tracks: TrackState::new(),
        trigger_state: TriggerState::new(),
        sampler: match config.reasoner.mode {
            ReasonerMode::DiscretePrev => {
                Some(DiscreteSampler::new(config.reasoner.sample_interval))
            }
            _ => None,
        },
        hints: BTreeMap::new(),
        live_objects: Vec::new(),
        current_frame: None,
        pending_resegment: false,
        predictions: Vec::new(),
        report: RunReport::default(),
    };

    for event in &scenario.events {
        // discrete sampling fires at interval boundaries regardless of labels
        if let Some(sampler) = &mut state.sampler {
            let live: Vec<InstanceId> = state
                .tracks
                .live_ids()
                .into_iter()
                .filter(|id| id.kind == InstanceKind::Person)
                .collect();
            for trig in sampler.advance(event.t, &live) {
                run_cycle(&mut state, &trig, config, &mut backend);
            }
        }
        handle_event(&mut state, event, scenario, config, &mut backend)?;
    }

    let seq = TripletSequence {
        recording: scenario.header.recording.clone(),
        scenario: scenario.header.scenario,
        setting: scenario.header.setting,
        triplets: state.predictions.clone(),
    };
    state.report.prediction_count = seq.triplets.len();
    Ok((state.mem, seq, state.report))
}

fn handle_event(
    state: &mut PipelineState,
    event: &ScenarioEvent,
    scenario: &LoadedScenario,
    config: &RunConfig,
    backend: &mut PipelineBackend,
) -> Result<(), ScenarioError> {
    match &event.payload {
        EventPayload::Frame { path } => {
            state.current_frame = Some(scenario.base_dir.join(path).to_string_lossy().into_owned());
        }
        EventPayload::Resegment => {
            state.pending_resegment = true;
        }
        EventPayload::PointCloud { points, path } => {
            let cloud = match (points, path) {
                (Some(points), _) => PointCloud::new(points.clone()),
                (None, Some(p)) => load_point_file(&scenario.base_dir.join(p))?,
                (None, None) => unreachable!("validated at load"),
            };
            match segment_workspace(&cloud, &config.segmentation) {
                Ok(candidates) => {
                    if state.pending_resegment {
                        state.live_objects.clear();
                        state.pending_resegment = false;
                    } else if !state.live_objects.is_empty() {
                        // repeated clouds without a resegment marker replace the live set
                        state.live_objects.clear();
                    }
                    for (i, cand) in candidates.iter().enumerate() {
                        let crop_ref = match &state.current_frame {
                            Some(frame) => format!(
                                "{frame}#{},{},{},{}",
                                cand.crop.x, cand.crop.y, cand.crop.w, cand.crop.h
                            ),
                            None => format!("cloud@t={}/cluster{}", event.t, i),
                        };
                        let id = state.mem.register_object(&crop_ref, cand.centroid, event.t);
                        state.live_objects.push(id);
                    }
                    if let PipelineBackend::Noisy(b) = backend {
                        b.set_live_objects(&state.live_objects);
                    }
                }
                Err(e) => {
                    state.report.warnings.push(format!("segmentation failed at t={}: {e}", event.t));
                }
            }
        }
        EventPayload::PoseSample { actor, joints, class } => {
            let centroid = centroid_of(joints);
            let actor_class = match class {
                PoseClass::Human => ActorClass::Human,
                PoseClass::Robot => ActorClass::Robot,
            };
            let mem = &mut state.mem;
            let assigned = associate_person_tracks(
                &mut state.tracks,
                &[centroid],
                event.t,
                config.gate,
                config.track_timeout,
                || mem.register_actor(actor_class, event.t),
            );
            let id = assigned[0].0;
            state.hints.insert(actor.clone(), id);
            state.mem.update_actor_pose(id, joints.clone(), event.t).ok();
            match compute_crop_region(joints, &config.segmentation.intrinsics, config.margin_frac)
            {
                Ok(region) => {
                    if let Some(frame) = &state.current_frame {
                        let crop_ref = format!(
                            "{frame}#{},{},{},{}",
                            region.x, region.y, region.w, region.h
                        );
                        if let Err(e) = state.mem.append_person_crop(id, &crop_ref, event.t) {
                            state.report.warnings.push(format!("crop append: {e}"));
                        }
                    }
                }
                Err(e) => {
                    state.report.warnings.push(format!("crop region for {actor}: {e}"));
                }
            }
        }
        EventPayload::OracleOutcome { actor, output } => match state.hints.get(actor) {
            Some(&id) => backend.push_outcome(id, output.clone()),
            None => state
                .report
                .warnings
                .push(format!("oracle outcome for unknown hint {actor} at t={}", event.t)),
        },
        EventPayload::ActionLabel { actor, label } => {
            if state.sampler.is_some() {
                return Ok(()); // discrete mode ignores the label stream
            }
            let Some(&id) = state.hints.get(actor) else {
                state
                    .report
                    .warnings
                    .push(format!("label for unknown hint {actor} at t={}", event.t));
                return Ok(());
            };
            let label = match normalize_action_label(label) {
                Ok(l) => l,
                Err(e) => {
                    state.report.warnings.push(format!("bad label at t={}: {e}", event.t));
                    return Ok(());
                }
            };
            let sample = ActionLabelSample {
                actor: id,
                label,
                t: event.t,
                window: state.mem.recent_crops(id, 4).unwrap_or_default(),
            };
            match state.trigger_state.push_label(&sample, config.debounce) {
                Ok(Some(mut trig)) => {
                    if !config.reasoner.mode.includes_action_label() {
                        trig.label = None;
                    }
                    run_cycle(state, &trig, config, backend);
                }
                Ok(None) => {}
                Err(e) => {
                    state.report.warnings.push(format!("trigger: {e}"));
                }
            }
        }
    }
    Ok(())
}

fn run_cycle(
    state: &mut PipelineState,
    trigger: &TriggerEvent,
    config: &RunConfig,
    backend: &mut PipelineBackend,
) {
    state.report.trigger_count += 1;
    let started = Instant::now();
    let result = run_reasoning_cycle(
        trigger,
        &mut state.mem,
        &config.reasoner,
        backend.as_reasoner(),
        &state.live_objects,
    );
    state.report.latency.per_cycle_ms.push(started.elapsed().as_secs_f64() * 1e3);
    state.report.cycle_count += 1;
    match result {
        Ok(triplet) => state.predictions.push(triplet),
        Err(CycleError::Grounding(e)) => {
            state.report.grounding_errors.push(format!("t={}: {e}", trigger.t))
        }
        Err(CycleError::Backend(e)) => {
            state.report.backend_errors.push(format!("t={}: {e}", trigger.t))
        }
    }
}

fn centroid_of(joints: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for j in joints {
        for k in 0..3 {
            c[k] += j[k];
        }
    }
    for v in &mut c {
        *v /= joints.len().max(1) as f64;
    }
    c
}

/// Point files are flat coordinate arrays: `[x, y, z, x, y, z, ...]`.
fn load_point_file(path: &Path) -> Result<PointCloud, ScenarioError> {
    let text = fs::read_to_string(path)?;
    let flat: Vec<f64> = serde_json::from_str(&text).map_err(|e| ScenarioError::FormatError {
        line: 0,
        reason: format!("{}: {e}", path.display()),
    })?;
    let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(PointCloud::new(points))
}
