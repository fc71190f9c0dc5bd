//! Central instance store: objects, actors and the triplet history, with a
//! line-oriented persistence format (`carma-mem/1`).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ActionTriplet, ActorClass, ActorInstance, InstanceId, InstanceKind, ObjectInstance,
};

pub const MEMORY_FORMAT_HEADER: &str = "carma-mem/1";

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("unknown instance {0}")]
    NotFound(InstanceId),
    #[error("timestamp {t} is older than the latest record {latest} for {id}")]
    OrderViolation { id: InstanceId, t: f64, latest: f64 },
    #[error("triplet references unknown instance {0}")]
    DanglingReference(InstanceId),
    #[error("triplet timestamp {t} precedes log tail {latest}")]
    LogOrderViolation { t: f64, latest: f64 },
    #[error("load error at byte {offset}: {reason}")]
    LoadError { offset: u64, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The information hub: every detected instance plus the ordered log of
/// grounded triplets. Reads see consistent snapshots; callers serialize
/// writes (the replay orchestrator is single-writer).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryStore {
    objects: BTreeMap<InstanceId, ObjectInstance>,
    actors: BTreeMap<InstanceId, ActorInstance>,
    triplet_log: Vec<ActionTriplet>,
    next_ordinal: BTreeMap<InstanceKind, u32>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }

    fn fresh_id(&mut self, kind: InstanceKind) -> InstanceId {
        let next = self.next_ordinal.entry(kind).or_insert(1);
        let id = InstanceId::new(kind, *next);
        *next += 1;
        id
    }

    /// Register a new object with its reference crop and 3D location.
    /// Registration never deduplicates; that is the detector's job.
    pub fn register_object(&mut self, crop_ref: &str, location: [f64; 3], t: f64) -> InstanceId {
        debug_assert!(location.iter().all(|c| c.is_finite()));
        let id = self.fresh_id(InstanceKind::Object);
        self.objects.insert(
            id,
            ObjectInstance {
                id,
                crop_ref: crop_ref.to_string(),
                location,
                last_seen: t,
                embedding: None,
            },
        );
        id
    }

    /// Replace the provided fields of an object record and bump `last_seen`.
    pub fn update_object(
        &mut self,
        id: InstanceId,
        location: Option<[f64; 3]>,
        crop_ref: Option<&str>,
        t: f64,
    ) -> Result<&ObjectInstance, MemoryError> {
        let obj = self.objects.get_mut(&id).ok_or(MemoryError::NotFound(id))?;
        if let Some(loc) = location {
            obj.location = loc;
        }
        if let Some(crop) = crop_ref {
            obj.crop_ref = crop.to_string();
        }
        obj.last_seen = t;
        Ok(obj)
    }

    pub fn set_object_embedding(
        &mut self,
        id: InstanceId,
        embedding: Vec<f64>,
    ) -> Result<(), MemoryError> {
        let obj = self.objects.get_mut(&id).ok_or(MemoryError::NotFound(id))?;
        obj.embedding = Some(embedding);
        Ok(())
    }

    pub fn register_actor(&mut self, actor_class: ActorClass, _t: f64) -> InstanceId {
        let id = self.fresh_id(actor_class.id_kind());
        self.actors.insert(
            id,
            ActorInstance {
                id,
                actor_class,
                last_pose: None,
                crop_history: Vec::new(),
            },
        );
        id
    }

    /// Append a person crop; timestamps must be strictly increasing per actor.
    pub fn append_person_crop(
        &mut self,
        id: InstanceId,
        crop_ref: &str,
        t: f64,
    ) -> Result<(), MemoryError> {
        let actor = self.actors.get_mut(&id).ok_or(MemoryError::NotFound(id))?;
        if let Some((latest, _)) = actor.crop_history.last() {
            if t <= *latest {
                return Err(MemoryError::OrderViolation { id, t, latest: *latest });
            }
        }
        actor.crop_history.push((t, crop_ref.to_string()));
        Ok(())
    }

    pub fn update_actor_pose(
        &mut self,
        id: InstanceId,
        pose: Vec<[f64; 3]>,
        _t: f64,
    ) -> Result<(), MemoryError> {
        let actor = self.actors.get_mut(&id).ok_or(MemoryError::NotFound(id))?;
        actor.last_pose = Some(pose);
        Ok(())
    }

    /// The `n` most recent crops for an actor, oldest first.
    pub fn recent_crops(&self, id: InstanceId, n: usize) -> Result<Vec<String>, MemoryError> {
        let actor = self.actors.get(&id).ok_or(MemoryError::NotFound(id))?;
        let len = actor.crop_history.len();
        let start = len.saturating_sub(n);
        Ok(actor.crop_history[start..].iter().map(|(_, r)| r.clone()).collect())
    }

    /// The latest logged triplet for an actor, if any.
    pub fn previous_triplet(&self, actor_id: InstanceId) -> Option<&ActionTriplet> {
        self.triplet_log.iter().rev().find(|tr| tr.actor == actor_id)
    }

    /// Append a grounded triplet. Every referenced instance must exist and
    /// the log stays non-decreasing in timestamp.
    pub fn log_triplet(&mut self, triplet: ActionTriplet) -> Result<(), MemoryError> {
        if !self.actors.contains_key(&triplet.actor) {
            return Err(MemoryError::DanglingReference(triplet.actor));
        }
        for obj in [triplet.object, triplet.on].into_iter().flatten() {
            if !self.objects.contains_key(&obj) && !self.actors.contains_key(&obj) {
                return Err(MemoryError::DanglingReference(obj));
            }
        }
        if let Some(last) = self.triplet_log.last() {
            if triplet.t < last.t {
                return Err(MemoryError::LogOrderViolation { t: triplet.t, latest: last.t });
            }
        }
        self.triplet_log.push(triplet);
        Ok(())
    }

    pub fn object(&self, id: InstanceId) -> Option<&ObjectInstance> {
        self.objects.get(&id)
    }

    pub fn actor(&self, id: InstanceId) -> Option<&ActorInstance> {
        self.actors.get(&id)
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.objects.contains_key(&id) || self.actors.contains_key(&id)
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.values()
    }

    pub fn actors(&self) -> impl Iterator<Item = &ActorInstance> {
        self.actors.values()
    }

    pub fn triplet_log(&self) -> &[ActionTriplet] {
        &self.triplet_log
    }

    /// Write the store as a `carma-mem/1` document log: header line, then
    /// one record per line.
    pub fn persist(&self, path: &Path) -> Result<(), MemoryError> {
        let file = fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{MEMORY_FORMAT_HEADER}")?;
        for obj in self.objects.values() {
            writeln!(w, "{}", serde_json::to_string(&Record::Object(obj.clone())).unwrap())?;
        }
        for actor in self.actors.values() {
            writeln!(w, "{}", serde_json::to_string(&Record::Actor(actor.clone())).unwrap())?;
        }
        for triplet in &self.triplet_log {
            writeln!(w, "{}", serde_json::to_string(&Record::Triplet(triplet.clone())).unwrap())?;
        }
        for (kind, next) in &self.next_ordinal {
            let rec = Record::NextOrdinal { kind: *kind, next: *next };
            writeln!(w, "{}", serde_json::to_string(&rec).unwrap())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a persisted store. A corrupt file yields `LoadError` with the
    /// byte offset of the offending line; never a partial store.
    pub fn load(path: &Path) -> Result<MemoryStore, MemoryError> {
        let text = fs::read_to_string(path)?;
        let mut store = MemoryStore::new();
        let mut lines = split_lines_with_offsets(&text);
        match lines.next() {
            Some((_, line)) if line == MEMORY_FORMAT_HEADER => {}
            Some((off, line)) => {
                return Err(MemoryError::LoadError {
                    offset: off,
                    reason: format!("bad header {line:?}, expected {MEMORY_FORMAT_HEADER:?}"),
                })
            }
            None => {
                return Err(MemoryError::LoadError { offset: 0, reason: "empty file".into() })
            }
        }
        for (offset, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| MemoryError::LoadError {
                offset,
                reason: e.to_string(),
            })?;
            match record {
                Record::Object(obj) => {
                    store.objects.insert(obj.id, obj);
                }
                Record::Actor(actor) => {
                    store.actors.insert(actor.id, actor);
                }
                Record::Triplet(triplet) => {
                    store.log_triplet(triplet).map_err(|e| MemoryError::LoadError {
                        offset,
                        reason: e.to_string(),
                    })?;
                }
                Record::NextOrdinal { kind, next } => {
                    store.next_ordinal.insert(kind, next);
                }
            }
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Object(ObjectInstance),
    Actor(ActorInstance),
    Triplet(ActionTriplet),
    NextOrdinal { kind: InstanceKind, next: u32 },
}

fn split_lines_with_offsets(text: &str) -> impl Iterator<Item = (u64, &str)> {
    let mut offset = 0u64;
    text.split_inclusive('\n').map(move |raw| {
        let start = offset;
        offset += raw.len() as u64;
        (start, raw.trim_end_matches(['\n', '\r']))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InstanceKind;

    #[test]
    fn ordinals_are_monotonic() {
        let mut mem = MemoryStore::new();
        assert_eq!(mem.register_object("a.png", [0.0; 3], 0.0).to_string(), "object_1");
        assert_eq!(mem.register_object("b.png", [0.0; 3], 0.0).to_string(), "object_2");
        assert_eq!(mem.register_object("c.png", [0.0; 3], 0.0).to_string(), "object_3");
    }

    #[test]
    fn identical_locations_get_distinct_ids() {
        let mut mem = MemoryStore::new();
        let a = mem.register_object("a.png", [1.0, 2.0, 3.0], 0.0);
        let b = mem.register_object("b.png", [1.0, 2.0, 3.0], 0.0);
        assert_ne!(a, b);
    }

    #[test]
    fn update_object_bumps_last_seen() {
        let mut mem = MemoryStore::new();
        let id = mem.register_object("a.png", [0.0; 3], 0.0);
        let obj = mem.update_object(id, Some([1.0, 0.0, 0.0]), None, 2.5).unwrap();
        assert_eq!(obj.location, [1.0, 0.0, 0.0]);
        assert_eq!(obj.last_seen, 2.5);
        // no fields: only last_seen moves
        let obj = mem.update_object(id, None, None, 3.0).unwrap();
        assert_eq!(obj.location, [1.0, 0.0, 0.0]);
        assert_eq!(obj.last_seen, 3.0);
    }

    #[test]
    fn update_unknown_object_is_not_found() {
        let mut mem = MemoryStore::new();
        let ghost = InstanceId::new(InstanceKind::Object, 7);
        assert!(matches!(mem.update_object(ghost, None, None, 1.0), Err(MemoryError::NotFound(_))));
    }

    #[test]
    fn crop_history_is_ordered() {
        let mut mem = MemoryStore::new();
        let id = mem.register_actor(ActorClass::Human, 0.0);
        assert_eq!(id.to_string(), "person_1");
        for i in 0..5 {
            mem.append_person_crop(id, &format!("c{i}.png"), i as f64).unwrap();
        }
        assert_eq!(mem.actor(id).unwrap().crop_history.len(), 5);
        assert!(matches!(
            mem.append_person_crop(id, "late.png", 1.0),
            Err(MemoryError::OrderViolation { .. })
        ));
    }

    #[test]
    fn recent_crops_window() {
        let mut mem = MemoryStore::new();
        let id = mem.register_actor(ActorClass::Human, 0.0);
        for i in 1..=6 {
            mem.append_person_crop(id, &format!("c{i}.png"), i as f64).unwrap();
        }
        assert_eq!(mem.recent_crops(id, 4).unwrap(), vec!["c3.png", "c4.png", "c5.png", "c6.png"]);

        let short = mem.register_actor(ActorClass::Human, 0.0);
        mem.append_person_crop(short, "a.png", 1.0).unwrap();
        mem.append_person_crop(short, "b.png", 2.0).unwrap();
        assert_eq!(mem.recent_crops(short, 4).unwrap(), vec!["a.png", "b.png"]);

        let empty = mem.register_actor(ActorClass::Human, 0.0);
        assert!(mem.recent_crops(empty, 4).unwrap().is_empty());
    }

    fn triplet(actor: InstanceId, action: &str, t: f64) -> ActionTriplet {
        ActionTriplet { actor, action: action.into(), object: None, on: None, robot_interaction: false, t }
    }

    #[test]
    fn previous_triplet_scans_per_actor() {
        let mut mem = MemoryStore::new();
        let p1 = mem.register_actor(ActorClass::Human, 0.0);
        let p2 = mem.register_actor(ActorClass::Human, 0.0);
        assert!(mem.previous_triplet(p1).is_none());
        mem.log_triplet(triplet(p1, "pick_up", 1.0)).unwrap();
        mem.log_triplet(triplet(p2, "pour", 2.0)).unwrap();
        mem.log_triplet(triplet(p1, "place_down", 3.0)).unwrap();
        assert_eq!(mem.previous_triplet(p1).unwrap().action, "place_down");
        assert_eq!(mem.previous_triplet(p2).unwrap().action, "pour");
        let p3 = mem.register_actor(ActorClass::Human, 0.0);
        assert!(mem.previous_triplet(p3).is_none());
    }

    #[test]
    fn log_rejects_dangling_references() {
        let mut mem = MemoryStore::new();
        let p1 = mem.register_actor(ActorClass::Human, 0.0);
        let mut bad = triplet(p1, "pick_up", 1.0);
        bad.object = Some(InstanceId::new(InstanceKind::Object, 9));
        assert!(matches!(mem.log_triplet(bad), Err(MemoryError::DanglingReference(_))));
        assert!(mem.triplet_log().is_empty());
    }

    #[test]
    fn persist_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.jsonl");

        let empty = MemoryStore::new();
        empty.persist(&path).unwrap();
        assert_eq!(MemoryStore::load(&path).unwrap(), empty);

        let mut mem = MemoryStore::new();
        for i in 0..3 {
            let id = mem.register_object(&format!("o{i}.png"), [i as f64, 0.0, 1.0], 0.0);
            if i == 0 {
                mem.set_object_embedding(id, vec![1.0, 0.0, 0.0]).unwrap();
            }
        }
        let p1 = mem.register_actor(ActorClass::Human, 0.0);
        let p2 = mem.register_actor(ActorClass::Human, 0.0);
        mem.append_person_crop(p1, "p1.png", 0.5).unwrap();
        for i in 0..5 {
            let actor = if i % 2 == 0 { p1 } else { p2 };
            mem.log_triplet(triplet(actor, "pick_up", i as f64)).unwrap();
        }
        mem.persist(&path).unwrap();
        assert_eq!(MemoryStore::load(&path).unwrap(), mem);
    }

    #[test]
    fn truncated_file_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.jsonl");
        let mut mem = MemoryStore::new();
        mem.register_object("a.png", [0.0; 3], 0.0);
        mem.persist(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() - 10]).unwrap();
        assert!(matches!(MemoryStore::load(&path), Err(MemoryError::LoadError { .. })));
    }

    #[test]
    fn load_error_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.jsonl");
        fs::write(&path, format!("{MEMORY_FORMAT_HEADER}\nnot json\n")).unwrap();
        match MemoryStore::load(&path) {
            Err(MemoryError::LoadError { offset, .. }) => {
                assert_eq!(offset, MEMORY_FORMAT_HEADER.len() as u64 + 1)
            }
            other => panic!("expected LoadError, got {other:?}"),
        }
    }
}
