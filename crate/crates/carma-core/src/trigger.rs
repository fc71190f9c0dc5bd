//! Action-label debouncing and trigger generation, plus the discrete
//! sampler used by the fixed-interval configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::InstanceId;

#[derive(Debug, Error, PartialEq)]
pub enum TriggerError {
    #[error("sample for {actor} at t={t} arrived after t={latest}")]
    OrderViolation { actor: InstanceId, t: f64, latest: f64 },
}

/// One classifier output: the label inferred from a four-frame window of
/// person crops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLabelSample {
    pub actor: InstanceId,
    pub label: String,
    pub t: f64,
    /// Crop references the classifier consumed, at most four.
    #[serde(default)]
    pub window: Vec<String>,
}

/// A request for one reasoning cycle. The label is carried only in the
/// trigger+label configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub actor: InstanceId,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Number of consecutive identical labels required before a label counts
/// as stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebouncePolicy {
    pub k: u32,
}

impl Default for DebouncePolicy {
    fn default() -> Self {
        DebouncePolicy { k: 2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ActorTriggerState {
    pending_label: Option<String>,
    pending_count: u32,
    stable_label: Option<String>,
    last_t: Option<f64>,
}

/// Per-actor change-detection automata. A trigger fires when an actor's
/// stable label (k consecutive identical samples) differs from the
/// previous stable label; the first stable label only sets the baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriggerState {
    actors: BTreeMap<InstanceId, ActorTriggerState>,
}

impl TriggerState {
    pub fn new() -> Self {
        TriggerState::default()
    }

    /// Feed one sample; returns the trigger it completes, if any.
    pub fn push_label(
        &mut self,
        sample: &ActionLabelSample,
        policy: DebouncePolicy,
    ) -> Result<Option<TriggerEvent>, TriggerError> {
        assert!(policy.k >= 1);
        let state = self.actors.entry(sample.actor).or_default();
        if let Some(latest) = state.last_t {
            if sample.t < latest {
                return Err(TriggerError::OrderViolation {
                    actor: sample.actor,
                    t: sample.t,
                    latest,
                });
            }
        }
        state.last_t = Some(sample.t);

        if state.pending_label.as_deref() == Some(&sample.label) {
            state.pending_count += 1;
        } else {
            state.pending_label = Some(sample.label.clone());
            state.pending_count = 1;
        }
        if state.pending_count < policy.k {
            return Ok(None);
        }
        // label is stable; fire only on a change from the fired baseline
        let changed = state.stable_label.as_deref() != Some(&sample.label);
        let had_baseline = state.stable_label.is_some();
        state.stable_label = Some(sample.label.clone());
        if changed && had_baseline {
            Ok(Some(TriggerEvent {
                actor: sample.actor,
                t: sample.t,
                label: Some(sample.label.clone()),
            }))
        } else {
            Ok(None)
        }
    }
}

/// Fixed-interval trigger schedule: label-free triggers for every live
/// actor at t = interval, 2*interval, ... Ticks are start-aligned, so a
/// run of `duration` seconds yields floor(duration / interval) ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSampler {
    interval: f64,
    ticks_emitted: u64,
}

impl DiscreteSampler {
    pub fn new(interval: f64) -> Self {
        assert!(interval > 0.0);
        DiscreteSampler { interval, ticks_emitted: 0 }
    }

    /// Advance the clock to `now` and emit triggers for every boundary
    /// crossed, one per live actor per boundary.
    pub fn advance(&mut self, now: f64, live_actors: &[InstanceId]) -> Vec<TriggerEvent> {
        let mut out = Vec::new();
        loop {
            let next_tick = (self.ticks_emitted + 1) as f64 * self.interval;
            if next_tick > now {
                break;
            }
            self.ticks_emitted += 1;
            for &actor in live_actors {
                out.push(TriggerEvent { actor, t: next_tick, label: None });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InstanceKind;

    fn pid(n: u32) -> InstanceId {
        InstanceId::new(InstanceKind::Person, n)
    }

    fn sample(actor: InstanceId, label: &str, t: f64) -> ActionLabelSample {
        ActionLabelSample { actor, label: label.into(), t, window: Vec::new() }
    }

    fn run_stream(labels: &[&str], k: u32) -> Vec<TriggerEvent> {
        let mut state = TriggerState::new();
        let policy = DebouncePolicy { k };
        labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| state.push_label(&sample(pid(1), l, i as f64), policy).unwrap())
            .collect()
    }

    #[test]
    fn stable_change_fires_once() {
        let triggers = run_stream(&["idle", "idle", "pour", "pour"], 2);
        assert_eq!(triggers.len(), 1);
        assert_eq!(triggers[0].t, 3.0);
        assert_eq!(triggers[0].label.as_deref(), Some("pour"));
    }

    #[test]
    fn constant_stream_never_refires() {
        let mut labels = vec!["idle", "idle"];
        labels.extend(std::iter::repeat("pour").take(10));
        let triggers = run_stream(&labels, 2);
        assert_eq!(triggers.len(), 1);
    }

    #[test]
    fn alternating_stream_never_stabilizes() {
        assert!(run_stream(&["pour", "idle", "pour", "idle"], 2).is_empty());
    }

    #[test]
    fn k1_equals_raw_changes() {
        let stream = ["a", "b", "b", "a", "c", "c", "c", "b"];
        let raw_changes = stream.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(run_stream(&stream, 1).len(), raw_changes);
    }

    #[test]
    fn out_of_order_sample_rejected() {
        let mut state = TriggerState::new();
        let policy = DebouncePolicy::default();
        state.push_label(&sample(pid(1), "idle", 1.0), policy).unwrap();
        assert!(matches!(
            state.push_label(&sample(pid(1), "idle", 0.5), policy),
            Err(TriggerError::OrderViolation { .. })
        ));
    }

    #[test]
    fn actors_are_independent() {
        let a = pid(1);
        let b = pid(2);
        let policy = DebouncePolicy { k: 2 };
        let stream_a = ["idle", "idle", "pour", "pour", "idle", "idle"];
        let stream_b = ["idle", "idle", "pick_up", "pick_up"];

        let mut separate = Vec::new();
        for (actor, stream) in [(a, &stream_a[..]), (b, &stream_b[..])] {
            let mut st = TriggerState::new();
            for (i, l) in stream.iter().enumerate() {
                if let Some(tr) = st.push_label(&sample(actor, l, i as f64), policy).unwrap() {
                    separate.push(tr);
                }
            }
        }

        let mut st = TriggerState::new();
        let mut interleaved = Vec::new();
        for i in 0..stream_a.len().max(stream_b.len()) {
            if let Some(l) = stream_a.get(i) {
                if let Some(tr) = st.push_label(&sample(a, l, i as f64), policy).unwrap() {
                    interleaved.push(tr);
                }
            }
            if let Some(l) = stream_b.get(i) {
                if let Some(tr) = st.push_label(&sample(b, l, i as f64), policy).unwrap() {
                    interleaved.push(tr);
                }
            }
        }
        let key = |t: &TriggerEvent| (t.actor, t.t.to_bits(), t.label.clone());
        let mut s: Vec<_> = separate.iter().map(key).collect();
        let mut i: Vec<_> = interleaved.iter().map(key).collect();
        s.sort();
        i.sort();
        assert_eq!(s, i);
    }

    #[test]
    fn discrete_sampler_tick_schedule() {
        let mut sampler = DiscreteSampler::new(2.0);
        let actors = [pid(1), pid(2)];
        let mut total = 0;
        for step in 1..=100 {
            total += sampler.advance(step as f64 * 0.1, &actors).len();
        }
        // 10 s at 2 s interval: 5 ticks x 2 actors
        assert_eq!(total, 10);
    }

    #[test]
    fn discrete_sampler_no_actors() {
        let mut sampler = DiscreteSampler::new(1.0);
        assert!(sampler.advance(10.0, &[]).is_empty());
    }

    #[test]
    fn discrete_sampler_long_interval() {
        let mut sampler = DiscreteSampler::new(10.0);
        assert!(sampler.advance(9.9, &[pid(1)]).is_empty());
        assert_eq!(sampler.advance(10.0, &[pid(1)]).len(), 1);
    }
}
