//! Property tests for the instance memory: randomized operation
//! sequences must keep the triplet log referentially intact, agree with a
//! brute-force previous-triplet scan, and survive persistence unchanged.

use carma_core::memory::MemoryStore;
use carma_core::model::{ActionTriplet, ActorClass, InstanceId};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    RegisterObject { x: f64 },
    RegisterActor { robot: bool },
    AppendCrop { actor_pick: usize, name: u8 },
    LogTriplet { actor_pick: usize, object_pick: usize, action_pick: usize, with_on: bool },
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (-10.0..10.0f64).prop_map(|x| Op::RegisterObject { x }),
        any::<bool>().prop_map(|robot| Op::RegisterActor { robot }),
        (any::<usize>(), any::<u8>())
            .prop_map(|(actor_pick, name)| Op::AppendCrop { actor_pick, name }),
        (any::<usize>(), any::<usize>(), 0usize..3, any::<bool>()).prop_map(
            |(actor_pick, object_pick, action_pick, with_on)| Op::LogTriplet {
                actor_pick,
                object_pick,
                action_pick,
                with_on,
            }
        ),
    ]
}

const ACTIONS: [&str; 3] = ["pick_up", "place_down", "pour"];

/// Apply the ops, tracking ids on the side so references are always valid.
fn build(ops: &[Op]) -> MemoryStore {
    let mut mem = MemoryStore::new();
    let mut objects: Vec<InstanceId> = Vec::new();
    let mut actors: Vec<InstanceId> = Vec::new();
    let mut clock = 0.0;
    for op in ops {
        clock += 0.25;
        match op {
            Op::RegisterObject { x } => {
                objects.push(mem.register_object("o.png", [*x, 0.0, 1.0], clock));
            }
            Op::RegisterActor { robot } => {
                let class = if *robot { ActorClass::Robot } else { ActorClass::Human };
                actors.push(mem.register_actor(class, clock));
            }
            Op::AppendCrop { actor_pick, name } => {
                if !actors.is_empty() {
                    let id = actors[actor_pick % actors.len()];
                    mem.append_person_crop(id, &format!("c{name}.png"), clock).unwrap();
                }
            }
            Op::LogTriplet { actor_pick, object_pick, action_pick, with_on } => {
                if actors.is_empty() || objects.is_empty() {
                    continue;
                }
                mem.log_triplet(ActionTriplet {
                    actor: actors[actor_pick % actors.len()],
                    action: ACTIONS[*action_pick].into(),
                    object: Some(objects[object_pick % objects.len()]),
                    on: with_on.then(|| objects[(object_pick + 1) % objects.len()]),
                    robot_interaction: false,
                    t: clock,
                })
                .unwrap();
            }
        }
    }
    mem
}

proptest! {
    #[test]
    fn triplet_log_is_referentially_intact(ops in prop::collection::vec(op_strategy(), 0..60)) {
        let mem = build(&ops);
        let object_ids: Vec<InstanceId> = mem.objects().map(|o| o.id).collect();
        let actor_ids: Vec<InstanceId> = mem.actors().map(|a| a.id).collect();
        for triplet in mem.triplet_log() {
            prop_assert!(actor_ids.contains(&triplet.actor));
            for referenced in [triplet.object, triplet.on].into_iter().flatten() {
                prop_assert!(object_ids.contains(&referenced) || actor_ids.contains(&referenced));
            }
        }
        // timestamps never step backwards
        for pair in mem.triplet_log().windows(2) {
            prop_assert!(pair[0].t <= pair[1].t);
        }
    }

    #[test]
    fn previous_triplet_matches_linear_scan(ops in prop::collection::vec(op_strategy(), 0..60)) {
        let mem = build(&ops);
        for actor in mem.actors() {
            let expected = mem.triplet_log().iter().rev().find(|t| t.actor == actor.id);
            prop_assert_eq!(mem.previous_triplet(actor.id), expected);
        }
    }

    #[test]
    fn persistence_is_lossless(ops in prop::collection::vec(op_strategy(), 0..60)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.carma-mem");
        let mem = build(&ops);
        mem.persist(&path).unwrap();
        prop_assert_eq!(MemoryStore::load(&path).unwrap(), mem);
    }
}
