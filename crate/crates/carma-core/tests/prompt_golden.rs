//! Golden-file tests for the serialized prompt: one frozen memory
//! snapshot, four configuration modes, byte-level diff assertions between
//! them. Regenerate with `UPDATE_GOLDEN=1 cargo test -p carma-core`.

use std::fs;
use std::path::PathBuf;

use carma_core::memory::MemoryStore;
use carma_core::model::{ActionTriplet, ActorClass, InstanceId, ReasonerConfig, ReasonerMode};
use carma_core::reasoner::{assemble_prompt, serialize_prompt, PromptBlock, PromptSpec};
use carma_core::trigger::TriggerEvent;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn data(name: &str) -> String {
    // relative path so serialized prompts are machine-independent
    format!("tests/data/{name}.img")
}

/// The frozen snapshot: three objects, a robot hand with one crop, one
/// person with four crops and one previous triplet.
fn snapshot() -> (MemoryStore, InstanceId, Vec<InstanceId>) {
    let mut mem = MemoryStore::new();
    let objects: Vec<InstanceId> = (1..=3)
        .map(|i| {
            mem.register_object(&data(&format!("obj{i}")), [i as f64 * 0.1, 0.0, 1.0], 0.0)
        })
        .collect();
    let person = mem.register_actor(ActorClass::Human, 0.0);
    for i in 1..=4 {
        mem.append_person_crop(person, &data(&format!("crop{i}")), i as f64).unwrap();
    }
    let hand = mem.register_actor(ActorClass::Robot, 0.0);
    mem.append_person_crop(hand, &data("hand"), 1.0).unwrap();
    mem.log_triplet(ActionTriplet {
        actor: person,
        action: "pick_up".into(),
        object: Some(objects[0]),
        on: None,
        robot_interaction: false,
        t: 4.0,
    })
    .unwrap();
    (mem, person, objects)
}

fn prompt_for(mode: ReasonerMode) -> PromptSpec {
    let (mem, person, objects) = snapshot();
    let config = ReasonerConfig { mode, sample_interval: 2.0, include_robot_hand: true };
    let trigger = TriggerEvent {
        actor: person,
        t: 10.0,
        label: mode.includes_action_label().then(|| "pour".to_string()),
    };
    assemble_prompt(&mem, &trigger, &config, &objects).unwrap()
}

fn check_golden(mode: ReasonerMode) -> String {
    let serialized = serialize_prompt(&prompt_for(mode));
    let path = golden_dir().join(format!("{}.txt", mode.as_str()));
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        fs::write(&path, &serialized).unwrap();
    }
    let golden = fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden file {path:?}; run with UPDATE_GOLDEN=1"));
    assert_eq!(serialized, golden, "serialized prompt drifted from golden for {mode:?}");
    serialized
}

#[test]
fn golden_prompts_are_stable() {
    for mode in [
        ReasonerMode::DiscretePrev,
        ReasonerMode::TriggerPrev,
        ReasonerMode::TriggerOnly,
        ReasonerMode::TriggerLabelPrev,
    ] {
        check_golden(mode);
    }
}

#[test]
fn prompt_is_deterministic() {
    let a = serialize_prompt(&prompt_for(ReasonerMode::TriggerPrev));
    let b = serialize_prompt(&prompt_for(ReasonerMode::TriggerPrev));
    assert_eq!(a, b);
}

#[test]
fn prev_modes_differ_by_exactly_one_block() {
    let with_prev = prompt_for(ReasonerMode::TriggerPrev);
    let without = prompt_for(ReasonerMode::TriggerOnly);
    assert_eq!(with_prev.blocks.len(), without.blocks.len() + 1);
    // removing the previous-triplet block makes them block-identical
    let stripped: Vec<&PromptBlock> = with_prev
        .blocks
        .iter()
        .filter(|b| match b {
            PromptBlock::Text { text } => !text.starts_with("The previous action triplet"),
            _ => true,
        })
        .collect();
    let other: Vec<&PromptBlock> = without.blocks.iter().collect();
    assert_eq!(stripped, other);

    // and the serialized forms differ in exactly one line beyond the mode line
    let a = serialize_prompt(&with_prev);
    let b = serialize_prompt(&without);
    let a_lines: Vec<&str> = a.lines().filter(|l| !l.starts_with("mode:")).collect();
    let b_lines: Vec<&str> = b.lines().filter(|l| !l.starts_with("mode:")).collect();
    assert_eq!(a_lines.len(), b_lines.len() + 1);
    let diff: Vec<&&str> = a_lines.iter().filter(|l| !b_lines.contains(*l)).collect();
    assert_eq!(diff.len(), 1);
}

#[test]
fn label_mode_adds_exactly_one_sentence() {
    let labelled = prompt_for(ReasonerMode::TriggerLabelPrev);
    let plain = prompt_for(ReasonerMode::TriggerPrev);
    let task = |p: &PromptSpec| match p.blocks.last().unwrap() {
        PromptBlock::Text { text } => text.clone(),
        _ => panic!("last block must be the task text"),
    };
    let labelled_task = task(&labelled);
    let plain_task = task(&plain);
    assert_eq!(
        labelled_task,
        format!("{plain_task} The action detector suggests the label 'pour'.")
    );
    // everything before the task block is identical
    assert_eq!(
        &labelled.blocks[..labelled.blocks.len() - 1],
        &plain.blocks[..plain.blocks.len() - 1]
    );
}
