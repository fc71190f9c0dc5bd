//! Regenerates the bundled scenario fixtures and their ground-truth
//! sequences. Run from the workspace root:
//!
//! ```text
//! cargo run -p carma-cli --bin carma-genfix [out_dir]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use carma_core::eval::{Scenario, Setting, TripletSequence};
use carma_core::model::{ActionTriplet, InstanceId, InstanceKind};
use carma_core::reasoner::ReasonerOutput;
use carma_core::replay::{
    write_sequence, EventPayload, PoseClass, ScenarioEvent, ScenarioHeader,
    SCENARIO_FORMAT_HEADER,
};

struct Step {
    label: &'static str,
    object: Option<u32>,
    on: Option<u32>,
    robot_interaction: bool,
}

fn step(label: &'static str, object: u32) -> Step {
    Step { label, object: Some(object), on: None, robot_interaction: false }
}

fn step_on(label: &'static str, object: u32, on: u32) -> Step {
    Step { label, object: Some(object), on: Some(on), robot_interaction: false }
}

fn step_ri(label: &'static str, object: u32) -> Step {
    Step { label, object: Some(object), on: None, robot_interaction: true }
}

struct Fixture {
    name: &'static str,
    scenario: Scenario,
    setting: Setting,
    object_count: usize,
    with_robot: bool,
    scripts: Vec<(&'static str, Vec<Step>)>,
}

fn fixtures() -> Vec<Fixture> {
    vec![
        Fixture {
            name: "sorting_fruits",
            scenario: Scenario::SortingFruits,
            setting: Setting::TwoPersons,
            object_count: 6,
            with_robot: false,
            scripts: vec![
                (
                    "@a",
                    vec![
                        step("pick_up", 1),
                        step_on("place_down", 1, 5),
                        step("pick_up", 2),
                        step_on("place_down", 2, 5),
                    ],
                ),
                (
                    "@b",
                    vec![
                        step("pick_up", 3),
                        step_on("place_down", 3, 6),
                        step("pick_up", 4),
                        step_on("place_down", 4, 6),
                    ],
                ),
            ],
        },
        Fixture {
            name: "pouring",
            scenario: Scenario::Pouring,
            setting: Setting::TwoPersons,
            object_count: 3,
            with_robot: false,
            scripts: vec![
                (
                    "@a",
                    vec![
                        step("pick_up", 1),
                        step_on("pour", 1, 2),
                        step("place_down", 1),
                        step_on("pour", 1, 3),
                    ],
                ),
                (
                    "@b",
                    vec![
                        step("pick_up", 2),
                        step("place_down", 2),
                        step("pick_up", 3),
                        step("place_down", 3),
                    ],
                ),
            ],
        },
        Fixture {
            name: "handover",
            scenario: Scenario::Handover,
            setting: Setting::TwoPersonsRobot,
            object_count: 4,
            with_robot: true,
            scripts: vec![
                (
                    "@a",
                    vec![
                        step("pick_up", 1),
                        step_ri("hand_over", 1),
                        step("pick_up", 2),
                        step_ri("hand_over", 2),
                    ],
                ),
                (
                    "@b",
                    vec![
                        step("receive", 1),
                        step("place_down", 1),
                        step_ri("receive", 2),
                        step("place_down", 2),
                    ],
                ),
            ],
        },
    ]
}

/// Table plane plus one blob per object, left to right; segmentation
/// assigns object_1..K in ascending x order.
fn tabletop_cloud(object_count: usize) -> Vec<[f64; 3]> {
    let mut points = Vec::new();
    for i in 0..41 {
        for j in 0..41 {
            points.push([i as f64 * 0.01 - 0.2, j as f64 * 0.01 - 0.2, 1.0]);
        }
    }
    for k in 0..object_count {
        let cx = -0.2 + k as f64 * 0.08;
        for i in 0..40 {
            let a = i as f64 * 0.37;
            points.push([cx + 0.008 * a.cos(), 0.008 * a.sin(), 0.93]);
        }
    }
    points
}

fn person_joints(x: f64) -> Vec<[f64; 3]> {
    vec![[x, -0.1, 1.2], [x, 0.1, 1.2], [x - 0.05, 0.0, 1.25]]
}

fn build_events(fixture: &Fixture) -> (Vec<ScenarioEvent>, Vec<ActionTriplet>) {
    let mut events = vec![
        ScenarioEvent { t: 0.0, payload: EventPayload::Frame { path: "frame.png".into() } },
        ScenarioEvent {
            t: 0.0,
            payload: EventPayload::PointCloud {
                points: Some(tabletop_cloud(fixture.object_count)),
                path: None,
            },
        },
    ];
    let actor_positions = [-0.35, 0.35];
    for (i, (hint, _)) in fixture.scripts.iter().enumerate() {
        events.push(ScenarioEvent {
            t: 0.1 + i as f64 * 0.05,
            payload: EventPayload::PoseSample {
                actor: (*hint).into(),
                joints: person_joints(actor_positions[i]),
                class: PoseClass::Human,
            },
        });
    }
    if fixture.with_robot {
        events.push(ScenarioEvent {
            t: 0.25,
            payload: EventPayload::PoseSample {
                actor: "@robot".into(),
                joints: vec![[0.0, -0.35, 1.1], [0.02, -0.35, 1.1]],
                class: PoseClass::Robot,
            },
        });
    }
    for (hint, steps) in &fixture.scripts {
        for s in steps {
            events.push(ScenarioEvent {
                t: 0.3,
                payload: EventPayload::OracleOutcome {
                    actor: (*hint).into(),
                    output: ReasonerOutput {
                        object: s.object.map(|o| format!("object_{o}")),
                        action: s.label.into(),
                        on: s.on.map(|o| format!("object_{o}")),
                        robot_interaction: s.robot_interaction,
                    },
                },
            });
        }
    }

    // label slots: two idle samples to set the debounce baseline, then two
    // samples per step; the trigger fires on the second one
    let steps_per_actor = fixture.scripts[0].1.len();
    let mut gt = Vec::new();
    for slot in 0..(2 + 2 * steps_per_actor) {
        let t = 1.0 + slot as f64 * 0.5;
        for (actor_idx, (hint, steps)) in fixture.scripts.iter().enumerate() {
            let label = if slot < 2 { "idle" } else { steps[(slot - 2) / 2].label };
            events.push(ScenarioEvent {
                t,
                payload: EventPayload::ActionLabel { actor: (*hint).into(), label: label.into() },
            });
            if slot >= 2 && slot % 2 == 1 {
                let s = &steps[(slot - 2) / 2];
                gt.push(ActionTriplet {
                    actor: InstanceId::new(InstanceKind::Person, actor_idx as u32 + 1),
                    action: s.label.into(),
                    object: s.object.map(|o| InstanceId::new(InstanceKind::Object, o)),
                    on: s.on.map(|o| InstanceId::new(InstanceKind::Object, o)),
                    robot_interaction: s.robot_interaction,
                    t,
                });
            }
        }
    }
    (events, gt)
}

fn write_frame(path: &Path) {
    let img = image::RgbImage::from_fn(640, 480, |x, y| {
        image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8])
    });
    img.save(path).expect("write frame");
}

fn main() {
    let out_root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("crates/carma-cli/fixtures"));
    for fixture in fixtures() {
        let dir = out_root.join(fixture.name);
        fs::create_dir_all(&dir).expect("create fixture dir");
        write_frame(&dir.join("frame.png"));

        let (events, gt) = build_events(&fixture);
        let header = ScenarioHeader {
            recording: format!("{}_r1", fixture.name),
            scenario: fixture.scenario,
            setting: fixture.setting,
        };
        let mut scn = String::new();
        scn.push_str(SCENARIO_FORMAT_HEADER);
        scn.push('\n');
        scn.push_str(&serde_json::to_string(&header).unwrap());
        scn.push('\n');
        for e in &events {
            scn.push_str(&serde_json::to_string(e).unwrap());
            scn.push('\n');
        }
        fs::write(dir.join(format!("{}.scn", fixture.name)), scn).expect("write scn");

        let seq = TripletSequence {
            recording: header.recording.clone(),
            scenario: fixture.scenario,
            setting: fixture.setting,
            triplets: gt,
        };
        write_sequence(&dir.join(format!("{}.gt", fixture.name)), &seq).expect("write gt");
        println!("wrote {}", dir.display());
    }
}
