//! Generated small models checked against the token-game oracle.

use std::collections::BTreeSet;

use proptest::prelude::*;
use serde_json::{json, Value as Json};

use confetty_core::chor::{parse_choreography, Choreography, ElementKind, Marking, Value, Vars};
use confetty_core::fixtures::XRAY_SPEC;
use confetty_core::oracles::token_game::TokenGame;

const ROLES: [&str; 3] = ["A", "B", "C"];

#[derive(Debug, Clone)]
struct Shape {
    template: u8,
    len: usize,
    roles: Vec<(usize, usize)>,
    loop_on: bool,
}

fn shape() -> impl Strategy<Value = Shape> {
    (0u8..6, 1usize..=4, proptest::collection::vec((0usize..3, 1usize..3), 4), any::<bool>()).prop_map(
        |(template, len, roles, loop_on)| Shape {
            template,
            len,
            roles: roles.into_iter().map(|(i, d)| (i, (i + d) % 3)).collect(),
            loop_on,
        },
    )
}

/// Builds a document with at most six elements, start and end included.
fn build(s: &Shape) -> Json {
    let mut elements = vec![json!({ "id": "start", "kind": "StartEvent" })];
    let mut flows = Vec::new();
    let mut tasks = Vec::new();
    let mut task = |id: &str, elements: &mut Vec<Json>| {
        let (i, r) = s.roles[tasks.len() % s.roles.len()];
        tasks.push(id.to_owned());
        elements.push(json!({
            "id": id, "kind": "ChoreographyTask",
            "initiator": ROLES[i], "recipient": ROLES[r], "message": format!("M_{id}")
        }));
    };
    let flow = |from: &str, to: &str| json!({ "from": from, "to": to });
    let cond = if s.loop_on { "true" } else { "false" };
    match s.template {
        0 => {
            let mut prev = "start".to_owned();
            for k in 0..s.len {
                let id = format!("t{k}");
                task(&id, &mut elements);
                flows.push(flow(&prev, &id));
                prev = id;
            }
            elements.push(json!({ "id": "end", "kind": "EndEvent" }));
            flows.push(flow(&prev, "end"));
        }
        1 => {
            task("t0", &mut elements);
            elements.push(json!({ "id": "xs", "kind": "XorSplit" }));
            task("a", &mut elements);
            task("b", &mut elements);
            elements.push(json!({ "id": "end", "kind": "EndEvent" }));
            flows.extend([
                flow("start", "t0"),
                flow("t0", "xs"),
                json!({ "from": "xs", "to": "a", "condition": format!("t0.flag = {cond}") }),
                json!({ "from": "xs", "to": "b", "default": true }),
                flow("a", "end"),
                flow("b", "end"),
            ]);
        }
        2 => {
            elements.push(json!({ "id": "as", "kind": "AndSplit" }));
            task("a", &mut elements);
            task("b", &mut elements);
            elements.push(json!({ "id": "aj", "kind": "AndJoin" }));
            elements.push(json!({ "id": "end", "kind": "EndEvent" }));
            flows.extend([
                flow("start", "as"),
                flow("as", "a"),
                flow("as", "b"),
                flow("a", "aj"),
                flow("b", "aj"),
                flow("aj", "end"),
            ]);
        }
        3 => {
            elements.push(json!({ "id": "xj", "kind": "XorJoin" }));
            task("t0", &mut elements);
            elements.push(json!({ "id": "xs", "kind": "XorSplit" }));
            elements.push(json!({ "id": "end", "kind": "EndEvent" }));
            flows.extend([
                flow("start", "xj"),
                flow("xj", "t0"),
                flow("t0", "xs"),
                json!({ "from": "xs", "to": "xj", "condition": format!("t0.flag = {cond}") }),
                json!({ "from": "xs", "to": "end", "default": true }),
            ]);
        }
        4 => {
            elements.push(json!({ "id": "xj", "kind": "XorJoin" }));
            task("t0", &mut elements);
            elements.push(json!({ "id": "xs", "kind": "XorSplit" }));
            task("t1", &mut elements);
            elements.push(json!({ "id": "end", "kind": "EndEvent" }));
            flows.extend([
                flow("start", "xj"),
                flow("xj", "t0"),
                flow("t0", "xs"),
                json!({ "from": "xs", "to": "xj", "condition": format!("t0.flag = {cond}") }),
                json!({ "from": "xs", "to": "t1", "default": true }),
                flow("t1", "end"),
            ]);
        }
        _ => {
            elements.push(json!({ "id": "as", "kind": "AndSplit" }));
            task("a", &mut elements);
            task("b", &mut elements);
            elements.push(json!({ "id": "end", "kind": "EndEvent" }));
            flows.extend([flow("start", "as"), flow("as", "a"), flow("as", "b"), flow("a", "end"), flow("b", "end")]);
        }
    }
    let messages: Vec<Json> = tasks
        .iter()
        .map(|t| json!({ "name": format!("M_{t}"), "visibility": "PUBLIC", "fields": [{ "name": "flag", "type": "boolean" }] }))
        .collect();
    assert!(elements.len() <= 6);
    json!({ "id": "generated", "participants": ROLES, "elements": elements, "flows": flows, "messages": messages })
}

fn task_ids(model: &Choreography) -> Vec<String> {
    model.tasks().map(|(e, _)| e.id.clone()).collect()
}

/// Replays through enabled/execute. `None` when a message is refused.
fn run_model(model: &Choreography, trace: &[(String, bool)]) -> Option<(BTreeSet<String>, bool)> {
    let mut m = model.initial_marking();
    let mut vars = Vars::new();
    for (t, flag) in trace {
        if !model.enabled_tasks(&m).contains(t) {
            return None;
        }
        vars.insert(format!("{t}.flag"), Value::Bool(*flag));
        m = model.execute(&m, t, &vars).ok()?;
    }
    Some((model.enabled_tasks(&m).into_iter().collect(), model.is_completed(&m)))
}

fn run_oracle(game: &TokenGame, trace: &[(String, bool)]) -> Option<(BTreeSet<String>, bool)> {
    let payloads: Vec<Json> = trace.iter().map(|(_, f)| json!({ "flag": f })).collect();
    game.replay(trace.iter().zip(&payloads).map(|((t, _), p)| (t.as_str(), Some(p))))
        .ok()
        .map(|s| (s.enabled, s.completed))
}

fn all_traces(tasks: &[String], depth: usize) -> Vec<Vec<(String, bool)>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for prefix in &frontier {
            for t in tasks {
                for flag in [false, true] {
                    let mut p: Vec<(String, bool)> = prefix.clone();
                    p.push((t.clone(), flag));
                    next.push(p);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn tokens(m: &Marking) -> i64 {
    m.total() as i64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn generated_models_accept_the_same_traces_as_the_oracle(s in shape()) {
        let doc = build(&s).to_string();
        let model = parse_choreography(&doc);
        prop_assume!(model.is_ok());
        let model = model.unwrap();
        let game = TokenGame::from_json(&doc).unwrap();
        let tasks = task_ids(&model);
        let depth = if tasks.len() > 2 { 3 } else { 4 };
        for trace in all_traces(&tasks, depth) {
            prop_assert_eq!(run_model(&model, &trace), run_oracle(&game, &trace), "trace {:?} in {}", trace, doc);
        }
    }

    #[test]
    fn firing_is_pure_and_conserves_tokens_per_element(s in shape(), steps in proptest::collection::vec((any::<prop::sample::Index>(), any::<bool>()), 1..12)) {
        let doc = build(&s).to_string();
        let model = parse_choreography(&doc);
        prop_assume!(model.is_ok());
        let model = model.unwrap();
        let mut m = model.initial_marking();
        let mut vars = Vars::new();
        for (pick, flag) in steps {
            let enabled = model.enabled(&m);
            if enabled.is_empty() {
                break;
            }
            let id = &enabled[pick.index(enabled.len())];
            for t in task_ids(&model) {
                vars.insert(format!("{t}.flag"), Value::Bool(flag));
            }
            let snapshot = m.clone();
            let Ok(next) = model.fire(&m, id, &vars) else { continue };
            prop_assert_eq!(&m, &snapshot);
            prop_assert_eq!(&model.fire(&m, id, &vars).unwrap(), &next);
            let outs = model.flows().iter().filter(|f| &f.from == id).count() as i64;
            let ins = model.flows().iter().filter(|f| &f.to == id).count() as i64;
            let delta = tokens(&next) - tokens(&m);
            let expected = match model.element(id).unwrap().kind {
                ElementKind::AndSplit => outs - 1,
                ElementKind::AndJoin => -(ins - 1),
                _ => 0,
            };
            prop_assert_eq!(delta, expected, "firing {}", id);
            m = next;
        }
    }
}

#[test]
fn most_generated_shapes_are_valid_models() {
    let mut valid = 0;
    for template in 0..6 {
        let s = Shape {
            template,
            len: 3,
            roles: vec![(0, 1), (1, 2), (2, 0), (0, 2)],
            loop_on: true,
        };
        if parse_choreography(&build(&s).to_string()).is_ok() {
            valid += 1;
        }
    }
    assert!(valid >= 5, "only {valid} of 6 templates validate");
}

#[test]
fn xray_traces_agree_with_the_oracle_on_every_fixture() {
    let model = parse_choreography(XRAY_SPEC).unwrap();
    let game = TokenGame::from_json(XRAY_SPEC).unwrap();
    for name in confetty_core::fixtures::fixture_names() {
        let bundle = confetty_core::fixtures::load_fixture(name).unwrap();
        let mut m = model.initial_marking();
        let mut vars = Vars::new();
        for (i, step) in bundle.steps.iter().enumerate() {
            if let Json::Object(fields) = &step.payload {
                if step.visibility == confetty_core::chor::Visibility::Public {
                    for (k, v) in fields {
                        vars.insert(format!("{}.{k}", step.task), Value::from_json(v).unwrap());
                    }
                }
            }
            m = model.execute(&m, &step.task, &vars).unwrap();
            let log: Vec<(&str, Option<&Json>)> = bundle.steps[..=i]
                .iter()
                .map(|s| (s.task.as_str(), (s.visibility == confetty_core::chor::Visibility::Public).then_some(&s.payload)))
                .collect();
            let st = game.replay(log).unwrap();
            let enabled: BTreeSet<String> = model.enabled_tasks(&m).into_iter().collect();
            assert_eq!(enabled, st.enabled, "{name} step {i}");
            assert_eq!(model.is_completed(&m), st.completed, "{name} step {i}");
        }
        assert!(model.is_completed(&m), "{name}");
    }
}

#[test]
fn happy_fixture_length_matches_the_shortest_loop_free_path() {
    let game = TokenGame::from_json(XRAY_SPEC).unwrap();
    let bundle = confetty_core::fixtures::load_fixture("xray-happy").unwrap();
    assert_eq!(Some(bundle.steps.len()), game.shortest_task_path("xray_completed", &["propose_new_date"]));
}
