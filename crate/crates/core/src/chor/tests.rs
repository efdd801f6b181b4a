use serde_json::json;

use super::*;
use crate::codec::{Decoder, Encoder};

const XRAY: &str = include_str!("../../fixtures/xray.json");

fn xray() -> Choreography {
    parse_choreography(XRAY).expect("fixture parses")
}

fn doc(elements: serde_json::Value, flows: serde_json::Value) -> ChoreographyDocument {
    serde_json::from_value(json!({
        "id": "t",
        "participants": ["A", "B"],
        "elements": elements,
        "flows": flows,
        "messages": [
            { "name": "M", "visibility": "PUBLIC", "fields": [ { "name": "x", "type": "number" } ] },
            { "name": "S", "visibility": "CONFIDENTIAL", "fields": [ { "name": "secret", "type": "number" } ] }
        ]
    }))
    .unwrap()
}

fn task(id: &str) -> serde_json::Value {
    json!({ "id": id, "kind": "ChoreographyTask", "initiator": "A", "recipient": "B", "message": "M" })
}

fn el(id: &str, kind: &str) -> serde_json::Value {
    json!({ "id": id, "kind": kind })
}

fn fl(from: &str, to: &str) -> serde_json::Value {
    json!({ "from": from, "to": to })
}

fn vars(pairs: &[(&str, Value)]) -> Vars {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[test]
fn fixture_has_the_four_participants() {
    let c = xray();
    let mut p: Vec<_> = c.participants().to_vec();
    p.sort();
    assert_eq!(p, ["InsuranceAgency", "Patient", "RadiologyClerk", "RadiologyDepartment"]);
    assert_eq!(c.tasks().count(), 9);
    assert!(c.validate().is_empty());
}

#[test]
fn fixture_role_attributes() {
    let c = xray();
    assert_eq!(c.role_attribute("InsuranceAgency").to_string(), "Insurance@A1");
    assert_eq!(c.role_attribute("Patient").to_string(), "Patient@A1");
}

#[test]
fn two_start_events_fail_parse() {
    let d = doc(
        json!([el("s1", "StartEvent"), el("s2", "StartEvent"), task("t"), el("e", "EndEvent")]),
        json!([fl("s1", "t"), fl("s2", "t"), fl("t", "e")]),
    );
    let text = serde_json::to_string(&d).unwrap();
    match parse_choreography(&text) {
        Err(ChorError::Invalid(issues)) => {
            assert!(issues.iter().any(|i| i.message.contains("StartEvents")), "{issues:?}")
        }
        other => panic!("expected validation failure, got {other:?}"),
    }
}

#[test]
fn condition_on_confidential_field_is_unknown_reference() {
    let mut d = doc(
        json!([
            el("s", "StartEvent"),
            json!({ "id": "c", "kind": "ChoreographyTask", "initiator": "A", "recipient": "B", "message": "S" }),
            el("x", "XorSplit"),
            el("e1", "EndEvent"),
            el("e2", "EndEvent")
        ]),
        json!([
            fl("s", "c"),
            fl("c", "x"),
            { "from": "x", "to": "e1", "condition": "c.secret > 3" },
            { "from": "x", "to": "e2", "default": true }
        ]),
    );
    assert!(matches!(Choreography::from_document(&d), Err(ChorError::UnknownReference(_))));
    d.flows[2].condition = Some("c.nothing > 3".into());
    assert!(matches!(Choreography::from_document(&d), Err(ChorError::UnknownReference(_))));
}

#[test]
fn literal_type_is_checked_against_schema() {
    let d = doc(
        json!([el("s", "StartEvent"), task("t"), el("x", "XorSplit"), el("e1", "EndEvent"), el("e2", "EndEvent")]),
        json!([
            fl("s", "t"),
            fl("t", "x"),
            { "from": "x", "to": "e1", "condition": "t.x = \"high\"" },
            { "from": "x", "to": "e2", "default": true }
        ]),
    );
    assert!(matches!(Choreography::from_document(&d), Err(ChorError::TypeMismatch(_))));
}

#[test]
fn syntax_errors_carry_a_position() {
    let err = parse_choreography("{\n  \"id\": \"x\",\n  \"participants\": [,]\n}").unwrap_err();
    match err {
        ChorError::Syntax { line, column, .. } => {
            assert_eq!(line, 3);
            assert!(column > 1);
        }
        other => panic!("{other:?}"),
    }
    let err = parse_choreography(&XRAY.replace("\"XorJoin\"", "\"OrJoin\"")).unwrap_err();
    assert!(matches!(err, ChorError::Syntax { .. }));
}

#[test]
fn duplicate_and_dangling_ids() {
    let d = doc(json!([el("s", "StartEvent"), el("s", "EndEvent")]), json!([]));
    assert_eq!(Choreography::from_document(&d).unwrap_err(), ChorError::DuplicateId("s".into()));
    let d = doc(json!([el("s", "StartEvent")]), json!([fl("s", "ghost")]));
    assert!(matches!(Choreography::from_document(&d), Err(ChorError::UnknownReference(_))));
    let mut d = doc(json!([el("s", "StartEvent"), task("t")]), json!([]));
    d.elements[1].initiator = Some("Nobody".into());
    assert!(matches!(Choreography::from_document(&d), Err(ChorError::UnknownReference(_))));
}

#[test]
fn unreachable_task_is_one_issue() {
    let d = doc(
        json!([el("s", "StartEvent"), task("t"), task("orphan"), el("e", "EndEvent")]),
        json!([fl("s", "t"), fl("t", "e"), fl("orphan", "e")]),
    );
    let issues = Choreography::from_document(&d).unwrap().validate();
    assert_eq!(issues.len(), 1, "{issues:?}");
    assert_eq!(issues[0].element.as_deref(), Some("orphan"));
}

#[test]
fn xor_split_without_default_is_one_issue() {
    let d = doc(
        json!([el("s", "StartEvent"), task("t"), el("x", "XorSplit"), el("e1", "EndEvent"), el("e2", "EndEvent")]),
        json!([
            fl("s", "t"),
            fl("t", "x"),
            { "from": "x", "to": "e1", "condition": "t.x > 1" },
            { "from": "x", "to": "e2", "condition": "t.x <= 1" }
        ]),
    );
    let issues = Choreography::from_document(&d).unwrap().validate();
    assert_eq!(issues.len(), 1, "{issues:?}");
    assert!(issues[0].message.contains("default"));
}

#[test]
fn loop_without_exclusive_exit_is_flagged() {
    let d = doc(
        json!([el("s", "StartEvent"), el("j", "XorJoin"), task("a"), task("b"), el("e", "EndEvent")]),
        json!([fl("s", "j"), fl("j", "a"), fl("a", "b"), fl("b", "j")]),
    );
    let issues = Choreography::from_document(&d).unwrap().validate();
    assert!(issues.iter().any(|i| i.message.contains("loop")), "{issues:?}");
}

#[test]
fn initiator_must_differ_from_recipient() {
    let mut d = doc(
        json!([el("s", "StartEvent"), task("t"), el("e", "EndEvent")]),
        json!([fl("s", "t"), fl("t", "e")]),
    );
    d.elements[1].recipient = Some("A".into());
    let issues = Choreography::from_document(&d).unwrap().validate();
    assert_eq!(issues.len(), 1);
}

#[test]
fn initial_marking_enables_first_task() {
    let c = xray();
    let m = c.initial_marking();
    assert_eq!(c.enabled(&m), ["request_appointment"]);
    assert_eq!(m.total(), 1);
}

#[test]
fn single_task_model() {
    let d = doc(
        json!([el("s", "StartEvent"), task("only"), el("e", "EndEvent")]),
        json!([fl("s", "only"), fl("only", "e")]),
    );
    let c = Choreography::from_document(&d).unwrap();
    let m = c.initial_marking();
    assert_eq!(c.enabled(&m), ["only"]);
    let done = c.execute(&m, "only", &vars(&[("only.x", Value::Num(1.0))])).unwrap();
    assert!(c.is_completed(&done));
    assert!(c.enabled(&done).is_empty());
}

fn parallel() -> Choreography {
    let d = doc(
        json!([
            el("s", "StartEvent"),
            el("fork", "AndSplit"),
            task("a"),
            task("b"),
            el("join", "AndJoin"),
            el("e", "EndEvent")
        ]),
        json!([fl("s", "fork"), fl("fork", "a"), fl("fork", "b"), fl("a", "join"), fl("b", "join"), fl("join", "e")]),
    );
    let c = Choreography::from_document(&d).unwrap();
    assert!(c.validate().is_empty(), "{:?}", c.validate());
    c
}

#[test]
fn and_split_after_start_puts_tokens_on_all_branches() {
    let c = parallel();
    let m = c.initial_marking();
    assert_eq!(c.enabled(&m), ["a", "b"]);
    assert_eq!(m.total(), 2);
}

#[test]
fn and_join_needs_every_branch() {
    let c = parallel();
    let m = c.initial_marking();
    let v = Vars::new();
    let after_a = c.fire(&m, "a", &v).unwrap();
    assert_eq!(c.enabled(&after_a), ["b"]);
    let after_b = c.fire(&after_a, "b", &v).unwrap();
    assert_eq!(c.enabled(&after_b), ["join"]);
    let joined = c.fire(&after_b, "join", &v).unwrap();
    assert_eq!(joined.total(), 1);
    assert!(c.is_completed(&joined));
}

#[test]
fn empty_marking_enables_nothing() {
    assert!(xray().enabled(&Marking::empty()).is_empty());
}

#[test]
fn availability_split_routes_on_public_variable() {
    let c = xray();
    let m = c.initial_marking();
    let v = vars(&[("request_appointment.prescriptionId", Value::Str("RX-1".into()))]);
    let m = c.execute(&m, "request_appointment", &v).unwrap();
    assert_eq!(c.enabled_tasks(&m), ["check_availability"]);

    let after = c.fire(&m, "check_availability", &v).unwrap();
    assert_eq!(c.enabled(&after), ["availability_split"]);

    let yes = vars(&[("check_availability.available", Value::Bool(true))]);
    let routed = c.fire(&after, "availability_split", &yes).unwrap();
    assert_eq!(c.enabled(&routed), ["confirm_appointment"]);

    let no = vars(&[("check_availability.available", Value::Bool(false))]);
    let routed = c.fire(&after, "availability_split", &no).unwrap();
    assert_eq!(c.enabled(&routed), ["propose_new_date"]);
    let looped = c.execute(&routed, "propose_new_date", &no).unwrap();
    assert_eq!(c.enabled_tasks(&looped), ["check_availability"]);
}

#[test]
fn firing_a_disabled_element_fails() {
    let c = xray();
    let m = c.initial_marking();
    assert_eq!(
        c.fire(&m, "perform_xray", &Vars::new()),
        Err(ChorError::NotEnabled("perform_xray".into()))
    );
    assert_eq!(
        c.fire(&m, "nope", &Vars::new()),
        Err(ChorError::UnknownElement("nope".into()))
    );
}

#[test]
fn unbound_variable_at_split() {
    let c = xray();
    let m = c.initial_marking();
    let m = c.execute(&m, "request_appointment", &Vars::new()).unwrap();
    let m = c.fire(&m, "check_availability", &Vars::new()).unwrap();
    assert_eq!(
        c.fire(&m, "availability_split", &Vars::new()),
        Err(ChorError::UnboundVariable("check_availability.available".into()))
    );
}

#[test]
fn fire_is_pure_and_conserves_tokens() {
    let c = parallel();
    let m = c.initial_marking();
    let snapshot = m.clone();
    let v = Vars::new();
    let a1 = c.fire(&m, "a", &v).unwrap();
    let a2 = c.fire(&m, "a", &v).unwrap();
    assert_eq!(m, snapshot);
    assert_eq!(a1, a2);
    assert_eq!(a1.total(), m.total());

    let start_only = {
        let mut s = Marking::empty();
        s.add(0);
        s
    };
    let forked = c.fire(&start_only, "fork", &v).unwrap();
    assert_eq!(forked.total(), start_only.total() + 1);
    let ready = c.fire(&c.fire(&forked, "a", &v).unwrap(), "b", &v).unwrap();
    let joined = c.fire(&ready, "join", &v).unwrap();
    assert_eq!(joined.total(), ready.total() - 1);
}

#[test]
fn happy_path_reaches_the_end() {
    let c = xray();
    let mut m = c.initial_marking();
    let mut v = Vars::new();
    for (task, var) in [
        ("request_appointment", None),
        ("check_availability", Some(("check_availability.available", Value::Bool(true)))),
        ("confirm_appointment", None),
        ("collect_registration", None),
        ("verify_health_status", None),
        ("evaluate_admission", Some(("evaluate_admission.confirmed", Value::Bool(true)))),
        ("perform_xray", None),
        ("notify_insurance", None),
    ] {
        assert_eq!(c.enabled_tasks(&m), [task]);
        if let Some((k, val)) = var {
            v.insert(k.into(), val);
        }
        m = c.execute(&m, task, &v).unwrap();
    }
    assert!(c.is_completed(&m));
    assert_eq!(c.reached_ends(&m), ["xray_completed"]);
}

#[test]
fn payload_schema_checks() {
    let c = xray();
    let msg = c.task_message("check_availability").unwrap();
    assert!(msg.check_payload(&json!({ "available": true })).is_ok());
    assert!(msg.check_payload(&json!({ "available": "yes" })).is_err());
    assert!(msg.check_payload(&json!({})).is_err());
    assert!(msg.check_payload(&json!({ "available": true, "extra": 1 })).is_err());
    assert!(msg.check_payload(&json!([true])).is_err());
}

#[test]
fn marking_encoding_round_trips() {
    let c = parallel();
    let m = c.initial_marking();
    let mut enc = Encoder::new();
    m.encode(&mut enc);
    let bytes = enc.finish();
    let mut dec = Decoder::new(&bytes);
    assert_eq!(Marking::decode(&mut dec).unwrap(), m);
    assert_eq!(
        m.labelled(&c).keys().cloned().collect::<Vec<_>>(),
        ["fork->a", "fork->b"]
    );
}

#[test]
fn gateway_only_cycle_is_a_livelock() {
    let d = doc(
        json!([el("s", "StartEvent"), el("j", "XorJoin"), el("x", "XorSplit"), task("t"), el("e", "EndEvent")]),
        json!([
            fl("s", "t"),
            fl("t", "j"),
            fl("j", "x"),
            { "from": "x", "to": "j", "condition": "t.x > 0" },
            { "from": "x", "to": "e", "default": true }
        ]),
    );
    let c = Choreography::from_document(&d).unwrap();
    let m = c.initial_marking();
    let err = c.execute(&m, "t", &vars(&[("t.x", Value::Num(1.0))])).unwrap_err();
    assert_eq!(err, ChorError::GatewayLivelock);
    let ok = c.execute(&m, "t", &vars(&[("t.x", Value::Num(0.0))])).unwrap();
    assert!(c.is_completed(&ok));
}
