mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use common::{cli_with, ServeProcess};
use confetty_core::fixtures::{load_fixture, XRAY_SPEC};
use confetty_gateway::exit;

/// Identity files for every fixture member, keyed by name.
fn identity_files(server: &ServeProcess) -> BTreeMap<String, PathBuf> {
    let bundle = load_fixture("xray-happy").unwrap();
    let mut files = BTreeMap::new();
    for m in &bundle.identities {
        let path = server.dir.path().join(format!("{}.id", m.name));
        let out = server
            .cli(&["--json", "keygen", "--out", path.to_str().unwrap(), "--seed", &m.seed])
            .ok();
        assert_eq!(out.json()["account"], m.account.to_string());
        files.insert(m.name.clone(), path);
    }
    files
}

#[test]
fn scripted_scenario_through_the_command_line() {
    let server = ServeProcess::start(&[]);
    let bundle = load_fixture("xray-happy").unwrap();
    let ids = identity_files(&server);
    let id = |name: &str| ids[name].as_path();

    let spec = server.dir.path().join("xray.json");
    std::fs::write(&spec, XRAY_SPEC).unwrap();
    let certifier = bundle.certifier_identity().account().to_string();
    let configured = server
        .cli_as(
            id("radiology"),
            &[
                "--json",
                "configure",
                "--spec",
                spec.to_str().unwrap(),
                "--custom-role",
                "MinistryOfHealth=Ministry@A2",
                "--certifier",
                &certifier,
            ],
        )
        .ok()
        .json();
    let pid = configured["process_id"].as_str().unwrap().to_owned();
    assert_eq!(configured["drafts"].as_array().unwrap().len(), 4);

    server.cli_as(id("radiology"), &["policies", "confirm", "--process", &pid]).ok();
    // Confirming again reports the duplicate and fails.
    let again = server.cli_as(id("radiology"), &["policies", "confirm", "--process", &pid]);
    assert_eq!(again.code, exit::for_code("AlreadyRegistered"));

    for m in bundle.identities.iter().filter(|m| m.role.is_some()) {
        let role = m.role.as_deref().unwrap();
        let att = server.dir.path().join(format!("{}.att", m.name));
        let mut args = vec![
            "attest",
            "--process",
            &pid,
            "--role",
            role,
            "--out",
            att.to_str().unwrap(),
        ];
        let account = m.account.to_string();
        args.extend(["--account", &account]);
        if role == "MinistryOfHealth" {
            args.push("--grant-only");
        }
        server.cli_as(id("certifier"), &args).ok();
        server
            .cli_as(id(&m.name), &["register", "--attestation", att.to_str().unwrap()])
            .ok();
    }

    let inst = server.cli_as(id("radiology"), &["--json", "instantiate", "--process", &pid]).ok().json();
    let iid = inst["instance_id"].as_str().unwrap().to_owned();
    // Read-your-writes: the instance is visible right away.
    let view = server.cli(&["--json", "inspect", "--instance", &iid]).ok().json();
    assert_eq!(view["enabled"][0]["task_id"], "request_appointment");

    // The wrong participant is refused with its own exit status.
    let wrong = server.cli_as(
        id("clerk"),
        &["task", "send", "--instance", &iid, "--task", "request_appointment", "--payload", "{\"prescriptionId\":\"x\"}"],
    );
    assert_eq!(wrong.code, exit::for_code("WrongInitiator"));
    assert_eq!(wrong.error()["code"], "WrongInitiator");

    let mut report_mid = String::new();
    for step in &bundle.steps {
        let sender = bundle.holder_of(&step.initiator).unwrap();
        let payload = step.payload.to_string();
        let sent = server
            .cli_as(
                id(&sender.name),
                &["--json", "task", "send", "--instance", &iid, "--task", &step.task, "--payload", &payload],
            )
            .ok()
            .json();
        if step.task == "perform_xray" {
            report_mid = sent["message_id"].as_str().unwrap().to_owned();
        }
    }
    let view = server.cli(&["--json", "inspect", "--instance", &iid]).ok().json();
    assert_eq!(view["status"], "COMPLETED");

    let key_file = server.dir.path().join("insurance.abkey");
    server
        .cli_as(id("insurance"), &["key", "request", "--out", key_file.to_str().unwrap()])
        .ok();
    let expected = &bundle.steps.iter().find(|s| s.task == "perform_xray").unwrap().payload;
    let read = server
        .cli_as(
            id("insurance"),
            &["--json", "read", "--message", &report_mid, "--key", key_file.to_str().unwrap()],
        )
        .ok();
    assert_eq!(&read.json(), expected);
    let inspector = server.cli_as(id("inspector"), &["--json", "read", "--message", &report_mid]).ok();
    assert_eq!(&inspector.json(), expected);

    let denied = server.cli_as(id("radiology"), &["read", "--message", &report_mid]);
    assert_eq!(denied.code, exit::for_code("PolicyNotSatisfied"));
    assert!(denied.error()["details"]["policy"].as_str().unwrap().contains("Insurance@A1"));

    let outsider = server.cli_as(id("outsider"), &["key", "request", "--out", "/dev/null"]);
    assert_eq!(outsider.code, exit::for_code("NoGrants"));

    let verify = server.cli(&["ledger", "verify"]).ok();
    assert_eq!(verify.stdout.trim(), "CLEAN");
    server.cli(&["replay"]).ok();
    let events = server.cli(&["--json", "ledger", "events", "--topic", "RoleBound"]).ok().json();
    assert_eq!(events.as_array().unwrap().len(), 4);
}

#[test]
fn demo_prints_the_instance_and_leaves_it_inspectable() {
    let server = ServeProcess::start(&[]);
    let run = server.cli(&["demo", "xray"]).ok();
    let last = run.stdout.lines().last().unwrap();
    let mut parts = last.split_whitespace();
    assert_eq!(parts.next(), Some("instance"));
    let iid = parts.next().unwrap().to_owned();
    assert_eq!(parts.next(), Some("COMPLETED"));
    let view = server.cli(&["--json", "inspect", "--instance", &iid]).ok().json();
    assert_eq!(view["status"], "COMPLETED");

    let looped = server.cli(&["--json", "demo", "xray", "--fixture", "xray-loop"]).ok().json();
    let loops = looped["steps"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["task"] == "propose_new_date")
        .count();
    assert!(loops >= 2);
}

#[test]
fn ledger_verify_on_a_fresh_gateway_is_clean() {
    let server = ServeProcess::start(&[]);
    let out = server.cli(&["ledger", "verify"]).ok();
    assert_eq!(out.stdout.trim(), "CLEAN");
}

#[test]
fn unreachable_gateway_is_a_transport_error() {
    let out = cli_with("http://127.0.0.1:9", None, &["ledger", "verify"]);
    assert_eq!(out.code, exit::TRANSPORT);
    assert_eq!(out.error()["code"], "TransportError");
}

#[test]
fn missing_identity_is_a_local_error() {
    let out = cli_with("http://127.0.0.1:9", None, &["instantiate", "--process", &"ab".repeat(32)]);
    assert_eq!(out.code, exit::LOCAL);
}

#[test]
fn isolated_authorities_serve_the_same_scenario() {
    let server = ServeProcess::start(&["--authority-isolated"]);
    let report = server.cli(&["--json", "demo", "xray"]).ok().json();
    assert_eq!(report["status"], "COMPLETED");
    assert_eq!(report["keys"]["inspector"]["Ok"].as_array().unwrap().len(), 2);
    let reads = report["reads"].as_array().unwrap();
    let insurance_report = reads
        .iter()
        .find(|r| r["reader"] == "insurance" && r["task"] == "perform_xray")
        .unwrap();
    assert_eq!(insurance_report["outcome"]["outcome"], "plaintext");
    let list = server.cli(&["--json", "authority", "list"]).ok().json();
    assert_eq!(list.as_array().unwrap().len(), 2);
}
