use std::sync::Arc;

use confetty_core::fixtures::load_fixture;
use confetty_core::service::{
    build_gateway, run_scenario, standard_authorities, Gateway, GatewayClient, LocalTransport, ReadOutcome,
    ScenarioOptions, StackConfig,
};

fn stack(dir: &tempfile::TempDir) -> Arc<Gateway> {
    let mut cfg = StackConfig::new(dir.path().join("cas"));
    cfg.rng_seed = Some(7);
    build_gateway(cfg, Arc::new(standard_authorities(b"scenario-test").unwrap())).unwrap()
}

/// Tokens on flows leading into `element`; markings are keyed `from->to`.
fn tokens_into(marking: &std::collections::BTreeMap<String, u32>, element: &str) -> u32 {
    let suffix = format!("->{element}");
    marking.iter().filter(|(k, _)| k.ends_with(&suffix)).map(|(_, n)| n).sum()
}

fn plaintext(outcome: Option<&ReadOutcome>) -> &serde_json::Value {
    match outcome {
        Some(ReadOutcome::Plaintext(v)) => v,
        other => panic!("expected plaintext, got {other:?}"),
    }
}

#[test]
fn happy_path_completes_and_report_readers_match_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let gw = stack(&dir);
    let bundle = load_fixture("xray-happy").unwrap();
    let report = run_scenario(&bundle, &LocalTransport(gw.clone()), &ScenarioOptions::default()).unwrap();

    assert_eq!(report.status, "COMPLETED");
    assert_eq!(tokens_into(&report.end_marking, "xray_completed"), 1);
    assert_eq!(report.steps.len(), 8);

    let expected = &bundle.steps.iter().find(|s| s.task == "perform_xray").unwrap().payload;
    for reader in ["insurance", "patient", "inspector", "clerk"] {
        assert_eq!(plaintext(report.read(reader, "perform_xray")), expected, "{reader}");
    }
    assert_eq!(
        report.read("radiology", "perform_xray"),
        Some(&ReadOutcome::Denied("PolicyNotSatisfied".into()))
    );
    assert_eq!(report.keys["outsider"], Err("NoGrants".to_string()));
    assert_eq!(report.keys["certifier"], Err("NoGrants".to_string()));

    // The inspector holds exactly its custom-role attribute and the
    // confinement attribute.
    let inspector = report.keys["inspector"].as_ref().unwrap();
    assert_eq!(inspector.len(), 2);
    assert!(inspector.iter().any(|a| a == "Ministry@A2#0"), "{inspector:?}");
}

#[test]
fn loop_and_denied_fixtures_reach_their_end_events() {
    let dir = tempfile::tempdir().unwrap();
    let gw = stack(&dir);
    let t = LocalTransport(gw);
    for (i, (name, end)) in [("xray-loop", "xray_completed"), ("xray-denied", "admission_rejected")]
        .into_iter()
        .enumerate()
    {
        let bundle = load_fixture(name).unwrap();
        let opts = ScenarioOptions {
            deploy_nonce: i as u64,
            skip_reads: false,
        };
        let report = run_scenario(&bundle, &t, &opts).unwrap();
        assert_eq!(report.status, "COMPLETED", "{name}");
        assert_eq!(tokens_into(&report.end_marking, end), 1, "{name}");
        assert_eq!(report.steps.len(), bundle.steps.len());
    }
}

#[test]
fn replay_after_scenario_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let gw = stack(&dir);
    let bundle = load_fixture("xray-loop").unwrap();
    run_scenario(&bundle, &LocalTransport(gw.clone()), &ScenarioOptions::default()).unwrap();
    let replay = gw.replay();
    assert!(replay.clean && replay.identical && replay.state_root_matches, "{replay:?}");
    assert_eq!(replay.instances, 1);
    assert!(gw.verify().clean);
}

#[test]
fn wrong_identity_cannot_send_a_task() {
    let dir = tempfile::tempdir().unwrap();
    let gw = stack(&dir);
    let t = LocalTransport(gw);
    let mut bundle = load_fixture("xray-happy").unwrap();
    bundle.steps.truncate(0);
    let report = run_scenario(&bundle, &t, &ScenarioOptions { deploy_nonce: 0, skip_reads: true }).unwrap();
    let radiology = GatewayClient::new(t.clone(), Some(bundle.identity("radiology").clone()));
    let err = radiology
        .transact(&report.instance_id, "request_appointment", serde_json::json!({ "prescriptionId": "x" }))
        .unwrap_err();
    assert_eq!(err.code, "WrongInitiator");
    let view = GatewayClient::anonymous(t).inspect(&report.instance_id).unwrap();
    assert_eq!(view.enabled_ids(), vec!["request_appointment".to_string()]);
    assert!(view.message_log.is_empty());
}

#[test]
fn confidential_payloads_never_reach_ledger_or_plain_store() {
    let dir = tempfile::tempdir().unwrap();
    let ledger_path = dir.path().join("ledger.bin");
    let mut cfg = StackConfig::new(dir.path().join("cas"));
    cfg.ledger_path = Some(ledger_path.clone());
    let gw = build_gateway(cfg, Arc::new(standard_authorities(b"leak").unwrap())).unwrap();
    let bundle = load_fixture("xray-happy").unwrap();
    run_scenario(&bundle, &LocalTransport(gw.clone()), &ScenarioOptions::default()).unwrap();

    let ledger_bytes = std::fs::read(&ledger_path).unwrap();
    let mut store_bytes = Vec::new();
    for entry in walk(&dir.path().join("cas")) {
        store_bytes.extend(std::fs::read(entry).unwrap());
    }
    for marker in &bundle.markers {
        let m = marker.as_bytes();
        assert!(!contains(&ledger_bytes, m), "{marker} in ledger");
        assert!(!contains(&store_bytes, m), "{marker} in store");
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}
