use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("scenarios/{name}.json"))
}

fn engine(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_engine")).env("ENGINE_DATA_DIR", data).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_then_replay_and_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let out = engine(tmp.path(), &["run", "--scenario", scenario("suspension").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    assert!(!text.contains("FAIL"));

    let journal = tmp.path().join("suspension/journal.jsonl");
    assert!(tmp.path().join("suspension/ledger.jsonl").exists());
    assert!(tmp.path().join("suspension/report.json").exists());
    let replayed = engine(tmp.path(), &["replay", "--journal", journal.to_str().unwrap()]);
    assert!(replayed.status.success());
    assert!(stdout(&replayed).contains("replay digest matches the journal head"));
    let verified = engine(tmp.path(), &["verify", "--journal", journal.to_str().unwrap()]);
    assert!(verified.status.success());
    assert!(stdout(&verified).starts_with("ok: 79 entries"));
}

#[test]
fn tampered_journal_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    engine(tmp.path(), &["run", "--scenario", scenario("merger").to_str().unwrap()]);
    let journal = tmp.path().join("merger/journal.jsonl");
    let mut bytes = std::fs::read(&journal).unwrap();
    let line5 = bytes.iter().enumerate().filter(|(_, b)| **b == b'\n').nth(3).unwrap().0 + 1;
    let at = line5 + bytes[line5..].iter().position(|b| *b == b'"').unwrap() + 1;
    bytes[at] ^= 0x01;
    let tampered = tmp.path().join("tampered.jsonl");
    std::fs::write(&tampered, &bytes).unwrap();
    for cmd in ["verify", "replay"] {
        let out = engine(tmp.path(), &[cmd, "--journal", tampered.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        assert_eq!(stdout(&out).trim(), "ChainBroken at seq 5", "{cmd}");
    }
}

#[test]
fn exit_codes_reflect_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"name\": \"bad\",\n  \"start\": 12\n}").unwrap();
    let out = engine(tmp.path(), &["run", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let text = std::fs::read_to_string(scenario("indefinite")).unwrap();
    let mut s: serde_json::Value = serde_json::from_str(&text).unwrap();
    s["end"] = "2024-03-25".into();
    s["assertions"] = serde_json::json!([{
        "after": "2024-03-25", "check": "payments",
        "select": {"payee": "B", "origin": "Net", "due_from": "2024-03-06"},
        "status": "Paid"
    }]);
    let failing = tmp.path().join("failing.json");
    std::fs::write(&failing, s.to_string()).unwrap();
    let out = engine(tmp.path(), &["run", "--scenario", failing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));

    let out = engine(tmp.path(), &["run", "--scenario", scenario("merger").to_str().unwrap(), "--fault", "perturbed-rounding"]);
    assert_eq!(out.status.code(), Some(2));
    let out = engine(tmp.path(), &["run", "--scenario", scenario("merger").to_str().unwrap(), "--fault", "gremlins"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replicas_and_faults() {
    let tmp = tempfile::tempdir().unwrap();
    let swap = scenario("rate_disruption");
    let ok = engine(tmp.path(), &["run", "--scenario", swap.to_str().unwrap(), "--replicas", "3"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("3 replica(s)"));
    let bad = engine(
        tmp.path(),
        &["run", "--scenario", swap.to_str().unwrap(), "--replicas", "3", "--fault", "perturbed-rounding", "--json"],
    );
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&bad)).unwrap();
    assert_eq!(report["divergence"]["replicas"], serde_json::json!([0, 2]));
    assert_eq!(report["passed"], false);
}
