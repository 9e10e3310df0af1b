use std::path::{Path, PathBuf};

use sdc_core::engine::replay;
use sdc_core::product::ProductRegistry;
use sdc_core::replica::FaultProfile;
use sdc_engine::io;
use sdc_engine::scenario::{self, Check, RunOptions, Scenario, ScenarioError};

fn dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn golden() -> Vec<(String, Scenario)> {
    let mut out: Vec<_> = std::fs::read_dir(dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), Scenario::load(&p).unwrap()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn load(name: &str) -> Scenario {
    Scenario::load(&dir().join(format!("{name}.json"))).unwrap()
}

#[test]
fn every_golden_scenario_passes() {
    let all = golden();
    assert!(all.len() >= 12);
    for (name, s) in all {
        let r = scenario::run(&s, &RunOptions::default()).unwrap().report;
        let failed: Vec<_> = r.results.iter().filter(|a| !a.passed).collect();
        assert!(r.passed, "{name}: {failed:?} {:?}", r.script_errors);
        assert!(!r.results.is_empty(), "{name} asserts nothing");
    }
}

#[test]
fn runs_are_deterministic_and_replayable() {
    for (name, s) in golden() {
        let a = scenario::run(&s, &RunOptions::default()).unwrap();
        let b = scenario::run(&s, &RunOptions { replicas: 3, faults: vec![] }).unwrap();
        assert_eq!(a.report.digest, b.report.digest, "{name}");
        let back = replay(a.harness.primary().journal().entries(), &ProductRegistry::standard()).unwrap();
        assert_eq!(back.journal().head_hex(), a.report.digest, "{name}");
    }
}

#[test]
fn a_reduced_suspended_amount_fails_the_assertion() {
    let mut s = load("suspension");
    let a = s
        .assertions
        .iter_mut()
        .find(|a| matches!(a.check, Check::Payments { status: Some(_), unchanged: Some(true), .. }))
        .unwrap();
    let Check::Payments { amount, select, .. } = &mut a.check else { unreachable!() };
    // the first suspended payment, claimed at a smaller quantum
    select.due_to = select.due_from;
    *amount = Some(sdc_core::money::Money::new(sdc_core::money::Currency::USD, 1_000_000_02 - 1));
    let r = scenario::run(&s, &RunOptions::default()).unwrap().report;
    assert!(!r.passed);
    let failed: Vec<_> = r.results.iter().filter(|a| !a.passed).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].detail.contains("amount"), "{}", failed[0].detail);
}

#[test]
fn malformed_files_report_line_and_column() {
    let text = "{\n  \"name\": \"x\",\n  \"agreement_id\": 7\n}";
    match Scenario::parse(text) {
        Err(ScenarioError::Parse { line, column, .. }) => {
            assert_eq!(line, 3);
            assert!(column > 0);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(Scenario::parse("{\"name\": "), Err(ScenarioError::Parse { line: 1, .. })));
    let mut s = load("merger");
    s.script[0].date = s.end.succ();
    assert!(matches!(scenario::run(&s, &RunOptions::default()), Err(ScenarioError::Invalid(_))));
}

#[test]
fn unresolvable_selectors_are_script_errors() {
    let mut s = load("merger");
    // answer the merger question before it has been asked
    let answer = s.script.iter_mut().find(|i| matches!(i.action, scenario::ScriptAction::Answer(_))).unwrap();
    answer.date = s.start;
    let r = scenario::run(&s, &RunOptions::default()).unwrap().report;
    assert!(!r.passed);
    assert_eq!(r.script_errors.len(), 1, "{:?}", r.script_errors);
}

#[test]
fn calendar_files_are_loaded_relative_to_the_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = load("suspension");
    s.calendars.clear();
    s.calendar_files = vec!["cal/weekends.json".into()];
    std::fs::create_dir(tmp.path().join("cal")).unwrap();
    std::fs::write(
        tmp.path().join("cal/weekends.json"),
        r#"{"calendar_id": "WEEKENDS", "weekend": ["sat", "sun"], "holidays": []}"#,
    )
    .unwrap();
    let path = tmp.path().join("s.json");
    std::fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
    let loaded = Scenario::load(&path).unwrap();
    assert!(loaded.calendar_files.is_empty());
    let a = scenario::run(&loaded, &RunOptions::default()).unwrap().report;
    let b = scenario::run(&load("suspension"), &RunOptions::default()).unwrap().report;
    assert!(a.passed);
    assert_eq!(a.digest, b.digest);
}

#[test]
fn perturbed_rounding_halts_a_swap_scenario() {
    let s = load("rate_disruption");
    let r = scenario::run(&s, &RunOptions { replicas: 3, faults: vec![(2, FaultProfile::PerturbedRounding)] })
        .unwrap()
        .report;
    let d = r.divergence.expect("diverged");
    assert_eq!(d.replicas, vec![0, 2]);
    // the first swap period is the first rounded amount
    let entry = d.reference.unwrap();
    assert!(matches!(entry.payload, sdc_core::engine::Payload::ObligationsGenerated { .. }));
    assert!(!r.passed);
}

#[test]
fn journal_and_ledger_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let run = scenario::run(&load("deferred_apply"), &RunOptions::default()).unwrap();
    let jp = tmp.path().join("journal.jsonl");
    let lp = tmp.path().join("ledger.jsonl");
    io::write_journal(&jp, run.harness.primary().journal().entries()).unwrap();
    io::write_ledger(&lp, run.harness.ledger()).unwrap();
    assert_eq!(io::read_journal(&jp).unwrap(), run.harness.primary().journal().entries());
    let ledger = io::read_ledger(&lp).unwrap();
    assert_eq!(&ledger, run.harness.ledger());
    let genesis = load("deferred_apply").genesis().unwrap();
    let back = sdc_core::replica::replay_ledger(&genesis, &ledger, &ProductRegistry::standard()).unwrap();
    assert_eq!(back.journal().head_hex(), run.report.digest);
}
