mod common;

use common::feed;
use common::*;
use sdc_core::cashflow::Rounding;
use sdc_core::engine::{Command, Engine, EngineMode};
use sdc_core::product::ProductRegistry;
use sdc_core::replica::{replay_ledger, Datum, FaultProfile, Harness, HarnessError, OracleLedger};

#[test]
fn spawn_rules() {
    let g = genesis(daily_forwards());
    assert!(matches!(Harness::spawn(0, &g, &[]), Err(HarnessError::NoReplicas)));
    let h = Harness::spawn(3, &g, &[]).unwrap();
    let states = h.states();
    assert!(states.iter().all(|s| s.digest == states[0].digest && s.cursor == 0));
    // a single copy is the bare engine
    let mut one = Harness::spawn(1, &g, &[]).unwrap();
    let mut bare = Engine::new(g).unwrap();
    one.feed(Datum::StepDay { date: day(1) }).unwrap();
    bare.step_day(day(1)).unwrap();
    assert_eq!(one.primary().head_digest(), bare.head_digest());
}

#[test]
fn publish_is_dense() {
    let mut h = Harness::spawn(2, &genesis(vec![]), &[]).unwrap();
    assert_eq!(h.publish(Datum::StepDay { date: day(1) }).unwrap(), 1);
    assert_eq!(h.publish(Datum::StepDay { date: day(2) }).unwrap(), 2);
    assert!(matches!(h.publish(Datum::StepDay { date: day(2) }), Err(HarnessError::OutOfOrderDate { .. })));
    let before = h.step_all(0).unwrap();
    assert_eq!(before.cursor, 0);
    assert_eq!(h.step_all(2).unwrap().cursor, 2);
    assert!(matches!(h.step_all(3), Err(HarnessError::Unpublished(3))));
    assert!(OracleLedger::from_entries(h.ledger().entries().to_vec()).is_ok());
    let mut gap = h.ledger().entries().to_vec();
    gap.remove(0);
    assert!(OracleLedger::from_entries(gap).is_err());
}

#[test]
fn lockstep_over_random_feeds() {
    for seed in 0..15 {
        let mut f = feed::random(seed);
        let mut h = Harness::spawn(3, &f.genesis, &[]).unwrap();
        let g = f.genesis.clone();
        feed::drive(&mut h, &mut f, |h| {
            let s = h.states();
            assert!(s.iter().all(|r| r.digest == s[0].digest && r.cursor == s[0].cursor));
        })
        .unwrap();
        let fresh = replay_ledger(&g, h.ledger(), &ProductRegistry::standard()).unwrap();
        assert_eq!(fresh.head_digest(), h.primary().head_digest(), "seed {seed}");
    }
}

/// First journal seq where two engines fed the same ledger differ.
fn diff_oracle(genesis: &sdc_core::engine::Genesis, ledger: &OracleLedger) -> Option<u64> {
    let mut clean = Engine::new(genesis.clone()).unwrap();
    let mut floor = Engine::new(genesis.clone()).unwrap();
    floor.set_rounding(Rounding::Floor);
    for e in ledger.entries() {
        for eng in [&mut clean, &mut floor] {
            match &e.datum {
                Datum::Command { command } => drop(eng.submit(command.clone())),
                Datum::Control { control, by } => drop(eng.control(control.clone(), by.clone())),
                Datum::StepDay { date } => drop(eng.step_day(*date)),
            }
        }
        let a = clean.journal().entries();
        let b = floor.journal().entries();
        if let Some(i) = a.iter().zip(b).position(|(x, y)| x != y) {
            return Some(i as u64 + 1);
        }
    }
    None
}

#[test]
fn perturbed_rounding_is_caught_at_the_first_divergent_entry() {
    let mut caught = 0;
    for seed in 100..110 {
        let mut f = feed::random(seed);
        let g = f.genesis.clone();
        let mut h = Harness::spawn(3, &g, &[(2, FaultProfile::PerturbedRounding)]).unwrap();
        match feed::drive(&mut h, &mut f, |_| {}) {
            Err(HarnessError::DivergenceDetected(d)) => {
                assert_eq!(d.replicas, vec![0, 2]);
                assert_eq!(Some(d.seq), diff_oracle(&g, h.ledger()), "seed {seed}");
                assert_ne!(d.reference, d.divergent);
                assert!(matches!(h.step_all(h.ledger().len()), Err(HarnessError::DivergenceDetected(_))));
                caught += 1;
            }
            Ok(()) => assert_eq!(diff_oracle(&g, h.ledger()), None),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(caught >= 6, "{caught}");
}

#[test]
fn pause_resume_stop() {
    let mut h = Harness::spawn(3, &genesis(daily_forwards()), &[]).unwrap();
    h.feed(Datum::StepDay { date: day(1) }).unwrap();
    let r = h.pause_all(Some("A".into())).unwrap();
    assert_eq!(r.cursor, 2);
    assert!(r.replicas.iter().all(|s| s.mode == EngineMode::Paused && s.cursor == 2));
    assert!(matches!(h.publish(Datum::StepDay { date: day(2) }), Err(HarnessError::Paused)));
    h.resume_all(None).unwrap();
    h.feed(Datum::StepDay { date: day(3) }).unwrap();
    let r = h.stop_all("wind down", Some("B".into())).unwrap();
    assert!(r.replicas.iter().all(|s| s.mode == EngineMode::Stopped));
    assert!(matches!(h.publish(Datum::StepDay { date: day(4) }), Err(HarnessError::HarnessStopped)));
    assert!(matches!(h.resume_all(None), Err(HarnessError::AlreadyStopped)));
    assert_eq!(h.primary().instances().len(), 10);
    assert_eq!(h.primary().snapshot().stop_reason.as_deref(), Some("wind down"));
}

#[test]
fn one_answer_reaches_every_replica() {
    let mut h = Harness::spawn(3, &genesis(daily_forwards()), &[]).unwrap();
    let obs = sdc_core::event::RawObservation::new("merger", "oracle").party("B");
    h.feed(Datum::Command { command: Command::Observe { observation: obs } }).unwrap();
    h.feed(Datum::StepDay { date: day(1) }).unwrap();
    let open = h.consolidate_authorization().unwrap();
    assert_eq!(open.len(), 1);
    let r = &open[0].request;
    let answer = Command::Answer { request_id: r.request_id.clone(), party: r.addressee.clone(), response: "yes-trigger".into() };
    h.feed(Datum::Command { command: answer }).unwrap();
    h.feed(Datum::StepDay { date: day(2) }).unwrap();
    for i in 0..3 {
        let e = h.engine(i).unwrap();
        assert_eq!(e.events().records.len(), 1);
        assert!(e.pending_authorizations().all(|a| a.request_id != r.request_id));
    }
}

#[test]
fn divergent_replica_halts_the_harness() {
    let mut h = Harness::spawn(2, &genesis(vec![swap("S", "A", 1_000_000_07, "2024-03-04", "2024-06-04")]), &[(1, FaultProfile::PerturbedRounding)]).unwrap();
    let fix = sdc_core::cashflow::RateFixing { source: "SOFR-PROXY".into(), date: day(1), value: sdc_core::rate::Rate::from_micros(53_217) };
    h.feed(Datum::Command { command: Command::IngestFixing { fixing: fix } }).unwrap();
    let mut err = None;
    for n in 1..=40 {
        if let Err(e) = h.feed(Datum::StepDay { date: day(n) }) {
            err = Some(e);
            break;
        }
    }
    assert!(matches!(err, Some(HarnessError::DivergenceDetected(_))), "{err:?}");
}
