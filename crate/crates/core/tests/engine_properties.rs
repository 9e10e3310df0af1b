mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use proptest::prelude::*;
use sdc_core::cashflow::ObligationStatus;
use sdc_core::engine::{replay, Command, Engine, Payload};
use sdc_core::event::{Grace, RawObservation, EventStatus};
use sdc_core::product::ProductRegistry;
use sdc_core::replica::Harness;

fn with_ftp_grace(grace: Grace) -> sdc_core::engine::Genesis {
    let mut g = genesis(daily_forwards());
    g.elections.grace_overrides.insert("failure-to-pay-or-deliver".into(), grace);
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Lapse happens at the tick stage of the day after the deadline, after
    /// that day's queued commands. A cure ingested before the lapse therefore
    /// keeps the event from ever occurring; otherwise it occurs exactly then.
    #[test]
    fn cure_before_lapse_prevents_occurrence(n in 1u32..=15, business in any::<bool>(), cure_at in 0i64..40, cure in any::<bool>()) {
        let grace = if business { Grace::LocalBusinessDays { days: n, calendar: None } } else { Grace::CalendarDays { days: n } };
        let mut e = Engine::new(with_ftp_grace(grace)).unwrap();
        let notice = RawObservation::new("failure-to-pay", "party-notice").party("B").with("notifying_party", "A");
        e.submit(Command::Observe { observation: notice }).unwrap();
        e.step_day(day(1)).unwrap();
        let ev = e.events().records.values().next().unwrap().clone();
        let deadline = ev.grace_deadline.unwrap();
        let lapse_day = deadline.succ();
        let cure_day = day(1 + 1 + cure_at);
        let mut occurred_on = None;
        for k in 2..=60 {
            if cure && day(k) == cure_day {
                e.submit(Command::Cure { event_id: ev.event_id.clone(), by: None }).unwrap();
            }
            e.step_day(day(k)).unwrap();
            if occurred_on.is_none() && e.events().get(&ev.event_id).unwrap().status.has_occurred() {
                occurred_on = Some(day(k));
            }
        }
        if cure && cure_day <= lapse_day {
            prop_assert_eq!(occurred_on, None);
            prop_assert_eq!(e.events().get(&ev.event_id).unwrap().status, EventStatus::Cured);
        } else {
            prop_assert_eq!(occurred_on, Some(lapse_day));
        }
    }
}

#[test]
fn journal_invariants_over_random_feeds() {
    for seed in 200..230 {
        let mut f = feed::random(seed);
        let g = f.genesis.clone();
        let mut h = Harness::spawn(1, &g, &[]).unwrap();
        let mut amounts: BTreeMap<String, i64> = BTreeMap::new();
        let mut suspended: BTreeSet<String> = BTreeSet::new();
        let mut last_seq = 0u64;
        feed::drive(&mut h, &mut f, |h| {
            let e = h.primary();
            for (id, o) in e.obligations() {
                let a = *amounts.entry(id.clone()).or_insert(o.amount.amount);
                assert_eq!(a, o.amount.amount, "amount of {id} mutated");
            }
            let now: BTreeSet<String> = e
                .obligations()
                .values()
                .filter(|o| o.status == ObligationStatus::Suspended)
                .map(|o| o.obligation_id.clone())
                .collect();
            let resumed: BTreeSet<String> = e.journal().since(last_seq + 1).iter().filter_map(|x| match &x.payload {
                Payload::ObligationTransition { obligation_id, from: ObligationStatus::Suspended, .. } => Some(obligation_id.clone()),
                _ => None,
            }).collect();
            for gone in suspended.difference(&now) {
                assert!(resumed.contains(gone), "{gone} left suspension without resumption");
            }
            suspended = now;
            last_seq = e.journal().len() as u64;
        })
        .unwrap();
        let entries = h.primary().journal().entries();
        assert_eq!(audit::pipeline_violations(entries), Vec::<String>::new(), "seed {seed}");
        assert_eq!(audit::gating_violations(entries), Vec::<String>::new(), "seed {seed}");
        let back = replay(entries, &ProductRegistry::standard()).unwrap();
        assert_eq!(back.head_digest(), h.primary().head_digest());
    }
}

#[test]
fn commands_are_inert_until_the_next_step() {
    let mut e = Engine::new(genesis(daily_forwards())).unwrap();
    e.step_day(day(1)).unwrap();
    let before = e.snapshot();
    e.submit(Command::Observe { observation: RawObservation::new("bankruptcy", "oracle").party("B") }).unwrap();
    e.submit(Command::DepositFunds { party: "A".into(), amount: usd(5) }).unwrap();
    let after = e.snapshot();
    assert_eq!(after.queued_commands.len(), 2);
    assert_eq!(after.events, before.events);
    assert_eq!(after.balances, before.balances);
    assert_eq!(after.obligations, before.obligations);
    e.step_day(day(2)).unwrap();
    assert!(e.snapshot().queued_commands.is_empty());
    assert_eq!(e.events().records.len(), 1);
}

#[test]
fn interest_waits_for_the_payee() {
    let mut g = genesis(daily_forwards());
    g.accounts.push(sdc_core::engine::AccountSpec { party: "A".into(), balance: usd(1_500_000_00) });
    let mut e = Engine::new(g).unwrap();
    run_days(&mut e, 1, 2);
    e.submit(Command::DepositFunds { party: "A".into(), amount: usd(100_000_000_00) }).unwrap();
    let retry = e.pending_authorizations().find(|a| a.menu.iter().any(|m| m == "retry")).unwrap().request_id.clone();
    e.submit(Command::Answer { request_id: retry, party: "A".into(), response: "retry".into() }).unwrap();
    e.step_day(day(3)).unwrap();
    run_days(&mut e, 4, 20);
    assert!(e.charges().values().all(|c| c.status == sdc_core::settlement::ChargeStatus::Proposed));
    assert!(e.obligations().values().all(|o| o.origin != sdc_core::cashflow::ObligationOrigin::Interest));
    let apply = e.pending_authorizations().find(|a| a.menu.iter().any(|m| m == "apply")).unwrap().request_id.clone();
    e.submit(Command::Answer { request_id: apply, party: "B".into(), response: "apply".into() }).unwrap();
    e.step_day(day(21)).unwrap();
    let interest = e.obligations().values().find(|o| o.origin == sdc_core::cashflow::ObligationOrigin::Interest).unwrap();
    assert_eq!(interest.status, ObligationStatus::Paid);
    assert_eq!(audit::gating_violations(e.journal().entries()), Vec::<String>::new());
}
