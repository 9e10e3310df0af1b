#![allow(dead_code)]

use std::collections::BTreeMap;

use sdc_core::calendar::{BusinessDayCalendar, CalendarSet};
use sdc_core::date::CalendarDate;
use sdc_core::engine::{Engine, Genesis, TransactionSpec};
use sdc_core::money::{Currency, Money};
use sdc_core::party::Party;
use sdc_core::template::{standard_master, Confirmation, ScheduleElections};

pub fn d(s: &str) -> CalendarDate {
    s.parse().unwrap()
}

/// Day 1 is Monday 2024-03-04.
pub fn day(n: i64) -> CalendarDate {
    d("2024-03-04").add_days(n - 1).unwrap()
}

pub fn usd(minor: i64) -> Money {
    Money::new(Currency::USD, minor)
}

pub fn terms(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// A buys `price` of gold from B for value on `date`.
pub fn forward(id: &str, seller: &str, price: i64, date: CalendarDate) -> TransactionSpec {
    let date = date.to_string();
    let price = price.to_string();
    TransactionSpec {
        product_template: "physical-forward".into(),
        confirmation: Confirmation {
            transaction_id: id.into(),
            product_type: "physical-forward".into(),
            terms: terms(&[
                ("seller", seller),
                ("asset-id", "XAU"),
                ("quantity", "10"),
                ("price", &price),
                ("currency", "USD"),
                ("delivery-date", &date),
            ]),
        },
    }
}

pub fn swap(id: &str, fixed_payer: &str, notional: i64, start: &str, end: &str) -> TransactionSpec {
    let notional = notional.to_string();
    TransactionSpec {
        product_template: "irs-fixed-float".into(),
        confirmation: Confirmation {
            transaction_id: id.into(),
            product_type: "interest-rate-swap".into(),
            terms: terms(&[
                ("notional", &notional),
                ("currency", "USD"),
                ("effective-date", start),
                ("termination-date", end),
                ("fixed-rate", "0.05"),
                ("fixed-payer", fixed_payer),
                ("floating-rate-source", "SOFR-PROXY"),
                ("payment-calendar", "WEEKENDS"),
                ("payment-frequency-months", "1"),
            ]),
        },
    }
}

pub fn elections() -> ScheduleElections {
    ScheduleElections {
        multiple_transaction_netting: Some(true),
        cross_default_threshold: Some(usd(10_000_000_00)),
        local_calendars: [("A".to_string(), "WEEKENDS".to_string()), ("B".to_string(), "WEEKENDS".to_string())]
            .into_iter()
            .collect(),
        ..Default::default()
    }
}

pub fn genesis(transactions: Vec<TransactionSpec>) -> Genesis {
    let mut calendars = CalendarSet::new();
    calendars.insert(BusinessDayCalendar::weekends_only("WEEKENDS"));
    Genesis {
        agreement_id: "AG-1".into(),
        master: standard_master(),
        elections: elections(),
        parties: vec![Party::simple("A", "Alpha Bank", "US"), Party::simple("B", "Beta Capital", "GB")],
        calendars,
        transactions,
        accounts: Vec::new(),
    }
}

/// Forwards where A pays B on each weekday of the first two weeks.
pub fn daily_forwards() -> Vec<TransactionSpec> {
    (1..=12)
        .map(day)
        .filter(|d| d.weekday().index() < 5)
        .enumerate()
        .map(|(i, date)| forward(&format!("F{}", i + 1), "B", 1_000_000_00 + i as i64, date))
        .collect()
}

pub fn run_days(engine: &mut Engine, from: i64, to: i64) {
    for n in from..=to {
        engine.step_day(day(n)).unwrap();
    }
}

pub mod feed {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use sdc_core::cashflow::RateFixing;
    use sdc_core::engine::{Command, ControlCommand};
    use sdc_core::event::RawObservation;
    use sdc_core::rate::Rate;
    use sdc_core::replica::{Datum, Harness, HarnessError};

    pub struct Feed {
        pub genesis: Genesis,
        pub rng: ChaCha8Rng,
        pub days: i64,
    }

    /// A random agreement with swaps and forwards; swaps fix monthly.
    pub fn random(seed: u64) -> Feed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut txns = Vec::new();
        for i in 0..rng.random_range(1..=3) {
            let payer = if rng.random_bool(0.5) { "A" } else { "B" };
            let notional = rng.random_range(1_000_000_00..50_000_000_00i64) + rng.random_range(0..100);
            txns.push(swap(&format!("S{i}"), payer, notional, "2024-03-04", "2025-03-04"));
        }
        for i in 0..rng.random_range(0..=4) {
            let seller = if rng.random_bool(0.5) { "A" } else { "B" };
            let date = day(rng.random_range(1..=60));
            txns.push(forward(&format!("F{i}"), seller, rng.random_range(1..5_000_000_00), date));
        }
        let mut g = genesis(txns);
        if rng.random_bool(0.5) {
            g.accounts.push(sdc_core::engine::AccountSpec { party: "A".into(), balance: usd(rng.random_range(0..200_000_000_00)) });
        }
        let days = rng.random_range(35..=90);
        Feed { genesis: g, rng, days }
    }

    fn fixing(rng: &mut ChaCha8Rng, date: sdc_core::date::CalendarDate) -> Datum {
        Datum::Command {
            command: Command::IngestFixing {
                fixing: RateFixing {
                    source: "SOFR-PROXY".into(),
                    date,
                    value: Rate::from_micros(rng.random_range(10_000..80_000)),
                },
            },
        }
    }

    fn observation(rng: &mut ChaCha8Rng) -> Datum {
        let party = if rng.random_bool(0.5) { "A" } else { "B" };
        let raw = match rng.random_range(0..6) {
            0 => RawObservation::new("bankruptcy", "oracle").party(party),
            1 => RawObservation::new("merger", "oracle").party(party),
            2 => RawObservation::new("third-party-default", "oracle")
                .party(party)
                .money(usd(rng.random_range(1..8_000_000_00)))
                .with("reference", &format!("L{}", rng.random_range(0..5))),
            3 => RawObservation::new("illegality", "oracle").party(party),
            4 => RawObservation::new("force-majeure", "oracle"),
            _ => RawObservation::new("credit-support-default", "party-notice").party(party),
        };
        Datum::Command { command: Command::Observe { observation: raw } }
    }

    /// Drives a harness through a random feed. Human answers are drawn from
    /// the consolidated requests, so they stay deterministic in the seed.
    pub fn drive(h: &mut Harness, f: &mut Feed, mut after_entry: impl FnMut(&Harness)) -> Result<(), HarnessError> {
        let rng = &mut f.rng;
        for n in 1..=f.days {
            let date = day(n);
            if date.day() == 4 || n == 1 {
                if rng.random_bool(0.95) {
                    h.feed(fixing(rng, date))?;
                    after_entry(h);
                }
            }
            if rng.random_bool(0.12) {
                h.feed(observation(rng))?;
                after_entry(h);
            }
            if rng.random_bool(0.05) {
                let live = h.primary().events().live().next().map(|e| e.event_id.clone());
                if let Some(ev) = live {
                    h.feed(Datum::Command { command: Command::Cure { event_id: ev, by: None } })?;
                    after_entry(h);
                }
            }
            if rng.random_bool(0.05) {
                let amount = usd(rng.random_range(1..100_000_000_00));
                h.feed(Datum::Command { command: Command::DepositFunds { party: "A".into(), amount } })?;
                after_entry(h);
            }
            let open = h.consolidate_authorization()?;
            for c in open {
                if rng.random_bool(0.4) {
                    let r = &c.request;
                    let response = r.menu[rng.random_range(0..r.menu.len())].clone();
                    let command = Command::Answer { request_id: r.request_id.clone(), party: r.addressee.clone(), response };
                    h.feed(Datum::Command { command })?;
                    after_entry(h);
                }
            }
            if rng.random_bool(0.02) {
                h.feed(Datum::Control { control: ControlCommand::Pause, by: Some("A".into()) })?;
                after_entry(h);
                h.feed(Datum::Control { control: ControlCommand::Resume, by: Some("A".into()) })?;
                after_entry(h);
            }
            h.feed(Datum::StepDay { date })?;
            after_entry(h);
        }
        Ok(())
    }
}

pub mod audit {
    use sdc_core::engine::{AuthorizationStatus, Entry, Payload};
    use sdc_core::event::{Action, Determination, EventKind};
    use sdc_core::cashflow::ObligationOrigin;
    use std::collections::BTreeMap;

    /// Every action, notice or action request must follow the determination
    /// that opened its event, which must follow its observation.
    pub fn pipeline_violations(entries: &[Entry]) -> Vec<String> {
        let mut observed: BTreeMap<String, u64> = BTreeMap::new();
        let mut determined: BTreeMap<String, u64> = BTreeMap::new();
        let mut out = Vec::new();
        let check = |event: &str, seq: u64, determined: &BTreeMap<String, u64>, what: &str| match determined.get(event) {
            Some(d) if *d < seq => None,
            _ => Some(format!("{what} at {seq} for {event} precedes its determination")),
        };
        for e in entries {
            match &e.payload {
                Payload::Observed { record } => {
                    observed.insert(record.observation_id.clone(), e.seq);
                }
                Payload::Determined { observation_id, determination, .. } => {
                    if !observed.get(observation_id).is_some_and(|o| *o < e.seq) {
                        out.push(format!("determination at {} precedes observation {observation_id}", e.seq));
                    }
                    if let Determination::NewEventRecords { records } = determination {
                        for r in records {
                            determined.insert(r.event_id.clone(), e.seq);
                        }
                    }
                }
                Payload::ActionTaken { action } => {
                    let id = match action {
                        Action::SuspendPayments { event_id, .. }
                        | Action::RequestAuthorization { event_id, .. }
                        | Action::RecordOnly { event_id, .. }
                        | Action::DesignateEarlyTermination { event_id, .. }
                        | Action::AutomaticEarlyTermination { event_id } => event_id,
                    };
                    out.extend(check(id, e.seq, &determined, "action"));
                }
                Payload::NoticeIssued { notice } => out.extend(check(&notice.event_id, e.seq, &determined, "notice")),
                Payload::AuthorizationRequested { request } => {
                    if let sdc_core::engine::AuthorizationSubject::EventAction { event_id } = &request.subject {
                        out.extend(check(event_id, e.seq, &determined, "action request"));
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Subjective events and interest obligations each need an earlier
    /// journaled answer that authorized them.
    pub fn gating_violations(entries: &[Entry]) -> Vec<String> {
        let mut answers: BTreeMap<String, (u64, String)> = BTreeMap::new();
        let mut charge_requests: BTreeMap<String, String> = BTreeMap::new();
        let mut out = Vec::new();
        for e in entries {
            match &e.payload {
                Payload::AuthorizationAnswered { request_id, response, effective: true, .. } => {
                    answers.insert(request_id.clone(), (e.seq, response.clone()));
                }
                Payload::AuthorizationRequested { request } => {
                    assert_eq!(request.status, AuthorizationStatus::Open);
                    if let sdc_core::engine::AuthorizationSubject::InterestCharge { charge_id } = &request.subject {
                        charge_requests.insert(charge_id.clone(), request.request_id.clone());
                    }
                }
                Payload::Determined { determination: Determination::NewEventRecords { records }, authorized_by, .. } => {
                    for r in records.iter().filter(|r| r.spec.subjective || *r.kind() == EventKind::CreditEventUponMerger) {
                        let ok = authorized_by.as_ref().zip(r.authorized_by.as_ref()).is_some_and(|(a, b)| {
                            a == b && answers.get(a).is_some_and(|(s, resp)| *s < e.seq && resp == "yes-trigger")
                        });
                        if !ok {
                            out.push(format!("subjective event {} at {} without authorization", r.event_id, e.seq));
                        }
                    }
                }
                Payload::ObligationCreated { obligation } if obligation.origin == ObligationOrigin::Interest => {
                    let authorized = charge_requests
                        .iter()
                        .filter(|(c, _)| obligation.obligation_id == sdc_core::canonical::content_id("ob", &[c.as_str(), "interest"]))
                        .any(|(_, req)| answers.get(req).is_some_and(|(s, r)| *s < e.seq && r == "apply"));
                    if !authorized {
                        out.push(format!("interest obligation {} at {} without authorization", obligation.obligation_id, e.seq));
                    }
                }
                _ => {}
            }
        }
        out
    }
}
