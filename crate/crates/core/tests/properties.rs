mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use sdc_core::calendar::{BusinessDayCalendar, CalendarSet};
use sdc_core::cashflow::*;
use sdc_core::date::{CalendarDate, Weekday};
use sdc_core::event::*;
use sdc_core::money::{Currency, Money};
use sdc_core::netting::{net_day, NettingGroup, NettingMode};
use sdc_core::party::Party;
use sdc_core::product::ProductRegistry;
use sdc_core::rate::Rate;
use sdc_core::settlement::*;
use sdc_core::template::*;

fn cal(weekend: &[u8], holidays: &[i64]) -> BusinessDayCalendar {
    let wk: BTreeSet<Weekday> = weekend.iter().map(|i| Weekday::ALL[*i as usize]).collect();
    let hol: BTreeSet<CalendarDate> = holidays.iter().map(|o| d("2024-01-01").add_days(*o).unwrap()).collect();
    BusinessDayCalendar::new("P", wk, hol)
        .unwrap()
        .with_coverage(d("2023-01-01"), d("2026-12-31"))
}

fn arb_cal() -> impl Strategy<Value = BusinessDayCalendar> {
    (
        prop::sample::subsequence(vec![0u8, 1, 2, 3, 4, 5, 6], 0..=3),
        prop::collection::vec(0i64..900, 0..40),
    )
        .prop_map(|(w, h)| cal(&w, &h))
}

/// Walks forward one day at a time.
fn business_day_oracle(c: &BusinessDayCalendar, start: CalendarDate, n: u32) -> CalendarDate {
    let mut d = start;
    let mut left = n;
    while left > 0 {
        d = d.succ();
        if !c.is_weekend(d) && !c.holidays().any(|h| *h == d) {
            left -= 1;
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn business_days_compose(c in arb_cal(), start in 0i64..365, m in 0u32..=30, n in 0u32..=30) {
        let s = d("2024-01-01").add_days(start).unwrap();
        let once = c.add_business_days(s, m + n).unwrap();
        let twice = c.add_business_days(c.add_business_days(s, m).unwrap(), n).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn precedence_is_total(
        conf in prop::collection::btree_map("[a-e]", "[0-9]{1,3}", 0..4),
        sched in prop::collection::btree_map("[a-e]", "[0-9]{1,3}", 0..4),
        master in prop::collection::btree_map("[a-e]", prop::option::of("[0-9]{1,3}"), 0..5),
    ) {
        let master = MasterTemplate {
            version_tag: "t".into(),
            terms: master
                .into_iter()
                .map(|(k, v)| (k.clone(), TermDef { name: k, default: v, overridable: true, per_transaction: false }))
                .collect(),
            events: vec![],
            placeholders: vec![],
        };
        for name in ["a", "b", "c", "d", "e"] {
            let got = resolve_layers(name, &conf, &sched, &master);
            let expected = if let Some(v) = conf.get(name) {
                Some((v.clone(), Provenance::Confirmation))
            } else if let Some(v) = sched.get(name) {
                Some((v.clone(), Provenance::Schedule))
            } else {
                master.terms.get(name).and_then(|t| t.default.clone()).map(|v| (v, Provenance::Master))
            };
            prop_assert_eq!(got.map(|r| (r.value, r.provenance)), expected);
        }
    }

    #[test]
    fn instantiation_is_pure_and_reproducible(rate in 1i64..100_000, notional in 1i64..1_000_000_000_00) {
        let e = elections();
        let parties = vec![Party::simple("A", "A", "US"), Party::simple("B", "B", "GB")];
        let m = standard_master();
        let before = (serde_json::to_string(&m).unwrap(), serde_json::to_string(&e).unwrap());
        let a = apply_schedule(&m, &e, &parties).unwrap();
        prop_assert_eq!(&before, &(serde_json::to_string(&m).unwrap(), serde_json::to_string(&e).unwrap()));
        let mut c = swap("S", "A", notional, "2024-03-04", "2025-03-04").confirmation;
        c.terms.insert("fixed-rate".into(), Rate::from_micros(rate).to_string());
        let c_before = c.clone();
        let reg = ProductRegistry::standard();
        let i1 = instantiate(&a, &c, "irs-fixed-float", &reg).unwrap();
        let i2 = instantiate(&a, &c, "irs-fixed-float", &reg).unwrap();
        prop_assert_eq!(c, c_before);
        prop_assert_eq!(i1, i2);
    }

    #[test]
    fn generation_is_idempotent_monotone_and_exact(
        notional in 1i64..10_000_000_000_00,
        fixed in 1i64..150_000,
        fixings in prop::collection::vec(1i64..120_000, 13),
        d1 in 0i64..400,
        extra in 0i64..200,
    ) {
        let a = apply_schedule(&standard_master(), &elections(), &[Party::simple("A", "A", "US"), Party::simple("B", "B", "GB")]).unwrap();
        let mut c = swap("S", "A", notional, "2024-03-04", "2025-03-04").confirmation;
        c.terms.insert("fixed-rate".into(), Rate::from_micros(fixed).to_string());
        let i = instantiate(&a, &c, "irs-fixed-float", &ProductRegistry::standard()).unwrap();
        let mut store = FixingStore::new();
        let starts = &i.flows.legs[1].period_dates;
        for (k, s) in starts.iter().enumerate().take(starts.len() - 1) {
            store.ingest(&RateFixing { source: "SOFR-PROXY".into(), date: *s, value: Rate::from_micros(fixings[k]) }).unwrap();
        }
        let cals: CalendarSet = [BusinessDayCalendar::weekends_only("WEEKENDS")].into_iter().collect();
        let none = BTreeSet::new();
        let ctx = GenerationContext { fixings: &store, calendars: &cals, existing: &none, rounding: Rounding::HalfAwayFromZero };
        let up1 = d("2024-03-04").add_days(d1).unwrap();
        let up2 = up1.add_days(extra).unwrap();
        let first = generate_obligations(&i.flows, up1, &ctx).unwrap();
        let again = generate_obligations(&i.flows, up1, &ctx).unwrap();
        prop_assert_eq!(&first, &again);
        let later = generate_obligations(&i.flows, up2, &ctx).unwrap();
        let later_ids: BTreeSet<_> = later.payments.iter().map(|p| &p.obligation_id).collect();
        prop_assert!(first.payments.iter().all(|p| later_ids.contains(&p.obligation_id)));
        // already-known obligations are not generated twice
        let known: BTreeSet<ObligationId> = first.payments.iter().map(|p| p.obligation_id.clone()).collect();
        let ctx2 = GenerationContext { existing: &known, ..ctx };
        let rest = generate_obligations(&i.flows, up1, &ctx2).unwrap();
        prop_assert!(rest.payments.is_empty());
        for p in &later.payments {
            // independent arithmetic: days from the period, rate from the
            // leg terms or the fixing on the period start
            let calc = p.calculation.as_ref().unwrap();
            let leg = i.flows.legs.iter().find(|l| l.payer == p.payer).unwrap();
            let k = leg.period_dates.windows(2).position(|w| obligation_id("S", &leg.leg_id, w[1]) == p.obligation_id).unwrap();
            let (s, e) = (leg.period_dates[k], leg.period_dates[k + 1]);
            let (days, den) = if leg.leg_id == "fixed" {
                let (y1, m1, mut d1) = (s.year() as i64, s.month() as i64, s.day() as i64);
                let (y2, m2, mut d2) = (e.year() as i64, e.month() as i64, e.day() as i64);
                if d1 == 31 { d1 = 30; }
                if d2 == 31 && d1 == 30 { d2 = 30; }
                (360 * (y2 - y1) + 30 * (m2 - m1) + (d2 - d1), 360)
            } else {
                (s.days_until(&e), 360)
            };
            let rate = if leg.leg_id == "fixed" { fixed } else { fixings[k] };
            let num = notional as i128 * rate as i128 * days as i128;
            let q = 1_000_000i128 * den;
            let rounded = (2 * num + q) / (2 * q);
            prop_assert_eq!(calc.days, days);
            prop_assert_eq!(p.amount.amount as i128, rounded);
        }
    }

    #[test]
    fn netting_conserves_and_orients(
        flows in prop::collection::vec((any::<bool>(), 0usize..3, 0i64..1_000_000_000), 0..50),
        seed in any::<u64>(),
    ) {
        let ccys = [Currency::USD, Currency::EUR, Currency::GBP];
        let date = d("2024-03-15");
        let obs: Vec<PaymentObligation> = flows
            .iter()
            .enumerate()
            .map(|(k, (ab, c, amt))| {
                let (payer, payee) = if *ab { ("A", "B") } else { ("B", "A") };
                let mut p = gross_ob(&format!("g{k:02}"), payer, payee, Money::new(ccys[*c], *amt), date);
                p.group_id = Some("grp".into());
                p
            })
            .collect();
        let group = NettingGroup { group_id: "grp".into(), members: BTreeSet::from(["T".to_string()]), mode: NettingMode::MultipleTransaction, currency_scope: None };
        let refs: Vec<&PaymentObligation> = obs.iter().collect();
        let nets = net_day(&group, date, &refs, ("A", "B")).unwrap();
        let mut shuffled = refs.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(&nets, &net_day(&group, date, &shuffled, ("A", "B")).unwrap());
        let mut seen = BTreeSet::new();
        for n in &nets {
            let ab: i128 = obs.iter().filter(|o| o.amount.currency == n.currency && o.payer == "A").map(|o| o.amount.amount as i128).sum();
            let ba: i128 = obs.iter().filter(|o| o.amount.currency == n.currency && o.payer == "B").map(|o| o.amount.amount as i128).sum();
            prop_assert_eq!(n.amount.amount as i128, (ab - ba).abs());
            let payer = match ab.cmp(&ba) {
                std::cmp::Ordering::Greater => Some("A".to_string()),
                std::cmp::Ordering::Less => Some("B".to_string()),
                std::cmp::Ordering::Equal => None,
            };
            prop_assert_eq!(&n.payer, &payer);
            for c in &n.constituents {
                prop_assert!(seen.insert(c.clone()), "constituent in two nets");
            }
        }
        prop_assert_eq!(seen.len(), obs.len());
    }

    #[test]
    fn hierarchy_is_order_independent(kinds in prop::collection::vec(0usize..7, 1..7), circs in prop::collection::vec(0u8..3, 7), seed in any::<u64>()) {
        let records: Vec<EventRecord> = kinds
            .iter()
            .enumerate()
            .map(|(i, k)| record(&format!("ev-{i}"), EventKind::STANDARD[*k].clone(), &format!("obs-{}", circs[i]), EventStatus::Occurred))
            .collect();
        let h = Hierarchy::default();
        let out = resolve_hierarchy(&records, &h);
        let mut rev = records.clone();
        rev.rotate_left((seed % records.len() as u64) as usize);
        rev.reverse();
        prop_assert_eq!(&out, &resolve_hierarchy(&rev, &h));
        let circ_count = records.iter().map(|r| &r.circumstance).collect::<BTreeSet<_>>().len();
        prop_assert_eq!(out.len(), circ_count);
        for o in &out {
            let members: Vec<&EventRecord> = records.iter().filter(|r| r.circumstance == o.circumstance).collect();
            prop_assert_eq!(o.superseded.len() + 1, members.len());
            let best = members.iter().map(|r| h.precedence.iter().position(|k| k == r.kind()).unwrap()).min().unwrap();
            let gov = members.iter().find(|r| r.event_id == o.governing).unwrap();
            prop_assert_eq!(h.precedence.iter().position(|k| k == gov.kind()).unwrap(), best);
        }
    }

    #[test]
    fn notices_follow_class(k in 0usize..7, status in 0usize..5) {
        let statuses = [EventStatus::PotentialPendingGrace, EventStatus::Occurred, EventStatus::Continuing, EventStatus::Cured, EventStatus::Superseded];
        let r = record("ev", EventKind::STANDARD[k].clone(), "obs", statuses[status]);
        let notices = emit_notice(&r, ["A", "B"]);
        match r.class() {
            EventClass::EventOfDefault => prop_assert!(notices.is_empty()),
            EventClass::TerminationEvent => prop_assert_eq!(notices.is_empty(), !r.status.has_occurred()),
        }
    }

    #[test]
    fn condition_precedent_matches_brute_force(
        events in prop::collection::vec((0usize..7, 0usize..5, 0u8..3), 0..8),
        metavante in any::<bool>(),
    ) {
        let statuses = [EventStatus::PotentialPendingGrace, EventStatus::Occurred, EventStatus::Continuing, EventStatus::Cured, EventStatus::Superseded];
        let mut book = EventBook::default();
        for (i, (k, s, who)) in events.iter().enumerate() {
            let mut r = record(&format!("ev-{i}"), EventKind::STANDARD[*k].clone(), "obs", statuses[*s]);
            r.affected = match who { 0 => ["A"].into_iter().map(String::from).collect(), 1 => ["B"].into_iter().map(String::from).collect(), _ => ["A", "B"].into_iter().map(String::from).collect() };
            book.records.insert(r.event_id.clone(), r);
        }
        let blocking = events.iter().any(|(k, s, who)| {
            let kind = &EventKind::STANDARD[*k];
            let live = *s <= 2;
            live && kind.class() == EventClass::EventOfDefault && *who == 1 && !(metavante && *kind == EventKind::Bankruptcy)
        });
        let cp = check_condition_precedent("A", "B", &book, metavante);
        prop_assert_eq!(cp == ConditionPrecedent::Satisfied, !blocking);
    }

    #[test]
    fn incoming_never_over_discharges(dues in prop::collection::vec((0i64..20, 1i64..1_000_000), 0..10), pay in 1i64..5_000_000) {
        let obs: Vec<PaymentObligation> = dues
            .iter()
            .enumerate()
            .map(|(k, (off, amt))| {
                let mut p = gross_ob(&format!("o{k}"), "A", "B", usd(*amt), day(1 + off));
                p.status = ObligationStatus::Due;
                p
            })
            .collect();
        let parties = vec![Party::simple("A", "A", "US"), Party::simple("B", "B", "GB")];
        let payment = IncomingPayment { payment_id: "p".into(), from_branch: "A-HO".into(), amount: usd(pay), value_date: day(30) };
        let r = match_incoming(&payment, &parties, obs.iter()).unwrap();
        let applied: i64 = r.allocations.iter().map(|a| a.applied.amount).sum();
        prop_assert_eq!(applied + r.credit.amount, pay);
        let mut order: Vec<&PaymentObligation> = obs.iter().collect();
        order.sort_by(|a, b| (a.due_date, &a.obligation_id).cmp(&(b.due_date, &b.obligation_id)));
        for (a, o) in r.allocations.iter().zip(order) {
            prop_assert_eq!(&a.obligation_id, &o.obligation_id);
            prop_assert!(a.applied.amount <= o.amount.amount);
        }
    }

    #[test]
    fn gross_up_reconstructs_gross(pct in 0i64..=50, amount in 0i64..=1_000_000_000, connected in any::<bool>()) {
        let rule = TaxRule { rule_id: "r".into(), jurisdiction: "US".into(), rate: Rate::from_percent(pct), payee_connected: connected, effective_from: d("2020-01-01"), effective_to: None };
        let w = apply_withholding(usd(amount), &rule, d("2024-03-04"), true).unwrap();
        let withheld = (amount as i128 * pct as i128 * 2 + 100) / 200;
        prop_assert_eq!(w.withheld.amount as i128, withheld);
        let receipts = w.net_paid.amount + w.gross_up.map_or(0, |g| g.amount);
        if connected {
            prop_assert_eq!(receipts as i128, amount as i128 - withheld);
        } else {
            prop_assert_eq!(receipts, amount);
        }
    }
}

fn gross_ob(id: &str, payer: &str, payee: &str, amount: Money, due: CalendarDate) -> PaymentObligation {
    PaymentObligation {
        obligation_id: id.into(),
        instance_id: Some("T".into()),
        group_id: None,
        payer: payer.into(),
        payee: payee.into(),
        amount,
        due_date: due,
        status: ObligationStatus::Scheduled,
        origin: ObligationOrigin::Gross,
        successor: None,
        calculation: None,
        discharged_amount: 0,
        late_since: None,
    }
}

fn record(id: &str, kind: EventKind, circumstance: &str, status: EventStatus) -> EventRecord {
    EventRecord {
        event_id: id.into(),
        spec: EventSpec::new(kind, Grace::None),
        affected: ["B".to_string()].into_iter().collect(),
        scope: CircumstanceScope::SingleParty,
        status,
        grace_deadline: None,
        circumstance: circumstance.into(),
        observations: vec![circumstance.into()],
        affected_transactions: vec![],
        opened_on: day(1),
        occurred_on: None,
        obligation_id: None,
        authorized_by: None,
        acted: false,
    }
}

#[test]
fn business_day_oracle_ten_thousand() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let weekend: Vec<u8> = (0..7u8).filter(|_| rng.random_bool(0.25)).take(3).collect();
        let holidays: Vec<i64> = (0..rng.random_range(0..30)).map(|_| rng.random_range(0..900)).collect();
        let c = cal(&weekend, &holidays);
        let s = d("2024-01-01").add_days(rng.random_range(0..365)).unwrap();
        let n = rng.random_range(0..=60);
        assert_eq!(c.add_business_days(s, n).unwrap(), business_day_oracle(&c, s, n));
    }
}
