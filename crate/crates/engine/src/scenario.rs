//! Scenario files: an agreement, a dated script of inputs and assertions
//! evaluated against the journal and the state it produces.
//!
//! A scenario is driven through the replica harness, so `--replicas` and
//! `--fault` apply to it unchanged. Answers and cures name their target by
//! selector, because request and event ids are only known at run time; the
//! resolved command is what reaches the ledger.

use std::collections::BTreeMap;
use std::path::Path;

use sdc_core::calendar::{BusinessDayCalendar, CalendarDocument, CalendarSet};
use sdc_core::cashflow::{ObligationId, ObligationOrigin, ObligationStatus, PaymentObligation, RateFixing, TransactionId};
use sdc_core::date::CalendarDate;
use sdc_core::engine::{
    AccountSpec, Command, ControlCommand, Engine, EngineMode, Entry, Genesis, Payload, PendingAuthorization,
    TransactionSpec,
};
use sdc_core::event::{EventStatus, RawObservation};
use sdc_core::money::Money;
use sdc_core::party::{Party, PartyId};
use sdc_core::product::ProductRegistry;
use sdc_core::rate::Rate;
use sdc_core::replica::{Datum, DivergenceDiff, FaultProfile, Harness, HarnessError};
use sdc_core::settlement::{ChargeStatus, IncomingPayment};
use sdc_core::template::{standard_master, InstanceState, MasterTemplate, ScheduleElections};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};

pub const STANDARD_MASTER: &str = "standard-2002";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MasterSource {
    Named(String),
    Inline(Box<MasterTemplate>),
}

impl Default for MasterSource {
    fn default() -> Self {
        MasterSource::Named(STANDARD_MASTER.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub agreement_id: String,
    #[serde(default)]
    pub master: MasterSource,
    #[serde(default)]
    pub elections: ScheduleElections,
    pub parties: Vec<Party>,
    #[serde(default)]
    pub calendars: Vec<CalendarDocument>,
    /// Paths of calendar documents, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calendar_files: Vec<String>,
    #[serde(default)]
    pub transactions: Vec<TransactionSpec>,
    #[serde(default)]
    pub accounts: Vec<AccountSpec>,
    /// First and last day stepped, inclusive.
    pub start: CalendarDate,
    pub end: CalendarDate,
    #[serde(default)]
    pub script: Vec<ScriptItem>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
    /// Shared party credentials for `--serve`: token -> party.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tokens: BTreeMap<String, PartyId>,
}

/// One input, applied before the step of `date`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptItem {
    pub date: CalendarDate,
    #[serde(flatten)]
    pub action: ScriptAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    Observe(RawObservation),
    /// A fixing for the item's date.
    Fixing { source: String, value: Rate },
    Payment(IncomingPayment),
    Deposit { party: PartyId, amount: Money },
    /// Cures the oldest live event matching the selector.
    Cure {
        #[serde(default)]
        kind: Option<String>,
        #[serde(default)]
        party: Option<PartyId>,
        #[serde(default)]
        by: Option<PartyId>,
    },
    Answer(AnswerSelector),
    Control {
        #[serde(flatten)]
        control: ControlCommand,
        #[serde(default)]
        by: Option<PartyId>,
    },
    AddTransaction(TransactionSpec),
    Retire {
        transaction_id: TransactionId,
        #[serde(default)]
        force: Option<String>,
    },
    Command(Command),
}

/// Picks the oldest open request matching every given field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSelector {
    #[serde(default)]
    pub addressee: Option<PartyId>,
    /// Subject type, e.g. `event_action` or `interest_charge`.
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub menu_contains: Option<String>,
    /// Who answers; defaults to the addressee.
    #[serde(default)]
    pub party: Option<PartyId>,
    pub response: String,
}

/// Evaluated after the step of `after`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub after: CalendarDate,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub check: Check,
}

/// `due_from` and `due_to` compare the original due date, which a resumed
/// or deferred obligation keeps in `late_since`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PaymentSelector {
    #[serde(default)]
    pub payer: Option<PartyId>,
    #[serde(default)]
    pub payee: Option<PartyId>,
    #[serde(default)]
    pub instance: Option<TransactionId>,
    #[serde(default)]
    pub origin: Option<ObligationOrigin>,
    #[serde(default)]
    pub due_from: Option<CalendarDate>,
    #[serde(default)]
    pub due_to: Option<CalendarDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "check")]
pub enum Check {
    /// Payment obligations matching `select`.
    Payments {
        #[serde(default)]
        select: PaymentSelector,
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        status: Option<ObligationStatus>,
        /// Status at the end of the netting successor chain.
        #[serde(default)]
        final_status: Option<ObligationStatus>,
        #[serde(default)]
        amount: Option<Money>,
        #[serde(default)]
        total: Option<Money>,
        /// Every amount equals the amount it was journaled with.
        #[serde(default)]
        unchanged: Option<bool>,
    },
    Deliveries {
        #[serde(default)]
        deliverer: Option<PartyId>,
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        status: Option<ObligationStatus>,
    },
    Events {
        #[serde(default)]
        kind: Option<String>,
        #[serde(default)]
        party: Option<PartyId>,
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        status: Option<EventStatus>,
        #[serde(default)]
        authorized: Option<bool>,
    },
    Authorizations {
        #[serde(default)]
        addressee: Option<PartyId>,
        #[serde(default)]
        subject: Option<String>,
        #[serde(default)]
        open: Option<bool>,
        count: usize,
    },
    Mode { mode: EngineMode },
    Instances {
        #[serde(default)]
        instance: Option<TransactionId>,
        #[serde(default)]
        count: Option<usize>,
        state: InstanceState,
    },
    Charges {
        #[serde(default)]
        status: Option<ChargeStatus>,
        count: usize,
    },
    Notices {
        #[serde(default)]
        from: Option<PartyId>,
        #[serde(default)]
        nature: Option<String>,
        count: usize,
    },
    Withholdings {
        #[serde(default)]
        payer: Option<PartyId>,
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        withheld: Option<Money>,
        #[serde(default)]
        gross_up: Option<bool>,
    },
    /// Journal entries of one payload type, e.g. `ChargeResolved` as
    /// `charge_resolved`.
    Journal {
        entry: String,
        #[serde(default)]
        count: Option<usize>,
        #[serde(default)]
        at_least: Option<usize>,
    },
    Balance { party: PartyId, amount: Money },
}

impl Check {
    fn name(&self) -> &'static str {
        match self {
            Check::Payments { .. } => "payments",
            Check::Deliveries { .. } => "deliveries",
            Check::Events { .. } => "events",
            Check::Authorizations { .. } => "authorizations",
            Check::Mode { .. } => "mode",
            Check::Instances { .. } => "instances",
            Check::Charges { .. } => "charges",
            Check::Notices { .. } => "notices",
            Check::Withholdings { .. } => "withholdings",
            Check::Journal { .. } => "journal",
            Check::Balance { .. } => "balance",
        }
    }
}

impl Scenario {
    /// Parses a scenario; errors carry the line and column.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Reads a scenario file and inlines its calendar files.
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| IoError::File { path: path.display().to_string(), source })?;
        let mut s = Scenario::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in std::mem::take(&mut s.calendar_files) {
            s.calendars.push(io::load_calendar(&base.join(&f))?.into());
        }
        Ok(s)
    }

    pub fn genesis(&self) -> Result<Genesis, ScenarioError> {
        if !self.calendar_files.is_empty() {
            return Err(ScenarioError::Invalid("calendar files are resolved by Scenario::load".into()));
        }
        let master = match &self.master {
            MasterSource::Named(n) if n == STANDARD_MASTER => standard_master(),
            MasterSource::Named(n) => return Err(ScenarioError::Invalid(format!("unknown master {n:?}"))),
            MasterSource::Inline(m) => (**m).clone(),
        };
        let mut calendars = CalendarSet::new();
        for doc in &self.calendars {
            let cal = BusinessDayCalendar::try_from(doc.clone())
                .map_err(|e| ScenarioError::Invalid(format!("calendar {}: {e}", doc.calendar_id)))?;
            calendars.insert(cal);
        }
        Ok(Genesis {
            agreement_id: self.agreement_id.clone(),
            master,
            elections: self.elections.clone(),
            parties: self.parties.clone(),
            calendars,
            transactions: self.transactions.clone(),
            accounts: self.accounts.clone(),
        })
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.end < self.start {
            return Err(ScenarioError::Invalid(format!("end {} precedes start {}", self.end, self.start)));
        }
        let outside = |d: &CalendarDate| *d < self.start || *d > self.end;
        if let Some(i) = self.script.iter().find(|i| outside(&i.date)) {
            return Err(ScenarioError::Invalid(format!("script item dated {} is outside the run", i.date)));
        }
        if let Some(a) = self.assertions.iter().find(|a| outside(&a.after)) {
            return Err(ScenarioError::Invalid(format!("assertion after {} is outside the run", a.after)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub after: CalendarDate,
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub digest: String,
    pub journal_len: usize,
    pub ledger_len: u64,
    pub replicas: usize,
    pub days_stepped: usize,
    pub results: Vec<AssertionResult>,
    pub script_errors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<DivergenceDiff>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub replicas: usize,
    pub faults: Vec<(usize, FaultProfile)>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { replicas: 1, faults: Vec::new() }
    }
}

pub struct Run {
    pub report: ScenarioReport,
    pub harness: Harness,
}

enum ItemError {
    Harness(HarnessError),
    Script(String),
}

impl From<HarnessError> for ItemError {
    fn from(e: HarnessError) -> Self {
        ItemError::Harness(e)
    }
}

/// Runs every day from `start` to `end`. Days while the harness is paused
/// or stopped are not stepped.
pub fn run(s: &Scenario, opts: &RunOptions) -> Result<Run, ScenarioError> {
    s.validate()?;
    let genesis = s.genesis()?;
    let mut h = Harness::spawn_with(opts.replicas, &genesis, &opts.faults, &ProductRegistry::standard())?;
    let mut by_date: BTreeMap<CalendarDate, Vec<&ScriptItem>> = BTreeMap::new();
    for item in &s.script {
        by_date.entry(item.date).or_default().push(item);
    }
    let mut by_after: BTreeMap<CalendarDate, Vec<(usize, &Assertion)>> = BTreeMap::new();
    for (i, a) in s.assertions.iter().enumerate() {
        by_after.entry(a.after).or_default().push((i, a));
    }
    let mut results = Vec::new();
    let mut script_errors = Vec::new();
    let mut days_stepped = 0;
    let mut halted: Option<DivergenceDiff> = None;
    let mut date = s.start;
    'days: while date <= s.end {
        for item in by_date.get(&date).into_iter().flatten() {
            match apply_item(&mut h, item) {
                Ok(()) => {}
                Err(ItemError::Harness(HarnessError::DivergenceDetected(d))) => {
                    halted = Some(d);
                    break 'days;
                }
                Err(ItemError::Harness(e)) => script_errors.push(format!("{date}: {e}")),
                Err(ItemError::Script(e)) => script_errors.push(format!("{date}: {e}")),
            }
        }
        if !h.is_stopped() && !h.is_paused() {
            match h.feed(Datum::StepDay { date }) {
                Ok(_) => days_stepped += 1,
                Err(HarnessError::DivergenceDetected(d)) => {
                    halted = Some(d);
                    break 'days;
                }
                Err(e) => script_errors.push(format!("{date}: step: {e}")),
            }
        }
        for (i, a) in by_after.remove(&date).into_iter().flatten() {
            results.push(evaluate(h.primary(), i, a));
        }
        date = date.succ();
    }
    for (i, a) in by_after.into_values().flatten() {
        results.push(AssertionResult {
            after: a.after,
            label: label(i, a),
            passed: false,
            detail: "not evaluated: the run halted on replica divergence".into(),
        });
    }
    let engine = h.primary();
    let report = ScenarioReport {
        name: s.name.clone(),
        passed: halted.is_none() && script_errors.is_empty() && results.iter().all(|r| r.passed),
        digest: engine.journal().head_hex(),
        journal_len: engine.journal().len(),
        ledger_len: h.ledger().len(),
        replicas: h.replica_count(),
        days_stepped,
        results,
        script_errors,
        divergence: halted,
    };
    Ok(Run { report, harness: h })
}

fn apply_item(h: &mut Harness, item: &ScriptItem) -> Result<(), ItemError> {
    let command = match &item.action {
        ScriptAction::Observe(raw) => Command::Observe { observation: raw.clone() },
        ScriptAction::Fixing { source, value } => {
            Command::IngestFixing { fixing: RateFixing { source: source.clone(), date: item.date, value: *value } }
        }
        ScriptAction::Payment(p) => Command::IncomingPayment { payment: p.clone() },
        ScriptAction::Deposit { party, amount } => Command::DepositFunds { party: party.clone(), amount: *amount },
        ScriptAction::Cure { kind, party, by } => {
            let ev = h
                .primary()
                .events()
                .live()
                .find(|e| {
                    kind.as_ref().is_none_or(|k| &e.kind().label() == k)
                        && party.as_ref().is_none_or(|p| e.affected.contains(p))
                })
                .ok_or_else(|| ItemError::Script("cure: no live event matches".into()))?;
            Command::Cure { event_id: ev.event_id.clone(), by: by.clone() }
        }
        ScriptAction::Answer(sel) => {
            let open = h.consolidate_authorization()?;
            let req = open
                .iter()
                .map(|c| &c.request)
                .find(|r| request_matches(r, sel.addressee.as_ref(), sel.subject.as_deref(), sel.menu_contains.as_deref()))
                .ok_or_else(|| ItemError::Script("answer: no open request matches".into()))?;
            Command::Answer {
                request_id: req.request_id.clone(),
                party: sel.party.clone().unwrap_or_else(|| req.addressee.clone()),
                response: sel.response.clone(),
            }
        }
        ScriptAction::Control { control, by } => {
            h.feed(Datum::Control { control: control.clone(), by: by.clone() })?;
            return Ok(());
        }
        ScriptAction::AddTransaction(t) => Command::AddTransaction { transaction: t.clone() },
        ScriptAction::Retire { transaction_id, force } => {
            Command::RetireTransaction { transaction_id: transaction_id.clone(), force: force.clone() }
        }
        ScriptAction::Command(c) => c.clone(),
    };
    h.feed(Datum::Command { command })?;
    Ok(())
}

/// The serde tag of a request's subject, e.g. `interest_charge`.
pub fn subject_type(r: &PendingAuthorization) -> String {
    serde_json::to_value(&r.subject)
        .ok()
        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(String::from))
        .unwrap_or_default()
}

fn request_matches(r: &PendingAuthorization, addressee: Option<&PartyId>, subject: Option<&str>, menu: Option<&str>) -> bool {
    addressee.is_none_or(|a| &r.addressee == a)
        && subject.is_none_or(|s| subject_type(r) == s)
        && menu.is_none_or(|m| r.menu.iter().any(|x| x == m))
}

/// The serde tag of a journal payload, e.g. `charge_resolved`.
pub fn payload_type(p: &Payload) -> String {
    serde_json::to_value(p)
        .ok()
        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(String::from))
        .unwrap_or_default()
}

/// Amount each payment obligation was first journaled with.
pub fn journaled_amounts(entries: &[Entry]) -> BTreeMap<ObligationId, Money> {
    let mut out = BTreeMap::new();
    for e in entries {
        match &e.payload {
            Payload::ObligationsGenerated { payments, .. } => {
                for p in payments {
                    out.entry(p.obligation_id.clone()).or_insert(p.amount);
                }
            }
            Payload::ObligationCreated { obligation } => {
                out.entry(obligation.obligation_id.clone()).or_insert(obligation.amount);
            }
            Payload::Netted { net } => {
                out.entry(net.obligation_id.clone()).or_insert(net.amount);
            }
            _ => {}
        }
    }
    out
}

fn label(i: usize, a: &Assertion) -> String {
    a.label.clone().unwrap_or_else(|| format!("#{} {}", i + 1, a.check.name()))
}

fn expect_eq<T: PartialEq + std::fmt::Debug>(what: &str, got: T, want: T) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: expected {want:?}, got {got:?}"))
    }
}

fn expect_count(got: usize, want: Option<usize>) -> Result<(), String> {
    want.map_or(Ok(()), |w| expect_eq("count", got, w))
}

fn original_due(o: &PaymentObligation) -> CalendarDate {
    o.late_since.unwrap_or(o.due_date)
}

fn final_status(engine: &Engine, ob: &PaymentObligation) -> ObligationStatus {
    let mut o = ob;
    while let Some(next) = o.successor.as_ref().and_then(|n| engine.obligations().get(n)) {
        o = next;
    }
    o.status
}

fn evaluate(engine: &Engine, i: usize, a: &Assertion) -> AssertionResult {
    let outcome = check(engine, &a.check);
    AssertionResult {
        after: a.after,
        label: label(i, a),
        passed: outcome.is_ok(),
        detail: outcome.err().unwrap_or_default(),
    }
}

fn check(engine: &Engine, c: &Check) -> Result<(), String> {
    match c {
        Check::Payments { select, count, status, final_status: fin, amount, total, unchanged } => {
            let matched: Vec<&PaymentObligation> = engine
                .obligations()
                .values()
                .filter(|o| {
                    select.payer.as_ref().is_none_or(|p| &o.payer == p)
                        && select.payee.as_ref().is_none_or(|p| &o.payee == p)
                        && select.instance.as_ref().is_none_or(|t| o.instance_id.as_ref() == Some(t))
                        && select.origin.is_none_or(|g| o.origin == g)
                        && select.due_from.is_none_or(|d| original_due(o) >= d)
                        && select.due_to.is_none_or(|d| original_due(o) <= d)
                })
                .collect();
            expect_count(matched.len(), *count)?;
            if matched.is_empty() && (status.is_some() || fin.is_some() || amount.is_some()) {
                return Err("no payment obligation matches".into());
            }
            let journaled = journaled_amounts(engine.journal().entries());
            for o in &matched {
                let id = &o.obligation_id;
                if let Some(s) = status {
                    expect_eq(&format!("{id} status"), o.status, *s)?;
                }
                if let Some(s) = fin {
                    expect_eq(&format!("{id} final status"), final_status(engine, o), *s)?;
                }
                if let Some(m) = amount {
                    expect_eq(&format!("{id} amount"), o.amount, *m)?;
                }
                if *unchanged == Some(true) {
                    expect_eq(&format!("{id} amount against journal"), Some(o.amount), journaled.get(id).copied())?;
                }
            }
            if let Some(t) = total {
                let sum: i64 = matched.iter().filter(|o| o.amount.currency == t.currency).map(|o| o.amount.amount).sum();
                expect_eq("total", sum, t.amount)?;
            }
            Ok(())
        }
        Check::Deliveries { deliverer, count, status } => {
            let matched: Vec<_> = engine
                .deliveries()
                .values()
                .filter(|d| deliverer.as_ref().is_none_or(|p| &d.deliverer == p))
                .collect();
            expect_count(matched.len(), *count)?;
            for d in matched {
                if let Some(s) = status {
                    expect_eq(&format!("{} status", d.obligation_id), d.status, *s)?;
                }
            }
            Ok(())
        }
        Check::Events { kind, party, count, status, authorized } => {
            let matched: Vec<_> = engine
                .events()
                .records
                .values()
                .filter(|e| {
                    kind.as_ref().is_none_or(|k| &e.kind().label() == k)
                        && party.as_ref().is_none_or(|p| e.affected.contains(p))
                })
                .collect();
            expect_count(matched.len(), *count)?;
            for e in matched {
                if let Some(s) = status {
                    expect_eq(&format!("{} status", e.event_id), e.status, *s)?;
                }
                if let Some(a) = authorized {
                    expect_eq(&format!("{} authorized", e.event_id), e.authorized_by.is_some(), *a)?;
                }
            }
            Ok(())
        }
        Check::Authorizations { addressee, subject, open, count } => {
            let n = engine
                .authorizations()
                .values()
                .filter(|r| request_matches(r, addressee.as_ref(), subject.as_deref(), None))
                .filter(|r| open.is_none_or(|o| r.is_open() == o))
                .count();
            expect_eq("count", n, *count)
        }
        Check::Mode { mode } => expect_eq("mode", engine.mode(), *mode),
        Check::Instances { instance, count, state } => {
            let matched: Vec<_> = engine
                .instances()
                .values()
                .filter(|x| instance.as_ref().is_none_or(|t| &x.instance_id == t))
                .collect();
            if matched.is_empty() {
                return Err("no instance matches".into());
            }
            expect_count(matched.len(), *count)?;
            matched.iter().try_for_each(|x| expect_eq(&format!("{} state", x.instance_id), x.state, *state))
        }
        Check::Charges { status, count } => {
            let n = engine.charges().values().filter(|c| status.is_none_or(|s| c.status == s)).count();
            expect_eq("count", n, *count)
        }
        Check::Notices { from, nature, count } => {
            let n = engine
                .notices()
                .iter()
                .filter(|x| from.as_ref().is_none_or(|f| &x.from == f))
                .filter(|x| nature.as_ref().is_none_or(|k| x.nature.contains(k.as_str())))
                .count();
            expect_eq("count", n, *count)
        }
        Check::Withholdings { payer, count, withheld, gross_up } => {
            let records: Vec<_> = engine
                .journal()
                .entries()
                .iter()
                .filter_map(|e| match &e.payload {
                    Payload::Settlement { obligation_id, withholding: Some(w), .. } => Some((obligation_id, w)),
                    _ => None,
                })
                .filter(|(id, _)| {
                    payer.as_ref().is_none_or(|p| engine.obligations().get(*id).is_some_and(|o| &o.payer == p))
                })
                .collect();
            expect_count(records.len(), *count)?;
            if let Some(m) = withheld {
                let sum: i64 = records.iter().filter(|(_, w)| w.withheld.currency == m.currency).map(|(_, w)| w.withheld.amount).sum();
                expect_eq("withheld", sum, m.amount)?;
            }
            if let Some(g) = gross_up {
                for (id, w) in &records {
                    expect_eq(&format!("{id} gross-up"), w.gross_up_obligation.is_some(), *g)?;
                }
            }
            Ok(())
        }
        Check::Journal { entry, count, at_least } => {
            let n = engine.journal().entries().iter().filter(|e| &payload_type(&e.payload) == entry).count();
            expect_count(n, *count)?;
            match at_least {
                Some(m) if n < *m => Err(format!("{entry}: expected at least {m}, got {n}")),
                _ => Ok(()),
            }
        }
        Check::Balance { party, amount } => {
            let key = format!("{party}/{}", amount.currency);
            let got = engine.snapshot().balances.get(&key).copied();
            expect_eq(&format!("{key} balance"), got, Some(*amount))
        }
    }
}
