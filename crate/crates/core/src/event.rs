//! Observation → Determination → Action over the four event levels.
//!
//! Everything here is a pure function of its inputs; the engine journals the
//! results and applies them to [`EventBook`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{CalendarError, CalendarSet};
use crate::cashflow::TransactionId;
use crate::date::{add_calendar_days, CalendarDate};
use crate::money::{Currency, Money};
use crate::party::{IncorporationStatus, PartyId};

pub type EventId = String;
pub type ObservationId = String;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventError {
    #[error("event kind has no grace period")]
    NoGracePeriod,
    #[error("event {0} is not a termination event")]
    NotATerminationEvent(EventId),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    FailureToPayOrDeliver,
    CreditSupportDefault,
    CrossDefault,
    Bankruptcy,
    Illegality,
    ForceMajeure,
    CreditEventUponMerger,
    AdditionalTerminationEvent(String),
    AdditionalEventOfDefault(String),
}

impl EventKind {
    pub const STANDARD: [EventKind; 7] = [
        EventKind::FailureToPayOrDeliver,
        EventKind::CreditSupportDefault,
        EventKind::CrossDefault,
        EventKind::Bankruptcy,
        EventKind::Illegality,
        EventKind::ForceMajeure,
        EventKind::CreditEventUponMerger,
    ];

    pub fn class(&self) -> EventClass {
        match self {
            EventKind::FailureToPayOrDeliver
            | EventKind::CreditSupportDefault
            | EventKind::CrossDefault
            | EventKind::Bankruptcy
            | EventKind::AdditionalEventOfDefault(_) => EventClass::EventOfDefault,
            EventKind::Illegality
            | EventKind::ForceMajeure
            | EventKind::CreditEventUponMerger
            | EventKind::AdditionalTerminationEvent(_) => EventClass::TerminationEvent,
        }
    }

    pub fn label(&self) -> String {
        match self {
            EventKind::FailureToPayOrDeliver => "failure-to-pay-or-deliver".into(),
            EventKind::CreditSupportDefault => "credit-support-default".into(),
            EventKind::CrossDefault => "cross-default".into(),
            EventKind::Bankruptcy => "bankruptcy".into(),
            EventKind::Illegality => "illegality".into(),
            EventKind::ForceMajeure => "force-majeure".into(),
            EventKind::CreditEventUponMerger => "credit-event-upon-merger".into(),
            EventKind::AdditionalTerminationEvent(n) => format!("additional-termination-event:{n}"),
            EventKind::AdditionalEventOfDefault(n) => format!("additional-event-of-default:{n}"),
        }
    }

    pub fn from_label(s: &str) -> Option<EventKind> {
        if let Some(n) = s.strip_prefix("additional-termination-event:") {
            return Some(EventKind::AdditionalTerminationEvent(n.into()));
        }
        if let Some(n) = s.strip_prefix("additional-event-of-default:") {
            return Some(EventKind::AdditionalEventOfDefault(n.into()));
        }
        EventKind::STANDARD.into_iter().find(|k| k.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventClass {
    EventOfDefault,
    TerminationEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Grace {
    None,
    CalendarDays {
        #[serde(with = "crate::intstr")]
        days: u32,
    },
    /// `calendar: None` means the affected party's jurisdiction calendar.
    LocalBusinessDays {
        #[serde(with = "crate::intstr")]
        days: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        calendar: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub class: EventClass,
    pub grace: Grace,
    #[serde(default)]
    pub subjective: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Money>,
}

impl EventSpec {
    pub fn new(kind: EventKind, grace: Grace) -> Self {
        EventSpec {
            class: kind.class(),
            subjective: kind == EventKind::CreditEventUponMerger,
            kind,
            grace,
            threshold: None,
        }
    }
}

/// Grace deadline for an event first observed on `start`.
pub fn grace_deadline(
    spec: &EventSpec,
    start: CalendarDate,
    calendars: &CalendarSet,
    local_calendar: &str,
) -> Result<CalendarDate, EventError> {
    match &spec.grace {
        Grace::None => Err(EventError::NoGracePeriod),
        Grace::CalendarDays { days } => {
            add_calendar_days(start, *days).map_err(|_| EventError::NoGracePeriod)
        }
        Grace::LocalBusinessDays { days, calendar } => {
            let cal = calendars.get(calendar.as_deref().unwrap_or(local_calendar))?;
            Ok(cal.add_business_days(start, *days)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationLevel {
    Transaction,
    Relationship,
    ThirdParty,
    Exterior,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum ObservationSource {
    OnPlatform,
    Oracle,
    PartyNotice { party: PartyId },
}

/// External ingestion schema: `{kind, level?, party?, amount?, currency?, source, payload}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawObservation {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<ObservationLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party: Option<PartyId>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::intstr::option")]
    pub amount: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currency: Option<Currency>,
    pub source: String,
    /// Set by the gateway for party notices: the authenticated sender.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notifier: Option<PartyId>,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
}

impl RawObservation {
    pub fn new(kind: &str, source: &str) -> Self {
        RawObservation {
            kind: kind.into(),
            level: None,
            party: None,
            amount: None,
            currency: None,
            source: source.into(),
            notifier: None,
            payload: BTreeMap::new(),
        }
    }

    pub fn party(mut self, p: &str) -> Self {
        self.party = Some(p.into());
        self
    }

    pub fn money(mut self, m: Money) -> Self {
        self.amount = Some(m.amount);
        self.currency = Some(m.currency);
        self
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.payload.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", content = "value")]
pub enum ObservedKind {
    FailureToPayOrDeliver,
    CreditSupportDefault,
    ThirdPartyDefault,
    ThirdPartyDefaultResolved,
    Bankruptcy,
    Illegality,
    ForceMajeure,
    Merger,
    AdditionalTerminationEvent(String),
    AdditionalEventOfDefault(String),
    IncorporationStatus(IncorporationStatus),
    Unclassified(String),
}

impl ObservedKind {
    fn classify(raw: &RawObservation) -> ObservedKind {
        let name = raw.payload.get("name").cloned().unwrap_or_default();
        match raw.kind.as_str() {
            "failure-to-pay" | "failure-to-pay-or-deliver" => ObservedKind::FailureToPayOrDeliver,
            "credit-support-default" => ObservedKind::CreditSupportDefault,
            "third-party-default" | "cross-default" => ObservedKind::ThirdPartyDefault,
            "third-party-default-resolved" => ObservedKind::ThirdPartyDefaultResolved,
            "bankruptcy" => ObservedKind::Bankruptcy,
            "illegality" => ObservedKind::Illegality,
            "force-majeure" => ObservedKind::ForceMajeure,
            "merger" | "credit-event-upon-merger" => ObservedKind::Merger,
            "additional-termination-event" if !name.is_empty() => {
                ObservedKind::AdditionalTerminationEvent(name)
            }
            "additional-event-of-default" if !name.is_empty() => {
                ObservedKind::AdditionalEventOfDefault(name)
            }
            "incorporation-status" => match raw.payload.get("status").map(String::as_str) {
                Some("Valid") | Some("valid") => {
                    ObservedKind::IncorporationStatus(IncorporationStatus::Valid)
                }
                Some("Lapsed") | Some("lapsed") => {
                    ObservedKind::IncorporationStatus(IncorporationStatus::Lapsed)
                }
                _ => ObservedKind::IncorporationStatus(IncorporationStatus::Unknown),
            },
            other => ObservedKind::Unclassified(other.into()),
        }
    }

    pub fn default_level(&self) -> ObservationLevel {
        match self {
            ObservedKind::FailureToPayOrDeliver => ObservationLevel::Transaction,
            ObservedKind::CreditSupportDefault
            | ObservedKind::Bankruptcy
            | ObservedKind::Merger
            | ObservedKind::AdditionalTerminationEvent(_)
            | ObservedKind::AdditionalEventOfDefault(_)
            | ObservedKind::IncorporationStatus(_) => ObservationLevel::Relationship,
            ObservedKind::ThirdPartyDefault | ObservedKind::ThirdPartyDefaultResolved => {
                ObservationLevel::ThirdParty
            }
            ObservedKind::Illegality | ObservedKind::ForceMajeure | ObservedKind::Unclassified(_) => {
                ObservationLevel::Exterior
            }
        }
    }

    /// The contractual event this observation may constitute.
    pub fn event_kind(&self) -> Option<EventKind> {
        Some(match self {
            ObservedKind::FailureToPayOrDeliver => EventKind::FailureToPayOrDeliver,
            ObservedKind::CreditSupportDefault => EventKind::CreditSupportDefault,
            ObservedKind::ThirdPartyDefault => EventKind::CrossDefault,
            ObservedKind::Bankruptcy => EventKind::Bankruptcy,
            ObservedKind::Illegality => EventKind::Illegality,
            ObservedKind::ForceMajeure => EventKind::ForceMajeure,
            ObservedKind::Merger => EventKind::CreditEventUponMerger,
            ObservedKind::AdditionalTerminationEvent(n) => {
                EventKind::AdditionalTerminationEvent(n.clone())
            }
            ObservedKind::AdditionalEventOfDefault(n) => EventKind::AdditionalEventOfDefault(n.clone()),
            _ => return None,
        })
    }

    /// Kinds whose scope extends to a party's Specified Entities.
    fn reaches_specified_entities(&self) -> bool {
        matches!(
            self,
            ObservedKind::ThirdPartyDefault
                | ObservedKind::ThirdPartyDefaultResolved
                | ObservedKind::Bankruptcy
                | ObservedKind::Merger
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub observation_id: ObservationId,
    pub source: ObservationSource,
    pub level: ObservationLevel,
    pub kind: ObservedKind,
    /// The contracting party concerned, after Specified Entity mapping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party: Option<PartyId>,
    /// The entity named in the datum when it differs from `party`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<Money>,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
    #[serde(with = "crate::intstr")]
    pub observed_at: u64,
}

/// What `observe` needs to know about the agreement.
pub struct ObservationContext<'a> {
    pub parties: [&'a str; 2],
    pub specified_entities: &'a BTreeMap<PartyId, Vec<String>>,
}

/// Classifies and levels a raw datum. Never fails: unknown kinds become
/// `Unclassified` at the Exterior level.
pub fn observe(raw: &RawObservation, seq: u64, ctx: &ObservationContext<'_>) -> ObservationRecord {
    let kind = ObservedKind::classify(raw);
    let level = match (&kind, raw.level) {
        (ObservedKind::Unclassified(_), _) => ObservationLevel::Exterior,
        (_, Some(l)) => l,
        (k, None) => k.default_level(),
    };
    let source = match raw.source.as_str() {
        "on-platform" => ObservationSource::OnPlatform,
        "party-notice" => ObservationSource::PartyNotice {
            party: raw
                .notifier
                .clone()
                .or_else(|| raw.payload.get("notifying_party").cloned())
                .unwrap_or_default(),
        },
        _ => ObservationSource::Oracle,
    };
    let (party, subject) = match raw.party.as_deref() {
        None => (None, None),
        Some(p) if ctx.parties.contains(&p) => (Some(p.to_string()), None),
        Some(p) if kind.reaches_specified_entities() => {
            let owner = ctx
                .specified_entities
                .iter()
                .find(|(_, ents)| ents.iter().any(|e| e == p))
                .map(|(owner, _)| owner.clone());
            (owner, Some(p.to_string()))
        }
        Some(p) => (None, Some(p.to_string())),
    };
    let amount = match (raw.amount, raw.currency) {
        (Some(a), Some(c)) => Some(Money::new(c, a)),
        _ => None,
    };
    ObservationRecord {
        observation_id: format!("obs-{seq}"),
        source,
        level,
        kind,
        party,
        subject,
        amount,
        payload: raw.payload.clone(),
        observed_at: seq,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventStatus {
    PotentialPendingGrace,
    Occurred,
    Continuing,
    Cured,
    Superseded,
}

impl EventStatus {
    pub fn can_transition_to(self, to: EventStatus) -> bool {
        use EventStatus::*;
        matches!(
            (self, to),
            (PotentialPendingGrace, Occurred)
                | (PotentialPendingGrace, Cured)
                | (PotentialPendingGrace, Superseded)
                | (Occurred, Continuing)
                | (Occurred, Cured)
                | (Occurred, Superseded)
                | (Continuing, Cured)
                | (Continuing, Superseded)
        )
    }

    pub fn is_live(self) -> bool {
        matches!(self, Self::PotentialPendingGrace | Self::Occurred | Self::Continuing)
    }

    pub fn has_occurred(self) -> bool {
        matches!(self, Self::Occurred | Self::Continuing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CircumstanceScope {
    SingleParty,
    BothParties,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: EventId,
    pub spec: EventSpec,
    pub affected: BTreeSet<PartyId>,
    pub scope: CircumstanceScope,
    pub status: EventStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grace_deadline: Option<CalendarDate>,
    /// The observation whose circumstance gave rise to the event.
    pub circumstance: ObservationId,
    pub observations: Vec<ObservationId>,
    pub affected_transactions: Vec<TransactionId>,
    pub opened_on: CalendarDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occurred_on: Option<CalendarDate>,
    /// Payment obligation whose failure was observed on-platform, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obligation_id: Option<String>,
    /// Authorization that allowed a subjective event to be recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorized_by: Option<String>,
    #[serde(default)]
    pub acted: bool,
}

impl EventRecord {
    pub fn kind(&self) -> &EventKind {
        &self.spec.kind
    }

    pub fn class(&self) -> EventClass {
        self.spec.class
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThirdPartyDefault {
    pub reference: String,
    pub party: PartyId,
    pub amount: Money,
    pub resolved: bool,
}

/// References are scoped to the defaulting party.
pub fn default_key(party: &str, reference: &str) -> String {
    format!("{party}/{reference}")
}

/// Event state owned by the engine.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventBook {
    pub records: BTreeMap<EventId, EventRecord>,
    /// Keyed by [`default_key`].
    pub third_party_defaults: BTreeMap<String, ThirdPartyDefault>,
    pub minor_event_counts: BTreeMap<PartyId, u32>,
}

impl EventBook {
    pub fn get(&self, id: &str) -> Option<&EventRecord> {
        self.records.get(id)
    }

    pub fn live(&self) -> impl Iterator<Item = &EventRecord> {
        self.records.values().filter(|r| r.status.is_live())
    }

    fn live_of(&self, kind: &EventKind, party: &str) -> Option<&EventRecord> {
        self.live()
            .find(|r| r.kind() == kind && r.affected.contains(party))
    }

    pub fn third_party_default(&self, party: &str, reference: &str) -> Option<&ThirdPartyDefault> {
        self.third_party_defaults.get(&default_key(party, reference))
    }

    /// Unresolved Specified Indebtedness defaults recorded against `party`.
    pub fn cross_default_total(&self, party: &str, currency: Currency) -> i128 {
        self.third_party_defaults
            .values()
            .filter(|d| !d.resolved && d.party == party && d.amount.currency == currency)
            .map(|d| d.amount.amount as i128)
            .sum()
    }

    pub fn minor_count(&self, party: &str) -> u32 {
        self.minor_event_counts.get(party).copied().unwrap_or(0)
    }
}

/// A question that only a human may answer, with its closed menu.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizationQuestion {
    pub question: String,
    pub menu: Vec<String>,
    pub addressees: Vec<PartyId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Determination {
    NoEvent { reason: String },
    NewEventRecords { records: Vec<EventRecord> },
    UpdateExisting { event_id: EventId },
    AuthorizationRequired { request: AuthorizationQuestion },
}

pub const MENU_YES_TRIGGER: &str = "yes-trigger";
pub const MENU_NO: &str = "no";
pub const MENU_ACKNOWLEDGE: &str = "acknowledge";

/// Everything `determine` reads; it never mutates.
pub struct DeterminationContext<'a> {
    pub as_of: CalendarDate,
    pub parties: [&'a str; 2],
    pub specs: &'a [EventSpec],
    pub book: &'a EventBook,
    pub calendars: &'a CalendarSet,
    /// Calendar id for each party's Local Business Days.
    pub local_calendars: &'a BTreeMap<PartyId, String>,
    pub active_transactions: &'a [TransactionId],
}

impl DeterminationContext<'_> {
    fn spec(&self, kind: &EventKind) -> Option<&EventSpec> {
        self.specs.iter().find(|s| &s.kind == kind)
    }

    fn other(&self, party: &str) -> PartyId {
        if self.parties[0] == party {
            self.parties[1].to_string()
        } else {
            self.parties[0].to_string()
        }
    }

    fn both(&self) -> Vec<PartyId> {
        self.parties.iter().map(|p| p.to_string()).collect()
    }
}

fn ask(question: String, menu: &[&str], addressees: Vec<PartyId>) -> Determination {
    Determination::AuthorizationRequired {
        request: AuthorizationQuestion {
            question,
            menu: menu.iter().map(|m| m.to_string()).collect(),
            addressees,
        },
    }
}

fn payload_list(obs: &ObservationRecord, key: &str) -> Vec<String> {
    obs.payload
        .get(key)
        .map(|v| {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default()
}

/// Builds the record for `kind` arising from `obs`, computing its grace clock.
pub fn open_event(
    obs: &ObservationRecord,
    spec: &EventSpec,
    event_id: EventId,
    affected_party: &str,
    ctx: &DeterminationContext<'_>,
) -> Result<EventRecord, EventError> {
    let both = obs.payload.get("both").is_some_and(|v| v == "true")
        || (spec.kind == EventKind::ForceMajeure && obs.party.is_none());
    let scope = if both && spec.class == EventClass::TerminationEvent {
        CircumstanceScope::BothParties
    } else {
        CircumstanceScope::SingleParty
    };
    let (status, grace_deadline, occurred_on) = match spec.grace {
        Grace::None => (EventStatus::Occurred, None, Some(ctx.as_of)),
        _ => {
            let local = ctx
                .local_calendars
                .get(affected_party)
                .map(String::as_str)
                .unwrap_or("");
            let deadline = grace_deadline(spec, ctx.as_of, ctx.calendars, local)?;
            (EventStatus::PotentialPendingGrace, Some(deadline), None)
        }
    };
    let mut affected_transactions = payload_list(obs, "transactions");
    if affected_transactions.is_empty() && spec.class == EventClass::TerminationEvent {
        affected_transactions = ctx.active_transactions.to_vec();
    }
    Ok(EventRecord {
        event_id,
        spec: spec.clone(),
        affected: [affected_party.to_string()].into_iter().collect(),
        scope,
        status,
        grace_deadline,
        circumstance: obs.observation_id.clone(),
        observations: vec![obs.observation_id.clone()],
        affected_transactions,
        opened_on: ctx.as_of,
        occurred_on,
        obligation_id: obs.payload.get("obligation").cloned(),
        authorized_by: None,
        acted: false,
    })
}

/// Decides whether `obs` triggers, updates, or needs a human to judge an Event.
pub fn determine(obs: &ObservationRecord, ctx: &DeterminationContext<'_>) -> Determination {
    match &obs.kind {
        ObservedKind::Unclassified(tag) => {
            return ask(
                format!("unclassified observation {tag:?} ({}): review required", obs.observation_id),
                &[MENU_ACKNOWLEDGE],
                ctx.both(),
            );
        }
        ObservedKind::ThirdPartyDefaultResolved => {
            return Determination::NoEvent { reason: "third-party default marked resolved".into() };
        }
        ObservedKind::IncorporationStatus(IncorporationStatus::Valid) => {
            return Determination::NoEvent { reason: "incorporation confirmed valid".into() };
        }
        ObservedKind::IncorporationStatus(status) => {
            let party = obs.party.clone().unwrap_or_default();
            return ask(
                format!("incorporation status of {party} reported {status:?}: representation may be inaccurate"),
                &[MENU_ACKNOWLEDGE],
                vec![ctx.other(&party)],
            );
        }
        _ => {}
    }
    let Some(kind) = obs.kind.event_kind() else {
        return Determination::NoEvent { reason: "not an event-bearing observation".into() };
    };
    let Some(party) = obs.party.as_deref() else {
        return ask(
            format!("{} observation {} names no contracting party", kind.label(), obs.observation_id),
            &[MENU_ACKNOWLEDGE],
            ctx.both(),
        );
    };
    let Some(spec) = ctx.spec(&kind) else {
        return Determination::NoEvent { reason: format!("{} is not elected under this agreement", kind.label()) };
    };

    if kind == EventKind::CrossDefault {
        let Some(amount) = obs.amount else {
            return ask(
                format!("third-party default {} carries no amount", obs.observation_id),
                &[MENU_ACKNOWLEDGE],
                vec![ctx.other(party)],
            );
        };
        let threshold = spec.threshold.unwrap_or(Money::zero(amount.currency));
        if threshold.currency != amount.currency {
            return ask(
                format!("third-party default in {} cannot be compared with the {} threshold", amount.currency, threshold.currency),
                &[MENU_ACKNOWLEDGE],
                vec![ctx.other(party)],
            );
        }
        // a re-reported reference replaces its earlier amount
        let prior = obs
            .payload
            .get("reference")
            .and_then(|r| ctx.book.third_party_default(party, r))
            .filter(|d| !d.resolved && d.amount.currency == amount.currency)
            .map_or(0, |d| d.amount.amount as i128);
        let total = ctx.book.cross_default_total(party, amount.currency) - prior + amount.amount as i128;
        if total <= threshold.amount as i128 {
            return Determination::NoEvent {
                reason: format!("aggregate {total} does not exceed threshold {}", threshold.amount),
            };
        }
    }

    if let Some(existing) = ctx.book.live_of(&kind, party) {
        return Determination::UpdateExisting { event_id: existing.event_id.clone() };
    }

    if spec.subjective {
        return ask(
            subjective_question(&kind, party),
            &[MENU_YES_TRIGGER, MENU_NO],
            vec![ctx.other(party)],
        );
    }

    let mut kinds = vec![kind];
    for extra in payload_list(obs, "also") {
        if let Some(k) = EventKind::from_label(&extra) {
            if !kinds.contains(&k) && ctx.spec(&k).is_some() && !ctx.spec(&k).is_some_and(|s| s.subjective) {
                kinds.push(k);
            }
        }
    }
    let mut records = Vec::new();
    for (i, k) in kinds.iter().enumerate() {
        let spec = ctx.spec(k).expect("filtered above");
        match open_event(obs, spec, format!("ev-{}-{i}", obs.observed_at), party, ctx) {
            Ok(r) => records.push(r),
            Err(e) => {
                return ask(
                    format!("cannot compute grace period for {}: {e}", k.label()),
                    &[MENU_ACKNOWLEDGE],
                    ctx.both(),
                )
            }
        }
    }
    Determination::NewEventRecords { records }
}

pub fn subjective_question(kind: &EventKind, party: &str) -> String {
    match kind {
        EventKind::CreditEventUponMerger => {
            format!("credit-event-upon-merger: is the creditworthiness of the entity resulting from {party}'s merger materially weaker?")
        }
        other => format!("{}: does the circumstance affecting {party} constitute the event?", other.label()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraceBoundary {
    /// The deadline day itself remains available to cure.
    #[default]
    DeadlineDayCurable,
    LapseOnDeadline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTransition {
    pub event_id: EventId,
    pub from: EventStatus,
    pub to: EventStatus,
}

/// Grace lapses and Occurred→Continuing moves due on `as_of`.
pub fn tick(as_of: CalendarDate, book: &EventBook, boundary: GraceBoundary) -> Vec<EventTransition> {
    let mut out = Vec::new();
    for r in book.records.values() {
        match r.status {
            EventStatus::PotentialPendingGrace => {
                let Some(deadline) = r.grace_deadline else { continue };
                let lapsed = match boundary {
                    GraceBoundary::DeadlineDayCurable => deadline < as_of,
                    GraceBoundary::LapseOnDeadline => deadline <= as_of,
                };
                if lapsed {
                    out.push(EventTransition {
                        event_id: r.event_id.clone(),
                        from: r.status,
                        to: EventStatus::Occurred,
                    });
                }
            }
            EventStatus::Occurred if r.occurred_on.is_some_and(|d| d < as_of) => {
                out.push(EventTransition {
                    event_id: r.event_id.clone(),
                    from: r.status,
                    to: EventStatus::Continuing,
                });
            }
            _ => {}
        }
    }
    out
}

/// Hierarchy of Events: earlier kinds govern later ones arising
/// from the same circumstance. Unlisted kinds rank after listed ones,
/// Events of Default before other Termination Events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub precedence: Vec<EventKind>,
}

impl Default for Hierarchy {
    fn default() -> Self {
        Hierarchy {
            precedence: vec![
                EventKind::Illegality,
                EventKind::ForceMajeure,
                EventKind::Bankruptcy,
                EventKind::FailureToPayOrDeliver,
                EventKind::CreditSupportDefault,
                EventKind::CrossDefault,
                EventKind::CreditEventUponMerger,
            ],
        }
    }
}

impl Hierarchy {
    fn rank(&self, kind: &EventKind) -> (usize, u8) {
        match self.precedence.iter().position(|k| k == kind) {
            Some(i) => (i, 0),
            None => (
                self.precedence.len(),
                match kind.class() {
                    EventClass::EventOfDefault => 0,
                    EventClass::TerminationEvent => 1,
                },
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyOutcome {
    pub circumstance: ObservationId,
    pub governing: EventId,
    pub superseded: Vec<EventId>,
}

/// One governing event per circumstance; the rest are superseded.
/// Independent of input order.
pub fn resolve_hierarchy(concurrent: &[EventRecord], hierarchy: &Hierarchy) -> Vec<HierarchyOutcome> {
    let mut by_circumstance: BTreeMap<&str, Vec<&EventRecord>> = BTreeMap::new();
    for r in concurrent {
        by_circumstance.entry(r.circumstance.as_str()).or_default().push(r);
    }
    by_circumstance
        .into_iter()
        .map(|(circumstance, mut records)| {
            records.sort_by(|a, b| {
                hierarchy
                    .rank(a.kind())
                    .cmp(&hierarchy.rank(b.kind()))
                    .then_with(|| a.event_id.cmp(&b.event_id))
            });
            let mut superseded: Vec<EventId> =
                records[1..].iter().map(|r| r.event_id.clone()).collect();
            superseded.sort();
            superseded.dedup();
            HierarchyOutcome {
                circumstance: circumstance.to_string(),
                governing: records[0].event_id.clone(),
                superseded,
            }
        })
        .collect()
}

/// Marks both parties affected when a Termination Event's circumstance
/// applies to both of them.
pub fn record_dual_affected(event: &EventRecord, parties: [&str; 2]) -> Result<EventRecord, EventError> {
    if event.class() != EventClass::TerminationEvent {
        return Err(EventError::NotATerminationEvent(event.event_id.clone()));
    }
    let mut out = event.clone();
    if event.scope == CircumstanceScope::BothParties {
        out.affected = parties.iter().map(|p| p.to_string()).collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notice {
    pub event_id: EventId,
    pub from: PartyId,
    pub to: PartyId,
    pub nature: String,
    pub affected_transactions: Vec<TransactionId>,
}

/// Mandatory notices for an occurred Termination Event. Events of Default
/// carry no notice duty; Force Majeure obliges both parties.
pub fn emit_notice(event: &EventRecord, parties: [&str; 2]) -> Vec<Notice> {
    if event.class() != EventClass::TerminationEvent || !event.status.has_occurred() {
        return Vec::new();
    }
    let senders: Vec<&str> = if *event.kind() == EventKind::ForceMajeure {
        parties.to_vec()
    } else {
        parties.iter().copied().filter(|p| event.affected.contains(*p)).collect()
    };
    senders
        .into_iter()
        .map(|from| {
            let to = if from == parties[0] { parties[1] } else { parties[0] };
            Notice {
                event_id: event.event_id.clone(),
                from: from.into(),
                to: to.into(),
                nature: event.kind().label(),
                affected_transactions: event.affected_transactions.clone(),
            }
        })
        .collect()
}

pub const MENU_SUSPEND: &str = "suspend";
pub const MENU_IGNORE: &str = "ignore";
pub const MENU_TERMINATE: &str = "terminate-relationship";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MenuAction {
    Suspend,
    Ignore,
    TerminateRelationship,
}

impl MenuAction {
    pub fn as_str(self) -> &'static str {
        match self {
            MenuAction::Suspend => MENU_SUSPEND,
            MenuAction::Ignore => MENU_IGNORE,
            MenuAction::TerminateRelationship => MENU_TERMINATE,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            MENU_SUSPEND => Some(Self::Suspend),
            MENU_IGNORE => Some(Self::Ignore),
            MENU_TERMINATE => Some(Self::TerminateRelationship),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum PolicyChoice {
    EscalateToHuman,
    PreProgrammed { action: MenuAction },
    Suspend,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub kind: EventKind,
    /// The party on whose behalf the rule acts (the non-affected side).
    pub party: PartyId,
    pub choice: PolicyChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPolicy {
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
    /// Kinds counted toward the escalation threshold.
    pub minor_kinds: Vec<EventKind>,
    /// Once this many minor events stand recorded against a party, "ignore"
    /// leaves the menu for further events against it.
    #[serde(with = "crate::intstr")]
    pub escalation_threshold: u32,
}

impl Default for ActionPolicy {
    fn default() -> Self {
        ActionPolicy {
            rules: Vec::new(),
            minor_kinds: vec![
                EventKind::FailureToPayOrDeliver,
                EventKind::CreditSupportDefault,
                EventKind::CrossDefault,
            ],
            escalation_threshold: 3,
        }
    }
}

impl ActionPolicy {
    fn choice(&self, kind: &EventKind, party: &str) -> PolicyChoice {
        self.rules
            .iter()
            .find(|r| &r.kind == kind && r.party == party)
            .map(|r| r.choice.clone())
            .unwrap_or(PolicyChoice::EscalateToHuman)
    }

    pub fn is_minor(&self, kind: &EventKind) -> bool {
        self.minor_kinds.contains(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Action {
    SuspendPayments { event_id: EventId, by: PartyId, against: PartyId },
    RequestAuthorization { event_id: EventId, addressee: PartyId, question: String, menu: Vec<String> },
    RecordOnly { event_id: EventId, by: PartyId },
    DesignateEarlyTermination { event_id: EventId, by: PartyId },
    AutomaticEarlyTermination { event_id: EventId },
}

/// The response to an occurred event under `policy`.
///
/// `minor_count` is the number of minor events already recorded against the
/// affected party.
pub fn act(
    event: &EventRecord,
    policy: &ActionPolicy,
    parties: [&str; 2],
    automatic_early_termination: bool,
    minor_count: u32,
) -> Vec<Action> {
    if !event.status.has_occurred() {
        return Vec::new();
    }
    if *event.kind() == EventKind::Bankruptcy && automatic_early_termination {
        return vec![Action::AutomaticEarlyTermination { event_id: event.event_id.clone() }];
    }
    let hardened = minor_count >= policy.escalation_threshold;
    let menu: Vec<String> = [MenuAction::Suspend, MenuAction::Ignore, MenuAction::TerminateRelationship]
        .into_iter()
        .filter(|a| !(hardened && *a == MenuAction::Ignore))
        .map(|a| a.as_str().to_string())
        .collect();
    let deciders: Vec<&str> = if event.affected.len() >= 2 {
        parties.to_vec()
    } else {
        parties.iter().copied().filter(|p| !event.affected.contains(*p)).collect()
    };
    let against = event.affected.iter().next().cloned().unwrap_or_default();
    let request = |party: &str| Action::RequestAuthorization {
        event_id: event.event_id.clone(),
        addressee: party.to_string(),
        question: format!(
            "{} has occurred affecting {}: choose a response",
            event.kind().label(),
            event.affected.iter().cloned().collect::<Vec<_>>().join(" and ")
        ),
        menu: menu.clone(),
    };
    deciders
        .into_iter()
        .map(|party| {
            let choice = if event.spec.subjective {
                PolicyChoice::EscalateToHuman
            } else {
                policy.choice(event.kind(), party)
            };
            let pre = match choice {
                PolicyChoice::EscalateToHuman => return request(party),
                PolicyChoice::Suspend => MenuAction::Suspend,
                PolicyChoice::Ignore => MenuAction::Ignore,
                PolicyChoice::PreProgrammed { action } => action,
            };
            if !menu.iter().any(|m| m == pre.as_str()) {
                return request(party);
            }
            match pre {
                MenuAction::Suspend => Action::SuspendPayments {
                    event_id: event.event_id.clone(),
                    by: party.to_string(),
                    against: against.clone(),
                },
                MenuAction::Ignore => Action::RecordOnly { event_id: event.event_id.clone(), by: party.to_string() },
                MenuAction::TerminateRelationship => Action::DesignateEarlyTermination {
                    event_id: event.event_id.clone(),
                    by: party.to_string(),
                },
            }
        })
        .collect()
}
