//! The lifecycle engine: a deterministic state machine driven by commands,
//! control directives and day steps, journaling every state change.
//!
//! Inputs are `Genesis`, `CommandQueued`, `Control` and `DayStep` entries;
//! everything else in the journal is derived. Replaying the inputs into a
//! fresh engine regenerates the journal byte for byte.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::CalendarSet;
use crate::canonical::{content_id, to_hex, Hash32};
use crate::cashflow::{
    generate, CashflowError, DeliveryObligation, FixingAck, FixingStore, GenerationContext, LegRate,
    ObligationId, ObligationOrigin, ObligationStatus, PaymentObligation, RateFixing, RateSourceId, Rounding,
    TransactionId,
};
use crate::date::CalendarDate;
use crate::event::{
    act, determine, emit_notice, observe, open_event, record_dual_affected, resolve_hierarchy, tick, Action,
    ActionPolicy, Determination, DeterminationContext, EventBook, EventClass, EventId, EventRecord, EventSpec,
    EventStatus, GraceBoundary, Hierarchy, HierarchyOutcome, Notice, ObservationContext, ObservationId,
    default_key, ObservationRecord, ObservedKind, RawObservation, ThirdPartyDefault, MENU_ACKNOWLEDGE, MENU_IGNORE,
    MENU_SUSPEND, MENU_TERMINATE, MENU_YES_TRIGGER,
};
use crate::journal::{verify_entries, EntryKind, Journal, JournalEntry, JournalError};
use crate::money::{Currency, Money};
use crate::netting::{net_day, GroupId, NetObligation, NettingBook, NettingError};
use crate::party::{Party, PartyId};
use crate::product::ProductRegistry;
use crate::rate::Rate;
use crate::settlement::{
    accrue_default_interest, apply_withholding, check_condition_precedent, cure, match_incoming, settle,
    Accounts, ChargeStatus, ConditionPrecedent, DischargeReport, IncomingPayment, InterestCharge,
    SettlementOutcome, SuspensionLedger,
};
use crate::template::{
    apply_schedule, instantiate, terms, AgreementTemplate, Confirmation, ContractInstance, InstanceState,
    MasterTemplate, ScheduleElections, TemplateError, ValidationStatus,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("date {requested} is not after the last stepped date {last}")]
    OutOfOrderDate { last: CalendarDate, requested: CalendarDate },
    #[error("engine is stopped")]
    Stopped,
    #[error("engine is already stopped")]
    AlreadyStopped,
    #[error("invalid genesis: {0}")]
    InvalidGenesis(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Netting(#[from] NettingError),
    #[error(transparent)]
    Cashflow(#[from] CashflowError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("journal is empty")]
    EmptyJournal,
    #[error("replay diverged at seq {seq}")]
    ReplayDiverged { seq: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum AnswerError {
    #[error("unknown authorization request {0}")]
    UnknownRequest(String),
    #[error("request {request} is addressed to {addressee}, not {party}")]
    WrongParty { request: String, addressee: PartyId, party: PartyId },
    #[error("request {0} is already answered")]
    AlreadyAnswered(String),
    #[error("{response:?} is not in the menu {menu:?}")]
    NotInMenu { response: String, menu: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionSpec {
    pub product_template: String,
    pub confirmation: Confirmation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountSpec {
    pub party: PartyId,
    pub balance: Money,
}

/// Everything needed to start an engine; the first journal entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genesis {
    pub agreement_id: String,
    pub master: MasterTemplate,
    pub elections: ScheduleElections,
    pub parties: Vec<Party>,
    pub calendars: CalendarSet,
    #[serde(default)]
    pub transactions: Vec<TransactionSpec>,
    #[serde(default)]
    pub accounts: Vec<AccountSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "command")]
pub enum Command {
    IngestFixing { fixing: RateFixing },
    Observe { observation: RawObservation },
    Cure {
        event_id: EventId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        by: Option<PartyId>,
    },
    IncomingPayment { payment: IncomingPayment },
    Answer { request_id: String, party: PartyId, response: String },
    AddTransaction { transaction: TransactionSpec },
    RetireTransaction {
        transaction_id: TransactionId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        force: Option<String>,
    },
    DepositFunds { party: PartyId, amount: Money },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "directive")]
pub enum ControlCommand {
    Pause,
    Resume,
    Stop { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineMode {
    Running,
    Paused,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum DeadlinePolicy {
    /// Waits for the answer forever, with a reminder entry every day.
    BlockIndefinitely,
    RemindEvery {
        #[serde(with = "crate::intstr")]
        days: u32,
    },
}

impl DeadlinePolicy {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "block-indefinitely" {
            return Some(DeadlinePolicy::BlockIndefinitely);
        }
        let days = s.strip_prefix("remind-every:")?.parse().ok()?;
        (days > 0).then_some(DeadlinePolicy::RemindEvery { days })
    }

    fn interval(self) -> i64 {
        match self {
            DeadlinePolicy::BlockIndefinitely => 1,
            DeadlinePolicy::RemindEvery { days } => days as i64,
        }
    }
}

/// What an authorization decides once answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum AuthorizationSubject {
    EventAction { event_id: EventId },
    SubjectiveDetermination { observation_id: ObservationId },
    InterestCharge { charge_id: String },
    DeferredPayment { obligation_id: ObligationId },
    RateDisruption { source: RateSourceId, date: CalendarDate },
    Acknowledge { observation_id: ObservationId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum AuthorizationStatus {
    Open,
    Answered {
        response: String,
        responder: PartyId,
        #[serde(with = "crate::intstr")]
        seq: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingAuthorization {
    pub request_id: String,
    pub addressee: PartyId,
    pub question: String,
    pub menu: Vec<String>,
    #[serde(with = "crate::intstr")]
    pub created_seq: u64,
    pub created_on: CalendarDate,
    pub deadline_policy: DeadlinePolicy,
    pub subject: AuthorizationSubject,
    pub status: AuthorizationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_reminded: Option<CalendarDate>,
}

impl PendingAuthorization {
    pub fn is_open(&self) -> bool {
        self.status == AuthorizationStatus::Open
    }
}

pub const MENU_APPLY: &str = "apply";
pub const MENU_WAIVE: &str = "waive";
pub const MENU_RETRY: &str = "retry";
pub const MENU_AWAIT: &str = "await-payment";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithholdingRecord {
    pub obligation_id: ObligationId,
    pub rule_id: String,
    pub jurisdiction: String,
    pub rate: Rate,
    pub payee_connected: bool,
    pub gross: Money,
    pub withheld: Money,
    pub net_paid: Money,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gross_up_obligation: Option<ObligationId>,
    pub nature: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Payload {
    Genesis {
        genesis: Genesis,
    },
    CommandQueued {
        command: Command,
    },
    CommandRejected {
        #[serde(with = "crate::intstr")]
        command_seq: u64,
        reason: String,
    },
    Control {
        control: ControlCommand,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        by: Option<PartyId>,
        mode: EngineMode,
    },
    DayStep {
        date: CalendarDate,
        performed: bool,
    },
    FixingIngested {
        fixing: RateFixing,
        ack: FixingAck,
    },
    FundsDeposited {
        party: PartyId,
        amount: Money,
    },
    TransactionAdded {
        instance_id: TransactionId,
        groups: Vec<GroupId>,
    },
    TransactionRetired {
        instance_id: TransactionId,
        groups: Vec<GroupId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        forced: Option<String>,
    },
    Observed {
        record: ObservationRecord,
    },
    Determined {
        observation_id: ObservationId,
        determination: Determination,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        authorized_by: Option<String>,
    },
    EventUpdated {
        event_id: EventId,
        observation_id: ObservationId,
    },
    EventTransition {
        event_id: EventId,
        from: EventStatus,
        to: EventStatus,
        reason: String,
    },
    HierarchyResolved {
        outcome: HierarchyOutcome,
    },
    ObligationsGenerated {
        payments: Vec<PaymentObligation>,
        deliveries: Vec<DeliveryObligation>,
    },
    ObligationCreated {
        obligation: PaymentObligation,
    },
    Netted {
        net: NetObligation,
    },
    ObligationTransition {
        obligation_id: ObligationId,
        from: ObligationStatus,
        to: ObligationStatus,
        reason: String,
    },
    Settlement {
        obligation_id: ObligationId,
        outcome: SettlementOutcome,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amount: Option<Money>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        withholding: Option<WithholdingRecord>,
    },
    SuspensionExtended {
        obligation_id: ObligationId,
        events: Vec<EventId>,
    },
    IncomingMatched {
        report: DischargeReport,
    },
    CreditApplied {
        obligation_id: ObligationId,
        amount: Money,
    },
    ChargeProposed {
        charge: InterestCharge,
    },
    ChargeResolved {
        charge_id: String,
        status: ChargeStatus,
    },
    AuthorizationRequested {
        request: PendingAuthorization,
    },
    AuthorizationAnswered {
        request_id: String,
        party: PartyId,
        response: String,
        /// False when the subject was no longer live; the answer is kept but
        /// has no effect.
        effective: bool,
    },
    AuthorizationReminder {
        request_id: String,
    },
    NoticeIssued {
        notice: Notice,
    },
    ActionTaken {
        action: Action,
    },
    InstanceTransition {
        instance_id: TransactionId,
        from: InstanceState,
        to: InstanceState,
        reason: String,
    },
}

impl Payload {
    pub fn kind(&self) -> EntryKind {
        use Payload::*;
        match self {
            Genesis { .. } | CommandQueued { .. } | CommandRejected { .. } | FundsDeposited { .. }
            | TransactionAdded { .. } | TransactionRetired { .. } => EntryKind::Command,
            Control { .. } | DayStep { .. } => EntryKind::Control,
            FixingIngested { .. } | Observed { .. } => EntryKind::Observation,
            Determined { .. } | EventUpdated { .. } | EventTransition { .. } | HierarchyResolved { .. } => {
                EntryKind::Determination
            }
            ObligationsGenerated { .. } | ObligationCreated { .. } | Netted { .. } | ObligationTransition { .. }
            | Settlement { .. } | SuspensionExtended { .. } | IncomingMatched { .. } | CreditApplied { .. }
            | ChargeProposed { .. } | ChargeResolved { .. } => EntryKind::Settlement,
            AuthorizationRequested { .. } | AuthorizationAnswered { .. } | AuthorizationReminder { .. } => {
                EntryKind::Authorization
            }
            NoticeIssued { .. } | ActionTaken { .. } | InstanceTransition { .. } => EntryKind::Action,
        }
    }

    /// Entries that replay feeds back into the engine.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Payload::Genesis { .. } | Payload::CommandQueued { .. } | Payload::Control { .. } | Payload::DayStep { .. }
        )
    }
}

pub type Entry = JournalEntry<Payload>;

/// Agreement-wide settings resolved from the term table once at genesis.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Settings {
    aet: bool,
    default_rate: Rate,
    metavante: bool,
    gross_up: bool,
    boundary: GraceBoundary,
    policy: ActionPolicy,
    hierarchy: Hierarchy,
    deadline: DeadlinePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementRecord {
    pub obligation_id: ObligationId,
    pub outcome: SettlementOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayReport {
    pub date: CalendarDate,
    pub performed: bool,
    pub nets: Vec<NetObligation>,
    pub settlements: Vec<SettlementRecord>,
    #[serde(with = "crate::intstr")]
    pub first_seq: u64,
    #[serde(with = "crate::intstr")]
    pub last_seq: u64,
}

/// Consistent read of engine state at one journal position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    #[serde(with = "crate::intstr")]
    pub seq: u64,
    pub digest: String,
    pub mode: EngineMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_date: Option<CalendarDate>,
    pub agreement_id: String,
    pub parties: Vec<Party>,
    pub instances: Vec<ContractInstance>,
    pub obligations: Vec<PaymentObligation>,
    pub deliveries: Vec<DeliveryObligation>,
    pub nets: Vec<NetObligation>,
    pub events: Vec<EventRecord>,
    pub suspensions: BTreeMap<ObligationId, Vec<EventId>>,
    pub charges: Vec<InterestCharge>,
    pub authorizations: Vec<PendingAuthorization>,
    pub notices: Vec<Notice>,
    pub balances: BTreeMap<String, Money>,
    pub credits: BTreeMap<String, Money>,
    pub queued_commands: Vec<QueuedCommand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedCommand {
    #[serde(with = "crate::intstr")]
    pub seq: u64,
    pub command: Command,
}

#[derive(Debug, Clone)]
pub struct Engine {
    registry: ProductRegistry,
    genesis: Genesis,
    agreement: AgreementTemplate,
    settings: Settings,
    journal: Journal<Payload>,
    mode: EngineMode,
    stop_reason: Option<String>,
    rounding: Rounding,
    last_date: Option<CalendarDate>,
    queue: VecDeque<QueuedCommand>,
    instances: BTreeMap<TransactionId, ContractInstance>,
    retired: BTreeSet<TransactionId>,
    netting: NettingBook,
    fixings: FixingStore,
    obligations: BTreeMap<ObligationId, PaymentObligation>,
    deliveries: BTreeMap<ObligationId, DeliveryObligation>,
    nets: BTreeMap<ObligationId, NetObligation>,
    observations: BTreeMap<ObservationId, ObservationRecord>,
    events: EventBook,
    suspensions: SuspensionLedger,
    charges: BTreeMap<String, InterestCharge>,
    authorizations: BTreeMap<String, PendingAuthorization>,
    notices: Vec<Notice>,
    accounts: Accounts,
    credits: BTreeMap<String, Money>,
    /// Obligations settled late during the current step, for interest.
    paid_late: Vec<ObligationId>,
}

fn credit_key(party: &str, currency: Currency) -> String {
    format!("{party}/{currency}")
}

fn settings(a: &AgreementTemplate) -> Result<Settings, TemplateError> {
    let deadline_raw = a.term(terms::AUTHORIZATION_DEADLINE).map(|t| t.value).unwrap_or_default();
    let deadline = DeadlinePolicy::parse(&deadline_raw).ok_or_else(|| TemplateError::InvalidTerm {
        name: terms::AUTHORIZATION_DEADLINE.into(),
        value: deadline_raw.clone(),
        reason: "expected block-indefinitely or remind-every:N".into(),
    })?;
    let mut policy = a.elections.action_policy.clone();
    policy.escalation_threshold = a.u32_term(terms::ESCALATION_THRESHOLD)?;
    Ok(Settings {
        aet: a.bool_term(terms::AUTOMATIC_EARLY_TERMINATION)?,
        default_rate: a.rate_term(terms::DEFAULT_INTEREST_RATE)?,
        metavante: a.bool_term(terms::METAVANTE_MODE)?,
        gross_up: a.bool_term(terms::GROSS_UP)?,
        boundary: a.grace_boundary()?,
        policy,
        hierarchy: a.hierarchy(),
        deadline,
    })
}

impl Engine {
    pub fn new(genesis: Genesis) -> Result<Self, EngineError> {
        Self::with_registry(genesis, ProductRegistry::standard())
    }

    pub fn with_registry(genesis: Genesis, registry: ProductRegistry) -> Result<Self, EngineError> {
        let agreement = apply_schedule(&genesis.master, &genesis.elections, &genesis.parties)?;
        if let ValidationStatus::Incomplete(missing) = &agreement.validation {
            return Err(TemplateError::UnresolvedPlaceholder(missing.clone()).into());
        }
        for p in &genesis.parties {
            let cal = genesis.elections.local_calendars.get(&p.party_id).ok_or_else(|| {
                EngineError::InvalidGenesis(format!("no local business day calendar for {}", p.party_id))
            })?;
            genesis
                .calendars
                .get(cal)
                .map_err(|e| EngineError::InvalidGenesis(format!("{e}")))?;
        }
        let settings = settings(&agreement)?;
        let mut netting = NettingBook::new(agreement.netting_mode()?, genesis.elections.netting_groups.clone())?;
        let mut instances = BTreeMap::new();
        for t in &genesis.transactions {
            let i = instantiate(&agreement, &t.confirmation, &t.product_template, &registry)?;
            if instances.contains_key(&i.instance_id) {
                return Err(EngineError::InvalidGenesis(format!("duplicate transaction {}", i.instance_id)));
            }
            netting.register(&i.instance_id);
            instances.insert(i.instance_id.clone(), i);
        }
        let mut accounts = Accounts::default();
        for a in &genesis.accounts {
            accounts.open(&a.party, a.balance);
        }
        let mut engine = Engine {
            registry,
            genesis: genesis.clone(),
            agreement,
            settings,
            journal: Journal::new(),
            mode: EngineMode::Running,
            stop_reason: None,
            rounding: Rounding::HalfAwayFromZero,
            last_date: None,
            queue: VecDeque::new(),
            instances,
            retired: BTreeSet::new(),
            netting,
            fixings: FixingStore::new(),
            obligations: BTreeMap::new(),
            deliveries: BTreeMap::new(),
            nets: BTreeMap::new(),
            observations: BTreeMap::new(),
            events: EventBook::default(),
            suspensions: SuspensionLedger::default(),
            charges: BTreeMap::new(),
            authorizations: BTreeMap::new(),
            notices: Vec::new(),
            accounts,
            credits: BTreeMap::new(),
            paid_late: Vec::new(),
        };
        engine.log(Payload::Genesis { genesis });
        Ok(engine)
    }

    /// Fault injection: changes how period amounts are rounded.
    pub fn set_rounding(&mut self, rounding: Rounding) {
        self.rounding = rounding;
    }

    fn log(&mut self, payload: Payload) -> u64 {
        let kind = payload.kind();
        self.journal.append(kind, payload).seq
    }

    fn parties(&self) -> [&str; 2] {
        self.agreement.party_ids()
    }

    // ---- queries ----

    pub fn journal(&self) -> &Journal<Payload> {
        &self.journal
    }

    pub fn head_digest(&self) -> Hash32 {
        self.journal.head()
    }

    pub fn mode(&self) -> EngineMode {
        self.mode
    }

    pub fn last_date(&self) -> Option<CalendarDate> {
        self.last_date
    }

    pub fn genesis(&self) -> &Genesis {
        &self.genesis
    }

    pub fn agreement(&self) -> &AgreementTemplate {
        &self.agreement
    }

    pub fn instances(&self) -> &BTreeMap<TransactionId, ContractInstance> {
        &self.instances
    }

    pub fn obligations(&self) -> &BTreeMap<ObligationId, PaymentObligation> {
        &self.obligations
    }

    pub fn deliveries(&self) -> &BTreeMap<ObligationId, DeliveryObligation> {
        &self.deliveries
    }

    pub fn nets(&self) -> &BTreeMap<ObligationId, NetObligation> {
        &self.nets
    }

    pub fn events(&self) -> &EventBook {
        &self.events
    }

    pub fn suspensions(&self) -> &SuspensionLedger {
        &self.suspensions
    }

    pub fn charges(&self) -> &BTreeMap<String, InterestCharge> {
        &self.charges
    }

    pub fn authorizations(&self) -> &BTreeMap<String, PendingAuthorization> {
        &self.authorizations
    }

    pub fn pending_authorizations(&self) -> impl Iterator<Item = &PendingAuthorization> {
        self.authorizations.values().filter(|a| a.is_open())
    }

    pub fn notices(&self) -> &[Notice] {
        &self.notices
    }

    pub fn queued(&self) -> impl Iterator<Item = &QueuedCommand> {
        self.queue.iter()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            seq: self.journal.len() as u64,
            digest: self.journal.head_hex(),
            mode: self.mode,
            stop_reason: self.stop_reason.clone(),
            last_date: self.last_date,
            agreement_id: self.genesis.agreement_id.clone(),
            parties: self.agreement.parties.clone(),
            instances: self.instances.values().cloned().collect(),
            obligations: self.obligations.values().cloned().collect(),
            deliveries: self.deliveries.values().cloned().collect(),
            nets: self.nets.values().cloned().collect(),
            events: self.events.records.values().cloned().collect(),
            suspensions: self
                .suspensions
                .obligations()
                .map(|o| (o.clone(), self.suspensions.events_for(o)))
                .collect(),
            charges: self.charges.values().cloned().collect(),
            authorizations: self.authorizations.values().cloned().collect(),
            notices: self.notices.clone(),
            balances: self.accounts.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            credits: self.credits.clone(),
            queued_commands: self.queue.iter().cloned().collect(),
        }
    }

    /// Checks an answer against the request and anything already queued.
    pub fn check_answer(&self, request_id: &str, party: &str, response: &str) -> Result<(), AnswerError> {
        let req = self
            .authorizations
            .get(request_id)
            .ok_or_else(|| AnswerError::UnknownRequest(request_id.into()))?;
        if req.addressee != party {
            return Err(AnswerError::WrongParty {
                request: request_id.into(),
                addressee: req.addressee.clone(),
                party: party.into(),
            });
        }
        let queued = self
            .queue
            .iter()
            .any(|q| matches!(&q.command, Command::Answer { request_id: r, .. } if r == request_id));
        if !req.is_open() || queued {
            return Err(AnswerError::AlreadyAnswered(request_id.into()));
        }
        if !req.menu.iter().any(|m| m == response) {
            return Err(AnswerError::NotInMenu { response: response.into(), menu: req.menu.clone() });
        }
        Ok(())
    }

    // ---- inputs ----

    /// Journals a command; it takes effect at the next day step.
    pub fn submit(&mut self, command: Command) -> Result<u64, EngineError> {
        if self.mode == EngineMode::Stopped {
            return Err(EngineError::Stopped);
        }
        let seq = self.log(Payload::CommandQueued { command: command.clone() });
        self.queue.push_back(QueuedCommand { seq, command });
        Ok(seq)
    }

    /// Pause, resume and stop take effect immediately.
    pub fn control(&mut self, control: ControlCommand, by: Option<PartyId>) -> Result<EngineMode, EngineError> {
        if self.mode == EngineMode::Stopped {
            return Err(EngineError::AlreadyStopped);
        }
        let (mode, inst_from, inst_to) = match &control {
            ControlCommand::Pause => (EngineMode::Paused, InstanceState::Active, InstanceState::Paused),
            ControlCommand::Resume => (EngineMode::Running, InstanceState::Paused, InstanceState::Active),
            ControlCommand::Stop { reason } => {
                self.stop_reason = Some(reason.clone());
                (EngineMode::Stopped, InstanceState::Active, InstanceState::Stopped)
            }
        };
        self.mode = mode;
        for i in self.instances.values_mut() {
            if i.state == inst_from || (mode == EngineMode::Stopped && i.state == InstanceState::Paused) {
                i.state = inst_to;
            }
        }
        self.log(Payload::Control { control, by, mode });
        Ok(mode)
    }

    pub fn step_day(&mut self, date: CalendarDate) -> Result<DayReport, EngineError> {
        if self.mode == EngineMode::Stopped {
            return Err(EngineError::Stopped);
        }
        if let Some(last) = self.last_date {
            if date <= last {
                return Err(EngineError::OutOfOrderDate { last, requested: date });
            }
        }
        let performed = self.mode == EngineMode::Running;
        let first_seq = self.log(Payload::DayStep { date, performed });
        self.last_date = Some(date);
        let mut report = DayReport { date, performed, nets: vec![], settlements: vec![], first_seq, last_seq: first_seq };
        if !performed {
            return Ok(report);
        }
        self.paid_late.clear();
        while let Some(q) = self.queue.pop_front() {
            if let Err(reason) = self.apply_command(q.command, date) {
                self.log(Payload::CommandRejected { command_seq: q.seq, reason });
            }
        }
        self.generate_stage(date)?;
        self.tick_stage(date);
        report.nets = self.netting_stage(date)?;
        report.settlements = self.settlement_stage(date)?;
        self.interest_stage(date);
        self.action_stage(date);
        self.reminder_stage(date);
        report.last_seq = self.journal.len() as u64;
        Ok(report)
    }

    // ---- commands ----

    fn apply_command(&mut self, command: Command, date: CalendarDate) -> Result<(), String> {
        match command {
            Command::IngestFixing { fixing } => {
                let ack = self.fixings.ingest(&fixing).map_err(|e| e.to_string())?;
                self.log(Payload::FixingIngested { fixing, ack });
            }
            Command::Observe { observation } => self.process_observation(&observation, date),
            Command::Cure { event_id, .. } => self.cure_event(&event_id, date, "cure").map_err(|e| e.to_string())?,
            Command::IncomingPayment { payment } => self.incoming(payment, date)?,
            Command::Answer { request_id, party, response } => {
                self.check_answer(&request_id, &party, &response).map_err(|e| e.to_string())?;
                self.answer(&request_id, &party, &response, date);
            }
            Command::AddTransaction { transaction } => {
                let i = instantiate(
                    &self.agreement,
                    &transaction.confirmation,
                    &transaction.product_template,
                    &self.registry,
                )
                .map_err(|e| e.to_string())?;
                if self.instances.contains_key(&i.instance_id) {
                    return Err(format!("transaction {} already exists", i.instance_id));
                }
                let groups = self.netting.register(&i.instance_id);
                let instance_id = i.instance_id.clone();
                self.instances.insert(instance_id.clone(), i);
                self.log(Payload::TransactionAdded { instance_id, groups });
            }
            Command::RetireTransaction { transaction_id, force } => {
                let outstanding = self.obligations.values().any(|o| {
                    o.instance_id.as_deref() == Some(&transaction_id) && o.status.is_outstanding()
                });
                let groups = self
                    .netting
                    .retire_transaction(&transaction_id, outstanding, force.as_deref())
                    .map_err(|e| e.to_string())?;
                self.retired.insert(transaction_id.clone());
                self.log(Payload::TransactionRetired { instance_id: transaction_id, groups, forced: force });
            }
            Command::DepositFunds { party, amount } => {
                if self.accounts.available(&party, amount.currency).is_some() {
                    self.accounts.credit(&party, amount);
                } else {
                    self.accounts.open(&party, amount);
                }
                self.log(Payload::FundsDeposited { party, amount });
            }
        }
        Ok(())
    }

    fn determination_context<'a>(&'a self, date: CalendarDate, txns: &'a [TransactionId]) -> DeterminationContext<'a> {
        DeterminationContext {
            as_of: date,
            parties: self.agreement.party_ids(),
            specs: &self.agreement.events,
            book: &self.events,
            calendars: &self.genesis.calendars,
            local_calendars: &self.genesis.elections.local_calendars,
            active_transactions: txns,
        }
    }

    fn active_transactions(&self) -> Vec<TransactionId> {
        self.instances
            .values()
            .filter(|i| i.state != InstanceState::Terminated && !self.retired.contains(&i.instance_id))
            .map(|i| i.instance_id.clone())
            .collect()
    }

    fn process_observation(&mut self, raw: &RawObservation, date: CalendarDate) {
        let seq = self.journal.next_seq();
        let record = observe(
            raw,
            seq,
            &ObservationContext {
                parties: self.agreement.party_ids(),
                specified_entities: &self.genesis.elections.specified_entities,
            },
        );
        self.log(Payload::Observed { record: record.clone() });
        self.observations.insert(record.observation_id.clone(), record.clone());
        let txns = self.active_transactions();
        let determination = determine(&record, &self.determination_context(date, &txns));

        // Level-three bookkeeping follows the determination, which already
        // counted the incoming amount.
        if let (ObservedKind::ThirdPartyDefault, Some(party), Some(amount)) =
            (&record.kind, &record.party, record.amount)
        {
            let reference = record.payload.get("reference").cloned().unwrap_or_else(|| record.observation_id.clone());
            self.events.third_party_defaults.insert(
                default_key(party, &reference),
                ThirdPartyDefault { reference, party: party.clone(), amount, resolved: false },
            );
        }
        if record.kind == ObservedKind::ThirdPartyDefaultResolved {
            let key = record.payload.get("reference").zip(record.party.as_ref()).map(|(r, p)| default_key(p, r));
            if let Some(d) = key.and_then(|k| self.events.third_party_defaults.get_mut(&k)) {
                d.resolved = true;
            }
        }
        if let (ObservedKind::IncorporationStatus(status), Some(party)) = (&record.kind, &record.party) {
            if let Some(p) = self.agreement.parties.iter_mut().find(|p| &p.party_id == party) {
                p.incorporation_status = *status;
            }
        }

        let determination = match determination {
            Determination::NewEventRecords { records } => {
                let parties = self.agreement.party_ids();
                let records = records
                    .into_iter()
                    .map(|r| if r.class() == EventClass::TerminationEvent { record_dual_affected(&r, parties).unwrap_or(r) } else { r })
                    .collect();
                Determination::NewEventRecords { records }
            }
            other => other,
        };
        self.log(Payload::Determined {
            observation_id: record.observation_id.clone(),
            determination: determination.clone(),
            authorized_by: None,
        });
        match determination {
            Determination::NoEvent { .. } => {}
            Determination::UpdateExisting { event_id } => {
                if let Some(r) = self.events.records.get_mut(&event_id) {
                    r.observations.push(record.observation_id.clone());
                }
                self.log(Payload::EventUpdated { event_id, observation_id: record.observation_id.clone() });
            }
            Determination::NewEventRecords { records } => self.open_events(records),
            Determination::AuthorizationRequired { request } => {
                let subjective = record
                    .kind
                    .event_kind()
                    .and_then(|k| self.agreement.events.iter().find(|s| s.kind == k))
                    .is_some_and(|s| s.subjective)
                    && request.menu.iter().any(|m| m == MENU_YES_TRIGGER);
                let subject = if subjective {
                    AuthorizationSubject::SubjectiveDetermination { observation_id: record.observation_id.clone() }
                } else {
                    AuthorizationSubject::Acknowledge { observation_id: record.observation_id.clone() }
                };
                for addressee in &request.addressees {
                    self.request_authorization(addressee, &request.question, &request.menu, subject.clone(), date);
                }
            }
        }
    }

    fn open_events(&mut self, records: Vec<EventRecord>) {
        let concurrent = records.clone();
        for r in records {
            self.events.records.insert(r.event_id.clone(), r);
        }
        if concurrent.len() > 1 {
            for outcome in resolve_hierarchy(&concurrent, &self.settings.hierarchy) {
                for id in &outcome.superseded {
                    self.transition_event(id, EventStatus::Superseded, "hierarchy");
                }
                self.log(Payload::HierarchyResolved { outcome });
            }
        }
    }

    fn transition_event(&mut self, id: &str, to: EventStatus, reason: &str) {
        let Some(r) = self.events.records.get_mut(id) else { return };
        if !r.status.can_transition_to(to) {
            return;
        }
        let from = r.status;
        r.status = to;
        if to == EventStatus::Occurred && r.occurred_on.is_none() {
            r.occurred_on = self.last_date;
        }
        self.log(Payload::EventTransition { event_id: id.into(), from, to, reason: reason.into() });
        if !to.is_live() {
            let freed = self.suspensions.release(id, &self.events);
            self.resume(freed, reason);
        }
    }

    fn cure_event(&mut self, event_id: &str, _date: CalendarDate, reason: &str) -> Result<(), crate::settlement::SettlementError> {
        let report = cure(event_id, &mut self.events, &mut self.suspensions)?;
        self.log(Payload::EventTransition {
            event_id: event_id.into(),
            from: report.from,
            to: EventStatus::Cured,
            reason: reason.into(),
        });
        self.resume(report.resumed, reason);
        Ok(())
    }

    /// Suspended obligations become Due again on the current date, at their
    /// original quantum.
    fn resume(&mut self, obligations: Vec<ObligationId>, reason: &str) {
        let today = self.last_date.expect("resumption happens inside a step");
        for id in obligations {
            if let Some(o) = self.obligations.get_mut(&id) {
                if o.status == ObligationStatus::Suspended {
                    o.status = ObligationStatus::Due;
                    o.due_date = today;
                    self.log(Payload::ObligationTransition {
                        obligation_id: id,
                        from: ObligationStatus::Suspended,
                        to: ObligationStatus::Due,
                        reason: format!("resumed: {reason}"),
                    });
                }
            } else if let Some(d) = self.deliveries.get_mut(&id) {
                if d.status == ObligationStatus::Suspended {
                    d.status = ObligationStatus::Due;
                    d.due_date = today;
                    self.log(Payload::ObligationTransition {
                        obligation_id: id,
                        from: ObligationStatus::Suspended,
                        to: ObligationStatus::Due,
                        reason: format!("resumed: {reason}"),
                    });
                }
            }
        }
    }

    fn incoming(&mut self, payment: IncomingPayment, date: CalendarDate) -> Result<(), String> {
        let report = match_incoming(&payment, &self.agreement.parties, self.obligations.values()).map_err(|e| e.to_string())?;
        self.log(Payload::IncomingMatched { report: report.clone() });
        for a in &report.allocations {
            let ob = self.obligations.get_mut(&a.obligation_id).expect("matched obligation exists");
            ob.discharged_amount += a.applied.amount;
            let payee = ob.payee.clone();
            self.accounts.credit(&payee, a.applied);
            if a.discharges {
                self.finish_obligation(&a.obligation_id, ObligationStatus::Discharged, "incoming payment", date);
            }
        }
        if report.credit.is_positive() {
            let k = credit_key(&report.payer, report.credit.currency);
            let slot = self.credits.entry(k).or_insert(Money::zero(report.credit.currency));
            slot.amount += report.credit.amount;
        }
        Ok(())
    }

    /// Moves an obligation to Paid or Discharged, records lateness for the
    /// interest stage and cures any on-platform failure tied to it.
    fn finish_obligation(&mut self, id: &str, to: ObligationStatus, reason: &str, date: CalendarDate) {
        let ob = self.obligations.get_mut(id).expect("obligation exists");
        let from = ob.status;
        if ob.transition(to).is_err() {
            return;
        }
        let late = ob.late_since.is_some() && ob.origin != ObligationOrigin::Interest;
        self.log(Payload::ObligationTransition { obligation_id: id.into(), from, to, reason: reason.into() });
        if late {
            self.paid_late.push(id.into());
        }
        let tied: Vec<EventId> = self
            .events
            .live()
            .filter(|r| r.obligation_id.as_deref() == Some(id))
            .map(|r| r.event_id.clone())
            .collect();
        for e in tied {
            let _ = self.cure_event(&e, date, "obligation settled");
        }
    }

    fn request_authorization(
        &mut self,
        addressee: &str,
        question: &str,
        menu: &[String],
        subject: AuthorizationSubject,
        date: CalendarDate,
    ) -> String {
        let seq = self.journal.next_seq();
        let request = PendingAuthorization {
            request_id: format!("auth-{seq}"),
            addressee: addressee.into(),
            question: question.into(),
            menu: menu.to_vec(),
            created_seq: seq,
            created_on: date,
            deadline_policy: self.settings.deadline,
            subject,
            status: AuthorizationStatus::Open,
            last_reminded: None,
        };
        let id = request.request_id.clone();
        self.authorizations.insert(id.clone(), request.clone());
        self.log(Payload::AuthorizationRequested { request });
        id
    }

    fn answer(&mut self, request_id: &str, party: &str, response: &str, date: CalendarDate) {
        let seq = self.journal.next_seq();
        let req = self.authorizations.get_mut(request_id).expect("checked");
        req.status = AuthorizationStatus::Answered { response: response.into(), responder: party.into(), seq };
        let subject = req.subject.clone();
        let effective = match &subject {
            AuthorizationSubject::EventAction { event_id } => {
                self.events.get(event_id).is_some_and(|r| r.status.is_live())
            }
            AuthorizationSubject::InterestCharge { charge_id } => {
                self.charges.get(charge_id).is_some_and(|c| c.status == ChargeStatus::Proposed)
            }
            AuthorizationSubject::DeferredPayment { obligation_id } => self
                .obligations
                .get(obligation_id)
                .is_some_and(|o| o.status == ObligationStatus::Deferred),
            AuthorizationSubject::SubjectiveDetermination { .. } => true,
            AuthorizationSubject::RateDisruption { .. } | AuthorizationSubject::Acknowledge { .. } => true,
        };
        self.log(Payload::AuthorizationAnswered {
            request_id: request_id.into(),
            party: party.into(),
            response: response.into(),
            effective,
        });
        if !effective {
            return;
        }
        match subject {
            AuthorizationSubject::EventAction { event_id } => {
                let against = self.events.get(&event_id).and_then(|r| r.affected.iter().next().cloned()).unwrap_or_default();
                let action = match response {
                    MENU_SUSPEND => Action::SuspendPayments { event_id: event_id.clone(), by: party.into(), against },
                    MENU_IGNORE => Action::RecordOnly { event_id: event_id.clone(), by: party.into() },
                    MENU_TERMINATE => Action::DesignateEarlyTermination { event_id: event_id.clone(), by: party.into() },
                    _ => return,
                };
                self.take_action(action);
            }
            AuthorizationSubject::SubjectiveDetermination { observation_id } => {
                if response != MENU_YES_TRIGGER {
                    return;
                }
                let Some(obs) = self.observations.get(&observation_id).cloned() else { return };
                let Some(kind) = obs.kind.event_kind() else { return };
                let Some(party) = obs.party.clone() else { return };
                if self.events.live().any(|r| *r.kind() == kind && r.affected.contains(&party)) {
                    return;
                }
                let Some(spec) = self.agreement.events.iter().find(|s| s.kind == kind).cloned() else { return };
                let txns = self.active_transactions();
                let opened = open_event(&obs, &spec, format!("ev-{seq}-0"), &party, &self.determination_context(date, &txns));
                let Ok(mut record) = opened else { return };
                record.authorized_by = Some(request_id.into());
                if record.class() == EventClass::TerminationEvent {
                    record = record_dual_affected(&record, self.parties()).unwrap_or(record);
                }
                let records = vec![record];
                self.log(Payload::Determined {
                    observation_id,
                    determination: Determination::NewEventRecords { records: records.clone() },
                    authorized_by: Some(request_id.into()),
                });
                self.open_events(records);
            }
            AuthorizationSubject::InterestCharge { charge_id } => {
                let charge = self.charges.get_mut(&charge_id).expect("checked");
                if response == MENU_APPLY {
                    charge.status = ChargeStatus::Authorized;
                    let ob = PaymentObligation {
                        obligation_id: content_id("ob", &[&charge_id, "interest"]),
                        instance_id: None,
                        group_id: None,
                        payer: charge.payer.clone(),
                        payee: charge.payee.clone(),
                        amount: charge.amount,
                        due_date: date,
                        status: ObligationStatus::Due,
                        origin: ObligationOrigin::Interest,
                        successor: None,
                        calculation: None,
                        discharged_amount: 0,
                        late_since: None,
                    };
                    self.log(Payload::ChargeResolved { charge_id, status: ChargeStatus::Authorized });
                    self.obligations.insert(ob.obligation_id.clone(), ob.clone());
                    self.log(Payload::ObligationCreated { obligation: ob });
                } else {
                    charge.status = ChargeStatus::Waived;
                    self.log(Payload::ChargeResolved { charge_id, status: ChargeStatus::Waived });
                }
            }
            AuthorizationSubject::DeferredPayment { obligation_id } => {
                if response == MENU_RETRY {
                    let ob = self.obligations.get_mut(&obligation_id).expect("checked");
                    ob.status = ObligationStatus::Due;
                    self.log(Payload::ObligationTransition {
                        obligation_id,
                        from: ObligationStatus::Deferred,
                        to: ObligationStatus::Due,
                        reason: "retry authorized".into(),
                    });
                }
            }
            AuthorizationSubject::RateDisruption { .. } | AuthorizationSubject::Acknowledge { .. } => {}
        }
    }

    fn take_action(&mut self, action: Action) {
        let terminate = match &action {
            Action::AutomaticEarlyTermination { event_id } => Some((event_id.clone(), "automatic early termination", true)),
            Action::DesignateEarlyTermination { event_id, .. } => Some((event_id.clone(), "early termination designated", false)),
            _ => None,
        };
        self.log(Payload::ActionTaken { action });
        let Some((event_id, reason, all)) = terminate else { return };
        let scope: Vec<TransactionId> = match self.events.get(&event_id) {
            Some(r) if !all && r.class() == EventClass::TerminationEvent && !r.affected_transactions.is_empty() => {
                r.affected_transactions.clone()
            }
            _ => self.instances.keys().cloned().collect(),
        };
        for id in scope {
            let Some(i) = self.instances.get_mut(&id) else { continue };
            if i.state == InstanceState::Terminated {
                continue;
            }
            let from = i.state;
            i.state = InstanceState::Terminated;
            self.log(Payload::InstanceTransition { instance_id: id, from, to: InstanceState::Terminated, reason: reason.into() });
        }
    }

    // ---- pipeline stages ----

    fn generate_stage(&mut self, date: CalendarDate) -> Result<(), EngineError> {
        let existing: BTreeSet<ObligationId> =
            self.obligations.keys().chain(self.deliveries.keys()).cloned().collect();
        let ctx = GenerationContext {
            fixings: &self.fixings,
            calendars: &self.genesis.calendars,
            existing: &existing,
            rounding: self.rounding,
        };
        let mut payments = Vec::new();
        let mut deliveries = Vec::new();
        let mut escalations: Vec<(RateSourceId, CalendarDate, PartyId)> = Vec::new();
        for i in self.instances.values() {
            if i.state != InstanceState::Active || self.retired.contains(&i.instance_id) {
                continue;
            }
            let report = generate(&i.flows, date, &ctx)?;
            for mut p in report.payments {
                p.group_id = Some(self.netting.assign_group(&i.instance_id, Some(p.amount.currency))?);
                payments.push(p);
            }
            deliveries.extend(report.deliveries);
            for (source, d) in report.escalations {
                let payer = i
                    .flows
                    .legs
                    .iter()
                    .find(|l| matches!(&l.rate, LegRate::Floating { source: s, .. } if *s == source))
                    .map(|l| l.payer.clone())
                    .unwrap_or_else(|| self.parties()[0].into());
                escalations.push((source, d, payer));
            }
        }
        if !payments.is_empty() || !deliveries.is_empty() {
            for p in &payments {
                self.obligations.insert(p.obligation_id.clone(), p.clone());
            }
            for d in &deliveries {
                self.deliveries.insert(d.obligation_id.clone(), d.clone());
            }
            self.log(Payload::ObligationsGenerated { payments, deliveries });
        }
        escalations.sort();
        escalations.dedup();
        for (source, d, payer) in escalations {
            let raised = self.authorizations.values().any(|a| {
                matches!(&a.subject, AuthorizationSubject::RateDisruption { source: s, date: x } if *s == source && *x == d)
            });
            if raised {
                continue;
            }
            let question = format!(
                "rate source {source} published no fixing for {d} and the fallback is exhausted: supply a fixing to release the affected periods"
            );
            self.request_authorization(
                &payer,
                &question,
                &[MENU_ACKNOWLEDGE.to_string()],
                AuthorizationSubject::RateDisruption { source, date: d },
                date,
            );
        }
        Ok(())
    }

    fn tick_stage(&mut self, date: CalendarDate) {
        for t in tick(date, &self.events, self.settings.boundary) {
            let reason = if t.to == EventStatus::Occurred { "grace period lapsed" } else { "continuing" };
            self.transition_event(&t.event_id, t.to, reason);
        }
    }

    fn netting_stage(&mut self, date: CalendarDate) -> Result<Vec<NetObligation>, EngineError> {
        let terminated: BTreeSet<&TransactionId> = self
            .instances
            .values()
            .filter(|i| i.state == InstanceState::Terminated)
            .map(|i| &i.instance_id)
            .collect();
        // (group, value date) -> scheduled gross obligations
        let mut batches: BTreeMap<(GroupId, CalendarDate), Vec<ObligationId>> = BTreeMap::new();
        for o in self.obligations.values() {
            if o.status == ObligationStatus::Scheduled
                && o.due_date <= date
                && !o.instance_id.as_ref().is_some_and(|t| terminated.contains(t))
            {
                if let Some(g) = &o.group_id {
                    batches.entry((g.clone(), o.due_date)).or_default().push(o.obligation_id.clone());
                }
            }
        }
        let parties = self.parties().map(String::from);
        let mut out = Vec::new();
        for ((group_id, value_date), mut ids) in batches {
            // obligations resumed today rejoin their group's netting
            if value_date == date {
                let currencies: BTreeSet<Currency> = ids.iter().map(|id| self.obligations[id].amount.currency).collect();
                ids.extend(
                    self.obligations
                        .values()
                        .filter(|o| {
                            o.status == ObligationStatus::Due
                                && o.late_since.is_some()
                                && o.due_date == date
                                && o.group_id.as_ref() == Some(&group_id)
                                && currencies.contains(&o.amount.currency)
                        })
                        .map(|o| o.obligation_id.clone()),
                );
            }
            let Some(group) = self.netting.group(&group_id).cloned() else { continue };
            let refs: Vec<&PaymentObligation> = ids.iter().map(|id| &self.obligations[id]).collect();
            let nets = net_day(&group, value_date, &refs, (&parties[0], &parties[1]))?;
            for net in nets {
                for c in &net.constituents {
                    let o = self.obligations.get_mut(c).expect("constituent exists");
                    o.transition(ObligationStatus::Netted)?;
                    o.successor = Some(net.obligation_id.clone());
                }
                self.nets.insert(net.obligation_id.clone(), net.clone());
                self.log(Payload::Netted { net: net.clone() });
                if let Some(p) = net.to_payment() {
                    self.obligations.insert(p.obligation_id.clone(), p);
                }
                out.push(net);
            }
        }
        Ok(out)
    }

    fn settlement_stage(&mut self, date: CalendarDate) -> Result<Vec<SettlementRecord>, EngineError> {
        let mut out = Vec::new();
        let metavante = self.settings.metavante;

        // New defaults extend holds on already suspended obligations.
        let held: Vec<(ObligationId, PartyId, PartyId)> = self
            .obligations
            .values()
            .filter(|o| o.status == ObligationStatus::Suspended)
            .map(|o| (o.obligation_id.clone(), o.payer.clone(), o.payee.clone()))
            .chain(
                self.deliveries
                    .values()
                    .filter(|d| d.status == ObligationStatus::Suspended)
                    .map(|d| (d.obligation_id.clone(), d.deliverer.clone(), d.recipient.clone())),
            )
            .collect();
        for (id, payer, payee) in held {
            if let ConditionPrecedent::Suspend { events } = check_condition_precedent(&payer, &payee, &self.events, metavante) {
                let known = self.suspensions.events_for(&id);
                let fresh: Vec<EventId> = events.into_iter().filter(|e| !known.contains(e)).collect();
                if !fresh.is_empty() {
                    self.suspensions.suspend(&id, &fresh);
                    self.log(Payload::SuspensionExtended { obligation_id: id, events: fresh });
                }
            }
        }

        let mut work: VecDeque<ObligationId> = {
            let mut due: Vec<&PaymentObligation> = self
                .obligations
                .values()
                .filter(|o| o.status == ObligationStatus::Due && o.due_date <= date)
                .collect();
            due.sort_by(|a, b| a.due_date.cmp(&b.due_date).then_with(|| a.obligation_id.cmp(&b.obligation_id)));
            due.into_iter().map(|o| o.obligation_id.clone()).collect()
        };
        while let Some(id) = work.pop_front() {
            let ob = self.obligations[&id].clone();
            if ob.status != ObligationStatus::Due {
                continue;
            }
            let cp = check_condition_precedent(&ob.payer, &ob.payee, &self.events, metavante);
            if let ConditionPrecedent::Suspend { events } = &cp {
                let o = self.obligations.get_mut(&id).expect("exists");
                o.status = ObligationStatus::Suspended;
                o.late_since.get_or_insert(ob.due_date);
                self.suspensions.suspend(&id, events);
                let outcome = SettlementOutcome::Suspended { events: events.clone() };
                self.log(Payload::Settlement { obligation_id: id.clone(), outcome: outcome.clone(), amount: None, withholding: None });
                out.push(SettlementRecord { obligation_id: id, outcome });
                continue;
            }

            // credit from earlier overpayments discharges first
            let key = credit_key(&ob.payer, ob.amount.currency);
            if let Some(credit) = self.credits.get(&key).copied().filter(|c| c.is_positive()) {
                let applied = Money::new(credit.currency, credit.amount.min(ob.outstanding().amount));
                self.credits.get_mut(&key).expect("present").amount -= applied.amount;
                self.obligations.get_mut(&id).expect("exists").discharged_amount += applied.amount;
                self.accounts.credit(&ob.payee, applied);
                self.log(Payload::CreditApplied { obligation_id: id.clone(), amount: applied });
                if self.obligations[&id].outstanding().is_zero() {
                    self.finish_obligation(&id, ObligationStatus::Discharged, "credit applied", date);
                    continue;
                }
            }
            let ob = self.obligations[&id].clone();
            let funds = self.accounts.available(&ob.payer, ob.amount.currency);
            match settle(&ob, &cp, funds) {
                SettlementOutcome::Paid => {
                    let amount = ob.outstanding();
                    let withholding = self.withholding_for(&ob, amount, date);
                    let net_paid = withholding.as_ref().map(|w| w.net_paid).unwrap_or(amount);
                    self.accounts.debit(&ob.payer, amount);
                    self.accounts.credit(&ob.payee, net_paid);
                    self.log(Payload::Settlement {
                        obligation_id: id.clone(),
                        outcome: SettlementOutcome::Paid,
                        amount: Some(amount),
                        withholding: withholding.clone(),
                    });
                    self.finish_obligation(&id, ObligationStatus::Paid, "settled", date);
                    if let Some(gu) = withholding.and_then(|w| w.gross_up_obligation.map(|g| (g, w.withheld))) {
                        let gross_up = PaymentObligation {
                            obligation_id: gu.0.clone(),
                            instance_id: ob.instance_id.clone(),
                            group_id: None,
                            payer: ob.payer.clone(),
                            payee: ob.payee.clone(),
                            amount: gu.1,
                            due_date: date,
                            status: ObligationStatus::Due,
                            origin: ObligationOrigin::GrossUp,
                            successor: None,
                            calculation: None,
                            discharged_amount: 0,
                            late_since: None,
                        };
                        self.obligations.insert(gu.0.clone(), gross_up.clone());
                        self.log(Payload::ObligationCreated { obligation: gross_up });
                        work.push_back(gu.0);
                    }
                    out.push(SettlementRecord { obligation_id: id, outcome: SettlementOutcome::Paid });
                }
                outcome @ SettlementOutcome::Deferred { .. } => {
                    let o = self.obligations.get_mut(&id).expect("exists");
                    o.status = ObligationStatus::Deferred;
                    o.late_since.get_or_insert(ob.due_date);
                    self.log(Payload::Settlement { obligation_id: id.clone(), outcome: outcome.clone(), amount: None, withholding: None });
                    out.push(SettlementRecord { obligation_id: id.clone(), outcome });
                    let raw = RawObservation::new("failure-to-pay", "on-platform")
                        .party(&ob.payer)
                        .with("obligation", &id);
                    self.process_observation(&raw, date);
                    let question = format!(
                        "payment {id} of {} to {} could not be made for want of funds: retry or await payment",
                        ob.outstanding(),
                        ob.payee
                    );
                    self.request_authorization(
                        &ob.payer,
                        &question,
                        &[MENU_RETRY.to_string(), MENU_AWAIT.to_string()],
                        AuthorizationSubject::DeferredPayment { obligation_id: id },
                        date,
                    );
                }
                SettlementOutcome::Suspended { .. } => unreachable!("condition precedent satisfied"),
            }
        }

        let mut due_deliveries: Vec<(ObligationId, PartyId, PartyId)> = self
            .deliveries
            .values()
            .filter(|d| d.status == ObligationStatus::Due && d.due_date <= date)
            .map(|d| (d.obligation_id.clone(), d.deliverer.clone(), d.recipient.clone()))
            .collect();
        due_deliveries.sort();
        for (id, from, to) in due_deliveries {
            let cp = check_condition_precedent(&from, &to, &self.events, metavante);
            let d = self.deliveries.get_mut(&id).expect("exists");
            let outcome = match &cp {
                ConditionPrecedent::Suspend { events } => {
                    d.transition(ObligationStatus::Suspended)?;
                    self.suspensions.suspend(&id, events);
                    SettlementOutcome::Suspended { events: events.clone() }
                }
                ConditionPrecedent::Satisfied => {
                    d.transition(ObligationStatus::Paid)?;
                    SettlementOutcome::Paid
                }
            };
            self.log(Payload::Settlement { obligation_id: id.clone(), outcome: outcome.clone(), amount: None, withholding: None });
            out.push(SettlementRecord { obligation_id: id, outcome });
        }
        Ok(out)
    }

    /// Withholding under the payer jurisdiction's rule in force, if any.
    fn withholding_for(&self, ob: &PaymentObligation, gross: Money, date: CalendarDate) -> Option<WithholdingRecord> {
        if ob.origin == ObligationOrigin::GrossUp {
            return None;
        }
        let jurisdiction = &self.agreement.parties.iter().find(|p| p.party_id == ob.payer)?.jurisdiction;
        let rule = self
            .genesis
            .elections
            .tax_rules
            .iter()
            .find(|r| &r.jurisdiction == jurisdiction && r.in_force(date))?;
        let w = apply_withholding(gross, rule, date, self.settings.gross_up).ok()?;
        if w.withheld.is_zero() {
            return None;
        }
        let gross_up_obligation = w.gross_up.map(|_| content_id("gu", &[&ob.obligation_id]));
        let nature = if rule.payee_connected {
            format!("{} withholding borne by payee {}: tax arises from the payee's connection with {}", rule.rule_id, ob.payee, rule.jurisdiction)
        } else if gross_up_obligation.is_some() {
            format!("{} withholding borne by payer {}: gross-up restores the payee's full receipt", rule.rule_id, ob.payer)
        } else {
            format!("{} withholding; gross-up not elected", rule.rule_id)
        };
        Some(WithholdingRecord {
            obligation_id: ob.obligation_id.clone(),
            rule_id: rule.rule_id.clone(),
            jurisdiction: rule.jurisdiction.clone(),
            rate: rule.rate,
            payee_connected: rule.payee_connected,
            gross: w.gross,
            withheld: w.withheld,
            net_paid: w.net_paid,
            gross_up_obligation,
            nature,
        })
    }

    fn interest_stage(&mut self, date: CalendarDate) {
        let late = core::mem::take(&mut self.paid_late);
        let rate = self.settings.default_rate;
        if rate.is_zero() {
            return;
        }
        for id in late {
            let ob = self.obligations[&id].clone();
            let Some(from) = ob.late_since else { continue };
            let Ok(charge) = accrue_default_interest(&ob, rate, from, date) else { continue };
            if !charge.amount.is_positive() || self.charges.contains_key(&charge.charge_id) {
                continue;
            }
            self.charges.insert(charge.charge_id.clone(), charge.clone());
            self.log(Payload::ChargeProposed { charge: charge.clone() });
            let question = format!(
                "{} of default interest accrued on late payment {} ({} days at {}): apply or waive",
                charge.amount, id, charge.days, rate
            );
            self.request_authorization(
                &charge.payee,
                &question,
                &[MENU_APPLY.to_string(), MENU_WAIVE.to_string()],
                AuthorizationSubject::InterestCharge { charge_id: charge.charge_id },
                date,
            );
        }
    }

    fn action_stage(&mut self, date: CalendarDate) {
        let ready: Vec<EventId> = self
            .events
            .records
            .values()
            .filter(|r| r.status.has_occurred() && !r.acted)
            .map(|r| r.event_id.clone())
            .collect();
        let parties = self.parties().map(String::from);
        for id in ready {
            let record = {
                let r = self.events.records.get_mut(&id).expect("exists");
                r.acted = true;
                r.clone()
            };
            for notice in emit_notice(&record, [&parties[0], &parties[1]]) {
                self.notices.push(notice.clone());
                self.log(Payload::NoticeIssued { notice });
            }
            let minor = record.affected.iter().map(|p| self.events.minor_count(p)).max().unwrap_or(0);
            let actions = act(&record, &self.settings.policy, [&parties[0], &parties[1]], self.settings.aet, minor);
            if self.settings.policy.is_minor(record.kind()) {
                for p in &record.affected {
                    *self.events.minor_event_counts.entry(p.clone()).or_default() += 1;
                }
            }
            for action in actions {
                match action {
                    Action::RequestAuthorization { event_id, addressee, question, menu } => {
                        self.request_authorization(&addressee, &question, &menu, AuthorizationSubject::EventAction { event_id }, date);
                    }
                    other => self.take_action(other),
                }
            }
        }
    }

    fn reminder_stage(&mut self, date: CalendarDate) {
        let due: Vec<String> = self
            .authorizations
            .values_mut()
            .filter(|a| a.is_open() && a.created_on < date)
            .filter_map(|a| {
                let since = a.last_reminded.unwrap_or(a.created_on);
                (since.days_until(&date) >= a.deadline_policy.interval()).then(|| {
                    a.last_reminded = Some(date);
                    a.request_id.clone()
                })
            })
            .collect();
        for request_id in due {
            self.log(Payload::AuthorizationReminder { request_id });
        }
    }
}

/// Rebuilds an engine by feeding the journal's input entries into a fresh
/// one and checking that every derived entry is regenerated identically.
pub fn replay(entries: &[Entry], registry: &ProductRegistry) -> Result<Engine, EngineError> {
    verify_entries(entries)?;
    let first = entries.first().ok_or(EngineError::EmptyJournal)?;
    let Payload::Genesis { genesis } = &first.payload else {
        return Err(EngineError::ReplayDiverged { seq: 1 });
    };
    let mut engine = Engine::with_registry(genesis.clone(), registry.clone())?;
    for e in entries {
        let produced = engine.journal.len() as u64;
        if e.seq > produced {
            if e.seq != produced + 1 {
                return Err(EngineError::ReplayDiverged { seq: produced + 1 });
            }
            let applied = match &e.payload {
                Payload::CommandQueued { command } => engine.submit(command.clone()).map(|_| ()),
                Payload::Control { control, by, .. } => engine.control(control.clone(), by.clone()).map(|_| ()),
                Payload::DayStep { date, .. } => engine.step_day(*date).map(|_| ()),
                _ => return Err(EngineError::ReplayDiverged { seq: e.seq }),
            };
            if applied.is_err() {
                return Err(EngineError::ReplayDiverged { seq: e.seq });
            }
        }
        if engine.journal.get(e.seq) != Some(e) {
            return Err(EngineError::ReplayDiverged { seq: e.seq });
        }
    }
    if engine.journal.len() != entries.len() {
        return Err(EngineError::ReplayDiverged { seq: entries.len() as u64 + 1 });
    }
    Ok(engine)
}

pub fn digest_hex(engine: &Engine) -> String {
    to_hex(&engine.head_digest())
}

pub fn event_spec(agreement: &AgreementTemplate, kind: &crate::event::EventKind) -> Option<EventSpec> {
    agreement.events.iter().find(|s| &s.kind == kind).cloned()
}

