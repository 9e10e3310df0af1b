//! Master → Agreement → Transaction templates. Templates are data: term
//! tables with defaults or placeholders, election flags and event specs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cashflow::{ProductFlows, TransactionId};
use crate::event::{ActionPolicy, EventKind, EventSpec, Grace, GraceBoundary, Hierarchy};
use crate::money::Money;
use crate::netting::{NettingBook, NettingError, NettingGroupDef, NettingMode};
use crate::party::{BranchId, Party, PartyError, PartyId};
use crate::product::ProductRegistry;
use crate::rate::Rate;
use crate::settlement::TaxRule;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("standard event {0} missing from the term set")]
    MissingStandardEvent(String),
    #[error("term {0} defined twice")]
    DuplicateTerm(String),
    #[error("term {0} is not overridable")]
    IllegalOverride(String),
    #[error("unknown term {0}")]
    UnknownTerm(String),
    #[error("unresolved placeholders: {0:?}")]
    UnresolvedPlaceholder(Vec<String>),
    #[error("product template {template} does not accept product type {product_type}")]
    ProductMismatch { template: String, product_type: String },
    #[error("no product template {0}")]
    UnknownProduct(String),
    #[error("term {name} = {value:?}: {reason}")]
    InvalidTerm { name: String, value: String, reason: String },
    #[error("an agreement has exactly two parties, got {0}")]
    WrongPartyCount(usize),
    #[error(transparent)]
    Party(#[from] PartyError),
    #[error(transparent)]
    Netting(#[from] NettingError),
}

/// One row of the master term table. `default: None` is a placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermDef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    pub overridable: bool,
    /// Resolved per Transaction (by the Confirmation) rather than by the Schedule.
    #[serde(default)]
    pub per_transaction: bool,
}

impl TermDef {
    pub fn value(name: &str, default: &str, overridable: bool) -> Self {
        TermDef { name: name.into(), default: Some(default.into()), overridable, per_transaction: false }
    }

    pub fn placeholder(name: &str) -> Self {
        TermDef { name: name.into(), default: None, overridable: true, per_transaction: false }
    }

    pub fn per_transaction(name: &str, default: Option<&str>) -> Self {
        TermDef { name: name.into(), default: default.map(String::from), overridable: true, per_transaction: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterTemplate {
    pub version_tag: String,
    pub terms: BTreeMap<String, TermDef>,
    pub events: Vec<EventSpec>,
    pub placeholders: Vec<String>,
}

pub fn compile_master(
    version_tag: &str,
    terms: Vec<TermDef>,
    events: Vec<EventSpec>,
) -> Result<MasterTemplate, TemplateError> {
    let mut table = BTreeMap::new();
    for t in terms {
        if table.contains_key(&t.name) {
            return Err(TemplateError::DuplicateTerm(t.name));
        }
        table.insert(t.name.clone(), t);
    }
    for kind in EventKind::STANDARD {
        if !events.iter().any(|e| e.kind == kind) {
            return Err(TemplateError::MissingStandardEvent(kind.label()));
        }
    }
    let mut events = events;
    events.sort_by(|a, b| a.kind.cmp(&b.kind));
    let placeholders = table.values().filter(|t| t.default.is_none()).map(|t| t.name.clone()).collect();
    Ok(MasterTemplate { version_tag: version_tag.into(), terms: table, events, placeholders })
}

pub mod terms {
    pub const NETTING_MODE: &str = "netting-mode";
    pub const CROSS_DEFAULT_THRESHOLD: &str = "cross-default-threshold";
    pub const AUTOMATIC_EARLY_TERMINATION: &str = "automatic-early-termination";
    pub const DEFAULT_INTEREST_RATE: &str = "default-interest-rate";
    pub const METAVANTE_MODE: &str = "metavante-mode";
    pub const GROSS_UP: &str = "gross-up";
    pub const GRACE_BOUNDARY: &str = "grace-boundary";
    pub const ESCALATION_THRESHOLD: &str = "escalation-threshold";
    pub const AUTHORIZATION_DEADLINE: &str = "authorization-deadline-policy";
    pub const SINGLE_AGREEMENT: &str = "single-agreement";
    pub const PAYMENT_NETTING: &str = "payment-netting";
}

/// The standard 2002-form term set and event definitions.
pub fn standard_2002() -> (Vec<TermDef>, Vec<EventSpec>) {
    use terms::*;
    let t = vec![
        TermDef::placeholder(NETTING_MODE),
        TermDef::placeholder(CROSS_DEFAULT_THRESHOLD),
        TermDef::value(AUTOMATIC_EARLY_TERMINATION, "false", true),
        TermDef::value(DEFAULT_INTEREST_RATE, "0.02", true),
        TermDef::value(METAVANTE_MODE, "false", true),
        TermDef::value(GROSS_UP, "true", true),
        TermDef::value(GRACE_BOUNDARY, "deadline-day-curable", true),
        TermDef::value(ESCALATION_THRESHOLD, "3", true),
        TermDef::value(AUTHORIZATION_DEADLINE, "block-indefinitely", true),
        TermDef::value(SINGLE_AGREEMENT, "true", false),
        TermDef::value(PAYMENT_NETTING, "same-day-same-currency", false),
        TermDef::per_transaction("notional", None),
        TermDef::per_transaction("currency", None),
        TermDef::per_transaction("effective-date", None),
        TermDef::per_transaction("termination-date", None),
        TermDef::per_transaction("payment-calendar", None),
        TermDef::per_transaction("business-day-convention", Some("modified-following")),
        TermDef::per_transaction("fallback-policy", Some("use-last-published:5")),
    ];
    let lbd = |days| Grace::LocalBusinessDays { days, calendar: None };
    let e = vec![
        EventSpec::new(EventKind::FailureToPayOrDeliver, lbd(1)),
        EventSpec::new(EventKind::CreditSupportDefault, Grace::None),
        EventSpec::new(EventKind::CrossDefault, Grace::None),
        EventSpec::new(EventKind::Bankruptcy, Grace::None),
        EventSpec::new(EventKind::Illegality, lbd(3)),
        EventSpec::new(EventKind::ForceMajeure, lbd(8)),
        EventSpec::new(EventKind::CreditEventUponMerger, Grace::None),
    ];
    (t, e)
}

pub fn standard_master() -> MasterTemplate {
    let (t, e) = standard_2002();
    compile_master("2002", t, e).expect("standard set is complete")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdditionalEventDef {
    pub name: String,
    /// `true` for an Additional Event of Default, else a Termination Event.
    #[serde(default)]
    pub event_of_default: bool,
    pub grace: Grace,
    #[serde(default)]
    pub subjective: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleElections {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiple_transaction_netting: Option<bool>,
    pub netting_groups: Vec<NettingGroupDef>,
    pub specified_entities: BTreeMap<PartyId, Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_default_threshold: Option<Money>,
    pub additional_events: Vec<AdditionalEventDef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub automatic_early_termination: Option<bool>,
    pub multibranch: BTreeMap<PartyId, Vec<BranchId>>,
    /// Keyed by event label, e.g. `"failure-to-pay-or-deliver"`.
    pub grace_overrides: BTreeMap<String, Grace>,
    pub term_overrides: BTreeMap<String, String>,
    pub tax_rules: Vec<TaxRule>,
    pub action_policy: ActionPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<Hierarchy>,
    /// Calendar for each party's Local Business Days.
    pub local_calendars: BTreeMap<PartyId, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "unresolved")]
pub enum ValidationStatus {
    Validated,
    Incomplete(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementTemplate {
    pub master: MasterTemplate,
    pub elections: ScheduleElections,
    pub parties: Vec<Party>,
    /// Terms set at the Schedule layer, explicit overrides and elections alike.
    pub schedule_terms: BTreeMap<String, String>,
    pub events: Vec<EventSpec>,
    pub validation: ValidationStatus,
}

pub fn apply_schedule(
    master: &MasterTemplate,
    elections: &ScheduleElections,
    parties: &[Party],
) -> Result<AgreementTemplate, TemplateError> {
    use terms::*;
    if parties.len() != 2 {
        return Err(TemplateError::WrongPartyCount(parties.len()));
    }
    if parties[0].party_id == parties[1].party_id {
        return Err(PartyError::DuplicateParty(parties[0].party_id.clone()).into());
    }
    for p in parties {
        p.validate()?;
        let listed = elections.multibranch.get(&p.party_id);
        for b in p.branches.iter().filter(|b| b.designated_multibranch) {
            if !listed.is_some_and(|l| l.contains(&b.branch_id)) {
                return Err(PartyError::UnlistedMultibranch(b.branch_id.clone()).into());
            }
        }
    }
    let mut schedule_terms = BTreeMap::new();
    for (name, value) in &elections.term_overrides {
        let def = master.terms.get(name).ok_or_else(|| TemplateError::UnknownTerm(name.clone()))?;
        if !def.overridable {
            return Err(TemplateError::IllegalOverride(name.clone()));
        }
        schedule_terms.insert(name.clone(), value.clone());
    }
    if let Some(multi) = elections.multiple_transaction_netting {
        let mode = if multi { NettingMode::MultipleTransaction } else { NettingMode::PerTransaction };
        schedule_terms.insert(NETTING_MODE.into(), mode.as_str().into());
    }
    if let Some(threshold) = elections.cross_default_threshold {
        schedule_terms.insert(CROSS_DEFAULT_THRESHOLD.into(), threshold.to_string());
    }
    if let Some(aet) = elections.automatic_early_termination {
        schedule_terms.insert(AUTOMATIC_EARLY_TERMINATION.into(), aet.to_string());
    }
    NettingBook::new(NettingMode::MultipleTransaction, elections.netting_groups.clone())?;

    let mut events = master.events.clone();
    for def in &elections.additional_events {
        let kind = if def.event_of_default {
            EventKind::AdditionalEventOfDefault(def.name.clone())
        } else {
            EventKind::AdditionalTerminationEvent(def.name.clone())
        };
        let mut spec = EventSpec::new(kind, def.grace.clone());
        spec.subjective = def.subjective;
        events.push(spec);
    }
    for (label, grace) in &elections.grace_overrides {
        let spec = events
            .iter_mut()
            .find(|e| e.kind.label() == *label)
            .ok_or_else(|| TemplateError::UnknownTerm(format!("grace:{label}")))?;
        spec.grace = grace.clone();
    }

    let mut agreement = AgreementTemplate {
        master: master.clone(),
        elections: elections.clone(),
        parties: parties.to_vec(),
        schedule_terms,
        events,
        validation: ValidationStatus::Validated,
    };
    let unresolved: Vec<String> = master
        .terms
        .values()
        .filter(|t| !t.per_transaction && agreement.term(&t.name).is_none())
        .map(|t| t.name.clone())
        .collect();
    if !unresolved.is_empty() {
        agreement.validation = ValidationStatus::Incomplete(unresolved);
    } else {
        let threshold = agreement.money_term(CROSS_DEFAULT_THRESHOLD)?;
        for e in agreement.events.iter_mut().filter(|e| e.kind == EventKind::CrossDefault) {
            e.threshold = Some(threshold);
        }
        agreement.netting_mode()?;
    }
    Ok(agreement)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    Master,
    Schedule,
    Confirmation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedTerm {
    pub value: String,
    pub provenance: Provenance,
}

/// Highest-precedence layer wins: Confirmation, then Schedule, then Master.
pub fn resolve_layers(
    name: &str,
    confirmation: &BTreeMap<String, String>,
    schedule: &BTreeMap<String, String>,
    master: &MasterTemplate,
) -> Option<ResolvedTerm> {
    if let Some(v) = confirmation.get(name) {
        return Some(ResolvedTerm { value: v.clone(), provenance: Provenance::Confirmation });
    }
    if let Some(v) = schedule.get(name) {
        return Some(ResolvedTerm { value: v.clone(), provenance: Provenance::Schedule });
    }
    let d = master.terms.get(name)?.default.as_ref()?;
    Some(ResolvedTerm { value: d.clone(), provenance: Provenance::Master })
}

fn invalid(name: &str, value: &str, reason: impl ToString) -> TemplateError {
    TemplateError::InvalidTerm { name: name.into(), value: value.into(), reason: reason.to_string() }
}

impl AgreementTemplate {
    pub fn term(&self, name: &str) -> Option<ResolvedTerm> {
        resolve_layers(name, &BTreeMap::new(), &self.schedule_terms, &self.master)
    }

    fn required(&self, name: &str) -> Result<String, TemplateError> {
        self.term(name)
            .map(|t| t.value)
            .ok_or_else(|| TemplateError::UnresolvedPlaceholder(vec![name.into()]))
    }

    pub fn bool_term(&self, name: &str) -> Result<bool, TemplateError> {
        let v = self.required(name)?;
        v.parse().map_err(|_| invalid(name, &v, "expected true or false"))
    }

    pub fn money_term(&self, name: &str) -> Result<Money, TemplateError> {
        let v = self.required(name)?;
        v.parse().map_err(|e| invalid(name, &v, e))
    }

    pub fn rate_term(&self, name: &str) -> Result<Rate, TemplateError> {
        let v = self.required(name)?;
        v.parse().map_err(|e| invalid(name, &v, e))
    }

    pub fn u32_term(&self, name: &str) -> Result<u32, TemplateError> {
        let v = self.required(name)?;
        v.parse().map_err(|_| invalid(name, &v, "expected a non-negative integer"))
    }

    pub fn netting_mode(&self) -> Result<NettingMode, TemplateError> {
        let v = self.required(terms::NETTING_MODE)?;
        NettingMode::parse(&v).ok_or_else(|| invalid(terms::NETTING_MODE, &v, "expected per-transaction or multiple-transaction"))
    }

    pub fn grace_boundary(&self) -> Result<GraceBoundary, TemplateError> {
        let v = self.required(terms::GRACE_BOUNDARY)?;
        match v.as_str() {
            "deadline-day-curable" => Ok(GraceBoundary::DeadlineDayCurable),
            "lapse-on-deadline" => Ok(GraceBoundary::LapseOnDeadline),
            _ => Err(invalid(terms::GRACE_BOUNDARY, &v, "expected deadline-day-curable or lapse-on-deadline")),
        }
    }

    pub fn party_ids(&self) -> [&str; 2] {
        [&self.parties[0].party_id, &self.parties[1].party_id]
    }

    pub fn hierarchy(&self) -> Hierarchy {
        self.elections.hierarchy.clone().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub transaction_id: TransactionId,
    pub product_type: String,
    #[serde(default)]
    pub terms: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceState {
    Active,
    Paused,
    Stopped,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractInstance {
    pub instance_id: TransactionId,
    pub product_template: String,
    pub confirmation: Confirmation,
    pub terms: BTreeMap<String, ResolvedTerm>,
    pub state: InstanceState,
    pub flows: ProductFlows,
}

/// Read access to resolved terms for product templates.
pub struct TermLookup<'a> {
    pub terms: &'a BTreeMap<String, ResolvedTerm>,
}

impl TermLookup<'_> {
    pub fn get(&self, name: &str) -> Result<&str, TemplateError> {
        self.terms
            .get(name)
            .map(|t| t.value.as_str())
            .ok_or_else(|| TemplateError::UnresolvedPlaceholder(vec![name.into()]))
    }

    pub fn parse<T>(&self, name: &str) -> Result<T, TemplateError>
    where
        T: core::str::FromStr,
        T::Err: core::fmt::Display,
    {
        let v = self.get(name)?;
        v.parse().map_err(|e: T::Err| invalid(name, v, e))
    }
}

pub fn instantiate(
    agreement: &AgreementTemplate,
    confirmation: &Confirmation,
    product_template: &str,
    registry: &ProductRegistry,
) -> Result<ContractInstance, TemplateError> {
    if let ValidationStatus::Incomplete(missing) = &agreement.validation {
        return Err(TemplateError::UnresolvedPlaceholder(missing.clone()));
    }
    let product = registry
        .get(product_template)
        .ok_or_else(|| TemplateError::UnknownProduct(product_template.into()))?;
    if product.product_type() != confirmation.product_type {
        return Err(TemplateError::ProductMismatch {
            template: product_template.into(),
            product_type: confirmation.product_type.clone(),
        });
    }
    let names: BTreeSet<&String> = agreement
        .master
        .terms
        .keys()
        .chain(agreement.schedule_terms.keys())
        .chain(confirmation.terms.keys())
        .collect();
    let resolved: BTreeMap<String, ResolvedTerm> = names
        .into_iter()
        .filter_map(|n| {
            resolve_layers(n, &confirmation.terms, &agreement.schedule_terms, &agreement.master)
                .map(|t| (n.clone(), t))
        })
        .collect();
    let missing: Vec<String> = product
        .required_terms()
        .iter()
        .filter(|n| !resolved.contains_key(**n))
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(TemplateError::UnresolvedPlaceholder(missing));
    }
    let flows = product.build(&confirmation.transaction_id, &TermLookup { terms: &resolved }, agreement.party_ids())?;
    Ok(ContractInstance {
        instance_id: confirmation.transaction_id.clone(),
        product_template: product_template.into(),
        confirmation: confirmation.clone(),
        terms: resolved,
        state: InstanceState::Active,
        flows,
    })
}

pub fn resolve_term(instance: &ContractInstance, name: &str) -> Result<ResolvedTerm, TemplateError> {
    instance.terms.get(name).cloned().ok_or_else(|| TemplateError::UnknownTerm(name.into()))
}
