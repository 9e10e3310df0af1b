//! Settlement: the condition precedent, suspension and cure, deferral,
//! default interest, incoming-payment matching and withholding tax.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::content_id;
use crate::cashflow::{DayCount, ObligationId, ObligationStatus, PaymentObligation};
use crate::date::CalendarDate;
use crate::event::{EventBook, EventClass, EventId, EventKind, EventStatus};
use crate::money::{div_round_half_away, Currency, Money, MoneyError};
use crate::party::{BranchId, Party, PartyId};
use crate::rate::Rate;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SettlementError {
    #[error("unknown event {0}")]
    UnknownEvent(EventId),
    #[error("event {0} is not live and cannot be cured")]
    NotCurable(EventId),
    #[error("interest window is empty: {from} to {to}")]
    EmptyWindow { from: CalendarDate, to: CalendarDate },
    #[error("branch {0} belongs to no contracting party")]
    UnknownBranch(BranchId),
    #[error("branch {branch} is not a designated office of multibranch party {party}")]
    UndesignatedBranch { party: PartyId, branch: BranchId },
    #[error("tax rule {rule} is not in force on {date}")]
    RuleExpired { rule: String, date: CalendarDate },
    #[error(transparent)]
    Money(#[from] MoneyError),
}

/// Result of checking the condition precedent to payment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ConditionPrecedent {
    Satisfied,
    Suspend { events: Vec<EventId> },
}

/// A payer may withhold performance while an Event of Default or Potential
/// Event of Default stands against its counterparty. In Metavante mode a
/// Bankruptcy-only default does not suspend.
pub fn check_condition_precedent(
    payer: &str,
    payee: &str,
    book: &EventBook,
    metavante_mode: bool,
) -> ConditionPrecedent {
    let events: Vec<EventId> = book
        .records
        .values()
        .filter(|r| {
            r.status.is_live()
                && r.class() == EventClass::EventOfDefault
                && r.affected.contains(payee)
                && !r.affected.contains(payer)
                && !(metavante_mode && *r.kind() == EventKind::Bankruptcy)
        })
        .map(|r| r.event_id.clone())
        .collect();
    if events.is_empty() {
        ConditionPrecedent::Satisfied
    } else {
        ConditionPrecedent::Suspend { events }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SettlementOutcome {
    Paid,
    Suspended { events: Vec<EventId> },
    Deferred { available: Money },
}

/// Decides how a Due payment settles given the condition precedent and the
/// payer's simulated funds (`None` means unlimited).
pub fn settle(ob: &PaymentObligation, cp: &ConditionPrecedent, funds: Option<i64>) -> SettlementOutcome {
    if let ConditionPrecedent::Suspend { events } = cp {
        return SettlementOutcome::Suspended { events: events.clone() };
    }
    match funds {
        Some(avail) if avail < ob.outstanding().amount => SettlementOutcome::Deferred {
            available: Money::new(ob.amount.currency, avail),
        },
        _ => SettlementOutcome::Paid,
    }
}

/// Which events hold which suspended obligations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspensionLedger {
    holds: BTreeMap<ObligationId, BTreeSet<EventId>>,
}

impl SuspensionLedger {
    pub fn suspend(&mut self, ob: &str, events: &[EventId]) {
        self.holds.entry(ob.to_string()).or_default().extend(events.iter().cloned());
    }

    pub fn is_suspended(&self, ob: &str) -> bool {
        self.holds.contains_key(ob)
    }

    pub fn events_for(&self, ob: &str) -> Vec<EventId> {
        self.holds.get(ob).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn obligations(&self) -> impl Iterator<Item = &ObligationId> {
        self.holds.keys()
    }

    /// Drops `event` from every hold and returns the obligations left with no
    /// live event holding them.
    pub fn release(&mut self, event: &str, book: &EventBook) -> Vec<ObligationId> {
        let mut freed = Vec::new();
        for (ob, events) in self.holds.iter_mut() {
            events.remove(event);
            events.retain(|e| book.get(e).is_some_and(|r| r.status.is_live()));
            if events.is_empty() {
                freed.push(ob.clone());
            }
        }
        for ob in &freed {
            self.holds.remove(ob);
        }
        freed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CureReport {
    pub event_id: EventId,
    pub from: EventStatus,
    pub resumed: Vec<ObligationId>,
}

/// Marks `event_id` cured and releases the obligations it alone suspended.
/// The caller moves the released obligations Suspended→Due.
pub fn cure(event_id: &str, book: &mut EventBook, ledger: &mut SuspensionLedger) -> Result<CureReport, SettlementError> {
    let rec = book
        .records
        .get_mut(event_id)
        .ok_or_else(|| SettlementError::UnknownEvent(event_id.to_string()))?;
    if !rec.status.is_live() {
        return Err(SettlementError::NotCurable(event_id.to_string()));
    }
    let from = rec.status;
    rec.status = EventStatus::Cured;
    let resumed = ledger.release(event_id, book);
    Ok(CureReport { event_id: event_id.to_string(), from, resumed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChargeStatus {
    Proposed,
    Authorized,
    Waived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterestCharge {
    pub charge_id: String,
    pub obligation_id: ObligationId,
    /// The late payer, who owes the interest.
    pub payer: PartyId,
    pub payee: PartyId,
    pub principal: Money,
    pub rate: Rate,
    pub from: CalendarDate,
    pub to: CalendarDate,
    #[serde(with = "crate::intstr")]
    pub days: i64,
    pub amount: Money,
    pub status: ChargeStatus,
}

/// Default interest on a late obligation over `[from, to)`, ACT/360, with a
/// single half-away-from-zero rounding.
pub fn accrue_default_interest(
    ob: &PaymentObligation,
    rate: Rate,
    from: CalendarDate,
    to: CalendarDate,
) -> Result<InterestCharge, SettlementError> {
    let days = DayCount::Act360.days(from, to);
    if days <= 0 {
        return Err(SettlementError::EmptyWindow { from, to });
    }
    let num = (ob.amount.amount as i128)
        .checked_mul(rate.micros() as i128)
        .and_then(|v| v.checked_mul(days as i128))
        .ok_or(MoneyError::Overflow)?;
    let amount = div_round_half_away(num, Rate::SCALE as i128 * DayCount::Act360.denominator() as i128);
    let amount = i64::try_from(amount).map_err(|_| MoneyError::Overflow)?;
    Ok(InterestCharge {
        charge_id: content_id("int", &[&ob.obligation_id, &from.to_string(), &to.to_string()]),
        obligation_id: ob.obligation_id.clone(),
        payer: ob.payer.clone(),
        payee: ob.payee.clone(),
        principal: ob.amount,
        rate,
        from,
        to,
        days,
        amount: Money::new(ob.amount.currency, amount),
        status: ChargeStatus::Proposed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncomingPayment {
    pub payment_id: String,
    pub from_branch: BranchId,
    pub amount: Money,
    pub value_date: CalendarDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub obligation_id: ObligationId,
    pub applied: Money,
    pub discharges: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DischargeReport {
    pub payment_id: String,
    pub payer: PartyId,
    pub allocations: Vec<Allocation>,
    /// Excess kept as a credit against the payer's future obligations.
    pub credit: Money,
}

/// Resolves the paying branch to its party. A Multibranch Party (one with any
/// designated office) may pay only through its head office or a designated one.
pub fn branch_owner<'a>(branch: &str, parties: &'a [Party]) -> Result<&'a Party, SettlementError> {
    let party = parties
        .iter()
        .find(|p| p.branch(branch).is_some())
        .ok_or_else(|| SettlementError::UnknownBranch(branch.to_string()))?;
    let multibranch = party.branches.iter().any(|b| b.designated_multibranch);
    let is_head = party.head_office().is_some_and(|h| h.branch_id == branch);
    let designated = party.branch(branch).is_some_and(|b| b.designated_multibranch);
    if multibranch && !is_head && !designated {
        return Err(SettlementError::UndesignatedBranch {
            party: party.party_id.clone(),
            branch: branch.to_string(),
        });
    }
    Ok(party)
}

/// Applies an incoming payment to the payer's outstanding Due or Deferred
/// obligations in its currency, oldest first. Pure: the caller applies the
/// allocations.
pub fn match_incoming<'a, I>(
    payment: &IncomingPayment,
    parties: &[Party],
    obligations: I,
) -> Result<DischargeReport, SettlementError>
where
    I: IntoIterator<Item = &'a PaymentObligation>,
{
    let payer = branch_owner(&payment.from_branch, parties)?.party_id.clone();
    let mut candidates: Vec<&PaymentObligation> = obligations
        .into_iter()
        .filter(|o| {
            o.payer == payer
                && o.amount.currency == payment.amount.currency
                && matches!(o.status, ObligationStatus::Due | ObligationStatus::Deferred)
        })
        .collect();
    candidates.sort_by(|a, b| a.due_date.cmp(&b.due_date).then_with(|| a.obligation_id.cmp(&b.obligation_id)));
    let mut left = payment.amount.amount;
    let mut allocations = Vec::new();
    for ob in candidates {
        if left <= 0 {
            break;
        }
        let need = ob.outstanding().amount;
        let applied = need.min(left);
        left -= applied;
        allocations.push(Allocation {
            obligation_id: ob.obligation_id.clone(),
            applied: Money::new(payment.amount.currency, applied),
            discharges: applied == need,
        });
    }
    Ok(DischargeReport {
        payment_id: payment.payment_id.clone(),
        payer,
        allocations,
        credit: Money::new(payment.amount.currency, left.max(0)),
    })
}

/// A withholding tax regime applied to payments by payers in one jurisdiction.
///
/// `payee_connected` marks tax imposed because of a connection between the
/// payee and the taxing authority; such tax is borne by the payee and never
/// grossed up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxRule {
    pub rule_id: String,
    pub jurisdiction: String,
    pub rate: Rate,
    #[serde(default)]
    pub payee_connected: bool,
    pub effective_from: CalendarDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_to: Option<CalendarDate>,
}

impl TaxRule {
    pub fn in_force(&self, date: CalendarDate) -> bool {
        self.effective_from <= date && self.effective_to.is_none_or(|to| date <= to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithholdingOutcome {
    pub gross: Money,
    pub withheld: Money,
    pub net_paid: Money,
    /// Additional amount the payer owes so the payee receives the gross.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gross_up: Option<Money>,
}

pub fn apply_withholding(
    gross: Money,
    rule: &TaxRule,
    value_date: CalendarDate,
    gross_up_elected: bool,
) -> Result<WithholdingOutcome, SettlementError> {
    if !rule.in_force(value_date) {
        return Err(SettlementError::RuleExpired { rule: rule.rule_id.clone(), date: value_date });
    }
    let withheld = gross.mul_div(rule.rate.micros() as i128, Rate::SCALE as i128)?;
    let net_paid = gross.checked_sub(withheld)?;
    let gross_up = (gross_up_elected && !rule.payee_connected && !withheld.is_zero()).then_some(withheld);
    Ok(WithholdingOutcome { gross, withheld, net_paid, gross_up })
}

/// Simulated cash balances. Parties without an account have unlimited funds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounts {
    balances: BTreeMap<String, Money>,
}

fn key(party: &str, currency: Currency) -> String {
    alloc::format!("{party}/{currency}")
}

impl Accounts {
    pub fn open(&mut self, party: &str, initial: Money) {
        self.balances.insert(key(party, initial.currency), initial);
    }

    pub fn available(&self, party: &str, currency: Currency) -> Option<i64> {
        self.balances.get(&key(party, currency)).map(|m| m.amount)
    }

    pub fn credit(&mut self, party: &str, amount: Money) {
        if let Some(b) = self.balances.get_mut(&key(party, amount.currency)) {
            b.amount += amount.amount;
        }
    }

    pub fn debit(&mut self, party: &str, amount: Money) {
        if let Some(b) = self.balances.get_mut(&key(party, amount.currency)) {
            b.amount -= amount.amount;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Money)> {
        self.balances.iter()
    }
}
