//! Payment netting: same-day, same-currency obligations inside a netting
//! group are replaced by one net obligation equal to the excess of the larger
//! directional aggregate over the smaller.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::content_id;
use crate::cashflow::{ObligationId, ObligationOrigin, ObligationStatus, PaymentObligation, TransactionId};
use crate::date::CalendarDate;
use crate::money::{Currency, Money};
use crate::party::PartyId;

pub type GroupId = String;

pub const DEFAULT_GROUP: &str = "mtpn-default";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NettingError {
    #[error("unknown transaction {0}")]
    UnknownTransaction(TransactionId),
    #[error("obligation {obligation} does not belong to netting group {group}")]
    MixedGroup { group: GroupId, obligation: ObligationId },
    #[error("obligation {0} is not nettable on this date")]
    NotNettable(ObligationId),
    #[error("obligation {0} is not between the two agreement parties")]
    ForeignParty(ObligationId),
    #[error("transaction {0} still has outstanding obligations")]
    OutstandingObligations(TransactionId),
    #[error("transaction {txn} is listed in more than one netting group for the same currency")]
    OverlappingGroups { txn: TransactionId, currency: Option<Currency> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NettingMode {
    PerTransaction,
    MultipleTransaction,
}

impl NettingMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per-transaction" | "PerTransaction" => Some(Self::PerTransaction),
            "multiple-transaction" | "MultipleTransaction" => Some(Self::MultipleTransaction),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PerTransaction => "per-transaction",
            Self::MultipleTransaction => "multiple-transaction",
        }
    }
}

/// A netting group as elected in the Schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NettingGroupDef {
    pub group_id: GroupId,
    pub members: Vec<TransactionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currencies: Option<Vec<Currency>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NettingGroup {
    pub group_id: GroupId,
    pub members: BTreeSet<TransactionId>,
    pub mode: NettingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub currency_scope: Option<BTreeSet<Currency>>,
}

impl NettingGroup {
    pub fn admits(&self, currency: Currency) -> bool {
        self.currency_scope.as_ref().is_none_or(|s| s.contains(&currency))
    }
}

/// The replacement for a set of gross obligations on one value date.
///
/// A zero net has no payer or payee and settles vacuously.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetObligation {
    pub obligation_id: ObligationId,
    pub group_id: GroupId,
    pub value_date: CalendarDate,
    pub currency: Currency,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payer: Option<PartyId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payee: Option<PartyId>,
    pub amount: Money,
    pub constituents: Vec<ObligationId>,
}

impl NetObligation {
    /// The payable obligation this net stands for, if any.
    pub fn to_payment(&self) -> Option<PaymentObligation> {
        let (payer, payee) = (self.payer.clone()?, self.payee.clone()?);
        Some(PaymentObligation {
            obligation_id: self.obligation_id.clone(),
            instance_id: None,
            group_id: Some(self.group_id.clone()),
            payer,
            payee,
            amount: self.amount,
            due_date: self.value_date,
            status: ObligationStatus::Due,
            origin: ObligationOrigin::Net,
            successor: None,
            calculation: None,
            discharged_amount: 0,
            late_since: None,
        })
    }
}

/// Pure group assignment under the elections.
pub fn group_for(
    txn: &str,
    currency: Option<Currency>,
    mode: NettingMode,
    defs: &[NettingGroupDef],
) -> GroupId {
    match mode {
        NettingMode::PerTransaction => alloc::format!("txn:{txn}"),
        NettingMode::MultipleTransaction => defs
            .iter()
            .find(|g| {
                g.members.iter().any(|m| m == txn)
                    && match (&g.currencies, currency) {
                        (None, _) => true,
                        (Some(cs), Some(c)) => cs.contains(&c),
                        (Some(_), None) => true,
                    }
            })
            .map(|g| g.group_id.clone())
            .unwrap_or_else(|| DEFAULT_GROUP.to_string()),
    }
}

/// Membership of transactions in netting groups over the agreement's life.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NettingBook {
    mode: NettingMode,
    defs: Vec<NettingGroupDef>,
    groups: BTreeMap<GroupId, NettingGroup>,
    known: BTreeSet<TransactionId>,
}

impl NettingBook {
    pub fn new(mode: NettingMode, defs: Vec<NettingGroupDef>) -> Result<Self, NettingError> {
        // a transaction may sit in several elected groups only if their
        // currency scopes are disjoint
        for (i, a) in defs.iter().enumerate() {
            for b in &defs[i + 1..] {
                for m in a.members.iter().filter(|m| b.members.contains(m)) {
                    let overlap = match (&a.currencies, &b.currencies) {
                        (Some(x), Some(y)) => x.iter().find(|c| y.contains(c)).map(|c| Some(*c)),
                        (Some(x), None) | (None, Some(x)) => x.first().map(|c| Some(*c)),
                        (None, None) => Some(None),
                    };
                    if let Some(currency) = overlap {
                        return Err(NettingError::OverlappingGroups { txn: m.clone(), currency });
                    }
                }
            }
        }
        Ok(NettingBook { mode, defs, groups: BTreeMap::new(), known: BTreeSet::new() })
    }

    pub fn mode(&self) -> NettingMode {
        self.mode
    }

    /// Adds a newly instantiated transaction to its group(s).
    pub fn register(&mut self, txn: &str) -> Vec<GroupId> {
        self.known.insert(txn.to_string());
        let mut ids: Vec<(GroupId, Option<BTreeSet<Currency>>)> = Vec::new();
        match self.mode {
            NettingMode::PerTransaction => ids.push((group_for(txn, None, self.mode, &self.defs), None)),
            NettingMode::MultipleTransaction => {
                let listed: Vec<&NettingGroupDef> =
                    self.defs.iter().filter(|g| g.members.iter().any(|m| m == txn)).collect();
                let scoped_only = !listed.is_empty() && listed.iter().all(|g| g.currencies.is_some());
                for g in listed {
                    ids.push((g.group_id.clone(), g.currencies.as_ref().map(|c| c.iter().copied().collect())));
                }
                if scoped_only || ids.is_empty() {
                    ids.push((DEFAULT_GROUP.to_string(), None));
                }
            }
        }
        let mode = self.mode;
        ids.into_iter()
            .map(|(id, scope)| {
                let group = self.groups.entry(id.clone()).or_insert_with(|| NettingGroup {
                    group_id: id.clone(),
                    members: BTreeSet::new(),
                    mode,
                    currency_scope: scope,
                });
                group.members.insert(txn.to_string());
                id
            })
            .collect()
    }

    /// The group in which `txn`'s payments in `currency` net.
    pub fn assign_group(&self, txn: &str, currency: Option<Currency>) -> Result<GroupId, NettingError> {
        if !self.known.contains(txn) {
            return Err(NettingError::UnknownTransaction(txn.to_string()));
        }
        Ok(group_for(txn, currency, self.mode, &self.defs))
    }

    /// Removes `txn` from every group. Empty groups are kept for audit.
    pub fn retire_transaction(
        &mut self,
        txn: &str,
        has_outstanding: bool,
        force_reason: Option<&str>,
    ) -> Result<Vec<GroupId>, NettingError> {
        if !self.known.contains(txn) {
            return Err(NettingError::UnknownTransaction(txn.to_string()));
        }
        if has_outstanding && force_reason.is_none() {
            return Err(NettingError::OutstandingObligations(txn.to_string()));
        }
        let mut touched = Vec::new();
        for g in self.groups.values_mut() {
            if g.members.remove(txn) {
                touched.push(g.group_id.clone());
            }
        }
        Ok(touched)
    }

    pub fn group(&self, id: &str) -> Option<&NettingGroup> {
        self.groups.get(id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &NettingGroup> {
        self.groups.values()
    }

    pub fn is_known(&self, txn: &str) -> bool {
        self.known.contains(txn)
    }
}

fn in_group(group: &NettingGroup, ob: &PaymentObligation) -> bool {
    if !group.admits(ob.amount.currency) {
        return false;
    }
    match (&ob.group_id, &ob.instance_id) {
        (Some(g), _) => *g == group.group_id,
        (None, Some(txn)) => group.members.contains(txn),
        (None, None) => false,
    }
}

/// Nets one group's obligations for `date`, one result per currency.
///
/// `parties` fixes orientation: flows from `parties.0` to `parties.1` count
/// positive. Accepts Scheduled gross obligations and Due obligations being
/// re-netted on their resumption date.
pub fn net_day(
    group: &NettingGroup,
    date: CalendarDate,
    obligations: &[&PaymentObligation],
    parties: (&str, &str),
) -> Result<Vec<NetObligation>, NettingError> {
    let (a, b) = parties;
    let mut per_currency: BTreeMap<Currency, (i128, Vec<ObligationId>)> = BTreeMap::new();
    for ob in obligations {
        if !in_group(group, ob) {
            return Err(NettingError::MixedGroup {
                group: group.group_id.clone(),
                obligation: ob.obligation_id.clone(),
            });
        }
        if ob.due_date != date
            || !matches!(ob.status, ObligationStatus::Scheduled | ObligationStatus::Due)
        {
            return Err(NettingError::NotNettable(ob.obligation_id.clone()));
        }
        let signed = if ob.payer == a && ob.payee == b {
            ob.outstanding().amount as i128
        } else if ob.payer == b && ob.payee == a {
            -(ob.outstanding().amount as i128)
        } else {
            return Err(NettingError::ForeignParty(ob.obligation_id.clone()));
        };
        let slot = per_currency.entry(ob.amount.currency).or_default();
        slot.0 += signed;
        slot.1.push(ob.obligation_id.clone());
    }
    let date_str = date.to_string();
    Ok(per_currency
        .into_iter()
        .map(|(currency, (net, mut constituents))| {
            constituents.sort();
            let mut parts: Vec<&str> = alloc::vec![&group.group_id, &date_str, currency.as_str()];
            parts.extend(constituents.iter().map(String::as_str));
            let (payer, payee) = match net.signum() {
                1 => (Some(a.to_string()), Some(b.to_string())),
                -1 => (Some(b.to_string()), Some(a.to_string())),
                _ => (None, None),
            };
            NetObligation {
                obligation_id: content_id("net", &parts),
                group_id: group.group_id.clone(),
                value_date: date,
                currency,
                payer,
                payee,
                amount: Money::new(currency, net.unsigned_abs() as i64),
                constituents,
            }
        })
        .collect())
}
