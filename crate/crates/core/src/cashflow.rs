//! Gross payment and delivery obligations generated from each transaction's
//! economic terms, and the rate fixings that feed floating legs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{BusinessDayConvention, CalendarError, CalendarSet};
use crate::canonical::content_id;
use crate::date::CalendarDate;
use crate::money::{div_round_half_away, Currency, Money, MoneyError};
use crate::party::PartyId;
use crate::rate::Rate;

pub type ObligationId = String;
pub type TransactionId = String;
pub type RateSourceId = String;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CashflowError {
    #[error("no fixing for {source_id} on {date} and the fallback escalates")]
    FixingUnavailable { source_id: RateSourceId, date: CalendarDate },
    #[error("conflicting fixing for {source_id} on {date}: have {existing}, got {incoming}")]
    ConflictingFixing {
        source_id: RateSourceId,
        date: CalendarDate,
        existing: Rate,
        incoming: Rate,
    },
    #[error("leg {0}: period dates must be strictly increasing")]
    NonIncreasingPeriods(String),
    #[error("leg {0}: notional currency differs from leg currency")]
    NotionalCurrency(String),
    #[error("illegal obligation transition {from:?} -> {to:?} for {id}")]
    IllegalTransition { id: ObligationId, from: ObligationStatus, to: ObligationStatus },
    #[error("instance {0} is not active")]
    InstanceNotActive(TransactionId),
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Money(#[from] MoneyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DayCount {
    #[serde(rename = "ACT/360")]
    Act360,
    #[serde(rename = "30/360")]
    Thirty360,
}

impl DayCount {
    pub fn denominator(self) -> i64 {
        360
    }

    /// Accrual days between `start` and `end`.
    pub fn days(self, start: CalendarDate, end: CalendarDate) -> i64 {
        match self {
            DayCount::Act360 => start.days_until(&end),
            DayCount::Thirty360 => {
                // 30/360 bond basis
                let mut d1 = i64::from(start.day());
                let mut d2 = i64::from(end.day());
                if d1 == 31 {
                    d1 = 30;
                }
                if d2 == 31 && d1 >= 30 {
                    d2 = 30;
                }
                360 * i64::from(end.year() - start.year())
                    + 30 * (i64::from(end.month()) - i64::from(start.month()))
                    + (d2 - d1)
            }
        }
    }
}

impl FromStr for DayCount {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ACT/360" => Ok(DayCount::Act360),
            "30/360" => Ok(DayCount::Thirty360),
            other => Err(alloc::format!("unknown day count {other}")),
        }
    }
}

impl fmt::Display for DayCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DayCount::Act360 => "ACT/360",
            DayCount::Thirty360 => "30/360",
        })
    }
}

/// How an exact period amount is brought to whole minor units.
///
/// `Floor` is never used by a correct engine; it exists so a replica can be
/// deliberately perturbed in determinism tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    Floor,
}

impl Rounding {
    pub fn apply(self, num: i128, den: i128) -> i128 {
        match self {
            Rounding::HalfAwayFromZero => div_round_half_away(num, den),
            Rounding::Floor => num.div_euclid(den),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LegRate {
    Fixed { rate: Rate },
    Floating { source: RateSourceId, spread: Rate },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy")]
pub enum FallbackPolicy {
    UseLastPublished {
        #[serde(with = "crate::intstr")]
        max_age_business_days: u32,
    },
    EscalateImmediately,
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        FallbackPolicy::UseLastPublished { max_age_business_days: 5 }
    }
}

impl FromStr for FallbackPolicy {
    type Err = String;

    /// `"use-last-published:<days>"` or `"escalate-immediately"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "escalate-immediately" {
            return Ok(FallbackPolicy::EscalateImmediately);
        }
        if let Some(days) = s.strip_prefix("use-last-published:") {
            let max_age_business_days =
                days.parse().map_err(|_| alloc::format!("bad fallback age in {s:?}"))?;
            return Ok(FallbackPolicy::UseLastPublished { max_age_business_days });
        }
        Err(alloc::format!("unknown fallback policy {s:?}"))
    }
}

/// One side of a swap: who pays what on which accrual periods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegSchedule {
    pub leg_id: String,
    pub instance_id: TransactionId,
    pub payer: PartyId,
    pub payee: PartyId,
    pub currency: Currency,
    pub notional: Money,
    /// Unadjusted period boundaries; period `k` runs `[dates[k], dates[k+1])`.
    pub period_dates: Vec<CalendarDate>,
    pub rate: LegRate,
    pub day_count: DayCount,
    pub payment_calendar: String,
    pub convention: BusinessDayConvention,
    pub fallback: FallbackPolicy,
}

impl LegSchedule {
    pub fn validate(&self) -> Result<(), CashflowError> {
        if self.period_dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CashflowError::NonIncreasingPeriods(self.leg_id.clone()));
        }
        if self.notional.currency != self.currency {
            return Err(CashflowError::NotionalCurrency(self.leg_id.clone()));
        }
        Ok(())
    }

    pub fn periods(&self) -> impl Iterator<Item = (CalendarDate, CalendarDate)> + '_ {
        self.period_dates.windows(2).map(|w| (w[0], w[1]))
    }
}

/// A fixed-amount payment on a known date (e.g. a forward's purchase price).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledPayment {
    pub flow_id: String,
    pub instance_id: TransactionId,
    pub payer: PartyId,
    pub payee: PartyId,
    pub amount: Money,
    pub date: CalendarDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledDelivery {
    pub flow_id: String,
    pub instance_id: TransactionId,
    pub deliverer: PartyId,
    pub recipient: PartyId,
    pub asset_id: String,
    #[serde(with = "crate::intstr")]
    pub quantity: u64,
    pub date: CalendarDate,
}

/// Everything a product contributes to the payment layer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductFlows {
    pub legs: Vec<LegSchedule>,
    pub payments: Vec<ScheduledPayment>,
    pub deliveries: Vec<ScheduledDelivery>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateFixing {
    pub source: RateSourceId,
    pub date: CalendarDate,
    pub value: Rate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixingAck {
    Accepted,
    Duplicate,
}

/// Journaled fixings, one per (source, date), immutable once stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixingStore {
    fixings: BTreeMap<(RateSourceId, CalendarDate), Rate>,
}

impl FixingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest(&mut self, f: &RateFixing) -> Result<FixingAck, CashflowError> {
        let key = (f.source.clone(), f.date);
        match self.fixings.get(&key) {
            Some(existing) if *existing == f.value => Ok(FixingAck::Duplicate),
            Some(existing) => Err(CashflowError::ConflictingFixing {
                source_id: f.source.clone(),
                date: f.date,
                existing: *existing,
                incoming: f.value,
            }),
            None => {
                self.fixings.insert(key, f.value);
                Ok(FixingAck::Accepted)
            }
        }
    }

    pub fn get(&self, source: &str, date: CalendarDate) -> Option<Rate> {
        self.fixings.get(&(source.to_string(), date)).copied()
    }

    /// Most recent fixing for `source` strictly before `date`.
    pub fn last_before(&self, source: &str, date: CalendarDate) -> Option<(CalendarDate, Rate)> {
        let lo = (source.to_string(), CalendarDate::ymd(1, 1, 1));
        let hi = (source.to_string(), date);
        self.fixings
            .range(lo..hi)
            .next_back()
            .map(|((_, d), r)| (*d, *r))
    }

    pub fn len(&self) -> usize {
        self.fixings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixings.is_empty()
    }
}

/// Outcome of looking up the rate for one accrual period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum RateResolution {
    Fixing { rate: Rate },
    FallbackApplied {
        rate: Rate,
        published: CalendarDate,
        #[serde(with = "crate::intstr")]
        age_business_days: u32,
    },
    Escalation { source: RateSourceId, date: CalendarDate },
}

impl RateResolution {
    pub fn rate(&self) -> Option<Rate> {
        match self {
            RateResolution::Fixing { rate } | RateResolution::FallbackApplied { rate, .. } => {
                Some(*rate)
            }
            RateResolution::Escalation { .. } => None,
        }
    }
}

/// The index value for `leg` on `date` (before spread), applying the leg's
/// disruption fallback when the fixing is missing.
pub fn resolve_rate(
    leg: &LegSchedule,
    date: CalendarDate,
    policy: FallbackPolicy,
    fixings: &FixingStore,
    calendars: &CalendarSet,
) -> Result<RateResolution, CalendarError> {
    let source = match &leg.rate {
        LegRate::Fixed { rate } => return Ok(RateResolution::Fixing { rate: *rate }),
        LegRate::Floating { source, .. } => source,
    };
    if let Some(rate) = fixings.get(source, date) {
        return Ok(RateResolution::Fixing { rate });
    }
    let escalate = RateResolution::Escalation { source: source.clone(), date };
    let FallbackPolicy::UseLastPublished { max_age_business_days } = policy else {
        return Ok(escalate);
    };
    let Some((published, rate)) = fixings.last_before(source, date) else {
        return Ok(escalate);
    };
    let cal = calendars.get(&leg.payment_calendar)?;
    let age = cal.business_days_between(published, date)?;
    if age <= max_age_business_days {
        Ok(RateResolution::FallbackApplied { rate, published, age_business_days: age })
    } else {
        Ok(escalate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObligationStatus {
    Scheduled,
    Netted,
    Due,
    Paid,
    Suspended,
    Deferred,
    Discharged,
}

impl ObligationStatus {
    /// Edges of the obligation lifecycle graph.
    pub fn can_transition_to(self, to: ObligationStatus) -> bool {
        use ObligationStatus::*;
        matches!(
            (self, to),
            (Scheduled, Netted)
                | (Scheduled, Due)
                | (Due, Paid)
                | (Due, Suspended)
                | (Due, Deferred)
                | (Due, Discharged)
                | (Due, Netted)
                | (Suspended, Due)
                | (Deferred, Due)
                | (Deferred, Paid)
                | (Deferred, Discharged)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Netted | Self::Paid | Self::Discharged)
    }

    pub fn is_outstanding(self) -> bool {
        matches!(self, Self::Scheduled | Self::Due | Self::Suspended | Self::Deferred)
    }

    pub fn parse(s: &str) -> Option<Self> {
        use ObligationStatus::*;
        [Scheduled, Netted, Due, Paid, Suspended, Deferred, Discharged]
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Scheduled => "Scheduled",
            Self::Netted => "Netted",
            Self::Due => "Due",
            Self::Paid => "Paid",
            Self::Suspended => "Suspended",
            Self::Deferred => "Deferred",
            Self::Discharged => "Discharged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObligationOrigin {
    Gross,
    Net,
    Interest,
    GrossUp,
}

/// The inputs that produced a period amount, kept for audit and re-derivation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmountCalculation {
    pub notional: Money,
    pub rate: Rate,
    pub day_count: DayCount,
    #[serde(with = "crate::intstr")]
    pub days: i64,
    #[serde(with = "crate::intstr")]
    pub denominator: i64,
    pub resolution: RateResolution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentObligation {
    pub obligation_id: ObligationId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<TransactionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    pub payer: PartyId,
    pub payee: PartyId,
    pub amount: Money,
    pub due_date: CalendarDate,
    pub status: ObligationStatus,
    pub origin: ObligationOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub successor: Option<ObligationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calculation: Option<AmountCalculation>,
    /// Minor units already discharged by incoming payments or credit.
    #[serde(with = "crate::intstr", default)]
    pub discharged_amount: i64,
    /// Original due date, kept once payment slips (deferral or suspension).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_since: Option<CalendarDate>,
}

impl PaymentObligation {
    pub fn outstanding(&self) -> Money {
        Money::new(self.amount.currency, self.amount.amount - self.discharged_amount)
    }

    pub fn transition(&mut self, to: ObligationStatus) -> Result<ObligationStatus, CashflowError> {
        let from = self.status;
        if !from.can_transition_to(to) {
            return Err(CashflowError::IllegalTransition {
                id: self.obligation_id.clone(),
                from,
                to,
            });
        }
        self.status = to;
        Ok(from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryObligation {
    pub obligation_id: ObligationId,
    pub instance_id: TransactionId,
    pub deliverer: PartyId,
    pub recipient: PartyId,
    pub asset_id: String,
    #[serde(with = "crate::intstr")]
    pub quantity: u64,
    pub due_date: CalendarDate,
    pub status: ObligationStatus,
}

impl DeliveryObligation {
    pub fn transition(&mut self, to: ObligationStatus) -> Result<ObligationStatus, CashflowError> {
        let from = self.status;
        if !from.can_transition_to(to) || to == ObligationStatus::Netted {
            return Err(CashflowError::IllegalTransition {
                id: self.obligation_id.clone(),
                from,
                to,
            });
        }
        self.status = to;
        Ok(from)
    }
}

/// `notional × rate × days / denominator`, rounded once to the minor unit.
pub fn period_amount(
    notional: Money,
    rate: Rate,
    days: i64,
    denominator: i64,
    rounding: Rounding,
) -> Result<Money, MoneyError> {
    let num = (notional.amount as i128)
        .checked_mul(rate.micros() as i128)
        .and_then(|v| v.checked_mul(days as i128))
        .ok_or(MoneyError::Overflow)?;
    let den = Rate::SCALE as i128 * denominator as i128;
    let amount = i64::try_from(rounding.apply(num, den)).map_err(|_| MoneyError::Overflow)?;
    Ok(Money::new(notional.currency, amount))
}

/// Result of one generation pass; escalations do not block other periods.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationReport {
    pub payments: Vec<PaymentObligation>,
    pub deliveries: Vec<DeliveryObligation>,
    pub escalations: Vec<(RateSourceId, CalendarDate)>,
}

/// Inputs shared by every generation call.
pub struct GenerationContext<'a> {
    pub fixings: &'a FixingStore,
    pub calendars: &'a CalendarSet,
    pub existing: &'a BTreeSet<ObligationId>,
    pub rounding: Rounding,
}

pub fn obligation_id(instance_id: &str, flow_id: &str, period_end: CalendarDate) -> ObligationId {
    content_id("ob", &[instance_id, flow_id, &period_end.to_string()])
}

/// Generates every obligation whose period ends on or before `up_to` and is
/// not already in `ctx.existing`. Floating legs fix at period start.
pub fn generate(
    flows: &ProductFlows,
    up_to: CalendarDate,
    ctx: &GenerationContext<'_>,
) -> Result<GenerationReport, CashflowError> {
    let mut report = GenerationReport::default();
    for leg in &flows.legs {
        leg.validate()?;
        if leg.notional.is_zero() {
            continue;
        }
        let cal = ctx.calendars.get(&leg.payment_calendar)?;
        for (start, end) in leg.periods() {
            if end > up_to {
                break;
            }
            let id = obligation_id(&leg.instance_id, &leg.leg_id, end);
            if ctx.existing.contains(&id) {
                continue;
            }
            let resolution = resolve_rate(leg, start, leg.fallback, ctx.fixings, ctx.calendars)?;
            let Some(index) = resolution.rate() else {
                if let RateResolution::Escalation { source, date } = resolution {
                    report.escalations.push((source, date));
                }
                continue;
            };
            let rate = match &leg.rate {
                LegRate::Fixed { .. } => index,
                LegRate::Floating { spread, .. } => {
                    index.checked_add(*spread).ok_or(MoneyError::Overflow)?
                }
            };
            let days = leg.day_count.days(start, end);
            let denominator = leg.day_count.denominator();
            let amount = period_amount(leg.notional, rate, days, denominator, ctx.rounding)?;
            if amount.is_zero() {
                continue;
            }
            let (payer, payee) = if amount.amount > 0 {
                (leg.payer.clone(), leg.payee.clone())
            } else {
                (leg.payee.clone(), leg.payer.clone())
            };
            report.payments.push(PaymentObligation {
                obligation_id: id,
                instance_id: Some(leg.instance_id.clone()),
                group_id: None,
                payer,
                payee,
                amount: amount.abs(),
                due_date: cal.adjust(end, leg.convention)?,
                status: ObligationStatus::Scheduled,
                origin: ObligationOrigin::Gross,
                successor: None,
                calculation: Some(AmountCalculation {
                    notional: leg.notional,
                    rate,
                    day_count: leg.day_count,
                    days,
                    denominator,
                    resolution,
                }),
                discharged_amount: 0,
                late_since: None,
            });
        }
    }
    for p in &flows.payments {
        if p.date > up_to || !p.amount.is_positive() {
            continue;
        }
        let id = obligation_id(&p.instance_id, &p.flow_id, p.date);
        if ctx.existing.contains(&id) {
            continue;
        }
        report.payments.push(PaymentObligation {
            obligation_id: id,
            instance_id: Some(p.instance_id.clone()),
            group_id: None,
            payer: p.payer.clone(),
            payee: p.payee.clone(),
            amount: p.amount,
            due_date: p.date,
            status: ObligationStatus::Scheduled,
            origin: ObligationOrigin::Gross,
            successor: None,
            calculation: None,
            discharged_amount: 0,
            late_since: None,
        });
    }
    for d in &flows.deliveries {
        if d.date > up_to || d.quantity == 0 {
            continue;
        }
        let id = obligation_id(&d.instance_id, &d.flow_id, d.date);
        if ctx.existing.contains(&id) {
            continue;
        }
        report.deliveries.push(DeliveryObligation {
            obligation_id: id,
            instance_id: d.instance_id.clone(),
            deliverer: d.deliverer.clone(),
            recipient: d.recipient.clone(),
            asset_id: d.asset_id.clone(),
            quantity: d.quantity,
            due_date: d.date,
            status: ObligationStatus::Due,
        });
    }
    Ok(report)
}

/// Strict form: any period whose rate escalates is an error.
pub fn generate_obligations(
    flows: &ProductFlows,
    up_to: CalendarDate,
    ctx: &GenerationContext<'_>,
) -> Result<GenerationReport, CashflowError> {
    let report = generate(flows, up_to, ctx)?;
    if let Some((source_id, date)) = report.escalations.first().cloned() {
        return Err(CashflowError::FixingUnavailable { source_id, date });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::BusinessDayCalendar;
    use alloc::vec;

    fn d(s: &str) -> CalendarDate {
        s.parse().unwrap()
    }

    fn cals() -> CalendarSet {
        [BusinessDayCalendar::weekends_only("WEEKENDS")].into_iter().collect()
    }

    fn fixed_leg(notional: i64, rate: Rate, dates: Vec<CalendarDate>) -> LegSchedule {
        LegSchedule {
            leg_id: "fixed".into(),
            instance_id: "T1".into(),
            payer: "A".into(),
            payee: "B".into(),
            currency: Currency::USD,
            notional: Money::new(Currency::USD, notional),
            period_dates: dates,
            rate: LegRate::Fixed { rate },
            day_count: DayCount::Act360,
            payment_calendar: "WEEKENDS".into(),
            convention: BusinessDayConvention::Following,
            fallback: FallbackPolicy::default(),
        }
    }

    fn float_leg(dates: Vec<CalendarDate>, fallback: FallbackPolicy) -> LegSchedule {
        LegSchedule {
            leg_id: "float".into(),
            rate: LegRate::Floating { source: "SOFR-PROXY".into(), spread: Rate::ZERO },
            payer: "B".into(),
            payee: "A".into(),
            fallback,
            ..fixed_leg(1_000_000_00, Rate::ZERO, dates)
        }
    }

    fn run(flows: &ProductFlows, up_to: &str, fixings: &FixingStore) -> Result<GenerationReport, CashflowError> {
        let cals = cals();
        let existing = BTreeSet::new();
        let ctx = GenerationContext { fixings, calendars: &cals, existing: &existing, rounding: Rounding::default() };
        generate_obligations(flows, d(up_to), &ctx)
    }

    #[test]
    fn fixed_ninety_day_period() {
        // 2024-01-02 .. 2024-04-01 is 90 actual days
        let leg = fixed_leg(1_000_000_00, Rate::from_percent(5), vec![d("2024-01-02"), d("2024-04-01")]);
        let flows = ProductFlows { legs: vec![leg], ..Default::default() };
        let report = run(&flows, "2024-04-01", &FixingStore::new()).unwrap();
        assert_eq!(report.payments.len(), 1);
        // oracle: 1,000,000.00 * 0.05 * 90/360 = 12,500.00
        let oracle = 1_000_000_00i128 * 5 * 90 / (100 * 360);
        assert_eq!(report.payments[0].amount, Money::new(Currency::USD, oracle as i64));
        assert_eq!(report.payments[0].amount.amount, 12_500_00);
        assert_eq!(report.payments[0].due_date, d("2024-04-01"));
    }

    #[test]
    fn zero_notional_generates_nothing() {
        let leg = fixed_leg(0, Rate::from_percent(5), vec![d("2024-01-02"), d("2024-04-01")]);
        let flows = ProductFlows { legs: vec![leg], ..Default::default() };
        assert!(run(&flows, "2025-01-01", &FixingStore::new()).unwrap().payments.is_empty());
    }

    #[test]
    fn missing_fixing_escalates() {
        let leg = float_leg(vec![d("2024-03-15"), d("2024-06-17")], FallbackPolicy::EscalateImmediately);
        let flows = ProductFlows { legs: vec![leg], ..Default::default() };
        let err = run(&flows, "2024-06-30", &FixingStore::new()).unwrap_err();
        assert_eq!(
            err,
            CashflowError::FixingUnavailable { source_id: "SOFR-PROXY".into(), date: d("2024-03-15") }
        );
    }

    #[test]
    fn negative_amount_flips_direction() {
        let leg = fixed_leg(1_000_000_00, Rate::from_bps(-50), vec![d("2024-01-02"), d("2024-04-01")]);
        let flows = ProductFlows { legs: vec![leg], ..Default::default() };
        let ob = &run(&flows, "2024-04-01", &FixingStore::new()).unwrap().payments[0];
        assert_eq!((ob.payer.as_str(), ob.payee.as_str()), ("B", "A"));
        assert_eq!(ob.amount.amount, 1_250_00);
    }

    #[test]
    fn weekend_payment_rolls_forward() {
        let leg = fixed_leg(1_000_000_00, Rate::from_percent(5), vec![d("2024-01-02"), d("2024-03-30")]);
        let flows = ProductFlows { legs: vec![leg], ..Default::default() };
        let ob = &run(&flows, "2024-03-30", &FixingStore::new()).unwrap().payments[0];
        assert_eq!(ob.due_date, d("2024-04-01"));
    }

    #[test]
    fn ingest_fixing_examples() {
        let mut store = FixingStore::new();
        let f = RateFixing { source: "SOFR-PROXY".into(), date: d("2024-03-15"), value: "0.053".parse().unwrap() };
        assert_eq!(store.ingest(&f), Ok(FixingAck::Accepted));
        assert_eq!(store.ingest(&f), Ok(FixingAck::Duplicate));
        let g = RateFixing { value: "0.054".parse().unwrap(), ..f };
        assert!(matches!(store.ingest(&g), Err(CashflowError::ConflictingFixing { .. })));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn resolve_rate_fallback_within_age() {
        let cals = cals();
        let mut store = FixingStore::new();
        // Wed 2024-03-13 published; Fri 2024-03-15 missing: 2 business days old
        store.ingest(&RateFixing { source: "SOFR-PROXY".into(), date: d("2024-03-13"), value: Rate::from_bps(530) }).unwrap();
        let leg = float_leg(vec![d("2024-03-15"), d("2024-06-17")], FallbackPolicy::default());
        let r = resolve_rate(&leg, d("2024-03-15"), FallbackPolicy::default(), &store, &cals).unwrap();
        // scan-back oracle: walk back day by day to the last journaled fixing,
        // counting weekdays passed on the way
        let mut age = 0;
        let mut day = d("2024-03-15");
        let published = loop {
            if let Some(v) = store.get("SOFR-PROXY", day.pred()) {
                let wd = day.weekday();
                if !matches!(wd, crate::date::Weekday::Saturday | crate::date::Weekday::Sunday) {
                    age += 1;
                }
                break (day.pred(), v);
            }
            let wd = day.weekday();
            if !matches!(wd, crate::date::Weekday::Saturday | crate::date::Weekday::Sunday) {
                age += 1;
            }
            day = day.pred();
        };
        assert_eq!(
            r,
            RateResolution::FallbackApplied { rate: published.1, published: published.0, age_business_days: age }
        );
        assert_eq!(age, 2);
    }

    #[test]
    fn resolve_rate_beyond_age_escalates() {
        let cals = cals();
        let mut store = FixingStore::new();
        store.ingest(&RateFixing { source: "SOFR-PROXY".into(), date: d("2024-03-01"), value: Rate::from_bps(530) }).unwrap();
        let leg = float_leg(vec![d("2024-03-15"), d("2024-06-17")], FallbackPolicy::default());
        let r = resolve_rate(&leg, d("2024-03-15"), FallbackPolicy::default(), &store, &cals).unwrap();
        assert_eq!(r, RateResolution::Escalation { source: "SOFR-PROXY".into(), date: d("2024-03-15") });
        store.ingest(&RateFixing { source: "SOFR-PROXY".into(), date: d("2024-03-15"), value: Rate::from_bps(531) }).unwrap();
        let r = resolve_rate(&leg, d("2024-03-15"), FallbackPolicy::default(), &store, &cals).unwrap();
        assert_eq!(r, RateResolution::Fixing { rate: Rate::from_bps(531) });
    }

    #[test]
    fn thirty_360_basis() {
        assert_eq!(DayCount::Thirty360.days(d("2024-01-31"), d("2024-03-31")), 60);
        assert_eq!(DayCount::Thirty360.days(d("2024-01-15"), d("2024-07-15")), 180);
        assert_eq!(DayCount::Thirty360.days(d("2024-02-29"), d("2024-03-31")), 32);
    }

    #[test]
    fn lifecycle_graph_rejects_reversals() {
        use ObligationStatus::*;
        assert!(!Paid.can_transition_to(Due));
        assert!(!Netted.can_transition_to(Due));
        assert!(!Discharged.can_transition_to(Paid));
        assert!(Suspended.can_transition_to(Due));
        assert!(!Suspended.can_transition_to(Paid));
    }

    #[test]
    fn regeneration_is_idempotent() {
        let leg = fixed_leg(
            1_000_000_00,
            Rate::from_percent(5),
            vec![d("2024-01-02"), d("2024-02-01"), d("2024-03-01"), d("2024-04-01")],
        );
        let flows = ProductFlows { legs: vec![leg], ..Default::default() };
        let cals = cals();
        let store = FixingStore::new();
        let mut existing = BTreeSet::new();
        let first = {
            let ctx = GenerationContext { fixings: &store, calendars: &cals, existing: &existing, rounding: Rounding::default() };
            generate(&flows, d("2024-03-01"), &ctx).unwrap()
        };
        assert_eq!(first.payments.len(), 2);
        existing.extend(first.payments.iter().map(|p| p.obligation_id.clone()));
        let ctx = GenerationContext { fixings: &store, calendars: &cals, existing: &existing, rounding: Rounding::default() };
        assert!(generate(&flows, d("2024-03-01"), &ctx).unwrap().payments.is_empty());
        assert_eq!(generate(&flows, d("2024-04-01"), &ctx).unwrap().payments.len(), 1);
    }
}
