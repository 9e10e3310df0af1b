//! Product templates: turn a Transaction's resolved terms into cashflows.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::calendar::BusinessDayConvention;
use crate::cashflow::{
    DayCount, FallbackPolicy, LegRate, LegSchedule, ProductFlows, ScheduledDelivery, ScheduledPayment,
};
use crate::date::CalendarDate;
use crate::money::{Currency, Money};
use crate::rate::Rate;
use crate::template::{TemplateError, TermLookup};

pub trait ProductTemplate: Send + Sync {
    fn id(&self) -> &str;
    /// The Confirmation `product_type` this template accepts.
    fn product_type(&self) -> &str;
    fn required_terms(&self) -> &[&str];
    fn build(&self, instance_id: &str, terms: &TermLookup<'_>, parties: [&str; 2]) -> Result<ProductFlows, TemplateError>;
}

/// Templates keyed by id. Open for extension through [`ProductRegistry::register`].
#[derive(Clone, Default)]
pub struct ProductRegistry {
    templates: BTreeMap<String, Arc<dyn ProductTemplate>>,
}

impl core::fmt::Debug for ProductRegistry {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_list().entries(self.templates.keys()).finish()
    }
}

impl ProductRegistry {
    pub fn standard() -> Self {
        let mut r = ProductRegistry::default();
        r.register(Arc::new(FixedFloatSwap));
        r.register(Arc::new(PhysicalForward));
        r
    }

    pub fn register(&mut self, t: Arc<dyn ProductTemplate>) {
        self.templates.insert(t.id().into(), t);
    }

    pub fn get(&self, id: &str) -> Option<&dyn ProductTemplate> {
        self.templates.get(id).map(|t| t.as_ref())
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.templates.keys()
    }
}

fn invalid(name: &str, value: &str, reason: &str) -> TemplateError {
    TemplateError::InvalidTerm { name: name.into(), value: value.into(), reason: reason.into() }
}

fn counterparty<'a>(terms: &TermLookup<'_>, name: &str, parties: [&'a str; 2]) -> Result<(&'a str, &'a str), TemplateError> {
    let p = terms.get(name)?;
    if p == parties[0] {
        Ok((parties[0], parties[1]))
    } else if p == parties[1] {
        Ok((parties[1], parties[0]))
    } else {
        Err(invalid(name, p, "not a party to the agreement"))
    }
}

fn optional<T>(terms: &TermLookup<'_>, name: &str, default: T) -> Result<T, TemplateError>
where
    T: core::str::FromStr,
    T::Err: core::fmt::Display,
{
    if terms.terms.contains_key(name) {
        terms.parse(name)
    } else {
        Ok(default)
    }
}

fn convention(terms: &TermLookup<'_>) -> Result<BusinessDayConvention, TemplateError> {
    let v = terms.get("business-day-convention")?;
    BusinessDayConvention::parse(v).ok_or_else(|| invalid("business-day-convention", v, "unknown convention"))
}

/// Unadjusted period dates from `start` every `months` until `end`.
pub fn period_dates(start: CalendarDate, end: CalendarDate, months: u32) -> Result<Vec<CalendarDate>, TemplateError> {
    if months == 0 || end <= start {
        return Err(invalid("payment-frequency-months", &format!("{months}"), "empty schedule"));
    }
    let mut dates = vec![start];
    let mut k = 1;
    loop {
        let next = start
            .add_months((k * months) as i32)
            .map_err(|_| invalid("termination-date", &format!("{end}"), "out of range"))?;
        if next >= end {
            dates.push(end);
            return Ok(dates);
        }
        dates.push(next);
        k += 1;
    }
}

/// Fixed-versus-floating interest rate swap.
pub struct FixedFloatSwap;

impl ProductTemplate for FixedFloatSwap {
    fn id(&self) -> &str {
        "irs-fixed-float"
    }

    fn product_type(&self) -> &str {
        "interest-rate-swap"
    }

    fn required_terms(&self) -> &[&str] {
        &[
            "notional",
            "currency",
            "effective-date",
            "termination-date",
            "fixed-rate",
            "fixed-payer",
            "floating-rate-source",
            "payment-calendar",
        ]
    }

    fn build(&self, id: &str, terms: &TermLookup<'_>, parties: [&str; 2]) -> Result<ProductFlows, TemplateError> {
        let currency: Currency = terms.parse("currency")?;
        let notional = Money::new(currency, terms.parse("notional")?);
        let start: CalendarDate = terms.parse("effective-date")?;
        let end: CalendarDate = terms.parse("termination-date")?;
        let months: u32 = optional(terms, "payment-frequency-months", 3)?;
        let dates = period_dates(start, end, months)?;
        let (fixed_payer, float_payer) = counterparty(terms, "fixed-payer", parties)?;
        let fixed_dc: DayCount = optional(terms, "fixed-day-count", DayCount::Thirty360)?;
        let float_dc: DayCount = optional(terms, "floating-day-count", DayCount::Act360)?;
        let spread: Rate = optional(terms, "spread", Rate::ZERO)?;
        let fallback: FallbackPolicy = optional(terms, "fallback-policy", FallbackPolicy::default())?;
        let calendar = String::from(terms.get("payment-calendar")?);
        let convention = convention(terms)?;
        let leg = |leg_id: &str, payer: &str, payee: &str, rate: LegRate, day_count: DayCount| LegSchedule {
            leg_id: leg_id.into(),
            instance_id: id.into(),
            payer: payer.into(),
            payee: payee.into(),
            currency,
            notional,
            period_dates: dates.clone(),
            rate,
            day_count,
            payment_calendar: calendar.clone(),
            convention,
            fallback,
        };
        let legs = vec![
            leg("fixed", fixed_payer, float_payer, LegRate::Fixed { rate: terms.parse("fixed-rate")? }, fixed_dc),
            leg(
                "floating",
                float_payer,
                fixed_payer,
                LegRate::Floating { source: terms.get("floating-rate-source")?.into(), spread },
                float_dc,
            ),
        ];
        for l in &legs {
            l.validate().map_err(|e| invalid("period-dates", id, &format!("{e}")))?;
        }
        Ok(ProductFlows { legs, payments: Vec::new(), deliveries: Vec::new() })
    }
}

/// Physically settled forward: the seller delivers, the buyer pays, on one date.
pub struct PhysicalForward;

impl ProductTemplate for PhysicalForward {
    fn id(&self) -> &str {
        "physical-forward"
    }

    fn product_type(&self) -> &str {
        "physical-forward"
    }

    fn required_terms(&self) -> &[&str] {
        &["seller", "asset-id", "quantity", "price", "currency", "delivery-date"]
    }

    fn build(&self, id: &str, terms: &TermLookup<'_>, parties: [&str; 2]) -> Result<ProductFlows, TemplateError> {
        let (seller, buyer) = counterparty(terms, "seller", parties)?;
        let currency: Currency = terms.parse("currency")?;
        let date: CalendarDate = terms.parse("delivery-date")?;
        Ok(ProductFlows {
            legs: Vec::new(),
            payments: vec![ScheduledPayment {
                flow_id: "price".into(),
                instance_id: id.into(),
                payer: buyer.into(),
                payee: seller.into(),
                amount: Money::new(currency, terms.parse("price")?),
                date,
            }],
            deliveries: vec![ScheduledDelivery {
                flow_id: "asset".into(),
                instance_id: id.into(),
                deliverer: seller.into(),
                recipient: buyer.into(),
                asset_id: terms.get("asset-id")?.into(),
                quantity: terms.parse("quantity")?,
                date,
            }],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::party::Party;
    use alloc::string::ToString;
    use crate::template::*;

    fn agreement() -> AgreementTemplate {
        let e = ScheduleElections {
            multiple_transaction_netting: Some(true),
            cross_default_threshold: Some(Money::new(Currency::USD, 10_000_000_00)),
            ..Default::default()
        };
        apply_schedule(&standard_master(), &e, &[Party::simple("A", "A", "US"), Party::simple("B", "B", "GB")]).unwrap()
    }

    fn irs() -> Confirmation {
        let terms = [
            ("notional", "1000000000"),
            ("currency", "USD"),
            ("effective-date", "2024-03-04"),
            ("termination-date", "2025-03-04"),
            ("fixed-rate", "0.05"),
            ("fixed-payer", "A"),
            ("floating-rate-source", "SOFR-PROXY"),
            ("payment-calendar", "WEEKENDS"),
        ];
        Confirmation {
            transaction_id: "T1".into(),
            product_type: "interest-rate-swap".into(),
            terms: terms.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn irs_instantiates() {
        let reg = ProductRegistry::standard();
        let a = agreement();
        let i = instantiate(&a, &irs(), "irs-fixed-float", &reg).unwrap();
        assert_eq!(i.state, InstanceState::Active);
        assert_eq!(i.flows.legs.len(), 2);
        assert_eq!(i.flows.legs[0].period_dates.len(), 5);
        let conv = resolve_term(&i, "business-day-convention").unwrap();
        assert_eq!(conv.provenance, Provenance::Master);
        assert_eq!(resolve_term(&i, "fixed-rate").unwrap().provenance, Provenance::Confirmation);
        assert_eq!(resolve_term(&i, "netting-mode").unwrap().provenance, Provenance::Schedule);
        assert_eq!(resolve_term(&i, "nope"), Err(TemplateError::UnknownTerm("nope".into())));
        // same inputs, same instance
        assert_eq!(i, instantiate(&a, &irs(), "irs-fixed-float", &reg).unwrap());
    }

    #[test]
    fn instantiate_errors() {
        let reg = ProductRegistry::standard();
        let a = agreement();
        let mut c = irs();
        c.terms.remove("notional");
        assert_eq!(
            instantiate(&a, &c, "irs-fixed-float", &reg),
            Err(TemplateError::UnresolvedPlaceholder(alloc::vec!["notional".into()]))
        );
        let mut eq = irs();
        eq.product_type = "equity-swap".into();
        assert!(matches!(instantiate(&a, &eq, "irs-fixed-float", &reg), Err(TemplateError::ProductMismatch { .. })));
        assert!(matches!(instantiate(&a, &irs(), "cds", &reg), Err(TemplateError::UnknownProduct(_))));
    }

    #[test]
    fn forward_flows() {
        let c = Confirmation {
            transaction_id: "F1".into(),
            product_type: "physical-forward".into(),
            terms: [
                ("seller", "B"),
                ("asset-id", "XAU"),
                ("quantity", "100"),
                ("price", "20000000"),
                ("currency", "USD"),
                ("delivery-date", "2024-06-03"),
            ]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        };
        let i = instantiate(&agreement(), &c, "physical-forward", &ProductRegistry::standard()).unwrap();
        assert_eq!(i.flows.payments[0].payer, "A");
        assert_eq!(i.flows.deliveries[0].deliverer, "B");
    }

    #[test]
    fn schedule_dates() {
        let d = |s: &str| s.parse::<CalendarDate>().unwrap();
        assert_eq!(
            period_dates(d("2024-01-31"), d("2024-05-15"), 1).unwrap(),
            alloc::vec![d("2024-01-31"), d("2024-02-29"), d("2024-03-31"), d("2024-04-30"), d("2024-05-15")]
        );
    }
}
