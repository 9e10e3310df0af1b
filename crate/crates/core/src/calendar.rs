//! Business-day calendars and the date arithmetic built on them.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::date::{CalendarDate, Weekday};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalendarError {
    #[error("calendar {calendar} has no holiday data for {date}")]
    CalendarRangeExceeded { calendar: String, date: CalendarDate },
    #[error("unknown calendar {0}")]
    UnknownCalendar(String),
    #[error("invalid weekend day name {0:?}")]
    InvalidWeekday(String),
    #[error("calendar {0} has every day of the week as a weekend day")]
    NoBusinessDays(String),
}

/// A set of non-business days.
///
/// Holiday data is trusted only inside its coverage window. A calendar with
/// no holidays and no explicit window covers every date (weekends only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CalendarDocument", into = "CalendarDocument")]
pub struct BusinessDayCalendar {
    id: String,
    weekend: BTreeSet<Weekday>,
    holidays: BTreeSet<CalendarDate>,
    coverage: Option<(CalendarDate, CalendarDate)>,
}

/// On-disk form: `{calendar_id, weekend: [day-names], holidays: [ISO dates]}`
/// with optional `valid_from` / `valid_to` bounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarDocument {
    pub calendar_id: String,
    #[serde(default)]
    pub weekend: Vec<String>,
    #[serde(default)]
    pub holidays: Vec<CalendarDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_from: Option<CalendarDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_to: Option<CalendarDate>,
}

impl TryFrom<CalendarDocument> for BusinessDayCalendar {
    type Error = CalendarError;

    fn try_from(doc: CalendarDocument) -> Result<Self, Self::Error> {
        let weekend = doc
            .weekend
            .iter()
            .map(|n| Weekday::parse(n).ok_or_else(|| CalendarError::InvalidWeekday(n.clone())))
            .collect::<Result<BTreeSet<_>, _>>()?;
        let mut cal = BusinessDayCalendar::new(doc.calendar_id, weekend, doc.holidays)?;
        if doc.valid_from.is_some() || doc.valid_to.is_some() {
            let from = doc.valid_from.unwrap_or(CalendarDate::ymd(1, 1, 1));
            let to = doc.valid_to.unwrap_or(CalendarDate::ymd(9999, 12, 31));
            cal.coverage = Some((from, to));
        }
        Ok(cal)
    }
}

impl From<BusinessDayCalendar> for CalendarDocument {
    fn from(cal: BusinessDayCalendar) -> Self {
        let inferred = infer_coverage(&cal.holidays);
        let (valid_from, valid_to) = match cal.coverage {
            Some(c) if Some(c) != inferred => (Some(c.0), Some(c.1)),
            _ => (None, None),
        };
        CalendarDocument {
            calendar_id: cal.id,
            weekend: cal.weekend.iter().map(|d| String::from(d.name())).collect(),
            holidays: cal.holidays.into_iter().collect(),
            valid_from,
            valid_to,
        }
    }
}

fn infer_coverage(holidays: &BTreeSet<CalendarDate>) -> Option<(CalendarDate, CalendarDate)> {
    let first = holidays.first()?;
    let last = holidays.last()?;
    Some((
        CalendarDate::ymd(first.year(), 1, 1),
        CalendarDate::ymd(last.year(), 12, 31),
    ))
}

impl BusinessDayCalendar {
    /// Holiday coverage defaults to the whole calendar years spanned by the
    /// holiday list.
    pub fn new(
        id: impl Into<String>,
        weekend: impl IntoIterator<Item = Weekday>,
        holidays: impl IntoIterator<Item = CalendarDate>,
    ) -> Result<Self, CalendarError> {
        let id = id.into();
        let weekend: BTreeSet<Weekday> = weekend.into_iter().collect();
        if weekend.len() == 7 {
            return Err(CalendarError::NoBusinessDays(id));
        }
        let holidays: BTreeSet<CalendarDate> = holidays.into_iter().collect();
        let coverage = infer_coverage(&holidays);
        Ok(BusinessDayCalendar { id, weekend, holidays, coverage })
    }

    /// Saturday/Sunday weekend, no holidays, unbounded coverage.
    pub fn weekends_only(id: impl Into<String>) -> Self {
        Self::new(id, [Weekday::Saturday, Weekday::Sunday], [])
            .expect("two weekend days leave business days")
    }

    pub fn with_coverage(mut self, from: CalendarDate, to: CalendarDate) -> Self {
        self.coverage = Some((from, to));
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn holidays(&self) -> impl Iterator<Item = &CalendarDate> {
        self.holidays.iter()
    }

    pub fn covers(&self, date: CalendarDate) -> bool {
        match self.coverage {
            None => true,
            Some((from, to)) => from <= date && date <= to,
        }
    }

    fn check(&self, date: CalendarDate) -> Result<(), CalendarError> {
        if self.covers(date) {
            Ok(())
        } else {
            Err(CalendarError::CalendarRangeExceeded { calendar: self.id.clone(), date })
        }
    }

    pub fn is_weekend(&self, date: CalendarDate) -> bool {
        self.weekend.contains(&date.weekday())
    }

    /// Not a weekend day and not a holiday. Errors outside coverage.
    pub fn is_business_day(&self, date: CalendarDate) -> Result<bool, CalendarError> {
        self.check(date)?;
        Ok(!self.is_weekend(date) && !self.holidays.contains(&date))
    }

    /// The date reached after advancing `n` business days, exclusive of `start`.
    pub fn add_business_days(
        &self,
        start: CalendarDate,
        n: u32,
    ) -> Result<CalendarDate, CalendarError> {
        let mut date = start;
        let mut remaining = n;
        while remaining > 0 {
            date = date.succ();
            if self.is_business_day(date)? {
                remaining -= 1;
            }
        }
        Ok(date)
    }

    /// Number of business days in the half-open interval `(from, to]`.
    pub fn business_days_between(
        &self,
        from: CalendarDate,
        to: CalendarDate,
    ) -> Result<u32, CalendarError> {
        let mut count = 0;
        let mut date = from;
        while date < to {
            date = date.succ();
            if self.is_business_day(date)? {
                count += 1;
            }
        }
        Ok(count)
    }

    pub fn adjust(
        &self,
        date: CalendarDate,
        convention: BusinessDayConvention,
    ) -> Result<CalendarDate, CalendarError> {
        match convention {
            BusinessDayConvention::Unadjusted => Ok(date),
            BusinessDayConvention::Following => self.following(date),
            BusinessDayConvention::Preceding => self.preceding(date),
            BusinessDayConvention::ModifiedFollowing => {
                let rolled = self.following(date)?;
                if rolled.month() != date.month() {
                    self.preceding(date)
                } else {
                    Ok(rolled)
                }
            }
        }
    }

    fn following(&self, mut date: CalendarDate) -> Result<CalendarDate, CalendarError> {
        while !self.is_business_day(date)? {
            date = date.succ();
        }
        Ok(date)
    }

    fn preceding(&self, mut date: CalendarDate) -> Result<CalendarDate, CalendarError> {
        while !self.is_business_day(date)? {
            date = date.pred();
        }
        Ok(date)
    }
}

/// Free-function form of [`BusinessDayCalendar::add_business_days`].
pub fn add_business_days(
    start: CalendarDate,
    n: u32,
    cal: &BusinessDayCalendar,
) -> Result<CalendarDate, CalendarError> {
    cal.add_business_days(start, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusinessDayConvention {
    #[default]
    Following,
    ModifiedFollowing,
    Preceding,
    Unadjusted,
}

impl BusinessDayConvention {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "following" => Some(Self::Following),
            "modified-following" => Some(Self::ModifiedFollowing),
            "preceding" => Some(Self::Preceding),
            "unadjusted" => Some(Self::Unadjusted),
            _ => None,
        }
    }
}

/// Calendars available to an agreement, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CalendarSet(BTreeMap<String, BusinessDayCalendar>);

impl CalendarSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, cal: BusinessDayCalendar) {
        self.0.insert(cal.id.clone(), cal);
    }

    pub fn get(&self, id: &str) -> Result<&BusinessDayCalendar, CalendarError> {
        self.0
            .get(id)
            .ok_or_else(|| CalendarError::UnknownCalendar(id.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &BusinessDayCalendar> {
        self.0.values()
    }
}

impl FromIterator<BusinessDayCalendar> for CalendarSet {
    fn from_iter<T: IntoIterator<Item = BusinessDayCalendar>>(iter: T) -> Self {
        let mut set = CalendarSet::new();
        for cal in iter {
            set.insert(cal);
        }
        set
    }
}
