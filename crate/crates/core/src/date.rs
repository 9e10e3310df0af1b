use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DateError {
    #[error("invalid calendar date {0}")]
    Invalid(String),
    #[error("date arithmetic out of range")]
    OutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weekday {
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
    Sunday,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Monday,
        Weekday::Tuesday,
        Weekday::Wednesday,
        Weekday::Thursday,
        Weekday::Friday,
        Weekday::Saturday,
        Weekday::Sunday,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn parse(name: &str) -> Option<Weekday> {
        let lower = name.trim().to_ascii_lowercase();
        Weekday::ALL.into_iter().find(|d| {
            let full = d.name();
            lower == full || (lower.len() == 3 && full.starts_with(lower.as_str()))
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Weekday::Monday => "monday",
            Weekday::Tuesday => "tuesday",
            Weekday::Wednesday => "wednesday",
            Weekday::Thursday => "thursday",
            Weekday::Friday => "friday",
            Weekday::Saturday => "saturday",
            Weekday::Sunday => "sunday",
        }
    }
}

/// A proleptic Gregorian date with no time-of-day component.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CalendarDate(time::Date);

impl CalendarDate {
    pub fn from_ymd(year: i32, month: u8, day: u8) -> Result<Self, DateError> {
        let m = time::Month::try_from(month)
            .map_err(|_| DateError::Invalid(alloc::format!("{year:04}-{month:02}-{day:02}")))?;
        time::Date::from_calendar_date(year, m, day)
            .map(CalendarDate)
            .map_err(|_| DateError::Invalid(alloc::format!("{year:04}-{month:02}-{day:02}")))
    }

    /// Panicking constructor for literals in tests and fixtures.
    pub fn ymd(year: i32, month: u8, day: u8) -> Self {
        Self::from_ymd(year, month, day).expect("valid date literal")
    }

    pub fn year(&self) -> i32 {
        self.0.year()
    }

    pub fn month(&self) -> u8 {
        self.0.month() as u8
    }

    pub fn day(&self) -> u8 {
        self.0.day()
    }

    pub fn weekday(&self) -> Weekday {
        Weekday::ALL[self.0.weekday().number_days_from_monday() as usize]
    }

    pub fn is_leap_year(&self) -> bool {
        time::util::is_leap_year(self.year())
    }

    pub fn julian_day(&self) -> i32 {
        self.0.to_julian_day()
    }

    pub fn add_days(&self, n: i64) -> Result<Self, DateError> {
        let jd = i64::from(self.julian_day())
            .checked_add(n)
            .ok_or(DateError::OutOfRange)?;
        let jd = i32::try_from(jd).map_err(|_| DateError::OutOfRange)?;
        time::Date::from_julian_day(jd)
            .map(CalendarDate)
            .map_err(|_| DateError::OutOfRange)
    }

    pub fn succ(&self) -> Self {
        self.add_days(1).expect("date range")
    }

    pub fn pred(&self) -> Self {
        self.add_days(-1).expect("date range")
    }

    /// Signed number of days from `self` to `other`.
    pub fn days_until(&self, other: &CalendarDate) -> i64 {
        i64::from(other.julian_day()) - i64::from(self.julian_day())
    }

    /// Adds calendar months, clamping the day to the end of the target month.
    pub fn add_months(&self, n: i32) -> Result<Self, DateError> {
        let total = self.year() * 12 + i32::from(self.month()) - 1 + n;
        let year = total.div_euclid(12);
        let month = (total.rem_euclid(12) + 1) as u8;
        let m = time::Month::try_from(month).map_err(|_| DateError::OutOfRange)?;
        let last = time::util::days_in_month(m, year);
        Self::from_ymd(year, month, self.day().min(last))
    }
}

/// Plain date arithmetic; holidays and weekends are ignored.
pub fn add_calendar_days(start: CalendarDate, n: u32) -> Result<CalendarDate, DateError> {
    start.add_days(i64::from(n))
}

impl fmt::Display for CalendarDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year(), self.month(), self.day())
    }
}

impl fmt::Debug for CalendarDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for CalendarDate {
    type Err = DateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DateError::Invalid(s.into());
        let b = s.as_bytes();
        if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
            return Err(bad());
        }
        let digits = |r: core::ops::Range<usize>| -> Result<u32, DateError> {
            let part = &s[r];
            if !part.bytes().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            part.parse().map_err(|_| bad())
        };
        let y = digits(0..4)? as i32;
        let m = digits(5..7)? as u8;
        let d = digits(8..10)? as u8;
        CalendarDate::from_ymd(y, m, d).map_err(|_| bad())
    }
}

impl Serialize for CalendarDate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CalendarDate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
