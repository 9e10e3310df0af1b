use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MoneyError {
    #[error("currency mismatch: expected {expected}, found {found}")]
    CurrencyMismatch { expected: Currency, found: Currency },
    #[error("invalid currency code {0:?}")]
    InvalidCurrency(String),
    #[error("arithmetic overflow")]
    Overflow,
    #[error("invalid money literal: expected \"CCY minor-units\"")]
    InvalidMoney,
}

/// ISO-4217 alphabetic code, three uppercase ASCII letters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Currency([u8; 3]);

impl Currency {
    pub const USD: Currency = Currency(*b"USD");
    pub const EUR: Currency = Currency(*b"EUR");
    pub const GBP: Currency = Currency(*b"GBP");

    pub fn new(code: &str) -> Result<Self, MoneyError> {
        let bytes = code.as_bytes();
        if bytes.len() != 3 || !bytes.iter().all(u8::is_ascii_uppercase) {
            return Err(MoneyError::InvalidCurrency(code.into()));
        }
        Ok(Currency([bytes[0], bytes[1], bytes[2]]))
    }

    pub fn as_str(&self) -> &str {
        // always ASCII by construction
        core::str::from_utf8(&self.0).unwrap_or("???")
    }
}

impl FromStr for Currency {
    type Err = MoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Currency::new(s)
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Currency {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Currency {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Currency::new(&s).map_err(serde::de::Error::custom)
    }
}

/// An amount of one currency in integer minor units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Money {
    pub currency: Currency,
    #[serde(with = "crate::intstr")]
    pub amount: i64,
}

impl Money {
    pub const fn new(currency: Currency, amount: i64) -> Self {
        Money { currency, amount }
    }

    pub const fn zero(currency: Currency) -> Self {
        Money { currency, amount: 0 }
    }

    pub fn is_zero(&self) -> bool {
        self.amount == 0
    }

    pub fn is_positive(&self) -> bool {
        self.amount > 0
    }

    fn same_currency(&self, other: &Money) -> Result<(), MoneyError> {
        if self.currency != other.currency {
            return Err(MoneyError::CurrencyMismatch {
                expected: self.currency,
                found: other.currency,
            });
        }
        Ok(())
    }

    pub fn checked_add(self, other: Money) -> Result<Money, MoneyError> {
        self.same_currency(&other)?;
        let amount = self.amount.checked_add(other.amount).ok_or(MoneyError::Overflow)?;
        Ok(Money::new(self.currency, amount))
    }

    pub fn checked_sub(self, other: Money) -> Result<Money, MoneyError> {
        self.same_currency(&other)?;
        let amount = self.amount.checked_sub(other.amount).ok_or(MoneyError::Overflow)?;
        Ok(Money::new(self.currency, amount))
    }

    pub fn negate(self) -> Money {
        Money::new(self.currency, -self.amount)
    }

    pub fn abs(self) -> Money {
        Money::new(self.currency, self.amount.abs())
    }

    /// `self × numerator / denominator`, rounded half away from zero.
    pub fn mul_div(self, numerator: i128, denominator: i128) -> Result<Money, MoneyError> {
        let product = (self.amount as i128)
            .checked_mul(numerator)
            .ok_or(MoneyError::Overflow)?;
        let q = div_round_half_away(product, denominator);
        let amount = i64::try_from(q).map_err(|_| MoneyError::Overflow)?;
        Ok(Money::new(self.currency, amount))
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.currency, self.amount)
    }
}

/// Parses the `Display` form, `"USD 1250000"` (amount in minor units).
impl FromStr for Money {
    type Err = MoneyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ccy, amount) = s.trim().split_once(' ').ok_or(MoneyError::InvalidMoney)?;
        let currency = ccy.parse()?;
        let amount = amount.trim().parse().map_err(|_| MoneyError::InvalidMoney)?;
        Ok(Money::new(currency, amount))
    }
}

/// Integer division rounding half away from zero. `den` must be non-zero.
pub fn div_round_half_away(num: i128, den: i128) -> i128 {
    assert!(den != 0, "division by zero");
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    let q = num / den;
    let r = num % den;
    if 2 * r.abs() >= den {
        q + num.signum()
    } else {
        q
    }
}

/// Exact sum of `items`, all of which must be denominated in `currency`.
pub fn money_sum<'a, I>(items: I, currency: Currency) -> Result<Money, MoneyError>
where
    I: IntoIterator<Item = &'a Money>,
{
    items
        .into_iter()
        .try_fold(Money::zero(currency), |acc, m| acc.checked_add(*m))
}
