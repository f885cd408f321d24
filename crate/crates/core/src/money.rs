//! Integer money in currency minor units.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Minor units per major unit (cents per dollar, fen per yuan).
pub const MINOR_PER_MAJOR: i64 = 100;

/// An amount of money stored as integer minor units.
///
/// Serializes as a bare integer so transcripts and fixtures stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_minor(minor: i64) -> Self {
        Money(minor)
    }

    pub const fn from_major(major: i64) -> Self {
        Money(major * MINOR_PER_MAJOR)
    }

    pub const fn minor(self) -> i64 {
        self.0
    }

    pub fn as_major_f64(self) -> f64 {
        self.0 as f64 / MINOR_PER_MAJOR as f64
    }

    pub fn is_whole(self) -> bool {
        self.0 % MINOR_PER_MAJOR == 0
    }

    /// Round half-up to the nearest whole major unit.
    pub fn round_whole(self) -> Money {
        Money(div_round_half_up(self.0, MINOR_PER_MAJOR) * MINOR_PER_MAJOR)
    }

    /// Truncate toward zero to a whole major unit.
    pub fn floor_whole(self) -> Money {
        Money(self.0.div_euclid(MINOR_PER_MAJOR) * MINOR_PER_MAJOR)
    }

    /// `self × (1 − basis_points/10000)`, rounded half-up to minor units.
    pub fn discounted_by_bp(self, basis_points: i64) -> Money {
        Money(div_round_half_up(self.0 * (10_000 - basis_points), 10_000))
    }

    /// `self × factor`, rounded to the nearest minor unit.
    pub fn scaled(self, factor: f64) -> Money {
        Money((self.0 as f64 * factor).round() as i64)
    }

    pub fn clamp_to(self, lower: Money, upper: Money) -> Money {
        Money(self.0.clamp(lower.0, upper.0))
    }

    /// Render without a currency symbol: `215`, `215.50`.
    pub fn amount_string(self) -> String {
        if self.is_whole() {
            format!("{}", self.0 / MINOR_PER_MAJOR)
        } else {
            let sign = if self.0 < 0 { "-" } else { "" };
            let abs = self.0.abs();
            format!("{sign}{}.{:02}", abs / MINOR_PER_MAJOR, abs % MINOR_PER_MAJOR)
        }
    }

    /// Render with a currency symbol prefix, e.g. `$215`.
    pub fn render(self, currency: &str) -> String {
        format!("{currency}{}", self.amount_string())
    }
}

/// Integer division rounding halves away from zero for non-negative numerators.
pub(crate) fn div_round_half_up(numerator: i64, denominator: i64) -> i64 {
    debug_assert!(denominator > 0);
    if numerator >= 0 {
        (numerator + denominator / 2) / denominator
    } else {
        -((-numerator + denominator / 2) / denominator)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_whole() {
            write!(f, "{}.00", self.0 / MINOR_PER_MAJOR)
        } else {
            let abs = self.0.abs();
            let sign = if self.0 < 0 { "-" } else { "" };
            write!(f, "{sign}{}.{:02}", abs / MINOR_PER_MAJOR, abs % MINOR_PER_MAJOR)
        }
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}
