//! Fixed-point allowance credits.
//!
//! Balances are held as signed integer micro-credits so that trades conserve
//! the fleet total exactly and replaying a ledger reproduces balances bit for
//! bit. Conversions from real-valued rule outputs round half away from zero.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

pub const MICROS_PER_CREDIT: i64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Credits(i64);

impl Credits {
    pub const ZERO: Credits = Credits(0);

    pub const fn from_micros(micros: i64) -> Self {
        Credits(micros)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn from_f64(credits: f64) -> Self {
        Credits((credits * MICROS_PER_CREDIT as f64).round() as i64)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_CREDIT as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }
}

impl Add for Credits {
    type Output = Credits;
    fn add(self, rhs: Credits) -> Credits {
        Credits(self.0 + rhs.0)
    }
}

impl Sub for Credits {
    type Output = Credits;
    fn sub(self, rhs: Credits) -> Credits {
        Credits(self.0 - rhs.0)
    }
}

impl AddAssign for Credits {
    fn add_assign(&mut self, rhs: Credits) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Credits {
    fn sub_assign(&mut self, rhs: Credits) {
        self.0 -= rhs.0;
    }
}

impl Neg for Credits {
    type Output = Credits;
    fn neg(self) -> Credits {
        Credits(-self.0)
    }
}

impl Sum for Credits {
    fn sum<I: Iterator<Item = Credits>>(iter: I) -> Credits {
        iter.fold(Credits::ZERO, Add::add)
    }
}

impl fmt::Display for Credits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let per = MICROS_PER_CREDIT as u64;
        write!(f, "{sign}{}.{:06}", abs / per, abs % per)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_is_exact_decimal() {
        assert_eq!(Credits::from_f64(-4.5).to_string(), "-4.500000");
        assert_eq!(Credits::from_f64(100.0).to_string(), "100.000000");
        assert_eq!(Credits::from_micros(1).to_string(), "0.000001");
    }

    #[test]
    fn rounding_is_to_nearest_micro() {
        assert_eq!(Credits::from_f64(6.5).micros(), 6_500_000);
        assert_eq!(Credits::from_f64(0.000_000_6).micros(), 1);
        assert_eq!(Credits::from_f64(-0.000_000_6).micros(), -1);
    }
}
