//! Unit conversions. Every other module works in SI and calls through here
//! when a human-facing unit (hours, km, km/h, g/km) is involved.

use serde::{Deserialize, Serialize};

pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const METERS_PER_KM: f64 = 1000.0;
const MPS_PER_KMH: f64 = METERS_PER_KM / SECONDS_PER_HOUR;

pub fn hours_to_seconds(hours: f64) -> f64 {
    hours * SECONDS_PER_HOUR
}

pub fn seconds_to_hours(seconds: f64) -> f64 {
    seconds / SECONDS_PER_HOUR
}

pub fn km_to_m(km: f64) -> f64 {
    km * METERS_PER_KM
}

pub fn m_to_km(m: f64) -> f64 {
    m / METERS_PER_KM
}

/// A non-negative scalar speed, stored in meters per second.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Speed(f64);

impl Speed {
    pub const ZERO: Speed = Speed(0.0);

    pub fn from_mps(mps: f64) -> Self {
        Speed(mps)
    }

    pub fn from_kmh(kmh: f64) -> Self {
        Speed(kmh * MPS_PER_KMH)
    }

    pub fn mps(self) -> f64 {
        self.0
    }

    pub fn kmh(self) -> f64 {
        self.0 / MPS_PER_KMH
    }

    pub fn min(self, other: Speed) -> Speed {
        if other.0 < self.0 {
            other
        } else {
            self
        }
    }

    /// Kilometers covered in `seconds` at this speed.
    pub fn km_in(self, seconds: f64) -> f64 {
        m_to_km(self.0 * seconds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kmh_round_trip() {
        let s = Speed::from_kmh(72.0);
        assert!((s.mps() - 20.0).abs() < 1e-12);
        assert!((s.kmh() - 72.0).abs() < 1e-12);
    }

    #[test]
    fn distance_in_interval() {
        assert!((Speed::from_kmh(80.0).km_in(900.0) - 20.0).abs() < 1e-12);
    }
}
