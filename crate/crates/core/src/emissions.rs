//! Speed-dependent CO2 emission factors and per-interval sampling.
//!
//! The emission factor follows a three-term surrogate of the usual
//! speed-curve fits: `a/v + b + c*v^2` grams per km with `v` in km/h. The
//! `a/v` term dominates in stop-and-go traffic, `c*v^2` at motorway speeds.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::units::{seconds_to_hours, Speed};
use crate::VehicleId;

/// Band (km/h) that the curve's minimum must fall in: roughly 40 to 60 mph.
pub const OPTIMAL_BAND_KMH: (f64, f64) = (64.0, 97.0);
/// Default idle flow: idling this many minutes emits as much as one km at
/// [`IDLE_REFERENCE_SPEED_KMH`].
pub const IDLE_EQUIVALENT_MINUTES: f64 = 10.0;
pub const IDLE_REFERENCE_SPEED_KMH: f64 = 8.0;

const TRACE_COVERAGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmissionsError {
    #[error("emission curve coefficients must all be > 0 (a={a}, b={b}, c={c})")]
    NonPositiveCoefficient { a: f64, b: f64, c: f64 },
    #[error("emission curve minimum at {optimum_kmh:.2} km/h lies outside [{}, {}] km/h", OPTIMAL_BAND_KMH.0, OPTIMAL_BAND_KMH.1)]
    OptimumOutOfBand { optimum_kmh: f64 },
    #[error("idle flow must be > 0 g/h, got {0}")]
    NonPositiveIdle(f64),
    #[error("emission rate is undefined for speed {0} km/h; use the idle flow")]
    NonPositiveSpeed(f64),
    #[error("speed trace for vehicle {vehicle} covers {covered} s of a {interval} s interval")]
    MissingTrace {
        vehicle: VehicleId,
        covered: f64,
        interval: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionCurve {
    coeff_a: f64,
    coeff_b: f64,
    coeff_c: f64,
    idle_g_per_hour: f64,
}

impl EmissionCurve {
    pub fn new(
        coeff_a: f64,
        coeff_b: f64,
        coeff_c: f64,
        idle_g_per_hour: Option<f64>,
    ) -> Result<Self, EmissionsError> {
        if !(coeff_a > 0.0 && coeff_b > 0.0 && coeff_c > 0.0) {
            return Err(EmissionsError::NonPositiveCoefficient {
                a: coeff_a,
                b: coeff_b,
                c: coeff_c,
            });
        }
        let optimum_kmh = (coeff_a / (2.0 * coeff_c)).cbrt();
        if !(OPTIMAL_BAND_KMH.0..=OPTIMAL_BAND_KMH.1).contains(&optimum_kmh) {
            return Err(EmissionsError::OptimumOutOfBand { optimum_kmh });
        }
        let mut curve = EmissionCurve {
            coeff_a,
            coeff_b,
            coeff_c,
            idle_g_per_hour: 0.0,
        };
        curve.idle_g_per_hour = match idle_g_per_hour {
            Some(g) if g > 0.0 => g,
            Some(g) => return Err(EmissionsError::NonPositiveIdle(g)),
            None => curve.rate_kmh(IDLE_REFERENCE_SPEED_KMH) * 60.0 / IDLE_EQUIVALENT_MINUTES,
        };
        Ok(curve)
    }

    pub fn coefficients(&self) -> (f64, f64, f64) {
        (self.coeff_a, self.coeff_b, self.coeff_c)
    }

    /// Speed minimizing grams per km.
    pub fn optimum(&self) -> Speed {
        Speed::from_kmh((self.coeff_a / (2.0 * self.coeff_c)).cbrt())
    }

    fn rate_kmh(&self, v: f64) -> f64 {
        self.coeff_a / v + self.coeff_b + self.coeff_c * v * v
    }
}

impl Default for EmissionCurve {
    fn default() -> Self {
        EmissionCurve::new(3000.0, 80.0, 0.005, None).expect("default curve is valid")
    }
}

/// Grams of CO2 per km driven at a steady `speed`.
pub fn emission_rate(curve: &EmissionCurve, speed: Speed) -> Result<f64, EmissionsError> {
    let v = speed.kmh();
    if !(v > 0.0) {
        return Err(EmissionsError::NonPositiveSpeed(v));
    }
    Ok(curve.rate_kmh(v))
}

/// Idling flow in grams per hour.
pub fn idle_rate(curve: &EmissionCurve) -> f64 {
    curve.idle_g_per_hour
}

pub fn idle_grams(curve: &EmissionCurve, seconds: f64) -> f64 {
    idle_rate(curve) * seconds_to_hours(seconds)
}

/// Per-km figure reported for an interval with no distance: the grams idled
/// over [`IDLE_EQUIVALENT_MINUTES`].
pub fn idle_equivalent_per_km(curve: &EmissionCurve) -> f64 {
    idle_grams(curve, IDLE_EQUIVALENT_MINUTES * 60.0)
}

/// A stretch of constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSegment {
    pub duration_s: f64,
    pub speed: Speed,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Integrated {
    pub grams: f64,
    pub distance_km: f64,
    pub idle_s: f64,
}

/// Exact integral of grams and distance over a piecewise-constant trace.
pub fn integrate(curve: &EmissionCurve, trace: &[TraceSegment]) -> Integrated {
    let mut out = Integrated::default();
    for seg in trace {
        if seg.speed.mps() > 0.0 {
            let km = seg.speed.km_in(seg.duration_s);
            out.grams += curve.rate_kmh(seg.speed.kmh()) * km;
            out.distance_km += km;
        } else {
            out.grams += idle_grams(curve, seg.duration_s);
            out.idle_s += seg.duration_s;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionSample {
    pub vehicle_id: VehicleId,
    /// Seconds since period start.
    pub timestamp_s: f64,
    /// Average grams per km over the interval.
    pub epsilon: f64,
    pub distance_km: f64,
    pub grams: f64,
    pub all_idle: bool,
}

impl EmissionSample {
    /// The sample every vehicle carries at period start.
    pub fn period_start(vehicle_id: VehicleId) -> Self {
        EmissionSample {
            vehicle_id,
            timestamp_s: 0.0,
            epsilon: 0.0,
            distance_km: 0.0,
            grams: 0.0,
            all_idle: false,
        }
    }
}

/// Integrates `trace`, which must span exactly `interval_s`, into one sample
/// stamped at `timestamp_s`.
pub fn sample_emissions(
    vehicle_id: VehicleId,
    timestamp_s: f64,
    interval_s: f64,
    trace: &[TraceSegment],
    curve: &EmissionCurve,
) -> Result<EmissionSample, EmissionsError> {
    let covered: f64 = trace.iter().map(|s| s.duration_s).sum();
    if trace.is_empty() || (covered - interval_s).abs() > TRACE_COVERAGE_TOLERANCE * interval_s.max(1.0)
    {
        return Err(EmissionsError::MissingTrace {
            vehicle: vehicle_id,
            covered,
            interval: interval_s,
        });
    }
    let totals = integrate(curve, trace);
    let (epsilon, all_idle) = if totals.distance_km > 0.0 {
        (totals.grams / totals.distance_km, false)
    } else {
        (idle_equivalent_per_km(curve), true)
    };
    Ok(EmissionSample {
        vehicle_id,
        timestamp_s,
        epsilon,
        distance_km: totals.distance_km,
        grams: totals.grams,
        all_idle,
    })
}

/// CSV with columns `vehicle_id,t,epsilon,distance,flags`.
pub fn write_samples_csv<W: Write>(out: W, samples: &[EmissionSample]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vehicle_id", "t", "epsilon", "distance", "flags"])?;
    for s in samples {
        w.write_record([
            s.vehicle_id.to_string(),
            s.timestamp_s.to_string(),
            s.epsilon.to_string(),
            s.distance_km.to_string(),
            if s.all_idle { "all_idle".into() } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kmh(v: f64) -> Speed {
        Speed::from_kmh(v)
    }

    fn rate(v: f64) -> f64 {
        emission_rate(&EmissionCurve::default(), kmh(v)).unwrap()
    }

    #[test]
    fn u_shape_ordering() {
        assert!(rate(8.0) > rate(80.0));
        assert!(rate(130.0) > rate(80.0));
    }

    #[test]
    fn default_optimum_matches_calculus() {
        // d/dv (a/v + b + c v^2) = 0  =>  v* = (a / 2c)^(1/3) = 300000^(1/3)
        let expected = 66.943_295_008_216_95;
        let v = EmissionCurve::default().optimum().kmh();
        assert!((v - expected).abs() < 1e-9, "{v}");
        assert!((64.0..=97.0).contains(&v));
        assert!(rate(v) < rate(v - 30.0));
        assert!(rate(v) < rate(v + 30.0));
    }

    #[test]
    fn rejects_non_positive_speed_and_bad_curves() {
        let c = EmissionCurve::default();
        assert!(matches!(emission_rate(&c, Speed::ZERO), Err(EmissionsError::NonPositiveSpeed(_))));
        assert!(EmissionCurve::new(0.0, 80.0, 0.005, None).is_err());
        // optimum at (3000/0.2)^(1/3) ~ 24.7 km/h
        assert!(matches!(
            EmissionCurve::new(3000.0, 80.0, 0.1, None),
            Err(EmissionsError::OptimumOutOfBand { .. })
        ));
        assert!(EmissionCurve::new(3000.0, 80.0, 0.005, Some(0.0)).is_err());
    }

    #[test]
    fn idle_defaults() {
        let c = EmissionCurve::default();
        assert_eq!(idle_grams(&c, 0.0), 0.0);
        // 10 minutes idle == rate(8 km/h) * 1 km
        let ten_min = idle_grams(&c, 600.0);
        let oracle = (3000.0 / 8.0 + 80.0 + 0.005 * 64.0) * 1.0;
        assert!((ten_min - oracle).abs() < 1e-9 * oracle, "{ten_min} vs {oracle}");
        assert!(idle_grams(&c, 1.0) > 0.0);
    }

    #[test]
    fn constant_speed_sample_equals_rate() {
        let c = EmissionCurve::default();
        let trace = [TraceSegment { duration_s: 900.0, speed: kmh(80.0) }];
        let s = sample_emissions(VehicleId(3), 900.0, 900.0, &trace, &c).unwrap();
        assert!((s.epsilon - rate(80.0)).abs() < 1e-12);
        assert!((s.distance_km - 20.0).abs() < 1e-12);
        assert!(!s.all_idle);
    }

    #[test]
    fn two_segment_sample_is_distance_weighted() {
        let c = EmissionCurve::default();
        let trace = [
            TraceSegment { duration_s: 450.0, speed: kmh(40.0) },
            TraceSegment { duration_s: 450.0, speed: kmh(120.0) },
        ];
        let s = sample_emissions(VehicleId(0), 900.0, 900.0, &trace, &c).unwrap();
        // 5 km at 40 km/h, 15 km at 120 km/h
        let g40 = 3000.0 / 40.0 + 80.0 + 0.005 * 1600.0; // 163
        let g120 = 3000.0 / 120.0 + 80.0 + 0.005 * 14400.0; // 177
        let oracle = (5.0 * g40 + 15.0 * g120) / 20.0;
        assert!((s.epsilon - oracle).abs() < 1e-9, "{} vs {oracle}", s.epsilon);
    }

    #[test]
    fn parked_interval_reports_idle_equivalent() {
        let c = EmissionCurve::default();
        let trace = [TraceSegment { duration_s: 900.0, speed: Speed::ZERO }];
        let s = sample_emissions(VehicleId(1), 900.0, 900.0, &trace, &c).unwrap();
        assert!(s.all_idle);
        assert_eq!(s.distance_km, 0.0);
        assert_eq!(s.epsilon, idle_equivalent_per_km(&c));
        assert!(s.grams > 0.0);
    }

    #[test]
    fn incomplete_trace_is_rejected() {
        let c = EmissionCurve::default();
        let trace = [TraceSegment { duration_s: 300.0, speed: kmh(50.0) }];
        assert!(matches!(
            sample_emissions(VehicleId(1), 900.0, 900.0, &trace, &c),
            Err(EmissionsError::MissingTrace { .. })
        ));
        assert!(sample_emissions(VehicleId(1), 900.0, 900.0, &[], &c).is_err());
    }

    fn trace_strategy() -> impl Strategy<Value = Vec<TraceSegment>> {
        prop::collection::vec((1.0f64..120.0, prop_oneof![Just(0.0), 5.0f64..130.0]), 1..40).prop_map(
            |v| {
                v.into_iter()
                    .map(|(d, s)| TraceSegment { duration_s: d, speed: kmh(s) })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn chord_lies_above_curve(v1 in 1.0f64..200.0, d2 in 0.1f64..100.0, d3 in 0.1f64..100.0) {
            let (v2, v3) = (v1 + d2, v1 + d2 + d3);
            let w = (v3 - v2) / (v3 - v1);
            let chord = w * rate(v1) + (1.0 - w) * rate(v3);
            prop_assert!(rate(v2) < chord);
        }

        #[test]
        fn split_integration_matches_whole(trace in trace_strategy(), cut in 1usize..40) {
            let c = EmissionCurve::default();
            let whole = integrate(&c, &trace).grams;
            let cut = cut.min(trace.len());
            let parts = integrate(&c, &trace[..cut]).grams + integrate(&c, &trace[cut..]).grams;
            prop_assert!((whole - parts).abs() <= 1e-9 * whole.abs().max(1.0));
        }

        #[test]
        fn faster_above_optimum_never_lowers_epsilon(
            speeds in prop::collection::vec(67.0f64..120.0, 1..20),
            scale in 1.0f64..1.5,
        ) {
            let c = EmissionCurve::default();
            let mk = |k: f64| -> Vec<TraceSegment> {
                speeds.iter().map(|&s| TraceSegment { duration_s: 60.0, speed: kmh(s * k) }).collect()
            };
            let interval = 60.0 * speeds.len() as f64;
            let base = sample_emissions(VehicleId(0), 0.0, interval, &mk(1.0), &c).unwrap();
            let fast = sample_emissions(VehicleId(0), 0.0, interval, &mk(scale), &c).unwrap();
            prop_assert!(fast.epsilon >= base.epsilon - 1e-12);
        }
    }
}
