//! Vehicle kinematics, contact windows and V2V transmission latency.
//!
//! Speeds are piecewise constant: every `redraw_s` a vehicle either stops or
//! draws a target speed uniformly from the configured band. Trajectories are
//! therefore exact sequences of constant-velocity segments, and emissions and
//! contact windows are evaluated per segment in closed form.
//!
//! On the ring road a vehicle's position is its arc coordinate `x` in
//! `[0, C)` with `y = 0`, and separations use the shorter way round.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allowance::Alert;
use crate::emissions::TraceSegment;
use crate::scenario::units::Speed;
use crate::scenario::{BehaviorPolicy, MobilityParams, RoadModel};
use crate::VehicleId;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("trajectory of vehicle {vehicle} does not cover [{from}, {to}]")]
    UndefinedTrajectory { vehicle: VehicleId, from: f64, to: f64 },
    #[error("{0} must be > 0")]
    NonPositive(&'static str),
    #[error("window bound is unbounded at zero relative speed")]
    Unbounded,
}

pub type Vec2 = (f64, f64);

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    (a.0 - b.0, a.1 - b.1)
}

fn dot(a: Vec2, b: Vec2) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

fn norm(a: Vec2) -> f64 {
    a.0.hypot(a.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BehaviorMode {
    Free,
    SpeedCapped(Speed),
}

/// The most recent speed draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedDraw {
    pub stopped: bool,
    pub target: Speed,
    /// Absolute time of the next redraw.
    pub next_redraw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub vehicle_id: VehicleId,
    /// Meters.
    pub position: Vec2,
    /// Meters per second.
    pub velocity: Vec2,
    /// Unit direction of travel.
    pub heading: Vec2,
    pub behavior_mode: BehaviorMode,
    pub cumulative_grams: f64,
    pub odometer_km: f64,
    pub draw: SpeedDraw,
}

impl VehicleState {
    pub fn speed(&self) -> Speed {
        Speed::from_mps(norm(self.velocity))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    pub velocity: Vec2,
}

/// Constant-velocity segments starting at `start_t` from `start_pos`.
/// Positions along a trajectory are not wrapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_t: f64,
    pub start_pos: Vec2,
    pub segments: Vec<Segment>,
}

impl Trajectory {
    pub fn constant(start_t: f64, start_pos: Vec2, velocity: Vec2, duration_s: f64) -> Self {
        Trajectory {
            start_t,
            start_pos,
            segments: vec![Segment { duration_s, velocity }],
        }
    }

    pub fn end_t(&self) -> f64 {
        self.start_t + self.segments.iter().map(|s| s.duration_s).sum::<f64>()
    }

    pub fn covers(&self, from: f64, to: f64) -> bool {
        self.start_t <= from + TIME_EPS && self.end_t() >= to - TIME_EPS
    }

    /// Segment start times, including the start of the trajectory.
    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().scan(self.start_t, |t, s| {
            let here = *t;
            *t += s.duration_s;
            Some(here)
        })
    }

    pub fn position_at(&self, t: f64) -> Vec2 {
        let mut pos = self.start_pos;
        let mut cursor = self.start_t;
        for s in &self.segments {
            let dt = (t - cursor).clamp(0.0, s.duration_s);
            pos.0 += s.velocity.0 * dt;
            pos.1 += s.velocity.1 * dt;
            cursor += s.duration_s;
            if t <= cursor {
                break;
            }
        }
        pos
    }

    /// Velocity on `[t, t + dt)` for small `dt`.
    pub fn velocity_at(&self, t: f64) -> Vec2 {
        let mut cursor = self.start_t;
        for s in &self.segments {
            cursor += s.duration_s;
            if t < cursor - TIME_EPS {
                return s.velocity;
            }
        }
        self.segments.last().map_or((0.0, 0.0), |s| s.velocity)
    }

    pub fn trace(&self) -> Vec<TraceSegment> {
        self.segments
            .iter()
            .map(|s| TraceSegment {
                duration_s: s.duration_s,
                speed: Speed::from_mps(norm(s.velocity)),
            })
            .collect()
    }
}

impl RoadModel {
    /// Separation between two positions: along-road on the ring, Euclidean
    /// on the plane.
    pub fn separation(&self, a: Vec2, b: Vec2) -> f64 {
        let d = sub(b, a);
        match *self {
            RoadModel::Ring { circumference_m: c } => {
                let dx = d.0.rem_euclid(c);
                dx.min(c - dx)
            }
            RoadModel::Plane { .. } => norm(d),
        }
    }

    fn wrap(&self, p: Vec2) -> Vec2 {
        match *self {
            RoadModel::Ring { circumference_m: c } => (p.0.rem_euclid(c), 0.0),
            RoadModel::Plane { .. } => p,
        }
    }
}

/// Euclidean distance between two vehicles.
pub fn distance(i: &VehicleState, j: &VehicleState) -> f64 {
    norm(sub(i.position, j.position))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WindowLength {
    Finite(f64),
    /// Still in range at the end of the look-ahead.
    OpenEnded,
}

impl WindowLength {
    pub fn is_open_ended(self) -> bool {
        matches!(self, WindowLength::OpenEnded)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            WindowLength::Finite(s) => Some(s),
            WindowLength::OpenEnded => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactWindow {
    pub pair: (VehicleId, VehicleId),
    pub start_t: f64,
    pub l_total: WindowLength,
    /// `window_upper_bound` at the relative speed at `start_t`; `None` when
    /// the vehicles move together.
    pub bound_lprime: Option<f64>,
}

/// Time the pair stays within `r` of each other from `t` on, looking at most
/// `horizon` seconds ahead. `None` if they are out of range at `t`.
pub fn contact_window(
    road: &RoadModel,
    a: (VehicleId, &Trajectory),
    b: (VehicleId, &Trajectory),
    r: f64,
    t: f64,
    horizon: f64,
) -> Result<Option<ContactWindow>, MobilityError> {
    let end = t + horizon;
    for (id, tr) in [a, b] {
        if !tr.covers(t, end) {
            return Err(MobilityError::UndefinedTrajectory {
                vehicle: id,
                from: t,
                to: end,
            });
        }
    }
    let (ta, tb) = (a.1, b.1);
    if road.separation(ta.position_at(t), tb.position_at(t)) > r {
        return Ok(None);
    }
    let w0 = sub(tb.velocity_at(t), ta.velocity_at(t));
    let rel_kmh = Speed::from_mps(norm(w0)).kmh();
    let bound_lprime = window_upper_bound(r, rel_kmh).ok();

    let mut cuts: Vec<f64> = ta
        .breakpoints()
        .chain(tb.breakpoints())
        .filter(|&x| x > t + TIME_EPS && x < end - TIME_EPS)
        .collect();
    cuts.push(t);
    cuts.push(end);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() <= TIME_EPS);

    let mut l_total = WindowLength::OpenEnded;
    for span in cuts.windows(2) {
        let (s0, s1) = (span[0], span[1]);
        let p0 = sub(tb.position_at(s0), ta.position_at(s0));
        let w = sub(tb.velocity_at(s0), ta.velocity_at(s0));
        if let Some(tau) = exit_time(road, p0, w, r, s1 - s0) {
            l_total = WindowLength::Finite(s0 + tau - t);
            break;
        }
    }
    Ok(Some(ContactWindow {
        pair: (a.0, b.0),
        start_t: t,
        l_total,
        bound_lprime,
    }))
}

/// First time in `(0, dur)` at which relative position `p0 + w*tau` leaves
/// the range, given it is in range at 0.
fn exit_time(road: &RoadModel, p0: Vec2, w: Vec2, r: f64, dur: f64) -> Option<f64> {
    let offsets: Vec<Vec2> = match *road {
        RoadModel::Plane { .. } => vec![p0],
        RoadModel::Ring { circumference_m: c } => {
            let x0 = p0.0;
            let x1 = p0.0 + w.0 * dur;
            let (lo, hi) = (x0.min(x1), x0.max(x1));
            let k_min = ((-r - hi) / c).floor() as i64;
            let k_max = ((r - lo) / c).ceil() as i64;
            (k_min..=k_max).map(|k| (x0 + k as f64 * c, 0.0)).collect()
        }
    };
    let mut spans: Vec<(f64, f64)> = offsets
        .into_iter()
        .filter_map(|q| in_range_span(q, w, r, dur))
        .collect();
    spans.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut reach: Option<f64> = None;
    for (lo, hi) in spans {
        match reach {
            None if lo <= TIME_EPS => reach = Some(hi),
            Some(e) if lo <= e + TIME_EPS => reach = Some(e.max(hi)),
            _ => {}
        }
    }
    match reach {
        Some(e) if e >= dur - TIME_EPS => None,
        Some(e) => Some(e.max(0.0)),
        None => Some(0.0),
    }
}

/// `{tau in [0, dur] : |q + w*tau| <= r}` as an interval.
fn in_range_span(q: Vec2, w: Vec2, r: f64, dur: f64) -> Option<(f64, f64)> {
    let a = dot(w, w);
    let half_b = dot(q, w);
    let c = dot(q, q) - r * r;
    if a == 0.0 {
        return (c <= r * 1e-9).then_some((0.0, dur));
    }
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // numerically stable pair of roots
    let (t1, t2) = if half_b > 0.0 {
        let k = -half_b - sq;
        (k / a, c / k)
    } else if half_b < 0.0 {
        let k = -half_b + sq;
        (c / k, k / a)
    } else {
        (-sq / a, sq / a)
    };
    let (lo, hi) = (t1.min(t2).max(0.0), t1.max(t2).min(dur));
    (lo <= hi).then_some((lo, hi))
}

/// Upper bound on the contact window, `r / (1.8 * rel_speed_kmh)` seconds.
pub fn window_upper_bound(r_m: f64, rel_speed_kmh: f64) -> Result<f64, MobilityError> {
    if !(r_m > 0.0) {
        return Err(MobilityError::NonPositive("communication range"));
    }
    if !(rel_speed_kmh > 0.0) {
        return Err(MobilityError::Unbounded);
    }
    Ok(r_m / (1.8 * rel_speed_kmh))
}

/// Time to move one block over the link, `S_B / R`.
pub fn trans_latency(block_size_bits: f64, data_rate_bps: f64) -> Result<f64, MobilityError> {
    if !(block_size_bits > 0.0) {
        return Err(MobilityError::NonPositive("block size"));
    }
    if !(data_rate_bps > 0.0) {
        return Err(MobilityError::NonPositive("data rate"));
    }
    Ok(block_size_bits / data_rate_bps)
}

/// Under `DltControlled`, a speed alert caps a vehicle currently driving
/// faster than `cap`. Baseline vehicles ignore alerts.
pub fn apply_behavior_policy(
    vehicle: &VehicleState,
    alert: Option<Alert>,
    policy: BehaviorPolicy,
    cap: Speed,
) -> VehicleState {
    let mut out = vehicle.clone();
    if policy == BehaviorPolicy::DltControlled && alert == Some(Alert::Speed) && vehicle.speed() > cap {
        out.behavior_mode = BehaviorMode::SpeedCapped(cap);
        let s = norm(out.velocity);
        if s > cap.mps() {
            let k = cap.mps() / s;
            out.velocity = (out.velocity.0 * k, out.velocity.1 * k);
        }
    }
    out
}

/// The fleet and its planned trajectories for the current interval.
#[derive(Debug, Clone)]
pub struct Fleet {
    params: MobilityParams,
    vehicles: Vec<VehicleState>,
    plans: Vec<Trajectory>,
}

impl Fleet {
    /// Places `n` vehicles uniformly on the road. Plane headings are uniform.
    pub fn new<R: Rng + ?Sized>(n: u32, params: MobilityParams, rng: &mut R) -> Self {
        let vehicles = (0..n)
            .map(|i| {
                let (position, heading) = match params.road {
                    RoadModel::Ring { circumference_m } => ((rng.random::<f64>() * circumference_m, 0.0), (1.0, 0.0)),
                    RoadModel::Plane { side_m } => {
                        let p = (rng.random::<f64>() * side_m, rng.random::<f64>() * side_m);
                        let theta = rng.random::<f64>() * std::f64::consts::TAU;
                        (p, (theta.cos(), theta.sin()))
                    }
                };
                VehicleState {
                    vehicle_id: VehicleId(i),
                    position,
                    velocity: (0.0, 0.0),
                    heading,
                    behavior_mode: BehaviorMode::Free,
                    cumulative_grams: 0.0,
                    odometer_km: 0.0,
                    draw: SpeedDraw {
                        stopped: true,
                        target: Speed::ZERO,
                        next_redraw: 0.0,
                    },
                }
            })
            .collect();
        Fleet {
            params,
            vehicles,
            plans: Vec::new(),
        }
    }

    pub fn params(&self) -> &MobilityParams {
        &self.params
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn vehicle_mut(&mut self, id: VehicleId) -> &mut VehicleState {
        &mut self.vehicles[id.index()]
    }

    pub fn plans(&self) -> &[Trajectory] {
        &self.plans
    }

    fn effective_speed(&self, v: &VehicleState) -> Speed {
        if v.draw.stopped {
            return Speed::ZERO;
        }
        let mut s = v.draw.target.min(self.params.speed_limit);
        if let BehaviorMode::SpeedCapped(cap) = v.behavior_mode {
            s = s.min(cap);
        }
        s
    }

    /// Plans every vehicle over `[t0, t0 + dt]`. Each redraw consumes two
    /// uniforms whatever the vehicle's mode, so paired runs see the same draws.
    pub fn plan<R: Rng + ?Sized>(&mut self, t0: f64, dt: f64, rng: &mut R) {
        let end = t0 + dt;
        let mut plans = Vec::with_capacity(self.vehicles.len());
        for idx in 0..self.vehicles.len() {
            let mut segments = Vec::new();
            let mut t = t0;
            while t < end - TIME_EPS {
                if self.vehicles[idx].draw.next_redraw <= t + TIME_EPS {
                    let stop_u: f64 = rng.random();
                    let speed_u: f64 = rng.random();
                    let p = &self.params;
                    let v = &mut self.vehicles[idx];
                    v.draw.stopped = stop_u < p.stop_probability;
                    v.draw.target = Speed::from_kmh(p.min_speed.kmh() + speed_u * (p.max_speed.kmh() - p.min_speed.kmh()));
                    v.draw.next_redraw += p.redraw_s;
                    continue;
                }
                let v = &self.vehicles[idx];
                let seg_end = v.draw.next_redraw.min(end);
                let s = self.effective_speed(v).mps();
                segments.push(Segment {
                    duration_s: seg_end - t,
                    velocity: (v.heading.0 * s, v.heading.1 * s),
                });
                t = seg_end;
            }
            let v = &mut self.vehicles[idx];
            v.velocity = segments.first().map_or((0.0, 0.0), |s| s.velocity);
            plans.push(Trajectory {
                start_t: t0,
                start_pos: v.position,
                segments,
            });
        }
        self.plans = plans;
    }

    /// Moves every vehicle to the end of its plan. Returns each vehicle's
    /// speed trace for emission integration.
    pub fn advance(&mut self) -> Vec<Vec<TraceSegment>> {
        let road = self.params.road;
        self.vehicles
            .iter_mut()
            .zip(&self.plans)
            .map(|(v, plan)| {
                let end = plan.position_at(plan.end_t());
                v.odometer_km += plan
                    .segments
                    .iter()
                    .map(|s| norm(s.velocity) * s.duration_s)
                    .sum::<f64>()
                    / 1000.0;
                v.position = road.wrap(end);
                v.velocity = plan.segments.last().map_or((0.0, 0.0), |s| s.velocity);
                plan.trace()
            })
            .collect()
    }

    pub fn apply_policy(&mut self, id: VehicleId, alert: Option<Alert>, policy: BehaviorPolicy) {
        let cap = self.params.capped_speed;
        let v = &mut self.vehicles[id.index()];
        *v = apply_behavior_policy(v, alert, policy, cap);
    }

    /// Period boundary: modes back to free, per-period counters cleared.
    pub fn reset_period(&mut self) {
        for v in &mut self.vehicles {
            v.behavior_mode = BehaviorMode::Free;
            v.cumulative_grams = 0.0;
            v.odometer_km = 0.0;
        }
    }

    /// CSV rows `t,id,x,y,speed` (speed in km/h).
    pub fn write_trajectory_rows<W: Write>(&self, t: f64, w: &mut csv::Writer<W>) -> csv::Result<()> {
        for v in &self.vehicles {
            w.write_record([
                t.to_string(),
                v.vehicle_id.to_string(),
                v.position.0.to_string(),
                v.position.1.to_string(),
                v.speed().kmh().to_string(),
            ])?;
        }
        Ok(())
    }
}
