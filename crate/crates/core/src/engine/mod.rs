//! Discrete-time orchestration. Each tick runs, in order: mobility,
//! emission sampling, emission control, behavior policy, trading, and one
//! block seal. Every balance change goes through the ledger.

mod events;
mod output;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use events::{write_events_csv, EventData, EventKind, SimEvent, Subject, EVENT_CSV_HEADER};
pub use output::{
    replay_export, write_comparison, write_run, ComparisonRow, ReplayExportError, RunManifest, CHAIN_DIR, EVENTS_FILE,
    MANIFEST_FILE, SUMMARY_FILE, TRACE_FILE,
};

use crate::allowance::{Alert, AlertState, Exchange, OrderStatus, TradeOrder};
use crate::credits::Credits;
use crate::emissions::{sample_emissions, EmissionSample};
use crate::latency::{attempt_trade, attempt_trade_unconfirmed, TradeAttempt};
use crate::ledger::{Author, Ledger, TxPayload};
use crate::mobility::{contact_window, ContactWindow, Fleet};
use crate::scenario::{BehaviorPolicy, ScenarioConfig};
use crate::VehicleId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("tick {tick}, stage {stage}: {message}")]
    Stage {
        tick: u64,
        stage: &'static str,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Whether trades wait for the miner race. Defaults to true exactly for
    /// the dlt-controlled policy.
    pub confirm_trades: Option<bool>,
    pub record_trajectory: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlertCounts {
    pub speed: u64,
    pub red: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub policy: BehaviorPolicy,
    pub confirm_trades: bool,
    pub seed: u64,
    pub ticks: u64,
    pub blocks: u64,
    pub total_co2_g: f64,
    pub total_nox_g: f64,
    pub total_distance_km: f64,
    /// Mean of reported per-sample emission rates, g/km.
    pub mean_epsilon: f64,
    pub penalties: Credits,
    pub subsidies: Credits,
    pub trades_proposed: u64,
    pub trades_settled: u64,
    pub trades_aborted: u64,
    pub mean_trade_latency: Option<f64>,
    pub alerts: AlertCounts,
    /// Per-vehicle balances in vehicle order, micro-credits.
    pub final_balances: Vec<Credits>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickTrace {
    pub t: f64,
    pub co2_g: f64,
    pub nox_g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub order: u64,
    pub window: ContactWindow,
    pub attempt: TradeAttempt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub vehicle_id: VehicleId,
    pub x: f64,
    pub y: f64,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: SimSummary,
    pub events: Vec<SimEvent>,
    pub ledger: Ledger,
    pub exchange: Exchange,
    pub samples: Vec<EmissionSample>,
    pub trace: Vec<TickTrace>,
    pub windows: Vec<WindowLog>,
    pub trajectory: Vec<TrajectoryRow>,
}

fn stage<E: ToString>(tick: u64, stage: &'static str) -> impl Fn(E) -> EngineError {
    move |e| EngineError::Stage {
        tick,
        stage,
        message: e.to_string(),
    }
}

struct Tally {
    co2: f64,
    distance_km: f64,
    epsilon_sum: f64,
    samples: u64,
    penalties: Credits,
    subsidies: Credits,
    proposed: u64,
    settled: u64,
    aborted: u64,
    latency_sum: f64,
    alerts: AlertCounts,
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    run_with(cfg, RunOptions::default())
}

pub fn run_with(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunOutput, EngineError> {
    let policy = cfg.policy();
    let confirm = opts.confirm_trades.unwrap_or(policy == BehaviorPolicy::DltControlled);
    let timing = *cfg.timing();
    let comms = *cfg.comms();
    let pool = *cfg.miner_pool();
    let curve = *cfg.curve();
    let noise = cfg.measurement_noise();
    let n = cfg.n_vehicles();
    let ticks = timing.ticks_per_period();
    let mut streams = cfg.streams();

    let mut ledger = Ledger::new(comms.block_size_bits).map_err(stage(0, "setup"))?;
    let mut exchange = Exchange::new(n, *cfg.market_rule(), cfg.initial_balance()).map_err(stage(0, "setup"))?;
    let mut fleet = Fleet::new(n, *cfg.mobility(), &mut streams.mobility);

    let mut events: Vec<SimEvent> = Vec::new();
    let mut samples = Vec::new();
    let mut trace = Vec::new();
    let mut windows = Vec::new();
    let mut trajectory = Vec::new();
    let mut tally = Tally {
        co2: 0.0,
        distance_km: 0.0,
        epsilon_sum: 0.0,
        samples: 0,
        penalties: Credits::ZERO,
        subsidies: Credits::ZERO,
        proposed: 0,
        settled: 0,
        aborted: 0,
        latency_sum: 0.0,
        alerts: AlertCounts::default(),
    };

    let reset = |exchange: &mut Exchange, ledger: &mut Ledger, fleet: &mut Fleet, period: u32, t: f64, tick: u64| {
        exchange.reset_period(ledger, t).map_err(stage(tick, "period-reset"))?;
        fleet.reset_period();
        Ok::<_, EngineError>(SimEvent {
            t,
            subject: Subject::System,
            data: EventData::PeriodReset {
                period,
                balance: cfg.initial_balance(),
            },
        })
    };

    events.push(reset(&mut exchange, &mut ledger, &mut fleet, 0, 0.0, 0)?);
    fleet.plan(0.0, timing.tick_span(0).1, &mut streams.mobility);
    let mut tick_no: u64 = 0;

    for period in 0..timing.periods {
        let base = period as f64 * timing.period_s;
        for k in 0..ticks {
            let (start, dt) = timing.tick_span(k);
            let t = base + start + dt;
            let local_t = start + dt;
            let last_in_period = k + 1 == ticks;
            let mut buf: Vec<SimEvent> = Vec::new();
            let total_before = exchange.total();

            // mobility and sampling
            let traces = fleet.advance();
            if opts.record_trajectory {
                for v in fleet.vehicles() {
                    trajectory.push(TrajectoryRow {
                        t,
                        vehicle_id: v.vehicle_id,
                        x: v.position.0,
                        y: v.position.1,
                        speed_kmh: v.speed().kmh(),
                    });
                }
            }
            let mut tick_co2 = 0.0;
            let mut reported = Vec::with_capacity(n as usize);
            for (i, tr) in traces.iter().enumerate() {
                let id = VehicleId(i as u32);
                let mut s = sample_emissions(id, local_t, dt, tr, &curve).map_err(stage(tick_no, "sampling"))?;
                tick_co2 += s.grams;
                tally.distance_km += s.distance_km;
                fleet.vehicle_mut(id).cumulative_grams += s.grams;
                if noise > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut streams.measurement_noise);
                    let factor = (1.0 + noise * z).max(0.0);
                    s.epsilon *= factor;
                    s.grams *= factor;
                }
                tally.epsilon_sum += s.epsilon;
                tally.samples += 1;
                ledger
                    .submit(
                        Author::Vehicle(id),
                        TxPayload::EmissionRecord {
                            vehicle: id,
                            t,
                            period,
                            timestamp: s.timestamp_s,
                            epsilon: s.epsilon,
                            distance_km: s.distance_km,
                            grams: s.grams,
                            all_idle: s.all_idle,
                        },
                    )
                    .map_err(stage(tick_no, "sampling"))?;
                buf.push(SimEvent {
                    t,
                    subject: Subject::Vehicle(id),
                    data: EventData::Sample {
                        epsilon: s.epsilon,
                        distance_km: s.distance_km,
                        grams: s.grams,
                        all_idle: s.all_idle,
                    },
                });
                reported.push(s);
            }
            tally.co2 += tick_co2;
            trace.push(TickTrace {
                t,
                co2_g: tick_co2,
                nox_g: tick_co2 * cfg.nox_scale(),
            });

            // emission control and behavior policy
            let mut tick_delta = Credits::ZERO;
            for s in &reported {
                let id = s.vehicle_id;
                let outcome = exchange.control(&mut ledger, s, dt, t).map_err(stage(tick_no, "emission-control"))?;
                let balance = exchange.account(id).map_err(stage(tick_no, "emission-control"))?.balance;
                let data = match outcome.payload {
                    TxPayload::Penalty { amount, .. } => {
                        tally.penalties += amount;
                        tick_delta -= amount;
                        EventData::Penalty { amount, balance }
                    }
                    TxPayload::Subsidy { amount, .. } => {
                        tally.subsidies += amount;
                        tick_delta += amount;
                        EventData::Subsidy { amount, balance }
                    }
                    _ => unreachable!("control emits penalty or subsidy"),
                };
                buf.push(SimEvent {
                    t,
                    subject: Subject::Vehicle(id),
                    data,
                });
                for &a in &outcome.alerts {
                    match a {
                        Alert::Speed => tally.alerts.speed += 1,
                        Alert::Red => tally.alerts.red += 1,
                    }
                    buf.push(SimEvent {
                        t,
                        subject: Subject::Vehicle(id),
                        data: EventData::Alert(a),
                    });
                }
                let speed_alert = outcome.alerts.contains(&Alert::Speed).then_some(Alert::Speed);
                fleet.apply_policy(id, speed_alert, policy);
            }

            // trading needs trajectories for the coming interval
            if !last_in_period {
                fleet.plan(t, timing.tick_span(k + 1).1, &mut streams.mobility);
                let horizon = comms.window_horizon_s.min(timing.tick_span(k + 1).1);
                let mut orders = propose_trades(cfg, &fleet, &mut exchange, &mut ledger, &mut streams.trading, t)
                    .map_err(stage(tick_no, "trade-proposal"))?;
                for o in &orders {
                    tally.proposed += 1;
                    buf.push(SimEvent {
                        t,
                        subject: Subject::Pair(o.buyer, o.seller),
                        data: EventData::TradeProposed {
                            order: o.id,
                            amount: o.amount,
                        },
                    });
                }
                for o in &mut orders {
                    exchange.confirm(&mut ledger, o).map_err(stage(tick_no, "trade-confirmation"))?;
                    let subject = Subject::Pair(o.buyer, o.seller);
                    match o.status {
                        OrderStatus::SellerConfirmed => buf.push(SimEvent {
                            t,
                            subject,
                            data: EventData::TradeConfirmed { order: o.id },
                        }),
                        OrderStatus::Aborted(reason) => {
                            tally.aborted += 1;
                            buf.push(SimEvent {
                                t,
                                subject,
                                data: EventData::TradeAborted { order: o.id, reason },
                            });
                        }
                        _ => unreachable!("confirmation resolves a proposed order"),
                    }
                }
                for o in orders.iter_mut().filter(|o| o.status == OrderStatus::SellerConfirmed) {
                    let plans = fleet.plans();
                    let window = contact_window(
                        &fleet.params().road,
                        (o.buyer, &plans[o.buyer.index()]),
                        (o.seller, &plans[o.seller.index()]),
                        comms.range_m,
                        t,
                        horizon,
                    )
                    .map_err(stage(tick_no, "settlement"))?
                    .ok_or_else(|| stage(tick_no, "settlement")("matched pair out of range"))?;
                    let sb = comms.block_size_bits as f64;
                    let attempt = if confirm {
                        attempt_trade(&window, sb, comms.data_rate_bps, &pool, &mut streams.mining)
                    } else {
                        attempt_trade_unconfirmed(&window, sb, comms.data_rate_bps)
                    }
                    .map_err(stage(tick_no, "settlement"))?;
                    exchange.settle(&mut ledger, o, attempt.succeeded, t).map_err(stage(tick_no, "settlement"))?;
                    windows.push(WindowLog {
                        order: o.id,
                        window,
                        attempt,
                    });
                    let subject = Subject::Pair(o.buyer, o.seller);
                    match o.status {
                        OrderStatus::Settled => {
                            let latency = attempt.completion_latency().expect("settled trades carry a draw");
                            tally.settled += 1;
                            tally.latency_sum += latency;
                            buf.push(SimEvent {
                                t,
                                subject,
                                data: EventData::TradeSettled {
                                    order: o.id,
                                    amount: o.amount,
                                    latency,
                                    window: window.l_total,
                                },
                            });
                        }
                        OrderStatus::Aborted(reason) => {
                            tally.aborted += 1;
                            buf.push(SimEvent {
                                t,
                                subject,
                                data: EventData::TradeAborted { order: o.id, reason },
                            });
                        }
                        _ => unreachable!("settlement resolves a confirmed order"),
                    }
                }
            }

            if exchange.total() - total_before != tick_delta {
                return Err(stage(tick_no, "conservation-audit")(format!(
                    "balance change {} != subsidies - penalties {}",
                    exchange.total() - total_before,
                    tick_delta
                )));
            }

            if ledger.pending_len() > 0 {
                let (block, latency) = ledger.seal_block(&pool, &mut streams.mining, t).map_err(stage(tick_no, "block-seal"))?;
                buf.push(SimEvent {
                    t,
                    subject: Subject::System,
                    data: EventData::BlockSealed {
                        height: block.height,
                        txs: block.tx_digests.len(),
                        latency,
                    },
                });
            }

            if last_in_period && period + 1 < timing.periods {
                buf.push(reset(&mut exchange, &mut ledger, &mut fleet, period + 1, t, tick_no)?);
                fleet.plan(t, timing.tick_span(0).1, &mut streams.mobility);
            }

            buf.sort_by_key(|e| e.kind());
            events.extend(buf);
            samples.extend(reported);
            tick_no += 1;
        }
    }

    let end_t = timing.periods as f64 * timing.period_s;
    while ledger.pending_len() > 0 {
        let (block, latency) = ledger.seal_block(&pool, &mut streams.mining, end_t).map_err(stage(tick_no, "block-seal"))?;
        events.push(SimEvent {
            t: end_t,
            subject: Subject::System,
            data: EventData::BlockSealed {
                height: block.height,
                txs: block.tx_digests.len(),
                latency,
            },
        });
    }

    let summary = SimSummary {
        policy,
        confirm_trades: confirm,
        seed: cfg.seed(),
        ticks: tick_no,
        blocks: ledger.blocks().len() as u64,
        total_co2_g: tally.co2,
        total_nox_g: tally.co2 * cfg.nox_scale(),
        total_distance_km: tally.distance_km,
        mean_epsilon: if tally.samples > 0 {
            tally.epsilon_sum / tally.samples as f64
        } else {
            0.0
        },
        penalties: tally.penalties,
        subsidies: tally.subsidies,
        trades_proposed: tally.proposed,
        trades_settled: tally.settled,
        trades_aborted: tally.aborted,
        mean_trade_latency: (tally.settled > 0).then(|| tally.latency_sum / tally.settled as f64),
        alerts: tally.alerts,
        final_balances: exchange.accounts().iter().map(|a| a.balance).collect(),
    };
    Ok(RunOutput {
        summary,
        events,
        ledger,
        exchange,
        samples,
        trace,
        windows,
        trajectory,
    })
}

/// Matches each deficit vehicle, in shuffled order, with the nearest
/// compliant vehicle in range (ties to the lower id). Each vehicle takes part
/// in at most one trade per tick.
fn propose_trades<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    fleet: &Fleet,
    exchange: &mut Exchange,
    ledger: &mut Ledger,
    rng: &mut R,
    t: f64,
) -> Result<Vec<TradeOrder>, crate::allowance::AllowanceError> {
    let range = cfg.comms().range_m;
    let road = fleet.params().road;
    let vehicles = fleet.vehicles();
    let mut buyers: Vec<VehicleId> = exchange
        .accounts()
        .iter()
        .filter(|a| a.balance.is_negative())
        .map(|a| a.vehicle_id)
        .collect();
    buyers.shuffle(rng);
    let mut busy = vec![false; vehicles.len()];
    let mut orders = Vec::new();
    for buyer in buyers {
        let here = vehicles[buyer.index()].position;
        let mut best: Option<(f64, VehicleId)> = None;
        for acct in exchange.accounts() {
            let j = acct.vehicle_id;
            if j == buyer || busy[j.index()] || !acct.is_compliant_seller() {
                continue;
            }
            let d = road.separation(here, vehicles[j.index()].position);
            if d <= range && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        let Some((_, seller)) = best else { continue };
        let buyer_balance = exchange.account(buyer)?.balance;
        let seller_balance = exchange.account(seller)?.balance;
        let amount = (cfg.trade_target() - buyer_balance).min(seller_balance);
        if !amount.is_positive() {
            continue;
        }
        busy[buyer.index()] = true;
        busy[seller.index()] = true;
        orders.push(exchange.propose(ledger, buyer, seller, amount, t)?);
    }
    Ok(orders)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub total_co2_g: f64,
    pub total_nox_g: f64,
    pub mean_trade_latency: Option<f64>,
    pub trades_settled: u64,
    pub trades_aborted: u64,
    pub ticks: u64,
}

impl From<&SimSummary> for ArmReport {
    fn from(s: &SimSummary) -> Self {
        ArmReport {
            total_co2_g: s.total_co2_g,
            total_nox_g: s.total_nox_g,
            mean_trade_latency: s.mean_trade_latency,
            trades_settled: s.trades_settled,
            trades_aborted: s.trades_aborted,
            ticks: s.ticks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub baseline: ArmReport,
    pub dlt: ArmReport,
    /// Percent CO2 reduction of the dlt arm relative to baseline.
    pub co2_reduction_pct: f64,
    pub nox_reduction_pct: f64,
    /// Extra mean settlement latency from waiting for ledger confirmation.
    pub latency_overhead_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub baseline: RunOutput,
    pub dlt: RunOutput,
}

/// Runs both policies on the same seed.
pub fn compare(cfg: &ScenarioConfig) -> Result<Comparison, EngineError> {
    compare_with(cfg, RunOptions::default())
}

pub fn compare_with(cfg: &ScenarioConfig, opts: RunOptions) -> Result<Comparison, EngineError> {
    let arm = |p: BehaviorPolicy| {
        let c = cfg.with_policy(p).map_err(stage(0, "setup"))?;
        run_with(&c, opts)
    };
    let baseline = arm(BehaviorPolicy::Baseline)?;
    let dlt = arm(BehaviorPolicy::DltControlled)?;
    let (b, d) = (&baseline.summary, &dlt.summary);
    let pct = |base: f64, x: f64| if base > 0.0 { 100.0 * (base - x) / base } else { 0.0 };
    let report = ComparisonReport {
        seed: cfg.seed(),
        baseline: ArmReport::from(b),
        dlt: ArmReport::from(d),
        co2_reduction_pct: pct(b.total_co2_g, d.total_co2_g),
        nox_reduction_pct: pct(b.total_nox_g, d.total_nox_g),
        latency_overhead_s: match (b.mean_trade_latency, d.mean_trade_latency) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        },
    };
    Ok(Comparison { report, baseline, dlt })
}

/// Alert state consistency, checked by tests: `RedAlert` iff negative.
pub fn red_alert_consistent(exchange: &Exchange) -> bool {
    exchange
        .accounts()
        .iter()
        .all(|a| (a.alert_state == AlertState::RedAlert) == a.balance.is_negative())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allowance::replay;
    use crate::scenario::ScenarioConfig;

    fn small(policy: BehaviorPolicy, vehicles: u32) -> ScenarioConfig {
        ScenarioConfig::default()
            .modified(|d| {
                d.behavior_policy = policy;
                d.fleet.vehicles = vehicles;
                d.time.period_hours = 6.0;
            })
            .unwrap()
    }

    #[test]
    fn single_vehicle_baseline_has_no_trades() {
        let out = run(&small(BehaviorPolicy::Baseline, 1)).unwrap();
        let s = &out.summary;
        assert_eq!(s.trades_proposed, 0);
        assert_eq!(s.ticks, 24);
        let grams: f64 = out.samples.iter().map(|x| x.grams).sum();
        assert!((grams - s.total_co2_g).abs() < 1e-6 * grams);
        let expected = ScenarioConfig::default().initial_balance() + s.subsidies - s.penalties;
        assert_eq!(s.final_balances, vec![expected]);
    }

    #[test]
    fn events_are_ordered_and_replay_matches() {
        let out = run(&small(BehaviorPolicy::DltControlled, 40)).unwrap();
        for w in out.events.windows(2) {
            assert!(w[0].t <= w[1].t);
            if w[0].t == w[1].t {
                assert!(w[0].kind() <= w[1].kind(), "{:?} then {:?}", w[0], w[1]);
            }
        }
        let s = &out.summary;
        assert_eq!(s.trades_settled + s.trades_aborted, s.trades_proposed);
        out.ledger.verify_chain().unwrap();
        assert_eq!(out.ledger.pending_len(), 0);
        let balances = replay(&out.ledger.transactions().unwrap()).unwrap();
        let replayed: Vec<Credits> = balances.values().copied().collect();
        assert_eq!(replayed, s.final_balances);
        assert!(red_alert_consistent(&out.exchange));
    }

    #[test]
    fn identical_config_identical_output() {
        let cfg = small(BehaviorPolicy::DltControlled, 30);
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.events, b.events);
        assert_eq!(a.ledger.blocks(), b.ledger.blocks());
        let c = run(&cfg.with_seed(cfg.seed() + 1)).unwrap();
        assert_ne!(a.summary, c.summary);
    }

    #[test]
    fn multi_period_resets() {
        let cfg = small(BehaviorPolicy::DltControlled, 10).modified(|d| d.periods = 3).unwrap();
        let out = run(&cfg).unwrap();
        let resets: Vec<f64> = out
            .events
            .iter()
            .filter(|e| e.kind() == EventKind::PeriodReset)
            .map(|e| e.t)
            .collect();
        assert_eq!(resets, vec![0.0, 21_600.0, 43_200.0]);
        assert_eq!(out.summary.ticks, 72);
        let balances = replay(&out.ledger.transactions().unwrap()).unwrap();
        assert_eq!(balances.values().copied().collect::<Vec<_>>(), out.summary.final_balances);
    }

    #[test]
    fn compare_has_paired_arms() {
        let c = compare(&small(BehaviorPolicy::DltControlled, 20)).unwrap();
        assert_eq!(c.report.baseline.ticks, c.report.dlt.ticks);
        assert!(!c.baseline.summary.confirm_trades && c.dlt.summary.confirm_trades);
    }
}
