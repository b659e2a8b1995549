use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::allowance::{AbortReason, Alert};
use crate::credits::Credits;
use crate::mobility::WindowLength;
use crate::VehicleId;

/// Event kinds in stage order. Events within a tick are sorted by this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Sample,
    Penalty,
    Subsidy,
    Alert,
    TradeProposed,
    TradeConfirmed,
    TradeSettled,
    TradeAborted,
    BlockSealed,
    PeriodReset,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        EventKind::Sample,
        EventKind::Penalty,
        EventKind::Subsidy,
        EventKind::Alert,
        EventKind::TradeProposed,
        EventKind::TradeConfirmed,
        EventKind::TradeSettled,
        EventKind::TradeAborted,
        EventKind::BlockSealed,
        EventKind::PeriodReset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Sample => "Sample",
            EventKind::Penalty => "Penalty",
            EventKind::Subsidy => "Subsidy",
            EventKind::Alert => "Alert",
            EventKind::TradeProposed => "TradeProposed",
            EventKind::TradeConfirmed => "TradeConfirmed",
            EventKind::TradeSettled => "TradeSettled",
            EventKind::TradeAborted => "TradeAborted",
            EventKind::BlockSealed => "BlockSealed",
            EventKind::PeriodReset => "PeriodReset",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subject {
    System,
    Vehicle(VehicleId),
    /// Buyer, seller.
    Pair(VehicleId, VehicleId),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::System => f.write_str("system"),
            Subject::Vehicle(v) => write!(f, "{v}"),
            Subject::Pair(b, s) => write!(f, "{b}->{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventData {
    Sample {
        epsilon: f64,
        distance_km: f64,
        grams: f64,
        all_idle: bool,
    },
    Penalty {
        amount: Credits,
        balance: Credits,
    },
    Subsidy {
        amount: Credits,
        balance: Credits,
    },
    Alert(Alert),
    TradeProposed {
        order: u64,
        amount: Credits,
    },
    TradeConfirmed {
        order: u64,
    },
    TradeSettled {
        order: u64,
        amount: Credits,
        latency: f64,
        window: WindowLength,
    },
    TradeAborted {
        order: u64,
        reason: AbortReason,
    },
    BlockSealed {
        height: u64,
        txs: usize,
        latency: f64,
    },
    PeriodReset {
        period: u32,
        balance: Credits,
    },
}

impl EventData {
    pub fn kind(&self) -> EventKind {
        match self {
            EventData::Sample { .. } => EventKind::Sample,
            EventData::Penalty { .. } => EventKind::Penalty,
            EventData::Subsidy { .. } => EventKind::Subsidy,
            EventData::Alert(_) => EventKind::Alert,
            EventData::TradeProposed { .. } => EventKind::TradeProposed,
            EventData::TradeConfirmed { .. } => EventKind::TradeConfirmed,
            EventData::TradeSettled { .. } => EventKind::TradeSettled,
            EventData::TradeAborted { .. } => EventKind::TradeAborted,
            EventData::BlockSealed { .. } => EventKind::BlockSealed,
            EventData::PeriodReset { .. } => EventKind::PeriodReset,
        }
    }
}

impl fmt::Display for EventData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            EventData::Sample { epsilon, distance_km, grams, all_idle } => {
                write!(f, "epsilon={epsilon};distance_km={distance_km};grams={grams}")?;
                if all_idle {
                    f.write_str(";all_idle")?;
                }
                Ok(())
            }
            EventData::Penalty { amount, balance } | EventData::Subsidy { amount, balance } => {
                write!(f, "amount={amount};balance={balance}")
            }
            EventData::Alert(Alert::Speed) => f.write_str("alert=SpeedAlert"),
            EventData::Alert(Alert::Red) => f.write_str("alert=RedAlert"),
            EventData::TradeProposed { order, amount } => write!(f, "order={order};amount={amount}"),
            EventData::TradeConfirmed { order } => write!(f, "order={order}"),
            EventData::TradeSettled { order, amount, latency, window } => {
                write!(f, "order={order};amount={amount};latency={latency};window=")?;
                match window {
                    WindowLength::Finite(l) => write!(f, "{l}"),
                    WindowLength::OpenEnded => f.write_str("open_ended"),
                }
            }
            EventData::TradeAborted { order, reason } => write!(f, "order={order};reason={reason}"),
            EventData::BlockSealed { height, txs, latency } => write!(f, "height={height};txs={txs};latency={latency}"),
            EventData::PeriodReset { period, balance } => write!(f, "period={period};balance={balance}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    /// Absolute simulation time, seconds.
    pub t: f64,
    pub subject: Subject,
    pub data: EventData,
}

impl SimEvent {
    pub fn kind(&self) -> EventKind {
        self.data.kind()
    }
}

pub const EVENT_CSV_HEADER: [&str; 4] = ["t", "kind", "subject", "data"];

pub fn write_events_csv<W: Write>(out: W, events: &[SimEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_CSV_HEADER)?;
    for e in events {
        w.write_record([e.t.to_string(), e.kind().to_string(), e.subject.to_string(), e.data.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_sort_in_stage_order() {
        let mut sorted = EventKind::ALL;
        sorted.sort();
        assert_eq!(sorted, EventKind::ALL);
        for k in EventKind::ALL {
            assert_eq!(EventKind::parse(k.as_str()), Some(k));
        }
    }

    #[test]
    fn csv_rendering() {
        let events = [
            SimEvent {
                t: 900.0,
                subject: Subject::Pair(VehicleId(3), VehicleId(7)),
                data: EventData::TradeAborted {
                    order: 4,
                    reason: AbortReason::Remark2,
                },
            },
            SimEvent {
                t: 900.0,
                subject: Subject::Vehicle(VehicleId(2)),
                data: EventData::Penalty {
                    amount: Credits::from_f64(1.5),
                    balance: Credits::from_f64(-0.25),
                },
            },
        ];
        let mut out = Vec::new();
        write_events_csv(&mut out, &events).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,kind,subject,data");
        assert_eq!(lines[1], "900,TradeAborted,3->7,order=4;reason=Remark 2");
        assert_eq!(lines[2], "900,Penalty,2,amount=1.500000;balance=-0.250000");
    }
}
