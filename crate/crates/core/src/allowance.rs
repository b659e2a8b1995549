//! Emission allowance balances (EAB) and the four-step trade protocol.
//!
//! The free functions are the state machine proper: each mutates accounts
//! and returns the transaction payload that records the change. [`Exchange`]
//! drives them for a whole fleet and appends every payload to a [`Ledger`].
//! [`replay`] applies a recorded transaction sequence to fresh accounts.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credits::Credits;
use crate::emissions::EmissionSample;
use crate::ledger::{Author, Ledger, LedgerError, LedgerTx, TradeRecord, TxPayload};
use crate::VehicleId;

const TIMESTAMP_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllowanceError {
    #[error("Remark 1: initial_balance_B0 must be > 0, got {0}")]
    Remark1(Credits),
    #[error("invalid market rule: {0}")]
    InvalidRule(String),
    #[error("stale or out-of-order sample for vehicle {vehicle}: expected t={expected}, got t={got}")]
    StaleSample { vehicle: VehicleId, expected: f64, got: f64 },
    #[error("buyer not in deficit: vehicle {vehicle} balance {balance}")]
    BuyerNotInDeficit { vehicle: VehicleId, balance: Credits },
    #[error("trade amount must be > 0, got {0}")]
    NonPositiveAmount(Credits),
    #[error("order {order} is {found}, expected {expected}")]
    WrongState {
        order: u64,
        expected: &'static str,
        found: OrderStatus,
    },
    #[error("account mismatch: order {order} names vehicle {expected}, got {got}")]
    WrongAccount { order: u64, expected: VehicleId, got: VehicleId },
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("replay violation at tx {index}: {reason}")]
    ReplayViolation { index: usize, reason: String },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlertState {
    None,
    SpeedAlert,
    RedAlert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alert {
    /// Emissions above threshold: slow down.
    Speed,
    /// Balance went negative.
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllowanceAccount {
    pub vehicle_id: VehicleId,
    pub balance: Credits,
    /// Seconds since period start of the last applied sample.
    pub last_update: f64,
    pub alert_state: AlertState,
}

impl AllowanceAccount {
    pub fn new(vehicle_id: VehicleId, balance: Credits) -> Self {
        AllowanceAccount {
            vehicle_id,
            balance,
            last_update: 0.0,
            alert_state: if balance.is_negative() {
                AlertState::RedAlert
            } else {
                AlertState::None
            },
        }
    }

    /// Clear-standing: not under any alert and holding credits to sell.
    pub fn is_compliant_seller(&self) -> bool {
        self.alert_state == AlertState::None && self.balance.is_positive()
    }

    fn refresh_red_alert(&mut self) {
        if self.balance.is_negative() {
            self.alert_state = AlertState::RedAlert;
        } else if self.alert_state == AlertState::RedAlert {
            self.alert_state = AlertState::None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketRule {
    pub threshold_g_per_km: f64,
    pub penalty_alpha: f64,
    pub subsidy_beta: f64,
    pub subsidy_cap: Credits,
}

impl MarketRule {
    pub fn new(threshold_g_per_km: f64, penalty_alpha: f64, subsidy_beta: f64, subsidy_cap: Credits) -> Result<Self, AllowanceError> {
        if !(threshold_g_per_km > 0.0) {
            return Err(AllowanceError::InvalidRule("threshold must be > 0".into()));
        }
        if !(penalty_alpha >= 0.0) || !(subsidy_beta >= 0.0) {
            return Err(AllowanceError::InvalidRule("penalty_alpha and subsidy_beta must be >= 0".into()));
        }
        if subsidy_cap.is_negative() {
            return Err(AllowanceError::InvalidRule("subsidy_cap must be >= 0".into()));
        }
        Ok(MarketRule {
            threshold_g_per_km,
            penalty_alpha,
            subsidy_beta,
            subsidy_cap,
        })
    }

    /// Penalty for a sample over the threshold, `alpha * excess * km`.
    pub fn penalty(&self, epsilon: f64, distance_km: f64) -> Credits {
        Credits::from_f64(self.penalty_alpha * (epsilon - self.threshold_g_per_km) * distance_km)
    }

    /// Subsidy for a compliant sample, `min(cap, beta * headroom * km)`.
    pub fn subsidy(&self, epsilon: f64, distance_km: f64) -> Credits {
        Credits::from_f64(self.subsidy_beta * (self.threshold_g_per_km - epsilon) * distance_km).min(self.subsidy_cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    /// Seller balance below the amount.
    Remark2,
    /// Transmission plus confirmation did not fit the contact window.
    WindowExceeded,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortReason::Remark2 => "Remark 2",
            AbortReason::WindowExceeded => "window exceeded",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderStatus {
    Proposed,
    SellerConfirmed,
    Settled,
    Aborted(AbortReason),
}

impl fmt::Display for OrderStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderStatus::Proposed => f.write_str("Proposed"),
            OrderStatus::SellerConfirmed => f.write_str("SellerConfirmed"),
            OrderStatus::Settled => f.write_str("Settled"),
            OrderStatus::Aborted(r) => write!(f, "Aborted({r})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeOrder {
    pub id: u64,
    pub buyer: VehicleId,
    pub seller: VehicleId,
    pub amount: Credits,
    pub timestamp: f64,
    pub status: OrderStatus,
}

impl TradeOrder {
    fn record(&self) -> TradeRecord {
        TradeRecord {
            order_id: self.id,
            buyer: self.buyer,
            seller: self.seller,
            amount: self.amount,
            t: self.timestamp,
        }
    }

    fn expect(&self, status: OrderStatus, label: &'static str) -> Result<(), AllowanceError> {
        if self.status == status {
            Ok(())
        } else {
            Err(AllowanceError::WrongState {
                order: self.id,
                expected: label,
                found: self.status,
            })
        }
    }
}

/// Period boundary: every balance back to `b0`, alerts cleared. Returns one
/// `BalanceReset` payload per account.
pub fn reset_period(accounts: &mut [AllowanceAccount], b0: Credits, t: f64) -> Result<Vec<TxPayload>, AllowanceError> {
    if !b0.is_positive() {
        return Err(AllowanceError::Remark1(b0));
    }
    Ok(accounts
        .iter_mut()
        .map(|a| {
            a.balance = b0;
            a.alert_state = AlertState::None;
            a.last_update = 0.0;
            TxPayload::BalanceReset {
                vehicle: a.vehicle_id,
                t,
                balance: b0,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub payload: TxPayload,
    pub alerts: Vec<Alert>,
}

/// Applies the threshold rule to one sample taken `interval_s` after the
/// account's last update. `t` is absolute simulation time for the record.
pub fn apply_emission_control(
    account: &mut AllowanceAccount,
    sample: &EmissionSample,
    rule: &MarketRule,
    interval_s: f64,
    t: f64,
) -> Result<ControlOutcome, AllowanceError> {
    let expected = account.last_update + interval_s;
    if sample.vehicle_id != account.vehicle_id || (sample.timestamp_s - expected).abs() > TIMESTAMP_TOLERANCE_S {
        return Err(AllowanceError::StaleSample {
            vehicle: account.vehicle_id,
            expected,
            got: sample.timestamp_s,
        });
    }
    account.last_update = sample.timestamp_s;
    let mut alerts = Vec::new();
    let payload = if sample.epsilon > rule.threshold_g_per_km {
        let amount = rule.penalty(sample.epsilon, sample.distance_km);
        account.balance -= amount;
        account.alert_state = AlertState::SpeedAlert;
        alerts.push(Alert::Speed);
        TxPayload::Penalty {
            vehicle: account.vehicle_id,
            t,
            amount,
            epsilon: sample.epsilon,
        }
    } else {
        let amount = rule.subsidy(sample.epsilon, sample.distance_km);
        account.balance += amount;
        account.alert_state = AlertState::None;
        TxPayload::Subsidy {
            vehicle: account.vehicle_id,
            t,
            amount,
            epsilon: sample.epsilon,
        }
    };
    if account.balance.is_negative() {
        account.alert_state = AlertState::RedAlert;
        alerts.push(Alert::Red);
    }
    Ok(ControlOutcome { payload, alerts })
}

/// Buyer side of a trade. Only a vehicle in deficit may buy.
pub fn propose_trade(
    id: u64,
    buyer: &AllowanceAccount,
    seller: &AllowanceAccount,
    amount: Credits,
    t: f64,
) -> Result<(TradeOrder, TxPayload), AllowanceError> {
    if !amount.is_positive() {
        return Err(AllowanceError::NonPositiveAmount(amount));
    }
    if !buyer.balance.is_negative() {
        return Err(AllowanceError::BuyerNotInDeficit {
            vehicle: buyer.vehicle_id,
            balance: buyer.balance,
        });
    }
    let order = TradeOrder {
        id,
        buyer: buyer.vehicle_id,
        seller: seller.vehicle_id,
        amount,
        timestamp: t,
        status: OrderStatus::Proposed,
    };
    Ok((order, TxPayload::TradeBuy(order.record())))
}

/// Seller side of a trade. Returns the `TradeSell` payload when the seller can
/// cover the amount; otherwise the order aborts.
pub fn confirm_trade(order: &mut TradeOrder, seller: &AllowanceAccount) -> Result<Option<TxPayload>, AllowanceError> {
    order.expect(OrderStatus::Proposed, "Proposed")?;
    check_party(order, order.seller, seller)?;
    if order.amount <= seller.balance {
        order.status = OrderStatus::SellerConfirmed;
        Ok(Some(TxPayload::TradeSell(order.record())))
    } else {
        order.status = OrderStatus::Aborted(AbortReason::Remark2);
        Ok(None)
    }
}

/// Settlement. Moves credits only if delivery succeeded and the seller still
/// covers the amount.
pub fn settle_trade(
    order: &mut TradeOrder,
    buyer: &mut AllowanceAccount,
    seller: &mut AllowanceAccount,
    delivery_succeeded: bool,
) -> Result<Option<TxPayload>, AllowanceError> {
    order.expect(OrderStatus::SellerConfirmed, "SellerConfirmed")?;
    check_party(order, order.buyer, buyer)?;
    check_party(order, order.seller, seller)?;
    if !delivery_succeeded {
        order.status = OrderStatus::Aborted(AbortReason::WindowExceeded);
        return Ok(None);
    }
    if order.amount > seller.balance {
        order.status = OrderStatus::Aborted(AbortReason::Remark2);
        return Ok(None);
    }
    buyer.balance += order.amount;
    seller.balance -= order.amount;
    buyer.refresh_red_alert();
    seller.refresh_red_alert();
    order.status = OrderStatus::Settled;
    Ok(Some(TxPayload::Settlement(order.record())))
}

fn check_party(order: &TradeOrder, expected: VehicleId, got: &AllowanceAccount) -> Result<(), AllowanceError> {
    if expected == got.vehicle_id {
        Ok(())
    } else {
        Err(AllowanceError::WrongAccount {
            order: order.id,
            expected,
            got: got.vehicle_id,
        })
    }
}

/// One entry of the account audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountEntry {
    pub t: f64,
    pub vehicle_id: VehicleId,
    pub balance: Credits,
    pub kind: &'static str,
    pub amount: Credits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertEntry {
    pub t: f64,
    pub vehicle_id: VehicleId,
    pub alert: Alert,
}

/// Fleet-wide allowance book. Every mutation is recorded on the ledger.
#[derive(Debug, Clone)]
pub struct Exchange {
    accounts: Vec<AllowanceAccount>,
    rule: MarketRule,
    initial_balance: Credits,
    next_order: u64,
    trail: Vec<AccountEntry>,
    alerts: Vec<AlertEntry>,
}

impl Exchange {
    pub fn new(n_vehicles: u32, rule: MarketRule, initial_balance: Credits) -> Result<Self, AllowanceError> {
        if !initial_balance.is_positive() {
            return Err(AllowanceError::Remark1(initial_balance));
        }
        Ok(Exchange {
            accounts: (0..n_vehicles)
                .map(|i| AllowanceAccount::new(VehicleId(i), initial_balance))
                .collect(),
            rule,
            initial_balance,
            next_order: 0,
            trail: Vec::new(),
            alerts: Vec::new(),
        })
    }

    pub fn accounts(&self) -> &[AllowanceAccount] {
        &self.accounts
    }

    pub fn account(&self, id: VehicleId) -> Result<&AllowanceAccount, AllowanceError> {
        self.accounts.get(id.index()).ok_or(AllowanceError::UnknownVehicle(id))
    }

    pub fn rule(&self) -> &MarketRule {
        &self.rule
    }

    pub fn total(&self) -> Credits {
        self.accounts.iter().map(|a| a.balance).sum()
    }

    pub fn trail(&self) -> &[AccountEntry] {
        &self.trail
    }

    pub fn alert_log(&self) -> &[AlertEntry] {
        &self.alerts
    }

    pub fn reset_period(&mut self, ledger: &mut Ledger, t: f64) -> Result<(), AllowanceError> {
        let payloads = reset_period(&mut self.accounts, self.initial_balance, t)?;
        for p in payloads {
            if let TxPayload::BalanceReset { vehicle, balance, .. } = p {
                self.trail.push(AccountEntry {
                    t,
                    vehicle_id: vehicle,
                    balance,
                    kind: "BalanceReset",
                    amount: balance,
                });
            }
            ledger.submit(Author::System, p)?;
        }
        Ok(())
    }

    pub fn control(
        &mut self,
        ledger: &mut Ledger,
        sample: &EmissionSample,
        interval_s: f64,
        t: f64,
    ) -> Result<ControlOutcome, AllowanceError> {
        let id = sample.vehicle_id;
        let account = self.accounts.get_mut(id.index()).ok_or(AllowanceError::UnknownVehicle(id))?;
        let outcome = apply_emission_control(account, sample, &self.rule, interval_s, t)?;
        let (kind, amount) = match outcome.payload {
            TxPayload::Penalty { amount, .. } => ("Penalty", -amount),
            TxPayload::Subsidy { amount, .. } => ("Subsidy", amount),
            _ => unreachable!("control emits penalty or subsidy"),
        };
        self.trail.push(AccountEntry {
            t,
            vehicle_id: id,
            balance: account.balance,
            kind,
            amount,
        });
        for &alert in &outcome.alerts {
            self.alerts.push(AlertEntry { t, vehicle_id: id, alert });
        }
        ledger.submit(Author::System, outcome.payload)?;
        Ok(outcome)
    }

    pub fn propose(
        &mut self,
        ledger: &mut Ledger,
        buyer: VehicleId,
        seller: VehicleId,
        amount: Credits,
        t: f64,
    ) -> Result<TradeOrder, AllowanceError> {
        let (order, payload) = propose_trade(self.next_order, self.account(buyer)?, self.account(seller)?, amount, t)?;
        self.next_order += 1;
        ledger.submit(Author::Vehicle(buyer), payload)?;
        Ok(order)
    }

    pub fn confirm(&mut self, ledger: &mut Ledger, order: &mut TradeOrder) -> Result<(), AllowanceError> {
        let seller = *self.account(order.seller)?;
        if let Some(p) = confirm_trade(order, &seller)? {
            ledger.submit(Author::Vehicle(order.seller), p)?;
        }
        Ok(())
    }

    pub fn settle(&mut self, ledger: &mut Ledger, order: &mut TradeOrder, delivered: bool, t: f64) -> Result<(), AllowanceError> {
        let (b, s) = (order.buyer.index(), order.seller.index());
        if b >= self.accounts.len() || s >= self.accounts.len() || b == s {
            return Err(AllowanceError::UnknownVehicle(if b == s { order.seller } else { order.buyer }));
        }
        let (buyer, seller) = pair_mut(&mut self.accounts, b, s);
        if let Some(p) = settle_trade(order, buyer, seller, delivered)? {
            let (buyer, seller) = (*buyer, *seller);
            for (acct, amount) in [(buyer, order.amount), (seller, -order.amount)] {
                self.trail.push(AccountEntry {
                    t,
                    vehicle_id: acct.vehicle_id,
                    balance: acct.balance,
                    kind: "Settlement",
                    amount,
                });
            }
            ledger.submit(Author::System, p)?;
        }
        Ok(())
    }

    /// CSV `t,vehicle_id,balance,event,amount`.
    pub fn write_trail_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "vehicle_id", "balance", "event", "amount"])?;
        for e in &self.trail {
            w.write_record([
                e.t.to_string(),
                e.vehicle_id.to_string(),
                e.balance.to_string(),
                e.kind.to_string(),
                e.amount.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `t,vehicle_id,alert`.
    pub fn write_alerts_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "vehicle_id", "alert"])?;
        for e in &self.alerts {
            let kind = match e.alert {
                Alert::Speed => "SpeedAlert",
                Alert::Red => "RedAlert",
            };
            w.write_record([e.t.to_string(), e.vehicle_id.to_string(), kind.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn pair_mut<T>(items: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = items.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = items.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Applies a recorded transaction sequence to fresh accounts and returns the
/// final balance per vehicle. Fails on any record the state machine could
/// not have produced: a non-positive reset, or a settlement exceeding the
/// seller's balance.
pub fn replay(txs: &[LedgerTx]) -> Result<BTreeMap<VehicleId, Credits>, AllowanceError> {
    let mut balances: BTreeMap<VehicleId, Credits> = BTreeMap::new();
    let violation = |index: usize, reason: String| AllowanceError::ReplayViolation { index, reason };
    for (i, tx) in txs.iter().enumerate() {
        if !tx.verify() {
            return Err(violation(i, format!("digest mismatch {}", tx.digest)));
        }
        match tx.payload {
            TxPayload::BalanceReset { vehicle, balance, .. } => {
                if !balance.is_positive() {
                    return Err(violation(i, format!("Remark 1: reset to {balance}")));
                }
                balances.insert(vehicle, balance);
            }
            TxPayload::Penalty { vehicle, amount, .. } => {
                *balances.get_mut(&vehicle).ok_or_else(|| violation(i, format!("penalty before reset for {vehicle}")))? -= amount;
            }
            TxPayload::Subsidy { vehicle, amount, .. } => {
                *balances.get_mut(&vehicle).ok_or_else(|| violation(i, format!("subsidy before reset for {vehicle}")))? += amount;
            }
            TxPayload::Settlement(r) => {
                let seller = *balances.get(&r.seller).ok_or_else(|| violation(i, format!("unknown seller {}", r.seller)))?;
                if r.amount > seller {
                    return Err(violation(i, format!("Remark 2: sold {} with balance {seller}", r.amount)));
                }
                if !balances.contains_key(&r.buyer) {
                    return Err(violation(i, format!("unknown buyer {}", r.buyer)));
                }
                *balances.get_mut(&r.buyer).expect("checked") += r.amount;
                *balances.get_mut(&r.seller).expect("checked") -= r.amount;
            }
            TxPayload::EmissionRecord { .. } | TxPayload::TradeBuy(_) | TxPayload::TradeSell(_) => {}
        }
    }
    Ok(balances)
}
