//! Trade outcomes from contact windows, transmission and confirmation
//! latency, and the Monte Carlo success-probability estimator.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{expected_comp_latency, MinerPool};
use crate::mobility::{trans_latency, window_upper_bound, ContactWindow, MobilityError, WindowLength};
use crate::scenario::streams::{stream_rng, StreamName};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatencyError {
    #[error("n_trials must be >= 1")]
    NoTrials,
    #[error("empirical window sampler is empty")]
    EmptySampler,
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("unknown sweep parameter {0:?} (expected rel_speed, block_size, miner_count or data_rate)")]
    UnknownParameter(String),
    #[error("invalid {param} grid value {value}")]
    InvalidGridValue { param: SweepParam, value: f64 },
    #[error(transparent)]
    Mobility(#[from] MobilityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeAttempt {
    pub l_total: WindowLength,
    pub l_trans: f64,
    /// `None` when transmission alone exceeds the window.
    pub l_comp_draw: Option<f64>,
    pub succeeded: bool,
}

impl TradeAttempt {
    /// Time from proposal to confirmed delivery.
    pub fn completion_latency(&self) -> Option<f64> {
        self.l_comp_draw.map(|c| self.l_trans + c)
    }
}

fn attempt_with<F: FnOnce() -> f64>(l_total: WindowLength, l_trans: f64, draw: F) -> TradeAttempt {
    match l_total {
        WindowLength::Finite(l) if l_trans > l => TradeAttempt {
            l_total,
            l_trans,
            l_comp_draw: None,
            succeeded: false,
        },
        _ => {
            let c = draw();
            TradeAttempt {
                l_total,
                l_trans,
                l_comp_draw: Some(c),
                succeeded: match l_total {
                    WindowLength::Finite(l) => l_trans + c <= l,
                    WindowLength::OpenEnded => true,
                },
            }
        }
    }
}

/// Transmits one block and waits for the miner race: succeeds iff
/// `L_trans + L_comp <= L_total`. Open-ended windows always succeed.
pub fn attempt_trade<R: Rng + ?Sized>(
    window: &ContactWindow,
    block_size_bits: f64,
    data_rate_bps: f64,
    pool: &MinerPool,
    rng: &mut R,
) -> Result<TradeAttempt, LatencyError> {
    let l_trans = trans_latency(block_size_bits, data_rate_bps)?;
    Ok(attempt_with(window.l_total, l_trans, || pool.race(rng).1))
}

/// The same exchange without a ledger: delivery completes after
/// transmission alone.
pub fn attempt_trade_unconfirmed(
    window: &ContactWindow,
    block_size_bits: f64,
    data_rate_bps: f64,
) -> Result<TradeAttempt, LatencyError> {
    let l_trans = trans_latency(block_size_bits, data_rate_bps)?;
    Ok(attempt_with(window.l_total, l_trans, || 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum WindowSampler {
    Constant(WindowLength),
    /// Uniform over observed windows.
    Empirical(Vec<WindowLength>),
}

impl WindowSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WindowLength {
        match self {
            WindowSampler::Constant(w) => *w,
            WindowSampler::Empirical(ws) => ws[rng.random_range(0..ws.len())],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// `1 - exp(-lambda_c * M * (L_total - L_trans))` for a constant window.
    pub closed_form: Option<f64>,
    pub trials: u32,
    /// Trials whose window was open-ended (all counted as successes).
    pub open_ended: u32,
}

pub fn closed_form_success(l_total: WindowLength, l_trans: f64, pool: &MinerPool) -> f64 {
    match l_total {
        WindowLength::OpenEnded => 1.0,
        WindowLength::Finite(l) if l < l_trans => 0.0,
        WindowLength::Finite(l) => 1.0 - (-pool.lambda_c() * pool.miner_count() as f64 * (l - l_trans)).exp(),
    }
}

/// Monte Carlo estimate of `Pr(L_trans + L_comp <= L_total)`.
///
/// One base seed is taken from `rng`; trial `k` runs on its own ChaCha8
/// stream `k` under that seed. Two calls whose `rng`s agree therefore see the
/// same per-trial draws, which keeps estimates monotone across parameter grids.
pub fn success_probability<R: Rng + ?Sized>(
    sampler: &WindowSampler,
    block_size_bits: f64,
    data_rate_bps: f64,
    pool: &MinerPool,
    n_trials: u32,
    rng: &mut R,
) -> Result<SuccessEstimate, LatencyError> {
    if n_trials == 0 {
        return Err(LatencyError::NoTrials);
    }
    if matches!(sampler, WindowSampler::Empirical(ws) if ws.is_empty()) {
        return Err(LatencyError::EmptySampler);
    }
    let l_trans = trans_latency(block_size_bits, data_rate_bps)?;
    let base = ChaCha8Rng::seed_from_u64(rng.random());
    let mut successes = 0u32;
    let mut open_ended = 0u32;
    for trial in 0..n_trials {
        let mut trial_rng = base.clone();
        trial_rng.set_stream(trial as u64);
        let window = sampler.sample(&mut trial_rng);
        if window.is_open_ended() {
            open_ended += 1;
        }
        if attempt_with(window, l_trans, || pool.race(&mut trial_rng).1).succeeded {
            successes += 1;
        }
    }
    let n = n_trials as f64;
    let p = successes as f64 / n;
    Ok(SuccessEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        closed_form: match sampler {
            WindowSampler::Constant(w) => Some(closed_form_success(*w, l_trans, pool)),
            WindowSampler::Empirical(_) => None,
        },
        trials: n_trials,
        open_ended,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    RelSpeed,
    BlockSize,
    MinerCount,
    DataRate,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::RelSpeed => "rel_speed",
            SweepParam::BlockSize => "block_size",
            SweepParam::MinerCount => "miner_count",
            SweepParam::DataRate => "data_rate",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = LatencyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rel_speed" => Ok(SweepParam::RelSpeed),
            "block_size" => Ok(SweepParam::BlockSize),
            "miner_count" => Ok(SweepParam::MinerCount),
            "data_rate" => Ok(SweepParam::DataRate),
            other => Err(LatencyError::UnknownParameter(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Window bound at the row's relative speed and range.
    pub l_total: f64,
    pub l_trans: f64,
    pub expected_comp: f64,
    pub p_closed_form: f64,
    pub p_mc: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const HEADER: [&'static str; 7] = ["value", "l_total", "l_trans", "expected_comp", "p_closed_form", "p_mc", "stderr"];

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER)?;
        for r in &self.rows {
            w.write_record(
                [r.value, r.l_total, r.l_trans, r.expected_comp, r.p_closed_form, r.p_mc, r.stderr].map(|x| x.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates latency terms and success probability at each grid value of
/// `param`, holding the rest of `base` fixed. Every point uses the same
/// mining seed.
pub fn sweep(param: SweepParam, grid: &[f64], base: &ScenarioConfig) -> Result<SweepTable, LatencyError> {
    if grid.is_empty() {
        return Err(LatencyError::EmptyGrid);
    }
    let comms = base.comms();
    let analysis = base.analysis();
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let bad = || LatencyError::InvalidGridValue { param, value };
        if !(value > 0.0 && value.is_finite()) {
            return Err(bad());
        }
        let mut rel_kmh = analysis.rel_speed.kmh();
        let mut sb = comms.block_size_bits as f64;
        let mut rate = comms.data_rate_bps;
        let mut pool = *base.miner_pool();
        match param {
            SweepParam::RelSpeed => rel_kmh = value,
            SweepParam::BlockSize => sb = value,
            SweepParam::DataRate => rate = value,
            SweepParam::MinerCount => {
                if value.fract() != 0.0 || value > u32::MAX as f64 {
                    return Err(bad());
                }
                pool = MinerPool::with_rate(value as u32, pool.lambda_c()).map_err(|_| bad())?;
            }
        }
        let l_total = window_upper_bound(comms.range_m, rel_kmh)?;
        let l_trans = trans_latency(sb, rate)?;
        let window = WindowLength::Finite(l_total);
        let mut rng = stream_rng(base.seed(), StreamName::Mining);
        let est = success_probability(&WindowSampler::Constant(window), sb, rate, &pool, analysis.trials, &mut rng)?;
        rows.push(SweepRow {
            value,
            l_total,
            l_trans,
            expected_comp: expected_comp_latency(&pool),
            p_closed_form: closed_form_success(window, l_trans, &pool),
            p_mc: est.estimate,
            stderr: est.stderr,
        });
    }
    Ok(SweepTable { parameter: param, rows })
}
