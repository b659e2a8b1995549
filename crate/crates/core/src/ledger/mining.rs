//! Proof-of-work confirmation latency as a race between miners.
//!
//! Each of the `M` miners needs an exponentially distributed time with rate
//! `lambda_c = lambda0 * P_c` to solve the puzzle; the block is sealed by the
//! fastest one.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::LedgerError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinerPool {
    miner_count: u32,
    lambda_c: f64,
}

impl MinerPool {
    /// `lambda0` in 1/(J*s) and `power_w` in watts give the per-miner rate in 1/s.
    pub fn new(miner_count: u32, lambda0: f64, power_w: f64) -> Result<Self, LedgerError> {
        MinerPool::with_rate(miner_count, lambda0 * power_w)
    }

    pub fn with_rate(miner_count: u32, lambda_c: f64) -> Result<Self, LedgerError> {
        if miner_count == 0 {
            return Err(LedgerError::InvalidPool("miner_count_M must be >= 1".into()));
        }
        if !(lambda_c > 0.0 && lambda_c.is_finite()) {
            return Err(LedgerError::InvalidPool(format!(
                "per-miner rate lambda_c must be a positive finite number, got {lambda_c}"
            )));
        }
        Ok(MinerPool {
            miner_count,
            lambda_c,
        })
    }

    pub fn miner_count(&self) -> u32 {
        self.miner_count
    }

    pub fn lambda_c(&self) -> f64 {
        self.lambda_c
    }

    /// Runs one race: every miner draws its solve time, the minimum wins.
    /// Returns `(winner, latency_s)`.
    pub fn race<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, f64) {
        let exp = Exp::new(self.lambda_c).expect("rate validated at construction");
        let mut best = (0, f64::INFINITY);
        for miner in 0..self.miner_count {
            let w = exp.sample(rng);
            if w < best.1 {
                best = (miner, w);
            }
        }
        best
    }
}

/// Mean latency of the fastest miner: the integral of its survival
/// function, `1 / (lambda_c * M)`.
pub fn expected_comp_latency(pool: &MinerPool) -> f64 {
    1.0 / (pool.lambda_c * pool.miner_count as f64)
}

/// `Pr(W_fastest > w) = (1 - F(w))^M = exp(-lambda_c * M * w)`.
pub fn survival_fastest(pool: &MinerPool, w: f64) -> Result<f64, LedgerError> {
    if !(w >= 0.0) {
        return Err(LedgerError::NegativeLatency(w));
    }
    let single = (-pool.lambda_c * w).exp();
    Ok(single.powi(pool.miner_count as i32))
}
