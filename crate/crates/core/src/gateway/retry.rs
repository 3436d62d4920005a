use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::error::{ProviderError, ProviderErrorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub multiplier: f64,
    pub jitter_fraction: f64,
    /// Upper bound on any single delay, before jitter.
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay_ms: 500, multiplier: 2.0, jitter_fraction: 0.1, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    /// A policy that never waits; handy for tests and mock mode.
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, base_delay_ms: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("max_attempts must be positive".into());
        }
        if !(self.multiplier >= 1.0 && self.multiplier.is_finite()) {
            return Err(format!("multiplier {} must be >= 1", self.multiplier));
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            return Err(format!("jitter_fraction {} must be in [0, 1]", self.jitter_fraction));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (1 = wait after the first failure).
    /// `unit` in [-1, 1] selects where inside the jitter band the delay falls.
    pub fn delay(&self, retry: u32, unit: f64) -> Duration {
        let exp = self.multiplier.powi(retry.saturating_sub(1) as i32);
        let nominal = (self.base_delay_ms as f64 * exp).min(self.max_delay_ms as f64);
        let jittered = nominal * (1.0 + self.jitter_fraction * unit.clamp(-1.0, 1.0));
        Duration::from_secs_f64(jittered.max(0.0) / 1000.0)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

/// Blocks only the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        if !d.is_zero() {
            std::thread::sleep(d);
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _: Duration) {}
}

#[derive(Debug)]
pub struct RetryOutcome<T> {
    pub result: Result<T, ProviderError>,
    pub attempts: u32,
    pub delays: Vec<Duration>,
}

/// Runs `op` until it succeeds, returns a non-retryable error, or the
/// policy's attempt budget runs out. `op` receives the 1-based attempt.
pub fn call_with_retry<T>(
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
    mut op: impl FnMut(u32) -> Result<T, ProviderError>,
) -> RetryOutcome<T> {
    let max = policy.max_attempts.max(1);
    let mut delays = Vec::new();
    let mut attempt = 1;
    loop {
        match op(attempt) {
            Ok(v) => return RetryOutcome { result: Ok(v), attempts: attempt, delays },
            Err(err) if !err.retryable || err.kind == ProviderErrorKind::SafetyRejected || attempt >= max => {
                return RetryOutcome { result: Err(err), attempts: attempt, delays };
            }
            Err(err) => {
                let unit = rand::random::<f64>() * 2.0 - 1.0;
                let d = policy.delay(attempt, unit);
                tracing::debug!(attempt, kind = ?err.kind, delay_ms = d.as_millis() as u64, "retrying provider call");
                sleeper.sleep(d);
                delays.push(d);
                attempt += 1;
            }
        }
    }
}
