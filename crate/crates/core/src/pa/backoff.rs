//! Exponential back-off gate against PAC brute forcing.
//!
//! Authentication failures are counted per context; the n-th failure for a
//! context costs `base * 2^n` simulated time units. The counter table lives
//! on read-only memory and is only writable inside an update window during
//! which the simulated machine is halted, so a concurrent attacker cannot
//! forge the failure history. Counters never reset on success: flushing the
//! history through interleaved legitimate calls would defeat the gate.

use std::collections::BTreeMap;
use std::ops::Add;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackoffError {
    #[error("back-off table is sealed outside an update window")]
    SealedOutsideWindow,
}

/// A simulated delay. Exact units saturate at `u128::MAX`; the log2 view
/// stays meaningful for the astronomically large delays a full 15-bit
/// brute force accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Delay {
    pub units: u128,
    pub log2_units: f64,
}

impl Delay {
    pub fn zero() -> Self {
        Delay {
            units: 0,
            log2_units: f64::NEG_INFINITY,
        }
    }

    /// `base * 2^exp`.
    pub fn exponential(base: u64, exp: u32) -> Self {
        let units = if exp >= 127 {
            u128::MAX
        } else {
            (base as u128).saturating_mul(1u128 << exp)
        };
        Delay {
            units,
            log2_units: (base as f64).log2() + f64::from(exp),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.units == 0
    }
}

impl Add for Delay {
    type Output = Delay;
    fn add(self, rhs: Delay) -> Delay {
        let units = self.units.saturating_add(rhs.units);
        // log2(a + b) without leaving the log domain for huge values.
        let log2_units = if self.log2_units == f64::NEG_INFINITY {
            rhs.log2_units
        } else if rhs.log2_units == f64::NEG_INFINITY {
            self.log2_units
        } else {
            let (hi, lo) = if self.log2_units >= rhs.log2_units {
                (self.log2_units, rhs.log2_units)
            } else {
                (rhs.log2_units, self.log2_units)
            };
            hi + (1.0 + (lo - hi).exp2()).log2()
        };
        Delay { units, log2_units }
    }
}

/// Closed form for the total delay after `n` failures on one context:
/// `base * (2^n - 1)`.
pub fn cumulative_delay(base: u64, n: u32) -> Delay {
    let units = if n >= 127 {
        u128::MAX
    } else {
        (base as u128).saturating_mul((1u128 << n) - 1)
    };
    let log2_units = if n == 0 {
        f64::NEG_INFINITY
    } else if n > 60 {
        // log2(2^n - 1) is n to double precision here.
        (base as f64).log2() + f64::from(n)
    } else {
        (base as f64).log2() + (((1u128 << n) - 1) as f64).log2()
    };
    Delay { units, log2_units }
}

/// Per-context failure counters behind a seal.
#[derive(Debug, Clone)]
pub struct BackoffTable {
    counters: BTreeMap<u64, u32>,
    sealed: bool,
    base: u64,
    halt_windows: u64,
}

impl BackoffTable {
    pub fn new(base: u64) -> Self {
        BackoffTable {
            counters: BTreeMap::new(),
            sealed: true,
            base,
            halt_windows: 0,
        }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn failures(&self, ctx: u64) -> u32 {
        self.counters.get(&ctx).copied().unwrap_or(0)
    }

    /// How many halt-the-machine update windows have been taken.
    pub fn halt_windows(&self) -> u64 {
        self.halt_windows
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Direct counter mutation; rejected while the table is sealed. The
    /// normal path goes through [`BackoffTable::gate`].
    pub fn record_failure(&mut self, ctx: u64) -> Result<(), BackoffError> {
        if self.sealed {
            return Err(BackoffError::SealedOutsideWindow);
        }
        *self.counters.entry(ctx).or_insert(0) += 1;
        Ok(())
    }

    /// Unseal, run `f`, reseal. Models the halt-the-machine update window.
    pub fn update_window<R>(&mut self, f: impl FnOnce(&mut Self) -> R) -> R {
        self.sealed = false;
        self.halt_windows += 1;
        let r = f(self);
        self.sealed = true;
        r
    }

    /// Apply one authentication outcome for `ctx`. A failure with `n` prior
    /// failures costs `base * 2^n` and bumps the counter inside an update
    /// window; success costs nothing and leaves the counter unchanged.
    pub fn gate(&mut self, ctx: u64, auth_ok: bool) -> Delay {
        if auth_ok {
            return Delay::zero();
        }
        let n = self.failures(ctx);
        let delay = Delay::exponential(self.base, n);
        self.update_window(|t| {
            t.record_failure(ctx).expect("window is open");
        });
        delay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_schedule_is_geometric() {
        let mut t = BackoffTable::new(1);
        // n = 0, 1, 2 failures cost base, 2*base, 4*base.
        assert_eq!(t.gate(7, false).units, 1);
        assert_eq!(t.gate(7, false).units, 2);
        assert_eq!(t.gate(7, false).units, 4);
        assert_eq!(t.failures(7), 3);
        // Cumulative closed form: base * (2^n - 1).
        assert_eq!(cumulative_delay(1, 3).units, 7);
        assert_eq!(cumulative_delay(3, 20).units, 3 * ((1 << 20) - 1));
    }

    #[test]
    fn success_is_free_and_never_resets() {
        let mut t = BackoffTable::new(5);
        t.gate(1, false);
        t.gate(1, false);
        assert!(t.gate(1, true).is_zero());
        assert_eq!(t.failures(1), 2, "counters are monotone");
        assert_eq!(t.gate(1, false).units, 5 * 4);
    }

    #[test]
    fn changing_context_restarts_the_schedule() {
        let mut t = BackoffTable::new(1);
        for _ in 0..10 {
            t.gate(0xaa, false);
        }
        assert_eq!(t.gate(0xbb, false).units, 1);
    }

    #[test]
    fn sealed_table_rejects_mutation() {
        let mut t = BackoffTable::new(1);
        assert_eq!(t.record_failure(0), Err(BackoffError::SealedOutsideWindow));
        t.update_window(|t| t.record_failure(0)).unwrap();
        assert_eq!(t.failures(0), 1);
        assert!(t.is_sealed());
        assert_eq!(t.halt_windows(), 1);
    }

    #[test]
    fn log2_view_tracks_huge_delays() {
        let d = Delay::exponential(1, 200);
        assert_eq!(d.units, u128::MAX, "saturates");
        assert!((d.log2_units - 200.0).abs() < 1e-9);
        let sum = d + Delay::exponential(1, 200);
        assert!((sum.log2_units - 201.0).abs() < 1e-9);
    }
}
