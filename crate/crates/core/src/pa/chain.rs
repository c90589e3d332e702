//! Preemption-context signing.
//!
//! Register files saved across preemption are signed so an attacker with
//! arbitrary memory writes cannot splice values into a suspended context.
//! Three schemes are modeled:
//!
//! - per-register: each slot signed independently against the context base
//!   address and its position; vulnerable to selective substitution;
//! - key chaining seeded by the base address: each slot folds through the
//!   PRF using the previous signature as context, so order and values are
//!   bound together; still a universal signing oracle across saves at the
//!   same base;
//! - key chaining seeded by (base address, timestamp): the timebind scheme.
//!   The seed differs at every save, so a signature captured from one save
//!   verifies only against its own timestamp.

use serde::{Deserialize, Serialize};

use super::PaKey;

/// Saved execution context: general-purpose registers plus the exception
/// return state, the context's base address, and the two signature fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreemptionContext {
    pub regs: [u64; 31],
    pub elr: u64,
    pub spsr: u64,
    pub base_addr: u64,
    pub pac: u64,
    pub time_pac: u64,
}

impl PreemptionContext {
    pub fn new(regs: [u64; 31], elr: u64, spsr: u64, base_addr: u64) -> Self {
        PreemptionContext {
            regs,
            elr,
            spsr,
            base_addr,
            pac: 0,
            time_pac: 0,
        }
    }

    /// Fold order used by the chain: special registers first, then x30 down
    /// to x0, so the first general-purpose register is signed last.
    pub fn chain_values(&self) -> Vec<u64> {
        let mut v = vec![self.spsr, self.elr];
        v.extend(self.regs.iter().rev().copied());
        v
    }
}

/// Signing scheme selector for the preemption context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigningScheme {
    /// Each register signed independently (position-bound, not chained).
    PerRegister,
    /// Key chaining seeded by the context base address only.
    ChainBase,
    /// Key chaining seeded by (base address, timestamp).
    ChainTimebind,
}

/// Fold a value list through the PRF, starting from `seed`. Returns every
/// intermediate accumulator; the last entry is the final signature. The
/// intermediates are exactly what a preempted signing routine would spill.
pub fn chain_fold_states(values: &[u64], seed: u64, key: &PaKey) -> Vec<u64> {
    let mut states = Vec::with_capacity(values.len());
    let mut acc = seed;
    for &v in values {
        acc = key.compute(v, acc);
        states.push(acc);
    }
    states
}

fn chain_fold(values: &[u64], seed: u64, key: &PaKey) -> u64 {
    chain_fold_states(values, seed, key)
        .last()
        .copied()
        .unwrap_or(seed)
}

/// Sign with the timebind scheme. `time_pac` binds the base address to the
/// timestamp; the register chain is seeded with it.
pub fn chain_sign_context(pc: &mut PreemptionContext, timestamp: u64, key: &PaKey) -> (u64, u64) {
    let time_pac = key.compute(pc.base_addr, timestamp);
    let pac = chain_fold(&pc.chain_values(), time_pac, key);
    pc.pac = pac;
    pc.time_pac = time_pac;
    (pac, time_pac)
}

/// Verify a timebind-signed context against the exact
/// (registers, base address, timestamp) tuple.
pub fn chain_verify_context(pc: &PreemptionContext, timestamp: u64, key: &PaKey) -> bool {
    let time_pac = key.compute(pc.base_addr, timestamp);
    let pac = chain_fold(&pc.chain_values(), time_pac, key);
    pac == pc.pac && time_pac == pc.time_pac
}

/// Sign with the base-address-only chain (no timestamp).
pub fn chain_sign_base_only(pc: &mut PreemptionContext, key: &PaKey) -> u64 {
    let seed = key.compute(pc.base_addr, 0);
    let pac = chain_fold(&pc.chain_values(), seed, key);
    pc.pac = pac;
    pc.time_pac = 0;
    pac
}

pub fn chain_verify_base_only(pc: &PreemptionContext, key: &PaKey) -> bool {
    let seed = key.compute(pc.base_addr, 0);
    chain_fold(&pc.chain_values(), seed, key) == pc.pac
}

/// Per-register signatures: slot `i` signed against (base address, slot
/// index). Values are not chained together.
pub fn per_register_sign(pc: &PreemptionContext, key: &PaKey) -> Vec<u64> {
    pc.chain_values()
        .iter()
        .enumerate()
        .map(|(i, &v)| key.compute(v, key.compute(pc.base_addr, i as u64)))
        .collect()
}

pub fn per_register_verify(pc: &PreemptionContext, sigs: &[u64], key: &PaKey) -> bool {
    let values = pc.chain_values();
    values.len() == sigs.len()
        && values
            .iter()
            .enumerate()
            .zip(sigs)
            .all(|((i, &v), &sig)| key.compute(v, key.compute(pc.base_addr, i as u64)) == sig)
}
