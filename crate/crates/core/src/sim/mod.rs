//! Deterministic attack simulator driving the PA model.
//!
//! Scenarios pit an attacker with arbitrary reads and writes at arbitrary
//! moments against a configurable defense: context scheme for forward
//! edges, preemption-context signing scheme, the back-off gate, and the
//! kernel/user key split. Every simulation is a pure function of
//! (scenario, seed); transcripts replay byte-identically.

pub mod attacks;
pub mod machine;

pub use attacks::{
    aggregate_bruteforce, simulate_bruteforce, simulate_cross_el, simulate_preemption_oracle,
    simulate_replay, simulate_toctou, BruteForceAggregate, BruteForceResult, PreemptionResult,
    ReplayResult, ToctouResult,
};
pub use machine::{Machine, MachineEvent};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::pa::chain::SigningScheme;

/// Forward-edge context scheme under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextScheme {
    /// One shared zero context for everything.
    Zero,
    TypeSig,
    ObjType,
    ObjBind,
}

impl ContextScheme {
    pub const LADDER: [ContextScheme; 4] = [
        ContextScheme::Zero,
        ContextScheme::TypeSig,
        ContextScheme::ObjType,
        ContextScheme::ObjBind,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ContextScheme::Zero => "zero",
            ContextScheme::TypeSig => "typesig",
            ContextScheme::ObjType => "objtype",
            ContextScheme::ObjBind => "objbind",
        }
    }
}

/// What the attacker is allowed to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub read_all: bool,
    pub write_all: bool,
    pub preempt_at_will: bool,
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities {
            read_all: true,
            write_all: true,
            preempt_at_will: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub context_scheme: ContextScheme,
    pub preemption_signing: SigningScheme,
    pub backoff: bool,
    pub backoff_base: u64,
    /// Dedicated kernel/user keys with in-place inversion at the boundary.
    pub key_split: bool,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            context_scheme: ContextScheme::ObjBind,
            preemption_signing: SigningScheme::ChainTimebind,
            backoff: true,
            backoff_base: 1,
            key_split: true,
        }
    }
}

/// A simulation scenario: deterministic given its seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub seed: u64,
    #[serde(default = "default_pac_bits")]
    pub pac_bits: u8,
    #[serde(default = "default_va_bits")]
    pub va_bits: u8,
    #[serde(default)]
    pub capabilities: Capabilities,
    #[serde(default)]
    pub defense: DefenseConfig,
}

pub const SCENARIO_SCHEMA: &str = "pauthkit.scenario/1";

fn default_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}
fn default_pac_bits() -> u8 {
    15
}
fn default_va_bits() -> u8 {
    48
}

impl Scenario {
    pub fn new(seed: u64) -> Self {
        Scenario {
            schema: default_schema(),
            seed,
            pac_bits: 15,
            va_bits: 48,
            capabilities: Capabilities::default(),
            defense: DefenseConfig::default(),
        }
    }

    pub fn layout(&self) -> crate::pa::PointerLayout {
        crate::pa::PointerLayout::new(self.va_bits, self.pac_bits).expect("valid scenario layout")
    }

    pub fn from_json(text: &str) -> Result<Scenario, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Result of one simulation: replayable transcript plus headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub schema: &'static str,
    pub attack: String,
    pub seed: u64,
    pub success: bool,
    pub attempts: u64,
    pub sim_time_units: u128,
    /// log2 of the simulated time; meaningful when units saturate.
    pub sim_time_log2: f64,
    pub metrics: BTreeMap<String, u64>,
    pub transcript: Vec<String>,
}

pub const OUTCOME_SCHEMA: &str = "pauthkit.outcome/1";

impl Outcome {
    pub fn new(attack: &str, seed: u64) -> Self {
        Outcome {
            schema: OUTCOME_SCHEMA,
            attack: attack.to_string(),
            seed,
            success: false,
            attempts: 0,
            sim_time_units: 0,
            sim_time_log2: f64::NEG_INFINITY,
            metrics: BTreeMap::new(),
            transcript: Vec::new(),
        }
    }

    pub fn log(&mut self, line: impl Into<String>) {
        self.transcript.push(line.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }
}

#[cfg(test)]
mod tests;
