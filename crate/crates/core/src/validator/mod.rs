//! Static validation of PA security principles over classified listings.
//!
//! Four principles are checked per function:
//!
//! 1. complete protection — every indirect branch consumes an
//!    authenticated (or trivially trusted) pointer;
//! 2. no TOCTOU spill — raw pointers produced by authentication or strip
//!    are never stored back to memory before use;
//! 3. no signing oracle — no gadget signs a value an attacker can steer
//!    (loaded, parameter-controlled, or live across a call);
//! 4. no unchecked PC write — returns and exception returns are covered by
//!    authentication on every path.
//!
//! Findings are definite when backed by a concrete witness ending at a
//! load or store; analysis limits (parameter origins, call boundaries,
//! path budgets, uncertain memory kinds) degrade to potential findings.

mod resolve;

pub use resolve::{
    addrcalc_call_between, find_spills, resolve, validate_bb, BbResult, Limits, OriginKind,
    Policy, Resolution, Verdict,
};

use std::fmt::Write as _;

use serde::Serialize;

use crate::asm::{ClassifiedFunction, InstrClass, PacContext, Reg};
use crate::cfg::Cfg;
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Principle {
    #[serde(rename = "P1")]
    CompleteProtection,
    #[serde(rename = "P2")]
    ToctouSpill,
    #[serde(rename = "P3")]
    SigningOracle,
    #[serde(rename = "P4")]
    UncheckedPc,
}

impl Principle {
    pub fn code(self) -> &'static str {
        match self {
            Principle::CompleteProtection => "P1",
            Principle::ToctouSpill => "P2",
            Principle::SigningOracle => "P3",
            Principle::UncheckedPc => "P4",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Principle::CompleteProtection => "complete-protection",
            Principle::ToctouSpill => "toctou-spill",
            Principle::SigningOracle => "signing-oracle",
            Principle::UncheckedPc => "unchecked-pc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Certainty {
    Definite,
    Potential,
}

/// A validator finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub principle: Principle,
    pub certainty: Certainty,
    pub function: String,
    /// Address of the checked site.
    pub address: u64,
    /// Witness: instruction addresses from the site toward the origin (or
    /// along the forward spill path for principle 2).
    pub trace: Vec<u64>,
    pub message: String,
}

/// Which principles run; disabling one never changes the others' findings.
#[derive(Debug, Clone, Copy)]
pub struct ValidatorConfig {
    pub check_complete_protection: bool,
    pub check_toctou_spill: bool,
    pub check_signing_oracle: bool,
    pub check_unchecked_pc: bool,
    pub limits: Limits,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            check_complete_protection: true,
            check_toctou_spill: true,
            check_signing_oracle: true,
            check_unchecked_pc: true,
            limits: Limits::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub definite: u32,
    pub potential: u32,
    pub by_principle: Vec<(String, u32)>,
}

/// Full validation report; serialization order is canonical.
#[derive(Debug, Clone, Serialize)]
pub struct ViolationReport {
    pub schema: &'static str,
    pub findings: Vec<Violation>,
    pub summary: Summary,
}

pub const REPORT_SCHEMA: &str = "pauthkit.violations/1";

impl ViolationReport {
    pub fn from_findings(mut findings: Vec<Violation>) -> Self {
        findings.sort_by(|a, b| {
            (&a.function, a.address, a.principle, a.certainty, &a.message).cmp(&(
                &b.function,
                b.address,
                b.principle,
                b.certainty,
                &b.message,
            ))
        });
        let mut summary = Summary::default();
        let mut counts: std::collections::BTreeMap<&'static str, u32> =
            std::collections::BTreeMap::new();
        for f in &findings {
            match f.certainty {
                Certainty::Definite => summary.definite += 1,
                Certainty::Potential => summary.potential += 1,
            }
            *counts.entry(f.principle.code()).or_insert(0) += 1;
        }
        summary.by_principle = counts.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        ViolationReport {
            schema: REPORT_SCHEMA,
            findings,
            summary,
        }
    }

    pub fn has_definite(&self) -> bool {
        self.summary.definite > 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable table, one line per finding.
    pub fn human_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4} {:<10} {:<24} {:<10} message",
            "prin", "certainty", "function", "address"
        );
        for f in &self.findings {
            let _ = writeln!(
                out,
                "{:<4} {:<10} {:<24} {:<10} {}",
                f.principle.code(),
                match f.certainty {
                    Certainty::Definite => "definite",
                    Certainty::Potential => "potential",
                },
                f.function,
                format!("0x{:x}", f.address),
                f.message
            );
        }
        let _ = writeln!(
            out,
            "-- {} definite, {} potential",
            self.summary.definite, self.summary.potential
        );
        out
    }
}

/// Validate one function against the enabled principles.
pub fn validate_function(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    config: &ValidatorConfig,
) -> Vec<Violation> {
    let mut findings = Vec::new();
    let name = &fun.listing.name;
    let limits = &config.limits;

    for (idx, class) in fun.classes.iter().enumerate() {
        let addr = fun.address(idx);
        match class {
            // Principle 1: indirect transfers must consume a validated
            // pointer. Combined forms (blraa, braa) authenticate at the
            // site itself.
            InstrClass::IndirectBranch { target, auth } | InstrClass::IndirectCall { target, auth } => {
                if !config.check_complete_protection || auth.is_some() {
                    continue;
                }
                let r = resolve(fun, cfg, idx, *target, Policy::Value, limits);
                push_origin_finding(
                    &mut findings,
                    Principle::CompleteProtection,
                    name,
                    addr,
                    *target,
                    &r,
                );
            }

            // Principle 3: signing sites must not be usable as oracles.
            InstrClass::PacSign { target, context, .. } => {
                if !config.check_signing_oracle {
                    continue;
                }
                let special = addrcalc_call_between(fun, cfg, idx, *target, limits);
                if let Some((calc_addr, call_addr)) = special {
                    findings.push(Violation {
                        principle: Principle::SigningOracle,
                        certainty: Certainty::Potential,
                        function: name.clone(),
                        address: addr,
                        trace: vec![calc_addr, call_addr, addr],
                        message: format!(
                            "call at 0x{call_addr:x} between address calculation at \
                             0x{calc_addr:x} and sign of {target}: register may be spilled \
                             around the call"
                        ),
                    });
                }
                let policy = if *context == PacContext::Sp
                    && (*target == Reg::X(30) || *target == Reg::Elr)
                {
                    // Prologue-form signs cover hardware-set state: the
                    // incoming return address (paciasp) or the exception
                    // return state (sigctx marker). Untouched-since-entry
                    // values there are not attacker-chosen.
                    Policy::PrologueSign
                } else {
                    Policy::Value
                };
                let r = resolve(fun, cfg, idx, *target, policy, limits);
                // The special case subsumes the bare call-boundary result
                // for the same site.
                if special.is_some() && r.verdict == Verdict::Maybe && r.kind == OriginKind::CallBoundary
                {
                    continue;
                }
                push_origin_finding(
                    &mut findings,
                    Principle::SigningOracle,
                    name,
                    addr,
                    *target,
                    &r,
                );
            }

            // Principle 2: raw pointers after authentication or strip must
            // not reach memory.
            InstrClass::PacAuth { target, .. } | InstrClass::PacStrip { target } => {
                if !config.check_toctou_spill {
                    continue;
                }
                for store_addr in find_spills(fun, cfg, idx, *target) {
                    findings.push(Violation {
                        principle: Principle::ToctouSpill,
                        certainty: Certainty::Definite,
                        function: name.clone(),
                        address: addr,
                        trace: vec![addr, store_addr],
                        message: format!(
                            "raw {target} stored to memory at 0x{store_addr:x} after \
                             authentication/strip at 0x{addr:x}"
                        ),
                    });
                }
            }

            // Principle 4: returns must be covered by authentication.
            // Indirect branches/calls are principle 1's domain.
            InstrClass::Return {
                reg,
                auth,
                exception_return,
            } => {
                if !config.check_unchecked_pc || auth.is_some() {
                    continue;
                }
                let policy = if *exception_return {
                    Policy::ExceptionReturn
                } else {
                    Policy::ReturnAddress
                };
                let r = resolve(fun, cfg, idx, *reg, policy, limits);
                push_origin_finding(&mut findings, Principle::UncheckedPc, name, addr, *reg, &r);
            }
            _ => {}
        }
    }
    findings
}

fn push_origin_finding(
    findings: &mut Vec<Violation>,
    principle: Principle,
    function: &str,
    addr: u64,
    sym: Reg,
    r: &Resolution,
) {
    let certainty = match r.verdict {
        Verdict::Safe => return,
        Verdict::Bad => Certainty::Definite,
        Verdict::Maybe => Certainty::Potential,
    };
    let mut message = format!("{}: {}", sym, r.kind.describe());
    for note in &r.notes {
        message.push_str("; ");
        message.push_str(note);
    }
    findings.push(Violation {
        principle,
        certainty,
        function: function.to_string(),
        address: addr,
        trace: r.trace.clone(),
        message,
    });
}

/// Validate a whole image. Functions are checked independently (and in
/// parallel when enabled); the report ordering is canonical regardless of
/// completion order.
pub fn validate_image(
    functions: &[(ClassifiedFunction, Cfg)],
    config: &ValidatorConfig,
) -> ViolationReport {
    let refs: Vec<&(ClassifiedFunction, Cfg)> = functions.iter().collect();
    let per_fn = exec::map_collect(refs, |(fun, cfg)| validate_function(fun, cfg, config));
    ViolationReport::from_findings(per_fn.into_iter().flatten().collect())
}
