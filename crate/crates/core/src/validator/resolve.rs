//! Backward origin resolution for PA-relevant registers.
//!
//! Two entry points share the same traversal shape:
//!
//! - [`validate_bb`] is the bare case ladder over a basic block with
//!   predecessor recursion: arithmetic rewrites the tracked register to its
//!   source, loads fail, address calculations and authentications succeed,
//!   strips and calls fail, an unconditional branch re-enters resolution at
//!   its target's end, and running out of predecessors fails. Conditional
//!   branches have no dedicated case; paths through them are covered by the
//!   generic predecessor recursion.
//! - [`resolve`] runs the same walk but keeps a witness trace, distinguishes
//!   definite origins from analysis limits, and applies the read-only-load
//!   refinement (a load whose base provably derives from an address
//!   calculation reads immutable memory and is not an attacker vector).
//!
//! Both are cycle-guarded on (block, tracked register) pairs and bounded by
//! a per-chain block budget; exhaustion surfaces as indeterminate, never as
//! a silent pass.

use crate::asm::{ClassifiedFunction, InstrClass, Reg};
use crate::cfg::{BlockId, Cfg, DEFAULT_CHAIN_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbResult {
    Safe,
    Violation,
    Indeterminate,
}

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    /// Blocks a single chain may visit.
    pub chain_budget: usize,
    /// Total instructions examined across all paths of one query.
    pub step_budget: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            chain_budget: DEFAULT_CHAIN_BUDGET,
            step_budget: 100_000,
        }
    }
}

/// The bare backward validation over a basic block, starting at instruction
/// index `si` (inclusive; pass `None` to begin directly with the
/// predecessors). Returns indeterminate on cycle or budget exhaustion.
pub fn validate_bb(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    bb: BlockId,
    si: Option<usize>,
    sym: Reg,
    limits: &Limits,
) -> BbResult {
    let mut steps = limits.step_budget;
    let mut seen = Vec::new();
    bare_walk(fun, cfg, bb, si, sym, limits, &mut seen, &mut steps)
}

fn bare_walk(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    bb: BlockId,
    si: Option<usize>,
    mut sym: Reg,
    limits: &Limits,
    seen: &mut Vec<(BlockId, Reg)>,
    steps: &mut usize,
) -> BbResult {
    if seen.contains(&(bb, sym)) || seen.len() >= limits.chain_budget {
        return BbResult::Indeterminate;
    }
    seen.push((bb, sym));
    let out = (|| {
        let block = &cfg.blocks[bb];
        if let Some(start) = si {
            for i in (block.first..=start).rev() {
                if *steps == 0 {
                    return BbResult::Indeterminate;
                }
                *steps -= 1;
                match &fun.classes[i] {
                    InstrClass::Arith { dest, srcs } if *dest == sym => match srcs.first() {
                        Some(s) => sym = *s,
                        // Constant materialization: as trustworthy an
                        // origin as an address calculation.
                        None => return BbResult::Safe,
                    },
                    InstrClass::Load { dests, .. } if dests.contains(&sym) => {
                        return BbResult::Violation
                    }
                    InstrClass::AddrCalc { dest, .. } if *dest == sym => return BbResult::Safe,
                    InstrClass::PacAuth { target, .. } if *target == sym => return BbResult::Safe,
                    InstrClass::PacStrip { target } if *target == sym => {
                        return BbResult::Violation
                    }
                    InstrClass::DirectCall { .. } | InstrClass::IndirectCall { .. } => {
                        return BbResult::Violation
                    }
                    InstrClass::DirectBranch { target } => {
                        // Resolution continues from the branch target's end.
                        let tb = direct_target_block(fun, cfg, target);
                        return match tb {
                            Some(t) => {
                                let end = cfg.blocks[t].last;
                                bare_walk(fun, cfg, t, Some(end), sym, limits, seen, steps)
                            }
                            None => BbResult::Indeterminate,
                        };
                    }
                    _ => {}
                }
            }
        }
        let preds = cfg.blocks[bb].preds.clone();
        if preds.is_empty() {
            return BbResult::Violation;
        }
        let mut indeterminate = false;
        for p in preds {
            let end = cfg.blocks[p].last;
            match bare_walk(fun, cfg, p, Some(end), sym, limits, seen, steps) {
                BbResult::Violation => return BbResult::Violation,
                BbResult::Indeterminate => indeterminate = true,
                BbResult::Safe => {}
            }
        }
        if indeterminate {
            BbResult::Indeterminate
        } else {
            BbResult::Safe
        }
    })();
    seen.pop();
    out
}

fn direct_target_block(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    target: &Option<crate::asm::BranchTarget>,
) -> Option<BlockId> {
    match target {
        Some(crate::asm::BranchTarget::Addr(a)) => fun.index_of(*a).map(|i| cfg.block_of(i)),
        _ => None,
    }
}

/// How a resolved origin should be judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Safe,
    /// Concrete bad origin with a witness.
    Bad,
    /// Analysis limit: parameter origin, interprocedural boundary, path
    /// budget, or uncertain memory kind.
    Maybe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginKind {
    AddrCalc,
    Authenticated,
    ConstantImm,
    /// Load whose base provably derives from an address calculation:
    /// read-only memory, trusted.
    ReadOnlyLoad,
    /// A call instruction wrote the link register; hardware-set value.
    HardwareLink,
    LoadUnknownMem,
    Strip,
    /// Literal-pool load: almost certainly read-only, still flagged.
    LiteralPoolLoad,
    Entry,
    CallBoundary,
    ExternalTarget,
    Budget,
}

impl OriginKind {
    pub fn describe(self) -> &'static str {
        match self {
            OriginKind::AddrCalc => "address-calculation origin",
            OriginKind::Authenticated => "authenticated origin",
            OriginKind::ConstantImm => "constant materialization",
            OriginKind::ReadOnlyLoad => "load from provably read-only memory",
            OriginKind::HardwareLink => "hardware-set link register",
            OriginKind::LoadUnknownMem => "loaded from writable or unknown memory",
            OriginKind::Strip => "PAC stripped without authentication",
            OriginKind::LiteralPoolLoad => "literal-pool load (memory kind unverified)",
            OriginKind::Entry => "originates from function entry (parameter or caller state)",
            OriginKind::CallBoundary => "crosses a call boundary (no interprocedural analysis)",
            OriginKind::ExternalTarget => "branch target outside the function",
            OriginKind::Budget => "path budget exhausted",
        }
    }
}

/// What the tracked register means at the query site; selects how terminal
/// origins are judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// A pointer about to be signed or branched through.
    Value,
    /// Like `Value`, but an untouched-since-entry register is fine; used
    /// for prologue-form signs of the incoming link register.
    PrologueSign,
    /// Return address consumed by `ret`.
    ReturnAddress,
    /// Exception return state consumed by `eret`; only an explicit
    /// whole-context authentication covers it.
    ExceptionReturn,
    /// Internal: prove a load base is derived from an address calculation.
    RoProof,
}

#[derive(Debug, Clone)]
pub struct Resolution {
    pub verdict: Verdict,
    pub kind: OriginKind,
    /// Witness: instruction addresses from the site toward the origin.
    pub trace: Vec<u64>,
    /// Whether the tracked register was rewritten along the reported path.
    pub rewritten: bool,
    /// Secondary sources conservatively ignored by single-source rewriting.
    pub notes: Vec<String>,
}

impl Resolution {
    fn terminal(verdict: Verdict, kind: OriginKind, rewritten: bool) -> Self {
        Resolution {
            verdict,
            kind,
            trace: Vec::new(),
            rewritten,
            notes: Vec::new(),
        }
    }
}

fn term(
    verdict: Verdict,
    kind: OriginKind,
    mut trace: Vec<u64>,
    addr: u64,
    rewritten: bool,
    notes: Vec<String>,
) -> Resolution {
    trace.push(addr);
    Resolution {
        verdict,
        kind,
        trace,
        rewritten,
        notes,
    }
}

/// Resolve the origin of `sym` backward from (but excluding) instruction
/// `site`.
pub fn resolve(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    site: usize,
    sym: Reg,
    policy: Policy,
    limits: &Limits,
) -> Resolution {
    let bb = cfg.block_of(site);
    let si = if site > cfg.blocks[bb].first {
        Some(site - 1)
    } else {
        None
    };
    let mut steps = limits.step_budget;
    let mut seen = Vec::new();
    let mut r = rich_walk(
        fun, cfg, bb, si, sym, false, policy, limits, &mut seen, &mut steps,
    );
    r.trace.insert(0, fun.address(site));
    r
}

#[allow(clippy::too_many_arguments)]
fn rich_walk(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    bb: BlockId,
    si: Option<usize>,
    mut sym: Reg,
    mut rewritten: bool,
    policy: Policy,
    limits: &Limits,
    seen: &mut Vec<(BlockId, Reg)>,
    steps: &mut usize,
) -> Resolution {
    if seen.contains(&(bb, sym)) || seen.len() >= limits.chain_budget {
        return Resolution::terminal(Verdict::Maybe, OriginKind::Budget, rewritten);
    }
    seen.push((bb, sym));
    let mut out = (|| {
        let block = &cfg.blocks[bb];
        let mut trace = Vec::new();
        let mut notes = Vec::new();
        if let Some(start) = si {
            for i in (block.first..=start).rev() {
                if *steps == 0 {
                    return Resolution {
                        verdict: Verdict::Maybe,
                        kind: OriginKind::Budget,
                        trace,
                        rewritten,
                        notes,
                    };
                }
                *steps -= 1;
                let addr = fun.address(i);
                match &fun.classes[i] {
                    InstrClass::Arith { dest, srcs } if *dest == sym => match srcs.first() {
                        Some(s) => {
                            if srcs.len() > 1 {
                                notes.push(format!(
                                    "0x{addr:x}: multi-source arithmetic; tracking {s} only"
                                ));
                            }
                            trace.push(addr);
                            sym = *s;
                            rewritten = true;
                        }
                        None => {
                            return term(
                                Verdict::Safe,
                                OriginKind::ConstantImm,
                                trace,
                                addr,
                                rewritten,
                                notes,
                            )
                        }
                    },
                    InstrClass::Load {
                        dests,
                        base,
                        literal,
                        ..
                    } if dests.contains(&sym) => {
                        if policy == Policy::RoProof {
                            return term(
                                Verdict::Bad,
                                OriginKind::LoadUnknownMem,
                                trace,
                                addr,
                                rewritten,
                                notes,
                            );
                        }
                        if literal.is_some() {
                            return term(
                                Verdict::Maybe,
                                OriginKind::LiteralPoolLoad,
                                trace,
                                addr,
                                rewritten,
                                notes,
                            );
                        }
                        let proof = match base {
                            Some(b) if i > 0 => prove_ro_base(fun, cfg, i, *b, limits, steps),
                            _ => Verdict::Bad,
                        };
                        let (verdict, kind) = match proof {
                            Verdict::Safe => (Verdict::Safe, OriginKind::ReadOnlyLoad),
                            Verdict::Maybe => (Verdict::Maybe, OriginKind::Budget),
                            Verdict::Bad => (Verdict::Bad, OriginKind::LoadUnknownMem),
                        };
                        return term(verdict, kind, trace, addr, rewritten, notes);
                    }
                    InstrClass::AddrCalc { dest, .. } if *dest == sym => {
                        return term(
                            Verdict::Safe,
                            OriginKind::AddrCalc,
                            trace,
                            addr,
                            rewritten,
                            notes,
                        )
                    }
                    InstrClass::PacAuth { target, .. } if *target == sym => {
                        let verdict = if policy == Policy::RoProof {
                            Verdict::Bad
                        } else {
                            Verdict::Safe
                        };
                        return term(
                            verdict,
                            OriginKind::Authenticated,
                            trace,
                            addr,
                            rewritten,
                            notes,
                        );
                    }
                    InstrClass::PacStrip { target } if *target == sym => {
                        return term(Verdict::Bad, OriginKind::Strip, trace, addr, rewritten, notes)
                    }
                    InstrClass::DirectCall { .. } | InstrClass::IndirectCall { .. } => {
                        if policy == Policy::ReturnAddress && sym == Reg::X(30) {
                            return term(
                                Verdict::Safe,
                                OriginKind::HardwareLink,
                                trace,
                                addr,
                                rewritten,
                                notes,
                            );
                        }
                        let verdict = if policy == Policy::RoProof {
                            Verdict::Bad
                        } else {
                            Verdict::Maybe
                        };
                        return term(
                            verdict,
                            OriginKind::CallBoundary,
                            trace,
                            addr,
                            rewritten,
                            notes,
                        );
                    }
                    InstrClass::DirectBranch { target } => {
                        trace.push(addr);
                        return match direct_target_block(fun, cfg, target) {
                            Some(t) => {
                                let end = cfg.blocks[t].last;
                                let mut r = rich_walk(
                                    fun,
                                    cfg,
                                    t,
                                    Some(end),
                                    sym,
                                    rewritten,
                                    policy,
                                    limits,
                                    seen,
                                    steps,
                                );
                                let mut full = trace;
                                full.extend(r.trace);
                                r.trace = full;
                                r.notes.splice(0..0, notes);
                                r
                            }
                            None => Resolution {
                                verdict: Verdict::Maybe,
                                kind: OriginKind::ExternalTarget,
                                trace,
                                rewritten,
                                notes,
                            },
                        };
                    }
                    _ => {}
                }
            }
        }
        let preds = cfg.blocks[bb].preds.clone();
        if preds.is_empty() {
            let entry_addr = fun.address(cfg.blocks[bb].first);
            trace.push(entry_addr);
            let (verdict, kind) = match policy {
                Policy::Value => (Verdict::Maybe, OriginKind::Entry),
                Policy::PrologueSign | Policy::ReturnAddress => {
                    if rewritten {
                        (Verdict::Maybe, OriginKind::Entry)
                    } else {
                        (Verdict::Safe, OriginKind::Entry)
                    }
                }
                Policy::ExceptionReturn => (Verdict::Bad, OriginKind::Entry),
                Policy::RoProof => (Verdict::Bad, OriginKind::Entry),
            };
            return Resolution {
                verdict,
                kind,
                trace,
                rewritten,
                notes,
            };
        }
        let mut first_maybe: Option<Resolution> = None;
        let mut last_safe: Option<Resolution> = None;
        for p in preds {
            let end = cfg.blocks[p].last;
            let mut r = rich_walk(
                fun,
                cfg,
                p,
                Some(end),
                sym,
                rewritten,
                policy,
                limits,
                seen,
                steps,
            );
            let mut full = trace.clone();
            full.extend(r.trace);
            r.trace = full;
            r.notes.splice(0..0, notes.clone());
            match r.verdict {
                Verdict::Bad => return r,
                Verdict::Maybe => {
                    if first_maybe.is_none() {
                        first_maybe = Some(r);
                    }
                }
                Verdict::Safe => last_safe = Some(r),
            }
        }
        if let Some(m) = first_maybe {
            m
        } else if let Some(s) = last_safe {
            s
        } else {
            Resolution {
                verdict: Verdict::Maybe,
                kind: OriginKind::Budget,
                trace,
                rewritten,
                notes,
            }
        }
    })();
    seen.pop();
    if out.verdict == Verdict::Safe && out.kind == OriginKind::Entry && out.rewritten {
        // Should not happen by construction; keep the invariant visible.
        out.verdict = Verdict::Maybe;
    }
    out
}

/// Prove that `base` at the load site derives from an address calculation
/// through register-to-register arithmetic only. Intra-procedural.
fn prove_ro_base(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    load_idx: usize,
    base: Reg,
    limits: &Limits,
    steps: &mut usize,
) -> Verdict {
    if base == Reg::Sp {
        // Stack memory is attacker-writable under the threat model.
        return Verdict::Bad;
    }
    let bb = cfg.block_of(load_idx);
    let si = if load_idx > cfg.blocks[bb].first {
        Some(load_idx - 1)
    } else {
        None
    };
    let mut seen = Vec::new();
    let r = rich_walk(
        fun,
        cfg,
        bb,
        si,
        base,
        false,
        Policy::RoProof,
        limits,
        &mut seen,
        steps,
    );
    match (r.verdict, r.kind) {
        (Verdict::Safe, _) => Verdict::Safe,
        (Verdict::Maybe, _) => Verdict::Maybe,
        _ => Verdict::Bad,
    }
}

/// Forward no-spill check from an authentication or strip site: any store
/// of the raw register before it is redefined or consumed is a violation.
/// Returns the addresses of offending stores, deterministically ordered.
pub fn find_spills(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    auth_site: usize,
    sym: Reg,
) -> Vec<u64> {
    let mut offending = Vec::new();
    let mut queue: Vec<(BlockId, usize)> = Vec::new();
    let mut visited: Vec<(BlockId, usize)> = Vec::new();
    let start_bb = cfg.block_of(auth_site);
    queue.push((start_bb, auth_site + 1));
    while let Some((bb, start)) = queue.pop() {
        if visited.contains(&(bb, start)) {
            continue;
        }
        visited.push((bb, start));
        let block = &cfg.blocks[bb];
        let mut stopped = false;
        if start <= block.last {
            for i in start..=block.last {
                let class = &fun.classes[i];
                match class {
                    InstrClass::Store { srcs, .. } if srcs.contains(&sym) => {
                        offending.push(fun.address(i));
                    }
                    InstrClass::IndirectBranch { target, .. }
                    | InstrClass::IndirectCall { target, .. }
                        if *target == sym =>
                    {
                        // Consumed in register: the legitimate use.
                        stopped = true;
                        break;
                    }
                    InstrClass::Return { reg, .. } if *reg == sym => {
                        stopped = true;
                        break;
                    }
                    _ => {}
                }
                if class.defs().contains(&sym) {
                    stopped = true;
                    break;
                }
                // Calls clobber caller-saved registers; the raw value does
                // not survive in one. Callee-saved registers walk on.
                if class.is_call() && caller_saved(sym) {
                    stopped = true;
                    break;
                }
            }
        }
        if !stopped {
            for s in &block.succs {
                queue.push((*s, cfg.blocks[*s].first));
            }
        }
    }
    offending.sort_unstable();
    offending.dedup();
    offending
}

fn caller_saved(r: Reg) -> bool {
    match r {
        Reg::X(n) => n <= 18 || n == 30,
        _ => false,
    }
}

/// The call-between-address-calculation-and-sign special case: the signed
/// register was materialized before one or more calls, any of which may
/// have spilled it to memory. Returns (addrcalc address, first call
/// address) when the pattern holds on some path.
pub fn addrcalc_call_between(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    sign_site: usize,
    sym: Reg,
    limits: &Limits,
) -> Option<(u64, u64)> {
    let bb = cfg.block_of(sign_site);
    let si = if sign_site > cfg.blocks[bb].first {
        Some(sign_site - 1)
    } else {
        None
    };
    let mut steps = limits.step_budget;
    let mut seen = Vec::new();
    special_walk(fun, cfg, bb, si, sym, &[], limits, &mut seen, &mut steps)
}

#[allow(clippy::too_many_arguments)]
fn special_walk(
    fun: &ClassifiedFunction,
    cfg: &Cfg,
    bb: BlockId,
    si: Option<usize>,
    mut sym: Reg,
    calls_after: &[u64],
    limits: &Limits,
    seen: &mut Vec<(BlockId, Reg)>,
    steps: &mut usize,
) -> Option<(u64, u64)> {
    if seen.contains(&(bb, sym)) || seen.len() >= limits.chain_budget {
        return None;
    }
    seen.push((bb, sym));
    let mut calls: Vec<u64> = calls_after.to_vec();
    let out = (|| {
        let block = &cfg.blocks[bb];
        if let Some(start) = si {
            for i in (block.first..=start).rev() {
                if *steps == 0 {
                    return None;
                }
                *steps -= 1;
                match &fun.classes[i] {
                    InstrClass::Arith { dest, srcs } if *dest == sym => match srcs.first() {
                        Some(s) => sym = *s,
                        None => return None,
                    },
                    InstrClass::AddrCalc { dest, .. } if *dest == sym => {
                        // Found the materialization; report if a call sits
                        // between it and the sign.
                        return calls.last().map(|c| (fun.address(i), *c));
                    }
                    InstrClass::Load { dests, .. } if dests.contains(&sym) => return None,
                    InstrClass::PacAuth { target, .. } if *target == sym => return None,
                    InstrClass::PacStrip { target } if *target == sym => return None,
                    InstrClass::DirectCall { .. } | InstrClass::IndirectCall { .. } => {
                        calls.push(fun.address(i));
                    }
                    InstrClass::DirectBranch { target } => {
                        let t = direct_target_block(fun, cfg, target)?;
                        let end = cfg.blocks[t].last;
                        return special_walk(fun, cfg, t, Some(end), sym, &calls, limits, seen, steps);
                    }
                    _ => {}
                }
            }
        }
        for p in cfg.blocks[bb].preds.clone() {
            let end = cfg.blocks[p].last;
            if let Some(hit) = special_walk(fun, cfg, p, Some(end), sym, &calls, limits, seen, steps)
            {
                return Some(hit);
            }
        }
        None
    })();
    seen.pop();
    out
}
