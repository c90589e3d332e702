//! Instruction classification.
//!
//! The mnemonic table ships as a data file (`classes.txt`) so new PA
//! variants can be added without code changes; combined forms such as
//! `blraa` classify as indirect calls with an attached authentication
//! effect. Classification is total: unknown mnemonics sink to `Other`.

use std::collections::BTreeMap;

use super::{AddrMode, AsmError, FunctionListing, Instruction, Operand, Reg};

/// PA key selector carried by sign/auth instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacKeySel {
    IA,
    IB,
    DA,
    DB,
    GA,
}

/// Where a PA instruction takes its context from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacContext {
    Reg(Reg),
    Zero,
    Sp,
}

/// Instruction class, the symbol sets the validator matches on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstrClass {
    Arith {
        dest: Reg,
        srcs: Vec<Reg>,
    },
    Load {
        dests: Vec<Reg>,
        base: Option<Reg>,
        /// Literal-pool form (`ldr x0, label`); no base register.
        literal: Option<String>,
        /// Pre/post-index forms also write the base register back.
        writeback: bool,
    },
    Store {
        srcs: Vec<Reg>,
        base: Option<Reg>,
        writeback: bool,
    },
    AddrCalc {
        dest: Reg,
        target: Option<BranchTarget>,
    },
    PacSign {
        key: PacKeySel,
        target: Reg,
        context: PacContext,
    },
    PacAuth {
        key: PacKeySel,
        target: Reg,
        context: PacContext,
    },
    PacStrip {
        target: Reg,
    },
    IndirectBranch {
        target: Reg,
        auth: Option<(PacKeySel, PacContext)>,
    },
    IndirectCall {
        target: Reg,
        auth: Option<(PacKeySel, PacContext)>,
    },
    DirectCall {
        target: Option<BranchTarget>,
    },
    DirectBranch {
        target: Option<BranchTarget>,
    },
    CondBranch {
        regs: Vec<Reg>,
        target: Option<BranchTarget>,
    },
    Return {
        reg: Reg,
        auth: Option<(PacKeySel, PacContext)>,
        exception_return: bool,
    },
    Other,
}

/// Resolved or symbolic control-transfer target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BranchTarget {
    Addr(u64),
    Symbol(String),
}

impl InstrClass {
    /// Registers written by this instruction.
    pub fn defs(&self) -> Vec<Reg> {
        match self {
            InstrClass::Arith { dest, .. } => vec![*dest],
            InstrClass::Load {
                dests,
                base,
                writeback,
                ..
            } => {
                let mut v = dests.clone();
                if *writeback {
                    v.extend(base.iter().copied());
                }
                v
            }
            InstrClass::Store {
                base, writeback, ..
            } => {
                if *writeback {
                    base.iter().copied().collect()
                } else {
                    Vec::new()
                }
            }
            InstrClass::AddrCalc { dest, .. } => vec![*dest],
            InstrClass::PacSign { target, .. }
            | InstrClass::PacAuth { target, .. }
            | InstrClass::PacStrip { target } => vec![*target],
            // A call writes the link register and clobbers caller-saved regs;
            // only the architectural link-register write is listed here.
            InstrClass::DirectCall { .. } | InstrClass::IndirectCall { .. } => vec![Reg::X(30)],
            _ => Vec::new(),
        }
    }

    pub fn is_call(&self) -> bool {
        matches!(
            self,
            InstrClass::DirectCall { .. } | InstrClass::IndirectCall { .. }
        )
    }

    /// True when this class ends a basic block.
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            InstrClass::DirectBranch { .. }
                | InstrClass::CondBranch { .. }
                | InstrClass::IndirectBranch { .. }
                | InstrClass::Return { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Arith,
    Load,
    Store,
    AddrCalc,
    Sign,
    Auth,
    Strip,
    ICall,
    IBr,
    Call,
    Branch,
    Cond,
    Ret,
    Eret,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CtxSpec {
    Reg,
    Zero,
    Sp,
    /// Implicit x17-target/x16-context pair (`pacia1716`).
    I1716,
    /// Whole-preemption-context marker pseudo-ops (`sigctx`/`autctx`).
    Gctx,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    kind: Kind,
    key: Option<PacKeySel>,
    ctx: Option<CtxSpec>,
    combined_auth: bool,
}

/// The mnemonic table. `ClassTable::default()` loads the shipped table.
#[derive(Debug, Clone)]
pub struct ClassTable {
    entries: BTreeMap<String, Entry>,
}

const SHIPPED_TABLE: &str = include_str!("classes.txt");

impl Default for ClassTable {
    fn default() -> Self {
        ClassTable::from_str(SHIPPED_TABLE).expect("shipped class table is well-formed")
    }
}

impl ClassTable {
    pub fn from_str(text: &str) -> Result<Self, AsmError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let mnemonic = tokens.next().unwrap().to_ascii_lowercase();
            let kind_tok = tokens.next().ok_or_else(|| AsmError::ClassTable {
                line: lineno + 1,
                msg: format!("missing kind for `{mnemonic}`"),
            })?;
            let kind = match kind_tok {
                "arith" => Kind::Arith,
                "load" => Kind::Load,
                "store" => Kind::Store,
                "addrcalc" => Kind::AddrCalc,
                "sign" => Kind::Sign,
                "auth" => Kind::Auth,
                "strip" => Kind::Strip,
                "icall" => Kind::ICall,
                "ibr" => Kind::IBr,
                "call" => Kind::Call,
                "branch" => Kind::Branch,
                "cond" => Kind::Cond,
                "ret" => Kind::Ret,
                "eret" => Kind::Eret,
                "other" => Kind::Other,
                other => {
                    return Err(AsmError::ClassTable {
                        line: lineno + 1,
                        msg: format!("unknown kind `{other}`"),
                    })
                }
            };
            let mut entry = Entry {
                kind,
                key: None,
                ctx: None,
                combined_auth: false,
            };
            for tok in tokens {
                if let Some(k) = tok.strip_prefix("key=") {
                    entry.key = Some(match k {
                        "ia" => PacKeySel::IA,
                        "ib" => PacKeySel::IB,
                        "da" => PacKeySel::DA,
                        "db" => PacKeySel::DB,
                        "ga" => PacKeySel::GA,
                        other => {
                            return Err(AsmError::ClassTable {
                                line: lineno + 1,
                                msg: format!("unknown key `{other}`"),
                            })
                        }
                    });
                } else if let Some(c) = tok.strip_prefix("ctx=") {
                    entry.ctx = Some(match c {
                        "reg" => CtxSpec::Reg,
                        "zero" => CtxSpec::Zero,
                        "sp" => CtxSpec::Sp,
                        "i1716" => CtxSpec::I1716,
                        "gctx" => CtxSpec::Gctx,
                        other => {
                            return Err(AsmError::ClassTable {
                                line: lineno + 1,
                                msg: format!("unknown ctx `{other}`"),
                            })
                        }
                    });
                } else if tok == "auth" {
                    entry.combined_auth = true;
                } else {
                    return Err(AsmError::ClassTable {
                        line: lineno + 1,
                        msg: format!("unknown attribute `{tok}`"),
                    });
                }
            }
            entries.insert(mnemonic, entry);
        }
        Ok(ClassTable { entries })
    }
}

fn regs_of(operands: &[Operand]) -> Vec<Reg> {
    operands
        .iter()
        .filter_map(|o| match o {
            Operand::Reg(r) => Some(*r),
            _ => None,
        })
        .collect()
}

fn mem_of(operands: &[Operand]) -> Option<(Reg, bool)> {
    operands.iter().find_map(|o| match o {
        Operand::Mem { base, mode, .. } => Some((*base, !matches!(mode, AddrMode::Offset))),
        _ => None,
    })
}

fn target_of(operands: &[Operand]) -> Option<BranchTarget> {
    operands.iter().find_map(|o| match o {
        Operand::Addr(a) => Some(BranchTarget::Addr(*a)),
        Operand::Label(l) => Some(BranchTarget::Symbol(l.clone())),
        _ => None,
    })
}

/// Classify one instruction. Total and context-free: the class depends only
/// on the instruction itself.
pub fn classify(instr: &Instruction, table: &ClassTable) -> InstrClass {
    let mnemonic = instr.mnemonic.as_str();
    let entry = match table.entries.get(mnemonic) {
        Some(e) => *e,
        None => {
            // The b.<cond> family is recognized structurally.
            if mnemonic.starts_with("b.") {
                return InstrClass::CondBranch {
                    regs: Vec::new(),
                    target: target_of(&instr.operands),
                };
            }
            return InstrClass::Other;
        }
    };
    let ops = &instr.operands;
    let regs = regs_of(ops);

    match entry.kind {
        Kind::Arith => {
            // Flag-setting compares have no destination; model them as
            // writing the zero register so they never rewrite a tracked sym.
            if matches!(mnemonic, "cmp" | "cmn" | "tst") {
                return InstrClass::Arith {
                    dest: Reg::Zero,
                    srcs: regs,
                };
            }
            let dest = regs.first().copied().unwrap_or(Reg::Zero);
            let srcs = regs.get(1..).map(<[Reg]>::to_vec).unwrap_or_default();
            InstrClass::Arith { dest, srcs }
        }
        Kind::Load => {
            let (base, writeback) = match mem_of(ops) {
                Some((b, w)) => (Some(b), w),
                None => (None, false),
            };
            let literal = if base.is_none() {
                ops.iter().find_map(|o| match o {
                    Operand::Label(l) => Some(l.clone()),
                    Operand::Addr(a) => Some(format!("0x{a:x}")),
                    _ => None,
                })
            } else {
                None
            };
            InstrClass::Load {
                dests: regs,
                base,
                literal,
                writeback,
            }
        }
        Kind::Store => {
            let (base, writeback) = match mem_of(ops) {
                Some((b, w)) => (Some(b), w),
                None => (None, false),
            };
            InstrClass::Store {
                srcs: regs,
                base,
                writeback,
            }
        }
        Kind::AddrCalc => InstrClass::AddrCalc {
            dest: regs.first().copied().unwrap_or(Reg::Zero),
            target: target_of(ops),
        },
        Kind::Sign | Kind::Auth => {
            let (target, context) = pa_operands(entry.ctx, &regs);
            let key = entry.key.unwrap_or(PacKeySel::IA);
            if entry.kind == Kind::Sign {
                InstrClass::PacSign {
                    key,
                    target,
                    context,
                }
            } else {
                InstrClass::PacAuth {
                    key,
                    target,
                    context,
                }
            }
        }
        Kind::Strip => InstrClass::PacStrip {
            // xpaclri has an implicit x30 target.
            target: regs.first().copied().unwrap_or(Reg::X(30)),
        },
        Kind::ICall | Kind::IBr => {
            let target = regs.first().copied().unwrap_or(Reg::X(30));
            let auth = if entry.combined_auth {
                let ctx = match entry.ctx {
                    Some(CtxSpec::Zero) => PacContext::Zero,
                    Some(CtxSpec::Sp) => PacContext::Sp,
                    _ => regs
                        .get(1)
                        .map(|r| PacContext::Reg(*r))
                        .unwrap_or(PacContext::Zero),
                };
                Some((entry.key.unwrap_or(PacKeySel::IA), ctx))
            } else {
                None
            };
            if entry.kind == Kind::ICall {
                InstrClass::IndirectCall { target, auth }
            } else {
                InstrClass::IndirectBranch { target, auth }
            }
        }
        Kind::Call => InstrClass::DirectCall {
            target: target_of(ops),
        },
        Kind::Branch => InstrClass::DirectBranch {
            target: target_of(ops),
        },
        Kind::Cond => InstrClass::CondBranch {
            regs,
            target: target_of(ops),
        },
        Kind::Ret => InstrClass::Return {
            reg: regs.first().copied().unwrap_or(Reg::X(30)),
            auth: entry
                .combined_auth
                .then(|| (entry.key.unwrap_or(PacKeySel::IA), PacContext::Sp)),
            exception_return: false,
        },
        Kind::Eret => InstrClass::Return {
            reg: Reg::Elr,
            auth: None,
            exception_return: true,
        },
        Kind::Other => InstrClass::Other,
    }
}

fn pa_operands(ctx: Option<CtxSpec>, regs: &[Reg]) -> (Reg, PacContext) {
    match ctx {
        Some(CtxSpec::Reg) | None => {
            let target = regs.first().copied().unwrap_or(Reg::Zero);
            let context = regs
                .get(1)
                .map(|r| PacContext::Reg(*r))
                .unwrap_or(PacContext::Zero);
            (target, context)
        }
        Some(CtxSpec::Zero) => (regs.first().copied().unwrap_or(Reg::Zero), PacContext::Zero),
        Some(CtxSpec::Sp) => (Reg::X(30), PacContext::Sp),
        Some(CtxSpec::I1716) => (Reg::X(17), PacContext::Reg(Reg::X(16))),
        Some(CtxSpec::Gctx) => (Reg::Elr, PacContext::Sp),
    }
}

/// A function listing together with its per-instruction classes; the shape
/// the CFG builder and validator consume.
#[derive(Debug, Clone)]
pub struct ClassifiedFunction {
    pub listing: FunctionListing,
    pub classes: Vec<InstrClass>,
}

impl ClassifiedFunction {
    pub fn new(listing: FunctionListing, table: &ClassTable) -> Self {
        let classes = listing
            .instructions
            .iter()
            .map(|i| classify(i, table))
            .collect();
        ClassifiedFunction { listing, classes }
    }

    pub fn len(&self) -> usize {
        self.listing.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.listing.instructions.is_empty()
    }

    pub fn address(&self, idx: usize) -> u64 {
        self.listing.instructions[idx].address
    }

    /// Index of the instruction at `addr`, if any.
    pub fn index_of(&self, addr: u64) -> Option<usize> {
        self.listing
            .instructions
            .binary_search_by_key(&addr, |i| i.address)
            .ok()
    }
}
