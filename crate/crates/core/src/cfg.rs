//! Per-function control-flow graph recovery with loop detection.
//!
//! Blocks partition the instruction stream. Direct and conditional branch
//! targets resolve to block ids; indirect branches end a block with no
//! static successors (jump tables are not reconstructed). Calls fall
//! through. Targets outside the function are recorded as external edges.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::asm::{BranchTarget, ClassifiedFunction, InstrClass};

pub type BlockId = usize;

/// Per-chain block budget for backward path exploration. Exhaustion is
/// reported, never silently dropped.
pub const DEFAULT_CHAIN_BUDGET: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Return,
    DirectBranch,
    CondBranch,
    /// `br`-style block end with no static successors.
    IndirectBranch,
    Fallthrough,
}

#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub id: BlockId,
    /// Inclusive instruction index range within the function.
    pub first: usize,
    pub last: usize,
    pub succs: Vec<BlockId>,
    pub preds: Vec<BlockId>,
    pub terminator: TermKind,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub function: String,
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    pub loop_headers: BTreeSet<BlockId>,
    pub back_edges: Vec<(BlockId, BlockId)>,
    /// Branches whose target lies outside the function.
    pub external_edges: Vec<(BlockId, String)>,
}

impl Cfg {
    /// Block containing the given instruction index.
    pub fn block_of(&self, instr_idx: usize) -> BlockId {
        // Blocks are ordered by index range; binary search on `first`.
        match self.blocks.binary_search_by_key(&instr_idx, |b| b.first) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Graph dump, one edge per line, for debugging.
    pub fn dump_edges(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# cfg {}", self.function);
        for b in &self.blocks {
            for s in &b.succs {
                let back = if self.back_edges.contains(&(b.id, *s)) {
                    " back"
                } else {
                    ""
                };
                let _ = writeln!(out, "{} -> {}{}", b.id, s, back);
            }
        }
        for (b, sym) in &self.external_edges {
            let _ = writeln!(out, "{b} -> <{sym}>");
        }
        out
    }
}

/// Build the CFG of a classified function.
pub fn build_cfg(fun: &ClassifiedFunction) -> Cfg {
    let n = fun.len();
    assert!(n > 0, "function listing is never empty");

    // Leaders: entry, branch targets, and instructions after terminators.
    let mut leaders: BTreeSet<usize> = BTreeSet::new();
    leaders.insert(0);
    for (i, class) in fun.classes.iter().enumerate() {
        let target = match class {
            InstrClass::DirectBranch { target } | InstrClass::CondBranch { target, .. } => {
                target.as_ref()
            }
            _ => None,
        };
        if let Some(BranchTarget::Addr(a)) = target {
            if let Some(idx) = fun.index_of(*a) {
                leaders.insert(idx);
            }
        }
        if class.is_terminator() && i + 1 < n {
            leaders.insert(i + 1);
        }
    }

    let starts: Vec<usize> = leaders.into_iter().collect();
    let mut blocks: Vec<BasicBlock> = Vec::with_capacity(starts.len());
    let mut block_of_index: Vec<BlockId> = vec![0; n];
    for (id, &first) in starts.iter().enumerate() {
        let last = starts.get(id + 1).map(|&s| s - 1).unwrap_or(n - 1);
        for slot in block_of_index.iter_mut().take(last + 1).skip(first) {
            *slot = id;
        }
        blocks.push(BasicBlock {
            id,
            first,
            last,
            succs: Vec::new(),
            preds: Vec::new(),
            terminator: TermKind::Fallthrough,
        });
    }

    let mut external: Vec<(BlockId, String)> = Vec::new();
    for id in 0..blocks.len() {
        let last = blocks[id].last;
        let mut succs: Vec<BlockId> = Vec::new();
        let term = match &fun.classes[last] {
            InstrClass::Return { .. } => TermKind::Return,
            InstrClass::IndirectBranch { .. } => TermKind::IndirectBranch,
            InstrClass::DirectBranch { target } => {
                match resolve_target(fun, target, &block_of_index) {
                    Some(t) => succs.push(t),
                    None => external.push((id, target_name(target))),
                }
                TermKind::DirectBranch
            }
            InstrClass::CondBranch { target, .. } => {
                match resolve_target(fun, target, &block_of_index) {
                    Some(t) => succs.push(t),
                    None => external.push((id, target_name(target))),
                }
                if last + 1 < n {
                    succs.push(block_of_index[last + 1]);
                }
                TermKind::CondBranch
            }
            _ => {
                if last + 1 < n {
                    succs.push(block_of_index[last + 1]);
                }
                TermKind::Fallthrough
            }
        };
        succs.dedup();
        blocks[id].succs = succs.clone();
        blocks[id].terminator = term;
        for s in succs {
            blocks[s].preds.push(id);
        }
    }
    for b in &mut blocks {
        b.preds.sort_unstable();
        b.preds.dedup();
    }

    let (back_edges, loop_headers) = find_back_edges(&blocks, 0);

    Cfg {
        function: fun.listing.name.clone(),
        blocks,
        entry: 0,
        loop_headers,
        back_edges,
        external_edges: external,
    }
}

fn resolve_target(
    fun: &ClassifiedFunction,
    target: &Option<BranchTarget>,
    block_of_index: &[BlockId],
) -> Option<BlockId> {
    match target {
        Some(BranchTarget::Addr(a)) => fun.index_of(*a).map(|i| block_of_index[i]),
        _ => None,
    }
}

fn target_name(target: &Option<BranchTarget>) -> String {
    match target {
        Some(BranchTarget::Addr(a)) => format!("0x{a:x}"),
        Some(BranchTarget::Symbol(s)) => s.clone(),
        None => "?".to_string(),
    }
}

/// Retreating-edge detection by DFS: an edge into a block still on the DFS
/// stack is a back edge; its target is a loop header.
fn find_back_edges(
    blocks: &[BasicBlock],
    entry: BlockId,
) -> (Vec<(BlockId, BlockId)>, BTreeSet<BlockId>) {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let mut color = vec![Color::White; blocks.len()];
    let mut back = Vec::new();
    let mut headers = BTreeSet::new();
    // Iterative DFS with an explicit edge stack for deterministic order.
    let mut stack: Vec<(BlockId, usize)> = vec![(entry, 0)];
    color[entry] = Color::Gray;
    while let Some(&(b, next)) = stack.last() {
        if next < blocks[b].succs.len() {
            stack.last_mut().unwrap().1 += 1;
            let s = blocks[b].succs[next];
            match color[s] {
                Color::Gray => {
                    back.push((b, s));
                    headers.insert(s);
                }
                Color::White => {
                    color[s] = Color::Gray;
                    stack.push((s, 0));
                }
                Color::Black => {}
            }
        } else {
            color[b] = Color::Black;
            stack.pop();
        }
    }
    (back, headers)
}

/// One backward predecessor chain, exclusive of the starting block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredChain {
    pub blocks: Vec<BlockId>,
    /// Set when the per-chain block budget cut the walk short.
    pub truncated: bool,
}

/// Iterator over acyclic predecessor chains from `from` back to the entry.
///
/// Each chain visits a block at most once, which bounds traversal in loops;
/// a chain also ends when the per-chain budget runs out, flagged as
/// truncated.
pub fn find_paths_backward(cfg: &Cfg, from: BlockId, budget: usize) -> PredChainIter<'_> {
    PredChainIter {
        cfg,
        budget,
        stack: vec![Frame {
            block: from,
            next_pred: 0,
            emitted_terminal: false,
        }],
        chain: Vec::new(),
    }
}

struct Frame {
    block: BlockId,
    next_pred: usize,
    emitted_terminal: bool,
}

pub struct PredChainIter<'a> {
    cfg: &'a Cfg,
    budget: usize,
    stack: Vec<Frame>,
    chain: Vec<BlockId>,
}

impl Iterator for PredChainIter<'_> {
    type Item = PredChain;

    fn next(&mut self) -> Option<PredChain> {
        loop {
            let block = self.stack.last()?.block;
            let preds_len = self.cfg.blocks[block].preds.len();

            // Entry, dead-end, or budget exhaustion terminates a chain at
            // the block's first visit.
            if !self.stack.last().unwrap().emitted_terminal {
                self.stack.last_mut().unwrap().emitted_terminal = true;
                if block == self.cfg.entry || preds_len == 0 {
                    return Some(PredChain {
                        blocks: self.chain.clone(),
                        truncated: false,
                    });
                }
                if self.chain.len() >= self.budget {
                    // Do not extend this frame any further.
                    self.stack.last_mut().unwrap().next_pred = preds_len;
                    return Some(PredChain {
                        blocks: self.chain.clone(),
                        truncated: true,
                    });
                }
            }

            let next = self.stack.last().unwrap().next_pred;
            if next < preds_len {
                self.stack.last_mut().unwrap().next_pred += 1;
                let p = self.cfg.blocks[block].preds[next];
                // The stack holds the start block plus every block on the
                // current chain, so this is the whole revisit guard: a chain
                // may not visit a block twice, bounding walks in loops.
                if self.stack.iter().any(|f| f.block == p) {
                    let mut c = self.chain.clone();
                    c.push(p);
                    return Some(PredChain {
                        blocks: c,
                        truncated: true,
                    });
                }
                self.chain.push(p);
                self.stack.push(Frame {
                    block: p,
                    next_pred: 0,
                    emitted_terminal: false,
                });
            } else {
                self.stack.pop();
                self.chain.pop();
            }
        }
    }
}
