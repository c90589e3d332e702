//! Inclusion-based, flow-insensitive points-to analysis over the IR.
//!
//! Within a function, values resolve through copy/cast chains to abstract
//! locations; parameters stay symbolic as `Param` members and are expanded
//! through callers by the diversity-score worklist (argument expressions
//! are analyzed in the caller's scope).

use std::collections::BTreeSet;

use super::ir::{Callee, IrFunction, IrInstr, IrProgram, IrValue, Rhs};

/// Abstract value in a points-to set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum AbstractValue {
    /// Address of a named symbol (function or static).
    Const(String),
    /// Address within the allocating function's stack frame.
    StackAddr { func: String, site: usize },
    /// Fresh allocation from a named heap allocator.
    HeapAddr {
        func: String,
        site: usize,
        allocator: String,
    },
    /// Unresolved parameter flow.
    Param { func: String, index: usize },
    Unknown,
}

pub type PointsToSet = BTreeSet<AbstractValue>;

/// Intra-procedural points-to set of `value` inside `func`. Undefined
/// names resolve to `Unknown`; `Unknown` is absorbing for checks.
pub fn andersen_points_to(program: &IrProgram, func: &str, value: &IrValue) -> PointsToSet {
    let mut out = PointsToSet::new();
    match program.function(func) {
        Some(f) => collect(f, value, &mut out, &mut Vec::new()),
        None => {
            out.insert(AbstractValue::Unknown);
        }
    }
    if out.is_empty() {
        out.insert(AbstractValue::Unknown);
    }
    out
}

fn collect(f: &IrFunction, value: &IrValue, out: &mut PointsToSet, visiting: &mut Vec<String>) {
    let name = match value {
        IrValue::Name(n) => n,
        // Field contents are not tracked flow-sensitively; the dependent
        // record path in the diversity score handles these.
        IrValue::FieldRef { .. } => {
            out.insert(AbstractValue::Unknown);
            return;
        }
    };
    if let Some(idx) = f.param_index(name) {
        out.insert(AbstractValue::Param {
            func: f.name.clone(),
            index: idx,
        });
        return;
    }
    if visiting.iter().any(|v| v == name) {
        out.insert(AbstractValue::Unknown);
        return;
    }
    visiting.push(name.clone());
    let mut found = false;
    for (site, instr) in f.body.iter().enumerate() {
        if let IrInstr::Def { name: def, rhs } = instr {
            if def != name {
                continue;
            }
            found = true;
            match rhs {
                Rhs::ConstAddr(sym) => {
                    out.insert(AbstractValue::Const(sym.clone()));
                }
                Rhs::StackAlloc => {
                    out.insert(AbstractValue::StackAddr {
                        func: f.name.clone(),
                        site,
                    });
                }
                Rhs::HeapAlloc(alloc) => {
                    out.insert(AbstractValue::HeapAddr {
                        func: f.name.clone(),
                        site,
                        allocator: alloc.clone(),
                    });
                }
                Rhs::Copy(v) | Rhs::Cast(v) => collect(f, v, out, visiting),
            }
        }
    }
    visiting.pop();
    if !found {
        out.insert(AbstractValue::Unknown);
    }
}

/// True iff every member of the set is a new constant, a current-frame
/// stack address, or a fresh heap allocation. Parameter flows and unknowns
/// fail; an empty set fails.
pub fn check_pts(pts: &PointsToSet) -> bool {
    !pts.is_empty()
        && pts.iter().all(|v| {
            matches!(
                v,
                AbstractValue::Const(_)
                    | AbstractValue::StackAddr { .. }
                    | AbstractValue::HeapAddr { .. }
            )
        })
}

/// Interprocedural closure: expand `Param` members through static callers,
/// analyzing each argument in the caller's scope, up to `depth` rounds.
/// Parameters with no callers stay symbolic.
pub fn resolve_with_callers(
    program: &IrProgram,
    func: &str,
    value: &IrValue,
    depth: usize,
) -> PointsToSet {
    let mut pts = andersen_points_to(program, func, value);
    for _ in 0..depth {
        let params: Vec<(String, usize)> = pts
            .iter()
            .filter_map(|v| match v {
                AbstractValue::Param { func, index } => Some((func.clone(), *index)),
                _ => None,
            })
            .collect();
        if params.is_empty() {
            break;
        }
        let mut changed = false;
        for (g, k) in params {
            let mut expansion = PointsToSet::new();
            for (caller, site) in program.callers_of(&g) {
                if let Some(IrInstr::Call { args, .. }) =
                    program.function(caller).and_then(|f| f.body.get(site))
                {
                    if let Some(arg) = args.get(k) {
                        expansion.extend(andersen_points_to(program, caller, arg));
                    }
                }
            }
            if !expansion.is_empty() {
                pts.remove(&AbstractValue::Param {
                    func: g.clone(),
                    index: k,
                });
                for v in expansion {
                    changed |= pts.insert(v);
                }
            }
        }
        if !changed {
            break;
        }
    }
    pts
}

/// Resolve a callee value through copy/cast chains to a parameter of `f`,
/// if that is what it names.
pub fn callee_param_index(f: &IrFunction, callee: &Callee) -> Option<usize> {
    let mut v = match callee {
        Callee::Value(v) => v.clone(),
        Callee::Direct(_) => return None,
    };
    let mut fuel = f.body.len() + 1;
    loop {
        fuel = fuel.checked_sub(1)?;
        let name = match &v {
            IrValue::Name(n) => n.clone(),
            IrValue::FieldRef { .. } => return None,
        };
        if let Some(idx) = f.param_index(&name) {
            return Some(idx);
        }
        let def = f.body.iter().find_map(|i| match i {
            IrInstr::Def { name: d, rhs } if *d == name => Some(rhs),
            _ => None,
        })?;
        match def {
            Rhs::Copy(inner) | Rhs::Cast(inner) => v = inner.clone(),
            _ => return None,
        }
    }
}
