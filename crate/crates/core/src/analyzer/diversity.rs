//! Diversity-score estimation.
//!
//! The score of a (record, field) counts assignment sites whose values are
//! provably a new constant, a current-frame stack address, or a fresh heap
//! allocation. Resolution runs in three phases: collect stores, check each
//! store's points-to set locally, then expand unresolved parameter flows
//! through callers with a depth-capped worklist. A store of another
//! record's field value accumulates that field's score recursively.

use std::collections::BTreeSet;

use serde::Serialize;

use super::ir::{IrInstr, IrProgram, IrValue, StoreTarget};
use super::points_to::{andersen_points_to, check_pts, AbstractValue};

/// Default caller-expansion depth cap.
pub const DEFAULT_DEPTH_CAP: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SiteRef {
    pub function: String,
    pub instr: usize,
    pub what: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversityEntry {
    pub record: String,
    pub field: String,
    pub score: u32,
    pub contributing: Vec<SiteRef>,
    pub unresolved: Vec<SiteRef>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiversityReport {
    pub schema: &'static str,
    pub depth_cap: usize,
    pub entries: Vec<DiversityEntry>,
}

pub const DIVERSITY_SCHEMA: &str = "pauthkit.diversity/1";

/// Estimate the diversity score of `record.field`.
pub fn estimate_diversity_score(
    program: &IrProgram,
    record: &str,
    field: &str,
    depth_cap: usize,
) -> DiversityEntry {
    let mut visited = BTreeSet::new();
    estimate_inner(program, record, field, depth_cap, &mut visited)
}

fn estimate_inner(
    program: &IrProgram,
    record: &str,
    field: &str,
    depth_cap: usize,
    visited: &mut BTreeSet<(String, String)>,
) -> DiversityEntry {
    let mut entry = DiversityEntry {
        record: record.to_string(),
        field: field.to_string(),
        score: 0,
        contributing: Vec::new(),
        unresolved: Vec::new(),
        diagnostics: Vec::new(),
    };
    if !visited.insert((record.to_string(), field.to_string())) {
        entry
            .diagnostics
            .push(format!("mutually dependent on {record}.{field}: contributes 0"));
        return entry;
    }

    // Phase 1: all assignments to the field across the program.
    for f in &program.functions {
        for (idx, instr) in f.body.iter().enumerate() {
            let IrInstr::Store { target, value } = instr else {
                continue;
            };
            let StoreTarget::Field {
                object,
                field: fld,
            } = target
            else {
                continue;
            };
            if fld != field {
                continue;
            }
            let Some(obj) = program.object(object) else {
                continue;
            };
            if obj.record != record {
                continue;
            }

            // Dependent record: accumulate the source field's score.
            if let IrValue::FieldRef {
                object: src_obj,
                field: src_field,
            } = value
            {
                if let Some(src) = program.object(src_obj) {
                    let sub = estimate_inner(
                        program,
                        &src.record.clone(),
                        src_field,
                        depth_cap,
                        visited,
                    );
                    entry.score += sub.score;
                    entry.diagnostics.push(format!(
                        "{}#{idx}: accumulates {}.{} (score {})",
                        f.name, src.record, src_field, sub.score
                    ));
                    entry.contributing.extend(sub.contributing);
                    entry.unresolved.extend(sub.unresolved);
                    entry.diagnostics.extend(sub.diagnostics);
                }
                continue;
            }

            // Phase 2: local resolution.
            let pts = andersen_points_to(program, &f.name, value);
            if check_pts(&pts) {
                entry.score += 1;
                entry.contributing.push(SiteRef {
                    function: f.name.clone(),
                    instr: idx,
                    what: format!("store {object}.{fld}"),
                });
                continue;
            }

            // Phase 3: iterative caller expansion, one worklist per
            // unresolved store site, bounded by the depth cap.
            let mut wk: Vec<(String, super::points_to::PointsToSet)> =
                vec![(f.name.clone(), pts)];
            let mut depth = 0;
            while !wk.is_empty() && depth < depth_cap {
                let mut upd = Vec::new();
                for (g, pts_g) in &wk {
                    let params: Vec<usize> = pts_g
                        .iter()
                        .filter_map(|v| match v {
                            AbstractValue::Param { func, index } if func == g => Some(*index),
                            _ => None,
                        })
                        .collect();
                    let mut expanded = false;
                    for (caller, site) in program.callers_of(g) {
                        let Some(IrInstr::Call { args, .. }) =
                            program.function(caller).and_then(|cf| cf.body.get(site))
                        else {
                            continue;
                        };
                        for &k in &params {
                            let Some(arg) = args.get(k) else { continue };
                            expanded = true;
                            let pts2 = andersen_points_to(program, caller, arg);
                            if check_pts(&pts2) {
                                entry.score += 1;
                                entry.contributing.push(SiteRef {
                                    function: caller.to_string(),
                                    instr: site,
                                    what: format!("arg {k} of call to {g}"),
                                });
                            } else {
                                upd.push((caller.to_string(), pts2));
                            }
                        }
                    }
                    if !expanded {
                        entry.unresolved.push(SiteRef {
                            function: g.clone(),
                            instr: idx,
                            what: format!("store {object}.{fld}: no resolvable callers"),
                        });
                    }
                }
                wk = upd;
                depth += 1;
            }
            for (g, _) in wk {
                entry.unresolved.push(SiteRef {
                    function: g,
                    instr: idx,
                    what: format!("store {object}.{fld}: abandoned at depth cap {depth_cap}"),
                });
            }
        }
    }

    visited.remove(&(record.to_string(), field.to_string()));
    entry
}

/// Scores for every declared (record, field) pair.
pub fn full_report(program: &IrProgram, depth_cap: usize) -> DiversityReport {
    let mut entries = Vec::new();
    for r in &program.records {
        for f in &r.fields {
            entries.push(estimate_diversity_score(program, &r.name, &f.name, depth_cap));
        }
    }
    entries.sort_by(|a, b| (&a.record, &a.field).cmp(&(&b.record, &b.field)));
    DiversityReport {
        schema: DIVERSITY_SCHEMA,
        depth_cap,
        entries,
    }
}

/// Functions that take a code pointer as input and invoke it in place,
/// with their static call-site counts; the retbind candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetbindCandidate {
    pub function: String,
    /// Names of the invoked function-pointer parameters.
    pub params: Vec<String>,
    pub call_sites: u64,
}

pub fn find_retbind_candidates(program: &IrProgram) -> Vec<RetbindCandidate> {
    let mut out = Vec::new();
    for f in &program.functions {
        let mut invoked: BTreeSet<usize> = BTreeSet::new();
        for instr in &f.body {
            if let IrInstr::Call { callee, .. } = instr {
                if let Some(idx) = super::points_to::callee_param_index(f, callee) {
                    if f.params[idx].kind.is_fnptr() {
                        invoked.insert(idx);
                    }
                }
            }
        }
        if invoked.is_empty() {
            continue;
        }
        out.push(RetbindCandidate {
            function: f.name.clone(),
            params: invoked.iter().map(|&i| f.params[i].name.clone()).collect(),
            call_sites: program.callers_of(&f.name).len() as u64,
        });
    }
    out.sort_by(|a, b| a.function.cmp(&b.function));
    out
}
