//! Annotation placement.
//!
//! Contexts whose allowed-target count exceeds the requested precision
//! level get run-time refinements: records are annotated objbind in
//! descending diversity-score order (ties broken by name) until the level
//! is met, then qualifying functions get retbind. Records whose best score
//! is zero or one are left to manual annotation and reported as residuals.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use super::corpus::{allowed_targets, extract_with, AnnotationSet, ContextCorpus};
use super::diversity::{estimate_diversity_score, find_retbind_candidates, DEFAULT_DEPTH_CAP};
use super::ir::IrProgram;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum AnnotationKind {
    ObjBind,
    RetBind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Annotation {
    pub kind: AnnotationKind,
    /// Record name (objbind) or function name (retbind).
    pub target: String,
    /// Annotation text in the source grammar.
    pub text: String,
    /// Diversity score that ranked this candidate (objbind only).
    pub score: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualContext {
    pub ctx: u64,
    pub allowed: u64,
    pub sites: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnotateOutcome {
    pub schema: &'static str,
    pub precision_level: u64,
    pub annotations: Vec<Annotation>,
    /// Contexts still above the level after all applicable annotations.
    pub residual: Vec<ResidualContext>,
    pub met: bool,
}

pub const ANNOTATE_SCHEMA: &str = "pauthkit.annotations/1";

impl AnnotateOutcome {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for a in &self.annotations {
            let prefix = match a.kind {
                AnnotationKind::ObjBind => "record",
                AnnotationKind::RetBind => "func",
            };
            let _ = writeln!(out, "{prefix} {}: {}", a.target, a.text);
        }
        for r in &self.residual {
            let _ = writeln!(
                out,
                "# unresolved: ctx {:#018x} allows {} targets ({})",
                r.ctx, r.allowed, r.reason
            );
        }
        out
    }
}

fn offending(corpus: &ContextCorpus, level: u64) -> Vec<(u64, u64)> {
    allowed_targets(corpus)
        .into_iter()
        .filter(|&(_, a)| a > level)
        .collect()
}

/// Annotate the program until every context allows at most `level`
/// targets, or until annotations run out.
pub fn annotate(program: &IrProgram, level: u64, depth_cap: Option<usize>) -> AnnotateOutcome {
    let depth_cap = depth_cap.unwrap_or(DEFAULT_DEPTH_CAP);
    let mut ann = AnnotationSet {
        use_objtype: true,
        ..Default::default()
    };
    let mut annotations = Vec::new();
    let mut low_score: Vec<String> = Vec::new();

    // Rank records by their best field score, descending, name-ascending.
    // On score ties a data field makes the better binding source than the
    // protected pointer itself.
    let mut candidates: Vec<(u32, String, String)> = Vec::new(); // (score, record, field)
    for r in &program.records {
        let mut best: Option<(u32, bool, String)> = None;
        for f in &r.fields {
            let e = estimate_diversity_score(program, &r.name, &f.name, depth_cap);
            let is_data = !f.kind.is_fnptr();
            let better = match &best {
                None => true,
                Some((s, d, _)) => e.score > *s || (e.score == *s && is_data && !*d),
            };
            if better {
                best = Some((e.score, is_data, f.name.clone()));
            }
        }
        if let Some((score, _, field)) = best {
            candidates.push((score, r.name.clone(), field));
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    for (score, record, field) in candidates {
        if offending(&extract_with(program, &ann), level).is_empty() {
            break;
        }
        // Does this record own any offending context?
        let corpus = extract_with(program, &ann);
        let offenders: BTreeSet<u64> = offending(&corpus, level).into_iter().map(|(c, _)| c).collect();
        let owns_offender = corpus
            .sites
            .iter()
            .any(|s| s.owner.as_deref() == Some(record.as_str()) && offenders.contains(&s.ctx));
        if !owns_offender {
            continue;
        }
        if score <= 1 {
            // Too little compile-time diversity to bind on; manual work.
            low_score.push(record.clone());
            continue;
        }
        let rec = program.record(&record).expect("candidate record exists");
        let fnptrs: Vec<&str> = rec
            .fields
            .iter()
            .filter(|f| f.kind.is_fnptr())
            .map(|f| f.name.as_str())
            .collect();
        let bound = if fnptrs.len() > 1 {
            "*".to_string()
        } else {
            fnptrs.first().copied().unwrap_or("*").to_string()
        };
        annotations.push(Annotation {
            kind: AnnotationKind::ObjBind,
            target: record.clone(),
            text: format!("objbind({field}, {bound})"),
            score,
        });
        ann.objbind.insert(record);
    }

    // Retbind for qualifying functions whose contexts still offend.
    for cand in find_retbind_candidates(program) {
        let corpus = extract_with(program, &ann);
        if offending(&corpus, level).is_empty() {
            break;
        }
        let offenders: BTreeSet<u64> = offending(&corpus, level).into_iter().map(|(c, _)| c).collect();
        let needle_gen = format!("call to {}", cand.function);
        let needle_use = format!("{}#", cand.function);
        let touches = corpus.sites.iter().any(|s| {
            offenders.contains(&s.ctx)
                && (s.label.contains(&needle_gen) || s.label.starts_with(&needle_use))
        });
        if !touches {
            continue;
        }
        annotations.push(Annotation {
            kind: AnnotationKind::RetBind,
            target: cand.function.clone(),
            text: format!("retbind({})", cand.params.join(" ")),
            score: 0,
        });
        ann.retbind.insert(cand.function);
    }

    let final_corpus = extract_with(program, &ann);
    let mut residual = Vec::new();
    for (ctx, allowed) in offending(&final_corpus, level) {
        let owners: BTreeSet<&str> = final_corpus
            .sites
            .iter()
            .filter(|s| s.ctx == ctx)
            .filter_map(|s| s.owner.as_deref())
            .collect();
        let sites: Vec<String> = final_corpus
            .sites
            .iter()
            .filter(|s| s.ctx == ctx)
            .map(|s| s.label.clone())
            .collect();
        let reason = if owners.iter().any(|o| low_score.iter().any(|r| r == o)) {
            "diversity score too low (zero or one); needs manual binding".to_string()
        } else {
            "no applicable annotation".to_string()
        };
        residual.push(ResidualContext {
            ctx,
            allowed,
            sites,
            reason,
        });
    }

    AnnotateOutcome {
        schema: ANNOTATE_SCHEMA,
        precision_level: level,
        met: residual.is_empty(),
        annotations,
        residual,
    }
}
