//! Context analyzer: diversity scores, retbind discovery, allowed-target
//! precision metrics, and annotation placement over the textual IR.

pub mod annotate;
pub mod corpus;
pub mod diversity;
pub mod ir;
pub mod points_to;

pub use annotate::{annotate, AnnotateOutcome, Annotation, AnnotationKind};
pub use corpus::{
    allowed_targets, allowed_targets_bruteforce, chain_context, corpus_at, extract_corpus,
    extract_with, precision_report, synthetic_chains, AnnotationSet, ChainedSite, ContextCorpus,
    CorpusSite, PrecisionReport, RefineLevel, SiteKind,
};
pub use diversity::{
    estimate_diversity_score, find_retbind_candidates, full_report, DiversityEntry,
    DiversityReport, RetbindCandidate, DEFAULT_DEPTH_CAP,
};
pub use ir::{parse_ir, IrError, IrProgram};
pub use points_to::{
    andersen_points_to, check_pts, resolve_with_callers, AbstractValue, PointsToSet,
};

#[cfg(test)]
mod tests;
