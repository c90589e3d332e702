//! Context corpora and precision metrics.
//!
//! A corpus is the set of GEN sites (pointer signings) and USE sites
//! (authenticate-and-branch sites) with their context ids. The allowed
//! target count of a context is |USE sites| x |GEN pointers| sharing it:
//! the substitution surface of a replay attack. Refinement levels split
//! contexts — typesig, then owner-type chaining, then per-object /
//! per-call-site binding — and splitting can only shrink the products.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::diversity::find_retbind_candidates;
use super::ir::{Callee, FieldKind, IrInstr, IrProgram, IrValue, StoreTarget};
use super::points_to::callee_param_index;
use crate::pa::{stable_hash64, KeyRole, PaKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    Gen,
    Use,
}

/// Context refinement level. `ObjBind` covers both per-object binding for
/// fields and per-call-site binding (retbind) for pointer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineLevel {
    TypeSig,
    ObjType,
    ObjBind,
}

impl RefineLevel {
    pub const ALL: [RefineLevel; 3] = [RefineLevel::TypeSig, RefineLevel::ObjType, RefineLevel::ObjBind];

    pub fn name(self) -> &'static str {
        match self {
            RefineLevel::TypeSig => "typesig",
            RefineLevel::ObjType => "objtype",
            RefineLevel::ObjBind => "objbind",
        }
    }

    pub fn parse(s: &str) -> Option<RefineLevel> {
        match s {
            "typesig" => Some(RefineLevel::TypeSig),
            "objtype" => Some(RefineLevel::ObjType),
            "objbind" | "objbind+retbind" => Some(RefineLevel::ObjBind),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSite {
    pub kind: SiteKind,
    /// Context id at the corpus's refinement level.
    pub ctx: u64,
    /// GEN: number of pointers signed here; USE: number of call sites.
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ContextCorpus {
    pub sites: Vec<CorpusSite>,
}

pub const CORPUS_SCHEMA: &str = "pauthkit.corpus/1";

impl ContextCorpus {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct File<'a> {
            schema: &'static str,
            sites: &'a [CorpusSite],
        }
        serde_json::to_string_pretty(&File {
            schema: CORPUS_SCHEMA,
            sites: &self.sites,
        })
        .expect("corpus serializes")
    }

    pub fn from_json(text: &str) -> Result<ContextCorpus, serde_json::Error> {
        #[derive(Deserialize)]
        struct File {
            #[allow(dead_code)]
            schema: String,
            sites: Vec<CorpusSite>,
        }
        let f: File = serde_json::from_str(text)?;
        Ok(ContextCorpus { sites: f.sites })
    }

    pub fn gen_pointers(&self, ctx: u64) -> u64 {
        self.sites
            .iter()
            .filter(|s| s.kind == SiteKind::Gen && s.ctx == ctx)
            .map(|s| s.count)
            .sum()
    }

    pub fn use_sites(&self, ctx: u64) -> u64 {
        self.sites
            .iter()
            .filter(|s| s.kind == SiteKind::Use && s.ctx == ctx)
            .map(|s| s.count)
            .sum()
    }

    pub fn contexts(&self) -> BTreeSet<u64> {
        self.sites.iter().map(|s| s.ctx).collect()
    }
}

/// Allowed targets per context: |USE sites| x |GEN pointers|.
pub fn allowed_targets(corpus: &ContextCorpus) -> BTreeMap<u64, u64> {
    let mut gens: BTreeMap<u64, u64> = BTreeMap::new();
    let mut uses: BTreeMap<u64, u64> = BTreeMap::new();
    for s in &corpus.sites {
        let m = match s.kind {
            SiteKind::Gen => &mut gens,
            SiteKind::Use => &mut uses,
        };
        *m.entry(s.ctx).or_insert(0) += s.count;
    }
    let mut out = BTreeMap::new();
    for ctx in corpus.contexts() {
        let g = gens.get(&ctx).copied().unwrap_or(0);
        let u = uses.get(&ctx).copied().unwrap_or(0);
        out.insert(ctx, g * u);
    }
    out
}

/// Brute-force pairing oracle: expand every site into units and count
/// matching (USE unit, GEN unit) pairs one by one.
pub fn allowed_targets_bruteforce(corpus: &ContextCorpus) -> BTreeMap<u64, u64> {
    let mut gen_units: Vec<u64> = Vec::new();
    let mut use_units: Vec<u64> = Vec::new();
    for s in &corpus.sites {
        let units = match s.kind {
            SiteKind::Gen => &mut gen_units,
            SiteKind::Use => &mut use_units,
        };
        for _ in 0..s.count {
            units.push(s.ctx);
        }
    }
    let mut out: BTreeMap<u64, u64> = corpus.contexts().into_iter().map(|c| (c, 0)).collect();
    for &u in &use_units {
        for &g in &gen_units {
            if u == g {
                *out.entry(u).or_insert(0) += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrecisionHisto {
    /// Indirect-call units with value <= 5.
    pub le5: u64,
    /// Indirect-call units with value > 100.
    pub gt100: u64,
    pub total: u64,
    pub max: u64,
}

impl PrecisionHisto {
    pub fn le5_share(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.le5 as f64 / self.total as f64
        }
    }

    pub fn gt100_share(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.gt100 as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PrecisionReport {
    pub schema: &'static str,
    pub level: String,
    /// Per indirect call: how many targets its context allows.
    pub allowed_targets: PrecisionHisto,
    /// Per indirect call: how many indirect calls share its context.
    pub context_diversity: PrecisionHisto,
    /// Worst contexts by allowed targets (ctx, allowed), capped at ten.
    pub worst: Vec<(u64, u64)>,
}

pub const PRECISION_SCHEMA: &str = "pauthkit.precision/1";

/// Both precision views over the corpus's USE sites.
pub fn precision_report(corpus: &ContextCorpus, level_name: &str) -> PrecisionReport {
    let allowed = allowed_targets(corpus);
    let mut uses: BTreeMap<u64, u64> = BTreeMap::new();
    for s in &corpus.sites {
        if s.kind == SiteKind::Use {
            *uses.entry(s.ctx).or_insert(0) += s.count;
        }
    }
    let mut at = PrecisionHisto::default();
    let mut cd = PrecisionHisto::default();
    for (&ctx, &n_uses) in &uses {
        let a = allowed.get(&ctx).copied().unwrap_or(0);
        at.total += n_uses;
        cd.total += n_uses;
        if a <= 5 {
            at.le5 += n_uses;
        }
        if a > 100 {
            at.gt100 += n_uses;
        }
        at.max = at.max.max(a);
        if n_uses <= 5 {
            cd.le5 += n_uses;
        }
        if n_uses > 100 {
            cd.gt100 += n_uses;
        }
        cd.max = cd.max.max(n_uses);
    }
    let mut worst: Vec<(u64, u64)> = allowed
        .iter()
        .filter(|(_, &a)| a > 0)
        .map(|(&c, &a)| (c, a))
        .collect();
    worst.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    worst.truncate(10);
    PrecisionReport {
        schema: PRECISION_SCHEMA,
        level: level_name.to_string(),
        allowed_targets: at,
        context_diversity: cd,
        worst,
    }
}

impl PrecisionReport {
    pub fn human_table(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "precision at level `{}`", self.level);
        let _ = writeln!(
            out,
            "  allowed targets:    <=5 {:6.1}%   >100 {:6.2}%   max {}",
            100.0 * self.allowed_targets.le5_share(),
            100.0 * self.allowed_targets.gt100_share(),
            self.allowed_targets.max
        );
        let _ = writeln!(
            out,
            "  context diversity:  <=5 {:6.1}%   >100 {:6.2}%   max {}",
            100.0 * self.context_diversity.le5_share(),
            100.0 * self.context_diversity.gt100_share(),
            self.context_diversity.max
        );
        for (ctx, a) in &self.worst {
            let _ = writeln!(out, "  ctx {ctx:#018x}: {a} allowed targets");
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Context-id derivation
// ---------------------------------------------------------------------------

/// Fixed, public analysis key used only for deterministic context-id
/// chaining. Not a secret.
fn analysis_key() -> PaKey {
    PaKey::from_seed(KeyRole::Apga, 0x00c7_e117_ab1e_0001)
}

/// Chain one component onto an existing context id.
pub fn chain_context(component: u64, previous: u64) -> u64 {
    analysis_key().compute(component, previous)
}

fn typesig_of(kind: &FieldKind) -> u64 {
    stable_hash64(kind.type_string().as_bytes())
}

/// A GEN/USE site with its full refinement chain; `context_at` projects a
/// site onto a level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainedSite {
    pub kind: SiteKind,
    pub chain: [u64; 3],
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<String>,
    #[serde(default)]
    pub label: String,
}

impl ChainedSite {
    pub fn context_at(&self, level: RefineLevel) -> u64 {
        match level {
            RefineLevel::TypeSig => self.chain[0],
            RefineLevel::ObjType => self.chain[1],
            RefineLevel::ObjBind => self.chain[2],
        }
    }
}

/// Project chained sites onto one refinement level.
pub fn corpus_at(sites: &[ChainedSite], level: RefineLevel) -> ContextCorpus {
    ContextCorpus {
        sites: sites
            .iter()
            .map(|s| CorpusSite {
                kind: s.kind,
                ctx: s.context_at(level),
                count: s.count,
                owner: s.owner.clone(),
                label: s.label.clone(),
            })
            .collect(),
    }
}

/// Random chained corpus for property tests and the simulator: contexts
/// form a refinement hierarchy by construction.
pub fn synthetic_chains(seed: u64, max_sites: usize) -> Vec<ChainedSite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_types = rng.gen_range(1..=6u64);
    let mut sites = Vec::new();
    let n_sites = rng.gen_range(1..=max_sites);
    for i in 0..n_sites {
        let tsig = stable_hash64(format!("type{}", rng.gen_range(0..n_types)).as_bytes());
        let owner = rng.gen_range(0..4u64);
        let objtype = if rng.gen_bool(0.8) {
            chain_context(stable_hash64(format!("owner{owner}").as_bytes()), tsig)
        } else {
            tsig // no owning object: level cannot split here
        };
        let objbind = if rng.gen_bool(0.7) {
            chain_context(rng.gen_range(0..8u64), objtype)
        } else {
            objtype
        };
        sites.push(ChainedSite {
            kind: if rng.gen_bool(0.5) {
                SiteKind::Gen
            } else {
                SiteKind::Use
            },
            chain: [tsig, objtype, objbind],
            count: rng.gen_range(1..=4),
            owner: None,
            label: format!("site{i}"),
        });
    }
    sites
}

// ---------------------------------------------------------------------------
// IR extraction
// ---------------------------------------------------------------------------

/// Which run-time refinements are in effect when extracting a corpus.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    /// Records whose fields bind to the owning object (objbind).
    pub objbind: BTreeSet<String>,
    /// Functions whose pointer parameters bind to the calling context
    /// (retbind).
    pub retbind: BTreeSet<String>,
    /// Whether the owner-type build-time refinement applies at all.
    pub use_objtype: bool,
}

impl AnnotationSet {
    pub fn for_level(program: &IrProgram, level: RefineLevel) -> AnnotationSet {
        match level {
            RefineLevel::TypeSig => AnnotationSet::default(),
            RefineLevel::ObjType => AnnotationSet {
                use_objtype: true,
                ..Default::default()
            },
            RefineLevel::ObjBind => AnnotationSet {
                objbind: program.records.iter().map(|r| r.name.clone()).collect(),
                retbind: find_retbind_candidates(program)
                    .into_iter()
                    .map(|c| c.function)
                    .collect(),
                use_objtype: true,
            },
        }
    }
}

/// Extract the GEN/USE corpus of an IR program at one refinement level.
pub fn extract_corpus(program: &IrProgram, level: RefineLevel) -> ContextCorpus {
    extract_with(program, &AnnotationSet::for_level(program, level))
}

/// Extract the corpus under an explicit annotation set.
///
/// Stores of function-pointer fields and indirect calls through fields are
/// GEN/USE sites chained typesig -> owner type -> object identity (the
/// declared object name stands in for the run-time instance). Function
/// pointer arguments at call sites are GENs. For retbind-annotated callees
/// the in-body parameter USE splits into one unit per calling context,
/// pairing each caller's GEN with exactly its own USE.
pub fn extract_with(program: &IrProgram, ann: &AnnotationSet) -> ContextCorpus {
    let mut sites = Vec::new();
    for f in &program.functions {
        for (idx, instr) in f.body.iter().enumerate() {
            match instr {
                IrInstr::Store {
                    target: StoreTarget::Field { object, field },
                    ..
                } => {
                    if let Some(site) = field_site(
                        program,
                        ann,
                        SiteKind::Gen,
                        object,
                        field,
                        format!("{}#{idx}: store {object}.{field}", f.name),
                    ) {
                        sites.push(site);
                    }
                }
                IrInstr::Call { callee, args } => match callee {
                    Callee::Value(IrValue::FieldRef { object, field }) => {
                        if let Some(site) = field_site(
                            program,
                            ann,
                            SiteKind::Use,
                            object,
                            field,
                            format!("{}#{idx}: call {object}.{field}", f.name),
                        ) {
                            sites.push(site);
                        }
                    }
                    Callee::Value(v) => {
                        let Some(pidx) = callee_param_index(f, &Callee::Value(v.clone())) else {
                            continue;
                        };
                        if !f.params[pidx].kind.is_fnptr() {
                            continue;
                        }
                        let tsig = typesig_of(&f.params[pidx].kind);
                        let callers = program.callers_of(&f.name);
                        if ann.retbind.contains(&f.name) && !callers.is_empty() {
                            for (caller, site) in callers {
                                sites.push(CorpusSite {
                                    kind: SiteKind::Use,
                                    ctx: chain_context(
                                        stable_hash64(format!("{caller}#{site}").as_bytes()),
                                        tsig,
                                    ),
                                    count: 1,
                                    owner: None,
                                    label: format!(
                                        "{}#{idx}: call param {} (ctx {caller}#{site})",
                                        f.name, f.params[pidx].name
                                    ),
                                });
                            }
                        } else {
                            sites.push(CorpusSite {
                                kind: SiteKind::Use,
                                ctx: tsig,
                                count: 1,
                                owner: None,
                                label: format!(
                                    "{}#{idx}: call param {}",
                                    f.name, f.params[pidx].name
                                ),
                            });
                        }
                    }
                    Callee::Direct(callee_name) => {
                        let Some(target) = program.function(callee_name) else {
                            continue;
                        };
                        for (k, param) in target.params.iter().enumerate() {
                            if k >= args.len() || !param.kind.is_fnptr() {
                                continue;
                            }
                            let tsig = typesig_of(&param.kind);
                            let ctx = if ann.retbind.contains(callee_name) {
                                chain_context(
                                    stable_hash64(format!("{}#{idx}", f.name).as_bytes()),
                                    tsig,
                                )
                            } else {
                                tsig
                            };
                            sites.push(CorpusSite {
                                kind: SiteKind::Gen,
                                ctx,
                                count: 1,
                                owner: None,
                                label: format!(
                                    "{}#{idx}: arg {k} of call to {callee_name}",
                                    f.name
                                ),
                            });
                        }
                    }
                },
                _ => {}
            }
        }
    }
    ContextCorpus { sites }
}

fn field_site(
    program: &IrProgram,
    ann: &AnnotationSet,
    kind: SiteKind,
    object: &str,
    field: &str,
    label: String,
) -> Option<CorpusSite> {
    let field_kind = program.field_kind(object, field)?;
    if !field_kind.is_fnptr() {
        return None;
    }
    let record = &program.object(object)?.record;
    let tsig = typesig_of(field_kind);
    let ctx = if !ann.use_objtype {
        tsig
    } else {
        let objtype = chain_context(stable_hash64(record.as_bytes()), tsig);
        if ann.objbind.contains(record) {
            chain_context(stable_hash64(object.as_bytes()), objtype)
        } else {
            objtype
        }
    };
    Some(CorpusSite {
        kind,
        ctx,
        count: 1,
        owner: Some(record.clone()),
        label,
    })
}
