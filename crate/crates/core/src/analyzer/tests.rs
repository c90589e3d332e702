use super::corpus::*;
use super::diversity::*;
use super::ir::*;
use super::points_to::*;
use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> IrProgram {
    let text =
        std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap();
    parse_ir(&text).unwrap()
}

mod parsing {
    use super::*;

    #[test]
    fn parses_the_running_example() {
        let p = fixture("objbind.ir");
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.objects.len(), 2);
        assert_eq!(p.functions.len(), 7);
        let f = p.function("setup_const_and_stack").unwrap();
        assert_eq!(f.body.len(), 4);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(matches!(parse_ir("record R { }"), Err(IrError::BadHeader)));
    }

    #[test]
    fn rejects_arity_mismatch() {
        let text = "ir v1\nfunc f(a: data) {\n}\nfunc g() {\n  call @f()\n}\n";
        assert!(matches!(parse_ir(text), Err(IrError::ArityMismatch { .. })));
    }

    #[test]
    fn rejects_unknown_store_target() {
        let text = "ir v1\nrecord R { x: data }\nobject r: R\nfunc f() {\n  %0 = stack_alloc\n  store r.y, %0\n}\n";
        assert!(matches!(parse_ir(text), Err(IrError::UnknownReference { .. })));
    }

    #[test]
    fn reports_line_numbers() {
        let text = "ir v1\nfunc f() {\n  %0 = frobnicate\n}\n";
        match parse_ir(text) {
            Err(IrError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}

mod points_to_analysis {
    use super::*;

    #[test]
    fn const_addr_resolves_to_const() {
        let p = fixture("objbind.ir");
        let pts = andersen_points_to(
            &p,
            "setup_const_and_stack",
            &IrValue::Name("0".to_string()),
        );
        assert_eq!(
            pts.into_iter().collect::<Vec<_>>(),
            vec![AbstractValue::Const("handler_a".to_string())]
        );
    }

    #[test]
    fn heap_alloc_resolves_to_fresh_site() {
        let p = fixture("objbind.ir");
        let pts = andersen_points_to(&p, "setup_heap", &IrValue::Name("2".to_string()));
        assert!(matches!(
            pts.into_iter().next(),
            Some(AbstractValue::HeapAddr { allocator, .. }) if allocator == "kmalloc"
        ));
    }

    #[test]
    fn interprocedural_rounds_expand_parameters() {
        // Hand-computed inclusion closure on a three-function program.
        let text = "ir v1\nfunc init_s1(p: fnptr) {\n}\nfunc a() {\n  %0 = const_addr @f1\n  call @init_s1(%0)\n}\nfunc b() {\n  %1 = stack_alloc\n  call @init_s1(%1)\n}\n";
        let p = parse_ir(text).unwrap();
        let pts = resolve_with_callers(&p, "init_s1", &IrValue::Name("p".to_string()), 5);
        let got: Vec<AbstractValue> = pts.into_iter().collect();
        assert_eq!(
            got,
            vec![
                AbstractValue::Const("f1".to_string()),
                AbstractValue::StackAddr {
                    func: "b".to_string(),
                    site: 0
                },
            ]
        );
    }

    #[test]
    fn check_accepts_only_fresh_origins() {
        let mut pts = PointsToSet::new();
        pts.insert(AbstractValue::Const("f".to_string()));
        assert!(check_pts(&pts));
        let mut params = PointsToSet::new();
        params.insert(AbstractValue::Param {
            func: "g".to_string(),
            index: 0,
        });
        assert!(!check_pts(&params));
        // Unknown is absorbing.
        pts.insert(AbstractValue::Unknown);
        assert!(!check_pts(&pts));
        assert!(!check_pts(&PointsToSet::new()));
    }
}

mod diversity_score {
    use super::*;

    #[test]
    fn running_example_scores_three() {
        let p = fixture("objbind.ir");
        let e = estimate_diversity_score(&p, "S1", "p", DEFAULT_DEPTH_CAP);
        assert_eq!(e.score, 3, "{e:#?}");
        let sites: Vec<&str> = e.contributing.iter().map(|s| s.function.as_str()).collect();
        assert_eq!(
            sites,
            vec!["setup_const_and_stack", "setup_const_and_stack", "setup_heap"]
        );
        assert!(!e.unresolved.is_empty(), "forwarded params stay unresolved");
    }

    #[test]
    fn single_constant_assignment_scores_one() {
        let text = "ir v1\nrecord R { p: fnptr }\nobject r: R\nfunc f() {\n  %0 = const_addr @g\n  store r.p, %0\n}\nfunc g() {\n}\n";
        let p = parse_ir(text).unwrap();
        assert_eq!(estimate_diversity_score(&p, "R", "p", 5).score, 1);
    }

    #[test]
    fn depth_cap_abandons_the_sixth_hop() {
        let p = fixture("depth6.ir");
        for cap in 1..=5 {
            assert_eq!(estimate_diversity_score(&p, "D", "p", cap).score, 0, "cap {cap}");
        }
        let capped = estimate_diversity_score(&p, "D", "p", 5);
        assert!(capped
            .unresolved
            .iter()
            .any(|s| s.what.contains("abandoned at depth cap")));
        // The same fixture with the cap lifted shows the abandoned score.
        assert_eq!(estimate_diversity_score(&p, "D", "p", 6).score, 1);
        assert_eq!(estimate_diversity_score(&p, "D", "p", 64).score, 1);
    }

    #[test]
    fn depth_cap_is_monotone() {
        let p = fixture("objbind.ir");
        let mut prev = 0;
        for cap in 1..=6 {
            let s = estimate_diversity_score(&p, "S1", "p", cap).score;
            assert!(s >= prev, "cap {cap}: {s} < {prev}");
            prev = s;
        }
    }

    #[test]
    fn mutually_dependent_records_terminate() {
        let text = "ir v1\nrecord A { p: fnptr }\nrecord B { q: fnptr }\nobject a: A\nobject b: B\nfunc f() {\n  store a.p, b.q\n  store b.q, a.p\n}\n";
        let p = parse_ir(text).unwrap();
        let e = estimate_diversity_score(&p, "A", "p", 5);
        assert_eq!(e.score, 0);
        assert!(e.diagnostics.iter().any(|d| d.contains("mutually dependent")));
    }

    #[test]
    fn full_report_is_deterministic() {
        let p = fixture("objbind.ir");
        let a = serde_json::to_string(&full_report(&p, 5)).unwrap();
        let b = serde_json::to_string(&full_report(&p, 5)).unwrap();
        assert_eq!(a, b);
    }
}

mod retbind {
    use super::*;

    #[test]
    fn release_pattern_qualifies() {
        let p = fixture("retbind.ir");
        let cands = find_retbind_candidates(&p);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].function, "ref_put");
        assert_eq!(cands[0].params, vec!["release".to_string()]);
        // client_a, client_b, and the wrapper call ref_put.
        assert_eq!(cands[0].call_sites, 3);
    }

    #[test]
    fn storing_without_invoking_does_not_qualify() {
        let p = fixture("retbind.ir");
        assert!(find_retbind_candidates(&p)
            .iter()
            .all(|c| c.function != "store_only"));
    }

    #[test]
    fn wrapper_chain_qualifies_only_at_the_invoking_end() {
        let p = fixture("retbind.ir");
        assert!(find_retbind_candidates(&p)
            .iter()
            .all(|c| c.function != "wrapper"));
    }
}

mod allowed {
    use super::*;

    fn site(kind: SiteKind, ctx: u64, count: u64) -> CorpusSite {
        CorpusSite {
            kind,
            ctx,
            count,
            owner: None,
            label: String::new(),
        }
    }

    #[test]
    fn two_uses_five_gens_allow_ten() {
        let corpus = ContextCorpus {
            sites: vec![site(SiteKind::Use, 7, 2), site(SiteKind::Gen, 7, 5)],
        };
        assert_eq!(allowed_targets(&corpus).get(&7), Some(&10));
    }

    #[test]
    fn no_uses_allow_nothing() {
        let corpus = ContextCorpus {
            sites: vec![site(SiteKind::Gen, 7, 5)],
        };
        assert_eq!(allowed_targets(&corpus).get(&7), Some(&0));
    }

    #[test]
    fn closed_form_matches_bruteforce_on_random_corpora() {
        for seed in 0..100u64 {
            let sites = synthetic_chains(seed, 50);
            for level in RefineLevel::ALL {
                let corpus = corpus_at(&sites, level);
                assert_eq!(
                    allowed_targets(&corpus),
                    allowed_targets_bruteforce(&corpus),
                    "seed {seed} level {level:?}"
                );
            }
        }
    }

    #[test]
    fn refinement_never_worsens_precision() {
        for seed in 0..100u64 {
            let sites = synthetic_chains(seed, 50);
            let mut prev_max = u64::MAX;
            let mut prev_le5 = -1.0f64;
            for level in RefineLevel::ALL {
                let corpus = corpus_at(&sites, level);
                let report = precision_report(&corpus, level.name());
                assert!(
                    report.allowed_targets.max <= prev_max,
                    "seed {seed} level {level:?}: max grew"
                );
                assert!(
                    report.allowed_targets.le5_share() >= prev_le5 - 1e-12,
                    "seed {seed} level {level:?}: <=5 share shrank"
                );
                prev_max = report.allowed_targets.max;
                prev_le5 = report.allowed_targets.le5_share();
            }
        }
    }

    #[test]
    fn unique_contexts_saturate_the_small_bucket() {
        let sites: Vec<CorpusSite> = (0..20)
            .flat_map(|i| {
                vec![
                    site(SiteKind::Gen, i, 1),
                    site(SiteKind::Use, i, 1),
                ]
            })
            .collect();
        let report = precision_report(&ContextCorpus { sites }, "typesig");
        assert_eq!(report.allowed_targets.le5_share(), 1.0);
        assert_eq!(report.allowed_targets.max, 1);
        assert_eq!(report.context_diversity.max, 1);
    }

    #[test]
    fn one_shared_context_dominates_the_large_bucket() {
        let corpus = ContextCorpus {
            sites: vec![site(SiteKind::Gen, 9, 300), site(SiteKind::Use, 9, 1)],
        };
        let report = precision_report(&corpus, "typesig");
        assert_eq!(report.allowed_targets.max, 300);
        assert_eq!(report.allowed_targets.gt100_share(), 1.0);
    }

    #[test]
    fn corpus_file_round_trips() {
        let sites = corpus_at(&synthetic_chains(3, 20), RefineLevel::ObjType);
        let json = sites.to_json();
        let back = ContextCorpus::from_json(&json).unwrap();
        assert_eq!(back.sites, sites.sites);
    }
}

mod annotation {
    use super::*;

    #[test]
    fn irq_pattern_binds_handler_to_name() {
        let p = fixture("obj.ir");
        let out = annotate(&p, 1, None);
        assert!(out.met, "{out:#?}");
        assert_eq!(out.annotations.len(), 1);
        assert_eq!(out.annotations[0].target, "IrqAction");
        assert_eq!(out.annotations[0].text, "objbind(name, handler)");
    }

    #[test]
    fn already_precise_corpora_need_nothing() {
        let p = fixture("obj.ir");
        let out = annotate(&p, 100, None);
        assert!(out.met);
        assert!(out.annotations.is_empty());
    }

    #[test]
    fn greedy_takes_the_higher_score_first_and_stops() {
        // Record A (score 5, five instances) allows 10 targets at the
        // owner-type level; record B (score 2) allows 2 and is already
        // fine. The level is reachable with one annotation: only A gets
        // it (greedy and exhaustive agree on this instance).
        let mut text = String::from("ir v1\n");
        text.push_str("record A { p: fnptr<a_sig>, tag: data }\n");
        text.push_str("record B { q: fnptr<b_sig>, tag: data }\n");
        text.push_str("object b0: B\n");
        for i in 0..5 {
            text.push_str(&format!("object a{i}: A\n"));
            text.push_str(&format!(
                "func seta{i}() {{\n  %0 = const_addr @fa{i}\n  store a{i}.p, %0\n}}\nfunc fa{i}() {{\n}}\n"
            ));
        }
        for i in 0..2 {
            text.push_str(&format!(
                "func setb{i}() {{\n  %0 = const_addr @fb{i}\n  store b0.q, %0\n}}\nfunc fb{i}() {{\n}}\n"
            ));
        }
        text.push_str("func usea() {\n  call a0.p()\n  call a1.p()\n}\n");
        text.push_str("func useb() {\n  call b0.q()\n}\n");
        let p = parse_ir(&text).unwrap();
        let out = annotate(&p, 5, None);
        assert!(out.met, "{out:#?}");
        let targets: Vec<&str> = out.annotations.iter().map(|a| a.target.as_str()).collect();
        assert_eq!(targets, vec!["A"]);
    }

    #[test]
    fn retbind_splits_calling_contexts() {
        let p = fixture("retbind.ir");
        // ref_put's parameter USE shares one typesig context with 3 GEN
        // args before annotation.
        let before = extract_corpus(&p, RefineLevel::ObjType);
        let worst_before = allowed_targets(&before).values().copied().max().unwrap();
        let after = extract_corpus(&p, RefineLevel::ObjBind);
        let worst_after = allowed_targets(&after).values().copied().max().unwrap();
        assert!(worst_after < worst_before, "{worst_before} -> {worst_after}");
        assert_eq!(worst_after, 1, "each calling context pairs 1:1");
    }

    #[test]
    fn low_diversity_records_are_reported_not_annotated() {
        // One store from a parameter (score 0) and a wide context.
        let text = "ir v1\nrecord R { p: fnptr }\nobject r: R\nfunc init(p: fnptr) {\n  store r.p, %p\n}\nfunc use0() {\n  call r.p()\n  call r.p()\n  call r.p()\n}\n";
        let p = parse_ir(text).unwrap();
        let out = annotate(&p, 1, None);
        assert!(!out.met);
        assert!(out.annotations.is_empty());
        assert!(out
            .residual
            .iter()
            .any(|r| r.reason.contains("diversity score too low")));
    }
}

mod correlation {
    use super::*;

    // Allowed-target rank and diversity-score rank correlate on corpora
    // with planted target counts: records in the top decile by allowed
    // targets land in the top quintile by score in at least 80% of trials.
    #[test]
    fn top_decile_lands_in_top_quintile() {
        let mut hits = 0u32;
        let mut total = 0u32;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_records = 20;
            let mut text = String::from("ir v1\n");
            let mut popularity = Vec::new();
            for r in 0..n_records {
                text.push_str(&format!("record R{r} {{ p: fnptr<sig{r}>, tag: data }}\n"));
                text.push_str(&format!("object o{r}: R{r}\n"));
                popularity.push(rng.gen_range(1..=12u32));
            }
            for (r, &pop) in popularity.iter().enumerate() {
                // pop constant stores (drives both score and GEN count),
                // pop uses with mild noise (drives allowed targets).
                for i in 0..pop {
                    text.push_str(&format!(
                        "func set{r}_{i}() {{\n  %0 = const_addr @h{r}_{i}\n  store o{r}.p, %0\n}}\nfunc h{r}_{i}() {{\n}}\n"
                    ));
                }
                let uses = (pop as i64 + rng.gen_range(-1i64..=1)).max(1) as u32;
                text.push_str(&format!("func use{r}() {{\n"));
                for _ in 0..uses {
                    text.push_str(&format!("  call o{r}.p()\n"));
                }
                text.push_str("}\n");
            }
            let p = parse_ir(&text).unwrap();
            let corpus = extract_corpus(&p, RefineLevel::ObjType);
            let allowed = allowed_targets(&corpus);
            // Per-record allowed targets and scores.
            let mut at: Vec<(String, u64)> = Vec::new();
            let mut ds: Vec<(String, u32)> = Vec::new();
            for r in 0..n_records {
                let name = format!("R{r}");
                let ctx = corpus
                    .sites
                    .iter()
                    .find(|s| s.owner.as_deref() == Some(name.as_str()))
                    .map(|s| s.ctx)
                    .unwrap();
                at.push((name.clone(), allowed.get(&ctx).copied().unwrap_or(0)));
                ds.push((
                    name,
                    estimate_diversity_score(&p, &format!("R{r}"), "p", 5).score,
                ));
            }
            at.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            ds.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let top_at: Vec<&String> = at.iter().take(n_records / 10).map(|(n, _)| n).collect();
            let top_ds: Vec<&String> = ds.iter().take(n_records / 5).map(|(n, _)| n).collect();
            for name in top_at {
                total += 1;
                if top_ds.contains(&name) {
                    hits += 1;
                }
            }
        }
        let rate = f64::from(hits) / f64::from(total);
        assert!(rate >= 0.8, "correlation rate {rate:.2} below 0.8");
    }
}
