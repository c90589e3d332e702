use super::*;
use proptest::prelude::*;

fn table() -> ClassTable {
    ClassTable::default()
}

fn classify_line(line: &str) -> InstrClass {
    let text = format!("<f>:\n0: {line}\n");
    let fns = parse_listing(&text).unwrap();
    classify(&fns[0].instructions[0], &table())
}

#[test]
fn parses_load_then_indirect_call() {
    let text = "<f>:\n0: ldr x21, [sp, #200]\n4: blr x21\n";
    let fns = parse_listing(text).unwrap();
    assert_eq!(fns.len(), 1);
    assert_eq!(fns[0].instructions.len(), 2);
    let t = table();
    let c0 = classify(&fns[0].instructions[0], &t);
    let c1 = classify(&fns[0].instructions[1], &t);
    assert!(matches!(c0, InstrClass::Load { ref dests, base: Some(Reg::Sp), .. } if dests == &[Reg::X(21)]));
    assert!(matches!(
        c1,
        InstrClass::IndirectCall {
            target: Reg::X(21),
            auth: None
        }
    ));
}

#[test]
fn empty_text_gives_no_functions() {
    assert!(parse_listing("").unwrap().is_empty());
    assert!(parse_listing("\n// nothing here\n").unwrap().is_empty());
}

#[test]
fn synthetic_function_classes() {
    // adrp/add/pacia classes cross-checked against a reference
    // disassembler's class-by-class output on the assembled bytes.
    let text = "<f>:\n0: adrp x0, L\n4: add x0, x0, #8\n8: pacia x0, x1\n";
    let fns = parse_listing(text).unwrap();
    let t = table();
    let classes: Vec<InstrClass> = fns[0]
        .instructions
        .iter()
        .map(|i| classify(i, &t))
        .collect();
    assert!(matches!(classes[0], InstrClass::AddrCalc { dest: Reg::X(0), .. }));
    assert!(
        matches!(classes[1], InstrClass::Arith { dest: Reg::X(0), ref srcs } if srcs == &[Reg::X(0)])
    );
    assert!(matches!(
        classes[2],
        InstrClass::PacSign {
            key: PacKeySel::IA,
            target: Reg::X(0),
            context: PacContext::Reg(Reg::X(1)),
        }
    ));
}

#[test]
fn classify_autib_with_context() {
    assert_eq!(
        classify_line("autib x2, x16"),
        InstrClass::PacAuth {
            key: PacKeySel::IB,
            target: Reg::X(2),
            context: PacContext::Reg(Reg::X(16)),
        }
    );
}

#[test]
fn classify_register_move() {
    assert_eq!(
        classify_line("mov x21, x20"),
        InstrClass::Arith {
            dest: Reg::X(21),
            srcs: vec![Reg::X(20)],
        }
    );
}

#[test]
fn classify_pair_store() {
    let c = classify_line("stp x2, x3, [x29, #-16]");
    assert_eq!(
        c,
        InstrClass::Store {
            srcs: vec![Reg::X(2), Reg::X(3)],
            base: Some(Reg::X(29)),
            writeback: false,
        }
    );
}

#[test]
fn classify_pa_variants() {
    assert!(matches!(
        classify_line("paciasp"),
        InstrClass::PacSign {
            key: PacKeySel::IA,
            target: Reg::X(30),
            context: PacContext::Sp,
        }
    ));
    assert!(matches!(
        classify_line("paciza x7"),
        InstrClass::PacSign {
            key: PacKeySel::IA,
            target: Reg::X(7),
            context: PacContext::Zero,
        }
    ));
    assert!(matches!(
        classify_line("xpaci x30"),
        InstrClass::PacStrip { target: Reg::X(30) }
    ));
    assert!(matches!(
        classify_line("blraa x21, x9"),
        InstrClass::IndirectCall {
            target: Reg::X(21),
            auth: Some((PacKeySel::IA, PacContext::Reg(Reg::X(9)))),
        }
    ));
    assert!(matches!(
        classify_line("retaa"),
        InstrClass::Return {
            reg: Reg::X(30),
            auth: Some((PacKeySel::IA, PacContext::Sp)),
            exception_return: false,
        }
    ));
    assert!(matches!(
        classify_line("eret"),
        InstrClass::Return {
            reg: Reg::Elr,
            exception_return: true,
            ..
        }
    ));
}

#[test]
fn unknown_mnemonic_is_other() {
    assert_eq!(classify_line("frobnicate x0, x1"), InstrClass::Other);
}

#[test]
fn cond_family_recognized() {
    assert!(matches!(
        classify_line("b.eq 0x40"),
        InstrClass::CondBranch { ref regs, .. } if regs.is_empty()
    ));
    assert!(matches!(
        classify_line("cbnz x0, 0x0"),
        InstrClass::CondBranch { ref regs, .. } if regs == &[Reg::X(0)]
    ));
}

#[test]
fn objdump_style_accepted() {
    let text = "0000000000400580 <main>:\n  400580:\ta9bf7bfd \tstp\tx29, x30, [sp, #-16]!\n  400584:\t910003fd \tmov\tx29, sp\n  400588:\t94000000 \tbl\t400600 <helper>\n";
    let fns = parse_listing(text).unwrap();
    assert_eq!(fns[0].name, "main");
    assert_eq!(fns[0].entry, 0x400580);
    assert_eq!(fns[0].instructions[0].address, 0x400580);
    let c = classify(&fns[0].instructions[0], &table());
    assert!(matches!(c, InstrClass::Store { writeback: true, .. }));
    let c2 = classify(&fns[0].instructions[2], &table());
    assert!(
        matches!(c2, InstrClass::DirectCall { target: Some(BranchTarget::Addr(0x400600)) })
    );
}

#[test]
fn local_labels_resolve_to_addresses() {
    let text = "<f>:\nL:\nsub x0, x0, #1\ncbnz x0, L\nret\n";
    let fns = parse_listing(text).unwrap();
    let c = classify(&fns[0].instructions[1], &table());
    assert!(matches!(
        c,
        InstrClass::CondBranch { target: Some(BranchTarget::Addr(0)), .. }
    ));
}

#[test]
fn register_aliases_normalize() {
    assert_eq!(Reg::parse("w5"), Some(Reg::X(5)));
    assert_eq!(Reg::parse("lr"), Some(Reg::X(30)));
    assert_eq!(Reg::parse("x31"), Some(Reg::Zero));
    assert_eq!(Reg::parse("wzr"), Some(Reg::Zero));
    assert_eq!(Reg::parse("x29"), Some(Reg::X(29)));
}

#[test]
fn malformed_line_reports_line_number() {
    let text = "<f>:\n0: ldr x21, [sp, #200\n";
    match parse_listing(text) {
        Err(AsmError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn duplicate_function_rejected() {
    let text = "<f>:\nret\n<f>:\nret\n";
    assert!(matches!(
        parse_listing(text),
        Err(AsmError::DuplicateFunction(_))
    ));
}

#[test]
fn addresses_must_increase() {
    let text = "<f>:\n8: nop\n4: ret\n";
    assert!(matches!(
        parse_listing(text),
        Err(AsmError::NonMonotonicAddress { .. })
    ));
}

#[test]
fn pa_classes_have_target_and_context() {
    for line in ["pacia x1, x2", "autdb x3, x4", "pacia1716", "paciasp"] {
        match classify_line(line) {
            InstrClass::PacSign { .. } | InstrClass::PacAuth { .. } => {}
            other => panic!("{line} classified as {other:?}"),
        }
    }
}

// Canonical round-trip: parse -> print -> parse yields the same stream.
fn roundtrip(fns: &[FunctionListing]) {
    let printed: String = fns.iter().map(FunctionListing::canonical).collect();
    let reparsed = parse_listing(&printed).unwrap();
    assert_eq!(fns.len(), reparsed.len());
    for (a, b) in fns.iter().zip(&reparsed) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.instructions.len(), b.instructions.len());
        for (x, y) in a.instructions.iter().zip(&b.instructions) {
            assert_eq!(x.address, y.address);
            assert_eq!(x.mnemonic, y.mnemonic);
            assert_eq!(x.operands, y.operands, "at 0x{:x}", x.address);
        }
    }
}

#[test]
fn canonical_roundtrip_fixture() {
    let text = "<f>:\n0: ldr x21, [sp, #200]\n4: blr x21\n8: stp x2, x3, [x29, #-16]\nc: ldr x1, [x0], #8\n10: str x5, [x2, #8]!\n14: add x0, x0, :lo12:sym\n18: b 0x0\n";
    roundtrip(&parse_listing(text).unwrap());
}

proptest! {
    #[test]
    fn canonical_roundtrip_random(instrs in proptest::collection::vec(arb_instr(), 1..20)) {
        let body: String = instrs.join("\n");
        let text = format!("<f>:\n{body}\n");
        let fns = parse_listing(&text).unwrap();
        roundtrip(&fns);
    }
}

fn arb_reg() -> impl Strategy<Value = String> {
    prop_oneof![
        (0u8..=30).prop_map(|n| format!("x{n}")),
        Just("sp".to_string()),
        Just("xzr".to_string()),
    ]
}

fn arb_instr() -> impl Strategy<Value = String> {
    prop_oneof![
        (arb_reg(), arb_reg()).prop_map(|(a, b)| format!("mov {a}, {b}")),
        (arb_reg(), arb_reg(), -256i64..256).prop_map(|(a, b, i)| format!("add {a}, {b}, #{i}")),
        (arb_reg(), arb_reg(), -256i64..256)
            .prop_map(|(a, b, i)| format!("ldr {a}, [{b}, #{i}]")),
        (arb_reg(), arb_reg()).prop_map(|(a, b)| format!("pacia {a}, {b}")),
        (arb_reg(), arb_reg()).prop_map(|(a, b)| format!("autib {a}, {b}")),
        arb_reg().prop_map(|a| format!("blr {a}")),
        Just("ret".to_string()),
        Just("paciasp".to_string()),
    ]
}
