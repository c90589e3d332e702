use super::chain::*;
use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layout() -> PointerLayout {
    PointerLayout::default()
}

fn key() -> PaKey {
    PaKey::from_seed(KeyRole::Apib, 0xfeed)
}

fn canonical_ptr(rng: &mut impl Rng, layout: &PointerLayout) -> u64 {
    let low = rng.gen::<u64>() & ((1u64 << layout.va_bits) - 1);
    layout.canonicalize(if rng.gen::<bool>() {
        low | (1 << layout.selector_bit) | (1 << (layout.va_bits - 1))
    } else {
        low & !(1u64 << (layout.va_bits - 1))
    })
}

#[test]
fn sign_then_auth_round_trips() {
    let (l, k) = (layout(), key());
    let p = 0x0000_7fff_0000_1000;
    let signed = pac_sign(&l, p, 0x42, &k).unwrap();
    assert_eq!(signed.provenance, Provenance::Signed);
    let restored = pac_auth(&l, signed, 0x42, &k).unwrap();
    assert_eq!(restored.value, p);
    assert_eq!(restored.provenance, Provenance::Raw);
}

#[test]
fn zero_context_matches_explicit_zero() {
    // The paciza form is sign with context 0 for the same key.
    let (l, k) = (layout(), key());
    let p = 0xffff_8000_0420_0000u64;
    assert!(l.is_canonical(p));
    let a = pac_sign(&l, p, 0, &k).unwrap();
    let b = pac_sign(&l, p, 0, &k).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wrong_context_sets_error_bit_and_use_faults() {
    let (l, k) = (layout(), key());
    let p = 0x0000_7fff_0000_1000;
    let signed = pac_sign(&l, p, 0x42, &k).unwrap();
    let poisoned = pac_auth(&l, signed, 0x43, &k).unwrap();
    assert_eq!(poisoned.provenance, Provenance::Error);
    assert_eq!(poisoned.value, p ^ (1 << l.error_bit));
    assert!(!l.is_canonical(poisoned.value));
    // No trap at auth; the fault happens at use.
    assert_eq!(
        branch_to(&l, poisoned),
        Err(PaError::NonCanonicalBranch(poisoned.value))
    );
}

#[test]
fn replay_at_different_site_with_same_context_succeeds() {
    // This is the replaying-attack surface: any use site sharing (ctx, key)
    // accepts the leaked pointer.
    let (l, k) = (layout(), key());
    let signed = pac_sign(&l, 0x0000_7fff_0000_1000, 0x42, &k).unwrap();
    let at_other_site = pac_auth(&l, signed, 0x42, &k).unwrap();
    assert_eq!(at_other_site.provenance, Provenance::Raw);
    assert!(branch_to(&l, at_other_site).is_ok());
}

#[test]
fn signing_non_canonical_input_is_surfaced() {
    let (l, k) = (layout(), key());
    let signed = pac_sign(&l, 0x0000_7fff_0000_1000, 0, &k).unwrap();
    assert_eq!(
        pac_sign(&l, signed.value, 0, &k),
        Err(PaError::NonCanonicalSignInput(signed.value))
    );
}

#[test]
fn strip_restores_canonical_form() {
    let (l, k) = (layout(), key());
    let p = 0xffff_8000_0042_0000u64;
    let signed = pac_sign(&l, p, 7, &k).unwrap();
    assert_eq!(xpac_strip(&l, signed).value, p);
    assert_eq!(xpac_strip(&l, SignedPointer::raw(p)).value, p);
    // Bit-mask arithmetic: stripping an error-bit pointer clears the error.
    let poisoned = pac_auth(&l, signed, 8, &k).unwrap();
    assert_eq!(xpac_strip(&l, poisoned).value, p);
}

#[test]
fn branch_semantics() {
    let (l, k) = (layout(), key());
    let p = 0x0000_7fff_0000_2000;
    assert_eq!(branch_to(&l, SignedPointer::raw(p)), Ok(p));
    let signed = pac_sign(&l, p, 1, &k).unwrap();
    // Signed-but-unauthenticated values are non-canonical and fault,
    // except for the 2^-pac_bits case where the PAC equals the extension.
    if signed.value != p {
        assert!(branch_to(&l, signed).is_err());
    }
}

#[test]
fn fpac_traps_at_auth() {
    let mut l = layout();
    l.fpac = true;
    let k = key();
    let signed = pac_sign(&l, 0x1000, 1, &k).unwrap();
    assert_eq!(
        pac_auth(&l, signed, 2, &k),
        Err(PaError::AuthTrap(signed.value))
    );
}

#[test]
fn enhanced_pac2_round_trips() {
    let mut l = layout();
    l.enhanced_pac2 = true;
    let k = key();
    for p in [0x0000_7fff_0000_1000u64, 0xffff_8000_0042_0000u64] {
        let signed = pac_sign(&l, p, 5, &k).unwrap();
        assert_eq!(pac_auth(&l, signed, 5, &k).unwrap().value, p);
        let bad = pac_auth(&l, signed, 6, &k).unwrap();
        assert_eq!(bad.provenance, Provenance::Error);
    }
}

#[test]
fn key_inversion_is_involutive_and_splits_domains() {
    let k = key();
    assert_eq!(k.invert().invert(), k);
    // Signing under the kernel key does not verify under the user view.
    let l = layout();
    let p = 0x0000_7fff_0000_3000;
    let signed = pac_sign(&l, p, 9, &k).unwrap();
    let r = pac_auth(&l, signed, 9, &k.user_view()).unwrap();
    assert_eq!(r.provenance, Provenance::Error);
}

#[test]
fn key_material_never_serializes() {
    let k = key();
    assert!(serde_json::to_string(&k).is_err());
}

#[test]
fn key_debug_is_redacted() {
    let k = PaKey::from_seed(KeyRole::Apia, 1);
    let dbg = format!("{k:?}");
    assert!(dbg.contains("redacted"));
    let hex: String = k.material().iter().map(|b| format!("{b:02x}")).collect();
    assert!(!dbg.contains(&hex));
}

#[test]
fn return_address_binding() {
    let (l, k) = (layout(), key());
    let ret = 0xffff_8000_0010_0000u64;
    let sp = 0xffff_8000_7f00_0000u64;
    let h = stable_hash64(b"vfs_read");
    let signed = sign_return(&l, ret, sp, h, &k).unwrap();
    // Round trip with the same (sp, fname).
    assert_eq!(auth_return(&l, signed, sp, h, &k).unwrap().value, ret);
    // Same sp, different function: cross-function replay blocked.
    let h2 = stable_hash64(b"vfs_write");
    assert_eq!(
        auth_return(&l, signed, sp, h2, &k).unwrap().provenance,
        Provenance::Error
    );
    // Same function, different frame.
    assert_eq!(
        auth_return(&l, signed, sp + 0x40, h, &k).unwrap().provenance,
        Provenance::Error
    );
}

#[test]
fn chain_round_trip_and_tamper_detection() {
    let k = key();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let regs: [u64; 31] = core::array::from_fn(|_| rng.gen());
    let mut pc = PreemptionContext::new(regs, rng.gen(), rng.gen(), 0xffff_8000_0100_0000);
    chain_sign_context(&mut pc, 1234, &k);
    assert!(chain_verify_context(&pc, 1234, &k));

    // Exhaustive single-bit-flip sweep over a register subset.
    for reg in 0..4 {
        for bit in 0..64 {
            let mut tampered = pc.clone();
            tampered.regs[reg] ^= 1u64 << bit;
            assert!(!chain_verify_context(&tampered, 1234, &k));
        }
    }

    // Whole-context replay under a new timestamp fails (timebind).
    assert!(!chain_verify_context(&pc, 1235, &k));
}

#[test]
fn chain_is_order_sensitive() {
    let k = key();
    let mut regs = [0u64; 31];
    regs[3] = 0xaaaa;
    regs[4] = 0xbbbb;
    let mut pc = PreemptionContext::new(regs, 1, 2, 0x1000);
    chain_sign_context(&mut pc, 7, &k);
    let mut swapped = pc.clone();
    swapped.regs.swap(3, 4);
    assert!(!chain_verify_context(&swapped, 7, &k));
}

#[test]
fn base_only_chain_verifies_across_timestamps() {
    // The weakness timebind closes: base-only signatures are time-invariant.
    let k = key();
    let mut pc = PreemptionContext::new([7u64; 31], 1, 2, 0x2000);
    chain_sign_base_only(&mut pc, &k);
    assert!(chain_verify_base_only(&pc, &k));
    let replayed = pc.clone();
    assert!(chain_verify_base_only(&replayed, &k));
}

#[test]
fn per_register_signatures_allow_selective_swap() {
    let k = key();
    let base = 0x3000;
    let victim = PreemptionContext::new([1u64; 31], 0, 0, base);
    let sigs_v = per_register_sign(&victim, &k);
    let mut attacker = victim.clone();
    attacker.regs[30] = 0xdead; // chain_values index 2 is x30
    let sigs_a = per_register_sign(&attacker, &k);
    // Splice the attacker's (value, sig) pair into the victim context.
    let mut forged = victim.clone();
    let mut forged_sigs = sigs_v.clone();
    forged.regs[30] = attacker.regs[30];
    forged_sigs[2] = sigs_a[2];
    assert!(per_register_verify(&forged, &forged_sigs, &k));
}

#[test]
fn chained_signatures_block_selective_swap() {
    let k = key();
    let mut victim = PreemptionContext::new([1u64; 31], 0, 0, 0x3000);
    chain_sign_base_only(&mut victim, &k);
    let mut attacker = victim.clone();
    attacker.regs[30] = 0xdead;
    chain_sign_base_only(&mut attacker, &k);
    let mut forged = victim.clone();
    forged.regs[30] = 0xdead;
    // Neither signature fits the spliced register file.
    assert!(!chain_verify_base_only(&forged, &k));
    forged.pac = attacker.pac;
    let mut fully_swapped = forged.clone();
    fully_swapped.regs = attacker.regs;
    assert!(chain_verify_base_only(&fully_swapped, &k));
    fully_swapped.regs[0] = victim.regs[0];
    fully_swapped.regs[30] = 0xdead;
    assert!(chain_verify_base_only(&fully_swapped, &k)); // regs identical here
}

proptest! {
    // auth(sign(p, c, k), c, k) == p for canonical p.
    #[test]
    fn round_trip_property(low in 0u64..(1u64 << 47), high in proptest::bool::ANY, ctx in proptest::num::u64::ANY, seed in proptest::num::u64::ANY) {
        let l = PointerLayout::default();
        let k = PaKey::from_seed(KeyRole::Apia, seed);
        let p = if high { low | !((1u64 << 48) - 1) | (1 << 47) } else { low };
        prop_assume!(l.is_canonical(p));
        let signed = pac_sign(&l, p, ctx, &k).unwrap();
        let restored = pac_auth(&l, signed, ctx, &k).unwrap();
        prop_assert_eq!(restored.value, p);
        prop_assert_eq!(restored.provenance, Provenance::Raw);
    }
}

#[test]
fn randomized_round_trip_and_collision_rate() {
    // 10^5 random triples for the identity; collisions counted against the
    // 2^-15 rate within 3 sigma.
    let l = layout();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE55);
    let trials = 100_000u32;
    let mut collisions = 0u32;
    for _ in 0..trials {
        let k = PaKey::from_seed(KeyRole::Apib, rng.gen());
        let p = canonical_ptr(&mut rng, &l);
        let c1: u64 = rng.gen();
        let c2: u64 = rng.gen();
        let signed = pac_sign(&l, p, c1, &k).unwrap();
        let ok = pac_auth(&l, signed, c1, &k).unwrap();
        assert_eq!(ok.value, p);
        if c1 != c2 {
            let other = pac_auth(&l, signed, c2, &k).unwrap();
            if other.provenance == Provenance::Raw {
                collisions += 1;
            }
        }
    }
    let expected = f64::from(trials) / f64::from(1u32 << 15);
    let sigma = (f64::from(trials) * (1.0 / f64::from(1u32 << 15))).sqrt();
    let lo = (expected - 3.0 * sigma).max(0.0);
    let hi = expected + 3.0 * sigma;
    let got = f64::from(collisions);
    assert!(
        got >= lo && got <= hi,
        "collision count {collisions} outside [{lo:.1}, {hi:.1}]"
    );
}
