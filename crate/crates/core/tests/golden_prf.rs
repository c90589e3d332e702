//! Golden-vector checks for the PAC PRF and the pointer embedding.
//!
//! The vector file was generated once against an independent SipHash-2-4
//! reference implementation and is frozen; any drift in the PRF or the
//! embedding layout fails here.

use pauthkit::pa::{pac_sign, KeyRole, PaKey, PointerLayout};

fn parse_u64(tok: &str) -> u64 {
    let tok = tok.strip_prefix("0x").unwrap_or(tok);
    u64::from_str_radix(tok, 16).unwrap()
}

#[test]
fn frozen_prf_vectors() {
    let text = include_str!("../fixtures/prf_golden.txt");
    let mut checked = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols.len(), 4, "bad vector line: {line}");
        let key = PaKey::from_seed(KeyRole::Apib, parse_u64(cols[0]));
        let got = key.compute(parse_u64(cols[1]), parse_u64(cols[2]));
        assert_eq!(got, parse_u64(cols[3]), "vector: {line}");
        checked += 1;
    }
    assert_eq!(checked, 10);
}

#[test]
fn frozen_signed_pointer() {
    // sign(0x0000_7fff_0000_1000, ctx=0x42) under the fixed seed key,
    // default 48/15 layout; value frozen from the reference PRF run.
    let layout = PointerLayout::default();
    let key = PaKey::from_seed(KeyRole::Apib, 0xfeed);
    let signed = pac_sign(&layout, 0x0000_7fff_0000_1000, 0x42, &key).unwrap();
    assert_eq!(signed.value, 0xc166_7fff_0000_1000);
}
