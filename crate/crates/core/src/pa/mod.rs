//! Bit-exact executable model of ARM pointer authentication.
//!
//! Pointers carry their authentication code in the extension bits above the
//! virtual-address range, excluding the address-space selector bit. Signing
//! embeds a truncated keyed PRF of (pointer, context); authentication
//! restores the canonical pointer on a match and flips an error bit on a
//! mismatch — the trap happens at *use*, when a non-canonical value reaches
//! an indirect branch.

pub mod backoff;
pub mod chain;
mod prf;

pub use prf::{prf_pair, siphash24};

use std::fmt;

use serde::ser::{Serialize, Serializer};
use thiserror::Error;

/// Fixed key for non-secret, deterministic hashing (type-signature hashes,
/// context-id derivation). Not a PA key.
const STABLE_HASH_KEY: [u8; 16] = *b"pauthkit-stable!";

/// Deterministic 64-bit hash for analysis-domain identifiers.
pub fn stable_hash64(data: &[u8]) -> u64 {
    siphash24(&STABLE_HASH_KEY, data)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PaError {
    #[error("signing input 0x{0:x} is not canonical (already signed or corrupt)")]
    NonCanonicalSignInput(u64),
    #[error("authentication failure trapped (FPAC) for 0x{0:x}")]
    AuthTrap(u64),
    #[error("branch to non-canonical pointer 0x{0:x} faults")]
    NonCanonicalBranch(u64),
    #[error("invalid pointer layout: {0}")]
    BadLayout(String),
}

/// Bit layout of signed pointers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointerLayout {
    pub va_bits: u8,
    pub pac_bits: u8,
    /// Address-space selector bit, preserved across signing.
    pub selector_bit: u8,
    /// Bit flipped on authentication failure.
    pub error_bit: u8,
    /// EnhancedPAC2: fold the PAC over the extension bits with XOR instead
    /// of overwriting them.
    pub enhanced_pac2: bool,
    /// FPAC: trap at authentication instead of poisoning the pointer.
    pub fpac: bool,
}

impl Default for PointerLayout {
    fn default() -> Self {
        PointerLayout {
            va_bits: 48,
            pac_bits: 15,
            selector_bit: 55,
            error_bit: 62,
            enhanced_pac2: false,
            fpac: false,
        }
    }
}

impl PointerLayout {
    pub fn new(va_bits: u8, pac_bits: u8) -> Result<Self, PaError> {
        let layout = PointerLayout {
            va_bits,
            pac_bits,
            ..Default::default()
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), PaError> {
        if self.va_bits == 0 || self.va_bits > 55 {
            return Err(PaError::BadLayout(format!("va_bits {} out of range", self.va_bits)));
        }
        if u32::from(self.va_bits) + u32::from(self.pac_bits) > 63 {
            return Err(PaError::BadLayout(format!(
                "va_bits {} + pac_bits {} exceeds 63",
                self.va_bits, self.pac_bits
            )));
        }
        let avail = (u32::from(self.va_bits)..64)
            .filter(|&b| b != u32::from(self.selector_bit))
            .count() as u8;
        if self.pac_bits > avail {
            return Err(PaError::BadLayout(format!(
                "pac_bits {} does not fit above va_bits {}",
                self.pac_bits, self.va_bits
            )));
        }
        if self.error_bit < self.va_bits || self.error_bit > 63 || self.error_bit == self.selector_bit
        {
            return Err(PaError::BadLayout(format!("error bit {} invalid", self.error_bit)));
        }
        Ok(())
    }

    /// Bit positions carrying the PAC: above the VA range, skipping the
    /// selector bit, lowest first.
    fn pac_positions(&self) -> impl Iterator<Item = u8> + '_ {
        (self.va_bits..64)
            .filter(move |&b| b != self.selector_bit)
            .take(self.pac_bits as usize)
    }

    fn spread(&self, pac: u64) -> u64 {
        let mut out = 0u64;
        for (i, pos) in self.pac_positions().enumerate() {
            out |= ((pac >> i) & 1) << pos;
        }
        out
    }

    fn extract(&self, value: u64) -> u64 {
        let mut out = 0u64;
        for (i, pos) in self.pac_positions().enumerate() {
            out |= ((value >> pos) & 1) << i;
        }
        out
    }

    pub fn pac_mask(&self) -> u64 {
        self.spread(u64::MAX)
    }

    /// True iff the value is sign-extended from the top VA bit.
    pub fn is_canonical(&self, value: u64) -> bool {
        let ext = (value >> (self.va_bits - 1)) & 1;
        let upper = value >> self.va_bits;
        let full = (1u64 << (64 - self.va_bits)) - 1;
        if ext == 1 {
            upper == full
        } else {
            upper == 0
        }
    }

    /// Restore the extension bits from the selector bit, dropping any
    /// embedded PAC or error bits. Address bits are untouched.
    pub fn canonicalize(&self, value: u64) -> u64 {
        let selected = (value >> self.selector_bit) & 1;
        let low_mask = (1u64 << self.va_bits) - 1;
        let low = value & low_mask;
        if selected == 1 {
            low | !low_mask
        } else {
            low
        }
    }
}

/// PA key role registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum KeyRole {
    Apia,
    Apib,
    Apda,
    Apdb,
    Apga,
}

/// A 128-bit PA key. Key material is never serialized: the `Serialize`
/// implementation rejects the type, and `Debug` redacts it.
#[derive(Clone, PartialEq, Eq)]
pub struct PaKey {
    pub role: KeyRole,
    material: [u8; 16],
}

impl fmt::Debug for PaKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PaKey({:?}, <redacted>)", self.role)
    }
}

impl Serialize for PaKey {
    fn serialize<S: Serializer>(&self, _: S) -> Result<S::Ok, S::Error> {
        Err(serde::ser::Error::custom(
            "PA key material must never be serialized",
        ))
    }
}

impl PaKey {
    pub fn new(role: KeyRole, material: [u8; 16]) -> Self {
        PaKey { role, material }
    }

    /// Derive deterministic key material from a seed (test and simulator
    /// use; real keys come from boot-time randomness).
    pub fn from_seed(role: KeyRole, seed: u64) -> Self {
        let mut material = [0u8; 16];
        let mut x = seed ^ 0x5851_f42d_4c95_7f2d;
        for chunk in material.chunks_mut(8) {
            // splitmix64 step
            x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = x;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        PaKey { role, material }
    }

    /// Bitwise complement of the key material, in place semantics: the
    /// original key is recovered by inverting again. User-space signing
    /// operates on the inverted view; the original never leaves registers.
    pub fn invert(&self) -> PaKey {
        let mut material = self.material;
        for b in &mut material {
            *b = !*b;
        }
        PaKey {
            role: self.role,
            material,
        }
    }

    /// The key view handed to user space under the kernel/user split.
    pub fn user_view(&self) -> PaKey {
        self.invert()
    }

    pub(crate) fn material(&self) -> &[u8; 16] {
        &self.material
    }

    /// Raw PRF over (value, context) under this key; the computation behind
    /// every PAC. Full 64-bit output, no pointer embedding.
    pub fn compute(&self, value: u64, context: u64) -> u64 {
        prf_pair(&self.material, value, context)
    }
}

/// Model-level provenance of a pointer value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Provenance {
    Raw,
    Signed,
    Error,
}

/// A 64-bit pointer with its model provenance tag. The tag is bookkeeping
/// for tests and the simulator; all checks operate on the value itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SignedPointer {
    pub value: u64,
    pub provenance: Provenance,
}

impl SignedPointer {
    pub fn raw(value: u64) -> Self {
        SignedPointer {
            value,
            provenance: Provenance::Raw,
        }
    }
}

/// Sign a canonical pointer under (context, key), embedding the PAC.
pub fn pac_sign(
    layout: &PointerLayout,
    ptr: u64,
    ctx: u64,
    key: &PaKey,
) -> Result<SignedPointer, PaError> {
    if !layout.is_canonical(ptr) {
        // Signing an already-signed pointer produces garbage on hardware;
        // the model surfaces it instead.
        return Err(PaError::NonCanonicalSignInput(ptr));
    }
    let pac = key.compute(ptr, ctx) & ((1u64 << layout.pac_bits) - 1);
    let value = if layout.enhanced_pac2 {
        ptr ^ layout.spread(pac)
    } else {
        (ptr & !layout.pac_mask()) | layout.spread(pac)
    };
    Ok(SignedPointer {
        value,
        provenance: Provenance::Signed,
    })
}

/// Authenticate a signed pointer. On a PAC match the canonical pointer is
/// restored; on a mismatch the restored pointer carries a flipped error bit
/// and *later use* faults. With FPAC enabled the failure traps here.
pub fn pac_auth(
    layout: &PointerLayout,
    sp: SignedPointer,
    ctx: u64,
    key: &PaKey,
) -> Result<SignedPointer, PaError> {
    let candidate = layout.canonicalize(sp.value);
    let expected = key.compute(candidate, ctx) & ((1u64 << layout.pac_bits) - 1);
    let actual = if layout.enhanced_pac2 {
        layout.extract(sp.value ^ candidate)
    } else {
        layout.extract(sp.value)
    };
    if expected == actual {
        Ok(SignedPointer {
            value: candidate,
            provenance: Provenance::Raw,
        })
    } else if layout.fpac {
        Err(PaError::AuthTrap(sp.value))
    } else {
        Ok(SignedPointer {
            value: candidate ^ (1u64 << layout.error_bit),
            provenance: Provenance::Error,
        })
    }
}

/// Strip the PAC without any authenticity check.
pub fn xpac_strip(layout: &PointerLayout, sp: SignedPointer) -> SignedPointer {
    SignedPointer {
        value: layout.canonicalize(sp.value),
        provenance: Provenance::Raw,
    }
}

/// Consume a pointer as a branch target: canonical values branch, anything
/// else (embedded PAC, error bit) raises.
pub fn branch_to(layout: &PointerLayout, sp: SignedPointer) -> Result<u64, PaError> {
    if layout.is_canonical(sp.value) {
        Ok(sp.value)
    } else {
        Err(PaError::NonCanonicalBranch(sp.value))
    }
}

/// Backward-edge context: the stack pointer with the function-name hash
/// inserted into its unused top 16 bits (the `bfi` composition used by
/// instrumented prologues).
pub fn return_context(sp: u64, fname_hash: u64) -> u64 {
    (sp & 0x0000_ffff_ffff_ffff) | ((fname_hash & 0xffff) << 48)
}

/// Sign a return address bound to (stack frame, function). Replay across
/// functions or stack layouts changes the context and fails authentication.
pub fn sign_return(
    layout: &PointerLayout,
    ret_addr: u64,
    sp: u64,
    fname_hash: u64,
    key: &PaKey,
) -> Result<SignedPointer, PaError> {
    pac_sign(layout, ret_addr, return_context(sp, fname_hash), key)
}

pub fn auth_return(
    layout: &PointerLayout,
    sp_ptr: SignedPointer,
    sp: u64,
    fname_hash: u64,
    key: &PaKey,
) -> Result<SignedPointer, PaError> {
    pac_auth(layout, sp_ptr, return_context(sp, fname_hash), key)
}

#[cfg(test)]
mod tests;
