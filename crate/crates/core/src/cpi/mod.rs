// SPDX-License-Identifier: Apache-2.0

//! Code-pointer integrity: function-pointer backup into pointer-integrity
//! memory (PIM) with slot-index tagging and 64-bit type identifiers, plus
//! the per-thread shadow stack for return addresses.
//!
//! Tag layout: bits 63:48 of a pointer value hold the PIM slot index and
//! bits 47:0 the code address. Index `0xFFFF` is the reserved untagged
//! sentinel, so a value's tag state is always decidable from its bits.

pub mod pass;
pub mod program;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::Shake128;

/// Untagged sentinel in the index bits.
pub const UNTAGGED_INDEX: u16 = 0xFFFF;
/// Mask of the 48 address bits.
pub const ADDR_MASK: u64 = 0x0000_FFFF_FFFF_FFFF;
/// Default PIM capacity in slots, scenario-overridable.
pub const DEFAULT_PIM_CAPACITY: u32 = 4096;
/// Bytes per PIM entry: backed-up address plus type id.
pub const PIM_ENTRY_BYTES: u64 = 16;

/// Canonicalizes a signature: ASCII whitespace is stripped so the hashed
/// text is exactly the IR-level `ret(params)` form.
pub fn canonical_signature(raw: &str) -> String {
    raw.chars().filter(|c| !c.is_ascii_whitespace()).collect()
}

/// 64-bit type identifier of a canonical signature: the first 8 bytes of
/// the SHAKE-128 digest, interpreted big-endian.
pub fn type_id(signature: &str) -> u64 {
    let canon = canonical_signature(signature);
    debug_assert!(!canon.is_empty(), "empty signature");
    let mut hasher = Shake128::default();
    hasher.update(canon.as_bytes());
    let mut out = [0u8; 8];
    hasher.finalize_xof().read(&mut out);
    u64::from_be_bytes(out)
}

/// A 64-bit function-pointer value with the slot index in the high bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaggedFnPtr(pub u64);

impl TaggedFnPtr {
    /// An untagged pointer: sentinel index plus the 48-bit address.
    pub fn untagged(addr: u64) -> TaggedFnPtr {
        TaggedFnPtr((UNTAGGED_INDEX as u64) << 48 | (addr & ADDR_MASK))
    }

    /// Stamps `addr` with a slot index. `index` must be below the sentinel.
    pub fn tagged(addr: u64, index: u16) -> TaggedFnPtr {
        debug_assert!(index != UNTAGGED_INDEX);
        TaggedFnPtr((index as u64) << 48 | (addr & ADDR_MASK))
    }

    /// The 48-bit code address.
    pub fn addr(self) -> u64 {
        self.0 & ADDR_MASK
    }

    /// The slot index, `None` when the value carries the untagged sentinel.
    pub fn slot(self) -> Option<u16> {
        let idx = (self.0 >> 48) as u16;
        (idx != UNTAGGED_INDEX).then_some(idx)
    }

    pub fn bits(self) -> u64 {
        self.0
    }
}

impl fmt::Display for TaggedFnPtr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot() {
            Some(i) => write!(f, "fnptr[slot {i}]@{:#x}", self.addr()),
            None => write!(f, "fnptr[untagged]@{:#x}", self.addr()),
        }
    }
}

/// One backed-up code pointer: address and type id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PimEntry {
    /// 48-bit code address; the upper bits are zero in storage.
    pub fn_addr: u64,
    pub type_id: u64,
}

/// Why a pointer check failed. Any violation terminates the simulated
/// process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CpiViolationKind {
    /// Index beyond the filled slots or the untagged sentinel.
    OutOfRange,
    /// Stored backup address differs from the pointer's address bits.
    AddrMismatch,
    /// Stored type id differs from the call site's expected type.
    TypeMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CpiViolation {
    pub kind: CpiViolationKind,
}

impl fmt::Display for CpiViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            CpiViolationKind::OutOfRange => "slot index out of range",
            CpiViolationKind::AddrMismatch => "address differs from backup",
            CpiViolationKind::TypeMismatch => "type id differs from call site",
        };
        write!(f, "code-pointer integrity violation: {what}")
    }
}

/// PIM append failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PimFull;

impl fmt::Display for PimFull {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pointer-integrity memory is full")
    }
}

/// Per-thread pointer-integrity memory. Append-only: entries are written
/// once at the next free slot and never overwritten through this API.
#[derive(Clone, Debug)]
pub struct PimRegion {
    base: u64,
    capacity: u32,
    entries: Vec<PimEntry>,
}

impl PimRegion {
    pub fn new(base: u64, capacity: u32) -> PimRegion {
        PimRegion { base, capacity, entries: Vec::new() }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn next_slot(&self) -> u32 {
        self.entries.len() as u32
    }

    /// Virtual address of a slot's entry.
    pub fn slot_vaddr(&self, slot: u32) -> u64 {
        self.base + slot as u64 * PIM_ENTRY_BYTES
    }

    pub fn entry(&self, slot: u16) -> Option<&PimEntry> {
        self.entries.get(slot as usize)
    }

    /// Backs up a pointer value. A value already stamped with an in-range
    /// index has been backed up before and is returned unchanged; otherwise
    /// the entry is appended and the stamped value returned.
    pub fn backup(&mut self, value: TaggedFnPtr, sig_type_id: u64) -> Result<TaggedFnPtr, PimFull> {
        if let Some(idx) = value.slot() {
            if (idx as u32) < self.next_slot() {
                return Ok(value);
            }
        }
        let slot = self.next_slot();
        if slot >= self.capacity || slot >= UNTAGGED_INDEX as u32 {
            return Err(PimFull);
        }
        self.entries.push(PimEntry { fn_addr: value.addr(), type_id: sig_type_id });
        Ok(TaggedFnPtr::tagged(value.addr(), slot as u16))
    }

    /// Validates a pointer against its backup: range check first, then the
    /// address bits, then the type id. Returns the verified code address.
    pub fn check(&self, value: TaggedFnPtr, expected_type_id: u64) -> Result<u64, CpiViolation> {
        let slot = match value.slot() {
            Some(s) if (s as u32) < self.next_slot() => s,
            _ => return Err(CpiViolation { kind: CpiViolationKind::OutOfRange }),
        };
        let entry = &self.entries[slot as usize];
        if entry.fn_addr != value.addr() {
            return Err(CpiViolation { kind: CpiViolationKind::AddrMismatch });
        }
        if entry.type_id != expected_type_id {
            return Err(CpiViolation { kind: CpiViolationKind::TypeMismatch });
        }
        Ok(value.addr())
    }

    /// Raw slot overwrite, modeling a successful stray GCS store into the
    /// region. Only reachable before binary scanning removes such stores.
    pub fn corrupt(&mut self, slot: u16, entry: PimEntry) {
        if let Some(e) = self.entries.get_mut(slot as usize) {
            *e = entry;
        }
    }
}

/// Shadow-stack check failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfiError {
    /// Link register does not match the protected stack top.
    Violation { expected: u64, got: u64 },
    /// Return with no frame on the protected stack.
    StackUnderflow,
}

impl fmt::Display for CfiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CfiError::Violation { expected, got } => {
                write!(f, "return address {got:#x} does not match protected stack top {expected:#x}")
            }
            CfiError::StackUnderflow => write!(f, "return on empty protected stack"),
        }
    }
}

/// Per-thread protected return-address stack.
#[derive(Clone, Debug, Default)]
pub struct ShadowStack {
    frames: Vec<u64>,
}

impl ShadowStack {
    pub fn new() -> ShadowStack {
        ShadowStack::default()
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    /// Push on a branch with link.
    pub fn push(&mut self, ret_addr: u64) {
        self.frames.push(ret_addr);
    }

    /// Pop on return and compare against the link register.
    pub fn ret(&mut self, lr: u64) -> Result<(), CfiError> {
        let expected = self.frames.pop().ok_or(CfiError::StackUnderflow)?;
        if expected != lr {
            return Err(CfiError::Violation { expected, got: lr });
        }
        Ok(())
    }
}
