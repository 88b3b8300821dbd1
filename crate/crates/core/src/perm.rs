// SPDX-License-Identifier: Apache-2.0

//! Indirect (PIE) and overlay (POE) permission encodings and their
//! composition into effective access rights.
//!
//! Encoding layout for data classes (4-bit value):
//!
//! ```text
//! bit 0: Read
//! bit 1: Execute
//! bit 2: Write
//! bit 3: reserved, must be zero for data classes
//! ```
//!
//! so `0b0101` decodes to read-write and `0b0111` to read-write-execute.
//! GCS-class pages (PIE slot 11) do not decode through this table: they are
//! readable, writable only through the dedicated GCS store, and never
//! executable, and overlay permissions do not apply to them.

use core::fmt;

/// Number of PIE permission slots in the indirection register.
pub const PIE_SLOTS: usize = 16;
/// Number of POE permission slots in the overlay register.
pub const POE_SLOTS: usize = 8;
/// PIE slot that carries the GCS permission class.
pub const GCS_PIE_SLOT: u8 = 11;

const READ_BIT: u8 = 0b0001;
const EXEC_BIT: u8 = 0b0010;
const WRITE_BIT: u8 = 0b0100;

/// Errors raised by permission-model operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermError {
    /// Encoding value does not fit in 4 bits.
    InvalidEncoding(u8),
    /// Slot index out of range for the register.
    InvalidSlot(u8),
    /// Page-table entry is invalid or violates a field invariant.
    InvalidPte,
}

impl fmt::Display for PermError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PermError::InvalidEncoding(v) => write!(f, "permission encoding {v:#x} exceeds 4 bits"),
            PermError::InvalidSlot(s) => write!(f, "permission slot {s} out of range"),
            PermError::InvalidPte => write!(f, "invalid page table entry"),
        }
    }
}

/// Decoded access rights: the three flags and nothing else.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PermSet {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
}

impl PermSet {
    pub const NONE: PermSet = PermSet { read: false, write: false, execute: false };
    pub const RW: PermSet = PermSet { read: true, write: true, execute: false };
    pub const RWX: PermSet = PermSet { read: true, write: true, execute: true };

    /// Flag-wise intersection with `other`.
    pub fn intersect(self, other: PermSet) -> PermSet {
        PermSet {
            read: self.read && other.read,
            write: self.write && other.write,
            execute: self.execute && other.execute,
        }
    }

    pub fn is_empty(self) -> bool {
        !self.read && !self.write && !self.execute
    }
}

impl fmt::Display for PermSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            if self.read { 'r' } else { '-' },
            if self.write { 'w' } else { '-' },
            if self.execute { 'x' } else { '-' }
        )
    }
}

/// A raw 4-bit permission encoding as stored in a PIE or POE register slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PermEncoding(u8);

impl PermEncoding {
    /// Full read-write-execute data class.
    pub const FULL: PermEncoding = PermEncoding(0b0111);
    /// No-access data class.
    pub const NONE: PermEncoding = PermEncoding(0b0000);
    /// Read-write data class.
    pub const RW: PermEncoding = PermEncoding(0b0101);
    /// Read-execute data class.
    pub const RX: PermEncoding = PermEncoding(0b0011);

    pub fn new(value: u8) -> Result<PermEncoding, PermError> {
        if value > 0xF {
            return Err(PermError::InvalidEncoding(value));
        }
        Ok(PermEncoding(value))
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

/// The permission class of a GCS page: readable, writable only through the
/// dedicated GCS store kind, never executable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GcsClass;

/// Result of decoding an encoding in a page-class context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoded {
    Data(PermSet),
    Gcs(GcsClass),
}

impl Decoded {
    /// The data permissions, treating a GCS class as read-only data.
    /// Access-kind handling for GCS pages lives in the access pipeline.
    pub fn data_perms(self) -> PermSet {
        match self {
            Decoded::Data(p) => p,
            Decoded::Gcs(_) => PermSet { read: true, write: false, execute: false },
        }
    }
}

/// Context in which an encoding is decoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PageClass {
    Data,
    Gcs,
}

/// Decodes a 4-bit encoding. Total: data pages decode through the bit table
/// (bit 3 is reserved and ignored); in GCS context the fixed GCS class is
/// returned regardless of the stored bits.
pub fn decode_perm(encoding: PermEncoding, class: PageClass) -> Decoded {
    match class {
        PageClass::Gcs => Decoded::Gcs(GcsClass),
        PageClass::Data => Decoded::Data(PermSet {
            read: encoding.0 & READ_BIT != 0,
            write: encoding.0 & WRITE_BIT != 0,
            execute: encoding.0 & EXEC_BIT != 0,
        }),
    }
}

/// Combines a decoded base permission with a decoded overlay permission.
/// A flag is effective only if set in both.
pub fn effective_perm(base: PermSet, overlay: PermSet) -> PermSet {
    base.intersect(overlay)
}

/// Classification of the sixteen PIE slots. Only `Reusable` slots may be
/// handed out as isolation-domain base permissions; the others carry fixed
/// semantics that cannot be masked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PieSlotClass {
    /// Pre-configured common permission class, never reusable.
    FixedCommon,
    /// GCS-related slot.
    GcsRelated,
    /// Reserved for kernel mappings.
    KernelReserved,
    /// Free encoding available as an isolation-domain base permission.
    Reusable,
}

/// Which PIE slots mean what. The hardware fixes only slot 11 (GCS); the
/// rest of the split is configuration. The default leaves slots 3, 6, 7 and
/// 9 reusable for domains.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PieRegistry {
    pub classes: [PieSlotClass; PIE_SLOTS],
}

impl Default for PieRegistry {
    fn default() -> Self {
        use PieSlotClass::*;
        PieRegistry {
            classes: [
                FixedCommon,    // 0: no access
                FixedCommon,    // 1: read-only
                FixedCommon,    // 2: read-execute
                Reusable,       // 3
                FixedCommon,    // 4: default read-write data
                FixedCommon,    // 5: read-write-execute
                Reusable,       // 6
                Reusable,       // 7
                FixedCommon,    // 8: code, read-execute
                Reusable,       // 9
                GcsRelated,     // 10
                GcsRelated,     // 11: the GCS class itself
                KernelReserved, // 12
                KernelReserved, // 13
                KernelReserved, // 14
                KernelReserved, // 15
            ],
        }
    }
}

impl PieRegistry {
    pub fn class_of(&self, slot: u8) -> Option<PieSlotClass> {
        self.classes.get(slot as usize).copied()
    }

    pub fn is_reusable(&self, slot: u8) -> bool {
        self.class_of(slot) == Some(PieSlotClass::Reusable)
    }

    /// Reusable slots in ascending order.
    pub fn reusable_slots(&self) -> impl Iterator<Item = u8> + '_ {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == PieSlotClass::Reusable)
            .map(|(i, _)| i as u8)
    }

    pub fn reusable_count(&self) -> usize {
        self.reusable_slots().count()
    }
}

/// The 16-slot user permission indirection register.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PireRegister {
    slots: [PermEncoding; PIE_SLOTS],
}

impl Default for PireRegister {
    /// Reset profile: fixed common classes populated, reusable and kernel
    /// slots cleared. Slot 4 is the default read-write data class and slot 8
    /// the read-execute code class.
    fn default() -> Self {
        let mut slots = [PermEncoding::NONE; PIE_SLOTS];
        slots[1] = PermEncoding(READ_BIT);
        slots[2] = PermEncoding::RX;
        slots[4] = PermEncoding::RW;
        slots[5] = PermEncoding::FULL;
        slots[8] = PermEncoding::RX;
        PireRegister { slots }
    }
}

impl PireRegister {
    /// All slots cleared, including the fixed common classes.
    pub fn zeroed() -> Self {
        PireRegister { slots: [PermEncoding::NONE; PIE_SLOTS] }
    }

    pub fn get(&self, slot: u8) -> Result<PermEncoding, PermError> {
        self.slots.get(slot as usize).copied().ok_or(PermError::InvalidSlot(slot))
    }

    pub fn set(&mut self, slot: u8, enc: PermEncoding) -> Result<(), PermError> {
        let cell = self.slots.get_mut(slot as usize).ok_or(PermError::InvalidSlot(slot))?;
        *cell = enc;
        Ok(())
    }

    pub fn slots(&self) -> &[PermEncoding; PIE_SLOTS] {
        &self.slots
    }
}

/// The 8-slot user permission overlay register. Slot 0 is wired to the full
/// permission class: writes to it are ignored.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PorRegister {
    slots: [PermEncoding; POE_SLOTS],
}

impl Default for PorRegister {
    fn default() -> Self {
        let mut slots = [PermEncoding::NONE; POE_SLOTS];
        slots[0] = PermEncoding::FULL;
        PorRegister { slots }
    }
}

impl PorRegister {
    /// All stored slots zeroed; slot 0 still reads as the fixed full class.
    pub fn zeroed() -> Self {
        PorRegister { slots: [PermEncoding::NONE; POE_SLOTS] }
    }

    pub fn get(&self, slot: u8) -> Result<PermEncoding, PermError> {
        if slot as usize >= POE_SLOTS {
            return Err(PermError::InvalidSlot(slot));
        }
        if slot == 0 {
            return Ok(PermEncoding::FULL);
        }
        Ok(self.slots[slot as usize])
    }

    /// Writes a slot. Returns `false` when the write targeted slot 0 and was
    /// dropped by the fixed-slot rule.
    pub fn set(&mut self, slot: u8, enc: PermEncoding) -> Result<bool, PermError> {
        if slot as usize >= POE_SLOTS {
            return Err(PermError::InvalidSlot(slot));
        }
        if slot == 0 {
            log::debug!("ignored write of {:#06b} to fixed overlay slot 0", enc.bits());
            return Ok(false);
        }
        self.slots[slot as usize] = enc;
        Ok(true)
    }

    /// Clears every writable overlay slot (1..=7).
    pub fn clear_overlays(&mut self) {
        for slot in 1..POE_SLOTS {
            self.slots[slot] = PermEncoding::NONE;
        }
    }

    /// Raw view of the stored slots; slot 0 reads as written here, use
    /// [`PorRegister::get`] for the architecturally visible value.
    pub fn slots(&self) -> &[PermEncoding; POE_SLOTS] {
        &self.slots
    }
}

/// A virtual-to-physical granule mapping carrying the permission indexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PageTableEntry {
    pub virt_page: u64,
    pub phys_page: u64,
    pub pie_idx: u8,
    pub poe_idx: u8,
    pub is_gcs_page: bool,
    pub valid: bool,
}

impl PageTableEntry {
    pub fn new(virt_page: u64, phys_page: u64, pie_idx: u8, poe_idx: u8) -> PageTableEntry {
        PageTableEntry {
            virt_page,
            phys_page,
            pie_idx,
            poe_idx,
            is_gcs_page: pie_idx == GCS_PIE_SLOT,
            valid: true,
        }
    }

    /// Field invariants: index ranges plus the GCS marker being tied to the
    /// GCS PIE slot.
    pub fn validate(&self) -> Result<(), PermError> {
        if self.pie_idx as usize >= PIE_SLOTS || self.poe_idx as usize >= POE_SLOTS {
            return Err(PermError::InvalidPte);
        }
        if self.is_gcs_page != (self.pie_idx == GCS_PIE_SLOT) {
            return Err(PermError::InvalidPte);
        }
        Ok(())
    }
}

/// Resolves a PTE against the two permission registers. Data pages compose
/// base and overlay; GCS pages take the GCS class with no overlay applied.
pub fn resolve_pte(
    pte: &PageTableEntry,
    pire: &PireRegister,
    por: &PorRegister,
) -> Result<Decoded, PermError> {
    if !pte.valid {
        return Err(PermError::InvalidPte);
    }
    pte.validate()?;
    if pte.is_gcs_page {
        return Ok(Decoded::Gcs(GcsClass));
    }
    let base = decode_perm(pire.get(pte.pie_idx)?, PageClass::Data).data_perms();
    let overlay = decode_perm(por.get(pte.poe_idx)?, PageClass::Data).data_perms();
    Ok(Decoded::Data(effective_perm(base, overlay)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(v: u8) -> PermEncoding {
        PermEncoding::new(v).unwrap()
    }

    #[test]
    fn decode_table_matches_known_encodings() {
        assert_eq!(decode_perm(enc(0b0101), PageClass::Data), Decoded::Data(PermSet::RW));
        assert_eq!(decode_perm(enc(0b0111), PageClass::Data), Decoded::Data(PermSet::RWX));
        assert_eq!(decode_perm(enc(0b0000), PageClass::Data), Decoded::Data(PermSet::NONE));
        assert_eq!(
            decode_perm(enc(0b0011), PageClass::Data),
            Decoded::Data(PermSet { read: true, write: false, execute: true })
        );
    }

    #[test]
    fn gcs_context_decodes_to_gcs_class_for_any_bits() {
        for v in 0..16 {
            assert_eq!(decode_perm(enc(v), PageClass::Gcs), Decoded::Gcs(GcsClass));
        }
    }

    #[test]
    fn effective_perm_is_intersection() {
        assert_eq!(effective_perm(PermSet::RW, PermSet::RWX), PermSet::RW);
        assert_eq!(effective_perm(PermSet::RWX, PermSet::NONE), PermSet::NONE);
    }

    // Exhaustive oracle: decode-then-intersect must equal flag-wise AND over
    // all 256 (base, overlay) encoding pairs.
    #[test]
    fn compose_equals_flagwise_and_oracle_all_256_pairs() {
        for b in 0..16u8 {
            for o in 0..16u8 {
                let composed = effective_perm(
                    decode_perm(enc(b), PageClass::Data).data_perms(),
                    decode_perm(enc(o), PageClass::Data).data_perms(),
                );
                let anded = enc(b).bits() & enc(o).bits();
                let oracle = decode_perm(enc(anded), PageClass::Data).data_perms();
                assert_eq!(composed, oracle, "base {b:#06b} overlay {o:#06b}");
            }
        }
    }

    #[test]
    fn por_slot0_is_fixed_full() {
        let mut por = PorRegister::default();
        assert_eq!(por.get(0).unwrap(), PermEncoding::FULL);
        assert!(!por.set(0, enc(0b0000)).unwrap());
        assert_eq!(por.get(0).unwrap(), PermEncoding::FULL);
        assert_eq!(
            decode_perm(por.get(0).unwrap(), PageClass::Data).data_perms(),
            PermSet::RWX
        );
    }

    #[test]
    fn por_writable_slots_update() {
        let mut por = PorRegister::default();
        assert!(por.set(1, enc(0b0111)).unwrap());
        assert_eq!(por.get(1).unwrap(), PermEncoding::FULL);
        por.clear_overlays();
        assert_eq!(por.get(1).unwrap(), PermEncoding::NONE);
        assert_eq!(por.get(0).unwrap(), PermEncoding::FULL);
    }

    #[test]
    fn resolve_pte_domain_example() {
        let mut pire = PireRegister::default();
        pire.set(6, PermEncoding::FULL).unwrap();
        let mut por = PorRegister::default();
        por.set(1, PermEncoding::FULL).unwrap();

        let pte = PageTableEntry::new(0x10, 0x20, 6, 1);
        assert_eq!(resolve_pte(&pte, &pire, &por).unwrap(), Decoded::Data(PermSet::RWX));

        // Sibling domain with a cleared overlay slot resolves to nothing.
        let sibling = PageTableEntry::new(0x11, 0x21, 6, 2);
        assert_eq!(resolve_pte(&sibling, &pire, &por).unwrap(), Decoded::Data(PermSet::NONE));
    }

    #[test]
    fn resolve_pte_gcs_ignores_overlay_register() {
        let pire = PireRegister::default();
        let mut por = PorRegister::default();
        por.clear_overlays();
        let pte = PageTableEntry::new(0x10, 0x20, GCS_PIE_SLOT, 3);
        assert_eq!(resolve_pte(&pte, &pire, &por).unwrap(), Decoded::Gcs(GcsClass));
    }

    #[test]
    fn resolve_pte_rejects_invalid() {
        let pire = PireRegister::default();
        let por = PorRegister::default();
        let mut pte = PageTableEntry::new(0, 0, 4, 0);
        pte.valid = false;
        assert_eq!(resolve_pte(&pte, &pire, &por), Err(PermError::InvalidPte));

        // GCS marker without the GCS slot violates the field invariant.
        let mut bad = PageTableEntry::new(0, 0, 4, 0);
        bad.is_gcs_page = true;
        assert_eq!(resolve_pte(&bad, &pire, &por), Err(PermError::InvalidPte));
    }

    #[test]
    fn poe_slot0_never_restricts_base() {
        let mut pire = PireRegister::default();
        let mut por = PorRegister::default();
        por.clear_overlays();
        for bits in 0..16u8 {
            pire.set(3, enc(bits)).unwrap();
            let pte = PageTableEntry::new(0, 0, 3, 0);
            let alone = decode_perm(enc(bits), PageClass::Data).data_perms();
            assert_eq!(resolve_pte(&pte, &pire, &por).unwrap(), Decoded::Data(alone));
        }
    }

    #[test]
    fn default_registry_shape() {
        let reg = PieRegistry::default();
        let reusable: alloc::vec::Vec<u8> = reg.reusable_slots().collect();
        assert_eq!(reusable, alloc::vec![3, 6, 7, 9]);
        assert_eq!(reg.class_of(11), Some(PieSlotClass::GcsRelated));
        assert_eq!(reg.class_of(4), Some(PieSlotClass::FixedCommon));
    }
}
