// SPDX-License-Identifier: Apache-2.0

//! Per-core machine state and the unified memory-access pipeline:
//! page-table walk, then PIE/POE permission resolution, then the granule
//! protection check with the core's bypass windows.
//!
//! The stage order is observable: a mapped page that would fail both the
//! permission check and the granule check reports the permission stage.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::gpt::{gpc_check, AccessMatrix, BypassWindow, Gpt, GptId, SecurityState};
use crate::perm::{Decoded, PageTableEntry, PireRegister, PorRegister};

/// Kinds of memory access. `GcsStore` models the dedicated store
/// instruction that is the only way to write GCS-class pages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AccessKind {
    Read,
    Write,
    Exec,
    GcsStore,
}

/// Privilege mode of the access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    User,
    Kernel,
    Monitor,
}

/// Pipeline stage at which a fault was raised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Walk,
    Perm,
    Gpc,
}

/// A memory-access fault carrying the faulting address and stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// No valid mapping for the address.
    Translation { vaddr: u64 },
    /// PIE/POE (or GCS-class) permission denial.
    Perm { vaddr: u64 },
    /// Granule protection fault.
    Gpf { vaddr: u64, granule: u64 },
}

impl Fault {
    pub fn stage(&self) -> Stage {
        match self {
            Fault::Translation { .. } => Stage::Walk,
            Fault::Perm { .. } => Stage::Perm,
            Fault::Gpf { .. } => Stage::Gpc,
        }
    }

    pub fn vaddr(&self) -> u64 {
        match self {
            Fault::Translation { vaddr } | Fault::Perm { vaddr } | Fault::Gpf { vaddr, .. } => {
                *vaddr
            }
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Translation { vaddr } => write!(f, "translation fault at {vaddr:#x}"),
            Fault::Perm { vaddr } => write!(f, "permission fault at {vaddr:#x}"),
            Fault::Gpf { vaddr, granule } => {
                write!(f, "granule protection fault at {vaddr:#x} (granule {granule})")
            }
        }
    }
}

/// Feature enables observed by user-mode execution. Only monitor-mode
/// operations may force them; the kernel can clear them during a trap
/// window but the values are restored on resume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Features {
    pub poe_on: bool,
    pub pie_on: bool,
    pub gcs_on: bool,
    pub rng_trap_on: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features { poe_on: true, pie_on: true, gcs_on: true, rng_trap_on: true }
    }
}

impl Features {
    pub const ALL_ON: Features =
        Features { poe_on: true, pie_on: true, gcs_on: true, rng_trap_on: true };

    pub fn all_on(&self) -> bool {
        self.poe_on && self.pie_on && self.gcs_on && self.rng_trap_on
    }
}

/// Identifier of a simulated core.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoreId(pub u32);

/// Per-core register file and security state.
#[derive(Clone, Debug)]
pub struct CoreState {
    pub core_id: CoreId,
    pub security_state: SecurityState,
    pub pire: PireRegister,
    pub por: PorRegister,
    pub windows: Vec<BypassWindow>,
    pub gpt_base: GptId,
    /// GCS stack-top pointer register.
    pub gcspr: u64,
    /// Read-only-to-user per-thread register holding the PIM base.
    pub tpidrro: u64,
    pub features: Features,
}

impl CoreState {
    pub fn new(core_id: CoreId, gpt_base: GptId) -> CoreState {
        CoreState {
            core_id,
            security_state: SecurityState::NormalWorld,
            pire: PireRegister::default(),
            por: PorRegister::default(),
            windows: Vec::new(),
            gpt_base,
            gcspr: 0,
            tpidrro: 0,
            features: Features::default(),
        }
    }
}

/// Hardware RNG registers whose user reads trap to the monitor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RngReg {
    Rndr,
    Rndrrs,
}

/// Trap delivered to the monitor by an RNG-register read. Carries the GPT
/// base that was live when the read happened; the monitor validates it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngTrap {
    pub core: CoreId,
    pub reg: RngReg,
    pub gpt_base: GptId,
}

/// Errors outside the fault model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecError {
    /// RNG trapping is disabled; scenario loading should have rejected this
    /// configuration.
    RngTrapDisabled,
    /// A mapping for the virtual page already exists.
    AlreadyMapped { virt_page: u64 },
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::RngTrapDisabled => write!(f, "rng trap feature is disabled"),
            ExecError::AlreadyMapped { virt_page } => {
                write!(f, "virtual page {virt_page:#x} already mapped")
            }
        }
    }
}

/// Reads an RNG register. With trapping enabled this never produces a
/// value: the trap to the monitor is the contract.
pub fn read_rng(core: &CoreState, reg: RngReg) -> Result<RngTrap, ExecError> {
    if !core.features.rng_trap_on {
        return Err(ExecError::RngTrapDisabled);
    }
    Ok(RngTrap { core: core.core_id, reg, gpt_base: core.gpt_base })
}

/// Process identifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pid(pub u32);

/// A per-process page table: at most one valid entry per virtual page.
#[derive(Clone, Debug)]
pub struct AddressSpace {
    pub owner: Pid,
    table: BTreeMap<u64, PageTableEntry>,
}

impl AddressSpace {
    pub fn new(owner: Pid) -> AddressSpace {
        AddressSpace { owner, table: BTreeMap::new() }
    }

    pub fn lookup(&self, virt_page: u64) -> Option<&PageTableEntry> {
        self.table.get(&virt_page).filter(|pte| pte.valid)
    }

    /// Inserts a mapping; refuses to double-map a page.
    pub fn map(&mut self, pte: PageTableEntry) -> Result<(), ExecError> {
        if self.table.get(&pte.virt_page).map(|p| p.valid).unwrap_or(false) {
            return Err(ExecError::AlreadyMapped { virt_page: pte.virt_page });
        }
        self.table.insert(pte.virt_page, pte);
        Ok(())
    }

    pub fn unmap(&mut self, virt_page: u64) -> Option<PageTableEntry> {
        self.table.remove(&virt_page)
    }

    /// Replaces an entry unconditionally. Monitor-only path; the monitor
    /// performs its own validation first.
    pub fn replace(&mut self, pte: PageTableEntry) {
        self.table.insert(pte.virt_page, pte);
    }

    pub fn entries(&self) -> impl Iterator<Item = &PageTableEntry> {
        self.table.values()
    }

    pub fn is_phys_mapped(&self, phys_page: u64) -> bool {
        self.table.values().any(|pte| pte.valid && pte.phys_page == phys_page)
    }
}

/// Walks, permission-checks and granule-checks one access. Returns the
/// physical address on success.
///
/// User accesses resolve PIE/POE (feature-gated: a cleared enable drops the
/// corresponding layer of protection). Kernel accesses skip the user
/// permission registers but remain subject to the granule check under the
/// core's current GPT, which is exactly the lever the dual-GPT design uses.
/// Monitor accesses run the granule check in the root security state.
#[allow(clippy::too_many_arguments)]
pub fn check_access(
    core: &CoreState,
    aspace: &AddressSpace,
    gpt: &Gpt,
    matrix: &AccessMatrix,
    page_size: u64,
    vaddr: u64,
    kind: AccessKind,
    mode: Mode,
) -> Result<u64, Fault> {
    // Stage 1: walk.
    let virt_page = vaddr / page_size;
    let pte = aspace.lookup(virt_page).ok_or(Fault::Translation { vaddr })?;

    // Stage 2: user permission resolution.
    if mode == Mode::User {
        let decoded = effective_decode(core, pte).map_err(|_| Fault::Perm { vaddr })?;
        let allowed = match decoded {
            Decoded::Gcs(_) => match kind {
                AccessKind::Read | AccessKind::GcsStore => true,
                AccessKind::Write | AccessKind::Exec => false,
            },
            Decoded::Data(perms) => match kind {
                AccessKind::Read => perms.read,
                AccessKind::Write => perms.write,
                AccessKind::Exec => perms.execute,
                // The GCS store kind is only meaningful on GCS pages.
                AccessKind::GcsStore => false,
            },
        };
        if !allowed {
            return Err(Fault::Perm { vaddr });
        }
    }

    // Stage 3: granule protection check.
    let paddr = pte.phys_page * page_size + vaddr % page_size;
    let state = match mode {
        Mode::Monitor => SecurityState::RootWorld,
        _ => core.security_state,
    };
    gpc_check(gpt, state, paddr, &core.windows, matrix)
        .map_err(|g| Fault::Gpf { vaddr, granule: g.granule })?;
    Ok(paddr)
}

/// Resolves a PTE under the core's feature enables: with PIE off the base
/// layer grants everything, with POE off the overlay is not applied.
fn effective_decode(
    core: &CoreState,
    pte: &PageTableEntry,
) -> Result<Decoded, crate::perm::PermError> {
    use crate::perm::{decode_perm, PageClass, PermSet};
    if pte.is_gcs_page && core.features.gcs_on {
        return Ok(Decoded::Gcs(crate::perm::GcsClass));
    }
    if pte.is_gcs_page {
        // GCS disabled: the page degrades to read-only data.
        return Ok(Decoded::Data(PermSet { read: true, write: false, execute: false }));
    }
    let base = if core.features.pie_on {
        decode_perm(core.pire.get(pte.pie_idx)?, PageClass::Data).data_perms()
    } else {
        PermSet::RWX
    };
    let overlay = if core.features.poe_on {
        decode_perm(core.por.get(pte.poe_idx)?, PageClass::Data).data_perms()
    } else {
        PermSet::RWX
    };
    Ok(Decoded::Data(crate::perm::effective_perm(base, overlay)))
}
