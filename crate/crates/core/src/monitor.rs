// SPDX-License-Identifier: Apache-2.0

//! Root-world monitor: dual-GPT lifecycle, delegation, interrupt
//! interception with register sanitize/restore, page-table update
//! validation and the privileged switch service.
//!
//! The monitor keeps two tables per protected process: the OS GPT marks
//! every delegated granule no-access so the kernel cannot reach process
//! memory, and the proc GPT marks only the L3-Zone spaces no-access, to be
//! opened per core through bypass windows. Monitor operations execute as
//! atomic units; the machine's single-owner discipline stands in for the
//! GPT lock, and delegation disjointness is re-checked on every update.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::Shake128;

use crate::cpi::{PimRegion, ShadowStack, DEFAULT_PIM_CAPACITY, PIM_ENTRY_BYTES};
use crate::domain::DomainId;
use crate::exec::{CoreId, Features, Pid, RngTrap};
use crate::gpt::{
    BypassWindow, GranuleRange, GptId, PasLabel, SecurityState, WindowError, WINDOW_MIN_BYTES,
};
use crate::machine::{
    Machine, Process, SimThread, SwitchError, SwitchRejectReason, ThreadId, Zone,
};
use crate::perm::{PageTableEntry, PireRegister, PorRegister, GCS_PIE_SLOT};

/// Default PIE slot for ordinary untrusted data pages.
const UNTRUSTED_PIE_SLOT: u8 = 4;

const UNTRUSTED_VBASE: u64 = 0x0001_0000;
const GCS_VBASE: u64 = 0x0100_0000;
const PIM_VBASE: u64 = 0x0200_0000;
const ZONE_VBASE: u64 = 1 << 40;

/// What caused a trap into the monitor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrapCause {
    Syscall,
    Irq,
    RngTrap,
}

/// Register snapshot taken at trap entry and restored bit-identically on
/// resume.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedContext {
    pub pid: Pid,
    pub core: CoreId,
    pub pire: PireRegister,
    pub por: PorRegister,
    pub gcspr: u64,
    pub tpidrro: u64,
    pub features: Features,
    pub windows: Vec<BypassWindow>,
}

/// Monitor bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct MonitorState {
    pub os_gpt: GptId,
    pub proc_gpts: BTreeMap<Pid, GptId>,
    /// Delegated granule ranges per process; pairwise disjoint and disjoint
    /// from the shared buffers.
    pub delegated: BTreeMap<Pid, Vec<GranuleRange>>,
    /// Shared syscall-argument buffers, labeled full-access.
    pub shared_buffers: Vec<GranuleRange>,
    pub saved: BTreeMap<CoreId, SavedContext>,
}

impl MonitorState {
    pub fn delegated_ranges(&self) -> impl Iterator<Item = (Pid, &GranuleRange)> {
        self.delegated.iter().flat_map(|(pid, ranges)| ranges.iter().map(move |r| (*pid, r)))
    }

    fn find_conflict(&self, range: &GranuleRange) -> Option<GranuleRange> {
        for (_, r) in self.delegated_ranges() {
            if r.overlaps(range) {
                return Some(*r);
            }
        }
        self.shared_buffers.iter().find(|r| r.overlaps(range)).copied()
    }
}

/// Monitor operations, for the ordered event log.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MonitorOp {
    SpawnProcess { pid: Pid },
    DelegateRegion { pid: Pid, range: GranuleRange },
    WorldReserve { world: SecurityState, range: GranuleRange },
    ZoneMmap { pid: Pid, domain: DomainId },
    ZoneMunmap { pid: Pid },
    InterceptTrap { cause: TrapCause },
    ResumeProcess { pid: Pid },
    RngTrapSwitch { target: DomainId },
    ValidatePte { pid: Pid },
    AttestImage { pid: Pid },
    TlbFlush,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EventOutcome {
    Ok,
    Rejected(String),
}

/// One entry of the monitor event log.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonitorEvent {
    pub op: MonitorOp,
    pub core: Option<CoreId>,
    pub outcome: EventOutcome,
}

/// Delegation failure: the range collides with existing secure memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlapRejected {
    pub conflicting: GranuleRange,
}

impl fmt::Display for OverlapRejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "range overlaps existing delegation {}", self.conflicting)
    }
}

/// Zone map/unmap failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZoneMapError {
    /// Range lies outside the pre-delegated zone region for the PAS.
    OutOfZone,
    /// Mapping would exceed the per-domain capacity cap.
    CapacityExceeded { cap: u64 },
    /// Virtual range collides with an existing mapping.
    OverlapRejected,
    /// Zone pages are never executable.
    ExecForbidden,
    UnknownProcess,
}

impl fmt::Display for ZoneMapError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZoneMapError::OutOfZone => write!(f, "range outside the delegated zone"),
            ZoneMapError::CapacityExceeded { cap } => {
                write!(f, "mapping exceeds per-domain capacity of {cap} bytes")
            }
            ZoneMapError::OverlapRejected => write!(f, "range overlaps an existing mapping"),
            ZoneMapError::ExecForbidden => write!(f, "zone pages are non-executable"),
            ZoneMapError::UnknownProcess => write!(f, "unknown process"),
        }
    }
}

/// Which page-table validation rule rejected a kernel mapping request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PteRule {
    /// (a) new mappings must be non-executable.
    NonExecutable,
    /// (b) delegated pages keep their mapping and permission indexes.
    SecureImmutable,
    /// (c) virtual and physical ranges must not overlap existing ones.
    Overlap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PteRejected {
    pub rule: PteRule,
}

impl fmt::Display for PteRejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "page-table update rejected by rule {:?}", self.rule)
    }
}

/// Trap/resume protocol failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonitorError {
    /// The core is not bound to a protected process.
    NotBound,
    /// Trap entry requires the core to run under its proc GPT.
    NotUnderProcGpt,
    /// A context is already saved for this core.
    AlreadyInTrap,
    /// Resume without (or with a foreign) saved context.
    ContextMismatch,
    /// Kernel-window operations require an intercepted trap.
    NotInTrap,
    UnknownProcess,
}

impl fmt::Display for MonitorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorError::NotBound => write!(f, "core not bound to a process"),
            MonitorError::NotUnderProcGpt => write!(f, "core is not under a proc GPT"),
            MonitorError::AlreadyInTrap => write!(f, "core already has a saved context"),
            MonitorError::ContextMismatch => write!(f, "no saved context belongs to this core"),
            MonitorError::NotInTrap => write!(f, "kernel operation outside a trap window"),
            MonitorError::UnknownProcess => write!(f, "unknown process"),
        }
    }
}

/// Image attestation failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DigestMismatch;

impl fmt::Display for DigestMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in-memory binary digest does not match the declared digest")
    }
}

/// Process creation failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpawnError {
    Window(WindowError),
    Overlap(OverlapRejected),
}

impl fmt::Display for SpawnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpawnError::Window(e) => write!(f, "{e}"),
            SpawnError::Overlap(e) => write!(f, "{e}"),
        }
    }
}

/// Shape of a protected process to set up.
#[derive(Clone, Debug)]
pub struct ProcessSpec {
    /// Number of L3-Zone physical address spaces.
    pub zones: u16,
    /// Window size per zone in bytes; 0 selects the minimum legal size for
    /// the machine's window scale.
    pub window_size: u64,
    pub threads: u32,
    pub pim_capacity: u32,
    pub untrusted_pages: u64,
    /// Protected-stack pages per thread.
    pub gcs_pages: u64,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        ProcessSpec {
            zones: 1,
            window_size: 0,
            threads: 1,
            pim_capacity: DEFAULT_PIM_CAPACITY,
            untrusted_pages: 64,
            gcs_pages: 4,
        }
    }
}

/// 32-byte content digest used for load-time image attestation.
pub fn image_digest(image: &[u8]) -> [u8; 32] {
    let mut hasher = Shake128::default();
    hasher.update(image);
    let mut out = [0u8; 32];
    hasher.finalize_xof().read(&mut out);
    out
}

impl Machine {
    fn log_event(&mut self, op: MonitorOp, core: Option<CoreId>, outcome: EventOutcome) {
        self.events.push(MonitorEvent { op, core, outcome });
    }

    /// Delegates a granule range to a process: the OS GPT marks it
    /// no-access so the kernel loses all reach into it.
    pub fn delegate_region(&mut self, pid: Pid, range: GranuleRange) -> Result<(), OverlapRejected> {
        if let Some(conflicting) = self.monitor.find_conflict(&range) {
            self.log_event(
                MonitorOp::DelegateRegion { pid, range },
                None,
                EventOutcome::Rejected(format!("overlaps {conflicting}")),
            );
            return Err(OverlapRejected { conflicting });
        }
        let os_gpt = self.monitor.os_gpt;
        self.gpt_mut(os_gpt)
            .expect("os gpt registered")
            .set_pas(range.start, range.end, PasLabel::NoAccess, SecurityState::RootWorld)
            .expect("root relabel");
        self.monitor.delegated.entry(pid).or_default().push(range);
        self.log_event(MonitorOp::DelegateRegion { pid, range }, None, EventOutcome::Ok);
        Ok(())
    }

    /// Labels a range claimed by another world. The proc GPTs are updated
    /// in the same step so isolation domains cannot reach that memory.
    pub fn reserve_world_region(
        &mut self,
        world: SecurityState,
        range: GranuleRange,
    ) -> Result<(), OverlapRejected> {
        if let Some(conflicting) = self.monitor.find_conflict(&range) {
            self.log_event(
                MonitorOp::WorldReserve { world, range },
                None,
                EventOutcome::Rejected(format!("overlaps {conflicting}")),
            );
            return Err(OverlapRejected { conflicting });
        }
        let label = match world {
            SecurityState::SecureWorld => PasLabel::Secure,
            SecurityState::RealmWorld => PasLabel::Realm,
            SecurityState::RootWorld => PasLabel::Root,
            SecurityState::NormalWorld => PasLabel::Normal,
        };
        let gpt_ids: Vec<GptId> = core::iter::once(self.monitor.os_gpt)
            .chain(self.monitor.proc_gpts.values().copied())
            .collect();
        for id in gpt_ids {
            self.gpt_mut(id)
                .expect("gpt registered")
                .set_pas(range.start, range.end, label, SecurityState::RootWorld)
                .expect("root relabel");
        }
        self.log_event(MonitorOp::WorldReserve { world, range }, None, EventOutcome::Ok);
        Ok(())
    }

    /// Creates a protected process: allocates and delegates its memory,
    /// builds the proc GPT with no-access L3-Zones, maps the untrusted,
    /// GCS and PIM regions and initializes per-thread state.
    pub fn spawn_process(&mut self, spec: &ProcessSpec) -> Result<Pid, SpawnError> {
        let page = self.cfg.granule_size;
        let window_size = if spec.window_size == 0 {
            WINDOW_MIN_BYTES / self.cfg.window_scale.max(1)
        } else {
            spec.window_size
        };

        let pid = self.alloc_pid();
        let proc_gpt = self.register_gpt();
        self.monitor.proc_gpts.insert(pid, proc_gpt);

        // Physical carve-out: page tables, vector table, untrusted image,
        // per-thread GCS and PIM pages, shared syscall buffers, zones.
        let pt_range = self.alloc_granules(4);
        let vector_range = self.alloc_granules(1);
        let untrusted_phys = self.alloc_granules(spec.untrusted_pages);

        let pim_pages = (spec.pim_capacity as u64 * PIM_ENTRY_BYTES).div_ceil(page);
        let mut thread_phys = Vec::new();
        for _ in 0..spec.threads {
            let gcs = self.alloc_granules(spec.gcs_pages);
            let pim = self.alloc_granules(pim_pages);
            thread_phys.push((gcs, pim));
        }

        let shared = self.alloc_granules(2);

        let mut zones = Vec::new();
        for k in 0..spec.zones {
            let phys = self.alloc_granules_aligned(window_size / page, window_size);
            let window = BypassWindow::new(phys.start * page, window_size, self.cfg.window_scale)
                .map_err(SpawnError::Window)?;
            zones.push(Zone {
                pas_index: k,
                window,
                phys,
                vbase: ZONE_VBASE + k as u64 * window_size,
                bytes: window_size,
            });
        }

        // Delegate everything the kernel must lose access to.
        for range in core::iter::once(pt_range)
            .chain(core::iter::once(vector_range))
            .chain(core::iter::once(untrusted_phys))
            .chain(thread_phys.iter().flat_map(|(g, p)| [*g, *p]))
            .chain(zones.iter().map(|z| z.phys))
        {
            self.delegate_region(pid, range).map_err(SpawnError::Overlap)?;
        }

        // Shared syscall-argument buffers stay reachable from both sides.
        for gpt_id in [self.monitor.os_gpt, proc_gpt] {
            self.gpt_mut(gpt_id)
                .expect("gpt registered")
                .set_pas(shared.start, shared.end, PasLabel::FullAccess, SecurityState::RootWorld)
                .expect("root relabel");
        }
        self.monitor.shared_buffers.push(shared);

        // The proc GPT blocks only the L3-Zone spaces; windows open them.
        for z in &zones {
            self.gpt_mut(proc_gpt)
                .expect("gpt registered")
                .set_pas(z.phys.start, z.phys.end, PasLabel::NoAccess, SecurityState::RootWorld)
                .expect("root relabel");
        }

        // Monitor-performed initial mappings.
        let mut aspace = crate::exec::AddressSpace::new(pid);
        for i in 0..spec.untrusted_pages {
            aspace
                .map(PageTableEntry::new(
                    UNTRUSTED_VBASE / page + i,
                    untrusted_phys.start + i,
                    UNTRUSTED_PIE_SLOT,
                    0,
                ))
                .expect("fresh aspace");
        }

        let mut threads = Vec::new();
        for (t, (gcs_phys, pim_phys)) in thread_phys.iter().enumerate() {
            let gcs_vbase = GCS_VBASE + t as u64 * (spec.gcs_pages * page);
            let pim_vbase = PIM_VBASE + t as u64 * (pim_pages * page);
            for i in 0..spec.gcs_pages {
                aspace
                    .map(PageTableEntry::new(
                        gcs_vbase / page + i,
                        gcs_phys.start + i,
                        GCS_PIE_SLOT,
                        0,
                    ))
                    .expect("fresh aspace");
            }
            for i in 0..pim_pages {
                aspace
                    .map(PageTableEntry::new(
                        pim_vbase / page + i,
                        pim_phys.start + i,
                        GCS_PIE_SLOT,
                        0,
                    ))
                    .expect("fresh aspace");
            }
            threads.push(SimThread {
                id: ThreadId(t as u32),
                pim: PimRegion::new(pim_vbase, spec.pim_capacity),
                shadow: ShadowStack::new(),
                gcs_vbase,
                gcs_pages: spec.gcs_pages,
            });
        }

        self.insert_process(Process {
            pid,
            aspace,
            proc_gpt,
            zones,
            threads,
            mem: BTreeMap::new(),
            pt_range,
            untrusted_vbase: UNTRUSTED_VBASE,
            untrusted_pages: spec.untrusted_pages,
            domain_used: BTreeMap::new(),
        });
        self.log_event(MonitorOp::SpawnProcess { pid }, None, EventOutcome::Ok);
        debug_assert!(self.dual_gpt_invariant_holds());
        Ok(pid)
    }

    /// Maps zone pages for a domain. The range must lie inside the
    /// pre-delegated contiguous zone region of the domain's PAS, stay under
    /// the per-domain capacity cap, and is never executable.
    pub fn zone_mmap(
        &mut self,
        pid: Pid,
        domain: DomainId,
        vaddr: u64,
        pages: u64,
        exec: bool,
    ) -> Result<(), ZoneMapError> {
        let page = self.cfg.granule_size;
        let outcome = self.zone_mmap_inner(pid, domain, vaddr, pages, exec, page);
        let event_outcome = match &outcome {
            Ok(()) => EventOutcome::Ok,
            Err(e) => EventOutcome::Rejected(format!("{e}")),
        };
        self.log_event(MonitorOp::ZoneMmap { pid, domain }, None, event_outcome);
        debug_assert!(self.dual_gpt_invariant_holds());
        outcome
    }

    fn zone_mmap_inner(
        &mut self,
        pid: Pid,
        domain: DomainId,
        vaddr: u64,
        pages: u64,
        exec: bool,
        page: u64,
    ) -> Result<(), ZoneMapError> {
        if exec {
            return Err(ZoneMapError::ExecForbidden);
        }
        let proc = self.process(pid).ok_or(ZoneMapError::UnknownProcess)?;
        let zone = proc.zone(domain.pas).ok_or(ZoneMapError::OutOfZone)?;
        let bytes = pages * page;
        if !zone.contains_vrange(vaddr, bytes) {
            return Err(ZoneMapError::OutOfZone);
        }
        let cap = zone.per_domain_capacity();
        let used = proc.domain_used.get(&domain).copied().unwrap_or(0);
        if used + bytes > cap {
            return Err(ZoneMapError::CapacityExceeded { cap });
        }
        // Identity-offset inside the zone; a colliding virtual page shows
        // up as a double-map.
        let zone_vbase = zone.vbase;
        let zone_phys_start = zone.phys.start;
        let proc = self.process_mut(pid).unwrap();
        let first_page = vaddr / page;
        for i in 0..pages {
            let vp = first_page + i;
            let pp = zone_phys_start + (vp - zone_vbase / page);
            if proc.aspace.lookup(vp).is_some() {
                // Roll back this call's partial mappings.
                for j in 0..i {
                    proc.aspace.unmap(first_page + j);
                }
                return Err(ZoneMapError::OverlapRejected);
            }
            proc.aspace
                .map(PageTableEntry::new(vp, pp, domain.pie, domain.poe))
                .map_err(|_| ZoneMapError::OverlapRejected)?;
        }
        *proc.domain_used.entry(domain).or_insert(0) += bytes;
        Ok(())
    }

    /// Unmaps zone pages and scrubs their contents.
    pub fn zone_munmap(&mut self, pid: Pid, vaddr: u64, pages: u64) -> Result<(), ZoneMapError> {
        let page = self.cfg.granule_size;
        let result = (|| {
            let proc = self.process(pid).ok_or(ZoneMapError::UnknownProcess)?;
            let zone = proc.zone_containing(vaddr).ok_or(ZoneMapError::OutOfZone)?;
            let pas = zone.pas_index;
            let proc = self.process_mut(pid).unwrap();
            for i in 0..pages {
                let vp = vaddr / page + i;
                if let Some(pte) = proc.aspace.unmap(vp) {
                    let domain = DomainId::new(pas, pte.pie_idx, pte.poe_idx);
                    if let Some(used) = proc.domain_used.get_mut(&domain) {
                        *used = used.saturating_sub(page);
                    }
                    // Scrub content.
                    let lo = vp * page;
                    let hi = lo + page;
                    let stale: Vec<u64> = proc.mem.range(lo..hi).map(|(k, _)| *k).collect();
                    for k in stale {
                        proc.mem.remove(&k);
                    }
                }
            }
            Ok(())
        })();
        let event_outcome = match &result {
            Ok(()) => EventOutcome::Ok,
            Err(e) => EventOutcome::Rejected(format!("{e}")),
        };
        self.log_event(MonitorOp::ZoneMunmap { pid }, None, event_outcome);
        result
    }

    /// Intercepts a user-to-kernel transition: saves and sanitizes the
    /// sensitive context, swaps in the OS GPT and records a TLB flush.
    /// The monitoring overhead share is charged here.
    pub fn trap_enter(&mut self, core: CoreId, cause: TrapCause) -> Result<(), MonitorError> {
        let pid = self.bound_process(core).ok_or(MonitorError::NotBound)?;
        let proc_gpt =
            *self.monitor.proc_gpts.get(&pid).ok_or(MonitorError::UnknownProcess)?;
        if self.core(core).gpt_base != proc_gpt {
            return Err(MonitorError::NotUnderProcGpt);
        }
        if self.monitor.saved.contains_key(&core) {
            return Err(MonitorError::AlreadyInTrap);
        }

        let state = self.core(core);
        let saved = SavedContext {
            pid,
            core,
            pire: state.pire.clone(),
            por: state.por.clone(),
            gcspr: state.gcspr,
            tpidrro: state.tpidrro,
            features: state.features,
            windows: state.windows.clone(),
        };
        self.monitor.saved.insert(core, saved);

        let os_gpt = self.monitor.os_gpt;
        let c = self.core_mut(core);
        c.pire = PireRegister::zeroed();
        c.por = PorRegister::zeroed();
        c.gcspr = 0;
        c.tpidrro = 0;
        c.windows.clear();
        c.gpt_base = os_gpt;

        self.record_tlb_flush();
        self.log_event(MonitorOp::TlbFlush, Some(core), EventOutcome::Ok);
        let overhead = self.cfg.cost_model.trap_overhead();
        self.charge(overhead);
        self.log_event(MonitorOp::InterceptTrap { cause }, Some(core), EventOutcome::Ok);
        Ok(())
    }

    /// Restores the saved context bit-identically, forces the isolation
    /// features back on and swaps the proc GPT in. Kernel changes to the
    /// saved registers during the trap window are discarded.
    pub fn resume_process(&mut self, core: CoreId) -> Result<(), MonitorError> {
        let saved = self.monitor.saved.remove(&core).ok_or(MonitorError::ContextMismatch)?;
        debug_assert_eq!(saved.core, core);
        let proc_gpt =
            *self.monitor.proc_gpts.get(&saved.pid).ok_or(MonitorError::UnknownProcess)?;
        let pid = saved.pid;
        let c = self.core_mut(core);
        c.pire = saved.pire;
        c.por = saved.por;
        c.gcspr = saved.gcspr;
        c.tpidrro = saved.tpidrro;
        c.windows = saved.windows;
        c.features = Features::ALL_ON;
        c.gpt_base = proc_gpt;
        self.log_event(MonitorOp::ResumeProcess { pid }, Some(core), EventOutcome::Ok);
        Ok(())
    }

    /// One hooked syscall end to end: intercept, native kernel work,
    /// resume. Total added cost equals the hooked-syscall figure.
    pub fn do_syscall(&mut self, core: CoreId) -> Result<(), MonitorError> {
        self.trap_enter(core, TrapCause::Syscall)?;
        self.charge(self.cfg.cost_model.syscall);
        self.resume_process(core)
    }

    /// Validates and services a privileged switch request that arrived
    /// through the RNG trap. The request is honored only when the trap was
    /// taken under the requesting process's own GPT and the target PAS is
    /// one of its pre-defined windows.
    pub fn rng_trap_switch(
        &mut self,
        core: CoreId,
        pid: Pid,
        trap: RngTrap,
        target: DomainId,
    ) -> Result<(), SwitchError> {
        let proc_gpt = match self.monitor.proc_gpts.get(&pid) {
            Some(id) => *id,
            None => {
                self.log_event(
                    MonitorOp::RngTrapSwitch { target },
                    Some(core),
                    EventOutcome::Rejected("unknown process".into()),
                );
                return Err(SwitchError::NotBound);
            }
        };
        if trap.gpt_base != proc_gpt {
            self.log_event(
                MonitorOp::RngTrapSwitch { target },
                Some(core),
                EventOutcome::Rejected("wrong gpt base".into()),
            );
            return Err(SwitchError::Rejected(SwitchRejectReason::WrongGptBase));
        }
        let proc = self.process(pid).expect("validated process");
        let zone = match proc.zone(target.pas) {
            Some(z) => z,
            None => {
                self.log_event(
                    MonitorOp::RngTrapSwitch { target },
                    Some(core),
                    EventOutcome::Rejected("pas not delegated".into()),
                );
                return Err(SwitchError::Rejected(SwitchRejectReason::UndelegatedPas));
            }
        };
        let window = zone.window;
        let needs_window =
            self.current_domain(core).map(|d| d.pas != target.pas).unwrap_or(true);
        self.apply_privileged_switch(core, target, needs_window.then_some(window));
        if needs_window {
            self.record_tlb_flush();
            self.log_event(MonitorOp::TlbFlush, Some(core), EventOutcome::Ok);
        }
        self.log_event(MonitorOp::RngTrapSwitch { target }, Some(core), EventOutcome::Ok);
        Ok(())
    }

    /// The page-table update check run on every kernel mapping request:
    /// (a) new pages are non-executable, (b) delegated pages keep their
    /// mapping and permission indexes, (c) fresh mappings may not overlap
    /// existing virtual or physical ranges. `old_virt_page` marks an
    /// update-in-place of an existing entry.
    pub fn validate_pte_update(
        &self,
        pid: Pid,
        old_virt_page: Option<u64>,
        new_pte: &PageTableEntry,
        exec: bool,
    ) -> Result<(), PteRejected> {
        if exec {
            return Err(PteRejected { rule: PteRule::NonExecutable });
        }
        let proc = match self.process(pid) {
            Some(p) => p,
            None => return Err(PteRejected { rule: PteRule::Overlap }),
        };
        if let Some(vp) = old_virt_page {
            if let Some(old) = proc.aspace.lookup(vp) {
                // Every mapped page of a protected process is delegated;
                // its translation and indexes are immutable from EL1.
                let changed = new_pte.virt_page != vp
                    || old.pie_idx != new_pte.pie_idx
                    || old.poe_idx != new_pte.poe_idx
                    || old.is_gcs_page != new_pte.is_gcs_page
                    || old.phys_page != new_pte.phys_page;
                if changed {
                    return Err(PteRejected { rule: PteRule::SecureImmutable });
                }
                return Ok(());
            }
        }
        if proc.aspace.lookup(new_pte.virt_page).is_some() {
            return Err(PteRejected { rule: PteRule::Overlap });
        }
        if proc.aspace.is_phys_mapped(new_pte.phys_page) {
            return Err(PteRejected { rule: PteRule::Overlap });
        }
        // Fresh anonymous mappings must target OS-owned memory, not any
        // delegated or shared granule.
        let granule = GranuleRange::new(new_pte.phys_page, new_pte.phys_page + 1);
        for (_, range) in self.monitor.delegated_ranges() {
            if range.overlaps(&granule) {
                return Err(PteRejected { rule: PteRule::Overlap });
            }
        }
        if self.monitor.shared_buffers.iter().any(|r| r.overlaps(&granule)) {
            return Err(PteRejected { rule: PteRule::Overlap });
        }
        Ok(())
    }

    /// A kernel mapping request forwarded to the monitor: validated, then
    /// applied by the monitor itself.
    pub fn kernel_map_request(
        &mut self,
        pid: Pid,
        old_virt_page: Option<u64>,
        new_pte: PageTableEntry,
        exec: bool,
    ) -> Result<(), PteRejected> {
        let outcome = self.validate_pte_update(pid, old_virt_page, &new_pte, exec);
        let event_outcome = match &outcome {
            Ok(()) => EventOutcome::Ok,
            Err(e) => EventOutcome::Rejected(format!("{e}")),
        };
        self.log_event(MonitorOp::ValidatePte { pid }, None, event_outcome);
        outcome?;
        self.process_mut(pid).expect("validated").aspace.replace(new_pte);
        Ok(())
    }

    /// Load-time image attestation: compares the in-memory binary digest
    /// against the scenario-declared value.
    pub fn attest_image(
        &mut self,
        pid: Pid,
        image: &[u8],
        expected: &[u8; 32],
    ) -> Result<(), DigestMismatch> {
        let ok = image_digest(image) == *expected;
        self.log_event(
            MonitorOp::AttestImage { pid },
            None,
            if ok { EventOutcome::Ok } else { EventOutcome::Rejected("digest mismatch".into()) },
        );
        if ok {
            Ok(())
        } else {
            Err(DigestMismatch)
        }
    }

    fn kernel_window_core(&mut self, core: CoreId) -> Result<&mut crate::exec::CoreState, MonitorError> {
        if self.core(core).gpt_base != self.monitor.os_gpt {
            return Err(MonitorError::NotInTrap);
        }
        Ok(self.core_mut(core))
    }

    /// Kernel write to the permission indirection register during a trap
    /// window. Discarded at resume.
    pub fn kernel_write_pire(
        &mut self,
        core: CoreId,
        slot: u8,
        enc: crate::perm::PermEncoding,
    ) -> Result<(), MonitorError> {
        let c = self.kernel_window_core(core)?;
        let _ = c.pire.set(slot, enc);
        Ok(())
    }

    /// Kernel write to the overlay register during a trap window.
    pub fn kernel_write_por(
        &mut self,
        core: CoreId,
        slot: u8,
        enc: crate::perm::PermEncoding,
    ) -> Result<(), MonitorError> {
        let c = self.kernel_window_core(core)?;
        let _ = c.por.set(slot, enc);
        Ok(())
    }

    /// Kernel attempt to disable the isolation features.
    pub fn kernel_set_features(&mut self, core: CoreId, features: Features) -> Result<(), MonitorError> {
        self.kernel_window_core(core)?.features = features;
        Ok(())
    }

    pub fn kernel_set_gcspr(&mut self, core: CoreId, value: u64) -> Result<(), MonitorError> {
        self.kernel_window_core(core)?.gcspr = value;
        Ok(())
    }

    pub fn kernel_set_tpidrro(&mut self, core: CoreId, value: u64) -> Result<(), MonitorError> {
        self.kernel_window_core(core)?.tpidrro = value;
        Ok(())
    }

    /// Kernel attempt to open its own bypass window.
    pub fn kernel_add_window(&mut self, core: CoreId, window: BypassWindow) -> Result<(), MonitorError> {
        self.kernel_window_core(core)?.windows.push(window);
        Ok(())
    }

    /// Dual-GPT complementarity: every delegated granule is no-access in
    /// the OS GPT, and every zone granule is no-access in its proc GPT.
    pub fn dual_gpt_invariant_holds(&self) -> bool {
        let os = self.gpt(self.monitor.os_gpt).expect("os gpt");
        for (_, range) in self.monitor.delegated_ranges() {
            for g in range.start..range.end {
                if os.label(g) != PasLabel::NoAccess {
                    return false;
                }
            }
        }
        for (pid, gpt_id) in &self.monitor.proc_gpts {
            let proc = match self.process(*pid) {
                Some(p) => p,
                None => continue,
            };
            let gpt = self.gpt(*gpt_id).expect("proc gpt");
            for zone in &proc.zones {
                for g in zone.phys.start..zone.phys.end {
                    if gpt.label(g) != PasLabel::NoAccess {
                        return false;
                    }
                }
            }
        }
        true
    }
}

impl Process {
    pub fn zone_containing(&self, vaddr: u64) -> Option<&Zone> {
        self.zones.iter().find(|z| vaddr >= z.vbase && vaddr < z.vbase + z.bytes)
    }
}
