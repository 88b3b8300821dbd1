// SPDX-License-Identifier: Apache-2.0

//! The simulation machine: cores, registered GPTs, processes with their
//! address spaces and threads, the switch trace and the cycle ledger.
//!
//! A machine is owned by one simulation; monitor operations (delegation,
//! trap interception, privileged switch service) live in the monitor
//! module as further methods on [`Machine`].

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::cpi::{CfiError, CpiViolation, PimFull, PimRegion, ShadowStack, TaggedFnPtr};
use crate::domain::{classify_switch, CostModel, DomainError, DomainId, SwitchLevel, SwitchTrace, TraceEntry};
use crate::exec::{
    check_access, read_rng, AccessKind, AddressSpace, CoreId, CoreState, Fault, Mode, Pid, RngReg,
};
use crate::gpt::{AccessMatrix, BypassWindow, GranuleRange, Gpt, GptId};
use crate::monitor::{MonitorEvent, MonitorState};
use crate::perm::{PermEncoding, PieRegistry};

/// Thread identifier inside a process.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThreadId(pub u32);

/// Machine-wide configuration.
#[derive(Clone, Debug)]
pub struct MachineConfig {
    pub cores: u32,
    pub granule_size: u64,
    /// Divides the bypass-window size bounds for miniature scenarios.
    pub window_scale: u64,
    pub access_matrix: AccessMatrix,
    pub registry: PieRegistry,
    pub cost_model: CostModel,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            cores: 1,
            granule_size: crate::gpt::DEFAULT_GRANULE_SIZE,
            window_scale: 1,
            access_matrix: AccessMatrix::default(),
            registry: PieRegistry::default(),
            cost_model: CostModel::default(),
        }
    }
}

/// One L3-Zone: a physical address space opened through a bypass window.
#[derive(Clone, Debug)]
pub struct Zone {
    pub pas_index: u16,
    pub window: BypassWindow,
    pub phys: GranuleRange,
    pub vbase: u64,
    pub bytes: u64,
}

impl Zone {
    /// Capacity cap per domain: an even split of the window across the
    /// domains addressable inside one PAS.
    pub fn per_domain_capacity(&self) -> u64 {
        self.bytes / crate::domain::DOMAINS_PER_PAS as u64
    }

    pub fn contains_vrange(&self, vaddr: u64, bytes: u64) -> bool {
        vaddr >= self.vbase && vaddr + bytes <= self.vbase + self.bytes
    }
}

/// A simulated thread: its pointer-integrity memory and protected stack.
#[derive(Clone, Debug)]
pub struct SimThread {
    pub id: ThreadId,
    pub pim: PimRegion,
    pub shadow: ShadowStack,
    pub gcs_vbase: u64,
    pub gcs_pages: u64,
}

/// A protected process.
#[derive(Clone, Debug)]
pub struct Process {
    pub pid: Pid,
    pub aspace: AddressSpace,
    pub proc_gpt: GptId,
    pub zones: Vec<Zone>,
    pub threads: Vec<SimThread>,
    /// Word-granular memory contents, keyed by virtual address.
    pub mem: BTreeMap<u64, u64>,
    /// Granules holding the process page tables.
    pub pt_range: GranuleRange,
    /// Untrusted code/data/stack region.
    pub untrusted_vbase: u64,
    pub untrusted_pages: u64,
    /// Bytes mapped per domain, for the capacity cap.
    pub domain_used: BTreeMap<DomainId, u64>,
}

impl Process {
    pub fn zone(&self, pas: u16) -> Option<&Zone> {
        self.zones.iter().find(|z| z.pas_index == pas)
    }

    pub fn thread(&self, id: ThreadId) -> Option<&SimThread> {
        self.threads.iter().find(|t| t.id == id)
    }
}

/// How a domain switch was requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SwitchVia {
    /// Through the mapped trampoline, the only sanctioned path.
    Trampoline,
    /// A raw inline switching instruction; modeled attack attempts.
    Raw,
}

/// Monitor-side rejection reasons for a privileged switch request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SwitchRejectReason {
    /// The request arrived while the core was not under the requesting
    /// process's GPT.
    WrongGptBase,
    /// The target PAS is not a pre-defined window of the process.
    UndelegatedPas,
}

/// Domain-switch failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwitchError {
    /// Core is not bound to a process.
    NotBound,
    InvalidDomain(DomainError),
    /// Raw switching instructions are stripped by the binary scan; a raw
    /// request never reaches the switch path.
    RawViaBlocked,
    RngTrapDisabled,
    Rejected(SwitchRejectReason),
}

impl fmt::Display for SwitchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SwitchError::NotBound => write!(f, "core is not bound to a process"),
            SwitchError::InvalidDomain(e) => write!(f, "invalid domain: {e}"),
            SwitchError::RawViaBlocked => write!(f, "raw switch instruction blocked by scan policy"),
            SwitchError::RngTrapDisabled => write!(f, "switch trap feature disabled"),
            SwitchError::Rejected(r) => write!(f, "switch rejected: {r:?}"),
        }
    }
}

/// Failures of the code-pointer-integrity runtime paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpiRuntimeError {
    /// The access pipeline denied the store or load.
    Fault(Fault),
    PimFull(PimFull),
    Violation(CpiViolation),
    Cfi(CfiError),
    UnknownThread(ThreadId),
}

impl fmt::Display for CpiRuntimeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CpiRuntimeError::Fault(e) => write!(f, "{e}"),
            CpiRuntimeError::PimFull(e) => write!(f, "{e}"),
            CpiRuntimeError::Violation(e) => write!(f, "{e}"),
            CpiRuntimeError::Cfi(e) => write!(f, "{e}"),
            CpiRuntimeError::UnknownThread(t) => write!(f, "unknown thread {t:?}"),
        }
    }
}

/// Top-level machine errors outside the fault model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MachineError {
    UnknownCore(CoreId),
    UnknownProcess(Pid),
    UnknownGpt(GptId),
}

impl fmt::Display for MachineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MachineError::UnknownCore(c) => write!(f, "unknown core {c:?}"),
            MachineError::UnknownProcess(p) => write!(f, "unknown process {p:?}"),
            MachineError::UnknownGpt(g) => write!(f, "unknown gpt {g:?}"),
        }
    }
}

/// Physical granules reserved for the monitor and OS image.
const RESERVED_GRANULES: u64 = 16;

/// The simulation machine.
#[derive(Clone, Debug)]
pub struct Machine {
    pub cfg: MachineConfig,
    gpts: BTreeMap<GptId, Gpt>,
    cores: Vec<CoreState>,
    core_proc: Vec<Option<Pid>>,
    core_domain: Vec<Option<DomainId>>,
    procs: BTreeMap<Pid, Process>,
    pub monitor: MonitorState,
    pub events: Vec<MonitorEvent>,
    trace: SwitchTrace,
    /// Cycles charged outside the switch trace: traps, syscalls,
    /// revocations and pointer backup/check work.
    extra_cycles: f64,
    tlb_flushes: u64,
    next_gpt: u32,
    next_pid: u32,
    next_granule: u64,
}

impl Machine {
    pub fn new(cfg: MachineConfig) -> Machine {
        let mut m = Machine {
            cfg,
            gpts: BTreeMap::new(),
            cores: Vec::new(),
            core_proc: Vec::new(),
            core_domain: Vec::new(),
            procs: BTreeMap::new(),
            monitor: MonitorState::default(),
            events: Vec::new(),
            trace: SwitchTrace::new(),
            extra_cycles: 0.0,
            tlb_flushes: 0,
            next_gpt: 0,
            next_pid: 1,
            next_granule: RESERVED_GRANULES,
        };
        let os_gpt = m.register_gpt();
        m.monitor.os_gpt = os_gpt;
        for i in 0..m.cfg.cores {
            m.cores.push(CoreState::new(CoreId(i), os_gpt));
            m.core_proc.push(None);
            m.core_domain.push(None);
        }
        m
    }

    pub fn register_gpt(&mut self) -> GptId {
        let id = GptId(self.next_gpt);
        self.next_gpt += 1;
        self.gpts.insert(id, Gpt::new(id, self.cfg.granule_size));
        id
    }

    pub fn gpt(&self, id: GptId) -> Option<&Gpt> {
        self.gpts.get(&id)
    }

    pub fn gpt_mut(&mut self, id: GptId) -> Option<&mut Gpt> {
        self.gpts.get_mut(&id)
    }

    pub fn core(&self, id: CoreId) -> &CoreState {
        &self.cores[id.0 as usize]
    }

    /// Mutable core access for scenario plumbing and kernel-tamper steps.
    pub fn core_mut(&mut self, id: CoreId) -> &mut CoreState {
        &mut self.cores[id.0 as usize]
    }

    pub fn process(&self, pid: Pid) -> Option<&Process> {
        self.procs.get(&pid)
    }

    pub fn process_mut(&mut self, pid: Pid) -> Option<&mut Process> {
        self.procs.get_mut(&pid)
    }

    pub fn current_domain(&self, core: CoreId) -> Option<DomainId> {
        self.core_domain[core.0 as usize]
    }

    pub fn bound_process(&self, core: CoreId) -> Option<Pid> {
        self.core_proc[core.0 as usize]
    }

    pub fn trace(&self) -> &SwitchTrace {
        &self.trace
    }

    pub fn extra_cycles(&self) -> f64 {
        self.extra_cycles
    }

    pub fn tlb_flushes(&self) -> u64 {
        self.tlb_flushes
    }

    pub(crate) fn charge(&mut self, cycles: f64) {
        self.extra_cycles += cycles;
    }

    pub(crate) fn record_tlb_flush(&mut self) {
        self.tlb_flushes += 1;
    }

    pub(crate) fn alloc_pid(&mut self) -> Pid {
        let pid = Pid(self.next_pid);
        self.next_pid += 1;
        pid
    }

    pub(crate) fn insert_process(&mut self, proc: Process) {
        self.procs.insert(proc.pid, proc);
    }

    /// Bump-allocates physical granules.
    pub(crate) fn alloc_granules(&mut self, count: u64) -> GranuleRange {
        let start = self.next_granule;
        self.next_granule = start + count;
        GranuleRange { start, end: start + count }
    }

    /// Bump-allocates physical granules aligned to `align_bytes`.
    pub(crate) fn alloc_granules_aligned(&mut self, count: u64, align_bytes: u64) -> GranuleRange {
        let align_granules = (align_bytes / self.cfg.granule_size).max(1);
        let start = self.next_granule.next_multiple_of(align_granules);
        self.next_granule = start + count;
        GranuleRange { start, end: start + count }
    }

    /// Binds a core to a process: the core runs under the process GPT with
    /// thread 0's PIM and GCS registers loaded.
    pub fn bind_core(&mut self, core: CoreId, pid: Pid) -> Result<(), MachineError> {
        let proc = self.procs.get(&pid).ok_or(MachineError::UnknownProcess(pid))?;
        let gpt = proc.proc_gpt;
        let (tpidrro, gcspr) = proc
            .threads
            .first()
            .map(|t| (t.pim.base(), t.gcs_vbase))
            .unwrap_or((0, 0));
        let c = self.core_mut(core);
        c.gpt_base = gpt;
        c.tpidrro = tpidrro;
        c.gcspr = gcspr;
        self.core_proc[core.0 as usize] = Some(pid);
        Ok(())
    }

    /// The unified access pipeline for the process bound to `core`.
    pub fn access(
        &self,
        core: CoreId,
        vaddr: u64,
        kind: AccessKind,
        mode: Mode,
    ) -> Result<u64, Fault> {
        let state = self.core(core);
        let pid = self.bound_process(core).expect("core not bound to a process");
        let proc = self.procs.get(&pid).expect("bound process exists");
        let gpt = self.gpts.get(&state.gpt_base).expect("core gpt registered");
        check_access(
            state,
            &proc.aspace,
            gpt,
            &self.cfg.access_matrix,
            self.cfg.granule_size,
            vaddr,
            kind,
            mode,
        )
    }

    /// Kernel data access to a physical address through its linear map:
    /// no process walk, no user permissions, but the granule check applies
    /// under the GPT currently live on the core.
    pub fn kernel_phys_access(&self, core: CoreId, paddr: u64) -> Result<(), Fault> {
        let state = self.core(core);
        let gpt = self.gpts.get(&state.gpt_base).expect("core gpt registered");
        crate::gpt::gpc_check(
            gpt,
            state.security_state,
            paddr,
            &state.windows,
            &self.cfg.access_matrix,
        )
        .map_err(|g| Fault::Gpf { vaddr: paddr, granule: g.granule })
    }

    /// Access-checked word read.
    pub fn mem_read(&self, core: CoreId, vaddr: u64, mode: Mode) -> Result<u64, Fault> {
        self.access(core, vaddr, AccessKind::Read, mode)?;
        let pid = self.bound_process(core).expect("bound");
        Ok(self.procs[&pid].mem.get(&vaddr).copied().unwrap_or(0))
    }

    /// Access-checked word write.
    pub fn mem_write(&mut self, core: CoreId, vaddr: u64, value: u64, mode: Mode) -> Result<(), Fault> {
        self.access(core, vaddr, AccessKind::Write, mode)?;
        let pid = self.bound_process(core).expect("bound");
        self.procs.get_mut(&pid).unwrap().mem.insert(vaddr, value);
        Ok(())
    }

    /// User write to the overlay register. Trap-free; slot 0 writes are
    /// dropped by the fixed-slot rule.
    pub fn user_write_por(&mut self, core: CoreId, slot: u8, enc: PermEncoding) {
        let _ = self.core_mut(core).por.set(slot, enc);
    }

    /// Executes a domain switch on `core`. The level is classified from the
    /// core's previous domain; L2 and L3 switches are validated by the
    /// monitor through the RNG-trap path before any register changes.
    pub fn switch_domain(
        &mut self,
        core: CoreId,
        target: DomainId,
        via: SwitchVia,
    ) -> Result<TraceEntry, SwitchError> {
        if via == SwitchVia::Raw {
            return Err(SwitchError::RawViaBlocked);
        }
        let pid = self.bound_process(core).ok_or(SwitchError::NotBound)?;
        target.validate(&self.cfg.registry).map_err(SwitchError::InvalidDomain)?;

        let from = self.core_domain[core.0 as usize];
        let level = classify_switch(from, target);

        if level >= SwitchLevel::L2 {
            let trap = read_rng(self.core(core), RngReg::Rndr)
                .map_err(|_| SwitchError::RngTrapDisabled)?;
            self.rng_trap_switch(core, pid, trap, target)?;
        }

        // L1 part, common to all levels: exactly one overlay slot enabled.
        let c = self.core_mut(core);
        c.por.clear_overlays();
        let _ = c.por.set(target.poe, PermEncoding::FULL);

        let cost = self.cfg.cost_model;
        let entry = self.trace.record(core, from, target, &cost);
        self.core_domain[core.0 as usize] = Some(target);
        Ok(entry)
    }

    /// Applies the privileged register updates of an L2/L3 switch after
    /// monitor validation succeeded.
    pub(crate) fn apply_privileged_switch(&mut self, core: CoreId, target: DomainId, window: Option<BypassWindow>) {
        let reusable: Vec<u8> = self.cfg.registry.reusable_slots().collect();
        let c = &mut self.cores[core.0 as usize];
        for slot in reusable {
            let _ = c.pire.set(slot, PermEncoding::NONE);
        }
        let _ = c.pire.set(target.pie, PermEncoding::FULL);
        if let Some(w) = window {
            c.windows.clear();
            c.windows.push(w);
        }
    }

    /// Leaves the current domain: revocation clears every overlay slot and
    /// costs one user-level switch. Base permissions and the bypass window
    /// may stay live; the cleared overlay alone seals the domains.
    pub fn exit_domain(&mut self, core: CoreId) {
        self.core_mut(core).por.clear_overlays();
        self.charge(self.cfg.cost_model.l1_switch);
    }

    /// Backs up a function-pointer value into the thread's PIM. The entry
    /// write must pass the access pipeline as a GCS store.
    pub fn pim_backup(
        &mut self,
        core: CoreId,
        thread: ThreadId,
        value: TaggedFnPtr,
        sig: &str,
    ) -> Result<TaggedFnPtr, CpiRuntimeError> {
        let pid = self.bound_process(core).expect("core bound");
        // The instrumentation sequence runs whether or not the store is
        // skipped, so the model cost is charged per invocation.
        self.charge(self.cfg.cost_model.ptr_backup);
        let proc = self.procs.get(&pid).unwrap();
        let t = proc.thread(thread).ok_or(CpiRuntimeError::UnknownThread(thread))?;

        // Skip detection happens inside PimRegion::backup; the slot write
        // only occurs for fresh backups.
        let fresh = match value.slot() {
            Some(idx) => (idx as u32) >= t.pim.next_slot(),
            None => true,
        };
        if fresh {
            let slot_vaddr = t.pim.slot_vaddr(t.pim.next_slot());
            self.access(core, slot_vaddr, AccessKind::GcsStore, Mode::User)
                .map_err(CpiRuntimeError::Fault)?;
        }
        let tid = crate::cpi::type_id(sig);
        let proc = self.procs.get_mut(&pid).unwrap();
        let t = proc
            .threads
            .iter_mut()
            .find(|t| t.id == thread)
            .ok_or(CpiRuntimeError::UnknownThread(thread))?;
        t.pim.backup(value, tid).map_err(CpiRuntimeError::PimFull)
    }

    /// Validates a function-pointer value against its PIM backup and the
    /// call site's expected signature. Returns the verified code address.
    pub fn pim_check(
        &mut self,
        core: CoreId,
        thread: ThreadId,
        value: TaggedFnPtr,
        expected_sig: &str,
    ) -> Result<u64, CpiRuntimeError> {
        let pid = self.bound_process(core).expect("core bound");
        self.charge(self.cfg.cost_model.ptr_check);
        let proc = self.procs.get(&pid).unwrap();
        let t = proc.thread(thread).ok_or(CpiRuntimeError::UnknownThread(thread))?;
        if let Some(slot) = value.slot() {
            if (slot as u32) < t.pim.next_slot() {
                // The lookup itself is an ordinary read of the PIM.
                let vaddr = t.pim.slot_vaddr(slot as u32);
                self.access(core, vaddr, AccessKind::Read, Mode::User)
                    .map_err(CpiRuntimeError::Fault)?;
            }
        }
        let tid = crate::cpi::type_id(expected_sig);
        let proc = self.procs.get(&pid).unwrap();
        let t = proc.thread(thread).unwrap();
        t.pim.check(value, tid).map_err(CpiRuntimeError::Violation)
    }

    /// Pushes a return address onto the thread's protected stack.
    pub fn gcs_push(
        &mut self,
        core: CoreId,
        thread: ThreadId,
        ret_addr: u64,
    ) -> Result<(), CpiRuntimeError> {
        let pid = self.bound_process(core).expect("core bound");
        let proc = self.procs.get(&pid).unwrap();
        let t = proc.thread(thread).ok_or(CpiRuntimeError::UnknownThread(thread))?;
        let depth = t.shadow.depth() as u64;
        let top = t.gcs_vbase + depth * 8;
        self.access(core, top, AccessKind::GcsStore, Mode::User)
            .map_err(CpiRuntimeError::Fault)?;
        let c = self.core_mut(core);
        c.gcspr = top + 8;
        let proc = self.procs.get_mut(&pid).unwrap();
        let t = proc.threads.iter_mut().find(|t| t.id == thread).unwrap();
        t.shadow.push(ret_addr);
        Ok(())
    }

    /// Pops the protected stack and verifies the link register against it.
    pub fn gcs_ret(&mut self, core: CoreId, thread: ThreadId, lr: u64) -> Result<(), CpiRuntimeError> {
        let pid = self.bound_process(core).expect("core bound");
        let proc = self.procs.get_mut(&pid).unwrap();
        let t = proc
            .threads
            .iter_mut()
            .find(|t| t.id == thread)
            .ok_or(CpiRuntimeError::UnknownThread(thread))?;
        t.shadow.ret(lr).map_err(CpiRuntimeError::Cfi)?;
        let depth = t.shadow.depth() as u64;
        let base = t.gcs_vbase;
        self.core_mut(core).gcspr = base + depth * 8;
        Ok(())
    }
}
