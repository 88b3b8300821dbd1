// SPDX-License-Identifier: Apache-2.0

//! Executes toy programs against a machine: stores and calls go through
//! the full access pipeline, pointer backups and checks through the
//! pointer-integrity runtime, and calls/returns through the protected
//! stack.
//!
//! Loading resolves function symbols to synthetic code addresses and data
//! cells to words in the process's untrusted region. The simulated program
//! stack lives in ordinary (attacker-writable) memory cells named
//! `__ret0`, `__ret1`, ... so corruption of an in-memory return address is
//! expressible as a plain store to that cell; the protected stack catches
//! the mismatch at return.

use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::cpi::program::{InitField, Op, Target, ToyProgram};
use crate::cpi::TaggedFnPtr;
use crate::exec::{AccessKind, CoreId, Fault, Mode, Pid};
use crate::machine::{CpiRuntimeError, Machine, ThreadId};

/// Synthetic code addresses start here.
const CODE_BASE: u64 = 0x40_0000;
/// Synthetic return addresses encode the call site.
const RET_BASE: u64 = 0x60_0000;
/// Cell area offset inside the untrusted region.
const CELL_AREA_OFFSET: u64 = 0x1000;

/// Why a program run terminated early.
#[derive(Clone, Debug, PartialEq)]
pub enum ProgramHalt {
    /// Memory access denied by the pipeline.
    Fault(Fault),
    /// Pointer check failed; the process terminates.
    Cpi(crate::cpi::CpiViolation),
    /// Protected-stack check failed.
    Cfi(crate::cpi::CfiError),
    /// Pointer-integrity memory exhausted.
    PimFull,
    /// Program referenced an unknown name or slot.
    BadProgram(String),
}

/// Counters from one program run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub executed: u64,
    pub backups: u64,
    pub checks: u64,
    pub calls: u64,
}

/// Interpreter state for one (process, thread, core) binding.
pub struct Interp<'m> {
    machine: &'m mut Machine,
    pid: Pid,
    core: CoreId,
    thread: ThreadId,
    symbols: BTreeMap<String, u64>,
    cells: BTreeMap<String, u64>,
    next_cell: u64,
    tag_cache: BTreeMap<String, TaggedFnPtr>,
    call_depth: u64,
}

impl<'m> Interp<'m> {
    pub fn new(machine: &'m mut Machine, pid: Pid, core: CoreId, thread: ThreadId) -> Interp<'m> {
        let cell_base = machine
            .process(pid)
            .map(|p| p.untrusted_vbase + CELL_AREA_OFFSET)
            .unwrap_or(CELL_AREA_OFFSET);
        Interp {
            machine,
            pid,
            core,
            thread,
            symbols: BTreeMap::new(),
            cells: BTreeMap::new(),
            next_cell: cell_base,
            tag_cache: BTreeMap::new(),
            call_depth: 0,
        }
    }

    fn sym_addr(&mut self, func: &str) -> u64 {
        let next = CODE_BASE + self.symbols.len() as u64 * 0x100;
        *self.symbols.entry(String::from(func)).or_insert(next)
    }

    fn cell_addr(&mut self, name: &str) -> u64 {
        match self.cells.get(name) {
            Some(addr) => *addr,
            None => {
                let addr = self.next_cell;
                self.next_cell += 8;
                self.cells.insert(String::from(name), addr);
                addr
            }
        }
    }

    fn resolve_target(&mut self, target: &Target) -> Result<ResolvedTarget, ProgramHalt> {
        match target {
            Target::Cell(name) => Ok(ResolvedTarget::Mem(self.cell_addr(name))),
            Target::PimSlot(slot) => {
                let proc = self
                    .machine
                    .process(self.pid)
                    .ok_or_else(|| ProgramHalt::BadProgram(String::from("no process")))?;
                let t = proc
                    .thread(self.thread)
                    .ok_or_else(|| ProgramHalt::BadProgram(String::from("no thread")))?;
                Ok(ResolvedTarget::Pim { vaddr: t.pim.slot_vaddr(*slot), slot: *slot })
            }
        }
    }

    /// The value a symbol currently propagates: its tagged form once it has
    /// been backed up, the untagged form otherwise.
    fn fn_value(&mut self, func: &str) -> TaggedFnPtr {
        if let Some(v) = self.tag_cache.get(func) {
            return *v;
        }
        TaggedFnPtr::untagged(self.sym_addr(func))
    }

    fn cpi_halt(err: CpiRuntimeError) -> ProgramHalt {
        match err {
            CpiRuntimeError::Fault(f) => ProgramHalt::Fault(f),
            CpiRuntimeError::Violation(v) => ProgramHalt::Cpi(v),
            CpiRuntimeError::Cfi(e) => ProgramHalt::Cfi(e),
            CpiRuntimeError::PimFull(_) => ProgramHalt::PimFull,
            CpiRuntimeError::UnknownThread(_) => {
                ProgramHalt::BadProgram(String::from("unknown thread"))
            }
        }
    }

    /// Copies the initialized-global segment into the PIM and patches each
    /// global cell with its stamped pointer. Runs before execution.
    pub fn load_globals(&mut self, prog: &ToyProgram) -> Result<u64, ProgramHalt> {
        let mut loaded = 0;
        for g in &prog.globals {
            let value = self.fn_value(&g.func);
            let tagged = self
                .machine
                .pim_backup(self.core, self.thread, value, &g.sig)
                .map_err(Self::cpi_halt)?;
            self.tag_cache.insert(g.func.clone(), tagged);
            let cell = self.cell_addr(&g.cell);
            self.machine
                .mem_write(self.core, cell, tagged.bits(), Mode::User)
                .map_err(ProgramHalt::Fault)?;
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Runs the program to completion or to its first halt.
    pub fn run(&mut self, prog: &ToyProgram) -> Result<RunStats, ProgramHalt> {
        let mut stats = RunStats::default();
        self.load_globals(prog)?;
        for (pc, instr) in prog.instrs.iter().enumerate() {
            stats.executed += 1;
            self.step(pc as u64, &instr.op, &mut stats)?;
        }
        Ok(stats)
    }

    fn step(&mut self, pc: u64, op: &Op, stats: &mut RunStats) -> Result<(), ProgramHalt> {
        match op {
            Op::PimBackup { func, sig } => {
                let value = self.fn_value(func);
                let tagged = self
                    .machine
                    .pim_backup(self.core, self.thread, value, sig)
                    .map_err(Self::cpi_halt)?;
                self.tag_cache.insert(func.clone(), tagged);
                stats.backups += 1;
            }
            Op::PimCheck { src, expected_sig } => {
                let vaddr = match self.resolve_target(src)? {
                    ResolvedTarget::Mem(v) => v,
                    ResolvedTarget::Pim { vaddr, .. } => vaddr,
                };
                let raw = self
                    .machine
                    .mem_read(self.core, vaddr, Mode::User)
                    .map_err(ProgramHalt::Fault)?;
                self.machine
                    .pim_check(self.core, self.thread, TaggedFnPtr(raw), expected_sig)
                    .map_err(Self::cpi_halt)?;
                stats.checks += 1;
            }
            Op::StoreFnPtr { dst, func, .. } | Op::BitcastStore { dst, func, .. } => {
                let value = self.fn_value(func);
                self.store(dst, value.bits())?;
            }
            Op::MemCopyInit { dst, fields } => {
                for (k, field) in fields.iter().enumerate() {
                    let cell = alloc::format!("{dst}.{k}");
                    let value = match field {
                        InitField::FnPtr { func, .. } => self.fn_value(func).bits(),
                        InitField::Data(v) => *v,
                    };
                    let vaddr = self.cell_addr(&cell);
                    self.machine
                        .mem_write(self.core, vaddr, value, Mode::User)
                        .map_err(ProgramHalt::Fault)?;
                }
            }
            Op::IndirectCall { src, .. } => {
                // The safety of the call rests entirely on the preceding
                // check instruction; an uninstrumented call dereferences
                // whatever the cell holds.
                let vaddr = match self.resolve_target(src)? {
                    ResolvedTarget::Mem(v) => v,
                    ResolvedTarget::Pim { vaddr, .. } => vaddr,
                };
                self.machine
                    .mem_read(self.core, vaddr, Mode::User)
                    .map_err(ProgramHalt::Fault)?;
                self.push_ret(pc)?;
                stats.calls += 1;
            }
            Op::DirectCall { .. } => {
                self.push_ret(pc)?;
                stats.calls += 1;
            }
            Op::Ret => {
                if self.call_depth == 0 {
                    // Return on an empty stack reaches the protected-stack
                    // underflow check directly.
                    self.machine
                        .gcs_ret(self.core, self.thread, 0)
                        .map_err(Self::cpi_halt)?;
                    return Ok(());
                }
                self.call_depth -= 1;
                let cell = alloc::format!("__ret{}", self.call_depth);
                let vaddr = self.cell_addr(&cell);
                let lr = self
                    .machine
                    .mem_read(self.core, vaddr, Mode::User)
                    .map_err(ProgramHalt::Fault)?;
                self.machine
                    .gcs_ret(self.core, self.thread, lr)
                    .map_err(Self::cpi_halt)?;
            }
            Op::RawGcsStore { dst, value } => match self.resolve_target(dst)? {
                ResolvedTarget::Pim { vaddr, slot } => {
                    self.machine
                        .access(self.core, vaddr, AccessKind::GcsStore, Mode::User)
                        .map_err(ProgramHalt::Fault)?;
                    // The store lands: this is exactly the corruption the
                    // binary scan exists to make impossible.
                    let masked = *value & crate::cpi::ADDR_MASK;
                    let proc = self.machine.process_mut(self.pid).expect("process");
                    if let Some(t) = proc.threads.iter_mut().find(|t| t.id == self.thread) {
                        if let Some(entry) = t.pim.entry(slot as u16).copied() {
                            t.pim.corrupt(slot as u16, crate::cpi::PimEntry {
                                fn_addr: masked,
                                type_id: entry.type_id,
                            });
                        }
                    }
                }
                ResolvedTarget::Mem(vaddr) => {
                    self.machine
                        .access(self.core, vaddr, AccessKind::GcsStore, Mode::User)
                        .map_err(ProgramHalt::Fault)?;
                }
            },
            Op::RawPorWrite { slot, enc } => {
                let enc = crate::perm::PermEncoding::new(*enc & 0xF).expect("masked");
                self.machine.user_write_por(self.core, *slot, enc);
            }
            Op::PlainStore { dst, value } => {
                self.store(dst, *value)?;
            }
            Op::Nop { .. } => {}
        }
        Ok(())
    }

    fn store(&mut self, dst: &Target, value: u64) -> Result<(), ProgramHalt> {
        let vaddr = match self.resolve_target(dst)? {
            ResolvedTarget::Mem(v) => v,
            ResolvedTarget::Pim { vaddr, .. } => vaddr,
        };
        self.machine
            .mem_write(self.core, vaddr, value, Mode::User)
            .map_err(ProgramHalt::Fault)
    }

    fn push_ret(&mut self, pc: u64) -> Result<(), ProgramHalt> {
        let ret_addr = RET_BASE + pc * 4;
        let cell = alloc::format!("__ret{}", self.call_depth);
        let vaddr = self.cell_addr(&cell);
        self.machine
            .mem_write(self.core, vaddr, ret_addr, Mode::User)
            .map_err(ProgramHalt::Fault)?;
        self.machine
            .gcs_push(self.core, self.thread, ret_addr)
            .map_err(Self::cpi_halt)?;
        self.call_depth += 1;
        Ok(())
    }
}

enum ResolvedTarget {
    Mem(u64),
    Pim { vaddr: u64, slot: u32 },
}
