// SPDX-License-Identifier: Apache-2.0

//! Executable attack scenarios. Each scenario is data: a machine shape, a
//! list of steps with per-step expectations, and the fault class that must
//! block the attack. A scenario whose attack step completes cleanly is a
//! breach, and a breach is a test failure.
//!
//! The golden suite ships twelve scenarios modeling the archetypes behind
//! known CVEs (out-of-bounds reads and writes into secret domains, return
//! address and function-pointer overwrites, pointer reuse) plus privileged
//! attacks from a hostile kernel (page-table retagging, register tampering
//! across traps, overlapping mappings, forged switch requests) and the
//! cross-core window probe, together with a benign control run that must
//! finish with zero faults.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::cpi::program::ToyProgram;
use crate::cpi::{pass, CfiError, CpiViolationKind};
use crate::domain::DomainId;
use crate::exec::{AccessKind, CoreId, Fault, Mode, Pid};
use crate::interp::{Interp, ProgramHalt};
use crate::machine::{Machine, MachineConfig, SwitchError, SwitchVia, ThreadId};
use crate::monitor::{MonitorError, ProcessSpec, PteRule, TrapCause};
use crate::perm::{PageTableEntry, PermEncoding};

/// Window scale used by scenario machines: 1 MiB windows keep the address
/// arithmetic real while the granule maps stay tiny.
pub const SCENARIO_WINDOW_SCALE: u64 = 1024;

/// Fault classes an attack can be blocked with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OutcomeClass {
    PermFault,
    TranslationFault,
    Gpf,
    CfiViolation,
    CpiViolation(CpiViolationKind),
    Rejected(PteRule),
    SwitchRejected,
}

impl core::fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            OutcomeClass::PermFault => write!(f, "PermFault"),
            OutcomeClass::TranslationFault => write!(f, "TranslationFault"),
            OutcomeClass::Gpf => write!(f, "GPF"),
            OutcomeClass::CfiViolation => write!(f, "CfiViolation"),
            OutcomeClass::CpiViolation(k) => write!(f, "CpiViolation({k:?})"),
            OutcomeClass::Rejected(r) => write!(f, "Rejected({r:?})"),
            OutcomeClass::SwitchRejected => write!(f, "SwitchRejected"),
        }
    }
}

/// What actually happened when a step ran.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StepOutcome {
    Ok,
    Blocked(OutcomeClass),
    /// The step failed in a way outside the fault model (setup bug).
    Error(String),
}

/// What a step is expected to do.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StepExpect {
    Ok,
    Fault(OutcomeClass),
}

/// Symbolic addresses resolvable against the scenario machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AddrExpr {
    /// The n-th page mapped for a domain during setup.
    DomainPage { domain: DomainId, page: u64 },
    /// A page of the untrusted region.
    UntrustedPage { page: u64 },
    /// A page of a thread's pointer-integrity memory.
    PimPage { thread: u32, page: u64 },
    /// A page of a thread's protected stack.
    GcsPage { thread: u32, page: u64 },
    /// An unmapped address inside a zone.
    ZoneUnmapped { pas: u16, page: u64 },
}

/// Physical addresses resolvable against the scenario machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PhysExpr {
    /// A granule of the process page tables.
    PageTable { offset: u64 },
    /// A granule of the untrusted image.
    Untrusted { offset: u64 },
}

/// One scenario step.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Step {
    SwitchDomain { core: u32, domain: DomainId, via: SwitchVia },
    ExitDomain { core: u32 },
    Access { core: u32, mode: Mode, at: AddrExpr, kind: AccessKind },
    WriteMem { core: u32, at: AddrExpr, value: u64 },
    ReadMem { core: u32, at: AddrExpr },
    WritePor { core: u32, slot: u8, enc: u8 },
    TrapEnter { core: u32, cause: TrapCause },
    Resume { core: u32 },
    Syscall { core: u32 },
    KernelWritePire { core: u32, slot: u8, enc: u8 },
    KernelWritePor { core: u32, slot: u8, enc: u8 },
    /// Kernel update-in-place of an existing domain page's indexes.
    KernelRetag { at: AddrExpr, new_pie: u8, new_poe: u8 },
    /// Kernel request to map a fresh page at a symbolic virtual address.
    KernelMapAt { at: AddrExpr, exec: bool },
    /// Kernel data write to a physical granule through its linear map.
    KernelPhysWrite { core: u32, at: PhysExpr },
    /// Parse, optionally instrument/scan, and execute a toy program.
    RunProgram { text: String, instrument: bool, scan: bool },
}

/// Machine shape a scenario runs against.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScenarioSetup {
    pub cores: u32,
    pub zones: u16,
    /// Domains to map during setup, with a page count each.
    pub maps: Vec<(DomainId, u64)>,
    pub pim_capacity: u32,
    /// Initial granule labels applied to the OS GPT, as
    /// (start granule, end granule, label) triples.
    pub initial_labels: Vec<(u64, u64, crate::gpt::PasLabel)>,
}

impl Default for ScenarioSetup {
    fn default() -> Self {
        ScenarioSetup {
            cores: 1,
            zones: 1,
            maps: alloc::vec![(DomainId::new(0, 3, 1), 2)],
            pim_capacity: 64,
            initial_labels: Vec::new(),
        }
    }
}

/// A registered scenario.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scenario {
    pub name: String,
    pub summary: String,
    /// CVE identifiers whose archetype the scenario covers.
    pub cve_refs: Vec<String>,
    pub setup: ScenarioSetup,
    pub steps: Vec<(Step, StepExpect)>,
    /// The class the attack must be blocked with; `None` marks a benign
    /// control run that must finish with zero faults.
    pub expected: Option<OutcomeClass>,
}

/// Result of one scenario run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Verdict {
    /// Attack blocked with exactly the expected class.
    Blocked(OutcomeClass),
    /// Benign control completed with zero faults.
    Clean,
    /// A step deviated from its expectation; the detail names the step.
    Breached { step: usize, expected: String, actual: String },
}

#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioRun {
    pub name: String,
    pub verdict: Verdict,
    pub outcomes: Vec<StepOutcome>,
    /// Ordered monitor event log of the run.
    pub events: Vec<crate::monitor::MonitorEvent>,
}

impl ScenarioRun {
    pub fn blocked_as_expected(&self) -> bool {
        matches!(self.verdict, Verdict::Blocked(_) | Verdict::Clean)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownScenario(pub String);

impl core::fmt::Display for UnknownScenario {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "unknown scenario `{}`", self.0)
    }
}

/// Execution environment built from a setup.
struct Env {
    machine: Machine,
    pid: Pid,
    /// Mapped pages per domain, in map order.
    domain_pages: Vec<(DomainId, Vec<u64>)>,
}

fn build_env(setup: &ScenarioSetup) -> Result<Env, String> {
    let cfg = MachineConfig {
        cores: setup.cores,
        window_scale: SCENARIO_WINDOW_SCALE,
        ..MachineConfig::default()
    };
    let mut machine = Machine::new(cfg);
    let os_gpt = machine.monitor.os_gpt;
    for (start, end, label) in &setup.initial_labels {
        machine
            .gpt_mut(os_gpt)
            .expect("os gpt")
            .set_pas(*start, *end, *label, crate::gpt::SecurityState::RootWorld)
            .map_err(|e| format!("initial label: {e}"))?;
    }
    let pid = machine
        .spawn_process(&ProcessSpec {
            zones: setup.zones,
            pim_capacity: setup.pim_capacity,
            ..ProcessSpec::default()
        })
        .map_err(|e| format!("spawn: {e}"))?;
    for c in 0..setup.cores {
        machine.bind_core(CoreId(c), pid).map_err(|e| format!("bind: {e}"))?;
    }

    let page = machine.cfg.granule_size;
    let mut domain_pages = Vec::new();
    let mut next_free: alloc::collections::BTreeMap<u16, u64> = alloc::collections::BTreeMap::new();
    for (domain, pages) in &setup.maps {
        let zone_vbase = machine
            .process(pid)
            .and_then(|p| p.zone(domain.pas))
            .map(|z| z.vbase)
            .ok_or_else(|| format!("no zone for pas {}", domain.pas))?;
        let offset = next_free.entry(domain.pas).or_insert(0);
        let vaddr = zone_vbase + *offset * page;
        machine
            .zone_mmap(pid, *domain, vaddr, *pages, false)
            .map_err(|e| format!("zone_mmap: {e}"))?;
        let mapped: Vec<u64> = (0..*pages).map(|i| vaddr + i * page).collect();
        *offset += *pages;
        domain_pages.push((*domain, mapped));
    }
    Ok(Env { machine, pid, domain_pages })
}

impl Env {
    fn resolve(&self, at: &AddrExpr) -> Result<u64, String> {
        let page = self.machine.cfg.granule_size;
        let proc = self.machine.process(self.pid).ok_or("no process")?;
        match at {
            AddrExpr::DomainPage { domain, page: n } => self
                .domain_pages
                .iter()
                .find(|(d, _)| d == domain)
                .and_then(|(_, pages)| pages.get(*n as usize).copied())
                .ok_or_else(|| format!("domain {domain} page {n} not mapped")),
            AddrExpr::UntrustedPage { page: n } => Ok(proc.untrusted_vbase + n * page),
            AddrExpr::PimPage { thread, page: n } => proc
                .thread(ThreadId(*thread))
                .map(|t| t.pim.base() + n * page)
                .ok_or_else(|| "no thread".to_string()),
            AddrExpr::GcsPage { thread, page: n } => proc
                .thread(ThreadId(*thread))
                .map(|t| t.gcs_vbase + n * page)
                .ok_or_else(|| "no thread".to_string()),
            AddrExpr::ZoneUnmapped { pas, page: n } => proc
                .zone(*pas)
                .map(|z| z.vbase + z.bytes - (n + 1) * page)
                .ok_or_else(|| "no zone".to_string()),
        }
    }

    fn resolve_phys(&self, at: &PhysExpr) -> Result<u64, String> {
        let page = self.machine.cfg.granule_size;
        let proc = self.machine.process(self.pid).ok_or("no process")?;
        match at {
            PhysExpr::PageTable { offset } => Ok((proc.pt_range.start + offset) * page),
            PhysExpr::Untrusted { offset } => proc
                .aspace
                .lookup(proc.untrusted_vbase / page)
                .map(|pte| (pte.phys_page + offset) * page)
                .ok_or_else(|| "untrusted unmapped".to_string()),
        }
    }
}

fn fault_class(fault: Fault) -> OutcomeClass {
    match fault {
        Fault::Translation { .. } => OutcomeClass::TranslationFault,
        Fault::Perm { .. } => OutcomeClass::PermFault,
        Fault::Gpf { .. } => OutcomeClass::Gpf,
    }
}

fn halt_class(halt: &ProgramHalt) -> StepOutcome {
    match halt {
        ProgramHalt::Fault(f) => StepOutcome::Blocked(fault_class(*f)),
        ProgramHalt::Cpi(v) => StepOutcome::Blocked(OutcomeClass::CpiViolation(v.kind)),
        ProgramHalt::Cfi(CfiError::Violation { .. }) | ProgramHalt::Cfi(CfiError::StackUnderflow) => {
            StepOutcome::Blocked(OutcomeClass::CfiViolation)
        }
        ProgramHalt::PimFull => StepOutcome::Error("pim full".to_string()),
        ProgramHalt::BadProgram(m) => StepOutcome::Error(m.clone()),
    }
}

fn exec_step(env: &mut Env, step: &Step) -> StepOutcome {
    match step {
        Step::SwitchDomain { core, domain, via } => {
            match env.machine.switch_domain(CoreId(*core), *domain, *via) {
                Ok(_) => StepOutcome::Ok,
                Err(SwitchError::Rejected(_)) | Err(SwitchError::RawViaBlocked) => {
                    StepOutcome::Blocked(OutcomeClass::SwitchRejected)
                }
                Err(e) => StepOutcome::Error(format!("{e}")),
            }
        }
        Step::ExitDomain { core } => {
            env.machine.exit_domain(CoreId(*core));
            StepOutcome::Ok
        }
        Step::Access { core, mode, at, kind } => match env.resolve(at) {
            Ok(vaddr) => match env.machine.access(CoreId(*core), vaddr, *kind, *mode) {
                Ok(_) => StepOutcome::Ok,
                Err(f) => StepOutcome::Blocked(fault_class(f)),
            },
            Err(e) => StepOutcome::Error(e),
        },
        Step::WriteMem { core, at, value } => match env.resolve(at) {
            Ok(vaddr) => match env.machine.mem_write(CoreId(*core), vaddr, *value, Mode::User) {
                Ok(()) => StepOutcome::Ok,
                Err(f) => StepOutcome::Blocked(fault_class(f)),
            },
            Err(e) => StepOutcome::Error(e),
        },
        Step::ReadMem { core, at } => match env.resolve(at) {
            Ok(vaddr) => match env.machine.mem_read(CoreId(*core), vaddr, Mode::User) {
                Ok(_) => StepOutcome::Ok,
                Err(f) => StepOutcome::Blocked(fault_class(f)),
            },
            Err(e) => StepOutcome::Error(e),
        },
        Step::WritePor { core, slot, enc } => {
            let enc = PermEncoding::new(*enc & 0xF).expect("masked");
            env.machine.user_write_por(CoreId(*core), *slot, enc);
            StepOutcome::Ok
        }
        Step::TrapEnter { core, cause } => match env.machine.trap_enter(CoreId(*core), *cause) {
            Ok(()) => StepOutcome::Ok,
            Err(e) => StepOutcome::Error(format!("{e}")),
        },
        Step::Resume { core } => match env.machine.resume_process(CoreId(*core)) {
            Ok(()) => StepOutcome::Ok,
            Err(MonitorError::ContextMismatch) => StepOutcome::Error("context mismatch".into()),
            Err(e) => StepOutcome::Error(format!("{e}")),
        },
        Step::Syscall { core } => match env.machine.do_syscall(CoreId(*core)) {
            Ok(()) => StepOutcome::Ok,
            Err(e) => StepOutcome::Error(format!("{e}")),
        },
        Step::KernelWritePire { core, slot, enc } => {
            let enc = PermEncoding::new(*enc & 0xF).expect("masked");
            match env.machine.kernel_write_pire(CoreId(*core), *slot, enc) {
                Ok(()) => StepOutcome::Ok,
                Err(e) => StepOutcome::Error(format!("{e}")),
            }
        }
        Step::KernelWritePor { core, slot, enc } => {
            let enc = PermEncoding::new(*enc & 0xF).expect("masked");
            match env.machine.kernel_write_por(CoreId(*core), *slot, enc) {
                Ok(()) => StepOutcome::Ok,
                Err(e) => StepOutcome::Error(format!("{e}")),
            }
        }
        Step::KernelRetag { at, new_pie, new_poe } => {
            let page = env.machine.cfg.granule_size;
            let vaddr = match env.resolve(at) {
                Ok(v) => v,
                Err(e) => return StepOutcome::Error(e),
            };
            let vp = vaddr / page;
            let old = match env.machine.process(env.pid).and_then(|p| p.aspace.lookup(vp)) {
                Some(pte) => *pte,
                None => return StepOutcome::Error("retag target unmapped".into()),
            };
            let new_pte = PageTableEntry::new(vp, old.phys_page, *new_pie, *new_poe);
            match env.machine.kernel_map_request(env.pid, Some(vp), new_pte, false) {
                Ok(()) => StepOutcome::Ok,
                Err(r) => StepOutcome::Blocked(OutcomeClass::Rejected(r.rule)),
            }
        }
        Step::KernelMapAt { at, exec } => {
            let page = env.machine.cfg.granule_size;
            let vaddr = match env.resolve(at) {
                Ok(v) => v,
                Err(e) => return StepOutcome::Error(e),
            };
            // A fresh anonymous mapping proposal targeting OS-free memory.
            let free_phys = 1 << 30;
            let new_pte = PageTableEntry::new(vaddr / page, free_phys / page, 4, 0);
            match env.machine.kernel_map_request(env.pid, None, new_pte, *exec) {
                Ok(()) => StepOutcome::Ok,
                Err(r) => StepOutcome::Blocked(OutcomeClass::Rejected(r.rule)),
            }
        }
        Step::KernelPhysWrite { core, at } => match env.resolve_phys(at) {
            Ok(paddr) => match env.machine.kernel_phys_access(CoreId(*core), paddr) {
                Ok(()) => StepOutcome::Ok,
                Err(f) => StepOutcome::Blocked(fault_class(f)),
            },
            Err(e) => StepOutcome::Error(e),
        },
        Step::RunProgram { text, instrument, scan } => {
            let prog = match ToyProgram::parse(text) {
                Ok(p) => p,
                Err(e) => return StepOutcome::Error(format!("parse: {e}")),
            };
            let prog = if *instrument { pass::instrument(&prog).0 } else { prog };
            let prog = if *scan { pass::binary_scan(&prog).0 } else { prog };
            let pid = env.pid;
            let mut interp = Interp::new(&mut env.machine, pid, CoreId(0), ThreadId(0));
            match interp.run(&prog) {
                Ok(_) => StepOutcome::Ok,
                Err(halt) => halt_class(&halt),
            }
        }
    }
}

/// Executes a registered scenario against a fresh machine.
pub fn run_scenario(scenario: &Scenario) -> ScenarioRun {
    let mut env = match build_env(&scenario.setup) {
        Ok(env) => env,
        Err(e) => {
            return ScenarioRun {
                name: scenario.name.clone(),
                verdict: Verdict::Breached {
                    step: 0,
                    expected: "setup".into(),
                    actual: e,
                },
                outcomes: Vec::new(),
                events: Vec::new(),
            }
        }
    };

    let mut outcomes = Vec::new();
    for (i, (step, expect)) in scenario.steps.iter().enumerate() {
        let outcome = exec_step(&mut env, step);
        let matched = match (expect, &outcome) {
            (StepExpect::Ok, StepOutcome::Ok) => true,
            (StepExpect::Fault(want), StepOutcome::Blocked(got)) => want == got,
            _ => false,
        };
        if !matched {
            let verdict = Verdict::Breached {
                step: i,
                expected: format!("{expect:?}"),
                actual: format!("{outcome:?}"),
            };
            outcomes.push(outcome);
            return ScenarioRun {
                name: scenario.name.clone(),
                verdict,
                outcomes,
                events: env.machine.events,
            };
        }
        outcomes.push(outcome);
    }

    let verdict = match scenario.expected {
        Some(class) => Verdict::Blocked(class),
        None => Verdict::Clean,
    };
    ScenarioRun { name: scenario.name.clone(), verdict, outcomes, events: env.machine.events }
}

/// Looks up a golden scenario by name and runs it.
pub fn run_scenario_by_name(name: &str) -> Result<ScenarioRun, UnknownScenario> {
    golden_suite()
        .into_iter()
        .find(|s| s.name == name)
        .map(|s| run_scenario(&s))
        .ok_or_else(|| UnknownScenario(name.to_string()))
}

fn dom(pas: u16, pie: u8, poe: u8) -> DomainId {
    DomainId::new(pas, pie, poe)
}

/// The golden scenario suite: twelve attacks plus the benign control.
#[allow(clippy::vec_init_then_push)]
pub fn golden_suite() -> Vec<Scenario> {
    use OutcomeClass as O;
    use StepExpect::{Fault, Ok as StepOk};

    let a = dom(0, 3, 1);
    let b = dom(0, 3, 2);
    let c = dom(0, 6, 1);
    let far = dom(1, 3, 1);

    let mut suite = Vec::new();

    // Untrusted code over-reads past its buffer into a secret domain.
    suite.push(Scenario {
        name: "heartbleed_oob_read".into(),
        summary: "out-of-bounds read from untrusted code into a key domain".into(),
        cve_refs: alloc::vec!["CVE-2014-0160".into()],
        setup: ScenarioSetup::default(),
        steps: alloc::vec![
            (Step::SwitchDomain { core: 0, domain: a, via: SwitchVia::Trampoline }, StepOk),
            (Step::WriteMem { core: 0, at: AddrExpr::DomainPage { domain: a, page: 0 }, value: 0x5ec2e7 }, StepOk),
            (Step::ExitDomain { core: 0 }, StepOk),
            (Step::Access { core: 0, mode: Mode::User, at: AddrExpr::DomainPage { domain: a, page: 1 }, kind: AccessKind::Read }, Fault(O::PermFault)),
        ],
        expected: Some(O::PermFault),
    });

    // Out-of-bounds write clobbering a secret domain.
    suite.push(Scenario {
        name: "oob_write_libx11".into(),
        summary: "out-of-bounds write from untrusted code into a domain".into(),
        cve_refs: alloc::vec![
            "CVE-2023-3138".into(),
            "CVE-2017-2800".into(),
            "CVE-2017-18922".into(),
            "CVE-2022-24834".into(),
        ],
        setup: ScenarioSetup::default(),
        steps: alloc::vec![
            (Step::SwitchDomain { core: 0, domain: a, via: SwitchVia::Trampoline }, StepOk),
            (Step::ExitDomain { core: 0 }, StepOk),
            (Step::Access { core: 0, mode: Mode::User, at: AddrExpr::DomainPage { domain: a, page: 0 }, kind: AccessKind::Write }, Fault(O::PermFault)),
        ],
        expected: Some(O::PermFault),
    });

    // Stack smash overwriting the in-memory return address.
    suite.push(Scenario {
        name: "ret_overwrite_nginx".into(),
        summary: "return-address overwrite caught by the protected stack".into(),
        cve_refs: alloc::vec!["CVE-2013-2028".into()],
        setup: ScenarioSetup::default(),
        steps: alloc::vec![(
            Step::RunProgram {
                text: "call handler\nstore __ret0 0xbadc0de\nret\n".into(),
                instrument: true,
                scan: true,
            },
            Fault(O::CfiViolation),
        )],
        expected: Some(O::CfiViolation),
    });

    // Heap overflow clobbering a stored function pointer.
    suite.push(Scenario {
        name: "fnptr_overwrite_zlog".into(),
        summary: "function-pointer overwrite caught at the indirect call".into(),
        cve_refs: alloc::vec![
            "CVE-2024-22857".into(),
            "CVE-2015-7805".into(),
            "CVE-2016-5314".into(),
            "CVE-2021-44486".into(),
        ],
        setup: ScenarioSetup::default(),
        steps: alloc::vec![(
            Step::RunProgram {
                text: "store_fnptr record_func rule_output void(zlog_msg*)\n\
                       store record_func 0xdead00\n\
                       icall record_func void(zlog_msg*)\n"
                    .into(),
                instrument: true,
                scan: true,
            },
            Fault(O::CpiViolation(CpiViolationKind::AddrMismatch)),
        )],
        expected: Some(O::CpiViolation(CpiViolationKind::AddrMismatch)),
    });

    // Reusing a legitimately backed-up pointer of the wrong type.
    suite.push(Scenario {
        name: "fnptr_reuse_type_confusion".into(),
        summary: "reuse of a backed-up pointer with the wrong signature".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup::default(),
        steps: alloc::vec![(
            Step::RunProgram {
                text: "store_fnptr cb_int f_int void(int)\n\
                       store_fnptr cb_log f_log void(long)\n\
                       icall cb_log void(int)\n"
                    .into(),
                instrument: true,
                scan: true,
            },
            Fault(O::CpiViolation(CpiViolationKind::TypeMismatch)),
        )],
        expected: Some(O::CpiViolation(CpiViolationKind::TypeMismatch)),
    });

    // Kernel retags domain pages to ordinary permissions.
    suite.push(Scenario {
        name: "kernel_pte_retag".into(),
        summary: "kernel rewrite of domain page permission indexes".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup::default(),
        steps: alloc::vec![
            (Step::TrapEnter { core: 0, cause: TrapCause::Syscall }, StepOk),
            (
                Step::KernelRetag { at: AddrExpr::DomainPage { domain: a, page: 0 }, new_pie: 4, new_poe: 0 },
                Fault(O::Rejected(PteRule::SecureImmutable)),
            ),
            (
                Step::KernelPhysWrite { core: 0, at: PhysExpr::PageTable { offset: 0 } },
                Fault(O::Gpf),
            ),
            (Step::Resume { core: 0 }, StepOk),
        ],
        expected: Some(O::Rejected(PteRule::SecureImmutable)),
    });

    // Kernel grants itself domain access through the permission registers
    // while handling a syscall; the monitor restores them on resume.
    suite.push(Scenario {
        name: "kernel_reg_tamper_getpid".into(),
        summary: "register tampering across a trap is discarded on resume".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup {
            maps: alloc::vec![(dom(0, 3, 1), 1), (dom(0, 3, 2), 1)],
            ..ScenarioSetup::default()
        },
        steps: alloc::vec![
            (Step::SwitchDomain { core: 0, domain: a, via: SwitchVia::Trampoline }, StepOk),
            (Step::TrapEnter { core: 0, cause: TrapCause::Syscall }, StepOk),
            (Step::KernelWritePire { core: 0, slot: 3, enc: 0b0111 }, StepOk),
            (Step::KernelWritePor { core: 0, slot: 2, enc: 0b0111 }, StepOk),
            (Step::Resume { core: 0 }, StepOk),
            (
                Step::Access { core: 0, mode: Mode::User, at: AddrExpr::DomainPage { domain: b, page: 0 }, kind: AccessKind::Read },
                Fault(O::PermFault),
            ),
        ],
        expected: Some(O::PermFault),
    });

    // Iago-style mmap result overlapping the pointer-integrity region.
    suite.push(Scenario {
        name: "iago_mmap_overlap".into(),
        summary: "kernel-proposed mapping overlapping the PIM region".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup::default(),
        steps: alloc::vec![
            (Step::TrapEnter { core: 0, cause: TrapCause::Syscall }, StepOk),
            (
                Step::KernelMapAt { at: AddrExpr::PimPage { thread: 0, page: 0 }, exec: false },
                Fault(O::Rejected(PteRule::Overlap)),
            ),
            (Step::Resume { core: 0 }, StepOk),
        ],
        expected: Some(O::Rejected(PteRule::Overlap)),
    });

    // Kernel forges a privileged switch request under the OS GPT.
    suite.push(Scenario {
        name: "rng_trap_forgery".into(),
        summary: "forged switch request while the OS GPT is live".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup {
            maps: alloc::vec![(dom(0, 3, 1), 1), (dom(0, 6, 1), 1)],
            ..ScenarioSetup::default()
        },
        steps: alloc::vec![
            (Step::SwitchDomain { core: 0, domain: a, via: SwitchVia::Trampoline }, StepOk),
            (Step::TrapEnter { core: 0, cause: TrapCause::Syscall }, StepOk),
            (
                Step::SwitchDomain { core: 0, domain: c, via: SwitchVia::Trampoline },
                Fault(O::SwitchRejected),
            ),
            (Step::Resume { core: 0 }, StepOk),
        ],
        expected: Some(O::SwitchRejected),
    });

    // Pre-inlined GCS store neutralized by the binary scan.
    suite.push(Scenario {
        name: "stray_gcsstr_inline".into(),
        summary: "stray GCS store executes as a plain store and faults".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup::default(),
        steps: alloc::vec![(
            Step::RunProgram {
                text: "store_fnptr cb f_int void(int)\ngcsstr pim:0 0xdead\n".into(),
                instrument: true,
                scan: true,
            },
            Fault(O::PermFault),
        )],
        expected: Some(O::PermFault),
    });

    // Forged tag bits pointing past the PIM fill line.
    suite.push(Scenario {
        name: "pim_oob_index".into(),
        summary: "forged out-of-range slot index in a tagged pointer".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup::default(),
        steps: alloc::vec![(
            Step::RunProgram {
                text: "store_fnptr cb f_int void(int)\n\
                       store cb 0x3700000601000\n\
                       icall cb void(int)\n"
                    .into(),
                instrument: true,
                scan: true,
            },
            Fault(O::CpiViolation(CpiViolationKind::OutOfRange)),
        )],
        expected: Some(O::CpiViolation(CpiViolationKind::OutOfRange)),
    });

    // A window opened on one core never covers another core's accesses.
    suite.push(Scenario {
        name: "cross_core_window".into(),
        summary: "bypass window is per-core; the sibling core faults".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup {
            cores: 2,
            zones: 2,
            maps: alloc::vec![(dom(0, 3, 1), 1), (dom(1, 3, 1), 1)],
            ..ScenarioSetup::default()
        },
        steps: alloc::vec![
            (Step::SwitchDomain { core: 0, domain: a, via: SwitchVia::Trampoline }, StepOk),
            (Step::SwitchDomain { core: 1, domain: far, via: SwitchVia::Trampoline }, StepOk),
            (Step::ReadMem { core: 0, at: AddrExpr::DomainPage { domain: a, page: 0 } }, StepOk),
            (
                Step::Access { core: 1, mode: Mode::User, at: AddrExpr::DomainPage { domain: a, page: 0 }, kind: AccessKind::Read },
                Fault(O::Gpf),
            ),
        ],
        expected: Some(O::Gpf),
    });

    // Benign control: the same operations done legitimately, zero faults.
    suite.push(Scenario {
        name: "benign_baseline".into(),
        summary: "legitimate lifecycle across all three switch levels".into(),
        cve_refs: Vec::new(),
        setup: ScenarioSetup {
            cores: 1,
            zones: 2,
            maps: alloc::vec![(dom(0, 3, 1), 2), (dom(0, 6, 1), 1), (dom(1, 3, 1), 1)],
            ..ScenarioSetup::default()
        },
        steps: alloc::vec![
            (Step::SwitchDomain { core: 0, domain: a, via: SwitchVia::Trampoline }, StepOk),
            (Step::WriteMem { core: 0, at: AddrExpr::DomainPage { domain: a, page: 0 }, value: 0x11 }, StepOk),
            (Step::ReadMem { core: 0, at: AddrExpr::DomainPage { domain: a, page: 0 } }, StepOk),
            (Step::ExitDomain { core: 0 }, StepOk),
            (Step::SwitchDomain { core: 0, domain: c, via: SwitchVia::Trampoline }, StepOk),
            (Step::ReadMem { core: 0, at: AddrExpr::DomainPage { domain: c, page: 0 } }, StepOk),
            (Step::SwitchDomain { core: 0, domain: far, via: SwitchVia::Trampoline }, StepOk),
            (Step::ReadMem { core: 0, at: AddrExpr::DomainPage { domain: far, page: 0 } }, StepOk),
            (Step::Syscall { core: 0 }, StepOk),
            (
                Step::RunProgram {
                    text: ".globals\n\
                           global g_cb handler void(int)\n\
                           .text\n\
                           store_fnptr cb handler void(int)\n\
                           icall cb void(int)\n\
                           ret\n\
                           icall g_cb void(int)\n\
                           ret\n\
                           call helper\n\
                           ret\n"
                        .into(),
                    instrument: true,
                    scan: true,
                },
                StepOk,
            ),
            (Step::ExitDomain { core: 0 }, StepOk),
        ],
        expected: None,
    });

    suite
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_suite_has_thirteen_entries() {
        let suite = golden_suite();
        assert_eq!(suite.len(), 13);
        let names: Vec<&str> = suite.iter().map(|s| s.name.as_str()).collect();
        assert!(names.contains(&"heartbleed_oob_read"));
        assert!(names.contains(&"benign_baseline"));
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        assert!(run_scenario_by_name("made_up").is_err());
    }

    #[test]
    fn heartbleed_scenario_blocks() {
        let run = run_scenario_by_name("heartbleed_oob_read").unwrap();
        assert_eq!(run.verdict, Verdict::Blocked(OutcomeClass::PermFault), "{:?}", run.outcomes);
    }

    #[test]
    fn benign_baseline_is_clean() {
        let run = run_scenario_by_name("benign_baseline").unwrap();
        assert_eq!(run.verdict, Verdict::Clean, "{:?}", run.outcomes);
    }
}
