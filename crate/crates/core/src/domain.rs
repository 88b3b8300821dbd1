// SPDX-License-Identifier: Apache-2.0

//! Three-tier domain identity, switch classification, the cycle cost
//! model, trace metrics and the domain allocation policies.
//!
//! A domain is identified by (PAS, PIE slot, POE slot). Switching between
//! two domains costs one of three levels: overlay-register writes stay in
//! user mode (L1), changing the base-permission slot needs a privileged
//! register update (L2), and moving to another physical address space
//! additionally reprograms the core's bypass window (L3).

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;
use core::fmt;

use crate::exec::CoreId;
use crate::perm::PieRegistry;

/// POE slots usable as domains (slot 0 is fixed).
pub const POE_DOMAIN_SLOTS: u8 = 7;
/// Domains addressable inside one PAS with the default registry:
/// four reusable PIE slots times seven POE slots.
pub const DOMAINS_PER_PAS: u32 = 28;

/// Three-tier domain identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DomainId {
    /// Index of the PAS (one bypass-window region) holding the domain.
    pub pas: u16,
    /// Reusable PIE slot carrying the base permission.
    pub pie: u8,
    /// POE slot carrying the overlay permission, never 0.
    pub poe: u8,
}

impl DomainId {
    pub fn new(pas: u16, pie: u8, poe: u8) -> DomainId {
        DomainId { pas, pie, poe }
    }

    /// Checks the slot invariants against a registry.
    pub fn validate(&self, registry: &PieRegistry) -> Result<(), DomainError> {
        if !registry.is_reusable(self.pie) {
            return Err(DomainError::PieNotReusable(self.pie));
        }
        if self.poe == 0 || self.poe > POE_DOMAIN_SLOTS {
            return Err(DomainError::InvalidPoe(self.poe));
        }
        Ok(())
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(pas{}, pi:{}, po:{})", self.pas, self.pie, self.poe)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainError {
    PieNotReusable(u8),
    InvalidPoe(u8),
}

impl fmt::Display for DomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainError::PieNotReusable(s) => write!(f, "PIE slot {s} is not reusable"),
            DomainError::InvalidPoe(s) => write!(f, "POE slot {s} is not a domain slot"),
        }
    }
}

/// Switching tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SwitchLevel {
    L1,
    L2,
    L3,
}

impl SwitchLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            SwitchLevel::L1 => "L1",
            SwitchLevel::L2 => "L2",
            SwitchLevel::L3 => "L3",
        }
    }
}

/// Classifies a transition. A cold start (no previous domain) counts as L3:
/// the first entry must open a bypass window.
pub fn classify_switch(from: Option<DomainId>, to: DomainId) -> SwitchLevel {
    match from {
        None => SwitchLevel::L3,
        Some(f) if f.pas != to.pas => SwitchLevel::L3,
        Some(f) if f.pie != to.pie => SwitchLevel::L2,
        Some(_) => SwitchLevel::L1,
    }
}

/// Cycle costs of the basic operations, overridable via scenario files.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CostModel {
    pub l1_switch: f64,
    pub l2_switch: f64,
    pub l3_switch: f64,
    pub ptr_backup: f64,
    pub ptr_check: f64,
    pub syscall: f64,
    pub hooked_syscall: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            l1_switch: 74.13,
            l2_switch: 6_169.47,
            l3_switch: 6_173.36,
            ptr_backup: 18.02,
            ptr_check: 11.07,
            syscall: 725.36,
            hooked_syscall: 6_533.63,
        }
    }
}

impl CostModel {
    pub fn switch_cost(&self, level: SwitchLevel) -> f64 {
        match level {
            SwitchLevel::L1 => self.l1_switch,
            SwitchLevel::L2 => self.l2_switch,
            SwitchLevel::L3 => self.l3_switch,
        }
    }

    /// Per-trap monitoring overhead: the hooked syscall cost minus the
    /// native syscall share.
    pub fn trap_overhead(&self) -> f64 {
        self.hooked_syscall - self.syscall
    }

    pub fn validate(&self) -> Result<(), CostModelError> {
        let fields = [
            self.l1_switch,
            self.l2_switch,
            self.l3_switch,
            self.ptr_backup,
            self.ptr_check,
            self.syscall,
            self.hooked_syscall,
        ];
        if fields.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(CostModelError::NegativeCost);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostModelError {
    NegativeCost,
}

impl fmt::Display for CostModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cost model fields must be non-negative")
    }
}

/// One recorded domain entry.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceEntry {
    pub core: CoreId,
    pub from: Option<DomainId>,
    pub to: DomainId,
    pub level: SwitchLevel,
    pub cycles: f64,
}

impl TraceEntry {
    /// A cold-start entry: the first switch a core performs.
    pub fn is_warmup(&self) -> bool {
        self.from.is_none()
    }
}

/// Ordered switch trace. The level of each entry is derived from its
/// (from, to) pair at record time and never stored inconsistently.
#[derive(Clone, Debug, Default)]
pub struct SwitchTrace {
    entries: Vec<TraceEntry>,
}

impl SwitchTrace {
    pub fn new() -> SwitchTrace {
        SwitchTrace { entries: Vec::new() }
    }

    pub fn record(&mut self, core: CoreId, from: Option<DomainId>, to: DomainId, cost: &CostModel) -> TraceEntry {
        let level = classify_switch(from, to);
        let entry = TraceEntry { core, from, to, level, cycles: cost.switch_cost(level) };
        self.entries.push(entry);
        entry
    }

    pub fn push(&mut self, entry: TraceEntry) {
        debug_assert_eq!(entry.level, classify_switch(entry.from, entry.to));
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries excluding per-core cold starts.
    pub fn steady_entries(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| !e.is_warmup())
    }
}

/// Per-level counts, rates and the average switch cost of a trace.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub total: u64,
    pub l1_count: u64,
    pub l2_count: u64,
    pub l3_count: u64,
    pub l1_rate: f64,
    pub l2_rate: f64,
    pub l3_rate: f64,
    /// Arithmetic mean of per-entry cycles; equals the rate-weighted mean
    /// of per-level costs when entries carry model costs.
    pub avg_cycles: f64,
    pub total_cycles: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricsError {
    EmptyTrace,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot compute metrics of an empty trace")
    }
}

/// Computes hit rates and the exact weighted mean cost over `entries`.
pub fn metrics<'a, I>(entries: I) -> Result<Metrics, MetricsError>
where
    I: IntoIterator<Item = &'a TraceEntry>,
{
    let mut counts = [0u64; 3];
    let mut sums = [0f64; 3];
    for e in entries {
        let i = e.level as usize;
        counts[i] += 1;
        sums[i] += e.cycles;
    }
    let total = counts.iter().sum::<u64>();
    if total == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    let n = total as f64;
    let total_cycles = sums[0] + sums[1] + sums[2];
    Ok(Metrics {
        total,
        l1_count: counts[0],
        l2_count: counts[1],
        l3_count: counts[2],
        l1_rate: counts[0] as f64 / n,
        l2_rate: counts[1] as f64 / n,
        l3_rate: counts[2] as f64 / n,
        avg_cycles: total_cycles / n,
        total_cycles,
    })
}

/// The addressable domain universe: `pas_count` physical address spaces,
/// each holding one block of reusable-PIE x POE domains. Enumeration order
/// is POE fastest, then PIE, then PAS, which keeps consecutive indices in
/// the same base-permission group for runs of seven.
#[derive(Clone, Debug)]
pub struct DomainUniverse {
    pas_count: u16,
    reusable: Vec<u8>,
}

impl DomainUniverse {
    pub fn new(pas_count: u16, registry: &PieRegistry) -> DomainUniverse {
        DomainUniverse { pas_count, reusable: registry.reusable_slots().collect() }
    }

    pub fn pas_count(&self) -> u16 {
        self.pas_count
    }

    pub fn domains_per_pas(&self) -> u32 {
        self.reusable.len() as u32 * POE_DOMAIN_SLOTS as u32
    }

    pub fn total(&self) -> u64 {
        self.pas_count as u64 * self.domains_per_pas() as u64
    }

    /// Domain at allocation-order index `i`.
    pub fn domain_at(&self, i: u64) -> Option<DomainId> {
        if i >= self.total() {
            return None;
        }
        let per_pas = self.domains_per_pas() as u64;
        let pas = (i / per_pas) as u16;
        Some(self.domain_in_block(pas, (i % per_pas) as u32))
    }

    /// The `i`-th domain of a block, POE-major drain order.
    pub fn domain_in_block(&self, pas: u16, i: u32) -> DomainId {
        debug_assert!(i < self.domains_per_pas());
        let pie = self.reusable[(i / POE_DOMAIN_SLOTS as u32) as usize];
        let poe = 1 + (i % POE_DOMAIN_SLOTS as u32) as u8;
        DomainId { pas, pie, poe }
    }
}

/// Allocation failure: the configured universe is full.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exhausted;

impl fmt::Display for Exhausted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "domain universe exhausted")
    }
}

/// Connection identifier inside a workload.
pub type ConnId = u64;
/// Logical worker-thread identifier inside the simulated server.
pub type WorkerId = u32;

/// Allocation policy selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AllocPolicy {
    RoundRobin,
    Affinity,
}

/// Global-order allocator: hands out the next unused domain in universe
/// order regardless of the assigning worker, mirroring connection arrival
/// order. Freed domains are reused first (FIFO) when enabled.
#[derive(Clone, Debug)]
pub struct RoundRobinAlloc {
    universe: DomainUniverse,
    assigned: BTreeMap<ConnId, DomainId>,
    freed: VecDeque<DomainId>,
    next_fresh: u64,
    reuse_freed: bool,
}

impl RoundRobinAlloc {
    pub fn new(universe: DomainUniverse, reuse_freed: bool) -> RoundRobinAlloc {
        RoundRobinAlloc {
            universe,
            assigned: BTreeMap::new(),
            freed: VecDeque::new(),
            next_fresh: 0,
            reuse_freed,
        }
    }

    pub fn alloc(&mut self, conn: ConnId, _worker: WorkerId) -> Result<DomainId, Exhausted> {
        if let Some(d) = self.assigned.get(&conn) {
            return Ok(*d);
        }
        let domain = if self.reuse_freed {
            self.freed.pop_front()
        } else {
            None
        };
        let domain = match domain {
            Some(d) => d,
            None => {
                let d = self.universe.domain_at(self.next_fresh).ok_or(Exhausted)?;
                self.next_fresh += 1;
                d
            }
        };
        self.assigned.insert(conn, domain);
        Ok(domain)
    }

    pub fn lookup(&self, conn: ConnId) -> Option<DomainId> {
        self.assigned.get(&conn).copied()
    }

    pub fn release(&mut self, conn: ConnId) {
        if let Some(d) = self.assigned.remove(&conn) {
            self.freed.push_back(d);
        }
    }
}

#[derive(Clone, Debug, Default)]
struct WorkerBlocks {
    /// Claimed PAS indices, in claim order.
    blocks: Vec<u16>,
    /// Slots consumed in the most recently claimed block.
    used_in_last: u32,
    /// Freed domains awaiting reuse, oldest first.
    freed: VecDeque<DomainId>,
}

/// Affinity allocator: each worker owns whole blocks of consecutive
/// domains mapping to a single PAS and drains a block fully before opening
/// a new one. Workers never share blocks.
#[derive(Clone, Debug)]
pub struct AffinityAlloc {
    universe: DomainUniverse,
    assigned: BTreeMap<ConnId, (WorkerId, DomainId)>,
    workers: BTreeMap<WorkerId, WorkerBlocks>,
    next_pas: u16,
    reuse_freed: bool,
}

impl AffinityAlloc {
    pub fn new(universe: DomainUniverse, reuse_freed: bool) -> AffinityAlloc {
        AffinityAlloc {
            universe,
            assigned: BTreeMap::new(),
            workers: BTreeMap::new(),
            next_pas: 0,
            reuse_freed,
        }
    }

    pub fn alloc(&mut self, conn: ConnId, worker: WorkerId) -> Result<DomainId, Exhausted> {
        if let Some((_, d)) = self.assigned.get(&conn) {
            return Ok(*d);
        }
        let per_block = self.universe.domains_per_pas();
        let reuse = self.reuse_freed;
        let state = self.workers.entry(worker).or_default();

        let domain = if reuse {
            state.freed.pop_front()
        } else {
            None
        };
        let domain = match domain {
            Some(d) => d,
            None => {
                if state.blocks.is_empty() || state.used_in_last == per_block {
                    if self.next_pas >= self.universe.pas_count() {
                        return Err(Exhausted);
                    }
                    state.blocks.push(self.next_pas);
                    state.used_in_last = 0;
                    self.next_pas += 1;
                }
                let pas = *state.blocks.last().unwrap();
                let d = self.universe.domain_in_block(pas, state.used_in_last);
                state.used_in_last += 1;
                d
            }
        };
        self.assigned.insert(conn, (worker, domain));
        Ok(domain)
    }

    pub fn lookup(&self, conn: ConnId) -> Option<DomainId> {
        self.assigned.get(&conn).map(|(_, d)| *d)
    }

    pub fn release(&mut self, conn: ConnId) {
        if let Some((worker, d)) = self.assigned.remove(&conn) {
            self.workers.entry(worker).or_default().freed.push_back(d);
        }
    }

    /// PAS blocks owned by a worker, claim order.
    pub fn worker_blocks(&self, worker: WorkerId) -> &[u16] {
        self.workers.get(&worker).map(|w| w.blocks.as_slice()).unwrap_or(&[])
    }
}

/// Policy-dispatching allocator used by the workload simulation.
#[derive(Clone, Debug)]
pub enum Allocator {
    RoundRobin(RoundRobinAlloc),
    Affinity(AffinityAlloc),
}

impl Allocator {
    pub fn new(policy: AllocPolicy, universe: DomainUniverse, reuse_freed: bool) -> Allocator {
        match policy {
            AllocPolicy::RoundRobin => Allocator::RoundRobin(RoundRobinAlloc::new(universe, reuse_freed)),
            AllocPolicy::Affinity => Allocator::Affinity(AffinityAlloc::new(universe, reuse_freed)),
        }
    }

    pub fn alloc(&mut self, conn: ConnId, worker: WorkerId) -> Result<DomainId, Exhausted> {
        match self {
            Allocator::RoundRobin(a) => a.alloc(conn, worker),
            Allocator::Affinity(a) => a.alloc(conn, worker),
        }
    }

    pub fn lookup(&self, conn: ConnId) -> Option<DomainId> {
        match self {
            Allocator::RoundRobin(a) => a.lookup(conn),
            Allocator::Affinity(a) => a.lookup(conn),
        }
    }

    pub fn release(&mut self, conn: ConnId) {
        match self {
            Allocator::RoundRobin(a) => a.release(conn),
            Allocator::Affinity(a) => a.release(conn),
        }
    }
}
