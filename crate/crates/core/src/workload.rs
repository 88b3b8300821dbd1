// SPDX-License-Identifier: Apache-2.0

//! Server workload generation and the end-to-end switching simulation.
//!
//! A workload is a stream of connection and request events over a set of
//! logical worker threads. Connections are handed to workers round-robin;
//! each worker keeps up to `domains_per_core` connections open at once and
//! serves requests in runs, so a connection's requests cluster in time.
//!
//! Under the seeded-random interleave (the default), the next connection a
//! worker serves is drawn with locality weights over the worker's open
//! slots: usually the cyclically next slot, often another slot of the same
//! 28-slot cohort, rarely a slot of a different cohort. Slot cohorts mirror
//! PAS blocks under the affinity allocator, which is what keeps privileged
//! switches rare; the same stream replayed against the round-robin
//! allocator scatters neighboring slots across base-permission groups and
//! address spaces, raising the trap rate. Generation itself never consults
//! the allocator, so one stream supports paired policy comparisons.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::domain::{
    metrics, AllocPolicy, Allocator, ConnId, CostModel, DomainId, DomainUniverse, Exhausted,
    Metrics, MetricsError, SwitchLevel, SwitchTrace, WorkerId, DOMAINS_PER_PAS,
};
use crate::exec::CoreId;
use crate::perm::PieRegistry;

/// Bucket weight for the cyclically next open slot.
const CONSEC_WEIGHT: f64 = 0.50;
/// Bucket weight for other open slots in the same cohort.
const COHORT_WEIGHT: f64 = 0.45;
/// Base bucket weight for slots in other cohorts, scaled by how many other
/// cohorts are actually open (saturating at seven).
const FAR_WEIGHT: f64 = 0.18;
/// Bounds of the per-turn run length under the random interleave.
const RUN_MIN: u32 = 18;
const RUN_MAX: u32 = 28;
/// Slots per cohort; mirrors the domains addressable inside one PAS.
const COHORT_SLOTS: u64 = DOMAINS_PER_PAS as u64;

/// Request interleaving policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Interleave {
    /// Strict rotation over open connections, one request per turn.
    RoundRobinArrival,
    /// Seeded locality-weighted runs; the default.
    Random { seed: u64 },
}

/// Workload shape and simulation parameters.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorkloadConfig {
    pub workers: u32,
    pub connections: u32,
    pub requests_per_connection: u32,
    /// Concurrent-connection capacity per core, which is also the number
    /// of domains a core's worker cycles through.
    pub domains_per_core: u32,
    pub interleave: Interleave,
    pub alloc_policy: AllocPolicy,
    pub cost_model: CostModel,
    /// Reuse freed domains before opening fresh blocks.
    pub reuse_freed: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            workers: 2,
            connections: 1000,
            requests_per_connection: 30,
            domains_per_core: 28,
            interleave: Interleave::Random { seed: 1 },
            alloc_policy: AllocPolicy::Affinity,
            cost_model: CostModel::default(),
            reuse_freed: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkloadError {
    InvalidConfig(&'static str),
    Exhausted,
    EmptyTrace,
}

impl fmt::Display for WorkloadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadError::InvalidConfig(what) => write!(f, "invalid workload config: {what}"),
            WorkloadError::Exhausted => write!(f, "domain universe exhausted"),
            WorkloadError::EmptyTrace => write!(f, "workload produced no switches"),
        }
    }
}

impl From<Exhausted> for WorkloadError {
    fn from(_: Exhausted) -> Self {
        WorkloadError::Exhausted
    }
}

impl From<MetricsError> for WorkloadError {
    fn from(_: MetricsError) -> Self {
        WorkloadError::EmptyTrace
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.workers == 0 {
            return Err(WorkloadError::InvalidConfig("workers must be at least 1"));
        }
        if self.connections == 0 {
            return Err(WorkloadError::InvalidConfig("connections must be at least 1"));
        }
        if self.requests_per_connection == 0 {
            return Err(WorkloadError::InvalidConfig("requests_per_connection must be at least 1"));
        }
        if self.domains_per_core == 0 {
            return Err(WorkloadError::InvalidConfig("domains_per_core must be at least 1"));
        }
        self.cost_model
            .validate()
            .map_err(|_| WorkloadError::InvalidConfig("cost model fields must be non-negative"))?;
        Ok(())
    }

    /// Physical address spaces the run needs: one block of 28 domains per
    /// started cohort per worker.
    pub fn required_pas(&self) -> u16 {
        let blocks_per_worker = (self.domains_per_core as u64).div_ceil(COHORT_SLOTS).max(1);
        (self.workers as u64 * blocks_per_worker) as u16
    }
}

/// Workload stream events.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Event {
    ConnectionOpen { conn: ConnId, worker: WorkerId },
    Request { conn: ConnId, worker: WorkerId },
    ConnectionClose { conn: ConnId, worker: WorkerId },
}

struct OpenConn {
    conn: ConnId,
    slot: u64,
    remaining: u32,
}

struct WorkerGen {
    id: WorkerId,
    pending: VecDeque<ConnId>,
    open: Vec<OpenConn>,
    /// Slots vacated by closed connections, oldest first. Opens take these
    /// before fresh slots, mirroring the allocator's freed-first policy so
    /// slot adjacency and domain adjacency stay aligned.
    freed_slots: VecDeque<u64>,
    next_fresh_slot: u64,
    capacity: u64,
    current_slot: Option<u64>,
}

impl WorkerGen {
    fn done(&self) -> bool {
        self.pending.is_empty() && self.open.is_empty()
    }

    fn occupied_sorted(&self) -> Vec<u64> {
        let mut slots: Vec<u64> = self.open.iter().map(|c| c.slot).collect();
        slots.sort_unstable();
        slots
    }

    fn by_slot(&self, slot: u64) -> usize {
        self.open.iter().position(|c| c.slot == slot).expect("occupied slot")
    }

    /// Cyclically next occupied slot after `slot`, staying inside the
    /// slot's cohort while it has occupants; an exhausted cohort falls back
    /// to the globally next occupied slot.
    fn next_slot_after(&self, slot: u64) -> Option<u64> {
        let slots = self.occupied_sorted();
        if slots.len() < 2 {
            return None;
        }
        let cohort = slot / COHORT_SLOTS;
        let in_cohort = |s: &&u64| **s / COHORT_SLOTS == cohort && **s != slot;
        slots
            .iter()
            .find(|s| **s > slot && in_cohort(s))
            .or_else(|| slots.iter().find(in_cohort))
            .or_else(|| slots.iter().find(|s| **s > slot))
            .or_else(|| slots.iter().find(|s| **s != slot))
            .copied()
    }
}

/// Deterministic workload stream for a config. The stream depends only on
/// the config (shape, interleave, seed), never on the allocation policy.
pub fn generate(cfg: &WorkloadConfig) -> Result<Vec<Event>, WorkloadError> {
    cfg.validate()?;
    let mut rng = match cfg.interleave {
        Interleave::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Interleave::RoundRobinArrival => None,
    };

    let mut workers: Vec<WorkerGen> = (0..cfg.workers)
        .map(|w| WorkerGen {
            id: w,
            pending: (0..cfg.connections as u64)
                .filter(|c| (*c % cfg.workers as u64) == w as u64)
                .collect(),
            open: Vec::new(),
            freed_slots: VecDeque::new(),
            next_fresh_slot: 0,
            capacity: cfg.domains_per_core as u64,
            current_slot: None,
        })
        .collect();

    let mut events = Vec::new();
    loop {
        let mut progressed = false;
        for w in workers.iter_mut() {
            if w.done() {
                continue;
            }
            progressed = true;
            worker_turn(w, cfg, rng.as_mut(), &mut events);
        }
        if !progressed {
            break;
        }
    }
    Ok(events)
}

fn worker_turn(
    w: &mut WorkerGen,
    cfg: &WorkloadConfig,
    mut rng: Option<&mut ChaCha8Rng>,
    events: &mut Vec<Event>,
) {
    // Admit one pending connection per turn; opens across workers stay
    // interleaved in global arrival order.
    if (w.open.len() as u64) < w.capacity && !w.pending.is_empty() {
        let slot = match w.freed_slots.pop_front() {
            Some(s) => s,
            None => {
                let s = w.next_fresh_slot;
                w.next_fresh_slot += 1;
                s
            }
        };
        let conn = w.pending.pop_front().unwrap();
        w.open.push(OpenConn { conn, slot, remaining: cfg.requests_per_connection });
        events.push(Event::ConnectionOpen { conn, worker: w.id });
    }
    if w.open.is_empty() {
        return;
    }

    let slot = match &mut rng {
        Some(rng) => pick_slot_random(w, rng),
        None => match w.current_slot.and_then(|s| w.next_slot_after(s)) {
            Some(next) => next,
            None => w.open[0].slot,
        },
    };
    let idx = w.by_slot(slot);

    let run = match &mut rng {
        Some(rng) => RUN_MIN + (rng.next_u32() % (RUN_MAX - RUN_MIN + 1)),
        None => 1,
    };
    let run = run.min(w.open[idx].remaining);

    for _ in 0..run {
        events.push(Event::Request { conn: w.open[idx].conn, worker: w.id });
    }
    w.open[idx].remaining -= run;
    w.current_slot = Some(slot);

    if w.open[idx].remaining == 0 {
        let closed = w.open.swap_remove(idx);
        events.push(Event::ConnectionClose { conn: closed.conn, worker: w.id });
        // The vacated slot stays the locality anchor; the next pick
        // continues from this position.
        w.freed_slots.push_back(closed.slot);
    }
}

/// Locality-weighted slot selection over the worker's open connections.
fn pick_slot_random(w: &mut WorkerGen, rng: &mut ChaCha8Rng) -> u64 {
    let current = match w.current_slot {
        Some(s) => s,
        None => return w.open[0].slot,
    };
    let slots = w.occupied_sorted();
    if slots.len() == 1 {
        return slots[0];
    }

    let consec = w.next_slot_after(current);
    let cohort_of = |s: u64| s / COHORT_SLOTS;
    let cohort: Vec<u64> = slots
        .iter()
        .filter(|s| **s != current && cohort_of(**s) == cohort_of(current) && Some(**s) != consec)
        .copied()
        .collect();
    let far: Vec<u64> = slots
        .iter()
        .filter(|s| **s != current && cohort_of(**s) != cohort_of(current) && Some(**s) != consec)
        .copied()
        .collect();

    let mut far_cohorts: Vec<u64> = far.iter().map(|s| cohort_of(*s)).collect();
    far_cohorts.sort_unstable();
    far_cohorts.dedup();
    let far_scale = (far_cohorts.len() as f64 / 7.0).min(1.0);

    let w_consec = if consec.is_some() { CONSEC_WEIGHT } else { 0.0 };
    let w_cohort = if cohort.is_empty() { 0.0 } else { COHORT_WEIGHT };
    let w_far = if far.is_empty() { 0.0 } else { FAR_WEIGHT * far_scale };
    let total = w_consec + w_cohort + w_far;
    if total == 0.0 {
        return consec.unwrap_or(slots[0]);
    }

    let draw = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * total;
    if draw < w_consec {
        consec.unwrap()
    } else if draw < w_consec + w_cohort {
        cohort[(rng.next_u64() % cohort.len() as u64) as usize]
    } else {
        far[(rng.next_u64() % far.len() as u64) as usize]
    }
}

/// Per-core slice of a run report.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoreReport {
    pub core: u32,
    pub metrics: Metrics,
}

/// Counts of monitor involvement implied by the trace.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonitorSummary {
    /// Privileged switch requests validated through the trap path.
    pub privileged_switch_validations: u64,
    /// Bypass-window reprogramming events, each with a TLB flush.
    pub tlb_flushes: u64,
}

/// End-to-end report of one simulation run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub policy: AllocPolicy,
    pub workers: u32,
    pub connections: u32,
    pub requests_per_connection: u32,
    pub domains_per_core: u32,
    pub interleave: Interleave,
    /// Steady-state switch metrics; each core's cold-start entry is
    /// excluded from the rates.
    pub metrics: Metrics,
    pub warmup_switches: u64,
    pub per_core: Vec<CoreReport>,
    /// Cycles over the whole trace including warmup entries.
    pub total_cycles: f64,
    pub monitor: MonitorSummary,
    /// Switch level of the first thousand requests, one digit per request.
    pub request_levels: String,
}

/// Runs the workload: every request switches the dispatching worker's core
/// into the connection's domain, and the trace yields the per-level hit
/// rates and average switch cost.
pub fn simulate(cfg: &WorkloadConfig) -> Result<RunReport, WorkloadError> {
    cfg.validate()?;
    let events = generate(cfg)?;
    let universe = DomainUniverse::new(cfg.required_pas(), &PieRegistry::default());
    let mut allocator = Allocator::new(cfg.alloc_policy, universe, cfg.reuse_freed);

    let mut trace = SwitchTrace::new();
    let mut current: Vec<Option<DomainId>> = alloc::vec![None; cfg.workers as usize];
    let mut levels = String::new();

    for event in &events {
        match *event {
            Event::ConnectionOpen { conn, worker } => {
                allocator.alloc(conn, worker)?;
            }
            Event::Request { conn, worker } => {
                let domain = allocator.lookup(conn).ok_or(WorkloadError::Exhausted)?;
                let from = current[worker as usize];
                let entry = trace.record(CoreId(worker), from, domain, &cfg.cost_model);
                current[worker as usize] = Some(domain);
                if levels.len() < 1000 {
                    levels.push(match entry.level {
                        SwitchLevel::L1 => '1',
                        SwitchLevel::L2 => '2',
                        SwitchLevel::L3 => '3',
                    });
                }
            }
            Event::ConnectionClose { conn, .. } => {
                allocator.release(conn);
            }
        }
    }

    let steady = metrics(trace.steady_entries())?;
    let warmup_switches = (trace.len() - steady.total as usize) as u64;
    let mut per_core = Vec::new();
    for w in 0..cfg.workers {
        let core_entries: Vec<_> = trace
            .steady_entries()
            .filter(|e| e.core == CoreId(w))
            .collect();
        if let Ok(m) = metrics(core_entries.iter().copied()) {
            per_core.push(CoreReport { core: w, metrics: m });
        }
    }
    let total_cycles: f64 = trace.entries().iter().map(|e| e.cycles).sum();
    let monitor = MonitorSummary {
        privileged_switch_validations: steady.l2_count
            + steady.l3_count
            + warmup_switches,
        tlb_flushes: steady.l3_count + warmup_switches,
    };

    Ok(RunReport {
        policy: cfg.alloc_policy,
        workers: cfg.workers,
        connections: cfg.connections,
        requests_per_connection: cfg.requests_per_connection,
        domains_per_core: cfg.domains_per_core,
        interleave: cfg.interleave,
        metrics: steady,
        warmup_switches,
        per_core,
        total_cycles,
        monitor,
        request_levels: levels,
    })
}

/// Memory model of the per-PAS-per-GPT comparison scheme: one cloned
/// top-level table per zone versus zero clones for the bypass-window
/// design.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GptCloneReport {
    pub zones: u32,
    pub clone_count: u32,
    pub extra_gpt_bytes: u64,
    /// Clones the bypass-window design allocates for the same zones.
    pub window_design_clones: u32,
}

/// Default size of one cloned top-level table.
pub const L0_TABLE_BYTES: u64 = 4096;

pub fn baseline_per_pas_gpt(zones: u32, l0_table_bytes: u64) -> GptCloneReport {
    GptCloneReport {
        zones,
        clone_count: zones,
        extra_gpt_bytes: zones as u64 * l0_table_bytes,
        window_design_clones: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> WorkloadConfig {
        WorkloadConfig {
            workers: 2,
            connections: 40,
            requests_per_connection: 30,
            domains_per_core: 7,
            interleave: Interleave::Random { seed: 1 },
            alloc_policy: AllocPolicy::Affinity,
            cost_model: CostModel::default(),
            reuse_freed: true,
        }
    }

    #[test]
    fn connections_dispatch_round_robin() {
        let cfg = small_cfg();
        let events = generate(&cfg).unwrap();
        for e in &events {
            if let Event::ConnectionOpen { conn, worker } = e {
                assert_eq!(*conn % cfg.workers as u64, *worker as u64);
            }
        }
    }

    #[test]
    fn stream_is_deterministic_for_a_seed() {
        let cfg = small_cfg();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = WorkloadConfig {
            interleave: Interleave::Random { seed: 2 },
            ..small_cfg()
        };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn every_connection_gets_exactly_its_requests() {
        let cfg = small_cfg();
        let events = generate(&cfg).unwrap();
        let mut requests = alloc::collections::BTreeMap::new();
        let mut opens = 0;
        let mut closes = 0;
        for e in &events {
            match e {
                Event::ConnectionOpen { .. } => opens += 1,
                Event::Request { conn, .. } => *requests.entry(*conn).or_insert(0u32) += 1,
                Event::ConnectionClose { .. } => closes += 1,
            }
        }
        assert_eq!(opens, cfg.connections);
        assert_eq!(closes, cfg.connections);
        assert_eq!(requests.len(), cfg.connections as usize);
        for (conn, count) in requests {
            assert_eq!(count, cfg.requests_per_connection, "conn {conn}");
        }
    }

    #[test]
    fn per_connection_domains_stick_for_lifetime() {
        let cfg = small_cfg();
        let events = generate(&cfg).unwrap();
        let universe = DomainUniverse::new(cfg.required_pas(), &PieRegistry::default());
        let mut alloc = Allocator::new(cfg.alloc_policy, universe, true);
        let mut seen: alloc::collections::BTreeMap<ConnId, DomainId> =
            alloc::collections::BTreeMap::new();
        for e in &events {
            match *e {
                Event::ConnectionOpen { conn, worker } => {
                    alloc.alloc(conn, worker).unwrap();
                }
                Event::Request { conn, .. } => {
                    let d = alloc.lookup(conn).unwrap();
                    if let Some(prev) = seen.insert(conn, d) {
                        assert_eq!(prev, d, "conn {conn} moved domains");
                    }
                }
                Event::ConnectionClose { conn, .. } => {
                    alloc.release(conn);
                }
            }
        }
    }

    #[test]
    fn seven_domains_per_core_is_pure_l1() {
        let report = simulate(&small_cfg()).unwrap();
        assert_eq!(report.metrics.l1_rate, 1.0);
        assert_eq!(report.metrics.l2_count, 0);
        assert_eq!(report.metrics.l3_count, 0);
        assert_eq!(report.warmup_switches, 2);
        assert!((report.metrics.avg_cycles - CostModel::default().l1_switch).abs() < 1e-9);
    }

    #[test]
    fn rates_sum_to_one() {
        for d in [7u32, 14, 28, 112] {
            let cfg = WorkloadConfig { domains_per_core: d, ..small_cfg() };
            let r = simulate(&cfg).unwrap();
            let sum = r.metrics.l1_rate + r.metrics.l2_rate + r.metrics.l3_rate;
            assert!((sum - 1.0).abs() < 1e-12, "d={d}");
        }
    }

    #[test]
    fn round_robin_arrival_is_seedless_deterministic() {
        let cfg = WorkloadConfig {
            interleave: Interleave::RoundRobinArrival,
            ..small_cfg()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn baseline_memory_model() {
        let r = baseline_per_pas_gpt(25, L0_TABLE_BYTES);
        assert_eq!(r.extra_gpt_bytes, 100 * 1024);
        assert_eq!(r.clone_count, 25);
        assert_eq!(r.window_design_clones, 0);
        assert_eq!(baseline_per_pas_gpt(0, L0_TABLE_BYTES).extra_gpt_bytes, 0);
        for n in [1u32, 7, 64] {
            assert_eq!(baseline_per_pas_gpt(n, L0_TABLE_BYTES).extra_gpt_bytes, n as u64 * 4096);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg();
        cfg.workers = 0;
        assert!(matches!(simulate(&cfg), Err(WorkloadError::InvalidConfig(_))));
        let mut cfg = small_cfg();
        cfg.cost_model.l1_switch = -1.0;
        assert!(matches!(simulate(&cfg), Err(WorkloadError::InvalidConfig(_))));
    }
}
