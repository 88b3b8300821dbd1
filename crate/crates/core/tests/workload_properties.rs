// SPDX-License-Identifier: Apache-2.0

//! Workload-level invariants beyond the acceptance bands: structural
//! zero-rates at small domain counts, the per-request level sequence, and
//! report self-consistency.

use trizone_core::domain::{AllocPolicy, CostModel};
use trizone_core::workload::{simulate, Interleave, WorkloadConfig};

fn cfg(domains: u32, seed: u64, policy: AllocPolicy) -> WorkloadConfig {
    WorkloadConfig {
        workers: 2,
        connections: 1000,
        requests_per_connection: 30,
        domains_per_core: domains,
        interleave: Interleave::Random { seed },
        alloc_policy: policy,
        cost_model: CostModel::default(),
        reuse_freed: true,
    }
}

#[test]
fn affinity_within_one_pie_group_never_traps() {
    for seed in 0..5 {
        let r = simulate(&cfg(7, seed, AllocPolicy::Affinity)).unwrap();
        assert_eq!(r.metrics.l2_count, 0, "seed {seed}");
        assert_eq!(r.metrics.l3_count, 0, "seed {seed}");
    }
}

#[test]
fn affinity_within_one_pas_never_crosses_windows() {
    for d in [14u32, 21, 28] {
        for seed in 0..5 {
            let r = simulate(&cfg(d, seed, AllocPolicy::Affinity)).unwrap();
            assert_eq!(r.metrics.l3_count, 0, "domains {d} seed {seed}");
        }
    }
}

#[test]
fn request_level_sequence_covers_first_thousand() {
    let r = simulate(&cfg(224, 1, AllocPolicy::Affinity)).unwrap();
    assert_eq!(r.request_levels.len(), 1000);
    assert!(r.request_levels.chars().all(|c| matches!(c, '1' | '2' | '3')));
    // The first switch on a core is the cold start.
    assert_eq!(r.request_levels.chars().next(), Some('3'));
}

// The per-request switch-level mix of a large-domain run stays inside
// +/- 1.5 percentage points of the reference proportions 96.72 / 2.73 /
// 0.55 for user-level, base-permission and address-space switches.
#[test]
fn request_mix_matches_reference_proportions() {
    let r = simulate(&cfg(224, 1, AllocPolicy::Affinity)).unwrap();
    let m = r.metrics;
    assert!((m.l1_rate - 0.9672).abs() < 0.015, "L1 {:.4}", m.l1_rate);
    assert!((m.l2_rate - 0.0273).abs() < 0.015, "L2 {:.4}", m.l2_rate);
    assert!((m.l3_rate - 0.0055).abs() < 0.015, "L3 {:.4}", m.l3_rate);
}

#[test]
fn warmup_is_one_cold_start_per_active_core() {
    let r = simulate(&cfg(28, 1, AllocPolicy::Affinity)).unwrap();
    assert_eq!(r.warmup_switches, 2);
    assert_eq!(r.metrics.total, 30_000 - 2);
    let per_core_total: u64 = r.per_core.iter().map(|c| c.metrics.total).sum();
    assert_eq!(per_core_total, r.metrics.total);
}

#[test]
fn total_cycles_includes_warmup_entries() {
    let r = simulate(&cfg(7, 1, AllocPolicy::Affinity)).unwrap();
    let cost = CostModel::default();
    let steady = r.metrics.total_cycles;
    let expected = steady + r.warmup_switches as f64 * cost.l3_switch;
    assert!((r.total_cycles - expected).abs() < 1e-6);
}

#[test]
fn paired_streams_are_policy_independent() {
    use trizone_core::workload::generate;
    let a = generate(&cfg(28, 3, AllocPolicy::Affinity)).unwrap();
    let b = generate(&cfg(28, 3, AllocPolicy::RoundRobin)).unwrap();
    assert_eq!(a, b, "the stream must not depend on the allocation policy");
}

#[test]
fn monotone_trend_on_seed_means() {
    // The average switch cost trend over the domain sweep, averaged over
    // seeds to separate the structural trend from per-run noise.
    let seeds: Vec<u64> = (0..8).collect();
    let mut prev = 0.0;
    for d in [7u32, 14, 28, 112, 168, 224] {
        let mean: f64 = seeds
            .iter()
            .map(|s| simulate(&cfg(d, *s, AllocPolicy::Affinity)).unwrap().metrics.avg_cycles)
            .sum::<f64>()
            / seeds.len() as f64;
        assert!(mean >= prev, "seed-mean avg dropped at {d} domains: {mean:.2} < {prev:.2}");
        prev = mean;
    }
}
