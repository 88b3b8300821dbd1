// SPDX-License-Identifier: Apache-2.0

//! Integration tests over the assembled machine: the staged access
//! pipeline against an independent oracle, the zone mapping lifecycle,
//! trap accounting and delegation serialization.

use rand_core::{RngCore, SeedableRng};

use trizone_core::cpi::TaggedFnPtr;
use trizone_core::domain::DomainId;
use trizone_core::exec::{
    check_access, AccessKind, AddressSpace, CoreId, CoreState, Fault, Mode, Pid, Stage,
};
use trizone_core::gpt::{
    gpc_check, window_covers, AccessMatrix, BypassWindow, GranuleRange, Gpt, GptId, PasLabel,
    SecurityState,
};
use trizone_core::machine::{Machine, MachineConfig, SwitchError, SwitchVia, ThreadId};
use trizone_core::monitor::{ProcessSpec, TrapCause, ZoneMapError};
use trizone_core::perm::{
    decode_perm, effective_perm, PageClass, PageTableEntry, PermEncoding, PermSet, PireRegister,
    PorRegister,
};

const PAGE: u64 = 4096;
const SCALE: u64 = 1024;

fn scenario_machine(zones: u16, cores: u32) -> (Machine, Pid) {
    let mut machine = Machine::new(MachineConfig {
        cores,
        window_scale: SCALE,
        ..MachineConfig::default()
    });
    let pid = machine
        .spawn_process(&ProcessSpec { zones, pim_capacity: 64, ..ProcessSpec::default() })
        .unwrap();
    for c in 0..cores {
        machine.bind_core(CoreId(c), pid).unwrap();
    }
    (machine, pid)
}

// Independent three-stage oracle built from the primitive operations, for
// comparison against the pipeline over random configurations.
fn oracle_access(
    core: &CoreState,
    aspace: &AddressSpace,
    gpt: &Gpt,
    matrix: &AccessMatrix,
    vaddr: u64,
    kind: AccessKind,
) -> Result<u64, Stage> {
    let pte = match aspace.lookup(vaddr / PAGE) {
        Some(pte) => pte,
        None => return Err(Stage::Walk),
    };
    let allowed = if pte.is_gcs_page {
        matches!(kind, AccessKind::Read | AccessKind::GcsStore)
    } else {
        let base = decode_perm(core.pire.get(pte.pie_idx).unwrap(), PageClass::Data).data_perms();
        let overlay = decode_perm(core.por.get(pte.poe_idx).unwrap(), PageClass::Data).data_perms();
        let eff = effective_perm(base, overlay);
        match kind {
            AccessKind::Read => eff.read,
            AccessKind::Write => eff.write,
            AccessKind::Exec => eff.execute,
            AccessKind::GcsStore => false,
        }
    };
    if !allowed {
        return Err(Stage::Perm);
    }
    let paddr = pte.phys_page * PAGE + vaddr % PAGE;
    if !window_covers(&core.windows, paddr)
        && gpc_check(gpt, core.security_state, paddr, &[], matrix).is_err()
    {
        return Err(Stage::Gpc);
    }
    Ok(paddr)
}

#[test]
fn access_pipeline_matches_oracle_on_random_configs() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let matrix = AccessMatrix::default();
    for trial in 0..10_000 {
        let mut core = CoreState::new(CoreId(0), GptId(0));
        for slot in 0..16u8 {
            core.pire
                .set(slot, PermEncoding::new((rng.next_u32() & 0xF) as u8).unwrap())
                .unwrap();
        }
        for slot in 1..8u8 {
            let _ = core
                .por
                .set(slot, PermEncoding::new((rng.next_u32() & 0xF) as u8).unwrap());
        }
        if rng.next_u32() % 2 == 0 {
            let base = (rng.next_u64() % 8) * (1 << 20);
            core.windows.push(BypassWindow::new(base, 1 << 20, SCALE).unwrap());
        }

        let mut aspace = AddressSpace::new(Pid(1));
        for page in 0..8u64 {
            if rng.next_u32() % 4 != 0 {
                let pie = if rng.next_u32() % 8 == 0 { 11 } else { (rng.next_u32() % 10) as u8 };
                let pte = PageTableEntry::new(page, rng.next_u64() % 2048, pie, (rng.next_u32() % 8) as u8);
                aspace.map(pte).unwrap();
            }
        }

        let mut gpt = Gpt::new(GptId(0), PAGE);
        for _ in 0..4 {
            let start = rng.next_u64() % 2048;
            let label = PasLabel::ALL[(rng.next_u64() % 6) as usize];
            gpt.set_pas(start, start + 1 + rng.next_u64() % 64, label, SecurityState::RootWorld)
                .unwrap();
        }

        let vaddr = rng.next_u64() % (8 * PAGE);
        let kind = match rng.next_u32() % 4 {
            0 => AccessKind::Read,
            1 => AccessKind::Write,
            2 => AccessKind::Exec,
            _ => AccessKind::GcsStore,
        };

        let got = check_access(&core, &aspace, &gpt, &matrix, PAGE, vaddr, kind, Mode::User);
        let want = oracle_access(&core, &aspace, &gpt, &matrix, vaddr, kind);
        match (got, want) {
            (Ok(p), Ok(q)) => assert_eq!(p, q, "trial {trial}"),
            (Err(f), Err(stage)) => assert_eq!(f.stage(), stage, "trial {trial}"),
            (got, want) => panic!("trial {trial}: pipeline {got:?} oracle {want:?}"),
        }
    }
}

#[test]
fn zone_mmap_sets_domain_indexes_and_enforces_bounds() {
    let (mut machine, pid) = scenario_machine(1, 1);
    let d = DomainId::new(0, 6, 1);
    let zone_vbase = machine.process(pid).unwrap().zone(0).unwrap().vbase;

    machine.zone_mmap(pid, d, zone_vbase, 4, false).unwrap();
    let proc = machine.process(pid).unwrap();
    for i in 0..4 {
        let pte = proc.aspace.lookup(zone_vbase / PAGE + i).unwrap();
        assert_eq!((pte.pie_idx, pte.poe_idx), (6, 1));
        assert!(!pte.is_gcs_page);
    }

    // Exec request is refused.
    assert_eq!(
        machine.zone_mmap(pid, d, zone_vbase + 0x10000, 1, true),
        Err(ZoneMapError::ExecForbidden)
    );
    // Mapping outside the delegated zone region is refused.
    assert_eq!(
        machine.zone_mmap(pid, d, zone_vbase + (1 << 21), 1, false),
        Err(ZoneMapError::OutOfZone)
    );
    // Double-mapping the same range is refused.
    assert_eq!(
        machine.zone_mmap(pid, d, zone_vbase, 1, false),
        Err(ZoneMapError::OverlapRejected)
    );
    // A foreign PAS is out of zone.
    assert_eq!(
        machine.zone_mmap(pid, DomainId::new(3, 6, 1), zone_vbase, 1, false),
        Err(ZoneMapError::OutOfZone)
    );
}

#[test]
fn zone_capacity_cap_is_window_share() {
    let (mut machine, pid) = scenario_machine(1, 1);
    let d = DomainId::new(0, 3, 1);
    let zone = machine.process(pid).unwrap().zone(0).unwrap();
    let cap_bytes = zone.per_domain_capacity();
    let cap_pages = cap_bytes / PAGE;
    let vbase = zone.vbase;
    assert_eq!(cap_bytes, (1 << 20) / 28);

    machine.zone_mmap(pid, d, vbase, cap_pages, false).unwrap();
    let err = machine.zone_mmap(pid, d, vbase + cap_pages * PAGE, 1, false);
    assert_eq!(err, Err(ZoneMapError::CapacityExceeded { cap: cap_bytes }));

    // Freeing pages restores headroom, and munmap scrubs content.
    machine.mem_write(CoreId(0), vbase, 0x5ec2e7, Mode::Kernel).ok();
    machine.zone_munmap(pid, vbase, 1).unwrap();
    assert!(!machine.process(pid).unwrap().mem.contains_key(&vbase));
    machine.zone_mmap(pid, d, vbase + cap_pages * PAGE, 1, false).unwrap();
}

#[test]
fn domain_access_needs_switch_and_faults_after_exit() {
    let (mut machine, pid) = scenario_machine(1, 1);
    let d = DomainId::new(0, 3, 1);
    let vbase = machine.process(pid).unwrap().zone(0).unwrap().vbase;
    machine.zone_mmap(pid, d, vbase, 1, false).unwrap();

    // Before any switch: the overlay is closed.
    let err = machine.access(CoreId(0), vbase, AccessKind::Read, Mode::User).unwrap_err();
    assert_eq!(err.stage(), Stage::Perm);

    machine.switch_domain(CoreId(0), d, SwitchVia::Trampoline).unwrap();
    machine.mem_write(CoreId(0), vbase, 42, Mode::User).unwrap();
    assert_eq!(machine.mem_read(CoreId(0), vbase, Mode::User).unwrap(), 42);

    machine.exit_domain(CoreId(0));
    let err = machine.access(CoreId(0), vbase, AccessKind::Read, Mode::User).unwrap_err();
    assert_eq!(err.stage(), Stage::Perm);
}

#[test]
fn switch_lifecycle_keeps_one_slot_enabled_per_layer() {
    let (mut machine, pid) = scenario_machine(2, 1);
    let zone_vbase = |m: &Machine, pas: u16| m.process(pid).unwrap().zone(pas).unwrap().vbase;
    let domains = [
        DomainId::new(0, 3, 1),
        DomainId::new(0, 3, 5),
        DomainId::new(0, 9, 2),
        DomainId::new(1, 6, 7),
        DomainId::new(1, 3, 1),
    ];
    for (i, d) in domains.iter().enumerate() {
        let vbase = zone_vbase(&machine, d.pas) + i as u64 * PAGE;
        machine.zone_mmap(pid, *d, vbase, 1, false).unwrap();
    }
    for d in &domains {
        machine.switch_domain(CoreId(0), *d, SwitchVia::Trampoline).unwrap();
        let core = machine.core(CoreId(0));
        let enabled_por: Vec<u8> = (1..8u8)
            .filter(|s| core.por.get(*s).unwrap() != PermEncoding::NONE)
            .collect();
        assert_eq!(enabled_por, vec![d.poe], "after switch to {d}");
        let enabled_reusable: Vec<u8> = [3u8, 6, 7, 9]
            .into_iter()
            .filter(|s| core.pire.get(*s).unwrap() != PermEncoding::NONE)
            .collect();
        assert_eq!(enabled_reusable, vec![d.pie], "after switch to {d}");
        assert_eq!(core.windows.len(), 1);
        assert!(core.windows[0].covers(
            machine.process(pid).unwrap().zone(d.pas).unwrap().phys.start * PAGE
        ));
    }
}

#[test]
fn switch_costs_follow_the_model_per_level() {
    let (mut machine, pid) = scenario_machine(2, 1);
    let cost = machine.cfg.cost_model;
    let vbase = |m: &Machine, pas: u16| m.process(pid).unwrap().zone(pas).unwrap().vbase;
    for (i, d) in [DomainId::new(0, 3, 1), DomainId::new(0, 3, 2), DomainId::new(0, 6, 1), DomainId::new(1, 3, 1)]
        .iter()
        .enumerate()
    {
        machine.zone_mmap(pid, *d, vbase(&machine, d.pas) + i as u64 * PAGE, 1, false).unwrap();
    }
    // Cold start opens a window: L3.
    let e = machine.switch_domain(CoreId(0), DomainId::new(0, 3, 1), SwitchVia::Trampoline).unwrap();
    assert_eq!(e.cycles, cost.l3_switch);
    // Same base-permission group: L1.
    let e = machine.switch_domain(CoreId(0), DomainId::new(0, 3, 2), SwitchVia::Trampoline).unwrap();
    assert_eq!(e.cycles, cost.l1_switch);
    // Base-permission change in the same space: L2.
    let e = machine.switch_domain(CoreId(0), DomainId::new(0, 6, 1), SwitchVia::Trampoline).unwrap();
    assert_eq!(e.cycles, cost.l2_switch);
    // Another address space: L3 again.
    let e = machine.switch_domain(CoreId(0), DomainId::new(1, 3, 1), SwitchVia::Trampoline).unwrap();
    assert_eq!(e.cycles, cost.l3_switch);
}

#[test]
fn raw_switch_requests_are_rejected() {
    let (mut machine, _) = scenario_machine(1, 1);
    let err = machine
        .switch_domain(CoreId(0), DomainId::new(0, 3, 1), SwitchVia::Raw)
        .unwrap_err();
    assert_eq!(err, SwitchError::RawViaBlocked);

    // A non-reusable PIE slot is never a valid domain.
    let err = machine
        .switch_domain(CoreId(0), DomainId::new(0, 4, 1), SwitchVia::Trampoline)
        .unwrap_err();
    assert!(matches!(err, SwitchError::InvalidDomain(_)));
    // Overlay slot 0 is never a domain slot.
    let err = machine
        .switch_domain(CoreId(0), DomainId::new(0, 3, 0), SwitchVia::Trampoline)
        .unwrap_err();
    assert!(matches!(err, SwitchError::InvalidDomain(_)));
}

#[test]
fn undelegated_pas_switch_is_rejected() {
    let (mut machine, _) = scenario_machine(1, 1);
    let err = machine
        .switch_domain(CoreId(0), DomainId::new(5, 3, 1), SwitchVia::Trampoline)
        .unwrap_err();
    assert!(matches!(err, SwitchError::Rejected(_)));
}

#[test]
fn hooked_syscall_costs_match_accounting() {
    let (mut machine, _) = scenario_machine(1, 1);
    let before = machine.extra_cycles();
    machine.do_syscall(CoreId(0)).unwrap();
    let added = machine.extra_cycles() - before;
    let cost = machine.cfg.cost_model;
    assert!((added - cost.hooked_syscall).abs() < 1e-9);
    assert!((cost.trap_overhead() - (6_533.63 - 725.36)).abs() < 1e-9);
    assert_eq!(machine.tlb_flushes(), 1);
}

#[test]
fn kernel_reads_of_delegated_memory_fault_under_os_gpt() {
    let (mut machine, pid) = scenario_machine(1, 1);
    let untrusted = machine.process(pid).unwrap().untrusted_vbase;

    // Under the proc GPT the process reaches its own memory.
    machine.mem_read(CoreId(0), untrusted, Mode::User).unwrap();

    // During a trap the OS GPT is live: the same page is no-access.
    machine.trap_enter(CoreId(0), TrapCause::Syscall).unwrap();
    let err = machine.access(CoreId(0), untrusted, AccessKind::Read, Mode::Kernel).unwrap_err();
    assert!(matches!(err, Fault::Gpf { .. }));

    // The shared syscall buffer stays reachable for argument passing.
    let shared = machine.monitor.shared_buffers[0];
    machine.kernel_phys_access(CoreId(0), shared.start * PAGE).unwrap();
    machine.resume_process(CoreId(0)).unwrap();
}

#[test]
fn delegation_overlaps_reject_in_either_order() {
    let (mut machine, pid) = scenario_machine(1, 1);
    let base = 4_000_000u64;
    let first = GranuleRange::new(base, base + 64);
    let second = GranuleRange::new(base + 32, base + 96);

    machine.delegate_region(pid, first).unwrap();
    let err = machine.delegate_region(pid, second).unwrap_err();
    assert!(err.conflicting.overlaps(&second));

    // Reversed interleaving on a fresh machine: still exactly one winner.
    let (mut machine, pid) = scenario_machine(1, 1);
    machine.delegate_region(pid, second).unwrap();
    assert!(machine.delegate_region(pid, first).is_err());
    assert!(machine.dual_gpt_invariant_holds());
}

#[test]
fn world_reservation_blocks_domains_from_that_memory() {
    let (mut machine, pid) = scenario_machine(1, 1);
    let range = GranuleRange::new(6_000_000, 6_000_064);
    machine.reserve_world_region(SecurityState::RealmWorld, range).unwrap();
    let proc_gpt = machine.process(pid).unwrap().proc_gpt;
    let gpt = machine.gpt(proc_gpt).unwrap();
    assert_eq!(gpt.label(6_000_000), PasLabel::Realm);
    // Realm memory is unreachable from the normal world per the matrix.
    assert!(!AccessMatrix::default().allows(SecurityState::NormalWorld, PasLabel::Realm));
}

#[test]
fn pim_pages_reject_plain_writes_and_accept_gcs_stores() {
    let (machine, pid) = scenario_machine(1, 1);
    let pim_base = machine.process(pid).unwrap().thread(ThreadId(0)).unwrap().pim.base();

    let err = machine.access(CoreId(0), pim_base, AccessKind::Write, Mode::User).unwrap_err();
    assert_eq!(err.stage(), Stage::Perm);
    machine.access(CoreId(0), pim_base, AccessKind::GcsStore, Mode::User).unwrap();
    machine.access(CoreId(0), pim_base, AccessKind::Read, Mode::User).unwrap();
    let err = machine.access(CoreId(0), pim_base, AccessKind::Exec, Mode::User).unwrap_err();
    assert_eq!(err.stage(), Stage::Perm);
}

#[test]
fn pim_backup_and_check_round_trip_through_machine() {
    let (mut machine, _) = scenario_machine(1, 1);
    let core = CoreId(0);
    let t = ThreadId(0);

    let sig = "void(int)";
    let raw = TaggedFnPtr::untagged(0x40_1000);
    let tagged = machine.pim_backup(core, t, raw, sig).unwrap();
    assert_eq!(tagged.slot(), Some(0));

    // Re-backup of the stamped value is skipped.
    let again = machine.pim_backup(core, t, tagged, sig).unwrap();
    assert_eq!(again, tagged);

    assert_eq!(machine.pim_check(core, t, tagged, sig).unwrap(), 0x40_1000);
    assert!(machine.pim_check(core, t, tagged, "void(long)").is_err());

    // Costs: two backup invocations (one skipped) and two checks, each
    // charged per instruction regardless of outcome.
    let cost = machine.cfg.cost_model;
    let expected = 2.0 * cost.ptr_backup + 2.0 * cost.ptr_check;
    assert!((machine.extra_cycles() - expected).abs() < 1e-9);
}

#[test]
fn gcs_push_ret_through_machine() {
    let (mut machine, _) = scenario_machine(1, 1);
    let core = CoreId(0);
    let t = ThreadId(0);
    machine.gcs_push(core, t, 0x1000).unwrap();
    machine.gcs_push(core, t, 0x2000).unwrap();
    machine.gcs_ret(core, t, 0x2000).unwrap();
    assert!(machine.gcs_ret(core, t, 0x9999).is_err());
}

#[test]
fn image_attestation_catches_tampering() {
    let (mut machine, pid) = scenario_machine(1, 1);
    let image = b"store_fnptr cb f void(int)\n";
    let digest = trizone_core::monitor::image_digest(image);
    machine.attest_image(pid, image, &digest).unwrap();
    let tampered = b"store_fnptr cb evil void(int)\n";
    assert!(machine.attest_image(pid, tampered, &digest).is_err());
}

#[test]
fn benign_kernel_map_in_free_range_is_accepted() {
    let (mut machine, pid) = scenario_machine(1, 1);
    machine.trap_enter(CoreId(0), TrapCause::Syscall).unwrap();
    // A fresh anonymous RW mapping far from all delegations.
    let pte = PageTableEntry::new(0x7000_0000 / PAGE, (40 << 20) / PAGE, 4, 0);
    machine.kernel_map_request(pid, None, pte, false).unwrap();
    // Exec mappings are refused outright.
    let pte = PageTableEntry::new(0x7100_0000 / PAGE, (41 << 20) / PAGE, 4, 0);
    assert!(machine.kernel_map_request(pid, None, pte, true).is_err());
    machine.resume_process(CoreId(0)).unwrap();
}

#[test]
fn identity_perm_decode_matches_full_set() {
    // A PTE with overlay slot 0 resolves to exactly the base permission.
    let mut pire = PireRegister::default();
    pire.set(3, PermEncoding::RW).unwrap();
    let por = PorRegister::default();
    let pte = PageTableEntry::new(0, 0, 3, 0);
    let resolved = trizone_core::perm::resolve_pte(&pte, &pire, &por).unwrap();
    assert_eq!(resolved.data_perms(), PermSet::RW);
}
