// SPDX-License-Identifier: Apache-2.0

//! Property tests over the permission model, pointer tagging, the monitor
//! save/restore protocol and the access pipeline.

use proptest::prelude::*;

use trizone_core::cpi::{TaggedFnPtr, ADDR_MASK, UNTAGGED_INDEX};
use trizone_core::domain::{classify_switch, DomainId};
use trizone_core::exec::{CoreId, Features};
use trizone_core::gpt::BypassWindow;
use trizone_core::machine::{Machine, MachineConfig};
use trizone_core::monitor::{ProcessSpec, TrapCause};
use trizone_core::perm::{
    decode_perm, effective_perm, PageClass, PermEncoding, PireRegister, PorRegister,
};

fn perm_encoding() -> impl Strategy<Value = PermEncoding> {
    (0u8..16).prop_map(|v| PermEncoding::new(v).unwrap())
}

proptest! {
    // Decode-then-intersect equals decode-of-ANDed-bits for all pairs.
    #[test]
    fn compose_matches_bitwise_and(a in 0u8..16, b in 0u8..16) {
        let ea = PermEncoding::new(a).unwrap();
        let eb = PermEncoding::new(b).unwrap();
        let composed = effective_perm(
            decode_perm(ea, PageClass::Data).data_perms(),
            decode_perm(eb, PageClass::Data).data_perms(),
        );
        let anded = decode_perm(PermEncoding::new(a & b).unwrap(), PageClass::Data).data_perms();
        prop_assert_eq!(composed, anded);
    }

    // Overlay slot 0 reads full permissions after any write sequence.
    #[test]
    fn por_slot0_fixed_under_any_writes(writes in proptest::collection::vec((0u8..8, perm_encoding()), 0..64)) {
        let mut por = PorRegister::default();
        for (slot, enc) in writes {
            let _ = por.set(slot, enc);
        }
        prop_assert_eq!(por.get(0).unwrap(), PermEncoding::FULL);
    }

    // Tag then untag returns the original 48-bit address for any index
    // below the sentinel.
    #[test]
    fn tag_untag_round_trip(addr in any::<u64>(), index in 0u16..UNTAGGED_INDEX) {
        let addr = addr & ADDR_MASK;
        let tagged = TaggedFnPtr::tagged(addr, index);
        prop_assert_eq!(tagged.addr(), addr);
        prop_assert_eq!(tagged.slot(), Some(index));
        prop_assert_eq!(TaggedFnPtr::untagged(addr).addr(), addr);
        prop_assert_eq!(TaggedFnPtr::untagged(addr).slot(), None);
    }

    // Switch classification is symmetric in level.
    #[test]
    fn classify_symmetric(
        pas_a in 0u16..4, pie_a in prop::sample::select(vec![3u8, 6, 7, 9]), poe_a in 1u8..8,
        pas_b in 0u16..4, pie_b in prop::sample::select(vec![3u8, 6, 7, 9]), poe_b in 1u8..8,
    ) {
        let a = DomainId::new(pas_a, pie_a, poe_a);
        let b = DomainId::new(pas_b, pie_b, poe_b);
        prop_assert_eq!(classify_switch(Some(a), b), classify_switch(Some(b), a));
    }
}

fn tampered_machine() -> (Machine, CoreId) {
    let mut machine = Machine::new(MachineConfig {
        cores: 1,
        window_scale: 1024,
        ..MachineConfig::default()
    });
    let pid = machine.spawn_process(&ProcessSpec::default()).unwrap();
    machine.bind_core(CoreId(0), pid).unwrap();
    (machine, CoreId(0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    // Trap, arbitrary kernel tampering, resume: the context restores
    // bit-identically and the feature enables are forced on.
    #[test]
    fn monitor_save_restore_is_identity(
        pire_vals in proptest::collection::vec(0u8..16, 16),
        por_vals in proptest::collection::vec(0u8..16, 8),
        gcspr in any::<u64>(),
        tamper_pire in proptest::collection::vec((0u8..16, 0u8..16), 0..8),
        tamper_por in proptest::collection::vec((0u8..8, 0u8..16), 0..8),
        tamper_gcspr in any::<u64>(),
        kill_features in any::<bool>(),
        window_base in 0u64..4,
    ) {
        let (mut machine, core) = tampered_machine();

        // Arbitrary pre-trap register contents.
        {
            let c = machine.core_mut(core);
            let mut pire = PireRegister::zeroed();
            for (i, v) in pire_vals.iter().enumerate() {
                pire.set(i as u8, PermEncoding::new(*v).unwrap()).unwrap();
            }
            c.pire = pire;
            let mut por = PorRegister::zeroed();
            for (i, v) in por_vals.iter().enumerate() {
                let _ = por.set(i as u8, PermEncoding::new(*v).unwrap());
            }
            c.por = por;
            c.gcspr = gcspr;
        }
        let before_pire = machine.core(core).pire.clone();
        let before_por = machine.core(core).por.clone();
        let before_gcspr = machine.core(core).gcspr;
        let before_tpidrro = machine.core(core).tpidrro;
        let before_windows = machine.core(core).windows.clone();

        machine.trap_enter(core, TrapCause::Syscall).unwrap();

        // The saved view the kernel sees is sanitized.
        prop_assert_eq!(machine.core(core).por.get(0).unwrap(), PermEncoding::FULL);
        for slot in 1..8u8 {
            prop_assert_eq!(machine.core(core).por.get(slot).unwrap(), PermEncoding::NONE);
        }
        for slot in 0..16u8 {
            prop_assert_eq!(machine.core(core).pire.get(slot).unwrap(), PermEncoding::NONE);
        }

        // Arbitrary kernel tampering during the trap window.
        for (slot, v) in tamper_pire {
            machine.kernel_write_pire(core, slot, PermEncoding::new(v).unwrap()).unwrap();
        }
        for (slot, v) in tamper_por {
            machine.kernel_write_por(core, slot, PermEncoding::new(v).unwrap()).unwrap();
        }
        machine.kernel_set_gcspr(core, tamper_gcspr).unwrap();
        if kill_features {
            machine.kernel_set_features(core, Features {
                poe_on: false, pie_on: false, gcs_on: false, rng_trap_on: false,
            }).unwrap();
        }
        let scale = 1024;
        let window = BypassWindow::new(window_base * (1 << 20), 1 << 20, scale).unwrap();
        machine.kernel_add_window(core, window).unwrap();

        machine.resume_process(core).unwrap();

        let after = machine.core(core);
        prop_assert_eq!(&after.pire, &before_pire);
        prop_assert_eq!(&after.por, &before_por);
        prop_assert_eq!(after.gcspr, before_gcspr);
        prop_assert_eq!(after.tpidrro, before_tpidrro);
        prop_assert_eq!(&after.windows, &before_windows);
        prop_assert!(after.features.all_on());
    }
}
