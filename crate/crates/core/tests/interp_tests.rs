// SPDX-License-Identifier: Apache-2.0

//! Interpreter-level tests: global-segment loading, the protection gap of
//! uninstrumented programs, and the effect of skipping the binary scan.

use trizone_core::cpi::pass;
use trizone_core::cpi::program::ToyProgram;
use trizone_core::exec::{CoreId, Pid};
use trizone_core::interp::{Interp, ProgramHalt};
use trizone_core::machine::{Machine, MachineConfig, ThreadId};
use trizone_core::monitor::ProcessSpec;
use trizone_core::perm::PermEncoding;

fn machine() -> (Machine, Pid) {
    let mut m = Machine::new(MachineConfig {
        cores: 1,
        window_scale: 1024,
        ..MachineConfig::default()
    });
    let pid = m
        .spawn_process(&ProcessSpec { pim_capacity: 32, ..ProcessSpec::default() })
        .unwrap();
    m.bind_core(CoreId(0), pid).unwrap();
    (m, pid)
}

#[test]
fn load_globals_backs_up_and_tags_each_pointer() {
    let (mut m, pid) = machine();
    let prog = ToyProgram::parse(
        ".globals\n\
         global g0 f0 void()\n\
         global g1 f1 void(int)\n\
         global g2 f2 void(long)\n\
         global g3 f3 int(char*,int)\n\
         .text\n\
         nop\n",
    )
    .unwrap();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    let stats = interp.run(&prog).unwrap();
    assert_eq!(stats.executed, 1);
    let pim = &m.process(pid).unwrap().thread(ThreadId(0)).unwrap().pim;
    assert_eq!(pim.next_slot(), 4);
}

#[test]
fn empty_global_segment_is_a_noop() {
    let (mut m, pid) = machine();
    let prog = ToyProgram::parse("nop\n").unwrap();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    interp.run(&prog).unwrap();
    assert_eq!(m.process(pid).unwrap().thread(ThreadId(0)).unwrap().pim.next_slot(), 0);
}

#[test]
fn indirect_call_through_loaded_global_checks_clean() {
    let (mut m, pid) = machine();
    let text = ".globals\n\
                global g_cb handler void(int)\n\
                .text\n\
                icall g_cb void(int)\n\
                ret\n";
    let (prog, counts) = pass::instrument(&ToyProgram::parse(text).unwrap());
    assert_eq!(counts.checks, 1);
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    let stats = interp.run(&prog).unwrap();
    assert_eq!(stats.checks, 1);
}

// Without instrumentation the overwritten pointer is dereferenced without
// complaint; this is exactly the gap the pass closes.
#[test]
fn uninstrumented_overwrite_goes_unnoticed() {
    let text = "store_fnptr cb f void(int)\n\
                store cb 0xdead00\n\
                icall cb void(int)\n";
    let prog = ToyProgram::parse(text).unwrap();

    let (mut m, pid) = machine();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    assert!(interp.run(&prog).is_ok(), "unprotected run must not fault");

    let (instrumented, _) = pass::instrument(&prog);
    let (mut m, pid) = machine();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    let halt = interp.run(&instrumented).unwrap_err();
    assert!(matches!(halt, ProgramHalt::Cpi(_)), "{halt:?}");
}

// An unscanned inline wr_por flips the overlay register; after the scan it
// is a no-op.
#[test]
fn unscanned_por_write_works_and_scanned_one_does_not() {
    let text = "wr_por 5 0x7\n";
    let prog = ToyProgram::parse(text).unwrap();

    let (mut m, pid) = machine();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    interp.run(&prog).unwrap();
    assert_eq!(m.core(CoreId(0)).por.get(5).unwrap(), PermEncoding::FULL);

    let (scanned, counts) = pass::binary_scan(&prog);
    assert_eq!(counts.por_neutralized, 1);
    let (mut m, pid) = machine();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    interp.run(&scanned).unwrap();
    assert_eq!(m.core(CoreId(0)).por.get(5).unwrap(), PermEncoding::NONE);
}

// An unscanned stray gcsstr lands in the pointer-integrity memory and
// poisons a backed-up entry: the follow-up check then refuses the pointer
// that was legitimate before. Scanning prevents the write from landing.
#[test]
fn unscanned_gcsstr_corrupts_pim() {
    let text = "store_fnptr cb f void(int)\n\
                gcsstr pim:0 0x666000\n\
                icall cb void(int)\n";
    let (instrumented, _) = pass::instrument(&ToyProgram::parse(text).unwrap());

    let (mut m, pid) = machine();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    let halt = interp.run(&instrumented).unwrap_err();
    // The stored pointer no longer matches the poisoned backup.
    assert!(matches!(halt, ProgramHalt::Cpi(_)), "{halt:?}");

    let (scanned, _) = pass::binary_scan(&instrumented);
    let (mut m, pid) = machine();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    let halt = interp.run(&scanned).unwrap_err();
    // Now the rewritten plain store faults on the GCS-class page before
    // reaching the pointer-integrity memory at all.
    assert!(matches!(halt, ProgramHalt::Fault(_)), "{halt:?}");
}

#[test]
fn balanced_calls_and_returns_run_clean() {
    let (mut m, pid) = machine();
    let prog = ToyProgram::parse("call a\ncall b\nret\nret\ncall c\nret\n").unwrap();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    let stats = interp.run(&prog).unwrap();
    assert_eq!(stats.calls, 3);
}

#[test]
fn return_on_empty_stack_underflows() {
    let (mut m, pid) = machine();
    let prog = ToyProgram::parse("ret\n").unwrap();
    let mut interp = Interp::new(&mut m, pid, CoreId(0), ThreadId(0));
    let halt = interp.run(&prog).unwrap_err();
    assert!(matches!(halt, ProgramHalt::Cfi(_)));
}
