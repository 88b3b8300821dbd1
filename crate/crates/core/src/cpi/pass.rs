// SPDX-License-Identifier: Apache-2.0

//! Compile-time passes over the toy IR: the instrumentation pass that
//! inserts pointer backups and call-site checks, and the post-build binary
//! scan that neutralizes stray switching and GCS-store instructions.
//!
//! Both passes are idempotent and commute with each other.

use alloc::format;
use alloc::vec::Vec;

use super::program::{InitField, Instr, Op, Region, ToyProgram};

/// What the instrumentation pass inserted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InstrumentCounts {
    pub backups: u64,
    pub checks: u64,
}

/// What the binary scan rewrote.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScanCounts {
    pub gcsstr_rewrites: u64,
    pub por_neutralized: u64,
}

/// Backups an instruction needs in front of it, in field order.
fn required_backups(op: &Op) -> Vec<Op> {
    match op {
        Op::StoreFnPtr { func, sig, .. } => {
            alloc::vec![Op::PimBackup { func: func.clone(), sig: sig.clone() }]
        }
        Op::MemCopyInit { fields, .. } => fields
            .iter()
            .filter_map(|f| match f {
                InitField::FnPtr { func, sig } => {
                    Some(Op::PimBackup { func: func.clone(), sig: sig.clone() })
                }
                InitField::Data(_) => None,
            })
            .collect(),
        // The type id of a typecast pointer derives from the original
        // source type, not the universal destination type.
        Op::BitcastStore { func, orig_sig, .. } => {
            alloc::vec![Op::PimBackup { func: func.clone(), sig: orig_sig.clone() }]
        }
        _ => Vec::new(),
    }
}

/// The check an indirect call needs in front of it.
fn required_check(op: &Op) -> Option<Op> {
    match op {
        Op::IndirectCall { src, expected_sig } => {
            Some(Op::PimCheck { src: src.clone(), expected_sig: expected_sig.clone() })
        }
        _ => None,
    }
}

/// True when `out` already ends with `needed` (in order), so the pass has
/// nothing to add for the upcoming instruction.
fn already_present(out: &[Instr], needed: &[Op]) -> bool {
    if needed.is_empty() || out.len() < needed.len() {
        return needed.is_empty();
    }
    out[out.len() - needed.len()..]
        .iter()
        .zip(needed)
        .all(|(have, want)| &have.op == want)
}

/// Inserts a pointer backup before every function-pointer store (including
/// struct-initializing memcopies and typecast stores) and a pointer check
/// before every indirect call. Direct calls and plain instructions are
/// untouched. Running the pass twice adds nothing.
pub fn instrument(prog: &ToyProgram) -> (ToyProgram, InstrumentCounts) {
    let mut out: Vec<Instr> = Vec::with_capacity(prog.instrs.len());
    let mut counts = InstrumentCounts::default();

    for instr in &prog.instrs {
        let mut needed = required_backups(&instr.op);
        if let Some(check) = required_check(&instr.op) {
            needed.push(check);
        }
        if !already_present(&out, &needed) {
            for op in needed {
                match op {
                    Op::PimBackup { .. } => counts.backups += 1,
                    Op::PimCheck { .. } => counts.checks += 1,
                    _ => unreachable!(),
                }
                out.push(Instr { op, region: instr.region });
            }
        }
        out.push(instr.clone());
    }

    (ToyProgram { globals: prog.globals.clone(), instrs: out }, counts)
}

/// Rewrites stray instructions outside the trampoline: a raw GCS store
/// becomes a plain store (which then faults on GCS-class pages), and a raw
/// overlay-register write is neutralized to a no-op. The trampoline region
/// is left byte-identical.
pub fn binary_scan(prog: &ToyProgram) -> (ToyProgram, ScanCounts) {
    let mut counts = ScanCounts::default();
    let instrs = prog
        .instrs
        .iter()
        .map(|instr| {
            if instr.region == Region::Trampoline {
                return instr.clone();
            }
            let op = match &instr.op {
                Op::RawGcsStore { dst, value } => {
                    counts.gcsstr_rewrites += 1;
                    log::debug!("binary scan: rewrote stray gcsstr to {dst}");
                    Op::PlainStore { dst: dst.clone(), value: *value }
                }
                Op::RawPorWrite { slot, enc } => {
                    counts.por_neutralized += 1;
                    log::debug!("binary scan: neutralized stray wr_por {slot}");
                    Op::Nop { note: format!("neutralized wr_por {slot} {enc:#x}") }
                }
                other => other.clone(),
            };
            Instr { op, region: instr.region }
        })
        .collect();
    (ToyProgram { globals: prog.globals.clone(), instrs }, counts)
}

/// Direct-scan oracle for the backup/check counts a program requires.
/// Counts the instrumentation sites by walking the instruction list once,
/// independent of the insertion logic.
pub fn count_sites(prog: &ToyProgram) -> InstrumentCounts {
    let mut c = InstrumentCounts::default();
    for instr in &prog.instrs {
        match &instr.op {
            Op::StoreFnPtr { .. } | Op::BitcastStore { .. } => c.backups += 1,
            Op::MemCopyInit { fields, .. } => {
                c.backups +=
                    fields.iter().filter(|f| matches!(f, InitField::FnPtr { .. })).count() as u64
            }
            Op::IndirectCall { .. } => c.checks += 1,
            _ => {}
        }
    }
    c
}
