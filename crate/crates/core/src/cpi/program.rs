// SPDX-License-Identifier: Apache-2.0

//! The toy IR over which instrumentation and binary scanning operate.
//!
//! Text format: one instruction per line, `#` starts a comment, blank
//! lines are ignored. An optional `.globals` section declares initialized
//! global function pointers; `.text` starts the instruction list. The
//! trampoline is delimited by `.trampoline_begin` / `.trampoline_end`.
//!
//! ```text
//! .globals
//! global <cell> <func> <sig>
//! .text
//! store_fnptr <dst> <func> <sig>     # store a function pointer
//! memcopy_init <dst> fnptr:<f>:<sig> data:<val> ...
//! bitcast_store <dst> <func> <orig-sig>
//! icall <src> <expected-sig>         # indirect call through a cell
//! call <func>                        # direct call
//! ret
//! gcsstr <dst> <val>                 # raw GCS store instruction
//! wr_por <slot> <enc>                # raw overlay-register write
//! store <dst> <val>                  # plain data store
//! nop [note]
//! pim_backup <func> <sig>            # emitted by instrumentation
//! pim_check <src> <sig>              # emitted by instrumentation
//! ```
//!
//! Cell operands are bare identifiers; `pim:<slot>` addresses a slot of
//! the thread's pointer-integrity memory. Signatures are canonical
//! (whitespace-free) text. Values parse as decimal or `0x`-prefixed hex.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::canonical_signature;

/// Store/load target of an instruction.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Target {
    /// Named data cell in the untrusted region.
    Cell(String),
    /// Slot of the running thread's pointer-integrity memory.
    PimSlot(u32),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Cell(name) => write!(f, "{name}"),
            Target::PimSlot(slot) => write!(f, "pim:{slot}"),
        }
    }
}

/// One field of a struct-initializing memcopy.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum InitField {
    FnPtr { func: String, sig: String },
    Data(u64),
}

/// Toy IR instructions.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Op {
    StoreFnPtr { dst: Target, func: String, sig: String },
    MemCopyInit { dst: String, fields: Vec<InitField> },
    BitcastStore { dst: Target, func: String, orig_sig: String },
    IndirectCall { src: Target, expected_sig: String },
    DirectCall { func: String },
    Ret,
    RawGcsStore { dst: Target, value: u64 },
    RawPorWrite { slot: u8, enc: u8 },
    PlainStore { dst: Target, value: u64 },
    Nop { note: String },
    PimBackup { func: String, sig: String },
    PimCheck { src: Target, expected_sig: String },
}

/// Code region an instruction belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Region {
    User,
    Trampoline,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Instr {
    pub op: Op,
    pub region: Region,
}

/// An initialized global function pointer placed in the dedicated segment.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalFnPtr {
    pub cell: String,
    pub func: String,
    pub sig: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyProgram {
    pub globals: Vec<GlobalFnPtr>,
    pub instrs: Vec<Instr>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

fn err(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError { line, msg: msg.into() }
}

fn parse_value(tok: &str, line: usize) -> Result<u64, ParseError> {
    let parsed = if let Some(hex) = tok.strip_prefix("0x") {
        u64::from_str_radix(hex, 16)
    } else {
        tok.parse::<u64>()
    };
    parsed.map_err(|_| err(line, format!("bad value `{tok}`")))
}

fn parse_target(tok: &str, line: usize) -> Result<Target, ParseError> {
    if let Some(slot) = tok.strip_prefix("pim:") {
        let slot = slot.parse::<u32>().map_err(|_| err(line, format!("bad pim slot `{slot}`")))?;
        return Ok(Target::PimSlot(slot));
    }
    if tok.is_empty() || !tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
        return Err(err(line, format!("bad cell name `{tok}`")));
    }
    Ok(Target::Cell(tok.to_string()))
}

impl ToyProgram {
    pub fn parse(text: &str) -> Result<ToyProgram, ParseError> {
        let mut prog = ToyProgram::default();
        let mut region = Region::User;
        let mut in_globals = false;
        let mut trampoline_seen_end = true;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut toks = content.split_whitespace();
            let head = toks.next().unwrap();
            let rest: Vec<&str> = toks.collect();

            match head {
                ".globals" => {
                    in_globals = true;
                    continue;
                }
                ".text" => {
                    in_globals = false;
                    continue;
                }
                ".trampoline_begin" => {
                    if region == Region::Trampoline {
                        return Err(err(line, "nested .trampoline_begin"));
                    }
                    region = Region::Trampoline;
                    trampoline_seen_end = false;
                    continue;
                }
                ".trampoline_end" => {
                    if region != Region::Trampoline {
                        return Err(err(line, ".trampoline_end without begin"));
                    }
                    region = Region::User;
                    trampoline_seen_end = true;
                    continue;
                }
                _ => {}
            }

            if in_globals {
                if head != "global" || rest.len() != 3 {
                    return Err(err(line, "expected `global <cell> <func> <sig>`"));
                }
                prog.globals.push(GlobalFnPtr {
                    cell: rest[0].to_string(),
                    func: rest[1].to_string(),
                    sig: canonical_signature(rest[2]),
                });
                continue;
            }

            let op = match (head, rest.as_slice()) {
                ("store_fnptr", [dst, func, sig]) => Op::StoreFnPtr {
                    dst: parse_target(dst, line)?,
                    func: func.to_string(),
                    sig: canonical_signature(sig),
                },
                ("memcopy_init", [dst, fields @ ..]) if !fields.is_empty() => {
                    let mut parsed = Vec::new();
                    for f in fields {
                        if let Some(spec) = f.strip_prefix("fnptr:") {
                            let (func, sig) = spec
                                .split_once(':')
                                .ok_or_else(|| err(line, format!("bad field `{f}`")))?;
                            parsed.push(InitField::FnPtr {
                                func: func.to_string(),
                                sig: canonical_signature(sig),
                            });
                        } else if let Some(v) = f.strip_prefix("data:") {
                            parsed.push(InitField::Data(parse_value(v, line)?));
                        } else {
                            return Err(err(line, format!("bad field `{f}`")));
                        }
                    }
                    Op::MemCopyInit { dst: dst.to_string(), fields: parsed }
                }
                ("bitcast_store", [dst, func, orig]) => Op::BitcastStore {
                    dst: parse_target(dst, line)?,
                    func: func.to_string(),
                    orig_sig: canonical_signature(orig),
                },
                ("icall", [src, sig]) => Op::IndirectCall {
                    src: parse_target(src, line)?,
                    expected_sig: canonical_signature(sig),
                },
                ("call", [func]) => Op::DirectCall { func: func.to_string() },
                ("ret", []) => Op::Ret,
                ("gcsstr", [dst, val]) => Op::RawGcsStore {
                    dst: parse_target(dst, line)?,
                    value: parse_value(val, line)?,
                },
                ("wr_por", [slot, enc]) => {
                    let slot = slot.parse::<u8>().map_err(|_| err(line, "bad slot"))?;
                    let enc = parse_value(enc, line)? as u8;
                    Op::RawPorWrite { slot, enc }
                }
                ("store", [dst, val]) => Op::PlainStore {
                    dst: parse_target(dst, line)?,
                    value: parse_value(val, line)?,
                },
                ("nop", note) => Op::Nop { note: note.join(" ") },
                ("pim_backup", [func, sig]) => Op::PimBackup {
                    func: func.to_string(),
                    sig: canonical_signature(sig),
                },
                ("pim_check", [src, sig]) => Op::PimCheck {
                    src: parse_target(src, line)?,
                    expected_sig: canonical_signature(sig),
                },
                _ => return Err(err(line, format!("unknown or malformed instruction `{content}`"))),
            };
            prog.instrs.push(Instr { op, region });
        }

        if !trampoline_seen_end {
            return Err(err(text.lines().count(), "unterminated trampoline region"));
        }
        Ok(prog)
    }

    /// Renders the program back to text. Parsing the result yields an equal
    /// program.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.globals.is_empty() {
            out.push_str(".globals\n");
            for g in &self.globals {
                out.push_str(&format!("global {} {} {}\n", g.cell, g.func, g.sig));
            }
        }
        out.push_str(".text\n");
        let mut region = Region::User;
        for instr in &self.instrs {
            if instr.region != region {
                out.push_str(match instr.region {
                    Region::Trampoline => ".trampoline_begin\n",
                    Region::User => ".trampoline_end\n",
                });
                region = instr.region;
            }
            out.push_str(&render_op(&instr.op));
            out.push('\n');
        }
        if region == Region::Trampoline {
            out.push_str(".trampoline_end\n");
        }
        out
    }
}

fn render_op(op: &Op) -> String {
    match op {
        Op::StoreFnPtr { dst, func, sig } => format!("store_fnptr {dst} {func} {sig}"),
        Op::MemCopyInit { dst, fields } => {
            let mut s = format!("memcopy_init {dst}");
            for f in fields {
                match f {
                    InitField::FnPtr { func, sig } => s.push_str(&format!(" fnptr:{func}:{sig}")),
                    InitField::Data(v) => s.push_str(&format!(" data:{v:#x}")),
                }
            }
            s
        }
        Op::BitcastStore { dst, func, orig_sig } => format!("bitcast_store {dst} {func} {orig_sig}"),
        Op::IndirectCall { src, expected_sig } => format!("icall {src} {expected_sig}"),
        Op::DirectCall { func } => format!("call {func}"),
        Op::Ret => "ret".to_string(),
        Op::RawGcsStore { dst, value } => format!("gcsstr {dst} {value:#x}"),
        Op::RawPorWrite { slot, enc } => format!("wr_por {slot} {enc:#x}"),
        Op::PlainStore { dst, value } => format!("store {dst} {value:#x}"),
        Op::Nop { note } if note.is_empty() => "nop".to_string(),
        Op::Nop { note } => format!("nop {note}"),
        Op::PimBackup { func, sig } => format!("pim_backup {func} {sig}"),
        Op::PimCheck { src, expected_sig } => format!("pim_check {src} {expected_sig}"),
    }
}
