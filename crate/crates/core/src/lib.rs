// SPDX-License-Identifier: Apache-2.0

//! Functional, bit-accurate simulator of a three-tier intra-process
//! isolation architecture for Arm CCA-class hardware: permission
//! indirection and overlay resolution, granule protection with per-core
//! bypass windows, a root-world monitor protocol, code-pointer integrity,
//! workload-driven switch-cost accounting and an attack-scenario verifier.

#![no_std]

extern crate alloc;

pub mod attacks;
pub mod cpi;
pub mod domain;
pub mod exec;
pub mod gpt;
pub mod interp;
pub mod machine;
pub mod monitor;
pub mod perm;
pub mod workload;

pub use domain::{classify_switch, CostModel, DomainId, SwitchLevel};
pub use exec::{AccessKind, CoreId, Fault, Mode, Pid};
pub use gpt::{PasLabel, SecurityState};
pub use machine::{Machine, MachineConfig, SwitchVia, ThreadId};
pub use monitor::ProcessSpec;
