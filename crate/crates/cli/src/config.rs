// SPDX-License-Identifier: Apache-2.0

//! Scenario/config file model: a strict JSON document with optional
//! sections and documented defaults. Unknown keys are rejected so files
//! stay honest about what they configure.

use serde::{Deserialize, Serialize};

use trizone_core::attacks::Scenario;
use trizone_core::domain::{AllocPolicy, CostModel};
use trizone_core::gpt::{PasLabel, SecurityState};
use trizone_core::workload::{Interleave, WorkloadConfig};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub machine: MachineSection,
    pub gpt: GptSection,
    pub process: ProcessSection,
    pub cost_model: CostModelSection,
    pub workload: WorkloadSection,
    /// Path to a toy program, relative to the config file.
    pub program: Option<String>,
    /// Expected SHAKE-128 image digest (64 hex chars) for load attestation.
    pub image_digest: Option<String>,
    /// A custom attack scenario to run with `attack --file`.
    pub scenario: Option<Scenario>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MachineSection {
    pub cores: u32,
    pub granule_size: u64,
    pub window_scale: u64,
}

impl Default for MachineSection {
    fn default() -> Self {
        MachineSection { cores: 2, granule_size: 4096, window_scale: 1024 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GptSection {
    /// Access-matrix overrides, applied on top of the default table.
    /// Initial granule labels belong to a scenario's `setup` section.
    pub matrix: Vec<MatrixEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub state: SecurityState,
    pub label: PasLabel,
    pub allowed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessSection {
    pub zones: u16,
    /// Bytes per zone window; 0 selects the minimum for the window scale.
    pub window_size: u64,
    pub threads: u32,
    pub pim_capacity: u32,
    pub untrusted_pages: u64,
    pub gcs_pages: u64,
}

impl Default for ProcessSection {
    fn default() -> Self {
        ProcessSection {
            zones: 1,
            window_size: 0,
            threads: 1,
            pim_capacity: 4096,
            untrusted_pages: 64,
            gcs_pages: 4,
        }
    }
}

/// Cost overrides; absent fields keep the reference defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModelSection {
    pub l1_switch: Option<f64>,
    pub l2_switch: Option<f64>,
    pub l3_switch: Option<f64>,
    pub ptr_backup: Option<f64>,
    pub ptr_check: Option<f64>,
    pub syscall: Option<f64>,
    pub hooked_syscall: Option<f64>,
}

impl CostModelSection {
    pub fn resolve(&self) -> CostModel {
        let base = CostModel::default();
        CostModel {
            l1_switch: self.l1_switch.unwrap_or(base.l1_switch),
            l2_switch: self.l2_switch.unwrap_or(base.l2_switch),
            l3_switch: self.l3_switch.unwrap_or(base.l3_switch),
            ptr_backup: self.ptr_backup.unwrap_or(base.ptr_backup),
            ptr_check: self.ptr_check.unwrap_or(base.ptr_check),
            syscall: self.syscall.unwrap_or(base.syscall),
            hooked_syscall: self.hooked_syscall.unwrap_or(base.hooked_syscall),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSection {
    pub workers: u32,
    pub connections: u32,
    pub requests_per_connection: u32,
    pub domains_per_core: u32,
    pub interleave: Interleave,
    pub alloc_policy: AllocPolicy,
    pub reuse_freed: bool,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            workers: 2,
            connections: 1000,
            requests_per_connection: 30,
            domains_per_core: 28,
            interleave: Interleave::Random { seed: 1 },
            alloc_policy: AllocPolicy::Affinity,
            reuse_freed: true,
        }
    }
}

impl ScenarioFile {
    pub fn workload_config(&self) -> WorkloadConfig {
        WorkloadConfig {
            workers: self.workload.workers,
            connections: self.workload.connections,
            requests_per_connection: self.workload.requests_per_connection,
            domains_per_core: self.workload.domains_per_core,
            interleave: self.workload.interleave,
            alloc_policy: self.workload.alloc_policy,
            cost_model: self.cost_model.resolve(),
            reuse_freed: self.workload.reuse_freed,
        }
    }

    /// The effective access matrix: defaults plus overrides.
    pub fn access_matrix(&self) -> trizone_core::gpt::AccessMatrix {
        let mut m = trizone_core::gpt::AccessMatrix::default();
        for e in &self.gpt.matrix {
            m.set(e.state, e.label, e.allowed);
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_defaults() {
        let f: ScenarioFile = serde_json::from_str("{}").unwrap();
        assert_eq!(f.machine.cores, 2);
        assert_eq!(f.workload.domains_per_core, 28);
        let cost = f.cost_model.resolve();
        assert_eq!(cost.l1_switch, 74.13);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_name() {
        let err = serde_json::from_str::<ScenarioFile>(r#"{"wrokload": {}}"#).unwrap_err();
        assert!(err.to_string().contains("wrokload"), "{err}");
        let err =
            serde_json::from_str::<ScenarioFile>(r#"{"workload": {"sede": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let f: ScenarioFile = serde_json::from_str(
            r#"{
                "workload": {"domains_per_core": 224, "alloc_policy": "round_robin",
                              "interleave": {"random": {"seed": 9}}},
                "cost_model": {"l1_switch": 80.0}
            }"#,
        )
        .unwrap();
        let cfg = f.workload_config();
        assert_eq!(cfg.domains_per_core, 224);
        assert_eq!(cfg.alloc_policy, AllocPolicy::RoundRobin);
        assert_eq!(cfg.interleave, Interleave::Random { seed: 9 });
        assert_eq!(cfg.cost_model.l1_switch, 80.0);
        assert_eq!(cfg.cost_model.l2_switch, 6_169.47);
    }

    #[test]
    fn matrix_overrides_flow_into_the_table() {
        let f: ScenarioFile = serde_json::from_str(
            r#"{"gpt": {"matrix": [
                {"state": "normal_world", "label": "no_access", "allowed": true}
            ]}}"#,
        )
        .unwrap();
        let m = f.access_matrix();
        assert!(m.allows(SecurityState::NormalWorld, PasLabel::NoAccess));
        assert!(!m.allows(SecurityState::NormalWorld, PasLabel::Secure));
    }
}
