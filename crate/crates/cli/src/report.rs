// SPDX-License-Identifier: Apache-2.0

//! Machine-readable run reports (versioned JSON) and the aligned text
//! table mirroring the reference switching-overhead table.

use serde::{Deserialize, Serialize};
use trizone_core::workload::RunReport;

/// Bumped whenever the report layout changes shape.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub report: RunReport,
}

impl ReportFile {
    pub fn new(report: RunReport) -> ReportFile {
        ReportFile { schema_version: REPORT_SCHEMA_VERSION, report }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }
}

/// One-row table in the shape of the reference results: domains per core,
/// average switch cost and the three hit rates.
pub fn render_table(r: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14}{:<12}{:<18}{:>12}{:>12}{:>12}\n",
        "domains/core", "policy", "avg switch cost", "L1 rate", "L2 rate", "L3 rate"
    ));
    out.push_str(&format!(
        "{:<14}{:<12}{:<18.2}{:>11.2}%{:>11.2}%{:>11.2}%\n",
        r.domains_per_core,
        match r.policy {
            trizone_core::domain::AllocPolicy::Affinity => "affinity",
            trizone_core::domain::AllocPolicy::RoundRobin => "round_robin",
        },
        r.metrics.avg_cycles,
        r.metrics.l1_rate * 100.0,
        r.metrics.l2_rate * 100.0,
        r.metrics.l3_rate * 100.0,
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use trizone_core::domain::AllocPolicy;
    use trizone_core::workload::{simulate, Interleave, WorkloadConfig};

    fn tiny_report() -> RunReport {
        simulate(&WorkloadConfig {
            workers: 1,
            connections: 8,
            requests_per_connection: 4,
            domains_per_core: 7,
            interleave: Interleave::Random { seed: 1 },
            alloc_policy: AllocPolicy::Affinity,
            cost_model: Default::default(),
            reuse_freed: true,
        })
        .unwrap()
    }

    #[test]
    fn report_round_trips_through_json() {
        let file = ReportFile::new(tiny_report());
        let bytes = file.to_json_bytes();
        let back: ReportFile = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back.schema_version, REPORT_SCHEMA_VERSION);
        assert_eq!(back.report, file.report);
    }

    #[test]
    fn table_has_header_and_row() {
        let table = render_table(&tiny_report());
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("L1 rate"));
        assert!(lines[1].contains("affinity"));
    }
}
