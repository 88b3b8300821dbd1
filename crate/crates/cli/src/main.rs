// SPDX-License-Identifier: Apache-2.0

//! Command-line front end: run workload simulations, the exhaustive
//! oracle suites, the attack-scenario suite and the instrumentation
//! passes. Exit codes: 0 pass, 1 assertion or suite failure, 2 usage or
//! config error.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::ScenarioFile;
use report::{render_table, ReportFile};
use trizone_core::attacks::{golden_suite, run_scenario, Scenario, Verdict};
use trizone_core::cpi::pass;
use trizone_core::cpi::program::ToyProgram;
use trizone_core::domain::AllocPolicy;
use trizone_core::workload::{simulate, Interleave};

#[derive(Parser)]
#[command(name = "trizone", version, about = "Three-tier isolation-domain simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Affinity,
    RoundRobin,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OracleSuite {
    Perm,
    Gpc,
    Isolation,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a workload simulation and write its report.
    Simulate {
        /// Scenario/config file (JSON).
        config: Option<PathBuf>,
        #[arg(long)]
        policy: Option<PolicyArg>,
        #[arg(long)]
        domains_per_core: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<u32>,
        #[arg(long)]
        connections: Option<u32>,
        #[arg(long)]
        requests: Option<u32>,
        /// Write the machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an exhaustive oracle suite.
    Oracle {
        #[arg(long, value_enum)]
        suite: OracleSuite,
        /// Config file whose overrides are checked against the reference.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run attack scenarios and compare outcomes against expectations.
    Attack {
        /// Run the full golden suite.
        #[arg(long)]
        suite: Option<String>,
        /// Run one golden scenario by name.
        #[arg(long)]
        scenario: Option<String>,
        /// Run a custom scenario from a config file.
        #[arg(long)]
        file: Option<PathBuf>,
        /// List the golden suite manifest.
        #[arg(long)]
        list: bool,
        /// Write per-scenario outcomes and monitor event logs here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Instrument (and optionally scan) a toy program.
    Instrument {
        program: PathBuf,
        /// Also run the post-build binary scan.
        #[arg(long)]
        scan: bool,
        /// Write the transformed program here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Default SIGPIPE disposition so piping into `head` ends quietly.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::init();
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Simulate { config, policy, domains_per_core, seed, workers, connections, requests, out } => {
            cmd_simulate(config, policy, domains_per_core, seed, workers, connections, requests, out)
        }
        Cmd::Oracle { suite, config } => cmd_oracle(suite, config),
        Cmd::Attack { suite, scenario, file, list, out } => {
            cmd_attack(suite, scenario, file, list, out)
        }
        Cmd::Instrument { program, scan, out } => cmd_instrument(&program, scan, out),
    };
    ExitCode::from(code)
}

fn load_config(path: Option<&Path>) -> Result<ScenarioFile, String> {
    let path = match path {
        Some(p) => p,
        None => return Ok(ScenarioFile::default()),
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config error in {}: {e}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: Option<PathBuf>,
    policy: Option<PolicyArg>,
    domains_per_core: Option<u32>,
    seed: Option<u64>,
    workers: Option<u32>,
    connections: Option<u32>,
    requests: Option<u32>,
    out: Option<PathBuf>,
) -> u8 {
    let file = match load_config(config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let mut cfg = file.workload_config();
    if let Some(p) = policy {
        cfg.alloc_policy = match p {
            PolicyArg::Affinity => AllocPolicy::Affinity,
            PolicyArg::RoundRobin => AllocPolicy::RoundRobin,
        };
    }
    if let Some(d) = domains_per_core {
        cfg.domains_per_core = d;
    }
    if let Some(s) = seed {
        cfg.interleave = Interleave::Random { seed: s };
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(c) = connections {
        cfg.connections = c;
    }
    if let Some(r) = requests {
        cfg.requests_per_connection = r;
    }

    let report = match simulate(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("simulation config rejected: {e}");
            return 2;
        }
    };
    print!("{}", render_table(&report));
    let file = ReportFile::new(report);
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, file.to_json_bytes()) {
                eprintln!("cannot write {}: {e}", path.display());
                return 2;
            }
            println!("report written to {}", path.display());
        }
        None => {
            print!("{}", String::from_utf8_lossy(&file.to_json_bytes()));
        }
    }
    0
}

fn cmd_oracle(suite: OracleSuite, config: Option<PathBuf>) -> u8 {
    let file = match load_config(config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    match suite {
        OracleSuite::Perm => oracle_perm(),
        OracleSuite::Gpc => oracle_gpc(&file),
        OracleSuite::Isolation => oracle_isolation(),
    }
}

fn oracle_perm() -> u8 {
    use trizone_core::perm::{decode_perm, effective_perm, PageClass, PermEncoding};
    let mut checked = 0;
    for base in 0..16u8 {
        for overlay in 0..16u8 {
            let eb = PermEncoding::new(base).unwrap();
            let eo = PermEncoding::new(overlay).unwrap();
            let composed = effective_perm(
                decode_perm(eb, PageClass::Data).data_perms(),
                decode_perm(eo, PageClass::Data).data_perms(),
            );
            let oracle = decode_perm(PermEncoding::new(base & overlay).unwrap(), PageClass::Data)
                .data_perms();
            if composed != oracle {
                println!(
                    "counterexample: base {base:#06b} overlay {overlay:#06b}: \
                     composed {composed} oracle {oracle}"
                );
                return 1;
            }
            checked += 1;
        }
    }
    println!("perm oracle: {checked}/256 encoding pairs match the flag-wise AND oracle");
    0
}

fn oracle_gpc(file: &ScenarioFile) -> u8 {
    use trizone_core::gpt::{AccessMatrix, PasLabel, SecurityState};
    let configured = file.access_matrix();
    let reference = AccessMatrix::default();
    let mut checked = 0;
    for state in SecurityState::ALL {
        for label in PasLabel::ALL {
            if configured.allows(state, label) != reference.allows(state, label) {
                println!(
                    "counterexample: {state:?} x {label:?}: configured {} reference {}",
                    configured.allows(state, label),
                    reference.allows(state, label)
                );
                return 1;
            }
            checked += 1;
        }
    }
    println!("gpc oracle: {checked}/24 state x label cases match the reference table");
    0
}

fn oracle_isolation() -> u8 {
    use trizone_core::domain::DomainUniverse;
    use trizone_core::exec::{AccessKind, CoreId, Mode};
    use trizone_core::machine::{Machine, MachineConfig, SwitchVia};
    use trizone_core::monitor::ProcessSpec;

    let mut machine = Machine::new(MachineConfig {
        cores: 1,
        window_scale: 1024,
        ..MachineConfig::default()
    });
    let pid = machine
        .spawn_process(&ProcessSpec { zones: 3, pim_capacity: 64, ..ProcessSpec::default() })
        .expect("spawn");
    machine.bind_core(CoreId(0), pid).expect("bind");
    let page = machine.cfg.granule_size;

    let universe = DomainUniverse::new(3, &machine.cfg.registry);
    let mut pages = Vec::new();
    for i in 0..universe.total() {
        let d = universe.domain_at(i).unwrap();
        let vbase = machine.process(pid).unwrap().zone(d.pas).unwrap().vbase;
        let vaddr = vbase + (i % 28) * page;
        machine.zone_mmap(pid, d, vaddr, 1, false).expect("map");
        pages.push((d, vaddr));
    }

    let mut ordered_pairs = 0u64;
    for (d, _) in pages.clone() {
        machine.switch_domain(CoreId(0), d, SwitchVia::Trampoline).expect("switch");
        for (other, vaddr) in &pages {
            let outcome = machine.access(CoreId(0), *vaddr, AccessKind::Read, Mode::User);
            let want_ok = other == &d;
            if outcome.is_ok() != want_ok {
                println!("counterexample: in {d}, access to {other} page was {outcome:?}");
                return 1;
            }
            ordered_pairs += 1;
        }
    }
    println!("isolation oracle: {ordered_pairs} ordered domain pairs checked (84 x 84)");
    0
}

fn print_attack_row(name: &str, expected: &str, verdict: &Verdict) {
    let (actual, ok) = match verdict {
        Verdict::Blocked(c) => (format!("blocked: {c}"), true),
        Verdict::Clean => ("clean".to_string(), true),
        Verdict::Breached { step, expected, actual } => {
            (format!("step {step}: expected {expected}, got {actual}"), false)
        }
    };
    println!(
        "{:<28}{:<34}{:<44}{}",
        name,
        expected,
        actual,
        if ok { "ok" } else { "MISMATCH" }
    );
}

fn expected_str(s: &Scenario) -> String {
    match &s.expected {
        Some(c) => format!("{c}"),
        None => "no faults".to_string(),
    }
}

fn cmd_attack(
    suite: Option<String>,
    scenario: Option<String>,
    file: Option<PathBuf>,
    list: bool,
    out: Option<PathBuf>,
) -> u8 {
    if list {
        println!("{:<28}{:<56}covers", "scenario", "summary");
        for s in golden_suite() {
            println!("{:<28}{:<56}{}", s.name, s.summary, s.cve_refs.join(", "));
        }
        return 0;
    }

    let scenarios: Vec<Scenario> = if let Some(path) = file {
        let loaded = match load_config(Some(&path)) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("{e}");
                return 2;
            }
        };
        match loaded.scenario {
            Some(s) => vec![s],
            None => {
                eprintln!("config {} has no `scenario` section", path.display());
                return 2;
            }
        }
    } else if let Some(name) = scenario {
        match golden_suite().into_iter().find(|s| s.name == name) {
            Some(s) => vec![s],
            None => {
                eprintln!("unknown scenario `{name}`");
                return 2;
            }
        }
    } else {
        match suite.as_deref() {
            None | Some("golden") => golden_suite(),
            Some(other) => {
                eprintln!("unknown suite `{other}` (only `golden` is registered)");
                return 2;
            }
        }
    };

    println!("{:<28}{:<34}{:<44}verdict", "scenario", "expected", "actual");
    let mut mismatches = 0;
    let mut runs = Vec::new();
    for s in &scenarios {
        let run = run_scenario(s);
        print_attack_row(&s.name, &expected_str(s), &run.verdict);
        let ok = match (&s.expected, &run.verdict) {
            (Some(want), Verdict::Blocked(got)) => want == got,
            (None, Verdict::Clean) => true,
            _ => false,
        };
        if !ok {
            mismatches += 1;
        }
        runs.push(run);
    }
    if let Some(path) = out {
        let report = serde_json::json!({
            "schema_version": report::REPORT_SCHEMA_VERSION,
            "runs": runs,
        });
        let mut bytes = serde_json::to_vec_pretty(&report).expect("runs serialize");
        bytes.push(b'\n');
        if let Err(e) = std::fs::write(&path, bytes) {
            eprintln!("cannot write {}: {e}", path.display());
            return 2;
        }
        println!("attack report written to {}", path.display());
    }
    if mismatches > 0 {
        eprintln!("{mismatches} scenario(s) deviated from their expected outcome");
        return 1;
    }
    println!("{}/{} scenarios behaved as expected", scenarios.len(), scenarios.len());
    0
}

fn cmd_instrument(program: &Path, scan: bool, out: Option<PathBuf>) -> u8 {
    let text = match std::fs::read_to_string(program) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", program.display());
            return 2;
        }
    };
    let parsed = match ToyProgram::parse(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("parse error in {}: {e}", program.display());
            return 2;
        }
    };
    let (instrumented, counts) = pass::instrument(&parsed);
    let (final_prog, scans) = if scan {
        let (scanned, s) = pass::binary_scan(&instrumented);
        (scanned, s)
    } else {
        (instrumented, Default::default())
    };
    let rendered = final_prog.render();
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, rendered) {
                eprintln!("cannot write {}: {e}", path.display());
                return 2;
            }
        }
        None => print!("{rendered}"),
    }
    println!(
        "{} backups, {} checks, {} rewrites, {} neutralized",
        counts.backups, counts.checks, scans.gcsstr_rewrites, scans.por_neutralized
    );
    0
}
