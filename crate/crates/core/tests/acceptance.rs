//! Runs every checked-in acceptance config and prints one line per criterion.
//!
//! Plain `main` rather than libtest so the lines show without `--nocapture`.

use std::path::PathBuf;
use std::process::ExitCode;

use nbbm_core::harness::{run_experiment, ExperimentConfig};

/// Config file and wall-clock budget in seconds.
const CRITERIA: [(&str, f64); 9] = [
    ("1_gap.json", 120.0),
    ("2_monotone.json", 120.0),
    ("3_sandwich.json", 120.0),
    ("4_hitting.json", 180.0),
    ("5_hydro.json", 600.0),
    ("6_couple.json", 120.0),
    ("7_speed.json", 600.0),
    ("8_operators.json", 60.0),
    ("9_family.json", 60.0),
];

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance")
}

fn main() -> ExitCode {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0usize;
    let mut ran = 0usize;
    for (file, budget) in CRITERIA {
        if filter.as_deref().is_some_and(|f| !file.contains(f)) {
            continue;
        }
        ran += 1;
        let path = config_dir().join(file);
        let report = match ExperimentConfig::load(&path).and_then(|cfg| run_experiment(&cfg)) {
            Ok(r) => r,
            Err(e) => {
                println!("FAIL {file}: {e}");
                failed += 1;
                continue;
            }
        };
        let mut ok = true;
        for c in &report.criteria {
            // soft criteria still count here: acceptance has no partial credit
            ok &= c.passed;
            println!(
                "{} {}/{}: value {:.4e}, bound {:.4e} ({})",
                if c.passed { "PASS" } else { "FAIL" },
                report.kind,
                c.name,
                c.value,
                c.bound,
                c.detail
            );
        }
        let in_budget = report.runtime_seconds < budget;
        ok &= in_budget;
        println!(
            "{} {}/runtime: {:.2} s, budget {budget:.0} s",
            if in_budget { "PASS" } else { "FAIL" },
            report.kind,
            report.runtime_seconds
        );
        if !ok {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
