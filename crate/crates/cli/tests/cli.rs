use std::path::PathBuf;
use std::process::Command;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn lab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nbbm-lab")).args(args).output().unwrap()
}

#[test]
fn wave_writes_tables_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("examples/wave.json");
    let o = lab(&["wave", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kind"], "wave");
    assert_eq!(summary["schema_version"], 1);
    for t in summary["tables"].as_array().unwrap() {
        assert!(PathBuf::from(t["path"].as_str().unwrap()).exists());
    }
}

#[test]
fn csv_density_and_seed_override() {
    let cfg = configs().join("examples/from_csv.json");
    let a = lab(&["couple", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    let b = lab(&["couple", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let strip = |o: &std::process::Output| {
        String::from_utf8_lossy(&o.stdout).lines().filter(|l| !l.contains("finished in")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
    assert!(strip(&a).starts_with("PASS"));
}

#[test]
fn subcommand_rejects_foreign_kind() {
    let cfg = configs().join("examples/wave.json");
    let o = lab(&["speed", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not belong"));
}

#[test]
fn every_config_parses() {
    for dir in ["acceptance", "examples"] {
        for e in std::fs::read_dir(configs().join(dir)).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "json") {
                let text = std::fs::read_to_string(&p).unwrap();
                nbbm_core::harness::ExperimentConfig::from_json(&text)
                    .and_then(|c| c.validate())
                    .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            }
        }
    }
}
