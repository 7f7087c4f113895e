//! Experiment configuration, orchestration and reports.
//!
//! An [`Experiment`] is looked up by name in an [`ExperimentRegistry`], runs
//! from an [`ExperimentConfig`], and returns CSV tables plus pass/fail
//! criteria. [`run_experiment`] times it and writes the tables and a
//! versioned `summary.json` to the output directory.
//!
//! Every random stream is derived from the master seed, so a config and a
//! seed determine the tables byte for byte.

mod experiments;
mod operators;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barriers_macro::SqueezeResult;
use crate::bbm_sim::{nbbm, NbbmOptions, ParticleSet};
use crate::density::{sample, DensityGrid, DensitySpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, tag};
use crate::stats::{mean, std_dev};

pub use experiments::builtin_experiments;
pub use operators::{operator_suite, OperatorProperty, PropertyTally};

/// Version of the `summary.json` layout.
pub const SCHEMA_VERSION: u32 = 1;

fn default_t() -> f64 {
    1.0
}

fn default_replicas() -> usize {
    1
}

/// Everything an experiment reads. Fields an experiment does not use are
/// ignored by it; unset optional fields take the experiment's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Registry name of the experiment.
    #[serde(default)]
    pub kind: String,
    #[serde(default)]
    pub density: DensitySpec,
    #[serde(default)]
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub delta_list: Vec<f64>,
    #[serde(default = "default_t")]
    pub t: f64,
    /// Main numerical tolerance of the experiment's criterion.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Dyadic levels `n` with `δ = t / 2ⁿ`: a single level or `[min, max]`.
    #[serde(default)]
    pub levels: Vec<u32>,
    /// Number of barrier steps.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub burn_in: Option<f64>,
    /// Monte Carlo paths.
    #[serde(default)]
    pub paths: Option<usize>,
    /// Time step of discretised paths.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub record_dt: Option<f64>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Experiment-specific acceptance bounds, keyed by criterion name.
    #[serde(default)]
    pub bounds: BTreeMap<String, f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: String::new(),
            density: DensitySpec::default(),
            n_list: Vec::new(),
            delta_list: Vec::new(),
            t: default_t(),
            tolerance: None,
            replicas: default_replicas(),
            seed: 0,
            out_dir: None,
            levels: Vec::new(),
            steps: None,
            horizon: None,
            burn_in: None,
            paths: None,
            step_size: None,
            record_dt: None,
            alphas: Vec::new(),
            bounds: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !(self.t > 0.0 && self.t.is_finite()) {
            return bad(format!("t must be positive, got {}", self.t));
        }
        if self.replicas == 0 {
            return bad("replicas must be positive".into());
        }
        if let Some(n) = self.n_list.iter().find(|n| **n == 0) {
            return bad(format!("population sizes must be positive, got {n}"));
        }
        if let Some(d) = self.delta_list.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return bad(format!("time steps must be positive, got {d}"));
        }
        let positive = [
            ("tolerance", self.tolerance),
            ("horizon", self.horizon),
            ("step_size", self.step_size),
            ("record_dt", self.record_dt),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if let Some(b) = self.burn_in {
            if !(b >= 0.0) {
                return bad(format!("burn_in must be nonnegative, got {b}"));
            }
        }
        if self.levels.len() > 2 || (self.levels.len() == 2 && self.levels[0] > self.levels[1]) {
            return bad(format!("levels must be [n] or [min, max], got {:?}", self.levels));
        }
        Ok(())
    }

    /// Seed of replica `i`.
    pub fn replica_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, tag::REPLICA, i as u64)
    }

    pub fn bound(&self, name: &str, default: f64) -> f64 {
        self.bounds.get(name).copied().unwrap_or(default)
    }

    pub fn level_range(&self, default: (u32, u32)) -> (u32, u32) {
        match self.levels.as_slice() {
            [n] => (*n, *n),
            [a, b] => (*a, *b),
            _ => default,
        }
    }
}

/// A numeric table, written as CSV with a header row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let mut put = |rec: Vec<String>| w.write_record(rec).map_err(|e| Error::io(path, e.into()));
        put(self.columns.clone())?;
        for row in &self.rows {
            put(row.iter().map(|v| v.to_string()).collect())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One pass/fail check. Soft failures flag a result that is usable but
/// short of its target, such as a squeeze that stopped above tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    #[serde(default)]
    pub soft: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

impl Criterion {
    /// Passes when `value <= bound`.
    pub fn at_most(name: &str, value: f64, bound: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: value <= bound,
            soft: false,
            value,
            bound,
            detail,
        }
    }

    pub fn check(name: &str, passed: bool, value: f64, bound: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            soft: false,
            value,
            bound,
            detail,
        }
    }

    pub fn soft(mut self) -> Self {
        self.soft = true;
        self
    }
}

/// What an experiment hands back before anything is written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub criteria: Vec<Criterion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRef {
    pub name: String,
    /// `None` when no output directory was given.
    pub path: Option<PathBuf>,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub criteria: Vec<Criterion>,
    pub tables: Vec<TableRef>,
    pub runtime_seconds: f64,
    pub version: String,
    /// In-memory copies of the tables; not part of `summary.json`.
    #[serde(skip)]
    pub data: Vec<Table>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    /// 0 when everything passed, 2 when only soft criteria failed, 1
    /// otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else if self.criteria.iter().all(|c| c.passed || c.soft) {
            2
        } else {
            1
        }
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.data.iter().find(|t| t.name == name)
    }
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    /// One line for `--help` style listings.
    fn summary(&self) -> &'static str;

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome>;
}

pub struct ExperimentRegistry {
    entries: Vec<Arc<dyn Experiment>>,
}

impl ExperimentRegistry {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::new();
        for e in builtin_experiments() {
            r.register(e);
        }
        r
    }

    /// Replaces any experiment registered under the same name.
    pub fn register(&mut self, e: Arc<dyn Experiment>) {
        self.entries.retain(|x| x.name() != e.name());
        self.entries.push(e);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Experiment>> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .cloned()
            .ok_or_else(|| Error::Unknown {
                kind: "experiment",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Experiment>> {
        self.entries.iter()
    }
}

impl Default for ExperimentRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Runs `cfg.kind` from the builtin registry.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    run_with(&ExperimentRegistry::builtin(), cfg)
}

pub fn run_with(registry: &ExperimentRegistry, cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let experiment = registry.get(&cfg.kind)?;
    let clock = Instant::now();
    let outcome = experiment.run(cfg)?;
    let runtime_seconds = clock.elapsed().as_secs_f64();
    let mut tables = Vec::with_capacity(outcome.tables.len());
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for t in &outcome.tables {
        let path = match &cfg.out_dir {
            Some(dir) => {
                let p = dir.join(format!("{}.csv", t.name));
                t.write(&p)?;
                Some(p)
            }
            None => None,
        };
        tables.push(TableRef {
            name: t.name.clone(),
            path,
            rows: t.rows.len(),
        });
    }
    let report = Report {
        schema_version: SCHEMA_VERSION,
        kind: cfg.kind.clone(),
        seed: cfg.seed,
        criteria: outcome.criteria,
        tables,
        runtime_seconds,
        version: env!("CARGO_PKG_VERSION").to_string(),
        data: outcome.tables,
    };
    for c in &report.criteria {
        log::info!(
            "{} {}: {} (value {:.6e}, bound {:.6e}) {}",
            report.kind,
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.value,
            c.bound,
            c.detail
        );
    }
    if let Some(dir) = &cfg.out_dir {
        let p = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

/// Sup over `a` of the distance from the empirical right tail of `set` to
/// the bracket `[F_lower(a), F_upper(a)]`.
pub fn bracket_distance(set: &ParticleSet, bracket: &SqueezeResult) -> f64 {
    let xs = set.positions();
    let n = xs.len() as f64;
    let far_left = f64::NEG_INFINITY;
    // left of every particle the empirical tail is 1
    let (lo0, up0) = bracket.bracket(far_left);
    let mut worst = (1.0 - up0).max(lo0 - 1.0).max(0.0);
    // on (x_{i-1}, x_i] the empirical tail is (N - i) / N and both
    // envelopes are largest at the left end
    for i in 1..=xs.len() {
        let c = (xs.len() - i) as f64 / n;
        let (lo, up) = bracket.bracket(xs[i - 1]);
        worst = worst.max(c - up).max(lo - c);
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HydroStatistic {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub distances: Vec<f64>,
}

/// Mean over replicas of [`bracket_distance`] for the N-BBM at the bracket's
/// time, started from `N` iid draws of `rho`.
pub fn hydro_distance(
    rho: &DensityGrid,
    bracket: &SqueezeResult,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<HydroStatistic> {
    if n == 0 || replicas == 0 {
        return Err(Error::InvalidArgument("need N > 0 and replicas > 0".into()));
    }
    let distances = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let rs = derive_seed(seed, tag::REPLICA, r as u64);
            let x0 = sample(rho, n, derive_seed(rs, tag::SAMPLE, 0))?;
            let run = nbbm(
                &x0,
                bracket.t,
                &NbbmOptions {
                    record_dt: bracket.t,
                    seed: derive_seed(rs, tag::DYNAMICS, 0),
                    keep_snapshots: false,
                },
            )?;
            Ok(bracket_distance(&run.last, bracket))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(HydroStatistic {
        n,
        mean: mean(&distances),
        std_error: if replicas > 1 {
            std_dev(&distances) / (replicas as f64).sqrt()
        } else {
            0.0
        },
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{make_density, DensityShape};
    use crate::stats::dkw_radius;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(r#"{"kind": "wave"}"#).unwrap();
        assert_eq!(cfg.t, 1.0);
        assert_eq!(cfg.replicas, 1);
        assert!(ExperimentConfig::from_json(r#"{"kind": "wave", "t": -1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind": "wave", "bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind": "wave", "levels": [5, 2]}"#).is_err());
        let cfg = ExperimentConfig::from_json(
            r#"{"kind": "squeeze", "density": {"kind": "uniform", "lo": 0, "hi": 1, "dx": 0.01}}"#,
        )
        .unwrap();
        assert_eq!(cfg.density.dx, Some(0.01));
        assert_ne!(cfg.replica_seed(0), cfg.replica_seed(1));
    }

    #[test]
    fn unknown_experiment() {
        assert!(matches!(
            run_experiment(&ExperimentConfig::new("nope")),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn bracket_distance_of_a_sample_is_dkw_sized() {
        // at t = 0 the bracket collapses to ρ; only sampling error remains
        let rho = make_density(&DensitySpec::new(DensityShape::Uniform { lo: 0.0, hi: 1.0 })).unwrap();
        let bracket = SqueezeResult {
            t: 0.0,
            n_final: 0,
            lower: rho.tail_function(),
            upper: rho.tail_function(),
            lower_density: rho.clone(),
            upper_density: rho.clone(),
            gap_l1: 0.0,
            converged: true,
            history: Vec::new(),
        };
        let n = 4000;
        let mut fails = 0;
        for s in 0..20 {
            let set = ParticleSet::from_positions(&sample(&rho, n, s).unwrap());
            if bracket_distance(&set, &bracket) > dkw_radius(n, 0.01) + 1e-3 {
                fails += 1;
            }
        }
        assert!(fails <= 2);
        let middle = ParticleSet::from_positions(&[0.5]);
        assert!((bracket_distance(&middle, &bracket) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn tables_are_written_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new("wave");
        cfg.out_dir = Some(dir.path().to_path_buf());
        let a = run_experiment(&cfg).unwrap();
        assert!(a.passed(), "{:?}", a.criteria);
        let first: Vec<Vec<u8>> = a
            .tables
            .iter()
            .map(|t| std::fs::read(t.path.as_ref().unwrap()).unwrap())
            .collect();
        let b = run_experiment(&cfg).unwrap();
        for (t, bytes) in b.tables.iter().zip(first) {
            assert_eq!(std::fs::read(t.path.as_ref().unwrap()).unwrap(), bytes);
        }
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["schema_version"], SCHEMA_VERSION);
    }
}
