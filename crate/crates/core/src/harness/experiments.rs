use std::f64::consts::SQRT_2;
use std::sync::Arc;

use rayon::prelude::*;

use super::{hydro_distance, operator_suite, Criterion, Experiment, ExperimentConfig, Outcome, Table};
use crate::barriers_macro::{
    barrier_pair, monotonicity_defects, squeeze, BarrierPair, BarrierRegistry, Side, SqueezeOptions,
    SqueezeResult,
};
use crate::barriers_micro::{coupled_triple, run_barrier, CaseCounts};
use crate::bbm_sim::{family_sizes, nbbm, simulate_forest, NbbmOptions};
use crate::density::{
    dominates, make_density, max_tail_excess, sample, DensityGrid, DensityShape, TailFunction,
    DEFAULT_DX,
};
use crate::error::{Error, Result};
use crate::fbp::{
    hitting_survival, right_derivative, speed_estimate, traveling_wave, wave_residual, BoundaryCurve,
    McOptions, SpeedOptions, WaveGrid,
};
use crate::rng::{derive_seed, tag};
use crate::stats::{chi_square_gof, mean, std_dev};

pub fn builtin_experiments() -> Vec<Arc<dyn Experiment>> {
    vec![
        Arc::new(Wave),
        Arc::new(Squeeze),
        Arc::new(Gap),
        Arc::new(Monotone),
        Arc::new(Sandwich),
        Arc::new(Hitting),
        Arc::new(Hydro),
        Arc::new(Couple),
        Arc::new(Speed),
        Arc::new(Operators),
        Arc::new(FamilyLaws),
        Arc::new(Simulate),
        Arc::new(Barriers),
    ]
}

fn wave_alpha(cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.density.shape {
        DensityShape::TravelingWave { alpha } => Ok(alpha),
        _ => Err(Error::InvalidArgument(format!(
            "experiment '{}' needs a traveling-wave density",
            cfg.kind
        ))),
    }
}

/// `n` with `t = 2ⁿ δ`.
fn dyadic_level(t: f64, delta: f64) -> Result<u32> {
    let n = (t / delta).log2().round();
    if n < 0.0 || ((2f64.powf(n) * delta - t) / t).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("{t} is not a dyadic multiple of {delta}")));
    }
    Ok(n as u32)
}

/// Row stride keeping a table near `max_rows` rows.
fn stride(len: usize, max_rows: usize) -> usize {
    len.div_ceil(max_rows).max(1)
}

fn tail_table(name: &str, lower: &TailFunction, upper: &TailFunction, max_rows: usize) -> Table {
    let mut table = Table::new(name, &["a", "lower", "upper"]);
    let (lo, hi) = (lower.x_lo.min(upper.x_lo), lower.x_hi().max(upper.x_hi()));
    let dx = lower.dx.min(upper.dx);
    let n = ((hi - lo) / dx).round() as usize;
    for i in (0..=n).step_by(stride(n + 1, max_rows)) {
        let a = lo + i as f64 * dx;
        table.push(vec![a, lower.at(a), upper.at(a)]);
    }
    table
}

fn brunet_derrida(n: usize) -> f64 {
    let l = (n as f64).ln();
    SQRT_2 - std::f64::consts::PI.powi(2) / (SQRT_2 * l * l)
}

/// Residual, boundary slope and mass of the traveling waves.
struct Wave;

impl Experiment for Wave {
    fn name(&self) -> &'static str {
        "wave"
    }

    fn summary(&self) -> &'static str {
        "traveling-wave profiles: ODE residual, boundary slope, unit mass"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let dx = cfg.density.dx.unwrap_or(DEFAULT_DX);
        let alphas = if cfg.alphas.is_empty() {
            vec![SQRT_2, 1.5, 2.0]
        } else {
            cfg.alphas.clone()
        };
        let mut checks = Table::new("wave_checks", &["alpha", "residual", "residual_bound", "slope", "mass"]);
        let mut profile = Table::new("wave_profile", &["x", "density"]);
        let (mut res_ok, mut slope_ok, mut mass_ok) = (true, true, true);
        let (mut worst_res, mut worst_slope, mut worst_mass) = (0.0f64, 0.0f64, 0.0f64);
        for (k, alpha) in alphas.iter().enumerate() {
            let w = traveling_wave(*alpha, WaveGrid { dx, x_max: None })?;
            let r = wave_residual(&w);
            // fourth-derivative scale of the profile; sup w at the critical speed
            let scale = w.density.sup_norm() * (w.alpha + w.beta).powi(4) / 4.0;
            let bound = 10.0 * dx * dx * scale;
            let slope = right_derivative(&w.density);
            let mass = w.density.mass() + w.density.leak();
            res_ok &= r <= bound;
            slope_ok &= (slope - 2.0).abs() <= 10.0 * dx;
            mass_ok &= (mass - 1.0).abs() <= 1e-8;
            worst_res = worst_res.max(r / bound);
            worst_slope = worst_slope.max((slope - 2.0).abs());
            worst_mass = worst_mass.max((mass - 1.0).abs());
            checks.push(vec![*alpha, r, bound, slope, mass]);
            if k == 0 {
                let n = w.density.len().min((10.0 / dx) as usize);
                for i in (0..n).step_by(stride(n, 2000)) {
                    profile.push(vec![w.density.center(i), w.density.values()[i]]);
                }
            }
        }
        Ok(Outcome {
            tables: vec![checks, profile],
            criteria: vec![
                Criterion::check(
                    "ode_residual",
                    res_ok,
                    worst_res,
                    1.0,
                    "residual / (10 dx² sup w (α+β)⁴/4)".into(),
                ),
                Criterion::check("boundary_slope", slope_ok, worst_slope, 10.0 * dx, "|w'(0) - 2|".into()),
                Criterion::check("unit_mass", mass_ok, worst_mass, 1e-8, "|mass - 1|".into()),
            ],
        })
    }
}

/// Dyadic squeeze of the hydrodynamic limit at time `t`.
struct Squeeze;

impl Experiment for Squeeze {
    fn name(&self) -> &'static str {
        "squeeze"
    }

    fn summary(&self) -> &'static str {
        "refine the barrier bracket until its L1 gap meets the tolerance"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let rho = make_density(&cfg.density)?;
        let (n_min, n_max) = cfg.level_range((1, 8));
        let tol = cfg.tolerance.unwrap_or(1e-2);
        let r = squeeze(&rho, cfg.t, &SqueezeOptions { tol, n_min, n_max })?;
        let mut history = Table::new("squeeze_history", &["level", "delta", "gap_l1", "tail_width"]);
        for h in &r.history {
            history.push(vec![h.level as f64, h.delta, h.gap_l1, h.tail_width]);
        }
        let width = r.tail_width()?;
        Ok(Outcome {
            tables: vec![history, tail_table("squeeze_bracket", &r.lower, &r.upper, 5000)],
            criteria: vec![Criterion::check(
                "squeeze_converged",
                r.converged,
                r.gap_l1,
                tol,
                format!("level {} gap {:.3e} tail width {:.3e}", r.n_final, r.gap_l1, width),
            )
            .soft()],
        })
    }
}

/// Halving the step roughly halves the barrier gap.
struct Gap;

impl Experiment for Gap {
    fn name(&self) -> &'static str {
        "gap"
    }

    fn summary(&self) -> &'static str {
        "L1 gap between the barriers shrinks linearly in the step"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let rho = make_density(&cfg.density)?;
        let mut deltas = if cfg.delta_list.is_empty() {
            vec![0.25, 0.125, 0.0625, 0.03125]
        } else {
            cfg.delta_list.clone()
        };
        deltas.sort_by(|a, b| b.total_cmp(a));
        let (lo, hi) = (cfg.bound("ratio_min", 0.3), cfg.bound("ratio_max", 0.7));
        let mut table = Table::new("gap", &["delta", "level", "gap_l1", "tail_width", "ratio"]);
        let mut prev: Option<f64> = None;
        let mut ok = true;
        let mut ratios = Vec::new();
        for d in deltas {
            let pair = barrier_pair(&rho, cfg.t, dyadic_level(cfg.t, d)?)?;
            let ratio = prev.map_or(f64::NAN, |p| pair.gap_l1 / p);
            if prev.is_some() {
                ok &= (lo..=hi).contains(&ratio);
                ratios.push(ratio);
            }
            table.push(vec![d, pair.level as f64, pair.gap_l1, pair.tail_width()?, ratio]);
            prev = Some(pair.gap_l1);
        }
        let worst = ratios.iter().map(|r| (r - 0.5).abs()).fold(0.0, f64::max);
        Ok(Outcome {
            tables: vec![table],
            criteria: vec![Criterion::check(
                "gap_halves",
                ok && !ratios.is_empty(),
                worst + 0.5,
                hi,
                format!("ratios {ratios:.4?} within [{lo}, {hi}]"),
            )],
        })
    }
}

/// Lattice-alignment allowance between two levels: zero when both share a
/// lattice, else one coarse cell of the steepest tail.
fn alignment_tolerance(a: &BarrierPair, b: &BarrierPair) -> f64 {
    let (da, db) = (a.lower.dx(), b.lower.dx());
    if ((da - db) / da).abs() < 1e-12 {
        return 0.0;
    }
    let sup = [&a.lower, &a.upper, &b.lower, &b.upper]
        .iter()
        .map(|g| g.sup_norm())
        .fold(0.0, f64::max);
    da.max(db) * sup
}

/// Lower tails grow and upper tails shrink under dyadic refinement.
struct Monotone;

impl Experiment for Monotone {
    fn name(&self) -> &'static str {
        "monotone"
    }

    fn summary(&self) -> &'static str {
        "barrier tails are monotone in the dyadic level"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let rho = make_density(&cfg.density)?;
        let (n_min, n_max) = cfg.level_range((2, 7));
        let tol = cfg.tolerance.unwrap_or(1e-8);
        let mut table = Table::new(
            "monotone",
            &["level", "gap_l1", "lower_decrease", "upper_increase", "alignment"],
        );
        let mut prev: Option<BarrierPair> = None;
        let mut worst = 0.0f64;
        for level in n_min..=n_max {
            let pair = barrier_pair(&rho, cfg.t, level)?;
            let row = match &prev {
                Some(c) => {
                    let (lo, up) = monotonicity_defects(c, &pair)?;
                    let align = alignment_tolerance(c, &pair);
                    worst = worst.max(lo.max(up) - align);
                    vec![level as f64, pair.gap_l1, lo, up, align]
                }
                None => vec![level as f64, pair.gap_l1, 0.0, 0.0, 0.0],
            };
            table.push(row);
            prev = Some(pair);
        }
        Ok(Outcome {
            tables: vec![table],
            criteria: vec![Criterion::at_most(
                "tails_monotone",
                worst,
                tol,
                format!("levels {n_min}..={n_max}, largest defect beyond alignment"),
            )],
        })
    }
}

/// The bracket contains the exact traveling-wave solution.
struct Sandwich;

impl Experiment for Sandwich {
    fn name(&self) -> &'static str {
        "sandwich"
    }

    fn summary(&self) -> &'static str {
        "squeeze bracket contains the translated traveling wave"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let alpha = wave_alpha(cfg)?;
        let dx = cfg.density.dx.unwrap_or(DEFAULT_DX);
        let w = traveling_wave(alpha, WaveGrid { dx, x_max: None })?;
        let (level, _) = cfg.level_range((6, 6));
        let pair = barrier_pair(&w.density, cfg.t, level)?;
        let r = SqueezeResult::from_pair(cfg.t, pair, f64::INFINITY, Vec::new());
        let shift = alpha * cfg.t;
        let exact = |a: f64| w.tail(a - shift);
        let mut excess = 0.0f64;
        let mut table = Table::new("sandwich", &["a", "lower", "exact", "upper"]);
        for f in [&r.lower, &r.upper] {
            for (a, _) in f.points() {
                let (lo, up) = r.bracket(a);
                excess = excess.max(lo - exact(a)).max(exact(a) - up);
            }
        }
        let n = r.lower.values.len();
        for i in (0..n).step_by(stride(n, 5000)) {
            let a = r.lower.x_lo + i as f64 * r.lower.dx;
            let (lo, up) = r.bracket(a);
            table.push(vec![a, lo, exact(a), up]);
        }
        let width = r.tail_width()?;
        let containment = cfg.tolerance.unwrap_or(1e-7);
        let max_width = cfg.bound("max_width", 5e-3);
        Ok(Outcome {
            tables: vec![table],
            criteria: vec![
                Criterion::at_most(
                    "bracket_contains_wave",
                    excess,
                    containment,
                    format!("level {level}, largest excursion outside the bracket"),
                ),
                Criterion::at_most("bracket_width", width, max_width, format!("sup tail width at level {level}")),
            ],
        })
    }
}

/// Weighted survival against the wave's own boundary stays at one.
struct Hitting;

impl Experiment for Hitting {
    fn name(&self) -> &'static str {
        "hitting"
    }

    fn summary(&self) -> &'static str {
        "e^t P(no hit of the moving boundary) stays at 1 for the traveling wave"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let alpha = wave_alpha(cfg)?;
        let rho = make_density(&cfg.density)?;
        let t_max = cfg.horizon.unwrap_or(cfg.t);
        let mut opts = McOptions::new(cfg.paths.unwrap_or(100_000), cfg.step_size.unwrap_or(1e-4), cfg.seed);
        opts.batch_size = opts.batch_size.min(opts.n_paths);
        let curve = hitting_survival(
            &rho,
            &BoundaryCurve::linear(0.0, alpha),
            t_max,
            cfg.record_dt.unwrap_or(0.1),
            &opts,
        )?;
        let sigmas = cfg.bound("sigmas", 3.0);
        let mut table = Table::new("hitting", &["t", "estimate", "std_error", "survival"]);
        let mut worst_z = 0.0f64;
        let mut worst_dev = 0.0f64;
        for k in 0..curve.times.len() {
            let (e, se) = (curve.estimates[k], curve.std_errors[k]);
            table.push(vec![curve.times[k], e, se, curve.survival[k]]);
            let dev = (e - 1.0).abs();
            worst_dev = worst_dev.max(dev);
            worst_z = worst_z.max(if se > 0.0 {
                dev / se
            } else if dev > 0.0 {
                f64::INFINITY
            } else {
                0.0
            });
        }
        Ok(Outcome {
            tables: vec![table],
            criteria: vec![Criterion::at_most(
                "weighted_survival_is_one",
                worst_z,
                sigmas,
                format!("sup |estimate - 1| = {worst_dev:.4e} over t <= {t_max}"),
            )],
        })
    }
}

/// Distance of N-BBM empirical tails to the squeeze bracket.
struct Hydro;

impl Experiment for Hydro {
    fn name(&self) -> &'static str {
        "hydro"
    }

    fn summary(&self) -> &'static str {
        "N-BBM empirical tails approach the squeeze bracket as N grows"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let rho = make_density(&cfg.density)?;
        let delta = cfg.delta_list.first().copied().unwrap_or(cfg.t / 64.0);
        let pair = barrier_pair(&rho, cfg.t, dyadic_level(cfg.t, delta)?)?;
        let bracket = SqueezeResult::from_pair(cfg.t, pair, f64::INFINITY, Vec::new());
        let width = bracket.tail_width()?;
        let ns = if cfg.n_list.is_empty() {
            vec![250, 1000, 4000]
        } else {
            cfg.n_list.clone()
        };
        let mut summary = Table::new("hydro", &["n", "mean_distance", "std_error", "bracket_width"]);
        let mut replicas = Table::new("hydro_replicas", &["n", "replica", "distance"]);
        let mut means = Vec::new();
        for (j, n) in ns.iter().enumerate() {
            let stat = hydro_distance(&rho, &bracket, *n, cfg.replicas, derive_seed(cfg.seed, tag::REPLICA, j as u64))?;
            summary.push(vec![*n as f64, stat.mean, stat.std_error, width]);
            for (r, d) in stat.distances.iter().enumerate() {
                replicas.push(vec![*n as f64, r as f64, *d]);
            }
            means.push(stat.mean);
        }
        let decreasing = means.windows(2).all(|w| w[1] < w[0]);
        let last = *means.last().unwrap_or(&f64::NAN);
        Ok(Outcome {
            tables: vec![summary, replicas],
            criteria: vec![
                Criterion::check(
                    "distance_decreases_in_n",
                    decreasing,
                    means.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max),
                    0.0,
                    format!("mean distances {means:.4?}"),
                ),
                Criterion::at_most(
                    "distance_at_largest_n",
                    last,
                    cfg.bound("max_distance", 0.05),
                    format!("bracket width {width:.3e}"),
                ),
            ],
        })
    }
}

/// Pathwise ordering of the coupled barriers and N-BBM.
struct Couple;

impl Experiment for Couple {
    fn name(&self) -> &'static str {
        "couple"
    }

    fn summary(&self) -> &'static str {
        "coupled lower barrier <= N-BBM <= upper barrier on every path"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let rho = make_density(&cfg.density)?;
        let n = cfg.n_list.first().copied().unwrap_or(100);
        let delta = cfg.delta_list.first().copied().unwrap_or(0.1);
        let k = cfg.steps.unwrap_or(10);
        let runs = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let rs = cfg.replica_seed(r);
                let x0 = sample(&rho, n, derive_seed(rs, tag::SAMPLE, 0))?;
                coupled_triple(&x0, delta, k, rs)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut table = Table::new(
            "couple",
            &["replica", "step", "lower_vs_middle", "middle_vs_upper", "lower_deficit", "lower_cut", "upper_cut"],
        );
        let mut cases = CaseCounts::default();
        let mut violations = 0usize;
        for (r, run) in runs.iter().enumerate() {
            for (step, (a, b)) in run.violations().into_iter().enumerate() {
                violations += a + b;
                let cut = |v: &[f64]| if step == 0 { f64::NAN } else { v[step - 1] };
                table.push(vec![
                    r as f64,
                    step as f64,
                    a as f64,
                    b as f64,
                    run.lower.deficits[step] as f64,
                    cut(&run.lower.cut_points),
                    cut(&run.upper.cut_points),
                ]);
            }
            cases.shared_victim += run.cases.shared_victim;
            cases.split_victim += run.cases.split_victim;
            cases.rank_branches += run.cases.rank_branches;
            cases.leftmost_branches += run.cases.leftmost_branches;
            cases.same_label += run.cases.same_label;
        }
        let mut case_table = Table::new(
            "couple_cases",
            &["shared_victim", "split_victim", "rank_branches", "leftmost_branches", "same_label"],
        );
        case_table.push(vec![
            cases.shared_victim as f64,
            cases.split_victim as f64,
            cases.rank_branches as f64,
            cases.leftmost_branches as f64,
            cases.same_label as f64,
        ]);
        Ok(Outcome {
            tables: vec![table, case_table],
            criteria: vec![Criterion::at_most(
                "no_order_violations",
                violations as f64,
                0.0,
                format!("{} runs, {} coupling events", cfg.replicas, cases.total()),
            )],
        })
    }
}

/// Front speed of the N-BBM against N.
struct Speed;

impl Experiment for Speed {
    fn name(&self) -> &'static str {
        "speed"
    }

    fn summary(&self) -> &'static str {
        "N-BBM front speed increases towards sqrt(2)"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let mut ns = if cfg.n_list.is_empty() {
            vec![1, 10, 100, 1000]
        } else {
            cfg.n_list.clone()
        };
        ns.sort_unstable();
        let horizon = cfg.horizon.unwrap_or(50.0);
        let burn_in = cfg.burn_in.unwrap_or(10.0);
        let jobs: Vec<(usize, usize)> = ns.iter().flat_map(|n| (0..cfg.replicas).map(move |r| (*n, r))).collect();
        let estimates = jobs
            .par_iter()
            .map(|(n, r)| {
                speed_estimate(
                    *n,
                    &SpeedOptions {
                        horizon,
                        burn_in,
                        record_dt: cfg.record_dt.unwrap_or(0.1),
                        seed: cfg.replica_seed(*r),
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut runs = Table::new("speed_runs", &["n", "replica", "slope", "gap_statistic"]);
        for ((n, r), e) in jobs.iter().zip(&estimates) {
            runs.push(vec![*n as f64, *r as f64, e.slope, e.gap_statistic.unwrap_or(f64::NAN)]);
        }
        let mut summary = Table::new("speed", &["n", "mean_slope", "std_error", "brunet_derrida"]);
        let mut means = Vec::new();
        for (j, n) in ns.iter().enumerate() {
            let slopes: Vec<f64> = estimates[j * cfg.replicas..(j + 1) * cfg.replicas]
                .iter()
                .map(|e| e.slope)
                .collect();
            let se = if slopes.len() > 1 {
                std_dev(&slopes) / (slopes.len() as f64).sqrt()
            } else {
                0.0
            };
            let bd = if *n > 1 { brunet_derrida(*n) } else { f64::NAN };
            summary.push(vec![*n as f64, mean(&slopes), se, bd]);
            means.push(mean(&slopes));
        }
        let band = cfg.bound("band", 0.15);
        let mut criteria = vec![Criterion::check(
            "speed_increases_in_n",
            means.windows(2).all(|w| w[1] > w[0]),
            means.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max),
            0.0,
            format!("mean slopes {means:.4?} for N = {ns:?}"),
        )];
        if let Some(j) = ns.iter().rposition(|n| *n > 1) {
            criteria.push(Criterion::at_most(
                "speed_near_sqrt2",
                (means[j] - SQRT_2).abs(),
                band,
                format!("N = {}: {:.4}", ns[j], means[j]),
            ));
        }
        if let Some(j) = ns.iter().position(|n| *n == 1) {
            criteria.push(Criterion::at_most(
                "single_particle_speed",
                means[j].abs(),
                cfg.bound("single_band", 0.1),
                format!("N = 1: {:.4}", means[j]),
            ));
        }
        Ok(Outcome {
            tables: vec![summary, runs],
            criteria,
        })
    }
}

/// Randomised order, contraction and smoothing properties of the operators.
struct Operators;

impl Experiment for Operators {
    fn name(&self) -> &'static str {
        "operators"
    }

    fn summary(&self) -> &'static str {
        "cut and heat operators: order, contraction and gradient bounds"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let tol = cfg.tolerance.unwrap_or(1e-10);
        let tallies = operator_suite(cfg.replicas, tol, cfg.seed)?;
        let mut table = Table::new("operators", &["property", "cases", "failures", "worst_excess"]);
        let mut criteria = Vec::new();
        for (k, t) in tallies.iter().enumerate() {
            table.push(vec![k as f64, t.cases as f64, t.failures as f64, t.worst]);
            criteria.push(Criterion::at_most(
                t.property.name(),
                t.failures as f64,
                0.0,
                format!("{} cases, worst excess {:.3e}", t.cases, t.worst),
            ));
        }
        Ok(Outcome {
            tables: vec![table],
            criteria,
        })
    }
}

/// Population mean and family-size law of BBM.
struct FamilyLaws;

impl Experiment for FamilyLaws {
    fn name(&self) -> &'static str {
        "family"
    }

    fn summary(&self) -> &'static str {
        "BBM population mean e^t and geometric family sizes"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let delta = cfg.delta_list.first().copied().unwrap_or(cfg.t / 2.0);
        dyadic_level(cfg.t, delta)?;
        let forest = simulate_forest(&vec![0.0; cfg.replicas], cfg.t, delta, cfg.seed)?;
        let pop: Vec<f64> = family_sizes(&forest, cfg.t)?.iter().map(|s| *s as f64).collect();
        let m = mean(&pop);
        let se = std_dev(&pop) / (pop.len() as f64).sqrt();
        let expected_mean = cfg.t.exp();
        let sizes = family_sizes(&forest, delta)?;
        let p = (-delta).exp();
        let k_max = sizes.iter().copied().max().unwrap_or(1);
        let mut observed = vec![0u64; k_max];
        for s in &sizes {
            observed[s - 1] += 1;
        }
        let n = sizes.len() as f64;
        let mut expected: Vec<f64> = (1..=k_max).map(|k| n * p * (1.0 - p).powi(k as i32 - 1)).collect();
        // the last bin carries the whole geometric tail
        if let Some(last) = expected.last_mut() {
            *last = n * (1.0 - p).powi(k_max as i32 - 1);
        }
        let (stat, p_value) = chi_square_gof(&observed, &expected);
        let mut table = Table::new("family_sizes", &["size", "observed", "expected"]);
        for k in 0..k_max {
            table.push(vec![(k + 1) as f64, observed[k] as f64, expected[k]]);
        }
        let mut pop_table = Table::new("population", &["t", "mean", "std_error", "expected"]);
        pop_table.push(vec![cfg.t, m, se, expected_mean]);
        let sigmas = cfg.bound("sigmas", 3.0);
        let p_min = cfg.bound("p_min", 0.01);
        Ok(Outcome {
            tables: vec![table, pop_table],
            criteria: vec![
                Criterion::at_most(
                    "population_mean",
                    (m - expected_mean).abs() / se,
                    sigmas,
                    format!("mean {m:.5} vs e^t {expected_mean:.5}, {} replicas", pop.len()),
                ),
                Criterion::check(
                    "family_size_geometric",
                    p_value > p_min,
                    p_value,
                    p_min,
                    format!("chi-square {stat:.3}, delta {delta}"),
                ),
            ],
        })
    }
}

/// One N-BBM trajectory.
struct Simulate;

impl Experiment for Simulate {
    fn name(&self) -> &'static str {
        "simulate"
    }

    fn summary(&self) -> &'static str {
        "simulate the N-BBM from iid draws of the density"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let rho = make_density(&cfg.density)?;
        let n = cfg.n_list.first().copied().unwrap_or(1000);
        let x0 = sample(&rho, n, derive_seed(cfg.seed, tag::SAMPLE, 0))?;
        let horizon = cfg.horizon.unwrap_or(cfg.t);
        let run = nbbm(
            &x0,
            horizon,
            &NbbmOptions {
                record_dt: cfg.record_dt.unwrap_or(horizon / 100.0),
                seed: derive_seed(cfg.seed, tag::DYNAMICS, 0),
                keep_snapshots: false,
            },
        )?;
        let mut traj = Table::new("nbbm_trajectory", &["t", "leftmost", "gap"]);
        for k in 0..run.times.len() {
            traj.push(vec![run.times[k], run.leftmost[k], run.gap[k]]);
        }
        let mut last = Table::new("nbbm_final", &["position", "family"]);
        for p in run.last.entries() {
            last.push(vec![p.position, p.family as f64]);
        }
        Ok(Outcome {
            tables: vec![traj, last],
            criteria: vec![Criterion::check(
                "population_size",
                run.last.len() == n,
                run.last.len() as f64,
                n as f64,
                format!("{} branchings", run.branchings),
            )],
        })
    }
}

/// Deterministic barriers, and stochastic ones when `n_list` is set.
struct Barriers;

impl Experiment for Barriers {
    fn name(&self) -> &'static str {
        "barriers"
    }

    fn summary(&self) -> &'static str {
        "evolve the deterministic (and stochastic) barriers for t / delta steps"
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        let rho = make_density(&cfg.density)?;
        let delta = cfg.delta_list.first().copied().unwrap_or(cfg.t / 16.0);
        let k = cfg.steps.unwrap_or((cfg.t / delta).round().max(1.0) as usize);
        let registry = BarrierRegistry::builtin();
        let mut finals: Vec<DensityGrid> = Vec::new();
        let mut cuts: Vec<Vec<f64>> = Vec::new();
        for side in [Side::Lower, Side::Upper] {
            let op = registry.for_side(side)?;
            let mut u = rho.clone();
            let mut qs = Vec::with_capacity(k);
            for _ in 0..k {
                let (next, q) = op.step(&u, delta)?;
                qs.push(q);
                u = next;
            }
            finals.push(u);
            cuts.push(qs);
        }
        let mut cut_table = Table::new("barrier_cuts", &["step", "lower_cut", "upper_cut"]);
        for s in 0..k {
            cut_table.push(vec![s as f64, cuts[0][s], cuts[1][s]]);
        }
        let excess = max_tail_excess(&finals[0], &finals[1])?;
        let mut tables = vec![
            cut_table,
            tail_table("barrier_tails", &finals[0].tail_function(), &finals[1].tail_function(), 5000),
        ];
        let mut criteria = vec![Criterion::check(
            "deterministic_order",
            dominates(&finals[0], &finals[1], 1e-10)?,
            excess,
            1e-10,
            format!("{k} steps of {delta}"),
        )];
        if let Some(n) = cfg.n_list.first() {
            let x0 = sample(&rho, *n, derive_seed(cfg.seed, tag::SAMPLE, 0))?;
            let lower = run_barrier(&x0, delta, k, Side::Lower, derive_seed(cfg.seed, tag::REPLICA, 0))?;
            let upper = run_barrier(&x0, delta, k, Side::Upper, derive_seed(cfg.seed, tag::REPLICA, 1))?;
            let mut t = Table::new(
                "stochastic_barriers",
                &["step", "lower_cut", "lower_size", "lower_deficit", "upper_cut", "upper_size"],
            );
            for s in 0..k {
                t.push(vec![
                    (s + 1) as f64,
                    lower.cut_points[s],
                    lower.sets[s + 1].len() as f64,
                    lower.deficits[s + 1] as f64,
                    upper.cut_points[s],
                    upper.sets[s + 1].len() as f64,
                ]);
            }
            tables.push(t);
            let sizes_ok = lower.sets.iter().all(|s| s.len() <= *n) && upper.sets.iter().all(|s| s.len() == *n);
            criteria.push(Criterion::check(
                "stochastic_sizes",
                sizes_ok,
                lower.deficits.iter().copied().max().unwrap_or(0) as f64,
                *n as f64,
                "lower keeps at most N, upper exactly N".into(),
            ));
        }
        Ok(Outcome { tables, criteria })
    }
}
