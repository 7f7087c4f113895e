//! Free-boundary numerics: traveling waves, boundary curves, Brownian
//! first-passage Monte Carlo and the finite-N front speed.
//!
//! The free boundary problem is `u_t = ½ u_rr + u` on `r > L_t` with
//! `u(L_t, t) = 0` and unit mass. Its traveling waves `w_α(x - α t)` have
//! the closed form built by [`traveling_wave`]; the Monte Carlo estimators
//! evaluate the Brownian representations of a solution for a given curve
//! `L` and can therefore certify a candidate pair `(ρ, L)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbm_sim::{nbbm, NbbmOptions};
use crate::density::{sample, DensityGrid, DEFAULT_DX};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::stats::ols_slope;

/// Piecewise-linear curve `t ↦ L_t`, extrapolated linearly past its end
/// knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCurve {
    knots: Vec<(f64, f64)>,
}

impl BoundaryCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidArgument("boundary curve needs at least one knot".into()));
        }
        if knots.iter().any(|(t, l)| !t.is_finite() || !l.is_finite()) {
            return Err(Error::InvalidArgument("boundary knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("boundary knot times must increase strictly".into()));
        }
        Ok(Self { knots })
    }

    pub fn constant(level: f64) -> Self {
        Self {
            knots: vec![(0.0, level)],
        }
    }

    /// `L_t = start + speed · t`.
    pub fn linear(start: f64, speed: f64) -> Self {
        Self {
            knots: vec![(0.0, start), (1.0, start + speed)],
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if k.len() == 1 {
            return k[0].1;
        }
        let i = k.partition_point(|(s, _)| *s <= t).clamp(1, k.len() - 1);
        let (t0, l0) = k[i - 1];
        let (t1, l1) = k[i];
        l0 + (l1 - l0) * (t - t0) / (t1 - t0)
    }

    /// `s ↦ L_{t - s}` on `[0, t]`.
    pub fn reversed(&self, t: f64) -> Self {
        let mut times: Vec<f64> = self
            .knots
            .iter()
            .map(|(s, _)| t - s)
            .filter(|s| *s > 0.0 && *s < t)
            .collect();
        times.push(0.0);
        times.push(t);
        times.sort_by(f64::total_cmp);
        times.dedup();
        let knots = times.into_iter().map(|s| (s, self.at(t - s))).collect();
        Self { knots }
    }
}

/// Discretisation of a traveling wave.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveGrid {
    pub dx: f64,
    /// Right end of the support; by default where the tail drops below
    /// `e^-40`.
    pub x_max: Option<f64>,
}

impl Default for WaveGrid {
    fn default() -> Self {
        Self {
            dx: DEFAULT_DX,
            x_max: None,
        }
    }
}

/// Unit-mass profile solving `½ w'' + α w' + w = 0` on `x > 0`, `w(0) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelingWave {
    pub alpha: f64,
    /// `√(α² - 2)`.
    pub beta: f64,
    pub normalization: f64,
    pub density: DensityGrid,
}

impl TravelingWave {
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let (a, b, m) = (self.alpha, self.beta, self.normalization);
        if b == 0.0 {
            m * x * (-a * x).exp()
        } else {
            m * (-a * x).exp() * (b * x).sinh()
        }
    }

    /// `∫_x^∞ w`.
    pub fn tail(&self, x: f64) -> f64 {
        wave_tail(self.alpha, self.beta, self.normalization, x)
    }
}

fn wave_tail(a: f64, b: f64, m: f64, x: f64) -> f64 {
    let x = x.max(0.0);
    if b == 0.0 {
        // ∫_x^∞ m s e^{-a s} ds
        m * (-a * x).exp() * (a * x + 1.0) / (a * a)
    } else {
        0.5 * m * ((-(a - b) * x).exp() / (a - b) - (-(a + b) * x).exp() / (a + b))
    }
}

pub fn traveling_wave(alpha: f64, grid: WaveGrid) -> Result<TravelingWave> {
    let sqrt2 = std::f64::consts::SQRT_2;
    if !(alpha.is_finite() && alpha >= sqrt2 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "traveling waves need alpha >= sqrt(2), got {alpha}"
        )));
    }
    let alpha = alpha.max(sqrt2);
    // α² - 2 is pure rounding noise at the critical speed
    let excess = alpha * alpha - 2.0;
    let (alpha, beta) = if excess < 1e-12 { (sqrt2, 0.0) } else { (alpha, excess.sqrt()) };
    let normalization = if beta == 0.0 { 2.0 } else { 2.0 / beta };
    // slowest decay rate of the tail is α - β
    let x_max = grid.x_max.unwrap_or(40.0 / (alpha - beta));
    let density = DensityGrid::from_survival(0.0, x_max, grid.dx, |x| {
        wave_tail(alpha, beta, normalization, x)
    })?;
    Ok(TravelingWave {
        alpha,
        beta,
        normalization,
        density,
    })
}

/// `max |½ w'' + α w' + w|` over interior cells, by central differences on
/// the cell values.
pub fn wave_residual(w: &TravelingWave) -> f64 {
    residual_of(w.density.values(), w.density.dx(), w.alpha)
}

fn residual_of(v: &[f64], dx: f64, alpha: f64) -> f64 {
    v.windows(3)
        .map(|s| {
            let d2 = (s[2] - 2.0 * s[1] + s[0]) / (dx * dx);
            let d1 = (s[2] - s[0]) / (2.0 * dx);
            (0.5 * d2 + alpha * d1 + s[1]).abs()
        })
        .fold(0.0, f64::max)
}

/// `w'(0+)` from the first two cell averages, exact for quadratics vanishing
/// at 0.
pub fn right_derivative(w: &DensityGrid) -> f64 {
    let v = w.values();
    match v {
        [v0, v1, ..] => (7.0 * v0 - v1) / (2.0 * w.dx()),
        [v0] => 2.0 * v0 / w.dx(),
        [] => 0.0,
    }
}

/// How a discretised path decides that it crossed the boundary between two
/// grid times.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingCorrection {
    /// Kill with the crossing probability of the Brownian bridge against the
    /// linearised boundary.
    #[default]
    BrownianBridge,
    /// Check the boundary at grid times only.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub n_paths: usize,
    /// Time step.
    pub h: f64,
    pub seed: u64,
    #[serde(default)]
    pub correction: CrossingCorrection,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    4096
}

impl McOptions {
    pub fn new(n_paths: usize, h: f64, seed: u64) -> Self {
        Self {
            n_paths,
            h,
            seed,
            correction: CrossingCorrection::BrownianBridge,
            batch_size: default_batch(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("n_paths and batch_size must be positive".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {}", self.h)));
        }
        Ok(())
    }

    fn batches(&self) -> Vec<(u64, usize)> {
        let full = self.n_paths / self.batch_size;
        let rest = self.n_paths % self.batch_size;
        let mut out: Vec<(u64, usize)> = (0..full as u64)
            .map(|b| (derive_seed(self.seed, tag::MC_BATCH, b), self.batch_size))
            .collect();
        if rest > 0 {
            out.push((derive_seed(self.seed, tag::MC_BATCH, full as u64), rest));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// `e^t ∫ ρ(x) P_x(τ^L > t) dx` on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Unweighted survival fractions.
    pub survival: Vec<f64>,
    pub n_paths: usize,
}

struct PathOutcome {
    records_survived: usize,
    end: Option<f64>,
}

struct Stepper<'a> {
    curve: &'a BoundaryCurve,
    h: f64,
    sqrt_h: f64,
    n_steps: usize,
    correction: CrossingCorrection,
}

impl<'a> Stepper<'a> {
    fn new(curve: &'a BoundaryCurve, t: f64, h: f64, correction: CrossingCorrection) -> Self {
        let n_steps = (t / h).round().max(1.0) as usize;
        let h = t / n_steps as f64;
        Self {
            curve,
            h,
            sqrt_h: h.sqrt(),
            n_steps,
            correction,
        }
    }

    fn step_of(&self, t: f64) -> usize {
        ((t / self.h).round() as usize).min(self.n_steps)
    }

    /// `records` are sorted step indices.
    fn run(&self, mut x: f64, records: &[usize], rng: &mut ChaCha8Rng) -> PathOutcome {
        let mut next = 0;
        let mut l_prev = self.curve.at(0.0);
        if x <= l_prev {
            return PathOutcome {
                records_survived: 0,
                end: None,
            };
        }
        while next < records.len() && records[next] == 0 {
            next += 1;
        }
        for s in 1..=self.n_steps {
            let z: f64 = rng.sample(StandardNormal);
            let y = x + self.sqrt_h * z;
            let l = self.curve.at(s as f64 * self.h);
            if y <= l {
                return PathOutcome {
                    records_survived: next,
                    end: None,
                };
            }
            if self.correction == CrossingCorrection::BrownianBridge {
                let e = 2.0 * (x - l_prev) * (y - l) / self.h;
                // exp(-40) is below the resolution of the uniform draw
                if e < 40.0 && rng.random::<f64>() < (-e).exp() {
                    return PathOutcome {
                        records_survived: next,
                        end: None,
                    };
                }
            }
            x = y;
            l_prev = l;
            while next < records.len() && records[next] == s {
                next += 1;
            }
        }
        PathOutcome {
            records_survived: next,
            end: Some(x),
        }
    }
}

fn weighted(t: f64, hits: u64, n: usize) -> McEstimate {
    let p = hits as f64 / n as f64;
    let w = t.exp();
    McEstimate {
        value: w * p,
        std_error: w * (p * (1.0 - p) / n as f64).sqrt(),
    }
}

/// Weighted survival `e^t ∫ ρ(x) P_x(τ^L > t) dx` at `t = 0, dt, 2dt, … ≤
/// t_max`, estimated from `opts.n_paths` discretised paths started from `ρ`.
pub fn hitting_survival(
    rho: &DensityGrid,
    curve: &BoundaryCurve,
    t_max: f64,
    record_dt: f64,
    opts: &McOptions,
) -> Result<SurvivalCurve> {
    opts.validate()?;
    if !(t_max > 0.0 && record_dt > 0.0) {
        return Err(Error::InvalidArgument("t_max and record_dt must be positive".into()));
    }
    let stepper = Stepper::new(curve, t_max, opts.h, opts.correction);
    let n_rec = (t_max / record_dt + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=n_rec).map(|k| k as f64 * record_dt).collect();
    let records: Vec<usize> = times.iter().map(|t| stepper.step_of(*t)).collect();
    let per_batch: Vec<Result<Vec<u64>>> = opts
        .batches()
        .into_par_iter()
        .map(|(seed, size)| {
            let starts = sample(rho, size, seed)?;
            let mut rng = stream_rng(seed, tag::DYNAMICS);
            let mut survived = vec![0u64; records.len() + 1];
            for x in starts {
                survived[stepper.run(x, &records, &mut rng).records_survived] += 1;
            }
            Ok(survived)
        })
        .collect();
    // counts[k] = paths alive at record k
    let mut counts = vec![0u64; records.len()];
    for batch in per_batch {
        let hist = batch?;
        let mut alive = 0;
        for k in (0..records.len()).rev() {
            alive += hist[k + 1];
            counts[k] += alive;
        }
    }
    let est: Vec<McEstimate> = times
        .iter()
        .zip(&counts)
        .map(|(t, c)| weighted(*t, *c, opts.n_paths))
        .collect();
    Ok(SurvivalCurve {
        survival: counts.iter().map(|c| *c as f64 / opts.n_paths as f64).collect(),
        estimates: est.iter().map(|e| e.value).collect(),
        std_errors: est.iter().map(|e| e.std_error).collect(),
        times,
        n_paths: opts.n_paths,
    })
}

/// `e^t ∫ ρ(x) P_x(B_t ≥ a, τ^L > t) dx`, the right tail at `a` of the
/// solution with boundary `L`.
pub fn forward_tail_mc(
    rho: &DensityGrid,
    curve: &BoundaryCurve,
    a: f64,
    t: f64,
    opts: &McOptions,
) -> Result<McEstimate> {
    opts.validate()?;
    let stepper = Stepper::new(curve, t, opts.h, opts.correction);
    let hits: Result<Vec<u64>> = opts
        .batches()
        .into_par_iter()
        .map(|(seed, size)| {
            let starts = sample(rho, size, seed)?;
            let mut rng = stream_rng(seed, tag::DYNAMICS);
            Ok(starts
                .into_iter()
                .filter(|x| matches!(stepper.run(*x, &[], &mut rng).end, Some(y) if y >= a))
                .count() as u64)
        })
        .collect();
    Ok(weighted(t, hits?.iter().sum(), opts.n_paths))
}

/// `u(x, t) = e^t E_x[ρ(B_t); B_s > L_{t-s}, s ≤ t]`.
pub fn backward_density_mc(
    rho: &DensityGrid,
    curve: &BoundaryCurve,
    x: f64,
    t: f64,
    opts: &McOptions,
) -> Result<McEstimate> {
    opts.validate()?;
    let reversed = curve.reversed(t);
    let stepper = Stepper::new(&reversed, t, opts.h, opts.correction);
    let sums: Vec<(f64, f64)> = opts
        .batches()
        .into_par_iter()
        .map(|(seed, size)| {
            let mut rng = stream_rng(seed, tag::DYNAMICS);
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..size {
                if let Some(y) = stepper.run(x, &[], &mut rng).end {
                    let v = rho.value_at(y);
                    s += v;
                    s2 += v * v;
                }
            }
            (s, s2)
        })
        .collect();
    let n = opts.n_paths as f64;
    let (s, s2) = sums.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    let w = t.exp();
    Ok(McEstimate {
        value: w * mean,
        std_error: w * (var / n).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedOptions {
    pub horizon: f64,
    pub burn_in: f64,
    #[serde(default = "default_record_dt")]
    pub record_dt: f64,
    pub seed: u64,
}

fn default_record_dt() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub n: usize,
    /// Least-squares slope of the leftmost position after burn-in.
    pub slope: f64,
    /// `(N - 1)` times the mean distance between the two leftmost
    /// particles after burn-in; absent for `N = 1`.
    pub gap_statistic: Option<f64>,
}

/// Front speed of the N-BBM started from `N` iid draws of the critical
/// traveling wave.
pub fn speed_estimate(n: usize, opts: &SpeedOptions) -> Result<SpeedEstimate> {
    if !(opts.horizon > opts.burn_in && opts.burn_in >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= burn_in < horizon, got burn_in {} and horizon {}",
            opts.burn_in, opts.horizon
        )));
    }
    let wave = traveling_wave(std::f64::consts::SQRT_2, WaveGrid::default())?;
    let x0 = sample(&wave.density, n, derive_seed(opts.seed, tag::SAMPLE, 0))?;
    let run = nbbm(
        &x0,
        opts.horizon,
        &NbbmOptions {
            record_dt: opts.record_dt,
            seed: derive_seed(opts.seed, tag::DYNAMICS, 0),
            keep_snapshots: false,
        },
    )?;
    let from = run.times.partition_point(|t| *t < opts.burn_in - 1e-9);
    let slope = ols_slope(&run.times[from..], &run.leftmost[from..]);
    let gap_statistic = (n > 1).then(|| {
        let gaps = &run.gap[from..];
        (n - 1) as f64 * gaps.iter().sum::<f64>() / gaps.len() as f64
    });
    Ok(SpeedEstimate {
        n,
        slope,
        gap_statistic,
    })
}
