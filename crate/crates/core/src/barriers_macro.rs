//! Deterministic barriers.
//!
//! The upper barrier grows and diffuses for time `δ` and then cuts back to
//! unit mass (`C_1 e^δ G_δ`). The lower barrier first cuts to mass `e^{-δ}`
//! and then grows and diffuses (`e^δ G_δ C_{e^{-δ}}`). Iterating either on
//! the dyadic grid `δ = t / 2^n` brackets the hydrodynamic limit in the tail
//! order, and the bracket closes like `O(δ)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density::{cut, cut_point, heat_grow, l1_distance, max_tail_excess, DensityGrid, TailFunction};
use crate::error::{Error, Result};

/// Mass tolerance on barrier inputs.
pub const MASS_TOL: f64 = 1e-10;
/// Upper bound on the squeeze grid spacing.
pub const SQUEEZE_MAX_DX: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" | "minus" | "-" => Ok(Side::Lower),
            "upper" | "plus" | "+" => Ok(Side::Upper),
            other => Err(Error::Unknown {
                kind: "barrier side",
                name: other.to_string(),
            }),
        }
    }
}

/// One step of a deterministic barrier semigroup.
pub trait BarrierOperator: Send + Sync {
    fn name(&self) -> &'static str;

    fn side(&self) -> Side;

    /// Returns the density after one step of length `delta` and the cutting
    /// point used by the step.
    fn step(&self, u: &DensityGrid, delta: f64) -> Result<(DensityGrid, f64)>;
}

/// `C_1 e^δ G_δ`.
pub struct UpperBarrier;

/// `e^δ G_δ C_{e^{-δ}}`.
pub struct LowerBarrier;

impl BarrierOperator for UpperBarrier {
    fn name(&self) -> &'static str {
        "upper"
    }

    fn side(&self) -> Side {
        Side::Upper
    }

    fn step(&self, u: &DensityGrid, delta: f64) -> Result<(DensityGrid, f64)> {
        step_plus(u, delta)
    }
}

impl BarrierOperator for LowerBarrier {
    fn name(&self) -> &'static str {
        "lower"
    }

    fn side(&self) -> Side {
        Side::Lower
    }

    fn step(&self, u: &DensityGrid, delta: f64) -> Result<(DensityGrid, f64)> {
        step_minus(u, delta)
    }
}

/// Barrier operators by name.
pub struct BarrierRegistry {
    operators: Vec<Arc<dyn BarrierOperator>>,
}

impl BarrierRegistry {
    pub fn new() -> Self {
        Self { operators: Vec::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(UpperBarrier));
        r.register(Arc::new(LowerBarrier));
        r
    }

    pub fn register(&mut self, op: Arc<dyn BarrierOperator>) {
        self.operators.retain(|o| o.name() != op.name());
        self.operators.push(op);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn BarrierOperator>> {
        self.operators
            .iter()
            .find(|o| o.name() == name)
            .cloned()
            .ok_or_else(|| Error::Unknown {
                kind: "barrier operator",
                name: name.to_string(),
            })
    }

    pub fn for_side(&self, side: Side) -> Result<Arc<dyn BarrierOperator>> {
        self.get(side.name())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.operators.iter().map(|o| o.name()).collect()
    }
}

impl Default for BarrierRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn check_unit_mass(u: &DensityGrid) -> Result<()> {
    let m = u.mass();
    if (m - 1.0).abs() > MASS_TOL {
        return Err(Error::MassMismatch {
            expected: 1.0,
            found: m,
        });
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

/// `C_1 e^δ G_δ u` and the cutting point `q_1` of `e^δ G_δ u`.
pub fn step_plus(u: &DensityGrid, delta: f64) -> Result<(DensityGrid, f64)> {
    check_delta(delta)?;
    check_unit_mass(u)?;
    let grown = heat_grow(u, delta)?;
    let q = cut_point(&grown, 1.0)?;
    Ok((cut(&grown, 1.0)?, q))
}

/// `e^δ G_δ C_{e^{-δ}} u` and the cutting point `q_{e^{-δ}}` of `u`.
pub fn step_minus(u: &DensityGrid, delta: f64) -> Result<(DensityGrid, f64)> {
    check_delta(delta)?;
    check_unit_mass(u)?;
    let m = (-delta).exp();
    let q = cut_point(u, m)?;
    let out = heat_grow(&cut(u, m)?, delta)?;
    // e^δ · e^{-δ} leaves a rounding residue; renormalise it away
    let mass = out.mass();
    Ok((out.scaled(1.0 / mass), q))
}

/// `k` iterations of one barrier. Snapshot `ℓ` is the barrier at `ℓδ`; for
/// the upper barrier cut point `ℓ` belongs to time `(ℓ + 1)δ`, for the lower
/// barrier to time `ℓδ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierTrajectory {
    pub side: Side,
    pub delta: f64,
    pub snapshots: Vec<DensityGrid>,
    pub cut_points: Vec<f64>,
}

impl BarrierTrajectory {
    pub fn last(&self) -> &DensityGrid {
        self.snapshots.last().expect("trajectory holds the initial density")
    }

    /// Time of cut point `ℓ`.
    pub fn cut_time(&self, l: usize) -> f64 {
        match self.side {
            Side::Upper => (l + 1) as f64 * self.delta,
            Side::Lower => l as f64 * self.delta,
        }
    }
}

pub fn evolve(u: &DensityGrid, delta: f64, k: usize, side: Side) -> Result<BarrierTrajectory> {
    let op = BarrierRegistry::builtin().for_side(side)?;
    let mut snapshots = Vec::with_capacity(k + 1);
    let mut cut_points = Vec::with_capacity(k);
    snapshots.push(u.clone());
    for _ in 0..k {
        let (next, q) = op.step(snapshots.last().expect("nonempty"), delta)?;
        snapshots.push(next);
        cut_points.push(q);
    }
    Ok(BarrierTrajectory {
        side,
        delta,
        snapshots,
        cut_points,
    })
}

/// Final density of `k` steps, without keeping the intermediate ones.
pub fn evolve_final(u: &DensityGrid, delta: f64, k: usize, side: Side) -> Result<DensityGrid> {
    let op = BarrierRegistry::builtin().for_side(side)?;
    let mut cur = u.clone();
    for _ in 0..k {
        cur = op.step(&cur, delta)?.0;
    }
    Ok(cur)
}

/// Grid refinement factor for step `δ`: the spacing must not exceed
/// `min(1e-3, √δ / 50)`.
pub fn refinement_for(u: &DensityGrid, delta: f64) -> usize {
    let target = SQUEEZE_MAX_DX.min(delta.sqrt() / 50.0);
    let mut factor = 1;
    while u.dx() / factor as f64 > target * (1.0 + 1e-12) {
        factor *= 2;
    }
    factor
}

/// Both barriers at time `t = 2^n δ` for one dyadic level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierPair {
    pub level: u32,
    pub delta: f64,
    pub lower: DensityGrid,
    pub upper: DensityGrid,
    pub gap_l1: f64,
}

impl BarrierPair {
    /// `max_a (F(a; upper) - F(a; lower))`.
    pub fn tail_width(&self) -> Result<f64> {
        width(&self.lower.tail_function(), &self.upper.tail_function())
    }
}

fn width(lower: &TailFunction, upper: &TailFunction) -> Result<f64> {
    let (lo, hi) = common_tails(lower, upper)?;
    Ok(lo.iter().zip(&hi).fold(0.0, |m, (l, u)| m.max(u - l)))
}

/// Both tail functions on the finer common lattice.
fn common_tails(a: &TailFunction, b: &TailFunction) -> Result<(Vec<f64>, Vec<f64>)> {
    let dx = a.dx.min(b.dx);
    let x_lo = a.x_lo.min(b.x_lo);
    let x_hi = a.x_hi().max(b.x_hi());
    let n = ((x_hi - x_lo) / dx).round() as usize;
    for f in [a, b] {
        let k = (f.x_lo - x_lo) / dx;
        if (k - k.round()).abs() > 1e-6 {
            return Err(Error::IncompatibleGrids("tail lattices are offset".into()));
        }
    }
    let pts = |f: &TailFunction| (0..=n).map(|i| f.at(x_lo + i as f64 * dx)).collect::<Vec<_>>();
    Ok((pts(a), pts(b)))
}

pub fn barrier_pair(u: &DensityGrid, t: f64, level: u32) -> Result<BarrierPair> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    let k = 1usize << level;
    let delta = t / k as f64;
    let fine = u.refine(refinement_for(u, delta));
    let (lower, upper) = rayon::join(
        || evolve_final(&fine, delta, k, Side::Lower),
        || evolve_final(&fine, delta, k, Side::Upper),
    );
    let (lower, upper) = (lower?, upper?);
    let gap_l1 = l1_distance(&lower, &upper)?;
    Ok(BarrierPair {
        level,
        delta,
        lower,
        upper,
        gap_l1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezeOptions {
    pub tol: f64,
    pub n_min: u32,
    pub n_max: u32,
}

impl Default for SqueezeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-2,
            n_min: 1,
            n_max: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezeLevel {
    pub level: u32,
    pub delta: f64,
    pub gap_l1: f64,
    pub tail_width: f64,
}

/// Tail bracket `F(·; lower) ≤ F(·; ψ(·, t)) ≤ F(·; upper)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezeResult {
    pub t: f64,
    pub n_final: u32,
    pub lower: TailFunction,
    pub upper: TailFunction,
    pub lower_density: DensityGrid,
    pub upper_density: DensityGrid,
    pub gap_l1: f64,
    pub converged: bool,
    pub history: Vec<SqueezeLevel>,
}

impl SqueezeResult {
    pub fn from_pair(t: f64, pair: BarrierPair, tol: f64, history: Vec<SqueezeLevel>) -> Self {
        Self {
            t,
            n_final: pair.level,
            lower: pair.lower.tail_function(),
            upper: pair.upper.tail_function(),
            gap_l1: pair.gap_l1,
            converged: pair.gap_l1 <= tol,
            lower_density: pair.lower,
            upper_density: pair.upper,
            history,
        }
    }

    /// `(F_lower(a), F_upper(a))`.
    pub fn bracket(&self, a: f64) -> (f64, f64) {
        (self.lower.at(a), self.upper.at(a))
    }

    /// Distance from `value` to the interval `[F_lower(a), F_upper(a)]`.
    pub fn distance(&self, a: f64, value: f64) -> f64 {
        let (lo, hi) = self.bracket(a);
        (lo - value).max(value - hi).max(0.0)
    }

    pub fn tail_width(&self) -> Result<f64> {
        width(&self.lower, &self.upper)
    }
}

/// Refines the dyadic level from `n_min` until the L¹ gap of the barriers at
/// `t` drops below `tol` or `n_max` is reached; `converged` flags which.
pub fn squeeze(u: &DensityGrid, t: f64, opts: &SqueezeOptions) -> Result<SqueezeResult> {
    if !(opts.tol > 0.0) || opts.n_min > opts.n_max {
        return Err(Error::InvalidArgument(format!(
            "need tol > 0 and n_min <= n_max, got {opts:?}"
        )));
    }
    let mut history = Vec::new();
    let mut level = opts.n_min;
    loop {
        let pair = barrier_pair(u, t, level)?;
        history.push(SqueezeLevel {
            level,
            delta: pair.delta,
            gap_l1: pair.gap_l1,
            tail_width: pair.tail_width()?,
        });
        if pair.gap_l1 <= opts.tol || level == opts.n_max {
            if pair.gap_l1 > opts.tol {
                log::warn!(
                    "squeeze stopped at level {level} with gap {:.3e} above tolerance {:.3e}",
                    pair.gap_l1,
                    opts.tol
                );
            }
            return Ok(SqueezeResult::from_pair(t, pair, opts.tol, history));
        }
        level += 1;
    }
}

/// Largest tail decrease of the lower barrier from one level to the next
/// (zero when monotone), and the largest tail increase of the upper one.
pub fn monotonicity_defects(coarse: &BarrierPair, fine: &BarrierPair) -> Result<(f64, f64)> {
    Ok((
        max_tail_excess(&coarse.lower, &fine.lower)?,
        max_tail_excess(&fine.upper, &coarse.upper)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{
        diffuse, dominates, make_density, sup_distance, tail, DensityShape, DensitySpec,
    };
    use crate::fbp::{traveling_wave, WaveGrid};
    use std::f64::consts::SQRT_2;

    fn uniform() -> DensityGrid {
        make_density(&DensitySpec::new(DensityShape::Uniform { lo: 0.0, hi: 1.0 })).unwrap()
    }

    fn exponential() -> DensityGrid {
        make_density(&DensitySpec::new(DensityShape::Exponential { shift: 0.0, rate: 1.0 })).unwrap()
    }

    #[test]
    fn plus_step_keeps_unit_mass() {
        let u = uniform();
        let (v, q) = step_plus(&u, 0.1).unwrap();
        assert!((v.mass() - 1.0).abs() < 1e-12);
        assert!(q.is_finite() && q < 0.5);
    }

    #[test]
    fn plus_step_matches_finer_reference() {
        let w = traveling_wave(SQRT_2, WaveGrid { dx: 1e-3, x_max: Some(30.0) }).unwrap();
        let (v, q) = step_plus(&w.density, 0.05).unwrap();
        assert!((v.mass() - 1.0).abs() < 1e-12);
        assert!(q > 0.0);
        let w_fine = traveling_wave(SQRT_2, WaveGrid { dx: 1e-4, x_max: Some(30.0) }).unwrap();
        let (v_fine, q_fine) = step_plus(&w_fine.density, 0.05).unwrap();
        assert!((q - q_fine).abs() < 1e-3);
        assert!(l1_distance(&v, &v_fine).unwrap() < 1e-3);
    }

    #[test]
    fn minus_step_cuts_at_delta() {
        let (v, q) = step_minus(&exponential(), 0.1).unwrap();
        assert!((q - 0.1).abs() <= 1e-3);
        assert!((v.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_steps_are_near_identity() {
        let u = uniform();
        for side in [Side::Lower, Side::Upper] {
            let v = evolve_final(&u, 1e-8, 1, side).unwrap();
            assert!(l1_distance(&u, &v).unwrap() <= 1e-3, "{side:?}");
        }
    }

    #[test]
    fn evolve_composes_steps() {
        let u = uniform();
        let traj = evolve(&u, 0.1, 2, Side::Lower).unwrap();
        let twice = step_minus(&step_minus(&u, 0.1).unwrap().0, 0.1).unwrap().0;
        assert_eq!(traj.last(), &twice);
        assert_eq!(traj.snapshots.len(), 3);
        assert_eq!(traj.cut_points.len(), 2);
        let empty = evolve(&u, 0.1, 0, Side::Upper).unwrap();
        assert_eq!(empty.snapshots, vec![u]);
    }

    #[test]
    fn lower_barrier_is_dominated_by_upper() {
        let u = exponential();
        let lo = evolve(&u, 0.2, 4, Side::Lower).unwrap();
        let hi = evolve(&u, 0.2, 4, Side::Upper).unwrap();
        for (a, b) in lo.snapshots.iter().zip(&hi.snapshots) {
            assert!(dominates(a, b, 1e-12).unwrap());
        }
    }

    #[test]
    fn registry_lookup() {
        let r = BarrierRegistry::builtin();
        assert_eq!(r.get("upper").unwrap().side(), Side::Upper);
        assert_eq!(r.for_side(Side::Lower).unwrap().name(), "lower");
        assert!(matches!(r.get("middle"), Err(Error::Unknown { .. })));
        assert_eq!("minus".parse::<Side>().unwrap(), Side::Lower);
    }

    #[test]
    fn rejects_non_unit_mass() {
        let u = uniform().scaled(2.0);
        assert!(matches!(step_plus(&u, 0.1), Err(Error::MassMismatch { .. })));
    }

    #[test]
    fn squeeze_gap_shrinks_with_level() {
        let u = exponential();
        let p2 = barrier_pair(&u, 0.5, 2).unwrap();
        let p3 = barrier_pair(&u, 0.5, 3).unwrap();
        let ratio = p3.gap_l1 / p2.gap_l1;
        assert!((0.3..=0.7).contains(&ratio), "ratio {ratio}");
        let (lo, hi) = monotonicity_defects(&p2, &p3).unwrap();
        assert!(lo < 1e-8 && hi < 1e-8, "defects {lo:e} {hi:e}");
        let gap_bound = |d: f64, t: f64| 2.0 * d + 3.0 * d * (t.exp() - 1.0) + 2.0 * d * t.exp();
        assert!(p3.gap_l1 <= gap_bound(p3.delta, 0.5));
    }

    #[test]
    fn squeeze_reports_unmet_tolerance() {
        let u = exponential();
        let r = squeeze(&u, 0.25, &SqueezeOptions { tol: 1e-9, n_min: 1, n_max: 2 }).unwrap();
        assert!(!r.converged);
        assert_eq!(r.n_final, 2);
        assert_eq!(r.history.len(), 2);
        let ok = squeeze(&u, 0.25, &SqueezeOptions { tol: 0.5, n_min: 1, n_max: 4 }).unwrap();
        assert!(ok.converged);
        let a = 1.0;
        let (lo, hi) = ok.bracket(a);
        assert!(lo <= hi + 1e-12);
        assert!(ok.tail_width().unwrap() <= ok.gap_l1 + 1e-12);
        assert_eq!(ok.distance(a, 0.5 * (lo + hi)), 0.0);
    }

    #[test]
    fn lower_barrier_is_close_to_free_evolution() {
        // sup ‖S_t u - e^{t-s} G_{t-s} S_s u‖ ≤ 2 e^T √(t - s) / √(2π)
        let u = exponential();
        let delta = 0.05;
        let traj = evolve(&u, delta, 12, Side::Lower).unwrap();
        let big_t = 12.0 * delta;
        for (s, t) in [(2usize, 4usize), (0, 12), (5, 6), (3, 11)] {
            let span = (t - s) as f64 * delta;
            let free = diffuse(&traj.snapshots[s], span).unwrap().scaled(span.exp());
            let d = sup_distance(&traj.snapshots[t], &free).unwrap();
            let bound = 2.0 * big_t.exp() * span.sqrt() / (2.0 * std::f64::consts::PI).sqrt();
            assert!(d <= bound, "s={s} t={t}: {d} > {bound}");
        }
    }

    #[test]
    fn minus_cut_points_track_mass() {
        let u = exponential();
        let traj = evolve(&u, 0.1, 3, Side::Lower).unwrap();
        for (l, q) in traj.cut_points.iter().enumerate() {
            let f = tail(&traj.snapshots[l], *q);
            assert!((f - (-0.1f64).exp()).abs() < 1e-9);
        }
    }
}
