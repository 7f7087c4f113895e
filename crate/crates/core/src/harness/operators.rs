//! Randomised checks of the cut and heat operators on lattice densities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{cut, diffuse, l1_distance, max_tail_excess, DensityGrid};
use crate::error::Result;
use crate::rng::{derive_seed, stream_rng, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorProperty {
    /// `u ≼ v` implies `C_m u ≼ v`.
    CutStaysBelow,
    /// `C_m` and `G_t` preserve `≼`.
    OrderPreserved,
    /// `‖C_m u - C_m v‖₁ <= ‖u - v‖₁` when `‖u‖₁ = ‖v‖₁`.
    CutContracts,
    /// `‖G_t u - G_t v‖₁ <= ‖u - v‖₁`.
    HeatContracts,
    /// `|∂_r G_t u| <= c ‖u‖_∞ / √t` with `c = 3 / √(2π)`.
    GradientBound,
}

impl OperatorProperty {
    pub const ALL: [Self; 5] = [
        Self::CutStaysBelow,
        Self::OrderPreserved,
        Self::CutContracts,
        Self::HeatContracts,
        Self::GradientBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::CutStaysBelow => "cut_stays_below",
            Self::OrderPreserved => "order_preserved",
            Self::CutContracts => "cut_contracts",
            Self::HeatContracts => "heat_contracts",
            Self::GradientBound => "gradient_bound",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyTally {
    pub property: OperatorProperty,
    pub cases: usize,
    pub failures: usize,
    /// Largest `observed - allowed` over the cases; negative when every case
    /// had slack.
    pub worst: f64,
}

/// Gradient constant used for the bound; three times `1/√(2π)`.
pub const GRADIENT_CONSTANT: f64 = 3.0 * 0.398_942_280_401_432_7;

const DX_CHOICES: [f64; 3] = [0.01, 0.02, 0.05];

fn grid_at(start: i64, dx: f64, values: Vec<f64>) -> Result<DensityGrid> {
    Ok(DensityGrid::new(0.0, dx, values)?.shifted_cells(start))
}

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.25) { 0.0 } else { 3.0 * rng.random::<f64>() })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}

/// Random density on the lattice `dx Z` with up to 60 cells.
pub fn random_density(rng: &mut ChaCha8Rng, dx: f64) -> Result<(i64, Vec<f64>, DensityGrid)> {
    let n = rng.random_range(1..=60);
    let start = rng.random_range(-30..=30);
    let values = random_values(rng, n);
    let g = grid_at(start, dx, values.clone())?;
    Ok((start, values, g))
}

/// A pair `u ≼ v`: `v` is `u` moved right, scaled up, plus extra mass.
pub fn random_ordered_pair(rng: &mut ChaCha8Rng, dx: f64) -> Result<(DensityGrid, DensityGrid)> {
    let (start, values, u) = random_density(rng, dx)?;
    let shift = rng.random_range(0..=10i64);
    let scale = 1.0 + rng.random::<f64>();
    let left = rng.random_range(0..=10i64);
    let right = rng.random_range(0..=10i64);
    let lo = start + shift - left;
    let len = (values.len() as i64 + left + right) as usize;
    let mut v = vec![0.0; len];
    for (i, x) in values.iter().enumerate() {
        v[i + left as usize] += scale * x;
    }
    if rng.random_bool(0.5) {
        for (x, extra) in v.iter_mut().zip(random_values(rng, len)) {
            *x += 0.3 * extra;
        }
    }
    Ok((u, grid_at(lo, dx, v)?))
}

fn random_time(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.random_range(-4.0..(0.5f64).log10()))
}

fn discrete_gradient(g: &DensityGrid) -> f64 {
    let v = g.values();
    let inner = v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let edges = v.first().copied().unwrap_or(0.0).max(v.last().copied().unwrap_or(0.0));
    inner.max(edges) / g.dx()
}

/// Excess over the allowance for one case; positive means failure.
fn one_case(p: OperatorProperty, rng: &mut ChaCha8Rng, tol: f64) -> Result<f64> {
    let dx = DX_CHOICES[rng.random_range(0..DX_CHOICES.len())];
    match p {
        OperatorProperty::CutStaysBelow => {
            let (u, v) = random_ordered_pair(rng, dx)?;
            let m = u.mass() * rng.random_range(0.01..=1.0);
            Ok(max_tail_excess(&cut(&u, m)?, &v)? - tol * v.mass().max(1.0))
        }
        OperatorProperty::OrderPreserved => {
            let (u, v) = random_ordered_pair(rng, dx)?;
            let m = u.mass() * rng.random_range(0.01..=1.0);
            let t = random_time(rng);
            let allowance = tol * v.mass().max(1.0);
            let by_cut = max_tail_excess(&cut(&u, m)?, &cut(&v, m)?)?;
            let by_heat = max_tail_excess(&diffuse(&u, t)?, &diffuse(&v, t)?)?;
            Ok(by_cut.max(by_heat) - allowance)
        }
        OperatorProperty::CutContracts => {
            // the contraction needs equal masses; unequal masses break it
            let (_, _, u) = random_density(rng, dx)?;
            let (_, _, v) = random_density(rng, dx)?;
            let v = v.scaled(u.mass() / v.mass());
            let m = u.mass() * rng.random_range(0.01..=1.0);
            let before = l1_distance(&u, &v)?;
            Ok(l1_distance(&cut(&u, m)?, &cut(&v, m)?)? - before - tol * before.max(1.0))
        }
        OperatorProperty::HeatContracts => {
            let (_, _, u) = random_density(rng, dx)?;
            let (_, _, v) = random_density(rng, dx)?;
            let t = random_time(rng);
            let before = l1_distance(&u, &v)?;
            Ok(l1_distance(&diffuse(&u, t)?, &diffuse(&v, t)?)? - before - tol * before.max(1.0))
        }
        OperatorProperty::GradientBound => {
            let (_, _, u) = random_density(rng, dx)?;
            let t = random_time(rng);
            let bound = GRADIENT_CONSTANT * u.sup_norm() / t.sqrt();
            Ok(discrete_gradient(&diffuse(&u, t)?) - bound * (1.0 + tol))
        }
    }
}

/// `cases` random cases of every property with allowance `tol`, relative to
/// the masses or distances involved.
pub fn operator_suite(cases: usize, tol: f64, seed: u64) -> Result<Vec<PropertyTally>> {
    OperatorProperty::ALL
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = stream_rng(derive_seed(seed, tag::CASES, k as u64), 0);
            let mut tally = PropertyTally {
                property: *p,
                cases,
                failures: 0,
                worst: f64::NEG_INFINITY,
            };
            for _ in 0..cases {
                let excess = one_case(*p, &mut rng, tol)?;
                if excess > 0.0 {
                    tally.failures += 1;
                }
                tally.worst = tally.worst.max(excess);
            }
            Ok(tally)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::dominates;

    #[test]
    fn ordered_pairs_are_ordered() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..200 {
            let (u, v) = random_ordered_pair(&mut rng, 0.02).unwrap();
            assert!(dominates(&u, &v, 1e-12).unwrap());
        }
    }

    #[test]
    fn suite_passes_on_a_small_budget() {
        for t in operator_suite(50, 1e-10, 1).unwrap() {
            assert_eq!(t.failures, 0, "{:?}", t);
        }
    }

    #[test]
    fn gradient_bound_is_not_vacuous() {
        // a diffused step comes within a factor of the bound
        let u = DensityGrid::new(0.0, 0.01, vec![1.0; 50]).unwrap();
        let t = 0.01;
        let g = discrete_gradient(&diffuse(&u, t).unwrap());
        assert!(g > 0.2 * GRADIENT_CONSTANT / t.sqrt());
    }
}
