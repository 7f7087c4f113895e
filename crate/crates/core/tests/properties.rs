//! Property tests of the operator and particle-system invariants.

use nbbm_core::barriers_macro::{evolve_final, step_minus, step_plus, Side};
use nbbm_core::barriers_micro::coupled_triple;
use nbbm_core::bbm_sim::{domination_violations, nbbm, NbbmOptions, ParticleSet};
use nbbm_core::density::{
    cut, cut_point, diffuse, dominates, l1_distance, max_tail_excess, tail, DensityGrid,
};
use proptest::prelude::*;

fn grid(dx: f64, start: i64, values: Vec<f64>) -> DensityGrid {
    DensityGrid::new(0.0, dx, values).unwrap().shifted_cells(start)
}

fn density() -> impl Strategy<Value = DensityGrid> {
    (
        prop::sample::select(vec![0.01, 0.02, 0.05]),
        -30i64..30,
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..3.0f64], 1..60),
    )
        .prop_filter("nonzero", |(_, _, v)| v.iter().any(|x| *x > 0.0))
        .prop_map(|(dx, s, v)| grid(dx, s, v))
}

/// Pair on a common lattice so distances need no alignment.
fn pair() -> impl Strategy<Value = (DensityGrid, DensityGrid)> {
    (
        prop::sample::select(vec![0.01, 0.02, 0.05]),
        -30i64..30,
        -30i64..30,
        prop::collection::vec(0.01..3.0f64, 1..50),
        prop::collection::vec(0.01..3.0f64, 1..50),
    )
        .prop_map(|(dx, a, b, u, v)| (grid(dx, a, u), grid(dx, b, v)))
}

fn unit(u: &DensityGrid) -> DensityGrid {
    u.scaled(1.0 / u.mass())
}

fn times() -> impl Strategy<Value = f64> {
    (-4.0..-0.3f64).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn tail_is_nonincreasing_and_starts_at_mass(u in density()) {
        let f = u.tail_function();
        let pts: Vec<(f64, f64)> = f.points().collect();
        prop_assert!((pts[0].1 - u.mass()).abs() <= 1e-12 * u.mass().max(1.0));
        prop_assert!(pts.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
        prop_assert!(pts.last().unwrap().1.abs() <= 1e-12);
    }

    #[test]
    fn cut_keeps_the_right_mass(u in density(), frac in 0.01..1.5f64) {
        let m = frac * u.mass();
        let c = cut(&u, m).unwrap();
        prop_assert!((c.mass() - m.min(u.mass())).abs() <= 1e-10 * u.mass().max(1.0));
        prop_assert!(dominates(&c, &u, 1e-12).unwrap());
        // the kept part starts in the cell holding the cut point
        let q = cut_point(&u, m).unwrap();
        prop_assert!(c.x_lo() <= q + 1e-12 && q < c.x_lo() + u.dx());
        prop_assert!(tail(&c, c.x_lo()) >= c.mass() - 1e-12);
    }

    #[test]
    fn heat_conserves_mass_up_to_leak(u in density(), t in times()) {
        let g = diffuse(&u, t).unwrap();
        prop_assert!((g.mass() + g.leak() - u.mass() - u.leak()).abs() <= 1e-12 * u.mass().max(1.0));
        prop_assert!(g.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn heat_is_a_semigroup(u in density(), s in times(), t in times()) {
        let two = diffuse(&diffuse(&u, s).unwrap(), t).unwrap();
        let one = diffuse(&u, s + t).unwrap();
        prop_assert!(l1_distance(&two, &one).unwrap() <= 1e-12 * u.mass().max(1.0));
    }

    #[test]
    fn heat_contracts((u, v) in pair(), t in times()) {
        let before = l1_distance(&u, &v).unwrap();
        let after = l1_distance(&diffuse(&u, t).unwrap(), &diffuse(&v, t).unwrap()).unwrap();
        prop_assert!(after <= before + 1e-10 * before.max(1.0));
    }

    #[test]
    fn cut_contracts_on_equal_masses((u, v) in pair(), frac in 0.01..1.0f64) {
        let v = v.scaled(u.mass() / v.mass());
        let m = frac * u.mass();
        let before = l1_distance(&u, &v).unwrap();
        let after = l1_distance(&cut(&u, m).unwrap(), &cut(&v, m).unwrap()).unwrap();
        prop_assert!(after <= before + 1e-10 * before.max(1.0));
    }

    #[test]
    fn operators_preserve_order(u in density(), shift in 0i64..10, frac in 0.01..1.0f64, t in times()) {
        let v = u.shifted_cells(shift);
        let m = frac * u.mass();
        let tol = 1e-10 * u.mass().max(1.0);
        prop_assert!(max_tail_excess(&cut(&u, m).unwrap(), &cut(&v, m).unwrap()).unwrap() <= tol);
        prop_assert!(max_tail_excess(&diffuse(&u, t).unwrap(), &diffuse(&v, t).unwrap()).unwrap() <= tol);
    }

    #[test]
    fn barrier_steps_keep_unit_mass(u in density(), delta in 0.001..0.2f64) {
        let u = unit(&u);
        let (p, qp) = step_plus(&u, delta).unwrap();
        let (m, qm) = step_minus(&u, delta).unwrap();
        prop_assert!((p.mass() - 1.0).abs() <= 1e-10);
        prop_assert!((m.mass() - 1.0).abs() <= 1e-10);
        prop_assert!(qp.is_finite() && qm.is_finite());
    }

    #[test]
    fn lower_barrier_stays_below_upper(u in density(), k in 1usize..6) {
        let u = unit(&u);
        let delta = 0.05;
        let lo = evolve_final(&u, delta, k, Side::Lower).unwrap();
        let hi = evolve_final(&u, delta, k, Side::Upper).unwrap();
        prop_assert!(max_tail_excess(&lo, &hi).unwrap() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(24) })]

    #[test]
    fn nbbm_keeps_exactly_n(xs in prop::collection::vec(-2.0..2.0f64, 1..30), seed in any::<u64>()) {
        let opts = NbbmOptions { record_dt: 0.25, seed, keep_snapshots: true };
        let run = nbbm(&xs, 1.0, &opts).unwrap();
        prop_assert!(run.snapshots.iter().all(|s| s.len() == xs.len()));
        prop_assert_eq!(run.last.len(), xs.len());
        prop_assert!(run.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn coupling_never_breaks_order(xs in prop::collection::vec(-1.0..1.0f64, 2..25), seed in any::<u64>()) {
        let run = coupled_triple(&xs, 0.1, 4, seed).unwrap();
        prop_assert!(run.violations().iter().all(|v| *v == (0, 0)), "{:?}", run.violations());
    }

    #[test]
    fn domination_is_reflexive_and_shift_monotone(xs in prop::collection::vec(-5.0..5.0f64, 1..40), s in 0.0..2.0f64) {
        let ys: Vec<f64> = xs.iter().map(|x| x + s).collect();
        prop_assert_eq!(domination_violations(&xs, &xs), 0);
        prop_assert_eq!(domination_violations(&xs, &ys), 0);
        prop_assert!(ParticleSet::from_positions(&xs).is_dominated_by(&ParticleSet::from_positions(&ys)));
    }
}
