//! Stochastic barriers and the labelled coupling that orders them around
//! the N-BBM.
//!
//! Both barriers are discrete-time selections on a BBM observed every `δ`.
//! The upper one keeps the `N` rightmost offspring of the selected set. The
//! lower one cuts whole families, leftmost first, so that at most `N`
//! offspring survive to the next observation.
//!
//! [`coupled_triple`] builds the three processes on one probability space
//! so that `lower ≼ N-BBM ≼ upper` holds pathwise at every `kδ`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::barriers_macro::Side;
use crate::bbm_sim::{domination_violations, simulate_forest, BbmForest, Particle, ParticleSet, RankLabel};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, tag};

/// `|{x ∈ p : x ≥ a}| / |p|`.
pub fn empirical_tail(p: &ParticleSet, a: f64) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::InvalidArgument("empirical tail of an empty set".into()));
    }
    Ok(p.count_at_least(a) as f64 / p.len() as f64)
}

/// Outcome of one barrier step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierStep {
    pub selected: ParticleSet,
    /// Leftmost kept offspring (upper) or leftmost kept root (lower);
    /// `+∞` when the lower barrier keeps nothing.
    pub cut_point: f64,
    pub deficit: usize,
}

/// One selection step on a forest rooted at the currently selected set.
pub trait StochasticBarrier: Send + Sync {
    fn name(&self) -> &'static str;

    fn side(&self) -> Side;

    fn step(&self, n: usize, forest: &BbmForest) -> Result<BarrierStep>;
}

pub struct UpperSelection;

pub struct LowerSelection;

impl StochasticBarrier for UpperSelection {
    fn name(&self) -> &'static str {
        "upper"
    }

    fn side(&self) -> Side {
        Side::Upper
    }

    fn step(&self, n: usize, forest: &BbmForest) -> Result<BarrierStep> {
        upper_step(n, forest)
    }
}

impl StochasticBarrier for LowerSelection {
    fn name(&self) -> &'static str {
        "lower"
    }

    fn side(&self) -> Side {
        Side::Lower
    }

    fn step(&self, n: usize, forest: &BbmForest) -> Result<BarrierStep> {
        lower_step(n, forest)
    }
}

pub struct SelectionRegistry {
    rules: Vec<Arc<dyn StochasticBarrier>>,
}

impl SelectionRegistry {
    pub fn builtin() -> Self {
        Self {
            rules: vec![Arc::new(UpperSelection), Arc::new(LowerSelection)],
        }
    }

    pub fn register(&mut self, rule: Arc<dyn StochasticBarrier>) {
        self.rules.retain(|r| r.name() != rule.name());
        self.rules.push(rule);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn StochasticBarrier>> {
        self.rules
            .iter()
            .find(|r| r.name() == name)
            .cloned()
            .ok_or_else(|| Error::Unknown {
                kind: "selection rule",
                name: name.to_string(),
            })
    }

    pub fn for_side(&self, side: Side) -> Result<Arc<dyn StochasticBarrier>> {
        self.get(side.name())
    }
}

impl Default for SelectionRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn horizon_population(forest: &BbmForest) -> Result<ParticleSet> {
    forest.population(forest.delta_record * (forest.n_records() - 1) as f64)
}

/// `N` rightmost offspring at the forest horizon.
pub fn upper_step(n: usize, forest: &BbmForest) -> Result<BarrierStep> {
    let all = horizon_population(forest)?;
    if all.len() < n {
        return Err(Error::InvalidArgument(format!(
            "only {} offspring for {n} places",
            all.len()
        )));
    }
    let selected = all.rightmost(n);
    Ok(BarrierStep {
        cut_point: selected.min().unwrap_or(f64::INFINITY),
        selected,
        deficit: 0,
    })
}

/// Keeps whole families, rightmost root first, while the total offspring at
/// the horizon stays at most `N`.
pub fn lower_step(n: usize, forest: &BbmForest) -> Result<BarrierStep> {
    let t = forest.delta_record * (forest.n_records() - 1) as f64;
    let roots = forest.roots();
    let mut order: Vec<usize> = (0..roots.len()).collect();
    order.sort_by(|a, b| roots[*b].total_cmp(&roots[*a]).then(b.cmp(a)));
    let mut kept = 0;
    let mut cut_point = f64::INFINITY;
    let mut keep = vec![false; roots.len()];
    for i in order {
        let size = forest.families()[i].size_at(t);
        if kept + size > n {
            break;
        }
        kept += size;
        keep[i] = true;
        cut_point = roots[i];
    }
    let all = horizon_population(forest)?;
    let selected = ParticleSet::new(
        all.entries()
            .iter()
            .filter(|p| keep[p.family as usize])
            .copied()
            .collect(),
    );
    Ok(BarrierStep {
        deficit: n - selected.len(),
        cut_point,
        selected,
    })
}

/// Trajectory of one stochastic barrier at the times `kδ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierRun {
    pub side: Side,
    pub delta: f64,
    pub sets: Vec<ParticleSet>,
    pub cut_points: Vec<f64>,
    pub deficits: Vec<usize>,
}

/// Independent simulation of one barrier for `k` steps from `x0`.
pub fn run_barrier(x0: &[f64], delta: f64, k: usize, side: Side, seed: u64) -> Result<BarrierRun> {
    let rule = SelectionRegistry::builtin().for_side(side)?;
    let n = x0.len();
    let mut run = BarrierRun {
        side,
        delta,
        sets: vec![ParticleSet::from_positions(x0)],
        cut_points: Vec::with_capacity(k),
        deficits: vec![0],
    };
    for step in 0..k {
        let current = run.sets.last().expect("nonempty").positions();
        if current.is_empty() {
            run.sets.push(ParticleSet::default());
            run.cut_points.push(f64::INFINITY);
            run.deficits.push(n);
            continue;
        }
        let forest = simulate_forest(&current, delta, delta, derive_seed(seed, tag::FOREST, step as u64))?;
        let out = rule.step(n, &forest)?;
        run.cut_points.push(out.cut_point);
        run.deficits.push(out.deficit);
        run.sets.push(out.selected);
    }
    Ok(run)
}

/// Which branch of the coupling an event took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CouplingCase {
    /// Branching label away from both the leftmost X and the lowest-rank Y,
    /// which coincide.
    SharedVictim,
    /// Branching label away from both, which differ.
    SplitVictim,
    /// The lowest-rank Y's partner branches, the leftmost X is elsewhere.
    RankBranches,
    /// The leftmost X branches, the lowest-rank Y is elsewhere.
    LeftmostBranches,
    /// The leftmost X and the lowest-rank Y share the branching label.
    SameLabel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub shared_victim: u64,
    pub split_victim: u64,
    pub rank_branches: u64,
    pub leftmost_branches: u64,
    pub same_label: u64,
}

impl CaseCounts {
    fn add(&mut self, c: CouplingCase) {
        match c {
            CouplingCase::SharedVictim => self.shared_victim += 1,
            CouplingCase::SplitVictim => self.split_victim += 1,
            CouplingCase::RankBranches => self.rank_branches += 1,
            CouplingCase::LeftmostBranches => self.leftmost_branches += 1,
            CouplingCase::SameLabel => self.same_label += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.shared_victim + self.split_victim + self.rank_branches + self.leftmost_branches + self.same_label
    }
}

/// Labelled pair `(X^ℓ)` and `(Y^ℓ, σ^ℓ)` with `Y^ℓ ≤ X^ℓ` for every
/// present `Y^ℓ`. Absent slots stand for particles at `-∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub x: Vec<f64>,
    /// Tie-break key of each X particle; the smaller key is removed first.
    pub x_key: Vec<u64>,
    pub y: Vec<f64>,
    pub present: Vec<bool>,
    pub ranks: Vec<RankLabel>,
    /// `M^i`: largest member index issued in rank family `i`.
    pub family_max_rank: Vec<u32>,
    /// Rank families that had a member removed.
    pub lost: Vec<bool>,
    /// Y position of each rank family's founder.
    pub founders: Vec<f64>,
}

impl CoupledState {
    /// `x` and `lower` must satisfy `lower ≼ x`; slots are assigned by
    /// decreasing position and rank families by decreasing Y position.
    pub fn new(x: &[f64], lower: &[f64]) -> Result<Self> {
        let n = x.len();
        if lower.len() > n {
            return Err(Error::InvalidArgument(format!(
                "{} lower particles for {n} slots",
                lower.len()
            )));
        }
        let mut xs = x.to_vec();
        xs.sort_by(|a, b| b.total_cmp(a));
        let mut ys = lower.to_vec();
        ys.sort_by(|a, b| b.total_cmp(a));
        for (l, (xv, yv)) in xs.iter().zip(&ys).enumerate() {
            if yv > xv {
                return Err(Error::OrderViolation(format!(
                    "lower particle {yv} above its partner {xv} at rank {l}"
                )));
            }
        }
        let m = ys.len();
        ys.resize(n, f64::NEG_INFINITY);
        Ok(Self {
            x: xs,
            x_key: (0..n as u64).collect(),
            present: (0..n).map(|l| l < m).collect(),
            ranks: (0..n)
                .map(|l| RankLabel {
                    family: (n - 1 - l) as u32,
                    member: 0,
                })
                .collect(),
            family_max_rank: vec![0; n],
            lost: vec![false; n],
            founders: (0..n).map(|f| ys[n - 1 - f]).collect(),
            y: ys,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Label `m` of the leftmost X particle.
    pub fn leftmost(&self) -> usize {
        (1..self.x.len()).fold(0, |m, l| {
            let better = self.x[l] < self.x[m] || (self.x[l] == self.x[m] && self.x_key[l] < self.x_key[m]);
            if better {
                l
            } else {
                m
            }
        })
    }

    /// Label `h` of the lowest-ranked Y particle.
    pub fn lowest_rank(&self) -> usize {
        (1..self.ranks.len()).fold(0, |h, l| if self.ranks[l] < self.ranks[h] { l } else { h })
    }

    fn fresh_rank(&mut self, family: u32) -> RankLabel {
        let m = &mut self.family_max_rank[family as usize];
        *m += 1;
        RankLabel { family, member: *m }
    }

    /// `X^n` branches; the newborn X particle gets tie-break key `child_key`.
    /// Returns the case taken and the label `m` that received the newborn.
    pub fn branch(&mut self, n: usize, child_key: u64) -> Result<(CouplingCase, usize)> {
        let m = self.leftmost();
        let h = self.lowest_rank();
        self.lost[self.ranks[h].family as usize] = true;
        let case = if n != m && n != h {
            let family = self.ranks[n].family;
            let (old_y, old_p, old_rank) = (self.y[m], self.present[m], self.ranks[m]);
            self.y[m] = self.y[n];
            self.present[m] = self.present[n];
            self.ranks[m] = self.fresh_rank(family);
            if h == m {
                CouplingCase::SharedVictim
            } else {
                self.y[h] = old_y;
                self.present[h] = old_p;
                self.ranks[h] = old_rank;
                CouplingCase::SplitVictim
            }
        } else if n == h && h != m {
            // the lowest rank joins the newborn of Y^m, in m's family
            let family = self.ranks[m].family;
            self.y[h] = self.y[m];
            self.present[h] = self.present[m];
            self.ranks[h] = self.fresh_rank(family);
            CouplingCase::RankBranches
        } else {
            let family = self.ranks[h].family;
            self.ranks[h] = self.fresh_rank(family);
            if h == m {
                CouplingCase::SameLabel
            } else {
                CouplingCase::LeftmostBranches
            }
        };
        self.x[m] = self.x[n];
        self.x_key[m] = child_key;
        self.check()?;
        Ok((case, m))
    }

    pub fn check(&self) -> Result<()> {
        for l in 0..self.x.len() {
            if self.present[l] && self.y[l] > self.x[l] {
                return Err(Error::CouplingInvariant(format!(
                    "Y^{l} = {} above X^{l} = {}",
                    self.y[l], self.x[l]
                )));
            }
        }
        let mut r = self.ranks.clone();
        r.sort();
        if r.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::CouplingInvariant("duplicate ranks".into()));
        }
        Ok(())
    }

    /// Present Y particles of rank families that lost no member, and the
    /// lowest founder among those families.
    pub fn retained(&self) -> (ParticleSet, f64) {
        let mut entries = Vec::new();
        let mut cut = f64::INFINITY;
        for l in 0..self.y.len() {
            let f = self.ranks[l].family as usize;
            if self.present[l] && !self.lost[f] {
                entries.push(Particle {
                    position: self.y[l],
                    family: self.ranks[l].family,
                    member: self.ranks[l].member,
                });
                cut = cut.min(self.founders[f]);
            }
        }
        (ParticleSet::new(entries), cut)
    }
}

/// Output of [`coupled_triple`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub delta: f64,
    pub lower: BarrierRun,
    pub middle: Vec<ParticleSet>,
    pub upper: BarrierRun,
    pub cases: CaseCounts,
}

impl CoupledRun {
    /// Ordering failures at each `kδ` as `(lower vs middle, middle vs
    /// upper)`; both are zero for a correct coupling.
    pub fn violations(&self) -> Vec<(usize, usize)> {
        (0..self.middle.len())
            .map(|k| {
                let mid = self.middle[k].positions();
                (
                    domination_violations(&self.lower.sets[k].positions(), &mid),
                    domination_violations(&mid, &self.upper.sets[k].positions()),
                )
            })
            .collect()
    }
}

/// Lower barrier, N-BBM and upper barrier on one probability space for
/// `k_max` steps of length `delta`.
///
/// Over each step the full BBM started from the N-BBM configuration is
/// simulated. Its branchings drive the N-BBM, the lower barrier follows the
/// labelled coupling, and the upper barrier translates every family by the
/// gap to its partner in the previous upper set.
pub fn coupled_triple(x0: &[f64], delta: f64, k_max: usize, seed: u64) -> Result<CoupledRun> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidArgument("coupling needs at least one particle".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let start = ParticleSet::from_positions(x0);
    let mut run = CoupledRun {
        delta,
        lower: BarrierRun {
            side: Side::Lower,
            delta,
            sets: vec![start.clone()],
            cut_points: Vec::with_capacity(k_max),
            deficits: vec![0],
        },
        middle: vec![start.clone()],
        upper: BarrierRun {
            side: Side::Upper,
            delta,
            sets: vec![start],
            cut_points: Vec::with_capacity(k_max),
            deficits: vec![0],
        },
        cases: CaseCounts::default(),
    };
    for k in 0..k_max {
        let mut rng = stream_rng(derive_seed(seed, tag::DYNAMICS, k as u64), 0);
        let x = run.middle[k].positions();
        let lower = run.lower.sets[k].positions();
        let mut state = CoupledState::new(&x, &lower)?;
        let mut v = run.upper.sets[k].positions();
        v.sort_by(|a, b| b.total_cmp(a));
        let shift: Vec<f64> = v.iter().zip(&state.x).map(|(v, x)| v - x).collect();
        if let Some(l) = shift.iter().position(|s| *s < 0.0) {
            return Err(Error::CouplingInvariant(format!(
                "upper particle below its N-BBM partner at rank {l}"
            )));
        }

        // BBM members: position, root label, and the X slot following it
        let mut pos = state.x.clone();
        let mut root: Vec<usize> = (0..n).collect();
        let mut slot: Vec<Option<usize>> = (0..n).map(Some).collect();
        let mut follows: Vec<usize> = (0..n).collect();
        let mut t = 0.0;
        loop {
            let wait: f64 = rng.sample::<f64, _>(Exp1) / pos.len() as f64;
            let dt = if t + wait >= delta { delta - t } else { wait };
            let sd = dt.sqrt();
            let incs: Vec<f64> = (0..pos.len())
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for (p, d) in pos.iter_mut().zip(&incs) {
                *p += d;
            }
            for l in 0..n {
                state.x[l] = pos[follows[l]];
                state.y[l] += incs[follows[l]];
            }
            if dt < wait {
                break;
            }
            t += wait;
            let b = rng.random_range(0..pos.len());
            let c = pos.len();
            pos.push(pos[b]);
            root.push(root[b]);
            slot.push(None);
            if let Some(nl) = slot[b] {
                let (case, m) = state.branch(nl, c as u64)?;
                run.cases.add(case);
                slot[follows[m]] = None;
                slot[c] = Some(m);
                follows[m] = c;
            }
        }

        run.middle.push(ParticleSet::new(
            (0..n)
                .map(|l| Particle {
                    position: state.x[l],
                    family: root[follows[l]] as u32,
                    member: follows[l] as u32,
                })
                .collect(),
        ));
        let (kept, lower_cut) = state.retained();
        run.lower.cut_points.push(lower_cut);
        run.lower.deficits.push(n - kept.len());
        run.lower.sets.push(kept);
        let upper = ParticleSet::new(
            pos.iter()
                .enumerate()
                .map(|(j, p)| Particle {
                    position: p + shift[root[j]],
                    family: root[j] as u32,
                    member: j as u32,
                })
                .collect(),
        )
        .rightmost(n);
        run.upper.cut_points.push(upper.min().unwrap_or(f64::INFINITY));
        run.upper.deficits.push(0);
        run.upper.sets.push(upper);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{make_density, sample, tail, DensityShape, DensitySpec};
    use crate::stats::{dkw_radius, ks_two_sample, mean};

    fn three() -> CoupledState {
        // X = (3, 2, 1), Y = (2.5, 1.5, 0.5); slot 2 is leftmost and lowest
        CoupledState::new(&[1.0, 3.0, 2.0], &[0.5, 2.5, 1.5]).unwrap()
    }

    #[test]
    fn initial_labels() {
        let s = three();
        assert_eq!(s.x, vec![3.0, 2.0, 1.0]);
        assert_eq!(s.y, vec![2.5, 1.5, 0.5]);
        assert_eq!(s.leftmost(), 2);
        assert_eq!(s.lowest_rank(), 2);
        assert_eq!(s.ranks[0], RankLabel { family: 2, member: 0 });
        assert!(CoupledState::new(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn shared_victim_case() {
        let mut s = three();
        let (case, m) = s.branch(0, 10).unwrap();
        assert_eq!((case, m), (CouplingCase::SharedVictim, 2));
        assert_eq!(s.x, vec![3.0, 2.0, 3.0]);
        assert_eq!(s.y, vec![2.5, 1.5, 2.5]);
        assert_eq!(s.ranks[2], RankLabel { family: 2, member: 1 });
        assert!(s.lost[0] && !s.lost[2]);
    }

    #[test]
    fn split_victim_case() {
        let mut s = three();
        // make slot 1 the lowest rank while slot 2 stays leftmost
        s.ranks.swap(1, 2);
        let old_ym = s.y[2];
        let old_rank_m = s.ranks[2];
        let old_yn = s.y[0];
        let (case, m) = s.branch(0, 10).unwrap();
        assert_eq!((case, m), (CouplingCase::SplitVictim, 2));
        // Y^m takes the newborn, Y^h takes old Y^m and its rank
        assert_eq!(s.y[2], old_yn);
        assert_eq!(s.y[1], old_ym);
        assert_eq!(s.ranks[1], old_rank_m);
        assert_eq!(s.ranks[2], RankLabel { family: 2, member: 1 });
        assert_eq!(s.x, vec![3.0, 2.0, 3.0]);
        assert!(s.lost[0]);
        s.check().unwrap();
    }

    #[test]
    fn rank_branches_case() {
        let mut s = three();
        s.ranks.swap(1, 2);
        // h = 1 branches, m = 2 is leftmost
        let (case, m) = s.branch(1, 10).unwrap();
        assert_eq!((case, m), (CouplingCase::RankBranches, 2));
        assert_eq!(s.x, vec![3.0, 2.0, 2.0]);
        assert_eq!(s.y[1], 0.5);
        assert_eq!(s.y[2], 0.5);
        let fam_m = s.ranks[2].family;
        assert_eq!(s.ranks[1], RankLabel { family: fam_m, member: 1 });
    }

    #[test]
    fn same_label_and_leftmost_cases() {
        let mut s = three();
        let (case, _) = s.branch(2, 10).unwrap();
        assert_eq!(case, CouplingCase::SameLabel);
        assert_eq!(s.x, vec![3.0, 2.0, 1.0]);
        assert_eq!(s.ranks[2], RankLabel { family: 0, member: 1 });
        let mut s = three();
        s.ranks.swap(1, 2);
        let (case, _) = s.branch(2, 10).unwrap();
        assert_eq!(case, CouplingCase::LeftmostBranches);
        assert_eq!(s.y, vec![2.5, 1.5, 0.5]);
        assert_eq!(s.ranks[1].member, 1);
    }

    #[test]
    fn sentinels_fill_missing_lower_particles() {
        let s = CoupledState::new(&[0.0, 1.0, 2.0], &[1.5]).unwrap();
        assert_eq!(s.present, vec![true, false, false]);
        let (kept, cut) = s.retained();
        assert_eq!(kept.positions(), vec![1.5]);
        assert_eq!(cut, 1.5);
    }

    #[test]
    fn coupled_triple_is_ordered() {
        let x0: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        for seed in 0..10 {
            let run = coupled_triple(&x0, 0.2, 5, seed).unwrap();
            assert!(run.violations().iter().all(|v| *v == (0, 0)), "seed {seed}");
            assert!(run.upper.sets.iter().all(|s| s.len() == 30));
            assert!(run.middle.iter().all(|s| s.len() == 30));
            assert_eq!(run.lower.sets[0].positions(), run.upper.sets[0].positions());
        }
    }

    #[test]
    fn coupled_run_is_deterministic() {
        let x0 = [0.1, 0.5, 0.9, 1.2];
        assert_eq!(coupled_triple(&x0, 0.3, 3, 9).unwrap(), coupled_triple(&x0, 0.3, 3, 9).unwrap());
    }

    #[test]
    fn barrier_steps_without_branching() {
        let x0 = [0.0, 1.0, 2.0];
        let f = simulate_forest(&x0, 1e-9, 1e-9, 1).unwrap();
        let up = upper_step(3, &f).unwrap();
        let lo = lower_step(3, &f).unwrap();
        assert_eq!(lo.deficit, 0);
        assert_eq!(up.selected.len(), 3);
        assert_eq!(lo.cut_point, 0.0);
        assert!(up.selected.positions().iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-3));
    }

    #[test]
    fn lower_deficit_is_bounded() {
        let delta: f64 = 0.1;
        let p = (-delta).exp();
        let size_biased = (2.0 - p) / p;
        for n in [100, 1000, 10_000] {
            let rho = make_density(&DensitySpec::new(DensityShape::Uniform { lo: 0.0, hi: 1.0 })).unwrap();
            let deficits: Vec<f64> = (0..20)
                .map(|s| {
                    let x0 = sample(&rho, n, s).unwrap();
                    let run = run_barrier(&x0, delta, 2, Side::Lower, s).unwrap();
                    assert!(run.sets.iter().all(|set| set.len() <= n));
                    run.deficits[1..].iter().map(|d| *d as f64).sum::<f64>() / 2.0
                })
                .collect();
            assert!(mean(&deficits) <= size_biased, "N={n}: {}", mean(&deficits));
        }
    }

    #[test]
    fn coupled_lower_matches_independent_lower() {
        let rho = make_density(&DensitySpec::new(DensityShape::Uniform { lo: 0.0, hi: 1.0 })).unwrap();
        let (n, delta, k) = (20, 0.2, 3);
        let mut coupled = Vec::new();
        let mut independent = Vec::new();
        for r in 0..1000u64 {
            let x0 = sample(&rho, n, 2 * r).unwrap();
            let c = coupled_triple(&x0, delta, k, r).unwrap();
            coupled.push(mean(&c.lower.sets[k].positions()));
            let x1 = sample(&rho, n, 2 * r + 1).unwrap();
            let i = run_barrier(&x1, delta, k, Side::Lower, r + 7_000).unwrap();
            independent.push(mean(&i.sets[k].positions()));
        }
        let (_, p) = ks_two_sample(&coupled, &independent);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn empirical_tail_meets_dkw() {
        let rho = make_density(&DensitySpec::new(DensityShape::Exponential { shift: 0.0, rate: 1.0 })).unwrap();
        let n = 2000;
        let radius = dkw_radius(n, 0.01);
        assert!((radius - 1.63 / (n as f64).sqrt()).abs() < 1e-3);
        let mut failures = 0;
        for s in 0..100 {
            let set = ParticleSet::from_positions(&sample(&rho, n, s).unwrap());
            let mut worst: f64 = 0.0;
            for (i, x) in set.positions().iter().enumerate() {
                let f = tail(&rho, *x);
                // just at and just past the jump
                worst = worst.max((f - (n - i) as f64 / n as f64).abs());
                worst = worst.max((f - (n - i - 1) as f64 / n as f64).abs());
            }
            if worst > radius {
                failures += 1;
            }
        }
        assert!(failures <= 5, "{failures} DKW failures");
        let set = ParticleSet::from_positions(&[0.0, 1.0]);
        assert_eq!(empirical_tail(&set, f64::NEG_INFINITY).unwrap(), 1.0);
        assert_eq!(empirical_tail(&set, 2.0).unwrap(), 0.0);
        assert!(empirical_tail(&ParticleSet::default(), 0.0).is_err());
    }
}
