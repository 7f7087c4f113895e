//! Event-driven simulation of ranked branching Brownian motion and of the
//! N-BBM selection dynamics.
//!
//! Branching times are exponential and Brownian increments are drawn
//! exactly over the elapsed time, so the only discretisation is the choice
//! of recording times.

use std::cmp::Ordering;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, tag};

const GRID_TOL: f64 = 1e-9;
const FOREST_MAGIC: &[u8; 8] = b"NBBMFRST";
const FOREST_VERSION: u32 = 1;

/// One labelled particle. Ties in position are broken by `(family, member)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: f64,
    pub family: u32,
    pub member: u32,
}

impl Particle {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.position
            .total_cmp(&other.position)
            .then(self.family.cmp(&other.family))
            .then(self.member.cmp(&other.member))
    }
}

/// Multiset of labelled positions, kept sorted by `(position, family,
/// member)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    entries: Vec<Particle>,
}

impl ParticleSet {
    pub fn new(mut entries: Vec<Particle>) -> Self {
        entries.sort_by(Particle::key_cmp);
        Self { entries }
    }

    /// Particle `i` becomes family `i`, member 0.
    pub fn from_positions(xs: &[f64]) -> Self {
        Self::new(
            xs.iter()
                .enumerate()
                .map(|(i, x)| Particle {
                    position: *x,
                    family: i as u32,
                    member: 0,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Particle] {
        &self.entries
    }

    /// Positions in increasing order.
    pub fn positions(&self) -> Vec<f64> {
        self.entries.iter().map(|p| p.position).collect()
    }

    pub fn min(&self) -> Option<f64> {
        self.entries.first().map(|p| p.position)
    }

    pub fn max(&self) -> Option<f64> {
        self.entries.last().map(|p| p.position)
    }

    /// `|{x ∈ self : x ≥ a}|`.
    pub fn count_at_least(&self, a: f64) -> usize {
        self.entries.len() - self.entries.partition_point(|p| p.position < a)
    }

    /// The `n` rightmost entries.
    pub fn rightmost(&self, n: usize) -> Self {
        let from = self.entries.len().saturating_sub(n);
        Self {
            entries: self.entries[from..].to_vec(),
        }
    }

    /// Tail-count order: `count_at_least(a) <= other.count_at_least(a)` for
    /// every real `a`.
    pub fn is_dominated_by(&self, other: &Self) -> bool {
        domination_violations(&self.positions(), &other.positions()) == 0
    }
}

/// Number of ranks `i` at which the `i`-th largest of `xs` exceeds the
/// `i`-th largest of `ys`, plus the cardinality excess. Zero exactly when
/// `xs ≼ ys` in the tail-count order.
pub fn domination_violations(xs: &[f64], ys: &[f64]) -> usize {
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|p, q| q.total_cmp(p));
    b.sort_by(|p, q| q.total_cmp(p));
    let excess = a.len().saturating_sub(b.len());
    excess + a.iter().zip(&b).filter(|(x, y)| x > y).count()
}

/// Rank `(i, j)`: `family` is the family's index in increasing order of its
/// root position, `member` the birth order inside the family. The derived
/// order is the rank order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RankLabel {
    pub family: u32,
    pub member: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub birth_time: f64,
    pub birth_position: f64,
    /// Index of the parent inside the family.
    pub parent: Option<u32>,
    /// Position at every record time; before birth, the ancestor's.
    pub positions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub members: Vec<Member>,
}

impl Family {
    pub fn root(&self) -> f64 {
        self.members[0].positions[0]
    }

    pub fn size_at(&self, t: f64) -> usize {
        self.members.iter().filter(|m| m.birth_time <= t).count()
    }
}

/// BBM forest recorded at the times `k · delta_record`, one family per
/// initial particle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbmForest {
    pub delta_record: f64,
    pub horizon: f64,
    pub seed: u64,
    families: Vec<Family>,
}

impl BbmForest {
    pub fn families(&self) -> &[Family] {
        &self.families
    }

    pub fn n_families(&self) -> usize {
        self.families.len()
    }

    pub fn n_records(&self) -> usize {
        self.families.first().map_or(1, |f| f.members[0].positions.len())
    }

    pub fn roots(&self) -> Vec<f64> {
        self.families.iter().map(Family::root).collect()
    }

    pub fn record_index(&self, t: f64) -> Result<usize> {
        if t == 0.0 {
            return Ok(0);
        }
        let k = t / self.delta_record;
        let r = k.round();
        if (k - r).abs() > GRID_TOL * r.max(1.0) || r < 0.0 || r as usize >= self.n_records() {
            return Err(Error::OffGrid(t));
        }
        Ok(r as usize)
    }

    /// Every particle alive at record time `t`, labelled by family index and
    /// birth order.
    pub fn population(&self, t: f64) -> Result<ParticleSet> {
        let k = self.record_index(t)?;
        let t = k as f64 * self.delta_record;
        let mut entries = Vec::new();
        for (i, f) in self.families.iter().enumerate() {
            for (j, m) in f.members.iter().enumerate() {
                if m.birth_time <= t {
                    entries.push(Particle {
                        position: m.positions[k],
                        family: i as u32,
                        member: j as u32,
                    });
                }
            }
        }
        Ok(ParticleSet::new(entries))
    }
}

fn advance(xs: &mut [f64], dt: f64, rng: &mut ChaCha8Rng) {
    if dt <= 0.0 {
        return;
    }
    let sd = dt.sqrt();
    for x in xs {
        let z: f64 = rng.sample(StandardNormal);
        *x += sd * z;
    }
}

fn grow_family(x: f64, n_records: usize, dr: f64, rng: &mut ChaCha8Rng) -> Family {
    let mut members = vec![Member {
        birth_time: 0.0,
        birth_position: x,
        parent: None,
        positions: vec![x],
    }];
    let mut cur = vec![x];
    let mut t = 0.0;
    for r in 1..n_records {
        let t_end = r as f64 * dr;
        loop {
            let wait: f64 = rng.sample::<f64, _>(Exp1) / cur.len() as f64;
            if t + wait >= t_end {
                advance(&mut cur, t_end - t, rng);
                t = t_end;
                break;
            }
            advance(&mut cur, wait, rng);
            t += wait;
            let k = rng.random_range(0..cur.len());
            cur.push(cur[k]);
            let positions = members[k].positions.clone();
            members.push(Member {
                birth_time: t,
                birth_position: cur[k],
                parent: Some(k as u32),
                positions,
            });
        }
        for (m, x) in members.iter_mut().zip(&cur) {
            m.positions.push(*x);
        }
    }
    Family { members }
}

/// Ranked BBM from `x0` up to `horizon`, recorded every `delta_record`.
/// Family `i` uses its own random stream, so the result does not depend on
/// how families are scheduled.
pub fn simulate_forest(x0: &[f64], horizon: f64, delta_record: f64, seed: u64) -> Result<BbmForest> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be nonnegative, got {horizon}")));
    }
    if !(delta_record > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "record spacing must be positive, got {delta_record}"
        )));
    }
    let k = horizon / delta_record;
    if (k - k.round()).abs() > GRID_TOL * k.round().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} is not a multiple of the record spacing {delta_record}"
        )));
    }
    if x0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("initial positions must be finite".into()));
    }
    let n_records = k.round() as usize + 1;
    let key = derive_seed(seed, tag::FOREST, 0);
    let families = x0
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = stream_rng(key, i as u64);
            grow_family(*x, n_records, delta_record, &mut rng)
        })
        .collect();
    Ok(BbmForest {
        delta_record,
        horizon,
        seed,
        families,
    })
}

/// `N^i_t` for every family.
pub fn family_sizes(forest: &BbmForest, t: f64) -> Result<Vec<usize>> {
    if !(0.0..=forest.horizon + GRID_TOL).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside [0, {}]",
            forest.horizon
        )));
    }
    Ok(forest.families.iter().map(|f| f.size_at(t)).collect())
}

/// Family indices sorted by increasing rank (root position, then index).
pub fn family_rank_order(roots: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..roots.len()).collect();
    order.sort_by(|a, b| roots[*a].total_cmp(&roots[*b]).then(a.cmp(b)));
    order
}

/// The `n_families` particles of highest rank alive at record time `t`.
pub fn rank_selected(forest: &BbmForest, t: f64) -> Result<ParticleSet> {
    let k = forest.record_index(t)?;
    let t = k as f64 * forest.delta_record;
    let n = forest.n_families();
    let mut entries = Vec::with_capacity(n);
    'families: for i in family_rank_order(&forest.roots()).into_iter().rev() {
        let members = &forest.families[i].members;
        for (j, m) in members.iter().enumerate().rev() {
            if m.birth_time > t {
                continue;
            }
            if entries.len() == n {
                break 'families;
            }
            entries.push(Particle {
                position: m.positions[k],
                family: i as u32,
                member: j as u32,
            });
        }
    }
    Ok(ParticleSet::new(entries))
}

/// Translates family `ℓ` by `v0[ℓ] - x0[ℓ]` and keeps the `N` rightmost
/// particles at the forest horizon.
pub fn post_selection(v0: &[f64], x0: &[f64], forest: &BbmForest) -> Result<ParticleSet> {
    let n = forest.n_families();
    if v0.len() != n || x0.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} initial positions, got {} and {}",
            v0.len(),
            x0.len()
        )));
    }
    for (l, ((v, x), f)) in v0.iter().zip(x0).zip(&forest.families).enumerate() {
        if *x != f.root() {
            return Err(Error::InvalidArgument(format!(
                "x0[{l}] = {x} is not the root {} of family {l}",
                f.root()
            )));
        }
        if v < x {
            return Err(Error::OrderViolation(format!("v0[{l}] = {v} < x0[{l}] = {x}")));
        }
    }
    let last = forest.n_records() - 1;
    let entries = forest
        .families
        .iter()
        .enumerate()
        .flat_map(|(i, f)| {
            let shift = v0[i] - x0[i];
            f.members.iter().enumerate().map(move |(j, m)| Particle {
                position: m.positions[last] + shift,
                family: i as u32,
                member: j as u32,
            })
        })
        .collect();
    Ok(ParticleSet::new(entries).rightmost(n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbbmOptions {
    pub record_dt: f64,
    pub seed: u64,
    /// Keep the full particle set at every record time.
    #[serde(default)]
    pub keep_snapshots: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbbmRun {
    pub times: Vec<f64>,
    pub leftmost: Vec<f64>,
    /// Distance between the two leftmost particles; zero when `N = 1`.
    pub gap: Vec<f64>,
    pub snapshots: Vec<ParticleSet>,
    /// State at the horizon.
    pub last: ParticleSet,
    pub branchings: u64,
}

struct NbbmState {
    pos: Vec<f64>,
    fam: Vec<u32>,
    mem: Vec<u32>,
    next_member: Vec<u32>,
}

impl NbbmState {
    fn key(&self, i: usize) -> Particle {
        Particle {
            position: self.pos[i],
            family: self.fam[i],
            member: self.mem[i],
        }
    }

    fn argmin(&self) -> usize {
        (1..self.pos.len()).fold(0, |m, i| {
            if self.key(i).key_cmp(&self.key(m)) == Ordering::Less {
                i
            } else {
                m
            }
        })
    }

    /// Particle `k` branches; the smallest `(position, family, member)` of
    /// the `N + 1` particles is removed.
    fn branch(&mut self, k: usize) {
        let f = self.fam[k];
        let child = Particle {
            position: self.pos[k],
            family: f,
            member: self.next_member[f as usize],
        };
        self.next_member[f as usize] += 1;
        let m = self.argmin();
        if child.key_cmp(&self.key(m)) == Ordering::Less {
            return;
        }
        self.pos[m] = child.position;
        self.fam[m] = child.family;
        self.mem[m] = child.member;
    }

    fn two_leftmost(&self) -> (f64, f64) {
        let mut a = f64::INFINITY;
        let mut b = f64::INFINITY;
        for x in &self.pos {
            if *x < a {
                b = a;
                a = *x;
            } else if *x < b {
                b = *x;
            }
        }
        (a, if b.is_finite() { b - a } else { 0.0 })
    }

    fn snapshot(&self) -> ParticleSet {
        ParticleSet::new((0..self.pos.len()).map(|i| self.key(i)).collect())
    }
}

/// N-BBM from `x0`: at rate `N` a uniformly chosen particle branches and the
/// leftmost particle is removed.
pub fn nbbm(x0: &[f64], horizon: f64, opts: &NbbmOptions) -> Result<NbbmRun> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidArgument("N-BBM needs at least one particle".into()));
    }
    if !(horizon >= 0.0 && horizon.is_finite() && opts.record_dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need horizon >= 0 and record_dt > 0, got {horizon} and {}",
            opts.record_dt
        )));
    }
    let mut state = NbbmState {
        pos: x0.to_vec(),
        fam: (0..n as u32).collect(),
        mem: vec![0; n],
        next_member: vec![1; n],
    };
    let mut rng = stream_rng(opts.seed, tag::DYNAMICS);
    let n_rec = (horizon / opts.record_dt + GRID_TOL).floor() as usize;
    let mut run = NbbmRun {
        times: Vec::with_capacity(n_rec + 1),
        leftmost: Vec::with_capacity(n_rec + 1),
        gap: Vec::with_capacity(n_rec + 1),
        snapshots: Vec::new(),
        last: ParticleSet::default(),
        branchings: 0,
    };
    let record = |state: &NbbmState, t: f64, run: &mut NbbmRun| {
        let (a, g) = state.two_leftmost();
        run.times.push(t);
        run.leftmost.push(a);
        run.gap.push(g);
        if opts.keep_snapshots {
            run.snapshots.push(state.snapshot());
        }
    };
    record(&state, 0.0, &mut run);
    let mut t = 0.0;
    let targets = (1..=n_rec).map(|r| (r as f64 * opts.record_dt, true));
    let tail = (horizon - n_rec as f64 * opts.record_dt > GRID_TOL).then_some((horizon, false));
    for (t_end, recorded) in targets.chain(tail) {
        loop {
            let wait: f64 = rng.sample::<f64, _>(Exp1) / n as f64;
            if t + wait >= t_end {
                advance(&mut state.pos, t_end - t, &mut rng);
                t = t_end;
                break;
            }
            advance(&mut state.pos, wait, &mut rng);
            t += wait;
            let k = rng.random_range(0..n);
            state.branch(k);
            run.branchings += 1;
        }
        if recorded {
            record(&state, t, &mut run);
        }
    }
    run.last = state.snapshot();
    Ok(run)
}

/// Little-endian dump: magic, `u32` version, `u32` zero, header, then per family the member
/// count and per member `birth_time, birth_position, parent (-1 for the
/// root), positions[n_records]`.
pub fn write_forest_binary(forest: &BbmForest, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(FOREST_MAGIC)?;
    put(&FOREST_VERSION.to_le_bytes())?;
    put(&0u32.to_le_bytes())?;
    put(&(forest.families.len() as u64).to_le_bytes())?;
    put(&(forest.n_records() as u64).to_le_bytes())?;
    put(&forest.delta_record.to_le_bytes())?;
    put(&forest.horizon.to_le_bytes())?;
    put(&forest.seed.to_le_bytes())?;
    for f in &forest.families {
        put(&(f.members.len() as u64).to_le_bytes())?;
        for m in &f.members {
            put(&m.birth_time.to_le_bytes())?;
            put(&m.birth_position.to_le_bytes())?;
            put(&m.parent.map_or(-1i64, i64::from).to_le_bytes())?;
            for x in &m.positions {
                put(&x.to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_forest_binary(path: &Path) -> Result<BbmForest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut take8 = || -> Result<[u8; 8]> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
        Ok(b)
    };
    if &take8()? != FOREST_MAGIC {
        return Err(Error::InvalidArgument(format!("{} is not a forest dump", path.display())));
    }
    let head = take8()?;
    let version = u32::from_le_bytes(head[..4].try_into().expect("4 bytes"));
    if version != FOREST_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported forest dump version {version}")));
    }
    let mut next_u64 = || take8().map(u64::from_le_bytes);
    let n_families = next_u64()?;
    let n_records = next_u64()? as usize;
    let delta_record = f64::from_bits(next_u64()?);
    let horizon = f64::from_bits(next_u64()?);
    let seed = next_u64()?;
    let mut families = Vec::with_capacity(n_families as usize);
    for _ in 0..n_families {
        let n_members = next_u64()? as usize;
        let mut members = Vec::with_capacity(n_members);
        for _ in 0..n_members {
            let birth_time = f64::from_bits(next_u64()?);
            let birth_position = f64::from_bits(next_u64()?);
            let parent = next_u64()? as i64;
            let positions = (0..n_records)
                .map(|_| next_u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            members.push(Member {
                birth_time,
                birth_position,
                parent: (parent >= 0).then_some(parent as u32),
                positions,
            });
        }
        families.push(Family { members });
    }
    Ok(BbmForest {
        delta_record,
        horizon,
        seed,
        families,
    })
}

/// One row per member per record time: `family,member,parent,birth_time,t,position`.
pub fn write_forest_csv(forest: &BbmForest, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["family", "member", "parent", "birth_time", "t", "position"])
        .map_err(csv_err)?;
    for (i, f) in forest.families.iter().enumerate() {
        for (j, m) in f.members.iter().enumerate() {
            let parent = m.parent.map_or(String::new(), |p| p.to_string());
            for (k, x) in m.positions.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    parent.clone(),
                    m.birth_time.to_string(),
                    (k as f64 * forest.delta_record).to_string(),
                    x.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square_gof, mean, std_dev};

    #[test]
    fn zero_horizon_is_the_initial_configuration() {
        let x0 = [0.3, -1.0, 2.0];
        let f = simulate_forest(&x0, 0.0, 0.1, 1).unwrap();
        assert_eq!(f.n_records(), 1);
        assert_eq!(family_sizes(&f, 0.0).unwrap(), vec![1, 1, 1]);
        assert_eq!(f.roots(), x0.to_vec());
        let v = post_selection(&x0, &x0, &f).unwrap();
        assert_eq!(v.positions(), vec![-1.0, 0.3, 2.0]);
    }

    #[test]
    fn forest_is_deterministic_and_consistent() {
        let x0: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let a = simulate_forest(&x0, 1.0, 0.25, 42).unwrap();
        let b = simulate_forest(&x0, 1.0, 0.25, 42).unwrap();
        assert_eq!(a, b);
        for fam in a.families() {
            for m in &fam.members[1..] {
                let p = &fam.members[m.parent.unwrap() as usize];
                assert!(p.birth_time <= m.birth_time);
                // before birth, the ancestor's trajectory
                let born = (m.birth_time / a.delta_record).ceil() as usize;
                assert_eq!(m.positions[..born], p.positions[..born]);
            }
            let sizes: Vec<usize> = (0..=4).map(|k| fam.size_at(k as f64 * 0.25)).collect();
            assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn binary_dump_round_trips() {
        let f = simulate_forest(&[0.0, 1.0, -0.5], 0.6, 0.2, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.bin");
        write_forest_binary(&f, &path).unwrap();
        assert_eq!(read_forest_binary(&path).unwrap(), f);
        write_forest_csv(&f, &dir.path().join("forest.csv")).unwrap();
    }

    #[test]
    fn family_size_is_geometric() {
        let delta: f64 = 0.5;
        let x0 = vec![0.0; 20_000];
        let f = simulate_forest(&x0, delta, delta, 11).unwrap();
        let sizes = family_sizes(&f, delta).unwrap();
        let p = (-delta).exp();
        let kmax = 12;
        let mut observed = vec![0u64; kmax + 1];
        for s in sizes {
            observed[(s - 1).min(kmax)] += 1;
        }
        let n = x0.len() as f64;
        let mut expected: Vec<f64> = (0..kmax).map(|k| n * p * (1.0 - p).powi(k as i32)).collect();
        expected.push(n * (1.0 - p).powi(kmax as i32));
        let (_, pval) = chi_square_gof(&observed, &expected);
        assert!(pval > 0.001, "p = {pval}");
    }

    #[test]
    fn rank_selected_keeps_top_ranks() {
        let x0 = [0.0, 1.0, 2.0];
        let f = simulate_forest(&x0, 1.0, 1.0, 5).unwrap();
        let y = rank_selected(&f, 1.0).unwrap();
        assert_eq!(y.len(), 3);
        // the top family is always kept whole up to N
        let top = f.families()[2].size_at(1.0).min(3);
        assert_eq!(y.entries().iter().filter(|p| p.family == 2).count(), top);
        let z = f.population(1.0).unwrap();
        assert!(y.is_dominated_by(&z));
        assert_eq!(rank_selected(&f, 0.0).unwrap().positions(), vec![0.0, 1.0, 2.0]);
        assert!(matches!(rank_selected(&f, 0.5), Err(Error::OffGrid(_))));
    }

    #[test]
    fn post_selection_checks_order() {
        let x0 = [0.0, 1.0];
        let f = simulate_forest(&x0, 0.5, 0.5, 5).unwrap();
        assert!(matches!(post_selection(&[-0.1, 1.0], &x0, &f), Err(Error::OrderViolation(_))));
        let top = f.population(0.5).unwrap().rightmost(2);
        assert_eq!(post_selection(&x0, &x0, &f).unwrap().positions(), top.positions());
        let shifted = post_selection(&[0.5, 1.5], &x0, &f).unwrap();
        assert!(top.is_dominated_by(&shifted));
    }

    #[test]
    fn nbbm_keeps_n_particles() {
        let x0: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let opts = NbbmOptions {
            record_dt: 0.1,
            seed: 3,
            keep_snapshots: true,
        };
        let run = nbbm(&x0, 2.0, &opts).unwrap();
        assert_eq!(run.times.len(), 21);
        assert!(run.snapshots.iter().all(|s| s.len() == 50));
        assert_eq!(run.last.len(), 50);
        assert!(run.branchings > 0);
        assert_eq!(run, nbbm(&x0, 2.0, &opts).unwrap());
        assert!(nbbm(&[], 1.0, &opts).is_err());
    }

    #[test]
    fn single_particle_is_brownian() {
        // N = 1: branch then remove the parent leaves one Brownian path
        let ends: Vec<f64> = (0..2000)
            .map(|s| {
                let opts = NbbmOptions {
                    record_dt: 1.0,
                    seed: s,
                    keep_snapshots: false,
                };
                nbbm(&[0.0], 1.0, &opts).unwrap().leftmost[1]
            })
            .collect();
        assert!(mean(&ends).abs() < 4.0 / (2000f64).sqrt());
        assert!((std_dev(&ends) - 1.0).abs() < 0.06);
    }

    #[test]
    fn tie_rule_removes_lower_label() {
        let mut s = NbbmState {
            pos: vec![0.0, 1.0],
            fam: vec![0, 1],
            mem: vec![0, 0],
            next_member: vec![1, 1],
        };
        s.branch(0);
        // parent (0,0) and child (0,1) coincide; the parent goes
        assert_eq!(s.pos, vec![0.0, 1.0]);
        assert_eq!((s.fam[0], s.mem[0]), (0, 1));
    }

    #[test]
    fn domination_counts() {
        assert_eq!(domination_violations(&[0.0, 1.0], &[0.5, 1.0]), 0);
        assert_eq!(domination_violations(&[0.0, 2.0], &[0.5, 1.0]), 1);
        assert_eq!(domination_violations(&[0.0, 1.0, 2.0], &[5.0, 6.0]), 1);
        assert_eq!(domination_violations(&[], &[]), 0);
    }
}
