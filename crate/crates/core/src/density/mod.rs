//! Densities on a uniform 1-D grid.
//!
//! A [`DensityGrid`] stores cell averages of a nonnegative function on
//! cells `[x_lo + i dx, x_lo + (i + 1) dx)`. Every operation treats the grid
//! as the piecewise-constant function those averages define, so tails at
//! lattice points, cut masses and the tail order are exact for that function.
//!
//! Grids live on a lattice `origin + k dx`; operations only ever move the
//! first cell by whole cells, which keeps grids produced from a common
//! ancestor exactly aligned.

mod spec;

pub use spec::{make_density, read_csv, write_csv, write_tail_csv, DensityShape, DensitySpec};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, tag};

pub const DEFAULT_DX: f64 = 1e-3;
pub const DEFAULT_LEAK_BUDGET: f64 = 1e-8;
/// Kernel truncation radius in units of the kernel standard deviation.
pub const KERNEL_RADIUS_SIGMAS: f64 = 10.0;
/// Kernel mass dropped at each convolution, booked as leak.
pub const KERNEL_TAIL: f64 = 1e-15;
/// Edge cells whose cumulative mass stays below this fraction of the total
/// are dropped after diffusion and charged to the leak.
const TRIM_REL: f64 = 1e-16;
/// Tolerance, in cells, for deciding that two lattices coincide.
const LATTICE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    origin: f64,
    dx: f64,
    start: i64,
    values: Vec<f64>,
    leak: f64,
}

/// Right tail `F(a) = ∫_a^∞ u` sampled at the grid edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFunction {
    pub x_lo: f64,
    pub dx: f64,
    /// `values[i] = F(x_lo + i dx)`, one more entry than the density has cells.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(x_lo: f64, dx: f64, values: Vec<f64>) -> Result<Self> {
        Self::on_lattice(x_lo, dx, 0, values)
    }

    pub(crate) fn on_lattice(origin: f64, dx: f64, start: i64, values: Vec<f64>) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid spacing must be positive, got {dx}")));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "density values must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self {
            origin,
            dx,
            start,
            values,
            leak: 0.0,
        })
    }

    /// Cell averages of the density whose right tail is `survival`, on
    /// `[x_lo, x_hi]`. Mass beyond `x_hi` is booked as leak.
    pub fn from_survival(
        x_lo: f64,
        x_hi: f64,
        dx: f64,
        survival: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(x_hi > x_lo) {
            return Err(Error::InvalidArgument(format!("empty support [{x_lo}, {x_hi}]")));
        }
        let n = ((x_hi - x_lo) / dx - 1e-9).ceil().max(1.0) as usize;
        let mut values = Vec::with_capacity(n);
        let mut s_left = survival(x_lo);
        for i in 0..n {
            let s_right = survival(x_lo + (i + 1) as f64 * dx);
            values.push(((s_left - s_right) / dx).max(0.0));
            s_left = s_right;
        }
        let mut grid = Self::new(x_lo, dx, values)?;
        grid.leak = s_left.max(0.0);
        Ok(grid)
    }

    pub fn x_lo(&self) -> f64 {
        self.edge(0)
    }

    pub fn x_hi(&self) -> f64 {
        self.edge(self.values.len())
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn leak(&self) -> f64 {
        self.leak
    }

    /// Left edge of cell `i`.
    pub fn edge(&self, i: usize) -> f64 {
        self.origin + (self.start + i as i64) as f64 * self.dx
    }

    pub fn center(&self, i: usize) -> f64 {
        self.origin + ((self.start + i as i64) as f64 + 0.5) * self.dx
    }

    pub fn mass(&self) -> f64 {
        self.dx * self.values.iter().sum::<f64>()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(*v))
    }

    /// Point value by linear interpolation between cell centers, zero
    /// outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        let s = (x - self.x_lo()) / self.dx - 0.5;
        if s < -0.5 || s > n as f64 - 0.5 {
            return 0.0;
        }
        if s <= 0.0 {
            return self.values[0];
        }
        let i = s.floor() as usize;
        if i + 1 >= n {
            return self.values[n - 1];
        }
        let f = s - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    pub fn tail_function(&self) -> TailFunction {
        let n = self.values.len();
        let mut tails = vec![0.0; n + 1];
        for i in (0..n).rev() {
            tails[i] = tails[i + 1] + self.dx * self.values[i];
        }
        TailFunction {
            x_lo: self.x_lo(),
            dx: self.dx,
            values: tails,
        }
    }

    /// Splits every cell into `factor` cells of the same value.
    pub fn refine(&self, factor: usize) -> Self {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let values = self
            .values
            .iter()
            .flat_map(|v| std::iter::repeat_n(*v, factor))
            .collect();
        Self {
            origin: self.origin,
            dx: self.dx / factor as f64,
            start: self.start * factor as i64,
            values,
            leak: self.leak,
        }
    }

    /// Multiplies values (and the leak) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            leak: self.leak * factor,
            ..self.clone()
        }
    }

    /// Translation by a whole number of cells.
    pub fn shifted_cells(&self, cells: i64) -> Self {
        Self {
            start: self.start + cells,
            ..self.clone()
        }
    }

    pub(crate) fn add_leak(&mut self, amount: f64) {
        self.leak += amount.max(0.0);
    }

    pub fn check_invariants(&self, leak_budget: f64) -> Result<()> {
        if let Some(bad) = self.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid density value {bad}")));
        }
        if self.leak > leak_budget {
            return Err(Error::LeakBudget {
                leak: self.leak,
                budget: leak_budget,
            });
        }
        Ok(())
    }

    /// Drops edge cells carrying a negligible share of the mass.
    fn trim(&mut self) {
        let mass = self.mass();
        let eps = TRIM_REL * mass;
        let mut acc = 0.0;
        let mut lead = 0;
        for v in &self.values {
            let next = acc + v * self.dx;
            if next > eps {
                break;
            }
            acc = next;
            lead += 1;
        }
        if lead == self.values.len() {
            // nothing worth keeping: collapse to a single empty cell
            self.add_leak(acc);
            self.values.truncate(1);
            if let Some(v) = self.values.first_mut() {
                *v = 0.0;
            }
            return;
        }
        let mut trail_acc = 0.0;
        let mut trail = 0;
        for v in self.values.iter().rev() {
            let next = trail_acc + v * self.dx;
            if acc + next > eps {
                break;
            }
            trail_acc = next;
            trail += 1;
        }
        self.add_leak(acc + trail_acc);
        self.values.truncate(self.values.len() - trail);
        self.values.drain(..lead);
        self.start += lead as i64;
    }

    /// Cell averages on the lattice `anchor + k dx`. Returns the index of the
    /// first cell relative to `anchor` and the values. `dx` must be an
    /// integer multiple or an integer fraction of `self.dx`, and the lattices
    /// must nest.
    fn on_common_lattice(&self, anchor: f64, dx: f64) -> Result<(i64, Vec<f64>)> {
        let ratio = dx / self.dx;
        if ratio >= 1.0 {
            let r = integer_ratio(ratio)?;
            let offset = lattice_offset(self.x_lo() - anchor, self.dx)?;
            if r == 1 {
                return Ok((offset, self.values.clone()));
            }
            let r_i = r as i64;
            let first = offset.div_euclid(r_i);
            let last = (offset + self.values.len() as i64 - 1).div_euclid(r_i);
            let mut out = vec![0.0; (last - first + 1).max(0) as usize];
            for (j, v) in self.values.iter().enumerate() {
                let c = (offset + j as i64).div_euclid(r_i) - first;
                out[c as usize] += v / r as f64;
            }
            Ok((first, out))
        } else {
            let r = integer_ratio(1.0 / ratio)?;
            let offset = lattice_offset(self.x_lo() - anchor, dx)?;
            let values = self
                .values
                .iter()
                .flat_map(|v| std::iter::repeat_n(*v, r))
                .collect();
            Ok((offset, values))
        }
    }
}

fn integer_ratio(ratio: f64) -> Result<usize> {
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-9 * r {
        return Err(Error::IncompatibleGrids(format!(
            "grid spacings differ by the non-integer ratio {ratio}"
        )));
    }
    Ok(r as usize)
}

fn lattice_offset(distance: f64, dx: f64) -> Result<i64> {
    let k = distance / dx;
    let r = k.round();
    if (k - r).abs() > LATTICE_TOL {
        return Err(Error::IncompatibleGrids(format!(
            "grid edges are offset by {k} cells, not a whole number"
        )));
    }
    Ok(r as i64)
}

/// Both grids on the finer lattice (`fine == true`) or the coarser one.
struct Aligned {
    dx: f64,
    x_lo: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn align(u: &DensityGrid, v: &DensityGrid, fine: bool) -> Result<Aligned> {
    let (dx, anchor) = if (u.dx <= v.dx) == fine {
        (u.dx, u.x_lo())
    } else {
        (v.dx, v.x_lo())
    };
    let (su, vu) = u.on_common_lattice(anchor, dx)?;
    let (sv, vv) = v.on_common_lattice(anchor, dx)?;
    let lo = su.min(sv);
    let hi = (su + vu.len() as i64).max(sv + vv.len() as i64);
    let n = (hi - lo) as usize;
    let place = |start: i64, vals: Vec<f64>| {
        let mut out = vec![0.0; n];
        let off = (start - lo) as usize;
        out[off..off + vals.len()].copy_from_slice(&vals);
        out
    };
    Ok(Aligned {
        dx,
        x_lo: anchor + lo as f64 * dx,
        a: place(su, vu),
        b: place(sv, vv),
    })
}

impl TailFunction {
    /// `F(a)`, linear between edges, `F(x_lo)` to the left and 0 to the right.
    pub fn at(&self, a: f64) -> f64 {
        let n = self.values.len() - 1;
        let s = (a - self.x_lo) / self.dx;
        if s <= 0.0 {
            return self.values[0];
        }
        if s >= n as f64 {
            return 0.0;
        }
        let r = s.round();
        if (s - r).abs() < 1e-9 {
            return self.values[r as usize];
        }
        let i = s.floor() as usize;
        let f = s - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    pub fn mass(&self) -> f64 {
        self.values[0]
    }

    pub fn x_hi(&self) -> f64 {
        self.x_lo + (self.values.len() - 1) as f64 * self.dx
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.x_lo + i as f64 * self.dx, *v))
    }
}

/// `∫_a^∞ u`.
pub fn tail(u: &DensityGrid, a: f64) -> f64 {
    u.tail_function().at(a)
}

/// Tail order `u ≼ v`: `tail(u, a) <= tail(v, a) + tol` at every point of
/// the finer of the two lattices.
pub fn dominates(u: &DensityGrid, v: &DensityGrid, tol: f64) -> Result<bool> {
    Ok(max_tail_excess(u, v)? <= tol)
}

/// `max(0, max_a (tail(u, a) - tail(v, a)))` over the finer common lattice;
/// zero exactly when `u ≼ v`.
pub fn max_tail_excess(u: &DensityGrid, v: &DensityGrid) -> Result<f64> {
    let al = align(u, v, true)?;
    let mut tu = 0.0;
    let mut tv = 0.0;
    // right edge: both tails vanish
    let mut worst: f64 = 0.0;
    for i in (0..al.a.len()).rev() {
        tu += al.dx * al.a[i];
        tv += al.dx * al.b[i];
        worst = worst.max(tu - tv);
    }
    Ok(worst)
}

/// Locates the cell where the right tail reaches `m`: returns the cell
/// index and the tail mass strictly to its right, or `None` when
/// `m >= mass(u)`.
fn locate_cut(u: &DensityGrid, m: f64) -> Option<(usize, f64)> {
    let mut acc = 0.0;
    for i in (0..u.values.len()).rev() {
        let next = acc + u.dx * u.values[i];
        if next >= m && u.values[i] > 0.0 {
            return Some((i, acc));
        }
        acc = next;
    }
    None
}

/// Cutting point `q_m(u) = inf{a : tail(u, a) < m}`.
pub fn cut_point(u: &DensityGrid, m: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("cut mass must be positive, got {m}")));
    }
    Ok(match locate_cut(u, m) {
        Some((i, acc)) => {
            let q = u.edge(i + 1) - (m - acc) / u.values[i];
            q.max(u.edge(i))
        }
        None => u.x_lo(),
    })
}

/// Cut operator `C_m`: keeps the rightmost mass `min(m, mass(u))`.
pub fn cut(u: &DensityGrid, m: f64) -> Result<DensityGrid> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("cut mass must be positive, got {m}")));
    }
    let Some((i, acc)) = locate_cut(u, m) else {
        return Ok(u.clone());
    };
    let mut out = u.clone();
    out.values[i] = ((m - acc) / u.dx).min(u.values[i]);
    out.values.drain(..i);
    out.start += i as i64;
    Ok(out)
}

/// Heat kernel of the lattice `dx Z` at time `t`: the law of a continuous
/// time random walk with variance `t`, `K_k = e^{-s} I_k(s)` for
/// `s = t / dx²`. These kernels form an exact semigroup on the lattice, so
/// `K_a * K_b = K_{a+b}` up to rounding. Returns the weights for offsets
/// `-R..=R` and the truncated mass beyond them.
pub(crate) fn lattice_heat_kernel(t: f64, dx: f64) -> (Vec<f64>, f64) {
    let s = t / (dx * dx);
    // backward recurrence on I_k / I_{k-1}, started where I_k is negligible
    let k_start = (KERNEL_RADIUS_SIGMAS * s.sqrt()).ceil() as usize + 40;
    let mut ratios = vec![0.0; k_start + 1];
    let mut r = 0.0;
    for k in (1..=k_start).rev() {
        r = 1.0 / (2.0 * k as f64 / s + r);
        ratios[k] = r;
    }
    let mut half = Vec::with_capacity(k_start + 1);
    half.push(1.0);
    for k in 1..=k_start {
        let w = half[k - 1] * ratios[k];
        half.push(w);
    }
    let total = half[0] + 2.0 * half[1..].iter().sum::<f64>();
    for w in &mut half {
        *w /= total;
    }
    // smallest radius whose two-sided tail is below KERNEL_TAIL
    let mut truncated = 0.0;
    let mut radius = k_start;
    while radius > 1 && truncated + 2.0 * half[radius] <= KERNEL_TAIL {
        truncated += 2.0 * half[radius];
        radius -= 1;
    }
    half.truncate(radius + 1);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    kernel.extend(half.iter().rev());
    kernel.extend(&half[1..]);
    (kernel, truncated)
}

fn convolve(u: &DensityGrid, t: f64, growth: f64) -> Result<DensityGrid> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("diffusion time must be positive, got {t}")));
    }
    let (kernel, truncated) = lattice_heat_kernel(t, u.dx);
    let radius = kernel.len() / 2;
    let n = u.values.len();
    let mut out = vec![0.0; n + 2 * radius];
    for (i, &v) in u.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let a = growth * v;
        for (o, w) in out[i..i + kernel.len()].iter_mut().zip(&kernel) {
            *o += a * w;
        }
    }
    let mut grid = DensityGrid {
        origin: u.origin,
        dx: u.dx,
        start: u.start - radius as i64,
        values: out,
        leak: u.leak,
    };
    grid.add_leak(growth * u.mass() * truncated);
    grid.trim();
    Ok(grid)
}

/// Grow-diffuse semigroup `e^δ G_δ u`, the solution at time `δ` of
/// `u_t = ½ u_rr + u`.
pub fn heat_grow(u: &DensityGrid, delta: f64) -> Result<DensityGrid> {
    convolve(u, delta, delta.exp())
}

/// Pure diffusion `G_t u`.
pub fn diffuse(u: &DensityGrid, t: f64) -> Result<DensityGrid> {
    convolve(u, t, 1.0)
}

/// `∫ |u - v|` after aligning both grids on the coarser lattice.
pub fn l1_distance(u: &DensityGrid, v: &DensityGrid) -> Result<f64> {
    let al = align(u, v, false)?;
    Ok(al.dx * al.a.iter().zip(&al.b).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `sup |u - v|` on the finer lattice.
pub fn sup_distance(u: &DensityGrid, v: &DensityGrid) -> Result<f64> {
    let al = align(u, v, true)?;
    Ok(al.a.iter().zip(&al.b).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// `u - v` on the finer lattice as (x_lo, dx, values).
pub fn difference(u: &DensityGrid, v: &DensityGrid) -> Result<(f64, f64, Vec<f64>)> {
    let al = align(u, v, true)?;
    let d = al.a.iter().zip(&al.b).map(|(a, b)| a - b).collect();
    Ok((al.x_lo, al.dx, d))
}

/// `n` iid draws from `u` by exact inversion of its piecewise-linear CDF.
pub fn sample(u: &DensityGrid, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut cdf = Vec::with_capacity(u.values.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for v in &u.values {
        acc += v * u.dx;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut rng = stream_rng(seed, tag::SAMPLE);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * acc;
        let i = (cdf.partition_point(|p| *p <= target) - 1).min(u.values.len() - 1);
        let x = if u.values[i] > 0.0 {
            u.edge(i) + (target - cdf[i]) / u.values[i]
        } else {
            u.edge(i)
        };
        out.push(x.clamp(u.edge(i), u.edge(i + 1)));
    }
    Ok(out)
}
