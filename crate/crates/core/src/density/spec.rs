use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{DensityGrid, TailFunction, DEFAULT_DX};
use crate::error::{Error, Result};
use crate::fbp::{traveling_wave, WaveGrid};

/// Builtin density families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityShape {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `rate · exp(-rate (x - shift))` on `[shift, ∞)`.
    Exponential {
        #[serde(default)]
        shift: f64,
        #[serde(default = "one")]
        rate: f64,
    },
    /// Normal density restricted to `[lo, hi]` (default: mean ± 8 sd).
    Gaussian {
        mean: f64,
        sd: f64,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    TravelingWave {
        #[serde(default = "sqrt2")]
        alpha: f64,
    },
    /// Cell averages given inline.
    Tabulated {
        x_lo: f64,
        dx: f64,
        values: Vec<f64>,
    },
    /// Two-column `x,value` CSV, x at cell centres.
    File {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

fn sqrt2() -> f64 {
    std::f64::consts::SQRT_2
}

fn yes() -> bool {
    true
}

/// JSON description of an initial density, e.g.
/// `{"kind": "uniform", "lo": 0, "hi": 1, "dx": 0.001}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    #[serde(flatten)]
    pub shape: DensityShape,
    #[serde(default)]
    pub dx: Option<f64>,
    #[serde(default = "yes")]
    pub normalize: bool,
}

impl DensitySpec {
    pub fn new(shape: DensityShape) -> Self {
        Self {
            shape,
            dx: None,
            normalize: true,
        }
    }

    pub fn wave(alpha: f64) -> Self {
        Self::new(DensityShape::TravelingWave { alpha })
    }

    pub fn with_dx(mut self, dx: f64) -> Self {
        self.dx = Some(dx);
        self
    }
}

impl Default for DensitySpec {
    fn default() -> Self {
        Self::wave(std::f64::consts::SQRT_2)
    }
}

pub fn make_density(spec: &DensitySpec) -> Result<DensityGrid> {
    let dx = spec.dx.unwrap_or(DEFAULT_DX);
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::MalformedSpec(format!("dx must be positive, got {dx}")));
    }
    let grid = match &spec.shape {
        DensityShape::Uniform { lo, hi } => {
            if !(hi > lo) {
                return Err(Error::MalformedSpec(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
            }
            let n = ((hi - lo) / dx).round().max(1.0) as usize;
            let cell = (hi - lo) / n as f64;
            DensityGrid::new(*lo, cell, vec![1.0 / (hi - lo); n])?
        }
        DensityShape::Exponential { shift, rate } => {
            if !(*rate > 0.0) {
                return Err(Error::MalformedSpec(format!("exponential rate must be positive, got {rate}")));
            }
            let (s, r) = (*shift, *rate);
            DensityGrid::from_survival(s, s + 40.0 / r, dx, |x| (-(r * (x - s))).exp())?
        }
        DensityShape::Gaussian { mean, sd, lo, hi } => {
            if !(*sd > 0.0) {
                return Err(Error::MalformedSpec(format!("gaussian sd must be positive, got {sd}")));
            }
            let lo = lo.unwrap_or(mean - 8.0 * sd);
            let hi = hi.unwrap_or(mean + 8.0 * sd);
            let (m, s) = (*mean, *sd);
            let surv = |x: f64| 0.5 * erfc((x - m) / (s * std::f64::consts::SQRT_2));
            let mut g = DensityGrid::from_survival(lo, hi, dx, surv)?;
            // restricted, not truncated-and-leaked
            g.leak = 0.0;
            g
        }
        DensityShape::TravelingWave { alpha } => {
            traveling_wave(*alpha, WaveGrid { dx, x_max: None })?.density
        }
        DensityShape::Tabulated { x_lo, dx, values } => DensityGrid::new(*x_lo, *dx, values.clone())
            .map_err(|e| Error::MalformedSpec(e.to_string()))?,
        DensityShape::File { path } => read_csv(path)?,
    };
    if spec.normalize {
        let mass = grid.mass();
        if !(mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(grid.scaled(1.0 / mass))
    } else {
        Ok(grid)
    }
}

/// Reads an `x,value` CSV with x at cell centres.
pub fn read_csv(path: &Path) -> Result<DensityGrid> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::MalformedSpec(format!("{}: {e}", path.display())))?;
    let mut xs = Vec::new();
    let mut values = Vec::new();
    for row in reader.deserialize::<(f64, f64)>() {
        let (x, v) = row.map_err(|e| Error::MalformedSpec(format!("{}: {e}", path.display())))?;
        xs.push(x);
        values.push(v);
    }
    if xs.len() < 2 {
        return Err(Error::MalformedSpec(format!(
            "{}: need at least two rows to infer the grid spacing",
            path.display()
        )));
    }
    let dx = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    DensityGrid::new(xs[0] - 0.5 * dx, dx, values).map_err(|e| Error::MalformedSpec(e.to_string()))
}

/// Writes `x,value` rows, x at cell centres.
pub fn write_csv(grid: &DensityGrid, path: &Path) -> Result<()> {
    let rows = (0..grid.len()).map(|i| (grid.center(i), grid.values()[i]));
    write_rows(path, rows)
}

/// Writes `x,value` rows of a tail function, x at grid edges.
pub fn write_tail_csv(tail: &TailFunction, path: &Path) -> Result<()> {
    write_rows(path, tail.points())
}

fn write_rows(path: &Path, rows: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["x", "value"]).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}
