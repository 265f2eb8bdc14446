//! Regular grids, sampled signals, empirical distributions and the seeded
//! random stream shared by every other module.
//!
//! Two-dimensional fields are stored row-major: the value at
//! `(axis1[i], axis2[j])` lives at index `i * axis2.count + j`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    start: f64,
    stop: f64,
    count: usize,
}

impl Grid1D {
    pub fn new(start: f64, stop: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 points, got {count}"
            )));
        }
        if !(start.is_finite() && stop.is_finite()) || start >= stop {
            return Err(Error::InvalidArgument(format!(
                "grid requires start < stop, got [{start}, {stop}]"
            )));
        }
        Ok(Self { start, stop, count })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn stop(&self) -> f64 {
        self.stop
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn spacing(&self) -> f64 {
        (self.stop - self.start) / (self.count - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.stop
        } else {
            self.start + i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.point(i)).collect()
    }

    /// The same grid translated by `offset`.
    pub fn shifted(&self, offset: f64) -> Result<Self> {
        Self::new(self.start + offset, self.stop + offset, self.count)
    }
}

/// Uniformly spaced grid from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, count: usize) -> Result<Grid1D> {
    Grid1D::new(start, stop, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub axis1: Grid1D,
    pub axis2: Grid1D,
}

impl Grid2D {
    pub fn new(axis1: Grid1D, axis2: Grid1D) -> Self {
        Self { axis1, axis2 }
    }

    pub fn count(&self) -> usize {
        self.axis1.count * self.axis2.count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grid {
    One(Grid1D),
    Two(Grid2D),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::One(g) => g.count,
            Grid::Two(g) => g.count(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        match self {
            Grid::One(_) => 1,
            Grid::Two(_) => 2,
        }
    }

    /// Tensor shape of a field on this grid.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Grid::One(g) => vec![g.count],
            Grid::Two(g) => vec![g.axis1.count, g.axis2.count],
        }
    }

    /// Coordinates of every point in storage order.
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        match self {
            Grid::One(g) => g.points().into_iter().map(|x| vec![x]).collect(),
            Grid::Two(g) => {
                let a = g.axis1.points();
                let b = g.axis2.points();
                let mut out = Vec::with_capacity(a.len() * b.len());
                for &x1 in &a {
                    for &x2 in &b {
                        out.push(vec![x1, x2]);
                    }
                }
                out
            }
        }
    }
}

impl From<Grid1D> for Grid {
    fn from(g: Grid1D) -> Self {
        Grid::One(g)
    }
}

impl From<Grid2D> for Grid {
    fn from(g: Grid2D) -> Self {
        Grid::Two(g)
    }
}

/// Real signal sampled on a regular 1D or 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: impl Into<Grid>, values: Vec<f64>) -> Result<Self> {
        let grid = grid.into();
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.shape(),
                actual: vec![values.len()],
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite field value {} at index {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: impl Into<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let grid = grid.into();
        let values = grid.coordinates().iter().map(|c| f(c)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, values)
    }

    fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.grid {
            Grid::One(g) => {
                out.push_str("x,value\n");
                for (i, v) in self.values.iter().enumerate() {
                    let _ = writeln!(out, "{:.16e},{:.16e}", g.point(i), v);
                }
            }
            Grid::Two(g) => {
                out.push_str("x1,x2,value\n");
                let n2 = g.axis2.count;
                for (k, v) in self.values.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{:.16e},{:.16e},{:.16e}",
                        g.axis1.point(k / n2),
                        g.axis2.point(k % n2),
                        v
                    );
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty file")?.trim();
        let parse_row = |line: &str, width: usize| -> std::result::Result<Vec<f64>, String> {
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|e| format!("{c:?}: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            if cols.len() != width {
                return Err(format!("expected {width} columns in {line:?}"));
            }
            Ok(cols)
        };
        let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
        match header {
            "x,value" => {
                let rows = rows
                    .iter()
                    .map(|l| parse_row(l, 2))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                if rows.len() < 2 {
                    return Err("need at least two rows".into());
                }
                let grid = Grid1D::new(rows[0][0], rows[rows.len() - 1][0], rows.len())
                    .map_err(|e| e.to_string())?;
                Field::new(grid, rows.iter().map(|r| r[1]).collect()).map_err(|e| e.to_string())
            }
            "x1,x2,value" => {
                let rows = rows
                    .iter()
                    .map(|l| parse_row(l, 3))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let n2 = rows.iter().take_while(|r| r[0] == rows[0][0]).count();
                if n2 < 2 || rows.len() % n2 != 0 {
                    return Err("rows do not form a rectangular grid".into());
                }
                let n1 = rows.len() / n2;
                let axis1 = Grid1D::new(rows[0][0], rows[rows.len() - 1][0], n1)
                    .map_err(|e| e.to_string())?;
                let axis2 =
                    Grid1D::new(rows[0][1], rows[n2 - 1][1], n2).map_err(|e| e.to_string())?;
                Field::new(
                    Grid2D::new(axis1, axis2),
                    rows.iter().map(|r| r[2]).collect(),
                )
                .map_err(|e| e.to_string())
            }
            other => Err(format!("unknown header {other:?}")),
        }
    }
}

/// Sum of squared differences between two fields on the same grid.
pub fn error_norm(a: &Field, b: &Field) -> Result<f64> {
    a.check_same_grid(b)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// `error_norm / count`.
pub fn mse(a: &Field, b: &Field) -> Result<f64> {
    Ok(error_norm(a, b)? / a.len() as f64)
}

/// Uniform-weight atoms `(1/n) Σ δ_{v_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    atoms: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Empty("empirical distribution needs atoms".into()));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numerical("non-finite atom".into()));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.atoms.len() as f64
    }

    pub fn sorted_atoms(&self) -> Vec<f64> {
        let mut s = self.atoms.clone();
        s.sort_by(f64::total_cmp);
        s
    }
}

pub fn empirical(values: &Field) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::new(values.values.clone())
}

/// Deterministic random stream.
///
/// Backed by ChaCha8 seeded through `SeedableRng::seed_from_u64`, which is
/// specified bit-for-bit and independent of platform word size. Independent
/// sub-streams for sweep cells use ChaCha's 64-bit stream selector.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream `stream` of generator `seed`; streams never overlap.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.standard_normal()
    }

    /// Uniform sample of `amount` distinct indices from `0..len`, unordered.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, len, amount).into_vec()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
