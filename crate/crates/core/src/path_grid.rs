//! Discretized functional observations on the unit interval.
//!
//! Every observation is a [`Path`] sampled on a uniform [`Grid`] over
//! `[0, 1]` and anchored so that its first value is zero. Two quadrature
//! conventions are used throughout the crate:
//!
//! * node-valued integrands (length `n_points`) use the trapezoid rule;
//! * interval-valued integrands (length `n_points - 1`, e.g. forward
//!   differences) use the Riemann interval rule `step * sum`.
//!
//! With this pairing `integrate(derivative(p))` telescopes to `p(1) - p(0)`.

use crate::error::{Result, ThmmError};
use serde::{Deserialize, Serialize};

/// Default number of grid points used when none is requested.
pub const DEFAULT_GRID_POINTS: usize = 201;

/// Uniform grid `tau_k = k / (n_points - 1)` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    n_points: usize,
}

impl Grid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(ThmmError::invalid(format!(
                "grid needs at least 2 points, got {n_points}"
            )));
        }
        Ok(Grid { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_intervals(&self) -> usize {
        self.n_points - 1
    }

    pub fn step(&self) -> f64 {
        1.0 / self.n_intervals() as f64
    }

    /// Node `k`; exact at both endpoints.
    pub fn node(&self, k: usize) -> f64 {
        k as f64 / self.n_intervals() as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |k| self.node(k))
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// A functional observation anchored at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    grid: Grid,
    values: Vec<f64>,
}

impl Path {
    /// Builds a path from node values, shifting them so that `values[0] == 0`.
    pub fn new(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(ThmmError::mismatch(format!(
                "path has {} values but grid has {} points",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(ThmmError::invalid(format!(
                "non-finite path value at node {bad}"
            )));
        }
        let origin = values[0];
        if origin != 0.0 {
            values.iter_mut().for_each(|v| *v -= origin);
        }
        Ok(Path { grid, values })
    }

    /// Samples `f` on the grid, then anchors.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Path::new(grid, grid.nodes().map(f).collect())
    }

    pub fn zeros(grid: Grid) -> Self {
        Path {
            grid,
            values: vec![0.0; grid.n_points()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `O(1) - O(0)`, which equals `O(1)` for an anchored path.
    pub fn increment(&self) -> f64 {
        self.values[self.values.len() - 1] - self.values[0]
    }

    pub(crate) fn check_same_grid(&self, other: &Path) -> Result<()> {
        if self.grid != other.grid {
            return Err(ThmmError::mismatch(format!(
                "grid with {} points vs grid with {} points",
                self.grid.n_points(),
                other.grid.n_points()
            )));
        }
        Ok(())
    }
}

/// Sobolev norm used by the nonparametric emission: order 1 is the
/// Cameron-Martin norm of Wiener measure, order 2 penalizes curvature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SobolevOrder {
    First,
    Second,
}

impl SobolevOrder {
    pub fn as_u8(self) -> u8 {
        match self {
            SobolevOrder::First => 1,
            SobolevOrder::Second => 2,
        }
    }
}

impl TryFrom<u8> for SobolevOrder {
    type Error = ThmmError;

    fn try_from(order: u8) -> Result<Self> {
        match order {
            1 => Ok(SobolevOrder::First),
            2 => Ok(SobolevOrder::Second),
            other => Err(ThmmError::invalid(format!(
                "Sobolev order must be 1 or 2, got {other}"
            ))),
        }
    }
}

impl From<SobolevOrder> for u8 {
    fn from(order: SobolevOrder) -> u8 {
        order.as_u8()
    }
}

/// Normalizes irregularly sampled data onto a uniform grid.
///
/// Times are affinely mapped onto `[0, 1]`, the values are linearly
/// interpolated at the grid nodes, and the result is anchored at zero.
pub fn make_path(times: &[f64], raw_values: &[f64], n_points: usize) -> Result<Path> {
    if times.len() != raw_values.len() {
        return Err(ThmmError::mismatch(format!(
            "{} times but {} values",
            times.len(),
            raw_values.len()
        )));
    }
    if times.len() < 2 {
        return Err(ThmmError::invalid("a path needs at least 2 samples"));
    }
    if times.iter().chain(raw_values).any(|v| !v.is_finite()) {
        return Err(ThmmError::invalid("non-finite sample"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ThmmError::invalid("sample times must be strictly increasing"));
    }
    let grid = Grid::new(n_points)?;
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let scaled: Vec<f64> = times.iter().map(|t| (t - t0) / span).collect();
    let last = scaled.len() - 1;

    let mut values = Vec::with_capacity(n_points);
    let mut seg = 0;
    for tau in grid.nodes() {
        while seg + 1 < last && scaled[seg + 1] <= tau {
            seg += 1;
        }
        let (a, b) = (scaled[seg], scaled[seg + 1]);
        let w = ((tau - a) / (b - a)).clamp(0.0, 1.0);
        values.push(raw_values[seg] + w * (raw_values[seg + 1] - raw_values[seg]));
    }
    Path::new(grid, values)
}

/// Forward differences; entry `k` is the derivative on interval `k`.
pub fn derivative(p: &Path) -> Vec<f64> {
    let scale = p.grid.n_intervals() as f64;
    p.values.windows(2).map(|w| (w[1] - w[0]) * scale).collect()
}

/// Integrates node-valued (trapezoid) or interval-valued (Riemann) samples
/// over `[0, 1]`, chosen by the sample count.
pub fn integrate(samples: &[f64], grid: Grid) -> Result<f64> {
    let h = grid.step();
    if samples.len() == grid.n_points() {
        let ends = 0.5 * (samples[0] + samples[samples.len() - 1]);
        Ok(h * (samples.iter().sum::<f64>() - ends))
    } else if samples.len() == grid.n_intervals() {
        Ok(h * samples.iter().sum::<f64>())
    } else {
        Err(ThmmError::mismatch(format!(
            "{} samples on a grid with {} points",
            samples.len(),
            grid.n_points()
        )))
    }
}

/// Nadaraya-Watson smoother with a Gaussian kernel, precomputed for a grid.
#[derive(Debug, Clone)]
pub struct KernelSmoother {
    grid: Grid,
    // row-major n x n, each row normalized to sum to one
    weights: Vec<f64>,
}

impl KernelSmoother {
    pub fn new(grid: Grid, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(ThmmError::invalid(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        let n = grid.n_points();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut weights[i * n..(i + 1) * n];
            let ti = grid.node(i);
            for (k, w) in row.iter_mut().enumerate() {
                let z = (ti - grid.node(k)) / bandwidth;
                *w = (-0.5 * z * z).exp();
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|w| *w /= total);
        }
        Ok(KernelSmoother { grid, weights })
    }

    /// Smoothed node values before re-anchoring.
    pub fn smooth_values(&self, values: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n_points();
        if values.len() != n {
            return Err(ThmmError::mismatch(format!(
                "{} values for a smoother on {n} points",
                values.len()
            )));
        }
        Ok(self
            .weights
            .chunks_exact(n)
            .map(|row| row.iter().zip(values).map(|(w, v)| w * v).sum())
            .collect())
    }

    pub fn apply(&self, p: &Path) -> Result<Path> {
        if p.grid != self.grid {
            return Err(ThmmError::mismatch("path grid differs from smoother grid"));
        }
        Path::new(self.grid, self.smooth_values(&p.values)?)
    }
}

/// Gaussian kernel smoothing with standard deviation `bandwidth` (a
/// fraction of `[0, 1]`), re-anchored at zero.
pub fn smooth(p: &Path, bandwidth: f64) -> Result<Path> {
    KernelSmoother::new(p.grid, bandwidth)?.apply(p)
}

/// Squared Sobolev distance `int |D^k (a - b)|^2` for `k` = `order`.
pub fn sobolev_sq_distance(a: &Path, b: &Path, order: SobolevOrder) -> Result<f64> {
    a.check_same_grid(b)?;
    let grid = a.grid;
    if order == SobolevOrder::Second && grid.n_points() < 3 {
        return Err(ThmmError::invalid(
            "second-order Sobolev distance needs at least 3 grid points",
        ));
    }
    let scale = grid.n_intervals() as f64;
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let mut d: Vec<f64> = diff.windows(2).map(|w| (w[1] - w[0]) * scale).collect();
    if order == SobolevOrder::Second {
        d = d.windows(2).map(|w| (w[1] - w[0]) * scale).collect();
    }
    Ok(grid.step() * d.iter().map(|x| x * x).sum::<f64>())
}
