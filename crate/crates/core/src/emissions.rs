//! Onsager-Machlup emission families and their weighted reestimation.
//!
//! Each family evaluates `log b_j(O_t)` with all constants retained, so that
//! values are comparable across states and families. Path integrals are the
//! exact integrals of the piecewise-linear interpolant of the observation:
//! the derivative is constant on each grid interval and moments against
//! powers of `tau` are integrated in closed form per interval. Node-valued
//! integrands (`int O`, `int O^2`) use the trapezoid rule.
//!
//! Reestimation solves the weighted minimization of `-log b_j` exactly under
//! the same discretization, so Baum-Welch iterations never decrease the
//! likelihood.

use crate::error::{Result, ThmmError};
use crate::hmm_engine::LogEmissions;
use crate::path_grid::{derivative, integrate, sobolev_sq_distance, Grid, Path, SobolevOrder};
use nalgebra::{DMatrix, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Lower bound on the OU concentration `b1` during reestimation.
pub const OU_MIN_CONCENTRATION: f64 = 1e-6;

/// States whose total posterior weight falls below this keep their parameters.
pub const DEGENERATE_WEIGHT: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// An observation sequence `O_1..O_T`: either Euclidean vectors or paths on
/// a common grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Vectors(Vec<Vec<f64>>),
    Paths(Vec<Path>),
}

impl Observations {
    pub fn vectors(obs: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = obs.first() else {
            return Err(ThmmError::invalid("empty observation sequence"));
        };
        let d = first.len();
        if d == 0 {
            return Err(ThmmError::invalid("zero-dimensional observations"));
        }
        if let Some(t) = obs.iter().position(|x| x.len() != d) {
            return Err(ThmmError::mismatch(format!(
                "observation {t} has dimension {} but expected {d}",
                obs[t].len()
            )));
        }
        if obs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ThmmError::invalid("non-finite observation"));
        }
        Ok(Observations::Vectors(obs))
    }

    pub fn paths(obs: Vec<Path>) -> Result<Self> {
        let Some(first) = obs.first() else {
            return Err(ThmmError::invalid("empty observation sequence"));
        };
        let grid = first.grid();
        if let Some(t) = obs.iter().position(|p| p.grid() != grid) {
            return Err(ThmmError::mismatch(format!(
                "observation {t} is on a different grid"
            )));
        }
        Ok(Observations::Paths(obs))
    }

    pub fn len(&self) -> usize {
        match self {
            Observations::Vectors(v) => v.len(),
            Observations::Paths(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_paths(&self) -> Result<&[Path]> {
        match self {
            Observations::Paths(p) => Ok(p),
            Observations::Vectors(_) => Err(ThmmError::mismatch(
                "path-valued family given vector observations",
            )),
        }
    }

    pub fn as_vectors(&self) -> Result<&[Vec<f64>]> {
        match self {
            Observations::Vectors(v) => Ok(v),
            Observations::Paths(_) => Err(ThmmError::mismatch(
                "Euclidean family given path observations",
            )),
        }
    }
}

fn weight_total(weights: &[f64], n_obs: usize) -> Result<f64> {
    if weights.len() != n_obs {
        return Err(ThmmError::mismatch(format!(
            "{} weights for {n_obs} observations",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(ThmmError::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        Ok(total)
    } else {
        Err(ThmmError::ZeroWeights)
    }
}

fn common_grid(obs: &[Path]) -> Result<Grid> {
    let grid = obs
        .first()
        .ok_or_else(|| ThmmError::invalid("empty observation sequence"))?
        .grid();
    if obs.iter().any(|p| p.grid() != grid) {
        return Err(ThmmError::mismatch("observations on different grids"));
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// Gamma function
// ---------------------------------------------------------------------------

pub(crate) fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

// ---------------------------------------------------------------------------
// Euclidean
// ---------------------------------------------------------------------------

/// Symmetric positive-definite precision matrix `Sigma^{-1}`, shared by all
/// states of a Euclidean model.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl Precision {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(ThmmError::invalid("precision must be a non-empty square matrix"));
        }
        for i in 0..dim {
            for j in 0..i {
                if (rows[i][j] - rows[j][i]).abs() > 1e-12 {
                    return Err(ThmmError::invalid("precision matrix is not symmetric"));
                }
            }
        }
        let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        if m.iter().any(|v| !v.is_finite()) || m.cholesky().is_none() {
            return Err(ThmmError::invalid("precision matrix is not positive definite"));
        }
        Ok(Precision { dim, rows })
    }

    pub fn identity(dim: usize) -> Self {
        let rows = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Precision { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn quad_form(&self, v: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(v)
            .map(|(row, vi)| vi * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanEmission {
    pub mean: Vec<f64>,
}

impl EuclideanEmission {
    /// `-1/2 (x - m)^T P (x - m)`.
    pub fn log_emission(&self, precision: &Precision, x: &[f64]) -> Result<f64> {
        if x.len() != self.mean.len() || x.len() != precision.dim() {
            return Err(ThmmError::mismatch(format!(
                "observation dimension {} vs mean {} and precision {}",
                x.len(),
                self.mean.len(),
                precision.dim()
            )));
        }
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(-0.5 * precision.quad_form(&diff))
    }
}

/// Weighted mean of observation vectors.
pub fn reestimate_euclidean(weights: &[f64], obs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let total = weight_total(weights, obs.len())?;
    let d = obs[0].len();
    let mut mean = vec![0.0; d];
    for (w, x) in weights.iter().zip(obs) {
        if x.len() != d {
            return Err(ThmmError::mismatch("observations of differing dimension"));
        }
        for (m, v) in mean.iter_mut().zip(x) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    Ok(mean)
}

// ---------------------------------------------------------------------------
// Brownian motion with drift
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmDriftEmission {
    pub drift: f64,
}

impl BmDriftEmission {
    /// `-1/2 int (O' - c)^2`.
    pub fn log_emission(&self, obs: &Path) -> f64 {
        let d = derivative(obs);
        let h = obs.grid().step();
        -0.5 * h * d.iter().map(|x| (x - self.drift).powi(2)).sum::<f64>()
    }
}

/// Weighted mean of the path increments `O(1) - O(0)`.
pub fn reestimate_bm_drift(weights: &[f64], obs: &[Path]) -> Result<f64> {
    let total = weight_total(weights, obs.len())?;
    let num: f64 = weights.iter().zip(obs).map(|(w, p)| w * p.increment()).sum();
    Ok(num / total)
}

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck
// ---------------------------------------------------------------------------

/// OU state in the `b0 = c * mu`, `b1 = c` parametrization, so that the
/// drift `b0 - b1 * y` is linear in the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuEmission {
    b0: f64,
    b1: f64,
}

impl OuEmission {
    pub fn new(b0: f64, b1: f64) -> Result<Self> {
        if !b0.is_finite() || !(b1 > 0.0) || !b1.is_finite() {
            return Err(ThmmError::invalid(format!(
                "OU parameters need finite b0 and b1 > 0, got ({b0}, {b1})"
            )));
        }
        Ok(OuEmission { b0, b1 })
    }

    pub fn from_mean_concentration(mu: f64, c: f64) -> Result<Self> {
        OuEmission::new(c * mu, c)
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn b1(&self) -> f64 {
        self.b1
    }

    pub fn mean(&self) -> f64 {
        self.b0 / self.b1
    }

    pub fn concentration(&self) -> f64 {
        self.b1
    }

    /// `-1/2 int (O' - (b0 - b1 O))^2 + b1 / 2`.
    pub fn log_emission(&self, obs: &Path) -> f64 {
        -OuStats::of(obs).cost(self.b0, self.b1)
    }
}

/// Path functionals that the OU objective depends on.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct OuStats {
    /// `int O'^2`
    dd: f64,
    /// `int O' = O(1) - O(0)`
    d: f64,
    /// `int O' O`, interval rule with the interval-mean of `O`
    d_o: f64,
    /// `int O`
    o: f64,
    /// `int O^2`
    oo: f64,
}

impl OuStats {
    fn of(p: &Path) -> Self {
        let grid = p.grid();
        let h = grid.step();
        let v = p.values();
        let der = derivative(p);
        let dd = h * der.iter().map(|x| x * x).sum::<f64>();
        let d_o = h * der
            .iter()
            .zip(v.windows(2))
            .map(|(x, w)| x * 0.5 * (w[0] + w[1]))
            .sum::<f64>();
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        OuStats {
            dd,
            d: p.increment(),
            d_o,
            o: integrate(v, grid).expect("node-valued"),
            oo: integrate(&sq, grid).expect("node-valued"),
        }
    }

    fn weighted_mean(weights: &[f64], obs: &[Path]) -> Result<Self> {
        let total = weight_total(weights, obs.len())?;
        let mut acc = OuStats::default();
        for (w, p) in weights.iter().zip(obs) {
            if *w == 0.0 {
                continue;
            }
            let s = OuStats::of(p);
            acc.dd += w * s.dd;
            acc.d += w * s.d;
            acc.d_o += w * s.d_o;
            acc.o += w * s.o;
            acc.oo += w * s.oo;
        }
        acc.dd /= total;
        acc.d /= total;
        acc.d_o /= total;
        acc.o /= total;
        acc.oo /= total;
        Ok(acc)
    }

    /// `1/2 int (O' - b0 + b1 O)^2 - b1 / 2`, expanded.
    fn cost(&self, b0: f64, b1: f64) -> f64 {
        0.5 * (self.dd - 2.0 * b0 * self.d + 2.0 * b1 * self.d_o + b0 * b0
            - 2.0 * b0 * b1 * self.o
            + b1 * b1 * self.oo)
            - 0.5 * b1
    }

    fn gradient(&self, b0: f64, b1: f64) -> (f64, f64) {
        let d_b0 = -(self.d - b0 + b1 * self.o);
        let d_b1 = self.d_o - b0 * self.o + b1 * self.oo - 0.5;
        (d_b0, d_b1)
    }
}

/// Weighted OU objective `u(b0, b1)` and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuObjective {
    pub value: f64,
    pub d_b0: f64,
    pub d_b1: f64,
}

pub fn ou_objective_and_gradient(
    b0: f64,
    b1: f64,
    weights: &[f64],
    obs: &[Path],
) -> Result<OuObjective> {
    let stats = OuStats::weighted_mean(weights, obs)?;
    let (d_b0, d_b1) = stats.gradient(b0, b1);
    Ok(OuObjective {
        value: stats.cost(b0, b1),
        d_b0,
        d_b1,
    })
}

/// Minimizes the weighted OU objective over `b1 >= OU_MIN_CONCENTRATION`.
///
/// The objective is a convex quadratic in `(b0, b1)`, so the unconstrained
/// minimizer solves a 2x2 linear system; when it violates the bound, `b1`
/// is clamped and `b0` solved for the fixed `b1`.
pub fn reestimate_ou(weights: &[f64], obs: &[Path]) -> Result<OuEmission> {
    let s = OuStats::weighted_mean(weights, obs)?;
    // Hessian [[1, -o], [-o, oo]], rhs [d, 1/2 - d_o]
    let hessian = SMatrix::<f64, 2, 2>::new(1.0, -s.o, -s.o, s.oo);
    let det = s.oo - s.o * s.o;
    if !(det > 1e-14 * s.oo.max(1.0)) {
        return Err(ThmmError::DegenerateState(
            "OU normal equations are singular (constant paths)".into(),
        ));
    }
    let rhs = SVector::<f64, 2>::new(s.d, 0.5 - s.d_o);
    let sol = hessian
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ThmmError::DegenerateState("OU normal equations are singular".into()))?;
    let (mut b0, mut b1) = (sol[0], sol[1]);
    if b1 < OU_MIN_CONCENTRATION {
        b1 = OU_MIN_CONCENTRATION;
        b0 = s.d + b1 * s.o;
    }
    OuEmission::new(b0, b1)
}

// ---------------------------------------------------------------------------
// Fractional Brownian motion with constant drift
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FbmRegime {
    /// Hurst exactly 1/2.
    Brownian,
    /// Hurst in (1/4, 1/2); exponent `1/2 - hurst`.
    Singular,
    /// Hurst in (1/2, 1); exponent `hurst - 1/2`.
    Regular,
}

/// Drift gain `g(tau) = multiplier * tau^exponent` of an fBM state, where
/// `exponent` carries its sign (positive in the singular regime).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmGain {
    pub hurst: f64,
    pub regime: FbmRegime,
    pub exponent: f64,
    pub multiplier: f64,
}

impl FbmGain {
    /// Factor turning the weighted moment `int tau^e O'` into the drift
    /// estimate; equals `(2e + 1) / multiplier`.
    pub fn drift_prefactor(&self) -> f64 {
        match self.regime {
            FbmRegime::Brownian => 1.0,
            FbmRegime::Singular => {
                let u = self.exponent;
                gamma(2.0 * u + 2.0) / gamma(u + 1.0)
            }
            FbmRegime::Regular => {
                let w = -self.exponent;
                gamma(2.0 - 2.0 * w) / gamma(1.0 - w)
            }
        }
    }

    /// `int_0^1 g(tau)^2 dtau`.
    fn gain_sq_integral(&self) -> f64 {
        self.multiplier * self.multiplier / (2.0 * self.exponent + 1.0)
    }

    /// `int_0^1 tau^e O'(tau) dtau` with `O'` constant on each interval and
    /// the power integrated exactly, so the singular point at zero in the
    /// regular regime is handled by its closed-form local moment.
    pub fn moment(&self, obs: &Path) -> f64 {
        if self.regime == FbmRegime::Brownian {
            return obs.increment();
        }
        moment_with(&self.interval_weights(obs.grid()), obs)
    }

    /// `(tau_{k+1}^{e+1} - tau_k^{e+1}) / (h (e+1))` for each interval, so
    /// that the moment is the dot product with the path increments.
    fn interval_weights(&self, grid: Grid) -> Vec<f64> {
        let e1 = self.exponent + 1.0;
        let scale = grid.n_intervals() as f64 / e1;
        let mut prev = 0.0;
        (0..grid.n_intervals())
            .map(|k| {
                let next = grid.node(k + 1).powf(e1);
                let w = (next - prev) * scale;
                prev = next;
                w
            })
            .collect()
    }

    /// Moments of many paths on a common grid.
    fn moments(&self, paths: &[Path]) -> Vec<f64> {
        match (self.regime, paths.first()) {
            (FbmRegime::Brownian, _) | (_, None) => paths.iter().map(|p| p.increment()).collect(),
            (_, Some(first)) => {
                let w = self.interval_weights(first.grid());
                paths.par_iter().map(|p| moment_with(&w, p)).collect()
            }
        }
    }
}

fn moment_with(weights: &[f64], obs: &Path) -> f64 {
    obs.values()
        .windows(2)
        .zip(weights)
        .map(|(v, w)| (v[1] - v[0]) * w)
        .sum()
}

/// Exponent and multiplier of the fBM drift gain for a Hurst parameter.
pub fn fbm_gain(hurst: f64) -> Result<FbmGain> {
    if hurst == 0.5 {
        return Ok(FbmGain {
            hurst,
            regime: FbmRegime::Brownian,
            exponent: 0.0,
            multiplier: 1.0,
        });
    }
    if hurst > 0.25 && hurst < 0.5 {
        let u = 0.5 - hurst;
        Ok(FbmGain {
            hurst,
            regime: FbmRegime::Singular,
            exponent: u,
            multiplier: gamma(u + 1.0) / gamma(2.0 * u + 1.0),
        })
    } else if hurst > 0.5 && hurst < 1.0 {
        let w = hurst - 0.5;
        Ok(FbmGain {
            hurst,
            regime: FbmRegime::Regular,
            exponent: -w,
            multiplier: (1.0 - 2.0 * w) * gamma(1.0 - w) / gamma(2.0 - 2.0 * w),
        })
    } else {
        Err(ThmmError::invalid(format!(
            "Hurst parameter must lie in (1/4, 1), got {hurst}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmDriftEmission {
    pub drift: f64,
    gain: FbmGain,
}

impl FbmDriftEmission {
    pub fn new(drift: f64, hurst: f64) -> Result<Self> {
        Ok(FbmDriftEmission {
            drift,
            gain: fbm_gain(hurst)?,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.gain.hurst
    }

    pub fn gain(&self) -> &FbmGain {
        &self.gain
    }

    /// `-1/2 int (O' - c g(tau))^2`.
    pub fn log_emission(&self, obs: &Path) -> f64 {
        let h = obs.grid().step();
        let dd = h * derivative(obs).iter().map(|x| x * x).sum::<f64>();
        self.log_emission_from_parts(dd, self.gain.moment(obs))
    }

    fn log_emission_from_parts(&self, dd: f64, moment: f64) -> f64 {
        let c = self.drift;
        -0.5 * (dd - 2.0 * c * self.gain.multiplier * moment
            + c * c * self.gain.gain_sq_integral())
    }
}

/// Weighted fBM drift estimate with the Gamma-ratio prefactor.
pub fn reestimate_fbm_drift(weights: &[f64], obs: &[Path], hurst: f64) -> Result<f64> {
    let gain = fbm_gain(hurst)?;
    if !obs.is_empty() {
        common_grid(obs)?;
    }
    fbm_drift_from_moments(weights, &gain.moments(obs), &gain)
}

fn fbm_drift_from_moments(weights: &[f64], moments: &[f64], gain: &FbmGain) -> Result<f64> {
    let total = weight_total(weights, moments.len())?;
    let num: f64 = weights
        .iter()
        .zip(moments)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, m)| w * m)
        .sum();
    Ok(gain.drift_prefactor() * num / total)
}

/// Per-path moments when every state shares one gain.
fn shared_moments(states: &[FbmDriftEmission], paths: &[Path]) -> Option<Vec<f64>> {
    let gain = states.first()?.gain;
    if states.iter().any(|s| s.gain != gain) {
        return None;
    }
    Some(gain.moments(paths))
}

// ---------------------------------------------------------------------------
// Nonparametric
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct NonparametricEmission {
    pub mean_path: Path,
    pub order: SobolevOrder,
}

impl NonparametricEmission {
    /// `-1/2 |O - h|^2` in the chosen Sobolev norm.
    pub fn log_emission(&self, obs: &Path) -> Result<f64> {
        Ok(-0.5 * sobolev_sq_distance(obs, &self.mean_path, self.order)?)
    }
}

/// Pointwise weighted average of paths.
pub fn reestimate_nonparametric(weights: &[f64], obs: &[Path]) -> Result<Path> {
    let total = weight_total(weights, obs.len())?;
    let grid = common_grid(obs)?;
    let mut mean = vec![0.0; grid.n_points()];
    for (w, p) in weights.iter().zip(obs) {
        for (m, v) in mean.iter_mut().zip(p.values()) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    Path::new(grid, mean)
}

// ---------------------------------------------------------------------------
// Per-model emission collection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Euclidean,
    #[serde(rename = "bm")]
    BmDrift,
    Ou,
    #[serde(rename = "fbm")]
    FbmDrift,
    Nonparametric,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Euclidean => "euclidean",
            Family::BmDrift => "bm",
            Family::Ou => "ou",
            Family::FbmDrift => "fbm",
            Family::Nonparametric => "nonparametric",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = ThmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Family::Euclidean),
            "bm" => Ok(Family::BmDrift),
            "ou" => Ok(Family::Ou),
            "fbm" => Ok(Family::FbmDrift),
            "nonparametric" => Ok(Family::Nonparametric),
            other => Err(ThmmError::invalid(format!("unknown family '{other}'"))),
        }
    }
}

/// The emission side of a model: one family, one parameter set per state.
/// Euclidean states share a single precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum EmissionModel {
    Euclidean {
        precision: Precision,
        states: Vec<EuclideanEmission>,
    },
    BmDrift(Vec<BmDriftEmission>),
    Ou(Vec<OuEmission>),
    FbmDrift(Vec<FbmDriftEmission>),
    Nonparametric(Vec<NonparametricEmission>),
}

impl EmissionModel {
    pub fn family(&self) -> Family {
        match self {
            EmissionModel::Euclidean { .. } => Family::Euclidean,
            EmissionModel::BmDrift(_) => Family::BmDrift,
            EmissionModel::Ou(_) => Family::Ou,
            EmissionModel::FbmDrift(_) => Family::FbmDrift,
            EmissionModel::Nonparametric(_) => Family::Nonparametric,
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            EmissionModel::Euclidean { states, .. } => states.len(),
            EmissionModel::BmDrift(s) => s.len(),
            EmissionModel::Ou(s) => s.len(),
            EmissionModel::FbmDrift(s) => s.len(),
            EmissionModel::Nonparametric(s) => s.len(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            EmissionModel::Euclidean { precision, states } => {
                if states.iter().any(|s| s.mean.len() != precision.dim()) {
                    return Err(ThmmError::mismatch("state mean dimension differs from precision"));
                }
            }
            EmissionModel::Nonparametric(states) => {
                if let Some(first) = states.first() {
                    if states
                        .iter()
                        .any(|s| s.mean_path.grid() != first.mean_path.grid() || s.order != first.order)
                    {
                        return Err(ThmmError::mismatch(
                            "nonparametric states disagree on grid or order",
                        ));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Checks that `obs` has the type, dimension and grid this model expects.
    pub fn check_compatible(&self, obs: &Observations) -> Result<()> {
        match self {
            EmissionModel::Euclidean { precision, .. } => {
                let v = obs.as_vectors()?;
                if v.iter().any(|x| x.len() != precision.dim()) {
                    return Err(ThmmError::mismatch(format!(
                        "model expects {}-dimensional observations",
                        precision.dim()
                    )));
                }
            }
            EmissionModel::Nonparametric(states) => {
                let paths = obs.as_paths()?;
                let grid = states[0].mean_path.grid();
                if paths.iter().any(|p| p.grid() != grid) {
                    return Err(ThmmError::mismatch(format!(
                        "model expects paths on a {}-point grid",
                        grid.n_points()
                    )));
                }
            }
            _ => {
                obs.as_paths()?;
            }
        }
        Ok(())
    }

    /// Log-emission of observation `obs` under state `state`.
    pub fn log_emission_path(&self, state: usize, obs: &Path) -> Result<f64> {
        match self {
            EmissionModel::Euclidean { .. } => Err(ThmmError::mismatch(
                "Euclidean family given path observations",
            )),
            EmissionModel::BmDrift(s) => Ok(s[state].log_emission(obs)),
            EmissionModel::Ou(s) => Ok(s[state].log_emission(obs)),
            EmissionModel::FbmDrift(s) => Ok(s[state].log_emission(obs)),
            EmissionModel::Nonparametric(s) => s[state].log_emission(obs),
        }
    }

    /// The `T x p` matrix of `log b_j(O_t)`. Rows are evaluated in parallel;
    /// each entry is computed independently so the result does not depend
    /// on the thread count.
    pub fn log_emissions(&self, obs: &Observations) -> Result<LogEmissions> {
        self.check_compatible(obs)?;
        let p = self.n_states();
        let rows: Vec<Vec<f64>> = match (self, obs) {
            (EmissionModel::Euclidean { precision, states }, Observations::Vectors(v)) => v
                .par_iter()
                .map(|x| states.iter().map(|s| s.log_emission(precision, x)).collect())
                .collect::<Result<_>>()?,
            (EmissionModel::FbmDrift(states), Observations::Paths(paths)) => {
                let moments = shared_moments(states, paths);
                paths
                    .par_iter()
                    .enumerate()
                    .map(|(t, o)| {
                        let h = o.grid().step();
                        let dd = h * derivative(o).iter().map(|x| x * x).sum::<f64>();
                        states
                            .iter()
                            .map(|s| {
                                let m = moments.as_ref().map_or_else(|| s.gain.moment(o), |m| m[t]);
                                s.log_emission_from_parts(dd, m)
                            })
                            .collect()
                    })
                    .collect()
            }
            (EmissionModel::Ou(states), Observations::Paths(paths)) => paths
                .par_iter()
                .map(|o| {
                    let st = OuStats::of(o);
                    states.iter().map(|s| -st.cost(s.b0, s.b1)).collect()
                })
                .collect(),
            (_, Observations::Paths(paths)) => paths
                .par_iter()
                .map(|o| (0..p).map(|j| self.log_emission_path(j, o)).collect())
                .collect::<Result<_>>()?,
            _ => unreachable!("compatibility checked above"),
        };
        LogEmissions::from_rows(rows)
    }

    /// Reestimates every state from per-state posterior weights
    /// (`weights[j][t]`). States with vanishing weight, or whose
    /// reestimation is degenerate, keep their parameters; a warning is
    /// returned for each.
    pub fn reestimate(&self, weights: &[Vec<f64>], obs: &Observations) -> Result<(EmissionModel, Vec<String>)> {
        if weights.len() != self.n_states() {
            return Err(ThmmError::mismatch("one weight vector per state required"));
        }
        let mut warnings = Vec::new();
        let mut usable = Vec::with_capacity(weights.len());
        for (j, w) in weights.iter().enumerate() {
            let total: f64 = w.iter().sum();
            let ok = total >= DEGENERATE_WEIGHT;
            if !ok {
                warnings.push(format!(
                    "state {} has total posterior weight {total:.3e}; parameters carried over",
                    j + 1
                ));
            }
            usable.push(ok);
        }

        let model = match self {
            EmissionModel::Euclidean { precision, states } => {
                let v = obs.as_vectors()?;
                let mut out = states.clone();
                for j in 0..states.len() {
                    if usable[j] {
                        out[j].mean = reestimate_euclidean(&weights[j], v)?;
                    }
                }
                EmissionModel::Euclidean {
                    precision: precision.clone(),
                    states: out,
                }
            }
            EmissionModel::BmDrift(states) => {
                let paths = obs.as_paths()?;
                let mut out = states.clone();
                for j in 0..states.len() {
                    if usable[j] {
                        out[j].drift = reestimate_bm_drift(&weights[j], paths)?;
                    }
                }
                EmissionModel::BmDrift(out)
            }
            EmissionModel::Ou(states) => {
                let paths = obs.as_paths()?;
                let mut out = states.clone();
                for j in 0..states.len() {
                    if usable[j] {
                        match reestimate_ou(&weights[j], paths) {
                            Ok(e) => out[j] = e,
                            Err(ThmmError::DegenerateState(msg)) => warnings.push(format!(
                                "state {}: {msg}; parameters carried over",
                                j + 1
                            )),
                            Err(e) => return Err(e),
                        }
                    }
                }
                EmissionModel::Ou(out)
            }
            EmissionModel::FbmDrift(states) => {
                let paths = obs.as_paths()?;
                let moments = shared_moments(states, paths);
                let mut out = states.clone();
                for j in 0..states.len() {
                    if usable[j] {
                        out[j].drift = match &moments {
                            Some(m) => fbm_drift_from_moments(&weights[j], m, &states[j].gain)?,
                            None => reestimate_fbm_drift(&weights[j], paths, states[j].hurst())?,
                        };
                    }
                }
                EmissionModel::FbmDrift(out)
            }
            EmissionModel::Nonparametric(states) => {
                let paths = obs.as_paths()?;
                let mut out = states.clone();
                for j in 0..states.len() {
                    if usable[j] {
                        out[j].mean_path = reestimate_nonparametric(&weights[j], paths)?;
                    }
                }
                EmissionModel::Nonparametric(out)
            }
        };
        Ok((model, warnings))
    }
}
