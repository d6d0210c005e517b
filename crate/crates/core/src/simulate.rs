//! Seeded generators for hidden state sequences and sample paths.
//!
//! Every generator is a pure function of its parameters, grid and [`Seed`].
//! Datasets derive one independent sub-seed per path, so paths can be
//! generated in parallel without changing the output. Standard normal
//! variates use the inverse CDF of a 53-bit uniform.

use crate::error::{Result, ThmmError};
use crate::hmm_engine::MarkovChain;
use crate::path_grid::{Grid, Path};
use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Hidden-chain parameters used for simulation.
pub type MarkovSpec = MarkovChain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Seed {
    /// Independent seed for stream `index` (SplitMix64 finalizer).
    pub fn substream(self, index: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }

    fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn uniform_open(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

struct NormalStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl NormalStream {
    fn new(seed: Seed) -> Self {
        NormalStream {
            rng: seed.rng(),
            normal: Normal::standard(),
        }
    }

    fn next(&mut self) -> f64 {
        self.normal.inverse_cdf(uniform_open(&mut self.rng))
    }
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative total: take the last positive entry
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Transition matrix with `stay` on the diagonal and the remainder spread
/// evenly over the other states.
pub fn sticky_transitions(p: usize, stay: f64) -> Vec<Vec<f64>> {
    if p == 1 {
        return vec![vec![1.0]];
    }
    let off = (1.0 - stay) / (p - 1) as f64;
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { stay } else { off }).collect())
        .collect()
}

/// Markov state sequence of length `n` (0-based states).
pub fn sample_states(spec: &MarkovSpec, n: usize, seed: Seed) -> Vec<usize> {
    let mut rng = seed.rng();
    let mut states = Vec::with_capacity(n);
    if n == 0 {
        return states;
    }
    let mut s = sample_index(spec.eta(), uniform_open(&mut rng));
    states.push(s);
    for _ in 1..n {
        s = sample_index(&spec.trans()[s], uniform_open(&mut rng));
        states.push(s);
    }
    states
}

/// `dY = c dtau + dW`, `Y_0 = 0`.
pub fn sample_bm_drift(c: f64, grid: Grid, seed: Seed) -> Path {
    sample_bm_drift_scaled(c, grid, seed, 1.0)
}

/// [`sample_bm_drift`] with the Brownian increments multiplied by `noise`.
pub fn sample_bm_drift_scaled(c: f64, grid: Grid, seed: Seed, noise: f64) -> Path {
    let h = grid.step();
    let sd = noise * h.sqrt();
    let mut z = NormalStream::new(seed);
    let mut values = Vec::with_capacity(grid.n_points());
    let mut y = 0.0;
    values.push(y);
    for _ in 0..grid.n_intervals() {
        y += c * h + sd * z.next();
        values.push(y);
    }
    Path::new(grid, values).expect("finite by construction")
}

/// `dY = c (mu - Y) dtau + dW`, `Y_0 = 0`, via the exact Gaussian transition.
pub fn sample_ou(c: f64, mu: f64, grid: Grid, seed: Seed) -> Result<Path> {
    sample_ou_scaled(c, mu, grid, seed, 1.0)
}

pub fn sample_ou_scaled(c: f64, mu: f64, grid: Grid, seed: Seed, noise: f64) -> Result<Path> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(ThmmError::invalid(format!("OU concentration must be positive, got {c}")));
    }
    let decay = (-c * grid.step()).exp();
    let sd = noise * (-(-2.0 * c * grid.step()).exp_m1() / (2.0 * c)).sqrt();
    let mut z = NormalStream::new(seed);
    let mut values = Vec::with_capacity(grid.n_points());
    let mut y = 0.0;
    values.push(y);
    for _ in 0..grid.n_intervals() {
        y = mu + (y - mu) * decay + sd * z.next();
        values.push(y);
    }
    Path::new(grid, values)
}

/// fBM covariance `(t^{2H} + s^{2H} - |t - s|^{2H}) / 2` over the grid
/// nodes `tau_1..tau_{n-1}` (the origin is excluded).
pub fn fbm_covariance(hurst: f64, grid: Grid) -> Result<Vec<Vec<f64>>> {
    check_hurst(hurst)?;
    let two_h = 2.0 * hurst;
    let nodes: Vec<f64> = grid.nodes().skip(1).collect();
    Ok(nodes
        .iter()
        .map(|&t| {
            nodes
                .iter()
                .map(|&s| 0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
                .collect()
        })
        .collect())
}

fn check_hurst(hurst: f64) -> Result<()> {
    if hurst > 0.0 && hurst < 1.0 {
        Ok(())
    } else {
        Err(ThmmError::invalid(format!("Hurst parameter must lie in (0, 1), got {hurst}")))
    }
}

const FBM_JITTERS: [f64; 6] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Cholesky-based fBM sampler, reusable across paths on one grid.
#[derive(Debug, Clone)]
pub struct FbmSampler {
    grid: Grid,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl FbmSampler {
    pub fn new(hurst: f64, grid: Grid) -> Result<Self> {
        let cov = fbm_covariance(hurst, grid)?;
        let m = cov.len();
        let base = DMatrix::from_fn(m, m, |i, j| cov[i][j]);
        for jitter in FBM_JITTERS {
            let mut k = base.clone();
            for i in 0..m {
                k[(i, i)] += jitter;
            }
            if let Some(chol) = k.cholesky() {
                return Ok(FbmSampler {
                    grid,
                    factor: chol.unpack(),
                    jitter,
                });
            }
        }
        Err(ThmmError::Numerical(format!(
            "fBM covariance for Hurst {hurst} is not positive definite even with jitter 1e-8"
        )))
    }

    /// Diagonal jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn sample(&self, drift: f64, seed: Seed) -> Path {
        self.sample_scaled(drift, seed, 1.0)
    }

    /// `drift * tau + noise * L xi`.
    pub fn sample_scaled(&self, drift: f64, seed: Seed, noise: f64) -> Path {
        let m = self.factor.nrows();
        let mut z = NormalStream::new(seed);
        let xi: Vec<f64> = (0..m).map(|_| z.next()).collect();
        let mut values = Vec::with_capacity(m + 1);
        values.push(0.0);
        for i in 0..m {
            let row = self.factor.row(i);
            let w: f64 = (0..=i).map(|k| row[k] * xi[k]).sum();
            values.push(drift * self.grid.node(i + 1) + noise * w);
        }
        Path::new(self.grid, values).expect("finite by construction")
    }
}

/// Single fBM path with linear drift. Builds a fresh factorization; use
/// [`FbmSampler`] for many paths.
pub fn sample_fbm(hurst: f64, drift: f64, grid: Grid, seed: Seed) -> Result<Path> {
    Ok(FbmSampler::new(hurst, grid)?.sample(drift, seed))
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Per-state process parameters for a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum ProcessSpec {
    Bm { drifts: Vec<f64> },
    Ou { mu: Vec<f64>, c: Vec<f64> },
    Fbm { hurst: f64, drifts: Vec<f64> },
}

impl ProcessSpec {
    pub fn n_states(&self) -> usize {
        match self {
            ProcessSpec::Bm { drifts } | ProcessSpec::Fbm { drifts, .. } => drifts.len(),
            ProcessSpec::Ou { mu, .. } => mu.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    /// 0-based hidden states.
    pub states: Vec<usize>,
    pub paths: Vec<Path>,
}

/// Hidden chain of length `n_obs` and one path per time step. Stream 0 of
/// `seed` drives the chain, stream `t + 1` drives path `t`.
pub fn simulate_dataset(
    chain: &MarkovSpec,
    process: &ProcessSpec,
    n_obs: usize,
    grid: Grid,
    seed: Seed,
) -> Result<SimulatedData> {
    if n_obs == 0 {
        return Err(ThmmError::invalid("dataset length must be at least 1"));
    }
    if process.n_states() != chain.n_states() {
        return Err(ThmmError::mismatch(format!(
            "process has {} states but chain has {}",
            process.n_states(),
            chain.n_states()
        )));
    }
    if let ProcessSpec::Ou { mu, c } = process {
        if mu.len() != c.len() {
            return Err(ThmmError::mismatch("OU mu and c differ in length"));
        }
        if let Some(bad) = c.iter().find(|c| !(**c > 0.0)) {
            return Err(ThmmError::invalid(format!("OU concentration must be positive, got {bad}")));
        }
    }
    let states = sample_states(chain, n_obs, seed.substream(0));
    let fbm = match process {
        ProcessSpec::Fbm { hurst, .. } => Some(FbmSampler::new(*hurst, grid)?),
        _ => None,
    };
    let paths = states
        .par_iter()
        .enumerate()
        .map(|(t, &s)| {
            let path_seed = seed.substream(t as u64 + 1);
            match process {
                ProcessSpec::Bm { drifts } => Ok(sample_bm_drift(drifts[s], grid, path_seed)),
                ProcessSpec::Ou { mu, c } => sample_ou(c[s], mu[s], grid, path_seed),
                ProcessSpec::Fbm { drifts, .. } => Ok(fbm
                    .as_ref()
                    .expect("sampler built for fBM")
                    .sample(drifts[s], path_seed)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedData { states, paths })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorbing_and_single_state_chains() {
        let spec = MarkovChain::new(vec![1.0, 0.0, 0.0], sticky_transitions(3, 1.0)).unwrap();
        assert!(sample_states(&spec, 50, Seed(3)).iter().all(|s| *s == 0));
        let one = MarkovChain::new(vec![1.0], vec![vec![1.0]]).unwrap();
        assert!(sample_states(&one, 20, Seed(9)).iter().all(|s| *s == 0));
    }

    #[test]
    fn sticky_matrix_matches_five_state_layout() {
        let a = sticky_transitions(5, 0.64);
        assert!((a[0][0] - 0.64).abs() < 1e-15);
        assert!((a[2][4] - 0.09).abs() < 1e-15);
        for row in &a {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_paths_are_deterministic() {
        let g = Grid::new(21).unwrap();
        let p = sample_bm_drift_scaled(2.0, g, Seed(1), 0.0);
        for (k, v) in p.values().iter().enumerate() {
            assert!((v - 2.0 * g.node(k)).abs() < 1e-12);
        }
        let f = FbmSampler::new(0.7, g).unwrap().sample_scaled(-6.0, Seed(2), 0.0);
        for (k, v) in f.values().iter().enumerate() {
            assert!((v + 6.0 * g.node(k)).abs() < 1e-12);
        }
        let c = 30.0;
        let o = sample_ou_scaled(c, 2.0, g, Seed(3), 0.0).unwrap();
        assert!((o.increment() - 2.0).abs() < 2.0 * (-c).exp() + 1e-12);
    }

    #[test]
    fn same_seed_same_path() {
        let g = Grid::new(51).unwrap();
        assert_eq!(sample_bm_drift(1.0, g, Seed(5)), sample_bm_drift(1.0, g, Seed(5)));
        assert_ne!(sample_bm_drift(1.0, g, Seed(5)), sample_bm_drift(1.0, g, Seed(6)));
        assert_eq!(
            sample_ou(3.0, 1.0, g, Seed(7)).unwrap(),
            sample_ou(3.0, 1.0, g, Seed(7)).unwrap()
        );
    }

    #[test]
    fn ou_rejects_nonpositive_concentration() {
        let g = Grid::new(5).unwrap();
        assert!(sample_ou(0.0, 1.0, g, Seed(1)).is_err());
        assert!(sample_ou(-1.0, 1.0, g, Seed(1)).is_err());
    }

    #[test]
    fn fbm_covariance_examples() {
        let g = Grid::new(3).unwrap();
        let k = fbm_covariance(0.8, g).unwrap();
        assert!((k[1][1] - 1.0).abs() < 1e-15);
        let k = fbm_covariance(2.0 / 3.0, g).unwrap();
        assert!((k[0][1] - 0.5).abs() < 1e-12);
        let g = Grid::new(11).unwrap();
        let k = fbm_covariance(0.5, g).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert!((k[i][j] - g.node(i.min(j) + 1)).abs() < 1e-12);
            }
        }
        assert!(fbm_covariance(1.0, g).is_err());
    }

    #[test]
    fn dataset_is_reproducible() {
        let g = Grid::new(21).unwrap();
        let chain = MarkovChain::new(vec![0.5, 0.5], sticky_transitions(2, 0.8)).unwrap();
        let spec = ProcessSpec::Bm { drifts: vec![-1.0, 1.0] };
        let a = simulate_dataset(&chain, &spec, 30, g, Seed(11)).unwrap();
        let b = simulate_dataset(&chain, &spec, 30, g, Seed(11)).unwrap();
        assert_eq!(a, b);
        assert!(simulate_dataset(&chain, &ProcessSpec::Bm { drifts: vec![1.0] }, 3, g, Seed(1)).is_err());
    }
}
