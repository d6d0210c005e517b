#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thmm::emissions::{
    BmDriftEmission, EmissionModel, EuclideanEmission, FbmDriftEmission, NonparametricEmission,
    OuEmission,
};
use thmm::evaluate::{adjusted_rand_index, align_labels, Labeling};
use thmm::hmm_engine::LogEmissions;
use thmm::path_grid::smooth;
use thmm::simulate::{
    sample_bm_drift, sample_fbm, sample_ou, simulate_dataset, sticky_transitions, ProcessSpec,
};
use thmm::*;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Every state sequence of length `t` over `p` states, lexicographically.
pub fn all_sequences(p: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..p).map(move |j| {
                    let mut v = s.clone();
                    v.push(j);
                    v
                })
            })
            .collect();
    }
    out
}

pub fn log_joint(chain: &MarkovChain, log_b: &[Vec<f64>], seq: &[usize]) -> f64 {
    let mut lp = chain.eta()[seq[0]].ln() + log_b[0][seq[0]];
    for t in 1..seq.len() {
        lp += chain.trans()[seq[t - 1]][seq[t]].ln() + log_b[t][seq[t]];
    }
    lp
}

pub struct BruteForce {
    pub loglik: f64,
    pub gamma: Vec<Vec<f64>>,
    pub xi: Vec<Vec<Vec<f64>>>,
    pub viterbi: Vec<usize>,
}

/// Likelihood, posteriors and MAP path by summing over all `p^T` paths.
pub fn brute_force(chain: &MarkovChain, log_b: &[Vec<f64>]) -> BruteForce {
    let p = chain.n_states();
    let t_len = log_b.len();
    let seqs = all_sequences(p, t_len);
    let joints: Vec<f64> = seqs.iter().map(|s| log_joint(chain, log_b, s)).collect();
    let loglik = log_sum_exp(&joints);
    let mut gamma = vec![vec![0.0; p]; t_len];
    let mut xi = vec![vec![vec![0.0; p]; p]; t_len.saturating_sub(1)];
    let mut best = (f64::NEG_INFINITY, 0);
    for (k, (s, lj)) in seqs.iter().zip(&joints).enumerate() {
        let w = (lj - loglik).exp();
        for t in 0..t_len {
            gamma[t][s[t]] += w;
            if t + 1 < t_len {
                xi[t][s[t]][s[t + 1]] += w;
            }
        }
        if *lj > best.0 {
            best = (*lj, k);
        }
    }
    BruteForce {
        loglik,
        gamma,
        xi,
        viterbi: seqs[best.1].clone(),
    }
}

pub fn random_stochastic(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_chain(r: &mut ChaCha8Rng, p: usize) -> MarkovChain {
    let eta = random_stochastic(r, p);
    let trans = (0..p).map(|_| random_stochastic(r, p)).collect();
    MarkovChain::new(eta, trans).unwrap()
}

pub fn random_log_b(r: &mut ChaCha8Rng, t: usize, p: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| (0..p).map(|_| r.random_range(-6.0..0.0)).collect())
        .collect()
}

pub fn log_emissions(rows: &[Vec<f64>]) -> LogEmissions {
    LogEmissions::from_rows(rows.to_vec()).unwrap()
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Trace never drops by more than `slack` relative to its magnitude.
pub fn is_monotone(trace: &[f64], slack: f64) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] >= w[0] - slack * w[0].abs().max(w[1].abs()))
}

// ---------------------------------------------------------------------------
// Random observation sets
// ---------------------------------------------------------------------------

/// Smooth random curve: a random trigonometric polynomial, anchored at 0.
pub fn smooth_curve(r: &mut ChaCha8Rng, grid: Grid, scale: f64) -> Path {
    let a: Vec<f64> = (0..4).map(|_| r.random_range(-scale..scale)).collect();
    Path::from_fn(grid, |t| {
        use std::f64::consts::PI;
        a[0] * t + a[1] * (PI * t).sin() + a[2] * (2.0 * PI * t).sin() + a[3] * t * t
    })
    .unwrap()
}

/// Random paths of the kind a family is designed for.
pub fn random_paths(family: Family, hurst: f64, n: usize, grid: Grid, seed: u64) -> Vec<Path> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let s = Seed(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            match family {
                Family::BmDrift => sample_bm_drift(r.random_range(-5.0..5.0), grid, s),
                Family::Ou => {
                    sample_ou(r.random_range(0.5..10.0), r.random_range(-3.0..3.0), grid, s).unwrap()
                }
                Family::FbmDrift => sample_fbm(hurst, r.random_range(-5.0..5.0), grid, s).unwrap(),
                _ => smooth_curve(&mut r, grid, 3.0),
            }
        })
        .collect()
}

pub fn random_vectors(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(-4.0..4.0)).collect())
        .collect()
}

/// Emission model with states drawn from the observations themselves.
pub fn random_model(family: Family, hurst: f64, obs: &Observations, p: usize, r: &mut ChaCha8Rng) -> EmissionModel {
    match obs {
        Observations::Vectors(v) => EmissionModel::Euclidean {
            precision: Precision::identity(v[0].len()),
            states: (0..p)
                .map(|_| EuclideanEmission { mean: v[r.random_range(0..v.len())].clone() })
                .collect(),
        },
        Observations::Paths(paths) => {
            let pick = |r: &mut ChaCha8Rng| &paths[r.random_range(0..paths.len())];
            match family {
                Family::BmDrift => EmissionModel::BmDrift(
                    (0..p).map(|_| BmDriftEmission { drift: pick(r).increment() }).collect(),
                ),
                Family::Ou => EmissionModel::Ou(
                    (0..p)
                        .map(|_| OuEmission::new(r.random_range(-4.0..4.0), r.random_range(0.5..8.0)).unwrap())
                        .collect(),
                ),
                Family::FbmDrift => EmissionModel::FbmDrift(
                    (0..p)
                        .map(|_| FbmDriftEmission::new(pick(r).increment(), hurst).unwrap())
                        .collect(),
                ),
                Family::Nonparametric => {
                    let order = if r.random_bool(0.5) { SobolevOrder::First } else { SobolevOrder::Second };
                    EmissionModel::Nonparametric(
                        (0..p)
                            .map(|_| NonparametricEmission { mean_path: pick(r).clone(), order })
                            .collect(),
                    )
                }
                Family::Euclidean => unreachable!(),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Simulation-study pipeline
// ---------------------------------------------------------------------------

pub const STUDY_T: usize = 200;
pub const STUDY_STAY: f64 = 0.64;
pub const STUDY_RESTARTS: usize = 10;

pub struct StudyRun {
    pub ari: f64,
    /// Fitted scalar parameter of each predicted state, indexed by the true
    /// state it aligns to.
    pub aligned_params: Vec<Option<f64>>,
    pub monotone: bool,
}

fn scalar_params(model: &EmissionModel) -> Vec<f64> {
    match model {
        EmissionModel::BmDrift(s) => s.iter().map(|e| e.drift).collect(),
        EmissionModel::FbmDrift(s) => s.iter().map(|e| e.drift).collect(),
        EmissionModel::Ou(s) => s.iter().map(|e| e.mean()).collect(),
        _ => vec![],
    }
}

/// Simulates one dataset, fits it with spread initialization and restarts,
/// and scores the Viterbi path.
pub fn study_run(process: &ProcessSpec, spec: ModelSpec, data_seed: u64) -> StudyRun {
    let p = process.n_states();
    let chain = MarkovChain::new(vec![1.0 / p as f64; p], sticky_transitions(p, STUDY_STAY)).unwrap();
    let data = simulate_dataset(&chain, process, STUDY_T, Grid::default(), Seed(data_seed)).unwrap();
    let obs = Observations::paths(data.paths).unwrap();
    let init = if spec.family == Family::Nonparametric {
        InitStrategy::Kmeans
    } else {
        InitStrategy::SpreadParams
    };
    let mut config = FitConfig::new(spec, init);
    config.restarts = STUDY_RESTARTS;
    config.seed = Seed(data_seed).substream(1 << 32);
    let out = fit(&obs, &config).unwrap();
    let truth = Labeling::from_states(&data.states).unwrap();
    let pred = Labeling::from_states(&out.model.decode(&obs).unwrap()).unwrap();
    let ari = adjusted_rand_index(&truth, &pred).unwrap();
    let alignment = align_labels(&truth, &pred).unwrap();
    let params = scalar_params(&out.model.emissions);
    let mut aligned_params = vec![None; p];
    for (k, v) in params.iter().enumerate() {
        let target = alignment.mapping[k] - 1;
        if target < p {
            aligned_params[target] = Some(*v);
        }
    }
    StudyRun {
        ari,
        aligned_params,
        monotone: is_monotone(&out.report.loglik_trace, 1e-9),
    }
}

/// Two regimes of smooth curves: distinct mean shapes plus smoothed
/// Brownian noise.
pub fn two_regime_curves(data_seed: u64) -> (Vec<usize>, Vec<Path>) {
    use std::f64::consts::PI;
    let grid = Grid::default();
    let chain = MarkovChain::new(vec![0.5, 0.5], sticky_transitions(2, 0.8)).unwrap();
    let states = thmm::simulate::sample_states(&chain, STUDY_T, Seed(data_seed).substream(0));
    let paths = states
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let noise = smooth(&sample_bm_drift(0.0, grid, Seed(data_seed).substream(t as u64 + 1)), 0.05).unwrap();
            let mean = |tau: f64| if s == 0 { (2.0 * PI * tau).sin() } else { 2.0 * tau * tau - tau };
            let values = grid
                .nodes()
                .zip(noise.values())
                .map(|(tau, n)| mean(tau) + 0.5 * n)
                .collect();
            Path::new(grid, values).unwrap()
        })
        .collect();
    (states, paths)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
