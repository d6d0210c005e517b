//! Starting points for Baum-Welch.
//!
//! All initial state means are weighted averages of observations (or
//! reestimates from subsets of them), so they stay inside the convex hull
//! of the data.

use crate::emissions::{
    fbm_gain, reestimate_ou, BmDriftEmission, EmissionModel, FbmDriftEmission, OuEmission,
    Precision, OU_MIN_CONCENTRATION,
};
use crate::error::{Result, ThmmError};
use crate::hmm_engine::MarkovChain;
use crate::path_grid::{integrate, sobolev_sq_distance, Path, SobolevOrder};
use crate::simulate::Seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: Seed) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.0)
}

fn check_count(p: usize, n: usize) -> Result<()> {
    if p == 0 {
        return Err(ThmmError::invalid("need at least one state"));
    }
    if p > n {
        return Err(ThmmError::invalid(format!(
            "cannot initialize {p} states from {n} observations"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

/// Cluster centres and the final assignment (0-based) of each observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T> {
    pub centers: Vec<T>,
    pub assignment: Vec<usize>,
}

fn nearest<T>(x: &T, centers: &[T], dist: &impl Fn(&T, &T) -> f64) -> (usize, f64) {
    let mut best = (0, dist(x, &centers[0]));
    for (j, c) in centers.iter().enumerate().skip(1) {
        let d = dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd<T: Clone>(
    items: &[T],
    p: usize,
    seed: Seed,
    n_iter: usize,
    dist: impl Fn(&T, &T) -> f64,
    mean: impl Fn(&[&T]) -> Result<T>,
) -> Result<Clustering<T>> {
    check_count(p, items.len())?;
    let mut rng = rng(seed);

    // k-means++ seeding
    let mut chosen = vec![rng.random_range(0..items.len())];
    let mut d2: Vec<f64> = items.iter().map(|x| dist(x, &items[chosen[0]])).collect();
    while chosen.len() < p {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if *d > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| {
                (0..items.len())
                    .rev()
                    .find(|i| d2[*i] > 0.0)
                    .expect("positive total")
            })
        } else {
            (0..items.len()).find(|i| !chosen.contains(i)).expect("p <= n")
        };
        chosen.push(next);
        for (i, x) in items.iter().enumerate() {
            d2[i] = d2[i].min(dist(x, &items[next]));
        }
    }
    let mut centers: Vec<T> = chosen.iter().map(|&i| items[i].clone()).collect();
    let mut assignment = vec![usize::MAX; items.len()];

    for _ in 0..n_iter.max(1) {
        let assigned: Vec<(usize, f64)> = items.iter().map(|x| nearest(x, &centers, &dist)).collect();
        let mut next: Vec<usize> = assigned.iter().map(|a| a.0).collect();

        // re-seed empty clusters from the point farthest from its centre
        for j in 0..p {
            if next.contains(&j) {
                continue;
            }
            let mut far: Option<(usize, f64)> = None;
            for (i, (_, d)) in assigned.iter().enumerate() {
                let size = next.iter().filter(|c| **c == next[i]).count();
                if size > 1 && far.is_none_or(|(_, best)| *d > best) {
                    far = Some((i, *d));
                }
            }
            if let Some((i, _)) = far {
                next[i] = j;
            }
        }

        let changed = next != assignment;
        assignment = next;
        for (j, center) in centers.iter_mut().enumerate() {
            let members: Vec<&T> = items
                .iter()
                .zip(&assignment)
                .filter(|(_, a)| **a == j)
                .map(|(x, _)| x)
                .collect();
            if !members.is_empty() {
                *center = mean(&members)?;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Clustering { centers, assignment })
}

fn mean_path(members: &[&Path]) -> Result<Path> {
    let grid = members[0].grid();
    let mut acc = vec![0.0; grid.n_points()];
    for p in members {
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += v;
        }
    }
    let n = members.len() as f64;
    Path::new(grid, acc.into_iter().map(|a| a / n).collect())
}

/// k-means under the squared Sobolev distance with k-means++ seeding.
pub fn kmeans_paths(obs: &[Path], p: usize, order: SobolevOrder, seed: Seed, n_iter: usize) -> Result<Clustering<Path>> {
    if let Some(first) = obs.first() {
        if obs.iter().any(|o| o.grid() != first.grid()) {
            return Err(ThmmError::mismatch("observations on different grids"));
        }
    }
    lloyd(
        obs,
        p,
        seed,
        n_iter,
        |a, b| sobolev_sq_distance(a, b, order).expect("common grid checked"),
        mean_path,
    )
}

/// Initial state mean paths from a quick k-means run.
pub fn init_kmeans(obs: &[Path], p: usize, order: SobolevOrder, seed: Seed, n_iter: usize) -> Result<Vec<Path>> {
    Ok(kmeans_paths(obs, p, order, seed, n_iter)?.centers)
}

/// k-means in the Mahalanobis metric of `precision`.
pub fn kmeans_vectors(
    obs: &[Vec<f64>],
    p: usize,
    precision: &Precision,
    seed: Seed,
    n_iter: usize,
) -> Result<Clustering<Vec<f64>>> {
    if obs.iter().any(|x| x.len() != precision.dim()) {
        return Err(ThmmError::mismatch("observation dimension differs from precision"));
    }
    lloyd(
        obs,
        p,
        seed,
        n_iter,
        |a, b| {
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            precision
                .rows()
                .iter()
                .zip(&diff)
                .map(|(row, di)| di * row.iter().zip(&diff).map(|(r, d)| r * d).sum::<f64>())
                .sum()
        },
        |members| {
            let mut acc = vec![0.0; members[0].len()];
            for m in members {
                acc.iter_mut().zip(m.iter()).for_each(|(a, v)| *a += v);
            }
            let n = members.len() as f64;
            Ok(acc.into_iter().map(|a| a / n).collect())
        },
    )
}

// ---------------------------------------------------------------------------
// Random observations
// ---------------------------------------------------------------------------

/// Indices of `p` distinct observations drawn without replacement.
pub fn random_obs_indices(n: usize, p: usize, seed: Seed) -> Result<Vec<usize>> {
    check_count(p, n)?;
    Ok(rand::seq::index::sample(&mut rng(seed), n, p).into_vec())
}

/// `p` distinct observations picked uniformly at random.
pub fn init_random_obs<T: Clone>(obs: &[T], p: usize, seed: Seed) -> Result<Vec<T>> {
    Ok(random_obs_indices(obs.len(), p, seed)?
        .into_iter()
        .map(|i| obs[i].clone())
        .collect())
}

// ---------------------------------------------------------------------------
// Spread parametric estimates
// ---------------------------------------------------------------------------

/// Parametric families that [`init_spread_params`] supports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParametricFamily {
    BmDrift,
    Ou,
    FbmDrift { hurst: f64 },
}

/// Linear-interpolation quantile of an ascending sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn spread_levels(p: usize, seed: Option<Seed>) -> Vec<f64> {
    let denom = (p + 1) as f64;
    match seed {
        None => (1..=p).map(|k| k as f64 / denom).collect(),
        Some(seed) => {
            let mut r = rng(seed);
            (1..=p)
                .map(|k| (k as f64 + r.random_range(-0.5..0.5)) / denom)
                .collect()
        }
    }
}

/// Per-observation parameter estimates for a family.
fn per_path_estimates(obs: &[Path], family: ParametricFamily) -> Result<Vec<Vec<f64>>> {
    obs.iter()
        .map(|o| match family {
            ParametricFamily::BmDrift => Ok(vec![o.increment()]),
            ParametricFamily::FbmDrift { hurst } => {
                let gain = fbm_gain(hurst)?;
                Ok(vec![gain.drift_prefactor() * gain.moment(o)])
            }
            ParametricFamily::Ou => match reestimate_ou(&[1.0], std::slice::from_ref(o)) {
                Ok(e) => Ok(vec![e.mean(), e.concentration()]),
                Err(ThmmError::DegenerateState(_)) => Ok(vec![0.0, OU_MIN_CONCENTRATION]),
                Err(e) => Err(e),
            },
        })
        .collect()
}

/// Estimates each observation's parameters and spreads `p` starting values
/// over their empirical quantiles `1/(p+1), ..., p/(p+1)`.
///
/// For OU the state means are spread while every state starts at the
/// median concentration; paths whose concentration hits the lower bound
/// carry no information about the mean and are skipped.
pub fn init_spread_params(obs: &[Path], p: usize, family: ParametricFamily) -> Result<EmissionModel> {
    spread_params(obs, p, family, None)
}

/// [`init_spread_params`] with the quantile levels randomly jittered
/// within their strata, for restarts.
pub fn init_spread_params_jittered(obs: &[Path], p: usize, family: ParametricFamily, seed: Seed) -> Result<EmissionModel> {
    spread_params(obs, p, family, Some(seed))
}

fn spread_params(obs: &[Path], p: usize, family: ParametricFamily, seed: Option<Seed>) -> Result<EmissionModel> {
    check_count(p, obs.len())?;
    let levels = spread_levels(p, seed);
    let est = per_path_estimates(obs, family)?;
    Ok(match family {
        ParametricFamily::BmDrift => {
            let s = sorted(est.iter().map(|e| e[0]).collect());
            EmissionModel::BmDrift(
                levels
                    .iter()
                    .map(|&q| BmDriftEmission { drift: quantile(&s, q) })
                    .collect(),
            )
        }
        ParametricFamily::FbmDrift { hurst } => {
            let s = sorted(est.iter().map(|e| e[0]).collect());
            EmissionModel::FbmDrift(
                levels
                    .iter()
                    .map(|&q| FbmDriftEmission::new(quantile(&s, q), hurst))
                    .collect::<Result<_>>()?,
            )
        }
        ParametricFamily::Ou => {
            let informative: Vec<&Vec<f64>> =
                est.iter().filter(|e| e[1] > OU_MIN_CONCENTRATION).collect();
            let (means, concs) = if informative.is_empty() {
                // fall back to time averages with unit concentration
                let m = obs
                    .iter()
                    .map(|o| integrate(o.values(), o.grid()))
                    .collect::<Result<Vec<_>>>()?;
                (sorted(m), vec![1.0])
            } else {
                (
                    sorted(informative.iter().map(|e| e[0]).collect()),
                    sorted(informative.iter().map(|e| e[1]).collect()),
                )
            };
            let c = quantile(&concs, 0.5);
            EmissionModel::Ou(
                levels
                    .iter()
                    .map(|&q| OuEmission::from_mean_concentration(quantile(&means, q), c))
                    .collect::<Result<_>>()?,
            )
        }
    })
}

/// Uniform initial distribution with a diagonal-favouring transition
/// matrix: 0.5 on the diagonal, the rest spread evenly.
pub fn init_markov_uniform(p: usize) -> Result<MarkovChain> {
    if p == 0 {
        return Err(ThmmError::invalid("need at least one state"));
    }
    let eta = vec![1.0 / p as f64; p];
    let trans = if p == 1 {
        vec![vec![1.0]]
    } else {
        let off = 0.5 / (p - 1) as f64;
        (0..p)
            .map(|i| (0..p).map(|j| if i == j { 0.5 } else { off }).collect())
            .collect()
    };
    MarkovChain::new(eta, trans)
}
