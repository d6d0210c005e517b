//! Initialization plus Baum-Welch with independent restarts.

use crate::emissions::{
    BmDriftEmission, EmissionModel, EuclideanEmission, Family, FbmDriftEmission,
    NonparametricEmission, Observations, OuEmission, Precision,
};
use crate::error::{Result, ThmmError};
use crate::hmm_engine::{baum_welch, FitOptions, FitReport, ThmmModel};
use crate::init::{
    init_markov_uniform, init_spread_params, init_spread_params_jittered, kmeans_paths,
    kmeans_vectors, random_obs_indices, ParametricFamily,
};
use crate::path_grid::SobolevOrder;
use crate::simulate::Seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the starting state parameters are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Quick k-means; parametric states are fitted to the clusters.
    Kmeans,
    /// One randomly chosen observation per state.
    RandomObs,
    /// Quantiles of per-observation parameter estimates.
    SpreadParams,
}

impl std::str::FromStr for InitStrategy {
    type Err = ThmmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(InitStrategy::Kmeans),
            "random_obs" => Ok(InitStrategy::RandomObs),
            "spread_params" => Ok(InitStrategy::SpreadParams),
            _ => Err(ThmmError::invalid(format!("unknown init strategy '{s}'"))),
        }
    }
}

/// The emission family and its fixed hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub n_states: usize,
    /// Required for the fBM family.
    pub hurst: Option<f64>,
    /// Sobolev order of the nonparametric family; also the k-means metric.
    pub order: SobolevOrder,
    /// Shared precision of the Euclidean family; identity when absent.
    pub precision: Option<Precision>,
}

impl ModelSpec {
    pub fn new(family: Family, n_states: usize) -> Self {
        ModelSpec {
            family,
            n_states,
            hurst: None,
            order: SobolevOrder::First,
            precision: None,
        }
    }

    fn parametric(&self) -> Result<Option<ParametricFamily>> {
        Ok(match self.family {
            Family::BmDrift => Some(ParametricFamily::BmDrift),
            Family::Ou => Some(ParametricFamily::Ou),
            Family::FbmDrift => Some(ParametricFamily::FbmDrift {
                hurst: self.hurst.ok_or_else(|| ThmmError::invalid("fbm family needs a hurst parameter"))?,
            }),
            Family::Euclidean | Family::Nonparametric => None,
        })
    }

    /// Emission model with placeholder states, used as the template that
    /// cluster-weighted reestimation fills in.
    fn template(&self, obs: &Observations) -> Result<EmissionModel> {
        let p = self.n_states;
        Ok(match self.family {
            Family::BmDrift => EmissionModel::BmDrift(vec![BmDriftEmission { drift: 0.0 }; p]),
            Family::Ou => EmissionModel::Ou(vec![OuEmission::new(0.0, 1.0)?; p]),
            Family::FbmDrift => EmissionModel::FbmDrift(vec![
                FbmDriftEmission::new(0.0, self.hurst.unwrap_or(0.5))?;
                p
            ]),
            Family::Nonparametric => {
                let grid = obs.as_paths()?.first().map(|o| o.grid()).ok_or(ThmmError::ZeroWeights)?;
                EmissionModel::Nonparametric(vec![
                    NonparametricEmission {
                        mean_path: crate::path_grid::Path::zeros(grid),
                        order: self.order,
                    };
                    p
                ])
            }
            Family::Euclidean => {
                let dim = obs.as_vectors()?.first().map(Vec::len).ok_or(ThmmError::ZeroWeights)?;
                EmissionModel::Euclidean {
                    precision: self.precision.clone().unwrap_or_else(|| Precision::identity(dim)),
                    states: vec![EuclideanEmission { mean: vec![0.0; dim] }; p],
                }
            }
        })
    }
}

/// Fit settings shared by all restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub spec: ModelSpec,
    pub init: InitStrategy,
    pub options: FitOptions,
    pub restarts: usize,
    pub seed: Seed,
    pub kmeans_iter: usize,
}

impl FitConfig {
    pub fn new(spec: ModelSpec, init: InitStrategy) -> Self {
        FitConfig {
            spec,
            init,
            options: FitOptions::default(),
            restarts: 1,
            seed: Seed(0),
            kmeans_iter: 50,
        }
    }
}

/// Hard-assignment weights: `weights[j][t] = 1` when `assignment[t] == j`.
fn indicator_weights(assignment: &[Option<usize>], p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|j| {
            assignment
                .iter()
                .map(|a| if *a == Some(j) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Starting emission model for one restart.
pub fn initial_emissions(obs: &Observations, spec: &ModelSpec, init: InitStrategy, seed: Seed, kmeans_iter: usize) -> Result<EmissionModel> {
    let p = spec.n_states;
    let assignment: Vec<Option<usize>> = match init {
        InitStrategy::SpreadParams => {
            let family = spec.parametric()?.ok_or_else(|| {
                ThmmError::invalid(format!("spread_params needs a parametric family, got {}", spec.family))
            })?;
            let paths = obs.as_paths()?;
            // restart 0 uses the plain quantile levels
            return if seed == Seed(0) {
                init_spread_params(paths, p, family)
            } else {
                init_spread_params_jittered(paths, p, family, seed)
            };
        }
        InitStrategy::Kmeans => match obs {
            Observations::Paths(paths) => kmeans_paths(paths, p, spec.order, seed, kmeans_iter)?
                .assignment
                .into_iter()
                .map(Some)
                .collect(),
            Observations::Vectors(v) => {
                let precision = spec.precision.clone().unwrap_or_else(|| Precision::identity(v[0].len()));
                kmeans_vectors(v, p, &precision, seed, kmeans_iter)?
                    .assignment
                    .into_iter()
                    .map(Some)
                    .collect()
            }
        },
        InitStrategy::RandomObs => {
            let mut a = vec![None; obs.len()];
            for (j, i) in random_obs_indices(obs.len(), p, seed)?.into_iter().enumerate() {
                a[i] = Some(j);
            }
            a
        }
    };
    let template = spec.template(obs)?;
    let (model, _) = template.reestimate(&indicator_weights(&assignment, p), obs)?;
    Ok(model)
}

/// Result of one restart.
#[derive(Debug, Clone)]
pub struct RestartOutcome {
    pub seed: Seed,
    pub result: std::result::Result<(ThmmModel, FitReport), ThmmError>,
}

/// Best model over all restarts.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: ThmmModel,
    pub report: FitReport,
    /// Index of the winning restart.
    pub restart: usize,
    /// Final log-likelihood of each restart; `None` if it failed.
    pub restart_logliks: Vec<Option<f64>>,
}

/// Fits one restart from the given seed.
pub fn fit_once(obs: &Observations, config: &FitConfig, seed: Seed) -> Result<(ThmmModel, FitReport)> {
    let emissions = initial_emissions(obs, &config.spec, config.init, seed, config.kmeans_iter)?;
    let model0 = ThmmModel::new(init_markov_uniform(config.spec.n_states)?, emissions)?;
    baum_welch(&model0, obs, config.options)
}

/// Runs `config.restarts` independent fits in parallel and keeps the one
/// with the highest final log-likelihood (earliest restart on ties).
///
/// Restart `r` uses `config.seed.substream(r)`, except restart 0 which
/// uses `config.seed` itself.
pub fn fit(obs: &Observations, config: &FitConfig) -> Result<FitOutcome> {
    if config.restarts == 0 {
        return Err(ThmmError::invalid("need at least one restart"));
    }
    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = restart_seed(config.seed, r);
            RestartOutcome { seed, result: fit_once(obs, config, seed) }
        })
        .collect();
    select_best(outcomes)
}

pub fn restart_seed(seed: Seed, r: usize) -> Seed {
    if r == 0 {
        seed
    } else {
        seed.substream(r as u64)
    }
}

/// Picks the restart with the highest final log-likelihood. If every
/// restart failed, the first error is returned.
pub fn select_best(outcomes: Vec<RestartOutcome>) -> Result<FitOutcome> {
    let restart_logliks: Vec<Option<f64>> = outcomes
        .iter()
        .map(|o| o.result.as_ref().ok().map(|(_, rep)| rep.final_loglik()))
        .collect();
    let mut best: Option<usize> = None;
    for (r, ll) in restart_logliks.iter().enumerate() {
        if let Some(ll) = ll {
            if best.is_none_or(|b| *ll > restart_logliks[b].expect("best is ok")) {
                best = Some(r);
            }
        }
    }
    match best {
        Some(r) => {
            let (model, report) = outcomes.into_iter().nth(r).expect("index in range").result.expect("ok");
            Ok(FitOutcome { model, report, restart: r, restart_logliks })
        }
        None => Err(outcomes
            .into_iter()
            .find_map(|o| o.result.err())
            .unwrap_or(ThmmError::ZeroLikelihood)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_grid::{Grid, Path};

    fn line_obs() -> Observations {
        let g = Grid::new(21).unwrap();
        let paths = [1.0, 1.2, 0.8, -3.0, -3.1, -2.9, 1.1, -3.0]
            .iter()
            .map(|c| Path::from_fn(g, |t| c * t).unwrap())
            .collect();
        Observations::paths(paths).unwrap()
    }

    #[test]
    fn kmeans_init_fits_cluster_drifts() {
        let spec = ModelSpec::new(Family::BmDrift, 2);
        match initial_emissions(&line_obs(), &spec, InitStrategy::Kmeans, Seed(3), 50).unwrap() {
            EmissionModel::BmDrift(s) => {
                let mut d: Vec<f64> = s.iter().map(|e| e.drift).collect();
                d.sort_by(f64::total_cmp);
                assert!((d[0] + 3.0).abs() < 1e-9 && (d[1] - 1.025).abs() < 1e-9, "{d:?}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_obs_init_uses_single_paths() {
        let obs = line_obs();
        let spec = ModelSpec::new(Family::BmDrift, 3);
        let paths = obs.as_paths().unwrap();
        match initial_emissions(&obs, &spec, InitStrategy::RandomObs, Seed(9), 50).unwrap() {
            EmissionModel::BmDrift(s) => {
                for e in s {
                    assert!(paths.iter().any(|p| (p.increment() - e.drift).abs() < 1e-12));
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spread_rejects_nonparametric() {
        let spec = ModelSpec::new(Family::Nonparametric, 2);
        assert!(initial_emissions(&line_obs(), &spec, InitStrategy::SpreadParams, Seed(0), 50).is_err());
    }

    #[test]
    fn best_restart_is_selected() {
        let mut config = FitConfig::new(ModelSpec::new(Family::BmDrift, 2), InitStrategy::RandomObs);
        config.restarts = 4;
        let obs = line_obs();
        let out = fit(&obs, &config).unwrap();
        let best = out.restart_logliks.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.report.final_loglik(), best);
        assert_eq!(out.restart_logliks[out.restart], Some(best));
    }
}
