//! Log-space forward-backward, posteriors, Baum-Welch and Viterbi.
//!
//! The engine only sees emissions through a [`LogEmissions`] matrix, so the
//! recursions are shared by every emission family. All reductions run in a
//! fixed order and ties resolve to the lowest state index.

use crate::emissions::{EmissionModel, Observations};
use crate::error::{Result, ThmmError};
use std::collections::BTreeSet;

/// Tolerance used when validating user-supplied probability vectors.
const STOCHASTIC_TOL: f64 = 1e-9;

pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

// ---------------------------------------------------------------------------
// Markov chain
// ---------------------------------------------------------------------------

/// Initial distribution and row-stochastic transition matrix of the hidden
/// chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    eta: Vec<f64>,
    trans: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(eta: Vec<f64>, trans: Vec<Vec<f64>>) -> Result<Self> {
        let p = eta.len();
        if p == 0 {
            return Err(ThmmError::invalid("a chain needs at least one state"));
        }
        if trans.len() != p || trans.iter().any(|r| r.len() != p) {
            return Err(ThmmError::mismatch(format!(
                "transition matrix must be {p} x {p}"
            )));
        }
        check_distribution(&eta, "initial probabilities")?;
        for (i, row) in trans.iter().enumerate() {
            check_distribution(row, &format!("transition row {}", i + 1))?;
        }
        Ok(MarkovChain { eta, trans })
    }

    pub fn n_states(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn trans(&self) -> &[Vec<f64>] {
        &self.trans
    }

    fn log_eta(&self) -> Vec<f64> {
        self.eta.iter().map(|&x| ln(x)).collect()
    }

    fn log_trans(&self) -> Vec<Vec<f64>> {
        self.trans
            .iter()
            .map(|r| r.iter().map(|&x| ln(x)).collect())
            .collect()
    }
}

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(ThmmError::invalid(format!("{what} must be finite and nonnegative")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(ThmmError::invalid(format!("{what} sum to {total}, expected 1")));
    }
    Ok(())
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// A topological HMM: hidden chain plus one emission family.
#[derive(Debug, Clone, PartialEq)]
pub struct ThmmModel {
    pub chain: MarkovChain,
    pub emissions: EmissionModel,
}

impl ThmmModel {
    pub fn new(chain: MarkovChain, emissions: EmissionModel) -> Result<Self> {
        if chain.n_states() != emissions.n_states() {
            return Err(ThmmError::mismatch(format!(
                "chain has {} states but emissions have {}",
                chain.n_states(),
                emissions.n_states()
            )));
        }
        emissions.validate()?;
        Ok(ThmmModel { chain, emissions })
    }

    pub fn n_states(&self) -> usize {
        self.chain.n_states()
    }

    pub fn log_likelihood(&self, obs: &Observations) -> Result<f64> {
        let log_b = self.emissions.log_emissions(obs)?;
        Ok(forward_backward(&self.chain, &log_b)?.log_likelihood)
    }

    /// Most probable state sequence (0-based states).
    pub fn decode(&self, obs: &Observations) -> Result<Vec<usize>> {
        let log_b = self.emissions.log_emissions(obs)?;
        viterbi(&self.chain, &log_b)
    }
}

// ---------------------------------------------------------------------------
// Trellis and posteriors
// ---------------------------------------------------------------------------

/// `T x p` matrix of `log b_j(O_t)`, row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEmissions {
    n_obs: usize,
    n_states: usize,
    data: Vec<f64>,
}

impl LogEmissions {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_obs = rows.len();
        if n_obs == 0 {
            return Err(ThmmError::invalid("empty observation sequence"));
        }
        let n_states = rows[0].len();
        if n_states == 0 || rows.iter().any(|r| r.len() != n_states) {
            return Err(ThmmError::mismatch("ragged log-emission matrix"));
        }
        if rows.iter().flatten().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(ThmmError::Numerical("log-emission is NaN or +inf".into()));
        }
        Ok(LogEmissions {
            n_obs,
            n_states,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_states..(t + 1) * self.n_states]
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.data[t * self.n_states + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trellis {
    pub log_alpha: Vec<Vec<f64>>,
    pub log_beta: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `gamma[t][i]`
    pub gamma: Vec<Vec<f64>>,
    /// `xi[t][i][j]` for `t < T - 1`
    pub xi: Vec<Vec<Vec<f64>>>,
}

fn check_shapes(chain: &MarkovChain, log_b: &LogEmissions) -> Result<()> {
    if chain.n_states() != log_b.n_states() {
        return Err(ThmmError::mismatch(format!(
            "chain has {} states but log-emissions have {} columns",
            chain.n_states(),
            log_b.n_states()
        )));
    }
    Ok(())
}

/// Forward and backward recursions on the log scale.
pub fn forward_backward(chain: &MarkovChain, log_b: &LogEmissions) -> Result<Trellis> {
    check_shapes(chain, log_b)?;
    let (n, p) = (log_b.n_obs(), log_b.n_states());
    let log_eta = chain.log_eta();
    let log_a = chain.log_trans();

    let mut log_alpha = vec![vec![0.0; p]; n];
    for j in 0..p {
        log_alpha[0][j] = log_eta[j] + log_b.get(0, j);
    }
    for t in 1..n {
        for j in 0..p {
            let prev = &log_alpha[t - 1];
            let s = log_sum_exp((0..p).map(|i| prev[i] + log_a[i][j]));
            log_alpha[t][j] = s + log_b.get(t, j);
        }
    }

    let mut log_beta = vec![vec![0.0; p]; n];
    for t in (0..n - 1).rev() {
        for i in 0..p {
            let next = &log_beta[t + 1];
            log_beta[t][i] = log_sum_exp((0..p).map(|j| log_a[i][j] + log_b.get(t + 1, j) + next[j]));
        }
    }

    let log_likelihood = log_sum_exp(log_alpha[n - 1].iter().copied());
    Ok(Trellis {
        log_alpha,
        log_beta,
        log_likelihood,
    })
}

/// State and transition posteriors from a trellis.
pub fn posteriors(trellis: &Trellis, chain: &MarkovChain, log_b: &LogEmissions) -> Result<Posteriors> {
    check_shapes(chain, log_b)?;
    if !trellis.log_likelihood.is_finite() {
        return Err(ThmmError::ZeroLikelihood);
    }
    let (n, p) = (log_b.n_obs(), log_b.n_states());
    let log_a = chain.log_trans();
    let ll = trellis.log_likelihood;

    let gamma: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let row: Vec<f64> = (0..p)
                .map(|i| (trellis.log_alpha[t][i] + trellis.log_beta[t][i] - ll).exp())
                .collect();
            normalized(&row)
        })
        .collect();

    let xi = (0..n.saturating_sub(1))
        .map(|t| {
            let logs: Vec<Vec<f64>> = (0..p)
                .map(|i| {
                    (0..p)
                        .map(|j| {
                            trellis.log_alpha[t][i]
                                + log_a[i][j]
                                + log_b.get(t + 1, j)
                                + trellis.log_beta[t + 1][j]
                        })
                        .collect()
                })
                .collect();
            let denom = log_sum_exp(logs.iter().flatten().copied());
            logs.iter()
                .map(|r| r.iter().map(|x| (x - denom).exp()).collect())
                .collect()
        })
        .collect();

    Ok(Posteriors { gamma, xi })
}

/// One reestimation step. Returns the updated model and any
/// degenerate-state warnings.
pub fn reestimate(model: &ThmmModel, post: &Posteriors, obs: &Observations) -> Result<(ThmmModel, Vec<String>)> {
    let p = model.n_states();
    let n = obs.len();
    if post.gamma.len() != n || post.gamma.iter().any(|g| g.len() != p) {
        return Err(ThmmError::mismatch("posteriors do not match model and observations"));
    }
    let mut warnings = Vec::new();

    let eta = normalized(&post.gamma[0]);

    let mut trans = model.chain.trans().to_vec();
    if n >= 2 {
        for (i, row) in trans.iter_mut().enumerate() {
            let counts: Vec<f64> = (0..p)
                .map(|j| post.xi.iter().map(|x| x[i][j]).sum::<f64>())
                .collect();
            let occupancy: f64 = post.gamma[..n - 1].iter().map(|g| g[i]).sum();
            if occupancy < crate::emissions::DEGENERATE_WEIGHT {
                warnings.push(format!(
                    "state {} is never left; transition row carried over",
                    i + 1
                ));
                continue;
            }
            *row = normalized(&counts);
        }
    }

    let weights: Vec<Vec<f64>> = (0..p)
        .map(|j| post.gamma.iter().map(|g| g[j]).collect())
        .collect();
    let (emissions, emission_warnings) = model.emissions.reestimate(&weights, obs)?;
    warnings.extend(emission_warnings);

    let chain = MarkovChain { eta, trans };
    Ok((ThmmModel { chain, emissions }, warnings))
}

// ---------------------------------------------------------------------------
// Baum-Welch
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Relative log-likelihood change below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    /// Log-likelihood of the initial model followed by one entry per
    /// reestimation step.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace holds the initial value")
    }
}

/// Iterates forward-backward, posteriors and reestimation until the
/// relative change `|l_{r+1} - l_r| / |l_{r+1}|` drops below `tol`.
pub fn baum_welch(model0: &ThmmModel, obs: &Observations, opts: FitOptions) -> Result<(ThmmModel, FitReport)> {
    if obs.is_empty() {
        return Err(ThmmError::invalid("empty observation sequence"));
    }
    let mut model = model0.clone();
    let mut log_b = model.emissions.log_emissions(obs)?;
    let mut trellis = forward_backward(&model.chain, &log_b)?;
    if !trellis.log_likelihood.is_finite() {
        return Err(ThmmError::ZeroLikelihood);
    }
    let mut trace = vec![trellis.log_likelihood];
    let mut warnings = BTreeSet::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let post = posteriors(&trellis, &model.chain, &log_b)?;
        let (next, warn) = reestimate(&model, &post, obs)?;
        warnings.extend(warn);
        log_b = next.emissions.log_emissions(obs)?;
        trellis = forward_backward(&next.chain, &log_b)?;
        if !trellis.log_likelihood.is_finite() {
            return Err(ThmmError::ZeroLikelihood);
        }
        model = next;
        iterations += 1;
        let prev = trace[trace.len() - 1];
        let cur = trellis.log_likelihood;
        trace.push(cur);
        if (cur - prev).abs() <= opts.tol * cur.abs() {
            converged = true;
            break;
        }
    }

    Ok((
        model,
        FitReport {
            iterations,
            loglik_trace: trace,
            converged,
            warnings: warnings.into_iter().collect(),
        },
    ))
}

// ---------------------------------------------------------------------------
// Viterbi
// ---------------------------------------------------------------------------

/// Most probable state sequence (0-based states), lowest index on ties.
pub fn viterbi(chain: &MarkovChain, log_b: &LogEmissions) -> Result<Vec<usize>> {
    check_shapes(chain, log_b)?;
    let (n, p) = (log_b.n_obs(), log_b.n_states());
    let log_eta = chain.log_eta();
    let log_a = chain.log_trans();

    let mut delta: Vec<f64> = (0..p).map(|j| log_eta[j] + log_b.get(0, j)).collect();
    let mut back = vec![vec![0usize; p]; n];
    let infeasible = |d: &[f64], t: usize| -> Result<()> {
        if d.iter().all(|x| *x == f64::NEG_INFINITY) {
            return Err(ThmmError::Numerical(format!("no feasible state at t = {}", t + 1)));
        }
        Ok(())
    };
    infeasible(&delta, 0)?;

    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; p];
        for j in 0..p {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for i in 0..p {
                let v = delta[i] + log_a[i][j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + log_b.get(t, j);
            back[t][j] = arg;
        }
        infeasible(&next, t)?;
        delta = next;
    }

    let mut last = 0;
    for j in 1..p {
        if delta[j] > delta[last] {
            last = j;
        }
    }
    let mut states = vec![0; n];
    states[n - 1] = last;
    for t in (1..n).rev() {
        states[t - 1] = back[t][states[t]];
    }
    Ok(states)
}
