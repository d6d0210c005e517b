use crate::config::{self, ConfigError, Process};
use crate::io::{self, ModelFile};
use anyhow::{bail, Result};
use serde::Serialize;
use std::path::Path as FsPath;
use thmm::emissions::Family;
use thmm::evaluate::{adjusted_rand_index, align_labels, confusion_matrix, Labeling};
use thmm::fit::{fit, FitConfig, ModelSpec};
use thmm::path_grid::{Grid, SobolevOrder, DEFAULT_GRID_POINTS};
use thmm::simulate::{simulate_dataset, sticky_transitions, ProcessSpec};
use thmm::{FitOptions, MarkovChain, Precision, Seed};

/// Command-line overrides shared by all subcommands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub restarts: Option<usize>,
    pub bandwidth: Option<f64>,
    pub grid_points: Option<usize>,
    pub quiet: bool,
}

impl Overrides {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn simulate(config_path: &FsPath, paths_out: &FsPath, labels_out: &FsPath, o: &Overrides) -> Result<()> {
    let cfg = config::load(config_path)?;
    let Some(sim) = cfg.simulate else {
        bail!(ConfigError("config needs a [simulate] section".into()));
    };
    let p = sim.n_states()?;
    let eta = sim.eta.clone().unwrap_or_else(|| vec![1.0 / p as f64; p]);
    let trans = match (&sim.trans, sim.stay) {
        (Some(t), None) => t.clone(),
        (None, Some(stay)) => sticky_transitions(p, stay),
        (None, None) => bail!(ConfigError("config section 'simulate' needs 'trans' or 'stay'".into())),
        (Some(_), Some(_)) => bail!(ConfigError("config section 'simulate' takes only one of 'trans' and 'stay'".into())),
    };
    let chain = MarkovChain::new(eta, trans)?;
    let process = match sim.process {
        Process::Bm => ProcessSpec::Bm { drifts: sim.required(&sim.drifts, "drifts")?.clone() },
        Process::Ou => ProcessSpec::Ou {
            mu: sim.required(&sim.mu, "mu")?.clone(),
            c: sim.required(&sim.c, "c")?.clone(),
        },
        Process::Fbm => ProcessSpec::Fbm {
            hurst: *sim.required(&sim.hurst, "hurst")?,
            drifts: sim.required(&sim.drifts, "drifts")?.clone(),
        },
    };
    let grid = Grid::new(o.grid_points.unwrap_or(cfg.data.grid_points))?;
    let seed = Seed(o.seed.unwrap_or(sim.seed));
    let data = simulate_dataset(&chain, &process, sim.n_obs, grid, seed)?;
    io::write_paths(paths_out, &data.paths)?;
    io::write_labels(labels_out, &data.states.iter().map(|s| s + 1).collect::<Vec<_>>())?;
    o.note(format!(
        "simulated {} paths on {} grid points ({} states)",
        data.paths.len(),
        grid.n_points(),
        p
    ));
    Ok(())
}

pub fn fit_model(config_path: &FsPath, data: &FsPath, out: &FsPath, o: &Overrides) -> Result<()> {
    let cfg = config::load(config_path)?;
    let Some(m) = cfg.model else {
        bail!(ConfigError("config needs a [model] section".into()));
    };
    let grid_points = o.grid_points.unwrap_or(cfg.data.grid_points);
    let bandwidth = o.bandwidth.or(cfg.data.bandwidth);
    let series = io::read_series(data)?;
    let obs = io::to_observations(&series, m.family, grid_points, bandwidth)?;

    let mut spec = ModelSpec::new(m.family, m.p);
    spec.hurst = m.hurst;
    if let Some(order) = m.order {
        spec.order = SobolevOrder::try_from(order)?;
    }
    spec.precision = m.precision.map(Precision::new).transpose()?;
    if m.family == Family::FbmDrift && spec.hurst.is_none() {
        bail!(ConfigError("config key 'model.hurst' is required for family fbm".into()));
    }

    let mut fc = FitConfig::new(spec, cfg.fit.init);
    fc.options = FitOptions {
        tol: o.tol.unwrap_or(cfg.fit.tol),
        max_iter: o.max_iter.unwrap_or(cfg.fit.max_iter),
    };
    fc.restarts = o.restarts.unwrap_or(cfg.fit.restarts);
    fc.seed = Seed(o.seed.unwrap_or(cfg.fit.seed));
    let outcome = fit(&obs, &fc)?;

    for (r, ll) in outcome.restart_logliks.iter().enumerate() {
        match ll {
            Some(ll) => o.note(format!("restart {}: final log-likelihood {ll:.6}", r + 1)),
            None => o.note(format!("restart {}: failed", r + 1)),
        }
    }
    o.note(format!(
        "kept restart {} after {} iterations ({})",
        outcome.restart + 1,
        outcome.report.iterations,
        if outcome.report.converged { "converged" } else { "iteration limit reached" }
    ));
    for w in &outcome.report.warnings {
        o.note(format!("warning: {w}"));
    }

    let dim = match &obs {
        thmm::Observations::Vectors(v) => v[0].len(),
        thmm::Observations::Paths(_) => grid_points,
    };
    let mut file = ModelFile::from_model(&outcome.model, dim);
    file.loglik = Some(outcome.report.final_loglik());
    file.loglik_trace = outcome.report.loglik_trace.clone();
    file.bandwidth = bandwidth;
    io::write_json(out, &file)
}

pub fn decode(model_path: &FsPath, data: &FsPath, out: &FsPath, o: &Overrides) -> Result<()> {
    let file = io::read_model(model_path)?;
    let model = file.to_model()?;
    let series = io::read_series(data)?;
    let obs = io::to_observations(&series, file.family, file.grid_points, file.bandwidth)?;
    let states = model.decode(&obs)?;
    io::write_labels(out, &states.iter().map(|s| s + 1).collect::<Vec<_>>())?;
    o.note(format!("decoded {} observations", states.len()));
    Ok(())
}

#[derive(Debug, Serialize)]
struct Metrics {
    n: usize,
    ari: f64,
    /// `mapping[k]` is the truth label matched to predicted label `k + 1`.
    mapping: Vec<usize>,
    agreement: f64,
    /// Rows are true states, columns aligned predicted states.
    confusion: Vec<Vec<usize>>,
}

pub fn evaluate(truth_path: &FsPath, pred_path: &FsPath, out: &FsPath, svg: Option<&FsPath>, o: &Overrides) -> Result<()> {
    let truth = Labeling::new(io::read_labels(truth_path)?)?;
    let pred = Labeling::new(io::read_labels(pred_path)?)?;
    let ari = adjusted_rand_index(&truth, &pred)?;
    let alignment = align_labels(&truth, &pred)?;
    let aligned = alignment.apply(&pred);
    let confusion = confusion_matrix(&truth, &aligned)?;
    let metrics = Metrics {
        n: truth.len(),
        ari,
        agreement: alignment.trace as f64 / truth.len() as f64,
        mapping: alignment.mapping.clone(),
        confusion: confusion.clone(),
    };
    io::write_json(out, &metrics)?;
    if let Some(svg) = svg {
        io::write_file(svg, &io::state_trace_svg(truth.labels(), aligned.labels()))?;
    }
    if !o.quiet {
        println!("ARI {ari:.4}");
        println!("{}", confusion_table(&confusion));
    }
    Ok(())
}

/// Plain-text confusion table with true states as rows.
fn confusion_table(confusion: &[Vec<usize>]) -> String {
    let width = confusion
        .iter()
        .flatten()
        .map(|c| c.to_string().len())
        .max()
        .unwrap_or(1)
        .max(confusion.len().to_string().len() + 1);
    let mut lines = vec![format!(
        "{:>w$} {}",
        "",
        (1..=confusion.len()).map(|j| format!("{:>width$}", format!("p{j}"))).collect::<Vec<_>>().join(" "),
        w = width + 1
    )];
    for (i, row) in confusion.iter().enumerate() {
        lines.push(format!(
            "{:>w$} {}",
            format!("t{}", i + 1),
            row.iter().map(|c| format!("{c:>width$}")).collect::<Vec<_>>().join(" "),
            w = width + 1
        ));
    }
    lines.join("\n")
}

pub fn smooth(data: &FsPath, out: &FsPath, o: &Overrides) -> Result<()> {
    let Some(bw) = o.bandwidth else {
        bail!(ConfigError("smooth needs --bandwidth".into()));
    };
    let series = io::read_series(data)?;
    let paths = io::to_paths(&series, o.grid_points.unwrap_or(DEFAULT_GRID_POINTS), Some(bw))?;
    io::write_paths(out, &paths)?;
    o.note(format!("smoothed {} paths with bandwidth {bw}", paths.len()));
    Ok(())
}
