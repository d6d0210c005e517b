//! File formats: long-format path CSV, label CSV, model JSON and the SVG
//! state trace.

use crate::config::ConfigError;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path as FsPath;
use thmm::emissions::{
    BmDriftEmission, EmissionModel, EuclideanEmission, Family, FbmDriftEmission,
    NonparametricEmission, OuEmission, Precision,
};
use thmm::path_grid::{make_path, Grid, KernelSmoother, Path, SobolevOrder};
use thmm::{MarkovChain, Observations, ThmmModel};

fn parse_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

// ---------------------------------------------------------------------------
// Paths CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
struct PathRow {
    path_id: usize,
    tau: f64,
    value: f64,
}

/// One observation as read from disk, before regridding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Reads `path_id,tau,value` rows. Ids must run 1, 2, ... in order.
pub fn read_series(path: &FsPath) -> Result<Vec<RawSeries>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| parse_error(format!("cannot read {}: {e}", path.display())))?;
    let mut out: Vec<RawSeries> = Vec::new();
    for (line, row) in reader.deserialize::<PathRow>().enumerate() {
        let row = row.map_err(|e| parse_error(format!("{}: {e}", path.display())))?;
        if row.path_id == out.len() + 1 {
            out.push(RawSeries { times: vec![], values: vec![] });
        } else if row.path_id != out.len() {
            bail!(parse_error(format!(
                "{}: data row {}: path_id {} out of order (expected {} or {})",
                path.display(),
                line + 1,
                row.path_id,
                out.len(),
                out.len() + 1
            )));
        }
        let s = out.last_mut().expect("pushed above");
        s.times.push(row.tau);
        s.values.push(row.value);
    }
    if out.is_empty() {
        bail!(parse_error(format!("{}: no observations", path.display())));
    }
    Ok(out)
}

/// Resamples every series onto a uniform grid, optionally smoothing.
pub fn to_paths(series: &[RawSeries], grid_points: usize, bandwidth: Option<f64>) -> Result<Vec<Path>> {
    let smoother = bandwidth
        .map(|bw| KernelSmoother::new(Grid::new(grid_points)?, bw))
        .transpose()?;
    series
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let p = make_path(&s.times, &s.values, grid_points).with_context(|| format!("path_id {}", t + 1))?;
            Ok(match &smoother {
                Some(sm) => sm.apply(&p)?,
                None => p,
            })
        })
        .collect()
}

/// Observations for a family: vectors for the Euclidean family (the values
/// of each series in `tau` order), paths otherwise.
pub fn to_observations(series: &[RawSeries], family: Family, grid_points: usize, bandwidth: Option<f64>) -> Result<Observations> {
    if family == Family::Euclidean {
        return Ok(Observations::vectors(series.iter().map(|s| s.values.clone()).collect())?);
    }
    Ok(Observations::paths(to_paths(series, grid_points, bandwidth)?)?)
}

pub fn write_paths(path: &FsPath, paths: &[Path]) -> Result<()> {
    let mut out = String::from("path_id,tau,value\n");
    for (t, p) in paths.iter().enumerate() {
        for (tau, v) in p.grid().nodes().zip(p.values()) {
            writeln!(out, "{},{},{}", t + 1, tau, v).expect("write to string");
        }
    }
    write_file(path, &out)
}

pub fn write_file(path: &FsPath, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

// ---------------------------------------------------------------------------
// Labels CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct LabelRow {
    path_id: usize,
    state: usize,
}

pub fn read_labels(path: &FsPath) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| parse_error(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| parse_error(format!("{}: {e}", path.display())))?;
        if row.path_id != out.len() + 1 {
            bail!(parse_error(format!(
                "{}: expected path_id {}, found {}",
                path.display(),
                out.len() + 1,
                row.path_id
            )));
        }
        if row.state == 0 {
            bail!(parse_error(format!("{}: states are 1-based", path.display())));
        }
        out.push(row.state);
    }
    if out.is_empty() {
        bail!(parse_error(format!("{}: no labels", path.display())));
    }
    Ok(out)
}

/// Writes 1-based labels.
pub fn write_labels(path: &FsPath, labels: &[usize]) -> Result<()> {
    let mut out = String::from("path_id,state\n");
    for (t, s) in labels.iter().enumerate() {
        writeln!(out, "{},{}", t + 1, s).expect("write to string");
    }
    write_file(path, &out)
}

// ---------------------------------------------------------------------------
// Model JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hurst: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub family: Family,
    pub p: usize,
    /// Grid resolution of path families; vector dimension for Euclidean.
    pub grid_points: usize,
    pub eta: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub states: Vec<StateParams>,
    pub loglik: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u8>,
    /// Smoothing applied to the data before fitting; decoding repeats it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loglik_trace: Vec<f64>,
}

impl ModelFile {
    pub fn from_model(model: &ThmmModel, grid_points: usize) -> Self {
        let mut order = None;
        let states = match &model.emissions {
            EmissionModel::Euclidean { precision, states } => states
                .iter()
                .map(|s| StateParams {
                    mean: Some(s.mean.clone()),
                    precision: Some(precision.rows().to_vec()),
                    ..Default::default()
                })
                .collect(),
            EmissionModel::BmDrift(s) => s
                .iter()
                .map(|e| StateParams { drift: Some(e.drift), ..Default::default() })
                .collect(),
            EmissionModel::Ou(s) => s
                .iter()
                .map(|e| StateParams { b0: Some(e.b0()), b1: Some(e.b1()), ..Default::default() })
                .collect(),
            EmissionModel::FbmDrift(s) => s
                .iter()
                .map(|e| StateParams { drift: Some(e.drift), hurst: Some(e.hurst()), ..Default::default() })
                .collect(),
            EmissionModel::Nonparametric(s) => {
                order = s.first().map(|e| e.order.as_u8());
                s.iter()
                    .map(|e| StateParams { mean: Some(e.mean_path.values().to_vec()), ..Default::default() })
                    .collect()
            }
        };
        ModelFile {
            family: model.emissions.family(),
            p: model.n_states(),
            grid_points,
            eta: model.chain.eta().to_vec(),
            trans: model.chain.trans().to_vec(),
            states,
            loglik: None,
            order,
            bandwidth: None,
            loglik_trace: Vec::new(),
        }
    }

    pub fn to_model(&self) -> Result<ThmmModel> {
        if self.states.len() != self.p {
            bail!(parse_error(format!("model declares p = {} but lists {} states", self.p, self.states.len())));
        }
        let need = |v: Option<f64>, key: &str, j: usize| {
            v.ok_or_else(|| parse_error(format!("model state {}: missing '{key}' for family {}", j + 1, self.family)))
        };
        let emissions = match self.family {
            Family::BmDrift => EmissionModel::BmDrift(
                self.states
                    .iter()
                    .enumerate()
                    .map(|(j, s)| Ok(BmDriftEmission { drift: need(s.drift, "drift", j)? }))
                    .collect::<Result<_>>()?,
            ),
            Family::Ou => EmissionModel::Ou(
                self.states
                    .iter()
                    .enumerate()
                    .map(|(j, s)| Ok(OuEmission::new(need(s.b0, "b0", j)?, need(s.b1, "b1", j)?)?))
                    .collect::<Result<_>>()?,
            ),
            Family::FbmDrift => EmissionModel::FbmDrift(
                self.states
                    .iter()
                    .enumerate()
                    .map(|(j, s)| Ok(FbmDriftEmission::new(need(s.drift, "drift", j)?, need(s.hurst, "hurst", j)?)?))
                    .collect::<Result<_>>()?,
            ),
            Family::Nonparametric => {
                let order = SobolevOrder::try_from(self.order.unwrap_or(1))?;
                let grid = Grid::new(self.grid_points)?;
                EmissionModel::Nonparametric(
                    self.states
                        .iter()
                        .enumerate()
                        .map(|(j, s)| {
                            let mean = s.mean.clone().ok_or_else(|| parse_error(format!("model state {}: missing 'mean'", j + 1)))?;
                            Ok(NonparametricEmission { mean_path: Path::new(grid, mean)?, order })
                        })
                        .collect::<Result<_>>()?,
                )
            }
            Family::Euclidean => {
                let precision = self
                    .states
                    .first()
                    .and_then(|s| s.precision.clone())
                    .ok_or_else(|| parse_error("model state 1: missing 'precision'"))?;
                EmissionModel::Euclidean {
                    precision: Precision::new(precision)?,
                    states: self
                        .states
                        .iter()
                        .enumerate()
                        .map(|(j, s)| {
                            let mean = s.mean.clone().ok_or_else(|| parse_error(format!("model state {}: missing 'mean'", j + 1)))?;
                            Ok(EuclideanEmission { mean })
                        })
                        .collect::<Result<_>>()?,
                }
            }
        };
        Ok(ThmmModel::new(MarkovChain::new(self.eta.clone(), self.trans.clone())?, emissions)?)
    }
}

pub fn read_model(path: &FsPath) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| parse_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| parse_error(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

// ---------------------------------------------------------------------------
// SVG state trace
// ---------------------------------------------------------------------------

/// Two stacked step plots of state against time: truth on top, the aligned
/// prediction below.
pub fn state_trace_svg(truth: &[usize], pred: &[usize]) -> String {
    const WIDTH: f64 = 900.0;
    const BAND: f64 = 140.0;
    const LEFT: f64 = 80.0;
    const PAD: f64 = 20.0;
    let n = truth.len().max(1) as f64;
    let m = truth.iter().chain(pred).copied().max().unwrap_or(1).max(2);
    let x = |t: f64| LEFT + t * (WIDTH - LEFT - PAD) / n;
    let height = 2.0 * BAND + 3.0 * PAD;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (band, (name, labels, colour)) in [("truth", truth, "#1f77b4"), ("predicted", pred, "#d62728")].iter().enumerate() {
        let top = PAD + band as f64 * (BAND + PAD);
        let y = |s: usize| top + BAND - (s - 1) as f64 * BAND / (m - 1) as f64;
        writeln!(
            svg,
            r##"<rect x="{LEFT}" y="{top}" width="{}" height="{BAND}" fill="none" stroke="#999"/>"##,
            WIDTH - LEFT - PAD
        )
        .unwrap();
        writeln!(svg, r#"<text x="8" y="{}" font-family="sans-serif" font-size="14">{name}</text>"#, top + BAND / 2.0).unwrap();
        for s in 1..=m {
            writeln!(
                svg,
                r##"<text x="{}" y="{}" font-family="sans-serif" font-size="10" fill="#666">{s}</text>"##,
                LEFT - 14.0,
                y(s) + 3.0
            )
            .unwrap();
        }
        let mut points = String::new();
        for (t, &s) in labels.iter().enumerate() {
            write!(points, "{:.2},{:.2} {:.2},{:.2} ", x(t as f64), y(s), x(t as f64 + 1.0), y(s)).unwrap();
        }
        writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            points.trim_end()
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_trace_per_band() {
        let svg = state_trace_svg(&[1, 1, 2], &[1, 2, 2]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn model_file_round_trips() {
        let chain = MarkovChain::new(vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let model = ThmmModel::new(
            chain,
            EmissionModel::Ou(vec![OuEmission::new(1.0, 2.0).unwrap(), OuEmission::new(-3.0, 4.0).unwrap()]),
        )
        .unwrap();
        let file = ModelFile::from_model(&model, 201);
        let text = serde_json::to_string(&file).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_model().unwrap(), model);
    }
}
