//! Conditional duration quantiles over one or two varying covariates.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FittedModel;
use crate::liquidity::format_value;
use crate::lob::check_header;

pub const SURFACE_CSV_HEADER: [&str; 4] = ["cov1", "cov2", "u", "quantile_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    /// One or two varying covariate names.
    pub varying: Vec<String>,
    pub grid1: Vec<f64>,
    /// Empty for a curve.
    pub grid2: Vec<f64>,
    /// Values of every covariate away from the varied ones.
    pub baseline: Vec<f64>,
    pub levels: Vec<f64>,
    /// Row-major `[grid1][grid2][level]`; a curve has a unit second axis.
    pub values: Vec<f64>,
}

impl QuantileGrid {
    pub fn get(&self, i1: usize, i2: usize, k: usize) -> f64 {
        let n2 = self.grid2.len().max(1);
        self.values[(i1 * n2 + i2) * self.levels.len() + k]
    }
}

/// Per-covariate medians of the fitting sample.
pub fn median_baseline(model: &FittedModel) -> Vec<f64> {
    model.covariate_summary.iter().map(|s| s.median).collect()
}

/// `n` evenly spaced values from the 1st to the 99th percentile.
pub fn default_grid(model: &FittedModel, covariate: usize, n: usize) -> Result<Vec<f64>> {
    let s = model
        .covariate_summary
        .get(covariate)
        .ok_or_else(|| Error::Dimension(format!("covariate index {covariate} out of range")))?;
    if n < 2 {
        return Ok(vec![s.median]);
    }
    Ok((0..n).map(|i| s.p01 + (s.p99 - s.p01) * i as f64 / (n - 1) as f64).collect())
}

fn check_inputs(model: &FittedModel, axes: &[(usize, &[f64])], levels: &[f64], allow_extrapolation: bool) -> Result<()> {
    if !model.converged {
        return Err(Error::ModelNotConverged);
    }
    if let Some(&u) = levels.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
        return Err(Error::InvalidProbability(u));
    }
    for &(j, grid) in axes {
        let s = model
            .covariate_summary
            .get(j)
            .ok_or_else(|| Error::Dimension(format!("covariate index {j} out of range")))?;
        if !allow_extrapolation {
            if let Some(v) = grid.iter().find(|v| **v < s.min || **v > s.max) {
                return Err(Error::InvalidParameter(format!(
                    "{} = {v} outside the observed range [{}, {}]; extrapolation not enabled",
                    s.name, s.min, s.max
                )));
            }
        }
    }
    Ok(())
}

fn evaluate(model: &FittedModel, x: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    let p = model.params_at(x)?;
    levels.iter().map(|&u| p.quantile(u)).collect()
}

fn baseline_or_median(model: &FittedModel, baseline: Option<&[f64]>) -> Result<Vec<f64>> {
    match baseline {
        Some(b) if b.len() == model.n_covariates() => Ok(b.to_vec()),
        Some(b) => Err(Error::Dimension(format!("baseline has {} values, model {}", b.len(), model.n_covariates()))),
        None => Ok(median_baseline(model)),
    }
}

pub fn quantile_curve(
    model: &FittedModel,
    covariate: usize,
    grid: &[f64],
    levels: &[f64],
    baseline: Option<&[f64]>,
    allow_extrapolation: bool,
) -> Result<QuantileGrid> {
    check_inputs(model, &[(covariate, grid)], levels, allow_extrapolation)?;
    let base = baseline_or_median(model, baseline)?;
    let rows: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&v| {
            let mut x = base.clone();
            x[covariate] = v;
            evaluate(model, &x, levels)
        })
        .collect::<Result<_>>()?;
    Ok(QuantileGrid {
        varying: vec![model.covariates[covariate].clone()],
        grid1: grid.to_vec(),
        grid2: Vec::new(),
        baseline: base,
        levels: levels.to_vec(),
        values: rows.concat(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn quantile_surface(
    model: &FittedModel,
    first: (usize, &[f64]),
    second: (usize, &[f64]),
    levels: &[f64],
    baseline: Option<&[f64]>,
    allow_extrapolation: bool,
) -> Result<QuantileGrid> {
    let ((j1, g1), (j2, g2)) = (first, second);
    if j1 == j2 {
        return Err(Error::InvalidParameter("surface needs two distinct covariates".into()));
    }
    check_inputs(model, &[first, second], levels, allow_extrapolation)?;
    let base = baseline_or_median(model, baseline)?;
    let cells: Vec<(f64, f64)> = g1.iter().flat_map(|&a| g2.iter().map(move |&b| (a, b))).collect();
    let rows: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(a, b)| {
            let mut x = base.clone();
            x[j1] = a;
            x[j2] = b;
            evaluate(model, &x, levels)
        })
        .collect::<Result<_>>()?;
    Ok(QuantileGrid {
        varying: vec![model.covariates[j1].clone(), model.covariates[j2].clone()],
        grid1: g1.to_vec(),
        grid2: g2.to_vec(),
        baseline: base,
        levels: levels.to_vec(),
        values: rows.concat(),
    })
}

/// `cov1,cov2,u,quantile_ms`; `cov2` is empty for a curve.
pub fn write_grid_csv<W: Write>(grid: &QuantileGrid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SURFACE_CSV_HEADER)?;
    let second: Vec<Option<f64>> =
        if grid.grid2.is_empty() { vec![None] } else { grid.grid2.iter().copied().map(Some).collect() };
    for (i1, a) in grid.grid1.iter().enumerate() {
        for (i2, b) in second.iter().enumerate() {
            for (k, u) in grid.levels.iter().enumerate() {
                w.write_record([
                    format_value(*a),
                    b.map(format_value).unwrap_or_default(),
                    format_value(*u),
                    format_value(grid.get(i1, i2, k)),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows of a grid CSV as `(cov1, cov2, u, quantile_ms)`.
pub fn read_grid_csv<R: Read>(input: R) -> Result<Vec<(f64, Option<f64>, f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut rows = reader.records();
    let header = rows.next().ok_or(Error::Empty("quantile csv"))??;
    check_header(&header, &SURFACE_CSV_HEADER)?;
    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let num = |k: usize| -> Result<f64> {
            row[k].parse().map_err(|_| Error::Parse { line, message: format!("bad {} '{}'", SURFACE_CSV_HEADER[k], &row[k]) })
        };
        let b = if row[1].is_empty() { None } else { Some(num(1)?) };
        out.push((num(0)?, b, num(2)?, num(3)?));
    }
    Ok(out)
}
