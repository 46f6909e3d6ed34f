//! Best-subset search on the log-linear model and multi-day tallies.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_loglinear, wald_tests, Design, FittedModel};
use crate::liquidity::format_value;
use crate::ted::covariate_index;

pub const MAX_SUBSET_COVARIATES: usize = 30;
const TIE_TOL: f64 = 1e-10;

/// The parsimonious covariate set used for the distributional comparison.
pub const FIXED_SUBSET: [&str; 9] = ["prevTEDavg", "spreads", "prevexceed", "mobuy", "mosell", "ask", "bid", "lask", "lbid"];

/// Column indices of [`FIXED_SUBSET`] in the standard covariate order.
pub fn fixed_subset() -> Vec<usize> {
    FIXED_SUBSET.iter().map(|n| covariate_index(n).expect("fixed subset names are covariates")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub size: usize,
    /// Increasing column indices into the searched design.
    pub indices: Vec<usize>,
    pub rss: f64,
    pub r2: f64,
    pub adj_r2: f64,
    /// Wald significance at 5% of each chosen covariate in the refit.
    pub significant: Vec<bool>,
}

/// Centred cross-products of standardized covariates with `y`.
struct Gram {
    g: Vec<f64>,
    b: Vec<f64>,
    yty: f64,
    p: usize,
}

impl Gram {
    fn new(design: &Design, y: &[f64]) -> Self {
        let (n, p) = (design.n_obs(), design.n_covariates());
        let x = design.matrix();
        let ybar = y.iter().sum::<f64>() / n as f64;
        let mut cols = Vec::with_capacity(p);
        for j in 0..p {
            let c = x.column(j);
            let m = c.mean();
            let mut v: Vec<f64> = c.iter().map(|a| a - m).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|a| *a /= norm);
            }
            cols.push(v);
        }
        let yc: Vec<f64> = y.iter().map(|a| a - ybar).collect();
        let mut g = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let d: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                g[i * p + j] = d;
                g[j * p + i] = d;
            }
        }
        let b = cols.iter().map(|c| c.iter().zip(&yc).map(|(a, b)| a * b).sum()).collect();
        Gram { g, b, yty: yc.iter().map(|a| a * a).sum(), p }
    }

    /// Residual sum of squares of `y` on an intercept and `set`, by a
    /// Cholesky factorisation that skips columns dependent on earlier ones.
    fn rss(&self, set: &[usize]) -> f64 {
        let g = |a: usize, b: usize| self.g[a * self.p + b];
        // rows of the Cholesky factor for the kept columns
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(set.len());
        let mut cols: Vec<usize> = Vec::with_capacity(set.len());
        let mut w: Vec<f64> = Vec::with_capacity(set.len());
        for &i in set {
            let mut row = Vec::with_capacity(cols.len() + 1);
            for (c, &j) in cols.iter().enumerate() {
                let s = g(i, j) - row.iter().zip(&rows[c]).map(|(a, b)| a * b).sum::<f64>();
                row.push(s / rows[c][c]);
            }
            let d = g(i, i) - row.iter().map(|a| a * a).sum::<f64>();
            if d <= 1e-10 * g(i, i).max(1e-300) {
                continue;
            }
            let diag = d.sqrt();
            let wi = (self.b[i] - row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()) / diag;
            row.push(diag);
            rows.push(row);
            cols.push(i);
            w.push(wi);
        }
        (self.yty - w.iter().map(|a| a * a).sum::<f64>()).max(0.0)
    }
}

struct Search<'a> {
    gram: &'a Gram,
    order: Vec<usize>,
    best: Vec<Option<(f64, Vec<usize>)>>,
    tol: f64,
}

impl Search<'_> {
    fn offer(&mut self, set: &[usize], rss: f64) {
        let v = set.len();
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        let replace = match &self.best[v] {
            None => true,
            Some((b, s)) => rss < b - self.tol || (rss <= b + self.tol && sorted < *s),
        };
        if replace {
            self.best[v] = Some((rss, sorted));
        }
    }

    fn beaten(&self, bound: f64, sizes: std::ops::RangeInclusive<usize>) -> bool {
        sizes.into_iter().all(|v| matches!(&self.best[v], Some((b, _)) if bound > b + self.tol))
    }

    /// Visits every subset `set ∪ S` with `S ⊆ order[k..]`, pruning when
    /// the full remaining model cannot beat the current best of any size.
    fn visit(&mut self, set: &mut Vec<usize>, k: usize) {
        let p = self.order.len();
        for j in k..p {
            set.push(self.order[j]);
            let rss = self.gram.rss(set);
            self.offer(set, rss);
            if j + 1 < p {
                let mut all = set.clone();
                all.extend_from_slice(&self.order[j + 1..]);
                let bound = self.gram.rss(&all);
                if !self.beaten(bound, set.len() + 1..=set.len() + (p - j - 1)) {
                    self.visit(set, j + 1);
                }
            }
            set.pop();
        }
    }
}

/// Exact RSS-optimal covariate subsets of every size `1..=p` for the OLS
/// regression of `ln τ`, by branch and bound. Ties (relative 1e-10) go to
/// the lexicographically smallest index set.
pub fn best_subsets(design: &Design, tau: &[f64]) -> Result<Vec<SubsetResult>> {
    let p = design.n_covariates();
    if p > MAX_SUBSET_COVARIATES {
        return Err(Error::InvalidParameter(format!(
            "best-subset search limited to {MAX_SUBSET_COVARIATES} covariates, got {p}"
        )));
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    let n = design.n_obs();
    if tau.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} rows", tau.len())));
    }
    if n < p + 2 {
        return Err(Error::Dimension(format!("need more than {} observations, got {n}", p + 1)));
    }
    if let Some(&t) = tau.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::NonPositiveResponse(t));
    }
    let y: Vec<f64> = tau.iter().map(|t| t.ln()).collect();
    let gram = Gram::new(design, &y);
    // most important first: largest RSS increase when dropped from the full model
    let all: Vec<usize> = (0..p).collect();
    let full = gram.rss(&all);
    let mut order = all.clone();
    let drop_cost: Vec<f64> = (0..p)
        .map(|j| {
            let rest: Vec<usize> = all.iter().copied().filter(|&i| i != j).collect();
            gram.rss(&rest) - full
        })
        .collect();
    order.sort_by(|&a, &b| drop_cost[b].total_cmp(&drop_cost[a]).then(a.cmp(&b)));
    let mut search = Search { gram: &gram, order, best: vec![None; p + 1], tol: TIE_TOL * gram.yty.max(1e-300) };
    search.visit(&mut Vec::new(), 0);

    let sst = gram.yty;
    let mut out = Vec::with_capacity(p);
    for v in 1..=p {
        let (rss, indices) = search.best[v].clone().expect("every size is visited");
        let sub = design.select(&indices);
        let model = fit_loglinear(&sub, tau)?;
        let significant = significance(&model)?;
        let r2 = if sst > 0.0 { 1.0 - rss / sst } else { 1.0 };
        let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - v as f64 - 1.0);
        out.push(SubsetResult { size: v, indices, rss, r2, adj_r2, significant });
    }
    Ok(out)
}

/// Significance of each covariate's `mu` coefficient.
pub(crate) fn significance(model: &FittedModel) -> Result<Vec<bool>> {
    let tests = wald_tests(model)?;
    Ok(tests.iter().filter(|t| t.parameter == "mu").skip(1).map(|t| t.significant).collect())
}

/// One day's selection output and full-model fit.
#[derive(Debug, Clone)]
pub struct DaySelection {
    pub subsets: Vec<SubsetResult>,
    pub full_model: FittedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub covariate: String,
    pub pct_significant: f64,
    pub pct_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub covariates: Vec<String>,
    /// `inclusion[v − 1][j]`: share of days whose best size-`v` model
    /// contains covariate `j`.
    pub inclusion: Vec<Vec<f64>>,
    /// Share of days where `j` is in the best size-`v` model and significant.
    pub significance: Vec<Vec<f64>>,
    pub coefficients: Vec<CoefficientRow>,
    pub n_days: usize,
}

pub fn aggregate_daily(days: &[DaySelection]) -> Result<Aggregate> {
    let first = days.first().ok_or(Error::Empty("no days to aggregate"))?;
    let names = first.full_model.covariates.clone();
    let p = names.len();
    let mut inclusion = vec![vec![0.0; p]; p];
    let mut significance_m = vec![vec![0.0; p]; p];
    let mut sig_count = vec![0usize; p];
    let mut pos_count = vec![0usize; p];
    for (d, day) in days.iter().enumerate() {
        if day.full_model.covariates != names || day.subsets.len() != p {
            return Err(Error::Schema(format!("day {d} has a different covariate set")));
        }
        for s in &day.subsets {
            for (&j, &sig) in s.indices.iter().zip(&s.significant) {
                inclusion[s.size - 1][j] += 1.0;
                if sig {
                    significance_m[s.size - 1][j] += 1.0;
                }
            }
        }
        let sig = significance(&day.full_model)?;
        for j in 0..p {
            sig_count[j] += usize::from(sig[j]);
            pos_count[j] += usize::from(day.full_model.mu.estimate[j + 1] > 0.0);
        }
    }
    let nd = days.len() as f64;
    for row in inclusion.iter_mut().chain(significance_m.iter_mut()) {
        row.iter_mut().for_each(|v| *v /= nd);
    }
    let coefficients = names
        .iter()
        .enumerate()
        .map(|(j, n)| CoefficientRow {
            covariate: n.clone(),
            pct_significant: 100.0 * sig_count[j] as f64 / nd,
            pct_positive: 100.0 * pos_count[j] as f64 / nd,
        })
        .collect();
    Ok(Aggregate { covariates: names, inclusion, significance: significance_m, coefficients, n_days: days.len() })
}

/// Rows `M1..Mp`, one column per covariate.
pub fn write_heatmap_csv<W: Write>(names: &[String], matrix: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subset".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (v, row) in matrix.iter().enumerate() {
        let mut rec = vec![format!("M{}", v + 1)];
        rec.extend(row.iter().map(|x| format_value(*x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coefficient_csv<W: Write>(rows: &[CoefficientRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["covariate", "pct_significant", "pct_positive"])?;
    for r in rows {
        w.write_record([r.covariate.clone(), format_value(r.pct_significant), format_value(r.pct_positive)])?;
    }
    w.flush()?;
    Ok(())
}
