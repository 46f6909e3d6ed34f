//! Duration regressions: OLS on the log scale and maximum likelihood with
//! per-parameter links.
//!
//! Links: `mu` is identity for the lognormal (log-scale location) and log
//! otherwise; `sigma` is log; the gengamma `nu` is identity when it has
//! covariates. In single-link mode `sigma` and `nu` are scalars and `nu` is
//! held inside `(NU_LO, NU_HI)` by a scaled logistic.

mod effects;
mod inference;
mod ml;
mod ols;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::{Family, ParamSet};
use crate::error::{Error, Result};
use crate::liquidity::quantile_sorted;

pub use effects::{unit_change_effects, UnitEffect};
pub use inference::{pseudo_r2, wald_tests, WaldTest};
pub use ml::{fit_ml, FitOptions, NU_HI, NU_LO};
pub use ols::fit_loglinear;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkMode {
    /// Covariates enter `mu` only.
    Single,
    /// Covariates enter `mu` and `sigma`.
    TwoLink,
    /// Covariates enter every parameter (gengamma only).
    ThreeLink,
}

impl LinkMode {
    pub fn name(self) -> &'static str {
        match self {
            LinkMode::Single => "single",
            LinkMode::TwoLink => "two-link",
            LinkMode::ThreeLink => "three-link",
        }
    }

    /// Three links collapse to two for two-parameter families.
    pub fn for_family(self, family: Family) -> LinkMode {
        match (self, family) {
            (LinkMode::ThreeLink, f) if f != Family::GenGamma => LinkMode::TwoLink,
            (m, _) => m,
        }
    }
}

impl std::str::FromStr for LinkMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(LinkMode::Single),
            "two-link" => Ok(LinkMode::TwoLink),
            "three-link" => Ok(LinkMode::ThreeLink),
            _ => Err(Error::InvalidParameter(format!("unknown link mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    Identity,
    Log,
    /// `NU_LO + (NU_HI − NU_LO) / (1 + e^{−φ})`, scalar only.
    BoundedLogistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub mode: LinkMode,
    pub mu: Link,
    pub sigma: Link,
    pub nu: Option<Link>,
}

impl LinkSpec {
    pub fn new(family: Family, mode: LinkMode) -> Self {
        let mode = mode.for_family(family);
        let nu = (family == Family::GenGamma).then_some(match mode {
            LinkMode::ThreeLink => Link::Identity,
            _ => Link::BoundedLogistic,
        });
        LinkSpec {
            mode,
            mu: if family == Family::Lognormal { Link::Identity } else { Link::Log },
            sigma: Link::Log,
            nu,
        }
    }

    pub fn sigma_has_covariates(&self) -> bool {
        self.mode != LinkMode::Single
    }

    pub fn nu_has_covariates(&self) -> bool {
        self.mode == LinkMode::ThreeLink
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Ols,
    Ml,
}

/// Estimates and standard errors for one distribution parameter, intercept
/// first. A zero standard error marks a term that cannot be tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
}

impl Coefficients {
    fn scalar(estimate: f64, se: f64) -> Self {
        Coefficients { estimate: vec![estimate], se: vec![se] }
    }

    fn linear(&self, x: &[f64]) -> f64 {
        self.estimate[0] + self.estimate[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub p01: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema_version: u32,
    pub family: Family,
    pub link: LinkSpec,
    pub method: FitMethod,
    pub covariates: Vec<String>,
    /// Coefficients of the `mu` link.
    pub mu: Coefficients,
    /// Coefficients of `ln sigma`; a single entry in single-link mode.
    pub sigma: Coefficients,
    /// Gengamma only: `nu` itself in single/two-link mode, identity-link
    /// coefficients in three-link mode.
    pub nu: Option<Coefficients>,
    /// Covariates dropped as linearly dependent on earlier columns.
    pub aliased: Vec<bool>,
    pub n_obs: usize,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub pseudo_r2: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_abs_score: f64,
    pub covariate_summary: Vec<CovariateSummary>,
    pub diagnostics: Vec<String>,
    /// Log-likelihood after every accepted optimizer step.
    #[serde(skip)]
    pub loglik_trace: Vec<f64>,
}

impl FittedModel {
    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    /// Number of non-aliased covariates in the `mu` link.
    pub fn n_active(&self) -> usize {
        self.aliased.iter().filter(|a| !**a).count()
    }

    /// Distribution parameters at covariate vector `x` (no intercept).
    pub fn params_at(&self, x: &[f64]) -> Result<ParamSet> {
        if x.len() != self.n_covariates() {
            return Err(Error::Dimension(format!(
                "model has {} covariates, got {}",
                self.n_covariates(),
                x.len()
            )));
        }
        let eta = self.mu.linear(x);
        let mu = if self.family == Family::Lognormal { eta } else { eta.exp() };
        let ln_sigma = if self.link.sigma_has_covariates() { self.sigma.linear(x) } else { self.sigma.estimate[0] };
        let nu = match &self.nu {
            Some(c) if self.link.nu_has_covariates() => c.linear(x),
            Some(c) => c.estimate[0],
            None => f64::NAN,
        };
        ParamSet::new(self.family, mu, ln_sigma.exp(), nu)
    }

    /// Location parameter `mu` for every row.
    pub fn fitted_values(&self, design: &Design) -> Result<Vec<f64>> {
        (0..design.n_obs()).map(|i| self.params_at(&design.row(i)).map(|p| p.mu)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        match v.get("schema_version").and_then(|x| x.as_u64()) {
            Some(ver) if ver == u64::from(MODEL_SCHEMA_VERSION) => {}
            Some(ver) => return Err(Error::Schema(format!("model schema_version {ver}, expected {MODEL_SCHEMA_VERSION}"))),
            None => return Err(Error::Schema("model JSON lacks schema_version".into())),
        }
        let m: FittedModel = serde_json::from_value(v)?;
        if m.link != LinkSpec::new(m.family, m.link.mode) {
            return Err(Error::Schema(format!("links {:?} do not match family {}", m.link, m.family)));
        }
        Ok(m)
    }
}

/// Covariate matrix without the intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    x: DMatrix<f64>,
}

impl Design {
    pub fn new(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(Error::Dimension(format!("row {i} has {} values, expected {p}", r.len())));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::from_matrix(names, x)
    }

    pub fn from_matrix(names: Vec<String>, x: DMatrix<f64>) -> Result<Self> {
        if names.len() != x.ncols() {
            return Err(Error::Dimension(format!("{} names for {} columns", names.len(), x.ncols())));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite covariate value {v}")));
        }
        Ok(Design { names, x })
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.column(j).iter().copied().collect()
    }

    pub fn select(&self, columns: &[usize]) -> Design {
        Design {
            names: columns.iter().map(|&j| self.names[j].clone()).collect(),
            x: self.x.select_columns(columns),
        }
    }

    pub fn scale_column(&mut self, j: usize, factor: f64) {
        self.x.column_mut(j).scale_mut(factor);
    }

    pub fn summaries(&self) -> Vec<CovariateSummary> {
        (0..self.n_covariates())
            .map(|j| {
                let mut col = self.column(j);
                col.sort_by(f64::total_cmp);
                let q = |u| if col.is_empty() { 0.0 } else { quantile_sorted(&col, u) };
                CovariateSummary {
                    name: self.names[j].clone(),
                    min: col.first().copied().unwrap_or(0.0),
                    max: col.last().copied().unwrap_or(0.0),
                    median: q(0.5),
                    p01: q(0.01),
                    p99: q(0.99),
                }
            })
            .collect()
    }
}

pub(crate) fn check_responses(design: &Design, tau: &[f64]) -> Result<()> {
    if tau.len() != design.n_obs() {
        return Err(Error::Dimension(format!("{} responses for {} rows", tau.len(), design.n_obs())));
    }
    if let Some(&t) = tau.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::NonPositiveResponse(t));
    }
    let need = design.n_covariates() + 2;
    if tau.len() < need {
        return Err(Error::Dimension(format!(
            "need more than p + 1 = {} observations, got {}",
            need - 1,
            tau.len()
        )));
    }
    Ok(())
}

/// Covariates centred and scaled to unit sample SD, with the columns that
/// are linearly dependent on the intercept and earlier columns removed.
pub(crate) struct Standardized {
    /// Row-major `n × (q + 1)` with the intercept first.
    pub z: Vec<f64>,
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub n: usize,
    pub p: usize,
}

impl Standardized {
    pub fn new(design: &Design) -> Self {
        let (n, p) = (design.n_obs(), design.n_covariates());
        let x = design.matrix();
        let mut means = vec![0.0; p];
        let mut scales = vec![1.0; p];
        let mut full = DMatrix::<f64>::zeros(n, p + 1);
        full.column_mut(0).fill(1.0);
        for j in 0..p {
            let col = x.column(j);
            let m = col.mean();
            let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
            let sd = (ss / (n.max(2) - 1) as f64).sqrt();
            means[j] = m;
            // a constant column stays zero and is caught as aliased below
            if sd > 0.0 && sd.is_finite() {
                scales[j] = sd;
                for i in 0..n {
                    full[(i, j + 1)] = (x[(i, j)] - m) / sd;
                }
            }
        }
        let r = full.clone().qr().r();
        let tol = 1e-9 * (n as f64).sqrt();
        let kept: Vec<usize> = (0..p).filter(|&j| r[(j + 1, j + 1)].abs() > tol).collect();
        let q = kept.len();
        let mut z = Vec::with_capacity(n * (q + 1));
        for i in 0..n {
            z.push(1.0);
            z.extend(kept.iter().map(|&j| full[(i, j + 1)]));
        }
        Standardized { z, kept, means, scales, n, p }
    }

    pub fn q(&self) -> usize {
        self.kept.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.q() + 1;
        &self.z[i * w..(i + 1) * w]
    }

    /// Maps standardized linear-predictor coefficients to the original
    /// covariates: returns `T` with `b_orig[kept] = T b_std`.
    pub fn to_original(&self) -> DMatrix<f64> {
        let q = self.q();
        let mut t = DMatrix::<f64>::zeros(q + 1, q + 1);
        t[(0, 0)] = 1.0;
        for (k, &j) in self.kept.iter().enumerate() {
            t[(0, k + 1)] = -self.means[j] / self.scales[j];
            t[(k + 1, k + 1)] = 1.0 / self.scales[j];
        }
        t
    }

    /// Expands kept-column coefficients and covariance to a full
    /// `(p + 1)`-vector, zeros at aliased columns.
    pub fn expand(&self, b_std: &[f64], cov_std: Option<&DMatrix<f64>>) -> Coefficients {
        let t = self.to_original();
        let b = &t * nalgebra::DVector::from_column_slice(b_std);
        let se: Vec<f64> = match cov_std {
            Some(c) => {
                let v = &t * c * t.transpose();
                (0..=self.q()).map(|k| v[(k, k)].max(0.0).sqrt()).collect()
            }
            None => vec![0.0; self.q() + 1],
        };
        let mut estimate = vec![0.0; self.p + 1];
        let mut full_se = vec![0.0; self.p + 1];
        estimate[0] = b[0];
        full_se[0] = se[0];
        for (k, &j) in self.kept.iter().enumerate() {
            estimate[j + 1] = b[k + 1];
            full_se[j + 1] = se[k + 1];
        }
        Coefficients { estimate, se: full_se }
    }

    pub fn aliased(&self) -> Vec<bool> {
        let mut a = vec![true; self.p];
        for &j in &self.kept {
            a[j] = false;
        }
        a
    }
}


#[cfg(test)]
mod json_tests {
    use super::*;

    #[test]
    fn model_json_round_trip_and_version_check() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, (i % 3) as f64]).collect();
        let tau: Vec<f64> = rows.iter().enumerate().map(|(i, r)| (1.0 + 0.2 * r[0] + 0.01 * i as f64).exp()).collect();
        let d = Design::new(vec!["a".into(), "b".into()], &rows).unwrap();
        let m = fit_ml(Family::GenGamma, LinkMode::TwoLink, &d, &tau, &FitOptions::default()).unwrap();
        let mut back = FittedModel::from_json(&m.to_json().unwrap()).unwrap();
        back.loglik_trace = m.loglik_trace.clone();
        assert_eq!(back, m);
        let old = m.to_json().unwrap().replace("\"schema_version\": 1", "\"schema_version\": 0");
        assert!(matches!(FittedModel::from_json(&old), Err(Error::Schema(_))));
    }

    #[test]
    fn wald_examples() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let tau: Vec<f64> = (0..50).map(|i| (1.0 + ((i * 7919) % 13) as f64 * 0.1).exp()).collect();
        let d = Design::new(vec!["a".into()], &rows).unwrap();
        let mut m = fit_ml(Family::Lognormal, LinkMode::Single, &d, &tau, &FitOptions::default()).unwrap();
        m.mu.estimate[1] = 0.0;
        m.mu.se[1] = 1.0;
        let w = wald_tests(&m).unwrap();
        assert!(!w[1].significant);
        m.mu.estimate[1] = 1.96;
        assert!(wald_tests(&m).unwrap()[1].significant);
        m.mu.se[1] = 0.0;
        let w = wald_tests(&m).unwrap();
        assert!(w[1].statistic.is_none() && !w[1].significant);
    }
}
