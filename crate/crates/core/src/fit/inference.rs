use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use super::{Design, FitMethod, FittedModel};
use crate::error::{Error, Result};

const LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    /// `mu`, `sigma` or `nu`.
    pub parameter: String,
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    /// None when the standard error is zero (aliased or unavailable).
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

/// Two-sided Student-t tail probability `P(|T_df| ≥ |t|)`.
pub(crate) fn student_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(0.5 * df, 0.5, df / (df + t * t))
}

pub(crate) fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Per-coefficient `t = β̂/SE` with a two-sided test at 5%: Student-t with
/// `n − p − 1` degrees of freedom for OLS fits, standard normal otherwise.
pub fn wald_tests(model: &FittedModel) -> Result<Vec<WaldTest>> {
    if !model.converged {
        return Err(Error::ModelNotConverged);
    }
    let df = (model.n_obs - model.n_active() - 1) as f64;
    let terms: Vec<String> = std::iter::once("(Intercept)".to_string()).chain(model.covariates.iter().cloned()).collect();
    let mut out = Vec::new();
    let mut push = |parameter: &str, est: &[f64], se: &[f64], names: &[String]| {
        for ((b, s), term) in est.iter().zip(se).zip(names) {
            let (statistic, p_value) = if *s > 0.0 {
                let t = b / s;
                let p = match model.method {
                    FitMethod::Ols => student_two_sided(t, df),
                    FitMethod::Ml => normal_two_sided(t),
                };
                (Some(t), Some(p))
            } else {
                (None, None)
            };
            out.push(WaldTest {
                parameter: parameter.to_string(),
                term: term.clone(),
                estimate: *b,
                se: *s,
                statistic,
                p_value,
                significant: p_value.is_some_and(|p| p < LEVEL),
            });
        }
    };
    push("mu", &model.mu.estimate, &model.mu.se, &terms);
    let scalar = ["(Intercept)".to_string()];
    let names = |len: usize| if len == 1 { &scalar[..] } else { &terms[..] };
    push("sigma", &model.sigma.estimate, &model.sigma.se, names(model.sigma.estimate.len()));
    if let Some(nu) = &model.nu {
        push("nu", &nu.estimate, &nu.se, names(nu.estimate.len()));
    }
    Ok(out)
}

/// Adjusted R² on the log scale: `R²` between `ln τ` and the fitted
/// `E[ln τ | x]`, penalised as `1 − (1 − R²)(n − 1)/(n − p − 1)`.
pub fn pseudo_r2(model: &FittedModel, design: &Design, tau: &[f64]) -> Result<f64> {
    if tau.len() != design.n_obs() {
        return Err(Error::Dimension(format!("{} responses for {} rows", tau.len(), design.n_obs())));
    }
    let n = tau.len();
    let y: Vec<f64> = tau.iter().map(|t| t.ln()).collect();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut sst = 0.0;
    let mut ssr = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let m = model.params_at(&design.row(i))?.mean_log();
        ssr += (yi - m) * (yi - m);
        sst += (yi - ybar) * (yi - ybar);
    }
    let p = model.n_active() as f64;
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else if ssr == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    Ok(1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p - 1.0))
}
