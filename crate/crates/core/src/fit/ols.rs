use log::warn;
use nalgebra::{DMatrix, DVector};

use super::{
    check_responses, inference, Coefficients, Design, FitMethod, FittedModel, LinkMode, LinkSpec, Standardized,
    MODEL_SCHEMA_VERSION,
};
use crate::dist::Family;
use crate::error::{Error, Result};

/// Least-squares fit on the standardized, alias-free design.
pub(crate) struct OlsCore {
    pub beta_std: Vec<f64>,
    /// `(RᵀR)⁻¹` on the standardized scale.
    pub xtx_inv: DMatrix<f64>,
    pub rss: f64,
}

pub(crate) fn ols_core(std: &Standardized, y: &[f64]) -> Result<OlsCore> {
    let w = std.q() + 1;
    let x = DMatrix::from_row_slice(std.n, w, &std.z);
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::NoConvergence("singular triangular factor in least squares".into()))?;
    let r_inv = r
        .try_inverse()
        .ok_or_else(|| Error::NoConvergence("singular triangular factor in least squares".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let resid = yv - x * &beta;
    Ok(OlsCore { beta_std: beta.iter().copied().collect(), xtx_inv, rss: resid.norm_squared() })
}

/// OLS of `ln τ` on an intercept and the covariates.
///
/// Linearly dependent columns are dropped (coefficient and SE zero, flagged
/// in `aliased`). `sigma` holds `ln √(RSS/n)`, the lognormal ML scale, so
/// the log-likelihood is that of the lognormal model; standard errors use
/// the unbiased `RSS/(n − p − 1)`.
pub fn fit_loglinear(design: &Design, tau: &[f64]) -> Result<FittedModel> {
    check_responses(design, tau)?;
    let std = Standardized::new(design);
    let aliased = std.aliased();
    if aliased.iter().any(|a| *a) {
        let names: Vec<&str> =
            aliased.iter().zip(design.names()).filter(|(a, _)| **a).map(|(_, n)| n.as_str()).collect();
        warn!("dropping aliased covariates: {}", names.join(", "));
    }
    let y: Vec<f64> = tau.iter().map(|t| t.ln()).collect();
    let core = ols_core(&std, &y)?;
    let n = std.n as f64;
    let df = n - (std.q() + 1) as f64;
    let s2 = core.rss / df;
    let cov = &core.xtx_inv * s2;
    let mu = std.expand(&core.beta_std, Some(&cov));
    let sigma_ml = (core.rss / n).sqrt();
    let sigma = Coefficients::scalar(sigma_ml.ln(), (0.5 / n).sqrt());
    let log_likelihood: f64 = -0.5 * n * (1.0 + (2.0 * std::f64::consts::PI * core.rss / n).ln()) - y.iter().sum::<f64>();

    let mut diagnostics = Vec::new();
    for (a, name) in aliased.iter().zip(design.names()) {
        if *a {
            diagnostics.push(format!("aliased covariate {name} dropped"));
        }
    }
    let mut model = FittedModel {
        schema_version: MODEL_SCHEMA_VERSION,
        family: Family::Lognormal,
        link: LinkSpec::new(Family::Lognormal, LinkMode::Single),
        method: FitMethod::Ols,
        covariates: design.names().to_vec(),
        mu,
        sigma,
        nu: None,
        aliased,
        n_obs: std.n,
        log_likelihood,
        deviance: -2.0 * log_likelihood,
        pseudo_r2: f64::NAN,
        converged: true,
        iterations: 0,
        max_abs_score: 0.0,
        covariate_summary: design.summaries(),
        diagnostics,
        loglik_trace: vec![log_likelihood],
    };
    model.pseudo_r2 = inference::pseudo_r2(&model, design, tau)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn noise_free_line() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0]).collect();
        let tau: Vec<f64> = rows.iter().map(|r| (2.0 + 3.0 * r[0]).exp()).collect();
        let m = fit_loglinear(&Design::new(names(1), &rows).unwrap(), &tau).unwrap();
        assert!((m.mu.estimate[0] - 2.0).abs() < 1e-10);
        assert!((m.mu.estimate[1] - 3.0).abs() < 1e-10);
        assert!((m.pseudo_r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_is_mean_log() {
        let tau = [1.0, 10.0, 100.0, 5.0];
        let m = fit_loglinear(&Design::new(vec![], &vec![vec![]; 4]).unwrap(), &tau).unwrap();
        let mean: f64 = tau.iter().map(|t: &f64| t.ln()).sum::<f64>() / 4.0;
        assert!((m.mu.estimate[0] - mean).abs() < 1e-12);
        assert!(m.pseudo_r2 <= 0.0);
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, p) = (500, 8);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|j| rng.random::<f64>() * (j + 1) as f64).collect()).collect();
        let tau: Vec<f64> = rows
            .iter()
            .map(|r| (1.0 + r.iter().enumerate().map(|(j, v)| v * (j as f64 - 3.0) * 0.1).sum::<f64>() + rng.random::<f64>()).exp())
            .collect();
        let m = fit_loglinear(&Design::new(names(p), &rows).unwrap(), &tau).unwrap();
        // X'X b = X'y solved by Cholesky
        let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        let y = DVector::from_iterator(n, tau.iter().map(|t| t.ln()));
        let b = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * y));
        for j in 0..=p {
            assert!((m.mu.estimate[j] - b[j]).abs() < 1e-9 * b[j].abs().max(1.0), "{j}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let d = Design::new(names(1), &[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert!(matches!(fit_loglinear(&d, &[1.0, -1.0, 2.0]), Err(Error::NonPositiveResponse(_))));
        assert!(fit_loglinear(&d, &[1.0, 2.0]).is_err());
        let small = Design::new(names(1), &[vec![1.0], vec![2.0]]).unwrap();
        assert!(fit_loglinear(&small, &[1.0, 2.0]).is_err());
    }
}
