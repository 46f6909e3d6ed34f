use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ols::ols_core;
use super::{
    check_responses, inference, Coefficients, Design, FitMethod, FittedModel, LinkMode, LinkSpec, Standardized,
    MODEL_SCHEMA_VERSION,
};
use crate::dist::{Family, ParamSet};
use crate::error::{Error, Result};
use crate::special::{digamma, ln_gamma};

pub const NU_LO: f64 = 0.05;
pub const NU_HI: f64 = 20.0;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Relative rounding noise tolerated in ℓ for a score-reducing Newton step.
pub(crate) const LL_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative change in log-likelihood between accepted steps.
    pub rel_tol: f64,
    /// Largest absolute log-likelihood gradient component.
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 200, rel_tol: 1e-10, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NuTerm {
    Absent,
    Scalar,
    Linear,
}

/// Parameter vector layout: `[mu coefs | sigma coefs | nu coefs]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    family: Family,
    width: usize,
    sigma_linear: bool,
    nu: NuTerm,
}

impl Layout {
    fn new(family: Family, mode: LinkMode, q: usize) -> Self {
        let mode = mode.for_family(family);
        let nu = match (family, mode) {
            (Family::GenGamma, LinkMode::ThreeLink) => NuTerm::Linear,
            (Family::GenGamma, _) => NuTerm::Scalar,
            _ => NuTerm::Absent,
        };
        Layout { family, width: q + 1, sigma_linear: mode != LinkMode::Single, nu }
    }

    fn n_sigma(&self) -> usize {
        if self.sigma_linear {
            self.width
        } else {
            1
        }
    }

    fn n_nu(&self) -> usize {
        match self.nu {
            NuTerm::Absent => 0,
            NuTerm::Scalar => 1,
            NuTerm::Linear => self.width,
        }
    }

    fn sigma_off(&self) -> usize {
        self.width
    }

    fn nu_off(&self) -> usize {
        self.width + self.n_sigma()
    }

    fn len(&self) -> usize {
        self.nu_off() + self.n_nu()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn nu_from_phi(phi: f64) -> (f64, f64) {
    let s = logistic(phi);
    (NU_LO + (NU_HI - NU_LO) * s, (NU_HI - NU_LO) * s * (1.0 - s))
}

fn phi_from_nu(nu: f64) -> f64 {
    let s = (nu - NU_LO) / (NU_HI - NU_LO);
    (s / (1.0 - s)).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Objective<'a> {
    layout: Layout,
    std: &'a Standardized,
    tau: &'a [f64],
}

impl Objective<'_> {
    /// Parameters for row `i` and `dν/dφ` (1 for the identity link).
    fn row_params(&self, theta: &[f64], i: usize) -> Option<(ParamSet, f64)> {
        let l = &self.layout;
        let z = self.std.row(i);
        let eta = dot(&theta[..l.width], z);
        let mu = if l.family == Family::Lognormal { eta } else { eta.exp() };
        let ln_sigma = if l.sigma_linear {
            dot(&theta[l.sigma_off()..l.sigma_off() + l.width], z)
        } else {
            theta[l.sigma_off()]
        };
        let (nu, dnu) = match l.nu {
            NuTerm::Absent => (f64::NAN, 0.0),
            NuTerm::Scalar => nu_from_phi(theta[l.nu_off()]),
            NuTerm::Linear => {
                let nu = dot(&theta[l.nu_off()..], z);
                if !(nu > NU_LO && nu < NU_HI) {
                    return None;
                }
                (nu, 1.0)
            }
        };
        let p = ParamSet { family: l.family, mu, sigma: ln_sigma.exp(), nu };
        p.validate().ok()?;
        Some((p, dnu))
    }

    fn loglik(&self, theta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.std.n {
            let Some((p, _)) = self.row_params(theta, i) else {
                return f64::NEG_INFINITY;
            };
            ll += p.log_pdf_unchecked(self.tau[i]);
        }
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    fn loglik_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let l = &self.layout;
        let mut g = vec![0.0; l.len()];
        let mut ll = 0.0;
        for i in 0..self.std.n {
            let Some((p, dnu)) = self.row_params(theta, i) else {
                return (f64::NEG_INFINITY, g);
            };
            let tau = self.tau[i];
            ll += p.log_pdf_unchecked(tau);
            let s = p.score_unchecked(tau);
            let z = self.std.row(i);
            let g_mu = if l.family == Family::Lognormal { s[0] } else { s[0] * p.mu };
            let g_sigma = s[1] * p.sigma;
            for (gj, zj) in g[..l.width].iter_mut().zip(z) {
                *gj += g_mu * zj;
            }
            if l.sigma_linear {
                for (gj, zj) in g[l.sigma_off()..l.sigma_off() + l.width].iter_mut().zip(z) {
                    *gj += g_sigma * zj;
                }
            } else {
                g[l.sigma_off()] += g_sigma;
            }
            match l.nu {
                NuTerm::Absent => {}
                NuTerm::Scalar => g[l.nu_off()] += s[2] * dnu,
                NuTerm::Linear => {
                    let off = l.nu_off();
                    for (gj, zj) in g[off..].iter_mut().zip(z) {
                        *gj += s[2] * zj;
                    }
                }
            }
        }
        if !ll.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return (f64::NEG_INFINITY, g);
        }
        (ll, g)
    }

    /// Central differences of the analytic gradient, symmetrized.
    fn hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let k = theta.len();
        let mut h = DMatrix::<f64>::zeros(k, k);
        let mut work = theta.to_vec();
        for j in 0..k {
            let step = 1e-5 * theta[j].abs().max(1.0);
            work[j] = theta[j] + step;
            let (lp, gp) = self.loglik_grad(&work);
            work[j] = theta[j] - step;
            let (lm, gm) = self.loglik_grad(&work);
            work[j] = theta[j];
            if !(lp.is_finite() && lm.is_finite()) {
                return None;
            }
            for i in 0..k {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        Some((&h + h.transpose()) * 0.5)
    }
}

struct Outcome {
    theta: Vec<f64>,
    loglik: f64,
    grad: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    message: Option<String>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `(−H)⁻¹` when `−H` is positive definite.
fn neg_inverse(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let neg = -h;
    let chol = neg.cholesky()?;
    Some(chol.inverse())
}

/// Backtracking search along ascent direction `d`; returns the accepted
/// point and its log-likelihood.
fn line_search(obj: &Objective, theta: &[f64], ll: f64, g: &[f64], d: &[f64]) -> Option<(Vec<f64>, f64)> {
    let slope = dot(g, d);
    if !(slope > 0.0) {
        return None;
    }
    let mut t = 1.0;
    for _ in 0..60 {
        let cand: Vec<f64> = theta.iter().zip(d).map(|(x, di)| x + t * di).collect();
        let lc = obj.loglik(&cand);
        if lc.is_finite() && lc >= ll + 1e-4 * t * slope {
            return Some((cand, lc));
        }
        // also halves on non-finite values
        t *= 0.5;
    }
    None
}

fn maximize(obj: &Objective, theta0: Vec<f64>, opts: &FitOptions) -> Result<Outcome> {
    let (mut ll, mut g) = obj.loglik_grad(&theta0);
    if !ll.is_finite() {
        return Err(Error::NoConvergence("log-likelihood not finite at the starting values".into()));
    }
    let mut theta = theta0;
    let k = theta.len();
    let identity_scaled = |g: &[f64]| DMatrix::<f64>::identity(k, k) / max_abs(g).max(1.0);
    let mut h_inv = obj.hessian(&theta).and_then(|h| neg_inverse(&h)).unwrap_or_else(|| identity_scaled(&g));
    let mut trace = vec![ll];
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    let mut message = None;
    let mut newton = false;

    let converged_at = |rel: f64, g: &[f64]| rel < opts.rel_tol && max_abs(g) < opts.grad_tol;

    while iterations < opts.max_iter {
        if converged_at(rel_change, &g) {
            break;
        }
        iterations += 1;
        // switch to Newton steps once close, where the quadratic model is good
        if !newton && (rel_change < 1e-8 || iterations > opts.max_iter / 2) {
            newton = true;
        }
        let mut step = None;
        if newton {
            if let Some(inv) = obj.hessian(&theta).and_then(|h| neg_inverse(&h)) {
                let d = (&inv * DVector::from_column_slice(&g)).iter().copied().collect::<Vec<f64>>();
                // Near the optimum the predicted gain falls below the rounding
                // noise of ℓ, so a full Newton step that shrinks the score is
                // accepted if ℓ does not drop by more than that noise.
                let full: Vec<f64> = theta.iter().zip(&d).map(|(x, di)| x + di).collect();
                let (lf, gf) = obj.loglik_grad(&full);
                if lf.is_finite() && lf >= ll - LL_NOISE * ll.abs().max(1.0) && max_abs(&gf) < max_abs(&g) {
                    step = Some((full, lf));
                } else {
                    step = line_search(obj, &theta, ll, &g, &d);
                }
            }
        }
        if step.is_none() {
            let d: Vec<f64> = (&h_inv * DVector::from_column_slice(&g)).iter().copied().collect();
            step = line_search(obj, &theta, ll, &g, &d);
            if step.is_none() {
                h_inv = identity_scaled(&g);
                let d: Vec<f64> = (&h_inv * DVector::from_column_slice(&g)).iter().copied().collect();
                step = line_search(obj, &theta, ll, &g, &d);
            }
        }
        let Some((next, ll_next)) = step else {
            if max_abs(&g) < opts.grad_tol {
                rel_change = 0.0;
                break;
            }
            message = Some(format!("line search failed at iteration {iterations}"));
            break;
        };
        let (ll_chk, g_next) = obj.loglik_grad(&next);
        debug_assert!(ll_chk.is_finite());
        let s = DVector::from_iterator(k, next.iter().zip(&theta).map(|(a, b)| a - b));
        // gradient of −ℓ: y = ∇(−ℓ)(next) − ∇(−ℓ)(theta)
        let y = DVector::from_iterator(k, g.iter().zip(&g_next).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
        }
        rel_change = (ll_next - ll).abs() / ll.abs().max(1.0);
        theta = next;
        ll = ll_next;
        g = g_next;
        trace.push(ll);
    }
    let converged = message.is_none() && converged_at(rel_change, &g);
    if !converged && message.is_none() {
        message = Some(format!(
            "stopped after {iterations} iterations: relative change {rel_change:.3e}, max score {:.3e}",
            max_abs(&g)
        ));
    }
    debug!("ml fit: {iterations} iterations, logL {ll}, converged {converged}");
    Ok(Outcome { theta, loglik: ll, grad: g, iterations, converged, trace, message })
}

/// Moment-matched starting values on the standardized scale.
fn initial_theta(layout: &Layout, ols_beta: &[f64], resid_sd: f64) -> Vec<f64> {
    let mut theta = vec![0.0; layout.len()];
    theta[..layout.width].copy_from_slice(ols_beta);
    let s = resid_sd.max(1e-3);
    let ln_sigma = match layout.family {
        Family::Lognormal => s.ln(),
        // Var ln τ ≈ 1/α = σ² for the gamma; E ln τ = ln μ + ψ(α) − ln α
        Family::Gamma | Family::GenGamma => {
            let alpha = 1.0 / (s * s);
            theta[0] -= digamma(alpha) - alpha.ln();
            s.ln()
        }
        // Var ln τ = π²/(6σ²); E ln τ = ln μ − lnΓ(1 + 1/σ) − γ/σ
        Family::Weibull => {
            let shape = std::f64::consts::PI / (6f64.sqrt() * s);
            theta[0] += EULER_GAMMA / shape + ln_gamma(1.0 + 1.0 / shape);
            shape.ln()
        }
    };
    theta[layout.sigma_off()] = ln_sigma;
    match layout.nu {
        NuTerm::Absent => {}
        NuTerm::Scalar => theta[layout.nu_off()] = phi_from_nu(1.0),
        NuTerm::Linear => theta[layout.nu_off()] = 1.0,
    }
    theta
}

/// Re-expresses a fitted two-parameter vector as a gengamma start.
fn nest_into_gengamma(from: Family, theta: &[f64], from_layout: &Layout, to: &Layout) -> Option<Vec<f64>> {
    let mut out = vec![0.0; to.len()];
    out[..to.width].copy_from_slice(&theta[..to.width]);
    let sigma_src = &theta[from_layout.sigma_off()..from_layout.sigma_off() + from_layout.n_sigma()];
    match from {
        // exact: gengamma(μ, σ, 1) is the gamma(μ, σ)
        Family::Gamma => {
            out[to.sigma_off()..to.sigma_off() + sigma_src.len()].copy_from_slice(sigma_src);
            match to.nu {
                NuTerm::Scalar => out[to.nu_off()] = phi_from_nu(1.0),
                NuTerm::Linear => out[to.nu_off()] = 1.0,
                NuTerm::Absent => return None,
            }
        }
        // exact for a scalar shape: θ = 1, ν = shape, μ = weibull scale
        Family::Weibull => {
            let shape = sigma_src[0].exp();
            if !(shape > NU_LO && shape < NU_HI) || sigma_src.len() != 1 {
                return None;
            }
            out[0] -= ln_gamma(1.0 + 1.0 / shape);
            out[to.sigma_off()] = -shape.ln();
            match to.nu {
                NuTerm::Scalar => out[to.nu_off()] = phi_from_nu(shape),
                NuTerm::Linear => out[to.nu_off()] = shape,
                NuTerm::Absent => return None,
            }
        }
        _ => return None,
    }
    Some(out)
}

fn better(a: &Outcome, b: &Outcome) -> bool {
    match (a.converged, b.converged) {
        (true, false) => true,
        (false, true) => false,
        _ => a.loglik > b.loglik,
    }
}

/// Maximum-likelihood fit of `family` with the given link mode.
///
/// Gengamma fits start from the fitted gamma (same link mode) and from the
/// single-link weibull, both nested in it, and keep the better optimum.
pub fn fit_ml(family: Family, mode: LinkMode, design: &Design, tau: &[f64], opts: &FitOptions) -> Result<FittedModel> {
    check_responses(design, tau)?;
    let std = Standardized::new(design);
    let y: Vec<f64> = tau.iter().map(|t| t.ln()).collect();
    let core = ols_core(&std, &y)?;
    let df = (std.n - std.q() - 1) as f64;
    let resid_sd = (core.rss / df).sqrt();
    let mode = mode.for_family(family);
    let layout = Layout::new(family, mode, std.q());

    let run = |fam: Family, m: LinkMode| -> Result<(Layout, Outcome)> {
        let lay = Layout::new(fam, m, std.q());
        let mut theta0 = initial_theta(&lay, &core.beta_std, resid_sd);
        if fam == Family::Lognormal {
            // the ML scale is √(RSS/n)
            theta0[lay.sigma_off()] = (core.rss / std.n as f64).sqrt().max(1e-300).ln();
        }
        let obj = Objective { layout: lay, std: &std, tau };
        Ok((lay, maximize(&obj, theta0, opts)?))
    };

    let mut diagnostics = Vec::new();
    let outcome = if family == Family::GenGamma {
        let obj = Objective { layout, std: &std, tau };
        let mut best: Option<Outcome> = None;
        let mut starts = Vec::new();
        match run(Family::Gamma, mode) {
            Ok((lay, o)) => starts.extend(nest_into_gengamma(Family::Gamma, &o.theta, &lay, &layout)),
            Err(e) => diagnostics.push(format!("gamma start failed: {e}")),
        }
        match run(Family::Weibull, LinkMode::Single) {
            Ok((lay, o)) => starts.extend(nest_into_gengamma(Family::Weibull, &o.theta, &lay, &layout)),
            Err(e) => diagnostics.push(format!("weibull start failed: {e}")),
        }
        if starts.is_empty() {
            starts.push(initial_theta(&layout, &core.beta_std, resid_sd));
        }
        for start in starts {
            match maximize(&obj, start, opts) {
                Ok(o) => {
                    if best.as_ref().is_none_or(|b| better(&o, b)) {
                        best = Some(o);
                    }
                }
                Err(e) => diagnostics.push(e.to_string()),
            }
        }
        best.ok_or_else(|| Error::NoConvergence(diagnostics.join("; ")))?
    } else {
        run(family, mode)?.1
    };

    let obj = Objective { layout, std: &std, tau };
    build_model(family, mode, design, tau, &std, &obj, outcome, diagnostics)
}

#[allow(clippy::too_many_arguments)]
fn build_model(
    family: Family,
    mode: LinkMode,
    design: &Design,
    tau: &[f64],
    std: &Standardized,
    obj: &Objective,
    outcome: Outcome,
    mut diagnostics: Vec<String>,
) -> Result<FittedModel> {
    let layout = obj.layout;
    let mut converged = outcome.converged;
    if let Some(m) = &outcome.message {
        diagnostics.push(m.clone());
    }
    let cov = obj.hessian(&outcome.theta).and_then(|h| neg_inverse(&h));
    if cov.is_none() {
        converged = false;
        diagnostics.push("negative Hessian not positive definite; standard errors unavailable".into());
    }
    let block = |off: usize, len: usize| cov.as_ref().map(|c| c.view((off, off), (len, len)).into_owned());
    let theta = &outcome.theta;

    let mu = std.expand(&theta[..layout.width], block(0, layout.width).as_ref());
    let sigma = if layout.sigma_linear {
        std.expand(&theta[layout.sigma_off()..layout.nu_off()], block(layout.sigma_off(), layout.width).as_ref())
    } else {
        let se = block(layout.sigma_off(), 1).map_or(0.0, |c| c[(0, 0)].max(0.0).sqrt());
        Coefficients::scalar(theta[layout.sigma_off()], se)
    };
    let nu = match layout.nu {
        NuTerm::Absent => None,
        NuTerm::Scalar => {
            let phi = theta[layout.nu_off()];
            let (nu, dnu) = nu_from_phi(phi);
            let s = logistic(phi);
            if !(s > 1e-8 && s < 1.0 - 1e-8) {
                converged = false;
                diagnostics.push(format!("nu = {nu} at the bound of ({NU_LO}, {NU_HI})"));
            }
            let se = block(layout.nu_off(), 1).map_or(0.0, |c| dnu * c[(0, 0)].max(0.0).sqrt());
            Some(Coefficients::scalar(nu, se))
        }
        NuTerm::Linear => {
            let c = std.expand(&theta[layout.nu_off()..], block(layout.nu_off(), layout.width).as_ref());
            let span = NU_HI - NU_LO;
            let near_bound = (0..std.n).any(|i| {
                let v = dot(&theta[layout.nu_off()..], std.row(i));
                v - NU_LO < 1e-6 * span || NU_HI - v < 1e-6 * span
            });
            if near_bound {
                converged = false;
                diagnostics.push(format!("fitted nu reaches the bound of ({NU_LO}, {NU_HI})"));
            }
            Some(c)
        }
    };

    let mut model = FittedModel {
        schema_version: MODEL_SCHEMA_VERSION,
        family,
        link: LinkSpec::new(family, mode),
        method: FitMethod::Ml,
        covariates: design.names().to_vec(),
        mu,
        sigma,
        nu,
        aliased: std.aliased(),
        n_obs: std.n,
        log_likelihood: outcome.loglik,
        deviance: -2.0 * outcome.loglik,
        pseudo_r2: 0.0,
        converged,
        iterations: outcome.iterations,
        max_abs_score: max_abs(&outcome.grad),
        covariate_summary: design.summaries(),
        diagnostics,
        loglik_trace: outcome.trace,
    };
    model.pseudo_r2 = inference::pseudo_r2(&model, design, tau).unwrap_or(f64::NAN);
    if !model.pseudo_r2.is_finite() {
        model.pseudo_r2 = 0.0;
        model.diagnostics.push("pseudo R² undefined at the fitted parameters".into());
    }
    Ok(model)
}
