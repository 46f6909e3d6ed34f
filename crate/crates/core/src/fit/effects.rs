use serde::{Deserialize, Serialize};

use super::FittedModel;
use crate::dist::Family;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEffect {
    pub covariate: String,
    pub d_mean: f64,
    pub d_variance: f64,
    /// Sign of the `mu`-link coefficient: +1 lengthens durations.
    pub direction: i8,
}

fn coef(c: &[f64], j: usize) -> f64 {
    c.get(j + 1).copied().unwrap_or(0.0)
}

/// Partial derivatives of the conditional mean and variance with respect to
/// each covariate at `x0`. Closed forms for the lognormal and gamma; a
/// five-point central difference of the moment functions otherwise.
pub fn unit_change_effects(model: &FittedModel, x0: &[f64]) -> Result<Vec<UnitEffect>> {
    if !model.converged {
        return Err(Error::ModelNotConverged);
    }
    let p0 = model.params_at(x0)?;
    let alpha = |j: usize| if model.link.sigma_has_covariates() { coef(&model.sigma.estimate, j) } else { 0.0 };
    let moments = |x: &[f64]| -> Result<(f64, f64)> { model.params_at(x)?.mean_variance() };
    let (m0, v0) = moments(x0)?;
    let mut out = Vec::with_capacity(x0.len());
    for j in 0..x0.len() {
        let b = coef(&model.mu.estimate, j);
        let a = alpha(j);
        let (d_mean, d_variance) = match model.family {
            Family::Lognormal => {
                let s = p0.sigma * p0.sigma;
                let ds = 2.0 * s * a;
                let base = (2.0 * p0.mu + s).exp();
                (m0 * (b + 0.5 * ds), base * (s.exp() * ds + s.exp_m1() * (2.0 * b + ds)))
            }
            Family::Gamma => (m0 * b, v0 * 2.0 * (a + b)),
            Family::Weibull | Family::GenGamma => {
                let h = 1e-3 * x0[j].abs().max(1.0);
                let at = |k: f64| -> Result<(f64, f64)> {
                    let mut x = x0.to_vec();
                    x[j] += k * h;
                    moments(&x)
                };
                let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
                let d = |f1: f64, g1: f64, f2: f64, g2: f64| (8.0 * (f1 - g1) - (f2 - g2)) / (12.0 * h);
                (d(p1.0, m1.0, p2.0, m2.0), d(p1.1, m1.1, p2.1, m2.1))
            }
        };
        out.push(UnitEffect {
            covariate: model.covariates[j].clone(),
            d_mean,
            d_variance,
            direction: if b > 0.0 { 1 } else if b < 0.0 { -1 } else { 0 },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ParamSet;
    use crate::fit::{fit_ml, Design, FitOptions, LinkMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fitted(family: Family, mode: LinkMode) -> FittedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..800).map(|_| vec![rng.random::<f64>(), rng.random::<f64>() * 2.0]).collect();
        let tau: Vec<f64> = rows
            .iter()
            .map(|r| {
                let eta = 1.0 + 0.8 * r[0] - 0.4 * r[1];
                let mu = if family == Family::Lognormal { eta } else { eta.exp() };
                ParamSet::new(family, mu, 0.5 + 0.2 * r[1], 1.5).unwrap().sample(&mut rng)
            })
            .collect();
        let d = Design::new(vec!["a".into(), "b".into()], &rows).unwrap();
        fit_ml(family, mode, &d, &tau, &FitOptions::default()).unwrap()
    }

    fn central(model: &FittedModel, x0: &[f64], j: usize, h: f64) -> (f64, f64) {
        let mut up = x0.to_vec();
        let mut dn = x0.to_vec();
        up[j] += h;
        dn[j] -= h;
        let (mu, vu) = model.params_at(&up).unwrap().mean_variance().unwrap();
        let (md, vd) = model.params_at(&dn).unwrap().mean_variance().unwrap();
        ((mu - md) / (2.0 * h), (vu - vd) / (2.0 * h))
    }

    #[test]
    fn gamma_mean_partial_closed_form() {
        let m = fitted(Family::Gamma, LinkMode::Single);
        let x0 = [0.3, 1.1];
        let e = unit_change_effects(&m, &x0).unwrap();
        let eta = m.mu.estimate[0] + m.mu.estimate[1] * x0[0] + m.mu.estimate[2] * x0[1];
        for j in 0..2 {
            assert_eq!(e[j].d_mean, m.mu.estimate[j + 1] * eta.exp());
        }
        assert_eq!((e[0].direction, e[1].direction), (1, -1));
    }

    #[test]
    fn zero_coefficient_has_zero_effect() {
        let mut m = fitted(Family::Lognormal, LinkMode::Single);
        m.mu.estimate[2] = 0.0;
        let e = unit_change_effects(&m, &[0.5, 0.5]).unwrap();
        assert_eq!((e[1].d_mean, e[1].d_variance, e[1].direction), (0.0, 0.0, 0));
    }

    #[test]
    fn partials_match_finite_differences() {
        for family in Family::ALL {
            for mode in [LinkMode::Single, LinkMode::TwoLink] {
                let m = fitted(family, mode);
                assert!(m.converged, "{family} {mode:?}: {:?}", m.diagnostics);
                let x0 = [0.4, 0.9];
                let e = unit_change_effects(&m, &x0).unwrap();
                for j in 0..2 {
                    let (dm, dv) = central(&m, &x0, j, 1e-5);
                    assert!((e[j].d_mean - dm).abs() <= 1e-6 * dm.abs().max(1e-8), "{family} {j} mean");
                    assert!((e[j].d_variance - dv).abs() <= 1e-6 * dv.abs().max(1e-8), "{family} {j} var");
                }
            }
        }
    }
}
