//! Response distributions for positive durations.
//!
//! Every family is parameterised by a location `mu`, a scale `sigma` and (for
//! the generalised gamma only) a shape `nu`:
//!
//! * lognormal: `ln τ ~ Normal(mu, sigma)`;
//! * gamma: mean `mu`, variance `sigma² mu²`;
//! * weibull: shape `sigma`, scale `mu / Γ(1/sigma + 1)` so that the mean is `mu`;
//! * gengamma: `θ = 1/(sigma² nu²)` and `θ (τ/mu)^nu ~ Gamma(θ, 1)`.
//!
//! The generalised gamma also has the natural `(b, a, k)` form with density
//! `b τ^{bk−1} exp(−(τ/a)^b) / (Γ(k) a^{bk})`, related by `b = nu`,
//! `a = mu θ^{−1/nu}`, `k = θ`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaSampler, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{
    digamma, gamma_p, gamma_p_inv, gamma_q, ln_gamma, ln_gamma_scaled_residual, normal_cdf,
    normal_quantile,
};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lognormal,
    Gamma,
    Weibull,
    #[serde(rename = "gengamma")]
    GenGamma,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Lognormal, Family::Gamma, Family::Weibull, Family::GenGamma];

    pub fn name(self) -> &'static str {
        match self {
            Family::Lognormal => "lognormal",
            Family::Gamma => "gamma",
            Family::Weibull => "weibull",
            Family::GenGamma => "gengamma",
        }
    }

    /// Number of distribution parameters (2 or 3).
    pub fn n_params(self) -> usize {
        match self {
            Family::GenGamma => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lognormal" | "lno" => Ok(Family::Lognormal),
            "gamma" | "ga" => Ok(Family::Gamma),
            "weibull" | "wei" => Ok(Family::Weibull),
            "gengamma" | "gg" | "generalised_gamma" | "generalized_gamma" => Ok(Family::GenGamma),
            other => Err(Error::InvalidParameter(format!("unknown family '{other}'"))),
        }
    }
}

/// Distribution parameters in the `(mu, sigma, nu)` form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub family: Family,
    pub mu: f64,
    pub sigma: f64,
    /// Only meaningful for [`Family::GenGamma`]; ignored otherwise.
    pub nu: f64,
}

/// Natural `(b, a, k)` parameterisation of the generalised gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgdNatural {
    pub b: f64,
    pub a: f64,
    pub k: f64,
}

impl GgdNatural {
    pub fn new(b: f64, a: f64, k: f64) -> Result<Self> {
        if !(b > 0.0 && a > 0.0 && k > 0.0) || !(b.is_finite() && a.is_finite() && k.is_finite()) {
            return Err(Error::InvalidParameter(format!("gengamma requires b, a, k > 0 (got {b}, {a}, {k})")));
        }
        Ok(GgdNatural { b, a, k })
    }

    pub fn to_params(self) -> ParamSet {
        let nu = self.b;
        let theta = self.k;
        let sigma = 1.0 / (nu * theta.sqrt());
        let mu = self.a * theta.powf(1.0 / nu);
        ParamSet { family: Family::GenGamma, mu, sigma, nu }
    }
}

impl ParamSet {
    pub fn new(family: Family, mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        let p = ParamSet { family, mu, sigma, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(Family::Lognormal, mu, sigma, f64::NAN)
    }

    pub fn gamma(mean: f64, sigma: f64) -> Result<Self> {
        Self::new(Family::Gamma, mean, sigma, f64::NAN)
    }

    pub fn weibull(mean: f64, shape: f64) -> Result<Self> {
        Self::new(Family::Weibull, mean, shape, f64::NAN)
    }

    pub fn gengamma(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        Self::new(Family::GenGamma, mu, sigma, nu)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.family {
            Family::Lognormal => self.mu.is_finite() && self.sigma > 0.0 && self.sigma.is_finite(),
            Family::Gamma | Family::Weibull => {
                self.mu > 0.0 && self.mu.is_finite() && self.sigma > 0.0 && self.sigma.is_finite()
            }
            Family::GenGamma => {
                let theta = self.theta();
                self.mu > 0.0
                    && self.mu.is_finite()
                    && self.sigma > 0.0
                    && self.sigma.is_finite()
                    && self.nu != 0.0
                    && self.nu.is_finite()
                    && theta > 0.0
                    && theta.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{} mu={} sigma={} nu={}",
                self.family, self.mu, self.sigma, self.nu
            )))
        }
    }

    /// `θ = 1/(σ²ν²)` for the generalised gamma.
    pub fn theta(&self) -> f64 {
        1.0 / (self.sigma * self.sigma * self.nu * self.nu)
    }

    /// Natural `(b, a, k)` form; defined for the generalised gamma with `nu > 0`.
    pub fn to_natural(&self) -> Result<GgdNatural> {
        if self.family != Family::GenGamma {
            return Err(Error::InvalidParameter(format!("{} has no (b, a, k) form", self.family)));
        }
        self.validate()?;
        if self.nu < 0.0 {
            return Err(Error::InvalidParameter("natural form requires nu > 0".into()));
        }
        let theta = self.theta();
        GgdNatural::new(self.nu, self.mu * theta.powf(-1.0 / self.nu), theta)
    }

    /// Weibull scale `β = mu / Γ(1/σ + 1)`.
    fn weibull_scale(&self) -> f64 {
        (self.mu.ln() - ln_gamma(1.0 / self.sigma + 1.0)).exp()
    }

    pub fn log_pdf(&self, tau: f64) -> Result<f64> {
        self.validate()?;
        check_response(tau)?;
        Ok(self.log_pdf_unchecked(tau))
    }

    pub fn pdf(&self, tau: f64) -> Result<f64> {
        self.log_pdf(tau).map(f64::exp)
    }

    pub(crate) fn log_pdf_unchecked(&self, tau: f64) -> f64 {
        let ln_tau = tau.ln();
        match self.family {
            Family::Lognormal => {
                let z = (ln_tau - self.mu) / self.sigma;
                -ln_tau - self.sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
            }
            Family::Gamma => {
                let alpha = 1.0 / (self.sigma * self.sigma);
                let r = ln_tau - self.mu.ln();
                ln_gamma_scaled_residual(alpha) - alpha * (r.exp_m1() - r) - ln_tau
            }
            Family::Weibull => {
                let shape = self.sigma;
                let ln_scale = self.mu.ln() - ln_gamma(1.0 / shape + 1.0);
                let s = shape * (ln_tau - ln_scale);
                shape.ln() - ln_tau + s - s.exp()
            }
            Family::GenGamma => {
                let theta = self.theta();
                let y = self.nu * (ln_tau - self.mu.ln());
                self.nu.abs().ln() + ln_gamma_scaled_residual(theta) - theta * (y.exp_m1() - y) - ln_tau
            }
        }
    }

    pub fn cdf(&self, tau: f64) -> Result<f64> {
        self.validate()?;
        if tau <= 0.0 {
            return Ok(0.0);
        }
        let ln_tau = tau.ln();
        Ok(match self.family {
            Family::Lognormal => normal_cdf((ln_tau - self.mu) / self.sigma),
            Family::Gamma => {
                let alpha = 1.0 / (self.sigma * self.sigma);
                gamma_p(alpha, alpha * tau / self.mu)
            }
            Family::Weibull => {
                let z = (self.sigma * (ln_tau - self.weibull_scale().ln())).exp();
                -(-z).exp_m1()
            }
            Family::GenGamma => {
                let theta = self.theta();
                let x = theta * (self.nu * (ln_tau - self.mu.ln())).exp();
                if self.nu > 0.0 {
                    gamma_p(theta, x)
                } else {
                    gamma_q(theta, x)
                }
            }
        })
    }

    /// The `u`-quantile of the distribution.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        self.validate()?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidProbability(u));
        }
        Ok(match self.family {
            Family::Lognormal => (self.mu + self.sigma * normal_quantile(u)).exp(),
            Family::Gamma => {
                let alpha = 1.0 / (self.sigma * self.sigma);
                self.mu / alpha * gamma_p_inv(alpha, u)?
            }
            Family::Weibull => self.weibull_scale() * (-(-u).ln_1p()).powf(1.0 / self.sigma),
            Family::GenGamma => {
                // θ(τ/μ)^ν = (τ/a)^b ~ Gamma(θ, 1)
                let theta = self.theta();
                let g = if self.nu > 0.0 {
                    gamma_p_inv(theta, u)?
                } else {
                    gamma_p_inv(theta, 1.0 - u)?
                };
                self.mu * ((g.ln() - theta.ln()) / self.nu).exp()
            }
        })
    }

    /// Closed-form mean and variance.
    pub fn mean_variance(&self) -> Result<(f64, f64)> {
        self.validate()?;
        Ok(match self.family {
            Family::Lognormal => {
                let s2 = self.sigma * self.sigma;
                let mean = (self.mu + 0.5 * s2).exp();
                (mean, s2.exp_m1() * (2.0 * self.mu + s2).exp())
            }
            Family::Gamma => (self.mu, self.sigma * self.sigma * self.mu * self.mu),
            Family::Weibull => {
                let lg1 = ln_gamma(1.0 / self.sigma + 1.0);
                let lg2 = ln_gamma(2.0 / self.sigma + 1.0);
                (self.mu, self.mu * self.mu * (lg2 - 2.0 * lg1).exp_m1())
            }
            Family::GenGamma => {
                let theta = self.theta();
                let nu = self.nu;
                if theta + 1.0 / nu <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "gengamma mean undefined: theta + 1/nu = {} <= 0",
                        theta + 1.0 / nu
                    )));
                }
                if theta + 2.0 / nu <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "gengamma variance undefined: theta + 2/nu = {} <= 0",
                        theta + 2.0 / nu
                    )));
                }
                let lg0 = ln_gamma(theta);
                let ln_theta = theta.ln();
                let m1 = (ln_gamma(theta + 1.0 / nu) - lg0 - ln_theta / nu).exp();
                let m2 = (ln_gamma(theta + 2.0 / nu) - lg0 - 2.0 * ln_theta / nu).exp();
                (self.mu * m1, self.mu * self.mu * (m2 - m1 * m1))
            }
        })
    }

    /// `E[ln τ]` in closed form.
    pub fn mean_log(&self) -> f64 {
        match self.family {
            Family::Lognormal => self.mu,
            Family::Gamma => {
                let alpha = 1.0 / (self.sigma * self.sigma);
                self.mu.ln() + digamma(alpha) - alpha.ln()
            }
            Family::Weibull => self.weibull_scale().ln() - EULER_GAMMA / self.sigma,
            Family::GenGamma => {
                let theta = self.theta();
                self.mu.ln() + (digamma(theta) - theta.ln()) / self.nu
            }
        }
    }

    /// Gradient of `log_pdf` with respect to `(mu, sigma, nu)`; the `nu`
    /// entry is zero for two-parameter families.
    pub fn score(&self, tau: f64) -> Result<[f64; 3]> {
        self.validate()?;
        check_response(tau)?;
        Ok(self.score_unchecked(tau))
    }

    pub(crate) fn score_unchecked(&self, tau: f64) -> [f64; 3] {
        let ln_tau = tau.ln();
        match self.family {
            Family::Lognormal => {
                let s2 = self.sigma * self.sigma;
                let e = ln_tau - self.mu;
                [e / s2, -1.0 / self.sigma + e * e / (s2 * self.sigma), 0.0]
            }
            Family::Gamma => {
                let alpha = 1.0 / (self.sigma * self.sigma);
                let r = ln_tau - self.mu.ln();
                let em1 = r.exp_m1();
                let d_mu = alpha * em1 / self.mu;
                let d_alpha = (alpha.ln() - digamma(alpha)) - (em1 - r);
                [d_mu, d_alpha * (-2.0 * alpha / self.sigma), 0.0]
            }
            Family::Weibull => {
                let shape = self.sigma;
                let inv = 1.0 / shape;
                let ln_scale = self.mu.ln() - ln_gamma(inv + 1.0);
                let l = ln_tau - ln_scale;
                let z = (shape * l).exp();
                // ∂ℓ/∂ln β = σ(z − 1); ∂ln β/∂σ = ψ(1/σ + 1)/σ²
                let d_ln_scale = shape * (z - 1.0);
                let d_mu = d_ln_scale / self.mu;
                let d_shape = inv + l - z * l + d_ln_scale * digamma(inv + 1.0) * inv * inv;
                [d_mu, d_shape, 0.0]
            }
            Family::GenGamma => {
                let nu = self.nu;
                let theta = self.theta();
                let r = ln_tau - self.mu.ln();
                let y = nu * r;
                let em1 = y.exp_m1();
                let d_mu = nu * theta * em1 / self.mu;
                let d_theta = (theta.ln() - digamma(theta)) - (em1 - y);
                let d_sigma = d_theta * (-2.0 * theta / self.sigma);
                let d_nu = 1.0 / nu - theta * r * em1 + d_theta * (-2.0 * theta / nu);
                [d_mu, d_sigma, d_nu]
            }
        }
    }

    /// Draw one response.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            Family::Lognormal => {
                let z: f64 = rng.sample(StandardNormal);
                (self.mu + self.sigma * z).exp()
            }
            Family::Gamma => {
                let alpha = 1.0 / (self.sigma * self.sigma);
                let g = GammaSampler::new(alpha, self.mu / alpha).expect("validated gamma parameters");
                g.sample(rng)
            }
            Family::Weibull => {
                let u: f64 = rng.sample(Open01);
                self.weibull_scale() * (-u.ln()).powf(1.0 / self.sigma)
            }
            Family::GenGamma => {
                let theta = self.theta();
                let g = GammaSampler::new(theta, 1.0).expect("validated gengamma parameters");
                let draw: f64 = g.sample(rng);
                self.mu * ((draw.ln() - theta.ln()) / self.nu).exp()
            }
        }
    }
}

fn check_response(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveResponse(tau))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn exponential_reduction_density() {
        let p = GgdNatural::new(1.0, 1.0, 1.0).unwrap().to_params();
        assert!(close(p.pdf(1.0).unwrap(), (-1.0f64).exp(), 1e-12));
        assert!(close(p.pdf(1.0).unwrap(), 0.367_879_4, 1e-7));
    }

    #[test]
    fn weibull_reduction_density() {
        let p = GgdNatural::new(2.0, 1.0, 1.0).unwrap().to_params();
        assert!(close(p.pdf(1.0).unwrap(), 2.0 * (-1.0f64).exp(), 1e-12));
        assert!(close(p.pdf(1.0).unwrap(), 0.735_758_9, 1e-7));
    }

    #[test]
    fn gamma_reduction_pointwise() {
        let gg = GgdNatural::new(1.0, 2.0, 3.0).unwrap().to_params();
        let ga = ParamSet::gamma(6.0, 1.0 / 3f64.sqrt()).unwrap();
        let mut tau = 0.5;
        while tau <= 20.0 {
            let a = gg.log_pdf(tau).unwrap();
            let b = ga.log_pdf(tau).unwrap();
            assert!((a - b).abs() < 1e-10, "tau={tau}: {a} vs {b}");
            tau += 0.5;
        }
    }

    #[test]
    fn invalid_inputs_error() {
        assert!(ParamSet::gamma(-1.0, 1.0).is_err());
        assert!(ParamSet::gengamma(1.0, 1.0, 0.0).is_err());
        let p = ParamSet::lognormal(0.0, 1.0).unwrap();
        assert!(p.log_pdf(0.0).is_err());
        assert!(p.log_pdf(-2.0).is_err());
        assert!(p.quantile(0.0).is_err());
        assert!(p.quantile(1.0).is_err());
        let neg = ParamSet::gengamma(1.0, 1.0, -0.5).unwrap();
        assert!(neg.to_natural().is_err());
        // θ + 1/ν ≤ 0: σ=1, ν=−0.5 → θ = 4, 1/ν = −2 → fine; ν = −0.2 → θ = 25, 1/ν = −5.
        let bad = ParamSet::gengamma(1.0, 3.0, -0.9).unwrap();
        assert!(bad.theta() + 1.0 / bad.nu <= 0.0);
        assert!(bad.mean_variance().is_err());
    }

    #[test]
    fn moment_examples() {
        let gg = GgdNatural::new(1.0, 2.0, 3.0).unwrap().to_params();
        let (m, v) = gg.mean_variance().unwrap();
        assert!(close(m, 6.0, 1e-12));
        assert!(close(v, 12.0, 1e-12));
        let w = ParamSet::weibull(5.0, 1.0).unwrap();
        let (m, v) = w.mean_variance().unwrap();
        assert!(close(m, 5.0, 1e-14));
        assert!(close(v, 25.0, 1e-12));
    }

    #[test]
    fn quantile_examples() {
        let e = GgdNatural::new(1.0, 1.0, 1.0).unwrap().to_params();
        assert!(close(e.quantile(0.5).unwrap(), 2f64.ln(), 1e-13));
        let ln = ParamSet::lognormal(0.0, 1.0).unwrap();
        assert!(close(ln.quantile(0.5).unwrap(), 1.0, 1e-15));
    }

    #[test]
    fn score_zero_points() {
        let ln = ParamSet::lognormal(0.7, 1.3).unwrap();
        assert!(ln.score(0.7f64.exp()).unwrap()[0].abs() < 1e-15);
        let ga = ParamSet::gamma(3.5, 0.4).unwrap();
        assert!(ga.score(3.5).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn natural_round_trip() {
        let p = ParamSet::gengamma(3.1, 0.7, 1.6).unwrap();
        let back = p.to_natural().unwrap().to_params();
        assert!(close(back.mu, p.mu, 1e-12));
        assert!(close(back.sigma, p.sigma, 1e-12));
        assert!(close(back.nu, p.nu, 1e-12));
    }

    #[test]
    fn negative_nu_density_cdf_quantile_consistent() {
        let p = ParamSet::gengamma(2.0, 0.5, -0.8).unwrap();
        let u = 0.3;
        let q = p.quantile(u).unwrap();
        assert!(close(p.cdf(q).unwrap(), u, 1e-10));
        // density is the derivative of the CDF
        let h = 1e-5 * q;
        let fd = (p.cdf(q + h).unwrap() - p.cdf(q - h).unwrap()) / (2.0 * h);
        assert!(close(p.pdf(q).unwrap(), fd, 1e-6));
    }

    #[test]
    fn family_parse_and_display() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("cauchy".parse::<Family>().is_err());
        assert_eq!(serde_json::to_string(&Family::GenGamma).unwrap(), "\"gengamma\"");
    }

    #[test]
    fn sampler_median_matches_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in [
            ParamSet::lognormal(1.0, 0.5).unwrap(),
            ParamSet::gamma(3.0, 0.8).unwrap(),
            ParamSet::weibull(2.0, 1.7).unwrap(),
            ParamSet::gengamma(2.0, 0.4, 2.2).unwrap(),
        ] {
            let med = p.quantile(0.5).unwrap();
            let n = 20_000;
            let below = (0..n).filter(|_| p.sample(&mut rng) <= med).count();
            let frac = below as f64 / n as f64;
            assert!((frac - 0.5).abs() < 0.015, "{:?}: {frac}", p.family);
        }
    }
}
