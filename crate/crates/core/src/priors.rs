//! Researcher beliefs about the standardized effect θ, prior-integrated
//! rejection probabilities, and conjugate normal updating.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{self, check_symmetric, cholesky, cholesky_solve, norm_cdf, norm_pdf, norm_sf, Probability};
use crate::error::{invalid, Error, Result};
use crate::quad;

/// Which alternative the test is against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    /// `H1: θ ≠ 0`, the reported statistic is `max |X*_i|`.
    TwoSided,
    /// `H1: θ > 0`, the reported statistic is `max X*_i`.
    UpperOneSided,
}

impl Tail {
    /// The single-study critical value at level `alpha`.
    pub fn classical_critical_value(self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        match self {
            Tail::TwoSided => dist::std_normal_quantile(1.0 - alpha / 2.0),
            Tail::UpperOneSided => dist::std_normal_quantile(1.0 - alpha),
        }
    }

    /// The statistic a single latent study contributes to the reported maximum.
    #[inline]
    pub fn score(self, latent: f64) -> f64 {
        match self {
            Tail::TwoSided => latent.abs(),
            Tail::UpperOneSided => latent,
        }
    }
}

/// Belief over θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    PointMass { theta: f64 },
    Uniform { lower: f64, upper: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Prior {
    pub fn point_mass(theta: f64) -> Result<Self> {
        let p = Prior::PointMass { theta };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        let p = Prior::Uniform { lower, upper };
        p.validate()?;
        Ok(p)
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        let p = Prior::Normal { mean, sd };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Prior::PointMass { theta } if theta.is_finite() => Ok(()),
            Prior::PointMass { theta } => Err(invalid(format!("point-mass location must be finite, got {theta}"))),
            Prior::Uniform { lower, upper } if lower.is_finite() && upper.is_finite() && lower < upper => Ok(()),
            Prior::Uniform { lower, upper } => {
                Err(invalid(format!("uniform prior needs finite a < b, got a = {lower}, b = {upper}")))
            }
            Prior::Normal { mean, sd } if mean.is_finite() && sd.is_finite() && sd > 0.0 => Ok(()),
            Prior::Normal { mean, sd } => {
                Err(invalid(format!("normal prior needs finite mean and sd > 0, got mean = {mean}, sd = {sd}")))
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Prior::PointMass { theta } => theta,
            Prior::Uniform { lower, upper } => 0.5 * (lower + upper),
            Prior::Normal { mean, .. } => mean,
        }
    }

    /// Law of `scale · θ + shift`. A zero scale collapses to a point mass; the
    /// result may be a zero-sd normal, which only internal closed forms accept.
    pub(crate) fn affine(&self, scale: f64, shift: f64) -> Prior {
        match *self {
            Prior::PointMass { theta } => Prior::PointMass { theta: scale * theta + shift },
            _ if scale == 0.0 => Prior::PointMass { theta: shift },
            Prior::Uniform { lower, upper } => {
                let (x, y) = (scale * lower + shift, scale * upper + shift);
                Prior::Uniform { lower: x.min(y), upper: x.max(y) }
            }
            Prior::Normal { mean, sd } => Prior::Normal { mean: scale * mean + shift, sd: scale.abs() * sd },
        }
    }
}

/// `∫ₓ Φ(t) dt` antiderivative.
#[inline]
fn cdf_antiderivative(x: f64) -> f64 {
    x * norm_cdf(x) + norm_pdf(x)
}

/// `P(θ + ε > upper) + P(θ + ε < lower)` with `θ ~ prior`, `ε ~ N(0, 1)` independent.
///
/// Every continuation rule in the crate reduces to this quantity after rescaling.
pub(crate) fn band_exceedance(prior: &Prior, upper: f64, lower: Option<f64>) -> f64 {
    let value = match *prior {
        Prior::PointMass { theta } => norm_sf(upper - theta) + lower.map_or(0.0, |l| norm_cdf(l - theta)),
        Prior::Normal { mean, sd } => {
            let scale = (1.0 + sd * sd).sqrt();
            norm_sf((upper - mean) / scale) + lower.map_or(0.0, |l| norm_cdf((l - mean) / scale))
        }
        Prior::Uniform { lower: a, upper: b } => {
            let width = b - a;
            let above = (cdf_antiderivative(b - upper) - cdf_antiderivative(a - upper)) / width;
            let below = lower.map_or(0.0, |l| (cdf_antiderivative(l - a) - cdf_antiderivative(l - b)) / width);
            above + below
        }
    };
    value.clamp(0.0, 1.0)
}

fn check_z(z: f64) -> Result<()> {
    if z.is_finite() && z >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("critical value must be finite and non-negative, got {z}")))
    }
}

/// Prior-integrated probability that one fresh study rejects at `z`.
///
/// Closed forms: point mass `1 − Φ(z − θ̃) + Φ(−z − θ̃)`; normal
/// `1 − Φ((z − μ)/√(1+σ²)) + Φ((−z − μ)/√(1+σ²))`; uniform via the antiderivative
/// `xΦ(x) + φ(x)` of Φ. The one-sided forms drop the lower-tail term.
pub fn rejection_prob(prior: &Prior, z: f64, tail: Tail) -> Result<Probability> {
    prior.validate()?;
    check_z(z)?;
    Ok(Probability::saturating(rejection_prob_unchecked(prior, z, tail)))
}

#[inline]
pub(crate) fn rejection_prob_unchecked(prior: &Prior, z: f64, tail: Tail) -> f64 {
    match tail {
        Tail::TwoSided => band_exceedance(prior, z, Some(-z)),
        Tail::UpperOneSided => band_exceedance(prior, z, None),
    }
}

/// Same quantity as [`rejection_prob`], by adaptive quadrature of the integrand
/// against the prior density. Normal priors are truncated at ±10σ.
pub fn rejection_prob_quadrature(prior: &Prior, z: f64, tail: Tail) -> Result<Probability> {
    prior.validate()?;
    check_z(z)?;
    let integrand = move |theta: f64| {
        let upper = norm_sf(z - theta);
        match tail {
            Tail::TwoSided => upper + norm_cdf(-z - theta),
            Tail::UpperOneSided => upper,
        }
    };
    const TOL: f64 = 1e-11;
    let value = match *prior {
        Prior::PointMass { theta } => integrand(theta),
        Prior::Uniform { lower, upper } => quad::integrate(integrand, lower, upper, TOL) / (upper - lower),
        Prior::Normal { mean, sd } => quad::integrate(
            |theta| integrand(theta) * norm_pdf((theta - mean) / sd) / sd,
            mean - 10.0 * sd,
            mean + 10.0 * sd,
            TOL,
        ),
    };
    Ok(Probability::saturating(value))
}

/// Normal belief after observing iid `N(θ, 1)` statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorScalar {
    pub mean: f64,
    pub variance: f64,
}

impl PosteriorScalar {
    pub fn to_prior(self) -> Prior {
        Prior::Normal { mean: self.mean, sd: self.variance.sqrt() }
    }
}

/// Conjugate update of a normal prior `N(μ, σ²)` by observations `X*_1..X*_{n−1}`:
/// mean `(σ² ΣX* + μ)/((n−1)σ² + 1)`, variance `σ²/((n−1)σ² + 1)`.
pub fn posterior_scalar(prior: &Prior, observations: &[f64]) -> Result<PosteriorScalar> {
    let Prior::Normal { mean, sd } = *prior else {
        return Err(Error::Unsupported(format!(
            "posterior updating is only defined for normal priors, got {prior:?}"
        )));
    };
    prior.validate()?;
    if let Some(bad) = observations.iter().find(|x| !x.is_finite()) {
        return Err(invalid(format!("observations must be finite, got {bad}")));
    }
    Ok(posterior_from_sum(mean, sd * sd, observations.iter().sum(), observations.len()))
}

#[inline]
pub(crate) fn posterior_from_sum(mean: f64, variance: f64, sum: f64, count: usize) -> PosteriorScalar {
    let denom = count as f64 * variance + 1.0;
    PosteriorScalar { mean: (variance * sum + mean) / denom, variance: variance / denom }
}

/// Multivariate normal belief over the study means `θ_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MvnPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(invalid(format!(
                "prior mean has dimension {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_symmetric(&cov, 1e-12)?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Posterior of `θ_n` given the first `n − 1` statistics, `X*_{1..n−1} ~ N(θ_{n−1}, Ω_{n−1})`.
///
/// Equals `N(m, S)` with `S = (Ω̃⁻¹ + Σ⁻¹)⁻¹`, `m = S(Ω̃⁻¹X̃ + Σ⁻¹μ)` and `Ω̃⁻¹` the
/// zero-padded precision of the observed block. It is evaluated in the equivalent
/// gain form `m = μ + Σ_{·1}(Σ₁₁ + Ω)⁻¹(X − μ₁)`, `S = Σ − Σ_{·1}(Σ₁₁ + Ω)⁻¹Σ_{1·}`,
/// which needs only one SPD solve. `Σ + jitter·I` must factor; a singular prior
/// without jitter is rejected.
pub fn posterior_general(
    prior: &MvnPrior,
    omega_prev: &DMatrix<f64>,
    observations: &[f64],
    jitter: Option<f64>,
) -> Result<MvnPrior> {
    let n = prior.dim();
    let m = observations.len();
    if n == 0 {
        return Err(invalid("prior must have dimension at least 1"));
    }
    if m + 1 != n {
        return Err(invalid(format!("a {n}-dimensional prior needs {} observations, got {m}", n - 1)));
    }
    if omega_prev.nrows() != m || omega_prev.ncols() != m {
        return Err(invalid(format!(
            "observation covariance must be {m}x{m}, got {}x{}",
            omega_prev.nrows(),
            omega_prev.ncols()
        )));
    }
    if let Some(j) = jitter {
        if !(j >= 0.0 && j.is_finite()) {
            return Err(invalid(format!("jitter must be finite and non-negative, got {j}")));
        }
    }
    if m == 0 {
        return Ok(prior.clone());
    }

    let mut sigma = prior.cov.clone();
    if let Some(j) = jitter {
        for i in 0..n {
            sigma[(i, i)] += j;
        }
    }
    cholesky(&sigma).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot } => Error::SingularPrior { pivot },
        other => other,
    })?;
    check_symmetric(omega_prev, 1e-12)?;
    cholesky(omega_prev)?;

    let observed_block = sigma.view((0, 0), (m, m)) + omega_prev;
    let factor = cholesky(&observed_block.into_owned())?;
    let cross = sigma.columns(0, m).into_owned(); // Σ_{·1}, n×m
    let residual = DMatrix::from_iterator(m, 1, observations.iter().zip(prior.mean.iter()).map(|(x, mu)| x - mu));
    let weighted_residual = cholesky_solve(&factor, &residual);
    let gain_t = cholesky_solve(&factor, &cross.transpose()); // (Σ₁₁+Ω)⁻¹ Σ_{1·}, m×n

    let mean = &prior.mean + (&cross * weighted_residual).column(0);
    let mut cov = &sigma - &cross * gain_t;
    // Restore exact symmetry lost to rounding.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = avg;
            cov[(j, i)] = avg;
        }
    }
    Ok(MvnPrior { mean, cov })
}

/// `α·prior_term + (1 − α)·posterior_term`; `α = 1` never updates, `α = 0` fully updates.
pub fn subjective_mixture(prior_term: Probability, posterior_term: Probability, sophistication: f64) -> Result<Probability> {
    if !(0.0..=1.0).contains(&sophistication) {
        return Err(invalid(format!("sophistication must lie in [0, 1], got {sophistication}")));
    }
    Ok(Probability::saturating(
        sophistication * prior_term.value() + (1.0 - sophistication) * posterior_term.value(),
    ))
}
