//! Stopping rules and simulated research processes.
//!
//! A researcher facing critical value `z` conducts study `n` iff
//! `v · P(next study rejects) − c(n) ≥ 0`, where the probability is taken
//! under the researcher's subjective beliefs given the studies run so far.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{cholesky, cholesky_solve, sample_std_normal, RandomStream};
use crate::error::{invalid, Error, Result};
use crate::priors::{self, posterior_general, posterior_scalar, MvnPrior, Prior, Tail};

mod path;

pub(crate) use path::{Belief, Path};

/// Marginal cost of the `n`-th study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CostSchedule {
    Constant { cost: f64 },
    /// `c(n) = base · n^elasticity`.
    PowerLaw { base: f64, elasticity: f64 },
}

impl CostSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CostSchedule::Constant { cost } if cost.is_finite() && cost >= 0.0 => Ok(()),
            CostSchedule::Constant { cost } => Err(invalid(format!("constant cost must be finite and >= 0, got {cost}"))),
            CostSchedule::PowerLaw { base, elasticity }
                if base.is_finite() && base > 0.0 && elasticity.is_finite() && elasticity > 0.0 =>
            {
                Ok(())
            }
            CostSchedule::PowerLaw { base, elasticity } => Err(invalid(format!(
                "power-law cost needs base > 0 and elasticity > 0, got base = {base}, elasticity = {elasticity}"
            ))),
        }
    }

    pub fn cost(&self, n: usize) -> f64 {
        match *self {
            CostSchedule::Constant { cost } => cost,
            CostSchedule::PowerLaw { base, elasticity } => base * (n as f64).powf(elasticity),
        }
    }

    /// Largest `n ≤ limit` with `c(n) ≤ budget`, relying on `c` being non-decreasing.
    pub(crate) fn max_affordable(&self, budget: f64, limit: usize) -> usize {
        match *self {
            CostSchedule::Constant { cost } => {
                if cost <= budget {
                    limit
                } else {
                    0
                }
            }
            CostSchedule::PowerLaw { base, elasticity } => {
                if !(budget >= base) {
                    return 0;
                }
                let guess = (budget / base).powf(1.0 / elasticity).floor();
                if guess >= limit as f64 && self.cost(limit) <= budget {
                    return limit;
                }
                let mut n = guess.min(limit as f64) as usize;
                while n < limit && self.cost(n + 1) <= budget {
                    n += 1;
                }
                while n > 0 && self.cost(n) > budget {
                    n -= 1;
                }
                n
            }
        }
    }
}

/// Publication payoff `v` and study cost schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incentives {
    pub payoff: f64,
    pub cost: CostSchedule,
}

impl Incentives {
    pub fn new(payoff: f64, cost: CostSchedule) -> Result<Self> {
        let inc = Self { payoff, cost };
        inc.validate()?;
        Ok(inc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.payoff.is_finite() && self.payoff > 0.0) {
            return Err(invalid(format!("payoff must be finite and > 0, got {}", self.payoff)));
        }
        self.cost.validate()
    }

    /// Weak inequality: a researcher indifferent between stopping and continuing continues.
    #[inline]
    pub fn worth_it(&self, n: usize, rejection_prob: f64) -> bool {
        self.payoff * rejection_prob - self.cost.cost(n) >= 0.0
    }
}

/// Per-study mean multipliers `λ_i` in `θ_i = λ_i θ`.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanScaling {
    Unit,
    SqrtIndex,
    Explicit(Vec<f64>),
}

impl MeanScaling {
    /// `λ_i` for the 1-based study index `i`.
    pub fn lambda(&self, i: usize) -> Result<f64> {
        match self {
            MeanScaling::Unit => Ok(1.0),
            MeanScaling::SqrtIndex => Ok((i as f64).sqrt()),
            MeanScaling::Explicit(values) => values.get(i - 1).copied().ok_or_else(|| {
                invalid(format!("mean multipliers cover {} studies, study {i} was requested", values.len()))
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        if let MeanScaling::Explicit(values) = self {
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(invalid("explicit mean multipliers must be a non-empty list of finite numbers"));
            }
        }
        Ok(())
    }
}

/// Correlation structure `Ω = [ω_ij]` of the latent statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaSpec {
    /// Independent studies.
    Identity,
    /// `ω_ij = √(min(i,j)/max(i,j))`, the law of statistics computed on pooled data.
    Pooling,
    /// `ω_ij = ρ` off the diagonal; positive definite for every size iff `0 ≤ ρ < 1`.
    Equicorrelated { rho: f64 },
    /// A fixed matrix with unit diagonal; trajectories cannot exceed its dimension.
    Explicit(DMatrix<f64>),
}

impl OmegaSpec {
    /// `ω_ij` for 1-based indices.
    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        Ok(match self {
            OmegaSpec::Identity => f64::from(u8::from(i == j)),
            OmegaSpec::Pooling => ((i.min(j) as f64) / (i.max(j) as f64)).sqrt(),
            OmegaSpec::Equicorrelated { rho } => {
                if i == j {
                    1.0
                } else {
                    *rho
                }
            }
            OmegaSpec::Explicit(m) => {
                if i > m.nrows() || j > m.nrows() {
                    return Err(invalid(format!(
                        "explicit covariance covers {} studies, study {} was requested",
                        m.nrows(),
                        i.max(j)
                    )));
                }
                m[(i - 1, j - 1)]
            }
        })
    }

    /// Leading `n × n` block.
    pub fn matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.entry(i + 1, j + 1)?;
            }
        }
        Ok(m)
    }

    /// Explicit covariance from its rows, validated.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid(format!("explicit covariance must be square, got {n} rows of unequal length")));
        }
        let spec = OmegaSpec::Explicit(DMatrix::from_fn(n, n, |i, j| rows[i][j]));
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        match self {
            OmegaSpec::Identity | OmegaSpec::Pooling => Ok(()),
            OmegaSpec::Equicorrelated { rho } if rho.is_finite() && *rho > -1.0 && *rho < 1.0 => Ok(()),
            OmegaSpec::Equicorrelated { rho } => Err(invalid(format!("equicorrelation must lie in (-1, 1), got {rho}"))),
            OmegaSpec::Explicit(m) => {
                if m.nrows() == 0 || m.nrows() != m.ncols() {
                    return Err(invalid("explicit covariance must be a non-empty square matrix"));
                }
                crate::dist::check_symmetric(m, 1e-12)?;
                if (0..m.nrows()).any(|i| (m[(i, i)] - 1.0).abs() > 1e-12) {
                    return Err(invalid("explicit covariance of t-statistics must have a unit diagonal"));
                }
                cholesky(m).map(|_| ())
            }
        }
    }
}

/// Latent statistics with means `λ_i θ`, correlation `Ω` and a researcher who
/// mixes prior and posterior beliefs with weight `sophistication` on the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralModel {
    pub mean_scaling: MeanScaling,
    pub omega: OmegaSpec,
    pub sophistication: f64,
    /// Diagonal regularization of the rank-one prior covariance `σ²λλ'` used by
    /// the dense posterior in [`subjective_rejection_prob`].
    pub jitter: f64,
}

impl GeneralModel {
    pub fn new(mean_scaling: MeanScaling, omega: OmegaSpec, sophistication: f64) -> Self {
        Self { mean_scaling, omega, sophistication, jitter: 1e-8 }
    }
}

/// Research process governing the latent statistics and the researcher's beliefs.
#[derive(Debug, Clone, PartialEq)]
pub enum BehaviorModel {
    /// Independent studies, fixed beliefs; meant for constant costs.
    Baseline,
    /// Independent studies, fixed beliefs; meant for rising costs.
    IncreasingCost,
    /// Independent studies, normal beliefs updated by Bayes rule.
    Learning,
    /// Each study adds fresh data to the pooled sample; beliefs fixed.
    Pooling,
    General(GeneralModel),
}

impl BehaviorModel {
    pub fn name(&self) -> &'static str {
        match self {
            BehaviorModel::Baseline => "baseline",
            BehaviorModel::IncreasingCost => "increasing-cost",
            BehaviorModel::Learning => "learning",
            BehaviorModel::Pooling => "pooling",
            BehaviorModel::General(_) => "general",
        }
    }

    /// Checks model parameters and that the prior kind is supported.
    pub fn validate(&self, prior: &Prior) -> Result<()> {
        prior.validate()?;
        let needs_normal = match self {
            BehaviorModel::Learning => true,
            BehaviorModel::General(g) => {
                if !(0.0..=1.0).contains(&g.sophistication) {
                    return Err(invalid(format!("sophistication must lie in [0, 1], got {}", g.sophistication)));
                }
                if !(g.jitter.is_finite() && g.jitter >= 0.0) {
                    return Err(invalid(format!("jitter must be finite and >= 0, got {}", g.jitter)));
                }
                g.mean_scaling.validate()?;
                g.omega.validate()?;
                g.sophistication < 1.0
            }
            _ => false,
        };
        if needs_normal && !matches!(prior, Prior::Normal { .. }) {
            return Err(Error::Unsupported(format!(
                "the {} model updates beliefs and needs a normal prior, got {prior:?}",
                self.name()
            )));
        }
        Ok(())
    }

    /// Number of studies an explicit covariance or mean-multiplier list covers.
    pub fn horizon(&self) -> Option<usize> {
        let BehaviorModel::General(g) = self else { return None };
        let omega = match &g.omega {
            OmegaSpec::Explicit(m) => Some(m.nrows()),
            _ => None,
        };
        let lambda = match &g.mean_scaling {
            MeanScaling::Explicit(v) => Some(v.len()),
            _ => None,
        };
        match (omega, lambda) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Rejects caps beyond [`horizon`](Self::horizon).
    pub fn check_cap(&self, cap: usize) -> Result<()> {
        if cap == 0 {
            return Err(invalid("cap must be at least 1"));
        }
        match self.horizon() {
            Some(h) if cap > h => Err(invalid(format!("cap {cap} exceeds the {h} studies the model specifies"))),
            _ => Ok(()),
        }
    }

    /// Whether the subjective rejection probability ignores the history.
    pub(crate) fn history_free(&self) -> bool {
        matches!(self, BehaviorModel::Baseline | BehaviorModel::IncreasingCost)
    }
}

/// Latent statistics of the studies conducted so far.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    latent: Vec<f64>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_latent(latent: Vec<f64>) -> Result<Self> {
        if let Some(x) = latent.iter().find(|x| !x.is_finite()) {
            return Err(invalid(format!("latent statistics must be finite, got {x}")));
        }
        Ok(Self { latent })
    }

    pub fn push(&mut self, x: f64) {
        self.latent.push(x);
    }

    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }

    /// Running maximum of the tail score; 0 before any study.
    pub fn reported(&self, tail: Tail) -> f64 {
        self.latent.iter().map(|&x| tail.score(x)).fold(0.0, f64::max)
    }
}

/// One simulated researcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n_studies: usize,
    pub latent: Vec<f64>,
    pub reported: f64,
    pub rejected: bool,
    pub capped: bool,
}

/// Subjective probability that the next study rejects at `z`, given the history.
///
/// Evaluated from scratch with dense linear algebra; the simulation engine
/// maintains the same quantity incrementally.
pub fn subjective_rejection_prob(
    model: &BehaviorModel,
    history: &History,
    prior: &Prior,
    z: f64,
    tail: Tail,
) -> Result<f64> {
    model.validate(prior)?;
    if !(z.is_finite() && z >= 0.0) {
        return Err(invalid(format!("critical value must be finite and non-negative, got {z}")));
    }
    let x = history.latent();
    let n = x.len() + 1;
    let belief = match model {
        BehaviorModel::Baseline | BehaviorModel::IncreasingCost => Belief::single(0.0, 1.0, *prior),
        BehaviorModel::Learning => Belief::single(0.0, 1.0, posterior_scalar(prior, x)?.to_prior()),
        BehaviorModel::Pooling => pooling_belief(prior, n, x.last().copied().unwrap_or(0.0)),
        BehaviorModel::General(g) => dense_general_belief(g, prior, x)?,
    };
    Ok(belief.rejection_prob(z, tail))
}

pub(crate) fn pooling_belief(prior: &Prior, n: usize, previous: f64) -> Belief {
    let nf = n as f64;
    Belief::single(((nf - 1.0) / nf).sqrt() * previous, 1.0 / nf.sqrt(), *prior)
}

/// Conditional law of `X_n` given `X_{1..n−1}` for known means: returns the
/// regression weights `a = Ω_{n−1}⁻¹ Ω_{1..n−1,n}` and the conditional sd.
fn dense_conditional(omega: &OmegaSpec, n: usize) -> Result<(DVector<f64>, f64)> {
    let m = n - 1;
    if m == 0 {
        return Ok((DVector::zeros(0), omega.entry(1, 1)?.sqrt()));
    }
    let prev = omega.matrix(m)?;
    let factor = cholesky(&prev)?;
    let mut cross = DMatrix::zeros(m, 1);
    for i in 0..m {
        cross[(i, 0)] = omega.entry(i + 1, n)?;
    }
    let a = cholesky_solve(&factor, &cross).column(0).into_owned();
    let var = omega.entry(n, n)? - a.dot(&cross.column(0));
    if !(var > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: n - 1 });
    }
    Ok((a, var.sqrt()))
}

fn dense_general_belief(g: &GeneralModel, prior: &Prior, x: &[f64]) -> Result<Belief> {
    let n = x.len() + 1;
    let (a, d) = dense_conditional(&g.omega, n)?;
    let lambda = (1..=n).map(|i| g.mean_scaling.lambda(i)).collect::<Result<Vec<f64>>>()?;
    let lambda = DVector::from_vec(lambda);
    let xv = DVector::from_column_slice(x);
    // θ_{n|n−1} = c'θ + a'X with c = e_n − [a; 0].
    let mut c = DVector::zeros(n);
    c[n - 1] = 1.0;
    for i in 0..n - 1 {
        c[i] = -a[i];
    }
    let shift = a.dot(&xv);
    let kappa = c.dot(&lambda);
    let prior_term = prior.affine(kappa / d, 0.0);
    if g.sophistication >= 1.0 {
        return Ok(Belief::single(shift, d, prior_term));
    }
    let Prior::Normal { mean, sd } = *prior else {
        unreachable!("validated above");
    };
    let mvn = MvnPrior::new(&lambda * mean, &lambda * lambda.transpose() * (sd * sd))?;
    let omega_prev = g.omega.matrix(n - 1)?;
    let post = posterior_general(&mvn, &omega_prev, x, Some(g.jitter))?;
    let post_mean = c.dot(&post.mean);
    let post_var = (c.transpose() * &post.cov * &c)[(0, 0)].max(0.0);
    let posterior_term = Prior::Normal { mean: post_mean / d, sd: post_var.sqrt() / d };
    Ok(Belief::mixture(shift, d, g.sophistication, prior_term, posterior_term))
}

/// Whether the researcher conducts study `history.len() + 1`.
pub fn continue_decision(
    model: &BehaviorModel,
    history: &History,
    prior: &Prior,
    incentives: &Incentives,
    z: f64,
    tail: Tail,
) -> Result<bool> {
    incentives.validate()?;
    if !history.is_empty() && history.reported(tail) >= z {
        return Err(Error::Precondition(format!(
            "the reported statistic {} already rejects at z = {z}",
            history.reported(tail)
        )));
    }
    let p = subjective_rejection_prob(model, history, prior, z, tail)?;
    Ok(incentives.worth_it(history.len() + 1, p))
}

/// Largest study count an increasing-cost researcher is willing to pay for,
/// `max { n : c(n) ≤ v · R(z) }`; 0 when even the first study does not pay.
pub fn n_max_increasing_cost(prior: &Prior, incentives: &Incentives, z: f64, tail: Tail) -> Result<usize> {
    incentives.validate()?;
    if !matches!(incentives.cost, CostSchedule::PowerLaw { .. }) {
        return Err(Error::Unsupported(
            "a study-count bound needs a power-law cost; with constant cost see the baseline threshold".into(),
        ));
    }
    let r = priors::rejection_prob(prior, z, tail)?.value();
    Ok(incentives.cost.max_affordable(incentives.payoff * r, usize::MAX))
}

/// Draws the next latent statistic from the true conditional law given the history.
/// Uses the first variate of `stream`.
pub fn next_latent(model: &BehaviorModel, history: &History, theta_true: f64, stream: &RandomStream) -> Result<f64> {
    if !theta_true.is_finite() {
        return Err(invalid(format!("true effect must be finite, got {theta_true}")));
    }
    let zeta = sample_std_normal(stream);
    let x = history.latent();
    let n = x.len() + 1;
    let nf = n as f64;
    Ok(match model {
        BehaviorModel::Baseline | BehaviorModel::IncreasingCost | BehaviorModel::Learning => theta_true + zeta,
        BehaviorModel::Pooling => {
            let previous = x.last().copied().unwrap_or(0.0);
            theta_true / nf.sqrt() + ((nf - 1.0) / nf).sqrt() * previous + zeta / nf.sqrt()
        }
        BehaviorModel::General(g) => {
            let (a, d) = dense_conditional(&g.omega, n)?;
            let mut mean = g.mean_scaling.lambda(n)? * theta_true;
            for i in 0..n - 1 {
                mean += a[i] * (x[i] - g.mean_scaling.lambda(i + 1)? * theta_true);
            }
            mean + d * zeta
        }
    })
}

/// Simulates one researcher. Study `i` consumes the `i`-th standard normal of `stream`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_trajectory(
    model: &BehaviorModel,
    prior: &Prior,
    incentives: &Incentives,
    z: f64,
    tail: Tail,
    theta_true: f64,
    cap: usize,
    stream: &RandomStream,
) -> Result<Trajectory> {
    incentives.validate()?;
    model.validate(prior)?;
    model.check_cap(cap)?;
    if !(z.is_finite() && z >= 0.0) {
        return Err(invalid(format!("critical value must be finite and non-negative, got {z}")));
    }
    if !theta_true.is_finite() {
        return Err(invalid(format!("true effect must be finite, got {theta_true}")));
    }
    let mut path = Path::new(model, prior, tail, theta_true, stream.rng());
    let outcome = path.walk(incentives, z, cap)?;
    let latent = path.latent()[..outcome.n_studies].to_vec();
    let reported = latent.iter().map(|&x| tail.score(x)).fold(0.0, f64::max);
    Ok(Trajectory { n_studies: outcome.n_studies, latent, reported, rejected: outcome.rejected, capped: outcome.capped })
}
