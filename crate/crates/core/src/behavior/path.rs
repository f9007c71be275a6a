//! Incremental simulation of one researcher.
//!
//! Latent statistics do not depend on the critical value, only the stopping
//! point does, so one lazily extended path serves every `z` of a grid.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{pooling_belief, BehaviorModel, GeneralModel, Incentives, OmegaSpec};
use crate::dist::StreamRng;
use crate::error::{Error, Result};
use crate::priors::{band_exceedance, posterior_from_sum, Prior, Tail};

/// Subjective law of the next statistic: `X = shift + scale · (T + ε)` with
/// `ε ~ N(0, 1)` and `T` drawn from `primary` (probability `weight`) or
/// `secondary` (otherwise).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Belief {
    shift: f64,
    scale: f64,
    weight: f64,
    primary: Prior,
    secondary: Option<Prior>,
}

impl Belief {
    pub(crate) fn single(shift: f64, scale: f64, prior: Prior) -> Self {
        Self { shift, scale, weight: 1.0, primary: prior, secondary: None }
    }

    pub(crate) fn mixture(shift: f64, scale: f64, weight: f64, primary: Prior, secondary: Prior) -> Self {
        Self { shift, scale, weight, primary, secondary: Some(secondary) }
    }

    pub(crate) fn rejection_prob(&self, z: f64, tail: Tail) -> f64 {
        let upper = (z - self.shift) / self.scale;
        let lower = match tail {
            Tail::TwoSided => Some((-z - self.shift) / self.scale),
            Tail::UpperOneSided => None,
        };
        let mut p = 0.0;
        if self.weight > 0.0 {
            p += self.weight * band_exceedance(&self.primary, upper, lower);
        }
        if let Some(second) = &self.secondary {
            if self.weight < 1.0 {
                p += (1.0 - self.weight) * band_exceedance(second, upper, lower);
            }
        }
        p.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Outcome {
    pub n_studies: usize,
    pub rejected: bool,
    pub capped: bool,
}

/// Row `k` of the lower Cholesky factor of `Ω`: `[l', d]`, plus `κ_k = λ_k − l'q`.
struct ChainRow {
    l: Vec<f64>,
    d: f64,
    kappa: f64,
}

/// Whitened history for the general model: `u = L⁻¹X`, `q = L⁻¹λ`.
#[derive(Default)]
struct Chain {
    rows: Vec<ChainRow>,
    u: Vec<f64>,
    q: Vec<f64>,
}

pub(crate) struct Path<'a> {
    model: &'a BehaviorModel,
    prior: &'a Prior,
    tail: Tail,
    theta: f64,
    rng: StreamRng,
    latent: Vec<f64>,
    best: Vec<f64>,
    beliefs: Vec<Belief>,
    chain: Chain,
}

impl<'a> Path<'a> {
    /// Callers validate the model, prior and `theta`.
    pub(crate) fn new(model: &'a BehaviorModel, prior: &'a Prior, tail: Tail, theta: f64, rng: StreamRng) -> Self {
        Self {
            model,
            prior,
            tail,
            theta,
            rng,
            latent: Vec::new(),
            best: Vec::new(),
            beliefs: Vec::new(),
            chain: Chain::default(),
        }
    }

    pub(crate) fn latent(&self) -> &[f64] {
        &self.latent
    }

    /// The belief deciding study `n`; needs the first `n − 1` statistics, which it draws if missing.
    pub(crate) fn belief(&mut self, n: usize) -> Result<Belief> {
        while self.beliefs.len() < n {
            let k = self.beliefs.len() + 1;
            self.ensure_latent(k - 1)?;
            let b = self.compute_belief(k)?;
            self.beliefs.push(b);
        }
        Ok(self.beliefs[n - 1])
    }

    fn compute_belief(&mut self, k: usize) -> Result<Belief> {
        let model = self.model;
        let seen = &self.latent[..k - 1];
        Ok(match model {
            BehaviorModel::Baseline | BehaviorModel::IncreasingCost => Belief::single(0.0, 1.0, *self.prior),
            BehaviorModel::Learning => {
                let Prior::Normal { mean, sd } = *self.prior else {
                    return Err(Error::Unsupported("learning needs a normal prior".into()));
                };
                let post = posterior_from_sum(mean, sd * sd, seen.iter().sum(), k - 1);
                Belief::single(0.0, 1.0, post.to_prior())
            }
            BehaviorModel::Pooling => pooling_belief(self.prior, k, seen.last().copied().unwrap_or(0.0)),
            BehaviorModel::General(g) => {
                self.ensure_row(g, k)?;
                let row = &self.chain.rows[k - 1];
                let shift: f64 = row.l.iter().zip(&self.chain.u).map(|(a, b)| a * b).sum();
                let prior_term = self.prior.affine(row.kappa / row.d, 0.0);
                if g.sophistication >= 1.0 {
                    Belief::single(shift, row.d, prior_term)
                } else {
                    // Rank-one prior θ_k = λ_k θ: the posterior of θ is scalar and
                    // θ_{k|k−1} − l'u = κ_k θ.
                    let Prior::Normal { mean, sd } = *self.prior else {
                        return Err(Error::Unsupported("updating beliefs needs a normal prior".into()));
                    };
                    let q = &self.chain.q[..k - 1];
                    let qq: f64 = q.iter().map(|v| v * v).sum();
                    let qu: f64 = q.iter().zip(&self.chain.u).map(|(a, b)| a * b).sum();
                    let precision = 1.0 / (sd * sd) + qq;
                    let post_mean = (mean / (sd * sd) + qu) / precision;
                    let post_sd = precision.recip().sqrt();
                    let posterior_term = Prior::Normal {
                        mean: row.kappa * post_mean / row.d,
                        sd: row.kappa.abs() * post_sd / row.d,
                    };
                    Belief::mixture(shift, row.d, g.sophistication, prior_term, posterior_term)
                }
            }
        })
    }

    fn ensure_row(&mut self, g: &GeneralModel, k: usize) -> Result<()> {
        while self.chain.rows.len() < k {
            let j = self.chain.rows.len() + 1;
            let lambda = g.mean_scaling.lambda(j)?;
            let row = if g.omega == OmegaSpec::Identity {
                ChainRow { l: Vec::new(), d: 1.0, kappa: lambda }
            } else {
                let mut l = Vec::with_capacity(j - 1);
                for i in 1..j {
                    let prev = &self.chain.rows[i - 1];
                    let partial: f64 = prev.l.iter().zip(&l).map(|(a, b)| a * b).sum();
                    l.push((g.omega.entry(i, j)? - partial) / prev.d);
                }
                let d2 = g.omega.entry(j, j)? - l.iter().map(|v| v * v).sum::<f64>();
                if !(d2 > 0.0) {
                    return Err(Error::NotPositiveDefinite { pivot: j - 1 });
                }
                let lq: f64 = l.iter().zip(&self.chain.q).map(|(a, b)| a * b).sum();
                ChainRow { l, d: d2.sqrt(), kappa: lambda - lq }
            };
            self.chain.q.push(row.kappa / row.d);
            self.chain.rows.push(row);
        }
        Ok(())
    }

    pub(crate) fn ensure_latent(&mut self, n: usize) -> Result<()> {
        while self.latent.len() < n {
            let k = self.latent.len() + 1;
            let zeta: f64 = self.rng.sample(StandardNormal);
            let model = self.model;
            let x = match model {
                BehaviorModel::Baseline | BehaviorModel::IncreasingCost | BehaviorModel::Learning => self.theta + zeta,
                BehaviorModel::Pooling => {
                    let kf = k as f64;
                    let previous = self.latent.last().copied().unwrap_or(0.0);
                    self.theta / kf.sqrt() + ((kf - 1.0) / kf).sqrt() * previous + zeta / kf.sqrt()
                }
                BehaviorModel::General(g) => {
                    self.ensure_row(g, k)?;
                    let row = &self.chain.rows[k - 1];
                    let shift: f64 = row.l.iter().zip(&self.chain.u).map(|(a, b)| a * b).sum();
                    let x = self.theta * row.kappa + shift + row.d * zeta;
                    let u = (x - shift) / row.d;
                    self.chain.u.push(u);
                    x
                }
            };
            let score = self.tail.score(x);
            let best = self.best.last().map_or(score, |&b| b.max(score));
            self.latent.push(x);
            self.best.push(best);
        }
        Ok(())
    }

    /// Runs the stopping rule at `z`: stop at the first rejection, the first
    /// unprofitable study, or after `cap` studies.
    pub(crate) fn walk(&mut self, incentives: &Incentives, z: f64, cap: usize) -> Result<Outcome> {
        let mut n = 1;
        loop {
            if n > cap {
                // A study past the model's horizon cannot be run at all.
                let exists = self.model.horizon().is_none_or(|h| n <= h);
                let capped = exists && incentives.worth_it(n, self.belief(n)?.rejection_prob(z, self.tail));
                return Ok(Outcome { n_studies: cap, rejected: false, capped });
            }
            let go = incentives.worth_it(n, self.belief(n)?.rejection_prob(z, self.tail));
            if !go {
                return Ok(Outcome { n_studies: n - 1, rejected: false, capped: false });
            }
            self.ensure_latent(n)?;
            if self.best[n - 1] >= z {
                return Ok(Outcome { n_studies: n, rejected: true, capped: false });
            }
            n += 1;
        }
    }

    /// Outcome when beliefs ignore the history: the researcher is willing to run
    /// exactly `limit` studies, and would go past `limit` iff `wants_more`.
    pub(crate) fn outcome_with_limit(&mut self, z: f64, limit: usize, wants_more: bool) -> Result<Outcome> {
        while self.latent.len() < limit && self.best.last().is_none_or(|&b| b < z) {
            self.ensure_latent(self.latent.len() + 1)?;
        }
        let seen = limit.min(self.best.len());
        if seen > 0 && self.best[seen - 1] >= z {
            let first = self.best[..seen].partition_point(|&b| b < z) + 1;
            return Ok(Outcome { n_studies: first, rejected: true, capped: false });
        }
        Ok(Outcome { n_studies: limit, rejected: false, capped: wants_more })
    }
}
