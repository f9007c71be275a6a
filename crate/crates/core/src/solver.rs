//! Size and power under strategic behavior, and the search for the smallest
//! critical value that keeps size at the nominal level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorModel, CostSchedule, Incentives, Path};
use crate::dist::{norm_sf, Probability, RandomStream};
use crate::error::{invalid, Error, Result};
use crate::priors::{rejection_prob_unchecked, Prior, Tail};

/// Default cap on the number of studies one researcher may run.
pub const DEFAULT_CAP: usize = 10_000;

/// Everything that defines a simulated research environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: BehaviorModel,
    pub prior: Prior,
    pub incentives: Incentives,
    pub tail: Tail,
    pub cap: usize,
}

impl Experiment {
    /// The cap defaults to [`DEFAULT_CAP`], or the model's horizon if that is smaller.
    pub fn new(model: BehaviorModel, prior: Prior, incentives: Incentives, tail: Tail) -> Result<Self> {
        let cap = model.horizon().map_or(DEFAULT_CAP, |h| h.min(DEFAULT_CAP));
        let exp = Self { model, prior, incentives, tail, cap };
        exp.validate()?;
        Ok(exp)
    }

    pub fn with_cap(mut self, cap: usize) -> Result<Self> {
        self.cap = cap;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.incentives.validate()?;
        self.model.validate(&self.prior)?;
        self.model.check_cap(self.cap)
    }
}

/// Rejection frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    pub size: Probability,
    pub std_error: f64,
    pub reps: u64,
    pub cap_hit_rate: Probability,
}

/// Integer counts over replicates at one critical value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub reps: u64,
    pub rejections: u64,
    pub capped: u64,
    pub studies: u64,
}

impl Tally {
    fn merge(&mut self, other: &Tally) {
        self.reps += other.reps;
        self.rejections += other.rejections;
        self.capped += other.capped;
        self.studies += other.studies;
    }

    pub fn estimate(&self) -> SizeEstimate {
        let reps = self.reps.max(1) as f64;
        let size = self.rejections as f64 / reps;
        SizeEstimate {
            size: Probability::saturating(size),
            std_error: (size * (1.0 - size) / reps).sqrt(),
            reps: self.reps,
            cap_hit_rate: Probability::saturating(self.capped as f64 / reps),
        }
    }

    pub fn mean_studies(&self) -> f64 {
        self.studies as f64 / self.reps.max(1) as f64
    }
}

/// Critical values searched: the classical value for the level, then every
/// `lo + k·step` above it up to `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ZGrid {
    fn default() -> Self {
        Self { lo: 1.645, hi: 6.0, step: 0.005 }
    }
}

impl ZGrid {
    /// Grid points at or above `floor`.
    pub fn points(&self, floor: f64) -> Result<Vec<f64>> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite() && self.step > 0.0) {
            return Err(invalid(format!("grid needs finite bounds and step > 0, got {self:?}")));
        }
        let start = self.lo.max(floor);
        if start > self.hi {
            return Err(invalid(format!("grid upper end {} lies below its starting point {start}", self.hi)));
        }
        let mut points = vec![start];
        let first = ((start - self.lo) / self.step).floor() as i64;
        let mut k = first.max(0);
        loop {
            let z = self.lo + k as f64 * self.step;
            if z > self.hi + 1e-12 {
                break;
            }
            if z > start + 1e-12 {
                points.push(z);
            }
            k += 1;
        }
        Ok(points)
    }
}

/// Output of the critical-value search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ICCVResult {
    pub z_star: f64,
    pub size_at_z: SizeEstimate,
    pub grid_step: f64,
    /// Whether a researcher facing `z_star` would run at least one study.
    pub nonzero_power: bool,
    pub mean_studies: f64,
}

/// One point of a size curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub z: f64,
    pub size: SizeEstimate,
    pub mean_studies: f64,
}

/// Simulates `reps` researchers under `theta_true` and counts outcomes at every
/// `z` in `zs` with common random numbers: replicate `r` draws from substream
/// `r` of `seed` whatever the critical value. Results do not depend on the
/// number of worker threads.
pub fn tally(exp: &Experiment, zs: &[f64], theta_true: f64, reps: u64, seed: u64) -> Result<Vec<Tally>> {
    exp.validate()?;
    if let Some(z) = zs.iter().find(|z| !(z.is_finite() && **z >= 0.0)) {
        return Err(invalid(format!("critical values must be finite and non-negative, got {z}")));
    }
    if !theta_true.is_finite() {
        return Err(invalid(format!("true effect must be finite, got {theta_true}")));
    }
    let root = RandomStream::new(seed);
    let first = Path::new(&exp.model, &exp.prior, exp.tail, theta_true, root.rng()).belief(1)?;
    let probs: Vec<f64> = zs.iter().map(|&z| first.rejection_prob(z, exp.tail)).collect();
    let active: Vec<bool> = probs.iter().map(|&p| exp.incentives.worth_it(1, p)).collect();
    let history_free = exp.model.history_free();
    // Beliefs that ignore the history fix the number of studies worth running.
    let limits: Vec<(usize, bool)> = probs
        .iter()
        .map(|&p| {
            let n = exp.incentives.cost.max_affordable(exp.incentives.payoff * p, exp.cap + 1);
            if n > exp.cap {
                (exp.cap, true)
            } else {
                (n, false)
            }
        })
        .collect();

    let m = zs.len();
    (0..reps)
        .into_par_iter()
        .try_fold(
            || vec![Tally::default(); m],
            |mut acc, r| -> Result<Vec<Tally>> {
                let mut path = Path::new(&exp.model, &exp.prior, exp.tail, theta_true, root.substream(r).rng());
                for (j, &z) in zs.iter().enumerate() {
                    let t = &mut acc[j];
                    t.reps += 1;
                    if !active[j] {
                        continue;
                    }
                    let outcome = if history_free {
                        let (limit, wants_more) = limits[j];
                        path.outcome_with_limit(z, limit, wants_more)?
                    } else {
                        path.walk(&exp.incentives, z, exp.cap)?
                    };
                    t.rejections += u64::from(outcome.rejected);
                    t.capped += u64::from(outcome.capped);
                    t.studies += outcome.n_studies as u64;
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![Tally::default(); m],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.merge(y);
                }
                Ok(a)
            },
        )
}

/// Monte Carlo estimates need at least 1000 replicates.
pub fn check_reps(reps: u64) -> Result<()> {
    if reps < 1000 {
        return Err(invalid(format!("at least 1000 replicates are required, got {reps}")));
    }
    Ok(())
}

/// Rejection frequency under the null (`θ = 0`).
pub fn estimate_size(exp: &Experiment, z: f64, reps: u64, seed: u64) -> Result<SizeEstimate> {
    estimate_power(exp, z, 0.0, reps, seed)
}

/// Rejection frequency under `theta_true`; capped runs count as non-rejections.
pub fn estimate_power(exp: &Experiment, z: f64, theta_true: f64, reps: u64, seed: u64) -> Result<SizeEstimate> {
    check_reps(reps)?;
    Ok(tally(exp, &[z], theta_true, reps, seed)?[0].estimate())
}

/// Average number of studies under the null.
pub fn mean_num_studies(exp: &Experiment, z: f64, reps: u64, seed: u64) -> Result<f64> {
    check_reps(reps)?;
    Ok(tally(exp, &[z], 0.0, reps, seed)?[0].mean_studies())
}

/// Null size of `N` independent two-sided (or one-sided) tests at `z`:
/// `1 − (Φ(z) − Φ(−z))^N`, resp. `1 − Φ(z)^N`.
pub fn size_closed_form_iid(z: f64, n: usize, tail: Tail) -> Result<Probability> {
    if !z.is_finite() {
        return Err(invalid(format!("critical value must be finite, got {z}")));
    }
    if tail == Tail::TwoSided && z < 0.0 {
        return Err(invalid(format!("a two-sided critical value must be non-negative, got {z}")));
    }
    if n == 0 {
        return Ok(Probability::saturating(0.0));
    }
    let single = match tail {
        Tail::TwoSided => (2.0 * norm_sf(z)).min(1.0),
        Tail::UpperOneSided => norm_sf(z),
    };
    let size = if single >= 1.0 { 1.0 } else { -(n as f64 * (-single).ln_1p()).exp_m1() };
    Ok(Probability::saturating(size))
}

/// Size curve over the grid points at or above the classical critical value.
pub fn size_curve(exp: &Experiment, alpha: f64, grid: &ZGrid, reps: u64, seed: u64) -> Result<Vec<CurvePoint>> {
    check_reps(reps)?;
    let zs = grid.points(exp.tail.classical_critical_value(alpha)?)?;
    let tallies = tally(exp, &zs, 0.0, reps, seed)?;
    Ok(zs
        .iter()
        .zip(&tallies)
        .map(|(&z, t)| CurvePoint { z, size: t.estimate(), mean_studies: t.mean_studies() })
        .collect())
}

/// The smallest grid point whose size, and the size at every larger grid
/// point, is at most `alpha`.
pub fn iccv_from_curve(exp: &Experiment, alpha: f64, grid_step: f64, curve: &[CurvePoint]) -> Result<ICCVResult> {
    let mut chosen = None;
    for (j, point) in curve.iter().enumerate().rev() {
        if point.size.size.value() <= alpha {
            chosen = Some(j);
        } else {
            break;
        }
    }
    let Some(j) = chosen else {
        let best = curve
            .iter()
            .min_by(|a, b| a.size.size.value().total_cmp(&b.size.size.value()))
            .ok_or_else(|| invalid("empty grid"))?;
        return Err(Error::SearchFailed { alpha, min_size: best.size.size.value(), at_z: best.z });
    };
    let point = curve[j];
    let r1 = rejection_prob_unchecked(&exp.prior, point.z, exp.tail);
    Ok(ICCVResult {
        z_star: point.z,
        size_at_z: point.size,
        grid_step,
        nonzero_power: exp.incentives.worth_it(1, r1),
        mean_studies: point.mean_studies,
    })
}

/// Smallest size-controlling critical value (ICCV) at level `alpha`, by grid search with
/// common random numbers across the grid.
pub fn find_iccv(exp: &Experiment, alpha: f64, reps: u64, seed: u64, grid: &ZGrid) -> Result<ICCVResult> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    let curve = size_curve(exp, alpha, grid, reps, seed)?;
    iccv_from_curve(exp, alpha, grid.step, &curve)
}

/// With constant cost and fixed beliefs a researcher runs no study when
/// `R(z) < c/v` and never stops otherwise; returns the `z` solving `R(z) = c/v`.
pub fn baseline_threshold(prior: &Prior, incentives: &Incentives, tail: Tail) -> Result<f64> {
    prior.validate()?;
    incentives.validate()?;
    let CostSchedule::Constant { cost } = incentives.cost else {
        return Err(Error::Unsupported("the baseline threshold needs a constant cost".into()));
    };
    let ratio = cost / incentives.payoff;
    if ratio <= 0.0 {
        return Err(invalid("with zero cost research always pays and no threshold exists"));
    }
    let r = |z: f64| rejection_prob_unchecked(prior, z, tail);
    let max_prob = r(0.0);
    if ratio >= max_prob {
        return Err(Error::NoThreshold { ratio, max_prob });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while r(hi) >= ratio {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(invalid(format!("rejection probability stays above {ratio} for every z")));
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if r(mid) >= ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
