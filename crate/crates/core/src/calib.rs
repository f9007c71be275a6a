//! Prior calibration from matched-pairs study summaries, and bounds on the
//! cost-benefit ratio implied by a typical number of attempts.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{norm_cdf, norm_sf, Probability};
use crate::error::{invalid, Error, Result};
use crate::priors::Prior;

/// Summary of a binary-outcome experiment in which each of `n` subjects is
/// observed under both arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairsStudy {
    pub n: u64,
    pub sum_x: u64,
    pub sum_y: u64,
    /// Estimated effect; defaults to `(sum_x − sum_y) / n`.
    #[serde(default)]
    pub beta_hat: Option<f64>,
}

impl MatchedPairsStudy {
    pub fn new(n: u64, sum_x: u64, sum_y: u64) -> Result<Self> {
        let s = Self { n, sum_x, sum_y, beta_hat: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InconsistentSummary(format!("a study needs n >= 2 subjects, got {}", self.n)));
        }
        if self.sum_x > self.n || self.sum_y > self.n {
            return Err(Error::InconsistentSummary(format!(
                "arm totals ({}, {}) exceed the number of subjects {}",
                self.sum_x, self.sum_y, self.n
            )));
        }
        if let Some(b) = self.beta_hat {
            if !b.is_finite() {
                return Err(Error::InconsistentSummary(format!("beta_hat must be finite, got {b}")));
            }
        }
        Ok(())
    }

    pub fn beta_hat(&self) -> f64 {
        self.beta_hat.unwrap_or((self.sum_x as f64 - self.sum_y as f64) / self.n as f64)
    }
}

/// Range of sample standard deviations of the paired differences consistent with the margins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdBounds {
    pub sd_lb: f64,
    pub sd_mid: f64,
    pub sd_ub: f64,
}

/// Bounds the sd of `x_i − y_i` using `0 ≤ Σ x_i y_i ≤ min(Σx, Σy)`:
/// `sd² = (Σx + Σy − 2Σxy − nβ̂²)/(n − 1)`.
pub fn matched_pairs_sd_bounds(study: &MatchedPairsStudy) -> Result<SdBounds> {
    study.validate()?;
    let n = study.n as f64;
    let beta = study.beta_hat();
    let upper_num = study.sum_x as f64 + study.sum_y as f64 - n * beta * beta;
    if upper_num < 0.0 {
        return Err(Error::InconsistentSummary(format!(
            "n * beta_hat^2 = {} exceeds sum_x + sum_y = {}",
            n * beta * beta,
            study.sum_x + study.sum_y
        )));
    }
    let lower_num = (upper_num - 2.0 * study.sum_x.min(study.sum_y) as f64).max(0.0);
    let sd_ub = (upper_num / (n - 1.0)).sqrt();
    let sd_lb = (lower_num / (n - 1.0)).sqrt();
    Ok(SdBounds { sd_lb, sd_mid: 0.5 * (sd_lb + sd_ub), sd_ub })
}

/// Normal prior for the t-statistic of a study with `target_n` subjects: each
/// study's t-statistic `√n β̂ / sd_mid` is rescaled by `√(target_n / n)` and the
/// results are averaged with weights proportional to `n`. Zero dispersion gives
/// a point mass.
pub fn calibrate_prior(studies: &[MatchedPairsStudy], target_n: f64) -> Result<Prior> {
    if studies.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: studies.len() });
    }
    if !(target_n.is_finite() && target_n > 0.0) {
        return Err(invalid(format!("target sample size must be finite and > 0, got {target_n}")));
    }
    let mut scaled = Vec::with_capacity(studies.len());
    for s in studies {
        let bounds = matched_pairs_sd_bounds(s)?;
        if bounds.sd_mid <= 0.0 {
            return Err(Error::InconsistentSummary(format!(
                "study with n = {} has zero outcome dispersion, its t-statistic is undefined",
                s.n
            )));
        }
        let n = s.n as f64;
        let t = n.sqrt() * s.beta_hat() / bounds.sd_mid;
        scaled.push((n, (target_n / n).sqrt() * t));
    }
    let total: f64 = scaled.iter().map(|(n, _)| n).sum();
    let mean: f64 = scaled.iter().map(|(n, t)| n / total * t).sum();
    let variance: f64 = scaled.iter().map(|(n, t)| n / total * (t - mean).powi(2)).sum();
    if variance <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return Prior::point_mass(mean);
    }
    Prior::normal(mean, variance.sqrt())
}

#[derive(Deserialize)]
struct StudyRow {
    n: u64,
    sum_x: u64,
    sum_y: u64,
    beta_hat: Option<f64>,
}

/// Reads studies from CSV with header `n,sum_x,sum_y,beta_hat`; `beta_hat` may be empty.
pub fn read_studies<R: Read>(reader: R) -> Result<Vec<MatchedPairsStudy>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Input(e.to_string()))?.clone();
    let expected = ["n", "sum_x", "sum_y", "beta_hat"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Input(format!(
            "expected header `{}`, got `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<StudyRow>().enumerate() {
        let row = row.map_err(|e| Error::Input(format!("row {}: {e}", i + 1)))?;
        let study = MatchedPairsStudy { n: row.n, sum_x: row.sum_x, sum_y: row.sum_y, beta_hat: row.beta_hat };
        study.validate()?;
        out.push(study);
    }
    Ok(out)
}

pub fn read_studies_path(path: &Path) -> Result<Vec<MatchedPairsStudy>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    read_studies(file)
}

fn normal_parts(prior: &Prior) -> Result<(f64, f64)> {
    match *prior {
        Prior::Normal { mean, sd } => {
            prior.validate()?;
            Ok((mean, sd))
        }
        _ => Err(Error::Unsupported(format!("cost-ratio bounds need a normal prior, got {prior:?}"))),
    }
}

/// Prior-predictive probability that the `m`-th pooled statistic clears `z`
/// when the previous one is a null draw; both elicitation bounds are values of it.
fn pooled_pass_prob(m: u64, z: f64, mean: f64, sd: f64) -> f64 {
    let mf = m as f64;
    let scale = (sd * sd + mf).sqrt();
    norm_sf((mf.sqrt() * z - mean) / scale) + norm_cdf((-mf.sqrt() * z - mean) / scale)
}

/// Bounds on `c/v` for a researcher who typically stops after `n_bar` studies:
/// study `n_bar` was worth running (upper) and study `n_bar + 1` was not (lower).
pub fn elicitation_bounds(n_bar: u64, z: f64, prior: &Prior) -> Result<(Probability, Probability)> {
    let (mean, sd) = normal_parts(prior)?;
    if n_bar < 1 {
        return Err(invalid("the typical number of studies must be at least 1"));
    }
    if !(z.is_finite() && z >= 0.0) {
        return Err(invalid(format!("critical value must be finite and non-negative, got {z}")));
    }
    Ok((
        Probability::saturating(pooled_pass_prob(n_bar + 1, z, mean, sd)),
        Probability::saturating(pooled_pass_prob(n_bar, z, mean, sd)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub n_bar: u64,
    pub lower: Probability,
    pub upper: Probability,
}

pub fn cost_ratio_bounds_table(z: f64, prior: &Prior, n_bar_max: u64) -> Result<Vec<BoundsRow>> {
    if n_bar_max < 1 {
        return Err(invalid("the table needs at least one row"));
    }
    (1..=n_bar_max)
        .map(|n_bar| elicitation_bounds(n_bar, z, prior).map(|(lower, upper)| BoundsRow { n_bar, lower, upper }))
        .collect()
}

/// The `n̄` with `lower(n̄) < ratio ≤ upper(n̄)` among the table rows, if any.
pub fn implied_n_bar(rows: &[BoundsRow], ratio: f64) -> Option<u64> {
    rows.iter().find(|r| r.lower.value() < ratio && ratio <= r.upper.value()).map(|r| r.n_bar)
}
