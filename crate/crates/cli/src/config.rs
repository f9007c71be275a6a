//! Run configuration: defaults, a flat TOML file, and command-line flags, in
//! increasing order of precedence.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use iccv_core::behavior::{BehaviorModel, CostSchedule, GeneralModel, Incentives, MeanScaling, OmegaSpec};
use iccv_core::priors::{Prior, Tail};
use iccv_core::solver::{Experiment, ZGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Baseline,
    IncreasingCost,
    Learning,
    Pooling,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Normal,
    Uniform,
    PointMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// Power law for the increasing-cost model, constant otherwise.
    Auto,
    PowerLaw,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TailKind {
    TwoSided,
    #[value(alias = "upper-one-sided")]
    #[serde(alias = "upper-one-sided")]
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaKind {
    Identity,
    Pooling,
    Equicorrelated,
    /// Read from `omega_matrix` in the config file.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaKind {
    Unit,
    SqrtIndex,
    /// Read from `lambda_values` in the config file.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[value(name = "prior_mean")]
    PriorMean,
    #[value(name = "prior_sd")]
    PriorSd,
    #[value(name = "cost_ratio")]
    CostRatio,
    #[value(name = "epsilon")]
    Epsilon,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::PriorMean => "prior_mean",
            Axis::PriorSd => "prior_sd",
            Axis::CostRatio => "cost_ratio",
            Axis::Epsilon => "epsilon",
        }
    }

    pub fn default_range(self) -> (f64, f64) {
        match self {
            Axis::PriorMean => (0.0, 4.0),
            Axis::PriorSd => (0.1, 2.0),
            Axis::CostRatio => (0.05, 1.0),
            Axis::Epsilon => (0.5, 3.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

/// Every setting of a run. Field names are the config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub prior: PriorKind,
    pub mu: f64,
    pub sigma: f64,
    pub prior_lower: f64,
    pub prior_upper: f64,
    pub payoff: f64,
    pub cost_kind: CostKind,
    pub c0: f64,
    pub epsilon: f64,
    pub tail: TailKind,
    pub alpha: f64,
    pub reps: u64,
    pub seed: u64,
    pub cap: usize,
    pub z: f64,
    pub theta: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_step: f64,
    pub omega: OmegaKind,
    pub rho: f64,
    pub lambda: LambdaKind,
    pub sophistication: f64,
    pub jitter: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_values: Option<Vec<f64>>,
    pub axis: Axis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_hi: Option<f64>,
    pub sweep_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub studies: Option<PathBuf>,
    pub target_n: f64,
    pub n_bar: u64,
    pub nmax: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_ratio: Option<f64>,
    pub format: Format,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::IncreasingCost,
            prior: PriorKind::Normal,
            mu: 1.99,
            sigma: 0.40,
            prior_lower: 0.0,
            prior_upper: 4.0,
            payoff: 5000.0,
            cost_kind: CostKind::Auto,
            c0: 933.0,
            epsilon: 1.0,
            tail: TailKind::TwoSided,
            alpha: 0.05,
            reps: 100_000,
            seed: 20_200_501,
            cap: iccv_core::solver::DEFAULT_CAP,
            z: 1.96,
            theta: 1.99,
            grid_lo: 1.645,
            grid_hi: 6.0,
            grid_step: 0.005,
            omega: OmegaKind::Identity,
            rho: 0.0,
            lambda: LambdaKind::Unit,
            sophistication: 1.0,
            jitter: 1e-8,
            omega_matrix: None,
            lambda_values: None,
            axis: Axis::CostRatio,
            sweep_lo: None,
            sweep_hi: None,
            sweep_points: 9,
            studies: None,
            target_n: 48.75,
            n_bar: 4,
            nmax: 7,
            cost_ratio: None,
            format: Format::Csv,
            out: None,
        }
    }
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat TOML file with any of the settings below (snake_case keys).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads for the simulation (results do not depend on it).
    #[arg(long)]
    pub workers: Option<usize>,

    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorKind>,
    /// Prior mean (normal) or location (point mass).
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    /// Prior standard deviation (normal).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Lower end of a uniform prior.
    #[arg(long, allow_hyphen_values = true)]
    pub prior_lower: Option<f64>,
    /// Upper end of a uniform prior.
    #[arg(long, allow_hyphen_values = true)]
    pub prior_upper: Option<f64>,
    /// Expected value of a publication.
    #[arg(long)]
    pub payoff: Option<f64>,
    #[arg(long, value_enum)]
    pub cost_kind: Option<CostKind>,
    /// Cost scale: c(n) = c0 * n^epsilon, or the constant cost.
    #[arg(long)]
    pub c0: Option<f64>,
    /// Cost elasticity.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub tail: Option<TailKind>,
    /// Nominal level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte Carlo replicates.
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum studies per simulated researcher.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Critical value for size, power, mean-studies, elicit and table2.
    #[arg(long)]
    pub z: Option<f64>,
    /// True effect for power.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub grid_lo: Option<f64>,
    #[arg(long)]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    #[arg(long, value_enum)]
    pub omega: Option<OmegaKind>,
    /// Off-diagonal correlation for the equicorrelated covariance.
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long, value_enum)]
    pub lambda: Option<LambdaKind>,
    /// Weight on the prior in the researcher's beliefs (1 = never updates).
    #[arg(long)]
    pub sophistication: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long, value_enum)]
    pub axis: Option<Axis>,
    #[arg(long, allow_hyphen_values = true)]
    pub sweep_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub sweep_hi: Option<f64>,
    #[arg(long)]
    pub sweep_points: Option<usize>,
    /// CSV of study summaries with header n,sum_x,sum_y,beta_hat.
    #[arg(long, value_name = "PATH")]
    pub studies: Option<PathBuf>,
    /// Sample size the calibrated prior is rescaled to.
    #[arg(long)]
    pub target_n: Option<f64>,
    /// Typical number of studies for elicit.
    #[arg(long)]
    pub n_bar: Option<u64>,
    /// Number of rows for table2.
    #[arg(long)]
    pub nmax: Option<u64>,
    /// Cost-benefit ratio to locate in table2 (default c0 / payoff).
    #[arg(long)]
    pub cost_ratio: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Output file (default: standard output).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:expr, $ov:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $ov.$field.clone() { $cfg.$field = v; } )*
    };
}

macro_rules! apply_opt {
    ($cfg:expr, $ov:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $ov.$field.clone() { $cfg.$field = Some(v); } )*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Defaults, then the config file, then flags. `cost_kind` may still be `auto`.
    pub fn resolve(ov: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &ov.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        apply!(cfg, ov; model, prior, mu, sigma, prior_lower, prior_upper, payoff, cost_kind, c0, epsilon,
            tail, alpha, reps, seed, cap, z, theta, grid_lo, grid_hi, grid_step, omega, rho, lambda,
            sophistication, jitter, axis, sweep_points, target_n, n_bar, nmax, format);
        apply_opt!(cfg, ov; sweep_lo, sweep_hi, studies, cost_ratio, out);
        Ok(cfg)
    }

    /// Replaces `cost_kind = auto` by a power law for the increasing-cost
    /// model and a constant cost otherwise, or by `forced` when given.
    pub fn settle_cost_kind(&mut self, forced: Option<CostKind>) {
        if self.cost_kind == CostKind::Auto {
            self.cost_kind = forced.unwrap_or(match self.model {
                ModelKind::IncreasingCost => CostKind::PowerLaw,
                _ => CostKind::Constant,
            });
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn tail(&self) -> Tail {
        match self.tail {
            TailKind::TwoSided => Tail::TwoSided,
            TailKind::Upper => Tail::UpperOneSided,
        }
    }

    pub fn tail_name(&self) -> &'static str {
        match self.tail {
            TailKind::TwoSided => "two-sided",
            TailKind::Upper => "upper",
        }
    }

    pub fn build_prior(&self) -> Result<Prior, CliError> {
        Ok(match self.prior {
            PriorKind::Normal => Prior::normal(self.mu, self.sigma)?,
            PriorKind::Uniform => Prior::uniform(self.prior_lower, self.prior_upper)?,
            PriorKind::PointMass => Prior::point_mass(self.mu)?,
        })
    }

    pub fn build_incentives(&self) -> Result<Incentives, CliError> {
        let cost = match self.cost_kind {
            CostKind::PowerLaw => CostSchedule::PowerLaw { base: self.c0, elasticity: self.epsilon },
            CostKind::Constant => CostSchedule::Constant { cost: self.c0 },
            CostKind::Auto => unreachable!("resolved before use"),
        };
        Ok(Incentives::new(self.payoff, cost)?)
    }

    pub fn build_model(&self) -> Result<BehaviorModel, CliError> {
        Ok(match self.model {
            ModelKind::Baseline => BehaviorModel::Baseline,
            ModelKind::IncreasingCost => BehaviorModel::IncreasingCost,
            ModelKind::Learning => BehaviorModel::Learning,
            ModelKind::Pooling => BehaviorModel::Pooling,
            ModelKind::General => {
                let omega = match self.omega {
                    OmegaKind::Identity => OmegaSpec::Identity,
                    OmegaKind::Pooling => OmegaSpec::Pooling,
                    OmegaKind::Equicorrelated => OmegaSpec::Equicorrelated { rho: self.rho },
                    OmegaKind::Explicit => {
                        let rows = self.omega_matrix.as_ref().ok_or_else(|| {
                            CliError::Usage("omega = \"explicit\" needs omega_matrix in the config file".into())
                        })?;
                        OmegaSpec::from_rows(rows)?
                    }
                };
                let mean_scaling = match self.lambda {
                    LambdaKind::Unit => MeanScaling::Unit,
                    LambdaKind::SqrtIndex => MeanScaling::SqrtIndex,
                    LambdaKind::Explicit => MeanScaling::Explicit(self.lambda_values.clone().ok_or_else(|| {
                        CliError::Usage("lambda = \"explicit\" needs lambda_values in the config file".into())
                    })?),
                };
                let mut g = GeneralModel::new(mean_scaling, omega, self.sophistication);
                g.jitter = self.jitter;
                BehaviorModel::General(g)
            }
        })
    }

    pub fn build_experiment(&self) -> Result<Experiment, CliError> {
        let exp = Experiment::new(self.build_model()?, self.build_prior()?, self.build_incentives()?, self.tail())?;
        Ok(exp.with_cap(self.cap)?)
    }

    pub fn grid(&self) -> ZGrid {
        ZGrid { lo: self.grid_lo, hi: self.grid_hi, step: self.grid_step }
    }

    pub fn model_name(&self) -> &'static str {
        match self.model {
            ModelKind::Baseline => "baseline",
            ModelKind::IncreasingCost => "increasing-cost",
            ModelKind::Learning => "learning",
            ModelKind::Pooling => "pooling",
            ModelKind::General => "general",
        }
    }
}
