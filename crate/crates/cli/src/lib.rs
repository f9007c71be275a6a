//! Command-line front end for `iccv-core`.
//!
//! Every subcommand reads a [`RunConfig`] (defaults, then `--config`, then
//! flags), echoes it to stderr as TOML, and writes one table as CSV or JSON.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};
use iccv_core::calib::{calibrate_prior, cost_ratio_bounds_table, elicitation_bounds, read_studies_path};
use iccv_core::priors::Prior;
use iccv_core::solver::{baseline_threshold, check_reps, estimate_power, find_iccv, tally};
use iccv_core::Error;
use thiserror::Error as ThisError;

pub use config::RunConfig;
use config::{Axis, CostKind, Overrides, PriorKind};
use output::Table;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "iccv", version, about = "Critical values that keep test size at the nominal level when researchers run repeated studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smallest critical value on the grid that keeps size at or below alpha.
    Iccv(Overrides),
    /// Rejection rate under the null at --z.
    Size(Overrides),
    /// Rejection rate at --z when the true effect is --theta.
    Power(Overrides),
    /// Critical value at which a fixed-belief researcher stops doing research
    /// (constant cost; --cost-kind auto means constant here).
    BaselineThreshold(Overrides),
    /// Size at --z and the critical value across a range of one parameter.
    Sweep(Overrides),
    /// Average number of studies under the null at --z.
    MeanStudies(Overrides),
    /// Normal prior for the standardized effect from matched-pairs summaries.
    CalibratePrior(Overrides),
    /// Cost-benefit ratio bounds implied by a typical number of studies.
    Elicit(Overrides),
    /// Cost-benefit ratio bounds for 1..=nmax typical studies, next to the published table.
    Table2(Overrides),
}

impl Command {
    fn parts(&self) -> (&'static str, &Overrides) {
        match self {
            Command::Iccv(o) => ("iccv", o),
            Command::Size(o) => ("size", o),
            Command::Power(o) => ("power", o),
            Command::BaselineThreshold(o) => ("baseline-threshold", o),
            Command::Sweep(o) => ("sweep", o),
            Command::MeanStudies(o) => ("mean-studies", o),
            Command::CalibratePrior(o) => ("calibrate-prior", o),
            Command::Elicit(o) => ("elicit", o),
            Command::Table2(o) => ("table2", o),
        }
    }
}

/// Published cost-ratio bounds for `n̄ = 1..=7`.
pub const TABLE2_REFERENCE_LOWER: [f64; 7] = [0.366, 0.266, 0.212, 0.180, 0.158, 0.142, 0.130];
pub const TABLE2_REFERENCE_UPPER: [f64; 7] = [0.596, 0.366, 0.266, 0.212, 0.180, 0.158, 0.142];

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let (name, ov) = command.parts();
    let mut cfg = RunConfig::resolve(ov)?;
    cfg.settle_cost_kind((name == "baseline-threshold").then_some(CostKind::Constant));
    let _ = write!(err, "# resolved configuration\n{}", cfg.to_toml());

    let job = || -> Result<(Table, Vec<String>), CliError> {
        match command {
            Command::Iccv(_) => iccv(&cfg),
            Command::Size(_) => size(&cfg),
            Command::Power(_) => power(&cfg),
            Command::BaselineThreshold(_) => threshold(&cfg),
            Command::Sweep(_) => sweep(&cfg),
            Command::MeanStudies(_) => mean_studies(&cfg),
            Command::CalibratePrior(_) => calibrate(&cfg),
            Command::Elicit(_) => elicit(&cfg),
            Command::Table2(_) => table2(&cfg),
        }
    };
    let (table, notes) = match ov.workers {
        Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Io(format!("cannot start worker threads: {e}")))?
            .install(job)?,
        None => job()?,
    };
    for note in notes {
        let _ = writeln!(err, "note: {note}");
    }
    match &cfg.out {
        Some(path) => {
            let bytes = table.render(cfg.format)?;
            std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
        }
        None => table.write_to(cfg.format, out),
    }
}

type Outcome = Result<(Table, Vec<String>), CliError>;

fn iccv(cfg: &RunConfig) -> Outcome {
    let exp = cfg.build_experiment()?;
    let r = find_iccv(&exp, cfg.alpha, cfg.reps, cfg.seed, &cfg.grid())?;
    let mut t = Table::new(
        "iccv",
        &[
            "model", "tail", "alpha", "z_star", "size", "std_error", "reps", "cap_hit_rate", "mean_studies",
            "nonzero_power", "grid_step",
        ],
    );
    t.push(vec![
        cfg.model_name().into(),
        cfg.tail_name().into(),
        cfg.alpha.into(),
        r.z_star.into(),
        r.size_at_z.size.value().into(),
        r.size_at_z.std_error.into(),
        r.size_at_z.reps.into(),
        r.size_at_z.cap_hit_rate.value().into(),
        r.mean_studies.into(),
        r.nonzero_power.into(),
        r.grid_step.into(),
    ]);
    Ok((t, Vec::new()))
}

fn size(cfg: &RunConfig) -> Outcome {
    let exp = cfg.build_experiment()?;
    check_reps(cfg.reps)?;
    let tl = tally(&exp, &[cfg.z], 0.0, cfg.reps, cfg.seed)?[0];
    let e = tl.estimate();
    let mut t = Table::new(
        "size",
        &["model", "tail", "z", "size", "std_error", "reps", "cap_hit_rate", "mean_studies"],
    );
    t.push(vec![
        cfg.model_name().into(),
        cfg.tail_name().into(),
        cfg.z.into(),
        e.size.value().into(),
        e.std_error.into(),
        e.reps.into(),
        e.cap_hit_rate.value().into(),
        tl.mean_studies().into(),
    ]);
    Ok((t, Vec::new()))
}

fn power(cfg: &RunConfig) -> Outcome {
    let exp = cfg.build_experiment()?;
    let e = estimate_power(&exp, cfg.z, cfg.theta, cfg.reps, cfg.seed)?;
    let mut t = Table::new(
        "power",
        &["model", "tail", "z", "theta", "power", "std_error", "reps", "cap_hit_rate"],
    );
    t.push(vec![
        cfg.model_name().into(),
        cfg.tail_name().into(),
        cfg.z.into(),
        cfg.theta.into(),
        e.size.value().into(),
        e.std_error.into(),
        e.reps.into(),
        e.cap_hit_rate.value().into(),
    ]);
    Ok((t, Vec::new()))
}

fn threshold(cfg: &RunConfig) -> Outcome {
    let incentives = cfg.build_incentives()?;
    let z = baseline_threshold(&cfg.build_prior()?, &incentives, cfg.tail())?;
    let mut t = Table::new("baseline-threshold", &["tail", "cost_ratio", "z_threshold"]);
    t.push(vec![cfg.tail_name().into(), (cfg.c0 / cfg.payoff).into(), z.into()]);
    Ok((t, Vec::new()))
}

fn mean_studies(cfg: &RunConfig) -> Outcome {
    let exp = cfg.build_experiment()?;
    check_reps(cfg.reps)?;
    let tl = tally(&exp, &[cfg.z], 0.0, cfg.reps, cfg.seed)?[0];
    let mut t = Table::new("mean-studies", &["model", "tail", "z", "mean_studies", "reps"]);
    t.push(vec![
        cfg.model_name().into(),
        cfg.tail_name().into(),
        cfg.z.into(),
        tl.mean_studies().into(),
        tl.reps.into(),
    ]);
    Ok((t, Vec::new()))
}

/// Evenly spaced values from `lo` to `hi`; a single point sits at `lo`.
pub fn sweep_values(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect(),
    }
}

fn sweep(cfg: &RunConfig) -> Outcome {
    if cfg.sweep_points == 0 {
        return Err(CliError::Usage("--sweep-points must be at least 1".into()));
    }
    if matches!(cfg.axis, Axis::PriorMean | Axis::PriorSd) && cfg.prior != PriorKind::Normal {
        return Err(CliError::Usage(format!("the {} axis needs a normal prior", cfg.axis.name())));
    }
    let (dlo, dhi) = cfg.axis.default_range();
    let (lo, hi) = (cfg.sweep_lo.unwrap_or(dlo), cfg.sweep_hi.unwrap_or(dhi));
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(CliError::Usage(format!("sweep range must satisfy lo <= hi, got [{lo}, {hi}]")));
    }
    check_reps(cfg.reps)?;
    let mut t = Table::new(
        "sweep",
        &[
            "axis", "value", "model", "tail", "z", "size_at_z", "size_std_error", "z_star", "size_at_z_star",
            "mean_studies_at_z_star",
        ],
    );
    let mut notes = Vec::new();
    for value in sweep_values(lo, hi, cfg.sweep_points) {
        let mut c = cfg.clone();
        match cfg.axis {
            Axis::PriorMean => c.mu = value,
            Axis::PriorSd => c.sigma = value,
            Axis::CostRatio => c.c0 = value * c.payoff,
            Axis::Epsilon => c.epsilon = value,
        }
        let exp = c.build_experiment()?;
        let at_z = tally(&exp, &[c.z], 0.0, c.reps, c.seed)?[0].estimate();
        let (z_star, size_star, studies_star) = match find_iccv(&exp, c.alpha, c.reps, c.seed, &c.grid()) {
            Ok(r) => (Some(r.z_star), Some(r.size_at_z.size.value()), Some(r.mean_studies)),
            Err(e @ Error::SearchFailed { .. }) => {
                notes.push(format!("{} = {value}: {e}", cfg.axis.name()));
                (None, None, None)
            }
            Err(e) => return Err(e.into()),
        };
        t.push(vec![
            cfg.axis.name().into(),
            value.into(),
            c.model_name().into(),
            c.tail_name().into(),
            c.z.into(),
            at_z.size.value().into(),
            at_z.std_error.into(),
            z_star.into(),
            size_star.into(),
            studies_star.into(),
        ]);
    }
    Ok((t, notes))
}

fn calibrate(cfg: &RunConfig) -> Outcome {
    let path = cfg
        .studies
        .as_ref()
        .ok_or_else(|| CliError::Usage("calibrate-prior needs --studies <PATH>".into()))?;
    let studies = read_studies_path(path)?;
    let prior = calibrate_prior(&studies, cfg.target_n)?;
    let (kind, mean, sd) = match prior {
        Prior::Normal { mean, sd } => ("normal", mean, sd),
        Prior::PointMass { theta } => ("point-mass", theta, 0.0),
        Prior::Uniform { .. } => unreachable!("calibration yields a normal or a point mass"),
    };
    let mut t = Table::new("calibrate-prior", &["kind", "mean", "sd", "studies", "target_n"]);
    t.push(vec![kind.into(), mean.into(), sd.into(), (studies.len() as u64).into(), cfg.target_n.into()]);
    Ok((t, Vec::new()))
}

fn elicit(cfg: &RunConfig) -> Outcome {
    let (lower, upper) = elicitation_bounds(cfg.n_bar, cfg.z, &cfg.build_prior()?)?;
    let mut t = Table::new("elicit", &["n_bar", "z", "mu", "sigma", "lower", "upper"]);
    t.push(vec![
        cfg.n_bar.into(),
        cfg.z.into(),
        cfg.mu.into(),
        cfg.sigma.into(),
        lower.value().into(),
        upper.value().into(),
    ]);
    Ok((t, Vec::new()))
}

fn table2(cfg: &RunConfig) -> Outcome {
    let rows = cost_ratio_bounds_table(cfg.z, &cfg.build_prior()?, cfg.nmax)?;
    let ratio = cfg.cost_ratio.unwrap_or(cfg.c0 / cfg.payoff);
    let mut t = Table::new(
        "table2",
        &["n_bar", "lower", "upper", "reference_lower", "reference_upper", "contains_cost_ratio"],
    );
    let mut notes = Vec::new();
    for r in &rows {
        let idx = (r.n_bar - 1) as usize;
        t.push(vec![
            r.n_bar.into(),
            r.lower.value().into(),
            r.upper.value().into(),
            TABLE2_REFERENCE_LOWER.get(idx).copied().into(),
            TABLE2_REFERENCE_UPPER.get(idx).copied().into(),
            (r.lower.value() < ratio && ratio <= r.upper.value()).into(),
        ]);
    }
    if iccv_core::calib::implied_n_bar(&rows, ratio).is_none() {
        notes.push(format!("cost-benefit ratio {ratio} lies outside every row of the table"));
    }
    Ok((t, notes))
}
