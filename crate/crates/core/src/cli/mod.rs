//! Scenario runner: builds a control law from a config, integrates it and
//! writes CSV output.

pub mod acceptance;
pub mod config;

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::control::{
    open_loop_theorem2, ControlError, ControlLaw, ControlSet, LawKind, NormBound,
};
use crate::integrate::{simulate, IntegrateError, Trajectory};

pub use config::{load_config, parse_config, ConfigError, ScenarioConfig, Strategy};

/// Distance below which the target counts as reached in summaries.
pub const THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] IntegrateError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, RunError>;

/// Control law for the configured strategy.
pub fn build_law(config: &ScenarioConfig, resolved: &config::Resolved) -> Result<ControlLaw> {
    let target = resolved.target.clone();
    let alpha = || config.alpha.ok_or(ConfigError::Missing("alpha"));
    let linf = || alpha().map(|alpha| NormBound::Linf { alpha });
    let l1 = || {
        config
            .budget
            .ok_or(ConfigError::Missing("A"))
            .map(|budget| NormBound::L1 { budget })
    };
    let kind = match config.strategy {
        Strategy::Zero => LawKind::Zero,
        Strategy::LinfUm => LawKind::SteepestDescent(ControlSet::new(linf()?, true)?),
        Strategy::L1Um => LawKind::SteepestDescent(ControlSet::new(l1()?, true)?),
        Strategy::LinfFree => LawKind::SteepestDescent(ControlSet::new(linf()?, false)?),
        Strategy::L1Free => LawKind::SteepestDescent(ControlSet::new(l1()?, false)?),
        Strategy::Thm1 => LawKind::Constructive {
            alpha: alpha()?,
            clamp: config.clamp,
        },
        Strategy::Thm2 => {
            let plan = open_loop_theorem2(
                &resolved.initial,
                &target,
                alpha()?,
                config
                    .alpha_tilde
                    .ok_or(ConfigError::Missing("alpha_tilde"))?,
                config.tau_min,
            )?;
            LawKind::OpenLoop {
                u: plan.u,
                horizon: plan.horizon,
            }
        }
    };
    Ok(ControlLaw::new(kind, target)?)
}

/// Integrates one scenario without writing anything.
pub fn simulate_config(config: &ScenarioConfig) -> Result<Trajectory> {
    let resolved = config.resolve()?;
    let law = build_law(config, &resolved)?;
    let mut traj = simulate(
        resolved.initial,
        &law,
        &resolved.psi,
        &resolved.kernel,
        &config.integrator,
    )?;
    traj.seed = Some(config.seed);
    Ok(traj)
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub strategy: String,
    pub time_to_threshold: Option<f64>,
    pub final_dist: f64,
    pub min_total_mass: f64,
    pub max_total_mass: f64,
    pub mean_active: f64,
    pub clamped_steps: usize,
}

impl Summary {
    pub fn of(strategy: &str, traj: &Trajectory) -> Self {
        let masses = traj.samples.iter().map(|s| s.total_mass);
        let n = traj.samples.len() as f64;
        Self {
            strategy: strategy.to_string(),
            time_to_threshold: traj.time_to_threshold(THRESHOLD),
            final_dist: traj.last().target_distance,
            min_total_mass: masses.clone().fold(f64::INFINITY, f64::min),
            max_total_mass: masses.fold(f64::NEG_INFINITY, f64::max),
            mean_active: traj
                .samples
                .iter()
                .map(|s| s.active_count as f64)
                .sum::<f64>()
                / n,
            clamped_steps: traj.samples.iter().filter(|s| s.clamped).count(),
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.strategy.clone(),
            self.time_to_threshold
                .map_or_else(|| "NaN".to_string(), fmt),
            fmt(self.final_dist),
            fmt(self.min_total_mass),
            fmt(self.max_total_mass),
            fmt(self.mean_active),
            self.clamped_steps.to_string(),
        ]
    }
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "strategy",
    "time_to_threshold",
    "final_dist",
    "min_total_mass",
    "max_total_mass",
    "mean_active",
    "clamped_steps",
];

/// Shortest decimal form that parses back to the same `f64`.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn trajectory_header(n: usize, d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 1..=n {
        for k in 1..=d {
            h.push(format!("x_{i}_{k}"));
        }
    }
    h.extend((1..=n).map(|i| format!("m_{i}")));
    h.extend((1..=d).map(|k| format!("bary_{k}")));
    h.extend(["dist_target", "diameter", "total_mass"].map(String::from));
    h
}

pub fn controls_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("u_{i}")));
    h.extend(["active_count", "objective_dXdt"].map(String::from));
    h
}

/// Writes `trajectory.csv` and `controls.csv` for one run.
pub fn write_trajectory(traj: &Trajectory, out_dir: &Path) -> Result<()> {
    let first = &traj.samples[0].state;
    let (n, d) = (first.n(), first.dim());
    let mut tw = csv::Writer::from_path(out_dir.join("trajectory.csv"))?;
    let mut cw = csv::Writer::from_path(out_dir.join("controls.csv"))?;
    tw.write_record(trajectory_header(n, d))?;
    cw.write_record(controls_header(n))?;
    for s in &traj.samples {
        let mut row = vec![fmt(s.t())];
        row.extend(s.state.positions().iter().copied().map(fmt));
        row.extend(s.state.weights().iter().copied().map(fmt));
        row.extend(s.barycenter.iter().copied().map(fmt));
        row.extend([s.target_distance, s.diameter, s.total_mass].map(fmt));
        tw.write_record(&row)?;

        let mut row = vec![fmt(s.t())];
        row.extend(s.control.iter().copied().map(fmt));
        row.push(s.active_count.to_string());
        row.push(fmt(s.objective_dxdt));
        cw.write_record(&row)?;
    }
    tw.flush()?;
    cw.flush()?;
    Ok(())
}

pub fn write_summary(rows: &[Summary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one scenario and writes its three CSV files into `out_dir`.
pub fn run(config: &ScenarioConfig, out_dir: &Path) -> Result<Summary> {
    fs::create_dir_all(out_dir)?;
    let traj = simulate_config(config)?;
    write_trajectory(&traj, out_dir)?;
    let summary = Summary::of(config.strategy.name(), &traj);
    write_summary(std::slice::from_ref(&summary), &out_dir.join("summary.csv"))?;
    Ok(summary)
}

/// Outcome of one strategy inside a comparison.
#[derive(Debug)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub outcome: std::result::Result<Summary, String>,
}

/// Runs each strategy from the same initial data, in parallel, writing the
/// per-run files into `out_dir/<strategy>/` and the table into
/// `out_dir/comparison.csv`. A failing strategy is recorded and the others
/// proceed.
pub fn compare(
    config: &ScenarioConfig,
    strategies: &[Strategy],
    out_dir: &Path,
) -> Result<Vec<ComparisonRow>> {
    fs::create_dir_all(out_dir)?;
    let rows: Vec<ComparisonRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = strategies
            .iter()
            .map(|&strategy| {
                let cfg = config.with_strategy(strategy);
                let dir = out_dir.join(strategy.name());
                scope.spawn(move || {
                    let outcome = run(&cfg, &dir).map_err(|e| e.to_string());
                    ComparisonRow { strategy, outcome }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("strategy run panicked"))
            .collect()
    });

    let mut w = csv::Writer::from_path(out_dir.join("comparison.csv"))?;
    let mut header: Vec<&str> = SUMMARY_HEADER.to_vec();
    header.push("error");
    w.write_record(&header)?;
    for row in &rows {
        match &row.outcome {
            Ok(s) => {
                let mut rec = s.record();
                rec.push(String::new());
                w.write_record(&rec)?;
            }
            Err(e) => {
                let mut rec = vec![row.strategy.name().to_string()];
                rec.extend(std::iter::repeat_n(String::new(), SUMMARY_HEADER.len() - 1));
                rec.push(e.clone());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Parses a comma-separated strategy list.
pub fn parse_strategies(list: &str) -> std::result::Result<Vec<Strategy>, String> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Strategy::parse(s).ok_or_else(|| format!("unknown strategy `{}`", s.trim())))
        .collect()
}
