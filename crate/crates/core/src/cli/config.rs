//! Scenario files: TOML with a fixed key set. Unknown keys are rejected.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::integrate::{ControlSampling, IntegratorConfig, MassMode};
use crate::model::{diameter, InteractionKernel, KernelKind, MassDynamics, SystemState};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    LinfUm,
    L1Um,
    LinfFree,
    L1Free,
    Thm1,
    Thm2,
    Zero,
}

impl Strategy {
    pub const STEEPEST: [Strategy; 4] = [
        Strategy::LinfUm,
        Strategy::L1Um,
        Strategy::LinfFree,
        Strategy::L1Free,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LinfUm => "linf_um",
            Strategy::L1Um => "l1_um",
            Strategy::LinfFree => "linf_free",
            Strategy::L1Free => "l1_free",
            Strategy::Thm1 => "thm1",
            Strategy::Thm2 => "thm2",
            Strategy::Zero => "zero",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            Strategy::LinfUm,
            Strategy::L1Um,
            Strategy::LinfFree,
            Strategy::L1Free,
            Strategy::Thm1,
            Strategy::Thm2,
            Strategy::Zero,
        ]
        .into_iter()
        .find(|s| s.name() == name.trim())
    }

    fn needs_alpha(self) -> bool {
        matches!(
            self,
            Strategy::LinfUm | Strategy::LinfFree | Strategy::Thm1 | Strategy::Thm2
        )
    }

    fn needs_budget(self) -> bool {
        matches!(self, Strategy::L1Um | Strategy::L1Free)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(rename = "N")]
    n: Option<usize>,
    d: Option<usize>,
    strategy: Option<String>,
    alpha: Option<f64>,
    #[serde(rename = "A")]
    budget: Option<f64>,
    alpha_tilde: Option<f64>,
    tau_min: Option<f64>,
    clamp: Option<bool>,
    target: Option<RawTarget>,
    init: Option<RawInit>,
    kernel: Option<RawKernel>,
    psi: Option<RawPsi>,
    integrator: Option<RawIntegrator>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    point: Option<Vec<f64>>,
    blend: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    kind: Option<String>,
    positions: Option<Vec<Vec<f64>>>,
    weights: Option<Vec<f64>>,
    low: Option<f64>,
    high: Option<f64>,
    weight_range: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    kind: Option<String>,
    value: Option<f64>,
    s: Option<Vec<f64>>,
    a: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPsi {
    kind: Option<String>,
    rate: Option<f64>,
    direction: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    h: Option<f64>,
    t_end: Option<f64>,
    stop_eps: Option<f64>,
    mass_floor: Option<f64>,
    mass_mode: Option<String>,
    control_sampling: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Explicit {
        positions: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    /// Positions uniform in `[low, high]^d`, weights uniform in `weight_range`.
    UniformBox {
        low: f64,
        high: f64,
        weight_range: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Point(Vec<f64>),
    /// Convex combination of the initial positions (coefficients normalised).
    Blend(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PsiSpec {
    Zero,
    UniformDecay(f64),
    PairwiseLinear(Vec<f64>),
    Model2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub strategy: Strategy,
    pub alpha: Option<f64>,
    pub budget: Option<f64>,
    pub alpha_tilde: Option<f64>,
    pub tau_min: f64,
    pub clamp: bool,
    pub target: Option<TargetSpec>,
    pub init: InitSpec,
    pub kernel: KernelKind,
    pub psi: PsiSpec,
    pub integrator: IntegratorConfig,
}

/// Fully resolved inputs of one run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub initial: SystemState,
    pub target: Vec<f64>,
    pub kernel: InteractionKernel,
    pub psi: MassDynamics,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

fn positive(field: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(invalid(field, format!("must be positive, got {value}")))
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(text)?;
    let seed = raw.seed.ok_or(ConfigError::Missing("seed"))?;
    let n = raw.n.ok_or(ConfigError::Missing("N"))?;
    let d = raw.d.ok_or(ConfigError::Missing("d"))?;
    if n == 0 {
        return Err(invalid("N", "must be at least 1"));
    }
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    let strategy_name = raw.strategy.ok_or(ConfigError::Missing("strategy"))?;
    let strategy = Strategy::parse(&strategy_name)
        .ok_or_else(|| invalid("strategy", format!("unknown strategy `{strategy_name}`")))?;

    let alpha = raw.alpha.map(|v| positive("alpha", v)).transpose()?;
    let budget = raw.budget.map(|v| positive("A", v)).transpose()?;
    let alpha_tilde = raw
        .alpha_tilde
        .map(|v| positive("alpha_tilde", v))
        .transpose()?;
    if strategy.needs_alpha() && alpha.is_none() {
        return Err(ConfigError::Missing("alpha"));
    }
    if strategy.needs_budget() && budget.is_none() {
        return Err(ConfigError::Missing("A"));
    }
    if strategy == Strategy::Thm2 {
        let at = alpha_tilde.ok_or(ConfigError::Missing("alpha_tilde"))?;
        if at >= alpha.unwrap() {
            return Err(invalid("alpha_tilde", "must be smaller than alpha"));
        }
    }
    let tau_min = raw
        .tau_min
        .map(|v| positive("tau_min", v))
        .transpose()?
        .unwrap_or(1e-3);

    let target = match raw.target {
        None => None,
        Some(RawTarget {
            point: Some(p),
            blend: None,
        }) => {
            if p.len() != d {
                return Err(invalid(
                    "target.point",
                    format!("expected {d} coordinates, got {}", p.len()),
                ));
            }
            Some(TargetSpec::Point(p))
        }
        Some(RawTarget {
            point: None,
            blend: Some(b),
        }) => {
            if b.len() != n {
                return Err(invalid(
                    "target.blend",
                    format!("expected {n} coefficients, got {}", b.len()),
                ));
            }
            if b.iter().any(|&c| !(c >= 0.0)) || !(b.iter().sum::<f64>() > 0.0) {
                return Err(invalid(
                    "target.blend",
                    "coefficients must be nonnegative with positive sum",
                ));
            }
            Some(TargetSpec::Blend(b))
        }
        Some(_) => return Err(invalid("target", "give exactly one of `point` or `blend`")),
    };
    if strategy != Strategy::Zero && target.is_none() {
        return Err(ConfigError::Missing("target"));
    }

    let init = parse_init(raw.init.ok_or(ConfigError::Missing("init"))?, n, d)?;
    let kernel = parse_kernel(raw.kernel.ok_or(ConfigError::Missing("kernel.kind"))?)?;
    let psi = match raw.psi {
        None => PsiSpec::Zero,
        Some(p) => parse_psi(p, d)?,
    };
    let integrator = parse_integrator(raw.integrator.ok_or(ConfigError::Missing("integrator.h"))?)?;

    Ok(ScenarioConfig {
        seed,
        n,
        d,
        strategy,
        alpha,
        budget,
        alpha_tilde,
        tau_min,
        clamp: raw.clamp.unwrap_or(true),
        target,
        init,
        kernel,
        psi,
        integrator,
    })
}

fn parse_init(raw: RawInit, n: usize, d: usize) -> Result<InitSpec> {
    let kind = raw.kind.ok_or(ConfigError::Missing("init.kind"))?;
    match kind.as_str() {
        "explicit" => {
            let positions = raw
                .positions
                .ok_or(ConfigError::Missing("init.positions"))?;
            let weights = raw.weights.ok_or(ConfigError::Missing("init.weights"))?;
            if positions.len() != n || positions.iter().any(|p| p.len() != d) {
                return Err(invalid(
                    "init.positions",
                    format!("expected {n} points of dimension {d}"),
                ));
            }
            if weights.len() != n {
                return Err(invalid(
                    "init.weights",
                    format!("expected {n} weights, got {}", weights.len()),
                ));
            }
            if weights.iter().any(|&w| !(w > 0.0)) {
                return Err(invalid("init.weights", "weights must be positive"));
            }
            if positions
                .iter()
                .flatten()
                .chain(&weights)
                .any(|v| !v.is_finite())
            {
                return Err(invalid("init", "values must be finite"));
            }
            Ok(InitSpec::Explicit { positions, weights })
        }
        "uniform_box" => {
            let low = raw.low.ok_or(ConfigError::Missing("init.low"))?;
            let high = raw.high.ok_or(ConfigError::Missing("init.high"))?;
            if !(low < high) {
                return Err(invalid("init.high", "must exceed init.low"));
            }
            let weight_range = raw
                .weight_range
                .ok_or(ConfigError::Missing("init.weight_range"))?;
            if !(weight_range[0] > 0.0 && weight_range[0] <= weight_range[1]) {
                return Err(invalid(
                    "init.weight_range",
                    "weights must be positive with lo <= hi",
                ));
            }
            Ok(InitSpec::UniformBox {
                low,
                high,
                weight_range,
            })
        }
        other => Err(invalid("init.kind", format!("unknown init kind `{other}`"))),
    }
}

fn parse_kernel(raw: RawKernel) -> Result<KernelKind> {
    let kind = raw.kind.ok_or(ConfigError::Missing("kernel.kind"))?;
    match kind.as_str() {
        "gaussian" => Ok(KernelKind::Gaussian),
        "constant" => {
            let value = raw.value.ok_or(ConfigError::Missing("kernel.value"))?;
            if !(value >= 0.0) {
                return Err(invalid("kernel.value", "must be nonnegative"));
            }
            Ok(KernelKind::Constant(value))
        }
        "tabulated" => Ok(KernelKind::Tabulated {
            s: raw.s.ok_or(ConfigError::Missing("kernel.s"))?,
            a: raw.a.ok_or(ConfigError::Missing("kernel.a"))?,
        }),
        other => Err(invalid("kernel.kind", format!("unknown kernel `{other}`"))),
    }
}

fn parse_psi(raw: RawPsi, d: usize) -> Result<PsiSpec> {
    let kind = raw.kind.ok_or(ConfigError::Missing("psi.kind"))?;
    match kind.as_str() {
        "zero" => Ok(PsiSpec::Zero),
        "uniform_decay" => Ok(PsiSpec::UniformDecay(
            raw.rate.ok_or(ConfigError::Missing("psi.rate"))?,
        )),
        "pairwise_linear" => {
            let v = raw.direction.ok_or(ConfigError::Missing("psi.direction"))?;
            if v.len() != d {
                return Err(invalid("psi.direction", format!("expected {d} components")));
            }
            Ok(PsiSpec::PairwiseLinear(v))
        }
        "model2" => Ok(PsiSpec::Model2),
        other => Err(invalid(
            "psi.kind",
            format!("unknown mass dynamics `{other}`"),
        )),
    }
}

fn parse_integrator(raw: RawIntegrator) -> Result<IntegratorConfig> {
    let h = positive(
        "integrator.h",
        raw.h.ok_or(ConfigError::Missing("integrator.h"))?,
    )?;
    let t_end = positive(
        "integrator.t_end",
        raw.t_end.ok_or(ConfigError::Missing("integrator.t_end"))?,
    )?;
    let mut cfg = IntegratorConfig::new(h, t_end);
    if let Some(eps) = raw.stop_eps {
        if !(eps >= 0.0) {
            return Err(invalid("integrator.stop_eps", "must be nonnegative"));
        }
        cfg.stop_eps = eps;
    }
    if let Some(floor) = raw.mass_floor {
        cfg.mass_floor = positive("integrator.mass_floor", floor)?;
    }
    if let Some(mode) = raw.mass_mode {
        cfg.mass_mode = match mode.as_str() {
            "joint_rk4" => MassMode::JointRk4,
            "exact_exponential_splitting" => MassMode::ExponentialSplitting,
            other => {
                return Err(invalid(
                    "integrator.mass_mode",
                    format!("unknown mode `{other}`"),
                ))
            }
        };
    }
    if let Some(sampling) = raw.control_sampling {
        cfg.sampling = match sampling.as_str() {
            "hold" => ControlSampling::Hold,
            "stage" => ControlSampling::Stage,
            other => {
                return Err(invalid(
                    "integrator.control_sampling",
                    format!("unknown sampling `{other}`"),
                ))
            }
        };
    }
    Ok(cfg)
}

impl ScenarioConfig {
    /// Initial positions and weights. Sampling uses ChaCha8 (a counter-based
    /// stream generator) seeded from `seed`; positions are drawn first,
    /// agent by agent, then the weights.
    pub fn initial_state(&self) -> Result<SystemState> {
        let (positions, weights) = match &self.init {
            InitSpec::Explicit { positions, weights } => (positions.clone(), weights.clone()),
            InitSpec::UniformBox {
                low,
                high,
                weight_range,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let positions: Vec<Vec<f64>> = (0..self.n)
                    .map(|_| {
                        (0..self.d)
                            .map(|_| rng.random_range(*low..=*high))
                            .collect()
                    })
                    .collect();
                let weights = (0..self.n)
                    .map(|_| rng.random_range(weight_range[0]..=weight_range[1]))
                    .collect();
                (positions, weights)
            }
        };
        SystemState::new(positions, weights).map_err(|e| invalid("init", e.to_string()))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let initial = self.initial_state()?;
        let target = match &self.target {
            Some(TargetSpec::Point(p)) => p.clone(),
            Some(TargetSpec::Blend(coeffs)) => {
                let total: f64 = coeffs.iter().sum();
                let mut point = vec![0.0; self.d];
                for (x, c) in initial.points().iter().zip(coeffs) {
                    point
                        .iter_mut()
                        .zip(x)
                        .for_each(|(p, xk)| *p += c / total * xk);
                }
                point
            }
            None => crate::geometry::barycenter(&initial),
        };
        let kernel = InteractionKernel::new(self.kernel.clone(), diameter(&initial))
            .map_err(|e| invalid("kernel", e.to_string()))?;
        let psi = match &self.psi {
            PsiSpec::Zero => MassDynamics::Zero,
            PsiSpec::UniformDecay(rate) => MassDynamics::UniformDecay { rate: *rate },
            PsiSpec::PairwiseLinear(v) => MassDynamics::pairwise_linear(v.clone()),
            PsiSpec::Model2 => MassDynamics::model2(kernel.clone()),
        };
        Ok(Resolved {
            initial,
            target,
            kernel,
            psi,
        })
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }
}

/// Seed scenario shipped with the crate: `N = 10`, `d = 2`, `alpha = 2`,
/// `A = 10`, Gaussian kernel.
pub const SEED_SCENARIO: &str = include_str!("../../scenarios/seed_scenario.toml");

pub fn seed_scenario() -> ScenarioConfig {
    parse_config(SEED_SCENARIO).expect("bundled seed scenario parses")
}
