//! Control laws acting on the influence weights.
//!
//! Every law steers the weighted barycenter toward a target `x*` by
//! choosing per-agent log-rates `u_i`. The steepest-descent laws minimise
//! the instantaneous derivative of `X = |xbar - x*|^2`, which is linear in
//! `u`, so each reduces to a small linear program over the control set.

use thiserror::Error;

use crate::geometry::{self, barycentric_coords, GeometryError};
use crate::model::SystemState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("internal consistency: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, ControlError>;

/// Pointwise bound on the control vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormBound {
    /// `|u_i| <= alpha` for every agent.
    Linf { alpha: f64 },
    /// `sum |u_i| <= budget`.
    L1 { budget: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSet {
    pub bound: NormBound,
    /// Adds the constraint `sum m_i u_i = 0`.
    pub mass_conserving: bool,
}

impl ControlSet {
    pub fn new(bound: NormBound, mass_conserving: bool) -> Result<Self> {
        let value = match bound {
            NormBound::Linf { alpha } => alpha,
            NormBound::L1 { budget } => budget,
        };
        if !(value > 0.0 && value.is_finite()) {
            return Err(ControlError::Parameter(format!(
                "control bound must be positive, got {value}"
            )));
        }
        Ok(Self {
            bound,
            mass_conserving,
        })
    }

    /// Membership check with relative slack `rel_tol`.
    pub fn contains(&self, u: &[f64], weights: &[f64], rel_tol: f64) -> bool {
        let (norm, bound) = match self.bound {
            NormBound::Linf { alpha } => (u.iter().fold(0.0_f64, |a, v| a.max(v.abs())), alpha),
            NormBound::L1 { budget } => (u.iter().map(|v| v.abs()).sum(), budget),
        };
        if norm > bound * (1.0 + rel_tol) {
            return false;
        }
        if self.mass_conserving {
            let net: f64 = u.iter().zip(weights).map(|(a, b)| a * b).sum();
            let total: f64 = weights.iter().sum();
            return net.abs() <= 1e-10 * bound * total;
        }
        true
    }
}

/// Which expression of `dX/dt` the coefficients come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostForm {
    /// `c_i = m_i <xbar - x*, x_i - x*>`, valid on `sum m_i u_i = 0`.
    Conserving,
    /// `c_i = m_i <xbar - x*, x_i - xbar>`, valid for any `u`.
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostVector {
    pub coefficients: Vec<f64>,
    pub form: CostForm,
}

impl CostVector {
    pub fn objective(&self, u: &[f64]) -> f64 {
        self.coefficients.iter().zip(u).map(|(c, v)| c * v).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn cost_vector(state: &SystemState, target: &[f64], form: CostForm) -> CostVector {
    let bar = geometry::barycenter(state);
    let offset = sub(&bar, target);
    let anchor = match form {
        CostForm::Conserving => target,
        CostForm::Free => bar.as_slice(),
    };
    let coefficients = state
        .points()
        .iter()
        .zip(state.weights())
        .map(|(x, &m)| m * dot(&offset, &sub(x, anchor)))
        .collect();
    CostVector { coefficients, form }
}

/// Minimises `sum c_i u_i` over `|u_i| <= alpha`, `sum m_i u_i = 0`.
///
/// With `v_i = m_i u_i` this is a fractional knapsack: agents with the
/// smallest ratio `c_i / m_i` receive `+alpha`, the largest `-alpha`, and a
/// single agent takes whatever value balances `sum v_i = 0`.
pub fn solve_box_hyperplane(c: &[f64], m: &[f64], alpha: f64) -> Vec<f64> {
    let n = c.len();
    let ratios: Vec<f64> = c.iter().zip(m).map(|(ci, mi)| ci / mi).collect();
    if ratios.iter().all(|&r| r == ratios[0]) {
        // The objective is constant on the feasible set.
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps lower indices first among equal ratios.
    order.sort_by(|&a, &b| ratios[a].total_cmp(&ratios[b]));

    // Shifted variable w_i = v_i + alpha m_i in [0, 2 alpha m_i] must sum to
    // alpha * sum m_i; fill the cheapest agents first.
    let mut remaining: f64 = alpha * m.iter().sum::<f64>();
    let mut v = vec![0.0; n];
    let mut fractional = None;
    for &i in &order {
        let cap = 2.0 * alpha * m[i];
        if fractional.is_none() && remaining >= cap {
            v[i] = alpha * m[i];
            remaining -= cap;
        } else if fractional.is_none() {
            fractional = Some(i);
        } else {
            v[i] = -alpha * m[i];
        }
    }
    if let Some(k) = fractional {
        let others: f64 = v.iter().sum();
        v[k] = (-others).clamp(-alpha * m[k], alpha * m[k]);
    }
    let mut u: Vec<f64> = v.iter().zip(m).map(|(vi, mi)| vi / mi).collect();
    for &i in &order {
        if Some(i) != fractional {
            u[i] = u[i].signum() * alpha;
        }
    }
    u
}

/// Minimises `sum c_i u_i` over `sum |u_i| <= budget`, `sum m_i u_i = 0`.
///
/// Vertices of this polytope are supported on two agents. For a pair
/// `(i, j)` the saturating vertex has `m_i u_i = -m_j u_j = w` with
/// `|w| = budget m_i m_j / (m_i + m_j)`; the best pair wins, the
/// lexicographically smallest on ties. Returns zero if no pair decreases
/// the objective.
pub fn solve_diamond_hyperplane(c: &[f64], m: &[f64], budget: f64) -> Vec<f64> {
    let n = c.len();
    let ratios: Vec<f64> = c.iter().zip(m).map(|(ci, mi)| ci / mi).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let scale = budget * m[i] * m[j] / (m[i] + m[j]);
            let value = -scale * (ratios[i] - ratios[j]).abs();
            if value < 0.0 && best.is_none_or(|(b, _, _)| value < b) {
                best = Some((value, i, j));
            }
        }
    }
    let mut u = vec![0.0; n];
    if let Some((_, i, j)) = best {
        let magnitude = budget * m[i] * m[j] / (m[i] + m[j]);
        let w = if ratios[i] > ratios[j] {
            -magnitude
        } else {
            magnitude
        };
        u[i] = w / m[i];
        u[j] = -w / m[j];
    }
    u
}

fn sign_with_tolerance(value: f64, scale: f64) -> f64 {
    if value.abs() <= 1e-12 * scale || value == 0.0 {
        0.0
    } else {
        value.signum()
    }
}

/// Instantaneous minimiser of `dX/dt` over the given control set.
pub fn steepest_descent(state: &SystemState, target: &[f64], set: &ControlSet) -> Vec<f64> {
    let n = state.n();
    let m = state.weights();
    match (set.bound, set.mass_conserving) {
        (NormBound::Linf { alpha }, true) => {
            let cost = cost_vector(state, target, CostForm::Conserving);
            solve_box_hyperplane(&cost.coefficients, m, alpha)
        }
        (NormBound::L1 { budget }, true) => {
            let cost = cost_vector(state, target, CostForm::Conserving);
            solve_diamond_hyperplane(&cost.coefficients, m, budget)
        }
        (NormBound::Linf { alpha }, false) => {
            let bar = geometry::barycenter(state);
            let offset = sub(&bar, target);
            let offset_norm = dot(&offset, &offset).sqrt();
            state
                .points()
                .iter()
                .map(|x| {
                    let rel = sub(x, &bar);
                    let scale = offset_norm * dot(&rel, &rel).sqrt();
                    -alpha * sign_with_tolerance(dot(&offset, &rel), scale)
                })
                .collect()
        }
        (NormBound::L1 { budget }, false) => {
            let scores = cost_vector(state, target, CostForm::Free).coefficients;
            let peak = scores.iter().fold(0.0_f64, |a, s| a.max(s.abs()));
            let mut u = vec![0.0; n];
            if peak == 0.0 {
                return u;
            }
            let chosen: Vec<usize> = (0..n)
                .filter(|&i| scores[i].abs() >= peak * (1.0 - 1e-12))
                .collect();
            let share = budget / chosen.len() as f64;
            for i in chosen {
                u[i] = -share * scores[i].signum();
            }
            u
        }
    }
}

/// Control value plus whether a bound-preserving rescale was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: Vec<f64>,
    pub clamped: bool,
}

/// Two-agent feedback from the constant-mass controllability argument:
/// push weight from the agent with the largest score
/// `m_i <xbar - x*, x_i - x*>` onto the one with the smallest.
///
/// The literal construction sets `u_{i-} = alpha m_{i+} / m_{i-}`, which
/// exceeds `alpha` when `m_{i+} > m_{i-}`. With `clamp` both entries are
/// then scaled by `m_{i-} / m_{i+}`, keeping `sum m_i u_i = 0`.
pub fn constructive_theorem1(
    state: &SystemState,
    target: &[f64],
    alpha: f64,
    clamp: bool,
) -> ControlOutput {
    let n = state.n();
    let m = state.weights();
    let zero = ControlOutput {
        u: vec![0.0; n],
        clamped: false,
    };
    let bar = geometry::barycenter(state);
    if bar.iter().zip(target).all(|(a, b)| a == b) {
        return zero;
    }
    let scores = cost_vector(state, target, CostForm::Conserving).coefficients;
    let lowest = (0..n).fold(0, |best, i| if scores[i] < scores[best] { i } else { best });
    let highest = (0..n).fold(0, |best, i| if scores[i] > scores[best] { i } else { best });
    if lowest == highest {
        return zero;
    }
    let mut u = vec![0.0; n];
    u[lowest] = alpha * m[highest] / m[lowest];
    u[highest] = -alpha;
    let clamped = clamp && m[highest] > m[lowest];
    if clamped {
        u[lowest] = alpha;
        u[highest] = -alpha * m[lowest] / m[highest];
    }
    ControlOutput { u, clamped }
}

/// Constant open-loop control steering every weight to `kappa * tau_i`
/// in time `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopPlan {
    pub u: Vec<f64>,
    pub horizon: f64,
    pub kappa: f64,
    pub tau: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
}

/// Shortest admissible horizon when all log-ratios coincide.
pub const MIN_HORIZON: f64 = 1e-6;

/// Builds the constant control of the variable-mass controllability
/// argument: with `r_i = ln(m_i / tau_i)`, `T = (r_max - r_min) / (alpha -
/// alpha_tilde)`, `kappa = exp(r_min - alpha_tilde T)` and
/// `u_i = -ln(m_i / (kappa tau_i)) / T`, every `u_i` lies in
/// `[-alpha, -alpha_tilde]` and `m_i(T) = kappa tau_i` when `psi = 0`.
pub fn open_loop_theorem2(
    initial: &SystemState,
    target: &[f64],
    alpha: f64,
    alpha_tilde: f64,
    tau_min: f64,
) -> Result<OpenLoopPlan> {
    if !(alpha_tilde > 0.0 && alpha > alpha_tilde) {
        return Err(ControlError::Parameter(format!(
            "need alpha > alpha_tilde > 0, got alpha = {alpha}, alpha_tilde = {alpha_tilde}"
        )));
    }
    let coords = barycentric_coords(initial.points(), target, tau_min)?;
    let tau = coords.tau;
    let logs: Vec<f64> = initial
        .weights()
        .iter()
        .zip(&tau)
        .map(|(m, t)| (m / t).ln())
        .collect();
    let r_min = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let horizon = ((r_max - r_min) / (alpha - alpha_tilde)).max(MIN_HORIZON);
    let kappa = (r_min - alpha_tilde * horizon).exp();
    // ln(m_i / (kappa tau_i)) = r_i - ln(kappa) = r_i - r_min + alpha_tilde T.
    let u: Vec<f64> = logs
        .iter()
        .map(|r| -(r - r_min + alpha_tilde * horizon) / horizon)
        .collect();
    let slack = 1e-10 * alpha.max(1.0);
    if let Some((i, v)) = u
        .iter()
        .enumerate()
        .find(|(_, &v)| v < -alpha - slack || v > -alpha_tilde + slack)
    {
        return Err(ControlError::Consistency(format!(
            "u[{i}] = {v} outside [-{alpha}, -{alpha_tilde}]"
        )));
    }
    Ok(OpenLoopPlan {
        u,
        horizon,
        kappa,
        tau,
        r_min,
        r_max,
    })
}

/// Number of entries with `|u_i| > tol * max(1, max |u|)`.
pub fn active_components(u: &[f64], tol: f64) -> usize {
    let peak = u.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    u.iter().filter(|v| v.abs() > tol * peak).count()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LawKind {
    Zero,
    SteepestDescent(ControlSet),
    Constructive {
        alpha: f64,
        clamp: bool,
    },
    /// Constant `u` until `horizon`, zero afterwards.
    OpenLoop {
        u: Vec<f64>,
        horizon: f64,
    },
}

/// A control rule together with its target point.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw {
    pub kind: LawKind,
    pub target: Vec<f64>,
}

impl ControlLaw {
    pub fn new(kind: LawKind, target: Vec<f64>) -> Result<Self> {
        if let LawKind::OpenLoop { horizon, .. } = &kind {
            if !(*horizon > 0.0) {
                return Err(ControlError::Parameter(format!(
                    "open-loop horizon must be positive, got {horizon}"
                )));
            }
        }
        if let LawKind::Constructive { alpha, .. } = &kind {
            if !(*alpha > 0.0) {
                return Err(ControlError::Parameter(format!(
                    "alpha must be positive, got {alpha}"
                )));
            }
        }
        Ok(Self { kind, target })
    }

    pub fn horizon(&self) -> Option<f64> {
        match &self.kind {
            LawKind::OpenLoop { horizon, .. } => Some(*horizon),
            _ => None,
        }
    }

    pub fn evaluate(&self, state: &SystemState) -> Result<ControlOutput> {
        if self.target.len() != state.dim() {
            return Err(ControlError::Parameter(format!(
                "target has dimension {}, state has {}",
                self.target.len(),
                state.dim()
            )));
        }
        let n = state.n();
        let out = match &self.kind {
            LawKind::Zero => ControlOutput {
                u: vec![0.0; n],
                clamped: false,
            },
            LawKind::SteepestDescent(set) => ControlOutput {
                u: steepest_descent(state, &self.target, set),
                clamped: false,
            },
            LawKind::Constructive { alpha, clamp } => {
                constructive_theorem1(state, &self.target, *alpha, *clamp)
            }
            LawKind::OpenLoop { u, horizon } => {
                if u.len() != n {
                    return Err(ControlError::Parameter(format!(
                        "open-loop control of length {} for {n} agents",
                        u.len()
                    )));
                }
                let active = state.t < horizon - 1e-12 * horizon.max(1.0);
                ControlOutput {
                    u: if active { u.clone() } else { vec![0.0; n] },
                    clamped: false,
                }
            }
        };
        Ok(out)
    }
}

/// `dX/dt` for a given effective log-rate vector (control plus intrinsic
/// mass dynamics): `(2 / sum m) sum m_i <xbar - x*, x_i - xbar> rate_i`.
pub fn barycenter_distance_rate(state: &SystemState, target: &[f64], rates: &[f64]) -> f64 {
    let cost = cost_vector(state, target, CostForm::Free);
    2.0 * cost.objective(rates) / state.total_mass()
}
