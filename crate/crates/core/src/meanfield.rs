//! Empirical measures of the agent system and exact checks of the weak
//! transport-with-source formulation on atomic measures.

use thiserror::Error;

use crate::integrate::Trajectory;
use crate::model::{distance, eval_psi, InteractionKernel, MassDynamics, ModelError, SystemState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanFieldError {
    #[error("time {t} outside trajectory range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("time {0} is not a sample time of the trajectory")]
    OffGrid(f64),
    #[error("control is not constant over the differencing window around t = {0}")]
    ControlSwitch(f64),
    #[error("atom weights must be positive")]
    NonPositiveWeight,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, MeanFieldError>;

/// Positively weighted atoms `sum w_i delta_{y_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(MeanFieldError::NonPositiveWeight);
        }
        assert_eq!(positions.len(), dim * weights.len());
        let total = weights.iter().sum();
        Ok(Self {
            dim,
            positions,
            weights,
            total,
        })
    }

    /// `(1/M) sum m_i delta_{x_i}`.
    pub fn from_state(state: &SystemState) -> Self {
        let big_m = state.reference_mass();
        let weights: Vec<f64> = state.weights().iter().map(|m| m / big_m).collect();
        let total = weights.iter().sum();
        Self {
            dim: state.dim(),
            positions: state.positions().to_vec(),
            weights,
            total,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.positions
            .chunks(self.dim)
            .zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, f: &TestFunction) -> f64 {
        self.atoms().map(|(y, w)| w * f.value(y)).sum()
    }
}

/// Atomic measure whose weights may have either sign.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedMeasure {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SignedMeasure {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: &TestFunction) -> f64 {
        self.positions
            .chunks(self.dim)
            .zip(&self.weights)
            .map(|(y, w)| w * f.value(y))
            .sum()
    }
}

/// Smooth test function with analytic gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `x -> x_k`
    Coordinate(usize),
    /// `x -> |x - p|^2`
    Quadratic(Vec<f64>),
    /// `x -> exp(-|x - p|^2 / sigma^2)`
    Bump { center: Vec<f64>, sigma: f64 },
}

impl TestFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Coordinate(k) => x[*k],
            TestFunction::Quadratic(p) => distance(x, p).powi(2),
            TestFunction::Bump { center, sigma } => {
                (-distance(x, center).powi(2) / (sigma * sigma)).exp()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TestFunction::Coordinate(k) => (0..x.len())
                .map(|j| if j == *k { 1.0 } else { 0.0 })
                .collect(),
            TestFunction::Quadratic(p) => x.iter().zip(p).map(|(a, b)| 2.0 * (a - b)).collect(),
            TestFunction::Bump { center, sigma } => {
                let s2 = sigma * sigma;
                let v = self.value(x);
                x.iter()
                    .zip(center)
                    .map(|(a, b)| -2.0 * (a - b) / s2 * v)
                    .collect()
            }
        }
    }
}

/// `V[mu](q) = sum_atoms w a(|q - y|) (y - q)`.
pub fn velocity_field(mu: &EmpiricalMeasure, kernel: &InteractionKernel, q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    for (y, w) in mu.atoms() {
        let coeff = w * kernel.eval(distance(q, y));
        for k in 0..q.len() {
            out[k] += coeff * (y[k] - q[k]);
        }
    }
    out
}

/// Source measure `h[mu]`: atom `i` carries `w_i sum_j w_j S(y_i, y_j)`.
pub fn source_atoms(
    mu: &EmpiricalMeasure,
    source: impl Fn(&[f64], &[f64]) -> f64,
) -> SignedMeasure {
    let weights = mu
        .atoms()
        .map(|(yi, wi)| wi * mu.atoms().map(|(yj, wj)| wj * source(yi, yj)).sum::<f64>())
        .collect();
    SignedMeasure {
        dim: mu.dim,
        positions: mu.positions.clone(),
        weights,
    }
}

/// Source measure for any mass dynamics: atom `i` carries `w_i psi_i`.
/// Coincides with [`source_atoms`] for pairwise dynamics.
fn source_measure(state: &SystemState, psi: &MassDynamics) -> Result<SignedMeasure> {
    let mu = EmpiricalMeasure::from_state(state);
    if let MassDynamics::Pairwise { source, .. } = psi {
        return Ok(source_atoms(&mu, |a, b| source(a, b)));
    }
    let rates = eval_psi(state, psi)?;
    let weights = mu.weights.iter().zip(&rates).map(|(w, r)| w * r).collect();
    Ok(SignedMeasure {
        dim: mu.dim,
        positions: mu.positions,
        weights,
    })
}

fn sample_at(trajectory: &Trajectory, t: f64) -> Result<usize> {
    let samples = &trajectory.samples;
    let (start, end) = (samples[0].t(), trajectory.last().t());
    let slack = 1e-9 * trajectory.config.h;
    if t < start - slack || t > end + slack {
        return Err(MeanFieldError::OutOfRange { t, start, end });
    }
    let idx = samples.partition_point(|s| s.t() < t - slack);
    match samples.get(idx) {
        Some(s) if (s.t() - t).abs() <= slack => Ok(idx),
        _ => Err(MeanFieldError::OffGrid(t)),
    }
}

/// `|D_c - int grad f . V[mu] dmu - int f dh[mu] - int f u dmu|` at time
/// `t`, with `D_c` the centred difference of `int f dmu_N` over
/// `t +- dt_fd`. All integrals are exact sums over atoms. The control term
/// requires `u` to stay constant across the window.
pub fn weak_form_residual(
    trajectory: &Trajectory,
    f: &TestFunction,
    t: f64,
    dt_fd: f64,
) -> Result<f64> {
    let before = sample_at(trajectory, t - dt_fd)?;
    let here = sample_at(trajectory, t)?;
    let after = sample_at(trajectory, t + dt_fd)?;
    let window = &trajectory.samples[before..after];
    if window.iter().any(|s| s.control != window[0].control) {
        return Err(MeanFieldError::ControlSwitch(t));
    }
    let moment = |i: usize| EmpiricalMeasure::from_state(&trajectory.samples[i].state).integrate(f);
    let span = trajectory.samples[after].t() - trajectory.samples[before].t();
    let finite_difference = (moment(after) - moment(before)) / span;

    let sample = &trajectory.samples[here];
    let mu = EmpiricalMeasure::from_state(&sample.state);
    let transport: f64 = mu
        .atoms()
        .map(|(y, w)| {
            let v = velocity_field(&mu, &trajectory.kernel, y);
            w * f
                .gradient(y)
                .iter()
                .zip(&v)
                .map(|(g, vk)| g * vk)
                .sum::<f64>()
        })
        .sum();
    let source = source_measure(&sample.state, &trajectory.psi)?.integrate(f);
    let controlled: f64 = mu
        .atoms()
        .zip(&sample.control)
        .map(|((y, w), u)| w * u * f.value(y))
        .sum();
    Ok((finite_difference - transport - source - controlled).abs())
}

/// Merges agents within `pos_tol` of an earlier agent into it: the first
/// occurrence keeps its position, weights add up. The reference mass is
/// unchanged.
pub fn merge_coincident(state: &SystemState, pos_tol: f64) -> SystemState {
    let dim = state.dim();
    let mut positions: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (x, &m) in state.points().iter().zip(state.weights()) {
        match positions
            .chunks(dim)
            .position(|p| distance(p, x) <= pos_tol)
        {
            Some(k) => weights[k] += m,
            None => {
                positions.extend_from_slice(x);
                weights.push(m);
            }
        }
    }
    SystemState::from_parts(state.t, dim, positions, weights, state.reference_mass())
        .expect("merging preserves validity")
}

/// `|sum w (y - x*)|^2`.
pub fn kinetic_variance(mu: &EmpiricalMeasure, target: &[f64]) -> f64 {
    let mut moment = vec![0.0; target.len()];
    for (y, w) in mu.atoms() {
        for (m, (yk, tk)) in moment.iter_mut().zip(y.iter().zip(target)) {
            *m += w * (yk - tk);
        }
    }
    moment.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rhs_positions, KernelKind};

    fn state(x: &[Vec<f64>], m: &[f64]) -> SystemState {
        SystemState::new(x.to_vec(), m.to_vec()).unwrap()
    }

    #[test]
    fn empirical_measure_weights() {
        let mu = EmpiricalMeasure::from_state(&state(&[vec![1.0]], &[2.5]));
        assert_eq!(mu.weights(), &[1.0]);
        let mu = EmpiricalMeasure::from_state(&state(&[vec![0.0], vec![1.0]], &[1.0, 1.0]));
        assert_eq!(mu.weights(), &[0.5, 0.5]);
        assert_eq!(mu.total(), 1.0);
        assert!(EmpiricalMeasure::new(1, vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn velocity_field_examples() {
        let k = InteractionKernel::gaussian(2.0).unwrap();
        let single = EmpiricalMeasure::new(2, vec![0.3, 0.4], vec![1.0]).unwrap();
        assert_eq!(velocity_field(&single, &k, &[0.3, 0.4]), vec![0.0, 0.0]);

        let constant = InteractionKernel::new(KernelKind::Constant(1.0), 2.0).unwrap();
        let pair = EmpiricalMeasure::new(1, vec![0.0, 2.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(velocity_field(&pair, &constant, &[1.0]), vec![0.0]);
    }

    #[test]
    fn velocity_field_matches_agent_velocity() {
        let s = state(
            &[vec![0.0, 0.1], vec![1.0, -0.4], vec![0.3, 0.9]],
            &[1.0, 0.3, 2.0],
        );
        let k = InteractionKernel::gaussian(2.0).unwrap();
        let mu = EmpiricalMeasure::from_state(&s);
        let v = rhs_positions(&s, &k).unwrap();
        for i in 0..s.n() {
            assert_eq!(velocity_field(&mu, &k, s.position(i)), &v[2 * i..2 * i + 2]);
        }
    }

    #[test]
    fn source_atoms_examples() {
        let mu = EmpiricalMeasure::new(1, vec![0.0, 2.0], vec![0.5, 0.5]).unwrap();
        let h = source_atoms(&mu, |x, y| y[0] - x[0]);
        // Double-loop oracle.
        let (ys, ws) = ([0.0, 2.0], [0.5, 0.5]);
        let oracle: Vec<f64> = (0..2)
            .map(|i| ws[i] * (0..2).map(|j| ws[j] * (ys[j] - ys[i])).sum::<f64>())
            .collect();
        assert_eq!(h.weights, oracle);
        assert_eq!(h.weights, vec![0.5, -0.5]);
        assert!(h.total().abs() < 1e-12);
        assert!(source_atoms(&mu, |_, _| 0.0)
            .weights
            .iter()
            .all(|&w| w == 0.0));
    }

    #[test]
    fn merge_examples() {
        let s = state(
            &[vec![0.0], vec![1.0], vec![2.0], vec![0.0]],
            &[1.0, 2.0, 3.0, 4.0],
        );
        let merged = merge_coincident(&s, 0.0);
        assert_eq!(merged.n(), 3);
        assert_eq!(merged.weights(), &[5.0, 2.0, 3.0]);
        assert_eq!(merged.reference_mass(), s.reference_mass());

        let distinct = state(&[vec![0.0], vec![1.0]], &[1.0, 2.0]);
        assert_eq!(merge_coincident(&distinct, 1e-9), distinct);

        let triple = state(&vec![vec![0.5, 0.5]; 3], &[1.0, 1.0, 1.0]);
        let one = merge_coincident(&triple, 0.0);
        assert_eq!(one.n(), 1);
        assert_eq!(one.weights(), &[3.0]);
    }

    #[test]
    fn kinetic_variance_examples() {
        let mu = EmpiricalMeasure::new(1, vec![0.0, 2.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(kinetic_variance(&mu, &[1.0]), 0.0);
        let atom = EmpiricalMeasure::new(2, vec![2.0, 0.0], vec![1.0]).unwrap();
        assert_eq!(kinetic_variance(&atom, &[0.0, 0.0]), 4.0);
    }

    #[test]
    fn test_function_gradients_match_finite_differences() {
        let fs = [
            TestFunction::Coordinate(1),
            TestFunction::Quadratic(vec![0.2, -0.5]),
            TestFunction::Bump {
                center: vec![0.1, 0.3],
                sigma: 0.7,
            },
        ];
        let x = [0.45, -0.2];
        let eps = 1e-6;
        for f in &fs {
            let g = f.gradient(&x);
            for k in 0..2 {
                let (mut hi, mut lo) = (x, x);
                hi[k] += eps;
                lo[k] -= eps;
                let fd = (f.value(&hi) - f.value(&lo)) / (2.0 * eps);
                assert!((fd - g[k]).abs() < 1e-6, "{f:?} component {k}");
            }
        }
    }
}
