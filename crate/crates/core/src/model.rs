//! Agent state, interaction kernels and the coupled position/weight
//! right-hand sides.
//!
//! Positions are stored row-major in a flat buffer (`N * d` entries). The
//! position equation is normalised by the reference mass `M` (the initial
//! total weight), never by the current total weight.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite state")]
    NonFinite,
    #[error("weights must be positive (agent {index} has weight {value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("empty agent system")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("reference mass must be positive, got {0}")]
    ReferenceMass(f64),
    #[error("kernel: {0}")]
    Kernel(String),
    #[error("negative diameter bound {0}")]
    NegativeDiameter(f64),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Positions and weights of `N` agents in `R^d` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
    reference_mass: f64,
}

impl SystemState {
    /// Builds an initial state at `t = 0`; the reference mass is the sum of
    /// the given weights.
    pub fn new(positions: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = positions.first().map(Vec::len).ok_or(ModelError::Empty)?;
        if let Some(bad) = positions.iter().find(|p| p.len() != dim) {
            return Err(ModelError::Dimension(format!(
                "position of length {} in a {dim}-dimensional system",
                bad.len()
            )));
        }
        let flat = positions.into_iter().flatten().collect();
        let total = weights.iter().sum();
        Self::from_parts(0.0, dim, flat, weights, total)
    }

    pub fn from_parts(
        t: f64,
        dim: usize,
        positions: Vec<f64>,
        weights: Vec<f64>,
        reference_mass: f64,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(ModelError::Empty);
        }
        if dim == 0 {
            return Err(ModelError::Dimension("d must be at least 1".into()));
        }
        if positions.len() != dim * weights.len() {
            return Err(ModelError::Dimension(format!(
                "{} coordinates for {} agents in dimension {dim}",
                positions.len(),
                weights.len()
            )));
        }
        if !t.is_finite()
            || !reference_mass.is_finite()
            || positions.iter().chain(&weights).any(|v| !v.is_finite())
        {
            return Err(ModelError::NonFinite);
        }
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| w <= 0.0) {
            return Err(ModelError::NonPositiveWeight { index, value });
        }
        if reference_mass <= 0.0 {
            return Err(ModelError::ReferenceMass(reference_mass));
        }
        Ok(Self {
            t,
            dim,
            positions,
            weights,
            reference_mass,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat row-major coordinates.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position_vecs(&self) -> Vec<Vec<f64>> {
        self.positions
            .chunks(self.dim)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `M`, the total weight of the initial condition this state came from.
    pub fn reference_mass(&self) -> f64 {
        self.reference_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn points(&self) -> crate::geometry::Points<'_> {
        crate::geometry::Points::new(&self.positions, self.dim)
    }
}

/// Shape of the interaction function `a`.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `a(s) = exp(-s^2)`
    Gaussian,
    Constant(f64),
    /// Piecewise-linear through `(s[k], a[k])`, held constant past the last
    /// node. Nodes start at 0 and increase strictly.
    Tabulated {
        s: Vec<f64>,
        a: Vec<f64>,
    },
}

impl KernelKind {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            KernelKind::Gaussian => (-s * s).exp(),
            KernelKind::Constant(c) => *c,
            KernelKind::Tabulated { s: nodes, a } => {
                let last = nodes.len() - 1;
                if s >= nodes[last] {
                    return a[last];
                }
                if s <= nodes[0] {
                    return a[0];
                }
                let k = nodes.partition_point(|&node| node <= s) - 1;
                let frac = (s - nodes[k]) / (nodes[k + 1] - nodes[k]);
                a[k] + frac * (a[k + 1] - a[k])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            KernelKind::Gaussian => Ok(()),
            KernelKind::Constant(c) if c.is_finite() && *c >= 0.0 => Ok(()),
            KernelKind::Constant(c) => Err(ModelError::Kernel(format!(
                "constant kernel must be finite and nonnegative, got {c}"
            ))),
            KernelKind::Tabulated { s, a } => {
                if s.is_empty() || s.len() != a.len() {
                    return Err(ModelError::Kernel(
                        "tabulated kernel needs matching, non-empty node and value lists".into(),
                    ));
                }
                if s[0] != 0.0 {
                    return Err(ModelError::Kernel(
                        "tabulated kernel must start at s = 0".into(),
                    ));
                }
                if s.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ModelError::Kernel(
                        "tabulated nodes must increase strictly".into(),
                    ));
                }
                if a.iter().chain(s).any(|v| !v.is_finite()) || a.iter().any(|&v| v < 0.0) {
                    return Err(ModelError::Kernel(
                        "tabulated values must be finite and nonnegative".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Interaction function together with `delta = sup s*a(s)` and
/// `a_min = inf a(s)` cached over `[0, d0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionKernel {
    kind: KernelKind,
    d0: f64,
    delta: f64,
    a_min: f64,
}

impl InteractionKernel {
    pub fn new(kind: KernelKind, d0: f64) -> Result<Self> {
        kind.validate()?;
        let delta = compute_delta(&kind, d0)?;
        let a_min = compute_a_min(&kind, d0)?;
        Ok(Self {
            kind,
            d0,
            delta,
            a_min,
        })
    }

    pub fn gaussian(d0: f64) -> Result<Self> {
        Self::new(KernelKind::Gaussian, d0)
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        self.kind.eval(s)
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }
}

const SCAN_INTERVALS: usize = 10_000;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximises `f` on `[0, upper]`: uniform scan over `SCAN_INTERVALS + 1`
/// points, then golden-section search on the interval bracketing the best
/// sample.
fn scan_and_refine_max(f: impl Fn(f64) -> f64, upper: f64) -> f64 {
    if upper == 0.0 {
        return f(0.0);
    }
    let step = upper / SCAN_INTERVALS as f64;
    let (best_k, best) = (0..=SCAN_INTERVALS).map(|k| (k, f(k as f64 * step))).fold(
        (0, f64::NEG_INFINITY),
        |acc, (k, v)| if v > acc.1 { (k, v) } else { acc },
    );
    let mut lo = best_k.saturating_sub(1) as f64 * step;
    let mut hi = ((best_k + 1).min(SCAN_INTERVALS) as f64 * step).min(upper);
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > 1e-13 * upper.max(1.0) {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    best.max(fc).max(fd)
}

/// `sup { s a(s) : s in [0, d0] }`.
pub fn compute_delta(kind: &KernelKind, d0: f64) -> Result<f64> {
    check_bound(d0)?;
    Ok(scan_and_refine_max(|s| s * kind.eval(s), d0).max(0.0))
}

/// `inf { a(s) : s in [0, d0] }`.
pub fn compute_a_min(kind: &KernelKind, d0: f64) -> Result<f64> {
    check_bound(d0)?;
    Ok(-scan_and_refine_max(|s| -kind.eval(s), d0))
}

fn check_bound(d0: f64) -> Result<()> {
    if d0.is_nan() || d0 < 0.0 {
        return Err(ModelError::NegativeDiameter(d0));
    }
    if !d0.is_finite() {
        return Err(ModelError::NonFinite);
    }
    Ok(())
}

pub type PairwiseFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type TripleFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync>;

/// Three-point source used by the triple-sum mass dynamics.
#[derive(Clone)]
pub enum TripleSource {
    /// `S(xi,xj,xk) = (a(|xi-xj|)|xi-xj| - a(|xj-xk|)|xj-xk|) / M`.
    Model2(InteractionKernel),
    Custom(TripleFn),
}

/// Uncontrolled weight dynamics `psi`.
#[derive(Clone)]
pub enum MassDynamics {
    Zero,
    /// `psi_i = -rate` for every agent.
    UniformDecay {
        rate: f64,
    },
    /// `psi_i = (1/M) sum_j m_j S(x_i, x_j)`.
    Pairwise {
        source: PairwiseFn,
        skew_symmetric: bool,
    },
    /// `psi_i = (1/M) sum_j sum_k m_j m_k S(x_i, x_j, x_k)`.
    Triple(TripleSource),
}

impl MassDynamics {
    /// Skew-symmetric pairwise source `S(x, y) = <v, y - x>`.
    pub fn pairwise_linear(direction: Vec<f64>) -> Self {
        let source: PairwiseFn = Arc::new(move |x: &[f64], y: &[f64]| {
            direction
                .iter()
                .zip(x.iter().zip(y))
                .map(|(v, (a, b))| v * (b - a))
                .sum()
        });
        MassDynamics::Pairwise {
            source,
            skew_symmetric: true,
        }
    }

    pub fn pairwise(
        source: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        skew_symmetric: bool,
    ) -> Self {
        MassDynamics::Pairwise {
            source: Arc::new(source),
            skew_symmetric,
        }
    }

    pub fn model2(kernel: InteractionKernel) -> Self {
        MassDynamics::Triple(TripleSource::Model2(kernel))
    }

    /// Whether `sum_i m_i psi_i = 0` holds identically.
    pub fn conserves_mass(&self) -> bool {
        match self {
            MassDynamics::Zero | MassDynamics::Triple(TripleSource::Model2(_)) => true,
            MassDynamics::UniformDecay { rate } => *rate == 0.0,
            MassDynamics::Pairwise { skew_symmetric, .. } => *skew_symmetric,
            MassDynamics::Triple(TripleSource::Custom(_)) => false,
        }
    }
}

impl fmt::Debug for MassDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MassDynamics::Zero => write!(f, "Zero"),
            MassDynamics::UniformDecay { rate } => write!(f, "UniformDecay({rate})"),
            MassDynamics::Pairwise { skew_symmetric, .. } => {
                write!(f, "Pairwise {{ skew_symmetric: {skew_symmetric} }}")
            }
            MassDynamics::Triple(TripleSource::Model2(k)) => write!(f, "Model2({:?})", k.kind()),
            MassDynamics::Triple(TripleSource::Custom(_)) => write!(f, "Triple(custom)"),
        }
    }
}

#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `xdot_i = sum_j (m_j/M) a(|x_i - x_j|) (x_j - x_i)` written into `out`.
pub(crate) fn position_rates(
    positions: &[f64],
    weights: &[f64],
    dim: usize,
    reference_mass: f64,
    kernel: &InteractionKernel,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, xi) in positions.chunks(dim).enumerate() {
        let vi = &mut out[i * dim..(i + 1) * dim];
        for (xj, &mj) in positions.chunks(dim).zip(weights) {
            let coeff = (mj / reference_mass) * kernel.eval(distance(xi, xj));
            for k in 0..dim {
                vi[k] += coeff * (xj[k] - xi[k]);
            }
        }
    }
}

pub(crate) fn psi_into(
    positions: &[f64],
    weights: &[f64],
    dim: usize,
    reference_mass: f64,
    psi: &MassDynamics,
    out: &mut [f64],
) {
    let pts = || positions.chunks(dim);
    match psi {
        MassDynamics::Zero => out.iter_mut().for_each(|v| *v = 0.0),
        MassDynamics::UniformDecay { rate } => out.iter_mut().for_each(|v| *v = -rate),
        MassDynamics::Pairwise { source, .. } => {
            for (o, xi) in out.iter_mut().zip(pts()) {
                *o = pts()
                    .zip(weights)
                    .map(|(xj, &mj)| mj * source(xi, xj))
                    .sum::<f64>()
                    / reference_mass;
            }
        }
        MassDynamics::Triple(TripleSource::Custom(source)) => {
            for (o, xi) in out.iter_mut().zip(pts()) {
                let mut acc = 0.0;
                for (xj, &mj) in pts().zip(weights) {
                    for (xk, &mk) in pts().zip(weights) {
                        acc += mj * mk * source(xi, xj, xk);
                    }
                }
                *o = acc / reference_mass;
            }
        }
        MassDynamics::Triple(TripleSource::Model2(kernel)) => {
            // The double sum factorises: sum_j m_j phi_ij * sum_k m_k - sum_jk m_j m_k phi_jk.
            let phi = |a: &[f64], b: &[f64]| {
                let s = distance(a, b);
                kernel.eval(s) * s
            };
            let total: f64 = weights.iter().sum();
            let row: Vec<f64> = pts()
                .map(|xi| pts().zip(weights).map(|(xj, &mj)| mj * phi(xi, xj)).sum())
                .collect();
            let mean_field: f64 = row.iter().zip(weights).map(|(r, m)| m * r).sum();
            let m2 = reference_mass * reference_mass;
            for (o, r) in out.iter_mut().zip(&row) {
                *o = (r * total - mean_field) / m2;
            }
        }
    }
}

fn ensure_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite)
    }
}

/// Velocities of every agent, flat row-major.
pub fn rhs_positions(state: &SystemState, kernel: &InteractionKernel) -> Result<Vec<f64>> {
    let mut out = vec![0.0; state.positions.len()];
    position_rates(
        &state.positions,
        &state.weights,
        state.dim,
        state.reference_mass,
        kernel,
        &mut out,
    );
    ensure_finite(&out)?;
    Ok(out)
}

pub fn eval_psi(state: &SystemState, psi: &MassDynamics) -> Result<Vec<f64>> {
    let mut out = vec![0.0; state.n()];
    psi_into(
        &state.positions,
        &state.weights,
        state.dim,
        state.reference_mass,
        psi,
        &mut out,
    );
    ensure_finite(&out)?;
    Ok(out)
}

/// `mdot_i = m_i (psi_i + u_i)`.
pub fn rhs_masses(state: &SystemState, psi: &MassDynamics, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != state.n() {
        return Err(ModelError::Dimension(format!(
            "control of length {} for {} agents",
            u.len(),
            state.n()
        )));
    }
    ensure_finite(u)?;
    let rates = eval_psi(state, psi)?;
    let out: Vec<f64> = rates
        .iter()
        .zip(u)
        .zip(&state.weights)
        .map(|((p, ui), m)| m * (p + ui))
        .collect();
    ensure_finite(&out)?;
    Ok(out)
}

/// Largest pairwise distance between agents.
pub fn diameter(state: &SystemState) -> f64 {
    diameter_of(&state.positions, state.dim)
}

pub(crate) fn diameter_of(positions: &[f64], dim: usize) -> f64 {
    let pts: Vec<&[f64]> = positions.chunks(dim).collect();
    let mut best = 0.0_f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            best = best.max(distance(a, b));
        }
    }
    best
}
