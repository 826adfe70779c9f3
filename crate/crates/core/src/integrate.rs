//! Fixed-step closed-loop integration with sample-and-hold controls.

use thiserror::Error;

use crate::control::{active_components, barycenter_distance_rate, ControlError, ControlLaw};
use crate::geometry::barycenter;
use crate::model::{
    diameter, distance, position_rates, psi_into, InteractionKernel, MassDynamics, ModelError,
    SystemState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("weight collapsed: agent {index} reached {value:e}")]
    WeightCollapsed { index: usize, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("invalid integrator config: {0}")]
    Config(String),
    #[error("step {step} (t = {t}): {source}")]
    Step {
        step: usize,
        t: f64,
        #[source]
        source: Box<IntegrateError>,
    },
}

pub type Result<T> = std::result::Result<T, IntegrateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassMode {
    /// Positions and weights advanced together by classical RK4.
    JointRk4,
    /// Weights advanced by `m exp((psi + u) h)` with `psi` frozen at the
    /// step start, positions by RK4 with weights frozen. First order in the
    /// coupling, but weights stay positive.
    ExponentialSplitting,
}

/// When the feedback law is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlSampling {
    /// Once per step, held constant across it.
    Hold,
    /// At every Runge-Kutta stage of a joint RK4 step. A mass-conserving law
    /// then conserves total mass to rounding, since every stage slope sums
    /// to zero. Splitting mode always holds.
    Stage,
}

/// Tolerance used when counting active control components.
pub const ACTIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub h: f64,
    pub t_end: f64,
    /// Stop once `|xbar - x*| <= stop_eps`; 0 disables.
    pub stop_eps: f64,
    pub mass_floor: f64,
    pub mass_mode: MassMode,
    pub sampling: ControlSampling,
}

impl IntegratorConfig {
    pub fn new(h: f64, t_end: f64) -> Self {
        Self {
            h,
            t_end,
            stop_eps: 0.0,
            mass_floor: 1e-12,
            mass_mode: MassMode::JointRk4,
            sampling: ControlSampling::Hold,
        }
    }

    pub fn with_sampling(mut self, sampling: ControlSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_mode(mut self, mode: MassMode) -> Self {
        self.mass_mode = mode;
        self
    }

    pub fn with_stop_eps(mut self, eps: f64) -> Self {
        self.stop_eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(IntegrateError::Config(format!(
                "h must be positive, got {}",
                self.h
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(IntegrateError::Config(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.mass_floor > 0.0) {
            return Err(IntegrateError::Config("mass_floor must be positive".into()));
        }
        if !(self.stop_eps >= 0.0) {
            return Err(IntegrateError::Config(
                "stop_eps must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded instant. `control` is the value held on the step that
/// starts here (for the last sample: the value the law would apply next).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: SystemState,
    pub control: Vec<f64>,
    pub clamped: bool,
    pub barycenter: Vec<f64>,
    pub target_distance: f64,
    pub diameter: f64,
    pub total_mass: f64,
    pub active_count: usize,
    /// `dX/dt` under the held control and the intrinsic mass dynamics.
    pub objective_dxdt: f64,
}

impl Sample {
    pub fn t(&self) -> f64 {
        self.state.t
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub config: IntegratorConfig,
    pub law: ControlLaw,
    pub kernel: InteractionKernel,
    pub psi: MassDynamics,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("trajectory holds at least the initial sample")
    }

    /// First sample time with `|xbar - x*| <= threshold`.
    pub fn time_to_threshold(&self, threshold: f64) -> Option<f64> {
        self.samples
            .iter()
            .find(|s| s.target_distance <= threshold)
            .map(Sample::t)
    }
}

struct Workspace {
    dim: usize,
    reference_mass: f64,
    kx: [Vec<f64>; 4],
    km: [Vec<f64>; 4],
    x_stage: Vec<f64>,
    m_stage: Vec<f64>,
    psi_buf: Vec<f64>,
}

impl Workspace {
    fn new(state: &SystemState) -> Self {
        let nx = state.positions().len();
        let n = state.n();
        Self {
            dim: state.dim(),
            reference_mass: state.reference_mass(),
            kx: std::array::from_fn(|_| vec![0.0; nx]),
            km: std::array::from_fn(|_| vec![0.0; n]),
            x_stage: vec![0.0; nx],
            m_stage: vec![0.0; n],
            psi_buf: vec![0.0; n],
        }
    }

    fn mass_rates(&mut self, x: &[f64], m: &[f64], psi: &MassDynamics, u: &[f64], stage: usize) {
        psi_into(x, m, self.dim, self.reference_mass, psi, &mut self.psi_buf);
        for (i, k) in self.km[stage].iter_mut().enumerate() {
            *k = m[i] * (self.psi_buf[i] + u[i]);
        }
    }
}

const STAGE_OFFSETS: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
const STAGE_WEIGHTS: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// Advances one step of length `h`. `u` is used at the first stage; with
/// `ControlSampling::Stage` the law is re-evaluated at the later stages.
#[allow(clippy::too_many_arguments)]
fn advance(
    state: &SystemState,
    u: &[f64],
    law: &ControlLaw,
    psi: &MassDynamics,
    kernel: &InteractionKernel,
    h: f64,
    config: &IntegratorConfig,
    ws: &mut Workspace,
) -> Result<SystemState> {
    let x0 = state.positions();
    let m0 = state.weights();
    let dim = state.dim();
    let big_m = state.reference_mass();
    let (x_new, m_new) = match config.mass_mode {
        MassMode::JointRk4 => {
            for (stage, offset) in STAGE_OFFSETS.iter().enumerate() {
                let c = offset * h;
                if stage == 0 {
                    ws.x_stage.copy_from_slice(x0);
                    ws.m_stage.copy_from_slice(m0);
                } else {
                    for (j, v) in ws.x_stage.iter_mut().enumerate() {
                        *v = x0[j] + c * ws.kx[stage - 1][j];
                    }
                    for (j, v) in ws.m_stage.iter_mut().enumerate() {
                        *v = m0[j] + c * ws.km[stage - 1][j];
                    }
                }
                let xs = std::mem::take(&mut ws.x_stage);
                let ms = std::mem::take(&mut ws.m_stage);
                position_rates(&xs, &ms, dim, big_m, kernel, &mut ws.kx[stage]);
                if stage > 0 && config.sampling == ControlSampling::Stage {
                    let probe = SystemState::from_parts(state.t + c, dim, xs, ms, big_m)?;
                    let u_stage = law.evaluate(&probe)?.u;
                    ws.mass_rates(probe.positions(), probe.weights(), psi, &u_stage, stage);
                    ws.x_stage = probe.positions().to_vec();
                    ws.m_stage = probe.weights().to_vec();
                } else {
                    ws.mass_rates(&xs, &ms, psi, u, stage);
                    ws.x_stage = xs;
                    ws.m_stage = ms;
                }
            }
            let combine = |base: &[f64], ks: &[Vec<f64>; 4]| -> Vec<f64> {
                base.iter()
                    .enumerate()
                    .map(|(j, b)| b + h * (0..4).map(|s| STAGE_WEIGHTS[s] * ks[s][j]).sum::<f64>())
                    .collect()
            };
            (combine(x0, &ws.kx), combine(m0, &ws.km))
        }
        MassMode::ExponentialSplitting => {
            psi_into(x0, m0, dim, big_m, psi, &mut ws.psi_buf);
            let m_new: Vec<f64> = m0
                .iter()
                .zip(&ws.psi_buf)
                .zip(u)
                .map(|((m, p), ui)| m * ((p + ui) * h).exp())
                .collect();
            for (stage, offset) in STAGE_OFFSETS.iter().enumerate() {
                let c = offset * h;
                if stage == 0 {
                    ws.x_stage.copy_from_slice(x0);
                } else {
                    for (j, v) in ws.x_stage.iter_mut().enumerate() {
                        *v = x0[j] + c * ws.kx[stage - 1][j];
                    }
                }
                let xs = std::mem::take(&mut ws.x_stage);
                position_rates(&xs, m0, dim, big_m, kernel, &mut ws.kx[stage]);
                ws.x_stage = xs;
            }
            let x_new = x0
                .iter()
                .enumerate()
                .map(|(j, b)| b + h * (0..4).map(|s| STAGE_WEIGHTS[s] * ws.kx[s][j]).sum::<f64>())
                .collect();
            (x_new, m_new)
        }
    };
    if x_new.iter().chain(&m_new).any(|v: &f64| !v.is_finite()) {
        return Err(ModelError::NonFinite.into());
    }
    if let Some((index, &value)) = m_new
        .iter()
        .enumerate()
        .find(|(_, &m)| m <= config.mass_floor)
    {
        return Err(IntegrateError::WeightCollapsed { index, value });
    }
    Ok(SystemState::from_parts(
        state.t + h,
        dim,
        x_new,
        m_new,
        big_m,
    )?)
}

/// One sample-and-hold step of length `config.h`.
pub fn step(
    state: &SystemState,
    law: &ControlLaw,
    psi: &MassDynamics,
    kernel: &InteractionKernel,
    config: &IntegratorConfig,
) -> Result<SystemState> {
    config.validate()?;
    let u = law.evaluate(state)?.u;
    let mut ws = Workspace::new(state);
    advance(state, &u, law, psi, kernel, config.h, config, &mut ws)
}

fn record(state: SystemState, law: &ControlLaw, psi: &MassDynamics) -> Result<Sample> {
    let output = law.evaluate(&state)?;
    let bar = barycenter(&state);
    let target_distance = distance(&bar, &law.target);
    let mut rates = vec![0.0; state.n()];
    psi_into(
        state.positions(),
        state.weights(),
        state.dim(),
        state.reference_mass(),
        psi,
        &mut rates,
    );
    rates.iter_mut().zip(&output.u).for_each(|(r, u)| *r += u);
    let objective_dxdt = barycenter_distance_rate(&state, &law.target, &rates);
    Ok(Sample {
        diameter: diameter(&state),
        total_mass: state.total_mass(),
        active_count: active_components(&output.u, ACTIVE_TOLERANCE),
        control: output.u,
        clamped: output.clamped,
        barycenter: bar,
        target_distance,
        objective_dxdt,
        state,
    })
}

/// Integrates until `t_end` or until the barycenter is within `stop_eps`
/// of the target, recording every step. Open-loop laws get a step boundary
/// exactly at their horizon.
pub fn simulate(
    initial: SystemState,
    law: &ControlLaw,
    psi: &MassDynamics,
    kernel: &InteractionKernel,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let mut ws = Workspace::new(&initial);
    let horizon = law.horizon();
    let min_step = 1e-9 * config.h;
    let mut samples = vec![record(initial, law, psi)?];
    let mut step_index = 0;
    loop {
        let current = samples.last().unwrap();
        let t = current.state.t;
        if config.stop_eps > 0.0 && current.target_distance <= config.stop_eps {
            break;
        }
        let mut h = config.h.min(config.t_end - t);
        if let Some(horizon) = horizon {
            if t < horizon && horizon - t < h {
                h = horizon - t;
            }
        }
        if h <= min_step {
            break;
        }
        let wrap = |e: IntegrateError| IntegrateError::Step {
            step: step_index,
            t,
            source: Box::new(e),
        };
        let mut next = advance(
            &current.state,
            &current.control,
            law,
            psi,
            kernel,
            h,
            config,
            &mut ws,
        )
        .map_err(wrap)?;
        // Land exactly on the horizon and on t_end.
        if horizon.is_some_and(|hz| (next.t - hz).abs() <= min_step) {
            next.t = horizon.unwrap();
        } else if (next.t - config.t_end).abs() <= min_step {
            next.t = config.t_end;
        }
        samples.push(record(next, law, psi).map_err(wrap)?);
        step_index += 1;
    }
    Ok(Trajectory {
        samples,
        config: *config,
        law: law.clone(),
        kernel: kernel.clone(),
        psi: psi.clone(),
        seed: None,
    })
}
