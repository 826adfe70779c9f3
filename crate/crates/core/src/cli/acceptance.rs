//! Acceptance suite: thirteen numerical checks, each reported as one row
//! with the measured value, its bound and a verdict.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{seed_scenario, Resolved, ScenarioConfig, Strategy};
use super::{build_law, RunError, THRESHOLD};
use crate::control::{
    open_loop_theorem2, solve_box_hyperplane, solve_diamond_hyperplane, ControlLaw, LawKind,
};
use crate::geometry::{barycenter, hull_contains, interior_margin, HullClass};
use crate::integrate::{simulate, ControlSampling, IntegratorConfig, MassMode, Trajectory};
use crate::meanfield::{merge_coincident, weak_form_residual, TestFunction};
use crate::model::{diameter, InteractionKernel, MassDynamics, SystemState};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:02} {}: measured {:e}, bound {:e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.bound
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

type Check = std::result::Result<(f64, f64, bool, String), String>;

fn at_most(measured: f64, bound: f64, detail: String) -> Check {
    Ok((measured, bound, measured <= bound, detail))
}

fn err(e: impl fmt::Display) -> String {
    e.to_string()
}

type Criterion = (u8, &'static str, fn() -> Check);

const CRITERIA: [Criterion; 13] = [
    (1, "barycenter_conservation", barycenter_conservation),
    (2, "consensus_rate", consensus_rate),
    (3, "constructive_decay", constructive_decay),
    (4, "lp_oracle_equivalence", lp_oracle_equivalence),
    (5, "mass_conservation", mass_conservation),
    (6, "hull_contraction", hull_contraction),
    (7, "open_loop_terminal_masses", open_loop_terminal_masses),
    (8, "confinement", confinement),
    (9, "weak_form_residual", weak_form_order),
    (10, "indistinguishability", indistinguishability),
    (11, "sparsity_pattern", sparsity_pattern),
    (12, "strategy_ordering", strategy_ordering),
    (13, "integrator_order", integrator_order),
];

/// Runs every criterion (in parallel) and returns the rows in order.
pub fn run_all() -> Vec<CriterionResult> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = CRITERIA
            .iter()
            .map(|&(id, name, check)| {
                scope.spawn(move || {
                    let outcome = std::panic::catch_unwind(check)
                        .unwrap_or_else(|_| Err("check panicked".to_string()));
                    match outcome {
                        Ok((measured, bound, pass, detail)) => CriterionResult {
                            id,
                            name,
                            measured,
                            bound,
                            pass,
                            detail,
                        },
                        Err(detail) => CriterionResult {
                            id,
                            name,
                            measured: f64::NAN,
                            bound: f64::NAN,
                            pass: false,
                            detail,
                        },
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("criterion thread"))
            .collect()
    })
}

pub fn write_report(rows: &[CriterionResult], path: &Path) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["criterion", "measured", "bound", "verdict"])?;
    for r in rows {
        w.write_record([
            format!("{:02}_{}", r.id, r.name),
            format!("{:?}", r.measured),
            format!("{:?}", r.bound),
            if r.pass { "pass" } else { "fail" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the suite and writes `acceptance.csv` into `out_dir`.
pub fn run_to(out_dir: &Path) -> Result<Vec<CriterionResult>, RunError> {
    std::fs::create_dir_all(out_dir)?;
    let rows = run_all();
    write_report(&rows, &out_dir.join("acceptance.csv"))?;
    Ok(rows)
}

fn seed() -> std::result::Result<(ScenarioConfig, Resolved), String> {
    let cfg = seed_scenario();
    let resolved = cfg.resolve().map_err(err)?;
    Ok((cfg, resolved))
}

fn seed_run(strategy: Strategy) -> std::result::Result<Trajectory, String> {
    super::simulate_config(&seed_scenario().with_strategy(strategy)).map_err(err)
}

fn uncontrolled(
    initial: SystemState,
    psi: MassDynamics,
    config: IntegratorConfig,
) -> std::result::Result<Trajectory, String> {
    let kernel = InteractionKernel::gaussian(diameter(&initial)).map_err(err)?;
    let law = ControlLaw::new(LawKind::Zero, barycenter(&initial)).map_err(err)?;
    simulate(initial, &law, &psi, &kernel, &config).map_err(err)
}

fn max_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn barycenter_conservation() -> Check {
    let (_, r) = seed()?;
    let traj = uncontrolled(
        r.initial,
        MassDynamics::Zero,
        IntegratorConfig::new(1e-3, 5.0),
    )?;
    let start = &traj.samples[0].barycenter;
    let drift = traj
        .samples
        .iter()
        .map(|s| norm(&diff(&s.barycenter, start)))
        .fold(0.0, f64::max);
    at_most(drift, 1e-6, format!("{} samples", traj.samples.len()))
}

fn consensus_rate() -> Check {
    let (_, r) = seed()?;
    let d0 = diameter(&r.initial);
    let traj = uncontrolled(
        r.initial,
        MassDynamics::Zero,
        IntegratorConfig::new(1e-3, 5.0),
    )?;
    let a_min = traj.kernel.a_min();
    // Largest relative excess of D(t) over D(0) exp(-a_min t).
    let excess = traj
        .samples
        .iter()
        .map(|s| s.diameter / (d0 * (-a_min * s.t()).exp()) - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    at_most(
        excess,
        1e-6,
        format!("a_min = {a_min:.6}, D(end) = {:.3e}", traj.last().diameter),
    )
}

fn constructive_decay() -> Check {
    let (cfg, r) = seed()?;
    let alpha = cfg.alpha.ok_or("seed scenario has no alpha")?;
    // Equal weights give m_{i+} = m_{i-} at the start; the law then raises
    // m_{i-} and lowers m_{i+}, which keeps the ordering.
    let initial =
        SystemState::new(r.initial.position_vecs(), vec![1.0; r.initial.n()]).map_err(err)?;
    let n = initial.n() as f64;
    let law = ControlLaw::new(
        LawKind::Constructive {
            alpha,
            clamp: false,
        },
        r.target.clone(),
    )
    .map_err(err)?;
    // The decay estimate holds until the barycenter enters a small ball
    // around the target.
    let config = cfg.integrator.with_stop_eps(1e-3);
    let traj = simulate(initial, &law, &MassDynamics::Zero, &r.kernel, &config).map_err(err)?;
    let x0 = traj.samples[0].target_distance;
    let mut worst = f64::NEG_INFINITY;
    let mut ordering_violations = 0;
    let mut checked = 0;
    for s in &traj.samples {
        let margin = interior_margin(s.state.points(), &r.target).map_err(err)?;
        if margin <= 0.0 {
            break;
        }
        checked += 1;
        worst = worst.max(s.target_distance / (x0 * (-(alpha / n) * s.t()).exp()));
        // The law raises the weight of i- and lowers that of i+.
        let raised = s.control.iter().position(|&u| u > 0.0);
        let lowered = s.control.iter().position(|&u| u < 0.0);
        if let (Some(lo), Some(hi)) = (raised, lowered) {
            if s.state.weights()[hi] > s.state.weights()[lo] {
                ordering_violations += 1;
            }
        }
    }
    let bound = 1.0 + 1e-2;
    Ok((
        worst,
        bound,
        worst <= bound && ordering_violations == 0 && checked > 1,
        format!(
            "{checked} interior samples up to t = {:.3}, {ordering_violations} with m_i+ > m_i-",
            traj.last().t()
        ),
    ))
}

/// Exhaustive optimum of `sum c u` over `|u_i| <= alpha`, `sum m u = 0`:
/// every vertex has at most one coordinate strictly inside its bounds.
pub fn box_vertex_oracle(c: &[f64], m: &[f64], alpha: f64) -> f64 {
    let n = c.len();
    let mut best = 0.0_f64;
    for free in 0..n {
        for pattern in 0..(1u32 << (n - 1)) {
            let mut u = vec![0.0; n];
            let mut bit = 0;
            for (i, ui) in u.iter_mut().enumerate() {
                if i != free {
                    *ui = if pattern >> bit & 1 == 1 {
                        alpha
                    } else {
                        -alpha
                    };
                    bit += 1;
                }
            }
            let rest: f64 = u.iter().zip(m).map(|(a, b)| a * b).sum();
            u[free] = -rest / m[free];
            if u[free].abs() <= alpha * (1.0 + 1e-12) {
                best = best.min(c.iter().zip(&u).map(|(a, b)| a * b).sum());
            }
        }
    }
    best
}

/// Exhaustive optimum of `sum c u` over `sum |u_i| <= budget`,
/// `sum m u = 0`: vertices lie on edges of the cross-polytope joining
/// `s_i budget e_i` and `s_j budget e_j` with opposite signs.
pub fn diamond_vertex_oracle(c: &[f64], m: &[f64], budget: f64) -> f64 {
    let n = c.len();
    let mut best = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            // u = lambda budget e_i - (1 - lambda) budget e_j with
            // lambda m_i = (1 - lambda) m_j.
            let lambda = m[j] / (m[i] + m[j]);
            let value = budget * (lambda * c[i] - (1.0 - lambda) * c[j]);
            best = best.min(value);
        }
    }
    best
}

fn lp_oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_229);
    let (alpha, budget) = (2.0, 10.0);
    let mut worst_objective = 0.0_f64;
    let mut worst_feasibility = 0.0_f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=6);
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..=2.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let objective = |u: &[f64]| c.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        let mass = |u: &[f64]| u.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>().abs();

        let u = solve_box_hyperplane(&c, &m, alpha);
        worst_objective =
            worst_objective.max((objective(&u) - box_vertex_oracle(&c, &m, alpha)).abs());
        let excess = u.iter().map(|v| v.abs() - alpha).fold(0.0, f64::max);
        worst_feasibility = worst_feasibility.max(mass(&u)).max(excess);

        let u = solve_diamond_hyperplane(&c, &m, budget);
        worst_objective =
            worst_objective.max((objective(&u) - diamond_vertex_oracle(&c, &m, budget)).abs());
        let excess = (u.iter().map(|v| v.abs()).sum::<f64>() - budget).max(0.0);
        worst_feasibility = worst_feasibility.max(mass(&u)).max(excess);
    }
    Ok((
        worst_objective,
        1e-9,
        worst_objective <= 1e-9 && worst_feasibility <= 1e-10,
        format!("max feasibility residual {worst_feasibility:e} (bound 1e-10)"),
    ))
}

fn mass_conservation() -> Check {
    let mut worst = 0.0_f64;
    for strategy in [Strategy::LinfUm, Strategy::L1Um] {
        let traj = seed_run(strategy)?;
        let big_m = traj.samples[0].state.reference_mass();
        let drift = traj
            .samples
            .iter()
            .map(|s| (s.total_mass - big_m).abs() / big_m)
            .fold(0.0, f64::max);
        worst = worst.max(drift);
    }
    at_most(worst, 1e-8, "relative drift, linf_um and l1_um".to_string())
}

fn hull_contraction() -> Check {
    let mut outside = 0usize;
    let mut pairs = 0usize;
    let mut worst_distance = 0.0_f64;
    for strategy in [Strategy::LinfUm, Strategy::L1Um] {
        let traj = seed_run(strategy)?;
        let stride = (traj.samples.len() / 10).max(1);
        let picks: Vec<&SystemState> = traj
            .samples
            .iter()
            .step_by(stride)
            .map(|s| &s.state)
            .collect();
        for (a, earlier) in picks.iter().enumerate() {
            for later in &picks[a + 1..] {
                pairs += 1;
                for x in later.points().iter() {
                    let m = hull_contains(earlier.points(), x, 1e-7).map_err(err)?;
                    worst_distance = worst_distance.max(m.distance);
                    if m.class == HullClass::Outside {
                        outside += 1;
                    }
                }
            }
        }
    }
    Ok((
        outside as f64,
        0.0,
        outside == 0,
        format!("{pairs} time pairs, max distance to earlier hull {worst_distance:e}"),
    ))
}

fn open_loop_terminal_masses() -> Check {
    let initial = SystemState::new(vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).map_err(err)?;
    let target = vec![0.25];
    let (alpha, alpha_tilde) = (2.0, 1.0);
    let plan = open_loop_theorem2(&initial, &target, alpha, alpha_tilde, 1e-3).map_err(err)?;
    let kernel = InteractionKernel::gaussian(diameter(&initial)).map_err(err)?;
    let law = ControlLaw::new(
        LawKind::OpenLoop {
            u: plan.u.clone(),
            horizon: plan.horizon,
        },
        target,
    )
    .map_err(err)?;
    let config =
        IntegratorConfig::new(1e-3, plan.horizon).with_mode(MassMode::ExponentialSplitting);
    let traj = simulate(initial, &law, &MassDynamics::Zero, &kernel, &config).map_err(err)?;
    let last = traj.last();
    let error = max_norm_diff(&plan.u, &[-1.0, -2.0])
        .max((plan.horizon - 3.0_f64.ln()).abs())
        .max((last.t() - 3.0_f64.ln()).abs())
        .max(max_norm_diff(last.state.weights(), &[1.0 / 3.0, 1.0 / 9.0]));
    let reach = kernel.delta() / alpha_tilde;
    Ok((
        error,
        1e-6,
        error <= 1e-6 && last.target_distance <= reach,
        format!(
            "final distance {:.4} (bound delta/alpha_tilde = {reach:.4})",
            last.target_distance
        ),
    ))
}

fn confinement() -> Check {
    let (_, r) = seed()?;
    let rate = 5.0;
    let x0 = r.initial.clone();
    let traj = uncontrolled(
        r.initial,
        MassDynamics::UniformDecay { rate },
        IntegratorConfig::new(1e-3, 2.0),
    )?;
    let delta = traj.kernel.delta();
    let mut worst = f64::NEG_INFINITY;
    for s in &traj.samples {
        let bound = delta / rate * (1.0 - (-rate * s.t()).exp());
        for (x, y) in s.state.points().iter().zip(x0.points().iter()) {
            worst = worst.max(norm(&diff(x, y)) - bound);
        }
    }
    at_most(worst, 1e-6, format!("delta = {delta:.6}"))
}

fn five_agents() -> std::result::Result<SystemState, String> {
    let (_, r) = seed()?;
    let positions = r.initial.position_vecs()[..5].to_vec();
    let weights = r.initial.weights()[..5].to_vec();
    SystemState::new(positions, weights).map_err(err)
}

fn weak_form_order() -> Check {
    let initial = five_agents()?;
    let psi = MassDynamics::pairwise_linear(vec![1.0, -0.5]);
    let traj = uncontrolled(initial, psi, IntegratorConfig::new(1e-4, 0.1))?;
    let f = TestFunction::Bump {
        center: vec![0.2, -0.1],
        sigma: 0.8,
    };
    let coarse = weak_form_residual(&traj, &f, 0.05, 1e-3).map_err(err)?;
    let fine = weak_form_residual(&traj, &f, 0.05, 5e-4).map_err(err)?;
    let ratio = coarse / fine;
    Ok((
        coarse,
        1e-4,
        coarse <= 1e-4 && (3.0..=5.0).contains(&ratio),
        format!("halving ratio {ratio:.3} (band [3, 5])"),
    ))
}

fn indistinguishability() -> Check {
    let merged = five_agents()?;
    let mut positions = merged.position_vecs();
    let mut weights = merged.weights().to_vec();
    // Split agent 0 into two coincident halves.
    positions.push(positions[0].clone());
    weights[0] *= 0.5;
    weights.push(weights[0]);
    let split = SystemState::new(positions, weights).map_err(err)?;
    let psi = MassDynamics::pairwise_linear(vec![1.0, -0.5]);
    let config = IntegratorConfig::new(1e-3, 2.0);
    let a = uncontrolled(merged, psi.clone(), config)?;
    let b = uncontrolled(split, psi, config)?;
    if a.samples.len() != b.samples.len() {
        return Err("sample counts differ".into());
    }
    let mut worst = 0.0_f64;
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        let n = sa.state.n();
        // The copies must coincide and carry the summed weight.
        worst = worst.max(max_norm_diff(sb.state.position(0), sb.state.position(n)));
        let folded = merge_coincident(&sb.state, 1e-6);
        if folded.n() != n {
            return Err(format!("split copies separated at t = {}", sb.t()));
        }
        worst = worst
            .max(max_norm_diff(folded.positions(), sa.state.positions()))
            .max(max_norm_diff(folded.weights(), sa.state.weights()));
    }
    at_most(
        worst,
        1e-8,
        format!("{} samples over [0, 2]", a.samples.len()),
    )
}

fn sparsity_pattern() -> Check {
    let free = seed_run(Strategy::L1Free)?;
    let single = free.samples.iter().filter(|s| s.active_count == 1).count() as f64
        / free.samples.len() as f64;
    let um = seed_run(Strategy::L1Um)?;
    let two_or_three = um
        .samples
        .iter()
        .filter(|s| (2..=3).contains(&s.active_count))
        .count() as f64
        / um.samples.len() as f64;
    Ok((
        single,
        0.95,
        single >= 0.95 && two_or_three == 1.0,
        format!("l1_free single-active fraction {single:.4} (>= 0.95); l1_um 2-or-3 fraction {two_or_three:.4} (= 1)"),
    ))
}

fn strategy_ordering() -> Check {
    let ttt = |s: Strategy| -> std::result::Result<f64, String> {
        Ok(seed_run(s)?
            .time_to_threshold(THRESHOLD)
            .unwrap_or(f64::INFINITY))
    };
    let (linf_um, linf_free) = (ttt(Strategy::LinfUm)?, ttt(Strategy::LinfFree)?);
    let (l1_um, l1_free) = (ttt(Strategy::L1Um)?, ttt(Strategy::L1Free)?);
    // Positive when both free strategies win.
    let margin = (linf_um - linf_free).min(l1_um - l1_free);
    Ok((
        margin,
        0.0,
        margin > 0.0,
        format!("linf: free {linf_free} vs um {linf_um}; l1: free {l1_free} vs um {l1_um}"),
    ))
}

/// Richardson ratio `|y_h - y_{h/2}| / |y_{h/2} - y_{h/4}|` of the
/// terminal state (positions and weights) for the seed initial data.
/// Without a control law the dynamics are smooth and the ratio is close
/// to 16 for joint RK4; `strategy` plugs a feedback law in instead.
pub fn richardson_ratio(strategy: Option<Strategy>, h: f64) -> std::result::Result<f64, String> {
    let (cfg, r) = seed()?;
    let psi = MassDynamics::model2(r.kernel.clone());
    let law = match strategy {
        None => ControlLaw::new(LawKind::Zero, r.target.clone()).map_err(err)?,
        Some(s) => build_law(&cfg.with_strategy(s), &r).map_err(err)?,
    };
    let terminal = |step: f64| -> std::result::Result<Vec<f64>, String> {
        let config = IntegratorConfig::new(step, 1.0).with_sampling(ControlSampling::Hold);
        let traj = simulate(r.initial.clone(), &law, &psi, &r.kernel, &config).map_err(err)?;
        let s = &traj.last().state;
        Ok(s.positions().iter().chain(s.weights()).copied().collect())
    };
    let (y1, y2, y4) = (terminal(h)?, terminal(h / 2.0)?, terminal(h / 4.0)?);
    Ok(norm(&diff(&y1, &y2)) / norm(&diff(&y2, &y4)))
}

/// Band accepted for the Richardson ratio of a fourth-order method.
pub const ORDER_BAND: (f64, f64) = (8.0, 32.0);

fn integrator_order() -> Check {
    let ratio = richardson_ratio(None, 0.1)?;
    Ok((
        ratio,
        16.0,
        (ORDER_BAND.0..=ORDER_BAND.1).contains(&ratio),
        format!("band [{}, {}], nominal 16", ORDER_BAND.0, ORDER_BAND.1),
    ))
}
