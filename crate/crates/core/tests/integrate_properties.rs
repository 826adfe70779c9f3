mod common;

use common::planar_state;
use opinion_weights::control::{ControlLaw, LawKind};
use opinion_weights::integrate::{simulate, ControlSampling, IntegratorConfig, MassMode};
use opinion_weights::model::diameter;
use opinion_weights::{
    barycenter, ControlSet, InteractionKernel, MassDynamics, NormBound, SystemState,
};
use proptest::prelude::*;

fn law(kind: LawKind, target: Vec<f64>) -> ControlLaw {
    ControlLaw::new(kind, target).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn uncontrolled_barycenter_is_constant(s in planar_state(2, 8)) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let bar = barycenter(&s);
        let traj = simulate(s, &law(LawKind::Zero, bar.clone()), &MassDynamics::Zero, &k, &IntegratorConfig::new(1e-2, 2.0)).unwrap();
        for sample in &traj.samples {
            prop_assert!(common::max_abs_diff(&sample.barycenter, &bar) <= 1e-12);
        }
    }

    #[test]
    fn mass_conserving_laws_keep_total_mass(s in planar_state(3, 8), target in prop::collection::vec(-0.5..0.5f64, 2)) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let config = IntegratorConfig::new(1e-2, 0.5).with_sampling(ControlSampling::Stage);
        for set in [
            ControlSet::new(NormBound::Linf { alpha: 2.0 }, true).unwrap(),
            ControlSet::new(NormBound::L1 { budget: 10.0 }, true).unwrap(),
        ] {
            let traj = simulate(s.clone(), &law(LawKind::SteepestDescent(set), target.clone()), &MassDynamics::Zero, &k, &config).unwrap();
            let big_m = s.total_mass();
            for sample in &traj.samples {
                prop_assert!((sample.total_mass - big_m).abs() <= 1e-10 * big_m);
            }
        }
    }

    #[test]
    fn diameter_never_grows_under_mass_conservation(s in planar_state(2, 8), target in prop::collection::vec(-0.5..0.5f64, 2)) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let set = ControlSet::new(NormBound::Linf { alpha: 2.0 }, true).unwrap();
        let config = IntegratorConfig::new(1e-2, 1.0).with_sampling(ControlSampling::Stage);
        let traj = simulate(s, &law(LawKind::SteepestDescent(set), target), &MassDynamics::Zero, &k, &config).unwrap();
        for w in traj.samples.windows(2) {
            prop_assert!(w[1].diameter <= w[0].diameter + 1e-10);
        }
    }

    #[test]
    fn uniform_decay_confines_agents(s in planar_state(2, 8), rate in 1.0..8.0f64) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let x0 = s.clone();
        let traj = simulate(s, &law(LawKind::Zero, vec![0.0, 0.0]), &MassDynamics::UniformDecay { rate }, &k, &IntegratorConfig::new(1e-2, 1.0)).unwrap();
        for sample in &traj.samples {
            let bound = k.delta() / rate * (1.0 - (-rate * sample.t()).exp()) + 1e-6;
            for (x, y) in sample.state.points().iter().zip(x0.points().iter()) {
                let moved = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
                prop_assert!(moved <= bound);
            }
        }
    }
}

fn terminal(h: f64) -> Vec<f64> {
    let s = SystemState::new(
        vec![
            vec![0.0, 0.0],
            vec![1.0, 0.2],
            vec![0.3, 0.9],
            vec![-0.4, 0.5],
        ],
        vec![1.0, 2.0, 0.5, 1.5],
    )
    .unwrap();
    let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
    let psi = MassDynamics::pairwise_linear(vec![0.7, -0.3]);
    let traj = simulate(
        s,
        &law(LawKind::Zero, vec![0.0, 0.0]),
        &psi,
        &k,
        &IntegratorConfig::new(h, 1.0),
    )
    .unwrap();
    let last = &traj.last().state;
    last.positions()
        .iter()
        .chain(last.weights())
        .copied()
        .collect()
}

#[test]
fn halving_step_cuts_error_sixteenfold() {
    let reference = terminal(1e-3);
    let err = |h: f64| common::max_abs_diff(&terminal(h), &reference);
    let ratio = err(0.1) / err(0.05);
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn splitting_mode_reaches_exact_masses() {
    let s = SystemState::new(vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
    let k = InteractionKernel::gaussian(1.0).unwrap();
    let u = vec![-1.0, -2.0];
    let horizon = 3.0_f64.ln();
    let traj = simulate(
        s,
        &law(LawKind::OpenLoop { u, horizon }, vec![0.25]),
        &MassDynamics::Zero,
        &k,
        &IntegratorConfig::new(0.01, 2.0).with_mode(MassMode::ExponentialSplitting),
    )
    .unwrap();
    let at_horizon = traj
        .samples
        .iter()
        .find(|s| s.t() == horizon)
        .expect("a sample lands on the horizon");
    assert!(common::max_abs_diff(at_horizon.state.weights(), &[1.0 / 3.0, 1.0 / 9.0]) <= 1e-12);
    // Control switches off after the horizon.
    assert_eq!(traj.last().state.weights(), at_horizon.state.weights());
}

#[test]
fn stop_eps_ends_the_run() {
    let s = SystemState::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec![1.0, 1.0, 1.0]).unwrap();
    let k = InteractionKernel::gaussian(2.0).unwrap();
    let set = ControlSet::new(NormBound::Linf { alpha: 2.0 }, false).unwrap();
    let config = IntegratorConfig::new(1e-3, 5.0).with_stop_eps(0.05);
    let traj = simulate(
        s,
        &law(LawKind::SteepestDescent(set), vec![0.5]),
        &MassDynamics::Zero,
        &k,
        &config,
    )
    .unwrap();
    assert!(traj.last().target_distance <= 0.05);
    assert!(traj.last().t() < 5.0);
}
