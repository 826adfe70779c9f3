mod common;

use common::planar_state;
use opinion_weights::control::{ControlLaw, LawKind};
use opinion_weights::integrate::{simulate, IntegratorConfig};
use opinion_weights::meanfield::{
    merge_coincident, source_atoms, velocity_field, weak_form_residual, EmpiricalMeasure,
    TestFunction,
};
use opinion_weights::model::{diameter, rhs_positions};
use opinion_weights::{InteractionKernel, MassDynamics, SystemState};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn velocity_field_matches_agent_velocities(s in planar_state(1, 8)) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let mu = EmpiricalMeasure::from_state(&s);
        let v = rhs_positions(&s, &k).unwrap();
        for (i, x) in s.points().iter().enumerate() {
            prop_assert_eq!(velocity_field(&mu, &k, x), v[2 * i..2 * i + 2].to_vec());
        }
    }

    #[test]
    fn skew_source_has_zero_total(s in planar_state(1, 8), v in prop::array::uniform2(-2.0..2.0f64)) {
        let mu = EmpiricalMeasure::from_state(&s);
        let h = source_atoms(&mu, |x, y| v[0] * (y[0] - x[0]) + v[1] * (y[1] - x[1]));
        prop_assert!(h.total().abs() <= 1e-12);
    }

    #[test]
    fn duplicated_agent_is_indistinguishable(s in planar_state(2, 6), pick in 0usize..6) {
        let i = pick % s.n();
        let mut x = s.position_vecs();
        let mut m = s.weights().to_vec();
        x.push(x[i].clone());
        m[i] *= 0.25;
        m.push(3.0 * m[i]);
        let split = SystemState::new(x, m).unwrap();
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let psi = MassDynamics::pairwise_linear(vec![0.5, 1.0]);
        let law = ControlLaw::new(LawKind::Zero, vec![0.0, 0.0]).unwrap();
        let config = IntegratorConfig::new(1e-2, 2.0);
        let a = simulate(s, &law, &psi, &k, &config).unwrap();
        let b = simulate(split, &law, &psi, &k, &config).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            let folded = merge_coincident(&sb.state, 1e-9);
            prop_assert_eq!(folded.n(), sa.state.n());
            prop_assert!(common::max_abs_diff(folded.positions(), sa.state.positions()) <= 1e-8);
            prop_assert!(common::max_abs_diff(folded.weights(), sa.state.weights()) <= 1e-8);
        }
    }
}

#[test]
fn weak_form_residual_is_second_order() {
    let s = SystemState::new(
        vec![
            vec![0.0, 0.0],
            vec![1.0, 0.2],
            vec![0.3, 0.9],
            vec![-0.4, 0.5],
            vec![0.6, -0.7],
        ],
        vec![1.0, 2.0, 0.5, 1.5, 1.0],
    )
    .unwrap();
    let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
    let psi = MassDynamics::pairwise_linear(vec![1.0, 0.0]);
    let law = ControlLaw::new(LawKind::Zero, vec![0.0, 0.0]).unwrap();
    let traj = simulate(s, &law, &psi, &k, &IntegratorConfig::new(1e-4, 0.2)).unwrap();
    for f in [
        TestFunction::Coordinate(0),
        TestFunction::Quadratic(vec![0.1, 0.1]),
        TestFunction::Bump {
            center: vec![0.0, 0.3],
            sigma: 0.7,
        },
    ] {
        let coarse = weak_form_residual(&traj, &f, 0.1, 2e-3).unwrap();
        let fine = weak_form_residual(&traj, &f, 0.1, 1e-3).unwrap();
        assert!(coarse <= 1e-4, "{f:?}: {coarse}");
        assert!(
            (3.0..=5.0).contains(&(coarse / fine)),
            "{f:?}: ratio {}",
            coarse / fine
        );
    }
}
