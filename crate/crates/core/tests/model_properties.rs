mod common;

use common::{max_abs_diff, state_strategy};
use opinion_weights::model::{diameter, eval_psi, rhs_masses, rhs_positions};
use opinion_weights::{InteractionKernel, MassDynamics, SystemState};
use proptest::prelude::*;

/// Direct double loop, written independently of the library's summation.
fn velocity_oracle(state: &SystemState, kernel: &InteractionKernel) -> Vec<Vec<f64>> {
    let xs = state.position_vecs();
    let m = state.weights();
    xs.iter()
        .map(|xi| {
            let mut v = vec![0.0; xi.len()];
            for (xj, mj) in xs.iter().zip(m) {
                let r = xi
                    .iter()
                    .zip(xj)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                for k in 0..v.len() {
                    v[k] += mj * kernel.eval(r) * (xj[k] - xi[k]) / state.reference_mass();
                }
            }
            v
        })
        .collect()
}

proptest! {
    #[test]
    fn velocities_match_double_loop(s in state_strategy(8)) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let v = rhs_positions(&s, &k).unwrap();
        let oracle: Vec<f64> = velocity_oracle(&s, &k).concat();
        prop_assert!(max_abs_diff(&v, &oracle) <= 1e-12);
    }

    #[test]
    fn translation_equivariance(s in state_strategy(8), shift in prop::collection::vec(-5.0..5.0f64, 3)) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let moved: Vec<Vec<f64>> = s
            .position_vecs()
            .into_iter()
            .map(|x| x.iter().zip(&shift).map(|(a, b)| a + b).collect())
            .collect();
        let t = SystemState::new(moved, s.weights().to_vec()).unwrap();
        let (a, b) = (rhs_positions(&s, &k).unwrap(), rhs_positions(&t, &k).unwrap());
        prop_assert!(max_abs_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn permutation_equivariance(s in state_strategy(8), rot in 0usize..8) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let n = s.n();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let xs = s.position_vecs();
        let t = SystemState::new(
            perm.iter().map(|&i| xs[i].clone()).collect(),
            perm.iter().map(|&i| s.weights()[i]).collect(),
        )
        .unwrap();
        let (a, b) = (rhs_positions(&s, &k).unwrap(), rhs_positions(&t, &k).unwrap());
        let d = s.dim();
        for (new, &old) in perm.iter().enumerate() {
            prop_assert!(max_abs_diff(&b[new * d..(new + 1) * d], &a[old * d..(old + 1) * d]) <= 1e-12);
        }
    }

    #[test]
    fn velocity_bounded_by_delta(s in state_strategy(8)) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let v = rhs_positions(&s, &k).unwrap();
        let bound = k.delta() * s.total_mass() / s.reference_mass();
        for vi in v.chunks(s.dim()) {
            let speed = vi.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(speed <= bound * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn skew_symmetric_source_conserves_mass(s in state_strategy(8), v in prop::collection::vec(-3.0..3.0f64, 3)) {
        let psi = MassDynamics::pairwise_linear(v[..s.dim()].to_vec());
        let rates = rhs_masses(&s, &psi, &vec![0.0; s.n()]).unwrap();
        prop_assert!(rates.iter().sum::<f64>().abs() <= 1e-12 * s.reference_mass());
    }

    #[test]
    fn model2_conserves_mass(s in state_strategy(8)) {
        let k = InteractionKernel::gaussian(diameter(&s)).unwrap();
        let psi = eval_psi(&s, &MassDynamics::model2(k)).unwrap();
        let total: f64 = psi.iter().zip(s.weights()).map(|(p, m)| p * m).sum();
        prop_assert!(total.abs() <= 1e-12 * s.reference_mass());
    }

    #[test]
    fn pairwise_linear_is_skew(x in prop::collection::vec(-3.0..3.0f64, 2), y in prop::collection::vec(-3.0..3.0f64, 2)) {
        let MassDynamics::Pairwise { source, .. } = MassDynamics::pairwise_linear(vec![0.3, -1.2]) else {
            unreachable!()
        };
        prop_assert!((source(&x, &y) + source(&y, &x)).abs() <= 1e-12);
    }
}
