#![allow(dead_code)]

use opinion_weights::SystemState;
use proptest::prelude::*;

/// Random valid state with `n` in `1..=max_n`, dimension in `1..=3`.
pub fn state_strategy(max_n: usize) -> impl Strategy<Value = SystemState> {
    (1..=max_n, 1usize..=3).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), n),
            prop::collection::vec(0.1..3.0f64, n),
        )
            .prop_map(|(x, m)| SystemState::new(x, m).unwrap())
    })
}

pub fn planar_state(min_n: usize, max_n: usize) -> impl Strategy<Value = SystemState> {
    (min_n..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 2), n),
            prop::collection::vec(0.2..2.0f64, n),
        )
            .prop_map(|(x, m)| SystemState::new(x, m).unwrap())
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
