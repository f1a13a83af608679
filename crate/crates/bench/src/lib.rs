//! Shared fixtures for the benchmarks in `benches/`.

use std::sync::Arc;

use chimhd_core::experiments::square_bubble_case;
use chimhd_core::{unit_square, Discretization, FieldCoefficients, ProblemCase, State};

/// Spaces on a uniform `n x n` unit-square mesh.
pub fn discretization(n: usize) -> Discretization {
    Discretization::new(Arc::new(unit_square(n).expect("valid mesh")))
}

/// A smooth divergence-free velocity for convection assembly.
pub fn swirl(disc: &Discretization) -> FieldCoefficients {
    use std::f64::consts::PI;
    disc.velocity.interpolate_vector(|x| {
        let (s0, c0) = (PI * x[0]).sin_cos();
        let (s1, c1) = (PI * x[1]).sin_cos();
        [s0 * s0 * s1 * c1, -s0 * c0 * s1 * s1]
    })
}

/// Square-bubble case at mesh width `1/n` with its initial state.
pub fn square_bubble(n: usize) -> (ProblemCase, Discretization, State) {
    let case = square_bubble_case().with_h(1.0 / n as f64).expect("valid width");
    let disc = case.discretization().expect("valid mesh");
    let state = case.initial_state(&disc);
    (case, disc, state)
}
