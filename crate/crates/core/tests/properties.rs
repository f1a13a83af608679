use std::sync::Arc;

use chimhd_core::forms::{convection_matrix, load_scalar, mass_matrix, stiffness_matrix, sym_grad_matrix, Coefficient};
use chimhd_core::linalg::{append_mean_constraint, LinearSystem};
use chimhd_core::{unit_square, Constraint, DirectSolver, FeSpace, FieldCoefficients, SolveStage, SpaceKind};
use proptest::prelude::*;

fn space(n: usize, kind: SpaceKind) -> Arc<FeSpace> {
    Arc::new(FeSpace::new(Arc::new(unit_square(n).unwrap()), kind, Constraint::None))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn frobenius(m: &chimhd_core::SparseMatrix) -> f64 {
    m.values().iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, n)
}

// Mini on a 4x4 mesh: 2 * (25 + 32) DOFs.
const MINI_DOFS: usize = 114;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn convection_is_skew_for_any_advecting_field(w in values(MINI_DOFS), v in values(MINI_DOFS)) {
        let vel = space(4, SpaceKind::MiniVector);
        let w = FieldCoefficients::new(Arc::clone(&vel), w).unwrap();
        let n = convection_matrix(&vel, &w).unwrap();
        let q = n.bilinear(&v, &v).abs();
        prop_assert!(q <= 1e-12 * frobenius(&n).max(1.0) * norm2(&v).max(1.0), "v.N v = {q:e}");
        let nt = n.transpose();
        let sum = chimhd_core::SparseMatrix::combine(&[(1.0, &n), (1.0, &nt)]).unwrap();
        prop_assert!(sum.max_abs() <= 1e-14 * n.max_abs().max(1.0));
    }

    #[test]
    fn weighted_forms_are_linear_in_the_coefficient(a in -3.0..3.0f64, b in -3.0..3.0f64, k in 0.5..4.0f64) {
        let p1 = space(3, SpaceKind::P1);
        let c1 = |x: [f64; 2]| 1.0 + x[0] * x[1];
        let c2 = move |x: [f64; 2]| (k * x[0]).sin() + x[1];
        let mix = move |x: [f64; 2]| a * c1(x) + b * c2(x);
        for form in [mass_matrix, stiffness_matrix] {
            let m1 = form(&p1, Coefficient::Function(&c1)).unwrap();
            let m2 = form(&p1, Coefficient::Function(&c2)).unwrap();
            let mm = form(&p1, Coefficient::Function(&mix)).unwrap();
            let lin = chimhd_core::SparseMatrix::combine(&[(a, &m1), (b, &m2), (-1.0, &mm)]).unwrap();
            prop_assert!(lin.max_abs() <= 1e-13 * (1.0 + mm.max_abs()));
        }
    }

    #[test]
    fn loads_are_linear_in_the_data(a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let p1 = space(3, SpaceKind::P1);
        let f = |_: usize, _: &[f64; 3], x: [f64; 2]| x[0] * x[0] - x[1];
        let g = |_: usize, _: &[f64; 3], x: [f64; 2]| (3.0 * x[1]).cos();
        let h = move |t: usize, bary: &[f64; 3], x: [f64; 2]| a * f(t, bary, x) + b * g(t, bary, x);
        let (lf, lg, lh) = (load_scalar(&p1, &f).unwrap(), load_scalar(&p1, &g).unwrap(), load_scalar(&p1, &h).unwrap());
        for i in 0..lf.len() {
            prop_assert!((a * lf[i] + b * lg[i] - lh[i]).abs() <= 1e-14 * (1.0 + lh[i].abs()));
        }
    }

    #[test]
    fn mean_multiplier_absorbs_weight_direction(rhs in values(16), alpha in -5.0..5.0f64) {
        // pure Neumann Laplacian on a 3x3 mesh: singular without the constraint
        let p1 = space(3, SpaceKind::P1);
        let k = stiffness_matrix(&p1, Coefficient::Constant(1.0)).unwrap();
        let w = p1.integral_weights().unwrap();
        let solve = |b: Vec<f64>| {
            let sys = append_mean_constraint(LinearSystem::new(k.clone(), b).unwrap(), 0, &w).unwrap();
            DirectSolver::new(SolveStage::CahnHilliard).solve_system(&sys).unwrap()
        };
        let x0 = solve(rhs.clone());
        let shifted: Vec<f64> = rhs.iter().zip(&w).map(|(r, wi)| r + alpha * wi).collect();
        let x1 = solve(shifted);
        let mean: f64 = x0[..16].iter().zip(&w).map(|(x, wi)| x * wi).sum();
        prop_assert!(mean.abs() <= 1e-12);
        for i in 0..16 {
            prop_assert!((x0[i] - x1[i]).abs() <= 1e-10 * (1.0 + x0[i].abs()));
        }
        prop_assert!((x1[16] - x0[16] - alpha).abs() <= 1e-9 * (1.0 + alpha.abs()));
    }

    #[test]
    fn weighted_matrices_are_symmetric(k in 0.1..10.0f64) {
        let coeff = move |x: [f64; 2]| 1.0 + k * x[0] * x[0] + x[1];
        for kind in [SpaceKind::P1, SpaceKind::P0, SpaceKind::Rt0, SpaceKind::MiniVector] {
            let m = mass_matrix(&space(3, kind), Coefficient::Function(&coeff)).unwrap();
            prop_assert!(m.symmetry_defect() <= 1e-14 * m.max_abs());
        }
        let vel = space(3, SpaceKind::MiniVector);
        for m in [
            stiffness_matrix(&space(3, SpaceKind::P1), Coefficient::Function(&coeff)).unwrap(),
            sym_grad_matrix(&vel, Coefficient::Function(&coeff)).unwrap(),
        ] {
            prop_assert!(m.symmetry_defect() <= 1e-14 * m.max_abs());
        }
    }
}

#[test]
fn mass_matrix_reproduces_the_area() {
    for kind in [SpaceKind::P1, SpaceKind::P0] {
        let s = space(5, kind);
        let ones = vec![1.0; s.ndofs()];
        let m = mass_matrix(&s, Coefficient::Constant(1.0)).unwrap();
        assert!((m.bilinear(&ones, &ones) - 1.0).abs() < 1e-13);
    }
}

#[test]
fn stiffness_annihilates_constants() {
    let s = space(5, SpaceKind::P1);
    let k = stiffness_matrix(&s, Coefficient::Constant(2.5)).unwrap();
    let y = k.mul_vec(&vec![1.0; s.ndofs()]);
    assert!(y.iter().all(|v| v.abs() < 1e-13));
}
