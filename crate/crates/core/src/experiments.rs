//! Problem catalog: manufactured solutions with their forcing, and the
//! physical bubble, shear-layer and buoyancy cases.

use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diagnostics::{error_norms, ErrorReport};
use crate::forms::{blend, double_well_derivative};
use crate::mesh::{structured_rect_mesh, BoundaryMarker, MeshError, Point};
use crate::scheme::{
    Discretization, Forcing, MagneticField, ProblemData, RunFailure, Scheme, SchemeError, SchemeParams, State, StepLog,
    Trajectory,
};

/// Analytic fields with the derivatives needed to build forcing terms.
/// `grad_u[i][j]` is `d u_i / d x_j`.
pub trait ExactSolution: Send + Sync {
    fn name(&self) -> &'static str;
    fn u(&self, x: Point, t: f64) -> [f64; 2];
    fn u_t(&self, x: Point, t: f64) -> [f64; 2];
    fn grad_u(&self, x: Point, t: f64) -> [[f64; 2]; 2];
    fn lap_u(&self, x: Point, t: f64) -> [f64; 2];
    fn p(&self, x: Point, t: f64) -> f64;
    fn grad_p(&self, x: Point, t: f64) -> [f64; 2];
    fn j(&self, x: Point, t: f64) -> [f64; 2];
    fn div_j(&self, x: Point, t: f64) -> f64;
    fn phi_pot(&self, x: Point, t: f64) -> f64;
    fn grad_phi_pot(&self, x: Point, t: f64) -> [f64; 2];
    fn phi(&self, x: Point, t: f64) -> f64;
    fn phi_t(&self, x: Point, t: f64) -> f64;
    fn grad_phi(&self, x: Point, t: f64) -> [f64; 2];
    fn lap_phi(&self, x: Point, t: f64) -> f64;
    fn mu(&self, x: Point, t: f64) -> f64;
    fn grad_mu(&self, x: Point, t: f64) -> [f64; 2];
    fn lap_mu(&self, x: Point, t: f64) -> f64;
}

/// Fields linear or constant in space: the error is temporal only.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemporalExact;

impl ExactSolution for TemporalExact {
    fn name(&self) -> &'static str {
        "temporal"
    }
    fn u(&self, x: Point, t: f64) -> [f64; 2] {
        [x[1] * (-t).exp(), x[0] * t.cos()]
    }
    fn u_t(&self, x: Point, t: f64) -> [f64; 2] {
        [-x[1] * (-t).exp(), -x[0] * t.sin()]
    }
    fn grad_u(&self, _: Point, t: f64) -> [[f64; 2]; 2] {
        [[0.0, (-t).exp()], [t.cos(), 0.0]]
    }
    fn lap_u(&self, _: Point, _: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn p(&self, _: Point, t: f64) -> f64 {
        t.sin()
    }
    fn grad_p(&self, _: Point, _: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn j(&self, _: Point, t: f64) -> [f64; 2] {
        [t.sin(), t.cos()]
    }
    fn div_j(&self, _: Point, _: f64) -> f64 {
        0.0
    }
    fn phi_pot(&self, _: Point, _: f64) -> f64 {
        1.0
    }
    fn grad_phi_pot(&self, _: Point, _: f64) -> [f64; 2] {
        [0.0, 0.0]
    }
    fn phi(&self, x: Point, t: f64) -> f64 {
        (x[0] + x[1]) * (-t).exp()
    }
    fn phi_t(&self, x: Point, t: f64) -> f64 {
        -(x[0] + x[1]) * (-t).exp()
    }
    fn grad_phi(&self, _: Point, t: f64) -> [f64; 2] {
        [(-t).exp(), (-t).exp()]
    }
    fn lap_phi(&self, _: Point, _: f64) -> f64 {
        0.0
    }
    fn mu(&self, x: Point, t: f64) -> f64 {
        x[0] * t.cos()
    }
    fn grad_mu(&self, _: Point, t: f64) -> [f64; 2] {
        [t.cos(), 0.0]
    }
    fn lap_mu(&self, _: Point, _: f64) -> f64 {
        0.0
    }
}

/// Smooth nonpolynomial fields for simultaneous refinement.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpatialExact;

impl ExactSolution for SpatialExact {
    fn name(&self) -> &'static str {
        "spatial"
    }
    fn u(&self, x: Point, t: f64) -> [f64; 2] {
        [x[1].sin() * (-t).exp(), x[0] * x[0] * t.cos()]
    }
    fn u_t(&self, x: Point, t: f64) -> [f64; 2] {
        [-x[1].sin() * (-t).exp(), -x[0] * x[0] * t.sin()]
    }
    fn grad_u(&self, x: Point, t: f64) -> [[f64; 2]; 2] {
        [[0.0, x[1].cos() * (-t).exp()], [2.0 * x[0] * t.cos(), 0.0]]
    }
    fn lap_u(&self, x: Point, t: f64) -> [f64; 2] {
        [-x[1].sin() * (-t).exp(), 2.0 * t.cos()]
    }
    fn p(&self, x: Point, t: f64) -> f64 {
        x[1] * t.sin()
    }
    fn grad_p(&self, _: Point, t: f64) -> [f64; 2] {
        [0.0, t.sin()]
    }
    fn j(&self, x: Point, t: f64) -> [f64; 2] {
        [x[1] * x[1] * t.sin(), x[0].sin() * t.cos()]
    }
    fn div_j(&self, _: Point, _: f64) -> f64 {
        0.0
    }
    fn phi_pot(&self, x: Point, t: f64) -> f64 {
        x[0] * (-t).exp()
    }
    fn grad_phi_pot(&self, _: Point, t: f64) -> [f64; 2] {
        [(-t).exp(), 0.0]
    }
    fn phi(&self, x: Point, t: f64) -> f64 {
        x[0].sin() * (-t).exp()
    }
    fn phi_t(&self, x: Point, t: f64) -> f64 {
        -x[0].sin() * (-t).exp()
    }
    fn grad_phi(&self, x: Point, t: f64) -> [f64; 2] {
        [x[0].cos() * (-t).exp(), 0.0]
    }
    fn lap_phi(&self, x: Point, t: f64) -> f64 {
        -x[0].sin() * (-t).exp()
    }
    fn mu(&self, x: Point, t: f64) -> f64 {
        x[1].cos() * t.cos()
    }
    fn grad_mu(&self, x: Point, t: f64) -> [f64; 2] {
        [0.0, -x[1].sin() * t.cos()]
    }
    fn lap_mu(&self, x: Point, t: f64) -> f64 {
        -x[1].cos() * t.cos()
    }
}

/// Strong-form equations checked by the forcing oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Equation {
    Momentum,
    Incompressibility,
    Ohm,
    Charge,
    Phase,
    ChemicalPotential,
    PhaseFlux,
    ChemicalFlux,
}

impl Equation {
    pub const ALL: [Equation; 8] = [
        Equation::Momentum,
        Equation::Incompressibility,
        Equation::Ohm,
        Equation::Charge,
        Equation::Phase,
        Equation::ChemicalPotential,
        Equation::PhaseFlux,
        Equation::ChemicalFlux,
    ];

    /// Whether the equation has a source term; the divergence constraints
    /// are homogeneous for both manufactured solutions.
    pub fn has_source(self) -> bool {
        !matches!(self, Equation::Incompressibility | Equation::Charge)
    }

    pub fn name(self) -> &'static str {
        match self {
            Equation::Momentum => "momentum",
            Equation::Incompressibility => "incompressibility",
            Equation::Ohm => "ohm",
            Equation::Charge => "charge",
            Equation::Phase => "phase",
            Equation::ChemicalPotential => "chemical_potential",
            Equation::PhaseFlux => "phase_flux",
            Equation::ChemicalFlux => "chemical_flux",
        }
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Equation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Equation::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown equation `{s}`"))
    }
}

/// Material derivative of the viscosity blend with respect to the phase.
fn blend_slope(phi: f64, v1: f64, v2: f64) -> f64 {
    if phi.abs() < 1.0 {
        0.5 * (v1 - v2)
    } else {
        0.0
    }
}

/// Forcing obtained by substituting an exact solution into the strong
/// equations, using the solution's analytic derivatives.
#[derive(Clone)]
pub struct ForcingSet {
    pub exact: Arc<dyn ExactSolution>,
    pub params: SchemeParams,
    /// Adds 1 to one equation's source, for sensitivity checks.
    pub corrupt: Option<Equation>,
}

impl fmt::Debug for ForcingSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForcingSet").field("exact", &self.exact.name()).field("corrupt", &self.corrupt).finish()
    }
}

impl ForcingSet {
    pub fn new(exact: Arc<dyn ExactSolution>, params: SchemeParams) -> Self {
        Self { exact, params, corrupt: None }
    }

    fn bump(&self, eq: Equation) -> f64 {
        if self.corrupt == Some(eq) {
            1.0
        } else {
            0.0
        }
    }
}

impl Forcing for ForcingSet {
    fn f_u(&self, x: Point, t: f64) -> [f64; 2] {
        let e = &self.exact;
        let (u, ut, g, lap) = (e.u(x, t), e.u_t(x, t), e.grad_u(x, t), e.lap_u(x, t));
        let phi = e.phi(x, t);
        let gphi = e.grad_phi(x, t);
        let (eta1, eta2) = self.params.eta;
        let eta = blend(phi, eta1, eta2);
        let deta = blend_slope(phi, eta1, eta2);
        let geta = [deta * gphi[0], deta * gphi[1]];
        let d = [[g[0][0], 0.5 * (g[0][1] + g[1][0])], [0.5 * (g[0][1] + g[1][0]), g[1][1]]];
        let gp = e.grad_p(x, t);
        let gmu = e.grad_mu(x, t);
        let j = e.j(x, t);
        let b = self.params.b.at(x);
        let jxb = [b * j[1], -b * j[0]];
        let mut out = [0.0; 2];
        for i in 0..2 {
            let conv = g[i][0] * u[0] + g[i][1] * u[1];
            let visc = eta * lap[i] + 2.0 * (d[i][0] * geta[0] + d[i][1] * geta[1]);
            out[i] = ut[i] + conv - visc + gp[i] + phi * gmu[i] - jxb[i];
        }
        out[0] += self.bump(Equation::Momentum);
        out
    }

    fn f_j(&self, x: Point, t: f64) -> [f64; 2] {
        let e = &self.exact;
        let j = e.j(x, t);
        let u = e.u(x, t);
        let gpot = e.grad_phi_pot(x, t);
        let sinv = 1.0 / blend(e.phi(x, t), self.params.sigma.0, self.params.sigma.1);
        let b = self.params.b.at(x);
        let uxb = [b * u[1], -b * u[0]];
        [sinv * j[0] + gpot[0] - uxb[0] + self.bump(Equation::Ohm), sinv * j[1] + gpot[1] - uxb[1]]
    }

    fn f_phi(&self, x: Point, t: f64) -> f64 {
        let e = &self.exact;
        let u = e.u(x, t);
        let g = e.grad_phi(x, t);
        e.phi_t(x, t) + u[0] * g[0] + u[1] * g[1] - self.params.mobility * e.lap_mu(x, t) + self.bump(Equation::Phase)
    }

    fn f_mu(&self, x: Point, t: f64) -> f64 {
        let e = &self.exact;
        let (l, eps) = (self.params.lambda, self.params.eps);
        -l * eps * e.lap_phi(x, t) + l / eps * double_well_derivative(e.phi(x, t)) - e.mu(x, t)
            + self.bump(Equation::ChemicalPotential)
    }

    fn g_phi(&self, x: Point, n: Point, t: f64) -> f64 {
        let e = &self.exact;
        let gm = e.grad_mu(x, t);
        let u = e.u(x, t);
        self.params.mobility * (gm[0] * n[0] + gm[1] * n[1]) - e.phi(x, t) * (u[0] * n[0] + u[1] * n[1])
            + self.bump(Equation::PhaseFlux)
    }

    fn g_mu(&self, x: Point, n: Point, t: f64) -> f64 {
        let g = self.exact.grad_phi(x, t);
        self.params.lambda * self.params.eps * (g[0] * n[0] + g[1] * n[1]) + self.bump(Equation::ChemicalFlux)
    }
}

/// Boundary data and forcing of a manufactured run.
#[derive(Debug, Clone)]
pub struct ManufacturedProblem {
    pub forcing: ForcingSet,
}

impl ProblemData for ManufacturedProblem {
    fn boundary_velocity(&self, x: Point, t: f64) -> [f64; 2] {
        self.forcing.exact.u(x, t)
    }

    fn boundary_current(&self, x: Point, t: f64) -> [f64; 2] {
        self.forcing.exact.j(x, t)
    }

    fn forcing(&self) -> Option<&dyn Forcing> {
        Some(&self.forcing)
    }
}

/// Velocity Dirichlet data of a physical case.
pub struct PhysicalProblem {
    velocity: Option<Arc<dyn Fn(Point, f64) -> [f64; 2] + Send + Sync>>,
}

impl ProblemData for PhysicalProblem {
    fn boundary_velocity(&self, x: Point, t: f64) -> [f64; 2] {
        self.velocity.as_ref().map_or([0.0, 0.0], |f| f(x, t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcingReport {
    /// Largest absolute residual per equation, in `Equation::ALL` order.
    pub max_residual: Vec<(Equation, f64)>,
    pub tolerance: f64,
    pub samples: usize,
}

impl ForcingReport {
    pub fn worst(&self) -> (Equation, f64) {
        self.max_residual.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap()
    }

    pub fn passed(&self) -> bool {
        self.worst().1 <= self.tolerance
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("forcing residual {residual:e} in the {equation} equation exceeds {tolerance:e}")]
pub struct ForcingError {
    pub equation: Equation,
    pub residual: f64,
    pub tolerance: f64,
}

pub const FORCING_TOL: f64 = 1e-5;
pub const FORCING_POINTS: usize = 200;
pub const FORCING_TIMES: usize = 20;

const FD: f64 = 1e-5;
const FD2: f64 = 1e-4;

fn fd_grad(f: &dyn Fn(Point) -> f64, x: Point) -> [f64; 2] {
    [
        (f([x[0] + FD, x[1]]) - f([x[0] - FD, x[1]])) / (2.0 * FD),
        (f([x[0], x[1] + FD]) - f([x[0], x[1] - FD])) / (2.0 * FD),
    ]
}

fn fd_lap(f: &dyn Fn(Point) -> f64, x: Point) -> f64 {
    let c = f(x);
    (f([x[0] + FD2, x[1]]) + f([x[0] - FD2, x[1]]) + f([x[0], x[1] + FD2]) + f([x[0], x[1] - FD2]) - 4.0 * c)
        / (FD2 * FD2)
}

fn fd_dt(f: &dyn Fn(f64) -> f64, t: f64) -> f64 {
    (f(t + FD) - f(t - FD)) / (2.0 * FD)
}

/// Strong-form residuals at one interior point from finite differences of
/// the exact values only.
fn interior_residuals(exact: &dyn ExactSolution, forcing: &ForcingSet, x: Point, t: f64) -> [(Equation, f64); 6] {
    let p = &forcing.params;
    let comp = |i: usize| move |y: Point| exact.u(y, t)[i];
    let (u0, u1) = (comp(0), comp(1));
    let gu = [fd_grad(&u0, x), fd_grad(&u1, x)];
    let u = exact.u(x, t);
    let phi_at = |y: Point| exact.phi(y, t);
    let mu_at = |y: Point| exact.mu(y, t);
    let phi = exact.phi(x, t);

    // div(2 eta D(u)) from nested central differences of the stress
    let stress = |y: Point, i: usize, k: usize| {
        let g = [fd_grad(&comp(0), y), fd_grad(&comp(1), y)];
        2.0 * blend(exact.phi(y, t), p.eta.0, p.eta.1) * 0.5 * (g[i][k] + g[k][i])
    };
    let div_stress = |i: usize| {
        (stress([x[0] + FD2, x[1]], i, 0) - stress([x[0] - FD2, x[1]], i, 0)) / (2.0 * FD2)
            + (stress([x[0], x[1] + FD2], i, 1) - stress([x[0], x[1] - FD2], i, 1)) / (2.0 * FD2)
    };
    let gp = fd_grad(&|y| exact.p(y, t), x);
    let gmu = fd_grad(&mu_at, x);
    let j = exact.j(x, t);
    let b = p.b.at(x);
    let fu = forcing.f_u(x, t);
    let mut momentum = 0.0f64;
    for i in 0..2 {
        let ut = fd_dt(&|s| exact.u(x, s)[i], t);
        let conv = gu[i][0] * u[0] + gu[i][1] * u[1];
        let lorentz = if i == 0 { b * j[1] } else { -b * j[0] };
        let r = ut + conv - div_stress(i) + gp[i] + phi * gmu[i] - lorentz - fu[i];
        momentum = momentum.max(r.abs());
    }
    let incompressibility = (gu[0][0] + gu[1][1]).abs();

    let gpot = fd_grad(&|y| exact.phi_pot(y, t), x);
    let sinv = 1.0 / blend(phi, p.sigma.0, p.sigma.1);
    let fj = forcing.f_j(x, t);
    let uxb = [b * u[1], -b * u[0]];
    let ohm = (0..2).map(|i| (sinv * j[i] + gpot[i] - uxb[i] - fj[i]).abs()).fold(0.0, f64::max);
    let charge = (fd_grad(&|y| exact.j(y, t)[0], x)[0] + fd_grad(&|y| exact.j(y, t)[1], x)[1]).abs();

    let gphi = fd_grad(&phi_at, x);
    let phase = (fd_dt(&|s| exact.phi(x, s), t) + u[0] * gphi[0] + u[1] * gphi[1]
        - p.mobility * fd_lap(&mu_at, x)
        - forcing.f_phi(x, t))
    .abs();
    let chem = (-p.lambda * p.eps * fd_lap(&phi_at, x) + p.lambda / p.eps * double_well_derivative(phi)
        - exact.mu(x, t)
        - forcing.f_mu(x, t))
    .abs();
    [
        (Equation::Momentum, momentum),
        (Equation::Incompressibility, incompressibility),
        (Equation::Ohm, ohm),
        (Equation::Charge, charge),
        (Equation::Phase, phase),
        (Equation::ChemicalPotential, chem),
    ]
}

fn boundary_residuals(
    exact: &dyn ExactSolution,
    forcing: &ForcingSet,
    x: Point,
    n: Point,
    t: f64,
) -> [(Equation, f64); 2] {
    let p = &forcing.params;
    let gmu = fd_grad(&|y| exact.mu(y, t), x);
    let gphi = fd_grad(&|y| exact.phi(y, t), x);
    let u = exact.u(x, t);
    let dn = |g: [f64; 2]| g[0] * n[0] + g[1] * n[1];
    let flux = p.mobility * dn(gmu) - exact.phi(x, t) * dn(u);
    [
        (Equation::PhaseFlux, (flux - forcing.g_phi(x, n, t)).abs()),
        (Equation::ChemicalFlux, (p.lambda * p.eps * dn(gphi) - forcing.g_mu(x, n, t)).abs()),
    ]
}

/// Samples the strong-form residuals of every equation at
/// `FORCING_POINTS` random interior points times `FORCING_TIMES` random
/// times (and as many boundary points), with finite differences of the
/// exact values as the independent oracle.
pub fn verify_forcing(
    exact: &dyn ExactSolution,
    forcing: &ForcingSet,
    domain: [Point; 2],
    t_final: f64,
    seed: u64,
) -> ForcingReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = domain;
    let points: Vec<Point> =
        (0..FORCING_POINTS).map(|_| [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])]).collect();
    let times: Vec<f64> = (0..FORCING_TIMES).map(|_| rng.random_range(0.0..t_final.max(1e-3))).collect();
    let markers = [BoundaryMarker::Left, BoundaryMarker::Right, BoundaryMarker::Bottom, BoundaryMarker::Top];
    let boundary: Vec<(Point, Point)> = (0..FORCING_POINTS)
        .map(|k| {
            let m = markers[k % 4];
            let s: f64 = rng.random_range(0.0..1.0);
            let x = match m {
                BoundaryMarker::Left => [lo[0], lo[1] + s * (hi[1] - lo[1])],
                BoundaryMarker::Right => [hi[0], lo[1] + s * (hi[1] - lo[1])],
                BoundaryMarker::Bottom => [lo[0] + s * (hi[0] - lo[0]), lo[1]],
                BoundaryMarker::Top => [lo[0] + s * (hi[0] - lo[0]), hi[1]],
            };
            (x, m.outward_normal())
        })
        .collect();
    let mut worst: Vec<(Equation, f64)> = Equation::ALL.iter().map(|&e| (e, 0.0)).collect();
    let mut record = |eq: Equation, r: f64| {
        let slot = worst.iter_mut().find(|(e, _)| *e == eq).unwrap();
        // NaN must not hide behind max
        slot.1 = if r.is_nan() { f64::INFINITY } else { slot.1.max(r) };
    };
    for &t in &times {
        for &x in &points {
            for (eq, r) in interior_residuals(exact, forcing, x, t) {
                record(eq, r);
            }
        }
        for &(x, n) in &boundary {
            for (eq, r) in boundary_residuals(exact, forcing, x, n, t) {
                record(eq, r);
            }
        }
    }
    ForcingReport { max_residual: worst, tolerance: FORCING_TOL, samples: FORCING_POINTS * FORCING_TIMES }
}

/// `verify_forcing` as a gate.
pub fn require_verified_forcing(case: &ProblemCase, seed: u64) -> Result<ForcingReport, ForcingError> {
    let exact = case.exact.as_ref().expect("manufactured case");
    let report = verify_forcing(exact.as_ref(), &case.forcing_set(), case.domain_corners(), case.params.t_final, seed);
    let (equation, residual) = report.worst();
    if residual > report.tolerance || !residual.is_finite() {
        return Err(ForcingError { equation, residual, tolerance: report.tolerance });
    }
    Ok(report)
}

type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;
type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type BoundaryFn = Arc<dyn Fn(Point, f64) -> [f64; 2] + Send + Sync>;

/// A fully specified run.
#[derive(Clone)]
pub struct ProblemCase {
    pub name: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub subdivisions: (usize, usize),
    pub params: SchemeParams,
    pub initial_velocity: VectorFn,
    pub initial_phase: ScalarFn,
    pub boundary_velocity: Option<BoundaryFn>,
    pub exact: Option<Arc<dyn ExactSolution>>,
    /// Injected forcing defect (manufactured cases only).
    pub corrupt: Option<Equation>,
}

impl fmt::Debug for ProblemCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemCase")
            .field("name", &self.name)
            .field("x_range", &self.x_range)
            .field("y_range", &self.y_range)
            .field("subdivisions", &self.subdivisions)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Run(#[from] RunFailure),
    #[error(transparent)]
    Forcing(#[from] ForcingError),
    #[error("{0}")]
    Invalid(String),
}

pub const CASE_NAMES: [&str; 7] =
    ["temporal", "spatial", "square-bubble", "kissing-bubbles", "kelvin-helmholtz", "gravity", "zero-smoke"];

impl ProblemCase {
    pub fn domain_corners(&self) -> [Point; 2] {
        [[self.x_range.0, self.y_range.0], [self.x_range.1, self.y_range.1]]
    }

    /// Mesh width `1 / nx` scaled to the domain width.
    pub fn h(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / self.subdivisions.0 as f64
    }

    /// Sets the mesh width on the x axis; the y count keeps the cell aspect.
    pub fn with_h(mut self, h: f64) -> Result<Self, CaseError> {
        let nx = ((self.x_range.1 - self.x_range.0) / h).round();
        let ny = ((self.y_range.1 - self.y_range.0) / h).round();
        if !(nx >= 1.0 && ny >= 1.0) {
            return Err(CaseError::Invalid(format!("mesh width {h} too large for the domain")));
        }
        self.subdivisions = (nx as usize, ny as usize);
        Ok(self)
    }

    pub fn with_time(mut self, tau: f64, t_final: f64) -> Result<Self, CaseError> {
        self.params = self.params.with_time(tau, t_final)?;
        Ok(self)
    }

    pub fn discretization(&self) -> Result<Discretization, CaseError> {
        let (nx, ny) = self.subdivisions;
        let mesh = structured_rect_mesh(nx, ny, self.x_range, self.y_range)?;
        Ok(Discretization::new(Arc::new(mesh)))
    }

    pub fn initial_state(&self, disc: &Discretization) -> State {
        let (u0, phi0) = (&self.initial_velocity, &self.initial_phase);
        State::initial(disc, |x| u0(x), |x| phi0(x))
    }

    pub fn forcing_set(&self) -> ForcingSet {
        let exact = Arc::clone(self.exact.as_ref().expect("manufactured case"));
        ForcingSet { exact, params: self.params.clone(), corrupt: self.corrupt }
    }

    pub fn problem_data(&self) -> Box<dyn ProblemData> {
        if self.exact.is_some() {
            Box::new(ManufacturedProblem { forcing: self.forcing_set() })
        } else {
            Box::new(PhysicalProblem { velocity: self.boundary_velocity.clone() })
        }
    }

    /// Builds the scheme and runs to the final time.
    pub fn run(&self, observer: impl FnMut(&State, &StepLog)) -> Result<(Trajectory, Discretization), CaseError> {
        let disc = self.discretization()?;
        let mut scheme = Scheme::new(disc.clone(), self.params.clone())?;
        let state = self.initial_state(&disc);
        let data = self.problem_data();
        let traj = scheme.run(state, data.as_ref(), observer)?;
        Ok((traj, disc))
    }

    /// Runs a manufactured case and measures the errors at the final time.
    pub fn run_errors(&self) -> Result<ErrorReport, CaseError> {
        let exact = Arc::clone(
            self.exact.as_ref().ok_or_else(|| CaseError::Invalid(format!("{} has no exact solution", self.name)))?,
        );
        let (traj, _) = self.run(|_, _| {})?;
        let mut report = error_norms(&traj.state, exact.as_ref(), self.params.tau);
        report.h = self.h();
        Ok(report)
    }
}

fn case(
    name: &str,
    x_range: (f64, f64),
    y_range: (f64, f64),
    n: (usize, usize),
    params: SchemeParams,
    u0: VectorFn,
    phi0: ScalarFn,
) -> ProblemCase {
    ProblemCase {
        name: name.into(),
        x_range,
        y_range,
        subdivisions: n,
        params,
        initial_velocity: u0,
        initial_phase: phi0,
        boundary_velocity: None,
        exact: None,
        corrupt: None,
    }
}

fn manufactured(name: &str, exact: Arc<dyn ExactSolution>, n: usize, tau: f64) -> ProblemCase {
    let params = SchemeParams::unit(tau, 1.0).expect("valid manufactured time grid");
    let (e0, e1) = (Arc::clone(&exact), Arc::clone(&exact));
    let mut c = case(
        name,
        (0.0, 1.0),
        (0.0, 1.0),
        (n, n),
        params,
        Arc::new(move |x| e0.u(x, 0.0)),
        Arc::new(move |x| e1.phi(x, 0.0)),
    );
    c.exact = Some(exact);
    c
}

/// Step sizes of the temporal study.
pub const TEMPORAL_TAUS: [f64; 6] = [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625];

/// Linear-in-space manufactured case on a fixed `h = 1/10` mesh.
pub fn temporal_case() -> ProblemCase {
    manufactured("temporal", Arc::new(TemporalExact), 10, TEMPORAL_TAUS[0])
}

/// Simultaneous refinement level `k`: `h = 1 / (2^(k+1))`, `tau = h / 2`.
pub fn spatial_case(level: u32) -> ProblemCase {
    let n = 2usize << level;
    manufactured("spatial", Arc::new(SpatialExact), n, 0.5 / n as f64)
}

fn physical_params(tau: f64, t_final: f64) -> SchemeParams {
    SchemeParams::unit(tau, t_final).expect("valid physical time grid")
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Relaxation of a square bubble.
pub fn square_bubble_case() -> ProblemCase {
    let mut p = physical_params(0.01, 1.0);
    p.eps = 0.01;
    p.lambda = 0.1;
    p.mobility = 0.1;
    let eps = p.eps;
    case(
        "square-bubble",
        (0.0, 1.0),
        (0.0, 1.0),
        (64, 64),
        p,
        Arc::new(|_| [0.0, 0.0]),
        Arc::new(move |x| (((x[0] + x[1] - 1.0).abs() + (x[0] - x[1]).abs() - 0.4) / (SQRT2 * eps)).tanh()),
    )
}

/// Two touching circular bubbles merging.
pub fn kissing_bubbles_case() -> ProblemCase {
    let mut c = square_bubble_case();
    c.name = "kissing-bubbles".into();
    c.params = c.params.with_time(0.01, 15.0).expect("valid grid");
    let eps = c.params.eps;
    c.initial_phase = Arc::new(move |x| {
        let d = |o: Point| ((x[0] - o[0]).powi(2) + (x[1] - o[1]).powi(2)).sqrt();
        1.0 - ((d([0.3, 0.5]) - 0.2) / (SQRT2 * eps)).tanh() - ((d([0.7, 0.5]) - 0.2) / (SQRT2 * eps)).tanh()
    });
    c
}

/// Perturbed shear layer on `(0, 0.5) x (0, 1)`.
pub fn kelvin_helmholtz_case() -> ProblemCase {
    let mut p = physical_params(0.01, 2.0);
    p.eta = (2e-4, 2e-4);
    p.eps = 0.01;
    p.mobility = 0.01;
    p.lambda = 1e-3;
    let eps = p.eps;
    let yc = |x: f64| 0.5 + 0.005 * (4.0 * PI * x).sin();
    let profile = move |x: Point| [(50.0 * (x[1] - yc(x[0]))).tanh(), 0.0];
    let mut c = case(
        "kelvin-helmholtz",
        (0.0, 0.5),
        (0.0, 1.0),
        (64, 128),
        p,
        Arc::new(profile),
        Arc::new(move |x| (6.0 * (x[1] - yc(x[0])) / (SQRT2 * eps)).tanh()),
    );
    // moving lids; the lateral walls carry the initial shear profile
    c.boundary_velocity = Some(Arc::new(move |x, _| {
        if x[1] >= 1.0 - 1e-12 {
            [1.0, 0.0]
        } else if x[1] <= 1e-12 {
            [-1.0, 0.0]
        } else {
            profile(x)
        }
    }));
    c
}

/// Buoyant bubble with surface tension `gamma`.
pub fn gravity_case(gamma: f64) -> ProblemCase {
    let mut p = physical_params(0.005, 2.5);
    p.eta = (0.01, 0.01);
    p.eps = 0.01;
    p.sigma = (100.0, 100.0);
    p.mobility = 1e-3;
    p.lambda = gamma;
    p.gravity = Some([0.0, 10.0]);
    let eps = p.eps;
    case(
        "gravity",
        (0.0, 1.0),
        (0.0, 1.0),
        (100, 100),
        p,
        Arc::new(|_| [0.0, 0.0]),
        Arc::new(move |x| {
            let d = ((x[0] - 0.5).powi(2) + (x[1] - 0.8).powi(2)).sqrt();
            -((d - 0.1) / (SQRT2 * eps)).tanh()
        }),
    )
}

/// Quiescent zero phase on a coarse mesh.
pub fn zero_smoke_case() -> ProblemCase {
    case(
        "zero-smoke",
        (0.0, 1.0),
        (0.0, 1.0),
        (4, 4),
        physical_params(0.1, 1.0),
        Arc::new(|_| [0.0, 0.0]),
        Arc::new(|_| 0.0),
    )
}

pub fn case_by_name(name: &str) -> Result<ProblemCase, CaseError> {
    Ok(match name {
        "temporal" => temporal_case(),
        "spatial" => spatial_case(0),
        "square-bubble" => square_bubble_case(),
        "kissing-bubbles" => kissing_bubbles_case(),
        "kelvin-helmholtz" => kelvin_helmholtz_case(),
        "gravity" => gravity_case(0.01),
        "zero-smoke" => zero_smoke_case(),
        other => return Err(CaseError::UnknownCase(other.into())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    Time,
    Space,
}

impl std::str::FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time" => Ok(Self::Time),
            "space" => Ok(Self::Space),
            _ => Err(format!("sweep mode must be `time` or `space`, got `{s}`")),
        }
    }
}

/// The runs of a convergence study, coarsest first.
pub fn sweep_cases(mode: SweepMode) -> Vec<ProblemCase> {
    match mode {
        SweepMode::Time => {
            TEMPORAL_TAUS.iter().map(|&tau| temporal_case().with_time(tau, 1.0).expect("valid grid")).collect()
        }
        SweepMode::Space => (0..6).map(spatial_case).collect(),
    }
}

/// Runs a sweep on up to `jobs` threads after gating on the forcing oracle.
pub fn run_sweep(cases: &[ProblemCase], jobs: usize, seed: u64) -> Result<Vec<ErrorReport>, CaseError> {
    if let Some(first) = cases.first() {
        require_verified_forcing(first, seed)?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ErrorReport, CaseError>>>> =
        Mutex::new((0..cases.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cases.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= cases.len() {
                    break;
                }
                let r = cases[k].run_errors();
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("every case ran")).collect()
}

/// Uniform sampling of `MagneticField` values for reports.
pub fn describe_b(b: &MagneticField) -> String {
    match b {
        MagneticField::Constant(v) => format!("{v}"),
        MagneticField::Function(_) => "function".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(exact: &dyn ExactSolution) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            let t = rng.random_range(0.0..1.0);
            // encoded derivatives against central differences
            let g = exact.grad_u(x, t);
            for i in 0..2 {
                let fd = fd_grad(&|y| exact.u(y, t)[i], x);
                assert!((fd[0] - g[i][0]).abs() < 1e-8 && (fd[1] - g[i][1]).abs() < 1e-8);
                assert!((fd_lap(&|y| exact.u(y, t)[i], x) - exact.lap_u(x, t)[i]).abs() < 1e-5);
                assert!((fd_dt(&|s| exact.u(x, s)[i], t) - exact.u_t(x, t)[i]).abs() < 1e-8);
            }
            assert!((g[0][0] + g[1][1]).abs() < 1e-12);
            let pairs: [(&dyn Fn(Point) -> f64, [f64; 2]); 4] = [
                (&|y| exact.p(y, t), exact.grad_p(x, t)),
                (&|y| exact.phi_pot(y, t), exact.grad_phi_pot(x, t)),
                (&|y| exact.phi(y, t), exact.grad_phi(x, t)),
                (&|y| exact.mu(y, t), exact.grad_mu(x, t)),
            ];
            for (f, g) in pairs {
                let fd = fd_grad(f, x);
                assert!((fd[0] - g[0]).abs() < 1e-8 && (fd[1] - g[1]).abs() < 1e-8);
            }
            assert!((fd_lap(&|y| exact.phi(y, t), x) - exact.lap_phi(x, t)).abs() < 1e-5);
            assert!((fd_lap(&|y| exact.mu(y, t), x) - exact.lap_mu(x, t)).abs() < 1e-5);
            assert!((fd_dt(&|s| exact.phi(x, s), t) - exact.phi_t(x, t)).abs() < 1e-8);
            let dj = fd_grad(&|y| exact.j(y, t)[0], x)[0] + fd_grad(&|y| exact.j(y, t)[1], x)[1];
            assert!((dj - exact.div_j(x, t)).abs() < 1e-8);
        }
    }

    #[test]
    fn encoded_derivatives_match_differences() {
        fd_check(&TemporalExact);
        fd_check(&SpatialExact);
    }

    #[test]
    fn forcing_passes_for_both_cases() {
        for c in [temporal_case(), spatial_case(0)] {
            let r = require_verified_forcing(&c, 11).unwrap();
            assert!(r.passed());
            assert_eq!(r.samples, 4000);
        }
    }

    #[test]
    fn corrupted_forcing_is_named() {
        for eq in [Equation::Momentum, Equation::Ohm, Equation::Phase, Equation::ChemicalPotential, Equation::PhaseFlux]
        {
            let mut c = temporal_case();
            c.corrupt = Some(eq);
            let err = require_verified_forcing(&c, 3).unwrap_err();
            assert_eq!(err.equation, eq);
            assert!(err.to_string().contains(eq.name()));
        }
    }

    #[test]
    fn cases_are_pure() {
        for name in CASE_NAMES {
            let a = case_by_name(name).unwrap();
            let b = case_by_name(name).unwrap();
            assert_eq!(a.subdivisions, b.subdivisions);
            assert_eq!(a.params.steps, b.params.steps);
            for x in [[0.1, 0.2], [0.45, 0.5], [0.3, 0.77]] {
                assert_eq!((a.initial_phase)(x), (b.initial_phase)(x));
                assert_eq!((a.initial_velocity)(x), (b.initial_velocity)(x));
            }
        }
        assert!(matches!(case_by_name("nope"), Err(CaseError::UnknownCase(_))));
    }

    #[test]
    fn sweep_grids() {
        let t = sweep_cases(SweepMode::Time);
        assert_eq!(t.len(), 6);
        assert_eq!(t[5].params.steps, 160);
        assert!(t.iter().all(|c| c.subdivisions == (10, 10)));
        let s = sweep_cases(SweepMode::Space);
        assert_eq!(s.iter().map(|c| c.subdivisions.0).collect::<Vec<_>>(), vec![2, 4, 8, 16, 32, 64]);
        assert_eq!(s[0].params.tau, 0.25);
        assert_eq!(s[5].params.steps, 128);
        assert_eq!(s[0].h(), 0.5);
    }

    #[test]
    fn physical_initial_data() {
        let sq = square_bubble_case();
        assert!((sq.initial_phase)([0.5, 0.5]) < -0.99);
        assert!((sq.initial_phase)([0.05, 0.05]) > 0.99);
        let kb = kissing_bubbles_case();
        assert!((kb.initial_phase)([0.3, 0.5]) > 0.99);
        assert!((kb.initial_phase)([0.5, 0.9]) < -0.99);
        assert_eq!(kb.params.steps, 1500);
        let g = gravity_case(0.01);
        assert!((g.initial_phase)([0.5, 0.8]) > 0.99);
        assert!((g.initial_phase)([0.5, 0.2]) < -0.99);
        let kh = kelvin_helmholtz_case();
        let bv = kh.boundary_velocity.as_ref().unwrap();
        assert_eq!(bv([0.2, 1.0], 0.0), [1.0, 0.0]);
        assert_eq!(bv([0.2, 0.0], 0.0), [-1.0, 0.0]);
        assert!(bv([0.0, 0.9], 0.0)[0] > 0.99);
        assert_eq!(kh.subdivisions, (64, 128));
    }
}
