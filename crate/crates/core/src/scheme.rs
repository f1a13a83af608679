//! Decoupled linear time stepping: phase field, then current density, then
//! velocity and pressure.
//!
//! Unknown layouts of the three block systems:
//! - Cahn-Hilliard: `[phi (V) | mu (V)]`
//! - current: `[J (facets) | potential (cells) | multiplier]`
//! - Navier-Stokes: `[u (Mini) | p (V) | multiplier]`

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::diagnostics::{dissipation, div_j_norm, mass, total_energy};
use crate::fespace::{rt0_facet_dof, Constraint, FeSpace, FieldCoefficients, SpaceKind};
use crate::forms::{
    self, boundary_load_scalar, convection_matrix, div_coupling_rt0, div_coupling_velocity, jb_stabilization,
    load_cross_b, load_gradient, load_scalar, load_vector, mass_matrix, phase_grad_stabilization, stiffness_matrix,
    sym_grad_matrix, Coefficient, FormError,
};
use crate::linalg::{
    append_mean_constraint, apply_essential, condense, DirectSolver, EssentialConstraint, LinalgError, LinearSystem,
    SolveStage, SparseMatrix, TripletBuilder,
};
use crate::mesh::{BoundaryFilter, Mesh, Point};

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("non-finite {quantity} at step {step}")]
    NonFinite { quantity: &'static str, step: usize },
}

/// Which phase level multiplies `grad mu` in the current and momentum
/// couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingIndex {
    /// `phi^n`: the level for which the discrete energy law is proven.
    #[default]
    Current,
    /// `phi^{n+1}`.
    Next,
}

impl std::str::FromStr for CouplingIndex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" => Ok(Self::Current),
            "n+1" => Ok(Self::Next),
            _ => Err(format!("coupling index must be `n` or `n+1`, got `{s}`")),
        }
    }
}

impl fmt::Display for CouplingIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Current => "n",
            Self::Next => "n+1",
        })
    }
}

/// Out-of-plane magnetic field component `b` of `B = (0, 0, b)`.
#[derive(Clone)]
pub enum MagneticField {
    Constant(f64),
    Function(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for MagneticField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(b) => write!(f, "Constant({b})"),
            Self::Function(_) => f.write_str("Function"),
        }
    }
}

impl MagneticField {
    pub fn at(&self, x: Point) -> f64 {
        match self {
            Self::Constant(b) => *b,
            Self::Function(f) => f(x),
        }
    }

    pub fn coefficient(&self) -> Coefficient<'_> {
        match self {
            Self::Constant(b) => Coefficient::Constant(*b),
            Self::Function(f) => Coefficient::Function(f.as_ref()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchemeParams {
    pub tau: f64,
    pub t_final: f64,
    pub steps: usize,
    pub lambda: f64,
    pub eps: f64,
    pub mobility: f64,
    pub eta: (f64, f64),
    pub sigma: (f64, f64),
    pub b: MagneticField,
    pub gravity: Option<[f64; 2]>,
    pub coupling: CouplingIndex,
}

impl SchemeParams {
    /// Unit physical parameters, `b = 1`, no gravity.
    pub fn unit(tau: f64, t_final: f64) -> Result<Self, SchemeError> {
        Self {
            tau,
            t_final,
            steps: 0,
            lambda: 1.0,
            eps: 1.0,
            mobility: 1.0,
            eta: (1.0, 1.0),
            sigma: (1.0, 1.0),
            b: MagneticField::Constant(1.0),
            gravity: None,
            coupling: CouplingIndex::Current,
        }
        .with_time(tau, t_final)
    }

    /// Sets `tau`, `T` and the step count, which must be an integer.
    pub fn with_time(mut self, tau: f64, t_final: f64) -> Result<Self, SchemeError> {
        if !(tau > 0.0) || !(t_final >= 0.0) {
            return Err(SchemeError::InvalidParams(format!("tau = {tau}, T = {t_final}")));
        }
        let steps = (t_final / tau).round();
        if (steps * tau - t_final).abs() > 1e-12 * t_final.max(1.0) {
            return Err(SchemeError::InvalidParams(format!("T = {t_final} is not a multiple of tau = {tau}")));
        }
        self.tau = tau;
        self.t_final = t_final;
        self.steps = steps as usize;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        let positive = [
            ("lambda", self.lambda),
            ("eps", self.eps),
            ("mobility", self.mobility),
            ("eta1", self.eta.0),
            ("eta2", self.eta.1),
            ("sigma1", self.sigma.0),
            ("sigma2", self.sigma.1),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SchemeError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if (self.steps as f64 * self.tau - self.t_final).abs() > 1e-12 * self.t_final.max(1.0) {
            return Err(SchemeError::InvalidParams(format!(
                "{} steps of {} do not reach T = {}",
                self.steps, self.tau, self.t_final
            )));
        }
        if let MagneticField::Constant(b) = self.b {
            if !b.is_finite() {
                return Err(SchemeError::InvalidParams("b must be finite".into()));
            }
        }
        Ok(())
    }

    /// Time of level `n`, computed without accumulation drift.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t_final
        } else {
            n as f64 * self.tau
        }
    }

    pub fn eta_coefficient<'a>(&self, phi: &'a FieldCoefficients) -> Coefficient<'a> {
        Coefficient::Blend { phase: phi, v1: self.eta.0, v2: self.eta.1 }
    }

    pub fn sigma_inv_coefficient<'a>(&self, phi: &'a FieldCoefficients) -> Coefficient<'a> {
        Coefficient::InverseBlend { phase: phi, v1: self.sigma.0, v2: self.sigma.1 }
    }
}

/// Manufactured right-hand sides; all evaluated at the new time level.
pub trait Forcing: Sync {
    fn f_u(&self, x: Point, t: f64) -> [f64; 2];
    fn f_j(&self, x: Point, t: f64) -> [f64; 2];
    fn f_phi(&self, x: Point, t: f64) -> f64;
    fn f_mu(&self, x: Point, t: f64) -> f64;
    /// Natural boundary flux entering the phase equation.
    fn g_phi(&self, x: Point, n: Point, t: f64) -> f64;
    /// Natural boundary flux entering the chemical-potential equation.
    fn g_mu(&self, x: Point, n: Point, t: f64) -> f64;
}

/// Boundary data and optional forcing of a run.
pub trait ProblemData: Sync {
    /// Dirichlet velocity on the whole boundary.
    fn boundary_velocity(&self, _x: Point, _t: f64) -> [f64; 2] {
        [0.0, 0.0]
    }

    /// Current density whose normal flux is imposed on boundary facets.
    fn boundary_current(&self, _x: Point, _t: f64) -> [f64; 2] {
        [0.0, 0.0]
    }

    fn forcing(&self) -> Option<&dyn Forcing> {
        None
    }
}

/// Homogeneous boundary data without forcing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Homogeneous;

impl ProblemData for Homogeneous {}

/// The five discrete spaces on one mesh.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Arc<Mesh>,
    pub velocity: Arc<FeSpace>,
    pub pressure: Arc<FeSpace>,
    pub current: Arc<FeSpace>,
    pub potential: Arc<FeSpace>,
    pub phase: Arc<FeSpace>,
}

impl Discretization {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let mk = |k, c| Arc::new(FeSpace::new(Arc::clone(&mesh), k, c));
        Self {
            velocity: mk(SpaceKind::MiniVector, Constraint::None),
            pressure: mk(SpaceKind::P1, Constraint::ZeroMean),
            current: mk(SpaceKind::Rt0, Constraint::None),
            potential: mk(SpaceKind::P0, Constraint::ZeroMean),
            phase: mk(SpaceKind::P1, Constraint::None),
            mesh,
        }
    }
}

#[derive(Debug, Clone)]
pub struct State {
    pub n: usize,
    pub time: f64,
    pub u: FieldCoefficients,
    pub p: FieldCoefficients,
    pub j: FieldCoefficients,
    pub phi_pot: FieldCoefficients,
    pub phi: FieldCoefficients,
    pub mu: FieldCoefficients,
}

impl State {
    /// Interpolated initial velocity and phase; every other field zero.
    pub fn initial(disc: &Discretization, u0: impl Fn(Point) -> [f64; 2], phi0: impl Fn(Point) -> f64) -> Self {
        Self {
            n: 0,
            time: 0.0,
            u: disc.velocity.interpolate_vector(u0),
            p: disc.pressure.zeros(),
            j: disc.current.zeros(),
            phi_pot: disc.potential.zeros(),
            phi: disc.phase.interpolate_scalar(phi0),
            mu: disc.phase.zeros(),
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub n: usize,
    pub t: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub mass: f64,
    pub div_j: f64,
    /// Relative residuals of the CH, current and NS solves.
    pub residuals: [f64; 3],
    /// `(E^{n+1} - E^n) / tau + P^n`.
    pub energy_law: f64,
}

#[derive(Debug, Clone)]
struct CachedMatrix {
    key: Vec<f64>,
    system: LinearSystem,
}

/// Time integrator owning one cached direct solver per step.
pub struct Scheme {
    disc: Discretization,
    params: SchemeParams,
    ch: DirectSolver,
    current: DirectSolver,
    ns: DirectSolver,
    // Step-independent blocks.
    mass_p1: SparseMatrix,
    stiff_p1: SparseMatrix,
    mass_u: SparseMatrix,
    div_u: SparseMatrix,
    div_j: SparseMatrix,
    velocity_boundary: Vec<usize>,
    current_boundary: Vec<usize>,
    // Per-cell bubble DOFs, condensed out of the NS system.
    bubbles: Vec<Vec<usize>>,
    current_cache: Option<CachedMatrix>,
}

impl fmt::Debug for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scheme").field("params", &self.params).finish_non_exhaustive()
    }
}

impl Scheme {
    pub fn new(disc: Discretization, params: SchemeParams) -> Result<Self, SchemeError> {
        params.validate()?;
        let one = Coefficient::Constant(1.0);
        let mass_p1 = mass_matrix(&disc.phase, one)?;
        let stiff_p1 = stiffness_matrix(&disc.phase, one)?;
        let mass_u = mass_matrix(&disc.velocity, one)?;
        let div_u = div_coupling_velocity(&disc.velocity, &disc.pressure)?;
        let div_j = div_coupling_rt0(&disc.current, &disc.potential)?;
        let velocity_boundary = disc.mesh.boundary_vertices();
        let current_boundary = disc.mesh.boundary_facets(BoundaryFilter::All);
        let bubbles = (0..disc.mesh.num_cells())
            .map(|t| vec![disc.velocity.mini_bubble_dof(0, t), disc.velocity.mini_bubble_dof(1, t)])
            .collect();
        Ok(Self {
            ch: DirectSolver::new(SolveStage::CahnHilliard),
            current: DirectSolver::new(SolveStage::Current),
            ns: DirectSolver::new(SolveStage::NavierStokes),
            disc,
            params,
            mass_p1,
            stiff_p1,
            mass_u,
            div_u,
            div_j,
            velocity_boundary,
            current_boundary,
            bubbles,
            current_cache: None,
        })
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    /// Numeric factorizations performed by the (CH, current, NS) solvers.
    pub fn factorizations(&self) -> [usize; 3] {
        [self.ch.factorizations(), self.current.factorizations(), self.ns.factorizations()]
    }

    /// Step 1: phase field and chemical potential at level `n + 1`.
    pub fn step_cahn_hilliard(
        &mut self,
        state: &State,
        problem: &dyn ProblemData,
    ) -> Result<(FieldCoefficients, FieldCoefficients, f64), SchemeError> {
        let p = &self.params;
        let (tau, lambda, eps) = (p.tau, p.lambda, p.eps);
        let t_new = p.time(state.n + 1);
        let space = &self.disc.phase;
        let nv = space.ndofs();
        let phi_n = &state.phi;
        let u_n = &state.u;
        forms::check_fields(space, &[phi_n, u_n])?;

        let stab = phase_grad_stabilization(space, phi_n, tau)?;
        let mut t = TripletBuilder::with_capacity(2 * nv, 2 * nv, 4 * self.mass_p1.nnz() + stab.nnz());
        t.add_matrix(&self.mass_p1, 0, 0, 1.0 / tau);
        t.add_matrix(&self.stiff_p1, 0, nv, p.mobility);
        t.add_matrix(&stab, 0, nv, 1.0);
        t.add_matrix(&self.stiff_p1, nv, 0, lambda * eps);
        t.add_matrix(&self.mass_p1, nv, 0, lambda / eps);
        t.add_matrix(&self.mass_p1, nv, nv, -1.0);
        let matrix = t.finalize()?;

        let mphi = self.mass_p1.mul_vec(&phi_n.values);
        let advect = load_gradient(space, &|c, b, _| {
            let ph = phi_n.eval_scalar(c, b);
            let u = u_n.eval_vector(c, b);
            [ph * u[0], ph * u[1]]
        })?;
        let fphi = load_scalar(space, &|c, b, _| double_well_rhs(phi_n.eval_scalar(c, b)))?;
        let mut rhs = vec![0.0; 2 * nv];
        for i in 0..nv {
            rhs[i] = mphi[i] / tau + advect[i];
            rhs[nv + i] = lambda / eps * (mphi[i] - fphi[i]);
        }
        if let Some(f) = problem.forcing() {
            let lp = load_scalar(space, &|_, _, x| f.f_phi(x, t_new))?;
            let lm = load_scalar(space, &|_, _, x| f.f_mu(x, t_new))?;
            let bp = boundary_load_scalar(space, &|x, n, _| f.g_phi(x, n, t_new))?;
            let bm = boundary_load_scalar(space, &|x, n, _| f.g_mu(x, n, t_new))?;
            for i in 0..nv {
                rhs[i] += lp[i] + bp[i];
                rhs[nv + i] += lm[i] + bm[i];
            }
        }
        let system = LinearSystem::new(matrix, rhs)?;
        let x = self.ch.solve_system(&system)?;
        let phi = FieldCoefficients::new(Arc::clone(space), x[..nv].to_vec()).expect("sized");
        let mu = FieldCoefficients::new(Arc::clone(space), x[nv..].to_vec()).expect("sized");
        Ok((phi, mu, self.ch.last_residual()))
    }

    fn coupling_phase<'a>(&self, state: &'a State, phi_new: &'a FieldCoefficients) -> &'a FieldCoefficients {
        match self.params.coupling {
            CouplingIndex::Current => &state.phi,
            CouplingIndex::Next => phi_new,
        }
    }

    /// Step 2: current density and electric potential.
    pub fn step_current(
        &mut self,
        state: &State,
        phi_new: &FieldCoefficients,
        mu_new: &FieldCoefficients,
        problem: &dyn ProblemData,
    ) -> Result<(FieldCoefficients, FieldCoefficients, f64), SchemeError> {
        let tau = self.params.tau;
        let t_new = self.params.time(state.n + 1);
        let rt = Arc::clone(&self.disc.current);
        let p0 = Arc::clone(&self.disc.potential);
        let (nf, nt) = (rt.ndofs(), p0.ndofs());
        let phi_star = self.coupling_phase(state, phi_new);
        forms::check_fields(&rt, &[phi_new, mu_new, &state.u])?;

        // the matrix depends on the new phase only through sigma
        let key = if self.params.sigma.0 == self.params.sigma.1 { Vec::new() } else { phi_new.values.clone() };
        let cached = matches!(&self.current_cache, Some(c) if c.key == key);
        if !cached {
            let sinv = mass_matrix(&rt, self.params.sigma_inv_coefficient(phi_new))?;
            let stab = jb_stabilization(&rt, self.params.b.coefficient(), tau)?;
            let mut t = TripletBuilder::with_capacity(nf + nt, nf + nt, 2 * sinv.nnz() + 2 * self.div_j.nnz());
            t.add_matrix(&sinv, 0, 0, 1.0);
            t.add_matrix(&stab, 0, 0, 1.0);
            t.add_transpose(&self.div_j, 0, nf, -1.0);
            t.add_matrix(&self.div_j, nf, 0, -1.0);
            let matrix = t.finalize()?;
            let system = LinearSystem::new(matrix, vec![0.0; nf + nt])?;
            let zeros: Vec<_> =
                self.current_boundary.iter().map(|&dof| EssentialConstraint { dof, value: 0.0 }).collect();
            let system = apply_essential(system, &zeros)?;
            let weights = p0.mean_weights().expect("zero-mean potential").to_vec();
            let system = append_mean_constraint(system, nf, &weights)?;
            self.current_cache = Some(CachedMatrix { key, system });
        }
        let base = &self.current_cache.as_ref().unwrap().system;

        let u_n = &state.u;
        let mut rhs = load_cross_b(&rt, self.params.b.coefficient(), &|c, b, _| {
            let u = u_n.eval_vector(c, b);
            let g = mu_new.grad_scalar(c);
            let ph = phi_star.eval_scalar(c, b);
            [u[0] - tau * ph * g[0], u[1] - tau * ph * g[1]]
        })?;
        if let Some(f) = problem.forcing() {
            let lf = load_vector(&rt, &|_, _, x| f.f_j(x, t_new))?;
            rhs.iter_mut().zip(lf).for_each(|(r, l)| *r += l);
        }
        rhs.resize(nf + nt + 1, 0.0);

        // essential fluxes; the cached system eliminated the columns for zero data
        let mesh = &self.disc.mesh;
        let mut data = vec![0.0; nf];
        for &f in &self.current_boundary {
            data[f] = rt0_facet_dof(mesh, f, &|x| problem.boundary_current(x, t_new));
        }
        if data.iter().any(|&v| v != 0.0) {
            let lifted = self.raw_current_coupling(phi_new)?.mul_vec(&data);
            for (r, l) in lifted.iter().enumerate() {
                rhs[r] -= l;
            }
        }
        for &f in &self.current_boundary {
            rhs[f] = data[f];
        }
        let x = self.current.solve_rhs(base, &rhs)?;
        let j = FieldCoefficients::new(rt, x[..nf].to_vec()).expect("sized");
        let pot = FieldCoefficients::new(p0, x[nf..nf + nt].to_vec()).expect("sized");
        Ok((j, pot, self.current.last_residual()))
    }

    /// Unconstrained current operator, for moving nonzero essential data.
    fn raw_current_coupling(&self, phi_new: &FieldCoefficients) -> Result<SparseMatrix, SchemeError> {
        let rt = &self.disc.current;
        let (nf, nt) = (rt.ndofs(), self.disc.potential.ndofs());
        let sinv = mass_matrix(rt, self.params.sigma_inv_coefficient(phi_new))?;
        let stab = jb_stabilization(rt, self.params.b.coefficient(), self.params.tau)?;
        let mut t = TripletBuilder::new(nf + nt, nf);
        t.add_matrix(&sinv, 0, 0, 1.0);
        t.add_matrix(&stab, 0, 0, 1.0);
        t.add_matrix(&self.div_j, nf, 0, -1.0);
        Ok(t.finalize()?)
    }

    /// Step 3: velocity and pressure.
    pub fn step_navier_stokes(
        &mut self,
        state: &State,
        phi_new: &FieldCoefficients,
        mu_new: &FieldCoefficients,
        j_new: &FieldCoefficients,
        problem: &dyn ProblemData,
    ) -> Result<(FieldCoefficients, FieldCoefficients, f64), SchemeError> {
        let params = &self.params;
        let tau = params.tau;
        let t_new = params.time(state.n + 1);
        let vel = Arc::clone(&self.disc.velocity);
        let pre = Arc::clone(&self.disc.pressure);
        let (nu, np) = (vel.ndofs(), pre.ndofs());
        let u_n = &state.u;
        forms::check_fields(&vel, &[phi_new, mu_new, j_new, u_n])?;

        let conv = convection_matrix(&vel, u_n)?;
        let visc = sym_grad_matrix(&vel, params.eta_coefficient(phi_new))?;
        let mut t = TripletBuilder::with_capacity(
            nu + np,
            nu + np,
            self.mass_u.nnz() + conv.nnz() + visc.nnz() + 2 * self.div_u.nnz(),
        );
        t.add_matrix(&self.mass_u, 0, 0, 1.0 / tau);
        t.add_matrix(&conv, 0, 0, 1.0);
        t.add_matrix(&visc, 0, 0, 1.0);
        t.add_transpose(&self.div_u, 0, nu, -1.0);
        t.add_matrix(&self.div_u, nu, 0, -1.0);
        let matrix = t.finalize()?;

        let phi_star = self.coupling_phase(state, phi_new);
        let b = &params.b;
        let gravity = params.gravity;
        let eps = params.eps;
        let forcing = problem.forcing();
        let load = load_vector(&vel, &|c, bary, x| {
            let jv = j_new.eval_vector(c, bary);
            let bv = b.at(x);
            let g = mu_new.grad_scalar(c);
            let ph = phi_star.eval_scalar(c, bary);
            let mut out = [bv * jv[1] - ph * g[0], -bv * jv[0] - ph * g[1]];
            if let Some(gr) = gravity {
                let s = 0.5 * (heaviside(phi_new.eval_scalar(c, bary), eps) + 1.0);
                out[0] += gr[0] * s;
                out[1] += gr[1] * s;
            }
            if let Some(f) = forcing {
                let fu = f.f_u(x, t_new);
                out[0] += fu[0];
                out[1] += fu[1];
            }
            out
        })?;
        let mu_old = self.mass_u.mul_vec(&u_n.values);
        let mut rhs: Vec<f64> = mu_old.iter().zip(&load).map(|(m, l)| m / tau + l).collect();
        rhs.resize(nu + np, 0.0);

        let mesh = &self.disc.mesh;
        let mut constraints = Vec::with_capacity(2 * self.velocity_boundary.len());
        for &v in &self.velocity_boundary {
            let val = problem.boundary_velocity(mesh.vertex(v), t_new);
            constraints.push(EssentialConstraint { dof: vel.mini_vertex_dof(0, v), value: val[0] });
            constraints.push(EssentialConstraint { dof: vel.mini_vertex_dof(1, v), value: val[1] });
        }
        let system = LinearSystem::new(matrix, rhs)?;
        let system = apply_essential(system, &constraints)?;
        let (system, cond) = condense(&system, &self.bubbles)?;
        let weights = pre.mean_weights().expect("zero-mean pressure").to_vec();
        let offset = cond.reduced(nu).expect("pressure is kept");
        let system = append_mean_constraint(system, offset, &weights)?;
        let x = self.ns.solve_system(&system)?;
        let x = cond.expand(&x[..cond.reduced_size()]);
        let u = FieldCoefficients::new(vel, x[..nu].to_vec()).expect("sized");
        let p = FieldCoefficients::new(pre, x[nu..nu + np].to_vec()).expect("sized");
        Ok((u, p, self.ns.last_residual()))
    }

    /// Runs the three steps and returns the new state and its diagnostics.
    pub fn advance(&mut self, state: &State, problem: &dyn ProblemData) -> Result<(State, StepLog), SchemeError> {
        let energy_old = total_energy(state, &self.params);
        let (phi, mu, r1) = self.step_cahn_hilliard(state, problem)?;
        let (j, phi_pot, r2) = self.step_current(state, &phi, &mu, problem)?;
        let (u, p, r3) = self.step_navier_stokes(state, &phi, &mu, &j, problem)?;
        let n = state.n + 1;
        let next = State { n, time: self.params.time(n), u, p, j, phi_pot, phi, mu };
        let energy = total_energy(&next, &self.params);
        let diss = dissipation(&next, &self.params);
        let log = StepLog {
            n,
            t: next.time,
            energy,
            dissipation: diss,
            mass: mass(&next.phi),
            div_j: div_j_norm(&next.j),
            residuals: [r1, r2, r3],
            energy_law: (energy - energy_old) / self.params.tau + diss,
        };
        for (name, v) in [("energy", log.energy), ("dissipation", log.dissipation), ("mass", log.mass)] {
            if !v.is_finite() {
                return Err(SchemeError::NonFinite { quantity: name, step: n });
            }
        }
        Ok((next, log))
    }

    /// Advances `state` to the final time, reporting every step to `observer`.
    pub fn run(
        &mut self,
        mut state: State,
        problem: &dyn ProblemData,
        mut observer: impl FnMut(&State, &StepLog),
    ) -> Result<Trajectory, RunFailure> {
        let mut logs = Vec::with_capacity(self.params.steps);
        let initial_energy = total_energy(&state, &self.params);
        while state.n < self.params.steps {
            match self.advance(&state, problem) {
                Ok((next, log)) => {
                    observer(&next, &log);
                    logs.push(log);
                    state = next;
                }
                Err(error) => return Err(RunFailure { error, logs, state: Box::new(state) }),
            }
        }
        Ok(Trajectory { initial_energy, logs, state })
    }
}

/// Regularized Heaviside `1 / (1 + exp(-phi / eps))`.
pub fn heaviside(phi: f64, eps: f64) -> f64 {
    1.0 / (1.0 + (-phi / eps).exp())
}

fn double_well_rhs(s: f64) -> f64 {
    forms::double_well_derivative(s)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial_energy: f64,
    pub logs: Vec<StepLog>,
    pub state: State,
}

/// A failed run with the logs of all completed steps.
#[derive(Debug, Error)]
#[error("run failed after {} steps: {error}", logs.len())]
pub struct RunFailure {
    #[source]
    pub error: SchemeError,
    pub logs: Vec<StepLog>,
    pub state: Box<State>,
}
