//! Energy, dissipation, conservation checks, error norms and inf-sup estimates.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::experiments::ExactSolution;
use crate::fespace::{FeSpace, FieldCoefficients, SpaceKind};
use crate::forms::{
    blend, div_coupling, double_well, integrate, mass_matrix, stiffness_matrix, Coefficient, FormError, QuadPoint,
};
use crate::linalg::SparseMatrix;
use crate::mesh::{BoundaryFilter, Mesh, Point};
use crate::scheme::{SchemeParams, State};

/// `1/2 |u|^2 + (lambda eps / 2) |grad phi|^2 + (lambda / eps) int F(phi)`.
pub fn total_energy(state: &State, params: &SchemeParams) -> f64 {
    let mesh = state.phi.space.mesh();
    let (l, e) = (params.lambda, params.eps);
    integrate(mesh, |qp| {
        let u = state.u.eval_vector(qp.cell, &qp.bary);
        let g = state.phi.grad_scalar(qp.cell);
        let phi = state.phi.eval_scalar(qp.cell, &qp.bary);
        0.5 * (u[0] * u[0] + u[1] * u[1]) + 0.5 * l * e * (g[0] * g[0] + g[1] * g[1]) + l / e * double_well(phi)
    })
}

/// `M |grad mu|^2 + 2 |sqrt(eta) D(u)|^2 + |sqrt(1/sigma) J|^2` with the
/// materials evaluated at the state's phase.
pub fn dissipation(state: &State, params: &SchemeParams) -> f64 {
    let mesh = state.phi.space.mesh();
    integrate(mesh, |qp| {
        let (c, b) = (qp.cell, &qp.bary);
        let gm = state.mu.grad_scalar(c);
        let du = state.u.grad_vector(c, b);
        let off = 0.5 * (du[0][1] + du[1][0]);
        let dd = du[0][0] * du[0][0] + du[1][1] * du[1][1] + 2.0 * off * off;
        let j = state.j.eval_vector(c, b);
        let phi = state.phi.eval_scalar(c, b);
        params.mobility * (gm[0] * gm[0] + gm[1] * gm[1])
            + 2.0 * blend(phi, params.eta.0, params.eta.1) * dd
            + (j[0] * j[0] + j[1] * j[1]) / blend(phi, params.sigma.0, params.sigma.1)
    })
}

/// Exact integral of a P1 (or P0) field.
pub fn mass(phi: &FieldCoefficients) -> f64 {
    phi.integral()
}

/// `sqrt(sum |K| (div J|_K)^2)`.
pub fn div_j_norm(j: &FieldCoefficients) -> f64 {
    let mesh = j.space.mesh();
    (0..mesh.num_cells()).map(|t| mesh.geometry(t).area * j.div_rt0(t).powi(2)).sum::<f64>().sqrt()
}

/// Modica-Mortola interface length proxy
/// `3 / (2 sqrt 2) [(eps / 2) |grad phi|^2 + (1 / eps) int F(phi)]`.
pub fn interface_proxy(phi: &FieldCoefficients, eps: f64) -> f64 {
    let mesh = phi.space.mesh();
    let raw = integrate(mesh, |qp| {
        let g = phi.grad_scalar(qp.cell);
        0.5 * eps * (g[0] * g[0] + g[1] * g[1]) + double_well(phi.eval_scalar(qp.cell, &qp.bary)) / eps
    });
    3.0 / (2.0 * 2f64.sqrt()) * raw
}

/// `int |grad phi|^2`.
pub fn gradient_energy(phi: &FieldCoefficients) -> f64 {
    integrate(phi.space.mesh(), |qp| {
        let g = phi.grad_scalar(qp.cell);
        g[0] * g[0] + g[1] * g[1]
    })
}

/// Centroid height of the region `phi > 0`, weighted by `(1 + phi) / 2`.
pub fn bubble_centroid_y(phi: &FieldCoefficients) -> f64 {
    let mesh = phi.space.mesh();
    let w = |qp: &QuadPoint| 0.5 * (1.0 + phi.eval_scalar(qp.cell, &qp.bary));
    integrate(mesh, |qp| qp.x[1] * w(qp)) / integrate(mesh, w)
}

/// All variables of the model at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointValues {
    pub u: [f64; 2],
    pub grad_u: [[f64; 2]; 2],
    pub p: f64,
    pub j: [f64; 2],
    pub div_j: f64,
    pub phi_pot: f64,
    pub phi: f64,
    pub grad_phi: [f64; 2],
    pub mu: f64,
    pub grad_mu: [f64; 2],
}

/// Anything that can be evaluated at quadrature points: a discrete state or
/// an exact solution at a fixed time.
pub trait FieldSampler {
    fn sample(&self, qp: &QuadPoint) -> PointValues;
}

impl FieldSampler for State {
    fn sample(&self, qp: &QuadPoint) -> PointValues {
        let (c, b) = (qp.cell, &qp.bary);
        PointValues {
            u: self.u.eval_vector(c, b),
            grad_u: self.u.grad_vector(c, b),
            p: self.p.eval_scalar(c, b),
            j: self.j.eval_vector(c, b),
            div_j: self.j.div_rt0(c),
            phi_pot: self.phi_pot.eval_scalar(c, b),
            phi: self.phi.eval_scalar(c, b),
            grad_phi: self.phi.grad_scalar(c),
            mu: self.mu.eval_scalar(c, b),
            grad_mu: self.mu.grad_scalar(c),
        }
    }
}

/// Exact solution frozen at time `t`.
pub struct ExactAt<'a> {
    pub exact: &'a dyn ExactSolution,
    pub t: f64,
}

impl FieldSampler for ExactAt<'_> {
    fn sample(&self, qp: &QuadPoint) -> PointValues {
        let (e, x, t) = (self.exact, qp.x, self.t);
        PointValues {
            u: e.u(x, t),
            grad_u: e.grad_u(x, t),
            p: e.p(x, t),
            j: e.j(x, t),
            div_j: e.div_j(x, t),
            phi_pot: e.phi_pot(x, t),
            phi: e.phi(x, t),
            grad_phi: e.grad_phi(x, t),
            mu: e.mu(x, t),
            grad_mu: e.grad_mu(x, t),
        }
    }
}

/// Error norms reported per run, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    U,
    GradU,
    P,
    JDiv,
    PhiPot,
    Phi,
    GradPhi,
    Mu,
    GradMu,
}

impl Norm {
    pub const ALL: [Norm; 9] =
        [Norm::U, Norm::GradU, Norm::P, Norm::JDiv, Norm::PhiPot, Norm::Phi, Norm::GradPhi, Norm::Mu, Norm::GradMu];

    pub fn name(self) -> &'static str {
        match self {
            Norm::U => "u_l2",
            Norm::GradU => "u_h1",
            Norm::P => "p_l2",
            Norm::JDiv => "j_hdiv",
            Norm::PhiPot => "phipot_l2",
            Norm::Phi => "phi_l2",
            Norm::GradPhi => "phi_h1",
            Norm::Mu => "mu_l2",
            Norm::GradMu => "mu_h1",
        }
    }

    pub fn index(self) -> usize {
        Norm::ALL.iter().position(|&n| n == self).unwrap()
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Errors of one run plus the discrete divergence of its current.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub tau: f64,
    pub h: f64,
    pub errors: [f64; 9],
    pub div_j: f64,
}

impl ErrorReport {
    pub fn get(&self, n: Norm) -> f64 {
        self.errors[n.index()]
    }
}

/// Squared-difference integrals between two samplers. Pressure and
/// potential are both shifted to zero mean first.
pub fn error_norms_between(mesh: &Mesh, a: &dyn FieldSampler, b: &dyn FieldSampler) -> [f64; 9] {
    let area = mesh.total_area();
    let means = |s: &dyn FieldSampler| {
        let p = integrate(mesh, |qp| s.sample(qp).p) / area;
        let q = integrate(mesh, |qp| s.sample(qp).phi_pot) / area;
        (p, q)
    };
    let (pa, qa) = means(a);
    let (pb, qb) = means(b);
    let mut acc = [0.0; 9];
    let rule = crate::quadrature::default_quadrature();
    for cell in 0..mesh.num_cells() {
        let geom = mesh.geometry(cell);
        for (bary, w) in rule.iter() {
            let qp = QuadPoint { cell, bary: *bary, x: geom.map(bary), weight: 2.0 * geom.area * w };
            let (va, vb) = (a.sample(&qp), b.sample(&qp));
            let sq2 = |x: [f64; 2], y: [f64; 2]| (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            let terms = [
                sq2(va.u, vb.u),
                sq2(va.grad_u[0], vb.grad_u[0]) + sq2(va.grad_u[1], vb.grad_u[1]),
                ((va.p - pa) - (vb.p - pb)).powi(2),
                sq2(va.j, vb.j) + (va.div_j - vb.div_j).powi(2),
                ((va.phi_pot - qa) - (vb.phi_pot - qb)).powi(2),
                (va.phi - vb.phi).powi(2),
                sq2(va.grad_phi, vb.grad_phi),
                (va.mu - vb.mu).powi(2),
                sq2(va.grad_mu, vb.grad_mu),
            ];
            for (s, t) in acc.iter_mut().zip(terms) {
                *s += qp.weight * t;
            }
        }
    }
    acc.map(f64::sqrt)
}

/// Errors of `state` against `exact` at the state's time.
pub fn error_norms(state: &State, exact: &dyn ExactSolution, tau: f64) -> ErrorReport {
    let mesh = state.phi.space.mesh();
    let ex = ExactAt { exact, t: state.time };
    ErrorReport {
        tau,
        h: mesh.size().h_max,
        errors: error_norms_between(mesh, state, &ex),
        div_j: div_j_norm(&state.j),
    }
}

/// `log2(e_coarse / e_fine)`.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Orders between consecutive reports; the first row has none.
pub fn convergence_orders(reports: &[ErrorReport]) -> Vec<[Option<f64>; 9]> {
    let mut out = vec![[None; 9]];
    for w in reports.windows(2) {
        let mut row = [None; 9];
        for (k, r) in row.iter_mut().enumerate() {
            *r = Some(observed_order(w[0].errors[k], w[1].errors[k]));
        }
        out.push(row);
    }
    out.truncate(reports.len());
    out
}

#[derive(Debug, Error)]
pub enum InfSupError {
    #[error("{0} DOFs exceed the dense eigensolve guard of {INFSUP_MAX_DOFS}")]
    TooLarge(usize),
    #[error("unsupported space pair {0:?}/{1:?}")]
    Unsupported(SpaceKind, SpaceKind),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error("dense factorization failed: {0}")]
    Dense(&'static str),
}

pub const INFSUP_MAX_DOFS: usize = 2000;

fn dense(m: &SparseMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for (c, v) in m.row(r) {
            d[(r, c)] += v;
        }
    }
    d
}

/// Discrete inf-sup constant of a velocity/pressure or current/potential
/// pair with homogeneous essential conditions: the square root of the
/// smallest nonzero eigenvalue of `M^{-1} B A^{-1} B^T`, where `A` is the
/// Gram matrix of the primal norm (H1 seminorm for Mini, H(div) for RT0) and
/// `M` the multiplier mass matrix.
pub fn infsup_estimate(primal: &FeSpace, multiplier: &FeSpace) -> Result<f64, InfSupError> {
    let total = primal.ndofs() + multiplier.ndofs();
    if total > INFSUP_MAX_DOFS {
        return Err(InfSupError::TooLarge(total));
    }
    let mesh = primal.mesh();
    let one = Coefficient::Constant(1.0);
    let (a, fixed): (SparseMatrix, Vec<usize>) = match (primal.kind(), multiplier.kind()) {
        (SpaceKind::MiniVector, SpaceKind::P1) => {
            let bv = mesh.boundary_vertices();
            let fixed = bv.iter().flat_map(|&v| [primal.mini_vertex_dof(0, v), primal.mini_vertex_dof(1, v)]).collect();
            (stiffness_matrix(primal, one)?, fixed)
        }
        (SpaceKind::Rt0, SpaceKind::P0) => {
            let m = mass_matrix(primal, one)?;
            let d = div_coupling(primal, multiplier)?;
            // div-div Gram: D^T diag(1/|K|) D
            let mut dd = dense(&m);
            let dm = dense(&d);
            for t in 0..mesh.num_cells() {
                let inv = 1.0 / mesh.geometry(t).area;
                let row = dm.row(t);
                dd += row.transpose() * row * inv;
            }
            let fixed = mesh.boundary_facets(BoundaryFilter::All);
            let sparse = crate::linalg::SparseMatrix::from_dense(
                &(0..dd.nrows()).map(|r| dd.row(r).iter().copied().collect()).collect::<Vec<_>>(),
            );
            (sparse, fixed)
        }
        (p, q) => return Err(InfSupError::Unsupported(p, q)),
    };
    let b = div_coupling(primal, multiplier)?;
    let m = mass_matrix(multiplier, one)?;
    let free: Vec<usize> = (0..primal.ndofs()).filter(|d| !fixed.contains(d)).collect();
    let (ad, bd, md) = (dense(&a), dense(&b), dense(&m));
    let af = DMatrix::from_fn(free.len(), free.len(), |i, j| ad[(free[i], free[j])]);
    let bf = DMatrix::from_fn(bd.nrows(), free.len(), |i, j| bd[(i, free[j])]);
    let achol = af.cholesky().ok_or(InfSupError::Dense("primal Gram matrix not SPD"))?;
    let s = &bf * achol.solve(&bf.transpose());
    let mchol = md.cholesky().ok_or(InfSupError::Dense("multiplier mass not SPD"))?;
    let l = mchol.l();
    let linv = l.clone().try_inverse().ok_or(InfSupError::Dense("singular mass factor"))?;
    let sym = &linv * s * linv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    // the constant multiplier is annihilated by the homogeneous conditions
    Ok(eig.get(1).copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Quick point evaluation helper for tests and reports.
pub fn sample_point(mesh: &Mesh, x: Point) -> Option<(usize, [f64; 3])> {
    (0..mesh.num_cells()).find_map(|t| {
        let g = mesh.geometry(t);
        let mut b = [0.0; 3];
        for i in 0..3 {
            let p = g.vertices[(i + 1) % 3];
            b[i] = g.grad_bary[i][0] * (x[0] - p[0]) + g.grad_bary[i][1] * (x[1] - p[1]);
        }
        b.iter().all(|&l| l >= -1e-12).then_some((t, b))
    })
}
