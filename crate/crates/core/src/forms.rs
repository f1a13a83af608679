//! Bilinear forms and load vectors. Every volume term uses the same
//! degree-6 rule, so discrete identities between forms hold to roundoff.

use std::sync::Arc;

use thiserror::Error;

use crate::fespace::{eval_basis, BasisValues, FeSpace, FieldCoefficients, SpaceError, SpaceKind};
use crate::linalg::{LinalgError, SparseMatrix, TripletBuilder};
use crate::mesh::{BoundaryMarker, Mesh, Point};
use crate::quadrature::{default_quadrature, gauss_legendre_unit, QuadratureRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormError {
    #[error("operands live on different meshes")]
    MeshMismatch,
    #[error("{form} expects {expected}, got {got:?}")]
    WrongSpace { form: &'static str, expected: &'static str, got: SpaceKind },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Bound of `|F''|` for the truncated potential.
pub const POTENTIAL_LIPSCHITZ: f64 = 2.0;

/// Truncated double-well potential: quartic on `[-1, 1]`, quadratic outside.
pub fn double_well(s: f64) -> f64 {
    if s < -1.0 {
        (s + 1.0).powi(2)
    } else if s > 1.0 {
        (s - 1.0).powi(2)
    } else {
        0.25 * (s * s - 1.0).powi(2)
    }
}

pub fn double_well_derivative(s: f64) -> f64 {
    if s < -1.0 {
        2.0 * (s + 1.0)
    } else if s > 1.0 {
        2.0 * (s - 1.0)
    } else {
        s * s * s - s
    }
}

pub fn double_well_second_derivative(s: f64) -> f64 {
    if s.abs() > 1.0 {
        2.0
    } else {
        3.0 * s * s - 1.0
    }
}

/// Surface tension `lambda` and interface width `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    pub lambda: f64,
    pub eps: f64,
}

impl Potential {
    pub fn new(lambda: f64, eps: f64) -> Self {
        assert!(lambda > 0.0 && eps > 0.0, "potential needs lambda, eps > 0");
        Self { lambda, eps }
    }

    pub fn energy_density(&self, s: f64) -> f64 {
        self.lambda / self.eps * double_well(s)
    }

    pub fn f(&self, s: f64) -> f64 {
        double_well(s)
    }

    pub fn df(&self, s: f64) -> f64 {
        double_well_derivative(s)
    }
}

/// Linear blend of two material values, clamped to the pure phases.
/// `phi = 1` selects `v1`, `phi = -1` selects `v2`.
pub fn blend(phi: f64, v1: f64, v2: f64) -> f64 {
    let p = phi.clamp(-1.0, 1.0);
    0.5 * ((1.0 + p) * v1 + (1.0 - p) * v2)
}

/// Scalar coefficient evaluated at quadrature points.
#[derive(Clone, Copy)]
pub enum Coefficient<'a> {
    Constant(f64),
    Function(&'a (dyn Fn(Point) -> f64 + Sync)),
    Field(&'a FieldCoefficients),
    FieldSquared(&'a FieldCoefficients),
    Blend { phase: &'a FieldCoefficients, v1: f64, v2: f64 },
    InverseBlend { phase: &'a FieldCoefficients, v1: f64, v2: f64 },
    General(&'a (dyn Fn(usize, &[f64; 3], Point) -> f64 + Sync)),
}

impl std::fmt::Debug for Coefficient<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Function(_) => f.write_str("Function"),
            Self::Field(_) => f.write_str("Field"),
            Self::FieldSquared(_) => f.write_str("FieldSquared"),
            Self::Blend { v1, v2, .. } => write!(f, "Blend({v1}, {v2})"),
            Self::InverseBlend { v1, v2, .. } => write!(f, "InverseBlend({v1}, {v2})"),
            Self::General(_) => f.write_str("General"),
        }
    }
}

impl Coefficient<'_> {
    pub fn eval(&self, t: usize, bary: &[f64; 3], x: Point) -> f64 {
        match *self {
            Self::Constant(c) => c,
            Self::Function(f) => f(x),
            Self::Field(u) => u.eval_scalar(t, bary),
            Self::FieldSquared(u) => u.eval_scalar(t, bary).powi(2),
            Self::Blend { phase, v1, v2 } => blend(phase.eval_scalar(t, bary), v1, v2),
            Self::InverseBlend { phase, v1, v2 } => 1.0 / blend(phase.eval_scalar(t, bary), v1, v2),
            Self::General(f) => f(t, bary, x),
        }
    }

    fn mesh(&self) -> Option<&Arc<Mesh>> {
        match self {
            Self::Field(u) | Self::FieldSquared(u) => Some(u.space.mesh()),
            Self::Blend { phase, .. } | Self::InverseBlend { phase, .. } => Some(phase.space.mesh()),
            _ => None,
        }
    }
}

/// One quadrature point of one cell.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub cell: usize,
    pub bary: [f64; 3],
    pub x: Point,
    /// Physical weight: `2|K| w_ref`.
    pub weight: f64,
}

fn check_mesh(a: &Arc<Mesh>, b: &Arc<Mesh>) -> Result<(), FormError> {
    if Arc::ptr_eq(a, b) || (a.vertices() == b.vertices() && a.cells() == b.cells()) {
        Ok(())
    } else {
        Err(FormError::MeshMismatch)
    }
}

pub fn check_fields(space: &FeSpace, fields: &[&FieldCoefficients]) -> Result<(), FormError> {
    for f in fields {
        check_mesh(space.mesh(), f.space.mesh())?;
    }
    Ok(())
}

fn expect(space: &FeSpace, form: &'static str, expected: &'static str, ok: &[SpaceKind]) -> Result<(), FormError> {
    if ok.contains(&space.kind()) {
        Ok(())
    } else {
        Err(FormError::WrongSpace { form, expected, got: space.kind() })
    }
}

/// Value of vector basis function `k` (Mini or RT0).
#[inline]
pub fn vector_value(kind: SpaceKind, b: &BasisValues, k: usize) -> [f64; 2] {
    match kind {
        SpaceKind::MiniVector => {
            let (comp, i) = (k / 4, k % 4);
            let mut v = [0.0; 2];
            v[comp] = b.values[i];
            v
        }
        _ => b.vectors[k],
    }
}

/// Jacobian `[comp][dir]` of Mini basis function `k`.
#[inline]
pub fn vector_grad(b: &BasisValues, k: usize) -> [[f64; 2]; 2] {
    let (comp, i) = (k / 4, k % 4);
    let mut g = [[0.0; 2]; 2];
    g[comp] = b.grads[i];
    g
}

#[inline]
pub fn vector_div(kind: SpaceKind, b: &BasisValues, k: usize) -> f64 {
    match kind {
        SpaceKind::MiniVector => b.grads[k % 4][k / 4],
        _ => b.divs[k],
    }
}

/// Iterates the quadrature points of every cell with basis values of the
/// given spaces, calling `kernel(point, test_basis, trial_basis, local)`.
fn assemble<F>(test: &FeSpace, trial: &FeSpace, rule: &QuadratureRule, mut kernel: F) -> Result<SparseMatrix, FormError>
where
    F: FnMut(&QuadPoint, &BasisValues, &BasisValues, &mut [f64]),
{
    check_mesh(test.mesh(), trial.mesh())?;
    let mesh = test.mesh();
    let (nr, nc) = (test.kind().local_dofs(), trial.kind().local_dofs());
    let mut t = TripletBuilder::with_capacity(test.ndofs(), trial.ndofs(), mesh.num_cells() * nr * nc);
    let mut local = vec![0.0; nr * nc];
    for cell in 0..mesh.num_cells() {
        let geom = mesh.geometry(cell);
        let signs = mesh.cell_facet_signs(cell);
        local.iter_mut().for_each(|v| *v = 0.0);
        for (bary, w) in rule.iter() {
            let qp = QuadPoint { cell, bary: *bary, x: geom.map(bary), weight: 2.0 * geom.area * w };
            let bt = eval_basis(test.kind(), geom, &signs, bary)?;
            let bs = if trial.kind() == test.kind() { bt } else { eval_basis(trial.kind(), geom, &signs, bary)? };
            kernel(&qp, &bt, &bs, &mut local);
        }
        t.add_local(test.cell_dofs(cell), trial.cell_dofs(cell), &local);
    }
    Ok(t.finalize()?)
}

/// `(c w, v)` for any space; vector spaces use the dot product.
pub fn mass_matrix(space: &FeSpace, coeff: Coefficient) -> Result<SparseMatrix, FormError> {
    if let Some(m) = coeff.mesh() {
        check_mesh(space.mesh(), m)?;
    }
    let kind = space.kind();
    let n = kind.local_dofs();
    let rule = default_quadrature();
    assemble(space, space, &rule, |qp, b, _, local| {
        let cw = coeff.eval(qp.cell, &qp.bary, qp.x) * qp.weight;
        if kind.is_vector() {
            for i in 0..n {
                let vi = vector_value(kind, b, i);
                for j in 0..n {
                    let vj = vector_value(kind, b, j);
                    local[i * n + j] += cw * (vi[0] * vj[0] + vi[1] * vj[1]);
                }
            }
        } else {
            for i in 0..n {
                for j in 0..n {
                    local[i * n + j] += cw * b.values[i] * b.values[j];
                }
            }
        }
    })
}

/// `(c grad w, grad v)` for P1, or component-wise for Mini.
pub fn stiffness_matrix(space: &FeSpace, coeff: Coefficient) -> Result<SparseMatrix, FormError> {
    expect(space, "stiffness", "P1 or Mini", &[SpaceKind::P1, SpaceKind::MiniVector])?;
    if let Some(m) = coeff.mesh() {
        check_mesh(space.mesh(), m)?;
    }
    let kind = space.kind();
    let n = kind.local_dofs();
    let rule = default_quadrature();
    assemble(space, space, &rule, |qp, b, _, local| {
        let cw = coeff.eval(qp.cell, &qp.bary, qp.x) * qp.weight;
        for i in 0..n {
            for j in 0..n {
                let v = if kind == SpaceKind::P1 {
                    dot(b.grads[i], b.grads[j])
                } else if i / 4 == j / 4 {
                    dot(b.grads[i % 4], b.grads[j % 4])
                } else {
                    0.0
                };
                local[i * n + j] += cw * v;
            }
        }
    })
}

#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn sym(g: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let off = 0.5 * (g[0][1] + g[1][0]);
    [[g[0][0], off], [off, g[1][1]]]
}

/// `2 (eta D(w), D(v))` on the Mini space.
pub fn sym_grad_matrix(space: &FeSpace, eta: Coefficient) -> Result<SparseMatrix, FormError> {
    expect(space, "sym_grad", "Mini", &[SpaceKind::MiniVector])?;
    if let Some(m) = eta.mesh() {
        check_mesh(space.mesh(), m)?;
    }
    let rule = default_quadrature();
    assemble(space, space, &rule, |qp, b, _, local| {
        let cw = 2.0 * eta.eval(qp.cell, &qp.bary, qp.x) * qp.weight;
        let d: Vec<[[f64; 2]; 2]> = (0..8).map(|k| sym(vector_grad(b, k))).collect();
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        s += d[i][r][c] * d[j][r][c];
                    }
                }
                local[i * 8 + j] += cw * s;
            }
        }
    })
}

/// `(q, div v)`: rows index the scalar test space (P1 or P0), columns the
/// vector trial space (Mini or RT0).
pub fn div_coupling(vector: &FeSpace, scalar: &FeSpace) -> Result<SparseMatrix, FormError> {
    expect(vector, "div_coupling", "Mini or RT0", &[SpaceKind::MiniVector, SpaceKind::Rt0])?;
    expect(scalar, "div_coupling", "P1 or P0", &[SpaceKind::P1, SpaceKind::P0])?;
    let vk = vector.kind();
    let (nr, nc) = (scalar.kind().local_dofs(), vk.local_dofs());
    let rule = default_quadrature();
    assemble(scalar, vector, &rule, |qp, bq, bv, local| {
        for i in 0..nr {
            for j in 0..nc {
                local[i * nc + j] += qp.weight * bq.values[i] * vector_div(vk, bv, j);
            }
        }
    })
}

pub fn div_coupling_velocity(velocity: &FeSpace, pressure: &FeSpace) -> Result<SparseMatrix, FormError> {
    expect(velocity, "div_coupling_velocity", "Mini", &[SpaceKind::MiniVector])?;
    div_coupling(velocity, pressure)
}

/// `(theta, div K)` between RT0 and P0: the incidence signs, exactly.
pub fn div_coupling_rt0(rt0: &FeSpace, p0: &FeSpace) -> Result<SparseMatrix, FormError> {
    expect(rt0, "div_coupling_rt0", "RT0", &[SpaceKind::Rt0])?;
    expect(p0, "div_coupling_rt0", "P0", &[SpaceKind::P0])?;
    check_mesh(rt0.mesh(), p0.mesh())?;
    let mesh = rt0.mesh();
    let mut t = TripletBuilder::with_capacity(p0.ndofs(), rt0.ndofs(), 3 * mesh.num_cells());
    for cell in 0..mesh.num_cells() {
        let signs = mesh.cell_facet_signs(cell);
        for (i, &f) in mesh.cell_facets(cell).iter().enumerate() {
            t.push(cell, f, signs[i]);
        }
    }
    Ok(t.finalize()?)
}

/// Skew form `1/2 (w.grad u, v) - 1/2 (w.grad v, u)` on the Mini space with
/// advecting field `w(cell, bary, x)`.
pub fn convection_matrix_with(
    space: &FeSpace,
    w: &(dyn Fn(usize, &[f64; 3], Point) -> [f64; 2] + Sync),
) -> Result<SparseMatrix, FormError> {
    expect(space, "convection", "Mini", &[SpaceKind::MiniVector])?;
    let rule = default_quadrature();
    assemble(space, space, &rule, |qp, b, _, local| {
        let wv = w(qp.cell, &qp.bary, qp.x);
        // same-component blocks only
        let mut c = [[0.0; 4]; 4];
        for (i, row) in c.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e = qp.weight * dot(wv, b.grads[j]) * b.values[i];
            }
        }
        for comp in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    local[(4 * comp + i) * 8 + 4 * comp + j] += 0.5 * (c[i][j] - c[j][i]);
                }
            }
        }
    })
}

pub fn convection_matrix(space: &FeSpace, w: &FieldCoefficients) -> Result<SparseMatrix, FormError> {
    check_fields(space, &[w])?;
    convection_matrix_with(space, &|t, bary, _| w.eval_vector(t, bary))
}

/// `((a x B), K)` with `B = (0, 0, b)`: rows index the test space `K`,
/// columns the trial space `a`. Both must be vector spaces.
pub fn cross_b_coupling(test: &FeSpace, trial: &FeSpace, b: Coefficient) -> Result<SparseMatrix, FormError> {
    for s in [test, trial] {
        expect(s, "cross_b", "Mini or RT0", &[SpaceKind::MiniVector, SpaceKind::Rt0])?;
    }
    if let Some(m) = b.mesh() {
        check_mesh(test.mesh(), m)?;
    }
    let (tk, sk) = (test.kind(), trial.kind());
    let (nr, nc) = (tk.local_dofs(), sk.local_dofs());
    let rule = default_quadrature();
    assemble(test, trial, &rule, |qp, bt, bs, local| {
        let bw = b.eval(qp.cell, &qp.bary, qp.x) * qp.weight;
        for i in 0..nr {
            let k = vector_value(tk, bt, i);
            for j in 0..nc {
                let a = vector_value(sk, bs, j);
                local[i * nc + j] += bw * (a[1] * k[0] - a[0] * k[1]);
            }
        }
    })
}

/// `tau (J x B, K x B) = tau (b^2 J, K)` on RT0.
pub fn jb_stabilization(rt0: &FeSpace, b: Coefficient, tau: f64) -> Result<SparseMatrix, FormError> {
    expect(rt0, "jb_stabilization", "RT0", &[SpaceKind::Rt0])?;
    let w = |t: usize, bary: &[f64; 3], x: Point| tau * b.eval(t, bary, x).powi(2);
    mass_matrix(rt0, Coefficient::General(&w))
}

/// `tau (phi grad mu, phi grad psi)` on P1.
pub fn phase_grad_stabilization(p1: &FeSpace, phi: &FieldCoefficients, tau: f64) -> Result<SparseMatrix, FormError> {
    expect(p1, "phase_grad_stabilization", "P1", &[SpaceKind::P1])?;
    check_fields(p1, &[phi])?;
    let w = |t: usize, bary: &[f64; 3], _: Point| tau * phi.eval_scalar(t, bary).powi(2);
    stiffness_matrix(p1, Coefficient::General(&w))
}

fn assemble_load<F>(space: &FeSpace, rule: &QuadratureRule, mut kernel: F) -> Result<Vec<f64>, FormError>
where
    F: FnMut(&QuadPoint, &BasisValues, &mut [f64]),
{
    let mesh = space.mesh();
    let n = space.kind().local_dofs();
    let mut out = vec![0.0; space.ndofs()];
    let mut local = vec![0.0; n];
    for cell in 0..mesh.num_cells() {
        let geom = mesh.geometry(cell);
        let signs = mesh.cell_facet_signs(cell);
        local.iter_mut().for_each(|v| *v = 0.0);
        for (bary, w) in rule.iter() {
            let qp = QuadPoint { cell, bary: *bary, x: geom.map(bary), weight: 2.0 * geom.area * w };
            let b = eval_basis(space.kind(), geom, &signs, bary)?;
            kernel(&qp, &b, &mut local);
        }
        for (k, &d) in space.cell_dofs(cell).iter().enumerate() {
            out[d] += local[k];
        }
    }
    Ok(out)
}

/// `(f, psi)` for a scalar space.
pub fn load_scalar(
    space: &FeSpace,
    f: &(dyn Fn(usize, &[f64; 3], Point) -> f64 + Sync),
) -> Result<Vec<f64>, FormError> {
    expect(space, "load_scalar", "P1 or P0", &[SpaceKind::P1, SpaceKind::P0])?;
    let n = space.kind().local_dofs();
    assemble_load(space, &default_quadrature(), |qp, b, local| {
        let v = f(qp.cell, &qp.bary, qp.x) * qp.weight;
        for i in 0..n {
            local[i] += v * b.values[i];
        }
    })
}

/// `(g, grad psi)` for P1.
pub fn load_gradient(
    space: &FeSpace,
    g: &(dyn Fn(usize, &[f64; 3], Point) -> [f64; 2] + Sync),
) -> Result<Vec<f64>, FormError> {
    expect(space, "load_gradient", "P1", &[SpaceKind::P1])?;
    assemble_load(space, &default_quadrature(), |qp, b, local| {
        let v = g(qp.cell, &qp.bary, qp.x);
        for i in 0..3 {
            local[i] += qp.weight * dot(v, b.grads[i]);
        }
    })
}

/// `(g, v)` for a vector space (Mini or RT0).
pub fn load_vector(
    space: &FeSpace,
    g: &(dyn Fn(usize, &[f64; 3], Point) -> [f64; 2] + Sync),
) -> Result<Vec<f64>, FormError> {
    expect(space, "load_vector", "Mini or RT0", &[SpaceKind::MiniVector, SpaceKind::Rt0])?;
    let kind = space.kind();
    let n = kind.local_dofs();
    assemble_load(space, &default_quadrature(), |qp, b, local| {
        let v = g(qp.cell, &qp.bary, qp.x);
        for i in 0..n {
            local[i] += qp.weight * dot(v, vector_value(kind, b, i));
        }
    })
}

/// `(g x B, K)` for a vector test space, with `B = (0, 0, b)`.
pub fn load_cross_b(
    space: &FeSpace,
    b: Coefficient,
    g: &(dyn Fn(usize, &[f64; 3], Point) -> [f64; 2] + Sync),
) -> Result<Vec<f64>, FormError> {
    let h = |t: usize, bary: &[f64; 3], x: Point| {
        let a = g(t, bary, x);
        let bv = b.eval(t, bary, x);
        [bv * a[1], -bv * a[0]]
    };
    load_vector(space, &h)
}

/// Boundary load `int_Sigma g psi` for P1, with `g(x, outward normal, marker)`.
pub fn boundary_load_scalar(
    space: &FeSpace,
    g: &(dyn Fn(Point, Point, BoundaryMarker) -> f64 + Sync),
) -> Result<Vec<f64>, FormError> {
    expect(space, "boundary_load", "P1", &[SpaceKind::P1])?;
    let mesh = space.mesh();
    let gauss = gauss_legendre_unit(4);
    let mut out = vec![0.0; space.ndofs()];
    for f in 0..mesh.num_facets() {
        let Some(marker) = mesh.facet_marker(f) else { continue };
        let [a, b] = mesh.facet(f);
        let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
        let len = mesh.facet_length(f);
        let n = marker.outward_normal();
        for &(s, w) in &gauss {
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let v = g(x, n, marker) * w * len;
            out[a] += v * (1.0 - s);
            out[b] += v * s;
        }
    }
    Ok(out)
}

/// All quadrature points of a mesh with physical weights.
pub fn quadrature_points(mesh: &Mesh) -> Vec<QuadPoint> {
    let rule = default_quadrature();
    let mut out = Vec::with_capacity(mesh.num_cells() * rule.len());
    for cell in 0..mesh.num_cells() {
        let geom = mesh.geometry(cell);
        for (bary, w) in rule.iter() {
            out.push(QuadPoint { cell, bary: *bary, x: geom.map(bary), weight: 2.0 * geom.area * w });
        }
    }
    out
}

/// `int_Omega f` with the volume rule.
pub fn integrate(mesh: &Mesh, f: impl Fn(&QuadPoint) -> f64) -> f64 {
    let rule = default_quadrature();
    let mut total = 0.0;
    for cell in 0..mesh.num_cells() {
        let geom = mesh.geometry(cell);
        let mut s = 0.0;
        for (bary, w) in rule.iter() {
            let qp = QuadPoint { cell, bary: *bary, x: geom.map(bary), weight: 2.0 * geom.area * w };
            s += qp.weight * f(&qp);
        }
        total += s;
    }
    total
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::fespace::Constraint;
    use crate::mesh::{structured_rect_mesh, unit_square, CellGeometry};

    /// Polynomial in barycentric coordinates with exact integration.
    #[derive(Clone, Debug, Default)]
    struct BaryPoly(HashMap<[u32; 3], f64>);

    impl BaryPoly {
        fn constant(c: f64) -> Self {
            Self(HashMap::from([([0, 0, 0], c)]))
        }
        fn lambda(i: usize) -> Self {
            let mut e = [0; 3];
            e[i] = 1;
            Self(HashMap::from([(e, 1.0)]))
        }
        fn mul(&self, o: &Self) -> Self {
            let mut out = HashMap::new();
            for (a, ca) in &self.0 {
                for (b, cb) in &o.0 {
                    let e = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
                    *out.entry(e).or_insert(0.0) += ca * cb;
                }
            }
            Self(out)
        }
        fn add(&self, o: &Self, s: f64) -> Self {
            let mut out = self.0.clone();
            for (e, c) in &o.0 {
                *out.entry(*e).or_insert(0.0) += s * c;
            }
            Self(out)
        }
        fn integrate(&self, area: f64) -> f64 {
            let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
            self.0
                .iter()
                .map(|(e, c)| c * 2.0 * area * fact(e[0]) * fact(e[1]) * fact(e[2]) / fact(e[0] + e[1] + e[2] + 2))
                .sum()
        }
    }

    /// Mini scalar basis (3 hats + bubble) and gradient components as polys.
    fn mini_basis(g: &CellGeometry) -> (Vec<BaryPoly>, Vec<[BaryPoly; 2]>) {
        let mut vals: Vec<BaryPoly> = (0..3).map(BaryPoly::lambda).collect();
        let mut grads: Vec<[BaryPoly; 2]> =
            (0..3).map(|i| [BaryPoly::constant(g.grad_bary[i][0]), BaryPoly::constant(g.grad_bary[i][1])]).collect();
        let bubble = BaryPoly::lambda(0).mul(&BaryPoly::lambda(1)).mul(&BaryPoly::lambda(2));
        vals.push(bubble.add(&BaryPoly::default(), 0.0).mul(&BaryPoly::constant(27.0)));
        let mut gb = [BaryPoly::default(), BaryPoly::default()];
        for k in 0..3 {
            let rest = BaryPoly::lambda((k + 1) % 3).mul(&BaryPoly::lambda((k + 2) % 3));
            for d in 0..2 {
                gb[d] = gb[d].add(&rest, 27.0 * g.grad_bary[k][d]);
            }
        }
        grads.push(gb);
        (vals, grads)
    }

    fn dense_scatter(n: usize, cells: &[(Vec<usize>, Vec<f64>)], ncol: usize) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; n]; n];
        for (dofs, local) in cells {
            for (i, &r) in dofs.iter().enumerate() {
                for (j, &c) in dofs.iter().enumerate() {
                    d[r][c] += local[i * ncol + j];
                }
            }
        }
        d
    }

    fn assert_dense_close(a: &SparseMatrix, d: &[Vec<f64>], tol: f64) {
        let ad = a.to_dense();
        for (r, row) in d.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((ad[r][c] - v).abs() <= tol, "({r},{c}): {} vs {v}", ad[r][c]);
            }
        }
    }

    fn space(mesh: &Arc<Mesh>, kind: SpaceKind) -> Arc<FeSpace> {
        Arc::new(FeSpace::new(Arc::clone(mesh), kind, Constraint::None))
    }

    #[test]
    fn potential_values() {
        assert_eq!(double_well(0.0), 0.25);
        assert_eq!(double_well_derivative(0.0), 0.0);
        for s in [-1.0, 1.0] {
            assert_eq!(double_well(s), 0.0);
            assert_eq!(double_well_derivative(s), 0.0);
        }
        assert_eq!(double_well(2.0), 1.0);
        assert_eq!(double_well_derivative(2.0), 2.0);
        assert_eq!(double_well(-2.0), 1.0);
        assert_eq!(double_well_derivative(-2.0), -2.0);
    }

    #[test]
    fn potential_second_derivative_bounded_by_two() {
        let mut max = 0.0f64;
        for k in 0..=8000 {
            let s = -4.0 + 8.0 * k as f64 / 8000.0;
            let h = 1e-4;
            let fd = (double_well_derivative(s + h) - double_well_derivative(s - h)) / (2.0 * h);
            assert!(fd.abs() <= POTENTIAL_LIPSCHITZ + 1e-6, "s={s}: {fd}");
            max = max.max(double_well_second_derivative(s).abs());
        }
        assert_eq!(max, 2.0);
    }

    #[test]
    fn potential_derivative_is_consistent() {
        for k in 0..200 {
            let s = -3.0 + 6.0 * k as f64 / 199.0;
            let h = 1e-6;
            let fd = (double_well(s + h) - double_well(s - h)) / (2.0 * h);
            assert!((fd - double_well_derivative(s)).abs() < 1e-8);
        }
    }

    #[test]
    fn blend_is_bounded() {
        assert_eq!(blend(1.0, 3.0, 5.0), 3.0);
        assert_eq!(blend(-1.0, 3.0, 5.0), 5.0);
        assert_eq!(blend(0.0, 3.0, 5.0), 4.0);
        assert_eq!(blend(7.0, 3.0, 5.0), 3.0);
        assert_eq!(blend(-7.0, 3.0, 5.0), 5.0);
    }

    #[test]
    fn p1_stiffness_two_cells_matches_oracle() {
        let mesh = Arc::new(unit_square(1).unwrap());
        let p1 = space(&mesh, SpaceKind::P1);
        let k = stiffness_matrix(&p1, Coefficient::Constant(1.0)).unwrap();
        let cells: Vec<_> = (0..2)
            .map(|t| {
                let g = mesh.geometry(t);
                let local: Vec<f64> = (0..9).map(|ij| g.area * dot(g.grad_bary[ij / 3], g.grad_bary[ij % 3])).collect();
                (mesh.cell(t).to_vec(), local)
            })
            .collect();
        let oracle = dense_scatter(4, &cells, 3);
        assert_dense_close(&k, &oracle, 1e-14);
        // unit diagonal, no coupling along the cut, -1/2 along the edges
        for v in 0..4 {
            assert!((k.get(v, v) - 1.0).abs() < 1e-14);
        }
        assert!(k.get(0, 3).abs() < 1e-14);
        assert!((k.get(0, 1) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn stiffness_row_sums_and_mass_total() {
        let mesh = Arc::new(unit_square(5).unwrap());
        let p1 = space(&mesh, SpaceKind::P1);
        let k = stiffness_matrix(&p1, Coefficient::Constant(2.5)).unwrap();
        for r in k.mul_vec(&vec![1.0; p1.ndofs()]) {
            assert!(r.abs() < 1e-13);
        }
        let m = mass_matrix(&p1, Coefficient::Constant(1.0)).unwrap();
        assert!((m.values().iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!(k.symmetry_defect() <= 1e-12 * k.max_abs());
        assert!(m.symmetry_defect() <= 1e-12 * m.max_abs());
    }

    #[test]
    fn mini_mass_and_stiffness_match_exact_oracle() {
        let mesh = Arc::new(structured_rect_mesh(2, 1, (0.0, 1.0), (0.0, 0.7)).unwrap());
        let mini = space(&mesh, SpaceKind::MiniVector);
        let m = mass_matrix(&mini, Coefficient::Constant(1.0)).unwrap();
        let a = stiffness_matrix(&mini, Coefficient::Constant(1.0)).unwrap();
        let mut mc = Vec::new();
        let mut ac = Vec::new();
        for t in 0..mesh.num_cells() {
            let g = mesh.geometry(t);
            let (v, gr) = mini_basis(g);
            let mut ml = vec![0.0; 64];
            let mut al = vec![0.0; 64];
            for i in 0..8 {
                for j in 0..8 {
                    if i / 4 != j / 4 {
                        continue;
                    }
                    let (a_, b_) = (i % 4, j % 4);
                    ml[i * 8 + j] = v[a_].mul(&v[b_]).integrate(g.area);
                    al[i * 8 + j] = gr[a_][0].mul(&gr[b_][0]).add(&gr[a_][1].mul(&gr[b_][1]), 1.0).integrate(g.area);
                }
            }
            mc.push((mini.cell_dofs(t).to_vec(), ml));
            ac.push((mini.cell_dofs(t).to_vec(), al));
        }
        assert_dense_close(&m, &dense_scatter(mini.ndofs(), &mc, 8), 1e-14);
        assert_dense_close(&a, &dense_scatter(mini.ndofs(), &ac, 8), 1e-13);
    }

    #[test]
    fn sym_grad_kernel_contains_rigid_motions() {
        let mesh = Arc::new(unit_square(4).unwrap());
        let mini = space(&mesh, SpaceKind::MiniVector);
        let a = sym_grad_matrix(&mini, Coefficient::Constant(1.0)).unwrap();
        assert!(a.symmetry_defect() <= 1e-12 * a.max_abs());
        for f in [|_: Point| [1.0, 0.0], |_: Point| [0.0, 1.0], |x: Point| [-x[1], x[0]]] {
            let u = mini.interpolate_vector(f);
            assert!(a.bilinear(&u.values, &u.values).abs() < 1e-12);
        }
        let u = mini.interpolate_vector(|x| [x[0], -x[1]]);
        assert!(a.bilinear(&u.values, &u.values) > 1.0);
        let a2 = sym_grad_matrix(&mini, Coefficient::Constant(2.0)).unwrap();
        for (p, q) in a.values().iter().zip(a2.values()) {
            assert!((2.0 * p - q).abs() <= 1e-14 * q.abs().max(1.0));
        }
    }

    #[test]
    fn rt0_divergence_coupling_is_incidence() {
        let mesh = Arc::new(unit_square(3).unwrap());
        let rt = space(&mesh, SpaceKind::Rt0);
        let p0 = space(&mesh, SpaceKind::P0);
        let b = div_coupling_rt0(&rt, &p0).unwrap();
        assert!(b.values().iter().all(|&v| v == 1.0 || v == -1.0));
        let bq = div_coupling(&rt, &p0).unwrap();
        for (p, q) in b.values().iter().zip(bq.values()) {
            assert!((p - q).abs() < 1e-13);
        }
        // discrete Stokes theorem on each cell
        let j = rt.interpolate_vector(|x| [x[0] * x[0], x[0] * x[1]]);
        let d = b.mul_vec(&j.values);
        for t in 0..mesh.num_cells() {
            assert!((d[t] - j.div_rt0(t) * mesh.geometry(t).area).abs() < 1e-14);
        }
    }

    #[test]
    fn velocity_divergence_of_constant_vanishes() {
        let mesh = Arc::new(unit_square(4).unwrap());
        let mini = space(&mesh, SpaceKind::MiniVector);
        let p1 = space(&mesh, SpaceKind::P1);
        let b = div_coupling_velocity(&mini, &p1).unwrap();
        let u = mini.interpolate_vector(|_| [0.3, -1.7]);
        assert!(b.mul_vec(&u.values).iter().all(|v| v.abs() < 1e-13));
        // (1, div u) = flux through the boundary = 1 for u = (x, 0)
        let u = mini.interpolate_vector(|x| [x[0], 0.0]);
        let s: f64 = b.mul_vec(&u.values).iter().sum();
        assert!((s - 1.0).abs() < 1e-13);
    }

    #[test]
    fn convection_is_skew_and_matches_oracle() {
        let mesh = Arc::new(unit_square(1).unwrap());
        let mini = space(&mesh, SpaceKind::MiniVector);
        let n = convection_matrix_with(&mini, &|_, _, _| [1.0, 0.0]).unwrap();
        assert!(n.transpose().values().iter().zip(n.values()).all(|(a, b)| (a + b).abs() < 1e-15));
        let mut cells = Vec::new();
        for t in 0..2 {
            let g = mesh.geometry(t);
            let (v, gr) = mini_basis(g);
            let mut c = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    c[i][j] = gr[j][0].mul(&v[i]).integrate(g.area);
                }
            }
            let mut l = vec![0.0; 64];
            for comp in 0..2 {
                for i in 0..4 {
                    for j in 0..4 {
                        l[(4 * comp + i) * 8 + 4 * comp + j] = 0.5 * (c[i][j] - c[j][i]);
                    }
                }
            }
            cells.push((mini.cell_dofs(t).to_vec(), l));
        }
        assert_dense_close(&n, &dense_scatter(mini.ndofs(), &cells, 8), 1e-14);
        let zero = convection_matrix_with(&mini, &|_, _, _| [0.0, 0.0]).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
    }

    #[test]
    fn cross_b_constant_fields() {
        let mesh = Arc::new(unit_square(3).unwrap());
        let rt = space(&mesh, SpaceKind::Rt0);
        let mini = space(&mesh, SpaceKind::MiniVector);
        let c = cross_b_coupling(&rt, &mini, Coefficient::Constant(1.0)).unwrap();
        let a = mini.interpolate_vector(|_| [0.0, 1.0]);
        let k = rt.interpolate_vector(|_| [1.0, 0.0]);
        assert!((c.bilinear(&k.values, &a.values) - 1.0).abs() < 1e-13);
        let z = cross_b_coupling(&rt, &mini, Coefficient::Constant(0.0)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        // (a x B, K) + (K x B, a) = 0
        let ct = cross_b_coupling(&mini, &rt, Coefficient::Constant(1.0)).unwrap();
        let a = mini.interpolate_vector(|x| [x[1].sin(), x[0] * x[1]]);
        let k = rt.interpolate_vector(|x| [x[0] + 2.0, x[1] * x[1]]);
        assert!((c.bilinear(&k.values, &a.values) + ct.bilinear(&a.values, &k.values)).abs() < 1e-12);
    }

    #[test]
    fn jb_stabilization_is_scaled_mass() {
        let mesh = Arc::new(unit_square(3).unwrap());
        let rt = space(&mesh, SpaceKind::Rt0);
        let m = mass_matrix(&rt, Coefficient::Constant(1.0)).unwrap();
        let s = jb_stabilization(&rt, Coefficient::Constant(1.5), 0.1).unwrap();
        for (p, q) in m.values().iter().zip(s.values()) {
            assert!((0.1 * 2.25 * p - q).abs() < 1e-13);
        }
        let s2 = jb_stabilization(&rt, Coefficient::Constant(3.0), 0.1).unwrap();
        for (p, q) in s.values().iter().zip(s2.values()) {
            assert!((4.0 * p - q).abs() < 1e-13);
        }
        assert_eq!(jb_stabilization(&rt, Coefficient::Constant(1.0), 0.0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn phase_stabilization_scaling() {
        let mesh = Arc::new(unit_square(3).unwrap());
        let p1 = space(&mesh, SpaceKind::P1);
        let k = stiffness_matrix(&p1, Coefficient::Constant(1.0)).unwrap();
        let zero = p1.interpolate_scalar(|_| 0.0);
        assert_eq!(phase_grad_stabilization(&p1, &zero, 0.3).unwrap().max_abs(), 0.0);
        let one = p1.interpolate_scalar(|_| 1.0);
        let s1 = phase_grad_stabilization(&p1, &one, 0.3).unwrap();
        let c = p1.interpolate_scalar(|_| -0.6);
        let sc = phase_grad_stabilization(&p1, &c, 0.3).unwrap();
        for ((p, q), r) in k.values().iter().zip(s1.values()).zip(sc.values()) {
            assert!((0.3 * p - q).abs() < 1e-13);
            assert!((0.36 * q - r).abs() < 1e-13);
        }
    }

    #[test]
    fn loads() {
        let mesh = Arc::new(unit_square(4).unwrap());
        let mini = space(&mesh, SpaceKind::MiniVector);
        let p1 = space(&mesh, SpaceKind::P1);
        let l = load_vector(&mini, &|_, _, _| [1.0, 0.0]).unwrap();
        let half = mini.ndofs() / 2;
        // hats sum to one; bubbles add 9/20 |K| each
        let hats: f64 = (0..mesh.num_vertices()).map(|v| l[v]).sum();
        let bubbles: f64 = (mesh.num_vertices()..half).map(|k| l[k]).sum();
        assert!((hats - 1.0).abs() < 1e-12);
        assert!((bubbles - 0.45).abs() < 1e-12);
        assert!(l[half..].iter().all(|v| v.abs() < 1e-15));
        assert!(load_scalar(&p1, &|_, _, _| 0.0).unwrap().iter().all(|&v| v == 0.0));
        let lg = load_gradient(&p1, &|_, _, _| [0.4, -1.0]).unwrap();
        assert!(lg.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn boundary_load_perimeter() {
        let mesh = Arc::new(unit_square(3).unwrap());
        let p1 = space(&mesh, SpaceKind::P1);
        let b = boundary_load_scalar(&p1, &|_, _, _| 1.0).unwrap();
        assert!((b.iter().sum::<f64>() - 4.0).abs() < 1e-13);
        // flux of (x, 0) through the boundary equals the area
        let f = boundary_load_scalar(&p1, &|x, n, _| x[0] * n[0]).unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn mesh_mismatch_is_reported() {
        let m1 = Arc::new(unit_square(2).unwrap());
        let m2 = Arc::new(unit_square(3).unwrap());
        let a = space(&m1, SpaceKind::MiniVector);
        let b = space(&m2, SpaceKind::P1);
        assert_eq!(div_coupling_velocity(&a, &b).unwrap_err(), FormError::MeshMismatch);
        let w = space(&m2, SpaceKind::MiniVector).zeros();
        assert_eq!(convection_matrix(&a, &w).unwrap_err(), FormError::MeshMismatch);
    }
}
