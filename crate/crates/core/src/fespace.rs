//! Discrete spaces: continuous P1, P1+bubble vector (Mini), piecewise
//! constants, and lowest-order Raviart-Thomas.
//!
//! Mini DOFs are numbered component-blocked: the `x` component occupies
//! `[0, V + T)` (vertices, then one bubble per cell) and `y` follows with the
//! same layout. RT0 DOFs are facet fluxes measured against the global facet
//! normal, so a DOF is shared verbatim by both neighbouring cells.

use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{CellGeometry, Mesh, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("degenerate cell with area {0:e}")]
    DegenerateCell(f64),
    #[error("{0:?} basis has no {1}")]
    Unsupported(SpaceKind, &'static str),
    #[error("field length {got} does not match {expected} DOFs")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    P1,
    MiniVector,
    P0,
    Rt0,
}

impl SpaceKind {
    /// Number of scalar basis functions per cell (Mini counts one component).
    pub fn local_basis_count(self) -> usize {
        match self {
            Self::P1 | Self::Rt0 => 3,
            Self::MiniVector => 4,
            Self::P0 => 1,
        }
    }

    /// Local DOFs per cell.
    pub fn local_dofs(self) -> usize {
        match self {
            Self::MiniVector => 8,
            k => k.local_basis_count(),
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(self, Self::MiniVector | Self::Rt0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    None,
    ZeroMean,
}

#[derive(Debug)]
pub struct FeSpace {
    kind: SpaceKind,
    constraint: Constraint,
    mesh: Arc<Mesh>,
    ndofs: usize,
    cell_dofs: Vec<usize>,
    mean_weights: Option<Vec<f64>>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>, kind: SpaceKind, constraint: Constraint) -> Self {
        let (nv, nt, nf) = (mesh.num_vertices(), mesh.num_cells(), mesh.num_facets());
        let stride = kind.local_dofs();
        let mut cell_dofs = Vec::with_capacity(nt * stride);
        for t in 0..nt {
            let c = mesh.cell(t);
            match kind {
                SpaceKind::P1 => cell_dofs.extend_from_slice(&c),
                SpaceKind::P0 => cell_dofs.push(t),
                SpaceKind::Rt0 => cell_dofs.extend_from_slice(&mesh.cell_facets(t)),
                SpaceKind::MiniVector => {
                    let block = nv + nt;
                    for comp in 0..2 {
                        let off = comp * block;
                        cell_dofs.extend(c.iter().map(|&v| off + v));
                        cell_dofs.push(off + nv + t);
                    }
                }
            }
        }
        let ndofs = match kind {
            SpaceKind::P1 => nv,
            SpaceKind::P0 => nt,
            SpaceKind::Rt0 => nf,
            SpaceKind::MiniVector => 2 * (nv + nt),
        };
        let mut space = Self { kind, constraint, mesh, ndofs, cell_dofs, mean_weights: None };
        space.mean_weights = space.integral_weights();
        space
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn ndofs(&self) -> usize {
        self.ndofs
    }

    /// Global DOFs of cell `t` in local order.
    pub fn cell_dofs(&self, t: usize) -> &[usize] {
        let s = self.kind.local_dofs();
        &self.cell_dofs[t * s..(t + 1) * s]
    }

    /// Exact integral functional `w` with `w . x = integral of x` (scalar spaces).
    pub fn integral_weights(&self) -> Option<Vec<f64>> {
        let mesh = &self.mesh;
        match self.kind {
            SpaceKind::P0 => Some((0..mesh.num_cells()).map(|t| mesh.geometry(t).area).collect()),
            SpaceKind::P1 => {
                let mut w = vec![0.0; self.ndofs];
                for t in 0..mesh.num_cells() {
                    let a = mesh.geometry(t).area / 3.0;
                    for v in mesh.cell(t) {
                        w[v] += a;
                    }
                }
                Some(w)
            }
            _ => None,
        }
    }

    /// Weights of the mean functional for zero-mean spaces.
    pub fn mean_weights(&self) -> Option<&[f64]> {
        match self.constraint {
            Constraint::ZeroMean => self.mean_weights.as_deref(),
            Constraint::None => None,
        }
    }

    /// Index of the `x` vertex DOF for Mini, for component `comp`.
    pub fn mini_vertex_dof(&self, comp: usize, v: usize) -> usize {
        debug_assert_eq!(self.kind, SpaceKind::MiniVector);
        comp * (self.mesh.num_vertices() + self.mesh.num_cells()) + v
    }

    pub fn mini_bubble_dof(&self, comp: usize, t: usize) -> usize {
        debug_assert_eq!(self.kind, SpaceKind::MiniVector);
        let nv = self.mesh.num_vertices();
        comp * (nv + self.mesh.num_cells()) + nv + t
    }

    pub fn zeros(self: &Arc<Self>) -> FieldCoefficients {
        FieldCoefficients { space: Arc::clone(self), values: vec![0.0; self.ndofs] }
    }

    /// Interpolates a scalar function (P1: vertex values; P0: centroid values).
    pub fn interpolate_scalar(self: &Arc<Self>, f: impl Fn(Point) -> f64) -> FieldCoefficients {
        let mesh = &self.mesh;
        let values = match self.kind {
            SpaceKind::P1 => mesh.vertices().iter().map(|&x| f(x)).collect(),
            SpaceKind::P0 => (0..mesh.num_cells()).map(|t| f(mesh.geometry(t).centroid())).collect(),
            _ => panic!("interpolate_scalar on vector space {:?}", self.kind),
        };
        FieldCoefficients { space: Arc::clone(self), values }
    }

    /// Interpolates a vector function. Mini: vertex values, zero bubbles.
    /// RT0: midpoint normal flux times facet length.
    pub fn interpolate_vector(self: &Arc<Self>, f: impl Fn(Point) -> [f64; 2]) -> FieldCoefficients {
        let mesh = &self.mesh;
        let mut values = vec![0.0; self.ndofs];
        match self.kind {
            SpaceKind::MiniVector => {
                for (v, &x) in mesh.vertices().iter().enumerate() {
                    let val = f(x);
                    values[self.mini_vertex_dof(0, v)] = val[0];
                    values[self.mini_vertex_dof(1, v)] = val[1];
                }
            }
            SpaceKind::Rt0 => {
                for (fct, value) in values.iter_mut().enumerate() {
                    *value = rt0_facet_dof(mesh, fct, &f);
                }
            }
            _ => panic!("interpolate_vector on scalar space {:?}", self.kind),
        }
        FieldCoefficients { space: Arc::clone(self), values }
    }
}

/// Midpoint-rule flux of `f` through facet `fct` against its global normal.
pub fn rt0_facet_dof(mesh: &Mesh, fct: usize, f: &impl Fn(Point) -> [f64; 2]) -> f64 {
    let n = mesh.facet_normal(fct);
    let val = f(mesh.facet_midpoint(fct));
    (val[0] * n[0] + val[1] * n[1]) * mesh.facet_length(fct)
}

/// Basis values on one cell at one point. For Mini the four scalar functions
/// (three hats and the bubble) are reported; the vector basis is their
/// component-wise copy.
#[derive(Debug, Clone, Copy, Default)]
pub struct BasisValues {
    pub count: usize,
    pub values: [f64; 4],
    pub grads: [[f64; 2]; 4],
    pub vectors: [[f64; 2]; 3],
    pub divs: [f64; 3],
}

/// Evaluates the basis of `kind` at barycentric point `bary` on a cell.
/// `signs` are the cell's facet incidence signs (used by RT0 only).
pub fn eval_basis(
    kind: SpaceKind,
    geom: &CellGeometry,
    signs: &[f64; 3],
    bary: &[f64; 3],
) -> Result<BasisValues, SpaceError> {
    if !(geom.area > 0.0) {
        return Err(SpaceError::DegenerateCell(geom.area));
    }
    let mut out = BasisValues { count: kind.local_basis_count(), ..Default::default() };
    match kind {
        SpaceKind::P0 => {
            out.values[0] = 1.0;
        }
        SpaceKind::P1 | SpaceKind::MiniVector => {
            for i in 0..3 {
                out.values[i] = bary[i];
                out.grads[i] = geom.grad_bary[i];
            }
            if kind == SpaceKind::MiniVector {
                let [l0, l1, l2] = *bary;
                out.values[3] = 27.0 * l0 * l1 * l2;
                let g = &geom.grad_bary;
                for k in 0..2 {
                    out.grads[3][k] = 27.0 * (g[0][k] * l1 * l2 + l0 * g[1][k] * l2 + l0 * l1 * g[2][k]);
                }
            }
        }
        SpaceKind::Rt0 => {
            let x = geom.map(bary);
            let scale = 1.0 / (2.0 * geom.area);
            for i in 0..3 {
                let p = geom.vertices[i];
                let s = signs[i] * scale;
                out.vectors[i] = [s * (x[0] - p[0]), s * (x[1] - p[1])];
                out.divs[i] = signs[i] / geom.area;
            }
        }
    }
    Ok(out)
}

/// Coefficient vector of a discrete function, tied to its space.
#[derive(Debug, Clone)]
pub struct FieldCoefficients {
    pub space: Arc<FeSpace>,
    pub values: Vec<f64>,
}

impl FieldCoefficients {
    pub fn new(space: Arc<FeSpace>, values: Vec<f64>) -> Result<Self, SpaceError> {
        if values.len() != space.ndofs() {
            return Err(SpaceError::LengthMismatch { expected: space.ndofs(), got: values.len() });
        }
        Ok(Self { space, values })
    }

    pub fn kind(&self) -> SpaceKind {
        self.space.kind()
    }

    /// Integral over the domain (scalar spaces).
    pub fn integral(&self) -> f64 {
        let w = self.space.integral_weights().expect("integral of a vector field");
        w.iter().zip(&self.values).map(|(a, b)| a * b).sum()
    }

    pub fn mean(&self) -> f64 {
        self.integral() / self.space.mesh().total_area()
    }

    /// Shifts a scalar P0/P1 field to zero mean.
    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        for v in &mut self.values {
            *v -= m;
        }
    }

    /// Scalar value on cell `t` at barycentric point.
    pub fn eval_scalar(&self, t: usize, bary: &[f64; 3]) -> f64 {
        let dofs = self.space.cell_dofs(t);
        match self.kind() {
            SpaceKind::P0 => self.values[dofs[0]],
            SpaceKind::P1 => (0..3).map(|i| bary[i] * self.values[dofs[i]]).sum(),
            k => panic!("eval_scalar on {k:?}"),
        }
    }

    /// Constant gradient of a P1 field on cell `t`.
    pub fn grad_scalar(&self, t: usize) -> [f64; 2] {
        assert_eq!(self.kind(), SpaceKind::P1);
        let dofs = self.space.cell_dofs(t);
        let g = &self.space.mesh().geometry(t).grad_bary;
        let mut out = [0.0; 2];
        for i in 0..3 {
            let c = self.values[dofs[i]];
            out[0] += c * g[i][0];
            out[1] += c * g[i][1];
        }
        out
    }

    /// Vector value on cell `t` (Mini or RT0).
    pub fn eval_vector(&self, t: usize, bary: &[f64; 3]) -> [f64; 2] {
        let mesh = self.space.mesh();
        let dofs = self.space.cell_dofs(t);
        match self.kind() {
            SpaceKind::MiniVector => {
                let bubble = 27.0 * bary[0] * bary[1] * bary[2];
                let mut out = [0.0; 2];
                for (comp, o) in out.iter_mut().enumerate() {
                    let d = &dofs[4 * comp..4 * comp + 4];
                    *o = (0..3).map(|i| bary[i] * self.values[d[i]]).sum::<f64>() + bubble * self.values[d[3]];
                }
                out
            }
            SpaceKind::Rt0 => {
                let geom = mesh.geometry(t);
                let signs = mesh.cell_facet_signs(t);
                let x = geom.map(bary);
                let scale = 1.0 / (2.0 * geom.area);
                let mut out = [0.0; 2];
                for i in 0..3 {
                    let c = self.values[dofs[i]] * signs[i] * scale;
                    out[0] += c * (x[0] - geom.vertices[i][0]);
                    out[1] += c * (x[1] - geom.vertices[i][1]);
                }
                out
            }
            k => panic!("eval_vector on {k:?}"),
        }
    }

    /// Jacobian `[i][j] = d u_i / d x_j` of a Mini field.
    pub fn grad_vector(&self, t: usize, bary: &[f64; 3]) -> [[f64; 2]; 2] {
        assert_eq!(self.kind(), SpaceKind::MiniVector);
        let geom = self.space.mesh().geometry(t);
        let basis = eval_basis(SpaceKind::MiniVector, geom, &[1.0; 3], bary).expect("valid cell");
        let dofs = self.space.cell_dofs(t);
        let mut out = [[0.0; 2]; 2];
        for comp in 0..2 {
            for i in 0..4 {
                let c = self.values[dofs[4 * comp + i]];
                out[comp][0] += c * basis.grads[i][0];
                out[comp][1] += c * basis.grads[i][1];
            }
        }
        out
    }

    /// Constant divergence of an RT0 field on cell `t`.
    pub fn div_rt0(&self, t: usize) -> f64 {
        assert_eq!(self.kind(), SpaceKind::Rt0);
        let mesh = self.space.mesh();
        let dofs = self.space.cell_dofs(t);
        let signs = mesh.cell_facet_signs(t);
        (0..3).map(|i| signs[i] * self.values[dofs[i]]).sum::<f64>() / mesh.geometry(t).area
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_square;

    fn spaces(n: usize) -> (Arc<Mesh>, [Arc<FeSpace>; 4]) {
        let mesh = Arc::new(unit_square(n).unwrap());
        let mk = |k| Arc::new(FeSpace::new(Arc::clone(&mesh), k, Constraint::None));
        let s = [mk(SpaceKind::P1), mk(SpaceKind::MiniVector), mk(SpaceKind::P0), mk(SpaceKind::Rt0)];
        (mesh, s)
    }

    #[test]
    fn dof_counts() {
        let (_, [p1, mini, p0, rt]) = spaces(1);
        assert_eq!(p1.ndofs(), 4);
        assert_eq!(mini.ndofs(), 12);
        assert_eq!(p0.ndofs(), 2);
        assert_eq!(rt.ndofs(), 5);
        let (m, [p1, mini, p0, rt]) = spaces(7);
        let (v, t, e) = (m.num_vertices(), m.num_cells(), m.num_facets());
        assert_eq!((p1.ndofs(), mini.ndofs(), p0.ndofs(), rt.ndofs()), (v, 2 * (v + t), t, e));
    }

    #[test]
    fn local_maps_are_injective() {
        let (m, s) = spaces(3);
        for space in s.iter() {
            for t in 0..m.num_cells() {
                let mut d = space.cell_dofs(t).to_vec();
                d.sort_unstable();
                d.dedup();
                assert_eq!(d.len(), space.kind().local_dofs());
            }
        }
    }

    #[test]
    fn p1_interpolates_vertex_values() {
        let (_, [p1, ..]) = spaces(1);
        let f = p1.interpolate_scalar(|x| x[0] + x[1]);
        assert_eq!(f.values, vec![0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn zero_mean_projection_of_constant() {
        let mesh = Arc::new(unit_square(4).unwrap());
        let p0 = Arc::new(FeSpace::new(mesh, SpaceKind::P0, Constraint::ZeroMean));
        let mut p = p0.interpolate_scalar(|_| 1.0);
        p.subtract_mean();
        assert!(p.values.iter().all(|v| v.abs() < 1e-15));
        assert!(p0.mean_weights().is_some());
    }

    #[test]
    fn rt0_reproduces_constants() {
        let (m, [.., rt]) = spaces(1);
        let j = rt.interpolate_vector(|_| [1.0, 0.0]);
        for t in 0..m.num_cells() {
            for bary in [[1.0 / 3.0; 3], [0.7, 0.2, 0.1], [0.0, 0.5, 0.5]] {
                let v = j.eval_vector(t, &bary);
                assert!((v[0] - 1.0).abs() < 1e-13 && v[1].abs() < 1e-13);
            }
            assert!(j.div_rt0(t).abs() < 1e-13);
        }
        // horizontal facets carry no flux of (1, 0)
        for f in 0..m.num_facets() {
            let n = m.facet_normal(f);
            if n[0] == 0.0 {
                assert_eq!(j.values[f], 0.0);
            }
        }
    }

    #[test]
    fn rt0_interpolation_of_own_functions_is_identity() {
        let (m, [.., rt]) = spaces(4);
        let coeffs: Vec<f64> = (0..rt.ndofs()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let field = FieldCoefficients::new(Arc::clone(&rt), coeffs.clone()).unwrap();
        // point evaluation inside either neighbour gives the same normal flux
        let back = rt.interpolate_vector(|x| {
            let t = locate(&m, x);
            let bary = barycentric(m.geometry(t), x);
            field.eval_vector(t, &bary)
        });
        for (a, b) in back.values.iter().zip(&coeffs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    fn barycentric(g: &CellGeometry, x: Point) -> [f64; 3] {
        let mut b = [0.0; 3];
        for i in 0..3 {
            let p = g.vertices[(i + 1) % 3];
            b[i] = g.grad_bary[i][0] * (x[0] - p[0]) + g.grad_bary[i][1] * (x[1] - p[1]);
        }
        b
    }

    fn locate(m: &Mesh, x: Point) -> usize {
        (0..m.num_cells()).find(|&t| barycentric(m.geometry(t), x).iter().all(|&l| l > -1e-12)).unwrap()
    }

    #[test]
    fn basis_at_barycenter() {
        let g = CellGeometry::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = eval_basis(SpaceKind::MiniVector, &g, &[1.0; 3], &[1.0 / 3.0; 3]).unwrap();
        for i in 0..3 {
            assert!((b.values[i] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((b.values[3] - 1.0).abs() < 1e-14);
        assert!(b.grads[3][0].abs() < 1e-14 && b.grads[3][1].abs() < 1e-14);
    }

    #[test]
    fn rt0_divergence_integrates_to_sign() {
        let (m, _) = spaces(2);
        for t in 0..m.num_cells() {
            let g = m.geometry(t);
            let s = m.cell_facet_signs(t);
            let b = eval_basis(SpaceKind::Rt0, g, &s, &[0.2, 0.3, 0.5]).unwrap();
            for i in 0..3 {
                assert!((b.divs[i] * g.area - s[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn degenerate_cell_is_rejected() {
        let g = CellGeometry { area: 0.0, vertices: [[0.0; 2]; 3], normals: [[0.0; 2]; 3], grad_bary: [[0.0; 2]; 3] };
        assert!(eval_basis(SpaceKind::P1, &g, &[1.0; 3], &[1.0 / 3.0; 3]).is_err());
    }

    #[test]
    fn p1_partition_of_unity() {
        let (m, _) = spaces(3);
        for t in 0..m.num_cells() {
            let b = eval_basis(SpaceKind::P1, m.geometry(t), &[1.0; 3], &[0.1, 0.6, 0.3]).unwrap();
            assert!((b.values[..3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let gs = (0..3).fold([0.0; 2], |acc, i| [acc[0] + b.grads[i][0], acc[1] + b.grads[i][1]]);
            assert!(gs[0].abs() < 1e-12 && gs[1].abs() < 1e-12);
        }
    }
}
