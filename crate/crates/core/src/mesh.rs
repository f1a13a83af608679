//! Conforming triangulations of rectangles with globally oriented facets.
//!
//! Every facet carries one global unit normal. With tangent `t = x_hi - x_lo`
//! (from the lower to the higher vertex index) the normal is `t` rotated
//! clockwise, `n = (t_y, -t_x) / |t|`. Each cell records, per local facet,
//! whether that global normal points out of the cell (`+1`) or into it (`-1`).
//! Local facet `i` of a cell is the one opposite local vertex `i`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("subdivision counts must be positive (got nx={nx}, ny={ny})")]
    BadSubdivision { nx: usize, ny: usize },
    #[error("empty coordinate range [{0}, {1}]")]
    EmptyRange(f64, f64),
    #[error("cell {cell} has non-positive signed area {area:e}")]
    DegenerateCell { cell: usize, area: f64 },
    #[error("cell {cell} references vertex {vertex} out of range")]
    BadVertex { cell: usize, vertex: usize },
    #[error("facet {0} is shared by more than two cells")]
    NonManifold(usize),
    #[error("unknown boundary marker `{0}`")]
    UnknownMarker(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryMarker {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryMarker {
    pub const ALL: [BoundaryMarker; 4] = [Self::Left, Self::Right, Self::Bottom, Self::Top];

    pub fn name(self) -> &'static str {
        match self {
            Self::Left => "left",
            Self::Right => "right",
            Self::Bottom => "bottom",
            Self::Top => "top",
        }
    }

    /// Outward unit normal of the side of the bounding rectangle.
    pub fn outward_normal(self) -> Point {
        match self {
            Self::Left => [-1.0, 0.0],
            Self::Right => [1.0, 0.0],
            Self::Bottom => [0.0, -1.0],
            Self::Top => [0.0, 1.0],
        }
    }
}

impl fmt::Display for BoundaryMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Selection of boundary facets, parsed from `"all"` or a side name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryFilter {
    All,
    Marker(BoundaryMarker),
}

impl FromStr for BoundaryFilter {
    type Err = MeshError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(Self::All),
            "left" => Ok(Self::Marker(BoundaryMarker::Left)),
            "right" => Ok(Self::Marker(BoundaryMarker::Right)),
            "bottom" => Ok(Self::Marker(BoundaryMarker::Bottom)),
            "top" => Ok(Self::Marker(BoundaryMarker::Top)),
            other => Err(MeshError::UnknownMarker(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSize {
    pub h_max: f64,
    pub h_min: f64,
}

/// Geometry of a single cell.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub area: f64,
    pub vertices: [Point; 3],
    /// Outward unit normal of local facet `i` (opposite vertex `i`).
    pub normals: [Point; 3],
    /// Constant gradients of the barycentric coordinates.
    pub grad_bary: [Point; 3],
}

impl CellGeometry {
    pub fn new(vertices: [Point; 3]) -> Option<Self> {
        let [a, b, c] = vertices;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if !(det > 0.0) {
            return None;
        }
        let area = 0.5 * det;
        let mut normals = [[0.0; 2]; 3];
        let mut grad_bary = [[0.0; 2]; 3];
        for i in 0..3 {
            let p = vertices[(i + 1) % 3];
            let q = vertices[(i + 2) % 3];
            // counter-clockwise edge p -> q, outward normal is the clockwise rotation
            let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            normals[i] = [(q[1] - p[1]) / len, -(q[0] - p[0]) / len];
            grad_bary[i] = [-(q[1] - p[1]) / det, (q[0] - p[0]) / det];
        }
        Some(Self { area, vertices, normals, grad_bary })
    }

    /// Physical point for barycentric coordinates.
    #[inline]
    pub fn map(&self, bary: &[f64; 3]) -> Point {
        let v = &self.vertices;
        [
            bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
            bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
        ]
    }

    pub fn centroid(&self) -> Point {
        self.map(&[1.0 / 3.0; 3])
    }

    pub fn diameter(&self) -> f64 {
        let v = &self.vertices;
        (0..3)
            .map(|i| {
                let (p, q) = (v[i], v[(i + 1) % 3]);
                ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    facets: Vec<[usize; 2]>,
    cell_facets: Vec<[usize; 3]>,
    cell_signs: Vec<[f64; 3]>,
    facet_cells: Vec<(usize, Option<usize>)>,
    markers: Vec<Option<BoundaryMarker>>,
    geometry: Vec<CellGeometry>,
    bbox: [Point; 2],
}

impl Mesh {
    /// Builds the facet structure for counter-clockwise cells. Boundary facets
    /// lying on a side of the bounding box get the matching marker.
    pub fn new(vertices: Vec<Point>, cells: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mut geometry = Vec::with_capacity(cells.len());
        for (t, cell) in cells.iter().enumerate() {
            if let Some(&v) = cell.iter().find(|&&v| v >= vertices.len()) {
                return Err(MeshError::BadVertex { cell: t, vertex: v });
            }
            let verts = [vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]];
            match CellGeometry::new(verts) {
                Some(g) => geometry.push(g),
                None => {
                    let [a, b, c] = verts;
                    let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
                    return Err(MeshError::DegenerateCell { cell: t, area });
                }
            }
        }

        let mut lookup: HashMap<[usize; 2], usize> = HashMap::with_capacity(cells.len() * 2);
        let mut facets = Vec::new();
        let mut facet_cells: Vec<(usize, Option<usize>)> = Vec::new();
        let mut cell_facets = Vec::with_capacity(cells.len());
        for (t, cell) in cells.iter().enumerate() {
            let mut local = [0usize; 3];
            for (i, slot) in local.iter_mut().enumerate() {
                let a = cell[(i + 1) % 3];
                let b = cell[(i + 2) % 3];
                let key = [a.min(b), a.max(b)];
                let f = *lookup.entry(key).or_insert_with(|| {
                    facets.push(key);
                    facet_cells.push((t, None));
                    facets.len() - 1
                });
                if facet_cells[f].0 != t {
                    if facet_cells[f].1.is_some() {
                        return Err(MeshError::NonManifold(f));
                    }
                    facet_cells[f].1 = Some(t);
                }
                *slot = f;
            }
            cell_facets.push(local);
        }

        let mut cell_signs = Vec::with_capacity(cells.len());
        for (t, local) in cell_facets.iter().enumerate() {
            let mut signs = [0.0; 3];
            for i in 0..3 {
                let n = facet_normal_of(&vertices, facets[local[i]]);
                let out = geometry[t].normals[i];
                signs[i] = if n[0] * out[0] + n[1] * out[1] > 0.0 { 1.0 } else { -1.0 };
            }
            cell_signs.push(signs);
        }

        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let tol = 1e-12 * scale.max(1.0);
        let markers = facets
            .iter()
            .zip(&facet_cells)
            .map(|(f, cells)| {
                if cells.1.is_some() {
                    return None;
                }
                let (a, b) = (vertices[f[0]], vertices[f[1]]);
                let on = |k: usize, val: f64| (a[k] - val).abs() < tol && (b[k] - val).abs() < tol;
                if on(0, lo[0]) {
                    Some(BoundaryMarker::Left)
                } else if on(0, hi[0]) {
                    Some(BoundaryMarker::Right)
                } else if on(1, lo[1]) {
                    Some(BoundaryMarker::Bottom)
                } else if on(1, hi[1]) {
                    Some(BoundaryMarker::Top)
                } else {
                    None
                }
            })
            .collect();

        Ok(Self { vertices, cells, facets, cell_facets, cell_signs, facet_cells, markers, geometry, bbox: [lo, hi] })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn cell(&self, t: usize) -> [usize; 3] {
        self.cells[t]
    }

    pub fn facets(&self) -> &[[usize; 2]] {
        &self.facets
    }

    pub fn facet(&self, f: usize) -> [usize; 2] {
        self.facets[f]
    }

    /// Global facets of cell `t`, local facet `i` opposite local vertex `i`.
    pub fn cell_facets(&self, t: usize) -> [usize; 3] {
        self.cell_facets[t]
    }

    /// `+1` where the global facet normal is outward for cell `t`.
    pub fn cell_facet_signs(&self, t: usize) -> [f64; 3] {
        self.cell_signs[t]
    }

    pub fn facet_cells(&self, f: usize) -> (usize, Option<usize>) {
        self.facet_cells[f]
    }

    pub fn is_boundary_facet(&self, f: usize) -> bool {
        self.facet_cells[f].1.is_none()
    }

    pub fn facet_marker(&self, f: usize) -> Option<BoundaryMarker> {
        self.markers[f]
    }

    pub fn geometry(&self, t: usize) -> &CellGeometry {
        &self.geometry[t]
    }

    pub fn bounding_box(&self) -> [Point; 2] {
        self.bbox
    }

    pub fn facet_length(&self, f: usize) -> f64 {
        let [a, b] = self.facets[f];
        let (p, q) = (self.vertices[a], self.vertices[b]);
        ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt()
    }

    pub fn facet_midpoint(&self, f: usize) -> Point {
        let [a, b] = self.facets[f];
        let (p, q) = (self.vertices[a], self.vertices[b]);
        [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
    }

    /// Global unit normal of facet `f`.
    pub fn facet_normal(&self, f: usize) -> Point {
        facet_normal_of(&self.vertices, self.facets[f])
    }

    /// Area, vertex coordinates and outward normals of cell `t`.
    pub fn cell_geometry(&self, t: usize) -> CellGeometry {
        self.geometry[t]
    }

    pub fn boundary_facets(&self, filter: BoundaryFilter) -> Vec<usize> {
        (0..self.facets.len())
            .filter(|&f| self.is_boundary_facet(f))
            .filter(|&f| match filter {
                BoundaryFilter::All => true,
                BoundaryFilter::Marker(m) => self.markers[f] == Some(m),
            })
            .collect()
    }

    /// Vertices lying on at least one boundary facet, sorted.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        let mut on = vec![false; self.vertices.len()];
        for f in self.boundary_facets(BoundaryFilter::All) {
            for v in self.facets[f] {
                on[v] = true;
            }
        }
        (0..on.len()).filter(|&v| on[v]).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    pub fn size(&self) -> MeshSize {
        let (mut h_max, mut h_min) = (0.0f64, f64::INFINITY);
        for g in &self.geometry {
            let d = g.diameter();
            h_max = h_max.max(d);
            h_min = h_min.min(d);
        }
        MeshSize { h_max, h_min }
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        for (t, g) in self.geometry.iter().enumerate() {
            if !(g.area > 0.0) {
                return Err(format!("cell {t} has area {}", g.area));
            }
        }
        let mut incidence = vec![Vec::new(); self.facets.len()];
        for t in 0..self.cells.len() {
            for i in 0..3 {
                incidence[self.cell_facets[t][i]].push(self.cell_signs[t][i]);
            }
        }
        for (f, signs) in incidence.iter().enumerate() {
            match signs.len() {
                1 => {
                    if self.markers[f].is_none() {
                        return Err(format!("boundary facet {f} has no marker"));
                    }
                }
                2 => {
                    if signs[0] + signs[1] != 0.0 {
                        return Err(format!("interior facet {f} has signs {signs:?}"));
                    }
                }
                n => return Err(format!("facet {f} has {n} incident cells")),
            }
        }
        let euler = self.vertices.len() as i64 - self.facets.len() as i64 + self.cells.len() as i64;
        if euler != 1 {
            return Err(format!("Euler characteristic V - E + T = {euler}"));
        }
        Ok(())
    }
}

fn facet_normal_of(vertices: &[Point], facet: [usize; 2]) -> Point {
    let (p, q) = (vertices[facet[0]], vertices[facet[1]]);
    let t = [q[0] - p[0], q[1] - p[1]];
    let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
    [t[1] / len, -t[0] / len]
}

/// Uniform `nx x ny` grid of squares, each cut along its lower-left to
/// upper-right diagonal.
pub fn structured_rect_mesh(nx: usize, ny: usize, x_range: (f64, f64), y_range: (f64, f64)) -> Result<Mesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::BadSubdivision { nx, ny });
    }
    for (a, b) in [x_range, y_range] {
        if !(b > a) {
            return Err(MeshError::EmptyRange(a, b));
        }
    }
    let (x0, x1) = x_range;
    let (y0, y1) = y_range;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        // exact end points, no accumulated drift
        let y = if j == ny { y1 } else { y0 + (y1 - y0) * j as f64 / ny as f64 };
        for i in 0..=nx {
            let x = if i == nx { x1 } else { x0 + (x1 - x0) * i as f64 / nx as f64 };
            vertices.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }
    Mesh::new(vertices, cells)
}

/// Unit-square mesh with `n x n` squares.
pub fn unit_square(n: usize) -> Result<Mesh, MeshError> {
    structured_rect_mesh(n, n, (0.0, 1.0), (0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid_counts() {
        let m = unit_square(1).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_facets(), 5);
        assert_eq!(m.num_cells(), 2);
        assert_eq!(m.boundary_facets(BoundaryFilter::All).len(), 4);
        m.validate().unwrap();
    }

    #[test]
    fn two_by_two_counts_and_euler() {
        let m = unit_square(2).unwrap();
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_facets(), (3 * 8 + 8) / 2);
        assert_eq!(m.num_cells(), 8);
        assert_eq!(m.num_vertices() + m.num_cells() - m.num_facets(), 1);
        assert_eq!(m.boundary_facets(BoundaryFilter::All).len(), 8);
        for t in 0..m.num_cells() {
            assert!((m.cell_geometry(t).area - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(unit_square(0), Err(MeshError::BadSubdivision { .. })));
        assert!(matches!(structured_rect_mesh(2, 2, (1.0, 1.0), (0.0, 1.0)), Err(MeshError::EmptyRange(..))));
        assert!(matches!(structured_rect_mesh(2, 2, (0.0, 1.0), (2.0, 1.0)), Err(MeshError::EmptyRange(..))));
        let flipped = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]]);
        assert!(matches!(flipped, Err(MeshError::DegenerateCell { .. })));
    }

    #[test]
    fn reference_cell_geometry() {
        let g = CellGeometry::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(g.area, 0.5);
        for n in g.normals {
            assert!(((n[0] * n[0] + n[1] * n[1]).sqrt() - 1.0).abs() < 1e-15);
        }
        // facet opposite vertex 0 is the hypotenuse
        let s = 0.5f64.sqrt();
        assert!((g.normals[0][0] - s).abs() < 1e-15 && (g.normals[0][1] - s).abs() < 1e-15);
        assert_eq!(g.normals[1], [-1.0, 0.0]);
        assert_eq!(g.normals[2], [0.0, -1.0]);
    }

    #[test]
    fn area_partition_and_mesh_size() {
        for n in [1, 3, 8, 17] {
            let m = unit_square(n).unwrap();
            assert!((m.total_area() - 1.0).abs() < 1e-13);
            let h = m.size();
            assert!((h.h_max - 2f64.sqrt() / n as f64).abs() < 1e-14);
            assert!(h.h_min > 0.0 && h.h_min <= h.h_max);
        }
    }

    #[test]
    fn boundary_filter_by_marker() {
        let m = structured_rect_mesh(2, 1, (0.0, 1.0), (0.0, 1.0)).unwrap();
        assert_eq!(m.boundary_facets("bottom".parse().unwrap()).len(), 2);
        assert_eq!(m.boundary_facets("left".parse().unwrap()).len(), 1);
        assert_eq!(m.boundary_facets(BoundaryFilter::All).len(), 6);
        assert!(matches!("front".parse::<BoundaryFilter>(), Err(MeshError::UnknownMarker(_))));
    }

    #[test]
    fn interior_signs_cancel_and_normals_are_global() {
        let m = structured_rect_mesh(5, 3, (0.0, 0.5), (0.0, 1.0)).unwrap();
        m.validate().unwrap();
        for f in 0..m.num_facets() {
            let [a, b] = m.facet(f);
            assert!(a < b);
            if let (t0, Some(t1)) = m.facet_cells(f) {
                let s0 = m.cell_facet_signs(t0)[m.cell_facets(t0).iter().position(|&g| g == f).unwrap()];
                let s1 = m.cell_facet_signs(t1)[m.cell_facets(t1).iter().position(|&g| g == f).unwrap()];
                assert_eq!(s0 + s1, 0.0);
            }
        }
    }
}
