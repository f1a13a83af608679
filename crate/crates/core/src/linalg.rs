//! CSR matrices, triplet assembly, constraint handling and the direct solver.

use std::fmt;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use thiserror::Error;

/// Relative residual every direct solve must reach.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStage {
    CahnHilliard,
    Current,
    NavierStokes,
    Auxiliary,
}

impl fmt::Display for SolveStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CahnHilliard => "CH",
            Self::Current => "current",
            Self::NavierStokes => "NS",
            Self::Auxiliary => "auxiliary",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("entry ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    OutOfRange { row: usize, col: usize, nrows: usize, ncols: usize },
    #[error("conflicting essential values for DOF {dof}: {first} vs {second}")]
    ConflictingConstraint { dof: usize, first: f64, second: f64 },
    #[error("essential DOF {0} out of range")]
    ConstraintOutOfRange(usize),
    #[error("mean constraint weight vector is zero")]
    ZeroWeights,
    #[error("mean constraint of length {len} at offset {offset} exceeds system size {n}")]
    WeightsOutOfRange { offset: usize, len: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{stage} system is singular{detail}")]
    Singular { stage: SolveStage, detail: String },
    #[error("{stage} solve residual {residual:e} exceeds {RESIDUAL_TOL:e}")]
    Residual { stage: SolveStage, residual: f64 },
    #[error("cannot condense: {0}")]
    Condensation(String),
}

/// Triplet accumulator. Duplicates are summed on `finalize`.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row, col, value));
    }

    /// Scatters a dense local matrix through the given DOF maps.
    pub fn add_local(&mut self, rows: &[usize], cols: &[usize], local: &[f64]) {
        debug_assert_eq!(local.len(), rows.len() * cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                self.entries.push((r, c, local[i * cols.len() + j]));
            }
        }
    }

    /// Adds `scale * m` with its top-left corner at `(row_off, col_off)`.
    pub fn add_matrix(&mut self, m: &SparseMatrix, row_off: usize, col_off: usize, scale: f64) {
        for r in 0..m.nrows {
            for (c, v) in m.row(r) {
                self.entries.push((row_off + r, col_off + c, scale * v));
            }
        }
    }

    /// Adds `scale * m^T` with its top-left corner at `(row_off, col_off)`.
    pub fn add_transpose(&mut self, m: &SparseMatrix, row_off: usize, col_off: usize, scale: f64) {
        for r in 0..m.nrows {
            for (c, v) in m.row(r) {
                self.entries.push((row_off + c, col_off + r, scale * v));
            }
        }
    }

    pub fn extend(&mut self, other: TripletBuilder) {
        self.entries.extend(other.entries);
    }

    pub fn finalize(self) -> Result<SparseMatrix, LinalgError> {
        finalize(self.nrows, self.ncols, self.entries)
    }
}

/// Builds a CSR matrix from triplets, summing duplicates. Explicit zeros are
/// kept so that matrices built from the same loops share one pattern.
pub fn finalize(nrows: usize, ncols: usize, entries: Vec<(usize, usize, f64)>) -> Result<SparseMatrix, LinalgError> {
    if let Some(&(row, col, _)) = entries.iter().find(|&&(r, c, _)| r >= nrows || c >= ncols) {
        return Err(LinalgError::OutOfRange { row, col, nrows, ncols });
    }
    // bucket by row, then sort each (short) row by column
    let mut start = vec![0usize; nrows + 1];
    for &(r, _, _) in &entries {
        start[r + 1] += 1;
    }
    for r in 0..nrows {
        start[r + 1] += start[r];
    }
    let mut next = start.clone();
    let mut bucket = vec![(0usize, 0.0f64); entries.len()];
    for (r, c, v) in entries {
        bucket[next[r]] = (c, v);
        next[r] += 1;
    }
    let mut row_ptr = vec![0usize; nrows + 1];
    let mut col_idx = Vec::with_capacity(bucket.len());
    let mut values: Vec<f64> = Vec::with_capacity(bucket.len());
    for r in 0..nrows {
        let row = &mut bucket[start[r]..start[r + 1]];
        row.sort_unstable_by_key(|e| e.0);
        let first = col_idx.len();
        for &(c, v) in row.iter() {
            if col_idx.len() > first && *col_idx.last().unwrap() == c {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
            }
        }
        row_ptr[r + 1] = col_idx.len();
    }
    Ok(SparseMatrix { nrows, ncols, row_ptr, col_idx, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut t = TripletBuilder::new(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push(i, j, v);
                }
            }
        }
        t.finalize().expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.nrows).map(|r| x[r] * self.row(r).map(|(c, v)| v * y[c]).sum::<f64>()).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        t.add_transpose(self, 0, 0, 1.0);
        t.finalize().expect("transpose in range")
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// Linear combination `sum s_k A_k` of equally sized matrices.
    pub fn combine(terms: &[(f64, &SparseMatrix)]) -> Result<Self, LinalgError> {
        let (nrows, ncols) = terms.first().map_or((0, 0), |(_, m)| (m.nrows, m.ncols));
        let mut t = TripletBuilder::new(nrows, ncols);
        for &(s, m) in terms {
            if (m.nrows, m.ncols) != (nrows, ncols) {
                return Err(LinalgError::Dimension(format!("{}x{} vs {}x{}", m.nrows, m.ncols, nrows, ncols)));
            }
            t.add_matrix(m, 0, 0, s);
        }
        t.finalize()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `max |A - A^T|`.
    pub fn symmetry_defect(&self) -> f64 {
        let at = self.transpose();
        let diff = Self::combine(&[(1.0, self), (-1.0, &at)]).expect("square matrix");
        diff.max_abs()
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialConstraint {
    pub dof: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanConstraint {
    /// First row of the constrained block.
    pub offset: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    /// Size before any multiplier rows were appended.
    pub primal_size: usize,
    pub essential: Vec<EssentialConstraint>,
    pub means: Vec<MeanConstraint>,
}

impl LinearSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Result<Self, LinalgError> {
        if matrix.nrows() != matrix.ncols() || rhs.len() != matrix.nrows() {
            return Err(LinalgError::Dimension(format!(
                "{}x{} matrix with rhs of length {}",
                matrix.nrows(),
                matrix.ncols(),
                rhs.len()
            )));
        }
        let primal_size = rhs.len();
        Ok(Self { matrix, rhs, primal_size, essential: Vec::new(), means: Vec::new() })
    }

    pub fn size(&self) -> usize {
        self.rhs.len()
    }
}

/// Replaces constrained rows by identity rows carrying the prescribed value
/// and moves the constrained columns to the right-hand side, so symmetric
/// blocks stay symmetric.
pub fn apply_essential(
    mut system: LinearSystem,
    constraints: &[EssentialConstraint],
) -> Result<LinearSystem, LinalgError> {
    let n = system.size();
    let mut prescribed: Vec<Option<f64>> = vec![None; n];
    for &EssentialConstraint { dof, value } in constraints {
        if dof >= n {
            return Err(LinalgError::ConstraintOutOfRange(dof));
        }
        match prescribed[dof] {
            Some(first) if first != value => {
                return Err(LinalgError::ConflictingConstraint { dof, first, second: value });
            }
            _ => prescribed[dof] = Some(value),
        }
    }
    let m = &mut system.matrix;
    for r in 0..n {
        let span = m.row_ptr[r]..m.row_ptr[r + 1];
        if let Some(value) = prescribed[r] {
            for k in span {
                m.values[k] = if m.col_idx[k] == r { 1.0 } else { 0.0 };
            }
            system.rhs[r] = value;
        } else {
            for k in span {
                if let Some(value) = prescribed[m.col_idx[k]] {
                    system.rhs[r] -= m.values[k] * value;
                    m.values[k] = 0.0;
                }
            }
        }
    }
    // constrained rows lacking a stored diagonal
    let missing: Vec<usize> = (0..n).filter(|&r| prescribed[r].is_some() && m.get(r, r) != 1.0).collect();
    if !missing.is_empty() {
        let mut t = TripletBuilder::with_capacity(n, n, m.nnz() + missing.len());
        t.add_matrix(m, 0, 0, 1.0);
        for r in missing {
            t.push(r, r, 1.0);
        }
        *m = t.finalize()?;
    }
    system.essential.extend_from_slice(constraints);
    Ok(system)
}

/// Appends one Lagrange multiplier enforcing `w . x[offset..offset+len] = 0`.
/// The multiplier is returned as the last unknown.
pub fn append_mean_constraint(
    system: LinearSystem,
    offset: usize,
    weights: &[f64],
) -> Result<LinearSystem, LinalgError> {
    if weights.iter().all(|&w| w == 0.0) {
        return Err(LinalgError::ZeroWeights);
    }
    let n = system.size();
    if offset + weights.len() > system.primal_size {
        return Err(LinalgError::WeightsOutOfRange { offset, len: weights.len(), n: system.primal_size });
    }
    let mut t = TripletBuilder::with_capacity(n + 1, n + 1, system.matrix.nnz() + 2 * weights.len());
    t.add_matrix(&system.matrix, 0, 0, 1.0);
    for (i, &w) in weights.iter().enumerate() {
        t.push(offset + i, n, w);
        t.push(n, offset + i, w);
    }
    // explicit zero keeps a structural diagonal for the pivoting heuristics
    t.push(n, n, 0.0);
    let mut rhs = system.rhs;
    rhs.push(0.0);
    let mut means = system.means;
    means.push(MeanConstraint { offset, weights: weights.to_vec() });
    Ok(LinearSystem { matrix: t.finalize()?, rhs, primal_size: system.primal_size, essential: system.essential, means })
}

/// Exact elimination of small DOF blocks that couple only to retained DOFs
/// (cell bubbles), with what is needed to recover them afterwards.
#[derive(Debug, Clone)]
pub struct Condensation {
    reduced_index: Vec<usize>,
    kept: Vec<usize>,
    blocks: Vec<CondensedBlock>,
}

#[derive(Debug, Clone)]
struct CondensedBlock {
    dofs: Vec<usize>,
    /// Row-major inverse of the block's own matrix.
    inv: Vec<f64>,
    rhs: Vec<f64>,
    /// Couplings of each block row to retained DOFs, in reduced numbering.
    couplings: Vec<Vec<(usize, f64)>>,
}

impl Condensation {
    /// Index of `dof` in the reduced system, if it was kept.
    pub fn reduced(&self, dof: usize) -> Option<usize> {
        self.reduced_index.get(dof).copied().filter(|&i| i != usize::MAX)
    }

    pub fn reduced_size(&self) -> usize {
        self.kept.len()
    }

    /// Full solution from the reduced one.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.reduced_index.len()];
        for (i, &k) in self.kept.iter().enumerate() {
            x[k] = reduced[i];
        }
        for b in &self.blocks {
            let k = b.dofs.len();
            let z: Vec<f64> =
                (0..k).map(|i| b.rhs[i] - b.couplings[i].iter().map(|&(c, v)| v * reduced[c]).sum::<f64>()).collect();
            for i in 0..k {
                x[b.dofs[i]] = (0..k).map(|j| b.inv[i * k + j] * z[j]).sum();
            }
        }
        x
    }
}

fn invert_small(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv: Vec<f64> = (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| m[i * k + col].abs().total_cmp(&m[j * k + col].abs()))?;
        if !(m[piv * k + col].abs() > 1e-14 * scale) {
            return None;
        }
        for j in 0..k {
            m.swap(col * k + j, piv * k + j);
            inv.swap(col * k + j, piv * k + j);
        }
        let d = m[col * k + col];
        for j in 0..k {
            m[col * k + j] /= d;
            inv[col * k + j] /= d;
        }
        for i in (0..k).filter(|&i| i != col) {
            let f = m[i * k + col];
            for j in 0..k {
                m[i * k + j] -= f * m[col * k + j];
                inv[i * k + j] -= f * inv[col * k + j];
            }
        }
    }
    Some(inv)
}

/// Eliminates each block of `blocks` by its Schur complement. Blocks must be
/// disjoint and couple only to themselves and to retained DOFs; multiplier
/// rows are appended afterwards.
pub fn condense(system: &LinearSystem, blocks: &[Vec<usize>]) -> Result<(LinearSystem, Condensation), LinalgError> {
    if !system.means.is_empty() {
        return Err(LinalgError::Condensation("mean constraints must be appended after condensing".into()));
    }
    let a = &system.matrix;
    let n = a.nrows;
    let mut owner = vec![usize::MAX; n];
    for (k, b) in blocks.iter().enumerate() {
        for &d in b {
            if d >= n || owner[d] != usize::MAX {
                return Err(LinalgError::Condensation(format!("DOF {d} out of range or in two blocks")));
            }
            owner[d] = k;
        }
    }
    let mut reduced_index = vec![usize::MAX; n];
    let mut kept = Vec::with_capacity(n);
    for i in 0..n {
        if owner[i] == usize::MAX {
            reduced_index[i] = kept.len();
            kept.push(i);
        }
    }
    let m = kept.len();
    let at = a.transpose();
    let mut t = TripletBuilder::with_capacity(m, m, a.nnz() + 81 * blocks.len());
    for (ri, &r) in kept.iter().enumerate() {
        for (c, v) in a.row(r) {
            if owner[c] == usize::MAX {
                t.push(ri, reduced_index[c], v);
            }
        }
    }
    let mut rhs: Vec<f64> = kept.iter().map(|&r| system.rhs[r]).collect();
    let mut condensed = Vec::with_capacity(blocks.len());
    for (k, b) in blocks.iter().enumerate() {
        let kk = b.len();
        let mut abb = vec![0.0; kk * kk];
        let mut abr = vec![Vec::new(); kk];
        let mut arb = vec![Vec::new(); kk];
        for (i, &d) in b.iter().enumerate() {
            for (c, v) in a.row(d) {
                if owner[c] == k {
                    let j = b.iter().position(|&e| e == c).unwrap();
                    abb[i * kk + j] += v;
                } else if owner[c] == usize::MAX {
                    abr[i].push((reduced_index[c], v));
                } else {
                    return Err(LinalgError::Condensation(format!("DOF {d} couples to another block at {c}")));
                }
            }
            for (r, v) in at.row(d) {
                if owner[r] == usize::MAX {
                    arb[i].push((reduced_index[r], v));
                }
            }
        }
        let inv = invert_small(&abb, kk)
            .ok_or_else(|| LinalgError::Condensation(format!("singular block at DOF {}", b[0])))?;
        let fb: Vec<f64> = b.iter().map(|&d| system.rhs[d]).collect();
        // G = A_bb^-1 A_br merged by column, then S = A_rb G
        let mut g: Vec<Vec<(usize, f64)>> = vec![Vec::new(); kk];
        for (i, gi) in g.iter_mut().enumerate() {
            for j in 0..kk {
                let w = inv[i * kk + j];
                for &(c, z) in &abr[j] {
                    match gi.iter_mut().find(|e| e.0 == c) {
                        Some(e) => e.1 += w * z,
                        None => gi.push((c, w * z)),
                    }
                }
            }
        }
        for i in 0..kk {
            let y: f64 = (0..kk).map(|j| inv[i * kk + j] * fb[j]).sum();
            for &(r, x) in &arb[i] {
                rhs[r] -= x * y;
                for &(c, z) in &g[i] {
                    t.push(r, c, -x * z);
                }
            }
        }
        condensed.push(CondensedBlock { dofs: b.clone(), inv, rhs: fb, couplings: abr });
    }
    let essential = system
        .essential
        .iter()
        .filter_map(|e| {
            let dof = reduced_index[e.dof];
            (dof != usize::MAX).then_some(EssentialConstraint { dof, value: e.value })
        })
        .collect();
    let reduced = LinearSystem { matrix: t.finalize()?, rhs, primal_size: m, essential, means: Vec::new() };
    Ok((reduced, Condensation { reduced_index, kept, blocks: condensed }))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual `|Ax - b| / |b|` (absolute when `b = 0`).
pub fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm2(b);
    if nb > 0.0 {
        norm2(&r) / nb
    } else {
        norm2(&r)
    }
}

struct CachedNumeric {
    values: Vec<f64>,
    lu: Lu<usize, f64>,
}

/// Sparse LU solver that keeps the symbolic analysis while the pattern is
/// unchanged and the numeric factors while the values are unchanged.
pub struct DirectSolver {
    stage: SolveStage,
    pattern: Option<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
    numeric: Option<CachedNumeric>,
    factorizations: usize,
    last_residual: f64,
}

impl fmt::Debug for DirectSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DirectSolver")
            .field("stage", &self.stage)
            .field("factorizations", &self.factorizations)
            .field("last_residual", &self.last_residual)
            .finish()
    }
}

impl DirectSolver {
    pub fn new(stage: SolveStage) -> Self {
        Self { stage, pattern: None, numeric: None, factorizations: 0, last_residual: 0.0 }
    }

    pub fn stage(&self) -> SolveStage {
        self.stage
    }

    /// Number of numeric factorizations performed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn last_residual(&self) -> f64 {
        self.last_residual
    }

    fn singular(&self, detail: impl Into<String>) -> LinalgError {
        LinalgError::Singular { stage: self.stage, detail: detail.into() }
    }

    fn factor(&mut self, a: &SparseMatrix) -> Result<(), LinalgError> {
        if let Some(num) = &self.numeric {
            if let Some((rp, ci, _)) = &self.pattern {
                if rp == &a.row_ptr && ci == &a.col_idx && num.values == a.values {
                    return Ok(());
                }
            }
        }
        let reuse = matches!(&self.pattern, Some((rp, ci, _)) if rp == &a.row_ptr && ci == &a.col_idx);
        // the CSR arrays of A are the CSC arrays of A^T; solves use the transpose
        let sym_ref = SymbolicSparseColMatRef::new_checked(a.ncols, a.nrows, &a.row_ptr, None, &a.col_idx);
        if !reuse {
            let symbolic = SymbolicLu::try_new(sym_ref).map_err(|e| self.singular(format!(" (symbolic: {e:?})")))?;
            self.pattern = Some((a.row_ptr.clone(), a.col_idx.clone(), symbolic));
        }
        let symbolic = self.pattern.as_ref().unwrap().2.clone();
        let mat = SparseColMatRef::new(sym_ref, &a.values);
        self.numeric = None;
        let lu = Lu::try_new_with_symbolic(symbolic, mat).map_err(|e| self.singular(format!(" ({e:?})")))?;
        self.factorizations += 1;
        self.numeric = Some(CachedNumeric { values: a.values.clone(), lu });
        Ok(())
    }

    fn apply(&self, rhs: &mut [f64]) {
        let lu = &self.numeric.as_ref().expect("factorized").lu;
        lu.solve_transpose_in_place(faer::ColMut::from_slice_mut(rhs));
    }

    /// Solves `A x = b`, refining iteratively if the first residual misses
    /// the tolerance.
    pub fn solve(&mut self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if a.nrows != a.ncols || b.len() != a.nrows {
            return Err(LinalgError::Dimension(format!("{}x{} with rhs {}", a.nrows, a.ncols, b.len())));
        }
        if a.nrows == 0 {
            return Ok(Vec::new());
        }
        self.factor(a)?;
        let x = {
            let this = &*self;
            refine(a, b, |r| {
                this.apply(r);
                Ok(())
            })
        };
        self.finish(x)
    }

    fn finish(&mut self, outcome: Result<(Vec<f64>, f64), LinalgError>) -> Result<Vec<f64>, LinalgError> {
        let (x, res) = match outcome {
            Ok(v) => v,
            Err(e) => {
                self.numeric = None;
                return Err(e);
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            self.numeric = None;
            return Err(self.singular(" (non-finite solution)"));
        }
        self.last_residual = res;
        if res > RESIDUAL_TOL || !res.is_finite() {
            self.numeric = None;
            if res > 1e-2 || !res.is_finite() {
                return Err(self.singular(format!(" (residual {res:e})")));
            }
            return Err(LinalgError::Residual { stage: self.stage, residual: res });
        }
        Ok(x)
    }

    /// Solves a system carrying one appended mean constraint.
    ///
    /// The dense border row ruins the fill-reducing ordering, so the border
    /// is eliminated by hand: with `A^ = A + s e_p e_p^T` nonsingular,
    /// `x = A^-1 b + s x_p A^-1 e_p - xi A^-1 w` and the scalars `x_p`,
    /// `xi` follow from a 2x2 system.
    fn solve_bordered(&mut self, k: &SparseMatrix, b: &[f64], mean: &MeanConstraint) -> Result<Vec<f64>, LinalgError> {
        let n = k.nrows - 1;
        let (j, _) = mean
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .ok_or(LinalgError::ZeroWeights)?;
        let p = mean.offset + j;
        let scale = k.row(p).filter(|&(c, _)| c < n).map(|(_, v)| v.abs()).fold(0.0, f64::max);
        let s = if scale > 0.0 { scale } else { 1.0 };
        let mut t = TripletBuilder::with_capacity(n, n, k.nnz());
        for r in 0..n {
            for (c, v) in k.row(r) {
                if c < n {
                    t.push(r, c, v);
                }
            }
        }
        t.push(p, p, s);
        let pinned = t.finalize()?;
        self.factor(&pinned)?;

        let mut w = vec![0.0; n];
        w[mean.offset..mean.offset + mean.weights.len()].copy_from_slice(&mean.weights);
        let mut g = vec![0.0; n];
        g[p] = 1.0;
        self.apply(&mut g);
        let mut h = w.clone();
        self.apply(&mut h);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (wg, wh) = (dot(&w, &g), dot(&w, &h));
        // [1 - s g_p, h_p; s w.g, -w.h] [x_p; xi] = [(x_b)_p; c - w.x_b]
        let m = [[1.0 - s * g[p], h[p]], [s * wg, -wh]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let size = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(det.abs() > 1e-14 * size * size) {
            self.numeric = None;
            return Err(self.singular(" (degenerate mean constraint)"));
        }
        let x = {
            let this = &*self;
            refine(k, b, |r| {
                let c = r[n];
                let xb = &mut r[..n];
                this.apply(xb);
                let r0 = xb[p];
                let r1 = c - dot(&w, xb);
                let xp = (r0 * m[1][1] - m[0][1] * r1) / det;
                let xi = (m[0][0] * r1 - m[1][0] * r0) / det;
                for i in 0..n {
                    xb[i] += s * xp * g[i] - xi * h[i];
                }
                r[n] = xi;
                Ok(())
            })
        };
        self.finish(x)
    }

    pub fn solve_system(&mut self, system: &LinearSystem) -> Result<Vec<f64>, LinalgError> {
        self.solve_rhs(system, &system.rhs)
    }

    /// Solves with the matrix and constraint layout of `system` but a
    /// different right-hand side.
    pub fn solve_rhs(&mut self, system: &LinearSystem, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let a = &system.matrix;
        if a.nrows != a.ncols || rhs.len() != a.nrows {
            return Err(LinalgError::Dimension(format!("{}x{} with rhs {}", a.nrows, a.ncols, rhs.len())));
        }
        match system.means.as_slice() {
            [mean] if system.size() == system.primal_size + 1 => self.solve_bordered(a, rhs, mean),
            _ => self.solve(a, rhs),
        }
    }
}

/// Applies `inverse` in place and refines up to three times while the
/// relative residual misses the tolerance.
fn refine(
    a: &SparseMatrix,
    b: &[f64],
    inverse: impl Fn(&mut [f64]) -> Result<(), LinalgError>,
) -> Result<(Vec<f64>, f64), LinalgError> {
    let mut x = b.to_vec();
    inverse(&mut x)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Ok((x, f64::NAN));
    }
    let mut res = relative_residual(a, &x, b);
    for _ in 0..3 {
        if res <= RESIDUAL_TOL {
            break;
        }
        let ax = a.mul_vec(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        inverse(&mut r)?;
        let cand: Vec<f64> = x.iter().zip(&r).map(|(p, q)| p + q).collect();
        let cres = relative_residual(a, &cand, b);
        if !(cres < res) {
            break;
        }
        x = cand;
        res = cres;
    }
    Ok((x, res))
}

/// One-shot direct solve.
pub fn solve_direct(system: &LinearSystem, stage: SolveStage) -> Result<Vec<f64>, LinalgError> {
    DirectSolver::new(stage).solve_system(system)
}
