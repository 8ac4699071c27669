//! Dense complex linear algebra and spin-1/2 state primitives.
//!
//! Basis convention: each spin uses the ordered basis `{|0⟩, |1⟩}` with
//! `σ_z = |0⟩⟨0| − |1⟩⟨1|`. Multi-spin states are tensor products with site 1
//! (the central spin) as the leftmost factor, so site `s` of an `n`-spin
//! register lives in bit `n − s` of a basis index.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-8;
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QStateError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("invalid site set {sites:?} for {total_spins} spins")]
    InvalidSites { sites: Vec<usize>, total_spins: usize },
    #[error("matrix is not Hermitian (max |m - m†| = {0:e})")]
    NotHermitian(f64),
    #[error("trace {0} differs from 1")]
    BadTrace(f64),
    #[error("minimum eigenvalue {0:e} is negative")]
    NotPositive(f64),
}

/// Dense square complex matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be at least 1");
        Self {
            dim,
            data: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self, QStateError> {
        if dim == 0 {
            return Err(QStateError::EmptyMatrix);
        }
        if data.len() != dim * dim {
            return Err(QStateError::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QStateError::NonFinite);
        }
        Ok(Self { dim, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input. Intended for literals.
    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "rows must form a square matrix");
            data.extend_from_slice(row);
        }
        Self::from_vec(dim, data).expect("finite literal matrix")
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "rows must form a square matrix");
            data.extend(row.iter().map(|&x| C64::new(x, 0.0)));
        }
        Self::from_vec(dim, data).expect("finite literal matrix")
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                m.data[r * dim + c] = f(r, c);
            }
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = C64::new(d, 0.0);
        }
        m
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) state vector.
    pub fn projector(psi: &[C64]) -> Self {
        Self::from_fn(psi.len(), |r, c| psi[r] * psi[c].conj())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).collect()
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn kron(&self, other: &Self) -> Self {
        let (a, b) = (self.dim, other.dim);
        let n = a * b;
        let mut out = Self::zeros(n);
        for i in 0..a {
            for j in 0..a {
                let s = self.data[i * a + j];
                if s == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..b {
                    for l in 0..b {
                        out.data[(i * b + k) * n + j * b + l] = s * other.data[k * b + l];
                    }
                }
            }
        }
        out
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `max |m − m†|` over all entries.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim;
        let mut err: f64 = 0.0;
        for r in 0..n {
            for c in r..n {
                err = err.max((self.data[r * n + c] - self.data[c * n + r].conj()).norm());
            }
        }
        err
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix product dimension mismatch");
        let n = self.dim;
        let mut out = ComplexMatrix::zeros(n);
        for r in 0..n {
            let row = &mut out.data[r * n..(r + 1) * n];
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for (o, b) in row.iter_mut().zip(&rhs.data[k * n..(k + 1) * n]) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix sum dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix difference dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{})", self.dim, self.dim)?;
        for r in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|c| {
                    let z = self[(r, c)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

/// A Hermitian, unit-trace, positive-semidefinite matrix.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(try_from = "ComplexMatrix", into = "ComplexMatrix")]
pub struct DensityMatrix(ComplexMatrix);

impl DensityMatrix {
    /// Validates all three density-matrix invariants.
    pub fn try_new(m: ComplexMatrix) -> Result<Self, QStateError> {
        if !m.is_finite() {
            return Err(QStateError::NonFinite);
        }
        let herm = m.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(QStateError::NotHermitian(herm));
        }
        let tr = m.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(QStateError::BadTrace(tr.re));
        }
        let (evals, _) = hermitian_eig(&m)?;
        if evals[0] < -POSITIVITY_TOL {
            return Err(QStateError::NotPositive(evals[0]));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix produced by a trusted, state-preserving computation.
    pub(crate) fn from_matrix_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    pub fn pure(psi: &[C64]) -> Result<Self, QStateError> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let scaled: Vec<C64> = psi.iter().map(|z| z / norm.sqrt()).collect();
        Self::try_new(ComplexMatrix::projector(&scaled))
    }

    /// `|+⟩⟨+|` with `|+⟩ = (|0⟩ + |1⟩)/√2`.
    pub fn plus() -> Self {
        Self(ComplexMatrix::from_real_rows(&[&[0.5, 0.5], &[0.5, 0.5]]))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64))
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self(self.0.kron(&other.0))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Number of spins when the dimension is a power of two.
    pub fn n_spins(&self) -> Option<usize> {
        let d = self.dim();
        d.is_power_of_two().then(|| d.trailing_zeros() as usize)
    }

    pub fn purity(&self) -> f64 {
        // tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.0.as_slice().iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn expectation(&self, op: &ComplexMatrix) -> C64 {
        (&self.0 * op).trace()
    }
}

impl TryFrom<ComplexMatrix> for DensityMatrix {
    type Error = QStateError;
    fn try_from(m: ComplexMatrix) -> Result<Self, QStateError> {
        Self::try_new(m)
    }
}

impl From<DensityMatrix> for ComplexMatrix {
    fn from(d: DensityMatrix) -> Self {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
    Plus,
    Minus,
}

/// Single-spin Pauli and ladder operators.
///
/// `σ⁻ = |1⟩⟨0|` lowers the energy of `H = (ω/2)σ_z` (|0⟩ carries +ω/2), and
/// `σ⁺ = |0⟩⟨1|` is its adjoint.
pub fn pauli(axis: Axis) -> ComplexMatrix {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match axis {
        Axis::X => ComplexMatrix::from_rows(&[&[z, one], &[one, z]]),
        Axis::Y => ComplexMatrix::from_rows(&[&[z, -i], &[i, z]]),
        Axis::Z => ComplexMatrix::from_rows(&[&[one, z], &[z, -one]]),
        Axis::Plus => ComplexMatrix::from_rows(&[&[z, one], &[z, z]]),
        Axis::Minus => ComplexMatrix::from_rows(&[&[z, z], &[one, z]]),
    }
}

/// Bit position of 1-based `site` inside a basis index of an `n`-spin register.
#[inline]
pub fn site_bit(site: usize, total_spins: usize) -> usize {
    total_spins - site
}

/// Places a single-spin operator at `site` (1-based, site 1 leftmost).
pub fn embed(op: &ComplexMatrix, site: usize, total_spins: usize) -> Result<ComplexMatrix, QStateError> {
    if op.dim() != 2 {
        return Err(QStateError::DimensionMismatch {
            expected: 2,
            found: op.dim(),
        });
    }
    if site == 0 || site > total_spins {
        return Err(QStateError::InvalidSites {
            sites: vec![site],
            total_spins,
        });
    }
    let dim = 1usize << total_spins;
    let bit = site_bit(site, total_spins);
    let mask = 1usize << bit;
    let mut out = ComplexMatrix::zeros(dim);
    for r in 0..dim {
        for c in 0..dim {
            if (r & !mask) != (c & !mask) {
                continue;
            }
            out[(r, c)] = op[((r >> bit) & 1, (c >> bit) & 1)];
        }
    }
    Ok(out)
}

fn check_sites(keep: &[usize], total_spins: usize) -> Result<Vec<usize>, QStateError> {
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let valid = !sorted.is_empty()
        && sorted.len() == keep.len()
        && sorted.iter().all(|&s| s >= 1 && s <= total_spins);
    if valid {
        Ok(sorted)
    } else {
        Err(QStateError::InvalidSites {
            sites: keep.to_vec(),
            total_spins,
        })
    }
}

/// Reduced matrix on the kept sites (ascending order) of an arbitrary
/// `2^n × 2^n` operator. Works for non-states too, e.g. a generator output.
pub fn partial_trace_matrix(
    m: &ComplexMatrix,
    keep: &[usize],
    total_spins: usize,
) -> Result<ComplexMatrix, QStateError> {
    let full = 1usize << total_spins;
    if m.dim() != full {
        return Err(QStateError::DimensionMismatch {
            expected: full,
            found: m.dim(),
        });
    }
    let kept = check_sites(keep, total_spins)?;
    let kept_bits: Vec<usize> = kept.iter().map(|&s| site_bit(s, total_spins)).collect();
    let traced_bits: Vec<usize> = (1..=total_spins)
        .filter(|s| !kept.contains(s))
        .map(|s| site_bit(s, total_spins))
        .collect();

    // Expand a reduced index (kept sites, ascending = most significant first)
    // and a traced-register index into a full basis index.
    let scatter = |bits: &[usize], idx: usize| -> usize {
        let k = bits.len();
        bits.iter()
            .enumerate()
            .map(|(pos, &b)| ((idx >> (k - 1 - pos)) & 1) << b)
            .fold(0, |acc, v| acc | v)
    };

    let red = 1usize << kept.len();
    let env = 1usize << traced_bits.len();
    let mut out = ComplexMatrix::zeros(red);
    for a in 0..red {
        let fa = scatter(&kept_bits, a);
        for b in 0..red {
            let fb = scatter(&kept_bits, b);
            let mut acc = C64::new(0.0, 0.0);
            for e in 0..env {
                let fe = scatter(&traced_bits, e);
                acc += m[(fa | fe, fb | fe)];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

pub fn partial_trace(
    rho: &DensityMatrix,
    keep: &[usize],
    total_spins: usize,
) -> Result<DensityMatrix, QStateError> {
    partial_trace_matrix(rho.matrix(), keep, total_spins).map(DensityMatrix::from_matrix_unchecked)
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending, eigenvectors as columns.
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<(Vec<f64>, ComplexMatrix), QStateError> {
    let herm = m.hermiticity_error();
    if herm > HERMITIAN_TOL {
        return Err(QStateError::NotHermitian(herm));
    }
    let n = m.dim();
    if n == 1 {
        return Ok((vec![m[(0, 0)].re], ComplexMatrix::identity(1)));
    }
    if n == 2 {
        return Ok(eig_2x2(m));
    }
    let dm = DMatrix::from_fn(n, n, |r, c| m[(r, c)]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Closed form for the 2×2 case, which dominates the per-sample metric cost.
fn eig_2x2(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = m[(0, 1)];
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let radius = half.hypot(b.norm());
    let values = vec![mean - radius, mean + radius];
    if b.norm() == 0.0 {
        let vectors = if a <= d {
            ComplexMatrix::identity(2)
        } else {
            ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
        };
        return (values, vectors);
    }
    // (m − λ)v = 0 with v = (b, λ − a) up to normalization; pick the better-conditioned row.
    let column = |lambda: f64| -> [C64; 2] {
        let v1 = [b, C64::new(lambda - a, 0.0)];
        let v2 = [C64::new(lambda - d, 0.0), b.conj()];
        let n1 = v1[0].norm_sqr() + v1[1].norm_sqr();
        let n2 = v2[0].norm_sqr() + v2[1].norm_sqr();
        let (v, n) = if n1 >= n2 { (v1, n1) } else { (v2, n2) };
        let s = 1.0 / n.sqrt();
        [v[0] * s, v[1] * s]
    };
    let lo = column(values[0]);
    let hi = column(values[1]);
    let vectors = ComplexMatrix::from_rows(&[&[lo[0], hi[0]], &[lo[1], hi[1]]]);
    (values, vectors)
}

/// Sparse operator in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and exact zeros dropped.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet index out of range");
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|t| t.2 != C64::new(0.0, 0.0));
        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            dim,
            row_ptr,
            cols: merged.iter().map(|t| t.1).collect(),
            vals: merged.iter().map(|t| t.2).collect(),
        }
    }

    pub fn from_dense(m: &ComplexMatrix) -> Self {
        let n = m.dim();
        let mut triplets = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if m[(r, c)] != C64::new(0.0, 0.0) {
                    triplets.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(n, triplets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzeros of row `r` as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn dagger(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect())
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// `self · other` with both sparse.
    pub fn mul_sparse(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut triplets = Vec::new();
        for r in 0..self.dim {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    triplets.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.dim, triplets)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            dim: self.dim,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self.vals.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self::from_triplets(self.dim, self.triplets().chain(other.triplets()).collect())
    }
}
