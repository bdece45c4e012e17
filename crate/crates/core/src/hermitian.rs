//! Complex vectors and Hermitian matrices for small beamforming problems.
//!
//! Channel vectors have at most a handful of entries and every matrix that
//! appears downstream (beamformer Grams, worst-case SINR blocks) is Hermitian
//! of dimension <= 9, so storage is dense and eigenwork goes through the real
//! symmetric embedding [[Re H, -Im H], [Im H, Re H]], which carries each
//! complex eigenvalue twice.  Constructors symmetrize their input; a grid
//! whose conjugate-asymmetry exceeds 1e-12 is rejected as a contract
//! violation rather than silently averaged away.

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{self, Dense};

/// Absolute conjugate-symmetry drift tolerated by checked constructors.
pub const HERMITIAN_DRIFT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum HermitianError {
    #[error("grid is not conjugate-symmetric: max drift {max_drift:.3e} exceeds {tol:.1e}")]
    NotHermitian { max_drift: f64, tol: f64 },
    #[error("expected {expected} entries for dimension {dim}, got {got}")]
    BadShape { dim: usize, expected: usize, got: usize },
}

// ---------------------------------------------------------------------------
// Complex vectors
// ---------------------------------------------------------------------------

/// Fixed-length complex column vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector {
    v: Vec<Complex64>,
}

impl ComplexVector {
    pub fn new(v: Vec<Complex64>) -> Self {
        ComplexVector { v }
    }

    pub fn zeros(dim: usize) -> Self {
        ComplexVector { v: vec![Complex64::new(0.0, 0.0); dim] }
    }

    /// Standard basis vector e_i.
    pub fn basis(dim: usize, i: usize) -> Self {
        assert!(i < dim, "basis index out of range");
        let mut v = Self::zeros(dim);
        v.v[i] = Complex64::new(1.0, 0.0);
        v
    }

    pub fn from_re_im(re_im: &[(f64, f64)]) -> Self {
        ComplexVector { v: re_im.iter().map(|&(r, i)| Complex64::new(r, i)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.v
    }

    pub fn norm_sq(&self) -> f64 {
        self.v.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// <self, other> = sum conj(self_i) * other_i, conjugate-linear in self.
    pub fn inner(&self, other: &ComplexVector) -> Complex64 {
        assert_eq!(self.dim(), other.dim(), "inner product dimension mismatch");
        self.v.iter().zip(other.v.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn add(&self, other: &ComplexVector) -> ComplexVector {
        assert_eq!(self.dim(), other.dim());
        ComplexVector { v: self.v.iter().zip(other.v.iter()).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &ComplexVector) -> ComplexVector {
        assert_eq!(self.dim(), other.dim());
        ComplexVector { v: self.v.iter().zip(other.v.iter()).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, c: f64) -> ComplexVector {
        ComplexVector { v: self.v.iter().map(|z| z * c).collect() }
    }

    pub fn scale_c(&self, c: Complex64) -> ComplexVector {
        ComplexVector { v: self.v.iter().map(|z| z * c).collect() }
    }
}

impl std::ops::Index<usize> for ComplexVector {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.v[i]
    }
}

// ---------------------------------------------------------------------------
// Hermitian matrices
// ---------------------------------------------------------------------------

/// Dense Hermitian matrix, both triangles stored and kept consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    a: Vec<Complex64>,
}

impl HermitianMatrix {
    /// Checked constructor from a full row-major grid.  Rejects grids whose
    /// conjugate-asymmetry exceeds [`HERMITIAN_DRIFT_TOL`]; smaller roundoff
    /// drift is averaged out by (H + H^H)/2.
    pub fn from_grid(dim: usize, grid: Vec<Complex64>) -> Result<Self, HermitianError> {
        if grid.len() != dim * dim {
            return Err(HermitianError::BadShape { dim, expected: dim * dim, got: grid.len() });
        }
        let mut max_drift = 0.0f64;
        for i in 0..dim {
            for j in i..dim {
                let drift = (grid[i * dim + j] - grid[j * dim + i].conj()).norm();
                max_drift = max_drift.max(drift);
            }
        }
        if max_drift > HERMITIAN_DRIFT_TOL {
            return Err(HermitianError::NotHermitian { max_drift, tol: HERMITIAN_DRIFT_TOL });
        }
        let mut m = HermitianMatrix { dim, a: grid };
        m.resymmetrize();
        Ok(m)
    }

    /// Unchecked constructor: symmetrizes whatever it is given.  Meant for
    /// internal products like H A H^H where drift is pure roundoff.
    pub fn from_grid_symmetrize(dim: usize, grid: Vec<Complex64>) -> Self {
        assert_eq!(grid.len(), dim * dim, "grid length mismatch");
        let mut m = HermitianMatrix { dim, a: grid };
        m.resymmetrize();
        m
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianMatrix { dim, a: vec![Complex64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.a[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.a[i * d.len() + i] = Complex64::new(v, 0.0);
        }
        m
    }

    /// Rank-one Gram matrix v v^H.
    pub fn outer(v: &ComplexVector) -> Self {
        let n = v.dim();
        let mut a = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                a.push(v[i] * v[j].conj());
            }
        }
        let mut m = HermitianMatrix { dim: n, a };
        m.resymmetrize();
        m
    }

    /// Bordered matrix [[top_left, col], [col^H, corner]].
    pub fn bordered(top_left: &HermitianMatrix, col: &ComplexVector, corner: f64) -> Self {
        let m = top_left.dim();
        assert_eq!(col.dim(), m, "border column dimension mismatch");
        let n = m + 1;
        let mut out = Self::zeros(n);
        for i in 0..m {
            for j in 0..m {
                out.a[i * n + j] = top_left.at(i, j);
            }
            out.a[i * n + m] = col[i];
            out.a[m * n + i] = col[i].conj();
        }
        out.a[m * n + m] = Complex64::new(corner, 0.0);
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.a[i * self.dim + j]
    }

    /// Sets entry (i, j) and its conjugate mirror. Diagonal entries must be
    /// real to machine drift.
    pub fn set_entry(&mut self, i: usize, j: usize, z: Complex64) {
        if i == j {
            debug_assert!(z.im.abs() <= HERMITIAN_DRIFT_TOL, "diagonal entry must be real");
            self.a[i * self.dim + i] = Complex64::new(z.re, 0.0);
        } else {
            self.a[i * self.dim + j] = z;
            self.a[j * self.dim + i] = z.conj();
        }
    }

    pub fn add_entry(&mut self, i: usize, j: usize, z: Complex64) {
        let cur = self.at(i, j);
        self.set_entry(i, j, cur + z);
    }

    fn resymmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            self.a[i * n + i] = Complex64::new(self.a[i * n + i].re, 0.0);
            for j in (i + 1)..n {
                let v = 0.5 * (self.a[i * n + j] + self.a[j * n + i].conj());
                self.a[i * n + j] = v;
                self.a[j * n + i] = v.conj();
            }
        }
    }

    pub fn add_scaled(&mut self, other: &HermitianMatrix, c: f64) {
        assert_eq!(self.dim, other.dim);
        for (x, y) in self.a.iter_mut().zip(other.a.iter()) {
            *x += c * *y;
        }
    }

    pub fn scaled(&self, c: f64) -> HermitianMatrix {
        HermitianMatrix { dim: self.dim, a: self.a.iter().map(|z| z * c).collect() }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.at(i, i).re).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn matvec(&self, x: &ComplexVector) -> ComplexVector {
        assert_eq!(x.dim(), self.dim);
        let n = self.dim;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += self.a[i * n + j] * x[j];
            }
            out.push(acc);
        }
        ComplexVector::new(out)
    }

    /// x^H H x, real for Hermitian H.
    pub fn quad_form(&self, x: &ComplexVector) -> f64 {
        x.inner(&self.matvec(x)).re
    }

    /// Real inner product <A, B> = Re tr(A^H B) = Re tr(A B) for Hermitian A, B.
    pub fn dot(&self, other: &HermitianMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.a.iter().zip(other.a.iter()).map(|(x, y)| x.conj() * y).map(|z| z.re).sum()
    }

    /// Real symmetric embedding [[Re H, -Im H], [Im H, Re H]] of dimension 2n.
    /// Its spectrum is the complex spectrum with every eigenvalue doubled.
    pub fn real_embedding(&self) -> Dense {
        let n = self.dim;
        let mut out = Dense::zeros(2 * n);
        for i in 0..n {
            for j in 0..n {
                let z = self.at(i, j);
                out.set(i, j, z.re);
                out.set(n + i, n + j, z.re);
                out.set(i, n + j, -z.im);
                out.set(n + i, j, z.im);
            }
        }
        out
    }

    /// Complex spectrum, ascending, each eigenvalue listed once.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim == 0 {
            return Vec::new();
        }
        let doubled = linalg::sym_eigenvalues(&self.real_embedding());
        // Embedded spectrum carries each eigenvalue twice; take every other
        // entry of the ascending list to undo the doubling.
        doubled.into_iter().step_by(2).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        assert!(self.dim > 0, "empty matrix has no spectrum");
        linalg::sym_eigenvalues(&self.real_embedding())[0]
    }

    /// Largest eigenvalue with a unit eigenvector whose first entry of
    /// modulus > 1e-12 is made real nonnegative.  The all-zero matrix maps to
    /// (0, e_1) by convention.
    pub fn principal_eigpair(&self) -> (f64, ComplexVector) {
        assert!(self.dim > 0, "empty matrix has no spectrum");
        if self.frob_norm() == 0.0 {
            return (0.0, ComplexVector::basis(self.dim, 0));
        }
        let n = self.dim;
        let eig = linalg::sym_eigen(&self.real_embedding());
        let top = 2 * n - 1;
        let lambda = eig.values[top];
        let mut u = Vec::with_capacity(n);
        for i in 0..n {
            u.push(Complex64::new(eig.vectors.at(i, top), eig.vectors.at(n + i, top)));
        }
        let mut u = ComplexVector::new(u);
        let nrm = u.norm();
        if nrm > 0.0 {
            u = u.scale(1.0 / nrm);
        }
        (lambda, fix_phase(u))
    }

    /// True when the smallest eigenvalue is >= -tol.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }
}

/// Rotates a vector so its first entry of modulus > 1e-12 is real nonnegative.
fn fix_phase(u: ComplexVector) -> ComplexVector {
    for i in 0..u.dim() {
        let z = u[i];
        if z.norm() > 1e-12 {
            let phase = z.conj() / z.norm();
            return u.scale_c(phase);
        }
    }
    u
}

// ---------------------------------------------------------------------------
// Block-diagonal collections
// ---------------------------------------------------------------------------

/// Ordered list of Hermitian blocks, treated as one block-diagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagMatrix {
    pub blocks: Vec<HermitianMatrix>,
}

impl BlockDiagMatrix {
    pub fn new(blocks: Vec<HermitianMatrix>) -> Self {
        BlockDiagMatrix { blocks }
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.min_eigenvalue())
            .fold(f64::INFINITY, f64::min)
    }

    /// PSD exactly when every block is PSD.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.blocks.iter().all(|b| b.is_psd(tol))
    }
}
