//! Dense real symmetric linear algebra on small matrices.
//!
//! Everything downstream works on blocks of dimension at most a few tens
//! (Hermitian blocks of dimension <= 9 enter through their real symmetric
//! embedding of dimension <= 18, and the interior-point Newton system stays
//! in the low hundreds).  At that scale cyclic Jacobi is accurate to machine
//! precision and plain Cholesky is all the factorization machinery needed,
//! so this module favors robustness over asymptotic cleverness.

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n: usize,
    pub a: Vec<f64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Dense { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Dense::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(n: usize, rows: &[&[f64]]) -> Self {
        assert_eq!(rows.len(), n, "row count mismatch");
        let mut a = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "column count mismatch");
            a.extend_from_slice(r);
        }
        Dense { n, a }
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    #[inline(always)]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] += v;
    }

    /// self + c * other, dimensions must match.
    pub fn add_scaled(&mut self, other: &Dense, c: f64) {
        assert_eq!(self.n, other.n);
        for (x, y) in self.a.iter_mut().zip(other.a.iter()) {
            *x += c * *y;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for x in self.a.iter_mut() {
            *x *= c;
        }
    }

    /// Matrix product self * other.
    pub fn mul(&self, other: &Dense) -> Dense {
        let n = self.n;
        assert_eq!(n, other.n);
        let mut out = Dense::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.a[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                let row_k = &other.a[k * n..(k + 1) * n];
                let row_o = &mut out.a[i * n..(i + 1) * n];
                for (o, b) in row_o.iter_mut().zip(row_k.iter()) {
                    *o += aik * *b;
                }
            }
        }
        out
    }

    /// Frobenius inner product <self, other>.
    pub fn dot(&self, other: &Dense) -> f64 {
        assert_eq!(self.n, other.n);
        self.a.iter().zip(other.a.iter()).map(|(x, y)| x * y).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    pub fn transpose(&self) -> Dense {
        let n = self.n;
        let mut out = Dense::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.a[j * n + i] = self.a[i * n + j];
            }
        }
        out
    }

    /// (self + self^T) / 2, forcing exact symmetry after accumulated roundoff.
    pub fn symmetrize(&mut self) {
        let n = self.n;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (self.a[i * n + j] + self.a[j * n + i]);
                self.a[i * n + j] = v;
                self.a[j * n + i] = v;
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.a[i * n..(i + 1) * n];
            y[i] = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        }
        y
    }
}

/// Eigendecomposition of a real symmetric matrix.
///
/// `values` ascending; column j of `vectors` is the unit eigenvector for
/// `values[j]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Dense,
}

impl SymEigen {
    /// U f(Lambda) U^T for an elementwise spectral function `f`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Dense {
        let n = self.vectors.n;
        let u = &self.vectors;
        let mut out = Dense::zeros(n);
        for k in 0..n {
            let fk = f(self.values[k]);
            if fk == 0.0 {
                continue;
            }
            for i in 0..n {
                let uik = u.at(i, k) * fk;
                if uik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += uik * u.at(j, k);
                }
            }
        }
        out.symmetrize();
        out
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi with full eigenvector accumulation.
///
/// The input is treated as symmetric; only the symmetric part influences the
/// result. Converges to off-diagonal mass below ~1e-14 of the Frobenius norm
/// in a handful of sweeps at the dimensions used here.
pub fn sym_eigen(m: &Dense) -> SymEigen {
    let (values, vectors) = jacobi(m, true);
    SymEigen { values, vectors: vectors.expect("vectors requested") }
}

/// Eigenvalues only (ascending); skips eigenvector accumulation.
pub fn sym_eigenvalues(m: &Dense) -> Vec<f64> {
    jacobi(m, false).0
}

fn jacobi(m: &Dense, want_vectors: bool) -> (Vec<f64>, Option<Dense>) {
    let n = m.n;
    let mut a = m.clone();
    a.symmetrize();
    let mut v = if want_vectors { Some(Dense::identity(n)) } else { None };

    let frob = a.frob_norm().max(f64::MIN_POSITIVE);
    let stop = 1e-14 * frob;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.at(i, j) * a.at(i, j);
            }
        }
        if (2.0 * off).sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a.at(r, p);
                    let arq = a.at(r, q);
                    let np = c * arp - s * arq;
                    let nq = s * arp + c * arq;
                    a.set(r, p, np);
                    a.set(p, r, np);
                    a.set(r, q, nq);
                    a.set(q, r, nq);
                }
                let npp = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                let nqq = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a.set(p, p, npp);
                a.set(q, q, nqq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);

                if let Some(vm) = v.as_mut() {
                    for r in 0..n {
                        let vrp = vm.at(r, p);
                        let vrq = vm.at(r, q);
                        vm.set(r, p, c * vrp - s * vrq);
                        vm.set(r, q, s * vrp + c * vrq);
                    }
                }
            }
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a.at(i, i).partial_cmp(&a.at(j, j)).expect("finite eigenvalues"));
    let values: Vec<f64> = idx.iter().map(|&i| a.at(i, i)).collect();
    let vectors = v.map(|vm| {
        let mut out = Dense::zeros(n);
        for (col, &src) in idx.iter().enumerate() {
            for r in 0..n {
                out.set(r, col, vm.at(r, src));
            }
        }
        out
    });
    (values, vectors)
}

/// Cholesky factor L (lower triangular) of A + shift*I. None if the shifted
/// matrix is not positive definite.
pub fn cholesky(a: &Dense, shift: f64) -> Option<Dense> {
    let n = a.n;
    let mut l = Dense::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j) + if i == j { shift } else { 0.0 };
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.at(j, j));
            }
        }
    }
    Some(l)
}

/// Solve L L^T x = b given the Cholesky factor L.
pub fn chol_solve(l: &Dense, b: &[f64]) -> Vec<f64> {
    let n = l.n;
    assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l.at(i, k) * y[k];
        }
        y[i] /= l.at(i, i);
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            y[i] -= l.at(k, i) * y[k];
        }
        y[i] /= l.at(i, i);
    }
    y
}
