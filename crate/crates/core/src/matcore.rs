//! Dense complex matrices and the Hermitian spectral calculus.
//!
//! Everything downstream (support functions, charts, Choi matrices,
//! isometries) is carried by [`CMatrix`]. Hermitian eigenproblems go through a
//! cyclic complex Jacobi solver, which is accurate to a few ulps for the
//! small dimensions used here and has no external dependencies.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Sweep cap for the Jacobi eigensolver.
pub const MAX_JACOBI_SWEEPS: usize = 64;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix must have positive dimensions, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("entry buffer has {len} elements, expected {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not Hermitian (|H - H*|_F = {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },
    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, tolerance {tol:e})")]
    NotPsd { min_eig: f64, tol: f64 },
}

/// Dense complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    /// Builds a matrix from a row-major buffer, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength { rows, cols, len: data.len() });
        }
        if let Some(idx) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite { row: idx / cols, col: idx % cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        Self::from_fn(diag.len(), diag.len(), |i, j| if i == j { diag[i] } else { C64::new(0.0, 0.0) })
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), diag.len(), |i, j| if i == j { C64::new(diag[i], 0.0) } else { C64::new(0.0, 0.0) })
    }

    /// Convenience constructor from fixed-width rows; panics on empty input.
    pub fn from_rows<const N: usize>(rows: &[[C64; N]]) -> Self {
        assert!(!rows.is_empty() && N > 0);
        Self::from_fn(rows.len(), N, |i, j| rows[i][j])
    }

    pub fn scalar(z: C64) -> Self {
        Self { rows: 1, cols: 1, data: vec![z] }
    }

    /// Column vector from a slice.
    pub fn column_vector(v: &[C64]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn require_square(&self) -> Result<usize, LinalgError> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols })
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// `self + s·I`.
    pub fn add_identity(&self, s: C64) -> Self {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += s;
        }
        m
    }

    /// `(M + M*)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// `‖M − M*‖_F`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                s += (self[(i, j)] - self[(j, i)].conj()).norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[C64]) {
        for (i, z) in v.iter().enumerate() {
            self[(i, j)] = *z;
        }
    }

    /// Copies the `rows x cols` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &CMatrix) {
        assert!(r0 + b.rows <= self.rows && c0 + b.cols <= self.cols, "block out of range");
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Block-diagonal direct sum `self ⊕ other`.
    pub fn direct_sum(&self, other: &CMatrix) -> Self {
        let mut m = Self::zeros(self.rows + other.rows, self.cols + other.cols);
        m.set_block(0, 0, self);
        m.set_block(self.rows, self.cols, other);
        m
    }

    /// `I_k ⊗ self`.
    pub fn kron_identity(&self, k: usize) -> Self {
        let mut m = Self::zeros(k * self.rows, k * self.cols);
        for b in 0..k {
            m.set_block(b * self.rows, b * self.cols, self);
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Spectral norm via the top eigenvalue of `M*M`.
    pub fn spectral_norm(&self) -> f64 {
        let g = &self.adjoint() * self;
        match herm_eig(&g) {
            Ok(e) => e.values[0].max(0.0).sqrt(),
            Err(_) => self.frobenius_norm(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn matmul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch: {}x{} * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols);
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `self* · rhs` without materialising the adjoint.
    pub fn adjoint_mul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.rows, rhs.rows, "adjoint_mul shape mismatch");
        let mut out = CMatrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i].conj();
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `X* · self · X`, the compression of `self` by `X`.
    pub fn congruence(&self, x: &CMatrix) -> CMatrix {
        x.adjoint_mul(&self.matmul(x))
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> CMatrix {
        CMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| f(z)).collect() }
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6e}{:+.6e}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs)
    }
}

impl Add<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub<&CMatrix> for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert!(self.rows == rhs.rows && self.cols == rhs.cols, "add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        assert!(self.rows == rhs.rows && self.cols == rhs.cols, "sub shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_real(-1.0)
    }
}

/// PSD tolerance `1e-9·(1+‖M‖_F)`.
pub fn eps_psd(m: &CMatrix) -> f64 {
    1e-9 * (1.0 + m.frobenius_norm())
}

/// Eigen-residual tolerance `1e-12·(1+‖M‖_F)`.
pub fn tol_eig(m: &CMatrix) -> f64 {
    1e-12 * (1.0 + m.frobenius_norm())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct HermEig {
    pub dim: usize,
    /// Columns are orthonormal eigenvectors.
    pub vectors: CMatrix,
    pub values: Vec<f64>,
}

impl HermEig {
    pub fn max(&self) -> f64 {
        self.values[0]
    }

    pub fn min(&self) -> f64 {
        self.values[self.dim - 1]
    }

    /// `V·diag(f(λ))·V*`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.dim;
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = CMatrix::zeros(n, n);
        for (k, &w) in fv.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)].conj();
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.apply(|l| l)
    }

    pub fn vector(&self, k: usize) -> Vec<C64> {
        self.vectors.column(k)
    }
}

fn off_diagonal_norm(a: &CMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
///
/// The input must be Hermitian to within `1e-12·(1+‖H‖_F)`; it is symmetrised
/// before iterating. Sweeps stop once the off-diagonal Frobenius mass drops
/// below `1e-14·‖H‖_F`.
pub fn herm_eig(h: &CMatrix) -> Result<HermEig, LinalgError> {
    let n = h.require_square()?;
    let norm = h.frobenius_norm();
    let asymmetry = h.hermitian_defect();
    if asymmetry > 1e-12 * (1.0 + norm) {
        return Err(LinalgError::NotHermitian { asymmetry });
    }
    let mut a = h.hermitian_part();
    for i in 0..n {
        a[(i, i)].im = 0.0;
    }
    let mut v = CMatrix::identity(n);
    let threshold = 1e-14 * norm;

    let mut converged = n == 1 || off_diagonal_norm(&a) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_JACOBI_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        converged = off_diagonal_norm(&a) <= threshold;
    }
    if !converged {
        return Err(LinalgError::NoConvergence { sweeps, off: off_diagonal_norm(&a) });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(HermEig { dim: n, vectors, values })
}

/// One complex Jacobi rotation annihilating `a[p][q]`.
///
/// The rotation is `J = diag(1, e^{-iφ})·[[c, s], [-s, c]]` on coordinates
/// `(p, q)`, where `e^{iφ}` is the phase of `a[p][q]`; `a ← J*·a·J`, `v ← v·J`.
fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let g = apq.norm();
    if g == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    if g < 1e-300 {
        return;
    }
    let theta = (aqq - app) / (2.0 * g);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let e = apq / g;
    let ec = e.conj();
    let n = a.rows();

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c - akq * ec * s;
        a[(k, q)] = akp * s + akq * ec * c;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c - aqk * e * s;
        a[(q, k)] = apk * s + aqk * e * c;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c - vkq * ec * s;
        v[(k, q)] = vkp * s + vkq * ec * c;
    }
    a[(p, p)] = C64::new(app - t * g, 0.0);
    a[(q, q)] = C64::new(aqq + t * g, 0.0);
    a[(p, q)] = C64::new(0.0, 0.0);
    a[(q, p)] = C64::new(0.0, 0.0);
}

/// Smallest eigenvalue; the matrix is PSD iff this is `≥ -eps_psd`.
pub fn psd_gap(h: &CMatrix) -> Result<f64, LinalgError> {
    Ok(herm_eig(h)?.min())
}

/// Largest eigenvalue.
pub fn lambda_max(h: &CMatrix) -> Result<f64, LinalgError> {
    Ok(herm_eig(h)?.max())
}

/// Cartesian decomposition `B = H + iG`.
pub fn cartesian(b: &CMatrix) -> Result<(CMatrix, CMatrix), LinalgError> {
    b.require_square()?;
    let bs = b.adjoint();
    let h = (b + &bs).scale_real(0.5);
    let g = (b - &bs).scale(C64::new(0.0, -0.5));
    Ok((h, g))
}

/// `H + iG`.
pub fn recompose(h: &CMatrix, g: &CMatrix) -> CMatrix {
    h + &g.scale(C64::new(0.0, 1.0))
}

fn check_psd(e: &HermEig, tol: f64) -> Result<(), LinalgError> {
    if e.min() < -tol {
        Err(LinalgError::NotPsd { min_eig: e.min(), tol })
    } else {
        Ok(())
    }
}

/// Default pseudo-inverse cutoff `dim·2⁻⁵²·λ_max`.
pub fn default_cutoff(e: &HermEig) -> f64 {
    e.dim as f64 * f64::EPSILON * e.max().max(0.0)
}

/// Square root `S = H^{1/2}` and pseudo-inverse root `H^{-1/2}` (zero on the
/// eigenvectors whose eigenvalue is `≤ cutoff`).
///
/// Eigenvalues in `[-eps_psd, 0)` are clamped to zero; anything more negative
/// is rejected.
pub fn sqrt_and_pinv_sqrt(h: &CMatrix, cutoff: Option<f64>) -> Result<(CMatrix, CMatrix), LinalgError> {
    let e = herm_eig(h)?;
    check_psd(&e, eps_psd(h))?;
    let cutoff = cutoff.unwrap_or_else(|| default_cutoff(&e));
    let s = e.apply(|l| l.max(0.0).sqrt());
    let sinv = e.apply(|l| if l > cutoff { 1.0 / l.sqrt() } else { 0.0 });
    Ok((s, sinv))
}

/// Spectral clamp `min{K, I}`: eigenvalues of `K` are replaced by
/// `min(k_j, 1)` in `K`'s own eigenbasis.
pub fn min_with_identity(k: &CMatrix) -> Result<CMatrix, LinalgError> {
    let e = herm_eig(k)?;
    check_psd(&e, eps_psd(k))?;
    Ok(e.apply(|l| l.clamp(0.0, 1.0)))
}

/// Lower Cholesky factor of a Hermitian positive definite matrix, or `None`
/// if a non-positive pivot is met.
pub fn cholesky(h: &CMatrix) -> Option<CMatrix> {
    let n = h.rows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = h[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Inverse of a Hermitian positive definite matrix from its Cholesky factor.
pub fn cholesky_inverse(l: &CMatrix) -> CMatrix {
    let n = l.rows();
    // Linv = L^{-1} by forward substitution, column by column.
    let mut linv = CMatrix::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            for k in c..i {
                s -= l[(i, k)] * linv[(k, c)];
            }
            linv[(i, c)] = s / l[(i, i)];
        }
    }
    linv.adjoint_mul(&linv)
}

/// Orthonormalises the columns of `m` (modified Gram–Schmidt with one
/// reorthogonalisation pass). Returns `Q` with `R` implicitly having a positive
/// real diagonal, or `None` if the columns are numerically dependent.
pub fn orthonormalize_columns(m: &CMatrix) -> Option<CMatrix> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut q = m.clone();
    for j in 0..cols {
        let mut v = q.column(j);
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj: C64 = qi.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (x, a) in v.iter_mut().zip(&qi) {
                    *x -= proj * a;
                }
            }
        }
        let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nrm.is_nan() || nrm <= 1e-300 {
            return None;
        }
        let col: Vec<C64> = v.iter().map(|z| z / nrm).collect();
        q.set_column(j, &col);
    }
    debug_assert_eq!(q.rows(), rows);
    Some(q)
}
