//! Classification of small matrices and reduction to canonical forms.
//!
//! A [`Chart`] records a unitary conjugation `X ↦ U*XU` followed by a real
//! affine map acting on Cartesian parts,
//! `H + iG ↦ (r₁₁H + r₁₂G + t₁I) + i(r₂₁H + r₂₂G + t₂I)`. Both steps commute
//! with compressions, so a dilation of the reduced pair pulls back to the
//! original one.
//!
//! Canonical targets:
//!
//! | case | canonical form |
//! |---|---|
//! | `Normal2` | `diag(1, 0)` |
//! | `Normal3Collinear { r }` | `diag(1, r, 0)` |
//! | `Normal3Generic` | `diag(1, i, 0)` |
//! | `NonNormal2` | `C = [[i, 1], [1, −i]]` |
//! | `NonNormal2PlusReducing` | `(rI₂ + C) ⊕ [0]` if `r > 1`, else `C ⊕ [μ̂]` |

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::matcore::{
    c64, cartesian, herm_eig, orthonormalize_columns, recompose, CMatrix, LinalgError, C64,
};
use crate::numrange::{disk_generator, theta_grid, SupportOracle, DEFAULT_POINTS};

/// Default classification tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReduceError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("case {0} has no reduction")]
    NotReducible(CaseTag),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("chart is not invertible (det {det:e})")]
    Singular { det: f64 },
    #[error("numerical failure in {stage} (residual {residual:e})")]
    NumericalFailure { stage: &'static str, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseTag {
    Scalar,
    Normal2,
    Normal3Collinear { r: f64 },
    Normal3Generic,
    NonNormal2,
    /// `A ≅ A₀ ⊕ [μ]`; `r = |μ̂|` is the modulus of μ after the disk chart of
    /// `A₀`. When `r ≤ 1` the point lies inside W(A₀) and the pair is handled
    /// on `A₀` alone.
    NonNormal2PlusReducing { mu: C64, r: f64 },
    Unsupported,
}

impl CaseTag {
    pub fn name(&self) -> &'static str {
        match self {
            CaseTag::Scalar => "scalar",
            CaseTag::Normal2 => "normal2",
            CaseTag::Normal3Collinear { .. } => "normal3_collinear",
            CaseTag::Normal3Generic => "normal3_generic",
            CaseTag::NonNormal2 => "nonnormal2",
            CaseTag::NonNormal2PlusReducing { .. } => "nonnormal2_plus_reducing",
            CaseTag::Unsupported => "unsupported",
        }
    }

    pub fn is_supported(&self) -> bool {
        !matches!(self, CaseTag::Unsupported)
    }
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseTag::Normal3Collinear { r } => write!(f, "{}(r={r})", self.name()),
            CaseTag::NonNormal2PlusReducing { mu, r } => write!(f, "{}(mu={mu}, r={r})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

/// Unitary conjugation followed by an invertible real-affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub linear: [[f64; 2]; 2],
    pub shift: [f64; 2],
    pub unitary: CMatrix,
}

const ID2: [[f64; 2]; 2] = [[1.0, 0.0], [0.0, 1.0]];

fn mat2_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat2_vec(a: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

impl Chart {
    pub fn identity(dim: usize) -> Self {
        Self { linear: ID2, shift: [0.0; 2], unitary: CMatrix::identity(dim) }
    }

    pub fn from_unitary(u: CMatrix) -> Self {
        Self { linear: ID2, shift: [0.0; 2], unitary: u }
    }

    pub fn affine(dim: usize, linear: [[f64; 2]; 2], shift: [f64; 2]) -> Result<Self, ReduceError> {
        let c = Self { linear, shift, unitary: CMatrix::identity(dim) };
        if !c.is_invertible() {
            return Err(ReduceError::Singular { det: c.det() });
        }
        Ok(c)
    }

    /// `z ↦ αz + β`.
    pub fn complex_affine(dim: usize, alpha: C64, beta: C64) -> Result<Self, ReduceError> {
        Self::affine(dim, [[alpha.re, -alpha.im], [alpha.im, alpha.re]], [beta.re, beta.im])
    }

    pub fn dim(&self) -> usize {
        self.unitary.rows()
    }

    pub fn det(&self) -> f64 {
        let r = &self.linear;
        r[0][0] * r[1][1] - r[0][1] * r[1][0]
    }

    pub fn is_invertible(&self) -> bool {
        let norm2: f64 = self.linear.iter().flatten().map(|x| x * x).sum();
        self.det().abs() > 1e-12 * norm2
    }

    /// Frobenius norm of the linear part.
    pub fn linear_norm(&self) -> f64 {
        self.linear.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// The chart that applies `self` first and then `next`.
    pub fn then(&self, next: &Chart) -> Chart {
        let linear = mat2_mul(&next.linear, &self.linear);
        let moved = mat2_vec(&next.linear, self.shift);
        Chart {
            linear,
            shift: [moved[0] + next.shift[0], moved[1] + next.shift[1]],
            unitary: self.unitary.matmul(&next.unitary),
        }
    }

    pub fn inverse(&self) -> Result<Chart, ReduceError> {
        if !self.is_invertible() {
            return Err(ReduceError::Singular { det: self.det() });
        }
        let d = self.det();
        let r = &self.linear;
        let inv = [[r[1][1] / d, -r[0][1] / d], [-r[1][0] / d, r[0][0] / d]];
        let s = mat2_vec(&inv, self.shift);
        Ok(Chart { linear: inv, shift: [-s[0], -s[1]], unitary: self.unitary.adjoint() })
    }

    /// The affine part alone; valid for matrices of any size.
    pub fn apply_affine(&self, x: &CMatrix) -> Result<CMatrix, LinalgError> {
        let (h, g) = cartesian(x)?;
        let r = &self.linear;
        let h2 = (&h.scale_real(r[0][0]) + &g.scale_real(r[0][1])).add_identity(c64(self.shift[0], 0.0));
        let g2 = (&h.scale_real(r[1][0]) + &g.scale_real(r[1][1])).add_identity(c64(self.shift[1], 0.0));
        Ok(recompose(&h2, &g2))
    }

    /// Full action on a matrix living in the chart's space.
    pub fn apply(&self, x: &CMatrix) -> Result<CMatrix, LinalgError> {
        let n = x.require_square()?;
        if n != self.dim() {
            return Err(LinalgError::Shape(format!("chart acts on {}x{}, got {n}x{n}", self.dim(), self.dim())));
        }
        self.apply_affine(&x.congruence(&self.unitary))
    }

    pub fn apply_point(&self, z: C64) -> C64 {
        let v = mat2_vec(&self.linear, [z.re, z.im]);
        c64(v[0] + self.shift[0], v[1] + self.shift[1])
    }

    /// Support function of the image `f(W)` at `θ`, given the support
    /// function `h` of `W`.
    pub fn image_support(&self, h: impl Fn(f64) -> f64, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let r = &self.linear;
        let v = [r[0][0] * c + r[1][0] * s, r[0][1] * c + r[1][1] * s];
        let len = v[0].hypot(v[1]);
        len * h(v[1].atan2(v[0])) + c * self.shift[0] + s * self.shift[1]
    }
}

fn scale_of(a: &CMatrix) -> f64 {
    1.0 + a.frobenius_norm()
}

pub fn is_normal(a: &CMatrix, tol: f64) -> bool {
    let f = a.frobenius_norm();
    let comm = &a.matmul(&a.adjoint()) - &a.adjoint_mul(a);
    comm.frobenius_norm() <= tol * (1.0 + f * f)
}

/// Returns `c` when `A = cI` within tolerance.
pub fn scalar_value(a: &CMatrix, tol: f64) -> Option<C64> {
    let n = a.rows();
    let c = a.trace() / n as f64;
    let dev = a.add_identity(-c).frobenius_norm();
    (dev <= tol * scale_of(a)).then_some(c)
}

/// Eigenvalues of a 2×2 matrix from the quadratic formula.
pub fn eig2(a: &CMatrix) -> [C64; 2] {
    let c = (a[(0, 0)] + a[(1, 1)]) * 0.5;
    let d = (a[(0, 0)] - a[(1, 1)]) * 0.5;
    let s = (d * d + a[(0, 1)] * a[(1, 0)]).sqrt();
    [c + s, c - s]
}

/// Eigenvalues of a 3×3 matrix: Cardano on the characteristic polynomial,
/// then a few Newton steps.
pub fn eig3(a: &CMatrix) -> [C64; 3] {
    let m = |i: usize, j: usize| a[(i, j)];
    let tr = m(0, 0) + m(1, 1) + m(2, 2);
    let minors = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0) + m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0) + m(1, 1) * m(2, 2)
        - m(1, 2) * m(2, 1);
    let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
        + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    // λ³ + c2λ² + c1λ + c0
    let (c2, c1, c0) = (-tr, minors, -det);
    let shift = -c2 / 3.0;
    let p = c1 - c2 * c2 / 3.0;
    let q = c2 * c2 * c2 * (2.0 / 27.0) - c2 * c1 / 3.0 + c0;
    let disc = (q * q / 4.0 + p * p * p / 27.0).sqrt();
    let w1 = -q / 2.0 + disc;
    let w2 = -q / 2.0 - disc;
    let w = if w1.norm() >= w2.norm() { w1 } else { w2 };
    let u = w.cbrt();
    let omega = C64::from_polar(1.0, 2.0 * PI / 3.0);
    let mut roots = [C64::new(0.0, 0.0); 3];
    let mut uk = u;
    for root in roots.iter_mut() {
        let y = if uk.norm() == 0.0 { C64::new(0.0, 0.0) } else { uk - p / (uk * 3.0) };
        *root = y + shift;
        uk *= omega;
    }
    let poly = |z: C64| ((z + c2) * z + c1) * z + c0;
    let dpoly = |z: C64| (z * 3.0 + c2 * 2.0) * z + c1;
    for root in roots.iter_mut() {
        for _ in 0..4 {
            let f = poly(*root);
            let df = dpoly(*root);
            if df.norm() == 0.0 {
                break;
            }
            let next = *root - f / df;
            if poly(next).norm() < f.norm() {
                *root = next;
            } else {
                break;
            }
        }
    }
    roots
}

fn eigenvalues(a: &CMatrix) -> Vec<C64> {
    match a.rows() {
        1 => vec![a[(0, 0)]],
        2 => eig2(a).to_vec(),
        _ => eig3(a).to_vec(),
    }
}

/// Descending by real part, then by imaginary part.
fn desc(a: &C64, b: &C64) -> Ordering {
    b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal).then(b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal))
}

/// Orthonormal eigenvectors of a normal matrix, one column per entry of
/// `eigs`, followed by the Rayleigh quotients in that frame.
fn normal_frame(a: &CMatrix, eigs: &[C64]) -> Result<(CMatrix, Vec<C64>), ReduceError> {
    let n = a.rows();
    let cluster_tol = 1e-6 * scale_of(a);
    let mut assigned = vec![false; n];
    let mut u = CMatrix::zeros(n, n);
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> = (i..n).filter(|&j| !assigned[j] && (eigs[j] - eigs[i]).norm() <= cluster_tol).collect();
        let mean = members.iter().map(|&j| eigs[j]).sum::<C64>() / members.len() as f64;
        let d = a.add_identity(-mean);
        let e = herm_eig(&d.adjoint_mul(&d))?;
        for (slot, &j) in members.iter().enumerate() {
            u.set_column(j, &e.vector(n - 1 - slot));
            assigned[j] = true;
        }
    }
    let u = orthonormalize_columns(&u).ok_or(ReduceError::NumericalFailure { stage: "eigenvector frame", residual: f64::NAN })?;
    let d = a.congruence(&u);
    let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| d[(i, j)].norm_sqr()).sum::<f64>().sqrt();
    if off > 1e-8 * scale_of(a) {
        return Err(ReduceError::NumericalFailure { stage: "eigenvector frame", residual: off });
    }
    let diag = (0..n).map(|i| d[(i, i)]).collect();
    Ok((u, diag))
}

/// Eigenvalues and frame of a normal matrix, with eigenvalues refined from
/// the frame.
fn normal_spectrum(a: &CMatrix) -> Result<(CMatrix, Vec<C64>), ReduceError> {
    let mut eigs = eigenvalues(a);
    eigs.sort_by(desc);
    normal_frame(a, &eigs)
}

/// Ordering `(p, m, q)` of three collinear points with `p`, `q` the extreme
/// points along the line and `r ∈ [0, 1]` the position of `m`.
fn collinear_order(eigs: &[C64]) -> ([usize; 3], f64) {
    let pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
    let &(i, j, mid) = pairs
        .iter()
        .max_by(|x, y| (eigs[x.0] - eigs[x.1]).norm().partial_cmp(&(eigs[y.0] - eigs[y.1]).norm()).unwrap_or(Ordering::Equal))
        .unwrap();
    let dir = eigs[j] - eigs[i];
    let forward = if dir.re.abs() > 1e-12 * dir.norm() { dir.re > 0.0 } else { dir.im > 0.0 };
    let (p, q) = if forward { (j, i) } else { (i, j) };
    let r = ((eigs[mid] - eigs[q]) / (eigs[p] - eigs[q])).re.clamp(0.0, 1.0);
    ([p, mid, q], r)
}

fn is_collinear(eigs: &[C64], tol: f64) -> bool {
    let spread = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| (eigs[i] - eigs[j]).norm()).fold(0.0, f64::max);
    let cross = ((eigs[1] - eigs[0]) * (eigs[2] - eigs[0]).conj()).im;
    cross.abs() <= tol * spread * spread
}

/// A joint eigenvector of `A` and `A*` in dimension 3.
#[derive(Debug, Clone)]
struct ReducingSplit {
    mu: C64,
    /// Unitary with the joint eigenvector as its last column.
    frame: CMatrix,
    /// Compression of `A` to the orthogonal complement.
    a0: CMatrix,
}

fn rayleigh(a: &CMatrix, x: &[C64]) -> C64 {
    let ax = a.matmul(&CMatrix::column_vector(x));
    x.iter().zip(ax.as_slice()).map(|(xi, yi)| xi.conj() * yi).sum()
}

fn reducing_split(a: &CMatrix, tol: f64) -> Result<Option<ReducingSplit>, ReduceError> {
    let n = a.rows();
    let scale = scale_of(a);
    let mut best: Option<(f64, C64, Vec<C64>)> = None;
    for lam in eigenvalues(a) {
        let mut mu = lam;
        let mut x = Vec::new();
        for _ in 0..3 {
            let d = a.add_identity(-mu);
            let m = &d.adjoint_mul(&d) + &d.matmul(&d.adjoint());
            x = herm_eig(&m)?.vector(n - 1);
            mu = rayleigh(a, &x);
        }
        let xv = CMatrix::column_vector(&x);
        let r1 = (&a.matmul(&xv) - &xv.scale(mu)).frobenius_norm();
        let r2 = (&a.adjoint().matmul(&xv) - &xv.scale(mu.conj())).frobenius_norm();
        let res = r1.max(r2);
        if best.as_ref().is_none_or(|b| res < b.0) {
            best = Some((res, mu, x));
        }
    }
    let Some((res, mu, x)) = best else { return Ok(None) };
    if res > tol * scale {
        return Ok(None);
    }
    // Complete x with the two coordinate vectors it overlaps least.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| x[i].norm().partial_cmp(&x[j].norm()).unwrap_or(Ordering::Equal));
    let mut basis = CMatrix::zeros(n, n);
    basis.set_column(0, &x);
    for (col, &i) in idx.iter().take(n - 1).enumerate() {
        basis[(i, col + 1)] = c64(1.0, 0.0);
    }
    let q = orthonormalize_columns(&basis).ok_or(ReduceError::NumericalFailure { stage: "reducing frame", residual: res })?;
    let mut frame = CMatrix::zeros(n, n);
    for j in 0..n - 1 {
        frame.set_column(j, &q.column(j + 1));
    }
    frame.set_column(n - 1, &q.column(0));
    let a0 = a.congruence(&frame).block(0, 0, n - 1, n - 1);
    Ok(Some(ReducingSplit { mu, frame, a0 }))
}

/// Unitary `U` with `U*·N·U = T` for two nilpotent 2×2 matrices of equal norm.
pub fn schur_match(n: &CMatrix, target: &CMatrix) -> Result<CMatrix, ReduceError> {
    let qn = nilpotent_frame(n)?;
    let qt = nilpotent_frame(target)?;
    Ok(qn.matmul(&qt.adjoint()))
}

/// `Q` with `Q*NQ = [[0, β], [0, 0]]`, `β > 0`.
fn nilpotent_frame(n: &CMatrix) -> Result<CMatrix, ReduceError> {
    let q1 = herm_eig(&n.adjoint_mul(n))?.vector(1);
    let mut q2 = vec![-q1[1].conj(), q1[0].conj()];
    let nq2 = n.matmul(&CMatrix::column_vector(&q2));
    let beta: C64 = q1.iter().zip(nq2.as_slice()).map(|(a, b)| a.conj() * b).sum();
    if beta.norm() <= 1e-12 * scale_of(n) {
        return Err(ReduceError::DegenerateGeometry("nilpotent part vanishes".into()));
    }
    let phase = beta.conj() / beta.norm();
    for z in q2.iter_mut() {
        *z *= phase;
    }
    let mut q = CMatrix::zeros(2, 2);
    q.set_column(0, &q1);
    q.set_column(1, &q2);
    Ok(q)
}

/// Chart taking a non-normal 2×2 matrix to `C`.
fn disk_chart(a0: &CMatrix, tol: f64) -> Result<Chart, ReduceError> {
    let scale = scale_of(a0);
    let c = a0.trace() * 0.5;
    let ap = a0.add_identity(-c);
    let det = ap[(0, 0)] * ap[(1, 1)] - ap[(0, 1)] * ap[(1, 0)];
    let lam = (-det).sqrt();
    let alpha = lam.norm();
    let phi = if alpha > 0.0 { lam.arg() } else { 0.0 };
    let fro = ap.frobenius_norm();
    let b2 = fro * fro - 2.0 * alpha * alpha;
    if b2 <= (tol * scale).powi(2) {
        return Err(ReduceError::DegenerateGeometry(format!("ellipse minor axis {:e} vanishes", b2.max(0.0).sqrt())));
    }
    let b = b2.sqrt();
    let ae = (alpha * alpha + b2 / 4.0).sqrt();
    let be = b / 2.0;
    let (s, co) = phi.sin_cos();
    let linear = [[co / ae, s / ae], [-s / be, co / be]];
    let t = mat2_vec(&linear, [c.re, c.im]);
    let affine = Chart::affine(2, linear, [-t[0], -t[1]])?;
    let n = affine.apply_affine(a0)?;
    let u = schur_match(&n, &disk_generator())?;
    Ok(Chart { unitary: u, ..affine })
}

/// Classifies `A` into one of the supported cases.
pub fn classify(a: &CMatrix, tol: f64) -> CaseTag {
    classify_inner(a, tol).unwrap_or(CaseTag::Unsupported)
}

fn classify_inner(a: &CMatrix, tol: f64) -> Result<CaseTag, ReduceError> {
    let n = match a.require_square() {
        Ok(n) => n,
        Err(_) => return Ok(CaseTag::Unsupported),
    };
    if scalar_value(a, tol).is_some() {
        return Ok(CaseTag::Scalar);
    }
    if n > 3 {
        return Ok(CaseTag::Unsupported);
    }
    if is_normal(a, tol) {
        if n == 2 {
            return Ok(CaseTag::Normal2);
        }
        let (_, eigs) = normal_spectrum(a)?;
        if is_collinear(&eigs, tol) {
            let (_, r) = collinear_order(&eigs);
            return Ok(CaseTag::Normal3Collinear { r });
        }
        return Ok(CaseTag::Normal3Generic);
    }
    if n == 2 {
        return Ok(CaseTag::NonNormal2);
    }
    let Some(split) = reducing_split(a, tol)? else { return Ok(CaseTag::Unsupported) };
    let chart0 = disk_chart(&split.a0, tol)?;
    let r = chart0.apply_point(split.mu).norm();
    Ok(CaseTag::NonNormal2PlusReducing { mu: split.mu, r })
}

/// Canonical matrix for tags whose target does not depend on a phase.
pub fn canonical_form(tag: &CaseTag) -> Option<CMatrix> {
    let z = c64(0.0, 0.0);
    match *tag {
        CaseTag::Normal2 => Some(CMatrix::from_real_diag(&[1.0, 0.0])),
        CaseTag::Normal3Collinear { r } => Some(CMatrix::from_real_diag(&[1.0, r, 0.0])),
        CaseTag::Normal3Generic => Some(CMatrix::from_diag(&[c64(1.0, 0.0), c64(0.0, 1.0), z])),
        CaseTag::NonNormal2 => Some(disk_generator()),
        CaseTag::NonNormal2PlusReducing { r, .. } if r > 1.0 => {
            Some(disk_generator().add_identity(c64(r, 0.0)).direct_sum(&CMatrix::scalar(z)))
        }
        _ => None,
    }
}

fn affine_to_diag(u: CMatrix, eigs_in_frame: &[C64], targets: &[C64]) -> Result<Chart, ReduceError> {
    let n = u.rows();
    let chart = match targets.len() {
        2 => {
            let (a1, a2) = (eigs_in_frame[0], eigs_in_frame[1]);
            let alpha = (targets[0] - targets[1]) / (a1 - a2);
            Chart::complex_affine(n, alpha, targets[1] - alpha * a2)?
        }
        _ => {
            // Real affine map sending three points to three targets.
            let d = |z: C64, w: C64| [z.re - w.re, z.im - w.im];
            let (src_a, src_b) = (d(eigs_in_frame[0], eigs_in_frame[2]), d(eigs_in_frame[1], eigs_in_frame[2]));
            let (dst_a, dst_b) = (d(targets[0], targets[2]), d(targets[1], targets[2]));
            let m = [[src_a[0], src_b[0]], [src_a[1], src_b[1]]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
            let linear = mat2_mul(&[[dst_a[0], dst_b[0]], [dst_a[1], dst_b[1]]], &inv);
            let moved = mat2_vec(&linear, [eigs_in_frame[2].re, eigs_in_frame[2].im]);
            Chart::affine(n, linear, [targets[2].re - moved[0], targets[2].im - moved[1]])?
        }
    };
    Ok(Chart { unitary: u, ..chart })
}

fn permute_columns(u: &CMatrix, order: &[usize]) -> CMatrix {
    let mut out = CMatrix::zeros(u.rows(), u.cols());
    for (j, &src) in order.iter().enumerate() {
        out.set_column(j, &u.column(src));
    }
    out
}

/// Reduces `A` to the canonical form of `tag`, returning it with the chart.
pub fn reduce(a: &CMatrix, tag: &CaseTag) -> Result<(CMatrix, Chart), ReduceError> {
    a.require_square()?;
    let tol = DEFAULT_TOL;
    let scale = scale_of(a);
    let one = c64(1.0, 0.0);
    let zero = c64(0.0, 0.0);
    let (chart, expected) = match *tag {
        CaseTag::Scalar | CaseTag::Unsupported => return Err(ReduceError::NotReducible(*tag)),
        CaseTag::Normal2 => {
            let (u, d) = normal_spectrum(a)?;
            if (d[0] - d[1]).norm() <= tol * scale {
                return Err(ReduceError::DegenerateGeometry("eigenvalues coincide".into()));
            }
            (affine_to_diag(u, &d, &[one, zero])?, canonical_form(tag))
        }
        CaseTag::Normal3Collinear { .. } => {
            let (u, d) = normal_spectrum(a)?;
            let (order, r) = collinear_order(&d);
            let (p, q) = (d[order[0]], d[order[2]]);
            if (p - q).norm() <= tol * scale {
                return Err(ReduceError::DegenerateGeometry("eigenvalues coincide".into()));
            }
            let u = permute_columns(&u, &order);
            let alpha = one / (p - q);
            let chart = Chart { unitary: u, ..Chart::complex_affine(3, alpha, -alpha * q)? };
            (chart, canonical_form(&CaseTag::Normal3Collinear { r }))
        }
        CaseTag::Normal3Generic => {
            let (u, d) = normal_spectrum(a)?;
            if is_collinear(&d, tol) {
                return Err(ReduceError::DegenerateGeometry("eigenvalues are collinear".into()));
            }
            (affine_to_diag(u, &d, &[one, c64(0.0, 1.0), zero])?, canonical_form(tag))
        }
        CaseTag::NonNormal2 => {
            if a.rows() != 2 {
                return Err(ReduceError::NotReducible(*tag));
            }
            (disk_chart(a, tol)?, canonical_form(tag))
        }
        CaseTag::NonNormal2PlusReducing { .. } => {
            if a.rows() != 3 {
                return Err(ReduceError::NotReducible(*tag));
            }
            let split = reducing_split(a, tol)?
                .ok_or(ReduceError::DegenerateGeometry("no reducing eigenvalue".into()))?;
            let c0 = disk_chart(&split.a0, tol)?;
            let lifted = Chart {
                linear: c0.linear,
                shift: c0.shift,
                unitary: split.frame.matmul(&c0.unitary.direct_sum(&CMatrix::identity(1))),
            };
            let mu_hat = lifted.apply_point(split.mu);
            let r = mu_hat.norm();
            if r > 1.0 {
                let phase = -mu_hat.conj() / r;
                let u3 = schur_match(&disk_generator().scale(phase), &disk_generator())?;
                let second = Chart { unitary: u3.direct_sum(&CMatrix::identity(1)), ..Chart::complex_affine(3, phase, -phase * mu_hat)? };
                let chart = lifted.then(&second);
                (chart, canonical_form(&CaseTag::NonNormal2PlusReducing { mu: split.mu, r }))
            } else {
                (lifted, Some(disk_generator().direct_sum(&CMatrix::scalar(mu_hat))))
            }
        }
    };
    let reduced = chart.apply(a)?;
    let expected = expected.ok_or(ReduceError::NotReducible(*tag))?;
    let tol_canon = 1e-10 * scale * (1.0 + chart.linear_norm());
    let dev = (&reduced - &expected).frobenius_norm();
    if dev > tol_canon {
        return Err(ReduceError::NumericalFailure { stage: "canonical form", residual: dev });
    }
    if matches!(tag, CaseTag::NonNormal2 | CaseTag::NonNormal2PlusReducing { .. }) {
        disk_check(&reduced.block(0, 0, 2, 2).add_identity(-reduced.block(0, 0, 2, 2).trace() * 0.5))?;
    }
    Ok((expected, chart))
}

/// Checks that W(D) is the unit disk via `h_D ≡ 1`.
fn disk_check(d: &CMatrix) -> Result<(), ReduceError> {
    let oracle = SupportOracle::new(d)?;
    let mut worst = 0.0_f64;
    for t in theta_grid(DEFAULT_POINTS) {
        worst = worst.max((oracle.at(t)? - 1.0).abs());
    }
    if worst > 1e-8 {
        return Err(ReduceError::NumericalFailure { stage: "disk support check", residual: worst });
    }
    Ok(())
}

/// Lifts a dilation of the reduced pair back to `A`: `W = (I_k ⊗ U)·V`.
pub fn pullback_isometry(v: &CMatrix, chart: &Chart, a: &CMatrix, b: &CMatrix) -> Result<CMatrix, ReduceError> {
    let m = a.require_square()?;
    let n = b.require_square()?;
    if chart.dim() != m || v.cols() != n || !v.rows().is_multiple_of(m) {
        return Err(LinalgError::Shape(format!(
            "isometry {}x{} incompatible with A {m}x{m}, B {n}x{n}",
            v.rows(),
            v.cols()
        ))
        .into());
    }
    let k = v.rows() / m;
    let w = chart.unitary.kron_identity(k).matmul(v);
    let tol = 1e-6 * (1.0 + b.frobenius_norm());
    let iso = w.adjoint_mul(&w).add_identity(c64(-1.0, 0.0)).frobenius_norm();
    if iso > tol {
        return Err(ReduceError::NumericalFailure { stage: "pullback isometry", residual: iso });
    }
    let comp = (&a.kron_identity(k).congruence(&w) - b).frobenius_norm();
    if comp > tol {
        return Err(ReduceError::NumericalFailure { stage: "pullback compression", residual: comp });
    }
    Ok(w)
}
