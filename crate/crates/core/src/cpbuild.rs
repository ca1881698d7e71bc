//! Completely positive certificates for the canonical cases.
//!
//! A certificate lists the values `Φ(E_st)` of a unital map on the matrix
//! units of `M_m`, the Choi matrix `[Φ(E_st)]`, and the residuals that make it
//! a valid witness: the Choi matrix is PSD, `Σ_j Φ(E_jj) = I`, and
//! `Φ(Ã) = B̃` for the canonical matrix `Ã`.
//!
//! The diagonal systems (interval, triangle) have block-diagonal Choi
//! matrices. The disk and cone systems leave the off-diagonal value
//! `Φ(E₁₂)` free up to its Hermitian part; it is filled in by a
//! PSD completion (log-det barrier warm start, then Dykstra polishing).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use thiserror::Error;

use crate::matcore::{
    c64, cartesian, cholesky, cholesky_inverse, default_cutoff, eps_psd, herm_eig, min_with_identity,
    psd_gap, sqrt_and_pinv_sqrt, CMatrix, LinalgError, C64,
};
use crate::normform::{canonical_form, CaseTag};
use crate::numrange::{disk_generator, grid_min_refined, includes, theta_grid, DEFAULT_POINTS};

pub const DYKSTRA_MAX_ITER: usize = 10_000;
pub const DYKSTRA_TOL: f64 = 1e-9;
/// Largest tolerated `‖C‖ − 1` before the contraction is clamped.
pub const CONTRACTION_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CpError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("range not included: {check} fails with gap {gap:e}")]
    NotIncluded { check: &'static str, gap: f64 },
    #[error("input is not Hermitian (imaginary part {defect:e})")]
    NotHermitian { defect: f64 },
    #[error("contraction overshoots the unit ball by {overshoot:e}")]
    ContractionOvershoot { overshoot: f64 },
    #[error("PSD completion stopped after {iterations} iterations with gap {gap:e}")]
    MaxIterations { iterations: usize, gap: f64 },
    #[error("numerical failure in {stage} (residual {residual:e})")]
    NumericalFailure { stage: &'static str, residual: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BasisLabel {
    E11,
    E22,
    E33,
    /// `E₁₂ + E₂₁`
    E12Sym,
    E12,
    E13,
    E23,
}

impl BasisLabel {
    pub fn name(&self) -> &'static str {
        match self {
            BasisLabel::E11 => "E11",
            BasisLabel::E22 => "E22",
            BasisLabel::E33 => "E33",
            BasisLabel::E12Sym => "E12+E21",
            BasisLabel::E12 => "E12",
            BasisLabel::E13 => "E13",
            BasisLabel::E23 => "E23",
        }
    }
}

/// Where the cone certificate's `P` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PSource {
    /// `P = min{K, I}` satisfied every check.
    SpectralClamp,
    /// The clamp violated the envelope inequality; `P` was re-solved jointly
    /// with the corner completion.
    LmiRepair,
}

/// Every intermediate inequality of the cone construction, as PSD gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeDiagnostics {
    pub r: f64,
    /// Scaled tolerance `1e−9·(1+‖B‖_F)` the gaps are compared against.
    pub tolerance: f64,
    /// `min λ_min(H ∓ √(r²−1)·G)`.
    pub wedge_gap: f64,
    /// `min_{|t|≤t₀} λ_min(I − cos t(H − rI) − sin t·G)`.
    pub cap_gap: f64,
    pub contraction_overshoot: f64,
    pub contraction_residual: f64,
    /// `min_t λ_min((1 + r cos t)K − cos t·H − sin t·G)`.
    pub k_envelope_gap: f64,
    /// Same with `P = min{K, I}`.
    pub clamp_envelope_gap: f64,
    /// Same with the `P` actually used.
    pub envelope_gap: f64,
    pub pencil_gap: f64,
    pub p_source: PSource,
}

impl ConeDiagnostics {
    /// True when the literal chain (with `P = min{K, I}`) holds throughout.
    pub fn literal_chain_holds(&self) -> bool {
        let t = -self.tolerance;
        self.wedge_gap >= t && self.cap_gap >= t && self.k_envelope_gap >= t && self.clamp_envelope_gap >= t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpCertificate {
    pub case: CaseTag,
    /// `m`, the size of the canonical matrix.
    pub input_dim: usize,
    /// `n`, the size of `B`.
    pub output_dim: usize,
    pub basis_values: BTreeMap<BasisLabel, CMatrix>,
    pub choi: CMatrix,
    pub psd_gap: f64,
    pub unital_residual: f64,
    pub restriction_residual: f64,
    pub cone: Option<ConeDiagnostics>,
}

impl CpCertificate {
    /// `Φ(E_st)` read off the Choi matrix.
    pub fn block(&self, s: usize, t: usize) -> CMatrix {
        let n = self.output_dim;
        self.choi.block(s * n, t * n, n, n)
    }

    /// `Φ(X) = Σ x_st Φ(E_st)`.
    pub fn evaluate(&self, x: &CMatrix) -> CMatrix {
        let n = self.output_dim;
        let mut out = CMatrix::zeros(n, n);
        for s in 0..self.input_dim {
            for t in 0..self.input_dim {
                if x[(s, t)] != c64(0.0, 0.0) {
                    out += &self.block(s, t).scale(x[(s, t)]);
                }
            }
        }
        out
    }
}

/// Kraus factors `R_i` (`n × m`) of a unital CP map `Φ(X) = Σ R_i X R_i*`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    pub factors: Vec<CMatrix>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl KrausSet {
    pub fn multiplicity(&self) -> usize {
        self.factors.len()
    }

    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.output_dim, self.output_dim);
        for r in &self.factors {
            out += &r.matmul(x).matmul(&r.adjoint());
        }
        out
    }

    /// `‖Σ R_i R_i* − I‖_F`.
    pub fn unitality_residual(&self) -> f64 {
        self.apply(&CMatrix::identity(self.input_dim)).add_identity(c64(-1.0, 0.0)).frobenius_norm()
    }

    pub fn choi(&self) -> CMatrix {
        let (m, n) = (self.input_dim, self.output_dim);
        let mut c = CMatrix::zeros(m * n, m * n);
        for r in &self.factors {
            let v: Vec<C64> = (0..m).flat_map(|i| (0..n).map(move |a| (i, a))).map(|(i, a)| r[(a, i)]).collect();
            for p in 0..m * n {
                for q in 0..m * n {
                    c[(p, q)] += v[p] * v[q].conj();
                }
            }
        }
        c
    }
}

fn value_or_zero(values: &BTreeMap<BasisLabel, CMatrix>, label: BasisLabel, n: usize) -> CMatrix {
    values.get(&label).cloned().unwrap_or_else(|| CMatrix::zeros(n, n))
}

/// Choi matrix from diagonal values and off-diagonal extension slots.
fn assemble_choi(m: usize, n: usize, values: &BTreeMap<BasisLabel, CMatrix>) -> CMatrix {
    let mut c = CMatrix::zeros(m * n, m * n);
    let diag = [BasisLabel::E11, BasisLabel::E22, BasisLabel::E33];
    for (i, label) in diag.iter().enumerate().take(m) {
        c.set_block(i * n, i * n, &value_or_zero(values, *label, n));
    }
    let off = [(0, 1, BasisLabel::E12), (0, 2, BasisLabel::E13), (1, 2, BasisLabel::E23)];
    for &(i, j, label) in off.iter().filter(|(_, j, _)| *j < m) {
        let x = value_or_zero(values, label, n);
        c.set_block(i * n, j * n, &x);
        c.set_block(j * n, i * n, &x.adjoint());
    }
    c.hermitian_part()
}

fn label_block(choi: &CMatrix, label: BasisLabel, n: usize) -> CMatrix {
    let at = |i: usize, j: usize| choi.block(i * n, j * n, n, n);
    match label {
        BasisLabel::E11 => at(0, 0),
        BasisLabel::E22 => at(1, 1),
        BasisLabel::E33 => at(2, 2),
        BasisLabel::E12 => at(0, 1),
        BasisLabel::E13 => at(0, 2),
        BasisLabel::E23 => at(1, 2),
        BasisLabel::E12Sym => {
            let x = at(0, 1);
            &x + &x.adjoint()
        }
    }
}

/// Drops the slightly negative spectrum left by the completion and restores
/// unitality by the congruence `(I ⊗ S^{-1/2})·C₊·(I ⊗ S^{-1/2})`,
/// `S = Σ_i C₊[i,i]`. Moves the prescribed blocks by about the clipped mass.
fn clean_choi(choi: &CMatrix, m: usize, n: usize) -> Result<CMatrix, CpError> {
    let plus = herm_eig(choi)?.apply(|v| v.max(0.0));
    let mut s = CMatrix::zeros(n, n);
    for i in 0..m {
        s += &plus.block(i * n, i * n, n, n);
    }
    let (_, s_inv_half) = sqrt_and_pinv_sqrt(&s.hermitian_part(), None)?;
    Ok(plus.congruence(&s_inv_half.kron_identity(m)).hermitian_part())
}

/// Assembles the Choi matrix and checks positivity, unitality and the
/// restriction `Φ(Ã) = B̃`.
fn finish(
    case: CaseTag,
    canonical: &CMatrix,
    b: &CMatrix,
    basis_values: BTreeMap<BasisLabel, CMatrix>,
    cone: Option<ConeDiagnostics>,
) -> Result<CpCertificate, CpError> {
    let m = canonical.rows();
    let n = b.rows();
    let mut basis_values = basis_values;
    let mut choi = assemble_choi(m, n, &basis_values);
    let mut gap = psd_gap(&choi)?;
    if gap < 0.0 && gap >= -eps_psd(&choi) {
        choi = clean_choi(&choi, m, n)?;
        gap = psd_gap(&choi)?;
        for (label, value) in basis_values.iter_mut() {
            *value = label_block(&choi, *label, n);
        }
    }
    let mut cert = CpCertificate {
        case,
        input_dim: m,
        output_dim: n,
        basis_values,
        choi,
        psd_gap: gap,
        unital_residual: 0.0,
        restriction_residual: 0.0,
        cone,
    };
    if gap < -eps_psd(&cert.choi) {
        return Err(CpError::NumericalFailure { stage: "choi positivity", residual: gap });
    }
    cert.unital_residual = cert.evaluate(&CMatrix::identity(m)).add_identity(c64(-1.0, 0.0)).frobenius_norm();
    if cert.unital_residual > 1e-9 {
        return Err(CpError::NumericalFailure { stage: "unitality", residual: cert.unital_residual });
    }
    cert.restriction_residual = (&cert.evaluate(canonical) - b).frobenius_norm();
    if cert.restriction_residual > 1e-8 * (1.0 + b.frobenius_norm()) {
        return Err(CpError::NumericalFailure { stage: "restriction", residual: cert.restriction_residual });
    }
    Ok(cert)
}

fn require_gap(check: &'static str, m: &CMatrix, eps: f64) -> Result<f64, CpError> {
    let gap = psd_gap(m)?;
    if gap < -eps {
        return Err(CpError::NotIncluded { check, gap });
    }
    Ok(gap)
}

fn identity_minus(x: &CMatrix) -> CMatrix {
    (-x).add_identity(c64(1.0, 0.0))
}

/// Interval case: `W(B) ⊆ [0, 1]`, canonical `diag(1, 0)` or `diag(1, r, 0)`.
pub fn build_interval_cp(b: &CMatrix, r: f64, m: usize) -> Result<CpCertificate, CpError> {
    let n = b.require_square()?;
    if !(m == 2 || m == 3) {
        return Err(CpError::InvalidInput(format!("interval systems have m = 2 or 3, got {m}")));
    }
    if m == 3 && !(0.0..=1.0).contains(&r) {
        return Err(CpError::InvalidInput(format!("interior point r = {r} outside [0, 1]")));
    }
    let (h, g) = cartesian(b)?;
    let eps = eps_psd(b);
    if g.frobenius_norm() > eps {
        return Err(CpError::NotHermitian { defect: g.frobenius_norm() });
    }
    let rest = identity_minus(&h);
    require_gap("B >= 0", &h, eps)?;
    require_gap("B <= I", &rest, eps)?;
    let mut values = BTreeMap::new();
    values.insert(BasisLabel::E11, h.clone());
    let (case, canonical) = if m == 2 {
        values.insert(BasisLabel::E22, rest);
        (CaseTag::Normal2, CMatrix::from_real_diag(&[1.0, 0.0]))
    } else {
        values.insert(BasisLabel::E22, CMatrix::zeros(n, n));
        values.insert(BasisLabel::E33, rest);
        (CaseTag::Normal3Collinear { r }, CMatrix::from_real_diag(&[1.0, r, 0.0]))
    };
    finish(case, &canonical, b, values, None)
}

/// Triangle case: `W(B) ⊆ conv{1, i, 0}`, canonical `diag(1, i, 0)`.
pub fn build_triangle_cp(b: &CMatrix) -> Result<CpCertificate, CpError> {
    b.require_square()?;
    let (h, g) = cartesian(b)?;
    let eps = eps_psd(b);
    let rest = identity_minus(&(&h + &g));
    require_gap("H >= 0", &h, eps)?;
    require_gap("G >= 0", &g, eps)?;
    require_gap("H + G <= I", &rest, eps)?;
    let mut values = BTreeMap::new();
    values.insert(BasisLabel::E11, h);
    values.insert(BasisLabel::E22, g);
    values.insert(BasisLabel::E33, rest);
    let canonical = canonical_form(&CaseTag::Normal3Generic).expect("fixed form");
    finish(CaseTag::Normal3Generic, &canonical, b, values, None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PencilReport {
    pub ok: bool,
    pub worst_gap: f64,
    pub worst_theta: f64,
}

/// Tests `cos²θ·P₁₁ + 2 cos θ sin θ·P₁₂ + sin²θ·P₂₂ ≥ 0` for `θ ∈ [0, π)`.
pub fn pencil_positive(p11: &CMatrix, p12s: &CMatrix, p22: &CMatrix, ngrid: usize) -> Result<PencilReport, CpError> {
    let ngrid = ngrid.max(8);
    let thetas: Vec<f64> = (0..ngrid).map(|i| PI * i as f64 / ngrid as f64).collect();
    let eval = |t: f64| {
        let (s, c) = t.sin_cos();
        let mut m = p11.scale_real(c * c);
        m += &p12s.scale_real(2.0 * c * s);
        m += &p22.scale_real(s * s);
        psd_gap(&m.hermitian_part())
    };
    let (worst_theta, worst_gap) = grid_min_refined(&thetas, eval)?;
    let eps = 1e-9 * (1.0 + p11.frobenius_norm() + p12s.frobenius_norm() + p22.frobenius_norm());
    Ok(PencilReport { ok: worst_gap >= -eps, worst_gap, worst_theta: worst_theta.rem_euclid(PI) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Off-diagonal block with `X + X* = S`.
    pub x: CMatrix,
    pub gap: f64,
    pub iterations: usize,
}

fn corner(d1: &CMatrix, d2: &CMatrix, x: &CMatrix) -> CMatrix {
    let n = d1.rows();
    let mut m = CMatrix::zeros(2 * n, 2 * n);
    m.set_block(0, 0, d1);
    m.set_block(n, n, d2);
    m.set_block(0, n, x);
    m.set_block(n, 0, &x.adjoint());
    m
}

/// Skew-Hermitian part of `x` plus `S/2`.
fn onto_affine(x: &CMatrix, s: &CMatrix) -> CMatrix {
    let skew = (x - &x.adjoint()).scale_real(0.5);
    &s.scale_real(0.5) + &skew
}

fn clamp_psd(m: &CMatrix) -> Result<CMatrix, LinalgError> {
    Ok(herm_eig(&m.hermitian_part())?.apply(|v| v.max(0.0)))
}

/// Dykstra's alternating projections for `[[D1, X], [X*, D2]] ≥ 0` subject to
/// `X + X* = S`, starting from `X = S/2`.
pub fn dykstra_extend(d1: &CMatrix, d2: &CMatrix, s: &CMatrix, max_iter: usize, tol: f64) -> Result<Completion, CpError> {
    dykstra_extend_from(d1, d2, s, &s.scale_real(0.5), max_iter, tol)
}

/// As [`dykstra_extend`] from a given starting block.
pub fn dykstra_extend_from(
    d1: &CMatrix,
    d2: &CMatrix,
    s: &CMatrix,
    x0: &CMatrix,
    max_iter: usize,
    tol: f64,
) -> Result<Completion, CpError> {
    let n = d1.require_square()?;
    if d2.rows() != n || s.rows() != n || x0.rows() != n || !d2.is_square() || !s.is_square() || !x0.is_square() {
        return Err(CpError::InvalidInput("completion blocks must share one square shape".into()));
    }
    for (name, d) in [("D1", d1), ("D2", d2)] {
        let gap = psd_gap(&d.hermitian_part())?;
        if gap < -eps_psd(d) {
            return Err(CpError::InvalidInput(format!("{name} is not PSD (gap {gap:e})")));
        }
    }
    let mut x = onto_affine(x0, s);
    let mut m = corner(d1, d2, &x);
    let mut gap = psd_gap(&m)?;
    if gap >= -tol {
        return Ok(Completion { x, gap, iterations: 0 });
    }
    let mut p = CMatrix::zeros(2 * n, 2 * n);
    let mut q = CMatrix::zeros(2 * n, 2 * n);
    for it in 1..=max_iter {
        let y = &m + &p;
        let yp = clamp_psd(&y)?;
        p = &y - &yp;
        let z = &yp + &q;
        x = onto_affine(&z.block(0, n, n, n), s);
        let zp = corner(d1, d2, &x);
        q = &z - &zp;
        m = zp;
        gap = psd_gap(&m)?;
        if gap >= -tol {
            return Ok(Completion { x, gap, iterations: it });
        }
    }
    Err(CpError::MaxIterations { iterations: max_iter, gap })
}

type Sparse = Vec<(usize, usize, C64)>;

/// Real basis of the `n × n` Hermitian matrices.
fn hermitian_basis(n: usize) -> Vec<Sparse> {
    let one = c64(1.0, 0.0);
    let i = c64(0.0, 1.0);
    let mut out: Vec<Sparse> = (0..n).map(|k| vec![(k, k, one)]).collect();
    for p in 0..n {
        for q in p + 1..n {
            out.push(vec![(p, q, one), (q, p, one)]);
            out.push(vec![(p, q, i), (q, p, -i)]);
        }
    }
    out
}

fn sparse_sum(basis: &[Sparse], coeffs: &[f64], n: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    for (e, &x) in basis.iter().zip(coeffs) {
        for &(p, q, v) in e {
            m[(p, q)] += v * x;
        }
    }
    m
}

fn solve_spd(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[k * n + i] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    Some(b)
}

/// Maximizes `t` subject to `M₀ + Σ x_k D_k − tI ≥ 0` with a log-det barrier
/// and damped Newton steps. Stops as soon as a strictly feasible point
/// (`t ≥ 0`) is centred, or when the duality bound drops below `tol/10`.
fn maximize_min_eig(base: &CMatrix, dirs: &[Sparse], tol: f64) -> Result<(Vec<f64>, f64), CpError> {
    let dim = base.rows();
    let mut all: Vec<Sparse> = dirs.to_vec();
    all.push((0..dim).map(|a| (a, a, c64(-1.0, 0.0))).collect());
    let p = all.len();
    let mut x = vec![0.0; p];
    x[p - 1] = psd_gap(base)? - 1.0;
    let z_of = |x: &[f64]| {
        let mut z = base.clone();
        for (e, &c) in all.iter().zip(x) {
            for &(a, b, v) in e {
                z[(a, b)] += v * c;
            }
        }
        z
    };
    let log_det = |l: &CMatrix| (0..dim).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0;
    let mut s = 1.0;
    for _ in 0..80 {
        for _ in 0..60 {
            let z = z_of(&x);
            let Some(l) = cholesky(&z) else { break };
            let zi = cholesky_inverse(&l);
            let f0 = s * x[p - 1] + log_det(&l);
            let mut g: Vec<f64> =
                all.iter().map(|e| e.iter().map(|&(a, b, v)| (v * zi[(b, a)]).re).sum()).collect();
            g[p - 1] += s;
            let mut hess = vec![0.0; p * p];
            for k in 0..p {
                for l2 in k..p {
                    let mut acc = 0.0;
                    for &(a, b, v) in &all[k] {
                        for &(c, d, w) in &all[l2] {
                            acc += (v * w * zi[(d, a)] * zi[(b, c)]).re;
                        }
                    }
                    hess[k * p + l2] = acc;
                    hess[l2 * p + k] = acc;
                }
            }
            let Some(dir) = solve_spd(hess, p, g.clone()) else { break };
            let dec: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-12 {
                let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                if let Some(ln) = cholesky(&z_of(&xn)) {
                    if s * xn[p - 1] + log_det(&ln) >= f0 + 0.25 * step * dec {
                        accepted = Some(xn);
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some(xn) => x = xn,
                None => break,
            }
            if dec / 2.0 < 1e-10 {
                break;
            }
        }
        if x[p - 1] >= 0.0 || (dim as f64) / s < tol * 0.1 {
            break;
        }
        s *= 8.0;
    }
    let t = x.pop().unwrap_or(0.0);
    Ok((x, t))
}

/// PSD completion of `[[D1, X], [X*, D2]]` with `X + X* = S`.
///
/// Plain Dykstra crawls on completions whose feasible set is thin, so a
/// barrier solve supplies the starting block and Dykstra only polishes.
pub fn complete_corner(d1: &CMatrix, d2: &CMatrix, s: &CMatrix) -> Result<Completion, CpError> {
    let n = d1.require_square()?;
    let half = s.scale_real(0.5);
    if psd_gap(&corner(d1, d2, &half))? >= -DYKSTRA_TOL {
        return dykstra_extend(d1, d2, s, DYKSTRA_MAX_ITER, DYKSTRA_TOL);
    }
    let basis = hermitian_basis(n);
    let i = c64(0.0, 1.0);
    let dirs: Vec<Sparse> = basis
        .iter()
        .map(|e| e.iter().flat_map(|&(p, q, v)| [(p, n + q, i * v), (n + p, q, -i * v)]).collect())
        .collect();
    let start = match maximize_min_eig(&corner(d1, d2, &half), &dirs, DYKSTRA_TOL) {
        Ok((y, _)) => &half + &sparse_sum(&basis, &y, n).scale(i),
        Err(_) => half,
    };
    dykstra_extend_from(d1, d2, s, &start, DYKSTRA_MAX_ITER, DYKSTRA_TOL)
}

/// Disk case: `W(B)` inside the unit disk, canonical `C = [[i, 1], [1, −i]]`.
pub fn build_disk_cp(b: &CMatrix) -> Result<CpCertificate, CpError> {
    b.require_square()?;
    let c = disk_generator();
    let inc = includes(&c, b, DEFAULT_POINTS, false).map_err(|e| CpError::InvalidInput(e.to_string()))?;
    if !inc.included {
        return Err(CpError::NotIncluded { check: "W(B) in unit disk", gap: inc.margin });
    }
    let (h, g) = cartesian(b)?;
    let eps = eps_psd(b);
    let d1 = g.add_identity(c64(1.0, 0.0)).scale_real(0.5);
    let d2 = (-&g).add_identity(c64(1.0, 0.0)).scale_real(0.5);
    require_gap("I + G >= 0", &d1, eps)?;
    require_gap("I - G >= 0", &d2, eps)?;
    let done = match complete_corner(&d1, &d2, &h) {
        Ok(done) => done,
        Err(CpError::MaxIterations { gap, .. }) => {
            let eps_incl = 1e-9 * (1.0 + c.frobenius_norm() + b.frobenius_norm());
            return Err(if inc.margin > 10.0 * eps_incl {
                CpError::NumericalFailure { stage: "disk completion", residual: gap }
            } else {
                CpError::NotIncluded { check: "disk completion", gap }
            });
        }
        Err(e) => return Err(e),
    };
    let mut values = BTreeMap::new();
    values.insert(BasisLabel::E11, d1);
    values.insert(BasisLabel::E22, d2);
    values.insert(BasisLabel::E12Sym, h);
    values.insert(BasisLabel::E12, done.x);
    finish(CaseTag::NonNormal2, &c, b, values, None)
}

/// `Q − [cos t·(1/(r+1) − r c²/(r²−1)) + sin t·c/√(r²−1)]` with
/// `Q = 1/(r+1) + c²/(r²−1)`: the scalar form of the bound that places
/// `K` above the cone envelope.
pub fn scalar_cone_inequality(r: f64, c: f64, t: f64) -> f64 {
    let r2 = r * r - 1.0;
    let q = 1.0 / (r + 1.0) + c * c / r2;
    let (s, co) = t.sin_cos();
    q - (co * (1.0 / (r + 1.0) - r * c * c / r2) + s * c / r2.sqrt())
}

/// `min_t λ_min((1 + r cos t)X − cos t·H − sin t·G)` over the full circle.
fn envelope_gap(x: &CMatrix, h: &CMatrix, g: &CMatrix, r: f64) -> Result<f64, CpError> {
    let f = |t: f64| {
        let (s, c) = t.sin_cos();
        let mut m = x.scale_real(1.0 + r * c);
        m -= &h.scale_real(c);
        m -= &g.scale_real(s);
        psd_gap(&m)
    };
    Ok(grid_min_refined(&theta_grid(DEFAULT_POINTS), f)?.1)
}

/// Joint solve for `P` and the corner block when the spectral clamp fails:
/// maximize the smallest eigenvalue of the three-block Choi matrix over
/// Hermitian `P` and `Y` with `X = (H − rP)/2 + iY`.
fn repair_p(h: &CMatrix, g: &CMatrix, r: f64) -> Result<(CMatrix, CMatrix), CpError> {
    let n = h.rows();
    let half = c64(0.5, 0.0);
    let i = c64(0.0, 1.0);
    let choi = |p: &CMatrix, x: &CMatrix| {
        let mut m = CMatrix::zeros(3 * n, 3 * n);
        m.set_block(0, 0, &(p + g).scale(half));
        m.set_block(n, n, &(p - g).scale(half));
        m.set_block(0, n, x);
        m.set_block(n, 0, &x.adjoint());
        m.set_block(2 * n, 2 * n, &identity_minus(p));
        m
    };
    let p0 = CMatrix::identity(n).scale(half);
    let x0 = (h - &p0.scale_real(r)).scale(half);
    let basis = hermitian_basis(n);
    let mut dirs: Vec<Sparse> = basis
        .iter()
        .map(|e| {
            e.iter()
                .flat_map(|&(p, q, v)| {
                    [
                        (p, q, v * 0.5),
                        (n + p, n + q, v * 0.5),
                        (p, n + q, v * (-0.5 * r)),
                        (n + p, q, v * (-0.5 * r)),
                        (2 * n + p, 2 * n + q, -v),
                    ]
                })
                .collect()
        })
        .collect();
    dirs.extend(basis.iter().map(|e| e.iter().flat_map(|&(p, q, v)| [(p, n + q, i * v), (n + p, q, -i * v)]).collect()));
    let (coef, _) = maximize_min_eig(&choi(&p0, &x0), &dirs, DYKSTRA_TOL)?;
    let k = basis.len();
    let p = &p0 + &sparse_sum(&basis, &coef[..k], n);
    let y = sparse_sum(&basis, &coef[k..], n);
    let x = &(h - &p.scale_real(r)).scale(half) + &y.scale(i);
    Ok((p.hermitian_part(), x))
}

/// Cone case: canonical `(rI₂ + C) ⊕ [0]` with `r > 1`.
///
/// Runs the contraction construction `G = H^{1/2} C H^{1/2}/√(r²−1)`,
/// `K = H/(r+1) + H^{1/2}C²H^{1/2}/(r²−1)`, `P = min{K, I}` and records every
/// inequality along the way. If the clamped `P` violates
/// `(1 + r cos t)P ≥ cos t·H + sin t·G`, `P` is re-solved together with the
/// corner completion and the source is recorded in the diagnostics.
pub fn build_cone_cp(b: &CMatrix, r: f64) -> Result<CpCertificate, CpError> {
    let n = b.require_square()?;
    if !r.is_finite() || r <= 1.0 {
        return Err(CpError::InvalidInput(format!("cone parameter must exceed 1, got {r}")));
    }
    let (h, g) = cartesian(b)?;
    let eps = eps_psd(b);
    let sq = (r * r - 1.0).sqrt();

    let wedge_gap = require_gap("H - sG >= 0", &(&h - &g.scale_real(sq)), eps)?
        .min(require_gap("H + sG >= 0", &(&h + &g.scale_real(sq)), eps)?);
    let t0 = (-1.0 / r).acos();
    let cap_grid: Vec<f64> = (0..=100).map(|i| -t0 + 2.0 * t0 * i as f64 / 100.0).collect();
    let cap = |t: f64| {
        let (s, c) = t.sin_cos();
        let mut m = h.add_identity(c64(-r, 0.0)).scale_real(-c);
        m -= &g.scale_real(s);
        psd_gap(&m.add_identity(c64(1.0, 0.0)))
    };
    let cap_gap = grid_min_refined(&cap_grid, |t| cap(t.clamp(-t0, t0)))?.1;
    if cap_gap < -eps {
        return Err(CpError::NotIncluded { check: "cap inequality", gap: cap_gap });
    }

    let eh = herm_eig(&h)?;
    let cutoff = default_cutoff(&eh).max(1e-13 * (1.0 + h.frobenius_norm()));
    let (root, pinv_root) = sqrt_and_pinv_sqrt(&h, Some(cutoff))?;
    let raw = pinv_root.matmul(&g).matmul(&pinv_root).scale_real(sq).hermitian_part();
    let ec = herm_eig(&raw)?;
    let overshoot = ec.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())) - 1.0;
    if overshoot > CONTRACTION_SLACK {
        return Err(CpError::ContractionOvershoot { overshoot });
    }
    let contraction = ec.apply(|v| v.clamp(-1.0, 1.0));
    let back = root.matmul(&contraction).matmul(&root).scale_real(1.0 / sq);
    let contraction_residual = (&g - &back).frobenius_norm();
    if contraction_residual > 1e-8 * (1.0 + g.frobenius_norm()) {
        return Err(CpError::NumericalFailure { stage: "contraction", residual: contraction_residual });
    }
    let c2 = contraction.matmul(&contraction);
    let k = (&h.scale_real(1.0 / (r + 1.0)) + &root.matmul(&c2).matmul(&root).scale_real(1.0 / (r * r - 1.0)))
        .hermitian_part();
    let k_envelope_gap = envelope_gap(&k, &h, &g, r)?;
    let clamp = min_with_identity(&k)?;
    let clamp_envelope_gap = envelope_gap(&clamp, &h, &g, r)?;

    let (p, x0, p_source) = if clamp_envelope_gap >= -eps {
        let x0 = (&h - &clamp.scale_real(r)).scale_real(0.5);
        (clamp, x0, PSource::SpectralClamp)
    } else {
        let (p, x0) = repair_p(&h, &g, r)?;
        (p, x0, PSource::LmiRepair)
    };
    let envelope = envelope_gap(&p, &h, &g, r)?;
    if envelope < -eps {
        return Err(CpError::NumericalFailure { stage: "cone envelope", residual: envelope });
    }
    let s12 = &h - &p.scale_real(r);
    let pencil = pencil_positive(&(&p + &g), &s12, &(&p - &g), DEFAULT_POINTS)?;
    if !pencil.ok {
        return Err(CpError::NumericalFailure { stage: "cone pencil", residual: pencil.worst_gap });
    }
    let d1 = (&p + &g).scale_real(0.5);
    let d2 = (&p - &g).scale_real(0.5);
    let done = match p_source {
        PSource::SpectralClamp => complete_corner(&d1, &d2, &s12),
        PSource::LmiRepair => dykstra_extend_from(&d1, &d2, &s12, &x0, DYKSTRA_MAX_ITER, DYKSTRA_TOL),
    }
    .map_err(|e| match e {
        CpError::MaxIterations { gap, .. } => CpError::NumericalFailure { stage: "cone completion", residual: gap },
        other => other,
    })?;

    let diagnostics = ConeDiagnostics {
        r,
        tolerance: eps,
        wedge_gap,
        cap_gap,
        contraction_overshoot: overshoot,
        contraction_residual,
        k_envelope_gap,
        clamp_envelope_gap,
        envelope_gap: envelope,
        pencil_gap: pencil.worst_gap,
        p_source,
    };
    let mut values = BTreeMap::new();
    values.insert(BasisLabel::E11, d1);
    values.insert(BasisLabel::E22, d2);
    values.insert(BasisLabel::E33, identity_minus(&p));
    values.insert(BasisLabel::E12Sym, s12);
    values.insert(BasisLabel::E12, done.x);
    values.insert(BasisLabel::E13, CMatrix::zeros(n, n));
    values.insert(BasisLabel::E23, CMatrix::zeros(n, n));
    let canonical = disk_generator().add_identity(c64(r, 0.0)).direct_sum(&CMatrix::scalar(c64(0.0, 0.0)));
    let case = CaseTag::NonNormal2PlusReducing { mu: c64(0.0, 0.0), r };
    finish(case, &canonical, b, values, Some(diagnostics))
}

/// Kraus factors from the eigendecomposition of the Choi matrix.
pub fn choi_to_kraus(cert: &CpCertificate) -> Result<KrausSet, CpError> {
    let (m, n) = (cert.input_dim, cert.output_dim);
    let e = herm_eig(&cert.choi)?;
    let cutoff = default_cutoff(&e);
    let mut factors = Vec::new();
    for (idx, &lam) in e.values.iter().enumerate() {
        if lam <= cutoff {
            continue;
        }
        let v = e.vector(idx);
        let w = lam.sqrt();
        factors.push(CMatrix::from_fn(n, m, |a, i| v[i * n + a] * w));
    }
    if factors.is_empty() {
        return Err(CpError::NumericalFailure { stage: "kraus factorization", residual: e.max() });
    }
    let kraus = KrausSet { factors, input_dim: m, output_dim: n };
    let residual = (&kraus.choi() - &cert.choi).max_abs();
    if residual > 1e-8 {
        return Err(CpError::NumericalFailure { stage: "kraus reconstruction", residual });
    }
    Ok(kraus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::orthonormalize_columns;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut next = lcg(seed);
        CMatrix::from_fn(rows, cols, |_, _| c64(next(), next()))
    }

    /// `V*(I_k ⊗ A)V` for an isometry from orthonormalized random columns.
    fn compression(a: &CMatrix, n: usize, k: usize, seed: u64) -> CMatrix {
        let v = orthonormalize_columns(&random_matrix(k * a.rows(), n, seed)).unwrap();
        a.kron_identity(k).congruence(&v)
    }

    fn s(x: f64) -> CMatrix {
        CMatrix::scalar(c64(x, 0.0))
    }

    #[test]
    fn interval_examples() {
        let cert = build_interval_cp(&s(0.5), 0.0, 2).unwrap();
        assert_eq!(cert.basis_values[&BasisLabel::E11], s(0.5));
        assert_eq!(cert.basis_values[&BasisLabel::E22], s(0.5));

        let b = CMatrix::from_real_diag(&[1.0, 0.0]);
        let cert = build_interval_cp(&b, 0.5, 3).unwrap();
        assert_eq!(cert.basis_values[&BasisLabel::E11], b);
        assert_eq!(cert.basis_values[&BasisLabel::E22], CMatrix::zeros(2, 2));
        assert_eq!(cert.basis_values[&BasisLabel::E33], CMatrix::from_real_diag(&[0.0, 1.0]));

        assert!(matches!(build_interval_cp(&s(1.2), 0.0, 2), Err(CpError::NotIncluded { .. })));
        assert!(matches!(
            build_interval_cp(&CMatrix::scalar(c64(0.5, 0.5)), 0.0, 2),
            Err(CpError::NotHermitian { .. })
        ));
    }

    #[test]
    fn triangle_examples() {
        let cert = build_triangle_cp(&CMatrix::scalar(c64(0.25, 0.25))).unwrap();
        assert_eq!(cert.basis_values[&BasisLabel::E11], s(0.25));
        assert_eq!(cert.basis_values[&BasisLabel::E22], s(0.25));
        assert_eq!(cert.basis_values[&BasisLabel::E33], s(0.5));

        let b = CMatrix::from_diag(&[c64(1.0, 0.0), c64(0.0, 1.0)]);
        let cert = build_triangle_cp(&b).unwrap();
        assert_eq!(cert.basis_values[&BasisLabel::E11], CMatrix::from_real_diag(&[1.0, 0.0]));
        assert_eq!(cert.basis_values[&BasisLabel::E22], CMatrix::from_real_diag(&[0.0, 1.0]));
        assert!(cert.basis_values[&BasisLabel::E33].max_abs() < 1e-15);

        match build_triangle_cp(&CMatrix::scalar(c64(0.6, 0.6))) {
            Err(CpError::NotIncluded { gap, .. }) => assert!((gap + 0.2).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pencil_examples() {
        let i2 = CMatrix::identity(2);
        let rep = pencil_positive(&i2, &CMatrix::zeros(2, 2), &i2, 720).unwrap();
        assert!(rep.ok && (rep.worst_gap - 1.0).abs() < 1e-12);

        let rep = pencil_positive(&s(1.0), &s(1.0), &s(1.0), 720).unwrap();
        assert!(rep.ok && rep.worst_gap.abs() < 1e-12);
        assert!((rep.worst_theta - 3.0 * PI / 4.0).abs() < 1e-6);

        let rep = pencil_positive(&s(1.0), &s(2.0), &s(1.0), 720).unwrap();
        assert!(!rep.ok && rep.worst_gap < -0.5);
    }

    #[test]
    fn pencil_congruence_invariance() {
        for seed in 0..4 {
            let x = random_matrix(3, 3, seed);
            let p11 = x.adjoint_mul(&x);
            let y = random_matrix(3, 3, seed + 50);
            let p22 = y.adjoint_mul(&y);
            let p12 = random_matrix(3, 3, seed + 90).hermitian_part().scale_real(0.3 + seed as f64);
            let t = random_matrix(3, 3, seed + 130).add_identity(c64(3.0, 0.0));
            let a = pencil_positive(&p11, &p12, &p22, 720).unwrap();
            let b = pencil_positive(&p11.congruence(&t), &p12.congruence(&t), &p22.congruence(&t), 720).unwrap();
            assert_eq!(a.ok, b.ok);
        }
    }

    #[test]
    fn dykstra_examples() {
        let h = s(0.5);
        let done = dykstra_extend(&h, &h, &s(1.0), DYKSTRA_MAX_ITER, DYKSTRA_TOL).unwrap();
        assert!((done.x[(0, 0)] - c64(0.5, 0.0)).norm() < 1e-12);
        assert!(done.gap.abs() < 1e-12);
        let done = dykstra_extend(&h, &h, &s(0.0), DYKSTRA_MAX_ITER, DYKSTRA_TOL).unwrap();
        assert!(done.x.max_abs() < 1e-15);
        assert!((done.gap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dykstra_random_feasible() {
        let c = disk_generator();
        for seed in 0..3 {
            let b = compression(&c, 3, 2, seed).scale_real(0.9);
            let (h, g) = cartesian(&b).unwrap();
            let d1 = g.add_identity(c64(1.0, 0.0)).scale_real(0.5);
            let d2 = (-&g).add_identity(c64(1.0, 0.0)).scale_real(0.5);
            let done = dykstra_extend(&d1, &d2, &h, DYKSTRA_MAX_ITER, DYKSTRA_TOL).unwrap();
            assert!(done.gap >= -1e-9);
            let sym = &done.x + &done.x.adjoint();
            assert!((&sym - &h).frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn disk_examples() {
        let cert = build_disk_cp(&s(0.0)).unwrap();
        assert!((&cert.choi - &CMatrix::identity(2).scale_real(0.5)).frobenius_norm() < 1e-12);

        let cert = build_disk_cp(&s(1.0)).unwrap();
        let want = CMatrix::from_fn(2, 2, |_, _| c64(0.5, 0.0));
        assert!((&cert.choi - &want).frobenius_norm() < 1e-9);
        let kraus = choi_to_kraus(&cert).unwrap();
        assert_eq!(kraus.multiplicity(), 1);
        let e12 = CMatrix::from_rows(&[[c64(0.0, 0.0), c64(1.0, 0.0)], [c64(0.0, 0.0), c64(0.0, 0.0)]]);
        assert!((kraus.apply(&e12)[(0, 0)] - c64(0.5, 0.0)).norm() < 1e-9);

        for seed in 0..3 {
            let b = compression(&disk_generator(), 3, 2, 10 + seed).scale_real(0.9);
            let cert = build_disk_cp(&b).unwrap();
            assert!(cert.psd_gap >= -1e-9);
            assert!(cert.unital_residual <= 1e-9);
        }
        assert!(matches!(build_disk_cp(&s(1.5)), Err(CpError::NotIncluded { .. })));
    }

    #[test]
    fn disk_tight_completions() {
        for (n, k, seed) in [(2, 1, 1), (3, 2, 2), (4, 3, 3), (5, 3, 4)] {
            let b = compression(&disk_generator(), n, k, seed);
            let cert = build_disk_cp(&b).unwrap();
            assert!(cert.psd_gap >= -1e-9, "n={n} k={k} gap={}", cert.psd_gap);
        }
    }

    #[test]
    fn cone_rightmost_point() {
        let cert = build_cone_cp(&s(3.0), 2.0).unwrap();
        let v = &cert.basis_values;
        assert!((&v[&BasisLabel::E11] - &s(0.5)).frobenius_norm() < 1e-12);
        assert!((&v[&BasisLabel::E22] - &s(0.5)).frobenius_norm() < 1e-12);
        assert!((&v[&BasisLabel::E12Sym] - &s(1.0)).frobenius_norm() < 1e-12);
        assert!(v[&BasisLabel::E33].max_abs() < 1e-12);
        assert!((&v[&BasisLabel::E12] - &s(0.5)).frobenius_norm() < 1e-9);
        let kraus = choi_to_kraus(&cert).unwrap();
        assert_eq!(kraus.multiplicity(), 1);
        let diag = cert.cone.as_ref().unwrap();
        assert_eq!(diag.p_source, PSource::SpectralClamp);
        assert!(diag.literal_chain_holds());
    }

    #[test]
    fn cone_apex_and_outside() {
        let cert = build_cone_cp(&s(0.0), 2.0).unwrap();
        let want = CMatrix::from_real_diag(&[0.0, 0.0, 1.0]);
        assert!((&cert.choi - &want).frobenius_norm() < 1e-12);
        assert!(matches!(build_cone_cp(&CMatrix::scalar(c64(0.0, 1.0)), 2.0), Err(CpError::NotIncluded { .. })));
        assert!(matches!(build_cone_cp(&s(0.0), 1.0), Err(CpError::InvalidInput(_))));
    }

    #[test]
    fn cone_random_compressions() {
        for r in [1.5, 2.0] {
            let a = disk_generator().add_identity(c64(r, 0.0)).direct_sum(&s(0.0));
            for (n, k, seed) in [(1, 1, 0), (2, 1, 1), (3, 2, 2), (5, 2, 3)] {
                let b = compression(&a, n, k, seed);
                let cert = build_cone_cp(&b, r).unwrap();
                let d = cert.cone.as_ref().unwrap();
                let tol = -d.tolerance;
                assert!(d.wedge_gap >= tol && d.cap_gap >= tol && d.k_envelope_gap >= tol);
                assert!(d.envelope_gap >= tol);
                assert!(cert.psd_gap >= -1e-9);
            }
        }
    }

    #[test]
    fn scalar_inequality_examples() {
        assert!(scalar_cone_inequality(2.0, 0.0, 0.0).abs() < 1e-15);
        let min = (0..10_000)
            .map(|i| scalar_cone_inequality(2.0, 1.0, -PI + 2.0 * PI * i as f64 / 10_000.0))
            .fold(f64::INFINITY, f64::min);
        assert!(min.abs() < 1e-12 || (min > 0.0 && min < 1e-6));
        assert!(min >= -1e-12);
        for i in 0..201 {
            let c = -1.0 + 2.0 * i as f64 / 200.0;
            for j in 0..721 {
                let t = -PI + 2.0 * PI * j as f64 / 720.0;
                assert!(scalar_cone_inequality(1.1, c, t) >= -1e-12);
            }
        }
    }

    #[test]
    fn kraus_examples_and_round_trip() {
        let mut values = BTreeMap::new();
        values.insert(BasisLabel::E11, s(1.0));
        values.insert(BasisLabel::E22, s(0.0));
        let cert = finish(CaseTag::Normal2, &CMatrix::from_real_diag(&[1.0, 0.0]), &s(1.0), values, None).unwrap();
        let kraus = choi_to_kraus(&cert).unwrap();
        assert_eq!(kraus.multiplicity(), 1);
        let r = &kraus.factors[0];
        assert!((r[(0, 0)].norm() - 1.0).abs() < 1e-15 && r[(0, 1)].norm() < 1e-15);

        let b = compression(&disk_generator(), 3, 2, 5).scale_real(0.8);
        let cert = build_disk_cp(&b).unwrap();
        let kraus = choi_to_kraus(&cert).unwrap();
        assert!(kraus.unitality_residual() < 1e-8);
        assert!((&kraus.choi() - &cert.choi).max_abs() < 1e-10);
        assert!(kraus.multiplicity() <= 6);
    }
}
