//! Stinespring isometries: assembly, the end-to-end pipeline, verification
//! and seeded instance generation.
//!
//! Random instances use ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`),
//! with complex Gaussian entries drawn by Box–Muller from consecutive 64-bit
//! outputs. Haar isometries come from modified Gram–Schmidt on a Gaussian
//! matrix, which fixes the phases of the triangular factor to be positive.

use std::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cpbuild::{
    build_cone_cp, build_disk_cp, build_interval_cp, build_triangle_cp, choi_to_kraus, CpCertificate, CpError,
    KrausSet,
};
use crate::matcore::{c64, orthonormalize_columns, CMatrix, C64};
use crate::normform::{classify, pullback_isometry, reduce, CaseTag, Chart, ReduceError, DEFAULT_TOL};
use crate::numrange::{includes, DEFAULT_POINTS};

pub const ISOMETRY_TOL: f64 = 1e-8;
pub const COMPRESSION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DilationError {
    #[error("unsupported matrix class ({tag})")]
    UnsupportedCase { tag: CaseTag },
    #[error("W(B) is not contained in W(A) (margin {margin:e})")]
    NotIncluded { margin: f64 },
    #[error("numerical failure in {stage} (residual {residual:e})")]
    NumericalFailure { stage: String, residual: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl From<CpError> for DilationError {
    fn from(e: CpError) -> Self {
        match e {
            CpError::NotIncluded { gap, .. } => DilationError::NotIncluded { margin: gap },
            CpError::NotHermitian { defect } => DilationError::NotIncluded { margin: -defect },
            CpError::ContractionOvershoot { overshoot } => {
                DilationError::NumericalFailure { stage: "contraction".into(), residual: overshoot }
            }
            CpError::MaxIterations { gap, .. } => DilationError::NumericalFailure { stage: "completion".into(), residual: gap },
            CpError::NumericalFailure { stage, residual } => DilationError::NumericalFailure { stage: stage.into(), residual },
            CpError::Linalg(e) => DilationError::NumericalFailure { stage: e.to_string(), residual: f64::NAN },
            CpError::InvalidInput(msg) => DilationError::InvalidInput(msg),
        }
    }
}

impl From<ReduceError> for DilationError {
    fn from(e: ReduceError) -> Self {
        match e {
            ReduceError::NotReducible(tag) => DilationError::UnsupportedCase { tag },
            ReduceError::NumericalFailure { stage, residual } => {
                DilationError::NumericalFailure { stage: stage.into(), residual }
            }
            other => DilationError::NumericalFailure { stage: format!("reduce: {other}"), residual: f64::NAN },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DilationReport {
    /// `km × n` isometry.
    pub v: CMatrix,
    pub k: usize,
    /// `‖V*V − I‖_F`.
    pub isometry_residual: f64,
    /// `‖V*(I_k ⊗ A)V − B‖_F / (1 + ‖B‖_F)`.
    pub compression_residual: f64,
    pub case: CaseTag,
}

impl DilationReport {
    pub fn is_success(&self) -> bool {
        self.isometry_residual <= ISOMETRY_TOL && self.compression_residual <= COMPRESSION_TOL
    }
}

/// Everything produced along the way by [`dilate_traced`].
#[derive(Debug, Clone)]
pub struct DilationTrace {
    pub report: DilationReport,
    /// Absent for scalar `A`.
    pub certificate: Option<CpCertificate>,
    pub kraus: Option<KrausSet>,
    pub chart: Option<Chart>,
    /// Inclusion margin measured before the construction.
    pub margin: f64,
}

/// Stacks the adjoints of the Kraus factors into `V`.
pub fn assemble(kraus: &KrausSet) -> Result<CMatrix, DilationError> {
    let (m, n) = (kraus.input_dim, kraus.output_dim);
    let k = kraus.multiplicity();
    if k == 0 {
        return Err(DilationError::InvalidInput("empty Kraus set".into()));
    }
    let mut v = CMatrix::zeros(k * m, n);
    for (l, r) in kraus.factors.iter().enumerate() {
        if r.rows() != n || r.cols() != m {
            return Err(DilationError::InvalidInput(format!("Kraus factor {l} is {}x{}, expected {n}x{m}", r.rows(), r.cols())));
        }
        v.set_block(l * m, 0, &r.adjoint());
    }
    let residual = v.adjoint_mul(&v).add_identity(c64(-1.0, 0.0)).frobenius_norm();
    if residual > ISOMETRY_TOL {
        return Err(DilationError::NumericalFailure { stage: "assemble".into(), residual });
    }
    Ok(v)
}

/// Recomputes both residuals of a claimed dilation.
pub fn verify_dilation(v: &CMatrix, a: &CMatrix, b: &CMatrix) -> Result<DilationReport, DilationError> {
    let m = a.require_square().map_err(|e| DilationError::InvalidInput(format!("A: {e}")))?;
    let n = b.require_square().map_err(|e| DilationError::InvalidInput(format!("B: {e}")))?;
    if v.cols() != n || !v.rows().is_multiple_of(m) {
        return Err(DilationError::InvalidInput(format!(
            "V is {}x{}; expected a multiple of {m} rows and {n} columns",
            v.rows(),
            v.cols()
        )));
    }
    let k = v.rows() / m;
    let isometry_residual = v.adjoint_mul(v).add_identity(c64(-1.0, 0.0)).frobenius_norm();
    let compression_residual = (&a.kron_identity(k).congruence(v) - b).frobenius_norm() / (1.0 + b.frobenius_norm());
    Ok(DilationReport { v: v.clone(), k, isometry_residual, compression_residual, case: classify(a, DEFAULT_TOL) })
}

/// Builds `V` with `V*V = I` and `V*(I_k ⊗ A)V = B`.
pub fn dilate(a: &CMatrix, b: &CMatrix) -> Result<DilationReport, DilationError> {
    dilate_traced(a, b).map(|t| t.report)
}

/// [`dilate`], keeping the certificate, Kraus factors and chart.
pub fn dilate_traced(a: &CMatrix, b: &CMatrix) -> Result<DilationTrace, DilationError> {
    let m = a.require_square().map_err(|e| DilationError::InvalidInput(format!("A: {e}")))?;
    let n = b.require_square().map_err(|e| DilationError::InvalidInput(format!("B: {e}")))?;
    let tag = classify(a, DEFAULT_TOL);
    if !tag.is_supported() {
        return Err(DilationError::UnsupportedCase { tag });
    }
    let inc = includes(a, b, DEFAULT_POINTS, false).map_err(|e| DilationError::InvalidInput(e.to_string()))?;
    if !inc.included {
        return Err(DilationError::NotIncluded { margin: inc.margin });
    }

    if tag == CaseTag::Scalar {
        let k = n.div_ceil(m);
        let v = CMatrix::from_fn(k * m, n, |i, j| if i == j { c64(1.0, 0.0) } else { c64(0.0, 0.0) });
        let report = checked(&v, a, b, tag)?;
        return Ok(DilationTrace { report, certificate: None, kraus: None, chart: None, margin: inc.margin });
    }

    let (canonical, chart) = reduce(a, &tag)?;
    let b_tilde = chart.apply_affine(b).map_err(|e| DilationError::InvalidInput(e.to_string()))?;
    let mut embed = false;
    let certificate = match tag {
        CaseTag::Normal2 => build_interval_cp(&b_tilde, 0.0, 2)?,
        CaseTag::Normal3Collinear { .. } => build_interval_cp(&b_tilde, canonical[(1, 1)].re, 3)?,
        CaseTag::Normal3Generic => build_triangle_cp(&b_tilde)?,
        CaseTag::NonNormal2 => build_disk_cp(&b_tilde)?,
        CaseTag::NonNormal2PlusReducing { r, .. } if r > 1.0 => build_cone_cp(&b_tilde, canonical[(0, 0)].re)?,
        CaseTag::NonNormal2PlusReducing { .. } => {
            embed = true;
            build_disk_cp(&b_tilde)?
        }
        CaseTag::Scalar | CaseTag::Unsupported => unreachable!("handled above"),
    };
    let kraus = choi_to_kraus(&certificate)?;
    let mut v = assemble(&kraus)?;
    if embed {
        // A₀ = X*ÃX with X the first two coordinates of C ⊕ [μ̂].
        let x = CMatrix::from_fn(3, 2, |i, j| if i == j { c64(1.0, 0.0) } else { c64(0.0, 0.0) });
        v = x.kron_identity(kraus.multiplicity()).matmul(&v);
    }
    let w = pullback_isometry(&v, &chart, a, b)?;
    let report = checked(&w, a, b, tag)?;
    Ok(DilationTrace { report, certificate: Some(certificate), kraus: Some(kraus), chart: Some(chart), margin: inc.margin })
}

fn checked(v: &CMatrix, a: &CMatrix, b: &CMatrix, tag: CaseTag) -> Result<DilationReport, DilationError> {
    let mut report = verify_dilation(v, a, b)?;
    report.case = tag;
    if report.isometry_residual > ISOMETRY_TOL {
        return Err(DilationError::NumericalFailure { stage: "isometry".into(), residual: report.isometry_residual });
    }
    if report.compression_residual > COMPRESSION_TOL {
        return Err(DilationError::NumericalFailure { stage: "compression".into(), residual: report.compression_residual });
    }
    Ok(report)
}

/// Standard complex Gaussian stream (`E|z|² = 1`).
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform on `(0, 1]`.
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_complex(&mut self) -> C64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let rad = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        c64(rad * c, rad * s) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| self.next_complex())
    }
}

/// Haar-random `rows × cols` isometry.
pub fn random_isometry(rows: usize, cols: usize, seed: u64) -> Result<CMatrix, DilationError> {
    if cols == 0 || rows < cols {
        return Err(DilationError::InvalidInput(format!("no {rows}x{cols} isometry exists")));
    }
    let g = GaussianStream::new(seed).matrix(rows, cols);
    orthonormalize_columns(&g).ok_or(DilationError::NumericalFailure { stage: "gram-schmidt".into(), residual: f64::NAN })
}

/// `V*(I_k ⊗ A)V` for a Haar-random isometry `V` determined by `seed`.
pub fn random_compression(a: &CMatrix, n: usize, k: usize, seed: u64) -> Result<CMatrix, DilationError> {
    let m = a.require_square().map_err(|e| DilationError::InvalidInput(e.to_string()))?;
    if n == 0 || k == 0 || k * m < n {
        return Err(DilationError::InvalidInput(format!("cannot compress {k} copies of a {m}x{m} matrix to {n}x{n}")));
    }
    let v = random_isometry(k * m, n, seed)?;
    Ok(a.kron_identity(k).congruence(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::psd_gap;
    use crate::numrange::{cone_matrix, disk_generator};

    fn s(x: f64) -> CMatrix {
        CMatrix::scalar(c64(x, 0.0))
    }

    #[test]
    fn segment_midpoint() {
        let a = CMatrix::from_real_diag(&[1.0, 0.0]);
        let rep = dilate(&a, &s(0.5)).unwrap();
        assert!(rep.is_success());
        // Block-diagonal Choi matrix diag(0.5, 0.5) has rank 2.
        assert_eq!(rep.k, 2);
        let weight: f64 = (0..rep.k).map(|l| rep.v[(2 * l, 0)].norm_sqr()).sum();
        assert!((weight - 0.5).abs() < 1e-9);
    }

    #[test]
    fn normal_four_is_unsupported() {
        let a = CMatrix::from_diag(&[c64(1.0, 0.0), c64(0.0, 1.0), c64(-1.0, 0.0), c64(0.0, -1.0)]);
        assert!(matches!(dilate(&a, &s(0.0)), Err(DilationError::UnsupportedCase { .. })));
    }

    #[test]
    fn cone_compression_round_trip() {
        let a = cone_matrix(2.0);
        for seed in 0..3 {
            let b = random_compression(&a, 3, 2, seed).unwrap();
            let rep = dilate(&a, &b).unwrap();
            assert!(rep.is_success(), "{rep:?}");
            assert!(rep.k <= 9);
        }
    }

    #[test]
    fn assemble_single_factor() {
        let kraus = KrausSet {
            factors: vec![CMatrix::from_rows(&[[c64(1.0, 0.0), c64(0.0, 0.0)]])],
            input_dim: 2,
            output_dim: 1,
        };
        let v = assemble(&kraus).unwrap();
        assert_eq!(v, CMatrix::column_vector(&[c64(1.0, 0.0), c64(0.0, 0.0)]));
        let a = CMatrix::from_rows(&[[c64(0.3, 0.1), c64(2.0, 0.0)], [c64(-1.0, 0.0), c64(0.0, 0.5)]]);
        assert_eq!(a.congruence(&v)[(0, 0)], a[(0, 0)]);
    }

    #[test]
    fn cone_rightmost_point_isometry() {
        let a = cone_matrix(2.0);
        let rep = dilate(&a, &s(3.0)).unwrap();
        assert_eq!(rep.k, 1);
        let x = rep.v.column(0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let phase = x[0] / x[0].norm();
        for (got, want) in x.iter().zip([h, h, 0.0]) {
            assert!((got - phase * want).norm() < 1e-8);
        }
    }

    #[test]
    fn verify_examples() {
        let a = disk_generator();
        let rep = verify_dilation(&CMatrix::identity(2), &a, &a).unwrap();
        assert_eq!(rep.isometry_residual, 0.0);
        assert_eq!(rep.compression_residual, 0.0);

        let seg = CMatrix::from_real_diag(&[1.0, 0.0]);
        let v = CMatrix::column_vector(&[c64(1.0, 0.0), c64(0.0, 0.0)]);
        let rep = verify_dilation(&v, &seg, &s(1.0)).unwrap();
        assert!(rep.is_success() && rep.isometry_residual == 0.0 && rep.compression_residual == 0.0);

        let noisy = CMatrix::column_vector(&[c64(1.0 + 1e-3, 0.0), c64(0.0, 0.0)]);
        let rep = verify_dilation(&noisy, &seg, &s(1.0)).unwrap();
        assert!((rep.isometry_residual - 2e-3).abs() < 1e-5);
        assert!(!rep.is_success());

        assert!(verify_dilation(&CMatrix::zeros(3, 1), &seg, &s(1.0)).is_err());
    }

    #[test]
    fn compression_examples() {
        let a = disk_generator();
        let b = random_compression(&a, 1, 1, 4).unwrap();
        let v = random_isometry(2, 1, 4).unwrap();
        assert_eq!(b, a.congruence(&v));

        let seg = CMatrix::from_real_diag(&[1.0, 0.0]);
        let b = random_compression(&seg, 2, 1, 9).unwrap();
        assert!(b.hermitian_defect() < 1e-14);
        assert!(psd_gap(&b.hermitian_part()).unwrap() >= -1e-12);
        assert!(psd_gap(&(-&b.hermitian_part()).add_identity(c64(1.0, 0.0))).unwrap() >= -1e-12);

        let again = random_compression(&seg, 2, 1, 9).unwrap();
        assert_eq!(b.as_slice(), again.as_slice());
        assert!(random_compression(&seg, 3, 1, 0).is_err());
    }

    #[test]
    fn gaussian_stream_moments() {
        let mut g = GaussianStream::new(1);
        let zs: Vec<C64> = (0..20_000).map(|_| g.next_complex()).collect();
        let mean: C64 = zs.iter().sum::<C64>() / zs.len() as f64;
        let var = zs.iter().map(|z| z.norm_sqr()).sum::<f64>() / zs.len() as f64;
        assert!(mean.norm() < 0.03);
        assert!((var - 1.0).abs() < 0.05);
    }
}
