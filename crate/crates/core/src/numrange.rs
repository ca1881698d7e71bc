//! Support functions and numerical ranges.
//!
//! `h_A(θ) = λ_max(cos θ·H + sin θ·G)` is the support function of W(A) in
//! direction `e^{iθ}`. Everything here is built from it: boundary points come
//! from the top eigenvector, the numerical radius is `max_θ h_A(θ)`, and
//! inclusion `W(B) ⊆ W(A)` is `h_A ≥ h_B` everywhere.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::matcore::{c64, cartesian, herm_eig, lambda_max, CMatrix, LinalgError, C64};

/// Default number of angles for sweeps.
pub const DEFAULT_POINTS: usize = 720;

/// Number of angles tried in each refinement window.
const REFINE_POINTS: usize = 64;

/// Sample cap for the adaptive numerical radius.
const RADIUS_MAX_SAMPLES: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumRangeError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("need at least {min} sample points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("cone parameter must exceed 1, got {0}")]
    ConeParameter(f64),
}

/// Sampled support function on a uniform grid of `[-π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportProfile {
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    /// Upper bound on `w(A)`, which is also a Lipschitz constant for `h`.
    pub lipschitz: f64,
}

impl SupportProfile {
    pub fn grid_step(&self) -> f64 {
        2.0 * PI / self.thetas.len() as f64
    }
}

/// One sample of the boundary of W(A).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub theta: f64,
    pub point: C64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InclusionReport {
    pub included: bool,
    /// `min_θ (h_A(θ) − h_B(θ))` over the grid and its refinement.
    pub margin: f64,
    pub certified: bool,
    pub grid_step: f64,
    /// Angle where the margin was attained.
    pub worst_theta: f64,
}

/// Cartesian parts cached for repeated support evaluations.
#[derive(Debug, Clone)]
pub struct SupportOracle {
    h: CMatrix,
    g: CMatrix,
}

impl SupportOracle {
    pub fn new(a: &CMatrix) -> Result<Self, LinalgError> {
        let (h, g) = cartesian(a)?;
        Ok(Self { h, g })
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    /// `cos θ·H + sin θ·G`.
    pub fn direction_matrix(&self, theta: f64) -> CMatrix {
        let (s, c) = theta.sin_cos();
        let mut m = self.h.scale_real(c);
        m += &self.g.scale_real(s);
        m
    }

    pub fn at(&self, theta: f64) -> Result<f64, LinalgError> {
        if self.dim() == 1 {
            let (s, c) = theta.sin_cos();
            return Ok(c * self.h[(0, 0)].re + s * self.g[(0, 0)].re);
        }
        lambda_max(&self.direction_matrix(theta))
    }

    /// Support value and a top eigenvector.
    pub fn top(&self, theta: f64) -> Result<(f64, Vec<C64>), LinalgError> {
        let e = herm_eig(&self.direction_matrix(theta))?;
        Ok((e.values[0], e.vector(0)))
    }
}

/// Uniform grid `θ_i = −π + 2πi/n`.
pub fn theta_grid(npoints: usize) -> Vec<f64> {
    let step = 2.0 * PI / npoints as f64;
    (0..npoints).map(|i| -PI + step * i as f64).collect()
}

pub fn support(a: &CMatrix, theta: f64) -> Result<f64, LinalgError> {
    a.require_square()?;
    SupportOracle::new(a)?.at(theta)
}

fn sweep(oracle: &SupportOracle, thetas: &[f64]) -> Result<Vec<f64>, LinalgError> {
    thetas.par_iter().map(|&t| oracle.at(t)).collect()
}

pub fn support_profile(a: &CMatrix, npoints: usize) -> Result<SupportProfile, NumRangeError> {
    a.require_square()?;
    if npoints < 8 {
        return Err(NumRangeError::TooFewPoints { min: 8, got: npoints });
    }
    let oracle = SupportOracle::new(a)?;
    let thetas = theta_grid(npoints);
    let values = sweep(&oracle, &thetas)?;
    let lipschitz = outer_radius(&thetas, &values);
    Ok(SupportProfile { thetas, values, lipschitz })
}

/// Boundary points of W(A), counterclockwise from `θ = −π`.
pub fn boundary(a: &CMatrix, npoints: usize) -> Result<Vec<BoundaryPoint>, NumRangeError> {
    a.require_square()?;
    if npoints < 8 {
        return Err(NumRangeError::TooFewPoints { min: 8, got: npoints });
    }
    let oracle = SupportOracle::new(a)?;
    let pts = theta_grid(npoints)
        .into_par_iter()
        .map(|theta| -> Result<BoundaryPoint, LinalgError> {
            let (h, x) = oracle.top(theta)?;
            let ax = a.matmul(&CMatrix::column_vector(&x));
            let point: C64 = x.iter().zip(ax.as_slice()).map(|(xi, yi)| xi.conj() * yi).sum();
            Ok(BoundaryPoint { theta, point, h })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pts)
}

/// Vertex of the two supporting half-planes at `t1 < t2`, measured as the
/// offset along the tangent of the first one. Returns `|z*|²`.
fn wedge_vertex_norm_sqr(t1: f64, h1: f64, t2: f64, h2: f64) -> f64 {
    let d = t2 - t1;
    let (s, c) = d.sin_cos();
    if s <= 0.0 {
        return f64::INFINITY;
    }
    let off = (h2 - h1 * c) / s;
    h1 * h1 + off * off
}

/// Radius of the outer polygon cut out by the sampled support lines.
///
/// The polygon contains W(A), so `max|z*|` over its vertices bounds `w(A)`
/// from above. The last sample wraps to the first.
fn outer_radius(thetas: &[f64], values: &[f64]) -> f64 {
    let n = thetas.len();
    let mut best = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        let j = (i + 1) % n;
        let t2 = if j == 0 { thetas[0] + 2.0 * PI } else { thetas[j] };
        let r2 = wedge_vertex_norm_sqr(thetas[i], values[i], t2, values[j]);
        best = best.max(r2.sqrt());
    }
    best
}

/// Lower and upper bounds on `w(A)` from an adaptive sweep, refined until the
/// gap is at most `1e−10·(1+‖A‖_F)` or the sample cap is reached.
pub fn numerical_radius_bounds(a: &CMatrix) -> Result<(f64, f64), LinalgError> {
    a.require_square()?;
    let oracle = SupportOracle::new(a)?;
    let target = 1e-10 * (1.0 + a.frobenius_norm());
    let mut thetas = theta_grid(DEFAULT_POINTS);
    let mut values = sweep(&oracle, &thetas)?;
    loop {
        let n = thetas.len();
        let lower = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let mut upper = lower;
        let mut split = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let t2 = if j == 0 { thetas[0] + 2.0 * PI } else { thetas[j] };
            let r = wedge_vertex_norm_sqr(thetas[i], values[i], t2, values[j]).sqrt();
            upper = upper.max(r);
            if r > lower + target {
                split.push(i);
            }
        }
        if upper - lower <= target || split.is_empty() || n + split.len() > RADIUS_MAX_SAMPLES {
            return Ok((lower, upper.max(lower)));
        }
        let mids: Vec<f64> = split
            .iter()
            .map(|&i| {
                let j = (i + 1) % n;
                let t2 = if j == 0 { thetas[0] + 2.0 * PI } else { thetas[j] };
                0.5 * (thetas[i] + t2)
            })
            .collect();
        let mid_vals = sweep(&oracle, &mids)?;
        let mut nt = Vec::with_capacity(n + mids.len());
        let mut nv = Vec::with_capacity(n + mids.len());
        let mut k = 0;
        for i in 0..n {
            nt.push(thetas[i]);
            nv.push(values[i]);
            if k < split.len() && split[k] == i {
                nt.push(mids[k]);
                nv.push(mid_vals[k]);
                k += 1;
            }
        }
        // A midpoint past π belongs at the front after wrapping.
        if let Some(&last) = nt.last() {
            if last >= PI {
                let v = nv.pop().unwrap();
                nt.pop();
                nt.insert(0, last - 2.0 * PI);
                nv.insert(0, v);
            }
        }
        thetas = nt;
        values = nv;
    }
}

/// `w(A) = max_θ h_A(θ)`.
pub fn numerical_radius(a: &CMatrix) -> Result<f64, LinalgError> {
    Ok(numerical_radius_bounds(a)?.0)
}

/// Minimum of `f` over a grid, then over a finer window around the grid minimum.
pub(crate) fn grid_min_refined<F>(thetas: &[f64], f: F) -> Result<(f64, f64), LinalgError>
where
    F: Fn(f64) -> Result<f64, LinalgError> + Sync,
{
    let vals: Vec<f64> = thetas.par_iter().map(|&t| f(t)).collect::<Result<_, _>>()?;
    let (mut imin, mut vmin) = (0, f64::INFINITY);
    for (i, &v) in vals.iter().enumerate() {
        if v < vmin {
            imin = i;
            vmin = v;
        }
    }
    let mut tmin = thetas[imin];
    if thetas.len() > 1 {
        let step = (thetas[1] - thetas[0]).abs();
        let lo = tmin - step;
        let fine: Vec<f64> = (0..=REFINE_POINTS)
            .map(|i| lo + 2.0 * step * i as f64 / REFINE_POINTS as f64)
            .collect();
        let fv: Vec<f64> = fine.par_iter().map(|&t| f(t)).collect::<Result<_, _>>()?;
        for (t, v) in fine.into_iter().zip(fv) {
            if v < vmin {
                vmin = v;
                tmin = t;
            }
        }
    }
    Ok((tmin, vmin))
}

/// Tests `W(B) ⊆ W(A)` by comparing support functions on `npoints` angles.
pub fn includes(a: &CMatrix, b: &CMatrix, npoints: usize, certified: bool) -> Result<InclusionReport, NumRangeError> {
    a.require_square()?;
    b.require_square()?;
    if npoints < 8 {
        return Err(NumRangeError::TooFewPoints { min: 8, got: npoints });
    }
    let oa = SupportOracle::new(a)?;
    let ob = SupportOracle::new(b)?;
    let thetas = theta_grid(npoints);
    let (worst_theta, margin) = grid_min_refined(&thetas, |t| Ok(oa.at(t)? - ob.at(t)?))?;
    let eps = 1e-9 * (1.0 + a.frobenius_norm() + b.frobenius_norm());
    let included = margin >= -eps;
    let grid_step = 2.0 * PI / npoints as f64;
    let certified = if certified {
        let wa = numerical_radius_bounds(a)?.1;
        let wb = numerical_radius_bounds(b)?.1;
        let slack = (wa + wb) * grid_step / 2.0;
        (included && margin > slack) || (!included && margin < -slack)
    } else {
        false
    };
    Ok(InclusionReport { included, margin, certified, grid_step, worst_theta })
}

/// Support function of `conv({0} ∪ disk(r, 1))`, the numerical range of
/// `(rI₂ + C) ⊕ [0]`.
pub fn cone_disk_support(r: f64, theta: f64) -> Result<f64, NumRangeError> {
    if r.is_nan() || r <= 1.0 {
        return Err(NumRangeError::ConeParameter(r));
    }
    Ok((r * theta.cos() + 1.0).max(0.0))
}

/// `C = [[i, 1], [1, −i]]`, whose numerical range is the closed unit disk.
pub fn disk_generator() -> CMatrix {
    CMatrix::from_rows(&[[c64(0.0, 1.0), c64(1.0, 0.0)], [c64(1.0, 0.0), c64(0.0, -1.0)]])
}

/// `(rI₂ + C) ⊕ [0]`.
pub fn cone_matrix(r: f64) -> CMatrix {
    disk_generator().add_identity(c64(r, 0.0)).direct_sum(&CMatrix::scalar(c64(0.0, 0.0)))
}
