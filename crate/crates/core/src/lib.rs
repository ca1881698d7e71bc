//! Numerical ranges, inclusion tests and explicit dilations `V*(I⊗A)V = B`.
//!
//! Module layout, bottom-up:
//!
//! - [`matcore`]: dense complex matrices and the Hermitian spectral calculus.
//! - [`numrange`]: support functions, boundary points, numerical radius and
//!   inclusion of numerical ranges.
//! - [`normform`]: classification of `A` and charts to canonical forms.
//! - [`cpbuild`]: completely positive certificates and Kraus factors.
//! - [`dilation`]: isometry assembly, the full pipeline and instance generation.
//! - [`cli`]: the `nrdil` command-line front end.

pub mod cli;
pub mod cpbuild;
pub mod dilation;
pub mod matcore;
pub mod normform;
pub mod numrange;

pub use dilation::{dilate, random_compression, verify_dilation, DilationError, DilationReport};
pub use matcore::{c64, CMatrix, C64};
pub use normform::{classify, CaseTag};
pub use numrange::{includes, numerical_radius, support};
