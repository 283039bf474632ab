//! Extended generalised variances.
//!
//! `ψ_k(μ)`, the expected squared volume of the k-simplex formed by `k + 1`
//! i.i.d. draws from `μ`, depends on `μ` only through its covariance matrix.
//! This crate computes it ([`symfun`]), estimates it without bias from a
//! sample ([`estimate`]), finds measures on a finite set that maximize it
//! ([`maxdiv`]), optimizes regression designs for the induced criterion
//! ([`design`]), and checks the estimator's sampling behaviour by simulation
//! ([`simulate`]).

pub mod design;
pub mod error;
pub mod estimate;
pub mod io;
pub mod linalg;
pub mod maxdiv;
pub mod simulate;
pub mod symfun;

pub use design::{
    DesignCriterion, DesignMeasure, DesignOptions, DesignReport, DesignSpace, EfficiencyTable,
};
pub use error::{GvarError, Result};
pub use estimate::{EstimateReport, OmegaSpec, OmegaValue, Sample};
pub use maxdiv::{CertificateReport, DiscreteMeasure, DualCertificate, MaxDivOptions};
pub use simulate::{GeneratorKind, GeneratorSpec, MonteCarloReport};
pub use symfun::{CovMatrix, PsiValue};
