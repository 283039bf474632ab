//! Elementary symmetric functions of covariance spectra.
//!
//! For a covariance matrix `V` with eigenvalues `λ_1 ≥ … ≥ λ_d ≥ 0`, the
//! expected squared volume of a k-simplex spanned by `k + 1` i.i.d. draws is
//!
//! ```text
//! Ψ_k(V) = (k + 1)/k! · E_k(λ_1, …, λ_d)
//! ```
//!
//! where `E_k` is the elementary symmetric function of degree `k`. The
//! spectral recurrence used here is the primary route; the Newton-identity
//! and trace-determinant forms are provided for cross-checking.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GvarError, Result};
use crate::linalg::{self, factorial, SINGULAR_RTOL};

const SYMMETRY_RTOL: f64 = 1e-12;
const NEGATIVE_EIG_RTOL: f64 = 1e-10;

/// Symmetric nonnegative-definite matrix with its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
    spectrum: Vec<f64>,
}

impl CovMatrix {
    /// Validates symmetry and nonnegative-definiteness.
    ///
    /// Eigenvalues in `[-1e-10·λ_max, 0)` are clamped to zero, as are
    /// eigenvalues below the eigensolver's resolution (`64·d·ε·λ_max` in
    /// absolute value); anything more negative is rejected.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let d = entries.nrows();
        if d == 0 || entries.ncols() != d {
            return Err(GvarError::InvalidMatrix(format!(
                "expected a nonempty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(GvarError::InvalidMatrix(format!("non-finite entry {bad}")));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let diff = (entries[(i, j)] - entries[(j, i)]).abs();
                let scale = entries[(i, j)].abs().max(entries[(j, i)].abs()).max(1.0);
                if diff > SYMMETRY_RTOL * scale {
                    return Err(GvarError::NotSymmetric { row: i, col: j, diff });
                }
            }
        }
        let mut entries = entries;
        linalg::symmetrize(&mut entries);
        let mut spectrum = linalg::sym_eigenvalues(&entries);
        let largest = spectrum[0].max(0.0);
        let floor = 64.0 * d as f64 * f64::EPSILON * largest;
        for lam in spectrum.iter_mut() {
            if *lam < -NEGATIVE_EIG_RTOL * largest || (largest == 0.0 && *lam < 0.0) {
                return Err(GvarError::NotPsd { eigenvalue: *lam, largest });
            }
            if *lam < floor {
                *lam = 0.0;
            }
        }
        Ok(CovMatrix { entries, spectrum })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(GvarError::InvalidMatrix("rows of unequal length".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        Self::diagonal(&vec![1.0; d]).expect("identity is a valid covariance")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Eigenvalues, nonincreasing.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.spectrum[0]
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.spectrum[self.dim() - 1]
    }

    /// Number of eigenvalues that survived clamping.
    pub fn rank(&self) -> usize {
        self.spectrum.iter().filter(|&&l| l > 0.0).count()
    }

    pub fn is_singular(&self) -> bool {
        let largest = self.largest_eigenvalue();
        !(largest > 0.0) || self.smallest_eigenvalue() <= SINGULAR_RTOL * largest
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.entries * factor)
    }

    pub fn inverse(&self) -> Result<Self> {
        if self.is_singular() {
            return Err(GvarError::Singular(format!(
                "covariance has eigenvalue {:e} (largest {:e})",
                self.smallest_eigenvalue(),
                self.largest_eigenvalue()
            )));
        }
        Self::new(linalg::inverse_spd(&self.entries)?)
    }

    pub fn determinant(&self) -> f64 {
        self.spectrum.iter().product()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.entries.row(i).iter().copied().collect())
            .collect()
    }
}

impl Serialize for CovMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CovMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        CovMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Value of `Ψ_k` with its logarithm, which survives underflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PsiValue {
    pub k: usize,
    pub value: f64,
    /// `-inf` when `value == 0`. Serialized as `null` in that case.
    #[serde(with = "log_value_serde")]
    pub log_value: f64,
}

pub(crate) mod log_value_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

fn check_degree(k: usize, d: usize) -> Result<()> {
    if k > d {
        Err(GvarError::Domain(format!("degree k = {k} exceeds dimension d = {d}")))
    } else {
        Ok(())
    }
}

/// All elementary symmetric functions `E_0, …, E_kmax` of `eigs`, by
/// coefficient convolution over prefixes.
pub fn elem_sym_all(eigs: &[f64], kmax: usize) -> Vec<f64> {
    let mut coef = vec![0.0; kmax + 1];
    coef[0] = 1.0;
    for (seen, &lam) in eigs.iter().enumerate() {
        let top = kmax.min(seen + 1);
        for j in (1..=top).rev() {
            coef[j] += lam * coef[j - 1];
        }
    }
    coef
}

/// `E_k(eigs)`.
pub fn elem_sym(eigs: &[f64], k: usize) -> Result<f64> {
    check_degree(k, eigs.len())?;
    if let Some(bad) = eigs.iter().find(|v| !v.is_finite()) {
        return Err(GvarError::Domain(format!("non-finite eigenvalue {bad}")));
    }
    Ok(elem_sym_all(eigs, k)[k])
}

/// `(k + 1)/k!`, the constant linking `Ψ_k` and `E_k`.
pub fn psi_constant(k: usize) -> f64 {
    (k as f64 + 1.0) / factorial(k)
}

/// `Ψ_k(V)`. `k = 0` gives `Ψ_0 ≡ 1`.
pub fn psi(v: &CovMatrix, k: usize) -> Result<PsiValue> {
    check_degree(k, v.dim())?;
    Ok(psi_of_spectrum(v.spectrum(), k))
}

pub(crate) fn psi_of_spectrum(spectrum: &[f64], k: usize) -> PsiValue {
    let scale = spectrum.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    if k == 0 {
        return PsiValue { k, value: 1.0, log_value: 0.0 };
    }
    if scale == 0.0 {
        return PsiValue { k, value: 0.0, log_value: f64::NEG_INFINITY };
    }
    let scaled: Vec<f64> = spectrum.iter().map(|l| l / scale).collect();
    let e_scaled = elem_sym_all(&scaled, k)[k];
    let c = psi_constant(k);
    let value = c * e_scaled * scale.powi(k as i32);
    let log_value = if e_scaled > 0.0 {
        c.ln() + e_scaled.ln() + k as f64 * scale.ln()
    } else {
        f64::NEG_INFINITY
    };
    PsiValue { k, value, log_value }
}

/// `∇Ψ_k[V] = (k+1)/k! · Σ_{i<k} (−1)^i E_{k−i−1}(V) V^i`, accumulated
/// Horner-style so no explicit powers of `V` are formed.
pub fn grad_psi(v: &CovMatrix, k: usize) -> Result<DMatrix<f64>> {
    check_degree(k, v.dim())?;
    Ok(grad_psi_of(v.entries(), v.spectrum(), k))
}

pub(crate) fn grad_psi_of(entries: &DMatrix<f64>, spectrum: &[f64], k: usize) -> DMatrix<f64> {
    let d = entries.nrows();
    if k == 0 {
        return DMatrix::zeros(d, d);
    }
    let e = elem_sym_all(spectrum, k);
    let coef = |i: usize| if i.is_multiple_of(2) { e[k - 1 - i] } else { -e[k - 1 - i] };
    let mut g = DMatrix::identity(d, d) * coef(k - 1);
    for i in (0..k - 1).rev() {
        g = &g * entries;
        for j in 0..d {
            g[(j, j)] += coef(i);
        }
    }
    g *= psi_constant(k);
    linalg::symmetrize(&mut g);
    g
}

/// `Ψ_k(V)` through `E_k(V) = det(V)·E_{d−k}(V⁻¹)`; needs a nonsingular `V`.
pub fn psi_via_complement(v: &CovMatrix, k: usize) -> Result<f64> {
    let d = v.dim();
    check_degree(k, d)?;
    let inv = v.inverse()?;
    let det = v.entries().clone().determinant();
    let e = elem_sym_all(inv.spectrum(), d - k)[d - k];
    Ok(psi_constant(k) * det * e)
}

/// Kiefer's `Φ_p(V)`; `p = ±∞` selects the extreme eigenvalues. For `p ≤ 0`
/// a singular `V` gives the continuous extension `0`.
pub fn phi_p(v: &CovMatrix, p: f64) -> f64 {
    let s = v.spectrum();
    let d = s.len() as f64;
    if p == f64::INFINITY {
        v.largest_eigenvalue()
    } else if p == f64::NEG_INFINITY {
        v.smallest_eigenvalue()
    } else if p <= 0.0 && s.contains(&0.0) {
        0.0
    } else if p == 0.0 {
        (s.iter().map(|l| l.ln()).sum::<f64>() / d).exp()
    } else {
        (s.iter().map(|l| l.powf(p)).sum::<f64>() / d).powf(1.0 / p)
    }
}

fn power_traces(v: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k);
    let mut pow = v.clone();
    for i in 0..k {
        if i > 0 {
            pow = &pow * v;
        }
        out.push(pow.trace());
    }
    out
}

/// `E_k(V)` from the Newton identities on the power sums `tr(V^i)`.
/// Loses precision on ill-conditioned spectra; cross-check use only.
pub fn elem_sym_newton(v: &CovMatrix, k: usize) -> Result<f64> {
    check_degree(k, v.dim())?;
    let p = power_traces(v.entries(), k);
    let mut e = vec![1.0; k + 1];
    for j in 1..=k {
        let mut acc = 0.0;
        for i in 1..=j {
            let term = e[j - i] * p[i - 1];
            acc += if i % 2 == 1 { term } else { -term };
        }
        e[j] = acc / j as f64;
    }
    Ok(e[k])
}

/// `Ψ_k(V)` from the `k×k` determinant of power traces
/// `(k+1)/(k!)² · det[[tr V, k−1, 0, …], [tr V², tr V, k−2, …], …]`.
pub fn psi_trace_determinant(v: &CovMatrix, k: usize) -> Result<f64> {
    check_degree(k, v.dim())?;
    if k == 0 {
        return Ok(1.0);
    }
    let p = power_traces(v.entries(), k);
    let m = DMatrix::from_fn(k, k, |i, j| {
        if j <= i {
            p[i - j]
        } else if j == i + 1 {
            (k - 1 - i) as f64
        } else {
            0.0
        }
    });
    let kf = factorial(k);
    Ok((k as f64 + 1.0) / (kf * kf) * m.determinant())
}
