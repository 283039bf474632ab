//! Sample-based estimation of `ψ_k`.
//!
//! The U-statistic averaging squared simplex volumes over all `(k+1)`-subsets
//! of a sample equals a scaled `Ψ_k` of the empirical covariance matrix, so
//! the minimum-variance unbiased estimate costs one eigen-decomposition.
//! The brute-force average is kept as an oracle for small samples.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvarError, Result};
use crate::linalg::{self, binomial, compensated_sum, factorial, ln_factorial};
use crate::maxdiv::DiscreteMeasure;
use crate::simulate::GeneratorSpec;
use crate::symfun::{self, CovMatrix};

/// Largest number of subsets [`u_stat_oracle`] will enumerate.
pub const ORACLE_SUBSET_LIMIT: u128 = 5_000_000;

/// `n × d` matrix of observations, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: DMatrix<f64>,
}

impl Sample {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(GvarError::InvalidSample("zero-dimensional observations".into()));
        }
        if data.nrows() < 2 {
            return Err(GvarError::InsufficientSample { n: data.nrows(), required: 2 });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GvarError::InvalidSample("non-finite entry".into()));
        }
        Ok(Sample { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(GvarError::InvalidSample("rows of unequal length".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }
}

/// Squared volume of the simplex spanned by `k + 1` points of `ℝ^d`:
/// `det(GᵀG)/(k!)²` with `G = [x_2 − x_1, …, x_{k+1} − x_1]`.
pub fn simplex_squared_volume(points: &[DVector<f64>]) -> Result<f64> {
    let Some(first) = points.first() else {
        return Err(GvarError::Domain("no points".into()));
    };
    let d = first.len();
    let k = points.len() - 1;
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("simplex of dimension {k} in R^{d}")));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(GvarError::Domain("points of unequal dimension".into()));
    }
    let g = DMatrix::from_fn(d, k, |r, c| points[c + 1][r] - first[r]);
    let gram = g.transpose() * g;
    let kf = factorial(k);
    Ok((gram.determinant() / (kf * kf)).max(0.0))
}

/// Empirical mean and unbiased (`1/(n−1)`) covariance.
pub fn empirical_moments(s: &Sample) -> Result<(DVector<f64>, CovMatrix)> {
    let n = s.n();
    let mean = s.data.row_sum().transpose() / n as f64;
    let mut centered = s.data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    // explicit loops: a BLAS-style product may change summation order with
    // buffer alignment, which would break bit-reproducibility
    let d = s.dim();
    let mut cov = DMatrix::zeros(d, d);
    for a in 0..d {
        let ca = centered.column(a);
        for b in 0..=a {
            let cb = centered.column(b);
            let mut acc = 0.0;
            for i in 0..n {
                acc += ca[i] * cb[i];
            }
            cov[(a, b)] = acc / (n as f64 - 1.0);
            cov[(b, a)] = cov[(a, b)];
        }
    }
    Ok((mean, CovMatrix::new(cov)?))
}

/// Covariance through the pairwise-difference form
/// `1/(n(n−1)) Σ_{i<j} (x_i − x_j)(x_i − x_j)ᵀ`.
pub fn pairwise_covariance(s: &Sample) -> Result<CovMatrix> {
    let (n, d) = (s.n(), s.dim());
    let mut acc = DMatrix::zeros(d, d);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = s.data.row(i) - s.data.row(j);
            acc += diff.transpose() * diff;
        }
    }
    CovMatrix::new(acc / (n as f64 * (n as f64 - 1.0)))
}

/// `(n−1)^k (n−k−1)!/(n−1)! = Π_{j=1}^{k} (n−1)/(n−j)`, evaluated in log
/// space for `n > 30`.
pub fn scale_factor(n: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(GvarError::Domain("degree k must be at least 1".into()));
    }
    if n < k + 1 {
        return Err(GvarError::InsufficientSample { n, required: k + 1 });
    }
    let nm1 = (n - 1) as f64;
    if n <= 30 {
        Ok((1..=k).map(|j| nm1 / (n - j) as f64).product())
    } else {
        let log = k as f64 * nm1.ln() + ln_factorial(n - k - 1) - ln_factorial(n - 1);
        Ok(log.exp())
    }
}

/// Unbiased estimate of `ψ_k` with the ingredients that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimateReport {
    pub k: usize,
    pub n: usize,
    pub psi_hat: f64,
    pub scale_factor: f64,
    #[serde(rename = "cov")]
    pub empirical_cov: CovMatrix,
}

impl EstimateReport {
    /// Checks `psiHat = scaleFactor · Ψ_k(cov)` to 1e-12 relative.
    pub fn validate(&self) -> Result<()> {
        let psi = symfun::psi(&self.empirical_cov, self.k)?.value;
        let expect = self.scale_factor * psi;
        let err = (self.psi_hat - expect).abs();
        if err > 1e-12 * expect.abs().max(f64::MIN_POSITIVE) && err > 0.0 {
            return Err(GvarError::Parse(format!(
                "psiHat {} inconsistent with scaleFactor * Psi_k(cov) = {expect}",
                self.psi_hat
            )));
        }
        let expect_factor = scale_factor(self.n, self.k)?;
        if (expect_factor - self.scale_factor).abs() > 1e-12 * expect_factor {
            return Err(GvarError::Parse("scaleFactor inconsistent with n and k".into()));
        }
        Ok(())
    }
}

fn check_estimable(s: &Sample, k: usize) -> Result<()> {
    if k == 0 || k > s.dim() {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={}", s.dim())));
    }
    if s.n() < k + 1 {
        return Err(GvarError::InsufficientSample { n: s.n(), required: k + 1 });
    }
    Ok(())
}

/// `(ψ̂_k)_n = scale_factor(n, k) · Ψ_k(V̂_n)`.
pub fn estimate_psi(s: &Sample, k: usize) -> Result<EstimateReport> {
    check_estimable(s, k)?;
    let (_, cov) = empirical_moments(s)?;
    estimate_from_cov(cov, s.n(), k)
}

pub(crate) fn estimate_from_cov(cov: CovMatrix, n: usize, k: usize) -> Result<EstimateReport> {
    let factor = scale_factor(n, k)?;
    let psi = symfun::psi(&cov, k)?.value;
    Ok(EstimateReport { k, n, psi_hat: factor * psi, scale_factor: factor, empirical_cov: cov })
}

/// Estimate of `ψ_{d−k}` through `det(V̂_n) Ψ_k(V̂_n⁻¹)`; requires `V̂_n`
/// nonsingular, unlike [`estimate_psi`].
pub fn estimate_psi_complement(s: &Sample, k: usize) -> Result<f64> {
    let d = s.dim();
    if k >= d {
        return Err(GvarError::Domain(format!("complement degree k = {k} outside 0..{d}")));
    }
    let target = d - k;
    check_estimable(s, target)?;
    let (_, cov) = empirical_moments(s)?;
    let inv = cov.inverse()?;
    let det = cov.entries().clone().determinant();
    let ratio = (target as f64 + 1.0) * factorial(k) / ((k as f64 + 1.0) * factorial(target));
    Ok(scale_factor(s.n(), target)? * ratio * det * symfun::psi(&inv, k)?.value)
}

/// Brute-force U-statistic: the mean squared volume over all
/// `(k+1)`-subsets of the sample.
pub fn u_stat_oracle(s: &Sample, k: usize) -> Result<f64> {
    check_estimable(s, k)?;
    let n = s.n();
    let count = binomial(n as u64, k as u64 + 1);
    if count > ORACLE_SUBSET_LIMIT {
        return Err(GvarError::TooLarge { count, limit: ORACLE_SUBSET_LIMIT });
    }
    let points: Vec<DVector<f64>> = (0..n).map(|i| s.point(i)).collect();
    // Partial sums per leading index, combined in index order so the result
    // does not depend on the thread count.
    let partials: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|lead| {
            let mut simplex = Vec::with_capacity(k + 1);
            compensated_sum(((lead + 1)..n).combinations(k).map(|rest| {
                simplex.clear();
                simplex.push(points[lead].clone());
                simplex.extend(rest.iter().map(|&i| points[i].clone()));
                simplex_squared_volume(&simplex).expect("dimension checked")
            }))
        })
        .collect();
    Ok(compensated_sum(partials) / count as f64)
}

/// `|I ∩ J|` for two index sets.
pub fn beta_coincidence(i: &[usize], j: &[usize]) -> usize {
    i.iter().filter(|x| j.contains(x)).count()
}

/// `β_{d,k} = Σ_{I,J} |I ∩ J|` over ordered pairs of k-subsets of `{1..d}`,
/// by the closed form `(d−k+1)²/d · C(d, k−1)²`.
pub fn beta_dk(d: usize, k: usize) -> Result<u128> {
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("need 1 <= k <= d, got k = {k}, d = {d}")));
    }
    let c = binomial(d as u64, k as u64 - 1);
    let s = (d - k + 1) as u128;
    Ok(s * s * c * c / d as u128)
}

/// `β_{d,k}` by enumerating all pairs of k-subsets.
pub fn beta_dk_enumerated(d: usize, k: usize) -> u128 {
    let subsets: Vec<Vec<usize>> = (0..d).combinations(k).collect();
    subsets
        .iter()
        .map(|i| subsets.iter().map(|j| beta_coincidence(i, j) as u128).sum::<u128>())
        .sum()
}

/// Distribution information for the asymptotic variance constant
/// `ω = var[h(x)]`, `h(x) = E{V_k²(x_1, …, x_{k+1}) | x_1 = x}`.
#[derive(Debug, Clone)]
pub enum OmegaSpec {
    /// Normal measure with the given covariance.
    Normal(CovMatrix),
    /// i.i.d. coordinates with variance `σ²` and standardized fourth moment `E z⁴`.
    IidCoordinates { variance: f64, fourth_moment: f64, dim: usize },
    /// Normal measure with diagonal covariance `diag(λ_1, …, λ_d)`.
    DiagonalNormal(Vec<f64>),
    /// Exact evaluation for a finitely supported measure.
    Discrete(DiscreteMeasure),
    /// Sample average of the exact conditional kernel over `draws` points.
    MonteCarlo { generator: GeneratorSpec, draws: usize },
}

/// `ω` with a standard error when it was estimated by simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OmegaValue {
    pub value: f64,
    pub std_error: Option<f64>,
}

impl OmegaSpec {
    pub fn dim(&self) -> usize {
        match self {
            OmegaSpec::Normal(v) => v.dim(),
            OmegaSpec::IidCoordinates { dim, .. } => *dim,
            OmegaSpec::DiagonalNormal(l) => l.len(),
            OmegaSpec::Discrete(m) => m.dim(),
            OmegaSpec::MonteCarlo { generator, .. } => generator.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OmegaSpec::IidCoordinates { variance, fourth_moment, dim } => {
                if !(*variance > 0.0) || !(*fourth_moment >= 1.0) || *dim == 0 {
                    return Err(GvarError::Domain(format!(
                        "iid coordinates need variance > 0, E z^4 >= 1, dim >= 1; got {variance}, {fourth_moment}, {dim}"
                    )));
                }
            }
            OmegaSpec::DiagonalNormal(l) => {
                if l.is_empty() || l.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(GvarError::Domain("diagonal variances must be finite and >= 0".into()));
                }
            }
            OmegaSpec::MonteCarlo { generator, draws } => {
                generator.validate()?;
                if *draws < 2 {
                    return Err(GvarError::Domain("Monte-Carlo omega needs at least 2 draws".into()));
                }
            }
            OmegaSpec::Normal(_) | OmegaSpec::Discrete(_) => {}
        }
        Ok(())
    }
}

/// A k-subset of coordinates whose principal covariance block is nonsingular.
struct ActiveSubset {
    idx: Vec<usize>,
    det: f64,
    inv: DMatrix<f64>,
}

fn active_subsets(v: &CovMatrix, k: usize) -> Result<Vec<ActiveSubset>> {
    (0..v.dim())
        .combinations(k)
        .par_bridge()
        .map(|idx| {
            let block = CovMatrix::new(linalg::principal_submatrix(v.entries(), &idx))?;
            // det[{V}_{I×I}] = 0 terms carry a zero coefficient.
            if block.is_singular() {
                return Ok(None);
            }
            let inv = linalg::inverse_spd(block.entries())?;
            Ok(Some(ActiveSubset { det: block.determinant(), inv, idx }))
        })
        .collect::<Result<Vec<_>>>()
        .map(|mut v| {
            let mut out: Vec<ActiveSubset> = v.drain(..).flatten().collect();
            out.sort_by(|a, b| a.idx.cmp(&b.idx));
            out
        })
}

/// `Σ_I det[{V}_{I×I}] · (x−E)_Iᵀ {V}_{I×I}⁻¹ (x−E)_I`.
fn subset_kernel(subsets: &[ActiveSubset], centered: &DVector<f64>) -> f64 {
    compensated_sum(subsets.iter().map(|s| {
        let u = DVector::from_iterator(s.idx.len(), s.idx.iter().map(|&i| centered[i]));
        s.det * linalg::quad_form(&s.inv, &u)
    }))
}

/// Asymptotic variance constant `ω` of `(ψ̂_k)_n`.
pub fn omega(spec: &OmegaSpec, k: usize) -> Result<f64> {
    omega_detailed(spec, k).map(|o| o.value)
}

pub fn omega_detailed(spec: &OmegaSpec, k: usize) -> Result<OmegaValue> {
    spec.validate()?;
    let d = spec.dim();
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    let kf2 = factorial(k).powi(2);
    let exact = |value: f64| Ok(OmegaValue { value, std_error: None });
    match spec {
        OmegaSpec::IidCoordinates { variance, fourth_moment, dim } => {
            let beta = beta_dk(*dim, k)? as f64;
            exact(variance.powi(2 * k as i32) / kf2 * (fourth_moment - 1.0) * beta)
        }
        OmegaSpec::DiagonalNormal(lambda) => {
            // Σ_{I,J} |I∩J| Π_I λ Π_J λ = Σ_i λ_i² E_{k−1}(λ without λ_i)²
            let total = compensated_sum((0..d).map(|i| {
                let rest: Vec<f64> =
                    lambda.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &l)| l).collect();
                let e = symfun::elem_sym_all(&rest, k - 1)[k - 1];
                lambda[i] * lambda[i] * e * e
            }));
            exact(2.0 / kf2 * total)
        }
        OmegaSpec::Normal(v) => {
            let subsets = active_subsets(v, k)?;
            let m = v.entries();
            let rows: Vec<f64> = subsets
                .par_iter()
                .map(|si| {
                    compensated_sum(subsets.iter().map(|sj| {
                        let vji = linalg::cross_submatrix(m, &sj.idx, &si.idx);
                        let vij = vji.transpose();
                        let prod = &sj.inv * vji * &si.inv * vij;
                        si.det * sj.det * prod.trace()
                    }))
                })
                .collect();
            exact(2.0 / kf2 * compensated_sum(rows))
        }
        OmegaSpec::Discrete(mu) => {
            let (mean, cov) = mu.moments()?;
            let subsets = active_subsets(&cov, k)?;
            let g: Vec<f64> = (0..mu.len())
                .map(|i| subset_kernel(&subsets, &(mu.point(i) - &mean)))
                .collect();
            let w = mu.weights();
            let gbar = compensated_sum(g.iter().zip(w).map(|(g, w)| g * w));
            let var = compensated_sum(g.iter().zip(w).map(|(g, w)| w * (g - gbar).powi(2)));
            exact(var / kf2)
        }
        OmegaSpec::MonteCarlo { generator, draws } => {
            let (mean, cov) = generator.moments()?;
            let subsets = active_subsets(&cov, k)?;
            let center = k as f64 * compensated_sum(subsets.iter().map(|s| s.det));
            let points = generator.draw_points(u64::MAX, *draws)?;
            let dev: Vec<f64> = (0..*draws)
                .into_par_iter()
                .map(|i| {
                    let u = points.row(i).transpose() - &mean;
                    (subset_kernel(&subsets, &u) - center).powi(2) / kf2
                })
                .collect();
            let m = *draws as f64;
            let value = linalg::pairwise_sum(&dev) / m;
            let spread = compensated_sum(dev.iter().map(|x| (x - value).powi(2))) / (m - 1.0);
            Ok(OmegaValue { value, std_error: Some((spread / m).sqrt()) })
        }
    }
}

/// `(k+1)² ω / n`, the leading term of `var[(ψ̂_k)_n]`.
pub fn asymptotic_variance(spec: &OmegaSpec, k: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(GvarError::Domain("n must be at least 1".into()));
    }
    Ok((k as f64 + 1.0).powi(2) * omega(spec, k)? / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn simplex_volume_examples() {
        let tri = [v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        assert!((simplex_squared_volume(&tri).unwrap() - 0.25).abs() < 1e-15);
        let line = [v(&[0.0, 0.0]), v(&[1.0, 1.0]), v(&[2.0, 2.0])];
        assert!(simplex_squared_volume(&line).unwrap().abs() < 1e-15);
        let too_many = [v(&[0.0]), v(&[1.0]), v(&[2.0])];
        assert!(matches!(simplex_squared_volume(&too_many), Err(GvarError::Domain(_))));
    }

    #[test]
    fn regular_simplex_volume() {
        // vertices of a regular k-simplex on the sphere of radius rho in R^k
        for k in 1..=5usize {
            let rho = 1.7;
            let kf = k as f64;
            // standard basis of R^{k+1} centred and rescaled
            let c = 1.0 / (kf + 1.0);
            let raw: Vec<DVector<f64>> = (0..=k)
                .map(|i| DVector::from_fn(k + 1, |j, _| if i == j { 1.0 - c } else { -c }))
                .collect();
            let norm = raw[0].norm();
            let pts: Vec<DVector<f64>> = raw.iter().map(|p| p * (rho / norm)).collect();
            let expect = rho.powi(2 * k as i32) * (kf + 1.0).powi(k as i32 + 1)
                / (kf.powi(k as i32) * factorial(k).powi(2));
            assert!(rel(simplex_squared_volume(&pts).unwrap(), expect) < 1e-12, "k={k}");
        }
    }

    #[test]
    fn moments_examples() {
        let s = Sample::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let (mean, cov) = empirical_moments(&s).unwrap();
        assert_eq!(mean[0], 0.5);
        assert!((cov.entries()[(0, 0)] - 0.5).abs() < 1e-15);
        let same = Sample::from_rows(&vec![vec![1.0, -2.0, 3.0]; 5]).unwrap();
        let (_, cov) = empirical_moments(&same).unwrap();
        assert_eq!(cov.entries().norm(), 0.0);
        assert!(matches!(Sample::from_rows(&[vec![1.0]]), Err(GvarError::InsufficientSample { .. })));
    }

    #[test]
    fn scale_factor_examples() {
        for n in 2..60 {
            assert!((scale_factor(n, 1).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((scale_factor(4, 2).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(scale_factor(3, 3), Err(GvarError::InsufficientSample { .. })));
        // n = k + 1 is accepted: k^k / k!
        assert!((scale_factor(4, 3).unwrap() - 27.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_dk(10, 3).unwrap(), 12960);
        assert_eq!(beta_dk(2, 1).unwrap(), 2);
        assert_eq!(beta_dk_enumerated(2, 1), 2);
        for d in 1..=8 {
            assert_eq!(beta_dk(d, d).unwrap(), d as u128);
        }
        assert_eq!(beta_coincidence(&[0, 2, 5], &[2, 3, 5]), 2);
        assert!(beta_dk(3, 0).is_err());
    }

    #[test]
    fn omega_iid_uniform() {
        let spec = OmegaSpec::IidCoordinates { variance: 1.0 / 12.0, fourth_moment: 9.0 / 5.0, dim: 10 };
        for k in 1..=10 {
            let expect = (1.0f64 / 12.0).powi(2 * k as i32) / factorial(k).powi(2) * 0.8
                * beta_dk(10, k).unwrap() as f64;
            assert!(rel(omega(&spec, k).unwrap(), expect) < 1e-14);
        }
        let bad = OmegaSpec::IidCoordinates { variance: 0.0, fourth_moment: 3.0, dim: 2 };
        assert!(omega(&bad, 1).is_err());
    }

    #[test]
    fn omega_diagonal_forms_agree() {
        let lambda = vec![0.5, 1.0, 2.0, 0.3];
        let diag = OmegaSpec::DiagonalNormal(lambda.clone());
        let normal = OmegaSpec::Normal(CovMatrix::diagonal(&lambda).unwrap());
        for k in 1..=4 {
            // enumeration of Σ β(I,J) Π_I λ Π_J λ
            let subsets: Vec<Vec<usize>> = (0..4).combinations(k).collect();
            let mut total = 0.0;
            for i in &subsets {
                for j in &subsets {
                    let pi: f64 = i.iter().map(|&a| lambda[a]).product();
                    let pj: f64 = j.iter().map(|&a| lambda[a]).product();
                    total += beta_coincidence(i, j) as f64 * pi * pj;
                }
            }
            let expect = 2.0 / factorial(k).powi(2) * total;
            assert!(rel(omega(&diag, k).unwrap(), expect) < 1e-12);
            assert!(rel(omega(&normal, k).unwrap(), expect) < 1e-12);
        }
        // all equal, k = d: single subset pair with β = d
        let lam: f64 = 0.7;
        let eq = OmegaSpec::DiagonalNormal(vec![lam; 3]);
        let expect = 2.0 * 3.0 * lam.powi(6) / 36.0;
        assert!(rel(omega(&eq, 3).unwrap(), expect) < 1e-14);
    }

    #[test]
    fn asymptotic_variance_scaling() {
        let spec = OmegaSpec::IidCoordinates { variance: 1.0, fourth_moment: 1.0, dim: 3 };
        assert_eq!(asymptotic_variance(&spec, 2, 10).unwrap(), 0.0);
        let spec = OmegaSpec::IidCoordinates { variance: 2.0, fourth_moment: 3.0, dim: 3 };
        let a = asymptotic_variance(&spec, 1, 50).unwrap();
        let b = asymptotic_variance(&spec, 1, 100).unwrap();
        assert!(rel(a, 2.0 * b) < 1e-15);
        assert!(asymptotic_variance(&spec, 1, 0).is_err());
    }
}
