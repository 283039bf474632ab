//! Maximum-diversity measures on a finite candidate set.
//!
//! A measure `μ` with `Ψ_k(V_μ) > 0` maximizes `ψ_k` over measures on `𝒳`
//! iff every `x ∈ 𝒳` has directional score
//!
//! ```text
//! s_k(μ, x) = (x − E_μ)ᵀ ∇Ψ_k[V_μ] (x − E_μ) / Ψ_k(V_μ) ≤ k,
//! ```
//!
//! with equality on the support of `μ`. The same quantities give the dual
//! certificate: the ellipsoid `{x : (x − E_μ)ᵀ M (x − E_μ) ≤ 1}` with
//! `M = ∇Ψ_k[V_μ]/(k Ψ_k(V_μ))` encloses `𝒳` exactly at optimality.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvarError, Result};
use crate::linalg::{self, compensated_sum};
use crate::symfun::{self, CovMatrix};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Probability measure with finite support in `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: DMatrix<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = support.nrows();
        if m == 0 || support.ncols() == 0 {
            return Err(GvarError::InvalidMeasure("empty support".into()));
        }
        if weights.len() != m {
            return Err(GvarError::InvalidMeasure(format!(
                "{} weights for {m} support points",
                weights.len()
            )));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(GvarError::InvalidMeasure("non-finite support point".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(GvarError::InvalidMeasure(format!("weight {w} is not a finite nonnegative number")));
        }
        let total: f64 = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(GvarError::InvalidMeasure(format!("weights sum to {total}")));
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if support.row(i) == support.row(j) {
                    return Err(GvarError::InvalidMeasure(format!(
                        "support points {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(DiscreteMeasure { support, weights })
    }

    pub fn from_rows(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let d = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != d) {
            return Err(GvarError::InvalidMeasure("points of unequal dimension".into()));
        }
        Self::new(DMatrix::from_fn(points.len(), d, |i, j| points[i][j]), weights)
    }

    pub fn uniform(points: &[Vec<f64>]) -> Result<Self> {
        let m = points.len();
        Self::from_rows(points, vec![1.0 / m as f64; m])
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::from_rows(&[point.to_vec()], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    pub fn support(&self) -> &DMatrix<f64> {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.support.row(i).transpose()
    }

    /// `(E_μ, V_μ)`.
    pub fn moments(&self) -> Result<(DVector<f64>, CovMatrix)> {
        weighted_moments(&self.support, &self.weights)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.support.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    support: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureRepr { support: self.to_rows(), weights: self.weights.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MeasureRepr::deserialize(d)?;
        DiscreteMeasure::from_rows(&r.support, r.weights).map_err(serde::de::Error::custom)
    }
}

/// Mean and covariance of the measure putting `weights[i]` on row `i`.
pub(crate) fn weighted_moments(points: &DMatrix<f64>, weights: &[f64]) -> Result<(DVector<f64>, CovMatrix)> {
    let d = points.ncols();
    let mut mean = DVector::zeros(d);
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            mean.axpy(w, &points.row(i).transpose(), 1.0);
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            let u = points.row(i).transpose() - &mean;
            cov.ger(w, &u, &u, 1.0);
        }
    }
    linalg::symmetrize(&mut cov);
    Ok((mean, CovMatrix::new(cov)?))
}

pub fn measure_moments(mu: &DiscreteMeasure) -> Result<(DVector<f64>, CovMatrix)> {
    mu.moments()
}

/// Mean, covariance, `Ψ_k` and `∇Ψ_k` of a measure.
struct ScoreContext {
    mean: DVector<f64>,
    cov: CovMatrix,
    psi: f64,
    grad: DMatrix<f64>,
    k: usize,
}

impl ScoreContext {
    fn new(mean: DVector<f64>, cov: CovMatrix, k: usize) -> Result<Self> {
        let psi = symfun::psi(&cov, k)?.value;
        let grad = symfun::grad_psi(&cov, k)?;
        Ok(ScoreContext { mean, cov, psi, grad, k })
    }

    fn of_measure(mu: &DiscreteMeasure, k: usize) -> Result<Self> {
        let (mean, cov) = mu.moments()?;
        Self::new(mean, cov, k)
    }

    fn require_positive(&self) -> Result<()> {
        if self.psi > 0.0 {
            Ok(())
        } else {
            Err(GvarError::DegenerateMeasure(format!(
                "psi_{} = 0 (covariance rank {})",
                self.k,
                self.cov.rank()
            )))
        }
    }

    fn score(&self, x: &DVector<f64>) -> f64 {
        let u = x - &self.mean;
        linalg::quad_form(&self.grad, &u) / self.psi
    }

    fn scores(&self, points: &DMatrix<f64>) -> Vec<f64> {
        (0..points.nrows())
            .into_par_iter()
            .map(|i| self.score(&points.row(i).transpose()))
            .collect()
    }
}

fn check_points(points: &DMatrix<f64>, d: usize) -> Result<()> {
    if points.ncols() != d {
        return Err(GvarError::Domain(format!(
            "candidates have dimension {}, measure has {d}",
            points.ncols()
        )));
    }
    if points.nrows() == 0 {
        return Err(GvarError::Domain("no candidates".into()));
    }
    Ok(())
}

/// `(x − E_μ)ᵀ ∇Ψ_k[V_μ] (x − E_μ) / Ψ_k(V_μ)`.
pub fn directional_score(mu: &DiscreteMeasure, x: &DVector<f64>, k: usize) -> Result<f64> {
    if x.len() != mu.dim() {
        return Err(GvarError::Domain("point dimension mismatch".into()));
    }
    let ctx = ScoreContext::of_measure(mu, k)?;
    ctx.require_positive()?;
    Ok(ctx.score(x))
}

/// Optimality certificate for a measure against a candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CertificateReport {
    pub k: usize,
    /// `max_x s_k(μ, x) − k` over all candidates.
    pub gap: f64,
    /// Candidate index attaining the maximum score (lowest index on ties).
    pub worst_point: usize,
    /// `max |s_k(μ, x) − k|` over the support of `μ`.
    pub support_equality_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<DualCertificate>,
    /// Whether an optimizer reached its gap tolerance; `true` for plain
    /// certification of a given measure.
    pub converged: bool,
    pub iterations: usize,
}

impl CertificateReport {
    pub fn is_optimal(&self, tol: f64) -> bool {
        self.gap <= tol
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn certificate_from_scores(
    k: usize,
    bound: f64,
    candidate_scores: &[f64],
    support_scores: &[f64],
) -> CertificateReport {
    let worst = argmax_lowest(candidate_scores);
    CertificateReport {
        k,
        gap: candidate_scores[worst] - bound,
        worst_point: worst,
        support_equality_residual: support_scores.iter().fold(0.0, |m, s| m.max((s - bound).abs())),
        dual: None,
        converged: true,
        iterations: 0,
    }
}

fn positive_support(mu: &DiscreteMeasure) -> DMatrix<f64> {
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weights()[i] > 0.0).collect();
    mu.support().select_rows(&rows)
}

/// Directional-derivative certificate of `μ` over `candidates` (rows).
pub fn optimality_gap(mu: &DiscreteMeasure, candidates: &DMatrix<f64>, k: usize) -> Result<CertificateReport> {
    check_points(candidates, mu.dim())?;
    let ctx = ScoreContext::of_measure(mu, k)?;
    ctx.require_positive()?;
    let scores = ctx.scores(candidates);
    let support_scores = ctx.scores(&positive_support(mu));
    Ok(certificate_from_scores(k, k as f64, &scores, &support_scores))
}

/// Potential `P_{k,μ}(x) = ψ_k(μ, …, μ, δ_x)`: the expected squared volume
/// of a simplex with one vertex frozen at `x`.
pub fn potential(mu: &DiscreteMeasure, x: &DVector<f64>, k: usize) -> Result<f64> {
    if x.len() != mu.dim() {
        return Err(GvarError::Domain("point dimension mismatch".into()));
    }
    let ctx = ScoreContext::of_measure(mu, k)?;
    let u = x - &ctx.mean;
    let directional = linalg::quad_form(&ctx.grad, &u) - k as f64 * ctx.psi;
    Ok(ctx.psi + directional / (k as f64 + 1.0))
}

/// Stationary-point complement test: with `W = V_μ⁻¹`, scores
/// `(x−E)ᵀ [W − W ∇Ψ_{d−k}[W] W / Ψ_{d−k}(W)] (x−E)` are compared to `k`.
pub fn complement_condition(
    mu: &DiscreteMeasure,
    candidates: &DMatrix<f64>,
    k: usize,
) -> Result<CertificateReport> {
    let d = mu.dim();
    check_points(candidates, d)?;
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    let (mean, cov) = mu.moments()?;
    let w = cov.inverse()?;
    let comp = d - k;
    let psi_c = symfun::psi(&w, comp)?.value;
    let grad_c = symfun::grad_psi(&w, comp)?;
    let wm = w.entries();
    let mut a = wm - wm * grad_c * wm / psi_c;
    linalg::symmetrize(&mut a);
    let score = |points: &DMatrix<f64>| -> Vec<f64> {
        (0..points.nrows())
            .into_par_iter()
            .map(|i| linalg::quad_form(&a, &(points.row(i).transpose() - &mean)))
            .collect()
    };
    let scores = score(candidates);
    let support_scores = score(&positive_support(mu));
    Ok(certificate_from_scores(k, k as f64, &scores, &support_scores))
}

/// Ellipsoid certificate `ℰ(M, c)` built from `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DualCertificate {
    #[serde(with = "matrix_rows")]
    pub m: DMatrix<f64>,
    pub center: Vec<f64>,
    /// `|tr(V_μ M) − 1|`.
    pub trace_residual: f64,
    /// `max_x (x − c)ᵀ M (x − c) − 1` over the candidates.
    pub containment_slack: f64,
    /// Polar function `φ_k^∞(M)`, evaluated numerically.
    pub polar_value: f64,
    /// `|Ψ_k^{1/k}(V_μ) φ_k^∞(M) − 1|`.
    pub duality_residual: f64,
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
    }
}

/// `M_*(V) = ∇Ψ_k[V] / (k Ψ_k(V))`.
pub fn dual_matrix(v: &CovMatrix, k: usize) -> Result<DMatrix<f64>> {
    let psi = symfun::psi(v, k)?.value;
    if !(psi > 0.0) {
        return Err(GvarError::DegenerateMeasure(format!("psi_{k} = 0")));
    }
    Ok(symfun::grad_psi(v, k)? / (k as f64 * psi))
}

pub fn dual_certificate(mu: &DiscreteMeasure, candidates: &DMatrix<f64>, k: usize) -> Result<DualCertificate> {
    check_points(candidates, mu.dim())?;
    let ctx = ScoreContext::of_measure(mu, k)?;
    ctx.require_positive()?;
    let m = &ctx.grad / (k as f64 * ctx.psi);
    let trace_residual = ((ctx.cov.entries() * &m).trace() - 1.0).abs();
    let containment = (0..candidates.nrows())
        .into_par_iter()
        .map(|i| linalg::quad_form(&m, &(candidates.row(i).transpose() - &ctx.mean)))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let polar_value = polar_function(&m, k)?;
    let duality_residual = (ctx.psi.powf(1.0 / k as f64) * polar_value - 1.0).abs();
    Ok(DualCertificate {
        m,
        center: ctx.mean.iter().copied().collect(),
        trace_residual,
        containment_slack: containment - 1.0,
        polar_value,
        duality_residual,
    })
}

/// `φ_k^∞(M) = inf { Ψ_k^{−1/k}(V) : V ⪰ 0, tr(MV) = 1 }`.
///
/// By orthogonal invariance and Schur-concavity of `E_k`, the infimum is
/// attained by some `V` sharing the eigenvectors of `M`, which reduces the
/// problem to maximizing `E_k(y_1/m_1, …, y_d/m_d)` over the simplex.
/// Solved by the multiplicative fixed-point iteration with a KKT stop.
pub fn polar_function(m: &DMatrix<f64>, k: usize) -> Result<f64> {
    let mm = CovMatrix::new(m.clone())?;
    let d = mm.dim();
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    let eig = mm.spectrum();
    if eig.iter().any(|&x| x <= 0.0) {
        // a free direction makes Ψ_k unbounded on the constraint set
        return Ok(0.0);
    }
    let kf = k as f64;
    let best_psi = if k == 1 {
        2.0 / eig[d - 1]
    } else if k == d {
        let v: Vec<f64> = eig.iter().map(|&mi| 1.0 / (d as f64 * mi)).collect();
        symfun::psi_of_spectrum(&v, k).value
    } else {
        let mut y = vec![1.0 / d as f64; d];
        let mut v = vec![0.0; d];
        let mut h = vec![0.0; d];
        for _ in 0..200_000 {
            for i in 0..d {
                v[i] = y[i] / eig[i];
            }
            let e_k = symfun::elem_sym_all(&v, k)[k];
            let mut max_ratio = 0.0f64;
            for i in 0..d {
                let rest: Vec<f64> = v.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect();
                let partial = symfun::elem_sym_all(&rest, k - 1)[k - 1];
                h[i] = v[i] * partial;
                max_ratio = max_ratio.max(partial / eig[i] / (kf * e_k));
            }
            if max_ratio - 1.0 <= 1e-13 {
                break;
            }
            let total: f64 = h.iter().sum();
            for i in 0..d {
                y[i] = h[i] / total;
            }
        }
        for i in 0..d {
            v[i] = y[i] / eig[i];
        }
        symfun::psi_of_spectrum(&v, k).value
    };
    Ok(best_psi.powf(-1.0 / kf))
}

/// `φ_1^∞(M) = λ_min(M)/2`.
pub fn polar_k1_closed_form(m: &CovMatrix) -> f64 {
    m.smallest_eigenvalue() / 2.0
}

/// `φ_2^∞(M) = Ψ_2^{−1/2}(V_*)` with
/// `V_* = [I tr(M)/(d−1) − M] / [tr²(M)/(d−1) − tr(M²)]`, valid when
/// `I ⪰ (d−1)M/tr(M)`; `None` otherwise.
pub fn polar_k2_closed_form(m: &CovMatrix) -> Option<f64> {
    let d = m.dim();
    if d < 2 {
        return None;
    }
    let t = m.trace();
    let dm1 = (d - 1) as f64;
    if m.largest_eigenvalue() * dm1 > t * (1.0 + 1e-12) {
        return None;
    }
    let denom = t * t / dm1 - (m.entries() * m.entries()).trace();
    if !(denom > 0.0) {
        return None;
    }
    let v = (DMatrix::identity(d, d) * (t / dm1) - m.entries()) / denom;
    let v = CovMatrix::new(v).ok()?;
    let psi = symfun::psi(&v, 2).ok()?.value;
    Some(psi.powf(-0.5))
}

/// Options for [`solve_max_div`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MaxDivOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Period of the multiplicative reweighting sweep.
    pub reweight_every: usize,
    /// Weights below this are dropped and the rest renormalized.
    pub prune_below: f64,
}

impl Default for MaxDivOptions {
    fn default() -> Self {
        MaxDivOptions { tol: 1e-7, max_iter: 100_000, reweight_every: 20, prune_below: 1e-10 }
    }
}

/// Greedy affinely independent subset: start from the point farthest from
/// the centroid, then repeatedly add the point with the largest residual
/// off the current affine hull (equivalently, the largest simplex volume).
pub fn greedy_affine_subset(points: &DMatrix<f64>, max_size: usize) -> Vec<usize> {
    let (m, d) = (points.nrows(), points.ncols());
    if m == 0 {
        return Vec::new();
    }
    let centroid = points.row_mean().transpose();
    let dist: Vec<f64> = (0..m).map(|i| (points.row(i).transpose() - &centroid).norm_squared()).collect();
    let first = argmax_lowest(&dist);
    let origin = points.row(first).transpose();
    let mut chosen = vec![first];
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let scale = (0..m)
        .map(|i| (points.row(i).transpose() - &origin).norm_squared())
        .fold(0.0, f64::max);
    while chosen.len() < max_size.min(d + 1) {
        let residual = |i: usize| -> DVector<f64> {
            let mut r = points.row(i).transpose() - &origin;
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&r);
                    r.axpy(-c, q, 1.0);
                }
            }
            r
        };
        let norms: Vec<f64> = (0..m).map(|i| residual(i).norm_squared()).collect();
        let best = argmax_lowest(&norms);
        if !(norms[best] > 1e-20 * scale) || scale == 0.0 {
            break;
        }
        let r = residual(best);
        basis.push(&r / r.norm());
        chosen.push(best);
    }
    chosen
}

/// Objective trace of a solver run: `ψ_k^{1/k}` after every accepted step.
pub type ObjectiveTrace = Vec<f64>;

/// Frank–Wolfe with away steps on the candidate weights.
///
/// Moving mass `α` toward candidate `x` (or away from it when `α < 0`)
/// gives `V_α = (1−α)(V + α uuᵀ)` with `u = x − E_μ`, and `Ψ_k` is affine
/// along rank-one updates, so `Ψ_k(V_α) = (1−α)^k Ψ_k(V)(1 + α s)` where `s`
/// is the directional score. The exact line search is then
/// `α = (s − k)/(s(k + 1))`, clipped to keep weights nonnegative.
pub fn solve_max_div(
    candidates: &DMatrix<f64>,
    k: usize,
    opts: &MaxDivOptions,
) -> Result<(DiscreteMeasure, CertificateReport)> {
    solve_max_div_traced(candidates, k, opts).map(|(mu, report, _)| (mu, report))
}

pub fn solve_max_div_traced(
    candidates: &DMatrix<f64>,
    k: usize,
    opts: &MaxDivOptions,
) -> Result<(DiscreteMeasure, CertificateReport, ObjectiveTrace)> {
    let (m, d) = (candidates.nrows(), candidates.ncols());
    if d == 0 || m == 0 {
        return Err(GvarError::DegenerateInput("empty candidate set".into()));
    }
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    if candidates.iter().any(|v| !v.is_finite()) {
        return Err(GvarError::DegenerateInput("non-finite candidate".into()));
    }
    let start = greedy_affine_subset(candidates, d + 1);
    if start.len() < k + 1 {
        return Err(GvarError::DegenerateInput(format!(
            "candidates span an affine space of dimension {}, need {k}",
            start.len() - 1
        )));
    }
    let kf = k as f64;
    let mut w = vec![0.0; m];
    for &i in &start {
        w[i] = 1.0 / start.len() as f64;
    }
    let context = |w: &[f64]| -> Result<ScoreContext> {
        let (mean, cov) = weighted_moments(candidates, w)?;
        ScoreContext::new(mean, cov, k)
    };
    let mut ctx = context(&w)?;
    let mut trace = vec![ctx.psi.powf(1.0 / kf)];
    let mut iterations = 0;
    let mut converged = false;
    let mut scores;
    loop {
        scores = ctx.scores(candidates);
        let toward = argmax_lowest(&scores);
        let gap = scores[toward] - kf;
        if gap <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        if opts.reweight_every > 0 && iterations % opts.reweight_every == 0 {
            let trial: Vec<f64> = w.iter().zip(&scores).map(|(wi, si)| wi * si.max(0.0) / kf).collect();
            let total: f64 = trial.iter().sum();
            let trial: Vec<f64> = trial.iter().map(|x| x / total).collect();
            if let Ok(next) = context(&trial) {
                if next.psi > ctx.psi {
                    w = trial;
                    prune(&mut w, opts.prune_below);
                    ctx = context(&w)?;
                    trace.push(ctx.psi.powf(1.0 / kf));
                    continue;
                }
            }
        }

        // away candidate: lowest score on the current support
        let away = (0..m)
            .filter(|&i| w[i] > 0.0)
            .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)))
            .expect("support is nonempty");
        let away_gap = kf - scores[away];
        let (j, alpha) = if gap >= away_gap {
            let s = scores[toward];
            (toward, (s - kf) / (s * (kf + 1.0)))
        } else {
            let s = scores[away];
            let limit = -w[away] / (1.0 - w[away]);
            let alpha = if s > 0.0 { ((s - kf) / (s * (kf + 1.0))).max(limit) } else { limit };
            (away, alpha)
        };
        if alpha == 0.0 || !alpha.is_finite() {
            break;
        }
        for wi in w.iter_mut() {
            *wi *= 1.0 - alpha;
        }
        w[j] += alpha;
        if w[j] < 0.0 {
            w[j] = 0.0;
        }
        prune(&mut w, opts.prune_below);
        let next = context(&w)?;
        // exact line search can only gain; rounding is the only source of loss
        trace.push(next.psi.powf(1.0 / kf));
        ctx = next;
    }

    let support: Vec<usize> = (0..m).filter(|&i| w[i] > 0.0).collect();
    let mu = merge_duplicates(candidates, &support, &w)?;
    let support_scores: Vec<f64> = support.iter().map(|&i| scores[i]).collect();
    let mut report = certificate_from_scores(k, kf, &scores, &support_scores);
    report.converged = converged;
    report.iterations = iterations;
    Ok((mu, report, trace))
}

fn prune(w: &mut [f64], below: f64) {
    for wi in w.iter_mut() {
        if *wi < below {
            *wi = 0.0;
        }
    }
    let total: f64 = compensated_sum(w.iter().copied());
    for wi in w.iter_mut() {
        *wi /= total;
    }
}

fn merge_duplicates(points: &DMatrix<f64>, idx: &[usize], w: &[f64]) -> Result<DiscreteMeasure> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &i in idx {
        let row: Vec<f64> = points.row(i).iter().copied().collect();
        match rows.iter().position(|r| *r == row) {
            Some(p) => weights[p] += w[i],
            None => {
                rows.push(row);
                weights.push(w[i]);
            }
        }
    }
    let total: f64 = compensated_sum(weights.iter().copied());
    let weights = weights.into_iter().map(|x| x / total).collect();
    DiscreteMeasure::from_rows(&rows, weights)
}

/// JSON form of a solved or certified measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MaxDivReport {
    pub support: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `ψ_k` keyed by `k`.
    pub psi: BTreeMap<String, f64>,
    pub certificate: CertificateReport,
}

impl MaxDivReport {
    pub fn new(mu: &DiscreteMeasure, certificate: CertificateReport) -> Result<Self> {
        let (_, cov) = mu.moments()?;
        let k = certificate.k;
        let mut psi = BTreeMap::new();
        psi.insert(k.to_string(), symfun::psi(&cov, k)?.value);
        Ok(MaxDivReport { support: mu.to_rows(), weights: mu.weights().to_vec(), psi, certificate })
    }

    /// Re-derives the measure, `ψ_k` and the support residual.
    pub fn validate(&self) -> Result<()> {
        let mu = DiscreteMeasure::from_rows(&self.support, self.weights.clone())?;
        let k = self.certificate.k;
        let ctx = ScoreContext::of_measure(&mu, k)?;
        let reported = self
            .psi
            .get(&k.to_string())
            .ok_or_else(|| GvarError::Parse(format!("missing psi for k = {k}")))?;
        if (reported - ctx.psi).abs() > 1e-10 * ctx.psi.abs().max(1e-300) {
            return Err(GvarError::Parse(format!("psi {reported} does not match support ({})", ctx.psi)));
        }
        if ctx.psi > 0.0 {
            let residual = ctx
                .scores(&positive_support(&mu))
                .iter()
                .fold(0.0f64, |acc, s| acc.max((s - k as f64).abs()));
            if (residual - self.certificate.support_equality_residual).abs() > 1e-8 {
                return Err(GvarError::Parse("support residual does not match support".into()));
            }
        }
        Ok(())
    }
}
