//! `ψ̃_k`-optimal approximate designs for linear regression.
//!
//! For a design `ξ` with information matrix `M(ξ) = Σ_j w_j f(t_j) f(t_j)ᵀ`
//! the criterion is `ψ̃_k(ξ) = Ψ_k^{−1/k}(M⁻¹(ξ))`: A-optimality at `k = 1`,
//! D-optimality at `k = d`. A nonsingular `ξ` is optimal iff the variance
//! function
//!
//! ```text
//! φ_k(ξ, t) = f(t)ᵀ M⁻¹ ∇Ψ_k[M⁻¹] M⁻¹ f(t) / Ψ_k(M⁻¹)
//!           = f(t)ᵀ [M⁻¹ − ∇Ψ_{d−k}[M]/Ψ_{d−k}(M)] f(t)
//! ```
//!
//! stays below `k` on the design space; its `ξ`-average is exactly `k`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvarError, Result};
use crate::linalg::{self, compensated_sum, SINGULAR_RTOL};
use crate::maxdiv::matrix_rows;
use crate::symfun::{self, log_value_serde, CovMatrix};

/// Polynomial regressors `f(t) = (1, t, …, t^degree)` on a grid over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialBasis {
    pub degree: usize,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl PolynomialBasis {
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.degree + 1);
        let mut p = 1.0;
        for i in 0..=self.degree {
            out[i] = p;
            p *= t;
        }
        out
    }
}

/// Finite design space: labels `t_j` and regressor rows `f(t_j)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    labels: Vec<Vec<f64>>,
    regressors: DMatrix<f64>,
    basis: Option<PolynomialBasis>,
    /// `mirror[j]` is the index of the reflected point when the space is
    /// symmetric under a sign-flip of the regressors.
    mirror: Option<Vec<usize>>,
}

impl DesignSpace {
    pub fn new(labels: Vec<Vec<f64>>, regressors: DMatrix<f64>) -> Result<Self> {
        if regressors.nrows() == 0 || regressors.ncols() == 0 {
            return Err(GvarError::Domain("empty design space".into()));
        }
        if labels.len() != regressors.nrows() {
            return Err(GvarError::Domain(format!(
                "{} labels for {} regressor rows",
                labels.len(),
                regressors.nrows()
            )));
        }
        if regressors.iter().any(|v| !v.is_finite()) || labels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GvarError::Domain("non-finite design point".into()));
        }
        Ok(DesignSpace { labels, regressors, basis: None, mirror: None })
    }

    /// Labels are the row indices.
    pub fn from_regressors(regressors: DMatrix<f64>) -> Result<Self> {
        let labels = (0..regressors.nrows()).map(|i| vec![i as f64]).collect();
        Self::new(labels, regressors)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.regressors.ncols()
    }

    pub fn labels(&self) -> &[Vec<f64>] {
        &self.labels
    }

    pub fn regressors(&self) -> &DMatrix<f64> {
        &self.regressors
    }

    pub fn regressor(&self, j: usize) -> DVector<f64> {
        self.regressors.row(j).transpose()
    }

    pub fn basis(&self) -> Option<&PolynomialBasis> {
        self.basis.as_ref()
    }

    pub fn mirror(&self) -> Option<&[usize]> {
        self.mirror.as_deref()
    }

    /// The measure putting `weights[j]` on point `j`; zero weights are dropped.
    pub fn measure(&self, weights: &[f64]) -> Result<DesignMeasure> {
        if weights.len() != self.len() {
            return Err(GvarError::InvalidMeasure(format!("{} weights for {} points", weights.len(), self.len())));
        }
        let idx: Vec<usize> = (0..self.len()).filter(|&j| weights[j] > 0.0).collect();
        DesignMeasure::new(
            idx.iter().map(|&j| self.labels[j].clone()).collect(),
            self.regressors.select_rows(&idx),
            idx.iter().map(|&j| weights[j]).collect(),
        )
    }
}

/// Uniform grid `t_j = a + j·step` on `[a, b]`, last point forced to `b`.
pub fn polynomial_design_space(degree: usize, a: f64, b: f64, step: f64) -> Result<DesignSpace> {
    if degree == 0 {
        return Err(GvarError::Domain("degree must be at least 1".into()));
    }
    if !(step > 0.0) || !a.is_finite() || !b.is_finite() || !(b > a) {
        return Err(GvarError::Domain(format!("need a < b and step > 0; got [{a}, {b}], step {step}")));
    }
    let cells = ((b - a) / step - 1e-9).ceil() as usize;
    if cells > 50_000_000 {
        return Err(GvarError::Domain(format!("grid of {cells} cells is too fine")));
    }
    let mut ts: Vec<f64> = (0..cells).map(|j| a + j as f64 * step).collect();
    ts.push(b);
    let basis = PolynomialBasis { degree, lo: a, hi: b, step };
    let m = ts.len();
    let regressors = DMatrix::from_fn(m, degree + 1, |i, j| ts[i].powi(j as i32));
    let mut space = DesignSpace::new(ts.iter().map(|&t| vec![t]).collect(), regressors)?;
    space.basis = Some(basis);
    // f(−t) = diag(±1) f(t): reflection about 0 leaves ψ̃_k unchanged
    let scale = a.abs().max(b.abs());
    if (a + b).abs() <= 1e-12 * scale && (0..m).all(|j| (ts[j] + ts[m - 1 - j]).abs() <= 1e-9 * scale) {
        space.mirror = Some((0..m).rev().collect());
    }
    Ok(space)
}

/// Design measure with its own (finite) support.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMeasure {
    labels: Vec<Vec<f64>>,
    regressors: DMatrix<f64>,
    weights: Vec<f64>,
}

impl DesignMeasure {
    pub fn new(labels: Vec<Vec<f64>>, regressors: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        let s = weights.len();
        if s == 0 || labels.len() != s || regressors.nrows() != s || regressors.ncols() == 0 {
            return Err(GvarError::InvalidMeasure("inconsistent design support".into()));
        }
        if regressors.iter().any(|v| !v.is_finite()) {
            return Err(GvarError::InvalidMeasure("non-finite regressor".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(GvarError::InvalidMeasure("weights must be finite and >= 0".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(GvarError::InvalidMeasure(format!("weights sum to {total}")));
        }
        Ok(DesignMeasure { labels, regressors, weights })
    }

    /// Scalar-label design for a polynomial basis.
    pub fn polynomial(basis: &PolynomialBasis, points: &[f64], weights: Vec<f64>) -> Result<Self> {
        let d = basis.degree + 1;
        let regressors = DMatrix::from_fn(points.len(), d, |i, j| points[i].powi(j as i32));
        Self::new(points.iter().map(|&t| vec![t]).collect(), regressors, weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.regressors.ncols()
    }

    pub fn labels(&self) -> &[Vec<f64>] {
        &self.labels
    }

    pub fn regressors(&self) -> &DMatrix<f64> {
        &self.regressors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Serialize, Deserialize)]
struct DesignMeasureRepr {
    labels: Vec<Vec<f64>>,
    #[serde(with = "matrix_rows")]
    regressors: DMatrix<f64>,
    weights: Vec<f64>,
}

impl Serialize for DesignMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DesignMeasureRepr {
            labels: self.labels.clone(),
            regressors: self.regressors.clone(),
            weights: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DesignMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = DesignMeasureRepr::deserialize(d)?;
        DesignMeasure::new(r.labels, r.regressors, r.weights).map_err(serde::de::Error::custom)
    }
}

fn info_from_weights(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let d = x.ncols();
    let mut m = DMatrix::zeros(d, d);
    for (j, &wj) in w.iter().enumerate() {
        if wj > 0.0 {
            let f = x.row(j).transpose();
            m.ger(wj, &f, &f, 1.0);
        }
    }
    linalg::symmetrize(&mut m);
    m
}

/// `M(ξ) = Σ_j w_j f_j f_jᵀ`.
pub fn info_matrix(xi: &DesignMeasure) -> Result<CovMatrix> {
    CovMatrix::new(info_from_weights(&xi.regressors, &xi.weights))
}

/// `ψ̃_k(ξ)`, its logarithm, and a singularity flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DesignCriterion {
    pub k: usize,
    pub value: f64,
    #[serde(with = "log_value_serde")]
    pub log_value: f64,
    pub singular: bool,
}

/// The variance-function operator `A = M⁻¹ ∇Ψ_k[M⁻¹] M⁻¹ / Ψ_k(M⁻¹)`,
/// built in the eigenbasis of `M`, together with `log ψ̃_k`.
struct VarianceOperator {
    a: DMatrix<f64>,
    log_criterion: f64,
}

fn variance_operator(m: &DMatrix<f64>, k: usize) -> Result<VarianceOperator> {
    let d = m.nrows();
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    let (vals, vecs) = linalg::sym_eigen(m);
    let largest = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let smallest = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if !(largest > 0.0) || !(smallest > SINGULAR_RTOL * largest) {
        return Err(GvarError::Singular(format!(
            "information matrix eigenvalue {smallest:e} (largest {largest:e})"
        )));
    }
    // eigenvalues of M⁻¹, scaled by their maximum to keep E_k in range
    let mu_max = 1.0 / smallest;
    let nu: Vec<f64> = vals.iter().map(|&l| 1.0 / (l * mu_max)).collect();
    let e_k = symfun::elem_sym_all(&nu, k)[k];
    let diag: Vec<f64> = (0..d)
        .map(|i| {
            let rest: Vec<f64> = nu.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &x)| x).collect();
            symfun::elem_sym_all(&rest, k - 1)[k - 1] * nu[i] * nu[i] * mu_max / e_k
        })
        .collect();
    let scaled = DMatrix::from_fn(d, d, |i, j| vecs[(i, j)] * diag[j]);
    let mut a = scaled * vecs.transpose();
    linalg::symmetrize(&mut a);
    let log_psi = symfun::psi_constant(k).ln() + e_k.ln() + k as f64 * mu_max.ln();
    Ok(VarianceOperator { a, log_criterion: -log_psi / k as f64 })
}

fn criterion_of_info(m: &DMatrix<f64>, k: usize) -> Result<DesignCriterion> {
    let d = m.nrows();
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    Ok(match variance_operator(m, k) {
        Ok(op) => DesignCriterion { k, value: op.log_criterion.exp(), log_value: op.log_criterion, singular: false },
        Err(GvarError::Singular(_)) => DesignCriterion { k, value: 0.0, log_value: f64::NEG_INFINITY, singular: true },
        Err(e) => return Err(e),
    })
}

/// `ψ̃_k(ξ) = Ψ_k^{−1/k}(M⁻¹(ξ))`; singular `M` gives value 0, flagged.
pub fn design_criterion(xi: &DesignMeasure, k: usize) -> Result<DesignCriterion> {
    criterion_of_info(&info_from_weights(&xi.regressors, &xi.weights), k)
}

/// `log det M − log Ψ_{d−k}(M)`, which equals
/// `k log ψ̃_k + log c_k − log c_{d−k}` with `c_j = (j+1)/j!`.
pub fn log_criterion_complement(m: &CovMatrix, k: usize) -> Result<f64> {
    let d = m.dim();
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    if m.is_singular() {
        return Ok(f64::NEG_INFINITY);
    }
    let log_det: f64 = m.spectrum().iter().map(|l| l.ln()).sum();
    Ok(log_det - symfun::psi(m, d - k)?.log_value)
}

/// `φ_k(ξ, t)` at a regressor vector `f`.
pub fn variance_function(xi: &DesignMeasure, f: &DVector<f64>, k: usize) -> Result<f64> {
    let op = variance_operator(&info_from_weights(&xi.regressors, &xi.weights), k)?;
    Ok(linalg::quad_form(&op.a, f))
}

/// `φ_k(ξ, t_j)` for every point of the space.
pub fn variance_profile(xi: &DesignMeasure, space: &DesignSpace, k: usize) -> Result<Vec<f64>> {
    let op = variance_operator(&info_from_weights(&xi.regressors, &xi.weights), k)?;
    Ok(scores(&space.regressors, &op.a))
}

/// The same function through the complement form
/// `f ᵀ [M⁻¹ − ∇Ψ_{d−k}[M]/Ψ_{d−k}(M)] f`, computed by an independent path.
pub fn complement_profile(xi: &DesignMeasure, space: &DesignSpace, k: usize) -> Result<Vec<f64>> {
    let m = info_matrix(xi)?;
    let d = m.dim();
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    let w = m.inverse()?;
    let psi_c = symfun::psi(&m, d - k)?.value;
    let mut b = w.entries() - symfun::grad_psi(&m, d - k)? / psi_c;
    linalg::symmetrize(&mut b);
    Ok(scores(&space.regressors, &b))
}

fn scores(x: &DMatrix<f64>, a: &DMatrix<f64>) -> Vec<f64> {
    (0..x.nrows())
        .into_par_iter()
        .map(|j| linalg::quad_form(a, &x.row(j).transpose()))
        .collect()
}

/// `ψ̃_k(ξ)/ψ̃_k(ξ*)`; 0 for singular `ξ`.
pub fn efficiency(xi: &DesignMeasure, xi_star: &DesignMeasure, k: usize) -> Result<f64> {
    let reference = design_criterion(xi_star, k)?;
    if reference.singular {
        return Err(GvarError::Singular("reference design is singular".into()));
    }
    let c = design_criterion(xi, k)?;
    Ok(if c.singular { 0.0 } else { (c.log_value - reference.log_value).exp() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DesignOptions {
    /// Stopping tolerance on `max φ − min_{support} φ`.
    pub tol: f64,
    pub max_iter: usize,
    pub polish: bool,
    /// Average with the mirror image when the space is symmetric.
    pub symmetrize: bool,
    /// Grid weights above this are reported as support.
    pub support_threshold: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            tol: 1e-9,
            max_iter: 1_000_000,
            polish: true,
            symmetrize: true,
            support_threshold: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DesignReport {
    pub k: usize,
    /// Criterion of the grid optimum.
    pub criterion: DesignCriterion,
    /// `max_j φ_k(ξ, t_j) − k` over the grid.
    pub gap: f64,
    /// The same through the complement form.
    pub complement_gap: f64,
    /// `max |φ_k − k|` over the support.
    pub support_residual: f64,
    /// Grid indices with weight above the support threshold.
    pub support: Vec<usize>,
    pub design: DesignMeasure,
    /// Off-grid refinement, polynomial spaces only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polished: Option<DesignMeasure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polished_criterion: Option<DesignCriterion>,
    /// `max φ_k − k` of the polished design over the grid and its own support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polished_gap: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl DesignReport {
    /// Polished design when available, else the grid optimum.
    pub fn best(&self) -> &DesignMeasure {
        self.polished.as_ref().unwrap_or(&self.design)
    }

    pub fn best_criterion(&self) -> DesignCriterion {
        self.polished_criterion.unwrap_or(self.criterion)
    }

    /// Recomputes criteria and support residual from the stored designs.
    pub fn validate(&self) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300);
        let c = design_criterion(&self.design, self.k)?;
        if !close(c.value, self.criterion.value) {
            return Err(GvarError::Parse(format!("criterion {} does not match design ({})", self.criterion.value, c.value)));
        }
        if self.gap < -1e-9 {
            return Err(GvarError::Parse(format!("negative gap {}", self.gap)));
        }
        if let (Some(p), Some(pc)) = (&self.polished, &self.polished_criterion) {
            let c = design_criterion(p, self.k)?;
            if !close(c.value, pc.value) {
                return Err(GvarError::Parse("polished criterion does not match polished design".into()));
            }
        }
        let op = variance_operator(&info_from_weights(&self.design.regressors, &self.design.weights), self.k)?;
        let residual = scores(&self.design.regressors, &op.a)
            .iter()
            .fold(0.0f64, |m, s| m.max((s - self.k as f64).abs()));
        if (residual - self.support_residual).abs() > 1e-8 {
            return Err(GvarError::Parse("support residual does not match design".into()));
        }
        Ok(())
    }
}

/// Up to `d` rows with maximal successive residual norm (Gram–Schmidt).
fn greedy_linear_subset(x: &DMatrix<f64>) -> Vec<usize> {
    let (m, d) = (x.nrows(), x.ncols());
    let scale = (0..m).map(|j| x.row(j).norm_squared()).fold(0.0, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut chosen = Vec::new();
    while chosen.len() < d {
        let residual = |j: usize| -> DVector<f64> {
            let mut r = x.row(j).transpose();
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&r);
                    r.axpy(-c, q, 1.0);
                }
            }
            r
        };
        let norms: Vec<f64> = (0..m).map(|j| residual(j).norm_squared()).collect();
        let mut best = 0;
        for j in 1..m {
            if norms[j] > norms[best] {
                best = j;
            }
        }
        if !(norms[best] > 1e-20 * scale) {
            break;
        }
        let r = residual(best);
        basis.push(&r / r.norm());
        chosen.push(best);
    }
    chosen
}

struct GridSolution {
    w: Vec<f64>,
    scores: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn symmetrize_weights(w: &mut [f64], mirror: Option<&[usize]>) {
    if let Some(r) = mirror {
        let avg: Vec<f64> = (0..w.len()).map(|j| 0.5 * (w[j] + w[r[j]])).collect();
        w.copy_from_slice(&avg);
    }
}

fn normalize(w: &mut [f64]) {
    let total = compensated_sum(w.iter().copied());
    for x in w.iter_mut() {
        *x /= total;
    }
}

/// Pairwise vertex-direction steps between the grid argmax of `φ` and the
/// support argmin, with an exact line search by bisection on the slope
/// `Σ c_j φ_j(δ)`; every 20th iteration tries a multiplicative sweep
/// `w_j ← w_j φ_j / k` instead.
fn solve_grid(x: &DMatrix<f64>, k: usize, mirror: Option<&[usize]>, opts: &DesignOptions) -> Result<GridSolution> {
    let (m, d) = (x.nrows(), x.ncols());
    if k == 0 || k > d {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    let start = greedy_linear_subset(x);
    if start.len() < d {
        return Err(GvarError::DegenerateInput(format!(
            "regressors span a space of dimension {}, need {d}",
            start.len()
        )));
    }
    let kf = k as f64;
    let mut w = vec![0.0; m];
    for &j in &start {
        w[j] = 1.0;
        if let Some(r) = mirror {
            w[r[j]] = 1.0;
        }
    }
    normalize(&mut w);

    let rank_one = |j: usize| {
        let f = x.row(j).transpose();
        &f * f.transpose()
    };
    let mut info = info_from_weights(x, &w);
    let mut op = variance_operator(&info, k)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut phi;
    loop {
        phi = scores(x, &op.a);
        let mut up = 0;
        for j in 1..m {
            if phi[j] > phi[up] {
                up = j;
            }
        }
        let down = (0..m)
            .filter(|&j| w[j] > 0.0)
            .min_by(|&a, &b| phi[a].total_cmp(&phi[b]).then(a.cmp(&b)))
            .expect("nonempty support");
        if phi[up] - phi[down] <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        if iterations % 20 == 0 {
            let mut trial: Vec<f64> = w.iter().zip(&phi).map(|(wj, pj)| wj * pj / kf).collect();
            normalize(&mut trial);
            if opts.symmetrize {
                symmetrize_weights(&mut trial, mirror);
            }
            let trial_info = info_from_weights(x, &trial);
            if let Ok(trial_op) = variance_operator(&trial_info, k) {
                if trial_op.log_criterion > op.log_criterion {
                    w = trial;
                    info = trial_info;
                    op = trial_op;
                    continue;
                }
            }
        }

        // sparse direction: +½ on up and its mirror, −½ on down and its mirror
        let mut dir: Vec<(usize, f64)> = Vec::with_capacity(4);
        let mut push = |j: usize, c: f64| match dir.iter_mut().find(|(i, _)| *i == j) {
            Some(e) => e.1 += c,
            None => dir.push((j, c)),
        };
        match mirror.filter(|_| opts.symmetrize) {
            Some(r) => {
                push(up, 0.5);
                push(r[up], 0.5);
                push(down, -0.5);
                push(r[down], -0.5);
            }
            None => {
                push(up, 1.0);
                push(down, -1.0);
            }
        }
        dir.retain(|&(_, c)| c != 0.0);
        let delta_max = dir
            .iter()
            .filter(|&&(_, c)| c < 0.0)
            .map(|&(j, c)| w[j] / -c)
            .fold(f64::INFINITY, f64::min);
        if !(delta_max > 0.0) || !delta_max.is_finite() {
            break;
        }
        let mut change = DMatrix::zeros(d, d);
        for &(j, c) in &dir {
            change += rank_one(j) * c;
        }
        let slope = |delta: f64| -> f64 {
            match variance_operator(&(&info + &change * delta), k) {
                Ok(o) => (&o.a * &change).trace(),
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let delta = if slope(delta_max) >= 0.0 {
            delta_max
        } else {
            let (mut lo, mut hi) = (0.0, delta_max);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if slope(mid) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        if delta <= 0.0 {
            break;
        }
        for &(j, c) in &dir {
            w[j] += delta * c;
            // a drop step empties the limiting point exactly
            if w[j] < 0.0 || (c < 0.0 && delta == delta_max && w[j] <= 1e-15) {
                w[j] = 0.0;
            }
        }
        normalize(&mut w);
        if opts.symmetrize {
            symmetrize_weights(&mut w, mirror);
        }
        info = info_from_weights(x, &w);
        op = variance_operator(&info, k)?;
    }
    Ok(GridSolution { w, scores: phi, iterations, converged })
}

/// Merges points closer than `radius` into their weighted mean.
fn merge_close(points: Vec<(f64, f64)>, radius: f64) -> Vec<(f64, f64)> {
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (t, w) in points {
        match merged.last_mut() {
            Some(q) if t - q.0 <= radius => {
                q.0 = (q.0 * q.1 + t * w) / (q.1 + w);
                q.1 += w;
            }
            _ => merged.push((t, w)),
        }
    }
    merged
}

/// Refines a grid optimum off the grid in two stages.
///
/// 1. Local grids ten times finer over two old cells around every support
///    point, re-solved and merged, down to a spacing of `1e-6`.
/// 2. The criterion with weights re-optimized is a smooth function of the
///    support locations; each location (each mirror pair, when symmetric)
///    is moved to its maximizer by golden-section search, cycling until the
///    moves fall below `1e-12`.
///
/// Stage 2 is needed because `φ` is flat near its maxima: a gap tolerance
/// `τ` leaves the support up to `O(√τ)` away from the true points.
fn polish(
    basis: &PolynomialBasis,
    space: &DesignSpace,
    grid: &GridSolution,
    k: usize,
    opts: &DesignOptions,
) -> Result<DesignMeasure> {
    let symmetric = opts.symmetrize && space.mirror().is_some();
    let regressors = |ts: &[f64]| DMatrix::from_fn(ts.len(), basis.degree + 1, |i, j| ts[i].powi(j as i32));
    let mirror_of = |n: usize| -> Option<Vec<usize>> { symmetric.then(|| (0..n).rev().collect()) };
    let merge_radius = 1.5 * basis.step;
    let mut support: Vec<(f64, f64)> = (0..space.len())
        .filter(|&j| grid.w[j] > 0.0)
        .map(|j| (space.labels[j][0], grid.w[j]))
        .collect();
    support = merge_close(support, merge_radius);

    let mut h = basis.step;
    while h > 1e-6 {
        let fine = h / 10.0;
        let mut ts: Vec<f64> = Vec::new();
        for &(t, _) in &support {
            for i in -20i32..=20 {
                let x = (t + i as f64 * fine).clamp(basis.lo, basis.hi);
                ts.push(x);
                if symmetric {
                    ts.push(-x);
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let local = solve_grid(&regressors(&ts), k, mirror_of(ts.len()).as_deref(), opts)?;
        let found: Vec<(f64, f64)> = (0..ts.len()).filter(|&j| local.w[j] > 0.0).map(|j| (ts[j], local.w[j])).collect();
        support = merge_close(found, merge_radius);
        h = fine;
    }

    let tight = DesignOptions { tol: 1e-13, max_iter: 100_000, ..*opts };
    let profile = |locs: &[f64]| -> Result<(f64, Vec<f64>)> {
        let x = regressors(locs);
        let sol = solve_grid(&x, k, mirror_of(locs.len()).as_deref(), &tight)?;
        let op = variance_operator(&info_from_weights(&x, &sol.w), k)?;
        Ok((op.log_criterion, sol.w))
    };
    let mut locs: Vec<f64> = support.iter().map(|p| p.0).collect();
    // free coordinates: one per point, or per mirror pair with the centre fixed
    let groups: Vec<usize> = if symmetric {
        (0..locs.len()).filter(|&i| locs[i] > 0.0).collect()
    } else {
        (0..locs.len()).collect()
    };
    let bracket = basis.step;
    for _ in 0..50 {
        let mut moved = 0.0f64;
        for &i in &groups {
            let current = locs[i];
            let lower = if symmetric { (current - bracket).max(0.0) } else { (current - bracket).max(basis.lo) };
            let upper = (current + bracket).min(basis.hi);
            let place = |locs: &mut Vec<f64>, t: f64| {
                locs[i] = t;
                if symmetric {
                    let n = locs.len();
                    locs[n - 1 - i] = -t;
                }
            };
            let mut trial = locs.clone();
            let objective = |t: f64| {
                let mut l = trial.clone();
                place(&mut l, t);
                // coinciding points make the profile undefined; treat as worst
                if l.windows(2).any(|p| p[1] <= p[0]) {
                    return f64::NEG_INFINITY;
                }
                profile(&l).map(|(c, _)| c).unwrap_or(f64::NEG_INFINITY)
            };
            let (best, fbest) = linalg::golden_section_max(objective, lower, upper, 1e-13);
            if fbest > objective(current) {
                place(&mut trial, best);
                moved = moved.max((best - current).abs());
                locs = trial;
            }
        }
        if moved <= 1e-12 {
            break;
        }
    }
    let (_, w) = profile(&locs)?;
    let kept: Vec<(f64, f64)> = locs.iter().zip(&w).filter(|&(_, &wi)| wi > 0.0).map(|(&t, &wi)| (t, wi)).collect();
    let locs: Vec<f64> = kept.iter().map(|p| p.0).collect();
    let mut w: Vec<f64> = kept.iter().map(|p| p.1).collect();
    normalize(&mut w);
    DesignMeasure::polynomial(basis, &locs, w)
}

/// `ψ̃_k`-optimal design on the space, with its equivalence certificate.
pub fn solve_design(space: &DesignSpace, k: usize, opts: &DesignOptions) -> Result<(DesignMeasure, DesignReport)> {
    if !(opts.tol > 0.0) {
        return Err(GvarError::Domain("tolerance must be positive".into()));
    }
    let mirror = space.mirror().filter(|_| opts.symmetrize);
    let grid = solve_grid(&space.regressors, k, mirror, opts)?;
    let design = space.measure(&grid.w)?;
    let kf = k as f64;
    let gap = grid.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max) - kf;
    let complement = complement_profile(&design, space, k)?;
    let complement_gap = complement.iter().copied().fold(f64::NEG_INFINITY, f64::max) - kf;
    let support_residual = (0..space.len())
        .filter(|&j| grid.w[j] > 0.0)
        .map(|j| (grid.scores[j] - kf).abs())
        .fold(0.0, f64::max);
    let support = (0..space.len()).filter(|&j| grid.w[j] > opts.support_threshold).collect();
    let criterion = design_criterion(&design, k)?;

    let (polished, polished_criterion, polished_gap) = match (space.basis(), opts.polish) {
        (Some(basis), true) => {
            let p = polish(basis, space, &grid, k, opts)?;
            let mut phi = variance_profile(&p, space, k)?;
            let op = variance_operator(&info_from_weights(&p.regressors, &p.weights), k)?;
            phi.extend(scores(&p.regressors, &op.a));
            let pgap = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max) - kf;
            let pc = design_criterion(&p, k)?;
            (Some(p), Some(pc), Some(pgap))
        }
        _ => (None, None, None),
    };

    let report = DesignReport {
        k,
        criterion,
        gap,
        complement_gap,
        support_residual,
        support,
        design: design.clone(),
        polished,
        polished_criterion,
        polished_gap,
        converged: grid.converged,
        iterations: grid.iterations,
    };
    Ok((design, report))
}

/// Cross-efficiencies `Eff_{k}(ξ_j^*)`: row `j` is the design optimal for
/// `ks[j]`, column `i` the criterion `ks[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EfficiencyTable {
    pub ks: Vec<usize>,
    pub efficiencies: Vec<Vec<f64>>,
    pub designs: Vec<DesignReport>,
}

impl EfficiencyTable {
    pub fn converged(&self) -> bool {
        self.designs.iter().all(|d| d.converged)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ks.len();
        if self.designs.len() != n || self.efficiencies.len() != n || self.efficiencies.iter().any(|r| r.len() != n) {
            return Err(GvarError::Parse("efficiency table shape mismatch".into()));
        }
        for d in &self.designs {
            d.validate()?;
        }
        for (j, row) in self.efficiencies.iter().enumerate() {
            for (i, &e) in row.iter().enumerate() {
                let again = efficiency(self.designs[j].best(), self.designs[i].best(), self.ks[i])?;
                if !(e > 0.0 && e <= 1.0 + 1e-9) || (again - e).abs() > 1e-12 {
                    return Err(GvarError::Parse(format!("efficiency [{j}][{i}] = {e} is inconsistent")));
                }
            }
        }
        Ok(())
    }
}

pub fn efficiency_table(space: &DesignSpace, ks: &[usize], opts: &DesignOptions) -> Result<EfficiencyTable> {
    let designs: Vec<DesignReport> = ks
        .iter()
        .map(|&k| solve_design(space, k, opts).map(|(_, r)| r))
        .collect::<Result<_>>()?;
    let efficiencies = designs
        .iter()
        .map(|dj| {
            ks.iter()
                .zip(&designs)
                .map(|(&k, di)| efficiency(dj.best(), di.best(), k))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(EfficiencyTable { ks: ks.to_vec(), efficiencies, designs })
}

/// The polynomial examples on `[−1, 1]`: 4 linear, 5 quadratic, 6 cubic.
pub fn example_space(example: u32, step: f64) -> Result<DesignSpace> {
    let degree = match example {
        4 => 1,
        5 => 2,
        6 => 3,
        _ => return Err(GvarError::Domain(format!("no built-in example {example}; choose 4, 5 or 6"))),
    };
    polynomial_design_space(degree, -1.0, 1.0, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly_measure(degree: usize, pts: &[f64], w: &[f64]) -> DesignMeasure {
        let basis = PolynomialBasis { degree, lo: -1.0, hi: 1.0, step: 0.01 };
        DesignMeasure::polynomial(&basis, pts, w.to_vec()).unwrap()
    }

    #[test]
    fn grid_construction() {
        let s = polynomial_design_space(2, -1.0, 1.0, 1e-3).unwrap();
        assert_eq!(s.len(), 2001);
        assert_eq!(s.labels()[0][0], -1.0);
        assert_eq!(s.labels()[2000][0], 1.0);
        assert!(s.mirror().is_some());
        let lin = polynomial_design_space(1, -1.0, 1.0, 0.5).unwrap();
        assert_eq!(lin.dim(), 2);
        let cubic = polynomial_design_space(3, 0.0, 1.0, 0.3).unwrap();
        assert_eq!(cubic.regressor(cubic.len() - 1).as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        assert!(cubic.mirror().is_none());
        assert!(polynomial_design_space(2, 1.0, 1.0, 0.1).is_err());
        assert!(polynomial_design_space(2, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn info_matrix_examples() {
        let xi = poly_measure(1, &[-1.0, 1.0], &[0.5, 0.5]);
        assert!((info_matrix(&xi).unwrap().entries() - DMatrix::identity(2, 2)).norm() < 1e-15);
        let point = poly_measure(2, &[0.3], &[1.0]);
        assert_eq!(info_matrix(&point).unwrap().rank(), 1);
        let c = design_criterion(&point, 1).unwrap();
        assert!(c.singular && c.value == 0.0 && c.log_value == f64::NEG_INFINITY);
    }

    #[test]
    fn criterion_at_identity() {
        for d in 1..=5usize {
            let regs = DMatrix::identity(d, d) * (d as f64).sqrt();
            let xi = DesignMeasure::new(
                (0..d).map(|i| vec![i as f64]).collect(),
                regs,
                vec![1.0 / d as f64; d],
            )
            .unwrap();
            for k in 1..=d {
                let expected = (symfun::psi_constant(k) * linalg::binomial(d as u64, k as u64) as f64)
                    .powf(-1.0 / k as f64);
                let got = design_criterion(&xi, k).unwrap().value;
                assert!((got - expected).abs() < 1e-13 * expected, "d={d} k={k}");
            }
        }
    }

    #[test]
    fn criterion_limits() {
        let xi = poly_measure(2, &[-1.0, 0.2, 1.0, 0.5], &[0.3, 0.3, 0.2, 0.2]);
        let m = info_matrix(&xi).unwrap();
        let inv = m.inverse().unwrap();
        // k = 1: ψ̃_1 = (2 tr M⁻¹)⁻¹
        let a = design_criterion(&xi, 1).unwrap().value;
        assert!((a - 0.5 / inv.trace()).abs() < 1e-13);
        // k = d: ψ̃_d = [(d+1)/d!]^{−1/d} det^{1/d} M
        let d_opt = design_criterion(&xi, 3).unwrap().value;
        let expected = (symfun::psi_constant(3)).powf(-1.0 / 3.0) * m.determinant().powf(1.0 / 3.0);
        assert!((d_opt - expected).abs() < 1e-12);
        for k in 1..=3 {
            let c = design_criterion(&xi, k).unwrap();
            let alt = log_criterion_complement(&m, k).unwrap();
            let shift = symfun::psi_constant(k).ln() - symfun::psi_constant(3 - k).ln();
            assert!((k as f64 * c.log_value + shift - alt).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_function_forms_agree() {
        let space = polynomial_design_space(3, -1.0, 1.0, 0.05).unwrap();
        let xi = poly_measure(3, &[-1.0, -0.3, 0.4, 1.0, 0.1], &[0.2, 0.25, 0.2, 0.15, 0.2]);
        let m = info_matrix(&xi).unwrap();
        let inv = m.inverse().unwrap();
        for k in 1..=4 {
            let a = variance_profile(&xi, &space, k).unwrap();
            let b = complement_profile(&xi, &space, k).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "k={k}: {x} vs {y}");
            }
            let avg: f64 = (0..xi.len())
                .map(|i| xi.weights()[i] * variance_function(&xi, &xi.regressors().row(i).transpose(), k).unwrap())
                .sum();
            assert!((avg - k as f64).abs() < 1e-10);
        }
        // k = 1 and k = d closed forms
        let f = space.regressor(7);
        let m2 = inv.entries() * inv.entries();
        let k1 = linalg::quad_form(&m2, &f) / inv.trace();
        assert!((variance_function(&xi, &f, 1).unwrap() - k1).abs() < 1e-10 * k1);
        let kd = linalg::quad_form(inv.entries(), &f);
        assert!((variance_function(&xi, &f, 4).unwrap() - kd).abs() < 1e-10 * kd);
        // k = 2: [tr(M⁻¹) fᵀM⁻²f − fᵀM⁻³f] / [tr²(M⁻¹) − tr(M⁻²)], scaled to bound 2
        let m3 = &m2 * inv.entries();
        let t = inv.trace();
        let k2 = 2.0 * (t * linalg::quad_form(&m2, &f) - linalg::quad_form(&m3, &f)) / (t * t - m2.trace());
        assert!((variance_function(&xi, &f, 2).unwrap() - k2).abs() < 1e-10 * k2);
    }

    #[test]
    fn example4_linear_model() {
        let space = example_space(4, 0.01).unwrap();
        for k in 1..=2 {
            let (_, report) = solve_design(&space, k, &DesignOptions::default()).unwrap();
            assert!(report.converged);
            let best = report.best();
            assert_eq!(best.len(), 2);
            assert_eq!(best.labels()[0][0], -1.0);
            assert_eq!(best.labels()[1][0], 1.0);
            assert!((best.weights()[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn efficiency_basics() {
        let a = poly_measure(2, &[-1.0, 0.0, 1.0], &[0.25, 0.5, 0.25]);
        let b = poly_measure(2, &[-1.0, 0.0, 1.0], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert!((efficiency(&a, &a, 2).unwrap() - 1.0).abs() < 1e-15);
        let point = poly_measure(2, &[0.5], &[1.0]);
        assert_eq!(efficiency(&point, &a, 1).unwrap(), 0.0);
        assert!(efficiency(&a, &point, 1).is_err());
        // A-efficiency of the D-optimal quadratic design is exactly 8/9
        assert!((efficiency(&b, &a, 1).unwrap() - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_space_is_rejected() {
        let regs = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        let space = DesignSpace::from_regressors(regs).unwrap();
        assert!(matches!(
            solve_design(&space, 1, &DesignOptions::default()),
            Err(GvarError::DegenerateInput(_))
        ));
    }

    #[test]
    fn report_round_trip() {
        let space = example_space(5, 0.01).unwrap();
        let (_, report) = solve_design(&space, 2, &DesignOptions::default()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: DesignReport = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.support, report.support);
    }
}
