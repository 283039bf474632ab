//! Small dense linear-algebra and numerics helpers shared by the modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{GvarError, Result};

/// Relative threshold below which the smallest eigenvalue counts as zero.
pub const SINGULAR_RTOL: f64 = 1e-12;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenvalues of a symmetric matrix, sorted nonincreasing.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut eigs: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    eigs
}

/// Eigen-decomposition `(eigenvalues, eigenvectors as columns)` of a symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let e = m.clone().symmetric_eigen();
    (e.eigenvalues, e.eigenvectors)
}

/// Inverse of a symmetric positive-definite matrix; the result is symmetrized.
pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eigs = sym_eigenvalues(m);
    let largest = eigs.first().copied().unwrap_or(0.0);
    let smallest = eigs.last().copied().unwrap_or(0.0);
    if !(largest > 0.0) || smallest <= SINGULAR_RTOL * largest {
        return Err(GvarError::Singular(format!(
            "smallest eigenvalue {smallest:e} vs largest {largest:e}"
        )));
    }
    let mut inv = match m.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => m
            .clone()
            .try_inverse()
            .ok_or_else(|| GvarError::Singular("inversion failed".into()))?,
    };
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn cross_submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// `xᵀ A x`.
pub fn quad_form(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += a[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

/// Exact binomial coefficient; saturates at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

pub fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Neumaier-compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Maximizes a unimodal function on `[lo, hi]` by golden-section search.
/// Returns `(argmax, max)`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // endpoints are candidates too: the slice may be monotone
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Linear-interpolation (type-7) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
