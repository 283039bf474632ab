//! Random covariance matrices and the algebraic invariant checks shared by
//! the acceptance run and the property tests.

#![allow(dead_code)]

use gvar::estimate::{self, Sample};
use gvar::linalg;
use gvar::symfun::{self, CovMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `A Aᵀ` with `A` of shape `d × rank`, so the rank is `rank` almost surely.
pub fn random_cov<R: Rng>(rng: &mut R, d: usize, rank: usize) -> CovMatrix {
    let a = normal_matrix(rng, d, rank);
    let mut v = &a * a.transpose();
    linalg::symmetrize(&mut v);
    CovMatrix::new(v).expect("gram matrix is psd")
}

fn close(a: f64, b: f64, rel: f64, scale: f64) -> bool {
    (a - b).abs() <= rel * scale.max(a.abs()).max(b.abs()) || (a - b).abs() <= 1e-300
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

/// One randomized case of every invariant; `Err` names the first failure.
pub fn check_case<R: Rng>(rng: &mut R) -> Result<(), String> {
    let d = rng.random_range(1..=6usize);
    let rank = rng.random_range(1..=d);
    let v = random_cov(rng, d, rank);
    let w = random_cov(rng, d, d);
    let tr = v.trace();

    for k in 1..=d {
        let psi = symfun::psi(&v, k).map_err(|e| e.to_string())?.value;
        // natural magnitude of Ψ_k for this trace, for absolute tolerances
        let scale = symfun::psi_constant(k) * tr.powi(k as i32);

        // homogeneity of degree k in V (degree 2 in the measure)
        let c: f64 = rng.random_range(0.1..10.0);
        let scaled = symfun::psi(&v.scaled(c).unwrap(), k).unwrap().value;
        ensure!(close(scaled, c.powi(k as i32) * psi, 1e-10, scale * c.powi(k as i32)), "homogeneity d={d} k={k}");

        // rank-nullity
        if k > rank {
            ensure!(psi.abs() <= 1e-10 * scale, "psi_{k} = {psi} on rank {rank}");
        } else {
            ensure!(psi > 0.0, "psi_{k} = {psi} should be positive on rank {rank}");
        }

        // Newton identities and the trace determinant
        let newton = symfun::psi_constant(k) * symfun::elem_sym_newton(&v, k).unwrap();
        ensure!(close(newton, psi, 1e-8, scale), "newton d={d} k={k}: {newton} vs {psi}");
        let det_form = symfun::psi_trace_determinant(&v, k).unwrap();
        ensure!(close(det_form, psi, 1e-8, scale), "trace determinant d={d} k={k}: {det_form} vs {psi}");

        // complement identity on the full-rank matrix
        let pw = symfun::psi(&w, k).unwrap().value;
        let comp = symfun::psi_via_complement(&w, k).unwrap();
        let cond = w.largest_eigenvalue() / w.smallest_eigenvalue();
        if cond < 1e4 {
            ensure!(close(comp, pw, 1e-8 * cond.max(1.0), 0.0), "complement d={d} k={k}: {comp} vs {pw}");
        }

        // Euler: tr(V ∇Ψ_k) = k Ψ_k
        let g = symfun::grad_psi(&v, k).unwrap();
        let euler = (v.entries() * &g).trace();
        ensure!(close(euler, k as f64 * psi, 1e-9, scale), "euler d={d} k={k}: {euler} vs {}", k as f64 * psi);

        // concavity of Ψ_k^{1/k} along the segment V → W
        let t: f64 = rng.random_range(0.0..1.0);
        let mid = CovMatrix::new(v.entries() * (1.0 - t) + w.entries() * t).unwrap();
        let root = |p: f64| p.max(0.0).powf(1.0 / k as f64);
        let lhs = root(symfun::psi(&mid, k).unwrap().value);
        let rhs = (1.0 - t) * root(psi) + t * root(pw);
        ensure!(lhs >= rhs - 1e-10 * (1.0 + rhs), "concavity d={d} k={k}: {lhs} < {rhs}");
    }

    ensure!(close(symfun::psi(&v, 1).unwrap().value, 2.0 * tr, 1e-12, 0.0), "psi_1 = 2 tr V");
    let det = w.entries().clone().determinant();
    let top = symfun::psi(&w, d).unwrap().value;
    let top_scale = symfun::psi_constant(d) * w.trace().powi(d as i32);
    ensure!(close(top, symfun::psi_constant(d) * det, 1e-9, top_scale), "psi_d = (d+1)/d! det V");

    // shift and permutation invariance of the estimator
    let n = rng.random_range(d + 2..=20);
    let data = normal_matrix(rng, n, d);
    let shift = DVector::from_fn(d, |_, _| rng.random_range(-10.0..10.0));
    let mut shifted = data.clone();
    for mut row in shifted.row_iter_mut() {
        row += shift.transpose();
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let permuted = data.select_rows(&order);
    let k = rng.random_range(1..=d);
    let base = estimate::estimate_psi(&Sample::new(data).unwrap(), k).unwrap().psi_hat;
    let moved = estimate::estimate_psi(&Sample::new(shifted).unwrap(), k).unwrap().psi_hat;
    let perm = estimate::estimate_psi(&Sample::new(permuted).unwrap(), k).unwrap().psi_hat;
    ensure!(close(moved, base, 1e-9, 0.0), "shift invariance k={k}: {moved} vs {base}");
    ensure!(close(perm, base, 1e-12, 0.0), "permutation invariance k={k}: {perm} vs {base}");
    Ok(())
}
