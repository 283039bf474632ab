//! Seeded Monte-Carlo harness for the sampling behaviour of `(ψ̂_k)_n`.
//!
//! Every replicate owns one ChaCha8 stream: the generator is seeded with
//! `seed` and the stream id is the replicate index, so replicates can run in
//! any order on any number of threads and still reproduce bit for bit.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GvarError, Result};
use crate::estimate::{self, OmegaSpec, Sample};
use crate::linalg::{self, pairwise_sum};
use crate::maxdiv::DiscreteMeasure;
use crate::symfun::{self, CovMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum GeneratorKind {
    /// Uniform on `[0,1]^d`.
    UniformCube { d: usize },
    Normal { mean: Vec<f64>, cov: CovMatrix },
    /// Uniform on the sphere of radius `radius` centred at the origin.
    UniformSphere { d: usize, radius: f64 },
    Discrete { measure: DiscreteMeasure },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, seed: u64) -> Result<Self> {
        let spec = GeneratorSpec { kind, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform_cube(d: usize, seed: u64) -> Result<Self> {
        Self::new(GeneratorKind::UniformCube { d }, seed)
    }

    /// `𝒩(0, variance · I_d)`.
    pub fn isotropic_normal(d: usize, variance: f64, seed: u64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(GvarError::Domain(format!("variance {variance} must be finite and >= 0")));
        }
        let cov = CovMatrix::identity(d).scaled(variance)?;
        Self::new(GeneratorKind::Normal { mean: vec![0.0; d], cov }, seed)
    }

    pub fn uniform_sphere(d: usize, radius: f64, seed: u64) -> Result<Self> {
        Self::new(GeneratorKind::UniformSphere { d, radius }, seed)
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            GeneratorKind::UniformCube { d } | GeneratorKind::UniformSphere { d, .. } => *d,
            GeneratorKind::Normal { mean, .. } => mean.len(),
            GeneratorKind::Discrete { measure } => measure.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            GeneratorKind::UniformCube { d } if *d == 0 => {
                Err(GvarError::Domain("uniform cube needs d >= 1".into()))
            }
            GeneratorKind::UniformSphere { d, radius } => {
                if *d == 0 || !(*radius >= 0.0) || !radius.is_finite() {
                    Err(GvarError::Domain(format!("sphere needs d >= 1 and finite radius >= 0; got {d}, {radius}")))
                } else {
                    Ok(())
                }
            }
            GeneratorKind::Normal { mean, cov } => {
                if mean.is_empty() || mean.len() != cov.dim() || mean.iter().any(|m| !m.is_finite()) {
                    Err(GvarError::Domain("normal mean must be finite and match the covariance".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// `(E_μ, V_μ)` in closed form.
    pub fn moments(&self) -> Result<(DVector<f64>, CovMatrix)> {
        self.validate()?;
        match &self.kind {
            GeneratorKind::UniformCube { d } => {
                Ok((DVector::from_element(*d, 0.5), CovMatrix::identity(*d).scaled(1.0 / 12.0)?))
            }
            GeneratorKind::Normal { mean, cov } => Ok((DVector::from_column_slice(mean), cov.clone())),
            GeneratorKind::UniformSphere { d, radius } => Ok((
                DVector::zeros(*d),
                CovMatrix::identity(*d).scaled(radius * radius / *d as f64)?,
            )),
            GeneratorKind::Discrete { measure } => measure.moments(),
        }
    }

    /// Source of `ω` for the asymptotic variance, or `None` when `h(x)` is
    /// constant and `ω = 0` (the uniform sphere).
    pub fn omega_spec(&self) -> Result<Option<OmegaSpec>> {
        self.validate()?;
        Ok(match &self.kind {
            GeneratorKind::UniformCube { d } => {
                Some(OmegaSpec::IidCoordinates { variance: 1.0 / 12.0, fourth_moment: 9.0 / 5.0, dim: *d })
            }
            GeneratorKind::Normal { cov, .. } => Some(OmegaSpec::Normal(cov.clone())),
            GeneratorKind::UniformSphere { .. } => None,
            GeneratorKind::Discrete { measure } => Some(OmegaSpec::Discrete(measure.clone())),
        })
    }

    /// `n × d` matrix of draws for one replicate.
    pub fn draw_points(&self, replicate: u64, n: usize) -> Result<DMatrix<f64>> {
        self.validate()?;
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate);
        let mut out = DMatrix::zeros(n, d);
        match &self.kind {
            GeneratorKind::UniformCube { .. } => {
                for i in 0..n {
                    for j in 0..d {
                        out[(i, j)] = rng.random::<f64>();
                    }
                }
            }
            GeneratorKind::Normal { mean, cov } => {
                // V = Q Λ Qᵀ; x = mean + Q Λ^{1/2} z works for singular V too
                let (vals, vecs) = linalg::sym_eigen(cov.entries());
                let root = DMatrix::from_fn(d, d, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt());
                let mu = DVector::from_column_slice(mean);
                for i in 0..n {
                    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    out.set_row(i, &(&mu + &root * z).transpose());
                }
            }
            GeneratorKind::UniformSphere { radius, .. } => {
                for i in 0..n {
                    let z = loop {
                        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                        let norm = z.norm();
                        if norm > 0.0 {
                            break z / norm;
                        }
                    };
                    out.set_row(i, &(z * *radius).transpose());
                }
            }
            GeneratorKind::Discrete { measure } => {
                let mut cumulative = Vec::with_capacity(measure.len());
                let mut acc = 0.0;
                for &w in measure.weights() {
                    acc += w;
                    cumulative.push(acc);
                }
                let last = measure.len() - 1;
                for i in 0..n {
                    let u: f64 = rng.random::<f64>() * acc;
                    let j = cumulative.partition_point(|&c| c <= u).min(last);
                    out.set_row(i, &measure.support().row(j));
                }
            }
        }
        Ok(out)
    }
}

pub fn draw_sample(spec: &GeneratorSpec, replicate: u64, n: usize) -> Result<Sample> {
    Sample::new(spec.draw_points(replicate, n)?)
}

/// `ψ_k(μ) = Ψ_k(V_μ)` for the generator's exact covariance.
pub fn theoretical_psi(spec: &GeneratorSpec, k: usize) -> Result<f64> {
    let (_, cov) = spec.moments()?;
    Ok(symfun::psi(&cov, k)?.value)
}

/// Box-plot summary with type-7 quantiles; `variance` uses divisor `R − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(GvarError::Domain("summary needs at least 2 values".into()));
        }
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let r = xs.len() as f64;
        let mean = pairwise_sum(xs) / r;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        Ok(Summary {
            min: sorted[0],
            q25: linalg::quantile_sorted(&sorted, 0.25),
            median: linalg::quantile_sorted(&sorted, 0.5),
            q75: linalg::quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean,
            variance: pairwise_sum(&dev) / (r - 1.0),
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MonteCarloReport {
    pub k: usize,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub theoretical_psi: f64,
    /// `(ψ̂_k)_n / ψ_k(μ)` per replicate, in replicate order.
    pub ratios: Vec<f64>,
    /// Summary of `ratios`.
    pub summary: Summary,
    /// Empirical variance of `(ψ̂_k)_n` itself.
    pub estimate_variance: f64,
    /// `(k+1)² ω / n`.
    pub asymptotic_variance: f64,
    /// Kolmogorov–Smirnov distance of the estimates to
    /// `𝒩(ψ_k(μ), (k+1)² ω / n)`; absent when `ω = 0`.
    pub ks_distance: Option<f64>,
}

impl MonteCarloReport {
    /// Recomputes the summary from the ratios and checks its invariants.
    pub fn validate(&self) -> Result<()> {
        if self.ratios.len() != self.reps {
            return Err(GvarError::Parse(format!("{} ratios for {} replicates", self.ratios.len(), self.reps)));
        }
        let s = &self.summary;
        let ordered = s.min <= s.q25 && s.q25 <= s.median && s.median <= s.q75 && s.q75 <= s.max;
        if !ordered || !(s.variance >= 0.0) || !(self.asymptotic_variance >= 0.0) {
            return Err(GvarError::Parse("summary invariants violated".into()));
        }
        let again = Summary::of(&self.ratios)?;
        if again != *s {
            return Err(GvarError::Parse("summary does not match ratios".into()));
        }
        Ok(())
    }
}

/// One-sample KS distance of `xs` to `𝒩(mean, sd²)`.
pub fn ks_distance_normal(xs: &[f64], mean: f64, sd: f64) -> Result<f64> {
    let dist = Normal::new(mean, sd).map_err(|e| GvarError::Domain(format!("normal reference: {e}")))?;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = dist.cdf(x);
        acc.max(f - i as f64 / r).max((i as f64 + 1.0) / r - f)
    }))
}

/// Runs `reps` replicates of `n` draws; one report per `k` in `k_list`.
pub fn run_monte_carlo(
    spec: &GeneratorSpec,
    n: usize,
    k_list: &[usize],
    reps: usize,
) -> Result<Vec<MonteCarloReport>> {
    spec.validate()?;
    let d = spec.dim();
    if k_list.is_empty() {
        return Err(GvarError::Domain("empty k list".into()));
    }
    if let Some(&k) = k_list.iter().find(|&&k| k == 0 || k > d) {
        return Err(GvarError::Domain(format!("degree k = {k} outside 1..={d}")));
    }
    let kmax = *k_list.iter().max().expect("nonempty");
    if n < kmax + 2 {
        return Err(GvarError::InsufficientSample { n, required: kmax + 2 });
    }
    if reps < 2 {
        return Err(GvarError::Domain("need at least 2 replicates".into()));
    }
    let truth: Vec<f64> = k_list.iter().map(|&k| theoretical_psi(spec, k)).collect::<Result<_>>()?;
    if let Some(pos) = truth.iter().position(|&t| !(t > 0.0)) {
        return Err(GvarError::DegenerateMeasure(format!("psi_{} = 0 for this generator", k_list[pos])));
    }

    // per replicate: ψ̂_k for every k, in k_list order
    let estimates: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let sample = draw_sample(spec, r, n)?;
            let (_, cov) = estimate::empirical_moments(&sample)?;
            k_list
                .iter()
                .map(|&k| estimate::estimate_from_cov(cov.clone(), n, k).map(|e| e.psi_hat))
                .collect()
        })
        .collect::<Result<_>>()?;

    let omega_spec = spec.omega_spec()?;
    k_list
        .iter()
        .enumerate()
        .map(|(slot, &k)| {
            let psi = truth[slot];
            let values: Vec<f64> = estimates.iter().map(|row| row[slot]).collect();
            let ratios: Vec<f64> = values.iter().map(|v| v / psi).collect();
            let asymptotic_variance = match &omega_spec {
                Some(o) => estimate::asymptotic_variance(o, k, n)?,
                None => 0.0,
            };
            let ks_distance = if asymptotic_variance > 0.0 {
                Some(ks_distance_normal(&values, psi, asymptotic_variance.sqrt())?)
            } else {
                None
            };
            Ok(MonteCarloReport {
                k,
                n,
                reps,
                seed: spec.seed,
                theoretical_psi: psi,
                summary: Summary::of(&ratios)?,
                estimate_variance: Summary::of(&values)?.variance,
                ratios,
                asymptotic_variance,
                ks_distance,
            })
        })
        .collect()
}

/// Tidy CSV with header `k,replicate,ratio`.
pub fn write_tidy_csv<W: Write>(reports: &[MonteCarloReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "replicate", "ratio"])?;
    for rep in reports {
        for (i, ratio) in rep.ratios.iter().enumerate() {
            w.write_record([rep.k.to_string(), i.to_string(), ratio.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
