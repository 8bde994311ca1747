//! Binary iterative hard thresholding with sparsity in an orthonormal basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::metrics;
use crate::sensing::BinaryVector;
use crate::transform::{Basis, Transform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BihtConfig {
    pub sparsity: usize,
    pub step: f64,
    pub iters: usize,
    #[serde(default)]
    pub basis: Basis,
    #[serde(default = "yes")]
    pub normalize_output: bool,
    /// Renormalize the iterate after every projection.
    #[serde(default)]
    pub normalize_each_iter: bool,
}

fn yes() -> bool {
    true
}

impl BihtConfig {
    pub fn new(sparsity: usize, step: f64, iters: usize, basis: Basis) -> Self {
        Self {
            sparsity,
            step,
            iters,
            basis,
            normalize_output: true,
            normalize_each_iter: false,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("BIHT step must be positive, got {}", self.step)));
        }
        if self.iters == 0 {
            return Err(Error::Config("BIHT needs at least one iteration".into()));
        }
        if self.sparsity > n {
            return Err(Error::Config(format!(
                "sparsity {} exceeds signal length {n}",
                self.sparsity
            )));
        }
        Ok(())
    }
}

/// Keeps the `s` largest-magnitude entries; ties go to the lower index.
pub fn hard_threshold(coeffs: &[f64], s: usize) -> Result<Vec<f64>> {
    if s > coeffs.len() {
        return Err(Error::Config(format!(
            "hard_threshold: s = {s} exceeds length {}",
            coeffs.len()
        )));
    }
    let mut out = vec![0.0; coeffs.len()];
    if s == 0 {
        return Ok(out);
    }
    let mut idx: Vec<usize> = (0..coeffs.len()).collect();
    // stable sort keeps lower indices first among equal magnitudes
    idx.sort_by(|&a, &b| coeffs[b].abs().total_cmp(&coeffs[a].abs()));
    for &i in &idx[..s] {
        out[i] = coeffs[i];
    }
    Ok(out)
}

/// A reusable solver for one basis and length.
pub struct Biht {
    cfg: BihtConfig,
    transform: Transform,
}

impl Biht {
    pub fn new(cfg: BihtConfig, n: usize) -> Result<Self> {
        cfg.validate(n)?;
        let transform = Transform::new(cfg.basis, n)?;
        Ok(Self { cfg, transform })
    }

    pub fn config(&self) -> &BihtConfig {
        &self.cfg
    }

    fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let c = self.transform.forward(x)?;
        self.transform.inverse(&hard_threshold(&c, self.cfg.sparsity)?)
    }

    /// Runs the iteration and returns the final iterate. With
    /// `normalize_output` the result has unit norm; an all-zero iterate is
    /// replaced by the normalized back-projection `Aᵀy`.
    pub fn reconstruct(&self, y: &BinaryVector, a: &Matrix) -> Result<Vec<f64>> {
        let n = self.transform.len();
        if a.cols() != n || a.rows() != y.len() {
            return Err(Error::dim(format!(
                "BIHT: operator {}x{}, measurements {}, signal length {n}",
                a.rows(),
                a.cols(),
                y.len()
            )));
        }
        let yf = y.to_f64();
        let scale = self.cfg.step / a.rows() as f64;
        let mut x = vec![0.0; n];
        let mut residual = vec![0.0; a.rows()];
        for _ in 0..self.cfg.iters {
            let ax = a.matvec(&x)?;
            for ((r, &yi), &v) in residual.iter_mut().zip(&yf).zip(&ax) {
                *r = yi - residual_sign(v);
            }
            let grad = a.matvec_t(&residual)?;
            linalg::axpy(scale, &grad, &mut x);
            x = self.project(&x)?;
            if self.cfg.normalize_each_iter {
                if let Some(u) = linalg::normalized(&x) {
                    x = u;
                }
            }
        }
        if !self.cfg.normalize_output {
            return Ok(x);
        }
        match linalg::normalized(&x) {
            Some(u) => Ok(u),
            None => linalg::normalized(&a.matvec_t(&yf)?)
                .ok_or_else(|| Error::Numerical("BIHT: Aᵀy vanishes".into())),
        }
    }
}

// An exactly zero measurement of the iterate carries no sign; this makes the
// first step from x₀ = 0 the plain back-projection (τ/m)Aᵀy.
fn residual_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn biht_reconstruct(y: &BinaryVector, a: &Matrix, cfg: &BihtConfig) -> Result<Vec<f64>> {
    Biht::new(cfg.clone(), a.cols())?.reconstruct(y, a)
}

/// One measurement vector together with the operator that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub y: &'a BinaryVector,
    pub a: &'a Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMetric {
    /// Mean PSNR (capped) against held-out truths.
    Psnr,
    /// Mean fraction of bits with `sign(A x̂) = y`.
    SignConsistency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub config: BihtConfig,
    pub metric: GridMetric,
    pub score: f64,
    /// `(s, τ, score)` for every grid cell, in grid order.
    pub table: Vec<(usize, f64, f64)>,
}

/// Exhaustive search over `s_grid × tau_grid`. Scores by PSNR when truths are
/// supplied, otherwise by sign consistency; ties go to the smallest `s`,
/// then the smallest `τ`.
pub fn grid_search_biht(
    observations: &[Observation<'_>],
    truths: Option<&[Vec<f64>]>,
    s_grid: &[usize],
    tau_grid: &[f64],
    iters: usize,
    basis: Basis,
) -> Result<GridSearchResult> {
    if s_grid.is_empty() || tau_grid.is_empty() {
        return Err(Error::Config("BIHT grid search needs nonempty grids".into()));
    }
    if observations.is_empty() {
        return Err(Error::Config("BIHT grid search needs observations".into()));
    }
    if let Some(t) = truths {
        if t.len() != observations.len() {
            return Err(Error::dim("one truth per observation required"));
        }
    }
    let n = observations[0].a.cols();
    let metric = if truths.is_some() {
        GridMetric::Psnr
    } else {
        GridMetric::SignConsistency
    };
    let mut s_sorted = s_grid.to_vec();
    s_sorted.sort_unstable();
    s_sorted.dedup();
    let mut tau_sorted = tau_grid.to_vec();
    tau_sorted.sort_by(f64::total_cmp);
    tau_sorted.dedup();

    let mut best: Option<(BihtConfig, f64)> = None;
    let mut table = Vec::new();
    for &s in &s_sorted {
        for &tau in &tau_sorted {
            let cfg = BihtConfig::new(s, tau, iters, basis);
            let solver = Biht::new(cfg.clone(), n)?;
            let mut total = 0.0;
            for (i, obs) in observations.iter().enumerate() {
                let xhat = solver.reconstruct(obs.y, obs.a)?;
                total += match truths {
                    Some(t) => metrics::psnr_capped(&t[i], &xhat)?,
                    None => sign_consistency(obs.y, obs.a, &xhat)?,
                };
            }
            let score = total / observations.len() as f64;
            table.push((s, tau, score));
            // strict improvement only, so the earliest (smallest s, τ) wins ties
            if best.as_ref().is_none_or(|(_, b)| score > *b) {
                best = Some((cfg, score));
            }
        }
    }
    let (config, score) = best.expect("grids are nonempty");
    Ok(GridSearchResult {
        config,
        metric,
        score,
        table,
    })
}

/// Fraction of measurements reproduced by `x̂`.
pub fn sign_consistency(y: &BinaryVector, a: &Matrix, xhat: &[f64]) -> Result<f64> {
    let yhat = crate::sensing::sign_quantize(&a.matvec(xhat)?)?;
    Ok(1.0 - y.hamming(&yhat) as f64 / y.len() as f64)
}
