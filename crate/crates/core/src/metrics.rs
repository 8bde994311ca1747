//! Normalized PSNR and summary statistics.

use crate::error::{Error, Result};
use crate::linalg;

/// Reports clip PSNR here; a reconstruction parallel to the truth is +∞.
pub const PSNR_CAP_DB: f64 = 200.0;

/// `−20 log₁₀ ‖x − x̂ ‖x‖/‖x̂‖‖` in dB. The reconstruction is rescaled to the
/// reference norm first, so the value is invariant to positive scaling of
/// `x̂`. Returns `+∞` when the rescaled error is exactly zero.
pub fn psnr(x: &[f64], xhat: &[f64]) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::dim(format!("psnr: lengths {} and {}", x.len(), xhat.len())));
    }
    let nh = linalg::norm(xhat);
    if !(nh > 0.0 && nh.is_finite()) {
        return Err(Error::Numerical(format!(
            "PSNR undefined for a reconstruction of norm {nh}"
        )));
    }
    let scale = linalg::norm(x) / nh;
    let err = x
        .iter()
        .zip(xhat)
        .map(|(a, b)| (a - scale * b) * (a - scale * b))
        .sum::<f64>()
        .sqrt();
    Ok(-20.0 * err.log10())
}

pub fn psnr_capped(x: &[f64], xhat: &[f64]) -> Result<f64> {
    Ok(psnr(x, xhat)?.min(PSNR_CAP_DB))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
