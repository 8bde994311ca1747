//! Orthonormal analysis/synthesis transforms used as sparsity bases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    #[default]
    Identity,
    /// Full-depth orthonormal Haar wavelets; length must be a power of two.
    Haar,
    /// Orthonormal DCT-II.
    Dct,
}

/// A basis bound to a signal length. The DCT matrix is built once here so
/// repeated transforms are plain matrix-vector products.
#[derive(Clone, Debug)]
pub struct Transform {
    basis: Basis,
    n: usize,
    dct: Option<Matrix>,
}

impl Transform {
    pub fn new(basis: Basis, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::dim("transform of length 0"));
        }
        if basis == Basis::Haar && !n.is_power_of_two() {
            return Err(Error::dim(format!("Haar transform needs a power-of-two length, got {n}")));
        }
        let dct = (basis == Basis::Dct).then(|| dct_matrix(n));
        Ok(Self { basis, n, dct })
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::dim(format!(
                "transform of length {} applied to vector of length {}",
                self.n,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match self.basis {
            Basis::Identity => x.to_vec(),
            Basis::Haar => haar_forward(x),
            Basis::Dct => self.dct.as_ref().expect("built in new").matvec(x)?,
        })
    }

    pub fn inverse(&self, c: &[f64]) -> Result<Vec<f64>> {
        self.check(c)?;
        Ok(match self.basis {
            Basis::Identity => c.to_vec(),
            Basis::Haar => haar_inverse(c),
            Basis::Dct => self.dct.as_ref().expect("built in new").matvec_t(c)?,
        })
    }
}

pub fn basis_forward(basis: Basis, x: &[f64]) -> Result<Vec<f64>> {
    Transform::new(basis, x.len())?.forward(x)
}

pub fn basis_inverse(basis: Basis, c: &[f64]) -> Result<Vec<f64>> {
    Transform::new(basis, c.len())?.inverse(c)
}

/// Row `k` is the `k`-th DCT-II basis vector.
fn dct_matrix(n: usize) -> Matrix {
    let nf = n as f64;
    let mut d = Matrix::zeros(n, n);
    for k in 0..n {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for j in 0..n {
            let arg = std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / nf;
            d.set(k, j, scale * arg.cos());
        }
    }
    d
}

// Layout after the transform: [approximation, coarsest details, ..., finest details].
fn haar_forward(x: &[f64]) -> Vec<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = x.to_vec();
    let mut tmp = vec![0.0; x.len()];
    let mut len = x.len();
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let (a, b) = (out[2 * i], out[2 * i + 1]);
            tmp[i] = s * (a + b);
            tmp[half + i] = s * (a - b);
        }
        out[..len].copy_from_slice(&tmp[..len]);
        len = half;
    }
    out
}

fn haar_inverse(c: &[f64]) -> Vec<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = c.to_vec();
    let mut tmp = vec![0.0; c.len()];
    let mut len = 2;
    while len <= c.len() {
        let half = len / 2;
        for i in 0..half {
            let (a, d) = (out[i], out[half + i]);
            tmp[2 * i] = s * (a + d);
            tmp[2 * i + 1] = s * (a - d);
        }
        out[..len].copy_from_slice(&tmp[..len]);
        len *= 2;
    }
    out
}
