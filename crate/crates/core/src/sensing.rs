//! The one-bit forward model: Gaussian operators, sign quantization,
//! noisy measurement, operator stacking, numerical rank and random rotations.
//!
//! `sign(0)` is taken to be `+1` everywhere in the crate. Operators are
//! indexed from zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng;

/// A vector of measurement bits, each exactly `-1` or `+1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryVector(Vec<i8>);

impl BinaryVector {
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if let Some(i) = bits.iter().position(|b| *b != 1 && *b != -1) {
            return Err(Error::InvalidInput(format!(
                "bit {i} is {}, expected -1 or +1",
                bits[i]
            )));
        }
        Ok(Self(bits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[i8] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|b| -b).collect())
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn concat(parts: &[BinaryVector]) -> Self {
        Self(parts.iter().flat_map(|p| p.0.iter().copied()).collect())
    }
}

#[inline]
pub(crate) fn sign_bit(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// Entrywise sign with `sign(0) = +1`.
pub fn sign_quantize(v: &[f64]) -> Result<BinaryVector> {
    if let Some(i) = v.iter().position(|x| x.is_nan()) {
        return Err(Error::InvalidInput(format!("NaN at position {i}")));
    }
    Ok(BinaryVector(v.iter().map(|&x| sign_bit(x)).collect()))
}

/// `rows x cols` matrix of iid standard normals from the seeded stream.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::dim(format!("gaussian_matrix({rows}, {cols})")));
    }
    let mut r = rng::rng(seed);
    Ok(Matrix::from_vec_unchecked(
        rows,
        cols,
        rng::normal_vec(&mut r, rows * cols),
    ))
}

/// The `G` sensing operators plus the pre-quantization noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorBank {
    ops: Vec<Matrix>,
    noise_sigma: f64,
    seed: u64,
}

impl OperatorBank {
    pub fn new(ops: Vec<Matrix>, noise_sigma: f64, seed: u64) -> Result<Self> {
        let first = ops
            .first()
            .ok_or_else(|| Error::Config("operator bank needs at least one operator".into()))?;
        let shape = first.shape();
        if first.is_empty() {
            return Err(Error::dim("empty operator"));
        }
        if let Some(g) = ops.iter().position(|a| a.shape() != shape) {
            return Err(Error::dim(format!(
                "operator {g} has shape {:?}, expected {shape:?}",
                ops[g].shape()
            )));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Range(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        Ok(Self {
            ops,
            noise_sigma,
            seed,
        })
    }

    /// `G` Gaussian operators; operator `g` uses stream `g` of `seed`.
    pub fn gaussian(m: usize, n: usize, g: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        if g == 0 {
            return Err(Error::Config("operator bank needs G >= 1".into()));
        }
        let ops = (0..g)
            .map(|i| gaussian_matrix(m, n, rng::split_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ops, noise_sigma, seed)
    }

    pub fn m(&self) -> usize {
        self.ops[0].rows()
    }

    pub fn n(&self) -> usize {
        self.ops[0].cols()
    }

    /// Number of operators `G`.
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ops(&self) -> &[Matrix] {
        &self.ops
    }

    pub fn op(&self, g: usize) -> Result<&Matrix> {
        self.ops.get(g).ok_or(Error::Index {
            index: g,
            len: self.ops.len(),
        })
    }

    pub fn with_noise(&self, noise_sigma: f64) -> Result<Self> {
        Self::new(self.ops.clone(), noise_sigma, self.seed)
    }

    /// `sign(A_g x + σ z)` with `z` drawn from `noise_seed`. With `σ = 0`
    /// the noise stream is never touched.
    pub fn measure(&self, g: usize, x: &[f64], noise_seed: u64) -> Result<BinaryVector> {
        let a = self.op(g)?;
        linalg::check_unit(x, 1e-9)?;
        let mut v = a.matvec(x)?;
        if self.noise_sigma > 0.0 {
            let mut r = rng::rng(noise_seed);
            for vi in v.iter_mut() {
                *vi += self.noise_sigma * rng::normal(&mut r);
            }
        }
        sign_quantize(&v)
    }

    /// The `mG x n` vertical concatenation `[A_1; ...; A_G]`.
    pub fn stack(&self) -> Matrix {
        let refs: Vec<&Matrix> = self.ops.iter().collect();
        Matrix::vstack(&refs).expect("bank operators share a shape")
    }
}

/// Number of singular values above `tol` times the largest one.
pub fn numeric_rank(a: &Matrix, tol: f64) -> Result<usize> {
    if !(tol > 0.0) {
        return Err(Error::Range(format!("rank tolerance must be > 0, got {tol}")));
    }
    Ok(linalg::svd(a)?.rank(tol))
}

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Haar-distributed rotation in SO(n): Gram–Schmidt on a seeded Gaussian
/// matrix, with the first row negated when the determinant comes out negative.
pub fn random_rotation(n: usize, seed: u64) -> Result<Matrix> {
    if n < 2 {
        return Err(Error::dim(format!("rotation needs n >= 2, got {n}")));
    }
    let mut r = rng::rng(seed);
    loop {
        let g = Matrix::from_vec_unchecked(n, n, rng::normal_vec(&mut r, n * n));
        let Ok(mut q) = linalg::orthonormalize_rows(&g) else {
            continue;
        };
        if linalg::determinant(&q)? < 0.0 {
            q.row_mut(0).iter_mut().for_each(|x| *x = -*x);
        }
        return Ok(q);
    }
}

/// Fraction of bits that differ between `a` and `b`.
pub fn flip_fraction(a: &BinaryVector, b: &BinaryVector) -> f64 {
    a.hamming(b) as f64 / a.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_convention_at_zero() {
        let y = sign_quantize(&[1.5, -0.2, 0.0]).unwrap();
        assert_eq!(y.bits(), &[1, -1, 1]);
        assert_eq!(sign_quantize(&[-1.0, -3.0]).unwrap().bits(), &[-1, -1]);
        assert!(matches!(sign_quantize(&[f64::NAN]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn binary_vector_rejects_other_values() {
        assert!(BinaryVector::new(vec![1, 0]).is_err());
    }

    #[test]
    fn gaussian_matrix_is_seeded() {
        assert_eq!(gaussian_matrix(3, 3, 7).unwrap(), gaussian_matrix(3, 3, 7).unwrap());
        assert_ne!(gaussian_matrix(2, 2, 1).unwrap(), gaussian_matrix(2, 2, 2).unwrap());
        assert!(matches!(gaussian_matrix(0, 3, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn gaussian_matrix_moments() {
        let a = gaussian_matrix(1000, 1000, 1).unwrap();
        let n = a.as_slice().len() as f64;
        let mean = a.as_slice().iter().sum::<f64>() / n;
        let var = a.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((0.98..=1.02).contains(&var), "variance {var}");
    }

    #[test]
    fn noiseless_identity_measurement() {
        let bank = OperatorBank::new(vec![Matrix::identity(3)], 0.0, 0).unwrap();
        let y = bank.measure(0, &[1.0, 0.0, 0.0], 5).unwrap();
        assert_eq!(y.bits(), &[1, 1, 1]);
        assert_eq!(y, bank.measure(0, &[1.0, 0.0, 0.0], 99).unwrap());
    }

    #[test]
    fn measure_errors() {
        let bank = OperatorBank::gaussian(4, 3, 2, 0.0, 1).unwrap();
        assert!(matches!(
            bank.measure(2, &[1.0, 0.0, 0.0], 0),
            Err(Error::Index { index: 2, len: 2 })
        ));
        assert!(matches!(
            bank.measure(0, &[1.0, 1.0, 0.0], 0),
            Err(Error::Normalization(_))
        ));
    }

    #[test]
    fn flip_rate_matches_gaussian_angle_formula() {
        // For unit x and standard Gaussian rows, a bit flips when the noise
        // overturns a N(0,1) pre-activation: P = atan(σ)/π.
        let (n, m, sigma) = (64, 274, 0.13);
        let clean = OperatorBank::gaussian(m, n, 1, 0.0, 11).unwrap();
        let noisy = clean.with_noise(sigma).unwrap();
        let mut r = rng::rng(5);
        let trials = 1000;
        let mut total = 0.0;
        for t in 0..trials {
            let x = rng::unit_vector(&mut r, n);
            let y0 = clean.measure(0, &x, 0).unwrap();
            let y1 = noisy.measure(0, &x, t).unwrap();
            total += flip_fraction(&y0, &y1);
        }
        let observed = total / trials as f64;
        let expected = sigma.atan() / std::f64::consts::PI;
        assert!((observed - expected).abs() < 0.005, "{observed} vs {expected}");
    }

    #[test]
    fn stack_preserves_order() {
        let bank = OperatorBank::gaussian(2, 3, 2, 0.0, 4).unwrap();
        let s = bank.stack();
        assert_eq!(s.shape(), (4, 3));
        for j in 0..4 {
            assert_eq!(s.row(j), bank.op(j / 2).unwrap().row(j % 2));
        }
        let single = OperatorBank::gaussian(2, 3, 1, 0.0, 4).unwrap();
        assert_eq!(&single.stack(), single.op(0).unwrap());

        let x = linalg::normalized(&[0.3, -1.0, 0.5]).unwrap();
        let stacked = sign_quantize(&s.matvec(&x).unwrap()).unwrap();
        let parts: Vec<_> = (0..2).map(|g| bank.measure(g, &x, 0).unwrap()).collect();
        assert_eq!(stacked, BinaryVector::concat(&parts));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numeric_rank(&Matrix::identity(4), 1e-10).unwrap(), 4);
        let dup = Matrix::new(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(numeric_rank(&dup, 1e-10).unwrap(), 1);
        for s in 0..100 {
            let a = gaussian_matrix(8, 5, s).unwrap();
            assert_eq!(numeric_rank(&a, 1e-10).unwrap(), 5);
        }
        assert!(numeric_rank(&Matrix::zeros(0, 0), 1e-10).is_err());
    }

    #[test]
    fn stacked_rank_never_exceeds_shape() {
        for s in 0..100 {
            let bank = OperatorBank::gaussian(3, 8, 2, 0.0, s).unwrap();
            assert_eq!(numeric_rank(&bank.stack(), 1e-10).unwrap(), 6);
            let full = OperatorBank::gaussian(3, 8, 3, 0.0, s).unwrap();
            assert_eq!(numeric_rank(&full.stack(), 1e-10).unwrap(), 8);
        }
    }

    #[test]
    fn rotation_is_special_orthogonal() {
        for n in [2, 3, 7] {
            let r = random_rotation(n, 9).unwrap();
            let rtr = r.transpose().matmul(&r).unwrap();
            assert!(rtr.max_abs_diff(&Matrix::identity(n)) < 1e-10);
            assert!((linalg::determinant(&r).unwrap() - 1.0).abs() < 1e-8);
        }
        let r3 = random_rotation(3, 9).unwrap();
        // explicit cofactor expansion for the 3x3 determinant
        let g = |i, j| r3.get(i, j);
        let det = g(0, 0) * (g(1, 1) * g(2, 2) - g(1, 2) * g(2, 1))
            - g(0, 1) * (g(1, 0) * g(2, 2) - g(1, 2) * g(2, 0))
            + g(0, 2) * (g(1, 0) * g(2, 1) - g(1, 1) * g(2, 0));
        assert!((det - 1.0).abs() < 1e-8);
        assert_ne!(random_rotation(3, 1).unwrap(), random_rotation(3, 2).unwrap());
        assert!(random_rotation(1, 0).is_err());
    }

    proptest! {
        #[test]
        fn sign_is_scale_invariant(v in prop::collection::vec(-10.0f64..10.0, 1..20), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            prop_assert_eq!(sign_quantize(&v).unwrap(), sign_quantize(&scaled).unwrap());
        }

        #[test]
        fn sign_is_idempotent(bits in prop::collection::vec(prop::bool::ANY, 1..20)) {
            let y: Vec<f64> = bits.iter().map(|b| if *b { 1.0 } else { -1.0 }).collect();
            let q = sign_quantize(&y).unwrap();
            prop_assert_eq!(q.to_f64(), y);
        }

        #[test]
        fn rotation_preserves_distances(seed in 0u64..500, u in prop::collection::vec(-1.0f64..1.0, 3), v in prop::collection::vec(-1.0f64..1.0, 3)) {
            let r = random_rotation(3, seed).unwrap();
            let ru = r.matvec(&u).unwrap();
            let rv = r.matvec(&v).unwrap();
            prop_assert!((linalg::distance(&ru, &rv) - linalg::distance(&u, &v)).abs() < 1e-9);
            prop_assert!((linalg::norm(&ru) - linalg::norm(&u)).abs() < 1e-9);
        }

        #[test]
        fn noiseless_measure_ignores_noise_seed(seed in 0u64..1000, a in 0u64..1000, b in 0u64..1000) {
            let bank = OperatorBank::gaussian(6, 4, 1, 0.0, seed).unwrap();
            let x = rng::unit_vector(&mut rng::rng(seed), 4);
            prop_assert_eq!(bank.measure(0, &x, a).unwrap(), bank.measure(0, &x, b).unwrap());
        }
    }
}
