//! Signal sets on the unit sphere and the shift group used in the
//! equivariant setting.
//!
//! Sets are represented by dense sampling: a sample set is a [`Matrix`] whose
//! rows are unit vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SignalVariant {
    FullSphere { n: usize },
    /// Unit-norm vectors with at most `s` nonzero entries.
    SparseSet { n: usize, s: usize },
    /// Union of `L` random `k`-dimensional subspaces; each basis is stored as
    /// a `k x n` matrix with orthonormal rows.
    SubspaceUnion { n: usize, k: usize, bases: Vec<Matrix> },
    /// `x(t) = cos(t) u + sin(t) w` with orthonormal `u`, `w`.
    GreatCircle { u: Vec<f64>, w: Vec<f64> },
    FinitePoints(Matrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub variant: SignalVariant,
    /// The dimension exponent `k` plugged into bound formulas.
    pub intrinsic_dim: usize,
}

impl SignalModel {
    pub fn full_sphere(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::dim(format!("sphere needs n >= 2, got {n}")));
        }
        Ok(Self {
            variant: SignalVariant::FullSphere { n },
            intrinsic_dim: n,
        })
    }

    pub fn sparse_set(n: usize, s: usize) -> Result<Self> {
        if s == 0 || s > n {
            return Err(Error::dim(format!("sparsity {s} invalid for n = {n}")));
        }
        Ok(Self {
            variant: SignalVariant::SparseSet { n, s },
            intrinsic_dim: s,
        })
    }

    pub fn subspace_union(n: usize, k: usize, l: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::dim(format!("subspace dimension {k} invalid for n = {n}")));
        }
        if l == 0 {
            return Err(Error::Config("subspace union needs L >= 1".into()));
        }
        let bases = (0..l)
            .map(|i| {
                let mut r = rng::rng(rng::split_seed(seed, i as u64));
                loop {
                    let g = Matrix::from_vec_unchecked(k, n, rng::normal_vec(&mut r, k * n));
                    if let Ok(q) = linalg::orthonormalize_rows(&g) {
                        return q;
                    }
                }
            })
            .collect();
        Ok(Self {
            variant: SignalVariant::SubspaceUnion { n, k, bases },
            intrinsic_dim: k,
        })
    }

    pub fn great_circle(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::dim(format!("great circle needs n >= 2, got {n}")));
        }
        let mut r = rng::rng(seed);
        let q = loop {
            let g = Matrix::from_vec_unchecked(2, n, rng::normal_vec(&mut r, 2 * n));
            if let Ok(q) = linalg::orthonormalize_rows(&g) {
                break q;
            }
        };
        Ok(Self {
            variant: SignalVariant::GreatCircle {
                u: q.row(0).to_vec(),
                w: q.row(1).to_vec(),
            },
            intrinsic_dim: 1,
        })
    }

    /// A finite set; rows are renormalized and must be nonzero.
    pub fn finite_points(points: Matrix) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::InvalidInput("finite point set is empty".into()));
        }
        let mut p = points;
        for i in 0..p.rows() {
            let row = p.row_mut(i);
            let n = linalg::norm(row);
            if n == 0.0 {
                return Err(Error::InvalidInput(format!("point {i} is zero")));
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self {
            variant: SignalVariant::FinitePoints(p),
            intrinsic_dim: 0,
        })
    }

    pub fn with_intrinsic_dim(mut self, k: usize) -> Self {
        self.intrinsic_dim = k;
        self
    }

    pub fn n(&self) -> usize {
        match &self.variant {
            SignalVariant::FullSphere { n }
            | SignalVariant::SparseSet { n, .. }
            | SignalVariant::SubspaceUnion { n, .. } => *n,
            SignalVariant::GreatCircle { u, .. } => u.len(),
            SignalVariant::FinitePoints(p) => p.cols(),
        }
    }

    /// Point of a great-circle model at angle `t`.
    pub fn circle_point(&self, t: f64) -> Option<Vec<f64>> {
        match &self.variant {
            SignalVariant::GreatCircle { u, w } => {
                let (s, c) = t.sin_cos();
                Some(u.iter().zip(w).map(|(a, b)| c * a + s * b).collect())
            }
            _ => None,
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Result<Matrix> {
        sample_signals(self, count, seed)
    }
}

/// `count` unit vectors drawn from `model`, one per row.
pub fn sample_signals(model: &SignalModel, count: usize, seed: u64) -> Result<Matrix> {
    if count == 0 {
        return Err(Error::InvalidInput("sample count must be >= 1".into()));
    }
    let n = model.n();
    let mut r = rng::rng(seed);
    let mut out = Matrix::zeros(count, n);
    for i in 0..count {
        let row = out.row_mut(i);
        match &model.variant {
            SignalVariant::FullSphere { .. } => {
                row.copy_from_slice(&rng::unit_vector(&mut r, n));
            }
            SignalVariant::SparseSet { s, .. } => {
                if *s > n {
                    return Err(Error::dim(format!("sparsity {s} exceeds n = {n}")));
                }
                let support = rand::seq::index::sample(&mut r, n, *s);
                let coeffs = rng::unit_vector(&mut r, *s);
                for (j, c) in support.iter().zip(coeffs) {
                    row[j] = c;
                }
            }
            SignalVariant::SubspaceUnion { k, bases, .. } => {
                let basis = &bases[rng::uniform_index(&mut r, bases.len())];
                let coeffs = rng::unit_vector(&mut r, *k);
                for (c, b) in coeffs.iter().zip(basis.iter_rows()) {
                    linalg::axpy(*c, b, row);
                }
            }
            SignalVariant::GreatCircle { u, w } => {
                let t = std::f64::consts::TAU * rng::uniform(&mut r);
                let (s, c) = t.sin_cos();
                for ((x, a), b) in row.iter_mut().zip(u).zip(w) {
                    *x = c * a + s * b;
                }
            }
            SignalVariant::FinitePoints(p) => {
                row.copy_from_slice(p.row(rng::uniform_index(&mut r, p.rows())));
            }
        }
        let nr = linalg::norm(row);
        row.iter_mut().for_each(|x| *x /= nr);
    }
    Ok(out)
}

/// Smallest Euclidean distance from `v` to any sample.
pub fn distance_to_set(v: &[f64], samples: &Matrix) -> Result<f64> {
    if samples.rows() == 0 {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    if samples.cols() != v.len() {
        return Err(Error::dim("distance_to_set: dimension mismatch"));
    }
    Ok(samples
        .iter_rows()
        .map(|x| linalg::distance(x, v))
        .fold(f64::INFINITY, f64::min))
}

/// Distance from each row of `probes` to the nearest row of `samples`, via
/// `‖x − v‖² = ‖x‖² + ‖v‖² − 2⟨x, v⟩` on gemm blocks.
pub fn distances_to_set(probes: &Matrix, samples: &Matrix) -> Result<Vec<f64>> {
    if samples.rows() == 0 {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    if samples.cols() != probes.cols() {
        return Err(Error::dim("distances_to_set: dimension mismatch"));
    }
    let sample_sq: Vec<f64> = samples.iter_rows().map(|x| linalg::dot(x, x)).collect();
    let mut out = Vec::with_capacity(probes.rows());
    const BLOCK: usize = 256;
    for start in (0..probes.rows()).step_by(BLOCK) {
        let end = (start + BLOCK).min(probes.rows());
        let block = probes.row_block(start, end);
        let inner = block.matmul_t(samples)?;
        for (i, v) in block.iter_rows().enumerate() {
            let vv = linalg::dot(v, v);
            let best = inner
                .row(i)
                .iter()
                .zip(&sample_sq)
                .map(|(ip, xx)| xx + vv - 2.0 * ip)
                .fold(f64::INFINITY, f64::min);
            out.push(best.max(0.0).sqrt());
        }
    }
    Ok(out)
}

/// Applies `rotation` to every sample.
pub fn rotate_samples(rotation: &Matrix, samples: &Matrix) -> Result<Matrix> {
    if rotation.rows() != rotation.cols() || rotation.cols() != samples.cols() {
        return Err(Error::dim(format!(
            "rotation {:?} incompatible with samples of dimension {}",
            rotation.shape(),
            samples.cols()
        )));
    }
    samples.matmul_t(rotation)
}

/// Circular 2-D shifts of a `height x width` image stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftGroup {
    height: usize,
    width: usize,
    /// `(dy, dx)` offsets; element 0 is always the identity.
    elements: Vec<(usize, usize)>,
}

impl ShiftGroup {
    /// Every circular shift, `height · width` elements.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("shift group needs a nonempty image"));
        }
        let elements = (0..height)
            .flat_map(|dy| (0..width).map(move |dx| (dy, dx)))
            .collect();
        Ok(Self {
            height,
            width,
            elements,
        })
    }

    /// 1-D cyclic coordinate shifts of a length-`n` vector.
    pub fn cyclic(n: usize) -> Result<Self> {
        Self::new(1, n)
    }

    /// A configured subset; the identity is inserted first if absent.
    pub fn with_elements(height: usize, width: usize, shifts: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::new(height, width)?;
        let mut elements = vec![(0, 0)];
        for &(dy, dx) in shifts {
            let e = (dy % height, dx % width);
            if !elements.contains(&e) {
                elements.push(e);
            }
        }
        g.elements = elements;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn element(&self, g: usize) -> Result<(usize, usize)> {
        self.elements.get(g).copied().ok_or(Error::Index {
            index: g,
            len: self.elements.len(),
        })
    }

    /// Index permutation for element `g`: `out[j] = x[perm[j]]`.
    pub fn permutation(&self, g: usize) -> Result<Vec<usize>> {
        let (dy, dx) = self.element(g)?;
        Ok(self.shift_permutation(dy as i64, dx as i64))
    }

    fn shift_permutation(&self, dy: i64, dx: i64) -> Vec<usize> {
        let (h, w) = (self.height as i64, self.width as i64);
        let mut perm = vec![0; self.dim()];
        for r in 0..h {
            for c in 0..w {
                let dst = (r + dy).rem_euclid(h) * w + (c + dx).rem_euclid(w);
                perm[dst as usize] = (r * w + c) as usize;
            }
        }
        perm
    }

    /// Shifts `x` down by `dy` rows and right by `dx` columns, wrapping around.
    pub fn apply_shift(&self, dy: i64, dx: i64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim(format!(
                "signal of length {} for a {}x{} shift group",
                x.len(),
                self.height,
                self.width
            )));
        }
        Ok(self.shift_permutation(dy, dx).iter().map(|&i| x[i]).collect())
    }

    pub fn apply_transform(&self, g: usize, x: &[f64]) -> Result<Vec<f64>> {
        let (dy, dx) = self.element(g)?;
        self.apply_shift(dy as i64, dx as i64, x)
    }

    pub fn apply_inverse(&self, g: usize, x: &[f64]) -> Result<Vec<f64>> {
        let (dy, dx) = self.element(g)?;
        self.apply_shift(-(dy as i64), -(dx as i64), x)
    }
}
