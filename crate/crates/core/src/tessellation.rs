//! Consistency cells of the tessellation `x ↦ sign(Ax)` on the unit sphere.
//!
//! Set-level quantities (cell diameters, the identification error) are
//! suprema over continua; everything here returns one-sided Monte-Carlo
//! estimates: lower bounds on diameters and on `δ`, lower counts of cells.
//! Each report carries the number of probes behind it.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng;
use crate::sensing::{self, BinaryVector, OperatorBank};
use crate::signal::{self, SignalModel, SignalVariant};

/// Largest bucket for which the exact farthest pair is maintained; later
/// members of a bigger bucket are ignored, which keeps the estimate a lower
/// bound and monotone in the probe prefix.
pub const MAX_BUCKET_EXACT: usize = 2048;

/// Tangent perturbation scales for identification-error probes.
pub const PROBE_SCALES: [f64; 4] = [0.05, 0.2, 0.5, 1.0];

const BLOCK: usize = 4096;

/// The binary code naming a consistency cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellCode {
    pub bits: BinaryVector,
}

pub fn cell_code(a: &Matrix, x: &[f64]) -> Result<CellCode> {
    linalg::check_unit(x, 1e-9)?;
    Ok(CellCode {
        bits: sensing::sign_quantize(&a.matvec(x)?)?,
    })
}

/// Signs packed 64 to a word; bit set means `+1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) struct PackedCode(Box<[u64]>);

impl PackedCode {
    fn from_values(v: &[f64]) -> Self {
        let mut words = vec![0u64; v.len().div_ceil(64)];
        for (i, &x) in v.iter().enumerate() {
            if x >= 0.0 {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self(words.into_boxed_slice())
    }

    fn from_bits(y: &BinaryVector) -> Self {
        let v: Vec<f64> = y.to_f64();
        Self::from_values(&v)
    }

    fn hamming(&self, other: &Self) -> u32 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

/// Packed codes of every row of `samples` under `a`, computed blockwise.
fn packed_codes(a: &Matrix, samples: &Matrix) -> Result<Vec<PackedCode>> {
    check_dims(a, samples)?;
    let mut out = Vec::with_capacity(samples.rows());
    for_each_code(a, samples, |_, code| out.push(code))?;
    Ok(out)
}

fn for_each_code(
    a: &Matrix,
    samples: &Matrix,
    mut f: impl FnMut(usize, PackedCode),
) -> Result<()> {
    for start in (0..samples.rows()).step_by(BLOCK) {
        let end = (start + BLOCK).min(samples.rows());
        let values = samples.row_block(start, end).matmul_t(a)?;
        for (i, row) in values.iter_rows().enumerate() {
            f(start + i, PackedCode::from_values(row));
        }
    }
    Ok(())
}

fn check_dims(a: &Matrix, samples: &Matrix) -> Result<()> {
    if a.cols() != samples.cols() {
        return Err(Error::dim(format!(
            "operator has {} columns, samples have dimension {}",
            a.cols(),
            samples.cols()
        )));
    }
    Ok(())
}

/// Number of distinct cell codes among the samples, a lower bound on the
/// number of cells the sampled set intersects.
pub fn count_cells_sampled(a: &Matrix, samples: &Matrix) -> Result<usize> {
    if samples.rows() == 0 {
        return Err(Error::InvalidInput("no samples".into()));
    }
    check_dims(a, samples)?;
    let mut seen = HashSet::new();
    for_each_code(a, samples, |_, code| {
        seen.insert(code);
    })?;
    Ok(seen.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveCellCount {
    pub cells: usize,
    /// Rows whose hyperplane contains the circle's plane; they never cross it.
    pub degenerate_rows: Vec<usize>,
}

/// Exact number of cells crossed by a great circle.
///
/// Row `a_i` vanishes on `x(t) = cos(t) u + sin(t) w` at the two antipodal
/// angles solving `(a_i·u) cos t + (a_i·w) sin t = 0`. Sorting all crossings
/// splits the circle into arcs; the codes at arc midpoints are collected so
/// that arcs sharing a code are merged. Crossings closer than `tol` are
/// treated as one.
pub fn count_cells_curve(a: &Matrix, circle: &SignalModel, tol: f64) -> Result<CurveCellCount> {
    let SignalVariant::GreatCircle { u, w } = &circle.variant else {
        return Err(Error::Config("count_cells_curve needs a great-circle model".into()));
    };
    if a.cols() != u.len() {
        return Err(Error::dim("circle dimension does not match operator"));
    }
    let tau = std::f64::consts::TAU;
    let mut crossings = Vec::with_capacity(2 * a.rows());
    let mut degenerate_rows = Vec::new();
    let mut coeffs = Vec::with_capacity(a.rows());
    for (i, row) in a.iter_rows().enumerate() {
        let p = linalg::dot(row, u);
        let q = linalg::dot(row, w);
        coeffs.push((p, q));
        if p.hypot(q) <= tol * linalg::norm(row) {
            degenerate_rows.push(i);
            continue;
        }
        let t0 = (-p).atan2(q).rem_euclid(tau);
        crossings.push(t0);
        crossings.push((t0 + std::f64::consts::PI).rem_euclid(tau));
    }
    if !degenerate_rows.is_empty() {
        log::warn!(
            "{} degenerate row(s) excluded from the curve cell count",
            degenerate_rows.len()
        );
    }
    crossings.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::with_capacity(crossings.len());
    for t in crossings {
        if distinct.last().is_none_or(|last| t - last > tol) {
            distinct.push(t);
        }
    }
    if distinct.len() >= 2 && distinct[0] + tau - distinct[distinct.len() - 1] <= tol {
        distinct.pop();
    }
    if distinct.len() <= 1 {
        return Ok(CurveCellCount {
            cells: 1,
            degenerate_rows,
        });
    }
    let code_at = |t: f64| -> Vec<i8> {
        let (s, c) = t.sin_cos();
        coeffs
            .iter()
            .enumerate()
            .filter(|(i, _)| !degenerate_rows.contains(i))
            .map(|(_, (p, q))| sensing::sign_bit(p * c + q * s))
            .collect()
    };
    let mut codes = HashSet::new();
    for (j, &t) in distinct.iter().enumerate() {
        let next = if j + 1 < distinct.len() {
            distinct[j + 1]
        } else {
            distinct[0] + tau
        };
        codes.insert(code_at(0.5 * (t + next)));
    }
    Ok(CurveCellCount {
        cells: codes.len(),
        degenerate_rows,
    })
}

/// Regions cut from `S^{n-1}` by `m` generic hyperplanes through the origin:
/// `2 Σ_{i<n} C(m−1, i)`.
pub fn exact_region_count(m: usize, n: usize) -> Result<u128> {
    if m == 0 || n == 0 {
        return Err(Error::dim(format!("exact_region_count({m}, {n})")));
    }
    let overflow = || Error::Range(format!("region count for m = {m}, n = {n} overflows u128"));
    let top = (m - 1) as u128;
    let mut binom: u128 = 1;
    let mut sum: u128 = 1;
    for i in 1..n as u128 {
        if i > top {
            break;
        }
        binom = binom.checked_mul(top - i + 1).ok_or_else(overflow)? / i;
        sum = sum.checked_add(binom).ok_or_else(overflow)?;
    }
    sum.checked_mul(2).ok_or_else(overflow)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TessellationReport {
    pub distinct_cells: usize,
    pub max_diameter_estimate: f64,
    pub probes_used: usize,
    pub seed: u64,
}

/// Accumulates points bucketed by cell and tracks the largest distance
/// between two points known to share a cell.
pub struct CellDiameterEstimator<'a> {
    a: &'a Matrix,
    points: Vec<f64>,
    buckets: HashMap<PackedCode, Vec<u32>>,
    best: f64,
    witness: Option<(Vec<f64>, Vec<f64>)>,
    added: usize,
}

impl<'a> CellDiameterEstimator<'a> {
    pub fn new(a: &'a Matrix) -> Self {
        Self {
            a,
            points: Vec::new(),
            buckets: HashMap::new(),
            best: 0.0,
            witness: None,
            added: 0,
        }
    }

    /// Adds every row of `points` to its cell bucket.
    pub fn add_points(&mut self, points: &Matrix) -> Result<()> {
        check_dims(self.a, points)?;
        let n = self.a.cols();
        for_each_code(self.a, points, |i, code| {
            self.added += 1;
            let x = points.row(i);
            let bucket = self.buckets.entry(code).or_default();
            if bucket.len() >= MAX_BUCKET_EXACT {
                return;
            }
            for &j in bucket.iter() {
                let other = &self.points[j as usize * n..(j as usize + 1) * n];
                let d = linalg::distance(x, other);
                if d > self.best {
                    self.best = d;
                    self.witness = Some((x.to_vec(), other.to_vec()));
                }
            }
            bucket.push((self.points.len() / n) as u32);
            self.points.extend_from_slice(x);
        })
    }

    /// For each probe `p` (row of `probes`) and direction `d`, walks the great
    /// circle through `p` towards `d` in both senses up to the first
    /// hyperplane crossing. The arc endpoints share `p`'s cell, so the chord
    /// between them is a certified lower bound on that cell's diameter.
    pub fn add_chords(&mut self, probes: &Matrix, directions: &Matrix) -> Result<()> {
        check_dims(self.a, probes)?;
        if probes.shape() != directions.shape() {
            return Err(Error::dim("probes and directions differ in shape"));
        }
        let pi = std::f64::consts::PI;
        for start in (0..probes.rows()).step_by(BLOCK) {
            let end = (start + BLOCK).min(probes.rows());
            let p = probes.row_block(start, end);
            let mut w = directions.row_block(start, end);
            for i in 0..p.rows() {
                let pr = p.row(i);
                let wr = w.row_mut(i);
                let c = linalg::dot(pr, wr);
                linalg::axpy(-c, pr, wr);
                let nr = linalg::norm(wr);
                if nr > 0.0 {
                    wr.iter_mut().for_each(|x| *x /= nr);
                }
            }
            let ap = p.matmul_t(self.a)?;
            let aw = w.matmul_t(self.a)?;
            for i in 0..p.rows() {
                let (mut forward, mut backward) = (pi, pi);
                for (alpha, beta) in ap.row(i).iter().zip(aw.row(i)) {
                    if *alpha == 0.0 && *beta == 0.0 {
                        continue;
                    }
                    // alpha cos t + beta sin t = r cos(t − φ) vanishes at φ ± π/2;
                    // t1 is the first root ahead of p, t1 − π the first behind
                    let t1 = (beta.atan2(*alpha) + 0.5 * pi).rem_euclid(pi);
                    forward = forward.min(t1);
                    backward = backward.min(pi - t1);
                }
                // stay strictly inside the open arc
                let arc = (forward + backward) * (1.0 - 1e-9);
                let chord = 2.0 * (0.5 * arc.min(pi)).sin();
                self.added += 1;
                if chord > self.best {
                    self.best = chord;
                    let pr = p.row(i);
                    let wr = w.row(i);
                    let at = |t: f64| -> Vec<f64> {
                        let (s, c) = t.sin_cos();
                        pr.iter().zip(wr).map(|(a, b)| c * a + s * b).collect()
                    };
                    let scale = 1.0 - 1e-9;
                    self.witness = Some((at(forward * scale), at(-backward * scale)));
                }
            }
        }
        Ok(())
    }

    pub fn best(&self) -> f64 {
        self.best.min(2.0)
    }

    pub fn witness(&self) -> Option<&(Vec<f64>, Vec<f64>)> {
        self.witness.as_ref()
    }

    pub fn distinct_cells(&self) -> usize {
        self.buckets.len()
    }

    pub fn points_added(&self) -> usize {
        self.added
    }
}

/// Lower estimate of the largest cell diameter of `sign(A ·)`.
///
/// Draws `probes` uniform points from the seeded stream; each probe lands in
/// a code bucket and also contributes the chord of its own cell along a
/// random great circle through it. For a fixed seed the estimate is
/// nondecreasing in `probes`.
pub fn max_cell_diameter(a: &Matrix, probes: usize, seed: u64) -> Result<TessellationReport> {
    if probes < 2 {
        return Err(Error::InvalidInput("max_cell_diameter needs >= 2 probes".into()));
    }
    let n = a.cols();
    let mut est = CellDiameterEstimator::new(a);
    let mut r = rng::rng(seed);
    let mut done = 0;
    while done < probes {
        let count = BLOCK.min(probes - done);
        let mut p = Matrix::zeros(count, n);
        let mut d = Matrix::zeros(count, n);
        for i in 0..count {
            p.row_mut(i).copy_from_slice(&rng::unit_vector(&mut r, n));
            d.row_mut(i).copy_from_slice(&rng::normal_vec(&mut r, n));
        }
        est.add_points(&p)?;
        est.add_chords(&p, &d)?;
        done += count;
    }
    Ok(TessellationReport {
        distinct_cells: est.distinct_cells(),
        max_diameter_estimate: est.best(),
        probes_used: probes,
        seed,
    })
}

/// The consistent pair behind rank deficiency: for a unit `v` in the
/// nullspace of `a` and any `x`, the points `normalize(εx ± v)` share the
/// code of `x`, and their distance `2/√(1+ε²)` tends to 2.
/// Returns `None` when `a` has full column rank.
pub fn nullspace_consistent_pair(
    a: &Matrix,
    eps: f64,
    seed: u64,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let svd = linalg::svd(a)?;
    let null = svd.nullspace(sensing::DEFAULT_RANK_TOL);
    if null.is_empty() {
        return Ok(None);
    }
    let n = a.cols();
    let mut r = rng::rng(seed);
    let coeffs = rng::unit_vector(&mut r, null.len());
    let mut v = vec![0.0; n];
    for (c, b) in coeffs.iter().zip(&null) {
        linalg::axpy(*c, b, &mut v);
    }
    // x in the row space: project a random vector off the nullspace
    let mut x = rng::unit_vector(&mut r, n);
    for b in &null {
        let c = linalg::dot(&x, b);
        linalg::axpy(-c, b, &mut x);
    }
    let x = linalg::normalized(&x).ok_or_else(|| Error::Numerical("zero row space".into()))?;
    let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| eps * a + b).collect();
    let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| eps * a - b).collect();
    Ok(Some((
        linalg::normalized(&plus).expect("nonzero"),
        linalg::normalized(&minus).expect("nonzero"),
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryEntryDemo {
    /// Distance between the normalized endpoints `x_{±0.999}`.
    pub diameter: f64,
    /// Whether `sign(Ā x_λ)` was constant over the whole λ grid.
    pub code_invariant: bool,
}

/// Operators with iid ±1 entries cannot separate `x_λ = e_1 + λ e_2` for
/// `λ ∈ (−1, 1)`: every row gives `a_1 + λ a_2`, whose sign is that of
/// whichever of `a_1`, `a_2` survives. The cell therefore has diameter
/// approaching `√2` regardless of `m` and `G`.
pub fn binary_entry_cell_demo(m: usize, n: usize, g: usize, seed: u64) -> Result<BinaryEntryDemo> {
    if n < 2 {
        return Err(Error::dim("binary_entry_cell_demo needs n >= 2"));
    }
    if m == 0 || g == 0 {
        return Err(Error::dim("binary_entry_cell_demo needs m, G >= 1"));
    }
    let mut r = rng::rng(seed);
    let ops = (0..g)
        .map(|_| {
            let data = (0..m * n)
                .map(|_| if rng::uniform(&mut r) < 0.5 { -1.0 } else { 1.0 })
                .collect();
            Matrix::from_vec_unchecked(m, n, data)
        })
        .collect();
    let stacked = OperatorBank::new(ops, 0.0, seed)?.stack();
    let point = |lambda: f64| {
        let mut x = vec![0.0; n];
        x[0] = 1.0;
        x[1] = lambda;
        linalg::normalized(&x).expect("nonzero")
    };
    let steps = 1998;
    let reference = cell_code(&stacked, &point(-0.999))?;
    let mut invariant = true;
    for i in 0..=steps {
        let lambda = -0.999 + 1.998 * i as f64 / steps as f64;
        if cell_code(&stacked, &point(lambda))? != reference {
            invariant = false;
            break;
        }
    }
    for lambda in [-0.99, 0.99] {
        invariant &= cell_code(&stacked, &point(lambda))? == reference;
    }
    Ok(BinaryEntryDemo {
        diameter: linalg::distance(&point(-0.999), &point(0.999)),
        code_invariant: invariant,
    })
}

/// Largest distance between two samples sharing a cell (0 if none do).
pub fn consistent_pair_max_distance(a: &Matrix, samples: &Matrix) -> Result<f64> {
    if samples.rows() < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let mut est = CellDiameterEstimator::new(a);
    est.add_points(samples)?;
    Ok(est.best)
}

/// Monte-Carlo inner approximation of the inferred set: `v` belongs when
/// every operator maps it to a code some model sample also produces.
pub struct InferredSet {
    ops: Vec<Matrix>,
    codes: Vec<HashSet<PackedCode>>,
}

impl InferredSet {
    pub fn new(bank: &OperatorBank, model_samples: &Matrix) -> Result<Self> {
        if model_samples.rows() == 0 {
            return Err(Error::InvalidInput("no model samples".into()));
        }
        if bank.noise_sigma() != 0.0 {
            return Err(Error::Config("the inferred set is defined for noiseless banks".into()));
        }
        let codes = bank
            .ops()
            .iter()
            .map(|a| Ok(packed_codes(a, model_samples)?.into_iter().collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ops: bank.ops().to_vec(),
            codes,
        })
    }

    pub fn contains(&self, v: &[f64]) -> Result<bool> {
        let m = Matrix::new(1, v.len(), v.to_vec())?;
        Ok(self.contains_rows(&m)?[0])
    }

    pub fn contains_rows(&self, probes: &Matrix) -> Result<Vec<bool>> {
        let mut keep = vec![true; probes.rows()];
        for (a, set) in self.ops.iter().zip(&self.codes) {
            check_dims(a, probes)?;
            for_each_code(a, probes, |i, code| {
                if keep[i] && !set.contains(&code) {
                    keep[i] = false;
                }
            })?;
        }
        Ok(keep)
    }
}

pub fn inferred_membership(v: &[f64], bank: &OperatorBank, model_samples: &Matrix) -> Result<bool> {
    InferredSet::new(bank, model_samples)?.contains(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationEstimate {
    pub delta_hat: f64,
    pub witness: Vec<f64>,
    pub probes_used: usize,
}

/// Lower estimate of the identification error `δ`: the largest distance to
/// the sampled set over probe points that pass inferred-set membership.
///
/// Half the probes are uniform on the sphere; the other half perturb model
/// samples by tangent Gaussian noise of norm about [`PROBE_SCALES`]. When the
/// stacked operator is rank deficient, `probes / 4` extra probes follow the
/// nullspace construction of [`nullspace_consistent_pair`] around model
/// samples, since uniform probes almost never find those directions.
pub fn identification_error(
    bank: &OperatorBank,
    model: &SignalModel,
    probes: usize,
    model_samples_count: usize,
    seed: u64,
) -> Result<IdentificationEstimate> {
    let samples = model.sample(model_samples_count, rng::split_seed(seed, 0))?;
    identification_error_with_samples(bank, &samples, probes, seed)
}

pub fn identification_error_with_samples(
    bank: &OperatorBank,
    samples: &Matrix,
    probes: usize,
    seed: u64,
) -> Result<IdentificationEstimate> {
    if probes == 0 {
        return Err(Error::InvalidInput("identification_error needs >= 1 probe".into()));
    }
    let n = bank.n();
    if samples.cols() != n {
        return Err(Error::dim("model dimension does not match the bank"));
    }
    let set = InferredSet::new(bank, samples)?;
    let mut r = rng::rng(rng::split_seed(seed, 1));
    let mut rows: Vec<f64> = Vec::with_capacity(probes * n);
    for i in 0..probes {
        if i % 2 == 0 {
            rows.extend(rng::unit_vector(&mut r, n));
        } else {
            let x = samples.row(rng::uniform_index(&mut r, samples.rows()));
            let scale = PROBE_SCALES[(i / 2) % PROBE_SCALES.len()];
            let mut z = rng::normal_vec(&mut r, n);
            let c = linalg::dot(&z, x);
            linalg::axpy(-c, x, &mut z);
            let f = scale / (n as f64).sqrt();
            let v: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + f * b).collect();
            rows.extend(linalg::normalized(&v).expect("perturbation of a unit vector"));
        }
    }
    let stacked = bank.stack();
    let svd = linalg::svd(&stacked)?;
    let null = svd.nullspace(sensing::DEFAULT_RANK_TOL);
    let mut total = probes;
    if !null.is_empty() {
        let extra = (probes / 4).max(8);
        let mut rn = rng::rng(rng::split_seed(seed, 2));
        for j in 0..extra {
            let x = samples.row(rng::uniform_index(&mut rn, samples.rows()));
            let coeffs = rng::unit_vector(&mut rn, null.len());
            let mut u = vec![0.0; n];
            for (c, b) in coeffs.iter().zip(&null) {
                linalg::axpy(*c, b, &mut u);
            }
            // point away from x so the probe leaves the set
            if linalg::dot(&u, x) > 0.0 {
                u.iter_mut().for_each(|v| *v = -*v);
            }
            let eps = [0.01, 0.05, 0.2][j % 3];
            let v: Vec<f64> = x.iter().zip(&u).map(|(a, b)| eps * a + b).collect();
            rows.extend(linalg::normalized(&v).expect("nonzero"));
        }
        total += extra;
    }
    let probe_mat = Matrix::from_vec_unchecked(total, n, rows);
    let keep = set.contains_rows(&probe_mat)?;
    let kept: Vec<usize> = (0..total).filter(|&i| keep[i]).collect();
    if kept.is_empty() {
        return Ok(IdentificationEstimate {
            delta_hat: 0.0,
            witness: samples.row(0).to_vec(),
            probes_used: total,
        });
    }
    let kept_mat = probe_mat.select_rows(&kept);
    let dists = signal::distances_to_set(&kept_mat, samples)?;
    let (best, d) = dists
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
    Ok(IdentificationEstimate {
        delta_hat: d.clamp(0.0, 2.0),
        witness: kept_mat.row(best).to_vec(),
        probes_used: total,
    })
}

/// Centroid reconstruction over a sampled signal set.
pub struct CodeBook {
    a: Matrix,
    samples: Matrix,
    codes: Vec<PackedCode>,
    index: HashMap<PackedCode, Vec<usize>>,
}

impl CodeBook {
    pub fn new(a: &Matrix, samples: &Matrix) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::InvalidInput("no model samples".into()));
        }
        let codes = packed_codes(a, samples)?;
        let mut index: HashMap<PackedCode, Vec<usize>> = HashMap::new();
        for (i, c) in codes.iter().enumerate() {
            index.entry(c.clone()).or_default().push(i);
        }
        Ok(Self {
            a: a.clone(),
            samples: samples.clone(),
            codes,
            index,
        })
    }

    /// Indices of the samples whose code equals `y`.
    pub fn consistent(&self, y: &BinaryVector) -> &[usize] {
        self.index
            .get(&PackedCode::from_bits(y))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Normalized mean of the consistent samples; with none, the sample whose
    /// code is nearest in Hamming distance.
    pub fn reconstruct(&self, y: &BinaryVector) -> Result<Vec<f64>> {
        if y.len() != self.a.rows() {
            return Err(Error::dim(format!(
                "code of length {} for an operator with {} rows",
                y.len(),
                self.a.rows()
            )));
        }
        let matches = self.consistent(y);
        if !matches.is_empty() {
            let mut mean = vec![0.0; self.samples.cols()];
            for &i in matches {
                linalg::axpy(1.0, self.samples.row(i), &mut mean);
            }
            if let Some(v) = linalg::normalized(&mean) {
                return Ok(v);
            }
            return Ok(self.samples.row(matches[0]).to_vec());
        }
        let target = PackedCode::from_bits(y);
        let nearest = (0..self.codes.len())
            .min_by_key(|&i| self.codes[i].hamming(&target))
            .expect("nonempty");
        Ok(self.samples.row(nearest).to_vec())
    }
}

pub fn oracle_reconstruct(y: &BinaryVector, a: &Matrix, model_samples: &Matrix) -> Result<Vec<f64>> {
    CodeBook::new(a, model_samples)?.reconstruct(y)
}

/// Numerical form of the learned-reconstruction lower bound. For the witness
/// `v` of an identification estimate and each operator `g`, a model sample
/// `x_g` shares `v`'s code. Any reconstruction sees the same `y_g` for both,
/// so with `r_g` the centroid of `S_{y_g} ∩ X̂` (sampled consistent points
/// plus `v`), the worst of the two errors `max(‖r_g − x_g‖, ‖r_g − v‖)` is
/// at least `‖x_g − v‖/2 ≥ δ/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityCheck {
    pub worst_case_errors: Vec<f64>,
    pub half_delta: f64,
}

pub fn unsupervised_ambiguity(
    bank: &OperatorBank,
    model_samples: &Matrix,
    estimate: &IdentificationEstimate,
) -> Result<AmbiguityCheck> {
    let v = &estimate.witness;
    let mut errors = Vec::with_capacity(bank.len());
    for a in bank.ops() {
        let book = CodeBook::new(a, model_samples)?;
        let y = sensing::sign_quantize(&a.matvec(v)?)?;
        let matches = book.consistent(&y);
        let Some(&xg) = matches.first() else {
            return Err(Error::InvalidInput("witness is not in the inferred set".into()));
        };
        let mut mean = v.clone();
        for &i in matches {
            linalg::axpy(1.0, model_samples.row(i), &mut mean);
        }
        let r = linalg::normalized(&mean).unwrap_or_else(|| v.clone());
        // the sample in the cell farthest from v is the hardest to confuse with it
        let far = matches
            .iter()
            .copied()
            .max_by(|&i, &j| {
                linalg::distance(model_samples.row(i), v)
                    .total_cmp(&linalg::distance(model_samples.row(j), v))
            })
            .unwrap_or(xg);
        let x = model_samples.row(far);
        errors.push(linalg::distance(&r, x).max(linalg::distance(&r, v)));
    }
    Ok(AmbiguityCheck {
        worst_case_errors: errors,
        half_delta: estimate.delta_hat / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::gaussian_matrix;

    fn circle_grid(points: usize) -> Matrix {
        let data = (0..points)
            .flat_map(|i| {
                let t = std::f64::consts::TAU * (i as f64 + 0.5) / points as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        Matrix::new(points, 2, data).unwrap()
    }

    #[test]
    fn cell_code_examples() {
        let a = gaussian_matrix(7, 4, 3).unwrap();
        let x = linalg::normalized(&[0.2, -0.4, 1.0, 0.3]).unwrap();
        let half = linalg::normalized(&x.iter().map(|v| 0.5 * v).collect::<Vec<_>>()).unwrap();
        assert_eq!(cell_code(&a, &x).unwrap(), cell_code(&a, &half).unwrap());
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(cell_code(&a, &neg).unwrap().bits, cell_code(&a, &x).unwrap().bits.negated());
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = cell_code(&Matrix::identity(2), &[s, -s]).unwrap();
        assert_eq!(c.bits.bits(), &[1, -1]);
        assert!(cell_code(&a, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn stacked_code_is_concatenation() {
        let bank = OperatorBank::gaussian(5, 6, 3, 0.0, 8).unwrap();
        let x = rng::unit_vector(&mut rng::rng(1), 6);
        let parts: Vec<BinaryVector> = bank
            .ops()
            .iter()
            .map(|a| cell_code(a, &x).unwrap().bits)
            .collect();
        assert_eq!(cell_code(&bank.stack(), &x).unwrap().bits, BinaryVector::concat(&parts));
    }

    #[test]
    fn sampled_cell_counts() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let inside = Matrix::from_rows(&[
            linalg::normalized(&[1.0, 1.0, 0.2]).unwrap(),
            linalg::normalized(&[2.0, 0.5, -1.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(count_cells_sampled(&a, &inside).unwrap(), 1);

        let a = gaussian_matrix(6, 2, 5).unwrap();
        let grid = circle_grid(100_000);
        assert_eq!(count_cells_sampled(&a, &grid).unwrap(), 12);
        let sub = grid.row_block(0, 30_000);
        assert!(count_cells_sampled(&a, &sub).unwrap() <= 12);
    }

    #[test]
    fn curve_counts() {
        let circle = SignalModel::great_circle(8, 4).unwrap();
        let one = gaussian_matrix(1, 8, 2).unwrap();
        assert_eq!(count_cells_curve(&one, &circle, 1e-12).unwrap().cells, 2);
        let a = gaussian_matrix(32, 8, 9).unwrap();
        let count = count_cells_curve(&a, &circle, 1e-12).unwrap();
        assert_eq!(count.cells, 64);
        assert!(count.degenerate_rows.is_empty());
        let bound = std::f64::consts::E * 32.0 * 8f64.sqrt();
        assert!((count.cells as f64) <= bound);
        assert!(count_cells_curve(&a, &SignalModel::full_sphere(8).unwrap(), 1e-12).is_err());
    }

    #[test]
    fn degenerate_rows_are_reported() {
        let circle = SignalModel::great_circle(3, 1).unwrap();
        let SignalVariant::GreatCircle { u, w } = &circle.variant else {
            unreachable!()
        };
        // the normal of the circle's plane never crosses it
        let normal = [
            u[1] * w[2] - u[2] * w[1],
            u[2] * w[0] - u[0] * w[2],
            u[0] * w[1] - u[1] * w[0],
        ];
        let a = Matrix::from_rows(&[normal.to_vec(), vec![1.0, 0.3, -0.2]]).unwrap();
        let count = count_cells_curve(&a, &circle, 1e-9).unwrap();
        assert_eq!(count.degenerate_rows, vec![0]);
        assert_eq!(count.cells, 2);
    }

    #[test]
    fn region_count_formula() {
        for n in 1..6 {
            assert_eq!(exact_region_count(1, n).unwrap(), 2);
        }
        assert_eq!(exact_region_count(5, 3).unwrap(), 22);
        // Cover's bound C(5,3)·2³ = 80 from the arrangement literature
        assert!(exact_region_count(5, 3).unwrap() <= 80);
        assert_eq!(exact_region_count(6, 2).unwrap(), 12);
        // m <= n: every sign pattern is a region
        assert_eq!(exact_region_count(4, 9).unwrap(), 16);
        assert!(matches!(exact_region_count(100_000, 50_000), Err(Error::Range(_))));
        assert!(exact_region_count(0, 3).is_err());
    }

    #[test]
    fn single_row_hemisphere_diameter() {
        let a = Matrix::from_rows(&[vec![0.3, 1.0]]).unwrap();
        let report = max_cell_diameter(&a, 10_000, 2).unwrap();
        assert!(report.max_diameter_estimate >= 1.99, "{report:?}");
        assert!(report.max_diameter_estimate <= 2.0);
        assert_eq!(report.distinct_cells, 2);
        assert_eq!(report.probes_used, 10_000);
    }

    #[test]
    fn diameter_estimate_is_monotone_in_probes() {
        let a = gaussian_matrix(24, 6, 1).unwrap();
        let mut last = 0.0;
        for probes in [10, 100, 1000, 5000, 20_000] {
            let d = max_cell_diameter(&a, probes, 77).unwrap().max_diameter_estimate;
            assert!(d >= last, "{d} < {last} at {probes} probes");
            last = d;
        }
        assert!(max_cell_diameter(&a, 1, 0).is_err());
    }

    #[test]
    fn chord_witness_shares_the_cell() {
        let a = gaussian_matrix(20, 5, 4).unwrap();
        let mut est = CellDiameterEstimator::new(&a);
        let mut r = rng::rng(3);
        let p = Matrix::new(50, 5, (0..50).flat_map(|_| rng::unit_vector(&mut r, 5)).collect()).unwrap();
        let d = Matrix::new(50, 5, rng::normal_vec(&mut r, 250)).unwrap();
        est.add_chords(&p, &d).unwrap();
        let (x, y) = est.witness().unwrap();
        assert_eq!(cell_code(&a, x).unwrap(), cell_code(&a, y).unwrap());
        assert!((linalg::distance(x, y) - est.best()).abs() < 1e-6);
    }

    #[test]
    fn rank_deficient_pair_is_consistent_and_far() {
        let bank = OperatorBank::gaussian(3, 10, 2, 0.0, 6).unwrap();
        let stacked = bank.stack();
        let mut prev = 0.0;
        for eps in [0.5, 0.1, 0.01] {
            let (x, y) = nullspace_consistent_pair(&stacked, eps, 1).unwrap().unwrap();
            assert_eq!(cell_code(&stacked, &x).unwrap(), cell_code(&stacked, &y).unwrap());
            let d = linalg::distance(&x, &y);
            assert!((d - 2.0 / (1.0 + eps * eps).sqrt()).abs() < 1e-9);
            assert!(d > prev);
            prev = d;
        }
        assert!(prev > 1.99);
        let full = gaussian_matrix(12, 10, 1).unwrap();
        assert!(nullspace_consistent_pair(&full, 0.1, 1).unwrap().is_none());
    }

    #[test]
    fn binary_entries_cannot_split_the_family() {
        for (m, g) in [(8, 1), (8, 8), (64, 1), (64, 8)] {
            let demo = binary_entry_cell_demo(m, 6, g, 3).unwrap();
            assert!(demo.code_invariant);
            let sqrt2 = std::f64::consts::SQRT_2;
            assert!(demo.diameter <= sqrt2 && demo.diameter >= sqrt2 - 0.02);
        }
        let small = binary_entry_cell_demo(8, 4, 2, 1).unwrap().diameter;
        let large = binary_entry_cell_demo(80, 4, 2, 1).unwrap().diameter;
        assert!((small - large).abs() < 0.01);
    }

    #[test]
    fn consistent_pairs() {
        let a = Matrix::identity(2);
        let s = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        // (1,0) → (+,+), (−1,0) → (−,+): distinct cells
        assert_eq!(consistent_pair_max_distance(&a, &s).unwrap(), 0.0);
        let dup = Matrix::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        assert_eq!(consistent_pair_max_distance(&a, &dup).unwrap(), 0.0);
        let pair = Matrix::from_rows(&[vec![0.6, 0.8], vec![0.8, 0.6]]).unwrap();
        let d = consistent_pair_max_distance(&a, &pair).unwrap();
        assert!((d - linalg::distance(&[0.6, 0.8], &[0.8, 0.6])).abs() < 1e-15);
    }

    #[test]
    fn membership_examples() {
        let model = SignalModel::great_circle(6, 2).unwrap();
        let samples = model.sample(500, 1).unwrap();
        let bank = OperatorBank::gaussian(4, 6, 3, 0.0, 9).unwrap();
        let set = InferredSet::new(&bank, &samples).unwrap();
        assert!(set.contains_rows(&samples).unwrap().iter().all(|b| *b));

        let single = OperatorBank::gaussian(4, 6, 1, 0.0, 9).unwrap();
        let x = samples.row(3);
        let mut v: Vec<f64> = x.iter().map(|t| t * 1.0001).collect();
        v[0] += 1e-6;
        let v = linalg::normalized(&v).unwrap();
        assert_eq!(cell_code(single.op(0).unwrap(), &v).unwrap(), cell_code(single.op(0).unwrap(), x).unwrap());
        assert!(inferred_membership(&v, &single, &samples).unwrap());

        let noisy = bank.with_noise(0.1).unwrap();
        assert!(matches!(InferredSet::new(&noisy, &samples), Err(Error::Config(_))));
    }

    #[test]
    fn antipode_of_a_point_model_is_rejected() {
        let mut rejected = 0;
        for s in 0..100 {
            let x = rng::unit_vector(&mut rng::rng(s), 4);
            let model = Matrix::new(1, 4, x.clone()).unwrap();
            let bank = OperatorBank::gaussian(8, 4, 4, 0.0, s + 1000).unwrap();
            let anti: Vec<f64> = x.iter().map(|v| -v).collect();
            if !inferred_membership(&anti, &bank, &model).unwrap() {
                rejected += 1;
            }
        }
        assert_eq!(rejected, 100);
    }

    #[test]
    fn identification_error_is_bounded() {
        let model = SignalModel::great_circle(8, 1).unwrap();
        let bank = OperatorBank::gaussian(16, 8, 2, 0.0, 3).unwrap();
        let est = identification_error(&bank, &model, 2000, 2000, 4).unwrap();
        assert!((0.0..=2.0).contains(&est.delta_hat));
        assert_eq!(est.probes_used, 2000);
        assert!((linalg::norm(&est.witness) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_gives_large_identification_error() {
        let model = SignalModel::great_circle(16, 2).unwrap();
        let bank = OperatorBank::gaussian(3, 16, 2, 0.0, 5).unwrap();
        let est = identification_error(&bank, &model, 4000, 2000, 1).unwrap();
        assert!(est.delta_hat > 1.0, "{est:?}");
        assert!(est.probes_used > 4000);
    }

    #[test]
    fn oracle_examples() {
        let a = Matrix::identity(2);
        let one = Matrix::from_rows(&[vec![0.6, 0.8], vec![-0.6, -0.8]]).unwrap();
        let y = BinaryVector::new(vec![1, 1]).unwrap();
        assert_eq!(oracle_reconstruct(&y, &a, &one).unwrap(), vec![0.6, 0.8]);

        let two = Matrix::from_rows(&[vec![0.6, 0.8], vec![0.8, 0.6]]).unwrap();
        let mid = oracle_reconstruct(&y, &a, &two).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((mid[0] - s).abs() < 1e-15 && (mid[1] - s).abs() < 1e-15);

        // nothing in (−,+): nearest code wins
        let y = BinaryVector::new(vec![-1, 1]).unwrap();
        let r = oracle_reconstruct(&y, &a, &one).unwrap();
        assert!(r == vec![0.6, 0.8] || r == vec![-0.6, -0.8]);
    }
}
