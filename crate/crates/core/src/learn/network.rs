//! The reconstruction network `f(y, A) = MLP(Aᵀy / m)`.
//!
//! The `1/m` input scaling is fixed and part of the map; it keeps the first
//! layer's input at unit scale whatever the number of measurements.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};
use crate::rng;
use crate::sensing::BinaryVector;

use super::tape::{Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

const MAGIC: &[u8; 4] = b"SSBM";
const FORMAT_VERSION: u32 = 1;

/// Fully connected layers with leaky-rectifier hidden activations and a
/// linear output. All weights and biases live in one flat vector, layer by
/// layer, each layer's `out × in` weights (row-major) followed by its biases.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    widths: Vec<usize>,
    data: Vec<f64>,
}

impl NetworkParams {
    /// He-initialized weights (variance `2 / ((1 + slope²) fan_in)`), zero biases.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let mut r = rng::rng(seed);
        let mut data = Vec::new();
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f64)).sqrt();
            data.extend((0..fan_in * fan_out).map(|_| std * rng::normal(&mut r)));
            data.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            widths: widths.to_vec(),
            data,
        })
    }

    /// `n → hidden → … → n`; `hidden` defaults to `[4n, 4n]`.
    pub fn mlp(n: usize, hidden: Option<&[usize]>, seed: u64) -> Result<Self> {
        let hidden = hidden.map(<[usize]>::to_vec).unwrap_or_else(|| vec![4 * n, 4 * n]);
        let mut widths = vec![n];
        widths.extend(hidden);
        widths.push(n);
        Self::new(&widths, seed)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n(&self) -> usize {
        self.widths[0]
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(out, in)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.widths[l + 1], self.widths[l])
    }

    fn offset(&self, l: usize) -> usize {
        (0..l)
            .map(|i| {
                let (o, n) = self.layer_shape(i);
                o * n + o
            })
            .sum()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let (o, n) = self.layer_shape(l);
        let start = self.offset(l);
        &self.data[start..start + o * n]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (o, n) = self.layer_shape(l);
        let start = self.offset(l) + o * n;
        &self.data[start..start + o]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (o, n) = self.layer_shape(l);
        let start = self.offset(l);
        &mut self.data[start..start + o * n]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (o, n) = self.layer_shape(l);
        let start = self.offset(l) + o * n;
        &mut self.data[start..start + o]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Network input `Aᵀy / m` for every row of `ys` (`B × m`, entries ±1).
    pub fn input_batch(ys: &Matrix, a: &Matrix) -> Result<Matrix> {
        if ys.cols() != a.rows() {
            return Err(Error::dim(format!(
                "{} measurements per row for an operator with {} rows",
                ys.cols(),
                a.rows()
            )));
        }
        let mut x = Matrix::zeros(ys.rows(), a.cols());
        gemm(1.0 / a.rows() as f64, ys, false, a, false, 0.0, &mut x);
        Ok(x)
    }

    /// `MLP(x)` for every row of `x`.
    pub fn apply_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n() {
            return Err(Error::dim(format!("network input {} vs {}", x.cols(), self.n())));
        }
        let mut h = x.clone();
        for l in 0..self.layer_count() {
            let (o, i) = self.layer_shape(l);
            let w = Matrix::from_vec_unchecked(o, i, self.weights(l).to_vec());
            let mut z = Matrix::zeros(h.rows(), o);
            for row in z.as_mut_slice().chunks_mut(o) {
                row.copy_from_slice(self.bias(l));
            }
            gemm(1.0, &h, false, &w, true, 1.0, &mut z);
            if l + 1 < self.layer_count() {
                z.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = if *v > 0.0 { *v } else { LEAKY_SLOPE * *v });
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_batch(&self, ys: &Matrix, a: &Matrix) -> Result<Matrix> {
        if a.cols() != self.n() {
            return Err(Error::dim(format!("operator has {} columns, network expects {}", a.cols(), self.n())));
        }
        self.apply_batch(&Self::input_batch(ys, a)?)
    }

    /// `f(y, A)`; the output is not normalized.
    pub fn forward(&self, y: &BinaryVector, a: &Matrix) -> Result<Vec<f64>> {
        let ys = Matrix::new(1, y.len(), y.to_f64())?;
        Ok(self.forward_batch(&ys, a)?.into_vec())
    }

    /// Registers every weight and bias as a parameter leaf on `tape`.
    pub(crate) fn register(&self, tape: &mut Tape) -> Vec<(Var, Var)> {
        (0..self.layer_count())
            .map(|l| {
                let (o, i) = self.layer_shape(l);
                let off = self.offset(l);
                let w = tape.param(Matrix::from_vec_unchecked(o, i, self.weights(l).to_vec()), off);
                let b = tape.param(Matrix::from_vec_unchecked(1, o, self.bias(l).to_vec()), off + o * i);
                (w, b)
            })
            .collect()
    }

    /// Records the MLP applied to the rows of `x` on `tape`.
    pub(crate) fn record(&self, tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Var {
        let mut h = x;
        for (l, &(w, b)) in layers.iter().enumerate() {
            let z = tape.matmul_t(h, w);
            h = tape.add_bias(z, b);
            if l + 1 < layers.len() {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.len() + 8 * self.layer_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layer_count() as u32).to_le_bytes());
        for l in 0..self.layer_count() {
            let (o, i) = self.layer_shape(l);
            out.extend_from_slice(&(o as u32).to_le_bytes());
            out.extend_from_slice(&(i as u32).to_le_bytes());
            for v in self.weights(l).iter().chain(self.bias(l)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let word = |r: &mut &[u8]| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| Error::Data("truncated model file".into()))?;
            Ok(u32::from_le_bytes(b))
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Data("truncated model file".into()))?;
        if &magic != MAGIC {
            return Err(Error::Data("not a model file (bad magic)".into()));
        }
        let version = word(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported model format version {version}")));
        }
        let layers = word(&mut r)? as usize;
        if layers == 0 {
            return Err(Error::Data("model has no layers".into()));
        }
        let mut widths = Vec::with_capacity(layers + 1);
        let mut data = Vec::new();
        for l in 0..layers {
            let rows = word(&mut r)? as usize;
            let cols = word(&mut r)? as usize;
            if l == 0 {
                widths.push(cols);
            } else if widths[l] != cols {
                return Err(Error::Data(format!("layer {l} input {cols} does not match previous output {}", widths[l])));
            }
            widths.push(rows);
            let count = rows
                .checked_mul(cols)
                .and_then(|c| c.checked_add(rows))
                .ok_or_else(|| Error::Data("layer size overflows".into()))?;
            if r.len() < 8 * count {
                return Err(Error::Data("truncated model file".into()));
            }
            let (chunk, rest) = r.split_at(8 * count);
            data.extend(chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))));
            r = rest;
        }
        if !r.is_empty() {
            return Err(Error::Data(format!("{} trailing bytes in model file", r.len())));
        }
        let params = Self { widths, data };
        if !params.is_finite() {
            return Err(Error::Data("model file contains non-finite parameters".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::gaussian_matrix;

    #[test]
    fn zero_last_layer_outputs_bias() {
        let mut p = NetworkParams::mlp(6, Some(&[10]), 1).unwrap();
        p.weights_mut(1).iter_mut().for_each(|w| *w = 0.0);
        p.bias_mut(1).copy_from_slice(&[1.0, -2.0, 3.0, 0.5, 0.0, 4.0]);
        let a = gaussian_matrix(5, 6, 2).unwrap();
        for bits in [vec![1, 1, -1, 1, -1], vec![-1, -1, -1, 1, 1]] {
            let out = p.forward(&BinaryVector::new(bits).unwrap(), &a).unwrap();
            assert_eq!(out, vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]);
        }
    }

    #[test]
    fn forward_is_deterministic_and_sign_sensitive() {
        let p = NetworkParams::mlp(8, None, 3).unwrap();
        assert_eq!(p.widths(), &[8, 32, 32, 8]);
        let a = gaussian_matrix(12, 8, 4).unwrap();
        let y = BinaryVector::new(vec![1, -1, 1, 1, -1, 1, 1, -1, -1, 1, 1, 1]).unwrap();
        let first = p.forward(&y, &a).unwrap();
        assert_eq!(first, p.forward(&y, &a).unwrap());
        // the input map is linear in y: negating y negates Aᵀy
        let xin = NetworkParams::input_batch(&Matrix::new(1, 12, y.to_f64()).unwrap(), &a).unwrap();
        let xneg = NetworkParams::input_batch(&Matrix::new(1, 12, y.negated().to_f64()).unwrap(), &a).unwrap();
        for (u, v) in xin.as_slice().iter().zip(xneg.as_slice()) {
            assert_eq!(*u, -*v);
        }
        assert_ne!(first, p.forward(&y.negated(), &a).unwrap());
        assert!(p.forward(&y, &gaussian_matrix(12, 7, 1).unwrap()).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let p = NetworkParams::mlp(5, Some(&[7, 9]), 8).unwrap();
        let a = gaussian_matrix(4, 5, 1).unwrap();
        let ys = Matrix::new(2, 4, vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0]).unwrap();
        let batch = p.forward_batch(&ys, &a).unwrap();
        for r in 0..2 {
            let y = BinaryVector::new(ys.row(r).iter().map(|v| *v as i8).collect()).unwrap();
            let single = p.forward(&y, &a).unwrap();
            for (u, v) in single.iter().zip(batch.row(r)) {
                assert!((u - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn serialization_round_trip() {
        let p = NetworkParams::mlp(4, Some(&[6]), 2).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"SSBM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 12 + 2 * 8 + 8 * p.len());
        assert_eq!(NetworkParams::from_bytes(&bytes).unwrap(), p);
        assert!(NetworkParams::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(NetworkParams::from_bytes(&bad), Err(Error::Data(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        p.save(&path).unwrap();
        assert_eq!(NetworkParams::load(&path).unwrap(), p);
    }
}
