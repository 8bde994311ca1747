//! Reconstruction methods, PSNR reports and the binary dataset file.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::biht::{Biht, BihtConfig};
use crate::error::{Error, Result};
use crate::learn::{self, Dataset, Entry, NetworkParams};
use crate::metrics;
use crate::sensing::{BinaryVector, OperatorBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `Aᵀy`
    LinearInverse,
    /// `Aᵀ(AAᵀ)⁻¹y`
    PseudoInverse,
    Biht,
    TrainedNet,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::LinearInverse => "linear_inverse",
            Method::PseudoInverse => "pseudo_inverse",
            Method::Biht => "biht",
            Method::TrainedNet => "trained_net",
        }
    }
}

/// Whatever a method needs beyond the measurements.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub net: Option<NetworkParams>,
    pub biht: Option<BihtConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Mean of the capped per-item PSNR.
    pub mean_psnr_db: f64,
    /// Population standard deviation of the capped per-item PSNR.
    pub std_psnr_db: f64,
    pub per_item: Vec<f64>,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_values(method: impl Into<String>, per_item: Vec<f64>, config: serde_json::Value, seed: u64) -> Self {
        let (mean_psnr_db, std_psnr_db) = metrics::mean_std(&per_item);
        Self {
            method: method.into(),
            mean_psnr_db,
            std_psnr_db,
            per_item,
            config,
            seed,
        }
    }
}

/// A method ready to reconstruct.
enum Reconstructor<'a> {
    Linear,
    Pseudo,
    Biht(Biht),
    Net(&'a NetworkParams),
}

impl Reconstructor<'_> {
    fn run(&self, y: &BinaryVector, a: &crate::Matrix) -> Result<Vec<f64>> {
        match self {
            Reconstructor::Linear => learn::linear_inverse(y, a),
            Reconstructor::Pseudo => learn::pseudo_inverse_reconstruct(y, a),
            Reconstructor::Biht(b) => b.reconstruct(y, a),
            Reconstructor::Net(p) => p.forward(y, a),
        }
    }
}

/// Reconstructs every test item from its stored measurements through its
/// assigned operator and reports PSNR against the stored truth.
pub fn evaluate_method(method: Method, test: &Dataset, artifacts: &Artifacts, seed: u64) -> Result<EvalReport> {
    if !test.has_truth() {
        return Err(Error::Data("evaluation needs ground-truth signals".into()));
    }
    let n = test.bank.n();
    let (rec, config) = match method {
        Method::LinearInverse => (Reconstructor::Linear, serde_json::Value::Null),
        Method::PseudoInverse => (Reconstructor::Pseudo, serde_json::Value::Null),
        Method::Biht => {
            let cfg = artifacts
                .biht
                .clone()
                .ok_or_else(|| Error::Config("BIHT evaluation needs a BIHT configuration".into()))?;
            let config = serde_json::to_value(&cfg)?;
            (Reconstructor::Biht(Biht::new(cfg, n)?), config)
        }
        Method::TrainedNet => {
            let net = artifacts
                .net
                .as_ref()
                .ok_or_else(|| Error::Config("trained_net evaluation needs a trained model".into()))?;
            if net.n() != n {
                return Err(Error::Config(format!("model width {} does not match n = {n}", net.n())));
            }
            let config = serde_json::json!({ "widths": net.widths() });
            (Reconstructor::Net(net), config)
        }
    };
    let per_item = test
        .entries
        .iter()
        .map(|e| {
            let xhat = rec.run(&e.y, test.bank.op(e.g)?)?;
            metrics::psnr_capped(e.x_true.as_ref().expect("checked above"), &xhat)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_values(method.name(), per_item, config, seed))
}

pub const DATASET_MAGIC: &str = "OBSB1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub magic: String,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub sigma: f64,
    /// Seed of the Gaussian operator bank; the operators are regenerated from it.
    pub seed: u64,
    pub with_truth: bool,
}

/// Writes `dataset` as one JSON header line followed by little-endian
/// records: `u16` operator index, `m` bytes (1 for +1, 0 for −1), then `n`
/// `f64` truth values when present. The bank must be the Gaussian bank
/// `OperatorBank::gaussian(m, n, G, sigma, seed)`.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let bank = &dataset.bank;
    if bank.len() > u16::MAX as usize + 1 {
        return Err(Error::Config(format!("{} operators do not fit the file format", bank.len())));
    }
    let regenerated = OperatorBank::gaussian(bank.m(), bank.n(), bank.len(), bank.noise_sigma(), bank.seed())?;
    if &regenerated != bank {
        return Err(Error::Config("only seeded Gaussian banks can be stored in dataset files".into()));
    }
    let with_truth = dataset.has_truth();
    let header = DatasetHeader {
        magic: DATASET_MAGIC.into(),
        n: bank.n(),
        m: bank.m(),
        g: bank.len(),
        count: dataset.len(),
        sigma: bank.noise_sigma(),
        seed: bank.seed(),
        with_truth,
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for e in &dataset.entries {
        w.write_all(&(e.g as u16).to_le_bytes()).map_err(io)?;
        let bytes: Vec<u8> = e.y.bits().iter().map(|&b| u8::from(b > 0)).collect();
        w.write_all(&bytes).map_err(io)?;
        if with_truth {
            for v in e.x_true.as_ref().expect("has_truth") {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Dataset)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?;
    if header.magic != DATASET_MAGIC {
        return Err(Error::Data(format!("{}: not a dataset file", path.display())));
    }
    let bank = OperatorBank::gaussian(header.m, header.n, header.g, header.sigma, header.seed)?;
    let mut entries = Vec::with_capacity(header.count);
    let truncated = || Error::Data(format!("{}: truncated record", path.display()));
    for _ in 0..header.count {
        let mut gb = [0u8; 2];
        r.read_exact(&mut gb).map_err(|_| truncated())?;
        let mut bits = vec![0u8; header.m];
        r.read_exact(&mut bits).map_err(|_| truncated())?;
        let y = bits
            .iter()
            .map(|&b| match b {
                0 => Ok(-1),
                1 => Ok(1),
                other => Err(Error::Data(format!("{}: sign byte {other}", path.display()))),
            })
            .collect::<Result<Vec<i8>>>()?;
        let x_true = if header.with_truth {
            let mut buf = vec![0u8; 8 * header.n];
            r.read_exact(&mut buf).map_err(|_| truncated())?;
            Some(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        } else {
            None
        };
        entries.push(Entry {
            y: BinaryVector::new(y)?,
            g: u16::from_le_bytes(gb) as usize,
            x_true,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::Data(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    Ok((header, Dataset::new(bank, entries)?))
}
