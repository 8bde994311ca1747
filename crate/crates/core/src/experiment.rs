//! Seeded experiment grids: sweeps of learned and classical reconstruction,
//! geometry measurements and bound tables, written as a CSV plus a JSON
//! manifest that re-runs the grid exactly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biht::{grid_search_biht, BihtConfig, Observation};
use crate::bounds::{self, BoundSpec, LogBase};
use crate::error::{Error, Result};
use crate::eval::{evaluate_method, Artifacts, EvalReport, Method};
use crate::learn::{self, Dataset, LossKind, Mode, TrainConfig};
use crate::linalg::{self, Matrix};
use crate::metrics;
use crate::rng::split_seed;
use crate::sensing::{flip_fraction, sign_quantize, OperatorBank};
use crate::signal::{SignalModel, SignalVariant};
use crate::tessellation;
use crate::transform::Basis;

pub const MANIFEST_FORMAT: &str = "onebit-experiment/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LossCompare,
    MSweep,
    GSweep,
    NoiseSweep,
    AlphaSweep,
    BoundsCheck,
    GeometryCheck,
    CellCount,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LossCompare => "loss_compare",
            ExperimentKind::MSweep => "m_sweep",
            ExperimentKind::GSweep => "g_sweep",
            ExperimentKind::NoiseSweep => "noise_sweep",
            ExperimentKind::AlphaSweep => "alpha_sweep",
            ExperimentKind::BoundsCheck => "bounds_check",
            ExperimentKind::GeometryCheck => "geometry_check",
            ExperimentKind::CellCount => "cell_count",
        }
    }

    /// Header of the swept column.
    pub fn swept(self) -> &'static str {
        match self {
            ExperimentKind::LossCompare => "loss",
            ExperimentKind::GSweep => "G",
            ExperimentKind::NoiseSweep => "sigma",
            ExperimentKind::AlphaSweep => "alpha",
            _ => "m",
        }
    }

    pub fn is_learning(self) -> bool {
        matches!(
            self,
            ExperimentKind::LossCompare
                | ExperimentKind::MSweep
                | ExperimentKind::GSweep
                | ExperimentKind::NoiseSweep
                | ExperimentKind::AlphaSweep
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    FullSphere {
        n: usize,
    },
    Sparse {
        n: usize,
        s: usize,
    },
    SubspaceUnion {
        n: usize,
        k: usize,
        l: usize,
        /// Fixed seed for the subspaces; otherwise drawn per repeat.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    GreatCircle {
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// JSON array of points, one array of reals per point.
    FinitePoints {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intrinsic_dim: Option<usize>,
    },
}

impl ModelSpec {
    pub fn build(&self, seed: u64) -> Result<SignalModel> {
        match self {
            ModelSpec::FullSphere { n } => SignalModel::full_sphere(*n),
            ModelSpec::Sparse { n, s } => SignalModel::sparse_set(*n, *s),
            ModelSpec::SubspaceUnion { n, k, l, seed: fixed } => {
                SignalModel::subspace_union(*n, *k, *l, fixed.unwrap_or(seed))
            }
            ModelSpec::GreatCircle { n, seed: fixed } => SignalModel::great_circle(*n, fixed.unwrap_or(seed)),
            ModelSpec::FinitePoints { path, intrinsic_dim } => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let rows: Vec<Vec<f64>> = serde_json::from_str(&text)?;
                let model = SignalModel::finite_points(Matrix::from_rows(&rows)?)?;
                Ok(match intrinsic_dim {
                    Some(k) => model.with_intrinsic_dim(*k),
                    None => model,
                })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSpec {
    pub m: usize,
    #[serde(rename = "G", alias = "g")]
    pub g: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Training measurements per operator.
    #[serde(default = "default_train_per_op")]
    pub train_per_op: usize,
    #[serde(default = "default_test")]
    pub test: usize,
    /// Held-out items with truth used to pick the BIHT parameters.
    #[serde(default = "default_val")]
    pub val: usize,
}

fn default_train_per_op() -> usize {
    2000
}
fn default_test() -> usize {
    500
}
fn default_val() -> usize {
    100
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            train_per_op: default_train_per_op(),
            test: default_test(),
            val: default_val(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BihtSpec {
    #[serde(default = "default_s_grid")]
    pub s_grid: Vec<usize>,
    #[serde(default = "default_tau_grid")]
    pub tau_grid: Vec<f64>,
    #[serde(default = "default_biht_iters")]
    pub iters: usize,
    #[serde(default)]
    pub basis: Basis,
}

fn default_s_grid() -> Vec<usize> {
    vec![2, 4, 8, 16, 32]
}
fn default_tau_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0]
}
fn default_biht_iters() -> usize {
    100
}

impl Default for BihtSpec {
    fn default() -> Self {
        Self {
            s_grid: default_s_grid(),
            tau_grid: default_tau_grid(),
            iters: default_biht_iters(),
            basis: Basis::Identity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// Probes for the cell-diameter estimate.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Probes for the identification-error estimate.
    #[serde(default = "default_id_probes")]
    pub identification_probes: usize,
    /// Dense samples standing in for the signal set.
    #[serde(default = "default_model_samples")]
    pub model_samples: usize,
    /// Test signals for the code-book reconstruction error.
    #[serde(default = "default_oracle_items")]
    pub oracle_items: usize,
    /// Sample points for sampled cell counts.
    #[serde(default = "default_grid_samples")]
    pub grid_samples: usize,
}

fn default_probes() -> usize {
    20_000
}
fn default_id_probes() -> usize {
    2_000
}
fn default_model_samples() -> usize {
    20_000
}
fn default_oracle_items() -> usize {
    200
}
fn default_grid_samples() -> usize {
    100_000
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            probes: default_probes(),
            identification_probes: default_id_probes(),
            model_samples: default_model_samples(),
            oracle_items: default_oracle_items(),
            grid_samples: default_grid_samples(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    /// Dimension exponent; the model's intrinsic dimension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default = "default_log_base")]
    pub log_base: LogBase,
}

fn default_delta() -> f64 {
    0.5
}
fn default_xi() -> f64 {
    0.01
}
fn default_log_base() -> LogBase {
    LogBase::Natural
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            k: None,
            delta: default_delta(),
            xi: default_xi(),
            eps0: None,
            l: None,
            log_base: default_log_base(),
        }
    }
}

/// A reconstruction method in a learning experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpMethod {
    LinearInverse,
    PseudoInverse,
    Biht,
    McOnly,
    Ssbm,
    Equivariant,
    Supervised,
    SupervisedPlus,
}

impl ExpMethod {
    pub fn name(self) -> &'static str {
        match self {
            ExpMethod::LinearInverse => "linear_inverse",
            ExpMethod::PseudoInverse => "pseudo_inverse",
            ExpMethod::Biht => "biht",
            ExpMethod::McOnly => "mc_only",
            ExpMethod::Ssbm => "ssbm",
            ExpMethod::Equivariant => "equivariant",
            ExpMethod::Supervised => "supervised",
            ExpMethod::SupervisedPlus => "supervised_plus",
        }
    }

    /// Training mode for learned methods.
    pub fn mode(self) -> Option<Mode> {
        match self {
            ExpMethod::McOnly => Some(Mode::MeasurementConsistencyOnly),
            ExpMethod::Ssbm => Some(Mode::SsbmMultiOp),
            ExpMethod::Equivariant => Some(Mode::SsbmEquivariant),
            ExpMethod::Supervised => Some(Mode::Supervised),
            ExpMethod::SupervisedPlus => Some(Mode::SupervisedPlus),
            _ => None,
        }
    }
}

fn default_methods() -> Vec<ExpMethod> {
    vec![
        ExpMethod::LinearInverse,
        ExpMethod::Biht,
        ExpMethod::McOnly,
        ExpMethod::Ssbm,
        ExpMethod::Supervised,
    ]
}

fn default_train() -> TrainConfig {
    TrainConfig::new(Mode::SsbmMultiOp)
}

fn default_repeats() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    pub bank: BankSpec,
    /// Values of the swept variable: integers for `m`/`G`, reals for
    /// `sigma`/`alpha`, loss objects for `loss`.
    pub values: Vec<serde_json::Value>,
    #[serde(default = "default_methods")]
    pub methods: Vec<ExpMethod>,
    #[serde(default)]
    pub data: DataSpec,
    /// Shared training settings; the mode is set per method and the seed per repeat.
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub biht: BihtSpec,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub bounds: BoundParams,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; not part of the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// One value of the swept variable.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepValue {
    Count(usize),
    Real(f64),
    Loss(LossKind),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Count(v) => write!(f, "{v}"),
            SweepValue::Real(v) => write!(f, "{v}"),
            SweepValue::Loss(l) => f.write_str(&l.name()),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config, or the manifest of an earlier run.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let value = match value.get("manifest_format") {
            Some(_) => value
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Config("manifest without a config".into()))?,
            None => value,
        };
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn sweep_values(&self) -> Result<Vec<SweepValue>> {
        if self.values.is_empty() {
            return Err(Error::Config("values must list at least one sweep point".into()));
        }
        self.values
            .iter()
            .map(|v| {
                let bad = || Error::Config(format!("sweep value {v} does not fit {}", self.experiment.swept()));
                Ok(match self.experiment {
                    ExperimentKind::LossCompare => {
                        let loss: LossKind = serde_json::from_value(v.clone()).map_err(|_| bad())?;
                        loss.validate()?;
                        SweepValue::Loss(loss)
                    }
                    ExperimentKind::NoiseSweep | ExperimentKind::AlphaSweep => {
                        let x = v.as_f64().filter(|x| *x >= 0.0 && x.is_finite()).ok_or_else(bad)?;
                        SweepValue::Real(x)
                    }
                    _ => {
                        let x = v.as_u64().filter(|&x| x >= 1).ok_or_else(bad)?;
                        SweepValue::Count(x as usize)
                    }
                })
            })
            .collect()
    }

    /// Config errors that can be found before running any cell.
    pub fn validate(&self) -> Result<()> {
        self.sweep_values()?;
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        if self.bank.m == 0 || self.bank.g == 0 {
            return Err(Error::Config("bank needs m >= 1 and G >= 1".into()));
        }
        if !(self.bank.sigma >= 0.0 && self.bank.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be nonnegative, got {}", self.bank.sigma)));
        }
        let model = self.model.build(0)?;
        if self.experiment.is_learning() {
            if self.methods.is_empty() {
                return Err(Error::Config("methods must not be empty".into()));
            }
            if self.data.test == 0 || self.data.train_per_op == 0 || self.data.val == 0 {
                return Err(Error::Config("data sizes must be positive".into()));
            }
            self.train.validate()?;
            if self.methods.contains(&ExpMethod::Equivariant) && self.train.group.is_none() {
                return Err(Error::Config("the equivariant method needs train.group".into()));
            }
            if self.methods.contains(&ExpMethod::Biht) {
                if self.biht.s_grid.is_empty() || self.biht.tau_grid.is_empty() {
                    return Err(Error::Config("BIHT grids must not be empty".into()));
                }
                for &s in &self.biht.s_grid {
                    BihtConfig::new(s, self.biht.tau_grid[0], self.biht.iters, self.biht.basis).validate(model.n())?;
                }
            }
        }
        Ok(())
    }

    /// Seeds of repeat `r`; every sweep value of that repeat shares them.
    pub fn cell_seeds(&self, repeat: usize) -> CellSeeds {
        let base = split_seed(self.seed, repeat as u64);
        CellSeeds {
            repeat: base,
            model: split_seed(base, 0),
            bank: self.bank.seed.unwrap_or(split_seed(base, 1)),
            train_data: split_seed(base, 2),
            test_data: split_seed(base, 3),
            val_data: split_seed(base, 4),
            train: split_seed(base, 5),
            geometry: split_seed(base, 6),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub repeat: u64,
    pub model: u64,
    pub bank: u64,
    pub train_data: u64,
    pub test_data: u64,
    pub val_data: u64,
    pub train: u64,
    pub geometry: u64,
}

/// What one grid cell produced. Failed computations leave `NaN` and a message.
#[derive(Clone, Debug, Default)]
pub struct CellOutput {
    pub scalars: Vec<(String, f64)>,
    pub reports: Vec<(ExpMethod, EvalReport)>,
    pub failures: Vec<(String, String)>,
}

impl CellOutput {
    fn scalar(&mut self, name: &str, value: Result<f64>) {
        let v = value.unwrap_or_else(|e| {
            self.failures.push((name.to_string(), e.to_string()));
            f64::NAN
        });
        self.scalars.push((name.to_string(), v));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn report(&self, method: ExpMethod) -> Option<&EvalReport> {
        self.reports.iter().find(|(m, _)| *m == method).map(|(_, r)| r)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Col {
    /// Measured per repeat: emits `_mean` and `_std` columns.
    Measured,
    /// Deterministic reference value.
    Reference,
}

fn scalar_columns(kind: ExperimentKind) -> Vec<(&'static str, Col)> {
    match kind {
        ExperimentKind::NoiseSweep => vec![("flip_fraction", Col::Measured)],
        ExperimentKind::GeometryCheck => vec![
            ("max_cell_diameter", Col::Measured),
            ("diameter_lower_bound", Col::Reference),
            ("delta_hat", Col::Measured),
            ("oracle_error_median", Col::Measured),
            ("delta_scaling", Col::Reference),
        ],
        ExperimentKind::CellCount => vec![
            ("cells", Col::Measured),
            ("exact_region_count", Col::Reference),
            ("expected_cell_bound", Col::Reference),
        ],
        ExperimentKind::BoundsCheck => vec![
            ("required_m_recovery", Col::Reference),
            ("required_m_identification", Col::Reference),
            ("diameter_lower_bound", Col::Reference),
            ("delta_scaling", Col::Reference),
            ("ln_uos_cell_bound", Col::Reference),
            ("ln_expected_cell_bound", Col::Reference),
            ("ln_proba_cell_bound", Col::Reference),
        ],
        _ => Vec::new(),
    }
}

/// Runs one grid cell: sweep value `value` under the seeds of one repeat.
pub fn run_cell(cfg: &ExperimentConfig, value: &SweepValue, seeds: &CellSeeds) -> CellOutput {
    let mut out = CellOutput::default();
    let res = match cfg.experiment {
        k if k.is_learning() => learning_cell(cfg, value, seeds, &mut out),
        ExperimentKind::GeometryCheck => geometry_cell(cfg, value, seeds, &mut out),
        ExperimentKind::CellCount => cell_count_cell(cfg, value, seeds, &mut out),
        _ => bounds_cell(cfg, value, &mut out),
    };
    if let Err(e) = res {
        out.failures.push(("cell".into(), e.to_string()));
    }
    out
}

fn count(value: &SweepValue) -> usize {
    match value {
        SweepValue::Count(v) => *v,
        _ => unreachable!("validated sweep value"),
    }
}

fn learning_cell(cfg: &ExperimentConfig, value: &SweepValue, seeds: &CellSeeds, out: &mut CellOutput) -> Result<()> {
    let mut bank_spec = cfg.bank.clone();
    let mut tc = cfg.train.clone();
    match (cfg.experiment, value) {
        (ExperimentKind::MSweep, SweepValue::Count(m)) => bank_spec.m = *m,
        (ExperimentKind::GSweep, SweepValue::Count(g)) => bank_spec.g = *g,
        (ExperimentKind::NoiseSweep, SweepValue::Real(s)) => bank_spec.sigma = *s,
        (ExperimentKind::AlphaSweep, SweepValue::Real(a)) => tc.alpha = Some(*a),
        (ExperimentKind::LossCompare, SweepValue::Loss(l)) => tc.loss = *l,
        _ => return Err(Error::Config(format!("sweep value {value} does not fit {}", cfg.experiment.name()))),
    }
    tc.seed = seeds.train;
    let model = cfg.model.build(seeds.model)?;
    let bank = OperatorBank::gaussian(bank_spec.m, model.n(), bank_spec.g, bank_spec.sigma, seeds.bank)?;
    let test = Dataset::generate(&model, &bank, cfg.data.test, seeds.test_data, true)?;

    if cfg.experiment == ExperimentKind::NoiseSweep {
        out.scalar("flip_fraction", mean_flip_fraction(&test));
    }

    let mut train_set: Option<Dataset> = None;
    for &method in &cfg.methods {
        let report = (|| -> Result<EvalReport> {
            let mut report = match method {
                ExpMethod::LinearInverse => evaluate_method(Method::LinearInverse, &test, &Artifacts::default(), seeds.test_data)?,
                ExpMethod::PseudoInverse => evaluate_method(Method::PseudoInverse, &test, &Artifacts::default(), seeds.test_data)?,
                ExpMethod::Biht => {
                    let val = Dataset::generate(&model, &bank, cfg.data.val, seeds.val_data, true)?;
                    let chosen = tune_biht(&cfg.biht, &val)?;
                    let artifacts = Artifacts {
                        net: None,
                        biht: Some(chosen),
                    };
                    evaluate_method(Method::Biht, &test, &artifacts, seeds.test_data)?
                }
                learned => {
                    if train_set.is_none() {
                        let count = cfg.data.train_per_op * bank.len();
                        train_set = Some(Dataset::generate(&model, &bank, count, seeds.train_data, true)?);
                    }
                    let mut mc = tc.clone();
                    mc.mode = learned.mode().expect("learned method");
                    let outcome = learn::train(&mc, train_set.as_ref().expect("generated above"))?;
                    if !outcome.params.is_finite() {
                        return Err(Error::Numerical(format!("{} training diverged", method.name())));
                    }
                    let artifacts = Artifacts {
                        net: Some(outcome.params),
                        biht: None,
                    };
                    let mut r = evaluate_method(Method::TrainedNet, &test, &artifacts, seeds.test_data)?;
                    r.config = serde_json::to_value(&mc)?;
                    r
                }
            };
            report.method = method.name().to_string();
            Ok(report)
        })();
        match report {
            Ok(r) => out.reports.push((method, r)),
            Err(e) => out.failures.push((method.name().to_string(), e.to_string())),
        }
    }
    Ok(())
}

/// Mean fraction of bits that noise flipped relative to the noiseless code.
fn mean_flip_fraction(test: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for e in &test.entries {
        let x = e.x_true.as_ref().ok_or_else(|| Error::Data("flip fraction needs truths".into()))?;
        let clean = sign_quantize(&test.bank.op(e.g)?.matvec(x)?)?;
        total += flip_fraction(&clean, &e.y);
    }
    Ok(total / test.len() as f64)
}

/// Grid-searches BIHT on held-out items with truth.
pub fn tune_biht(spec: &BihtSpec, val: &Dataset) -> Result<BihtConfig> {
    let obs = val
        .entries
        .iter()
        .map(|e| Ok(Observation { y: &e.y, a: val.bank.op(e.g)? }))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<Vec<f64>> = val
        .entries
        .iter()
        .map(|e| e.x_true.clone().ok_or_else(|| Error::Data("BIHT tuning needs truths".into())))
        .collect::<Result<_>>()?;
    let n = val.bank.n();
    let s_grid: Vec<usize> = spec.s_grid.iter().copied().filter(|&s| s <= n).collect();
    Ok(grid_search_biht(&obs, Some(&truths), &s_grid, &spec.tau_grid, spec.iters, spec.basis)?.config)
}

fn intrinsic_k(cfg: &ExperimentConfig, model: &SignalModel) -> f64 {
    cfg.bounds.k.unwrap_or(model.intrinsic_dim as f64)
}

fn geometry_cell(cfg: &ExperimentConfig, value: &SweepValue, seeds: &CellSeeds, out: &mut CellOutput) -> Result<()> {
    let m = count(value);
    let g = cfg.bank.g;
    let geo = &cfg.geometry;
    let model = cfg.model.build(seeds.model)?;
    let n = model.n();
    let bank = OperatorBank::gaussian(m, n, g, 0.0, seeds.bank)?;
    let a = bank.stack();

    out.scalar(
        "max_cell_diameter",
        tessellation::max_cell_diameter(&a, geo.probes, split_seed(seeds.geometry, 0)).map(|r| r.max_diameter_estimate),
    );
    out.scalar("diameter_lower_bound", Ok(bounds::diameter_lower_bound(n, m, g)));
    out.scalar(
        "delta_hat",
        tessellation::identification_error(
            &bank,
            &model,
            geo.identification_probes,
            geo.model_samples,
            split_seed(seeds.geometry, 1),
        )
        .map(|r| r.delta_hat),
    );
    out.scalar("oracle_error_median", oracle_error_median(&a, &model, geo, seeds.geometry));
    out.scalar("delta_scaling", bounds::delta_scaling(n, m, g, intrinsic_k(cfg, &model)));
    Ok(())
}

/// Median of `‖x − x̂‖` for code-book reconstruction through the stacked operator.
pub fn oracle_error_median(a: &Matrix, model: &SignalModel, geo: &GeometrySpec, seed: u64) -> Result<f64> {
    let samples = model.sample(geo.model_samples, split_seed(seed, 2))?;
    let book = tessellation::CodeBook::new(a, &samples)?;
    let tests = model.sample(geo.oracle_items, split_seed(seed, 3))?;
    let errors = tests
        .iter_rows()
        .map(|x| {
            let y = sign_quantize(&a.matvec(x)?)?;
            Ok(linalg::distance(x, &book.reconstruct(&y)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(metrics::median(&errors))
}

fn cell_count_cell(cfg: &ExperimentConfig, value: &SweepValue, seeds: &CellSeeds, out: &mut CellOutput) -> Result<()> {
    let m = count(value);
    let g = cfg.bank.g;
    let model = cfg.model.build(seeds.model)?;
    let n = model.n();
    let bank = OperatorBank::gaussian(m, n, g, 0.0, seeds.bank)?;
    let a = bank.stack();
    let cells = match &model.variant {
        SignalVariant::GreatCircle { .. } => tessellation::count_cells_curve(&a, &model, 1e-12).map(|c| c.cells as f64),
        _ => model
            .sample(cfg.geometry.grid_samples, split_seed(seeds.geometry, 4))
            .and_then(|s| tessellation::count_cells_sampled(&a, &s))
            .map(|c| c as f64),
    };
    out.scalar("cells", cells);
    out.scalar("exact_region_count", tessellation::exact_region_count(m * g, n).map(|c| c as f64));
    let k = intrinsic_k(cfg, &model);
    out.scalar(
        "expected_cell_bound",
        BoundSpec::new(n, m * g, 1, k, cfg.bounds.delta, cfg.bounds.xi)
            .and_then(|s| bounds::expected_cell_bound(&s))
            .map(|b| b.ln.exp()),
    );
    Ok(())
}

fn bounds_cell(cfg: &ExperimentConfig, value: &SweepValue, out: &mut CellOutput) -> Result<()> {
    let m = count(value);
    let g = cfg.bank.g;
    let model = cfg.model.build(0)?;
    let n = model.n();
    let p = &cfg.bounds;
    let mut spec = BoundSpec::new(n, m, g, intrinsic_k(cfg, &model), p.delta, p.xi)?.with_log_base(p.log_base);
    if let Some(e) = p.eps0 {
        spec = spec.with_eps0(e)?;
    }
    let l = p.l.or(match cfg.model {
        ModelSpec::SubspaceUnion { l, .. } => Some(l),
        _ => None,
    });
    if let Some(l) = l {
        spec = spec.with_l(l)?;
    }
    out.scalar("required_m_recovery", bounds::required_m_recovery(&spec).map(|v| v as f64));
    out.scalar("required_m_identification", bounds::required_m_identification(&spec).map(|v| v as f64));
    out.scalar("diameter_lower_bound", Ok(bounds::diameter_lower_bound(n, m, g)));
    out.scalar("delta_scaling", bounds::delta_scaling_in(n, m, g, spec.k, p.log_base));
    let uos = match spec.l {
        Some(_) => bounds::uos_cell_bound(&spec).map(|b| b.ln),
        None => Err(Error::Config("no L for the union-of-subspaces bound".into())),
    };
    out.scalar("ln_uos_cell_bound", uos);
    out.scalar("ln_expected_cell_bound", bounds::expected_cell_bound(&spec).map(|b| b.ln));
    out.scalar("ln_proba_cell_bound", bounds::proba_cell_bound(&spec).map(|b| b.ln));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub row: usize,
    pub value: String,
    pub repeat: usize,
    pub seeds: CellSeeds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub row: usize,
    pub repeat: usize,
    pub what: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_format: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellRecord>,
    pub failures: Vec<CellFailure>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub csv: String,
    pub manifest: String,
    /// Git-style blob hash (SHA-256) of the manifest bytes.
    pub manifest_hash: String,
    pub failures: Vec<CellFailure>,
}

/// `sha256("blob <len>\0" ++ bytes)` as lowercase hex.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Runs `f(0..count)` on up to `threads` workers; results keep index order.
fn run_indexed<T: Send, F: Fn(usize) -> T + Sync>(count: usize, threads: usize, f: F) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, count.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let r = f(i);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every index ran"))
        .collect()
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let values = cfg.sweep_values()?;
    // bound tables are deterministic, one repeat suffices
    let repeats = if cfg.experiment == ExperimentKind::BoundsCheck {
        1
    } else {
        cfg.repeats
    };
    let cells: Vec<CellRecord> = (0..values.len())
        .flat_map(|row| (0..repeats).map(move |repeat| (row, repeat)))
        .map(|(row, repeat)| CellRecord {
            row,
            value: values[row].to_string(),
            repeat,
            seeds: cfg.cell_seeds(repeat),
        })
        .collect();
    let outputs = run_indexed(cells.len(), threads, |i| {
        let c = &cells[i];
        log::info!("{} cell {}={} repeat {}", cfg.experiment.name(), cfg.experiment.swept(), c.value, c.repeat);
        run_cell(cfg, &values[c.row], &c.seeds)
    });

    let mut failures = Vec::new();
    for (c, o) in cells.iter().zip(&outputs) {
        for (what, error) in &o.failures {
            log::warn!("cell {}={} repeat {}: {what}: {error}", cfg.experiment.swept(), c.value, c.repeat);
            failures.push(CellFailure {
                row: c.row,
                repeat: c.repeat,
                what: what.clone(),
                error: error.clone(),
            });
        }
    }

    let scalar_cols = scalar_columns(cfg.experiment);
    let methods: &[ExpMethod] = if cfg.experiment.is_learning() { &cfg.methods } else { &[] };
    let mut header = vec![cfg.experiment.swept().to_string()];
    for (name, col) in &scalar_cols {
        match col {
            Col::Measured => {
                header.push(format!("{name}_mean"));
                header.push(format!("{name}_std"));
            }
            Col::Reference => header.push(name.to_string()),
        }
    }
    for m in methods {
        header.push(format!("{}_mean_db", m.name()));
        header.push(format!("{}_std_db", m.name()));
    }
    let mut csv = header.join(",") + "\n";
    for (row, value) in values.iter().enumerate() {
        let row_out: Vec<&CellOutput> = cells
            .iter()
            .zip(&outputs)
            .filter(|(c, _)| c.row == row)
            .map(|(_, o)| o)
            .collect();
        let mut fields = vec![value.to_string()];
        for (name, col) in &scalar_cols {
            let vals: Vec<f64> = row_out.iter().filter_map(|o| o.get(name)).filter(|v| !v.is_nan()).collect();
            match col {
                Col::Measured if vals.is_empty() => fields.extend(["NaN".into(), "NaN".into()]),
                Col::Measured => {
                    let (mean, std) = metrics::mean_std(&vals);
                    fields.push(fmt_num(mean));
                    fields.push(fmt_num(std));
                }
                Col::Reference => fields.push(vals.first().map_or("NaN".into(), |v| fmt_num(*v))),
            }
        }
        for &m in methods {
            let pooled: Vec<f64> = row_out
                .iter()
                .filter_map(|o| o.report(m))
                .flat_map(|r| r.per_item.iter().copied())
                .collect();
            if pooled.is_empty() {
                fields.extend(["NaN".into(), "NaN".into()]);
            } else {
                let (mean, std) = metrics::mean_std(&pooled);
                fields.push(fmt_num(mean));
                fields.push(fmt_num(std));
            }
        }
        csv += &(fields.join(",") + "\n");
    }

    let mut config = cfg.clone();
    config.output = None;
    let manifest = Manifest {
        manifest_format: MANIFEST_FORMAT.into(),
        config,
        cells,
        failures: failures.clone(),
    };
    let manifest = serde_json::to_string_pretty(&manifest)? + "\n";
    let manifest_hash = blob_hash(manifest.as_bytes());
    csv += &format!("# manifest blob-sha256 {manifest_hash}\n");
    Ok(ExperimentOutput {
        csv,
        manifest,
        manifest_hash,
        failures,
    })
}

/// Writes `<name>.csv` and `<name>.manifest.json` into `dir`.
pub fn write_experiment(dir: &Path, kind: ExperimentKind, output: &ExperimentOutput) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{}.csv", kind.name()));
    let manifest = dir.join(format!("{}.manifest.json", kind.name()));
    std::fs::write(&csv, &output.csv).map_err(|e| Error::io(&csv, e))?;
    std::fs::write(&manifest, &output.manifest).map_err(|e| Error::io(&manifest, e))?;
    Ok((csv, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: &str, values: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"experiment":"{kind}","model":{{"kind":"subspace_union","n":8,"k":2,"l":2}},
                "bank":{{"m":6,"G":3}},"values":{values},
                "data":{{"train_per_op":40,"test":30,"val":10}},
                "train":{{"epochs":2,"batch_size":16,"hidden":[16,16]}},
                "biht":{{"s_grid":[2,4],"tau_grid":[1.0],"iters":10}},
                "geometry":{{"probes":500,"identification_probes":100,"model_samples":500,"oracle_items":20,"grid_samples":2000}},
                "repeats":2{extra}}}"#
        ))
        .unwrap()
    }

    fn rows(csv: &str) -> Vec<Vec<String>> {
        csv.lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn m_sweep_schema() {
        let cfg = small(
            "m_sweep",
            "[4, 8]",
            r#","methods":["linear_inverse","mc_only","biht","ssbm","supervised"]"#,
        );
        let out = run_experiment(&cfg, 2).unwrap();
        let r = rows(&out.csv);
        assert_eq!(
            r[0],
            [
                "m",
                "linear_inverse_mean_db",
                "linear_inverse_std_db",
                "mc_only_mean_db",
                "mc_only_std_db",
                "biht_mean_db",
                "biht_std_db",
                "ssbm_mean_db",
                "ssbm_std_db",
                "supervised_mean_db",
                "supervised_std_db"
            ]
        );
        assert_eq!(r.len(), 3);
        assert_eq!((r[1][0].as_str(), r[2][0].as_str()), ("4", "8"));
        assert!(r[1..].iter().flatten().all(|f| f.parse::<f64>().unwrap().is_finite()));
        assert!(out.failures.is_empty());
        let last = out.csv.lines().last().unwrap();
        assert_eq!(last, format!("# manifest blob-sha256 {}", blob_hash(out.manifest.as_bytes())));
    }

    #[test]
    fn rerun_from_manifest_is_byte_identical_and_thread_independent() {
        let cfg = small("noise_sweep", "[0.0, 0.3]", r#","methods":["linear_inverse","ssbm"]"#);
        let a = run_experiment(&cfg, 1).unwrap();
        let again = ExperimentConfig::from_json(&a.manifest).unwrap();
        let b = run_experiment(&again, 3).unwrap();
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.manifest, b.manifest);
        let r = rows(&a.csv);
        assert_eq!(&r[0][..3], ["sigma", "flip_fraction_mean", "flip_fraction_std"]);
        assert_eq!(r[1][1], "0");
        let flips: f64 = r[2][1].parse().unwrap();
        // atan(0.3)/π ≈ 0.093
        assert!((flips - 0.3f64.atan() / std::f64::consts::PI).abs() < 0.04, "{flips}");
    }

    #[test]
    fn manifest_has_no_output_path_and_hash_matches() {
        let mut cfg = small("bounds_check", "[16, 64]", "");
        cfg.output = Some("somewhere".into());
        let out = run_experiment(&cfg, 1).unwrap();
        assert!(!out.manifest.contains("somewhere"));
        let dir = tempfile::tempdir().unwrap();
        let (csv, man) = write_experiment(dir.path(), cfg.experiment, &out).unwrap();
        assert_eq!(blob_hash(&std::fs::read(man).unwrap()), out.manifest_hash);
        let text = std::fs::read_to_string(csv).unwrap();
        let r = rows(&text);
        assert_eq!(r[0][0], "m");
        let dl: f64 = r[1][3].parse().unwrap();
        assert!((dl - bounds::diameter_lower_bound(8, 16, 3)).abs() < 1e-15);
    }

    #[test]
    fn blob_hash_matches_git_format() {
        // `git hash-object --object-format=sha256` of an empty blob
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn geometry_and_cell_count_cells() {
        let cfg = small("geometry_check", "[4]", "");
        let out = run_experiment(&cfg, 2).unwrap();
        let r = rows(&out.csv);
        assert_eq!(r[0].len(), 1 + 2 + 1 + 2 + 2 + 1);
        let diam: f64 = r[1][1].parse().unwrap();
        assert!(diam > 0.0 && diam <= 2.0);

        let mut cc = small("cell_count", "[2, 5]", "");
        cc.model = ModelSpec::GreatCircle { n: 8, seed: None };
        cc.bank.g = 1;
        let out = run_experiment(&cc, 1).unwrap();
        let r = rows(&out.csv);
        // a great circle crosses 2m cells of a generic arrangement
        assert_eq!(r[1][1], "4");
        assert_eq!(r[2][1], "10");
    }

    #[test]
    fn config_errors() {
        let bad = |s: &str| matches!(ExperimentConfig::from_json(s).and_then(|c| c.validate()), Err(Error::Config(_)));
        assert!(bad("{"));
        assert!(bad(r#"{"experiment":"nope","model":{"kind":"full_sphere","n":4},"bank":{"m":2,"G":1},"values":[1]}"#));
        assert!(bad(r#"{"experiment":"m_sweep","model":{"kind":"full_sphere","n":4},"bank":{"m":2,"G":1},"values":[]}"#));
        assert!(bad(r#"{"experiment":"m_sweep","model":{"kind":"full_sphere","n":4},"bank":{"m":2,"G":1},"values":[0.5]}"#));
        assert!(bad(
            r#"{"experiment":"m_sweep","model":{"kind":"full_sphere","n":4},"bank":{"m":2,"G":1},"values":[2],"methods":["equivariant"]}"#
        ));
        let loss = ExperimentConfig::from_json(
            r#"{"experiment":"loss_compare","model":{"kind":"full_sphere","n":4},"bank":{"m":2,"G":1},"values":["logistic",{"one_sided_lp":2}]}"#,
        )
        .unwrap();
        assert_eq!(loss.sweep_values().unwrap().len(), 2);
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        // a bound with violated preconditions is NaN plus a failure record
        let b = small("bounds_check", "[1]", "");
        let out = run_experiment(&b, 1).unwrap();
        assert!(!out.failures.is_empty());
        assert!(rows(&out.csv)[1].iter().any(|f| f == "NaN"));

        let mut cfg = small("m_sweep", "[4]", r#","methods":["linear_inverse"]"#);
        cfg.model = ModelSpec::FinitePoints {
            path: "/nonexistent/points.json".into(),
            intrinsic_dim: None,
        };
        assert!(matches!(run_experiment(&cfg, 1), Err(Error::Io { .. })));
    }
}
