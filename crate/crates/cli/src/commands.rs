use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use onebit::biht::{grid_search_biht, Biht, Observation};
use onebit::bounds::{self, BoundSpec};
use onebit::eval::{self, Artifacts, Method};
use onebit::experiment::{self, BankSpec, ExperimentConfig, ModelSpec};
use onebit::learn::{self, Dataset, TrainConfig};
use onebit::rng::split_seed;
use onebit::signal::SignalVariant;
use onebit::{metrics, tessellation, BihtConfig, Basis, NetworkParams, OperatorBank};

use crate::Common;

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    onebit::Error::Config(msg.into()).into()
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Writes pretty JSON to `out`, or to stdout without one.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDataConfig {
    model: ModelSpec,
    bank: BankSpec,
    count: usize,
    #[serde(default = "yes")]
    with_truth: bool,
    #[serde(default)]
    seed: u64,
}

fn yes() -> bool {
    true
}

pub fn gen_data(c: &Common) -> Result<()> {
    let cfg: GenDataConfig = read_config(&c.config)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    let model = cfg.model.build(split_seed(seed, 0))?;
    let bank_seed = cfg.bank.seed.unwrap_or(split_seed(seed, 1));
    let bank = OperatorBank::gaussian(cfg.bank.m, model.n(), cfg.bank.g, cfg.bank.sigma, bank_seed)?;
    let data = Dataset::generate(&model, &bank, cfg.count, split_seed(seed, 2), cfg.with_truth)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("dataset.obsb"));
    eval::write_dataset(&out, &data)?;
    log::info!("wrote {} measurements to {}", data.len(), out.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    data: PathBuf,
    train: TrainConfig,
}

#[derive(Serialize)]
struct TrainSummary {
    model: PathBuf,
    mode: &'static str,
    epochs: usize,
    steps: u64,
    final_loss: Option<f64>,
    history: Vec<f64>,
}

pub fn train(c: &Common) -> Result<()> {
    let cfg: TrainFileConfig = read_config(&c.config)?;
    let mut tc = cfg.train;
    if let Some(s) = c.seed {
        tc.seed = s;
    }
    let (_, data) = eval::read_dataset(&cfg.data)?;
    let outcome = learn::train(&tc, &data)?;
    if !outcome.params.is_finite() {
        return Err(onebit::Error::Numerical("training produced non-finite weights".into()).into());
    }
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("model.ssbm"));
    outcome.params.save(&out)?;
    emit(
        None,
        &TrainSummary {
            model: out,
            mode: tc.mode.name(),
            epochs: tc.epochs,
            steps: outcome.steps,
            final_loss: outcome.history.last().copied(),
            history: outcome.history,
        },
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    data: PathBuf,
    method: Method,
    #[serde(default)]
    model: Option<PathBuf>,
    #[serde(default)]
    biht: Option<BihtConfig>,
    #[serde(default)]
    seed: u64,
}

pub fn eval(c: &Common) -> Result<()> {
    let cfg: EvalConfig = read_config(&c.config)?;
    let (_, data) = eval::read_dataset(&cfg.data)?;
    let net = cfg.model.as_deref().map(NetworkParams::load).transpose()?;
    let artifacts = Artifacts { net, biht: cfg.biht };
    let report = eval::evaluate_method(cfg.method, &data, &artifacts, c.seed.unwrap_or(cfg.seed))?;
    log::info!("{}: {:.3} ± {:.3} dB", report.method, report.mean_psnr_db, report.std_psnr_db);
    emit(c.out.as_deref(), &report)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    s_grid: Vec<usize>,
    tau_grid: Vec<f64>,
    #[serde(default = "default_iters")]
    iters: usize,
    #[serde(default)]
    basis: Basis,
}

fn default_iters() -> usize {
    100
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BihtFileConfig {
    data: PathBuf,
    #[serde(default)]
    config: Option<BihtConfig>,
    #[serde(default)]
    grid: Option<GridSpec>,
}

#[derive(Serialize)]
struct BihtOutput {
    config: BihtConfig,
    grid: Option<onebit::biht::GridSearchResult>,
    mean_psnr_db: Option<f64>,
    std_psnr_db: Option<f64>,
    reconstructions: Vec<Vec<f64>>,
}

pub fn biht(c: &Common) -> Result<()> {
    let cfg: BihtFileConfig = read_config(&c.config)?;
    let (_, data) = eval::read_dataset(&cfg.data)?;
    let truths: Option<Vec<Vec<f64>>> = data
        .has_truth()
        .then(|| data.entries.iter().map(|e| e.x_true.clone().expect("has truth")).collect());
    let (config, grid) = match (cfg.config, cfg.grid) {
        (Some(b), None) => (b, None),
        (None, Some(g)) => {
            let obs = data
                .entries
                .iter()
                .map(|e| Ok(Observation { y: &e.y, a: data.bank.op(e.g)? }))
                .collect::<onebit::Result<Vec<_>>>()?;
            let r = grid_search_biht(&obs, truths.as_deref(), &g.s_grid, &g.tau_grid, g.iters, g.basis)?;
            log::info!("grid search picked s = {}, tau = {}", r.config.sparsity, r.config.step);
            (r.config.clone(), Some(r))
        }
        _ => return Err(config_error("give exactly one of `config` and `grid`")),
    };
    let solver = Biht::new(config.clone(), data.bank.n())?;
    let reconstructions = data
        .entries
        .iter()
        .map(|e| solver.reconstruct(&e.y, data.bank.op(e.g)?))
        .collect::<onebit::Result<Vec<_>>>()?;
    let (mean, std) = match &truths {
        Some(t) => {
            let p = t
                .iter()
                .zip(&reconstructions)
                .map(|(x, xh)| metrics::psnr_capped(x, xh))
                .collect::<onebit::Result<Vec<_>>>()?;
            let (m, s) = metrics::mean_std(&p);
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    emit(
        c.out.as_deref(),
        &BihtOutput {
            config,
            grid,
            mean_psnr_db: mean,
            std_psnr_db: std,
            reconstructions,
        },
    )
}

pub fn bounds(c: &Common) -> Result<()> {
    let spec: BoundSpec = read_config(&c.config)?;
    emit(c.out.as_deref(), &bounds::bounds_report(&spec)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryConfig {
    model: ModelSpec,
    bank: BankSpec,
    #[serde(default = "default_probes")]
    probes: usize,
    #[serde(default = "default_id_probes")]
    identification_probes: usize,
    #[serde(default = "default_samples")]
    model_samples: usize,
    #[serde(default = "default_eps")]
    nullspace_eps: f64,
    #[serde(default)]
    seed: u64,
}

fn default_probes() -> usize {
    20_000
}
fn default_id_probes() -> usize {
    2_000
}
fn default_samples() -> usize {
    10_000
}
fn default_eps() -> f64 {
    0.01
}

#[derive(Serialize)]
struct PairReport {
    distance: f64,
    same_code: bool,
}

#[derive(Serialize)]
struct GeometryOutput {
    n: usize,
    stacked_rows: usize,
    rank: usize,
    diameter: tessellation::TessellationReport,
    diameter_lower_bound: f64,
    identification: tessellation::IdentificationEstimate,
    consistent_pair_max_distance: f64,
    nullspace_pair: Option<PairReport>,
    delta_scaling: Option<f64>,
}

pub fn geometry(c: &Common) -> Result<()> {
    let cfg: GeometryConfig = read_config(&c.config)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    let model = cfg.model.build(split_seed(seed, 0))?;
    let n = model.n();
    let bank = OperatorBank::gaussian(cfg.bank.m, n, cfg.bank.g, 0.0, cfg.bank.seed.unwrap_or(split_seed(seed, 1)))?;
    let a = bank.stack();
    let diameter = tessellation::max_cell_diameter(&a, cfg.probes, split_seed(seed, 2))?;
    let identification =
        tessellation::identification_error(&bank, &model, cfg.identification_probes, cfg.model_samples, split_seed(seed, 3))?;
    let samples = model.sample(cfg.model_samples, split_seed(seed, 4))?;
    let consistent = tessellation::consistent_pair_max_distance(&a, &samples)?;
    let nullspace_pair = tessellation::nullspace_consistent_pair(&a, cfg.nullspace_eps, split_seed(seed, 5))?
        .map(|(p, q)| -> onebit::Result<PairReport> {
            Ok(PairReport {
                distance: onebit::linalg::distance(&p, &q),
                same_code: tessellation::cell_code(&a, &p)? == tessellation::cell_code(&a, &q)?,
            })
        })
        .transpose()?;
    let out = GeometryOutput {
        n,
        stacked_rows: a.rows(),
        rank: onebit::sensing::numeric_rank(&a, onebit::sensing::DEFAULT_RANK_TOL)?,
        diameter,
        diameter_lower_bound: bounds::diameter_lower_bound(n, cfg.bank.m, cfg.bank.g),
        identification,
        consistent_pair_max_distance: consistent,
        nullspace_pair,
        delta_scaling: bounds::delta_scaling(n, cfg.bank.m, cfg.bank.g, model.intrinsic_dim as f64).ok(),
    };
    emit(c.out.as_deref(), &out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellCountConfig {
    model: ModelSpec,
    bank: BankSpec,
    #[serde(default = "default_grid")]
    grid_samples: usize,
    #[serde(default)]
    seed: u64,
}

fn default_grid() -> usize {
    100_000
}

#[derive(Serialize)]
struct CellCountOutput {
    method: &'static str,
    cells: usize,
    /// Regions of a generic arrangement of the stacked hyperplanes on the sphere.
    exact_region_count: Option<String>,
    expected_bound: Option<bounds::BoundValue>,
}

pub fn cell_count(c: &Common) -> Result<()> {
    let cfg: CellCountConfig = read_config(&c.config)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    let model = cfg.model.build(split_seed(seed, 0))?;
    let n = model.n();
    let bank = OperatorBank::gaussian(cfg.bank.m, n, cfg.bank.g, 0.0, cfg.bank.seed.unwrap_or(split_seed(seed, 1)))?;
    let a = bank.stack();
    let (method, cells) = match &model.variant {
        SignalVariant::GreatCircle { .. } => ("curve", tessellation::count_cells_curve(&a, &model, 1e-12)?.cells),
        _ => {
            let s = model.sample(cfg.grid_samples, split_seed(seed, 2))?;
            ("sampled", tessellation::count_cells_sampled(&a, &s)?)
        }
    };
    let k = (model.intrinsic_dim as f64).max(1.0);
    let expected_bound = BoundSpec::new(n, a.rows(), 1, k, 0.5, 0.01)
        .and_then(|s| bounds::expected_cell_bound(&s))
        .ok();
    emit(
        c.out.as_deref(),
        &CellCountOutput {
            method,
            cells,
            exact_region_count: tessellation::exact_region_count(a.rows(), n).ok().map(|v| v.to_string()),
            expected_bound,
        },
    )
}

pub fn experiment(c: &Common) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let dir = c
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let output = experiment::run_experiment(&cfg, c.threads)?;
    let (csv, manifest) = experiment::write_experiment(&dir, cfg.experiment, &output)?;
    if !output.failures.is_empty() {
        log::warn!("{} cell computations failed; see {}", output.failures.len(), manifest.display());
    }
    log::info!("wrote {} and {}", csv.display(), manifest.display());
    Ok(())
}
