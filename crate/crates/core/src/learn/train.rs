use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, Rng};
use crate::sensing::{BinaryVector, OperatorBank};
use crate::signal::{ShiftGroup, SignalModel};

use super::adam::Adam;
use super::loss::LossKind;
use super::network::NetworkParams;
use super::objective::{evaluate, Batch, CrossRef, LossEval, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Measurement consistency plus cross-operator consistency.
    SsbmMultiOp,
    /// Measurement consistency plus group-transformed consistency, one operator.
    SsbmEquivariant,
    Supervised,
    /// Supervised loss plus the cross-operator term.
    SupervisedPlus,
    MeasurementConsistencyOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SsbmMultiOp => "ssbm",
            Mode::SsbmEquivariant => "ssbm_equivariant",
            Mode::Supervised => "supervised",
            Mode::SupervisedPlus => "supervised_plus",
            Mode::MeasurementConsistencyOnly => "mc_only",
        }
    }

    pub fn needs_truth(self) -> bool {
        matches!(self, Mode::Supervised | Mode::SupervisedPlus)
    }
}

/// How many cross terms each batch evaluates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSampling {
    /// One uniformly drawn operator `s ≠ g` (or group element) per batch,
    /// weighted by the number of candidates so the expectation is the full sum.
    #[default]
    One,
    /// Every candidate.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupShape {
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Cross-term weight; `None` picks the default for the loss and `m/n`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub detach_bootstrap: bool,
    #[serde(default)]
    pub cross_sampling: CrossSampling,
    /// Hidden widths; `None` means `[4n, 4n]`.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub normalize_output: bool,
    /// Shift group for the equivariant mode.
    #[serde(default)]
    pub group: Option<GroupShape>,
}

fn default_mode() -> Mode {
    Mode::SsbmMultiOp
}
fn default_loss() -> LossKind {
    LossKind::Logistic
}
fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    64
}

impl TrainConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            loss: default_loss(),
            alpha: None,
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            seed: 0,
            detach_bootstrap: false,
            cross_sampling: CrossSampling::One,
            hidden: None,
            normalize_output: false,
            group: None,
        }
    }

    /// The cross-term weight in effect: explicit `alpha`, else 1 for the
    /// ℓp losses and, for the logistic loss, 0.1 when `m < n` and 0.06 otherwise.
    pub fn resolved_alpha(&self, m: usize, n: usize) -> f64 {
        self.alpha.unwrap_or(match self.loss {
            LossKind::Logistic if m < n => 0.1,
            LossKind::Logistic => 0.06,
            _ => 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("alpha must be nonnegative, got {a}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(h) = &self.hidden {
            if h.contains(&0) {
                return Err(Error::Config("hidden widths must be positive".into()));
            }
        }
        // checks lr and betas
        Adam::new(0, self.lr, self.beta1, self.beta2)?;
        Ok(())
    }

    pub fn shift_group(&self) -> Result<Option<ShiftGroup>> {
        self.group.map(|g| ShiftGroup::new(g.height, g.width)).transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub y: BinaryVector,
    pub g: usize,
    pub x_true: Option<Vec<f64>>,
}

/// Binary measurements with the operator each was taken through.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub bank: OperatorBank,
    pub entries: Vec<Entry>,
}

impl Dataset {
    pub fn new(bank: OperatorBank, entries: Vec<Entry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if e.g >= bank.len() {
                return Err(Error::Data(format!("entry {i}: operator {} of {}", e.g, bank.len())));
            }
            if e.y.len() != bank.m() {
                return Err(Error::Data(format!("entry {i}: {} bits for m = {}", e.y.len(), bank.m())));
            }
            if let Some(x) = &e.x_true {
                if x.len() != bank.n() {
                    return Err(Error::Data(format!("entry {i}: truth of length {}", x.len())));
                }
                linalg::check_unit(x, 1e-9).map_err(|e| Error::Data(format!("entry {i}: {e}")))?;
            }
        }
        Ok(Self { bank, entries })
    }

    /// Samples `count` signals from `model`, assigns operators round-robin and
    /// shuffles the assignment, then measures each through its operator with
    /// the bank's noise level. Streams: signals `split(seed, 0)`, assignment
    /// `split(seed, 1)`, noise of item `i` `split(split(seed, 2), i)`.
    pub fn generate(
        model: &SignalModel,
        bank: &OperatorBank,
        count: usize,
        seed: u64,
        with_truth: bool,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("dataset size must be positive".into()));
        }
        if model.n() != bank.n() {
            return Err(Error::dim(format!("model dimension {} vs operator width {}", model.n(), bank.n())));
        }
        let signals = model.sample(count, rng::split_seed(seed, 0))?;
        let mut ops: Vec<usize> = (0..count).map(|i| i % bank.len()).collect();
        shuffle(&mut ops, &mut rng::rng(rng::split_seed(seed, 1)));
        let noise = rng::split_seed(seed, 2);
        let entries = (0..count)
            .map(|i| {
                let x = signals.row(i);
                Ok(Entry {
                    y: bank.measure(ops[i], x, rng::split_seed(noise, i as u64))?,
                    g: ops[i],
                    x_true: with_truth.then(|| x.to_vec()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bank.clone(), entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_truth(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.x_true.is_some())
    }

    /// Entry indices grouped by operator.
    pub fn by_operator(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.bank.len()];
        for (i, e) in self.entries.iter().enumerate() {
            out[e.g].push(i);
        }
        out
    }

    /// A batch of entries that all share operator `g`.
    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let first = idx.first().ok_or_else(|| Error::Config("empty batch".into()))?;
        let g = self.entries[*first].g;
        let m = self.bank.m();
        let mut ys = Vec::with_capacity(idx.len() * m);
        let mut truths = Vec::new();
        let mut all_truth = true;
        for &i in idx {
            let e = self.entries.get(i).ok_or(Error::Index { index: i, len: self.len() })?;
            if e.g != g {
                return Err(Error::Config("a batch must use a single operator".into()));
            }
            ys.extend(e.y.to_f64());
            match &e.x_true {
                Some(x) => truths.extend_from_slice(x),
                None => all_truth = false,
            }
        }
        Ok(Batch {
            g,
            ys: Matrix::new(idx.len(), m, ys)?,
            truths: if all_truth {
                Some(Matrix::new(idx.len(), self.bank.n(), truths)?)
            } else {
                None
            },
        })
    }
}

fn shuffle<T>(v: &mut [T], r: &mut Rng) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng::uniform_index(r, i + 1));
    }
}

/// Measurement-consistency loss only.
pub fn mc_only_loss(params: &NetworkParams, batch: &Batch, bank: &OperatorBank, kind: LossKind) -> Result<LossEval> {
    evaluate(params, batch, bank, &Objective::mc_only(kind), true)
}

/// Cross-operator candidates `s ≠ g` and their weight under `sampling`.
fn operator_cross(g: usize, ops: usize, alpha: f64, sampling: CrossSampling, r: &mut Rng) -> (Vec<CrossRef>, f64) {
    if ops < 2 {
        return (Vec::new(), 0.0);
    }
    match sampling {
        CrossSampling::All => ((0..ops).filter(|&s| s != g).map(CrossRef::Operator).collect(), alpha),
        CrossSampling::One => {
            let mut s = rng::uniform_index(r, ops - 1);
            if s >= g {
                s += 1;
            }
            (vec![CrossRef::Operator(s)], alpha * (ops - 1) as f64)
        }
    }
}

fn group_cross(size: usize, alpha: f64, sampling: CrossSampling, r: &mut Rng) -> (Vec<CrossRef>, f64) {
    match sampling {
        CrossSampling::All => ((0..size).map(CrossRef::Group).collect(), alpha),
        CrossSampling::One => (vec![CrossRef::Group(rng::uniform_index(r, size))], alpha * size as f64),
    }
}

/// The objective `cfg.mode` prescribes for `batch`; draws the cross-term
/// operator or group element from `r` when sampling.
pub fn objective_for<'a>(
    cfg: &TrainConfig,
    batch: &Batch,
    bank: &OperatorBank,
    group: Option<&'a ShiftGroup>,
    r: &mut Rng,
) -> Result<Objective<'a>> {
    let alpha = cfg.resolved_alpha(bank.m(), bank.n());
    let base = Objective {
        mc: Some(cfg.loss),
        supervised: false,
        cross: Vec::new(),
        cross_weight: 0.0,
        detach_bootstrap: cfg.detach_bootstrap,
        normalize_output: cfg.normalize_output,
        group,
    };
    Ok(match cfg.mode {
        Mode::MeasurementConsistencyOnly => base,
        Mode::SsbmMultiOp => {
            let (cross, cross_weight) = operator_cross(batch.g, bank.len(), alpha, cfg.cross_sampling, r);
            Objective { cross, cross_weight, ..base }
        }
        Mode::SsbmEquivariant => {
            let group = group.ok_or_else(|| Error::Config("equivariant mode needs a group".into()))?;
            let (cross, cross_weight) = group_cross(group.len(), alpha, cfg.cross_sampling, r);
            Objective { cross, cross_weight, ..base }
        }
        Mode::Supervised => Objective {
            mc: None,
            supervised: true,
            ..base
        },
        Mode::SupervisedPlus => {
            let (cross, cross_weight) = operator_cross(batch.g, bank.len(), alpha, cfg.cross_sampling, r);
            Objective {
                mc: None,
                supervised: true,
                cross,
                cross_weight,
                ..base
            }
        }
    })
}

/// Measurement consistency plus `α Σ_{s≠g} ‖x̂ − f(sign(A_s x̂), A_s)‖²`.
pub fn ssbm_loss(params: &NetworkParams, batch: &Batch, bank: &OperatorBank, cfg: &TrainConfig, r: &mut Rng) -> Result<LossEval> {
    if bank.len() == 1 {
        log::warn!("multi-operator loss with a single operator reduces to measurement consistency");
    }
    let cfg = TrainConfig {
        mode: Mode::SsbmMultiOp,
        ..cfg.clone()
    };
    evaluate(params, batch, bank, &objective_for(&cfg, batch, bank, None, r)?, true)
}

/// Measurement consistency plus `α Σ_h ‖T_h x̂ − f(sign(A T_h x̂), A)‖²`.
pub fn equivariant_loss(
    params: &NetworkParams,
    batch: &Batch,
    bank: &OperatorBank,
    group: &ShiftGroup,
    cfg: &TrainConfig,
    r: &mut Rng,
) -> Result<LossEval> {
    if bank.len() != 1 {
        return Err(Error::Config(format!("equivariant loss expects one operator, got {}", bank.len())));
    }
    if group.len() == 1 {
        log::warn!("equivariant loss with the trivial group is a self-consistency term only");
    }
    let cfg = TrainConfig {
        mode: Mode::SsbmEquivariant,
        ..cfg.clone()
    };
    evaluate(params, batch, bank, &objective_for(&cfg, batch, bank, Some(group), r)?, true)
}

/// Mean of `‖x − f(y, A_g)‖²`.
pub fn supervised_loss(params: &NetworkParams, batch: &Batch, bank: &OperatorBank) -> Result<LossEval> {
    evaluate(params, batch, bank, &Objective::supervised(), true)
}

pub fn supervised_plus_loss(
    params: &NetworkParams,
    batch: &Batch,
    bank: &OperatorBank,
    cfg: &TrainConfig,
    r: &mut Rng,
) -> Result<LossEval> {
    let cfg = TrainConfig {
        mode: Mode::SupervisedPlus,
        ..cfg.clone()
    };
    evaluate(params, batch, bank, &objective_for(&cfg, batch, bank, None, r)?, true)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Mean batch loss per epoch.
    pub history: Vec<f64>,
    pub steps: u64,
}

/// Trains a fresh network. Streams: initialization `split(seed, 0)`, batch
/// order `split(seed, 1)`, cross-term draws `split(seed, 2)`.
pub fn train(cfg: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = dataset.bank.n();
    let params = NetworkParams::mlp(n, cfg.hidden.as_deref(), rng::split_seed(cfg.seed, 0))?;
    train_from(cfg, dataset, params)
}

pub fn train_from(cfg: &TrainConfig, dataset: &Dataset, mut params: NetworkParams) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let bank = &dataset.bank;
    if params.n() != bank.n() {
        return Err(Error::Config("network width does not match the signal dimension".into()));
    }
    if cfg.mode.needs_truth() && !dataset.has_truth() {
        return Err(Error::Config(format!("mode {} needs ground-truth signals in the dataset", cfg.mode.name())));
    }
    let group = cfg.shift_group()?;
    match cfg.mode {
        Mode::SsbmEquivariant => {
            let g = group
                .as_ref()
                .ok_or_else(|| Error::Config("equivariant mode needs a group shape".into()))?;
            if bank.len() != 1 {
                return Err(Error::Config("equivariant mode expects a single operator".into()));
            }
            if g.dim() != bank.n() {
                return Err(Error::Config("group shape does not match the signal dimension".into()));
            }
            if g.len() == 1 {
                log::warn!("equivariant training with the trivial group");
            }
        }
        Mode::SsbmMultiOp if bank.len() == 1 => {
            log::warn!("multi-operator training with G = 1 degenerates to measurement consistency");
        }
        _ => {}
    }

    let mut adam = Adam::new(params.len(), cfg.lr, cfg.beta1, cfg.beta2)?;
    let mut order_rng = rng::rng(rng::split_seed(cfg.seed, 1));
    let mut cross_rng = rng::rng(rng::split_seed(cfg.seed, 2));
    let by_op = dataset.by_operator();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for items in &by_op {
            let mut items = items.clone();
            shuffle(&mut items, &mut order_rng);
            batches.extend(items.chunks(cfg.batch_size).map(<[usize]>::to_vec));
        }
        shuffle(&mut batches, &mut order_rng);
        let mut total = 0.0;
        for idx in &batches {
            let batch = dataset.batch(idx)?;
            let obj = objective_for(cfg, &batch, bank, group.as_ref(), &mut cross_rng)?;
            let eval = evaluate(&params, &batch, bank, &obj, true)?;
            adam.step(params.as_mut_slice(), &eval.grad)?;
            total += eval.value;
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!("parameters diverged in epoch {epoch}")));
        }
        let mean = total / batches.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok(TrainOutcome {
        params,
        history,
        steps: adam.steps(),
    })
}
