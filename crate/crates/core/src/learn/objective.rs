//! Training objectives assembled on the tape.
//!
//! A batch holds measurements taken through a single operator `g`. The
//! per-sample loss is
//!
//! ```text
//! mc(y, A_g x̂)  +  ‖x − x̂‖² (supervised)  +  w Σ_c ‖t_c(x̂) − f(sign(B_c t_c(x̂)), B_c)‖²
//! ```
//!
//! where each cross term `c` either re-measures `x̂` with another operator
//! (`t_c = id`, `B_c = A_s`) or transforms it by a group element
//! (`t_c = T_h`, `B_c = A`). The sign is piecewise constant, so no gradient
//! flows through it. Batch loss is the mean over samples.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sensing::OperatorBank;
use crate::signal::ShiftGroup;

use super::loss::LossKind;
use super::network::NetworkParams;
use super::tape::{Tape, Var};

/// Measurements of several signals through one operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub g: usize,
    /// `B × m`, entries ±1.
    pub ys: Matrix,
    /// `B × n` ground truth, when available.
    pub truths: Option<Matrix>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.rows() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossRef {
    /// Re-measure with operator `s`.
    Operator(usize),
    /// Transform by group element `h`, re-measure with the single operator.
    Group(usize),
}

#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub mc: Option<LossKind>,
    pub supervised: bool,
    pub cross: Vec<CrossRef>,
    /// Weight applied to each cross term.
    pub cross_weight: f64,
    /// Treat `x̂` as a constant target inside the cross terms.
    pub detach_bootstrap: bool,
    /// Normalize network outputs to unit norm inside the loss.
    pub normalize_output: bool,
    pub group: Option<&'a ShiftGroup>,
}

impl Objective<'_> {
    pub fn mc_only(kind: LossKind) -> Self {
        Self {
            mc: Some(kind),
            supervised: false,
            cross: Vec::new(),
            cross_weight: 0.0,
            detach_bootstrap: false,
            normalize_output: false,
            group: None,
        }
    }

    pub fn supervised() -> Self {
        Self {
            mc: None,
            supervised: true,
            ..Self::mc_only(LossKind::Logistic)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// Gradient in the flat parameter layout; empty when not requested.
    pub grad: Vec<f64>,
    /// Hash of every piecewise branch taken (activation signs, re-measured
    /// signs, one-sided loss sides). Equal patterns at two parameter values
    /// mean the loss is smooth between them, which finite-difference checks
    /// rely on.
    pub pattern: u64,
}

pub fn evaluate(
    params: &NetworkParams,
    batch: &Batch,
    bank: &OperatorBank,
    obj: &Objective<'_>,
    want_grad: bool,
) -> Result<LossEval> {
    let a_g = bank.op(batch.g)?;
    if batch.ys.cols() != bank.m() || batch.is_empty() {
        return Err(Error::dim(format!(
            "batch of {} rows with {} measurements for m = {}",
            batch.ys.rows(),
            batch.ys.cols(),
            bank.m()
        )));
    }
    if params.n() != bank.n() {
        return Err(Error::dim(format!("network dimension {} vs signal dimension {}", params.n(), bank.n())));
    }
    let mut hasher = DefaultHasher::new();
    let mut tape = Tape::new();
    let layers = params.register(&mut tape);

    let reconstruct = |tape: &mut Tape, input: Matrix| -> Var {
        let x = tape.constant(input);
        let out = params.record(tape, &layers, x);
        if obj.normalize_output {
            tape.normalize_rows(out)
        } else {
            out
        }
    };

    let xhat = reconstruct(&mut tape, NetworkParams::input_batch(&batch.ys, a_g)?);
    let mut terms: Vec<(Var, f64)> = Vec::new();

    if let Some(kind) = obj.mc {
        kind.validate()?;
        let a = tape.constant(a_g.clone());
        let yhat = tape.matmul_t(xhat, a);
        for (y, p) in batch.ys.as_slice().iter().zip(tape.value(yhat).as_slice()) {
            (y * p > 0.0).hash(&mut hasher);
        }
        let mc = tape.mc_loss(yhat, batch.ys.clone(), kind);
        terms.push((mc, 1.0));
    }

    if obj.supervised {
        let truths = batch
            .truths
            .as_ref()
            .ok_or_else(|| Error::Data("supervised loss needs ground-truth signals".into()))?;
        if truths.shape() != (batch.len(), bank.n()) {
            return Err(Error::dim("ground truth shape does not match the batch"));
        }
        let t = tape.constant(truths.clone());
        let diff = tape.sub(t, xhat);
        let sq = tape.row_squared_norm_mean(diff);
        terms.push((sq, 1.0));
    }

    if obj.cross_weight != 0.0 {
        let target = if obj.detach_bootstrap { tape.detach(xhat) } else { xhat };
        for &c in &obj.cross {
            let (moved, b) = match c {
                CrossRef::Operator(s) => (target, bank.op(s)?),
                CrossRef::Group(h) => {
                    let group = obj
                        .group
                        .ok_or_else(|| Error::Config("group cross term without a group".into()))?;
                    if group.dim() != bank.n() {
                        return Err(Error::dim("group dimension does not match the signals"));
                    }
                    (tape.permute_cols(target, group.permutation(h)?), a_g)
                }
            };
            let remeasured = tape.value(moved).matmul_t(b)?;
            let signs: Vec<f64> = remeasured
                .as_slice()
                .iter()
                .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
                .collect();
            signs.iter().map(|s| *s > 0.0).collect::<Vec<_>>().hash(&mut hasher);
            let signs = Matrix::new(remeasured.rows(), remeasured.cols(), signs)?;
            let fs = reconstruct(&mut tape, NetworkParams::input_batch(&signs, b)?);
            let diff = tape.sub(moved, fs);
            let sq = tape.row_squared_norm_mean(diff);
            terms.push((sq, obj.cross_weight));
        }
    }

    if terms.is_empty() {
        return Err(Error::Config("objective has no terms".into()));
    }
    let total = tape.combine(terms);
    let value = tape.scalar(total);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss evaluated to {value}")));
    }
    tape.hash_activations(&mut hasher);
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; params.len()];
        tape.backward(total, &mut grad);
    }
    Ok(LossEval {
        value,
        grad,
        pattern: hasher.finish(),
    })
}
