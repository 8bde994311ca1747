//! Learned reconstruction from binary measurements: network, losses,
//! reverse-mode gradients, Adam and the training loops.

mod adam;
mod loss;
mod network;
mod objective;
mod tape;
mod train;

pub use adam::{Adam, ADAM_EPS};
pub use loss::{mc_loss, LossKind};
pub use network::{NetworkParams, LEAKY_SLOPE};
pub use objective::{evaluate, Batch, CrossRef, LossEval, Objective};
pub use train::{
    equivariant_loss, mc_only_loss, objective_for, ssbm_loss, supervised_loss, supervised_plus_loss, train,
    train_from, CrossSampling, Dataset, Entry, GroupShape, Mode, TrainConfig, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::sensing::BinaryVector;

/// `Aᵀy`, the back-projection.
pub fn linear_inverse(y: &BinaryVector, a: &Matrix) -> Result<Vec<f64>> {
    a.matvec_t(&y.to_f64())
}

/// Minimum-norm solution of `A v = y`: `Aᵀ(AAᵀ)⁻¹y` when `m ≤ n`, the
/// least-squares solution `(AᵀA)⁻¹Aᵀy` when `m > n`.
pub fn pseudo_inverse_reconstruct(y: &BinaryVector, a: &Matrix) -> Result<Vec<f64>> {
    if y.len() != a.rows() {
        return Err(Error::dim(format!("{} bits for an operator with {} rows", y.len(), a.rows())));
    }
    let yf = y.to_f64();
    if a.rows() <= a.cols() {
        let gram = a.matmul_t(a)?;
        let z = linalg::cholesky_solve(&gram, &yf)?;
        a.matvec_t(&z)
    } else {
        let gram = a.transpose().matmul_t(&a.transpose())?;
        linalg::cholesky_solve(&gram, &a.matvec_t(&yf)?)
    }
}
