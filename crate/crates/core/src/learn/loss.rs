//! Per-entry measurement-consistency losses between binary targets `y` and
//! real predictions `ŷ = A x̂`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::BinaryVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `log(1 + exp(−y ŷ))`
    Logistic,
    /// `|y − ŷ|^p`
    Lp(u32),
    /// `max(−y ŷ, 0)^p`
    OneSidedLp(u32),
}

impl LossKind {
    pub fn validate(self) -> Result<()> {
        match self {
            LossKind::Logistic => Ok(()),
            LossKind::Lp(p) | LossKind::OneSidedLp(p) if p == 1 || p == 2 => Ok(()),
            other => Err(Error::Config(format!("unsupported loss {other:?}; p must be 1 or 2"))),
        }
    }

    pub fn name(self) -> String {
        match self {
            LossKind::Logistic => "logistic".into(),
            LossKind::Lp(p) => format!("l{p}"),
            LossKind::OneSidedLp(p) => format!("one_sided_l{p}"),
        }
    }

    pub(crate) fn entry(self, y: f64, p: f64) -> f64 {
        match self {
            LossKind::Logistic => softplus(-y * p),
            LossKind::Lp(1) => (y - p).abs(),
            LossKind::Lp(_) => (y - p) * (y - p),
            LossKind::OneSidedLp(q) => {
                let v = (-y * p).max(0.0);
                if q == 1 {
                    v
                } else {
                    v * v
                }
            }
        }
    }

    /// Derivative of [`Self::entry`] in `ŷ`. Kinks take the zero subgradient.
    pub(crate) fn entry_grad(self, y: f64, p: f64) -> f64 {
        match self {
            LossKind::Logistic => -y * sigmoid(-y * p),
            LossKind::Lp(1) => {
                let d = p - y;
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Lp(_) => 2.0 * (p - y),
            LossKind::OneSidedLp(q) => {
                let v = -y * p;
                if v <= 0.0 {
                    0.0
                } else if q == 1 {
                    -y
                } else {
                    -2.0 * v * y
                }
            }
        }
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean over entries of the loss, with its gradient in `ŷ`.
pub fn mc_loss(kind: LossKind, y: &BinaryVector, yhat: &[f64]) -> Result<(f64, Vec<f64>)> {
    kind.validate()?;
    if y.len() != yhat.len() {
        return Err(Error::dim(format!("mc_loss: {} bits, {} predictions", y.len(), yhat.len())));
    }
    if let Some(i) = yhat.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!("NaN prediction at position {i}")));
    }
    let len = yhat.len() as f64;
    let mut total = 0.0;
    let grad = y
        .to_f64()
        .iter()
        .zip(yhat)
        .map(|(&t, &p)| {
            total += kind.entry(t, p);
            kind.entry_grad(t, p) / len
        })
        .collect();
    Ok((total / len, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(v: &[i8]) -> BinaryVector {
        BinaryVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn loss_values() {
        let (v, _) = mc_loss(LossKind::Logistic, &bits(&[1]), &[0.0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let (v, _) = mc_loss(LossKind::Logistic, &bits(&[-1]), &[-3.0]).unwrap();
        assert!((v - (1.0 + (-3f64).exp()).ln()).abs() < 1e-15);
        assert!((v - 0.048587).abs() < 1e-6);
        let (v, _) = mc_loss(LossKind::OneSidedLp(2), &bits(&[1, -1, 1]), &[0.3, -2.0, 5.0]).unwrap();
        assert_eq!(v, 0.0);
        let (v, _) = mc_loss(LossKind::Lp(1), &bits(&[1, -1]), &[0.5, 1.0]).unwrap();
        assert!((v - 1.25).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_differences() {
        let y = bits(&[1, -1, 1, -1]);
        let p = [0.3, 0.7, -1.2, -0.4];
        for kind in [LossKind::Logistic, LossKind::Lp(1), LossKind::Lp(2), LossKind::OneSidedLp(1), LossKind::OneSidedLp(2)] {
            let (_, g) = mc_loss(kind, &y, &p).unwrap();
            for i in 0..4 {
                let mut hi = p;
                let mut lo = p;
                hi[i] += 1e-6;
                lo[i] -= 1e-6;
                let fd = (mc_loss(kind, &y, &hi).unwrap().0 - mc_loss(kind, &y, &lo).unwrap().0) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-8, "{kind:?} entry {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn logistic_vanishes_with_margin() {
        let y = bits(&[1]);
        let mut last = f64::INFINITY;
        for margin in [1.0, 10.0, 100.0, 1000.0] {
            let (v, _) = mc_loss(LossKind::Logistic, &y, &[margin]).unwrap();
            assert!(v < last && v >= 0.0);
            last = v;
        }
        assert!(last < 1e-300);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(mc_loss(LossKind::Logistic, &bits(&[1]), &[f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(mc_loss(LossKind::Lp(3), &bits(&[1]), &[0.0]), Err(Error::Config(_))));
        assert!(mc_loss(LossKind::Logistic, &bits(&[1, 1]), &[0.0]).is_err());
    }
}
