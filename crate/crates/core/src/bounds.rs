//! Closed-form sample-complexity, diameter and cell-count bounds.
//!
//! Logarithms inside the measurement bounds are natural logs by default;
//! [`LogBase::Two`] switches them to log₂ for sensitivity checks. Measurement
//! counts are rounded up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS0: f64 = 0.49;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Two => x.log2(),
        }
    }
}

fn default_eps0() -> f64 {
    DEFAULT_EPS0
}

/// Parameters shared by all bound evaluators. `g` is the number of operators,
/// `k` the (possibly fractional) intrinsic dimension, `l` the number of
/// subspaces in a union-of-subspaces model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub n: usize,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "one", alias = "G")]
    pub g: usize,
    pub k: f64,
    pub delta: f64,
    pub xi: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default)]
    pub log_base: LogBase,
}

fn one() -> usize {
    1
}

impl BoundSpec {
    pub fn new(n: usize, m: usize, g: usize, k: f64, delta: f64, xi: f64) -> Result<Self> {
        let spec = Self {
            n,
            m,
            g,
            k,
            delta,
            xi,
            eps0: DEFAULT_EPS0,
            l: None,
            log_base: LogBase::Natural,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_eps0(mut self, eps0: f64) -> Result<Self> {
        self.eps0 = eps0;
        self.validate()?;
        Ok(self)
    }

    pub fn with_l(mut self, l: usize) -> Result<Self> {
        self.l = Some(l);
        self.validate()?;
        Ok(self)
    }

    pub fn with_log_base(mut self, base: LogBase) -> Self {
        self.log_base = base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let range = |msg: String| Err(Error::Range(msg));
        if self.n == 0 || self.m == 0 || self.g == 0 {
            return range(format!("n, m, G must be positive (n = {}, m = {}, G = {})", self.n, self.m, self.g));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return range(format!("k must be positive, got {}", self.k));
        }
        if !(self.delta > 0.0 && self.delta < 2.0) {
            return range(format!("delta must lie in (0, 2), got {}", self.delta));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return range(format!("xi must lie in (0, 1), got {}", self.xi));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 0.5) {
            return range(format!("eps0 must lie in (0, 0.5), got {}", self.eps0));
        }
        if self.l == Some(0) {
            return range("L must be positive".into());
        }
        Ok(())
    }

    fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }
}

/// Measurements sufficient for robust recovery with a single operator:
/// `⌈(4/δ)(2k log(30√n/δ) + log(1/ξ))⌉`, valid for `δ ≤ min(30√n ε₀, 1/2)`.
pub fn required_m_recovery(spec: &BoundSpec) -> Result<usize> {
    spec.validate()?;
    let limit = (30.0 * spec.sqrt_n() * spec.eps0).min(0.5);
    if spec.delta > limit {
        return Err(Error::Range(format!(
            "delta = {} violates delta <= min(30 sqrt(n) eps0, 1/2) = {limit}",
            spec.delta
        )));
    }
    let log = |x| spec.log_base.log(x);
    let value = 4.0 / spec.delta
        * (2.0 * spec.k * log(30.0 * spec.sqrt_n() / spec.delta) + log(1.0 / spec.xi));
    ceil_count(value)
}

/// Measurements per operator sufficient for model identification from `G`
/// operators: `⌈(4/δ)((k + n/G) log(54√n/δ) + (1/G) log(1/ξ))⌉`, valid for
/// `δ ≤ min(18√n ε₀, 1)`.
pub fn required_m_identification(spec: &BoundSpec) -> Result<usize> {
    spec.validate()?;
    let limit = (18.0 * spec.sqrt_n() * spec.eps0).min(1.0);
    if spec.delta > limit {
        return Err(Error::Range(format!(
            "delta = {} violates delta <= min(18 sqrt(n) eps0, 1) = {limit}",
            spec.delta
        )));
    }
    let log = |x| spec.log_base.log(x);
    let g = spec.g as f64;
    let value = 4.0 / spec.delta
        * ((spec.k + spec.n as f64 / g) * log(54.0 * spec.sqrt_n() / spec.delta)
            + log(1.0 / spec.xi) / g);
    ceil_count(value)
}

fn ceil_count(value: f64) -> Result<usize> {
    if !value.is_finite() || value >= usize::MAX as f64 {
        return Err(Error::Range(format!("measurement bound {value} is not representable")));
    }
    Ok(value.ceil().max(0.0) as usize)
}

/// Lower bound `(2/3)·n/(mG)` on the largest cell diameter when `mG < n`.
pub fn diameter_lower_bound(n: usize, m: usize, g: usize) -> f64 {
    2.0 / 3.0 * n as f64 / (m as f64 * g as f64)
}

/// A bound held as its natural log, with the linear value when it fits in
/// an `f64`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub ln: f64,
    pub value: Option<f64>,
}

impl BoundValue {
    fn from_ln(ln: f64) -> Self {
        let value = ln.exp();
        Self {
            ln,
            value: value.is_finite().then_some(value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCountBounds {
    /// `G L (6m/k)^k`; absent when the spec carries no `L`.
    pub uos_bound: Option<BoundValue>,
    /// `(e m √n / k)^k`
    pub expected_bound: BoundValue,
    /// `(1/ξ)^4 (3 m √n / 5k)^{5k}`
    pub proba_bound: BoundValue,
}

fn check_m_at_least_k(spec: &BoundSpec) -> Result<()> {
    if (spec.m as f64) < spec.k {
        return Err(Error::Range(format!("m = {} violates m >= k = {}", spec.m, spec.k)));
    }
    Ok(())
}

/// Cells met by a union of `L` `k`-dimensional subspaces under `G` operators.
pub fn uos_cell_bound(spec: &BoundSpec) -> Result<BoundValue> {
    spec.validate()?;
    check_m_at_least_k(spec)?;
    let l = spec
        .l
        .ok_or_else(|| Error::Config("the union-of-subspaces bound needs L".into()))?;
    let k = spec.k;
    Ok(BoundValue::from_ln(
        (spec.g as f64).ln() + (l as f64).ln() + k * (6.0 * spec.m as f64 / k).ln(),
    ))
}

/// Bound on the expected number of cells met by a set of intrinsic dimension `k`.
pub fn expected_cell_bound(spec: &BoundSpec) -> Result<BoundValue> {
    spec.validate()?;
    check_m_at_least_k(spec)?;
    let ratio = spec.k / (spec.m as f64 * spec.sqrt_n());
    let limit = spec.eps0.min(0.5);
    if ratio >= limit {
        return Err(Error::Range(format!(
            "k/(m sqrt(n)) = {ratio} violates k/(m sqrt(n)) < min(eps0, 1/2) = {limit}"
        )));
    }
    let k = spec.k;
    Ok(BoundValue::from_ln(
        k * (std::f64::consts::E * spec.m as f64 * spec.sqrt_n() / k).ln(),
    ))
}

/// Bound on the number of cells holding with probability at least `1 − ξ`.
pub fn proba_cell_bound(spec: &BoundSpec) -> Result<BoundValue> {
    spec.validate()?;
    check_m_at_least_k(spec)?;
    let ratio = 2.0 * spec.k / (spec.m as f64 * spec.sqrt_n());
    let limit = spec.eps0.min(0.5);
    if ratio > limit {
        return Err(Error::Range(format!(
            "2k/(m sqrt(n)) = {ratio} violates 2k/(m sqrt(n)) <= min(eps0, 1/2) = {limit}"
        )));
    }
    let k = spec.k;
    Ok(BoundValue::from_ln(
        4.0 * (1.0 / spec.xi).ln() + 5.0 * k * (3.0 * spec.m as f64 * spec.sqrt_n() / (5.0 * k)).ln(),
    ))
}

pub fn cell_count_bounds(spec: &BoundSpec) -> Result<CellCountBounds> {
    Ok(CellCountBounds {
        uos_bound: spec.l.map(|_| uos_cell_bound(spec)).transpose()?,
        expected_bound: expected_cell_bound(spec)?,
        proba_bound: proba_cell_bound(spec)?,
    })
}

/// Scaling curve `((k + n/G)/m) log(nm/(k + n/G))` for the identification
/// error, without constants.
pub fn delta_scaling(n: usize, m: usize, g: usize, k: f64) -> Result<f64> {
    delta_scaling_in(n, m, g, k, LogBase::Natural)
}

pub fn delta_scaling_in(n: usize, m: usize, g: usize, k: f64, base: LogBase) -> Result<f64> {
    if n == 0 || m == 0 || g == 0 || !(k >= 1.0) {
        return Err(Error::Range(format!(
            "delta_scaling needs n, m, G, k >= 1 (n = {n}, m = {m}, G = {g}, k = {k})"
        )));
    }
    let eff = k + n as f64 / g as f64;
    let arg = n as f64 * m as f64 / eff;
    if arg <= 1.0 {
        return Err(Error::Range(format!(
            "log argument nm/(k + n/G) = {arg} violates nm > k + n/G"
        )));
    }
    Ok(eff / m as f64 * base.log(arg))
}

/// `ε₀ = (3^s L)^{−1/(k−s)}` for a union of `L` subspaces of dimension `k`
/// whose pairwise intersections have dimension at most `s < k`.
pub fn subspace_union_eps0(s: usize, k: usize, l: usize) -> Result<f64> {
    if s >= k || l == 0 {
        return Err(Error::Range(format!(
            "subspace_union_eps0 needs s < k and L >= 1 (s = {s}, k = {k}, L = {l})"
        )));
    }
    let ln = s as f64 * 3f64.ln() + (l as f64).ln();
    Ok((-ln / (k - s) as f64).exp())
}

/// Every bound for one spec; entries whose preconditions fail carry the
/// error message instead of a value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundsReport {
    pub spec: BoundSpec,
    pub required_m_recovery: std::result::Result<usize, String>,
    pub required_m_identification: std::result::Result<usize, String>,
    pub diameter_lower_bound: f64,
    pub uos_bound: Option<std::result::Result<BoundValue, String>>,
    pub expected_bound: std::result::Result<BoundValue, String>,
    pub proba_bound: std::result::Result<BoundValue, String>,
    pub delta_scaling: std::result::Result<f64, String>,
}

pub fn bounds_report(spec: &BoundSpec) -> Result<BoundsReport> {
    spec.validate()?;
    let msg = |e: Error| e.to_string();
    Ok(BoundsReport {
        spec: spec.clone(),
        required_m_recovery: required_m_recovery(spec).map_err(msg),
        required_m_identification: required_m_identification(spec).map_err(msg),
        diameter_lower_bound: diameter_lower_bound(spec.n, spec.m, spec.g),
        uos_bound: spec.l.map(|_| uos_cell_bound(spec).map_err(msg)),
        expected_bound: expected_cell_bound(spec).map_err(msg),
        proba_bound: proba_cell_bound(spec).map_err(msg),
        delta_scaling: delta_scaling_in(spec.n, spec.m, spec.g, spec.k, spec.log_base).map_err(msg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, m: usize, g: usize, k: f64, delta: f64, xi: f64) -> BoundSpec {
        BoundSpec::new(n, m, g, k, delta, xi).unwrap()
    }

    #[test]
    fn recovery_examples() {
        // 8·(24·ln 1680 + ln 100) = 1462.74…
        let direct = 8.0 * (24.0 * 1680f64.ln() + 100f64.ln());
        let s = spec(784, 1, 1, 12.0, 0.5, 0.01);
        assert_eq!(required_m_recovery(&s).unwrap(), direct.ceil() as usize);
        assert_eq!(required_m_recovery(&s).unwrap(), 1463);

        let squared = BoundSpec { xi: 0.0001, ..s.clone() };
        let extra = required_m_recovery(&squared).unwrap() - required_m_recovery(&s).unwrap();
        let growth = 8.0 * 100f64.ln();
        assert!((extra as f64 - growth).abs() <= 1.0);

        let wide = BoundSpec { delta: 0.6, ..s };
        let err = required_m_recovery(&wide).unwrap_err();
        assert!(matches!(err, Error::Range(ref m) if m.contains("1/2")));
    }

    #[test]
    fn identification_examples() {
        let s = spec(64, 1, 8, 2.0, 0.5, 0.01);
        let direct = 8.0 * (10.0 * 864f64.ln() + 100f64.ln() / 8.0);
        assert_eq!(required_m_identification(&s).unwrap(), direct.ceil() as usize);
        assert_eq!(required_m_identification(&s).unwrap(), 546);

        let huge = BoundSpec { g: 1_000_000_000, ..s.clone() };
        let limit = 8.0 * 2.0 * 864f64.ln();
        assert!((required_m_identification(&huge).unwrap() as f64 - limit).abs() <= 1.0);

        let mut last = usize::MAX;
        for g in 1..64 {
            let v = required_m_identification(&BoundSpec { g, ..s.clone() }).unwrap();
            assert!(v <= last);
            last = v;
        }
        // the integer ceiling can tie, the real-valued bound cannot
        let real = |g: f64| 8.0 * ((2.0 + 64.0 / g) * 864f64.ln() + 100f64.ln() / g);
        assert!(real(3.0) > real(4.0));
        assert!(required_m_identification(&BoundSpec { delta: 1.2, ..s }).is_err());
    }

    #[test]
    fn identification_dominates_recovery_at_one_operator() {
        let mut checked = 0;
        for n in [8, 16, 32, 64, 128] {
            for k in [1.0, 2.0, 4.0, 4.0 * n as f64 / 8.0] {
                for delta in [0.05, 0.2, 0.5, 0.35] {
                    let s = spec(n, 1, 1, k, delta, 0.05);
                    if n as f64 >= 2.0 * k {
                        assert!(required_m_identification(&s).unwrap() >= required_m_recovery(&s).unwrap());
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked >= 60);
        for i in 0..40 {
            let s = spec(4 + i, 1, 1, 1.0 + (i % 3) as f64, 0.1 + 0.01 * i as f64, 0.1);
            assert!(required_m_identification(&s).unwrap() >= required_m_recovery(&s).unwrap());
        }
    }

    #[test]
    fn diameter_bound_examples() {
        assert!((diameter_lower_bound(16, 8, 4) - 1.0 / 3.0).abs() < 1e-15);
        assert!((diameter_lower_bound(24, 6, 4) - 2.0 / 3.0).abs() < 1e-15);
        assert!((diameter_lower_bound(16, 4, 4) - 2.0 * diameter_lower_bound(16, 8, 4)).abs() < 1e-15);
    }

    #[test]
    fn cell_count_examples() {
        let s = spec(8, 32, 1, 1.0, 0.5, 0.01).with_l(1).unwrap();
        let b = cell_count_bounds(&s).unwrap();
        assert!((b.uos_bound.unwrap().value.unwrap() - 192.0).abs() < 1e-9);
        let e = b.expected_bound.value.unwrap();
        assert!((e - std::f64::consts::E * 32.0 * 8f64.sqrt()).abs() < 1e-9);
        assert!((e - 246.0).abs() < 0.5);
        let p = b.proba_bound.value.unwrap();
        let direct = 100f64.powi(4) * (3.0 * 32.0 * 8f64.sqrt() / 5.0).powi(5);
        assert!((p - direct).abs() / direct < 1e-12);

        assert!(matches!(cell_count_bounds(&spec(8, 2, 1, 3.0, 0.5, 0.01)), Err(Error::Range(_))));
        // k/(m√n) too large for the expectation bound
        assert!(expected_cell_bound(&spec(1, 2, 1, 1.0, 0.5, 0.01)).is_err());
    }

    #[test]
    fn log_space_matches_direct() {
        for (n, m, g, k, l) in [(8, 32, 1, 1.0, 1), (64, 100, 4, 3.0, 5), (256, 40, 2, 7.0, 3), (16, 10, 9, 2.0, 2)] {
            let s = spec(n, m, g, k, 0.5, 0.2).with_l(l).unwrap();
            let b = cell_count_bounds(&s).unwrap();
            let rn = (n as f64).sqrt();
            let mf = m as f64;
            let pairs = [
                (b.uos_bound.unwrap(), g as f64 * l as f64 * (6.0 * mf / k).powf(k)),
                (b.expected_bound, (std::f64::consts::E * mf * rn / k).powf(k)),
                (b.proba_bound, 0.2f64.powi(-4) * (3.0 * mf * rn / (5.0 * k)).powf(5.0 * k)),
            ];
            for (bound, direct) in pairs {
                if direct < 1e300 {
                    assert!((bound.value.unwrap() - direct).abs() / direct < 1e-12);
                }
            }
        }
        let big = spec(1 << 20, 1 << 20, 1, 200.0, 0.5, 0.01);
        let p = proba_cell_bound(&big).unwrap();
        assert!(p.value.is_none() && p.ln.is_finite());
    }

    #[test]
    fn delta_scaling_examples() {
        let v = delta_scaling(64, 128, 8, 2.0).unwrap();
        let direct = 10.0 / 128.0 * (8192f64 / 10.0).ln();
        assert_eq!(v, direct);
        assert!((v - 0.5243).abs() < 5e-4);

        let mut last = f64::INFINITY;
        for m in 8..=6400 {
            let v = delta_scaling(64, m, 8, 2.0).unwrap();
            assert!(v < last);
            last = v;
        }
        let inf = delta_scaling(64, 128, usize::MAX, 2.0).unwrap();
        assert!((inf - 2.0 / 128.0 * (64.0 * 128.0 / 2.0f64).ln()).abs() < 1e-12);
        assert!(matches!(delta_scaling(1, 1, 1, 1.0), Err(Error::Range(_))));
    }

    #[test]
    fn log_base_flag() {
        let s = spec(784, 1, 1, 12.0, 0.5, 0.01).with_log_base(LogBase::Two);
        let direct = 8.0 * (24.0 * 1680f64.log2() + 100f64.log2());
        assert_eq!(required_m_recovery(&s).unwrap(), direct.ceil() as usize);
    }

    #[test]
    fn eps0_helper() {
        // (3·2)^{-1/2}
        let v = subspace_union_eps0(1, 3, 2).unwrap();
        assert!((v - 6f64.powf(-0.5)).abs() < 1e-15);
        assert!((subspace_union_eps0(0, 2, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(subspace_union_eps0(2, 2, 1).is_err());
    }

    #[test]
    fn report_keeps_failures_as_messages() {
        let s = spec(784, 32, 1, 12.0, 0.7, 0.01);
        let r = bounds_report(&s).unwrap();
        assert!(r.required_m_recovery.is_err());
        assert!(r.required_m_identification.is_ok());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("required_m_identification"));
    }
}
