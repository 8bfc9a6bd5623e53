//! Estimating the source distribution from privatized samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::Mechanism;
use crate::simplex::{pullback, Distribution, RawVector};
use crate::solver::{self, SimplexObjective, SpgOptions};
use nalgebra::{DMatrix, DVector};

/// Histogram of `n` observed symbols.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalType {
    counts: Vec<u64>,
    n: u64,
}

impl EmpiricalType {
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidAlphabet(counts.len()));
        }
        let n = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        Ok(Self { counts, n })
    }

    /// `samples` are 1-based symbols in `1..=k`.
    pub fn from_samples(samples: &[i64], k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidAlphabet(k));
        }
        if samples.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut counts = vec![0u64; k];
        for (position, &value) in samples.iter().enumerate() {
            if value < 1 || value > k as i64 {
                return Err(Error::OutOfAlphabet { position, value, k });
            }
            counts[(value - 1) as usize] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// `counts / n`.
    pub fn type_vector(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn to_distribution(&self) -> Distribution {
        Distribution::from_counts(&self.counts).expect("nonempty type")
    }
}

pub fn empirical_type(samples: &[i64], k: usize) -> Result<EmpiricalType> {
    EmpiricalType::from_samples(samples, k)
}

fn check_dims(t: &EmpiricalType, w: &Mechanism) -> Result<()> {
    if t.k() == w.k() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: t.k(),
            right: w.k(),
        })
    }
}

/// `t W^{-1}`.
pub fn raw_estimate(t: &EmpiricalType, w: &Mechanism) -> Result<RawVector> {
    check_dims(t, w)?;
    pullback(&t.type_vector(), w)
}

fn feasible_raw(t: &EmpiricalType, w: &Mechanism) -> Result<(RawVector, Option<Distribution>)> {
    let raw = raw_estimate(t, w)?;
    let d = raw.to_distribution();
    Ok((raw, d))
}

struct Likelihood<'a> {
    t: &'a [f64],
    w: &'a Mechanism,
}

impl SimplexObjective for Likelihood<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.w
            .left_multiply(x)
            .iter()
            .zip(self.t)
            .filter(|(_, &t)| t > 0.0)
            .map(|(&s, &t)| t * (t / s.max(1e-300)).ln())
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.w.left_multiply(x);
        let ratio: Vec<f64> = s
            .iter()
            .zip(self.t)
            .map(|(&s, &t)| if t > 0.0 { t / s.max(1e-300) } else { 0.0 })
            .collect();
        let m = self.w.matrix();
        (0..self.w.k())
            .map(|r| -(0..self.w.k()).map(|c| m[(r, c)] * ratio[c]).sum::<f64>())
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let s = self.w.left_multiply(x);
        let m = self.w.matrix();
        let weight = DVector::from_iterator(
            s.len(),
            s.iter().zip(self.t).map(|(&s, &t)| {
                if t > 0.0 {
                    t / (s * s).max(1e-300)
                } else {
                    0.0
                }
            }),
        );
        Some(m * DMatrix::from_diagonal(&weight) * m.transpose())
    }
}

struct SquaredError<'a> {
    t: &'a [f64],
    w: &'a Mechanism,
}

impl SimplexObjective for SquaredError<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.w
            .left_multiply(x)
            .iter()
            .zip(self.t)
            .map(|(s, t)| (s - t) * (s - t))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self
            .w
            .left_multiply(x)
            .iter()
            .zip(self.t)
            .map(|(s, t)| 2.0 * (s - t))
            .collect();
        let m = self.w.matrix();
        (0..self.w.k())
            .map(|i| (0..self.w.k()).map(|c| m[(i, c)] * r[c]).sum())
            .collect()
    }

    fn curvature(&self, d: &[f64]) -> Option<f64> {
        Some(2.0 * self.w.left_multiply(d).iter().map(|v| v * v).sum::<f64>())
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        let m = self.w.matrix();
        Some(m * m.transpose() * 2.0)
    }
}

fn solve<O: SimplexObjective>(obj: &O, k: usize) -> Result<Distribution> {
    let out = solver::minimize(obj, vec![1.0 / k as f64; k], &SpgOptions::default())?;
    Distribution::new(out.x)
}

/// Maximum-likelihood estimate: minimizes `D(t || p'W)` over the simplex.
pub fn ml_estimate(t: &EmpiricalType, w: &Mechanism) -> Result<Distribution> {
    let (_, feasible) = feasible_raw(t, w)?;
    if let Some(d) = feasible {
        return Ok(d);
    }
    let tv = t.type_vector();
    solve(&Likelihood { t: &tv, w }, w.k())
}

/// Minimizes `||t - p'W||²` over the simplex.
pub fn mmse_estimate(t: &EmpiricalType, w: &Mechanism) -> Result<Distribution> {
    let (_, feasible) = feasible_raw(t, w)?;
    if let Some(d) = feasible {
        return Ok(d);
    }
    let tv = t.type_vector();
    solve(&SquaredError { t: &tv, w }, w.k())
}

fn sorted_desc(t: &[f64]) -> Vec<f64> {
    let mut s = t.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn check_type_vector(t: &[f64], eps: f64) -> Result<()> {
    if t.len() < 2 {
        return Err(Error::InvalidAlphabet(t.len()));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidEpsilon(eps));
    }
    Distribution::new(t.to_vec()).map(|_| ())
}

/// Picks the largest support size `m` whose multiplier keeps exactly the
/// top `m` coordinates positive. `eta(m, top_sum)` gives the multiplier,
/// `level(eta, t)` the unnormalized coordinate value.
fn waterfill(
    t: &[f64],
    c: f64,
    eta: impl Fn(usize, f64) -> f64,
    level: impl Fn(f64, f64) -> f64,
) -> Result<(Distribution, f64)> {
    let sorted = sorted_desc(t);
    let k = t.len();
    let mut chosen = None;
    let mut fallback = None;
    let mut top = 0.0;
    for m in 1..=k {
        top += sorted[m - 1];
        let e = eta(m, top);
        if level(e, sorted[m - 1]) >= 0.0 {
            fallback = Some(e);
            if m == k || level(e, sorted[m]) <= 0.0 {
                chosen = Some(e);
            }
        }
    }
    let e = chosen
        .or(fallback)
        .ok_or_else(|| Error::ConvergenceFailure("no waterfilling support is consistent".into()))?;
    let p: Vec<f64> = t.iter().map(|&x| level(e, x).max(0.0) / c).collect();
    let s: f64 = p.iter().sum();
    Ok((Distribution::new(p.iter().map(|v| v / s).collect())?, e))
}

/// Maximum-likelihood closed form for the step mechanism:
/// `p_k = max(0, η t_k - 1) / (e^ε - 1)`.
pub fn waterfill_ml(t: &[f64], eps: f64) -> Result<(Distribution, f64)> {
    check_type_vector(t, eps)?;
    let c = eps.exp_m1();
    waterfill(t, c, |m, top| (c + m as f64) / top, |e, x| e * x - 1.0)
}

/// Least-squares closed form for the step mechanism:
/// `p_k = max(0, (e^ε + K - 1) t_k + η) / (e^ε - 1)`.
pub fn waterfill_mmse(t: &[f64], eps: f64) -> Result<(Distribution, f64)> {
    check_type_vector(t, eps)?;
    let c = eps.exp_m1();
    let z = eps.exp() + (t.len() - 1) as f64;
    waterfill(t, c, |m, top| (c - z * top) / m as f64, |e, x| z * x + e)
}

fn check_step_dims(t: &EmpiricalType, k: usize) -> Result<()> {
    if t.k() == k {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: t.k(),
            right: k,
        })
    }
}

pub fn ml_estimate_step(t: &EmpiricalType, k: usize, eps: f64) -> Result<Distribution> {
    check_step_dims(t, k)?;
    Ok(waterfill_ml(&t.type_vector(), eps)?.0)
}

pub fn mmse_estimate_step(t: &EmpiricalType, k: usize, eps: f64) -> Result<Distribution> {
    check_step_dims(t, k)?;
    Ok(waterfill_mmse(&t.type_vector(), eps)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "ml")]
    Ml,
    #[serde(rename = "mmse")]
    Mmse,
    /// Raw estimate with negative entries zeroed, then renormalized.
    #[serde(rename = "raw-clipped")]
    RawClipped,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ml => "ml",
            Estimator::Mmse => "mmse",
            Estimator::RawClipped => "raw-clipped",
        }
    }

    /// Uses the closed forms when `w` is a step mechanism.
    pub fn apply(self, t: &EmpiricalType, w: &Mechanism) -> Result<Distribution> {
        match self {
            Estimator::RawClipped => {
                let raw = raw_estimate(t, w)?;
                let v: Vec<f64> = raw.as_slice().iter().map(|&x| x.max(0.0)).collect();
                let s: f64 = v.iter().sum();
                Distribution::new(v.into_iter().map(|x| x / s).collect())
            }
            Estimator::Ml | Estimator::Mmse => {
                let (_, feasible) = feasible_raw(t, w)?;
                if let Some(d) = feasible {
                    return Ok(d);
                }
                match (self, w.step_epsilon()) {
                    (Estimator::Ml, Some(eps)) => ml_estimate_step(t, w.k(), eps),
                    (Estimator::Mmse, Some(eps)) => mmse_estimate_step(t, w.k(), eps),
                    (Estimator::Ml, None) => ml_estimate(t, w),
                    _ => mmse_estimate(t, w),
                }
            }
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml" => Ok(Estimator::Ml),
            "mmse" => Ok(Estimator::Mmse),
            "raw-clipped" | "raw" => Ok(Estimator::RawClipped),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator `{other}`"
            ))),
        }
    }
}
