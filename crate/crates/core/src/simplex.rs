//! Probability vectors, distances between them, and the push/pull algebra
//! through a channel matrix.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::Mechanism;
use crate::tol;

/// A probability vector on `[K]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates `values` as a probability vector.
    ///
    /// Sums off by more than 1e-9 are rejected; smaller deviations are
    /// renormalized away.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooShort(values.len()));
        }
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry { index, value: v });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > tol::STRUCTURAL {
            return Err(Error::SumNotOne { sum });
        }
        let probs = if sum == 1.0 {
            values
        } else {
            values.into_iter().map(|v| v / sum).collect()
        };
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::TooShort(k));
        }
        Ok(Self {
            probs: vec![1.0 / k as f64; k],
        })
    }

    /// Normalized histogram of `counts`.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        Self::new(counts.iter().map(|&c| c as f64 / n as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(&self) -> f64 {
        self.probs.iter().map(|p| p * p).sum()
    }

    /// Errors unless every entry is at least `floor`.
    pub fn require_support(&self, floor: f64) -> Result<()> {
        match self.probs.iter().position(|&p| p < floor) {
            Some(index) => Err(Error::NotFullySupported {
                index,
                value: self.probs[index],
            }),
            None => Ok(()),
        }
    }

    /// Entries reordered so that output index `i` holds input index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            probs: perm.iter().map(|&j| self.probs[j]).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.probs
    }
}

impl AsRef<[f64]> for Distribution {
    fn as_ref(&self) -> &[f64] {
        &self.probs
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.probs[i]
    }
}

/// A vector whose entries sum to one but may leave `[0, 1]`, such as the
/// pullback `t W^{-1}` of an empirical type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawVector {
    values: Vec<f64>,
}

impl RawVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooShort(values.len()));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > tol::STRUCTURAL {
            return Err(Error::SumNotOne { sum });
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// True when every entry lies in `[-slack, 1 + slack]`.
    pub fn in_simplex(&self, slack: f64) -> bool {
        self.values.iter().all(|&v| v >= -slack && v <= 1.0 + slack)
    }

    /// Converts to a [`Distribution`] if all entries are nonnegative.
    pub fn to_distribution(&self) -> Option<Distribution> {
        if self.values.iter().all(|&v| v >= 0.0) {
            Distribution::new(self.values.clone()).ok()
        } else {
            None
        }
    }
}

impl AsRef<[f64]> for RawVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl From<Distribution> for RawVector {
    fn from(d: Distribution) -> Self {
        Self { values: d.probs }
    }
}

/// A convex generator `f` with `f(1) = 0`, together with its first four
/// derivatives at 1.
#[derive(Clone, Copy)]
pub struct FDivergenceSpec {
    pub name: &'static str,
    pub eval: fn(f64) -> f64,
    /// `f'(1), f''(1), f'''(1), f''''(1)`; `None` when `f` is not smooth at 1.
    pub derivatives: Option<[f64; 4]>,
    pub f0_finite: bool,
}

impl fmt::Debug for FDivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FDivergenceSpec")
            .field("name", &self.name)
            .field("derivatives", &self.derivatives)
            .field("f0_finite", &self.f0_finite)
            .finish()
    }
}

impl PartialEq for FDivergenceSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.derivatives == other.derivatives
            && self.f0_finite == other.f0_finite
    }
}

fn kl_generator(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn hellinger_generator(x: f64) -> f64 {
    let r = x.sqrt() - 1.0;
    r * r
}

fn pearson_generator(x: f64) -> f64 {
    (x - 1.0) * (x - 1.0)
}

fn triangular_generator(x: f64) -> f64 {
    (x - 1.0) * (x - 1.0) / (x + 1.0)
}

fn tv_generator(x: f64) -> f64 {
    (x - 1.0).abs()
}

impl FDivergenceSpec {
    /// `f(x) = x ln x`.
    pub const fn kl() -> Self {
        Self {
            name: "kl",
            eval: kl_generator,
            derivatives: Some([1.0, 1.0, -1.0, 2.0]),
            f0_finite: true,
        }
    }

    /// `f(x) = (sqrt(x) - 1)^2`.
    pub const fn hellinger() -> Self {
        Self {
            name: "hellinger",
            eval: hellinger_generator,
            derivatives: Some([0.0, 0.5, -0.75, 15.0 / 8.0]),
            f0_finite: true,
        }
    }

    /// `f(x) = (x - 1)^2`.
    pub const fn pearson() -> Self {
        Self {
            name: "pearson",
            eval: pearson_generator,
            derivatives: Some([0.0, 2.0, 0.0, 0.0]),
            f0_finite: true,
        }
    }

    /// `f(x) = (x - 1)^2 / (x + 1)`.
    pub const fn triangular() -> Self {
        Self {
            name: "triangular",
            eval: triangular_generator,
            derivatives: Some([0.0, 1.0, -1.5, 3.0]),
            f0_finite: true,
        }
    }

    /// `f(x) = |x - 1|`, matching `tv_distance`; not smooth at 1.
    pub const fn total_variation() -> Self {
        Self {
            name: "tv",
            eval: tv_generator,
            derivatives: None,
            f0_finite: true,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "kl" => Some(Self::kl()),
            "hellinger" => Some(Self::hellinger()),
            "pearson" => Some(Self::pearson()),
            "triangular" => Some(Self::triangular()),
            "tv-f" => Some(Self::total_variation()),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: a, right: b })
    }
}

/// `sum_k p_k f(q_k / p_k)`.
///
/// `q` may contain zeros (they contribute `p_k f(0)`); `p` may not.
pub fn f_divergence(spec: &FDivergenceSpec, p: &Distribution, q: &Distribution) -> Result<f64> {
    check_len(p.len(), q.len())?;
    let mut acc = 0.0;
    for (k, (&pk, &qk)) in p.probs.iter().zip(&q.probs).enumerate() {
        if pk == 0.0 {
            return Err(Error::SupportMismatch { index: k });
        }
        if qk == 0.0 && !spec.f0_finite {
            return Ok(f64::INFINITY);
        }
        acc += pk * spec.eval(qk / pk);
    }
    Ok(acc)
}

/// `||p - q||_1`.
pub fn tv_distance(p: &impl AsRef<[f64]>, q: &impl AsRef<[f64]>) -> Result<f64> {
    let (p, q) = (p.as_ref(), q.as_ref());
    check_len(p.len(), q.len())?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// `||p - q||_2^2`.
pub fn mse_distance(p: &impl AsRef<[f64]>, q: &impl AsRef<[f64]>) -> Result<f64> {
    let (p, q) = (p.as_ref(), q.as_ref());
    check_len(p.len(), q.len())?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Output distribution `q = p W`.
pub fn pushforward(p: &Distribution, w: &Mechanism) -> Result<Distribution> {
    check_len(p.len(), w.k())?;
    let q = w.left_multiply(p.as_slice());
    Distribution::new(q.into_iter().map(|v| v.max(0.0)).collect())
}

/// `q W^{-1}`; sums to one but may leave the simplex.
pub fn pullback(q: &impl AsRef<[f64]>, w: &Mechanism) -> Result<RawVector> {
    let q = q.as_ref();
    check_len(q.len(), w.k())?;
    RawVector::new(w.left_multiply_inverse(q))
}

/// Euclidean projection onto the probability simplex by sort-and-threshold.
pub fn project_simplex_euclidean(v: &impl AsRef<[f64]>) -> Distribution {
    Distribution {
        probs: project_slice(v.as_ref()),
    }
}

pub(crate) fn project_slice(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    let s: f64 = out.iter().sum();
    if s > 0.0 && s != 1.0 {
        out.iter_mut().for_each(|x| *x /= s);
    }
    out
}
