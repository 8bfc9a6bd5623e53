//! Privatization channels: construction, validation, privacy level and
//! composition.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::Distribution;
use crate::tol;

const MAX_RANDOM_ATTEMPTS: usize = 100;

/// A square row-stochastic full-rank channel with its inverse cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    epsilon: f64,
}

impl Mechanism {
    /// Validates `matrix` and caches its inverse and privacy level.
    pub fn from_matrix(mut matrix: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = matrix.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows < 2 {
            return Err(Error::InvalidAlphabet(rows));
        }
        for r in 0..rows {
            let mut sum = 0.0;
            for c in 0..cols {
                let v = matrix[(r, c)];
                if !v.is_finite() {
                    return Err(Error::NotRowStochastic {
                        row: r,
                        reason: format!("entry {c} is not finite"),
                    });
                }
                if v < 0.0 {
                    return Err(Error::NotRowStochastic {
                        row: r,
                        reason: format!("entry {c} is negative ({v})"),
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol::STRUCTURAL {
                return Err(Error::NotRowStochastic {
                    row: r,
                    reason: format!("sums to {sum}"),
                });
            }
            if sum != 1.0 {
                for c in 0..cols {
                    matrix[(r, c)] /= sum;
                }
            }
        }

        let sv = matrix.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let rel = if smax > 0.0 { smin / smax } else { 0.0 };
        if rel.is_nan() || rel <= tol::RANK {
            return Err(Error::SingularMatrix(rel));
        }
        let inverse = matrix
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularMatrix(rel))?;
        let residual = (&matrix * &inverse - DMatrix::<f64>::identity(rows, rows)).amax();
        if residual >= 1e-9 {
            return Err(Error::SingularMatrix(rel));
        }
        let epsilon = column_ratio_epsilon(&matrix);
        Ok(Self {
            matrix,
            inverse,
            epsilon,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::NotSquare {
                rows: k,
                cols: bad.len(),
            });
        }
        Self::from_matrix(DMatrix::from_fn(k, k, |r, c| rows[r][c]))
    }

    pub fn identity(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidAlphabet(k));
        }
        Self::from_matrix(DMatrix::identity(k, k))
    }

    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.matrix[(row, col)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k())
            .map(|r| self.matrix.row(r).iter().copied().collect())
            .collect()
    }

    /// Row vector times `W`.
    pub fn left_multiply(&self, v: &[f64]) -> Vec<f64> {
        row_times(v, &self.matrix)
    }

    /// Row vector times `W^{-1}`.
    pub fn left_multiply_inverse(&self, v: &[f64]) -> Vec<f64> {
        row_times(v, &self.inverse)
    }

    /// True when every entry is exactly 0 or 1.
    pub fn is_permutation(&self) -> bool {
        self.matrix.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// The privacy level of a step mechanism, when `self` is one.
    ///
    /// Detection is exact up to a few ulps; anything else returns `None`.
    pub fn step_epsilon(&self) -> Option<f64> {
        let k = self.k();
        let d = self.matrix[(0, 0)];
        let o = self.matrix[(0, 1)];
        if !(d > o && o > 0.0) {
            return None;
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 8.0 * f64::EPSILON * b.abs().max(1e-300);
        for r in 0..k {
            for c in 0..k {
                let want = if r == c { d } else { o };
                if !close(self.matrix[(r, c)], want) {
                    return None;
                }
            }
        }
        Some((d / o).ln())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MechanismJson::from(self)).expect("mechanism serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: MechanismJson =
            serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::try_from(raw)
    }
}

fn row_times(v: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    let k = m.ncols();
    let mut out = vec![0.0; k];
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o += vr * m[(r, c)];
        }
    }
    out
}

fn column_ratio_epsilon(m: &DMatrix<f64>) -> f64 {
    let mut worst = 1.0f64;
    for col in m.column_iter() {
        let hi = col.max();
        let lo = col.min();
        if hi == 0.0 {
            continue;
        }
        if lo == 0.0 {
            return f64::INFINITY;
        }
        worst = worst.max(hi / lo);
    }
    worst.ln()
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum EpsilonJson {
    Finite(f64),
    Tagged(String),
}

#[derive(Serialize, Deserialize)]
struct MechanismJson {
    k: usize,
    matrix: Vec<Vec<f64>>,
    epsilon: EpsilonJson,
}

impl From<&Mechanism> for MechanismJson {
    fn from(w: &Mechanism) -> Self {
        Self {
            k: w.k(),
            matrix: w.rows(),
            epsilon: if w.epsilon.is_finite() {
                EpsilonJson::Finite(w.epsilon)
            } else {
                EpsilonJson::Tagged("inf".into())
            },
        }
    }
}

impl TryFrom<MechanismJson> for Mechanism {
    type Error = Error;

    fn try_from(raw: MechanismJson) -> Result<Self> {
        if raw.matrix.len() != raw.k {
            return Err(Error::Serialization(format!(
                "k = {} but matrix has {} rows",
                raw.k,
                raw.matrix.len()
            )));
        }
        let w = Mechanism::from_rows(&raw.matrix)?;
        let stored = match raw.epsilon {
            EpsilonJson::Finite(e) => e,
            EpsilonJson::Tagged(s) if s == "inf" => f64::INFINITY,
            EpsilonJson::Tagged(s) => {
                return Err(Error::Serialization(format!("bad epsilon `{s}`")))
            }
        };
        let consistent = if stored.is_infinite() || w.epsilon.is_infinite() {
            stored == w.epsilon
        } else {
            (stored - w.epsilon).abs() <= 1e-9 * w.epsilon.max(1.0)
        };
        if !consistent {
            return Err(Error::Serialization(format!(
                "stored epsilon {stored} disagrees with computed {}",
                w.epsilon
            )));
        }
        Ok(w)
    }
}

impl Serialize for Mechanism {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MechanismJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mechanism {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MechanismJson::deserialize(d)?;
        Mechanism::try_from(raw).map_err(serde::de::Error::custom)
    }
}

/// Generating row of a circulant channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirculantSpec {
    pub first_row: Distribution,
}

impl CirculantSpec {
    pub fn new(first_row: Distribution) -> Self {
        Self { first_row }
    }

    pub fn k(&self) -> usize {
        self.first_row.len()
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(eps))
    }
}

/// `e^eps` on the diagonal, 1 elsewhere, rows normalized.
pub fn step_mechanism(k: usize, eps: f64) -> Result<Mechanism> {
    if k < 2 {
        return Err(Error::InvalidAlphabet(k));
    }
    check_epsilon(eps)?;
    let e = eps.exp();
    let z = e + (k - 1) as f64;
    let (d, o) = (e / z, 1.0 / z);
    let matrix = DMatrix::from_fn(k, k, |r, c| if r == c { d } else { o });
    let mut w = Mechanism::from_matrix(matrix)?;
    // The computed ratio d/o carries rounding; the construction is exact.
    w.epsilon = eps;
    Ok(w)
}

/// Row `r`, column `c` holds `w[(c - r) mod K]`.
pub fn circulant_mechanism(spec: &CirculantSpec) -> Result<Mechanism> {
    let w = spec.first_row.as_slice();
    let k = w.len();
    Mechanism::from_matrix(DMatrix::from_fn(k, k, |r, c| w[(c + k - r) % k]))
}

pub fn epsilon_of(w: &Mechanism) -> f64 {
    w.epsilon
}

pub fn is_eps_private(w: &Mechanism, eps: f64) -> bool {
    w.epsilon <= eps + tol::IDENTITY
}

/// Matrix product `W W'`.
pub fn compose(w: &Mechanism, wp: &Mechanism) -> Result<Mechanism> {
    if w.k() != wp.k() {
        return Err(Error::LengthMismatch {
            left: w.k(),
            right: wp.k(),
        });
    }
    Mechanism::from_matrix(&w.matrix * &wp.matrix)
}

/// Row `i` has its single 1 in column `perm[i]` (0-based).
pub fn permutation_mechanism(perm: &[usize]) -> Result<Mechanism> {
    let k = perm.len();
    let mut seen = vec![false; k];
    for &j in perm {
        if j >= k || seen[j] {
            return Err(Error::NotAPermutation(k));
        }
        seen[j] = true;
    }
    if k < 2 {
        return Err(Error::InvalidAlphabet(k));
    }
    Mechanism::from_matrix(DMatrix::from_fn(
        k,
        k,
        |r, c| {
            if perm[r] == c {
                1.0
            } else {
                0.0
            }
        },
    ))
}

/// A seeded draw from the interior of the `eps`-private polytope.
///
/// Rows of `V` are uniform on the simplex; the result is `(1 - θ)U + θV`
/// with `U` the all-`1/K` matrix and `θ` as large as the column ratio
/// constraints allow.
pub fn random_eps_private(k: usize, eps: f64, seed: u64) -> Result<Mechanism> {
    if k < 2 {
        return Err(Error::InvalidAlphabet(k));
    }
    check_epsilon(eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = eps.exp();
    let u = 1.0 / k as f64;
    for _ in 0..MAX_RANDOM_ATTEMPTS {
        let v = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(Exp1));
        let v = normalize_rows(v);
        let mut theta = 1.0f64;
        // Pairwise constraint (1-θ)u + θ v_i <= e ((1-θ)u + θ v_j) is linear in θ.
        for col in v.column_iter() {
            let hi = col.max();
            let lo = col.min();
            let slope = (hi - u) - e * (lo - u);
            if slope > 0.0 {
                theta = theta.min((e - 1.0) * u / slope);
            }
        }
        theta *= 1.0 - 1e-9;
        let m = DMatrix::from_fn(k, k, |r, c| (1.0 - theta) * u + theta * v[(r, c)]);
        if !entrywise_private(&m, e) {
            continue;
        }
        match Mechanism::from_matrix(m) {
            Ok(w) => return Ok(w),
            Err(Error::SingularMatrix(_)) => continue,
            Err(other) => return Err(other),
        }
    }
    Err(Error::RetriesExhausted(MAX_RANDOM_ATTEMPTS))
}

fn normalize_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

/// Checks `W[k][l] <= e W[k'][l]` for every pair directly.
pub(crate) fn entrywise_private(m: &DMatrix<f64>, e: f64) -> bool {
    m.column_iter()
        .all(|col| col.iter().all(|&a| col.iter().all(|&b| a <= e * b)))
}
