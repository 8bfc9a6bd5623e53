//! Asymptotic loss analysis: the ν table, Φ(W), expansion coefficients,
//! normalized α metrics, central moments and the boundary exponent.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::{compose, CirculantSpec, Mechanism};
use crate::simplex::{Distribution, FDivergenceSpec};
use crate::solver::{self, SimplexObjective, SpgOptions};
use crate::tol;

/// Smallest source probability treated as "supported".
const SUPPORT_FLOOR: f64 = 1e-12;

/// The three loss families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[serde(rename = "fdiv")]
    FDiv,
    Mse,
    Tv,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::FDiv, Metric::Mse, Metric::Tv];

    pub fn name(self) -> &'static str {
        match self {
            Metric::FDiv => "fdiv",
            Metric::Mse => "mse",
            Metric::Tv => "tv",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fdiv" | "f-div" | "kl" => Ok(Metric::FDiv),
            "mse" => Ok(Metric::Mse),
            "tv" => Ok(Metric::Tv),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

/// `ν_{ρ,k}` for `ρ = 1..=rho_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuTable {
    values: Vec<Vec<f64>>,
}

impl NuTable {
    /// `ρ` is 1-based; `k` is 0-based.
    pub fn nu(&self, rho: usize, k: usize) -> f64 {
        self.values[rho - 1][k]
    }

    pub fn row(&self, rho: usize) -> &[f64] {
        &self.values[rho - 1]
    }

    pub fn rho_max(&self) -> usize {
        self.values.len()
    }

    pub fn k(&self) -> usize {
        self.values[0].len()
    }
}

fn check_dims(p: &Distribution, w: &Mechanism) -> Result<()> {
    if p.len() == w.k() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: p.len(),
            right: w.k(),
        })
    }
}

/// `ν_{ρ,k} = p W (W^{-1})^{⊙ρ} e_k`.
pub fn nu_table(p: &Distribution, w: &Mechanism, rho_max: usize) -> Result<NuTable> {
    check_dims(p, w)?;
    if !(1..=4).contains(&rho_max) {
        return Err(Error::InvalidArgument(format!(
            "rho_max must be in 1..=4, got {rho_max}"
        )));
    }
    let q = w.left_multiply(p.as_slice());
    let inv = w.inverse();
    let k = w.k();
    let values = (1..=rho_max as i32)
        .map(|rho| {
            (0..k)
                .map(|c| (0..k).map(|l| q[l] * inv[(l, c)].powi(rho)).sum())
                .collect()
        })
        .collect();
    Ok(NuTable { values })
}

/// `Φ(W) = W (W^{-1} ⊙ W^{-1})` and its entry sum `φ(W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiMatrix {
    pub entries: DMatrix<f64>,
    pub phi: f64,
}

impl PhiMatrix {
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

pub fn phi_matrix(w: &Mechanism) -> PhiMatrix {
    let sq = w.inverse().component_mul(w.inverse());
    let entries = w.matrix() * sq;
    let phi = entries.sum();
    PhiMatrix { entries, phi }
}

/// `φ` of a circulant channel from the DFT of its first row.
pub fn phi_circulant_spectral(spec: &CirculantSpec) -> Result<f64> {
    let w = spec.first_row.as_slice();
    let k = w.len();
    let mut acc = 1.0;
    for j in 1..k {
        let (mut re, mut im) = (0.0, 0.0);
        for (m, &wm) in w.iter().enumerate() {
            let angle = -2.0 * PI * ((j * m) % k) as f64 / k as f64;
            re += wm * angle.cos();
            im += wm * angle.sin();
        }
        let mag2 = re * re + im * im;
        // |λ_1| = 1 is the largest modulus, so this is the same relative rank test as
        // Mechanism::from_matrix applies to singular values.
        if mag2 < 1e-30 || mag2.sqrt() <= tol::RANK {
            return Err(Error::SingularMatrix(mag2.sqrt()));
        }
        acc += 1.0 / mag2;
    }
    Ok(acc)
}

/// Which third-order coefficient to use in [`expansion_fdiv`].
///
/// `AsPrinted` carries a `ν₂/ν₃` ratio in its last term. `FirstMomentDenominator`
/// divides by `ν₁` instead, which is what the third central moment of the raw
/// estimator produces; exact enumeration agrees with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BCoefficient {
    AsPrinted,
    FirstMomentDenominator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub first_order: f64,
    pub second_order: f64,
    pub metric: String,
    pub b_coefficient: BCoefficient,
}

impl ExpansionReport {
    /// `n` times the predicted loss at sample size `n`.
    pub fn scaled_loss(&self, n: f64) -> f64 {
        self.first_order + self.second_order / n
    }
}

fn require_full_support(p: &Distribution) -> Result<()> {
    p.require_support(SUPPORT_FLOOR)
}

/// Coefficients of the `1/n` and `1/n²` terms of the expected f-divergence loss.
pub fn expansion_fdiv(
    p: &Distribution,
    w: &Mechanism,
    spec: &FDivergenceSpec,
    b_coefficient: BCoefficient,
) -> Result<ExpansionReport> {
    let [_, d2, d3, d4] = spec.derivatives.ok_or_else(|| {
        Error::UnsupportedSpec(spec.name.to_string(), "generator is not smooth at 1")
    })?;
    if !spec.f0_finite {
        return Err(Error::UnsupportedSpec(
            spec.name.to_string(),
            "f(0) must be finite",
        ));
    }
    if d2.is_nan() || d2 <= 0.0 {
        return Err(Error::UnsupportedSpec(
            spec.name.to_string(),
            "second derivative at 1 must be positive",
        ));
    }
    require_full_support(p)?;
    let nu = nu_table(p, w, 3)?;
    let (mut a, mut b, mut c) = (-1.0, 2.0, 1.0);
    for k in 0..w.k() {
        let (n1, n2, n3) = (nu.nu(1, k), nu.nu(2, k), nu.nu(3, k));
        a += n2 / n1;
        b += n3 / (n1 * n1)
            - 3.0
                * match b_coefficient {
                    BCoefficient::AsPrinted => n2 / n3,
                    BCoefficient::FirstMomentDenominator => n2 / n1,
                };
        c += n2 * n2 / (n1 * n1 * n1) - 2.0 * n2 / n1;
    }
    Ok(ExpansionReport {
        a,
        b,
        c,
        first_order: a * d2 / 2.0,
        second_order: b * d3 / 6.0 + c * d4 / 8.0,
        metric: spec.name.to_string(),
        b_coefficient,
    })
}

fn variances(p: &Distribution, w: &Mechanism) -> Result<Vec<f64>> {
    let nu = nu_table(p, w, 2)?;
    Ok((0..w.k())
        .map(|k| nu.nu(2, k) - nu.nu(1, k).powi(2))
        .collect())
}

/// Coefficient of `1/n` in the expected squared error.
pub fn expansion_mse(p: &Distribution, w: &Mechanism) -> Result<f64> {
    Ok(variances(p, w)?.iter().sum())
}

/// Coefficient of `1/√n` in the expected L1 error.
pub fn expansion_tv(p: &Distribution, w: &Mechanism) -> Result<f64> {
    let mut acc = 0.0;
    for (index, v) in variances(p, w)?.into_iter().enumerate() {
        if v < -tol::IDENTITY {
            return Err(Error::NegativeVariance { index, value: v });
        }
        acc += v.max(0.0).sqrt();
    }
    Ok((2.0 / PI).sqrt() * acc)
}

pub fn alpha_fdiv(p: &Distribution, w: &Mechanism) -> Result<f64> {
    check_dims(p, w)?;
    require_full_support(p)?;
    let phi = phi_matrix(w).entries;
    let k = w.k();
    let mut s = 0.0;
    for r in 0..k {
        for c in 0..k {
            s += p[r] * phi[(r, c)] / p[c];
        }
    }
    Ok((s - 1.0) / (k as f64 - 1.0))
}

pub fn alpha_mse(p: &Distribution, w: &Mechanism) -> Result<f64> {
    check_dims(p, w)?;
    let norm = p.norm_sq();
    let denom = 1.0 - norm;
    if denom <= tol::IDENTITY {
        return Err(Error::DegenerateSource);
    }
    let phi = phi_matrix(w).entries;
    let k = w.k();
    let mut s = 0.0;
    for r in 0..k {
        s += p[r] * phi.row(r).sum();
    }
    Ok((s - norm) / denom)
}

pub fn alpha_tv(p: &Distribution, w: &Mechanism) -> Result<f64> {
    check_dims(p, w)?;
    if 1.0 - p.norm_sq() <= tol::IDENTITY {
        return Err(Error::DegenerateSource);
    }
    let phi = phi_matrix(w).entries;
    let k = w.k();
    let mut num = 0.0;
    let mut den = 0.0;
    for c in 0..k {
        let col: f64 = (0..k).map(|r| p[r] * phi[(r, c)]).sum();
        let v = col - p[c] * p[c];
        if v < -tol::IDENTITY {
            return Err(Error::NegativeVariance { index: c, value: v });
        }
        num += v.max(0.0).sqrt();
        den += (p[c] - p[c] * p[c]).sqrt();
    }
    Ok((num / den).powi(2))
}

pub fn alpha(metric: Metric, p: &Distribution, w: &Mechanism) -> Result<f64> {
    match metric {
        Metric::FDiv => alpha_fdiv(p, w),
        Metric::Mse => alpha_mse(p, w),
        Metric::Tv => alpha_tv(p, w),
    }
}

/// Second to fourth central moments of `n(p̌_k - p_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CentralMoments {
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

pub fn central_moments(
    p: &Distribution,
    w: &Mechanism,
    k: usize,
    n: u64,
) -> Result<CentralMoments> {
    check_dims(p, w)?;
    if k >= w.k() {
        return Err(Error::InvalidArgument(format!(
            "index {k} out of range for K = {}",
            w.k()
        )));
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let nu = nu_table(p, w, 4)?;
    let (n1, n2, n3, n4) = (nu.nu(1, k), nu.nu(2, k), nu.nu(3, k), nu.nu(4, k));
    let n = n as f64;
    Ok(CentralMoments {
        m2: n * (n2 - n1 * n1),
        m3: n * (2.0 * n1.powi(3) - 3.0 * n1 * n2 + n3),
        m4: n
            * ((3.0 * n - 6.0) * n1.powi(4)
                + 3.0 * (n - 1.0) * n2 * n2
                + (12.0 - 6.0 * n) * n1 * n1 * n2
                - 4.0 * n1 * n3
                + n4),
    })
}

/// Smallest entry of `Φ(W W') - Φ(W)`.
pub fn dpi_gap(w: &Mechanism, wp: &Mechanism) -> Result<f64> {
    let ww = compose(w, wp)?;
    let diff = phi_matrix(&ww).entries - phi_matrix(w).entries;
    Ok(diff.min())
}

struct FaceKl<'a> {
    /// Rows of `W` restricted to the face.
    rows: Vec<&'a [f64]>,
    q: &'a [f64],
}

impl FaceKl<'_> {
    fn push(&self, r: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.q.len()];
        for (ri, row) in r.iter().zip(&self.rows) {
            for (sl, w) in s.iter_mut().zip(row.iter()) {
                *sl += ri * w;
            }
        }
        s
    }
}

impl SimplexObjective for FaceKl<'_> {
    fn value(&self, r: &[f64]) -> f64 {
        self.push(r)
            .iter()
            .zip(self.q)
            .map(|(&s, &q)| if s > 0.0 { s * (s / q).ln() } else { 0.0 })
            .sum()
    }

    fn gradient(&self, r: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = self
            .push(r)
            .iter()
            .zip(self.q)
            .map(|(&s, &q)| (s.max(1e-300) / q).ln() + 1.0)
            .collect();
        self.rows
            .iter()
            .map(|row| row.iter().zip(&logs).map(|(w, l)| w * l).sum())
            .collect()
    }
}

/// `min` over simplex faces `{r_i = 0}` of `D(rW || pW)`.
pub fn boundary_exponent(p: &Distribution, w: &Mechanism) -> Result<f64> {
    check_dims(p, w)?;
    require_full_support(p)?;
    let k = w.k();
    let q = w.left_multiply(p.as_slice());
    let rows = w.rows();
    let opts = SpgOptions {
        tol: 1e-10,
        accept: 1e-8,
        max_iter: 10_000,
    };
    let mut best = f64::INFINITY;
    for i in 0..k {
        let face = FaceKl {
            rows: (0..k)
                .filter(|&j| j != i)
                .map(|j| rows[j].as_slice())
                .collect(),
            q: &q,
        };
        let m = k - 1;
        let value = if m == 1 {
            face.value(&[1.0])
        } else {
            solver::minimize(&face, vec![1.0 / m as f64; m], &opts)?.value
        };
        best = best.min(value);
    }
    Ok(best)
}
