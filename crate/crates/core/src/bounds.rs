//! Closed-form bounds on the privacy-fidelity trade-off.

use serde::Serialize;

use crate::analysis::{alpha, Metric};
use crate::error::{Error, Result};
use crate::mechanisms::step_mechanism;
use crate::simplex::Distribution;

fn check(k: usize, eps: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidAlphabet(k));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidEpsilon(eps));
    }
    Ok(())
}

/// `φ` of the step mechanism. Tends to `K` as `eps → ∞`.
pub fn phi_star(k: usize, eps: f64) -> Result<f64> {
    check(k, eps)?;
    if eps.is_infinite() {
        return Ok(k as f64);
    }
    let (diag, off) = phi_star_entries(k, eps)?;
    Ok(k as f64 * (diag + (k as f64 - 1.0) * off))
}

/// Diagonal and off-diagonal entries of `Φ` for the step mechanism.
pub fn phi_star_entries(k: usize, eps: f64) -> Result<(f64, f64)> {
    check(k, eps)?;
    let kf = k as f64;
    let e = eps.exp();
    let em1 = eps.exp_m1();
    let den = em1 * em1;
    Ok(((e * (e + kf - 2.0) + 1.0 - e) / den, (e + kf - 2.0) / den))
}

pub fn alpha_upper_uniform(k: usize, eps: f64) -> Result<f64> {
    Ok((phi_star(k, eps)? - 1.0) / (k as f64 - 1.0))
}

/// Lower bound on `φ(W)` over all `eps`-private channels.
pub fn phi_lower_bound(k: usize, eps: f64) -> Result<f64> {
    check(k, eps)?;
    let kf = k as f64;
    if eps.is_infinite() {
        return Ok(kf);
    }
    let e = eps.exp();
    Ok(kf / -(-4.0 * eps).exp_m1() * (e + kf - 1.0).powi(2) / (e * e + kf - 1.0))
}

fn positive(x: f64) -> f64 {
    x.max(0.0)
}

/// Index closest to one half, lowest index on ties.
fn k0(p: &Distribution) -> usize {
    let mut best = 0;
    for (i, &v) in p.as_slice().iter().enumerate() {
        if (v - 0.5).abs() < (p[best] - 0.5).abs() {
            best = i;
        }
    }
    best
}

/// Lower bound on the best `α` achievable for a known source `p`.
pub fn feasibility_lower(metric: Metric, p: &Distribution, eps: f64) -> Result<f64> {
    let k = p.len();
    let kf = k as f64;
    p.require_support(1e-12)?;
    let phi = phi_lower_bound(k, eps)?;
    let (pmin, pmax) = (p.min(), p.max());
    match metric {
        Metric::FDiv => Ok((kf.max(pmin / pmax * phi) - 1.0) / (kf - 1.0)),
        Metric::Mse => {
            let norm = p.norm_sq();
            if 1.0 - norm <= 1e-12 {
                return Err(Error::DegenerateSource);
            }
            Ok(((pmin * phi).max(1.0) - norm) / (1.0 - norm))
        }
        Metric::Tv => {
            let i0 = k0(p);
            let sd = |v: f64| (v * (1.0 - v)).sqrt();
            let den: f64 = p.as_slice().iter().map(|&v| sd(v)).sum();
            let head = (p[i0] * (1.0 - p[i0]) + positive(phi * pmin - 1.0)).sqrt();
            let tail: f64 = (0..k).filter(|&i| i != i0).map(|i| sd(p[i])).sum();
            Ok(((head + tail) / den).powi(2))
        }
    }
}

fn check_p0(k: usize, p0: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidAlphabet(k));
    }
    if !(p0 > 0.0 && p0 < 1.0 / k as f64) {
        return Err(Error::InvalidP0 { p0, k });
    }
    Ok(())
}

/// Lower bound on the minmax `α` over sources with every entry at least `p0`.
pub fn minmax_lower(metric: Metric, k: usize, eps: f64, p0: f64) -> Result<f64> {
    check_p0(k, p0)?;
    let kf = k as f64;
    let phi = phi_lower_bound(k, eps)?;
    // 1 - ||p||² at the extreme source (K-1 entries at p0).
    let spread = p0 * (kf - 1.0) * (2.0 - kf * p0);
    match metric {
        Metric::FDiv => {
            let ratio = p0 / (1.0 - (kf - 1.0) * p0);
            Ok((kf.max(ratio * phi) - 1.0) / (kf - 1.0))
        }
        Metric::Mse => Ok((phi / kf - 1.0 + spread) / spread),
        Metric::Tv => Ok(positive(p0 * phi - 1.0 + spread) / (kf - 1.0)),
    }
}

/// Worst-case `α` of the step mechanism over sources with every entry at
/// least `p0`, when it has a closed form (f-divergence and MSE).
///
/// Both are maximized at the source with `K - 1` entries equal to `p0`.
pub fn minmax_upper_step(metric: Metric, k: usize, eps: f64, p0: f64) -> Result<Option<f64>> {
    check_p0(k, p0)?;
    match metric {
        Metric::Tv => Ok(None),
        _ => {
            let kf = k as f64;
            let mut v = vec![p0; k];
            v[0] = 1.0 - (kf - 1.0) * p0;
            let p = Distribution::new(v)?;
            Ok(Some(alpha(metric, &p, &step_mechanism(k, eps)?)?))
        }
    }
}

/// `x★` and `||x★||²` maximizing the squared norm of an `eps`-private row.
pub fn max_sum_squares_profile(k: usize, eps: f64) -> Result<(Vec<f64>, f64)> {
    check(k, eps)?;
    let kf = k as f64;
    let e = eps.exp();
    let z = e + kf - 1.0;
    let mut x = vec![1.0 / z; k];
    x[0] = e / z;
    Ok((x, (kf - 1.0 + e * e) / (z * z)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "regime", rename_all = "lowercase")]
pub enum Regime {
    Feasibility,
    Minmax { p0: f64 },
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Feasibility => "feasibility",
            Regime::Minmax { .. } => "minmax",
        }
    }

    pub fn p0(&self) -> Option<f64> {
        match self {
            Regime::Feasibility => None,
            Regime::Minmax { p0 } => Some(*p0),
        }
    }
}

/// One point of a trade-off curve. `alpha_upper` is what the step mechanism
/// achieves, when that is available in closed form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub epsilon: f64,
    pub alpha_lower: f64,
    pub alpha_upper: Option<f64>,
    pub metric: Metric,
    pub regime: Regime,
    pub k: usize,
}

impl TradeoffPoint {
    pub const CSV_HEADER: &'static str = "epsilon,alpha_lower,alpha_upper,metric,regime,k,p0";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.epsilon,
            self.alpha_lower,
            opt(self.alpha_upper),
            self.metric.name(),
            self.regime.name(),
            self.k,
            opt(self.regime.p0())
        )
    }
}

pub fn feasibility_curve(
    metric: Metric,
    p: &Distribution,
    eps_grid: &[f64],
) -> Result<Vec<TradeoffPoint>> {
    eps_grid
        .iter()
        .map(|&eps| {
            let w = step_mechanism(p.len(), eps)?;
            Ok(TradeoffPoint {
                epsilon: eps,
                alpha_lower: feasibility_lower(metric, p, eps)?,
                alpha_upper: Some(alpha(metric, p, &w)?),
                metric,
                regime: Regime::Feasibility,
                k: p.len(),
            })
        })
        .collect()
}

pub fn minmax_curve(
    metric: Metric,
    k: usize,
    p0: f64,
    eps_grid: &[f64],
) -> Result<Vec<TradeoffPoint>> {
    eps_grid
        .iter()
        .map(|&eps| {
            Ok(TradeoffPoint {
                epsilon: eps,
                alpha_lower: minmax_lower(metric, k, eps, p0)?,
                alpha_upper: minmax_upper_step(metric, k, eps, p0)?,
                metric,
                regime: Regime::Minmax { p0 },
                k,
            })
        })
        .collect()
}
