//! Seeded sampling through a channel and Monte Carlo loss estimation.
//!
//! Every trial draws from its own ChaCha stream selected by the trial index,
//! so results do not depend on how trials are scheduled across threads.

use std::io::{self, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::Metric;
use crate::error::{Error, Result};
use crate::estimation::{raw_estimate, EmpiricalType, Estimator};
use crate::mechanisms::Mechanism;
use crate::simplex::{f_divergence, mse_distance, tv_distance, Distribution, FDivergenceSpec};

/// Trials per reduction chunk; the chunk layout fixes the summation order.
const CHUNK: u64 = 1024;
const ESCAPE_SLACK: f64 = 1e-12;

/// RNG for trial `trial` under master seed `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Multinomial counts via successive binomial draws.
pub fn sample_multinomial<R: Rng + ?Sized>(q: &[f64], n: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; q.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (i, &qi) in q.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == q.len() || mass <= 0.0 {
            counts[i] = left;
            break;
        }
        let prob = (qi / mass).clamp(0.0, 1.0);
        let x = Binomial::new(left, prob)
            .expect("probability in [0, 1]")
            .sample(rng);
        counts[i] = x;
        left -= x;
        mass -= qi;
    }
    counts
}

/// Output type of `n` privatized samples, drawn directly from the
/// multinomial with parameter `pW`.
pub fn sample_output_type<R: Rng + ?Sized>(
    p: &Distribution,
    w: &Mechanism,
    n: u64,
    rng: &mut R,
) -> Result<EmpiricalType> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let q = w.left_multiply(p.as_slice());
    EmpiricalType::from_counts(sample_multinomial(&q, n, rng))
}

/// Draws `x_i ~ p` and `y_i ~ W[x_i, ·]` one symbol at a time.
pub fn sample_chain<R: Rng + ?Sized>(
    p: &Distribution,
    w: &Mechanism,
    n: u64,
    rng: &mut R,
) -> Result<EmpiricalType> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let k = w.k();
    let source =
        WeightedIndex::new(p.as_slice()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rows: Vec<WeightedIndex<f64>> = w
        .rows()
        .iter()
        .map(|r| WeightedIndex::new(r).map_err(|e| Error::InvalidArgument(e.to_string())))
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; k];
    for _ in 0..n {
        let x = source.sample(rng);
        counts[rows[x].sample(rng)] += 1;
    }
    EmpiricalType::from_counts(counts)
}

/// A loss between the true source and an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossMetric {
    FDiv(FDivergenceSpec),
    Mse,
    Tv,
}

impl LossMetric {
    pub fn kl() -> Self {
        LossMetric::FDiv(FDivergenceSpec::kl())
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossMetric::FDiv(spec) => spec.name,
            LossMetric::Mse => "mse",
            LossMetric::Tv => "tv",
        }
    }

    pub fn family(&self) -> Metric {
        match self {
            LossMetric::FDiv(_) => Metric::FDiv,
            LossMetric::Mse => Metric::Mse,
            LossMetric::Tv => Metric::Tv,
        }
    }

    pub fn loss(&self, p: &Distribution, estimate: &Distribution) -> Result<f64> {
        match self {
            LossMetric::FDiv(spec) => f_divergence(spec, p, estimate),
            LossMetric::Mse => mse_distance(p, estimate),
            LossMetric::Tv => tv_distance(p, estimate),
        }
    }
}

impl std::str::FromStr for LossMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossMetric::Mse),
            "tv" => Ok(LossMetric::Tv),
            other => FDivergenceSpec::builtin(other)
                .map(LossMetric::FDiv)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub metric: String,
    pub estimator: Estimator,
    pub n: u64,
    pub trials: u64,
    pub mean: f64,
    pub std_error: f64,
    pub seed: u64,
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * other.count / count,
            m2: self.m2 + other.m2 + delta * delta * self.count * other.count / count,
        }
    }

    fn std_error(&self) -> f64 {
        if self.count < 2.0 {
            return f64::NAN;
        }
        (self.m2 / (self.count - 1.0) / self.count).sqrt()
    }
}

/// Runs `trials` independent trials, each returning `width` values, and
/// reduces them in a fixed order.
fn run_trials<F>(trials: u64, width: usize, f: F) -> Result<Vec<Moments>>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let partial: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Moments::default(); width];
            for trial in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let values = f(trial).map_err(|e| Error::TrialFailed {
                    trial,
                    source: Box::new(e),
                })?;
                for (a, v) in acc.iter_mut().zip(values) {
                    a.push(v);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(partial
        .into_iter()
        .fold(vec![Moments::default(); width], |acc, chunk| {
            acc.into_iter()
                .zip(chunk)
                .map(|(a, b)| a.merge(b))
                .collect()
        }))
}

fn check_trials(trials: u64) -> Result<()> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 trials, got {trials}"
        )));
    }
    Ok(())
}

/// Losses of several estimators under several metrics, all computed from
/// the same sampled types. Reports are ordered estimator-major.
pub fn monte_carlo_losses(
    p: &Distribution,
    w: &Mechanism,
    n: u64,
    metrics: &[LossMetric],
    estimators: &[Estimator],
    trials: u64,
    seed: u64,
) -> Result<Vec<LossReport>> {
    check_trials(trials)?;
    if p.len() != w.k() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: w.k(),
        });
    }
    let width = metrics.len() * estimators.len();
    let stats = run_trials(trials, width, |trial| {
        let mut rng = trial_rng(seed, trial);
        let t = sample_output_type(p, w, n, &mut rng)?;
        let mut out = Vec::with_capacity(width);
        for est in estimators {
            let p_hat = est.apply(&t, w)?;
            for m in metrics {
                out.push(m.loss(p, &p_hat)?);
            }
        }
        Ok(out)
    })?;
    let mut reports = Vec::with_capacity(width);
    for (i, est) in estimators.iter().enumerate() {
        for (j, m) in metrics.iter().enumerate() {
            let s = stats[i * metrics.len() + j];
            reports.push(LossReport {
                metric: m.name().to_string(),
                estimator: *est,
                n,
                trials,
                mean: s.mean,
                std_error: s.std_error(),
                seed,
            });
        }
    }
    Ok(reports)
}

pub fn monte_carlo_loss(
    p: &Distribution,
    w: &Mechanism,
    n: u64,
    metric: LossMetric,
    estimator: Estimator,
    trials: u64,
    seed: u64,
) -> Result<LossReport> {
    Ok(monte_carlo_losses(p, w, n, &[metric], &[estimator], trials, seed)?.remove(0))
}

fn outside_simplex(v: &[f64]) -> bool {
    v.iter()
        .any(|&x| !(-ESCAPE_SLACK..=1.0 + ESCAPE_SLACK).contains(&x))
}

/// Fraction of trials whose raw estimate leaves the simplex, with its
/// standard error. Uses the per-symbol sampling path.
pub fn escape_probability(
    p: &Distribution,
    w: &Mechanism,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    check_trials(trials)?;
    let stats = run_trials(trials, 1, |trial| {
        let mut rng = trial_rng(seed, trial);
        let t = sample_chain(p, w, n, &mut rng)?;
        let raw = raw_estimate(&t, w)?;
        Ok(vec![if outside_simplex(raw.as_slice()) {
            1.0
        } else {
            0.0
        }])
    })?;
    Ok((stats[0].mean, stats[0].std_error()))
}

/// Escape probability by summing over every possible output type.
/// Refuses problems with more than ten million types.
pub fn exact_escape_probability(p: &Distribution, w: &Mechanism, n: u64) -> Result<f64> {
    let k = w.k();
    let types = binomial_coefficient(n + k as u64 - 1, k as u64 - 1);
    if types > 1e7 {
        return Err(Error::InvalidArgument(format!(
            "{types:.0} types is too many to enumerate"
        )));
    }
    let q = w.left_multiply(p.as_slice());
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, i| {
            *acc += (i as f64).ln();
            Some(*acc)
        }))
        .collect();
    let mut counts = vec![0u64; k];
    let mut total = 0.0;
    enumerate(&mut counts, 0, n, &mut |c| {
        let mut lp = ln_fact[n as usize];
        for (&ci, &qi) in c.iter().zip(&q) {
            lp -= ln_fact[ci as usize];
            if ci > 0 {
                lp += ci as f64 * qi.ln();
            }
        }
        let t: Vec<f64> = c.iter().map(|&ci| ci as f64 / n as f64).collect();
        if outside_simplex(&w.left_multiply_inverse(&t)) {
            total += lp.exp();
        }
    });
    Ok(total)
}

fn binomial_coefficient(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn enumerate(counts: &mut [u64], i: usize, left: u64, visit: &mut impl FnMut(&[u64])) {
    if i + 1 == counts.len() {
        counts[i] = left;
        visit(counts);
        return;
    }
    for c in 0..=left {
        counts[i] = c;
        enumerate(counts, i + 1, left - c, visit);
    }
}

/// One line of a convergence sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mechanism: &'static str,
    pub report: LossReport,
    /// Ratio to the non-private baseline at the same `n`, squared for TV.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub n_grid: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str = "n,metric,estimator,mechanism,mean,std_error,normalized";

    pub fn write_csv<W: Write>(&self, out: &mut W, seed: Option<u64>) -> io::Result<()> {
        write_provenance(out, seed)?;
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for row in &self.rows {
            let r = &row.report;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.n,
                r.metric,
                r.estimator.name(),
                row.mechanism,
                r.mean,
                r.std_error,
                row.normalized
            )?;
        }
        Ok(())
    }

    /// The privatized row for `(n, metric, estimator)`.
    pub fn find(&self, n: u64, metric: &str, estimator: Estimator) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.mechanism == "privatized"
                && r.report.n == n
                && r.report.metric == metric
                && r.report.estimator == estimator
        })
    }
}

/// `# seed=<seed> version=<version>` comment line heading every CSV.
pub fn write_provenance<W: Write>(out: &mut W, seed: Option<u64>) -> io::Result<()> {
    let seed = seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
    writeln!(out, "# seed={seed} version={}", crate::VERSION)
}

/// Losses over a grid of sample sizes for `w` and for the identity channel.
pub fn convergence_sweep(
    p: &Distribution,
    w: &Mechanism,
    n_grid: &[u64],
    metrics: &[LossMetric],
    estimators: &[Estimator],
    trials: u64,
    seed: u64,
) -> Result<SweepResult> {
    if n_grid.is_empty() || n_grid.windows(2).any(|x| x[0] >= x[1]) {
        return Err(Error::InvalidArgument(
            "n_grid must be nonempty and strictly ascending".into(),
        ));
    }
    let identity = Mechanism::identity(w.k())?;
    let mut rows = Vec::new();
    for &n in n_grid {
        let private = monte_carlo_losses(p, w, n, metrics, estimators, trials, seed)?;
        let base = monte_carlo_losses(p, &identity, n, metrics, estimators, trials, seed)?;
        for (r, b) in private.iter().zip(&base) {
            let ratio = r.mean / b.mean;
            let normalized = if r.metric == "tv" {
                ratio * ratio
            } else {
                ratio
            };
            rows.push(SweepRow {
                mechanism: "privatized",
                report: r.clone(),
                normalized,
            });
        }
        rows.extend(base.into_iter().map(|b| SweepRow {
            mechanism: "identity",
            report: b,
            normalized: 1.0,
        }));
    }
    Ok(SweepResult {
        n_grid: n_grid.to_vec(),
        rows,
    })
}
