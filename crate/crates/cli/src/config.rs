use std::path::{Path, PathBuf};

use ldp_rr_core::{
    circulant_mechanism, random_eps_private, step_mechanism, CirculantSpec, Distribution,
    Estimator, LossMetric, Mechanism,
};
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum MechanismSpec {
    Step,
    Circulant(Vec<f64>),
    Random(u64),
    Matrix(Vec<Vec<f64>>),
}

impl MechanismSpec {
    pub fn build(&self, k: usize, eps: f64) -> Result<Mechanism, Failure> {
        let w = match self {
            MechanismSpec::Step => step_mechanism(k, eps)?,
            MechanismSpec::Circulant(row) => {
                circulant_mechanism(&CirculantSpec::new(Distribution::new(row.clone())?))?
            }
            MechanismSpec::Random(seed) => random_eps_private(k, eps, *seed)?,
            MechanismSpec::Matrix(rows) => Mechanism::from_rows(rows)?,
        };
        if w.k() != k {
            return Err(Failure::Config(format!(
                "mechanism has K = {}, config says K = {k}",
                w.k()
            )));
        }
        Ok(w)
    }
}

/// Sweep configuration as read from JSON; every field can be overridden by a flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub k: Option<usize>,
    pub epsilon: Option<f64>,
    pub p: Option<Vec<f64>>,
    pub mechanism: Option<MechanismSpec>,
    pub n_grid: Option<Vec<u64>>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub metrics: Option<Vec<String>>,
    pub estimators: Option<Vec<Estimator>>,
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything `convergence_sweep` needs, validated.
pub struct Sweep {
    pub p: Distribution,
    pub w: Mechanism,
    pub n_grid: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
    pub metrics: Vec<LossMetric>,
    pub estimators: Vec<Estimator>,
    pub output: Option<PathBuf>,
}

impl Sweep {
    pub fn resolve(c: SweepConfig) -> Result<Self, Failure> {
        let missing = |what: &str| {
            Failure::Config(format!(
                "missing `{what}` (set it in the config or by flag)"
            ))
        };
        let p = Distribution::new(c.p.ok_or_else(|| missing("p"))?)?;
        p.require_support(1e-12)?;
        let k = c.k.unwrap_or(p.len());
        if k != p.len() {
            return Err(Failure::Config(format!(
                "p has {} entries but K = {k}",
                p.len()
            )));
        }
        let epsilon = c.epsilon.ok_or_else(|| missing("epsilon"))?;
        crate::check_eps(epsilon)?;
        let w = c
            .mechanism
            .unwrap_or(MechanismSpec::Step)
            .build(k, epsilon)?;
        let n_grid = c.n_grid.ok_or_else(|| missing("n_grid"))?;
        let metrics = c
            .metrics
            .unwrap_or_else(|| vec!["kl".into(), "mse".into(), "tv".into()])
            .iter()
            .map(|m| m.parse::<LossMetric>())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Sweep {
            p,
            w,
            n_grid,
            trials: c.trials.unwrap_or(20_000),
            seed: c.seed.unwrap_or(0),
            metrics,
            estimators: c
                .estimators
                .unwrap_or_else(|| vec![Estimator::Ml, Estimator::Mmse]),
            output: c.output,
        })
    }
}
