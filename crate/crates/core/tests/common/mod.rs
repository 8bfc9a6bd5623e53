#![allow(dead_code)]

use ldp_rr_core::{CirculantSpec, Distribution, EmpiricalType, Mechanism};
use rand::Rng;
use rand_distr::{Distribution as _, Exp1, Gamma};

/// Dirichlet(shape, ..., shape) draw, floored away from zero.
pub fn dirichlet<R: Rng>(rng: &mut R, k: usize, shape: f64) -> Vec<f64> {
    let g = Gamma::new(shape, 1.0).unwrap();
    let v: Vec<f64> = (0..k).map(|_| g.sample(rng).max(1e-300)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_source<R: Rng>(rng: &mut R, k: usize) -> Distribution {
    loop {
        let v = dirichlet(rng, k, 1.0);
        if v.iter().all(|&x| x > 1e-3) {
            return Distribution::new(v).unwrap();
        }
    }
}

/// Uniform-simplex row for a circulant channel; retried until full rank.
pub fn random_circulant<R: Rng>(rng: &mut R, k: usize) -> (CirculantSpec, Mechanism) {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let s: f64 = v.iter().sum();
        let spec =
            CirculantSpec::new(Distribution::new(v.iter().map(|x| x / s).collect()).unwrap());
        if let Ok(w) = ldp_rr_core::circulant_mechanism(&spec) {
            return (spec, w);
        }
    }
}

/// Circulant row mixed towards uniform until its max/min ratio is at most `e^eps`.
pub fn random_private_circulant<R: Rng>(
    rng: &mut R,
    k: usize,
    eps: f64,
) -> (CirculantSpec, Mechanism) {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let s: f64 = v.iter().sum();
        let v: Vec<f64> = v.iter().map(|x| x / s).collect();
        let u = 1.0 / k as f64;
        let hi = v.iter().copied().fold(f64::MIN, f64::max);
        let lo = v.iter().copied().fold(f64::MAX, f64::min);
        let e = eps.exp();
        let slope = (hi - u) - e * (lo - u);
        let mut theta: f64 = if slope > 0.0 {
            ((e - 1.0) * u / slope).min(1.0)
        } else {
            1.0
        };
        // Some draws land strictly inside, others on the boundary.
        theta *= rng.random_range(0.5..=1.0) * (1.0 - 1e-12);
        let row: Vec<f64> = v.iter().map(|x| (1.0 - theta) * u + theta * x).collect();
        let spec = CirculantSpec::new(Distribution::new(row).unwrap());
        if let Ok(w) = ldp_rr_core::circulant_mechanism(&spec) {
            if ldp_rr_core::is_eps_private(&w, eps) {
                return (spec, w);
            }
        }
    }
}

/// Type of `n` draws from `q` (multinomial via categorical draws).
pub fn random_type<R: Rng>(rng: &mut R, q: &[f64], n: u64) -> EmpiricalType {
    let mut counts = vec![0u64; q.len()];
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = q.len() - 1;
        for (i, &qi) in q.iter().enumerate() {
            acc += qi;
            if u < acc {
                idx = i;
                break;
            }
        }
        counts[idx] += 1;
    }
    EmpiricalType::from_counts(counts).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `ln C(n, y)`.
pub fn ln_choose(n: u64, y: u64) -> f64 {
    let lf = |m: u64| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    lf(n) - lf(y) - lf(n - y)
}

/// Calls `visit` on every vector of `k` nonnegative integers summing to `n`.
pub fn for_each_composition(k: usize, n: u64, visit: &mut impl FnMut(&[u64])) {
    fn go(c: &mut Vec<u64>, k: usize, left: u64, visit: &mut impl FnMut(&[u64])) {
        if c.len() + 1 == k {
            c.push(left);
            visit(c);
            c.pop();
            return;
        }
        for x in 0..=left {
            c.push(x);
            go(c, k, left - x, visit);
            c.pop();
        }
    }
    go(&mut Vec::with_capacity(k), k, n, visit);
}

/// Multinomial probability of `counts` under `q`.
pub fn multinomial_pmf(counts: &[u64], q: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let lf = |m: u64| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    let mut lp = lf(n);
    for (&c, &qi) in counts.iter().zip(q) {
        lp -= lf(c);
        if c > 0 {
            lp += c as f64 * qi.ln();
        }
    }
    lp.exp()
}
