//! Spectral projected gradient over the probability simplex.

use crate::error::{Error, Result};
use crate::simplex::project_slice;
use nalgebra::{DMatrix, DVector};

pub(crate) trait SimplexObjective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// `d' H d` for quadratic objectives, enabling an exact line search.
    fn curvature(&self, _d: &[f64]) -> Option<f64> {
        None
    }
    /// Dense Hessian, used to polish the SPG result with Newton steps on the support.
    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

pub(crate) struct SpgOptions {
    pub tol: f64,
    pub accept: f64,
    pub max_iter: usize,
}

impl Default for SpgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            accept: 1e-8,
            max_iter: 100_000,
        }
    }
}

pub(crate) struct SpgOutcome {
    pub x: Vec<f64>,
    pub value: f64,
}

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;

/// `||P(x - g) - x||_inf`, zero exactly at a minimizer.
pub(crate) fn pg_residual(x: &[f64], g: &[f64]) -> f64 {
    let y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    project_slice(&y)
        .iter()
        .zip(x)
        .map(|(p, a)| (p - a).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn minimize<O: SimplexObjective>(
    obj: &O,
    x0: Vec<f64>,
    opts: &SpgOptions,
) -> Result<SpgOutcome> {
    let mut x = x0;
    let mut f = obj.value(&x);
    let mut g = obj.gradient(&x);
    let mut history = vec![f];
    let mut step = 1.0;
    let mut residual = pg_residual(&x, &g);

    for _ in 0..opts.max_iter {
        if residual < opts.tol {
            break;
        }
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        let d: Vec<f64> = project_slice(&trial)
            .iter()
            .zip(&x)
            .map(|(p, a)| p - a)
            .collect();
        let gd = dot(&g, &d);
        if gd >= 0.0 {
            // Step too long to give a descent direction numerically; fall back to unit step.
            if step != 1.0 {
                step = 1.0;
                continue;
            }
            break;
        }

        let lambda = match obj.curvature(&d) {
            Some(c) if c > 0.0 => (-gd / c).min(1.0),
            Some(_) => 1.0,
            None => {
                let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut lambda = 1.0;
                loop {
                    let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + lambda * b).collect();
                    let ft = obj.value(&xt);
                    if ft <= reference + ARMIJO * lambda * gd {
                        break;
                    }
                    lambda *= 0.5;
                    if lambda < 1e-20 {
                        break;
                    }
                }
                lambda
            }
        };

        let x_new: Vec<f64> = x
            .iter()
            .zip(&d)
            .map(|(a, b)| (a + lambda * b).max(0.0))
            .collect();
        let f_new = obj.value(&x_new);
        let g_new = obj.gradient(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            1e4
        };

        let decrease = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        residual = pg_residual(&x, &g);
        history.push(f);
        if history.len() > MEMORY {
            history.remove(0);
        }
        if residual < opts.accept && decrease.abs() <= 1e-14 * f.abs().max(1e-300) {
            break;
        }
        if ss == 0.0 && residual < opts.accept {
            break;
        }
    }

    if residual > opts.tol {
        if let Some((xp, fp, rp)) = newton_polish(obj, &x, opts) {
            if rp < residual {
                x = xp;
                f = fp;
                residual = rp;
            }
        }
    }

    if residual >= opts.accept {
        return Err(Error::ConvergenceFailure(format!(
            "projected-gradient residual {residual:e} after {} iterations",
            opts.max_iter
        )));
    }
    Ok(SpgOutcome { x, value: f })
}

/// Active-set Newton on the face containing `x0`: drops coordinates that hit zero,
/// re-adds the worst violator of the multiplier sign condition.
fn newton_polish<O: SimplexObjective>(
    obj: &O,
    x0: &[f64],
    opts: &SpgOptions,
) -> Option<(Vec<f64>, f64, f64)> {
    let k = x0.len();
    let mut x = x0.to_vec();
    let mut active: Vec<bool> = x.iter().map(|&v| v > 1e-12).collect();
    let mut f = obj.value(&x);
    for _ in 0..100 {
        let g = obj.gradient(&x);
        let h = obj.hessian(&x)?;
        let support: Vec<usize> = (0..k).filter(|&i| active[i]).collect();
        let m = support.len();
        let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
        let mut rhs = DVector::<f64>::zeros(m + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = h[(i, j)];
            }
            kkt[(a, m)] = 1.0;
            kkt[(m, a)] = 1.0;
            rhs[a] = -g[i];
        }
        rhs[m] = 1.0 - support.iter().map(|&i| x[i]).sum::<f64>();
        let sol = kkt.lu().solve(&rhs)?;
        let mut dx = vec![0.0; k];
        for (a, &i) in support.iter().enumerate() {
            dx[i] = sol[a];
        }
        // Zero coordinates outside the support so the step lands on the face.
        for i in 0..k {
            if !active[i] {
                dx[i] = -x[i];
            }
        }
        let mut t = 1.0_f64;
        let mut blocking = None;
        for &i in &support {
            if dx[i] < 0.0 && x[i] + t * dx[i] < 0.0 {
                t = x[i] / -dx[i];
                blocking = Some(i);
            }
        }
        let step_norm = dx.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut xn: Vec<f64> = x
            .iter()
            .zip(&dx)
            .map(|(a, b)| (a + t * b).max(0.0))
            .collect();
        if let Some(i) = blocking {
            xn[i] = 0.0;
            active[i] = false;
        }
        let fn_ = obj.value(&xn);
        if !fn_.is_finite() || fn_ > f + 1e-12 * f.abs().max(1.0) {
            return None;
        }
        x = xn;
        f = fn_;
        if blocking.is_some() {
            continue;
        }
        if step_norm < 1e-15 {
            let g = obj.gradient(&x);
            let nu = support.iter().map(|&i| g[i]).sum::<f64>() / m as f64;
            let worst = (0..k)
                .filter(|&i| !active[i])
                .map(|i| (i, g[i] - nu))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((i, v)) if v < -opts.tol => active[i] = true,
                _ => break,
            }
        }
    }
    let r = pg_residual(&x, &obj.gradient(&x));
    Some((x, f, r))
}
