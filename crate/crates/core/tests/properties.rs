mod common;

use ldp_rr_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cyclic_shift(k: usize) -> Mechanism {
    permutation_mechanism(&(0..k).map(|i| (i + 1) % k).collect::<Vec<_>>()).unwrap()
}

fn matrices_close(a: &Mechanism, b: &Mechanism, tol: f64) -> bool {
    (a.matrix() - b.matrix()).amax() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip(k in 2usize..7, seed in any::<u64>()) {
        let (_, w) = random_circulant(&mut rng(seed), k);
        let back = Mechanism::from_json(&w.to_json()).unwrap();
        prop_assert!(matrices_close(&w, &back, tol::ROUND_TRIP));
    }

    #[test]
    fn step_json_keeps_epsilon(k in 2usize..9, eps in 0.05f64..5.0) {
        let w = step_mechanism(k, eps).unwrap();
        let back = Mechanism::from_json(&w.to_json()).unwrap();
        prop_assert!((back.epsilon() - eps).abs() < 1e-12);
    }

    #[test]
    fn f_divergences_nonnegative(k in 2usize..7, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_source(&mut r, k);
        let q = random_source(&mut r, k);
        for spec in [
            FDivergenceSpec::kl(),
            FDivergenceSpec::hellinger(),
            FDivergenceSpec::pearson(),
            FDivergenceSpec::triangular(),
            FDivergenceSpec::total_variation(),
        ] {
            prop_assert!(f_divergence(&spec, &p, &q).unwrap() >= -1e-15, "{}", spec.name);
            prop_assert!(f_divergence(&spec, &p, &p).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn tv_f_divergence_matches_l1(k in 2usize..7, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_source(&mut r, k);
        let q = random_source(&mut r, k);
        let l1: f64 = p.as_slice().iter().zip(q.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        let via_f = f_divergence(&FDivergenceSpec::total_variation(), &p, &q).unwrap();
        prop_assert!((via_f - l1).abs() < 1e-12);
        prop_assert!((tv_distance(&p, &q).unwrap() - l1).abs() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        a in prop::collection::vec(-3.0f64..3.0, 2..8),
        shift in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let pa = project_simplex_euclidean(&a);
        let pb = project_simplex_euclidean(&b);
        let again = project_simplex_euclidean(&pa);
        prop_assert!(max_abs_diff(pa.as_slice(), again.as_slice()) < 1e-12);
        let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d_out = mse_distance(&pa, &pb).unwrap().sqrt();
        prop_assert!(d_out <= d_in + 1e-12);
    }

    #[test]
    fn composition_is_row_stochastic(k in 2usize..7, seed in any::<u64>()) {
        let mut r = rng(seed);
        let (_, a) = random_circulant(&mut r, k);
        let (_, b) = random_circulant(&mut r, k);
        let c = compose(&a, &b).unwrap();
        for row in c.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
        // Composition can only lose privacy budget.
        prop_assert!(epsilon_of(&c) <= epsilon_of(&a).min(epsilon_of(&b)) + 1e-9);
    }

    #[test]
    fn step_epsilon_is_exact(k in 2usize..12, eps in 0.01f64..6.0) {
        let w = step_mechanism(k, eps).unwrap();
        prop_assert!((epsilon_of(&w) - eps).abs() < 1e-9);
        prop_assert_eq!(w.step_epsilon().map(|e| (e - eps).abs() < 1e-9), Some(true));
        prop_assert!(is_eps_private(&w, eps));
        prop_assert!(!is_eps_private(&w, eps * 0.99));
    }

    #[test]
    fn random_private_mechanisms_respect_budget(k in 2usize..8, eps in 0.1f64..3.0, seed in any::<u64>()) {
        let w = random_eps_private(k, eps, seed).unwrap();
        let e = eps.exp();
        for c in 0..k {
            let col: Vec<f64> = (0..k).map(|r| w.get(r, c)).collect();
            let hi = col.iter().copied().fold(f64::MIN, f64::max);
            let lo = col.iter().copied().fold(f64::MAX, f64::min);
            prop_assert!(hi <= e * lo * (1.0 + 1e-12));
        }
    }

    #[test]
    fn circulants_commute_with_cyclic_shift(k in 2usize..8, seed in any::<u64>()) {
        let (_, w) = random_circulant(&mut rng(seed), k);
        let s = cyclic_shift(k);
        let ws = compose(&w, &s).unwrap();
        let sw = compose(&s, &w).unwrap();
        prop_assert!(matrices_close(&ws, &sw, 1e-12));
    }

    #[test]
    fn alpha_ignores_output_relabeling(k in 2usize..7, eps in 0.2f64..3.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_source(&mut r, k);
        let w = random_eps_private(k, eps, seed).unwrap();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.rotate_left(seed as usize % k);
        perm.swap(0, k - 1);
        let wp = compose(&w, &permutation_mechanism(&perm).unwrap()).unwrap();
        for m in Metric::ALL {
            let a = alpha(m, &p, &w).unwrap();
            let b = alpha(m, &p, &wp).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0), "{m:?}: {a} vs {b}");
        }
    }

    #[test]
    fn pullback_inverts_pushforward(k in 2usize..7, eps in 0.2f64..3.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_source(&mut r, k);
        let w = random_eps_private(k, eps, seed).unwrap();
        let back = pullback(&pushforward(&p, &w).unwrap(), &w).unwrap();
        prop_assert!(max_abs_diff(back.as_slice(), p.as_slice()) < 1e-10);
    }

    #[test]
    fn tv_alpha_below_fdiv_alpha_at_uniform(k in 2usize..7, eps in 0.2f64..3.0, seed in any::<u64>()) {
        let u = Distribution::uniform(k).unwrap();
        let w = random_eps_private(k, eps, seed).unwrap();
        prop_assert!(alpha_tv(&u, &w).unwrap() <= alpha_fdiv(&u, &w).unwrap() + 1e-9);
    }

    #[test]
    fn privatization_never_helps(k in 2usize..7, eps in 0.1f64..4.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = random_source(&mut r, k);
        let w = step_mechanism(k, eps).unwrap();
        let (_, c) = random_circulant(&mut r, k);
        for m in Metric::ALL {
            prop_assert!(alpha(m, &p, &w).unwrap() >= 1.0 - 1e-9);
            prop_assert!(alpha(m, &p, &c).unwrap() >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn post_processing_increases_phi(k in 2usize..7, eps in 0.2f64..3.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = step_mechanism(k, eps).unwrap();
        let (_, c) = random_circulant(&mut r, k);
        prop_assert!(dpi_gap(&w, &c).unwrap() >= -1e-9);
        let p = random_source(&mut r, k);
        let wc = compose(&w, &c).unwrap();
        for m in Metric::ALL {
            prop_assert!(alpha(m, &p, &wc).unwrap() >= alpha(m, &p, &w).unwrap() * (1.0 - 1e-9));
        }
    }

    #[test]
    fn step_alpha_decreases_with_budget(k in 2usize..8, eps in 0.1f64..4.0, seed in any::<u64>()) {
        let p = random_source(&mut rng(seed), k);
        let lo = step_mechanism(k, eps).unwrap();
        let hi = step_mechanism(k, eps * 1.1).unwrap();
        for m in Metric::ALL {
            prop_assert!(alpha(m, &p, &hi).unwrap() <= alpha(m, &p, &lo).unwrap() + 1e-9);
        }
    }

    #[test]
    fn alpha_fdiv_convex_between_swapped_sources(
        k in 2usize..6,
        eps in 0.2f64..3.0,
        seed in any::<u64>(),
        i in 0usize..6,
        j in 0usize..6,
    ) {
        let (i, j) = (i % k, j % k);
        prop_assume!(i != j);
        let mut r = rng(seed);
        let p = random_source(&mut r, k);
        let w = random_eps_private(k, eps, seed).unwrap();
        let mut swapped = p.as_slice().to_vec();
        swapped.swap(i, j);
        let vals: Vec<f64> = (0..=10)
            .map(|s| {
                let l = s as f64 / 10.0;
                let mix: Vec<f64> = p.as_slice().iter().zip(&swapped).map(|(a, b)| l * a + (1.0 - l) * b).collect();
                alpha_fdiv(&Distribution::new(mix).unwrap(), &w).unwrap()
            })
            .collect();
        for s in 1..10 {
            let second = vals[s - 1] - 2.0 * vals[s] + vals[s + 1];
            prop_assert!(second >= -1e-8, "s={s}: {second}");
        }
    }

    #[test]
    fn lower_bounds_sit_below_achievable(k in 2usize..9, eps in 0.1f64..5.0, seed in any::<u64>()) {
        let star = phi_star(k, eps).unwrap();
        prop_assert!(phi_lower_bound(k, eps).unwrap() <= star + 1e-9);
        let u = Distribution::uniform(k).unwrap();
        let w = step_mechanism(k, eps).unwrap();
        let p = random_source(&mut rng(seed), k);
        for m in Metric::ALL {
            let upper = alpha_upper_uniform(k, eps).unwrap();
            let lower = feasibility_lower(m, &u, eps).unwrap();
            prop_assert!(lower <= upper * (1.0 + 1e-9), "{m:?}: {lower} > {upper}");
            prop_assert!(feasibility_lower(m, &p, eps).unwrap() <= alpha(m, &p, &w).unwrap() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn bounds_fall_as_budget_grows(k in 2usize..9, eps in 0.1f64..4.0) {
        let a = alpha_upper_uniform(k, eps).unwrap();
        let b = alpha_upper_uniform(k, eps * 1.2).unwrap();
        prop_assert!(b <= a);
        prop_assert!(phi_lower_bound(k, eps * 1.2).unwrap() <= phi_lower_bound(k, eps).unwrap() + 1e-12);
    }

    #[test]
    fn minmax_lower_below_step_envelope(k in 2usize..7, eps in 0.1f64..4.0, frac in 0.05f64..0.95) {
        let p0 = frac / k as f64;
        for m in [Metric::FDiv, Metric::Mse] {
            let lo = minmax_lower(m, k, eps, p0).unwrap();
            let hi = minmax_upper_step(m, k, eps, p0).unwrap().unwrap();
            prop_assert!(lo <= hi * (1.0 + 1e-9), "{m:?}: {lo} > {hi}");
        }
        prop_assert!(minmax_upper_step(Metric::Tv, k, eps, p0).unwrap().is_none());
    }

    #[test]
    fn step_estimators_are_permutation_equivariant(
        counts in prop::collection::vec(0u64..40, 2..8),
        eps in 0.2f64..3.0,
        rot in 0usize..8,
    ) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let k = counts.len();
        let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
        let moved: Vec<u64> = perm.iter().map(|&j| counts[j]).collect();
        let t = EmpiricalType::from_counts(counts).unwrap();
        let tp = EmpiricalType::from_counts(moved).unwrap();
        let a = ml_estimate_step(&t, k, eps).unwrap().permuted(&perm);
        let b = ml_estimate_step(&tp, k, eps).unwrap();
        prop_assert!(max_abs_diff(a.as_slice(), b.as_slice()) < 1e-12);
        let a = mmse_estimate_step(&t, k, eps).unwrap().permuted(&perm);
        let b = mmse_estimate_step(&tp, k, eps).unwrap();
        prop_assert!(max_abs_diff(a.as_slice(), b.as_slice()) < 1e-12);
    }

    #[test]
    fn estimators_land_on_simplex(counts in prop::collection::vec(0u64..30, 2..7), eps in 0.2f64..3.0) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let k = counts.len();
        let w = step_mechanism(k, eps).unwrap();
        let t = EmpiricalType::from_counts(counts).unwrap();
        for est in [Estimator::Ml, Estimator::Mmse, Estimator::RawClipped] {
            let d = est.apply(&t, &w).unwrap();
            prop_assert!((d.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.as_slice().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn ml_never_loses_likelihood_to_mmse(counts in prop::collection::vec(0u64..30, 2..7), eps in 0.2f64..3.0) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let k = counts.len();
        let w = step_mechanism(k, eps).unwrap();
        let t = EmpiricalType::from_counts(counts).unwrap();
        let tv = t.type_vector();
        let loglik = |d: &Distribution| -> f64 {
            w.left_multiply(d.as_slice())
                .iter()
                .zip(&tv)
                .filter(|(_, &x)| x > 0.0)
                .map(|(s, x)| x * s.ln())
                .sum()
        };
        let ml = ml_estimate(&t, &w).unwrap();
        let ls = mmse_estimate(&t, &w).unwrap();
        prop_assert!(loglik(&ml) >= loglik(&ls) - 1e-12);
        let sq = |d: &Distribution| mse_distance(&w.left_multiply(d.as_slice()), &tv).unwrap();
        prop_assert!(sq(&ls) <= sq(&ml) + 1e-12);
    }
}

#[test]
fn phi_lower_bound_scales_like_k_squared() {
    for eps in [0.5, 1.0, 2.0] {
        let ratios: Vec<f64> = [16usize, 32, 64, 128, 256]
            .iter()
            .map(|&k| phi_lower_bound(k, eps).unwrap() / (k * k) as f64)
            .collect();
        let hi = ratios.iter().copied().fold(f64::MIN, f64::max);
        let lo = ratios.iter().copied().fold(f64::MAX, f64::min);
        assert!(lo > 0.0 && hi / lo < 4.0, "eps={eps}: {ratios:?}");
    }
}

#[test]
fn binary_minmax_below_grid_search() {
    // K=2, sources with min p >= 1/4: the bound must not exceed min over sampled
    // private channels of the worst case over a source grid.
    let (eps, p0) = (3f64.ln(), 0.25);
    let sources: Vec<Distribution> = (0..1000)
        .map(|s| {
            let x = p0 + (1.0 - 2.0 * p0) * s as f64 / 999.0;
            Distribution::new(vec![x, 1.0 - x]).unwrap()
        })
        .collect();
    let mut channels: Vec<Mechanism> = (0..999)
        .map(|s| random_eps_private(2, eps, s).unwrap())
        .collect();
    channels.push(step_mechanism(2, eps).unwrap());
    for m in Metric::ALL {
        let lower = minmax_lower(m, 2, eps, p0).unwrap();
        let best = channels
            .iter()
            .map(|w| {
                sources
                    .iter()
                    .map(|p| alpha(m, p, w).unwrap())
                    .fold(f64::MIN, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(
            lower >= 0.0 && lower <= best + 1e-9,
            "{m:?}: bound {lower} above grid {best}"
        );
    }
}

#[test]
fn minmax_bounds_fall_as_budget_grows() {
    for k in [2usize, 3, 5, 8] {
        let p0 = 0.5 / k as f64;
        for m in Metric::ALL {
            let vals: Vec<f64> = (1..=40)
                .map(|i| minmax_lower(m, k, i as f64 * 0.1, p0).unwrap())
                .collect();
            assert!(
                vals.windows(2).all(|v| v[1] <= v[0] + 1e-12),
                "{m:?} K={k}: {vals:?}"
            );
        }
    }
}

#[test]
fn cubic_probe_matches_exact_enumeration() {
    fn probe(x: f64) -> f64 {
        let d = x - 1.0;
        d * d + d * d * d
    }
    let spec = FDivergenceSpec {
        name: "cubic-probe",
        eval: probe,
        derivatives: Some([0.0, 2.0, 6.0, 0.0]),
        f0_finite: true,
    };
    for (p, eps) in [(vec![0.5, 0.3, 0.2], 1.0), (vec![0.2, 0.2, 0.6], 2.0)] {
        let p = Distribution::new(p).unwrap();
        let w = step_mechanism(3, eps).unwrap();
        let q = w.left_multiply(p.as_slice());
        for n in [8u64, 12, 20] {
            let mut exact = 0.0;
            for_each_composition(3, n, &mut |c| {
                let t = EmpiricalType::from_counts(c.to_vec()).unwrap();
                let raw = raw_estimate(&t, &w).unwrap();
                let loss: f64 = (0..3).map(|i| p[i] * probe(raw.as_slice()[i] / p[i])).sum();
                exact += multinomial_pmf(c, &q) * loss;
            });
            let nf = n as f64;
            let r = expansion_fdiv(&p, &w, &spec, BCoefficient::FirstMomentDenominator).unwrap();
            let got = r.scaled_loss(nf);
            assert!(
                (got - nf * exact).abs() < 1e-8 * got.abs(),
                "n={n}: {got} vs {}",
                nf * exact
            );
        }
    }
}
