use hybridwatch::stats::{bh_fdr, chi_square_independence, ols_regression, permutation_test, EXACT_LIMIT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact two-sided p-value by enumerating every subset of the pooled sample as group a.
fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, na) = (pooled.len(), a.len());
    let stat = |s: &[f64], t: &[f64]| s.iter().sum::<f64>() / s.len() as f64 - t.iter().sum::<f64>() / t.len() as f64;
    let obs = stat(a, b).abs();
    let (mut hits, mut total) = (0u32, 0u32);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let (s, t): (Vec<(usize, f64)>, Vec<(usize, f64)>) =
            pooled.iter().copied().enumerate().partition(|(i, _)| mask & (1 << i) != 0);
        let s: Vec<f64> = s.into_iter().map(|x| x.1).collect();
        let t: Vec<f64> = t.into_iter().map(|x| x.1).collect();
        total += 1;
        hits += u32::from(stat(&s, &t).abs() >= obs - 1e-10 * (1.0 + obs));
    }
    f64::from(hits) / f64::from(total)
}

#[test]
fn permutation_monte_carlo_tracks_the_exact_distribution() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let resamples = 10_000u64;
    for case in 0..20 {
        let na = r.random_range(2..=6);
        let nb = r.random_range(2..=EXACT_LIMIT - na);
        let shift = r.random_range(0.0..1.5);
        let a: Vec<f64> = (0..na).map(|_| r.random_range(0.0..1.0) + shift).collect();
        let b: Vec<f64> = (0..nb).map(|_| r.random_range(0.0..1.0)).collect();
        let oracle = enumerate_p(&a, &b);
        let exact = permutation_test(&a, &b, resamples, case, true).unwrap();
        assert!((exact.p_value - oracle).abs() < 1e-12, "case {case}");
        let mc = permutation_test(&a, &b, resamples, case, false).unwrap();
        let se = (oracle * (1.0 - oracle) / resamples as f64).sqrt();
        // the (1 + hits) / (1 + n) estimator adds at most 1 / (1 + n) of bias
        let bias = 1.0 / (1 + resamples) as f64;
        assert!(
            (mc.p_value - oracle).abs() <= 3.0 * se + bias,
            "case {case}: mc {} exact {oracle}",
            mc.p_value
        );
    }
}

#[test]
fn permutation_is_reproducible_per_seed() {
    let a = [1.0, 2.0, 2.5, 4.0, 3.3, 0.2, 7.0];
    let b = [0.5, 1.1, 0.9, 2.0, 1.4, 0.3, 2.2, 1.0];
    let x = permutation_test(&a, &b, 2000, 42, false).unwrap();
    let y = permutation_test(&a, &b, 2000, 42, false).unwrap();
    assert_eq!(x, y);
}

#[test]
fn chi_square_is_symmetric_under_transpose() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let t: [[u64; 2]; 2] = [[r.random_range(1..60), r.random_range(1..60)], [r.random_range(1..60), r.random_range(1..60)]];
        let tt = [[t[0][0], t[1][0]], [t[0][1], t[1][1]]];
        let a = chi_square_independence(t).unwrap();
        let b = chi_square_independence(tt).unwrap();
        assert!((a.statistic - b.statistic).abs() <= 1e-12 * (1.0 + a.statistic));
        assert!((a.p_value - b.p_value).abs() <= 1e-12);
    }
}

#[test]
fn ols_recovers_noiseless_lines() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let beta: f64 = r.random_range(-50.0..50.0);
        let c: f64 = r.random_range(-10.0..10.0);
        if beta.abs() < 1e-3 {
            continue;
        }
        let n = r.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|i| i as f64 + r.random_range(0.0..0.5)).collect();
        let y: Vec<f64> = x.iter().map(|v| c + beta * v).collect();
        let fit = ols_regression(&x, &y).unwrap();
        assert!(((fit.beta - beta) / beta).abs() < 1e-10, "beta {} vs {beta}", fit.beta);
        assert!((fit.r_squared - 1.0).abs() < 1e-10);
    }
}

/// Step-up adjustment written directly from its definition: min over j >= rank of m p_(j) / j.
fn bh_oracle(p: &[f64]) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter()
        .map(|&pi| {
            let mut best: f64 = 1.0;
            for &pj in p {
                if pj >= pi {
                    let rank = p.iter().filter(|&&q| q <= pj).count() as f64;
                    best = best.min(m * pj / rank);
                }
            }
            best
        })
        .collect()
}

#[test]
fn bh_matches_the_definition() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let n = r.random_range(1..30);
        let p: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.2) { 0.5 } else { r.random_range(0.0..1.0) })
            .collect();
        let got = bh_fdr(&p).unwrap();
        for (g, o) in got.iter().zip(bh_oracle(&p)) {
            assert!((g - o).abs() < 1e-12);
        }
        for (g, pi) in got.iter().zip(&p) {
            assert!(g >= pi && *g <= 1.0);
        }
    }
}
