//! Hypothesis-testing machinery: permutation tests, Benjamini-Hochberg adjustment,
//! simple linear regression, 2x2 chi-square and McNemar tests.
//!
//! Distribution tails come from the regularized incomplete gamma and beta functions
//! implemented in [`special`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Permutation,
    ChiSquare,
    McNemar,
    OlsSlopeT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_resamples: Option<u64>,
    pub method: TestMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub beta: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub p_value: f64,
    pub t_statistic: f64,
    pub n: usize,
}

/// Largest pooled sample the exact enumeration is used for.
pub const EXACT_LIMIT: usize = 12;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-sided permutation test on the difference of means `mean(a) - mean(b)`.
///
/// Monte-Carlo mode uses the `(1 + hits) / (1 + n_resamples)` estimator, with resample
/// `i` drawn from its own counter-derived stream so the result does not depend on how
/// resamples are scheduled. With `exact_if_small` and a pooled size of at most
/// [`EXACT_LIMIT`], all `C(n, |a|)` relabellings are enumerated instead.
pub fn permutation_test(a: &[f64], b: &[f64], n_resamples: u64, seed: u64, exact_if_small: bool) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("permutation test needs two non-empty groups"));
    }
    let observed = mean(a) - mean(b);
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let na = a.len();
    let total: f64 = pooled.iter().sum();
    let tol = 1e-10 * (1.0 + observed.abs());
    let extreme = |sum_a: f64| {
        let d = sum_a / na as f64 - (total - sum_a) / (n - na) as f64;
        d.abs() >= observed.abs() - tol
    };

    if exact_if_small && n <= EXACT_LIMIT {
        let mut idx: Vec<usize> = (0..na).collect();
        let (mut hits, mut count) = (0u64, 0u64);
        loop {
            let s: f64 = idx.iter().map(|&i| pooled[i]).sum();
            count += 1;
            hits += u64::from(extreme(s));
            // next combination in lexicographic order
            let mut i = na;
            loop {
                if i == 0 {
                    return Ok(TestResult {
                        statistic: observed,
                        p_value: hits as f64 / count as f64,
                        n_resamples: None,
                        method: TestMethod::Permutation,
                    });
                }
                i -= 1;
                if idx[i] < n - na + i {
                    break;
                }
            }
            idx[i] += 1;
            for j in i + 1..na {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    let one = |i: u64| -> bool {
        let mut r = rng::indexed(seed, "permutation", i);
        let mut v = pooled.clone();
        for j in 0..na {
            let k = r.random_range(j..n);
            v.swap(j, k);
        }
        extreme(v[..na].iter().sum())
    };
    #[cfg(feature = "parallel")]
    let hits: u64 = {
        use rayon::prelude::*;
        (0..n_resamples).into_par_iter().map(|i| u64::from(one(i))).sum()
    };
    #[cfg(not(feature = "parallel"))]
    let hits: u64 = (0..n_resamples).map(|i| u64::from(one(i))).sum();

    Ok(TestResult {
        statistic: observed,
        p_value: (1 + hits) as f64 / (1 + n_resamples) as f64,
        n_resamples: Some(n_resamples),
        method: TestMethod::Permutation,
    })
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_fdr(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let q = p_values[i] * (m as f64 / (rank + 1) as f64);
        running = running.min(q).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Least-squares line with a two-sided t-test on the slope (n - 2 degrees of freedom).
pub fn ols_regression(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("x has {} values, y has {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid("regression needs at least 3 observations"));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("predictor is constant"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let beta = sxy / sxx;
    let intercept = my - beta * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (intercept + beta * a)).powi(2))
        .sum();
    let df = (n - 2) as f64;
    // residual noise below rounding of the fitted values counts as a perfect fit
    let exact = ss_res <= 1e-24 * ss_tot.max(f64::MIN_POSITIVE) || ss_res == 0.0;
    let (r_squared, t, p) = if ss_tot == 0.0 {
        (0.0, 0.0, 1.0)
    } else if exact {
        (1.0, f64::INFINITY.copysign(beta), 0.0)
    } else {
        let se = (ss_res / df / sxx).sqrt();
        let t = beta / se;
        ((1.0 - ss_res / ss_tot).clamp(0.0, 1.0), t, special::t_two_sided(t, df))
    };
    Ok(RegressionFit {
        beta,
        intercept,
        r_squared,
        p_value: p,
        t_statistic: t,
        n,
    })
}

/// Pearson chi-square test of independence on `[[a, b], [c, d]]`, no continuity correction.
pub fn chi_square_independence(table: [[u64; 2]; 2]) -> Result<TestResult> {
    let [[a, b], [c, d]] = table.map(|r| r.map(|v| v as f64));
    let margins = [a + b, c + d, a + c, b + d];
    if margins.iter().any(|&m| m == 0.0) {
        return Err(Error::invalid("contingency table has an empty margin"));
    }
    let n = a + b + c + d;
    let stat = n * (a * d - b * c).powi(2) / margins.iter().product::<f64>();
    Ok(TestResult {
        statistic: stat,
        p_value: special::chi2_sf(stat, 1.0),
        n_resamples: None,
        method: TestMethod::ChiSquare,
    })
}

/// McNemar test on discordant counts `b` and `c`; `corrected` applies the continuity
/// correction `(|b - c| - 1)^2 / (b + c)`, floored at zero.
pub fn mcnemar(b: u64, c: u64, corrected: bool) -> Result<TestResult> {
    if b + c == 0 {
        return Err(Error::invalid("McNemar test needs at least one discordant pair"));
    }
    let diff = (b as f64 - c as f64).abs();
    let num = if corrected { (diff - 1.0).max(0.0) } else { diff };
    let stat = num * num / (b + c) as f64;
    Ok(TestResult {
        statistic: stat,
        p_value: special::chi2_sf(stat, 1.0),
        n_resamples: None,
        method: TestMethod::McNemar,
    })
}

/// Regularized incomplete gamma/beta functions and the tails built on them.
pub mod special {
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;
    const TINY: f64 = 1e-300;

    /// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
    pub fn ln_gamma(x: f64) -> f64 {
        const C: [f64; 9] = [
            0.999_999_999_999_809_93,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_13,
            -176.615_029_162_140_59,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_571_6e-6,
            1.505_632_735_149_311_6e-7,
        ];
        if x < 0.5 {
            // reflection
            let pi = std::f64::consts::PI;
            return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
        }
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    /// Regularized lower incomplete gamma `P(a, x)`.
    pub fn gamma_p(a: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x < a + 1.0 {
            gamma_series(a, x)
        } else {
            1.0 - gamma_cf(a, x)
        }
    }

    /// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
    pub fn gamma_q(a: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if x < a + 1.0 {
            1.0 - gamma_series(a, x)
        } else {
            gamma_cf(a, x)
        }
    }

    fn gamma_series(a: f64, x: f64) -> f64 {
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    }

    fn gamma_cf(a: f64, x: f64) -> f64 {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        (-x + a * x.ln() - ln_gamma(a)).exp() * h
    }

    /// Regularized incomplete beta `I_x(a, b)`.
    pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
        if x < (a + 1.0) / (a + b + 2.0) {
            ln_front.exp() * beta_cf(a, b, x) / a
        } else {
            1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
        }
    }

    fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
        let qab = a + b;
        let qap = a + 1.0;
        let qam = a - 1.0;
        let mut c = 1.0;
        let mut d = 1.0 - qab * x / qap;
        if d.abs() < TINY {
            d = TINY;
        }
        d = 1.0 / d;
        let mut h = d;
        for m in 1..MAX_ITER {
            let m = m as f64;
            let m2 = 2.0 * m;
            let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
            let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + aa / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        h
    }

    /// Upper tail of the chi-square distribution with `df` degrees of freedom.
    pub fn chi2_sf(x: f64, df: f64) -> f64 {
        gamma_q(df / 2.0, x / 2.0)
    }

    /// Two-sided tail `P(|T| >= |t|)` of Student's t with `df` degrees of freedom.
    pub fn t_two_sided(t: f64, df: f64) -> f64 {
        if !t.is_finite() {
            return 0.0;
        }
        beta_reg(df / 2.0, 0.5, df / (df + t * t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

    #[test]
    fn exact_permutation_fixture() {
        let r = permutation_test(&[1.0, 2.0], &[3.0, 4.0], 0, 0, true).unwrap();
        assert_eq!(r.statistic, -2.0);
        assert!((r.p_value - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.n_resamples, None);
        let r = permutation_test(&[5.0; 3], &[5.0; 3], 0, 0, true).unwrap();
        assert_eq!(r.p_value, 1.0);
        let r = permutation_test(&[5.0; 3], &[5.0; 3], 200, 1, false).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(permutation_test(&[], &[1.0], 10, 0, true).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let a = [1.0, 4.0, 2.5, 3.0, 7.0];
        let b = [2.0, 0.5, 1.0, 1.5, 2.2, 0.1, 3.3];
        let r1 = permutation_test(&a, &b, 2000, 42, false).unwrap();
        let r2 = permutation_test(&a, &b, 2000, 42, false).unwrap();
        assert_eq!(r1, r2);
        assert!(r1.p_value > 0.0 && r1.p_value <= 1.0);
    }

    #[test]
    fn bh_fixtures() {
        let q = bh_fdr(&[0.01, 0.04, 0.03, 0.005]).unwrap();
        for (got, want) in q.iter().zip([0.02, 0.04, 0.04, 0.02]) {
            assert!((got - want).abs() < 1e-12, "{q:?}");
        }
        assert_eq!(bh_fdr(&[0.3]).unwrap(), vec![0.3]);
        assert_eq!(bh_fdr(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0; 3]);
        assert!(bh_fdr(&[1.2]).is_err());
    }

    #[test]
    fn ols_fixtures() {
        let f = ols_regression(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((f.beta - 2.0).abs() < 1e-12);
        assert_eq!(f.r_squared, 1.0);
        assert!(f.p_value < 1e-6);
        let f = ols_regression(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((f.beta - 1.5).abs() < 1e-12);
        assert!((f.intercept + 2.0 / 3.0).abs() < 1e-12);
        assert!(ols_regression(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(ols_regression(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(ols_regression(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ols_p_value_matches_closed_form() {
        // fixture: y = 0.3 + small alternating noise, x = 0..40
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 + if (*v as i64) % 2 == 0 { 0.05 } else { -0.05 }).collect();
        let f = ols_regression(&x, &y).unwrap();
        // normal equations by hand: slope of an alternating series over an even count
        let mx = 19.5;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - 0.3)).sum();
        assert!((f.beta - sxy / sxx).abs() < 1e-15);
        assert!(f.beta.abs() < 1e-2);
        assert!(f.p_value > 0.05);
        let t = StudentsT::new(0.0, 1.0, 38.0).unwrap();
        let want = 2.0 * (1.0 - t.cdf(f.t_statistic.abs()));
        assert!((f.p_value - want).abs() < 1e-8);
    }

    #[test]
    fn chi_square_fixtures() {
        let r = chi_square_independence([[10, 0], [0, 10]]).unwrap();
        assert!((r.statistic - 20.0).abs() < 1e-12);
        let r = chi_square_independence([[5, 5], [5, 5]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = chi_square_independence([[9, 1], [1, 9]]).unwrap();
        assert!((r.statistic - 12.8).abs() < 1e-12);
        assert!(chi_square_independence([[0, 0], [1, 2]]).is_err());
    }

    #[test]
    fn mcnemar_fixtures() {
        assert!((mcnemar(10, 0, true).unwrap().statistic - 8.1).abs() < 1e-12);
        let r = mcnemar(7, 7, true).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert_eq!(mcnemar(0, 1, true).unwrap().statistic, 0.0);
        assert!((mcnemar(12, 0, false).unwrap().statistic - 12.0).abs() < 1e-12);
        assert!(mcnemar(0, 0, true).is_err());
    }

    #[test]
    fn tails_match_reference_values() {
        assert!((special::chi2_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-10);
        assert!((special::chi2_sf(6.634_896_601_021_214, 1.0) - 0.01).abs() < 1e-10);
        assert!((special::t_two_sided(2.228_138_851_986_274, 10.0) - 0.05).abs() < 1e-10);
        for &x in &[0.01, 0.5, 1.0, 3.0, 8.1, 12.8, 20.0, 60.0] {
            for &df in &[1.0, 2.0, 5.0] {
                let want = 1.0 - ChiSquared::new(df).unwrap().cdf(x);
                assert!((special::chi2_sf(x, df) - want).abs() < 1e-8, "x={x} df={df}");
            }
        }
        for &t in &[0.1, 1.0, 2.5, 6.0] {
            for &df in &[1.0, 3.0, 10.0, 100.0] {
                let d = StudentsT::new(0.0, 1.0, df).unwrap();
                let want = 2.0 * (1.0 - d.cdf(t));
                assert!((special::t_two_sided(t, df) - want).abs() < 1e-8, "t={t} df={df}");
            }
        }
    }

    proptest! {
        #[test]
        fn bh_bounds_and_order(ps in proptest::collection::vec(0.0f64..=1.0, 1..30)) {
            let q = bh_fdr(&ps).unwrap();
            for (p, a) in ps.iter().zip(&q) {
                prop_assert!(a >= p && *a <= 1.0);
            }
            let mut pairs: Vec<(f64, f64)> = ps.iter().copied().zip(q.iter().copied()).collect();
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            for w in pairs.windows(2) {
                prop_assert!(w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn chi_square_transpose_invariant(a in 1u64..50, b in 0u64..50, c in 0u64..50, d in 1u64..50) {
            let t1 = chi_square_independence([[a, b], [c, d]]).unwrap();
            let t2 = chi_square_independence([[a, c], [b, d]]).unwrap();
            prop_assert!((t1.statistic - t2.statistic).abs() <= 1e-9 * (1.0 + t1.statistic));
        }

        #[test]
        fn ols_recovers_noiseless_slope(beta in -50.0f64..50.0, icpt in -10.0f64..10.0, n in 3usize..40) {
            prop_assume!(beta.abs() > 1e-3);
            let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 - 3.0).collect();
            let y: Vec<f64> = x.iter().map(|v| beta * v + icpt).collect();
            let f = ols_regression(&x, &y).unwrap();
            prop_assert!(((f.beta - beta) / beta).abs() < 1e-10);
        }
    }
}
