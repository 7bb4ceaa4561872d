//! Least-squares line fits and the sign test.

/// Ordinary least-squares fit of `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 for a perfect line.
    pub r2: f64,
}

/// `None` with fewer than two points or when every x is equal.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - (slope * p.0 + intercept)).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LinearFit { slope, intercept, r2 })
}

/// Outcome of a paired sign test for "a is larger than b".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    pub ties: usize,
    /// One-sided p-value: P(X >= positive) for X ~ Binomial(positive + negative, 1/2).
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    let (mut positive, mut negative, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => positive += 1,
            Some(std::cmp::Ordering::Less) => negative += 1,
            _ => ties += 1,
        }
    }
    SignTest {
        positive,
        negative,
        ties,
        p_value: binomial_upper_tail(positive + negative, positive),
    }
}

/// P(X >= k) for X ~ Binomial(n, 1/2), summed in log space.
fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (ln_choose + ln_half_n).exp();
        }
    }
    total.min(1.0)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn fit_recovers_any_line(slope in -50.0f64..50.0, intercept in -1e3f64..1e3, n in 2usize..20) {
            let pts: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, slope * i as f64 + intercept)).collect();
            let f = linear_fit(&pts).unwrap();
            prop_assert!((f.slope - slope).abs() < 1e-6);
            prop_assert!((f.intercept - intercept).abs() < 1e-6);
        }

        #[test]
        fn swapping_samples_swaps_the_counts(pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..60)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let fwd = sign_test(&a, &b);
            let rev = sign_test(&b, &a);
            prop_assert_eq!((fwd.positive, fwd.negative, fwd.ties), (rev.negative, rev.positive, rev.ties));
            prop_assert!((0.0..=1.0).contains(&fwd.p_value));
        }
    }

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64)> = (3..=11).map(|n| (n as f64, 2.5 * n as f64 + 7.0)).collect();
        let f = linear_fit(&pts).unwrap();
        assert!((f.slope - 2.5).abs() < 1e-12);
        assert!((f.intercept - 7.0).abs() < 1e-9);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn known_r2() {
        // y = 1, 3, 2 at x = 1, 2, 3: slope 0.5, r2 = 0.25.
        let f = linear_fit(&[(1.0, 1.0), (2.0, 3.0), (3.0, 2.0)]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.r2 - 0.25).abs() < 1e-12);
        assert!(linear_fit(&[(1.0, 1.0)]).is_none());
        assert!(linear_fit(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    }

    #[test]
    fn sign_test_tails() {
        let ten = [1.0; 10];
        let zero = [0.0; 10];
        let t = sign_test(&ten, &zero);
        assert_eq!((t.positive, t.negative, t.ties), (10, 0, 0));
        assert!((t.p_value - 1.0 / 1024.0).abs() < 1e-15);
        // P(X >= 8 | n = 10) = (45 + 10 + 1) / 1024.
        let a = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 5.0];
        let b = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 5.0];
        let t = sign_test(&a, &b);
        assert_eq!(t.ties, 1);
        assert!((t.p_value - 56.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test(&zero, &ten).p_value, 1.0);
    }

    #[test]
    fn large_n_tail_stays_finite() {
        let p = binomial_upper_tail(100, 70);
        // Reference value of the exact tail, 3.925e-5.
        assert!((p - 3.925e-5).abs() < 1e-7, "{p}");
        assert!((binomial_upper_tail(100, 50) - 0.539_794_618_5).abs() < 1e-9);
    }
}
