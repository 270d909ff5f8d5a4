//! Scalar special functions backing the cluster-probability model.
//!
//! Everything here is deterministic f64 arithmetic: log-gamma (Lanczos),
//! the regularized incomplete beta function (continued fraction), the
//! regularized lower incomplete gamma, and the handful of distribution
//! CDFs built on top of them.

/// Lanczos approximation, g = 7, n = 9. Accurate to ~1e-13 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    debug_assert!(x > 0.0);
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (Lentz's method).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
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

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "beta parameters must be positive");
    assert!((0.0..=1.0).contains(&x), "x must be in [0, 1]");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // Symmetry keeps the continued fraction in its fast-converging region.
    if x < (a + 1.0) / (a + b + 2.0) {
        (front * beta_cf(x, a, b) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - front * beta_cf(1.0 - x, b, a) / b).clamp(0.0, 1.0)
    }
}

/// Regularized lower incomplete gamma P(a, x), series for x < a+1, CF otherwise.
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series representation
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..300 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        (sum * (-x + a * x.ln() - ln_gamma(a)).exp()).clamp(0.0, 1.0)
    } else {
        // continued fraction for Q(a, x)
        const FPMIN: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..300 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        let q = (-x + a * x.ln() - ln_gamma(a)).exp() * h;
        (1.0 - q).clamp(0.0, 1.0)
    }
}

/// Error function via the regularized incomplete gamma.
pub fn erf(x: f64) -> f64 {
    let p = reg_lower_gamma(0.5, x * x);
    if x >= 0.0 {
        p
    } else {
        -p
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Poisson pmf, evaluated in log space for stability at large counts.
pub fn poisson_pmf(k: u64, lambda: f64) -> f64 {
    assert!(lambda >= 0.0);
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k_f = k as f64;
    (k_f * lambda.ln() - lambda - ln_gamma(k_f + 1.0)).exp()
}

/// Binomial CDF Pr[X <= k] for X ~ Binomial(n, p), via the incomplete beta.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p));
    if k >= n {
        return 1.0;
    }
    // Pr[X <= k] = I_{1-p}(n - k, k + 1)
    reg_inc_beta(1.0 - p, (n - k) as f64, k as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_factorials() {
        for n in 1u64..15 {
            let fact: f64 = (1..n).map(|i| i as f64).product();
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-10, "n = {n}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    /// Brute-force quadrature of the beta density as an independent oracle.
    fn beta_cdf_quadrature(x: f64, a: f64, b: f64) -> f64 {
        let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
        // composite Simpson on [0, x]
        let n = 200_000; // even
        let h = x / n as f64;
        // test grid keeps a, b >= 1, so endpoints are finite: t^(a-1) is 1
        // when a == 1 even at t = 0 (likewise for b at t = 1)
        let f = |t: f64| -> f64 {
            let lt = if a == 1.0 { 0.0 } else { (a - 1.0) * t.ln() };
            let l1t = if b == 1.0 { 0.0 } else { (b - 1.0) * (1.0 - t).ln() };
            (ln_norm + lt + l1t).exp()
        };
        let mut sum = f(0.0) + f(x);
        for i in 1..n {
            let t = i as f64 * h;
            sum += if i % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
        }
        sum * h / 3.0
    }

    #[test]
    fn incomplete_beta_matches_quadrature() {
        for a in 1..=10u32 {
            for b in 1..=10u32 {
                for &x in &[0.001, 0.0054, 0.01, 0.1, 0.5] {
                    let got = reg_inc_beta(x, a as f64, b as f64);
                    let want = beta_cdf_quadrature(x, a as f64, b as f64);
                    assert!(
                        (got - want).abs() < 1e-8,
                        "I_{x}({a},{b}): got {got}, quadrature {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-14);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-10);
        assert!((normal_cdf(2.0) - 0.977_249_868_051_820_8).abs() < 1e-10);
        assert!((normal_cdf(-2.0) - 0.022_750_131_948_179_2).abs() < 1e-10);
    }

    #[test]
    fn poisson_pmf_sums_to_one() {
        for &lambda in &[0.5, 2.0, 10.0, 50.0] {
            let total: f64 = (0..400).map(|k| poisson_pmf(k, lambda)).sum();
            assert!((total - 1.0).abs() < 1e-12, "lambda = {lambda}");
        }
    }

    #[test]
    fn binomial_cdf_matches_direct_sum() {
        let n = 40u64;
        let p: f64 = 0.3;
        let ln_fact = |m: u64| ln_gamma(m as f64 + 1.0);
        for k in 0..n {
            let direct: f64 = (0..=k)
                .map(|i| {
                    (ln_fact(n) - ln_fact(i) - ln_fact(n - i)
                        + i as f64 * p.ln()
                        + (n - i) as f64 * (1.0 - p).ln())
                    .exp()
                })
                .sum();
            assert!((binomial_cdf(k, n, p) - direct).abs() < 1e-10, "k = {k}");
        }
    }
}
