//! Correlation and paired t-test utilities.
//!
//! The Student-t tail probability is computed from the regularized
//! incomplete beta function, evaluated by its continued fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation; errors when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} samples", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two samples".into(),
        ));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance("correlation input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
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
    for m in 1..=10_000 {
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

/// Regularized incomplete beta I_x(a, b).
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    /// Differences had zero variance; `t` is 0 (all equal to zero) or ±∞.
    pub zero_variance: bool,
}

/// Paired t-test of `a - b` against zero.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{} vs {} paired samples",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&diffs);
    let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = (n - 1) as f64;
    if sd == 0.0 {
        let t = if m == 0.0 {
            0.0
        } else {
            m.signum() * f64::INFINITY
        };
        return Ok(PairedTTest {
            n,
            mean_diff: m,
            sd_diff: 0.0,
            t,
            p: if m == 0.0 { 1.0 } else { 0.0 },
            zero_variance: true,
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    Ok(PairedTTest {
        n,
        mean_diff: m,
        sd_diff: sd,
        t,
        p: student_t_two_sided(t, df),
        zero_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pearson_basics() {
        let y = [1.0, 3.0, 2.0, 5.0];
        assert_abs_diff_eq!(pearson(&y, &y).unwrap(), 1.0, epsilon = 1e-15);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&y, &neg).unwrap(), -1.0, epsilon = 1e-15);
        let aff: Vec<f64> = y.iter().map(|v| 3.0 * v + 7.0).collect();
        assert_abs_diff_eq!(pearson(&y, &aff).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            pearson(&y, &[1.0; 4]),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(
            ln_gamma(0.5),
            std::f64::consts::PI.sqrt().ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn beta_reg_symmetry() {
        for &(a, b, x) in &[(2.0, 3.0, 0.3), (0.5, 0.5, 0.9), (7.5, 0.5, 0.1)] {
            assert_abs_diff_eq!(
                beta_reg(a, b, x),
                1.0 - beta_reg(b, a, 1.0 - x),
                epsilon = 1e-13
            );
        }
        // I_x(1, 1) = x.
        assert_abs_diff_eq!(beta_reg(1.0, 1.0, 0.37), 0.37, epsilon = 1e-14);
    }

    #[test]
    fn paired_t_reference_values() {
        // Frozen from scipy.stats.ttest_1samp([0.1, 0.2, 0.15, 0.05], 0).
        let r = paired_t_test(&[0.1, 0.2, 0.15, 0.05], &[0.0; 4]).unwrap();
        assert_abs_diff_eq!(r.t, 3.8729833462074184, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p, 0.03046629166217095, epsilon = 1e-9);

        // scipy.stats.ttest_rel.
        let a = [0.31, 0.28, 0.35, 0.30, 0.33];
        let b = [0.29, 0.27, 0.30, 0.31, 0.28];
        let r = paired_t_test(&a, &b).unwrap();
        assert_abs_diff_eq!(r.t, 2.0579830217101063, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p, 0.10870095132492352, epsilon = 1e-9);
    }

    #[test]
    fn paired_t_edge_cases() {
        let r = paired_t_test(&[0.2, 0.3], &[0.2, 0.3]).unwrap();
        assert_eq!((r.t, r.p, r.zero_variance), (0.0, 1.0, true));
        let r = paired_t_test(&[1.5, 2.5], &[1.0, 2.0]).unwrap();
        assert!(r.zero_variance && r.t.is_infinite() && r.p == 0.0);
        let swapped = paired_t_test(&[0.1, 0.5, 0.2], &[0.3, 0.1, 0.0]).unwrap();
        let orig = paired_t_test(&[0.3, 0.1, 0.0], &[0.1, 0.5, 0.2]).unwrap();
        assert_eq!(swapped.t, -orig.t);
        assert_eq!(swapped.p, orig.p);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }
}
