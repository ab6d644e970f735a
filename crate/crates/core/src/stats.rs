//! Paired significance testing.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
    pub mean_difference: f64,
}

/// Paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidConfig(alloc::format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { stage: "t-test input" });
    }
    let nf = n as f64;
    let mean = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / nf;
    let var = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y - mean;
            d * d
        })
        .sum::<f64>()
        / (nf - 1.0);
    let df = n - 1;
    let (t, p) = if var == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        }
    } else {
        let t = mean / libm::sqrt(var / nf);
        (t, student_t_two_sided(t, df as f64))
    };
    Ok(TTest {
        t,
        p,
        df,
        mean_difference: mean,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// `I_x(a, b)` by the continued fraction, using the symmetry relation
/// where it converges faster.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log(1.0 - x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

// modified Lentz evaluation
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=500 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    // closed forms of the two-sided tail for one and two degrees of freedom
    fn tail_df1(t: f64) -> f64 {
        1.0 - 2.0 / core::f64::consts::PI * t.abs().atan()
    }

    fn tail_df2(t: f64) -> f64 {
        1.0 - t.abs() / (t * t + 2.0).sqrt()
    }

    #[test]
    fn matches_closed_forms() {
        for i in 0..200 {
            let t = -10.0 + 0.1 * f64::from(i);
            assert!((student_t_two_sided(t, 1.0) - tail_df1(t)).abs() < 1e-10, "t={t}");
            assert!((student_t_two_sided(t, 2.0) - tail_df2(t)).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn worked_example() {
        let a = [0.1, 0.2, 0.3];
        let b = [0.0; 3];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - 12f64.sqrt()).abs() < 1e-9);
        assert_eq!(r.df, 2);
        assert!((r.p - tail_df2(12f64.sqrt())).abs() < 1e-10);
        assert!((r.p - 0.0742).abs() < 5e-5);
        let s = paired_t_test(&b, &a).unwrap();
        assert_eq!(s.t, -r.t);
        assert_eq!(s.p, r.p);
    }

    #[test]
    fn degenerate_inputs() {
        let r = paired_t_test(&[0.4, 0.5], &[0.4, 0.5]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let c = paired_t_test(&[1.0, 2.0], &[0.5, 1.5]).unwrap();
        assert_eq!((c.t, c.p), (f64::INFINITY, 0.0));
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn beta_symmetry() {
        for &(x, a, b) in &[(0.3, 2.5, 0.5), (0.9, 10.0, 0.5), (0.01, 0.5, 3.0)] {
            let lhs = regularized_incomplete_beta(x, a, b);
            let rhs = 1.0 - regularized_incomplete_beta(1.0 - x, b, a);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
