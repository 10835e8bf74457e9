//! Composite quadrature rules on uniformly sampled data.
//!
//! The ray integrators produce values on a uniform affine grid plus a short
//! tail reaching the boundary exit point; everything here is 4th order so the
//! quadrature error stays below the RK4 trajectory error.

use num_complex::Complex64;

/// Integral of uniformly spaced samples with spacing `h`.
///
/// Composite Simpson when the number of intervals is even; Simpson plus a
/// 3/8 closing rule otherwise. Falls back to trapezoid for fewer than three
/// samples.
pub fn integrate_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * h * (values[0] + values[1]);
    }
    let intervals = n - 1;
    if intervals % 2 == 0 {
        simpson_even(values, h)
    } else if intervals == 3 {
        three_eighths(values, h)
    } else {
        // Simpson on the first (intervals - 3) intervals, 3/8 on the last 3.
        let split = n - 3;
        simpson_even(&values[..split], h) + three_eighths(&values[split - 1..], h)
    }
}

fn simpson_even(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    debug_assert!(n >= 3 && (n - 1) % 2 == 0);
    let mut acc = values[0] + values[n - 1];
    for (k, v) in values.iter().enumerate().take(n - 1).skip(1) {
        acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

fn three_eighths(values: &[f64], h: f64) -> f64 {
    debug_assert_eq!(values.len(), 4);
    3.0 * h / 8.0 * (values[0] + 3.0 * values[1] + 3.0 * values[2] + values[3])
}

/// Complex-valued variant of [`integrate_uniform`].
pub fn integrate_uniform_complex(values: &[Complex64], h: f64) -> Complex64 {
    let re: Vec<f64> = values.iter().map(|z| z.re).collect();
    let im: Vec<f64> = values.iter().map(|z| z.im).collect();
    Complex64::new(integrate_uniform(&re, h), integrate_uniform(&im, h))
}

/// Cumulative primitive of uniformly spaced samples, 4th order.
///
/// Interior increments use the two-sided cubic rule
/// `h/24 * (-f[k-1] + 13 f[k] + 13 f[k+1] - f[k+2])`; the first and last
/// interval use the one-sided cubic rule. Returns one value per node, with
/// `out[0] = 0`.
pub fn cumulative_integral_uniform(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (values[0] + values[1]);
        return out;
    }
    if n == 3 {
        // quadratic fit over the three nodes
        out[1] = h / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2]);
        out[2] = out[1] + h / 12.0 * (-values[0] + 8.0 * values[1] + 5.0 * values[2]);
        return out;
    }
    for k in 0..n - 1 {
        let inc = if k == 0 {
            h / 24.0 * (9.0 * values[0] + 19.0 * values[1] - 5.0 * values[2] + values[3])
        } else if k == n - 2 {
            h / 24.0 * (values[n - 4] - 5.0 * values[n - 3] + 19.0 * values[n - 2] + 9.0 * values[n - 1])
        } else {
            h / 24.0 * (-values[k - 1] + 13.0 * values[k] + 13.0 * values[k + 1] - values[k + 2])
        };
        out[k + 1] = out[k] + inc;
    }
    out
}

/// Simpson increment over a full sub-interval given endpoint and midpoint values.
pub fn simpson_segment(f0: f64, fmid: f64, f1: f64, len: f64) -> f64 {
    len / 6.0 * (f0 + 4.0 * fmid + f1)
}

/// Cubic-accurate increment over the first half of a sub-interval from values
/// at its start, midpoint, and end.
pub fn half_segment(f0: f64, fmid: f64, f1: f64, len: f64) -> f64 {
    len / 24.0 * (5.0 * f0 + 8.0 * fmid - f1)
}

/// Trapezoid rule on uniformly spaced samples.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.5 * (values[0] + values[n - 1]);
    for v in &values[1..n - 1] {
        acc += v;
    }
    acc * h
}

/// Complex trapezoid rule on uniformly spaced samples.
pub fn trapezoid_uniform_complex(values: &[Complex64], h: f64) -> Complex64 {
    let n = values.len();
    if n < 2 {
        return Complex64::new(0.0, 0.0);
    }
    let mut acc = 0.5 * (values[0] + values[n - 1]);
    for v in &values[1..n - 1] {
        acc += v;
    }
    acc * h
}

/// Cumulative trapezoid primitive; `out[0] = 0`.
pub fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for k in 1..values.len() {
        out[k] = out[k - 1] + 0.5 * h * (values[k - 1] + values[k]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_integrates_cubics_exactly() {
        // cubic on [0, 1]
        let n = 11;
        let h = 0.1;
        let f: Vec<f64> = (0..n)
            .map(|i| {
                let x = i as f64 * h;
                2.0 * x * x * x - x + 0.5
            })
            .collect();
        assert_relative_eq!(integrate_uniform(&f, h), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn odd_interval_counts_stay_fourth_order() {
        for n in [4usize, 6, 9, 12, 101] {
            let h = 1.0 / (n as f64 - 1.0);
            let f: Vec<f64> = (0..n).map(|i| (i as f64 * h).sin()).collect();
            let exact = 1.0 - 1.0f64.cos();
            let err = (integrate_uniform(&f, h) - exact).abs();
            assert!(err < 2.0 * h.powi(4), "n={n} err={err}");
        }
    }

    #[test]
    fn cumulative_rule_is_fourth_order() {
        let exact = |x: f64| -> f64 { (2.0 * x).sin() / 2.0 };
        let mut errs = Vec::new();
        for n in [41usize, 81] {
            let h = 1.0 / (n as f64 - 1.0);
            let f: Vec<f64> = (0..n).map(|i| (2.0 * i as f64 * h).cos()).collect();
            let cum = cumulative_integral_uniform(&f, h);
            let err = cum
                .iter()
                .enumerate()
                .map(|(i, c)| (c - exact(i as f64 * h)).abs())
                .fold(0.0f64, f64::max);
            errs.push(err);
        }
        // halving h should shrink the max error ~16x; require at least 10x
        assert!(errs[0] / errs[1] > 10.0, "errs={errs:?}");
    }

    #[test]
    fn trapezoid_matches_linear() {
        let f = [0.0, 1.0, 2.0, 3.0];
        assert_relative_eq!(trapezoid_uniform(&f, 0.5), 2.25, epsilon = 1e-15);
    }
}
