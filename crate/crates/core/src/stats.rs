//! Small sample statistics used by the estimators and experiments.

use crate::geometry::{norm, sub, Point};

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_pair_distance(a: &[Point], b: &[Point]) -> f64 {
    let mut total = 0.0;
    for &p in a {
        let mut row = 0.0;
        for &q in b {
            row += norm(sub(p, q));
        }
        total += row;
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// Energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|` between two empirical
/// measures (V-statistic form, so it is zero for identical samples).
pub fn energy_distance(a: &[Point], b: &[Point]) -> f64 {
    assert!(
        !a.is_empty() && !b.is_empty(),
        "energy distance of an empty sample"
    );
    let d = 2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b);
    d.max(0.0)
}

/// Kolmogorov-Smirnov statistic of `samples` against the uniform law on `[lo, hi)`.
pub fn ks_uniform(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let mut v: Vec<f64> = samples.iter().map(|s| (s - lo) / (hi - lo)).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &u)| {
            let hi = (i + 1) as f64 / n - u;
            let lo = u - i as f64 / n;
            hi.max(lo)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}
