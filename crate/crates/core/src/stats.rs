//! Order-fixed reductions and the few classical tests the harnesses need.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pairwise (cascade) summation. The reduction tree depends only on the length,
/// so the result is reproducible bit for bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, se: 0.0, n: 0 }
    }
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN, n };
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return MeanSe { mean, se: 0.0, n };
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    MeanSe { mean, se: (var / n as f64).sqrt(), n }
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean_se(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m.mean) * (x - m.mean)).collect();
    pairwise_sum(&dev) / (xs.len().max(2) - 1) as f64
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    (d, kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}

/// One-sample KS against a continuous CDF.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut a = a.to_vec();
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let d = a
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let en = n.sqrt();
    (d, kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson chi-square test of independence for a contingency table.
/// Returns (statistic, degrees of freedom, p-value).
pub fn chi_square_independence(table: &[Vec<f64>]) -> (f64, f64, f64) {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let ncol = table.first().map_or(0, Vec::len);
    let cols: Vec<f64> = (0..ncol).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            if e > 0.0 {
                stat += (o - e) * (o - e) / e;
            }
        }
    }
    let live_rows = rows.iter().filter(|&&x| x > 0.0).count();
    let live_cols = cols.iter().filter(|&&x| x > 0.0).count();
    let dof = ((live_rows.max(1) - 1) * (live_cols.max(1) - 1)) as f64;
    (stat, dof, chi_square_sf(stat, dof))
}

/// Pearson goodness-of-fit against expected counts.
pub fn chi_square_gof(observed: &[f64], expected: &[f64]) -> (f64, f64, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (expected.iter().filter(|&&e| e > 0.0).count().max(1) - 1) as f64;
    (stat, dof, chi_square_sf(stat, dof))
}

fn chi_square_sf(stat: f64, dof: f64) -> f64 {
    if dof <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof).map_or(f64::NAN, |c| c.sf(stat))
}

/// Natural log of k!.
pub fn ln_factorial(k: u64) -> f64 {
    statrs::function::factorial::ln_factorial(k)
}
