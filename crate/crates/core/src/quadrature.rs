//! Numerical integration on intervals and boxes.

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on the Legendre recurrence).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Composite Gauss–Legendre rule on `[a, b]` with `panels` equal panels.
pub fn composite_rule(a: f64, b: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * order);
    let mut ws = Vec::with_capacity(panels * order);
    for k in 0..panels {
        let lo = a + k as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(lo + 0.5 * h * (x + 1.0));
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

/// Tensor-product rule over `[a, b]^d` applied to `f`.
pub fn tensor_integrate(f: &dyn Fn(&[f64]) -> f64, d: usize, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (xs, ws) = composite_rule(a, b, panels, order);
    let m = xs.len();
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    let mut partial = Vec::with_capacity(m);
    let mut total = Vec::new();
    loop {
        let mut w = 1.0;
        for i in 0..d {
            p[i] = xs[idx[i]];
            w *= ws[idx[i]];
        }
        partial.push(w * f(&p));
        if partial.len() == m {
            total.push(crate::stats::pairwise_sum(&partial));
            partial.clear();
        }
        let mut i = 0;
        loop {
            if i == d {
                total.push(crate::stats::pairwise_sum(&partial));
                return crate::stats::pairwise_sum(&total);
            }
            idx[i] += 1;
            if idx[i] < m {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_and_trig() {
        assert!((adaptive_simpson(&|x| x * x, 0.0, 3.0, 1e-12) - 9.0).abs() < 1e-12);
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(5);
        // exact through degree 9
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn tensor_gaussian() {
        let v = tensor_integrate(&|p| p.iter().map(|x| (-x * x).exp()).product(), 3, -6.0, 6.0, 12, 8);
        assert!((v - std::f64::consts::PI.powf(1.5)).abs() < 1e-10);
    }
}
