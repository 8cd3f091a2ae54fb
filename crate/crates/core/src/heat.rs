//! Cell-averaged densities on 1D/2D boxes and a Crank–Nicolson solver for
//! `∂ρ/∂t = ½Δρ` with zero-flux walls.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BoxSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    /// cells per axis (axis 0 varies fastest)
    pub shape: Vec<usize>,
    /// lower corner
    pub lo: Vec<f64>,
    /// mesh width (same on every axis)
    pub h: f64,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    pub fn volume(&self) -> f64 {
        self.shape.iter().map(|&m| m as f64 * self.h).product()
    }

    pub fn mass(&self) -> f64 {
        crate::stats::pairwise_sum(&self.values) * self.cell_volume()
    }

    fn check_box(bx: &BoxSpec, cells: usize) -> Result<()> {
        if !(1..=2).contains(&bx.dim()) {
            return Err(invalid(format!("density grids are 1D or 2D, got d={}", bx.dim())));
        }
        if cells < 2 {
            return Err(invalid("a density grid needs at least two cells per axis"));
        }
        Ok(())
    }

    pub fn uniform(bx: &BoxSpec, cells: usize) -> Result<Self> {
        Self::check_box(bx, cells)?;
        let d = bx.dim();
        let v = 1.0 / bx.volume();
        Ok(Self {
            shape: vec![cells; d],
            lo: (0..d).map(|i| bx.lo(i)).collect(),
            h: bx.side / cells as f64,
            values: vec![v; cells.pow(d as u32)],
        })
    }

    /// Product density whose axis-`i` marginal has CDF `cdfs[i]`; cell values
    /// are exact cell averages (CDF differences).
    pub fn from_marginal_cdfs(bx: &BoxSpec, cells: usize, cdfs: &[&dyn Fn(f64) -> f64]) -> Result<Self> {
        Self::check_box(bx, cells)?;
        let d = bx.dim();
        if cdfs.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cdfs.len() });
        }
        let h = bx.side / cells as f64;
        let masses: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..cells)
                    .map(|j| {
                        let a = bx.lo(i) + j as f64 * h;
                        let b = if j + 1 == cells { bx.hi(i) } else { a + h };
                        (cdfs[i](b) - cdfs[i](a)) / h
                    })
                    .collect()
            })
            .collect();
        let values = if d == 1 {
            masses[0].clone()
        } else {
            let mut v = Vec::with_capacity(cells * cells);
            for y in &masses[1] {
                for x in &masses[0] {
                    v.push(x * y);
                }
            }
            v
        };
        let g = Self { shape: vec![cells; d], lo: (0..d).map(|i| bx.lo(i)).collect(), h, values };
        g.check_normalized()?;
        Ok(g)
    }

    pub fn check_normalized(&self) -> Result<()> {
        let m = self.mass();
        if (m - 1.0).abs() > 1e-9 || self.values.iter().any(|&v| v < 0.0) {
            return Err(Error::NotNormalized(m));
        }
        Ok(())
    }

    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(invalid("grids differ in shape"));
        }
        let diffs: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).collect();
        Ok(crate::stats::pairwise_sum(&diffs) * self.cell_volume())
    }

    /// `Ent(ρ | uniform on the box) = ∫ ρ log(ρ |box|)`.
    pub fn entropy_wrt_uniform(&self) -> f64 {
        let vol = self.volume();
        let terms: Vec<f64> = self
            .values
            .iter()
            .map(|&v| if v > 0.0 { v * (v * vol).ln() } else { 0.0 })
            .collect();
        crate::stats::pairwise_sum(&terms) * self.cell_volume()
    }

    /// Averages blocks of `factor` cells per axis.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.shape.iter().any(|&m| m % factor != 0) {
            return Err(invalid("coarsening factor must divide the grid"));
        }
        let d = self.dim();
        let shape: Vec<usize> = self.shape.iter().map(|m| m / factor).collect();
        let total: usize = shape.iter().product();
        let mut values = vec![0.0; total];
        let w = 1.0 / (factor.pow(d as u32)) as f64;
        for (idx, v) in self.values.iter().enumerate() {
            let (i, j) = (idx % self.shape[0], idx / self.shape[0]);
            let ci = i / factor + if d == 2 { (j / factor) * shape[0] } else { 0 };
            values[ci] += v * w;
        }
        Ok(Self { shape, lo: self.lo.clone(), h: self.h * factor as f64, values })
    }

    /// Sums cell masses into `bins` equal bins along a 1D grid (densities returned).
    pub fn rebin_1d(&self, bins: usize) -> Result<Vec<f64>> {
        if self.dim() != 1 || !self.shape[0].is_multiple_of(bins) {
            return Err(invalid("rebinning needs a 1D grid whose size is a multiple of bins"));
        }
        Ok(self.coarsen(self.shape[0] / bins)?.values)
    }
}

/// Solves the tridiagonal system with constant off-diagonal `-a`, diagonal
/// `1 + 2a` (or `1 + a` in the two wall rows), in place.
fn solve_neumann_tridiag(a: f64, rhs: &mut [f64], scratch: &mut Vec<f64>) {
    let m = rhs.len();
    scratch.clear();
    scratch.resize(m, 0.0);
    let diag = |i: usize| if i == 0 || i + 1 == m { 1.0 + a } else { 1.0 + 2.0 * a };
    let mut denom = diag(0);
    scratch[0] = -a / denom;
    rhs[0] /= denom;
    for i in 1..m {
        denom = diag(i) + a * scratch[i - 1];
        scratch[i] = -a / denom;
        rhs[i] = (rhs[i] + a * rhs[i - 1]) / denom;
    }
    for i in (0..m - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// `(I + a L) x` with the Neumann second difference `L` (unscaled).
fn apply_explicit(a: f64, x: &[f64], out: &mut [f64]) {
    let m = x.len();
    for i in 0..m {
        let left = if i == 0 { x[0] } else { x[i - 1] };
        let right = if i + 1 == m { x[m - 1] } else { x[i + 1] };
        out[i] = x[i] + a * (left - 2.0 * x[i] + right);
    }
}

#[derive(Clone, Copy)]
enum Step {
    Crank(f64),
    Backward(f64),
}

fn step_axis(g: &mut DensityGrid, axis: usize, step: Step, line: &mut Vec<f64>, tmp: &mut Vec<f64>, scratch: &mut Vec<f64>) {
    let n0 = g.shape[0];
    let m = g.shape[axis];
    let lines = g.values.len() / m;
    let h2 = g.h * g.h;
    for l in 0..lines {
        let index = |k: usize| if axis == 0 { l * n0 + k } else { l + k * n0 };
        line.clear();
        line.extend((0..m).map(|k| g.values[index(k)]));
        match step {
            Step::Crank(dt) => {
                let a = dt / (4.0 * h2);
                tmp.resize(m, 0.0);
                apply_explicit(a, line, tmp);
                solve_neumann_tridiag(a, tmp, scratch);
                for k in 0..m {
                    g.values[index(k)] = tmp[k];
                }
            }
            Step::Backward(dt) => {
                let a = dt / (2.0 * h2);
                solve_neumann_tridiag(a, line, scratch);
                for k in 0..m {
                    g.values[index(k)] = line[k];
                }
            }
        }
    }
}

/// Evolves `rho0` for time `t` under `½Δ` with zero-flux walls. The step is
/// `t / ceil(t / dt)`; the first step is replaced by two backward-Euler half
/// steps to damp the Crank–Nicolson response to rough data.
pub fn heat_neumann_solve(rho0: &DensityGrid, t: f64, dt: f64) -> Result<DensityGrid> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("time must be nonnegative, got {t}")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    if !(rho0.h > 0.0) || rho0.shape.iter().any(|&m| m < 2) || rho0.values.len() != rho0.shape.iter().product::<usize>() {
        return Err(invalid("malformed density grid"));
    }
    rho0.check_normalized()?;
    let mut g = rho0.clone();
    if t == 0.0 {
        return Ok(g);
    }
    let steps = (t / dt).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let (mut line, mut tmp, mut scratch) = (Vec::new(), Vec::new(), Vec::new());
    for s in 0..steps {
        let plan: &[Step] = if s == 0 { &[Step::Backward(0.5 * dt), Step::Backward(0.5 * dt)] } else { &[Step::Crank(dt)] };
        for &st in plan {
            for axis in 0..g.dim() {
                step_axis(&mut g, axis, st, &mut line, &mut tmp, &mut scratch);
            }
        }
        let mass = g.mass();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized(mass));
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::DensityFamily;

    fn bump(cells: usize) -> DensityGrid {
        let f = DensityFamily::CosineBump;
        DensityGrid::from_marginal_cdfs(&BoxSpec::centered(1.0, 1), cells, &[&|x| f.cdf(x)]).unwrap()
    }

    #[test]
    fn uniform_is_stationary() {
        let u = DensityGrid::uniform(&BoxSpec::centered(2.0, 2), 40).unwrap();
        let v = heat_neumann_solve(&u, 0.7, 0.01).unwrap();
        assert!(u.l1_distance(&v).unwrap() < 1e-12);
    }

    #[test]
    fn mass_conserved_and_relaxes() {
        let g = bump(200);
        let v = heat_neumann_solve(&g, 5.0, 0.01).unwrap();
        assert!((v.mass() - 1.0).abs() < 1e-12);
        let u = DensityGrid::uniform(&BoxSpec::centered(1.0, 1), 200).unwrap();
        assert!(v.l1_distance(&u).unwrap() < 1e-3);
    }

    // the cosine mode is an exact Neumann eigenfunction: ρ_t = 1 + e^{-2π² t} cos(2πx)
    #[test]
    fn matches_spectral_solution() {
        let t = 0.02;
        let g = heat_neumann_solve(&bump(400), t, 1e-4).unwrap();
        let a = (-2.0 * std::f64::consts::PI.powi(2) * t).exp();
        let exact = DensityGrid::from_marginal_cdfs(&BoxSpec::centered(1.0, 1), 400, &[&|x: f64| {
            x + 0.5 + a * (2.0 * std::f64::consts::PI * x).sin() / (2.0 * std::f64::consts::PI)
        }])
        .unwrap();
        assert!(g.l1_distance(&exact).unwrap() < 1e-5);
    }

    #[test]
    fn two_d_product_matches_1d() {
        let f = DensityFamily::CosineBump;
        let b2 = BoxSpec::centered(1.0, 2);
        let g2 = DensityGrid::from_marginal_cdfs(&b2, 50, &[&|x| f.cdf(x), &|x| f.cdf(x)]).unwrap();
        let e2 = heat_neumann_solve(&g2, 0.03, 1e-3).unwrap().entropy_wrt_uniform();
        let e1 = heat_neumann_solve(&bump(50), 0.03, 1e-3).unwrap().entropy_wrt_uniform();
        assert!((e2 - 2.0 * e1).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = bump(10);
        assert!(heat_neumann_solve(&g, 0.1, 0.0).is_err());
        assert!(heat_neumann_solve(&g, -1.0, 0.1).is_err());
        let mut bad = g.clone();
        bad.values[0] += 1.0;
        assert!(matches!(heat_neumann_solve(&bad, 0.1, 0.01), Err(Error::NotNormalized(_))));
    }
}
