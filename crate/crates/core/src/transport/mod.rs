//! Matchings, their costs, and Monte Carlo estimates of cost per volume.

pub mod assignment;
mod estimate;

pub use estimate::*;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dist, dist_sq, exit_point, lex_cmp, BoxSpec, Configuration, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub p: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self { p: 2.0 }
    }
}

impl CostParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(invalid(format!("cost exponent must be >= 1, got {p}")));
        }
        Ok(Self { p })
    }

    #[inline]
    pub fn cost(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.p == 2.0 {
            dist_sq(x, y)
        } else if self.p == 1.0 {
            dist(x, y)
        } else {
            dist_sq(x, y).powf(0.5 * self.p)
        }
    }
}

/// A finite set of pairs `(x_i, y_i)`, stored as two flat coordinate arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    dim: usize,
    sources: Vec<f64>,
    targets: Vec<f64>,
    pub source_window: Window,
    pub target_window: Window,
}

impl Matching {
    pub fn new(dim: usize, sources: Vec<f64>, targets: Vec<f64>, source_window: Window, target_window: Window) -> Result<Self> {
        if dim == 0 || !sources.len().is_multiple_of(dim) || !targets.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: sources.len() });
        }
        if sources.len() != targets.len() {
            return Err(Error::CardinalityMismatch { left: sources.len() / dim, right: targets.len() / dim });
        }
        Ok(Self { dim, sources, targets, source_window, target_window })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, sources: Vec::new(), targets: Vec::new(), source_window: Window::WholeSpace, target_window: Window::WholeSpace }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sources.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn source(&self, i: usize) -> &[f64] {
        &self.sources[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.dim..(i + 1) * self.dim]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.sources.chunks_exact(self.dim).zip(self.targets.chunks_exact(self.dim))
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        self.sources.extend_from_slice(x);
        self.targets.extend_from_slice(y);
    }

    pub fn source_config(&self) -> Configuration {
        Configuration::from_flat_unchecked(self.dim, self.sources.clone(), self.source_window.clone())
    }

    pub fn target_config(&self) -> Configuration {
        Configuration::from_flat_unchecked(self.dim, self.targets.clone(), self.target_window.clone())
    }

    /// The same pairs read from target to source.
    pub fn reversed(&self) -> Self {
        Self {
            dim: self.dim,
            sources: self.targets.clone(),
            targets: self.sources.clone(),
            source_window: self.target_window.clone(),
            target_window: self.source_window.clone(),
        }
    }

    pub fn translated(&self, v: &[f64]) -> Self {
        let shift = |xs: &[f64]| -> Vec<f64> {
            xs.chunks_exact(self.dim).flat_map(|p| p.iter().zip(v).map(|(a, b)| a + b)).collect()
        };
        Self {
            dim: self.dim,
            sources: shift(&self.sources),
            targets: shift(&self.targets),
            source_window: Window::WholeSpace,
            target_window: Window::WholeSpace,
        }
    }

    /// Pairs whose source lies in `b`.
    pub fn restrict_sources(&self, b: &BoxSpec) -> Self {
        let mut out = Self::empty(self.dim);
        for (x, y) in self.pairs() {
            if b.contains(x) {
                out.push(x, y);
            }
        }
        out.source_window = Window::Box(b.clone());
        out.target_window = self.target_window.clone();
        out
    }

    pub fn total_cost(&self, params: &CostParams) -> f64 {
        let c: Vec<f64> = self.pairs().map(|(x, y)| params.cost(x, y)).collect();
        crate::stats::pairwise_sum(&c)
    }
}

/// Sum of `|x - y|^p` over pairs whose source lies in `window`.
pub fn matching_cost(m: &Matching, params: &CostParams, window: &BoxSpec) -> f64 {
    let c: Vec<f64> = m.pairs().filter(|(x, _)| window.contains(x)).map(|(x, y)| params.cost(x, y)).collect();
    crate::stats::pairwise_sum(&c)
}

/// Sum of `|x - y|^p` over pairs whose target lies in `window`.
pub fn matching_cost_incoming(m: &Matching, params: &CostParams, window: &BoxSpec) -> f64 {
    let c: Vec<f64> = m.pairs().filter(|(_, y)| window.contains(y)).map(|(x, y)| params.cost(x, y)).collect();
    crate::stats::pairwise_sum(&c)
}

fn cost_matrix(xs: &Configuration, ys: &Configuration, params: &CostParams) -> Vec<f64> {
    let mut c = Vec::with_capacity(xs.len() * ys.len());
    for x in xs.points() {
        for y in ys.points() {
            c.push(params.cost(x, y));
        }
    }
    c
}

/// Minimum-cost perfect matching between equal-size configurations.
pub fn optimal_matching(xi: &Configuration, eta: &Configuration, params: &CostParams) -> Result<Matching> {
    optimal_matching_capped(xi, eta, params, assignment::DEFAULT_CAP)
}

pub fn optimal_matching_capped(xi: &Configuration, eta: &Configuration, params: &CostParams, cap: usize) -> Result<Matching> {
    if xi.len() != eta.len() {
        return Err(Error::CardinalityMismatch { left: xi.len(), right: eta.len() });
    }
    partial_assignment(xi, eta, params, cap)
}

/// Minimum-cost matching of every point of `xi` to a distinct point of `eta`
/// (`|eta| >= |xi|`), without clipping.
pub fn optimal_partial_matching(xi: &Configuration, eta: &Configuration, params: &CostParams) -> Result<Matching> {
    if eta.len() < xi.len() {
        return Err(Error::TooSparse { sources: xi.len(), targets: eta.len() });
    }
    partial_assignment(xi, eta, params, assignment::DEFAULT_CAP)
}

fn partial_assignment(xi: &Configuration, eta: &Configuration, params: &CostParams, cap: usize) -> Result<Matching> {
    if xi.dim() != eta.dim() {
        return Err(Error::DimensionMismatch { expected: xi.dim(), got: eta.dim() });
    }
    let c = cost_matrix(xi, eta, params);
    let a = assignment::solve(&c, xi.len(), eta.len(), cap)?;
    let mut m = Matching::empty(xi.dim());
    for (i, &j) in a.iter().enumerate() {
        m.push(xi.point(i), eta.point(j));
    }
    m.source_window = xi.window.clone();
    m.target_window = eta.window.clone();
    Ok(m)
}

/// Sorted matching in one dimension; optimal for every convex cost.
pub fn monotone_matching_1d(xi: &Configuration, eta: &Configuration) -> Result<Matching> {
    if xi.dim() != 1 || eta.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: xi.dim().max(eta.dim()) });
    }
    if xi.len() != eta.len() {
        return Err(Error::CardinalityMismatch { left: xi.len(), right: eta.len() });
    }
    let mut a = xi.coords().to_vec();
    let mut b = eta.coords().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Matching::new(1, a, b, xi.window.clone(), eta.window.clone())
}

/// Optimal partial matching of all of `xi` (on the box `b`) into `eta`, after
/// which every exterior target is replaced by the point where its segment
/// leaves `b`. Returns the clipped matching and the clipped target set.
pub fn boundary_partial_matching(
    xi: &Configuration,
    eta: &Configuration,
    b: &BoxSpec,
    params: &CostParams,
) -> Result<(Matching, Configuration)> {
    if eta.len() < xi.len() {
        return Err(Error::TooSparse { sources: xi.len(), targets: eta.len() });
    }
    let raw = partial_assignment(xi, eta, params, assignment::DEFAULT_CAP)?;
    clip_to_box(&raw, b)
}

/// Replaces each target outside `b` by the exit point of its segment.
pub fn clip_to_box(m: &Matching, b: &BoxSpec) -> Result<(Matching, Configuration)> {
    let mut out = Matching::empty(m.dim());
    for (x, y) in m.pairs() {
        let (_, z) = exit_point(x, y, b)?;
        out.push(x, &z);
    }
    out.source_window = Window::Box(b.clone());
    out.target_window = Window::Box(b.clone());
    let eta_n = out.target_config();
    Ok((out, eta_n))
}

/// Number of pair swaps that would lower the cost (0 for an optimal matching).
pub fn swap_audit(m: &Matching, params: &CostParams, tol: f64) -> usize {
    let k = m.len();
    let mut bad = 0;
    for i in 0..k {
        for j in i + 1..k {
            let now = params.cost(m.source(i), m.target(i)) + params.cost(m.source(j), m.target(j));
            let swapped = params.cost(m.source(i), m.target(j)) + params.cost(m.source(j), m.target(i));
            if swapped < now - tol {
                bad += 1;
            }
        }
    }
    bad
}

/// Matching sorted by source, lexicographically (canonical form for output).
pub fn canonical(m: &Matching) -> Matching {
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|&i, &j| lex_cmp(m.source(i), m.source(j)).then(lex_cmp(m.target(i), m.target(j))));
    let mut out = Matching::empty(m.dim());
    for i in idx {
        out.push(m.source(i), m.target(i));
    }
    out.source_window = m.source_window.clone();
    out.target_window = m.target_window.clone();
    out
}
