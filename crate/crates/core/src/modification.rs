//! Equalising box counts of a matched pair by rebuilding the outer layer of
//! the box with uniform points.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{exit_point, BoxSpec, Configuration, Window};
use crate::processes::sample_uniform_points;
use crate::stats::ln_factorial;
use crate::parallel::map_trials;
use crate::processes::ProcessModel;
use crate::rng::RngStream;
use crate::stats::pairwise_sum;
use crate::transport::{matching_cost, sample_coupled, CostParams, CouplingKind, Matching};

/// Half-unit cells covering the closed layer `Λ_n \ Λ_{n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLayer {
    pub n: usize,
    pub d: usize,
    pub cells: Vec<BoxSpec>,
    /// flat index in the full `(2n)^d` half-cell grid -> layer index
    lookup: Vec<Option<usize>>,
}

impl BoundaryLayer {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn outer(&self) -> BoxSpec {
        BoxSpec::centered(self.n as f64, self.d)
    }

    pub fn inner(&self) -> BoxSpec {
        BoxSpec::centered(self.n as f64 - 1.0, self.d)
    }

    /// Layer cell containing `p`; a point on shared faces goes to the
    /// lowest-index incident cell.
    pub fn cell_of(&self, p: &[f64]) -> Option<usize> {
        let m = 2 * self.n;
        let lo = -0.5 * self.n as f64;
        let mut choices: Vec<Vec<usize>> = Vec::with_capacity(self.d);
        for &x in p {
            let u = (x - lo) / 0.5;
            if u < -1e-12 || u > m as f64 + 1e-12 {
                return None;
            }
            let j = u.floor();
            let mut c = Vec::with_capacity(2);
            if u == j && j > 0.0 {
                c.push(j as usize - 1);
            }
            if (j as usize) < m {
                c.push(j as usize);
            }
            if c.is_empty() {
                c.push(m - 1);
            }
            choices.push(c);
        }
        let mut best: Option<usize> = None;
        let mut idx = vec![0usize; self.d];
        loop {
            let mut flat = 0;
            let mut stride = 1;
            for i in 0..self.d {
                flat += choices[i][idx[i]] * stride;
                stride *= m;
            }
            if let Some(k) = self.lookup[flat] {
                best = Some(best.map_or(k, |b: usize| b.min(k)));
            }
            let mut i = 0;
            loop {
                if i == self.d {
                    return best;
                }
                idx[i] += 1;
                if idx[i] < choices[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }
}

/// Enumerates the layer cells of side 1/2 for integer `n >= 2`.
pub fn boundary_cells(n: usize, d: usize) -> Result<BoundaryLayer> {
    if n < 2 {
        return Err(invalid(format!("boundary layer needs n >= 2, got {n}")));
    }
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let m = 2 * n;
    let total = m.pow(d as u32);
    let lo = -0.5 * n as f64;
    let mut cells = Vec::new();
    let mut lookup = vec![None; total];
    for (flat, slot) in lookup.iter_mut().enumerate() {
        let mut r = flat;
        let idx: Vec<usize> = (0..d)
            .map(|_| {
                let j = r % m;
                r /= m;
                j
            })
            .collect();
        if idx.iter().any(|&j| j == 0 || j == m - 1) {
            let c: Vec<f64> = idx.iter().map(|&j| lo + 0.25 + 0.5 * j as f64).collect();
            *slot = Some(cells.len());
            cells.push(BoxSpec { side: 0.5, center: c.into() });
        }
    }
    Ok(BoundaryLayer { n, d, cells, lookup })
}

/// Which layer cell a crossing pair is charged to when its segment runs
/// through several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingRule {
    /// the cell where the segment first meets the layer
    First,
    /// the cell adjacent to where it crosses into (or out of) Λ_{n-1}
    #[default]
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossings {
    pub l: usize,
    /// pairs entering Λ_{n-1}, per cell
    pub k: Vec<usize>,
    /// pairs leaving Λ_{n-1}, per cell
    pub k_prime: Vec<usize>,
    /// pair indices of the entering pairs, per cell
    pub v: Vec<Vec<usize>>,
    /// pair indices of the leaving pairs, per cell
    pub v_prime: Vec<Vec<usize>>,
    /// pair indices with both endpoints in Λ_{n-1}
    pub interior: Vec<usize>,
}

fn unit(x: &[f64], y: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / len).collect()
}

fn nudge(p: &[f64], dir: &[f64], eps: f64) -> Vec<f64> {
    p.iter().zip(dir).map(|(a, b)| a + eps * b).collect()
}

/// Cell charged for the segment from `inside` (in Λ_{n-1}) to `outside`.
fn crossing_cell(layer: &BoundaryLayer, inside: &[f64], outside: &[f64], rule: CrossingRule) -> Result<usize> {
    let eps = 1e-9 * (1.0 + layer.n as f64);
    let dir = unit(inside, outside);
    let p = match rule {
        CrossingRule::Last => {
            let (_, z) = exit_point(inside, outside, &layer.inner())?;
            nudge(&z, &dir, eps)
        }
        CrossingRule::First => {
            let (_, z) = exit_point(inside, outside, &layer.outer())?;
            nudge(&z, &dir, -eps)
        }
    };
    layer
        .cell_of(&p)
        .ok_or_else(|| invalid("crossing point outside the boundary layer"))
}

/// Classifies the pairs of `m` against Λ_{n-1}.
pub fn crossing_counts(m: &Matching, layer: &BoundaryLayer, rule: CrossingRule) -> Result<Crossings> {
    if m.dim() != layer.d {
        return Err(Error::DimensionMismatch { expected: layer.d, got: m.dim() });
    }
    let inner = layer.inner();
    let n_cells = layer.len();
    let mut out = Crossings {
        l: 0,
        k: vec![0; n_cells],
        k_prime: vec![0; n_cells],
        v: vec![Vec::new(); n_cells],
        v_prime: vec![Vec::new(); n_cells],
        interior: Vec::new(),
    };
    for (i, (x, y)) in m.pairs().enumerate() {
        match (inner.contains(x), inner.contains(y)) {
            (true, true) => out.interior.push(i),
            (true, false) => {
                let c = crossing_cell(layer, x, y, rule)?;
                out.k_prime[c] += 1;
                out.v_prime[c].push(i);
            }
            (false, true) => {
                let c = crossing_cell(layer, y, x, rule)?;
                out.k[c] += 1;
                out.v[c].push(i);
            }
            (false, false) => continue,
        }
        out.l += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifiedPair {
    pub xi_tilde: Configuration,
    pub eta_tilde: Configuration,
    pub q_tilde: Matching,
    pub crossings: Crossings,
    /// bound on the cost of `q_tilde`: interior cost plus `(|x-y| + 1)^p` per crossing pair
    pub cost_bound: f64,
}

/// Keeps both configurations on Λ_{n-1} and, for each crossing pair, adds a
/// uniform point of its layer cell on the side that lost an endpoint. The
/// matching must pair every point of `xi` and `eta` lying in Λ_{n-1}.
pub fn modify_pair<R: Rng + ?Sized>(
    xi: &Configuration,
    eta: &Configuration,
    m: &Matching,
    layer: &BoundaryLayer,
    rule: CrossingRule,
    params: &CostParams,
    rng: &mut R,
) -> Result<ModifiedPair> {
    let inner = layer.inner();
    let outer = layer.outer();
    let cr = crossing_counts(m, layer, rule)?;
    let d = layer.d;
    let mut xs = xi.restrict(&inner).into_coords();
    let mut ys = eta.restrict(&inner).into_coords();
    let mut q = Matching::empty(d);
    let mut bound = 0.0;
    for &i in &cr.interior {
        q.push(m.source(i), m.target(i));
        bound += params.cost(m.source(i), m.target(i));
    }
    let mut u = Vec::with_capacity(d);
    for (c, pairs) in cr.v.iter().enumerate() {
        for &i in pairs {
            u.clear();
            sample_uniform_points(&layer.cells[c], 1, rng, &mut u);
            xs.extend_from_slice(&u);
            q.push(&u, m.target(i));
            bound += (crate::geometry::dist(m.source(i), m.target(i)) + 1.0).powf(params.p);
        }
    }
    for (c, pairs) in cr.v_prime.iter().enumerate() {
        for &i in pairs {
            u.clear();
            sample_uniform_points(&layer.cells[c], 1, rng, &mut u);
            ys.extend_from_slice(&u);
            q.push(m.source(i), &u);
            bound += (crate::geometry::dist(m.source(i), m.target(i)) + 1.0).powf(params.p);
        }
    }
    let (nx, ny) = (xs.len() / d, ys.len() / d);
    if nx != cr.l || ny != cr.l {
        return Err(invalid(format!(
            "matching does not pair every point in the inner box ({nx} and {ny} points for l = {})",
            cr.l
        )));
    }
    q.source_window = Window::Box(outer.clone());
    q.target_window = Window::Box(outer.clone());
    Ok(ModifiedPair {
        xi_tilde: Configuration::from_flat(d, xs, Window::Box(outer.clone()))?,
        eta_tilde: Configuration::from_flat(d, ys, Window::Box(outer))?,
        q_tilde: q,
        crossings: cr,
        cost_bound: bound,
    })
}

/// Log-density of the modified layer law on `B_{l,k}` with respect to the
/// Poisson layer: `|K| + Σ log k_i! - Σ k_i log|K_i| + log P(B)`, where
/// `|K| = N·cell_volume`. With `cell_volume = 1` this is `N + Σ log k_i! + log P(B)`.
pub fn modified_log_density_correction(k: &[usize], prob: f64, cell_volume: f64) -> Result<f64> {
    if !(prob > 0.0) || prob > 1.0 {
        return Err(if prob == 0.0 { Error::ZeroProbability } else { invalid(format!("probability {prob} outside (0,1]")) });
    }
    if !(cell_volume > 0.0) {
        return Err(invalid("cell volume must be positive"));
    }
    let layer = k.len() as f64 * cell_volume;
    let lf: f64 = k.iter().map(|&ki| ln_factorial(ki as u64)).sum();
    let lv: f64 = k.iter().map(|&ki| ki as f64 * cell_volume.ln()).sum();
    Ok(layer + lf - lv + prob.ln())
}

/// Summary over an ensemble of modifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationReport {
    pub n: usize,
    #[serde(rename = "N")]
    pub cells: usize,
    pub l_histogram: BTreeMap<usize, usize>,
    pub k_totals: Vec<usize>,
    pub cost_before: f64,
    pub cost_after: f64,
}

impl ModificationReport {
    pub fn new(layer: &BoundaryLayer) -> Self {
        Self {
            n: layer.n,
            cells: layer.len(),
            l_histogram: BTreeMap::new(),
            k_totals: vec![0; layer.len()],
            cost_before: 0.0,
            cost_after: 0.0,
        }
    }
}

/// Modifies `trials` coupled realizations drawn on Λ_{n+2}. Costs are per
/// volume of Λ_n, averaged over trials; the cost before is that of the pairs
/// with a source in Λ_n.
#[allow(clippy::too_many_arguments)]
pub fn modification_ensemble(
    a: &ProcessModel,
    b: &ProcessModel,
    coupling: CouplingKind,
    n: usize,
    d: usize,
    rule: CrossingRule,
    params: &CostParams,
    trials: usize,
    stream: &RngStream,
) -> Result<ModificationReport> {
    let layer = boundary_cells(n, d)?;
    let big = BoxSpec::centered(n as f64 + 2.0, d);
    let outer = layer.outer();
    let runs = map_trials(trials, |t| {
        let mut rng = stream.substream(t as u64).rng();
        let m = sample_coupled(a, b, coupling, &big, params, &mut rng)?;
        let r = modify_pair(&m.source_config(), &m.target_config(), &m, &layer, rule, params, &mut rng)?;
        Ok((r.crossings, matching_cost(&m, params, &outer), r.q_tilde.total_cost(params)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut rep = ModificationReport::new(&layer);
    for (cr, _, _) in &runs {
        *rep.l_histogram.entry(cr.l).or_default() += 1;
        for (tot, k) in rep.k_totals.iter_mut().zip(&cr.k) {
            *tot += k;
        }
    }
    let per = (trials.max(1) as f64) * outer.volume();
    rep.cost_before = pairwise_sum(&runs.iter().map(|r| r.1).collect::<Vec<_>>()) / per;
    rep.cost_after = pairwise_sum(&runs.iter().map(|r| r.2).collect::<Vec<_>>()) / per;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::rng::RngStream;

    #[test]
    fn cell_counts() {
        let l = boundary_cells(4, 1).unwrap();
        assert_eq!(l.len(), 2);
        assert!(l.len() <= 4usize.pow(1) * 4usize.pow(0));
        let l = boundary_cells(3, 2).unwrap();
        assert_eq!(l.len(), 20);
        assert!(boundary_cells(1, 2).is_err());
    }

    // the layer has volume n^d - (n-1)^d; cells must be interior-disjoint, lie
    // in the layer, and sum to that volume
    #[test]
    fn exact_cover() {
        for (n, d) in [(2, 1), (3, 2), (4, 2), (3, 3)] {
            let l = boundary_cells(n, d).unwrap();
            let vol: f64 = l.cells.iter().map(|c| c.volume()).sum();
            let want = (n as f64).powi(d as i32) - (n as f64 - 1.0).powi(d as i32);
            assert!((vol - want).abs() < 1e-12);
            assert!(l.len() <= 4usize.pow(d as u32) * n.pow(d as u32 - 1));
            let inner = l.inner();
            let outer = l.outer();
            for (a, ca) in l.cells.iter().enumerate() {
                assert!(outer.contains(&ca.center));
                assert!(!inner.contains(&ca.center));
                for cb in &l.cells[a + 1..] {
                    let overlap: f64 = (0..d)
                        .map(|i| (ca.hi(i).min(cb.hi(i)) - ca.lo(i).max(cb.lo(i))).max(0.0))
                        .product();
                    assert_eq!(overlap, 0.0);
                }
            }
        }
    }

    fn pair(d: usize, x: &[f64], y: &[f64]) -> Matching {
        Matching::new(d, x.to_vec(), y.to_vec(), Window::WholeSpace, Window::WholeSpace).unwrap()
    }

    #[test]
    fn crossing_examples() {
        let layer = boundary_cells(4, 2).unwrap();
        let m = pair(2, &[0.0, 0.0, 0.3, 0.2], &[0.1, 0.0, -0.4, 1.0]);
        let c = crossing_counts(&m, &layer, CrossingRule::Last).unwrap();
        assert_eq!(c.l, 2);
        assert!(c.k.iter().chain(&c.k_prime).all(|&v| v == 0));

        let m = pair(2, &[0.0, 0.0], &[2.6, 0.0]);
        let c = crossing_counts(&m, &layer, CrossingRule::Last).unwrap();
        assert_eq!(c.l, 1);
        let j = layer.cell_of(&[1.5 + 1e-9, 0.0]).unwrap();
        assert_eq!(c.k_prime[j], 1);
        assert!(layer.cells[j].contains(&[1.5, 0.0]));
        assert_eq!(c.k_prime.iter().sum::<usize>(), 1);
        assert_eq!(c.k.iter().sum::<usize>(), 0);
    }

    #[test]
    fn bookkeeping_totals() {
        let layer = boundary_cells(4, 2).unwrap();
        let mut rng = RngStream::new(1, 1).rng();
        let mut m = Matching::empty(2);
        let (mut ins, mut outs) = (0, 0);
        let inner = layer.inner();
        for _ in 0..500 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.5..2.5)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.5..2.5)).collect();
            match (inner.contains(&x), inner.contains(&y)) {
                (false, true) => ins += 1,
                (true, false) => outs += 1,
                _ => {}
            }
            m.push(&x, &y);
        }
        for rule in [CrossingRule::First, CrossingRule::Last] {
            let c = crossing_counts(&m, &layer, rule).unwrap();
            assert_eq!(c.k.iter().sum::<usize>(), ins);
            assert_eq!(c.k_prime.iter().sum::<usize>(), outs);
        }
    }

    #[test]
    fn modify_single_entering_pair() {
        let layer = boundary_cells(4, 2).unwrap();
        let outer = layer.outer();
        let xi = Configuration::from_points(2, &[Point::new(&[1.8, 0.2])], Window::Box(outer.clone())).unwrap();
        let eta = Configuration::from_points(2, &[Point::new(&[0.5, 0.2])], Window::Box(outer)).unwrap();
        let m = pair(2, &[1.8, 0.2], &[0.5, 0.2]);
        let mut rng = RngStream::new(2, 0).rng();
        let r = modify_pair(&xi, &eta, &m, &layer, CrossingRule::Last, &CostParams::default(), &mut rng).unwrap();
        assert_eq!(r.xi_tilde.len(), 1);
        assert_eq!(r.eta_tilde.len(), 1);
        let j = r.crossings.k.iter().position(|&k| k == 1).unwrap();
        assert!(layer.cells[j].contains(r.xi_tilde.point(0)));
        assert!(layer.cells[j].contains(&[1.5, 0.2]));
        assert!(r.q_tilde.total_cost(&CostParams::default()) <= r.cost_bound);
    }

    #[test]
    fn no_crossings_keeps_interiors() {
        let layer = boundary_cells(3, 1).unwrap();
        let outer = layer.outer();
        let xi = Configuration::from_flat(1, vec![0.1, 1.3], Window::Box(outer.clone())).unwrap();
        let eta = Configuration::from_flat(1, vec![0.2, 1.4], Window::Box(outer)).unwrap();
        let m = pair(1, &[0.1, 1.3], &[0.2, 1.4]);
        let mut rng = RngStream::new(3, 0).rng();
        let r = modify_pair(&xi, &eta, &m, &layer, CrossingRule::Last, &CostParams::default(), &mut rng).unwrap();
        assert_eq!(r.xi_tilde.coords(), &[0.1]);
        assert_eq!(r.eta_tilde.coords(), &[0.2]);
        assert_eq!(r.q_tilde.len(), 1);
    }

    #[test]
    fn density_correction_examples() {
        let n = 6;
        assert_eq!(modified_log_density_correction(&vec![0; n], 1.0, 1.0).unwrap(), 6.0);
        let mut k = vec![0; n];
        k[0] = 2;
        let v = modified_log_density_correction(&k, 0.5, 1.0).unwrap();
        assert!((v - (6.0 + 2f64.ln() + 0.5f64.ln())).abs() < 1e-15);
        assert!(matches!(modified_log_density_correction(&k, 0.0, 1.0), Err(Error::ZeroProbability)));
    }

    #[test]
    fn ensemble_histogram_counts_every_trial() {
        let a = ProcessModel::LatticeGrid { stationarized: true };
        let b = ProcessModel::grid(crate::processes::DensityFamily::UniformCell { epsilon: 1.0 }, true);
        let rep = modification_ensemble(&a, &b, CouplingKind::SharedGrid, 3, 2, CrossingRule::Last, &CostParams::default(), 30, &RngStream::new(4, 0)).unwrap();
        assert_eq!(rep.cells, 20);
        assert_eq!(rep.l_histogram.values().sum::<usize>(), 30);
        assert!(rep.cost_before > 0.0 && rep.cost_after > 0.0);
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["N"], 20);
    }
}
