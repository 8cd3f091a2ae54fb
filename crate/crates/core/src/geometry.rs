//! Boxes, configurations and the small geometric maps everything else uses.

use std::cmp::Ordering;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A point of R^d. Up to four coordinates are stored inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(pub SmallVec<[f64; 4]>);

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        Self(SmallVec::from_slice(coords))
    }

    pub fn origin(d: usize) -> Self {
        Self(SmallVec::from_elem(0.0, d))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Point {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Self(SmallVec::from_vec(v))
    }
}

/// The closed box `center + [-side/2, side/2]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub side: f64,
    pub center: Point,
}

impl BoxSpec {
    pub fn new(side: f64, center: Point) -> Result<Self> {
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::InvalidParameter(format!("box side must be positive, got {side}")));
        }
        Ok(Self { side, center })
    }

    /// Λ_n centred at the origin of R^d.
    pub fn centered(side: f64, d: usize) -> Self {
        Self { side, center: Point::origin(d) }
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn lo(&self, i: usize) -> f64 {
        self.center[i] - 0.5 * self.side
    }

    pub fn hi(&self, i: usize) -> f64 {
        self.center[i] + 0.5 * self.side
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .enumerate()
            .all(|(i, &x)| x >= self.lo(i) && x <= self.hi(i))
    }

    /// Same centre, side changed by `delta` (e.g. -1 for Λ_{n-1}).
    pub fn grown(&self, delta: f64) -> Self {
        Self { side: self.side + delta, center: self.center.clone() }
    }

    pub fn translated(&self, v: &[f64]) -> Self {
        let c: Vec<f64> = self.center.iter().zip(v).map(|(a, b)| a + b).collect();
        Self { side: self.side, center: c.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    Box(BoxSpec),
    WholeSpace,
}

impl Window {
    pub fn as_box(&self) -> Option<&BoxSpec> {
        match self {
            Window::Box(b) => Some(b),
            Window::WholeSpace => None,
        }
    }
}

/// A finite multiset of points in R^d, stored as a flat coordinate array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    dim: usize,
    coords: Vec<f64>,
    pub window: Window,
}

impl Configuration {
    pub fn empty(dim: usize, window: Window) -> Self {
        Self { dim, coords: Vec::new(), window }
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, window: Window) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: coords.len() });
        }
        if let Window::Box(b) = &window {
            if b.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: b.dim() });
            }
            if coords.chunks_exact(dim).any(|p| !b.contains(p)) {
                return Err(Error::OutsideBox);
            }
        }
        Ok(Self { dim, coords, window })
    }

    pub fn from_points(dim: usize, points: &[Point], window: Window) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.dim() });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, window)
    }

    /// Builds without the window containment check (callers guarantee it).
    pub(crate) fn from_flat_unchecked(dim: usize, coords: Vec<f64>, window: Window) -> Self {
        debug_assert_eq!(coords.len() % dim, 0);
        Self { dim, coords, window }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn push(&mut self, p: &[f64]) {
        debug_assert_eq!(p.len(), self.dim);
        self.coords.extend_from_slice(p);
    }

    /// Points inside `b`, with window set to `b`.
    pub fn restrict(&self, b: &BoxSpec) -> Self {
        let coords = self.points().filter(|p| b.contains(p)).flatten().copied().collect();
        Self { dim: self.dim, coords, window: Window::Box(b.clone()) }
    }

    pub fn count_in(&self, b: &BoxSpec) -> usize {
        self.points().filter(|p| b.contains(p)).count()
    }
}

pub fn dist_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    dist_sq(x, y).sqrt()
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    Ok(())
}

pub(crate) fn lex_cmp(x: &[f64], y: &[f64]) -> Ordering {
    for (a, b) in x.iter().zip(y) {
        match a.partial_cmp(b) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Strict lexicographic order on R^d.
pub fn lex_less(x: &[f64], y: &[f64]) -> Result<bool> {
    check_dims(x, y)?;
    Ok(lex_cmp(x, y) == Ordering::Less)
}

/// The lexicographic labeling of a configuration. Equal points keep input order.
pub fn label_lex(c: &Configuration) -> Vec<Point> {
    let mut pts: Vec<Point> = c.points().map(Point::new).collect();
    pts.sort_by(|a, b| lex_cmp(a, b));
    pts
}

/// Index permutation that sorts `c` lexicographically (stable).
pub fn lex_order(c: &Configuration) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|&i, &j| lex_cmp(c.point(i), c.point(j)));
    idx
}

/// `(1 - t) x + t y`, exact at both ends.
pub fn geo(x: &[f64], y: &[f64], t: f64) -> Result<Point> {
    check_dims(x, y)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(geo_unchecked(x, y, t))
}

pub(crate) fn geo_unchecked(x: &[f64], y: &[f64], t: f64) -> Point {
    let v: SmallVec<[f64; 4]> = x.iter().zip(y).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    Point(v)
}

/// Triangle wave of period `2n` that is the identity on `[-n/2, n/2]`.
pub fn triangle_wave(x: f64, n: f64) -> f64 {
    if x.abs() <= 0.5 * n {
        return x;
    }
    let period = 2.0 * n;
    // shift so the identity branch starts at 0
    let r = (x + 0.5 * n).rem_euclid(period);
    let r = if r >= period { 0.0 } else { r };
    if r <= n {
        r - 0.5 * n
    } else {
        1.5 * n - r
    }
}

/// Folds a free position back into `z + Λ_n` (the box is `z + box`; only `box.side` is used
/// together with the anchor cell `z`, the box centre being taken as `z`).
pub fn fold_reflect(bx: &BoxSpec, anchor: &[f64], p: &[f64]) -> Result<Point> {
    check_dims(anchor, p)?;
    if bx.dim() != p.len() {
        return Err(Error::DimensionMismatch { expected: bx.dim(), got: p.len() });
    }
    let v: SmallVec<[f64; 4]> = p
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = anchor[i] + bx.center[i];
            if (x - c).abs() <= 0.5 * bx.side {
                return x;
            }
            c + triangle_wave(x - c, bx.side)
        })
        .collect();
    Ok(Point(v))
}

/// Last time `t` in [0,1] with `(1-t)x + t y` in the closed box, and that point.
pub fn exit_point(x: &[f64], y: &[f64], bx: &BoxSpec) -> Result<(f64, Point)> {
    check_dims(x, y)?;
    if bx.dim() != x.len() {
        return Err(Error::DimensionMismatch { expected: bx.dim(), got: x.len() });
    }
    if !bx.contains(x) {
        return Err(Error::OutsideBox);
    }
    if bx.contains(y) {
        return Ok((1.0, Point::new(y)));
    }
    // the segment meets a convex set in an interval starting at 0
    let mut t_star = 1.0_f64;
    for i in 0..x.len() {
        let dx = y[i] - x[i];
        if y[i] > bx.hi(i) {
            t_star = t_star.min((bx.hi(i) - x[i]) / dx);
        } else if y[i] < bx.lo(i) {
            t_star = t_star.min((bx.lo(i) - x[i]) / dx);
        }
    }
    let t_star = t_star.clamp(0.0, 1.0);
    let mut z = geo_unchecked(x, y, t_star);
    // pin the exit coordinate onto the face to avoid round-off leaving the box
    for i in 0..x.len() {
        z[i] = z[i].clamp(bx.lo(i), bx.hi(i));
    }
    Ok((t_star, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn p(v: &[f64]) -> Point {
        Point::new(v)
    }

    #[test]
    fn lex_examples() {
        assert!(lex_less(&[0.0, 1.0], &[0.0, 2.0]).unwrap());
        assert!(!lex_less(&[1.0, 0.0], &[1.0, 0.0]).unwrap());
        assert!(lex_less(&[0.0, 5.0], &[1.0, -5.0]).unwrap());
        assert!(lex_less(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn label_examples() {
        let c = Configuration::from_points(2, &[p(&[1.0, 0.0]), p(&[0.0, 0.0])], Window::WholeSpace).unwrap();
        assert_eq!(label_lex(&c), vec![p(&[0.0, 0.0]), p(&[1.0, 0.0])]);
        assert!(label_lex(&Configuration::empty(2, Window::WholeSpace)).is_empty());
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for perm in permutations(n - 1) {
            for pos in 0..=perm.len() {
                let mut q = perm.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    // oracle: the lexicographic labeling is the unique permutation whose
    // consecutive entries are non-decreasing
    #[test]
    fn label_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pts: Vec<Point> = (0..5)
                .map(|_| p(&[rng.random_range(0..3) as f64, rng.random::<f64>()]))
                .collect();
            let c = Configuration::from_points(2, &pts, Window::WholeSpace).unwrap();
            let perms = permutations(5);
            assert_eq!(perms.len(), 120);
            let sorted: Vec<Point> = perms
                .iter()
                .map(|perm| perm.iter().map(|&i| pts[i].clone()).collect::<Vec<_>>())
                .find(|cand| cand.windows(2).all(|w| !lex_less(&w[1], &w[0]).unwrap()))
                .unwrap();
            assert_eq!(label_lex(&c), sorted);
        }
    }

    #[test]
    fn label_idempotent_and_permutation_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for k in 0..=6 {
            let pts: Vec<Point> = (0..k).map(|_| p(&[rng.random(), rng.random()])).collect();
            let base = label_lex(&Configuration::from_points(2, &pts, Window::WholeSpace).unwrap());
            for perm in permutations(k) {
                let q: Vec<Point> = perm.iter().map(|&i| pts[i].clone()).collect();
                let c = Configuration::from_points(2, &q, Window::WholeSpace).unwrap();
                assert_eq!(label_lex(&c), base);
            }
            let again = Configuration::from_points(2, &base, Window::WholeSpace).unwrap();
            assert_eq!(label_lex(&again), base);
        }
    }

    #[test]
    fn geo_examples() {
        assert_eq!(geo(&[0.0, 0.0], &[2.0, 0.0], 0.5).unwrap(), p(&[1.0, 0.0]));
        assert_eq!(geo(&[1.0, 1.0], &[1.0, 1.0], 0.3).unwrap(), p(&[1.0, 1.0]));
        let g = geo(&[0.0, 0.0], &[3.0, 0.0], 1.0 / 3.0).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15 && g[1] == 0.0);
        assert!(matches!(geo(&[0.0], &[1.0], 1.5), Err(Error::TimeOutOfRange(_))));
    }

    // independent oracle: walk the path and flip direction at every wall hit
    fn reflect_event_driven(x0: f64, lo: f64, hi: f64) -> f64 {
        let mut pos = x0;
        let mut guard = 0;
        while pos < lo || pos > hi {
            if pos > hi {
                pos = 2.0 * hi - pos;
            } else {
                pos = 2.0 * lo - pos;
            }
            guard += 1;
            assert!(guard < 100_000);
        }
        pos
    }

    #[test]
    fn fold_examples() {
        let b = BoxSpec::centered(1.0, 1);
        assert!((fold_reflect(&b, &[0.0], &[0.7]).unwrap()[0] - 0.3).abs() < 1e-12);
        assert_eq!(fold_reflect(&b, &[0.0], &[0.2]).unwrap()[0], 0.2);
        assert!(fold_reflect(&b, &[0.0], &[2.0]).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn fold_matches_event_driven() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let d = rng.random_range(1..=2);
            let side = rng.random_range(0.5..4.0);
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-3..=3) as f64 * side).collect();
            let b = BoxSpec::centered(side, d);
            let pt: Vec<f64> = (0..d).map(|i| z[i] + rng.random_range(-20.0..20.0)).collect();
            let f = fold_reflect(&b, &z, &pt).unwrap();
            for i in 0..d {
                let want = reflect_event_driven(pt[i], z[i] - side / 2.0, z[i] + side / 2.0);
                assert!((f[i] - want).abs() < 1e-12, "{} vs {}", f[i], want);
            }
        }
    }

    #[test]
    fn exit_examples() {
        let b = BoxSpec::centered(2.0, 2);
        let (t, z) = exit_point(&[0.0, 0.0], &[3.0, 0.0], &b).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(z, p(&[1.0, 0.0]));
        let (t, z) = exit_point(&[0.0, 0.0], &[0.5, 0.0], &b).unwrap();
        assert_eq!((t, z), (1.0, p(&[0.5, 0.0])));
        let (t, z) = exit_point(&[1.0, 0.2], &[2.0, 0.5], &b).unwrap();
        assert_eq!((t, z), (0.0, p(&[1.0, 0.2])));
        assert!(matches!(exit_point(&[2.0, 0.0], &[0.0, 0.0], &b), Err(Error::OutsideBox)));
    }

    fn on_boundary(b: &BoxSpec, z: &[f64]) -> bool {
        b.contains(z)
            && (0..z.len()).any(|i| (z[i] - b.lo(i)).abs() < 1e-12 || (z[i] - b.hi(i)).abs() < 1e-12)
    }

    proptest! {
        #[test]
        fn geo_distance_scales(x in prop::collection::vec(-5.0..5.0f64, 3),
                               y in prop::collection::vec(-5.0..5.0f64, 3),
                               t in 0.0..=1.0f64) {
            let g = geo(&x, &y, t).unwrap();
            prop_assert!((dist(&g, &x) - t * dist(&x, &y)).abs() < 1e-12);
        }

        #[test]
        fn exit_on_boundary_or_target(x in prop::collection::vec(-1.0..1.0f64, 2),
                                      y in prop::collection::vec(-6.0..6.0f64, 2)) {
            let b = BoxSpec::centered(2.0, 2);
            let (t, z) = exit_point(&x, &y, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&t));
            prop_assert!(z[..] == y[..] || on_boundary(&b, &z));
            prop_assert!(dist(&x, &z) <= dist(&x, &y) + 1e-12);
        }

        #[test]
        fn fold_lands_in_box(x in -100.0..100.0f64, side in 0.1..5.0f64) {
            let b = BoxSpec::centered(side, 1);
            let f = fold_reflect(&b, &[0.0], &[x]).unwrap();
            prop_assert!(f[0].abs() <= side / 2.0 + 1e-12);
            if x.abs() <= side / 2.0 {
                prop_assert!((f[0] - x).abs() < 1e-12);
            }
        }
    }
}
