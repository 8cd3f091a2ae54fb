//! Exact rectangular linear assignment (shortest augmenting paths with dual
//! potentials). Rows are assigned to distinct columns; `rows <= cols`.

use crate::error::{Error, Result};

pub const DEFAULT_CAP: usize = 2000;

/// Minimum-cost assignment of every row of the `rows x cols` row-major matrix.
/// Returns the column of each row.
pub fn solve(cost: &[f64], rows: usize, cols: usize, cap: usize) -> Result<Vec<usize>> {
    if rows > cols {
        return Err(Error::CardinalityMismatch { left: rows, right: cols });
    }
    if rows > cap {
        return Err(Error::TooLarge { size: rows, cap });
    }
    debug_assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return Ok(Vec::new());
    }
    let inf = f64::INFINITY;
    // 1-based potentials; column 0 is the virtual start
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    let mut minv = vec![inf; cols + 1];
    let mut used = vec![false; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &cost[(i0 - 1) * cols..i0 * cols];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![usize::MAX; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    Ok(assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn rec(cost: &[f64], rows: usize, cols: usize, i: usize, used: &mut Vec<bool>) -> f64 {
            if i == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..cols {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[i * cols + j] + rec(cost, rows, cols, i + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, rows, cols, 0, &mut vec![false; cols])
    }

    #[test]
    fn rectangular_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let rows = rng.random_range(0..=5);
            let cols = rng.random_range(rows..=7);
            let cost: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..3.0)).collect();
            let a = solve(&cost, rows, cols, DEFAULT_CAP).unwrap();
            let mut seen = vec![false; cols];
            for &j in &a {
                assert!(!seen[j]);
                seen[j] = true;
            }
            let got: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * cols + j]).sum();
            assert!((got - brute(&cost, rows, cols)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_oversize_and_wide() {
        assert!(matches!(solve(&[0.0; 6], 3, 2, 10), Err(Error::CardinalityMismatch { .. })));
        assert!(matches!(solve(&[0.0; 9], 3, 3, 2), Err(Error::TooLarge { .. })));
    }
}
