//! Exact square linear assignment.

use crate::error::{MarketError, Result};
use crate::scalar::Scalar;

/// Permutation `p` minimizing `Σ cost[i][p[i]]`. Among optimal permutations
/// the lexicographically smallest is returned.
pub fn linear_assignment<T: Scalar>(cost: &[Vec<T>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(MarketError::domain("cost matrix must be square"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(MarketError::NonFinite("cost matrix"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let (u, v, optimal) = hungarian(cost);

    // With optimal duals, a permutation is optimal exactly when it only uses
    // edges of zero reduced cost.
    let scale = cost
        .iter()
        .flatten()
        .fold(T::one(), |m, c| m.max(c.abs()));
    // Dual potentials accumulate rounding over the n augmentation phases.
    let tol = T::epsilon() * T::from_count(16 * (n + 1) * (n + 1)) * scale;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| (cost[i][j] - u[i] - v[j]).abs() <= tol).collect())
        .collect();

    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; n];
    for i in 0..n {
        let mut pick = None;
        for j in 0..n {
            if tight[i][j] && !used[j] {
                used[j] = true;
                let ok = has_perfect_matching(&tight, i + 1, &used);
                used[j] = false;
                if ok {
                    pick = Some(j);
                    break;
                }
            }
        }
        let Some(j) = pick else {
            // Rounding broke the tight subgraph; the solver's own optimum
            // stands without the tie-break.
            return Ok(optimal);
        };
        used[j] = true;
        fixed.push(j);
    }
    Ok(fixed)
}

pub fn assignment_cost<T: Scalar>(cost: &[Vec<T>], perm: &[usize]) -> T {
    perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Row and column potentials of an optimal dual plus an optimal assignment
/// (O(n³) shortest augmenting paths).
fn hungarian<T: Scalar>(cost: &[Vec<T>]) -> (Vec<T>, Vec<T>, Vec<usize>) {
    let n = cost.len();
    // 1-based with a virtual column 0.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![T::infinity(); n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = T::infinity();
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    (u[1..].to_vec(), v[1..].to_vec(), assignment)
}

/// Whether rows `from..n` can be matched to the unused columns via tight
/// edges (Kuhn's augmenting paths).
fn has_perfect_matching(tight: &[Vec<bool>], from: usize, used: &[bool]) -> bool {
    let n = tight.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    fn augment(
        i: usize,
        tight: &[Vec<bool>],
        used: &[bool],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for j in 0..tight.len() {
            if tight[i][j] && !used[j] && !seen[j] {
                seen[j] = true;
                if owner[j].map_or(true, |k| augment(k, tight, used, seen, owner)) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    (from..n).all(|i| {
        let mut seen = vec![false; n];
        augment(i, tight, used, &mut seen, &mut owner)
    })
}
