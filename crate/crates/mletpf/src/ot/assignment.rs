//! Hungarian algorithm for the linear assignment problem.
//!
//! Classic `O(n^3)` potentials formulation: rows are inserted one at a time
//! and matched along a shortest augmenting path in the equality graph, with
//! dual potentials updated by the minimal slack at each step.

use ndarray::ArrayView2;

/// Returns a minimum-cost permutation `perm` with `perm[row] = col`.
///
/// `cost` must be square and non-empty; entries must be finite.
pub(crate) fn hungarian(cost: ArrayView2<'_, f64>) -> Vec<usize> {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    debug_assert!(n > 0);

    // 1-indexed arrays; index 0 is the virtual column used to seed each
    // augmenting search.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut matched_row = vec![0_usize; n + 1];
    let mut way = vec![0_usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0_usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let slack = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Augment along the recorded path back to the virtual column.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0_usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    perm
}
