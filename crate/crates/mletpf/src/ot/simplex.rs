//! Transportation simplex for dense discrete transport problems.
//!
//! The solver keeps a spanning-tree basis over the bipartite supply/demand
//! graph and pivots with a block-search entering rule.  Supplies are
//! perturbed by distinct multiples of a tiny constant so north-west-corner
//! initialisation and the early pivots avoid ties; once an optimal basis is
//! found, flows are recomputed on that tree from the *unperturbed* marginals
//! by leaf elimination, which restores exact feasibility.  If the recomputed
//! flows come out negative (possible only for near-degenerate data), the
//! problem is re-solved from scratch under Bland's rule, which is slower but
//! immune to both cycling and the perturbation.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Per-row supply perturbation quantum.
const PERTURBATION: f64 = 1e-13;

/// Flows this close to zero count as degenerate pivots.
const DEGENERATE_FLOW: f64 = 1e-15;

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const STALL_LIMIT: u32 = 64;

/// Most negative recomputed flow accepted (and clamped) after leaf
/// elimination before the solver falls back to an unperturbed re-solve.
const NEGATIVE_FLOW_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy)]
struct Arc {
    row: usize,
    col: usize,
    flow: f64,
}

/// Solves `min <x, cost>` subject to row sums `a` and column sums `b`.
///
/// Preconditions (enforced by the public wrappers): `a.len(), b.len() >= 2`,
/// all entries strictly positive, and both sides carry equal total mass.
pub(crate) fn solve(
    a: &[f64],
    b: &[f64],
    cost: &Array2<f64>,
) -> Result<Vec<(usize, usize, f64)>> {
    let n = a.len();
    let m = b.len();
    debug_assert!(n >= 2 && m >= 2);
    debug_assert_eq!(cost.dim(), (n, m));

    // Perturbed run: distinct supply offsets, absorbed by the last demand.
    let mut ap = a.to_vec();
    let mut total_offset = 0.0;
    for (i, s) in ap.iter_mut().enumerate() {
        let offset = (i + 1) as f64 * PERTURBATION;
        *s += offset;
        total_offset += offset;
    }
    let mut bp = b.to_vec();
    bp[m - 1] += total_offset;

    let basis = optimize(&ap, &bp, cost)?;
    match recompute_flows(n, m, &basis, a, b) {
        Some(entries) => Ok(entries),
        None => {
            // Exact re-solve: no perturbation, Bland's rule throughout; the
            // pivot updates themselves keep flows non-negative and feasible.
            let basis = optimize_bland(a, b, cost)?;
            recompute_flows(n, m, &basis, a, b).ok_or(Error::InvalidInput(
                "transport solver could not recover a feasible vertex".into(),
            ))
        }
    }
}

fn optimize(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<Vec<Arc>> {
    run_simplex(a, b, cost, false)
}

fn optimize_bland(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<Vec<Arc>> {
    run_simplex(a, b, cost, true)
}

fn run_simplex(
    a: &[f64],
    b: &[f64],
    cost: &Array2<f64>,
    always_bland: bool,
) -> Result<Vec<Arc>> {
    let n = a.len();
    let m = b.len();
    let mut basis = north_west_corner(a, b);
    let mut is_basic = vec![false; n * m];
    for arc in &basis {
        is_basic[arc.row * m + arc.col] = true;
    }

    let cmax = cost.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-11 * (1.0 + cmax);
    let block = 64.max((n * m).isqrt());
    let pivot_limit = 10_000 + 4 * (n as u64) * (m as u64);

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut adjacency = vec![Vec::new(); n + m];
    let mut scan_start = 0;
    let mut bland = always_bland;
    let mut stall = 0_u32;

    for _pivot in 0..pivot_limit {
        build_adjacency(&basis, n, &mut adjacency);
        compute_duals(cost, &basis, &adjacency, n, &mut u, &mut v);

        let entering = if bland {
            find_entering_bland(cost, &is_basic, &u, &v, tol)
        } else {
            find_entering_block(cost, &is_basic, &u, &v, tol, block, &mut scan_start)
        };
        let Some((er, ec)) = entering else {
            return Ok(basis);
        };

        let path = tree_path(&adjacency, er, n + ec);

        // Around the cycle (entering arc gets +theta) path arcs alternate
        // -, +, -, ... starting from the entering row.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (pos, &arc_idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = basis[arc_idx].flow;
                if f < theta
                    || (f == theta
                        && arc_key(&basis[arc_idx], m) < arc_key(&basis[leaving], m))
                {
                    theta = f;
                    leaving = arc_idx;
                }
            }
        }
        debug_assert!(leaving != usize::MAX);

        for (pos, &arc_idx) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[arc_idx].flow = (basis[arc_idx].flow - theta).max(0.0);
            } else {
                basis[arc_idx].flow += theta;
            }
        }

        is_basic[basis[leaving].row * m + basis[leaving].col] = false;
        is_basic[er * m + ec] = true;
        basis[leaving] = Arc { row: er, col: ec, flow: theta };

        if theta <= DEGENERATE_FLOW {
            stall += 1;
            if stall >= STALL_LIMIT {
                bland = true;
            }
        } else {
            stall = 0;
            if !always_bland {
                bland = false;
            }
        }
    }
    Err(Error::PivotLimit { limit: pivot_limit })
}

fn arc_key(arc: &Arc, m: usize) -> usize {
    arc.row * m + arc.col
}

/// Staircase initial basis: exactly `n + m - 1` arcs forming a spanning
/// tree, some possibly carrying zero flow.
fn north_west_corner(a: &[f64], b: &[f64]) -> Vec<Arc> {
    let n = a.len();
    let m = b.len();
    let mut basis = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    let mut ra = a[0];
    let mut rb = b[0];
    for _ in 0..(n + m - 1) {
        let f = ra.min(rb).max(0.0);
        basis.push(Arc { row: i, col: j, flow: f });
        if basis.len() == n + m - 1 {
            break;
        }
        ra -= f;
        rb -= f;
        if (ra < rb || j == m - 1) && i < n - 1 {
            i += 1;
            ra = a[i];
        } else {
            j += 1;
            rb = b[j];
        }
    }
    debug_assert_eq!(basis.len(), n + m - 1);
    basis
}

/// Nodes are rows `0..n` and columns `n..n+m`; each adjacency entry is
/// `(arc index, other endpoint)`.
fn build_adjacency(basis: &[Arc], n: usize, adjacency: &mut [Vec<(usize, usize)>]) {
    for list in adjacency.iter_mut() {
        list.clear();
    }
    for (idx, arc) in basis.iter().enumerate() {
        adjacency[arc.row].push((idx, n + arc.col));
        adjacency[n + arc.col].push((idx, arc.row));
    }
}

/// Dual potentials from the tree: `u[row] + v[col] = cost[row][col]` on all
/// basic arcs, anchored at `u[0] = 0`.
fn compute_duals(
    cost: &Array2<f64>,
    basis: &[Arc],
    adjacency: &[Vec<(usize, usize)>],
    n: usize,
    u: &mut [f64],
    v: &mut [f64],
) {
    let m = v.len();
    let mut visited = vec![false; n + m];
    let mut stack = vec![0_usize];
    visited[0] = true;
    u[0] = 0.0;
    while let Some(node) = stack.pop() {
        for &(arc_idx, other) in &adjacency[node] {
            if visited[other] {
                continue;
            }
            let arc = &basis[arc_idx];
            if other >= n {
                v[other - n] = cost[[arc.row, arc.col]] - u[arc.row];
            } else {
                u[other] = cost[[arc.row, arc.col]] - v[arc.col];
            }
            visited[other] = true;
            stack.push(other);
        }
    }
}

/// Block search: scan cells in wrapping row-major order, keeping the most
/// negative reduced cost seen in the current block; stop at the first block
/// that produced a candidate.
fn find_entering_block(
    cost: &Array2<f64>,
    is_basic: &[bool],
    u: &[f64],
    v: &[f64],
    tol: f64,
    block: usize,
    scan_start: &mut usize,
) -> Option<(usize, usize)> {
    let m = v.len();
    let total = is_basic.len();
    let mut best = -tol;
    let mut best_cell = None;
    let mut scanned = 0;
    for offset in 0..total {
        let cell = (*scan_start + offset) % total;
        if !is_basic[cell] {
            let (i, j) = (cell / m, cell % m);
            let rc = cost[[i, j]] - u[i] - v[j];
            if rc < best {
                best = rc;
                best_cell = Some((i, j));
            }
        }
        scanned += 1;
        if scanned == block {
            if let Some(found) = best_cell {
                *scan_start = (cell + 1) % total;
                return Some(found);
            }
            scanned = 0;
        }
    }
    if let Some(found) = best_cell {
        *scan_start = (found.0 * m + found.1 + 1) % total;
    }
    best_cell
}

/// Bland's rule: the first non-basic cell in index order with negative
/// reduced cost.
fn find_entering_bland(
    cost: &Array2<f64>,
    is_basic: &[bool],
    u: &[f64],
    v: &[f64],
    tol: f64,
) -> Option<(usize, usize)> {
    let m = v.len();
    for (cell, &basic) in is_basic.iter().enumerate() {
        if basic {
            continue;
        }
        let (i, j) = (cell / m, cell % m);
        if cost[[i, j]] - u[i] - v[j] < -tol {
            return Some((i, j));
        }
    }
    None
}

/// Unique tree path from node `from` to node `to`, as basis-arc indices in
/// walking order.
fn tree_path(
    adjacency: &[Vec<(usize, usize)>],
    from: usize,
    to: usize,
) -> Vec<usize> {
    let node_count = adjacency.len();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; node_count];
    let mut visited = vec![false; node_count];
    let mut queue = std::collections::VecDeque::new();
    visited[from] = true;
    queue.push_back(from);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(arc_idx, other) in &adjacency[node] {
            if !visited[other] {
                visited[other] = true;
                parent[other] = Some((node, arc_idx));
                queue.push_back(other);
            }
        }
    }
    debug_assert!(visited[to], "basis is not a spanning tree");
    let mut path = Vec::new();
    let mut node = to;
    while node != from {
        let (prev, arc_idx) = parent[node].expect("path reconstruction");
        path.push(arc_idx);
        node = prev;
    }
    path.reverse();
    debug_assert!(path.len() % 2 == 1);
    path
}

/// Recomputes the flows on a spanning-tree basis so they satisfy the given
/// marginals exactly, by repeatedly resolving leaves.  Returns `None` if a
/// recomputed flow is more negative than the clamping tolerance.
fn recompute_flows(
    n: usize,
    m: usize,
    basis: &[Arc],
    a: &[f64],
    b: &[f64],
) -> Option<Vec<(usize, usize, f64)>> {
    let node_count = n + m;
    let mut adjacency = vec![Vec::new(); node_count];
    for (idx, arc) in basis.iter().enumerate() {
        adjacency[arc.row].push((idx, n + arc.col));
        adjacency[n + arc.col].push((idx, arc.row));
    }
    let mut residual: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
    let mut degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut arc_used = vec![false; basis.len()];
    let mut flows = vec![0.0; basis.len()];
    let mut leaves: Vec<usize> =
        (0..node_count).filter(|&node| degree[node] == 1).collect();

    while let Some(node) = leaves.pop() {
        if degree[node] == 0 {
            continue;
        }
        let &(arc_idx, other) = adjacency[node]
            .iter()
            .find(|&&(arc_idx, _)| !arc_used[arc_idx])?;
        arc_used[arc_idx] = true;
        flows[arc_idx] = residual[node];
        residual[other] -= residual[node];
        residual[node] = 0.0;
        degree[node] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            leaves.push(other);
        }
    }

    let mut entries = Vec::with_capacity(basis.len());
    for (idx, arc) in basis.iter().enumerate() {
        let f = flows[idx];
        if f < -NEGATIVE_FLOW_TOL {
            return None;
        }
        if f > 0.0 {
            entries.push((arc.row, arc.col, f));
        }
    }
    Some(entries)
}
