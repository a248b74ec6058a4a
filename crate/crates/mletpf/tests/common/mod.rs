//! Shared oracles and instance generators for the integration tests.  Each
//! test target compiles this module separately and uses its own subset.
//!
//! The transport oracles deliberately use algorithm families unrelated to
//! the library's transportation simplex: successive-shortest-path min-cost
//! flow, exhaustive basis enumeration, and exhaustive permutation search.
//! Agreement between the library and these oracles is the evidence that the
//! solver is exact, so nothing in here may call into `mletpf::ot` beyond the
//! plain data types.
#![allow(dead_code)]

use mletpf::ot::{CostMatrix, DiscreteMarginal};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub fn seeded(seed: u64) -> ChaCha12Rng {
    use rand::SeedableRng;
    ChaCha12Rng::seed_from_u64(seed)
}

/// Integer supplies/demands with a common total, plus the induced
/// floating-point marginals.  Integer masses keep the min-cost-flow oracle
/// exact; the float marginals are what the library solver sees.
pub fn random_integer_instance<R: Rng>(
    rng: &mut R,
    n: usize,
    m: usize,
) -> (Vec<u64>, Vec<u64>, DiscreteMarginal, DiscreteMarginal) {
    let mut supplies: Vec<u64> = (0..n).map(|_| rng.random_range(1..=50)).collect();
    if supplies.iter().sum::<u64>() < m as u64 {
        supplies[0] += m as u64;
    }
    let total: u64 = supplies.iter().sum();
    let mut demands = vec![1_u64; m];
    for _ in 0..(total - m as u64) {
        demands[rng.random_range(0..m)] += 1;
    }
    let p = DiscreteMarginal::new(
        supplies.iter().map(|&s| s as f64 / total as f64).collect(),
    )
    .expect("valid integer marginal");
    let q = DiscreteMarginal::new(
        demands.iter().map(|&d| d as f64 / total as f64).collect(),
    )
    .expect("valid integer marginal");
    (supplies, demands, p, q)
}

pub fn random_cost<R: Rng>(rng: &mut R, n: usize, m: usize) -> CostMatrix {
    let costs = Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..10.0));
    CostMatrix::new(costs).expect("finite nonnegative costs")
}

/// Weights bounded well away from the solver's mass floor, normalised.
pub fn random_weights<R: Rng>(rng: &mut R, n: usize) -> DiscreteMarginal {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    DiscreteMarginal::normalized(raw).expect("positive raw weights")
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| 3.0 * rng.sample::<f64, _>(StandardNormal))
}

/// Minimum transport cost for integer supplies/demands by successive
/// shortest paths on the bipartite flow network (Bellman–Ford, residual
/// arcs).  Exact for integer masses; the returned cost is normalised by the
/// total so it is comparable to a probability-marginal objective.
pub fn min_cost_flow_cost(
    supplies: &[u64],
    demands: &[u64],
    cost: ArrayView2<'_, f64>,
) -> f64 {
    let n = supplies.len();
    let m = demands.len();
    let total: u64 = supplies.iter().sum();
    assert_eq!(total, demands.iter().sum::<u64>(), "balanced instance");

    // Node layout: 0 = source, 1..=n rows, n+1..=n+m cols, n+m+1 = sink.
    let v = n + m + 2;
    let sink = v - 1;
    let mut cap = vec![vec![0_i64; v]; v];
    let mut cst = vec![vec![0.0_f64; v]; v];
    for (i, &s) in supplies.iter().enumerate() {
        cap[0][1 + i] = s as i64;
    }
    for (j, &d) in demands.iter().enumerate() {
        cap[1 + n + j][sink] = d as i64;
    }
    for i in 0..n {
        for j in 0..m {
            cap[1 + i][1 + n + j] = total as i64;
            cst[1 + i][1 + n + j] = cost[[i, j]];
            cst[1 + n + j][1 + i] = -cost[[i, j]];
        }
    }

    let mut objective = 0.0;
    loop {
        // Bellman–Ford from the source over residual arcs.
        let mut dist = vec![f64::INFINITY; v];
        let mut parent = vec![usize::MAX; v];
        dist[0] = 0.0;
        for _ in 0..v {
            let mut improved = false;
            for u in 0..v {
                if !dist[u].is_finite() {
                    continue;
                }
                for w in 0..v {
                    if cap[u][w] > 0 && dist[u] + cst[u][w] < dist[w] - 1e-15 {
                        dist[w] = dist[u] + cst[u][w];
                        parent[w] = u;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let mut bottleneck = i64::MAX;
        let mut node = sink;
        while node != 0 {
            let prev = parent[node];
            bottleneck = bottleneck.min(cap[prev][node]);
            node = prev;
        }
        let mut node = sink;
        while node != 0 {
            let prev = parent[node];
            cap[prev][node] -= bottleneck;
            cap[node][prev] += bottleneck;
            node = prev;
        }
        objective += bottleneck as f64 * dist[sink];
    }
    objective / total as f64
}

/// Minimum transport cost by brute force over every spanning-tree basis of
/// the bipartite cell graph.  Only feasible for very small instances: the
/// basis count grows like `n^(m-1) m^(n-1)`, so callers keep `n·m <= 16`.
pub fn enumerated_vertex_cost(p: &[f64], q: &[f64], cost: ArrayView2<'_, f64>) -> f64 {
    let n = p.len();
    let m = q.len();
    let cells = n * m;
    assert!(cells <= 16, "enumeration oracle limited to tiny instances");
    let basis_size = n + m - 1;
    let mut best = f64::INFINITY;

    for mask in 0_u32..(1 << cells) {
        if mask.count_ones() as usize != basis_size {
            continue;
        }
        if let Some(value) = basis_cost(mask, p, q, cost) {
            best = best.min(value);
        }
    }
    assert!(best.is_finite(), "at least one basis must be feasible");
    best
}

/// Cost of one candidate basis, or `None` if the cells do not form a
/// spanning tree with nonnegative leaf-elimination flows.
fn basis_cost(mask: u32, p: &[f64], q: &[f64], cost: ArrayView2<'_, f64>) -> Option<f64> {
    let n = p.len();
    let m = q.len();
    let nodes = n + m;
    let mut degree = vec![0_usize; nodes];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for cell in 0..(n * m) {
        if mask & (1 << cell) != 0 {
            let (i, j) = (cell / m, cell % m);
            degree[i] += 1;
            degree[n + j] += 1;
            incident[i].push(cell);
            incident[n + j].push(cell);
        }
    }

    // `nodes` vertices and `nodes - 1` edges form a tree iff leaf
    // elimination consumes every edge; flows fall out of the same sweep.
    let mut remaining: Vec<f64> = p.iter().chain(q.iter()).copied().collect();
    let mut alive = vec![true; nodes];
    let mut used = vec![false; n * m];
    let mut value = 0.0;
    for _ in 0..(nodes - 1) {
        let leaf = (0..nodes).find(|&v| alive[v] && degree[v] == 1)?;
        let cell = *incident[leaf]
            .iter()
            .find(|&&c| !used[c])
            .expect("degree-one node has an unused edge");
        let (i, j) = (cell / m, cell % m);
        let flow = remaining[leaf];
        if flow < -1e-12 {
            return None;
        }
        value += flow.max(0.0) * cost[[i, j]];
        let other = if leaf == i { n + j } else { i };
        remaining[other] -= flow;
        alive[leaf] = false;
        used[cell] = true;
        degree[i] -= 1;
        degree[n + j] -= 1;
    }
    Some(value)
}

/// Minimum assignment cost by trying all permutations; `n <= 8`.
pub fn permutation_min_cost(cost: ArrayView2<'_, f64>) -> f64 {
    let n = cost.nrows();
    assert!(n <= 8, "permutation oracle limited to tiny instances");
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, cost, &mut best);
    best
}

fn permute(perm: &mut [usize], k: usize, cost: ArrayView2<'_, f64>, best: &mut f64) {
    let n = perm.len();
    if k == n {
        let value: f64 = (0..n).map(|i| cost[[i, perm[i]]]).sum();
        *best = best.min(value);
        return;
    }
    for i in k..n {
        perm.swap(k, i);
        permute(perm, k + 1, cost, best);
        perm.swap(k, i);
    }
}
