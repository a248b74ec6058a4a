//! Discrete optimal-transport solvers.
//!
//! Three solvers cover the couplings needed by the ensemble transforms:
//!
//! * [`solve_transport`] — dense transportation problems between two
//!   arbitrary discrete marginals, via the transportation simplex.
//! * [`solve_transport_1d`] — scalar supports under any convex cost, via
//!   monotone (quantile) matching in `O(n log n)`.
//! * [`solve_assignment`] — permutation couplings of equal-size uniform
//!   marginals, via the Hungarian algorithm in `O(n^3)`.
//!
//! All solvers floor marginal entries below [`WEIGHT_FLOOR`] to zero and
//! renormalise before solving, so near-degenerate weight vectors cannot
//! produce pathological bases.  Returned plans are vertex solutions: at most
//! `n + m - 1` non-zero entries.

mod assignment;
mod monotone;
mod simplex;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Marginal entries strictly below this are treated as exact zeros.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Tolerance on `|sum - 1|` accepted by [`DiscreteMarginal::new`].
pub const MARGINAL_SUM_TOL: f64 = 1e-12;

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMarginal {
    weights: Vec<f64>,
}

impl DiscreteMarginal {
    /// Validates that `weights` is a probability vector.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMarginal("empty weight vector".into()));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidMarginal(format!(
                    "weight {i} is {w}, expected a finite non-negative value"
                )));
            }
        }
        let sum = kahan_sum(&weights);
        if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
            return Err(Error::InvalidMarginal(format!(
                "weights sum to {sum}, which is further than {MARGINAL_SUM_TOL:e} from 1"
            )));
        }
        Ok(Self { weights })
    }

    /// Normalises a non-negative vector to sum to one, then validates it.
    ///
    /// The residual left by floating-point division is folded into the
    /// largest entry, so the result passes [`DiscreteMarginal::new`] exactly.
    pub fn normalized(mut raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidMarginal("empty weight vector".into()));
        }
        for (i, &w) in raw.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidMarginal(format!(
                    "weight {i} is {w}, expected a finite non-negative value"
                )));
            }
        }
        let sum = kahan_sum(&raw);
        if sum <= 0.0 {
            return Err(Error::DegenerateLikelihood);
        }
        for w in &mut raw {
            *w /= sum;
        }
        let residual = 1.0 - kahan_sum(&raw);
        let argmax = argmax(&raw);
        raw[argmax] += residual;
        Self::new(raw)
    }

    /// The uniform vector `(1/n, ..., 1/n)`.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform marginal needs at least one atom");
        Self { weights: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// A non-negative cost matrix with finite entries.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    costs: Array2<f64>,
}

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        for &c in costs.iter() {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "cost entries must be finite and non-negative, found {c}"
                )));
            }
        }
        Ok(Self { costs })
    }

    /// Pairwise squared Euclidean distances between the rows of `a` and the
    /// rows of `b`.
    pub fn squared_euclidean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Self> {
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "point sets have dimensions {} and {}",
                a.ncols(),
                b.ncols()
            )));
        }
        let mut costs = Array2::zeros((a.nrows(), b.nrows()));
        for (i, x) in a.rows().into_iter().enumerate() {
            for (j, y) in b.rows().into_iter().enumerate() {
                let mut s = 0.0;
                for (xi, yi) in x.iter().zip(y.iter()) {
                    let d = xi - yi;
                    s += d * d;
                }
                costs[[i, j]] = s;
            }
        }
        Self::new(costs)
    }

    /// Squared Euclidean distances weighted component-wise by `taper`.
    ///
    /// Components with zero taper weight are skipped entirely, so a sparse
    /// taper row keeps the cost evaluation cheap.
    pub fn tapered_squared_euclidean(
        a: ArrayView2<'_, f64>,
        b: ArrayView2<'_, f64>,
        taper: ArrayView1<'_, f64>,
    ) -> Result<Self> {
        if a.ncols() != b.ncols() || a.ncols() != taper.len() {
            return Err(Error::DimensionMismatch(format!(
                "point sets of dimension {} and {} with taper of length {}",
                a.ncols(),
                b.ncols(),
                taper.len()
            )));
        }
        let active: Vec<(usize, f64)> =
            taper.iter().cloned().enumerate().filter(|&(_, t)| t != 0.0).collect();
        let mut costs = Array2::zeros((a.nrows(), b.nrows()));
        for (i, x) in a.rows().into_iter().enumerate() {
            for (j, y) in b.rows().into_iter().enumerate() {
                let mut s = 0.0;
                for &(k, t) in &active {
                    let d = x[k] - y[k];
                    s += t * d * d;
                }
                costs[[i, j]] = s;
            }
        }
        Self::new(costs)
    }

    pub fn nrows(&self) -> usize {
        self.costs.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.costs.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.costs.view()
    }
}

/// A sparse transport plan between two marginals.
///
/// Entries are `(row, col, mass)` triplets sorted by `(row, col)` with
/// strictly positive mass.  Plans returned by the solvers are vertices of
/// the transportation polytope and carry at most `n + m - 1` entries.
#[derive(Debug, Clone)]
pub struct Coupling {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Coupling {
    fn from_entries(
        n_rows: usize,
        n_cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Self {
        entries.retain(|&(_, _, m)| m > 0.0);
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        Self { n_rows, n_cols, entries }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// `(row, col, mass)` triplets sorted by `(row, col)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_rows];
        for &(i, _, m) in &self.entries {
            sums[i] += m;
        }
        sums
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_cols];
        for &(_, j, m) in &self.entries {
            sums[j] += m;
        }
        sums
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n_rows, self.n_cols));
        for &(i, j, m) in &self.entries {
            d[[i, j]] += m;
        }
        d
    }
}

/// A bijective row-to-column assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    perm: Vec<usize>,
}

impl Assignment {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &j in &perm {
            if j >= n || seen[j] {
                return Err(Error::InvalidInput(
                    "assignment is not a permutation".into(),
                ));
            }
            seen[j] = true;
        }
        Ok(Self { perm })
    }

    /// `permutation()[i]` is the column assigned to row `i`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn cost(&self, c: &CostMatrix) -> Result<f64> {
        if c.nrows() != self.perm.len() || c.ncols() != self.perm.len() {
            return Err(Error::DimensionMismatch(format!(
                "assignment of size {} with {}x{} cost matrix",
                self.perm.len(),
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(self.perm.iter().enumerate().map(|(i, &j)| c.view()[[i, j]]).sum())
    }
}

/// Solves the discrete transportation problem `min <D, c>` over plans with
/// row marginal `p` and column marginal `q`.
///
/// Any optimal vertex may be returned when the optimum is not unique; the
/// optimal cost itself is deterministic.
pub fn solve_transport(
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
    c: &CostMatrix,
) -> Result<Coupling> {
    if c.nrows() != p.len() || c.ncols() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "marginals of length {} and {} with {}x{} cost matrix",
            p.len(),
            q.len(),
            c.nrows(),
            c.ncols()
        )));
    }
    let (a, rows) = clean_marginal(p.weights());
    let (b, cols) = clean_marginal(q.weights());
    let (a, b) = reconcile_totals(a, b);
    let n = rows.len();
    let m = cols.len();

    let entries = if n == 1 {
        b.iter().enumerate().map(|(j, &mass)| (0, j, mass)).collect()
    } else if m == 1 {
        a.iter().enumerate().map(|(i, &mass)| (i, 0, mass)).collect()
    } else {
        let mut sub = Array2::zeros((n, m));
        for (si, &i) in rows.iter().enumerate() {
            for (sj, &j) in cols.iter().enumerate() {
                sub[[si, sj]] = c.view()[[i, j]];
            }
        }
        simplex::solve(&a, &b, &sub)?
    };

    let remapped = entries
        .into_iter()
        .map(|(i, j, mass)| (rows[i], cols[j], mass))
        .collect();
    Ok(Coupling::from_entries(p.len(), q.len(), remapped))
}

/// Solves a one-dimensional transport problem between atoms at `values`
/// (shared by both marginals) under any convex cost of the displacement.
///
/// The optimal plan is the monotone (quantile) coupling, computed by sorting
/// and a single merge pass in `O(n log n)`.
pub fn solve_transport_1d(
    values: &[f64],
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
) -> Result<Coupling> {
    solve_transport_1d_between(values, values, p, q)
}

/// One-dimensional transport between distinct source and target supports.
pub fn solve_transport_1d_between(
    source: &[f64],
    target: &[f64],
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
) -> Result<Coupling> {
    if source.len() != p.len() || target.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} source and {} target atoms with marginals of length {} and {}",
            source.len(),
            target.len(),
            p.len(),
            q.len()
        )));
    }
    for &v in source.iter().chain(target.iter()) {
        if !v.is_finite() {
            return Err(Error::InvalidInput("non-finite support point".into()));
        }
    }
    let (a, rows) = clean_marginal(p.weights());
    let (b, cols) = clean_marginal(q.weights());
    let (a, b) = reconcile_totals(a, b);
    let src: Vec<f64> = rows.iter().map(|&i| source[i]).collect();
    let dst: Vec<f64> = cols.iter().map(|&j| target[j]).collect();
    let entries = monotone::monotone_plan(&src, &dst, &a, &b);
    let remapped = entries
        .into_iter()
        .map(|(i, j, mass)| (rows[i], cols[j], mass))
        .collect();
    Ok(Coupling::from_entries(p.len(), q.len(), remapped))
}

/// Solves the linear assignment problem for a square cost matrix,
/// returning a minimum-cost row-to-column permutation.
pub fn solve_assignment(c: &CostMatrix) -> Result<Assignment> {
    if c.nrows() != c.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "assignment requires a square cost matrix, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    if c.nrows() == 0 {
        return Err(Error::InvalidInput("empty assignment problem".into()));
    }
    Assignment::new(assignment::hungarian(c.view()))
}

/// Total cost `sum_ij D_ij c_ij` of a plan under a cost matrix.
pub fn coupling_cost(d: &Coupling, c: &CostMatrix) -> Result<f64> {
    if c.nrows() != d.n_rows() || c.ncols() != d.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} coupling with {}x{} cost matrix",
            d.n_rows(),
            d.n_cols(),
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(d.entries.iter().map(|&(i, j, m)| m * c.view()[[i, j]]).sum())
}

/// Compensated summation; keeps marginal validation sharp for long vectors.
pub(crate) fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for &v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Drops entries below [`WEIGHT_FLOOR`] and renormalises the survivors.
/// Returns the cleaned weights and their original indices.
fn clean_marginal(weights: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let kept: Vec<usize> = (0..weights.len())
        .filter(|&i| weights[i] >= WEIGHT_FLOOR)
        .collect();
    let mut cleaned: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();
    let total = kahan_sum(&cleaned);
    for w in &mut cleaned {
        *w /= total;
    }
    (cleaned, kept)
}

/// Scales `b` so both sides carry identical total mass, folding the final
/// floating-point residual into the largest entry of `b`.
fn reconcile_totals(a: Vec<f64>, mut b: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let sa = kahan_sum(&a);
    let sb = kahan_sum(&b);
    let scale = sa / sb;
    for w in &mut b {
        *w *= scale;
    }
    let residual = sa - kahan_sum(&b);
    let j = argmax(&b);
    b[j] += residual;
    (a, b)
}
