//! Ensemble transforms built on optimal-transport couplings.
//!
//! The single-ensemble transform replaces importance resampling by a
//! deterministic map: couple the posterior weights to the uniform vector
//! under squared-distance cost and move every particle to the barycentre of
//! the mass it receives.  The multilevel variants transform a coarse/fine
//! pair so that both outputs are uniformly weighted *and* remain positively
//! correlated:
//!
//! * [`standard_recouple`] transforms each ensemble separately, then pairs
//!   the outputs with an optimal assignment and reorders the coarse side.
//! * [`seamless_couple`] rides the coarse distribution onto fine-indexed
//!   particles via a cross coupling, then pushes both ensembles through one
//!   shared fine-to-uniform plan, so every output slot mixes coarse and fine
//!   particles with identical coefficients and the pairing survives the
//!   transform.
//!
//! Localised forms solve one tapered-cost problem per state component, with
//! the taper radius controlling how much of the state influences each
//! component's coupling.  Radius zero decouples the components entirely and
//! every transport problem collapses to a scalar monotone matching.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ot::{
    solve_assignment, solve_transport, solve_transport_1d_between, CostMatrix, Coupling,
    DiscreteMarginal, WEIGHT_FLOOR,
};

/// An ensemble of particles with importance weights.
///
/// States are stored row-wise: row `i` is the `d`-dimensional state of
/// particle `i`.
#[derive(Debug, Clone)]
pub struct WeightedEnsemble {
    states: Array2<f64>,
    weights: DiscreteMarginal,
}

impl WeightedEnsemble {
    pub fn new(states: Array2<f64>, weights: DiscreteMarginal) -> Result<Self> {
        if states.nrows() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} states with {} weights",
                states.nrows(),
                weights.len()
            )));
        }
        if states.ncols() == 0 {
            return Err(Error::InvalidInput("zero-dimensional states".into()));
        }
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(Self { states, weights })
    }

    /// Wraps states with uniform weights.
    pub fn uniform(states: Array2<f64>) -> Result<Self> {
        let n = states.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("empty ensemble".into()));
        }
        Self::new(states, DiscreteMarginal::uniform(n))
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.states.view()
    }

    pub fn weights(&self) -> &DiscreteMarginal {
        &self.weights
    }

    /// `sum_i w_i x_i`.
    pub fn weighted_mean(&self) -> Array1<f64> {
        let mut mean = Array1::zeros(self.dim());
        for (i, row) in self.states.rows().into_iter().enumerate() {
            let w = self.weights.weights()[i];
            mean.scaled_add(w, &row);
        }
        mean
    }
}

/// A coarse/fine ensemble pair of equal size and state dimension.
#[derive(Debug, Clone)]
pub struct CoupledPair {
    coarse: WeightedEnsemble,
    fine: WeightedEnsemble,
}

impl CoupledPair {
    pub fn new(coarse: WeightedEnsemble, fine: WeightedEnsemble) -> Result<Self> {
        if coarse.len() != fine.len() {
            return Err(Error::DimensionMismatch(format!(
                "coarse ensemble of {} particles with fine ensemble of {}",
                coarse.len(),
                fine.len()
            )));
        }
        if coarse.dim() != fine.dim() {
            return Err(Error::DimensionMismatch(format!(
                "coarse dimension {} with fine dimension {}",
                coarse.dim(),
                fine.dim()
            )));
        }
        Ok(Self { coarse, fine })
    }

    pub fn coarse(&self) -> &WeightedEnsemble {
        &self.coarse
    }

    pub fn fine(&self) -> &WeightedEnsemble {
        &self.fine
    }

    pub fn len(&self) -> usize {
        self.fine.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fine.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.fine.dim()
    }
}

/// Component-wise localisation taper for a periodic state vector.
///
/// `taper[k][m] = max(0, 1 - s/(2 r))` with `s` the periodic component
/// distance, so component `k`'s coupling cost only sees components within
/// `2 r` of `k`.  Radius zero means the identity taper: every component is
/// coupled independently.
#[derive(Debug, Clone)]
pub struct Localisation {
    radius: usize,
    taper: Array2<f64>,
}

impl Localisation {
    pub fn new(dim: usize, radius: usize) -> Self {
        Self { radius, taper: build_localisation_matrix(dim, radius) }
    }

    pub fn dim(&self) -> usize {
        self.taper.nrows()
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taper(&self) -> ArrayView2<'_, f64> {
        self.taper.view()
    }

    pub fn taper_row(&self, k: usize) -> ArrayView1<'_, f64> {
        self.taper.row(k)
    }
}

/// The localisation taper matrix itself; see [`Localisation`].
pub fn build_localisation_matrix(dim: usize, radius: usize) -> Array2<f64> {
    let mut taper = Array2::eye(dim);
    if radius == 0 {
        return taper;
    }
    for k in 0..dim {
        for m in 0..dim {
            let delta = k.abs_diff(m);
            let s = delta.min(dim - delta) as f64;
            taper[[k, m]] = (1.0 - s / (2.0 * radius as f64)).max(0.0);
        }
    }
    taper
}

/// Optimal plan between two point clouds, dispatching scalar supports to the
/// monotone solver and everything else to the transportation simplex.
fn transport_plan(
    src: ArrayView2<'_, f64>,
    dst: ArrayView2<'_, f64>,
    p: &DiscreteMarginal,
    q: &DiscreteMarginal,
) -> Result<Coupling> {
    if src.ncols() == 1 {
        let s: Vec<f64> = src.column(0).to_vec();
        let t: Vec<f64> = dst.column(0).to_vec();
        solve_transport_1d_between(&s, &t, p, q)
    } else {
        let cost = CostMatrix::squared_euclidean(src, dst)?;
        solve_transport(p, q, &cost)
    }
}

/// Barycentric push-forward: `out_j = (sum_i D_ij src_i) / col_mass_j`.
///
/// Columns whose mass is below the weight floor receive the matching
/// `fallback` row instead (they received no transported mass).
fn push_forward(
    plan: &Coupling,
    src: ArrayView2<'_, f64>,
    col_mass: &[f64],
    fallback: Option<ArrayView2<'_, f64>>,
) -> Array2<f64> {
    let d = src.ncols();
    let mut out = Array2::zeros((col_mass.len(), d));
    for &(i, j, mass) in plan.entries() {
        if col_mass[j] < WEIGHT_FLOOR {
            continue;
        }
        let scale = mass / col_mass[j];
        let row = src.row(i);
        let mut target = out.row_mut(j);
        target.scaled_add(scale, &row);
    }
    if let Some(states) = fallback {
        for (j, &mass) in col_mass.iter().enumerate() {
            if mass < WEIGHT_FLOOR {
                out.row_mut(j).assign(&states.row(j));
            }
        }
    }
    out
}

/// Scalar push-forward used by the per-component localised paths.
fn push_forward_scalar(
    plan: &Coupling,
    src: &[f64],
    col_mass: &[f64],
    fallback: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; col_mass.len()];
    for &(i, j, mass) in plan.entries() {
        if col_mass[j] < WEIGHT_FLOOR {
            continue;
        }
        out[j] += mass / col_mass[j] * src[i];
    }
    if let Some(values) = fallback {
        for (j, &mass) in col_mass.iter().enumerate() {
            if mass < WEIGHT_FLOOR {
                out[j] = values[j];
            }
        }
    }
    out
}

/// Deterministic ensemble transform: couples the weights to uniform under
/// squared-distance cost and replaces each particle by the barycentre of its
/// received mass.  The uniform mean of the output equals the weighted mean
/// of the input.
pub fn etpf_transform(ensemble: &WeightedEnsemble) -> Result<Array2<f64>> {
    let n = ensemble.len();
    let uniform = DiscreteMarginal::uniform(n);
    let plan = transport_plan(
        ensemble.states(),
        ensemble.states(),
        ensemble.weights(),
        &uniform,
    )?;
    Ok(push_forward(&plan, ensemble.states(), uniform.weights(), None))
}

/// Localised ensemble transform: one tapered-cost coupling per component.
pub fn localized_etpf_transform(
    ensemble: &WeightedEnsemble,
    loc: &Localisation,
) -> Result<Array2<f64>> {
    check_localisation(ensemble.dim(), loc)?;
    let n = ensemble.len();
    let d = ensemble.dim();
    let uniform = DiscreteMarginal::uniform(n);
    let mut out = Array2::zeros((n, d));
    for k in 0..d {
        let col: Vec<f64> = ensemble.states().column(k).to_vec();
        let transformed = if loc.radius() == 0 {
            etpf_scalar(&col, ensemble.weights(), &uniform)?
        } else {
            let cost = CostMatrix::tapered_squared_euclidean(
                ensemble.states(),
                ensemble.states(),
                loc.taper_row(k),
            )?;
            let plan = solve_transport(ensemble.weights(), &uniform, &cost)?;
            push_forward_scalar(&plan, &col, uniform.weights(), None)
        };
        out.column_mut(k).assign(&Array1::from(transformed));
    }
    Ok(out)
}

fn etpf_scalar(
    values: &[f64],
    weights: &DiscreteMarginal,
    uniform: &DiscreteMarginal,
) -> Result<Vec<f64>> {
    let plan = solve_transport_1d_between(values, values, weights, uniform)?;
    Ok(push_forward_scalar(&plan, values, uniform.weights(), None))
}

/// Random counterpart of [`etpf_transform`] for unbiasedness comparisons:
/// each output slot samples one input particle from its row of the
/// uniform-to-weights plan.
pub fn random_resample<R: Rng + ?Sized>(
    ensemble: &WeightedEnsemble,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let n = ensemble.len();
    let uniform = DiscreteMarginal::uniform(n);
    let plan = transport_plan(
        ensemble.states(),
        ensemble.states(),
        &uniform,
        ensemble.weights(),
    )?;
    let mut out = Array2::zeros((n, ensemble.dim()));
    let entries = plan.entries();
    let mut start = 0;
    for i in 0..n {
        let mut end = start;
        while end < entries.len() && entries[end].0 == i {
            end += 1;
        }
        let row = &entries[start..end];
        let total: f64 = row.iter().map(|e| e.2).sum();
        let mut ticket = rng.random::<f64>() * total;
        let mut chosen = row.last().map(|e| e.1).unwrap_or(i);
        for &(_, j, mass) in row {
            if ticket < mass {
                chosen = j;
                break;
            }
            ticket -= mass;
        }
        out.row_mut(i).assign(&ensemble.states().row(chosen));
        start = end;
    }
    Ok(out)
}

/// Transforms both ensembles separately, then re-pairs them with a
/// minimum-cost assignment: the coarse output is the coarse transform
/// reordered so that paired particles are close.
pub fn standard_recouple(pair: &CoupledPair) -> Result<(Array2<f64>, Array2<f64>)> {
    let fine_out = etpf_transform(pair.fine())?;
    let coarse_tmp = etpf_transform(pair.coarse())?;
    let cost = CostMatrix::squared_euclidean(coarse_tmp.view(), fine_out.view())?;
    let assignment = solve_assignment(&cost)?;
    let mut coarse_out = Array2::zeros(coarse_tmp.raw_dim());
    for (i, &j) in assignment.permutation().iter().enumerate() {
        coarse_out.row_mut(j).assign(&coarse_tmp.row(i));
    }
    Ok((coarse_out, fine_out))
}

/// Seamless coarse/fine coupling: a cross coupling followed by one shared
/// transform.
///
/// 1. Couple the coarse weights to the fine weights under cross cost and
///    form the intermediate ensemble `X*_j = (sum_i D_ij Xc_i) / wf_j`,
///    which carries the coarse distribution on fine-indexed particles.
/// 2. Solve the fine ensemble's transform to uniform weights.
/// 3. Push the fine ensemble *and* the intermediate ensemble through that
///    same plan.  Sharing the plan is what keeps the outputs paired: each
///    output slot mixes fine and intermediate particles with identical
///    coefficients, so paired differences cannot exceed the largest input
///    difference.  Solving a fresh transport problem for the intermediate
///    ensemble instead would contract it onto the transformed fine cloud
///    and inject pair noise on the scale of the weight spread, no matter
///    how close the inputs are.
///
/// Both outputs preserve their side's weighted mean exactly, because the
/// shared plan has the fine weights as its row sums.
pub fn seamless_couple(pair: &CoupledPair) -> Result<(Array2<f64>, Array2<f64>)> {
    if pair.dim() == 1 {
        let coarse_col: Vec<f64> = pair.coarse().states().column(0).to_vec();
        let fine_col: Vec<f64> = pair.fine().states().column(0).to_vec();
        let (coarse_out, fine_out) = seamless_scalar(
            &coarse_col,
            &fine_col,
            pair.coarse().weights(),
            pair.fine().weights(),
        )?;
        let n = pair.len();
        return Ok((
            Array2::from_shape_vec((n, 1), coarse_out).expect("column shape"),
            Array2::from_shape_vec((n, 1), fine_out).expect("column shape"),
        ));
    }

    let wf = pair.fine().weights();
    let uniform = DiscreteMarginal::uniform(pair.len());

    let cross = transport_plan(
        pair.coarse().states(),
        pair.fine().states(),
        pair.coarse().weights(),
        wf,
    )?;
    let intermediate = push_forward(
        &cross,
        pair.coarse().states(),
        wf.weights(),
        Some(pair.coarse().states()),
    );

    let fine_plan =
        transport_plan(pair.fine().states(), pair.fine().states(), wf, &uniform)?;
    let fine_out = push_forward(&fine_plan, pair.fine().states(), uniform.weights(), None);
    let coarse_out = push_forward(&fine_plan, intermediate.view(), uniform.weights(), None);

    Ok((coarse_out, fine_out))
}

/// Scalar seamless coupling; shared by the one-dimensional and the fully
/// localised paths so they agree bit for bit.
fn seamless_scalar(
    coarse: &[f64],
    fine: &[f64],
    wc: &DiscreteMarginal,
    wf: &DiscreteMarginal,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let uniform = DiscreteMarginal::uniform(fine.len());

    let cross = solve_transport_1d_between(coarse, fine, wc, wf)?;
    let intermediate = push_forward_scalar(&cross, coarse, wf.weights(), Some(coarse));

    let fine_plan = solve_transport_1d_between(fine, fine, wf, &uniform)?;
    let fine_out = push_forward_scalar(&fine_plan, fine, uniform.weights(), None);
    let coarse_out = push_forward_scalar(&fine_plan, &intermediate, uniform.weights(), None);

    Ok((coarse_out, fine_out))
}

/// Localised seamless coupling: the cross coupling and the shared fine
/// transform are solved once per state component under tapered costs.  With
/// radius zero every chain is the scalar monotone pipeline.
pub fn localized_seamless_couple(
    pair: &CoupledPair,
    loc: &Localisation,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_localisation(pair.dim(), loc)?;
    let n = pair.len();
    let d = pair.dim();
    let wc = pair.coarse().weights();
    let wf = pair.fine().weights();
    let uniform = DiscreteMarginal::uniform(n);

    let mut coarse_out = Array2::zeros((n, d));
    let mut fine_out = Array2::zeros((n, d));

    if loc.radius() == 0 {
        for k in 0..d {
            let coarse_col: Vec<f64> = pair.coarse().states().column(k).to_vec();
            let fine_col: Vec<f64> = pair.fine().states().column(k).to_vec();
            let (c, f) = seamless_scalar(&coarse_col, &fine_col, wc, wf)?;
            coarse_out.column_mut(k).assign(&Array1::from(c));
            fine_out.column_mut(k).assign(&Array1::from(f));
        }
        return Ok((coarse_out, fine_out));
    }

    for k in 0..d {
        let taper = loc.taper_row(k);
        let coarse_col: Vec<f64> = pair.coarse().states().column(k).to_vec();
        let fine_col: Vec<f64> = pair.fine().states().column(k).to_vec();

        let cross_cost = CostMatrix::tapered_squared_euclidean(
            pair.coarse().states(),
            pair.fine().states(),
            taper,
        )?;
        let cross = solve_transport(wc, wf, &cross_cost)?;
        let inter_col =
            push_forward_scalar(&cross, &coarse_col, wf.weights(), Some(&coarse_col));

        let fine_cost = CostMatrix::tapered_squared_euclidean(
            pair.fine().states(),
            pair.fine().states(),
            taper,
        )?;
        let fine_plan = solve_transport(wf, &uniform, &fine_cost)?;
        let fine_col_out = push_forward_scalar(&fine_plan, &fine_col, uniform.weights(), None);
        fine_out.column_mut(k).assign(&Array1::from(fine_col_out));
        let coarse_col_out =
            push_forward_scalar(&fine_plan, &inter_col, uniform.weights(), None);
        coarse_out.column_mut(k).assign(&Array1::from(coarse_col_out));
    }

    Ok((coarse_out, fine_out))
}

/// Localised assignment-based recoupling: transforms per component, then
/// re-pairs each component under its tapered cost.  Radius zero reduces the
/// assignment to rank matching between the sorted component values.
pub fn localized_standard_recouple(
    pair: &CoupledPair,
    loc: &Localisation,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_localisation(pair.dim(), loc)?;
    let n = pair.len();
    let d = pair.dim();

    let fine_out = localized_etpf_transform(pair.fine(), loc)?;
    let coarse_tmp = localized_etpf_transform(pair.coarse(), loc)?;
    let mut coarse_out = Array2::zeros((n, d));

    for k in 0..d {
        if loc.radius() == 0 {
            // Squared distance on a line: the optimal assignment matches
            // ranks, so sort both sides and pair equal ranks.
            let fine_col = fine_out.column(k);
            let coarse_col = coarse_tmp.column(k);
            let fine_order = argsort(fine_col);
            let coarse_order = argsort(coarse_col);
            for (rank, &ci) in coarse_order.iter().enumerate() {
                coarse_out[[fine_order[rank], k]] = coarse_col[ci];
            }
        } else {
            let cost = CostMatrix::tapered_squared_euclidean(
                coarse_tmp.view(),
                fine_out.view(),
                loc.taper_row(k),
            )?;
            let assignment = solve_assignment(&cost)?;
            for (i, &j) in assignment.permutation().iter().enumerate() {
                coarse_out[[j, k]] = coarse_tmp[[i, k]];
            }
        }
    }

    Ok((coarse_out, fine_out))
}

fn argsort(values: ArrayView1<'_, f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    order
}

fn check_localisation(dim: usize, loc: &Localisation) -> Result<()> {
    if loc.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "localisation built for dimension {} applied to dimension {}",
            loc.dim(),
            dim
        )));
    }
    Ok(())
}
