//! Assimilation loops: weight updates, level schedules, and the multilevel
//! telescoping estimator.
//!
//! A run keeps `2L + 1` ensembles: one coarse ensemble at the base level and
//! a coupled coarse/fine pair per difference estimator.  Each assimilation
//! step propagates every particle through the model (pairs share Brownian
//! paths across their two resolutions), reweights every ensemble against the
//! same observation, and transforms everything back to uniform weights —
//! the pairs via the seamless or assignment-based coupling.  Posterior
//! expectations are read off the telescoping sum
//! `E ≈ Σ w_0 g(X_0) + Σ_l [Σ w_l g(X_l) − Σ ŵ_{l-1} g(X̂_{l-1})]`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{
    propagate, propagate_pair, sample_initial_ensemble, ModelSpec, NoisePath,
};
use crate::ot::DiscreteMarginal;
use crate::rng::{role, substream};
use crate::transform::{
    etpf_transform, localized_etpf_transform, localized_seamless_couple,
    localized_standard_recouple, seamless_couple, standard_recouple, CoupledPair,
    Localisation, WeightedEnsemble,
};

/// Variance of the Gaussian perturbation around the spin-up state used for
/// initial ensembles.
pub const INITIAL_SPREAD: f64 = 0.1;

/// Which coupling transforms the difference-estimator pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    Seamless,
    Standard,
}

/// Sample-size decay profile used when building a schedule from a target
/// accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleVariant {
    /// Multilevel sizes `N_l = ceil(eps^-2 2^{-3l/2})`.
    Seamless,
    /// Multilevel sizes `N_l = ceil(eps^-2 2^{-l})`.
    Standard,
    /// One ensemble of `ceil(eps^-2)` particles at the finest level.
    Single,
}

/// Test functionals whose posterior expectation the filter estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunctional {
    Identity,
    Square,
}

impl TestFunctional {
    pub fn eval(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            Self::Identity => x.to_owned(),
            Self::Square => x.mapv(|v| v * v),
        }
    }
}

/// Time-step and sample-size layout of a multilevel run.
///
/// Estimator 0 is a single ensemble of `sample_sizes[0]` particles at
/// `base_level`; estimator `k >= 1` is a coupled pair across levels
/// `base_level + k - 1` and `base_level + k` with `sample_sizes[k]`
/// particles.  Level `l` integrates at `h_0 2^{-l}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSchedule {
    base_level: usize,
    sample_sizes: Vec<usize>,
    h0: f64,
    dt: f64,
    gamma: f64,
}

impl LevelSchedule {
    pub fn new(
        base_level: usize,
        sample_sizes: Vec<usize>,
        h0: f64,
        dt: f64,
        gamma: f64,
    ) -> Result<Self> {
        if sample_sizes.is_empty() {
            return Err(Error::InvalidInput("schedule needs at least one estimator".into()));
        }
        if sample_sizes.contains(&0) {
            return Err(Error::InvalidInput("sample sizes must be at least 1".into()));
        }
        if sample_sizes.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput(
                "sample sizes must be nonincreasing across levels".into(),
            ));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(h0) || !positive(dt) || !positive(gamma) {
            return Err(Error::InvalidInput(
                "h0, dt, and gamma must be positive".into(),
            ));
        }
        let schedule = Self { base_level, sample_sizes, h0, dt, gamma };
        for level in schedule.base_level..=schedule.max_level() {
            let ratio = dt / schedule.step_size(level);
            if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 0.5 {
                return Err(Error::InvalidInput(format!(
                    "assimilation interval {dt} is not an integer multiple of the \
                     level-{level} step"
                )));
            }
        }
        Ok(schedule)
    }

    /// Single-ensemble schedule: a plain ETPF at `level`.
    pub fn single(level: usize, n: usize, h0: f64, dt: f64, gamma: f64) -> Result<Self> {
        Self::new(level, vec![n], h0, dt, gamma)
    }

    /// Multilevel schedule starting at level 0 with the given sizes.
    pub fn multilevel(sample_sizes: Vec<usize>, h0: f64, dt: f64, gamma: f64) -> Result<Self> {
        Self::new(0, sample_sizes, h0, dt, gamma)
    }

    pub fn base_level(&self) -> usize {
        self.base_level
    }

    /// Finest level in the hierarchy.
    pub fn max_level(&self) -> usize {
        self.base_level + self.sample_sizes.len() - 1
    }

    /// Ensemble sizes: entry 0 for the coarse estimator, entry `k` for the
    /// pair across levels `base + k - 1, base + k`.
    pub fn sample_sizes(&self) -> &[usize] {
        &self.sample_sizes
    }

    pub fn num_estimators(&self) -> usize {
        self.sample_sizes.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.sample_sizes.len() - 1
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn step_size(&self, level: usize) -> f64 {
        self.h0 * (2.0_f64).powi(-(level as i32))
    }

    /// Integration steps per assimilation interval at `level`.
    pub fn steps_per_interval(&self, level: usize) -> usize {
        (self.dt / self.step_size(level)).round() as usize
    }
}

/// Rounds up, but forgives floating-point overshoot just below an integer.
fn ceil_guarded(v: f64) -> usize {
    if (v - v.round()).abs() < 1e-9 {
        v.round() as usize
    } else {
        v.ceil() as usize
    }
}

/// Builds the level count and sample sizes for a target RMSE `epsilon`:
/// `L = ceil(-log2(epsilon))` levels with variant-specific size decay.
pub fn schedule_from_epsilon(
    epsilon: f64,
    variant: ScheduleVariant,
    h0: f64,
    dt: f64,
    gamma: f64,
) -> Result<LevelSchedule> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidInput(format!(
            "target accuracy {epsilon} must lie strictly between 0 and 1"
        )));
    }
    let levels = ceil_guarded(-epsilon.ln() / std::f64::consts::LN_2).max(1);
    let inv_sq = epsilon.powi(-2);
    match variant {
        ScheduleVariant::Single => {
            LevelSchedule::single(levels, ceil_guarded(inv_sq), h0, dt, gamma)
        }
        ScheduleVariant::Seamless => {
            let sizes = (0..=levels)
                .map(|l| ceil_guarded(inv_sq * (2.0_f64).powf(-1.5 * l as f64)).max(1))
                .collect();
            LevelSchedule::multilevel(sizes, h0, dt, gamma)
        }
        ScheduleVariant::Standard => {
            let sizes = (0..=levels)
                .map(|l| ceil_guarded(inv_sq * (2.0_f64).powi(-(l as i32))).max(1))
                .collect();
            LevelSchedule::multilevel(sizes, h0, dt, gamma)
        }
    }
}

/// Equally spaced observations of the full state with a common error
/// covariance.
#[derive(Debug, Clone)]
pub struct ObservationSequence {
    dt: f64,
    observations: Array2<f64>,
    r: Array2<f64>,
}

impl ObservationSequence {
    pub fn new(dt: f64, observations: Array2<f64>, r: Array2<f64>) -> Result<Self> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "observation spacing {dt} must be positive"
            )));
        }
        if r.nrows() != observations.ncols() || r.ncols() != observations.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} covariance for observations of dimension {}",
                r.nrows(),
                r.ncols(),
                observations.ncols()
            )));
        }
        linalg::cholesky(r.view())?;
        Ok(Self { dt, observations, r })
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn observation(&self, n: usize) -> ArrayView1<'_, f64> {
        self.observations.row(n)
    }

    pub fn observations(&self) -> ArrayView2<'_, f64> {
        self.observations.view()
    }

    pub fn covariance(&self) -> ArrayView2<'_, f64> {
        self.r.view()
    }

    /// Observation times `(n + 1) dt`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| (n + 1) as f64 * self.dt).collect()
    }
}

/// The full ensemble hierarchy between assimilation steps.
#[derive(Debug, Clone)]
pub struct MultilevelState {
    coarse: WeightedEnsemble,
    pairs: Vec<CoupledPair>,
}

impl MultilevelState {
    pub fn new(coarse: WeightedEnsemble, pairs: Vec<CoupledPair>) -> Result<Self> {
        for pair in &pairs {
            if pair.dim() != coarse.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "pair of dimension {} in a state of dimension {}",
                    pair.dim(),
                    coarse.dim()
                )));
            }
        }
        Ok(Self { coarse, pairs })
    }

    pub fn coarse(&self) -> &WeightedEnsemble {
        &self.coarse
    }

    pub fn pairs(&self) -> &[CoupledPair] {
        &self.pairs
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn dim(&self) -> usize {
        self.coarse.dim()
    }
}

/// Bayesian reweighting against one observation, computed in log space.
///
/// `w_i ∝ w_i_prev · exp(-1/2 (y - x_i)' R^{-1} (y - x_i))`, normalised to
/// sum to one.  Particles with zero prior weight stay at zero.
pub fn update_weights(
    ensemble: &WeightedEnsemble,
    y: ArrayView1<'_, f64>,
    r: ArrayView2<'_, f64>,
) -> Result<WeightedEnsemble> {
    if y.len() != ensemble.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation of length {} for states of dimension {}",
            y.len(),
            ensemble.dim()
        )));
    }
    let chol = linalg::cholesky(r)?;
    let prior = ensemble.weights().weights();
    let mut log_weights = vec![f64::NEG_INFINITY; ensemble.len()];
    for (i, x) in ensemble.states().rows().into_iter().enumerate() {
        if prior[i] <= 0.0 {
            continue;
        }
        let residual = &y - &x;
        log_weights[i] = prior[i].ln() - 0.5 * linalg::mahalanobis_sq(&chol, residual.view());
    }
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateLikelihood);
    }
    let raw: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let weights = DiscreteMarginal::normalized(raw)?;
    WeightedEnsemble::new(ensemble.states().to_owned(), weights)
}

/// One single-ensemble assimilation: reweight, then transform to uniform.
pub fn etpf_assimilate(
    ensemble: &WeightedEnsemble,
    y: ArrayView1<'_, f64>,
    r: ArrayView2<'_, f64>,
    loc: Option<&Localisation>,
) -> Result<WeightedEnsemble> {
    let weighted = update_weights(ensemble, y, r)?;
    let transformed = match loc {
        Some(loc) => localized_etpf_transform(&weighted, loc)?,
        None => etpf_transform(&weighted)?,
    };
    WeightedEnsemble::uniform(transformed)
}

/// One multilevel assimilation: every ensemble is reweighted with the same
/// observation, the coarse estimator is transformed alone, and each pair is
/// transformed by the selected coupling.  All outputs carry uniform weights.
pub fn mletpf_step(
    state: &MultilevelState,
    y: ArrayView1<'_, f64>,
    r: ArrayView2<'_, f64>,
    mode: CouplingMode,
    loc: Option<&Localisation>,
) -> Result<MultilevelState> {
    let coarse = etpf_assimilate(state.coarse(), y, r, loc)?;
    let mut pairs = Vec::with_capacity(state.num_pairs());
    for pair in state.pairs() {
        let weighted = CoupledPair::new(
            update_weights(pair.coarse(), y, r)?,
            update_weights(pair.fine(), y, r)?,
        )?;
        let (coarse_out, fine_out) = match (mode, loc) {
            (CouplingMode::Seamless, None) => seamless_couple(&weighted)?,
            (CouplingMode::Seamless, Some(loc)) => {
                localized_seamless_couple(&weighted, loc)?
            }
            (CouplingMode::Standard, None) => standard_recouple(&weighted)?,
            (CouplingMode::Standard, Some(loc)) => {
                localized_standard_recouple(&weighted, loc)?
            }
        };
        pairs.push(CoupledPair::new(
            WeightedEnsemble::uniform(coarse_out)?,
            WeightedEnsemble::uniform(fine_out)?,
        )?);
    }
    MultilevelState::new(coarse, pairs)
}

/// Telescoping estimate of `E[g(X)]` from the current hierarchy.
pub fn multilevel_estimate(state: &MultilevelState, g: TestFunctional) -> Array1<f64> {
    let mut estimate = weighted_functional_mean(state.coarse(), g);
    for pair in state.pairs() {
        estimate += &weighted_functional_mean(pair.fine(), g);
        estimate -= &weighted_functional_mean(pair.coarse(), g);
    }
    estimate
}

fn weighted_functional_mean(e: &WeightedEnsemble, g: TestFunctional) -> Array1<f64> {
    let mut mean = Array1::zeros(e.dim());
    for (i, row) in e.states().rows().into_iter().enumerate() {
        let w = e.weights().weights()[i];
        mean.scaled_add(w, &g.eval(row));
    }
    mean
}

/// Trace of the sample covariance of the coarse/fine difference of a pair;
/// the per-level variance contribution of the telescoping estimator.
pub fn pair_difference_trace(pair: &CoupledPair) -> f64 {
    let n = pair.len();
    if n < 2 {
        return 0.0;
    }
    let diff = &pair.fine().states() - &pair.coarse().states();
    let mean = diff.mean_axis(Axis(0)).expect("nonempty ensemble");
    let mut total = 0.0;
    for row in diff.rows() {
        for (v, m) in row.iter().zip(mean.iter()) {
            let c = v - m;
            total += c * c;
        }
    }
    total / (n - 1) as f64
}

/// Per-run diagnostics of a filter execution.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    /// Telescoping estimate of `E[g(X)]` after each assimilation step.
    pub estimates: Array2<f64>,
    /// `Tr Cov(fine - coarse)` per pair after each step (steps x pairs).
    pub variance_traces: Array2<f64>,
    /// Forward-model flops attributed to each estimator over the whole run.
    pub estimator_flops: Vec<u64>,
    /// Cumulative total flops after each step; nondecreasing.
    pub cumulative_flops: Vec<u64>,
    /// Wall-clock duration of the run in seconds.
    pub wall_seconds: f64,
}

impl EstimatorReport {
    pub fn total_flops(&self) -> u64 {
        self.estimator_flops.iter().sum()
    }
}

/// Runs the full filter: alternate propagation and assimilation over every
/// observation, with deterministic per-(estimator, particle, step) noise
/// substreams derived from `seed`.
pub fn run_filter(
    spec: &ModelSpec,
    schedule: &LevelSchedule,
    obs: &ObservationSequence,
    mode: CouplingMode,
    loc: Option<&Localisation>,
    g: TestFunctional,
    seed: u64,
) -> Result<EstimatorReport> {
    if obs.dim() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observations of dimension {} for model of dimension {}",
            obs.dim(),
            spec.dim()
        )));
    }
    if (schedule.dt() - obs.dt()).abs() > 1e-12 * schedule.dt() {
        return Err(Error::InvalidInput(format!(
            "schedule interval {} does not match observation spacing {}",
            schedule.dt(),
            obs.dt()
        )));
    }
    if let Some(loc) = loc {
        if loc.dim() != spec.dim() {
            return Err(Error::DimensionMismatch(format!(
                "localisation of dimension {} for model of dimension {}",
                loc.dim(),
                spec.dim()
            )));
        }
    }

    let start = Instant::now();
    let sizes = schedule.sample_sizes();
    let noise_dim = spec.noise_dim();
    let step_flops = spec.step_flops();

    // Pairs share their initial draws across the two resolutions, which
    // maximises the initial coupling; estimators get disjoint substreams.
    let mut coarse = WeightedEnsemble::uniform(sample_initial_ensemble(
        spec,
        sizes[0],
        INITIAL_SPREAD,
        &mut substream(seed, &[role::INIT, 0]),
    )?)?;
    let mut pairs = Vec::with_capacity(schedule.num_pairs());
    for (k, &n) in sizes.iter().enumerate().skip(1) {
        let states = sample_initial_ensemble(
            spec,
            n,
            INITIAL_SPREAD,
            &mut substream(seed, &[role::INIT, k as u64]),
        )?;
        pairs.push(CoupledPair::new(
            WeightedEnsemble::uniform(states.clone())?,
            WeightedEnsemble::uniform(states)?,
        )?);
    }

    let n_obs = obs.len();
    let d = spec.dim();
    let mut estimates = Array2::zeros((n_obs, d));
    let mut variance_traces = Array2::zeros((n_obs, schedule.num_pairs()));
    let mut estimator_flops = vec![0_u64; schedule.num_estimators()];
    let mut cumulative_flops = vec![0_u64; n_obs];

    for n in 0..n_obs {
        let blowup = |e: Error| match e {
            Error::NonFiniteState => Error::NumericalBlowup { step: n },
            other => other,
        };

        // Coarse estimator forecast.
        let base = schedule.base_level();
        let h = schedule.step_size(base);
        let steps = schedule.steps_per_interval(base);
        let mut states = Array2::zeros((sizes[0], d));
        for i in 0..sizes[0] {
            let mut rng = substream(seed, &[role::PROPAGATE, 0, i as u64, n as u64]);
            let path = NoisePath::sample(noise_dim, steps, h, &mut rng);
            let next = propagate(spec, coarse.states().row(i), h, &path).map_err(blowup)?;
            states.row_mut(i).assign(&next);
        }
        estimator_flops[0] += sizes[0] as u64 * steps as u64 * step_flops;
        coarse = WeightedEnsemble::uniform(states)?;

        // Pair forecasts on shared paths.
        for (k, pair) in pairs.iter_mut().enumerate() {
            let fine_level = base + k + 1;
            let h_fine = schedule.step_size(fine_level);
            let fine_steps = schedule.steps_per_interval(fine_level);
            let n_k = sizes[k + 1];
            let mut coarse_states = Array2::zeros((n_k, d));
            let mut fine_states = Array2::zeros((n_k, d));
            for i in 0..n_k {
                let mut rng = substream(
                    seed,
                    &[role::PROPAGATE, (k + 1) as u64, i as u64, n as u64],
                );
                let path = NoisePath::sample(noise_dim, fine_steps, h_fine, &mut rng);
                let (c, f) = propagate_pair(
                    spec,
                    pair.coarse().states().row(i),
                    pair.fine().states().row(i),
                    h_fine,
                    fine_steps,
                    &path,
                )
                .map_err(blowup)?;
                coarse_states.row_mut(i).assign(&c);
                fine_states.row_mut(i).assign(&f);
            }
            estimator_flops[k + 1] +=
                n_k as u64 * (fine_steps + fine_steps / 2) as u64 * step_flops;
            *pair = CoupledPair::new(
                WeightedEnsemble::uniform(coarse_states)?,
                WeightedEnsemble::uniform(fine_states)?,
            )?;
        }

        // Assimilate.
        let state = MultilevelState::new(coarse, pairs)?;
        let state = mletpf_step(&state, obs.observation(n), obs.covariance(), mode, loc)
            .map_err(blowup)?;
        estimates.row_mut(n).assign(&multilevel_estimate(&state, g));
        for (k, pair) in state.pairs().iter().enumerate() {
            variance_traces[[n, k]] = pair_difference_trace(pair);
        }
        cumulative_flops[n] = estimator_flops.iter().sum();
        MultilevelState { coarse, pairs } = state;
    }

    Ok(EstimatorReport {
        estimates,
        variance_traces,
        estimator_flops,
        cumulative_flops,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
