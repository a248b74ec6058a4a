//! Stochastic forward models and level-coupled propagation.
//!
//! Two chaotic test systems are provided alongside a linear sanity model:
//!
//! * Lorenz 63 with additive noise, `dx = f(x) dt + phi dW`, where one
//!   scalar Brownian motion drives all three components.
//! * Lorenz 96 (40 components, periodic) with independent per-component
//!   Brownian motions.
//!
//! Integration is Euler–Maruyama.  For multilevel estimation the same
//! Brownian path drives a coarse and a fine discretisation of the same
//! trajectory: the coarse step over `[t, t+2h]` consumes the sum of the two
//! fine increments, which keeps the pair as strongly coupled as the scheme
//! allows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// How the Brownian forcing enters the state equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// One scalar Brownian motion added to every component.
    SharedScalar,
    /// Independent Brownian motions per component.
    PerComponent,
}

/// A forward model: drift, diffusion coefficient, and integration defaults.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Lorenz63 { rho: f64, sigma: f64, beta: f64, phi: f64 },
    Lorenz96 { forcing: f64, delta: f64, noise: f64, dim: usize },
    LinearTest { rate: f64, noise: f64, dim: usize },
}

impl ModelSpec {
    /// Standard chaotic Lorenz 63 with additive shared-scalar noise.
    pub fn lorenz63() -> Self {
        Self::Lorenz63 { rho: 28.0, sigma: 10.0, beta: 8.0 / 3.0, phi: 0.1 }
    }

    /// 40-component Lorenz 96 with independent component noise.
    pub fn lorenz96() -> Self {
        Self::Lorenz96 { forcing: 8.0, delta: 0.5, noise: 0.1, dim: 40 }
    }

    /// `dX = rate * X dt + noise dW`, componentwise; useful for hand-checkable
    /// integration tests.
    pub fn linear_test(rate: f64, noise: f64, dim: usize) -> Self {
        Self::LinearTest { rate, noise, dim }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Lorenz63 { .. } => "lorenz63",
            Self::Lorenz96 { .. } => "lorenz96",
            Self::LinearTest { .. } => "linear-test",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Lorenz63 { .. } => 3,
            Self::Lorenz96 { dim, .. } | Self::LinearTest { dim, .. } => *dim,
        }
    }

    pub fn noise_mode(&self) -> NoiseMode {
        match self {
            Self::Lorenz63 { .. } => NoiseMode::SharedScalar,
            Self::Lorenz96 { .. } | Self::LinearTest { .. } => NoiseMode::PerComponent,
        }
    }

    /// Number of independent Brownian components.
    pub fn noise_dim(&self) -> usize {
        match self.noise_mode() {
            NoiseMode::SharedScalar => 1,
            NoiseMode::PerComponent => self.dim(),
        }
    }

    /// The coefficient multiplying the Brownian increments.
    pub fn diffusion(&self) -> f64 {
        match self {
            Self::Lorenz63 { phi, .. } => *phi,
            Self::Lorenz96 { noise, .. } => *noise,
            Self::LinearTest { noise, .. } => *noise,
        }
    }

    /// Coarsest stable time step `h_0`; level `l` integrates at `h_0 2^{-l}`.
    pub fn base_step(&self) -> f64 {
        match self {
            Self::Lorenz63 { .. } => (2.0_f64).powi(-9),
            Self::Lorenz96 { .. } => (2.0_f64).powi(-8),
            Self::LinearTest { .. } => (2.0_f64).powi(-4),
        }
    }

    /// Nominal floating-point operations per Euler–Maruyama step, used for
    /// the analytic cost counters: drift evaluation plus the state update.
    pub fn step_flops(&self) -> u64 {
        match self {
            // Drift: 8 flops; update x + h f + phi dW: 4 per component.
            Self::Lorenz63 { .. } => 8 + 4 * 3,
            // Per component: advection 4, damping+forcing 2, update 4.
            Self::Lorenz96 { dim, .. } => 10 * *dim as u64,
            Self::LinearTest { dim, .. } => 5 * *dim as u64,
        }
    }

    /// Fixed starting point for the deterministic spin-up.
    fn anchor(&self) -> Array1<f64> {
        match self {
            Self::Lorenz63 { .. } => Array1::ones(3),
            Self::Lorenz96 { forcing, dim, .. } => {
                let mut x = Array1::from_elem(*dim, *forcing);
                x[0] += 0.01;
                x
            }
            Self::LinearTest { dim, .. } => Array1::zeros(*dim),
        }
    }
}

/// Deterministic drift `f(x)`.
pub fn drift(spec: &ModelSpec, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state of length {} for model of dimension {}",
            x.len(),
            spec.dim()
        )));
    }
    let mut out = Array1::zeros(x.len());
    drift_into(spec, x, out.view_mut().into_slice().expect("contiguous"));
    Ok(out)
}

fn drift_into(spec: &ModelSpec, x: ArrayView1<'_, f64>, out: &mut [f64]) {
    match spec {
        ModelSpec::Lorenz63 { rho, sigma, beta, .. } => {
            out[0] = sigma * (x[1] - x[0]);
            out[1] = x[0] * (rho - x[2]) - x[1];
            out[2] = x[0] * x[1] - beta * x[2];
        }
        ModelSpec::Lorenz96 { forcing, delta, dim, .. } => {
            let d = *dim;
            let scale = 3.0 * delta;
            for j in 0..d {
                let jm1 = x[(j + d - 1) % d];
                let jm2 = x[(j + d - 2) % d];
                let jp1 = x[(j + 1) % d];
                out[j] = -(jm1 * jp1 - jm2 * jm1) / scale - x[j] + forcing;
            }
        }
        ModelSpec::LinearTest { rate, .. } => {
            for (o, xi) in out.iter_mut().zip(x.iter()) {
                *o = rate * xi;
            }
        }
    }
}

/// One Euler–Maruyama step: `x + h f(x) + diffusion * dW`.
///
/// `dw` must have the model's noise dimension; for shared-scalar noise the
/// single increment is added to every component.
pub fn euler_maruyama(
    spec: &ModelSpec,
    x: ArrayView1<'_, f64>,
    h: f64,
    dw: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    if h <= 0.0 {
        return Err(Error::InvalidInput(format!("time step {h} must be positive")));
    }
    if dw.len() != spec.noise_dim() {
        return Err(Error::DimensionMismatch(format!(
            "noise increment of length {} for noise dimension {}",
            dw.len(),
            spec.noise_dim()
        )));
    }
    let mut out = drift(spec, x)?;
    let g = spec.diffusion();
    match spec.noise_mode() {
        NoiseMode::SharedScalar => {
            let kick = g * dw[0];
            for (o, xi) in out.iter_mut().zip(x.iter()) {
                *o = xi + h * *o + kick;
            }
        }
        NoiseMode::PerComponent => {
            for ((o, xi), wi) in out.iter_mut().zip(x.iter()).zip(dw.iter()) {
                *o = xi + h * *o + g * wi;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState);
    }
    Ok(out)
}

/// A realisation of the Brownian increments driving one particle over one
/// assimilation interval, sampled at the fine resolution.
#[derive(Debug, Clone)]
pub struct NoisePath {
    h: f64,
    increments: Array2<f64>,
}

impl NoisePath {
    /// Samples `n_steps` increments `dW ~ N(0, h I)` of width `noise_dim`.
    pub fn sample<R: Rng + ?Sized>(
        noise_dim: usize,
        n_steps: usize,
        h: f64,
        rng: &mut R,
    ) -> Self {
        let std = h.sqrt();
        let increments = Array2::from_shape_fn((n_steps, noise_dim), |_| {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        Self { h, increments }
    }

    /// An all-zero path, for deterministic integration.
    pub fn zeros(noise_dim: usize, n_steps: usize, h: f64) -> Self {
        Self { h, increments: Array2::zeros((n_steps, noise_dim)) }
    }

    pub fn n_steps(&self) -> usize {
        self.increments.nrows()
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Increment for fine step `t`.
    pub fn fine_increment(&self, t: usize) -> ArrayView1<'_, f64> {
        self.increments.row(t)
    }

    /// Increment for coarse step `t` at step size `2h`: the exact sum of
    /// fine increments `2t` and `2t + 1`.
    pub fn coarse_increment(&self, t: usize) -> Array1<f64> {
        let a = self.increments.row(2 * t);
        let b = self.increments.row(2 * t + 1);
        &a + &b
    }
}

/// Advances `x` through every step of `path` at step size `h`.
pub fn propagate(
    spec: &ModelSpec,
    x: ArrayView1<'_, f64>,
    h: f64,
    path: &NoisePath,
) -> Result<Array1<f64>> {
    let mut state = x.to_owned();
    for t in 0..path.n_steps() {
        state = euler_maruyama(spec, state.view(), h, path.fine_increment(t))?;
    }
    Ok(state)
}

/// Advances a coarse/fine pair through one assimilation interval on a shared
/// Brownian path: the fine state takes `n_fine_steps` steps of `h_fine`, the
/// coarse state `n_fine_steps / 2` steps of `2 h_fine` using pairwise-summed
/// increments.
pub fn propagate_pair(
    spec: &ModelSpec,
    x_coarse: ArrayView1<'_, f64>,
    x_fine: ArrayView1<'_, f64>,
    h_fine: f64,
    n_fine_steps: usize,
    path: &NoisePath,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if !n_fine_steps.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "coupled propagation needs an even number of fine steps, got {n_fine_steps}"
        )));
    }
    if path.n_steps() < n_fine_steps {
        return Err(Error::InvalidInput(format!(
            "noise path holds {} increments but {} fine steps were requested",
            path.n_steps(),
            n_fine_steps
        )));
    }
    let mut fine = x_fine.to_owned();
    for t in 0..n_fine_steps {
        fine = euler_maruyama(spec, fine.view(), h_fine, path.fine_increment(t))?;
    }
    let h_coarse = 2.0 * h_fine;
    let mut coarse = x_coarse.to_owned();
    for t in 0..n_fine_steps / 2 {
        let dw = path.coarse_increment(t);
        coarse = euler_maruyama(spec, coarse.view(), h_coarse, dw.view())?;
    }
    Ok((coarse, fine))
}

/// The deterministic spin-up state: 1000 noise-free steps at the coarsest
/// step size from the model's anchor point.
pub fn spin_up_state(spec: &ModelSpec) -> Array1<f64> {
    let h = spec.base_step();
    let mut x = spec.anchor();
    let zero = Array1::zeros(spec.noise_dim());
    for _ in 0..1000 {
        x = euler_maruyama(spec, x.view(), h, zero.view())
            .expect("deterministic spin-up cannot blow up for the provided models");
    }
    x
}

/// Draws `n` initial states: the spin-up state plus `N(0, spread * I)`
/// perturbations.  `spread = 0` reproduces the spin-up state exactly.
pub fn sample_initial_ensemble<R: Rng + ?Sized>(
    spec: &ModelSpec,
    n: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::InvalidInput("ensemble size must be at least 1".into()));
    }
    if spread < 0.0 || !spread.is_finite() {
        return Err(Error::InvalidInput(format!(
            "initial spread {spread} must be finite and non-negative"
        )));
    }
    let center = spin_up_state(spec);
    let std = spread.sqrt();
    let d = spec.dim();
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = center[k] + std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

/// Observation of the full state: `y = x + eta`, `eta ~ N(0, R)`.
pub fn observe<R: Rng + ?Sized>(
    x: ArrayView1<'_, f64>,
    r: ArrayView2<'_, f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if r.nrows() != x.len() || r.ncols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} observation covariance for state of length {}",
            r.nrows(),
            r.ncols(),
            x.len()
        )));
    }
    let l = linalg::cholesky(r)?;
    let z: Array1<f64> =
        Array1::from_shape_fn(x.len(), |_| rng.sample::<f64, _>(StandardNormal));
    Ok(&x + &l.dot(&z))
}
