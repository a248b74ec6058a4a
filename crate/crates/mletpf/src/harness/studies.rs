//! The three experiment drivers, plus twin-data and reference generation.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{
    run_filter, schedule_from_epsilon, update_weights, CouplingMode, LevelSchedule,
    ObservationSequence, ScheduleVariant, TestFunctional, INITIAL_SPREAD,
};
use crate::models::{observe, propagate, sample_initial_ensemble, ModelSpec, NoisePath};
use crate::rng::{role, stream_key, substream};
use crate::transform::{seamless_couple, CoupledPair, Localisation, WeightedEnsemble};

use super::io::{config_hash, load_reference, save_reference};
use super::stats::{central_moments, compute_rmse, fit_loglog_slope};
use super::{ExperimentConfig, ReferenceSolution, StudyResult, StudyRow};

/// Observation error variance used by all twin experiments.
const OBSERVATION_VARIANCE: f64 = 0.25;

/// Spacing of observations for a model, as a multiple of its base step.
pub(crate) fn observation_interval(spec: &ModelSpec) -> f64 {
    match spec.name() {
        "lorenz63" => 4.0 * spec.base_step(),
        _ => spec.base_step(),
    }
}

fn observation_covariance(spec: &ModelSpec) -> Array2<f64> {
    Array2::eye(spec.dim()) * OBSERVATION_VARIANCE
}

/// Maps a mode name to its schedule variant, coupling rule, and the stable
/// index used to separate random streams.
fn mode_settings(mode: &str) -> Result<(ScheduleVariant, CouplingMode, u64)> {
    match mode {
        "seamless" => Ok((ScheduleVariant::Seamless, CouplingMode::Seamless, 0)),
        "standard" => Ok((ScheduleVariant::Standard, CouplingMode::Standard, 1)),
        "single" => Ok((ScheduleVariant::Single, CouplingMode::Seamless, 2)),
        other => Err(Error::Config(format!(
            "unknown mode {other:?}; expected seamless, standard, or single"
        ))),
    }
}

fn localisation_for(cfg: &ExperimentConfig, spec: &ModelSpec) -> Option<Localisation> {
    cfg.rloc.map(|radius| Localisation::new(spec.dim(), radius))
}

/// Simulates a hidden truth at the given discretisation level and emits a
/// noisy full-state observation every `dt`.  The truth starts from a draw of
/// the same initial law the filters use and carries its own noise streams,
/// so filter runs never share randomness with the data they assimilate.
pub fn generate_twin_data(
    spec: &ModelSpec,
    level: usize,
    dt: f64,
    steps: usize,
    r: &Array2<f64>,
    seed: u64,
) -> Result<(Array2<f64>, ObservationSequence)> {
    if steps == 0 {
        return Err(Error::InvalidInput("at least one observation step".into()));
    }
    let h = spec.base_step() * 0.5_f64.powi(level as i32);
    let ratio = dt / h;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 1.0 {
        return Err(Error::Config(format!(
            "observation spacing {dt} is not a multiple of the level-{level} step {h}"
        )));
    }
    let n_steps = ratio.round() as usize;

    let d = spec.dim();
    let noise_dim = spec.noise_dim();
    let start = sample_initial_ensemble(
        spec,
        1,
        INITIAL_SPREAD,
        &mut substream(seed, &[role::TRUTH, 0]),
    )?;
    let mut x = start.row(0).to_owned();

    let mut truth = Array2::zeros((steps, d));
    let mut observations = Array2::zeros((steps, d));
    for n in 0..steps {
        let path = NoisePath::sample(
            noise_dim,
            n_steps,
            h,
            &mut substream(seed, &[role::TRUTH, 1, n as u64]),
        );
        x = propagate(spec, x.view(), h, &path)?;
        truth.row_mut(n).assign(&x);
        let y = observe(
            x.view(),
            r.view(),
            &mut substream(seed, &[role::OBSERVE, n as u64]),
        )?;
        observations.row_mut(n).assign(&y);
    }
    let obs = ObservationSequence::new(dt, observations, r.clone())?;
    Ok((truth, obs))
}

/// The configuration slice that determines a reference solution (and the
/// twin data it assimilates); hashed to key the on-disk cache.
#[derive(Serialize)]
struct ReferenceKey<'a> {
    model: &'a str,
    level: usize,
    samples: usize,
    steps: usize,
    dt: f64,
    seed: u64,
    rloc: Option<usize>,
}

fn reference_hash(cfg: &ExperimentConfig, dt: f64) -> Result<String> {
    config_hash(&ReferenceKey {
        model: &cfg.model,
        level: cfg.reference_level,
        samples: cfg.reference_samples,
        steps: cfg.steps,
        dt,
        seed: cfg.seed,
        rloc: cfg.rloc,
    })
}

/// Runs a high-accuracy single-level filter on the study's twin data and
/// packages its per-step mean estimates as the RMSE baseline.
pub fn generate_reference(cfg: &ExperimentConfig) -> Result<ReferenceSolution> {
    let spec = cfg.model_spec()?;
    let dt = observation_interval(&spec);
    let r = observation_covariance(&spec);
    let (_, obs) = generate_twin_data(
        &spec,
        cfg.reference_level,
        dt,
        cfg.steps,
        &r,
        cfg.seed,
    )?;
    let schedule = LevelSchedule::single(
        cfg.reference_level,
        cfg.reference_samples,
        spec.base_step(),
        dt,
        1.0,
    )?;
    let loc = localisation_for(cfg, &spec);
    let report = run_filter(
        &spec,
        &schedule,
        &obs,
        CouplingMode::Seamless,
        loc.as_ref(),
        TestFunctional::Identity,
        stream_key(cfg.seed, &[role::STUDY, u64::MAX]),
    )?;
    Ok(ReferenceSolution {
        config_hash: reference_hash(cfg, dt)?,
        model: cfg.model.clone(),
        level: cfg.reference_level,
        samples: cfg.reference_samples,
        seed: cfg.seed,
        dt,
        estimates: report
            .estimates
            .rows()
            .into_iter()
            .map(|row| row.to_vec())
            .collect(),
    })
}

/// Loads the cached reference matching this configuration, or generates and
/// caches a fresh one.  Without an output directory the cache is skipped.
fn reference_for(cfg: &ExperimentConfig) -> Result<ReferenceSolution> {
    let spec = cfg.model_spec()?;
    let hash = reference_hash(cfg, observation_interval(&spec))?;
    if let Some(dir) = &cfg.out {
        if let Some(cached) = load_reference(dir, &hash) {
            return Ok(cached);
        }
    }
    let reference = generate_reference(cfg)?;
    if let Some(dir) = &cfg.out {
        save_reference(dir, &reference)?;
    }
    Ok(reference)
}

const MOMENT_NAMES: [&str; 4] = ["mean", "variance", "third_moment", "fourth_moment"];

/// Gaussian one-step coupling study: ensembles drawn from N(1, 1) (coarse)
/// and N(0.5, 1) (fine) are reweighted against the observation 0.1 with
/// error variance 2 and coupled; the coarse output's first four moments are
/// scored against the exact posterior N(0.7, 2/3).  Reported RMSE decays
/// like N^{-1/2}.
pub fn run_consistency_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let experiment = "consistency";
    let mode = "seamless";
    let y = Array1::from_elem(1, 0.1);
    let r = Array2::from_elem((1, 1), 2.0);
    let posterior_var = 2.0 / 3.0;
    let targets = [0.7, posterior_var, 0.0, 3.0 * posterior_var * posterior_var];

    let mut rows = Vec::new();
    let mut rmse_per_size = vec![Vec::new(); MOMENT_NAMES.len()];
    for &n in &cfg.ensemble_sizes {
        let mut sq_err = [0.0; 4];
        for rep in 0..cfg.reps {
            let draws = |side: u64, shift: f64| -> Array2<f64> {
                let mut rng = substream(
                    cfg.seed,
                    &[role::STUDY, n as u64, rep as u64, side],
                );
                Array2::from_shape_fn((n, 1), |_| {
                    shift + rng.sample::<f64, _>(StandardNormal)
                })
            };
            let coarse = update_weights(
                &WeightedEnsemble::uniform(draws(0, 1.0))?,
                y.view(),
                r.view(),
            )?;
            let fine = update_weights(
                &WeightedEnsemble::uniform(draws(1, 0.5))?,
                y.view(),
                r.view(),
            )?;
            let pair = CoupledPair::new(coarse, fine)?;
            let (coarse_out, _) = seamless_couple(&pair)?;
            let sample = coarse_out.column(0).to_vec();
            let moments = central_moments(&sample);
            for (m, (&value, &target)) in moments.iter().zip(&targets).enumerate() {
                sq_err[m] += (value - target) * (value - target);
                rows.push(StudyRow {
                    experiment: experiment.into(),
                    mode: mode.into(),
                    epsilon: None,
                    level: Some(n),
                    rep: Some(rep),
                    metric: MOMENT_NAMES[m].into(),
                    value,
                });
            }
        }
        for (m, name) in MOMENT_NAMES.iter().enumerate() {
            let rmse = (sq_err[m] / cfg.reps as f64).sqrt();
            rmse_per_size[m].push(rmse);
            rows.push(StudyRow {
                experiment: experiment.into(),
                mode: mode.into(),
                epsilon: None,
                level: Some(n),
                rep: None,
                metric: format!("rmse_{name}"),
                value: rmse,
            });
        }
    }

    if cfg.ensemble_sizes.len() >= 2 {
        let xs: Vec<f64> = cfg.ensemble_sizes.iter().map(|&n| n as f64).collect();
        for (m, name) in MOMENT_NAMES.iter().enumerate() {
            let ys: Vec<f64> = rmse_per_size[m]
                .iter()
                .map(|&v| v.max(f64::MIN_POSITIVE))
                .collect();
            rows.push(StudyRow {
                experiment: experiment.into(),
                mode: mode.into(),
                epsilon: None,
                level: None,
                rep: None,
                metric: format!("slope_rmse_{name}"),
                value: fit_loglog_slope(&xs, &ys)?,
            });
        }
    }
    Ok(StudyResult { rows })
}

/// Coupled-pair variance decay: runs the multilevel filter on twin data for
/// each mode and repetition, records the time-averaged `Tr Cov(fine -
/// coarse)` per level, and fits the decay exponent beta against the step
/// size.  Repetitions share forecast noise across modes, so the coupling
/// rule is the only difference.
pub fn run_variance_decay_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    cfg.validate()?;
    for mode in &cfg.modes {
        if mode == "single" {
            return Err(Error::Config(
                "variance decay needs coupled pairs; mode `single` has none".into(),
            ));
        }
    }
    let experiment = "variance-decay";
    let spec = cfg.model_spec()?;
    let dt = observation_interval(&spec);
    let r = observation_covariance(&spec);
    let sizes: Vec<usize> = (0..=cfg.levels).map(|l| cfg.base_samples >> l).collect();
    let schedule = LevelSchedule::multilevel(sizes, spec.base_step(), dt, 1.0)?;
    let (_, obs) = generate_twin_data(&spec, cfg.levels, dt, cfg.steps, &r, cfg.seed)?;
    let loc = localisation_for(cfg, &spec);

    let tasks: Vec<(String, CouplingMode, usize)> = cfg
        .modes
        .iter()
        .map(|m| mode_settings(m).map(|(_, coupling, _)| (m.clone(), coupling)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flat_map(|(m, coupling)| (0..cfg.reps).map(move |rep| (m.clone(), coupling, rep)))
        .collect();

    let per_task: Vec<Vec<StudyRow>> = tasks
        .par_iter()
        .map(|(mode, coupling, rep)| -> Result<Vec<StudyRow>> {
            let report = run_filter(
                &spec,
                &schedule,
                &obs,
                *coupling,
                loc.as_ref(),
                TestFunctional::Identity,
                stream_key(cfg.seed, &[role::STUDY, *rep as u64]),
            )?;
            let steps = report.variance_traces.nrows() as f64;
            Ok((0..schedule.num_pairs())
                .map(|k| StudyRow {
                    experiment: experiment.into(),
                    mode: mode.clone(),
                    epsilon: None,
                    level: Some(k + 1),
                    rep: Some(*rep),
                    metric: "trace_v".into(),
                    value: report.variance_traces.column(k).sum() / steps,
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<StudyRow> = per_task.into_iter().flatten().collect();

    let mut aggregated = Vec::new();
    for mode in &cfg.modes {
        let mut means = Vec::new();
        for level in 1..=cfg.levels {
            let values: Vec<f64> = rows
                .iter()
                .filter(|row| {
                    &row.mode == mode && row.level == Some(level) && row.metric == "trace_v"
                })
                .map(|row| row.value)
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            means.push(mean);
            aggregated.push(StudyRow {
                experiment: experiment.into(),
                mode: mode.clone(),
                epsilon: None,
                level: Some(level),
                rep: None,
                metric: "mean_trace_v".into(),
                value: mean,
            });
        }
        if cfg.levels >= 2 {
            let hs: Vec<f64> = (1..=cfg.levels)
                .map(|l| schedule.step_size(l))
                .collect();
            let ys: Vec<f64> = means.iter().map(|&v| v.max(f64::MIN_POSITIVE)).collect();
            aggregated.push(StudyRow {
                experiment: experiment.into(),
                mode: mode.clone(),
                epsilon: None,
                level: None,
                rep: None,
                metric: "beta".into(),
                value: fit_loglog_slope(&hs, &ys)?,
            });
        }
    }
    rows.extend(aggregated);
    Ok(StudyResult { rows })
}

/// Cost-versus-accuracy study: for each mode and accuracy target, builds the
/// sample-size schedule, runs the filter, and records forward-model flops
/// (and RMSE against the reference when enabled).  Fits the cost exponent
/// of flops against epsilon per mode.
pub fn run_cost_accuracy_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    cfg.validate()?;
    if cfg.epsilons.is_empty() {
        return Err(Error::Config(
            "cost-accuracy needs at least one epsilon".into(),
        ));
    }
    let experiment = "cost-accuracy";
    let spec = cfg.model_spec()?;
    let dt = observation_interval(&spec);
    let r = observation_covariance(&spec);
    let (_, obs) = generate_twin_data(&spec, cfg.reference_level, dt, cfg.steps, &r, cfg.seed)?;
    let loc = localisation_for(cfg, &spec);

    let reference = if cfg.use_reference {
        Some(reference_for(cfg)?)
    } else {
        None
    };
    let reference_estimates = reference.as_ref().map(|r| r.estimates_array());

    let mut schedules = Vec::new();
    for mode in &cfg.modes {
        let (variant, coupling, mode_id) = mode_settings(mode)?;
        for (ei, &eps) in cfg.epsilons.iter().enumerate() {
            let schedule = schedule_from_epsilon(eps, variant, spec.base_step(), dt, 1.0)?;
            if let Some(reference) = &reference {
                let max_n = schedule.sample_sizes()[0];
                if !reference.dominates(schedule.max_level(), max_n) {
                    return Err(Error::Config(format!(
                        "reference (level {}, {} samples) must strictly dominate the \
                         epsilon={eps} {mode} run (level {}, {} samples)",
                        reference.level,
                        reference.samples,
                        schedule.max_level(),
                        max_n
                    )));
                }
            }
            for rep in 0..cfg.reps {
                schedules.push((mode.clone(), coupling, mode_id, ei, eps, rep, schedule.clone()));
            }
        }
    }

    let per_task: Vec<Vec<StudyRow>> = schedules
        .par_iter()
        .map(
            |(mode, coupling, mode_id, ei, eps, rep, schedule)| -> Result<Vec<StudyRow>> {
                let report = run_filter(
                    &spec,
                    schedule,
                    &obs,
                    *coupling,
                    loc.as_ref(),
                    TestFunctional::Identity,
                    stream_key(
                        cfg.seed,
                        &[role::STUDY, *mode_id, *ei as u64, *rep as u64],
                    ),
                )?;
                let mut rows = vec![
                    StudyRow {
                        experiment: experiment.into(),
                        mode: mode.clone(),
                        epsilon: Some(*eps),
                        level: None,
                        rep: Some(*rep),
                        metric: "flops".into(),
                        value: report.total_flops() as f64,
                    },
                    StudyRow {
                        experiment: experiment.into(),
                        mode: mode.clone(),
                        epsilon: Some(*eps),
                        level: None,
                        rep: Some(*rep),
                        metric: "wall_seconds".into(),
                        value: report.wall_seconds,
                    },
                ];
                if let Some(reference) = &reference_estimates {
                    rows.push(StudyRow {
                        experiment: experiment.into(),
                        mode: mode.clone(),
                        epsilon: Some(*eps),
                        level: None,
                        rep: Some(*rep),
                        metric: "rmse".into(),
                        value: compute_rmse(report.estimates.view(), reference.view())?,
                    });
                }
                Ok(rows)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<StudyRow> = per_task.into_iter().flatten().collect();

    let mut aggregated = Vec::new();
    for mode in &cfg.modes {
        let mean_of = |metric: &str| -> Vec<f64> {
            cfg.epsilons
                .iter()
                .map(|&eps| {
                    let values: Vec<f64> = rows
                        .iter()
                        .filter(|row| {
                            &row.mode == mode
                                && row.epsilon == Some(eps)
                                && row.metric == metric
                        })
                        .map(|row| row.value)
                        .collect();
                    values.iter().sum::<f64>() / values.len() as f64
                })
                .collect()
        };
        let mean_flops = mean_of("flops");
        let mean_rmse = reference.as_ref().map(|_| mean_of("rmse"));
        for (i, &eps) in cfg.epsilons.iter().enumerate() {
            aggregated.push(StudyRow {
                experiment: experiment.into(),
                mode: mode.clone(),
                epsilon: Some(eps),
                level: None,
                rep: None,
                metric: "mean_flops".into(),
                value: mean_flops[i],
            });
            if let Some(rmse) = &mean_rmse {
                aggregated.push(StudyRow {
                    experiment: experiment.into(),
                    mode: mode.clone(),
                    epsilon: Some(eps),
                    level: None,
                    rep: None,
                    metric: "mean_rmse".into(),
                    value: rmse[i],
                });
            }
        }
        if cfg.epsilons.len() >= 2 {
            aggregated.push(StudyRow {
                experiment: experiment.into(),
                mode: mode.clone(),
                epsilon: None,
                level: None,
                rep: None,
                metric: "cost_exponent".into(),
                value: fit_loglog_slope(&cfg.epsilons, &mean_flops)?,
            });
            if let Some(rmse) = &mean_rmse {
                let ys: Vec<f64> = rmse.iter().map(|&v| v.max(f64::MIN_POSITIVE)).collect();
                aggregated.push(StudyRow {
                    experiment: experiment.into(),
                    mode: mode.clone(),
                    epsilon: None,
                    level: None,
                    rep: None,
                    metric: "rmse_exponent".into(),
                    value: fit_loglog_slope(&cfg.epsilons, &ys)?,
                });
            }
        }
    }
    rows.extend(aggregated);
    Ok(StudyResult { rows })
}
