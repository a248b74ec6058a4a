//! Experiment drivers: twin-data generation, reference runs, and the
//! consistency / variance-decay / cost-accuracy studies, plus the CSV and
//! manifest plumbing behind the command-line interface.

mod cli;
mod io;
mod stats;
mod studies;

pub use cli::cli_main;
pub use io::{config_hash, load_reference, rows_to_csv, save_reference, write_csv, write_manifest};
pub use stats::{central_moments, compute_rmse, fit_loglog_slope};
pub use studies::{
    generate_reference, generate_twin_data, run_consistency_study, run_cost_accuracy_study,
    run_variance_decay_study,
};

use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;

/// Everything a study needs to run, deserializable from a JSON config file.
/// Fields not supplied fall back to desk-scale defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Which study this configures: `consistency`, `variance-decay`,
    /// `cost-accuracy`, `reference`, or `twin`.
    pub experiment: String,
    /// Forward model: `lorenz63`, `lorenz96`, or `linear`.
    pub model: String,
    /// Accuracy targets for the cost-accuracy study.
    pub epsilons: Vec<f64>,
    /// Estimator variants to run (`seamless`, `standard`, `single`).
    pub modes: Vec<String>,
    /// Localisation radius; absent means global (untapered) couplings.
    pub rloc: Option<usize>,
    /// Master seed; every random stream in a study derives from it.
    pub seed: u64,
    /// Independent repetitions per configuration point.
    pub reps: usize,
    /// Number of assimilation steps (observation times).
    pub steps: usize,
    /// Output directory for CSV results and the run manifest.
    pub out: Option<PathBuf>,
    /// Finest coupled level for the variance-decay study (pairs 1..=levels).
    pub levels: usize,
    /// Level-0 ensemble size for the variance-decay study; level `l` uses
    /// `base_samples >> l`.
    pub base_samples: usize,
    /// Ensemble sizes for the consistency study.
    pub ensemble_sizes: Vec<usize>,
    /// Discretisation level of the reference run.
    pub reference_level: usize,
    /// Ensemble size of the reference run.
    pub reference_samples: usize,
    /// Whether the cost-accuracy study scores RMSE against a reference run.
    pub use_reference: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: String::new(),
            model: "lorenz63".into(),
            epsilons: vec![0.5, 0.35, 0.25, 0.18],
            modes: vec!["seamless".into(), "standard".into()],
            rloc: None,
            seed: 1,
            reps: 5,
            steps: 200,
            out: None,
            levels: 4,
            base_samples: 256,
            ensemble_sizes: (4..=12).map(|k| 1usize << k).collect(),
            reference_level: 8,
            reference_samples: 4000,
            use_reference: true,
        }
    }
}

impl ExperimentConfig {
    /// Checks the invariants every study relies on.
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if let Some(&eps) = self
            .epsilons
            .iter()
            .find(|&&e| !(e > 0.0 && e < 1.0) || !e.is_finite())
        {
            return Err(Error::Config(format!(
                "epsilon {eps} outside the open interval (0, 1)"
            )));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one mode is required".into()));
        }
        for mode in &self.modes {
            if !matches!(mode.as_str(), "seamless" | "standard" | "single") {
                return Err(Error::Config(format!(
                    "unknown mode {mode:?}; expected seamless, standard, or single"
                )));
            }
        }
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if self.base_samples >> self.levels == 0 {
            return Err(Error::Config(format!(
                "base_samples {} leaves no particles at level {}",
                self.base_samples, self.levels
            )));
        }
        if self.ensemble_sizes.contains(&0) {
            return Err(Error::Config("ensemble sizes must be positive".into()));
        }
        if self.reference_samples == 0 {
            return Err(Error::Config("reference_samples must be positive".into()));
        }
        self.model_spec().map(|_| ())
    }

    /// Resolves the `model` field to a concrete forward model.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        match self.model.as_str() {
            "lorenz63" => Ok(ModelSpec::lorenz63()),
            "lorenz96" => Ok(ModelSpec::lorenz96()),
            "linear" => Ok(ModelSpec::linear_test(0.5, 0.25, 2)),
            other => Err(Error::Config(format!(
                "unknown model {other:?}; expected lorenz63, lorenz96, or linear"
            ))),
        }
    }
}

/// Cached output of a high-accuracy single-level run, used as the RMSE
/// baseline for the cost-accuracy study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSolution {
    /// Hash of the configuration slice that determines this reference.
    pub config_hash: String,
    pub model: String,
    pub level: usize,
    pub samples: usize,
    pub seed: u64,
    pub dt: f64,
    /// Posterior mean estimate per assimilation step, one row per step.
    pub estimates: Vec<Vec<f64>>,
}

impl ReferenceSolution {
    /// Per-step estimates as a dense matrix.
    pub fn estimates_array(&self) -> Array2<f64> {
        let rows = self.estimates.len();
        let cols = self.estimates.first().map_or(0, Vec::len);
        let mut out = Array2::zeros((rows, cols));
        for (i, row) in self.estimates.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// True when this reference is strictly finer and larger than a run at
    /// the given level with the given maximum ensemble size.
    pub fn dominates(&self, level: usize, samples: usize) -> bool {
        self.level > level && self.samples > samples
    }
}

/// One long-format result record; `None` fields print as empty CSV cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub experiment: String,
    pub mode: String,
    pub epsilon: Option<f64>,
    /// Discretisation level, or the ensemble size for consistency rows.
    pub level: Option<usize>,
    pub rep: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// Output of a study: long-format rows, including fitted slopes as
/// `slope_*` metrics with the `rep` column empty.
#[derive(Debug, Clone, Default)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    /// Looks up a single aggregated metric (one with no rep index).
    pub fn metric(&self, mode: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.metric == metric && r.rep.is_none())
            .map(|r| r.value)
    }

    /// All values of a metric for one mode, in row order.
    pub fn metric_values(&self, mode: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.mode == mode && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }
}
