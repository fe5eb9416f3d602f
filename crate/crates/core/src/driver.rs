//! The optimization loop: initial design, hyperparameter inference, GP
//! ensemble fit, acquisition maximization, bookkeeping.
//!
//! Per-iteration anatomy. Observations so far are standardized (zero mean,
//! unit scale; any fixed noise variance is rescaled accordingly), a slice
//! sampling chain over kernel hyperparameters is run (warm-started from the
//! previous iteration's final state), one GP posterior is fitted per kept
//! sample, and hyperparameter-averaged expected improvement is maximized to
//! pick the next point. The objective is always evaluated at the rounded
//! (and clamped) suggestion; what the surrogate stores depends on the
//! strategy.
//!
//! Strategies differ only in two switches:
//!
//! | strategy | kernel rounds inputs | surrogate stores        |
//! |----------|----------------------|-------------------------|
//! | naive    | no                   | the rounded point       |
//! | basic    | no                   | the unrounded suggestion|
//! | proposed | yes                  | the unrounded suggestion|
//!
//! Randomness is deterministic and restart-friendly: iteration `k` uses a
//! stream derived from `(seed, 1 + k)` and the initial design uses
//! `(seed, 0)`, so a run resumed from its saved records (plus the saved
//! sampler state) continues exactly as the uninterrupted run would have.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{self, AcquisitionContext};
use crate::gp::{self, Dataset, GpError, GpPosterior};
use crate::inference::{self, HyperModel, InferenceError};
use crate::kernel::KernelFamily;
use crate::space::{Point, SearchSpace};
use crate::{derive_seed, stream_from_seed, RandomStream};

/// Noise variance assumed for noiseless objectives. Kept far below any
/// plausible signal scale so that re-evaluating an exactly observed point
/// (predictive std ~ sqrt of this) can never out-score honest exploration;
/// conditioning of near-duplicate rows is the jitter ladder's job, not this
/// constant's.
pub const NOISELESS_VARIANCE: f64 = 1e-10;
/// Slice sampling burn-in for the first iteration's cold chain.
pub const BURN_IN_COLD: usize = 20;
/// Burn-in when the chain is warm-started from the previous iteration.
pub const BURN_IN_WARM: usize = 5;
/// Hyperparameter samples kept per iteration (ensemble size).
pub const ENSEMBLE_SIZE: usize = 10;

const INITIAL_DESIGN_SALT: u64 = 0;
const ITERATION_SALT_BASE: u64 = 1;
const RECOMMEND_SALT: u64 = u64::MAX;

/// How rounding enters the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Plain kernel; the surrogate is told the rounded point it was
    /// actually evaluated at.
    Naive,
    /// Plain kernel; the surrogate keeps the unrounded suggestion even
    /// though the evaluation happened at the rounded one.
    Basic,
    /// Kernel rounds its inputs, so the surrogate is exact about the
    /// evaluation while acquisition still sees the cell structure.
    Proposed,
}

impl Strategy {
    pub fn uses_transform(self) -> bool {
        matches!(self, Strategy::Proposed)
    }

    pub const ALL: [Strategy; 3] = [Strategy::Naive, Strategy::Basic, Strategy::Proposed];
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Strategy::Naive => "naive",
            Strategy::Basic => "basic",
            Strategy::Proposed => "proposed",
        };
        f.write_str(name)
    }
}

/// What the run assumes about observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoisePolicy {
    /// Deterministic objective: noise variance fixed at
    /// [`NOISELESS_VARIANCE`].
    Noiseless,
    /// Known noise variance, fixed during inference.
    Known(f64),
    /// Noise level inferred alongside the kernel hyperparameters.
    Infer,
}

impl NoisePolicy {
    /// The fixed noise variance, or `None` when the level is inferred.
    pub fn fixed_variance(self) -> Option<f64> {
        match self {
            NoisePolicy::Noiseless => Some(NOISELESS_VARIANCE),
            NoisePolicy::Known(v) => Some(v),
            NoisePolicy::Infer => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub strategy: Strategy,
    pub kernel_family: KernelFamily,
    pub noise: NoisePolicy,
    /// Uniform random evaluations before the model-guided phase.
    pub n_initial: usize,
    /// Model-guided evaluations after the initial design.
    pub n_iterations: usize,
    pub seed: u64,
}

impl BoConfig {
    /// The conventional initial design size for a space: dimension + 1,
    /// never below the minimum of 2.
    pub fn default_n_initial(space: &SearchSpace) -> usize {
        (space.dimension() + 1).max(2)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        if self.n_initial < 2 {
            return Err(DriverError::InvalidConfig(
                "n_initial must be at least 2".into(),
            ));
        }
        if self.n_iterations < 1 {
            return Err(DriverError::InvalidConfig(
                "n_iterations must be at least 1".into(),
            ));
        }
        if let NoisePolicy::Known(v) = self.noise {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DriverError::InvalidConfig(
                    "known noise variance must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Total evaluations a complete run makes.
    pub fn total_evaluations(&self) -> usize {
        self.n_initial + self.n_iterations
    }
}

/// One evaluation's worth of history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Zero-based evaluation index (initial design included).
    pub iteration: usize,
    /// The point the acquisition (or initial design) produced.
    pub suggested: Point,
    /// Where the objective was actually evaluated: the rounded, clamped
    /// suggestion.
    pub evaluated: Point,
    pub observed: f64,
    /// Best observed value up to and including this evaluation.
    pub incumbent_after: f64,
}

#[derive(Debug, Clone, Error)]
#[error("objective evaluation failed: {message}")]
pub struct ObjectiveError {
    pub message: String,
}

impl ObjectiveError {
    pub fn new(message: impl Into<String>) -> Self {
        ObjectiveError {
            message: message.into(),
        }
    }
}

/// A black-box function under optimization. `&mut self` admits stateful
/// implementations (noise streams, subprocess handles, call counters).
pub trait Objective {
    fn evaluate(&mut self, x: &Point) -> Result<f64, ObjectiveError>;
}

/// Wraps a plain closure as an infallible objective.
pub struct FnObjective<F: FnMut(&Point) -> f64>(pub F);

impl<F: FnMut(&Point) -> f64> Objective for FnObjective<F> {
    fn evaluate(&mut self, x: &Point) -> Result<f64, ObjectiveError> {
        Ok(self.0(x))
    }
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "objective evaluation failed after {} completed evaluations: {source}",
        partial_records.len()
    )]
    ObjectiveFailed {
        source: ObjectiveError,
        /// Everything completed before the failure, so callers can persist
        /// progress and resume later.
        partial_records: Vec<TrialRecord>,
    },
    #[error("resume history does not match this run: {0}")]
    ResumeMismatch(String),
    #[error("record sink failed: {0}")]
    Sink(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// The per-iteration surrogate: one fitted GP per kept hyperparameter
/// sample, plus the standardization applied to the observations and the
/// sampler state for warm-starting the next chain. `incumbent` is in
/// standardized units, like the posteriors.
#[derive(Debug, Clone)]
pub struct FittedEnsemble {
    pub posteriors: Vec<GpPosterior>,
    pub incumbent: f64,
    pub chain_state: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

fn standardize(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let scale = var.sqrt();
    // Constant observations standardize to zeros with unit scale.
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let standardized = values.iter().map(|y| (y - mean) / scale).collect();
    (standardized, mean, scale)
}

/// Samples hyperparameters on the standardized data and fits one posterior
/// per sample. `warm_start` is the previous iteration's `chain_state`.
pub fn fit_ensemble<R: Rng + ?Sized>(
    config: &BoConfig,
    space: &SearchSpace,
    data: &Dataset,
    warm_start: Option<&[f64]>,
    rng: &mut R,
) -> Result<FittedEnsemble, DriverError> {
    assert!(!data.is_empty(), "cannot fit on an empty dataset");
    let (std_values, y_mean, y_scale) = standardize(data.values());
    let std_data = Dataset::new(data.points().to_vec(), std_values);
    let fixed = config
        .noise
        .fixed_variance()
        .map(|v| v / (y_scale * y_scale));
    let model = HyperModel::new(
        space.clone(),
        config.kernel_family,
        config.strategy.uses_transform(),
        fixed,
    );
    let n_burn = if warm_start.is_some() {
        BURN_IN_WARM
    } else {
        BURN_IN_COLD
    };
    let samples = inference::sample_hyperparameters(
        &model,
        &std_data,
        warm_start,
        n_burn,
        ENSEMBLE_SIZE,
        rng,
    )?;
    let chain_state = samples
        .last()
        .expect("ensemble size is positive")
        .log_point
        .clone();
    let posteriors = samples
        .iter()
        .map(|s| gp::fit(&s.config, space, &std_data))
        .collect::<Result<Vec<_>, _>>()?;
    let incumbent = std_data
        .values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(FittedEnsemble {
        posteriors,
        incumbent,
        chain_state,
        y_mean,
        y_scale,
    })
}

/// One acquisition decision: the raw maximizer, the point to evaluate the
/// objective at, and the point the surrogate should store.
#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub suggested: Point,
    pub evaluation: Point,
    pub storage: Point,
}

/// Maximizes the ensemble-averaged expected improvement and applies the
/// strategy's storage rule.
pub fn suggest_next<R: Rng + ?Sized>(
    config: &BoConfig,
    space: &SearchSpace,
    ensemble: &FittedEnsemble,
    rng: &mut R,
) -> Suggestion {
    let ctx = AcquisitionContext {
        posteriors: &ensemble.posteriors,
        incumbent: ensemble.incumbent,
        strategy: config.strategy,
    };
    let suggested = space.clamp(&acquisition::maximize_acquisition(&ctx, space, rng));
    let evaluation = space.transform(&suggested);
    let storage = match config.strategy {
        Strategy::Naive => evaluation.clone(),
        Strategy::Basic | Strategy::Proposed => suggested.clone(),
    };
    Suggestion {
        suggested,
        evaluation,
        storage,
    }
}

fn storage_for(strategy: Strategy, record: &TrialRecord) -> Point {
    match strategy {
        Strategy::Naive => record.evaluated.clone(),
        Strategy::Basic | Strategy::Proposed => record.suggested.clone(),
    }
}

fn iteration_rng(seed: u64, k: usize) -> RandomStream {
    stream_from_seed(derive_seed(seed, ITERATION_SALT_BASE + k as u64))
}

/// Runs the full loop from scratch. See [`run_bo_with`] for resuming and
/// observing progress.
pub fn run_bo(
    objective: &mut dyn Objective,
    space: &SearchSpace,
    config: &BoConfig,
) -> Result<Vec<TrialRecord>, DriverError> {
    run_bo_with(objective, space, config, &[], None, &mut |_, _| Ok(()))
}

/// Progress callback: receives each completed record and the sampler state
/// to persist with it; returning `Err` aborts the run.
pub type RecordSink<'a> = dyn FnMut(&TrialRecord, Option<&[f64]>) -> Result<(), String> + 'a;

/// Runs the loop, optionally resuming from previously completed records.
///
/// `resume_records` must be a prefix of the run this configuration would
/// produce (verified against the re-drawn initial design); `resume_chain` is
/// the sampler state saved alongside the last resumed record, if any.
/// `on_record` fires after every completed evaluation with the new record
/// and the sampler state to persist with it; returning `Err` aborts the run.
///
/// A resumed run continues exactly as the uninterrupted run would have: each
/// iteration's randomness comes from a stream derived from the seed and the
/// iteration index, and the sampler chain is reconstructed from
/// `resume_chain`.
pub fn run_bo_with(
    objective: &mut dyn Objective,
    space: &SearchSpace,
    config: &BoConfig,
    resume_records: &[TrialRecord],
    resume_chain: Option<&[f64]>,
    on_record: &mut RecordSink<'_>,
) -> Result<Vec<TrialRecord>, DriverError> {
    config.validate()?;
    let total = config.total_evaluations();
    if resume_records.len() > total {
        return Err(DriverError::ResumeMismatch(format!(
            "{} records resumed but the run makes only {} evaluations",
            resume_records.len(),
            total
        )));
    }
    for (i, r) in resume_records.iter().enumerate() {
        if r.iteration != i {
            return Err(DriverError::ResumeMismatch(format!(
                "record {} carries iteration index {}",
                i, r.iteration
            )));
        }
        if r.evaluated != space.transform(&space.clamp(&r.suggested)) {
            return Err(DriverError::ResumeMismatch(format!(
                "record {} was not evaluated at its rounded suggestion",
                i
            )));
        }
    }

    let mut records: Vec<TrialRecord> = resume_records.to_vec();
    let mut data = Dataset::default();
    let mut incumbent = f64::INFINITY;
    for r in &records {
        data.push(storage_for(config.strategy, r), r.observed);
        incumbent = incumbent.min(r.observed);
    }

    // Initial design. The whole design is re-drawn deterministically; any
    // resumed prefix must match it exactly.
    let mut init_rng = stream_from_seed(derive_seed(config.seed, INITIAL_DESIGN_SALT));
    for i in 0..config.n_initial {
        let drawn = space.sample_uniform(&mut init_rng);
        if i < records.len() {
            if records[i].suggested != drawn {
                return Err(DriverError::ResumeMismatch(format!(
                    "initial design point {} does not match this seed and space",
                    i
                )));
            }
            continue;
        }
        // Uniform draws are integral on integer coordinates already.
        let evaluated = space.transform(&drawn);
        let observed = match objective.evaluate(&evaluated) {
            Ok(y) => y,
            Err(source) => {
                return Err(DriverError::ObjectiveFailed {
                    source,
                    partial_records: records,
                })
            }
        };
        incumbent = incumbent.min(observed);
        let record = TrialRecord {
            iteration: i,
            suggested: drawn.clone(),
            evaluated,
            observed,
            incumbent_after: incumbent,
        };
        data.push(storage_for(config.strategy, &record), observed);
        on_record(&record, None).map_err(DriverError::Sink)?;
        records.push(record);
    }

    // Model-guided phase.
    let mut chain: Option<Vec<f64>> = resume_chain.map(|c| c.to_vec());
    let start_k = records.len() - config.n_initial;
    for k in start_k..config.n_iterations {
        let mut rng = iteration_rng(config.seed, k);
        let ensemble = fit_ensemble(config, space, &data, chain.as_deref(), &mut rng)?;
        let suggestion = suggest_next(config, space, &ensemble, &mut rng);
        let observed = match objective.evaluate(&suggestion.evaluation) {
            Ok(y) => y,
            Err(source) => {
                return Err(DriverError::ObjectiveFailed {
                    source,
                    partial_records: records,
                })
            }
        };
        incumbent = incumbent.min(observed);
        let record = TrialRecord {
            iteration: config.n_initial + k,
            suggested: suggestion.suggested,
            evaluated: suggestion.evaluation,
            observed,
            incumbent_after: incumbent,
        };
        data.push(suggestion.storage, observed);
        chain = Some(ensemble.chain_state);
        on_record(&record, chain.as_deref()).map_err(DriverError::Sink)?;
        records.push(record);
    }
    Ok(records)
}

/// The point to hand back after a run: the minimizer of the
/// ensemble-averaged posterior mean, rounded onto the evaluable set.
///
/// Deterministic for a given config and ensemble; multistart randomness
/// comes from a stream derived from the run seed.
pub fn recommend(config: &BoConfig, space: &SearchSpace, ensemble: &FittedEnsemble) -> Point {
    let mut rng = stream_from_seed(derive_seed(config.seed, RECOMMEND_SALT));
    let integer_cell_moves = config.strategy == Strategy::Proposed && space.has_integer_variables();
    let score = |xs: &[Point]| -> Vec<f64> {
        let mut totals = vec![0.0; xs.len()];
        for post in &ensemble.posteriors {
            for (t, p) in totals.iter_mut().zip(post.predict_many(xs)) {
                *t -= p.mean;
            }
        }
        totals
    };
    let x = acquisition::multistart_maximize(space, integer_cell_moves, &score, &mut rng);
    space.transform(&space.clamp(&x))
}
