//! Paired benchmark harness: seeded synthetic objectives, repeated runs per
//! strategy, and log-regret summaries.
//!
//! Each repetition draws one objective (a GP prior sample on a finite grid,
//! generated with the rounding kernel so values are constant inside integer
//! cells) and runs every strategy on that same draw with the same run seed,
//! so strategies see identical functions and identical initial designs.
//! Regret is measured against the noise-free value at the evaluated point,
//! floored before taking logs so exact hits stay finite.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{
    self, BoConfig, NoisePolicy, Objective, ObjectiveError, Strategy, TrialRecord,
};
use crate::gp::{self, GpError};
use crate::kernel::{KernelConfig, KernelFamily};
use crate::space::{Point, SearchSpace, Variable};
use crate::{derive_seed, stream_from_seed, RandomStream};

/// Added to raw regret before taking log10.
pub const REGRET_FLOOR: f64 = 1e-12;

/// `log10(regret + floor)`, with negative round-off clamped away.
pub fn floored_log_regret(raw_regret: f64) -> f64 {
    (raw_regret.max(0.0) + REGRET_FLOOR).log10()
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid objective spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("{failed} of {total} runs failed (over the 10% budget); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
}

/// Recipe for a family of synthetic objectives: the space, the grid
/// resolution along continuous axes, the generating kernel's shape, and the
/// observation noise added on top of the drawn values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub space: SearchSpace,
    /// Grid points per continuous dimension (integer dimensions enumerate
    /// their whole range).
    pub resolution: usize,
    /// Lengthscales of the squared-exponential generator, one per variable.
    pub lengthscales: Vec<f64>,
    pub amplitude: f64,
    /// Variance of the Gaussian noise added to each observation.
    pub noise_variance: f64,
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.lengthscales.len() != self.space.dimension() {
            return Err(BenchError::InvalidSpec(format!(
                "{} lengthscales for a {}-dimensional space",
                self.lengthscales.len(),
                self.space.dimension()
            )));
        }
        // NaN fails every comparison, so reject it explicitly alongside the
        // out-of-range values.
        if self.lengthscales.iter().any(|&l| l.is_nan() || l <= 0.0) {
            return Err(BenchError::InvalidSpec(
                "lengthscales must be positive".into(),
            ));
        }
        if self.amplitude.is_nan() || self.amplitude <= 0.0 {
            return Err(BenchError::InvalidSpec("amplitude must be positive".into()));
        }
        if self.noise_variance.is_nan() || self.noise_variance < 0.0 {
            return Err(BenchError::InvalidSpec(
                "noise variance must be non-negative".into(),
            ));
        }
        if self.resolution < 2 {
            return Err(BenchError::InvalidSpec(
                "resolution must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// The noise assumption a run on this objective should make.
    pub fn noise_policy(&self) -> NoisePolicy {
        if self.noise_variance == 0.0 {
            NoisePolicy::Noiseless
        } else {
            NoisePolicy::Known(self.noise_variance)
        }
    }
}

/// Built-in objective recipes by name.
pub fn builtin_objective(name: &str) -> Option<ObjectiveSpec> {
    let spec = match name {
        // One continuous axis, one small integer axis; fine grid. The short
        // continuous lengthscale keeps the draws multimodal enough that a
        // 50-iteration budget cannot sweep every basin, so strategy quality
        // shows up in the regret curves instead of saturating them.
        "synthetic-2d" => ObjectiveSpec {
            space: SearchSpace::new(vec![
                Variable::continuous(0.0, 1.0).expect("valid bounds"),
                Variable::integer(0, 2).expect("valid bounds"),
            ])
            .expect("valid space"),
            resolution: 201,
            lengthscales: vec![0.05, 0.5],
            amplitude: 1.0,
            noise_variance: 0.0,
        },
        // Two continuous axes, two integer axes; coarser grid.
        "synthetic-4d" => ObjectiveSpec {
            space: SearchSpace::new(vec![
                Variable::continuous(0.0, 1.0).expect("valid bounds"),
                Variable::continuous(0.0, 1.0).expect("valid bounds"),
                Variable::integer(0, 3).expect("valid bounds"),
                Variable::integer(0, 2).expect("valid bounds"),
            ])
            .expect("valid space"),
            resolution: 21,
            lengthscales: vec![0.2, 0.2, 1.0, 1.0],
            amplitude: 1.0,
            noise_variance: 0.0,
        },
        // Pure integer line; exercises cell exhaustion and stalls.
        "integer-1d" => ObjectiveSpec {
            space: SearchSpace::new(vec![Variable::integer(0, 4).expect("valid bounds")])
                .expect("valid space"),
            resolution: 2,
            lengthscales: vec![1.0],
            amplitude: 1.0,
            noise_variance: 0.0,
        },
        _ => return None,
    };
    Some(spec)
}

pub const BUILTIN_OBJECTIVES: [&str; 3] = ["synthetic-2d", "synthetic-4d", "integer-1d"];

/// A drawn objective: values on the full grid, evaluated by snapping inputs
/// to the nearest grid point, plus independent Gaussian observation noise.
/// Cloning duplicates the noise stream, so two clones evaluated in the same
/// order observe the same noise.
#[derive(Debug, Clone)]
pub struct SyntheticObjective {
    space: SearchSpace,
    axes: Vec<Vec<f64>>,
    grid: Vec<Point>,
    values: Vec<f64>,
    true_min: f64,
    noise_std: f64,
    noise_rng: RandomStream,
}

/// Draws one objective from `spec` using `rng` for both the function values
/// and the seed of the observation-noise stream.
pub fn make_objective<R: Rng + ?Sized>(
    spec: &ObjectiveSpec,
    rng: &mut R,
) -> Result<SyntheticObjective, BenchError> {
    spec.validate()?;
    let generator = KernelConfig::new(
        KernelFamily::SquaredExponential,
        spec.lengthscales.clone(),
        spec.amplitude,
        0.0,
        true,
    );
    let draw = gp::sample_prior_on_cartesian_grid(&generator, &spec.space, spec.resolution, rng)?;
    let true_min = draw.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let noise_rng = stream_from_seed(rng.random::<u64>());
    Ok(SyntheticObjective {
        space: spec.space.clone(),
        axes: spec.space.grid_axes(spec.resolution),
        grid: draw.grid,
        values: draw.values,
        true_min,
        noise_std: spec.noise_variance.sqrt(),
        noise_rng,
    })
}

impl SyntheticObjective {
    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn grid(&self) -> &[Point] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Minimum of the noise-free values over the grid.
    pub fn true_min(&self) -> f64 {
        self.true_min
    }

    fn flat_index(&self, x: &Point) -> usize {
        assert_eq!(x.dimension(), self.space.dimension(), "dimension mismatch");
        let mut index = 0usize;
        for (axis, &c) in self.axes.iter().zip(x.coords()) {
            let n = axis.len();
            let lo = axis[0];
            let hi = axis[n - 1];
            // Axes are uniform, so the nearest grid coordinate is a rounded
            // affine map; clamping covers out-of-range queries.
            let i = ((c - lo) / (hi - lo) * (n - 1) as f64).round();
            let i = (i.max(0.0) as usize).min(n - 1);
            index = index * n + i;
        }
        index
    }

    /// Noise-free value at the grid point nearest `x`.
    pub fn true_value(&self, x: &Point) -> f64 {
        self.values[self.flat_index(x)]
    }

    /// Discards the noise draws that `n` evaluations would have consumed.
    /// Resuming a run after `n` completed evaluations with a fresh objective
    /// then observes the same noise as the uninterrupted run. No-op when the
    /// objective is noiseless.
    pub fn advance_noise(&mut self, n: usize) {
        if self.noise_std > 0.0 {
            for _ in 0..n {
                let _: f64 = self.noise_rng.sample(rand_distr::StandardNormal);
            }
        }
    }
}

impl Objective for SyntheticObjective {
    fn evaluate(&mut self, x: &Point) -> Result<f64, ObjectiveError> {
        let mut y = self.true_value(x);
        if self.noise_std > 0.0 {
            let z: f64 = self.noise_rng.sample(rand_distr::StandardNormal);
            y += self.noise_std * z;
        }
        Ok(y)
    }
}

/// A full experiment: one objective family, several strategies, repeated
/// with paired seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub objective: ObjectiveSpec,
    pub strategies: Vec<Strategy>,
    pub kernel_family: KernelFamily,
    pub n_repetitions: usize,
    pub n_iterations: usize,
    pub n_initial: usize,
    pub base_seed: u64,
}

/// One evaluation inside one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub strategy: Strategy,
    pub repetition: usize,
    pub iteration: usize,
    pub suggested: Point,
    pub evaluated: Point,
    pub observed: f64,
    /// Floored log10 regret of the best noise-free value seen so far.
    pub log_regret: f64,
}

/// Per-strategy aggregate over successful repetitions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyCurve {
    pub strategy: Strategy,
    /// Mean floored log10 regret per evaluation index.
    pub mean_log_regret: Vec<f64>,
    /// Standard error of that mean (0 when only one run succeeded).
    pub stderr_log_regret: Vec<f64>,
    pub n_runs: usize,
    pub n_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureNote {
    pub strategy: Strategy,
    pub repetition: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub curves: Vec<StrategyCurve>,
    /// Records of all successful runs, ordered by (strategy, repetition,
    /// iteration).
    pub records: Vec<BenchRecord>,
    pub failures: Vec<FailureNote>,
}

fn bench_records(
    objective: &SyntheticObjective,
    strategy: Strategy,
    repetition: usize,
    records: &[TrialRecord],
) -> Vec<BenchRecord> {
    let mut best_true = f64::INFINITY;
    records
        .iter()
        .map(|r| {
            best_true = best_true.min(objective.true_value(&r.evaluated));
            BenchRecord {
                strategy,
                repetition,
                iteration: r.iteration,
                suggested: r.suggested.clone(),
                evaluated: r.evaluated.clone(),
                observed: r.observed,
                log_regret: floored_log_regret(best_true - objective.true_min()),
            }
        })
        .collect()
}

struct RepetitionOutcome {
    /// One entry per strategy, in `spec.strategies` order.
    runs: Vec<Result<Vec<BenchRecord>, String>>,
}

fn run_repetition(
    spec: &ExperimentSpec,
    repetition: usize,
) -> Result<RepetitionOutcome, BenchError> {
    // The objective seed pairs strategies within a repetition and varies
    // across repetitions; the run seed drives initial design and sampling.
    let mut objective_rng = stream_from_seed(spec.base_seed.wrapping_add(repetition as u64));
    let objective = make_objective(&spec.objective, &mut objective_rng)?;
    let run_seed = derive_seed(spec.base_seed, repetition as u64);
    let runs = spec
        .strategies
        .iter()
        .map(|&strategy| {
            let cfg = BoConfig {
                strategy,
                kernel_family: spec.kernel_family,
                noise: spec.objective.noise_policy(),
                n_initial: spec.n_initial,
                n_iterations: spec.n_iterations,
                seed: run_seed,
            };
            let mut instance = objective.clone();
            driver::run_bo(&mut instance, objective.space(), &cfg)
                .map(|records| bench_records(&objective, strategy, repetition, &records))
                .map_err(|e| e.to_string())
        })
        .collect();
    Ok(RepetitionOutcome { runs })
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs the paired experiment. Individual run failures are tolerated up to
/// 10% of all runs; beyond that the whole experiment errors out.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, BenchError> {
    spec.objective.validate()?;
    assert!(!spec.strategies.is_empty(), "need at least one strategy");
    assert!(spec.n_repetitions > 0, "need at least one repetition");
    let outcomes: Vec<RepetitionOutcome> = (0..spec.n_repetitions)
        .into_par_iter()
        .map(|r| run_repetition(spec, r))
        .collect::<Result<_, _>>()?;

    let total_evals = spec.n_initial + spec.n_iterations;
    let mut curves = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (si, &strategy) in spec.strategies.iter().enumerate() {
        let mut successes: Vec<&Vec<BenchRecord>> = Vec::new();
        for (rep, outcome) in outcomes.iter().enumerate() {
            match &outcome.runs[si] {
                Ok(run) => successes.push(run),
                Err(message) => failures.push(FailureNote {
                    strategy,
                    repetition: rep,
                    message: message.clone(),
                }),
            }
        }
        let mut mean_log_regret = Vec::with_capacity(total_evals);
        let mut stderr_log_regret = Vec::with_capacity(total_evals);
        for i in 0..total_evals {
            let column: Vec<f64> = successes.iter().map(|run| run[i].log_regret).collect();
            let (mean, stderr) = mean_and_stderr(&column);
            mean_log_regret.push(mean);
            stderr_log_regret.push(stderr);
        }
        curves.push(StrategyCurve {
            strategy,
            mean_log_regret,
            stderr_log_regret,
            n_runs: successes.len(),
            n_failures: spec.n_repetitions - successes.len(),
        });
        for run in successes {
            records.extend(run.iter().cloned());
        }
    }

    let total_runs = spec.n_repetitions * spec.strategies.len();
    if failures.len() * 10 > total_runs {
        return Err(BenchError::TooManyFailures {
            failed: failures.len(),
            total: total_runs,
            first: failures[0].message.clone(),
        });
    }
    Ok(ExperimentResult {
        curves,
        records,
        failures,
    })
}

/// Counts model-guided evaluations that landed in an already-observed
/// integer cell while unobserved cells still remained. The first `n_warmup`
/// records (the random initial design, whose collisions are luck rather
/// than model behavior) mark their cells as seen without being counted.
/// Once every cell has been visited, revisits are inevitable and stop
/// counting. Defined for pure integer spaces.
pub fn count_stall_duplicates(
    space: &SearchSpace,
    records: &[TrialRecord],
    n_warmup: usize,
) -> usize {
    assert!(
        space.variables().iter().all(Variable::is_integer),
        "stall duplicates are defined on pure integer spaces"
    );
    let total_cells: u128 = space
        .variables()
        .iter()
        .map(|v| (v.upper() - v.lower()) as u128 + 1)
        .product();
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    let mut duplicates = 0;
    for (i, r) in records.iter().enumerate() {
        if seen.len() as u128 >= total_cells {
            break;
        }
        let cell: Vec<i64> = space
            .transform(&r.evaluated)
            .coords()
            .iter()
            .map(|&c| c as i64)
            .collect();
        if !seen.insert(cell) && i >= n_warmup {
            duplicates += 1;
        }
    }
    duplicates
}
