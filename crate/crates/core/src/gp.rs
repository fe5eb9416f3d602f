//! Gaussian-process regression with exact Cholesky-based inference.
//!
//! A zero-mean GP prior with kernel `k` conditioned on observations
//! `(X, y)` with i.i.d. Gaussian noise `sigma0^2` has posterior
//!
//! * mean `m(x) = k*(x)^T (K + sigma0^2 I)^{-1} y`
//! * latent variance `s^2(x) = k(x, x) - k*(x)^T (K + sigma0^2 I)^{-1} k*(x)`
//!
//! computed through one Cholesky factorisation of the noisy Gram matrix. A
//! jitter ladder keeps the factorisation alive on near-singular problems:
//! every fit adds `1e-10 * amplitude^2` to the diagonal and multiplies by 10
//! on failure until `1e-4 * amplitude^2`, after which fitting reports an
//! ill-conditioning error carrying the last jitter tried.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::HashMap;
use thiserror::Error;

use crate::kernel::{self, KernelConfig, KernelFamily};
use crate::space::{Point, SearchSpace, SpaceError};

/// First jitter rung, as a fraction of squared amplitude.
pub const BASE_JITTER_FACTOR: f64 = 1e-10;
/// Last jitter rung, as a fraction of squared amplitude.
pub const MAX_JITTER_FACTOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("covariance matrix is not positive definite even with jitter {final_jitter:e}")]
    IllConditioned { final_jitter: f64 },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Training inputs with their observed values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    points: Vec<Point>,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<Point>, values: Vec<f64>) -> Self {
        assert_eq!(
            points.len(),
            values.len(),
            "dataset needs one value per point"
        );
        Dataset { points, values }
    }

    pub fn push(&mut self, point: Point, value: f64) {
        self.points.push(point);
        self.values.push(value);
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Posterior mean and latent (noise-free) variance at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

impl PredictiveDistribution {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A fitted GP: Cholesky factor of the noisy Gram matrix plus the solved
/// weights, ready for O(n^2) predictions.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    config: KernelConfig,
    space: SearchSpace,
    /// Training inputs, already passed through the rounding map when the
    /// kernel requests it, so prediction never re-transforms them.
    train: Vec<Point>,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    log_marginal: f64,
}

/// Cholesky of `m + jitter I`, escalating jitter from
/// `BASE_JITTER_FACTOR * scale` by factors of 10 up to
/// `MAX_JITTER_FACTOR * scale`. Returns the lower factor and the jitter that
/// succeeded.
pub(crate) fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    scale: f64,
) -> Result<(DMatrix<f64>, f64), GpError> {
    let mut jitter = BASE_JITTER_FACTOR * scale;
    let cap = MAX_JITTER_FACTOR * scale;
    loop {
        let mut trial = m.clone();
        for i in 0..trial.nrows() {
            trial[(i, i)] += jitter;
        }
        if let Some(chol) = trial.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
        if jitter >= cap {
            return Err(GpError::IllConditioned {
                final_jitter: jitter,
            });
        }
        // Clamping makes the last rung exactly the cap despite round-off
        // drift in the repeated multiplication.
        jitter = (jitter * 10.0).min(cap);
    }
}

/// Fits the GP posterior for `config` on `dataset`.
pub fn fit(
    config: &KernelConfig,
    space: &SearchSpace,
    dataset: &Dataset,
) -> Result<GpPosterior, GpError> {
    assert!(!dataset.is_empty(), "cannot fit a GP to an empty dataset");
    let n = dataset.len();
    let mut m = kernel::gram(config, space, dataset.points());
    for i in 0..n {
        m[(i, i)] += config.noise_variance;
    }
    let (l, jitter) = cholesky_with_jitter(&m, config.amplitude * config.amplitude)?;
    let y = DVector::from_column_slice(dataset.values());
    let tmp = l
        .solve_lower_triangular(&y)
        .expect("triangular solve after successful factorization");
    let alpha = l
        .tr_solve_lower_triangular(&tmp)
        .expect("triangular solve after successful factorization");
    let half_log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let log_marginal =
        -0.5 * y.dot(&alpha) - half_log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(GpPosterior {
        config: config.clone(),
        space: space.clone(),
        train: kernel::transformed_coords(config, space, dataset.points()),
        l,
        alpha,
        jitter,
        log_marginal,
    })
}

/// Log marginal likelihood of `dataset` under `config` (the normalising
/// constant of the fit, including the jitter actually used).
pub fn log_marginal_likelihood(
    config: &KernelConfig,
    space: &SearchSpace,
    dataset: &Dataset,
) -> Result<f64, GpError> {
    fit(config, space, dataset).map(|p| p.log_marginal)
}

impl GpPosterior {
    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal
    }

    fn cross_vector(&self, x: &Point) -> DVector<f64> {
        let tx = if self.config.integer_transform {
            self.space.transform(x)
        } else {
            x.clone()
        };
        DVector::from_iterator(
            self.train.len(),
            self.train
                .iter()
                .map(|t| kernel::eval_pretransformed(&self.config, t.coords(), tx.coords())),
        )
    }

    /// Posterior mean and latent variance at `x`. The variance is clamped at
    /// zero so downstream square roots stay real.
    pub fn predict(&self, x: &Point) -> PredictiveDistribution {
        let kx = self.cross_vector(x);
        let mean = kx.dot(&self.alpha);
        let v = self
            .l
            .solve_lower_triangular(&kx)
            .expect("triangular solve after successful factorization");
        let variance = (self.config.amplitude * self.config.amplitude - v.dot(&v)).max(0.0);
        PredictiveDistribution { mean, variance }
    }

    /// Batch prediction with one triangular solve over all points.
    pub fn predict_many(&self, xs: &[Point]) -> Vec<PredictiveDistribution> {
        let n = self.train.len();
        let m = xs.len();
        let mut kx = DMatrix::zeros(n, m);
        for (j, x) in xs.iter().enumerate() {
            let col = self.cross_vector(x);
            kx.set_column(j, &col);
        }
        let means = kx.transpose() * &self.alpha;
        let v = self
            .l
            .solve_lower_triangular(&kx)
            .expect("triangular solve after successful factorization");
        let amp2 = self.config.amplitude * self.config.amplitude;
        (0..m)
            .map(|j| PredictiveDistribution {
                mean: means[j],
                variance: (amp2 - v.column(j).norm_squared()).max(0.0),
            })
            .collect()
    }
}

/// One exact joint draw `f = L z` from the zero-mean prior restricted to
/// `grid`, with `L` the (jittered) Cholesky factor of the noise-free Gram
/// matrix and `z` i.i.d. standard normal from `rng`.
///
/// Points that coincide after the rounding map (the same cell, with equal
/// continuous coordinates) are perfectly correlated under the transformed
/// kernel, so they are collapsed to one representative before factorisation
/// and receive bitwise-identical values; this also keeps exact duplicates
/// from bloating the jitter. The number of rng draws consumed equals the
/// number of distinct (transformed) points.
pub fn sample_prior_on_grid<R: Rng + ?Sized>(
    config: &KernelConfig,
    space: &SearchSpace,
    grid: &[Point],
    rng: &mut R,
) -> Result<Vec<f64>, GpError> {
    assert!(!grid.is_empty(), "cannot sample a prior on an empty grid");
    let effective = kernel::transformed_coords(config, space, grid);
    // Deterministic first-occurrence dedup on exact coordinate bit patterns.
    let mut index_of: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique: Vec<Point> = Vec::new();
    let mut assignment = Vec::with_capacity(grid.len());
    for p in &effective {
        let key: Vec<u64> = p.coords().iter().map(|c| c.to_bits()).collect();
        let idx = *index_of.entry(key).or_insert_with(|| {
            unique.push(p.clone());
            unique.len() - 1
        });
        assignment.push(idx);
    }
    // The representatives are already transformed; gram re-applies the map,
    // which is idempotent on rounded coordinates.
    let m = kernel::gram(config, space, &unique);
    let (l, _) = cholesky_with_jitter(&m, config.amplitude * config.amplitude)?;
    let z = DVector::from_iterator(
        unique.len(),
        (0..unique.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let drawn = l * z;
    Ok(assignment.into_iter().map(|i| drawn[i]).collect())
}

/// A prior draw over a full Cartesian grid of the space.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    pub grid: Vec<Point>,
    pub values: Vec<f64>,
}

/// Draws one prior function on the full Cartesian grid of the space
/// ([`SearchSpace::enumerate_grid`] with `points_per_continuous_dim`).
///
/// For the squared-exponential family the ARD kernel factorises across axes,
/// so the grid Gram matrix is a Kronecker product of per-axis Gram matrices
/// and its (unique) Cholesky factor is the Kronecker product of the per-axis
/// factors; the draw then costs O(N * sum_d n_d) rather than the O(N^3)
/// dense factorisation, which is what makes repeated draws on grids of
/// several thousand points practical. Matern falls back to the dense path.
/// Grid points carry exact integer coordinates, so they are fixed points of
/// the rounding map and `integer_transform` does not change the restricted
/// covariance. `noise_variance` is ignored: the draw is the latent function.
pub fn sample_prior_on_cartesian_grid<R: Rng + ?Sized>(
    config: &KernelConfig,
    space: &SearchSpace,
    points_per_continuous_dim: usize,
    rng: &mut R,
) -> Result<PriorDraw, GpError> {
    let grid = space.enumerate_grid(points_per_continuous_dim)?;
    let values = match config.family {
        KernelFamily::SquaredExponential => {
            kronecker_grid_draw(config, space, points_per_continuous_dim, grid.len(), rng)?
        }
        KernelFamily::Matern52 => sample_prior_on_grid(config, space, &grid, rng)?,
    };
    Ok(PriorDraw { grid, values })
}

fn kronecker_grid_draw<R: Rng + ?Sized>(
    config: &KernelConfig,
    space: &SearchSpace,
    points_per_continuous_dim: usize,
    n_total: usize,
    rng: &mut R,
) -> Result<Vec<f64>, GpError> {
    let axes = space.grid_axes(points_per_continuous_dim);
    assert_eq!(
        axes.len(),
        config.lengthscales.len(),
        "kernel/space dimension mismatch"
    );
    let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
    let mut factors = Vec::with_capacity(axes.len());
    for (axis, &lengthscale) in axes.iter().zip(&config.lengthscales) {
        let n = axis.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let s = (axis[i] - axis[j]) / lengthscale;
                k[(i, j)] = (-0.5 * s * s).exp();
            }
        }
        let (l, _) = cholesky_with_jitter(&k, 1.0)?;
        factors.push(l);
    }
    let mut values: Vec<f64> = (0..n_total)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    for (axis, l) in factors.iter().enumerate() {
        apply_lower_along_axis(&mut values, l, &dims, axis);
    }
    for v in &mut values {
        *v *= config.amplitude;
    }
    Ok(values)
}

/// Multiplies the row-major tensor `data` (shape `dims`) by `l` along `axis`.
/// Applying this for every axis realises the Kronecker-product matrix-vector
/// product without materialising the full matrix.
fn apply_lower_along_axis(data: &mut [f64], l: &DMatrix<f64>, dims: &[usize], axis: usize) {
    let n = dims[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut fiber = DVector::zeros(n);
    for o in 0..outer {
        let base = o * n * stride;
        for s in 0..stride {
            for i in 0..n {
                fiber[i] = data[base + i * stride + s];
            }
            let out = l * &fiber;
            for i in 0..n {
                data[base + i * stride + s] = out[i];
            }
        }
    }
}
