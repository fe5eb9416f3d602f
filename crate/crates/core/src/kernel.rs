//! Stationary ARD kernels and the cell-constant integer wrapper.
//!
//! Both families are functions of the scaled distance
//! `r^2 = sum_d ((x_d - y_d) / l_d)^2`:
//!
//! * squared exponential: `amp^2 * exp(-r^2 / 2)`
//! * Matern 5/2: `amp^2 * (1 + sqrt(5) r + 5/3 r^2) * exp(-sqrt(5) r)`
//!
//! With `integer_transform` enabled the kernel becomes `k'(x, y) = k(T(x), T(y))`
//! where `T` rounds integer coordinates ([`SearchSpace::transform`]). `k'` is
//! constant on the rectangular cells that round to the same integer lattice
//! point, and it remains positive semi-definite because it is `k` composed
//! with a deterministic map.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::space::{Point, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
}

/// A fully specified kernel: family, ARD lengthscales (one per variable),
/// signal amplitude, observation noise variance, and whether inputs pass
/// through the rounding map first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub amplitude: f64,
    pub noise_variance: f64,
    pub integer_transform: bool,
}

impl KernelConfig {
    pub fn new(
        family: KernelFamily,
        lengthscales: Vec<f64>,
        amplitude: f64,
        noise_variance: f64,
        integer_transform: bool,
    ) -> Self {
        let config = KernelConfig {
            family,
            lengthscales,
            amplitude,
            noise_variance,
            integer_transform,
        };
        config.validate();
        config
    }

    fn validate(&self) {
        assert!(
            !self.lengthscales.is_empty() && self.lengthscales.iter().all(|&l| l > 0.0),
            "lengthscales must all be positive"
        );
        assert!(self.amplitude > 0.0, "amplitude must be positive");
        assert!(
            self.noise_variance >= 0.0,
            "noise variance must be non-negative"
        );
    }

    fn assert_matches_space(&self, space: &SearchSpace) {
        assert_eq!(
            self.lengthscales.len(),
            space.dimension(),
            "kernel has {} lengthscales but the space has {} variables",
            self.lengthscales.len(),
            space.dimension()
        );
    }
}

/// Kernel value on raw coordinate slices, assuming any rounding has already
/// been applied. Hot path for Gram assembly.
pub(crate) fn eval_pretransformed(config: &KernelConfig, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), config.lengthscales.len());
    debug_assert_eq!(b.len(), config.lengthscales.len());
    let mut r2 = 0.0;
    for d in 0..a.len() {
        let s = (a[d] - b[d]) / config.lengthscales[d];
        r2 += s * s;
    }
    let amp2 = config.amplitude * config.amplitude;
    match config.family {
        KernelFamily::SquaredExponential => amp2 * (-0.5 * r2).exp(),
        KernelFamily::Matern52 => {
            let r = r2.sqrt();
            let sqrt5_r = 5f64.sqrt() * r;
            amp2 * (1.0 + sqrt5_r + (5.0 / 3.0) * r2) * (-sqrt5_r).exp()
        }
    }
}

fn prepare(config: &KernelConfig, space: &SearchSpace, x: &Point) -> Point {
    if config.integer_transform {
        space.transform(x)
    } else {
        x.clone()
    }
}

/// `k(x, y)`, applying the rounding map to both inputs first when
/// `integer_transform` is set.
pub fn kernel_eval(config: &KernelConfig, space: &SearchSpace, x: &Point, y: &Point) -> f64 {
    config.validate();
    config.assert_matches_space(space);
    let tx = prepare(config, space, x);
    let ty = prepare(config, space, y);
    eval_pretransformed(config, tx.coords(), ty.coords())
}

/// Transformed copies of `points` when the config rounds inputs, otherwise a
/// plain copy. Keeps the rounding out of the quadratic Gram loop.
pub(crate) fn transformed_coords(
    config: &KernelConfig,
    space: &SearchSpace,
    points: &[Point],
) -> Vec<Point> {
    points.iter().map(|p| prepare(config, space, p)).collect()
}

/// Noise-free Gram matrix `K[i][j] = k(points[i], points[j])`.
pub fn gram(config: &KernelConfig, space: &SearchSpace, points: &[Point]) -> DMatrix<f64> {
    config.validate();
    config.assert_matches_space(space);
    let pts = transformed_coords(config, space, points);
    let n = pts.len();
    let mut k = DMatrix::zeros(n, n);
    let amp2 = config.amplitude * config.amplitude;
    for i in 0..n {
        k[(i, i)] = amp2;
        for j in (i + 1)..n {
            let v = eval_pretransformed(config, pts[i].coords(), pts[j].coords());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Rectangular covariance block `K[i][j] = k(xs[i], ys[j])`.
pub fn cross_covariance(
    config: &KernelConfig,
    space: &SearchSpace,
    xs: &[Point],
    ys: &[Point],
) -> DMatrix<f64> {
    config.validate();
    config.assert_matches_space(space);
    let txs = transformed_coords(config, space, xs);
    let tys = transformed_coords(config, space, ys);
    let mut k = DMatrix::zeros(txs.len(), tys.len());
    for i in 0..txs.len() {
        for j in 0..tys.len() {
            k[(i, j)] = eval_pretransformed(config, txs[i].coords(), tys[j].coords());
        }
    }
    k
}
