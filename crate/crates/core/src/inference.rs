//! Hyperparameter posteriors and univariate slice sampling.
//!
//! Hyperparameters carry independent log-normal priors and are sampled on
//! the log scale: if `theta` has a log-normal prior then `phi = ln(theta)`
//! has a normal prior, so the sampler's target is
//!
//! `log p(phi | data) = lml(config(phi)) + sum_i N(phi_i; mu_i, sigma_i) + const`
//!
//! where the change-of-variables Jacobian is exactly the difference between
//! the normal density of `phi` and the log-normal density of `theta`.
//! Sampling uses coordinate-wise slice sampling with linear step-out and
//! shrinkage; one "sample" is one full sweep over coordinates.

use rand::Rng;
use thiserror::Error;

use crate::gp::{self, Dataset};
use crate::kernel::{KernelConfig, KernelFamily};
use crate::space::SearchSpace;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("initial point has non-finite log density")]
    BadInitial,
    #[error("slice sampler failed to bracket the slice on coordinate {coordinate} within {limit} expansions")]
    BracketFailed { coordinate: usize, limit: usize },
    #[error("slice sampler exceeded {limit} shrink steps on coordinate {coordinate}")]
    SamplerStuck { coordinate: usize, limit: usize },
}

/// Log-normal prior, parameterised by the mean and standard deviation of the
/// underlying normal (so the median is `exp(mu)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalPrior {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalPrior {
    pub fn with_median(median: f64, sigma: f64) -> Self {
        assert!(median > 0.0 && sigma > 0.0);
        LogNormalPrior {
            mu: median.ln(),
            sigma,
        }
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    /// Log-normal log density of `theta` itself.
    pub fn log_density(&self, theta: f64) -> f64 {
        assert!(theta > 0.0, "log-normal support is positive");
        self.log_density_of_log(theta.ln()) - theta.ln()
    }

    /// Normal log density of `phi = ln(theta)`.
    pub fn log_density_of_log(&self, phi: f64) -> f64 {
        let z = (phi - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Independent log-normal priors over the kernel hyperparameters:
/// per-variable lengthscales (median half the variable's range), amplitude
/// (median 1), and, when the noise level is inferred, the noise standard
/// deviation (median 0.01).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPrior {
    pub lengthscales: Vec<LogNormalPrior>,
    pub amplitude: LogNormalPrior,
    pub noise_std: Option<LogNormalPrior>,
}

impl HyperPrior {
    pub fn for_space(space: &SearchSpace, infer_noise: bool) -> Self {
        HyperPrior {
            lengthscales: space
                .variables()
                .iter()
                .map(|v| LogNormalPrior::with_median(v.width() / 2.0, 1.0))
                .collect(),
            amplitude: LogNormalPrior::with_median(1.0, 1.0),
            noise_std: infer_noise.then(|| LogNormalPrior::with_median(0.01, 1.0)),
        }
    }

    /// Number of sampled hyperparameters.
    pub fn dimension(&self) -> usize {
        self.lengthscales.len() + 1 + usize::from(self.noise_std.is_some())
    }

    /// Prior log density of the full log-parameter vector (normal densities,
    /// Jacobian absorbed).
    pub fn log_density_log_space(&self, phi: &[f64]) -> f64 {
        assert_eq!(phi.len(), self.dimension(), "wrong parameter count");
        let d = self.lengthscales.len();
        let mut total = 0.0;
        for (prior, &p) in self.lengthscales.iter().zip(phi) {
            total += prior.log_density_of_log(p);
        }
        total += self.amplitude.log_density_of_log(phi[d]);
        if let Some(noise) = &self.noise_std {
            total += noise.log_density_of_log(phi[d + 1]);
        }
        total
    }

    /// The prior medians in log space; the default chain start.
    pub fn initial_log_point(&self) -> Vec<f64> {
        let mut phi: Vec<f64> = self.lengthscales.iter().map(|p| p.mu).collect();
        phi.push(self.amplitude.mu);
        if let Some(noise) = &self.noise_std {
            phi.push(noise.mu);
        }
        phi
    }
}

/// One posterior hyperparameter draw: the materialised kernel plus its
/// log-space coordinates (kept for warm-starting the next chain).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSample {
    pub config: KernelConfig,
    pub log_point: Vec<f64>,
}

/// Everything fixed about the hyperparameter model: the space, kernel family,
/// whether inputs are rounded, and either a fixed noise variance or a prior
/// over the noise level.
#[derive(Debug, Clone)]
pub struct HyperModel {
    space: SearchSpace,
    family: KernelFamily,
    integer_transform: bool,
    fixed_noise_variance: Option<f64>,
    prior: HyperPrior,
}

impl HyperModel {
    pub fn new(
        space: SearchSpace,
        family: KernelFamily,
        integer_transform: bool,
        fixed_noise_variance: Option<f64>,
    ) -> Self {
        if let Some(v) = fixed_noise_variance {
            assert!(v >= 0.0, "fixed noise variance must be non-negative");
        }
        let prior = HyperPrior::for_space(&space, fixed_noise_variance.is_none());
        HyperModel {
            space,
            family,
            integer_transform,
            fixed_noise_variance,
            prior,
        }
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn prior(&self) -> &HyperPrior {
        &self.prior
    }

    pub fn dimension(&self) -> usize {
        self.prior.dimension()
    }

    pub fn initial_log_point(&self) -> Vec<f64> {
        self.prior.initial_log_point()
    }

    /// Materialises the kernel for one log-parameter vector.
    pub fn config_from_log(&self, phi: &[f64]) -> KernelConfig {
        assert_eq!(phi.len(), self.dimension(), "wrong parameter count");
        let d = self.space.dimension();
        let lengthscales: Vec<f64> = phi[..d].iter().map(|&p| p.exp()).collect();
        let amplitude = phi[d].exp();
        let noise_variance = match self.fixed_noise_variance {
            Some(v) => v,
            // phi holds the log of the noise standard deviation.
            None => (2.0 * phi[d + 1]).exp(),
        };
        KernelConfig::new(
            self.family,
            lengthscales,
            amplitude,
            noise_variance,
            self.integer_transform,
        )
    }

    /// Log-space coordinates of a config under this model (inverse of
    /// [`HyperModel::config_from_log`]).
    pub fn log_from_config(&self, config: &KernelConfig) -> Vec<f64> {
        let mut phi: Vec<f64> = config.lengthscales.iter().map(|l| l.ln()).collect();
        phi.push(config.amplitude.ln());
        if self.fixed_noise_variance.is_none() {
            phi.push(0.5 * config.noise_variance.ln());
        }
        phi
    }
}

/// Unnormalised log posterior density of the hyperparameters themselves:
/// log marginal likelihood plus the log-normal prior log densities at the
/// (positive-scale) hyperparameter values.
pub fn log_posterior(model: &HyperModel, dataset: &Dataset, config: &KernelConfig) -> f64 {
    let prior = &model.prior;
    let mut prior_term = 0.0;
    for (p, &l) in prior.lengthscales.iter().zip(&config.lengthscales) {
        prior_term += p.log_density(l);
    }
    prior_term += prior.amplitude.log_density(config.amplitude);
    if let Some(noise) = &prior.noise_std {
        prior_term += noise.log_density(config.noise_variance.sqrt());
    }
    match gp::log_marginal_likelihood(config, &model.space, dataset) {
        Ok(lml) => lml + prior_term,
        Err(_) => f64::NEG_INFINITY,
    }
}

/// The slice sampler's target: the posterior density of the log-scale
/// parameter vector. Differs from [`log_posterior`] exactly by the
/// change-of-variables Jacobian `sum_i phi_i`. Hyperparameters whose GP fit
/// fails (irreparably ill-conditioned Gram matrix) get density zero.
pub fn log_posterior_log_space(model: &HyperModel, dataset: &Dataset, phi: &[f64]) -> f64 {
    let config = model.config_from_log(phi);
    match gp::log_marginal_likelihood(&config, &model.space, dataset) {
        Ok(lml) => lml + model.prior.log_density_log_space(phi),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Tuning constants for the slice sampler.
#[derive(Debug, Clone, Copy)]
pub struct SliceSettings {
    /// Initial bracket width per coordinate.
    pub width: f64,
    /// Cap on step-out expansions per side.
    pub max_step_out: usize,
    /// Cap on shrinkage steps before declaring the sampler stuck.
    pub max_shrink: usize,
}

impl Default for SliceSettings {
    fn default() -> Self {
        SliceSettings {
            width: 1.0,
            max_step_out: 1000,
            max_shrink: 1000,
        }
    }
}

/// Coordinate-wise slice sampler over an arbitrary log density. Runs
/// `n_burn + n_keep` full sweeps from `initial` and returns the last
/// `n_keep` states, one per sweep (no thinning).
pub fn slice_sample<F, R>(
    mut log_density: F,
    initial: &[f64],
    n_burn: usize,
    n_keep: usize,
    settings: &SliceSettings,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, InferenceError>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut x = initial.to_vec();
    let mut fx = log_density(&x);
    if !fx.is_finite() {
        return Err(InferenceError::BadInitial);
    }
    let mut kept = Vec::with_capacity(n_keep);
    for sweep in 0..(n_burn + n_keep) {
        for d in 0..x.len() {
            fx = slice_update_coordinate(&mut log_density, &mut x, fx, d, settings, rng)?;
        }
        if sweep >= n_burn {
            kept.push(x.clone());
        }
    }
    Ok(kept)
}

/// One slice-sampling update of coordinate `d`; returns the log density of
/// the new state.
fn slice_update_coordinate<F, R>(
    log_density: &mut F,
    x: &mut [f64],
    fx: f64,
    d: usize,
    settings: &SliceSettings,
    rng: &mut R,
) -> Result<f64, InferenceError>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let x0 = x[d];
    // ln(u) with u in (0, 1]: the slice level lies below the current density.
    let level = fx + (1.0 - rng.random::<f64>()).ln();

    // Step out: position a width-w bracket randomly around x0, then expand
    // each end until it leaves the slice.
    let w = settings.width;
    let mut lo = x0 - w * rng.random::<f64>();
    let mut hi = lo + w;
    let mut eval_at = |x: &mut [f64], pos: f64| {
        x[d] = pos;
        let f = log_density(x);
        x[d] = x0;
        f
    };
    let mut expansions = 0;
    while eval_at(x, lo) > level {
        lo -= w;
        expansions += 1;
        if expansions > settings.max_step_out {
            return Err(InferenceError::BracketFailed {
                coordinate: d,
                limit: settings.max_step_out,
            });
        }
    }
    expansions = 0;
    while eval_at(x, hi) > level {
        hi += w;
        expansions += 1;
        if expansions > settings.max_step_out {
            return Err(InferenceError::BracketFailed {
                coordinate: d,
                limit: settings.max_step_out,
            });
        }
    }

    // Shrinkage: sample inside the bracket, shrinking toward x0 on rejection.
    for _ in 0..settings.max_shrink {
        let candidate = lo + (hi - lo) * rng.random::<f64>();
        let f_candidate = eval_at(x, candidate);
        if f_candidate > level {
            x[d] = candidate;
            return Ok(f_candidate);
        }
        if candidate < x0 {
            lo = candidate;
        } else {
            hi = candidate;
        }
    }
    Err(InferenceError::SamplerStuck {
        coordinate: d,
        limit: settings.max_shrink,
    })
}

/// Draws `n_keep` hyperparameter samples from the posterior given `dataset`,
/// burning `n_burn` sweeps first. The chain starts at `initial` (log-space)
/// when given (warm start), otherwise at the prior medians.
pub fn sample_hyperparameters<R: Rng + ?Sized>(
    model: &HyperModel,
    dataset: &Dataset,
    initial: Option<&[f64]>,
    n_burn: usize,
    n_keep: usize,
    rng: &mut R,
) -> Result<Vec<HyperSample>, InferenceError> {
    let start = match initial {
        Some(phi) => phi.to_vec(),
        None => model.initial_log_point(),
    };
    let kept = slice_sample(
        |phi| log_posterior_log_space(model, dataset, phi),
        &start,
        n_burn,
        n_keep,
        &SliceSettings::default(),
        rng,
    )?;
    Ok(kept
        .into_iter()
        .map(|log_point| HyperSample {
            config: model.config_from_log(&log_point),
            log_point,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Point, SearchSpace, Variable};
    use crate::stream_from_seed;
    use approx::assert_relative_eq;

    #[test]
    fn log_normal_log_density_known_values() {
        let std = LogNormalPrior::with_median(1.0, 1.0);
        // Standard normal at its mode: -0.5 ln(2 pi).
        assert_relative_eq!(
            std.log_density_of_log(0.0),
            -0.918_938_533_204_672_7,
            epsilon = 1e-12
        );
        // One sigma out subtracts 1/2.
        assert_relative_eq!(
            std.log_density_of_log(1.0),
            -1.418_938_533_204_672_7,
            epsilon = 1e-12
        );
        // At theta = 1, ln(theta) = 0, so theta-space and log-space densities
        // coincide; elsewhere they differ by exactly ln(theta).
        assert_relative_eq!(
            std.log_density(1.0),
            -0.918_938_533_204_672_7,
            epsilon = 1e-12
        );
        let wide = LogNormalPrior::with_median(2.0, 3.0);
        assert_relative_eq!(
            wide.log_density(2.0),
            -0.918_938_533_204_672_7 - 3.0f64.ln() - 2.0f64.ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            wide.log_density(5.0),
            wide.log_density_of_log(5.0f64.ln()) - 5.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn prior_medians_follow_variable_ranges() {
        let space = SearchSpace::new(vec![
            Variable::continuous(0.0, 1.0).unwrap(),
            Variable::integer(0, 4).unwrap(),
        ])
        .unwrap();
        let prior = HyperPrior::for_space(&space, true);
        assert_relative_eq!(prior.lengthscales[0].median(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(prior.lengthscales[1].median(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(prior.amplitude.median(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(prior.noise_std.unwrap().median(), 0.01, epsilon = 1e-12);
        assert_eq!(prior.dimension(), 4);
        assert_eq!(HyperPrior::for_space(&space, false).dimension(), 3);
    }

    #[test]
    fn log_posterior_composes_likelihood_and_prior() {
        // At the prior medians every prior term is its scalar density at the
        // median; checked against an independent per-term computation.
        let space = SearchSpace::new(vec![Variable::continuous(0.0, 1.0).unwrap()]).unwrap();
        let dataset = Dataset::new(vec![Point::new(vec![0.2])], vec![0.3]);
        let model = HyperModel::new(space.clone(), KernelFamily::Matern52, false, None);
        let config = model.config_from_log(&model.initial_log_point());
        assert_relative_eq!(config.lengthscales[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(config.amplitude, 1.0, epsilon = 1e-12);
        assert_relative_eq!(config.noise_variance, 1e-4, epsilon = 1e-12);

        // ln LogNormal(theta; mu, sigma=1) at the median is
        // -0.5 ln(2 pi) - ln(sigma) - ln(median).
        let half_ln_2pi = 0.918_938_533_204_672_7;
        let expected_prior =
            (-half_ln_2pi - 0.5f64.ln()) + (-half_ln_2pi) + (-half_ln_2pi - 0.01f64.ln());
        let lml = crate::gp::log_marginal_likelihood(&config, &space, &dataset).unwrap();
        assert_relative_eq!(
            log_posterior(&model, &dataset, &config),
            lml + expected_prior,
            epsilon = 1e-10
        );
    }

    #[test]
    fn log_space_target_differs_by_jacobian() {
        let space = SearchSpace::new(vec![
            Variable::continuous(0.0, 1.0).unwrap(),
            Variable::integer(0, 2).unwrap(),
        ])
        .unwrap();
        let dataset = Dataset::new(
            vec![Point::new(vec![0.2, 1.0]), Point::new(vec![0.8, 2.0])],
            vec![0.3, -0.4],
        );
        let model = HyperModel::new(space, KernelFamily::SquaredExponential, true, None);
        let phi = vec![-0.5, 0.4, 0.2, -3.0];
        let config = model.config_from_log(&phi);
        let jacobian: f64 = phi.iter().sum();
        assert_relative_eq!(
            log_posterior_log_space(&model, &dataset, &phi),
            log_posterior(&model, &dataset, &config) + jacobian,
            epsilon = 1e-10
        );
        // Round trip through config space preserves the coordinates.
        for (a, b) in model.log_from_config(&config).iter().zip(&phi) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn noise_far_above_signal_lowers_the_likelihood() {
        // On a dataset the kernel can interpolate, pushing the noise level
        // far above the signal strictly decreases the marginal likelihood.
        let space = SearchSpace::new(vec![Variable::continuous(0.0, 1.0).unwrap()]).unwrap();
        let dataset = Dataset::new(
            vec![
                Point::new(vec![0.1]),
                Point::new(vec![0.45]),
                Point::new(vec![0.8]),
            ],
            vec![0.12, -0.05, 0.08],
        );
        let at_noise = |noise_std: f64| {
            let config = KernelConfig::new(
                KernelFamily::SquaredExponential,
                vec![0.5],
                1.0,
                noise_std * noise_std,
                false,
            );
            crate::gp::log_marginal_likelihood(&config, &space, &dataset).unwrap()
        };
        assert!(at_noise(10.0) > at_noise(20.0));
        assert!(at_noise(20.0) > at_noise(40.0));
    }

    #[test]
    fn fixed_noise_model_has_no_noise_coordinate() {
        let space = SearchSpace::new(vec![Variable::continuous(0.0, 1.0).unwrap()]).unwrap();
        let model = HyperModel::new(space, KernelFamily::SquaredExponential, false, Some(1e-6));
        assert_eq!(model.dimension(), 2);
        let config = model.config_from_log(&[0.0, 0.0]);
        assert_relative_eq!(config.noise_variance, 1e-6, epsilon = 1e-18);
        assert!(!config.integer_transform);
        assert_eq!(model.log_from_config(&config).len(), 2);
    }

    #[test]
    fn slice_sampler_recovers_standard_normal_moments() {
        let mut rng = stream_from_seed(17);
        let samples = slice_sample(
            |x: &[f64]| -0.5 * x[0] * x[0],
            &[0.0],
            100,
            2000,
            &SliceSettings::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(samples.len(), 2000);
        let mean: f64 = samples.iter().map(|s| s[0]).sum::<f64>() / 2000.0;
        let var: f64 = samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / 2000.0;
        assert!(mean.abs() < 0.08, "mean {mean} too far from 0");
        assert!((var - 1.0).abs() < 0.15, "variance {var} too far from 1");
    }

    #[test]
    fn slice_sampler_tracks_shifted_coordinates_jointly() {
        // Independent normals with different locations and scales.
        let mut rng = stream_from_seed(23);
        let samples = slice_sample(
            |x: &[f64]| {
                let a = x[0] - 2.0;
                let b = (x[1] + 1.0) / 0.5;
                -0.5 * (a * a + b * b)
            },
            &[0.0, 0.0],
            100,
            2000,
            &SliceSettings::default(),
            &mut rng,
        )
        .unwrap();
        let mean0: f64 = samples.iter().map(|s| s[0]).sum::<f64>() / 2000.0;
        let mean1: f64 = samples.iter().map(|s| s[1]).sum::<f64>() / 2000.0;
        assert!((mean0 - 2.0).abs() < 0.1, "mean {mean0} too far from 2");
        assert!((mean1 + 1.0).abs() < 0.06, "mean {mean1} too far from -1");
    }

    #[test]
    fn flat_density_on_a_box_stays_in_the_box() {
        let in_box = |x: &[f64]| {
            if x[0] >= -2.0 && x[0] <= 3.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut rng = stream_from_seed(13);
        let samples =
            slice_sample(in_box, &[0.5], 0, 50, &SliceSettings::default(), &mut rng).unwrap();
        for s in &samples {
            assert!(s[0] >= -2.0 && s[0] <= 3.0, "escaped the box: {}", s[0]);
        }
    }

    #[test]
    fn slice_sampler_is_deterministic_per_seed() {
        let density = |x: &[f64]| -0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let a = slice_sample(
            density,
            &[0.3, -0.7],
            10,
            50,
            &SliceSettings::default(),
            &mut stream_from_seed(5),
        )
        .unwrap();
        let b = slice_sample(
            density,
            &[0.3, -0.7],
            10,
            50,
            &SliceSettings::default(),
            &mut stream_from_seed(5),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn point_mass_density_reports_sampler_stuck() {
        // Density that is finite only exactly at the start: every shrink
        // proposal is rejected, so the shrink cap must fire.
        let mut rng = stream_from_seed(2);
        let err = slice_sample(
            |x: &[f64]| if x[0] == 0.0 { 0.0 } else { f64::NEG_INFINITY },
            &[0.0],
            0,
            1,
            &SliceSettings::default(),
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(
            err,
            InferenceError::SamplerStuck {
                coordinate: 0,
                limit: 1000
            }
        );
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let mut rng = stream_from_seed(2);
        let err = slice_sample(
            |_: &[f64]| f64::NEG_INFINITY,
            &[0.0],
            0,
            1,
            &SliceSettings::default(),
            &mut rng,
        )
        .unwrap_err();
        assert_eq!(err, InferenceError::BadInitial);
    }

    #[test]
    fn hyperparameter_sampling_returns_usable_configs() {
        let space = SearchSpace::new(vec![
            Variable::continuous(0.0, 1.0).unwrap(),
            Variable::integer(0, 2).unwrap(),
        ])
        .unwrap();
        let mut rng = stream_from_seed(31);
        let points: Vec<Point> = (0..10).map(|_| space.sample_uniform(&mut rng)).collect();
        let values: Vec<f64> = points
            .iter()
            .map(|p| (3.0 * p.coords()[0]).sin() + 0.1 * p.coords()[1])
            .collect();
        let dataset = Dataset::new(points, values);
        let model = HyperModel::new(space.clone(), KernelFamily::Matern52, true, None);
        let kept = sample_hyperparameters(&model, &dataset, None, 5, 10, &mut rng).unwrap();
        assert_eq!(kept.len(), 10);
        for sample in &kept {
            let config = &sample.config;
            assert!(config.lengthscales.iter().all(|&l| l > 0.0));
            assert!(config.amplitude > 0.0);
            assert!(config.noise_variance > 0.0);
            assert!(config.integer_transform);
            // Every kept state must have finite posterior density.
            assert!(log_posterior(&model, &dataset, config).is_finite());
            assert!(log_posterior_log_space(&model, &dataset, &sample.log_point).is_finite());
        }
    }
}
