//! Expected improvement and its maximization over mixed spaces.
//!
//! EI for minimization: with incumbent `nu` and predictive moments
//! `(mu, sigma)`, `gamma = (nu - mu) / sigma` and
//! `alpha = sigma * (gamma * Phi(gamma) + phi(gamma))`. Below a tiny sigma
//! threshold the acquisition degenerates to the deterministic utility
//! `max(0, nu - mu)`. Uncertainty over hyperparameters is handled by
//! averaging EI over one posterior per hyperparameter sample.
//!
//! Maximization is multistart: score a cloud of uniform candidates, then
//! refine the best few with a derivative-free coordinate search. Integer
//! coordinates are refined by whole-cell (+/-1) moves when the kernel rounds
//! inputs (the acquisition is piecewise constant inside a cell, so smaller
//! steps cannot make progress), and by continuous relaxation otherwise.

use rand::Rng;

use crate::driver::Strategy;
use crate::gp::GpPosterior;
use crate::space::{Point, SearchSpace, Variable};

/// Random candidates scored per maximization.
pub const N_CANDIDATES: usize = 1000;
/// Candidates kept for local refinement.
pub const N_REFINE_STARTS: usize = 5;
/// Initial refinement step, as a fraction of each variable's width.
pub const INITIAL_STEP_FRACTION: f64 = 0.1;
/// Refinement stops once steps fall below this fraction of the width.
pub const MIN_STEP_FRACTION: f64 = 1e-4;

/// Predictive standard deviations below this count as exactly zero.
pub const STD_FLOOR: f64 = 1e-12;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement of a Gaussian belief `N(mean, std^2)` over the
/// incumbent (minimization). Always non-negative.
pub fn expected_improvement(mean: f64, std: f64, incumbent: f64) -> f64 {
    assert!(std >= 0.0, "standard deviation must be non-negative");
    if std < STD_FLOOR {
        return (incumbent - mean).max(0.0);
    }
    let gamma = (incumbent - mean) / std;
    (std * (gamma * normal_cdf(gamma) + normal_pdf(gamma))).max(0.0)
}

/// Inputs of one acquisition query: the posterior ensemble (one GP per
/// hyperparameter sample, all fitted on the same data), the incumbent in the
/// same units as the posteriors, and the strategy (which fixes how integer
/// coordinates are treated during refinement).
#[derive(Clone, Copy)]
pub struct AcquisitionContext<'a> {
    pub posteriors: &'a [GpPosterior],
    pub incumbent: f64,
    pub strategy: Strategy,
}

impl AcquisitionContext<'_> {
    fn validate(&self) {
        assert!(!self.posteriors.is_empty(), "need at least one posterior");
    }
}

/// Hyperparameter-averaged expected improvement at one point.
pub fn acquisition_value(ctx: &AcquisitionContext, x: &Point) -> f64 {
    ctx.validate();
    let total: f64 = ctx
        .posteriors
        .iter()
        .map(|post| {
            let p = post.predict(x);
            expected_improvement(p.mean, p.std_dev(), ctx.incumbent)
        })
        .sum();
    total / ctx.posteriors.len() as f64
}

fn acquisition_batch(ctx: &AcquisitionContext, xs: &[Point]) -> Vec<f64> {
    let mut totals = vec![0.0; xs.len()];
    for post in ctx.posteriors {
        for (t, p) in totals.iter_mut().zip(post.predict_many(xs)) {
            *t += expected_improvement(p.mean, p.std_dev(), ctx.incumbent);
        }
    }
    let k = ctx.posteriors.len() as f64;
    for t in &mut totals {
        *t /= k;
    }
    totals
}

/// Maximizes the averaged acquisition over the space: 1000 uniform
/// candidates, top 5 refined by coordinate search, ties broken by
/// first-found. Deterministic given the rng stream.
pub fn maximize_acquisition<R: Rng + ?Sized>(
    ctx: &AcquisitionContext,
    space: &SearchSpace,
    rng: &mut R,
) -> Point {
    ctx.validate();
    let integer_cell_moves = ctx.strategy == Strategy::Proposed && space.has_integer_variables();
    multistart_maximize(
        space,
        integer_cell_moves,
        &|xs| acquisition_batch(ctx, xs),
        rng,
    )
}

/// Shared multistart machinery: also used with the negated posterior mean
/// for final recommendations.
pub(crate) fn multistart_maximize<R: Rng + ?Sized>(
    space: &SearchSpace,
    integer_cell_moves: bool,
    score_batch: &dyn Fn(&[Point]) -> Vec<f64>,
    rng: &mut R,
) -> Point {
    let candidates: Vec<Point> = (0..N_CANDIDATES)
        .map(|_| space.sample_uniform(rng))
        .collect();
    let scores = score_batch(&candidates);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut best: Option<(Point, f64)> = None;
    for &start in order.iter().take(N_REFINE_STARTS) {
        let (point, score) = refine(
            space,
            integer_cell_moves,
            score_batch,
            candidates[start].clone(),
            scores[start],
        );
        // Strict comparison keeps the first-found point on ties.
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((point, score));
        }
    }
    best.expect("at least one refinement start").0
}

/// Greedy coordinate search from `x`: tries +/- step moves per coordinate,
/// halving continuous steps when a sweep stalls. Integer coordinates move by
/// whole cells when `integer_cell_moves` is set; these moves are exhausted
/// (not halved) once they stop helping.
fn refine(
    space: &SearchSpace,
    integer_cell_moves: bool,
    score_batch: &dyn Fn(&[Point]) -> Vec<f64>,
    start: Point,
    start_score: f64,
) -> (Point, f64) {
    let vars = space.variables();
    let cell_move = |v: &Variable| integer_cell_moves && v.is_integer();
    let mut steps: Vec<f64> = vars
        .iter()
        .map(|v| {
            if cell_move(v) {
                1.0
            } else {
                INITIAL_STEP_FRACTION * v.width()
            }
        })
        .collect();
    let mut x = start;
    let mut fx = start_score;
    loop {
        let mut improved = false;
        for d in 0..vars.len() {
            for sign in [1.0, -1.0] {
                let mut coords = x.coords().to_vec();
                coords[d] += sign * steps[d];
                let candidate = space.clamp(&Point::new(coords));
                let score = score_batch(std::slice::from_ref(&candidate))[0];
                if score > fx {
                    x = candidate;
                    fx = score;
                    improved = true;
                }
            }
        }
        if improved {
            continue;
        }
        let mut any_left = false;
        for (d, v) in vars.iter().enumerate() {
            if cell_move(v) {
                continue; // whole-cell moves are exhausted, not halved
            }
            steps[d] *= 0.5;
            if steps[d] >= MIN_STEP_FRACTION * v.width() {
                any_left = true;
            }
        }
        if !any_left {
            return (x, fx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{self, Dataset};
    use crate::kernel::{KernelConfig, KernelFamily};
    use crate::space::Variable;
    use crate::stream_from_seed;
    use approx::assert_relative_eq;

    #[test]
    fn zero_std_degenerates_to_deterministic_utility() {
        assert_eq!(expected_improvement(1.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.3, 0.0, 1.0), 0.7);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement(0.3, 1e-13, 1.0), 0.7);
    }

    #[test]
    fn ei_at_gamma_zero_is_standard_normal_density_at_zero() {
        // sigma * phi(0) with sigma = 1: 1/sqrt(2 pi).
        assert_relative_eq!(
            expected_improvement(0.7, 1.0, 0.7),
            0.398_942_280_401_432_7,
            epsilon = 1e-9
        );
    }

    #[test]
    fn ei_at_gamma_one_matches_closed_form() {
        // Phi(1) + phi(1).
        assert_relative_eq!(
            expected_improvement(0.0, 1.0, 1.0),
            1.083_315_470_587_686_3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ei_difference_identity_across_gamma_sign() {
        // EI(gamma) - EI(-gamma) = sigma * gamma, because phi is even and
        // Phi(g) + Phi(-g) = 1.
        for &(gap, std) in &[(1.0, 1.0), (0.4, 0.7), (2.5, 3.0)] {
            let plus = expected_improvement(0.0, std, gap);
            let minus = expected_improvement(0.0, std, -gap);
            assert_relative_eq!(plus - minus, gap, epsilon = 1e-10);
        }
    }

    #[test]
    fn ei_is_monotone_in_mean_and_std() {
        let incumbent = 0.2;
        let means: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.3).collect();
        let stds: Vec<f64> = (1..=10).map(|i| i as f64 * 0.17).collect();
        for &s in &stds {
            for pair in means.windows(2) {
                assert!(
                    expected_improvement(pair[0], s, incumbent)
                        >= expected_improvement(pair[1], s, incumbent) - 1e-12
                );
            }
        }
        for &m in &means {
            for pair in stds.windows(2) {
                assert!(
                    expected_improvement(m, pair[1], incumbent)
                        >= expected_improvement(m, pair[0], incumbent) - 1e-12
                );
            }
        }
    }

    #[test]
    fn ei_dominates_deterministic_utility() {
        let mut rng = stream_from_seed(4);
        for _ in 0..500 {
            let mean: f64 = rng.random_range(-3.0..3.0);
            let std: f64 = rng.random_range(0.0..2.0);
            let incumbent: f64 = rng.random_range(-3.0..3.0);
            assert!(
                expected_improvement(mean, std, incumbent) >= (incumbent - mean).max(0.0) - 1e-12
            );
        }
    }

    fn fit_one(
        space: &SearchSpace,
        cfg: &KernelConfig,
        xs: Vec<Point>,
        ys: Vec<f64>,
    ) -> GpPosterior {
        gp::fit(cfg, space, &Dataset::new(xs, ys)).unwrap()
    }

    fn line_space() -> SearchSpace {
        SearchSpace::new(vec![Variable::continuous(0.0, 1.0).unwrap()]).unwrap()
    }

    fn se_cfg(l: f64, noise: f64) -> KernelConfig {
        KernelConfig::new(KernelFamily::SquaredExponential, vec![l], 1.0, noise, false)
    }

    #[test]
    fn averaging_over_posteriors_matches_componentwise_oracle() {
        let space = line_space();
        let mut rng = stream_from_seed(6);
        let mut posteriors = Vec::new();
        for i in 0..5 {
            let cfg = se_cfg(0.2 + 0.1 * i as f64, 0.01 * (i + 1) as f64);
            let xs: Vec<Point> = (0..4).map(|_| space.sample_uniform(&mut rng)).collect();
            let ys: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            posteriors.push(fit_one(&space, &cfg, xs, ys));
        }
        let ctx = AcquisitionContext {
            posteriors: &posteriors,
            incumbent: 0.1,
            strategy: Strategy::Basic,
        };
        let x = Point::new(vec![0.37]);
        let by_hand: f64 = posteriors
            .iter()
            .map(|p| {
                let pred = p.predict(&x);
                expected_improvement(pred.mean, pred.variance.sqrt(), 0.1)
            })
            .sum::<f64>()
            / 5.0;
        assert_relative_eq!(acquisition_value(&ctx, &x), by_hand, epsilon = 1e-12);

        // A single posterior and that posterior duplicated give the same value.
        let single = AcquisitionContext {
            posteriors: &posteriors[..1],
            incumbent: 0.1,
            strategy: Strategy::Basic,
        };
        let doubled_list = vec![posteriors[0].clone(), posteriors[0].clone()];
        let doubled = AcquisitionContext {
            posteriors: &doubled_list,
            incumbent: 0.1,
            strategy: Strategy::Basic,
        };
        assert_relative_eq!(
            acquisition_value(&single, &x),
            acquisition_value(&doubled, &x),
            epsilon = 1e-15
        );
    }

    #[test]
    fn flat_acquisition_returns_an_in_bounds_point() {
        // All data far outside the domain: predictions are constant over it.
        let wide = SearchSpace::new(vec![Variable::continuous(100.0, 101.0).unwrap()]).unwrap();
        let cfg = KernelConfig::new(KernelFamily::SquaredExponential, vec![0.1], 1.0, 0.0, false);
        let post = fit_one(&wide, &cfg, vec![Point::new(vec![100.5])], vec![0.0]);
        // Observation far from everywhere else in lengthscale units makes the
        // rest of the domain essentially prior; acquisition is near-flat.
        let ctx = AcquisitionContext {
            posteriors: std::slice::from_ref(&post),
            incumbent: 0.0,
            strategy: Strategy::Basic,
        };
        let x = maximize_acquisition(&ctx, &wide, &mut stream_from_seed(10));
        assert!(wide.contains(&x));
    }

    #[test]
    fn proposed_refinement_finds_the_unexplored_cell() {
        let space = SearchSpace::new(vec![Variable::integer(0, 4).unwrap()]).unwrap();
        let cfg = KernelConfig::new(KernelFamily::SquaredExponential, vec![1.0], 1.0, 0.0, true);
        // Cell 3 unobserved; everything else measured noiselessly.
        let xs: Vec<Point> = [0.0, 1.0, 2.0, 4.0]
            .iter()
            .map(|&z| Point::new(vec![z]))
            .collect();
        let ys = vec![0.5, 0.2, 0.8, 0.4];
        let post = fit_one(&space, &cfg, xs, ys.clone());
        let ctx = AcquisitionContext {
            posteriors: std::slice::from_ref(&post),
            incumbent: 0.2,
            strategy: Strategy::Proposed,
        };
        let x = maximize_acquisition(&ctx, &space, &mut stream_from_seed(3));
        assert_eq!(x.coords()[0].round(), 3.0);
    }

    #[test]
    fn continuous_maximizer_agrees_with_dense_grid_oracle() {
        let space = line_space();
        let cfg = se_cfg(0.3, 0.0);
        // One observation near the right edge: EI rises monotonically toward
        // the far (left) boundary, so the argmax is unique.
        let post = fit_one(&space, &cfg, vec![Point::new(vec![0.9])], vec![0.0]);
        let ctx = AcquisitionContext {
            posteriors: std::slice::from_ref(&post),
            incumbent: 0.0,
            strategy: Strategy::Basic,
        };
        let found = maximize_acquisition(&ctx, &space, &mut stream_from_seed(12));
        let mut best_x = 0.0;
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..10_000 {
            let x = i as f64 / 9_999.0;
            let v = acquisition_value(&ctx, &Point::new(vec![x]));
            if v > best_v {
                best_v = v;
                best_x = x;
            }
        }
        assert!(
            (found.coords()[0] - best_x).abs() <= 1e-2,
            "found {} but grid oracle says {}",
            found.coords()[0],
            best_x
        );
    }

    #[test]
    fn result_never_scores_below_its_own_candidate_cloud() {
        let space = SearchSpace::new(vec![
            Variable::continuous(0.0, 1.0).unwrap(),
            Variable::integer(0, 3).unwrap(),
        ])
        .unwrap();
        let cfg = KernelConfig::new(KernelFamily::Matern52, vec![0.3, 1.0], 1.0, 0.01, true);
        let mut rng = stream_from_seed(31);
        let xs: Vec<Point> = (0..6).map(|_| space.sample_uniform(&mut rng)).collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let post = fit_one(&space, &cfg, xs, ys.clone());
        let incumbent = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let ctx = AcquisitionContext {
            posteriors: std::slice::from_ref(&post),
            incumbent,
            strategy: Strategy::Proposed,
        };
        // The maximizer consumes the stream by drawing its candidate cloud
        // first, so an identically seeded stream reproduces that cloud.
        let seed = 99;
        let found = maximize_acquisition(&ctx, &space, &mut stream_from_seed(seed));
        let found_value = acquisition_value(&ctx, &found);
        let mut cloud_rng = stream_from_seed(seed);
        for _ in 0..N_CANDIDATES {
            let candidate = space.sample_uniform(&mut cloud_rng);
            assert!(acquisition_value(&ctx, &candidate) <= found_value + 1e-12);
        }
    }

    #[test]
    fn proposed_acquisition_is_cell_constant() {
        let space = SearchSpace::new(vec![
            Variable::continuous(0.0, 1.0).unwrap(),
            Variable::integer(0, 4).unwrap(),
        ])
        .unwrap();
        let cfg = KernelConfig::new(
            KernelFamily::SquaredExponential,
            vec![0.3, 1.2],
            1.0,
            0.001,
            true,
        );
        let mut rng = stream_from_seed(21);
        let xs: Vec<Point> = (0..5).map(|_| space.sample_uniform(&mut rng)).collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let post = fit_one(&space, &cfg, xs, ys);
        let ctx = AcquisitionContext {
            posteriors: std::slice::from_ref(&post),
            incumbent: 0.0,
            strategy: Strategy::Proposed,
        };
        for _ in 0..50 {
            let x = space.sample_uniform(&mut rng);
            let jostled = Point::new(vec![x.coords()[0], x.coords()[1] + 0.4]);
            let x_t = space.transform(&jostled);
            assert!(
                (acquisition_value(&ctx, &jostled) - acquisition_value(&ctx, &x_t)).abs() <= 1e-9
            );
        }
    }

    #[test]
    fn maximization_is_deterministic_per_seed() {
        let space = line_space();
        let post = fit_one(
            &space,
            &se_cfg(0.25, 0.01),
            vec![Point::new(vec![0.2]), Point::new(vec![0.7])],
            vec![0.4, -0.3],
        );
        let ctx = AcquisitionContext {
            posteriors: std::slice::from_ref(&post),
            incumbent: -0.3,
            strategy: Strategy::Basic,
        };
        let a = maximize_acquisition(&ctx, &space, &mut stream_from_seed(2));
        let b = maximize_acquisition(&ctx, &space, &mut stream_from_seed(2));
        assert_eq!(a, b);
    }
}
