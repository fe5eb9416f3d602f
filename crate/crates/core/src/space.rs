//! Mixed continuous/integer search spaces and the rounding map `T`.
//!
//! A [`SearchSpace`] is an ordered list of [`Variable`]s. Every point is a
//! plain real vector regardless of variable kinds; integer variables hold
//! exactly representable integer values. The rounding map [`SearchSpace::transform`]
//! replaces each integer coordinate by its nearest integer and is the `T` used
//! by the cell-constant kernel wrapper.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the number of points [`SearchSpace::enumerate_grid`] may produce.
pub const DEFAULT_GRID_CAP: usize = 50_000;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("continuous variable requires lower < upper, got [{lower}, {upper}]")]
    InvalidContinuousBounds { lower: f64, upper: f64 },
    #[error("integer variable requires lower <= upper, got {{{lower}..{upper}}}")]
    InvalidIntegerBounds { lower: i64, upper: i64 },
    #[error("a search space needs at least one variable")]
    Empty,
    #[error("grid of {size} points exceeds the cap of {cap}")]
    GridTooLarge { size: u128, cap: usize },
}

/// One coordinate of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Variable {
    /// Real interval `[lower, upper]` with `lower < upper`.
    Continuous { lower: f64, upper: f64 },
    /// Inclusive integer range `{lower, ..., upper}` with `lower <= upper`.
    Integer { lower: i64, upper: i64 },
}

impl Variable {
    pub fn continuous(lower: f64, upper: f64) -> Result<Self, SpaceError> {
        if !lower.is_finite() || !upper.is_finite() || lower >= upper {
            return Err(SpaceError::InvalidContinuousBounds { lower, upper });
        }
        Ok(Variable::Continuous { lower, upper })
    }

    pub fn integer(lower: i64, upper: i64) -> Result<Self, SpaceError> {
        if lower > upper {
            return Err(SpaceError::InvalidIntegerBounds { lower, upper });
        }
        Ok(Variable::Integer { lower, upper })
    }

    pub fn is_integer(&self) -> bool {
        matches!(self, Variable::Integer { .. })
    }

    /// Lower bound as a real number.
    pub fn lower(&self) -> f64 {
        match *self {
            Variable::Continuous { lower, .. } => lower,
            Variable::Integer { lower, .. } => lower as f64,
        }
    }

    /// Upper bound as a real number.
    pub fn upper(&self) -> f64 {
        match *self {
            Variable::Continuous { upper, .. } => upper,
            Variable::Integer { upper, .. } => upper as f64,
        }
    }

    /// Width of the variable's range; at least 1 for degenerate integer ranges
    /// so that width-scaled quantities (priors, search steps) stay positive.
    pub fn width(&self) -> f64 {
        match *self {
            Variable::Continuous { lower, upper } => upper - lower,
            Variable::Integer { lower, upper } => ((upper - lower) as f64).max(1.0),
        }
    }
}

/// A point of the search space: one real coordinate per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dimension(&self) -> usize {
        self.coords.len()
    }
}

impl From<Vec<f64>> for Point {
    fn from(coords: Vec<f64>) -> Self {
        Point::new(coords)
    }
}

/// An ordered, immutable list of variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    variables: Vec<Variable>,
}

impl SearchSpace {
    pub fn new(variables: Vec<Variable>) -> Result<Self, SpaceError> {
        if variables.is_empty() {
            return Err(SpaceError::Empty);
        }
        Ok(SearchSpace { variables })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn dimension(&self) -> usize {
        self.variables.len()
    }

    pub fn has_integer_variables(&self) -> bool {
        self.variables.iter().any(Variable::is_integer)
    }

    fn assert_dimension(&self, x: &Point) {
        assert_eq!(
            x.dimension(),
            self.dimension(),
            "point has {} coordinates but the space has {} variables",
            x.dimension(),
            self.dimension()
        );
    }

    /// The rounding map `T`: every integer coordinate is replaced by its
    /// nearest integer (ties round half away from zero, the behaviour of
    /// `f64::round`); continuous coordinates pass through unchanged.
    pub fn transform(&self, x: &Point) -> Point {
        self.assert_dimension(x);
        let coords = self
            .variables
            .iter()
            .zip(x.coords())
            .map(|(v, &c)| if v.is_integer() { c.round() } else { c })
            .collect();
        Point::new(coords)
    }

    /// Clamps every coordinate into its variable's bounds.
    pub fn clamp(&self, x: &Point) -> Point {
        self.assert_dimension(x);
        let coords = self
            .variables
            .iter()
            .zip(x.coords())
            .map(|(v, &c)| c.clamp(v.lower(), v.upper()))
            .collect();
        Point::new(coords)
    }

    /// True when every coordinate lies within its variable's bounds.
    pub fn contains(&self, x: &Point) -> bool {
        x.dimension() == self.dimension()
            && self
                .variables
                .iter()
                .zip(x.coords())
                .all(|(v, &c)| c >= v.lower() && c <= v.upper())
    }

    /// Draws one uniform point: continuous coordinates uniform on their
    /// interval, integer coordinates uniform over their integer set (returned
    /// as exact integer values).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let coords = self
            .variables
            .iter()
            .map(|v| match *v {
                Variable::Continuous { lower, upper } => {
                    lower + (upper - lower) * rng.random::<f64>()
                }
                Variable::Integer { lower, upper } => rng.random_range(lower..=upper) as f64,
            })
            .collect();
        Point::new(coords)
    }

    /// Per-variable grid coordinates: `points_per_continuous_dim` evenly
    /// spaced values including both endpoints for continuous variables, all
    /// integers for integer variables.
    pub fn grid_axes(&self, points_per_continuous_dim: usize) -> Vec<Vec<f64>> {
        assert!(
            points_per_continuous_dim >= 2,
            "need at least 2 grid points per continuous dimension"
        );
        self.variables
            .iter()
            .map(|v| match *v {
                Variable::Continuous { lower, upper } => {
                    let n = points_per_continuous_dim;
                    (0..n)
                        .map(|i| lower + (upper - lower) * i as f64 / (n - 1) as f64)
                        .collect()
                }
                Variable::Integer { lower, upper } => (lower..=upper).map(|z| z as f64).collect(),
            })
            .collect()
    }

    /// Full Cartesian grid in row-major order (first variable slowest),
    /// subject to [`DEFAULT_GRID_CAP`].
    pub fn enumerate_grid(
        &self,
        points_per_continuous_dim: usize,
    ) -> Result<Vec<Point>, SpaceError> {
        self.enumerate_grid_capped(points_per_continuous_dim, DEFAULT_GRID_CAP)
    }

    /// As [`SearchSpace::enumerate_grid`] with an explicit capacity cap.
    pub fn enumerate_grid_capped(
        &self,
        points_per_continuous_dim: usize,
        cap: usize,
    ) -> Result<Vec<Point>, SpaceError> {
        let axes = self.grid_axes(points_per_continuous_dim);
        let size: u128 = axes.iter().map(|a| a.len() as u128).product();
        if size > cap as u128 {
            return Err(SpaceError::GridTooLarge { size, cap });
        }
        let mut grid = Vec::with_capacity(size as usize);
        let mut current = vec![0usize; axes.len()];
        loop {
            grid.push(Point::new(
                current
                    .iter()
                    .zip(&axes)
                    .map(|(&i, axis)| axis[i])
                    .collect(),
            ));
            // advance the odometer, last dimension fastest
            let mut d = axes.len();
            loop {
                if d == 0 {
                    return Ok(grid);
                }
                d -= 1;
                current[d] += 1;
                if current[d] < axes[d].len() {
                    break;
                }
                current[d] = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_from_seed;

    fn int_cont_space() -> SearchSpace {
        SearchSpace::new(vec![
            Variable::integer(0, 2).unwrap(),
            Variable::continuous(0.0, 1.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn transform_rounds_integer_coordinates() {
        let space = int_cont_space();
        let t = space.transform(&Point::new(vec![0.49, 0.7]));
        assert_eq!(t.coords(), &[0.0, 0.7]);
    }

    #[test]
    fn transform_is_identity_on_integral_values() {
        let space = int_cont_space();
        let x = Point::new(vec![2.0, 0.3]);
        assert_eq!(space.transform(&x), x);
    }

    #[test]
    fn transform_rounds_half_away_from_zero() {
        let space = SearchSpace::new(vec![Variable::integer(0, 2).unwrap()]).unwrap();
        assert_eq!(space.transform(&Point::new(vec![0.5])).coords(), &[1.0]);
        let signed = SearchSpace::new(vec![Variable::integer(-2, 2).unwrap()]).unwrap();
        assert_eq!(signed.transform(&Point::new(vec![-0.5])).coords(), &[-1.0]);
    }

    #[test]
    #[should_panic(expected = "coordinates")]
    fn transform_rejects_dimension_mismatch() {
        int_cont_space().transform(&Point::new(vec![0.5]));
    }

    #[test]
    fn sample_uniform_singleton_integer_range() {
        let space = SearchSpace::new(vec![Variable::integer(0, 0).unwrap()]).unwrap();
        let mut rng = stream_from_seed(0);
        assert_eq!(space.sample_uniform(&mut rng).coords(), &[0.0]);
    }

    #[test]
    fn sample_uniform_stays_in_bounds() {
        let space = SearchSpace::new(vec![Variable::continuous(0.0, 1.0).unwrap()]).unwrap();
        let mut rng = stream_from_seed(1);
        for _ in 0..100 {
            let x = space.sample_uniform(&mut rng);
            assert!(space.contains(&x));
        }
    }

    #[test]
    fn sample_uniform_integer_frequencies_match_uniform_law() {
        // 1e5 draws over {0..4}: each frequency 0.2 +/- 0.01.
        let space = SearchSpace::new(vec![Variable::integer(0, 4).unwrap()]).unwrap();
        let mut rng = stream_from_seed(42);
        let mut counts = [0usize; 5];
        let n = 100_000;
        for _ in 0..n {
            let x = space.sample_uniform(&mut rng);
            let z = x.coords()[0];
            assert_eq!(z, z.round(), "integer draws must be exact integers");
            counts[z as usize] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - 0.2).abs() <= 0.01,
                "frequency {freq} departs from 0.2"
            );
        }
    }

    #[test]
    fn grid_integer_only() {
        let space = SearchSpace::new(vec![Variable::integer(0, 2).unwrap()]).unwrap();
        let grid = space.enumerate_grid(7).unwrap();
        let coords: Vec<f64> = grid.iter().map(|p| p.coords()[0]).collect();
        assert_eq!(coords, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn grid_continuous_includes_endpoints() {
        let space = SearchSpace::new(vec![Variable::continuous(0.0, 1.0).unwrap()]).unwrap();
        let grid = space.enumerate_grid(3).unwrap();
        let coords: Vec<f64> = grid.iter().map(|p| p.coords()[0]).collect();
        assert_eq!(coords, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_is_row_major_in_variable_order() {
        let space = SearchSpace::new(vec![
            Variable::integer(0, 1).unwrap(),
            Variable::continuous(0.0, 1.0).unwrap(),
        ])
        .unwrap();
        let grid = space.enumerate_grid(2).unwrap();
        let coords: Vec<&[f64]> = grid.iter().map(Point::coords).collect();
        assert_eq!(
            coords,
            vec![&[0.0, 0.0][..], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]
        );
    }

    #[test]
    fn grid_cap_is_enforced() {
        let space = SearchSpace::new(vec![
            Variable::continuous(0.0, 1.0).unwrap(),
            Variable::continuous(0.0, 1.0).unwrap(),
            Variable::continuous(0.0, 1.0).unwrap(),
        ])
        .unwrap();
        let err = space.enumerate_grid(40).unwrap_err();
        assert_eq!(
            err,
            SpaceError::GridTooLarge {
                size: 64_000,
                cap: DEFAULT_GRID_CAP
            }
        );
    }

    #[test]
    fn grid_points_are_fixed_points_of_transform() {
        let space = int_cont_space();
        for p in space.enumerate_grid(5).unwrap() {
            assert_eq!(space.transform(&p), p);
        }
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        assert!(Variable::continuous(1.0, 1.0).is_err());
        assert!(Variable::continuous(2.0, 1.0).is_err());
        assert!(Variable::integer(3, 2).is_err());
        assert!(SearchSpace::new(vec![]).is_err());
    }
}
