//! Closed-form Gibbs measures for squared-error linear loss under a Gaussian reference.
//!
//! With `ℓ(x, y, θ) = (y − xᵀθ)²` and mean empirical risk, the tilt
//! `exp(−L/λ)` is itself Gaussian in `θ`, so every client's measure stays
//! Gaussian and nesting reduces to adding precisions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gibbs::gibbs_posterior;
use crate::measure::{DiscreteMeasure, ModelSpace};
use crate::risk::{aggregate, risk_vector, Dataset, LossSpec};

pub const GAUSSIAN_WIRE_VERSION: u32 = 1;
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Posterior mass outside a cross-validation grid above which the grid is rejected.
pub const CLIP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "GaussianWire", try_from = "GaussianWire")]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidMeasure("gaussian dimension must be positive".into()));
        }
        if precision.nrows() != d || precision.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: precision.nrows().max(precision.ncols()),
            });
        }
        if mean.iter().chain(precision.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("gaussian parameters must be finite".into()));
        }
        let scale = precision.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (precision[(i, j)] - precision[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NonSpd(format!("precision is not symmetric at ({i}, {j})")));
                }
            }
        }
        if precision.clone().cholesky().is_none() {
            return Err(Error::NonSpd("precision is not positive definite".into()));
        }
        Ok(Self { mean, precision })
    }

    /// Isotropic `N(mean, (1/tau)·I)`.
    pub fn isotropic(mean: Vec<f64>, tau: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(DVector::from_vec(mean), DMatrix::identity(d, d) * tau)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision
            .clone()
            .cholesky()
            .expect("validated on construction")
            .inverse()
    }

    /// Marginal standard deviations.
    pub fn std_devs(&self) -> Vec<f64> {
        let cov = self.covariance();
        (0..self.dim()).map(|i| cov[(i, i)].sqrt()).collect()
    }

    /// Log-density up to an additive constant.
    pub fn log_density_unnormalized(&self, theta: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(theta) - &self.mean;
        -0.5 * diff.dot(&(&self.precision * &diff))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("gaussian serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::ser("gaussian", e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianWire {
    version: u32,
    dim: usize,
    mean: Vec<f64>,
    /// Row-major.
    precision: Vec<Vec<f64>>,
}

impl From<GaussianMeasure> for GaussianWire {
    fn from(g: GaussianMeasure) -> Self {
        let d = g.dim();
        Self {
            version: GAUSSIAN_WIRE_VERSION,
            dim: d,
            mean: g.mean.iter().copied().collect(),
            precision: (0..d).map(|i| g.precision.row(i).iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<GaussianWire> for GaussianMeasure {
    type Error = Error;

    fn try_from(w: GaussianWire) -> Result<Self> {
        if w.version != GAUSSIAN_WIRE_VERSION {
            return Err(Error::ser("version", format!("unsupported version {}", w.version)));
        }
        if w.mean.len() != w.dim || w.precision.len() != w.dim || w.precision.iter().any(|r| r.len() != w.dim) {
            return Err(Error::ser("dim", "mean and precision must match dim"));
        }
        let flat: Vec<f64> = w.precision.into_iter().flatten().collect();
        Self::new(DVector::from_vec(w.mean), DMatrix::from_row_slice(w.dim, w.dim, &flat))
    }
}

/// Gibbs measure of `q` tilted by the mean squared-error risk of `ds` at temperature `lambda`.
///
/// `precision' = P + (2/(λn)) Σ x xᵀ`, `mean' = precision'^{-1} (P m + (2/(λn)) Σ y x)`.
pub fn gaussian_gibbs(ds: &Dataset, q: &GaussianMeasure, lambda: f64) -> Result<GaussianMeasure> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::config("lambda", "must be positive and finite"));
    }
    let d = q.dim();
    if ds.pattern_dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: ds.pattern_dim(),
        });
    }
    let c = 2.0 / (lambda * ds.n() as f64);
    let mut gram = DMatrix::zeros(d, d);
    let mut moment = DVector::zeros(d);
    for p in ds.points() {
        let x = DVector::from_column_slice(&p.x);
        gram += &x * x.transpose();
        moment += x * p.y;
    }
    let precision = &q.precision + gram * c;
    let rhs = &q.precision * &q.mean + moment * c;
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonSpd("posterior precision lost definiteness".into()))?;
    let mean = chol.solve(&rhs);
    Ok(GaussianMeasure { mean, precision })
}

/// Sequential nesting: client `k` uses client `k−1`'s measure as reference.
pub fn gaussian_chain(datasets: &[Dataset], lambdas: &[f64], q1: &GaussianMeasure) -> Result<GaussianMeasure> {
    if datasets.is_empty() {
        return Err(Error::EmptyInput("no datasets".into()));
    }
    if datasets.len() != lambdas.len() {
        return Err(Error::LengthMismatch(format!(
            "{} datasets but {} lambdas",
            datasets.len(),
            lambdas.len()
        )));
    }
    let mut current = q1.clone();
    for (k, (ds, &lambda)) in datasets.iter().zip(lambdas).enumerate() {
        current = gaussian_gibbs(ds, &current, lambda).map_err(|e| e.at_client(k + 1))?;
    }
    Ok(current)
}

/// Single Gibbs step on the pooled dataset at `lambda0`.
pub fn gaussian_pooled(pooled: &Dataset, lambda0: f64, q1: &GaussianMeasure) -> Result<GaussianMeasure> {
    gaussian_gibbs(pooled, q1, lambda0)
}

/// Convenience: aggregates `datasets` first.
pub fn gaussian_pooled_from(datasets: &[Dataset], lambda0: f64, q1: &GaussianMeasure) -> Result<GaussianMeasure> {
    gaussian_pooled(&aggregate(datasets)?, lambda0, q1)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterGap {
    /// Spectral norm of the precision difference.
    pub precision: f64,
    /// Max norm of the mean difference.
    pub mean: f64,
}

impl ParameterGap {
    pub fn max(&self) -> f64 {
        self.precision.max(self.mean)
    }
}

pub fn parameter_gap(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<ParameterGap> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(ParameterGap {
        precision: spectral_norm(&(&a.precision - &b.precision)),
        mean: (&a.mean - &b.mean).amax(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl GridSpec {
    /// Largest spacing over the axes.
    pub fn spacing(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(&self.resolution)
            .map(|((lo, hi), &n)| if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 })
            .fold(0.0, f64::max)
    }
}

/// Discretizes a Gaussian reference on a grid (renormalized).
pub fn discretize(q: &GaussianMeasure, space: Arc<ModelSpace>) -> Result<DiscreteMeasure> {
    if space.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            found: space.dim(),
        });
    }
    let lw = space.points().iter().map(|p| q.log_density_unnormalized(p)).collect();
    DiscreteMeasure::from_log_weights(space, lw)?.renormalize()
}

/// Gaussian mass outside the box, bounded by the sum of the per-axis marginal tails.
pub fn clipped_mass(g: &GaussianMeasure, grid: &GridSpec) -> f64 {
    let phi = |z: f64| 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let sd = g.std_devs();
    (0..g.dim())
        .map(|a| {
            let mu = g.mean[a];
            phi((grid.lower[a] - mu) / sd[a]) + (1.0 - phi((grid.upper[a] - mu) / sd[a]))
        })
        .sum()
}

/// Max per-axis error between the posterior mean of the discrete backend on
/// `grid` and the closed-form posterior mean.
pub fn cross_validate(ds: &Dataset, q: &GaussianMeasure, lambda: f64, grid: &GridSpec) -> Result<f64> {
    if q.dim() > 2 {
        return Err(Error::InvalidSpace("cross-validation grids support d ≤ 2".into()));
    }
    let exact = gaussian_gibbs(ds, q, lambda)?;
    let clipped = clipped_mass(&exact, grid);
    if clipped > CLIP_TOL {
        return Err(Error::GridTooCoarse { clipped_mass: clipped });
    }
    let space = Arc::new(ModelSpace::grid(&grid.lower, &grid.upper, &grid.resolution)?);
    let reference = discretize(q, space.clone())?;
    let risks = risk_vector(ds, &space, LossSpec::SquaredError)?;
    let posterior = gibbs_posterior(&risks, &reference, lambda)?.measure;
    let probs = posterior.probs();
    let mut err = 0.0f64;
    for a in 0..q.dim() {
        let grid_mean: f64 = space.points().iter().zip(&probs).map(|(p, w)| w * p[a]).sum();
        err = err.max((grid_mean - exact.mean[a]).abs());
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::DataPoint;

    fn ds(points: &[(&[f64], f64)]) -> Dataset {
        Dataset::new(1, points.iter().map(|(x, y)| DataPoint::new(x.to_vec(), *y)).collect()).unwrap()
    }

    fn std_prior(d: usize) -> GaussianMeasure {
        GaussianMeasure::isotropic(vec![0.0; d], 1.0).unwrap()
    }

    #[test]
    fn one_point_hand_example() {
        let g = gaussian_gibbs(&ds(&[(&[1.0], 0.0)]), &std_prior(1), 2.0).unwrap();
        assert_eq!(g.precision()[(0, 0)], 2.0);
        assert_eq!(g.mean()[0], 0.0);
    }

    #[test]
    fn completing_the_square_d1() {
        // Fit a parabola through the unnormalized log posterior at three points.
        let data = ds(&[(&[1.0], 1.0), (&[2.0], 1.5), (&[-0.5], 0.3)]);
        let prior = GaussianMeasure::isotropic(vec![0.4], 1.7).unwrap();
        let lambda = 0.8;
        let log_post = |t: f64| {
            let risk: f64 = data.points().iter().map(|p| (p.y - p.x[0] * t).powi(2)).sum::<f64>() / 3.0;
            prior.log_density_unnormalized(&[t]) - risk / lambda
        };
        let (a, b, c) = (log_post(-1.0), log_post(0.0), log_post(1.0));
        let second = a - 2.0 * b + c;
        let first = (c - a) / 2.0;
        let precision = -second;
        let mean = first / precision;
        let g = gaussian_gibbs(&data, &prior, lambda).unwrap();
        assert!((g.precision()[(0, 0)] - precision).abs() <= 1e-12);
        assert!((g.mean()[0] - mean).abs() <= 1e-12);
    }

    #[test]
    fn zero_design_keeps_prior() {
        let prior = GaussianMeasure::new(
            DVector::from_vec(vec![0.3, -1.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let g = gaussian_gibbs(&ds(&[(&[0.0, 0.0], 4.0), (&[0.0, 0.0], -1.0)]), &prior, 0.3).unwrap();
        assert_eq!(g.precision(), prior.precision());
        assert!((g.mean() - prior.mean()).amax() <= 1e-15);
    }

    #[test]
    fn large_lambda_recovers_prior() {
        let prior = GaussianMeasure::isotropic(vec![0.5, -0.5], 2.0).unwrap();
        let g = gaussian_gibbs(&ds(&[(&[1.0, 2.0], 3.0)]), &prior, 1e12).unwrap();
        let gap = parameter_gap(&g, &prior).unwrap();
        assert!(gap.max() <= 1e-10);
    }

    #[test]
    fn chain_matches_pooled_under_scaling() {
        let a = ds(&[(&[1.0, 0.2], 0.5), (&[-0.3, 1.1], -0.2), (&[0.7, 0.7], 1.0)]);
        let b = Dataset::new(
            2,
            vec![
                DataPoint::new(vec![0.1, -1.0], 0.3),
                DataPoint::new(vec![2.0, 0.5], 1.7),
                DataPoint::new(vec![-1.2, 0.4], -0.9),
                DataPoint::new(vec![0.5, 0.5], 0.0),
                DataPoint::new(vec![0.3, -0.6], 0.8),
            ],
        )
        .unwrap();
        let q1 = std_prior(2);
        let n0 = 8.0;
        let lambdas = [1.0 * n0 / 3.0, 1.0 * n0 / 5.0];
        let datasets = [a, b];
        let chain = gaussian_chain(&datasets, &lambdas, &q1).unwrap();
        let pooled = gaussian_pooled_from(&datasets, 1.0, &q1).unwrap();
        assert!(parameter_gap(&chain, &pooled).unwrap().max() <= 1e-9);

        // Oracle: direct summation of per-point rank-one terms.
        let mut p = q1.precision().clone();
        for p_ in datasets.iter().flat_map(|d| d.points()) {
            let x = DVector::from_column_slice(&p_.x);
            p += &x * x.transpose() * (2.0 / n0);
        }
        assert!(spectral_norm(&(chain.precision() - p)) <= 1e-12);

        let unscaled = gaussian_chain(&datasets, &[1.0, 1.0], &q1).unwrap();
        assert!(parameter_gap(&unscaled, &pooled).unwrap().precision > 1e-3);
    }

    #[test]
    fn single_client_chain_is_pooled() {
        let a = ds(&[(&[1.0], 0.5), (&[-0.3], -0.2)]);
        let q1 = std_prior(1);
        let chain = gaussian_chain(std::slice::from_ref(&a), &[0.7], &q1).unwrap();
        let pooled = gaussian_pooled(&a, 0.7, &q1).unwrap();
        assert_eq!(chain, pooled);
    }

    #[test]
    fn validation() {
        assert!(GaussianMeasure::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(GaussianMeasure::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0])).is_err());
        assert!(matches!(
            gaussian_gibbs(&ds(&[(&[1.0, 2.0], 0.0)]), &std_prior(1), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let g = GaussianMeasure::new(
            DVector::from_vec(vec![0.1, 1.0 / 3.0]),
            DMatrix::from_row_slice(2, 2, &[2.0 / 7.0, 0.01, 0.01, 1e-3 + 0.1]),
        )
        .unwrap();
        let s = g.to_json();
        assert!(s.starts_with("{\"version\":1,\"dim\":2,"));
        let back = GaussianMeasure::from_json(&s).unwrap();
        assert_eq!(back, g);
        assert!(GaussianMeasure::from_json(&s.replace("\"version\":1", "\"version\":2")).is_err());
    }

    fn canonical() -> (Dataset, GaussianMeasure) {
        (ds(&[(&[1.0], 1.0), (&[2.0], 1.5), (&[-0.5], 0.3)]), std_prior(1))
    }

    #[test]
    fn canonical_posterior() {
        let (data, prior) = canonical();
        let g = gaussian_gibbs(&data, &prior, 1.0).unwrap();
        assert!((g.precision()[(0, 0)] - 4.5).abs() <= 1e-15);
        assert!((g.mean()[0] - 3.85 * 2.0 / 3.0 / 4.5).abs() <= 1e-15);
    }

    #[test]
    fn grid_error_within_spacing() {
        let (data, prior) = canonical();
        let grid = GridSpec { lower: vec![-4.0], upper: vec![5.0], resolution: vec![65] };
        let err = cross_validate(&data, &prior, 1.0, &grid).unwrap();
        assert!(err <= grid.spacing());
    }

    #[test]
    fn prior_recovery_on_grid() {
        let (data, prior) = canonical();
        let grid = GridSpec { lower: vec![-7.0], upper: vec![7.0], resolution: vec![57] };
        assert!(cross_validate(&data, &prior, 1e9, &grid).unwrap() <= grid.spacing());
    }

    #[test]
    fn narrow_grid_is_too_coarse() {
        let (data, prior) = canonical();
        let grid = GridSpec { lower: vec![0.0], upper: vec![1.0], resolution: vec![11] };
        assert!(matches!(cross_validate(&data, &prior, 1.0, &grid), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn two_dimensional_grid() {
        let data = ds(&[(&[1.0, 0.0], 0.5), (&[0.3, 1.0], -0.4), (&[1.0, 1.0], 0.2)]);
        let prior = std_prior(2);
        let grid = GridSpec { lower: vec![-5.0, -5.0], upper: vec![5.0, 5.0], resolution: vec![61, 61] };
        assert!(cross_validate(&data, &prior, 1.0, &grid).unwrap() <= grid.spacing());
    }
}
