//! Finite-support probability measures stored in the log domain.
//!
//! Every measure in the crate lives on a shared [`ModelSpace`]. Points that
//! carry no mass keep their slot with a log-weight of `-inf`, so supports stay
//! index-aligned along a chain and Radon–Nikodym derivatives are positional.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::wire::MeasureWire;

/// Tolerance on `|logsumexp|` for a measure to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Ordered, duplicate-free set of model vectors in `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpace {
    dim: usize,
    points: Vec<Vec<f64>>,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) => continue,
            Some(ord) => return ord,
            None => unreachable!("model points are finite"),
        }
    }
    a.len().cmp(&b.len())
}

impl ModelSpace {
    /// Builds a space from points that are already in canonical order.
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        Self::validate_points(dim, &points)?;
        for (i, pair) in points.windows(2).enumerate() {
            if lex_cmp(&pair[0], &pair[1]) != Ordering::Less {
                return Err(Error::InvalidSpace(format!(
                    "points {i} and {} are not strictly increasing in lexicographic order",
                    i + 1
                )));
            }
        }
        Ok(Self { dim, points })
    }

    /// Sorts and deduplicates `points` into canonical order.
    pub fn canonical(dim: usize, mut points: Vec<Vec<f64>>) -> Result<Self> {
        Self::validate_points(dim, &points)?;
        points.sort_by(|a, b| lex_cmp(a, b));
        points.dedup_by(|a, b| lex_cmp(a, b) == Ordering::Equal);
        Ok(Self { dim, points })
    }

    /// `n` points `0, 1, ..., n-1` on the real line. Handy for explicit risk tables.
    pub fn indexed(n: usize) -> Result<Self> {
        Self::new(1, (0..n).map(|i| vec![i as f64]).collect())
    }

    /// Tensor grid; axis 0 varies slowest so the result is already canonical.
    pub fn grid(lower: &[f64], upper: &[f64], resolution: &[usize]) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || upper.len() != dim || resolution.len() != dim {
            return Err(Error::InvalidSpace(
                "grid lower, upper and resolution must share a nonzero length".into(),
            ));
        }
        let mut axes = Vec::with_capacity(dim);
        for a in 0..dim {
            let (lo, hi, n) = (lower[a], upper[a], resolution[a]);
            if !lo.is_finite() || !hi.is_finite() || n == 0 {
                return Err(Error::InvalidSpace(format!("axis {a}: bad bounds or resolution")));
            }
            let axis: Vec<f64> = if n == 1 {
                if lo != hi {
                    return Err(Error::InvalidSpace(format!(
                        "axis {a}: resolution 1 requires lower == upper"
                    )));
                }
                vec![lo]
            } else {
                if lo >= hi {
                    return Err(Error::InvalidSpace(format!("axis {a}: lower must be < upper")));
                }
                let step = (hi - lo) / (n - 1) as f64;
                (0..n)
                    .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
                    .collect()
            };
            axes.push(axis);
        }
        let total: usize = axes.iter().map(Vec::len).product();
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            points.push(idx.iter().enumerate().map(|(a, &i)| axes[a][i]).collect());
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < axes[a].len() {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self::new(dim, points)
    }

    fn validate_points(dim: usize, points: &[Vec<f64>]) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidSpace("dim must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidSpace("at least one point is required".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpace(format!("point {i} has a non-finite coordinate")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }
}

/// Numerically stable `log Σ exp(x_i)`.
///
/// Returns `-inf` when every term is `-inf` and `+inf` if any term is `+inf`.
/// Terms are summed in index order after a max shift; every normalizer in the
/// crate goes through this function so the summation order is shared.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() || max.is_nan() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Probability measure over a finite [`ModelSpace`], stored as log-weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MeasureWire", try_from = "MeasureWire")]
pub struct DiscreteMeasure {
    space: Arc<ModelSpace>,
    log_weights: Vec<f64>,
    normalized: bool,
}

impl DiscreteMeasure {
    /// Wraps raw log-weights. The normalized flag is set when
    /// `|logsumexp| <= NORMALIZATION_TOL`.
    pub fn from_log_weights(space: Arc<ModelSpace>, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != space.len() {
            return Err(Error::LengthMismatch(format!(
                "{} log-weights for {} support points",
                log_weights.len(),
                space.len()
            )));
        }
        if let Some(i) = log_weights.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::InvalidMeasure(format!("log-weight {i} is NaN or +inf")));
        }
        if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(Error::EmptySupport);
        }
        let normalized = logsumexp(&log_weights).abs() <= NORMALIZATION_TOL;
        Ok(Self {
            space,
            log_weights,
            normalized,
        })
    }

    /// From nonnegative masses; they are normalized.
    pub fn from_probs(space: Arc<ModelSpace>, probs: &[f64]) -> Result<Self> {
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidMeasure(format!("mass {i} is negative or non-finite")));
        }
        let lw = probs.iter().map(|p| p.ln()).collect();
        Self::from_log_weights(space, lw)?.normalize()
    }

    pub fn uniform(space: Arc<ModelSpace>) -> Self {
        let w = -(space.len() as f64).ln();
        let n = space.len();
        Self {
            space,
            log_weights: vec![w; n],
            normalized: true,
        }
    }

    pub fn point_mass(space: Arc<ModelSpace>, index: usize) -> Result<Self> {
        if index >= space.len() {
            return Err(Error::LengthMismatch(format!(
                "index {index} outside a space of {} points",
                space.len()
            )));
        }
        let mut lw = vec![f64::NEG_INFINITY; space.len()];
        lw[index] = 0.0;
        Self::from_log_weights(space, lw)
    }

    pub fn space(&self) -> &Arc<ModelSpace> {
        &self.space
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Indices with positive mass.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.log_weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > f64::NEG_INFINITY)
            .map(|(i, _)| i)
    }

    pub fn in_support(&self, i: usize) -> bool {
        self.log_weights[i] > f64::NEG_INFINITY
    }

    pub fn log_mass(&self) -> f64 {
        logsumexp(&self.log_weights)
    }

    /// Shifts log-weights by `-logsumexp`. Already-normalized input is returned unchanged.
    pub fn normalize(&self) -> Result<Self> {
        if self.normalized {
            return Ok(self.clone());
        }
        self.renormalize()
    }

    /// Like [`normalize`](Self::normalize) but always applies the shift.
    pub fn renormalize(&self) -> Result<Self> {
        let lse = logsumexp(&self.log_weights);
        if lse == f64::NEG_INFINITY {
            return Err(Error::EmptySupport);
        }
        if !lse.is_finite() {
            return Err(Error::CumulantDiverged { value: lse });
        }
        let log_weights = self.log_weights.iter().map(|w| w - lse).collect();
        Ok(Self {
            space: Arc::clone(&self.space),
            log_weights,
            normalized: true,
        })
    }

    /// `Σ p_i f(θ_i)` over the support.
    pub fn expect(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch(format!(
                "{} values for {} support points",
                values.len(),
                self.len()
            )));
        }
        Ok(self.support().map(|i| self.log_weights[i].exp() * values[i]).sum())
    }

    /// Convex mixture `α·p + (1−α)·q`.
    pub fn mix(p: &Self, q: &Self, alpha: f64) -> Result<Self> {
        ensure_same_space(p, q)?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidMeasure(format!("mixture weight {alpha} outside [0, 1]")));
        }
        let probs: Vec<f64> = p
            .probs()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        Self::from_probs(Arc::clone(&p.space), &probs)
    }
}

fn ensure_same_space(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<()> {
    if Arc::ptr_eq(&p.space, &q.space) || p.space == q.space {
        Ok(())
    } else {
        Err(Error::SupportMismatch("measures live on different model spaces".into()))
    }
}

fn ensure_normalized(m: &DiscreteMeasure, what: &str) -> Result<()> {
    if m.normalized {
        Ok(())
    } else {
        Err(Error::InvalidMeasure(format!("{what} must be normalized")))
    }
}

fn ensure_abs_continuous(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<()> {
    match p.support().find(|&i| !q.in_support(i)) {
        Some(index) => Err(Error::NotAbsolutelyContinuous { index }),
        None => Ok(()),
    }
}

pub fn normalize(m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    m.normalize()
}

/// Relative entropy `D(p‖q)` in nats.
pub fn kl_divergence(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<f64> {
    ensure_same_space(p, q)?;
    ensure_normalized(p, "p")?;
    ensure_normalized(q, "q")?;
    ensure_abs_continuous(p, q)?;
    let kl: f64 = p
        .support()
        .map(|i| {
            let lp = p.log_weights[i];
            lp.exp() * (lp - q.log_weights[i])
        })
        .sum();
    // Roundoff can push a zero divergence just below 0.
    Ok(kl.max(0.0))
}

/// `log dp/dq` over all points: `-inf` where `p` has no mass or `q` has none.
pub fn log_rn_derivative(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<Vec<f64>> {
    ensure_same_space(p, q)?;
    ensure_abs_continuous(p, q)?;
    Ok(p.log_weights
        .iter()
        .zip(&q.log_weights)
        .map(|(&lp, &lq)| {
            if lq == f64::NEG_INFINITY || lp == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lp - lq
            }
        })
        .collect())
}

/// `dp/dq` evaluated pointwise; entries off `support(q)` are reported as 0.
pub fn rn_derivative(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<Vec<f64>> {
    Ok(log_rn_derivative(p, q)?.into_iter().map(f64::exp).collect())
}

/// Normalized measure with `log q_i + log_factor_i`, the one primitive every
/// Gibbs measure is built from.
pub fn exponential_tilt(q: &DiscreteMeasure, log_factor: &[f64]) -> Result<DiscreteMeasure> {
    if log_factor.len() != q.len() {
        return Err(Error::LengthMismatch(format!(
            "{} tilt factors for {} support points",
            log_factor.len(),
            q.len()
        )));
    }
    let mut tilted = Vec::with_capacity(q.len());
    for (i, (&lq, &f)) in q.log_weights.iter().zip(log_factor).enumerate() {
        if lq == f64::NEG_INFINITY {
            tilted.push(f64::NEG_INFINITY);
            continue;
        }
        if f.is_nan() || f == f64::INFINITY {
            return Err(Error::InvalidMeasure(format!("tilt factor {i} is NaN or +inf")));
        }
        tilted.push(lq + f);
    }
    let lse = logsumexp(&tilted);
    if lse == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    if !lse.is_finite() {
        return Err(Error::CumulantDiverged { value: lse });
    }
    for w in &mut tilted {
        *w -= lse;
    }
    Ok(DiscreteMeasure {
        space: Arc::clone(&q.space),
        log_weights: tilted,
        normalized: true,
    })
}

/// `max_i |log p_i − log q_i|` over a common support.
pub fn sup_log_distance(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<f64> {
    ensure_same_space(p, q)?;
    let mut sup = 0.0f64;
    for (i, (&a, &b)) in p.log_weights.iter().zip(&q.log_weights).enumerate() {
        match (a == f64::NEG_INFINITY, b == f64::NEG_INFINITY) {
            (true, true) => {}
            (false, false) => sup = sup.max((a - b).abs()),
            _ => {
                return Err(Error::SupportMismatch(format!(
                    "supports differ at point {i}"
                )))
            }
        }
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> Arc<ModelSpace> {
        Arc::new(ModelSpace::indexed(2).unwrap())
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn space_rejects_unsorted_and_duplicates() {
        assert!(ModelSpace::new(1, vec![vec![1.0], vec![0.0]]).is_err());
        assert!(ModelSpace::new(1, vec![vec![1.0], vec![1.0]]).is_err());
        assert!(ModelSpace::new(0, vec![vec![]]).is_err());
        assert!(ModelSpace::new(1, vec![]).is_err());
        let s = ModelSpace::canonical(2, vec![vec![1.0, 0.0], vec![0.0, 5.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(s.points(), &[vec![0.0, 5.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn grid_is_canonical() {
        let g = ModelSpace::grid(&[0.0, -1.0], &[1.0, 1.0], &[2, 3]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g.point(0), &[0.0, -1.0]);
        assert_eq!(g.point(1), &[0.0, 0.0]);
        assert_eq!(g.point(5), &[1.0, 1.0]);
    }

    #[test]
    fn logsumexp_edge_cases() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_close(logsumexp(&[0.0, 0.0]), 2f64.ln(), 1e-15);
        assert_close(logsumexp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), 1e-12);
        assert_close(logsumexp(&[-1000.0, f64::NEG_INFINITY]), -1000.0, 0.0);
    }

    #[test]
    fn normalize_examples() {
        let m = DiscreteMeasure::from_log_weights(two(), vec![0.0, 0.0]).unwrap();
        let n = m.normalize().unwrap();
        assert_close(n.log_weights()[0], 0.5f64.ln(), 1e-15);
        assert_close(n.log_weights()[1], 0.5f64.ln(), 1e-15);
        assert!(n.is_normalized());

        let again = n.normalize().unwrap();
        assert_eq!(again.log_weights(), n.log_weights());

        let m = DiscreteMeasure::from_log_weights(two(), vec![0.0, -1.0]).unwrap();
        let n = m.normalize().unwrap();
        assert_close(n.log_weights()[0], -0.313262, 1e-6);
        assert_close(n.log_weights()[1], -1.313262, 1e-6);
        // input untouched
        assert_eq!(m.log_weights(), &[0.0, -1.0]);
    }

    #[test]
    fn all_zero_mass_is_empty_support() {
        let r = DiscreteMeasure::from_log_weights(two(), vec![f64::NEG_INFINITY; 2]);
        assert!(matches!(r, Err(Error::EmptySupport)));
        let r = DiscreteMeasure::from_log_weights(two(), vec![f64::NAN, 0.0]);
        assert!(matches!(r, Err(Error::InvalidMeasure(_))));
    }

    #[test]
    fn kl_examples() {
        let q = DiscreteMeasure::uniform(two());
        assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
        let p = DiscreteMeasure::from_probs(two(), &[0.731059, 0.268941]).unwrap();
        assert_close(kl_divergence(&p, &q).unwrap(), 0.110944, 2e-6);
        let pm = DiscreteMeasure::point_mass(two(), 0).unwrap();
        assert_close(kl_divergence(&pm, &q).unwrap(), 2f64.ln(), 1e-15);
    }

    #[test]
    fn kl_errors() {
        let q = DiscreteMeasure::point_mass(two(), 0).unwrap();
        let p = DiscreteMeasure::uniform(two());
        assert!(matches!(
            kl_divergence(&p, &q),
            Err(Error::NotAbsolutelyContinuous { index: 1 })
        ));
        let other = DiscreteMeasure::uniform(Arc::new(ModelSpace::indexed(3).unwrap()));
        assert!(matches!(kl_divergence(&p, &other), Err(Error::SupportMismatch(_))));
    }

    #[test]
    fn rn_examples() {
        let q = DiscreteMeasure::uniform(two());
        assert_eq!(rn_derivative(&q, &q).unwrap(), vec![1.0, 1.0]);
        let p = DiscreteMeasure::from_probs(two(), &[0.731059, 0.268941]).unwrap();
        let rn = rn_derivative(&p, &q).unwrap();
        assert_close(rn[0], 1.462118, 1e-6);
        assert_close(rn[1], 0.537882, 1e-6);
        let pm = DiscreteMeasure::point_mass(two(), 0).unwrap();
        assert_eq!(rn_derivative(&pm, &q).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn tilt_examples() {
        let q = DiscreteMeasure::uniform(two());
        let t = exponential_tilt(&q, &[3.5, 3.5]).unwrap();
        assert!(sup_log_distance(&t, &q).unwrap() <= 1e-15);

        let t = exponential_tilt(&q, &[0.0, -1.0]).unwrap();
        let p = t.probs();
        assert_close(p[0], 0.731059, 1e-6);
        assert_close(p[1], 0.268941, 1e-6);

        let t = exponential_tilt(&q, &[f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(t.log_weights(), &[f64::NEG_INFINITY, 0.0]);

        let r = exponential_tilt(&q, &[f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert!(matches!(r, Err(Error::EmptySupport)));
    }

    #[test]
    fn sup_log_distance_examples() {
        let q = DiscreteMeasure::uniform(two());
        assert_eq!(sup_log_distance(&q, &q).unwrap(), 0.0);
        let p = DiscreteMeasure::from_probs(two(), &[0.731059, 0.268941]).unwrap();
        // The larger deviation sits on the second point: |log(0.268941 / 0.5)|.
        assert_close(sup_log_distance(&p, &q).unwrap(), 0.620116, 1e-6);

        let a = DiscreteMeasure::from_log_weights(two(), vec![0.3, -0.2]).unwrap().normalize().unwrap();
        let b = DiscreteMeasure::from_log_weights(two(), vec![0.3 + 1e-10, -0.2]).unwrap().normalize().unwrap();
        assert!(sup_log_distance(&a, &b).unwrap() <= 2e-10);

        let pm = DiscreteMeasure::point_mass(two(), 0).unwrap();
        assert!(matches!(sup_log_distance(&pm, &q), Err(Error::SupportMismatch(_))));
    }

    #[test]
    fn mixture_is_normalized() {
        let p = DiscreteMeasure::point_mass(two(), 0).unwrap();
        let q = DiscreteMeasure::uniform(two());
        let m = DiscreteMeasure::mix(&p, &q, 0.25).unwrap();
        assert_close(m.probs()[0], 0.25 + 0.75 * 0.5, 1e-15);
        assert!(m.is_normalized());
    }
}
