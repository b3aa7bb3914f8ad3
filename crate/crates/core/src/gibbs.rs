//! Gibbs measures: the solutions of relative-entropy regularized ERM.
//!
//! For a reference `Q`, risks `L` and regularization `λ > 0` the Gibbs measure
//! has log-density `−L(θ)/λ − K(−1/λ)` with respect to `Q`, where
//! `K(t) = log ∫ exp(t·L) dQ` is the cumulant generating function of the risk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{exponential_tilt, kl_divergence, logsumexp, DiscreteMeasure};
use crate::risk::{risk_vector, Dataset, LossSpec};

/// Lower end of the `λ` search bracket.
pub const LAMBDA_MIN: f64 = 1e-8;
/// Upper end of the `λ` search bracket.
pub const LAMBDA_MAX: f64 = 1e8;
const BISECTION_MAX_ITER: usize = 200;
const TIE_TOL: f64 = 1e-12;
const MONOTONE_SLACK: f64 = 1e-12;
const LOG_LAMBDA_RESOLUTION: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsResult {
    pub measure: DiscreteMeasure,
    pub lambda: f64,
    /// `K(−1/λ)`, the log-normalizer.
    pub cumulant_at_minus_inv_lambda: f64,
    /// Realized radius `D(P‖Q)`.
    pub kl_to_reference: f64,
    pub expected_risk_under_measure: f64,
}

/// `C_k` for client `k` (1-based, `k ≥ 2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConstant {
    pub k: usize,
    pub value: f64,
}

fn check_risks(risks: &[f64], q: &DiscreteMeasure) -> Result<()> {
    if risks.len() != q.len() {
        return Err(Error::LengthMismatch(format!(
            "{} risks for {} support points",
            risks.len(),
            q.len()
        )));
    }
    if let Some(i) = risks.iter().position(|r| !r.is_finite()) {
        return Err(Error::InvalidMeasure(format!("risk {i} is not finite")));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::config("lambda", format!("must be positive and finite, got {lambda}")))
    }
}

fn scaled(risks: &[f64], t: f64) -> Vec<f64> {
    risks.iter().map(|r| t * r).collect()
}

fn tilted_log_weights(q: &DiscreteMeasure, log_factor: &[f64]) -> Vec<f64> {
    q.log_weights()
        .iter()
        .zip(log_factor)
        .map(|(&lq, &f)| if lq == f64::NEG_INFINITY { lq } else { lq + f })
        .collect()
}

/// `K(t) = log Σ_i q_i exp(t·risks_i)`; may be `±inf`, callers check.
pub fn cumulant(risks: &[f64], q: &DiscreteMeasure, t: f64) -> f64 {
    debug_assert_eq!(risks.len(), q.len());
    logsumexp(&tilted_log_weights(q, &scaled(risks, t)))
}

pub fn gibbs_posterior(risks: &[f64], q: &DiscreteMeasure, lambda: f64) -> Result<GibbsResult> {
    check_lambda(lambda)?;
    check_risks(risks, q)?;
    if !q.is_normalized() {
        return Err(Error::InvalidMeasure("reference must be normalized".into()));
    }
    let t = -1.0 / lambda;
    let factor = scaled(risks, t);
    let k = logsumexp(&tilted_log_weights(q, &factor));
    if !k.is_finite() {
        return Err(Error::CumulantDiverged { value: k });
    }
    let measure = exponential_tilt(q, &factor)?;
    let kl = kl_divergence(&measure, q)?;
    let er = measure.expect(risks)?;
    Ok(GibbsResult {
        measure,
        lambda,
        cumulant_at_minus_inv_lambda: k,
        kl_to_reference: kl,
        expected_risk_under_measure: er,
    })
}

/// `−log Q(argmin L)`: the radius reached as `λ → 0`.
pub fn gamma_max(risks: &[f64], q: &DiscreteMeasure) -> Result<f64> {
    check_risks(risks, q)?;
    let min = q
        .support()
        .map(|i| risks[i])
        .fold(f64::INFINITY, f64::min);
    let tie: Vec<f64> = q
        .support()
        .filter(|&i| risks[i] - min <= TIE_TOL)
        .map(|i| q.log_weights()[i])
        .collect();
    Ok((-logsumexp(&tie)).max(0.0))
}

/// Finds `λ` with `D(P^(Q,λ)‖Q) = gamma` by bisection on `log λ`.
pub fn solve_lambda_for_radius(risks: &[f64], q: &DiscreteMeasure, gamma: f64) -> Result<f64> {
    let gmax = gamma_max(risks, q)?;
    if gamma.is_nan() || gamma <= 0.0 || gamma >= gmax {
        return Err(Error::RadiusUnreachable {
            gamma,
            gamma_max: gmax,
        });
    }
    let kl_at = |log_lambda: f64| -> Result<f64> {
        Ok(gibbs_posterior(risks, q, log_lambda.exp())?.kl_to_reference)
    };
    let (mut lo, mut hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
    let (mut kl_lo, mut kl_hi) = (kl_at(lo)?, kl_at(hi)?);
    if !(kl_lo >= gamma && gamma >= kl_hi) {
        return Err(Error::BracketExhausted {
            gamma,
            lo_kl: kl_lo,
            hi_kl: kl_hi,
        });
    }
    // Bisect to the resolution of log λ; KL can be nearly flat in λ, so a
    // tolerance on KL alone would leave λ loose.
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= LOG_LAMBDA_RESOLUTION {
            break;
        }
        let kl = kl_at(mid)?;
        if kl > kl_lo + MONOTONE_SLACK || kl < kl_hi - MONOTONE_SLACK {
            return Err(Error::NonMonotone { lambda: mid.exp() });
        }
        if kl == gamma {
            return Ok(mid.exp());
        }
        if kl > gamma {
            lo = mid;
            kl_lo = kl;
        } else {
            hi = mid;
            kl_hi = kl;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Right-hand side of the nested closed form: `Q_1` tilted by `−Σ_j risks_j/λ_j`.
pub fn multi_gibbs_closed_form(
    risk_vectors: &[Vec<f64>],
    lambdas: &[f64],
    q1: &DiscreteMeasure,
) -> Result<DiscreteMeasure> {
    let exponent = summed_exponent(risk_vectors, lambdas, q1)?;
    exponential_tilt(q1, &exponent)
}

fn summed_exponent(risk_vectors: &[Vec<f64>], lambdas: &[f64], q1: &DiscreteMeasure) -> Result<Vec<f64>> {
    if risk_vectors.len() != lambdas.len() {
        return Err(Error::LengthMismatch(format!(
            "{} risk vectors for {} lambdas",
            risk_vectors.len(),
            lambdas.len()
        )));
    }
    let mut exponent = vec![0.0; q1.len()];
    for (risks, &lambda) in risk_vectors.iter().zip(lambdas) {
        check_lambda(lambda)?;
        check_risks(risks, q1)?;
        let t = -1.0 / lambda;
        for (e, r) in exponent.iter_mut().zip(risks) {
            *e += t * r;
        }
    }
    Ok(exponent)
}

/// Centralized benchmark: Gibbs measure of the pooled dataset with `(Q_1, λ_0)`.
pub fn pooled_gibbs(
    pooled: &Dataset,
    loss: LossSpec,
    q1: &DiscreteMeasure,
    lambda0: f64,
) -> Result<DiscreteMeasure> {
    check_lambda(lambda0)?;
    let risks = risk_vector(pooled, q1.space(), loss)?;
    Ok(gibbs_posterior(&risks, q1, lambda0)?.measure)
}

/// Log of the model-independent factor relating client `k`'s local Radon–Nikodym
/// derivative to the one taken against `Q_1`.
pub fn chain_constant(
    k: usize,
    risk_vectors: &[Vec<f64>],
    lambdas: &[f64],
    q1: &DiscreteMeasure,
) -> Result<ChainConstant> {
    if k < 2 || k > risk_vectors.len() || k > lambdas.len() {
        return Err(Error::LengthMismatch(format!(
            "chain constant index {k} outside 2..={}",
            risk_vectors.len().min(lambdas.len())
        )));
    }
    let local = cumulant(&risk_vectors[k - 1], q1, -1.0 / lambdas[k - 1]);
    let before = summed_exponent(&risk_vectors[..k - 1], &lambdas[..k - 1], q1)?;
    let through = summed_exponent(&risk_vectors[..k], &lambdas[..k], q1)?;
    let z_before = logsumexp(&tilted_log_weights(q1, &before));
    let z_through = logsumexp(&tilted_log_weights(q1, &through));
    let value = local + z_before - z_through;
    if !value.is_finite() {
        return Err(Error::CumulantDiverged { value });
    }
    Ok(ChainConstant { k, value })
}
