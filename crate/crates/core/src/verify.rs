//! Numerical checks of the nested-Gibbs identities over transcripts and instances.
//!
//! Tolerances: [`ALGEBRA_TOL`] for single-step identities, [`CHAIN_TOL`] for
//! anything composed over a chain of clients.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::GaussianSetup;
use crate::conjugate::{parameter_gap, ParameterGap};
use crate::error::{Error, Result};
use crate::gibbs::{chain_constant, gibbs_posterior, multi_gibbs_closed_form, pooled_gibbs, solve_lambda_for_radius};
use crate::measure::{exponential_tilt, kl_divergence, log_rn_derivative, logsumexp, sup_log_distance, DiscreteMeasure};
use crate::protocol::{follows_size_scaling, ChainConfig, HopDistortion, Transcript};
use crate::risk::aggregate;

pub const ALGEBRA_TOL: f64 = 1e-12;
pub const CHAIN_TOL: f64 = 1e-9;
/// Round-trip tolerance for `λ → γ → λ'`.
pub const ROUNDTRIP_TOL: f64 = 1e-6;
/// Slack on risk / free-energy comparisons in the probes.
pub const PROBE_TOL: f64 = 1e-9;
pub const PROBE_RNG: &str = "ChaCha8";
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PROBE_SAMPLES: usize = 1000;

fn require_identity(t: &Transcript) -> Result<()> {
    if t.channel.is_identity() {
        Ok(())
    } else {
        Err(Error::PreconditionUnmet(
            "channel distortion breaks the nesting of references".into(),
        ))
    }
}

/// `sup_log_distance` between the relayed final measure and the closed form over all clients.
pub fn check_theorem1(t: &Transcript, cfg: &ChainConfig) -> Result<f64> {
    require_identity(t)?;
    let risks = cfg.risk_vectors()?;
    let closed = multi_gibbs_closed_form(&risks, &t.lambdas_used, &cfg.q1)?;
    sup_log_distance(&t.final_measure, &closed)
}

/// The same comparison at every intermediate client `k = 1..=K`.
pub fn check_corollary1(t: &Transcript, cfg: &ChainConfig) -> Result<Vec<f64>> {
    require_identity(t)?;
    let risks = cfg.risk_vectors()?;
    (1..=cfg.k())
        .map(|k| {
            let closed = multi_gibbs_closed_form(&risks[..k], &t.lambdas_used[..k], &cfg.q1)?;
            sup_log_distance(&t.per_client[k - 1].measure, &closed)
        })
        .collect()
}

/// `sup |d(final)/d(pooled) − 1|` over the support of the pooled benchmark.
///
/// Needs an identity channel, data-backed clients and a common loss. The
/// dataset-size scaling of `λ_k` is not a precondition: without it the metric
/// is computed anyway and is expected to fail.
pub fn check_theorem2(t: &Transcript, cfg: &ChainConfig) -> Result<f64> {
    require_identity(t)?;
    let (datasets, loss) = cfg.pooling_inputs().map_err(Error::PreconditionUnmet)?;
    let lambda0 = cfg
        .lambda0
        .ok_or_else(|| Error::PreconditionUnmet("lambda0 is not set".into()))?;
    let pooled = pooled_gibbs(&aggregate(&datasets)?, loss, &cfg.q1, lambda0)?;
    sup_rn_minus_one(&t.final_measure, &pooled)
}

/// `sup_i |dp/dq(i) − 1|` over `support(q)`, saturating at `f64::MAX`.
pub fn sup_rn_minus_one(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<f64> {
    let lrn = log_rn_derivative(p, q)?;
    let sup = q
        .support()
        .map(|i| (lrn[i].exp() - 1.0).abs())
        .fold(0.0f64, f64::max);
    Ok(sup.min(f64::MAX))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Residuals {
    pub k: usize,
    pub chain_constant: f64,
    /// `max |log dP_k/dQ_k − log dP^(Q1,λk)/dQ1 − C_k|`.
    pub pointwise: f64,
    /// Product decomposition of `dQ_k/dQ_1` against the direct derivative and its closed form.
    pub telescoping: f64,
}

/// Checks the change of reference from `Q_k` to `Q_1` for client `k ≥ 2`.
///
/// The nested references are rebuilt here from `q1` by successive Gibbs steps.
pub fn check_lemma3(
    risk_vectors: &[Vec<f64>],
    lambdas: &[f64],
    q1: &DiscreteMeasure,
    k: usize,
) -> Result<Lemma3Residuals> {
    let c = chain_constant(k, risk_vectors, lambdas, q1)?;
    let mut refs = vec![q1.clone()];
    for j in 0..k - 1 {
        let next = gibbs_posterior(&risk_vectors[j], &refs[j], lambdas[j])?.measure;
        refs.push(next);
    }
    let qk = &refs[k - 1];
    let pk = gibbs_posterior(&risk_vectors[k - 1], qk, lambdas[k - 1])?.measure;
    let base = gibbs_posterior(&risk_vectors[k - 1], q1, lambdas[k - 1])?.measure;

    let lhs = log_rn_derivative(&pk, qk)?;
    let rhs = log_rn_derivative(&base, q1)?;
    let pointwise = qk
        .support()
        .map(|i| (lhs[i] - rhs[i] - c.value).abs())
        .fold(0.0f64, f64::max);

    let direct = log_rn_derivative(qk, q1)?;
    let mut product = vec![0.0; q1.len()];
    for j in 1..k {
        let step = log_rn_derivative(&refs[j], &refs[j - 1])?;
        for (acc, s) in product.iter_mut().zip(step) {
            *acc += s;
        }
    }
    // Closed form of dQ_k/dQ_1: exp(−Σ_{i<k} L_i/λ_i) normalized under Q_1.
    let exponent: Vec<f64> = (0..q1.len())
        .map(|i| {
            risk_vectors[..k - 1]
                .iter()
                .zip(&lambdas[..k - 1])
                .map(|(r, l)| -r[i] / l)
                .sum()
        })
        .collect();
    let shifted: Vec<f64> = q1
        .log_weights()
        .iter()
        .zip(&exponent)
        .map(|(w, e)| w + e)
        .collect();
    let log_z = logsumexp(&shifted);
    let telescoping = q1
        .support()
        .map(|i| {
            let closed = exponent[i] - log_z;
            (product[i] - direct[i]).abs().max((direct[i] - closed).abs())
        })
        .fold(0.0f64, f64::max);

    Ok(Lemma3Residuals {
        k,
        chain_constant: c.value,
        pointwise,
        telescoping,
    })
}

/// Largest Lemma-3 residual over clients `2..=K` of a configuration.
pub fn check_lemma3_chain(cfg: &ChainConfig, lambdas: &[f64]) -> Result<Vec<Lemma3Residuals>> {
    let risks = cfg.risk_vectors()?;
    (2..=cfg.k())
        .map(|k| check_lemma3(&risks, lambdas, &cfg.q1, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub samples: usize,
    pub violations: usize,
    /// Smallest observed `objective(P') − objective(P*)`.
    pub min_gap: f64,
    pub rng: String,
    pub seed: u64,
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn scaled(g: &[f64], s: f64) -> Vec<f64> {
    g.iter().map(|x| s * x).collect()
}

/// Draws a tilt of `q` along `g` whose divergence from `q` lies in `[γ/2, γ]`
/// (or below `γ/2` when the direction cannot reach further).
fn tilt_into_ball(q: &DiscreteMeasure, g: &[f64], gamma: f64) -> Result<DiscreteMeasure> {
    if gamma <= 0.0 {
        return Ok(q.clone());
    }
    let at = |s: f64| -> Result<(DiscreteMeasure, f64)> {
        let p = exponential_tilt(q, &scaled(g, s))?;
        let kl = kl_divergence(&p, q)?;
        Ok((p, kl))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut p_hi, mut kl_hi) = at(hi)?;
    let mut doublings = 0;
    while kl_hi < 0.5 * gamma && doublings < 80 {
        lo = hi;
        hi *= 2.0;
        (p_hi, kl_hi) = at(hi)?;
        doublings += 1;
    }
    if kl_hi <= gamma {
        return Ok(p_hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (p, kl) = at(mid)?;
        if kl > gamma {
            hi = mid;
        } else if kl < 0.5 * gamma {
            lo = mid;
        } else {
            return Ok(p);
        }
    }
    Ok(at(lo)?.0)
}

/// Samples measures inside the KL ball around `q` whose radius is the Gibbs
/// measure's own divergence, and counts any with strictly lower expected risk.
pub fn neighborhood_probe(
    risks: &[f64],
    q: &DiscreteMeasure,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<ProbeOutcome> {
    let gibbs = gibbs_posterior(risks, q, lambda)?;
    let gamma = gibbs.kl_to_reference;
    let best = gibbs.expected_risk_under_measure;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..samples {
        let g = random_direction(&mut rng, q.len());
        let p = tilt_into_ball(q, &g, gamma)?;
        let gap = p.expect(risks)? - best;
        min_gap = min_gap.min(gap);
        if gap < -PROBE_TOL {
            violations += 1;
        }
    }
    Ok(ProbeOutcome {
        samples,
        violations,
        min_gap,
        rng: PROBE_RNG.into(),
        seed,
    })
}

/// `E_P[risks] + λ·D(P‖q)`.
pub fn free_energy(risks: &[f64], p: &DiscreteMeasure, q: &DiscreteMeasure, lambda: f64) -> Result<f64> {
    Ok(p.expect(risks)? + lambda * kl_divergence(p, q)?)
}

/// Samples measures `P' ≪ q` (global tilts with random support deletions, and
/// small perturbations of the Gibbs measure) and counts any with lower free energy.
pub fn free_energy_probe(
    risks: &[f64],
    q: &DiscreteMeasure,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> Result<ProbeOutcome> {
    let gibbs = gibbs_posterior(risks, q, lambda)?;
    let best = free_energy(risks, &gibbs.measure, q, lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for s in 0..samples {
        let g = random_direction(&mut rng, q.len());
        let candidate = if s % 2 == 0 {
            let scale = 10f64.powf(rng.random_range(-3.0..2.0));
            let mut factor = scaled(&g, scale);
            let keep = rng.random_range(0..q.len());
            for (i, f) in factor.iter_mut().enumerate() {
                if i != keep && rng.random_bool(0.2) {
                    *f = f64::NEG_INFINITY;
                }
            }
            if q.support().all(|i| factor[i] == f64::NEG_INFINITY) {
                factor = scaled(&g, scale);
            }
            exponential_tilt(q, &factor)?
        } else {
            let eps = 10f64.powf(rng.random_range(-6.0..-1.0));
            exponential_tilt(&gibbs.measure, &scaled(&g, eps))?
        };
        let gap = free_energy(risks, &candidate, q, lambda)? - best;
        min_gap = min_gap.min(gap);
        if gap < -PROBE_TOL {
            violations += 1;
        }
    }
    Ok(ProbeOutcome {
        samples,
        violations,
        min_gap,
        rng: PROBE_RNG.into(),
        seed,
    })
}

/// `|λ'/λ − 1|` where `λ'` is recovered from the radius realized at `λ`.
pub fn lambda_roundtrip(risks: &[f64], q: &DiscreteMeasure, lambda: f64) -> Result<f64> {
    let gamma = gibbs_posterior(risks, q, lambda)?.kl_to_reference;
    let recovered = solve_lambda_for_radius(risks, q, gamma)?;
    Ok((recovered / lambda - 1.0).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub metric: Option<f64>,
    pub tolerance: Option<f64>,
    pub verdict: Verdict,
    pub note: Option<String>,
}

impl CheckResult {
    pub fn measured(name: &str, metric: f64, tolerance: f64) -> Self {
        let verdict = if metric <= tolerance { Verdict::Pass } else { Verdict::Fail };
        Self {
            name: name.into(),
            metric: Some(metric),
            tolerance: Some(tolerance),
            verdict,
            note: None,
        }
    }

    fn from_result(name: &str, r: Result<f64>, tolerance: f64) -> Self {
        match r {
            Ok(m) => Self::measured(name, m, tolerance),
            Err(e) => Self::failed_or_absent(name, e),
        }
    }

    fn failed_or_absent(name: &str, e: Error) -> Self {
        let verdict = match e {
            Error::PreconditionUnmet(_) => Verdict::Absent,
            _ => Verdict::Fail,
        };
        Self {
            name: name.into(),
            metric: None,
            tolerance: None,
            verdict,
            note: Some(e.to_string()),
        }
    }

    pub fn absent(name: &str, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            metric: None,
            tolerance: None,
            verdict: Verdict::Absent,
            note: Some(note.into()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub seed: u64,
    pub probe_samples: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            probe_samples: DEFAULT_PROBE_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub theorem1_sup_log_diff: Option<f64>,
    pub corollary1_max_diff: Option<f64>,
    pub theorem2_sup_rn_minus_one: Option<f64>,
    pub lemma3_max_violation: Option<f64>,
    pub lemma2_roundtrip_rel_err: Option<f64>,
    pub lemma1_violations: Option<usize>,
    pub neighborhood_violations: Option<usize>,
    /// Realized radius `D(P_k‖Q_k)` per client.
    pub per_client_kl: Vec<f64>,
    pub lambdas_used: Vec<f64>,
    /// Whether `λ_k = λ_0·n_0/n_k` holds for every client.
    pub size_scaled_lambdas: bool,
    pub hop_distortion: Vec<HopDistortion>,
    pub checks: Vec<CheckResult>,
    pub rng: String,
    pub seed: u64,
    pub probe_samples: usize,
}

impl VerificationReport {
    /// No check failed. Absent checks do not count as failures.
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    /// One row per check: `check,metric,tolerance,verdict`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,metric,tolerance,verdict\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for c in &self.checks {
            let verdict = match c.verdict {
                Verdict::Pass => "pass",
                Verdict::Fail => "fail",
                Verdict::Absent => "absent",
            };
            out.push_str(&format!("{},{},{},{}\n", c.name, fmt(c.metric), fmt(c.tolerance), verdict));
        }
        out
    }
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0f64, f64::max)
}

/// Runs every applicable check; unmet preconditions are reported as absent.
pub fn full_report(t: &Transcript, cfg: &ChainConfig, opts: ReportOptions) -> VerificationReport {
    let mut checks = Vec::new();
    let identity = t.channel.is_identity();

    let theorem1 = check_theorem1(t, cfg);
    let theorem1_value = theorem1.as_ref().ok().copied();
    checks.push(CheckResult::from_result("theorem1", theorem1, CHAIN_TOL));

    let corollary = check_corollary1(t, cfg).map(max_of);
    let corollary_value = corollary.as_ref().ok().copied();
    checks.push(CheckResult::from_result("corollary1", corollary, CHAIN_TOL));

    let theorem2 = check_theorem2(t, cfg);
    let theorem2_value = theorem2.as_ref().ok().copied();
    checks.push(CheckResult::from_result("theorem2", theorem2, CHAIN_TOL));

    let mut lemma3_value = None;
    if !identity {
        checks.push(CheckResult::absent("lemma3", "channel distortion breaks the nesting of references"));
    } else if cfg.k() < 2 {
        checks.push(CheckResult::absent("lemma3", "needs at least two clients"));
    } else {
        let r = check_lemma3_chain(cfg, &t.lambdas_used)
            .map(|rs| max_of(rs.iter().map(|r| r.pointwise.max(r.telescoping))));
        lemma3_value = r.as_ref().ok().copied();
        checks.push(CheckResult::from_result("lemma3", r, CHAIN_TOL));
    }

    // Per-client local checks use the reference each client actually received.
    let mut roundtrips = Vec::new();
    let mut roundtrip_note = None;
    let mut lemma1 = Ok(0usize);
    let mut neighborhood = Ok(0usize);
    for (idx, client) in cfg.clients.iter().enumerate() {
        let reference = &t.references[idx];
        let lambda = t.lambdas_used[idx];
        let risks = match client.source.risks(reference.space()) {
            Ok(r) => r,
            Err(e) => {
                lemma1 = Err(e);
                break;
            }
        };
        match lambda_roundtrip(&risks, reference, lambda) {
            Ok(v) => roundtrips.push(v),
            Err(e @ Error::RadiusUnreachable { .. }) => {
                roundtrip_note = Some(format!("client {} skipped: {e}", idx + 1));
            }
            Err(e) => roundtrip_note = Some(format!("client {}: {e}", idx + 1)),
        }
        let seed = opts.seed.wrapping_add(idx as u64);
        if let Ok(n) = lemma1.as_mut() {
            match free_energy_probe(&risks, reference, lambda, opts.probe_samples, seed) {
                Ok(p) => *n += p.violations,
                Err(e) => lemma1 = Err(e),
            }
        }
        if let Ok(n) = neighborhood.as_mut() {
            match neighborhood_probe(&risks, reference, lambda, opts.probe_samples, seed) {
                Ok(p) => *n += p.violations,
                Err(e) => neighborhood = Err(e),
            }
        }
    }
    let lemma2_value = (!roundtrips.is_empty()).then(|| max_of(roundtrips.iter().copied()));
    match lemma2_value {
        Some(v) => {
            let mut c = CheckResult::measured("lemma2_roundtrip", v, ROUNDTRIP_TOL);
            c.note = roundtrip_note;
            checks.push(c);
        }
        None => checks.push(CheckResult::absent(
            "lemma2_roundtrip",
            roundtrip_note.unwrap_or_else(|| "no client admits a reachable radius".into()),
        )),
    }
    let lemma1_violations = lemma1.as_ref().ok().copied();
    checks.push(CheckResult::from_result("lemma1_free_energy", lemma1.map(|n| n as f64), 0.0));
    let neighborhood_violations = neighborhood.as_ref().ok().copied();
    checks.push(CheckResult::from_result("lemma2_neighborhood", neighborhood.map(|n| n as f64), 0.0));

    VerificationReport {
        theorem1_sup_log_diff: theorem1_value,
        corollary1_max_diff: corollary_value,
        theorem2_sup_rn_minus_one: theorem2_value,
        lemma3_max_violation: lemma3_value,
        lemma2_roundtrip_rel_err: lemma2_value,
        lemma1_violations,
        neighborhood_violations,
        per_client_kl: t.per_client.iter().map(|g| g.kl_to_reference).collect(),
        lambdas_used: t.lambdas_used.clone(),
        size_scaled_lambdas: follows_size_scaling(cfg, &t.lambdas_used),
        hop_distortion: t.hop_distortion.clone(),
        checks,
        rng: PROBE_RNG.into(),
        seed: opts.seed,
        probe_samples: opts.probe_samples,
    }
}

/// Checks for the conjugate Gaussian backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianReport {
    pub lambdas_used: Vec<f64>,
    pub size_scaled_lambdas: bool,
    /// Spectral-norm precision gap and max-norm mean gap, chain vs pooled.
    pub theorem2_gap: Option<ParameterGap>,
    pub checks: Vec<CheckResult>,
}

impl GaussianReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

pub fn gaussian_report(setup: &GaussianSetup) -> Result<GaussianReport> {
    let steps = setup.chain_steps()?;
    let mut checks = Vec::new();

    let mut loewner = 0.0f64;
    let mut prev = setup.q1.precision().clone();
    for s in &steps {
        let diff = s.precision() - &prev;
        let min_eig = SymmetricEigen::new(diff).eigenvalues.min();
        loewner = loewner.max(-min_eig);
        prev = s.precision().clone();
    }
    checks.push(CheckResult::measured("precision_order", loewner, ALGEBRA_TOL));

    let ns: Vec<usize> = setup.datasets.iter().map(|d| d.n()).collect();
    let n0: usize = ns.iter().sum();
    let size_scaled_lambdas = setup.lambda0.is_some_and(|l0| {
        setup
            .lambdas
            .iter()
            .zip(&ns)
            .all(|(l, &n)| (l - l0 * (n0 as f64 / n as f64)).abs() <= 1e-12 * l.abs())
    });

    let theorem2_gap = match setup.lambda0 {
        Some(_) => {
            let gap = parameter_gap(steps.last().expect("at least one client"), &setup.pooled()?)?;
            checks.push(CheckResult::measured("theorem2", gap.max(), CHAIN_TOL));
            Some(gap)
        }
        None => {
            checks.push(CheckResult::absent("theorem2", "lambda0 is not set"));
            None
        }
    };
    Ok(GaussianReport {
        lambdas_used: setup.lambdas.clone(),
        size_scaled_lambdas,
        theorem2_gap,
        checks,
    })
}
