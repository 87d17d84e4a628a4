//! Marginal likelihood estimation by bridge sampling, posterior model
//! probabilities and model averaging across disease orderings.
//!
//! The bridge operates on the parameter vector with the latent field
//! integrated out, mapped to an unconstrained space so a Gaussian proposal
//! has full support. All ratio arithmetic stays in log space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gibbs::PosteriorSamples;
use crate::joint::InteractionCoeffs;
use crate::likelihood::{integrated_loglik, log_hyperprior};
use crate::model::{ModelSpec, ParamState};

const LN_2PI: f64 = 1.8378770664093453;

/// Hard cap on the number of orderings (6! = 720).
pub const MAX_ORDERING_Q: usize = 6;

/// Maps a constrained state (w excluded) to the unconstrained vector:
/// beta blocks, log sigma2, log tau, eta pairs, logit rho.
pub fn to_unconstrained(state: &ParamState, spec: &ModelSpec) -> DVector<f64> {
    let q = spec.q();
    let mut v = Vec::with_capacity(spec.theta_dim());
    for b in &state.beta {
        v.extend(b.iter().copied());
    }
    for i in 0..q {
        v.push(state.sigma2[i].ln());
    }
    for i in 0..q {
        v.push(state.tau[i].ln());
    }
    v.extend(state.eta.flat());
    for i in 0..q {
        v.push((state.rho[i] / (1.0 - state.rho[i])).ln());
    }
    DVector::from_vec(v)
}

/// Inverse of `to_unconstrained`; the latent field comes back zero-filled.
pub fn from_unconstrained(v: &DVector<f64>, spec: &ModelSpec) -> Result<ParamState> {
    let q = spec.q();
    if v.len() != spec.theta_dim() {
        return Err(Error::dimension(format!(
            "expected unconstrained vector of length {}, got {}",
            spec.theta_dim(),
            v.len()
        )));
    }
    let mut at = 0usize;
    let mut take = |n: usize| {
        let s = at;
        at += n;
        (s, n)
    };
    let mut beta = Vec::with_capacity(q);
    for i in 0..q {
        let (s, n) = take(spec.p(i));
        beta.push(DVector::from_column_slice(&v.as_slice()[s..s + n]));
    }
    let (s, _) = take(q);
    let sigma2: Vec<f64> = v.as_slice()[s..s + q].iter().map(|x| x.exp()).collect();
    let (s, _) = take(q);
    let tau: Vec<f64> = v.as_slice()[s..s + q].iter().map(|x| x.exp()).collect();
    let (s, n) = take(q * (q - 1));
    let eta = InteractionCoeffs::from_flat(q, &v.as_slice()[s..s + n])?;
    let (s, _) = take(q);
    let rho: Vec<f64> = v.as_slice()[s..s + q]
        .iter()
        .map(|x| 1.0 / (1.0 + (-x).exp()))
        .collect();
    Ok(ParamState {
        beta,
        sigma2,
        tau,
        eta,
        rho,
        w: vec![DVector::zeros(spec.k()); q],
    })
}

/// log |d constrained / d unconstrained| for the transform above.
pub fn log_jacobian(state: &ParamState) -> f64 {
    let mut acc = 0.0;
    for &s in &state.sigma2 {
        acc += s.ln();
    }
    for &t in &state.tau {
        acc += t.ln();
    }
    for &r in &state.rho {
        acc += (r * (1.0 - r)).ln();
    }
    acc
}

/// Moment-matched Gaussian proposal in unconstrained space.
#[derive(Debug, Clone)]
pub struct ProposalDensity {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_det_cov: f64,
}

impl ProposalDensity {
    pub fn fit(draws: &[DVector<f64>]) -> Result<Self> {
        let n = draws.len();
        if n < 2 {
            return Err(Error::validation("proposal fit needs at least 2 draws"));
        }
        let d = draws[0].len();
        let mut mean = DVector::zeros(d);
        for x in draws {
            mean += x;
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for x in draws {
            let c = x - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        if !(cov.diagonal().max() > 0.0) {
            return Err(Error::numerical(
                "degenerate proposal covariance (posterior draws collapse)",
            ));
        }
        let chol = match cov.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = 1e-8 * (cov.diagonal().mean() + 1e-300);
                for i in 0..d {
                    cov[(i, i)] += jitter;
                }
                cov.cholesky().ok_or_else(|| {
                    Error::numerical("degenerate proposal covariance (posterior draws collapse)")
                })?
            }
        };
        let l = chol.l();
        let log_det_cov = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(ProposalDensity {
            mean,
            chol_l: l,
            log_det_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.chol_l * z
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let z = self
            .chol_l
            .solve_lower_triangular(&(x - &self.mean))
            .expect("triangular solve");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov + z.norm_squared())
    }
}

/// Output of the fixed-point bridge iteration.
#[derive(Debug, Clone)]
pub struct BridgeEstimate {
    pub log_ml: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub n1: usize,
    pub n2: usize,
    pub trace: Vec<f64>,
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_mean_exp(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + (v.iter().map(|x| (x - m).exp()).sum::<f64>() / n as f64).ln()
}

/// Optimal-bridge fixed point on precomputed log ratios.
///
/// `log_l1`: log[p(y|theta) p(theta) / g(theta)] on the posterior pool;
/// `log_l2`: the same on the proposal pool. Iterates the estimate of
/// log p(y) until the change falls below `tol`.
pub fn bridge_log_evidence(
    log_l1: &[f64],
    log_l2: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<BridgeEstimate> {
    if log_l1.is_empty() || log_l2.is_empty() {
        return Err(Error::validation("bridge pools must be nonempty"));
    }
    if log_l1.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical("NaN ratio in the posterior pool"));
    }
    if log_l2.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical("NaN ratio in the proposal pool"));
    }
    let (n1, n2) = (log_l1.len(), log_l2.len());
    let ln_s1 = (n1 as f64 / (n1 + n2) as f64).ln();
    let ln_s2 = (n2 as f64 / (n1 + n2) as f64).ln();
    // Importance-sampling start.
    let mut r = log_mean_exp(log_l2.iter().copied(), n2);
    if !r.is_finite() {
        return Err(Error::numerical(
            "proposal pool carries no posterior mass (all ratios are zero)",
        ));
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    for _ in 0..max_iter {
        iters += 1;
        let num = log_mean_exp(
            log_l2
                .iter()
                .map(|&l| l - log_sum_exp2(ln_s1 + l, ln_s2 + r)),
            n2,
        );
        let den = log_mean_exp(
            log_l1
                .iter()
                .map(|&l| -log_sum_exp2(ln_s1 + l, ln_s2 + r)),
            n1,
        );
        let next = num - den;
        if next.is_nan() {
            return Err(Error::numerical("bridge iteration produced NaN"));
        }
        let delta = (next - r).abs();
        trace.push(next);
        r = next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(BridgeEstimate {
        log_ml: r,
        n_iterations: iters,
        converged,
        n1,
        n2,
        trace,
    })
}

/// Splits retained draws into a proposal-fitting part and a disjoint
/// held-out pool (returned unconstrained).
pub fn fit_proposal(
    samples: &PosteriorSamples,
    spec: &ModelSpec,
    split: f64,
) -> Result<(ProposalDensity, Vec<DVector<f64>>)> {
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::validation("split fraction must lie in (0, 1)"));
    }
    let dim = spec.theta_dim();
    if samples.len() < 2 * dim + 2 {
        return Err(Error::validation(format!(
            "need at least {} retained draws to fit a {dim}-dimensional proposal, got {}",
            2 * dim + 2,
            samples.len()
        )));
    }
    let unconstrained: Vec<DVector<f64>> = samples
        .draws
        .iter()
        .map(|d| to_unconstrained(d, spec))
        .collect();
    let n_fit = ((samples.len() as f64) * split).round() as usize;
    let n_fit = n_fit.clamp(dim + 2, samples.len() - 1);
    let proposal = ProposalDensity::fit(&unconstrained[..n_fit])?;
    Ok((proposal, unconstrained[n_fit..].to_vec()))
}

/// log[p(y|theta) p(theta) / g(theta)] at one unconstrained point, with the
/// latent field integrated out of the likelihood.
pub fn model_log_ratio(
    theta_u: &DVector<f64>,
    spec: &ModelSpec,
    proposal: &ProposalDensity,
) -> Result<f64> {
    let state = from_unconstrained(theta_u, spec)?;
    let ll = integrated_loglik(&state, spec)?;
    let lp = log_hyperprior(&state, spec);
    Ok(ll + lp + log_jacobian(&state) - proposal.log_density(theta_u))
}

/// Bridge settings; `n2 = None` matches the held-out pool size.
#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub split: f64,
    pub n2: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            split: 0.5,
            n2: None,
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

/// Full per-model pipeline: proposal fit, pool evaluation, bridge iteration.
pub fn bridge_for_model<R: Rng + ?Sized>(
    spec: &ModelSpec,
    samples: &PosteriorSamples,
    cfg: &BridgeConfig,
    rng: &mut R,
) -> Result<BridgeEstimate> {
    let (proposal, pool) = fit_proposal(samples, spec, cfg.split)?;
    let n2 = cfg.n2.unwrap_or(pool.len()).max(1);
    let mut log_l1 = Vec::with_capacity(pool.len());
    for theta in &pool {
        log_l1.push(model_log_ratio(theta, spec, &proposal)?);
    }
    let mut log_l2 = Vec::with_capacity(n2);
    for _ in 0..n2 {
        let theta = proposal.sample(rng);
        // Far-tail proposal draws may defeat the factorization; they carry
        // no posterior mass, so they enter as zero-likelihood points.
        match model_log_ratio(&theta, spec, &proposal) {
            Ok(v) => log_l2.push(v),
            Err(Error::Numerical(_)) => log_l2.push(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        }
    }
    bridge_log_evidence(&log_l1, &log_l2, cfg.tol, cfg.max_iter)
}

/// Normalized posterior probabilities over candidate orderings.
#[derive(Debug, Clone)]
pub struct ModelPosterior {
    pub log_ml: Vec<f64>,
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
}

pub fn posterior_model_probs(log_ml: &[f64], prior: &[f64]) -> Result<ModelPosterior> {
    if log_ml.is_empty() || log_ml.len() != prior.len() {
        return Err(Error::dimension(
            "need matching nonempty log_ml and prior lists",
        ));
    }
    if (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 || prior.iter().any(|p| *p < 0.0) {
        return Err(Error::validation("model priors must be nonnegative and sum to 1"));
    }
    let scores: Vec<f64> = log_ml
        .iter()
        .zip(prior)
        .map(|(l, p)| l + p.max(1e-300).ln())
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut post: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = post.iter().sum();
    for p in &mut post {
        *p /= total;
    }
    Ok(ModelPosterior {
        log_ml: log_ml.to_vec(),
        prior: prior.to_vec(),
        posterior: post,
    })
}

/// Probability-weighted average of per-model estimates with a shape check.
pub fn bma_expectation(means: &[DVector<f64>], probs: &[f64]) -> Result<DVector<f64>> {
    if means.is_empty() || means.len() != probs.len() {
        return Err(Error::dimension("need one mean vector per model probability"));
    }
    let d = means[0].len();
    if means.iter().any(|m| m.len() != d) {
        return Err(Error::dimension("model mean vectors differ in length"));
    }
    let mut out = DVector::zeros(d);
    for (m, p) in means.iter().zip(probs) {
        out += m * *p;
    }
    Ok(out)
}

/// All q! orderings in lexicographic order, 0-based disease indices.
pub fn enumerate_orderings(q: usize) -> Result<Vec<Vec<usize>>> {
    if q == 0 || q > MAX_ORDERING_Q {
        return Err(Error::validation(format!(
            "ordering enumeration supports 1 <= q <= {MAX_ORDERING_Q}, got {q}"
        )));
    }
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..q).collect();
    loop {
        out.push(current.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..q - 1).rev().find(|&i| current[i] < current[i + 1]) else {
            break;
        };
        let j = (i + 1..q).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
    Ok(out)
}

/// Reorders hierarchy-position items back to original disease indices:
/// `items[i]` belongs to original disease `ordering[i]`.
pub fn align_to_original<T: Clone>(items: &[T], ordering: &[usize]) -> Result<Vec<T>> {
    if items.len() != ordering.len() {
        return Err(Error::dimension("item count must match the ordering length"));
    }
    let mut out: Vec<Option<T>> = vec![None; items.len()];
    for (i, &d) in ordering.iter().enumerate() {
        out[d] = Some(items[i].clone());
    }
    out.into_iter()
        .map(|o| o.ok_or_else(|| Error::validation("ordering is not a permutation")))
        .collect()
}
