//! Log-density evaluations for the hierarchical model.
//!
//! All internal densities are parameterized by variance / covariance; scale
//! parameters arriving in precision form (tau, the DAGAR precisions) are
//! converted at the construction site.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamState};

const LN_2PI: f64 = 1.8378770664093453;

/// log N(x | mean, variance)
pub fn ln_normal(x: f64, mean: f64, variance: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + variance.ln() + r * r / variance)
}

/// log Gamma(x | shape, rate)
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// log InvGamma(x | shape, rate)
pub fn ln_inv_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// Entry (i, j): log N(y_ij | x_ij' beta_i + w_ij, sigma_i^2), hierarchy order.
pub fn pointwise_loglik(state: &ParamState, spec: &ModelSpec) -> Result<DMatrix<f64>> {
    let (q, k) = (spec.q(), spec.k());
    let mut out = DMatrix::zeros(q, k);
    for i in 0..q {
        let mean = spec.x(i) * &state.beta[i] + &state.w[i];
        if state.beta[i].len() != spec.p(i) {
            return Err(Error::dimension(format!(
                "beta[{i}] has length {}, design has {} columns",
                state.beta[i].len(),
                spec.p(i)
            )));
        }
        let y = spec.y(i);
        for j in 0..k {
            out[(i, j)] = ln_normal(y[j], mean[j], state.sigma2[i]);
        }
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::numerical("non-finite pointwise log-likelihood"));
    }
    Ok(out)
}

/// log N(w | 0, Q_w^{-1}) via the factored MDAGAR density.
pub fn log_prior_w(state: &ParamState, spec: &ModelSpec) -> Result<f64> {
    let jp = state.joint_precision(spec)?;
    jp.log_density(&state.w_stacked())
}

/// Sum of all hyperprior log densities (normalized).
pub fn log_hyperprior(state: &ParamState, spec: &ModelSpec) -> f64 {
    let prior = &spec.prior;
    let mut acc = 0.0;
    for i in 0..spec.q() {
        if !(state.rho[i] > 0.0 && state.rho[i] < 1.0) {
            return f64::NEG_INFINITY; // Uniform(0,1) support
        }
        acc += ln_gamma_pdf(state.tau[i], prior.a_tau, prior.b_tau);
        acc += ln_inv_gamma_pdf(state.sigma2[i], prior.a_sigma, prior.b_sigma);
        for b in state.beta[i].iter() {
            acc += ln_normal(*b, prior.mu_beta, prior.var_beta);
        }
    }
    for i in 0..spec.q() {
        for ip in 0..i {
            acc += ln_normal(state.eta.eta0(i, ip), prior.mu_eta, prior.var_eta);
            acc += ln_normal(state.eta.eta1(i, ip), prior.mu_eta, prior.var_eta);
        }
    }
    acc
}

/// Unnormalized log posterior: likelihood + latent prior + hyperpriors.
/// Returns -inf outside the support.
pub fn log_posterior_kernel(state: &ParamState, spec: &ModelSpec) -> Result<f64> {
    if !state.supported() {
        return Ok(f64::NEG_INFINITY);
    }
    let lik = pointwise_loglik(state, spec)?.sum();
    let prior_w = log_prior_w(state, spec)?;
    Ok(lik + prior_w + log_hyperprior(state, spec))
}

/// log N(y | X beta, Q_w^{-1} + blockdiag(sigma_i^2 I_k)), the likelihood with
/// w integrated out.
///
/// Uses the determinant identity det(Q^{-1} + S) = det(Q + S^{-1}) det(S) / det(Q)
/// and the matching Woodbury quadratic form, so only Q_w + S^{-1} is factored.
pub fn integrated_loglik(state: &ParamState, spec: &ModelSpec) -> Result<f64> {
    let (q, k) = (spec.q(), spec.k());
    let n = q * k;
    let jp = state.joint_precision(spec)?;
    let mut p = jp.dense()?;
    let mut log_det_noise = 0.0;
    let mut r = DVector::zeros(n);
    let mut s = DVector::zeros(n);
    for i in 0..q {
        let inv_s2 = 1.0 / state.sigma2[i];
        log_det_noise += k as f64 * state.sigma2[i].ln();
        let resid = spec.y(i) - spec.x(i) * &state.beta[i];
        for j in 0..k {
            p[(i * k + j, i * k + j)] += inv_s2;
            r[i * k + j] = resid[j];
            s[i * k + j] = inv_s2 * resid[j];
        }
    }
    let chol = cholesky_with_jitter(p)?;
    let log_det_p: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det_cov = log_det_p - jp.log_det() + log_det_noise;
    let quad = r.dot(&s) - s.dot(&chol.solve(&s));
    Ok(-0.5 * (n as f64 * LN_2PI + log_det_cov + quad))
}

/// Cholesky with a single retry after adding 1e-10 * mean(diag) jitter.
pub fn cholesky_with_jitter(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = m.nrows();
    match m.clone().cholesky() {
        Some(c) => Ok(c),
        None => {
            let jitter = 1e-10 * m.diagonal().mean();
            let mut m2 = m;
            for i in 0..n {
                m2[(i, i)] += jitter;
            }
            m2.cholesky()
                .ok_or_else(|| Error::numerical("Cholesky failed after jitter"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ArealGraph;
    use crate::joint::InteractionCoeffs;
    use crate::model::{Dataset, PriorSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn single_region_spec() -> ModelSpec {
        let g = Arc::new(ArealGraph::new(vec!["A".into()], &[]).unwrap());
        let d = Arc::new(
            Dataset::new(
                vec!["d1".into()],
                vec![DVector::from_vec(vec![2.0])],
                vec![DMatrix::zeros(1, 0)],
            )
            .unwrap(),
        );
        ModelSpec::new(d, g, Arc::new(PriorSpec::simulation()), vec![0]).unwrap()
    }

    fn unit_state(spec: &ModelSpec, beta0: f64, sigma2: f64) -> ParamState {
        ParamState {
            beta: vec![DVector::from_vec(vec![beta0])],
            sigma2: vec![sigma2],
            tau: vec![1.0],
            eta: InteractionCoeffs::zeros(1),
            rho: vec![0.5],
            w: vec![DVector::zeros(spec.k())],
        }
    }

    fn spec_2x3(seed: u64) -> (ModelSpec, ParamState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Arc::new(ArealGraph::from_adjacency_str("regions: A,B,C\nA,B\nB,C\n").unwrap());
        let rnd_vec =
            |rng: &mut ChaCha8Rng, n: usize| DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let d = Arc::new(
            Dataset::new(
                vec!["d1".into(), "d2".into()],
                vec![rnd_vec(&mut rng, 3), rnd_vec(&mut rng, 3)],
                vec![
                    DMatrix::from_fn(3, 1, |_, _| rng.random::<f64>()),
                    DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>()),
                ],
            )
            .unwrap(),
        );
        let spec = ModelSpec::new(d, g, Arc::new(PriorSpec::simulation()), vec![0, 1]).unwrap();
        let mut eta = InteractionCoeffs::zeros(2);
        eta.set(1, 0, 0.4, -0.1);
        let state = ParamState {
            beta: vec![rnd_vec(&mut rng, 2), rnd_vec(&mut rng, 3)],
            sigma2: vec![0.5, 1.2],
            tau: vec![0.8, 1.5],
            eta,
            rho: vec![0.3, 0.7],
            w: vec![rnd_vec(&mut rng, 3), rnd_vec(&mut rng, 3)],
        };
        (spec, state)
    }

    #[test]
    fn pointwise_hand_values() {
        let spec = single_region_spec();
        // y = 2, mean = 2, variance 1/(2 pi) -> density 1, log 0.
        let s = unit_state(&spec, 2.0, 1.0 / (2.0 * std::f64::consts::PI));
        assert_relative_eq!(
            pointwise_loglik(&s, &spec).unwrap()[(0, 0)],
            0.0,
            epsilon = 1e-12
        );
        let s = unit_state(&spec, 2.0, 1.0);
        assert_relative_eq!(
            pointwise_loglik(&s, &spec).unwrap()[(0, 0)],
            -0.9189385332046727,
            epsilon = 1e-12
        );
        // residual 2, variance 4: -log(sqrt(8 pi)) - 0.5
        let s = unit_state(&spec, 0.0, 4.0);
        let expect = -0.5 * (8.0 * std::f64::consts::PI).ln() - 0.5;
        assert_relative_eq!(
            pointwise_loglik(&s, &spec).unwrap()[(0, 0)],
            expect,
            epsilon = 1e-12
        );
        assert_relative_eq!(expect, -2.112085713764618, epsilon = 1e-10);
    }

    #[test]
    fn log_prior_w_single_vertex() {
        let spec = single_region_spec();
        let s = unit_state(&spec, 0.0, 1.0);
        assert_relative_eq!(
            log_prior_w(&s, &spec).unwrap(),
            -0.5 * LN_2PI,
            epsilon = 1e-12
        );
    }

    #[test]
    fn log_prior_w_matches_dense_mvn() {
        let (spec, state) = spec_2x3(41);
        let jp = state.joint_precision(&spec).unwrap();
        let cov = jp.dense_covariance().unwrap();
        let w = state.w_stacked();
        let chol = cov.clone().cholesky().unwrap();
        let ld: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = w.dot(&chol.solve(&w));
        let expect = -0.5 * (6.0 * LN_2PI + ld + quad);
        assert_relative_eq!(log_prior_w(&state, &spec).unwrap(), expect, epsilon = 1e-9);
    }

    #[test]
    fn log_prior_w_separates_when_eta_zero() {
        let (spec, mut state) = spec_2x3(43);
        state.eta = InteractionCoeffs::zeros(2);
        let joint = log_prior_w(&state, &spec).unwrap();
        let mut sum = 0.0;
        for i in 0..2 {
            let jp = crate::joint::JointPrecision::build(
                spec.graph.clone(),
                &[state.tau[i]],
                &[state.rho[i]],
                &InteractionCoeffs::zeros(1),
            )
            .unwrap();
            sum += jp.log_density(&state.w[i]).unwrap();
        }
        assert_relative_eq!(joint, sum, epsilon = 1e-10);
    }

    #[test]
    fn kernel_boundary_rho_is_neg_inf() {
        let (spec, mut state) = spec_2x3(47);
        state.rho[0] = 0.0;
        assert_eq!(
            log_posterior_kernel(&state, &spec).unwrap(),
            f64::NEG_INFINITY
        );
        state.rho[0] = 1.0;
        assert_eq!(
            log_posterior_kernel(&state, &spec).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn kernel_term_by_term() {
        // Independent straight-line recomputation of every term.
        let (spec, state) = spec_2x3(53);
        let kernel = log_posterior_kernel(&state, &spec).unwrap();
        let mut expect = 0.0;
        for i in 0..2 {
            let y = spec.y(i);
            let mean = spec.x(i) * &state.beta[i] + &state.w[i];
            for j in 0..3 {
                let r: f64 = y[j] - mean[j];
                expect +=
                    -0.5 * ((2.0 * std::f64::consts::PI * state.sigma2[i]).ln()
                        + r * r / state.sigma2[i]);
            }
        }
        let jp = state.joint_precision(&spec).unwrap();
        let qw = jp.dense().unwrap();
        let w = state.w_stacked();
        let chol = qw.clone().cholesky().unwrap();
        let ld: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        expect += 0.5 * ld - 0.5 * (w.transpose() * &qw * &w)[(0, 0)] - 3.0 * LN_2PI;
        let pr = &spec.prior;
        for i in 0..2 {
            expect += ln_gamma_pdf(state.tau[i], pr.a_tau, pr.b_tau);
            expect += ln_inv_gamma_pdf(state.sigma2[i], pr.a_sigma, pr.b_sigma);
            for b in state.beta[i].iter() {
                expect += ln_normal(*b, 0.0, pr.var_beta);
            }
        }
        expect += ln_normal(state.eta.eta0(1, 0), 0.0, pr.var_eta);
        expect += ln_normal(state.eta.eta1(1, 0), 0.0, pr.var_eta);
        assert_relative_eq!(kernel, expect, max_relative = 1e-10);
    }

    #[test]
    fn kernel_differences_ignore_data_constants() {
        let (spec, state) = spec_2x3(59);
        let mut state2 = state.clone();
        state2.tau[0] *= 1.5;
        state2.rho[1] = 0.4;
        let d1 = log_posterior_kernel(&state2, &spec).unwrap()
            - log_posterior_kernel(&state, &spec).unwrap();
        // Recompute the difference from kernels that drop the pointwise
        // likelihood constant -(qk/2) log(2 pi sigma^2) terms (data-only when
        // sigma is unchanged): the difference must be identical.
        let lik = |s: &ParamState| {
            log_prior_w(s, &spec).unwrap() + log_hyperprior(s, &spec) + {
                let mut acc = 0.0;
                for i in 0..2 {
                    let y = spec.y(i);
                    let mean = spec.x(i) * &s.beta[i] + &s.w[i];
                    for j in 0..3 {
                        let r: f64 = y[j] - mean[j];
                        acc += -0.5 * r * r / s.sigma2[i];
                    }
                }
                acc
            }
        };
        let d2 = lik(&state2) - lik(&state);
        assert_relative_eq!(d1, d2, max_relative = 1e-9);
    }

    #[test]
    fn integrated_scalar_case() {
        let spec = single_region_spec();
        // q=1, k=1, tau=1 (lambda=1), sigma^2=1, mean = y: variance 1 + 1 = 2.
        let s = unit_state(&spec, 2.0, 1.0);
        assert_relative_eq!(
            integrated_loglik(&s, &spec).unwrap(),
            -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn integrated_small_noise_limit() {
        let (spec, mut state) = spec_2x3(61);
        state.sigma2 = vec![1e-10, 1e-10];
        let got = integrated_loglik(&state, &spec).unwrap();
        // With sigma^2 -> 0 the integrated likelihood tends to N(y - X beta | 0, Q_w^{-1}).
        let jp = state.joint_precision(&spec).unwrap();
        let mut r = DVector::zeros(6);
        for i in 0..2 {
            let resid = spec.y(i) - spec.x(i) * &state.beta[i];
            r.rows_mut(i * 3, 3).copy_from(&resid);
        }
        let expect = jp.log_density(&r).unwrap();
        assert_relative_eq!(got, expect, epsilon = 1e-4);
    }

    #[test]
    fn integrated_matches_dense_oracle() {
        let (spec, state) = spec_2x3(67);
        let got = integrated_loglik(&state, &spec).unwrap();
        // Dense oracle: form the covariance explicitly.
        let jp = state.joint_precision(&spec).unwrap();
        let mut cov = jp.dense_covariance().unwrap();
        let mut r = DVector::zeros(6);
        for i in 0..2 {
            let resid = spec.y(i) - spec.x(i) * &state.beta[i];
            for j in 0..3 {
                cov[(i * 3 + j, i * 3 + j)] += state.sigma2[i];
                r[i * 3 + j] = resid[j];
            }
        }
        let chol = cov.cholesky().unwrap();
        let ld: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let expect = -0.5 * (6.0 * LN_2PI + ld + r.dot(&chol.solve(&r)));
        assert_relative_eq!(got, expect, epsilon = 1e-9);
    }

    #[test]
    fn integrated_matches_monte_carlo() {
        let (spec, state) = spec_2x3(71);
        let jp = state.joint_precision(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let n = 200_000;
        let mut terms = Vec::with_capacity(n);
        for _ in 0..n {
            let w = jp.sample(&mut rng);
            let mut ll = 0.0;
            for i in 0..2 {
                let y = spec.y(i);
                let mean = spec.x(i) * &state.beta[i];
                for j in 0..3 {
                    ll += ln_normal(y[j], mean[j] + w[i * 3 + j], state.sigma2[i]);
                }
            }
            terms.push(ll);
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean_exp: f64 = terms.iter().map(|t| (t - max).exp()).sum::<f64>() / n as f64;
        let mc = max + mean_exp.ln();
        // MC standard error on the log scale via the delta method.
        let var: f64 = terms
            .iter()
            .map(|t| ((t - max).exp() - mean_exp).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt() / mean_exp;
        let got = integrated_loglik(&state, &spec).unwrap();
        assert!(
            (got - mc).abs() < 3.0 * se + 1e-6,
            "integrated {got} vs MC {mc} (se {se})"
        );
    }

    #[test]
    fn integrated_relabel_consistent() {
        // Renaming regions everywhere (labels only; the frozen region ordering
        // stays put, since DAGAR depends on it) and shuffling data-file row
        // order leaves the integrated likelihood unchanged.
        let g = Arc::new(ArealGraph::from_adjacency_str("regions: A,B,C\nA,B\nB,C\n").unwrap());
        let csv = "region,disease,outcome,x1\n\
                   A,d1,1.0,0.5\nB,d1,2.0,-0.5\nC,d1,0.5,1.5\n\
                   A,d2,0.2,2.0\nB,d2,0.4,0.3\nC,d2,-0.1,1.0\n";
        let shuffled = "region,disease,outcome,x1\n\
                   Z,d1,0.5,1.5\nX,d1,1.0,0.5\nY,d2,0.4,0.3\n\
                   X,d2,0.2,2.0\nY,d1,2.0,-0.5\nZ,d2,-0.1,1.0\n";
        let g2 =
            Arc::new(ArealGraph::from_adjacency_str("regions: X,Y,Z\nX,Y\nY,Z\n").unwrap());
        let prior = Arc::new(PriorSpec::simulation());
        let d1 = Arc::new(Dataset::from_csv_str(csv, &g).unwrap());
        let d2 = Arc::new(Dataset::from_csv_str(shuffled, &g2).unwrap());
        let s1 = ModelSpec::new(d1, g, prior.clone(), vec![1, 0]).unwrap();
        let s2 = ModelSpec::new(d2, g2, prior, vec![1, 0]).unwrap();
        let mut eta = InteractionCoeffs::zeros(2);
        eta.set(1, 0, 0.3, 0.2);
        let state = ParamState {
            beta: vec![DVector::from_vec(vec![0.1, 0.2]), DVector::from_vec(vec![1.0, -1.0])],
            sigma2: vec![0.5, 0.9],
            tau: vec![1.1, 0.7],
            eta,
            rho: vec![0.4, 0.6],
            w: vec![
                DVector::from_vec(vec![0.1, -0.2, 0.3]),
                DVector::from_vec(vec![-0.1, 0.2, 0.0]),
            ],
        };
        assert_relative_eq!(
            integrated_loglik(&state, &s1).unwrap(),
            integrated_loglik(&state, &s2).unwrap(),
            epsilon = 1e-10
        );
    }
}
