//! Gibbs sampler for the hierarchical model, with a scalar random-walk
//! Metropolis step for each logit-transformed spatial autocorrelation.
//!
//! The sweep order is beta, sigma2, w, tau, eta, gamma. Dense per-disease
//! matrices Q, QM and MQM are cached and rebuilt only when the owning rho
//! changes, so a sweep costs a handful of k x k products and Choleskys.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::dagar::DagarPrecision;
use crate::error::{Error, Result};
use crate::graph::{ArealGraph, DirectedNeighborSets};
use crate::joint::InteractionCoeffs;
use crate::likelihood::{cholesky_with_jitter, log_posterior_kernel};
use crate::model::{ModelSpec, ParamState};

/// Chain length, burn-in, thinning and step-size adaptation settings.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial random-walk scale for each gamma_i.
    pub rw_step: f64,
    /// Target acceptance rate for burn-in adaptation.
    pub adapt_target: f64,
    /// Iterations per adaptation window (burn-in only).
    pub adapt_window: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 6000,
            n_burnin: 2000,
            thin: 1,
            seed: 0,
            rw_step: 0.5,
            adapt_target: 0.35,
            adapt_window: 100,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burnin >= self.n_iter {
            return Err(Error::validation(format!(
                "n_burnin ({}) must be below n_iter ({})",
                self.n_burnin, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::validation("thin must be at least 1"));
        }
        if !(self.rw_step > 0.0) {
            return Err(Error::validation("rw_step must be positive"));
        }
        if !(self.adapt_target > 0.1 && self.adapt_target < 0.6) {
            return Err(Error::validation("adapt_target must lie in (0.1, 0.6)"));
        }
        if self.adapt_window == 0 {
            return Err(Error::validation("adapt_window must be at least 1"));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.n_burnin).div_ceil(self.thin)
    }
}

/// Retained draws plus the per-draw log posterior kernel and the post-burn-in
/// Metropolis acceptance rate for each gamma_i.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub draws: Vec<ParamState>,
    pub lp: Vec<f64>,
    pub accept_rate: Vec<f64>,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Column layout of the CSV export; indices are 1-based hierarchy
    /// positions for the fitted ordering.
    pub fn column_names(spec: &ModelSpec) -> Vec<String> {
        let q = spec.q();
        let mut names = Vec::new();
        for i in 0..q {
            for p in 0..spec.p(i) {
                names.push(format!("beta[{}][{}]", i + 1, p + 1));
            }
        }
        for i in 0..q {
            names.push(format!("sigma2[{}]", i + 1));
        }
        for i in 0..q {
            names.push(format!("tau[{}]", i + 1));
        }
        for i in 0..q {
            names.push(format!("rho[{}]", i + 1));
        }
        for i in 0..q {
            for ip in 0..i {
                names.push(format!("eta0[{}][{}]", i + 1, ip + 1));
                names.push(format!("eta1[{}][{}]", i + 1, ip + 1));
            }
        }
        for i in 0..q {
            for j in 0..spec.k() {
                names.push(format!("w[{}][{}]", i + 1, j + 1));
            }
        }
        names.push("lp".into());
        names
    }

    /// One CSV row per retained draw, columns per `column_names`.
    pub fn flatten(state: &ParamState, lp: f64) -> Vec<f64> {
        let mut row = Vec::new();
        for b in &state.beta {
            row.extend(b.iter().copied());
        }
        row.extend(state.sigma2.iter().copied());
        row.extend(state.tau.iter().copied());
        row.extend(state.rho.iter().copied());
        row.extend(state.eta.flat());
        for w in &state.w {
            row.extend(w.iter().copied());
        }
        row.push(lp);
        row
    }

    pub fn to_csv_string(&self, spec: &ModelSpec) -> String {
        let mut out = Self::column_names(spec).join(",");
        out.push('\n');
        for (state, lp) in self.draws.iter().zip(&self.lp) {
            let row = Self::flatten(state, *lp);
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format!("{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-disease dense caches keyed to the current rho values.
pub struct DiseaseCaches {
    ns: DirectedNeighborSets,
    m: DMatrix<f64>,
    items: Vec<DiseaseCache>,
}

pub struct DiseaseCache {
    pub dagar: DagarPrecision,
    /// Dense Q(rho_i), tau-free.
    pub q: DMatrix<f64>,
    pub qm: DMatrix<f64>,
    pub mqm: DMatrix<f64>,
}

impl DiseaseCaches {
    pub fn build(graph: &ArealGraph, rho: &[f64]) -> Result<Self> {
        let ns = DirectedNeighborSets::from_graph(graph);
        let m = graph.adjacency_dense();
        let items = rho
            .iter()
            .map(|&r| Self::make(&ns, &m, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiseaseCaches { ns, m, items })
    }

    fn make(ns: &DirectedNeighborSets, m: &DMatrix<f64>, rho: f64) -> Result<DiseaseCache> {
        let dagar = DagarPrecision::build(ns, rho)?;
        let q = dagar.dense()?;
        let qm = &q * m;
        let mqm = m * &qm;
        Ok(DiseaseCache { dagar, q, qm, mqm })
    }

    pub fn refresh(&mut self, i: usize, rho: f64) -> Result<()> {
        self.items[i] = Self::make(&self.ns, &self.m, rho)?;
        Ok(())
    }

    pub fn item(&self, i: usize) -> &DiseaseCache {
        &self.items[i]
    }

    pub fn neighbor_sets(&self) -> &DirectedNeighborSets {
        &self.ns
    }
}

fn std_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Draw from N(P^{-1} b, P^{-1}) via one Cholesky of the precision P.
pub fn sample_mvn_from_precision<R: Rng + ?Sized>(
    prec: DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky_with_jitter(prec)?;
    let mean = chol.solve(b);
    let z = std_normal_vec(rng, mean.len());
    // L' u = z gives u ~ N(0, P^{-1}).
    let u = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    Ok(mean + u)
}

fn draw_gamma_dist<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let d = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::numerical(format!("bad gamma parameters: {e}")))?;
    Ok(d.sample(rng))
}

/// e0 v + e1 M v, one interaction block applied to a region vector.
pub fn apply_coupling(g: &ArealGraph, e0: f64, e1: f64, v: &DVector<f64>) -> DVector<f64> {
    let mut mv = vec![0.0; v.len()];
    g.adjacency_matvec(v.as_slice(), &mut mv);
    DVector::from_fn(v.len(), |j, _| e0 * v[j] + e1 * mv[j])
}

/// r_i = w_i - sum_{i' < i} A_{ii'} w_{i'}.
pub fn coupling_residual(state: &ParamState, g: &ArealGraph, i: usize) -> DVector<f64> {
    let mut r = state.w[i].clone();
    for ip in 0..i {
        r -= apply_coupling(g, state.eta.eta0(i, ip), state.eta.eta1(i, ip), &state.w[ip]);
    }
    r
}

/// Precision matrix and shifted vector b of the beta_i full conditional
/// N(P^{-1} b, P^{-1}).
pub fn beta_conditional(state: &ParamState, spec: &ModelSpec, i: usize) -> (DMatrix<f64>, DVector<f64>) {
    let pr = &spec.prior;
    let x = spec.x(i);
    let inv_s2 = 1.0 / state.sigma2[i];
    let p = x.ncols();
    let mut prec = x.transpose() * x * inv_s2;
    for a in 0..p {
        prec[(a, a)] += 1.0 / pr.var_beta;
    }
    let resid = spec.y(i) - &state.w[i];
    let b = x.transpose() * resid * inv_s2
        + DVector::from_element(p, pr.mu_beta / pr.var_beta);
    (prec, b)
}

pub fn update_beta<R: Rng + ?Sized>(
    state: &mut ParamState,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<()> {
    for i in 0..spec.q() {
        let (prec, b) = beta_conditional(state, spec, i);
        state.beta[i] = sample_mvn_from_precision(prec, &b, rng)?;
    }
    Ok(())
}

/// (shape, rate) of the sigma_i^2 inverse-gamma full conditional.
pub fn sigma2_conditional(state: &ParamState, spec: &ModelSpec, i: usize) -> (f64, f64) {
    let resid = spec.y(i) - spec.x(i) * &state.beta[i] - &state.w[i];
    (
        spec.prior.a_sigma + spec.k() as f64 / 2.0,
        spec.prior.b_sigma + 0.5 * resid.norm_squared(),
    )
}

pub fn update_sigma2<R: Rng + ?Sized>(
    state: &mut ParamState,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<()> {
    for i in 0..spec.q() {
        let (shape, rate) = sigma2_conditional(state, spec, i);
        state.sigma2[i] = 1.0 / draw_gamma_dist(shape, rate, rng)?;
    }
    Ok(())
}

/// Precision matrix and shifted vector of the w_i full conditional.
pub fn w_conditional(
    state: &ParamState,
    spec: &ModelSpec,
    caches: &DiseaseCaches,
    i: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let (q, k) = (spec.q(), spec.k());
    let g = spec.graph.as_ref();
    let inv_s2 = 1.0 / state.sigma2[i];
    let mut prec = caches.item(i).q.clone() * state.tau[i];
    for n in (i + 1)..q {
        let e0 = state.eta.eta0(n, i);
        let e1 = state.eta.eta1(n, i);
        let c = caches.item(n);
        let t = state.tau[n];
        // A' Q A = e0^2 Q + e0 e1 (QM + (QM)') + e1^2 MQM, all cached.
        for col in 0..k {
            for row in 0..k {
                let v = e0 * e0 * c.q[(row, col)]
                    + e0 * e1 * (c.qm[(row, col)] + c.qm[(col, row)])
                    + e1 * e1 * c.mqm[(row, col)];
                prec[(row, col)] += t * v;
            }
        }
    }
    for j in 0..k {
        prec[(j, j)] += inv_s2;
    }

    let mut b = (spec.y(i) - spec.x(i) * &state.beta[i]) * inv_s2;
    if i > 0 {
        let mut s = DVector::zeros(k);
        for ip in 0..i {
            s += apply_coupling(g, state.eta.eta0(i, ip), state.eta.eta1(i, ip), &state.w[ip]);
        }
        b += &caches.item(i).q * s * state.tau[i];
    }
    for n in (i + 1)..q {
        let mut v = state.w[n].clone();
        for ip in 0..n {
            if ip == i {
                continue;
            }
            v -= apply_coupling(g, state.eta.eta0(n, ip), state.eta.eta1(n, ip), &state.w[ip]);
        }
        let u = &caches.item(n).q * v;
        b += apply_coupling(g, state.eta.eta0(n, i), state.eta.eta1(n, i), &u) * state.tau[n];
    }
    (prec, b)
}

pub fn update_w<R: Rng + ?Sized>(
    state: &mut ParamState,
    spec: &ModelSpec,
    caches: &DiseaseCaches,
    rng: &mut R,
) -> Result<()> {
    for i in 0..spec.q() {
        let (prec, b) = w_conditional(state, spec, caches, i);
        state.w[i] = sample_mvn_from_precision(prec, &b, rng)?;
    }
    Ok(())
}

/// (shape, rate) of the tau_i gamma full conditional.
pub fn tau_conditional(
    state: &ParamState,
    spec: &ModelSpec,
    caches: &DiseaseCaches,
    i: usize,
) -> Result<(f64, f64)> {
    let r = coupling_residual(state, spec.graph.as_ref(), i);
    let quad = caches.item(i).dagar.quad_form(&r)?;
    Ok((
        spec.prior.a_tau + spec.k() as f64 / 2.0,
        spec.prior.b_tau + 0.5 * quad,
    ))
}

pub fn update_tau<R: Rng + ?Sized>(
    state: &mut ParamState,
    spec: &ModelSpec,
    caches: &DiseaseCaches,
    rng: &mut R,
) -> Result<()> {
    for i in 0..spec.q() {
        let (shape, rate) = tau_conditional(state, spec, caches, i)?;
        state.tau[i] = draw_gamma_dist(shape, rate, rng)?;
    }
    Ok(())
}

/// Regressor matrix for the eta_i conditional: column pair (w_{i'}, zeta_{i'})
/// per earlier disease, zeta the neighbor sums of w_{i'}.
pub fn build_delta(w_prev: &[DVector<f64>], g: &ArealGraph) -> DMatrix<f64> {
    let k = g.k();
    let mut d = DMatrix::zeros(k, 2 * w_prev.len());
    for (ip, w) in w_prev.iter().enumerate() {
        let mut mv = vec![0.0; k];
        g.adjacency_matvec(w.as_slice(), &mut mv);
        for j in 0..k {
            d[(j, 2 * ip)] = w[j];
            d[(j, 2 * ip + 1)] = mv[j];
        }
    }
    d
}

/// Precision matrix and shifted vector of the eta_i full conditional, i >= 1.
pub fn eta_conditional(
    state: &ParamState,
    spec: &ModelSpec,
    caches: &DiseaseCaches,
    i: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let pr = &spec.prior;
    let delta = build_delta(&state.w[..i], spec.graph.as_ref());
    let qd = &caches.item(i).q * &delta;
    let mut prec = delta.transpose() * &qd * state.tau[i];
    for a in 0..2 * i {
        prec[(a, a)] += 1.0 / pr.var_eta;
    }
    let b = qd.transpose() * &state.w[i] * state.tau[i]
        + DVector::from_element(2 * i, pr.mu_eta / pr.var_eta);
    (prec, b)
}

pub fn update_eta<R: Rng + ?Sized>(
    state: &mut ParamState,
    spec: &ModelSpec,
    caches: &DiseaseCaches,
    rng: &mut R,
) -> Result<()> {
    for i in 1..spec.q() {
        let (prec, b) = eta_conditional(state, spec, caches, i);
        let draw = sample_mvn_from_precision(prec, &b, rng)?;
        for ip in 0..i {
            state.eta.set(i, ip, draw[2 * ip], draw[2 * ip + 1]);
        }
    }
    Ok(())
}

/// Log target for gamma_i = logit(rho_i) given everything else: the rho_i
/// factor of the latent-field density plus the logit Jacobian. Constant
/// terms in rho_i are dropped.
pub fn gamma_log_target(
    rho: f64,
    tau: f64,
    r: &DVector<f64>,
    ns: &DirectedNeighborSets,
) -> Result<f64> {
    let d = DagarPrecision::build(ns, rho)?;
    Ok(0.5 * d.log_det() - 0.5 * tau * d.quad_form(r)? + (rho * (1.0 - rho)).ln())
}

/// One scalar random-walk Metropolis update per gamma_i; returns accept flags.
pub fn update_gamma<R: Rng + ?Sized>(
    state: &mut ParamState,
    spec: &ModelSpec,
    caches: &mut DiseaseCaches,
    steps: &[f64],
    rng: &mut R,
) -> Result<Vec<bool>> {
    let mut flags = Vec::with_capacity(spec.q());
    for i in 0..spec.q() {
        let r = coupling_residual(state, spec.graph.as_ref(), i);
        let rho = state.rho[i];
        let cache = caches.item(i);
        let cur = 0.5 * cache.dagar.log_det() - 0.5 * state.tau[i] * cache.dagar.quad_form(&r)?
            + (rho * (1.0 - rho)).ln();
        let gamma = (rho / (1.0 - rho)).ln();
        let z: f64 = StandardNormal.sample(rng);
        let gamma_new = gamma + steps[i] * z;
        let rho_new = 1.0 / (1.0 + (-gamma_new).exp());
        let accept = if rho_new > 0.0 && rho_new < 1.0 {
            let prop = gamma_log_target(rho_new, state.tau[i], &r, caches.neighbor_sets())?;
            rng.random::<f64>().ln() < prop - cur
        } else {
            false
        };
        if accept {
            state.rho[i] = rho_new;
            caches.refresh(i, rho_new)?;
        }
        flags.push(accept);
    }
    Ok(flags)
}

/// Starting point: prior-variance-damped least squares for beta, prior means
/// for the scales, rho = 0.5, eta = 0, w = 0.
pub fn initial_state(spec: &ModelSpec) -> Result<ParamState> {
    let pr = &spec.prior;
    let q = spec.q();
    let mut beta = Vec::with_capacity(q);
    for i in 0..q {
        let x = spec.x(i);
        let mut prec = x.transpose() * x;
        for a in 0..x.ncols() {
            prec[(a, a)] += 1.0 / pr.var_beta;
        }
        let chol = cholesky_with_jitter(prec)?;
        beta.push(chol.solve(&(x.transpose() * spec.y(i))));
    }
    let sigma0 = if pr.a_sigma > 1.0 {
        pr.b_sigma / (pr.a_sigma - 1.0)
    } else {
        1.0
    };
    Ok(ParamState {
        beta,
        sigma2: vec![sigma0; q],
        tau: vec![pr.a_tau / pr.b_tau; q],
        eta: InteractionCoeffs::zeros(q),
        rho: vec![0.5; q],
        w: vec![DVector::zeros(spec.k()); q],
    })
}

/// One full sweep over all conditionals; returns gamma accept flags.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ParamState,
    spec: &ModelSpec,
    caches: &mut DiseaseCaches,
    steps: &[f64],
    rng: &mut R,
) -> Result<Vec<bool>> {
    update_beta(state, spec, rng)?;
    update_sigma2(state, spec, rng)?;
    update_w(state, spec, caches, rng)?;
    update_tau(state, spec, caches, rng)?;
    update_eta(state, spec, caches, rng)?;
    update_gamma(state, spec, caches, steps, rng)
}

/// Runs one chain. Deterministic given the seed; the Metropolis step sizes
/// adapt toward the target rate during burn-in only.
pub fn run_chain(spec: &ModelSpec, cfg: &ChainConfig) -> Result<PosteriorSamples> {
    cfg.validate()?;
    let q = spec.q();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = initial_state(spec)?;
    let mut caches = DiseaseCaches::build(spec.graph.as_ref(), &state.rho)?;
    let mut steps = vec![cfg.rw_step; q];
    let mut window_acc = vec![0usize; q];
    let mut post_acc = vec![0usize; q];
    let mut draws = Vec::with_capacity(cfg.n_retained());
    let mut lp = Vec::with_capacity(cfg.n_retained());
    for t in 0..cfg.n_iter {
        let flags = sweep(&mut state, spec, &mut caches, &steps, &mut rng)
            .map_err(|e| Error::numerical(format!("iteration {t}: {e}")))?;
        if t < cfg.n_burnin {
            for (i, f) in flags.iter().enumerate() {
                window_acc[i] += *f as usize;
            }
            if (t + 1) % cfg.adapt_window == 0 {
                for i in 0..q {
                    let rate = window_acc[i] as f64 / cfg.adapt_window as f64;
                    steps[i] = (steps[i] * (rate - cfg.adapt_target).exp()).clamp(1e-3, 10.0);
                    window_acc[i] = 0;
                }
            }
        } else {
            for (i, f) in flags.iter().enumerate() {
                post_acc[i] += *f as usize;
            }
            if (t - cfg.n_burnin) % cfg.thin == 0 {
                let kernel = log_posterior_kernel(&state, spec)
                    .map_err(|e| Error::numerical(format!("iteration {t}: {e}")))?;
                draws.push(state.clone());
                lp.push(kernel);
            }
        }
    }
    let post_n = (cfg.n_iter - cfg.n_burnin) as f64;
    Ok(PosteriorSamples {
        draws,
        lp,
        accept_rate: post_acc.iter().map(|&a| a as f64 / post_n).collect(),
    })
}

/// Split-chain potential scale reduction over one or more traces of equal
/// length; each chain is halved before pooling.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return Err(Error::validation(
            "split potential scale reduction needs chains of length >= 4",
        ));
    }
    let half = chains[0].len() / 2;
    if chains.iter().any(|c| c.len() != chains[0].len()) {
        return Err(Error::dimension("chains must have equal length"));
    }
    let mut subs: Vec<&[f64]> = Vec::new();
    for c in chains {
        subs.push(&c[..half]);
        subs.push(&c[half..2 * half]);
    }
    let m = subs.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = subs.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = subs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}
