//! Simulation data generators and the order-recovery experiment.
//!
//! Two designs: bivariate data from an exponential-covariance truth (neutral
//! ground, three interaction regimes), and a three-disease design whose data
//! come from a specific hierarchy ordering that the evidence pipeline must
//! recover.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::evidence::{bridge_for_model, enumerate_orderings, posterior_model_probs, BridgeConfig};
use crate::gibbs::{run_chain, ChainConfig};
use crate::graph::ArealGraph;
use crate::joint::{CrossMoments, InteractionCoeffs, JointPrecision};
use crate::model::{Dataset, ModelSpec, PriorSpec};

/// D(rho) with entries exp(-phi d(j, j')), phi = -log(rho), Euclidean d.
pub fn exp_decay_covariance(coords: &[(f64, f64)], rho: f64) -> Result<DMatrix<f64>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::validation(format!(
            "decay parameter must lie in (0, 1), got {rho}"
        )));
    }
    let k = coords.len();
    let mut d = DMatrix::zeros(k, k);
    let log_rho = rho.ln();
    for a in 0..k {
        for b in 0..k {
            let dx = coords[a].0 - coords[b].0;
            let dy = coords[a].1 - coords[b].1;
            let dist = (dx * dx + dy * dy).sqrt();
            if a != b && dist == 0.0 {
                return Err(Error::validation(format!(
                    "coincident coordinates for sites {a} and {b}"
                )));
            }
            d[(a, b)] = (log_rho * dist).exp();
        }
    }
    Ok(d)
}

/// Interaction regimes for the bivariate experiment: (eta0, eta1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaRegime {
    Low,
    Medium,
    High,
}

impl EtaRegime {
    pub fn eta(self) -> (f64, f64) {
        match self {
            EtaRegime::Low => (0.05, 0.1),
            EtaRegime::Medium => (0.5, 0.3),
            EtaRegime::High => (2.5, 0.5),
        }
    }

    pub fn all() -> [EtaRegime; 3] {
        [EtaRegime::Low, EtaRegime::Medium, EtaRegime::High]
    }
}

/// Truth settings for a generator run. `beta_true` includes the intercept;
/// covariate columns are drawn once and reused across replicates.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub graph: Arc<ArealGraph>,
    /// Site coordinates; required by the exponential-covariance truth.
    pub coords: Option<Vec<(f64, f64)>>,
    pub beta_true: Vec<DVector<f64>>,
    pub tau_true: Vec<f64>,
    pub rho_true: Vec<f64>,
    pub eta_true: InteractionCoeffs,
    pub sigma2_true: Vec<f64>,
    pub n_replicates: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let q = self.beta_true.len();
        if q == 0
            || self.tau_true.len() != q
            || self.rho_true.len() != q
            || self.sigma2_true.len() != q
            || self.eta_true.q() != q
        {
            return Err(Error::dimension("generator parameter shapes disagree"));
        }
        if let Some(c) = &self.coords {
            if c.len() != self.graph.k() {
                return Err(Error::dimension(format!(
                    "{} coordinates for {} regions",
                    c.len(),
                    self.graph.k()
                )));
            }
        }
        if self.n_replicates == 0 {
            return Err(Error::validation("n_replicates must be at least 1"));
        }
        if self
            .tau_true
            .iter()
            .chain(&self.sigma2_true)
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::validation("tau and sigma2 truths must be positive"));
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.beta_true.len()
    }
}

/// Generated replicates plus the latent truth, disease-indexed as generated.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub datasets: Vec<Dataset>,
    /// true_w[replicate][disease], original disease order.
    pub true_w: Vec<Vec<DVector<f64>>>,
    /// Fixed covariate blocks (no intercept column), one per disease.
    pub covariates: Vec<DMatrix<f64>>,
}

fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn draw_covariates<R: Rng + ?Sized>(
    beta_true: &[DVector<f64>],
    k: usize,
    rng: &mut R,
) -> Vec<DMatrix<f64>> {
    beta_true
        .iter()
        .map(|b| DMatrix::from_fn(k, b.len() - 1, |_, _| StandardNormal.sample(rng)))
        .collect()
}

fn observe<R: Rng + ?Sized>(
    cfg_beta: &[DVector<f64>],
    sigma2: &[f64],
    covariates: &[DMatrix<f64>],
    w: &[DVector<f64>],
    names: &[String],
    rng: &mut R,
) -> Result<Dataset> {
    let k = w[0].len();
    let mut y = Vec::with_capacity(w.len());
    for (i, wi) in w.iter().enumerate() {
        let b = &cfg_beta[i];
        let sd = sigma2[i].sqrt();
        let yi = DVector::from_fn(k, |j, _| {
            let mut mean = b[0];
            for c in 0..covariates[i].ncols() {
                mean += b[c + 1] * covariates[i][(j, c)];
            }
            mean + wi[j] + sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        });
        y.push(yi);
    }
    Dataset::new(names.to_vec(), y, covariates.to_vec())
}

/// Bivariate replicates from the exponential-covariance truth: each latent
/// precision is D(rho_i)^{-1} scaled by tau_i, chained through the
/// interaction block A = eta0 I + eta1 M.
pub fn generate_bivariate(cfg: &GeneratorConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    if cfg.q() != 2 {
        return Err(Error::validation(format!(
            "bivariate generator requires q = 2, got {}",
            cfg.q()
        )));
    }
    let coords = cfg.coords.as_ref().ok_or_else(|| {
        Error::validation("exponential-covariance truth requires site coordinates")
    })?;
    let k = cfg.graph.k();
    let chol: Vec<_> = cfg
        .rho_true
        .iter()
        .map(|&r| {
            exp_decay_covariance(coords, r)?
                .cholesky()
                .ok_or_else(|| Error::numerical("exponential covariance is not SPD"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let covariates = draw_covariates(&cfg.beta_true, k, &mut rng);
    let names = vec!["disease1".to_string(), "disease2".to_string()];
    let (e0, e1) = (cfg.eta_true.eta0(1, 0), cfg.eta_true.eta1(1, 0));
    let mut datasets = Vec::with_capacity(cfg.n_replicates);
    let mut true_w = Vec::with_capacity(cfg.n_replicates);
    for _ in 0..cfg.n_replicates {
        let w1 = chol[0].l() * standard_normal_vec(&mut rng, k) / cfg.tau_true[0].sqrt();
        let eps2 = chol[1].l() * standard_normal_vec(&mut rng, k) / cfg.tau_true[1].sqrt();
        let w2 = crate::gibbs::apply_coupling(&cfg.graph, e0, e1, &w1) + eps2;
        let w = vec![w1, w2];
        datasets.push(observe(
            &cfg.beta_true,
            &cfg.sigma2_true,
            &covariates,
            &w,
            &names,
            &mut rng,
        )?);
        true_w.push(w);
    }
    Ok(SimulatedData {
        datasets,
        true_w,
        covariates,
    })
}

/// Reference truth for the bivariate experiment at a given regime.
pub fn reference_bivariate_config(
    graph: Arc<ArealGraph>,
    coords: Vec<(f64, f64)>,
    regime: EtaRegime,
    n_replicates: usize,
    seed: u64,
) -> GeneratorConfig {
    let (e0, e1) = regime.eta();
    let mut eta = InteractionCoeffs::zeros(2);
    eta.set(1, 0, e0, e1);
    GeneratorConfig {
        graph,
        coords: Some(coords),
        beta_true: vec![
            DVector::from_vec(vec![1.0, 5.0]),
            DVector::from_vec(vec![2.0, 4.0, 5.0]),
        ],
        tau_true: vec![0.25, 0.25],
        rho_true: vec![0.2, 0.8],
        eta_true: eta,
        sigma2_true: vec![0.4, 0.4],
        n_replicates,
        seed,
    }
}

/// Within-region latent moments for q = 2 from explicit per-disease
/// covariances D_i (the inverses of the unscaled precisions).
pub fn within_region_moments(
    d1: &DMatrix<f64>,
    d2: &DMatrix<f64>,
    tau: (f64, f64),
    eta: (f64, f64),
    graph: &ArealGraph,
) -> Vec<CrossMoments> {
    let k = graph.k();
    let (t1, t2) = tau;
    let (e0, e1) = eta;
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let nbr_sum: f64 = graph.neighbors(j).iter().map(|&jp| d1[(j, jp)]).sum();
        let cov = (e0 * d1[(j, j)] + e1 * nbr_sum) / t1;
        let var1 = d1[(j, j)] / t1;
        let mut cross = 0.0;
        for &jp in graph.neighbors(j) {
            let inner: f64 = graph.neighbors(j).iter().map(|&jpp| d1[(jpp, jp)]).sum();
            cross += e0 * d1[(j, jp)] + e1 * inner;
        }
        let var2 =
            (e0 * (e0 * d1[(j, j)] + e1 * nbr_sum) + e1 * cross) / t1 + d2[(j, j)] / t2;
        out.push(CrossMoments {
            cov,
            var1,
            var2,
            corr: cov / (var1 * var2).sqrt(),
        });
    }
    out
}

/// Mean within-region cross-disease correlation implied by a bivariate
/// exponential-covariance truth.
pub fn mean_regime_correlation(cfg: &GeneratorConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.q() != 2 {
        return Err(Error::validation("regime correlation requires q = 2"));
    }
    let coords = cfg
        .coords
        .as_ref()
        .ok_or_else(|| Error::validation("coordinates required"))?;
    let d1 = exp_decay_covariance(coords, cfg.rho_true[0])?;
    let d2 = exp_decay_covariance(coords, cfg.rho_true[1])?;
    let moments = within_region_moments(
        &d1,
        &d2,
        (cfg.tau_true[0], cfg.tau_true[1]),
        (cfg.eta_true.eta0(1, 0), cfg.eta_true.eta1(1, 0)),
        &cfg.graph,
    );
    Ok(moments.iter().map(|m| m.corr).sum::<f64>() / moments.len() as f64)
}

/// Position-indexed truth for the three-disease design: tau, rho and the six
/// interaction coefficients are attached to hierarchy positions.
pub fn three_disease_positional_params() -> (Vec<f64>, Vec<f64>, InteractionCoeffs) {
    let tau = vec![0.25, 0.25, 0.25];
    let rho = vec![0.2, 0.8, 0.5];
    let mut eta = InteractionCoeffs::zeros(3);
    eta.set(1, 0, 0.5, 0.3);
    eta.set(2, 0, 1.0, 0.6);
    eta.set(2, 1, 1.5, 0.9);
    (tau, rho, eta)
}

/// Per-original-disease regression truths for the three-disease design.
pub fn three_disease_beta_sigma() -> (Vec<DVector<f64>>, Vec<f64>) {
    (
        vec![
            DVector::from_vec(vec![1.0, 5.0]),
            DVector::from_vec(vec![2.0, 4.0, 5.0]),
            DVector::from_vec(vec![5.0, 3.0, 6.0]),
        ],
        vec![0.4, 0.4, 0.4],
    )
}

/// Replicates from a hierarchy built in `true_order`, with position-indexed
/// latent parameters and original-disease regression truths. The returned w
/// vectors are aligned back to original disease indices.
pub fn generate_ordered(
    graph: &Arc<ArealGraph>,
    true_order: &[usize],
    tau_pos: &[f64],
    rho_pos: &[f64],
    eta_pos: &InteractionCoeffs,
    beta_orig: &[DVector<f64>],
    sigma2_orig: &[f64],
    n_replicates: usize,
    seed: u64,
) -> Result<SimulatedData> {
    let q = beta_orig.len();
    let mut seen = vec![false; q];
    if true_order.len() != q
        || true_order
            .iter()
            .any(|&d| d >= q || std::mem::replace(&mut seen[d], true))
    {
        return Err(Error::validation(format!(
            "true order {true_order:?} is not a permutation of 0..{q}"
        )));
    }
    if n_replicates == 0 {
        return Err(Error::validation("n_replicates must be at least 1"));
    }
    let jp = JointPrecision::build(graph.clone(), tau_pos, rho_pos, eta_pos)?;
    let k = graph.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let covariates = draw_covariates(beta_orig, k, &mut rng);
    let names: Vec<String> = (0..q).map(|d| format!("disease{}", d + 1)).collect();
    let mut datasets = Vec::with_capacity(n_replicates);
    let mut true_w = Vec::with_capacity(n_replicates);
    for _ in 0..n_replicates {
        let stacked = jp.sample(&mut rng);
        // Position block i belongs to original disease true_order[i].
        let mut w: Vec<DVector<f64>> = vec![DVector::zeros(k); q];
        for (pos, &d) in true_order.iter().enumerate() {
            w[d] = DVector::from_column_slice(&stacked.as_slice()[pos * k..(pos + 1) * k]);
        }
        datasets.push(observe(
            beta_orig,
            sigma2_orig,
            &covariates,
            &w,
            &names,
            &mut rng,
        )?);
        true_w.push(w);
    }
    Ok(SimulatedData {
        datasets,
        true_w,
        covariates,
    })
}

/// Three-disease replicates at the reference truth values.
pub fn generate_three_disease(
    graph: &Arc<ArealGraph>,
    true_order: &[usize],
    n_replicates: usize,
    seed: u64,
) -> Result<SimulatedData> {
    let (tau, rho, eta) = three_disease_positional_params();
    let (beta, sigma2) = three_disease_beta_sigma();
    generate_ordered(
        graph,
        true_order,
        &tau,
        &rho,
        &eta,
        &beta,
        &sigma2,
        n_replicates,
        seed,
    )
}

/// Selection proportions from the order-recovery experiment: row = true
/// order, column = ordering with the highest posterior probability.
#[derive(Debug, Clone)]
pub struct OrderRecoveryResult {
    pub orderings: Vec<Vec<usize>>,
    pub proportions: DMatrix<f64>,
    /// Replicates dropped because at least one candidate fit failed.
    pub failures: usize,
}

pub fn run_order_recovery(
    graph: &Arc<ArealGraph>,
    n_replicates: usize,
    chain: &ChainConfig,
    bridge: &BridgeConfig,
    seed: u64,
) -> Result<OrderRecoveryResult> {
    if n_replicates == 0 {
        return Err(Error::validation("order recovery needs at least 1 replicate"));
    }
    let orderings = enumerate_orderings(3)?;
    let t = orderings.len();
    let prior = Arc::new(PriorSpec::simulation());
    let uniform = vec![1.0 / t as f64; t];
    let mut proportions = DMatrix::zeros(t, t);
    let mut failures = 0usize;
    for (row, true_ord) in orderings.iter().enumerate() {
        let sim = generate_three_disease(graph, true_ord, n_replicates, seed + row as u64)?;
        let mut counts = vec![0usize; t];
        let mut ok = 0usize;
        for (rep, dataset) in sim.datasets.iter().enumerate() {
            let dataset = Arc::new(dataset.clone());
            let fit_one = |m: usize| -> Result<f64> {
                let spec = ModelSpec::new(
                    dataset.clone(),
                    graph.clone(),
                    prior.clone(),
                    orderings[m].clone(),
                )?;
                let cfg = ChainConfig {
                    seed: seed
                        .wrapping_mul(0x9E3779B97F4A7C15)
                        .wrapping_add((row * 1000 + rep * 10 + m) as u64),
                    ..chain.clone()
                };
                let samples = run_chain(&spec, &cfg)?;
                let mut brng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEECE66D);
                Ok(bridge_for_model(&spec, &samples, bridge, &mut brng)?.log_ml)
            };
            let log_mls: Result<Vec<f64>> = (0..t).map(fit_one).collect();
            match log_mls {
                Ok(ls) => {
                    let probs = posterior_model_probs(&ls, &uniform)?;
                    let best = probs
                        .posterior
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0;
                    counts[best] += 1;
                    ok += 1;
                }
                Err(_) => failures += 1,
            }
        }
        if ok > 0 {
            for (col, c) in counts.iter().enumerate() {
                proportions[(row, col)] = *c as f64 / ok as f64;
            }
        }
    }
    Ok(OrderRecoveryResult {
        orderings,
        proportions,
        failures,
    })
}

/// Default desk-scale stand-in for a 48-region map: a 7x7 rook grid with the
/// last corner removed, integer site coordinates.
pub fn default_geometry_48() -> (Arc<ArealGraph>, Vec<(f64, f64)>) {
    let full = ArealGraph::grid(7, 7).expect("grid");
    let graph = full.without_regions(&[48]).expect("drop corner");
    let coords: Vec<(f64, f64)> = (0..49)
        .filter(|&j| j != 48)
        .map(|j| ((j % 7) as f64, (j / 7) as f64))
        .collect();
    (Arc::new(graph), coords)
}

/// Parses `label,x,y` coordinates, returned in graph region order.
pub fn coords_from_csv_str(text: &str, graph: &ArealGraph) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty coordinates file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    if cols != ["label", "x", "y"] {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header `label,x,y`".into(),
        });
    }
    let mut coords: Vec<Option<(f64, f64)>> = vec![None; graph.k()];
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "expected 3 fields".into(),
            });
        }
        let j = graph.label_index(fields[0]).ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: format!("region '{}' not in adjacency", fields[0]),
        })?;
        let x: f64 = fields[1].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad x '{}'", fields[1]),
        })?;
        let y: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad y '{}'", fields[2]),
        })?;
        if coords[j].replace((x, y)).is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("duplicate coordinates for '{}'", fields[0]),
            });
        }
    }
    coords
        .into_iter()
        .enumerate()
        .map(|(j, c)| {
            c.ok_or_else(|| {
                Error::validation(format!("missing coordinates for region '{}'", graph.labels()[j]))
            })
        })
        .collect()
}

pub fn coords_from_csv_file(path: impl AsRef<Path>, graph: &ArealGraph) -> Result<Vec<(f64, f64)>> {
    coords_from_csv_str(&std::fs::read_to_string(path)?, graph)
}

pub fn coords_to_csv_string(coords: &[(f64, f64)], graph: &ArealGraph) -> String {
    let mut out = String::from("label,x,y\n");
    for (j, (x, y)) in coords.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", graph.labels()[j], x, y));
    }
    out
}
