//! Command implementations: simulate, fit, compare-orders, report.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Arc, Mutex};

use mdagar::diagnostics::{self, quantile};
use mdagar::evidence::{
    align_to_original, bma_expectation, bridge_for_model, enumerate_orderings,
    posterior_model_probs, BridgeConfig,
};
use mdagar::gibbs::{run_chain, split_rhat, ChainConfig, PosteriorSamples};
use mdagar::graph::ArealGraph;
use mdagar::likelihood::pointwise_loglik;
use mdagar::model::{Dataset, ModelSpec, PriorSpec};
use mdagar::sim::{
    self, coords_from_csv_file, coords_to_csv_string, default_geometry_48, generate_bivariate,
    generate_three_disease, reference_bivariate_config, EtaRegime,
};
use mdagar::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{parse_order, RunConfig, SimulateSection};
use crate::manifest::ManifestBuilder;

/// Runs `f` over `inputs` on up to `jobs` worker threads, preserving order.
pub fn parallel_map<I, O, F>(jobs: usize, inputs: Vec<I>, f: F) -> Vec<O>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Sync,
{
    let n = inputs.len();
    let jobs = jobs.max(1).min(n.max(1));
    if jobs <= 1 {
        return inputs.into_iter().map(f).collect();
    }
    let queue: Mutex<VecDeque<(usize, I)>> =
        Mutex::new(inputs.into_iter().enumerate().collect());
    let out: Mutex<Vec<Option<O>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let item = queue.lock().unwrap().pop_front();
                match item {
                    Some((i, x)) => {
                        let y = f(x);
                        out.lock().unwrap()[i] = Some(y);
                    }
                    None => break,
                }
            });
        }
    });
    out.into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("worker filled slot"))
        .collect()
}

fn adjacency_to_string(g: &ArealGraph) -> String {
    let mut s = format!("regions: {}\n", g.labels().join(","));
    for &(a, b) in g.edges() {
        s.push_str(&format!("{},{}\n", g.labels()[a], g.labels()[b]));
    }
    s
}

fn ensure_out_dir(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    Ok(())
}

fn ordering_display(ordering: &[usize]) -> String {
    ordering
        .iter()
        .map(|d| (d + 1).to_string())
        .collect::<Vec<_>>()
        .join("-")
}

pub fn cmd_simulate(
    config_path: &Path,
    seed_flag: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let seed = cfg.seed(seed_flag);
    let sim_cfg = cfg
        .simulate
        .clone()
        .ok_or_else(|| Error::validation("config is missing the [simulate] section"))?;
    ensure_out_dir(out_dir)?;
    let mut mb = ManifestBuilder::new("simulate", seed);
    mb.config(config_path)?;

    let (graph, coords, default_geometry) = load_geometry(&sim_cfg, &mut mb)?;
    let (data, truth_json) = match sim_cfg.design.as_str() {
        "bivariate" => {
            let coords = coords.ok_or_else(|| {
                Error::validation(
                    "bivariate design uses an exponential-covariance truth and needs coordinates",
                )
            })?;
            let regime = match sim_cfg.regime.as_deref() {
                Some("low") => EtaRegime::Low,
                Some("medium") | None => EtaRegime::Medium,
                Some("high") => EtaRegime::High,
                Some(other) => {
                    return Err(Error::validation(format!(
                        "unknown regime '{other}' (expected low/medium/high)"
                    )))
                }
            };
            if default_geometry {
                mb.emit(out_dir, "coordinates.csv", &coords_to_csv_string(&coords, &graph))?;
            }
            let gen = reference_bivariate_config(
                graph.clone(),
                coords,
                regime,
                sim_cfg.n_replicates,
                seed,
            );
            let data = generate_bivariate(&gen)?;
            let truth = serde_json::json!({
                "design": "bivariate",
                "regime": format!("{regime:?}").to_lowercase(),
                "beta": gen.beta_true.iter().map(|b| b.as_slice().to_vec()).collect::<Vec<_>>(),
                "tau": gen.tau_true,
                "rho": gen.rho_true,
                "eta": [gen.eta_true.eta0(1, 0), gen.eta_true.eta1(1, 0)],
                "sigma2": gen.sigma2_true,
                "seed": seed,
            });
            (data, truth)
        }
        "three-disease" => {
            let order1: Vec<usize> = sim_cfg
                .true_order
                .clone()
                .unwrap_or_else(|| vec![1, 2, 3]);
            if order1.len() != 3 || order1.iter().any(|&d| d == 0 || d > 3) {
                return Err(Error::validation(format!(
                    "true_order must be a 1-based permutation of 1..=3, got {order1:?}"
                )));
            }
            let order: Vec<usize> = order1.iter().map(|&d| d - 1).collect();
            let data = generate_three_disease(&graph, &order, sim_cfg.n_replicates, seed)?;
            let (tau, rho, eta) = sim::three_disease_positional_params();
            let (beta, sigma2) = sim::three_disease_beta_sigma();
            let truth = serde_json::json!({
                "design": "three-disease",
                "true_order": order1,
                "tau_by_position": tau,
                "rho_by_position": rho,
                "eta_flat_by_position": eta.flat(),
                "beta_by_disease": beta.iter().map(|b| b.as_slice().to_vec()).collect::<Vec<_>>(),
                "sigma2_by_disease": sigma2,
                "seed": seed,
            });
            (data, truth)
        }
        other => {
            return Err(Error::validation(format!(
                "unknown design '{other}' (expected bivariate/three-disease)"
            )))
        }
    };

    if default_geometry {
        mb.emit(out_dir, "adjacency.csv", &adjacency_to_string(&graph))?;
    }
    for (r, dataset) in data.datasets.iter().enumerate() {
        mb.emit(
            out_dir,
            &format!("replicate_{:03}.csv", r + 1),
            &dataset.to_csv_string(&graph),
        )?;
        let mut w_csv = format!("region,{}\n", dataset.diseases().join(","));
        for j in 0..graph.k() {
            w_csv.push_str(&graph.labels()[j].to_string());
            for wd in &data.true_w[r] {
                w_csv.push_str(&format!(",{:.17e}", wd[j]));
            }
            w_csv.push('\n');
        }
        mb.emit(out_dir, &format!("truth_w_{:03}.csv", r + 1), &w_csv)?;
    }
    mb.emit(
        out_dir,
        "truth_params.json",
        &serde_json::to_string_pretty(&truth_json).expect("truth serializes"),
    )?;
    mb.finish(out_dir)
}

fn load_geometry(
    sim_cfg: &SimulateSection,
    mb: &mut ManifestBuilder,
) -> Result<(Arc<ArealGraph>, Option<Vec<(f64, f64)>>, bool)> {
    match &sim_cfg.adjacency {
        Some(adj) => {
            let path = Path::new(adj);
            let graph = Arc::new(ArealGraph::from_adjacency_file(path)?);
            mb.input(path)?;
            let coords = match &sim_cfg.coordinates {
                Some(c) => {
                    let cpath = Path::new(c);
                    let coords = coords_from_csv_file(cpath, &graph)?;
                    mb.input(cpath)?;
                    Some(coords)
                }
                None => None,
            };
            Ok((graph, coords, false))
        }
        None => {
            let (graph, coords) = default_geometry_48();
            Ok((graph, Some(coords), true))
        }
    }
}

/// Posterior summaries for every scalar in the sampler's column layout.
fn summary_csv(spec: &ModelSpec, chains: &[PosteriorSamples]) -> String {
    let names = PosteriorSamples::column_names(spec);
    let series: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| {
            let rows: Vec<Vec<f64>> = c
                .draws
                .iter()
                .zip(&c.lp)
                .map(|(s, lp)| PosteriorSamples::flatten(s, *lp))
                .collect();
            (0..names.len())
                .map(|j| rows.iter().map(|r| r[j]).collect())
                .collect()
        })
        .collect();
    let mut out = String::from("parameter,mean,sd,q2.5,q97.5,rhat\n");
    for (j, name) in names.iter().enumerate() {
        let pooled: Vec<f64> = series.iter().flat_map(|c| c[j].iter().copied()).collect();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut sorted = pooled.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let per_chain: Vec<Vec<f64>> = series.iter().map(|c| c[j].clone()).collect();
        let rhat = split_rhat(&per_chain).unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{name},{mean:.8e},{sd:.8e},{:.8e},{:.8e},{rhat:.6}\n",
            quantile(&sorted, 0.025),
            quantile(&sorted, 0.975),
        ));
    }
    out
}

/// WAIC and the predictive D score from pooled retained draws.
fn diagnostics_json(spec: &ModelSpec, chains: &[PosteriorSamples], seed: u64) -> Result<String> {
    let (q, k) = (spec.q(), spec.k());
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut pointwise = DMatrix::zeros(total, q * k);
    let mut replicates = DMatrix::zeros(total, q * k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1A6);
    let mut row = 0;
    for chain in chains {
        for state in &chain.draws {
            let pl = pointwise_loglik(state, spec)?;
            for i in 0..q {
                let mean = spec.x(i) * &state.beta[i] + &state.w[i];
                let sd = state.sigma2[i].sqrt();
                for j in 0..k {
                    pointwise[(row, i * k + j)] = pl[(i, j)];
                    replicates[(row, i * k + j)] = mean[j]
                        + sd * <StandardNormal as Distribution<f64>>::sample(
                            &StandardNormal,
                            &mut rng,
                        );
                }
            }
            row += 1;
        }
    }
    let w = diagnostics::waic(&pointwise)?;
    let mut y = DVector::zeros(q * k);
    for i in 0..q {
        y.rows_mut(i * k, k).copy_from(spec.y(i));
    }
    let d = diagnostics::d_score(&y, &replicates)?;
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "waic": w.waic,
        "lpd_hat": w.lpd_hat,
        "p_waic": w.p_waic,
        "d": d.d,
        "g": d.g,
        "p": d.p,
    }))
    .expect("diagnostics serialize"))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_fit(
    data: &Path,
    adjacency: &Path,
    config_path: Option<&Path>,
    order: Option<&str>,
    seed_flag: Option<u64>,
    out_dir: &Path,
    jobs: usize,
) -> Result<()> {
    let cfg = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cfg.seed(seed_flag);
    let graph = Arc::new(ArealGraph::from_adjacency_file(adjacency)?);
    let dataset = Arc::new(Dataset::from_csv_file(data, &graph)?);
    let ordering = match order {
        Some(text) => parse_order(text, dataset.q())?,
        None => (0..dataset.q()).collect(),
    };
    let prior = Arc::new(cfg.prior()?);
    let spec = ModelSpec::new(dataset, graph, prior, ordering)?;

    ensure_out_dir(out_dir)?;
    let mut mb = ManifestBuilder::new("fit", seed);
    if let Some(p) = config_path {
        mb.config(p)?;
    }
    mb.input(data)?;
    mb.input(adjacency)?;

    let n_chains = cfg.n_chains();
    let chain_cfgs: Vec<ChainConfig> = (0..n_chains)
        .map(|c| cfg.chain(seed.wrapping_add(c as u64)))
        .collect::<Result<Vec<_>>>()?;
    let results = parallel_map(jobs, chain_cfgs.clone(), |c| run_chain(&spec, &c));
    let chains: Vec<PosteriorSamples> = results.into_iter().collect::<Result<Vec<_>>>()?;

    for (c, samples) in chains.iter().enumerate() {
        mb.emit(
            out_dir,
            &format!("samples_chain{}.csv", c + 1),
            &samples.to_csv_string(&spec),
        )?;
    }
    let chain_report: Vec<serde_json::Value> = chains
        .iter()
        .zip(&chain_cfgs)
        .map(|(s, c)| {
            serde_json::json!({
                "seed": c.seed,
                "accept_rate": s.accept_rate,
                "retained": s.len(),
            })
        })
        .collect();
    mb.emit(
        out_dir,
        "chains.json",
        &serde_json::to_string_pretty(&chain_report).expect("chain report serializes"),
    )?;
    mb.emit(out_dir, "summary.csv", &summary_csv(&spec, &chains))?;
    mb.emit(
        out_dir,
        "diagnostics.json",
        &diagnostics_json(&spec, &chains, seed)?,
    )?;
    mb.finish(out_dir)
}

struct OrderFit {
    log_ml: f64,
    mc_iterations: usize,
    /// Posterior means re-indexed to original disease order.
    beta_mean: Vec<DVector<f64>>,
    w_mean: Vec<DVector<f64>>,
}

fn fit_one_ordering(
    dataset: &Arc<Dataset>,
    graph: &Arc<ArealGraph>,
    prior: &Arc<PriorSpec>,
    ordering: &[usize],
    chain: &ChainConfig,
    bridge: &BridgeConfig,
) -> Result<OrderFit> {
    let spec = ModelSpec::new(
        dataset.clone(),
        graph.clone(),
        prior.clone(),
        ordering.to_vec(),
    )?;
    let samples = run_chain(&spec, chain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(chain.seed ^ 0xB41D6E);
    let est = bridge_for_model(&spec, &samples, bridge, &mut rng)?;
    let n = samples.len() as f64;
    let mut beta_mean: Vec<DVector<f64>> =
        (0..spec.q()).map(|i| DVector::zeros(spec.p(i))).collect();
    let mut w_mean: Vec<DVector<f64>> =
        (0..spec.q()).map(|_| DVector::zeros(spec.k())).collect();
    for state in &samples.draws {
        for i in 0..spec.q() {
            beta_mean[i] += &state.beta[i] / n;
            w_mean[i] += &state.w[i] / n;
        }
    }
    Ok(OrderFit {
        log_ml: est.log_ml,
        mc_iterations: est.n_iterations,
        beta_mean: align_to_original(&beta_mean, ordering)?,
        w_mean: align_to_original(&w_mean, ordering)?,
    })
}

pub fn cmd_compare_orders(
    data: &Path,
    adjacency: &Path,
    config_path: Option<&Path>,
    seed_flag: Option<u64>,
    out_dir: &Path,
    jobs: usize,
) -> Result<()> {
    let cfg = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cfg.seed(seed_flag);
    let graph = Arc::new(ArealGraph::from_adjacency_file(adjacency)?);
    let dataset = Arc::new(Dataset::from_csv_file(data, &graph)?);
    let prior = Arc::new(cfg.prior()?);
    let bridge = cfg.bridge();
    let orderings = enumerate_orderings(dataset.q())?;

    ensure_out_dir(out_dir)?;
    let mut mb = ManifestBuilder::new("compare-orders", seed);
    if let Some(p) = config_path {
        mb.config(p)?;
    }
    mb.input(data)?;
    mb.input(adjacency)?;

    let tasks: Vec<(usize, Vec<usize>)> = orderings.iter().cloned().enumerate().collect();
    let results: Vec<Result<OrderFit>> = parallel_map(jobs, tasks, |(m, ordering)| {
        let chain = cfg.chain(seed.wrapping_add(1 + m as u64))?;
        fit_one_ordering(&dataset, &graph, &prior, &ordering, &chain, &bridge)
    });

    let successes: Vec<usize> = (0..results.len())
        .filter(|&m| results[m].is_ok())
        .collect();
    if successes.is_empty() {
        let first = results.into_iter().next().expect("at least one ordering");
        return Err(first.err().expect("all orderings failed"));
    }
    for (m, r) in results.iter().enumerate() {
        if let Err(e) = r {
            mb.note(format!(
                "ordering {} failed: {e}",
                ordering_display(&orderings[m])
            ));
        }
    }
    let log_mls: Vec<f64> = successes
        .iter()
        .map(|&m| results[m].as_ref().unwrap().log_ml)
        .collect();
    let uniform = vec![1.0 / successes.len() as f64; successes.len()];
    let posterior = posterior_model_probs(&log_mls, &uniform)?;
    let mut probs = vec![0.0; results.len()];
    for (slot, &m) in successes.iter().enumerate() {
        probs[m] = posterior.posterior[slot];
    }

    let mut evidence = String::from("model_index,ordering,log_ml,mc_iterations,posterior_prob\n");
    for (m, r) in results.iter().enumerate() {
        let (lml, iters) = match r {
            Ok(f) => (format!("{:.10e}", f.log_ml), f.mc_iterations),
            Err(_) => ("nan".to_string(), 0),
        };
        evidence.push_str(&format!(
            "{},{},{},{},{:.10e}\n",
            m + 1,
            ordering_display(&orderings[m]),
            lml,
            iters,
            probs[m],
        ));
    }
    mb.emit(out_dir, "evidence.csv", &evidence)?;

    // Model-averaged estimates per original disease.
    let ok_probs: Vec<f64> = successes.iter().map(|&m| probs[m]).collect();
    let mut bma_beta = String::from("disease,coefficient,estimate\n");
    let mut bma_w_cols: Vec<DVector<f64>> = Vec::new();
    for d in 0..dataset.q() {
        let beta_means: Vec<DVector<f64>> = successes
            .iter()
            .map(|&m| results[m].as_ref().unwrap().beta_mean[d].clone())
            .collect();
        let avg = bma_expectation(&beta_means, &ok_probs)?;
        for (c, v) in avg.iter().enumerate() {
            let name = if c == 0 {
                "intercept".to_string()
            } else {
                format!("x{c}")
            };
            bma_beta.push_str(&format!("{},{},{:.10e}\n", dataset.diseases()[d], name, v));
        }
        let w_means: Vec<DVector<f64>> = successes
            .iter()
            .map(|&m| results[m].as_ref().unwrap().w_mean[d].clone())
            .collect();
        bma_w_cols.push(bma_expectation(&w_means, &ok_probs)?);
    }
    mb.emit(out_dir, "bma_beta.csv", &bma_beta)?;
    let mut bma_w = format!("region,{}\n", dataset.diseases().join(","));
    for j in 0..graph.k() {
        bma_w.push_str(&graph.labels()[j].to_string());
        for col in &bma_w_cols {
            bma_w.push_str(&format!(",{:.10e}", col[j]));
        }
        bma_w.push('\n');
    }
    mb.emit(out_dir, "bma_w.csv", &bma_w)?;
    mb.finish(out_dir)
}

pub fn cmd_report(out_dir: &Path) -> Result<()> {
    let manifest_path = out_dir.join("manifest.json");
    let manifest: crate::manifest::RunManifest =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
            .map_err(|e| Error::validation(format!("bad manifest: {e}")))?;
    println!("command: {}", manifest.command);
    println!("version: {}", manifest.version);
    println!("seed: {}", manifest.seed);
    println!("wall clock: {:.1}s", manifest.wall_clock_seconds);
    for note in &manifest.notes {
        println!("note: {note}");
    }
    println!("outputs:");
    for o in &manifest.outputs {
        println!("  {o}");
    }
    let diag = out_dir.join("diagnostics.json");
    if diag.exists() {
        println!("\ndiagnostics:");
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&diag)?)
                .map_err(|e| Error::validation(format!("bad diagnostics: {e}")))?;
        for key in ["waic", "lpd_hat", "p_waic", "d", "g", "p"] {
            if let Some(x) = v.get(key).and_then(|x| x.as_f64()) {
                println!("  {key}: {x:.4}");
            }
        }
    }
    let evidence = out_dir.join("evidence.csv");
    if evidence.exists() {
        println!("\nmodel comparison:");
        print!("{}", std::fs::read_to_string(&evidence)?);
    }
    let summary = out_dir.join("summary.csv");
    if summary.exists() {
        println!("\nposterior summary (excluding latent effects):");
        for line in std::fs::read_to_string(&summary)?.lines() {
            if !line.starts_with("w[") {
                println!("{line}");
            }
        }
    }
    Ok(())
}
