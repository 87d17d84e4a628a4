//! TOML run configuration: priors, chain settings, bridge settings and the
//! simulation design, with defaults matching the reference experiments.

use std::path::Path;

use mdagar::evidence::BridgeConfig;
use mdagar::gibbs::ChainConfig;
use mdagar::model::PriorSpec;
use mdagar::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub bridge: BridgeSection,
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    /// `simulation` or `data-analysis`; explicit fields override the preset.
    pub preset: Option<String>,
    pub a_tau: Option<f64>,
    pub b_tau: Option<f64>,
    pub a_sigma: Option<f64>,
    pub b_sigma: Option<f64>,
    pub mu_beta: Option<f64>,
    pub var_beta: Option<f64>,
    pub mu_eta: Option<f64>,
    pub var_eta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub n_iter: Option<usize>,
    pub n_burnin: Option<usize>,
    pub thin: Option<usize>,
    pub n_chains: Option<usize>,
    pub rw_step: Option<f64>,
    pub adapt_target: Option<f64>,
    pub adapt_window: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSection {
    pub split: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub n2: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// `bivariate` or `three-disease`.
    pub design: String,
    /// `low`, `medium` or `high` (bivariate design).
    pub regime: Option<String>,
    /// 1-based hierarchy order of original diseases (three-disease design).
    pub true_order: Option<Vec<usize>>,
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
    pub adjacency: Option<String>,
    pub coordinates: Option<String>,
}

fn default_replicates() -> usize {
    1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::validation(format!(
            "config {}: {e}",
            path.display()
        )))
    }

    pub fn prior(&self) -> Result<PriorSpec> {
        let mut p = match self.prior.preset.as_deref() {
            None | Some("simulation") => PriorSpec::simulation(),
            Some("data-analysis") => PriorSpec::data_analysis(),
            Some(other) => {
                return Err(Error::validation(format!(
                    "unknown prior preset '{other}' (expected `simulation` or `data-analysis`)"
                )))
            }
        };
        let s = &self.prior;
        if let Some(v) = s.a_tau {
            p.a_tau = v;
        }
        if let Some(v) = s.b_tau {
            p.b_tau = v;
        }
        if let Some(v) = s.a_sigma {
            p.a_sigma = v;
        }
        if let Some(v) = s.b_sigma {
            p.b_sigma = v;
        }
        if let Some(v) = s.mu_beta {
            p.mu_beta = v;
        }
        if let Some(v) = s.var_beta {
            p.var_beta = v;
        }
        if let Some(v) = s.mu_eta {
            p.mu_eta = v;
        }
        if let Some(v) = s.var_eta {
            p.var_eta = v;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn chain(&self, seed: u64) -> Result<ChainConfig> {
        let d = ChainConfig::default();
        let c = &self.chain;
        let cfg = ChainConfig {
            n_iter: c.n_iter.unwrap_or(d.n_iter),
            n_burnin: c.n_burnin.unwrap_or(d.n_burnin),
            thin: c.thin.unwrap_or(d.thin),
            seed,
            rw_step: c.rw_step.unwrap_or(d.rw_step),
            adapt_target: c.adapt_target.unwrap_or(d.adapt_target),
            adapt_window: c.adapt_window.unwrap_or(d.adapt_window),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_chains(&self) -> usize {
        self.chain.n_chains.unwrap_or(2).max(1)
    }

    pub fn bridge(&self) -> BridgeConfig {
        let d = BridgeConfig::default();
        let b = &self.bridge;
        BridgeConfig {
            split: b.split.unwrap_or(d.split),
            n2: b.n2.or(d.n2),
            tol: b.tol.unwrap_or(d.tol),
            max_iter: b.max_iter.unwrap_or(d.max_iter),
        }
    }

    /// Seed precedence: command-line flag, then config, then 0.
    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(0)
    }
}

/// Parses a 1-based `--order` list like `2,1,3` into 0-based indices.
pub fn parse_order(text: &str, q: usize) -> Result<Vec<usize>> {
    let order: Vec<usize> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::validation(format!("bad ordering entry '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if order.len() != q || order.iter().any(|&d| d == 0 || d > q) {
        return Err(Error::validation(format!(
            "--order must list each of 1..={q} exactly once, got '{text}'"
        )));
    }
    Ok(order.iter().map(|&d| d - 1).collect())
}
