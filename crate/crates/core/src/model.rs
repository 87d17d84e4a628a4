//! Data, priors and parameter state for one fixed disease ordering.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::joint::{InteractionCoeffs, JointPrecision};

/// Outcomes and design matrices for q diseases over k regions, in the
/// original (file) disease order.
#[derive(Debug, Clone)]
pub struct Dataset {
    diseases: Vec<String>,
    /// y_i per disease, length k, region order matching the graph.
    y: Vec<DVector<f64>>,
    /// X_i per disease, k x p_i, first column all ones.
    x: Vec<DMatrix<f64>>,
}

impl Dataset {
    /// Builds from per-disease outcomes and covariate columns (intercept is
    /// prepended here). Ranks and shapes are validated.
    pub fn new(
        diseases: Vec<String>,
        y: Vec<DVector<f64>>,
        covariates: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if diseases.is_empty() || diseases.len() != y.len() || y.len() != covariates.len() {
            return Err(Error::dimension(
                "diseases, outcomes and covariate blocks must have equal nonzero length",
            ));
        }
        let k = y[0].len();
        let mut x = Vec::with_capacity(y.len());
        for (i, (yi, ci)) in y.iter().zip(&covariates).enumerate() {
            if yi.len() != k || ci.nrows() != k {
                return Err(Error::dimension(format!(
                    "disease '{}' has {} outcome rows, expected {k}",
                    diseases[i],
                    yi.len()
                )));
            }
            if yi.iter().any(|v| !v.is_finite()) || ci.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite value in data for disease '{}'",
                    diseases[i]
                )));
            }
            let mut xi = DMatrix::zeros(k, ci.ncols() + 1);
            xi.column_mut(0).fill(1.0);
            xi.view_mut((0, 1), (k, ci.ncols())).copy_from(ci);
            let rank = xi.clone().svd(false, false).rank(1e-9 * (k as f64).sqrt());
            if rank < xi.ncols() {
                return Err(Error::validation(format!(
                    "design matrix for disease '{}' is rank-deficient ({} < {})",
                    diseases[i],
                    rank,
                    xi.ncols()
                )));
            }
            x.push(xi);
        }
        Ok(Dataset { diseases, y, x })
    }

    /// Parses the CSV interface: header `region,disease,outcome,x1,...,xp`,
    /// one row per (region, disease). Diseases are ordered by first
    /// appearance; regions must cover the graph exactly. A disease may use a
    /// suffix of blank covariate cells to declare fewer covariates.
    pub fn from_csv_str(text: &str, graph: &ArealGraph) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty data file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
        if cols.len() < 3 || cols[0] != "region" || cols[1] != "disease" || cols[2] != "outcome" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected header `region,disease,outcome,x1,...`".into(),
            });
        }
        let max_p = cols.len() - 3;
        let k = graph.k();
        let mut disease_order: Vec<String> = Vec::new();
        // disease -> region -> (outcome, covariates)
        let mut rows: HashMap<String, HashMap<usize, (f64, Vec<f64>)>> = HashMap::new();
        for (lineno, raw) in lines {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
            if fields.len() < 3 || fields.len() > 3 + max_p {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected between 3 and {} fields", 3 + max_p),
                });
            }
            let region = graph.label_index(fields[0]).ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("region '{}' not in adjacency file", fields[0]),
            })?;
            let disease = fields[1].to_string();
            let outcome: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad outcome '{}'", fields[2]),
            })?;
            let mut covs = Vec::new();
            let mut blank_seen = false;
            for f in &fields[3..] {
                if f.is_empty() {
                    blank_seen = true;
                    continue;
                }
                if blank_seen {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: "blank covariate cells must form a suffix".into(),
                    });
                }
                covs.push(f.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad covariate '{f}'"),
                })?);
            }
            if !rows.contains_key(&disease) {
                disease_order.push(disease.clone());
            }
            let per = rows.entry(disease.clone()).or_default();
            if per.insert(region, (outcome, covs)).is_some() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("duplicate row for ({}, {disease})", fields[0]),
                });
            }
        }
        if disease_order.is_empty() {
            return Err(Error::validation("data file contains no rows"));
        }
        let mut y = Vec::new();
        let mut covblocks = Vec::new();
        for d in &disease_order {
            let per = &rows[d];
            let missing: Vec<&str> = (0..k)
                .filter(|j| !per.contains_key(j))
                .map(|j| graph.labels()[j].as_str())
                .collect();
            if !missing.is_empty() {
                return Err(Error::validation(format!(
                    "disease '{d}' missing regions: {}",
                    missing.join(", ")
                )));
            }
            let p = per[&0].1.len();
            if per.values().any(|(_, c)| c.len() != p) {
                return Err(Error::validation(format!(
                    "disease '{d}' has inconsistent covariate counts"
                )));
            }
            let yi = DVector::from_fn(k, |j, _| per[&j].0);
            let ci = DMatrix::from_fn(k, p, |j, c| per[&j].1[c]);
            y.push(yi);
            covblocks.push(ci);
        }
        Dataset::new(disease_order, y, covblocks)
    }

    pub fn from_csv_file(path: impl AsRef<Path>, graph: &ArealGraph) -> Result<Self> {
        Dataset::from_csv_str(&std::fs::read_to_string(path)?, graph)
    }

    /// Serializes back to the CSV interface.
    pub fn to_csv_string(&self, graph: &ArealGraph) -> String {
        let max_p = self.x.iter().map(|x| x.ncols() - 1).max().unwrap_or(0);
        let mut out = String::from("region,disease");
        out.push_str(",outcome");
        for c in 1..=max_p {
            out.push_str(&format!(",x{c}"));
        }
        out.push('\n');
        for (i, d) in self.diseases.iter().enumerate() {
            let p = self.x[i].ncols() - 1;
            for j in 0..self.k() {
                out.push_str(&format!("{},{},{}", graph.labels()[j], d, self.y[i][j]));
                for c in 0..max_p {
                    out.push(',');
                    if c < p {
                        out.push_str(&format!("{}", self.x[i][(j, c + 1)]));
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn q(&self) -> usize {
        self.diseases.len()
    }

    pub fn k(&self) -> usize {
        self.y[0].len()
    }

    pub fn diseases(&self) -> &[String] {
        &self.diseases
    }

    pub fn outcome(&self, disease: usize) -> &DVector<f64> {
        &self.y[disease]
    }

    pub fn design(&self, disease: usize) -> &DMatrix<f64> {
        &self.x[disease]
    }
}

/// Hyperprior specification shared across diseases.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    /// Gamma(shape, rate) on each tau_i (equivalently IG on 1/tau_i).
    pub a_tau: f64,
    pub b_tau: f64,
    /// IG(shape, rate) on each sigma_i^2.
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// N(mu, var) on each beta coefficient.
    pub mu_beta: f64,
    pub var_beta: f64,
    /// N(mu, var) on each eta coefficient.
    pub mu_eta: f64,
    pub var_eta: f64,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.a_tau,
            self.b_tau,
            self.a_sigma,
            self.b_sigma,
            self.var_beta,
            self.var_eta,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::validation(
                "prior shapes, rates and variances must be positive",
            ));
        }
        Ok(())
    }

    /// Preset used for the simulation experiments.
    pub fn simulation() -> Self {
        PriorSpec {
            a_tau: 2.0,
            b_tau: 8.0,
            a_sigma: 2.0,
            b_sigma: 0.4,
            mu_beta: 0.0,
            var_beta: 1000.0,
            mu_eta: 0.0,
            var_eta: 100.0,
        }
    }

    /// Preset used for the incidence-rate data analysis.
    pub fn data_analysis() -> Self {
        PriorSpec {
            a_tau: 2.0,
            b_tau: 0.1,
            a_sigma: 2.0,
            b_sigma: 1.0,
            mu_beta: 0.0,
            var_beta: 1000.0,
            mu_eta: 0.0,
            var_eta: 100.0,
        }
    }
}

/// One fixed disease ordering over a dataset: position `i` in the hierarchy
/// maps to original disease `ordering[i]`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub dataset: Arc<Dataset>,
    pub graph: Arc<ArealGraph>,
    pub prior: Arc<PriorSpec>,
    ordering: Vec<usize>,
}

impl ModelSpec {
    pub fn new(
        dataset: Arc<Dataset>,
        graph: Arc<ArealGraph>,
        prior: Arc<PriorSpec>,
        ordering: Vec<usize>,
    ) -> Result<Self> {
        prior.validate()?;
        let q = dataset.q();
        if dataset.k() != graph.k() {
            return Err(Error::dimension(format!(
                "dataset has {} regions, graph has {}",
                dataset.k(),
                graph.k()
            )));
        }
        let mut seen = vec![false; q];
        if ordering.len() != q || ordering.iter().any(|&d| d >= q || std::mem::replace(&mut seen[d], true)) {
            return Err(Error::validation(format!(
                "ordering {ordering:?} is not a permutation of 0..{q}"
            )));
        }
        Ok(ModelSpec {
            dataset,
            graph,
            prior,
            ordering,
        })
    }

    pub fn q(&self) -> usize {
        self.dataset.q()
    }

    pub fn k(&self) -> usize {
        self.dataset.k()
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// Original disease index at hierarchy position `i`.
    pub fn disease_at(&self, i: usize) -> usize {
        self.ordering[i]
    }

    /// Hierarchy position of original disease `d`.
    pub fn position_of(&self, d: usize) -> usize {
        self.ordering.iter().position(|&x| x == d).unwrap()
    }

    /// Outcome vector at hierarchy position `i`.
    pub fn y(&self, i: usize) -> &DVector<f64> {
        self.dataset.outcome(self.ordering[i])
    }

    /// Design matrix at hierarchy position `i`.
    pub fn x(&self, i: usize) -> &DMatrix<f64> {
        self.dataset.design(self.ordering[i])
    }

    pub fn p(&self, i: usize) -> usize {
        self.x(i).ncols()
    }

    /// Total parameter dimension excluding w: betas + sigma2 + tau + eta + rho.
    pub fn theta_dim(&self) -> usize {
        let q = self.q();
        (0..q).map(|i| self.p(i)).sum::<usize>() + 3 * q + q * (q - 1)
    }
}

/// One MCMC state for a fixed ordering; all fields are position-indexed.
#[derive(Debug, Clone)]
pub struct ParamState {
    pub beta: Vec<DVector<f64>>,
    pub sigma2: Vec<f64>,
    pub tau: Vec<f64>,
    pub eta: InteractionCoeffs,
    pub rho: Vec<f64>,
    pub w: Vec<DVector<f64>>,
}

impl ParamState {
    pub fn supported(&self) -> bool {
        self.sigma2.iter().all(|&s| s > 0.0 && s.is_finite())
            && self.tau.iter().all(|&t| t > 0.0 && t.is_finite())
            && self.rho.iter().all(|&r| r > 0.0 && r < 1.0)
    }

    /// Latent vector stacked in hierarchy order.
    pub fn w_stacked(&self) -> DVector<f64> {
        let k = self.w[0].len();
        let mut out = DVector::zeros(self.w.len() * k);
        for (i, wi) in self.w.iter().enumerate() {
            out.rows_mut(i * k, k).copy_from(wi);
        }
        out
    }

    pub fn joint_precision(&self, spec: &ModelSpec) -> Result<JointPrecision> {
        JointPrecision::build(spec.graph.clone(), &self.tau, &self.rho, &self.eta)
    }
}
