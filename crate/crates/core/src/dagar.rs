//! Univariate DAGAR precision Q(rho) = (I - B)' F (I - B) in factored form.
//!
//! Storage is O(k + edges): B has one shared coefficient per row (all
//! earlier-ordered neighbors of a region get the same weight) and F is the
//! diagonal of conditional precisions lambda_j.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::DirectedNeighborSets;

/// Dimension above which dense materialization refuses to run.
pub const DENSE_CAP: usize = 512;

#[derive(Debug, Clone)]
pub struct DagarPrecision {
    rho: f64,
    /// N(j) per region, shared with the directed neighbor sets.
    neighbors: Vec<Vec<usize>>,
    /// b_{jj'} for j' in N(j); a single value per row j.
    b: Vec<f64>,
    /// lambda_j, conditional precision per region.
    lambda: Vec<f64>,
}

impl DagarPrecision {
    /// Builds the factored precision for `rho` strictly inside (0, 1).
    pub fn build(ns: &DirectedNeighborSets, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::validation(format!(
                "rho must lie strictly in (0, 1), got {rho}"
            )));
        }
        let k = ns.k();
        let mut b = Vec::with_capacity(k);
        let mut lambda = Vec::with_capacity(k);
        let mut neighbors = Vec::with_capacity(k);
        for j in 0..k {
            let n = ns.n_before(j) as f64;
            let denom = 1.0 + (n - 1.0) * rho * rho;
            b.push(rho / denom);
            lambda.push(denom / (1.0 - rho * rho));
            neighbors.push(ns.set(j).to_vec());
        }
        Ok(DagarPrecision {
            rho,
            neighbors,
            b,
            lambda,
        })
    }

    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// u = (I - B) v
    fn apply_i_minus_b(&self, v: &[f64], out: &mut [f64]) {
        for j in 0..v.len() {
            let s: f64 = self.neighbors[j].iter().map(|&jp| v[jp]).sum();
            out[j] = v[j] - self.b[j] * s;
        }
    }

    /// Q v without forming Q.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.k();
        if v.len() != k {
            return Err(Error::dimension(format!(
                "matvec: expected length {k}, got {}",
                v.len()
            )));
        }
        let mut u = vec![0.0; k];
        self.apply_i_minus_b(v.as_slice(), &mut u);
        for j in 0..k {
            u[j] *= self.lambda[j];
        }
        // (I - B)' u
        let mut out = u.clone();
        for j in 0..k {
            let c = self.b[j] * u[j];
            for &jp in &self.neighbors[j] {
                out[jp] -= c;
            }
        }
        Ok(DVector::from_vec(out))
    }

    /// log det Q = sum_j log lambda_j
    pub fn log_det(&self) -> f64 {
        self.lambda.iter().map(|l| l.ln()).sum()
    }

    /// w' Q w = sum_j lambda_j (w_j - b_j * sum_{j' in N(j)} w_{j'})^2
    pub fn quad_form(&self, w: &DVector<f64>) -> Result<f64> {
        let k = self.k();
        if w.len() != k {
            return Err(Error::dimension(format!(
                "quad_form: expected length {k}, got {}",
                w.len()
            )));
        }
        let mut acc = 0.0;
        for j in 0..k {
            let s: f64 = self.neighbors[j].iter().map(|&jp| w[jp]).sum();
            let r = w[j] - self.b[j] * s;
            acc += self.lambda[j] * r * r;
        }
        Ok(acc)
    }

    /// Draws eps ~ N(0, Q^{-1}) by solving the unit lower-triangular system
    /// (I - B) eps = F^{-1/2} z.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.k();
        let mut eps = vec![0.0; k];
        for j in 0..k {
            let z: f64 = rng.sample(StandardNormal);
            let s: f64 = self.neighbors[j].iter().map(|&jp| eps[jp]).sum();
            eps[j] = z / self.lambda[j].sqrt() + self.b[j] * s;
        }
        DVector::from_vec(eps)
    }

    /// Dense Q, for oracles and desk-scale moment formulas only.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let k = self.k();
        if k > DENSE_CAP {
            return Err(Error::validation(format!(
                "dense DAGAR precision capped at k = {DENSE_CAP}, got {k}"
            )));
        }
        // Q = sum_j lambda_j r_j r_j' where r_j is row j of (I - B).
        let mut q = DMatrix::zeros(k, k);
        for j in 0..k {
            let mut row: Vec<(usize, f64)> = vec![(j, 1.0)];
            for &jp in &self.neighbors[j] {
                row.push((jp, -self.b[j]));
            }
            for &(a, va) in &row {
                for &(bx, vb) in &row {
                    q[(a, bx)] += self.lambda[j] * va * vb;
                }
            }
        }
        Ok(q)
    }
}
