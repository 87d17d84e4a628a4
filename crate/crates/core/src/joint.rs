//! Joint MDAGAR precision over q diseases x k regions.
//!
//! Q_w = (I - A)' Lambda (I - A) with Lambda = blockdiag(tau_i Q(rho_i)) and
//! A strictly block-lower-triangular with blocks A_{ii'} = eta0 I + eta1 M.
//! A blocks are stored as (eta0, eta1) pairs; applies go through the
//! adjacency neighbor lists.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dagar::DagarPrecision;
use crate::error::{Error, Result};
use crate::graph::{ArealGraph, DirectedNeighborSets};

/// Dimension cap for dense materialization of Q_w and its inverse.
pub const JOINT_DENSE_CAP: usize = 2048;

/// Lower-triangular tables of interaction coefficients, defined for i' < i.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionCoeffs {
    /// eta0[i] has length i; entry i' couples disease i to disease i' region-wise.
    eta0: Vec<Vec<f64>>,
    /// Same shape; couples disease i to neighbors of the region in disease i'.
    eta1: Vec<Vec<f64>>,
}

impl InteractionCoeffs {
    pub fn zeros(q: usize) -> Self {
        InteractionCoeffs {
            eta0: (0..q).map(|i| vec![0.0; i]).collect(),
            eta1: (0..q).map(|i| vec![0.0; i]).collect(),
        }
    }

    pub fn from_tables(eta0: Vec<Vec<f64>>, eta1: Vec<Vec<f64>>) -> Result<Self> {
        if eta0.len() != eta1.len() {
            return Err(Error::dimension("eta0/eta1 table sizes differ"));
        }
        for (i, (r0, r1)) in eta0.iter().zip(&eta1).enumerate() {
            if r0.len() != i || r1.len() != i {
                return Err(Error::dimension(format!(
                    "eta row {i} must have length {i}"
                )));
            }
        }
        Ok(InteractionCoeffs { eta0, eta1 })
    }

    pub fn q(&self) -> usize {
        self.eta0.len()
    }

    pub fn eta0(&self, i: usize, ip: usize) -> f64 {
        self.eta0[i][ip]
    }

    pub fn eta1(&self, i: usize, ip: usize) -> f64 {
        self.eta1[i][ip]
    }

    pub fn set(&mut self, i: usize, ip: usize, eta0: f64, eta1: f64) {
        self.eta0[i][ip] = eta0;
        self.eta1[i][ip] = eta1;
    }

    /// (eta0, eta1) pairs flattened in (i, i') row order, i = 2..q.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.q() {
            for ip in 0..i {
                out.push(self.eta0[i][ip]);
                out.push(self.eta1[i][ip]);
            }
        }
        out
    }

    pub fn from_flat(q: usize, flat: &[f64]) -> Result<Self> {
        let expected = q * (q - 1);
        if flat.len() != expected {
            return Err(Error::dimension(format!(
                "expected {expected} eta values for q = {q}, got {}",
                flat.len()
            )));
        }
        let mut c = InteractionCoeffs::zeros(q);
        let mut it = flat.iter();
        for i in 0..q {
            for ip in 0..i {
                let e0 = *it.next().unwrap();
                let e1 = *it.next().unwrap();
                c.set(i, ip, e0, e1);
            }
        }
        Ok(c)
    }
}

/// Dense eta0 I + eta1 M for one interaction block.
pub fn build_a_block(eta0: f64, eta1: f64, g: &ArealGraph) -> DMatrix<f64> {
    let k = g.k();
    let mut a = g.adjacency_dense() * eta1;
    for j in 0..k {
        a[(j, j)] += eta0;
    }
    a
}

#[derive(Debug, Clone, Copy)]
pub struct CrossMoments {
    pub cov: f64,
    pub var1: f64,
    pub var2: f64,
    pub corr: f64,
}

#[derive(Debug, Clone)]
pub struct JointPrecision {
    graph: Arc<ArealGraph>,
    tau: Vec<f64>,
    dagar: Vec<DagarPrecision>,
    coeffs: InteractionCoeffs,
}

impl JointPrecision {
    pub fn build(
        graph: Arc<ArealGraph>,
        tau: &[f64],
        rho: &[f64],
        coeffs: &InteractionCoeffs,
    ) -> Result<Self> {
        let q = tau.len();
        if rho.len() != q || coeffs.q() != q {
            return Err(Error::dimension(format!(
                "tau ({}), rho ({}) and eta table ({}) sizes must agree",
                q,
                rho.len(),
                coeffs.q()
            )));
        }
        if q == 0 {
            return Err(Error::validation("need at least one disease"));
        }
        if let Some(t) = tau.iter().find(|t| **t <= 0.0) {
            return Err(Error::validation(format!("tau must be positive, got {t}")));
        }
        let ns = DirectedNeighborSets::from_graph(&graph);
        let dagar = rho
            .iter()
            .map(|&r| DagarPrecision::build(&ns, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(JointPrecision {
            graph,
            tau: tau.to_vec(),
            dagar,
            coeffs: coeffs.clone(),
        })
    }

    pub fn q(&self) -> usize {
        self.tau.len()
    }

    pub fn k(&self) -> usize {
        self.graph.k()
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn dagar(&self, i: usize) -> &DagarPrecision {
        &self.dagar[i]
    }

    pub fn coeffs(&self) -> &InteractionCoeffs {
        &self.coeffs
    }

    pub fn graph(&self) -> &Arc<ArealGraph> {
        &self.graph
    }

    /// A_{i i'} v = eta0 v + eta1 M v. The block is symmetric.
    pub fn apply_a(&self, i: usize, ip: usize, v: &DVector<f64>) -> DVector<f64> {
        let k = self.k();
        let mut mv = vec![0.0; k];
        self.graph.adjacency_matvec(v.as_slice(), &mut mv);
        let e0 = self.coeffs.eta0(i, ip);
        let e1 = self.coeffs.eta1(i, ip);
        DVector::from_fn(k, |j, _| e0 * v[j] + e1 * mv[j])
    }

    /// r_i = w_i - sum_{i' < i} A_{ii'} w_{i'}
    pub fn residual(&self, i: usize, w: &[DVector<f64>]) -> DVector<f64> {
        let mut r = w[i].clone();
        for ip in 0..i {
            r -= self.apply_a(i, ip, &w[ip]);
        }
        r
    }

    fn split(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        let k = self.k();
        (0..self.q())
            .map(|i| DVector::from_column_slice(&v.as_slice()[i * k..(i + 1) * k]))
            .collect()
    }

    fn join(&self, blocks: &[DVector<f64>]) -> DVector<f64> {
        let k = self.k();
        let mut out = DVector::zeros(self.q() * k);
        for (i, b) in blocks.iter().enumerate() {
            out.rows_mut(i * k, k).copy_from(b);
        }
        out
    }

    /// Q_w v in factored form.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (q, k) = (self.q(), self.k());
        if v.len() != q * k {
            return Err(Error::dimension(format!(
                "matvec: expected length {}, got {}",
                q * k,
                v.len()
            )));
        }
        let blocks = self.split(v);
        let mut t = Vec::with_capacity(q);
        for i in 0..q {
            let u = self.residual(i, &blocks);
            t.push(self.dagar[i].matvec(&u)? * self.tau[i]);
        }
        let mut out = t.clone();
        for n in 0..q {
            for i in 0..n {
                let a = self.apply_a(n, i, &t[n]);
                out[i] -= a;
            }
        }
        Ok(self.join(&out))
    }

    /// w' Q_w w = sum_i tau_i r_i' Q(rho_i) r_i
    pub fn quad_form(&self, w: &DVector<f64>) -> Result<f64> {
        let (q, k) = (self.q(), self.k());
        if w.len() != q * k {
            return Err(Error::dimension(format!(
                "quad_form: expected length {}, got {}",
                q * k,
                w.len()
            )));
        }
        let blocks = self.split(w);
        let mut acc = 0.0;
        for i in 0..q {
            let r = self.residual(i, &blocks);
            acc += self.tau[i] * self.dagar[i].quad_form(&r)?;
        }
        Ok(acc)
    }

    /// log det Q_w = sum_i (k log tau_i + log det Q(rho_i))
    pub fn log_det(&self) -> f64 {
        let k = self.k() as f64;
        self.tau
            .iter()
            .zip(&self.dagar)
            .map(|(t, d)| k * t.ln() + d.log_det())
            .sum()
    }

    /// log N(w | 0, Q_w^{-1}) using the factored determinant and quadratic form.
    pub fn log_density(&self, w: &DVector<f64>) -> Result<f64> {
        let n = (self.q() * self.k()) as f64;
        Ok(0.5 * self.log_det() - 0.5 * self.quad_form(w)? - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    /// Exact draw from N(0, Q_w^{-1}): eps_i ~ N(0, (tau_i Q(rho_i))^{-1}),
    /// then forward block substitution of (I - A) w = eps.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let q = self.q();
        let mut w: Vec<DVector<f64>> = Vec::with_capacity(q);
        for i in 0..q {
            let mut wi = self.dagar[i].sample(rng) / self.tau[i].sqrt();
            for ip in 0..i {
                wi += self.apply_a(i, ip, &w[ip]);
            }
            w.push(wi);
        }
        self.join(&w)
    }

    /// Dense Q_w assembled block-wise from cached Q_i, Q_i M and M Q_i M.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let (q, k) = (self.q(), self.k());
        let n = q * k;
        if n > JOINT_DENSE_CAP {
            return Err(Error::validation(format!(
                "dense joint precision capped at qk = {JOINT_DENSE_CAP}, got {n}"
            )));
        }
        let m = self.graph.adjacency_dense();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..q {
            let qi = self.dagar[i].dense()? * self.tau[i];
            let qm = &qi * &m;
            let mqm = &m * &qm;
            // Row coefficients of (I - A) restricted to block column a.
            let coef = |a: usize| -> (f64, f64) {
                if a == i {
                    (1.0, 0.0)
                } else {
                    (-self.coeffs.eta0(i, a), -self.coeffs.eta1(i, a))
                }
            };
            for a in 0..=i {
                let (c0a, c1a) = coef(a);
                for b in 0..=i {
                    let (c0b, c1b) = coef(b);
                    let mut block = out.view_mut((a * k, b * k), (k, k));
                    // (c0a I + c1a M) Q_i (c0b I + c1b M); M and Q_i symmetric.
                    let mut add = |scale: f64, mat: &DMatrix<f64>, transpose: bool| {
                        if scale == 0.0 {
                            return;
                        }
                        for col in 0..k {
                            for row in 0..k {
                                let v = if transpose { mat[(col, row)] } else { mat[(row, col)] };
                                block[(row, col)] += scale * v;
                            }
                        }
                    };
                    add(c0a * c0b, &qi, false);
                    add(c0a * c1b, &qm, false);
                    add(c1a * c0b, &qm, true);
                    add(c1a * c1b, &mqm, false);
                }
            }
        }
        Ok(out)
    }

    /// Dense covariance Q_w^{-1}, desk scale only.
    pub fn dense_covariance(&self) -> Result<DMatrix<f64>> {
        let qw = self.dense()?;
        let chol = qw
            .cholesky()
            .ok_or_else(|| Error::numerical("joint precision is not SPD"))?;
        Ok(chol.inverse())
    }

    /// Eq.-(8)-style closed form for q = 2, as a dense 2k x 2k matrix.
    pub fn bivariate_closed_form(&self) -> Result<DMatrix<f64>> {
        if self.q() != 2 {
            return Err(Error::validation(format!(
                "bivariate closed form requires q = 2, got {}",
                self.q()
            )));
        }
        let k = self.k();
        let q1 = self.dagar[0].dense()? * self.tau[0];
        let q2 = self.dagar[1].dense()? * self.tau[1];
        let a21 = build_a_block(self.coeffs.eta0(1, 0), self.coeffs.eta1(1, 0), &self.graph);
        let mut out = DMatrix::zeros(2 * k, 2 * k);
        // Off-diagonal blocks carry a minus sign: expanding (I - A)' Lambda (I - A)
        // for the two-block case gives -tau_2 A21' Q(rho_2) there.
        let q2a = &q2 * &a21;
        out.view_mut((0, 0), (k, k))
            .copy_from(&(&q1 + a21.transpose() * &q2a));
        out.view_mut((0, k), (k, k)).copy_from(&(-q2a.transpose()));
        out.view_mut((k, 0), (k, k)).copy_from(&(-&q2a));
        out.view_mut((k, k), (k, k)).copy_from(&q2);
        Ok(out)
    }

    /// Closed-form within-region moments for q = 2, every region at once.
    ///
    /// With d_i = (tau_i Q(rho_i))^{-1} scaled to Q(rho_i)^{-1} entries:
    ///   cov(w_1j, w_2j) = tau_1^{-1} (eta0 d1_jj + eta1 sum_{j'~j} d1_jj')
    ///   var(w_1j) = tau_1^{-1} d1_jj
    ///   var(w_2j) = tau_1^{-1} [eta0 (eta0 d1_jj + eta1 sum_{j'~j} d1_jj')
    ///             + eta1 sum_{j'~j} (eta0 d1_jj' + eta1 sum_{j''~j} d1_j''j')]
    ///             + tau_2^{-1} d2_jj
    pub fn within_region_cross_moments(&self) -> Result<Vec<CrossMoments>> {
        if self.q() != 2 {
            return Err(Error::validation(format!(
                "within-region cross moments require q = 2, got {}",
                self.q()
            )));
        }
        let k = self.k();
        let inv = |d: &DagarPrecision| -> Result<DMatrix<f64>> {
            d.dense()?
                .cholesky()
                .ok_or_else(|| Error::numerical("DAGAR precision is not SPD"))
                .map(|c| c.inverse())
        };
        let d1 = inv(&self.dagar[0])?;
        let d2 = inv(&self.dagar[1])?;
        let (t1, t2) = (self.tau[0], self.tau[1]);
        let (e0, e1) = (self.coeffs.eta0(1, 0), self.coeffs.eta1(1, 0));
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            let nbr_sum_jj: f64 = self.graph.neighbors(j).iter().map(|&jp| d1[(j, jp)]).sum();
            let cov = (e0 * d1[(j, j)] + e1 * nbr_sum_jj) / t1;
            let var1 = d1[(j, j)] / t1;
            let mut cross = 0.0;
            for &jp in self.graph.neighbors(j) {
                let inner: f64 = self
                    .graph
                    .neighbors(j)
                    .iter()
                    .map(|&jpp| d1[(jpp, jp)])
                    .sum();
                cross += e0 * d1[(j, jp)] + e1 * inner;
            }
            let var2 = (e0 * (e0 * d1[(j, j)] + e1 * nbr_sum_jj) + e1 * cross) / t1
                + d2[(j, j)] / t2;
            out.push(CrossMoments {
                cov,
                var1,
                var2,
                corr: cov / (var1 * var2).sqrt(),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path2() -> Arc<ArealGraph> {
        Arc::new(ArealGraph::grid(1, 2).unwrap())
    }

    fn random_graph(k: usize, rng: &mut ChaCha8Rng) -> Arc<ArealGraph> {
        let mut edges = Vec::new();
        for a in 0..k {
            for b in (a + 1)..k {
                if rng.random::<f64>() < 0.4 {
                    edges.push((a, b));
                }
            }
        }
        Arc::new(ArealGraph::new((0..k).map(|i| i.to_string()).collect(), &edges).unwrap())
    }

    #[test]
    fn a_block_examples() {
        let g = path2();
        let a = build_a_block(1.0, 0.0, &g);
        assert_eq!(a, DMatrix::identity(2, 2));
        let a = build_a_block(0.5, 0.3, &g);
        assert_relative_eq!(a[(0, 0)], 0.5);
        assert_relative_eq!(a[(0, 1)], 0.3);
        assert_relative_eq!(a[(1, 0)], 0.3);
        assert_relative_eq!(a[(1, 1)], 0.5);
        let a = build_a_block(0.0, 0.0, &g);
        assert_eq!(a, DMatrix::zeros(2, 2));
    }

    #[test]
    fn q1_is_scaled_dagar() {
        let g = path2();
        let p = JointPrecision::build(g.clone(), &[2.0], &[0.5], &InteractionCoeffs::zeros(1))
            .unwrap();
        let ns = DirectedNeighborSets::from_graph(&g);
        let d = DagarPrecision::build(&ns, 0.5).unwrap().dense().unwrap() * 2.0;
        assert_relative_eq!(&p.dense().unwrap(), &d, epsilon = 1e-12);
    }

    #[test]
    fn zero_eta_is_blockdiag() {
        let g = path2();
        let p = JointPrecision::build(
            g.clone(),
            &[1.5, 0.7],
            &[0.3, 0.6],
            &InteractionCoeffs::zeros(2),
        )
        .unwrap();
        let dense = p.dense().unwrap();
        let off = dense.view((0, 2), (2, 2));
        assert!(off.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn dense_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let g = random_graph(5, &mut rng);
            let tau = [0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>()];
            let rho = [
                0.1 + 0.8 * rng.random::<f64>(),
                0.1 + 0.8 * rng.random::<f64>(),
            ];
            let mut c = InteractionCoeffs::zeros(2);
            c.set(1, 0, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let p = JointPrecision::build(g, &tau, &rho, &c).unwrap();
            let dense = p.dense().unwrap();
            let closed = p.bivariate_closed_form().unwrap();
            assert_relative_eq!(&dense, &closed, epsilon = 1e-10);
        }
    }

    #[test]
    fn hand_checked_path_instance() {
        let g = path2();
        let mut c = InteractionCoeffs::zeros(2);
        c.set(1, 0, 0.5, 0.3);
        let p = JointPrecision::build(g.clone(), &[1.0, 1.0], &[0.5, 0.5], &c).unwrap();
        // Oracle: brute-force block assembly from dense pieces.
        let ns = DirectedNeighborSets::from_graph(&g);
        let q = DagarPrecision::build(&ns, 0.5).unwrap().dense().unwrap();
        let a = build_a_block(0.5, 0.3, &g);
        let mut expect = DMatrix::zeros(4, 4);
        expect
            .view_mut((0, 0), (2, 2))
            .copy_from(&(&q + a.transpose() * &q * &a));
        expect
            .view_mut((0, 2), (2, 2))
            .copy_from(&(a.transpose() * &q * -1.0));
        expect.view_mut((2, 0), (2, 2)).copy_from(&(&q * &a * -1.0));
        expect.view_mut((2, 2), (2, 2)).copy_from(&q);
        // Sign note: Q_w off-diagonal block is -A' Q2, matching Eq.-(8) form
        // tau_2 A' Q_2 applied to (I - A) composition.
        let dense = p.dense().unwrap();
        assert_relative_eq!(&dense, &expect, epsilon = 1e-12);
    }

    #[test]
    fn matvec_and_quad_form_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(6, &mut rng);
        let mut c = InteractionCoeffs::zeros(3);
        c.set(1, 0, 0.4, -0.2);
        c.set(2, 0, -0.3, 0.1);
        c.set(2, 1, 0.7, 0.2);
        let p = JointPrecision::build(g, &[1.0, 2.0, 0.5], &[0.2, 0.8, 0.5], &c).unwrap();
        let dense = p.dense().unwrap();
        assert_relative_eq!(&dense, &dense.transpose(), epsilon = 1e-12);
        for _ in 0..5 {
            let v = DVector::from_fn(18, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            assert_relative_eq!(&p.matvec(&v).unwrap(), &(&dense * &v), epsilon = 1e-10);
            let quad = (v.transpose() * &dense * &v)[(0, 0)];
            assert_relative_eq!(p.quad_form(&v).unwrap(), quad, max_relative = 1e-10);
        }
    }

    #[test]
    fn log_det_identity_matches_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for q in 1..=4 {
            let g = random_graph(7, &mut rng);
            let tau: Vec<f64> = (0..q).map(|_| 0.2 + rng.random::<f64>()).collect();
            let rho: Vec<f64> = (0..q).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect();
            let mut c = InteractionCoeffs::zeros(q);
            for i in 0..q {
                for ip in 0..i {
                    c.set(i, ip, rng.random::<f64>() - 0.5, 0.5 * rng.random::<f64>());
                }
            }
            let p = JointPrecision::build(g, &tau, &rho, &c).unwrap();
            let chol = p.dense().unwrap().cholesky().expect("SPD");
            let dense_logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            assert_relative_eq!(p.log_det(), dense_logdet, max_relative = 1e-8);
        }
    }

    #[test]
    fn strong_coupling_limit() {
        // tau_2 very large with A21 = I forces corr(w_1j, w_2j) -> 1.
        let g = path2();
        let mut c = InteractionCoeffs::zeros(2);
        c.set(1, 0, 1.0, 0.0);
        let p = JointPrecision::build(g, &[1.0, 1e6], &[0.5, 0.5], &c).unwrap();
        let m = p.within_region_cross_moments().unwrap();
        for cm in m {
            assert!(cm.corr > 0.999, "corr = {}", cm.corr);
        }
    }

    #[test]
    fn cross_moments_single_region() {
        let g = Arc::new(ArealGraph::new(vec!["A".into()], &[]).unwrap());
        let mut c = InteractionCoeffs::zeros(2);
        c.set(1, 0, 1.0, 123.0); // eta1 irrelevant with no neighbors
        let p = JointPrecision::build(g, &[1.0, 1.0], &[0.5, 0.5], &c).unwrap();
        let m = &p.within_region_cross_moments().unwrap()[0];
        assert_relative_eq!(m.cov, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.var1, 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.var2, 2.0, epsilon = 1e-12);
        assert_relative_eq!(m.corr, 1.0 / 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn cross_moments_zero_eta() {
        let g = path2();
        let p = JointPrecision::build(g, &[1.0, 2.0], &[0.4, 0.6], &InteractionCoeffs::zeros(2))
            .unwrap();
        for m in p.within_region_cross_moments().unwrap() {
            assert_eq!(m.cov, 0.0);
            assert_eq!(m.corr, 0.0);
        }
    }

    #[test]
    fn cross_moments_match_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let g = random_graph(6, &mut rng);
            let k = g.k();
            let mut c = InteractionCoeffs::zeros(2);
            c.set(1, 0, rng.random::<f64>() - 0.2, 0.5 * rng.random::<f64>());
            let p = JointPrecision::build(
                g,
                &[0.5 + rng.random::<f64>(), 0.5 + rng.random::<f64>()],
                &[0.3, 0.7],
                &c,
            )
            .unwrap();
            let cov = p.dense_covariance().unwrap();
            for (j, m) in p.within_region_cross_moments().unwrap().iter().enumerate() {
                assert_relative_eq!(m.cov, cov[(j, k + j)], epsilon = 1e-8);
                assert_relative_eq!(m.var1, cov[(j, j)], epsilon = 1e-8);
                assert_relative_eq!(m.var2, cov[(k + j, k + j)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn wrong_q_errors() {
        let g = path2();
        let p = JointPrecision::build(g, &[1.0], &[0.5], &InteractionCoeffs::zeros(1)).unwrap();
        assert!(p.bivariate_closed_form().is_err());
        assert!(p.within_region_cross_moments().is_err());
    }

    #[test]
    fn sample_independent_when_eta_zero() {
        let g = Arc::new(ArealGraph::grid(2, 2).unwrap());
        let p =
            JointPrecision::build(g, &[1.0, 1.0], &[0.5, 0.5], &InteractionCoeffs::zeros(2))
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let (mut s1, mut s2, mut s12, mut sq1, mut sq2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let w = p.sample(&mut rng);
            let (a, b) = (w[0], w[4]);
            s1 += a;
            s2 += b;
            s12 += a * b;
            sq1 += a * a;
            sq2 += b * b;
        }
        let nf = n as f64;
        let cov = s12 / nf - (s1 / nf) * (s2 / nf);
        let r = cov / ((sq1 / nf - (s1 / nf).powi(2)) * (sq2 / nf - (s2 / nf).powi(2))).sqrt();
        assert!(r.abs() < 0.05, "|r| = {}", r.abs());
    }

    #[test]
    fn sample_single_vertex_unit_variance() {
        let g = Arc::new(ArealGraph::new(vec!["A".into()], &[]).unwrap());
        let p = JointPrecision::build(g, &[1.0], &[0.5], &InteractionCoeffs::zeros(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 100_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let w = p.sample(&mut rng);
            sq += w[0] * w[0];
        }
        let var = sq / n as f64;
        assert!((var - 1.0).abs() < 0.02, "var = {var}");
    }

    #[test]
    fn sample_covariance_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let g = random_graph(5, &mut rng);
        let mut c = InteractionCoeffs::zeros(2);
        c.set(1, 0, 0.6, 0.2);
        let p = JointPrecision::build(g, &[1.0, 0.8], &[0.3, 0.7], &c).unwrap();
        let cov = p.dense_covariance().unwrap();
        let n = 200_000;
        let dim = cov.nrows();
        let mut acc = DMatrix::zeros(dim, dim);
        let mut mean = DVector::zeros(dim);
        for _ in 0..n {
            let w = p.sample(&mut rng);
            acc += &w * w.transpose();
            mean += w;
        }
        acc /= n as f64;
        mean /= n as f64;
        for i in 0..dim {
            // Mean consistent with zero at the CLT rate.
            let se_mean = (cov[(i, i)] / n as f64).sqrt();
            assert!(mean[i].abs() < 3.5 * se_mean);
            for j in 0..dim {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n as f64).sqrt();
                assert!(
                    (acc[(i, j)] - cov[(i, j)]).abs() < 3.5 * se,
                    "entry ({i},{j})"
                );
            }
        }
    }
}
