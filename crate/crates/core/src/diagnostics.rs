//! Model comparison and calibration metrics: WAIC, the D score, average
//! mean squared error with its Monte Carlo standard error, Gaussian KL
//! divergence in precision form, and credible-interval coverage.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct WaicResult {
    pub waic: f64,
    pub lpd_hat: f64,
    pub p_waic: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DScoreResult {
    pub d: f64,
    pub g: f64,
    pub p: f64,
}

/// WAIC from an L x n matrix of pointwise log densities (row = draw).
pub fn waic(pointwise: &DMatrix<f64>) -> Result<WaicResult> {
    let l = pointwise.nrows();
    if l < 2 {
        return Err(Error::validation("WAIC needs at least 2 draws"));
    }
    let lf = l as f64;
    let mut lpd = 0.0;
    let mut p_waic = 0.0;
    for col in pointwise.column_iter() {
        let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lpd += m + (col.iter().map(|v| (v - m).exp()).sum::<f64>() / lf).ln();
        let mean = col.iter().sum::<f64>() / lf;
        p_waic += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (lf - 1.0);
    }
    Ok(WaicResult {
        waic: -2.0 * (lpd - p_waic),
        lpd_hat: lpd,
        p_waic,
    })
}

/// D = G + P from observed values and an L x n matrix of replicate draws.
pub fn d_score(y: &DVector<f64>, replicates: &DMatrix<f64>) -> Result<DScoreResult> {
    let l = replicates.nrows();
    if l < 2 {
        return Err(Error::validation("D score needs at least 2 replicate draws"));
    }
    if replicates.ncols() != y.len() {
        return Err(Error::dimension(format!(
            "replicates have {} points, outcomes {}",
            replicates.ncols(),
            y.len()
        )));
    }
    let lf = l as f64;
    let mut g = 0.0;
    let mut p = 0.0;
    for (j, col) in replicates.column_iter().enumerate() {
        let mean = col.iter().sum::<f64>() / lf;
        g += (y[j] - mean).powi(2);
        p += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (lf - 1.0);
    }
    Ok(DScoreResult { d: g + p, g, p })
}

/// Mean squared error over all replicate datasets plus its MC standard error.
pub fn amse(true_w: &DVector<f64>, estimates: &[DVector<f64>]) -> Result<(f64, f64)> {
    if estimates.is_empty() {
        return Err(Error::validation("AMSE needs at least one estimate"));
    }
    if estimates.iter().any(|e| e.len() != true_w.len()) {
        return Err(Error::dimension("estimate length must match the truth"));
    }
    let n_total = estimates.len() * true_w.len();
    let mut sq = Vec::with_capacity(n_total);
    for est in estimates {
        for (e, t) in est.iter().zip(true_w.iter()) {
            sq.push((e - t).powi(2));
        }
    }
    let nf = n_total as f64;
    let mean = sq.iter().sum::<f64>() / nf;
    if n_total < 2 {
        return Err(Error::validation(
            "AMSE standard error needs at least 2 entries",
        ));
    }
    let var: f64 = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf * (nf - 1.0));
    Ok((mean, var.sqrt()))
}

/// KL(N(0, Q_true^{-1}) || N(0, Q_model^{-1})) for SPD precisions:
/// 0.5 [log det Q_true - log det Q_model + tr(Q_model Q_true^{-1}) - n].
pub fn gaussian_kl(q_true: &DMatrix<f64>, q_model: &DMatrix<f64>) -> Result<f64> {
    let n = q_true.nrows();
    if q_true.shape() != q_model.shape() || q_true.nrows() != q_true.ncols() {
        return Err(Error::dimension("precisions must be square and equal-sized"));
    }
    if q_true == q_model {
        return Ok(0.0);
    }
    let chol_t = q_true
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("true precision is not SPD"))?;
    let chol_m = q_model
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("model precision is not SPD"))?;
    let ld_t: f64 = 2.0 * chol_t.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let ld_m: f64 = 2.0 * chol_m.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    // tr(Q_m Q_t^{-1}) = sum of entries of Q_m .* Q_t^{-1}; use triangular
    // solves column by column against the identity.
    let mut trace = 0.0;
    let id = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        let col = chol_t.solve(&id.column(j).clone_owned());
        trace += q_model.row(j).transpose().dot(&col);
    }
    Ok(0.5 * (ld_t - ld_m + trace - n as f64))
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Central 95% credible interval of a draw sequence.
pub fn credible_interval_95(draws: &[f64]) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::validation("credible interval needs draws"));
    }
    let mut s = draws.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((quantile(&s, 0.025), quantile(&s, 0.975)))
}

/// Percent of intervals containing the truth.
pub fn coverage(intervals: &[(f64, f64)], truth: f64) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::validation("coverage needs at least one interval"));
    }
    let hits = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    Ok(100.0 * hits as f64 / intervals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &a * a.transpose() + DMatrix::identity(n, n) * (0.5 + rng.random::<f64>())
    }

    #[test]
    fn waic_identical_draws() {
        let m = DMatrix::from_element(2, 1, -1.0);
        let r = waic(&m).unwrap();
        assert_relative_eq!(r.lpd_hat, -1.0, epsilon = 1e-14);
        assert_relative_eq!(r.p_waic, 0.0, epsilon = 1e-14);
        assert_relative_eq!(r.waic, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn waic_hand_values() {
        // Log densities {0, -2} at one point.
        let m = DMatrix::from_column_slice(2, 1, &[0.0, -2.0]);
        let r = waic(&m).unwrap();
        assert_relative_eq!(r.lpd_hat, ((1.0 + (-2.0f64).exp()) / 2.0).ln(), epsilon = 1e-12);
        assert_relative_eq!(r.p_waic, 2.0, epsilon = 1e-12);
        // Duplicating the point doubles both pieces.
        let m2 = DMatrix::from_column_slice(2, 2, &[0.0, -2.0, 0.0, -2.0]);
        let r2 = waic(&m2).unwrap();
        assert_relative_eq!(r2.lpd_hat, 2.0 * r.lpd_hat, epsilon = 1e-12);
        assert_relative_eq!(r2.p_waic, 2.0 * r.p_waic, epsilon = 1e-12);
        assert!(waic(&DMatrix::from_element(1, 1, 0.0)).is_err());
    }

    #[test]
    fn d_score_examples() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let reps = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let r = d_score(&y, &reps).unwrap();
        assert_relative_eq!(r.d, 0.0, epsilon = 1e-14);
        // Replicates {0, 2} at one point with y = 1.
        let y = DVector::from_vec(vec![1.0]);
        let reps = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let r = d_score(&y, &reps).unwrap();
        assert_relative_eq!(r.g, 0.0, epsilon = 1e-14);
        assert_relative_eq!(r.p, 2.0, epsilon = 1e-14);
        assert_relative_eq!(r.d, 2.0, epsilon = 1e-14);
        // Translation invariance.
        let shifted = reps.map(|v| v + 5.0);
        let ys = y.map(|v| v + 5.0);
        let r2 = d_score(&ys, &shifted).unwrap();
        assert_relative_eq!(r2.d, r.d, epsilon = 1e-12);
    }

    #[test]
    fn amse_examples() {
        let truth = DVector::from_vec(vec![1.0, 2.0]);
        let (mean, se) = amse(&truth, &[truth.clone()]).unwrap();
        assert_eq!((mean, se), (0.0, 0.0));
        // Errors {0, 2}: mean 2, se sqrt((4+4)/2) = 2.
        let est = DVector::from_vec(vec![1.0, 4.0]);
        let (mean, se) = amse(&truth, &[est]).unwrap();
        assert_relative_eq!(mean, 2.0, epsilon = 1e-14);
        assert_relative_eq!(se, 2.0, epsilon = 1e-14);
        // Single entry: SE undefined.
        let t1 = DVector::from_vec(vec![0.0]);
        assert!(amse(&t1, &[DVector::from_vec(vec![2.0])]).is_err());
    }

    #[test]
    fn kl_examples() {
        let q = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(gaussian_kl(&q, &q).unwrap(), 0.0);
        let q2 = DMatrix::from_element(1, 1, 2.0);
        let expect = 0.5 * ((1.0f64 / 2.0).ln() + 2.0 - 1.0);
        assert_relative_eq!(gaussian_kl(&q, &q2).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = 2 + (rng.random::<u32>() % 5) as usize;
            let a = random_spd(n, &mut rng);
            let b = random_spd(n, &mut rng);
            let kl_ab = gaussian_kl(&a, &b).unwrap();
            let kl_ba = gaussian_kl(&b, &a).unwrap();
            assert!(kl_ab >= -1e-10, "kl {kl_ab}");
            assert!(kl_ab + kl_ba >= -1e-10);
        }
    }

    #[test]
    fn coverage_examples() {
        let always = vec![(0.0, 2.0); 5];
        assert_eq!(coverage(&always, 1.0).unwrap(), 100.0);
        let never = vec![(2.0, 3.0); 5];
        assert_eq!(coverage(&never, 1.0).unwrap(), 0.0);
        let mut mixed = vec![(0.0, 2.0); 17];
        mixed.extend(vec![(5.0, 6.0); 3]);
        assert_relative_eq!(coverage(&mixed, 1.0).unwrap(), 85.0, epsilon = 1e-12);
        assert!(coverage(&[], 1.0).is_err());
    }

    #[test]
    fn interval_uses_interpolated_quantiles() {
        let draws: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let (lo, hi) = credible_interval_95(&draws).unwrap();
        assert_relative_eq!(lo, 2.5, epsilon = 1e-12);
        assert_relative_eq!(hi, 97.5, epsilon = 1e-12);
    }

    // Straight-line reimplementations with no shared helpers.
    fn waic_oracle(m: &DMatrix<f64>) -> (f64, f64, f64) {
        let l = m.nrows() as f64;
        let mut lpd = 0.0;
        let mut pw = 0.0;
        for j in 0..m.ncols() {
            let mut s = 0.0;
            for i in 0..m.nrows() {
                s += m[(i, j)].exp();
            }
            lpd += (s / l).ln();
            let mut mean = 0.0;
            for i in 0..m.nrows() {
                mean += m[(i, j)];
            }
            mean /= l;
            let mut v = 0.0;
            for i in 0..m.nrows() {
                v += (m[(i, j)] - mean) * (m[(i, j)] - mean);
            }
            pw += v / (l - 1.0);
        }
        (-2.0 * (lpd - pw), lpd, pw)
    }

    fn d_oracle(y: &DVector<f64>, m: &DMatrix<f64>) -> (f64, f64, f64) {
        let l = m.nrows() as f64;
        let mut g = 0.0;
        let mut p = 0.0;
        for j in 0..m.ncols() {
            let mut mean = 0.0;
            for i in 0..m.nrows() {
                mean += m[(i, j)];
            }
            mean /= l;
            g += (y[j] - mean) * (y[j] - mean);
            let mut v = 0.0;
            for i in 0..m.nrows() {
                v += (m[(i, j)] - mean) * (m[(i, j)] - mean);
            }
            p += v / (l - 1.0);
        }
        (g + p, g, p)
    }

    fn amse_oracle(t: &DVector<f64>, ests: &[DVector<f64>]) -> (f64, f64) {
        let n = (ests.len() * t.len()) as f64;
        let mut mean = 0.0;
        for e in ests {
            for j in 0..t.len() {
                mean += (e[j] - t[j]) * (e[j] - t[j]);
            }
        }
        mean /= n;
        let mut v = 0.0;
        for e in ests {
            for j in 0..t.len() {
                let s = (e[j] - t[j]) * (e[j] - t[j]);
                v += (s - mean) * (s - mean);
            }
        }
        (mean, (v / (n * (n - 1.0))).sqrt())
    }

    fn kl_oracle(qt: &DMatrix<f64>, qm: &DMatrix<f64>) -> f64 {
        let n = qt.nrows() as f64;
        let st = qt.clone().try_inverse().unwrap();
        0.5 * (qt.determinant().ln() - qm.determinant().ln() + (qm * st).trace() - n)
    }

    #[test]
    fn metrics_match_independent_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let l = 3 + (rng.random::<u32>() % 8) as usize;
            let n = 2 + (rng.random::<u32>() % 6) as usize;
            let m = DMatrix::from_fn(l, n, |_, _| -3.0 * rng.random::<f64>());
            let r = waic(&m).unwrap();
            let (w0, l0, p0) = waic_oracle(&m);
            assert_relative_eq!(r.waic, w0, epsilon = 1e-10);
            assert_relative_eq!(r.lpd_hat, l0, epsilon = 1e-10);
            assert_relative_eq!(r.p_waic, p0, epsilon = 1e-10);

            let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let reps = DMatrix::from_fn(l, n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let r = d_score(&y, &reps).unwrap();
            let (d0, g0, pp0) = d_oracle(&y, &reps);
            assert_relative_eq!(r.d, d0, epsilon = 1e-10);
            assert_relative_eq!(r.g, g0, epsilon = 1e-10);
            assert_relative_eq!(r.p, pp0, epsilon = 1e-10);

            let truth = DVector::from_fn(n, |_, _| rng.random::<f64>());
            let ests: Vec<DVector<f64>> = (0..3)
                .map(|_| DVector::from_fn(n, |_, _| rng.random::<f64>()))
                .collect();
            let (a, se) = amse(&truth, &ests).unwrap();
            let (a0, se0) = amse_oracle(&truth, &ests);
            assert_relative_eq!(a, a0, epsilon = 1e-10);
            assert_relative_eq!(se, se0, epsilon = 1e-10);

            let qt = random_spd(n, &mut rng);
            let qm = random_spd(n, &mut rng);
            assert_relative_eq!(
                gaussian_kl(&qt, &qm).unwrap(),
                kl_oracle(&qt, &qm),
                epsilon = 1e-8,
                max_relative = 1e-8
            );
        }
    }
}
