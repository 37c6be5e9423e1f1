//! REML fit of the random-intercept linear mixed model
//! `y = beta0 + x'beta + b_j + e`, `b_j ~ N(0, gamma tau2)`, `e ~ N(0, tau2)`.
//!
//! Fixed effects and `tau2` are profiled out analytically; the remaining
//! one-dimensional criterion in `gamma` is maximized by a log-scale grid,
//! golden-section refinement and bisection on the analytic score, with
//! `gamma = 0` checked explicitly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaeError};
use crate::linalg::cholesky_with_ridge;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub beta0: f64,
    pub beta: Vec<f64>,
    /// Between-county variance.
    pub sigma2_b: f64,
    pub tau2: f64,
    /// County effect predictions; 0 for counties without rows.
    pub blups: Vec<f64>,
    pub reml_loglik: f64,
}

impl LmmFit {
    pub fn predict(&self, county: usize, x: &[f64]) -> f64 {
        self.beta0 + self.blups[county] + x.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Per-county sufficient statistics on the design with a leading intercept.
struct Suff {
    k: usize,
    n: usize,
    counts: Vec<usize>,
    xtx: Vec<DMatrix<f64>>,
    xs: Vec<DVector<f64>>,
    xty: Vec<DVector<f64>>,
    ys: Vec<f64>,
    yty: Vec<f64>,
}

impl Suff {
    fn new(y: &[f64], x: &[f64], p: usize, county: &[usize], j: usize) -> Self {
        let k = 1 + p;
        let mut s = Suff {
            k,
            n: y.len(),
            counts: vec![0; j],
            xtx: vec![DMatrix::zeros(k, k); j],
            xs: vec![DVector::zeros(k); j],
            xty: vec![DVector::zeros(k); j],
            ys: vec![0.0; j],
            yty: vec![0.0; j],
        };
        let mut xt = vec![1.0; k];
        for (i, &c) in county.iter().enumerate() {
            xt[1..].copy_from_slice(&x[i * p..(i + 1) * p]);
            s.counts[c] += 1;
            s.ys[c] += y[i];
            s.yty[c] += y[i] * y[i];
            for a in 0..k {
                s.xs[c][a] += xt[a];
                s.xty[c][a] += xt[a] * y[i];
                for b in 0..k {
                    s.xtx[c][(a, b)] += xt[a] * xt[b];
                }
            }
        }
        s
    }

    /// Profiled REML log-likelihood at variance ratio `gamma`, with the
    /// generalized least-squares coefficients and residual variance.
    fn profile(&self, gamma: f64) -> Result<(f64, DVector<f64>, f64)> {
        let k = self.k;
        let mut a = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        let mut yhy = 0.0;
        let mut logdet_h = 0.0;
        for c in 0..self.counts.len() {
            let nj = self.counts[c] as f64;
            if nj == 0.0 {
                continue;
            }
            let cj = gamma / (1.0 + nj * gamma);
            a += &self.xtx[c] - &self.xs[c] * self.xs[c].transpose() * cj;
            b += &self.xty[c] - &self.xs[c] * (self.ys[c] * cj);
            yhy += self.yty[c] - cj * self.ys[c] * self.ys[c];
            logdet_h += (1.0 + nj * gamma).ln();
        }
        let chol = cholesky_with_ridge(&a)?;
        let beta = chol.solve(&b);
        let rss = (yhy - b.dot(&beta)).max(0.0);
        let dof = (self.n - k) as f64;
        let tau2 = rss / dof;
        let logdet_a: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let ll = -0.5 * (dof * tau2.max(f64::MIN_POSITIVE).ln() + logdet_h + logdet_a + dof);
        Ok((ll, beta, tau2))
    }

    /// Derivative of the profiled criterion with respect to `gamma`.
    fn score(&self, gamma: f64) -> Result<f64> {
        let k = self.k;
        let mut a = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        let mut da = DMatrix::<f64>::zeros(k, k);
        let mut db = DVector::<f64>::zeros(k);
        let (mut yhy, mut dyhy, mut dlogdet_h) = (0.0, 0.0, 0.0);
        for c in 0..self.counts.len() {
            let nj = self.counts[c] as f64;
            if nj == 0.0 {
                continue;
            }
            let g = 1.0 + nj * gamma;
            let cj = gamma / g;
            let dcj = 1.0 / (g * g);
            let ss = &self.xs[c] * self.xs[c].transpose();
            a += &self.xtx[c] - &ss * cj;
            da -= &ss * dcj;
            b += &self.xty[c] - &self.xs[c] * (self.ys[c] * cj);
            db -= &self.xs[c] * (self.ys[c] * dcj);
            yhy += self.yty[c] - cj * self.ys[c] * self.ys[c];
            dyhy -= dcj * self.ys[c] * self.ys[c];
            dlogdet_h += nj / g;
        }
        let chol = cholesky_with_ridge(&a)?;
        let beta = chol.solve(&b);
        let rss = yhy - b.dot(&beta);
        let drss = dyhy - 2.0 * db.dot(&beta) + beta.dot(&(&da * &beta));
        let dlogdet_a = (chol.solve(&da)).trace();
        let dof = (self.n - k) as f64;
        Ok(-0.5 * (dof * drss / rss + dlogdet_h + dlogdet_a))
    }
}

/// Fit the random-intercept model by REML.
pub fn fit_lmm_reml(y: &[f64], x: &[f64], p: usize, county: &[usize], n_counties: usize) -> Result<LmmFit> {
    let n = y.len();
    if x.len() != n * p || county.len() != n {
        return Err(SaeError::Dimension("LMM inputs disagree in length".into()));
    }
    if n <= p + 2 {
        return Err(SaeError::InvalidInput(format!("LMM needs n > p + 2 (n={n}, p={p})")));
    }
    if county.iter().any(|&c| c >= n_counties) {
        return Err(SaeError::InvalidInput("county index out of range".into()));
    }
    let suff = Suff::new(y, x, p, county, n_counties);
    if suff.counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(SaeError::InvalidInput("LMM needs at least 2 counties with data".into()));
    }
    let f = |lg: f64| suff.profile(lg.exp()).map(|r| r.0);
    // coarse grid in log gamma
    let lo = -18.0;
    let hi = 14.0;
    let steps = 64;
    let h = (hi - lo) / steps as f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut vals = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let v = f(lo + h * s as f64)?;
        vals.push(v);
        if v > best.0 {
            best = (v, s);
        }
    }
    let a = lo + h * (best.1.saturating_sub(1)) as f64;
    let b = lo + h * (best.1 + 1).min(steps) as f64;
    let mut lg = golden_max(&f, a, b, 1e-12)?;
    // the criterion is flat near its peak, so finish on the sign of the score
    let (sa, sb) = (suff.score(a.exp())?, suff.score(b.exp())?);
    if sa > 0.0 && sb < 0.0 {
        let (mut l, mut r) = (a, b);
        while r - l > 1e-14 * (1.0 + l.abs()) {
            let mid = 0.5 * (l + r);
            if mid <= l || mid >= r {
                break;
            }
            if suff.score(mid.exp())? > 0.0 {
                l = mid;
            } else {
                r = mid;
            }
        }
        let root = 0.5 * (l + r);
        if f(root)? >= f(lg)? - 1e-9 {
            lg = root;
        }
    }
    let mut gamma = lg.exp();
    let (mut ll, _, _) = suff.profile(gamma)?;
    let (ll0, _, _) = suff.profile(0.0)?;
    if ll0 >= ll {
        gamma = 0.0;
        ll = ll0;
    }
    let (_, coef, tau2) = suff.profile(gamma)?;
    if !ll.is_finite() {
        return Err(SaeError::Numerical(format!(
            "REML criterion not finite; grid values {:?}",
            &vals[..vals.len().min(8)]
        )));
    }
    let mut resid_sum = vec![0.0; n_counties];
    for i in 0..n {
        let fit = coef[0] + x[i * p..(i + 1) * p].iter().zip(coef.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>();
        resid_sum[county[i]] += y[i] - fit;
    }
    let blups = (0..n_counties)
        .map(|c| {
            let nj = suff.counts[c] as f64;
            gamma / (1.0 + nj * gamma) * resid_sum[c]
        })
        .collect();
    Ok(LmmFit {
        beta0: coef[0],
        beta: coef.as_slice()[1..].to_vec(),
        sigma2_b: gamma * tau2,
        tau2,
        blups,
        reml_loglik: ll,
    })
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
pub(crate) fn golden_max<F: Fn(f64) -> Result<f64>>(f: &F, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc > fd { c } else { d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn score_matches_finite_difference() {
        let mut rng = rng_from_seed(8);
        let n = 80;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let county: Vec<usize> = (0..n).map(|i| i % 6).collect();
        let y: Vec<f64> = (0..n).map(|i| x[i] + county[i] as f64 * 0.3 + rng.sample::<f64, _>(StandardNormal)).collect();
        let suff = Suff::new(&y, &x, 1, &county, 6);
        for gamma in [0.05, 0.4, 2.0] {
            let h = 1e-6 * gamma;
            let fd = (suff.profile(gamma + h).unwrap().0 - suff.profile(gamma - h).unwrap().0) / (2.0 * h);
            let an = suff.score(gamma).unwrap();
            assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "gamma {gamma}: {fd} vs {an}");
        }
    }

    #[test]
    fn zero_between_variance_is_boundary() {
        // identical county means: between-county variability is exactly zero
        let mut y = Vec::new();
        let mut county = Vec::new();
        for c in 0..5 {
            for v in [1.0, 2.0, 3.0, 4.0] {
                y.push(v);
                county.push(c);
            }
        }
        let fit = fit_lmm_reml(&y, &[], 0, &county, 5).unwrap();
        assert_eq!(fit.sigma2_b, 0.0);
        assert!(fit.blups.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_ratio_gives_ordinary_least_squares() {
        let mut rng = rng_from_seed(3);
        let n = 60;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let county: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let suff = Suff::new(&y, &x, 1, &county, 4);
        let (_, coef, _) = suff.profile(0.0).unwrap();
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = y.iter().sum::<f64>() / n as f64;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((coef[1] - slope).abs() < 1e-10);
        assert!((coef[0] - (my - slope * mx)).abs() < 1e-10);
    }

    #[test]
    fn unobserved_county_blup_is_zero() {
        let mut rng = rng_from_seed(8);
        let county: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let y: Vec<f64> = county.iter().map(|&c| c as f64 + rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = fit_lmm_reml(&y, &[], 0, &county, 4).unwrap();
        assert_eq!(fit.blups[3], 0.0);
        assert!(fit.sigma2_b > 0.0);
    }

    #[test]
    fn too_few_rows_or_counties_rejected() {
        assert!(fit_lmm_reml(&[1.0, 2.0], &[], 0, &[0, 1], 2).is_err());
        assert!(fit_lmm_reml(&[1.0, 2.0, 3.0, 4.0], &[], 0, &[0, 0, 0, 0], 2).is_err());
    }
}
