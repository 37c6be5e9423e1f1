//! Laplace-approximate maximum likelihood for the random-intercept logistic
//! model `logit p = alpha0 + v'alpha + a_j`, `a_j ~ N(0, sigma2)`.
//!
//! For fixed `sigma2` the Laplace objective is maximized over the fixed
//! effects by Newton steps (county modes re-solved at each step); `sigma2`
//! is then chosen by a one-dimensional search on its log scale, with the
//! `sigma2 = 0` boundary (plain logistic regression) checked explicitly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lmm::golden_max;
use crate::error::{Result, SaeError};
use crate::linalg::{cholesky_with_ridge, log1p_exp, logistic};

/// Ridge applied to the slopes when the likelihood is unbounded.
pub const SEPARATION_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmFit {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub sigma2_a: f64,
    /// County modes; 0 for counties without rows.
    pub modes: Vec<f64>,
    pub laplace_loglik: f64,
    /// Standard errors of `(alpha0, alpha)` from the inverse information at the optimum.
    pub std_errors: Vec<f64>,
    /// True when the separation ridge was needed.
    pub ridge: bool,
    pub warnings: Vec<String>,
}

impl GlmmFit {
    pub fn probability(&self, county: usize, v: &[f64]) -> f64 {
        logistic(self.alpha0 + self.modes[county] + v.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>())
    }
}

struct Problem<'a> {
    z: &'a [u8],
    v: &'a [f64],
    q: usize,
    rows: Vec<Vec<usize>>,
    ridge: f64,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    modes: Vec<f64>,
}

impl Problem<'_> {
    fn xrow(&self, i: usize, out: &mut [f64]) {
        out[0] = 1.0;
        out[1..].copy_from_slice(&self.v[i * self.q..(i + 1) * self.q]);
    }

    fn linear(&self, theta: &DVector<f64>, xt: &mut [f64], i: usize) -> f64 {
        self.xrow(i, xt);
        xt.iter().zip(theta.iter()).map(|(a, b)| a * b).sum()
    }

    /// Mode of county `j`'s effect for fixed effects with linear predictor `eta`.
    fn county_mode(&self, eta: &[f64], rows: &[usize], sigma2: f64, start: f64) -> Result<f64> {
        let mut a = start;
        let obj = |a: f64| -> f64 {
            rows.iter().map(|&i| row_ll(self.z[i], eta[i] + a)).sum::<f64>() - a * a / (2.0 * sigma2)
        };
        let mut f = obj(a);
        for _ in 0..100 {
            let mut g = -a / sigma2;
            let mut h = 1.0 / sigma2;
            for &i in rows {
                let p = logistic(eta[i] + a);
                g += self.z[i] as f64 - p;
                h += p * (1.0 - p);
            }
            let mut step = g / h;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = a + step;
                let fc = obj(cand);
                if fc >= f - 1e-12 {
                    a = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                return Err(SaeError::Numerical("county mode search failed after step-halving".into()));
            }
            if step.abs() < 1e-10 {
                return Ok(a);
            }
        }
        Ok(a)
    }

    /// Laplace objective, its gradient in the fixed effects and a
    /// Fisher-type Hessian, at fixed `sigma2 > 0` (or `sigma2 = 0`).
    fn evaluate(&self, theta: &DVector<f64>, sigma2: f64, start: &[f64]) -> Result<Eval> {
        let d = 1 + self.q;
        let n = self.z.len();
        let mut xt = vec![0.0; d];
        let eta: Vec<f64> = (0..n).map(|i| self.linear(theta, &mut xt, i)).collect();
        let mut value = -0.5 * self.ridge * theta.iter().skip(1).map(|t| t * t).sum::<f64>();
        let mut grad = DVector::<f64>::zeros(d);
        for k in 1..d {
            grad[k] -= self.ridge * theta[k];
        }
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for k in 1..d {
            hess[(k, k)] += self.ridge;
        }
        let mut modes = vec![0.0; self.rows.len()];
        for (j, rows) in self.rows.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let a = if sigma2 > 0.0 { self.county_mode(&eta, rows, sigma2, start[j])? } else { 0.0 };
            modes[j] = a;
            let mut hj = 0.0;
            let mut wx = DVector::<f64>::zeros(d);
            let mut tx = DVector::<f64>::zeros(d);
            let mut t_sum = 0.0;
            for &i in rows {
                self.xrow(i, &mut xt);
                let e = eta[i] + a;
                let p = logistic(e);
                let w = p * (1.0 - p);
                let t = w * (1.0 - 2.0 * p);
                value += row_ll(self.z[i], e);
                hj += w;
                t_sum += t;
                for k in 0..d {
                    grad[k] += (self.z[i] as f64 - p) * xt[k];
                    wx[k] += w * xt[k];
                    tx[k] += t * xt[k];
                    for l in 0..d {
                        hess[(k, l)] += w * xt[k] * xt[l];
                    }
                }
            }
            if sigma2 > 0.0 {
                value -= a * a / (2.0 * sigma2) + 0.5 * (1.0 + sigma2 * hj).ln();
                let denom = hj + 1.0 / sigma2;
                // d a_j / d theta
                let da = -&wx / denom;
                let dh = &tx + &da * t_sum;
                grad -= dh * (0.5 * sigma2 / (1.0 + sigma2 * hj));
                hess -= &wx * wx.transpose() / denom;
            }
        }
        Ok(Eval { value, grad, hess, modes })
    }

    /// Maximize the Laplace objective over the fixed effects at fixed `sigma2`.
    fn maximize(&self, sigma2: f64, theta0: &DVector<f64>, modes0: &[f64]) -> Result<(DVector<f64>, Eval)> {
        let mut theta = theta0.clone();
        let mut cur = self.evaluate(&theta, sigma2, modes0)?;
        for _ in 0..200 {
            let chol = cholesky_with_ridge(&cur.hess)?;
            let mut step = chol.solve(&cur.grad);
            let mut moved = false;
            for _ in 0..40 {
                let cand = &theta + &step;
                match self.evaluate(&cand, sigma2, &cur.modes) {
                    Ok(e) if e.value >= cur.value - 1e-10 => {
                        theta = cand;
                        cur = e;
                        moved = true;
                        break;
                    }
                    _ => step *= 0.5,
                }
            }
            if !moved || step.amax() < 1e-9 {
                break;
            }
            if self.ridge == 0.0 && theta.amax() > 50.0 {
                return Err(SaeError::Numerical("fixed effects diverging; likely separation".into()));
            }
        }
        Ok((theta, cur))
    }
}

fn row_ll(z: u8, eta: f64) -> f64 {
    if z == 1 {
        -log1p_exp(-eta)
    } else {
        -log1p_exp(eta)
    }
}

/// Fit the random-intercept logistic model by Laplace-approximate maximum likelihood.
pub fn fit_bernoulli_glmm_laplace(
    z: &[u8],
    v: &[f64],
    q: usize,
    county: &[usize],
    n_counties: usize,
) -> Result<GlmmFit> {
    let n = z.len();
    if v.len() != n * q || county.len() != n {
        return Err(SaeError::Dimension("GLMM inputs disagree in length".into()));
    }
    let ones = z.iter().filter(|&&b| b == 1).count();
    if ones == 0 || ones == n {
        return Err(SaeError::InvalidInput("presence indicators need both classes".into()));
    }
    let mut rows = vec![Vec::new(); n_counties];
    for (i, &c) in county.iter().enumerate() {
        if c >= n_counties {
            return Err(SaeError::InvalidInput("county index out of range".into()));
        }
        rows[c].push(i);
    }
    match fit_with_ridge(z, v, q, rows.clone(), 0.0) {
        Ok(f) => Ok(f),
        Err(SaeError::Numerical(msg)) => {
            let mut f = fit_with_ridge(z, v, q, rows, SEPARATION_RIDGE)?;
            f.ridge = true;
            f.warnings.push(format!("{msg}; refit with L2 penalty {SEPARATION_RIDGE} on slopes"));
            Ok(f)
        }
        Err(e) => Err(e),
    }
}

fn fit_with_ridge(z: &[u8], v: &[f64], q: usize, rows: Vec<Vec<usize>>, ridge: f64) -> Result<GlmmFit> {
    let j = rows.len();
    let prob = Problem { z, v, q, rows, ridge };
    let d = 1 + q;
    let mean = z.iter().map(|&b| b as f64).sum::<f64>() / z.len() as f64;
    let mut theta0 = DVector::<f64>::zeros(d);
    theta0[0] = (mean / (1.0 - mean)).ln();
    let (theta_fixed, eval0) = prob.maximize(0.0, &theta0, &vec![0.0; j])?;

    let profile = |ls: f64| -> Result<f64> {
        prob.maximize(ls.exp(), &theta_fixed, &vec![0.0; j]).map(|(_, e)| e.value)
    };
    let lo = -10.0;
    let hi = 4.0;
    let steps = 14;
    let h = (hi - lo) / steps as f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for s in 0..=steps {
        let val = profile(lo + h * s as f64)?;
        if val > best.0 {
            best = (val, s);
        }
    }
    let a = lo + h * best.1.saturating_sub(1) as f64;
    let b = lo + h * (best.1 + 1).min(steps) as f64;
    let ls = golden_max(&profile, a, b, 1e-6)?;
    let sigma2 = ls.exp();
    let (theta, eval) = prob.maximize(sigma2, &theta_fixed, &vec![0.0; j])?;
    let (theta, eval, sigma2) =
        if eval0.value >= eval.value { (theta_fixed, eval0, 0.0) } else { (theta, eval, sigma2) };
    let std_errors = match eval.hess.clone().try_inverse() {
        Some(cov) => (0..d).map(|k| cov[(k, k)].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; d],
    };
    Ok(GlmmFit {
        alpha0: theta[0],
        alpha: theta.as_slice()[1..].to_vec(),
        sigma2_a: sigma2,
        modes: eval.modes,
        laplace_loglik: eval.value,
        std_errors,
        ridge: ridge > 0.0,
        warnings: Vec::new(),
    })
}
