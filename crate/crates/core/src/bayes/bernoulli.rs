//! Metropolis-within-Gibbs sampler for the presence stage:
//! `logit P(z = 1) = alpha0 + alpha0_j + v'alpha`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};

use super::Priors;
use crate::error::{Result, SaeError};
use crate::linalg::{cholesky_with_ridge, log1p_exp, logistic};

#[derive(Debug, Clone)]
pub struct BernoulliData {
    pub z: Vec<u8>,
    /// Row-major `n x q` predictors.
    pub v: Vec<f64>,
    pub q: usize,
    pub county: Vec<usize>,
    pub n_counties: usize,
    rows_by_county: Vec<Vec<usize>>,
}

impl BernoulliData {
    pub fn new(z: Vec<u8>, v: Vec<f64>, q: usize, county: Vec<usize>, n_counties: usize) -> Result<Self> {
        let n = z.len();
        if n == 0 {
            return Err(SaeError::InvalidInput("presence stage has no rows".into()));
        }
        if v.len() != n * q || county.len() != n {
            return Err(SaeError::Dimension(format!(
                "presence stage: {n} indicators, {} predictor values (q={q}), {} county ids",
                v.len(),
                county.len()
            )));
        }
        if z.iter().any(|&b| b > 1) {
            return Err(SaeError::InvalidInput("presence indicators must be 0 or 1".into()));
        }
        let mut rows_by_county = vec![Vec::new(); n_counties];
        for (i, &c) in county.iter().enumerate() {
            if c >= n_counties {
                return Err(SaeError::InvalidInput(format!("county index {c} out of range")));
            }
            rows_by_county[c].push(i);
        }
        Ok(BernoulliData { z, v, q, county, n_counties, rows_by_county })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn vrow(&self, i: usize) -> &[f64] {
        &self.v[i * self.q..(i + 1) * self.q]
    }

    pub fn rows_of(&self, j: usize) -> &[usize] {
        &self.rows_by_county[j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliState {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub county: Vec<f64>,
    pub sigma2: f64,
}

impl BernoulliState {
    pub fn fixed_part(&self, v: &[f64]) -> f64 {
        self.alpha0 + v.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn row_loglik(z: u8, eta: f64) -> f64 {
    if z == 1 {
        -log1p_exp(-eta)
    } else {
        -log1p_exp(eta)
    }
}

/// One presence-stage chain with adaptive proposals.
pub struct BernoulliSampler {
    data: BernoulliData,
    priors: Priors,
    state: BernoulliState,
    /// alpha0 + v'alpha per row under the current state
    eta_fixed: Vec<f64>,
    prop_chol: DMatrix<f64>,
    block_log_scale: f64,
    county_log_sd: Vec<f64>,
    adapting: bool,
    iter: usize,
    batch_block: usize,
    batch_county: Vec<usize>,
    batch_count: usize,
    history: Vec<Vec<f64>>,
    cov_updates: usize,
    block_tries: usize,
    block_accepts: usize,
    county_tries: usize,
    county_accepts: usize,
}

const BATCH: usize = 50;

impl BernoulliSampler {
    pub fn new<R: Rng + ?Sized>(data: BernoulliData, priors: Priors, rng: &mut R) -> Result<Self> {
        priors.validate()?;
        let d = 1 + data.q;
        let (mode, cov) = penalized_logistic_mode(&data, priors.var_fixed)?;
        let prop_chol = cholesky_with_ridge(&cov)?.l();
        // start near the pooled mode, perturbed by its approximate posterior sd
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let start = &mode + &prop_chol * z * 1.5;
        let alpha0 = start[0];
        let alpha: Vec<f64> = start.as_slice()[1..].to_vec();
        let sigma2 = 0.5 * (0.3 * rng.sample::<f64, _>(StandardNormal)).exp();
        let state = BernoulliState { alpha0, alpha, county: vec![0.0; data.n_counties], sigma2 };
        let eta_fixed = (0..data.n()).map(|i| state.fixed_part(data.vrow(i))).collect();
        let j = data.n_counties;
        Ok(BernoulliSampler {
            data,
            priors,
            state,
            eta_fixed,
            prop_chol,
            block_log_scale: (2.38 / (d as f64).sqrt()).ln(),
            county_log_sd: vec![0.5f64.ln(); j],
            adapting: true,
            iter: 0,
            batch_block: 0,
            batch_county: vec![0; j],
            batch_count: 0,
            history: Vec::new(),
            cov_updates: 0,
            block_tries: 0,
            block_accepts: 0,
            county_tries: 0,
            county_accepts: 0,
        })
    }

    pub fn state(&self) -> &BernoulliState {
        &self.state
    }

    pub fn data(&self) -> &BernoulliData {
        &self.data
    }

    pub fn set_state(&mut self, state: BernoulliState) {
        self.eta_fixed = (0..self.data.n()).map(|i| state.fixed_part(self.data.vrow(i))).collect();
        self.state = state;
    }

    pub fn set_response(&mut self, z: Vec<u8>) -> Result<()> {
        if z.len() != self.data.n() {
            return Err(SaeError::Dimension("indicator length changed".into()));
        }
        self.data.z = z;
        Ok(())
    }

    pub fn set_adapting(&mut self, on: bool) {
        if self.adapting && !on {
            self.block_tries = 0;
            self.block_accepts = 0;
            self.county_tries = 0;
            self.county_accepts = 0;
            self.history = Vec::new();
        }
        self.adapting = on;
    }

    /// Post-adaptation acceptance rates of the coefficient block and the
    /// county-effect updates.
    pub fn acceptance(&self) -> (f64, f64) {
        let r = |a: usize, t: usize| if t == 0 { f64::NAN } else { a as f64 / t as f64 };
        (r(self.block_accepts, self.block_tries), r(self.county_accepts, self.county_tries))
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.update_block(rng);
        self.update_counties(rng);
        self.shift(rng);
        self.update_sigma2(rng);
        self.iter += 1;
        if self.adapting {
            self.adapt();
        }
        Ok(())
    }

    fn update_block<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let d = 1 + self.data.q;
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = &self.prop_chol * z * self.block_log_scale.exp();
        let mut prop = self.state.clone();
        prop.alpha0 += step[0];
        for k in 0..self.data.q {
            prop.alpha[k] += step[k + 1];
        }
        let mut new_eta = Vec::with_capacity(self.data.n());
        let mut diff = 0.0;
        for i in 0..self.data.n() {
            let e = prop.fixed_part(self.data.vrow(i));
            let a = self.state.county[self.data.county[i]];
            diff += row_loglik(self.data.z[i], e + a) - row_loglik(self.data.z[i], self.eta_fixed[i] + a);
            new_eta.push(e);
        }
        let sq = |s: &BernoulliState| s.alpha0 * s.alpha0 + s.alpha.iter().map(|a| a * a).sum::<f64>();
        diff -= (sq(&prop) - sq(&self.state)) / (2.0 * self.priors.var_fixed);
        self.block_tries += 1;
        if rng.gen::<f64>().ln() < diff {
            self.state.alpha0 = prop.alpha0;
            self.state.alpha = prop.alpha;
            self.eta_fixed = new_eta;
            self.block_accepts += 1;
            self.batch_block += 1;
        }
        if self.adapting {
            let mut h = vec![self.state.alpha0];
            h.extend_from_slice(&self.state.alpha);
            self.history.push(h);
        }
    }

    fn update_counties<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let s2 = self.state.sigma2;
        for j in 0..self.data.n_counties {
            let rows = self.data.rows_of(j);
            let cur = self.state.county[j];
            if rows.is_empty() {
                let z: f64 = rng.sample(StandardNormal);
                self.state.county[j] = s2.sqrt() * z;
                continue;
            }
            let prop = cur + self.county_log_sd[j].exp() * rng.sample::<f64, _>(StandardNormal);
            let mut diff = -(prop * prop - cur * cur) / (2.0 * s2);
            for &i in rows {
                let e = self.eta_fixed[i];
                diff += row_loglik(self.data.z[i], e + prop) - row_loglik(self.data.z[i], e + cur);
            }
            self.county_tries += 1;
            if rng.gen::<f64>().ln() < diff {
                self.state.county[j] = prop;
                self.county_accepts += 1;
                self.batch_county[j] += 1;
            }
        }
    }

    /// Exact conditional move along alpha0 + d, alpha0_j - d, which leaves
    /// the likelihood unchanged.
    fn shift<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let v = self.priors.var_fixed;
        let s2 = self.state.sigma2;
        let j = self.data.n_counties as f64;
        let prec = 1.0 / v + j / s2;
        let canon = -self.state.alpha0 / v + self.state.county.iter().sum::<f64>() / s2;
        let d = canon / prec + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
        self.state.alpha0 += d;
        for a in self.state.county.iter_mut() {
            *a -= d;
        }
        for e in self.eta_fixed.iter_mut() {
            *e += d;
        }
    }

    fn update_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let j = self.data.n_counties as f64;
        let ss: f64 = self.state.county.iter().map(|a| a * a).sum();
        let g: f64 = rng.sample(Gamma::new(self.priors.ig_shape + 0.5 * j, 1.0).expect("positive shape"));
        self.state.sigma2 = (self.priors.ig_scale + 0.5 * ss) / g;
    }

    fn adapt(&mut self) {
        if self.iter % BATCH != 0 {
            return;
        }
        self.batch_count += 1;
        let step = (1.0 / (self.batch_count as f64).sqrt()).min(0.5);
        let rate = self.batch_block as f64 / BATCH as f64;
        self.block_log_scale = (self.block_log_scale + step * (rate - 0.234)).clamp(-10.0, 3.0);
        for j in 0..self.data.n_counties {
            let r = self.batch_county[j] as f64 / BATCH as f64;
            self.county_log_sd[j] = (self.county_log_sd[j] + step * (r - 0.44)).clamp(-10.0, 3.0);
            self.batch_county[j] = 0;
        }
        self.batch_block = 0;
        // refresh the block proposal shape from the second half of the history
        let d = 1 + self.data.q;
        if self.history.len() >= 20 * d.max(10) && self.cov_updates < 4 && self.iter % (BATCH * 10) == 0 {
            let recent = &self.history[self.history.len() / 2..];
            if let Some(chol) = empirical_cov_chol(recent, d) {
                self.prop_chol = chol;
                self.block_log_scale = (2.38 / (d as f64).sqrt()).ln();
                self.cov_updates += 1;
            }
        }
    }
}

fn empirical_cov_chol(rows: &[Vec<f64>], d: usize) -> Option<DMatrix<f64>> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += r[k] / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]) / (n - 1.0);
            }
        }
    }
    let scale = (0..d).map(|k| cov[(k, k)]).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    for k in 0..d {
        cov[(k, k)] += 1e-6 * scale;
    }
    cov.cholesky().map(|c| c.l())
}

/// Ridge-penalized pooled logistic fit by Newton's method, returning the
/// mode and the inverse observed information.
fn penalized_logistic_mode(data: &BernoulliData, var: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = 1 + data.q;
    let mut theta = DVector::<f64>::zeros(d);
    let mut xt = vec![1.0; d];
    let mut info = DMatrix::<f64>::identity(d, d);
    for _ in 0..50 {
        let mut grad = -&theta / var;
        info = DMatrix::<f64>::identity(d, d) / var;
        for i in 0..data.n() {
            xt[1..].copy_from_slice(data.vrow(i));
            let eta: f64 = xt.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let p = logistic(eta);
            let wgt = p * (1.0 - p);
            for a in 0..d {
                grad[a] += (data.z[i] as f64 - p) * xt[a];
                for c in 0..d {
                    info[(a, c)] += wgt * xt[a] * xt[c];
                }
            }
        }
        let step = cholesky_with_ridge(&info)?.solve(&grad);
        theta += &step;
        if step.amax() < 1e-8 {
            break;
        }
    }
    let cov = cholesky_with_ridge(&info)?.inverse();
    Ok((theta, cov))
}
