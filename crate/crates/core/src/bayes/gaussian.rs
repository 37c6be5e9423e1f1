//! Gibbs sampler for the continuous stage:
//! `y = beta0 + beta0_j + x'(beta + beta_j) + w(l) + eps`, with county
//! intercepts, optional county slopes (CVC), common or county residual
//! variances (CRV) and an optional NNGP spatial intercept (SVI).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};

use super::{CoefficientBlocking, Priors};
use crate::error::{Result, SaeError};
use crate::linalg::{cholesky_with_ridge, sample_canonical_normal};
use crate::nngp::{
    build_graph, factorize_correlation, quadratic_form, sample_phi_mh, CorrelationFactors,
    NeighborGraph, SpatialParams,
};

/// Which optional structure the continuous stage carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianModel {
    pub cvc: bool,
    pub crv: bool,
    pub svi: bool,
    pub neighbors: usize,
}

#[derive(Debug, Clone)]
pub struct GaussianData {
    pub y: Vec<f64>,
    /// Row-major `n x p` predictors.
    pub x: Vec<f64>,
    pub p: usize,
    pub county: Vec<usize>,
    pub n_counties: usize,
    /// Site coordinates per row; required by spatial models.
    pub coords: Vec<[f64; 2]>,
    rows_by_county: Vec<Vec<usize>>,
}

impl GaussianData {
    pub fn new(
        y: Vec<f64>,
        x: Vec<f64>,
        p: usize,
        county: Vec<usize>,
        n_counties: usize,
        coords: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(SaeError::InvalidInput("continuous stage has no rows".into()));
        }
        if x.len() != n * p || county.len() != n {
            return Err(SaeError::Dimension(format!(
                "continuous stage: {} responses, {} predictor values (p={p}), {} county ids",
                n,
                x.len(),
                county.len()
            )));
        }
        if !coords.is_empty() && coords.len() != n {
            return Err(SaeError::Dimension("coordinates must match rows".into()));
        }
        let mut rows_by_county = vec![Vec::new(); n_counties];
        for (i, &c) in county.iter().enumerate() {
            if c >= n_counties {
                return Err(SaeError::InvalidInput(format!("county index {c} out of range")));
            }
            rows_by_county[c].push(i);
        }
        Ok(GaussianData { y, x, p, county, n_counties, coords, rows_by_county })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn xrow(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn rows_of(&self, j: usize) -> &[usize] {
        &self.rows_by_county[j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub county_intercept: Vec<f64>,
    /// Row-major `J x p`; empty unless CVC.
    pub county_slopes: Vec<f64>,
    pub sigma2_intercept: f64,
    /// Length p; empty unless CVC.
    pub sigma2_slopes: Vec<f64>,
    /// Length 1, or J under CRV.
    pub tau2: Vec<f64>,
    /// Spatial effect per row; empty unless SVI.
    pub w: Vec<f64>,
    pub spatial: Option<SpatialParams>,
}

impl GaussianState {
    pub fn tau2_of(&self, county: usize) -> f64 {
        if self.tau2.len() == 1 {
            self.tau2[0]
        } else {
            self.tau2[county]
        }
    }

    pub fn fixed_part(&self, x: &[f64]) -> f64 {
        self.beta0 + dot(x, &self.beta)
    }

    pub fn county_part(&self, j: usize, x: &[f64]) -> f64 {
        let mut v = self.county_intercept[j];
        if !self.county_slopes.is_empty() {
            let p = x.len();
            v += dot(x, &self.county_slopes[j * p..(j + 1) * p]);
        }
        v
    }

    fn w_of(&self, i: usize) -> f64 {
        if self.w.is_empty() {
            0.0
        } else {
            self.w[i]
        }
    }

    /// Mean of row `i` given every block.
    pub fn mean(&self, data: &GaussianData, i: usize) -> f64 {
        let x = data.xrow(i);
        self.fixed_part(x) + self.county_part(data.county[i], x) + self.w_of(i)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g: f64 = rng.sample(Gamma::new(shape, 1.0).expect("positive shape"));
    scale / g
}

fn county_block_len(model: &GaussianModel, p: usize) -> usize {
    if model.cvc {
        1 + p
    } else {
        1
    }
}

/// Draw (beta0, beta) from their Gaussian full conditional.
pub fn update_fixed_effects<R: Rng + ?Sized>(
    data: &GaussianData,
    state: &mut GaussianState,
    priors: &Priors,
    rng: &mut R,
) -> Result<()> {
    let k = 1 + data.p;
    let mut q = DMatrix::<f64>::identity(k, k) / priors.var_fixed;
    let mut b = DVector::<f64>::zeros(k);
    let mut xt = vec![1.0; k];
    for i in 0..data.n() {
        let x = data.xrow(i);
        let j = data.county[i];
        let omega = 1.0 / state.tau2_of(j);
        let r = data.y[i] - state.county_part(j, x) - state.w_of(i);
        xt[1..].copy_from_slice(x);
        for a in 0..k {
            b[a] += omega * xt[a] * r;
            for c in 0..=a {
                q[(a, c)] += omega * xt[a] * xt[c];
            }
        }
    }
    symmetrize(&mut q);
    let draw = sample_canonical_normal(&q, &b, rng)?;
    state.beta0 = draw[0];
    state.beta.copy_from_slice(&draw.as_slice()[1..]);
    Ok(())
}

fn symmetrize(q: &mut DMatrix<f64>) {
    for a in 0..q.nrows() {
        for c in 0..a {
            q[(c, a)] = q[(a, c)];
        }
    }
}

fn county_prior_precision(model: &GaussianModel, state: &GaussianState, p: usize) -> Vec<f64> {
    let mut d = vec![1.0 / state.sigma2_intercept];
    if model.cvc {
        d.extend((0..p).map(|k| 1.0 / state.sigma2_slopes[k]));
    }
    d
}

/// Draw each county's intercept (and slopes under CVC) from its conditional.
/// Counties without rows draw from their prior.
pub fn update_county_effects<R: Rng + ?Sized>(
    data: &GaussianData,
    model: &GaussianModel,
    state: &mut GaussianState,
    rng: &mut R,
) -> Result<()> {
    let p = data.p;
    let kc = county_block_len(model, p);
    let dprec = county_prior_precision(model, state, p);
    let mut xt = vec![1.0; 1 + p];
    for j in 0..data.n_counties {
        let omega = 1.0 / state.tau2_of(j);
        let mut q = DMatrix::<f64>::from_diagonal(&DVector::from_column_slice(&dprec));
        let mut b = DVector::<f64>::zeros(kc);
        for &i in data.rows_of(j) {
            let x = data.xrow(i);
            let r = data.y[i] - state.fixed_part(x) - state.w_of(i);
            xt[1..].copy_from_slice(x);
            for a in 0..kc {
                b[a] += omega * xt[a] * r;
                for c in 0..=a {
                    q[(a, c)] += omega * xt[a] * xt[c];
                }
            }
        }
        symmetrize(&mut q);
        let draw = sample_canonical_normal(&q, &b, rng)?;
        state.county_intercept[j] = draw[0];
        if model.cvc {
            state.county_slopes[j * p..(j + 1) * p].copy_from_slice(&draw.as_slice()[1..]);
        }
    }
    Ok(())
}

/// Draw fixed and county effects jointly: fixed effects from their marginal
/// (county effects integrated out), then county effects given them.
pub fn update_coefficients_joint<R: Rng + ?Sized>(
    data: &GaussianData,
    model: &GaussianModel,
    state: &mut GaussianState,
    priors: &Priors,
    rng: &mut R,
) -> Result<()> {
    let p = data.p;
    let kf = 1 + p;
    let kc = county_block_len(model, p);
    let dprec = county_prior_precision(model, state, p);
    let mut schur = DMatrix::<f64>::identity(kf, kf) / priors.var_fixed;
    let mut rhs = DVector::<f64>::zeros(kf);
    let mut xt = vec![1.0; kf];
    let mut per_county = Vec::with_capacity(data.n_counties);
    for j in 0..data.n_counties {
        let omega = 1.0 / state.tau2_of(j);
        let mut s = DMatrix::<f64>::zeros(kf, kf);
        let mut t = DVector::<f64>::zeros(kf);
        for &i in data.rows_of(j) {
            xt[1..].copy_from_slice(data.xrow(i));
            let r = data.y[i] - state.w_of(i);
            for a in 0..kf {
                t[a] += xt[a] * r;
                for c in 0..=a {
                    s[(a, c)] += xt[a] * xt[c];
                }
            }
        }
        symmetrize(&mut s);
        s *= omega;
        t *= omega;
        let mut c_j = s.view((0, 0), (kc, kc)).into_owned();
        for a in 0..kc {
            c_j[(a, a)] += dprec[a];
        }
        let b_j = s.view((0, 0), (kc, kf)).into_owned();
        let t_c = t.rows(0, kc).into_owned();
        let chol = cholesky_with_ridge(&c_j)?;
        let cinv_b = chol.solve(&b_j);
        let cinv_t = chol.solve(&t_c);
        schur += &s - b_j.transpose() * &cinv_b;
        rhs += &t - b_j.transpose() * &cinv_t;
        per_county.push((chol, b_j, t_c));
    }
    symmetrize_upper_from_average(&mut schur);
    let fixed = sample_canonical_normal(&schur, &rhs, rng)?;
    state.beta0 = fixed[0];
    state.beta.copy_from_slice(&fixed.as_slice()[1..]);
    for (j, (chol, b_j, t_c)) in per_county.into_iter().enumerate() {
        let canon = t_c - b_j * &fixed;
        let mean = chol.solve(&canon);
        let z = DVector::from_iterator(kc, (0..kc).map(|_| rng.sample(StandardNormal)));
        let dev = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| SaeError::Numerical("triangular solve failed".into()))?;
        let draw = mean + dev;
        state.county_intercept[j] = draw[0];
        if model.cvc {
            state.county_slopes[j * p..(j + 1) * p].copy_from_slice(&draw.as_slice()[1..]);
        }
    }
    Ok(())
}

fn symmetrize_upper_from_average(q: &mut DMatrix<f64>) {
    for a in 0..q.nrows() {
        for c in 0..a {
            let v = 0.5 * (q[(a, c)] + q[(c, a)]);
            q[(a, c)] = v;
            q[(c, a)] = v;
        }
    }
}

/// Inverse-gamma updates of the county intercept variance and, under CVC,
/// the per-predictor slope variances.
pub fn update_random_effect_variances<R: Rng + ?Sized>(
    model: &GaussianModel,
    state: &mut GaussianState,
    p: usize,
    priors: &Priors,
    rng: &mut R,
) {
    let j = state.county_intercept.len() as f64;
    let ss: f64 = state.county_intercept.iter().map(|v| v * v).sum();
    state.sigma2_intercept =
        sample_inv_gamma(priors.ig_shape + 0.5 * j, priors.ig_scale + 0.5 * ss, rng);
    if model.cvc {
        for k in 0..p {
            let ss: f64 = state.county_slopes.iter().skip(k).step_by(p).map(|v| v * v).sum();
            state.sigma2_slopes[k] =
                sample_inv_gamma(priors.ig_shape + 0.5 * j, priors.ig_scale + 0.5 * ss, rng);
        }
    }
}

/// Inverse-gamma update of the residual variance(s).
pub fn update_residual_variances<R: Rng + ?Sized>(
    data: &GaussianData,
    model: &GaussianModel,
    state: &mut GaussianState,
    priors: &Priors,
    rng: &mut R,
) {
    if model.crv {
        for j in 0..data.n_counties {
            let rows = data.rows_of(j);
            let ss: f64 = rows.iter().map(|&i| (data.y[i] - state.mean(data, i)).powi(2)).sum();
            state.tau2[j] = sample_inv_gamma(
                priors.ig_shape + 0.5 * rows.len() as f64,
                priors.ig_scale + 0.5 * ss,
                rng,
            );
        }
    } else {
        let ss: f64 = (0..data.n()).map(|i| (data.y[i] - state.mean(data, i)).powi(2)).sum();
        state.tau2[0] = sample_inv_gamma(
            priors.ig_shape + 0.5 * data.n() as f64,
            priors.ig_scale + 0.5 * ss,
            rng,
        );
    }
}

/// Single-site Gibbs sweep over the latent spatial effects in graph order.
pub fn update_spatial_effects<R: Rng + ?Sized>(
    data: &GaussianData,
    state: &mut GaussianState,
    graph: &NeighborGraph,
    corr: &CorrelationFactors,
    rng: &mut R,
) -> Result<()> {
    let sigma2 = state
        .spatial
        .ok_or_else(|| SaeError::InvalidInput("spatial update without spatial parameters".into()))?
        .sigma2_w;
    let n = graph.len();
    let mut wp: Vec<f64> = (0..n).map(|i| state.w[graph.site_at(i)]).collect();
    for i in 0..n {
        let site = graph.site_at(i);
        let fi = sigma2 * corr.f[i];
        let nb = graph.neighbors(i);
        let mut prec = 1.0 / fi;
        let mut canon = dot_idx(&corr.b[i], nb, &wp) / fi;
        for &(child, slot) in graph.children(i) {
            let fc = sigma2 * corr.f[child];
            let bc = &corr.b[child];
            let bci = bc[slot];
            let mut partial = wp[child];
            for (k, &pk) in graph.neighbors(child).iter().enumerate() {
                if k != slot {
                    partial -= bc[k] * wp[pk];
                }
            }
            prec += bci * bci / fc;
            canon += bci * partial / fc;
        }
        let x = data.xrow(site);
        let j = data.county[site];
        let omega = 1.0 / state.tau2_of(j);
        let r = data.y[site] - state.fixed_part(x) - state.county_part(j, x);
        prec += omega;
        canon += omega * r;
        let z: f64 = rng.sample(StandardNormal);
        wp[i] = canon / prec + z / prec.sqrt();
    }
    for (i, v) in wp.into_iter().enumerate() {
        state.w[graph.site_at(i)] = v;
    }
    Ok(())
}

fn dot_idx(b: &[f64], idx: &[usize], w: &[f64]) -> f64 {
    b.iter().zip(idx).map(|(bk, &k)| bk * w[k]).sum()
}

/// Inverse-gamma update of the spatial variance.
pub fn update_sigma2_w<R: Rng + ?Sized>(
    state: &mut GaussianState,
    graph: &NeighborGraph,
    corr: &CorrelationFactors,
    priors: &Priors,
    rng: &mut R,
) {
    let q = quadratic_form(graph, corr, &state.w);
    if let Some(sp) = state.spatial.as_mut() {
        sp.sigma2_w = sample_inv_gamma(
            priors.ig_shape + 0.5 * graph.len() as f64,
            priors.ig_scale + 0.5 * q,
            rng,
        );
    }
}

/// Exact conditional moves along the directions that leave the likelihood
/// unchanged: shift `beta0` against all of `w`, and each county intercept
/// against the `w` of its own sites.
fn recenter_spatial<R: Rng + ?Sized>(
    data: &GaussianData,
    state: &mut GaussianState,
    graph: &NeighborGraph,
    corr: &CorrelationFactors,
    priors: &Priors,
    rng: &mut R,
) -> Result<()> {
    let sigma2 = state.spatial.map(|s| s.sigma2_w).unwrap_or(1.0);
    let n = graph.len();
    let jn = data.n_counties;
    let wp: Vec<f64> = (0..n).map(|i| state.w[graph.site_at(i)]).collect();
    let u: Vec<f64> = (0..n).map(|i| wp[i] - dot_idx(&corr.b[i], graph.neighbors(i), &wp)).collect();

    // global shift: beta0 + d, w - d
    let mut prec = 1.0 / priors.var_fixed;
    let mut canon = -state.beta0 / priors.var_fixed;
    for i in 0..n {
        let a = 1.0 - corr.b[i].iter().sum::<f64>();
        let f = sigma2 * corr.f[i];
        prec += a * a / f;
        canon += a * u[i] / f;
    }
    let z: f64 = rng.sample(StandardNormal);
    let d = canon / prec + z / prec.sqrt();
    state.beta0 += d;
    for v in state.w.iter_mut() {
        *v -= d;
    }

    // county shifts: beta0_j + d_j, w_s - d_j for sites s in county j
    let wp: Vec<f64> = (0..n).map(|i| state.w[graph.site_at(i)]).collect();
    let mut q = DMatrix::<f64>::zeros(jn, jn);
    let mut b = DVector::<f64>::zeros(jn);
    for j in 0..jn {
        q[(j, j)] = 1.0 / state.sigma2_intercept;
        b[j] = -state.county_intercept[j] / state.sigma2_intercept;
    }
    let mut coef: Vec<(usize, f64)> = Vec::with_capacity(graph.m() + 1);
    for i in 0..n {
        coef.clear();
        coef.push((data.county[graph.site_at(i)], 1.0));
        for (k, &pk) in graph.neighbors(i).iter().enumerate() {
            let c = data.county[graph.site_at(pk)];
            match coef.iter_mut().find(|e| e.0 == c) {
                Some(e) => e.1 -= corr.b[i][k],
                None => coef.push((c, -corr.b[i][k])),
            }
        }
        let f = sigma2 * corr.f[i];
        let ui = wp[i] - dot_idx(&corr.b[i], graph.neighbors(i), &wp);
        for &(ca, va) in &coef {
            b[ca] += va * ui / f;
            for &(cb, vb) in &coef {
                q[(ca, cb)] += va * vb / f;
            }
        }
    }
    let dj = sample_canonical_normal(&q, &b, rng)?;
    for j in 0..jn {
        state.county_intercept[j] += dj[j];
    }
    for (i, v) in state.w.iter_mut().enumerate() {
        *v -= dj[data.county[i]];
    }
    Ok(())
}

/// One continuous-stage chain: state plus adaptive tuning of the decay proposal.
pub struct GaussianSampler {
    data: GaussianData,
    model: GaussianModel,
    priors: Priors,
    blocking: CoefficientBlocking,
    state: GaussianState,
    graph: Option<NeighborGraph>,
    corr: Option<CorrelationFactors>,
    phi_log_sd: f64,
    phi_batch_tries: usize,
    phi_batch_accepts: usize,
    phi_batches: usize,
    phi_tries: usize,
    phi_accepts: usize,
    adapting: bool,
}

impl GaussianSampler {
    /// Build a chain with data-driven, randomly perturbed starting values.
    pub fn new<R: Rng + ?Sized>(
        data: GaussianData,
        model: GaussianModel,
        priors: Priors,
        blocking: CoefficientBlocking,
        rng: &mut R,
    ) -> Result<Self> {
        priors.validate()?;
        if model.svi && data.coords.len() != data.n() {
            return Err(SaeError::InvalidInput("spatial model requires site coordinates".into()));
        }
        let state = initial_state(&data, &model, &priors, rng)?;
        let (graph, corr) = if model.svi {
            let g = build_graph(&data.coords, model.neighbors)?;
            let phi = state.spatial.map(|s| s.phi).unwrap_or(1.0);
            let c = factorize_correlation(&g, phi)?;
            (Some(g), Some(c))
        } else {
            (None, None)
        };
        Ok(GaussianSampler {
            data,
            model,
            priors,
            blocking,
            state,
            graph,
            corr,
            phi_log_sd: 0.3f64.ln(),
            phi_batch_tries: 0,
            phi_batch_accepts: 0,
            phi_batches: 0,
            phi_tries: 0,
            phi_accepts: 0,
            adapting: true,
        })
    }

    pub fn state(&self) -> &GaussianState {
        &self.state
    }

    pub fn set_state(&mut self, state: GaussianState) -> Result<()> {
        if let (Some(g), Some(sp)) = (&self.graph, state.spatial) {
            self.corr = Some(factorize_correlation(g, sp.phi)?);
        }
        self.state = state;
        Ok(())
    }

    pub fn data(&self) -> &GaussianData {
        &self.data
    }

    /// Replace the responses (used by successive-conditional simulation checks).
    pub fn set_response(&mut self, y: Vec<f64>) -> Result<()> {
        if y.len() != self.data.n() {
            return Err(SaeError::Dimension("response length changed".into()));
        }
        self.data.y = y;
        Ok(())
    }

    pub fn model(&self) -> &GaussianModel {
        &self.model
    }

    pub fn graph(&self) -> Option<&NeighborGraph> {
        self.graph.as_ref()
    }

    pub fn set_adapting(&mut self, on: bool) {
        if self.adapting && !on {
            self.phi_tries = 0;
            self.phi_accepts = 0;
        }
        self.adapting = on;
    }

    /// Post-adaptation acceptance rate of the decay updates.
    pub fn phi_acceptance(&self) -> Option<f64> {
        if self.model.svi && self.phi_tries > 0 {
            Some(self.phi_accepts as f64 / self.phi_tries as f64)
        } else {
            None
        }
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        match self.blocking {
            CoefficientBlocking::Joint => {
                update_coefficients_joint(&self.data, &self.model, &mut self.state, &self.priors, rng)?
            }
            CoefficientBlocking::Separate => {
                update_fixed_effects(&self.data, &mut self.state, &self.priors, rng)?;
                update_county_effects(&self.data, &self.model, &mut self.state, rng)?;
            }
        }
        if let (Some(graph), Some(corr)) = (&self.graph, &self.corr) {
            update_spatial_effects(&self.data, &mut self.state, graph, corr, rng)?;
            recenter_spatial(&self.data, &mut self.state, graph, corr, &self.priors, rng)?;
        }
        update_random_effect_variances(&self.model, &mut self.state, self.data.p, &self.priors, rng);
        update_residual_variances(&self.data, &self.model, &mut self.state, &self.priors, rng);
        if let (Some(graph), Some(corr)) = (&self.graph, &self.corr) {
            update_sigma2_w(&mut self.state, graph, corr, &self.priors, rng);
            let current = self.state.spatial.expect("spatial state present under SVI");
            let up = sample_phi_mh(
                &current,
                Some(corr),
                &self.state.w,
                graph,
                &self.priors.phi_prior(),
                self.phi_log_sd.exp(),
                rng,
            )?;
            self.state.spatial = Some(up.params);
            self.corr = Some(up.factors);
            self.record_phi(up.accepted);
        }
        Ok(())
    }

    fn record_phi(&mut self, accepted: bool) {
        self.phi_tries += 1;
        self.phi_accepts += usize::from(accepted);
        if !self.adapting {
            return;
        }
        self.phi_batch_tries += 1;
        self.phi_batch_accepts += usize::from(accepted);
        if self.phi_batch_tries == 50 {
            self.phi_batches += 1;
            let rate = self.phi_batch_accepts as f64 / 50.0;
            let step = (1.0 / (self.phi_batches as f64).sqrt()).min(0.5);
            self.phi_log_sd = (self.phi_log_sd + step * (rate - 0.35)).clamp(-8.0, 2.0);
            self.phi_batch_tries = 0;
            self.phi_batch_accepts = 0;
        }
    }
}

fn initial_state<R: Rng + ?Sized>(
    data: &GaussianData,
    model: &GaussianModel,
    priors: &Priors,
    rng: &mut R,
) -> Result<GaussianState> {
    let n = data.n();
    let p = data.p;
    let k = 1 + p;
    // ridge least squares for a starting point
    let mut xtx = DMatrix::<f64>::identity(k, k) * 1e-6;
    let mut xty = DVector::<f64>::zeros(k);
    let mut xt = vec![1.0; k];
    for i in 0..n {
        xt[1..].copy_from_slice(data.xrow(i));
        for a in 0..k {
            xty[a] += xt[a] * data.y[i];
            for c in 0..k {
                xtx[(a, c)] += xt[a] * xt[c];
            }
        }
    }
    let coef = cholesky_with_ridge(&xtx)?.solve(&xty);
    let mut ss = 0.0;
    for i in 0..n {
        xt[1..].copy_from_slice(data.xrow(i));
        let fit: f64 = dot(&xt, coef.as_slice());
        ss += (data.y[i] - fit).powi(2);
    }
    let resid_var = (ss / (n as f64 - k as f64).max(1.0)).max(1e-4);
    let jitter = |rng: &mut R, scale: f64| -> f64 { scale * rng.sample::<f64, _>(StandardNormal) };
    let se = (resid_var / n as f64).sqrt();
    let beta0 = coef[0] + jitter(rng, 2.0 * se);
    let beta: Vec<f64> = (1..k).map(|a| coef[a] + jitter(rng, 2.0 * se)).collect();
    let lognorm = |rng: &mut R| (0.3 * rng.sample::<f64, _>(StandardNormal)).exp();
    let tau2_len = if model.crv { data.n_counties } else { 1 };
    let tau2: Vec<f64> = (0..tau2_len).map(|_| resid_var * lognorm(rng)).collect();
    let sigma2_intercept = (0.1 * resid_var).max(0.01) * lognorm(rng);
    let sigma2_slopes = if model.cvc { (0..p).map(|_| 0.1 * lognorm(rng)).collect() } else { Vec::new() };
    let county_slopes = if model.cvc { vec![0.0; data.n_counties * p] } else { Vec::new() };
    let (w, spatial) = if model.svi {
        let g = build_graph(&data.coords, 1)?;
        let extent = g.extent().max(1e-6);
        let prior = priors.phi_prior();
        let phi0 = (3.0 / (0.25 * extent)) * lognorm(rng);
        let phi = phi0.clamp(prior.lower * 1.01, prior.upper * 0.99);
        (vec![0.0; n], Some(SpatialParams::new((0.5 * resid_var).max(0.01) * lognorm(rng), phi)?))
    } else {
        (Vec::new(), None)
    };
    Ok(GaussianState {
        beta0,
        beta,
        county_intercept: vec![0.0; data.n_counties],
        county_slopes,
        sigma2_intercept,
        sigma2_slopes,
        tau2,
        w,
        spatial,
    })
}
